//! Data-driven ellipsoidal RPI design and its probabilistic certificate.
//!
//! For a fixed multiplier `τ` the invariance condition
//!
//! ```text
//! [ A_clᵀPA_cl − τP    A_clᵀPw        ]
//! [ wᵀPA_cl            wᵀPw + τ − 1   ]  ⪯ 0
//! ```
//!
//! is linear in `P`, so each `τ` on a grid gives a convex max-det problem.
//! That problem is solved here with a log-det barrier method over the
//! `n(n+1)/2` free entries of `P`; the chosen design is then re-checked by
//! direct eigenvalue evaluation on every scenario.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::geometry::{hull_distance, Ellipsoid};
use crate::linsys::{LinearModel, TubeGain};

/// One `(x, u, y)` measurement of the plant, `y` being the successor state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioSource {
    MeasurementResidual,
    ModelSampled,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    samples: Vec<DVector<f64>>,
    source: ScenarioSource,
}

impl ScenarioSet {
    pub fn new(samples: Vec<DVector<f64>>, source: ScenarioSource) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::EmptyData("scenario set has no samples".into()))?;
        let n = first.len();
        for s in &samples {
            if s.len() != n {
                return Err(dim_err("ScenarioSet sample", n, s.len()));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("scenario entries must be finite".into()));
            }
        }
        Ok(Self { samples, source })
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    pub fn source(&self) -> ScenarioSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }
}

/// Residuals `yᵢ − A xᵢ − B uᵢ` of the model on measured data.
pub fn build_scenarios(data: &[Measurement], model: &LinearModel) -> Result<ScenarioSet> {
    if data.is_empty() {
        return Err(Error::EmptyData("no measurements to build scenarios from".into()));
    }
    let samples = data
        .iter()
        .map(|m| {
            model.check_state("build_scenarios y", &m.y)?;
            Ok(&m.y - model.step_nominal(&m.x, &m.u)?)
        })
        .collect::<Result<Vec<_>>>()?;
    ScenarioSet::new(samples, ScenarioSource::MeasurementResidual)
}

/// The `(n+1)×(n+1)` invariance matrix for one disturbance.
pub fn lmi_matrix(p: &DMatrix<f64>, tau: f64, a_cl: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    let pa = p * a_cl;
    let pw = p * w;
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(&(a_cl.transpose() * &pa - p * tau));
    let cross = a_cl.transpose() * &pw;
    for i in 0..n {
        m[(i, n)] = cross[i];
        m[(n, i)] = cross[i];
    }
    m[(n, n)] = w.dot(&pw) + tau - 1.0;
    m
}

/// Largest eigenvalue of the invariance matrix; the condition holds iff it is `≤ 0`.
pub fn lmi_residual(omega: &Ellipsoid, tau: f64, a_cl: &DMatrix<f64>, w: &DVector<f64>) -> Result<f64> {
    let n = omega.dim();
    if a_cl.nrows() != n || a_cl.ncols() != n {
        return Err(dim_err("lmi_residual A_cl", format!("{n}×{n}"), format!("{}×{}", a_cl.nrows(), a_cl.ncols())));
    }
    if w.len() != n {
        return Err(dim_err("lmi_residual w", n, w.len()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("τ must be positive, got {tau}")));
    }
    let m = lmi_matrix(omega.matrix(), tau, a_cl, w);
    Ok(m.symmetric_eigenvalues().max())
}

/// Sample size, support size and the `(ε, confidence)` pair linking them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBound {
    pub sample_count: usize,
    pub support_count: usize,
    pub epsilon: f64,
    pub confidence: f64,
}

impl ScenarioBound {
    /// Bound for `n`-dimensional ellipsoid designs at the given confidence.
    pub fn at_confidence(sample_count: usize, state_dim: usize, confidence: f64) -> Result<Self> {
        let support_count = support_count(state_dim);
        let epsilon = epsilon_for_confidence(sample_count, support_count, confidence)?;
        Ok(Self {
            sample_count,
            support_count,
            epsilon,
            confidence: scenario_confidence(sample_count, support_count, epsilon)?,
        })
    }
}

/// Number of decision variables of the design problem: entries of a symmetric `P` plus `τ`.
pub fn support_count(state_dim: usize) -> usize {
    (state_dim * state_dim + state_dim) / 2 + 1
}

/// `1 − Σ_{i<n_s} C(N_s, i) εⁱ (1−ε)^{N_s−i}`, accumulated in log space.
pub fn scenario_confidence(sample_count: usize, support_count: usize, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("ε must lie in (0, 1), got {epsilon}")));
    }
    if support_count == 0 || sample_count < support_count {
        return Err(Error::InvalidArgument(format!(
            "need N_s ≥ n_s ≥ 1, got N_s = {sample_count}, n_s = {support_count}"
        )));
    }
    let n = sample_count as f64;
    let ln_eps = epsilon.ln();
    let ln_keep = (-epsilon).ln_1p();
    let mut ln_binom = 0.0;
    let mut terms = Vec::with_capacity(support_count);
    for i in 0..support_count {
        if i > 0 {
            ln_binom += ((n - i as f64 + 1.0) / i as f64).ln();
        }
        terms.push(ln_binom + i as f64 * ln_eps + (n - i as f64) * ln_keep);
    }
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ln_tail = top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln();
    Ok(-ln_tail.exp_m1())
}

/// Smallest `ε` (to within 1e-10) whose confidence reaches `target`.
pub fn epsilon_for_confidence(sample_count: usize, support_count: usize, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidArgument(format!("target confidence must lie in (0, 1), got {target}")));
    }
    // Validates the counts as a side effect.
    scenario_confidence(sample_count, support_count, 0.5)?;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if scenario_confidence(sample_count, support_count, mid)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignOptions {
    /// Number of grid points for `τ`.
    pub tau_grid: usize,
    /// Admissible largest eigenvalue of every scenario LMI.
    pub feas_tol: f64,
    /// Upper bound `P ⪯ p_max·I`; keeps the problem bounded when disturbances vanish.
    pub p_max: f64,
    /// Golden-section refinement of `τ` around the best grid point.
    pub refine: bool,
    /// Confidence level used to report `ε`.
    pub confidence: f64,
    /// Duality-gap target of each per-`τ` log-det solve.
    pub gap_tol: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            tau_grid: 50,
            feas_tol: 1e-8,
            p_max: 1e6,
            refine: true,
            confidence: 0.97,
            gap_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpiDesign {
    pub omega: Ellipsoid,
    pub tau: f64,
    pub worst_residual: f64,
    pub bound: ScenarioBound,
}

/// One per-`τ` outcome, kept for the infeasibility report.
#[derive(Debug, Clone)]
struct TauResult {
    tau: f64,
    outcome: std::result::Result<(DMatrix<f64>, f64), String>,
}

/// Max-det ellipsoid satisfying the invariance LMI for every scenario.
pub fn design_rpi(
    scenarios: &ScenarioSet,
    model: &LinearModel,
    gain: &TubeGain,
    opts: &DesignOptions,
) -> Result<RpiDesign> {
    let n = model.state_dim();
    if scenarios.dim() != n {
        return Err(dim_err("design_rpi scenarios", n, scenarios.dim()));
    }
    if opts.tau_grid == 0 || !(opts.feas_tol >= 0.0) || !(opts.p_max > 0.0) {
        return Err(Error::InvalidArgument("design options out of range".into()));
    }
    let a_cl = model.closed_loop(gain.matrix())?;
    let rho = gain.closed_loop_radius();
    if rho >= 1.0 {
        return Err(Error::NotSchurStable { radius: rho });
    }
    let bound = ScenarioBound::at_confidence(scenarios.len(), n, opts.confidence).or_else(|_| {
        // Too few samples for the chosen support size: report the trivial bound.
        Ok::<_, Error>(ScenarioBound {
            sample_count: scenarios.len(),
            support_count: support_count(n),
            epsilon: 1.0,
            confidence: 0.0,
        })
    })?;

    let reduced = extreme_scenarios(scenarios.samples());
    let attempt = |samples: &[DVector<f64>]| -> Result<(DMatrix<f64>, f64)> {
        let problem = DetProblem::new(&a_cl, samples, opts);
        let lo = rho * rho;
        let mut results: Vec<TauResult> = tau_grid(lo, opts.tau_grid)
            .into_iter()
            .map(|tau| TauResult {
                tau,
                outcome: problem.solve(tau),
            })
            .collect();
        let best = results
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.outcome.as_ref().ok().map(|(_, ld)| (i, *ld)))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((best_idx, _)) = best else {
            let report: Vec<String> = results
                .iter()
                .map(|r| format!("τ={:.6}: {}", r.tau, r.outcome.as_ref().err().cloned().unwrap_or_default()))
                .collect();
            return Err(Error::DesignInfeasible(report.join("; ")));
        };
        if opts.refine {
            let left = if best_idx == 0 { lo } else { results[best_idx - 1].tau };
            let right = if best_idx + 1 == results.len() { 1.0 } else { results[best_idx + 1].tau };
            if let Some(r) = golden_refine(&problem, left, right, &results[best_idx]) {
                results.push(r);
            }
        }
        results
            .into_iter()
            .filter_map(|r| r.outcome.ok().map(|(p, ld)| (p, r.tau, ld)))
            .max_by(|a, b| a.2.total_cmp(&b.2))
            .map(|(p, tau, _)| (p, tau))
            .ok_or_else(|| Error::DesignInfeasible("no feasible τ".into()))
    };

    let check = |p: &DMatrix<f64>, tau: f64| -> Result<(Ellipsoid, f64)> {
        let omega = Ellipsoid::new(p.clone())?;
        let mut worst = f64::NEG_INFINITY;
        for w in scenarios.samples() {
            worst = worst.max(lmi_residual(&omega, tau, &a_cl, w)?);
        }
        Ok((omega, worst))
    };

    let (p, tau) = attempt(&reduced)?;
    let (omega, worst) = check(&p, tau)?;
    let (omega, tau, worst) = if worst <= opts.feas_tol || reduced.len() == scenarios.len() {
        (omega, tau, worst)
    } else {
        // The reduced set missed a binding sample numerically; redo with every scenario.
        let (p, tau) = attempt(scenarios.samples())?;
        let (omega, worst) = check(&p, tau)?;
        (omega, tau, worst)
    };
    if worst > opts.feas_tol {
        return Err(Error::DesignInfeasible(format!(
            "a-posteriori check failed: worst residual {worst:e} exceeds {:e}",
            opts.feas_tol
        )));
    }
    Ok(RpiDesign {
        omega,
        tau,
        worst_residual: worst,
        bound,
    })
}

/// `count` points in `(lo, 1)`, log-spaced in the distance `1 − τ`.
fn tau_grid(lo: f64, count: usize) -> Vec<f64> {
    let width = 1.0 - lo;
    (0..count)
        .map(|i| {
            // Exponents from −0.01 to −4 decades: dense near τ = 1 where the optimum usually sits.
            let frac = if count == 1 { 0.5 } else { i as f64 / (count - 1) as f64 };
            let expo = -0.01 - 3.99 * frac;
            1.0 - width * 10f64.powf(expo)
        })
        .collect()
}

fn golden_refine(problem: &DetProblem<'_>, mut a: f64, mut b: f64, best: &TauResult) -> Option<TauResult> {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let value = |tau: f64| problem.solve(tau).map(|(_, ld)| ld).unwrap_or(f64::NEG_INFINITY);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (value(c), value(d));
    for _ in 0..30 {
        if (b - a) < 1e-7 {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = value(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = value(d);
        }
    }
    let tau = if fc >= fd { c } else { d };
    let outcome = problem.solve(tau);
    match (&outcome, &best.outcome) {
        (Ok((_, ld)), Ok((_, best_ld))) if ld > best_ld => Some(TauResult { tau, outcome }),
        _ => None,
    }
}

/// Vertices of the scenario hull. For fixed `(P, τ)` the disturbances satisfying the
/// LMI form an ellipsoid, so the hull vertices carry every binding constraint.
fn extreme_scenarios(samples: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut unique: Vec<DVector<f64>> = Vec::new();
    for s in samples {
        if !unique.iter().any(|u| (u - s).amax() <= 1e-12) {
            unique.push(s.clone());
        }
    }
    let n = unique[0].len();
    if n == 2 {
        return crate::geometry::VertexHull::new(unique)
            .expect("scenarios are finite and nonempty")
            .ring_2d()
            .into_iter()
            .map(|(a, b)| DVector::from_vec(vec![a, b]))
            .collect();
    }
    if unique.len() > 200 {
        // LP pruning grows quadratically; the full set is cheaper to keep.
        return unique;
    }
    let mut i = 0;
    while i < unique.len() && unique.len() > 1 {
        let others: Vec<DVector<f64>> = unique
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, v)| v.clone())
            .collect();
        if hull_distance(&others, &unique[i]) <= 0.0 {
            unique.remove(i);
        } else {
            i += 1;
        }
    }
    unique
}

/// The per-`τ` max-det problem in the free entries `p` of a symmetric `P`.
struct DetProblem<'a> {
    n: usize,
    a_cl: &'a DMatrix<f64>,
    samples: &'a [DVector<f64>],
    opts: &'a DesignOptions,
    basis: Vec<DMatrix<f64>>,
}

impl<'a> DetProblem<'a> {
    fn new(a_cl: &'a DMatrix<f64>, samples: &'a [DVector<f64>], opts: &'a DesignOptions) -> Self {
        let n = a_cl.nrows();
        let mut basis = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                let mut e = DMatrix::zeros(n, n);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                basis.push(e);
            }
        }
        Self {
            n,
            a_cl,
            samples,
            opts,
            basis,
        }
    }

    fn assemble(&self, p: &DVector<f64>) -> DMatrix<f64> {
        self.basis
            .iter()
            .zip(p.iter())
            .fold(DMatrix::zeros(self.n, self.n), |acc, (e, c)| acc + e * *c)
    }

    fn coords(&self, pm: &DMatrix<f64>) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.basis.len());
        for i in 0..self.n {
            for j in i..self.n {
                out.push(pm[(i, j)]);
            }
        }
        DVector::from_vec(out)
    }

    /// Positive-definite slack blocks `S(p)` whose log-dets form the barrier.
    /// Order: `P` itself, `p_max·I − P`, then `−F_w(P)` per scenario.
    fn blocks(&self, tau: f64, pm: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(self.samples.len() + 2);
        out.push(pm.clone());
        out.push(DMatrix::identity(self.n, self.n) * self.opts.p_max - pm);
        for w in self.samples {
            out.push(-lmi_matrix(pm, tau, self.a_cl, w));
        }
        out
    }

    /// Derivative of each slack block along basis direction `k`.
    fn block_directions(&self, tau: f64) -> Vec<Vec<DMatrix<f64>>> {
        self.basis
            .iter()
            .map(|e| {
                let mut dirs = Vec::with_capacity(self.samples.len() + 2);
                dirs.push(e.clone());
                dirs.push(-e);
                for w in self.samples {
                    let mut m = lmi_matrix(e, tau, self.a_cl, w);
                    // lmi_matrix adds τ − 1 to the corner; a direction carries no constant.
                    m[(self.n, self.n)] -= tau - 1.0;
                    dirs.push(-m);
                }
                dirs
            })
            .collect()
    }

    /// Barrier solve; returns `(P, log det P)`.
    fn solve(&self, tau: f64) -> std::result::Result<(DMatrix<f64>, f64), String> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err("τ outside (0, 1)".into());
        }
        let pl = lyapunov_like(self.a_cl, tau).ok_or("τ below the closed-loop contraction rate")?;
        let mut scale = 1.0 / pl.amax();
        let mut start = None;
        for _ in 0..80 {
            let cand = &pl * scale;
            if self.blocks(tau, &cand).iter().all(|b| Cholesky::new(b.clone()).is_some()) {
                start = Some(cand);
                break;
            }
            scale *= 0.5;
        }
        let start = start.ok_or("no strictly feasible starting ellipsoid")?;
        let dirs = self.block_directions(tau);
        let mut p = self.coords(&start);
        let m = (self.samples.len() * (self.n + 1) + self.n) as f64;
        let mut t = 1.0;
        let mut budget = 2000usize;
        loop {
            p = self.center(tau, t, p, &dirs, &mut budget)?;
            if m / t < self.opts.gap_tol {
                break;
            }
            if budget == 0 {
                return Err("Newton budget exhausted".into());
            }
            t *= 20.0;
        }
        let pm = self.assemble(&p);
        let ld = Cholesky::new(pm.clone())
            .map(|c| 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
            .ok_or("final P not positive definite")?;
        Ok((pm, ld))
    }

    fn merit(&self, tau: f64, t: f64, p: &DVector<f64>) -> Option<f64> {
        let pm = self.assemble(p);
        let mut value = 0.0;
        for (i, b) in self.blocks(tau, &pm).into_iter().enumerate() {
            let ch = Cholesky::new(b)?;
            let ld = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            // Objective −log det P weighted by t, plus the barrier of every block (including P).
            value -= if i == 0 { (t + 1.0) * ld } else { ld };
        }
        Some(value)
    }

    fn center(
        &self,
        tau: f64,
        t: f64,
        mut p: DVector<f64>,
        dirs: &[Vec<DMatrix<f64>>],
        budget: &mut usize,
    ) -> std::result::Result<DVector<f64>, String> {
        let d = p.len();
        loop {
            if *budget == 0 {
                return Ok(p);
            }
            *budget -= 1;
            let pm = self.assemble(&p);
            let blocks = self.blocks(tau, &pm);
            let mut grad = DVector::zeros(d);
            let mut hess = DMatrix::zeros(d, d);
            for (bi, b) in blocks.iter().enumerate() {
                let inv = Cholesky::new(b.clone()).ok_or("left the feasible region")?.inverse();
                let weight = if bi == 0 { t + 1.0 } else { 1.0 };
                let sd: Vec<DMatrix<f64>> = (0..d).map(|k| &inv * &dirs[k][bi]).collect();
                for k in 0..d {
                    grad[k] -= weight * sd[k].trace();
                    for l in k..d {
                        let h = weight * (&sd[k] * &sd[l]).trace();
                        hess[(k, l)] += h;
                        if l != k {
                            hess[(l, k)] += h;
                        }
                    }
                }
            }
            let step = Cholesky::new(hess)
                .map(|c: Cholesky<f64, nalgebra::Dyn>| c.solve(&(-&grad)))
                .ok_or("singular Newton system")?;
            let dec = -grad.dot(&step);
            let current = self.merit(tau, t, &p).ok_or("left the feasible region")?;
            // Below this the decrease is lost in the rounding of the merit value.
            if dec * 0.5 <= 1e-11 || dec <= 1e-14 * current.abs() {
                return Ok(p);
            }
            let mut alpha = 1.0;
            let mut moved = false;
            while alpha > 1e-14 {
                let cand = &p + &step * alpha;
                if (&cand - &p).amax() <= f64::EPSILON * p.amax() {
                    return Ok(p);
                }
                if let Some(v) = self.merit(tau, t, &cand) {
                    if v <= current - 0.25 * alpha * dec {
                        p = cand;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                return Ok(p);
            }
        }
    }
}

/// Solves `A_clᵀ X A_cl − τ X = −I`; positive definite exactly when `τ > ρ(A_cl)²`.
fn lyapunov_like(a_cl: &DMatrix<f64>, tau: f64) -> Option<DMatrix<f64>> {
    let n = a_cl.nrows();
    let at = a_cl.transpose();
    // vec(AᵀXA) = (Aᵀ ⊗ Aᵀ) vec(X) in column-major order.
    let kron = at.kronecker(&at) - DMatrix::identity(n * n, n * n) * tau;
    let rhs = -DMatrix::<f64>::identity(n, n);
    let sol = kron.lu().solve(&DVector::from_column_slice(rhs.as_slice()))?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    let x = (&x + x.transpose()) * 0.5;
    Cholesky::new(x.clone()).map(|_| x)
}
