//! The safety-certification program solved online.
//!
//! ```text
//! minimize    ‖u_L − ũ‖²
//! subject to  z_{i+1} = A z_i + B v_i
//!             z_i ∈ X̄, v_i ∈ Ū                  i = 0..N−1
//!             z_N = Σ λ_j s_j, λ ≥ 0, Σ λ = 1     (terminal hull vertices s_j)
//!             (x − z₀)ᵀP(x − z₀) ≤ 1
//!             ũ = v₀ + K(x − z₀)
//! ```
//!
//! The nominal states are condensed out (`z_i` is an affine image of
//! `(z₀, v, λ)`) and `ũ` is evaluated from its defining equality, leaving a
//! small convex program with one quadratic constraint. Every returned
//! feasible point is re-checked constraint by constraint before the verdict
//! is reported as feasible.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::convex::{ConvexProgram, Outcome, SolverSettings};
use crate::error::{dim_err, Error, Result};
use crate::geometry::{tighten_input, tighten_state, Ellipsoid, Polytope, SetStatus, VertexHull};
use crate::linsys::{LinearModel, TubeGain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpscTolerances {
    /// Largest constraint violation a returned solution may have.
    pub validation: f64,
    /// Objective level below which the learning input counts as certified unchanged.
    pub pass_through: f64,
    /// Barrier duality-gap target.
    pub gap: f64,
    /// Phase-I level at which a degenerate problem is accepted as feasible.
    pub feasibility: f64,
    pub max_newton: usize,
}

impl Default for MpscTolerances {
    fn default() -> Self {
        Self {
            validation: 1e-7,
            pass_through: 1e-10,
            gap: 1e-10,
            feasibility: 1e-9,
            max_newton: 800,
        }
    }
}

impl MpscTolerances {
    fn solver(&self) -> SolverSettings {
        SolverSettings {
            gap_tol: self.gap,
            feasibility_tol: self.feasibility,
            max_newton: self.max_newton,
            ..SolverSettings::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct MpscConfig {
    horizon: usize,
    model: LinearModel,
    gain: TubeGain,
    omega: Ellipsoid,
    x_bar: Polytope,
    u_bar: Polytope,
    terminal: VertexHull,
    tolerances: MpscTolerances,
}

impl MpscConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        horizon: usize,
        model: LinearModel,
        gain: TubeGain,
        omega: Ellipsoid,
        x_bar: Polytope,
        u_bar: Polytope,
        terminal: VertexHull,
        tolerances: MpscTolerances,
    ) -> Result<Self> {
        let n = model.state_dim();
        let m = model.input_dim();
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if gain.matrix().nrows() != m || gain.matrix().ncols() != n {
            return Err(dim_err("MpscConfig gain", format!("{m}×{n}"), format!("{}×{}", gain.matrix().nrows(), gain.matrix().ncols())));
        }
        if omega.dim() != n || x_bar.dim() != n || terminal.dim() != n {
            return Err(dim_err("MpscConfig state sets", n, format!("Ω {} / X̄ {} / X_f {}", omega.dim(), x_bar.dim(), terminal.dim())));
        }
        if u_bar.dim() != m {
            return Err(dim_err("MpscConfig Ū", m, u_bar.dim()));
        }
        let cfg = Self {
            horizon,
            model,
            gain,
            omega,
            x_bar,
            u_bar,
            terminal,
            tolerances,
        };
        cfg.check_terminal(&cfg.terminal)?;
        Ok(cfg)
    }

    /// Tightens `x_set`, `u_set` by the tube and builds the configuration.
    #[allow(clippy::too_many_arguments)]
    pub fn from_constraints(
        horizon: usize,
        model: LinearModel,
        gain: TubeGain,
        omega: Ellipsoid,
        x_set: &Polytope,
        u_set: &Polytope,
        terminal: VertexHull,
        tolerances: MpscTolerances,
    ) -> Result<Self> {
        let x_bar = tighten_state(x_set, &omega)?;
        let u_bar = tighten_input(u_set, &gain, &omega)?;
        for (name, t) in [("X ⊖ Ω", &x_bar), ("U ⊖ KΩ", &u_bar)] {
            if t.status == SetStatus::Empty {
                return Err(Error::InvalidArgument(format!("tightened set {name} is empty")));
            }
        }
        Self::new(horizon, model, gain, omega, x_bar.set, u_bar.set, terminal, tolerances)
    }

    fn check_terminal(&self, terminal: &VertexHull) -> Result<()> {
        for (i, v) in terminal.vertices().iter().enumerate() {
            if !self.x_bar.contains(v, self.tolerances.validation) {
                return Err(Error::InvalidArgument(format!(
                    "terminal vertex {i} lies outside the tightened state set"
                )));
            }
        }
        Ok(())
    }

    /// Same problem with a different terminal hull.
    pub fn with_terminal(&self, terminal: VertexHull) -> Result<Self> {
        if terminal.dim() != self.model.state_dim() {
            return Err(dim_err("with_terminal", self.model.state_dim(), terminal.dim()));
        }
        self.check_terminal(&terminal)?;
        Ok(Self {
            terminal,
            ..self.clone()
        })
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        Ok(Self { horizon, ..self.clone() })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    pub fn gain(&self) -> &TubeGain {
        &self.gain
    }

    pub fn omega(&self) -> &Ellipsoid {
        &self.omega
    }

    pub fn x_bar(&self) -> &Polytope {
        &self.x_bar
    }

    pub fn u_bar(&self) -> &Polytope {
        &self.u_bar
    }

    pub fn terminal(&self) -> &VertexHull {
        &self.terminal
    }

    pub fn tolerances(&self) -> &MpscTolerances {
        &self.tolerances
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Feasible,
    Infeasible,
    /// Solver could not decide (or its point failed re-validation); callers treat this as infeasible.
    Unknown(String),
}

#[derive(Debug, Clone)]
pub struct MpscSolution {
    pub verdict: Verdict,
    /// `z₀..z_N` (empty unless feasible).
    pub z_traj: Vec<DVector<f64>>,
    /// `v₀..v_{N−1}` (empty unless feasible).
    pub v_traj: Vec<DVector<f64>>,
    pub u_tilde: DVector<f64>,
    pub hull_weights: DVector<f64>,
    /// `‖u_L − ũ‖²`.
    pub objective: f64,
    /// Largest violation from the independent re-check, or the solver's infeasibility bound.
    pub kkt_residual: f64,
}

impl MpscSolution {
    pub fn is_feasible(&self) -> bool {
        self.verdict == Verdict::Feasible
    }

    fn not_feasible(verdict: Verdict, m: usize, residual: f64) -> Self {
        Self {
            verdict,
            z_traj: Vec::new(),
            v_traj: Vec::new(),
            u_tilde: DVector::zeros(m),
            hull_weights: DVector::zeros(0),
            objective: f64::INFINITY,
            kkt_residual: residual,
        }
    }
}

/// Knobs for variants of the program used in cross-checks.
#[derive(Debug, Clone, Default)]
pub struct SolveOptions<'a> {
    /// Positive scaling of the objective (the feasible set does not depend on it).
    pub weight: Option<f64>,
    /// Impose `ũ = u_L` and solve the remaining feasibility problem.
    pub fix_input: bool,
    /// Starting point for the solver.
    pub warm_start: Option<&'a MpscSolution>,
}

/// Affine maps of the condensed decision vector `y = (z₀, v₀..v_{N−1}, λ)`.
struct Layout {
    n: usize,
    m: usize,
    horizon: usize,
    k: usize,
}

impl Layout {
    fn new(cfg: &MpscConfig) -> Self {
        Self {
            n: cfg.model.state_dim(),
            m: cfg.model.input_dim(),
            horizon: cfg.horizon,
            k: cfg.terminal.len(),
        }
    }

    fn dim(&self) -> usize {
        self.n + self.horizon * self.m + self.k
    }

    fn v_offset(&self, i: usize) -> usize {
        self.n + i * self.m
    }

    fn lambda_offset(&self) -> usize {
        self.n + self.horizon * self.m
    }

    /// `Φ_i` with `z_i = Φ_i y`, for i = 0..N.
    fn state_maps(&self, model: &LinearModel) -> Vec<DMatrix<f64>> {
        let mut maps = Vec::with_capacity(self.horizon + 1);
        let mut phi = DMatrix::zeros(self.n, self.dim());
        phi.view_mut((0, 0), (self.n, self.n)).fill_with_identity();
        maps.push(phi.clone());
        for i in 0..self.horizon {
            let mut next = model.a() * &phi;
            let mut block = next.view_mut((0, self.v_offset(i)), (self.n, self.m));
            block += model.b();
            phi = next;
            maps.push(phi.clone());
        }
        maps
    }

    /// `ũ = G y + Kx`.
    fn input_map(&self, gain: &TubeGain) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.m, self.dim());
        g.view_mut((0, 0), (self.m, self.n)).copy_from(&(-gain.matrix()));
        g.view_mut((0, self.v_offset(0)), (self.m, self.m)).fill_with_identity();
        g
    }

    fn unpack(&self, y: &DVector<f64>, maps: &[DMatrix<f64>]) -> (Vec<DVector<f64>>, Vec<DVector<f64>>, DVector<f64>) {
        let z = maps.iter().map(|phi| phi * y).collect();
        let v = (0..self.horizon).map(|i| y.rows(self.v_offset(i), self.m).into_owned()).collect();
        let lambda = y.rows(self.lambda_offset(), self.k).into_owned();
        (z, v, lambda)
    }

    fn pack(&self, sol: &MpscSolution) -> Option<DVector<f64>> {
        if sol.z_traj.is_empty() || sol.hull_weights.len() != self.k || sol.v_traj.len() < self.horizon {
            return None;
        }
        let mut y = DVector::zeros(self.dim());
        y.rows_mut(0, self.n).copy_from(&sol.z_traj[0]);
        for i in 0..self.horizon {
            y.rows_mut(self.v_offset(i), self.m).copy_from(&sol.v_traj[i]);
        }
        y.rows_mut(self.lambda_offset(), self.k).copy_from(&sol.hull_weights);
        Some(y)
    }
}

/// Solves the certification program at state `x` for learning input `u_learning`.
pub fn solve_mpsc(cfg: &MpscConfig, x: &DVector<f64>, u_learning: &DVector<f64>) -> Result<MpscSolution> {
    solve_mpsc_with(cfg, x, u_learning, &SolveOptions::default())
}

/// Radius around `u_L` inside which a certified `ũ` is treated as solver noise:
/// the fixed-input problem is tried and, if feasible, `u_L` is returned exactly.
const PASS_SNAP_RADIUS: f64 = 1e-3;

pub fn solve_mpsc_with(
    cfg: &MpscConfig,
    x: &DVector<f64>,
    u_learning: &DVector<f64>,
    opts: &SolveOptions<'_>,
) -> Result<MpscSolution> {
    let sol = solve_once(cfg, x, u_learning, opts)?;
    if opts.fix_input
        || !sol.is_feasible()
        || sol.objective <= cfg.tolerances.pass_through
        || sol.objective.sqrt() > PASS_SNAP_RADIUS
    {
        return Ok(sol);
    }
    let fixed = solve_once(
        cfg,
        x,
        u_learning,
        &SolveOptions {
            fix_input: true,
            warm_start: Some(&sol),
            ..*opts
        },
    )?;
    if !fixed.is_feasible() {
        return Ok(sol);
    }
    Ok(MpscSolution {
        u_tilde: u_learning.clone(),
        objective: 0.0,
        ..fixed
    })
}

fn solve_once(
    cfg: &MpscConfig,
    x: &DVector<f64>,
    u_learning: &DVector<f64>,
    opts: &SolveOptions<'_>,
) -> Result<MpscSolution> {
    cfg.model.check_state("solve_mpsc state", x)?;
    cfg.model.check_input("solve_mpsc learning input", u_learning)?;
    if x.iter().chain(u_learning.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("state and learning input must be finite".into()));
    }
    let weight = opts.weight.unwrap_or(1.0);
    if !(weight > 0.0 && weight.is_finite()) {
        return Err(Error::InvalidArgument("objective weight must be positive".into()));
    }
    let lay = Layout::new(cfg);
    let dim = lay.dim();
    let (n, m, k) = (lay.n, lay.m, lay.k);
    let maps = lay.state_maps(&cfg.model);

    // Tightened state constraints on z₀..z_{N−1}, input constraints on v₀..v_{N−1}, λ ≥ 0.
    let xa = cfg.x_bar.normals();
    let xb = cfg.x_bar.offsets();
    let ua = cfg.u_bar.normals();
    let ub = cfg.u_bar.offsets();
    let rows = lay.horizon * (xa.nrows() + ua.nrows()) + k;
    let mut ga = DMatrix::zeros(rows, dim);
    let mut gb = DVector::zeros(rows);
    let mut r = 0;
    for phi in maps.iter().take(lay.horizon) {
        ga.rows_mut(r, xa.nrows()).copy_from(&(xa * phi));
        gb.rows_mut(r, xa.nrows()).copy_from(xb);
        r += xa.nrows();
    }
    for i in 0..lay.horizon {
        ga.view_mut((r, lay.v_offset(i)), (ua.nrows(), m)).copy_from(ua);
        gb.rows_mut(r, ua.nrows()).copy_from(ub);
        r += ua.nrows();
    }
    for j in 0..k {
        ga[(r + j, lay.lambda_offset() + j)] = -1.0;
    }

    // z_N − Sλ = 0 and Σλ = 1.
    let s = cfg.terminal.vertex_matrix();
    let mut ea = DMatrix::zeros(n + 1, dim);
    ea.rows_mut(0, n).copy_from(&maps[lay.horizon]);
    {
        let mut block = ea.view_mut((0, lay.lambda_offset()), (n, k));
        block -= &s;
    }
    ea.view_mut((n, lay.lambda_offset()), (1, k)).fill(1.0);
    let mut eb = DVector::zeros(n + 1);
    eb[n] = 1.0;

    // ũ = G y + Kx; objective weight·‖G y − (u_L − Kx)‖².
    let g = lay.input_map(&cfg.gain);
    let d = u_learning - cfg.gain.matrix() * x;
    if opts.fix_input {
        ea = stack_rows(&ea, &g);
        eb = stack_vec(&eb, &d);
    }
    let h = g.transpose() * &g * (2.0 * weight);
    let grad = -(g.transpose() * &d) * (2.0 * weight);

    // (x − z₀)ᵀP(x − z₀) ≤ 1.
    let p = cfg.omega.matrix();
    let mut q = DMatrix::zeros(dim, dim);
    q.view_mut((0, 0), (n, n)).copy_from(p);
    let mut c = DVector::zeros(dim);
    c.rows_mut(0, n).copy_from(&(p * x * -2.0));
    let q_r = cfg.omega.quadratic_form(x) - 1.0;

    let program = ConvexProgram::new(dim)
        .objective(h, grad)
        .equalities(ea, eb)
        .inequalities(ga, gb)
        .quadratic(q, c, q_r);
    let start = opts.warm_start.and_then(|w| lay.pack(w));
    let outcome = program.solve_from(&cfg.tolerances.solver(), start.as_ref());

    let sol = match outcome {
        Outcome::Optimal(sol) | Outcome::Feasible(sol) => sol,
        Outcome::Infeasible { lower_bound } => return Ok(MpscSolution::not_feasible(Verdict::Infeasible, m, lower_bound)),
        Outcome::Unknown { reason } => return Ok(MpscSolution::not_feasible(Verdict::Unknown(reason), m, f64::NAN)),
    };
    let (z_traj, v_traj, hull_weights) = lay.unpack(&sol.y, &maps);
    let u_tilde = &v_traj[0] + cfg.gain.matrix() * (x - &z_traj[0]);
    let diff = u_learning - &u_tilde;
    let mut out = MpscSolution {
        verdict: Verdict::Feasible,
        z_traj,
        v_traj,
        u_tilde,
        hull_weights,
        objective: diff.norm_squared(),
        kkt_residual: 0.0,
    };
    let report = validate_solution(cfg, x, &out)?;
    out.kkt_residual = report.max();
    if !(report.max() <= cfg.tolerances.validation) {
        out.verdict = Verdict::Unknown(format!("returned point failed re-validation: {report:?}"));
    }
    Ok(out)
}

fn stack_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

fn stack_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

/// True iff the learning input is certified without modification.
pub fn certify_pass_through(cfg: &MpscConfig, x: &DVector<f64>, u_learning: &DVector<f64>) -> Result<bool> {
    let sol = solve_mpsc(cfg, x, u_learning)?;
    Ok(sol.is_feasible() && sol.objective <= cfg.tolerances.pass_through)
}

/// Largest violation per constraint family, recomputed from scratch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub dynamics: f64,
    pub state: f64,
    pub input: f64,
    pub terminal: f64,
    pub hull_weights: f64,
    pub tube: f64,
    pub feedback: f64,
}

impl ValidationReport {
    pub fn max(&self) -> f64 {
        [
            self.dynamics,
            self.state,
            self.input,
            self.terminal,
            self.hull_weights,
            self.tube,
            self.feedback,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn validate_solution(cfg: &MpscConfig, x: &DVector<f64>, sol: &MpscSolution) -> Result<ValidationReport> {
    let n_steps = cfg.horizon;
    if sol.z_traj.len() != n_steps + 1 || sol.v_traj.len() != n_steps {
        return Err(dim_err(
            "validate_solution trajectory",
            format!("{} states / {} inputs", n_steps + 1, n_steps),
            format!("{} / {}", sol.z_traj.len(), sol.v_traj.len()),
        ));
    }
    if sol.hull_weights.len() != cfg.terminal.len() {
        return Err(dim_err("validate_solution hull weights", cfg.terminal.len(), sol.hull_weights.len()));
    }
    let mut rep = ValidationReport::default();
    for i in 0..n_steps {
        let next = cfg.model.step_nominal(&sol.z_traj[i], &sol.v_traj[i])?;
        rep.dynamics = rep.dynamics.max((&sol.z_traj[i + 1] - next).amax());
        rep.state = rep.state.max(cfg.x_bar.max_violation(&sol.z_traj[i]).max(0.0));
        rep.input = rep.input.max(cfg.u_bar.max_violation(&sol.v_traj[i]).max(0.0));
    }
    let s = cfg.terminal.vertex_matrix();
    rep.terminal = (&sol.z_traj[n_steps] - &s * &sol.hull_weights).amax();
    let neg = sol.hull_weights.iter().fold(0.0_f64, |acc, &l| acc.max(-l));
    rep.hull_weights = neg.max((sol.hull_weights.sum() - 1.0).abs());
    rep.tube = (cfg.omega.quadratic_form(&(x - &sol.z_traj[0])) - 1.0).max(0.0);
    let u = &sol.v_traj[0] + cfg.gain.matrix() * (x - &sol.z_traj[0]);
    rep.feedback = (&sol.u_tilde - u).amax();
    Ok(rep)
}
