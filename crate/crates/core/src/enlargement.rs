//! Terminal sets and their growth from certified trajectories.
//!
//! The nominal terminal set is a vertex hull whose vertices each carry an
//! input (an "anchor"). An anchor's nominal successor always lies in the
//! hull, so convex weights over anchors define an invariance-preserving
//! terminal law: for `z = Σλⱼsⱼ` the input `Σλⱼvⱼ` maps `z` to a convex
//! combination of successors. Adding a certified nominal trajectory keeps
//! this property because every new point's successor is the next point of
//! the same trajectory, and the last point already sits in the old hull.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::convex::{ConvexProgram, SolverSettings};
use crate::error::{dim_err, Error, Result};
use crate::geometry::{minkowski_boundary_2d, Ellipsoid, HullMembership, Polytope, VertexHull, DEFAULT_MEMBERSHIP_TOL};
use crate::linsys::{LinearModel, TubeGain};
use crate::mpsc::{solve_mpsc, MpscConfig, MpscSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub state: DVector<f64>,
    pub input: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct TerminalController {
    anchors: Vec<Anchor>,
    gain: TubeGain,
    omega: Ellipsoid,
    tol: f64,
}

/// Initial terminal configuration: `X_f = {0}` with `u = K·x` on `Ω`.
pub fn init_trivial(omega: &Ellipsoid, gain: &TubeGain) -> Result<(VertexHull, TerminalController)> {
    let n = omega.dim();
    let m = gain.matrix().nrows();
    if gain.matrix().ncols() != n {
        return Err(dim_err("init_trivial gain", n, gain.matrix().ncols()));
    }
    let ctrl = TerminalController {
        anchors: vec![Anchor {
            state: DVector::zeros(n),
            input: DVector::zeros(m),
        }],
        gain: gain.clone(),
        omega: omega.clone(),
        tol: DEFAULT_MEMBERSHIP_TOL,
    };
    Ok((VertexHull::origin(n), ctrl))
}

impl TerminalController {
    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn omega(&self) -> &Ellipsoid {
        &self.omega
    }

    pub fn gain(&self) -> &TubeGain {
        &self.gain
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    fn anchor_hull(&self) -> VertexHull {
        VertexHull::new(self.anchors.iter().map(|a| a.state.clone()).collect()).expect("origin anchor is always present")
    }

    /// Terminal law on the nominal hull: `σ_f(z) = Σλⱼvⱼ` with min-norm weights.
    pub fn sigma(&self, z: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        let hull = self.anchor_hull();
        match hull.membership_weights(z, self.tol)? {
            HullMembership::Inside(w) => Ok(Some(self.blend(&w))),
            HullMembership::Outside => Ok(None),
        }
    }

    fn blend(&self, w: &DVector<f64>) -> DVector<f64> {
        self.anchors
            .iter()
            .zip(w.iter())
            .fold(DVector::zeros(self.gain.matrix().nrows()), |acc, (a, l)| acc + &a.input * *l)
    }

    /// Invariance certificate: each anchor's successor lies in `hull`, its state in `x_bar`
    /// and its input in `u_bar`. Returns the largest violation found.
    pub fn invariance_violation(
        &self,
        model: &LinearModel,
        hull: &VertexHull,
        x_bar: &Polytope,
        u_bar: &Polytope,
    ) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for a in &self.anchors {
            let next = model.step_nominal(&a.state, &a.input)?;
            worst = worst.max(hull.distance(&next));
            worst = worst.max(x_bar.max_violation(&a.state));
            worst = worst.max(u_bar.max_violation(&a.input));
        }
        Ok(worst)
    }
}

/// Splits `x = z + e` with `z ∈ conv(anchors)` minimizing `eᵀPe`; returns `(z, eᵀPe)`.
pub fn decompose(ctrl: &TerminalController, x: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let n = ctrl.omega.dim();
    if x.len() != n {
        return Err(dim_err("terminal decomposition", n, x.len()));
    }
    let k = ctrl.anchors.len();
    if k == 1 {
        let z = ctrl.anchors[0].state.clone();
        let e = x - &z;
        return Ok((z, ctrl.omega.quadratic_form(&e)));
    }
    let s = DMatrix::from_columns(&ctrl.anchors.iter().map(|a| a.state.clone()).collect::<Vec<_>>());
    let p = ctrl.omega.matrix();
    let sp = s.transpose() * p;
    let h = &sp * &s * 2.0;
    let g = -(&sp * x) * 2.0;
    let mut a = DMatrix::zeros(k, k);
    a.fill_diagonal(-1.0);
    let program = ConvexProgram::new(k)
        .objective(h, g)
        .equalities(DMatrix::from_element(1, k, 1.0), DVector::from_element(1, 1.0))
        .inequalities(a, DVector::zeros(k));
    let settings = SolverSettings {
        gap_tol: 1e-12,
        ..SolverSettings::default()
    };
    let sol = program
        .solve(&settings)
        .optimal()
        .ok_or_else(|| Error::Solver("terminal decomposition failed".into()))?;
    let lambda = sol.y.map(|v| v.max(0.0));
    let z = &s * (&lambda / lambda.sum());
    let q = ctrl.omega.quadratic_form(&(x - &z));
    Ok((z, q))
}

/// Terminal safety law on `hull ⊕ Ω`: `u = σ_f(z) + K·e` for the decomposition `x = z + e`.
pub fn terminal_control(ctrl: &TerminalController, hull: &VertexHull, x: &DVector<f64>) -> Result<DVector<f64>> {
    if hull.dim() != x.len() {
        return Err(dim_err("terminal_control", hull.dim(), x.len()));
    }
    let (z, q) = decompose(ctrl, x)?;
    if q > 1.0 + ctrl.tol {
        return Err(Error::SafetyFault(format!(
            "state {:?} lies outside the terminal safe set (tube form {q:.6})",
            x.as_slice()
        )));
    }
    let sigma = ctrl
        .sigma(&z)?
        .ok_or_else(|| Error::SafetyFault("decomposed state left the anchor hull".into()))?;
    Ok(sigma + ctrl.gain.matrix() * (x - z))
}

/// `x ∈ hull ⊕ Ω` up to the controller tolerance.
pub fn in_terminal_safe_set(ctrl: &TerminalController, x: &DVector<f64>) -> Result<bool> {
    Ok(decompose(ctrl, x)?.1 <= 1.0 + ctrl.tol)
}

/// Nominal states `z₀..z_N` and inputs `v₀..v_{N−1}` of one certified solution.
pub type NominalPlan = (Vec<DVector<f64>>, Vec<DVector<f64>>);

/// Record of certified steps that fed the terminal set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnlargementLog {
    pub feasible_indices: Vec<usize>,
    pub nominal: Vec<NominalPlan>,
    pub measured: Vec<DVector<f64>>,
}

impl EnlargementLog {
    pub fn record(&mut self, k: usize, x: &DVector<f64>, sol: &MpscSolution) -> Result<()> {
        if let Some(&last) = self.feasible_indices.last() {
            if k <= last {
                return Err(Error::InvalidArgument(format!("step {k} recorded after step {last}")));
            }
        }
        self.feasible_indices.push(k);
        self.nominal.push((sol.z_traj.clone(), sol.v_traj.clone()));
        self.measured.push(x.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EnlargeOutcome {
    Grown { vertices: usize },
    Unchanged,
    /// Invariance re-check failed; the previous set was kept.
    RolledBack { violation: f64 },
}

/// Grows the nominal terminal set by `z*₁..z*_N` of a certified solution.
#[allow(clippy::too_many_arguments)]
pub fn enlarge_nominal(
    log: &mut EnlargementLog,
    k: usize,
    x: &DVector<f64>,
    hull: &VertexHull,
    ctrl: &TerminalController,
    solution: &MpscSolution,
    cfg: &MpscConfig,
) -> Result<(VertexHull, TerminalController, EnlargeOutcome)> {
    if !solution.is_feasible() {
        return Err(Error::InvalidArgument("enlargement needs a feasible solution".into()));
    }
    let horizon = solution.v_traj.len();
    let z_end = &solution.z_traj[horizon];
    if !hull.contains(z_end, ctrl.tol) {
        return Err(Error::InvalidArgument(
            "solution was not computed against the current terminal hull".into(),
        ));
    }
    log.record(k, x, solution)?;

    let new_points: Vec<DVector<f64>> = solution.z_traj[1..=horizon].to_vec();
    let grown = hull.add_points(&new_points, ctrl.tol)?;
    if grown.vertices() == hull.vertices() {
        return Ok((hull.clone(), ctrl.clone(), EnlargeOutcome::Unchanged));
    }

    let end_input = ctrl
        .sigma(z_end)?
        .ok_or_else(|| Error::InvalidArgument("terminal point outside anchor hull".into()))?;
    let mut candidates: Vec<Anchor> = ctrl.anchors.clone();
    for j in 1..horizon {
        candidates.push(Anchor {
            state: solution.z_traj[j].clone(),
            input: solution.v_traj[j].clone(),
        });
    }
    candidates.push(Anchor {
        state: z_end.clone(),
        input: end_input,
    });

    // Anchors follow the hull vertices; the origin anchor is always kept.
    let n = hull.dim();
    let mut anchors: Vec<Anchor> = vec![ctrl.anchors[0].clone()];
    for v in grown.vertices() {
        if v == &DVector::zeros(n) {
            continue;
        }
        let a = candidates
            .iter()
            .rev()
            .find(|a| &a.state == v)
            .ok_or_else(|| Error::Solver("hull vertex without anchor".into()))?;
        anchors.push(a.clone());
    }
    let next = TerminalController {
        anchors,
        ..ctrl.clone()
    };
    let violation = next.invariance_violation(cfg.model(), &grown, cfg.x_bar(), cfg.u_bar())?;
    if violation > ctrl.tol {
        return Ok((hull.clone(), ctrl.clone(), EnlargeOutcome::RolledBack { violation }));
    }
    let vertices = grown.len();
    Ok((grown, next, EnlargeOutcome::Grown { vertices }))
}

/// Safe-set list for measured-state enlargement: the hull of certified
/// measured states together with the initial `X_f ⊕ Ω`, merged once the
/// hull swallows the initial set.
#[derive(Debug, Clone)]
pub struct MeasuredSafeSets {
    initial: TerminalController,
    measured: Option<VertexHull>,
    collapsed: bool,
    boundary_samples: usize,
    tol: f64,
}

impl MeasuredSafeSets {
    pub fn new(initial: TerminalController) -> Self {
        Self {
            initial,
            measured: None,
            collapsed: false,
            boundary_samples: 1000,
            tol: DEFAULT_MEMBERSHIP_TOL,
        }
    }

    pub fn measured_hull(&self) -> Option<&VertexHull> {
        self.measured.as_ref()
    }

    pub fn is_collapsed(&self) -> bool {
        self.collapsed
    }

    /// Number of convex pieces in the union.
    pub fn pieces(&self) -> usize {
        match (&self.measured, self.collapsed) {
            (None, _) => 1,
            (Some(_), true) => 1,
            (Some(_), false) => 2,
        }
    }

    pub fn contains(&self, x: &DVector<f64>) -> Result<bool> {
        if let Some(h) = &self.measured {
            if h.contains(x, self.tol) {
                return Ok(true);
            }
        }
        if self.collapsed {
            return Ok(false);
        }
        in_terminal_safe_set(&self.initial, x)
    }

    /// Adds a state that was certified feasible at its time step.
    pub fn enlarge_measured(&mut self, state: &DVector<f64>) -> Result<()> {
        let hull = match &self.measured {
            Some(h) => h.add_points(std::slice::from_ref(state), self.tol)?,
            None => VertexHull::new(vec![state.clone()])?,
        };
        if !self.collapsed && hull.dim() == 2 && hull.len() >= 3 {
            let initial_hull = self.initial.anchor_hull();
            let samples = minkowski_boundary_2d(&initial_hull, &self.initial.omega, self.boundary_samples);
            if samples.iter().all(|p| hull.contains(p, self.tol)) {
                self.collapsed = true;
            }
        }
        self.measured = Some(hull);
        Ok(())
    }

    /// Safe input at `x`: the terminal law inside `X_f ⊕ Ω`, otherwise a re-solve of the
    /// certification program (feasible on the measured hull by convexity of the feasible set).
    pub fn control(&self, cfg: &MpscConfig, x: &DVector<f64>) -> Result<DVector<f64>> {
        if !self.collapsed && in_terminal_safe_set(&self.initial, x)? {
            return terminal_control(&self.initial, &self.initial.anchor_hull(), x);
        }
        let probe = DVector::zeros(cfg.model().input_dim());
        let sol = solve_mpsc(cfg, x, &probe)?;
        if sol.is_feasible() {
            Ok(sol.u_tilde)
        } else {
            Err(Error::SafetyFault(format!(
                "no safe input at {:?}: outside every measured safe set",
                x.as_slice()
            )))
        }
    }
}
