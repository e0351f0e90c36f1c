//! Online safety filter.
//!
//! `Algorithm1` mode: apply the certified input when the program is feasible;
//! otherwise follow the last certified nominal trajectory inside its tube for
//! up to `N − 1` steps, then hand over to the terminal law. `Recursive` mode
//! always applies the certified input and treats any loss of feasibility
//! after the first certified step as a broken guarantee.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::enlargement::{
    enlarge_nominal, in_terminal_safe_set, init_trivial, terminal_control, EnlargeOutcome, EnlargementLog,
    MeasuredSafeSets, TerminalController,
};
use crate::error::{Error, Result};
use crate::geometry::{Polytope, VertexHull};
use crate::linsys::{step_plant, LinearModel, Trajectory};
use crate::mpsc::{solve_mpsc_with, MpscConfig, MpscSolution, SolveOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    Algorithm1,
    Recursive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnlargementKind {
    /// Grow the nominal terminal hull by certified nominal trajectories.
    Nominal,
    /// Keep a list of safe sets grown by certified measured states.
    Measured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnlargementSettings {
    pub kind: EnlargementKind,
    /// Enlarge after every `cadence`-th step (1 = every step).
    pub cadence: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Certified,
    BackupTube,
    TerminalController,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Certified => "certified",
            Branch::BackupTube => "backup_tube",
            Branch::TerminalController => "terminal_controller",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterDecision {
    pub applied: DVector<f64>,
    pub interfered: bool,
    pub branch: Branch,
    pub feasible: bool,
    pub objective: f64,
    pub k_inf: usize,
    /// Result of the enlargement attempted after this step, if any.
    pub enlargement: Option<EnlargeOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafeSetVerdict {
    InFeasibleSet,
    InTerminalOnly,
    Outside,
}

#[derive(Debug, Clone)]
pub struct FilterState {
    mode: FilterMode,
    cfg: MpscConfig,
    hull: VertexHull,
    controller: TerminalController,
    last_solution: Option<MpscSolution>,
    k_inf: usize,
    step: usize,
    ever_feasible: bool,
    enlargement: Option<EnlargementSettings>,
    log: EnlargementLog,
    measured: Option<MeasuredSafeSets>,
    warm_start: bool,
}

impl FilterState {
    /// Filter starting from the trivial terminal configuration `X_f = {0}`.
    pub fn new(cfg: MpscConfig, mode: FilterMode) -> Result<Self> {
        let (hull, controller) = init_trivial(cfg.omega(), cfg.gain())?;
        let cfg = cfg.with_terminal(hull.clone())?;
        Ok(Self::with_terminal(cfg, mode, hull, controller))
    }

    /// Filter with a given terminal hull and law; `cfg` is re-pointed at `hull`.
    pub fn with_terminal(cfg: MpscConfig, mode: FilterMode, hull: VertexHull, controller: TerminalController) -> Self {
        let k_inf = cfg.horizon() - 1;
        let cfg = cfg.with_terminal(hull.clone()).unwrap_or(cfg);
        Self {
            mode,
            cfg,
            hull,
            controller,
            last_solution: None,
            k_inf,
            step: 0,
            ever_feasible: false,
            enlargement: None,
            log: EnlargementLog::default(),
            measured: None,
            warm_start: false,
        }
    }

    pub fn enable_enlargement(mut self, settings: EnlargementSettings) -> Result<Self> {
        if settings.cadence == 0 {
            return Err(Error::InvalidArgument("enlargement cadence must be at least 1".into()));
        }
        if settings.kind == EnlargementKind::Measured {
            self.measured = Some(MeasuredSafeSets::new(self.controller.clone()));
        }
        self.enlargement = Some(settings);
        Ok(self)
    }

    /// Start each solve from the previous certified solution.
    pub fn with_warm_start(mut self, on: bool) -> Self {
        self.warm_start = on;
        self
    }

    pub fn mode(&self) -> FilterMode {
        self.mode
    }

    pub fn config(&self) -> &MpscConfig {
        &self.cfg
    }

    pub fn terminal_hull(&self) -> &VertexHull {
        &self.hull
    }

    pub fn terminal_controller(&self) -> &TerminalController {
        &self.controller
    }

    pub fn measured_sets(&self) -> Option<&MeasuredSafeSets> {
        self.measured.as_ref()
    }

    pub fn last_solution(&self) -> Option<&MpscSolution> {
        self.last_solution.as_ref()
    }

    pub fn k_inf(&self) -> usize {
        self.k_inf
    }

    pub fn log(&self) -> &EnlargementLog {
        &self.log
    }

    pub fn filter_step(&mut self, x: &DVector<f64>, u_learning: &DVector<f64>) -> Result<FilterDecision> {
        let horizon = self.cfg.horizon();
        let pass_tol = self.cfg.tolerances().pass_through;
        let opts = SolveOptions {
            warm_start: if self.warm_start { self.last_solution.as_ref() } else { None },
            ..SolveOptions::default()
        };
        let sol = solve_mpsc_with(&self.cfg, x, u_learning, &opts)?;
        let k = self.step;
        self.step += 1;

        if sol.is_feasible() {
            self.k_inf = 0;
            self.ever_feasible = true;
            // Within the pass-through tolerance the learning input is applied verbatim.
            let objective = sol.objective;
            let interfered = objective > pass_tol;
            let applied = if interfered { sol.u_tilde.clone() } else { u_learning.clone() };
            let enlargement = self.maybe_enlarge(k, x, &sol)?;
            self.last_solution = Some(sol);
            return Ok(FilterDecision {
                applied,
                interfered,
                branch: Branch::Certified,
                feasible: true,
                objective,
                k_inf: 0,
                enlargement,
            });
        }

        if self.mode == FilterMode::Recursive && self.ever_feasible {
            return Err(Error::RecursiveFeasibilityLost {
                step: k,
                dump: format!(
                    "x = {:?}, u_L = {:?}, verdict = {:?}, terminal vertices = {}, last z* = {:?}",
                    x.as_slice(),
                    u_learning.as_slice(),
                    sol.verdict,
                    self.hull.len(),
                    self.last_solution.as_ref().map(|s| s.z_traj.iter().map(|z| z.as_slice().to_vec()).collect::<Vec<_>>())
                ),
            });
        }

        self.k_inf = (self.k_inf + 1).min(horizon);
        let (applied, branch) = match (&self.last_solution, self.k_inf) {
            (Some(stored), i) if (1..horizon).contains(&i) => (
                &stored.v_traj[i] + self.cfg.gain().matrix() * (x - &stored.z_traj[i]),
                Branch::BackupTube,
            ),
            _ => (self.terminal_input(x)?, Branch::TerminalController),
        };
        let interfered = (&applied - u_learning).norm_squared() > pass_tol;
        Ok(FilterDecision {
            applied,
            interfered,
            branch,
            feasible: false,
            objective: sol.objective,
            k_inf: self.k_inf,
            enlargement: None,
        })
    }

    fn terminal_input(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if let Some(sets) = &self.measured {
            return sets.control(&self.cfg, x);
        }
        terminal_control(&self.controller, &self.hull, x)
    }

    fn maybe_enlarge(&mut self, k: usize, x: &DVector<f64>, sol: &MpscSolution) -> Result<Option<EnlargeOutcome>> {
        let Some(settings) = self.enlargement else {
            return Ok(None);
        };
        if !k.is_multiple_of(settings.cadence) {
            return Ok(None);
        }
        match settings.kind {
            EnlargementKind::Nominal => {
                let (hull, ctrl, outcome) =
                    enlarge_nominal(&mut self.log, k, x, &self.hull, &self.controller, sol, &self.cfg)?;
                if matches!(outcome, EnlargeOutcome::Grown { .. }) {
                    self.cfg = self.cfg.with_terminal(hull.clone())?;
                    self.hull = hull;
                    self.controller = ctrl;
                }
                Ok(Some(outcome))
            }
            EnlargementKind::Measured => {
                self.log.record(k, x, sol)?;
                let sets = self.measured.as_mut().expect("measured sets exist when enabled");
                let before = sets.measured_hull().map_or(0, VertexHull::len);
                sets.enlarge_measured(x)?;
                let after = sets.measured_hull().map_or(0, VertexHull::len);
                Ok(Some(if after != before {
                    EnlargeOutcome::Grown { vertices: after }
                } else {
                    EnlargeOutcome::Unchanged
                }))
            }
        }
    }

    /// Classifies `x` against the feasible set of the program and the terminal safe set.
    pub fn is_in_safe_set(&self, x: &DVector<f64>) -> Result<SafeSetVerdict> {
        let probe = DVector::zeros(self.cfg.model().input_dim());
        if solve_mpsc_with(&self.cfg, x, &probe, &SolveOptions::default())?.is_feasible() {
            return Ok(SafeSetVerdict::InFeasibleSet);
        }
        let terminal = match &self.measured {
            Some(sets) => sets.contains(x)?,
            None => in_terminal_safe_set(&self.controller, x)?,
        };
        Ok(if terminal {
            SafeSetVerdict::InTerminalOnly
        } else {
            SafeSetVerdict::Outside
        })
    }
}

/// Everything recorded during a closed-loop run.
#[derive(Debug, Clone)]
pub struct ClosedLoopRecord {
    pub trajectory: Trajectory,
    pub learning_inputs: Vec<DVector<f64>>,
    pub decisions: Vec<FilterDecision>,
    pub disturbances: Vec<DVector<f64>>,
    /// Terminal hull after the requested steps.
    pub hull_snapshots: Vec<(usize, VertexHull)>,
    /// Set when the filter stopped the run (the trajectory ends at that step).
    pub halt: Option<Halt>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltKind {
    SafetyFault,
    FeasibilityLost,
    Solver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halt {
    pub step: usize,
    pub kind: HaltKind,
    pub message: String,
}

/// Runs the filter against the true plant for `steps` steps.
///
/// `signal(k)` yields the learning input; `noise(k)` an optional additive plant term.
/// Faults raised by the filter stop the run and are recorded in [`ClosedLoopRecord::halt`].
#[allow(clippy::too_many_arguments)]
pub fn run_closed_loop(
    state: &mut FilterState,
    plant: &LinearModel,
    model: &LinearModel,
    x0: &DVector<f64>,
    signal: &dyn Fn(usize) -> DVector<f64>,
    noise: &mut dyn FnMut(usize) -> Option<DVector<f64>>,
    steps: usize,
    snapshot_at: &[usize],
) -> Result<ClosedLoopRecord> {
    let mut trajectory = Trajectory::new(x0.clone());
    let mut record = ClosedLoopRecord {
        trajectory: Trajectory::new(x0.clone()),
        learning_inputs: Vec::with_capacity(steps),
        decisions: Vec::with_capacity(steps),
        disturbances: Vec::with_capacity(steps),
        hull_snapshots: Vec::new(),
        halt: None,
    };
    let mut x = x0.clone();
    if snapshot_at.contains(&0) {
        record.hull_snapshots.push((0, state.terminal_hull().clone()));
    }
    for k in 0..steps {
        let u_l = signal(k);
        let decision = match state.filter_step(&x, &u_l) {
            Ok(d) => d,
            Err(e) => {
                let kind = match e.root() {
                    Error::SafetyFault(_) => HaltKind::SafetyFault,
                    Error::RecursiveFeasibilityLost { .. } => HaltKind::FeasibilityLost,
                    Error::Solver(_) => HaltKind::Solver,
                    _ => return Err(e),
                };
                record.halt = Some(Halt {
                    step: k,
                    kind,
                    message: e.to_string(),
                });
                break;
            }
        };
        let w = noise(k);
        let next = step_plant(plant, model, &x, &decision.applied, w.as_ref())?;
        trajectory.push(decision.applied.clone(), next.next_x.clone());
        record.learning_inputs.push(u_l);
        record.disturbances.push(next.realized_w);
        record.decisions.push(decision);
        x = next.next_x;
        if snapshot_at.contains(&(k + 1)) {
            record.hull_snapshots.push((k + 1, state.terminal_hull().clone()));
        }
    }
    record.trajectory = trajectory;
    Ok(record)
}

/// Unfiltered baseline: the learning input projected onto `u_set` is applied directly.
pub fn run_unfiltered(
    plant: &LinearModel,
    x0: &DVector<f64>,
    signal: &dyn Fn(usize) -> DVector<f64>,
    u_set: &Polytope,
    steps: usize,
) -> Result<Trajectory> {
    let mut trajectory = Trajectory::new(x0.clone());
    let mut x = x0.clone();
    for k in 0..steps {
        let u = u_set.project(&signal(k))?;
        x = plant.step_nominal(&x, &u)?;
        trajectory.push(u, x.clone());
    }
    Ok(trajectory)
}
