//! End-to-end experiment pipeline: sample, design, filter, report.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::enlargement::EnlargeOutcome;
use crate::error::{Error, Result, StageExt};
use crate::filter::{run_closed_loop, run_unfiltered, Branch, ClosedLoopRecord, FilterMode, FilterState, Halt};
use crate::geometry::{minkowski_boundary_2d, Ellipsoid, Polytope, VertexHull};
use crate::linsys::Trajectory;
use crate::mpsc::MpscConfig;
use crate::scenario::{build_scenarios, design_rpi, lmi_residual, Measurement, RpiDesign, ScenarioBound, ScenarioSet};

use super::config::{matrix, rows, ExperimentConfig, Resolved, Rows};
use super::svg;

/// Stream of the seeded generator used for out-of-sample validation draws,
/// kept apart from the design stream so both stay reproducible.
const VALIDATION_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Draws a point uniformly from a bounded polytope.
///
/// Axis-aligned boxes are sampled directly; other polytopes by rejection
/// from their bounding box.
#[derive(Debug, Clone)]
pub struct UniformSampler {
    poly: Polytope,
    bounds: Vec<(f64, f64)>,
    is_box: bool,
}

impl UniformSampler {
    pub fn new(poly: &Polytope) -> Result<Self> {
        let is_box = (0..poly.facet_count())
            .all(|i| poly.normals().row(i).iter().filter(|v| **v != 0.0).count() == 1);
        let bounds = if is_box {
            let n = poly.dim();
            let mut lo = vec![f64::NEG_INFINITY; n];
            let mut hi = vec![f64::INFINITY; n];
            for i in 0..poly.facet_count() {
                let row = poly.normals().row(i);
                let j = row.iter().position(|v| *v != 0.0).expect("one nonzero");
                let bound = poly.offsets()[i] / row[j];
                if row[j] > 0.0 {
                    hi[j] = hi[j].min(bound);
                } else {
                    lo[j] = lo[j].max(bound);
                }
            }
            if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("cannot sample an unbounded region".into()));
            }
            lo.into_iter().zip(hi).collect()
        } else {
            poly.bounding_box()?
        };
        if bounds.iter().any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidArgument("cannot sample an empty region".into()));
        }
        Ok(Self {
            poly: poly.clone(),
            bounds,
            is_box,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        for _ in 0..100_000 {
            let x = DVector::from_iterator(
                self.bounds.len(),
                self.bounds
                    .iter()
                    .map(|&(l, h)| if l < h { rng.gen_range(l..h) } else { l }),
            );
            if self.is_box || self.poly.contains(&x, 0.0) {
                return Ok(x);
            }
        }
        Err(Error::InvalidArgument("rejection sampling found no point".into()))
    }
}

fn draw_measurements(r: &Resolved, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Measurement>> {
    let xs = UniformSampler::new(&r.x_set)?;
    let us = UniformSampler::new(&r.u_set)?;
    (0..count)
        .map(|_| {
            let x = xs.sample(rng)?;
            let u = us.sample(rng)?;
            let y = r.plant.step_nominal(&x, &u)?;
            Ok(Measurement { x, u, y })
        })
        .collect()
}

/// `count` measurements `(x, u, y)` with `x ∈ X`, `u ∈ U` uniform and `y` the plant successor.
/// The generator is ChaCha8 seeded with `seed`.
pub fn sample_measurements(r: &Resolved, count: usize, seed: u64) -> Result<Vec<Measurement>> {
    draw_measurements(r, count, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Serialized design: `{P, tau, worst_residual, N_s, n_s, epsilon_at_confidence, confidence}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    #[serde(rename = "P")]
    pub p: Rows,
    pub tau: f64,
    pub worst_residual: f64,
    #[serde(rename = "N_s")]
    pub sample_count: usize,
    #[serde(rename = "n_s")]
    pub support_count: usize,
    pub epsilon_at_confidence: f64,
    pub confidence: f64,
}

impl From<&RpiDesign> for DesignFile {
    fn from(d: &RpiDesign) -> Self {
        Self {
            p: rows(d.omega.matrix()),
            tau: d.tau,
            worst_residual: d.worst_residual,
            sample_count: d.bound.sample_count,
            support_count: d.bound.support_count,
            epsilon_at_confidence: d.bound.epsilon,
            confidence: d.bound.confidence,
        }
    }
}

impl DesignFile {
    pub fn to_design(&self) -> Result<RpiDesign> {
        Ok(RpiDesign {
            omega: Ellipsoid::new(matrix(&self.p, "P")?)?,
            tau: self.tau,
            worst_residual: self.worst_residual,
            bound: ScenarioBound {
                sample_count: self.sample_count,
                support_count: self.support_count,
                epsilon: self.epsilon_at_confidence,
                confidence: self.confidence,
            },
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: format!("design:{}", e.path()),
            message: e.inner().to_string(),
        })
    }
}

/// Best `τ` of a fixed shape against a scenario set: the grid point minimizing the worst residual.
pub fn best_tau(omega: &Ellipsoid, scenarios: &[DVector<f64>], a_cl: &DMatrix<f64>, rho: f64, grid: usize) -> Result<(f64, f64)> {
    let lo = rho * rho;
    let mut best = (f64::NAN, f64::INFINITY);
    for i in 1..=grid {
        let tau = lo + (1.0 - lo) * i as f64 / (grid + 1) as f64;
        let mut worst = f64::NEG_INFINITY;
        for w in scenarios {
            worst = worst.max(lmi_residual(omega, tau, a_cl, w)?);
        }
        if worst < best.1 {
            best = (tau, worst);
        }
    }
    Ok(best)
}

/// Scenario design from the configured seed, or the configured fixed shape scored on the same scenarios.
pub fn design_stage(cfg: &ExperimentConfig, r: &Resolved) -> Result<RpiDesign> {
    let data = sample_measurements(r, cfg.samples, cfg.seed)?;
    let scenarios = build_scenarios(&data, &r.model)?;
    match &r.fixed_omega {
        None => design_rpi(&scenarios, &r.model, &r.gain, &cfg.design),
        Some(p) => fixed_design(p, &scenarios, cfg, r),
    }
}

fn fixed_design(p: &DMatrix<f64>, scenarios: &ScenarioSet, cfg: &ExperimentConfig, r: &Resolved) -> Result<RpiDesign> {
    let omega = Ellipsoid::new(p.clone())?;
    let a_cl = r.model.closed_loop(r.gain.matrix())?;
    let (tau, worst_residual) = best_tau(&omega, scenarios.samples(), &a_cl, r.gain.closed_loop_radius(), 200)?;
    let bound = ScenarioBound::at_confidence(scenarios.len(), r.model.state_dim(), cfg.design.confidence)?;
    Ok(RpiDesign {
        omega,
        tau,
        worst_residual,
        bound,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BranchCounts {
    pub certified: usize,
    pub backup_tube: usize,
    pub terminal_controller: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnlargementCounts {
    pub grown: usize,
    pub unchanged: usize,
    pub rolled_back: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullSnapshot {
    pub k: usize,
    pub vertices: Rows,
    pub area: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub steps: usize,
    pub horizon: usize,
    pub mode: FilterMode,
    pub interfered: usize,
    pub pass_through_fraction: f64,
    pub infeasible_steps: usize,
    pub branches: BranchCounts,
    pub state_violations: usize,
    pub input_violations: usize,
    pub first_violation: Option<usize>,
    /// Smallest distance of a visited state to the boundary of X (negative when violated).
    pub min_state_margin: f64,
    pub min_input_margin: f64,
    pub tau: f64,
    pub worst_residual: f64,
    pub sample_count: usize,
    pub epsilon: f64,
    pub confidence: f64,
    pub terminal_vertices: usize,
    pub enlargement: EnlargementCounts,
    pub snapshots: Vec<HullSnapshot>,
    pub halt: Option<Halt>,
}

/// Everything an experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub design: RpiDesign,
    pub mpsc: MpscConfig,
    pub record: ClosedLoopRecord,
    pub final_hull: VertexHull,
    pub summary: Summary,
}

/// Slack `min_i (bᵢ − aᵢᵀx)/‖aᵢ‖`.
pub fn margin(poly: &Polytope, x: &DVector<f64>) -> f64 {
    (0..poly.facet_count())
        .map(|i| {
            let a = poly.normals().row(i);
            (poly.offsets()[i] - (a * x)[0]) / a.norm()
        })
        .fold(f64::INFINITY, f64::min)
}

/// First step whose state leaves `x_set` (or whose input leaves `u_set`) by more than `tol`.
pub fn first_violation(traj: &Trajectory, x_set: &Polytope, u_set: &Polytope, tol: f64) -> Option<usize> {
    let state = traj.states.iter().position(|x| !x_set.contains(x, tol));
    let input = traj.inputs.iter().position(|u| !u_set.contains(u, tol));
    match (state, input) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

pub const CONSTRAINT_TOL: f64 = 1e-6;

/// Runs the filtered closed loop with `design` (or a fresh design when `None`).
pub fn run_experiment(cfg: &ExperimentConfig, design: Option<RpiDesign>, base: Option<&Path>) -> Result<ExperimentOutput> {
    let r = cfg.resolve().stage("config")?;
    let design = match design {
        Some(d) => d,
        None => design_stage(cfg, &r).stage("design")?,
    };
    let mpsc = MpscConfig::from_constraints(
        r.horizon,
        r.model.clone(),
        r.gain.clone(),
        design.omega.clone(),
        &r.x_set,
        &r.u_set,
        VertexHull::origin(r.model.state_dim()),
        cfg.tolerances,
    )
    .stage("tightening")?;
    let mut state = FilterState::new(mpsc.clone(), cfg.mode).stage("filter")?.with_warm_start(cfg.warm_start);
    if let Some(e) = cfg.enlargement {
        state = state.enable_enlargement(e).stage("filter")?;
    }
    let signal = cfg.signal.load(r.model.input_dim(), base).stage("signal")?;
    if let Some(len) = signal.recorded_len() {
        if len < cfg.steps {
            return Err(Error::InvalidArgument(format!("replayed signal has {len} rows, {} steps requested", cfg.steps)))
                .stage("signal");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(NOISE_STREAM);
    let noise = r.noise.clone();
    let mut noise_fn = |_k: usize| noise.as_ref().map(|n| n.sample(&mut rng));
    let record = run_closed_loop(
        &mut state,
        &r.plant,
        &r.model,
        &r.x0,
        &|k| signal.at(k),
        &mut noise_fn,
        cfg.steps,
        &cfg.snapshots,
    )
    .stage("closed loop")?;

    let summary = summarize(cfg, &r, &design, &record, &state);
    Ok(ExperimentOutput {
        design,
        mpsc,
        final_hull: state.terminal_hull().clone(),
        record,
        summary,
    })
}

fn summarize(cfg: &ExperimentConfig, r: &Resolved, design: &RpiDesign, record: &ClosedLoopRecord, state: &FilterState) -> Summary {
    let decisions = &record.decisions;
    let mut branches = BranchCounts::default();
    let mut enlargement = EnlargementCounts::default();
    for d in decisions {
        match d.branch {
            Branch::Certified => branches.certified += 1,
            Branch::BackupTube => branches.backup_tube += 1,
            Branch::TerminalController => branches.terminal_controller += 1,
        }
        match d.enlargement {
            Some(EnlargeOutcome::Grown { .. }) => enlargement.grown += 1,
            Some(EnlargeOutcome::Unchanged) => enlargement.unchanged += 1,
            Some(EnlargeOutcome::RolledBack { .. }) => enlargement.rolled_back += 1,
            None => {}
        }
    }
    let traj = &record.trajectory;
    let interfered = decisions.iter().filter(|d| d.interfered).count();
    let steps = decisions.len();
    Summary {
        seed: cfg.seed,
        steps,
        horizon: r.horizon,
        mode: cfg.mode,
        interfered,
        pass_through_fraction: if steps == 0 { 0.0 } else { (steps - interfered) as f64 / steps as f64 },
        infeasible_steps: decisions.iter().filter(|d| !d.feasible).count(),
        branches,
        state_violations: traj.states.iter().filter(|x| !r.x_set.contains(x, CONSTRAINT_TOL)).count(),
        input_violations: traj.inputs.iter().filter(|u| !r.u_set.contains(u, CONSTRAINT_TOL)).count(),
        first_violation: first_violation(traj, &r.x_set, &r.u_set, CONSTRAINT_TOL),
        min_state_margin: traj.states.iter().map(|x| margin(&r.x_set, x)).fold(f64::INFINITY, f64::min),
        min_input_margin: traj.inputs.iter().map(|u| margin(&r.u_set, u)).fold(f64::INFINITY, f64::min),
        tau: design.tau,
        worst_residual: design.worst_residual,
        sample_count: design.bound.sample_count,
        epsilon: design.bound.epsilon,
        confidence: design.bound.confidence,
        terminal_vertices: state.terminal_hull().len(),
        enlargement,
        snapshots: record.hull_snapshots.iter().map(|(k, h)| snapshot(*k, h)).collect(),
        halt: record.halt.clone(),
    }
}

pub fn snapshot(k: usize, hull: &VertexHull) -> HullSnapshot {
    HullSnapshot {
        k,
        vertices: hull.vertices().iter().map(|v| v.iter().copied().collect()).collect(),
        area: (hull.dim() == 2).then(|| hull.area_2d()),
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Per-step trace with columns `k,x1..xn,uL,u,interfered,feasible,branch,kinf,objective`.
pub fn write_trace(path: &Path, record: &ClosedLoopRecord) -> Result<()> {
    let n = record.trajectory.states[0].len();
    let m = record.learning_inputs.first().map_or(1, DVector::len);
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = vec!["k".into()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    if m == 1 {
        header.push("uL".into());
        header.push("u".into());
    } else {
        header.extend((1..=m).map(|i| format!("uL{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
    }
    header.extend(["interfered", "feasible", "branch", "kinf", "objective"].map(String::from));
    w.write_record(&header)?;
    for (k, d) in record.decisions.iter().enumerate() {
        let mut row: Vec<String> = vec![k.to_string()];
        row.extend(record.trajectory.states[k].iter().map(|v| fmt(*v)));
        row.extend(record.learning_inputs[k].iter().map(|v| fmt(*v)));
        row.extend(d.applied.iter().map(|v| fmt(*v)));
        row.push(u8::from(d.interfered).to_string());
        row.push(u8::from(d.feasible).to_string());
        row.push(d.branch.as_str().into());
        row.push(d.k_inf.to_string());
        row.push(fmt(d.objective));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PolytopeJson {
    a: Rows,
    b: Vec<f64>,
}

impl From<&Polytope> for PolytopeJson {
    fn from(p: &Polytope) -> Self {
        Self {
            a: rows(p.normals()),
            b: p.offsets().iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SetsJson {
    omega: Rows,
    x_bar: PolytopeJson,
    u_bar: PolytopeJson,
    terminal_hull: HullSnapshot,
    snapshots: Vec<HullSnapshot>,
    /// Boundary samples of the final terminal safe set (planar systems only).
    safe_set_boundary: Vec<Vec<f64>>,
}

/// Writes `trace.csv`, `summary.json`, `design.json`, `sets.json` and, for planar systems, `phase.svg`
/// and `inputs.svg` into `dir`.
pub fn write_artifacts(dir: &Path, out: &ExperimentOutput, x_set: &Polytope) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_trace(&dir.join("trace.csv"), &out.record)?;
    write_json(&dir.join("summary.json"), &out.summary)?;
    write_json(&dir.join("design.json"), &DesignFile::from(&out.design))?;
    let planar = out.final_hull.dim() == 2;
    let boundary = if planar {
        minkowski_boundary_2d(&out.final_hull, &out.design.omega, 256)
    } else {
        Vec::new()
    };
    let sets = SetsJson {
        omega: rows(out.design.omega.matrix()),
        x_bar: out.mpsc.x_bar().into(),
        u_bar: out.mpsc.u_bar().into(),
        terminal_hull: snapshot(out.record.decisions.len(), &out.final_hull),
        snapshots: out.summary.snapshots.clone(),
        safe_set_boundary: boundary.iter().map(|p| p.iter().copied().collect()).collect(),
    };
    write_json(&dir.join("sets.json"), &sets)?;
    if planar {
        std::fs::write(dir.join("phase.svg"), svg::phase_plot(x_set, &out.record, &out.final_hull, &boundary)?)?;
        std::fs::write(dir.join("inputs.svg"), svg::input_plot(&out.record))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub trials: usize,
    pub violations: usize,
    pub violation_fraction: f64,
    pub epsilon: f64,
    pub confidence: f64,
    /// `ε + 3·sqrt(ε/trials)`: the binomial allowance the empirical fraction is compared with.
    pub allowance: f64,
    pub within_allowance: bool,
    pub worst_residual: f64,
}

/// Out-of-sample check: fresh mismatch disturbances over `X × U` against the design's LMI.
pub fn validate_design(cfg: &ExperimentConfig, design: &RpiDesign, trials: usize) -> Result<ValidationSummary> {
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    let r = cfg.resolve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(VALIDATION_STREAM);
    let data = draw_measurements(&r, trials, &mut rng)?;
    let scenarios = build_scenarios(&data, &r.model)?;
    let a_cl = r.model.closed_loop(r.gain.matrix())?;
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for w in scenarios.samples() {
        let res = lmi_residual(&design.omega, design.tau, &a_cl, w)?;
        worst = worst.max(res);
        if res > cfg.design.feas_tol {
            violations += 1;
        }
    }
    let eps = design.bound.epsilon;
    let fraction = violations as f64 / trials as f64;
    let allowance = eps + 3.0 * (eps / trials as f64).sqrt();
    Ok(ValidationSummary {
        trials,
        violations,
        violation_fraction: fraction,
        epsilon: eps,
        confidence: design.bound.confidence,
        allowance,
        within_allowance: fraction <= allowance,
        worst_residual: worst,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub steps: usize,
    pub first_violation: Option<usize>,
    pub state_violations: usize,
    pub min_state_margin: f64,
}

/// Unfiltered run: the learning input saturated to `U` drives the plant directly.
pub fn run_baseline(cfg: &ExperimentConfig, base: Option<&Path>) -> Result<(Trajectory, BaselineSummary)> {
    let r = cfg.resolve()?;
    let signal = cfg.signal.load(r.model.input_dim(), base)?;
    let traj = run_unfiltered(&r.plant, &r.x0, &|k| signal.at(k), &r.u_set, cfg.steps)?;
    let summary = BaselineSummary {
        steps: traj.len(),
        first_violation: first_violation(&traj, &r.x_set, &r.u_set, CONSTRAINT_TOL),
        state_violations: traj.states.iter().filter(|x| !r.x_set.contains(x, CONSTRAINT_TOL)).count(),
        min_state_margin: traj.states.iter().map(|x| margin(&r.x_set, x)).fold(f64::INFINITY, f64::min),
    };
    Ok((traj, summary))
}

/// Baseline trace with columns `k,x1..xn,u`.
pub fn write_baseline_trace(path: &Path, traj: &Trajectory) -> Result<()> {
    let n = traj.states[0].len();
    let m = traj.inputs.first().map_or(1, DVector::len);
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = vec!["k".into()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    if m == 1 {
        header.push("u".into());
    } else {
        header.extend((1..=m).map(|i| format!("u{i}")));
    }
    w.write_record(&header)?;
    for (k, u) in traj.inputs.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(traj.states[k].iter().map(|v| fmt(*v)));
        row.extend(u.iter().map(|v| fmt(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;

    fn reference_config() -> ExperimentConfig {
        parse_config(include_str!("../../../../configs/closed_loop_n20.json")).unwrap().0
    }

    #[test]
    fn measurements_reproducible_and_within_mismatch_envelope() {
        let cfg = reference_config();
        let r = cfg.resolve().unwrap();
        let a = sample_measurements(&r, 600, 7).unwrap();
        assert_eq!(a, sample_measurements(&r, 600, 7).unwrap());
        assert_ne!(a, sample_measurements(&r, 600, 8).unwrap());
        // (A_true − A_model)x has second component −0.07·x₁ + 0.02·x₂; over the box it spans [−0.078, 0.09].
        for m in &a {
            assert!(m.y.iter().all(|v| v.is_finite()));
            let w = &m.y - r.model.step_nominal(&m.x, &m.u).unwrap();
            assert!(w[0].abs() < 1e-15);
            assert!(w[1] >= -0.078 - 1e-12 && w[1] <= 0.09 + 1e-12, "{}", w[1]);
        }
    }

    #[test]
    fn rejection_sampler_respects_halfspaces() {
        let tri = Polytope::new(
            nalgebra::dmatrix![-1.0, 0.0; 0.0, -1.0; 1.0, 1.0],
            nalgebra::dvector![0.0, 0.0, 1.0],
        )
        .unwrap();
        let s = UniformSampler::new(&tri).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            assert!(tri.contains(&s.sample(&mut rng).unwrap(), 0.0));
        }
    }

    #[test]
    fn baseline_violates_early() {
        let (_, summary) = run_baseline(&reference_config(), None).unwrap();
        assert!(summary.first_violation.unwrap() < 20);
    }
}
