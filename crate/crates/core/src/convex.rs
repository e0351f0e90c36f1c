//! Small dense convex solver: log-barrier interior point method with a
//! phase-I feasibility stage.
//!
//! Problem class:
//!
//! ```text
//! minimize    ½ yᵀHy + gᵀy
//! subject to  E y = d
//!             G y ≤ h
//!             yᵀQ_k y + c_kᵀy + r_k ≤ 0      (Q_k ⪰ 0)
//! ```
//!
//! Equalities are eliminated through a null-space parameterization
//! `y = y₀ + Zξ`, so every iterate satisfies them to rounding. Phase I
//! minimizes the largest constraint value `s`; its barrier duality bound
//! `s − m/t` certifies infeasibility, and a phase-I optimum that stalls in
//! `(0, feasibility_tol]` is accepted as feasible at tolerance by relaxing
//! phase II by the achieved value.

use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct QuadraticConstraint {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub r: f64,
}

impl QuadraticConstraint {
    fn value(&self, y: &DVector<f64>) -> f64 {
        (y.transpose() * &self.q * y)[0] + self.c.dot(y) + self.r
    }

    fn gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.q * y * 2.0 + &self.c
    }
}

#[derive(Debug, Clone)]
pub struct ConvexProgram {
    dim: usize,
    obj_h: DMatrix<f64>,
    obj_g: DVector<f64>,
    eq_a: DMatrix<f64>,
    eq_b: DVector<f64>,
    ineq_a: DMatrix<f64>,
    ineq_b: DVector<f64>,
    quads: Vec<QuadraticConstraint>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    /// Target barrier duality gap `m/t` of phase II.
    pub gap_tol: f64,
    /// Largest constraint violation accepted as feasible.
    pub feasibility_tol: f64,
    /// Barrier parameter growth factor.
    pub mu: f64,
    pub max_newton: usize,
    pub newton_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            gap_tol: 1e-10,
            feasibility_tol: 1e-9,
            mu: 20.0,
            max_newton: 600,
            newton_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvexSolution {
    pub y: DVector<f64>,
    pub objective: f64,
    /// Final barrier duality gap bound.
    pub gap: f64,
    /// Amount by which inequalities were relaxed (0 when strictly feasible).
    pub relaxation: f64,
    pub newton_steps: usize,
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Optimal(ConvexSolution),
    /// Strictly feasible point whose optimality was not certified within the Newton budget.
    Feasible(ConvexSolution),
    /// Certified: the smallest achievable maximum violation is at least `lower_bound`.
    Infeasible { lower_bound: f64 },
    Unknown { reason: String },
}

impl Outcome {
    pub fn optimal(self) -> Option<ConvexSolution> {
        match self {
            Outcome::Optimal(s) => Some(s),
            _ => None,
        }
    }

    /// Any feasible point, certified optimal or not.
    pub fn feasible_point(self) -> Option<ConvexSolution> {
        match self {
            Outcome::Optimal(s) | Outcome::Feasible(s) => Some(s),
            _ => None,
        }
    }
}

impl ConvexProgram {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            obj_h: DMatrix::zeros(dim, dim),
            obj_g: DVector::zeros(dim),
            eq_a: DMatrix::zeros(0, dim),
            eq_b: DVector::zeros(0),
            ineq_a: DMatrix::zeros(0, dim),
            ineq_b: DVector::zeros(0),
            quads: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Objective `½ yᵀHy + gᵀy`.
    pub fn objective(mut self, h: DMatrix<f64>, g: DVector<f64>) -> Self {
        assert_eq!(h.shape(), (self.dim, self.dim));
        assert_eq!(g.len(), self.dim);
        self.obj_h = (&h + h.transpose()) * 0.5;
        self.obj_g = g;
        self
    }

    pub fn equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        assert_eq!(a.ncols(), self.dim);
        assert_eq!(a.nrows(), b.len());
        self.eq_a = a;
        self.eq_b = b;
        self
    }

    /// `A y ≤ b`; rows are normalized to unit length internally.
    pub fn inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        assert_eq!(a.ncols(), self.dim);
        assert_eq!(a.nrows(), b.len());
        self.ineq_a = a;
        self.ineq_b = b;
        self
    }

    /// `yᵀQy + cᵀy + r ≤ 0`.
    pub fn quadratic(mut self, q: DMatrix<f64>, c: DVector<f64>, r: f64) -> Self {
        assert_eq!(q.shape(), (self.dim, self.dim));
        assert_eq!(c.len(), self.dim);
        self.quads.push(QuadraticConstraint {
            q: (&q + q.transpose()) * 0.5,
            c,
            r,
        });
        self
    }

    pub fn objective_value(&self, y: &DVector<f64>) -> f64 {
        0.5 * (y.transpose() * &self.obj_h * y)[0] + self.obj_g.dot(y)
    }

    /// Largest inequality value at `y` (≤ 0 means feasible) and the equality residual.
    pub fn violation(&self, y: &DVector<f64>) -> (f64, f64) {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.ineq_a.nrows() {
            let row = self.ineq_a.row(i);
            let norm = row.norm();
            if norm > 0.0 {
                worst = worst.max(((row * y)[0] - self.ineq_b[i]) / norm);
            } else {
                worst = worst.max(-self.ineq_b[i]);
            }
        }
        for q in &self.quads {
            worst = worst.max(q.value(y));
        }
        let eq = if self.eq_a.nrows() > 0 {
            (&self.eq_a * y - &self.eq_b).amax()
        } else {
            0.0
        };
        (worst, eq)
    }

    pub fn solve(&self, settings: &SolverSettings) -> Outcome {
        self.solve_from(settings, None)
    }

    /// Solves with an optional starting guess; a strictly feasible guess skips phase I.
    pub fn solve_from(&self, settings: &SolverSettings, initial: Option<&DVector<f64>>) -> Outcome {
        let reduced = match Reduced::build(self, settings) {
            Ok(r) => r,
            Err(outcome) => return outcome,
        };
        reduced.solve(self, settings, initial)
    }
}

/// Problem restricted to the affine set `{y₀ + Zξ}`.
struct Reduced {
    y0: DVector<f64>,
    z: DMatrix<f64>,
    lin_a: DMatrix<f64>,
    lin_b: DVector<f64>,
    quads: Vec<QuadraticConstraint>,
    obj_h: DMatrix<f64>,
    obj_g: DVector<f64>,
}

impl Reduced {
    fn build(p: &ConvexProgram, settings: &SolverSettings) -> Result<Self, Outcome> {
        let dim = p.dim;
        let (y0, z) = if p.eq_a.nrows() == 0 {
            (DVector::zeros(dim), DMatrix::identity(dim, dim))
        } else {
            affine_parameterization(&p.eq_a, &p.eq_b)?
        };
        let r = z.ncols();

        // Linear rows: normalize in y-space, then map into ξ.
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        for i in 0..p.ineq_a.nrows() {
            let row = p.ineq_a.row(i).transpose();
            let norm = row.norm();
            let (row, rhs) = if norm > 0.0 {
                (row / norm, p.ineq_b[i] / norm)
            } else {
                (row, p.ineq_b[i])
            };
            let rhs = rhs - row.dot(&y0);
            let reduced_row = z.transpose() * &row;
            if reduced_row.amax() < 1e-13 {
                if rhs < -settings.feasibility_tol {
                    return Err(Outcome::Infeasible { lower_bound: -rhs });
                }
                continue;
            }
            rows.push((reduced_row, rhs));
        }
        let mut lin_a = DMatrix::zeros(rows.len(), r);
        let mut lin_b = DVector::zeros(rows.len());
        for (i, (row, rhs)) in rows.into_iter().enumerate() {
            lin_a.set_row(i, &row.transpose());
            lin_b[i] = rhs;
        }

        let quads = p
            .quads
            .iter()
            .map(|q| QuadraticConstraint {
                q: z.transpose() * &q.q * &z,
                c: z.transpose() * q.gradient(&y0),
                r: q.value(&y0),
            })
            .collect();

        let obj_h = z.transpose() * &p.obj_h * &z;
        let obj_g = z.transpose() * (&p.obj_h * &y0 + &p.obj_g);
        Ok(Self {
            y0,
            z,
            lin_a,
            lin_b,
            quads,
            obj_h,
            obj_g,
        })
    }

    fn lift(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.y0 + &self.z * xi
    }

    fn constraint_count(&self) -> usize {
        self.lin_a.nrows() + self.quads.len()
    }

    fn max_violation(&self, xi: &DVector<f64>) -> f64 {
        let lin = &self.lin_a * xi - &self.lin_b;
        let mut worst = lin.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for q in &self.quads {
            worst = worst.max(q.value(xi));
        }
        worst
    }

    fn solve(&self, program: &ConvexProgram, settings: &SolverSettings, initial: Option<&DVector<f64>>) -> Outcome {
        let r = self.z.ncols();
        let m = self.constraint_count();
        let mut budget = settings.max_newton;

        let start = initial
            .map(|y| self.z.transpose() * (y - &self.y0))
            .unwrap_or_else(|| DVector::zeros(r));

        let (xi, relaxation) = if m == 0 || self.max_violation(&start) < 0.0 {
            (start, 0.0)
        } else {
            match self.phase_one(start, settings, &mut budget) {
                PhaseOne::Feasible { xi, relaxation } => (xi, relaxation),
                PhaseOne::Infeasible(lb) => return Outcome::Infeasible { lower_bound: lb },
                PhaseOne::Unknown(reason) => return Outcome::Unknown { reason },
            }
        };

        let lin_b = self.lin_b.add_scalar(relaxation);
        let quads: Vec<QuadraticConstraint> = self
            .quads
            .iter()
            .map(|q| QuadraticConstraint {
                q: q.q.clone(),
                c: q.c.clone(),
                r: q.r - relaxation,
            })
            .collect();
        let barrier = Barrier {
            lin_a: &self.lin_a,
            lin_b: &lin_b,
            quads: &quads,
            obj_h: &self.obj_h,
            obj_g: &self.obj_g,
        };

        let mut xi = xi;
        if m == 0 {
            // Unconstrained (in ξ) quadratic: a single Newton solve.
            match solve_spd(&self.obj_h, &(-(&self.obj_h * &xi + &self.obj_g))) {
                Some(d) => xi += d,
                None => return Outcome::Unknown { reason: "singular unconstrained objective".into() },
            }
            let y = self.lift(&xi);
            return Outcome::Optimal(ConvexSolution {
                objective: program.objective_value(&y),
                y,
                gap: 0.0,
                relaxation,
                newton_steps: settings.max_newton - budget,
            });
        }

        let scale = 1.0 + self.obj_g.amax() + self.obj_h.amax();
        let mut t = (1.0 / scale).max(1e-6);
        loop {
            match barrier.center(t, xi.clone(), settings, &mut budget, None) {
                Ok(next) => xi = next,
                Err(reason) => return Outcome::Unknown { reason },
            }
            if xi.amax() > 1e12 {
                return Outcome::Unknown { reason: "objective appears unbounded".into() };
            }
            let gap = m as f64 / t;
            if gap < settings.gap_tol {
                let y = self.lift(&xi);
                return Outcome::Optimal(ConvexSolution {
                    objective: program.objective_value(&y),
                    y,
                    gap,
                    relaxation,
                    newton_steps: settings.max_newton - budget,
                });
            }
            if budget == 0 {
                // Thin feasible sets can stall centering; the iterate is still strictly feasible.
                let y = self.lift(&xi);
                return Outcome::Feasible(ConvexSolution {
                    objective: program.objective_value(&y),
                    y,
                    gap,
                    relaxation,
                    newton_steps: settings.max_newton,
                });
            }
            t *= settings.mu;
        }
    }

    fn phase_one(&self, xi0: DVector<f64>, settings: &SolverSettings, budget: &mut usize) -> PhaseOne {
        let r = self.z.ncols();
        let m = self.constraint_count();
        // Augmented variable w = (ξ, s); minimize s subject to f_i(ξ) ≤ s.
        let mut lin_a = DMatrix::zeros(self.lin_a.nrows(), r + 1);
        lin_a.view_mut((0, 0), (self.lin_a.nrows(), r)).copy_from(&self.lin_a);
        lin_a.column_mut(r).fill(-1.0);
        let quads: Vec<QuadraticConstraint> = self
            .quads
            .iter()
            .map(|q| {
                let mut qa = DMatrix::zeros(r + 1, r + 1);
                qa.view_mut((0, 0), (r, r)).copy_from(&q.q);
                let mut ca = DVector::zeros(r + 1);
                ca.rows_mut(0, r).copy_from(&q.c);
                ca[r] = -1.0;
                QuadraticConstraint { q: qa, c: ca, r: q.r }
            })
            .collect();
        let obj_h = DMatrix::zeros(r + 1, r + 1);
        let mut obj_g = DVector::zeros(r + 1);
        obj_g[r] = 1.0;
        let barrier = Barrier {
            lin_a: &lin_a,
            lin_b: &self.lin_b,
            quads: &quads,
            obj_h: &obj_h,
            obj_g: &obj_g,
        };

        let s0 = self.max_violation(&xi0);
        let mut w = DVector::zeros(r + 1);
        w.rows_mut(0, r).copy_from(&xi0);
        w[r] = s0 + 1.0 + s0.abs() * 0.1;

        let stop = |w: &DVector<f64>| w[r] < 0.0;
        let mut t = 1.0;
        loop {
            match barrier.center(t, w.clone(), settings, budget, Some(&stop)) {
                Ok(next) => w = next,
                Err(reason) => return PhaseOne::Unknown(reason),
            }
            let xi = w.rows(0, r).into_owned();
            // Use the true maximum violation: the barrier keeps s strictly above it.
            let s = self.max_violation(&xi);
            if s < 0.0 {
                return PhaseOne::Feasible { xi, relaxation: 0.0 };
            }
            let gap = m as f64 / t;
            let lower = w[r] - gap;
            if lower > settings.feasibility_tol {
                return PhaseOne::Infeasible(lower);
            }
            if gap < 1e-3 * settings.feasibility_tol && s <= settings.feasibility_tol {
                let relaxation = s + (0.5 * s).max(0.1 * settings.feasibility_tol);
                return PhaseOne::Feasible { xi, relaxation };
            }
            if gap < 1e-15 || *budget == 0 {
                return PhaseOne::Unknown(format!(
                    "phase I stalled with maximum violation {s:e} (gap {gap:e})"
                ));
            }
            t *= settings.mu;
        }
    }
}

enum PhaseOne {
    Feasible { xi: DVector<f64>, relaxation: f64 },
    Infeasible(f64),
    Unknown(String),
}

/// Early exit for centering, checked after each Newton step.
type StopRule<'a> = &'a dyn Fn(&DVector<f64>) -> bool;

struct Barrier<'a> {
    lin_a: &'a DMatrix<f64>,
    lin_b: &'a DVector<f64>,
    quads: &'a [QuadraticConstraint],
    obj_h: &'a DMatrix<f64>,
    obj_g: &'a DVector<f64>,
}

impl Barrier<'_> {
    /// Slacks `b - a·w` and `-q(w)`; `None` if any is not strictly positive.
    fn slacks(&self, w: &DVector<f64>) -> Option<(DVector<f64>, Vec<f64>)> {
        let lin = self.lin_b - self.lin_a * w;
        if lin.iter().any(|&s| !(s > 0.0)) {
            return None;
        }
        let mut qs = Vec::with_capacity(self.quads.len());
        for q in self.quads {
            let s = -q.value(w);
            if !(s > 0.0) {
                return None;
            }
            qs.push(s);
        }
        Some((lin, qs))
    }

    fn merit(&self, t: f64, w: &DVector<f64>, lin: &DVector<f64>, qs: &[f64]) -> f64 {
        let obj = 0.5 * (w.transpose() * self.obj_h * w)[0] + self.obj_g.dot(w);
        t * obj - lin.iter().map(|s| s.ln()).sum::<f64>() - qs.iter().map(|s| s.ln()).sum::<f64>()
    }

    fn center(
        &self,
        t: f64,
        mut w: DVector<f64>,
        settings: &SolverSettings,
        budget: &mut usize,
        stop: Option<StopRule<'_>>,
    ) -> Result<DVector<f64>, String> {
        let dim = w.len();
        let (mut lin, mut qs) = self
            .slacks(&w)
            .ok_or_else(|| "centering started from an infeasible point".to_string())?;
        loop {
            if *budget == 0 {
                return Ok(w);
            }
            *budget -= 1;

            let mut grad = (self.obj_h * &w + self.obj_g) * t;
            let inv: DVector<f64> = lin.map(|s| 1.0 / s);
            grad += self.lin_a.transpose() * &inv;
            let scaled = DMatrix::from_fn(self.lin_a.nrows(), dim, |i, j| self.lin_a[(i, j)] * inv[i]);
            let mut hess = self.obj_h * t + scaled.transpose() * &scaled;
            for (q, &s) in self.quads.iter().zip(&qs) {
                let gq = q.gradient(&w);
                grad += &gq / s;
                hess += &gq * gq.transpose() / (s * s) + &q.q * (2.0 / s);
            }
            let step = match solve_spd(&hess, &(-&grad)) {
                Some(d) => d,
                None => return Err("singular Newton system".into()),
            };
            let decrement = -grad.dot(&step);
            if !decrement.is_finite() {
                return Err("non-finite Newton decrement".into());
            }
            if decrement * 0.5 <= settings.newton_tol {
                return Ok(w);
            }

            // Largest step keeping linear slacks positive.
            let da = self.lin_a * &step;
            let mut alpha: f64 = 1.0;
            for i in 0..da.len() {
                if da[i] > 0.0 {
                    alpha = alpha.min(0.99 * lin[i] / da[i]);
                }
            }
            let current = self.merit(t, &w, &lin, &qs);
            let mut accepted = false;
            while alpha > 1e-16 {
                let cand = &w + &step * alpha;
                if (&cand - &w).amax() <= f64::EPSILON * w.amax() {
                    return Ok(w);
                }
                if let Some((l2, q2)) = self.slacks(&cand) {
                    let value = self.merit(t, &cand, &l2, &q2);
                    if value <= current - 0.25 * alpha * decrement {
                        w = cand;
                        lin = l2;
                        qs = q2;
                        accepted = true;
                        break;
                    }
                    if (value - current).abs() <= 1e-13 * current.abs().max(1.0) {
                        // Progress is below rounding: take the point and stop centering.
                        return Ok(cand);
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // Rounding limits further progress at this t.
                return Ok(w);
            }
            if let Some(stop) = stop {
                if stop(&w) {
                    return Ok(w);
                }
            }
        }
    }
}

/// Solves `H x = b` for symmetric positive (semi)definite `H`, adding a small
/// ridge when the factorization fails.
fn solve_spd(h: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = Cholesky::new(h.clone()) {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let scale = h.diagonal().amax().max(1e-300);
    let mut ridge = scale * 1e-14;
    for _ in 0..12 {
        let mut reg = h.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += ridge;
        }
        if let Some(ch) = Cholesky::new(reg) {
            let x = ch.solve(b);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
        ridge *= 100.0;
    }
    None
}

/// Least-norm particular solution and null-space basis of `A y = b`.
fn affine_parameterization(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), Outcome> {
    let dim = a.ncols();
    let rows = a.nrows().max(dim);
    let mut padded = DMatrix::zeros(rows, dim);
    padded.view_mut((0, 0), (a.nrows(), dim)).copy_from(a);
    let mut rhs = DVector::zeros(rows);
    rhs.rows_mut(0, b.len()).copy_from(b);

    let svd = padded.clone().svd(true, true);
    let sigma_max = svd.singular_values.amax();
    let cutoff = sigma_max * 1e-12 * dim as f64;
    let y0 = svd
        .solve(&rhs, cutoff)
        .map_err(|e| Outcome::Unknown { reason: e.to_string() })?;
    let residual = (a * &y0 - b).amax();
    if residual > 1e-9 * (1.0 + b.amax()) {
        return Err(Outcome::Infeasible { lower_bound: residual });
    }
    let v_t = svd.v_t.expect("requested V");
    let null: Vec<usize> = (0..dim).filter(|&i| svd.singular_values[i] <= cutoff).collect();
    let mut z = DMatrix::zeros(dim, null.len());
    for (j, &i) in null.iter().enumerate() {
        z.set_column(j, &v_t.row(i).transpose());
    }
    Ok((y0, z))
}
