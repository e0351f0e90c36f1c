//! Convex-set representations and the set arithmetic used by the tube scheme.
//!
//! * [`Polytope`]: halfspace form `{x : A x ≤ b}` (state/input constraints and
//!   their tightened versions).
//! * [`Ellipsoid`]: `{e : eᵀPe ≤ 1}` centred at the origin (the tube cross-section).
//! * [`VertexHull`]: convex hull of a vertex list (nominal terminal sets).
//!
//! Tightening a polytope by an ellipsoid is exact facet by facet through the
//! ellipsoid's support function, so no polytopic inner approximation of the
//! tube is ever formed.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::convex::{ConvexProgram, Outcome, SolverSettings};
use crate::error::{dim_err, Error, Result};
use crate::linsys::TubeGain;

pub const DEFAULT_MEMBERSHIP_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

/// Result of tightening: the set itself plus whether it kept an interior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SetStatus {
    Nonempty,
    /// Nonempty but without interior (e.g. `0 ≤ u ≤ 0`).
    EmptyInterior,
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tightened {
    pub set: Polytope,
    pub status: SetStatus,
}

impl Polytope {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::InvalidArgument("polytope needs at least one facet".into()));
        }
        if a.nrows() != b.len() {
            return Err(dim_err("Polytope offsets", a.nrows(), b.len()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("polytope entries must be finite".into()));
        }
        for i in 0..a.nrows() {
            if a.row(i).amax() == 0.0 {
                return Err(Error::InvalidArgument(format!("facet normal {i} is all zero")));
            }
        }
        Ok(Self { a, b })
    }

    /// Axis-aligned box `lower ≤ x ≤ upper`.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(dim_err("Polytope::from_box", lower.len(), upper.len()));
        }
        let n = lower.len();
        let mut a = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for i in 0..n {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = upper[i];
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -lower[i];
        }
        Self::new(a, b)
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn facet_count(&self) -> usize {
        self.a.nrows()
    }

    /// `A x ≤ b + tol` componentwise.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim() && self.max_violation(x) <= tol
    }

    /// `max_i (a_i·x − b_i)`; nonpositive inside.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b).max()
    }

    /// Largest `r` such that `a_i·x + r‖a_i‖ ≤ b_i` for some `x` in a large box.
    pub fn chebyshev_radius(&self, cap: f64) -> Result<f64> {
        let n = self.dim();
        let q = self.facet_count();
        let rows = q + 2 * n + 1;
        let mut a = DMatrix::zeros(rows, n + 1);
        let mut b = DVector::zeros(rows);
        for i in 0..q {
            for j in 0..n {
                a[(i, j)] = self.a[(i, j)];
            }
            a[(i, n)] = self.a.row(i).norm();
            b[i] = self.b[i];
        }
        for j in 0..n {
            a[(q + 2 * j, j)] = 1.0;
            a[(q + 2 * j + 1, j)] = -1.0;
            b[q + 2 * j] = cap;
            b[q + 2 * j + 1] = cap;
        }
        a[(rows - 1, n)] = 1.0;
        b[rows - 1] = cap;
        let mut start = DVector::zeros(n + 1);
        start[n] = -(self.b.iter().map(|v| v.abs()).fold(0.0, f64::max) + 1.0);
        let mut g = DVector::zeros(n + 1);
        g[n] = -1.0;
        let program = ConvexProgram::new(n + 1)
            .objective(DMatrix::zeros(n + 1, n + 1), g)
            .inequalities(a, b);
        let settings = SolverSettings {
            gap_tol: 1e-12,
            ..SolverSettings::default()
        };
        match program.solve_from(&settings, Some(&start)) {
            Outcome::Optimal(sol) | Outcome::Feasible(sol) => Ok(sol.y[n]),
            Outcome::Infeasible { .. } => Err(Error::Solver("Chebyshev radius program infeasible".into())),
            Outcome::Unknown { reason } => Err(Error::Solver(reason)),
        }
    }

    pub fn status(&self, tol: f64) -> Result<SetStatus> {
        let cap = 10.0 * (1.0 + self.b.amax());
        let r = self.chebyshev_radius(cap)?;
        Ok(if r > tol {
            SetStatus::Nonempty
        } else if r >= -tol {
            SetStatus::EmptyInterior
        } else {
            SetStatus::Empty
        })
    }

    /// Shrinks every offset by a per-facet margin.
    fn shrink(&self, margins: impl Iterator<Item = f64>) -> Result<Tightened> {
        let b = DVector::from_iterator(self.b.len(), self.b.iter().zip(margins).map(|(b, m)| b - m));
        let set = Polytope::new(self.a.clone(), b)?;
        let status = set.status(1e-9)?;
        Ok(Tightened { set, status })
    }

    /// Bounding box of the polytope along coordinate axes, if bounded.
    pub fn bounding_box(&self) -> Result<Vec<(f64, f64)>> {
        let n = self.dim();
        let settings = SolverSettings::default();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut bounds = [0.0; 2];
            for (k, sign) in [(0usize, 1.0), (1usize, -1.0)] {
                let mut g = DVector::zeros(n);
                g[i] = sign;
                // Cap the search region so the LP stays bounded; report unbounded if the cap binds.
                let cap = 1e6;
                let mut a = DMatrix::zeros(self.facet_count() + 2 * n, n);
                let mut b = DVector::zeros(self.facet_count() + 2 * n);
                a.view_mut((0, 0), (self.facet_count(), n)).copy_from(&self.a);
                b.rows_mut(0, self.facet_count()).copy_from(&self.b);
                for j in 0..n {
                    a[(self.facet_count() + 2 * j, j)] = 1.0;
                    b[self.facet_count() + 2 * j] = cap;
                    a[(self.facet_count() + 2 * j + 1, j)] = -1.0;
                    b[self.facet_count() + 2 * j + 1] = cap;
                }
                let program = ConvexProgram::new(n)
                    .objective(DMatrix::zeros(n, n), g)
                    .inequalities(a, b);
                let sol = program
                    .solve(&settings)
                    .optimal()
                    .ok_or_else(|| Error::Solver("bounding box LP failed".into()))?;
                if sol.y[i].abs() > 0.5 * cap {
                    return Err(Error::InvalidArgument("polytope is unbounded".into()));
                }
                bounds[k] = sol.y[i];
            }
            out.push((bounds[0].min(bounds[1]), bounds[0].max(bounds[1])));
        }
        Ok(out)
    }

    /// Euclidean projection onto the polytope.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if self.contains(x, 0.0) {
            return Ok(x.clone());
        }
        let n = self.dim();
        let program = ConvexProgram::new(n)
            .objective(DMatrix::identity(n, n) * 2.0, x * -2.0)
            .inequalities(self.a.clone(), self.b.clone());
        program
            .solve(&SolverSettings::default())
            .optimal()
            .map(|s| s.y)
            .ok_or_else(|| Error::Solver("projection onto polytope failed".into()))
    }
}

/// `X ⊖ Ω`: offsets reduced by the ellipsoid support `sqrt(aᵢᵀP⁻¹aᵢ)`.
pub fn tighten_state(poly: &Polytope, omega: &Ellipsoid) -> Result<Tightened> {
    if poly.dim() != omega.dim() {
        return Err(dim_err("tighten_state", poly.dim(), omega.dim()));
    }
    let margins: Vec<f64> = (0..poly.facet_count())
        .map(|i| omega.support(&poly.a.row(i).transpose()))
        .collect::<Result<_>>()?;
    poly.shrink(margins.into_iter())
}

/// `U ⊖ KΩ`: offsets reduced by `sqrt(aᵢᵀ K P⁻¹ Kᵀ aᵢ)`.
pub fn tighten_input(poly: &Polytope, gain: &TubeGain, omega: &Ellipsoid) -> Result<Tightened> {
    let k = gain.matrix();
    if poly.dim() != k.nrows() || k.ncols() != omega.dim() {
        return Err(dim_err(
            "tighten_input",
            format!("U dim {} / Ω dim {}", k.nrows(), k.ncols()),
            format!("{} / {}", poly.dim(), omega.dim()),
        ));
    }
    let margins: Vec<f64> = (0..poly.facet_count())
        .map(|i| omega.support(&(k.transpose() * poly.a.row(i).transpose())))
        .collect::<Result<_>>()?;
    poly.shrink(margins.into_iter())
}

/// Origin-centred ellipsoid `{e : eᵀPe ≤ 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    p: DMatrix<f64>,
    p_inv: DMatrix<f64>,
    /// Lower Cholesky factor of P.
    chol_l: DMatrix<f64>,
}

impl Ellipsoid {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        let n = p.nrows();
        if n == 0 || p.ncols() != n {
            return Err(dim_err("Ellipsoid::P", "square", format!("{}×{}", p.nrows(), p.ncols())));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("ellipsoid matrix must be finite".into()));
        }
        let asym = (&p - p.transpose()).amax();
        if asym > 1e-10 * p.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite(format!("P is not symmetric (asymmetry {asym:e})")));
        }
        let p = (&p + p.transpose()) * 0.5;
        let eig = p.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        let max = eig.eigenvalues.max();
        if !(min > 0.0) || min < max * 1e-14 {
            return Err(Error::NotPositiveDefinite(format!(
                "P has eigenvalues in [{min:e}, {max:e}]"
            )));
        }
        let chol = Cholesky::new(p.clone()).ok_or_else(|| Error::NotPositiveDefinite("Cholesky failed".into()))?;
        let p_inv = chol.inverse();
        Ok(Self {
            chol_l: chol.l(),
            p,
            p_inv,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.p_inv
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    /// `eᵀPe`.
    pub fn quadratic_form(&self, e: &DVector<f64>) -> f64 {
        (e.transpose() * &self.p * e)[0]
    }

    /// `eᵀPe ≤ 1 + tol`.
    pub fn contains(&self, e: &DVector<f64>, tol: f64) -> bool {
        e.len() == self.dim() && self.quadratic_form(e) <= 1.0 + tol
    }

    /// Support function `max{a·e : e ∈ Ω} = sqrt(aᵀP⁻¹a)`.
    pub fn support(&self, a: &DVector<f64>) -> Result<f64> {
        if a.len() != self.dim() {
            return Err(dim_err("ellipsoid_support", self.dim(), a.len()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("support direction must be finite".into()));
        }
        Ok((a.transpose() * &self.p_inv * a)[0].max(0.0).sqrt())
    }

    /// Boundary point maximizing `a·e`.
    pub fn support_point(&self, a: &DVector<f64>) -> DVector<f64> {
        let pa = &self.p_inv * a;
        let h = a.dot(&pa).max(0.0).sqrt();
        if h == 0.0 {
            DVector::zeros(self.dim())
        } else {
            pa / h
        }
    }

    /// Maps a unit vector `u` onto the boundary: `e = L⁻ᵀu` gives `eᵀPe = uᵀu`.
    pub fn from_unit(&self, u: &DVector<f64>) -> DVector<f64> {
        self.chol_l
            .transpose()
            .solve_upper_triangular(u)
            .expect("Cholesky factor is nonsingular")
    }

    /// Area `π / sqrt(det P)` for n = 2, general volume otherwise.
    pub fn volume(&self) -> f64 {
        let n = self.dim() as f64;
        let unit_ball = std::f64::consts::PI.powf(n / 2.0) / gamma_half_plus_one(self.dim());
        unit_ball / self.p.determinant().sqrt()
    }

    /// Boundary samples along `count` evenly spaced directions (n = 2 only).
    pub fn boundary_2d(&self, count: usize) -> Vec<DVector<f64>> {
        assert_eq!(self.dim(), 2, "boundary_2d needs a planar ellipsoid");
        (0..count)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                self.from_unit(&DVector::from_vec(vec![th.cos(), th.sin()]))
            })
            .collect()
    }
}

fn gamma_half_plus_one(n: usize) -> f64 {
    // Γ(n/2 + 1) via the half-integer recursion.
    let mut g = if n.is_multiple_of(2) { 1.0 } else { std::f64::consts::PI.sqrt() / 2.0 };
    let mut k = if n.is_multiple_of(2) { 1.0 } else { 1.5 };
    while k <= n as f64 / 2.0 + 1e-9 {
        g *= k;
        k += 1.0;
    }
    g
}

/// Convex hull of a finite point list.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexHull {
    vertices: Vec<DVector<f64>>,
}

/// Outcome of a hull membership query.
#[derive(Debug, Clone, PartialEq)]
pub enum HullMembership {
    /// Convex weights reproducing the point (minimum Euclidean norm among all such weights).
    Inside(DVector<f64>),
    Outside,
}

impl HullMembership {
    pub fn weights(&self) -> Option<&DVector<f64>> {
        match self {
            HullMembership::Inside(w) => Some(w),
            HullMembership::Outside => None,
        }
    }

    pub fn is_inside(&self) -> bool {
        matches!(self, HullMembership::Inside(_))
    }
}

impl VertexHull {
    /// Hull of the given points, taken as-is (no pruning).
    pub fn new(vertices: Vec<DVector<f64>>) -> Result<Self> {
        let first = vertices
            .first()
            .ok_or_else(|| Error::InvalidArgument("hull needs at least one vertex".into()))?;
        let n = first.len();
        if n == 0 {
            return Err(Error::InvalidArgument("hull vertices must have positive dimension".into()));
        }
        for v in &vertices {
            if v.len() != n {
                return Err(dim_err("VertexHull vertex", n, v.len()));
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidArgument("hull vertex entries must be finite".into()));
            }
        }
        Ok(Self { vertices })
    }

    /// Hull of the given points with redundant ones pruned.
    pub fn pruned(points: Vec<DVector<f64>>, tol: f64) -> Result<Self> {
        let hull = Self::new(points)?;
        let vertices = prune(hull.vertices, tol);
        Ok(Self { vertices })
    }

    pub fn origin(n: usize) -> Self {
        Self {
            vertices: vec![DVector::zeros(n)],
        }
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.vertices)
    }

    /// ∞-norm distance from `p` to the hull.
    pub fn distance(&self, p: &DVector<f64>) -> f64 {
        hull_distance(&self.vertices, p)
    }

    pub fn contains(&self, p: &DVector<f64>, tol: f64) -> bool {
        p.len() == self.dim() && self.distance(p) <= tol
    }

    /// Convex weights `λ ≥ 0, Σλ = 1` with `‖Σλᵢvᵢ − z‖∞ ≤ tol`, minimum-norm among those.
    pub fn membership_weights(&self, z: &DVector<f64>, tol: f64) -> Result<HullMembership> {
        if z.len() != self.dim() {
            return Err(dim_err("hull_membership_weights", self.dim(), z.len()));
        }
        let k = self.vertices.len();
        if k == 1 {
            let d = (&self.vertices[0] - z).amax();
            return Ok(if d <= tol {
                HullMembership::Inside(DVector::from_element(1, 1.0))
            } else {
                HullMembership::Outside
            });
        }
        if self.distance(z) > tol {
            return Ok(HullMembership::Outside);
        }
        let n = self.dim();
        let v = self.vertex_matrix();
        let box_tol = tol.max(1e-12);
        // Rows: Vλ − z ≤ tol, −(Vλ − z) ≤ tol, −λ ≤ 0.
        let mut a = DMatrix::zeros(2 * n + k, k);
        let mut b = DVector::zeros(2 * n + k);
        for i in 0..n {
            for j in 0..k {
                a[(i, j)] = v[(i, j)];
                a[(n + i, j)] = -v[(i, j)];
            }
            b[i] = z[i] + box_tol;
            b[n + i] = -z[i] + box_tol;
        }
        for j in 0..k {
            a[(2 * n + j, j)] = -1.0;
        }
        let program = ConvexProgram::new(k)
            .objective(DMatrix::identity(k, k) * 2.0, DVector::zeros(k))
            .equalities(DMatrix::from_element(1, k, 1.0), DVector::from_element(1, 1.0))
            .inequalities(a, b);
        let settings = SolverSettings {
            gap_tol: 1e-12,
            feasibility_tol: 1e-12,
            ..SolverSettings::default()
        };
        match program.solve(&settings) {
            Outcome::Optimal(sol) | Outcome::Feasible(sol) => {
                let mut w = sol.y.map(|x| x.max(0.0));
                let s = w.sum();
                w /= s;
                Ok(HullMembership::Inside(w))
            }
            Outcome::Infeasible { .. } => Ok(HullMembership::Outside),
            Outcome::Unknown { reason } => Err(Error::Solver(format!("hull weights: {reason}"))),
        }
    }

    /// Hull of the union with `points`, redundant vertices pruned.
    pub fn add_points(&self, points: &[DVector<f64>], tol: f64) -> Result<Self> {
        for p in points {
            if p.len() != self.dim() {
                return Err(dim_err("hull_add_points", self.dim(), p.len()));
            }
        }
        // New points already inside the current hull cannot change it.
        let fresh: Vec<DVector<f64>> = points
            .iter()
            .filter(|p| !self.contains(p, tol))
            .cloned()
            .collect();
        if fresh.is_empty() {
            return Ok(self.clone());
        }
        let mut all = self.vertices.clone();
        all.extend(fresh);
        Ok(Self {
            vertices: prune(all, tol),
        })
    }

    /// Every vertex of `other` lies in this hull.
    pub fn contains_hull(&self, other: &VertexHull, tol: f64) -> bool {
        other.vertices.iter().all(|v| self.contains(v, tol))
    }

    /// Exact polygon area for planar hulls (0 for degenerate ones).
    pub fn area_2d(&self) -> f64 {
        assert_eq!(self.dim(), 2, "area_2d needs planar vertices");
        let ring = planar_hull_ring(&self.vertices);
        if ring.len() < 3 {
            return 0.0;
        }
        let mut area = 0.0;
        for i in 0..ring.len() {
            let (x0, y0) = ring[i];
            let (x1, y1) = ring[(i + 1) % ring.len()];
            area += x0 * y1 - x1 * y0;
        }
        0.5 * area.abs()
    }

    /// Counter-clockwise boundary ring of a planar hull.
    pub fn ring_2d(&self) -> Vec<(f64, f64)> {
        planar_hull_ring(&self.vertices)
    }
}

/// Removes points lying (within `tol`) in the hull of the remaining ones.
fn prune(mut points: Vec<DVector<f64>>, tol: f64) -> Vec<DVector<f64>> {
    // Exact duplicates first.
    let mut unique: Vec<DVector<f64>> = Vec::with_capacity(points.len());
    for p in points.drain(..) {
        if !unique.iter().any(|q| (q - &p).amax() <= tol * 1e-3) {
            unique.push(p);
        }
    }
    let mut i = 0;
    while i < unique.len() && unique.len() > 1 {
        let candidate = unique[i].clone();
        let others: Vec<DVector<f64>> = unique
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, v)| v.clone())
            .collect();
        if hull_distance(&others, &candidate) <= tol {
            unique.remove(i);
        } else {
            i += 1;
        }
    }
    unique
}

/// ∞-norm distance from `p` to `conv(points)`, via the dual LP
/// `max γ s.t. cᵀ(p − sⱼ) ≥ γ ∀j, ‖c‖₁ ≤ 1`.
pub fn hull_distance(points: &[DVector<f64>], p: &DVector<f64>) -> f64 {
    let n = p.len();
    let k = points.len();
    if k == 1 {
        return (&points[0] - p).amax();
    }
    // Quick bound from the nearest point; zero if p is one of the points.
    let nearest = points.iter().map(|s| (s - p).amax()).fold(f64::INFINITY, f64::min);
    if nearest == 0.0 {
        return 0.0;
    }
    let scale = nearest.max(1e-300);
    // Variables w = (c ∈ Rⁿ, t ∈ Rⁿ, γ); distances scaled by 1/scale for conditioning.
    let dim = 2 * n + 1;
    let rows = k + 2 * n + 1;
    let mut a = DMatrix::zeros(rows, dim);
    let b = {
        let mut b = DVector::zeros(rows);
        b[rows - 1] = 1.0;
        b
    };
    for (j, s) in points.iter().enumerate() {
        // γ − cᵀ(p − s)/scale ≤ 0
        for i in 0..n {
            a[(j, i)] = -(p[i] - s[i]) / scale;
        }
        a[(j, 2 * n)] = 1.0;
    }
    for i in 0..n {
        // c_i − t_i ≤ 0, −c_i − t_i ≤ 0
        a[(k + 2 * i, i)] = 1.0;
        a[(k + 2 * i, n + i)] = -1.0;
        a[(k + 2 * i + 1, i)] = -1.0;
        a[(k + 2 * i + 1, n + i)] = -1.0;
    }
    for i in 0..n {
        a[(rows - 1, n + i)] = 1.0;
    }
    let mut start = DVector::zeros(dim);
    for i in 0..n {
        start[n + i] = 0.5 / n as f64;
    }
    start[2 * n] = -2.0;
    let mut g = DVector::zeros(dim);
    g[2 * n] = -1.0;
    let program = ConvexProgram::new(dim)
        .objective(DMatrix::zeros(dim, dim), g)
        .inequalities(a, b);
    let settings = SolverSettings {
        gap_tol: 1e-13,
        ..SolverSettings::default()
    };
    match program.solve_from(&settings, Some(&start)) {
        Outcome::Optimal(sol) => (sol.y[2 * n] * scale).max(0.0),
        // The LP is always feasible and bounded; fall back to the trivial bound.
        _ => nearest,
    }
}

/// Andrew's monotone chain on planar points (collinear points dropped).
fn planar_hull_ring(points: &[DVector<f64>]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Boundary samples of `hull ⊕ Ω` in the plane: for each direction the
/// maximizing vertex plus the ellipsoid support point.
pub fn minkowski_boundary_2d(hull: &VertexHull, omega: &Ellipsoid, count: usize) -> Vec<DVector<f64>> {
    (0..count)
        .map(|i| {
            let th = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            let d = DVector::from_vec(vec![th.cos(), th.sin()]);
            let best = hull
                .vertices()
                .iter()
                .max_by(|a, b| a.dot(&d).partial_cmp(&b.dot(&d)).expect("finite"))
                .expect("nonempty hull");
            best + omega.support_point(&d)
        })
        .collect()
}
