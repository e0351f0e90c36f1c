//! Linear system models, nominal/true/error propagation and the tube gain.

use nalgebra::{DMatrix, DVector, Schur};

use crate::error::{dim_err, Error, Result};

/// Discrete-time linear model `x+ = A x + B u`.
///
/// Used both for the belief model the certificate is computed against and for
/// the true plant in simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(dim_err("LinearModel::A", "square n×n with n ≥ 1", format!("{}×{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(dim_err("LinearModel::B", format!("{n}×m with m ≥ 1"), format!("{}×{}", b.nrows(), b.ncols())));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("model matrices must be finite".into()));
        }
        Ok(Self { a, b })
    }

    pub fn from_rows(a: &[&[f64]], b: &[&[f64]]) -> Result<Self> {
        Self::new(matrix_from_rows(a)?, matrix_from_rows(b)?)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub(crate) fn check_state(&self, context: &'static str, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(dim_err(context, self.state_dim(), x.len()));
        }
        Ok(())
    }

    pub(crate) fn check_input(&self, context: &'static str, u: &DVector<f64>) -> Result<()> {
        if u.len() != self.input_dim() {
            return Err(dim_err(context, self.input_dim(), u.len()));
        }
        Ok(())
    }

    /// `A + B K`.
    pub fn closed_loop(&self, gain: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if gain.nrows() != self.input_dim() || gain.ncols() != self.state_dim() {
            return Err(dim_err(
                "closed_loop gain",
                format!("{}×{}", self.input_dim(), self.state_dim()),
                format!("{}×{}", gain.nrows(), gain.ncols()),
            ));
        }
        Ok(&self.a + &self.b * gain)
    }

    /// Nominal successor `A z + B v`.
    pub fn step_nominal(&self, z: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state("step_nominal state", z)?;
        self.check_input("step_nominal input", v)?;
        Ok(&self.a * z + &self.b * v)
    }
}

/// Bounded additive noise on the plant, drawn uniformly per component.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantNoise {
    pub bound: DVector<f64>,
}

/// Outcome of a single true-plant step.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantStep {
    pub next_x: DVector<f64>,
    /// Disturbance relative to the belief model: `next_x - (A_model x + B_model u)`.
    pub realized_w: DVector<f64>,
}

/// Advances the true plant and reports the disturbance seen by `model`.
///
/// `noise` is an already-drawn additive term (see [`PlantNoise::sample`]).
pub fn step_plant(
    plant: &LinearModel,
    model: &LinearModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    noise: Option<&DVector<f64>>,
) -> Result<PlantStep> {
    if plant.state_dim() != model.state_dim() || plant.input_dim() != model.input_dim() {
        return Err(dim_err(
            "step_plant models",
            format!("({}, {})", plant.state_dim(), plant.input_dim()),
            format!("({}, {})", model.state_dim(), model.input_dim()),
        ));
    }
    let mut next_x = plant.step_nominal(x, u)?;
    if let Some(w) = noise {
        plant.check_state("step_plant noise", w)?;
        next_x += w;
    }
    let predicted = model.step_nominal(x, u)?;
    let realized_w = &next_x - predicted;
    Ok(PlantStep { next_x, realized_w })
}

impl PlantNoise {
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.bound.len(),
            self.bound.iter().map(|&b| if b > 0.0 { rng.gen_range(-b..=b) } else { 0.0 }),
        )
    }
}

/// Error feedback gain `K` of the auxiliary law `u = v + K (x - z)`.
///
/// Construction checks that `A + B K` is Schur stable for the paired model.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeGain {
    k: DMatrix<f64>,
    closed_loop_radius: f64,
}

impl TubeGain {
    pub fn new(model: &LinearModel, k: DMatrix<f64>) -> Result<Self> {
        let a_cl = model.closed_loop(&k)?;
        let radius = spectral_radius(&a_cl)?;
        if radius >= 1.0 {
            return Err(Error::NotSchurStable { radius });
        }
        Ok(Self {
            k,
            closed_loop_radius: radius,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn closed_loop_radius(&self) -> f64 {
        self.closed_loop_radius
    }

    /// `u = v + K (x - z)`.
    pub fn apply(&self, v: &DVector<f64>, x: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.k.nrows() {
            return Err(dim_err("apply_tube_feedback v", self.k.nrows(), v.len()));
        }
        if x.len() != self.k.ncols() || z.len() != self.k.ncols() {
            return Err(dim_err("apply_tube_feedback x/z", self.k.ncols(), format!("{}/{}", x.len(), z.len())));
        }
        Ok(v + &self.k * (x - z))
    }
}

/// Closed-loop record: `states` has one more entry than `inputs`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(x0: DVector<f64>) -> Self {
        Self {
            states: vec![x0],
            inputs: Vec::new(),
        }
    }

    pub fn push(&mut self, u: DVector<f64>, next_x: DVector<f64>) {
        self.inputs.push(u);
        self.states.push(next_x);
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Error `x(k) - z(k)` against a nominal state sequence of equal length.
    pub fn errors(&self, nominal: &[DVector<f64>]) -> Vec<DVector<f64>> {
        self.states.iter().zip(nominal).map(|(x, z)| x - z).collect()
    }
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(dim_err("spectral_radius", "square matrix", format!("{}×{}", m.nrows(), m.ncols())));
    }
    let schur = Schur::try_new(m.clone(), 1e-14, 10_000).ok_or(Error::EigenNoConvergence)?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max))
}

/// Settings of the fixed-point Riccati iteration.
#[derive(Debug, Clone, Copy)]
pub struct RiccatiSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RiccatiSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 100_000,
        }
    }
}

/// Infinite-horizon discrete LQR gain with the `u = K x` sign convention,
/// together with the Riccati solution `P`.
pub fn lqr_gain(
    model: &LinearModel,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    settings: RiccatiSettings,
) -> Result<(TubeGain, DMatrix<f64>)> {
    let n = model.state_dim();
    let m = model.input_dim();
    if q.shape() != (n, n) {
        return Err(dim_err("lqr_gain Q", format!("{n}×{n}"), format!("{}×{}", q.nrows(), q.ncols())));
    }
    if r.shape() != (m, m) {
        return Err(dim_err("lqr_gain R", format!("{m}×{m}"), format!("{}×{}", r.nrows(), r.ncols())));
    }
    let a = model.a();
    let b = model.b();
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..settings.max_iterations {
        let next = riccati_map(a, b, q, r, &p)?;
        residual = (&next - &p).abs().max() / p.abs().max().max(1.0);
        p = next;
        if residual < settings.tolerance {
            let k = feedback_from_riccati(a, b, r, &p)?;
            let gain = TubeGain::new(model, k)?;
            return Ok((gain, p));
        }
    }
    Err(Error::RiccatiDiverged {
        iterations: settings.max_iterations,
        residual,
    })
}

fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let pa = p * a;
    let pb = p * b;
    let s = r + b.transpose() * &pb;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::NotPositiveDefinite("R + BᵀPB is singular".into()))?;
    let next = q + a.transpose() * &pa - a.transpose() * &pb * s_inv * pb.transpose() * a;
    Ok((&next + next.transpose()) * 0.5)
}

fn feedback_from_riccati(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = r + b.transpose() * p * b;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::NotPositiveDefinite("R + BᵀPB is singular".into()))?;
    Ok(-(s_inv * b.transpose() * p * a))
}

/// Scaled Riccati residual `‖P − (Q + AᵀPA − AᵀPB(R+BᵀPB)⁻¹BᵀPA)‖∞ / max(1, ‖P‖∞)`.
pub fn riccati_residual(
    model: &LinearModel,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<f64> {
    let next = riccati_map(model.a(), model.b(), q, r, p)?;
    Ok((&next - p).abs().max() / p.abs().max().max(1.0))
}

pub(crate) fn matrix_from_rows(rows: &[&[f64]]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidArgument("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn true_plant() -> LinearModel {
        LinearModel::from_rows(&[&[1.0, 0.1], &[-0.3, 0.8]], &[&[0.0], &[0.1]]).unwrap()
    }

    fn approx_model() -> LinearModel {
        LinearModel::from_rows(&[&[1.0, 0.1], &[-0.23, 0.78]], &[&[0.0], &[0.1]]).unwrap()
    }

    fn reference_gain() -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 2, &[-4.12, -5.32])
    }

    #[test]
    fn nominal_step_examples() {
        let m = approx_model();
        assert_eq!(m.step_nominal(&dvector![0.0, 0.0], &dvector![0.0]).unwrap(), dvector![0.0, 0.0]);
        let p = true_plant();
        let z = p.step_nominal(&dvector![-0.7, 1.0], &dvector![0.0]).unwrap();
        assert_abs_diff_eq!(z, dvector![-0.6, 1.01], epsilon = 1e-12);
        let z = p.step_nominal(&dvector![1.0, 0.0], &dvector![2.5]).unwrap();
        assert_abs_diff_eq!(z, dvector![1.0, -0.05], epsilon = 1e-12);
    }

    #[test]
    fn nominal_step_rejects_bad_dims() {
        let m = approx_model();
        assert!(matches!(
            m.step_nominal(&dvector![0.0], &dvector![0.0]),
            Err(Error::Dimension { .. })
        ));
        assert!(m.step_nominal(&dvector![0.0, 0.0], &dvector![0.0, 1.0]).is_err());
    }

    #[test]
    fn model_rejects_non_square() {
        let a = DMatrix::zeros(2, 3);
        let b = DMatrix::zeros(2, 1);
        assert!(LinearModel::new(a, b).is_err());
    }

    #[test]
    fn plant_mismatch_examples() {
        let m = approx_model();
        let p = true_plant();
        let same = step_plant(&m, &m, &dvector![0.3, -0.2], &dvector![1.0], None).unwrap();
        assert_eq!(same.realized_w, dvector![0.0, 0.0]);
        let s = step_plant(&p, &m, &dvector![1.0, 0.0], &dvector![0.0], None).unwrap();
        assert_abs_diff_eq!(s.realized_w, dvector![0.0, -0.07], epsilon = 1e-12);
        let s = step_plant(&p, &m, &dvector![0.0, 1.0], &dvector![0.0], None).unwrap();
        assert_abs_diff_eq!(s.realized_w, dvector![0.0, 0.02], epsilon = 1e-12);
    }

    #[test]
    fn plant_noise_enters_realized_disturbance() {
        let m = approx_model();
        let noise = dvector![0.01, -0.02];
        let s = step_plant(&m, &m, &dvector![0.5, 0.5], &dvector![0.0], Some(&noise)).unwrap();
        assert_abs_diff_eq!(s.realized_w, noise, epsilon = 1e-15);
    }

    #[test]
    fn tube_feedback_examples() {
        let gain = TubeGain::new(&approx_model(), reference_gain()).unwrap();
        let z = dvector![0.2, 0.3];
        assert_eq!(gain.apply(&dvector![0.7], &z, &z).unwrap(), dvector![0.7]);
        let u = gain.apply(&dvector![0.0], &dvector![0.1, 0.0], &dvector![0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(u[0], -0.412, epsilon = 1e-12);
        let u = gain.apply(&dvector![1.0], &dvector![0.0, -0.1], &dvector![0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(u[0], 1.532, epsilon = 1e-12);
    }

    #[test]
    fn unstable_gain_rejected() {
        // The approximate model is open-loop stable (|λ| = sqrt(0.803)), so K = 0 is admissible.
        let k = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        assert!(TubeGain::new(&approx_model(), k).is_ok());
        let bad = DMatrix::from_row_slice(1, 2, &[0.0, 30.0]);
        assert!(matches!(TubeGain::new(&approx_model(), bad), Err(Error::NotSchurStable { .. })));
    }

    #[test]
    fn spectral_radius_examples() {
        assert_abs_diff_eq!(spectral_radius(&DMatrix::identity(2, 2)).unwrap(), 1.0, epsilon = 1e-12);
        let d = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -0.25]);
        assert_abs_diff_eq!(spectral_radius(&d).unwrap(), 0.5, epsilon = 1e-12);
        // True plant with the reference gain: characteristic polynomial
        // λ² − 1.268λ + (0.268 + 0.0712) has complex roots of modulus sqrt(0.3392).
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -0.712, 0.268]);
        let rho = spectral_radius(&m).unwrap();
        let disc: f64 = 1.268f64.powi(2) - 4.0 * 0.3392;
        let oracle = if disc < 0.0 {
            0.3392f64.sqrt()
        } else {
            (1.268 + disc.sqrt()) / 2.0
        };
        assert_abs_diff_eq!(rho, oracle, epsilon = 1e-10);
        assert!(rho > 0.0 && rho < 1.0);
    }

    #[test]
    fn reference_gain_radius_on_approximate_model() {
        // [[1, 0.1], [-0.642, 0.248]]: trace 1.248, det 0.248 + 0.0642.
        let gain = TubeGain::new(&approx_model(), reference_gain()).unwrap();
        let tr: f64 = 1.248;
        let det: f64 = 0.3122;
        let oracle = (tr + (tr * tr - 4.0 * det).sqrt()) / 2.0;
        assert_abs_diff_eq!(gain.closed_loop_radius(), oracle, epsilon = 1e-10);
        assert_abs_diff_eq!(oracle, 0.902, epsilon = 1e-3);
    }

    #[test]
    fn lqr_scalar_examples() {
        let one = DMatrix::identity(1, 1);
        let deadbeat = LinearModel::new(DMatrix::zeros(1, 1), one.clone()).unwrap();
        let (g, p) = lqr_gain(&deadbeat, &one, &one, RiccatiSettings::default()).unwrap();
        assert_abs_diff_eq!(g.matrix()[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-12);

        let integrator = LinearModel::new(one.clone(), one.clone()).unwrap();
        let (g, p) = lqr_gain(&integrator, &one, &one, RiccatiSettings::default()).unwrap();
        // Bisection on p = 1 + p − p²/(1+p), i.e. p² − p − 1 = 0.
        let (mut lo, mut hi) = (1.0f64, 3.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid / (1.0 + mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_abs_diff_eq!(p[0], lo, epsilon = 1e-9);
        assert_abs_diff_eq!(g.matrix()[0], -lo / (1.0 + lo), epsilon = 1e-9);
        assert_abs_diff_eq!(g.matrix()[0], -0.618, epsilon = 1e-3);
    }

    #[test]
    fn lqr_on_approximate_model_is_stabilizing() {
        let model = approx_model();
        let q = DMatrix::from_diagonal(&dvector![100.0, 10.0]);
        let r = DMatrix::identity(1, 1);
        let (gain, p) = lqr_gain(&model, &q, &r, RiccatiSettings::default()).unwrap();
        let radius = spectral_radius(&model.closed_loop(gain.matrix()).unwrap()).unwrap();
        assert!(radius < 1.0);
        assert!(riccati_residual(&model, &q, &r, &p).unwrap() < 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn nominal_step_is_affine(z1 in proptest::collection::vec(-1.0f64..1.0, 2),
                                  z2 in proptest::collection::vec(-1.0f64..1.0, 2),
                                  v1 in -1.0f64..1.0, v2 in -1.0f64..1.0) {
            let m = approx_model();
            let z1 = DVector::from_vec(z1);
            let z2 = DVector::from_vec(z2);
            let lhs = m.step_nominal(&(&z1 + &z2), &dvector![v1 + v2]).unwrap();
            let rhs = m.step_nominal(&z1, &dvector![v1]).unwrap()
                + m.step_nominal(&z2, &dvector![v2]).unwrap()
                - m.step_nominal(&dvector![0.0, 0.0], &dvector![0.0]).unwrap();
            proptest::prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn plant_step_is_deterministic(x in proptest::collection::vec(-1.0f64..1.0, 2), u in -2.5f64..2.5) {
            let x = DVector::from_vec(x);
            let a = step_plant(&true_plant(), &approx_model(), &x, &dvector![u], None).unwrap();
            let b = step_plant(&true_plant(), &approx_model(), &x, &dvector![u], None).unwrap();
            proptest::prop_assert_eq!(a, b);
        }
    }
}
