//! Oracles shared by the integration tests. Written against plain arrays so
//! they do not reuse the library's linear algebra.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

pub const A_TRUE: [[f64; 2]; 2] = [[1.0, 0.1], [-0.3, 0.8]];
pub const A_MODEL: [[f64; 2]; 2] = [[1.0, 0.1], [-0.23, 0.78]];
pub const B: [f64; 2] = [0.0, 0.1];
pub const K: [f64; 2] = [-4.12, -5.32];
pub const P_REFERENCE: [[f64; 2]; 2] = [[53.95, 11.47], [11.47, 14.55]];
pub const X_LO: [f64; 2] = [-1.0, -0.4];
pub const X_HI: [f64; 2] = [1.0, 1.0];
pub const U_MAX: f64 = 2.5;

pub fn config_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn learning_input(k: usize) -> f64 {
    let k = k as f64;
    2.0 * (0.01 * std::f64::consts::PI * k).sin() + 0.5 * (0.12 * std::f64::consts::PI * k).sin()
}

pub fn closed_loop_model() -> [[f64; 2]; 2] {
    let mut a = A_MODEL;
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += B[i] * K[j];
        }
    }
    a
}

pub fn mat_vec(a: &[[f64; 2]; 2], x: [f64; 2]) -> [f64; 2] {
    [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
}

pub fn quad(p: &[[f64; 2]; 2], e: [f64; 2]) -> f64 {
    p[0][0] * e[0] * e[0] + 2.0 * p[0][1] * e[0] * e[1] + p[1][1] * e[1] * e[1]
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>() + off;
        if off <= 1e-32 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Largest eigenvalue of the 3×3 invariance matrix
/// `[[AᵀPA − τP, AᵀPw], [wᵀPA, wᵀPw + τ − 1]]`, assembled from scratch.
pub fn invariance_residual(p: &[[f64; 2]; 2], tau: f64, a: &[[f64; 2]; 2], w: [f64; 2]) -> f64 {
    let mut pa = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            pa[i][j] = (0..2).map(|k| p[i][k] * a[k][j]).sum();
        }
    }
    let mut m = vec![vec![0.0; 3]; 3];
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = (0..2).map(|k| a[k][i] * pa[k][j]).sum::<f64>() - tau * p[i][j];
        }
    }
    let pw = mat_vec(p, w);
    for i in 0..2 {
        let c: f64 = (0..2).map(|k| a[k][i] * pw[k]).sum();
        m[i][2] = c;
        m[2][i] = c;
    }
    m[2][2] = w[0] * pw[0] + w[1] * pw[1] + tau - 1.0;
    jacobi_eigenvalues(m).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Edges `(i, j)` of the planar hull: every other point lies weakly left of `i → j`.
pub fn hull_facets(points: &[[f64; 2]]) -> Vec<(usize, usize)> {
    let mut facets = Vec::new();
    for i in 0..points.len() {
        for j in 0..points.len() {
            if i == j {
                continue;
            }
            let (a, b) = (points[i], points[j]);
            let left = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            if points.iter().all(|&p| left(p) >= -1e-12) && points.iter().any(|&p| left(p) > 1e-12) {
                facets.push((i, j));
            }
        }
    }
    facets
}

/// Signed distance-like margin of `p` for the facet list (positive inside).
pub fn facet_margin(points: &[[f64; 2]], facets: &[(usize, usize)], p: [f64; 2]) -> f64 {
    facets
        .iter()
        .map(|&(i, j)| {
            let (a, b) = (points[i], points[j]);
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            ((b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])) / len
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn binomial(n: usize, k: usize) -> BigInt {
    let mut c = BigInt::one();
    for i in 0..k {
        c = c * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    c
}

/// `1 − Σ_{i<s} C(n,i) εⁱ(1−ε)^{n−i}` in exact rational arithmetic.
pub fn exact_confidence(n: usize, s: usize, eps: &BigRational) -> BigRational {
    let one = BigRational::one();
    let q = &one - eps;
    let mut tail = BigRational::zero();
    for i in 0..s.min(n + 1) {
        let term = BigRational::from_integer(binomial(n, i)) * pow(eps, i) * pow(&q, n - i);
        tail += term;
    }
    one - tail
}

fn pow(x: &BigRational, k: usize) -> BigRational {
    let mut acc = BigRational::one();
    let mut base = x.clone();
    let mut k = k;
    while k > 0 {
        if k & 1 == 1 {
            acc *= &base;
        }
        base = &base * &base;
        k >>= 1;
    }
    acc
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    // Scale to keep 60 significant bits before converting.
    let num = r.numer();
    let den = r.denom();
    let shift = num.bits() as i64 - den.bits() as i64 - 60;
    let (n, d) = if shift > 0 {
        (num.clone(), den.clone() << shift as usize)
    } else {
        (num.clone() << (-shift) as usize, den.clone())
    };
    (n / d).to_f64().unwrap() * 2f64.powi(shift as i32)
}

/// Prints one acceptance line and returns the verdict.
pub fn report(id: &str, pass: bool, detail: impl std::fmt::Display) -> bool {
    println!("[{}] criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}
