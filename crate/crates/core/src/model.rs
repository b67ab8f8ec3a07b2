//! The Ornstein–Uhlenbeck model `(B, Q)` and its time-dependent matrix
//! families: `e^{tB}`, the gramians `Q_t` and `Q_∞`, and the group `D_t`.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OuError, Result};
use crate::frame::TimeFrame;
use crate::linalg::{
    matrix_exp, min_sym_eigenvalue, op_norm, solve_lyapunov, spd_inverse_logdet, sym_sqrt, symmetrize, Mat,
};
use crate::quadrature::{integrate, QuadratureSpec};
use crate::report::{BoundFit, IdentityResidual};
use crate::seeded_rng;

pub const MAX_DIM: usize = 16;
const HURWITZ_THRESHOLD: f64 = 1e-10;

/// JSON model description: row-major `B` and `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n: usize,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
}

impl ModelConfig {
    pub fn build(&self) -> Result<OuModel> {
        build_model(self.n, &self.b, &self.q)
    }

    pub fn from_json(text: &str) -> Result<ModelConfig> {
        Ok(serde_json::from_str(text)?)
    }
}

/// A validated pair (B Hurwitz, Q symmetric positive definite) with the
/// derived invariant covariance. Immutable after construction.
#[derive(Debug, Clone)]
pub struct OuModel {
    pub n: usize,
    pub b: Mat,
    pub q: Mat,
    pub q_inf: Mat,
    pub q_inf_inv: Mat,
    pub det_q_inf: f64,
    pub log_det_q_inf: f64,
    pub eig_b: Vec<Complex64>,
    pub hurwitz_margin: f64,
    /// `Q_∞^{1/2}` (symmetric root), used by the sampler and polar geometry.
    pub q_inf_sqrt: Mat,
    /// `Q_∞ Bᵀ Q_∞^{-1}`, the generator of `D_{-t}`.
    pub drift_conj: Mat,
}

fn rows_to_mat(n: usize, rows: &[Vec<f64>], name: &str) -> Result<Mat> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(OuError::DimensionMismatch(format!("{name} must be {n}x{n}")));
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(OuError::InvalidConfig(format!("{name} has non-finite entries")));
    }
    Ok(Mat::from_row_slice(n, n, &flat))
}

pub fn build_model(n: usize, b: &[Vec<f64>], q: &[Vec<f64>]) -> Result<OuModel> {
    let b = rows_to_mat(n, b, "B")?;
    let q = rows_to_mat(n, q, "Q")?;
    OuModel::new(b, q)
}

impl OuModel {
    pub fn new(b: Mat, q: Mat) -> Result<OuModel> {
        let n = b.nrows();
        if n == 0 || n > MAX_DIM {
            return Err(OuError::DimensionMismatch(format!("dimension {n} outside 1..={MAX_DIM}")));
        }
        if !b.is_square() || q.nrows() != n || q.ncols() != n {
            return Err(OuError::DimensionMismatch("B and Q must both be n x n".into()));
        }
        if b.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(OuError::InvalidConfig("non-finite matrix entries".into()));
        }
        let asym = (&q - q.transpose()).amax();
        if asym > 1e-12 * q.amax().max(1e-300) {
            return Err(OuError::NotSpd(format!("asymmetry {asym:e}")));
        }
        let q = symmetrize(&q);
        let qmin = min_sym_eigenvalue(&q);
        if !(qmin > 0.0) {
            return Err(OuError::NotSpd(format!("smallest eigenvalue {qmin:e}")));
        }
        let eig_b: Vec<Complex64> = b.clone().complex_eigenvalues().iter().cloned().collect();
        let hurwitz_margin = -eig_b.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        if !(hurwitz_margin > HURWITZ_THRESHOLD) {
            return Err(OuError::NotHurwitz { margin: hurwitz_margin });
        }
        let q_inf = solve_lyapunov(&b, &q)?;
        let (q_inf_inv, log_det_q_inf) = spd_inverse_logdet(&q_inf)
            .ok_or_else(|| OuError::NotSpd("Lyapunov solution is not positive definite".into()))?;
        let drift_conj = &q_inf * b.transpose() * &q_inf_inv;
        Ok(OuModel {
            n,
            q_inf_sqrt: sym_sqrt(&q_inf),
            det_q_inf: log_det_q_inf.exp(),
            b,
            q,
            q_inf,
            q_inf_inv,
            log_det_q_inf,
            eig_b,
            hurwitz_margin,
            drift_conj,
        })
    }

    pub fn config(&self) -> ModelConfig {
        let rows = |m: &Mat| (0..self.n).map(|i| m.row(i).iter().cloned().collect()).collect();
        ModelConfig {
            n: self.n,
            b: rows(&self.b),
            q: rows(&self.q),
        }
    }

    /// `‖B Q_∞ + Q_∞ Bᵀ + Q‖ / ‖Q‖`.
    pub fn lyapunov_residual(&self) -> f64 {
        let r = &self.b * &self.q_inf + &self.q_inf * self.b.transpose() + &self.q;
        op_norm(&r) / op_norm(&self.q)
    }

    pub fn exp_b(&self, t: f64) -> Result<Mat> {
        matrix_exp(&self.b, t)
    }

    /// Time beyond which `Q_t` equals `Q_∞` to double precision.
    pub fn saturation_time(&self) -> f64 {
        50.0 / self.hurwitz_margin
    }

    pub fn standard(n: usize) -> OuModel {
        OuModel::new(Mat::identity(n, n).scale(-1.0), Mat::identity(n, n).scale(2.0)).expect("standard model")
    }
}

/// `Q_t = ∫₀ᵗ e^{sB} Q e^{sBᵀ} ds` by adaptive Gauss–Kronrod integration of
/// the gramian ODE right-hand side.
pub fn gramian_qt(model: &OuModel, t: f64, spec: &QuadratureSpec) -> Result<Mat> {
    spec.validate()?;
    if !(t > 0.0) {
        return Err(OuError::InvalidConfig(format!("gramian needs t > 0, got {t}")));
    }
    if t > model.saturation_time() {
        return Ok(model.q_inf.clone());
    }
    let integrand = |s: f64| -> Mat {
        let e = matrix_exp(&model.b, s).expect("bounded exponent");
        &e * &model.q * e.transpose()
    };
    // unit panels so the first pass resolves the decay scale
    let panels = (t * model.hurwitz_margin.max(1.0)).ceil().clamp(1.0, 256.0) as usize;
    let pts: Vec<f64> = (0..=panels).map(|i| t * i as f64 / panels as f64).collect();
    let spec = QuadratureSpec {
        max_subdivisions: spec.max_subdivisions.max(panels + 8),
        ..*spec
    };
    let r = crate::quadrature::integrate_points(integrand, &pts, &spec)?;
    Ok(symmetrize(&r.value))
}

/// `D_t = Q_∞ e^{-tBᵀ} Q_∞^{-1}`.
pub fn d_matrix(model: &OuModel, t: f64) -> Result<Mat> {
    if !t.is_finite() || t.abs() * op_norm(&model.b) > 700.0 {
        return Err(OuError::Overflow(format!("D_t requested at t = {t}")));
    }
    let e = matrix_exp(&model.b.transpose(), -t)?;
    Ok(&model.q_inf * e * &model.q_inf_inv)
}

/// Residuals of the two representations of `D_t`:
/// `D_t = (Q_t^{-1} − Q_∞^{-1})^{-1} Q_t^{-1} e^{tB}` and
/// `D_t = e^{tB} + Q_t e^{-tBᵀ} Q_∞^{-1}`.
///
/// `Q_t` comes from gramian quadrature and `D_t` from the Lyapunov solution.
/// The first identity is checked multiplied through by
/// `Q_t^{-1} − Q_∞^{-1} = Q_t^{-1} (∫_t^∞ e^{sB} Q e^{sBᵀ} ds) Q_∞^{-1}`, with the
/// tail integral also from quadrature, so that no difference of nearly equal
/// inverses is formed at large `t`. Its residual is normalised by
/// `‖Q_t^{-1} − Q_∞^{-1}‖ ‖D_t‖`; the second by `‖D_t‖`.
pub fn qt_identities_check(model: &OuModel, t: f64) -> Result<Vec<IdentityResidual>> {
    let spec = QuadratureSpec::default();
    let qt = gramian_qt(model, t, &spec)?;
    let (qt_inv, _) = spd_inverse_logdet(&qt).ok_or_else(|| OuError::NotSpd("Q_t".into()))?;
    let e = model.exp_b(t)?;
    let d = d_matrix(model, t)?;
    let horizon = model.saturation_time();
    let tail_core = integrate(
        |s: f64| -> Mat {
            let es = matrix_exp(&model.b, s).expect("bounded exponent");
            &es * &model.q * es.transpose()
        },
        0.0,
        horizon,
        &QuadratureSpec {
            max_subdivisions: 2000,
            ..spec
        },
    )?
    .value;
    let tail = &e * tail_core * e.transpose();
    let delta = &qt_inv * tail * &model.q_inf_inv;
    let lhs = &delta * &d;
    let rhs = &qt_inv * &e;
    // backward-error normalisation of a product: the factors span e^{±t‖B‖}
    let r1 = op_norm(&(&lhs - &rhs)) / (op_norm(&delta) * op_norm(&d));
    let rhs2 = &e + &qt * matrix_exp(&model.b.transpose(), -t)? * &model.q_inf_inv;
    let r2 = op_norm(&(&d - &rhs2)) / op_norm(&d);
    Ok(vec![
        IdentityResidual {
            identity: "inverse_difference".into(),
            t,
            residual: r1,
        },
        IdentityResidual {
            identity: "exp_plus_gramian".into(),
            t,
            residual: r2,
        },
    ])
}

/// Fitted constants for the growth and decay estimates of the matrix families.
///
/// Rates (`ln|D_t v| / t`, `−ln|e^{tB} v| / t`, `ln|e^{−tB} v| / t`) are fitted
/// for `t ≥ 1`, where the implicit multiplicative constants are absorbed.
pub fn matrix_bound_fit(model: &OuModel, t_grid: &[f64], v_samples: usize, seed: u64) -> Result<Vec<BoundFit>> {
    if v_samples < 100 || t_grid.iter().any(|&t| !(t > 0.0 && t <= 50.0)) {
        return Err(OuError::InvalidConfig("t_grid must lie in (0, 50] and v_samples >= 100".into()));
    }
    let n = model.n;
    let mut rng = seeded_rng(seed, 0);
    let vs: Vec<DVector<f64>> = (0..v_samples)
        .map(|_| {
            let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = v.norm();
            v / norm
        })
        .collect();
    let (mut d_rate, mut e_rate, mut einv_rate) = (Vec::new(), Vec::new(), Vec::new());
    let (mut qinv, mut delta) = (Vec::new(), Vec::new());
    for &t in t_grid {
        let frame = TimeFrame::new(model, t)?;
        qinv.push(op_norm(&frame.qt_inv) * t.min(1.0));
        delta.push(t * op_norm(&frame.delta) * (model.hurwitz_margin * t).exp());
        if t < 1.0 {
            continue;
        }
        let d = d_matrix(model, t)?;
        let einv = model.exp_b(-t)?;
        for v in &vs {
            d_rate.push((&d * v).norm().ln() / t);
            e_rate.push(-(&frame.exp_tb * v).norm().ln() / t);
            einv_rate.push((&einv * v).norm().ln() / t);
        }
    }
    Ok(vec![
        BoundFit::from_ratios("D_t_growth_rate", &d_rate),
        BoundFit::from_ratios("exp_tB_decay_rate", &e_rate),
        BoundFit::from_ratios("exp_minus_tB_growth_rate", &einv_rate),
        BoundFit::from_ratios("Qt_inv_norm_times_min_1_t", &qinv),
        BoundFit::upper("Qt_inv_minus_Qinf_inv_times_t_exp_ct", &delta),
    ])
}

/// Fits the constants in `c|t||x| ≤ |x − D_t x| ≤ C|t||x|` for `0 < |t| ≤ 1`.
pub fn group_difference_fit(model: &OuModel, samples: usize, seed: u64) -> Result<BoundFit> {
    let n = model.n;
    let mut rng = seeded_rng(seed, 1);
    let mut ratios = Vec::with_capacity(samples);
    for _ in 0..samples {
        let t: f64 = rng.random_range(-1.0..1.0);
        if t == 0.0 {
            continue;
        }
        let x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let d = d_matrix(model, t)?;
        ratios.push((&x - &d * &x).norm() / (t.abs() * x.norm()));
    }
    Ok(BoundFit::from_ratios("group_difference", &ratios))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar() -> OuModel {
        build_model(1, &[vec![-1.0]], &[vec![2.0]]).unwrap()
    }

    fn jordan() -> OuModel {
        build_model(2, &[vec![-1.0, 1.0], vec![0.0, -1.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    pub(crate) fn random3() -> OuModel {
        build_model(
            3,
            &[vec![-1.0, 2.0, 0.3], vec![0.0, -0.5, 1.0], vec![0.2, -0.4, -2.0]],
            &[vec![2.0, 0.3, 0.1], vec![0.3, 1.0, -0.2], vec![0.1, -0.2, 1.5]],
        )
        .unwrap()
    }

    #[test]
    fn scalar_model_invariant_covariance() {
        let m = scalar();
        assert!((m.q_inf[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((m.hurwitz_margin - 1.0).abs() < 1e-14);
    }

    #[test]
    fn standard_model_is_identity_covariance() {
        let m = OuModel::standard(2);
        assert!((&m.q_inf - Mat::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            build_model(1, &[vec![1.0]], &[vec![1.0]]),
            Err(OuError::NotHurwitz { .. })
        ));
        assert!(matches!(
            build_model(2, &[vec![-1.0, 0.0], vec![0.0, -1.0]], &[vec![1.0, 2.0], vec![2.0, 1.0]]),
            Err(OuError::NotSpd(_))
        ));
        assert!(matches!(
            build_model(2, &[vec![-1.0]], &[vec![1.0]]),
            Err(OuError::DimensionMismatch(_))
        ));
        // purely imaginary pair
        assert!(matches!(
            build_model(2, &[vec![0.0, 1.0], vec![-1.0, 0.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]]),
            Err(OuError::NotHurwitz { .. })
        ));
    }

    #[test]
    fn lyapunov_and_inverse_residuals() {
        for m in [scalar(), jordan(), random3()] {
            assert!(m.lyapunov_residual() <= 1e-12);
            let id = &m.q_inf_inv * &m.q_inf;
            assert!((id - Mat::identity(m.n, m.n)).amax() <= 1e-12);
        }
    }

    #[test]
    fn scalar_gramian() {
        let m = scalar();
        for t in [1e-3, 0.5, 1.0, 7.0] {
            let q = gramian_qt(&m, t, &QuadratureSpec::default()).unwrap();
            assert!((q[(0, 0)] - (1.0 - (-2.0 * t).exp())).abs() < 1e-13);
        }
        let q = gramian_qt(&m, 60.0, &QuadratureSpec::default()).unwrap();
        assert!((q[(0, 0)] - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn gramian_at_tiny_time() {
        let m = random3();
        let q = gramian_qt(&m, 1e-12, &QuadratureSpec::default()).unwrap();
        assert!(q.amax() <= 1e-11 * op_norm(&m.q));
    }

    #[test]
    fn gramian_matches_simpson() {
        let m = jordan();
        let nodes = 100_000;
        let h = 1.0 / nodes as f64;
        let mut acc = Mat::zeros(2, 2);
        for i in 0..=nodes {
            let s = i as f64 * h;
            let w = if i == 0 || i == nodes {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            // closed form e^{sB} = e^{-s}(I + sN)
            let e = Mat::from_row_slice(2, 2, &[1.0, s, 0.0, 1.0]).scale((-s).exp());
            acc += (&e * e.transpose()).scale(w);
        }
        acc = acc.scale(h / 3.0);
        let q = gramian_qt(&m, 1.0, &QuadratureSpec::default()).unwrap();
        assert!((q - acc).amax() < 1e-9);
    }

    #[test]
    fn d_matrix_cases() {
        let m = OuModel::standard(2);
        let d = d_matrix(&m, 0.7).unwrap();
        assert!((d - Mat::identity(2, 2).scale(0.7f64.exp())).amax() < 1e-14);
        let r = random3();
        assert!((d_matrix(&r, 0.0).unwrap() - Mat::identity(3, 3)).amax() < 1e-15);
        let lhs = d_matrix(&r, 0.3).unwrap() * d_matrix(&r, 0.5).unwrap();
        let rhs = d_matrix(&r, 0.8).unwrap();
        assert!((lhs - &rhs).amax() <= 1e-11 * rhs.amax());
        assert!(matches!(d_matrix(&m, 1e4), Err(OuError::Overflow(_))));
    }

    #[test]
    fn identities_hold() {
        let worst = |m: &OuModel, t: f64| {
            qt_identities_check(m, t)
                .unwrap()
                .iter()
                .map(|r| r.residual)
                .fold(0.0, f64::max)
        };
        assert!(worst(&scalar(), 1.0) <= 1e-10);
        assert!(worst(&random3(), 0.01) <= 1e-8);
        let r = random3();
        assert!(worst(&r, 30.0 / r.hurwitz_margin) <= 1e-6);
    }

    #[test]
    fn bound_fit_standard_model() {
        let m = OuModel::standard(2);
        let grid: Vec<f64> = (1..=40).map(|i| i as f64 * 0.5).collect();
        let fits = matrix_bound_fit(&m, &grid, 100, 3).unwrap();
        let d = &fits[0];
        assert!((d.c - 1.0).abs() < 1e-12 && (d.big_c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvector_decay() {
        let m = jordan();
        let v = DVector::from_vec(vec![1.0, 0.0]);
        for t in [1.0, 5.0, 20.0] {
            let e = m.exp_b(t).unwrap();
            assert!(((&e * &v).norm() - (-t).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn group_difference_ratio_bounded() {
        let fit = group_difference_fit(&random3(), 2000, 5).unwrap();
        assert!(fit.c > 0.0 && fit.big_c.is_finite());
    }
}
