//! Per-time matrix bundles used by every kernel evaluation, and tables of
//! them on fixed quadrature nodes so that sweeps over many points share the
//! matrix work.

use rayon::prelude::*;

use crate::error::{OuError, Result};
use crate::linalg::{matrix_exp, op_norm, spd_inverse_logdet, symmetrize, Mat};
use crate::model::OuModel;
use crate::quadrature::Rule;

/// Every matrix a kernel evaluation at time `t` needs.
#[derive(Debug, Clone)]
pub struct TimeFrame {
    pub t: f64,
    pub exp_tb: Mat,
    pub qt: Mat,
    pub qt_inv: Mat,
    pub log_det_qt: f64,
    /// `½(log det Q_∞ − log det Q_t)`
    pub log_ratio: f64,
    /// `Q_t^{-1} − Q_∞^{-1}` assembled as `Q_t^{-1} e^{tB} Q_∞ e^{tBᵀ} Q_∞^{-1}`.
    pub delta: Mat,
    /// `Q_t^{-1} e^{tB}`
    pub g: Mat,
    /// `e^{tB} Q e^{tBᵀ}`
    pub w_t: Mat,
    /// `Q_t^{-1} W_t Q_t^{-1}`
    pub h: Mat,
    /// `tr(Q_t^{-1} W_t)`
    pub trace_term: f64,
    /// `Q_t^{-1} B e^{tB}`
    pub qbe: Mat,
    /// `H e^{tB}`
    pub he: Mat,
    /// `D_t`, absent when `|t|‖B‖ > 700`.
    pub d_t: Option<Mat>,
    /// `Q_∞ Bᵀ Q_∞^{-1} D_t`
    pub md_t: Option<Mat>,
    pub d_minus_t: Mat,
    /// `Q_∞^{-1} + e^{tBᵀ} Q_t^{-1} e^{tB}`: the large-time exponent matrix in `z = D_{-t}u − x`.
    pub large_form: Mat,
    /// `e^{tBᵀ} H e^{tB}`
    pub z_h: Mat,
    /// `e^{tBᵀ} Q_t^{-1} B e^{tB}`
    pub z_qbe: Mat,
    /// `e^{tBᵀ} Q_t^{-1} e^{tB} Q_∞ Bᵀ Q_∞^{-1}`
    pub z_gm: Mat,
    /// `Bᵀ Q_∞^{-1}`
    pub bt_qinf_inv: Mat,
}

/// `Q_t` from the block exponential `exp(t [[B, Q], [0, −Bᵀ]])`.
fn gramian_block_exp(model: &OuModel, t: f64) -> Result<(Mat, Mat)> {
    let n = model.n;
    let mut big = Mat::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(&model.b);
    big.view_mut((0, n), (n, n)).copy_from(&model.q);
    big.view_mut((n, n), (n, n)).copy_from(&(-model.b.transpose()));
    let e = matrix_exp(&big, t)?;
    let e11 = e.view((0, 0), (n, n)).into_owned();
    let g12 = e.view((0, n), (n, n)).into_owned();
    Ok((symmetrize(&(&g12 * e11.transpose())), e11))
}

impl TimeFrame {
    pub fn new(model: &OuModel, t: f64) -> Result<TimeFrame> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(OuError::InvalidConfig(format!("time must be positive and finite, got {t}")));
        }
        let saturated = t > model.saturation_time();
        let (qt, exp_tb) = if t <= 1.0 || t * model.hurwitz_margin <= 1.0 {
            gramian_block_exp(model, t)?
        } else {
            let e = model.exp_b(t)?;
            let q = if saturated {
                model.q_inf.clone()
            } else {
                symmetrize(&(&model.q_inf - &e * &model.q_inf * e.transpose()))
            };
            (q, e)
        };
        let (qt_inv, log_det_qt) = spd_inverse_logdet(&qt)
            .ok_or_else(|| OuError::NotSpd(format!("Q_t lost definiteness at t = {t}")))?;
        let tail = &exp_tb * &model.q_inf * exp_tb.transpose();
        let delta = symmetrize(&(&qt_inv * &tail * &model.q_inf_inv));
        let g = &qt_inv * &exp_tb;
        let w_t = &exp_tb * &model.q * exp_tb.transpose();
        let h = symmetrize(&(&qt_inv * &w_t * &qt_inv));
        let trace_term = (&qt_inv * &w_t).trace();
        let qbe = &qt_inv * &model.b * &exp_tb;
        let he = &h * &exp_tb;
        let (d_t, md_t) = match crate::model::d_matrix(model, t) {
            Ok(d) => {
                let md = &model.drift_conj * &d;
                (Some(d), Some(md))
            }
            Err(_) => (None, None),
        };
        let d_minus_t = &model.q_inf * matrix_exp(&model.b.transpose(), t)? * &model.q_inf_inv;
        let et = exp_tb.transpose();
        let large_form = symmetrize(&(&model.q_inf_inv + &et * &g));
        let z_h = symmetrize(&(&et * &h * &exp_tb));
        let z_qbe = &et * &qbe;
        let z_gm = &et * &g * &model.drift_conj;
        Ok(TimeFrame {
            t,
            log_ratio: 0.5 * (model.log_det_q_inf - log_det_qt),
            exp_tb,
            qt,
            qt_inv,
            log_det_qt,
            delta,
            g,
            w_t,
            h,
            trace_term,
            qbe,
            he,
            d_t,
            md_t,
            d_minus_t,
            large_form,
            z_h,
            z_qbe,
            z_gm,
            bt_qinf_inv: model.b.transpose() * &model.q_inf_inv,
        })
    }

    pub fn is_small_time(&self) -> bool {
        self.t <= 1.0
    }

    pub fn condition_hint(&self) -> f64 {
        op_norm(&self.qt_inv) * op_norm(&self.qt)
    }
}

/// Frames on the nodes of a fixed rule, built in parallel.
#[derive(Debug, Clone)]
pub struct FrameTable {
    pub frames: Vec<TimeFrame>,
    pub weights: Vec<f64>,
}

impl FrameTable {
    pub fn from_rule(model: &OuModel, rule: &Rule) -> Result<FrameTable> {
        let frames = rule
            .nodes
            .par_iter()
            .map(|&t| TimeFrame::new(model, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(FrameTable {
            frames,
            weights: rule.weights.clone(),
        })
    }

    pub fn from_times(model: &OuModel, times: &[f64]) -> Result<FrameTable> {
        let rule = Rule {
            nodes: times.to_vec(),
            weights: vec![0.0; times.len()],
        };
        FrameTable::from_rule(model, &rule)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, gramian_qt};
    use crate::quadrature::QuadratureSpec;

    fn nonnormal() -> OuModel {
        build_model(
            3,
            &[vec![-1.0, 2.0, 0.3], vec![0.0, -0.5, 1.0], vec![0.2, -0.4, -2.0]],
            &[vec![2.0, 0.3, 0.1], vec![0.3, 1.0, -0.2], vec![0.1, -0.2, 1.5]],
        )
        .unwrap()
    }

    #[test]
    fn frame_gramian_matches_quadrature() {
        let m = nonnormal();
        for t in [1e-9, 1e-4, 0.3, 1.0, 1.7, 6.0, 40.0] {
            let f = TimeFrame::new(&m, t).unwrap();
            let q = gramian_qt(&m, t, &QuadratureSpec::default()).unwrap();
            assert!((&f.qt - &q).amax() <= 1e-11 * q.amax(), "t = {t}");
        }
    }

    #[test]
    fn delta_matches_direct_difference_at_moderate_time() {
        let m = nonnormal();
        let f = TimeFrame::new(&m, 0.4).unwrap();
        let direct = &f.qt_inv - &m.q_inf_inv;
        assert!((&f.delta - &direct).amax() <= 1e-10 * direct.amax());
    }

    #[test]
    fn large_form_matches_small_form() {
        // ⟨Δ D_t z, D_t z⟩ = zᵀ L z
        let m = nonnormal();
        let f = TimeFrame::new(&m, 0.8).unwrap();
        let d = f.d_t.as_ref().unwrap();
        let a = d.transpose() * &f.delta * d;
        assert!((symmetrize(&a) - &f.large_form).amax() <= 1e-10 * f.large_form.amax());
    }

    #[test]
    fn rejects_nonpositive_time() {
        assert!(TimeFrame::new(&nonnormal(), 0.0).is_err());
    }
}
