//! The Mehler kernel `K_t(x, u)` with respect to `γ_∞`, its cancelled form
//! `𝒦_t = e^{-R(x)} K_t`, the factor `N_t` with `∂_t K_t = K_t N_t`, and the
//! spatial derivative factors of `𝒦_t`.
//!
//! Two algebraically equal representations are used: for `t ≤ 1` the
//! exponent is built from `w = u − D_t x`, for `t > 1` from
//! `z = D_{-t}u − x` (note `w = D_t z`).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OuError, Result};
use crate::frame::TimeFrame;
use crate::geometry::quadratic_form_r;
use crate::linalg::{dot, matvec, matvec_t, norm, quad_form, Mat};
use crate::model::{OuModel, MAX_DIM};
use crate::report::BoundFit;
use crate::seeded_rng;

/// Largest admissible `log K` before reporting overflow.
pub const LOG_OVERFLOW: f64 = 700.0;

type Buf = [f64; MAX_DIM];

fn check_points(model: &OuModel, x: &[f64], u: &[f64]) -> Result<()> {
    if x.len() != model.n || u.len() != model.n {
        return Err(OuError::DimensionMismatch(format!(
            "points must have dimension {}, got {} and {}",
            model.n,
            x.len(),
            u.len()
        )));
    }
    Ok(())
}

fn sub(a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..out.len() {
        out[i] = a[i] - b[i];
    }
}

fn missing_d_t(frame: &TimeFrame) -> OuError {
    OuError::Overflow(format!("D_t overflows at t = {}", frame.t))
}

/// `log 𝒦_t` from `w = u − D_t x`.
pub fn log_script_small_form(frame: &TimeFrame, x: &[f64], u: &[f64]) -> Result<f64> {
    let n = x.len();
    let d = frame.d_t.as_ref().ok_or_else(|| missing_d_t(frame))?;
    let (mut dx, mut w): (Buf, Buf) = ([0.0; MAX_DIM], [0.0; MAX_DIM]);
    matvec(d, x, &mut dx[..n]);
    sub(u, &dx[..n], &mut w[..n]);
    Ok(frame.log_ratio - 0.5 * quad_form(&frame.delta, &w[..n]))
}

/// `log 𝒦_t` from `z = D_{-t}u − x`.
pub fn log_script_large_form(frame: &TimeFrame, x: &[f64], u: &[f64]) -> f64 {
    let n = x.len();
    let (mut y, mut z): (Buf, Buf) = ([0.0; MAX_DIM], [0.0; MAX_DIM]);
    matvec(&frame.d_minus_t, u, &mut y[..n]);
    sub(&y[..n], x, &mut z[..n]);
    frame.log_ratio - 0.5 * quad_form(&frame.large_form, &z[..n])
}

/// `N_t` from `w = u − D_t x`:
/// `−½ tr(Q_t^{-1}W_t) + ½ wᵀ Q_t^{-1} W_t Q_t^{-1} w − ⟨Q_∞Bᵀ Q_∞^{-1} D_t x, (Q_t^{-1} − Q_∞^{-1}) w⟩`.
pub fn n_small_form(frame: &TimeFrame, x: &[f64], u: &[f64]) -> Result<f64> {
    let n = x.len();
    let d = frame.d_t.as_ref().ok_or_else(|| missing_d_t(frame))?;
    let md = frame.md_t.as_ref().ok_or_else(|| missing_d_t(frame))?;
    let (mut dx, mut w, mut dw, mut mdx): (Buf, Buf, Buf, Buf) =
        ([0.0; MAX_DIM], [0.0; MAX_DIM], [0.0; MAX_DIM], [0.0; MAX_DIM]);
    matvec(d, x, &mut dx[..n]);
    sub(u, &dx[..n], &mut w[..n]);
    matvec(&frame.delta, &w[..n], &mut dw[..n]);
    matvec(md, x, &mut mdx[..n]);
    Ok(-0.5 * frame.trace_term + 0.5 * quad_form(&frame.h, &w[..n]) - dot(&mdx[..n], &dw[..n]))
}

/// The five terms of `N_t` in `z = D_{-t}u − x`, `v = e^{tB}z`, `y = D_{-t}u`:
/// `−½ tr(Q_t^{-1}W_t)`, `½|Q^{1/2}e^{tBᵀ}Q_t^{-1}v|²`, `−⟨Q_t^{-1}Bv, v⟩`,
/// `−⟨Q_t^{-1}e^{tB}Q_∞BᵀQ_∞^{-1}y, v⟩`, `−⟨BᵀQ_∞^{-1}y, z⟩`.
pub fn n_five_terms(frame: &TimeFrame, x: &[f64], u: &[f64]) -> [f64; 5] {
    let n = x.len();
    let (mut y, mut z, mut tmp): (Buf, Buf, Buf) = ([0.0; MAX_DIM], [0.0; MAX_DIM], [0.0; MAX_DIM]);
    matvec(&frame.d_minus_t, u, &mut y[..n]);
    sub(&y[..n], x, &mut z[..n]);
    let z = &z[..n];
    let y = &y[..n];
    let first = -0.5 * frame.trace_term;
    let second = 0.5 * quad_form(&frame.z_h, z);
    let third = -quad_form(&frame.z_qbe, z);
    matvec(&frame.z_gm, y, &mut tmp[..n]);
    let fourth = -dot(&tmp[..n], z);
    matvec(&frame.bt_qinf_inv, y, &mut tmp[..n]);
    let fifth = -dot(&tmp[..n], z);
    [first, second, third, fourth, fifth]
}

/// `(log 𝒦_t, N_t)` through the form appropriate to the regime.
#[inline]
pub fn log_script_and_n(frame: &TimeFrame, x: &[f64], u: &[f64]) -> (f64, f64) {
    let n = x.len();
    if frame.is_small_time() {
        let d = frame.d_t.as_ref().expect("D_t exists for t <= 1 within the supported range");
        let md = frame.md_t.as_ref().expect("D_t exists");
        let (mut dx, mut w, mut dw, mut mdx): (Buf, Buf, Buf, Buf) =
            ([0.0; MAX_DIM], [0.0; MAX_DIM], [0.0; MAX_DIM], [0.0; MAX_DIM]);
        matvec(d, x, &mut dx[..n]);
        sub(u, &dx[..n], &mut w[..n]);
        matvec(&frame.delta, &w[..n], &mut dw[..n]);
        matvec(md, x, &mut mdx[..n]);
        let log_s = frame.log_ratio - 0.5 * dot(&w[..n], &dw[..n]);
        let nt = -0.5 * frame.trace_term + 0.5 * quad_form(&frame.h, &w[..n]) - dot(&mdx[..n], &dw[..n]);
        (log_s, nt)
    } else {
        let terms = n_five_terms(frame, x, u);
        (log_script_large_form(frame, x, u), terms.iter().sum())
    }
}

/// `log 𝒦_t` through the regime-appropriate form.
#[inline]
pub fn log_script_frame(frame: &TimeFrame, x: &[f64], u: &[f64]) -> f64 {
    if frame.is_small_time() {
        log_script_small_form(frame, x, u).expect("D_t exists for t <= 1")
    } else {
        log_script_large_form(frame, x, u)
    }
}

fn frame_for(model: &OuModel, t: f64, x: &[f64], u: &[f64]) -> Result<TimeFrame> {
    check_points(model, x, u)?;
    TimeFrame::new(model, t)
}

/// `log K_t(x, u)`.
pub fn log_mehler_k(model: &OuModel, t: f64, x: &[f64], u: &[f64]) -> Result<f64> {
    let frame = frame_for(model, t, x, u)?;
    let log_s = log_script_frame(&frame, x, u);
    if cfg!(debug_assertions) && (0.5..=2.0).contains(&t) {
        if let Ok(small) = log_script_small_form(&frame, x, u) {
            let large = log_script_large_form(&frame, x, u);
            debug_assert!(
                (small - large).abs() <= 1e-9 * (1.0 + small.abs()),
                "Mehler forms disagree at t = {t}: {small} vs {large}"
            );
        }
    }
    Ok(log_s + quadratic_form_r(model, x))
}

/// `K_t(x, u)`; reports `Overflow` when `log K > 700`.
pub fn mehler_k(model: &OuModel, t: f64, x: &[f64], u: &[f64]) -> Result<f64> {
    let lk = log_mehler_k(model, t, x, u)?;
    if lk > LOG_OVERFLOW {
        return Err(OuError::Overflow(format!("log K = {lk:e}")));
    }
    Ok(lk.exp())
}

/// Both Mehler forms `(small, large)` as `log K`, for form-agreement checks.
pub fn mehler_forms_log(model: &OuModel, t: f64, x: &[f64], u: &[f64]) -> Result<(f64, f64)> {
    let frame = frame_for(model, t, x, u)?;
    let r = quadratic_form_r(model, x);
    Ok((log_script_small_form(&frame, x, u)? + r, log_script_large_form(&frame, x, u) + r))
}

/// `𝒦_t(x, u) = e^{-R(x)} K_t(x, u)` evaluated without the `e^{R(x)}` factor.
pub fn script_k(model: &OuModel, t: f64, x: &[f64], u: &[f64]) -> Result<f64> {
    let frame = frame_for(model, t, x, u)?;
    let ls = log_script_frame(&frame, x, u);
    if ls > LOG_OVERFLOW {
        return Err(OuError::Overflow(format!("log 𝒦 = {ls:e}")));
    }
    Ok(ls.exp())
}

/// Both evaluations of `N_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NtForms {
    /// Built from `w = u − D_t x`.
    pub from_w: f64,
    /// The five terms built from `z = D_{-t}u − x`.
    pub terms: [f64; 5],
    pub from_terms: f64,
}

pub fn nt_factor(model: &OuModel, t: f64, x: &[f64], u: &[f64]) -> Result<NtForms> {
    let frame = frame_for(model, t, x, u)?;
    let terms = n_five_terms(&frame, x, u);
    Ok(NtForms {
        from_w: n_small_form(&frame, x, u)?,
        terms,
        from_terms: terms.iter().sum(),
    })
}

/// `∂_t K_t(x, u) = K_t N_t`.
pub fn dkdt(model: &OuModel, t: f64, x: &[f64], u: &[f64]) -> Result<f64> {
    let frame = frame_for(model, t, x, u)?;
    let (ls, nt) = log_script_and_n(&frame, x, u);
    let lk = ls + quadratic_form_r(model, x);
    if lk > LOG_OVERFLOW {
        return Err(OuError::Overflow(format!("log K = {lk:e}")));
    }
    Ok(lk.exp() * nt)
}

/// `∂_{x_ℓ}𝒦 = 𝒦 P_ℓ`, `∂_{x_ℓ}∂_t𝒦 = 𝒦 S_ℓ`, `∂_{u_ℓ}∂_t𝒦 = 𝒦 R_ℓ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialFactors {
    pub p: Vec<f64>,
    pub s: Vec<f64>,
    pub r: Vec<f64>,
}

/// Spatial factors from a frame with `t ≤ 1`.
///
/// With `G = Q_t^{-1}e^{tB}`, `Δ = Q_t^{-1} − Q_∞^{-1}`, `H = Q_t^{-1}W_tQ_t^{-1}`:
/// `P = Gᵀw`, `S = N P − (He^{tB})ᵀw + (Q_t^{-1}Be^{tB})ᵀw + Gᵀ Q_∞BᵀQ_∞^{-1}D_t x`,
/// `R = −N Δw + Hw − Δ Q_∞BᵀQ_∞^{-1}D_t x`.
pub fn spatial_factors_frame(frame: &TimeFrame, x: &[f64], u: &[f64]) -> Result<SpatialFactors> {
    if !frame.is_small_time() {
        return Err(OuError::OutOfRegime(format!("spatial factors need t <= 1, got {}", frame.t)));
    }
    let n = x.len();
    let d = frame.d_t.as_ref().ok_or_else(|| missing_d_t(frame))?;
    let md = frame.md_t.as_ref().ok_or_else(|| missing_d_t(frame))?;
    let mut dx = vec![0.0; n];
    matvec(d, x, &mut dx);
    let w: Vec<f64> = u.iter().zip(&dx).map(|(a, b)| a - b).collect();
    let nt = n_small_form(frame, x, u)?;
    let mut mdx = vec![0.0; n];
    matvec(md, x, &mut mdx);
    let mut p = vec![0.0; n];
    matvec_t(&frame.g, &w, &mut p);
    let (mut a, mut b, mut c) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    matvec_t(&frame.he, &w, &mut a);
    matvec_t(&frame.qbe, &w, &mut b);
    matvec_t(&frame.g, &mdx, &mut c);
    let s: Vec<f64> = (0..n).map(|l| nt * p[l] - a[l] + b[l] + c[l]).collect();
    let (mut dw, mut hw, mut dmdx) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    matvec(&frame.delta, &w, &mut dw);
    matvec(&frame.h, &w, &mut hw);
    matvec(&frame.delta, &mdx, &mut dmdx);
    let r: Vec<f64> = (0..n).map(|l| -nt * dw[l] + hw[l] - dmdx[l]).collect();
    Ok(SpatialFactors { p, s, r })
}

pub fn spatial_derivative_factors(model: &OuModel, t: f64, x: &[f64], u: &[f64]) -> Result<SpatialFactors> {
    if t > 1.0 {
        return Err(OuError::OutOfRegime(format!("spatial factors need t <= 1, got {t}")));
    }
    let frame = frame_for(model, t, x, u)?;
    spatial_factors_frame(&frame, x, u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEvaluation {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub log_k: f64,
    pub k: f64,
    pub script_k: f64,
    pub n: f64,
    pub dk_dt: f64,
    /// Present for `t ≤ 1` only.
    pub spatial: Option<SpatialFactors>,
}

pub fn evaluate_kernel(model: &OuModel, t: f64, x: &[f64], u: &[f64]) -> Result<KernelEvaluation> {
    let frame = frame_for(model, t, x, u)?;
    let (ls, nt) = log_script_and_n(&frame, x, u);
    let log_k = ls + quadratic_form_r(model, x);
    if log_k > LOG_OVERFLOW {
        return Err(OuError::Overflow(format!("log K = {log_k:e}")));
    }
    let k = log_k.exp();
    Ok(KernelEvaluation {
        t,
        x: x.to_vec(),
        u: u.to_vec(),
        log_k,
        k,
        script_k: ls.exp(),
        n: nt,
        dk_dt: k * nt,
        spatial: if t <= 1.0 {
            Some(spatial_factors_frame(&frame, x, u)?)
        } else {
            None
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Small,
    Large,
}

/// Sampling ranges for the kernel estimate batteries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub count: usize,
    pub t_min: f64,
    pub t_max: f64,
    /// `x ~ x_scale · γ_∞`
    pub x_scale: f64,
    /// Spread of `u` around `D_t x` (small regime, in units of `√t`) or of `u` itself (large regime).
    pub u_spread: f64,
    pub seed: u64,
}

impl SampleSpec {
    pub fn small_default(count: usize, seed: u64) -> SampleSpec {
        SampleSpec {
            count,
            t_min: 1e-3,
            t_max: 1.0,
            x_scale: 1.5,
            u_spread: 2.0,
            seed,
        }
    }

    pub fn large_default(count: usize, seed: u64) -> SampleSpec {
        SampleSpec {
            count,
            t_min: 1.0,
            t_max: 20.0,
            x_scale: 1.5,
            u_spread: 2.0,
            seed,
        }
    }
}

struct Triple {
    frame: TimeFrame,
    x: Vec<f64>,
    u: Vec<f64>,
}

fn draw_triples(model: &OuModel, regime: Regime, spec: &SampleSpec) -> Result<Vec<Triple>> {
    let n = model.n;
    let mut rng = seeded_rng(spec.seed, 21);
    let mut out = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let t = (spec.t_min.ln() + rng.random::<f64>() * (spec.t_max / spec.t_min).ln()).exp();
        let frame = TimeFrame::new(model, t)?;
        let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * spec.x_scale).collect();
        let mut x = vec![0.0; n];
        matvec(&model.q_inf_sqrt, &z, &mut x);
        let xi: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * spec.u_spread).collect();
        let u = match regime {
            Regime::Small => {
                let mut dx = vec![0.0; n];
                matvec(frame.d_t.as_ref().ok_or_else(|| missing_d_t(&frame))?, &x, &mut dx);
                dx.iter().zip(&xi).map(|(a, b)| a + t.sqrt() * b).collect()
            }
            Regime::Large => {
                let mut v = vec![0.0; n];
                matvec(&model.q_inf_sqrt, &xi, &mut v);
                v
            }
        };
        out.push(Triple { frame, x, u });
    }
    Ok(out)
}

/// Fitted constants for the two-sided kernel bounds and the `N_t` bounds.
///
/// Small regime: `½⟨Δw, w⟩ / (|w|²/t)` (exponent), `(det Q_∞/det Q_t)^{1/2} t^{n/2}`
/// (prefactor), and `|N_t| / (1/t + |w|²/t² + |x||w|/t)`.
/// Large regime: `K / (e^{R(x)} e^{-½|z|_Q²})`, `½ zᵀLz / (½|z|_Q²)`, and
/// `|N_t| / (|z||D_{-t}u| + e^{-ct}|z|² + e^{-ct})` with `c` the Hurwitz margin.
pub fn kernel_bound_fit(model: &OuModel, regime: Regime, spec: &SampleSpec) -> Result<Vec<BoundFit>> {
    let n = model.n;
    let triples = draw_triples(model, regime, spec)?;
    let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
    for tr in &triples {
        let (frame, x, u) = (&tr.frame, &tr.x[..], &tr.u[..]);
        let t = frame.t;
        let (ls, nt) = log_script_and_n(frame, x, u);
        match regime {
            Regime::Small => {
                let d = frame.d_t.as_ref().ok_or_else(|| missing_d_t(frame))?;
                let mut dx = vec![0.0; n];
                matvec(d, x, &mut dx);
                let w: Vec<f64> = u.iter().zip(&dx).map(|(p, q)| p - q).collect();
                let w2 = dot(&w, &w);
                if w2 > 0.0 {
                    a.push(0.5 * quad_form(&frame.delta, &w) / (w2 / t));
                }
                b.push(frame.log_ratio.exp() * t.powf(0.5 * n as f64));
                let wn = w2.sqrt();
                c.push(nt.abs() / (1.0 / t + w2 / (t * t) + norm(x) * wn / t));
            }
            Regime::Large => {
                let mut y = vec![0.0; n];
                matvec(&frame.d_minus_t, u, &mut y);
                let z: Vec<f64> = y.iter().zip(x).map(|(p, q)| p - q).collect();
                let zq = quad_form(&model.q_inf_inv, &z);
                a.push((ls + 0.5 * zq).exp());
                if zq > 0.0 {
                    b.push(quad_form(&frame.large_form, &z) / zq);
                }
                let decay = (-model.hurwitz_margin * t).exp();
                let zn = norm(&z);
                c.push(nt.abs() / (zn * norm(&y) + decay * zn * zn + decay));
            }
        }
    }
    Ok(match regime {
        Regime::Small => vec![
            BoundFit::from_ratios("small_t_exponent", &a),
            BoundFit::from_ratios("small_t_prefactor", &b),
            BoundFit::upper("small_t_N_bound", &c),
        ],
        Regime::Large => vec![
            BoundFit::from_ratios("large_t_kernel_ratio", &a),
            BoundFit::from_ratios("large_t_exponent", &b),
            BoundFit::upper("large_t_N_bound", &c),
        ],
    })
}

/// `K_t` of the gaussian transition law: `N(e^{tB}x, Q_t)(u) / γ_∞(u)`, with
/// `Q_t` from the given matrix. Used as an independent check.
pub fn gaussian_transition_ratio_log(model: &OuModel, exp_tb: &Mat, qt: &Mat, x: &[f64], u: &[f64]) -> Option<f64> {
    let n = model.n;
    let (qt_inv, ld) = crate::linalg::spd_inverse_logdet(qt)?;
    let mut mean = vec![0.0; n];
    matvec(exp_tb, x, &mut mean);
    let diff: Vec<f64> = u.iter().zip(&mean).map(|(a, b)| a - b).collect();
    let log_normal = -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * ld - 0.5 * quad_form(&qt_inv, &diff);
    Some(log_normal - crate::geometry::log_gamma_density(model, u))
}
