//! The invariant Gaussian measure, the quadratic form `R`, and polar
//! coordinates `x = D_s x̃` with `x̃` on the ellipsoid `E_β = {R = β}`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{OuError, Result};
use crate::linalg::{matvec, norm, quad_form, Mat};
use crate::model::OuModel;
use crate::quadrature::gauss_legendre;
use crate::seeded_rng;

const SAMPLE_CHUNK: usize = 4096;

/// `R(x) = ½⟨Q_∞^{-1}x, x⟩`
pub fn quadratic_form_r(model: &OuModel, x: &[f64]) -> f64 {
    0.5 * quad_form(&model.q_inf_inv, x)
}

/// `|x|_Q = |Q_∞^{-1/2} x|`, so that `R(x) = ½|x|_Q²`.
pub fn q_norm(model: &OuModel, x: &[f64]) -> f64 {
    (2.0 * quadratic_form_r(model, x)).sqrt()
}

pub fn log_gamma_density(model: &OuModel, x: &[f64]) -> f64 {
    let n = model.n as f64;
    -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * model.log_det_q_inf - quadratic_form_r(model, x)
}

/// Lebesgue density of `γ_∞ = N(0, Q_∞)`.
pub fn gamma_density(model: &OuModel, x: &[f64]) -> f64 {
    log_gamma_density(model, x).exp()
}

/// `count` independent draws `Q_∞^{1/2} z`, `z` standard normal. Each block of
/// 4096 samples uses its own generator stream, so the output does not depend
/// on the thread count.
pub fn gamma_sample(model: &OuModel, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = model.n;
    let chunks = count.div_ceil(SAMPLE_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = seeded_rng(seed, c as u64);
            let len = SAMPLE_CHUNK.min(count - c * SAMPLE_CHUNK);
            let mut out = Vec::with_capacity(len);
            let mut z = vec![0.0; n];
            for _ in 0..len {
                z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                let mut x = vec![0.0; n];
                matvec(&model.q_inf_sqrt, &z, &mut x);
                out.push(x);
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarCoord {
    pub s: f64,
    pub x_tilde: Vec<f64>,
    pub beta: f64,
}

fn group_apply(model: &OuModel, s: f64, x: &[f64]) -> Result<Vec<f64>> {
    let d = crate::model::d_matrix(model, s)?;
    let mut out = vec![0.0; model.n];
    matvec(&d, x, &mut out);
    Ok(out)
}

/// `s ↦ R(D_{-s}x)` and its derivative `−½|Q^{1/2}Q_∞^{-1}y|²`, `y = D_{-s}x`.
fn level_and_slope(model: &OuModel, x: &[f64], s: f64) -> Result<(f64, f64, Vec<f64>)> {
    let y = group_apply(model, -s, x)?;
    let mut qy = vec![0.0; model.n];
    matvec(&model.q_inf_inv, &y, &mut qy);
    let slope = -0.5 * quad_form(&model.q, &qy);
    Ok((quadratic_form_r(model, &y), slope, y))
}

/// Solves `R(D_{-s}x) = β` for `s` and returns `(s, x̃ = D_{-s}x)`.
pub fn polar_decompose(model: &OuModel, x: &[f64], beta: f64) -> Result<PolarCoord> {
    if x.len() != model.n {
        return Err(OuError::DimensionMismatch("point dimension".into()));
    }
    if !(beta > 0.0) {
        return Err(OuError::InvalidConfig("beta must be positive".into()));
    }
    if x.iter().all(|v| *v == 0.0) {
        return Err(OuError::ZeroPoint);
    }
    let bnorm = crate::linalg::op_norm(&model.b).max(1e-300);
    let cap_base = (50.0 / model.hurwitz_margin).min(690.0 / bnorm);
    let r0 = quadratic_form_r(model, x);
    let f = |s: f64| -> Result<(f64, f64, Vec<f64>)> {
        let (r, slope, y) = level_and_slope(model, x, s)?;
        Ok((r - beta, slope, y))
    };
    if (r0 - beta).abs() <= 1e-14 * beta {
        return Ok(PolarCoord {
            s: 0.0,
            x_tilde: x.to_vec(),
            beta,
        });
    }
    let dir = if r0 > beta { 1.0 } else { -1.0 };
    // expand from s = 0 in the direction of the root, then widen the cap once
    let mut bracket = None;
    'outer: for cap in [cap_base, (2.0 * cap_base).min(690.0 / bnorm)] {
        let mut step = 0.25;
        let mut prev = 0.0;
        while step <= cap {
            let s = dir * step;
            let (g, _, _) = f(s)?;
            if (g < 0.0) == (dir > 0.0) {
                bracket = Some(if dir > 0.0 { (prev, s) } else { (s, prev) });
                break 'outer;
            }
            prev = s;
            step *= 2.0;
        }
        let s = dir * cap;
        let (g, _, _) = f(s)?;
        if (g < 0.0) == (dir > 0.0) {
            bracket = Some(if dir > 0.0 { (prev, s) } else { (s, prev) });
            break;
        }
    }
    let (mut lo, mut hi) = bracket.ok_or_else(|| {
        OuError::BracketFailure(format!("no sign change of R(D_(-s)x) - beta within the search range (R(x) = {r0:e})"))
    })?;
    let (g_lo, _, _) = f(lo)?;
    let (g_hi, _, _) = f(hi)?;
    if !(g_lo >= 0.0 && g_hi <= 0.0) {
        return Err(OuError::BracketFailure("bracket endpoints are not ordered".into()));
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (g, slope, y) = f(s)?;
        if !(slope < 0.0) {
            return Err(OuError::BracketFailure(format!("level map not decreasing at s = {s}")));
        }
        if g.abs() <= 1e-13 * beta {
            return Ok(PolarCoord { s, x_tilde: y, beta });
        }
        if g > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let newton = s - g / slope;
        s = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * (1.0 + s.abs()) {
            let (g, _, y) = f(s)?;
            if g.abs() <= 1e-10 * beta {
                return Ok(PolarCoord { s, x_tilde: y, beta });
            }
            break;
        }
    }
    Err(OuError::BracketFailure("polar solve did not converge".into()))
}

pub fn polar_recompose(model: &OuModel, coord: &PolarCoord) -> Result<Vec<f64>> {
    group_apply(model, coord.s, &coord.x_tilde)
}

/// Jacobian factor `e^{-s tr B}|Q^{1/2}Q_∞^{-1}x̃|² / (2|Q_∞^{-1}x̃|)` multiplying `dS_β(x̃) ds`.
pub fn polar_volume_element(model: &OuModel, coord: &PolarCoord) -> f64 {
    let mut qx = vec![0.0; model.n];
    matvec(&model.q_inf_inv, &coord.x_tilde, &mut qx);
    (-coord.s * model.b.trace()).exp() * quad_form(&model.q, &qx) / (2.0 * norm(&qx))
}

/// `∂_s R(D_s x̃) = ½|Q^{1/2}Q_∞^{-1}D_s x̃|²`.
pub fn level_growth(model: &OuModel, s: f64, x_tilde: &[f64]) -> Result<f64> {
    let y = group_apply(model, s, x_tilde)?;
    let mut qy = vec![0.0; model.n];
    matvec(&model.q_inf_inv, &y, &mut qy);
    Ok(0.5 * quad_form(&model.q, &qy))
}

/// Points and area weights on the unit sphere `S^{n-1}`.
///
/// `n = 1`: the two points ±1 (counting measure). `n = 2`: `resolution`
/// equally spaced angles. `n = 3`: Gauss–Legendre in `cos θ` times equally
/// spaced azimuths. `n > 3`: `resolution` Monte Carlo directions.
pub fn sphere_rule(n: usize, resolution: usize, seed: u64) -> Vec<(Vec<f64>, f64)> {
    use std::f64::consts::PI;
    match n {
        1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
        2 => (0..resolution)
            .map(|i| {
                let th = 2.0 * PI * (i as f64 + 0.5) / resolution as f64;
                (vec![th.cos(), th.sin()], 2.0 * PI / resolution as f64)
            })
            .collect(),
        3 => {
            let (ct, w) = gauss_legendre(resolution);
            let m = 2 * resolution;
            let mut out = Vec::with_capacity(resolution * m);
            for (c, wc) in ct.iter().zip(&w) {
                let st = (1.0 - c * c).sqrt();
                for j in 0..m {
                    let ph = 2.0 * PI * (j as f64 + 0.5) / m as f64;
                    out.push((vec![st * ph.cos(), st * ph.sin(), *c], wc * 2.0 * PI / m as f64));
                }
            }
            out
        }
        _ => {
            let area = 2.0 * PI.powf(n as f64 / 2.0) / gamma_real(n as f64 / 2.0);
            let mut rng = seeded_rng(seed, 7);
            (0..resolution)
                .map(|_| {
                    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                    let r = norm(&v);
                    (v.iter().map(|x| x / r).collect(), area / resolution as f64)
                })
                .collect()
        }
    }
}

fn gamma_real(x: f64) -> f64 {
    crate::symbol::gamma_complex(num_complex::Complex64::new(x, 0.0)).re
}

/// Quadrature for the area measure of `E_β`: the sphere rule pushed forward by
/// `A = √(2β) Q_∞^{1/2}` with area factor `|det A| |A^{-T}ω|`.
pub fn ellipsoid_surface_rule(model: &OuModel, beta: f64, resolution: usize, seed: u64) -> Vec<(Vec<f64>, f64)> {
    let n = model.n;
    let a: Mat = model.q_inf_sqrt.scale((2.0 * beta).sqrt());
    let det_a = (0.5 * model.log_det_q_inf + 0.5 * n as f64 * (2.0 * beta).ln()).exp();
    let a_inv_t = crate::linalg::sym_inv_sqrt(&model.q_inf).scale(1.0 / (2.0 * beta).sqrt());
    sphere_rule(n, resolution, seed)
        .into_iter()
        .map(|(w, wt)| {
            let mut x = vec![0.0; n];
            matvec(&a, &w, &mut x);
            let mut g = vec![0.0; n];
            matvec(&a_inv_t, &w, &mut g);
            let factor = if n == 1 { 1.0 } else { det_a * norm(&g) };
            (x, wt * factor)
        })
        .collect()
}

/// Range of the polar parameter `s` over points of the annulus
/// `½ log α ≤ R(x) ≤ 2 log α` decomposed at `β = ½ log α`.
pub fn annulus_s_range(model: &OuModel, alpha: f64, samples: usize, seed: u64) -> Result<(f64, f64)> {
    let beta = 0.5 * alpha.ln();
    let mut rng = seeded_rng(seed, 11);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..samples {
        let w: Vec<f64> = (0..model.n).map(|_| rng.sample(StandardNormal)).collect();
        let r = norm(&w);
        let level: f64 = rng.random_range(beta..=4.0 * beta);
        let scale = (2.0 * level).sqrt() / r;
        let mut x = vec![0.0; model.n];
        matvec(&model.q_inf_sqrt, &w, &mut x);
        x.iter_mut().for_each(|v| *v *= scale);
        let p = polar_decompose(model, &x, beta)?;
        lo = lo.min(p.s);
        hi = hi.max(p.s);
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;
    use crate::quadrature::Rule;
    use proptest::prelude::*;

    fn scalar() -> OuModel {
        build_model(1, &[vec![-1.0]], &[vec![2.0]]).unwrap()
    }

    fn nonnormal2() -> OuModel {
        build_model(2, &[vec![-1.0, 3.0], vec![-0.5, -2.0]], &[vec![1.0, 0.2], vec![0.2, 0.5]]).unwrap()
    }

    #[test]
    fn r_examples() {
        let m = OuModel::standard(2);
        assert!((quadratic_form_r(&m, &[1.0, 2.0]) - 2.5).abs() < 1e-15);
        assert_eq!(quadratic_form_r(&nonnormal2(), &[0.0, 0.0]), 0.0);
        let m = nonnormal2();
        let x = [0.3, -1.2];
        let mut y = vec![0.0; 2];
        matvec(&crate::linalg::sym_inv_sqrt(&m.q_inf), &x, &mut y);
        assert!((quadratic_form_r(&m, &x) - 0.5 * norm(&y).powi(2)).abs() < 1e-10);
        assert!((q_norm(&m, &x).powi(2) * 0.5 - quadratic_form_r(&m, &x)).abs() < 1e-14);
    }

    #[test]
    fn density_examples() {
        let m = OuModel::standard(2);
        assert!((gamma_density(&m, &[0.0, 0.0]) - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
        let s = scalar();
        let expect = (2.0 * std::f64::consts::PI).powf(-0.5) * (-0.5f64).exp();
        assert!((gamma_density(&s, &[1.0]) - expect).abs() < 1e-15);
    }

    #[test]
    fn density_has_unit_mass() {
        let m = nonnormal2();
        let rule = Rule::linear_panels(-12.0, 12.0, 0.5, 10);
        let mut total = 0.0;
        for (x, wx) in rule.nodes.iter().zip(&rule.weights) {
            for (y, wy) in rule.nodes.iter().zip(&rule.weights) {
                total += wx * wy * gamma_density(&m, &[*x, *y]);
            }
        }
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn sampler_is_deterministic_and_has_right_covariance() {
        let m = OuModel::standard(2);
        let a = gamma_sample(&m, 100_000, 9);
        assert_eq!(a, gamma_sample(&m, 100_000, 9));
        let mut c = Mat::zeros(2, 2);
        for x in &a {
            for i in 0..2 {
                for j in 0..2 {
                    c[(i, j)] += x[i] * x[j];
                }
            }
        }
        c /= a.len() as f64;
        assert!(crate::linalg::op_norm(&(c - Mat::identity(2, 2))) < 0.03);
    }

    #[test]
    fn sampler_tail_matches_chi_square() {
        let m = scalar();
        let xs = gamma_sample(&m, 100_000, 4);
        let level = 1.2f64;
        let hits = xs.iter().filter(|x| quadratic_form_r(&m, x) > level).count() as f64;
        let p_hat = hits / xs.len() as f64;
        // P(x²/2 > L) = erfc(√L)
        let p = statrs_free_erfc(level.sqrt());
        let se = (p * (1.0 - p) / xs.len() as f64).sqrt();
        assert!((p_hat - p).abs() < 3.0 * se, "{p_hat} vs {p}");
    }

    // erfc via the complementary Gaussian integral by quadrature
    fn statrs_free_erfc(x: f64) -> f64 {
        let r = crate::quadrature::integrate(
            |t: f64| (-t * t).exp(),
            x,
            x + 40.0,
            &Default::default(),
        )
        .unwrap();
        2.0 / std::f64::consts::PI.sqrt() * r.value
    }

    #[test]
    fn polar_examples() {
        let m = OuModel::standard(2);
        let beta: f64 = 0.7;
        let x = [(2.0 * beta).sqrt(), 0.0];
        let p = polar_decompose(&m, &x, beta).unwrap();
        assert_eq!(p.s, 0.0);
        let t: f64 = 0.9;
        let x = [(2.0 * beta).sqrt() * 0.6 * t.exp(), (2.0 * beta).sqrt() * 0.8 * t.exp()];
        let p = polar_decompose(&m, &x, beta).unwrap();
        assert!((p.s - t).abs() < 1e-12);
        assert!(matches!(polar_decompose(&m, &[0.0, 0.0], 1.0), Err(OuError::ZeroPoint)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn polar_round_trip(x0 in -5.0f64..5.0, x1 in -5.0f64..5.0, beta in 0.05f64..8.0) {
            prop_assume!(x0.abs() + x1.abs() > 1e-3);
            let m = nonnormal2();
            let p = polar_decompose(&m, &[x0, x1], beta).unwrap();
            prop_assert!((quadratic_form_r(&m, &p.x_tilde) - beta).abs() <= 1e-10 * beta);
            let back = polar_recompose(&m, &p).unwrap();
            let err = ((back[0] - x0).powi(2) + (back[1] - x1).powi(2)).sqrt();
            prop_assert!(err <= 1e-9 * (x0.hypot(x1)));
            prop_assert!(level_growth(&m, p.s * 0.5, &p.x_tilde).unwrap() > 0.0);
        }
    }

    /// ∫∫ density(D_s x̃) · J(s, x̃) dS_β ds over the s line and E_β.
    fn polar_mass(m: &OuModel, beta: f64, resolution: usize) -> f64 {
        let surf = ellipsoid_surface_rule(m, beta, resolution, 1);
        let srule = Rule::linear_panels(-40.0, 6.0, 0.25, 10);
        let mut total = 0.0;
        for (xt, ws) in &surf {
            for (s, w) in srule.nodes.iter().zip(&srule.weights) {
                let c = PolarCoord { s: *s, x_tilde: xt.clone(), beta };
                let x = polar_recompose(m, &c).unwrap();
                total += ws * w * polar_volume_element(m, &c) * gamma_density(m, &x);
            }
        }
        total
    }

    #[test]
    fn polar_mass_closure() {
        assert!((polar_mass(&scalar(), 0.6, 0) - 1.0).abs() < 1e-6);
        assert!((polar_mass(&OuModel::standard(2), 0.6, 128) - 1.0).abs() < 1e-4);
        assert!((polar_mass(&nonnormal2(), 1.3, 256) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn sphere_rules_have_full_area() {
        use std::f64::consts::PI;
        let area = |n: usize, res: usize| sphere_rule(n, res, 0).iter().map(|p| p.1).sum::<f64>();
        assert!((area(2, 64) - 2.0 * PI).abs() < 1e-12);
        assert!((area(3, 16) - 4.0 * PI).abs() < 1e-12);
        assert!((area(4, 100) - 2.0 * PI * PI).abs() < 1e-10);
    }

    #[test]
    fn annulus_parameter_bounded() {
        let m = nonnormal2();
        let mut highs = Vec::new();
        for alpha in [10.0, 1e3, 1e6] {
            let (lo, hi) = annulus_s_range(&m, alpha, 400, 2).unwrap();
            assert!(lo >= -1e-12);
            highs.push(hi);
        }
        let spread = highs.iter().cloned().fold(0.0, f64::max);
        assert!(spread.is_finite() && spread < 5.0);
    }
}
