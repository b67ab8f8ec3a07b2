//! Independent probabilistic and spectral oracles: the exact Gaussian
//! transition law, Euler–Maruyama paths, Monte Carlo semigroup application,
//! and Hermite eigenfunctions of the standard model.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OuError, Result};
use crate::geometry::log_gamma_density;
use crate::linalg::{matvec, quad_form, spd_inverse_logdet, Mat};
use crate::mehler::mehler_k;
use crate::model::{gramian_qt, OuModel};
use crate::quadrature::{gauss_hermite_prob, QuadratureSpec};
use crate::seeded_rng;

/// Mean `e^{tB}x` and covariance `Q_t` of the process at time `t` started at `x`.
/// `Q_t` comes from direct quadrature of `∫₀^t e^{sB}Qe^{sBᵀ}ds`.
pub fn transition_law(model: &OuModel, t: f64, x: &[f64]) -> Result<(Vec<f64>, Mat)> {
    if !(t > 0.0) {
        return Err(OuError::InvalidConfig(format!("time must be positive, got {t}")));
    }
    let e = model.exp_b(t)?;
    let mut mean = vec![0.0; model.n];
    matvec(&e, x, &mut mean);
    Ok((mean, gramian_qt(model, t, &QuadratureSpec::default())?))
}

pub fn log_transition_density(model: &OuModel, t: f64, x: &[f64], u: &[f64]) -> Result<f64> {
    let (mean, qt) = transition_law(model, t, x)?;
    let (inv, logdet) = spd_inverse_logdet(&qt).ok_or_else(|| OuError::NotSpd(format!("Q_t at t = {t}")))?;
    let diff: Vec<f64> = u.iter().zip(&mean).map(|(a, b)| a - b).collect();
    let n = model.n as f64;
    Ok(-0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet - 0.5 * quad_form(&inv, &diff))
}

/// Lebesgue density at `u` of the law `N(e^{tB}x, Q_t)`.
pub fn transition_density(model: &OuModel, t: f64, x: &[f64], u: &[f64]) -> Result<f64> {
    Ok(log_transition_density(model, t, x, u)?.exp())
}

/// Relative discrepancy of `K_t(x,u) γ_∞(u)` against the transition density.
pub fn transition_identity_residual(model: &OuModel, t: f64, x: &[f64], u: &[f64]) -> Result<f64> {
    let lhs = crate::mehler::log_mehler_k(model, t, x, u)? + log_gamma_density(model, u);
    let rhs = log_transition_density(model, t, x, u)?;
    Ok((lhs - rhs).exp_m1().abs())
}

fn lower_factor(m: &Mat) -> Result<Mat> {
    Ok(m.clone()
        .cholesky()
        .ok_or_else(|| OuError::NotSpd("covariance is not positive definite".into()))?
        .l())
}

/// Exact draws from `N(e^{tB}x, Q_t)`.
pub fn exact_transition_sample(model: &OuModel, x: &[f64], t: f64, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let (mean, qt) = transition_law(model, t, x)?;
    let l = lower_factor(&qt)?;
    let n = model.n;
    let mut rng = seeded_rng(seed, 101);
    let mut z = vec![0.0; n];
    Ok((0..count)
        .map(|_| {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let mut u = vec![0.0; n];
            matvec(&l, &z, &mut u);
            u.iter_mut().zip(&mean).for_each(|(a, m)| *a += m);
            u
        })
        .collect())
}

/// Euler–Maruyama path of `dX = BX dt + Q^{1/2} dW`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub endpoint: Vec<f64>,
    /// Every step including the start, when requested.
    pub path: Option<Vec<Vec<f64>>>,
}

pub fn sample_path(model: &OuModel, x0: &[f64], t: f64, n_steps: usize, seed: u64, keep_path: bool) -> Result<PathSample> {
    if n_steps < 10 {
        return Err(OuError::InvalidConfig(format!("need at least 10 steps, got {n_steps}")));
    }
    let n = model.n;
    let root = crate::linalg::sym_sqrt(&model.q);
    let h = t / n_steps as f64;
    let sh = h.sqrt();
    let mut rng = seeded_rng(seed, 202);
    let mut x = x0.to_vec();
    let mut path = keep_path.then(|| vec![x.clone()]);
    let (mut drift, mut z, mut noise) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for _ in 0..n_steps {
        matvec(&model.b, &x, &mut drift);
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        matvec(&root, &z, &mut noise);
        for i in 0..n {
            x[i] += h * drift[i] + sh * noise[i];
        }
        if let Some(p) = path.as_mut() {
            p.push(x.clone());
        }
    }
    Ok(PathSample { endpoint: x, path })
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// `H_t f(x) = E f(U)` with `U ~ N(e^{tB}x, Q_t)` drawn exactly.
pub fn mc_semigroup_apply(
    model: &OuModel,
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_paths < 2 {
        return Err(OuError::InvalidConfig("need at least two paths".into()));
    }
    let samples = exact_transition_sample(model, x, t, n_paths, seed)?;
    let vals: Vec<f64> = samples.iter().map(|u| f(u)).collect();
    let mean = vals.iter().sum::<f64>() / n_paths as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_paths - 1) as f64;
    Ok(McEstimate {
        value: mean,
        stderr: (var / n_paths as f64).sqrt(),
    })
}

/// Sign changes of `∂_t K_t(x, u)` on `(t_floor, 1]` for the scalar standard
/// model, from the cubic `−r³ + xu r² + (1 − x² − u²) r + xu` in `r = e^{−t}`,
/// which has the sign of `N_t`. The cubic is cut at its critical points into
/// monotone pieces and sign changes are counted across them.
pub fn scalar_zero_count(x: f64, u: f64, t_floor: f64) -> usize {
    let (s, p) = (x * x + u * u, x * u);
    let f = |r: f64| -r * r * r + p * r * r + (1.0 - s) * r + p;
    let (a, b) = ((-1.0f64).exp(), (-t_floor).exp());
    let disc = 4.0 * p * p + 12.0 * (1.0 - s);
    let mut cuts = vec![a, b];
    if disc > 0.0 {
        for r in [(2.0 * p + disc.sqrt()) / 6.0, (2.0 * p - disc.sqrt()) / 6.0] {
            if r > a && r < b {
                cuts.push(r);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.windows(2).filter(|w| f(w[0]) * f(w[1]) < 0.0).count()
}

/// Probabilists' Hermite polynomial `He_k` by the three-term recurrence.
pub fn hermite_he(k: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if k == 0 {
        return prev;
    }
    for j in 1..k {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `He_{k₁}(x₁)⋯He_{kₙ}(xₙ)`, an eigenfunction of the standard model with
/// eigenvalue `|k|`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HermiteFunction {
    pub index: Vec<usize>,
}

impl HermiteFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.index.iter().zip(x).map(|(&k, &v)| hermite_he(k, v)).product()
    }

    pub fn eigenvalue(&self) -> usize {
        self.index.iter().sum()
    }

    /// `‖He_k‖²_{L²(γ)} = Π k_i!`
    pub fn norm_squared(&self) -> f64 {
        self.index.iter().map(|&k| (1..=k).map(|v| v as f64).product::<f64>()).product()
    }
}

pub fn hermite_eigenfunction(index: &[usize]) -> Result<HermiteFunction> {
    if index.iter().sum::<usize>() > 10 {
        return Err(OuError::InvalidConfig("total Hermite degree is limited to 10".into()));
    }
    Ok(HermiteFunction { index: index.to_vec() })
}

/// `ℒf(x) = −½ tr(Q∇²f) − ⟨Bx, ∇f⟩` by central differences.
pub fn generator_fd(model: &OuModel, f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> f64 {
    let n = model.n;
    let mut bx = vec![0.0; n];
    matvec(&model.b, x, &mut bx);
    let eval = |di: usize, si: f64, dj: usize, sj: f64| {
        let mut y = x.to_vec();
        y[di] += si * h;
        y[dj] += sj * h;
        f(&y)
    };
    let mut out = 0.0;
    for i in 0..n {
        let grad = (eval(i, 1.0, i, 0.0) - eval(i, -1.0, i, 0.0)) / (2.0 * h);
        out -= bx[i] * grad;
        for j in 0..n {
            let hess = if i == j {
                (eval(i, 1.0, i, 0.0) - 2.0 * f(x) + eval(i, -1.0, i, 0.0)) / (h * h)
            } else {
                (eval(i, 1.0, j, 1.0) - eval(i, 1.0, j, -1.0) - eval(i, -1.0, j, 1.0) + eval(i, -1.0, j, -1.0))
                    / (4.0 * h * h)
            };
            out -= 0.5 * model.q[(i, j)] * hess;
        }
    }
    out
}

/// Tensor Gauss–Hermite rule for `N(mean, cov)` with `m` nodes per axis.
pub fn gaussian_tensor_rule(mean: &[f64], cov: &Mat, m: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    let n = mean.len();
    let l = lower_factor(cov)?;
    let (z, w) = gauss_hermite_prob(m);
    let total = m.pow(n as u32);
    let mut out = Vec::with_capacity(total);
    let mut xi = vec![0.0; n];
    for idx in 0..total {
        let mut rem = idx;
        let mut wt = 1.0;
        for v in xi.iter_mut() {
            let j = rem % m;
            rem /= m;
            *v = z[j];
            wt *= w[j];
        }
        let mut p = vec![0.0; n];
        matvec(&l, &xi, &mut p);
        p.iter_mut().zip(mean).for_each(|(a, b)| *a += b);
        out.push((p, wt));
    }
    Ok(out)
}

/// `|∫K_t(x,u)dγ(u) − 1|` and `|∫K_t(x,u)dγ(x) − 1|` by tensor quadrature
/// under `γ_∞`.
pub fn mass_conservation_errors(model: &OuModel, t: f64, x: &[f64], u: &[f64], nodes: usize) -> Result<(f64, f64)> {
    let zero = vec![0.0; model.n];
    let rule = gaussian_tensor_rule(&zero, &model.q_inf, nodes)?;
    let mut forward = 0.0;
    let mut backward = 0.0;
    for (p, w) in &rule {
        forward += w * mehler_k(model, t, x, p)?;
        backward += w * mehler_k(model, t, p, u)?;
    }
    Ok(((forward - 1.0).abs(), (backward - 1.0).abs()))
}

/// Relative error of `∫K_s(x,v)K_t(v,u)dγ(v) = K_{s+t}(x,u)`, the integral
/// taken as `E K_t(V,u)` over `V ~ N(e^{sB}x, Q_s)` by tensor quadrature.
pub fn chapman_kolmogorov_error(model: &OuModel, s: f64, t: f64, x: &[f64], u: &[f64], nodes: usize) -> Result<f64> {
    let (mean, qs) = transition_law(model, s, x)?;
    let rule = gaussian_tensor_rule(&mean, &qs, nodes)?;
    let mut acc = 0.0;
    for (v, w) in &rule {
        acc += w * mehler_k(model, t, v, u)?;
    }
    let exact = mehler_k(model, s + t, x, u)?;
    Ok((acc - exact).abs() / exact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::gamma_density;
    use crate::model::build_model;

    fn random3() -> OuModel {
        build_model(
            3,
            &[vec![-1.0, 2.0, 0.3], vec![0.0, -0.5, 1.0], vec![0.2, -0.4, -2.0]],
            &[vec![2.0, 0.3, 0.1], vec![0.3, 1.0, -0.2], vec![0.1, -0.2, 1.5]],
        )
        .unwrap()
    }

    #[test]
    fn scalar_transition_law() {
        let m = OuModel::standard(1);
        let (t, x, u): (f64, f64, f64) = (0.7, 1.2, -0.3);
        let var = 1.0 - (-2.0 * t).exp();
        let mean = (-t).exp() * x;
        let expect = (-(u - mean) * (u - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        let got = transition_density(&m, t, &[x], &[u]).unwrap();
        assert!((got - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn ergodic_limit_of_density() {
        let m = random3();
        let u = [0.3, -0.2, 0.5];
        let got = transition_density(&m, 60.0, &[1.0, 1.0, 1.0], &u).unwrap();
        assert!((got - gamma_density(&m, &u)).abs() < 1e-10);
    }

    #[test]
    fn kernel_times_gamma_is_transition_density() {
        let m = random3();
        for &t in &[0.01, 0.5, 3.0, 15.0] {
            let r = transition_identity_residual(&m, t, &[0.5, -1.0, 0.2], &[0.1, 0.4, -0.6]).unwrap();
            assert!(r <= 1e-8, "t={t}: {r}");
        }
    }

    #[test]
    fn hermite_values_and_norms() {
        let h3 = hermite_eigenfunction(&[3]).unwrap();
        assert_eq!(h3.eval(&[2.0]), 8.0 - 6.0);
        assert_eq!(h3.eigenvalue(), 3);
        let (z, w) = gauss_hermite_prob(20);
        let n2: f64 = z.iter().zip(&w).map(|(x, w)| w * h3.eval(&[*x]).powi(2)).sum();
        assert!((n2 - 6.0).abs() < 1e-10 && (h3.norm_squared() - 6.0).abs() < 1e-12);
        assert_eq!(hermite_eigenfunction(&[0, 0]).unwrap().eval(&[3.0, 4.0]), 1.0);
        assert_eq!(hermite_eigenfunction(&[1, 0]).unwrap().eval(&[3.0, 4.0]), 3.0);
        assert!(hermite_eigenfunction(&[6, 5]).is_err());
    }

    #[test]
    fn hermite_products_are_orthogonal() {
        let rule = gaussian_tensor_rule(&[0.0, 0.0], &Mat::identity(2, 2), 12).unwrap();
        let a = hermite_eigenfunction(&[2, 1]).unwrap();
        let b = hermite_eigenfunction(&[1, 2]).unwrap();
        let ab: f64 = rule.iter().map(|(p, w)| w * a.eval(p) * b.eval(p)).sum();
        let aa: f64 = rule.iter().map(|(p, w)| w * a.eval(p) * a.eval(p)).sum();
        assert!(ab.abs() < 1e-10 && (aa - a.norm_squared()).abs() < 1e-8);
    }

    #[test]
    fn hermite_functions_are_eigenfunctions() {
        let m = OuModel::standard(2);
        for idx in [[1usize, 0], [2, 1], [3, 3], [0, 6]] {
            let h = hermite_eigenfunction(&idx).unwrap();
            let f = |x: &[f64]| h.eval(x);
            let x = [0.37, -1.21];
            let lhs = generator_fd(&m, &f, &x, 1e-3);
            let rhs = h.eigenvalue() as f64 * h.eval(&x);
            assert!((lhs - rhs).abs() <= 1e-6 * rhs.abs().max(1.0), "{idx:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn noiseless_path_follows_flow() {
        let m = build_model(2, &[vec![-1.0, 1.0], vec![0.0, -1.0]], &[vec![1e-12, 0.0], vec![0.0, 1e-12]]).unwrap();
        let p = sample_path(&m, &[1.0, 1.0], 1.0, 100_000, 1, false).unwrap();
        let e = m.exp_b(1.0).unwrap();
        let mut flow = vec![0.0; 2];
        matvec(&e, &[1.0, 1.0], &mut flow);
        assert!((p.endpoint[0] - flow[0]).abs() < 1e-5 && (p.endpoint[1] - flow[1]).abs() < 1e-5);
    }

    #[test]
    fn paths_are_deterministic() {
        let m = random3();
        let a = sample_path(&m, &[0.1, 0.2, 0.3], 1.0, 64, 9, true).unwrap();
        let b = sample_path(&m, &[0.1, 0.2, 0.3], 1.0, 64, 9, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.path.unwrap().len(), 65);
    }

    #[test]
    fn euler_moments_match_transition_law() {
        let m = OuModel::standard(1);
        let paths = 20_000;
        let ends: Vec<f64> = (0..paths)
            .map(|i| sample_path(&m, &[1.0], 1.0, 64, 1000 + i as u64, false).unwrap().endpoint[0])
            .collect();
        let mean = ends.iter().sum::<f64>() / paths as f64;
        let var = ends.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (paths - 1) as f64;
        let true_var = 1.0 - (-2.0f64).exp();
        let se = (true_var / paths as f64).sqrt();
        // first-order weak bias of Euler–Maruyama with h = 1/64
        assert!((mean - (-1.0f64).exp()).abs() < 3.0 * se + 0.01);
        assert!((var / true_var - 1.0).abs() < 0.03 + 0.02);
    }

    #[test]
    fn mc_mass_and_eigen_decay() {
        let m = OuModel::standard(1);
        let one = mc_semigroup_apply(&m, &|_| 1.0, &[0.4], 0.5, 1000, 3).unwrap();
        assert_eq!(one.value, 1.0);
        assert_eq!(one.stderr, 0.0);
        let h = hermite_eigenfunction(&[2]).unwrap();
        let (x, t) = ([1.7], 0.3f64);
        let est = mc_semigroup_apply(&m, &|u| h.eval(u), &x, t, 100_000, 4).unwrap();
        let expect = (-2.0 * t).exp() * h.eval(&x);
        assert!((est.value - expect).abs() < 3.0 * est.stderr);
    }

    #[test]
    fn mass_and_chapman_kolmogorov() {
        let m = build_model(2, &[vec![-1.0, 1.0], vec![0.0, -1.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (f, b) = mass_conservation_errors(&m, 1.0, &[0.3, -0.5], &[0.2, 0.9], 40).unwrap();
        assert!(f < 1e-4 && b < 1e-4, "{f} {b}");
        let e = chapman_kolmogorov_error(&m, 0.4, 0.7, &[0.3, -0.5], &[0.2, 0.9], 30).unwrap();
        assert!(e < 1e-4, "{e}");
    }
}
