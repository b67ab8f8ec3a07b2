//! The verification battery: every cross-check and invariant as a ledger of
//! `{check_id, module, value, tol, pass}` entries.
//!
//! Check ids are prefixed by category (`identity/`, `fd/`, `quadrature/`,
//! `statistical/`, `scan/`) so that tightened profiles can be read per category.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OuError, Result};
use crate::experiments::{telescoping_check, weak_type_scans, ExperimentConfig, ExperimentReport, Operator};
use crate::frame::FrameTable;
use crate::geometry::gamma_sample;
use crate::linalg::norm;
use crate::localization::{build_cover, cz_bound_scan, localization_diagnostics, probe_points, LocalPairSpec, PartitionOfUnity};
use crate::mehler::{dkdt, mehler_forms_log, mehler_k, nt_factor, script_k, spatial_derivative_factors};
use crate::model::{qt_identities_check, ModelConfig, OuModel};
use crate::multiplier::{
    apply_multiplier, indicator_endpoint_difference, kernel_m_eps, linear_poly_multiplier_matrix, sample_pairs, ApplyMode,
    MultiplierInput, MultiplierKernelConfig, PairSpec,
};
use crate::oracle::{
    chapman_kolmogorov_error, hermite_eigenfunction, mass_conservation_errors, scalar_zero_count, transition_identity_residual,
};
use crate::quadrature::{QuadratureSpec, Rule};
use crate::report::LedgerEntry;
use crate::seeded_rng;
use crate::symbol::Symbol;
use crate::zeros::{theoretical_bound_estimate, zero_sweep_with, ZeroScanner, T_FLOOR};

/// Sample sizes of the battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuiteSize {
    Quick,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyProfile {
    pub size: SuiteSize,
    /// Multiplies every tolerance.
    pub tol_scale: f64,
    pub seed: u64,
}

impl VerifyProfile {
    pub fn quick() -> VerifyProfile {
        VerifyProfile {
            size: SuiteSize::Quick,
            tol_scale: 1.0,
            seed: 1,
        }
    }

    pub fn full() -> VerifyProfile {
        VerifyProfile {
            size: SuiteSize::Full,
            ..VerifyProfile::quick()
        }
    }

    pub fn parse(name: &str) -> Result<VerifyProfile> {
        match name {
            "quick" | "default" => Ok(VerifyProfile::quick()),
            "full" => Ok(VerifyProfile::full()),
            "tight" => Ok(VerifyProfile {
                tol_scale: 1e-2,
                ..VerifyProfile::quick()
            }),
            _ => Err(OuError::InvalidConfig(format!("unknown profile {name:?} (quick, full, tight)"))),
        }
    }

    fn pick(&self, quick: usize, full: usize) -> usize {
        match self.size {
            SuiteSize::Quick => quick,
            SuiteSize::Full => full,
        }
    }

    fn entry(&self, check_id: &str, module: &str, value: f64, tol: f64) -> LedgerEntry {
        let tol = tol * self.tol_scale;
        LedgerEntry {
            check_id: check_id.to_string(),
            module: module.to_string(),
            value,
            tol,
            pass: value <= tol,
        }
    }
}

/// One named model of the battery.
#[derive(Debug, Clone)]
pub struct NamedModel {
    pub name: String,
    pub model: OuModel,
}

impl NamedModel {
    pub fn from_config(name: &str, cfg: &ModelConfig) -> Result<NamedModel> {
        Ok(NamedModel {
            name: name.to_string(),
            model: cfg.build()?,
        })
    }
}

fn named(name: &str, b: &[Vec<f64>], q: &[Vec<f64>]) -> NamedModel {
    NamedModel {
        name: name.into(),
        model: crate::build_model(b.len(), b, q).expect("battery model is valid"),
    }
}

/// The standard battery: standard models in one and two dimensions, a Jordan
/// block, a rotation with eigenvalues `−1 ± 5i`, and a generic 3×3 model.
pub fn battery_models() -> Vec<NamedModel> {
    vec![
        named("standard1d", &[vec![-1.0]], &[vec![2.0]]),
        named("standard2d", &[vec![-1.0, 0.0], vec![0.0, -1.0]], &[vec![2.0, 0.0], vec![0.0, 2.0]]),
        named("jordan2d", &[vec![-1.0, 1.0], vec![0.0, -1.0]], &[vec![2.0, 0.0], vec![0.0, 2.0]]),
        named("complex2d", &[vec![-1.0, 5.0], vec![-5.0, -1.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]]),
        named(
            "random3d",
            &[vec![-1.0, 2.0, 0.3], vec![0.0, -0.5, 1.0], vec![0.2, -0.4, -2.0]],
            &[vec![2.0, 0.3, 0.1], vec![0.3, 1.0, -0.2], vec![0.1, -0.2, 1.5]],
        ),
    ]
}

fn log_uniform(rng: &mut impl Rng, a: f64, b: f64) -> f64 {
    (a.ln() + rng.random::<f64>() * (b / a).ln()).exp()
}

fn max_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |a, b| if b.is_nan() { f64::INFINITY } else { a.max(b) })
}

/// `K_t(x,u) γ_∞(u)` against the Gaussian transition density on random triples.
pub fn transition_identity_checks(models: &[NamedModel], profile: &VerifyProfile) -> Result<Vec<LedgerEntry>> {
    let count = profile.pick(200, 1000);
    models
        .iter()
        .map(|nm| {
            let xs = gamma_sample(&nm.model, count, profile.seed);
            let us = gamma_sample(&nm.model, count, profile.seed + 1);
            let mut rng = seeded_rng(profile.seed, 500);
            let ts: Vec<f64> = (0..count).map(|_| log_uniform(&mut rng, 1e-2, 20.0)).collect();
            let worst = (0..count)
                .into_par_iter()
                .map(|i| transition_identity_residual(&nm.model, ts[i], &xs[i], &us[i]))
                .collect::<Result<Vec<f64>>>()?;
            Ok(profile.entry(&format!("identity/transition/{}", nm.name), "stochastic-oracle", max_of(worst), 1e-8))
        })
        .collect()
}

/// Gramian identities on a log grid of `t ∈ [1e-3, 50]`.
pub fn matrix_identity_checks(models: &[NamedModel], profile: &VerifyProfile) -> Result<Vec<LedgerEntry>> {
    let points = profile.pick(12, 40);
    let mut out = Vec::new();
    for nm in models {
        let mut worst = 0.0f64;
        for i in 0..points {
            let t = (1e-3f64.ln() + (50f64 / 1e-3).ln() * i as f64 / (points - 1) as f64).exp();
            for r in qt_identities_check(&nm.model, t)? {
                worst = worst.max(r.residual);
            }
        }
        out.push(profile.entry(&format!("identity/gramian/{}", nm.name), "matrix-core", worst, 1e-8));
        out.push(profile.entry(
            &format!("identity/lyapunov/{}", nm.name),
            "matrix-core",
            nm.model.lyapunov_residual(),
            1e-10,
        ));
    }
    Ok(out)
}

/// Mass conservation and Chapman–Kolmogorov by tensor Gauss–Hermite quadrature.
pub fn semigroup_quadrature_checks(models: &[NamedModel], profile: &VerifyProfile) -> Result<Vec<LedgerEntry>> {
    let mut out = Vec::new();
    for nm in models.iter().filter(|m| m.model.n <= 2) {
        let (nodes, tol) = if nm.model.n == 1 { (64, 1e-6) } else { (40, 1e-4) };
        let pts = gamma_sample(&nm.model, 8, profile.seed + 7);
        let cases = [(0.3, 0.5), (1.0, 0.7), (0.4, 2.0), (1.5, 1.5)];
        let mut mass = 0.0f64;
        let mut ck = 0.0f64;
        for (k, &(s, t)) in cases.iter().enumerate() {
            let (x, u) = (&pts[2 * k], &pts[2 * k + 1]);
            let (f, b) = mass_conservation_errors(&nm.model, s + t, x, u, nodes)?;
            mass = mass.max(f).max(b);
            ck = ck.max(chapman_kolmogorov_error(&nm.model, s, t, x, u, nodes)?);
        }
        out.push(profile.entry(&format!("quadrature/mass/{}", nm.name), "stochastic-oracle", mass, tol));
        out.push(profile.entry(&format!("quadrature/chapman_kolmogorov/{}", nm.name), "stochastic-oracle", ck, tol));
    }
    Ok(out)
}

/// `∂_t K` against central differences in `t`, scaled by `max(|∂_t K|, K/t)`.
pub fn dkdt_fd_error(model: &OuModel, t: f64, x: &[f64], u: &[f64]) -> Result<f64> {
    let h = 1e-5 * t;
    let fd = (mehler_k(model, t + h, x, u)? - mehler_k(model, t - h, x, u)?) / (2.0 * h);
    let exact = dkdt(model, t, x, u)?;
    let scale = exact.abs().max(mehler_k(model, t, x, u)? / t);
    Ok((fd - exact).abs() / scale)
}

/// `𝒦 S_ℓ` and `𝒦 R_ℓ` against nested central differences (in `x_ℓ` or `u_ℓ`
/// of the central difference in `t` of `𝒦`), scaled by `max(|value|, 𝒦/t)`.
pub fn spatial_fd_error(model: &OuModel, t: f64, x: &[f64], u: &[f64]) -> Result<f64> {
    let n = model.n;
    let f = spatial_derivative_factors(model, t, x, u)?;
    let sk = script_k(model, t, x, u)?;
    let ht = 1e-4 * t;
    let dt_script = |x: &[f64], u: &[f64]| -> Result<f64> {
        Ok((script_k(model, t + ht, x, u)? - script_k(model, t - ht, x, u)?) / (2.0 * ht))
    };
    let hx = 1e-4 * (1.0 + norm(x));
    let mut worst = 0.0f64;
    for l in 0..n {
        let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
        xp[l] += hx;
        xm[l] -= hx;
        let fd_s = (dt_script(&xp, u)? - dt_script(&xm, u)?) / (2.0 * hx);
        worst = worst.max((fd_s - sk * f.s[l]).abs() / (sk * f.s[l]).abs().max(sk / t));
        let (mut up, mut um) = (u.to_vec(), u.to_vec());
        up[l] += hx;
        um[l] -= hx;
        let fd_r = (dt_script(x, &up)? - dt_script(x, &um)?) / (2.0 * hx);
        worst = worst.max((fd_r - sk * f.r[l]).abs() / (sk * f.r[l]).abs().max(sk / t));
    }
    Ok(worst)
}

/// Mehler form agreement at `t = 1`, `N_t` form agreement, and derivative
/// checks against finite differences.
pub fn kernel_form_checks(models: &[NamedModel], profile: &VerifyProfile) -> Result<Vec<LedgerEntry>> {
    let count = profile.pick(50, 200);
    let mut out = Vec::new();
    for nm in models {
        let m = &nm.model;
        let xs = gamma_sample(m, count, profile.seed + 11);
        let us = gamma_sample(m, count, profile.seed + 12);
        let mut rng = seeded_rng(profile.seed, 600);
        let mut forms = 0.0f64;
        let mut nt = 0.0f64;
        for i in 0..count {
            let (a, b) = mehler_forms_log(m, 1.0, &xs[i], &us[i])?;
            forms = forms.max((a - b).abs());
            let t = log_uniform(&mut rng, 0.05, 5.0);
            let f = nt_factor(m, t, &xs[i], &us[i])?;
            nt = nt.max((f.from_w - f.from_terms).abs() / f.from_w.abs().max(1.0));
        }
        out.push(profile.entry(&format!("identity/mehler_forms/{}", nm.name), "mehler-kernel", forms, 1e-9));
        out.push(profile.entry(&format!("identity/n_forms/{}", nm.name), "mehler-kernel", nt, 1e-8));
        let fd_pairs = profile.pick(4, 12);
        let mut d = 0.0f64;
        let mut s = 0.0f64;
        for i in 0..fd_pairs {
            for t in [0.05, 0.3, 0.9, 1.5, 4.0] {
                d = d.max(dkdt_fd_error(m, t, &xs[i], &us[i])?);
            }
            for t in [0.1, 0.4, 0.8] {
                s = s.max(spatial_fd_error(m, t, &xs[i], &us[i])?);
            }
        }
        out.push(profile.entry(&format!("fd/dkdt/{}", nm.name), "mehler-kernel", d, 1e-5));
        out.push(profile.entry(&format!("fd/spatial_factors/{}", nm.name), "mehler-kernel", s, 1e-4));
    }
    Ok(out)
}

/// Quadrature application of `m(ℒ)` to `He_k` on the standard model against
/// `m(k) He_k`, relative to `‖He_k‖ = √k!`.
pub fn spectral_multiplier_checks(profile: &VerifyProfile) -> Result<Vec<LedgerEntry>> {
    let m = OuModel::standard(1);
    let cfg = MultiplierKernelConfig::default();
    let points: Vec<f64> = vec![-1.3, 0.4, 1.7][..profile.pick(2, 3)].to_vec();
    let mut out = Vec::new();
    for (label, sym) in [("const", Symbol::Constant), ("imagpow0.5", Symbol::imag_power(0.5)?)] {
        let mut worst = 0.0f64;
        for k in 1..=6usize {
            let he = hermite_eigenfunction(&[k])?;
            let f = |u: &[f64]| he.eval(u);
            let scale = he.norm_squared().sqrt();
            let mk = sym.m_eval(Complex64::new(k as f64, 0.0), 0)?;
            for &x in &points {
                let v = apply_multiplier(&m, &sym, MultiplierInput::Function(&f), &[x], &cfg, ApplyMode::default())?;
                worst = worst.max((v.value - mk * he.eval(&[x])).norm() / scale);
            }
        }
        out.push(profile.entry(&format!("quadrature/spectral/{label}"), "multiplier", worst, 1e-3));
    }
    Ok(out)
}

/// Quadrature application to linear polynomials on the Jordan block against
/// `m(−Bᵀ)` from confluent interpolation.
pub fn linear_polynomial_checks(profile: &VerifyProfile) -> Result<Vec<LedgerEntry>> {
    let m = crate::build_model(2, &[vec![-1.0, 1.0], vec![0.0, -1.0]], &[vec![2.0, 0.0], vec![0.0, 2.0]])?;
    let cfg = MultiplierKernelConfig::default();
    let xs = [[0.6, -1.1], [-0.4, 0.9], [1.3, 0.2]];
    let mut out = Vec::new();
    for (label, sym) in [("expdecay1", Symbol::exp_decay(1.0)?), ("imagpow0.5", Symbol::imag_power(0.5)?)] {
        let a = linear_poly_multiplier_matrix(&m, &sym)?;
        let mut worst = 0.0f64;
        for x in &xs[..profile.pick(2, 3)] {
            for l in 0..2 {
                let f = move |u: &[f64]| u[l];
                let v = apply_multiplier(&m, &sym, MultiplierInput::Function(&f), x, &cfg, ApplyMode::default())?;
                let expect: Complex64 = (0..2).map(|i| a[(i, l)] * x[i]).sum();
                worst = worst.max((v.value - expect).norm() / norm(x).max(1.0));
            }
        }
        out.push(profile.entry(&format!("quadrature/linear_eigenspace/{label}"), "multiplier", worst, 1e-3));
    }
    Ok(out)
}

/// `M_ε` for indicator symbols against the closed-form endpoint differences.
pub fn indicator_checks(models: &[NamedModel], profile: &VerifyProfile) -> Result<Vec<LedgerEntry>> {
    let count = profile.pick(20, 100);
    let cfg = MultiplierKernelConfig::default();
    models
        .iter()
        .map(|nm| {
            let pairs = sample_pairs(
                &nm.model,
                &PairSpec {
                    count,
                    x_scale: 1.0,
                    r_min: 0.05,
                    r_max: 2.0,
                    seed: profile.seed + 21,
                },
            );
            let mut rng = seeded_rng(profile.seed, 700);
            let ends: Vec<(f64, f64)> = (0..count)
                .map(|_| {
                    let a = log_uniform(&mut rng, 1e-3, 3.0);
                    (a, a * log_uniform(&mut rng, 1.05, 20.0))
                })
                .collect();
            let errs = pairs
                .par_iter()
                .zip(&ends)
                .map(|((x, u), &(a, b))| -> Result<f64> {
                    let q = kernel_m_eps(&nm.model, &Symbol::indicator(a, b)?, x, u, &cfg)?;
                    let exact = indicator_endpoint_difference(&nm.model, a, b, 0.0, x, u)?;
                    Ok((q.value.re - exact).abs().max(q.value.im.abs()) / exact.abs().max(1.0))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(profile.entry(&format!("quadrature/indicator/{}", nm.name), "multiplier", max_of(errs), 1e-8))
        })
        .collect()
}

/// Zero-count sweep statistics for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroSweepSummary {
    pub model: String,
    pub max_small: usize,
    pub max_large: usize,
    pub max_refined_grid: usize,
    /// Pairs whose count changed under grid refinement.
    pub grid_changes: usize,
    pub heuristic_bound: u128,
    /// Maximum of the scalar closed-form count over the same pairs, for `n = 1` standard.
    pub scalar_oracle_max: Option<usize>,
    pub unstable_floor: usize,
}

pub fn zero_sweep_summary(nm: &NamedModel, profile: &VerifyProfile) -> Result<ZeroSweepSummary> {
    let (small, large) = (profile.pick(300, 1000), profile.pick(3000, 10_000));
    let (coarse, fine) = (4096, profile.pick(8192, 16384));
    let sweep = zero_sweep_with(&ZeroScanner::new(&nm.model, coarse)?, large, profile.seed, true)?;
    let refined = zero_sweep_with(&ZeroScanner::new(&nm.model, fine)?, large, profile.seed, false)?;
    let grid_changes = sweep
        .results
        .iter()
        .zip(&refined.results)
        .filter(|(a, b)| a.count != b.count)
        .count();
    let is_standard_scalar = nm.model.n == 1 && nm.model.b[(0, 0)] == -1.0 && nm.model.q[(0, 0)] == 2.0;
    let scalar_oracle_max = is_standard_scalar.then(|| {
        sweep
            .results
            .iter()
            .map(|r| scalar_zero_count(r.x[0], r.u[0], T_FLOOR))
            .max()
            .unwrap_or(0)
    });
    Ok(ZeroSweepSummary {
        model: nm.name.clone(),
        max_small: sweep.prefix_max(small),
        max_large: sweep.max_count,
        max_refined_grid: refined.max_count,
        grid_changes,
        heuristic_bound: theoretical_bound_estimate(&nm.model).bound,
        scalar_oracle_max,
        unstable_floor: sweep.results.iter().filter(|r| !r.floor_sign_stable).count(),
    })
}

pub fn zero_count_checks(models: &[NamedModel], profile: &VerifyProfile) -> Result<Vec<LedgerEntry>> {
    let mut out = Vec::new();
    for nm in models.iter().filter(|m| m.model.n <= 2) {
        let s = zero_sweep_summary(nm, profile)?;
        let id = |what: &str| format!("scan/zeros_{what}/{}", nm.name);
        out.push(profile.entry(&id("sample_growth"), "zero-analysis", s.max_large.abs_diff(s.max_small) as f64, 0.0));
        out.push(profile.entry(&id("grid_changes"), "zero-analysis", s.grid_changes as f64, 0.0));
        let over = if (s.max_large as u128) <= s.heuristic_bound { 0.0 } else { 1.0 };
        out.push(profile.entry(&id("over_heuristic_bound"), "zero-analysis", over, 0.0));
        out.push(profile.entry(&id("unstable_floor"), "zero-analysis", s.unstable_floor as f64, 0.0));
        if let Some(oracle) = s.scalar_oracle_max {
            out.push(profile.entry(&id("scalar_oracle_gap"), "zero-analysis", oracle.abs_diff(s.max_large) as f64, 0.0));
        }
    }
    Ok(out)
}

/// Sup of the scaled CZ quantities on the full battery against the first half.
pub fn cz_scan_ratios(model: &OuModel, pairs: usize, seed: u64) -> Result<[f64; 3]> {
    let pou = PartitionOfUnity::new(build_cover(model.n, 6.0, seed)?);
    let sym = Symbol::imag_power(1.0)?;
    let table = FrameTable::from_rule(model, &Rule::log_panels(1e-14, 1.0, 0.5, 8))?;
    let scan = cz_bound_scan(
        model,
        &sym,
        &pou,
        &table,
        &LocalPairSpec {
            count: pairs,
            min_scaled: 1e-4,
            max_scaled: 6.0,
            seed,
        },
    )?;
    let (full, half) = (scan.sups(), scan.half_sups());
    Ok([0, 1, 2].map(|i| if full[i].is_finite() { full[i] / half[i] } else { f64::INFINITY }))
}

pub fn cz_checks(models: &[NamedModel], profile: &VerifyProfile) -> Result<Vec<LedgerEntry>> {
    let pairs = profile.pick(2000, 10_000);
    let mut out = Vec::new();
    for nm in models.iter().filter(|m| m.model.n <= 2) {
        let ratios = cz_scan_ratios(&nm.model, pairs, profile.seed)?;
        for (label, r) in ["q", "grad_x", "grad_u"].iter().zip(ratios) {
            out.push(profile.entry(&format!("statistical/cz_doubling_{label}/{}", nm.name), "localization", r, 2.0));
        }
    }
    Ok(out)
}

/// Partition-of-unity properties on a radius-5 cover.
pub fn localization_checks(profile: &VerifyProfile) -> Result<Vec<LedgerEntry>> {
    let mut out = Vec::new();
    for n in [1usize, 2] {
        let pou = PartitionOfUnity::new(build_cover(n, 5.0, profile.seed)?);
        let probes = probe_points(n, 3.9, 0.07, profile.pick(2000, 8000));
        let d = localization_diagnostics(&pou, &probes, profile.pick(1000, 4000), profile.seed)?;
        out.push(profile.entry(&format!("identity/partition_sum/n{n}"), "localization", d.partition_error, 1e-10));
        out.push(profile.entry(&format!("scan/eta_unit_lower/n{n}"), "localization", 1.0 / d.unit_constant, 3.0));
        out.push(profile.entry(&format!("scan/radius_ratio/n{n}"), "localization", d.radius_ratio, 7.0));
    }
    Ok(out)
}

/// The weak-type criteria for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakTypeSummary {
    pub model: String,
    pub reports: Vec<ExperimentReport>,
    /// `max/min` of `α · measure` within two standard errors, per operator.
    pub spreads: Vec<(Operator, f64)>,
    /// For `M1` and `S_inf`: `max α√(log α)·measure` over its value at the smallest `α`.
    pub sqrtlog_growth: Vec<(Operator, f64)>,
    pub sqrtlog_nonincreasing: Vec<(Operator, bool)>,
}

/// Point mass for the `η`-cut operators: `R(u₀) = 1.5 log α_max`, so the
/// global kernel reaches every level of the grid.
pub fn global_point_mass(model: &OuModel, alpha_max: f64) -> Vec<f64> {
    crate::experiments::default_point_mass(model, alpha_max)
        .into_iter()
        .map(|v| v * 3f64.sqrt())
        .collect()
}

pub fn weak_type_summary(nm: &NamedModel, profile: &VerifyProfile) -> Result<WeakTypeSummary> {
    let mut cfg = ExperimentConfig::new(nm.model.config(), "imagpow:0.5");
    cfg.seed = profile.seed;
    if profile.size == SuiteSize::Quick {
        cfg.mc_budget = 200_000;
        cfg.alpha_grid = vec![10.0, 100.0, 1000.0];
    }
    let unwrap_all = |v: Vec<Result<ExperimentReport>>| v.into_iter().collect::<Result<Vec<_>>>();
    let mut reports = unwrap_all(weak_type_scans(&cfg, &[Operator::MFull, Operator::M1, Operator::SInf])?)?;
    cfg.point_mass = Some(global_point_mass(&nm.model, cfg.alpha_max()));
    reports.extend(unwrap_all(weak_type_scans(&cfg, &[Operator::M0Glob, Operator::S0Glob])?)?);
    let spreads = reports
        .iter()
        .filter(|r| !r.operator.has_log_gain())
        .map(|r| (r.operator, r.alpha_measure_spread_within(2.0)))
        .collect();
    let gain: Vec<&ExperimentReport> = reports.iter().filter(|r| r.operator.has_log_gain()).collect();
    let sqrtlog_growth = gain
        .iter()
        .map(|r| (r.operator, r.max_alpha_sqrtlog_measure() / r.rows[0].alpha_sqrtlog_measure))
        .collect();
    let sqrtlog_nonincreasing = gain.iter().map(|r| (r.operator, r.sqrtlog_nonincreasing(2.0))).collect();
    Ok(WeakTypeSummary {
        model: nm.name.clone(),
        reports,
        spreads,
        sqrtlog_growth,
        sqrtlog_nonincreasing,
    })
}

pub fn weak_type_checks(models: &[NamedModel], profile: &VerifyProfile) -> Result<Vec<LedgerEntry>> {
    let mut out = Vec::new();
    for nm in models {
        let s = weak_type_summary(nm, profile)?;
        for (op, spread) in &s.spreads {
            out.push(profile.entry(&format!("statistical/weak_type_spread_{op}/{}", nm.name), "experiments-cli", *spread, 10.0));
        }
        for (op, growth) in &s.sqrtlog_growth {
            out.push(profile.entry(&format!("statistical/sqrtlog_growth_{op}/{}", nm.name), "experiments-cli", *growth, 10.0));
        }
        for (op, ok) in &s.sqrtlog_nonincreasing {
            let v = if *ok { 0.0 } else { 1.0 };
            out.push(profile.entry(&format!("statistical/sqrtlog_trend_{op}/{}", nm.name), "experiments-cli", v, 0.0));
        }
    }
    Ok(out)
}

/// Telescoping inequality on random pairs: the value is the number of violations.
pub fn telescoping_checks(models: &[NamedModel], profile: &VerifyProfile) -> Result<Vec<LedgerEntry>> {
    let count = profile.pick(200, 1000);
    let quad = QuadratureSpec {
        rel_tol: 1e-8,
        abs_tol: 1e-300,
        ..QuadratureSpec::default()
    };
    let mut out = Vec::new();
    for nm in models.iter().filter(|m| m.model.n <= 2) {
        let scanner = ZeroScanner::new(&nm.model, 4096)?;
        let checks = (0..count)
            .into_par_iter()
            .map(|i| {
                let (x, u) = crate::zeros::sweep_pair(&nm.model, profile.seed + 31, i);
                telescoping_check(&scanner, &x, &u, &quad)
            })
            .collect::<Result<Vec<_>>>()?;
        let violations = checks.iter().filter(|c| !c.holds).count();
        let quad_gap = max_of(checks.iter().map(|c| (c.integral - c.telescoped).abs() / c.telescoped.max(1e-300)));
        out.push(profile.entry(&format!("scan/telescoping_violations/{}", nm.name), "experiments-cli", violations as f64, 0.0));
        out.push(profile.entry(&format!("quadrature/telescoping_endpoints/{}", nm.name), "experiments-cli", quad_gap, 1e-6));
    }
    Ok(out)
}

/// Runs the whole battery. Weak-type scans use the standard 2-D and Jordan models.
pub fn verify_suite(models: &[NamedModel], profile: &VerifyProfile) -> Result<Vec<LedgerEntry>> {
    let mut ledger = Vec::new();
    ledger.extend(matrix_identity_checks(models, profile)?);
    ledger.extend(transition_identity_checks(models, profile)?);
    ledger.extend(semigroup_quadrature_checks(models, profile)?);
    ledger.extend(kernel_form_checks(models, profile)?);
    ledger.extend(spectral_multiplier_checks(profile)?);
    ledger.extend(linear_polynomial_checks(profile)?);
    ledger.extend(indicator_checks(models, profile)?);
    ledger.extend(localization_checks(profile)?);
    ledger.extend(cz_checks(models, profile)?);
    ledger.extend(zero_count_checks(models, profile)?);
    ledger.extend(telescoping_checks(models, profile)?);
    let weak: Vec<NamedModel> = models
        .iter()
        .filter(|m| m.name == "standard2d" || m.name == "jordan2d")
        .cloned()
        .collect();
    ledger.extend(weak_type_checks(&weak, profile)?);
    Ok(ledger)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pick(names: &[&str]) -> Vec<NamedModel> {
        battery_models().into_iter().filter(|m| names.contains(&m.name.as_str())).collect()
    }

    #[test]
    fn identity_checks_pass_on_standard_model() {
        let p = VerifyProfile::quick();
        let models = pick(&["standard1d"]);
        for e in matrix_identity_checks(&models, &p).unwrap().iter().chain(&transition_identity_checks(&models, &p).unwrap()) {
            assert!(e.pass, "{e:?}");
        }
    }

    #[test]
    fn tight_profile_separates_categories() {
        let tight = VerifyProfile::parse("tight").unwrap();
        let models = pick(&["jordan2d"]);
        let forms = kernel_form_checks(&models, &tight).unwrap();
        let fd_fail = forms.iter().any(|e| e.check_id.starts_with("fd/") && !e.pass);
        let ids_pass = forms.iter().filter(|e| e.check_id.starts_with("identity/")).all(|e| e.pass);
        assert!(fd_fail && ids_pass, "{forms:?}");
    }

    #[test]
    fn indicator_and_linear_checks_pass() {
        let p = VerifyProfile::quick();
        for e in indicator_checks(&pick(&["jordan2d"]), &p).unwrap().iter().chain(&linear_polynomial_checks(&p).unwrap()) {
            assert!(e.pass, "{e:?}");
        }
    }

    #[test]
    fn profiles_parse() {
        assert!(VerifyProfile::parse("bogus").is_err());
        assert_eq!(VerifyProfile::parse("full").unwrap().size, SuiteSize::Full);
    }
}
