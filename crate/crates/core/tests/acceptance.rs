//! Acceptance suite: the twelve end-to-end criteria at their full sample sizes
//! and tolerances. Prints one PASS/FAIL line per criterion and exits nonzero
//! when a criterion fails outside the documented known failures.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex64;
use ou_kernels::cli::run_cli_with;
use ou_kernels::mehler::mehler_k;
use ou_kernels::multiplier::{apply_multiplier, kernel_m_eps, sample_pairs, ApplyMode, MultiplierInput, MultiplierKernelConfig, PairSpec};
use ou_kernels::report::LedgerEntry;
use ou_kernels::symbol::Symbol;
use ou_kernels::verify::{
    battery_models, cz_checks, indicator_checks, kernel_form_checks, linear_polynomial_checks, matrix_identity_checks,
    semigroup_quadrature_checks, spectral_multiplier_checks, telescoping_checks, transition_identity_checks,
    weak_type_checks, zero_sweep_summary, NamedModel, VerifyProfile,
};
use ou_kernels::zeros::{sweep_pair, T_FLOOR};
use ou_kernels::{build_model, OuModel};

/// Ledger entries that fail at full size and are recorded as genuine results.
const KNOWN_FAILURES: &[&str] = &["scan/zeros_sample_growth/standard1d"];

struct Criterion {
    entries: Vec<LedgerEntry>,
    seconds: f64,
}

fn entry(check_id: &str, value: f64, tol: f64) -> LedgerEntry {
    LedgerEntry {
        check_id: check_id.to_string(),
        module: "acceptance".to_string(),
        value,
        tol,
        pass: value <= tol,
    }
}

fn models(names: &[&str]) -> Vec<NamedModel> {
    battery_models().into_iter().filter(|m| names.contains(&m.name.as_str())).collect()
}

fn n_le_2() -> Vec<NamedModel> {
    models(&["standard1d", "standard2d", "jordan2d", "complex2d"])
}

// Scalar standard model: the transition law is N(e^{-t}x, 1 - e^{-2t}) and γ_∞ = N(0, 1).
fn scalar_transition_residual(t: f64, x: f64, u: f64) -> f64 {
    let var = -(-2.0 * t).exp_m1();
    let mean = (-t).exp() * x;
    let log_density = -0.5 * (u - mean).powi(2) / var - 0.5 * (2.0 * PI * var).ln();
    let log_gamma = -0.5 * u * u - 0.5 * (2.0 * PI).ln();
    let m = OuModel::standard(1);
    let log_k = mehler_k(&m, t, &[x], &[u]).unwrap().ln();
    ((log_k + log_gamma - log_density).exp_m1()).abs()
}

fn criterion_1() -> Vec<LedgerEntry> {
    let mut out = transition_identity_checks(&battery_models(), &VerifyProfile::full()).unwrap();
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let s = i as f64;
        let t = 10f64.powf(-2.0 + 3.3 * ((s * 0.618_034) % 1.0));
        let x = 3.0 * ((s * 0.754_877) % 1.0) - 1.5;
        let u = 3.0 * ((s * 0.569_840) % 1.0) - 1.5;
        worst = worst.max(scalar_transition_residual(t, x, u));
    }
    out.push(entry("identity/transition_closed_form/standard1d", worst, 1e-8));
    out
}

fn criterion_2() -> Vec<LedgerEntry> {
    let mut out = matrix_identity_checks(&battery_models(), &VerifyProfile::full()).unwrap();
    // Scalar Gramian Q_t = 1 - e^{-2t} read off the kernel at u = x = 0: K_t(0,0) = Q_t^{-1/2}.
    let m = OuModel::standard(1);
    let worst = (0..40)
        .map(|i| {
            let t = 1e-3 * (5e4f64).powf(i as f64 / 39.0);
            let k = mehler_k(&m, t, &[0.0], &[0.0]).unwrap();
            (k * (-(-2.0 * t).exp_m1()).sqrt() - 1.0).abs()
        })
        .fold(0.0, f64::max);
    out.push(entry("identity/gramian_closed_form/standard1d", worst, 1e-8));
    out
}

fn criterion_3() -> Vec<LedgerEntry> {
    semigroup_quadrature_checks(&battery_models(), &VerifyProfile::full()).unwrap()
}

fn criterion_4() -> Vec<LedgerEntry> {
    kernel_form_checks(&battery_models(), &VerifyProfile::full()).unwrap()
}

/// Γ(z) for Re z > 0 from the integral ∫ e^{zs − e^s} ds (substituting t = e^s),
/// by the trapezoidal rule, which converges geometrically for this integrand.
fn gamma_by_integral(z: Complex64) -> Complex64 {
    let (lo, hi, steps) = (-60.0, 5.0, 20_000);
    let h = (hi - lo) / steps as f64;
    (0..=steps)
        .map(|i| {
            let s = lo + h * i as f64;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            w * (z * s - s.exp()).exp()
        })
        .sum::<Complex64>()
        * h
}

fn hermite(k: usize, x: f64) -> f64 {
    let (mut a, mut b) = (1.0, x);
    if k == 0 {
        return a;
    }
    for j in 1..k {
        (a, b) = (b, x * b - j as f64 * a);
    }
    b
}

fn criterion_5() -> Vec<LedgerEntry> {
    let mut out = spectral_multiplier_checks(&VerifyProfile::full()).unwrap();
    let gamma = 0.5;
    let g = gamma_by_integral(Complex64::new(1.0, -gamma));
    out.push(entry(
        "identity/gamma_modulus",
        (g.norm_sqr() - PI * gamma / (PI * gamma).sinh()).abs(),
        1e-10,
    ));
    let m = OuModel::standard(1);
    let cfg = MultiplierKernelConfig::default();
    for (label, sym, coef) in [
        ("const", Symbol::Constant, None),
        ("imagpow0.5", Symbol::imag_power(gamma).unwrap(), Some(g)),
    ] {
        let mut worst = 0.0f64;
        for k in 1..=6usize {
            let f = |u: &[f64]| hermite(k, u[0]);
            let mk = match coef {
                None => Complex64::new(1.0, 0.0),
                Some(c) => c * Complex64::new(0.0, gamma * (k as f64).ln()).exp(),
            };
            let norm = (1..=k).map(|j| j as f64).product::<f64>().sqrt();
            for x in [-1.3, 0.4, 1.7] {
                let v = apply_multiplier(&m, &sym, MultiplierInput::Function(&f), &[x], &cfg, ApplyMode::default()).unwrap();
                worst = worst.max((v.value - mk * hermite(k, x)).norm() / norm);
            }
        }
        out.push(entry(&format!("quadrature/spectral_independent/{label}"), worst, 1e-3));
    }
    out
}

fn criterion_6() -> Vec<LedgerEntry> {
    let mut out = linear_polynomial_checks(&VerifyProfile::full()).unwrap();
    // −Bᵀ = I + N with N = [[0,0],[−1,0]], so m(−Bᵀ) = m(1) I + m'(1) N.
    let m = build_model(2, &[vec![-1.0, 1.0], vec![0.0, -1.0]], &[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
    let g = gamma_by_integral(Complex64::new(1.0, -0.5));
    let cases = [
        ("expdecay1", Symbol::exp_decay(1.0).unwrap(), Complex64::new(0.5, 0.0), Complex64::new(0.25, 0.0)),
        ("imagpow0.5", Symbol::imag_power(0.5).unwrap(), g, Complex64::new(0.0, 0.5) * g),
    ];
    let cfg = MultiplierKernelConfig::default();
    for (label, sym, m1, dm1) in cases {
        let matrix = [[m1, Complex64::new(0.0, 0.0)], [-dm1, m1]];
        let mut worst = 0.0f64;
        for x in [[0.6, -1.1], [-0.4, 0.9], [1.3, 0.2]] {
            for l in 0..2 {
                let f = move |u: &[f64]| u[l];
                let v = apply_multiplier(&m, &sym, MultiplierInput::Function(&f), &x, &cfg, ApplyMode::default()).unwrap();
                let expect = matrix[0][l] * x[0] + matrix[1][l] * x[1];
                worst = worst.max((v.value - expect).norm() / (x[0].hypot(x[1])).max(1.0));
            }
        }
        out.push(entry(&format!("quadrature/jordan_closed_form/{label}"), worst, 1e-3));
    }
    out
}

fn criterion_7() -> Vec<LedgerEntry> {
    let mut out = indicator_checks(&battery_models(), &VerifyProfile::full()).unwrap();
    let cfg = MultiplierKernelConfig::default();
    for nm in models(&["standard1d", "jordan2d"]) {
        let pairs = sample_pairs(
            &nm.model,
            &PairSpec {
                count: 100,
                x_scale: 1.0,
                r_min: 0.05,
                r_max: 2.0,
                seed: 77,
            },
        );
        let mut worst = 0.0f64;
        for (i, (x, u)) in pairs.iter().enumerate() {
            let a = 0.002 * (1.0 + i as f64);
            let b = a + 0.5 + 0.01 * i as f64;
            let q = kernel_m_eps(&nm.model, &Symbol::indicator(a, b).unwrap(), x, u, &cfg).unwrap();
            let exact = mehler_k(&nm.model, a, x, u).unwrap() - mehler_k(&nm.model, b, x, u).unwrap();
            worst = worst.max((q.value.re - exact).abs().max(q.value.im.abs()) / exact.abs().max(1.0));
        }
        out.push(entry(&format!("quadrature/indicator_endpoints/{}", nm.name), worst, 1e-8));
    }
    out
}

/// Simple real roots in `(lo, hi)` of `c3 r³ + c2 r² + c1 r + c0` by Cardano's
/// trigonometric form; a double root is not a sign change.
fn cubic_roots_in(c: [f64; 4], lo: f64, hi: f64) -> usize {
    let [c3, c2, c1, c0] = c;
    let (a, b, cc) = (c2 / c3, c1 / c3, c0 / c3);
    let p = b - a * a / 3.0;
    let q = 2.0 * a.powi(3) / 27.0 - a * b / 3.0 + cc;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let shift = -a / 3.0;
    let roots: Vec<f64> = if disc >= 0.0 {
        let s = disc.sqrt();
        vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt() + shift]
    } else {
        let m = 2.0 * (-p / 3.0).sqrt();
        let theta = (3.0 * q / (p * m)).acos() / 3.0;
        (0..3).map(|k| m * (theta - 2.0 * PI * k as f64 / 3.0).cos() + shift).collect()
    };
    roots.into_iter().filter(|r| *r > lo && *r < hi).count()
}

fn scalar_oracle(x: f64, u: f64) -> usize {
    let (s, p) = (x * x + u * u, x * u);
    cubic_roots_in([-1.0, p, 1.0 - s, p], (-1.0f64).exp(), (-T_FLOOR).exp())
}

fn criterion_8() -> Vec<LedgerEntry> {
    let profile = VerifyProfile::full();
    let mut out = Vec::new();
    for nm in n_le_2() {
        let s = zero_sweep_summary(&nm, &profile).unwrap();
        println!(
            "    {}: max over 1e3 = {}, over 1e4 = {}, refined grid = {}, heuristic bound = {}",
            nm.name, s.max_small, s.max_large, s.max_refined_grid, s.heuristic_bound
        );
        let id = |what: &str| format!("scan/zeros_{what}/{}", nm.name);
        out.push(entry(&id("sample_growth"), s.max_large.abs_diff(s.max_small) as f64, 0.0));
        out.push(entry(&id("grid_refinement"), s.max_large.abs_diff(s.max_refined_grid) as f64, 0.0));
        out.push(entry(&id("grid_changes"), s.grid_changes as f64, 0.0));
        out.push(entry(&id("over_heuristic_bound"), f64::from((s.max_large as u128) > s.heuristic_bound), 0.0));
        if nm.name == "standard1d" {
            let oracle_max = (0..10_000)
                .map(|i| {
                    let (x, u) = sweep_pair(&nm.model, profile.seed, i);
                    scalar_oracle(x[0], u[0])
                })
                .max()
                .unwrap();
            println!("    standard1d: independent cubic oracle max = {oracle_max}");
            out.push(entry(&id("scalar_oracle_gap"), oracle_max.abs_diff(s.max_large) as f64, 0.0));
        }
    }
    out
}

fn criterion_9() -> Vec<LedgerEntry> {
    cz_checks(&n_le_2(), &VerifyProfile::full()).unwrap()
}

fn criterion_10() -> Vec<LedgerEntry> {
    weak_type_checks(&models(&["standard2d", "jordan2d"]), &VerifyProfile::full()).unwrap()
}

fn criterion_11() -> Vec<LedgerEntry> {
    telescoping_checks(&n_le_2(), &VerifyProfile::full()).unwrap()
}

fn run_to_file(args: &[&str], path: &std::path::Path) -> (i32, Vec<u8>) {
    let argv: Vec<String> = ["ou-kernels"]
        .iter()
        .chain(args)
        .map(|s| s.to_string())
        .chain(["--out".to_string(), path.display().to_string()])
        .collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_cli_with(&argv, &mut out, &mut err);
    (code, std::fs::read(path).unwrap_or_default())
}

const STANDARD1D: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/models/standard1d.json");

fn criterion_12() -> Vec<LedgerEntry> {
    let dir = std::env::temp_dir().join(format!("ou-kernels-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let runs: [(&str, &[&str]); 5] = [
        ("kernel", &["kernel", "--model", "jordan2d", "--t", "0.3", "--x", "0.5,-1", "--u", "1,0.2", "--dkdt", "--format", "json"]),
        ("multiplier", &["multiplier", "--model", "complex2d", "--phi", "imagpow:1", "--x", "0.4,0.1", "--u", "-0.2,0.9"]),
        ("zeros", &["zeros", "--model", "complex2d", "--samples", "1000", "--seed", "9"]),
        ("weaktype", &["weaktype", "--model", "standard2d", "--op", "M_full", "--phi", "imagpow:0.5", "--alphas", "10,100,1000", "--budget", "100000", "--seed", "3", "--format", "json"]),
        ("verify", &["verify", "--models", STANDARD1D, "--profile", "quick", "--format", "json"]),
    ];
    let mut out = Vec::new();
    for (label, args) in runs {
        let (code_a, a) = run_to_file(args, &dir.join(format!("{label}-a")));
        let (code_b, b) = run_to_file(args, &dir.join(format!("{label}-b")));
        let same = code_a == code_b && code_a == 0 && !a.is_empty() && a == b;
        out.push(entry(&format!("identity/reproducible/{label}"), f64::from(!same), 0.0));
    }
    let _ = std::fs::remove_dir_all(&dir);
    out
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Vec<LedgerEntry>); 12] = [
        ("Gaussian transition identity", criterion_1),
        ("Gramian identities", criterion_2),
        ("Chapman-Kolmogorov and mass conservation", criterion_3),
        ("Mehler forms, N_t forms, finite differences", criterion_4),
        ("spectral multiplier on Hermite polynomials", criterion_5),
        ("nonnormal linear eigenspace", criterion_6),
        ("indicator symbol closed form", criterion_7),
        ("zero-count uniformity", criterion_8),
        ("Calderon-Zygmund scan", criterion_9),
        ("weak-type scans", criterion_10),
        ("telescoping inequality", criterion_11),
        ("reproducibility", criterion_12),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut unexpected = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let number = i + 1;
        if filter.as_deref().is_some_and(|f| f != number.to_string()) {
            continue;
        }
        let start = Instant::now();
        let result = Criterion {
            entries: run(),
            seconds: start.elapsed().as_secs_f64(),
        };
        let failed: Vec<&LedgerEntry> = result.entries.iter().filter(|e| !e.pass).collect();
        let known = failed.iter().all(|e| KNOWN_FAILURES.contains(&e.check_id.as_str()));
        let status = match (failed.is_empty(), known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {number:>2} {name}: {status} [{} checks, {:.1} s]", result.entries.len(), result.seconds);
        for e in &failed {
            println!("    failed {}: value {:e} > tol {:e}", e.check_id, e.value, e.tol);
        }
        if !known {
            unexpected += 1;
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
