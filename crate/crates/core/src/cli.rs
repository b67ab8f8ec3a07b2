//! Command-line front end. Reports go to stdout or `--out`; the config hash,
//! seed and runtime go to stderr so that reports of repeated runs compare
//! byte for byte.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde_json::json;

use crate::error::{OuError, Result};
use crate::experiments::{weak_type_scan, ExperimentConfig, Operator};
use crate::mehler::evaluate_kernel;
use crate::model::{ModelConfig, OuModel};
use crate::multiplier::{apply_multiplier, kernel_m_eps, ApplyMode, MultiplierInput, MultiplierKernelConfig};
use crate::oracle::hermite_eigenfunction;
use crate::report::{config_hash, fmt_f64, Csv};
use crate::symbol::Symbol;
use crate::verify::{battery_models, verify_suite, NamedModel, VerifyProfile};
use crate::zeros::{theoretical_bound_estimate, zero_sweep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "ou-kernels", version, about = "Mehler kernels, multipliers and weak-type experiments for Ornstein-Uhlenbeck operators")]
struct Cli {
    #[arg(long, value_enum, global = true, default_value = "csv")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ModelArg {
    /// Model JSON file or a battery name (standard1d, standard2d, jordan2d, complex2d, random3d).
    #[arg(long, default_value = "standard1d")]
    model: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a model file and print its invariants.
    Check { path: PathBuf },
    /// Evaluate K_t(x,u), N_t and dK/dt.
    Kernel {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        t: f64,
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long, allow_hyphen_values = true)]
        u: String,
        /// Also print the spatial derivative factors.
        #[arg(long)]
        dkdt: bool,
    },
    /// Evaluate the multiplier kernel at (x,u), or apply the multiplier to a function at x.
    Multiplier {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        phi: String,
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long, allow_hyphen_values = true)]
        u: Option<String>,
        /// `he:k1,k2,...` (Hermite product) or `coord:l`.
        #[arg(long)]
        apply: Option<String>,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
    },
    /// Zero-count sweep of dK/dt over random pairs.
    Zeros {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4096)]
        grid: usize,
    },
    /// Level-set measure of a kernel operator with point-mass data.
    Weaktype {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        op: String,
        #[arg(long, default_value = "imagpow:0.5")]
        phi: String,
        #[arg(long, default_value = "10,100,1000,10000")]
        alphas: String,
        #[arg(long, default_value_t = 1_000_000)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Point mass location; defaults to the level set R = (log alpha_max)/2.
        #[arg(long, allow_hyphen_values = true)]
        point_mass: Option<String>,
    },
    /// Run the verification battery and emit the ledger.
    Verify {
        /// Model JSON files; the built-in battery when empty.
        #[arg(long, num_args = 1..)]
        models: Vec<PathBuf>,
        #[arg(long, default_value = "quick")]
        profile: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn parse_point(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| OuError::InvalidConfig(format!("bad coordinate {s:?}")))
        })
        .collect()
}

fn load_model(spec: &str) -> Result<(ModelConfig, OuModel)> {
    if let Some(nm) = battery_models().into_iter().find(|m| m.name == spec) {
        return Ok((nm.model.config(), nm.model));
    }
    let cfg = ModelConfig::from_json(&std::fs::read_to_string(spec)?)?;
    let model = cfg.build()?;
    Ok((cfg, model))
}

/// A test function for `multiplier --apply`.
fn parse_function(spec: &str, n: usize) -> Result<Box<dyn Fn(&[f64]) -> f64 + Sync>> {
    let (kind, args) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "he" => {
            let index = args
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| OuError::InvalidConfig(format!("bad index {s:?}"))))
                .collect::<Result<Vec<usize>>>()?;
            if index.len() != n {
                return Err(OuError::DimensionMismatch("Hermite index length".into()));
            }
            let he = hermite_eigenfunction(&index)?;
            Ok(Box::new(move |u: &[f64]| he.eval(u)))
        }
        "coord" => {
            let l: usize = args.trim().parse().map_err(|_| OuError::InvalidConfig(format!("bad coordinate {args:?}")))?;
            if l >= n {
                return Err(OuError::DimensionMismatch("coordinate index".into()));
            }
            Ok(Box::new(move |u: &[f64]| u[l]))
        }
        _ => Err(OuError::InvalidConfig(format!("unknown function {spec:?} (he:..., coord:l)"))),
    }
}

fn complex_fields(z: Complex64) -> [String; 2] {
    [fmt_f64(z.re), fmt_f64(z.im)]
}

/// A finished run: report text, config record and exit status.
struct Outcome {
    report: String,
    config: serde_json::Value,
    seed: u64,
    status: i32,
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let format = cli.format;
    match &cli.command {
        Command::Check { path } => {
            let cfg = ModelConfig::from_json(&std::fs::read_to_string(path)?)?;
            let model = cfg.build()?;
            let eig: Vec<[f64; 2]> = model.eig_b.iter().map(|e| [e.re, e.im]).collect();
            let report = match format {
                Format::Json => to_json(&json!({
                    "n": model.n,
                    "lyapunov_residual": model.lyapunov_residual(),
                    "eigenvalues": eig,
                    "hurwitz_margin": model.hurwitz_margin,
                })),
                Format::Csv => {
                    let mut csv = Csv::with_header("quantity,re,im");
                    csv.row(&["lyapunov_residual".into(), fmt_f64(model.lyapunov_residual()), "0".into()]);
                    csv.row(&["hurwitz_margin".into(), fmt_f64(model.hurwitz_margin), "0".into()]);
                    for e in &model.eig_b {
                        let [re, im] = complex_fields(*e);
                        csv.row(&["eigenvalue".into(), re, im]);
                    }
                    csv.finish()
                }
            };
            Ok(Outcome {
                report,
                config: json!({"command": "check", "model": cfg}),
                seed: 0,
                status: 0,
            })
        }
        Command::Kernel { model, t, x, u, dkdt } => {
            let (cfg, m) = load_model(&model.model)?;
            let (x, u) = (parse_point(x)?, parse_point(u)?);
            let mut eval = evaluate_kernel(&m, *t, &x, &u)?;
            if !dkdt {
                eval.spatial = None;
            }
            let report = match format {
                Format::Json => to_json(&eval),
                Format::Csv => {
                    let mut csv = Csv::with_header("t,K,N,dK_dt");
                    csv.row(&[fmt_f64(eval.t), fmt_f64(eval.k), fmt_f64(eval.n), fmt_f64(eval.dk_dt)]);
                    csv.finish()
                }
            };
            Ok(Outcome {
                report,
                config: json!({"command": "kernel", "model": cfg, "t": t, "x": x, "u": u, "dkdt": dkdt}),
                seed: 0,
                status: 0,
            })
        }
        Command::Multiplier {
            model,
            phi,
            x,
            u,
            apply,
            eps,
        } => {
            let (cfg, m) = load_model(&model.model)?;
            let sym = Symbol::parse(phi)?;
            let x = parse_point(x)?;
            let kcfg = MultiplierKernelConfig {
                eps: *eps,
                ..MultiplierKernelConfig::default()
            };
            let (value, label) = match (apply, u) {
                (Some(f), _) => {
                    let func = parse_function(f, m.n)?;
                    let v = apply_multiplier(&m, &sym, MultiplierInput::Function(&*func), &x, &kcfg, ApplyMode::default())?;
                    (v, f.clone())
                }
                (None, Some(u)) => {
                    let u = parse_point(u)?;
                    (kernel_m_eps(&m, &sym, &x, &u, &kcfg)?, "kernel".to_string())
                }
                (None, None) => return Err(OuError::InvalidConfig("multiplier needs --u or --apply".into())),
            };
            let report = match format {
                Format::Json => to_json(&json!({"target": label, "value": [value.value.re, value.value.im], "error": value.error})),
                Format::Csv => {
                    let mut csv = Csv::with_header("target,re,im,error");
                    let [re, im] = complex_fields(value.value);
                    csv.row(&[label, re, im, fmt_f64(value.error)]);
                    csv.finish()
                }
            };
            Ok(Outcome {
                report,
                config: json!({"command": "multiplier", "model": cfg, "phi": sym.spec_string(), "x": x, "u": u, "apply": apply, "eps": eps}),
                seed: 0,
                status: 0,
            })
        }
        Command::Zeros {
            model,
            samples,
            seed,
            grid,
        } => {
            let (cfg, m) = load_model(&model.model)?;
            let sweep = zero_sweep(&m, *samples, *seed, *grid)?;
            let report = match format {
                Format::Json => to_json(&json!({
                    "histogram": sweep.histogram,
                    "max_count": sweep.max_count,
                    "heuristic_bound": theoretical_bound_estimate(&m),
                })),
                Format::Csv => sweep.to_csv(),
            };
            Ok(Outcome {
                report,
                config: json!({"command": "zeros", "model": cfg, "samples": samples, "seed": seed, "grid": grid}),
                seed: *seed,
                status: 0,
            })
        }
        Command::Weaktype {
            model,
            op,
            phi,
            alphas,
            budget,
            seed,
            point_mass,
        } => {
            let (cfg, _) = load_model(&model.model)?;
            let op: Operator = op.parse()?;
            let mut exp = ExperimentConfig::new(cfg, &Symbol::parse(phi)?.spec_string());
            exp.alpha_grid = parse_point(alphas)?;
            exp.mc_budget = *budget;
            exp.seed = *seed;
            exp.point_mass = point_mass.as_deref().map(parse_point).transpose()?;
            let rep = weak_type_scan(&exp, op)?;
            let report = match format {
                Format::Json => to_json(&rep),
                Format::Csv => rep.to_csv(),
            };
            Ok(Outcome {
                report,
                config: json!({"command": "weaktype", "operator": op, "experiment": exp}),
                seed: *seed,
                status: 0,
            })
        }
        Command::Verify { models, profile, seed } => {
            let mut prof = VerifyProfile::parse(profile)?;
            prof.seed = *seed;
            let named = if models.is_empty() {
                battery_models()
            } else {
                models
                    .iter()
                    .map(|p| {
                        let cfg = ModelConfig::from_json(&std::fs::read_to_string(p)?)?;
                        let name = p.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
                        NamedModel::from_config(&name, &cfg)
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            let ledger = verify_suite(&named, &prof)?;
            let failed = ledger.iter().filter(|e| !e.pass).count();
            let report = match format {
                Format::Json => to_json(&ledger),
                Format::Csv => {
                    let mut csv = Csv::with_header("check_id,module,value,tol,pass");
                    for e in &ledger {
                        csv.row(&[e.check_id.clone(), e.module.clone(), fmt_f64(e.value), fmt_f64(e.tol), e.pass.to_string()]);
                    }
                    csv.finish()
                }
            };
            let names: Vec<&str> = named.iter().map(|m| m.name.as_str()).collect();
            Ok(Outcome {
                report,
                config: json!({"command": "verify", "models": names, "profile": profile, "seed": seed}),
                seed: *seed,
                status: if failed == 0 { 0 } else { 1 },
            })
        }
    }
}

/// Parses `argv` (including the program name), runs the command and writes
/// the report to `stdout` or `--out`. Returns the exit status.
pub fn run_cli_with(argv: &[String], stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let start = Instant::now();
    let outcome = match execute(&cli) {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return 1;
        }
    };
    let _ = writeln!(stderr, "config_hash={} seed={}", config_hash(&outcome.config), outcome.seed);
    let written = match &cli.out {
        Some(path) => std::fs::write(path, &outcome.report),
        None => stdout.write_all(outcome.report.as_bytes()),
    };
    if let Err(e) = written {
        let _ = writeln!(stderr, "error: {e}");
        return 1;
    }
    let _ = writeln!(stderr, "runtime_seconds={:.3}", start.elapsed().as_secs_f64());
    outcome.status
}

pub fn run_cli(argv: &[String]) -> i32 {
    run_cli_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let argv: Vec<String> = std::iter::once("ou-kernels").chain(args.iter().copied()).map(String::from).collect();
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_cli_with(&argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn kernel_round_trip() {
        let (code, out, err) = run(&["kernel", "--t", "0.5", "--x", "1", "--u", "0"]);
        assert_eq!(code, 0, "{err}");
        let m = OuModel::standard(1);
        let e = evaluate_kernel(&m, 0.5, &[1.0], &[0.0]).unwrap();
        let line = out.lines().nth(1).unwrap();
        let fields: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(fields, vec![0.5, e.k, e.n, e.dk_dt]);
        assert!(err.contains("config_hash=") && err.contains("seed="));
    }

    #[test]
    fn usage_errors_exit_nonzero() {
        assert_eq!(run(&["kernel", "--t", "0.5"]).0, 2);
        assert_eq!(run(&["bogus"]).0, 2);
        assert_eq!(run(&["weaktype", "--op", "nope", "--budget", "10000"]).0, 1);
        assert_eq!(run(&["weaktype", "--op", "M1", "--alphas", "1.5,10", "--budget", "10000"]).0, 1);
    }

    #[test]
    fn weaktype_schema() {
        let (code, out, err) = run(&["weaktype", "--op", "M_full", "--phi", "imagpow:0.5", "--alphas", "10,100", "--budget", "20000", "--seed", "4"]);
        assert_eq!(code, 0, "{err}");
        let mut lines = out.lines();
        assert_eq!(lines.next().unwrap(), "alpha,measure,stderr,alpha_measure,alpha_sqrtlog_measure");
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn multiplier_application_and_kernel() {
        let (code, out, _) = run(&["multiplier", "--phi", "const", "--x", "0.7", "--apply", "he:2", "--format", "json"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!((v["value"][0].as_f64().unwrap() - (0.49 - 1.0)).abs() < 1e-8);
        let (code, _, _) = run(&["multiplier", "--phi", "indicator:0.5,2", "--x", "0.7", "--u", "-0.3"]);
        assert_eq!(code, 0);
    }

    #[test]
    fn check_models_directory() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/models/jordan2d.json");
        let (code, out, _) = run(&["check", path, "--format", "json"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["hurwitz_margin"].as_f64().unwrap(), 1.0);
    }
}
