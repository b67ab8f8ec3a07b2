//! Multiplier kernels of Laplace transform type.
//!
//! For a symbol `φ` the operator `m(ℒ)` has the kernel
//! `M(x, u) = −∫₀^∞ φ(t) ∂_t K_t(x, u) dt` with respect to `γ_∞`. It is split
//! at `t = 1` into the singular piece `M_0` over `(0, 1]` and the smooth
//! piece `M_1` over `[1, ∞)`. Kernels are complex because `φ` may be.

use std::cell::RefCell;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OuError, Result};
use crate::frame::TimeFrame;
use crate::geometry::quadratic_form_r;
use crate::linalg::{matvec, norm};
use crate::mehler::{log_script_and_n, mehler_k, LOG_OVERFLOW};
use crate::model::OuModel;
use crate::quadrature::{gauss_hermite_prob, integrate_points, QuadratureSpec};
use crate::report::BoundFit;
use crate::seeded_rng;
use crate::symbol::Symbol;

/// Lower cut `ε`, split time and truncation for the kernel quadratures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplierKernelConfig {
    pub eps: f64,
    pub t_split: f64,
    pub quad: QuadratureSpec,
    /// Defaults to `max(20, 40/c)` with `c` the Hurwitz margin.
    pub t_max: Option<f64>,
}

impl Default for MultiplierKernelConfig {
    fn default() -> Self {
        MultiplierKernelConfig {
            eps: 0.0,
            t_split: 1.0,
            quad: QuadratureSpec::default(),
            t_max: None,
        }
    }
}

impl MultiplierKernelConfig {
    pub fn resolved_t_max(&self, model: &OuModel) -> f64 {
        self.t_max.unwrap_or_else(|| 20f64.max(40.0 / model.hurwitz_margin))
    }
}

/// A kernel value with its certified error: quadrature estimate plus
/// truncation remainders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelValue {
    pub value: Complex64,
    pub error: f64,
}

impl KernelValue {
    fn zero() -> KernelValue {
        KernelValue {
            value: Complex64::new(0.0, 0.0),
            error: 0.0,
        }
    }
}

impl std::ops::Add for KernelValue {
    type Output = KernelValue;
    fn add(self, o: KernelValue) -> KernelValue {
        KernelValue {
            value: self.value + o.value,
            error: self.error + o.error,
        }
    }
}

/// `m^{(order)}(λ)`.
pub fn symbol_m_eval(sym: &Symbol, lambda: Complex64, order: usize) -> Result<Complex64> {
    sym.m_eval(lambda, order)
}

/// `(φ(t) ∂_t K_t, log K_t, N_t)` at a single time.
fn weighted_dkdt(model: &OuModel, sym: &Symbol, t: f64, x: &[f64], u: &[f64], r: f64) -> Result<(Complex64, f64, f64)> {
    let frame = TimeFrame::new(model, t)?;
    let (ls, nt) = log_script_and_n(&frame, x, u);
    let lk = ls + r;
    if lk > LOG_OVERFLOW {
        return Err(OuError::Overflow(format!("log K = {lk:e} at t = {t}")));
    }
    Ok((sym.phi(t) * (lk.exp() * nt), lk, nt))
}

/// Restricts `[lo, hi]` to the support of `φ`.
fn support(sym: &Symbol, lo: f64, hi: f64) -> Option<(f64, f64)> {
    let (lo, hi) = match sym {
        Symbol::Indicator { a, b } => (lo.max(*a), hi.min(*b)),
        _ => (lo, hi),
    };
    (hi > lo).then_some((lo, hi))
}

fn with_breakpoints(sym: &Symbol, mut pts: Vec<f64>) -> Vec<f64> {
    let (lo, hi) = (pts[0], pts[pts.len() - 1]);
    pts.extend(sym.breakpoints().into_iter().filter(|&b| b > lo && b < hi));
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite abscissae"));
    pts.dedup();
    pts
}

/// `−∫ φ ∂_t K` over `[lo, hi] ⊂ (0, ∞)` in the variable `ln t`.
fn integrate_log_range(
    model: &OuModel,
    sym: &Symbol,
    x: &[f64],
    u: &[f64],
    lo: f64,
    hi: f64,
    quad: &QuadratureSpec,
) -> Result<KernelValue> {
    let r = quadratic_form_r(model, x);
    let (la, lb) = (lo.ln(), hi.ln());
    let panels = ((lb - la).ceil() as usize).max(1);
    let mut pts: Vec<f64> = (0..=panels).map(|i| la + (lb - la) * i as f64 / panels as f64).collect();
    pts.extend(sym.breakpoints().into_iter().filter(|&b| b > lo && b < hi).map(f64::ln));
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    pts.dedup();
    let spec = QuadratureSpec {
        max_subdivisions: quad.max_subdivisions + pts.len(),
        ..*quad
    };
    let failure = RefCell::new(None);
    let res = integrate_points(
        |tau: f64| {
            let t = tau.exp();
            match weighted_dkdt(model, sym, t, x, u, r) {
                Ok((v, _, _)) => -v * t,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    Complex64::new(0.0, 0.0)
                }
            }
        },
        &pts,
        &spec,
    )?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(KernelValue {
        value: res.value,
        error: res.error,
    })
}

/// `−∫ φ ∂_t K` over `[lo, hi] ⊂ [1, ∞)` on doubling panels.
fn integrate_linear_range(
    model: &OuModel,
    sym: &Symbol,
    x: &[f64],
    u: &[f64],
    lo: f64,
    hi: f64,
    quad: &QuadratureSpec,
) -> Result<KernelValue> {
    let r = quadratic_form_r(model, x);
    let mut pts = vec![lo];
    let mut t = lo.max(0.5);
    while 2.0 * t < hi {
        t *= 2.0;
        if t > lo {
            pts.push(t);
        }
    }
    pts.push(hi);
    let pts = with_breakpoints(sym, pts);
    let spec = QuadratureSpec {
        max_subdivisions: quad.max_subdivisions + pts.len(),
        ..*quad
    };
    let failure = RefCell::new(None);
    let res = integrate_points(
        |t: f64| match weighted_dkdt(model, sym, t, x, u, r) {
            Ok((v, _, _)) => -v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                Complex64::new(0.0, 0.0)
            }
        },
        &pts,
        &spec,
    )?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(KernelValue {
        value: res.value,
        error: res.error,
    })
}

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

/// True when `|x − u| < 1e−8 (1 + |x|)`.
pub fn is_near_diagonal(x: &[f64], u: &[f64]) -> bool {
    let d: f64 = x.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    d < 1e-8 * (1.0 + norm(x))
}

/// Lower truncation for the `(0, 1]` integral: halves `t` until the
/// envelope `K_t (1 + t|N_t|)` has fallen `e^{-41}` below its running peak.
/// Returns `(t_min, |φ ∂_t K| t_min)`, the latter bounding the discarded part.
pub fn lower_truncation(model: &OuModel, sym: &Symbol, x: &[f64], u: &[f64], upper: f64) -> Result<(f64, f64)> {
    let r = quadratic_form_r(model, x);
    let mut t = upper;
    let mut peak = f64::NEG_INFINITY;
    let mut falling = 0;
    loop {
        let (v, lk, nt) = weighted_dkdt(model, sym, t, x, u, r)?;
        let envelope = lk + (1.0 + t * nt.abs()).ln();
        if envelope > peak {
            peak = envelope;
            falling = 0;
        } else {
            falling += 1;
        }
        if falling >= 3 && envelope < peak - 41.0 {
            return Ok((t, v.norm() * t));
        }
        t *= 0.5;
        if t < 1e-60 {
            return Err(OuError::NonConvergence(format!(
                "integrand of the singular piece has not decayed at t = {t:e}"
            )));
        }
    }
}

/// `M_ε(x, u) = −∫_ε^∞ φ(t) ∂_t K_t(x, u) dt`; `ε = 0` requires `x ≠ u`.
pub fn kernel_m_eps(model: &OuModel, sym: &Symbol, x: &[f64], u: &[f64], cfg: &MultiplierKernelConfig) -> Result<KernelValue> {
    check_points(model, x, u)?;
    let split = cfg.t_split;
    let mut total = KernelValue::zero();
    if cfg.eps < split {
        total = total + small_piece(model, sym, x, u, cfg.eps, split, cfg)?;
    }
    total = total + large_piece(model, sym, x, u, cfg.eps.max(split), cfg)?;
    Ok(total)
}

fn small_piece(
    model: &OuModel,
    sym: &Symbol,
    x: &[f64],
    u: &[f64],
    eps: f64,
    split: f64,
    cfg: &MultiplierKernelConfig,
) -> Result<KernelValue> {
    let Some((lo, hi)) = support(sym, eps, split) else {
        return Ok(KernelValue::zero());
    };
    if lo > 0.0 {
        return integrate_log_range(model, sym, x, u, lo, hi, &cfg.quad);
    }
    if is_near_diagonal(x, u) {
        return Err(OuError::DiagonalPoint);
    }
    let (t_min, remainder) = lower_truncation(model, sym, x, u, hi)?;
    let mut v = integrate_log_range(model, sym, x, u, t_min, hi, &cfg.quad)?;
    v.error += remainder;
    Ok(v)
}

fn large_piece(
    model: &OuModel,
    sym: &Symbol,
    x: &[f64],
    u: &[f64],
    from: f64,
    cfg: &MultiplierKernelConfig,
) -> Result<KernelValue> {
    let t_max = cfg.resolved_t_max(model).max(from);
    let Some((lo, hi)) = support(sym, from, t_max) else {
        return Ok(KernelValue::zero());
    };
    let mut v = integrate_linear_range(model, sym, x, u, lo, hi, &cfg.quad)?;
    let reaches_tail = match sym {
        Symbol::Indicator { b, .. } => *b > t_max,
        _ => true,
    };
    if reaches_tail {
        // ∂_t K decays like e^{−ct}; the remainder is at most |integrand(t_max)|/c.
        let (end, _, _) = weighted_dkdt(model, sym, t_max, x, u, quadratic_form_r(model, x))?;
        v.error += end.norm() / model.hurwitz_margin;
    }
    Ok(v)
}

/// `M_1(x, u) = −∫_1^∞ φ ∂_t K dt`.
pub fn kernel_m1(model: &OuModel, sym: &Symbol, x: &[f64], u: &[f64], cfg: &MultiplierKernelConfig) -> Result<KernelValue> {
    check_points(model, x, u)?;
    large_piece(model, sym, x, u, cfg.t_split, cfg)
}

/// `M_0(x, u) = −∫_0^1 φ ∂_t K dt`, defined for `x ≠ u`.
pub fn kernel_m0(model: &OuModel, sym: &Symbol, x: &[f64], u: &[f64], cfg: &MultiplierKernelConfig) -> Result<KernelValue> {
    check_points(model, x, u)?;
    if is_near_diagonal(x, u) {
        return Err(OuError::DiagonalPoint);
    }
    small_piece(model, sym, x, u, 0.0, cfg.t_split, cfg)
}

/// Closed form of `M_ε` for `φ = 1_{(a,b]}`: `K_{max(a,ε)} − K_b` with
/// `K_0 = 0` off the diagonal and `K_∞ = 1`.
pub fn indicator_endpoint_difference(model: &OuModel, a: f64, b: f64, eps: f64, x: &[f64], u: &[f64]) -> Result<f64> {
    let lo = a.max(eps);
    if b <= lo {
        return Ok(0.0);
    }
    let k_lo = if lo == 0.0 {
        if is_near_diagonal(x, u) {
            return Err(OuError::DiagonalPoint);
        }
        0.0
    } else {
        mehler_k(model, lo, x, u)?
    };
    let k_hi = if b.is_finite() { mehler_k(model, b, x, u)? } else { 1.0 };
    Ok(k_lo - k_hi)
}

/// The function a multiplier is applied to.
pub enum MultiplierInput<'a> {
    Function(&'a (dyn Fn(&[f64]) -> f64 + Sync)),
    PointMass(&'a [f64]),
}

/// How the `γ_∞`-integral in function mode is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ApplyMode {
    /// Tensor Gauss–Hermite rule over the transition law, exact for polynomials of
    /// degree below `2·nodes_per_dim − 2`.
    Quadrature { nodes_per_dim: usize },
    /// Exact-transition Monte Carlo with common random numbers across `t`.
    MonteCarlo { budget: usize, seed: u64 },
}

impl Default for ApplyMode {
    fn default() -> Self {
        ApplyMode::Quadrature { nodes_per_dim: 12 }
    }
}

fn standard_nodes(n: usize, mode: ApplyMode) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    match mode {
        ApplyMode::Quadrature { nodes_per_dim } => {
            if n > 3 {
                return Err(OuError::InvalidConfig(format!(
                    "tensor quadrature supports n <= 3, got {n}; use Monte Carlo"
                )));
            }
            let (z, w) = gauss_hermite_prob(nodes_per_dim);
            let total = nodes_per_dim.pow(n as u32);
            let mut pts = Vec::with_capacity(total);
            let mut wts = Vec::with_capacity(total);
            for idx in 0..total {
                let mut rem = idx;
                let mut p = Vec::with_capacity(n);
                let mut wt = 1.0;
                for _ in 0..n {
                    let j = rem % nodes_per_dim;
                    rem /= nodes_per_dim;
                    p.push(z[j]);
                    wt *= w[j];
                }
                pts.push(p);
                wts.push(wt);
            }
            Ok((pts, wts))
        }
        ApplyMode::MonteCarlo { budget, seed } => {
            if budget == 0 {
                return Err(OuError::InvalidConfig("Monte Carlo budget must be positive".into()));
            }
            let mut rng = seeded_rng(seed, 7);
            let pts = (0..budget)
                .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            Ok((pts, vec![1.0 / budget as f64; budget]))
        }
    }
}

/// `∂_t (H_t f)(x) = E[N_t(x, U) f(U)]` with `U ~ N(e^{tB}x, Q_t)`.
fn semigroup_derivative(
    model: &OuModel,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x: &[f64],
    t: f64,
    nodes: &(Vec<Vec<f64>>, Vec<f64>),
) -> Result<f64> {
    let n = model.n;
    let frame = TimeFrame::new(model, t)?;
    let chol = frame
        .qt
        .clone()
        .cholesky()
        .ok_or_else(|| OuError::NotSpd(format!("Q_t at t = {t}")))?;
    let l = chol.l();
    let mut mean = vec![0.0; n];
    matvec(&frame.exp_tb, x, &mut mean);
    let mut u = vec![0.0; n];
    let mut acc = 0.0;
    for (xi, w) in nodes.0.iter().zip(&nodes.1) {
        matvec(&l, xi, &mut u);
        for i in 0..n {
            u[i] += mean[i];
        }
        let (_, nt) = log_script_and_n(&frame, x, &u);
        acc += w * nt * f(&u);
    }
    Ok(acc)
}

/// `m(ℒ)f(x)`: for a function, `−∫₀^∞ φ(t) ∂_t H_t f(x) dt` with the inner
/// `γ_∞`-integral by [`ApplyMode`]; for a point mass at `u₀`, `M_1(x,u₀) + M_0(x,u₀)`.
pub fn apply_multiplier(
    model: &OuModel,
    sym: &Symbol,
    input: MultiplierInput<'_>,
    x: &[f64],
    cfg: &MultiplierKernelConfig,
    mode: ApplyMode,
) -> Result<KernelValue> {
    match input {
        MultiplierInput::PointMass(u0) => {
            Ok(kernel_m1(model, sym, x, u0, cfg)? + kernel_m0(model, sym, x, u0, cfg)?)
        }
        MultiplierInput::Function(f) => {
            if x.len() != model.n {
                return Err(OuError::DimensionMismatch(format!("x has dimension {}", x.len())));
            }
            let nodes = standard_nodes(model.n, mode)?;
            let failure = RefCell::new(None);
            let g = |t: f64| -> Complex64 {
                match semigroup_derivative(model, f, x, t, &nodes) {
                    Ok(v) => -sym.phi(t) * v,
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        Complex64::new(0.0, 0.0)
                    }
                }
            };
            // ∂_t H_t f stays bounded as t → 0 for smooth f, so the cut at 1e-14 costs O(1e-14).
            let t_lo = 1e-14;
            let t_max = cfg.resolved_t_max(model);
            let quad = QuadratureSpec {
                rel_tol: cfg.quad.rel_tol.max(1e-10),
                abs_tol: cfg.quad.abs_tol.max(1e-10),
                ..cfg.quad
            };
            let mut total = KernelValue::zero();
            if let Some((lo, hi)) = support(sym, t_lo, 1.0) {
                let (la, lb) = (lo.ln(), hi.ln());
                let panels = ((lb - la).ceil() as usize).max(1);
                let pts: Vec<f64> = (0..=panels).map(|i| la + (lb - la) * i as f64 / panels as f64).collect();
                let pts = with_breakpoints_log(sym, pts);
                let spec = QuadratureSpec {
                    max_subdivisions: quad.max_subdivisions + pts.len(),
                    ..quad
                };
                let r = integrate_points(
                    |tau: f64| {
                        let t = tau.exp();
                        g(t) * t
                    },
                    &pts,
                    &spec,
                )?;
                total = total
                    + KernelValue {
                        value: r.value,
                        error: r.error + t_lo,
                    };
            }
            if let Some((lo, hi)) = support(sym, 1.0, t_max) {
                let mut pts = vec![lo];
                let mut t = lo.max(1.0);
                while 2.0 * t < hi {
                    t *= 2.0;
                    pts.push(t);
                }
                pts.push(hi);
                let pts = with_breakpoints(sym, pts);
                let spec = QuadratureSpec {
                    max_subdivisions: quad.max_subdivisions + pts.len(),
                    ..quad
                };
                let r = integrate_points(g, &pts, &spec)?;
                total = total
                    + KernelValue {
                        value: r.value,
                        error: r.error + g(t_max).norm() / model.hurwitz_margin,
                    };
            }
            if let Some(e) = failure.into_inner() {
                return Err(e);
            }
            Ok(total)
        }
    }
}

fn with_breakpoints_log(sym: &Symbol, mut pts: Vec<f64>) -> Vec<f64> {
    let (lo, hi) = (pts[0], pts[pts.len() - 1]);
    pts.extend(sym.breakpoints().into_iter().map(f64::ln).filter(|&b| b > lo && b < hi));
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite abscissae"));
    pts.dedup();
    pts
}

/// Groups eigenvalues closer than `1e-4 (1 + |λ|)`; a gap inside
/// `[1e-4, 1e-2] (1 + |λ|)` is ambiguous.
pub(crate) fn cluster_spectrum(eigs: &[Complex64]) -> Result<Vec<(Complex64, usize)>> {
    let n = eigs.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn find(label: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while label[r] != r {
            r = label[r];
        }
        label[i] = r;
        r
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let scale = 1.0 + eigs[i].norm().max(eigs[j].norm());
            let gap = (eigs[i] - eigs[j]).norm() / scale;
            if gap < 1e-4 {
                let (a, b) = (find(&mut label, i), find(&mut label, j));
                label[a.max(b)] = a.min(b);
            } else if gap < 1e-2 {
                return Err(OuError::DefectiveStructureTolerance(format!(
                    "eigenvalues {} and {} are neither separated nor merged",
                    eigs[i], eigs[j]
                )));
            }
        }
    }
    let mut groups: Vec<(usize, Complex64, usize)> = Vec::new();
    for i in 0..n {
        let root = find(&mut label, i);
        match groups.iter_mut().find(|g| g.0 == root) {
            Some(g) => {
                g.1 += eigs[i];
                g.2 += 1;
            }
            None => groups.push((root, eigs[i], 1)),
        }
    }
    Ok(groups.into_iter().map(|(_, s, k)| (s / k as f64, k)).collect())
}

/// `m(−Bᵀ)`, the exact action of `m(ℒ)` on linear polynomials:
/// `m(ℒ)⟨v, ·⟩ = ⟨m(−Bᵀ)v, ·⟩`.
///
/// On each generalized eigenspace of `−Bᵀ` the action is the finite series
/// `Σ_k m^{(k)}(λ)/k! (−Bᵀ − λ)^k`; the blocks are assembled at once through
/// the confluent Hermite interpolant of `m` on the clustered spectrum.
pub fn linear_poly_multiplier_matrix(model: &OuModel, sym: &Symbol) -> Result<DMatrix<Complex64>> {
    if !sym.has_closed_form() {
        return Err(OuError::InvalidConfig(
            "linear polynomial action needs a symbol with closed-form derivatives".into(),
        ));
    }
    let n = model.n;
    let eigs: Vec<Complex64> = model.eig_b.iter().map(|l| -l).collect();
    let clusters = cluster_spectrum(&eigs)?;
    let mut nodes = Vec::with_capacity(n);
    let mut owner = Vec::with_capacity(n);
    for (c, (lambda, mult)) in clusters.iter().enumerate() {
        for _ in 0..*mult {
            nodes.push(*lambda);
            owner.push(c);
        }
    }
    // Confluent divided differences, column by column.
    let mut col: Vec<Complex64> = nodes.iter().map(|z| sym.m_eval(*z, 0)).collect::<Result<_>>()?;
    let mut coeffs = vec![col[0]];
    let mut factorial = 1.0;
    for j in 1..n {
        factorial *= j as f64;
        let mut next = Vec::with_capacity(n - j);
        for i in 0..(n - j) {
            if owner[i] == owner[i + j] {
                next.push(sym.m_eval(nodes[i], j)? / factorial);
            } else {
                next.push((col[i + 1] - col[i]) / (nodes[i + j] - nodes[i]));
            }
        }
        col = next;
        coeffs.push(col[0]);
    }
    let a: DMatrix<Complex64> = (-model.b.transpose()).map(|v| Complex64::new(v, 0.0));
    let id = DMatrix::<Complex64>::identity(n, n);
    let mut product = id.clone();
    let mut out = DMatrix::<Complex64>::zeros(n, n);
    for (k, c) in coeffs.iter().enumerate() {
        out += &product * *c;
        if k + 1 < n {
            product = &product * (&a - &id * nodes[k]);
        }
    }
    Ok(out)
}

/// Kernel battery: `x ~ x_scale·γ_∞` and `u = x + r·θ` with `r` log-uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub count: usize,
    pub x_scale: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub seed: u64,
}

pub fn sample_pairs(model: &OuModel, spec: &PairSpec) -> Vec<(Vec<f64>, Vec<f64>)> {
    let n = model.n;
    let mut rng = seeded_rng(spec.seed, 31);
    (0..spec.count)
        .map(|_| {
            let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * spec.x_scale).collect();
            let mut x = vec![0.0; n];
            matvec(&model.q_inf_sqrt, &z, &mut x);
            let dir: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let dn = norm(&dir);
            let r = (spec.r_min.ln() + rng.random::<f64>() * (spec.r_max / spec.r_min).ln()).exp();
            let u = x.iter().zip(&dir).map(|(a, d)| a + r * d / dn).collect();
            (x, u)
        })
        .collect()
}

/// `sup |M_1(x,u)| e^{−R(x)}` over a battery.
pub fn m1_bound_fit(model: &OuModel, sym: &Symbol, spec: &PairSpec, cfg: &MultiplierKernelConfig) -> Result<BoundFit> {
    let mut ratios = Vec::with_capacity(spec.count);
    for (x, u) in sample_pairs(model, spec) {
        let v = kernel_m1(model, sym, &x, &u, cfg)?;
        ratios.push(v.value.norm() * (-quadratic_form_r(model, &x)).exp());
    }
    Ok(BoundFit::upper("M1_times_exp_minus_R", &ratios))
}

/// Result of fitting the exponent in `|M_0| ≲ e^{R(x)} (1+|x|)^C |x−u|^{−C}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct M0ExponentFit {
    /// Smallest exponent on the grid `0, ½, …, 10` for which the supremum over
    /// the closest quarter of the pairs is within twice that over the rest;
    /// `None` flags that no such exponent exists.
    pub exponent: Option<f64>,
    pub fit: BoundFit,
}

pub fn m0_exponent_fit(model: &OuModel, sym: &Symbol, spec: &PairSpec, cfg: &MultiplierKernelConfig) -> Result<M0ExponentFit> {
    let mut rows: Vec<(f64, f64, f64)> = Vec::with_capacity(spec.count);
    for (x, u) in sample_pairs(model, spec) {
        let v = kernel_m0(model, sym, &x, &u, cfg)?;
        let dist = x.iter().zip(&u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        rows.push((v.value.norm() * (-quadratic_form_r(model, &x)).exp(), 1.0 + norm(&x), dist));
    }
    rows.sort_by(|a, b| a.2.partial_cmp(&b.2).expect("finite distances"));
    let closest = rows.len() / 4;
    let ratios = |c: f64, rows: &[(f64, f64, f64)]| -> Vec<f64> {
        rows.iter().map(|(v, s, d)| v * s.powf(-c) * d.powf(c)).collect()
    };
    for k in 0..=20 {
        let c = 0.5 * k as f64;
        let full = BoundFit::upper(&format!("M0_offdiag_C{c}"), &ratios(c, &rows));
        let near = BoundFit::upper("near", &ratios(c, &rows[..closest]));
        let far = BoundFit::upper("far", &ratios(c, &rows[closest..]));
        if full.big_c.is_finite() && near.big_c <= 2.0 * far.big_c {
            return Ok(M0ExponentFit {
                exponent: Some(c),
                fit: full,
            });
        }
    }
    Ok(M0ExponentFit {
        exponent: None,
        fit: BoundFit::upper("M0_offdiag_C10", &ratios(10.0, &rows)),
    })
}
