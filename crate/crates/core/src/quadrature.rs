//! One-dimensional quadrature: adaptive Gauss–Kronrod (21 point) for
//! scalar, complex and matrix valued integrands, fixed composite
//! Gauss–Legendre rules for precomputed time tables, and Gauss–Hermite
//! rules for Gaussian expectations.

use std::ops::{Add, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{OuError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    pub log_substitution: bool,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-11,
            abs_tol: 1e-14,
            max_subdivisions: 400,
            log_substitution: true,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(OuError::InvalidConfig("quadrature tolerances must be positive".into()));
        }
        if self.max_subdivisions < 8 {
            return Err(OuError::InvalidConfig("max_subdivisions must be at least 8".into()));
        }
        Ok(())
    }
}

/// Values an adaptive rule can accumulate.
pub trait QuadValue: Clone + Add<Output = Self> + Sub<Output = Self> {
    fn scaled(&self, s: f64) -> Self;
    fn magnitude(&self) -> f64;
}

impl QuadValue for f64 {
    fn scaled(&self, s: f64) -> Self {
        self * s
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn scaled(&self, s: f64) -> Self {
        self * s
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

impl QuadValue for DMatrix<f64> {
    fn scaled(&self, s: f64) -> Self {
        self.scale(s)
    }
    fn magnitude(&self) -> f64 {
        self.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

impl QuadValue for DMatrix<Complex64> {
    fn scaled(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }
    fn magnitude(&self) -> f64 {
        self.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.0,
];
const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077600525690417,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

fn gk21<V: QuadValue, F: FnMut(f64) -> V>(f: &mut F, a: f64, b: f64) -> (V, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc.scaled(WGK[10]);
    let mut gauss: Option<V> = None;
    for j in 0..10 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron = kron + s.scaled(WGK[j]);
        if j % 2 == 1 {
            let term = s.scaled(WG[j / 2]);
            gauss = Some(match gauss {
                None => term,
                Some(g) => g + term,
            });
        }
    }
    let kron = kron.scaled(h);
    let gauss = gauss.expect("ten point gauss rule").scaled(h);
    let err = (kron.clone() - gauss).magnitude();
    (kron, err)
}

#[derive(Debug, Clone)]
pub struct QuadResult<V> {
    pub value: V,
    pub error: f64,
    pub subdivisions: usize,
}

/// Globally adaptive Gauss–Kronrod integration over the partition given by
/// `points` (at least two increasing abscissae).
pub fn integrate_points<V, F>(mut f: F, points: &[f64], spec: &QuadratureSpec) -> Result<QuadResult<V>>
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    if points.len() < 2 {
        return Err(OuError::InvalidConfig("need at least two integration points".into()));
    }
    let mut segs: Vec<(f64, f64, V, f64)> = Vec::with_capacity(spec.max_subdivisions + points.len());
    for w in points.windows(2) {
        if !(w[1] > w[0]) {
            return Err(OuError::InvalidConfig(format!(
                "integration points must increase: {} then {}",
                w[0], w[1]
            )));
        }
        let (v, e) = gk21(&mut f, w[0], w[1]);
        segs.push((w[0], w[1], v, e));
    }
    let mut subdivisions = segs.len();
    loop {
        let mut total = segs[0].2.clone();
        for s in &segs[1..] {
            total = total + s.2.clone();
        }
        let err: f64 = segs.iter().map(|s| s.3).sum();
        let tol = spec.abs_tol.max(spec.rel_tol * total.magnitude());
        if err <= tol {
            return Ok(QuadResult {
                value: total,
                error: err,
                subdivisions,
            });
        }
        if !err.is_finite() {
            return Err(OuError::NonConvergence("non-finite integrand".into()));
        }
        if subdivisions >= spec.max_subdivisions {
            return Err(OuError::NonConvergence(format!(
                "error estimate {err:e} above tolerance {tol:e} after {subdivisions} subdivisions"
            )));
        }
        let (idx, _) = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap_or(std::cmp::Ordering::Equal))
            .expect("non-empty");
        let (a, b, _, _) = segs.swap_remove(idx);
        let m = 0.5 * (a + b);
        if !(m > a && m < b) {
            return Err(OuError::NonConvergence("interval collapsed below machine resolution".into()));
        }
        let (v1, e1) = gk21(&mut f, a, m);
        let (v2, e2) = gk21(&mut f, m, b);
        segs.push((a, m, v1, e1));
        segs.push((m, b, v2, e2));
        subdivisions += 1;
    }
}

pub fn integrate<V, F>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<QuadResult<V>>
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    integrate_points(f, &[a, b], spec)
}

/// Integrates over `[a, b] ⊂ (0, ∞)` in the variable `τ = ln t`.
pub fn integrate_log<V, F>(mut f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<QuadResult<V>>
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    if !(a > 0.0) {
        return Err(OuError::InvalidConfig("log substitution needs a positive lower limit".into()));
    }
    let (la, lb) = (a.ln(), b.ln());
    // One unit panels in ln t so that peaks of width O(1) are seen by the first pass.
    let panels = ((lb - la).ceil() as usize).clamp(1, 64);
    let pts: Vec<f64> = (0..=panels)
        .map(|i| la + (lb - la) * i as f64 / panels as f64)
        .collect();
    integrate_points(
        |tau| {
            let t = tau.exp();
            f(t).scaled(t)
        },
        &pts,
        spec,
    )
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..(m + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..m {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = m as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[m - 1 - i] = wi;
    }
    (x, w)
}

/// Probabilists' Gauss–Hermite rule: `∫ f dN(0,1) ≈ Σ w_i f(x_i)`.
pub fn gauss_hermite_prob(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(m, m);
    for k in 1..m {
        let b = (k as f64).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = j.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    (pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
}

/// A fixed rule `Σ w_i f(t_i)`.
#[derive(Debug, Clone, Default)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Composite Gauss–Legendre on `[a, b]` with panels of width at most `width`.
    pub fn linear_panels(a: f64, b: f64, width: f64, order: usize) -> Rule {
        let (gx, gw) = gauss_legendre(order);
        let panels = (((b - a) / width).ceil() as usize).max(1);
        let h = (b - a) / panels as f64;
        let mut r = Rule::default();
        for p in 0..panels {
            let lo = a + p as f64 * h;
            for (x, w) in gx.iter().zip(&gw) {
                r.nodes.push(lo + 0.5 * h * (x + 1.0));
                r.weights.push(0.5 * h * w);
            }
        }
        r
    }

    /// Composite Gauss–Legendre in `ln t` on `[a, b]`, weights already
    /// include the Jacobian `t`.
    pub fn log_panels(a: f64, b: f64, width: f64, order: usize) -> Rule {
        let inner = Rule::linear_panels(a.ln(), b.ln(), width, order);
        Rule {
            nodes: inner.nodes.iter().map(|tau| tau.exp()).collect(),
            weights: inner
                .nodes
                .iter()
                .zip(&inner.weights)
                .map(|(tau, w)| w * tau.exp())
                .collect(),
        }
    }

    pub fn concat(mut self, other: Rule) -> Rule {
        self.nodes.extend(other.nodes);
        self.weights.extend(other.weights);
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}
