//! Local/global splitting: a maximal packing by balls `B(x_j, 1/(1+|x_j|))`,
//! smooth cutoffs `r_j` (a partition of unity subordinate to `4B_j`) and
//! `r̃_j` (equal to one on `5B_j`), the joint cutoff
//! `η(x,u) = Σ_j r̃_j(x) r_j(u)`, and the local kernel
//! `Q(x,u) = e^{−R(x)} M_0(x,u) η(x,u)` with its gradients.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OuError, Result};
use crate::frame::{FrameTable, TimeFrame};
use crate::linalg::{matvec, norm};
use crate::mehler::{log_script_and_n, spatial_factors_frame};
use crate::model::OuModel;
use crate::multiplier::{is_near_diagonal, kernel_m0, lower_truncation, KernelValue, MultiplierKernelConfig};
use crate::quadrature::{integrate_points, QuadratureSpec};
use crate::report::{fmt_f64, BoundFit, Csv};
use crate::seeded_rng;
use crate::symbol::Symbol;

/// Ball radius `1/(1+|x|)`.
pub fn ball_radius(x: &[f64]) -> f64 {
    1.0 / (1.0 + norm(x))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % b) as f64 * inv;
        i /= b;
        inv /= base as f64;
    }
    out
}

/// Halton point `index` in `[0, 1)^n`.
fn halton(index: u64, n: usize) -> Vec<f64> {
    (0..n).map(|d| radical_inverse(index, PRIMES[d])).collect()
}

/// Centers bucketed by radius class: level `ℓ` holds radii in
/// `(2^{−ℓ−1}, 2^{−ℓ}]` on a grid of cell size `6·2^{−ℓ}`.
#[derive(Debug, Clone, Default)]
struct LevelIndex {
    levels: Vec<HashMap<Vec<i64>, Vec<usize>>>,
}

fn level_of(r: f64) -> usize {
    ((-r.log2()).floor().max(0.0)) as usize
}

fn level_cell(level: usize) -> f64 {
    6.0 * 0.5f64.powi(level as i32)
}

fn cell_key(x: &[f64], cell: f64) -> Vec<i64> {
    x.iter().map(|v| (v / cell).floor() as i64).collect()
}

impl LevelIndex {
    fn insert(&mut self, id: usize, x: &[f64]) {
        let level = level_of(ball_radius(x));
        if self.levels.len() <= level {
            self.levels.resize_with(level + 1, HashMap::new);
        }
        self.levels[level].entry(cell_key(x, level_cell(level))).or_default().push(id);
    }

    /// Calls `f` on every center of level `ℓ` whose cell meets the ball of
    /// radius `factor·2^{−ℓ} + extra` about `x`.
    fn for_each_near(&self, x: &[f64], factor: f64, extra: f64, mut f: impl FnMut(usize)) {
        let n = x.len();
        for (level, grid) in self.levels.iter().enumerate() {
            if grid.is_empty() {
                continue;
            }
            let cell = level_cell(level);
            let reach = factor * 0.5f64.powi(level as i32) + extra;
            let span = (reach / cell).ceil() as i64;
            let base = cell_key(x, cell);
            let width = (2 * span + 1) as usize;
            let mut key = vec![0i64; n];
            for idx in 0..width.pow(n as u32) {
                let mut rem = idx;
                for d in 0..n {
                    key[d] = base[d] + (rem % width) as i64 - span;
                    rem /= width;
                }
                if let Some(ids) = grid.get(&key) {
                    ids.iter().for_each(|&i| f(i));
                }
            }
        }
    }
}

/// A maximal family of pairwise disjoint balls `B_j = B(x_j, 1/(1+|x_j|))`
/// inside a box, `x₀ = 0`.
#[derive(Debug, Clone)]
pub struct BallCover {
    pub domain_radius: f64,
    pub centers: Vec<Vec<f64>>,
    radii: Vec<f64>,
    index: LevelIndex,
}

#[derive(Serialize, Deserialize)]
struct CoverFile {
    domain_radius: f64,
    centers: Vec<Vec<f64>>,
}

impl Serialize for BallCover {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CoverFile {
            domain_radius: self.domain_radius,
            centers: self.centers.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BallCover {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = CoverFile::deserialize(d)?;
        let mut cover = BallCover::empty(file.domain_radius);
        for c in file.centers {
            cover.push(c);
        }
        Ok(cover)
    }
}

impl BallCover {
    fn empty(domain_radius: f64) -> BallCover {
        BallCover {
            domain_radius,
            centers: Vec::new(),
            radii: Vec::new(),
            index: LevelIndex::default(),
        }
    }

    fn push(&mut self, c: Vec<f64>) {
        self.index.insert(self.centers.len(), &c);
        self.radii.push(ball_radius(&c));
        self.centers.push(c);
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    pub fn radius(&self, j: usize) -> f64 {
        self.radii[j]
    }

    fn is_disjoint(&self, c: &[f64]) -> bool {
        let rc = ball_radius(c);
        let mut ok = true;
        self.index.for_each_near(c, 1.0, rc, |j| {
            if ok && dist(c, &self.centers[j]) < rc + self.radii[j] {
                ok = false;
            }
        });
        ok
    }

    /// Indices `j` with `|x − x_j| < k·r_j`, `k ≤ 6`, with the scaled distance `|x − x_j|/r_j`.
    pub fn within(&self, x: &[f64], k: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.index.for_each_near(x, k, 0.0, |j| {
            let d = dist(x, &self.centers[j]) / self.radii[j];
            if d < k {
                out.push((j, d));
            }
        });
        out.sort_by_key(|p| p.0);
        out
    }

    pub fn covered_by_triple(&self, x: &[f64]) -> bool {
        !self.within(x, 3.0).is_empty()
    }

    /// Interior region where coverage has been verified and `η` may be evaluated.
    pub fn interior_radius(&self) -> f64 {
        self.domain_radius - 1.0
    }
}

/// Probe points for coverage and partition checks: a grid of spacing
/// `spacing` in `|x| ≤ radius` for `n ≤ 2`, `count` Halton points otherwise.
pub fn probe_points(n: usize, radius: f64, spacing: f64, count: usize) -> Vec<Vec<f64>> {
    if n <= 2 {
        let steps = (2.0 * radius / spacing).ceil() as usize + 1;
        let total = steps.pow(n as u32);
        (0..total)
            .filter_map(|idx| {
                let mut rem = idx;
                let p: Vec<f64> = (0..n)
                    .map(|_| {
                        let k = rem % steps;
                        rem /= steps;
                        -radius + k as f64 * spacing
                    })
                    .collect();
                (norm(&p) <= radius).then_some(p)
            })
            .collect()
    } else {
        (1..)
            .map(|i| halton(i, n).into_iter().map(|v| radius * (2.0 * v - 1.0)).collect::<Vec<f64>>())
            .filter(|p| norm(p) <= radius)
            .take(count)
            .collect()
    }
}

/// Greedy packing over a Halton candidate stream in the ball of radius
/// `domain_radius`, stopped after `10·count` consecutive rejections, then
/// completed on a probe grid and checked for `3B_j` coverage of the interior.
pub fn build_cover(n: usize, domain_radius: f64, seed: u64) -> Result<BallCover> {
    if !(domain_radius >= 1.0) {
        return Err(OuError::InvalidConfig(format!("domain radius must be at least 1, got {domain_radius}")));
    }
    if n == 0 || n > PRIMES.len() {
        return Err(OuError::InvalidConfig(format!("cover dimension must be in 1..=16, got {n}")));
    }
    let mut cover = BallCover::empty(domain_radius);
    cover.push(vec![0.0; n]);
    let start = 1 + (seed % 1_000_003) * 4099;
    let mut rejected = 0usize;
    let cap = 50_000_000u64;
    for i in 0..cap {
        let p: Vec<f64> = halton(start + i, n)
            .into_iter()
            .map(|v| domain_radius * (2.0 * v - 1.0))
            .collect();
        if norm(&p) > domain_radius {
            continue;
        }
        if cover.is_disjoint(&p) {
            cover.push(p);
            rejected = 0;
        } else {
            rejected += 1;
            if rejected >= 10 * cover.len() {
                break;
            }
        }
    }
    let spacing = 0.5 / (1.0 + domain_radius);
    for pass in 0..2 {
        let probes = probe_points(n, cover.interior_radius().max(0.0), spacing * 0.5f64.powi(pass), 200_000);
        let mut missing = 0;
        for p in &probes {
            if !cover.covered_by_triple(p) {
                if cover.is_disjoint(p) {
                    cover.push(p.clone());
                } else {
                    missing += 1;
                }
            }
        }
        if missing > 0 {
            return Err(OuError::CoverageFailure(format!("{missing} probe points escape every 3B_j")));
        }
    }
    Ok(cover)
}

/// Default construction radius for level sets up to `α_max`:
/// `2 + √(λ_max(Q_∞) · 4 log α_max)`, which contains `{R ≤ 2 log α_max}` with margin 2.
pub fn default_domain_radius(model: &OuModel, alpha_max: f64) -> f64 {
    let lmax = model.q_inf.clone().symmetric_eigen().eigenvalues.max();
    2.0 + (lmax * 4.0 * alpha_max.ln()).sqrt()
}

/// Transition profile between the shells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothstep {
    Cubic,
    Quintic,
}

impl Smoothstep {
    /// Rises from 0 at `s ≤ 0` to 1 at `s ≥ 1`.
    pub fn value(self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        match self {
            Smoothstep::Cubic => s * s * (3.0 - 2.0 * s),
            Smoothstep::Quintic => s * s * s * (s * (6.0 * s - 15.0) + 10.0),
        }
    }

    pub fn derivative(self, s: f64) -> f64 {
        if !(0.0..=1.0).contains(&s) {
            return 0.0;
        }
        match self {
            Smoothstep::Cubic => 6.0 * s * (1.0 - s),
            Smoothstep::Quintic => 30.0 * s * s * (s - 1.0) * (s - 1.0),
        }
    }
}

/// `r_j = ρ_j / Σ_k ρ_k` with `ρ_j = S(4 − |x−x_j|/r_j)`, and
/// `r̃_j = S(6 − |x−x_j|/r_j)`.
#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    pub cover: BallCover,
    pub profile: Smoothstep,
}

impl PartitionOfUnity {
    pub fn new(cover: BallCover) -> PartitionOfUnity {
        PartitionOfUnity {
            cover,
            profile: Smoothstep::Quintic,
        }
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.cover.dim() {
            return Err(OuError::DimensionMismatch(format!(
                "point of dimension {} for a cover of dimension {}",
                x.len(),
                self.cover.dim()
            )));
        }
        if norm(x) > self.cover.interior_radius() {
            return Err(OuError::OutOfDomain(format!(
                "|x| = {} beyond the verified radius {}",
                norm(x),
                self.cover.interior_radius()
            )));
        }
        Ok(())
    }

    /// Nonzero `(j, r_j(u))`.
    pub fn partition(&self, u: &[f64]) -> Result<Vec<(usize, f64)>> {
        self.check_domain(u)?;
        let raw: Vec<(usize, f64)> = self
            .cover
            .within(u, 4.0)
            .into_iter()
            .map(|(j, d)| (j, self.profile.value(4.0 - d)))
            .filter(|p| p.1 > 0.0)
            .collect();
        let total: f64 = raw.iter().map(|p| p.1).sum();
        if !(total >= 1.0 - 1e-12) {
            return Err(OuError::CoverageFailure(format!("Σρ_j = {total} at a domain point")));
        }
        Ok(raw.into_iter().map(|(j, v)| (j, v / total)).collect())
    }

    /// Nonzero `(j, r̃_j(x))`.
    pub fn outer_cutoffs(&self, x: &[f64]) -> Result<Vec<(usize, f64)>> {
        self.check_domain(x)?;
        Ok(self
            .cover
            .within(x, 6.0)
            .into_iter()
            .map(|(j, d)| (j, self.profile.value(6.0 - d)))
            .filter(|p| p.1 > 0.0)
            .collect())
    }

    /// `η(x, u) ∈ [0, 1]`.
    pub fn eta(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        let outer = self.outer_cutoffs(x)?;
        let part = self.partition(u)?;
        let mut acc = 0.0;
        let (mut a, mut b) = (0, 0);
        while a < outer.len() && b < part.len() {
            match outer[a].0.cmp(&part[b].0) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += outer[a].1 * part[b].1;
                    a += 1;
                    b += 1;
                }
            }
        }
        // absorb rounding in Σ r_j = 1
        if (1.0 - acc).abs() < 1e-14 {
            acc = 1.0;
        }
        Ok(acc.clamp(0.0, 1.0))
    }

    /// `(∇_x η, ∇_u η)` by central differences with step `1e-6/(1+|x|)`.
    pub fn eta_gradients(&self, x: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = x.len();
        let h = 1e-6 * ball_radius(x);
        let mut gx = vec![0.0; n];
        let mut gu = vec![0.0; n];
        for l in 0..n {
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[l] += h;
            xm[l] -= h;
            gx[l] = (self.eta(&xp, u)? - self.eta(&xm, u)?) / (2.0 * h);
            let (mut up, mut um) = (u.to_vec(), u.to_vec());
            up[l] += h;
            um[l] -= h;
            gu[l] = (self.eta(x, &up)? - self.eta(x, &um)?) / (2.0 * h);
        }
        Ok((gx, gu))
    }

    /// Analytic `∇r_j(x)` for all `j` with `r_j(x) > 0` or `∇r_j(x) ≠ 0`.
    pub fn partition_gradients(&self, x: &[f64]) -> Result<Vec<(usize, Vec<f64>)>> {
        self.check_domain(x)?;
        let n = x.len();
        let near = self.cover.within(x, 4.0);
        let mut rho = Vec::with_capacity(near.len());
        let mut grad = Vec::with_capacity(near.len());
        for &(j, d) in &near {
            rho.push(self.profile.value(4.0 - d));
            let c = &self.cover.centers[j];
            let r = self.cover.radius(j);
            let len = dist(x, c);
            let slope = -self.profile.derivative(4.0 - d);
            grad.push(
                (0..n)
                    .map(|l| if len > 0.0 { slope * (x[l] - c[l]) / (len * r) } else { 0.0 })
                    .collect::<Vec<f64>>(),
            );
        }
        let total: f64 = rho.iter().sum();
        let gsum: Vec<f64> = (0..n).map(|l| grad.iter().map(|g| g[l]).sum()).collect();
        Ok(near
            .iter()
            .enumerate()
            .map(|(k, &(j, _))| {
                let rj = rho[k] / total;
                (j, (0..n).map(|l| (grad[k][l] - rj * gsum[l]) / total).collect())
            })
            .collect())
    }
}

/// Splitting `M_0 = M_0^{loc} + M_0^{glob}` and the local kernel
/// `Q = e^{−R(x)} M_0^{loc}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalGlobal {
    pub eta: f64,
    pub m0: KernelValue,
    pub m0_loc: Complex64,
    pub m0_glob: Complex64,
    /// From the cancelled integral `−η ∫₀¹ φ ∂_t 𝒦_t dt`.
    pub q_cz: Complex64,
}

/// `−∫₀¹ φ ∂_t 𝒦_t dt` by adaptive quadrature in `ln t`, where `𝒦_t = e^{−R(x)}K_t`.
pub fn cancelled_m0(model: &OuModel, sym: &Symbol, x: &[f64], u: &[f64], quad: &QuadratureSpec) -> Result<Complex64> {
    let v = cancelled_integrals(model, sym, x, u, quad, false)?;
    Ok(v[0])
}

/// `[−∫φ∂_t𝒦, −∫φ∂_x∂_t𝒦 (n), −∫φ∂_u∂_t𝒦 (n)]` over `(0, 1]`.
fn cancelled_integrals(
    model: &OuModel,
    sym: &Symbol,
    x: &[f64],
    u: &[f64],
    quad: &QuadratureSpec,
    with_gradients: bool,
) -> Result<Vec<Complex64>> {
    if is_near_diagonal(x, u) {
        return Err(OuError::DiagonalPoint);
    }
    let n = model.n;
    let rows = if with_gradients { 1 + 2 * n } else { 1 };
    let (t_min, _) = lower_truncation(model, sym, x, u, 1.0)?;
    let (la, lb) = (t_min.ln(), 0.0);
    let panels = ((lb - la).ceil() as usize).max(1);
    let mut pts: Vec<f64> = (0..=panels).map(|i| la + (lb - la) * i as f64 / panels as f64).collect();
    pts.extend(sym.breakpoints().into_iter().filter(|&b| b > t_min && b < 1.0).map(f64::ln));
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    pts.dedup();
    let spec = QuadratureSpec {
        max_subdivisions: quad.max_subdivisions + pts.len(),
        ..*quad
    };
    let failure = std::cell::RefCell::new(None);
    let res = integrate_points(
        |tau: f64| {
            let t = tau.exp();
            let mut out = DMatrix::<Complex64>::zeros(rows, 1);
            match TimeFrame::new(model, t) {
                Ok(frame) => {
                    let (ls, nt) = log_script_and_n(&frame, x, u);
                    let weight = -sym.phi(t) * (ls.exp() * t);
                    out[0] = weight * nt;
                    if with_gradients {
                        match spatial_factors_frame(&frame, x, u) {
                            Ok(f) => {
                                for l in 0..n {
                                    out[1 + l] = weight * f.s[l];
                                    out[1 + n + l] = weight * f.r[l];
                                }
                            }
                            Err(e) => {
                                failure.borrow_mut().get_or_insert(e);
                            }
                        }
                    }
                }
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                }
            }
            out
        },
        &pts,
        &spec,
    )?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(res.value.iter().cloned().collect())
}

pub fn kernel_local_global(
    model: &OuModel,
    sym: &Symbol,
    x: &[f64],
    u: &[f64],
    pou: &PartitionOfUnity,
    cfg: &MultiplierKernelConfig,
) -> Result<LocalGlobal> {
    let eta = pou.eta(x, u)?;
    let m0 = kernel_m0(model, sym, x, u, cfg)?;
    let m0_loc = m0.value * eta;
    let q_cz = if eta > 0.0 {
        cancelled_m0(model, sym, x, u, &cfg.quad)? * eta
    } else {
        Complex64::new(0.0, 0.0)
    };
    Ok(LocalGlobal {
        eta,
        m0,
        m0_loc,
        m0_glob: m0.value - m0_loc,
        q_cz,
    })
}

/// `Q(x,u)` with `∇_x Q` and `∇_u Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CzValue {
    pub eta: f64,
    pub q: Complex64,
    pub grad_x: Vec<Complex64>,
    pub grad_u: Vec<Complex64>,
}

fn assemble_cz(pou: &PartitionOfUnity, x: &[f64], u: &[f64], ints: &[Complex64]) -> Result<CzValue> {
    let n = x.len();
    let eta = pou.eta(x, u)?;
    let (ex, eu) = pou.eta_gradients(x, u)?;
    let base = ints[0];
    Ok(CzValue {
        eta,
        q: base * eta,
        grad_x: (0..n).map(|l| ints[1 + l] * eta + base * ex[l]).collect(),
        grad_u: (0..n).map(|l| ints[1 + n + l] * eta + base * eu[l]).collect(),
    })
}

/// `Q` and its gradients with the time integrals by adaptive quadrature.
pub fn cz_value(model: &OuModel, sym: &Symbol, pou: &PartitionOfUnity, x: &[f64], u: &[f64], quad: &QuadratureSpec) -> Result<CzValue> {
    let ints = cancelled_integrals(model, sym, x, u, quad, true)?;
    assemble_cz(pou, x, u, &ints)
}

/// `Q` and its gradients with the time integrals on a precomputed table of
/// frames covering `(0, 1]` (weights include the `ln t` Jacobian).
pub fn cz_value_table(sym: &Symbol, pou: &PartitionOfUnity, table: &FrameTable, x: &[f64], u: &[f64]) -> Result<CzValue> {
    let n = x.len();
    let mut ints = vec![Complex64::new(0.0, 0.0); 1 + 2 * n];
    for (frame, w) in table.frames.iter().zip(&table.weights) {
        if frame.t > 1.0 {
            continue;
        }
        let (ls, nt) = log_script_and_n(frame, x, u);
        let weight = -sym.phi(frame.t) * (ls.exp() * w);
        ints[0] += weight * nt;
        let f = spatial_factors_frame(frame, x, u)?;
        for l in 0..n {
            ints[1 + l] += weight * f.s[l];
            ints[1 + n + l] += weight * f.r[l];
        }
    }
    assemble_cz(pou, x, u, &ints)
}

/// Battery of local pairs for the kernel-condition scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalPairSpec {
    pub count: usize,
    /// Scaled distances `|x−u|(1+|x|)` are log-uniform in `[min_scaled, max_scaled]`.
    pub min_scaled: f64,
    pub max_scaled: f64,
    pub seed: u64,
}

/// Pairs with `η(x,u) > 0`, `x ~ γ_∞` conditioned on the interior shrunk by 2.
pub fn sample_local_pairs(model: &OuModel, pou: &PartitionOfUnity, spec: &LocalPairSpec) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let n = model.n;
    let limit = pou.cover.interior_radius() - 1.0;
    let mut rng = seeded_rng(spec.seed, 41);
    let mut out = Vec::with_capacity(spec.count);
    let mut attempts = 0usize;
    while out.len() < spec.count {
        attempts += 1;
        if attempts > 100 * spec.count + 1000 {
            return Err(OuError::InvalidConfig("could not draw enough local pairs inside the cover".into()));
        }
        let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut x = vec![0.0; n];
        matvec(&model.q_inf_sqrt, &z, &mut x);
        if norm(&x) > limit {
            continue;
        }
        let dir: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let dn = norm(&dir);
        let scaled = (spec.min_scaled.ln() + rng.random::<f64>() * (spec.max_scaled / spec.min_scaled).ln()).exp();
        let r = scaled * ball_radius(&x);
        let u: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + r * d / dn).collect();
        match pou.eta(&x, &u) {
            Ok(eta) if eta > 0.0 => out.push((x, u)),
            Ok(_) | Err(OuError::OutOfDomain(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CzRow {
    pub dist: f64,
    pub abs_q_scaled: f64,
    pub gradx_scaled: f64,
    pub gradu_scaled: f64,
}

/// Suprema of `|Q||u−x|ⁿ`, `|∇_x Q||u−x|^{n+1}`, `|∇_u Q||u−x|^{n+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CzScan {
    pub rows: Vec<CzRow>,
    pub fits: Vec<BoundFit>,
}

impl CzScan {
    pub fn sups(&self) -> [f64; 3] {
        sups(&self.rows)
    }

    /// Suprema over the first half of the battery.
    pub fn half_sups(&self) -> [f64; 3] {
        sups(&self.rows[..self.rows.len() / 2])
    }

    pub fn to_csv(&self) -> String {
        let mut csv = Csv::with_header("pair_id,dist,absQ_scaled,gradx_scaled,gradu_scaled");
        for (i, r) in self.rows.iter().enumerate() {
            csv.row(&[
                i.to_string(),
                fmt_f64(r.dist),
                fmt_f64(r.abs_q_scaled),
                fmt_f64(r.gradx_scaled),
                fmt_f64(r.gradu_scaled),
            ]);
        }
        csv.finish()
    }
}

fn sups(rows: &[CzRow]) -> [f64; 3] {
    rows.iter().fold([0.0f64; 3], |acc, r| {
        [acc[0].max(r.abs_q_scaled), acc[1].max(r.gradx_scaled), acc[2].max(r.gradu_scaled)]
    })
}

fn cnorm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

pub fn cz_bound_scan(model: &OuModel, sym: &Symbol, pou: &PartitionOfUnity, table: &FrameTable, spec: &LocalPairSpec) -> Result<CzScan> {
    use rayon::prelude::*;
    let n = model.n as i32;
    let pairs = sample_local_pairs(model, pou, spec)?;
    let rows = pairs
        .par_iter()
        .map(|(x, u)| {
            let v = cz_value_table(sym, pou, table, x, u)?;
            let d = dist(x, u);
            Ok(CzRow {
                dist: d,
                abs_q_scaled: v.q.norm() * d.powi(n),
                gradx_scaled: cnorm(&v.grad_x) * d.powi(n + 1),
                gradu_scaled: cnorm(&v.grad_u) * d.powi(n + 1),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&CzRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let fits = vec![
        BoundFit::upper("Q_times_dist_n", &col(|r| r.abs_q_scaled)),
        BoundFit::upper("grad_x_Q_times_dist_n1", &col(|r| r.gradx_scaled)),
        BoundFit::upper("grad_u_Q_times_dist_n1", &col(|r| r.gradu_scaled)),
    ];
    Ok(CzScan { rows, fits })
}

/// Empirical constants of the cover and cutoffs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationDiagnostics {
    pub centers: usize,
    /// `max |Σ_j r_j − 1|` on the probes.
    pub partition_error: f64,
    /// `max #{j : x ∈ 6B_j}`.
    pub max_overlap: usize,
    /// `max |∇r_j(x)| / (1+|x|)`.
    pub gradient_constant: f64,
    /// `max (1+|x|)/(1+|x_j|)` over `x ∈ 6B_j`.
    pub radius_ratio: f64,
    /// `max |x−u|(1+|x|)` over pairs with `η > 0`.
    pub support_constant: f64,
    /// `min |x−u|(1+|x|)` over pairs with `η < 1`: below it `η = 1`.
    pub unit_constant: f64,
    /// `max (|∇_xη| + |∇_uη|)|x−u|` over pairs.
    pub eta_gradient_constant: f64,
}

pub fn localization_diagnostics(pou: &PartitionOfUnity, probes: &[Vec<f64>], pairs: usize, seed: u64) -> Result<LocalizationDiagnostics> {
    let cover = &pou.cover;
    let n = cover.dim();
    let mut partition_error: f64 = 0.0;
    let mut max_overlap = 0;
    let mut gradient_constant: f64 = 0.0;
    let mut radius_ratio: f64 = 0.0;
    for p in probes {
        let part = pou.partition(p)?;
        partition_error = partition_error.max((part.iter().map(|q| q.1).sum::<f64>() - 1.0).abs());
        let six = cover.within(p, 6.0);
        max_overlap = max_overlap.max(six.len());
        for (j, _) in &six {
            radius_ratio = radius_ratio.max((1.0 + norm(p)) * cover.radius(*j));
        }
        for (_, g) in pou.partition_gradients(p)? {
            gradient_constant = gradient_constant.max(norm(&g) * ball_radius(p));
        }
    }
    let limit = cover.interior_radius() - 1.0;
    let mut rng = seeded_rng(seed, 43);
    let mut support_constant: f64 = 0.0;
    let mut unit_constant = f64::INFINITY;
    let mut eta_gradient_constant: f64 = 0.0;
    let mut drawn = 0;
    while drawn < pairs {
        let x: Vec<f64> = (0..n).map(|_| limit * (2.0 * rng.random::<f64>() - 1.0)).collect();
        if norm(&x) > limit {
            continue;
        }
        let dir: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let scaled = 10f64.powf(-3.0 + 4.5 * rng.random::<f64>());
        let r = scaled * ball_radius(&x);
        let dn = norm(&dir);
        let u: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + r * d / dn).collect();
        if norm(&u) > cover.interior_radius() {
            continue;
        }
        drawn += 1;
        let eta = pou.eta(&x, &u)?;
        if eta > 0.0 {
            support_constant = support_constant.max(scaled);
            let (gx, gu) = pou.eta_gradients(&x, &u)?;
            eta_gradient_constant = eta_gradient_constant.max((norm(&gx) + norm(&gu)) * r);
        }
        if eta < 1.0 {
            unit_constant = unit_constant.min(scaled);
        }
    }
    Ok(LocalizationDiagnostics {
        centers: cover.len(),
        partition_error,
        max_overlap,
        gradient_constant,
        radius_ratio,
        support_constant,
        unit_constant,
        eta_gradient_constant,
    })
}
