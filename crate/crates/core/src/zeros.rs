//! Zeros of `t ↦ ∂_t K_t(x, u)` on `(0, 1]`: sign scans on a log grid with
//! bisection refinement, sweeps over random pairs, and a heuristic bound
//! from the exponential-polynomial structure of `N_t`.
//!
//! Since `K_t > 0`, the sign of `∂_t K_t` is the sign of `N_t`; scanning `N_t`
//! keeps the sign readable where `K_t` itself underflows.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OuError, Result};
use crate::frame::{FrameTable, TimeFrame};
use crate::geometry::quadratic_form_r;
use crate::linalg::{matvec, Mat};
use crate::mehler::log_script_and_n;
use crate::model::OuModel;
use crate::report::Csv;
use crate::seeded_rng;

/// Left end of the scanned interval.
pub const T_FLOOR: f64 = 1e-8;
/// Bisection stops once the bracket is this narrow.
pub const BRACKET_WIDTH: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroScanResult {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub count: usize,
    /// Increasing zero locations in `(0, 1]`.
    pub locations: Vec<f64>,
    /// Smallest gap between consecutive zeros, or between a zero and an end of the interval.
    pub min_gap: f64,
    pub grid_size: usize,
    pub refined: bool,
    /// Whether `N_t` keeps one sign on `[1e-10, 1e-8]`.
    pub floor_sign_stable: bool,
    /// `max |∂_t K|` over the grid, for judging the residual at the zeros.
    pub max_abs_dkdt: f64,
    /// `max |∂_t K(t*)|` over refined zeros.
    pub max_residual: f64,
}

/// Frames on the scan grid, shared by every pair of one model.
pub struct ZeroScanner<'a> {
    model: &'a OuModel,
    grid: FrameTable,
    floor: FrameTable,
}

/// `count` log-spaced points from `a` to `b`.
pub fn log_grid(a: f64, b: f64, count: usize) -> Vec<f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..count)
        .map(|i| (la + (lb - la) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

fn signum(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

impl<'a> ZeroScanner<'a> {
    pub fn new(model: &'a OuModel, grid_size: usize) -> Result<ZeroScanner<'a>> {
        if grid_size < 256 {
            return Err(OuError::InvalidConfig(format!("grid size must be at least 256, got {grid_size}")));
        }
        let mut times = log_grid(T_FLOOR, 1.0, grid_size);
        *times.last_mut().expect("nonempty grid") = 1.0;
        Ok(ZeroScanner {
            model,
            grid: FrameTable::from_times(model, &times)?,
            floor: FrameTable::from_times(model, &log_grid(1e-10, T_FLOOR, 17))?,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.grid.len()
    }

    pub fn model(&self) -> &OuModel {
        self.model
    }

    fn n_at(&self, t: f64, x: &[f64], u: &[f64]) -> Result<f64> {
        let frame = TimeFrame::new(self.model, t)?;
        Ok(log_script_and_n(&frame, x, u).1)
    }

    fn bisect(&self, mut lo: f64, mut hi: f64, mut sign_lo: i8, x: &[f64], u: &[f64]) -> Result<f64> {
        while hi - lo > BRACKET_WIDTH {
            let mid = 0.5 * (lo + hi);
            if !(mid > lo && mid < hi) {
                break;
            }
            let s = signum(self.n_at(mid, x, u)?);
            if s == 0 {
                return Ok(mid);
            }
            if s == sign_lo {
                lo = mid;
                sign_lo = s;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Counts sign changes of `∂_t K_t(x, u)` over the grid; with `refine`
    /// each is located by bisection.
    pub fn scan(&self, x: &[f64], u: &[f64], refine: bool) -> Result<ZeroScanResult> {
        let r = quadratic_form_r(self.model, x);
        let mut prev: Option<(f64, i8)> = None;
        let mut brackets = Vec::new();
        let mut max_abs_dkdt: f64 = 0.0;
        let mut pending_zero: Option<(f64, i8)> = None;
        for frame in &self.grid.frames {
            let (ls, nt) = log_script_and_n(frame, x, u);
            max_abs_dkdt = max_abs_dkdt.max((ls + r).exp() * nt.abs());
            let s = signum(nt);
            if s == 0 {
                if pending_zero.is_none() {
                    pending_zero = prev.map(|(t0, s0)| (t0, s0));
                }
                continue;
            }
            if let Some((t0, s0)) = pending_zero.take().or(prev) {
                if s0 != 0 && s0 != s {
                    brackets.push((t0, frame.t, s0));
                }
            }
            prev = Some((frame.t, s));
        }
        if pending_zero.is_some() && prev.is_none() {
            return Err(OuError::SignAmbiguity(format!("N_t vanishes on the whole grid for x = {x:?}, u = {u:?}")));
        }
        let floor_signs: Vec<i8> = self
            .floor
            .frames
            .iter()
            .map(|f| signum(log_script_and_n(f, x, u).1))
            .filter(|s| *s != 0)
            .collect();
        let floor_sign_stable = floor_signs.windows(2).all(|w| w[0] == w[1]);
        let locations = if refine {
            brackets
                .iter()
                .map(|&(lo, hi, s)| self.bisect(lo, hi, s, x, u))
                .collect::<Result<Vec<f64>>>()?
        } else {
            brackets.iter().map(|&(lo, hi, _)| (lo * hi).sqrt()).collect()
        };
        let mut max_residual: f64 = 0.0;
        if refine {
            for &t in &locations {
                let frame = TimeFrame::new(self.model, t)?;
                let (ls, nt) = log_script_and_n(&frame, x, u);
                max_residual = max_residual.max((ls + r).exp() * nt.abs());
            }
        }
        let mut edges = vec![0.0];
        edges.extend(&locations);
        edges.push(1.0);
        let min_gap = edges.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        Ok(ZeroScanResult {
            x: x.to_vec(),
            u: u.to_vec(),
            count: locations.len(),
            locations,
            min_gap,
            grid_size: self.grid.len(),
            refined: refine,
            floor_sign_stable,
            max_abs_dkdt,
            max_residual,
        })
    }
}

pub fn count_zeros(model: &OuModel, x: &[f64], u: &[f64], grid_size: usize) -> Result<ZeroScanResult> {
    ZeroScanner::new(model, grid_size)?.scan(x, u, true)
}

/// Magnitudes cycled through by the sweep: pair `i` has both points scaled by `SWEEP_SCALES[i % 4]`.
pub const SWEEP_SCALES: [f64; 4] = [0.3, 1.0, 2.0, 4.0];

/// Pair `i` of a sweep, drawn from its own stream so that prefixes of a
/// larger sweep coincide with smaller sweeps.
pub fn sweep_pair(model: &OuModel, seed: u64, i: usize) -> (Vec<f64>, Vec<f64>) {
    let n = model.n;
    let mut rng = seeded_rng(seed, 1_000_000 + i as u64);
    let scale = SWEEP_SCALES[i % SWEEP_SCALES.len()];
    let mut draw = || {
        let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
        let mut v = vec![0.0; n];
        matvec(&model.q_inf_sqrt, &z, &mut v);
        v
    };
    let x = draw();
    let u = draw();
    (x, u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroSweep {
    /// `{count: frequency}`
    pub histogram: BTreeMap<String, usize>,
    pub max_count: usize,
    pub results: Vec<ZeroScanResult>,
}

impl ZeroSweep {
    fn from_results(results: Vec<ZeroScanResult>) -> ZeroSweep {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for r in &results {
            *counts.entry(r.count).or_default() += 1;
        }
        ZeroSweep {
            histogram: counts.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            max_count: counts.keys().next_back().copied().unwrap_or(0),
            results,
        }
    }

    /// Maximum count over the first `k` pairs.
    pub fn prefix_max(&self, k: usize) -> usize {
        self.results.iter().take(k).map(|r| r.count).max().unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        let mut csv = Csv::with_header("pair_id,count,locations");
        for (i, r) in self.results.iter().enumerate() {
            let locs: Vec<String> = r.locations.iter().map(|t| format!("{t:e}")).collect();
            csv.row(&[i.to_string(), r.count.to_string(), locs.join(";")]);
        }
        csv.finish()
    }
}

pub fn zero_sweep_with(scanner: &ZeroScanner<'_>, samples: usize, seed: u64, refine: bool) -> Result<ZeroSweep> {
    let results = (0..samples)
        .into_par_iter()
        .map(|i| {
            let (x, u) = sweep_pair(scanner.model(), seed, i);
            scanner.scan(&x, &u, refine)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ZeroSweep::from_results(results))
}

pub fn zero_sweep(model: &OuModel, samples: usize, seed: u64, grid_size: usize) -> Result<ZeroSweep> {
    if samples < 1000 {
        return Err(OuError::InvalidConfig(format!("a sweep needs at least 1000 pairs, got {samples}")));
    }
    zero_sweep_with(&ZeroScanner::new(model, grid_size)?, samples, seed, true)
}

/// HEURISTIC count from the frequencies and exponents of `N_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicBound {
    pub label: String,
    /// `⌈max μ⌉ + 1`
    pub kappa: u64,
    /// Distinct `(λ, μ)` factors counted with polynomial multiplicity.
    pub factors: u64,
    /// `κ (2^{K+1} − 2)`, saturated at `u128::MAX`.
    pub bound: u128,
    pub saturated: bool,
    pub log2_bound: f64,
}

/// Largest Jordan block of `B` at a clustered eigenvalue, bounded by `mult − geom + 1`.
fn block_bound(b: &Mat, lambda: Complex64, mult: usize) -> usize {
    let n = b.nrows();
    let shifted: nalgebra::DMatrix<Complex64> =
        b.map(|v| Complex64::new(v, 0.0)) - nalgebra::DMatrix::<Complex64>::identity(n, n) * lambda;
    let sv = shifted.singular_values();
    let scale = sv.max().max(1.0);
    let geom = sv.iter().filter(|s| **s < 1e-6 * scale).count().max(1);
    mult.saturating_sub(geom) + 1
}

/// Candidate frequencies `μ = |Im Σ m_j ν_j|` over the eigenvalues `ν_j` of `B`
/// with `|m_j| ≤ 2n + 2`; `K` counts distinct `(Re, |Im|)` combinations, each with
/// multiplicity `min(1 + (2n+2)(s−1), max(1, n²))` for the largest Jordan block `s`.
pub fn theoretical_bound_estimate(model: &OuModel) -> HeuristicBound {
    let n = model.n;
    let weight = 2 * n as i64 + 2;
    let clusters = crate::multiplier::cluster_spectrum(&model.eig_b)
        .unwrap_or_else(|_| model.eig_b.iter().map(|e| (*e, 1)).collect());
    let s_max = clusters
        .iter()
        .map(|(l, m)| block_bound(&model.b, *l, *m))
        .max()
        .unwrap_or(1);
    let multiplicity = (1 + (weight as usize) * (s_max - 1)).min((n * n).max(1)) as u64;
    let max_mu: f64 = model.eig_b.iter().map(|e| e.im.abs()).sum::<f64>() * weight as f64;
    let kappa = max_mu.ceil() as u64 + 1;
    // Enumerate combinations on a rounded lattice; cap the work for large n.
    let mut combos: std::collections::BTreeSet<(i64, i64)> = std::collections::BTreeSet::new();
    combos.insert((0, 0));
    for nu in &model.eig_b {
        let mut next = std::collections::BTreeSet::new();
        for &(re, im) in &combos {
            for m in -weight..=weight {
                let r = re + (m as f64 * nu.re * 1e6).round() as i64;
                let i = im + (m as f64 * nu.im * 1e6).round() as i64;
                next.insert((r, i));
            }
        }
        combos = next;
        if combos.len() > 1_000_000 {
            break;
        }
    }
    let distinct: std::collections::BTreeSet<(i64, i64)> = combos.into_iter().map(|(r, i)| (r, i.abs())).collect();
    let factors = distinct.len() as u64 * multiplicity;
    let log2_bound = (kappa as f64).log2() + (factors as f64 + 1.0);
    let (bound, saturated) = if factors + 1 >= 127 {
        (u128::MAX, true)
    } else {
        let p = (1u128 << (factors + 1)) - 2;
        match p.checked_mul(kappa as u128) {
            Some(v) => (v, false),
            None => (u128::MAX, true),
        }
    };
    HeuristicBound {
        label: "HEURISTIC".into(),
        kappa,
        factors,
        bound,
        saturated,
        log2_bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    #[test]
    fn scalar_counts_match_cubic() {
        let m = OuModel::standard(1);
        let scanner = ZeroScanner::new(&m, 4096).unwrap();
        for &(x, u) in &[(0.0, 0.0), (1.0, 1.2), (2.0, -0.5), (0.3, 0.31), (3.0, 2.9), (-1.5, 0.2)] {
            let r = scanner.scan(&[x], &[u], true).unwrap();
            assert_eq!(r.count, crate::oracle::scalar_zero_count(x, u, T_FLOOR), "({x}, {u})");
            assert!(r.max_residual <= 1e-9 * r.max_abs_dkdt.max(1e-300));
        }
    }

    #[test]
    fn zero_locations_are_sign_changes() {
        let m = build_model(2, &[vec![-1.0, 5.0], vec![-5.0, -1.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let scanner = ZeroScanner::new(&m, 4096).unwrap();
        let r = scanner.scan(&[1.0, 0.5], &[-0.3, 1.2], true).unwrap();
        assert!(r.count >= 1);
        for &t in &r.locations {
            let lo = scanner.n_at(t - 1e-9, &[1.0, 0.5], &[-0.3, 1.2]).unwrap();
            let hi = scanner.n_at(t + 1e-9, &[1.0, 0.5], &[-0.3, 1.2]).unwrap();
            assert!(lo * hi <= 0.0);
        }
        assert!(r.locations.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn diagonal_pair_has_fixed_sign_near_zero() {
        let m = OuModel::standard(2);
        let r = count_zeros(&m, &[0.0, 0.0], &[0.0, 0.0], 512).unwrap();
        assert_eq!(r.count, 0);
        assert!(r.floor_sign_stable);
    }

    #[test]
    fn sweep_is_deterministic() {
        let m = OuModel::standard(1);
        let a = zero_sweep(&m, 1000, 5, 512).unwrap();
        let b = zero_sweep(&m, 1000, 5, 512).unwrap();
        assert_eq!(a.histogram, b.histogram);
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn heuristic_bound_for_scalar_drift() {
        let b = theoretical_bound_estimate(&OuModel::standard(1));
        assert_eq!(b.kappa, 1);
        assert_eq!(b.factors, 9);
        assert_eq!(b.bound, 1022);
        let b2 = theoretical_bound_estimate(&OuModel::standard(2));
        assert_eq!(b2.kappa, 1);
        assert!(!b2.saturated);
    }

    #[test]
    fn oscillating_drift_raises_kappa() {
        let m = build_model(2, &[vec![-1.0, 5.0], vec![-5.0, -1.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = theoretical_bound_estimate(&m);
        assert_eq!(b.kappa, 61);
    }
}
