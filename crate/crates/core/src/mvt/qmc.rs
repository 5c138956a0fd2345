//! Randomized quasi-Monte Carlo evaluation of multivariate normal and t
//! rectangle probabilities by separation of variables.
//!
//! The correlation matrix is Cholesky-factored with variables reordered so
//! that the most tightly truncated ones are integrated first. Points come from
//! a Richtmyer (square roots of primes) Kronecker sequence, periodized with
//! the tent transform and evaluated antithetically; independent random shifts
//! give the error estimate.

use super::{MvtOptions, MvtResult};
use crate::error::{Result, TrendError};
use crate::par::map_indexed;
use crate::special::{norm_cdf, norm_pdf, norm_quantile, ChiScale, Df};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Conditional variances below this are treated as exact linear dependence.
/// Dropping an independent symmetric perturbation of variance `v` smooths the
/// boundary and moves the probability by about `v / 2` times a density slope,
/// well under 1e-5 here. Keeping it would make the conditional mass a near
/// step function of the earlier variables, which QMC handles badly.
const DEGENERATE_VAR: f64 = 1e-5;

/// Cholesky coefficients below this count as zero when a dependent row is
/// attached to the variable it loads on last.
const LOADING_TOL: f64 = 1e-8;

/// Multiplier turning the standard error over randomizations into the
/// reported error bound.
const ERROR_FACTOR: f64 = 3.0;

const FIRST_CHUNK: usize = 512;

#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    q: usize,
    /// Row-major lower-triangular Cholesky factor of the reordered matrix.
    chol: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    degenerate: Vec<bool>,
    /// Dependent rows whose constraint is folded into the bounds of each
    /// independent variable (the last one they load on).
    attached: Vec<Vec<usize>>,
    /// A dependent row with no loadings excludes zero: probability 0.
    empty: bool,
    /// Which coordinate of the QMC point drives each variable, if any.
    coord: Vec<Option<usize>>,
    dims: usize,
    df: Df,
    chi: Option<ChiScale>,
}

pub(crate) fn prepare(lower: &[f64], upper: &[f64], corr: &DMatrix<f64>, df: Df) -> Prepared {
    let q = lower.len();
    let mut r = corr.clone();
    let mut a = lower.to_vec();
    let mut b = upper.to_vec();
    let mut c = vec![0.0f64; q * q];
    let mut y = vec![0.0f64; q];
    let mut degenerate = vec![false; q];

    for i in 0..q {
        // pick the remaining variable with the smallest conditional probability
        let mut best = i;
        let mut best_prob = f64::INFINITY;
        let mut best_var = 0.0;
        for j in i..q {
            let var = r[(j, j)] - (0..i).map(|k| c[j * q + k].powi(2)).sum::<f64>();
            let prob = if var > DEGENERATE_VAR {
                let s: f64 = (0..i).map(|k| c[j * q + k] * y[k]).sum();
                let sd = var.sqrt();
                norm_cdf((b[j] - s) / sd) - norm_cdf((a[j] - s) / sd)
            } else {
                2.0
            };
            if prob < best_prob {
                best = j;
                best_prob = prob;
                best_var = var;
            }
        }
        if best != i {
            r.swap_rows(i, best);
            r.swap_columns(i, best);
            a.swap(i, best);
            b.swap(i, best);
            for k in 0..i {
                c.swap(i * q + k, best * q + k);
            }
        }
        if best_var > DEGENERATE_VAR {
            let cii = best_var.sqrt();
            c[i * q + i] = cii;
            for j in (i + 1)..q {
                let dot: f64 = (0..i).map(|k| c[j * q + k] * c[i * q + k]).sum();
                c[j * q + i] = (r[(j, i)] - dot) / cii;
            }
            let s: f64 = (0..i).map(|k| c[i * q + k] * y[k]).sum();
            let (lo, hi) = ((a[i] - s) / cii, (b[i] - s) / cii);
            let mass = norm_cdf(hi) - norm_cdf(lo);
            y[i] = if mass > 1e-300 {
                (pdf_or_zero(lo) - pdf_or_zero(hi)) / mass
            } else if lo.is_finite() && hi.is_finite() {
                0.5 * (lo + hi)
            } else if lo.is_finite() {
                lo
            } else {
                hi
            };
        } else {
            degenerate[i] = true;
            for j in (i + 1)..q {
                c[j * q + i] = 0.0;
            }
            y[i] = 0.0;
        }
    }

    let mut attached = vec![Vec::new(); q];
    let mut empty = false;
    for j in (0..q).filter(|&j| degenerate[j]) {
        match (0..j).rev().find(|&k| c[j * q + k].abs() > LOADING_TOL) {
            Some(m) => attached[m].push(j),
            None => empty |= a[j] > 0.0 || b[j] < 0.0,
        }
    }

    // a point coordinate is needed only if a later independent row reads y_i
    let mut coord = vec![None; q];
    let mut dims = if df.is_infinite() { 0 } else { 1 };
    for i in 0..q {
        if !degenerate[i] && (i + 1..q).any(|j| !degenerate[j]) {
            coord[i] = Some(dims);
            dims += 1;
        }
    }
    let chi = match df {
        Df::Finite(nu) => Some(ChiScale::new(nu)),
        Df::Infinite => None,
    };
    Prepared { q, chol: c, lower: a, upper: b, degenerate, attached, empty, coord, dims, df, chi }
}

fn pdf_or_zero(x: f64) -> f64 {
    if x.is_finite() {
        norm_pdf(x)
    } else {
        0.0
    }
}

impl Prepared {
    pub(crate) fn dims(&self) -> usize {
        self.dims
    }

    fn integrand(&self, w: &[f64], y: &mut [f64]) -> f64 {
        if self.empty {
            return 0.0;
        }
        let q = self.q;
        let scale = match self.df {
            Df::Infinite => 1.0,
            Df::Finite(_) => self.chi.expect("finite df").quantile(w[0]),
        };
        let shifted = |row: usize, i: usize, y: &[f64]| -> f64 {
            self.chol[row * q..row * q + i].iter().zip(&y[..i]).map(|(c, y)| c * y).sum()
        };
        let mut prod = 1.0;
        for i in 0..q {
            if self.degenerate[i] {
                y[i] = 0.0;
                continue;
            }
            let s = shifted(i, i, y);
            let cii = self.chol[i * q + i];
            let mut lo_z = (self.lower[i] * scale - s) / cii;
            let mut hi_z = (self.upper[i] * scale - s) / cii;
            for &j in &self.attached[i] {
                let cj = self.chol[j * q + i];
                let sj = shifted(j, i, y);
                let (l, u) = ((self.lower[j] * scale - sj) / cj, (self.upper[j] * scale - sj) / cj);
                let (l, u) = if cj > 0.0 { (l, u) } else { (u, l) };
                lo_z = lo_z.max(l);
                hi_z = hi_z.min(u);
            }
            if !(lo_z < hi_z) {
                return 0.0;
            }
            let lo = if lo_z == f64::NEG_INFINITY { 0.0 } else { norm_cdf(lo_z) };
            let hi = if hi_z == f64::INFINITY { 1.0 } else { norm_cdf(hi_z) };
            let mass = hi - lo;
            if mass <= 0.0 {
                return 0.0;
            }
            prod *= mass;
            if let Some(d) = self.coord[i] {
                let u = (lo + w[d] * mass).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
                y[i] = norm_quantile(u);
            }
        }
        prod
    }
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while out.len() < count {
        if out.iter().take_while(|p| *p * *p <= candidate).all(|p| candidate % p != 0) {
            out.push(candidate);
        }
        candidate += 1;
    }
    out
}

/// Sum of antithetic integrand pairs over sequence indices `start..end`.
fn chunk_sum(prep: &Prepared, alpha: &[f64], shift: &[f64], start: usize, end: usize) -> f64 {
    let dims = alpha.len();
    let mut w = vec![0.0; dims];
    let mut wa = vec![0.0; dims];
    let mut y = vec![0.0; prep.q];
    let mut sum = 0.0;
    for j in start..end {
        let jf = j as f64;
        for d in 0..dims {
            let x = (jf * alpha[d] + shift[d]).fract();
            let t = (2.0 * x - 1.0).abs();
            w[d] = t;
            wa[d] = 1.0 - t;
        }
        sum += 0.5 * (prep.integrand(&w, &mut y) + prep.integrand(&wa, &mut y));
    }
    sum
}

pub(crate) fn integrate(prep: &Prepared, opts: &MvtOptions) -> Result<MvtResult> {
    let dims = prep.dims();
    if dims == 0 {
        let mut y = vec![0.0; prep.q];
        let p = prep.integrand(&[], &mut y);
        return Ok(MvtResult { probability: p.clamp(0.0, 1.0), error: 0.0, evaluations: 1 });
    }
    let alpha: Vec<f64> = primes(dims).iter().map(|p| (*p as f64).sqrt().fract()).collect();
    let m = opts.randomizations.max(8);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let shifts: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..dims).map(|_| rng.random::<f64>()).collect())
        .collect();

    let mut sums = vec![0.0; m];
    let mut count = 0usize;
    let mut chunk = FIRST_CHUNK;
    loop {
        let start = count + 1;
        let end = start + chunk;
        let partial = map_indexed(m, opts.execution, |r| chunk_sum(prep, &alpha, &shifts[r], start, end));
        for (s, p) in sums.iter_mut().zip(partial) {
            *s += p;
        }
        count += chunk;
        let means: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
        let mean = means.iter().sum::<f64>() / m as f64;
        let var = means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ((m * (m - 1)) as f64);
        let error = ERROR_FACTOR * var.sqrt();
        let evaluations = 2 * count * m;
        if error <= opts.tol {
            return Ok(MvtResult { probability: mean.clamp(0.0, 1.0), error, evaluations });
        }
        if evaluations >= opts.max_points {
            return Err(TrendError::Accuracy { estimate: mean.clamp(0.0, 1.0), error, tol: opts.tol });
        }
        // grow the sample by half each round
        chunk = (count / 2).min((opts.max_points - evaluations).div_ceil(2 * m)).max(1);
    }
}
