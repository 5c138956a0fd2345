use super::{mvt_cdf, MvtOptions, MvtProblem};
use crate::error::{Result, TrendError};
use crate::special::{t_quantile, Df};
use nalgebra::DMatrix;

/// Signed miss `P(c) - (1 - alpha)` and the integration error at `c`.
struct Target<'a> {
    corr: &'a DMatrix<f64>,
    df: Df,
    two_sided: bool,
    level: f64,
}

impl Target<'_> {
    fn eval(&self, c: f64, opts: &MvtOptions) -> Result<(f64, f64)> {
        let q = self.corr.nrows();
        let lower = if self.two_sided { vec![-c; q] } else { vec![f64::NEG_INFINITY; q] };
        let problem = MvtProblem::new(lower, vec![c; q], self.corr.clone(), self.df)?;
        let res = mvt_cdf(&problem, opts)?;
        Ok((res.probability - self.level, res.error))
    }
}

/// Bracketing state of the Illinois iteration.
struct Bracket {
    lo: f64,
    f_lo: f64,
    hi: f64,
    f_hi: f64,
}

/// Illinois regula falsi inside a sign-changing bracket. Exact evaluations
/// (zero reported error) are solved to machine precision.
fn illinois(target: &Target, opts: &MvtOptions, br: &mut Bracket) -> Result<(f64, f64)> {
    let mut last_side = 0i8;
    for _ in 0..200 {
        let c = if br.f_hi > br.f_lo { br.hi - br.f_hi * (br.hi - br.lo) / (br.f_hi - br.f_lo) } else { 0.5 * (br.lo + br.hi) };
        let c = if c > br.lo && c < br.hi { c } else { 0.5 * (br.lo + br.hi) };
        let (fc, err) = target.eval(c, opts)?;
        let root_tol = if err == 0.0 { 1e-13 } else { opts.tol };
        if fc.abs() <= root_tol || br.hi - br.lo < 1e-10 {
            return Ok((c, err));
        }
        if fc < 0.0 {
            br.lo = c;
            br.f_lo = fc;
            if last_side == -1 {
                br.f_hi *= 0.5;
            }
            last_side = -1;
        } else {
            br.hi = c;
            br.f_hi = fc;
            if last_side == 1 {
                br.f_lo *= 0.5;
            }
            last_side = 1;
        }
    }
    Ok((0.5 * (br.lo + br.hi), f64::NAN))
}

/// Critical value `c` with `P(max_j T_j <= c) = 1 - alpha` (one-sided) or
/// `P(max_j |T_j| <= c) = 1 - alpha` (two-sided).
///
/// The root is bracketed by the univariate and Bonferroni quantiles and
/// located with the Illinois variant of regula falsi, first at a tenfold
/// looser integration tolerance and then refined at the requested one. Every
/// evaluation reuses the same seed, so the target function is deterministic.
pub fn equicoordinate_quantile(
    alpha: f64,
    corr: &DMatrix<f64>,
    df: Df,
    two_sided: bool,
    opts: &MvtOptions,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(TrendError::Design(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let q = corr.nrows();
    let tail = if two_sided { alpha / 2.0 } else { alpha };
    if q == 1 {
        return Ok(t_quantile(1.0 - tail, df));
    }
    let target = Target { corr, df, two_sided, level: 1.0 - alpha };
    let coarse = MvtOptions { tol: 10.0 * opts.tol, ..*opts };

    let lo = t_quantile(1.0 - tail, df);
    let (f_lo, _) = target.eval(lo, &coarse)?;
    if f_lo >= 0.0 {
        return Ok(lo);
    }
    let mut br = Bracket { lo, f_lo, hi: t_quantile(1.0 - tail / q as f64, df), f_hi: 0.0 };
    br.f_hi = target.eval(br.hi, &coarse)?.0;
    let mut widen = 0;
    while br.f_hi < 0.0 {
        widen += 1;
        if widen > 40 {
            return Err(TrendError::Accuracy { estimate: br.hi, error: -br.f_hi, tol: opts.tol });
        }
        br.lo = br.hi;
        br.f_lo = br.f_hi;
        br.hi += 0.25;
        br.f_hi = target.eval(br.hi, &coarse)?.0;
    }
    let (c0, err) = illinois(&target, &coarse, &mut br)?;
    if err == 0.0 {
        return Ok(c0);
    }
    // slope of the probability in c, from the final coarse bracket
    let slope = ((br.f_hi - br.f_lo) / (br.hi - br.lo)).max(1e-6);

    let (f0, err0) = target.eval(c0, opts)?;
    if f0.abs() <= opts.tol || err0 == 0.0 {
        return Ok(c0);
    }
    // walk away from c0 until the fine target changes sign
    let dir = if f0 < 0.0 { 1.0 } else { -1.0 };
    let mut step = (1.5 * f0.abs() / slope).max(1e-6);
    let (mut c1, mut f1);
    let mut tries = 0;
    loop {
        c1 = c0 + dir * step;
        f1 = target.eval(c1, opts)?.0;
        if f1.abs() <= opts.tol {
            return Ok(c1);
        }
        if (f1 > 0.0) != (f0 > 0.0) {
            break;
        }
        tries += 1;
        if tries > 40 {
            return Err(TrendError::Accuracy { estimate: c1, error: f1.abs(), tol: opts.tol });
        }
        step *= 2.0;
    }
    let mut fine = if c0 < c1 {
        Bracket { lo: c0, f_lo: f0, hi: c1, f_hi: f1 }
    } else {
        Bracket { lo: c1, f_lo: f1, hi: c0, f_hi: f0 }
    };
    Ok(illinois(&target, opts, &mut fine)?.0)
}
