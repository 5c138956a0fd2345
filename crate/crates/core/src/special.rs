//! Univariate normal, Student t and chi-square helpers used throughout the
//! integration and testing code.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::{gamma_lr, ln_gamma};
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

/// Degrees of freedom of a t-type reference distribution; `Infinite` means
/// the normal limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Df {
    Finite(u32),
    Infinite,
}

impl Df {
    pub fn is_infinite(self) -> bool {
        matches!(self, Df::Infinite)
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Df::Finite(d) => d as f64,
            Df::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Df {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Df::Finite(d) => write!(f, "{d}"),
            Df::Infinite => write!(f, "Inf"),
        }
    }
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Inverse of the standard normal CDF (Wichura's AS 241, PPND16), accurate to
/// about 1e-16 relative.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((5.226_495_278_852_854_5e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn student(df: u32) -> StudentsT {
    StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1")
}

pub fn t_cdf(x: f64, df: Df) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    match df {
        Df::Infinite => norm_cdf(x),
        Df::Finite(d) => student(d).cdf(x),
    }
}

/// Upper tail `P(T > x)`, computed without cancellation.
pub fn t_sf(x: f64, df: Df) -> f64 {
    t_cdf(-x, df)
}

pub fn t_quantile(p: f64, df: Df) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    match df {
        Df::Infinite => norm_quantile(p),
        Df::Finite(d) => {
            let mut x = student(d).inverse_cdf(p);
            // polish with Newton steps on the CDF
            let dist = student(d);
            for _ in 0..3 {
                let f = t_density(x, d);
                if f <= 0.0 {
                    break;
                }
                let step = (dist.cdf(x) - p) / f;
                x -= step;
                if step.abs() < 1e-14 * x.abs().max(1.0) {
                    break;
                }
            }
            x
        }
    }
}

fn t_density(x: f64, df: u32) -> f64 {
    let nu = df as f64;
    let ln_c = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln();
    (ln_c - 0.5 * (nu + 1.0) * (1.0 + x * x / nu).ln()).exp()
}

/// Above this many degrees of freedom the chi-square quantile is taken from
/// the Wilson-Hilferty cube approximation, polished by Newton steps up to
/// `CHI_POLISH_MAX_DF`.
const CHI_EXACT_MAX_DF: u32 = 100;
const CHI_POLISH_MAX_DF: u32 = 10_000;

/// CDF of the chi-square distribution with integer `df`, via the closed-form
/// finite series.
pub fn chi2_cdf_int(x: f64, df: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let half = 0.5 * x;
    if df % 2 == 0 {
        let m = df / 2;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..m {
            term *= half / k as f64;
            sum += term;
        }
        1.0 - (-half).exp() * sum
    } else {
        let root = x.sqrt();
        let base = libm::erf(root * FRAC_1_SQRT_2);
        if df == 1 {
            return base;
        }
        let mut term = root;
        let mut sum = term;
        for k in 2..=(df - 1) / 2 {
            term *= x / (2 * k - 1) as f64;
            sum += term;
        }
        base - (2.0 / PI).sqrt() * (-half).exp() * sum
    }
}

/// Quantile function of `sqrt(X / df)` for `X ~ chi-square(df)`: the scale
/// variable of a multivariate t as a ratio of a normal vector and this
/// scale. Construction caches the log normalizing constant.
#[derive(Debug, Clone, Copy)]
pub struct ChiScale {
    df: u32,
    nu: f64,
    log_norm: f64,
}

impl ChiScale {
    pub fn new(df: u32) -> Self {
        let a = 0.5 * df as f64;
        Self { df, nu: df as f64, log_norm: a * 2f64.ln() + ln_gamma(a) }
    }

    fn density(&self, x: f64) -> f64 {
        ((0.5 * self.nu - 1.0) * x.ln() - 0.5 * x - self.log_norm).exp()
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let (df, nu) = (self.df, self.nu);
        let z = norm_quantile(u.clamp(1e-300, 1.0 - 1e-16));
        let c = 2.0 / (9.0 * nu);
        let wh = 1.0 - c + z * c.sqrt();
        if df > CHI_EXACT_MAX_DF && wh > 0.0 {
            let mut x = nu * wh * wh * wh;
            if df <= CHI_POLISH_MAX_DF {
                for _ in 0..3 {
                    let step = (gamma_lr(0.5 * nu, 0.5 * x) - u) / self.density(x);
                    x -= step;
                    if step.abs() <= 1e-12 * x {
                        break;
                    }
                }
            }
            return (x / nu).sqrt();
        }
        // safeguarded Halley iteration on the chi-square CDF, bisecting
        // whenever a step leaves the current bracket
        let (mut lo, mut hi) = (0.0f64, nu + 40.0 * (nu + 10.0).sqrt() + 100.0);
        let mut x = if wh > 0.0 { (nu * wh * wh * wh).clamp(1e-300, hi) } else { 0.5 * hi.min(nu) };
        for _ in 0..200 {
            let f = chi2_cdf_int(x, df) - u;
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let dens = self.density(x);
            // Halley step; the density's log-derivative is (nu/2 - 1)/x - 1/2
            let curv = (0.5 * nu - 1.0) / x - 0.5;
            let newton_step = f / dens;
            let step = newton_step / (1.0 - 0.5 * newton_step * curv);
            // cubic convergence: a step this small leaves an error near 1e-12
            if dens > 0.0 && step.is_finite() && step.abs() <= 1e-4 * x {
                x -= step;
                break;
            }
            let newton = x - step;
            x = if dens > 0.0 && dens.is_finite() && newton > lo && newton < hi {
                newton
            } else if lo > 0.0 {
                (lo * hi).sqrt()
            } else {
                1e-3 * hi
            };
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        (x / nu).sqrt()
    }
}

pub fn chi_scale_quantile(u: f64, df: u32) -> f64 {
    ChiScale::new(df).quantile(u)
}
