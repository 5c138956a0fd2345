//! Deterministic bivariate normal and t probabilities (Drezner-Wesolowsky
//! type Gauss-Legendre quadrature for the normal, Dunnett-Sobel series for
//! integer-df t), following Genz's formulations.

use crate::special::{norm_cdf, t_cdf, Df};
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Gauss-Legendre nodes and weights on [-1, 1] for `n` points.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn rule(points: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static R6: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static R12: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static R20: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    match points {
        6 => R6.get_or_init(|| gauss_legendre(6)),
        12 => R12.get_or_init(|| gauss_legendre(12)),
        _ => R20.get_or_init(|| gauss_legendre(20)),
    }
}

/// `P(X > h, Y > k)` for a standard bivariate normal with correlation `r`;
/// `h` and `k` finite.
pub fn bvnd(h: f64, k: f64, r: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let (nodes, weights) = if r.abs() < 0.3 {
        rule(6)
    } else if r.abs() < 0.75 {
        rule(12)
    } else {
        rule(20)
    };
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for (x, w) in nodes.iter().zip(weights) {
            let sn = (asr * (x + 1.0) / 2.0).sin();
            bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        bvn *= asr / (2.0 * two_pi);
        return bvn + norm_cdf(-h) * norm_cdf(-k);
    }
    let mut k = k;
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let as_ = (1.0 - r) * (1.0 + r);
        let mut a = as_.sqrt();
        let bs = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a * (-(bs / as_ + hk) / 2.0).exp()
            * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
        if hk > -160.0 {
            let b = bs.sqrt();
            bvn -= (-hk / 2.0).exp()
                * two_pi.sqrt()
                * norm_cdf(-b / a)
                * b
                * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for (x, w) in nodes.iter().zip(weights) {
            let xs = (a * (x + 1.0)).powi(2);
            let rs = (1.0 - xs).sqrt();
            bvn += a
                * w
                * ((-bs / (2.0 * xs) - hk / (1.0 + rs)).exp() / rs
                    - (-(bs / xs + hk) / 2.0).exp() * (1.0 + c * xs * (1.0 + d * xs)));
        }
        bvn = -bvn / two_pi;
    }
    if r > 0.0 {
        bvn + norm_cdf(-h.max(k))
    } else {
        -bvn + (norm_cdf(-h) - norm_cdf(-k)).max(0.0)
    }
}

/// `P(X < h, Y < k)` for a standard bivariate t with `nu` degrees of freedom
/// and correlation `r`; `h` and `k` finite.
pub fn bvtl(nu: u32, h: f64, k: f64, r: f64) -> f64 {
    let eps = 1e-15;
    let df = Df::Finite(nu);
    if 1.0 - r <= eps {
        return t_cdf(h.min(k), df);
    }
    if r + 1.0 <= eps {
        return if h > -k { t_cdf(h, df) - t_cdf(-k, df) } else { 0.0 };
    }
    let two_pi = 2.0 * PI;
    let fnu = nu as f64;
    let snu = fnu.sqrt();
    let ors = 1.0 - r * r;
    let hrk = h - r * k;
    let krh = k - r * h;
    let (xnhk, xnkh) = if hrk.abs() + ors > 0.0 {
        (
            hrk * hrk / (hrk * hrk + ors * (fnu + k * k)),
            krh * krh / (krh * krh + ors * (fnu + h * h)),
        )
    } else {
        (0.0, 0.0)
    };
    let hs = if hrk < 0.0 { -1.0 } else { 1.0 };
    let ks = if krh < 0.0 { -1.0 } else { 1.0 };
    let mut bvt;
    if nu % 2 == 0 {
        bvt = ors.sqrt().atan2(-r) / two_pi;
        let mut gmph = h / (16.0 * (fnu + h * h)).sqrt();
        let mut gmpk = k / (16.0 * (fnu + k * k)).sqrt();
        let mut btnckh = 2.0 * xnkh.sqrt().atan2((1.0 - xnkh).sqrt()) / PI;
        let mut btpdkh = 2.0 * (xnkh * (1.0 - xnkh)).sqrt() / PI;
        let mut btnchk = 2.0 * xnhk.sqrt().atan2((1.0 - xnhk).sqrt()) / PI;
        let mut btpdhk = 2.0 * (xnhk * (1.0 - xnhk)).sqrt() / PI;
        for j in 1..=nu / 2 {
            let fj = j as f64;
            bvt += gmph * (1.0 + ks * btnckh);
            bvt += gmpk * (1.0 + hs * btnchk);
            btnckh += btpdkh;
            btpdkh = 2.0 * fj * btpdkh * (1.0 - xnkh) / (2.0 * fj + 1.0);
            btnchk += btpdhk;
            btpdhk = 2.0 * fj * btpdhk * (1.0 - xnhk) / (2.0 * fj + 1.0);
            gmph = gmph * (2.0 * fj - 1.0) / (2.0 * fj * (1.0 + h * h / fnu));
            gmpk = gmpk * (2.0 * fj - 1.0) / (2.0 * fj * (1.0 + k * k / fnu));
        }
    } else {
        let qhrk = (h * h + k * k - 2.0 * r * h * k + fnu * ors).sqrt();
        let hkrn = h * k + r * fnu;
        let hkn = h * k - fnu;
        let hpk = h + k;
        bvt = (-snu * (hkn * qhrk + hpk * hkrn)).atan2(hkn * hkrn - fnu * hpk * qhrk) / two_pi;
        if bvt < -eps {
            bvt += 1.0;
        }
        let mut gmph = h / (two_pi * snu * (1.0 + h * h / fnu));
        let mut gmpk = k / (two_pi * snu * (1.0 + k * k / fnu));
        let mut btnckh = xnkh.sqrt();
        let mut btpdkh = btnckh;
        let mut btnchk = xnhk.sqrt();
        let mut btpdhk = btnchk;
        for j in 1..=(nu - 1) / 2 {
            let fj = j as f64;
            bvt += gmph * (1.0 + ks * btnckh);
            bvt += gmpk * (1.0 + hs * btnchk);
            btpdkh = (2.0 * fj - 1.0) * btpdkh * (1.0 - xnkh) / (2.0 * fj);
            btnckh += btpdkh;
            btpdhk = (2.0 * fj - 1.0) * btpdhk * (1.0 - xnhk) / (2.0 * fj);
            btnchk += btpdhk;
            gmph = 2.0 * fj * gmph / ((2.0 * fj + 1.0) * (1.0 + h * h / fnu));
            gmpk = 2.0 * fj * gmpk / ((2.0 * fj + 1.0) * (1.0 + k * k / fnu));
        }
    }
    bvt
}

/// Bivariate CDF `P(X < x, Y < y)` with infinite arguments allowed.
pub fn bivariate_cdf(x: f64, y: f64, r: f64, df: Df) -> f64 {
    if x == f64::NEG_INFINITY || y == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return t_cdf(y, df);
    }
    if y == f64::INFINITY {
        return t_cdf(x, df);
    }
    let p = match df {
        Df::Infinite => bvnd(-x, -y, r),
        Df::Finite(nu) => bvtl(nu, x, y, r),
    };
    p.clamp(0.0, 1.0)
}

/// Probability of the rectangle `[lower, upper]` by inclusion-exclusion.
pub fn bivariate_rectangle(lower: [f64; 2], upper: [f64; 2], r: f64, df: Df) -> f64 {
    let p = bivariate_cdf(upper[0], upper[1], r, df) - bivariate_cdf(lower[0], upper[1], r, df)
        - bivariate_cdf(upper[0], lower[1], r, df)
        + bivariate_cdf(lower[0], lower[1], r, df);
    p.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::norm_pdf;
    use approx::assert_abs_diff_eq;

    /// `P(X > h, Y > k)` by composite Simpson integration of
    /// `phi(x) * P(Y > k | X = x)` over `x > h`.
    fn bvn_oracle(h: f64, k: f64, r: f64) -> f64 {
        let s = (1.0 - r * r).sqrt();
        let upper = 12.0f64.max(h + 12.0);
        let n = 40_000;
        let step = (upper - h) / n as f64;
        let f = |x: f64| norm_pdf(x) * norm_cdf((r * x - k) / s);
        let mut acc = f(h) + f(upper);
        for i in 1..n {
            let x = h + i as f64 * step;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        acc * step / 3.0
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        let int: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert_abs_diff_eq!(int, 2.0 / 11.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn bvnd_matches_quadrature_oracle() {
        for &r in &[-0.99, -0.95, -0.8, -0.5, -0.1, 0.0, 0.2, 0.5, 0.8, 0.93, 0.97, 0.999] {
            for &(h, k) in &[(0.0, 0.0), (1.0, -0.5), (-1.5, 2.0), (2.5, 2.0), (-0.3, -0.3)] {
                let got = bvnd(h, k, r);
                let want = bvn_oracle(h, k, r);
                assert_abs_diff_eq!(got, want, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn orthants_follow_arcsine_law() {
        // for any elliptical law P(X < 0, Y < 0) = 1/4 + asin(r) / (2 pi)
        for &r in &[-0.9f64, -0.3, 0.0, 0.5, 0.85, 0.97] {
            let want = 0.25 + r.asin() / (2.0 * PI);
            assert_abs_diff_eq!(bivariate_cdf(0.0, 0.0, r, Df::Infinite), want, epsilon = 1e-14);
            for nu in [1u32, 2, 3, 10, 54] {
                assert_abs_diff_eq!(bvtl(nu, 0.0, 0.0, r), want, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn bvtl_marginal_and_limits() {
        // letting one bound grow recovers the univariate t
        let p = bvtl(7, 1.3, 60.0, 0.4);
        assert_abs_diff_eq!(p, t_cdf(1.3, Df::Finite(7)), epsilon = 1e-9);
        let big = bvtl(2000, 0.8, -0.4, 0.6);
        assert_abs_diff_eq!(big, bvnd(-0.8, 0.4, 0.6), epsilon = 5e-4);
        assert_abs_diff_eq!(bvtl(5, 1.0, 2.0, 1.0), t_cdf(1.0, Df::Finite(5)), epsilon = 1e-14);
    }

    #[test]
    fn bvtl_matches_scale_mixture() {
        // P(T1 < h, T2 < k) = E_s[ Phi2(h s, k s) ] with s = sqrt(chi2_nu / nu)
        use crate::special::chi_scale_quantile;
        for nu in [3u32, 4, 9] {
            for &(h, k, r) in &[(1.0, 0.5, 0.3), (-0.5, 1.5, -0.6), (2.0, 2.0, 0.9)] {
                let m = 20_000;
                let mut acc = 0.0;
                for i in 0..m {
                    let u = (i as f64 + 0.5) / m as f64;
                    let s = chi_scale_quantile(u, nu);
                    acc += bvnd(-h * s, -k * s, r);
                }
                assert_abs_diff_eq!(bvtl(nu, h, k, r), acc / m as f64, epsilon = 2e-5);
            }
        }
    }

    #[test]
    fn rectangle_with_infinite_bounds() {
        let p = bivariate_rectangle([f64::NEG_INFINITY; 2], [0.0, 0.0], 0.0, Df::Infinite);
        assert_abs_diff_eq!(p, 0.25, epsilon = 1e-15);
        let two = bivariate_rectangle([-1.0, -1.0], [1.0, 1.0], 0.0, Df::Infinite);
        let one = norm_cdf(1.0) - norm_cdf(-1.0);
        assert_abs_diff_eq!(two, one * one, epsilon = 1e-13);
    }
}
