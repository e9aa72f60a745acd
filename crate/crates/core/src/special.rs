//! Normal CDF helpers and the regularized incomplete gamma function in log
//! space.

use libm::erfc;
use statrs::function::erf::erfc_inv;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// `ln Φ(x)`, accurate far into the lower tail.
pub fn norm_log_cdf(x: f64) -> f64 {
    if x > 0.0 {
        // Φ(x) = 1 - Φ(-x)
        (-0.5 * erfc(x / SQRT_2)).ln_1p()
    } else if x > -30.0 {
        (0.5 * erfc(-x / SQRT_2)).ln()
    } else {
        // Mills ratio asymptotic expansion
        let x2 = x * x;
        let inv = 1.0 / x2;
        let series = 1.0 - inv + 3.0 * inv * inv - 15.0 * inv.powi(3) + 105.0 * inv.powi(4);
        -0.5 * x2 - (-x).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// Inverse of the standard normal CDF.
pub fn norm_inv_cdf(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Numerically stable `ln(Σ exp(xs))`. Returns `-inf` for an empty slice or
/// when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln P(a, x)` where `P` is the regularized lower incomplete gamma function.
pub fn log_lower_reg_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if x.is_infinite() {
        return 0.0;
    }
    if x < a + 1.0 {
        // series: P = x^a e^-x / Γ(a+1) · Σ x^n / ((a+1)…(a+n))
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        a * x.ln() - x - ln_gamma(a + 1.0) + sum.ln()
    } else {
        // Lentz continued fraction for Q
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let log_q = a * x.ln() - x - ln_gamma(a) + h.ln();
        (-log_q.exp()).ln_1p()
    }
}

/// Solve `ln P(a, x) = log_target` for `x` in `(0, upper]`.
///
/// `log_target` must not exceed `ln P(a, upper)`.
pub fn inv_lower_reg_gamma_log(a: f64, log_target: f64, upper: f64) -> f64 {
    let f = |t: f64| log_lower_reg_gamma(a, t.exp()) - log_target;
    let mut hi = upper.ln();
    if hi.is_infinite() {
        hi = (a + 1.0).ln() + 1.0;
        while f(hi) <= 0.0 && hi < 700.0 {
            hi += 1.0 + hi.abs();
        }
    }
    if f(hi) <= 0.0 {
        return hi.exp().min(upper);
    }
    // small-x approximation ln P ≈ a ln x - ln Γ(a+1)
    let guess = ((log_target + ln_gamma(a + 1.0)) / a).min(hi);
    let mut lo = guess - 1.0;
    let mut step = 1.0;
    while f(lo) > 0.0 {
        hi = lo;
        step *= 2.0;
        lo -= step;
        if lo < -745.0 {
            return lo.exp().max(f64::MIN_POSITIVE);
        }
    }
    let lgamma_a = ln_gamma(a);
    let mut t = guess.clamp(lo, hi);
    for _ in 0..200 {
        let val = f(t);
        if val == 0.0 {
            return t.exp();
        }
        if val > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let x = t.exp();
        // d ln P / d ln x = x p(x) / P(x)
        let log_p = val + log_target;
        let deriv = (a * t - x - lgamma_a - log_p).exp();
        let mut next = t - val / deriv;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() < 1e-13 * t.abs().max(1.0) || hi - lo < 1e-14 {
            return next.exp();
        }
        t = next;
    }
    t.exp()
}
