//! Sampling primitives for the Gibbs steps.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Gamma, Open01, StandardNormal};

use crate::error::{Error, Result};
use crate::special::{inv_lower_reg_gamma_log, log_lower_reg_gamma, norm_cdf, norm_inv_cdf};

/// Gamma and exponential rates at or below this value are clamped to it.
pub const RATE_FLOOR: f64 = 1e-10;

/// Lower truncation points above this use exponential rejection instead of
/// the inverse CDF.
const TAIL_SWITCH: f64 = 0.75;

/// Side of zero a truncated normal is restricted to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Positive,
    Negative,
}

/// Draw from `N(mean, 1)` restricted to `(0, ∞)` or `(-∞, 0)`.
pub fn sample_truncated_normal<R: Rng + ?Sized>(mean: f64, side: Side, rng: &mut R) -> Result<f64> {
    if !mean.is_finite() {
        return Err(Error::InvalidArgument(format!("truncated normal mean {mean}")));
    }
    Ok(match side {
        Side::Positive => mean + std_normal_above(-mean, rng),
        Side::Negative => -(-mean + std_normal_above(mean, rng)),
    })
}

/// `Z ~ N(0,1)` conditioned on `Z > lower`; the result is strictly above
/// `lower`.
fn std_normal_above<R: Rng + ?Sized>(lower: f64, rng: &mut R) -> f64 {
    if lower < TAIL_SWITCH {
        // -Z | -Z < -lower has CDF Φ(t)/Φ(-lower)
        let mass = norm_cdf(-lower);
        loop {
            let u: f64 = rng.sample(Open01);
            let z = -norm_inv_cdf(u * mass);
            if z > lower && z.is_finite() {
                return z;
            }
        }
    } else {
        // Robert (1995) translated-exponential proposal with optimal rate
        let rate = 0.5 * (lower + (lower * lower + 4.0).sqrt());
        loop {
            let u1: f64 = rng.sample(Open01);
            let z = lower - u1.ln() / rate;
            let u2: f64 = rng.random();
            if u2 <= (-0.5 * (z - rate) * (z - rate)).exp() && z > lower {
                return z;
            }
        }
    }
}

/// Draw a point on the simplex from `Dir(concentration)`.
pub fn sample_dirichlet<R: Rng + ?Sized>(concentration: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let mut out = vec![0.0; concentration.len()];
    sample_dirichlet_into(concentration.iter().copied(), &mut out, rng)?;
    Ok(out)
}

/// Dirichlet draw written into `out`. Gamma variates are produced in log
/// space so that tiny concentrations (e.g. 0.01 over a large vocabulary)
/// cannot underflow the whole vector to zero.
pub fn sample_dirichlet_into<R, I>(concentration: I, out: &mut [f64], rng: &mut R) -> Result<()>
where
    R: Rng + ?Sized,
    I: IntoIterator<Item = f64>,
{
    let mut max = f64::NEG_INFINITY;
    let mut n = 0;
    for (slot, alpha) in out.iter_mut().zip(concentration) {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("Dirichlet concentration {alpha}")));
        }
        let log_g = log_gamma_variate(alpha, rng);
        *slot = log_g;
        max = max.max(log_g);
        n += 1;
    }
    if n != out.len() || n == 0 {
        return Err(Error::InvalidArgument("Dirichlet dimension mismatch".into()));
    }
    let mut total = 0.0;
    for slot in out.iter_mut() {
        *slot = (*slot - max).exp();
        total += *slot;
    }
    for slot in out.iter_mut() {
        *slot /= total;
    }
    Ok(())
}

/// `ln G` with `G ~ Gamma(shape, 1)`.
fn log_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g: f64 = rng.sample(Gamma::new(shape, 1.0).expect("positive shape"));
        g.ln()
    } else {
        // G(a) = G(a+1) · U^{1/a}
        let g: f64 = rng.sample(Gamma::new(shape + 1.0, 1.0).expect("positive shape"));
        let u: f64 = rng.sample(Open01);
        g.ln() + u.ln() / shape
    }
}

/// Index `k` drawn with probability `weights[k] / Σ weights`.
pub fn sample_categorical_unnormalized<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize> {
    let mut total = 0.0;
    for &w in weights {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::DegenerateWeights);
        }
        total += w;
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    Ok(pick(weights, total, rng))
}

/// Unchecked inner loop shared with the topic sampler.
#[inline]
pub(crate) fn pick<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = k;
            if target < acc {
                return k;
            }
        }
    }
    last_positive
}

/// Draw from `MVN(Q⁻¹ b, Q⁻¹)` using one Cholesky factorization of `Q`.
pub fn sample_mvn_by_precision<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    linear_term: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let dim = precision.nrows();
    if precision.ncols() != dim || linear_term.len() != dim {
        return Err(Error::InvalidArgument("precision / linear term shape mismatch".into()));
    }
    let chol = precision.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let mean = chol.solve(linear_term);
    let noise = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    // x = μ + L⁻ᵀ ε has covariance (L Lᵀ)⁻¹
    let offset = chol
        .l()
        .tr_solve_lower_triangular(&noise)
        .ok_or(Error::NotPositiveDefinite)?;
    let draw = mean + offset;
    if draw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(draw)
}

/// `x ~ Gamma(shape, rate)` conditioned on `x < upper`, by inverting the
/// CDF over the truncated range. `upper` may be `+∞`.
pub fn sample_truncated_gamma_inverse<R: Rng + ?Sized>(
    shape: f64,
    rate: f64,
    upper: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(shape > 0.0) || !shape.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma shape {shape}")));
    }
    if !(upper > 0.0) {
        return Err(Error::InvalidArgument(format!("truncation bound {upper}")));
    }
    let rate = clamp_rate(rate)?;
    let scaled_upper = rate * upper;
    let log_cap = log_lower_reg_gamma(shape, scaled_upper);
    let u: f64 = rng.sample(Open01);
    let y = inv_lower_reg_gamma_log(shape, u.ln() + log_cap, scaled_upper);
    Ok(below(y / rate, upper))
}

/// `x ~ Exp(rate)` conditioned on `x < upper`. `upper` may be `+∞`.
pub fn sample_truncated_exponential<R: Rng + ?Sized>(rate: f64, upper: f64, rng: &mut R) -> Result<f64> {
    if !(upper > 0.0) {
        return Err(Error::InvalidArgument(format!("truncation bound {upper}")));
    }
    let rate = clamp_rate(rate)?;
    let u: f64 = rng.sample(Open01);
    let x = -(u * (-rate * upper).exp_m1()).ln_1p() / rate;
    Ok(below(x, upper))
}

fn clamp_rate(rate: f64) -> Result<f64> {
    if rate.is_nan() || rate < 0.0 || rate.is_infinite() {
        return Err(Error::InvalidArgument(format!("rate {rate}")));
    }
    Ok(rate.max(RATE_FLOOR))
}

/// Keep rounding from landing exactly on the open bound.
fn below(x: f64, upper: f64) -> f64 {
    if x < upper {
        x.max(f64::MIN_POSITIVE)
    } else {
        upper * (1.0 - f64::EPSILON)
    }
}
