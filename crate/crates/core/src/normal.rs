//! Standard normal CDF and quantile function.
//!
//! Both directions are needed by the tuning and inference modules: the
//! penalty level is a quantile of the standard normal and p-values are tail
//! probabilities. The CDF is evaluated through a convergent positive-term
//! series in the central range and an asymptotic tail expansion outside it;
//! the quantile is a classical rational approximation polished by Halley
//! iterations on the CDF, giving close to machine precision (the accuracy
//! contract, checked in tests, is `|Φ(Φ⁻¹(u)) − u| ≤ 1e-9`).

use crate::error::{Error, Result};

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Below this |x| the central series is used; above it the tail is
/// evaluated directly so tiny probabilities keep relative accuracy.
const TAIL_CUTOFF: f64 = 3.0;

/// Standard normal density.
pub fn density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Central-range helper: `Φ(a) − 1/2` for `0 ≤ a ≤ TAIL_CUTOFF`, via the
/// positive-term series `φ(a) · Σ_{k≥0} a^{2k+1} / (1·3·5···(2k+1))`.
fn central_excess(a: f64) -> f64 {
    let mut term = a;
    let mut sum = a;
    let mut k = 0u32;
    while term > sum * 1e-18 && k < 200 {
        k += 1;
        term *= a * a / (2.0 * f64::from(k) + 1.0);
        sum += term;
    }
    density(a) * sum
}

/// Upper-tail helper: `Q(a) = 1 − Φ(a)` for `a ≥ TAIL_CUTOFF`, via the
/// Lentz evaluation of the Mills-ratio continued fraction
/// `Q(a) = φ(a) / (a + 1/(a + 2/(a + 3/(a + ⋯))))`.
fn upper_tail(a: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = a.max(tiny);
    let mut c = f;
    let mut d = 0.0;
    for k in 1u32..=300 {
        let alpha = f64::from(k);
        d = a + alpha * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = a + alpha / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    density(a) / f
}

/// Standard normal CDF `Φ(x)`.
///
/// Relative accuracy is about `1e-14` in both tails and a few ulps in the
/// central range, far inside the tolerance any caller in this crate needs.
pub fn cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let a = x.abs();
    if a <= TAIL_CUTOFF {
        let excess = central_excess(a);
        if x >= 0.0 {
            0.5 + excess
        } else {
            0.5 - excess
        }
    } else {
        let tail = upper_tail(a);
        if x >= 0.0 {
            1.0 - tail
        } else {
            tail
        }
    }
}

/// Standard normal quantile `Φ⁻¹(u)` for `u ∈ (0, 1)`.
///
/// A rational first guess (Abramowitz–Stegun 26.2.22, max error ≈ 3e-3) is
/// refined by three Halley steps against [`cdf`]; the composition is exact
/// to roughly `1e-15` over `(1e-300, 1 − 1e-16)`.
pub fn quantile(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InvalidInput(format!(
            "quantile requires a probability strictly inside (0, 1), got {u}"
        )));
    }
    if u == 0.5 {
        return Ok(0.0);
    }
    let lower_tail = u < 0.5;
    let p = if lower_tail { u } else { 1.0 - u };

    // Rational initial guess for the lower-tail quantile (negative value).
    let t = (-2.0 * p.ln()).sqrt();
    let mut x = -(t - (2.30753 + 0.27061 * t) / (1.0 + 0.99229 * t + 0.04481 * t * t));

    // Halley refinement: with f(x) = Φ(x) − p we have f'' / f' = −x, so the
    // step is r / (1 + x r / 2) with r = f / f'.
    for _ in 0..3 {
        let err = cdf(x) - p;
        let d = density(x);
        if d <= f64::MIN_POSITIVE {
            break;
        }
        let r = err / d;
        x -= r / (1.0 + 0.5 * x * r);
    }

    Ok(if lower_tail { x } else { -x })
}
