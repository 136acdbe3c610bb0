//! Steady-state averages and Whittle indices of the single-user AoII problem,
//! in closed form and through independent numerical oracles.
//!
//! The closed forms evaluate the threshold-policy averages (average AoII and
//! active time under threshold `n`) and the Whittle index of a user at AoII
//! `delta`. The oracles in [`chain`] and [`rvi`] rebuild the same quantities
//! from the transition kernel alone and are what the closed forms are tested
//! against.

pub mod chain;
pub mod rvi;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::UserParams;

pub use chain::{
    aoi_whittle_numeric, default_k_max, indexability_check, stationary_solve, whittle_numeric,
    IndexabilityReport, StationaryDist,
};
pub use rvi::{lambda_flip_point, rvi_threshold_check, RviOptions, RviSolution};

/// `1 - a` or `1 - b` below this is treated as a degenerate chain.
pub const DEGENERACY_EPS: f64 = 1e-12;

/// Closed-form denominators below this magnitude are rejected.
pub const DENOMINATOR_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("degenerate parameters: {0}")]
    Degenerate(&'static str),
    #[error("threshold and AoII arguments start at 1, got {0}")]
    ZeroThreshold(u64),
    #[error("closed form denominator vanished ({0:e})")]
    VanishingDenominator(f64),
    #[error("chain tail does not converge (advance probability {0} under transmission)")]
    NonConvergentTail(f64),
    #[error("truncation k_max = {k_max} must exceed the threshold {threshold}")]
    TruncationTooSmall { k_max: u64, threshold: u64 },
    #[error("active time does not decrease between thresholds {threshold} and {next}", next = threshold + 1)]
    IndexabilityViolation { threshold: u64 },
    #[error("relative value iteration did not converge after {iterations} iterations (span {span:e})")]
    NoConvergence { iterations: usize, span: f64 },
    #[error("state cap {0} is too small (need at least 2)")]
    CapTooSmall(u64),
}

pub type Result<T> = std::result::Result<T, AnalyticsError>;

/// Steady-state averages of the single-user chain under a threshold policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStats {
    pub threshold: u64,
    pub avg_cost: f64,
    pub avg_active: f64,
}

/// `base^exp`, switching to exp/ln for large exponents.
pub(crate) fn pow(base: f64, exp: u64) -> f64 {
    if exp <= 64 {
        base.powi(exp as i32)
    } else if base == 0.0 {
        0.0
    } else {
        (exp as f64 * base.ln()).exp()
    }
}

fn chain_constants(params: &UserParams) -> Result<(f64, f64)> {
    let d = params.derived();
    if (1.0 - d.b).abs() < DEGENERACY_EPS {
        return Err(AnalyticsError::Degenerate("b = 1 (the source never changes state)"));
    }
    if (1.0 - d.a).abs() < DEGENERACY_EPS {
        return Err(AnalyticsError::Degenerate("a = 1 (AoII can never reset)"));
    }
    Ok((d.a, d.b))
}

fn check_threshold(n: u64) -> Result<()> {
    if n == 0 {
        Err(AnalyticsError::ZeroThreshold(n))
    } else {
        Ok(())
    }
}

/// Shared denominator of the average-cost and active-time expressions.
fn normaliser(c: f64, a: f64, b: f64, n: u64) -> f64 {
    1.0 + c * (1.0 - pow(b, n)) / (1.0 - b) + c * a * pow(b, n - 1) / (1.0 - a)
}

/// Average AoII under threshold policy `n`.
pub fn avg_aoii_closed(params: &UserParams, threshold: u64) -> Result<f64> {
    check_threshold(threshold)?;
    let (a, b) = chain_constants(params)?;
    let n = threshold as f64;
    let c = (params.n_states() as f64 - 1.0) * params.p_trans();
    let bn = pow(b, threshold);
    let bn1 = pow(b, threshold - 1);
    let idle_part = (1.0 + bn * (n * b - n - 1.0)) / ((1.0 - b) * (1.0 - b));
    let active_part = bn1 * a * (n + 1.0 / (1.0 - a)) / (1.0 - a);
    Ok(c * (idle_part + active_part) / normaliser(c, a, b, threshold))
}

/// Long-run fraction of frames spent transmitting under threshold policy `n`.
pub fn avg_active_closed(params: &UserParams, threshold: u64) -> Result<f64> {
    check_threshold(threshold)?;
    let (a, b) = chain_constants(params)?;
    let c = (params.n_states() as f64 - 1.0) * params.p_trans();
    Ok(c * pow(b, threshold - 1) / ((1.0 - a) * normaliser(c, a, b, threshold)))
}

/// Average QAoII under threshold policy `n`: the AoII average scaled by the
/// query probability.
pub fn avg_qaoii_closed(params: &UserParams, threshold: u64) -> Result<f64> {
    Ok(params.q_query() * avg_aoii_closed(params, threshold)?)
}

pub fn threshold_stats(params: &UserParams, threshold: u64) -> Result<ThresholdStats> {
    Ok(ThresholdStats {
        threshold,
        avg_cost: avg_aoii_closed(params, threshold)?,
        avg_active: avg_active_closed(params, threshold)?,
    })
}

/// Whittle index of the AoII problem at state `delta`.
///
/// The expression is the product `-X * Y * (Z1 - Z2)` over a constant
/// denominator. `X` carries a `b^-delta` factor and `Z1 - Z2` is of order
/// `b^delta`, so both are evaluated with that factor pulled out: `Z1` and `Z2`
/// are split into their common limit plus `b^delta`-sized remainders and only
/// the remainders are differenced.
pub fn whittle_aoii_closed(params: &UserParams, delta: u64) -> Result<f64> {
    check_threshold(delta)?;
    let (a, b) = chain_constants(params)?;
    if b <= 0.0 {
        return Err(AnalyticsError::Degenerate("b = 0 (the source never stays put)"));
    }
    let pt = params.p_trans();
    let nn = params.n_states() as f64;
    let c = (nn - 1.0) * pt;
    let d = delta as f64;
    let g = pow(b, delta);

    // X = x_hat / b^delta
    let x_hat = a * c * g + (a - 1.0) * b * b - (a - 1.0) * b * (c + 1.0) - c * g * b;
    let y = a * (c * g + b - nn * pt + pt - 1.0) - c * g * b - b + nn * pt - pt + 1.0;

    let am1 = a - 1.0;
    let bm1 = b - 1.0;
    // Z_i = p_t (k + g*eps_i) / (l + g*eta_i)
    let k = 1.0 / (bm1 * bm1);
    let l = 1.0 - c / bm1;
    let eps1 = a * (-a * d + d + 1.0) / (b * am1 * am1) + (bm1 * d - 1.0) / (bm1 * bm1);
    let eta1 = -a * c / (b * am1) + c / bm1;
    let eps2 = (b * d + b - d - 2.0) * b / (bm1 * bm1) - a * (a * d + a - d - 2.0) / (am1 * am1);
    let eta2 = -a * c / am1 + c * b / bm1;
    let den1 = l + g * eta1;
    let den2 = l + g * eta2;
    // (Z1 - Z2) / g
    let bracket = k * (eta2 - eta1) + l * (eps1 - eps2) + g * (eps1 * eta2 - eps2 * eta1);
    let x_z = x_hat * pt * bracket / (den1 * den2);

    let denom = am1 * bm1 * bm1 * pt * (b - nn * pt + pt - 1.0);
    if denom.abs() < DENOMINATOR_FLOOR || (den1 * den2).abs() < DENOMINATOR_FLOOR {
        return Err(AnalyticsError::VanishingDenominator(denom));
    }
    Ok(-x_z * y / denom)
}

/// Whittle index of the QAoII problem at AoII `delta`, proportional to the
/// user's query probability.
pub fn whittle_qaoii_closed(params: &UserParams, delta: u64) -> Result<f64> {
    check_threshold(delta)?;
    let (a, b) = chain_constants(params)?;
    let pt = params.p_trans();
    let nn = params.n_states() as f64;
    let c = (nn - 1.0) * pt;
    let d = delta as f64;
    let q = params.q_query();

    let x = a * c * pow(b, delta) + b * b * ((a - 1.0) * d - 1.0)
        - b * ((a - 1.0) * d - 1.0) * (c + 2.0);
    let y = (a - 1.0) * d * (c + 1.0) - a * nn * pt + a * pt - c * pow(b, delta + 1) - 1.0;
    let denom = (a - 1.0) * (b - 1.0) * (b - 1.0) * (b - nn * pt + pt - 1.0);
    if denom.abs() < DENOMINATOR_FLOOR {
        return Err(AnalyticsError::VanishingDenominator(denom));
    }
    Ok(q * (a - b) * (x + y) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UserSpec;

    fn params(n: u32, pr: f64, ps: f64) -> UserParams {
        UserParams::new(n, pr, ps, 1.0).unwrap()
    }

    /// Term-by-term transcription of the index expression, without any
    /// rearrangement. Accurate only while `b^delta` is not tiny.
    fn whittle_as_printed(p: &UserParams, delta: u64) -> f64 {
        let (a, b) = (p.derived().a, p.derived().b);
        let pt = p.p_trans();
        let n = p.n_states() as f64;
        let d = delta as f64;
        let bd = b.powf(d);
        let x = b.powf(-d)
            * (a * (n - 1.0) * pt * bd + (a - 1.0) * b * b
                - (a - 1.0) * b * ((n - 1.0) * pt + 1.0)
                - (n - 1.0) * pt * b.powf(d + 1.0));
        let y = a * ((n - 1.0) * pt * bd + b - n * pt + pt - 1.0)
            - ((n - 1.0) * pt * b.powf(d + 1.0))
            - b
            + n * pt
            - pt
            + 1.0;
        let z1 = pt
            * (a * (-a * d + d + 1.0) * b.powf(d - 1.0) / ((a - 1.0) * (a - 1.0))
                + (((b - 1.0) * d - 1.0) * bd + 1.0) / ((b - 1.0) * (b - 1.0)))
            / (-a * (n - 1.0) * pt * b.powf(d - 1.0) / (a - 1.0)
                - (n - 1.0) * (pt * (1.0 - bd)) / (b - 1.0)
                + 1.0);
        let z2 = pt
            * (((b * d + b - d - 2.0) * b.powf(d + 1.0) + 1.0) / ((b - 1.0) * (b - 1.0))
                - a * (a * d + a - d - 2.0) * bd / ((a - 1.0) * (a - 1.0)))
            / (-a * (n - 1.0) * pt * bd / (a - 1.0)
                - (n - 1.0) * (pt * (1.0 - b.powf(d + 1.0))) / (b - 1.0)
                + 1.0);
        -x * y * (z1 - z2) / ((a - 1.0) * (b - 1.0) * (b - 1.0) * pt * (b - n * pt + pt - 1.0))
    }

    #[test]
    fn stable_index_matches_printed_form_for_moderate_delta() {
        for &(n, pr, ps) in &[(2, 0.8, 0.7), (3, 0.6, 0.5), (4, 0.85, 0.3), (2, 0.95, 0.05)] {
            let p = params(n, pr, ps);
            for delta in 1..=8 {
                let lit = whittle_as_printed(&p, delta);
                let ours = whittle_aoii_closed(&p, delta).unwrap();
                assert!((lit - ours).abs() <= 1e-9 * lit.abs().max(1.0), "{n} {pr} {ps} {delta}: {lit} vs {ours}");
            }
        }
    }

    #[test]
    fn known_values() {
        // Ratio of threshold-chain differences, computed independently in
        // exact rational arithmetic for N=2, p_R=0.8, p_s=0.7:
        // W(1) = 1911/620, W(3) = 3129/500.
        let p = params(2, 0.8, 0.7);
        let w = whittle_aoii_closed(&p, 1).unwrap();
        assert!((w - 1911.0 / 620.0).abs() < 1e-12, "{w}");
        assert!((whittle_aoii_closed(&p, 3).unwrap() - 6.258).abs() < 1e-12);
    }

    #[test]
    fn index_vanishes_when_transmission_is_useless() {
        // p_R = p_t makes both kernels identical.
        let p = params(2, 0.5, 0.6);
        for delta in 1..30 {
            assert!(whittle_aoii_closed(&p, delta).unwrap().abs() < 1e-9);
            assert!(whittle_qaoii_closed(&p, delta).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn qaoii_index_scales_with_query() {
        let spec = UserSpec::new(3, 0.7, 0.4, 0.0);
        let p0 = spec.validate().unwrap();
        assert_eq!(whittle_qaoii_closed(&p0, 4).unwrap(), 0.0);
        let p1 = p0.with_query(1.0).unwrap();
        let ph = p0.with_query(0.5).unwrap();
        for delta in 1..40 {
            let w = whittle_aoii_closed(&p1, delta).unwrap();
            let wq = whittle_qaoii_closed(&p1, delta).unwrap();
            assert!((w - wq).abs() <= 1e-9 * w.abs().max(1e-10));
            let half = whittle_qaoii_closed(&ph, delta).unwrap();
            assert!((half - 0.5 * wq).abs() <= 1e-15 * wq.abs());
        }
    }

    #[test]
    fn qaoii_average_is_scaled_aoii_average() {
        let p = UserParams::new(2, 0.8, 0.7, 1.0).unwrap();
        for n in 1..10 {
            let full = avg_aoii_closed(&p, n).unwrap();
            assert_eq!(avg_qaoii_closed(&p, n).unwrap(), full);
            let half = p.with_query(0.5).unwrap();
            assert!((avg_qaoii_closed(&half, n).unwrap() - 0.5 * full).abs() <= 1e-15 * full);
            let none = p.with_query(0.0).unwrap();
            assert_eq!(avg_qaoii_closed(&none, n).unwrap(), 0.0);
        }
    }

    #[test]
    fn degenerate_parameters_are_rejected() {
        let still = UserParams::new(3, 1.0, 0.5, 1.0).unwrap();
        assert!(matches!(avg_aoii_closed(&still, 2), Err(AnalyticsError::Degenerate(_))));
        assert!(matches!(whittle_aoii_closed(&still, 2), Err(AnalyticsError::Degenerate(_))));
        let p = params(2, 0.8, 0.7);
        assert_eq!(avg_active_closed(&p, 0), Err(AnalyticsError::ZeroThreshold(0)));
        assert!(whittle_qaoii_closed(&p, 0).is_err());
    }

    #[test]
    fn large_delta_stays_finite() {
        let p = params(2, 0.95, 0.05);
        let user1 = params(2, 0.05, 0.95);
        for &delta in &[100u64, 1_000, 10_000, 100_000] {
            assert!(whittle_aoii_closed(&p, delta).unwrap().is_finite());
            assert!(whittle_aoii_closed(&user1, delta).unwrap().is_finite());
            assert!(avg_aoii_closed(&p, delta).unwrap().is_finite());
        }
    }

    #[test]
    fn never_transmit_limit() {
        // n -> infinity: the chain never transmits, AoII > 0 is geometric with
        // reset p_t. Stationary mean = c / (p_t (p_t + c)) with c = (N-1) p_t.
        let p = params(2, 0.8, 0.7);
        let pt = p.p_trans();
        let c = pt;
        let idle_mean = c / (pt * (pt + c));
        assert!((avg_aoii_closed(&p, 200).unwrap() - idle_mean).abs() < 1e-10);
        assert!(avg_active_closed(&p, 200).unwrap() < 1e-15);
    }
}
