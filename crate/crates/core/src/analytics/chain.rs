//! Numerical oracles built on the balance equations of birth–reset chains.
//!
//! Under a threshold policy both the AoII and the classic AoI of a single
//! user form a chain that either advances by one or resets to a base state.
//! Balance at state `k + 1` gives `pi[k + 1] = pi[k] * up(k)`, so the
//! stationary law is a running product, truncated at `k_max` with the
//! remaining geometric tail summed analytically.

use super::{pow, AnalyticsError, Result};
use crate::model::{aoii_kernel, Action, UserParams};

/// Target bound on the truncated tail `r^(k_max - threshold)`.
pub const TAIL_TOLERANCE: f64 = 1e-14;
/// Hard cap on the explicit truncation depth.
pub const MAX_K: u64 = 100_000;

/// A chain that from state `k` advances to `k + 1` or falls back to `base()`.
/// States at or above the threshold transmit, the others stay idle.
pub trait ResetChain {
    fn base(&self) -> u64;
    /// Advance probability of an idle state.
    fn idle_up(&self, state: u64) -> f64;
    /// Advance probability of a transmitting state (constant).
    fn active_up(&self) -> f64;

    fn up(&self, state: u64, threshold: u64) -> f64 {
        if state < threshold {
            self.idle_up(state)
        } else {
            self.active_up()
        }
    }
}

/// AoII chain of one user, read off the transition kernel.
#[derive(Clone, Copy, Debug)]
pub struct AoiiChain<'a>(pub &'a UserParams);

impl ResetChain for AoiiChain<'_> {
    fn base(&self) -> u64 {
        0
    }

    fn idle_up(&self, state: u64) -> f64 {
        aoii_kernel(state, Action::Idle, self.0).advance
    }

    fn active_up(&self) -> f64 {
        aoii_kernel(1, Action::Transmit, self.0).advance
    }
}

/// Classic AoI chain: resets to 1 on a delivered update.
#[derive(Clone, Copy, Debug)]
pub struct AoiChain {
    pub p_success: f64,
}

impl ResetChain for AoiChain {
    fn base(&self) -> u64 {
        1
    }

    fn idle_up(&self, _state: u64) -> f64 {
        1.0
    }

    fn active_up(&self) -> f64 {
        1.0 - self.p_success
    }
}

/// Truncation depth for a geometric tail of ratio `ratio` above `threshold`.
pub fn truncation_for(ratio: f64, threshold: u64) -> u64 {
    let extra = if ratio <= 0.0 {
        1
    } else if ratio >= 1.0 {
        MAX_K
    } else {
        (TAIL_TOLERANCE.ln() / ratio.ln()).ceil().max(1.0) as u64
    };
    (threshold + extra).min(MAX_K).max(threshold + 1)
}

/// Default truncation for the AoII chain of `params` under `threshold`.
pub fn default_k_max(params: &UserParams, threshold: u64) -> u64 {
    let d = params.derived();
    truncation_for(d.a.max(d.b), threshold)
}

/// Stationary law of a threshold chain: explicit masses for states
/// `base..=k_max` and the analytic remainder above `k_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryDist {
    pub base: u64,
    pub threshold: u64,
    pub masses: Vec<f64>,
    pub tail_mass: f64,
    /// `sum_{k > k_max} k * pi[k]`
    pub tail_moment: f64,
}

impl StationaryDist {
    pub fn k_max(&self) -> u64 {
        self.base + self.masses.len() as u64 - 1
    }

    pub fn mass(&self, state: u64) -> f64 {
        state
            .checked_sub(self.base)
            .and_then(|i| self.masses.get(i as usize).copied())
            .unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum::<f64>() + self.tail_mass
    }

    /// `sum_k k * pi[k]`
    pub fn mean(&self) -> f64 {
        let explicit: f64 = self
            .masses
            .iter()
            .enumerate()
            .map(|(i, m)| (self.base + i as u64) as f64 * m)
            .sum();
        explicit + self.tail_moment
    }

    /// Probability of being at or above the threshold.
    pub fn active_fraction(&self) -> f64 {
        let start = self.threshold.saturating_sub(self.base) as usize;
        self.masses.iter().skip(start).sum::<f64>() + self.tail_mass
    }
}

/// Geometric remainder `sum_{j>=1} x r^j` and `sum_{j>=1} (k + j) x r^j`.
fn geometric_tail(x: f64, r: f64, k: u64) -> (f64, f64) {
    if r <= 0.0 || x == 0.0 {
        return (0.0, 0.0);
    }
    let s = r / (1.0 - r);
    (x * s, x * (k as f64 * s + r / ((1.0 - r) * (1.0 - r))))
}

pub fn solve_chain<C: ResetChain>(chain: &C, threshold: u64, k_max: u64) -> Result<StationaryDist> {
    let base = chain.base();
    if threshold == 0 || threshold < base {
        return Err(AnalyticsError::ZeroThreshold(threshold));
    }
    if k_max <= threshold {
        return Err(AnalyticsError::TruncationTooSmall { k_max, threshold });
    }
    let r = chain.active_up();
    if r >= 1.0 {
        return Err(AnalyticsError::NonConvergentTail(r));
    }
    if pow(r, k_max - threshold) >= TAIL_TOLERANCE {
        log::warn!("truncation k_max = {k_max} leaves a tail bound above {TAIL_TOLERANCE:e}");
    }
    let mut weights = Vec::with_capacity((k_max - base + 1) as usize);
    let mut w = 1.0;
    weights.push(w);
    for k in base..k_max {
        w *= chain.up(k, threshold);
        weights.push(w);
    }
    let (tail_mass, tail_moment) = geometric_tail(w, r, k_max);
    let z = weights.iter().sum::<f64>() + tail_mass;
    for m in weights.iter_mut() {
        *m /= z;
    }
    Ok(StationaryDist {
        base,
        threshold,
        masses: weights,
        tail_mass: tail_mass / z,
        tail_moment: tail_moment / z,
    })
}

/// Stationary AoII law under threshold policy `threshold`.
pub fn stationary_solve(params: &UserParams, threshold: u64, k_max: u64) -> Result<StationaryDist> {
    solve_chain(&AoiiChain(params), threshold, k_max)
}

/// Whittle index of a reset chain at state `n`: the penalty `lambda` at which
/// thresholds `n` and `n + 1` have equal `cost + lambda * active`.
///
/// Both chains share their weights up to state `n`; only the tails differ, and
/// the tail differences are accumulated directly so that the result keeps its
/// relative accuracy when the averages themselves differ by tiny amounts.
pub fn threshold_index<C: ResetChain>(chain: &C, n: u64, cost_scale: f64) -> Result<f64> {
    let base = chain.base();
    if n == 0 || n < base {
        return Err(AnalyticsError::ZeroThreshold(n));
    }
    let r = chain.active_up();
    if r >= 1.0 {
        return Err(AnalyticsError::NonConvergentTail(r));
    }

    // Shared prefix, states base..n.
    let (mut zc, mut sc, mut u) = (0.0, 0.0, 1.0);
    for k in base..n {
        zc += u;
        sc += k as f64 * u;
        u *= chain.idle_up(k);
    }
    let un = u;

    // w1: threshold n + 1 weights from state n on; d: (threshold n) - w1.
    let k_max = truncation_for(r, n + 1);
    let mut w1 = un;
    let mut d = 0.0;
    let (mut r1, mut t1, mut dr, mut dt) = (un, n as f64 * un, 0.0, 0.0);
    for k in (n + 1)..=k_max {
        if k == n + 1 {
            w1 = un * chain.idle_up(n);
            d = un * r - w1;
        } else {
            w1 *= r;
            d *= r;
        }
        r1 += w1;
        t1 += k as f64 * w1;
        dr += d;
        dt += k as f64 * d;
    }
    let (m, mm) = geometric_tail(w1, r, k_max);
    r1 += m;
    t1 += mm;
    let (m, mm) = geometric_tail(d, r, k_max);
    dr += m;
    dt += mm;

    let z1 = zc + r1;
    let s1 = sc + t1;
    let z0 = z1 + dr;
    let p0 = r1 + dr;
    let dp = un + dr;

    let num = s1 * dr - z1 * dt;
    let den = z0 * dp - p0 * dr;
    if den.is_nan() || den <= 1e-14 * p0 * z1 {
        return Err(AnalyticsError::IndexabilityViolation { threshold: n });
    }
    Ok(cost_scale * num / den)
}

/// Definition-based Whittle index of the AoII problem at `delta`, scaled by
/// `cost_scale` (the query probability for QAoII).
pub fn whittle_numeric(params: &UserParams, delta: u64, cost_scale: f64) -> Result<f64> {
    threshold_index(&AoiiChain(params), delta, cost_scale)
}

/// Whittle index of the classic AoI problem at age `aoi` over a channel with
/// success probability `p_success`.
pub fn aoi_whittle_numeric(p_success: f64, aoi: u64) -> Result<f64> {
    if !(p_success > 0.0 && p_success <= 1.0) {
        return Err(AnalyticsError::Degenerate("AoI index needs p_success in (0, 1]"));
    }
    threshold_index(&AoiChain { p_success }, aoi, 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexabilityReport {
    pub passed: bool,
    pub first_violation: Option<u64>,
    /// Active time for thresholds `1..=n_max`.
    pub active: Vec<f64>,
}

/// Checks that the stationary active time strictly decreases over thresholds
/// `1..=n_max`.
pub fn indexability_check(params: &UserParams, n_max: u64) -> Result<IndexabilityReport> {
    if params.p_success() == 0.0 {
        return Err(AnalyticsError::Degenerate("p_success = 0 (dead channel)"));
    }
    if params.p_trans() == 0.0 {
        return Err(AnalyticsError::Degenerate("p_trans = 0 (the source never changes state)"));
    }
    let mut active = Vec::with_capacity(n_max as usize);
    for n in 1..=n_max {
        let dist = stationary_solve(params, n, default_k_max(params, n))?;
        active.push(dist.active_fraction());
    }
    let first_violation = active
        .windows(2)
        .position(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Less))
        .map(|i| i as u64 + 1);
    Ok(IndexabilityReport {
        passed: first_violation.is_none(),
        first_violation,
        active,
    })
}
