//! Relative value iteration for the single-user Lagrangian problem with
//! per-frame cost `aoii + lambda * transmit`, on AoII states `0..=cap`
//! (advancing from `cap` stays at `cap`).

use super::{AnalyticsError, Result};
use crate::model::{aoii_kernel, Action, UserParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RviOptions {
    /// Stop once `span(T h - h)` falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Transmit only when it is cheaper by more than this margin.
    pub tie_margin: f64,
}

impl Default for RviOptions {
    fn default() -> Self {
        RviOptions {
            tolerance: 1e-10,
            max_iterations: 2_000_000,
            tie_margin: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RviSolution {
    pub lambda: f64,
    /// Optimal action for AoII `0..=cap`.
    pub actions: Vec<Action>,
    pub relative_values: Vec<f64>,
    /// Optimal long-run average cost.
    pub gain: f64,
    pub iterations: usize,
    pub is_threshold: bool,
    /// Smallest AoII that transmits (`cap + 1` when none does), if the
    /// policy is of threshold type.
    pub threshold: Option<u64>,
}

/// Solves the capped single-user MDP at penalty `lambda` and reports whether
/// the optimal policy is of threshold type.
pub fn rvi_threshold_check(params: &UserParams, lambda: f64, delta_cap: u64) -> Result<RviSolution> {
    rvi_solve(params, lambda, delta_cap, &RviOptions::default())
}

pub fn rvi_solve(params: &UserParams, lambda: f64, cap: u64, opts: &RviOptions) -> Result<RviSolution> {
    if cap < 2 {
        return Err(AnalyticsError::CapTooSmall(cap));
    }
    let len = cap as usize + 1;
    let rows: Vec<_> = (0..=cap)
        .map(|s| {
            (
                aoii_kernel(s, Action::Idle, params),
                aoii_kernel(s, Action::Transmit, params),
            )
        })
        .collect();
    let mut h = vec![0.0; len];
    let mut next = vec![0.0; len];
    let q_values = |h: &[f64], s: usize| {
        let up = (s + 1).min(len - 1);
        let (idle, tx) = &rows[s];
        let cost = s as f64;
        (
            cost + idle.reset * h[0] + idle.advance * h[up],
            cost + lambda + tx.reset * h[0] + tx.advance * h[up],
        )
    };

    let mut iterations = 0;
    let mut gain;
    loop {
        iterations += 1;
        for (s, v) in next.iter_mut().enumerate() {
            let (qi, qt) = q_values(&h, s);
            *v = qi.min(qt);
        }
        gain = next[0];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in 0..len {
            let diff = next[s] - h[s];
            lo = lo.min(diff);
            hi = hi.max(diff);
        }
        for s in 0..len {
            h[s] = next[s] - gain;
        }
        let span = hi - lo;
        if span < opts.tolerance {
            break;
        }
        if iterations >= opts.max_iterations {
            return Err(AnalyticsError::NoConvergence { iterations, span });
        }
    }

    let actions: Vec<Action> = (0..len)
        .map(|s| {
            let (qi, qt) = q_values(&h, s);
            if qt < qi - opts.tie_margin * qi.abs().max(1.0) {
                Action::Transmit
            } else {
                Action::Idle
            }
        })
        .collect();
    let threshold = threshold_of(&actions);
    Ok(RviSolution {
        lambda,
        is_threshold: threshold.is_some(),
        threshold,
        actions,
        relative_values: h,
        gain,
        iterations,
    })
}

/// Threshold of a policy that idles below some AoII and transmits from it
/// on. AoII 0 is ignored: both actions share the same kernel there.
fn threshold_of(actions: &[Action]) -> Option<u64> {
    let first_tx = actions[1..]
        .iter()
        .position(|&a| a == Action::Transmit)
        .map(|i| i + 1)
        .unwrap_or(actions.len());
    actions[first_tx..]
        .iter()
        .all(|&a| a == Action::Transmit)
        .then_some(first_tx as u64)
}

/// Bisects on `lambda` for the penalty at which AoII `state` switches from
/// transmitting to idling. Returns the final bracket `(lo, hi)`, with `lo`
/// transmitting and `hi` idling.
pub fn lambda_flip_point(
    params: &UserParams,
    state: u64,
    cap: u64,
    mut lo: f64,
    mut hi: f64,
    width: f64,
) -> Result<(f64, f64)> {
    let opts = RviOptions::default();
    let transmits = |lambda: f64| -> Result<bool> {
        Ok(rvi_solve(params, lambda, cap, &opts)?.actions[state as usize] == Action::Transmit)
    };
    while !transmits(lo)? {
        lo = lo - (hi - lo).max(1.0);
    }
    while transmits(hi)? {
        hi = hi + (hi - lo).max(1.0);
    }
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        if transmits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::whittle_numeric;

    fn params(n: u32, pr: f64, ps: f64) -> UserParams {
        UserParams::new(n, pr, ps, 1.0).unwrap()
    }

    #[test]
    fn moderate_penalty_gives_threshold_policy() {
        let p = params(2, 0.8, 0.7);
        let sol = rvi_threshold_check(&p, 5.0, 100).unwrap();
        assert!(sol.is_threshold);
        let n = sol.threshold.unwrap();
        assert!((2..100).contains(&n), "{n}");
        // The threshold lies where the index crosses the penalty.
        assert!(whittle_numeric(&p, n, 1.0).unwrap() > 5.0);
        assert!(whittle_numeric(&p, n - 1, 1.0).unwrap() < 5.0);
    }

    #[test]
    fn free_transmission_is_always_used() {
        let p = params(3, 0.7, 0.4);
        let sol = rvi_threshold_check(&p, 0.0, 60).unwrap();
        assert_eq!(sol.threshold, Some(1));
        assert!(sol.actions[1..].iter().all(|&a| a == Action::Transmit));
    }

    #[test]
    fn prohibitive_penalty_never_transmits() {
        let p = params(2, 0.8, 0.7);
        let sol = rvi_threshold_check(&p, 1e6, 100).unwrap();
        assert_eq!(sol.threshold, Some(101));
        assert!(sol.actions.iter().all(|&a| a == Action::Idle));
    }

    #[test]
    fn flip_point_brackets_index() {
        let p = params(2, 0.8, 0.7);
        for state in [1u64, 3, 6] {
            let w = whittle_numeric(&p, state, 1.0).unwrap();
            let (lo, hi) = lambda_flip_point(&p, state, 200, 0.0, 50.0, 1e-6).unwrap();
            assert!(lo - 1e-6 <= w && w <= hi + 1e-6, "{state}: {w} not in [{lo}, {hi}]");
        }
    }

    #[test]
    fn threshold_detection() {
        use Action::*;
        assert_eq!(threshold_of(&[Idle, Idle, Transmit, Transmit]), Some(2));
        assert_eq!(threshold_of(&[Idle, Idle, Idle]), Some(3));
        assert_eq!(threshold_of(&[Idle, Transmit, Idle, Transmit]), None);
        assert_eq!(threshold_of(&[Transmit, Transmit]), Some(1));
    }

    #[test]
    fn tiny_cap_rejected() {
        assert_eq!(
            rvi_threshold_check(&params(2, 0.8, 0.7), 1.0, 1),
            Err(AnalyticsError::CapTooSmall(1))
        );
    }
}
