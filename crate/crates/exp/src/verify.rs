//! Conformance suite: closed forms against the numerical oracles on random
//! parameter grids.

use std::time::Instant;

use aoii_core::analytics::{
    avg_active_closed, avg_aoii_closed, default_k_max, indexability_check, lambda_flip_point,
    rvi_threshold_check, stationary_solve, whittle_aoii_closed, whittle_numeric, whittle_qaoii_closed,
    AnalyticsError,
};
use aoii_core::UserParams;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type WhittleFn = fn(&UserParams, u64) -> Result<f64, AnalyticsError>;

pub const AVERAGE_TOL: f64 = 1e-10;
pub const WHITTLE_REL_TOL: f64 = 1e-8;
pub const SCALING_REL_TOL: f64 = 1e-9;
pub const RVI_REL_TOL: f64 = 1e-6;
/// Indices smaller than this are compared absolutely.
const REL_FLOOR: f64 = 1e-2;

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random (params, threshold) samples for the closed-form checks.
    pub samples: usize,
    pub indexability_n_max: u64,
    pub rvi_pairs: usize,
    pub rvi_cap: u64,
    /// Index transcription under test.
    pub whittle: WhittleFn,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 20_240_601,
            samples: 240,
            indexability_n_max: 50,
            rvi_pairs: 30,
            rvi_cap: 200,
            whittle: whittle_aoii_closed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub tolerance: f64,
    pub worst_error: f64,
    pub samples: usize,
    pub failures: usize,
    pub passed: bool,
    pub elapsed_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Random user with `p_t` in `[pt_min, min(0.45, 1/N))` (so `p_R > p_t`),
/// `p_s` in `[ps_min, 1]` and `q` in `[0, 1]`.
pub fn sample_user<R: Rng>(rng: &mut R, pt_min: f64, ps_min: f64) -> UserParams {
    let n = [2u32, 3, 4, 8][rng.gen_range(0..4)];
    let hi = (1.0 / n as f64 - 1e-3).min(0.45);
    let pt = rng.gen_range(pt_min..hi);
    let pr = 1.0 - (n as f64 - 1.0) * pt;
    let ps = rng.gen_range(ps_min..=1.0);
    let q = rng.gen_range(0.0..=1.0);
    UserParams::new(n, pr, ps, q).expect("sampled parameters are valid")
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(REL_FLOOR)
}

struct Tally {
    name: &'static str,
    tolerance: f64,
    worst: f64,
    samples: usize,
    failures: usize,
    note: Option<String>,
    start: Instant,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Tally {
            name,
            tolerance,
            worst: 0.0,
            samples: 0,
            failures: 0,
            note: None,
            start: Instant::now(),
        }
    }

    fn record(&mut self, err: f64) {
        self.samples += 1;
        if err.is_nan() || err > self.tolerance {
            self.failures += 1;
        }
        if err.is_nan() {
            self.worst = f64::NAN;
        } else if !self.worst.is_nan() {
            self.worst = self.worst.max(err);
        }
    }

    fn fail(&mut self, why: String) {
        self.samples += 1;
        self.failures += 1;
        self.note.get_or_insert(why);
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name.to_string(),
            tolerance: self.tolerance,
            worst_error: self.worst,
            samples: self.samples,
            failures: self.failures,
            passed: self.failures == 0 && self.samples > 0,
            elapsed_secs: self.start.elapsed().as_secs_f64(),
            note: self.note,
        }
    }
}

/// Average AoII and active time against the stationary oracle.
pub fn check_averages(opts: &VerifyOptions) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut cost = Tally::new("avg_aoii_vs_oracle", AVERAGE_TOL);
    let mut active = Tally::new("avg_active_vs_oracle", AVERAGE_TOL);
    for _ in 0..opts.samples {
        let p = sample_user(&mut rng, 0.01, 0.05);
        let n = rng.gen_range(1..=40u64);
        let oracle = match stationary_solve(&p, n, default_k_max(&p, n)) {
            Ok(d) => d,
            Err(e) => {
                cost.fail(format!("oracle failed: {e}"));
                active.fail(format!("oracle failed: {e}"));
                continue;
            }
        };
        match avg_aoii_closed(&p, n) {
            Ok(v) => cost.record((v - oracle.mean()).abs()),
            Err(e) => cost.fail(e.to_string()),
        }
        match avg_active_closed(&p, n) {
            Ok(v) => active.record((v - oracle.active_fraction()).abs()),
            Err(e) => active.fail(e.to_string()),
        }
    }
    vec![cost.finish(), active.finish()]
}

/// Both indices against the definition-based oracle, and their scaling.
pub fn check_whittle(opts: &VerifyOptions) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let mut aoii = Tally::new("whittle_aoii_vs_oracle", WHITTLE_REL_TOL);
    let mut qaoii = Tally::new("whittle_qaoii_vs_oracle", WHITTLE_REL_TOL);
    let mut scaling = Tally::new("whittle_query_scaling", SCALING_REL_TOL);
    for _ in 0..opts.samples {
        let p = sample_user(&mut rng, 0.01, 0.05);
        let n = rng.gen_range(1..=40u64);
        let (numeric, numeric_q) = match (whittle_numeric(&p, n, 1.0), whittle_numeric(&p, n, p.q_query())) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                aoii.fail(format!("oracle failed: {e}"));
                continue;
            }
        };
        let w = (opts.whittle)(&p, n);
        match &w {
            Ok(w) => aoii.record(rel_err(*w, numeric)),
            Err(e) => aoii.fail(e.to_string()),
        }
        match whittle_qaoii_closed(&p, n) {
            Ok(wq) => {
                qaoii.record(rel_err(wq, numeric_q));
                if let Ok(w) = w {
                    scaling.record(rel_err(wq, p.q_query() * w));
                }
            }
            Err(e) => qaoii.fail(e.to_string()),
        }
    }
    vec![aoii.finish(), qaoii.finish(), scaling.finish()]
}

/// Active time strictly decreasing in the threshold.
pub fn check_indexability(opts: &VerifyOptions) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x1dec);
    let mut t = Tally::new("indexability", 0.0);
    for _ in 0..opts.samples {
        let p = sample_user(&mut rng, 0.01, 0.05);
        match indexability_check(&p, opts.indexability_n_max) {
            Ok(r) if r.passed => t.record(0.0),
            Ok(r) => {
                t.record(1.0);
                t.note.get_or_insert(format!("{p:?}: first violation at {:?}", r.first_violation));
            }
            Err(e) => t.fail(e.to_string()),
        }
    }
    t.worst = t.failures as f64;
    t.finish()
}

/// Relative value iteration: optimal policies are thresholds, the threshold
/// sits where the index crosses the penalty, and the penalty at which a state
/// flips to idle equals its index.
pub fn check_rvi(opts: &VerifyOptions) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x0e1);
    let mut t = Tally::new("rvi_threshold_and_flip", RVI_REL_TOL);
    for _ in 0..opts.rvi_pairs {
        let p = sample_user(&mut rng, 0.05, 0.2).with_query(1.0).expect("q = 1 is valid");
        let n0 = rng.gen_range(2..=12u64);
        let (w_lo, w_hi) = match (whittle_numeric(&p, n0 - 1, 1.0), whittle_numeric(&p, n0, 1.0)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                t.fail(e.to_string());
                continue;
            }
        };
        let lambda = rng.gen_range(w_lo.min(w_hi)..=w_lo.max(w_hi));
        let sol = match rvi_threshold_check(&p, lambda, opts.rvi_cap) {
            Ok(s) => s,
            Err(e) => {
                t.fail(e.to_string());
                continue;
            }
        };
        let Some(n_star) = sol.threshold else {
            t.fail(format!("{p:?} at lambda {lambda}: not a threshold policy"));
            continue;
        };
        // The optimal threshold n* satisfies W(n* - 1) <= lambda <= W(n*).
        let below = if n_star >= 2 {
            whittle_numeric(&p, n_star - 1, 1.0).unwrap_or(f64::NAN)
        } else {
            f64::NEG_INFINITY
        };
        let above = whittle_numeric(&p, n_star, 1.0).unwrap_or(f64::NAN);
        let miss = ((below - lambda).max(0.0) + (lambda - above).max(0.0)) / lambda.abs().max(1.0);
        t.record(if miss.is_nan() { f64::NAN } else { miss });

        let w = whittle_numeric(&p, n0, 1.0).unwrap_or(f64::NAN);
        let width = 1e-8 * w.abs().max(1.0);
        match lambda_flip_point(&p, n0, opts.rvi_cap, 0.0, 2.0 * w.abs() + 1.0, width) {
            Ok((lo, hi)) => {
                let outside = (lo - w).max(w - hi).max(0.0);
                t.record(outside / w.abs().max(1.0));
            }
            Err(e) => t.fail(e.to_string()),
        }
    }
    t.finish()
}

/// Runs every check with `opts`.
pub fn verify(opts: &VerifyOptions) -> VerifyReport {
    let mut checks = check_averages(opts);
    checks.extend(check_whittle(opts));
    checks.push(check_indexability(opts));
    checks.push(check_rvi(opts));
    VerifyReport {
        seed: opts.seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}
