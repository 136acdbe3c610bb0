//! Frame-synchronous Monte Carlo simulator.
//!
//! Within a frame: queries are already known, the policy decides, the
//! pre-transition AoII is accrued, then every user steps. Each replication
//! owns one ChaCha key and uses a separate stream per (user, purpose), so
//! source, channel and query randomness are shared across policies run with
//! the same seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::model::{step_user_with, Action, FrameDraws, NetworkState, UserParams};
use crate::policies::{Decision, Policy, PolicyError, PolicyKind, PolicyOptions, Scheduler};

/// Default cap on the number of rows [`metric_timeseries`] will produce.
pub const DEFAULT_TRACE_CAP: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("no users")]
    NoUsers,
    #[error("frames must be at least 1")]
    NoFrames,
    #[error("replications must be at least 1")]
    NoReplications,
    #[error("m must be at least 1")]
    NoChannels,
    #[error("trace of {frames} frames exceeds cap {cap}")]
    TraceTooLong { frames: u64, cap: u64 },
    #[error("user {user}: {source}")]
    InvalidUser { user: usize, source: PolicyError },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub users: Vec<UserParams>,
    pub m: usize,
    pub frames: u64,
    pub replications: usize,
    pub seed: u64,
    pub policy: PolicyKind,
    #[serde(default)]
    pub options: PolicyOptions,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.users.is_empty() {
            return Err(SimError::NoUsers);
        }
        if self.frames == 0 {
            return Err(SimError::NoFrames);
        }
        if self.replications == 0 {
            return Err(SimError::NoReplications);
        }
        if self.m == 0 {
            return Err(SimError::NoChannels);
        }
        for (user, p) in self.users.iter().enumerate() {
            self.policy
                .check_params(p)
                .map_err(|source| SimError::InvalidUser { user, source })?;
        }
        Ok(())
    }
}

/// Mean, sample standard deviation and 95% confidence half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std_dev: f64,
    pub ci95: f64,
    pub n: usize,
}

impl Summary {
    /// Summarizes `xs` with a Student-t interval; a single sample gets zero
    /// spread.
    pub fn of(xs: &[f64]) -> Summary {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Summary {
                mean,
                std_dev: 0.0,
                ci95: 0.0,
                n,
            };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std_dev = var.sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        Summary {
            mean,
            std_dev,
            ci95: t * std_dev / (n as f64).sqrt(),
            n,
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.std_dev / (self.n as f64).sqrt()
        }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci95
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci95
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationStats {
    pub replication: usize,
    /// Per-user per-frame AoII.
    pub aoii: f64,
    /// AoII summed over users, per frame.
    pub aoii_sum: f64,
    /// AoII averaged over queried (user, frame) pairs.
    pub qaoii: f64,
    pub queries: u64,
    /// Fraction of (user, frame) pairs that transmitted.
    pub active_fraction: f64,
    pub per_user_aoii: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: PolicyKind,
    pub n_users: usize,
    pub m: usize,
    pub frames: u64,
    pub seed: u64,
    pub avg_aoii: f64,
    pub avg_aoii_sum: f64,
    pub avg_qaoii: f64,
    pub aoii: Summary,
    pub aoii_sum: Summary,
    pub qaoii: Summary,
    pub active_fraction: Summary,
    pub per_replication: Vec<ReplicationStats>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Purpose {
    Source = 0,
    Channel = 1,
    Query = 2,
}

/// Independent generator for one (seed, replication, user, purpose).
fn stream(seed: u64, replication: usize, user: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(replication as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(((user as u64) << 2) | purpose as u64);
    rng
}

struct Streams {
    source: Vec<ChaCha8Rng>,
    channel: Vec<ChaCha8Rng>,
    query: Vec<ChaCha8Rng>,
}

impl Streams {
    fn new(seed: u64, replication: usize, n: usize) -> Self {
        let make = |p| (0..n).map(|u| stream(seed, replication, u, p)).collect();
        Streams {
            source: make(Purpose::Source),
            channel: make(Purpose::Channel),
            query: make(Purpose::Query),
        }
    }

    fn draws(&mut self, user: usize) -> FrameDraws {
        FrameDraws {
            source: self.source[user].gen(),
            channel: self.channel[user].gen(),
            query: self.query[user].gen(),
        }
    }
}

/// One frame of a single replication.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub frame: u64,
    /// AoII at the start of the frame.
    pub aoii: Vec<u64>,
    pub aoi: Vec<u64>,
    pub queried: Vec<bool>,
    pub selected: Vec<usize>,
    pub delivered: Vec<bool>,
}

fn run_replication<P: Policy>(
    config: &SimConfig,
    policy: &mut P,
    replication: usize,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<ReplicationStats, SimError> {
    let n = config.users.len();
    let mut streams = Streams::new(config.seed, replication, n);
    let mut state = NetworkState::new(n);
    for (i, u) in state.users.iter_mut().enumerate() {
        u.queried = streams.query[i].gen::<f64>() < config.users[i].q_query();
    }

    let mut per_user = vec![0u64; n];
    let mut q_num = 0u64;
    let mut q_count = 0u64;
    let mut active = 0u64;
    let mut scheduled = vec![false; n];

    for frame in 0..config.frames {
        state.frame = frame;
        let decision: Decision = policy.decide(&state, &config.users, config.m)?;
        scheduled.iter_mut().for_each(|s| *s = false);
        for &i in &decision.selected {
            scheduled[i] = true;
        }
        active += decision.len() as u64;
        for (i, u) in state.users.iter().enumerate() {
            per_user[i] += u.aoii;
            if u.queried {
                q_num += u.aoii;
                q_count += 1;
            }
        }
        let mut delivered = vec![false; if trace.is_some() { n } else { 0 }];
        let before = trace.as_ref().map(|_| state.clone());
        for (i, &on) in scheduled.iter().enumerate() {
            let action = if on { Action::Transmit } else { Action::Idle };
            let draws = streams.draws(i);
            let out = step_user_with(&state.users[i], action, &config.users[i], &draws);
            state.users[i] = out.state;
            if let Some(d) = delivered.get_mut(i) {
                *d = out.delivered;
            }
        }
        if let (Some(rows), Some(before)) = (trace.as_deref_mut(), before) {
            rows.push(TraceRow {
                frame,
                aoii: before.users.iter().map(|u| u.aoii).collect(),
                aoi: before.users.iter().map(|u| u.aoi).collect(),
                queried: before.users.iter().map(|u| u.queried).collect(),
                selected: decision.selected,
                delivered,
            });
        }
    }

    let t = config.frames as f64;
    let total: u64 = per_user.iter().sum();
    if q_count == 0 {
        log::warn!("replication {replication}: no queries occurred; QAoII reported as 0");
    }
    Ok(ReplicationStats {
        replication,
        aoii: total as f64 / (t * n as f64),
        aoii_sum: total as f64 / t,
        qaoii: q_num as f64 / q_count.max(1) as f64,
        queries: q_count,
        active_fraction: active as f64 / (t * n as f64),
        per_user_aoii: per_user.iter().map(|&s| s as f64 / t).collect(),
    })
}

/// Simulates `config.policy` over all replications.
pub fn run(config: &SimConfig) -> Result<SimReport, SimError> {
    let (kind, options) = (config.policy, config.options);
    run_with(config, || Scheduler::new(kind, options))
}

/// Simulates with a fresh policy from `make_policy` per replication.
/// `config.policy` is only used as a label.
pub fn run_with<P, F>(config: &SimConfig, make_policy: F) -> Result<SimReport, SimError>
where
    P: Policy,
    F: Fn() -> P + Sync,
{
    config.validate()?;
    let reps = (0..config.replications)
        .into_par_iter()
        .map(|r| run_replication(config, &mut make_policy(), r, None))
        .collect::<Result<Vec<_>, _>>()?;
    let pick = |f: fn(&ReplicationStats) -> f64| Summary::of(&reps.iter().map(f).collect::<Vec<_>>());
    let aoii = pick(|r| r.aoii);
    let aoii_sum = pick(|r| r.aoii_sum);
    let qaoii = pick(|r| r.qaoii);
    Ok(SimReport {
        policy: config.policy,
        n_users: config.users.len(),
        m: config.m,
        frames: config.frames,
        seed: config.seed,
        avg_aoii: aoii.mean,
        avg_aoii_sum: aoii_sum.mean,
        avg_qaoii: qaoii.mean,
        aoii,
        aoii_sum,
        qaoii,
        active_fraction: pick(|r| r.active_fraction),
        per_replication: reps,
    })
}

/// Per-frame trace of replication 0, refusing horizons longer than `cap`.
pub fn metric_timeseries(config: &SimConfig, cap: u64) -> Result<Vec<TraceRow>, SimError> {
    config.validate()?;
    if config.frames > cap {
        return Err(SimError::TraceTooLong {
            frames: config.frames,
            cap,
        });
    }
    let mut rows = Vec::with_capacity(config.frames as usize);
    let mut policy = Scheduler::new(config.policy, config.options);
    run_replication(config, &mut policy, 0, Some(&mut rows))?;
    Ok(rows)
}

/// Re-runs the configured policy on the recorded states and returns the
/// decisions it makes.
pub fn replay_decisions(config: &SimConfig, rows: &[TraceRow]) -> Result<Vec<Decision>, SimError> {
    let mut policy = Scheduler::new(config.policy, config.options);
    let mut state = NetworkState::new(config.users.len());
    rows.iter()
        .map(|row| {
            state.frame = row.frame;
            for (i, u) in state.users.iter_mut().enumerate() {
                u.aoii = row.aoii[i];
                u.aoi = row.aoi[i];
                u.queried = row.queried[i];
            }
            Ok(policy.decide(&state, &config.users, config.m)?)
        })
        .collect()
}

/// Transmits for every user whose AoII is at least `threshold`, lowest index
/// first, up to `m` users.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ThresholdPolicy {
    pub threshold: u64,
}

impl Policy for ThresholdPolicy {
    fn decide(&mut self, state: &NetworkState, _params: &[UserParams], m: usize) -> Result<Decision, PolicyError> {
        let selected = state
            .users
            .iter()
            .enumerate()
            .filter(|(_, u)| u.aoii >= self.threshold)
            .map(|(i, _)| i)
            .take(m)
            .collect();
        Ok(Decision { selected })
    }
}
