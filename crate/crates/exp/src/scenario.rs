//! Experiment descriptions: who the users are, what is swept and which
//! policies are compared.

use std::fmt;
use std::str::FromStr;

use aoii_core::model::ParamError;
use aoii_core::{PolicyKind, UserParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown preset {0:?} (expected fig2, fig3, fig4, fig5 or table1)")]
    UnknownPreset(String),
    #[error("user {user}: {source}")]
    InvalidUser { user: usize, source: ParamError },
    #[error("{field} lists {got} values for {want} users")]
    Length { field: &'static str, got: usize, want: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
}

/// Arithmetic progression `start + step * i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub start: f64,
    pub step: f64,
}

impl Ramp {
    fn at(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }
}

/// Evenly spaced values from the first endpoint to the second.
fn linspace(ends: [f64; 2], count: usize, i: usize) -> f64 {
    if count <= 1 {
        ends[0]
    } else {
        ends[0] + (ends[1] - ends[0]) * i as f64 / (count - 1) as f64
    }
}

/// User parameter generator. `q_query` defaults to 1 (every frame queried).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UserSet {
    Explicit {
        p_remain: Vec<f64>,
        p_success: Vec<f64>,
        #[serde(default)]
        q_query: Option<Vec<f64>>,
    },
    Ramp {
        count: usize,
        p_remain: Ramp,
        p_success: Ramp,
        #[serde(default)]
        q_query: Option<Ramp>,
    },
    Linspace {
        count: usize,
        p_remain: [f64; 2],
        p_success: [f64; 2],
        #[serde(default)]
        q_query: Option<[f64; 2]>,
    },
}

impl UserSet {
    pub fn default_count(&self) -> usize {
        match self {
            UserSet::Explicit { p_remain, .. } => p_remain.len(),
            UserSet::Ramp { count, .. } | UserSet::Linspace { count, .. } => *count,
        }
    }

    /// Parameters for `count` users (the generator's own count if `None`).
    /// Ramps and explicit lists take their first `count` entries; linspace
    /// spreads its endpoints over `count` users.
    pub fn generate(&self, n_states: u32, count: Option<usize>) -> Result<Vec<UserParams>, ScenarioError> {
        let n = count.unwrap_or_else(|| self.default_count());
        let triples: Vec<(f64, f64, f64)> = match self {
            UserSet::Explicit {
                p_remain,
                p_success,
                q_query,
            } => {
                let want = p_remain.len();
                if p_success.len() != want {
                    return Err(ScenarioError::Length {
                        field: "p_success",
                        got: p_success.len(),
                        want,
                    });
                }
                if let Some(q) = q_query {
                    if q.len() != want {
                        return Err(ScenarioError::Length {
                            field: "q_query",
                            got: q.len(),
                            want,
                        });
                    }
                }
                if n > want {
                    return Err(ScenarioError::Invalid(format!("{n} users requested, {want} listed")));
                }
                (0..n)
                    .map(|i| (p_remain[i], p_success[i], q_query.as_ref().map_or(1.0, |q| q[i])))
                    .collect()
            }
            UserSet::Ramp {
                p_remain,
                p_success,
                q_query,
                ..
            } => (0..n)
                .map(|i| (p_remain.at(i), p_success.at(i), q_query.map_or(1.0, |q| q.at(i))))
                .collect(),
            UserSet::Linspace {
                p_remain,
                p_success,
                q_query,
                ..
            } => (0..n)
                .map(|i| {
                    (
                        linspace(*p_remain, n, i),
                        linspace(*p_success, n, i),
                        q_query.map_or(1.0, |q| linspace(q, n, i)),
                    )
                })
                .collect(),
        };
        triples
            .into_iter()
            .enumerate()
            .map(|(user, (pr, ps, q))| {
                UserParams::new(n_states, tidy(pr), tidy(ps), tidy(q))
                    .map_err(|source| ScenarioError::InvalidUser { user, source })
            })
            .collect()
    }
}

/// Rounds away accumulated floating-point noise from ramp arithmetic.
fn tidy(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sweep {
    /// Fixed users, varying number of channels.
    Channels { m: Vec<usize> },
    /// Varying number of users, fixed channels.
    Users { n_users: Vec<usize>, m: usize },
}

/// One cell of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepPoint {
    pub n_users: Option<usize>,
    pub m: usize,
}

impl Sweep {
    pub fn variable(&self) -> &'static str {
        match self {
            Sweep::Channels { .. } => "m",
            Sweep::Users { .. } => "n_users",
        }
    }

    pub fn points(&self) -> Vec<(usize, SweepPoint)> {
        match self {
            Sweep::Channels { m } => m.iter().map(|&m| (m, SweepPoint { n_users: None, m })).collect(),
            Sweep::Users { n_users, m } => n_users
                .iter()
                .map(|&n| (n, SweepPoint { n_users: Some(n), m: *m }))
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Per-user per-frame AoII.
    Aoii,
    /// AoII summed over users, per frame.
    AoiiSum,
    /// AoII over queried (user, frame) pairs.
    Qaoii,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Aoii => "aoii",
            Metric::AoiiSum => "aoii_sum",
            Metric::Qaoii => "qaoii",
        }
    }

    /// Whether `policy` is reported under this metric. Baselines are shown
    /// under every metric; index policies only under the cost they target.
    pub fn reports(self, policy: PolicyKind) -> bool {
        match policy {
            PolicyKind::RoundRobin | PolicyKind::GreedyAoII => true,
            PolicyKind::WhittleAoII | PolicyKind::WhittleAoI => self != Metric::Qaoii,
            PolicyKind::WhittleQAoII | PolicyKind::WhittleQAoI => self == Metric::Qaoii,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Metric::Aoii, Metric::AoiiSum, Metric::Qaoii]
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ScenarioError::Invalid(format!("unknown metric {s:?}")))
    }
}

fn default_n_states() -> u32 {
    2
}

fn default_seed() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_n_states")]
    pub n_states: u32,
    pub frames: u64,
    pub replications: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub policies: Vec<PolicyKind>,
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub greedy_query_aware: bool,
    pub users: UserSet,
    pub sweep: Sweep,
    /// Modelling choices recorded in the output metadata.
    #[serde(default)]
    pub assumptions: Vec<String>,
}

pub const PRESETS: [&str; 5] = ["fig2", "fig3", "fig4", "fig5", "table1"];

const RAMP_NOTE: &str = "p_R ascends and p_s descends evenly over [0.05, 0.95] across users";
const N_NOTE: &str = "number of source states defaults to 2";

pub fn preset(name: &str) -> Result<Scenario, ScenarioError> {
    use PolicyKind::*;
    let aoii_policies = vec![RoundRobin, GreedyAoII, WhittleAoI, WhittleAoII];
    let qaoii_policies = vec![RoundRobin, GreedyAoII, WhittleQAoI, WhittleQAoII];
    let big_ramp = |q: Option<Ramp>| UserSet::Ramp {
        count: 37,
        p_remain: Ramp {
            start: 0.05,
            step: 0.025,
        },
        p_success: Ramp {
            start: 0.95,
            step: -0.025,
        },
        q_query: q,
    };
    let channel_range: Vec<usize> = (1..=12).collect();
    let s = match name {
        "fig2" => Scenario {
            name: name.into(),
            n_states: 2,
            frames: 10_000,
            replications: 10,
            seed: 1,
            policies: aoii_policies,
            metrics: vec![Metric::Aoii],
            greedy_query_aware: false,
            users: UserSet::Linspace {
                count: 9,
                p_remain: [0.05, 0.95],
                p_success: [0.95, 0.05],
                q_query: None,
            },
            sweep: Sweep::Users {
                n_users: (2..=9).collect(),
                m: 1,
            },
            assumptions: vec![RAMP_NOTE.into(), N_NOTE.into()],
        },
        "fig3" => Scenario {
            name: name.into(),
            n_states: 2,
            frames: 2000,
            replications: 10,
            seed: 1,
            policies: aoii_policies,
            metrics: vec![Metric::Aoii],
            greedy_query_aware: false,
            users: big_ramp(None),
            sweep: Sweep::Channels { m: channel_range },
            assumptions: vec![
                "channels swept over 1..=12".into(),
                N_NOTE.into(),
            ],
        },
        "fig4" => Scenario {
            name: name.into(),
            n_states: 2,
            frames: 1000,
            replications: 25,
            seed: 1,
            policies: qaoii_policies,
            metrics: vec![Metric::Qaoii],
            greedy_query_aware: false,
            users: UserSet::Linspace {
                count: 9,
                p_remain: [0.05, 0.95],
                p_success: [0.95, 0.05],
                q_query: Some([0.05, 0.95]),
            },
            sweep: Sweep::Users {
                n_users: (2..=9).collect(),
                m: 1,
            },
            assumptions: vec![
                RAMP_NOTE.into(),
                "query probabilities ascend evenly over [0.05, 0.95]".into(),
                N_NOTE.into(),
            ],
        },
        "fig5" => Scenario {
            name: name.into(),
            n_states: 2,
            frames: 2000,
            replications: 10,
            seed: 1,
            policies: qaoii_policies,
            metrics: vec![Metric::Qaoii],
            greedy_query_aware: false,
            users: big_ramp(Some(Ramp {
                start: 0.95,
                step: -0.025,
            })),
            sweep: Sweep::Channels { m: channel_range },
            assumptions: vec![
                "channels swept over 1..=12".into(),
                "p_s descends from 0.95 as in the AoII channel sweep".into(),
                N_NOTE.into(),
            ],
        },
        "table1" => Scenario {
            name: name.into(),
            n_states: 2,
            frames: 2000,
            replications: 200,
            seed: 1,
            policies: vec![RoundRobin, GreedyAoII, WhittleAoII, WhittleQAoII],
            metrics: vec![Metric::Aoii, Metric::Qaoii],
            greedy_query_aware: false,
            users: UserSet::Explicit {
                p_remain: vec![0.05, 0.50, 0.95],
                p_success: vec![0.95, 0.50, 0.05],
                q_query: Some(vec![0.20, 0.50, 0.80]),
            },
            sweep: Sweep::Channels { m: vec![1] },
            assumptions: vec![N_NOTE.into(), "AoII is reported per user per frame".into()],
        },
        other => return Err(ScenarioError::UnknownPreset(other.into())),
    };
    Ok(s)
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario is always representable")
    }

    /// Checks every sweep cell produces valid users and a runnable setup.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.frames == 0 || self.replications == 0 {
            return Err(ScenarioError::Invalid("frames and replications must be positive".into()));
        }
        if self.policies.is_empty() || self.metrics.is_empty() {
            return Err(ScenarioError::Invalid("no policies or metrics".into()));
        }
        let points = self.sweep.points();
        if points.is_empty() {
            return Err(ScenarioError::Invalid("empty sweep".into()));
        }
        for (_, p) in points {
            if p.m == 0 {
                return Err(ScenarioError::Invalid("m must be at least 1".into()));
            }
            if p.n_users == Some(0) {
                return Err(ScenarioError::Invalid("n_users must be at least 1".into()));
            }
            self.users_at(&p)?;
        }
        Ok(())
    }

    pub fn users_at(&self, point: &SweepPoint) -> Result<Vec<UserParams>, ScenarioError> {
        self.users.generate(self.n_states, point.n_users)
    }
}
