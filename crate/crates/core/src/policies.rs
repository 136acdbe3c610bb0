//! Schedulers: each frame pick at most `m` users to transmit.
//!
//! Index policies rank users by a per-user priority and take the `m` largest,
//! breaking ties towards the lowest user index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{aoi_whittle_numeric, whittle_aoii_closed, whittle_qaoii_closed, AnalyticsError};
use crate::model::{NetworkState, UserParams, UserState};

/// Index values for states up to this are memoized.
pub const CACHE_HORIZON: u64 = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("{0} is not an index policy")]
    NotAnIndexPolicy(PolicyKind),
    #[error("at least one channel is required")]
    NoChannels,
    #[error("{params} parameter sets for {users} users")]
    LengthMismatch { params: usize, users: usize },
    #[error("unknown policy {0:?}")]
    UnknownPolicy(String),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "RR", alias = "RoundRobin")]
    RoundRobin,
    #[serde(rename = "GP", alias = "GreedyAoII")]
    GreedyAoII,
    #[serde(rename = "AoII-WI", alias = "WhittleAoII")]
    WhittleAoII,
    #[serde(rename = "QAoII-WI", alias = "WhittleQAoII")]
    WhittleQAoII,
    #[serde(rename = "AoI-WI", alias = "WhittleAoI")]
    WhittleAoI,
    #[serde(rename = "QAoI-WI", alias = "WhittleQAoI")]
    WhittleQAoI,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::RoundRobin,
        PolicyKind::GreedyAoII,
        PolicyKind::WhittleAoII,
        PolicyKind::WhittleQAoII,
        PolicyKind::WhittleAoI,
        PolicyKind::WhittleQAoI,
    ];

    pub fn is_index(self) -> bool {
        !matches!(self, PolicyKind::RoundRobin | PolicyKind::GreedyAoII)
    }

    /// Short label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::RoundRobin => "RR",
            PolicyKind::GreedyAoII => "GP",
            PolicyKind::WhittleAoII => "AoII-WI",
            PolicyKind::WhittleQAoII => "QAoII-WI",
            PolicyKind::WhittleAoI => "AoI-WI",
            PolicyKind::WhittleQAoI => "QAoI-WI",
        }
    }

    /// Rejects parameters the policy's index cannot be evaluated for.
    pub fn check_params(self, params: &UserParams) -> Result<(), PolicyError> {
        match self {
            PolicyKind::RoundRobin | PolicyKind::GreedyAoII => Ok(()),
            PolicyKind::WhittleAoII | PolicyKind::WhittleQAoII => {
                whittle_aoii_closed(params, 1)?;
                Ok(())
            }
            PolicyKind::WhittleAoI | PolicyKind::WhittleQAoI => {
                aoi_whittle_numeric(params.p_success(), 1)?;
                Ok(())
            }
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s) || format!("{k:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| PolicyError::UnknownPolicy(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyOptions {
    /// Greedy ranks by AoII of queried users only.
    #[serde(default)]
    pub greedy_query_aware: bool,
}

/// Users chosen to transmit this frame, in priority order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub selected: Vec<usize>,
}

impl Decision {
    pub fn contains(&self, user: usize) -> bool {
        self.selected.contains(&user)
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

/// A scheduling rule: observed state to a set of at most `m` users.
pub trait Policy {
    fn decide(&mut self, state: &NetworkState, params: &[UserParams], m: usize) -> Result<Decision, PolicyError>;
}

/// Scalar priority of one user under an index policy.
pub fn index_value(kind: PolicyKind, user: &UserState, params: &UserParams) -> Result<f64, PolicyError> {
    let v = match kind {
        PolicyKind::WhittleAoII if user.aoii == 0 => 0.0,
        PolicyKind::WhittleAoII => whittle_aoii_closed(params, user.aoii)?,
        PolicyKind::WhittleQAoII if user.aoii == 0 => 0.0,
        PolicyKind::WhittleQAoII => whittle_qaoii_closed(params, user.aoii)?,
        PolicyKind::WhittleAoI => aoi_whittle_numeric(params.p_success(), user.aoi.max(1))?,
        PolicyKind::WhittleQAoI => {
            params.q_query() * aoi_whittle_numeric(params.p_success(), user.aoi.max(1))?
        }
        other => return Err(PolicyError::NotAnIndexPolicy(other)),
    };
    Ok(v)
}

/// Lazily filled index table of one user.
#[derive(Clone, Debug)]
struct IndexCache {
    params: UserParams,
    values: Vec<f64>,
}

/// Caller-owned state carried between frames.
#[derive(Clone, Debug, Default)]
pub struct PolicyMemory {
    pub cursor: usize,
    caches: Vec<Option<IndexCache>>,
    clamp_warned: bool,
}

impl PolicyMemory {
    fn cached_index(
        &mut self,
        kind: PolicyKind,
        user_idx: usize,
        user: &UserState,
        params: &UserParams,
    ) -> Result<f64, PolicyError> {
        let key = match kind {
            PolicyKind::WhittleAoI | PolicyKind::WhittleQAoI => user.aoi,
            _ => user.aoii,
        };
        if key > CACHE_HORIZON {
            return index_value(kind, user, params);
        }
        if self.caches.len() <= user_idx {
            self.caches.resize(user_idx + 1, None);
        }
        let slot = &mut self.caches[user_idx];
        if slot.as_ref().is_none_or(|c| c.params != *params) {
            *slot = Some(IndexCache {
                params: *params,
                values: Vec::new(),
            });
        }
        let cache = slot.as_mut().expect("cache initialised above");
        while cache.values.len() as u64 <= key {
            let k = cache.values.len() as u64;
            let probe = match kind {
                PolicyKind::WhittleAoI | PolicyKind::WhittleQAoI => UserState { aoi: k, ..*user },
                _ => UserState { aoii: k, ..*user },
            };
            cache.values.push(index_value(kind, &probe, params)?);
        }
        Ok(cache.values[key as usize])
    }
}

/// Picks the `m` largest priorities, ties to the lowest index.
fn top_m(priorities: &[f64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..priorities.len()).collect();
    order.sort_by(|&i, &j| priorities[j].total_cmp(&priorities[i]).then(i.cmp(&j)));
    order.truncate(m);
    order
}

/// Decision of policy `kind` for the current frame.
pub fn decide(
    kind: PolicyKind,
    options: PolicyOptions,
    state: &NetworkState,
    params: &[UserParams],
    m: usize,
    memory: &mut PolicyMemory,
) -> Result<Decision, PolicyError> {
    let n = state.users.len();
    if params.len() != n {
        return Err(PolicyError::LengthMismatch {
            params: params.len(),
            users: n,
        });
    }
    if m == 0 {
        return Err(PolicyError::NoChannels);
    }
    if m > n && !memory.clamp_warned {
        log::warn!("{m} channels for {n} users; scheduling all users");
        memory.clamp_warned = true;
    }
    let m = m.min(n);
    let selected = match kind {
        PolicyKind::RoundRobin => {
            let start = memory.cursor % n.max(1);
            memory.cursor = (start + m) % n.max(1);
            (0..m).map(|k| (start + k) % n).collect()
        }
        PolicyKind::GreedyAoII => {
            let prio: Vec<f64> = state
                .users
                .iter()
                .map(|u| {
                    if options.greedy_query_aware && !u.queried {
                        0.0
                    } else {
                        u.aoii as f64
                    }
                })
                .collect();
            top_m(&prio, m)
        }
        _ => {
            let prio = state
                .users
                .iter()
                .zip(params)
                .enumerate()
                .map(|(i, (u, p))| memory.cached_index(kind, i, u, p))
                .collect::<Result<Vec<_>, _>>()?;
            top_m(&prio, m)
        }
    };
    Ok(Decision { selected })
}

/// A [`PolicyKind`] together with its memory.
#[derive(Clone, Debug)]
pub struct Scheduler {
    pub kind: PolicyKind,
    pub options: PolicyOptions,
    pub memory: PolicyMemory,
}

impl Scheduler {
    pub fn new(kind: PolicyKind, options: PolicyOptions) -> Self {
        Scheduler {
            kind,
            options,
            memory: PolicyMemory::default(),
        }
    }
}

impl Policy for Scheduler {
    fn decide(&mut self, state: &NetworkState, params: &[UserParams], m: usize) -> Result<Decision, PolicyError> {
        decide(self.kind, self.options, state, params, m, &mut self.memory)
    }
}
