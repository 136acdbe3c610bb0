//! Per-user stochastic model: symmetric N-state Markov source, unreliable
//! channel, Bernoulli query process, and the exact AoII transition kernel.
//!
//! The AoII of a user only ever resets to zero or grows by one, so the kernel
//! is a two-point distribution on `{0, delta + 1}`. [`aoii_kernel`] gives the
//! distribution view used by the analytic oracles; [`step_user`] gives the
//! sampling view used by the simulator.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `p_remain + (n_states - 1) * p_trans = 1` when both are supplied.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("{name} = {value} is not a probability")]
    NotAProbability { name: &'static str, value: f64 },
    #[error("n_states must be at least 2, got {0}")]
    TooFewStates(u32),
    #[error("p_remain + (n_states - 1) * p_trans = {sum} (expected 1)")]
    RowSum { sum: f64 },
}

/// Unvalidated user description, as it appears in config files.
///
/// `p_trans` may be omitted, in which case it is derived from `p_remain`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    pub n_states: u32,
    pub p_remain: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_trans: Option<f64>,
    pub p_success: f64,
    #[serde(default = "default_query")]
    pub q_query: f64,
}

fn default_query() -> f64 {
    1.0
}

impl UserSpec {
    pub fn new(n_states: u32, p_remain: f64, p_success: f64, q_query: f64) -> Self {
        UserSpec {
            n_states,
            p_remain,
            p_trans: None,
            p_success,
            q_query,
        }
    }

    pub fn validate(&self) -> Result<UserParams, ParamError> {
        validate(self)
    }
}

/// Constants of the AoII chain for a user with non-zero AoII.
///
/// `a` is the probability that the AoII keeps growing under a transmission,
/// `b` the same probability when the user stays idle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub a: f64,
    pub b: f64,
}

/// Validated per-user parameters. Construct through [`validate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UserSpec", into = "UserSpec")]
pub struct UserParams {
    n_states: u32,
    p_remain: f64,
    p_trans: f64,
    p_success: f64,
    q_query: f64,
    derived: DerivedConstants,
}

impl TryFrom<UserSpec> for UserParams {
    type Error = ParamError;

    fn try_from(spec: UserSpec) -> Result<Self, Self::Error> {
        validate(&spec)
    }
}

impl From<UserParams> for UserSpec {
    fn from(p: UserParams) -> Self {
        UserSpec {
            n_states: p.n_states,
            p_remain: p.p_remain,
            p_trans: Some(p.p_trans),
            p_success: p.p_success,
            q_query: p.q_query,
        }
    }
}

fn check_prob(name: &'static str, value: f64) -> Result<f64, ParamError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(ParamError::NotAProbability { name, value })
    }
}

/// Validates a user description and attaches the derived chain constants.
pub fn validate(spec: &UserSpec) -> Result<UserParams, ParamError> {
    if spec.n_states < 2 {
        return Err(ParamError::TooFewStates(spec.n_states));
    }
    let n = spec.n_states as f64;
    let p_remain = check_prob("p_remain", spec.p_remain)?;
    let p_success = check_prob("p_success", spec.p_success)?;
    let q_query = check_prob("q_query", spec.q_query)?;
    let p_trans = match spec.p_trans {
        Some(pt) => {
            let pt = check_prob("p_trans", pt)?;
            let sum = p_remain + (n - 1.0) * pt;
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(ParamError::RowSum { sum });
            }
            pt
        }
        None => (1.0 - p_remain) / (n - 1.0),
    };
    let p_fail = 1.0 - p_success;
    let derived = DerivedConstants {
        a: p_remain * p_fail + (n - 2.0) * p_trans + p_success * p_trans,
        b: p_remain + (n - 2.0) * p_trans,
    };
    let params = UserParams {
        n_states: spec.n_states,
        p_remain,
        p_trans,
        p_success,
        q_query,
        derived,
    };
    if !params.source_is_sticky() {
        log::warn!(
            "p_remain = {p_remain} <= p_trans = {p_trans}: transmissions do not help this user"
        );
    }
    Ok(params)
}

impl UserParams {
    /// Shorthand for `validate(&UserSpec::new(..))`.
    pub fn new(n_states: u32, p_remain: f64, p_success: f64, q_query: f64) -> Result<Self, ParamError> {
        validate(&UserSpec::new(n_states, p_remain, p_success, q_query))
    }

    pub fn n_states(&self) -> u32 {
        self.n_states
    }

    pub fn p_remain(&self) -> f64 {
        self.p_remain
    }

    pub fn p_trans(&self) -> f64 {
        self.p_trans
    }

    pub fn p_success(&self) -> f64 {
        self.p_success
    }

    pub fn p_fail(&self) -> f64 {
        1.0 - self.p_success
    }

    pub fn q_query(&self) -> f64 {
        self.q_query
    }

    pub fn derived(&self) -> DerivedConstants {
        self.derived
    }

    /// Returns a copy with a different query probability.
    pub fn with_query(&self, q_query: f64) -> Result<Self, ParamError> {
        let mut spec = UserSpec::from(*self);
        spec.q_query = q_query;
        validate(&spec)
    }

    /// `p_remain > p_trans`: the regime where a delivered update is more
    /// likely to stay correct than a stale one.
    pub fn source_is_sticky(&self) -> bool {
        self.p_remain > self.p_trans
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Idle,
    Transmit,
}

/// Two-point next-AoII distribution: `reset` on 0, `advance` on `advance_to`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelRow {
    pub reset: f64,
    pub advance: f64,
    pub advance_to: u64,
}

impl KernelRow {
    pub fn prob(&self, next: u64) -> f64 {
        if next == 0 {
            self.reset
        } else if next == self.advance_to {
            self.advance
        } else {
            0.0
        }
    }
}

/// Exact one-step AoII distribution for the given state and action.
pub fn aoii_kernel(delta: u64, action: Action, params: &UserParams) -> KernelRow {
    let reset = if delta == 0 {
        params.p_remain
    } else {
        match action {
            Action::Idle => params.p_trans,
            Action::Transmit => {
                params.p_remain * params.p_success + params.p_fail() * params.p_trans
            }
        }
    };
    KernelRow {
        reset,
        advance: 1.0 - reset,
        advance_to: delta + 1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UserState {
    pub aoii: u64,
    pub aoi: u64,
    pub queried: bool,
}

impl UserState {
    pub fn initial() -> Self {
        UserState {
            aoii: 0,
            aoi: 1,
            queried: false,
        }
    }
}

impl Default for UserState {
    fn default() -> Self {
        Self::initial()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkState {
    pub users: Vec<UserState>,
    pub frame: u64,
}

impl NetworkState {
    pub fn new(n_users: usize) -> Self {
        NetworkState {
            users: vec![UserState::initial(); n_users],
            frame: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Uniform variates consumed by one user in one frame.
///
/// All three are always drawn, whatever the action, so that streams stay
/// aligned across policies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameDraws {
    pub source: f64,
    pub channel: f64,
    pub query: f64,
}

impl FrameDraws {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        FrameDraws {
            source: rng.gen(),
            channel: rng.gen(),
            query: rng.gen(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepOutcome {
    pub state: UserState,
    pub delivered: bool,
}

/// Source event relative to the receiver's stored value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SourceMove {
    Stay,
    ToReceived,
    Elsewhere,
}

fn source_move(delta: u64, u: f64, params: &UserParams) -> SourceMove {
    if u < params.p_remain {
        SourceMove::Stay
    } else if delta > 0 && u < params.p_remain + params.p_trans {
        SourceMove::ToReceived
    } else {
        SourceMove::Elsewhere
    }
}

/// Advances one user by one frame using pre-drawn uniforms.
pub fn step_user_with(
    state: &UserState,
    action: Action,
    params: &UserParams,
    draws: &FrameDraws,
) -> StepOutcome {
    let delivered = action == Action::Transmit && draws.channel < params.p_success;
    let mv = source_move(state.aoii, draws.source, params);
    // With AoII 0, or right after a delivery, the receiver holds the current
    // source value: only staying keeps it correct. Otherwise the receiver is
    // stale and only a move back to its stored value makes it correct.
    let receiver_current = state.aoii == 0 || delivered;
    let correct = if receiver_current {
        mv == SourceMove::Stay
    } else {
        mv == SourceMove::ToReceived
    };
    let next = UserState {
        aoii: if correct { 0 } else { state.aoii + 1 },
        aoi: if delivered { 1 } else { state.aoi + 1 },
        queried: draws.query < params.q_query,
    };
    StepOutcome {
        state: next,
        delivered,
    }
}

/// Samples one frame of source, channel and next-frame query for a user.
pub fn step_user<R: Rng + ?Sized>(
    state: &UserState,
    action: Action,
    params: &UserParams,
    rng: &mut R,
) -> UserState {
    let draws = FrameDraws::sample(rng);
    step_user_with(state, action, params, &draws).state
}
