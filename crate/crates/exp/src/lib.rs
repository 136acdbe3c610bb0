//! Experiment front end for `aoii-core`: scenario presets and config files,
//! sweep execution with CSV/JSON output, and the conformance suite.

pub mod runner;
pub mod scenario;
pub mod verify;

use scenario::Scenario;

/// Command-line overrides applied on top of a scenario.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    pub frames: Option<u64>,
    pub n_states: Option<u32>,
}

impl Overrides {
    pub fn apply(&self, mut s: Scenario) -> Scenario {
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.replications {
            s.replications = v;
        }
        if let Some(v) = self.frames {
            s.frames = v;
        }
        if let Some(v) = self.n_states {
            s.n_states = v;
        }
        s
    }
}
