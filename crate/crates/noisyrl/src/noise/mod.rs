//! Noise injection: user-side script perturbation before the episode and
//! tool-side result perturbation during it.
//!
//! Every stochastic decision is drawn from a tape keyed by `(spec, seed,
//! ordinal)`, so a recorded realization replays exactly — under the original
//! action sequence or under any other one, which is what lets the solvability
//! oracle search the perturbed environment.

mod tool;
mod user;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use tool::{perturb_tool_output, NoiseStream};
pub use user::perturb_interaction;

/// Sentinel appended to truncated lists. Excluded from observed-value pools.
pub const TRUNCATION_MARKER: &str = "[truncated]";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSide {
    User,
    Tool,
}

/// The noise taxonomy: four user-side interaction anomalies and four
/// tool-side execution anomalies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCategory {
    // user side
    Ambiguous,
    Inconsistent,
    Redundant,
    OutOfScope,
    // tool side
    Failure,
    Incomplete,
    Misleading,
    RedundantTool,
}

impl NoiseCategory {
    pub const ALL: [NoiseCategory; 8] = [
        NoiseCategory::Ambiguous,
        NoiseCategory::Inconsistent,
        NoiseCategory::Redundant,
        NoiseCategory::OutOfScope,
        NoiseCategory::Failure,
        NoiseCategory::Incomplete,
        NoiseCategory::Misleading,
        NoiseCategory::RedundantTool,
    ];

    pub fn side(self) -> NoiseSide {
        match self {
            NoiseCategory::Ambiguous
            | NoiseCategory::Inconsistent
            | NoiseCategory::Redundant
            | NoiseCategory::OutOfScope => NoiseSide::User,
            _ => NoiseSide::Tool,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseCategory::Ambiguous => "ambiguous",
            NoiseCategory::Inconsistent => "inconsistent",
            NoiseCategory::Redundant => "redundant",
            NoiseCategory::OutOfScope => "out_of_scope",
            NoiseCategory::Failure => "failure",
            NoiseCategory::Incomplete => "incomplete",
            NoiseCategory::Misleading => "misleading",
            NoiseCategory::RedundantTool => "redundant_tool",
        }
    }

    pub fn parse(s: &str) -> Option<NoiseCategory> {
        NoiseCategory::ALL.iter().copied().find(|c| c.name() == s)
    }
}

/// Derived perturbation parameters at a difficulty level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Per-call perturbation probability (tool side).
    pub p: f64,
    /// Severity in [0, 1] (tool side; drives truncation).
    pub s: f64,
    /// Anomaly count (user side; also the appended-pair count for redundant
    /// tool output).
    pub m: usize,
    /// Severity tier for user-side anomalies, capped at 3.
    pub tier: u32,
}

/// Difficulty ramp. Level 0 is the identity for every category; tool-side
/// probability caps at 0.6 and severity at 1.0 so escalation never makes a
/// task unsolvable, only harder.
pub fn difficulty_params(category: NoiseCategory, level: u32) -> NoiseParams {
    if level == 0 {
        return NoiseParams::default();
    }
    match category.side() {
        NoiseSide::Tool => NoiseParams {
            p: (0.15 * level as f64).min(0.6),
            s: (0.25 * level as f64).min(1.0),
            m: level as usize,
            tier: level.min(3),
        },
        NoiseSide::User => NoiseParams {
            p: 0.0,
            s: 0.0,
            m: level as usize,
            tier: level.min(3),
        },
    }
}

/// A noise configuration: which side, which category, how hard.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub category: NoiseCategory,
    pub level: u32,
}

impl NoiseSpec {
    pub fn new(category: NoiseCategory, level: u32) -> Self {
        NoiseSpec { category, level }
    }

    pub fn side(&self) -> NoiseSide {
        self.category.side()
    }

    pub fn params(&self) -> NoiseParams {
        difficulty_params(self.category, self.level)
    }
}

/// One recorded stochastic decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "draw", rename_all = "snake_case")]
pub enum NoiseDraw {
    /// Tool-side: whether the i-th eligible call fires, and the pick index
    /// used to choose the corrupted field / decoy value deterministically.
    ToolCall {
        ordinal: u64,
        fired: bool,
        pick: u64,
    },
    /// User-side: which slot/segment an anomaly targeted.
    Script { anomaly: usize, detail: String },
}

/// A fully recorded perturbation: replaying the same `(spec, seed)` always
/// reproduces the same `draw_log`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRealization {
    pub spec: NoiseSpec,
    pub seed: u64,
    pub draw_log: Vec<NoiseDraw>,
}

impl NoiseRealization {
    pub fn new(spec: NoiseSpec, seed: u64) -> Self {
        NoiseRealization {
            spec,
            seed,
            draw_log: Vec::new(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NoiseError {
    #[error("category {category:?} is {expected:?}-side, got a {got:?}-side call")]
    WrongSide {
        category: NoiseCategory,
        expected: NoiseSide,
        got: NoiseSide,
    },
    #[error("{requested} anomalies requested but only {available} goal slots are available")]
    TooManyAnomalies { requested: usize, available: usize },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_zero_is_identity_params() {
        for cat in NoiseCategory::ALL {
            let p = difficulty_params(cat, 0);
            assert_eq!(p.p, 0.0);
            assert_eq!(p.m, 0);
        }
    }

    #[test]
    fn failure_ramp_values() {
        assert_eq!(difficulty_params(NoiseCategory::Failure, 2).p, 0.30);
        assert_eq!(difficulty_params(NoiseCategory::Failure, 10).p, 0.60);
        assert_eq!(difficulty_params(NoiseCategory::Incomplete, 2).s, 0.50);
        assert_eq!(difficulty_params(NoiseCategory::Incomplete, 10).s, 1.0);
    }

    #[test]
    fn ramps_are_monotone() {
        for cat in NoiseCategory::ALL {
            let mut prev = difficulty_params(cat, 0);
            for level in 1..12 {
                let cur = difficulty_params(cat, level);
                assert!(cur.p >= prev.p);
                assert!(cur.s >= prev.s);
                assert!(cur.m >= prev.m);
                assert!(cur.tier >= prev.tier);
                prev = cur;
            }
        }
    }

    #[test]
    fn bounds_hold_at_any_level() {
        for cat in NoiseCategory::ALL {
            for level in 0..100 {
                let p = difficulty_params(cat, level);
                assert!((0.0..=0.6).contains(&p.p));
                assert!((0.0..=1.0).contains(&p.s));
            }
        }
    }
}
