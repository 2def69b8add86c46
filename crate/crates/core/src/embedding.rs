//! Behavioral embeddings: discounted sums of state features along a policy's
//! rollouts through its stored transitions, averaged over reference states.
//!
//! Nothing in this module calls the simulator. Rollouts follow recorded
//! transitions and stop as soon as the policy picks an action with no
//! record.

use std::fs;
use std::io;

use serde::{Deserialize, Serialize};

use crate::composer::CompositionResult;
use crate::gridworld::{Action, GridLayout, StateId, StateKey};
use crate::learner::TransitionSet;
use crate::store::{PolicyArtifact, PolicyStore};

pub const FEATURE_DIM: usize = 6;
pub const DEFAULT_GAMMA_PSI: f64 = 0.9;
const CACHE_FILE: &str = "embedding.csv";

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("the reference set is empty")]
    EmptyReferenceSet,
}

/// The six structured features of a state.
#[derive(Debug, Clone, Copy)]
pub struct FeatureMap<'a> {
    layout: &'a GridLayout,
}

impl<'a> FeatureMap<'a> {
    pub fn new(layout: &'a GridLayout) -> Self {
        FeatureMap { layout }
    }

    pub fn dim(&self) -> usize {
        FEATURE_DIM
    }

    /// `(row/N, col/N, exit distance/(2N), remaining gold share, near hazard, lever pulled)`.
    ///
    /// Cells walled off from the exit get distance feature 1.
    pub fn eval(&self, key: &StateKey) -> [f64; FEATURE_DIM] {
        let l = self.layout;
        let n = l.size() as f64;
        let dist = l
            .exit_distance(key.agent)
            .map_or(1.0, |d| (d as f64 / (2.0 * n)).min(1.0));
        let gold = l.gold().len();
        let remaining = if gold == 0 {
            0.0
        } else {
            (gold as u32 - key.collected.count_ones()) as f64 / gold as f64
        };
        [
            key.agent.row as f64 / n,
            key.agent.col as f64 / n,
            dist,
            remaining,
            l.near_hazard(key.agent) as u8 as f64,
            key.lever_pulled as u8 as f64,
        ]
    }

    pub fn eval_id(&self, s: StateId) -> [f64; FEATURE_DIM] {
        self.eval(&self.layout.decode_state(s).expect("state id belongs to layout"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    pub id: String,
    pub states: Vec<StateId>,
}

/// Non-block cells with nothing collected and the lever untouched, row-major.
/// Grids of side 16 and above keep only the cells with even `row + col`.
pub fn reference_states(layout: &GridLayout) -> ReferenceSet {
    let checkerboard = layout.size() >= 16;
    let states = layout
        .open_cells()
        .filter(|c| !checkerboard || (c.row + c.col) % 2 == 0)
        .map(|agent| {
            layout.state_id(&StateKey {
                agent,
                collected: 0,
                lever_pulled: false,
            })
        })
        .collect();
    let kind = if checkerboard { "checker" } else { "full" };
    ReferenceSet {
        id: format!("n{}-s{}-{kind}", layout.size(), layout.seed()),
        states,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehavioralEmbedding {
    pub values: Vec<f64>,
    pub gamma_psi: f64,
    pub horizon: u32,
    pub refset_id: String,
}

impl BehavioralEmbedding {
    /// Cache row `policy_id,v0..v5,gamma_psi,H,refset_id`.
    pub fn to_csv_row(&self, policy_id: &str) -> String {
        let mut row = policy_id.to_string();
        for v in &self.values {
            row.push(',');
            row.push_str(&v.to_string());
        }
        row.push_str(&format!(",{},{},{}", self.gamma_psi, self.horizon, self.refset_id));
        row
    }

    pub fn from_csv_row(row: &str) -> Option<(String, BehavioralEmbedding)> {
        let f: Vec<&str> = row.trim_end().split(',').collect();
        if f.len() != FEATURE_DIM + 4 {
            return None;
        }
        let values = f[1..=FEATURE_DIM]
            .iter()
            .map(|v| v.parse().ok())
            .collect::<Option<Vec<f64>>>()?;
        Some((
            f[0].to_string(),
            BehavioralEmbedding {
                values,
                gamma_psi: f[FEATURE_DIM + 1].parse().ok()?,
                horizon: f[FEATURE_DIM + 2].parse().ok()?,
                refset_id: f[FEATURE_DIM + 3].to_string(),
            },
        ))
    }
}

/// `(1/|S_ref|) sum_{s0} sum_{t=0..H} gamma_psi^t phi(s_t)` along `policy`.
///
/// A rollout stops when the chosen action has no stored transition, after
/// `H` steps, or right after entering a terminal state (whose features are
/// still counted).
pub fn accumulate(
    layout: &GridLayout,
    refs: &ReferenceSet,
    gamma_psi: f64,
    horizon: u32,
    transitions: &TransitionSet,
    policy: impl Fn(StateId) -> Option<Action>,
) -> Result<BehavioralEmbedding, EmbedError> {
    if refs.states.is_empty() {
        return Err(EmbedError::EmptyReferenceSet);
    }
    let phi = FeatureMap::new(layout);
    let mut total = [0.0f64; FEATURE_DIM];
    for &s0 in &refs.states {
        let mut s = s0;
        let mut discount = 1.0;
        for t in 0..=horizon {
            let f = phi.eval_id(s);
            for k in 0..FEATURE_DIM {
                total[k] += discount * f[k];
            }
            if t == horizon {
                break;
            }
            let Some(rec) = policy(s).and_then(|a| transitions.get(s, a)) else {
                break;
            };
            s = rec.next_state;
            discount *= gamma_psi;
            if rec.terminal {
                if t + 1 <= horizon {
                    let f = phi.eval_id(s);
                    for k in 0..FEATURE_DIM {
                        total[k] += discount * f[k];
                    }
                }
                break;
            }
        }
    }
    let count = refs.states.len() as f64;
    Ok(BehavioralEmbedding {
        values: total.iter().map(|v| v / count).collect(),
        gamma_psi,
        horizon,
        refset_id: refs.id.clone(),
    })
}

/// Embedding of a stored policy, rolled out through its own transitions.
pub fn embed_policy(
    artifact: &PolicyArtifact,
    layout: &GridLayout,
    refs: &ReferenceSet,
    gamma_psi: f64,
    horizon: u32,
) -> Result<BehavioralEmbedding, EmbedError> {
    accumulate(layout, refs, gamma_psi, horizon, &artifact.transitions, |s| {
        artifact.supported_action(s)
    })
}

/// Embedding of a composition, rolled out over `transitions` (the merged
/// graph, or any member's records for a support-limited result).
pub fn embed_composed(
    result: &CompositionResult,
    transitions: &TransitionSet,
    layout: &GridLayout,
    refs: &ReferenceSet,
    gamma_psi: f64,
    horizon: u32,
) -> Result<BehavioralEmbedding, EmbedError> {
    accumulate(layout, refs, gamma_psi, horizon, transitions, |s| result.action(s))
}

/// Default embedding settings for a layout: `gamma_psi = 0.9`, `H = N^2`.
pub fn embed_policy_default(
    artifact: &PolicyArtifact,
    layout: &GridLayout,
    refs: &ReferenceSet,
) -> Result<BehavioralEmbedding, EmbedError> {
    embed_policy(artifact, layout, refs, DEFAULT_GAMMA_PSI, layout.horizon())
}

/// Reads the cached embedding of `id` if one with matching settings exists.
pub fn load_cached(
    store: &PolicyStore,
    id: &str,
    gamma_psi: f64,
    horizon: u32,
    refset_id: &str,
) -> Option<BehavioralEmbedding> {
    let text = fs::read_to_string(store.artifact_dir(id).join(CACHE_FILE)).ok()?;
    text.lines()
        .filter_map(BehavioralEmbedding::from_csv_row)
        .find(|(pid, e)| {
            pid == id && e.gamma_psi == gamma_psi && e.horizon == horizon && e.refset_id == refset_id
        })
        .map(|(_, e)| e)
}

/// Writes the cache file beside the artifact, replacing any previous one.
pub fn save_cached(store: &PolicyStore, id: &str, e: &BehavioralEmbedding) -> io::Result<()> {
    let path = store.artifact_dir(id).join(CACHE_FILE);
    fs::write(path, e.to_csv_row(id) + "\n")
}
