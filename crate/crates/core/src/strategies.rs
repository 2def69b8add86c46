//! Targeted (TC), hybrid top-k (HC) and exhaustive (EC) composition.
//!
//! All three work on per-subtask candidate lists and only touch stored
//! artifacts: base candidates and compositions are embedded offline and
//! ranked by the predictor.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::composer::{
    compose_planning, compose_support_limited, merge_graphs, CompositionResult, Member,
};
use crate::embedding::{embed_composed, embed_policy, BehavioralEmbedding, ReferenceSet};
use crate::error::Result;
use crate::gridworld::{Component, GridLayout};
use crate::learner::{Transition, TransitionSet};
use crate::predictor::BoostedModel;
use crate::retrieval::CandidateList;
use crate::store::PolicyArtifact;

pub const DEFAULT_K: usize = 3;
pub const DEFAULT_COMBINATION_CAP: usize = 10_000;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("subtask `{0}` has no candidates")]
    EmptyCandidates(Component),
    #[error("{combinations} combinations exceed the cap of {cap}")]
    CombinationCapExceeded { combinations: usize, cap: usize },
    #[error("candidate `{0}` was not loaded")]
    MissingArtifact(String),
    #[error("k must be at least 1")]
    InvalidK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Tc,
    Hc,
    Ec,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Tc => "tc",
            StrategyKind::Hc => "hc",
            StrategyKind::Ec => "ec",
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "tc" => Ok(StrategyKind::Tc),
            "hc" => Ok(StrategyKind::Hc),
            "ec" => Ok(StrategyKind::Ec),
            other => Err(format!("unknown strategy `{other}` (expected tc, hc or ec)")),
        }
    }
}

/// How candidate sets are composed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionMode {
    /// Weighted Q-sum on the shared support, whatever the members' discount.
    #[default]
    SupportLimited,
    /// Value iteration on the merged graph when the members are discounted.
    Planning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Used by HC only.
    pub k: usize,
    pub combination_cap: usize,
    pub mode: CompositionMode,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        StrategyConfig {
            kind,
            k: DEFAULT_K,
            combination_cap: DEFAULT_COMBINATION_CAP,
            mode: CompositionMode::default(),
        }
    }

    pub fn hc(k: usize) -> Self {
        StrategyConfig {
            k,
            ..Self::new(StrategyKind::Hc)
        }
    }
}

/// Wall-clock seconds spent per pipeline phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseSeconds {
    pub decompose: f64,
    pub retrieve: f64,
    pub embed: f64,
    pub score: f64,
    pub compose: f64,
}

impl PhaseSeconds {
    pub fn total(&self) -> f64 {
        self.decompose + self.retrieve + self.embed + self.score + self.compose
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub strategy: StrategyKind,
    pub k: Option<usize>,
    pub subtasks: Vec<Component>,
    /// Member ids of the chosen composition, one per subtask.
    pub chosen: Vec<String>,
    pub chosen_score: f64,
    /// Sum of the candidate list lengths.
    pub candidates_considered: usize,
    pub compositions_evaluated: usize,
    pub phase_seconds: PhaseSeconds,
    /// Simulator steps taken while selecting; always zero.
    pub env_steps: u64,
    pub regime_warning: Option<String>,
    pub support_size: usize,
}

impl SelectionReport {
    pub fn seconds(&self) -> f64 {
        self.phase_seconds.total()
    }
}

/// Everything the strategies read.
pub struct SelectionContext<'a> {
    pub layout: &'a GridLayout,
    pub refs: &'a ReferenceSet,
    pub gamma_psi: f64,
    pub horizon: u32,
    pub model: &'a BoostedModel,
    pub artifacts: &'a BTreeMap<String, PolicyArtifact>,
    /// Precomputed base embeddings with matching settings; others are computed.
    pub embeddings: &'a BTreeMap<String, BehavioralEmbedding>,
}

impl SelectionContext<'_> {
    fn artifact(&self, id: &str) -> Result<&PolicyArtifact> {
        self.artifacts
            .get(id)
            .ok_or_else(|| StrategyError::MissingArtifact(id.to_string()).into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub members: Vec<String>,
    pub composition: CompositionResult,
    /// Transitions the composed policy is defined over, with composite rewards.
    pub graph: TransitionSet,
    pub embedding: BehavioralEmbedding,
    pub score: f64,
}

/// Composes `ids` with unit weights.
pub fn compose_members(
    ids: &[String],
    ctx: &SelectionContext<'_>,
    mode: CompositionMode,
) -> Result<(CompositionResult, TransitionSet)> {
    let arts: Vec<&PolicyArtifact> = ids.iter().map(|id| ctx.artifact(id)).collect::<Result<_>>()?;
    let members: Vec<Member<'_>> = arts
        .iter()
        .map(|a| Member {
            id: a.id(),
            qtable: &a.qtable,
            transitions: &a.transitions,
        })
        .collect();
    let w = vec![1.0; members.len()];
    let gamma = members[0].qtable.gamma;
    if mode == CompositionMode::Planning && gamma > 0.0 && gamma < 1.0 {
        let merged = merge_graphs(&members, &w)?;
        let result = compose_planning(&merged, gamma)?;
        return Ok((result, merged.to_transition_set()));
    }
    let result = compose_support_limited(&members, &w)?;
    let mut graph = TransitionSet::new();
    for (s, a) in result.support() {
        let rec = members[0].transitions.get(s, a).expect("support pair is recorded");
        let reward = members
            .iter()
            .zip(&w)
            .map(|(m, wi)| wi * m.qtable.spec.weigh(&rec.components))
            .sum();
        graph
            .insert(s, a, Transition { reward, ..*rec })
            .expect("single source of records");
    }
    Ok((result, graph))
}

/// Runs the configured strategy over `pools` (one list per subtask).
pub fn run_strategy(
    cfg: &StrategyConfig,
    pools: &[CandidateList],
    ctx: &SelectionContext<'_>,
) -> Result<(Selection, SelectionReport)> {
    let steps_before = crate::gridworld::step_calls();
    if cfg.kind == StrategyKind::Hc && cfg.k == 0 {
        return Err(StrategyError::InvalidK.into());
    }
    for pool in pools {
        if pool.ranked.is_empty() {
            return Err(StrategyError::EmptyCandidates(pool.subtask.tag).into());
        }
    }
    if pools.is_empty() {
        return Err(crate::composer::ComposeError::NoMembers.into());
    }
    let mut phases = PhaseSeconds::default();

    // Per-subtask candidate lists after optional base scoring.
    let keep: Option<usize> = match cfg.kind {
        StrategyKind::Tc => Some(1),
        StrategyKind::Hc => Some(cfg.k),
        StrategyKind::Ec => None,
    };
    let lists: Vec<Vec<String>> = match keep {
        None => pools
            .iter()
            .map(|p| p.ids().map(str::to_string).collect())
            .collect(),
        Some(k) => {
            let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
            for pool in pools {
                for id in pool.ids() {
                    if scores.contains_key(id) {
                        continue;
                    }
                    let t0 = Instant::now();
                    let e = match ctx.embeddings.get(id) {
                        Some(e) => e.clone(),
                        None => embed_policy(ctx.artifact(id)?, ctx.layout, ctx.refs, ctx.gamma_psi, ctx.horizon)?,
                    };
                    let t1 = Instant::now();
                    let s = ctx.model.predict(&e.values)?;
                    phases.embed += (t1 - t0).as_secs_f64();
                    phases.score += t1.elapsed().as_secs_f64();
                    scores.insert(id, s);
                }
            }
            let t0 = Instant::now();
            let lists = pools
                .iter()
                .map(|pool| {
                    let mut ids: Vec<&str> = pool.ids().collect();
                    ids.sort_by(|a, b| scores[b].total_cmp(&scores[a]).then_with(|| a.cmp(b)));
                    ids.dedup();
                    ids.into_iter().take(k).map(str::to_string).collect()
                })
                .collect();
            phases.score += t0.elapsed().as_secs_f64();
            lists
        }
    };

    let combinations = lists
        .iter()
        .try_fold(1usize, |acc, l| acc.checked_mul(l.len()))
        .unwrap_or(usize::MAX);
    if combinations > cfg.combination_cap {
        return Err(StrategyError::CombinationCapExceeded {
            combinations,
            cap: cfg.combination_cap,
        }
        .into());
    }

    let mut best: Option<Selection> = None;
    let mut index = vec![0usize; lists.len()];
    for _ in 0..combinations {
        let ids: Vec<String> = index.iter().zip(&lists).map(|(&i, l)| l[i].clone()).collect();

        let t0 = Instant::now();
        let (composition, graph) = compose_members(&ids, ctx, cfg.mode)?;
        let t1 = Instant::now();
        let embedding = embed_composed(&composition, &graph, ctx.layout, ctx.refs, ctx.gamma_psi, ctx.horizon)?;
        let t2 = Instant::now();
        let score = ctx.model.predict(&embedding.values)?;
        let better = match &best {
            None => true,
            Some(b) => score > b.score || (score == b.score && ids < b.members),
        };
        phases.compose += (t1 - t0).as_secs_f64();
        phases.embed += (t2 - t1).as_secs_f64();
        phases.score += t2.elapsed().as_secs_f64();
        if better {
            best = Some(Selection {
                members: ids,
                composition,
                graph,
                embedding,
                score,
            });
        }

        // odometer over the candidate lists
        for d in (0..index.len()).rev() {
            index[d] += 1;
            if index[d] < lists[d].len() {
                break;
            }
            index[d] = 0;
        }
    }

    let selection = best.expect("at least one combination");
    let report = SelectionReport {
        strategy: cfg.kind,
        k: (cfg.kind == StrategyKind::Hc).then_some(cfg.k),
        subtasks: pools.iter().map(|p| p.subtask.tag).collect(),
        chosen: selection.members.clone(),
        chosen_score: selection.score,
        candidates_considered: pools.iter().map(|p| p.ranked.len()).sum(),
        compositions_evaluated: combinations,
        phase_seconds: phases,
        env_steps: crate::gridworld::step_calls() - steps_before,
        regime_warning: selection.composition.regime_warning.clone(),
        support_size: selection.composition.q_new.len(),
    };
    Ok((selection, report))
}

pub fn run_tc(pools: &[CandidateList], ctx: &SelectionContext<'_>) -> Result<(Selection, SelectionReport)> {
    run_strategy(&StrategyConfig::new(StrategyKind::Tc), pools, ctx)
}

pub fn run_hc(pools: &[CandidateList], k: usize, ctx: &SelectionContext<'_>) -> Result<(Selection, SelectionReport)> {
    run_strategy(&StrategyConfig::hc(k), pools, ctx)
}

pub fn run_ec(pools: &[CandidateList], ctx: &SelectionContext<'_>) -> Result<(Selection, SelectionReport)> {
    run_strategy(&StrategyConfig::new(StrategyKind::Ec), pools, ctx)
}
