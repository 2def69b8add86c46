//! The end-to-end offline pipeline: decompose, retrieve, embed, score,
//! compose. Shared by the CLI `compose` command and the experiment harness.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::embedding::{load_cached, reference_states, BehavioralEmbedding, DEFAULT_GAMMA_PSI};
use crate::error::Result;
use crate::gridworld::{Action, Component, GridLayout, RewardSpec, StateId, Terminal};
use crate::learner::{rollout, Budget, QTable, Trajectory, TrajectoryStep, TransitionSet};
use crate::predictor::{build_training_set, fit, BoostedModel, BoostingParams};
use crate::retrieval::{base_pool, decompose, describe, retrieve, CandidateList, Subtask, TfIdfIndex};
use crate::store::{gamma_tag, ArtifactFilter, PolicyArtifact, PolicyMetadata, PolicyStore, Provenance, Stage};
use crate::strategies::{run_strategy, Selection, SelectionContext, SelectionReport, StrategyConfig, StrategyKind};

#[derive(Debug, Clone, PartialEq)]
pub enum TaskInput {
    Instruction(String),
    Subtasks(Vec<Component>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposeRequest {
    pub size: usize,
    pub layout_seed: u64,
    pub budget: Budget,
    pub gamma: f64,
    pub task: TaskInput,
    pub strategy: StrategyConfig,
    pub top_m: usize,
}

#[derive(Debug, Clone)]
pub struct ComposeOutcome {
    pub subtasks: Vec<Subtask>,
    /// Uniform-weight sum of the subtask objectives.
    pub spec: RewardSpec,
    pub pools: Vec<CandidateList>,
    pub selection: Selection,
    pub report: SelectionReport,
    pub artifact: PolicyArtifact,
}

/// Subtasks for a request, canonical order, duplicates removed.
pub fn subtasks_for(task: &TaskInput) -> Result<Vec<Subtask>> {
    match task {
        TaskInput::Instruction(text) => Ok(decompose(text)?),
        TaskInput::Subtasks(tags) => {
            let mut tags = tags.clone();
            tags.sort();
            tags.dedup();
            if tags.is_empty() {
                return Err(crate::retrieval::RetrievalError::NoSubtasksRecognized(String::new()).into());
            }
            Ok(tags.into_iter().map(Subtask::from_tag).collect())
        }
    }
}

pub fn composite_spec(subtasks: &[Subtask]) -> Result<RewardSpec> {
    let tags: Vec<Component> = subtasks.iter().map(|s| s.tag).collect();
    Ok(RewardSpec::uniform(&tags)?)
}

/// Base policies a request may retrieve: same layout, discount and budget.
pub fn candidate_filter(size: usize, layout_seed: u64, gamma: f64, budget: Budget) -> ArtifactFilter {
    ArtifactFilter {
        budget: Some(budget),
        size: Some(size),
        layout_seed: Some(layout_seed),
        gamma: Some(gamma),
        stage: Some(Stage::Base),
        ..Default::default()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedPredictor {
    pub model: BoostedModel,
    pub examples: usize,
    pub seconds: f64,
}

/// Fits the base-stage predictor for `(budget, spec)` on all visible policies
/// of one grid size and discount. A single example gives a constant model.
pub fn train_predictor(
    store: &PolicyStore,
    budget: Budget,
    spec: &RewardSpec,
    size: usize,
    gamma: f64,
    params: &BoostingParams,
) -> Result<TrainedPredictor> {
    let t0 = Instant::now();
    let examples = build_training_set(store, Stage::Base, budget, spec, size, gamma)?;
    let model = match examples.as_slice() {
        [only] => BoostedModel::constant(only.embedding.len(), only.label),
        _ => fit(&examples, params)?,
    };
    Ok(TrainedPredictor {
        model,
        examples: examples.len(),
        seconds: t0.elapsed().as_secs_f64(),
    })
}

pub fn composed_policy_id(req: &ComposeRequest, spec: &RewardSpec) -> String {
    let strategy = match req.strategy.kind {
        StrategyKind::Hc => format!("hc{}", req.strategy.k),
        k => k.name().to_string(),
    };
    format!(
        "composed-n{}-s{}-{}-{}-{}-{strategy}",
        req.size,
        req.layout_seed,
        gamma_tag(req.gamma),
        req.budget,
        spec.tag()
    )
}

/// Follows `policy` through recorded transitions from the start state.
/// Stops at a missing record, a terminal record, or after `N^2` steps.
pub fn offline_rollout(
    layout: &GridLayout,
    graph: &TransitionSet,
    spec: &RewardSpec,
    policy: impl Fn(StateId) -> Option<Action>,
) -> (Trajectory, f64) {
    let mut s = layout.state_id(&layout.initial_state().key());
    let mut steps = Vec::new();
    let mut total = 0.0;
    let horizon = layout.horizon();
    for t in 1..=horizon {
        let Some((a, rec)) = policy(s).and_then(|a| graph.get(s, a).map(|r| (a, r))) else {
            break;
        };
        let terminal = if rec.terminal {
            let next = layout.decode_state(rec.next_state).expect("valid state id");
            if layout.is_hazard(next.agent) {
                Terminal::HazardHit
            } else {
                Terminal::ExitReached
            }
        } else if t == horizon {
            Terminal::HorizonReached
        } else {
            Terminal::None
        };
        total += spec.weigh(&rec.components);
        steps.push(TrajectoryStep {
            state: s,
            action: a,
            next_state: rec.next_state,
            terminal,
            rewards: rec.components,
        });
        if terminal.ends_episode() {
            break;
        }
        s = rec.next_state;
    }
    (Trajectory { episode: 0, steps }, total)
}

/// Ground-truth simulator return of an artifact under `spec`. Reporting only.
pub fn evaluate_artifact(layout: &GridLayout, artifact: &PolicyArtifact, spec: &RewardSpec) -> (Trajectory, f64) {
    rollout(layout, spec, layout.horizon(), 0, |s| artifact.act(s))
}

fn composed_artifact(
    layout: &GridLayout,
    req: &ComposeRequest,
    spec: &RewardSpec,
    selection: &Selection,
) -> PolicyArtifact {
    let comp = &selection.composition;
    let mut qtable = QTable::new(req.size, req.gamma, spec.clone());
    for (&(s, a), &q) in &comp.q_new {
        qtable.entries.entry(s).or_insert([0.0; 4])[a.index()] = q;
    }
    let (trajectory, ret) = offline_rollout(layout, &selection.graph, spec, |s| comp.action(s));
    PolicyArtifact {
        metadata: PolicyMetadata {
            policy_id: composed_policy_id(req, spec),
            objective: spec.clone(),
            description: describe(spec, req.size, req.layout_seed, req.budget, None),
            size: req.size,
            layout_seed: req.layout_seed,
            budget: req.budget,
            checkpoint: None,
            gamma: req.gamma,
            stage: Stage::Composed,
            episode: None,
            training_seed: None,
        },
        qtable,
        transitions: selection.graph.clone(),
        trajectories: vec![trajectory],
        empirical_return: ret,
        provenance: Some(Provenance {
            members: comp.members.clone(),
            weights: comp.weights.clone(),
            regime: comp.regime,
            warning: comp.regime_warning.clone(),
        }),
    }
}

/// Runs decompose, retrieve, embed, score and compose without touching the
/// simulator.
pub fn run_compose(store: &PolicyStore, req: &ComposeRequest, model: &BoostedModel) -> Result<ComposeOutcome> {
    let steps_before = crate::gridworld::step_calls();

    let t0 = Instant::now();
    let subtasks = subtasks_for(&req.task)?;
    let spec = composite_spec(&subtasks)?;
    let decompose_secs = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let layout = store.get_layout(req.size, req.layout_seed)?;
    let docs: Vec<(String, String)> = store
        .list(&candidate_filter(req.size, req.layout_seed, req.gamma, req.budget))
        .into_iter()
        .map(|id| {
            let d = store.metadata(&id).expect("listed").description.clone();
            (id, d)
        })
        .collect();
    let index = TfIdfIndex::build(&docs);
    let pools = subtasks
        .iter()
        .map(|st| retrieve(st, &index, req.top_m))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut artifacts = BTreeMap::new();
    for id in base_pool(&pools) {
        let a = store.get(&id)?;
        artifacts.insert(id, a);
    }
    let refs = reference_states(&layout);
    let retrieve_secs = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let embeddings: BTreeMap<String, BehavioralEmbedding> = artifacts
        .keys()
        .filter_map(|id| {
            load_cached(store, id, DEFAULT_GAMMA_PSI, layout.horizon(), &refs.id).map(|e| (id.clone(), e))
        })
        .collect();
    let cache_secs = t0.elapsed().as_secs_f64();

    let ctx = SelectionContext {
        layout: &layout,
        refs: &refs,
        gamma_psi: DEFAULT_GAMMA_PSI,
        horizon: layout.horizon(),
        model,
        artifacts: &artifacts,
        embeddings: &embeddings,
    };
    let (selection, mut report) = run_strategy(&req.strategy, &pools, &ctx)?;
    report.phase_seconds.decompose = decompose_secs;
    report.phase_seconds.retrieve = retrieve_secs;
    report.phase_seconds.embed += cache_secs;

    let artifact = composed_artifact(&layout, req, &spec, &selection);
    report.env_steps = crate::gridworld::step_calls() - steps_before;
    Ok(ComposeOutcome {
        subtasks,
        spec,
        pools,
        selection,
        report,
        artifact,
    })
}
