//! Experiment protocol: library construction, training-from-scratch
//! baselines, TC/HC/EC runs, the all-snapshots upper bound, the top-k sweep
//! and CSV reporting.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::gridworld::{generate_layout, Component, GridLayout, RewardSpec, RoleCounts};
use crate::learner::{train_sarsa, Budget, CheckpointKind, TrainingConfig};
use crate::pipeline::{evaluate_artifact, run_compose, train_predictor, ComposeRequest, TaskInput, TrainedPredictor};
use crate::predictor::BoostingParams;
use crate::retrieval::{describe, DEFAULT_TOP_M};
use crate::store::{base_policy_id, serialize_artifact, ArtifactFilter, PolicyArtifact, PolicyMetadata, PolicyStore, Stage};
use crate::strategies::{CompositionMode, StrategyConfig, StrategyKind, DEFAULT_K};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("no rows to report")]
    EmptyReport,
    #[error("no base policies visible for {0}")]
    EmptyStage(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanStrategy {
    Tfs,
    Tc,
    Hc,
    Ec,
}

impl PlanStrategy {
    pub fn name(self) -> &'static str {
        match self {
            PlanStrategy::Tfs => "tfs",
            PlanStrategy::Tc => "tc",
            PlanStrategy::Hc => "hc",
            PlanStrategy::Ec => "ec",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub ks: Vec<usize>,
    pub regime: f64,
    pub spec: RewardSpec,
}

fn default_objectives() -> Vec<Component> {
    Component::ALL.to_vec()
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_top_m() -> usize {
    DEFAULT_TOP_M
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub budgets: Vec<Budget>,
    /// Task discount factors.
    pub regimes: Vec<f64>,
    pub specs: Vec<RewardSpec>,
    pub strategies: Vec<PlanStrategy>,
    #[serde(default = "default_objectives")]
    pub objectives: Vec<Component>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_top_m")]
    pub top_m: usize,
    #[serde(default)]
    pub sweep: Option<SweepPlan>,
    #[serde(default)]
    pub mode: CompositionMode,
}

impl ExperimentPlan {
    /// The full protocol: both sizes, 5 seeds, all budgets and regimes.
    pub fn full() -> Self {
        ExperimentPlan {
            sizes: vec![8, 16],
            seeds: (0..5).collect(),
            budgets: Budget::ALL.to_vec(),
            regimes: vec![0.0, 0.99],
            specs: ["path-gold", "path-gold-hazard", "path-gold-hazard-lever"]
                .iter()
                .map(|s| s.parse().expect("valid tag"))
                .collect(),
            strategies: vec![PlanStrategy::Tfs, PlanStrategy::Tc, PlanStrategy::Hc, PlanStrategy::Ec],
            objectives: default_objectives(),
            k: DEFAULT_K,
            top_m: DEFAULT_TOP_M,
            sweep: Some(SweepPlan {
                ks: (1..=6).collect(),
                regime: 0.0,
                spec: "path-gold".parse().expect("valid tag"),
            }),
            mode: CompositionMode::SupportLimited,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidPlan(m));
        if let Some(s) = self.sizes.iter().find(|&&s| s != 8 && s != 16) {
            return bad(format!("grid size {s} (expected 8 or 16)"));
        }
        if let Some(g) = self.regimes.iter().find(|g| !(0.0..1.0).contains(*g)) {
            return bad(format!("regime gamma {g} outside [0, 1)"));
        }
        if self.k == 0 || self.top_m == 0 {
            return bad("k and top_m must be positive".into());
        }
        if let Some(sw) = &self.sweep {
            if sw.ks.contains(&0) {
                return bad("sweep k must be positive".into());
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: ExperimentPlan = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }
}

/// Stable 64-bit seed derived from a label.
pub fn derive_seed(label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn layout_for(size: usize, seed: u64) -> Result<GridLayout> {
    Ok(generate_layout(size, seed, &RoleCounts::default_for(size))?)
}

/// Trains one `(layout, objective, budget, gamma)` run and returns its three
/// checkpoint artifacts.
pub fn train_base_policies(
    layout: &GridLayout,
    objective: Component,
    budget: Budget,
    gamma: f64,
) -> Result<Vec<PolicyArtifact>> {
    let spec = RewardSpec::single(objective);
    let training_seed = derive_seed(&format!(
        "library n{} s{} {} {budget} {gamma}",
        layout.size(),
        layout.seed(),
        objective.name()
    ));
    let cfg = TrainingConfig::for_budget(gamma, budget, training_seed);
    let out = train_sarsa(layout, &spec, &cfg)?;
    Ok(CheckpointKind::ALL
        .iter()
        .map(|&kind| {
            let cp = out.checkpoints.get(kind);
            PolicyArtifact {
                metadata: PolicyMetadata {
                    policy_id: base_policy_id(layout.size(), layout.seed(), gamma, budget, &spec, kind),
                    objective: spec.clone(),
                    description: describe(&spec, layout.size(), layout.seed(), budget, Some(kind)),
                    size: layout.size(),
                    layout_seed: layout.seed(),
                    budget,
                    checkpoint: Some(kind),
                    gamma,
                    stage: Stage::Base,
                    episode: Some(cp.episode),
                    training_seed: Some(training_seed),
                },
                qtable: cp.qtable.clone(),
                transitions: out.transitions.clone(),
                trajectories: vec![cp.trajectory.clone()],
                empirical_return: cp.eval_return,
                provenance: None,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LibrarySummary {
    pub runs_trained: usize,
    pub runs_skipped: usize,
    pub artifacts: usize,
}

fn thread_pool(jobs: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool")
}

/// Trains and stores every `(size, seed, objective, budget, regime)` run of
/// the plan that is not in the store yet. Runs train in parallel; artifacts
/// are written in plan order.
pub fn build_library(plan: &ExperimentPlan, store: &mut PolicyStore, jobs: usize) -> Result<LibrarySummary> {
    plan.validate()?;
    let mut summary = LibrarySummary::default();
    let mut runs = Vec::new();
    for &size in &plan.sizes {
        for &seed in &plan.seeds {
            let layout = layout_for(size, seed)?;
            store.put_layout(&layout)?;
            for &objective in &plan.objectives {
                for &budget in &plan.budgets {
                    for &gamma in &plan.regimes {
                        let spec = RewardSpec::single(objective);
                        let done = CheckpointKind::ALL
                            .iter()
                            .all(|&k| store.contains(&base_policy_id(size, seed, gamma, budget, &spec, k)));
                        if done {
                            summary.runs_skipped += 1;
                        } else {
                            runs.push((layout.clone(), objective, budget, gamma));
                        }
                    }
                }
            }
        }
    }
    let pool = thread_pool(jobs);
    for chunk in runs.chunks(jobs.max(1) * 2) {
        let trained: Vec<Result<Vec<PolicyArtifact>>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|(layout, objective, budget, gamma)| train_base_policies(layout, *objective, *budget, *gamma))
                .collect()
        });
        for artifacts in trained {
            for a in artifacts? {
                if !store.contains(a.id()) {
                    store.put(&a)?;
                    summary.artifacts += 1;
                }
            }
            summary.runs_trained += 1;
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TfsOutcome {
    pub ret: f64,
    /// Training wall-clock, evaluation rollouts included.
    pub seconds: f64,
    pub eval_seconds: f64,
}

/// Trains from scratch on the composite reward; the return is the greedy
/// evaluation of the best checkpoint.
pub fn run_tfs(layout: &GridLayout, spec: &RewardSpec, budget: Budget, gamma: f64) -> Result<TfsOutcome> {
    let seed = derive_seed(&format!("tfs n{} s{} {spec} {budget} {gamma}", layout.size(), layout.seed()));
    run_tfs_with(layout, spec, &TrainingConfig::for_budget(gamma, budget, seed))
}

pub fn run_tfs_with(layout: &GridLayout, spec: &RewardSpec, cfg: &TrainingConfig) -> Result<TfsOutcome> {
    let out = train_sarsa(layout, spec, cfg)?;
    Ok(TfsOutcome {
        ret: out.checkpoints.best.eval_return,
        seconds: out.seconds,
        eval_seconds: out.eval_seconds,
    })
}

/// Best ground-truth return under `spec` among the stored base snapshots of
/// this layout, budget and discount. Uses the simulator; reporting only.
pub fn compute_upper_bound(
    store: &PolicyStore,
    layout: &GridLayout,
    spec: &RewardSpec,
    budget: Budget,
    gamma: f64,
) -> Result<f64> {
    let ids = store.list(&ArtifactFilter {
        budget: Some(budget),
        size: Some(layout.size()),
        layout_seed: Some(layout.seed()),
        gamma: Some(gamma),
        stage: Some(Stage::Base),
        ..Default::default()
    });
    let mut best: Option<f64> = None;
    for id in &ids {
        let a = store.get(id)?;
        let (_, ret) = evaluate_artifact(layout, &a, spec);
        best = Some(best.map_or(ret, |b: f64| b.max(ret)));
    }
    best.ok_or_else(|| {
        HarnessError::EmptyStage(format!("n{} s{} {budget} gamma {gamma}", layout.size(), layout.seed())).into()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub size: usize,
    pub seed: u64,
    pub budget: Budget,
    pub regime: f64,
    pub spec: RewardSpec,
    pub strategy: PlanStrategy,
    #[serde(rename = "return")]
    pub ret: f64,
    pub seconds: f64,
    pub upper_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub seed: u64,
    pub budget: Budget,
    pub k: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub size: usize,
    pub budget: Budget,
    pub regime: f64,
    pub spec: RewardSpec,
    pub strategy: PlanStrategy,
    pub runs: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub mean_upper_bound: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Across-seed mean and sample standard deviation per configuration.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<((usize, Budget, u64, String, PlanStrategy), Vec<&ResultRow>)> = Vec::new();
    for r in rows {
        let key = (r.size, r.budget, r.regime.to_bits(), r.spec.tag(), r.strategy);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(_, g)| {
            let rets: Vec<f64> = g.iter().map(|r| r.ret).collect();
            let secs: Vec<f64> = g.iter().map(|r| r.seconds).collect();
            let ubs: Vec<f64> = g.iter().map(|r| r.upper_bound).collect();
            let (mean_return, std_return) = mean_std(&rets);
            let (mean_seconds, std_seconds) = mean_std(&secs);
            SummaryRow {
                size: g[0].size,
                budget: g[0].budget,
                regime: g[0].regime,
                spec: g[0].spec.clone(),
                strategy: g[0].strategy,
                runs: g.len(),
                mean_return,
                std_return,
                mean_seconds,
                std_seconds,
                mean_upper_bound: mean_std(&ubs).0,
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}

pub const RESULTS_HEADER: &str = "size,seed,budget,regime,spec,strategy,return,seconds,upper_bound";
pub const SWEEP_HEADER: &str = "size,seed,budget,k,return,seconds";

/// Writes `results.csv`, `summary.csv` and (when sweep rows exist)
/// `sweep.csv` into `out`.
pub fn emit_report(rows: &[ResultRow], sweep: &[SweepRow], out: &Path) -> Result<()> {
    if rows.is_empty() && sweep.is_empty() {
        return Err(HarnessError::EmptyReport.into());
    }
    fs::create_dir_all(out)?;
    if !rows.is_empty() {
        write_csv(&out.join("results.csv"), rows)?;
        write_csv(&out.join("summary.csv"), &summarize(rows))?;
    }
    if !sweep.is_empty() {
        write_csv(&out.join("sweep.csv"), sweep)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub sweep: Vec<SweepRow>,
}

type PredictorKey = (usize, Budget, u64, String);

fn strategy_config(plan: &ExperimentPlan, kind: StrategyKind, k: usize) -> StrategyConfig {
    StrategyConfig {
        k,
        mode: plan.mode,
        ..StrategyConfig::new(kind)
    }
}

fn compose_row(
    store: &PolicyStore,
    plan: &ExperimentPlan,
    predictor: &TrainedPredictor,
    layout: &GridLayout,
    budget: Budget,
    gamma: f64,
    spec: &RewardSpec,
    strategy: StrategyConfig,
) -> Result<(f64, f64, PolicyArtifact)> {
    let req = ComposeRequest {
        size: layout.size(),
        layout_seed: layout.seed(),
        budget,
        gamma,
        task: TaskInput::Subtasks(spec.components().iter().map(|(c, _)| *c).collect()),
        strategy,
        top_m: plan.top_m,
    };
    let out = run_compose(store, &req, &predictor.model)?;
    assert_eq!(out.report.env_steps, 0, "selection must not step the simulator");
    let (_, ret) = evaluate_artifact(layout, &out.artifact, spec);
    Ok((ret, out.report.seconds(), out.artifact))
}

/// Builds the library, then runs every configuration of the plan and writes
/// the CSV reports plus the chosen composed artifacts into `out`.
pub fn run_experiment(plan: &ExperimentPlan, library_dir: &Path, out: &Path, jobs: usize) -> Result<ExperimentOutput> {
    plan.validate()?;
    let mut store = PolicyStore::open(library_dir)?;
    build_library(plan, &mut store, jobs)?;
    let store = store;

    let composing = plan.strategies.iter().any(|s| *s != PlanStrategy::Tfs);
    let mut needed: Vec<(usize, Budget, f64, RewardSpec)> = Vec::new();
    for &size in &plan.sizes {
        for &budget in &plan.budgets {
            if composing {
                for &gamma in &plan.regimes {
                    for spec in &plan.specs {
                        needed.push((size, budget, gamma, spec.clone()));
                    }
                }
            }
            if let Some(sw) = &plan.sweep {
                needed.push((size, budget, sw.regime, sw.spec.clone()));
            }
        }
    }
    let mut predictors: BTreeMap<PredictorKey, TrainedPredictor> = BTreeMap::new();
    for (size, budget, gamma, spec) in needed {
        let key = (size, budget, gamma.to_bits(), spec.tag());
        if !predictors.contains_key(&key) {
            let p = train_predictor(&store, budget, &spec, size, gamma, &BoostingParams::default())?;
            predictors.insert(key, p);
        }
    }

    let mut configs = Vec::new();
    for &size in &plan.sizes {
        for &seed in &plan.seeds {
            for &budget in &plan.budgets {
                for &gamma in &plan.regimes {
                    for spec in &plan.specs {
                        configs.push((size, seed, budget, gamma, spec.clone()));
                    }
                }
            }
        }
    }

    let composed_dir = out.join("composed");
    let run_config = |(size, seed, budget, gamma, spec): &(usize, u64, Budget, f64, RewardSpec)| -> Result<(Vec<ResultRow>, Vec<PolicyArtifact>)> {
        let layout = store.get_layout(*size, *seed)?;
        let upper_bound = compute_upper_bound(&store, &layout, spec, *budget, *gamma)?;
        let mut rows = Vec::new();
        let mut artifacts = Vec::new();
        for &strategy in &plan.strategies {
            let (ret, seconds) = match strategy {
                PlanStrategy::Tfs => {
                    let t = run_tfs(&layout, spec, *budget, *gamma)?;
                    (t.ret, t.seconds)
                }
                other => {
                    let kind = match other {
                        PlanStrategy::Tc => StrategyKind::Tc,
                        PlanStrategy::Hc => StrategyKind::Hc,
                        _ => StrategyKind::Ec,
                    };
                    let predictor = &predictors[&(*size, *budget, gamma.to_bits(), spec.tag())];
                    let cfg = strategy_config(plan, kind, plan.k);
                    let (ret, secs, artifact) =
                        compose_row(&store, plan, predictor, &layout, *budget, *gamma, spec, cfg)?;
                    artifacts.push(artifact);
                    (ret, secs)
                }
            };
            rows.push(ResultRow {
                size: *size,
                seed: *seed,
                budget: *budget,
                regime: *gamma,
                spec: spec.clone(),
                strategy,
                ret,
                seconds,
                upper_bound,
            });
        }
        Ok((rows, artifacts))
    };

    let pool = thread_pool(jobs);
    let results: Vec<Result<(Vec<ResultRow>, Vec<PolicyArtifact>)>> =
        pool.install(|| configs.par_iter().map(run_config).collect());
    let mut rows = Vec::new();
    for r in results {
        let (mut rs, artifacts) = r?;
        rows.append(&mut rs);
        for a in artifacts {
            let dir = composed_dir.join(a.id());
            fs::create_dir_all(&dir)?;
            for (name, bytes) in serialize_artifact(&a) {
                fs::write(dir.join(name), bytes)?;
            }
        }
    }

    let mut sweep = Vec::new();
    if let Some(sw) = &plan.sweep {
        let mut jobs_list = Vec::new();
        for &size in &plan.sizes {
            for &seed in &plan.seeds {
                for &budget in &plan.budgets {
                    for &k in &sw.ks {
                        jobs_list.push((size, seed, budget, k));
                    }
                }
            }
        }
        let results: Vec<Result<SweepRow>> = pool.install(|| {
            jobs_list
                .par_iter()
                .map(|&(size, seed, budget, k)| {
                    let layout = store.get_layout(size, seed)?;
                    let predictor = &predictors[&(size, budget, sw.regime.to_bits(), sw.spec.tag())];
                    let cfg = strategy_config(plan, StrategyKind::Hc, k);
                    let (ret, seconds, _) =
                        compose_row(&store, plan, predictor, &layout, budget, sw.regime, &sw.spec, cfg)?;
                    Ok(SweepRow {
                        size,
                        seed,
                        budget,
                        k,
                        ret,
                        seconds,
                    })
                })
                .collect()
        });
        for r in results {
            sweep.push(r?);
        }
    }

    emit_report(&rows, &sweep, out)?;
    Ok(ExperimentOutput { rows, sweep })
}
