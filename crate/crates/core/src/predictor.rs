//! Histogram-binned gradient-boosted regression trees (squared error).
//!
//! Features are bucketed once into per-feature quantile bins; each boosting
//! round fits a depth-limited tree to the current residuals using bin
//! histograms of residual sums.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embedding::{self, reference_states, DEFAULT_GAMMA_PSI};
use crate::error::Result;
use crate::gridworld::{GridLayout, RewardSpec};
use crate::learner::Budget;
use crate::store::{PolicyStore, Stage};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PredictorError {
    #[error("need at least 2 examples, got {0}")]
    TooFewExamples(usize),
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("all labels are equal; only a constant model can be fitted")]
    DegenerateData,
    #[error("non-finite value in training data")]
    NonFinite,
    #[error("invalid hyperparameters: {0}")]
    InvalidParams(String),
    #[error("no visible policies to train on")]
    EmptyStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostingParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub max_bins: usize,
    pub min_samples_leaf: usize,
    /// Return a constant model instead of `DegenerateData` when labels are all equal.
    pub allow_degenerate: bool,
}

impl Default for BoostingParams {
    fn default() -> Self {
        BoostingParams {
            rounds: 100,
            max_depth: 4,
            learning_rate: 0.1,
            max_bins: 255,
            min_samples_leaf: 2,
            allow_degenerate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub policy_id: String,
    pub embedding: Vec<f64>,
    pub label: f64,
}

/// Tree node in a flat array. Internal nodes send samples whose bin is
/// `<= bin` to `left`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        bin: u16,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn eval(&self, bins: &[u16]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    bin,
                    left,
                    right,
                } => i = if bins[*feature] <= *bin { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub dim: usize,
    /// Per feature, ascending cut points: bin `b` holds values in
    /// `(edges[b-1], edges[b]]`.
    pub bin_edges: Vec<Vec<f64>>,
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub base_score: f64,
    /// True when the labels were all equal and the model is constant.
    pub degenerate: bool,
    /// Training mean squared error after 0, 1, ..., `trees.len()` rounds.
    pub loss_history: Vec<f64>,
}

fn bin_of(edges: &[f64], x: f64) -> u16 {
    edges.partition_point(|&e| e < x) as u16
}

/// Midpoints between consecutive distinct quantiles of the sorted values.
fn quantile_edges(values: &[f64], max_bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() <= 1 {
        return Vec::new();
    }
    let candidates: Vec<f64> = if sorted.len() <= max_bins {
        sorted
    } else {
        (0..max_bins)
            .map(|i| sorted[i * (sorted.len() - 1) / (max_bins - 1)])
            .collect()
    };
    let mut edges: Vec<f64> = candidates.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    edges.dedup();
    edges
}

impl BoostedModel {
    /// A model that predicts `value` everywhere; flagged degenerate.
    pub fn constant(dim: usize, value: f64) -> Self {
        BoostedModel {
            dim,
            bin_edges: vec![Vec::new(); dim],
            trees: Vec::new(),
            learning_rate: 0.0,
            base_score: value,
            degenerate: true,
            loss_history: vec![0.0],
        }
    }

    pub fn bins(&self, x: &[f64]) -> Vec<u16> {
        x.iter()
            .zip(&self.bin_edges)
            .map(|(&v, edges)| bin_of(edges, v))
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, PredictorError> {
        if x.len() != self.dim {
            return Err(PredictorError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let bins = self.bins(x);
        Ok(self.base_score + self.learning_rate * self.trees.iter().map(|t| t.eval(&bins)).sum::<f64>())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

struct Grower<'a> {
    bins: &'a [Vec<u16>],
    n_bins: Vec<usize>,
    params: &'a BoostingParams,
}

impl Grower<'_> {
    fn grow(&self, rows: &[usize], residual: &[f64]) -> Tree {
        let mut nodes = Vec::new();
        self.node(rows, residual, 0, &mut nodes);
        Tree { nodes }
    }

    fn node(&self, rows: &[usize], residual: &[f64], depth: usize, nodes: &mut Vec<Node>) -> usize {
        let idx = nodes.len();
        let sum: f64 = rows.iter().map(|&r| residual[r]).sum();
        let count = rows.len() as f64;
        nodes.push(Node::Leaf { value: sum / count });
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_samples_leaf {
            return idx;
        }
        let Some((feature, bin)) = self.best_split(rows, residual, sum) else {
            return idx;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| self.bins[r][feature] <= bin);
        let left = self.node(&left_rows, residual, depth + 1, nodes);
        let right = self.node(&right_rows, residual, depth + 1, nodes);
        nodes[idx] = Node::Split {
            feature,
            bin,
            left,
            right,
        };
        idx
    }

    /// Split maximizing the SSE reduction `SL^2/nL + SR^2/nR - S^2/n`.
    fn best_split(&self, rows: &[usize], residual: &[f64], total: f64) -> Option<(usize, u16)> {
        let n = rows.len();
        let parent = total * total / n as f64;
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best: Option<(f64, usize, u16)> = None;
        for (f, &nb) in self.n_bins.iter().enumerate() {
            if nb < 2 {
                continue;
            }
            let mut sums = vec![0.0; nb];
            let mut counts = vec![0usize; nb];
            for &r in rows {
                let b = self.bins[r][f] as usize;
                sums[b] += residual[r];
                counts[b] += 1;
            }
            let (mut sl, mut nl) = (0.0, 0usize);
            for b in 0..nb - 1 {
                sl += sums[b];
                nl += counts[b];
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf || counts[b] == 0 {
                    continue;
                }
                let sr = total - sl;
                let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - parent;
                if gain > 1e-12 && best.map_or(true, |(g, _, _)| gain > g) {
                    best = Some((gain, f, b as u16));
                }
            }
        }
        best.map(|(_, f, b)| (f, b))
    }
}

fn mse(labels: &[f64], pred: &[f64]) -> f64 {
    labels
        .iter()
        .zip(pred)
        .map(|(y, p)| (y - p) * (y - p))
        .sum::<f64>()
        / labels.len() as f64
}

/// Fits a boosted ensemble. Deterministic in example order and parameters.
pub fn fit(examples: &[TrainingExample], params: &BoostingParams) -> Result<BoostedModel, PredictorError> {
    if examples.len() < 2 {
        return Err(PredictorError::TooFewExamples(examples.len()));
    }
    if params.max_bins < 2 || params.max_bins > u16::MAX as usize || !(params.learning_rate > 0.0) {
        return Err(PredictorError::InvalidParams(
            "need 2 <= max_bins <= 65535 and learning_rate > 0".into(),
        ));
    }
    let dim = examples[0].embedding.len();
    for e in examples {
        if e.embedding.len() != dim {
            return Err(PredictorError::DimensionMismatch {
                expected: dim,
                got: e.embedding.len(),
            });
        }
        if !e.label.is_finite() || e.embedding.iter().any(|v| !v.is_finite()) {
            return Err(PredictorError::NonFinite);
        }
    }
    let labels: Vec<f64> = examples.iter().map(|e| e.label).collect();
    let base_score = labels.iter().sum::<f64>() / labels.len() as f64;
    let degenerate = labels.iter().all(|&y| y == labels[0]);
    if degenerate && !params.allow_degenerate {
        return Err(PredictorError::DegenerateData);
    }

    let bin_edges: Vec<Vec<f64>> = (0..dim)
        .map(|f| {
            let col: Vec<f64> = examples.iter().map(|e| e.embedding[f]).collect();
            quantile_edges(&col, params.max_bins)
        })
        .collect();
    let mut model = BoostedModel {
        dim,
        bin_edges,
        trees: Vec::new(),
        learning_rate: params.learning_rate,
        base_score: if degenerate { labels[0] } else { base_score },
        degenerate,
        loss_history: Vec::new(),
    };
    let mut pred = vec![model.base_score; labels.len()];
    model.loss_history.push(mse(&labels, &pred));
    if degenerate {
        return Ok(model);
    }

    let bins: Vec<Vec<u16>> = examples.iter().map(|e| model.bins(&e.embedding)).collect();
    let grower = Grower {
        bins: &bins,
        n_bins: model.bin_edges.iter().map(|e| e.len() + 1).collect(),
        params,
    };
    let rows: Vec<usize> = (0..labels.len()).collect();
    for _ in 0..params.rounds {
        let residual: Vec<f64> = labels.iter().zip(&pred).map(|(y, p)| y - p).collect();
        let tree = grower.grow(&rows, &residual);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += params.learning_rate * tree.eval(&bins[i]);
        }
        model.trees.push(tree);
        model.loss_history.push(mse(&labels, &pred));
    }
    Ok(model)
}

/// Candidate with the highest prediction; ties go to the smallest id.
pub fn select_best<'a>(
    candidates: &'a [(String, Vec<f64>)],
    model: &BoostedModel,
) -> Result<Option<&'a str>, PredictorError> {
    let mut best: Option<(f64, &str)> = None;
    for (id, x) in candidates {
        let score = model.predict(x)?;
        let better = match best {
            None => true,
            Some((s, bid)) => score > s || (score == s && id.as_str() < bid),
        };
        if better {
            best = Some((score, id));
        }
    }
    Ok(best.map(|(_, id)| id))
}

/// Training examples for one `(stage, budget)` predictor scored under `spec`.
///
/// Only artifacts from [`PolicyStore::visible_at_stage`] contribute, further
/// narrowed to one grid size and task discount. Labels re-score each
/// artifact's stored trajectories under `spec` (their mean, when several are
/// stored). Embeddings use the default settings and the on-disk cache.
pub fn build_training_set(
    store: &PolicyStore,
    stage: Stage,
    budget: Budget,
    spec: &RewardSpec,
    size: usize,
    gamma: f64,
) -> Result<Vec<TrainingExample>> {
    let mut layouts: BTreeMap<u64, GridLayout> = BTreeMap::new();
    let mut out = Vec::new();
    for id in store.visible_at_stage(budget, stage) {
        let meta = store.metadata(&id).expect("listed ids are indexed");
        if meta.size != size || meta.gamma != gamma {
            continue;
        }
        if !layouts.contains_key(&meta.layout_seed) {
            let layout = store.get_layout(size, meta.layout_seed)?;
            layouts.insert(meta.layout_seed, layout);
        }
        let layout = &layouts[&meta.layout_seed];
        let refs = reference_states(layout);
        let horizon = layout.horizon();
        let artifact = store.get(&id)?;
        let emb = match embedding::load_cached(store, &id, DEFAULT_GAMMA_PSI, horizon, &refs.id) {
            Some(e) => e,
            None => {
                let e = embedding::embed_policy(&artifact, layout, &refs, DEFAULT_GAMMA_PSI, horizon)?;
                embedding::save_cached(store, &id, &e)?;
                e
            }
        };
        let label = if artifact.trajectories.is_empty() {
            artifact.empirical_return
        } else {
            artifact.trajectories.iter().map(|t| t.score(spec)).sum::<f64>()
                / artifact.trajectories.len() as f64
        };
        out.push(TrainingExample {
            policy_id: id,
            embedding: emb.values,
            label,
        });
    }
    if out.is_empty() {
        return Err(PredictorError::EmptyStage.into());
    }
    Ok(out)
}
