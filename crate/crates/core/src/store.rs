//! On-disk policy library.
//!
//! Each artifact lives in its own directory named after its policy id:
//!
//! ```text
//! <root>/<policy_id>/manifest.json
//! <root>/<policy_id>/qtable.csv
//! <root>/<policy_id>/transitions.csv
//! <root>/<policy_id>/trajectories.jsonl
//! ```
//!
//! The manifest carries metadata, provenance and a SHA-256 checksum of each
//! data file, verified on every load. Layouts shared by the artifacts are
//! kept under `<root>/layouts/`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::composer::Regime;
use crate::gridworld::{Action, GridLayout, RewardSpec, StateId};
use crate::learner::{
    read_trajectories, write_trajectories, Budget, CheckpointKind, QTable, Trajectory,
    TransitionSet,
};

pub const FORMAT_VERSION: u32 = 1;
const LAYOUT_DIR: &str = "layouts";
const FILES: [&str; 3] = ["qtable.csv", "transitions.csv", "trajectories.jsonl"];

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("policy `{0}` not found")]
    NotFound(String),
    #[error("policy `{0}` already exists")]
    DuplicateId(String),
    #[error("artifact `{id}` is corrupt: {reason}")]
    CorruptArtifact { id: String, reason: String },
    #[error("layout n{size}-s{seed} already stored with different contents")]
    LayoutMismatch { size: usize, seed: u64 },
    #[error("invalid artifact: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Base,
    Composed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetadata {
    pub policy_id: String,
    /// Objective the policy was trained or composed for.
    pub objective: RewardSpec,
    pub description: String,
    pub size: usize,
    pub layout_seed: u64,
    pub budget: Budget,
    /// `None` for composed policies.
    pub checkpoint: Option<CheckpointKind>,
    pub gamma: f64,
    pub stage: Stage,
    /// Training episode the snapshot was taken after.
    pub episode: Option<usize>,
    pub training_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub members: Vec<String>,
    pub weights: Vec<f64>,
    pub regime: Regime,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyArtifact {
    pub metadata: PolicyMetadata,
    pub qtable: QTable,
    pub transitions: TransitionSet,
    pub trajectories: Vec<Trajectory>,
    /// Greedy return under the policy's own objective.
    pub empirical_return: f64,
    pub provenance: Option<Provenance>,
}

impl PolicyArtifact {
    pub fn id(&self) -> &str {
        &self.metadata.policy_id
    }

    /// Greedy action among the actions with a stored transition at `s`.
    pub fn supported_action(&self, s: StateId) -> Option<Action> {
        self.qtable.greedy_among(s, self.transitions.actions_at(s))
    }

    /// The action this policy takes when executed.
    ///
    /// Base policies act greedily on their full Q-table. Composed policies are
    /// only defined on their stored support; elsewhere they fall back to
    /// `Up`, the same choice an all-zero Q row makes.
    pub fn act(&self, s: StateId) -> Action {
        match self.metadata.stage {
            Stage::Base => self.qtable.greedy_action(s),
            Stage::Composed => self.supported_action(s).unwrap_or(Action::Up),
        }
    }

    fn validate(&self) -> Result<(), StoreError> {
        let m = &self.metadata;
        if m.policy_id.is_empty()
            || m.policy_id.starts_with('.')
            || m.policy_id == LAYOUT_DIR
            || !m
                .policy_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '*'))
        {
            return Err(StoreError::Invalid(format!("bad policy id `{}`", m.policy_id)));
        }
        if m.description.trim().is_empty() {
            return Err(StoreError::Invalid("empty description".into()));
        }
        if self.transitions.is_empty() {
            return Err(StoreError::Invalid("empty transition set".into()));
        }
        if !self.empirical_return.is_finite() {
            return Err(StoreError::Invalid("non-finite empirical return".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    metadata: PolicyMetadata,
    provenance: Option<Provenance>,
    empirical_return: f64,
    checksums: BTreeMap<String, String>,
}

/// Criteria for [`PolicyStore::list`]; `None` fields match anything.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArtifactFilter {
    pub budget: Option<Budget>,
    pub objective: Option<RewardSpec>,
    pub size: Option<usize>,
    pub layout_seed: Option<u64>,
    pub gamma: Option<f64>,
    pub stage: Option<Stage>,
    pub checkpoint: Option<CheckpointKind>,
}

impl ArtifactFilter {
    pub fn matches(&self, m: &PolicyMetadata) -> bool {
        self.budget.map_or(true, |b| b == m.budget)
            && self.objective.as_ref().map_or(true, |o| *o == m.objective)
            && self.size.map_or(true, |s| s == m.size)
            && self.layout_seed.map_or(true, |s| s == m.layout_seed)
            && self.gamma.map_or(true, |g| g == m.gamma)
            && self.stage.map_or(true, |s| s == m.stage)
            && self.checkpoint.map_or(true, |c| Some(c) == m.checkpoint)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Canonical bytes of every file of an artifact, manifest last.
pub fn serialize_artifact(a: &PolicyArtifact) -> Vec<(&'static str, Vec<u8>)> {
    let mut q = Vec::new();
    a.qtable.write_to(&mut q).expect("writing to memory");
    let mut t = Vec::new();
    a.transitions.write_csv(&mut t).expect("writing to memory");
    let mut j = Vec::new();
    write_trajectories(&a.trajectories, &mut j).expect("writing to memory");
    let data = [q, t, j];
    let checksums = FILES
        .iter()
        .zip(&data)
        .map(|(name, bytes)| (name.to_string(), sha256_hex(bytes)))
        .collect();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        metadata: a.metadata.clone(),
        provenance: a.provenance.clone(),
        empirical_return: a.empirical_return,
        checksums,
    };
    let mut m = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    m.push(b'\n');
    let mut out: Vec<(&'static str, Vec<u8>)> = FILES.iter().copied().zip(data).collect();
    out.push(("manifest.json", m));
    out
}

fn read_manifest(dir: &Path, id: &str) -> Result<Manifest, StoreError> {
    let corrupt = |reason: String| StoreError::CorruptArtifact {
        id: id.to_string(),
        reason,
    };
    let bytes = fs::read(dir.join("manifest.json"))?;
    let m: Manifest = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
    if m.format_version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format_version {}", m.format_version)));
    }
    if m.metadata.policy_id != id {
        return Err(corrupt(format!("manifest names `{}`", m.metadata.policy_id)));
    }
    Ok(m)
}

pub struct PolicyStore {
    root: PathBuf,
    index: BTreeMap<String, PolicyMetadata>,
}

impl PolicyStore {
    /// Opens (creating if needed) the library rooted at `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let mut index = BTreeMap::new();
        for entry in fs::read_dir(&root)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') || name == LAYOUT_DIR || !entry.file_type()?.is_dir() {
                continue;
            }
            if !entry.path().join("manifest.json").exists() {
                continue;
            }
            let m = read_manifest(&entry.path(), &name)?;
            index.insert(name, m.metadata);
        }
        Ok(PolicyStore { root, index })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn artifact_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    /// Writes the artifact into a temporary directory and renames it into place.
    pub fn put(&mut self, artifact: &PolicyArtifact) -> Result<String, StoreError> {
        artifact.validate()?;
        let id = artifact.id().to_string();
        let dest = self.artifact_dir(&id);
        if self.index.contains_key(&id) || dest.exists() {
            return Err(StoreError::DuplicateId(id));
        }
        let tmp = self.root.join(format!(".tmp-{id}"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        for (name, bytes) in serialize_artifact(artifact) {
            fs::write(tmp.join(name), bytes)?;
        }
        fs::rename(&tmp, &dest)?;
        self.index.insert(id.clone(), artifact.metadata.clone());
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Result<PolicyArtifact, StoreError> {
        if !self.index.contains_key(id) {
            return Err(StoreError::NotFound(id.to_string()));
        }
        let dir = self.artifact_dir(id);
        let corrupt = |reason: String| StoreError::CorruptArtifact {
            id: id.to_string(),
            reason,
        };
        let m = read_manifest(&dir, id)?;
        let mut data = Vec::with_capacity(FILES.len());
        for name in FILES {
            let bytes = fs::read(dir.join(name))?;
            let expected = m
                .checksums
                .get(name)
                .ok_or_else(|| corrupt(format!("no checksum for {name}")))?;
            if sha256_hex(&bytes) != *expected {
                return Err(corrupt(format!("checksum mismatch in {name}")));
            }
            data.push(bytes);
        }
        let qtable = QTable::read_from(&data[0][..]).map_err(|e| corrupt(e.to_string()))?;
        let transitions =
            TransitionSet::read_csv(&data[1][..]).map_err(|e| corrupt(e.to_string()))?;
        let trajectories = read_trajectories(&data[2][..]).map_err(|e| corrupt(e.to_string()))?;
        Ok(PolicyArtifact {
            metadata: m.metadata,
            qtable,
            transitions,
            trajectories,
            empirical_return: m.empirical_return,
            provenance: m.provenance,
        })
    }

    pub fn metadata(&self, id: &str) -> Option<&PolicyMetadata> {
        self.index.get(id)
    }

    /// Ids of matching artifacts, sorted.
    pub fn list(&self, filter: &ArtifactFilter) -> Vec<String> {
        self.index
            .values()
            .filter(|m| filter.matches(m))
            .map(|m| m.policy_id.clone())
            .collect()
    }

    /// Artifacts a predictor for `(budget, stage)` may see: base stage sees
    /// only base policies, the composed stage sees everything of that budget.
    pub fn visible_at_stage(&self, budget: Budget, stage: Stage) -> Vec<String> {
        self.index
            .values()
            .filter(|m| m.budget == budget && (stage == Stage::Composed || m.stage == Stage::Base))
            .map(|m| m.policy_id.clone())
            .collect()
    }

    fn layout_path(&self, size: usize, seed: u64) -> PathBuf {
        self.root.join(LAYOUT_DIR).join(format!("n{size}-s{seed}.json"))
    }

    /// Stores a layout; storing an identical layout again is a no-op.
    pub fn put_layout(&self, layout: &GridLayout) -> Result<(), StoreError> {
        let path = self.layout_path(layout.size(), layout.seed());
        let json = layout.to_json() + "\n";
        if path.exists() {
            if fs::read_to_string(&path)? == json {
                return Ok(());
            }
            return Err(StoreError::LayoutMismatch {
                size: layout.size(),
                seed: layout.seed(),
            });
        }
        fs::create_dir_all(path.parent().expect("layout dir"))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, json)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn get_layout(&self, size: usize, seed: u64) -> Result<GridLayout, StoreError> {
        let path = self.layout_path(size, seed);
        if !path.exists() {
            return Err(StoreError::NotFound(format!("layout n{size}-s{seed}")));
        }
        let text = fs::read_to_string(&path)?;
        GridLayout::from_json(&text).map_err(|e| StoreError::CorruptArtifact {
            id: format!("layout n{size}-s{seed}"),
            reason: e.to_string(),
        })
    }
}

/// Short tag for a discount factor, e.g. `g0` or `g099`.
pub fn gamma_tag(gamma: f64) -> String {
    format!("g{}", gamma.to_string().replace('.', ""))
}

/// Id of a trained base snapshot.
pub fn base_policy_id(
    size: usize,
    seed: u64,
    gamma: f64,
    budget: Budget,
    objective: &RewardSpec,
    checkpoint: CheckpointKind,
) -> String {
    format!(
        "n{size}-s{seed}-{}-{budget}-{}-{}",
        gamma_tag(gamma),
        objective.tag(),
        checkpoint.name()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{generate_layout, Component, RoleCounts};
    use crate::learner::{train_sarsa, TrainingConfig};

    pub(crate) fn fixture(budget: Budget, stage: Stage, objective: Component, tag: &str) -> PolicyArtifact {
        let layout = generate_layout(8, 3, &RoleCounts::default_for(8)).unwrap();
        let spec = RewardSpec::single(objective);
        let mut cfg = TrainingConfig::new(0.0, 200, 1);
        cfg.eval_every = 50;
        let out = train_sarsa(&layout, &spec, &cfg).unwrap();
        let cp = &out.checkpoints.best;
        PolicyArtifact {
            metadata: PolicyMetadata {
                policy_id: format!("{tag}-{}", objective.name()),
                objective: spec,
                description: format!("{} policy", objective.name()),
                size: 8,
                layout_seed: 3,
                budget,
                checkpoint: (stage == Stage::Base).then_some(CheckpointKind::Best),
                gamma: 0.0,
                stage,
                episode: Some(cp.episode),
                training_seed: Some(1),
            },
            qtable: cp.qtable.clone(),
            transitions: out.transitions.clone(),
            trajectories: vec![cp.trajectory.clone()],
            empirical_return: cp.eval_return,
            provenance: None,
        }
    }

    #[test]
    fn put_get_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = PolicyStore::open(dir.path()).unwrap();
        let a = fixture(Budget::X1, Stage::Base, Component::Gold, "a");
        let id = store.put(&a).unwrap();
        let back = store.get(&id).unwrap();
        assert_eq!(back, a);
        assert_eq!(serialize_artifact(&back), serialize_artifact(&a));
        // reopening rebuilds the index
        let again = PolicyStore::open(dir.path()).unwrap();
        assert_eq!(again.get(&id).unwrap(), a);
    }

    #[test]
    fn duplicate_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = PolicyStore::open(dir.path()).unwrap();
        let a = fixture(Budget::X1, Stage::Base, Component::Path, "a");
        store.put(&a).unwrap();
        assert!(matches!(store.put(&a), Err(StoreError::DuplicateId(_))));
        assert!(matches!(store.get("missing"), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn checksum_mismatch_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = PolicyStore::open(dir.path()).unwrap();
        let a = fixture(Budget::X1, Stage::Base, Component::Path, "a");
        let id = store.put(&a).unwrap();
        let path = store.artifact_dir(&id).join("qtable.csv");
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("999,1,1,1,1\n");
        fs::write(&path, text).unwrap();
        assert!(matches!(store.get(&id), Err(StoreError::CorruptArtifact { .. })));
    }

    #[test]
    fn list_and_visibility() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = PolicyStore::open(dir.path()).unwrap();
        assert!(store.visible_at_stage(Budget::X1, Stage::Base).is_empty());
        store.put(&fixture(Budget::X1, Stage::Base, Component::Gold, "a")).unwrap();
        store.put(&fixture(Budget::X1, Stage::Base, Component::Path, "b")).unwrap();
        store.put(&fixture(Budget::X10, Stage::Base, Component::Gold, "c")).unwrap();
        store.put(&fixture(Budget::X1, Stage::Composed, Component::Lever, "d")).unwrap();

        let gold_x1 = store.list(&ArtifactFilter {
            budget: Some(Budget::X1),
            objective: Some(RewardSpec::single(Component::Gold)),
            ..Default::default()
        });
        assert_eq!(gold_x1, vec!["a-gold"]);

        let base = store.visible_at_stage(Budget::X1, Stage::Base);
        assert_eq!(base, vec!["a-gold", "b-path"]);
        let composed = store.visible_at_stage(Budget::X1, Stage::Composed);
        assert_eq!(composed, vec!["a-gold", "b-path", "d-lever"]);
        assert!(base.iter().all(|id| composed.contains(id)));
    }

    #[test]
    fn layouts_are_stored_once() {
        let dir = tempfile::tempdir().unwrap();
        let store = PolicyStore::open(dir.path()).unwrap();
        let l = generate_layout(8, 4, &RoleCounts::default_for(8)).unwrap();
        store.put_layout(&l).unwrap();
        store.put_layout(&l).unwrap();
        assert_eq!(store.get_layout(8, 4).unwrap(), l);
        assert!(matches!(store.get_layout(8, 5), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn ids_and_tags() {
        assert_eq!(gamma_tag(0.0), "g0");
        assert_eq!(gamma_tag(0.99), "g099");
        let id = base_policy_id(8, 2, 0.99, Budget::X5, &RewardSpec::single(Component::Hazard), CheckpointKind::Mid);
        assert_eq!(id, "n8-s2-g099-x5-hazard-mid");
    }
}
