//! Rule-based task decomposition and TF-IDF retrieval over policy
//! descriptions.

use std::collections::{BTreeMap, BTreeSet};

use crate::gridworld::{Component, RewardSpec};
use crate::learner::{Budget, CheckpointKind};

/// Default number of candidates kept per subtask.
pub const DEFAULT_TOP_M: usize = 6;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("no subtask recognized in `{0}`")]
    NoSubtasksRecognized(String),
    #[error("no policies to retrieve from")]
    EmptyLibrary,
    #[error("top_m must be at least 1")]
    ZeroTopM,
}

/// Keywords that map an instruction clause to an objective.
pub fn lexicon(c: Component) -> &'static [&'static str] {
    match c {
        Component::Path => &["exit", "fastest", "reach", "path", "shortest"],
        Component::Gold => &["gold", "collect", "coin", "treasure"],
        Component::Hazard => &["hazard", "avoid", "safe", "danger", "trap"],
        Component::Lever => &["lever", "switch", "pull"],
    }
}

/// Canonical phrase describing what a single-objective policy does.
pub fn objective_phrase(c: Component) -> &'static str {
    match c {
        Component::Path => "reach the exit quickly along the shortest path",
        Component::Gold => "collect as much gold treasure as possible before the exit",
        Component::Hazard => "avoid hazards and traps, stay safe",
        Component::Lever => "pull the lever switch before reaching the exit",
    }
}

/// Metadata description of a trained policy.
pub fn describe(
    objective: &RewardSpec,
    size: usize,
    layout_seed: u64,
    budget: Budget,
    checkpoint: Option<CheckpointKind>,
) -> String {
    let what: Vec<&str> = objective
        .components()
        .iter()
        .map(|(c, _)| objective_phrase(*c))
        .collect();
    let stage = match checkpoint {
        Some(cp) => format!("{} checkpoint", cp.name()),
        None => "composed".to_string(),
    };
    format!(
        "{}; {size}x{size} grid, layout seed {layout_seed}, budget {budget}, {stage}",
        what.join(" and ")
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subtask {
    pub tag: Component,
    pub phrase: String,
}

impl Subtask {
    /// Subtask for an explicitly named objective.
    pub fn from_tag(tag: Component) -> Self {
        Subtask {
            tag,
            phrase: objective_phrase(tag).to_string(),
        }
    }

    /// Retrieval query: the source phrase plus the objective's keywords.
    pub fn query(&self) -> String {
        format!("{} {}", self.phrase, lexicon(self.tag).join(" "))
    }
}

/// Lowercase alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn clauses(instruction: &str) -> Vec<String> {
    let lower = instruction.to_lowercase();
    let mut parts = vec![lower];
    for sep in [" and ", ",", ";", " then "] {
        parts = parts
            .iter()
            .flat_map(|p| p.split(sep).map(str::to_string).collect::<Vec<_>>())
            .collect();
    }
    parts
        .into_iter()
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

/// One subtask per objective whose keywords occur in the instruction, in
/// the order path, gold, hazard, lever. The phrase is the first clause that
/// mentions the objective.
pub fn decompose(instruction: &str) -> Result<Vec<Subtask>, RetrievalError> {
    let clauses = clauses(instruction);
    let mut out = Vec::new();
    for c in Component::ALL {
        let words = lexicon(c);
        if let Some(clause) = clauses
            .iter()
            .find(|cl| tokenize(cl).iter().any(|t| words.contains(&t.as_str())))
        {
            out.push(Subtask {
                tag: c,
                phrase: clause.clone(),
            });
        }
    }
    if out.is_empty() {
        return Err(RetrievalError::NoSubtasksRecognized(instruction.to_string()));
    }
    Ok(out)
}

pub type SparseVector = BTreeMap<String, f64>;

fn normalize(mut v: SparseVector) -> SparseVector {
    let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.values_mut() {
            *x /= norm;
        }
    }
    v
}

fn term_counts(text: &str) -> SparseVector {
    let mut tf = SparseVector::new();
    for t in tokenize(text) {
        *tf.entry(t).or_insert(0.0) += 1.0;
    }
    tf
}

/// L2-normalized term frequencies.
pub fn embed_text(text: &str) -> SparseVector {
    normalize(term_counts(text))
}

pub fn cosine(a: &SparseVector, b: &SparseVector) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small
        .iter()
        .filter_map(|(t, x)| large.get(t).map(|y| x * y))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// In-memory TF-IDF index with smoothed idf `ln((1 + D) / (1 + df)) + 1`.
#[derive(Debug, Clone)]
pub struct TfIdfIndex {
    idf: BTreeMap<String, f64>,
    default_idf: f64,
    docs: Vec<(String, SparseVector)>,
}

impl TfIdfIndex {
    pub fn build(docs: &[(String, String)]) -> Self {
        let d = docs.len() as f64;
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for (_, text) in docs {
            for t in term_counts(text).into_keys() {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let idf = df
            .into_iter()
            .map(|(t, n)| (t, ((1.0 + d) / (1.0 + n as f64)).ln() + 1.0))
            .collect();
        let mut index = TfIdfIndex {
            idf,
            default_idf: (1.0 + d).ln() + 1.0,
            docs: Vec::new(),
        };
        index.docs = docs
            .iter()
            .map(|(id, text)| (id.clone(), index.vectorize(text)))
            .collect();
        index
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn vectorize(&self, text: &str) -> SparseVector {
        let mut v = term_counts(text);
        for (t, x) in v.iter_mut() {
            *x *= self.idf.get(t).copied().unwrap_or(self.default_idf);
        }
        normalize(v)
    }

    /// All documents by decreasing cosine to `query`, ties by id.
    pub fn rank(&self, query: &str) -> Vec<(String, f64)> {
        let q = self.vectorize(query);
        let mut scored: Vec<(String, f64)> = self
            .docs
            .iter()
            .map(|(id, v)| (id.clone(), cosine(&q, v)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.dedup_by(|a, b| a.0 == b.0);
        scored
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateList {
    pub subtask: Subtask,
    pub ranked: Vec<(String, f64)>,
}

impl CandidateList {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ranked.iter().map(|(id, _)| id.as_str())
    }
}

/// The `top_m` most similar documents for a subtask.
pub fn retrieve(subtask: &Subtask, index: &TfIdfIndex, top_m: usize) -> Result<CandidateList, RetrievalError> {
    if top_m == 0 {
        return Err(RetrievalError::ZeroTopM);
    }
    if index.is_empty() {
        return Err(RetrievalError::EmptyLibrary);
    }
    let mut ranked = index.rank(&subtask.query());
    ranked.truncate(top_m);
    Ok(CandidateList {
        subtask: subtask.clone(),
        ranked,
    })
}

/// `P_base`: union of all candidate lists.
pub fn base_pool(lists: &[CandidateList]) -> BTreeSet<String> {
    lists
        .iter()
        .flat_map(|l| l.ids().map(str::to_string))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decomposes_example_instruction() {
        let s = decompose("Find the fastest exit and collect as much gold as possible").unwrap();
        let tags: Vec<Component> = s.iter().map(|t| t.tag).collect();
        assert_eq!(tags, vec![Component::Path, Component::Gold]);
        assert_eq!(s[0].phrase, "find the fastest exit");
        assert_eq!(s[1].phrase, "collect as much gold as possible");
        let lever = decompose("pull the lever").unwrap();
        assert_eq!(lever.len(), 1);
        assert_eq!(lever[0].tag, Component::Lever);
        assert!(matches!(
            decompose("juggle flaming swords"),
            Err(RetrievalError::NoSubtasksRecognized(_))
        ));
    }

    #[test]
    fn decomposition_is_deduplicated_and_ordered() {
        let s = decompose("pull the switch, then avoid traps; grab gold and more gold").unwrap();
        let tags: Vec<Component> = s.iter().map(|t| t.tag).collect();
        assert_eq!(tags, vec![Component::Gold, Component::Hazard, Component::Lever]);
    }

    #[test]
    fn text_embedding_is_scale_invariant() {
        assert_eq!(embed_text("gold gold"), embed_text("gold"));
        assert_eq!(embed_text("Avoid the hazard"), embed_text("avoid the hazard"));
        let v = embed_text("a b b");
        let norm: f64 = v.values().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    fn four_docs() -> Vec<(String, String)> {
        Component::ALL
            .iter()
            .map(|&c| (c.name().to_string(), objective_phrase(c).to_string()))
            .collect()
    }

    #[test]
    fn hazard_query_ranks_hazard_first() {
        let idx = TfIdfIndex::build(&four_docs());
        let ranked = idx.rank("avoid hazards");
        assert_eq!(ranked[0].0, "hazard");
        // By hand: "avoid" and "hazards" occur only in the hazard document
        // (df = 1), so the query vector is (1, 1)/sqrt(2) in idf units and
        // the other three documents share no term with it.
        let idf1 = (5.0f64 / 2.0).ln() + 1.0;
        let doc_terms = ["avoid", "hazards", "and", "traps", "stay", "safe"];
        let doc_norm = (doc_terms.len() as f64 * idf1 * idf1).sqrt();
        let expected = 2.0 * idf1 * idf1 / (doc_norm * (2.0f64).sqrt() * idf1);
        assert!((ranked[0].1 - expected).abs() < 1e-12);
        assert!(ranked[1..].iter().all(|(_, s)| *s == 0.0));
    }

    #[test]
    fn retrieve_top_m_and_ties() {
        let idx = TfIdfIndex::build(&four_docs());
        let gold = retrieve(&Subtask::from_tag(Component::Gold), &idx, 1).unwrap();
        assert_eq!(gold.ranked.len(), 1);
        assert_eq!(gold.ranked[0].0, "gold");
        let all = retrieve(&Subtask::from_tag(Component::Gold), &idx, 10).unwrap();
        assert_eq!(all.ranked.len(), 4);
        assert!(all.ranked.windows(2).all(|w| w[0].1 >= w[1].1));

        let twins = TfIdfIndex::build(&[
            ("b".to_string(), "pull the lever".to_string()),
            ("a".to_string(), "pull the lever".to_string()),
        ]);
        let r = retrieve(&Subtask::from_tag(Component::Lever), &twins, 2).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(
            retrieve(&Subtask::from_tag(Component::Lever), &TfIdfIndex::build(&[]), 2),
            Err(RetrievalError::EmptyLibrary)
        );
    }

    #[test]
    fn pool_is_union() {
        let list = |ids: &[&str]| CandidateList {
            subtask: Subtask::from_tag(Component::Path),
            ranked: ids.iter().map(|i| (i.to_string(), 0.5)).collect(),
        };
        let p = base_pool(&[list(&["A", "B"]), list(&["B", "C"])]);
        assert_eq!(p.into_iter().collect::<Vec<_>>(), vec!["A", "B", "C"]);
        assert_eq!(base_pool(&[list(&["x", "y", "z"]), list(&["u", "v", "w"])]).len(), 6);
    }

    #[test]
    fn descriptions_mention_objective() {
        let d = describe(&RewardSpec::single(Component::Hazard), 8, 3, Budget::X5, Some(CheckpointKind::Low));
        assert!(d.starts_with("avoid hazards"));
        assert!(d.contains("budget x5"));
        assert!(d.contains("low checkpoint"));
    }
}
