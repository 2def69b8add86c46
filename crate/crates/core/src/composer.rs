//! Offline Q-value composition over stored transitions.
//!
//! Two regimes: at `gamma = 0` member Q-values are immediate rewards and are
//! summed on the shared support; at `gamma > 0` the composite reward is
//! re-derived on the merged transition graph and solved by value iteration.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::gridworld::{Action, RewardSpec, StateId};
use crate::learner::{QTable, Transition, TransitionSet};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ComposeError {
    #[error("composition needs at least one member")]
    NoMembers,
    #[error("{weights} weights given for {members} members")]
    WeightLengthMismatch { members: usize, weights: usize },
    #[error("members disagree on the successor of ({state}, {action:?}): {first} vs {second}")]
    InconsistentDynamics {
        state: StateId,
        action: Action,
        first: StateId,
        second: StateId,
    },
    #[error("planning composition needs 0 < gamma < 1, got {0}")]
    InvalidGamma(f64),
    #[error("value iteration residual {residual} still above {tol} after {sweeps} sweeps")]
    NonConvergence { residual: f64, tol: f64, sweeps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    SupportLimited,
    PlanningEnabled,
}

/// One policy taking part in a composition.
#[derive(Debug, Clone, Copy)]
pub struct Member<'a> {
    pub id: &'a str,
    pub qtable: &'a QTable,
    pub transitions: &'a TransitionSet,
}

/// `(state, action)` pairs present in every member's transition set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SharedSupport {
    pub pairs: BTreeSet<(StateId, Action)>,
}

impl SharedSupport {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }
}

pub fn shared_support(members: &[&TransitionSet]) -> Result<SharedSupport, ComposeError> {
    let (first, rest) = members.split_first().ok_or(ComposeError::NoMembers)?;
    let pairs = first
        .iter()
        .map(|(s, a, _)| (s, a))
        .filter(|&(s, a)| rest.iter().all(|t| t.contains(s, a)))
        .collect();
    Ok(SharedSupport { pairs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionResult {
    pub q_new: BTreeMap<(StateId, Action), f64>,
    pub policy: BTreeMap<StateId, Action>,
    pub regime: Regime,
    pub weights: Vec<f64>,
    pub members: Vec<String>,
    /// Set when support-limited composition ran on members trained with `gamma != 0`.
    pub regime_warning: Option<String>,
    /// Value-iteration sweeps used (planning only).
    pub sweeps: usize,
}

impl CompositionResult {
    /// The pairs `q_new` is defined on.
    pub fn support(&self) -> impl Iterator<Item = (StateId, Action)> + '_ {
        self.q_new.keys().copied()
    }

    pub fn has_empty_support(&self) -> bool {
        self.q_new.is_empty()
    }

    /// Composed action at `s`, if the composition defines one.
    pub fn action(&self, s: StateId) -> Option<Action> {
        self.policy.get(&s).copied()
    }
}

fn check_weights(members: usize, w: &[f64]) -> Result<(), ComposeError> {
    if members == 0 {
        return Err(ComposeError::NoMembers);
    }
    if members != w.len() {
        return Err(ComposeError::WeightLengthMismatch {
            members,
            weights: w.len(),
        });
    }
    Ok(())
}

/// `Q_new(s,a) = sum_i w_i Q_i(s,a)` on the shared support, no backup.
pub fn compose_support_limited(
    members: &[Member<'_>],
    w: &[f64],
) -> Result<CompositionResult, ComposeError> {
    check_weights(members.len(), w)?;
    let sets: Vec<&TransitionSet> = members.iter().map(|m| m.transitions).collect();
    let support = shared_support(&sets)?;
    let mut q_new = BTreeMap::new();
    for &(s, a) in &support.pairs {
        let q: f64 = members
            .iter()
            .zip(w)
            .map(|(m, wi)| wi * m.qtable.value(s, a))
            .sum();
        q_new.insert((s, a), q);
    }
    let policy = extract_policy(&q_new);
    let off_regime: Vec<f64> = members
        .iter()
        .map(|m| m.qtable.gamma)
        .filter(|&g| g != 0.0)
        .collect();
    let regime_warning = (!off_regime.is_empty()).then(|| {
        format!(
            "support-limited composition applied to members trained with gamma {}",
            off_regime[0]
        )
    });
    Ok(CompositionResult {
        q_new,
        policy,
        regime: Regime::SupportLimited,
        weights: w.to_vec(),
        members: members.iter().map(|m| m.id.to_string()).collect(),
        regime_warning,
        sweeps: 0,
    })
}

/// Union of member transition graphs with composite rewards per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedGraph {
    pub edges: BTreeMap<(StateId, Action), Transition>,
    pub weights: Vec<f64>,
    pub members: Vec<String>,
    /// Grid side length, used for the sweep cap.
    pub size: usize,
}

impl MergedGraph {
    pub fn to_transition_set(&self) -> TransitionSet {
        let mut set = TransitionSet::new();
        for (&(s, a), t) in &self.edges {
            set.insert(s, a, *t).expect("merged edges are consistent");
        }
        set
    }
}

/// Merges member transitions; each edge gets `R_new = sum_i w_i R_i`, with
/// `R_i` recomputed from the stored component rewards under member `i`'s
/// own objective.
pub fn merge_graphs(members: &[Member<'_>], w: &[f64]) -> Result<MergedGraph, ComposeError> {
    check_weights(members.len(), w)?;
    let specs: Vec<&RewardSpec> = members.iter().map(|m| &m.qtable.spec).collect();
    let composite = |components: &[f64; 4]| -> f64 {
        specs
            .iter()
            .zip(w)
            .map(|(spec, wi)| wi * spec.weigh(components))
            .sum()
    };
    let mut edges: BTreeMap<(StateId, Action), Transition> = BTreeMap::new();
    for m in members {
        for (s, a, t) in m.transitions.iter() {
            match edges.get(&(s, a)) {
                Some(prev) if prev.next_state != t.next_state => {
                    return Err(ComposeError::InconsistentDynamics {
                        state: s,
                        action: a,
                        first: prev.next_state,
                        second: t.next_state,
                    });
                }
                Some(_) => {}
                None => {
                    edges.insert(
                        (s, a),
                        Transition {
                            reward: composite(&t.components),
                            ..*t
                        },
                    );
                }
            }
        }
    }
    Ok(MergedGraph {
        edges,
        weights: w.to_vec(),
        members: members.iter().map(|m| m.id.to_string()).collect(),
        size: members[0].qtable.size,
    })
}

/// Sup-norm accuracy targeted by [`compose_planning`].
pub const PLANNING_TOLERANCE: f64 = 1e-9;

/// Value iteration on the merged graph:
/// `Q(s,a) = R_new(s,a) + gamma * max_{a' known at s'} Q(s',a')`, with the
/// max over an empty set taken as 0.
///
/// Sweeps stop once the residual drops below `tol * (1 - gamma) / gamma`,
/// which bounds the distance to the fixed point by `tol`.
pub fn compose_planning(merged: &MergedGraph, gamma: f64) -> Result<CompositionResult, ComposeError> {
    compose_planning_with_tol(merged, gamma, PLANNING_TOLERANCE)
}

pub fn compose_planning_with_tol(
    merged: &MergedGraph,
    gamma: f64,
    tol: f64,
) -> Result<CompositionResult, ComposeError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(ComposeError::InvalidGamma(gamma));
    }
    // Dense indexing for the sweeps.
    let states: Vec<StateId> = {
        let mut v: Vec<StateId> = merged.edges.keys().map(|&(s, _)| s).collect();
        v.dedup();
        v
    };
    let index: BTreeMap<StateId, usize> = states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut edges: Vec<Vec<(usize, f64, Option<usize>)>> = vec![Vec::new(); states.len()];
    for (&(s, a), t) in &merged.edges {
        let succ = if t.terminal {
            None
        } else {
            index.get(&t.next_state).copied()
        };
        edges[index[&s]].push((a.index(), t.reward, succ));
    }

    let threshold = tol * (1.0 - gamma) / gamma;
    let max_reward = merged
        .edges
        .values()
        .map(|t| t.reward.abs())
        .fold(0.0, f64::max);
    // The first sweep moves Q by at most max_reward and each later sweep
    // shrinks the residual by gamma.
    let contraction_sweeps = if max_reward > threshold {
        ((threshold / max_reward).ln() / gamma.ln()).ceil() as usize + 2
    } else {
        2
    };
    let max_sweeps = (10 * merged.size * merged.size).max(contraction_sweeps);

    let mut q: Vec<[f64; 4]> = vec![[0.0; 4]; states.len()];
    let mut v = vec![0.0f64; states.len()];
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    while residual >= threshold {
        if sweeps == max_sweeps {
            return Err(ComposeError::NonConvergence {
                residual,
                tol: threshold,
                sweeps,
            });
        }
        residual = 0.0;
        for (i, out) in edges.iter().enumerate() {
            for &(a, r, succ) in out {
                let new = r + succ.map_or(0.0, |j| gamma * v[j]);
                residual = f64::max(residual, (new - q[i][a]).abs());
                q[i][a] = new;
            }
        }
        for (i, out) in edges.iter().enumerate() {
            v[i] = out
                .iter()
                .map(|&(a, _, _)| q[i][a])
                .fold(f64::NEG_INFINITY, f64::max);
        }
        sweeps += 1;
    }

    let mut q_new = BTreeMap::new();
    for (&(s, a), _) in &merged.edges {
        q_new.insert((s, a), q[index[&s]][a.index()]);
    }
    let policy = extract_policy(&q_new);
    Ok(CompositionResult {
        q_new,
        policy,
        regime: Regime::PlanningEnabled,
        weights: merged.weights.clone(),
        members: merged.members.clone(),
        regime_warning: None,
        sweeps,
    })
}

/// Greedy policy over the supported actions of each state; ties go to the
/// lowest action index.
pub fn extract_policy(q_new: &BTreeMap<(StateId, Action), f64>) -> BTreeMap<StateId, Action> {
    let mut policy: BTreeMap<StateId, (Action, f64)> = BTreeMap::new();
    for (&(s, a), &q) in q_new {
        match policy.get(&s) {
            Some(&(_, best)) if q <= best => {}
            _ => {
                policy.insert(s, (a, q));
            }
        }
    }
    policy.into_iter().map(|(s, (a, _))| (s, a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::Component;

    fn tset(pairs: &[(StateId, Action, StateId, [f64; 4])]) -> TransitionSet {
        let mut set = TransitionSet::new();
        for &(s, a, n, components) in pairs {
            set.insert(
                s,
                a,
                Transition {
                    next_state: n,
                    reward: components.iter().sum(),
                    terminal: false,
                    components,
                },
            )
            .unwrap();
        }
        set
    }

    fn qt(spec: Component, rows: &[(StateId, [f64; 4])]) -> QTable {
        let mut q = QTable::new(3, 0.0, RewardSpec::single(spec));
        q.entries.extend(rows.iter().copied());
        q
    }

    #[test]
    fn support_intersection() {
        let z = [0.0; 4];
        let a = tset(&[(0, Action::Up, 1, z), (0, Action::Down, 2, z)]);
        let b = tset(&[(0, Action::Down, 2, z)]);
        let s = shared_support(&[&a, &b]).unwrap();
        assert_eq!(s.pairs.into_iter().collect::<Vec<_>>(), vec![(0, Action::Down)]);
        assert_eq!(shared_support(&[&a]).unwrap().len(), 2);
        let c = tset(&[(5, Action::Left, 2, z)]);
        assert!(shared_support(&[&a, &c]).unwrap().is_empty());
        assert_eq!(shared_support(&[]), Err(ComposeError::NoMembers));
    }

    #[test]
    fn two_action_fixture() {
        let z = [0.0; 4];
        let t = tset(&[(7, Action::Up, 1, z), (7, Action::Down, 2, z)]);
        let q1 = qt(Component::Path, &[(7, [1.0, 0.0, 0.0, 0.0])]);
        let q2 = qt(Component::Gold, &[(7, [0.0, 2.0, 0.0, 0.0])]);
        let members = [
            Member { id: "a", qtable: &q1, transitions: &t },
            Member { id: "b", qtable: &q2, transitions: &t },
        ];
        let res = compose_support_limited(&members, &[1.0, 1.0]).unwrap();
        assert_eq!(res.q_new[&(7, Action::Up)], 1.0);
        assert_eq!(res.q_new[&(7, Action::Down)], 2.0);
        assert_eq!(res.action(7), Some(Action::Down));
        assert!(res.regime_warning.is_none());
        assert!(matches!(
            compose_support_limited(&members, &[1.0]),
            Err(ComposeError::WeightLengthMismatch { members: 2, weights: 1 })
        ));
    }

    #[test]
    fn identity_and_doubling() {
        let z = [0.0; 4];
        let t = tset(&[(3, Action::Left, 1, z), (3, Action::Right, 2, z), (4, Action::Up, 3, z)]);
        let q = qt(Component::Lever, &[(3, [9.0, 9.0, -1.0, 0.5]), (4, [0.25, 0.0, 0.0, 0.0])]);
        let one = compose_support_limited(&[Member { id: "x", qtable: &q, transitions: &t }], &[1.0]).unwrap();
        for ((s, a), v) in &one.q_new {
            assert_eq!(*v, q.value(*s, *a));
        }
        assert_eq!(one.q_new.len(), 3);
        // Up and Down are outside the support even though their Q is larger.
        assert_eq!(one.action(3), Some(Action::Right));
        let m = Member { id: "x", qtable: &q, transitions: &t };
        let two = compose_support_limited(&[m, m], &[1.0, 1.0]).unwrap();
        for (k, v) in &two.q_new {
            assert_eq!(*v, 2.0 * one.q_new[k]);
        }
    }

    #[test]
    fn regime_warning_for_discounted_members() {
        let z = [0.0; 4];
        let t = tset(&[(0, Action::Up, 1, z)]);
        let mut q = qt(Component::Path, &[]);
        q.gamma = 0.99;
        let res = compose_support_limited(&[Member { id: "x", qtable: &q, transitions: &t }], &[1.0]).unwrap();
        assert!(res.regime_warning.is_some());
    }

    #[test]
    fn merge_reweights_and_checks_dynamics() {
        let c = [1.0, 2.0, 3.0, 4.0];
        let a = tset(&[(0, Action::Up, 1, c)]);
        let b = tset(&[(0, Action::Up, 1, c), (1, Action::Down, 2, c)]);
        let qa = qt(Component::Path, &[]);
        let qb = qt(Component::Lever, &[]);
        let merged = merge_graphs(
            &[
                Member { id: "a", qtable: &qa, transitions: &a },
                Member { id: "b", qtable: &qb, transitions: &b },
            ],
            &[1.0, 0.5],
        )
        .unwrap();
        assert_eq!(merged.edges.len(), 2);
        assert_eq!(merged.edges[&(0, Action::Up)].reward, 1.0 + 0.5 * 4.0);

        let bad = tset(&[(0, Action::Up, 9, c)]);
        assert!(matches!(
            merge_graphs(
                &[
                    Member { id: "a", qtable: &qa, transitions: &a },
                    Member { id: "b", qtable: &qa, transitions: &bad },
                ],
                &[1.0, 1.0]
            ),
            Err(ComposeError::InconsistentDynamics { .. })
        ));
    }

    #[test]
    fn terminal_edge_gets_its_reward() {
        let mut set = TransitionSet::new();
        set.insert(
            0,
            Action::Right,
            Transition {
                next_state: 1,
                reward: 0.0,
                terminal: true,
                components: [3.5, 0.0, 0.0, 0.0],
            },
        )
        .unwrap();
        let q = qt(Component::Path, &[]);
        let merged = merge_graphs(&[Member { id: "a", qtable: &q, transitions: &set }], &[1.0]).unwrap();
        let res = compose_planning(&merged, 0.9).unwrap();
        assert_eq!(res.q_new[&(0, Action::Right)], 3.5);
    }

    #[test]
    fn unknown_successor_bootstraps_zero() {
        // 0 -Up-> 1 -Up-> 2 (unknown)
        let t = tset(&[(0, Action::Up, 1, [1.0, 0.0, 0.0, 0.0]), (1, Action::Up, 2, [2.0, 0.0, 0.0, 0.0])]);
        let q = qt(Component::Path, &[]);
        let merged = merge_graphs(&[Member { id: "a", qtable: &q, transitions: &t }], &[1.0]).unwrap();
        let res = compose_planning(&merged, 0.5).unwrap();
        assert!((res.q_new[&(1, Action::Up)] - 2.0).abs() < 1e-12);
        assert!((res.q_new[&(0, Action::Up)] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn ties_pick_lowest_action() {
        let mut q = BTreeMap::new();
        q.insert((0, Action::Up), 0.5);
        q.insert((0, Action::Down), 0.5);
        q.insert((1, Action::Right), -3.0);
        let p = extract_policy(&q);
        assert_eq!(p[&0], Action::Up);
        assert_eq!(p[&1], Action::Right);
    }

    #[test]
    fn planning_rejects_bad_gamma() {
        let q = qt(Component::Path, &[]);
        let t = tset(&[(0, Action::Up, 1, [0.0; 4])]);
        let merged = merge_graphs(&[Member { id: "a", qtable: &q, transitions: &t }], &[1.0]).unwrap();
        assert!(compose_planning(&merged, 0.0).is_err());
        assert!(compose_planning(&merged, 1.0).is_err());
    }
}
