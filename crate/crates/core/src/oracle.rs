//! Brute-force ground truth for tiny layouts.
//!
//! Everything here is built directly on [`gridworld::step`](crate::gridworld::step)
//! and shares no code with the learner or the composer, so the tests that
//! compare against it cannot be circular.

use std::collections::{BTreeMap, VecDeque};

use crate::gridworld::{
    component_rewards, step, Action, GridLayout, RewardSpec, StateId, Terminal,
};

/// Hard limit on the number of enumerated action sequences.
pub const MAX_ENUMERATED_SEQUENCES: u64 = 1_000_000;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumerating 4^{0} action sequences exceeds the limit of {MAX_ENUMERATED_SEQUENCES}")]
    BudgetExceeded(u32),
    #[error("value iteration did not reach tolerance {tol} within {sweeps} sweeps (residual {residual})")]
    NotConverged { tol: f64, sweeps: usize, residual: f64 },
    #[error("gamma must lie in [0, 1], got {0}")]
    InvalidGamma(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub gamma: f64,
    pub q_star: BTreeMap<StateId, [f64; 4]>,
    pub v_star: BTreeMap<StateId, f64>,
    /// Sup-norm change of the last sweep.
    pub residual: f64,
    pub sweeps: usize,
}

impl ExactSolution {
    pub fn q(&self, s: StateId, a: Action) -> f64 {
        self.q_star[&s][a.index()]
    }
}

struct Edge {
    next: usize,
    reward: f64,
    absorbing: bool,
}

/// Every state reachable from the start, with its four outgoing edges.
/// The horizon is ignored: states are keyed without the step counter.
fn reachable_model(layout: &GridLayout, spec: &RewardSpec) -> (Vec<StateId>, Vec<[Edge; 4]>) {
    let start = layout.initial_state().key();
    let mut index: BTreeMap<StateId, usize> = BTreeMap::new();
    let mut keys = vec![start];
    index.insert(layout.state_id(&start), 0);
    let mut queue = VecDeque::from([0usize]);
    let mut raw: Vec<Vec<(StateId, f64, bool)>> = vec![Vec::new()];
    while let Some(i) = queue.pop_front() {
        let key = keys[i];
        let mut out = Vec::with_capacity(4);
        for a in Action::ALL {
            let (next, terminal) = step(layout, &key.with_steps(0), a);
            let absorbing = matches!(terminal, Terminal::ExitReached | Terminal::HazardHit);
            let r = spec.weigh(&component_rewards(layout, &key, &next.key(), terminal));
            let nid = layout.state_id(&next.key());
            if !index.contains_key(&nid) {
                index.insert(nid, keys.len());
                keys.push(next.key());
                raw.push(Vec::new());
                queue.push_back(keys.len() - 1);
            }
            out.push((nid, r, absorbing));
        }
        raw[i] = out;
    }
    let ids: Vec<StateId> = keys.iter().map(|k| layout.state_id(k)).collect();
    let edges = raw
        .into_iter()
        .map(|out| {
            let mut it = out.into_iter().map(|(nid, reward, absorbing)| Edge {
                next: index[&nid],
                reward,
                absorbing,
            });
            [it.next().unwrap(), it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]
        })
        .collect();
    (ids, edges)
}

/// Jacobi value iteration over every state reachable from the start.
///
/// Stops once a sweep changes no Q-value by `tol` or more. `gamma = 1` is
/// accepted for undiscounted cross-checks and fails with `NotConverged` if
/// values keep moving.
pub fn value_iteration(
    layout: &GridLayout,
    spec: &RewardSpec,
    gamma: f64,
    tol: f64,
) -> Result<ExactSolution, OracleError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(OracleError::InvalidGamma(gamma));
    }
    const MAX_SWEEPS: usize = 1_000_000;
    let (ids, edges) = reachable_model(layout, spec);
    let mut q = vec![[0.0f64; 4]; ids.len()];
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    while residual >= tol {
        if sweeps == MAX_SWEEPS {
            return Err(OracleError::NotConverged {
                tol,
                sweeps,
                residual,
            });
        }
        let v: Vec<f64> = q
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        residual = 0.0;
        for (s, out) in edges.iter().enumerate() {
            for (a, e) in out.iter().enumerate() {
                let future = if e.absorbing { 0.0 } else { gamma * v[e.next] };
                let new = e.reward + future;
                residual = f64::max(residual, (new - q[s][a]).abs());
                q[s][a] = new;
            }
        }
        sweeps += 1;
    }
    let q_star: BTreeMap<StateId, [f64; 4]> = ids.iter().copied().zip(q).collect();
    let v_star = q_star
        .iter()
        .map(|(&s, row)| (s, row.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
        .collect();
    Ok(ExactSolution {
        gamma,
        q_star,
        v_star,
        residual,
        sweeps,
    })
}

/// Outcome of executing one fixed action sequence from the start state.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOutcome {
    pub actions: Vec<Action>,
    /// Actions actually executed before the episode ended.
    pub executed: usize,
    pub terminal: Terminal,
    /// Undiscounted per-component totals.
    pub components: [f64; 4],
}

impl PathOutcome {
    pub fn score(&self, spec: &RewardSpec) -> f64 {
        spec.weigh(&self.components)
    }
}

/// Executes all `4^max_len` action sequences of length `max_len`. Actions
/// after the episode ends are ignored.
pub fn enumerate_paths(layout: &GridLayout, max_len: u32) -> Result<Vec<PathOutcome>, OracleError> {
    let count = 4u64
        .checked_pow(max_len)
        .filter(|&c| c <= MAX_ENUMERATED_SEQUENCES)
        .ok_or(OracleError::BudgetExceeded(max_len))?;
    let mut out = Vec::with_capacity(count as usize);
    for code in 0..count {
        let actions: Vec<Action> = (0..max_len)
            .map(|i| Action::ALL[((code >> (2 * i)) & 3) as usize])
            .collect();
        let mut state = layout.initial_state();
        let mut components = [0.0; 4];
        let mut terminal = Terminal::None;
        let mut executed = 0;
        for &a in &actions {
            let (next, t) = step(layout, &state, a);
            let r = component_rewards(layout, &state.key(), &next.key(), t);
            for k in 0..4 {
                components[k] += r[k];
            }
            executed += 1;
            terminal = t;
            state = next;
            if t.ends_episode() {
                break;
            }
        }
        out.push(PathOutcome {
            actions,
            executed,
            terminal,
            components,
        });
    }
    Ok(out)
}

/// Highest return under `spec` among the enumerated sequences.
pub fn best_return(paths: &[PathOutcome], spec: &RewardSpec) -> Option<f64> {
    paths.iter().map(|p| p.score(spec)).reduce(f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{Cell, Component, RoleCounts, STEP_COST};

    fn corridor() -> GridLayout {
        GridLayout::new(
            2,
            0,
            Cell::new(0, 0),
            Cell::new(0, 1),
            vec![],
            vec![],
            vec![],
            Cell::new(1, 0),
        )
        .unwrap()
    }

    #[test]
    fn gamma_zero_gives_immediate_rewards() {
        let l = generate_small(3, 4);
        let spec: RewardSpec = "path-gold-hazard-lever".parse().unwrap();
        let sol = value_iteration(&l, &spec, 0.0, 1e-13).unwrap();
        for (&s, row) in &sol.q_star {
            let key = l.decode_state(s).unwrap();
            for a in Action::ALL {
                let (n, t) = step(&l, &key.with_steps(0), a);
                let r = spec.weigh(&component_rewards(&l, &key, &n.key(), t));
                assert_eq!(row[a.index()], r);
            }
        }
    }

    #[test]
    fn corridor_value_by_hand() {
        let l = corridor();
        let spec = RewardSpec::single(Component::Path);
        let sol = value_iteration(&l, &spec, 0.9, 1e-13).unwrap();
        let start = l.state_id(&l.initial_state().key());
        // one step right: shaping 0.1 * (1 - 0) + bonus 10 - step cost
        assert!((sol.v_star[&start] - (0.1 + 10.0 - STEP_COST)).abs() < 1e-12);
        assert!(sol.residual < 1e-13);
    }

    #[test]
    fn bellman_residual_below_tolerance() {
        let l = generate_small(4, 9);
        let spec: RewardSpec = "path-gold".parse().unwrap();
        let sol = value_iteration(&l, &spec, 0.95, 1e-12).unwrap();
        for (&s, row) in &sol.q_star {
            let key = l.decode_state(s).unwrap();
            for a in Action::ALL {
                let (n, t) = step(&l, &key.with_steps(0), a);
                let r = spec.weigh(&component_rewards(&l, &key, &n.key(), t));
                let future = if t.is_absorbing() {
                    0.0
                } else {
                    0.95 * sol.v_star[&l.state_id(&n.key())]
                };
                assert!((row[a.index()] - (r + future)).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn single_step_enumeration() {
        let l = corridor();
        let paths = enumerate_paths(&l, 1).unwrap();
        assert_eq!(paths.len(), 4);
        let spec = RewardSpec::single(Component::Path);
        let best = paths
            .iter()
            .max_by(|a, b| a.score(&spec).total_cmp(&b.score(&spec)))
            .unwrap();
        assert_eq!(best.actions, vec![Action::Right]);
        assert_eq!(best.terminal, Terminal::ExitReached);
    }

    #[test]
    fn enumeration_budget() {
        let l = corridor();
        assert_eq!(enumerate_paths(&l, 11), Err(OracleError::BudgetExceeded(11)));
        assert!(enumerate_paths(&l, 9).is_ok());
    }

    #[test]
    fn oracles_agree_on_terminating_layouts() {
        for seed in 0..6 {
            let l = generate_small(3, seed);
            let spec: RewardSpec = "path-lever".parse().unwrap();
            let sol = value_iteration(&l, &spec, 1.0, 1e-12).unwrap();
            let start = l.state_id(&l.initial_state().key());
            let paths = enumerate_paths(&l, 8).unwrap();
            let best = paths
                .iter()
                .filter(|p| p.terminal.is_absorbing())
                .map(|p| p.score(&spec))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((best - sol.v_star[&start]).abs() < 1e-9, "seed {seed}");
        }
    }

    #[test]
    fn rejects_bad_gamma() {
        let l = corridor();
        let spec = RewardSpec::single(Component::Path);
        assert!(value_iteration(&l, &spec, 1.5, 1e-9).is_err());
    }

    fn generate_small(size: usize, seed: u64) -> GridLayout {
        crate::gridworld::generate_layout_any_size(
            size,
            seed,
            &RoleCounts {
                gold: 1,
                hazards: 1,
                blocks: 1,
            },
        )
        .unwrap()
    }
}
