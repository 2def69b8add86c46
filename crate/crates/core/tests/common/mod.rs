#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};

use policy_reuse::gridworld::{component_rewards, step, Action, GridLayout, RewardSpec, Terminal};
use policy_reuse::harness::{build_library, ExperimentPlan, PlanStrategy};
use policy_reuse::learner::{Budget, Transition, TransitionSet};
use policy_reuse::store::PolicyStore;
use policy_reuse::strategies::CompositionMode;

/// Fresh scratch directory under cargo's per-target tmp dir.
pub fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

pub fn spec(tag: &str) -> RewardSpec {
    tag.parse().unwrap()
}

pub fn small_plan(sizes: &[usize], seeds: &[u64], budgets: &[Budget], regimes: &[f64]) -> ExperimentPlan {
    ExperimentPlan {
        sizes: sizes.to_vec(),
        seeds: seeds.to_vec(),
        budgets: budgets.to_vec(),
        regimes: regimes.to_vec(),
        specs: vec![spec("path-gold")],
        strategies: vec![PlanStrategy::Tfs, PlanStrategy::Tc, PlanStrategy::Hc, PlanStrategy::Ec],
        objectives: policy_reuse::gridworld::Component::ALL.to_vec(),
        k: 3,
        top_m: 6,
        sweep: None,
        mode: CompositionMode::SupportLimited,
    }
}

/// 8x8, seed 0, X1, gamma 0: twelve base artifacts.
pub fn build_small_library(name: &str) -> (PathBuf, PolicyStore) {
    let dir = scratch(name);
    let mut store = PolicyStore::open(&dir).unwrap();
    build_library(&small_plan(&[8], &[0], &[Budget::X1], &[0.0]), &mut store, 1).unwrap();
    (dir, store)
}

/// Every reachable `(state, action)` pair with its transition, rewards
/// weighted by `spec`. Mirrors an agent that tried every action everywhere.
pub fn full_coverage(layout: &GridLayout, spec: &RewardSpec) -> TransitionSet {
    let start = layout.initial_state().key();
    let mut seen = BTreeMap::new();
    seen.insert(layout.state_id(&start), ());
    let mut queue = VecDeque::from([start]);
    let mut set = TransitionSet::new();
    while let Some(key) = queue.pop_front() {
        let s = layout.state_id(&key);
        for a in Action::ALL {
            let (next, terminal) = step(layout, &key.with_steps(0), a);
            let components = component_rewards(layout, &key, &next.key(), terminal);
            let nid = layout.state_id(&next.key());
            let absorbing = matches!(terminal, Terminal::ExitReached | Terminal::HazardHit);
            set.insert(
                s,
                a,
                Transition {
                    next_state: nid,
                    reward: spec.weigh(&components),
                    terminal: absorbing,
                    components,
                },
            )
            .unwrap();
            if !absorbing && seen.insert(nid, ()).is_none() {
                queue.push_back(next.key());
            }
        }
    }
    set
}
