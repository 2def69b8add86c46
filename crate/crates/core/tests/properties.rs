mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use policy_reuse::composer::{compose_support_limited, shared_support, Member};
use policy_reuse::gridworld::{
    check_feasible, component_rewards, generate_layout, step, Action, Component, RewardSpec, RoleCounts,
};
use policy_reuse::learner::{QTable, Transition, TransitionSet};
use policy_reuse::predictor::{fit, BoostingParams, TrainingExample};
use policy_reuse::retrieval::{cosine, embed_text};

fn action() -> impl Strategy<Value = Action> {
    (0usize..4).prop_map(|i| Action::from_index(i).unwrap())
}

fn components() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-20.0f64..20.0)
}

/// Transition records over a handful of states; successors are a function
/// of the pair so that independently drawn sets agree on dynamics.
fn transition_set() -> impl Strategy<Value = TransitionSet> {
    prop::collection::btree_map((0u64..12, action()), components(), 0..30).prop_map(|m| {
        let mut set = TransitionSet::new();
        for ((s, a), c) in m {
            let t = Transition {
                next_state: (s * 4 + a.index() as u64) % 13,
                reward: c.iter().sum(),
                terminal: s == 11,
                components: c,
            };
            set.insert(s, a, t).unwrap();
        }
        set
    })
}

fn qtable(spec: RewardSpec) -> impl Strategy<Value = QTable> {
    prop::collection::btree_map(0u64..12, prop::array::uniform4(-50.0f64..50.0), 0..12).prop_map(move |entries| QTable {
        size: 4,
        gamma: 0.0,
        spec: spec.clone(),
        entries,
    })
}

fn members() -> impl Strategy<Value = Vec<(QTable, TransitionSet)>> {
    prop::collection::vec(
        (qtable(RewardSpec::single(Component::Path)), transition_set()),
        1..4,
    )
}

fn as_members(m: &[(QTable, TransitionSet)]) -> Vec<Member<'_>> {
    m.iter()
        .map(|(q, t)| Member {
            id: "m",
            qtable: q,
            transitions: t,
        })
        .collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spec_weighting_is_linear(c in components(), w in prop::array::uniform4(-3.0f64..3.0)) {
        let spec = RewardSpec::new(Component::ALL.iter().copied().zip(w).collect()).unwrap();
        let expected: f64 = (0..4).map(|i| w[i] * c[i]).sum();
        prop_assert!(close(spec.weigh(&c), expected));
        let parts: f64 = Component::ALL
            .iter()
            .zip(w)
            .map(|(&comp, wi)| wi * RewardSpec::single(comp).weigh(&c))
            .sum();
        prop_assert!(close(spec.weigh(&c), parts));
    }

    #[test]
    fn composite_rewards_decompose_along_real_steps(seed in 0u64..50, moves in prop::collection::vec(action(), 1..40)) {
        let layout = generate_layout(8, seed, &RoleCounts::default_for(8)).unwrap();
        let whole: RewardSpec = "path-gold-hazard-lever".parse().unwrap();
        let mut state = layout.initial_state();
        for a in moves {
            let (next, terminal) = step(&layout, &state, a);
            let c = component_rewards(&layout, &state.key(), &next.key(), terminal);
            let sum: f64 = Component::ALL.iter().map(|&k| RewardSpec::single(k).weigh(&c)).sum();
            prop_assert!(close(whole.weigh(&c), sum));
            if terminal.ends_episode() {
                break;
            }
            state = next;
        }
    }

    #[test]
    fn shared_support_is_the_exact_intersection(sets in prop::collection::vec(transition_set(), 1..4)) {
        let refs: Vec<&TransitionSet> = sets.iter().collect();
        let support = shared_support(&refs).unwrap();
        for &(s, a) in &support.pairs {
            prop_assert!(sets.iter().all(|t| t.contains(s, a)));
        }
        for (s, a, _) in sets[0].iter() {
            let everywhere = sets.iter().all(|t| t.contains(s, a));
            prop_assert_eq!(everywhere, support.pairs.contains(&(s, a)));
        }
    }

    #[test]
    fn composition_is_linear_in_the_weights(m in members(), scale in 0.1f64..5.0) {
        let members = as_members(&m);
        let w: Vec<f64> = (0..members.len()).map(|i| 0.5 + i as f64).collect();
        let scaled: Vec<f64> = w.iter().map(|x| x * scale).collect();
        let base = compose_support_limited(&members, &w).unwrap();
        let big = compose_support_limited(&members, &scaled).unwrap();
        prop_assert_eq!(base.q_new.len(), big.q_new.len());
        for (k, v) in &base.q_new {
            prop_assert!(close(big.q_new[k], scale * v));
        }
        // Positive scaling keeps the greedy choice wherever values are not tied.
        for (&s, &a) in &base.policy {
            let row: Vec<f64> = base.q_new.iter().filter(|((x, _), _)| *x == s).map(|(_, v)| *v).collect();
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if row.iter().filter(|v| close(**v, best)).count() == 1 {
                prop_assert_eq!(big.policy[&s], a);
            }
        }
    }

    #[test]
    fn composition_ignores_member_order(m in members()) {
        let w: Vec<f64> = (0..m.len()).map(|i| 1.0 + i as f64).collect();
        let forward = compose_support_limited(&as_members(&m), &w).unwrap();
        let rev_m: Vec<_> = m.iter().rev().cloned().collect();
        let rev_w: Vec<f64> = w.iter().rev().copied().collect();
        let backward = compose_support_limited(&as_members(&rev_m), &rev_w).unwrap();
        prop_assert_eq!(forward.q_new.len(), backward.q_new.len());
        for (k, v) in &forward.q_new {
            prop_assert!(close(backward.q_new[k], *v));
        }
    }

    #[test]
    fn composed_actions_stay_on_the_support(m in members()) {
        let w = vec![1.0; m.len()];
        let result = compose_support_limited(&as_members(&m), &w).unwrap();
        for (&s, &a) in &result.policy {
            prop_assert!(m.iter().all(|(_, t)| t.contains(s, a)));
        }
    }

    #[test]
    fn transitions_csv_round_trips(set in transition_set()) {
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        prop_assert_eq!(TransitionSet::read_csv(&buf[..]).unwrap(), set);
    }

    #[test]
    fn generated_layouts_are_feasible(size in prop::sample::select(vec![8usize, 16]), seed in 0u64..10_000) {
        let counts = RoleCounts::default_for(size);
        let layout = generate_layout(size, seed, &counts).unwrap();
        prop_assert!(check_feasible(&layout));
        prop_assert_eq!(layout.gold().len(), counts.gold);
        prop_assert_eq!(layout.hazards().len(), counts.hazards);
        prop_assert_eq!(layout.blocks().len(), counts.blocks);
        let mut cells: Vec<_> = layout.gold().iter().chain(layout.hazards()).chain(layout.blocks()).copied().collect();
        cells.extend([layout.lever(), layout.start(), layout.exit()]);
        let n = cells.len();
        cells.sort();
        cells.dedup();
        prop_assert_eq!(cells.len(), n);
    }

    #[test]
    fn text_similarity_is_bounded(a in "[a-z ]{0,40}", b in "[a-z ]{0,40}") {
        let (va, vb) = (embed_text(&a), embed_text(&b));
        let c = cosine(&va, &vb);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&c));
        prop_assert!(close(c, cosine(&vb, &va)));
        if !va.is_empty() {
            prop_assert!(close(cosine(&va, &va), 1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn boosting_loss_never_increases(
        rows in prop::collection::vec((prop::array::uniform3(-5.0f64..5.0), -10.0f64..10.0), 4..60),
        depth in 1usize..5,
    ) {
        let examples: Vec<TrainingExample> = rows
            .iter()
            .enumerate()
            .map(|(i, (x, y))| TrainingExample {
                policy_id: format!("p{i}"),
                embedding: x.to_vec(),
                label: *y,
            })
            .collect();
        let params = BoostingParams { rounds: 30, max_depth: depth, min_samples_leaf: 1, ..Default::default() };
        let model = fit(&examples, &params).unwrap();
        for pair in model.loss_history.windows(2) {
            prop_assert!(pair[1] <= pair[0] * (1.0 + 1e-12) + 1e-15);
        }
        for e in &examples {
            prop_assert!(model.predict(&e.embedding).unwrap().is_finite());
        }
        let again = fit(&examples, &params).unwrap();
        prop_assert_eq!(again, model);
    }
}

#[test]
fn identity_weights_reproduce_a_single_member() {
    let mut set = TransitionSet::new();
    let mut q = QTable::new(4, 0.0, RewardSpec::single(Component::Gold));
    for s in 0..5u64 {
        q.entries.insert(s, [s as f64, -1.0, 2.0, 0.5]);
        for a in Action::ALL {
            set.insert(
                s,
                a,
                Transition {
                    next_state: s + 1,
                    reward: 0.0,
                    terminal: false,
                    components: [0.0; 4],
                },
            )
            .unwrap();
        }
    }
    let m = [Member {
        id: "only",
        qtable: &q,
        transitions: &set,
    }];
    let r = compose_support_limited(&m, &[1.0]).unwrap();
    let expected: BTreeMap<_, _> = set.iter().map(|(s, a, _)| ((s, a), q.value(s, a))).collect();
    assert_eq!(r.q_new, expected);
    assert_eq!(r.policy[&0], Action::ALL[2]);
}
