mod common;

use std::collections::BTreeMap;

use policy_reuse::embedding::{embed_policy, load_cached, reference_states, DEFAULT_GAMMA_PSI};
use policy_reuse::gridworld::{Component, RewardSpec};
use policy_reuse::harness::{build_library, layout_for, train_base_policies};
use policy_reuse::learner::{Budget, CheckpointKind};
use policy_reuse::pipeline::{
    candidate_filter, evaluate_artifact, run_compose, train_predictor, ComposeRequest, TaskInput,
};
use policy_reuse::predictor::BoostingParams;
use policy_reuse::retrieval::{CandidateList, Subtask};
use policy_reuse::store::{PolicyStore, Stage};
use policy_reuse::strategies::{
    run_ec, run_hc, run_strategy, run_tc, SelectionContext, StrategyConfig, StrategyError, StrategyKind,
};
use policy_reuse::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{build_small_library, scratch, small_plan, spec};

fn request(task: TaskInput, strategy: StrategyConfig) -> ComposeRequest {
    ComposeRequest {
        size: 8,
        layout_seed: 0,
        budget: Budget::X1,
        gamma: 0.0,
        task,
        strategy,
        top_m: 6,
    }
}

fn path_gold() -> TaskInput {
    TaskInput::Subtasks(vec![Component::Path, Component::Gold])
}

#[test]
fn library_build_is_complete_and_idempotent() {
    let dir = scratch("pipeline-idempotent");
    let plan = small_plan(&[8], &[0], &[Budget::X1], &[0.0]);
    let mut store = PolicyStore::open(&dir).unwrap();
    let first = build_library(&plan, &mut store, 1).unwrap();
    assert_eq!((first.runs_trained, first.artifacts), (4, 12));
    let second = build_library(&plan, &mut store, 1).unwrap();
    assert_eq!((second.runs_trained, second.runs_skipped, second.artifacts), (0, 4, 0));
    assert_eq!(store.len(), 12);
    // Reopening sees the same artifacts.
    assert_eq!(PolicyStore::open(&dir).unwrap().len(), 12);
}

#[test]
fn compose_end_to_end_is_offline_and_well_formed() {
    let (_dir, store) = build_small_library("pipeline-e2e");
    let target = spec("path-gold");
    let predictor = train_predictor(&store, Budget::X1, &target, 8, 0.0, &BoostingParams::default()).unwrap();
    assert_eq!(predictor.examples, 12);
    // Training the predictor filled the embedding cache the strategies read.
    let layout = store.get_layout(8, 0).unwrap();
    let refs = reference_states(&layout);
    for id in store.list(&candidate_filter(8, 0, 0.0, Budget::X1)) {
        let cached = load_cached(&store, &id, DEFAULT_GAMMA_PSI, layout.horizon(), &refs.id).unwrap();
        let fresh = embed_policy(&store.get(&id).unwrap(), &layout, &refs, DEFAULT_GAMMA_PSI, layout.horizon()).unwrap();
        assert_eq!(cached, fresh);
    }

    for (kind, evaluated) in [(StrategyKind::Tc, 1), (StrategyKind::Hc, 9), (StrategyKind::Ec, 36)] {
        let out = run_compose(&store, &request(path_gold(), StrategyConfig::new(kind)), &predictor.model).unwrap();
        assert_eq!(out.report.env_steps, 0);
        assert_eq!(out.report.compositions_evaluated, evaluated, "{kind}");
        assert_eq!(out.report.candidates_considered, 12);
        assert_eq!(out.report.chosen.len(), 2);
        let prov = out.artifact.provenance.as_ref().unwrap();
        assert_eq!(prov.weights, vec![1.0, 1.0]);
        assert_eq!(out.artifact.metadata.stage, Stage::Composed);
        assert_eq!(out.artifact.metadata.objective, target);
        // Every stored composed action is backed by a recorded transition.
        for (s, a) in out.selection.composition.support() {
            assert!(out.artifact.transitions.contains(s, a));
        }
    }
}

#[test]
fn instruction_text_is_decomposed() {
    let (_dir, store) = build_small_library("pipeline-text");
    let target = spec("path-gold");
    let predictor = train_predictor(&store, Budget::X1, &target, 8, 0.0, &BoostingParams::default()).unwrap();
    let task = TaskInput::Instruction("Find the fastest route to the exit, then collect all the gold".into());
    let out = run_compose(&store, &request(task, StrategyConfig::hc(3)), &predictor.model).unwrap();
    let tags: Vec<Component> = out.subtasks.iter().map(|s| s.tag).collect();
    assert_eq!(tags, vec![Component::Path, Component::Gold]);
    assert_eq!(out.spec, target);

    let bad = TaskInput::Instruction("dance around the room".into());
    let err = run_compose(&store, &request(bad, StrategyConfig::hc(3)), &predictor.model).unwrap_err();
    assert_eq!(err.code(), "NoSubtasksRecognized");
}

#[test]
fn single_policy_library_gives_identity_composition() {
    let dir = scratch("pipeline-single");
    let mut store = PolicyStore::open(&dir).unwrap();
    let layout = layout_for(8, 0).unwrap();
    store.put_layout(&layout).unwrap();
    let lever = train_base_policies(&layout, Component::Lever, Budget::X1, 0.0)
        .unwrap()
        .into_iter()
        .find(|a| a.metadata.checkpoint == Some(CheckpointKind::Best))
        .unwrap();
    store.put(&lever).unwrap();

    let target = RewardSpec::single(Component::Lever);
    let predictor = train_predictor(&store, Budget::X1, &target, 8, 0.0, &BoostingParams::default()).unwrap();
    assert_eq!(predictor.examples, 1);
    let task = TaskInput::Subtasks(vec![Component::Lever]);
    let out = run_compose(&store, &request(task, StrategyConfig::hc(3)), &predictor.model).unwrap();
    assert_eq!(out.report.chosen, vec![lever.id().to_string()]);
    let q = &out.selection.composition.q_new;
    assert_eq!(q.len(), lever.transitions.len());
    for (&(s, a), &v) in q {
        assert_eq!(v, lever.qtable.value(s, a));
    }
    // The composed artifact behaves like the member wherever it has data.
    let (traj, ret) = evaluate_artifact(&layout, &out.artifact, &target);
    let (base_traj, base_ret) = evaluate_artifact(&layout, &lever, &target);
    if traj.steps.iter().all(|st| lever.transitions.contains(st.state, st.action)) {
        assert_eq!(ret, base_ret);
        assert_eq!(traj.steps.len(), base_traj.steps.len());
    }
}

/// Random candidate pools over the library, scored by one predictor.
#[test]
fn strategies_reduce_on_random_pools() {
    let (_dir, store) = build_small_library("pipeline-reduction");
    let layout = store.get_layout(8, 0).unwrap();
    let refs = reference_states(&layout);
    let ids = store.list(&candidate_filter(8, 0, 0.0, Budget::X1));
    let artifacts: BTreeMap<String, _> = ids.iter().map(|id| (id.clone(), store.get(id).unwrap())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    for trial in 0..12 {
        let tags: &[Component] = if trial % 2 == 0 {
            &[Component::Path, Component::Gold]
        } else {
            &[Component::Path, Component::Gold, Component::Hazard]
        };
        let target = RewardSpec::uniform(tags).unwrap();
        let predictor = train_predictor(&store, Budget::X1, &target, 8, 0.0, &BoostingParams::default()).unwrap();
        let ctx = SelectionContext {
            layout: &layout,
            refs: &refs,
            gamma_psi: DEFAULT_GAMMA_PSI,
            horizon: layout.horizon(),
            model: &predictor.model,
            artifacts: &artifacts,
            embeddings: &BTreeMap::new(),
        };
        let pools: Vec<CandidateList> = tags
            .iter()
            .map(|&tag| {
                let mut shuffled = ids.clone();
                shuffled.shuffle(&mut rng);
                let m = rng.gen_range(2..=5);
                CandidateList {
                    subtask: Subtask::from_tag(tag),
                    ranked: shuffled.into_iter().take(m).map(|id| (id, 1.0)).collect(),
                }
            })
            .collect();
        let widest = pools.iter().map(|p| p.ranked.len()).max().unwrap();

        let (tc, _) = run_tc(&pools, &ctx).unwrap();
        let (hc1, _) = run_hc(&pools, 1, &ctx).unwrap();
        let (hcn, hcn_report) = run_hc(&pools, widest, &ctx).unwrap();
        let (ec, ec_report) = run_ec(&pools, &ctx).unwrap();
        assert_eq!(tc.members, hc1.members, "trial {trial}");
        assert_eq!(hcn.members, ec.members, "trial {trial}");
        assert_eq!(hcn_report.compositions_evaluated, ec_report.compositions_evaluated);
        let product: usize = pools.iter().map(|p| p.ranked.len()).product();
        assert_eq!(ec_report.compositions_evaluated, product);
        // EC sees every combination, so nothing scores above its choice.
        assert!(ec.score >= tc.score && ec.score >= hc1.score);
    }
}

#[test]
fn combination_cap_and_invalid_k() {
    let (_dir, store) = build_small_library("pipeline-cap");
    let layout = store.get_layout(8, 0).unwrap();
    let refs = reference_states(&layout);
    let ids = store.list(&candidate_filter(8, 0, 0.0, Budget::X1));
    let artifacts: BTreeMap<String, _> = ids.iter().map(|id| (id.clone(), store.get(id).unwrap())).collect();
    let target = spec("path-gold");
    let predictor = train_predictor(&store, Budget::X1, &target, 8, 0.0, &BoostingParams::default()).unwrap();
    let ctx = SelectionContext {
        layout: &layout,
        refs: &refs,
        gamma_psi: DEFAULT_GAMMA_PSI,
        horizon: layout.horizon(),
        model: &predictor.model,
        artifacts: &artifacts,
        embeddings: &BTreeMap::new(),
    };
    let pools: Vec<CandidateList> = [Component::Path, Component::Gold]
        .iter()
        .map(|&tag| CandidateList {
            subtask: Subtask::from_tag(tag),
            ranked: ids.iter().map(|id| (id.clone(), 1.0)).collect(),
        })
        .collect();
    let capped = StrategyConfig {
        combination_cap: 100,
        ..StrategyConfig::new(StrategyKind::Ec)
    };
    match run_strategy(&capped, &pools, &ctx) {
        Err(Error::Strategy(StrategyError::CombinationCapExceeded { combinations, cap })) => {
            assert_eq!((combinations, cap), (144, 100));
        }
        other => panic!("expected cap error, got {other:?}"),
    }
    assert!(matches!(
        run_strategy(&StrategyConfig::hc(0), &pools, &ctx),
        Err(Error::Strategy(StrategyError::InvalidK))
    ));
    let empty = vec![CandidateList {
        subtask: Subtask::from_tag(Component::Path),
        ranked: Vec::new(),
    }];
    assert!(matches!(
        run_tc(&empty, &ctx),
        Err(Error::Strategy(StrategyError::EmptyCandidates(Component::Path)))
    ));
}
