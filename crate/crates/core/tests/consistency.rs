//! Cross-checks between the per-entity forward functions used at evaluation
//! time and the batched tape builders used during training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mblfe_core::dataset::{BprTriple, Dataset, InteractionRecord};
use mblfe_core::moe::{
    expert_forward, expert_forward_node, gate_forward, gate_nodes, extract_item_factors,
    extract_user_factors, ExpertNodes, ExpertParams, GateParams, GATE_NOISE_WEIGHT, GATE_WEIGHT,
};
use mblfe_core::numerics::{ParamStore, Tape};
use mblfe_core::propagation::{behavior_weights, build_adjacency, enhance, NormalizedAdjacency};
use mblfe_core::recommender::model::{build_step_graph, StepBatches};
use mblfe_core::recommender::params::{expected_shapes, normal_matrix};
use mblfe_core::recommender::{rec_loss, score, TrainingConfig};

fn random_store(config: &TrainingConfig, num_users: usize, num_items: usize, seed: u64) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, rows, cols) in expected_shapes(config, num_users, num_items) {
        store.insert(name, normal_matrix::<f64, _>(rows, cols, 0.4, &mut rng));
    }
    store
}

fn small_config() -> TrainingConfig {
    TrainingConfig {
        embedding_dim: 6,
        num_experts: 3,
        gcn_layers: 2,
        gamma: 0.0,
        ..TrainingConfig::default()
    }
}

#[test]
fn batched_gate_matches_per_entity_gate() {
    let config = small_config();
    let store = random_store(&config, 4, 4, 3);
    let gate = GateParams::from_store(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inputs = normal_matrix::<f64, _>(5, config.embedding_dim, 0.7, &mut rng);

    let mut tape = Tape::new();
    let x = tape.constant(inputs.clone());
    let gw = tape.param(&store, GATE_WEIGHT);
    let gn = tape.param(&store, GATE_NOISE_WEIGHT);
    let nodes = gate_nodes(&mut tape, x, gw, gn, None);

    for row in 0..inputs.rows() {
        let plain = gate_forward(inputs.row(row), &gate, None);
        assert_eq!(plain, nodes.decisions[row], "row {row}");
        for (k, &p) in plain.probabilities.iter().enumerate() {
            assert_eq!(p, tape.value(nodes.probabilities).get(row, k));
            assert_eq!(plain.gate_values[k], tape.value(nodes.gated).get(row, k));
        }
    }
}

#[test]
fn batched_expert_matches_per_entity_expert() {
    let config = small_config();
    let store = random_store(&config, 4, 4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = normal_matrix::<f64, _>(4, config.embedding_dim, 0.9, &mut rng);

    for k in 0..config.num_experts {
        let mut tape = Tape::new();
        let x = tape.constant(inputs.clone());
        let nodes = ExpertNodes::from_store(&mut tape, &store, k);
        let out = expert_forward_node(&mut tape, x, &nodes);
        let expert = ExpertParams::from_store(&store, k);
        for row in 0..inputs.rows() {
            let plain = expert_forward(inputs.row(row), &expert);
            assert_eq!(plain.as_slice(), tape.value(out).row(row), "expert {k} row {row}");
        }
    }
}

/// The training graph's ranking loss must agree with the plain evaluation
/// pipeline (enhance, extract factors, score) on the same triple.
#[test]
fn training_graph_scores_match_plain_pipeline() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut records = Vec::new();
    for user in 0..5usize {
        for item in 0..7usize {
            if rng.gen_bool(0.4) {
                records.push(InteractionRecord { user, item, behavior: 0 });
            }
            if rng.gen_bool(0.3) {
                records.push(InteractionRecord { user, item, behavior: 1 });
            }
        }
    }
    records.push(InteractionRecord { user: 0, item: 0, behavior: 1 });
    let dataset = Dataset::from_records(5, 7, vec!["a".into(), "b".into()], 1, &records);
    let config = small_config();
    let store = random_store(&config, 5, 7, 11);

    let adjacencies: Vec<NormalizedAdjacency<f64>> =
        dataset.behaviors.iter().map(build_adjacency).collect();
    let weights = behavior_weights::<f64>(&dataset);

    // Pick a valid triple.
    let target = &dataset.target().interactions;
    let user = (0..5).find(|&u| target.user_count(u) > 0).unwrap();
    let pos_item = target.items_of(user)[0] as usize;
    let neg_item = (0..7).find(|&i| !target.contains(user, i)).unwrap();
    let triples = vec![BprTriple { user, pos_item, neg_item }];

    // Training-graph value (deterministic gate, no noise).
    let batches = StepBatches {
        behavior_triples: dataset.behaviors.iter().map(|_| &[] as &[BprTriple]).collect(),
        merged: &[],
        rec_triples: &triples,
    };
    let graph = build_step_graph(&store, &adjacencies, &weights, &batches, None, &config);
    let graph_rec = graph.tape.scalar(graph.rec);

    // Plain pipeline.
    let enhanced = enhance(
        &adjacencies,
        behavior_weights::<f64>(&dataset),
        store.param("user_embedding"),
        store.param("item_embedding"),
        config.gcn_layers,
    )
    .unwrap();
    let gate = GateParams::from_store(&store);
    let experts = ExpertParams::all_from_store(&store, config.num_experts);
    let user_set = extract_user_factors(user, enhanced.users.row(user), &gate, &experts, None);
    let pos_set = extract_item_factors(pos_item, enhanced.items.row(pos_item), &experts);
    let neg_set = extract_item_factors(neg_item, enhanced.items.row(neg_item), &experts);
    let projection = store.param("target_projection");
    let pos_score = score(&user_set, &pos_set, projection);
    let neg_score = score(&user_set, &neg_set, projection);
    let plain_rec = rec_loss(&[pos_score], &[neg_score]);

    assert!(
        (graph_rec - plain_rec).abs() < 1e-10,
        "graph {graph_rec} vs plain {plain_rec}"
    );
}

/// Factor extraction skips unselected experts yet matches the full forward on
/// selected ones.
#[test]
fn factor_extraction_matches_gate_and_experts() {
    let config = small_config();
    let store = random_store(&config, 4, 4, 17);
    let gate = GateParams::from_store(&store);
    let experts = ExpertParams::all_from_store(&store, config.num_experts);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let input = normal_matrix::<f64, _>(1, config.embedding_dim, 0.8, &mut rng);

    let decision = gate_forward(input.row(0), &gate, None);
    let factors = extract_user_factors(0, input.row(0), &gate, &experts, None);
    for k in 0..config.num_experts {
        if decision.selected.contains(&k) {
            let raw = expert_forward(input.row(0), &experts[k]);
            for (a, &r) in factors.factors[k].iter().zip(&raw) {
                assert_eq!(*a, decision.gate_values[k] * r);
            }
        } else {
            assert!(factors.factors[k].iter().all(|&v| v == 0.0));
        }
    }
}

/// frozen noise draws push the gate toward the same decision on both paths.
#[test]
fn noisy_gate_matches_between_paths() {
    let config = small_config();
    let store = random_store(&config, 4, 4, 29);
    let gate = GateParams::from_store(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let inputs = normal_matrix::<f64, _>(3, config.embedding_dim, 0.7, &mut rng);
    let noise = normal_matrix::<f64, _>(3, config.num_experts, 1.0, &mut rng);

    let mut tape = Tape::new();
    let x = tape.constant(inputs.clone());
    let gw = tape.param(&store, GATE_WEIGHT);
    let gn = tape.param(&store, GATE_NOISE_WEIGHT);
    let nodes = gate_nodes(&mut tape, x, gw, gn, Some(&noise));

    for row in 0..inputs.rows() {
        let plain = gate_forward(inputs.row(row), &gate, Some(noise.row(row)));
        for (k, &p) in plain.probabilities.iter().enumerate() {
            let batched = tape.value(nodes.probabilities).get(row, k);
            assert!((p - batched).abs() < 1e-12, "row {row} expert {k}");
        }
        assert_eq!(plain.selected, nodes.decisions[row].selected);
    }
}

/// The sparse propagation used by tape ops is the same kernel as the plain
/// path, so values agree bit for bit.
#[test]
fn tape_propagation_matches_plain_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let mut records = Vec::new();
    for user in 0..6usize {
        for item in 0..5usize {
            if rng.gen_bool(0.5) {
                records.push(InteractionRecord { user, item, behavior: 0 });
            }
        }
    }
    let dataset = Dataset::from_records(6, 5, vec!["a".into()], 0, &records);
    let adjacency = build_adjacency::<f64>(&dataset.behaviors[0]);
    let users = normal_matrix::<f64, _>(6, 4, 1.0, &mut rng);
    let items = normal_matrix::<f64, _>(5, 4, 1.0, &mut rng);

    let (plain_u, plain_i) =
        mblfe_core::propagation::run_lightgcn(&adjacency, &users, &items, 3).unwrap();

    let mut tape = Tape::new();
    let u = tape.constant(users);
    let i = tape.constant(items);
    let (tu, ti) = mblfe_core::propagation::lightgcn_nodes(&mut tape, &adjacency, u, i, 3);
    assert_eq!(tape.value(tu).data(), plain_u.data());
    assert_eq!(tape.value(ti).data(), plain_i.data());
}
