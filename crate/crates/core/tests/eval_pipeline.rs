//! Evaluation-surface tests over a random (untrained) snapshot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mblfe_core::dataset::{leave_one_out_split, Dataset, InteractionRecord};
use mblfe_core::eval::{
    evaluate, export_factors, selection_stats, write_gate_dump, write_metrics_json,
    write_selection_histogram, EvalError, EvalModel,
};
use mblfe_core::recommender::params::initialize_store;
use mblfe_core::recommender::{ModelSnapshot, TrainingConfig};

fn fixture() -> (Dataset, Dataset, Vec<(usize, usize)>, TrainingConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut records = Vec::new();
    for user in 0..20usize {
        for item in 0..30usize {
            if rng.gen_bool(0.2) {
                records.push(InteractionRecord { user, item, behavior: 0 });
            }
            if rng.gen_bool(0.12) {
                records.push(InteractionRecord { user, item, behavior: 1 });
            }
        }
        records.push(InteractionRecord { user, item: user, behavior: 1 });
    }
    let dataset = Dataset::from_records(20, 30, vec!["view".into(), "buy".into()], 1, &records);
    let (train, test) = leave_one_out_split(&dataset, 9);
    let config = TrainingConfig {
        embedding_dim: 8,
        num_experts: 4,
        gcn_layers: 2,
        seed: 1,
        ..TrainingConfig::default()
    };
    (dataset, train, test, config)
}

fn model() -> (EvalModel<f32>, Dataset, Vec<(usize, usize)>) {
    let (_, train, test, config) = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let params = initialize_store::<f32, _>(&config, train.num_users, train.num_items, &mut rng);
    let snapshot = ModelSnapshot::new(params, config, 0, 9);
    let model = EvalModel::new(snapshot, &train).unwrap();
    (model, train, test)
}

#[test]
fn evaluate_rejects_bad_inputs() {
    let (model, train, test) = model();
    assert!(matches!(
        evaluate(&model, &train.target().interactions, &[], &[10]),
        Err(EvalError::EmptyTestSet)
    ));
    assert!(matches!(
        evaluate(&model, &train.target().interactions, &test, &[]),
        Err(EvalError::InvalidCutoffs)
    ));
    assert!(matches!(
        evaluate(&model, &train.target().interactions, &test, &[0]),
        Err(EvalError::InvalidCutoffs)
    ));
    // A held pair still present in training is a split mismatch.
    let user = (0..train.num_users)
        .find(|&u| train.target().interactions.user_count(u) > 0)
        .unwrap();
    let item = train.target().interactions.items_of(user)[0] as usize;
    assert!(matches!(
        evaluate(&model, &train.target().interactions, &[(user, item)], &[10]),
        Err(EvalError::HeldItemInTrain { .. })
    ));
}

#[test]
fn evaluation_is_deterministic_and_monotone() {
    let (model, train, test) = model();
    let a = evaluate(&model, &train.target().interactions, &test, &[5, 10, 20]).unwrap();
    let b = evaluate(&model, &train.target().interactions, &test, &[5, 10, 20]).unwrap();
    assert_eq!(a, b);
    let mut bytes_a = Vec::new();
    write_metrics_json(&mut bytes_a, &a).unwrap();
    let mut bytes_b = Vec::new();
    write_metrics_json(&mut bytes_b, &b).unwrap();
    assert_eq!(bytes_a, bytes_b);
    // HR and NDCG non-decreasing in the cutoff.
    for pair in a.per_cutoff.windows(2) {
        assert!(pair[1].hr >= pair[0].hr);
        assert!(pair[1].ndcg >= pair[0].ndcg);
        assert!(pair[0].hr <= 1.0 && pair[0].ndcg <= pair[0].hr);
    }
    assert_eq!(a.users_evaluated, test.len());
}

#[test]
fn selection_histogram_mass_equals_user_count() {
    let (model, _, _) = model();
    let stats = selection_stats(&model);
    assert_eq!(stats.histogram[0], 0);
    let mass: usize = stats.histogram.iter().sum();
    assert_eq!(mass, model.num_users());
    let mut dump = Vec::new();
    write_gate_dump(&mut dump, &model).unwrap();
    assert_eq!(String::from_utf8(dump).unwrap().lines().count(), model.num_users());
    let mut histogram = Vec::new();
    write_selection_histogram(&mut histogram, &stats).unwrap();
    assert_eq!(
        String::from_utf8(histogram).unwrap().lines().count(),
        model.num_experts()
    );
}

#[test]
fn factor_export_is_seed_deterministic() {
    let (model, _, _) = model();
    let mut a = Vec::new();
    let rows_a = export_factors(&model, 6, 99, &mut a).unwrap();
    let mut b = Vec::new();
    let rows_b = export_factors(&model, 6, 99, &mut b).unwrap();
    assert_eq!(rows_a, 6 * model.num_experts());
    assert_eq!(rows_a, rows_b);
    assert_eq!(a, b);
    // A different seed samples different users.
    let mut c = Vec::new();
    export_factors(&model, 6, 100, &mut c).unwrap();
    assert_ne!(a, c);
    // Sample size larger than the user base clamps.
    let mut d = Vec::new();
    let rows_d = export_factors(&model, 10_000, 1, &mut d).unwrap();
    assert_eq!(rows_d, model.num_users() * model.num_experts());
}
