use taskrel_core::episode::{
    load_csv_dataset, make_synthetic_dataset, sample_episode, stream_rng, write_csv_dataset,
    EpisodeSpec,
};
use taskrel_core::gnn::{Aggregation, EpisodeModel, GnnModel, ModelConfig, OracleSimilarity};
use taskrel_core::relation::RelationKind;
use taskrel_core::trainer::{evaluate, train, TrainConfig};

fn config(kind: RelationKind) -> ModelConfig {
    let mut c = ModelConfig::uniform(8, 8, 2, kind);
    c.aggregation = Aggregation::SelfMean;
    c
}

#[test]
fn training_lowers_the_loss_for_both_relations() {
    let ds = make_synthetic_dataset(60, 12, 8, 3.0, 0.3, 4).unwrap();
    let spec = EpisodeSpec::new(3, 1, 2);
    for kind in [RelationKind::AbsDiff, RelationKind::TaskLevel] {
        let mut model = GnnModel::init(&config(kind), 1).unwrap();
        let cfg = TrainConfig {
            total_episodes: 600,
            seed: 2,
            ..TrainConfig::default()
        };
        let curve = train(&mut model, &ds, &spec, &cfg).unwrap();
        let mean = |r: &[taskrel_core::trainer::LossRecord]| {
            r.iter().map(|x| x.loss).sum::<f64>() / r.len() as f64
        };
        let (head, tail) = (mean(&curve[..100]), mean(&curve[500..]));
        assert!(tail < 0.8 * head, "{kind}: {head} -> {tail}");
    }
}

#[test]
fn evaluation_is_independent_of_thread_count() {
    let ds = make_synthetic_dataset(10, 10, 8, 2.0, 0.5, 3).unwrap();
    let spec = EpisodeSpec::new(4, 2, 2);
    let model = GnnModel::init(&config(RelationKind::TaskLevel), 5).unwrap();
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let four = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let a = one.install(|| evaluate(&model, &ds, &spec, 64, 8)).unwrap();
    let b = four
        .install(|| evaluate(&model, &ds, &spec, 64, 8))
        .unwrap();
    assert_eq!(a, b);
}

#[test]
fn oracle_is_perfect_in_both_graph_modes() {
    let ds = make_synthetic_dataset(8, 10, 3, 1.0, 1.0, 2).unwrap();
    for transductive in [true, false] {
        let mut spec = EpisodeSpec::new(5, 3, 2);
        spec.transductive = transductive;
        spec.labeled_fraction = 0.4;
        let r = evaluate(&OracleSimilarity, &ds, &spec, 50, 1).unwrap();
        assert_eq!(r.mean_accuracy, 1.0);
        assert_eq!(r.ci95, 0.0);
    }
}

#[test]
fn csv_round_trip_preserves_episodes_and_predictions() {
    let ds = make_synthetic_dataset(6, 9, 5, 2.0, 0.7, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_csv_dataset(&ds, dir.path()).unwrap();
    let back = load_csv_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);

    let spec = EpisodeSpec::new(3, 2, 1);
    let model = GnnModel::init(&ModelConfig::uniform(5, 4, 2, RelationKind::AbsDiff), 3).unwrap();
    let e1 = sample_episode(&ds, &spec, &mut stream_rng(6, 0)).unwrap();
    let e2 = sample_episode(&back, &spec, &mut stream_rng(6, 0)).unwrap();
    assert_eq!(e1, e2);
    assert_eq!(model.predict(&e1).unwrap(), model.predict(&e2).unwrap());
}

#[test]
fn mismatched_feature_width_is_rejected() {
    let ds = make_synthetic_dataset(6, 9, 5, 2.0, 0.7, 11).unwrap();
    let mut model = GnnModel::init(&config(RelationKind::AbsDiff), 0).unwrap();
    let cfg = TrainConfig {
        total_episodes: 1,
        ..TrainConfig::default()
    };
    let err = train(&mut model, &ds, &EpisodeSpec::new(3, 1, 1), &cfg).unwrap_err();
    assert!(
        matches!(err, taskrel_core::Error::Dimension { .. }),
        "{err}"
    );
}
