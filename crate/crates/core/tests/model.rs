mod common;

use common::{rel_err, rng, toy_cohort};
use fairrisk::cohort::{self, Cohort, CohortRecord, GroupAttribute};
use fairrisk::metrics::ranking::auroc;
use fairrisk::model::{
    self, Checkpoint, Hyperparameters, Labels, Mode, ModelParameters, SparseMatrix, TrainingData,
};
use fairrisk::penalty::{Bandwidth, Criterion, Distance, PenaltyConfig};
use rand::Rng;

/// Straight-line forward pass for a 5-input, 2-hidden-unit, one-hidden-layer
/// network, reading weights from the documented flat layout.
fn forward_oracle(v: &[f64], x: &[f64; 5]) -> f64 {
    // layer 1: w1[i][j] at i * 2 + j, b1 at 10..12; layer 2: w2[i][j] at 12 + i * 2 + j, b2 at 16..18
    let h0 = (x[0] * v[0] + x[1] * v[2] + x[2] * v[4] + x[3] * v[6] + x[4] * v[8] + v[10]).max(0.0);
    let h1 = (x[0] * v[1] + x[1] * v[3] + x[2] * v[5] + x[3] * v[7] + x[4] * v[9] + v[11]).max(0.0);
    let z0 = h0 * v[12] + h1 * v[14] + v[16];
    let z1 = h0 * v[13] + h1 * v[15] + v[17];
    // class 1 is the positive class
    (z1 - (z0.exp() + z1.exp()).ln()).exp()
}

#[test]
fn forward_matches_straight_line_oracle() {
    let mut r = rng(17);
    for trial in 0..20 {
        let params = ModelParameters::init(5, 2, 1, &mut rng(trial));
        assert_eq!(params.values.len(), 18);
        let rows: Vec<[f64; 5]> = (0..8).map(|_| std::array::from_fn(|_| r.gen_range(-2.0..2.0))).collect();
        let dense: Vec<Vec<f64>> = rows.iter().map(|x| x.to_vec()).collect();
        let x = SparseMatrix::from_dense(&dense).unwrap();
        let preds = model::predict(&params, &x, &(0..8).collect::<Vec<_>>()).unwrap();
        for (p, row) in preds.iter().zip(&rows) {
            assert!((p - forward_oracle(&params.values, row)).abs() <= 1e-12);
        }
    }
}

#[test]
fn finite_difference_gradient_two_hidden_units() {
    let mut r = rng(21);
    let dense: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    let x = SparseMatrix::from_dense(&dense).unwrap();
    let rows: Vec<usize> = (0..10).collect();
    let labels = Labels {
        outcomes: &[1, 0, 1, 0, 0, 1, 1, 0, 0, 0],
        groups: &[0, 1, 0, 1, 0, 1, 0, 1, 1, 0],
        num_groups: 2,
    };
    let params = ModelParameters::init(4, 2, 1, &mut rng(3));
    for criterion in Criterion::ALL {
        for distance in [Distance::Mmd, Distance::Mean] {
            let cfg = PenaltyConfig {
                bandwidth: Bandwidth::Fixed(0.4),
                ..PenaltyConfig::new(criterion, distance, 2.0)
            };
            let f = |p: &ModelParameters| {
                model::penalized_loss_and_grad(p, &x, &rows, labels, &cfg, Mode::Eval).unwrap()
            };
            let (_, grad) = f(&params);
            let h = 1e-5;
            for i in 0..params.values.len() {
                let (mut a, mut b) = (params.clone(), params.clone());
                a.values[i] += h;
                b.values[i] -= h;
                let fd = (f(&a).0.total - f(&b).0.total) / (2.0 * h);
                assert!(rel_err(grad[i], fd, 1e-4) < 1e-5, "{criterion} {distance} param {i}: {} vs {fd}", grad[i]);
            }
        }
    }
}

#[test]
fn objective_is_linear_in_lambda() {
    let mut r = rng(5);
    let dense: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    let x = SparseMatrix::from_dense(&dense).unwrap();
    let rows: Vec<usize> = (0..12).collect();
    let outcomes: Vec<u8> = (0..12).map(|i| u8::from(i % 3 == 0)).collect();
    let groups: Vec<usize> = (0..12).map(|i| i % 2).collect();
    let labels = Labels {
        outcomes: &outcomes,
        groups: &groups,
        num_groups: 2,
    };
    let params = ModelParameters::init(3, 4, 2, &mut rng(6));
    let cfg = PenaltyConfig::new(Criterion::EqualizedOdds, Distance::Mmd, 0.8);
    let (one, _) = model::penalized_loss_and_grad(&params, &x, &rows, labels, &cfg, Mode::Eval).unwrap();
    let (two, _) = model::penalized_loss_and_grad(&params, &x, &rows, labels, &cfg.with_lambda(1.6), Mode::Eval).unwrap();
    assert_eq!(one.cross_entropy, two.cross_entropy);
    assert!(((two.total - two.cross_entropy) - 2.0 * (one.total - one.cross_entropy)).abs() < 1e-14);
}

fn small_hp() -> Hyperparameters {
    Hyperparameters {
        batch_size: 32,
        dropout_prob: 0.0,
        hidden_dim: 8,
        learning_rate: 1e-2,
        num_hidden_layers: 1,
        max_iterations: 30,
        batches_per_iteration: 10,
        patience: 5,
    }
}

/// Two binary features; the outcome is their AND, so a hidden layer separates it.
fn separable_cohort(n: usize, seed: u64) -> Cohort {
    let mut r = rng(seed);
    let attribute = GroupAttribute::new("g", vec!["a".into(), "b".into()]).unwrap();
    let records = (0..n)
        .map(|i| {
            let (f0, f1) = (r.gen_bool(0.5), r.gen_bool(0.5));
            let features = [(f0, 0u32), (f1, 1)].iter().filter(|(on, _)| *on).map(|(_, j)| *j).collect();
            CohortRecord {
                record_id: format!("x{i}"),
                features,
                outcome: u8::from(f0 && f1),
                group: i % 2,
                true_probability: None,
            }
        })
        .collect();
    Cohort::new(attribute, 2, records).unwrap()
}

#[test]
fn separable_data_is_learned() {
    let c = separable_cohort(600, 1);
    let split = cohort::make_split(&c, 0.2, 4, 2).unwrap();
    let (params, log) = model::train(&c, &split, 0, &small_hp(), &PenaltyConfig::none(), 3).unwrap();
    let p = split.partition(&c, 0).unwrap();
    let x = SparseMatrix::from_cohort(&c);
    let preds = model::predict(&params, &x, &p.validation).unwrap();
    let y: Vec<u8> = p.validation.iter().map(|&i| c.records[i].outcome).collect();
    let a = auroc(&preds, &y).unwrap();
    assert!(a > 0.95, "validation AUROC {a}");
    assert_eq!(log.selection_metric, "cross_entropy");
}

#[test]
fn training_reduces_validation_loss() {
    let c = separable_cohort(400, 4);
    let split = cohort::make_split(&c, 0.2, 3, 1).unwrap();
    let mut improved = 0;
    for seed in 0..20 {
        let (_, log) = model::train(&c, &split, 1, &small_hp(), &PenaltyConfig::none(), seed).unwrap();
        let first = log.iterations[0].validation.cross_entropy;
        let best = log.best().unwrap().validation.cross_entropy;
        improved += usize::from(best < first);
    }
    assert_eq!(improved, 20);
}

#[test]
fn same_seed_gives_bitwise_identical_parameters() {
    let c = separable_cohort(300, 2);
    let split = cohort::make_split(&c, 0.2, 3, 1).unwrap();
    let hp = Hyperparameters {
        dropout_prob: 0.25,
        ..small_hp()
    };
    let cfg = PenaltyConfig::new(Criterion::DemographicParity, Distance::Mmd, 0.5);
    let (a, log_a) = model::train(&c, &split, 2, &hp, &cfg, 9).unwrap();
    let (b, log_b) = model::train(&c, &split, 2, &hp, &cfg, 9).unwrap();
    let bits = |p: &ModelParameters| p.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(log_a, log_b);
    assert_eq!(log_a.selection_metric, "penalized");
    let (c2, _) = model::train(&c, &split, 2, &hp, &cfg, 10).unwrap();
    assert_ne!(bits(&a), bits(&c2));
}

#[test]
fn patience_one_stops_at_iteration_two_with_first_parameters() {
    let outcomes: Vec<u8> = (0..100).map(|i| u8::from(i % 4 == 0)).collect();
    let groups: Vec<usize> = (0..100).map(|i| i % 2).collect();
    let c = toy_cohort(&outcomes, &groups, &["a", "b"], 5);
    let split = cohort::make_split(&c, 0.2, 2, 0).unwrap();
    let hp = Hyperparameters {
        learning_rate: 0.0,
        patience: 1,
        ..small_hp()
    };
    let seed = 12;
    let (params, log) = model::train(&c, &split, 0, &hp, &PenaltyConfig::none(), seed).unwrap();
    assert_eq!(log.iterations.len(), 2);
    assert!(log.stopped_early);
    assert_eq!(log.best_iteration, 1);
    // a zero learning rate leaves the initial parameters in place
    let (again, _) = model::train(&c, &split, 0, &Hyperparameters { max_iterations: 1, ..hp }, &PenaltyConfig::none(), seed).unwrap();
    assert_eq!(params, again);
}

#[test]
fn data_shapes_are_checked() {
    let c = separable_cohort(50, 1);
    let x = SparseMatrix::from_cohort(&c);
    let outcomes = c.outcomes();
    let groups = c.groups();
    let data = TrainingData {
        x: &x,
        outcomes: &outcomes,
        groups: &groups,
        num_groups: 2,
    };
    assert!(model::train_rows(data, &[], &[0, 1], &small_hp(), &PenaltyConfig::none(), 0).is_err());
    let bad = Hyperparameters {
        batch_size: 0,
        ..small_hp()
    };
    assert!(model::train_rows(data, &[0, 1, 2], &[3, 4], &bad, &PenaltyConfig::none(), 0).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let c = separable_cohort(120, 3);
    let split = cohort::make_split(&c, 0.2, 2, 1).unwrap();
    let cfg = PenaltyConfig::new(Criterion::EqualOpportunity, Distance::Mean, 1.0);
    let (params, log) = model::train(&c, &split, 0, &small_hp(), &cfg, 1).unwrap();
    let ckpt = Checkpoint::new(small_hp(), cfg, params, log);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let x = SparseMatrix::from_cohort(&c);
    let rows: Vec<usize> = (0..c.len()).collect();
    assert_eq!(
        model::predict(&loaded.params, &x, &rows).unwrap(),
        model::predict(&ckpt.params, &x, &rows).unwrap()
    );
}
