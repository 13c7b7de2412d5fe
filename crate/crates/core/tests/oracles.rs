mod common;

use std::collections::BTreeMap;

use placeattr::embedder::{wals_factorize, WalsConfig, WalsSolver, WeightedMatrix};
use placeattr::evaluator::auc_slices;
use placeattr::featurizer::{featurize, FeatureColumn, FeatureGroup, FeatureMatrix, FeaturizerConfig};
use placeattr::learner::{
    self, mutual_information, predict_scores, select_features_rows, sgd, LearnerConfig, LinearModel, LossKind, Problem,
};
use placeattr::synthworld::{self, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_world(seed: u64) -> WorldConfig {
    WorldConfig {
        n_places: 50,
        n_people: 200,
        n_days: 14,
        seed,
        ..WorldConfig::default()
    }
}

#[test]
fn auc_matches_pairwise_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let n = rng.random_range(2..=100);
        let levels = rng.random_range(1..=n);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / 7.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let got = auc_slices(&scores, &labels).unwrap();
        assert!((got - common::pairwise_auc(&scores, &labels)).abs() <= 1e-12);
    }
}

fn check_featurizer(world_seed: u64, config: &FeaturizerConfig) {
    let (world, log) = synthworld::build(&small_world(world_seed)).unwrap();
    let m = featurize(&log, &world.places, config).unwrap();
    let oracle = common::brute_features(
        &log,
        &world.places,
        &config.duration_bin_edges,
        &config.transition_windows,
        config.min_visitors,
        config.utc_offset_seconds,
    );
    assert_eq!(m.row_ids().len(), oracle.len());
    let columns: Vec<&str> = m.columns().iter().map(|c| c.name.as_str()).collect();
    for (r, id) in m.row_ids().iter().enumerate() {
        let expected = &oracle[id];
        for (c, name) in columns.iter().enumerate() {
            let want = expected.get(*name).copied().unwrap_or(0.0);
            let got = m.get(r, c);
            assert!((got - want).abs() <= 1e-12, "{id} {name}: {got} vs {want}");
        }
        for name in expected.keys() {
            assert!(columns.contains(&name.as_str()), "oracle produced unknown column {name}");
        }
    }
}

#[test]
fn featurizer_matches_brute_force() {
    check_featurizer(3, &FeaturizerConfig::default());
}

#[test]
fn featurizer_matches_brute_force_at_half_hour_offset() {
    let config = FeaturizerConfig {
        duration_bin_edges: vec![10, 60, 200],
        transition_windows: vec![2, 3, 12],
        min_visitors: 3,
        utc_offset_seconds: -(5 * 3600 + 1800),
    };
    check_featurizer(4, &config);
}

fn random_column(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Zero-inflated with repeated values, like sparse fractions.
    (0..n)
        .map(|_| {
            if rng.random_bool(0.4) {
                0.0
            } else {
                f64::from(rng.random_range(1..12u32)) / 11.0
            }
        })
        .collect()
}

#[test]
fn mutual_information_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let n = rng.random_range(4..80);
        let col = random_column(&mut rng, n);
        let mut y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        y[0] = true;
        y[1] = false;
        let nb = rng.random_range(2..10);
        let got = mutual_information(&col, &y, nb).unwrap();
        let want = common::brute_mi(&col, &y, nb).max(0.0);
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> FeatureMatrix {
    let columns = (0..d).map(|j| FeatureColumn::new(format!("f{j:02}"), FeatureGroup::External)).collect();
    let cols: Vec<Vec<f64>> = (0..d).map(|_| random_column(rng, n)).collect();
    let entries = (0..n)
        .map(|i| (0..d).map(|j| (j as u32, cols[j][i])).collect())
        .collect();
    FeatureMatrix::from_rows((0..n).map(|i| format!("p{i:03}")).collect(), columns, entries).unwrap()
}

#[test]
fn selection_matches_brute_force_on_50_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let n = 60;
        let m = random_matrix(&mut rng, n, 50);
        let mut y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        y[0] = true;
        y[1] = false;
        let rows: Vec<usize> = (0..n).collect();
        let names: Vec<String> = m.columns().iter().map(|c| c.name.clone()).collect();
        let mis: Vec<f64> = (0..50).map(|c| common::brute_mi(&m.column_values(c), &y, 8).max(0.0)).collect();
        let sel = select_features_rows(&m, "a", &rows, &y, 10, 8).unwrap();
        // Equal MIs can differ in the last bit between summation orders;
        // compare as sets when that happens at the cut.
        let want = common::brute_top_k(&names, &mis, 10);
        let mut got = sel.kept();
        if got != want {
            let mut w = want.clone();
            got.sort();
            w.sort();
            assert_eq!(got, w);
        }
    }
}

fn random_weighted(rng: &mut ChaCha8Rng, r: usize, c: usize, w0: f64) -> (WeightedMatrix, Vec<f64>, Vec<f64>) {
    let mut values = vec![0.0; r * c];
    let mut weights = vec![w0; r * c];
    let mut triplets = Vec::new();
    for i in 0..r {
        for j in 0..c {
            if rng.random_bool(0.3) {
                let v = rng.random_range(-1.0..2.0);
                let w = rng.random_range(0.5..3.0);
                values[i * c + j] = v;
                weights[i * c + j] = w;
                triplets.push((i, j, v, w));
            }
        }
    }
    (WeightedMatrix::from_triplets(r, c, triplets, w0).unwrap(), values, weights)
}

#[test]
fn wals_objective_matches_dense_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..20 {
        let (r, c, k) = (rng.random_range(2..15), rng.random_range(2..15), rng.random_range(1..5));
        let w0 = if trial % 2 == 0 { 0.0 } else { 0.1 };
        let lambda = rng.random_range(0.01..1.0);
        let (m, values, weights) = random_weighted(&mut rng, r, c, w0);
        let config = WalsConfig {
            rank: k,
            lambda,
            max_sweeps: 8,
            tol: 1e-300,
            implicit_weight: w0,
            seed: trial,
        };
        let full = wals_factorize(&m, &config).unwrap();
        for s in 1..=full.sweep_losses.len() {
            let prefix = wals_factorize(&m, &WalsConfig { max_sweeps: s, ..config.clone() }).unwrap();
            let dense = common::dense_wals_objective(
                &values,
                &weights,
                r,
                c,
                prefix.u.as_slice(),
                prefix.v.as_slice(),
                k,
                lambda,
            );
            assert!((prefix.final_loss - dense).abs() <= 1e-9, "{} vs {dense}", prefix.final_loss);
            assert_eq!(prefix.final_loss, full.sweep_losses[s - 1]);
        }
        for w in full.sweep_losses.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "objective rose: {w:?}");
        }
    }
}

#[test]
fn solver_objective_matches_dense_at_random_factors() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (m, values, weights) = random_weighted(&mut rng, 9, 7, 0.2);
    let k = 3;
    let u: Vec<f64> = (0..9 * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..7 * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let uf = placeattr::embedder::FactorMatrix::from_vec(9, k, u.clone()).unwrap();
    let vf = placeattr::embedder::FactorMatrix::from_vec(7, k, v.clone()).unwrap();
    let obj = WalsSolver::new(&m, k, 0.3).objective(&uf, &vf);
    let dense = common::dense_wals_objective(&values, &weights, 9, 7, &u, &v, k, 0.3);
    assert!((obj.squared_reg - dense).abs() <= 1e-12 * dense.max(1.0));
    let recon = common::dense_wals_objective(&values, &weights, 9, 7, &u, &v, k, 0.0);
    let norms: f64 = u.chunks(k).chain(v.chunks(k)).map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).sum();
    assert!((obj.norm_reg - (recon + 0.3 * norms)).abs() <= 1e-12 * dense.max(1.0));
}

fn dense_problem(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<f64>, Vec<bool>) {
    let truth: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s: f64 = row.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-0.7..0.7);
        y.push(s > 0.3);
        x.extend(row);
    }
    (x, y)
}

#[test]
fn problem_objective_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (x, y) = dense_problem(&mut rng, 40, 3);
    let p = Problem::new(40, 3, x.clone(), y.clone(), true);
    let w = [0.3, -0.2, 1.1];
    let (want, _, _) = common::logistic_objective(&x, &y, 3, &p.class_weights, 0.01, &w, 0.4);
    assert!((p.objective(LossKind::Logistic, 0.01, &w, 0.4) - want).abs() <= 1e-12);
}

#[test]
fn sgd_reaches_batch_reference_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..5 {
        let (n, d) = (200, 3);
        let (x, y) = dense_problem(&mut rng, n, d);
        let p = Problem::new(n, d, x.clone(), y.clone(), true);
        let config = LearnerConfig {
            loss: LossKind::Logistic,
            ..LearnerConfig::default()
        };
        let (_, _, losses) = sgd(&p, &config, trial).unwrap();
        let reference = common::batch_logistic_min(&x, &y, d, &p.class_weights, config.l2, 1e-10);
        let got = *losses.last().unwrap();
        assert!(got >= reference - 1e-9, "below the optimum: {got} < {reference}");
        assert!(got - reference <= 1e-3, "trial {trial}: sgd {got} vs reference {reference}");
    }
}

#[test]
fn predict_scores_match_naive_dot_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = random_matrix(&mut rng, 30, 8);
    let features: Vec<String> = ["f01", "f03", "f04", "f07", "absent"].map(String::from).to_vec();
    let d = features.len();
    let model = LinearModel {
        format_version: 1,
        attribute: "a".into(),
        loss_kind: LossKind::Hinge,
        features: features.clone(),
        means: (0..d).map(|_| rng.random_range(0.0..1.0)).collect(),
        scales: vec![0.5, 0.0, 2.0, 1.5, 0.25],
        weights: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
        bias: 0.7,
        config: LearnerConfig::default(),
        seed: 0,
        epoch_losses: vec![],
    };
    let col = m.column_index();
    let scores = predict_scores(&model, &m);
    for (r, id) in m.row_ids().iter().enumerate() {
        let mut s = model.bias;
        for j in 0..d {
            let raw = col.get(features[j].as_str()).map_or(0.0, |c| m.get(r, *c));
            if model.scales[j] != 0.0 {
                s += model.weights[j] * (raw - model.means[j]) / model.scales[j];
            }
        }
        assert!((scores[id] - s).abs() <= 1e-12);
    }
}

#[test]
fn zero_model_scores_bias_and_one_hot_difference_is_the_weight() {
    let m = FeatureMatrix::from_rows(
        vec!["a".into(), "b".into()],
        vec![FeatureColumn::new("x", FeatureGroup::External)],
        vec![vec![(0, 1.0)], vec![]],
    )
    .unwrap();
    let mut model = LinearModel {
        format_version: 1,
        attribute: "t".into(),
        loss_kind: LossKind::Hinge,
        features: vec!["x".into()],
        means: vec![0.0],
        scales: vec![1.0],
        weights: vec![0.0],
        bias: 0.7,
        config: LearnerConfig::default(),
        seed: 0,
        epoch_losses: vec![],
    };
    assert_eq!(predict_scores(&model, &m).values().copied().collect::<Vec<_>>(), vec![0.7, 0.7]);
    model.weights = vec![2.0];
    let s: BTreeMap<String, f64> = predict_scores(&model, &m);
    assert_eq!(s["a"] - s["b"], 2.0);
    // The raw-space form gives the same difference for any standardization.
    model.means = vec![0.25];
    model.scales = vec![0.5];
    let (coef, _) = model.raw_coefficients();
    let s = predict_scores(&model, &m);
    assert!((s["a"] - s["b"] - coef[0]).abs() <= 1e-12);
    assert_eq!(learner::top_features(&model, 1).0[0].0, "x");
}
