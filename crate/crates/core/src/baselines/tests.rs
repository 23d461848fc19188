use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::{Error, Result};
use crate::metrics::{auroc, ScoredSet};
use crate::schema::{Dataset, FeatureSchema, FeatureSpec, Record, Stage};

fn continuous_schema(d: usize) -> FeatureSchema {
    let features = (0..d)
        .map(|j| FeatureSpec::continuous(&format!("x{j}"), Stage::Admission))
        .collect();
    FeatureSchema::new(features, "y").unwrap()
}

fn uniform_rows(d: usize, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|_| Record::new((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(), rng.gen_range(0..2)))
        .collect();
    Dataset::new(continuous_schema(d), records).unwrap()
}

fn linear(w: Vec<f64>) -> impl Fn(&[Record]) -> Result<Vec<f64>> {
    move |rows: &[Record]| {
        Ok(rows
            .iter()
            .map(|r| r.values.iter().zip(&w).map(|(a, b)| a * b).sum())
            .collect())
    }
}

fn separable(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|_| {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            let s = a + 0.5 * b;
            // leave a margin around the boundary
            let a = if s.abs() < 0.1 { a + 0.2 * s.signum() } else { a };
            Record::new(vec![a, b], u8::from(a + 0.5 * b > 0.0))
        })
        .collect();
    Dataset::new(continuous_schema(2), records).unwrap()
}

#[test]
fn logistic_separates_separable_data() {
    let ds = separable(400, 1);
    let (m, trace) = train_logistic_traced(&ds, 1e-3, DEFAULT_MAX_ITERS).unwrap();
    let p = m.predict_many(&ds.records).unwrap();
    let a = auroc(&ScoredSet::new(p, ds.labels()).unwrap()).unwrap();
    assert!(a >= 0.99, "{a}");
    assert!(trace.windows(2).all(|w| w[1] <= w[0]), "objective must not increase");
    assert!(m.iterations <= DEFAULT_MAX_ITERS);
}

#[test]
fn heavy_ridge_shrinks_to_balanced_constant() {
    let ds = uniform_rows(3, 300, 2);
    let m = train_logistic(&ds, 1e6, DEFAULT_MAX_ITERS).unwrap();
    assert!(m.weights.iter().all(|w| w.abs() < 1e-5), "{:?}", m.weights);
    // class weighting balances the classes, so the prior-weighted constant is 1/2
    for p in m.predict_many(&ds.records).unwrap() {
        assert!((p - 0.5).abs() < 1e-3, "{p}");
    }
}

#[test]
fn duplicating_records_leaves_the_fit_unchanged() {
    let ds = uniform_rows(3, 200, 3);
    let mut twice = ds.records.clone();
    twice.extend(ds.records.iter().cloned());
    let dup = Dataset::new(ds.schema.clone(), twice).unwrap();
    let a = train_logistic(&ds, 0.1, 300).unwrap();
    let b = train_logistic(&dup, 0.1, 300).unwrap();
    for (x, y) in a.weights.iter().zip(&b.weights) {
        assert!((x - y).abs() < 1e-8);
    }
    assert!((a.bias - b.bias).abs() < 1e-8);
}

#[test]
fn logistic_rejects_single_class_and_bad_lambda() {
    let mut ds = uniform_rows(2, 20, 4);
    assert!(train_logistic(&ds, -1.0, 10).is_err());
    ds.records.iter_mut().for_each(|r| r.label = 1);
    assert!(matches!(train_logistic(&ds, 0.0, 10), Err(Error::Argument(_))));
}

#[test]
fn logistic_prediction_values() {
    let ds = uniform_rows(2, 50, 5);
    let mut m = train_logistic(&ds, 0.0, 0).unwrap();
    assert!(m.weights.iter().all(|&w| w == 0.0) && m.bias == 0.0);
    assert_eq!(predict_logistic(&m, &ds.records[0]).unwrap(), 0.5);

    m.normalization.entries.clear();
    m.weights = vec![1.0, 0.0];
    m.bias = 9.0;
    let p = predict_logistic(&m, &Record::new(vec![1.0, 0.3], 0)).unwrap();
    assert!((p - 0.9999546).abs() < 1e-7, "{p}");
    let mut last = 0.0;
    for k in 0..20 {
        let p = predict_logistic(&m, &Record::new(vec![-5.0 + 0.5 * k as f64, 0.0], 0)).unwrap();
        assert!(p >= last);
        last = p;
    }
}

fn mixed_dataset(n: usize, seed: u64) -> Dataset {
    let schema = FeatureSchema::new(
        vec![
            FeatureSpec::continuous("age", Stage::Admission),
            FeatureSpec::categorical("severity", 4, Stage::HospitalAssessment).unwrap(),
            FeatureSpec::binary("mt", Stage::HospitalAssessment),
        ],
        "y",
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|_| {
            let sev = rng.gen_range(0..4u32);
            let age = rng.gen_range(40.0..90.0);
            let mt = rng.gen_range(0..2u32);
            let z = 0.05 * (age - 65.0) + 0.8 * sev as f64 - 1.2 + 0.7 * mt as f64;
            let y = u8::from(rng.gen::<f64>() < crate::diff::sigmoid(z));
            Record::new(vec![age, sev as f64, mt as f64], y)
        })
        .collect();
    Dataset::new(schema, records).unwrap()
}

#[test]
fn one_hot_columns_resum_to_feature_values() {
    let ds = mixed_dataset(500, 6);
    let m = train_logistic(&ds, 1e-2, DEFAULT_MAX_ITERS).unwrap();
    assert_eq!(m.expansion, vec![0..1, 1..5, 5..6]);
    let x = &ds.records[0];
    let cols = m.column_contributions(x, &ds.records[..50]).unwrap();
    let per_feature = m.resum_columns(&cols);
    assert_eq!(per_feature.len(), 3);
    assert!((per_feature[1] - cols[1..5].iter().sum::<f64>()).abs() < 1e-15);
    // linear model: contributions add up to logit(x) minus the mean background logit
    let mean_logit: f64 = ds.records[..50].iter().map(|r| m.logit(&r.values).unwrap()).sum::<f64>() / 50.0;
    let total: f64 = per_feature.iter().sum();
    assert!((total - (m.logit(&x.values).unwrap() - mean_logit)).abs() < 1e-10);
    assert!(m.predict_many(&[Record::new(vec![50.0, 4.0, 0.0], 0)]).is_err());
}

#[test]
fn logistic_round_trip() {
    let ds = mixed_dataset(200, 7);
    let m = train_logistic(&ds, 1e-2, 200).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("logistic.json");
    m.save(&path).unwrap();
    assert_eq!(LogisticModel::load(&path).unwrap(), m);
}

#[test]
fn exact_shapley_linear_closed_form() {
    let bg = uniform_rows(5, 40, 8);
    let w = vec![0.5, -1.0, 2.0, 0.0, 0.25];
    let f = linear(w.clone());
    let x = Record::new(vec![0.3, -0.7, 0.1, 0.9, -0.2], 0);
    let r = exact_shapley(&f, &bg, &x, DEFAULT_D_MAX).unwrap();
    assert_eq!(r.method, AttributionMethod::ExactShapley);
    for i in 0..5 {
        let mu: f64 = bg.records.iter().map(|b| b.values[i]).sum::<f64>() / 40.0;
        assert!((r.values[i] - w[i] * (x.values[i] - mu)).abs() < 1e-9);
    }
    // null player: exactly zero
    assert_eq!(r.values[3], 0.0);
}

#[test]
fn exact_shapley_axioms_on_nonlinear_scores() {
    let bg = uniform_rows(4, 30, 9);
    let f = |rows: &[Record]| -> Result<Vec<f64>> {
        Ok(rows
            .iter()
            .map(|r| {
                let v = &r.values;
                crate::diff::sigmoid(v[0] * v[1] + v[2] - 0.5 * v[3] * v[3])
            })
            .collect())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10 {
        let x = Record::new((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(), 0);
        let r = exact_shapley(&f, &bg, &x, DEFAULT_D_MAX).unwrap();
        let fx = f(std::slice::from_ref(&x)).unwrap()[0];
        let mean: f64 = f(&bg.records).unwrap().iter().sum::<f64>() / 30.0;
        assert!((r.values.iter().sum::<f64>() - (fx - mean)).abs() < 1e-9);
    }
    // symmetric features on a symmetric input and background
    let sym = |rows: &[Record]| -> Result<Vec<f64>> {
        Ok(rows.iter().map(|r| (r.values[0] * r.values[1]).tanh() + r.values[2]).collect())
    };
    let bg2 = Dataset::new(
        continuous_schema(3),
        vec![Record::new(vec![0.2, 0.2, 0.0], 0), Record::new(vec![-0.4, -0.4, 1.0], 1)],
    )
    .unwrap();
    let r = exact_shapley(&sym, &bg2, &Record::new(vec![0.9, 0.9, 0.3], 0), 12).unwrap();
    assert!((r.values[0] - r.values[1]).abs() < 1e-12);
}

#[test]
fn exact_shapley_capability_and_input_errors() {
    let bg = uniform_rows(13, 5, 11);
    let f = linear(vec![1.0; 13]);
    let x = bg.records[0].clone();
    assert!(matches!(exact_shapley(&f, &bg, &x, DEFAULT_D_MAX), Err(Error::Capability(_))));
    let small = uniform_rows(3, 5, 11);
    let empty = Dataset::new(small.schema.clone(), Vec::new()).unwrap();
    assert!(exact_shapley(&linear(vec![1.0; 3]), &empty, &small.records[0], 12).is_err());
    assert!(exact_shapley(&linear(vec![1.0; 3]), &small, &Record::new(vec![0.0], 0), 12).is_err());
}

fn logistic_score(m: &LogisticModel) -> impl Fn(&[Record]) -> Result<Vec<f64>> + '_ {
    move |rows: &[Record]| m.predict_many(rows)
}

fn nonlinear_fixture(d: usize, seed: u64) -> (LogisticModel, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let records = (0..600)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
            let y = u8::from(rng.gen::<f64>() < crate::diff::sigmoid(z));
            Record::new(v, y)
        })
        .collect();
    let ds = Dataset::new(continuous_schema(d), records).unwrap();
    let m = train_logistic(&ds, 1e-3, DEFAULT_MAX_ITERS).unwrap();
    (m, ds)
}

#[test]
fn sampled_matches_exact_with_all_coalitions() {
    let (m, ds) = nonlinear_fixture(6, 12);
    let bg = ds.subset(&(0..50).collect::<Vec<_>>());
    let f = logistic_score(&m);
    let x = &ds.records[100];
    let exact = exact_shapley(&f, &bg, x, 12).unwrap();
    let sampled = sampled_shapley(&f, &bg, x, 64, 0).unwrap();
    for (a, b) in exact.values.iter().zip(&sampled.values) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn sampled_estimates_converge_toward_exact() {
    let (m, ds) = nonlinear_fixture(10, 13);
    let bg = ds.subset(&(0..40).collect::<Vec<_>>());
    let f = logistic_score(&m);
    let x = &ds.records[200];
    let exact = exact_shapley(&f, &bg, x, 12).unwrap();
    let fx = m.predict_many(std::slice::from_ref(x)).unwrap()[0];
    let mean: f64 = f(&bg.records).unwrap().iter().sum::<f64>() / 40.0;
    for seed in 0..5 {
        let s = sampled_shapley(&f, &bg, x, 600, seed).unwrap();
        let worst = exact
            .values
            .iter()
            .zip(&s.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.05, "seed {seed}: {worst}");
        assert!((s.values.iter().sum::<f64>() - (fx - mean)).abs() < 1e-9);
        assert_eq!(s, sampled_shapley(&f, &bg, x, 600, seed).unwrap());
    }
}

#[test]
fn sampled_constant_score_and_argument_checks() {
    let bg = uniform_rows(5, 10, 14);
    let constant = |rows: &[Record]| -> Result<Vec<f64>> { Ok(vec![0.3; rows.len()]) };
    let r = sampled_shapley(&constant, &bg, &bg.records[0], 20, 1).unwrap();
    assert!(r.values.iter().all(|v| v.abs() < 1e-9));
    assert!(sampled_shapley(&constant, &bg, &bg.records[0], 11, 1).is_err());
    let one = uniform_rows(1, 10, 15);
    let r = sampled_shapley(&linear(vec![2.0]), &one, &one.records[0], 4, 0).unwrap();
    let mu = one.records.iter().map(|b| b.values[0]).sum::<f64>() / 10.0;
    assert!((r.values[0] - 2.0 * (one.records[0].values[0] - mu)).abs() < 1e-12);
}

#[test]
fn permutation_of_constant_or_ignored_column_is_zero() {
    let mut ds = uniform_rows(3, 10_000, 16);
    ds.records.iter_mut().for_each(|r| {
        r.values[1] = 0.25;
        r.label = u8::from(r.values[0] > 0.0);
    });
    let f = |rows: &[Record]| -> Result<Vec<f64>> {
        Ok(rows.iter().map(|r| r.values[0] + r.values[1]).collect())
    };
    for metric in [ImportanceMetric::Auroc, ImportanceMetric::F1] {
        let r = permutation_importance(&f, &ds, metric, 10, 3).unwrap();
        assert_eq!(r.method, AttributionMethod::Permutation);
        assert_eq!(r.values[1], 0.0);
        assert!(r.values[2].abs() < 1e-3);
        assert!(r.values[0] > 0.4, "{metric:?}: {}", r.values[0]);
        assert_eq!(r, permutation_importance(&f, &ds, metric, 10, 3).unwrap());
    }
}

#[test]
fn permutation_errors() {
    let mut ds = uniform_rows(2, 20, 17);
    let f = linear(vec![1.0, 1.0]);
    assert!(permutation_importance(&f, &ds, ImportanceMetric::Auroc, 0, 0).is_err());
    ds.records.iter_mut().for_each(|r| r.label = 0);
    assert!(matches!(
        permutation_importance(&f, &ds, ImportanceMetric::Auroc, 1, 0),
        Err(Error::UndefinedMetric(_))
    ));
}
