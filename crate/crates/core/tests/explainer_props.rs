mod common;

use common::two_blobs_with_outliers;
use dtor::data::Dataset;
use dtor::detect::{Gmm, GmmParams, IsolationForest, IsolationForestParams, Scorer, Threshold};
use dtor::explainer::{explain_instance, DtorConfig};
use dtor::rules::validity;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn blob(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| vec![rng.sample(StandardNormal), rng.sample(StandardNormal)])
        .collect()
}

#[test]
fn up_weighting_pulls_the_leaf_toward_the_instance() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..100 {
        // beta = 0.1 * n only outweighs a unit row from n = 10 on
        let n = rng.gen_range(10..60);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..0.0)).collect();
        let x_expl = vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let y_expl = rng.gen_range(-1.0..0.0);
        let e = explain_instance(&x_expl, y_expl, &x, &y, &DtorConfig::default()).unwrap();
        let leaf_value = e.rule.leaf_value.unwrap();

        // unit-weight mean over the same leaf membership, instance included
        let leaf_path = e.tree.decision_path(&x_expl).unwrap();
        let in_leaf = |r: &[f64]| e.tree.decision_path(r).unwrap() == leaf_path;
        let mut members: Vec<f64> = x.iter().zip(&y).filter(|(r, _)| in_leaf(r)).map(|(_, &v)| v).collect();
        members.push(y_expl);
        let unweighted = members.iter().sum::<f64>() / members.len() as f64;
        assert!(
            (leaf_value - y_expl).abs() <= (unweighted - y_expl).abs() + 1e-12,
            "case {case}, n = {n}"
        );
    }
}

#[test]
fn rules_are_valid_and_bounded_by_depth() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for case in 0..100 {
        let n = rng.gen_range(2..80);
        let d = rng.gen_range(1..5);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(0..5) as f64).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..0.0)).collect();
        let x_expl = x[rng.gen_range(0..n)].clone();
        let mut cfg = DtorConfig::default();
        cfg.tree.max_depth = rng.gen_range(0..6);
        let e = explain_instance(&x_expl, rng.gen_range(-1.0..0.0), &x, &y, &cfg).unwrap();
        assert!(validity(&e.rule, &x_expl).unwrap(), "case {case}");
        assert!(e.rule.len() <= cfg.tree.max_depth);
    }
}

#[test]
fn planted_outlier_gets_a_rule_isolating_low_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x = blob(&mut rng, 200);
    let forest = IsolationForest::fit(&x, &IsolationForestParams::default(), 1).unwrap();
    let y = forest.score(&x).unwrap();
    let x_expl = vec![6.0, -6.0];
    let y_expl = forest.score(std::slice::from_ref(&x_expl)).unwrap()[0];
    let e = explain_instance(&x_expl, y_expl, &x, &y, &DtorConfig::default()).unwrap();
    assert!(!e.rule.is_empty());
    assert!(validity(&e.rule, &x_expl).unwrap());
    let covered: Vec<f64> = x
        .iter()
        .zip(&y)
        .filter(|(r, _)| e.rule.satisfies(r).unwrap())
        .map(|(_, &s)| s)
        .collect();
    let global = y.iter().sum::<f64>() / y.len() as f64;
    if !covered.is_empty() {
        assert!(covered.iter().sum::<f64>() / (covered.len() as f64) < global);
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

#[test]
fn far_point_scores_below_the_blob_median_for_both_detectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let x = blob(&mut rng, 300);
    let far = vec![vec![9.0, 9.0]];
    let forest = IsolationForest::fit(&x, &IsolationForestParams::default(), 2).unwrap();
    let gmm = Gmm::fit(&Dataset::from_rows(x.clone()).unwrap(), &GmmParams::default(), 2).unwrap();
    let detectors: [&dyn Scorer; 2] = [&forest, &gmm];
    for det in detectors {
        let s = det.score(&x).unwrap();
        assert!(det.score(&far).unwrap()[0] < median(&s));
    }
}

#[test]
fn both_detectors_flag_planted_far_outliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let (x, planted) = two_blobs_with_outliers(&mut rng, 1000, 50);
    let forest = IsolationForest::fit(&x, &IsolationForestParams::default(), 3).unwrap();
    let gmm = Gmm::fit(&Dataset::from_rows(x.clone()).unwrap(), &GmmParams::default(), 3).unwrap();
    let detectors: [&dyn Scorer; 2] = [&forest, &gmm];
    for det in detectors {
        let s = det.score(&x).unwrap();
        let th = Threshold::from_contamination(&s, 0.05).unwrap();
        let hits = planted.iter().filter(|&&i| th.is_outlier(s[i])).count();
        assert!(hits as f64 >= 0.8 * planted.len() as f64, "{hits} of {}", planted.len());
    }
}
