mod common;

use common::random_rule;
use dtor::rules::{coverage, Rule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn simplify_preserves_satisfaction() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = 4;
    let points: Vec<Vec<f64>> = (0..1000)
        .map(|_| (0..d).map(|_| rng.gen_range(-4.0..4.0)).collect())
        .collect();
    for case in 0..1000 {
        let rule = random_rule(&mut rng, d, 10);
        let Ok(simple) = rule.simplify() else {
            // contradictory bounds on some feature: nothing may satisfy the original
            assert!(points.iter().all(|p| !rule.satisfies(p).unwrap()), "case {case}");
            continue;
        };
        assert!(simple.len() <= rule.len());
        assert!(simple.len() <= 2 * d);
        for p in &points {
            assert_eq!(rule.satisfies(p).unwrap(), simple.satisfies(p).unwrap(), "case {case}");
        }
    }
}

#[test]
fn empty_rule_covers_everything() {
    let rows: Vec<Vec<f64>> = (0..17).map(|i| vec![i as f64]).collect();
    assert_eq!(coverage(&Rule::default(), &rows).unwrap(), 1.0);
}
