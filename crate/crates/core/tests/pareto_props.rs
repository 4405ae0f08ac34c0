mod common;

use proptest::prelude::*;

use codesign::accuracy::SurrogateParams;
use codesign::pareto::{pareto_front, read_bundle_scores, score_bundles, write_bundle_scores, BundleScore, BundleSelection};
use codesign::perf::{AccelMode, ResourceWeights};
use common::{platform, small_space};

fn dominates(q: (f64, f64), p: (f64, f64)) -> bool {
    q.0 <= p.0 && q.1 >= p.1 && (q.0 < p.0 || q.1 > p.1)
}

/// O(n^2) filter; among identical points the first stands for all.
fn brute_force(pts: &[(f64, f64)]) -> Vec<usize> {
    (0..pts.len())
        .filter(|&i| !pts.iter().enumerate().any(|(j, &q)| dominates(q, pts[i]) || (j < i && q == pts[i])))
        .collect()
}

fn points() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop_oneof![
        prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..64),
        prop::collection::vec(((0u8..5).prop_map(f64::from), (0u8..5).prop_map(f64::from)), 0..64),
    ]
}

#[test]
fn examples() {
    assert_eq!(pareto_front(&[(1.0, 0.9), (2.0, 0.95), (3.0, 0.94)]), vec![0, 1]);
    assert_eq!(pareto_front(&[(4.0, 0.1)]), vec![0]);
    assert_eq!(pareto_front(&[(1.0, 1.0); 5]), vec![0]);
    assert!(pareto_front(&[]).is_empty());
}

#[test]
fn dominating_bundle_wins_alone() {
    let s = |id: &str, r: f64, a: f64| BundleScore { bundle_id: id.into(), resource_scalar: r, accuracy: a, points_evaluated: 1 };
    let sel = BundleSelection::from_scores(vec![s("a", 0.5, 0.8), s("b", 0.3, 0.9)]);
    assert_eq!(sel.front, vec!["b".to_string()]);
    let sel = BundleSelection::from_scores(vec![s("only", 0.5, 0.8)]);
    assert_eq!(sel.front, vec!["only".to_string()]);
}

#[test]
fn scored_front_matches_oracle_and_round_trips() {
    let space = small_space();
    let p = platform(4.0, 10, AccelMode::Pipelined);
    let sel = score_bundles(&space, &p, &SurrogateParams::default(), &ResourceWeights::default(), 5, 3).unwrap();
    let pts: Vec<(f64, f64)> = sel.scores.iter().map(|s| (s.resource_scalar, s.accuracy)).collect();
    let want: Vec<String> = brute_force(&pts).into_iter().map(|i| sel.scores[i].bundle_id.clone()).collect();
    let mut got = sel.front.clone();
    got.sort();
    let mut want_sorted = want;
    want_sorted.sort();
    assert_eq!(got, want_sorted);

    let mut buf = Vec::new();
    write_bundle_scores(&sel, &mut buf).unwrap();
    let (scores, on_front) = read_bundle_scores(buf.as_slice()).unwrap();
    for (s, f) in scores.iter().zip(&on_front) {
        assert_eq!(*f, sel.on_front(&s.bundle_id));
    }
    assert_eq!(scores.len(), sel.scores.len());

    let again = score_bundles(&space, &p, &SurrogateParams::default(), &ResourceWeights::default(), 5, 3).unwrap();
    assert_eq!(again, sel);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn matches_brute_force(pts in points()) {
        let mut got = pareto_front(&pts);
        let by_cost = got.windows(2).all(|w| pts[w[0]].0 <= pts[w[1]].0);
        prop_assert!(by_cost);
        got.sort_unstable();
        prop_assert_eq!(got, brute_force(&pts));
    }

    #[test]
    fn front_is_an_antichain(pts in points()) {
        let f = pareto_front(&pts);
        for &a in &f {
            for &b in &f {
                prop_assert!(a == b || !dominates(pts[a], pts[b]));
            }
        }
    }

    #[test]
    fn scaling_costs_keeps_membership(pts in points(), k in 0.01f64..100.0) {
        let scaled: Vec<(f64, f64)> = pts.iter().map(|&(c, v)| (c * k, v)).collect();
        let mut a = pareto_front(&pts);
        let mut b = pareto_front(&scaled);
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }
}
