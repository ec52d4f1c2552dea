use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn node(name: &str, parents: &[usize]) -> Node {
    Node {
        name: name.into(),
        cardinality: 2,
        parents: parents.to_vec(),
    }
}

/// A → B with P(A=1)=0.6, P(B=1|A=1)=0.9, P(B=1|A=0)=0.2.
fn chain() -> CausalBayesNet {
    let s = BnStructure::new(vec![node("A", &[]), node("B", &[0])]).unwrap();
    CausalBayesNet::new(s, vec![vec![0.4, 0.6], vec![0.8, 0.2, 0.1, 0.9]]).unwrap()
}

fn collider() -> CausalBayesNet {
    let s = BnStructure::new(vec![node("A", &[]), node("B", &[]), node("C", &[0, 1])]).unwrap();
    CausalBayesNet::new(
        s,
        vec![vec![0.3, 0.7], vec![0.5, 0.5], vec![0.9, 0.1, 0.4, 0.6, 0.2, 0.8, 0.05, 0.95]],
    )
    .unwrap()
}

fn ev(pairs: &[(usize, usize)]) -> Assignment {
    pairs.iter().copied().collect()
}

#[test]
fn edge_counts_of_layered_structures() {
    assert_eq!(build_layered_structure(&[2, 2], 2, 2).unwrap().edge_count(), 8);
    let minimal = build_layered_structure(&[1], 2, 2).unwrap();
    assert_eq!(minimal.edge_count(), 2);
    assert_eq!(minimal.nodes()[1].name, "level0_feat0");
    assert_eq!(minimal.nodes()[2].parents, vec![1]);
    assert!(build_layered_structure(&[], 2, 2).is_err());
    assert!(build_layered_structure(&[2, 0], 2, 2).is_err());
    let s = build_layered_structure(&[3, 4, 2], 2, 2).unwrap();
    assert_eq!(s.edge_count(), 3 + 12 + 8 + 2);
    assert_eq!(s.nodes()[4].name, "level1_feat0");
}

#[test]
fn structure_rejects_cycles_and_bad_parents() {
    assert!(BnStructure::new(vec![node("A", &[1]), node("B", &[0])]).is_err());
    assert!(BnStructure::new(vec![node("A", &[0])]).is_err());
    assert!(BnStructure::new(vec![node("A", &[]), node("A", &[])]).is_err());
    assert!(BnStructure::new(vec![node("A", &[3])]).is_err());
}

#[test]
fn chain_marginal_and_do() {
    let bn = chain();
    let b = bn.infer(1, &Evidence::new()).unwrap();
    assert!((b[1] - 0.62).abs() < 1e-12);
    let d = bn.do_infer(1, &ev(&[(0, 1)]), &Evidence::new()).unwrap();
    assert!((d[1] - 0.9).abs() < 1e-12);
    assert_eq!(bn.infer(1, &ev(&[(1, 0)])).unwrap(), vec![1.0, 0.0]);
    // Bayes: P(A=1|B=1) = 0.54 / 0.62
    let a = bn.infer(0, &ev(&[(1, 1)])).unwrap();
    assert!((a[1] - 0.54 / 0.62).abs() < 1e-12);
}

#[test]
fn chain_effects() {
    let bn = chain();
    let e = bn.causal_effect(0, 1, 1, 1, &Evidence::new()).unwrap();
    assert!((e - 0.28).abs() < 1e-12);
    let e = bn.causal_effect(0, 1, 1, 1, &ev(&[(1, 1)])).unwrap();
    assert!((e - 0.28).abs() < 1e-12);
    assert_eq!(bn.causal_effect(1, 1, 0, 1, &Evidence::new()).unwrap(), 0.0);
    let x = bn.expected_causal_effect(0, 1, 1, &Evidence::new(), EffectVariant::ExpectedAbs).unwrap();
    assert!((x - 0.336).abs() < 1e-12);
    let s = bn.expected_causal_effect(0, 1, 1, &Evidence::new(), EffectVariant::Signed).unwrap();
    assert!(s.abs() < 1e-12);
    let m = bn.expected_causal_effect(0, 1, 1, &Evidence::new(), EffectVariant::Max).unwrap();
    assert!((m - 0.42).abs() < 1e-12);
    assert!(bn.causal_effect(0, 1, 0, 1, &Evidence::new()).is_err());
}

#[test]
fn observed_target_makes_other_outcome_effect_zero() {
    let bn = chain();
    let z = ev(&[(1, 1)]);
    for v in 0..2 {
        assert_eq!(bn.causal_effect(0, v, 1, 0, &z).unwrap(), 0.0);
    }
    for variant in [EffectVariant::ExpectedAbs, EffectVariant::Signed, EffectVariant::Max] {
        assert_eq!(bn.expected_causal_effect(0, 1, 0, &z, variant).unwrap(), 0.0);
    }
    assert!(bn.expected_causal_effect(0, 1, 1, &z, EffectVariant::ExpectedAbs).unwrap() > 0.0);
}

#[test]
fn collider_do_leaves_parents_alone() {
    let bn = collider();
    let prior = bn.infer(0, &Evidence::new()).unwrap();
    for c in 0..2 {
        let d = bn.do_infer(0, &ev(&[(2, c)]), &Evidence::new()).unwrap();
        assert!((d[1] - prior[1]).abs() < 1e-15);
        // conditioning instead explains away
        let cond = bn.infer(0, &ev(&[(2, c)])).unwrap();
        assert!((cond[1] - prior[1]).abs() > 1e-3);
    }
}

#[test]
fn impossible_evidence_and_forced_overlap() {
    let s = BnStructure::new(vec![node("A", &[]), node("B", &[0])]).unwrap();
    let bn = CausalBayesNet::new(s, vec![vec![1.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]]).unwrap();
    assert!(matches!(bn.infer(1, &ev(&[(0, 1)])), Err(Error::ImpossibleEvidence)));
    assert!(matches!(bn.infer(0, &ev(&[(1, 1)])), Err(Error::ImpossibleEvidence)));
    assert!(bn.do_infer(1, &ev(&[(0, 1)]), &ev(&[(0, 1)])).is_err());
    assert!(bn.infer(0, &ev(&[(1, 2)])).is_err());
    assert!(matches!(bn.infer(7, &Evidence::new()), Err(Error::UnknownNode(_))));
}

#[test]
fn cpt_validation() {
    let s = BnStructure::new(vec![node("A", &[])]).unwrap();
    assert!(CausalBayesNet::new(s.clone(), vec![vec![0.5, 0.6]]).is_err());
    assert!(CausalBayesNet::new(s.clone(), vec![vec![1.0]]).is_err());
    assert!(CausalBayesNet::new(s, vec![vec![1.5, -0.5]]).is_err());
}

fn obs(values: &[usize], intervened: &[bool]) -> Observation {
    Observation {
        values: values.to_vec(),
        intervened: intervened.to_vec(),
    }
}

#[test]
fn deterministic_copy_without_smoothing() {
    let s = BnStructure::new(vec![node("A", &[]), node("B", &[0])]).unwrap();
    let data: Vec<_> = (0..10).map(|i| obs(&[i % 2, i % 2], &[false, false])).collect();
    let bn = fit_cpds(&s, &data, 0.0).unwrap();
    assert_eq!(bn.cpt(1), &[1.0, 0.0, 0.0, 1.0]);
    assert_eq!(bn.cpt(0), &[0.5, 0.5]);
}

#[test]
fn no_data_gives_uniform_rows() {
    let s = build_layered_structure(&[2], 2, 2).unwrap();
    let bn = fit_cpds(&s, &[], 1.0).unwrap();
    let bn0 = fit_cpds(&s, &[], 0.0).unwrap();
    for i in 0..s.len() {
        assert!(bn.cpt(i).iter().all(|&p| p == 0.5));
        assert_eq!(bn.cpt(i), bn0.cpt(i));
    }
}

#[test]
fn intervened_rows_do_not_count_for_own_cpt() {
    let s = BnStructure::new(vec![node("A", &[]), node("B", &[0]), node("C", &[1])]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let clean: Vec<_> = (0..200)
        .map(|_| {
            let a = rng.random_range(0..2);
            let b = if rng.random_bool(0.8) { a } else { 1 - a };
            obs(&[a, b, b], &[false, false, false])
        })
        .collect();
    let forced: Vec<_> = clean
        .iter()
        .map(|o| {
            let mut f = o.clone();
            f.values[1] = 0;
            f.values[2] = 0;
            f.intervened[1] = true;
            f
        })
        .collect();
    let mixed: Vec<_> = clean.iter().cloned().chain(forced.iter().cloned()).collect();
    let a = fit_cpds(&s, &mixed, 1.0).unwrap();
    let b = fit_cpds(&s, &clean, 1.0).unwrap();
    assert_eq!(a.cpt(1), b.cpt(1));
    // forced B=0 still feeds C's counts
    assert_ne!(a.cpt(2), b.cpt(2));
    assert!(fit_cpds(&s, &mixed, -1.0).is_err());
    assert!(fit_cpds(&s, &[obs(&[0, 2, 0], &[false; 3])], 1.0).is_err());
}

#[test]
fn json_round_trip_is_exact() {
    let s = build_layered_structure(&[2, 3], 2, 2).unwrap();
    let bn = CausalBayesNet::with_random_cpts(s, &mut ChaCha8Rng::seed_from_u64(1));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bn.json");
    save_bn(&p, &bn).unwrap();
    assert_eq!(load_bn(&p).unwrap(), bn);
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.contains("\"parents\": [\n        \"level0_feat0\""));
}

#[test]
fn joint_state_limit() {
    let s = build_layered_structure(&[10, 10], 2, 2).unwrap();
    let bn = CausalBayesNet::with_random_cpts(s, &mut ChaCha8Rng::seed_from_u64(1));
    assert!(brute_force_joint(&bn).is_err());
}

/// Layered net with at most 10 binary nodes in total.
fn random_net(seed: u64) -> CausalBayesNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = rng.random_range(1..=3);
    let mut sizes = Vec::new();
    let mut budget = 8;
    for l in 0..levels {
        let remaining_levels = levels - l - 1;
        let n = rng.random_range(1..=(budget - remaining_levels).min(4));
        budget -= n;
        sizes.push(n);
    }
    let s = build_layered_structure(&sizes, 2, 2).unwrap();
    CausalBayesNet::with_random_cpts(s, &mut rng)
}

fn random_assignment(rng: &mut ChaCha8Rng, n: usize, skip: &[usize], p: f64) -> Assignment {
    let mut out = Assignment::new();
    for i in (0..n).filter(|i| !skip.contains(i)) {
        if rng.random_bool(p) {
            out.insert(i, rng.random_range(0..2));
        }
    }
    out
}

#[test]
fn elimination_matches_joint_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..40 {
        let bn = random_net(seed);
        let n = bn.nodes().len();
        let joint = brute_force_joint(&bn).unwrap();
        assert!((joint.total() - 1.0).abs() < 1e-9);
        for q in 0..n {
            let z = random_assignment(&mut rng, n, &[], 0.3);
            let forced = random_assignment(&mut rng, n, &z.keys().copied().collect::<Vec<_>>(), 0.2);
            let oracle = bn.mutilated(&forced).unwrap();
            let expected = brute_force_joint(&oracle).unwrap().conditional(q, &z);
            let got = bn.do_infer(q, &forced, &z);
            match (expected, got) {
                (Ok(e), Ok(g)) => {
                    for (a, b) in e.iter().zip(&g) {
                        assert!((a - b).abs() < 1e-9, "seed {seed} q {q}: {e:?} vs {g:?}");
                    }
                }
                (Err(Error::ImpossibleEvidence), Err(Error::ImpossibleEvidence)) => {}
                (e, g) => panic!("seed {seed}: {e:?} vs {g:?}"),
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn non_descendant_effects_vanish(seed in 0u64..10_000, v in 0usize..2, t in 0usize..2) {
        let bn = random_net(seed);
        let n = bn.nodes().len();
        for xi in 0..n {
            let desc = bn.structure().descendants(xi);
            for xj in (0..n).filter(|j| *j != xi && !desc.contains(j)) {
                prop_assert_eq!(bn.causal_effect(xi, v, xj, t, &Evidence::new()).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn do_on_root_is_conditioning(seed in 0u64..10_000, v in 0usize..2) {
        let bn = random_net(seed);
        let n = bn.nodes().len();
        for q in 1..n {
            let d = bn.do_infer(q, &ev(&[(0, v)]), &Evidence::new()).unwrap();
            let c = bn.infer(q, &ev(&[(0, v)])).unwrap();
            for (a, b) in d.iter().zip(&c) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn signed_expected_effect_of_root_vanishes(seed in 0u64..10_000, t in 0usize..2) {
        let bn = random_net(seed);
        let target = bn.nodes().len() - 1;
        let s = bn.expected_causal_effect(0, target, t, &Evidence::new(), EffectVariant::Signed).unwrap();
        prop_assert!(s.abs() < 1e-12);
    }

    #[test]
    fn fitted_rows_are_distributions(seed in 0u64..10_000, alpha in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = build_layered_structure(&[2, 2], 2, 3).unwrap();
        let data: Vec<_> = (0..30)
            .map(|_| {
                let mut values: Vec<usize> = (0..6).map(|_| rng.random_range(0..2)).collect();
                values[5] = rng.random_range(0..3);
                let intervened = (0..6).map(|i| i > 0 && i < 5 && rng.random_bool(0.1)).collect();
                Observation { values, intervened }
            })
            .collect();
        let bn = fit_cpds(&s, &data, alpha).unwrap();
        for i in 0..s.len() {
            for row in bn.cpt(i).chunks(s.nodes()[i].cardinality) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
