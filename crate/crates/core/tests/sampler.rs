mod common;

use common::{brute_candidates, random_batch_labels, random_vocab, rng, sampler_oracle, sampler_uniformity, STAGES};
use curconmix::sampler::{candidate_pools, hard_pools, sample_pairs, synthesize_negatives, HardPools, SamplerCaps};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn pools_match_brute_force() {
    let f = sampler_oracle(150, 11);
    assert!(f.is_empty(), "{f:?}");
}

#[test]
fn uniform_draws() {
    let z = sampler_uniformity(20_000, 5);
    assert!(z <= 3.0, "max deviation {z:.2} sigma");
}

#[test]
fn default_caps() {
    assert_eq!(SamplerCaps::default(), SamplerCaps { k: 8, n: 32, m: 8, s: 4 });
    assert!(SamplerCaps { k: 0, ..SamplerCaps::default() }.validate().is_err());
}

#[test]
fn synthesis_needs_two_negatives() {
    let mut r = rng(0);
    let one: Vec<&[f64]> = vec![&[1.0, 0.0]];
    let s = synthesize_negatives(&one, 4, 0.4, &mut r).unwrap();
    assert!(s.insufficient && s.negatives.is_empty());
    let two: Vec<&[f64]> = vec![&[1.0, 0.0], &[0.0, 1.0]];
    let s = synthesize_negatives(&two, 4, 0.4, &mut r).unwrap();
    assert_eq!(s.negatives.len(), 4);
    for n in &s.negatives {
        assert_ne!(n.first, n.second);
        assert!((0.0..=1.0).contains(&n.lambda));
        assert!((n.vector[0] + n.vector[1] - 1.0).abs() < 1e-12);
    }
    assert!(synthesize_negatives(&two, 1, 0.0, &mut r).is_err());
}

#[test]
fn empty_positive_pool_marks_anchor_inactive() {
    let hard = vec![HardPools { positives: vec![], negatives: vec![1, 2] }, HardPools { positives: vec![0], negatives: vec![] }];
    let p = sample_pairs(&hard, 8, &mut rng(1));
    assert_eq!(p.anchors[0].positive, None);
    assert_eq!(p.anchors[1].positive, Some(0));
    assert!(p.anchors[1].negatives.is_empty());
    assert_eq!(p.num_active(), 1);
}

proptest! {
    #[test]
    fn pools_partition_the_batch(seed in any::<u64>()) {
        let mut r = rng(seed);
        let vocab = random_vocab(&mut r);
        let b = r.random_range(1..=12);
        let labels = random_batch_labels(&mut r, &vocab, b);
        let stage = STAGES[r.random_range(0..STAGES.len())];
        let pools = candidate_pools(&labels, &vocab, stage).unwrap();
        for (i, p) in pools.iter().enumerate() {
            let mut all: Vec<usize> = p.positives.iter().chain(&p.negatives).copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..b).filter(|&j| j != i).collect::<Vec<_>>());
            prop_assert_eq!((p.positives.clone(), p.negatives.clone()), brute_candidates(&labels, &vocab, stage, i));
            for &j in &p.positives {
                prop_assert!(pools[j].positives.contains(&i));
            }
        }
    }

    #[test]
    fn sampled_pairs_come_from_hard_pools(seed in any::<u64>(), m in 1usize..6) {
        let mut r = rng(seed);
        let vocab = random_vocab(&mut r);
        let b = r.random_range(2..=12);
        let labels = random_batch_labels(&mut r, &vocab, b);
        let feats = common::gaussian(&mut r, b, 3, 1.0);
        let sim = curconmix::sampler::cosine_similarity_matrix(&feats).unwrap();
        let pools = candidate_pools(&labels, &vocab, curconmix::schema::Components::IVT).unwrap();
        let hard = hard_pools(&sim, &pools, 3, 4);
        let pairs = sample_pairs(&hard, m, &mut r);
        for (h, a) in hard.iter().zip(&pairs.anchors) {
            prop_assert_eq!(a.positive.is_some(), !h.positives.is_empty());
            if let Some(p) = a.positive {
                prop_assert!(h.positives.contains(&p));
                prop_assert_eq!(a.negatives.len(), m.min(h.negatives.len()));
                let mut n = a.negatives.clone();
                n.sort();
                n.dedup();
                prop_assert_eq!(n.len(), a.negatives.len());
                prop_assert!(a.negatives.iter().all(|x| h.negatives.contains(x)));
            }
        }
    }
}
