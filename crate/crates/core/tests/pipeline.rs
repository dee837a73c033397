mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use smi_meta::episodes::{gen_synthetic_with_split, labeled_count, ClassSplit, Episode, EpisodeShape, Split, SyntheticDataset};
use smi_meta::select::{self, selection_accuracy, Budget, Phase, SelectedSubset, SelectionOrigin};
use smi_meta::strategy::{acquire, AcquireRequest};
use smi_meta::{init_params, net, sample_episode, MaximizerKind, ParamVector, SetFunctionKind, StrategyKind};

use common::skewed_model;

fn dataset() -> SyntheticDataset {
    gen_synthetic_with_split(5, 8, 120, 0.3, ClassSplit { train: 12, val: 6, test: 12 })
        .unwrap()
        .split_labeled(0.2, 5)
        .unwrap()
}

fn ids(xs: &[usize]) -> HashSet<usize> {
    xs.iter().copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn episodes_respect_the_labeled_wall(seed in any::<u64>(), ood in 0usize..4) {
        let ds = dataset();
        let shape = EpisodeShape { way: 5, shot: 2, query: 5, unlabeled: 20, ood };
        let ep = sample_episode(&ds, Split::Train, shape, seed).unwrap();
        let (s, q, u) = (ids(&ep.support_ids), ids(&ep.query_ids), ids(&ep.unlabeled_ids));
        prop_assert!(s.is_disjoint(&q) && s.is_disjoint(&u) && q.is_disjoint(&u));
        prop_assert!(ep.support_ids.iter().chain(&ep.query_ids).all(|&i| ds.labeled_mask[i]));
        prop_assert!(ep.unlabeled_ids.iter().all(|&i| !ds.labeled_mask[i]));
        prop_assert_eq!(ep.unlabeled_len(), (5 + ood) * 20);
        for (h, &i) in ep.unlabeled_truth.iter().zip(&ep.unlabeled_ids) {
            prop_assert_eq!(h.class_id, ds.class_of[i]);
            prop_assert_eq!(h.is_ood, !ep.classes.contains(&h.class_id));
            prop_assert_eq!(h.label.is_none(), h.is_ood);
        }
        for c in ep.classes.iter().chain(&ep.distractors) {
            prop_assert_eq!(ds.class_split[*c], Split::Train);
            let n = ep.unlabeled_truth.iter().filter(|h| h.class_id == *c).count();
            prop_assert_eq!(n, 20);
        }
        let again = sample_episode(&ds, Split::Train, shape, seed).unwrap();
        prop_assert_eq!(ep.unlabeled_ids, again.unlabeled_ids);
        prop_assert_eq!(ep.support_ids, again.support_ids);
    }

    #[test]
    fn selection_is_balanced_and_disjoint(seed in any::<u64>(), model_seed in 0u64..50) {
        let ds = dataset();
        let ep = sample_episode(&ds, Split::Test, EpisodeShape { unlabeled: 20, ood: 2, ..Default::default() }, seed).unwrap();
        let model = init_params(model_seed, &[8, 6, 5]).unwrap();
        let budget = Budget::new(10, 20, 5).unwrap();
        let mut acc = SelectedSubset::empty(SelectionOrigin::Inner);
        for t in 1..=3 {
            let fresh = select::inner_select(&model, &ep, &acc, budget, SetFunctionKind::Flmi, MaximizerKind::Lazy, Phase::MetaTrain, t, seed).unwrap();
            prop_assert_eq!(fresh.label_counts(5), vec![2; 5]);
            acc.extend(fresh);
        }
        prop_assert_eq!(ids(&acc.indices()).len(), 30);
        let outer = select::outer_select(&model, &ep, &acc, budget, SetFunctionKind::Gcmi, MaximizerKind::Lazy, seed).unwrap();
        prop_assert_eq!(outer.label_counts(5), vec![4; 5]);
        prop_assert!(ids(&outer.indices()).is_disjoint(&ids(&acc.indices())));
    }

    #[test]
    fn pseudo_label_takes_most_confident(seed in any::<u64>(), model_seed in 0u64..50, budget in 1usize..40) {
        let ds = dataset();
        let ep = sample_episode(&ds, Split::Test, EpisodeShape { unlabeled: 10, ..Default::default() }, seed).unwrap();
        let model = init_params(model_seed, &[8, 6, 5]).unwrap();
        let pool: Vec<usize> = (0..ep.unlabeled_len()).collect();
        let got = acquire(StrategyKind::PL, &request(&model, &ep, &pool, budget)).unwrap();
        prop_assert!(got.len() <= budget);
        let conf = |i: usize| {
            let p = net::forward(&model, &ep.unlabeled_x[i]).unwrap();
            p[net::argmax(&p)]
        };
        let chosen = ids(&got.indices());
        let floor = got.indices().into_iter().map(conf).fold(f64::INFINITY, f64::min);
        for i in pool.into_iter().filter(|i| !chosen.contains(i)) {
            prop_assert!(conf(i) <= floor);
        }
    }
}

fn request<'a>(model: &'a ParamVector, ep: &'a Episode, pool: &'a [usize], budget: usize) -> AcquireRequest<'a> {
    AcquireRequest {
        model,
        episode: ep,
        pool,
        total_budget: budget,
        phase: Phase::MetaTrain,
        maximizer: MaximizerKind::Lazy,
        origin: SelectionOrigin::Inner,
        step: 1,
        seed: 0,
    }
}

#[test]
fn episode_sizes() {
    let ds = gen_synthetic_with_split(1, 8, 400, 0.3, ClassSplit { train: 20, val: 12, test: 12 })
        .unwrap()
        .split_labeled(0.05, 1)
        .unwrap();
    let ep = sample_episode(&ds, Split::Test, EpisodeShape::default(), 9).unwrap();
    assert_eq!((ep.support_x.len(), ep.query_x.len(), ep.unlabeled_len()), (5, 75, 250));
    for ood in [0, 1, 3, 5, 7] {
        let shape = EpisodeShape { ood, ..Default::default() };
        let ep = sample_episode(&ds, Split::Test, shape, 9).unwrap();
        assert_eq!(ep.unlabeled_len(), 250 + 50 * ood);
        assert_eq!(ep.unlabeled_truth.iter().filter(|h| h.is_ood).count(), 50 * ood);
    }
}

#[test]
fn labeled_counts_follow_ratio() {
    assert_eq!(labeled_count(0.01, 600), 6);
    let ds = gen_synthetic_with_split(2, 4, 100, 0.3, ClassSplit { train: 3, val: 1, test: 1 }).unwrap();
    for rho in [0.05, 0.1, 0.2, 0.3, 0.4] {
        let d = ds.split_labeled(rho, 0).unwrap();
        for c in 0..d.classes {
            let n = d.members(c).iter().filter(|&&i| d.labeled_mask[i]).count();
            assert_eq!(n, (rho * 100.0_f64).round() as usize, "rho {rho}");
        }
    }
    assert!(ds.split_labeled(0.0, 0).is_err());
}

#[test]
fn missing_points_name_the_class() {
    let ds = gen_synthetic_with_split(2, 4, 10, 0.3, ClassSplit { train: 6, val: 1, test: 1 })
        .unwrap()
        .split_labeled(0.1, 0)
        .unwrap();
    let err = sample_episode(&ds, Split::Train, EpisodeShape::default(), 0).unwrap_err();
    assert!(err.to_string().contains("class"), "{err}");
}

#[test]
fn zero_noise_makes_prototypes_separable() {
    let ds = gen_synthetic_with_split(4, 16, 20, 1e-9, ClassSplit { train: 10, val: 0, test: 0 }).unwrap();
    let protos: Vec<&Vec<f64>> = (0..10).map(|c| &ds.features[ds.members(c)[0]]).collect();
    for (i, x) in ds.features.iter().enumerate() {
        let nearest = (0..10)
            .min_by(|&a, &b| {
                let d = |p: &Vec<f64>| p.iter().zip(x).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
                d(protos[a]).total_cmp(&d(protos[b]))
            })
            .unwrap();
        assert_eq!(nearest, ds.class_of[i]);
    }
}

#[test]
fn selection_accuracy_counts() {
    let ds = dataset();
    let ep = sample_episode(&ds, Split::Test, EpisodeShape { unlabeled: 10, ood: 1, ..Default::default() }, 3).unwrap();
    let ood: Vec<usize> = (0..ep.unlabeled_len()).filter(|&i| ep.unlabeled_truth[i].is_ood).collect();
    let ind: Vec<usize> = (0..ep.unlabeled_len()).filter(|&i| !ep.unlabeled_truth[i].is_ood).collect();
    let entry = |i: usize, label: usize| select::SelectedEntry { pool_index: i, label, gain: 0.0, step: 1 };
    let mut s = SelectedSubset::empty(SelectionOrigin::Inner);
    for &i in &ind[..7] {
        s.entries.push(entry(i, ep.unlabeled_truth[i].label.unwrap()));
    }
    for &i in &ind[7..9] {
        s.entries.push(entry(i, (ep.unlabeled_truth[i].label.unwrap() + 1) % 5));
    }
    s.entries.push(entry(ood[0], 0));
    let a = selection_accuracy(&s, &ep);
    assert!((a.label_match - 0.7).abs() < 1e-12 && (a.in_dist - 0.9).abs() < 1e-12);
    let e = selection_accuracy(&SelectedSubset::empty(SelectionOrigin::Outer), &ep);
    assert!(e.empty && e.label_match == 0.0 && e.in_dist == 0.0);
}

#[test]
fn pseudo_labels_collapse_where_smi_stays_balanced() {
    let ds = dataset();
    let ep = sample_episode(&ds, Split::Test, EpisodeShape::default(), 21).unwrap();
    let model = skewed_model(&ep, 8);
    let pool: Vec<usize> = (0..ep.unlabeled_len()).collect();
    let pl = acquire(StrategyKind::PL, &request(&model, &ep, &pool, 25)).unwrap();
    assert!(pl.label_counts(5)[0] >= 20, "{:?}", pl.label_counts(5));
    let smi = acquire(StrategyKind::FLMI, &request(&model, &ep, &pool, 25)).unwrap();
    assert_eq!(smi.label_counts(5), vec![5; 5]);
    assert!(acquire(StrategyKind::Supervised, &request(&model, &ep, &pool, 25)).unwrap().is_empty());
    let rnd = acquire(StrategyKind::Random, &request(&model, &ep, &pool, 25)).unwrap();
    assert_eq!(ids(&rnd.indices()).len(), 25);
}

#[test]
fn meta_test_rows_are_support_only() {
    let ds = dataset();
    let ep = sample_episode(&ds, Split::Test, EpisodeShape::default(), 2).unwrap();
    let model = init_params(0, &[8, 5]).unwrap();
    let pool: Vec<usize> = (0..ep.unlabeled_len()).collect();
    assert_eq!(select::episode_kernel(&model, &ep, &pool, Phase::MetaTest).unwrap().rows(), 5);
    assert_eq!(select::episode_kernel(&model, &ep, &pool, Phase::MetaTrain).unwrap().rows(), 80);
}

#[test]
fn exhausted_pool_is_flagged() {
    let ds = dataset();
    let ep = sample_episode(&ds, Split::Test, EpisodeShape { unlabeled: 4, ..Default::default() }, 2).unwrap();
    let model = init_params(0, &[8, 5]).unwrap();
    let budget = Budget::new(20, 5, 5).unwrap();
    let all = select::inner_select(&model, &ep, &SelectedSubset::empty(SelectionOrigin::Inner), budget, SetFunctionKind::Flmi, MaximizerKind::Lazy, Phase::MetaTrain, 1, 0).unwrap();
    assert_eq!(all.len(), 20);
    let outer = select::outer_select(&model, &ep, &all, budget, SetFunctionKind::Flmi, MaximizerKind::Lazy, 0).unwrap();
    assert!(outer.is_empty() && outer.exhausted);
}
