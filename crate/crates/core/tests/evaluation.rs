mod common;

use channelvit::data::Dataset;
use channelvit::evaluation::{
    accuracy, evaluate_all_combinations, gain_report, per_class_accuracy, predictions,
    CombinationReport,
};
use channelvit::models::{ModelParams, Variant};
use channelvit::rng;
use channelvit::sampling::{all_combinations, ChannelCombination};
use common::{random_image, random_params, small_config};

fn combo(ix: &[usize], c: usize) -> ChannelCombination {
    ChannelCombination::new(ix.to_vec(), c).unwrap()
}

fn dataset(n: usize, channels: usize, seed: u64) -> Dataset {
    let names = (0..channels).map(|c| format!("c{c}")).collect();
    let mut ds = Dataset::new(names, 8, 8, 3).unwrap();
    let mut r = rng::seeded(seed);
    for i in 0..n {
        ds.push(&random_image(&mut r, channels, 8, 8), i % 3).unwrap();
    }
    ds
}

#[test]
fn two_channel_gain_by_hand() {
    let a = CombinationReport::from_entries(
        vec![(combo(&[0], 2), 0.5), (combo(&[1], 2), 0.7), (combo(&[0, 1], 2), 0.9)],
        10,
    );
    let b = CombinationReport::from_entries(
        vec![(combo(&[0], 2), 0.25), (combo(&[1], 2), 0.75), (combo(&[0, 1], 2), 0.8)],
        10,
    );
    let g = gain_report(&a, &b).unwrap();
    let expect = [0.25, -0.05, 0.1];
    for ((_, got), want) in g.gains.iter().zip(expect) {
        assert!((got - want).abs() < 1e-12);
    }
    assert!((g.grouped[0].mean - 0.1).abs() < 1e-12);
    assert!((g.grouped[0].std - 0.15).abs() < 1e-12);
    assert_eq!(g.grouped[0].count, 2);
    assert!((g.grouped[1].mean - 0.1).abs() < 1e-12);
    assert_eq!(g.grouped[1].std, 0.0);

    let c = CombinationReport::from_entries(vec![(combo(&[0], 2), 0.5)], 10);
    assert!(gain_report(&a, &c).is_err());
}

#[test]
fn sweep_matches_direct_counts() {
    for variant in [Variant::ChannelVitTied, Variant::Vit] {
        let cfg = small_config(3, variant);
        let params = random_params(&cfg, 4);
        let ds = dataset(30, 3, 1);
        let report = evaluate_all_combinations(&params, &ds).unwrap();
        assert_eq!(report.accuracy.len(), 7);
        assert_eq!(report.n_eval, 30);
        let counts: Vec<usize> = report.grouped.iter().map(|g| g.count).collect();
        assert_eq!(counts, [3, 3, 1]);

        for (c, acc) in &report.accuracy {
            let correct = (0..ds.len())
                .filter(|&i| params.predict(&ds.image(i), c).unwrap() == ds.label(i))
                .count();
            assert_eq!(*acc, correct as f64 / 30.0, "{variant:?} {c}");
        }
        let singles: Vec<f64> = report.accuracy[..3].iter().map(|(_, a)| *a).collect();
        let mean = singles.iter().sum::<f64>() / 3.0;
        let std = (singles.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!((report.group(1).unwrap().mean - mean).abs() < 1e-12);
        assert!((report.group(1).unwrap().std - std).abs() < 1e-12);

        let back = CombinationReport::from_csv(&report.to_csv(), 3, 30).unwrap();
        for ((c1, a1), (c2, a2)) in back.accuracy.iter().zip(&report.accuracy) {
            assert_eq!(c1, c2);
            assert!((a1 - a2).abs() < 1e-6);
        }
        let self_gain = gain_report(&report, &report).unwrap();
        assert!(self_gain.gains.iter().all(|(_, g)| *g == 0.0));
    }
}

#[test]
fn per_class_totals_agree_with_accuracy() {
    let params = random_params(&small_config(3, Variant::ChannelVitUntied), 2);
    let ds = dataset(31, 3, 5);
    let full = ChannelCombination::full(3).unwrap();
    let per = per_class_accuracy(&params, &ds, &full).unwrap();
    let correct: usize = per.iter().map(|p| p.0).sum();
    let total: usize = per.iter().map(|p| p.1).sum();
    assert_eq!(total, 31);
    assert_eq!(per[0].1, 11);
    assert_eq!(correct as f64 / 31.0, accuracy(&params, &ds, &full).unwrap());
    assert_eq!(predictions(&params, &ds, &full).unwrap().len(), 31);
}

#[test]
fn rejects_incompatible_inputs() {
    let params = random_params(&small_config(3, Variant::Vit), 0);
    let full = ChannelCombination::full(3).unwrap();
    assert!(accuracy(&params, &dataset(0, 3, 0), &full).is_err());
    assert!(accuracy(&params, &dataset(5, 2, 0), &full).is_err());
    assert!(CombinationReport::from_csv("a,b,c\n", 3, 0).is_err());
    assert!(CombinationReport::from_csv("combination,m,accuracy\n0-9,2,0.5\n", 3, 0).is_err());

    let wide = small_config(13, Variant::ChannelVitTied);
    let params = ModelParams::init(&wide, &mut rng::seeded(0)).unwrap();
    let err = evaluate_all_combinations(&params, &dataset(1, 13, 0)).unwrap_err();
    assert!(err.to_string().contains("8191"), "{err}");
}

#[test]
fn every_combination_is_evaluated_once() {
    let params = random_params(&small_config(4, Variant::ChannelVitTied), 1);
    let report = evaluate_all_combinations(&params, &dataset(6, 4, 2)).unwrap();
    let combos: Vec<_> = report.accuracy.iter().map(|(c, _)| c.clone()).collect();
    assert_eq!(combos, all_combinations(4).unwrap());
}
