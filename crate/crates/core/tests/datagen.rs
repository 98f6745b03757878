use channelvit::data::synth::texture;
use channelvit::data::{generate, mutual_information, pixel_correlation, Dataset, InfoMode, SynthConfig};

fn base(mode: InfoMode) -> SynthConfig {
    SynthConfig {
        channels: 4,
        height: 8,
        width: 8,
        num_classes: 4,
        train_samples: 1000,
        test_samples: 1000,
        channel_groups: vec![vec![0, 1], vec![2, 3]],
        rho_in: 0.7,
        rho_out: 0.2,
        info_mode: mode,
        signal_strength: 0.0,
        field_std: 1.0,
        noise_std: 0.0,
        channel_offsets: Vec::new(),
        channel_gains: Vec::new(),
        signal_gains: Vec::new(),
        artifact_rate: 0.0,
        artifact_std: 0.0,
        texture_overlap: 0.0,
        decoy_strength: 0.0,
        seed: 8,
    }
}

fn max_deviation(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn empirical_correlation_matches_configuration() {
    for (rho_in, rho_out, groups) in [
        (0.7, 0.2, vec![vec![0, 1], vec![2, 3]]),
        (0.95, 0.0, vec![vec![0, 1, 2, 3]]),
        (0.5, -0.3, vec![vec![0, 1], vec![2, 3]]),
    ] {
        let cfg = SynthConfig {
            rho_in,
            rho_out,
            channel_groups: groups,
            ..base(InfoMode::Redundant)
        };
        let (train, _) = generate(&cfg).unwrap();
        let dev = max_deviation(&pixel_correlation(&train.dataset), &cfg.target_correlation());
        assert!(dev < 0.05, "rho_in {rho_in} rho_out {rho_out}: deviation {dev}");
    }
}

fn sign_bits(amplitudes: &[f64]) -> Vec<bool> {
    amplitudes.iter().map(|a| *a > 0.0).collect()
}

#[test]
fn single_group_carries_less_label_information() {
    let cfg = SynthConfig {
        signal_strength: 1.0,
        ..base(InfoMode::Complementary)
    };
    let (train, _) = generate(&cfg).unwrap();
    let all: Vec<(Vec<bool>, usize)> = train
        .latents
        .iter()
        .map(|l| (sign_bits(&l.group_amplitudes), l.label))
        .collect();
    let mi_all = mutual_information(&all);
    assert!((mi_all - 2.0).abs() < 0.02, "{mi_all}");
    for g in 0..2 {
        let one: Vec<(bool, usize)> = train
            .latents
            .iter()
            .map(|l| (l.group_amplitudes[g] > 0.0, l.label))
            .collect();
        let mi = mutual_information(&one);
        assert!(mi < mi_all - 0.5, "group {g}: {mi} vs {mi_all}");
    }
}

/// Best lookup classifier from group 0's latent alone, fitted on train and
/// scored on test, against `1/K + (1 - 1/K)/2`.
#[test]
fn one_group_classifier_respects_bound() {
    let cfg = SynthConfig {
        signal_strength: 1.0,
        ..base(InfoMode::Complementary)
    };
    let (train, test) = generate(&cfg).unwrap();
    let k = cfg.num_classes;
    let mut table = [[0usize; 4]; 2];
    for l in &train.latents {
        table[usize::from(l.group_amplitudes[0] > 0.0)][l.label] += 1;
    }
    let best: Vec<usize> = table
        .iter()
        .map(|row| (0..k).max_by_key(|&c| row[c]).unwrap())
        .collect();
    let correct = test
        .latents
        .iter()
        .filter(|l| best[usize::from(l.group_amplitudes[0] > 0.0)] == l.label)
        .count();
    let acc = correct as f64 / test.latents.len() as f64;
    let bound = 1.0 / k as f64 + 0.5 * (1.0 - 1.0 / k as f64);
    assert!(acc <= bound, "{acc} > {bound}");
    assert!(acc > 0.4, "group 0 should still carry one bit: {acc}");
}

/// Matched filter against each class texture, per channel.
fn texture_vote(img: &[f64], k: usize, h: usize, w: usize) -> usize {
    (0..k)
        .map(|c| texture(c, h, w).iter().zip(img).map(|(t, x)| t * x).sum::<f64>())
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

#[test]
fn redundant_label_is_in_every_channel() {
    let cfg = SynthConfig {
        signal_strength: 1.0,
        field_std: 0.5,
        noise_std: 0.2,
        train_samples: 200,
        ..base(InfoMode::Redundant)
    };
    let (train, _) = generate(&cfg).unwrap();
    let ds = &train.dataset;
    for c in 0..cfg.channels {
        let correct = (0..ds.len())
            .filter(|&i| texture_vote(ds.image(i).channel(c), 4, 8, 8) == ds.label(i))
            .count();
        assert!(correct as f64 / ds.len() as f64 > 0.9, "channel {c}: {correct}");
    }
}

#[test]
fn isolated_label_lives_in_group_zero_only() {
    let cfg = SynthConfig {
        signal_strength: 1.0,
        field_std: 0.5,
        noise_std: 0.2,
        rho_out: 0.0,
        train_samples: 400,
        ..base(InfoMode::Isolated)
    };
    let (train, _) = generate(&cfg).unwrap();
    let ds = &train.dataset;
    let acc = |c: usize| {
        (0..ds.len())
            .filter(|&i| texture_vote(ds.image(i).channel(c), 4, 8, 8) == ds.label(i))
            .count() as f64
            / ds.len() as f64
    };
    assert!(acc(0) > 0.9 && acc(1) > 0.9);
    assert!(acc(2) < 0.4 && acc(3) < 0.4, "{} {}", acc(2), acc(3));
}

#[test]
fn textures_are_balanced_and_periodic() {
    for k in 0..6 {
        let t = texture(k, 16, 16);
        assert_eq!(t.iter().sum::<f64>(), 0.0);
        assert!(t.iter().all(|v| v.abs() == 1.0));
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(t[y * 16 + x], t[(y + 8) * 16 + x + 8]);
            }
        }
    }
    assert_ne!(texture(0, 8, 8), texture(1, 8, 8));
}

#[test]
fn splits_are_independent_and_balanced() {
    let (train, test) = generate(&base(InfoMode::Redundant)).unwrap();
    assert_ne!(train.dataset.image(0).data(), test.dataset.image(0).data());
    let mut counts = [0usize; 4];
    train.dataset.labels().for_each(|l| counts[l] += 1);
    assert!(counts.iter().all(|&c| c > 200), "{counts:?}");
}

#[test]
fn dataset_round_trips_and_views() {
    let cfg = SynthConfig {
        train_samples: 12,
        test_samples: 2,
        signal_strength: 1.0,
        ..base(InfoMode::Redundant)
    };
    let ds = generate(&cfg).unwrap().0.dataset;
    let back = Dataset::from_bytes(&ds.to_bytes()).unwrap();
    assert_eq!(back, ds);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.mcds");
    ds.save(&path).unwrap();
    assert_eq!(Dataset::load(&path).unwrap(), ds);

    let mut bytes = ds.to_bytes();
    bytes[0] ^= 0xff;
    assert!(Dataset::from_bytes(&bytes).is_err());
    assert!(Dataset::from_bytes(&ds.to_bytes()[..20]).is_err());

    let prefix = ds.channel_prefix(2).unwrap();
    assert_eq!(prefix.channels(), 2);
    assert_eq!(prefix.image(3).channel(1), ds.image(3).channel(1));

    let dup = ds.with_duplicate_channel(1).unwrap();
    assert_eq!(dup.channels(), 5);
    assert_eq!(dup.channel_names()[4], format!("{}_dup", ds.channel_names()[1]));
    assert_eq!(dup.image(5).channel(4), ds.image(5).channel(1));
    assert!(ds.with_duplicate_channel(4).is_err());

    let sub = ds.subset(&[3, 7]);
    assert_eq!(sub.len(), 2);
    assert_eq!(sub.label(1), ds.label(7));
}
