mod common;

use channelvit::models::{Session, Variant};
use channelvit::relevance::{
    attention_rollout, grad_relevance, relevance, rollout_relevance, to_pgm, upsample_nearest,
    Method,
};
use channelvit::rng;
use channelvit::sampling::ChannelCombination;
use channelvit::tensor::Tensor;
use common::{random_image, random_params, small_config};
use rand::Rng as _;

type Matrix = Vec<Vec<f64>>;

fn random_stochastic(r: &mut rng::Rng, n: usize) -> Tensor {
    let rows: Matrix = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..n).map(|_| r.random::<f64>() + 0.01).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

fn to_matrix(t: &Tensor) -> Matrix {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn mat_mul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

/// Rollout computed directly: `Π_l norm(mean_h A + I)` with later layers on
/// the left.
fn rollout_oracle(layers: &[Vec<Tensor>]) -> Matrix {
    let n = layers[0][0].rows();
    let mut r: Matrix = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
    for heads in layers {
        let mut a = vec![vec![0.0; n]; n];
        for h in heads {
            let m = to_matrix(h);
            for i in 0..n {
                for j in 0..n {
                    a[i][j] += m[i][j] / heads.len() as f64;
                }
            }
        }
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += 1.0;
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        r = mat_mul(&a, &r);
    }
    r
}

#[test]
fn rollout_matches_direct_product() {
    let mut r = rng::seeded(3);
    for (depth, heads, n) in [(1, 1, 3), (3, 2, 5), (4, 4, 7)] {
        let layers: Vec<Vec<Tensor>> = (0..depth)
            .map(|_| (0..heads).map(|_| random_stochastic(&mut r, n)).collect())
            .collect();
        let got = to_matrix(&attention_rollout(&layers).unwrap());
        let want = rollout_oracle(&layers);
        for (g, w) in got.iter().flatten().zip(want.iter().flatten()) {
            assert!((g - w).abs() < 1e-12);
        }
        for row in &got {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }
    assert!(attention_rollout(&[]).is_err());
}

#[test]
fn model_rollout_uses_recorded_attention() {
    let cfg = small_config(3, Variant::ChannelVitTied);
    let params = random_params(&cfg, 1);
    let img = random_image(&mut rng::seeded(2), 3, 8, 8);
    let combo = ChannelCombination::new(vec![0, 2], 3).unwrap();

    let mut s = Session::new(&params);
    let out = s.forward(&img, &combo, true).unwrap();
    let layers: Vec<Vec<Tensor>> = out
        .attention
        .iter()
        .map(|h| h.iter().map(|&v| s.graph.value(v).clone()).collect())
        .collect();
    assert_eq!(layers.len(), cfg.depth);
    let oracle = rollout_oracle(&layers);

    let map = rollout_relevance(&params, &img, &combo).unwrap();
    assert_eq!(map.channels.as_deref(), Some(&[0, 2][..]));
    assert_eq!(map.raw.len(), 2);
    assert_eq!(map.raw[0].len(), cfg.num_patches());
    // tokens are channel-major: channel 0's patches, then channel 2's
    let np = cfg.num_patches();
    for (r, row) in map.raw.iter().enumerate() {
        for (p, v) in row.iter().enumerate() {
            assert!((v - oracle[0][1 + r * np + p]).abs() < 1e-12);
        }
    }
    let total: f64 = map.row_sums().iter().sum::<f64>() + oracle[0][0];
    assert!((total - 1.0).abs() < 1e-10);
    let max = map.scores.iter().flatten().copied().fold(0.0, f64::max);
    assert!((max - 1.0).abs() < 1e-15);
}

#[test]
fn vit_relevance_has_one_row() {
    let params = random_params(&small_config(3, Variant::Vit), 4);
    let img = random_image(&mut rng::seeded(0), 3, 8, 8);
    let full = ChannelCombination::full(3).unwrap();
    for method in [Method::Rollout, Method::Grad] {
        let map = relevance(&params, &img, &full, 1, method).unwrap();
        assert_eq!(map.raw.len(), 1);
        assert!(map.channels.is_none());
        assert_eq!(map.target_class, Some(1));
    }
}

#[test]
fn grad_relevance_is_nonnegative_and_class_dependent() {
    let params = random_params(&small_config(3, Variant::ChannelVitUntied), 6);
    let img = random_image(&mut rng::seeded(1), 3, 8, 8);
    let full = ChannelCombination::full(3).unwrap();
    let a = grad_relevance(&params, &img, &full, 0).unwrap();
    let b = grad_relevance(&params, &img, &full, 2).unwrap();
    assert!(a.raw.iter().flatten().all(|v| *v >= 0.0));
    assert_ne!(a.raw, b.raw);
    assert!(grad_relevance(&params, &img, &full, 3).is_err());
}

#[test]
fn multi_backbone_model_is_rejected() {
    let params = random_params(&small_config(3, Variant::MultiVit), 0);
    let img = random_image(&mut rng::seeded(0), 3, 8, 8);
    let full = ChannelCombination::full(3).unwrap();
    assert!(rollout_relevance(&params, &img, &full).is_err());
    assert!(grad_relevance(&params, &img, &full, 0).is_err());
}

#[test]
fn upsampling_and_pgm() {
    let up = upsample_nearest(&[0.0, 0.5, 1.0, 0.25], 2, 2, 2);
    assert_eq!(
        up,
        [0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.5, 0.5, 1.0, 1.0, 0.25, 0.25, 1.0, 1.0, 0.25, 0.25]
    );
    let pgm = to_pgm(&[0.0, 1.0, 0.5, 2.0], 2, 2);
    let header = b"P5\n2 2\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    assert_eq!(&pgm[header.len()..], [0, 255, 128, 255]);
}

#[test]
fn csv_has_one_line_per_patch_and_row() {
    let params = random_params(&small_config(3, Variant::ChannelVitTied), 2);
    let img = random_image(&mut rng::seeded(5), 3, 8, 8);
    let full = ChannelCombination::full(3).unwrap();
    let map = relevance(&params, &img, &full, 0, Method::Rollout).unwrap();
    let csv = map.to_csv();
    assert_eq!(csv.lines().count(), 1 + 3 * 4);
    assert!(csv.starts_with("channel,patch,raw,normalized\n"));
    assert!("saliency".parse::<Method>().is_err());
}
