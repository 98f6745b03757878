#![allow(dead_code)]

use channelvit::autograd::{Graph, Var};
use channelvit::image::MultiChannelImage;
use channelvit::models::{ModelConfig, ModelParams, ParamKind, Session, Variant};
use channelvit::nn::{self, AttentionParams};
use channelvit::rng::{self, Rng};
use channelvit::sampling::ChannelCombination;
use channelvit::tensor::Tensor;
use channelvit::Result;
use rand::Rng as _;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-6;

pub fn within_tolerance(analytic: f64, numeric: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs());
    (analytic - numeric).abs() <= (REL_TOL * scale).max(ABS_TOL)
}

pub fn random_tensor(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| std * rng::normal(rng)).collect()).unwrap()
}

pub fn random_image(rng: &mut Rng, c: usize, h: usize, w: usize) -> MultiChannelImage {
    MultiChannelImage::new(c, h, w, (0..c * h * w).map(|_| rng::normal(rng)).collect()).unwrap()
}

#[derive(Debug, Default)]
pub struct CheckReport {
    pub checked: usize,
    pub failures: Vec<String>,
}

impl CheckReport {
    pub fn merge(&mut self, other: CheckReport) {
        self.checked += other.checked;
        self.failures.extend(other.failures);
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences for every element of every input.
pub fn gradcheck(
    name: &str,
    inputs: &[Tensor],
    f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> CheckReport {
    let eval = |xs: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone())).collect();
        let out = f(&mut g, &vars).unwrap();
        g.value(out).data()[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
    let out = f(&mut g, &vars).unwrap();
    let grads = g.backward(out).unwrap();

    let mut report = CheckReport::default();
    let mut xs = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, &inputs[i]);
        for j in 0..inputs[i].len() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&xs);
            xs[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&xs);
            xs[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.data()[j];
            report.checked += 1;
            if !within_tolerance(a, numeric) {
                report
                    .failures
                    .push(format!("{name}: input {i}[{j}] analytic {a:e} numeric {numeric:e}"));
            }
        }
    }
    report
}

/// Contracts any matrix output with fixed random weights to a scalar.
pub fn contract(g: &mut Graph, x: Var, weights: &Tensor) -> Result<Var> {
    let w = g.leaf(weights.clone());
    let y = g.matmul(x, w)?;
    Ok(g.sum(y))
}

/// Every differentiable graph operation, each reduced to a scalar, checked
/// on random inputs drawn from `seed`.
pub fn check_all_ops(seed: u64) -> CheckReport {
    let mut r = rng::seeded(seed);
    let mut report = CheckReport::default();
    let (m, k, n) = (3, 4, 5);
    let a = random_tensor(&mut r, &[m, k], 1.0);
    let b = random_tensor(&mut r, &[k, n], 1.0);
    let bt = random_tensor(&mut r, &[n, k], 1.0);
    let same = random_tensor(&mut r, &[m, k], 1.0);
    let row = random_tensor(&mut r, &[k], 1.0);
    let gamma = random_tensor(&mut r, &[k], 1.0);
    let beta = random_tensor(&mut r, &[k], 1.0);
    let wk = random_tensor(&mut r, &[k, 1], 1.0);
    let wn = random_tensor(&mut r, &[n, 1], 1.0);
    let w2 = random_tensor(&mut r, &[2, 1], 1.0);
    let w3 = random_tensor(&mut r, &[3, 1], 1.0);
    let s = rng::normal(&mut r);
    let labels = vec![
        r.random_range(0..k),
        r.random_range(0..k),
        r.random_range(0..k),
    ];

    report.merge(gradcheck("matmul", &[a.clone(), b.clone()], &|g, v| {
        let y = g.matmul(v[0], v[1])?;
        contract(g, y, &wn)
    }));
    report.merge(gradcheck("matmul_nt", &[a.clone(), bt.clone()], &|g, v| {
        let y = g.matmul_nt(v[0], v[1])?;
        contract(g, y, &wn)
    }));
    report.merge(gradcheck("add", &[a.clone(), same.clone()], &|g, v| {
        let y = g.add(v[0], v[1])?;
        contract(g, y, &wk)
    }));
    report.merge(gradcheck("add_row", &[a.clone(), row.clone()], &|g, v| {
        let y = g.add_row(v[0], v[1])?;
        contract(g, y, &wk)
    }));
    report.merge(gradcheck("scale", std::slice::from_ref(&a), &|g, v| {
        let y = g.scale(v[0], s);
        contract(g, y, &wk)
    }));
    report.merge(gradcheck("softmax_rows", std::slice::from_ref(&a), &|g, v| {
        let y = g.softmax(v[0], 1)?;
        contract(g, y, &wk)
    }));
    report.merge(gradcheck("softmax_cols", std::slice::from_ref(&a), &|g, v| {
        let y = g.softmax(v[0], 0)?;
        contract(g, y, &wk)
    }));
    report.merge(gradcheck(
        "layer_norm",
        &[a.clone(), gamma.clone(), beta.clone()],
        &|g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-6)?;
            contract(g, y, &wk)
        },
    ));
    report.merge(gradcheck("gelu", std::slice::from_ref(&a), &|g, v| {
        let y = g.gelu(v[0]);
        contract(g, y, &wk)
    }));
    report.merge(gradcheck("slice_cols", std::slice::from_ref(&a), &|g, v| {
        let y = g.slice_cols(v[0], 1, 2)?;
        contract(g, y, &w2)
    }));
    report.merge(gradcheck("concat_cols", &[a.clone(), same.clone()], &|g, v| {
        let x = g.slice_cols(v[1], 0, 1)?;
        let y = g.concat_cols(&[v[0], x])?;
        contract(g, y, &random_like(k + 1, seed))
    }));
    report.merge(gradcheck(
        "concat_rows",
        &[a.clone(), row.clone(), same.clone()],
        &|g, v| {
            let y = g.concat_rows(&[v[0], v[1], v[2]])?;
            contract(g, y, &wk)
        },
    ));
    report.merge(gradcheck("select_rows", std::slice::from_ref(&a), &|g, v| {
        let y = g.select_rows(v[0], &[2, 0, 2])?;
        contract(g, y, &wk)
    }));
    report.merge(gradcheck("cross_entropy", std::slice::from_ref(&a), &|g, v| {
        g.cross_entropy(v[0], &labels)
    }));
    report.merge(gradcheck("sum", std::slice::from_ref(&a), &|g, v| Ok(g.sum(v[0]))));
    report.merge(gradcheck("weighted_sum", &[a.clone(), same.clone()], &|g, v| {
        let x = contract(g, v[0], &wk)?;
        let y = contract(g, v[1], &wk)?;
        g.weighted_sum(&[(x, 0.7), (y, -1.3)])
    }));
    report.merge(gradcheck("linear", &[a.clone(), b.clone(), random_row(n, seed)], &|g, v| {
        let y = nn::linear(g, v[0], v[1], v[2])?;
        contract(g, y, &wn)
    }));
    let d = 4;
    let mut attn_inputs = vec![random_tensor(&mut r, &[m, d], 1.0)];
    for _ in 0..4 {
        attn_inputs.push(random_tensor(&mut r, &[d, d], 0.5));
        attn_inputs.push(random_tensor(&mut r, &[d], 0.5));
    }
    let wd = random_tensor(&mut r, &[d, 1], 1.0);
    report.merge(gradcheck("multihead_attention", &attn_inputs, &|g, v| {
        let p = AttentionParams {
            wq: v[1],
            bq: v[2],
            wk: v[3],
            bk: v[4],
            wv: v[5],
            bv: v[6],
            wo: v[7],
            bo: v[8],
        };
        let out = nn::multihead_attention(g, v[0], &p, 2)?;
        let y = contract(g, out.output, &wd)?;
        let a0 = contract(g, out.attention[1], &w3)?;
        g.weighted_sum(&[(y, 1.0), (a0, 0.5)])
    }));
    report
}

fn random_like(rows: usize, seed: u64) -> Tensor {
    random_tensor(&mut rng::seeded(seed ^ 0xA5A5), &[rows, 1], 1.0)
}

fn random_row(n: usize, seed: u64) -> Tensor {
    random_tensor(&mut rng::seeded(seed ^ 0x5A5A), &[n], 1.0)
}

pub fn small_config(channels: usize, variant: Variant) -> ModelConfig {
    ModelConfig {
        image_h: 8,
        image_w: 8,
        patch_size: 4,
        channels,
        embed_dim: 8,
        depth: 2,
        heads: 2,
        mlp_hidden: 16,
        num_classes: 3,
        variant,
    }
}

/// Parameters with every entry randomized so that no gradient path is
/// trivially zero.
pub fn random_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut r = rng::seeded(seed);
    let mut p = ModelParams::init(cfg, &mut r).unwrap();
    for param in p.params_mut() {
        let base = if param.kind == ParamKind::Norm && param.name.ends_with("weight") {
            1.0
        } else {
            0.0
        };
        for v in param.value.data_mut() {
            *v = base + 0.3 * rng::normal(&mut r);
        }
    }
    p
}

fn model_loss(
    params: &ModelParams,
    img: &MultiChannelImage,
    combo: &ChannelCombination,
    label: usize,
) -> f64 {
    let mut s = Session::new(params);
    let out = s.forward(img, combo, false).unwrap();
    let loss = s.graph.cross_entropy(out.logits, &[label]).unwrap();
    s.graph.value(loss).data()[0]
}

/// Cross-entropy gradient of a randomized small model against central
/// differences on a random `fraction` of its scalar parameters.
pub fn check_model(variant: Variant, seed: u64, fraction: f64) -> CheckReport {
    let cfg = small_config(3, variant);
    let mut params = random_params(&cfg, seed);
    let mut r = rng::seeded(seed.wrapping_add(1000));
    let img = random_image(&mut r, 3, 8, 8);
    let combo = ChannelCombination::new(vec![0, 2], 3).unwrap();
    let label = r.random_range(0..3);

    let grads = {
        let mut s = Session::new(&params);
        let out = s.forward(&img, &combo, false).unwrap();
        let loss = s.graph.cross_entropy(out.logits, &[label]).unwrap();
        let g = s.graph.backward(loss).unwrap();
        s.param_grads(&g)
    };

    let mut report = CheckReport::default();
    for pi in 0..params.params().len() {
        for j in 0..params.params()[pi].value.len() {
            if rng::uniform(&mut r) >= fraction {
                continue;
            }
            let orig = params.params()[pi].value.data()[j];
            params.params_mut()[pi].value.data_mut()[j] = orig + FD_STEP;
            let up = model_loss(&params, &img, &combo, label);
            params.params_mut()[pi].value.data_mut()[j] = orig - FD_STEP;
            let down = model_loss(&params, &img, &combo, label);
            params.params_mut()[pi].value.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = grads[pi].data()[j];
            report.checked += 1;
            if !within_tolerance(a, numeric) {
                report.failures.push(format!(
                    "{} {}[{j}]: analytic {a:e} numeric {numeric:e}",
                    variant.as_str(),
                    params.params()[pi].name
                ));
            }
        }
    }
    report
}
