//! Token attribution: attention rollout and gradient-weighted relevance,
//! reshaped per channel for channel-token models.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::MultiChannelImage;
use crate::models::{ModelParams, Session};
use crate::sampling::ChannelCombination;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Rollout,
    Grad,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rollout" => Ok(Method::Rollout),
            "grad" => Ok(Method::Grad),
            other => Err(Error::Config(format!(
                "unknown relevance method '{other}' (expected rollout or grad)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceMap {
    /// `[|S|][N]` for channel-token models, `[1][N]` otherwise.
    pub raw: Vec<Vec<f64>>,
    /// `raw` scaled so the maximum is 1 (all zeros stay zero).
    pub scores: Vec<Vec<f64>>,
    /// Channel of each row; `None` when rows do not correspond to channels.
    pub channels: Option<Vec<usize>>,
    pub target_class: Option<usize>,
    pub combination: ChannelCombination,
}

impl RelevanceMap {
    fn new(
        cls_row: &[f64],
        channel_of_token: Option<&[usize]>,
        patch_of_token: &[usize],
        num_patches: usize,
        combination: ChannelCombination,
        target_class: Option<usize>,
    ) -> Self {
        let (raw, channels) = match channel_of_token {
            Some(chan) => {
                let rows = combination.indices().to_vec();
                let mut raw = vec![vec![0.0; num_patches]; rows.len()];
                for (t, (&c, &p)) in chan.iter().zip(patch_of_token).enumerate() {
                    let r = rows.iter().position(|&x| x == c).expect("token channel is in S");
                    raw[r][p] = cls_row[t + 1];
                }
                (raw, Some(rows))
            }
            None => {
                let mut row = vec![0.0; num_patches];
                for (t, &p) in patch_of_token.iter().enumerate() {
                    row[p] = cls_row[t + 1];
                }
                (vec![row], None)
            }
        };
        let max = raw.iter().flatten().copied().fold(0.0, f64::max);
        let scores = raw
            .iter()
            .map(|r| r.iter().map(|&v| if max > 0.0 { v / max } else { 0.0 }).collect())
            .collect();
        RelevanceMap {
            raw,
            scores,
            channels,
            target_class,
            combination,
        }
    }

    /// Sum of raw relevance per row.
    pub fn row_sums(&self) -> Vec<f64> {
        self.raw.iter().map(|r| r.iter().sum()).collect()
    }

    /// Maximum normalized score per row.
    pub fn row_maxima(&self) -> Vec<f64> {
        self.scores
            .iter()
            .map(|r| r.iter().copied().fold(0.0, f64::max))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("channel,patch,raw,normalized\n");
        for (r, (raw, norm)) in self.raw.iter().zip(&self.scores).enumerate() {
            let channel = match &self.channels {
                Some(ch) => ch[r].to_string(),
                None => "all".to_string(),
            };
            for (p, (a, b)) in raw.iter().zip(norm).enumerate() {
                writeln!(out, "{channel},{p},{a:.9e},{b:.6}").unwrap();
            }
        }
        out
    }
}

fn row_normalize(m: &mut Tensor) {
    let n = m.last_dim();
    for row in m.data_mut().chunks_mut(n) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
}

fn head_mean(heads: &[Tensor]) -> Result<Tensor> {
    let mut acc = heads[0].clone();
    for h in &heads[1..] {
        acc.add_scaled(h, 1.0)?;
    }
    Ok(acc.scale(1.0 / heads.len() as f64))
}

/// Product over layers (later layers on the left) of the head-averaged
/// attention plus identity, each row-normalized.
pub fn attention_rollout(layers: &[Vec<Tensor>]) -> Result<Tensor> {
    if layers.is_empty() || layers.iter().any(|l| l.is_empty()) {
        return Err(Error::State("no recorded attention to roll out".into()));
    }
    let l = layers[0][0].rows();
    let mut rollout = Tensor::eye(l);
    for heads in layers {
        let mut a = head_mean(heads)?;
        a.add_scaled(&Tensor::eye(l), 1.0)?;
        row_normalize(&mut a);
        rollout = a.matmul(&rollout)?;
    }
    Ok(rollout)
}

fn check_supported(params: &ModelParams) -> Result<()> {
    if params.config().variant == crate::models::Variant::MultiVit {
        return Err(params.unsupported("attention relevance"));
    }
    Ok(())
}

/// Rollout relevance of every patch token as seen from CLS.
pub fn rollout_relevance(
    params: &ModelParams,
    img: &MultiChannelImage,
    combo: &ChannelCombination,
) -> Result<RelevanceMap> {
    check_supported(params)?;
    let mut s = Session::new(params);
    let out = s.forward(img, combo, true)?;
    let tokens = out.tokens.expect("single-sequence models expose tokens");
    if params.config().depth == 0 {
        let l = tokens.len();
        let mut cls = vec![0.0; l];
        cls[0] = 1.0;
        return Ok(RelevanceMap::new(
            &cls,
            tokens.channel_of_token.as_deref(),
            &tokens.patch_of_token,
            params.config().num_patches(),
            combo.clone(),
            None,
        ));
    }
    let layers: Vec<Vec<Tensor>> = out
        .attention
        .iter()
        .map(|heads| heads.iter().map(|&v| s.graph.value(v).clone()).collect())
        .collect();
    let r = attention_rollout(&layers)?;
    Ok(RelevanceMap::new(
        r.row(0),
        tokens.channel_of_token.as_deref(),
        &tokens.patch_of_token,
        params.config().num_patches(),
        combo.clone(),
        None,
    ))
}

/// `R ← R + mean_h((∂y_t/∂A_h ⊙ A_h)⁺)·R` layer by layer from `R = I`,
/// where `y_t` is the target-class logit; the CLS row is returned.
pub fn grad_relevance(
    params: &ModelParams,
    img: &MultiChannelImage,
    combo: &ChannelCombination,
    target_class: usize,
) -> Result<RelevanceMap> {
    check_supported(params)?;
    let k = params.config().num_classes;
    if target_class >= k {
        return Err(Error::Input(format!(
            "target class {target_class} out of range for {k} classes"
        )));
    }
    let mut s = Session::new(params);
    let out = s.forward(img, combo, true)?;
    let tokens = out.tokens.expect("single-sequence models expose tokens");
    let target = s.graph.slice_cols(out.logits, target_class, 1)?;
    let target = s.graph.sum(target);
    let grads = s.graph.backward(target)?;

    let l = tokens.len();
    let mut r = Tensor::eye(l);
    for heads in &out.attention {
        let weighted: Vec<Tensor> = heads
            .iter()
            .map(|&h| {
                let a = s.graph.value(h);
                let g = grads.get_or_zeros(h, a);
                let data = a.data().iter().zip(g.data()).map(|(x, y)| (x * y).max(0.0)).collect();
                Tensor::new(a.shape().to_vec(), data)
            })
            .collect::<Result<_>>()?;
        let cam = head_mean(&weighted)?;
        let update = cam.matmul(&r)?;
        r.add_scaled(&update, 1.0)?;
    }
    Ok(RelevanceMap::new(
        r.row(0),
        tokens.channel_of_token.as_deref(),
        &tokens.patch_of_token,
        params.config().num_patches(),
        combo.clone(),
        Some(target_class),
    ))
}

pub fn relevance(
    params: &ModelParams,
    img: &MultiChannelImage,
    combo: &ChannelCombination,
    target_class: usize,
    method: Method,
) -> Result<RelevanceMap> {
    match method {
        Method::Rollout => {
            let mut m = rollout_relevance(params, img, combo)?;
            m.target_class = Some(target_class);
            Ok(m)
        }
        Method::Grad => grad_relevance(params, img, combo, target_class),
    }
}

/// Per class: mean over that class's images of each row's maximum
/// normalized relevance, using the label as target. Classes without images
/// are `None`.
pub fn channel_relevance_summary(
    params: &ModelParams,
    samples: &[(MultiChannelImage, usize)],
    combo: &ChannelCombination,
    method: Method,
) -> Result<Vec<Option<Vec<f64>>>> {
    let k = params.config().num_classes;
    let maps = crate::parallel::map(samples, |(img, label)| {
        relevance(params, img, combo, *label, method).map(|m| (*label, m.row_maxima()))
    });
    let mut sums: Vec<Option<(Vec<f64>, usize)>> = vec![None; k];
    for m in maps {
        let (label, maxima) = m?;
        let slot = sums[label].get_or_insert_with(|| (vec![0.0; maxima.len()], 0));
        slot.0.iter_mut().zip(&maxima).for_each(|(a, b)| *a += b);
        slot.1 += 1;
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(class, s)| match s {
            Some((v, n)) => Some(v.into_iter().map(|x| x / n as f64).collect()),
            None => {
                log::warn!("class {class} has no images; its summary row is omitted");
                None
            }
        })
        .collect())
}

/// Each patch score repeated over its `patch × patch` pixel block.
pub fn upsample_nearest(scores: &[f64], grid_h: usize, grid_w: usize, patch: usize) -> Vec<f64> {
    let (h, w) = (grid_h * patch, grid_w * patch);
    (0..h * w)
        .map(|i| scores[(i / w / patch) * grid_w + (i % w) / patch])
        .collect()
}

/// Binary 8-bit grayscale PGM of values in `[0, 1]`.
pub fn to_pgm(values: &[f64], height: usize, width: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_layer_single_head_is_half_a_plus_identity() {
        let a = Tensor::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let r = attention_rollout(&[vec![a.clone()]]).unwrap();
        let mut expect = a;
        expect.add_scaled(&Tensor::eye(2), 1.0).unwrap();
        let expect = expect.scale(0.5);
        assert!(r.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn uniform_attention_gives_uniform_cls_row() {
        let l = 5;
        let u = Tensor::full(&[l, l], 1.0 / l as f64);
        let r = attention_rollout(&[vec![u.clone(), u.clone()], vec![u.clone(), u]]).unwrap();
        let row = r.row(0);
        for t in 1..l {
            assert!((row[t] - row[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_attention_is_a_state_error() {
        assert!(matches!(attention_rollout(&[]), Err(Error::State(_))));
    }

    #[test]
    fn nearest_upsampling() {
        let up = upsample_nearest(&[0.0, 1.0, 0.5, 0.25], 2, 2, 2);
        assert_eq!(
            up,
            vec![
                0.0, 0.0, 1.0, 1.0, //
                0.0, 0.0, 1.0, 1.0, //
                0.5, 0.5, 0.25, 0.25, //
                0.5, 0.5, 0.25, 0.25,
            ]
        );
    }

    #[test]
    fn pgm_header_and_payload() {
        let pgm = to_pgm(&[0.0, 1.0, 0.5], 1, 3);
        assert!(pgm.starts_with(b"P5\n3 1\n255\n"));
        assert_eq!(&pgm[pgm.len() - 3..], &[0, 255, 128]);
    }
}
