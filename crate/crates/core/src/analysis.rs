//! Post-hoc analyses: learned channel-embedding correlation and channel
//! sampler size distributions.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::sampling::{exact_size_distribution, ChannelSampler, SamplerConfig, SamplingMode};

/// Pearson correlation between the rows of a `[C, D]` matrix.
pub fn row_correlation(rows: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            let c: Vec<f64> = r.iter().map(|v| v - mean).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::Input(format!("row {i} has zero or non-finite variance")));
            }
            Ok(c.into_iter().map(|v| v / norm).collect())
        })
        .collect::<Result<_>>()?;
    let n = centered.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        out[i][i] = 1.0;
        for j in i + 1..n {
            let v: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let v = v.clamp(-1.0, 1.0);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    Ok(out)
}

/// Correlation of the learned channel embeddings `chn_c`.
pub fn channel_embedding_correlation(params: &ModelParams) -> Result<Vec<Vec<f64>>> {
    let e = params.channel_embeddings()?;
    let rows: Vec<&[f64]> = (0..e.rows()).map(|i| e.row(i)).collect();
    row_correlation(&rows)
}

pub fn matrix_csv(m: &[Vec<f64>], names: &[String]) -> String {
    let mut out = String::from("channel");
    for n in names {
        write!(out, ",{n}").unwrap();
    }
    out.push('\n');
    for (name, row) in names.iter().zip(m) {
        out.push_str(name);
        for v in row {
            write!(out, ",{v:.6}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SizeDistributionRow {
    pub mode: SamplingMode,
    pub channels: usize,
    pub dropout_rate: f64,
    pub m: usize,
    pub exact: f64,
    /// Empirical frequency over the requested draws.
    pub empirical: Option<f64>,
}

/// Exact and (if `draws > 0`) empirical `P(|S| = m)` for each requested
/// sampler and channel count.
pub fn size_distributions(
    samplers: &[SamplerConfig],
    channel_counts: &[usize],
    draws: usize,
) -> Result<Vec<SizeDistributionRow>> {
    let mut rows = Vec::new();
    for cfg in samplers {
        for &c in channel_counts {
            let exact = exact_size_distribution(cfg, c)?;
            let empirical = if draws > 0 {
                let mut s = ChannelSampler::new(cfg.clone())?;
                let mut counts = vec![0usize; c];
                for _ in 0..draws {
                    counts[s.sample(c)?.len() - 1] += 1;
                }
                Some(counts.iter().map(|&k| k as f64 / draws as f64).collect::<Vec<_>>())
            } else {
                None
            };
            for m in 1..=c {
                rows.push(SizeDistributionRow {
                    mode: cfg.mode,
                    channels: c,
                    dropout_rate: cfg.dropout_rate,
                    m,
                    exact: exact[m - 1],
                    empirical: empirical.as_ref().map(|e| e[m - 1]),
                });
            }
        }
    }
    Ok(rows)
}

pub fn size_distribution_csv(rows: &[SizeDistributionRow]) -> String {
    let mut out = String::from("mode,C,p,m,probability,empirical\n");
    for r in rows {
        let emp = r.empirical.map_or(String::new(), |e| format!("{e:.6}"));
        writeln!(
            out,
            "{},{},{},{},{:.9},{}",
            r.mode.as_str(),
            r.channels,
            r.dropout_rate,
            r.m,
            r.exact,
            emp
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_and_opposite_rows() {
        let a = [1.0, 2.0, 4.0];
        let b = [-1.0, -2.0, -4.0];
        let m = row_correlation(&[&a, &a, &b]).unwrap();
        assert!((m[0][1] - 1.0).abs() < 1e-12);
        assert!((m[0][2] + 1.0).abs() < 1e-12);
        assert_eq!(m[1][2], m[2][1]);
    }

    #[test]
    fn constant_row_rejected() {
        assert!(row_correlation(&[&[1.0, 1.0], &[0.0, 1.0]]).is_err());
    }
}
