//! Accuracy over every nonempty channel combination, grouped by size, and
//! model-vs-model gains.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::parallel;
use crate::sampling::{all_combinations, ChannelCombination};

/// Largest channel count accepted by the exhaustive sweep.
pub const MAX_SWEEP_CHANNELS: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct GroupStat {
    pub m: usize,
    pub mean: f64,
    /// Population standard deviation over the size-`m` combinations.
    pub std: f64,
    pub count: usize,
}

/// Mean and population std of `values` per combination size.
fn grouped(entries: &[(ChannelCombination, f64)]) -> Vec<GroupStat> {
    let mut by_m: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (c, v) in entries {
        by_m.entry(c.len()).or_default().push(*v);
    }
    by_m.into_iter()
        .map(|(m, vs)| {
            let n = vs.len() as f64;
            let mean = vs.iter().sum::<f64>() / n;
            let var = vs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            GroupStat {
                m,
                mean,
                std: var.sqrt(),
                count: vs.len(),
            }
        })
        .collect()
}

fn grouped_csv(groups: &[GroupStat]) -> String {
    let mut out = String::from("m,mean,std,count\n");
    for g in groups {
        writeln!(out, "{},{:.6},{:.6},{}", g.m, g.mean, g.std, g.count).unwrap();
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct CombinationReport {
    /// Ordered by size, then lexicographically.
    pub accuracy: Vec<(ChannelCombination, f64)>,
    pub grouped: Vec<GroupStat>,
    pub n_eval: usize,
}

impl CombinationReport {
    pub fn from_entries(accuracy: Vec<(ChannelCombination, f64)>, n_eval: usize) -> Self {
        let grouped = grouped(&accuracy);
        CombinationReport {
            accuracy,
            grouped,
            n_eval,
        }
    }

    pub fn get(&self, combo: &ChannelCombination) -> Option<f64> {
        self.accuracy.iter().find(|(c, _)| c == combo).map(|(_, a)| *a)
    }

    pub fn group(&self, m: usize) -> Option<&GroupStat> {
        self.grouped.iter().find(|g| g.m == m)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("combination,m,accuracy\n");
        for (c, a) in &self.accuracy {
            writeln!(out, "{},{},{:.6}", c.label(), c.len(), a).unwrap();
        }
        out
    }

    pub fn grouped_csv(&self) -> String {
        grouped_csv(&self.grouped)
    }

    /// Parses the output of [`CombinationReport::to_csv`].
    pub fn from_csv(text: &str, source_channels: usize, n_eval: usize) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("combination,m,accuracy") {
            return Err(Error::format("report csv", "missing header combination,m,accuracy"));
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.trim().split(',').collect();
            let bad = || Error::format("report csv", format!("line {}: '{line}'", i + 2));
            if fields.len() != 3 {
                return Err(bad());
            }
            let combo = ChannelCombination::parse_label(fields[0], source_channels)?;
            let acc: f64 = fields[2].parse().map_err(|_| bad())?;
            entries.push((combo, acc));
        }
        Ok(Self::from_entries(entries, n_eval))
    }
}

fn check_compat(params: &ModelParams, ds: &Dataset) -> Result<()> {
    let cfg = params.config();
    if (ds.channels(), ds.height(), ds.width()) != (cfg.channels, cfg.image_h, cfg.image_w) {
        return Err(Error::Dimension {
            op: "evaluation data",
            left: vec![ds.channels(), ds.height(), ds.width()],
            right: vec![cfg.channels, cfg.image_h, cfg.image_w],
        });
    }
    if ds.num_classes() != cfg.num_classes {
        return Err(Error::Input(format!(
            "dataset has {} classes, model expects {}",
            ds.num_classes(),
            cfg.num_classes
        )));
    }
    Ok(())
}

/// Arg-max predictions for every image with the channels in `combo`.
pub fn predictions(params: &ModelParams, ds: &Dataset, combo: &ChannelCombination) -> Result<Vec<usize>> {
    check_compat(params, ds)?;
    parallel::map_range(ds.len(), |i| params.predict(&ds.image(i), combo))
        .into_iter()
        .collect()
}

pub fn accuracy(params: &ModelParams, ds: &Dataset, combo: &ChannelCombination) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty dataset".into()));
    }
    let pred = predictions(params, ds, combo)?;
    let correct = pred.iter().zip(ds.labels()).filter(|(p, l)| **p == *l).count();
    Ok(correct as f64 / ds.len() as f64)
}

/// `(correct, total)` per class.
pub fn per_class_accuracy(
    params: &ModelParams,
    ds: &Dataset,
    combo: &ChannelCombination,
) -> Result<Vec<(usize, usize)>> {
    let pred = predictions(params, ds, combo)?;
    let mut out = vec![(0, 0); ds.num_classes()];
    for (p, l) in pred.iter().zip(ds.labels()) {
        out[l].1 += 1;
        if *p == l {
            out[l].0 += 1;
        }
    }
    Ok(out)
}

pub fn evaluate_all_combinations(params: &ModelParams, ds: &Dataset) -> Result<CombinationReport> {
    let c = params.config().channels;
    if c > MAX_SWEEP_CHANNELS {
        return Err(Error::Input(format!(
            "refusing to evaluate {} combinations of {c} channels (limit is {MAX_SWEEP_CHANNELS} channels)",
            (1u64 << c) - 1
        )));
    }
    let mut entries = Vec::new();
    for combo in all_combinations(c)? {
        let acc = accuracy(params, ds, &combo)?;
        entries.push((combo, acc));
    }
    Ok(CombinationReport::from_entries(entries, ds.len()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GainReport {
    pub gains: Vec<(ChannelCombination, f64)>,
    pub grouped: Vec<GroupStat>,
}

impl GainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("combination,m,gain\n");
        for (c, g) in &self.gains {
            writeln!(out, "{},{},{:.6}", c.label(), c.len(), g).unwrap();
        }
        out
    }

    pub fn grouped_csv(&self) -> String {
        grouped_csv(&self.grouped)
    }
}

/// Per-combination `a − b` with grouped mean and population std.
pub fn gain_report(a: &CombinationReport, b: &CombinationReport) -> Result<GainReport> {
    let same = a.accuracy.len() == b.accuracy.len()
        && a.accuracy.iter().zip(&b.accuracy).all(|((x, _), (y, _))| x == y);
    if !same {
        return Err(Error::Input(format!(
            "reports cover different combinations ({} vs {} entries)",
            a.accuracy.len(),
            b.accuracy.len()
        )));
    }
    let gains: Vec<_> = a
        .accuracy
        .iter()
        .zip(&b.accuracy)
        .map(|((c, x), (_, y))| (c.clone(), x - y))
        .collect();
    let grouped = grouped(&gains);
    Ok(GainReport { gains, grouped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn combo(ix: &[usize], c: usize) -> ChannelCombination {
        ChannelCombination::new(ix.to_vec(), c).unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let r = CombinationReport::from_entries(
            vec![(combo(&[0], 2), 0.5), (combo(&[1], 2), 0.25), (combo(&[0, 1], 2), 1.0)],
            4,
        );
        let back = CombinationReport::from_csv(&r.to_csv(), 2, 4).unwrap();
        assert_eq!(back, r);
        assert!(r.grouped_csv().starts_with("m,mean,std,count\n1,0.375000,0.125000,2"));
    }

    #[test]
    fn mismatched_reports_rejected() {
        let a = CombinationReport::from_entries(vec![(combo(&[0], 2), 0.5)], 1);
        let b = CombinationReport::from_entries(vec![(combo(&[1], 2), 0.5)], 1);
        assert!(gain_report(&a, &b).is_err());
    }
}
