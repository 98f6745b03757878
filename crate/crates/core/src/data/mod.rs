//! Datasets: the on-disk container and the synthetic generator.

mod dataset;
pub mod synth;

pub use dataset::{Dataset, MAGIC, VERSION};
pub use synth::{generate, pixel_correlation, GeneratedSplit, InfoMode, SampleLatents, SynthConfig};

use std::collections::HashMap;
use std::hash::Hash;

/// Plug-in estimate of `I(X; Y)` in bits from paired discrete observations.
pub fn mutual_information<X: Hash + Eq, Y: Hash + Eq>(pairs: &[(X, Y)]) -> f64 {
    let n = pairs.len() as f64;
    if pairs.is_empty() {
        return 0.0;
    }
    let mut joint: HashMap<(&X, &Y), f64> = HashMap::new();
    let mut px: HashMap<&X, f64> = HashMap::new();
    let mut py: HashMap<&Y, f64> = HashMap::new();
    for (x, y) in pairs {
        *joint.entry((x, y)).or_default() += 1.0;
        *px.entry(x).or_default() += 1.0;
        *py.entry(y).or_default() += 1.0;
    }
    joint
        .iter()
        .map(|((x, y), &c)| {
            let p = c / n;
            p * (p / (px[x] / n * py[y] / n)).log2()
        })
        .sum()
}
