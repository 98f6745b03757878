//! Multi-channel dataset container and its binary file format
//! (little-endian):
//!
//! ```text
//! "MCDS" | version u16 | channels u32 | height u32 | width u32 | num_classes u32 | num_samples u64
//! per channel: name_len u16 | name (utf-8)
//! per sample: label u16 | pixels f32×(C·H·W), channel-major then row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::MultiChannelImage;
use crate::io::Reader;

pub const MAGIC: &[u8; 4] = b"MCDS";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    channels: usize,
    height: usize,
    width: usize,
    num_classes: usize,
    channel_names: Vec<String>,
    labels: Vec<u16>,
    pixels: Vec<f32>,
}

impl Dataset {
    pub fn new(
        channel_names: Vec<String>,
        height: usize,
        width: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if channel_names.is_empty() || height == 0 || width == 0 {
            return Err(Error::Input(
                "dataset needs at least one channel and nonzero dimensions".into(),
            ));
        }
        if num_classes == 0 || num_classes > usize::from(u16::MAX) + 1 {
            return Err(Error::Input(format!("unsupported class count {num_classes}")));
        }
        Ok(Dataset {
            channels: channel_names.len(),
            height,
            width,
            num_classes,
            channel_names,
            labels: Vec::new(),
            pixels: Vec::new(),
        })
    }

    /// Stores `image` rounded to `f32`.
    pub fn push(&mut self, image: &MultiChannelImage, label: usize) -> Result<()> {
        if (image.channels(), image.height(), image.width())
            != (self.channels, self.height, self.width)
        {
            return Err(Error::Dimension {
                op: "dataset push",
                left: vec![image.channels(), image.height(), image.width()],
                right: vec![self.channels, self.height, self.width],
            });
        }
        if label >= self.num_classes {
            return Err(Error::Input(format!(
                "label {label} out of range for {} classes",
                self.num_classes
            )));
        }
        self.labels.push(label as u16);
        self.pixels.extend(image.data().iter().map(|&v| v as f32));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn label(&self, i: usize) -> usize {
        usize::from(self.labels[i])
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().map(|&l| usize::from(l))
    }

    fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> MultiChannelImage {
        let n = self.sample_len();
        let data = self.pixels[i * n..(i + 1) * n]
            .iter()
            .map(|&v| f64::from(v))
            .collect();
        MultiChannelImage::new(self.channels, self.height, self.width, data)
            .expect("dataset stores whole images")
    }

    /// Copy holding the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let n = self.sample_len();
        let mut out = Dataset {
            labels: Vec::with_capacity(indices.len()),
            pixels: Vec::with_capacity(indices.len() * n),
            ..self.clone_header()
        };
        for &i in indices {
            out.labels.push(self.labels[i]);
            out.pixels.extend_from_slice(&self.pixels[i * n..(i + 1) * n]);
        }
        out
    }

    /// Copy restricted to the first `k` channels.
    pub fn channel_prefix(&self, k: usize) -> Result<Dataset> {
        if k == 0 || k > self.channels {
            return Err(Error::Input(format!(
                "cannot keep {k} of {} channels",
                self.channels
            )));
        }
        let plane = self.height * self.width;
        let n = self.sample_len();
        let mut out = Dataset {
            channels: k,
            channel_names: self.channel_names[..k].to_vec(),
            labels: self.labels.clone(),
            pixels: Vec::with_capacity(self.len() * k * plane),
            ..self.clone_header()
        };
        for i in 0..self.len() {
            out.pixels
                .extend_from_slice(&self.pixels[i * n..i * n + k * plane]);
        }
        Ok(out)
    }

    /// Copy with an exact duplicate of channel `src` appended as the last
    /// channel.
    pub fn with_duplicate_channel(&self, src: usize) -> Result<Dataset> {
        if src >= self.channels {
            return Err(Error::Input(format!(
                "channel {src} out of range for {} channels",
                self.channels
            )));
        }
        let plane = self.height * self.width;
        let n = self.sample_len();
        let mut names = self.channel_names.clone();
        names.push(format!("{}_dup", self.channel_names[src]));
        let mut out = Dataset {
            channels: self.channels + 1,
            channel_names: names,
            labels: self.labels.clone(),
            pixels: Vec::with_capacity(self.len() * (n + plane)),
            ..self.clone_header()
        };
        for i in 0..self.len() {
            let sample = &self.pixels[i * n..(i + 1) * n];
            out.pixels.extend_from_slice(sample);
            out.pixels
                .extend_from_slice(&sample[src * plane..(src + 1) * plane]);
        }
        Ok(out)
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            channels: self.channels,
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            channel_names: self.channel_names.clone(),
            labels: Vec::new(),
            pixels: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.pixels.len() * 4 + self.labels.len() * 2);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.channels, self.height, self.width, self.num_classes] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.labels.len() as u64).to_le_bytes());
        for name in &self.channel_names {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        let n = self.sample_len();
        for (i, &label) in self.labels.iter().enumerate() {
            out.extend_from_slice(&label.to_le_bytes());
            for &v in &self.pixels[i * n..(i + 1) * n] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "dataset");
        if r.take(4)? != MAGIC {
            return Err(Error::format("dataset", "bad magic (expected MCDS)"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::format(
                "dataset",
                format!("unsupported version {version} (expected {VERSION})"),
            ));
        }
        let channels = r.u32()? as usize;
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let num_classes = r.u32()? as usize;
        let num_samples = r.u64()?;
        let names = (0..channels)
            .map(|_| {
                let len = r.u16()? as usize;
                String::from_utf8(r.take(len)?.to_vec())
                    .map_err(|_| Error::format("dataset", "channel name is not utf-8"))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut ds = Dataset::new(names, height, width, num_classes)?;

        let sample_bytes = 2 + 4 * ds.sample_len() as u64;
        let header = (bytes.len() - r.remaining()) as u64;
        let expected = num_samples
            .checked_mul(sample_bytes)
            .and_then(|p| p.checked_add(header))
            .ok_or_else(|| Error::format("dataset", "declared size overflows"))?;
        if expected != bytes.len() as u64 {
            return Err(Error::Truncated {
                context: "dataset payload".into(),
                expected,
                found: bytes.len() as u64,
            });
        }
        let n = ds.sample_len();
        ds.labels.reserve(num_samples as usize);
        ds.pixels.reserve(num_samples as usize * n);
        for i in 0..num_samples {
            let label = r.u16()?;
            if usize::from(label) >= num_classes {
                return Err(Error::format(
                    "dataset",
                    format!("sample {i} has label {label} >= {num_classes} classes"),
                ));
            }
            ds.labels.push(label);
            ds.pixels.extend(r.f32s(n)?);
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|i| format!("ch{i}")).collect()
    }

    fn sample() -> Dataset {
        let mut ds = Dataset::new(names(2), 2, 3, 4).unwrap();
        for k in 0..5 {
            let data = (0..12).map(|v| (v * k) as f64 * 0.1 - 1.0).collect();
            ds.push(&MultiChannelImage::new(2, 2, 3, data).unwrap(), k % 4)
                .unwrap();
        }
        ds
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = sample();
        let bytes = ds.to_bytes();
        let back = Dataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = sample().to_bytes();
        bytes[3] = b'X';
        assert!(matches!(Dataset::from_bytes(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn truncated_payload_reports_sizes() {
        let bytes = sample().to_bytes();
        let full = bytes.len() as u64;
        match Dataset::from_bytes(&bytes[..bytes.len() - 5]) {
            Err(Error::Truncated {
                expected, found, ..
            }) => {
                assert_eq!(expected, full);
                assert_eq!(found, full - 5);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn zero_samples_is_fine() {
        let ds = Dataset::new(names(3), 4, 4, 2).unwrap();
        let back = Dataset::from_bytes(&ds.to_bytes()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.channels(), 3);
    }

    #[test]
    fn prefix_and_subset() {
        let ds = sample();
        let p = ds.channel_prefix(1).unwrap();
        assert_eq!(p.channels(), 1);
        assert_eq!(p.image(2).channel(0), ds.image(2).channel(0));
        let s = ds.subset(&[4, 1]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.image(0), ds.image(4));
        assert_eq!(s.label(1), ds.label(1));
    }

    #[test]
    fn push_validates() {
        let mut ds = Dataset::new(names(2), 2, 3, 4).unwrap();
        assert!(ds.push(&MultiChannelImage::zeros(1, 2, 3), 0).is_err());
        assert!(ds.push(&MultiChannelImage::zeros(2, 2, 3), 4).is_err());
    }
}
