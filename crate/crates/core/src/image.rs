use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dense `C×H×W` image; pixel `(c, y, x)` lives at `(c·H + y)·W + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiChannelImage {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl MultiChannelImage {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Dimension {
                op: "image",
                left: vec![channels, height, width],
                right: vec![data.len()],
            });
        }
        Ok(MultiChannelImage {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        MultiChannelImage {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let plane = self.height * self.width;
        &mut self.data[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// A one-channel image holding channel `c`.
    pub fn single_channel(&self, c: usize) -> MultiChannelImage {
        MultiChannelImage {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.channel(c).to_vec(),
        }
    }
}

/// Splits every channel into non-overlapping `P×P` patches.
///
/// Returns one `[N, P²]` tensor per channel with patches in row-major grid
/// order and pixels row-major inside each patch.
pub fn patchify(img: &MultiChannelImage, patch: usize) -> Result<Vec<Tensor>> {
    let (h, w) = (img.height, img.width);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Config(format!(
            "image {h}x{w} is not divisible into {patch}x{patch} patches"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let n = gh * gw;
    let p2 = patch * patch;
    (0..img.channels)
        .map(|c| {
            let plane = img.channel(c);
            let mut out = Vec::with_capacity(n * p2);
            for gy in 0..gh {
                for gx in 0..gw {
                    for y in 0..patch {
                        let row = (gy * patch + y) * w + gx * patch;
                        out.extend_from_slice(&plane[row..row + patch]);
                    }
                }
            }
            Tensor::new(vec![n, p2], out)
        })
        .collect()
}

/// Inverse of [`patchify`].
pub fn unpatchify(
    patches: &[Tensor],
    height: usize,
    width: usize,
    patch: usize,
) -> Result<MultiChannelImage> {
    if patch == 0 || !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
        return Err(Error::Config(format!(
            "image {height}x{width} is not divisible into {patch}x{patch} patches"
        )));
    }
    let gw = width / patch;
    let mut img = MultiChannelImage::zeros(patches.len(), height, width);
    for (c, t) in patches.iter().enumerate() {
        if t.shape() != [height * width / (patch * patch), patch * patch] {
            return Err(Error::Dimension {
                op: "unpatchify",
                left: t.shape().to_vec(),
                right: vec![height * width / (patch * patch), patch * patch],
            });
        }
        let plane = img.channel_mut(c);
        for (n, px) in t.data().chunks(patch * patch).enumerate() {
            let (gy, gx) = (n / gw, n % gw);
            for y in 0..patch {
                let row = (gy * patch + y) * width + gx * patch;
                plane[row..row + patch].copy_from_slice(&px[y * patch..(y + 1) * patch]);
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> MultiChannelImage {
        let data = (0..c * h * w).map(|v| v as f64).collect();
        MultiChannelImage::new(c, h, w, data).unwrap()
    }

    #[test]
    fn single_patch_is_flattened_channel() {
        let img = ramp(2, 4, 4);
        let p = patchify(&img, 4).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].shape(), &[1, 16]);
        assert_eq!(p[1].data(), img.channel(1));
    }

    #[test]
    fn patch_count() {
        let img = MultiChannelImage::zeros(3, 32, 32);
        let p = patchify(&img, 16).unwrap();
        assert_eq!(p[0].shape(), &[4, 256]);
    }

    #[test]
    fn patch_layout() {
        let img = ramp(1, 4, 4);
        let p = patchify(&img, 2).unwrap();
        // second patch of the first grid row: pixels (0,2),(0,3),(1,2),(1,3)
        assert_eq!(p[0].row(1), &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(p[0].row(2), &[8.0, 9.0, 12.0, 13.0]);
    }

    #[test]
    fn indivisible_dims_rejected() {
        let img = MultiChannelImage::zeros(1, 10, 8);
        assert!(matches!(patchify(&img, 4), Err(Error::Config(_))));
    }

    #[test]
    fn round_trip() {
        let img = ramp(3, 8, 12);
        let p = patchify(&img, 4).unwrap();
        assert_eq!(unpatchify(&p, 8, 12, 4).unwrap(), img);
    }
}
