use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::SliceImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Rotation angles are drawn uniformly from `[-max, max]` degrees.
    pub max_rotation_deg: f64,
    pub flip_probability: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            max_rotation_deg: 10.0,
            flip_probability: 0.5,
        }
    }
}

impl AugmentationConfig {
    pub fn none() -> Self {
        AugmentationConfig {
            max_rotation_deg: 0.0,
            flip_probability: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_rotation_deg >= 0.0) || !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config(format!("invalid augmentation {self:?}")));
        }
        Ok(())
    }
}

pub fn flip_horizontal(img: &SliceImage) -> SliceImage {
    let (h, w) = (img.height(), img.width());
    let mut data = img.data().to_vec();
    for row in data.chunks_exact_mut(w) {
        row.reverse();
    }
    SliceImage::new(h, w, data).expect("same shape")
}

/// Rotation about the image center with bilinear resampling; samples that
/// fall outside the image read as zero.
pub fn rotate(img: &SliceImage, degrees: f64) -> SliceImage {
    let (h, w) = (img.height(), img.width());
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let src = img.data();
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            src[r as usize * w + c as usize] as f64
        }
    };
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (dy, dx) = (r as f64 - cy, c as f64 - cx);
            // inverse map of the output pixel into the source
            let sy = cos * dy - sin * dx + cy;
            let sx = sin * dy + cos * dx + cx;
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
            out.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    SliceImage::new(h, w, out).expect("same shape")
}

/// Random rotation then random horizontal flip. Always draws the angle and
/// then the flip decision, so the stream position is independent of the
/// outcome.
pub fn augment<R: Rng + ?Sized>(
    img: &SliceImage,
    config: &AugmentationConfig,
    rng: &mut R,
) -> SliceImage {
    let m = config.max_rotation_deg;
    let angle = if m > 0.0 {
        rng.random_range(-m..=m)
    } else {
        0.0
    };
    let flip = rng.random::<f64>() < config.flip_probability;
    let mut out = if angle != 0.0 {
        rotate(img, angle)
    } else {
        img.clone()
    };
    if flip {
        out = flip_horizontal(&out);
    }
    out
}
