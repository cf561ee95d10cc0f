use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::phantom::box_blur;
use crate::domain::SliceImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    MotionGhost,
    GibbsRinging,
    Noise,
    ContrastLoss,
    LocalBlur,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 5] = [
        ArtifactKind::MotionGhost,
        ArtifactKind::GibbsRinging,
        ArtifactKind::Noise,
        ArtifactKind::ContrastLoss,
        ArtifactKind::LocalBlur,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::MotionGhost => "motion_ghost",
            ArtifactKind::GibbsRinging => "gibbs_ringing",
            ArtifactKind::Noise => "noise",
            ArtifactKind::ContrastLoss => "contrast_loss",
            ArtifactKind::LocalBlur => "local_blur",
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArtifactKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArtifactKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown artifact kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactSpec {
    pub kind: ArtifactKind,
    pub severity: f64,
}

/// Peak weight of the ghost copies.
const GHOST_WEIGHT: f64 = 0.5;
/// Share of frequencies kept per axis by the ringing transform.
const GIBBS_KEEP: f64 = 0.12;
/// Noise standard deviation at severity 1.
const NOISE_SIGMA: f64 = 0.12;
/// Patches touched by local blur at severity 1.
const BLUR_PATCHES: usize = 4;

/// Applies one graded artifact; severity 0 is the identity. Every transform
/// moves each pixel monotonically further from its clean value as severity
/// grows (for a fixed random stream), and the result is clamped to [0,1].
pub fn inject_artifact<R: Rng + ?Sized>(
    img: &SliceImage,
    spec: ArtifactSpec,
    rng: &mut R,
) -> Result<SliceImage> {
    let sev = spec.severity;
    if !(0.0..=1.0).contains(&sev) {
        return Err(Error::invalid(format!("severity {sev} outside [0,1]")));
    }
    let (h, w) = (img.height(), img.width());
    let x: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    // random draws happen before the severity check so that the stream does
    // not depend on severity
    let out: Vec<f64> = match spec.kind {
        ArtifactKind::MotionGhost => {
            let vertical = rng.random_bool(0.5);
            let frac: f64 = rng.random_range(0.12..0.25);
            let ghost = ghost_copies(&x, h, w, vertical, frac);
            let a = GHOST_WEIGHT * sev;
            x.iter()
                .zip(&ghost)
                .map(|(&v, &g)| v + a * (g - v))
                .collect()
        }
        ArtifactKind::GibbsRinging => {
            let ringing = fit_unit_range(truncate_frequencies(&x, h, w, GIBBS_KEEP));
            x.iter()
                .zip(&ringing)
                .map(|(&v, &g)| v + sev * (g - v))
                .collect()
        }
        ArtifactKind::Noise => x
            .iter()
            .map(|&v| {
                let z: f64 = StandardNormal.sample(rng);
                v + NOISE_SIGMA * sev * z
            })
            .collect(),
        ArtifactKind::ContrastLoss => {
            let e = 1.0 + 5.0 * sev;
            x.iter()
                .map(|&v| {
                    let d = 2.0 * v - 1.0;
                    0.5 + 0.5 * d.signum() * d.abs().powf(e)
                })
                .collect()
        }
        ArtifactKind::LocalBlur => {
            let half = (h.min(w) / 4).max(1);
            let centers: Vec<(usize, usize)> = (0..BLUR_PATCHES)
                .map(|_| (rng.random_range(0..h), rng.random_range(0..w)))
                .collect();
            let used = (BLUR_PATCHES as f64 * sev).ceil() as usize;
            let mut mask = vec![false; h * w];
            for &(cy, cx) in &centers[..used] {
                for r in cy.saturating_sub(half)..(cy + half).min(h) {
                    for c in cx.saturating_sub(half)..(cx + half).min(w) {
                        mask[r * w + c] = true;
                    }
                }
            }
            let smooth = box_blur(&box_blur(&x, h, w, 3), h, w, 3);
            x.iter()
                .zip(&smooth)
                .zip(&mask)
                .map(|((&v, &s), &m)| if m { v + sev * (s - v) } else { v })
                .collect()
        }
    };
    if sev == 0.0 {
        return Ok(img.clone());
    }
    SliceImage::new(
        h,
        w,
        out.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect(),
    )
}

/// Shrinks `v` toward its mean just enough to lie in [0,1], so that a later
/// clamp cannot shift the mean.
fn fit_unit_range(mut v: Vec<f64>) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let mut scale: f64 = 1.0;
    for &y in &v {
        if y > 1.0 {
            scale = scale.min((1.0 - mean) / (y - mean));
        } else if y < 0.0 {
            scale = scale.min(mean / (mean - y));
        }
    }
    if scale < 1.0 {
        v.iter_mut().for_each(|y| *y = mean + scale * (*y - mean));
    }
    v
}

/// Average of the image rolled forward and backward by `frac` of its extent.
fn ghost_copies(x: &[f64], h: usize, w: usize, vertical: bool, frac: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let len = if vertical { h } else { w };
    let shift = ((len as f64 * frac).round() as usize).clamp(1, len.saturating_sub(1).max(1));
    for r in 0..h {
        for c in 0..w {
            let (a, b) = if vertical {
                (((r + shift) % h) * w + c, ((r + h - shift % h) % h) * w + c)
            } else {
                (r * w + (c + shift) % w, r * w + (c + w - shift % w) % w)
            };
            out[r * w + c] = 0.5 * (x[a] + x[b]);
        }
    }
    out
}

/// Keeps the lowest `keep` share of frequencies along each axis using
/// separable 1-D transforms; the zero frequency always survives, so the mean
/// is preserved exactly before clamping.
pub fn truncate_frequencies(x: &[f64], h: usize, w: usize, keep: f64) -> Vec<f64> {
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let lowpass = |line: &mut [Complex<f64>]| {
        let n = line.len();
        let cutoff = ((n as f64 * keep / 2.0).round() as usize).max(1);
        for (k, v) in line.iter_mut().enumerate() {
            let freq = k.min(n - k);
            if freq > cutoff {
                *v = Complex::new(0.0, 0.0);
            }
        }
    };
    // rows
    let fwd = planner.plan_fft_forward(w);
    let inv = planner.plan_fft_inverse(w);
    for row in buf.chunks_exact_mut(w) {
        fwd.process(row);
        lowpass(row);
        inv.process(row);
    }
    // columns
    let fwd = planner.plan_fft_forward(h);
    let inv = planner.plan_fft_inverse(h);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = buf[r * w + c];
        }
        fwd.process(&mut col);
        lowpass(&mut col);
        inv.process(&mut col);
        for r in 0..h {
            buf[r * w + c] = col[r];
        }
    }
    let scale = 1.0 / (h * w) as f64;
    buf.iter().map(|v| v.re * scale).collect()
}
