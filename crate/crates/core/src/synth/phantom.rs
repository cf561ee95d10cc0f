use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{minmax_normalize, SliceImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub size: usize,
    /// Inclusive range of interior ellipses per slice.
    pub min_ellipses: usize,
    pub max_ellipses: usize,
    /// Intensity bands interior ellipses draw from.
    pub intensity_bands: Vec<(f64, f64)>,
    /// Box-blur radius applied after rendering.
    pub smoothness: usize,
    /// Scale of per-volume deviation from a shared anatomy in
    /// [`Phantom::jittered`]; 0 reproduces the template exactly.
    pub variability: f64,
}

impl PhantomConfig {
    pub fn new(size: usize) -> Self {
        PhantomConfig {
            size,
            min_ellipses: 3,
            max_ellipses: 7,
            intensity_bands: vec![(0.15, 0.35), (0.75, 0.95)],
            smoothness: 1,
            variability: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::Config(
                "phantom canvas must be at least 8 pixels".into(),
            ));
        }
        if self.min_ellipses > self.max_ellipses || self.intensity_bands.is_empty() {
            return Err(Error::Config(
                "invalid ellipse count range or empty intensity bands".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.variability) {
            return Err(Error::Config("variability must lie in [0,1]".into()));
        }
        if self
            .intensity_bands
            .iter()
            .any(|&(lo, hi)| !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi))
        {
            return Err(Error::Config("intensity bands must lie in [0,1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64, scale: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = (c * dx + s * dy) / (self.rx * scale);
        let v = (-s * dx + c * dy) / (self.ry * scale);
        u * u + v * v <= 1.0
    }
}

/// Anatomy shared by the slices of one volume; slices differ by a
/// through-plane scale.
#[derive(Debug, Clone)]
pub struct Phantom {
    size: usize,
    head: Ellipse,
    skull: f64,
    interior: Vec<Ellipse>,
    waves: [(f64, f64, f64); 2],
    smoothness: usize,
}

impl Phantom {
    pub fn random<R: Rng + ?Sized>(config: &PhantomConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let s = config.size as f64;
        let mid = (s - 1.0) / 2.0;
        let head = Ellipse {
            cy: mid + rng.random_range(-0.03..0.03) * s,
            cx: mid + rng.random_range(-0.03..0.03) * s,
            ry: rng.random_range(0.36..0.45) * s,
            rx: rng.random_range(0.30..0.40) * s,
            angle: rng.random_range(-0.2..0.2),
            value: rng.random_range(0.45..0.6),
        };
        let n = rng.random_range(config.min_ellipses..=config.max_ellipses);
        let interior = (0..n)
            .map(|_| {
                let band =
                    config.intensity_bands[rng.random_range(0..config.intensity_bands.len())];
                let r = rng.random_range(0.0..0.55);
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                Ellipse {
                    cy: head.cy + r * head.ry * t.sin(),
                    cx: head.cx + r * head.rx * t.cos(),
                    ry: rng.random_range(0.05..0.17) * s,
                    rx: rng.random_range(0.05..0.17) * s,
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                    value: if band.1 > band.0 {
                        rng.random_range(band.0..band.1)
                    } else {
                        band.0
                    },
                }
            })
            .collect();
        let mut wave = || {
            (
                rng.random_range(1.0..3.0) * std::f64::consts::TAU / s,
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::PI),
            )
        };
        let waves = [wave(), wave()];
        Ok(Phantom {
            size: config.size,
            head,
            skull: rng.random_range(0.85..1.0),
            interior,
            waves,
            smoothness: config.smoothness,
        })
    }

    /// A subject drawn around `template`: positions, radii, intensities and
    /// texture phases move by amounts proportional to `config.variability`.
    pub fn jittered<R: Rng + ?Sized>(
        template: &Phantom,
        config: &PhantomConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let v = config.variability;
        let s = template.size as f64;
        let mut sym = |scale: f64| {
            if v > 0.0 {
                rng.random_range(-scale..scale) * v
            } else {
                0.0
            }
        };
        let head = Ellipse {
            cy: template.head.cy + sym(0.05) * s,
            cx: template.head.cx + sym(0.05) * s,
            ry: template.head.ry * (1.0 + sym(0.1)),
            rx: template.head.rx * (1.0 + sym(0.1)),
            angle: template.head.angle + sym(0.3),
            value: (template.head.value + sym(0.1)).clamp(0.0, 1.0),
        };
        let interior = template
            .interior
            .iter()
            .map(|e| Ellipse {
                cy: head.cy + (e.cy - template.head.cy) + sym(0.08) * s,
                cx: head.cx + (e.cx - template.head.cx) + sym(0.08) * s,
                ry: e.ry * (1.0 + sym(0.3)),
                rx: e.rx * (1.0 + sym(0.3)),
                angle: e.angle + sym(0.5),
                value: (e.value + sym(0.1)).clamp(0.0, 1.0),
            })
            .collect();
        let waves = template
            .waves
            .map(|(k, phase, dir)| (k, phase + sym(std::f64::consts::PI), dir + sym(0.5)));
        let skull = (template.skull + sym(0.1)).clamp(0.0, 1.0);
        Ok(Phantom {
            size: template.size,
            head,
            skull,
            interior,
            waves,
            smoothness: config.smoothness,
        })
    }

    /// Cross-section at relative depth `z` in `[-1, 1]`, normalized to [0,1].
    pub fn slice(&self, z: f64) -> Result<SliceImage> {
        let n = self.size;
        let scale = (1.0 - 0.55 * z * z).sqrt();
        let mut data = vec![0.0f64; n * n];
        for r in 0..n {
            for c in 0..n {
                let (y, x) = (r as f64, c as f64);
                if !self.head.contains(y, x, scale) {
                    continue;
                }
                let mut v = if self.head.contains(y, x, scale * 0.9) {
                    self.head.value
                } else {
                    self.skull
                };
                for e in &self.interior {
                    let shifted = Ellipse {
                        cy: self.head.cy + (e.cy - self.head.cy) * scale,
                        cx: self.head.cx + (e.cx - self.head.cx) * scale,
                        ..*e
                    };
                    if shifted.contains(y, x, scale) && self.head.contains(y, x, scale * 0.9) {
                        v = e.value;
                    }
                }
                let texture: f64 = self
                    .waves
                    .iter()
                    .map(|&(k, phase, dir)| (k * (dir.cos() * x + dir.sin() * y) + phase).sin())
                    .sum();
                data[r * n + c] = v + 0.03 * texture;
            }
        }
        let smoothed = box_blur(&data, n, n, self.smoothness);
        minmax_normalize(n, n, &smoothed)
    }
}

/// Mean over a `(2r+1)^2` window, clipped at the borders.
pub(crate) fn box_blur(data: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return data.to_vec();
    }
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for r in 0..h {
            for c in 0..w {
                let (pos, len) = if horizontal { (c, w) } else { (r, h) };
                let lo = pos.saturating_sub(radius);
                let hi = (pos + radius).min(len - 1);
                let mut acc = 0.0;
                for k in lo..=hi {
                    acc += if horizontal {
                        src[r * w + k]
                    } else {
                        src[k * w + c]
                    };
                }
                out[r * w + c] = acc / (hi - lo + 1) as f64;
            }
        }
        out
    };
    pass(&pass(data, true), false)
}

/// A single artifact-free slice from a fresh random phantom.
pub fn generate_phantom_slice<R: Rng + ?Sized>(
    config: &PhantomConfig,
    rng: &mut R,
) -> Result<SliceImage> {
    let z = rng.random_range(-0.6..0.6);
    Phantom::random(config, rng)?.slice(z)
}
