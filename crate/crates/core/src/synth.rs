//! Seeded synthetic sequences with exact ground truth.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::Grid2;
use crate::error::{Error, Result};
use crate::features::ImageFrame;
use crate::labels::BBox;

/// Periodic band-limited noise texture with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    grid: Grid2,
}

fn blur_axis(g: &Grid2, sigma: f64, along_rows: bool) -> Grid2 {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let (h, w) = g.dims();
    Grid2::from_fn(h, w, |r, c| {
        let mut acc = 0.0;
        for (k, d) in kernel.iter().zip(-radius..=radius) {
            acc += if along_rows {
                k * g.get_wrapped(r as isize + d, c as isize)
            } else {
                k * g.get_wrapped(r as isize, c as isize + d)
            };
        }
        acc / norm
    })
}

/// Blurred white noise scaled to unit RMS.
fn blurred_noise(size: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Grid2 {
    let noise = Grid2::from_fn(size, size, |_, _| rng.gen_range(-1.0..1.0));
    let mut g = blur_axis(&blur_axis(&noise, sigma, true), sigma, false);
    let rms = (g.norm_sqr() / g.len() as f64).sqrt();
    g.scale(1.0 / rms);
    g
}

impl Texture {
    /// `size x size` texture mixing fine and coarse blurred noise.
    pub fn new(size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fine = blurred_noise(size, 1.5, &mut rng);
        let coarse = blurred_noise(size, 5.0, &mut rng);
        let mut g = Grid2::from_fn(size, size, |r, c| 0.7 * fine[(r, c)] + 0.5 * coarse[(r, c)]);
        let lo = g.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = g.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(f64::MIN_POSITIVE);
        g.as_mut_slice().iter_mut().for_each(|v| *v = (*v - lo) / span);
        Texture { grid: g }
    }

    pub fn grid(&self) -> &Grid2 {
        &self.grid
    }

    /// Bilinear sample at pixel-centre coordinates with periodic wrap.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (xi, yi) = (x0 as isize, y0 as isize);
        let g = &self.grid;
        let top = g.get_wrapped(yi, xi) * (1.0 - fx) + g.get_wrapped(yi, xi + 1) * fx;
        let bottom = g.get_wrapped(yi + 1, xi) * (1.0 - fx) + g.get_wrapped(yi + 1, xi + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthCase {
    /// A textured square drifting over a static textured background.
    Translate,
    /// The whole frame zooming about the object centre along a scale ladder.
    Zoom,
    /// Identical frames.
    Static,
}

impl std::str::FromStr for SynthCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translate" => Ok(SynthCase::Translate),
            "zoom" => Ok(SynthCase::Zoom),
            "static" => Ok(SynthCase::Static),
            other => Err(Error::InvalidConfig(format!("unknown synthetic case {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Object side in pixels.
    pub object: f64,
    /// Largest per-frame displacement of the translating object, in pixels.
    pub max_speed: f64,
    pub scale_step: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frames: 100,
            height: 200,
            width: 200,
            object: 32.0,
            max_speed: 8.0,
            scale_step: 1.02,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub name: String,
    pub frames: Vec<ImageFrame>,
    pub truth: Vec<BBox>,
    /// Ladder exponent `k` of the scale change from the previous frame
    /// (`scale_step^k`); all zero outside the zoom case.
    pub scale_steps: Vec<i32>,
}

/// Per-frame ladder exponents; the pattern sums to zero so the zoom stays bounded.
const ZOOM_PATTERN: [i32; 8] = [1, 2, 3, 0, -3, -2, -1, 0];

pub fn generate(case: SynthCase, cfg: &SynthConfig) -> Result<SynthSequence> {
    if cfg.frames == 0 || cfg.height < 8 || cfg.width < 8 || !(cfg.object >= 4.0) {
        return Err(Error::InvalidConfig(format!("synthetic settings out of range: {cfg:?}")));
    }
    let background = Texture::new(256, cfg.seed);
    let foreground = Texture::new(128, cfg.seed.wrapping_add(1));
    let (h, w) = (cfg.height, cfg.width);
    let (cx0, cy0) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut truth = Vec::with_capacity(cfg.frames);
    let mut scale_steps = Vec::with_capacity(cfg.frames);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    match case {
        SynthCase::Static | SynthCase::Translate => {
            let side = cfg.object;
            let (mut left, mut top) = (cx0 - side / 2.0, cy0 - side / 2.0);
            let (mut vx, mut vy) = (0.0_f64, 0.0_f64);
            let margin = side;
            for f in 0..cfg.frames {
                if case == SynthCase::Translate && f > 0 {
                    vx += rng.gen_range(-2.0..2.0);
                    vy += rng.gen_range(-2.0..2.0);
                    let speed = (vx * vx + vy * vy).sqrt();
                    // Slightly under the cap so rounding in the accumulated
                    // position cannot push a step over it.
                    let cap = cfg.max_speed * (1.0 - 1e-9);
                    if speed > cap {
                        vx *= cap / speed;
                        vy *= cap / speed;
                    }
                    if left + vx < margin || left + vx + side > w as f64 - margin {
                        vx = -vx;
                    }
                    if top + vy < margin || top + vy + side > h as f64 - margin {
                        vy = -vy;
                    }
                    left += vx;
                    top += vy;
                }
                let bbox = BBox::new(left, top, side, side)?;
                let img = Grid2::from_fn(h, w, |r, c| {
                    // Pixel `c` spans `[c, c + 1)` in box coordinates.
                    let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
                    if x >= left && x < left + side && y >= top && y < top + side {
                        foreground.sample(x - left, y - top)
                    } else {
                        background.sample(x, y)
                    }
                });
                frames.push(ImageFrame::from_gray(img, f)?);
                truth.push(bbox);
                scale_steps.push(0);
            }
        }
        SynthCase::Zoom => {
            let mut exponent = 0;
            for f in 0..cfg.frames {
                let k = if f == 0 { 0 } else { ZOOM_PATTERN[(f - 1) % ZOOM_PATTERN.len()] };
                exponent += k;
                let zoom = cfg.scale_step.powi(exponent);
                let img = Grid2::from_fn(h, w, |r, c| {
                    let x = (c as f64 + 0.5 - cx0) / zoom + cx0;
                    let y = (r as f64 + 0.5 - cy0) / zoom + cy0;
                    background.sample(x, y)
                });
                frames.push(ImageFrame::from_gray(img, f)?);
                truth.push(BBox::from_center(cx0, cy0, cfg.object * zoom, cfg.object * zoom)?);
                scale_steps.push(k);
            }
        }
    }
    let name = match case {
        SynthCase::Translate => "synth_translate",
        SynthCase::Zoom => "synth_zoom",
        SynthCase::Static => "synth_static",
    };
    Ok(SynthSequence {
        name: name.to_string(),
        frames,
        truth,
        scale_steps,
    })
}

/// Writes `img/0001.png, ...` and a 1-indexed `groundtruth_rect.txt`.
pub fn write_sequence(seq: &SynthSequence, dir: &Path) -> Result<()> {
    let img_dir = dir.join("img");
    std::fs::create_dir_all(&img_dir)?;
    for (i, frame) in seq.frames.iter().enumerate() {
        let gray = frame.gray();
        let (h, w) = gray.dims();
        let bytes: Vec<u8> = gray.as_slice().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        let path = img_dir.join(format!("{:04}.png", i + 1));
        image::GrayImage::from_raw(w as u32, h as u32, bytes)
            .ok_or_else(|| Error::InvalidConfig("image buffer size".into()))?
            .save(&path)
            .map_err(|e| Error::UnsupportedImage {
                path: path.clone(),
                message: e.to_string(),
            })?;
    }
    let mut text = String::new();
    for b in &seq.truth {
        text.push_str(&format!("{},{},{},{}\n", b.left + 1.0, b.top + 1.0, b.width, b.height));
    }
    std::fs::write(dir.join("groundtruth_rect.txt"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texture_is_normalized_and_seeded() {
        let a = Texture::new(64, 3);
        assert_eq!(a, Texture::new(64, 3));
        assert_ne!(a, Texture::new(64, 4));
        let (lo, hi) = a.grid().as_slice().iter().fold((1.0_f64, 0.0_f64), |(l, h), v| (l.min(*v), h.max(*v)));
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn texture_sample_hits_grid_points() {
        let t = Texture::new(32, 1);
        assert_eq!(t.sample(5.0, 7.0), t.grid()[(7, 5)]);
        assert_eq!(t.sample(37.0, 7.0), t.grid()[(7, 5)]);
    }

    #[test]
    fn translate_respects_speed_limit() {
        let cfg = SynthConfig { frames: 40, ..Default::default() };
        let seq = generate(SynthCase::Translate, &cfg).unwrap();
        assert_eq!(seq.frames.len(), 40);
        for pair in seq.truth.windows(2) {
            let (a, b) = (pair[0].center(), pair[1].center());
            assert!(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() <= cfg.max_speed);
        }
    }

    #[test]
    fn static_frames_repeat() {
        let seq = generate(SynthCase::Static, &SynthConfig { frames: 3, ..Default::default() }).unwrap();
        assert_eq!(seq.frames[0].gray(), seq.frames[2].gray());
        assert_eq!(seq.truth[0], seq.truth[2]);
    }

    #[test]
    fn zoom_truth_follows_ladder() {
        let cfg = SynthConfig { frames: 12, ..Default::default() };
        let seq = generate(SynthCase::Zoom, &cfg).unwrap();
        for f in 1..12 {
            let ratio = seq.truth[f].width / seq.truth[f - 1].width;
            assert!((ratio - cfg.scale_step.powi(seq.scale_steps[f])).abs() < 1e-12);
        }
    }
}
