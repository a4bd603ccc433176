//! Frames, border-replicating patch extraction, and cell-lattice features.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dsp::Grid2;
use crate::error::{Error, Result};
use crate::labels::BBox;

/// Number of unsigned orientation bins per HOG cell.
pub const HOG_BINS: usize = 9;

const HOG_EPS: f64 = 1e-12;

/// A decoded frame with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFrame {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
    gray: Grid2,
    pub frame_index: usize,
}

impl ImageFrame {
    /// `pixels` is row-major, interleaved when `channels == 3`.
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>, frame_index: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyGrid { height, width });
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidConfig(format!("frames need 1 or 3 channels, got {channels}")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::LengthMismatch {
                left: pixels.len(),
                right: height * width * channels,
            });
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig("frame intensities must lie in [0, 1]".into()));
        }
        let gray = if channels == 1 {
            Grid2::from_vec(height, width, pixels.clone())?
        } else {
            Grid2::from_fn(height, width, |r, c| {
                let i = (r * width + c) * 3;
                0.299 * pixels[i] + 0.587 * pixels[i + 1] + 0.114 * pixels[i + 2]
            })
        };
        Ok(ImageFrame {
            height,
            width,
            channels,
            pixels,
            gray,
            frame_index,
        })
    }

    pub fn from_gray(gray: Grid2, frame_index: usize) -> Result<Self> {
        let (h, w) = gray.dims();
        ImageFrame::new(h, w, 1, gray.into_vec(), frame_index)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Luminance (0.299 R + 0.587 G + 0.114 B).
    pub fn gray(&self) -> &Grid2 {
        &self.gray
    }

    fn gray_clamped(&self, r: isize, c: isize) -> f64 {
        let r = r.clamp(0, self.height as isize - 1) as usize;
        let c = c.clamp(0, self.width as isize - 1) as usize;
        self.gray[(r, c)]
    }
}

/// Multi-channel feature sample on a cell lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPatch {
    pub channels: Vec<Grid2>,
    pub cell_size: usize,
    pub origin: BBox,
}

impl ChannelPatch {
    pub fn new(channels: Vec<Grid2>, cell_size: usize, origin: BBox) -> Result<Self> {
        let first = channels.first().ok_or(Error::Empty("channel list"))?;
        let dims = first.dims();
        for ch in &channels {
            if ch.dims() != dims {
                return Err(Error::ShapeMismatch {
                    expected: dims,
                    actual: ch.dims(),
                });
            }
        }
        Ok(ChannelPatch {
            channels,
            cell_size,
            origin,
        })
    }

    /// Wraps bare grids, e.g. synthetic feature maps defined directly on cells.
    pub fn from_grids(channels: Vec<Grid2>) -> Result<Self> {
        let (h, w) = channels.first().ok_or(Error::Empty("channel list"))?.dims();
        let origin = BBox::new(0.0, 0.0, w as f64, h as f64)?;
        ChannelPatch::new(channels, 1, origin)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].dims()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn is_finite(&self) -> bool {
        self.channels.iter().all(Grid2::is_finite)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.channels.iter().map(Grid2::norm_sqr).sum()
    }
}

fn round_px(v: f64) -> isize {
    (v + 0.5).floor() as isize
}

/// Pixel crop of `region`; coordinates outside the frame take the nearest border pixel.
pub fn extract_patch(frame: &ImageFrame, region: &BBox) -> Result<Grid2> {
    let h = round_px(region.height);
    let w = round_px(region.width);
    if h < 1 || w < 1 {
        return Err(Error::DegenerateRegion(format!(
            "patch {}x{} rounds below one pixel",
            region.width, region.height
        )));
    }
    let top = round_px(region.top);
    let left = round_px(region.left);
    Ok(Grid2::from_fn(h as usize, w as usize, |r, c| {
        frame.gray_clamped(top + r as isize, left + c as isize)
    }))
}

/// Bilinear resampling of `region` onto an `out_h x out_w` pixel block, with
/// border replication. An integer-aligned region of exactly the output size is
/// an exact crop.
pub fn extract_resampled(frame: &ImageFrame, region: &BBox, out_h: usize, out_w: usize) -> Result<Grid2> {
    if out_h == 0 || out_w == 0 || !(region.width > 0.0 && region.height > 0.0) {
        return Err(Error::DegenerateRegion("empty resample target".into()));
    }
    let sy = region.height / out_h as f64;
    let sx = region.width / out_w as f64;
    let xs: Vec<(isize, f64)> = (0..out_w)
        .map(|c| {
            let x = region.left + (c as f64 + 0.5) * sx - 0.5;
            (x.floor() as isize, x - x.floor())
        })
        .collect();
    Ok(Grid2::from_fn(out_h, out_w, |r, c| {
        let y = region.top + (r as f64 + 0.5) * sy - 0.5;
        let (y0, fy) = (y.floor() as isize, y - y.floor());
        let (x0, fx) = xs[c];
        let top = frame.gray_clamped(y0, x0) * (1.0 - fx) + frame.gray_clamped(y0, x0 + 1) * fx;
        let bottom = frame.gray_clamped(y0 + 1, x0) * (1.0 - fx) + frame.gray_clamped(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// 9 unsigned orientation bins, 2x2-block L2 normalization.
    #[default]
    Hog9,
    /// Zero-mean cell-averaged intensity, one channel.
    Gray,
}

impl FeatureKind {
    pub fn channel_count(&self) -> usize {
        match self {
            FeatureKind::Hog9 => HOG_BINS,
            FeatureKind::Gray => 1,
        }
    }

    pub fn compute(&self, patch: &Grid2, cell: usize, origin: BBox) -> Result<ChannelPatch> {
        let mut out = match self {
            FeatureKind::Hog9 => hog_channels(patch, cell)?,
            FeatureKind::Gray => gray_cells(patch, cell)?,
        };
        out.origin = origin;
        Ok(out)
    }
}

fn cell_grid(patch: &Grid2, cell: usize) -> Result<(usize, usize)> {
    let (h, w) = patch.dims();
    if cell == 0 || h < cell || w < cell {
        return Err(Error::DegenerateRegion(format!(
            "patch {h}x{w} smaller than one {cell}px cell"
        )));
    }
    Ok((h / cell, w / cell))
}

fn patch_origin(patch: &Grid2) -> BBox {
    BBox {
        left: 0.0,
        top: 0.0,
        width: patch.width() as f64,
        height: patch.height() as f64,
    }
}

fn gray_cells(patch: &Grid2, cell: usize) -> Result<ChannelPatch> {
    let (ch, cw) = cell_grid(patch, cell)?;
    let mut g = Grid2::from_fn(ch, cw, |r, c| {
        let mut acc = 0.0;
        for y in 0..cell {
            for x in 0..cell {
                acc += patch[(r * cell + y, c * cell + x)];
            }
        }
        acc / (cell * cell) as f64
    });
    let mean = g.as_slice().iter().sum::<f64>() / g.len() as f64;
    g.as_mut_slice().iter_mut().for_each(|v| *v -= mean);
    ChannelPatch::new(vec![g], cell, patch_origin(patch))
}

/// Histogram-of-oriented-gradients channels on `cell x cell` pixel cells.
///
/// Gradients are centered differences with replicated borders. Each pixel
/// votes its magnitude into the two nearest of 9 unsigned bins centred at
/// `0°, 20°, ..., 160°`. A cell's histogram is averaged over its normalizations
/// by the L2 energy of the (up to four) 2x2 cell blocks containing it.
pub fn hog_channels(patch: &Grid2, cell: usize) -> Result<ChannelPatch> {
    let (ch, cw) = cell_grid(patch, cell)?;
    let (h, w) = patch.dims();
    let at = |r: isize, c: isize| patch[(r.clamp(0, h as isize - 1) as usize, c.clamp(0, w as isize - 1) as usize)];

    let mut hist = vec![[0.0_f64; HOG_BINS]; ch * cw];
    let bin_width = PI / HOG_BINS as f64;
    for r in 0..ch * cell {
        for c in 0..cw * cell {
            let (ri, ci) = (r as isize, c as isize);
            let gx = at(ri, ci + 1) - at(ri, ci - 1);
            let gy = at(ri + 1, ci) - at(ri - 1, ci);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).rem_euclid(PI);
            let pos = angle / bin_width;
            let lower = pos.floor();
            let frac = pos - lower;
            let lower = (lower as usize) % HOG_BINS;
            let upper = (lower + 1) % HOG_BINS;
            let bins = &mut hist[(r / cell) * cw + c / cell];
            bins[lower] += mag * (1.0 - frac);
            bins[upper] += mag * frac;
        }
    }

    let energy: Vec<f64> = hist.iter().map(|b| b.iter().map(|v| v * v).sum()).collect();
    let block_energy = |br: usize, bc: usize| -> f64 {
        let mut e = 0.0;
        for r in br..(br + 2).min(ch) {
            for c in bc..(bc + 2).min(cw) {
                e += energy[r * cw + c];
            }
        }
        e
    };
    let block_starts = |i: usize, n: usize| -> [usize; 2] {
        let last = n.saturating_sub(2);
        [i.saturating_sub(1).min(last), i.min(last)]
    };

    let mut channels = vec![Grid2::zeros(ch, cw); HOG_BINS];
    for r in 0..ch {
        for c in 0..cw {
            let mut inv = 0.0;
            for br in block_starts(r, ch) {
                for bc in block_starts(c, cw) {
                    inv += 1.0 / (block_energy(br, bc) + HOG_EPS).sqrt();
                }
            }
            inv /= 4.0;
            for (b, channel) in channels.iter_mut().enumerate() {
                channel[(r, c)] = hist[r * cw + c][b] * inv;
            }
        }
    }
    ChannelPatch::new(channels, cell, patch_origin(patch))
}

/// Multiplies every channel point-wise by `win`.
pub fn apply_window(patch: &ChannelPatch, win: &Grid2) -> Result<ChannelPatch> {
    let channels = patch
        .channels
        .iter()
        .map(|ch| ch.hadamard(win))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelPatch {
        channels,
        cell_size: patch.cell_size,
        origin: patch.origin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::hann2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp_frame(h: usize, w: usize) -> ImageFrame {
        let g = Grid2::from_fn(h, w, |r, c| ((r * w + c) as f64) / (h * w) as f64);
        ImageFrame::from_gray(g, 0).unwrap()
    }

    fn random_patch(h: usize, w: usize, seed: u64) -> Grid2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid2::from_fn(h, w, |_, _| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn rgb_luminance() {
        let f = ImageFrame::new(1, 1, 3, vec![1.0, 0.5, 0.0], 0).unwrap();
        assert!((f.gray()[(0, 0)] - (0.299 + 0.2935)).abs() < 1e-15);
        assert!(ImageFrame::new(1, 1, 2, vec![0.0, 0.0], 0).is_err());
        assert!(ImageFrame::new(1, 1, 1, vec![1.5], 0).is_err());
    }

    #[test]
    fn crop_inside_is_exact() {
        let f = ramp_frame(10, 12);
        let p = extract_patch(&f, &BBox::new(3.0, 2.0, 4.0, 5.0).unwrap()).unwrap();
        assert_eq!(p.dims(), (5, 4));
        for r in 0..5 {
            for c in 0..4 {
                assert_eq!(p[(r, c)], f.gray()[(r + 2, c + 3)]);
            }
        }
    }

    #[test]
    fn crop_past_right_edge_repeats_last_column() {
        let f = ramp_frame(10, 12);
        let p = extract_patch(&f, &BBox::new(7.0, 0.0, 10.0, 3.0).unwrap()).unwrap();
        for r in 0..3 {
            for c in 0..10 {
                let src = (7 + c).min(11);
                assert_eq!(p[(r, c)], f.gray()[(r, src)]);
            }
            for c in 4..10 {
                assert_eq!(p[(r, c)], f.gray()[(r, 11)]);
            }
        }
    }

    #[test]
    fn crop_fully_outside_is_corner_constant() {
        let f = ramp_frame(10, 12);
        let p = extract_patch(&f, &BBox::new(-40.0, -30.0, 5.0, 5.0).unwrap()).unwrap();
        assert!(p.as_slice().iter().all(|v| *v == f.gray()[(0, 0)]));
        let p = extract_patch(&f, &BBox::new(100.0, 50.0, 3.0, 3.0).unwrap()).unwrap();
        assert!(p.as_slice().iter().all(|v| *v == f.gray()[(9, 11)]));
    }

    #[test]
    fn degenerate_region_rejected() {
        let f = ramp_frame(4, 4);
        let tiny = BBox::new(0.0, 0.0, 0.2, 3.0).unwrap();
        assert!(extract_patch(&f, &tiny).is_err());
    }

    #[test]
    fn resample_matches_crop_at_unit_scale() {
        let f = ImageFrame::from_gray(random_patch(20, 20, 9), 0).unwrap();
        let region = BBox::new(4.0, 3.0, 8.0, 6.0).unwrap();
        let a = extract_patch(&f, &region).unwrap();
        let b = extract_resampled(&f, &region, 6, 8).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_patch_has_empty_histograms() {
        let hog = hog_channels(&Grid2::filled(16, 16, 0.4), 4).unwrap();
        assert_eq!(hog.channel_count(), HOG_BINS);
        assert_eq!(hog.dims(), (4, 4));
        assert!(hog.channels.iter().all(|c| c.max_abs() == 0.0));
    }

    #[test]
    fn vertical_edge_lands_in_horizontal_gradient_bin() {
        let patch = Grid2::from_fn(16, 16, |_, c| if c < 8 { 0.0 } else { 1.0 });
        let hog = hog_channels(&patch, 4).unwrap();
        let energy: Vec<f64> = hog.channels.iter().map(Grid2::norm_sqr).collect();
        let total: f64 = energy.iter().sum();
        assert!(total > 0.0);
        assert!((energy[0] - total).abs() < 1e-12 * total);
    }

    #[test]
    fn output_dims_floor_cells() {
        let hog = hog_channels(&random_patch(18, 23, 1), 4).unwrap();
        assert_eq!(hog.dims(), (4, 5));
        assert!(hog_channels(&random_patch(3, 10, 1), 4).is_err());
    }

    /// Doubled-angle circular mean of the orientation histogram, in degrees.
    fn dominant_orientation(hog: &ChannelPatch) -> f64 {
        let (mut sx, mut sy) = (0.0, 0.0);
        for (b, ch) in hog.channels.iter().enumerate() {
            let e: f64 = ch.as_slice().iter().sum();
            let theta = 2.0 * (b as f64) * PI / HOG_BINS as f64;
            sx += e * theta.cos();
            sy += e * theta.sin();
        }
        (sy.atan2(sx).rem_euclid(2.0 * PI) / 2.0).to_degrees()
    }

    #[test]
    fn rotating_a_grating_rotates_orientation() {
        for angle_deg in [0.0_f64, 20.0, 35.0, 70.0] {
            let a = angle_deg.to_radians();
            let n = 32;
            let grating = |r: usize, c: usize, a: f64| {
                let (x, y) = (c as f64 - 15.5, r as f64 - 15.5);
                0.5 + 0.5 * ((x * a.cos() + y * a.sin()) * 0.7).sin()
            };
            let patch = Grid2::from_fn(n, n, |r, c| grating(r, c, a));
            // rotate by 90 degrees: (r, c) -> (c, n - 1 - r)
            let rotated = Grid2::from_fn(n, n, |r, c| patch[(n - 1 - c, r)]);
            let o1 = dominant_orientation(&hog_channels(&patch, 4).unwrap());
            let o2 = dominant_orientation(&hog_channels(&rotated, 4).unwrap());
            let diff = (o2 - o1).rem_euclid(180.0);
            assert!((diff - 90.0).abs() < 3.0, "angle {angle_deg}: {o1} -> {o2}");
        }
    }

    #[test]
    fn window_cases() {
        let p = hog_channels(&random_patch(24, 24, 3), 4).unwrap();
        let ones = Grid2::filled(6, 6, 1.0);
        assert_eq!(apply_window(&p, &ones).unwrap(), p);

        let windowed = apply_window(&p, &hann2(6, 6)).unwrap();
        for ch in &windowed.channels {
            for i in 0..6 {
                assert_eq!(ch[(0, i)], 0.0);
                assert_eq!(ch[(5, i)], 0.0);
                assert_eq!(ch[(i, 0)], 0.0);
                assert_eq!(ch[(i, 5)], 0.0);
            }
        }

        let win = random_patch(6, 6, 4);
        let out = apply_window(&p, &win).unwrap();
        for (l, ch) in out.channels.iter().enumerate() {
            for r in 0..6 {
                for c in 0..6 {
                    assert_eq!(ch[(r, c)], p.channels[l][(r, c)] * win[(r, c)]);
                }
            }
        }
        assert!(apply_window(&p, &Grid2::zeros(5, 6)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn hog_invariant_to_gain_and_offset(seed in 0u64..10_000, gain in 0.1f64..5.0, offset in -2.0f64..2.0) {
                let p = random_patch(16, 20, seed);
                let q = p.map(|v| v * gain + offset);
                let a = hog_channels(&p, 4).unwrap();
                let b = hog_channels(&q, 4).unwrap();
                for (x, y) in a.channels.iter().zip(&b.channels) {
                    for (u, v) in x.as_slice().iter().zip(y.as_slice()) {
                        prop_assert!((u - v).abs() < 1e-6);
                    }
                }
            }

            #[test]
            fn crop_is_translation_consistent(seed in 0u64..1000, l in 0usize..10, t in 0usize..10, dx in 0usize..8, dy in 0usize..8) {
                let f = ImageFrame::from_gray(random_patch(30, 30, seed), 0).unwrap();
                let region = BBox::new(l as f64, t as f64, 6.0, 5.0).unwrap();
                let a = extract_patch(&f, &region.translated(dx as f64, dy as f64)).unwrap();
                for r in 0..5 {
                    for c in 0..6 {
                        prop_assert_eq!(a[(r, c)], f.gray()[(t + dy + r, l + dx + c)]);
                    }
                }
            }

            #[test]
            fn feature_dims_follow_region(h in 4usize..40, w in 4usize..40) {
                let hog = hog_channels(&Grid2::zeros(h, w), 4).unwrap();
                prop_assert_eq!(hog.dims(), (h / 4, w / 4));
                prop_assert_eq!(hog.channel_count(), HOG_BINS);
            }
        }
    }
}
