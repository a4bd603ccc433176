//! Multi-channel filters and their detection responses.

use crate::dsp::{circ_correlate_spectra, dft2, Grid2, SpectrumGrid2};
use crate::error::{Error, Result};
use crate::features::ChannelPatch;

/// Per-channel spatial weights with a cached unitary spectrum per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    weights: Vec<Grid2>,
    spectra: Vec<SpectrumGrid2>,
}

impl FilterBank {
    pub fn new(weights: Vec<Grid2>) -> Result<Self> {
        let dims = weights.first().ok_or(Error::Empty("filter channels"))?.dims();
        if let Some(bad) = weights.iter().find(|w| w.dims() != dims) {
            return Err(Error::ShapeMismatch {
                expected: dims,
                actual: bad.dims(),
            });
        }
        let spectra = weights.iter().map(dft2).collect();
        Ok(FilterBank { weights, spectra })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FilterBank::new(vec![Grid2::zeros(height, width); channels.max(1)]).expect("uniform dims")
    }

    pub fn weights(&self) -> &[Grid2] {
        &self.weights
    }

    pub fn spectra(&self) -> &[SpectrumGrid2] {
        &self.spectra
    }

    pub fn into_weights(self) -> Vec<Grid2> {
        self.weights
    }

    pub fn dims(&self) -> (usize, usize) {
        self.weights[0].dims()
    }

    pub fn channel_count(&self) -> usize {
        self.weights.len()
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().map(Grid2::norm_sqr).sum::<f64>().sqrt()
    }

    /// All channel weights concatenated in channel order.
    pub fn flatten(&self) -> Vec<f64> {
        self.weights.iter().flat_map(|w| w.as_slice().iter().copied()).collect()
    }

    pub fn from_flat(channels: usize, height: usize, width: usize, flat: &[f64]) -> Result<Self> {
        let n = height * width;
        if flat.len() != channels * n {
            return Err(Error::LengthMismatch {
                left: flat.len(),
                right: channels * n,
            });
        }
        FilterBank::new(
            flat.chunks(n)
                .map(|c| Grid2::from_vec(height, width, c.to_vec()))
                .collect::<Result<_>>()?,
        )
    }

    /// Exponential interpolation `self ← (1 - rate)·self + rate·other`.
    pub fn blend(&mut self, other: &FilterBank, rate: f64) -> Result<()> {
        if other.dims() != self.dims() || other.channel_count() != self.channel_count() {
            return Err(Error::ShapeMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            w.scale(1.0 - rate);
            w.axpy(rate, o);
        }
        self.spectra = self.weights.iter().map(dft2).collect();
        Ok(())
    }

    /// Copies the `h x w` block at `(top, left)` out of every channel.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> FilterBank {
        FilterBank::new(self.weights.iter().map(|g| g.crop(top, left, h, w)).collect()).expect("uniform dims")
    }

    /// Zero-pads every channel into `height x width` at `(top, left)`.
    pub fn pad(&self, height: usize, width: usize, top: usize, left: usize) -> FilterBank {
        FilterBank::new(self.weights.iter().map(|g| g.pad_into(height, width, top, left)).collect())
            .expect("uniform dims")
    }
}

/// Summed cyclic correlation of every filter channel with its sample channel.
pub fn response_map(filter: &FilterBank, sample: &ChannelPatch) -> Result<Grid2> {
    if filter.dims() != sample.dims() {
        return Err(Error::ShapeMismatch {
            expected: filter.dims(),
            actual: sample.dims(),
        });
    }
    if filter.channel_count() != sample.channel_count() {
        return Err(Error::LengthMismatch {
            left: filter.channel_count(),
            right: sample.channel_count(),
        });
    }
    let (h, w) = filter.dims();
    let mut out = Grid2::zeros(h, w);
    for (spec, ch) in filter.spectra.iter().zip(&sample.channels) {
        out.axpy(1.0, &circ_correlate_spectra(spec, &dft2(ch)));
    }
    Ok(out)
}

fn parabola_vertex(minus: f64, center: f64, plus: f64) -> f64 {
    let curvature = minus - 2.0 * center + plus;
    if !(curvature < 0.0) {
        return 0.0;
    }
    (0.5 * (minus - plus) / curvature).clamp(-0.999_999, 0.999_999)
}

/// Continuous peak location from separable 3-point quadratic fits around `peak`
/// with cyclic neighbours. Falls back to the integer peak on flat or convex
/// neighbourhoods.
pub fn subcell_refine(resp: &Grid2, peak: (usize, usize)) -> (f64, f64) {
    let (r, c) = (peak.0 as isize, peak.1 as isize);
    let center = resp.get_wrapped(r, c);
    let dr = if resp.height() >= 3 {
        parabola_vertex(resp.get_wrapped(r - 1, c), center, resp.get_wrapped(r + 1, c))
    } else {
        0.0
    };
    let dc = if resp.width() >= 3 {
        parabola_vertex(resp.get_wrapped(r, c - 1), center, resp.get_wrapped(r, c + 1))
    } else {
        0.0
    };
    (peak.0 as f64 + dr, peak.1 as f64 + dc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Grid2 {
        Grid2::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn response_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (h, w, l) in [(5, 7, 2), (8, 8, 3), (3, 4, 1)] {
            let filter = FilterBank::new((0..l).map(|_| random_grid(h, w, &mut rng)).collect()).unwrap();
            let sample = ChannelPatch::from_grids((0..l).map(|_| random_grid(h, w, &mut rng)).collect()).unwrap();
            let fast = response_map(&filter, &sample).unwrap();
            for sr in 0..h {
                for sc in 0..w {
                    let mut acc = 0.0;
                    for ch in 0..l {
                        for r in 0..h {
                            for c in 0..w {
                                acc += filter.weights()[ch][(r, c)] * sample.channels[ch][((r + sr) % h, (c + sc) % w)];
                            }
                        }
                    }
                    assert!((fast[(sr, sc)] - acc).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn zero_filter_zero_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sample = ChannelPatch::from_grids(vec![random_grid(4, 4, &mut rng)]).unwrap();
        let resp = response_map(&FilterBank::zeros(1, 4, 4), &sample).unwrap();
        assert!(resp.max_abs() < 1e-15);
    }

    #[test]
    fn response_shape_mismatch() {
        let sample = ChannelPatch::from_grids(vec![Grid2::zeros(4, 4)]).unwrap();
        assert!(response_map(&FilterBank::zeros(1, 4, 5), &sample).is_err());
        assert!(response_map(&FilterBank::zeros(2, 4, 4), &sample).is_err());
    }

    #[test]
    fn refine_symmetric_bump() {
        let resp = Grid2::from_fn(7, 7, |r, c| -(((r as f64) - 3.0).powi(2) + ((c as f64) - 3.0).powi(2)));
        assert_eq!(subcell_refine(&resp, (3, 3)), (3.0, 3.0));
    }

    #[test]
    fn refine_recovers_paraboloid_peak() {
        let (tr, tc) = (4.3, 2.75);
        let resp = Grid2::from_fn(9, 9, |r, c| 5.0 - 0.7 * (r as f64 - tr).powi(2) - 1.3 * (c as f64 - tc).powi(2));
        let peak = resp.argmax();
        assert_eq!(peak, (4, 3));
        let (r, c) = subcell_refine(&resp, peak);
        assert!((r - tr).abs() < 0.05 && (c - tc).abs() < 0.05, "{r} {c}");
    }

    #[test]
    fn refine_flat_response_keeps_integer_peak() {
        let resp = Grid2::filled(5, 5, 2.0);
        assert_eq!(subcell_refine(&resp, (2, 1)), (2.0, 1.0));
    }

    #[test]
    fn blend_interpolates() {
        let mut a = FilterBank::new(vec![Grid2::filled(2, 2, 1.0)]).unwrap();
        let b = FilterBank::new(vec![Grid2::filled(2, 2, 3.0)]).unwrap();
        a.blend(&b, 0.25).unwrap();
        assert!(a.weights()[0].as_slice().iter().all(|v| (*v - 1.5).abs() < 1e-15));
        assert_eq!(a.spectra()[0], dft2(&a.weights()[0]));
    }
}
