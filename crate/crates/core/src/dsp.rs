//! Real and complex 2-D grids with a unitary DFT.
//!
//! Every grid is stored row-major. The transform pair is normalized by
//! `1/sqrt(H*W)` in both directions so Parseval holds with unit constant:
//! `‖g‖₂ = ‖dft2(g)‖₂`.
//!
//! Cyclic shifts use non-negative representatives modulo `(H, W)`. A shift by
//! `s` of a grid `x` is the grid `x_s[t] = x[(t + s) mod (H, W)]`, so
//! [`circ_correlate`] returns `out[s] = ⟨filter, x_s⟩`.

use std::cell::RefCell;
use std::ops::{Index, IndexMut};

use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Relative guard for point-wise division.
pub const DIVISION_EPS: f64 = 1e-12;

/// Relative tolerance on the imaginary residual accepted by [`idft2`].
pub const IMAG_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2 {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid2 {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::EmptyGrid { height, width });
    }
    Ok(())
}

impl Grid2 {
    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "grid dims must be positive");
        Grid2 {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        let mut g = Grid2::zeros(height, width);
        g.data.fill(value);
        g
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: height * width,
            });
        }
        Ok(Grid2 {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut g = Grid2::zeros(height, width);
        for r in 0..height {
            for c in 0..width {
                g.data[r * width + c] = f(r, c);
            }
        }
        g
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Value at a cyclic position; negative or overflowing indices wrap.
    pub fn get_wrapped(&self, row: isize, col: isize) -> f64 {
        let r = row.rem_euclid(self.height as isize) as usize;
        let c = col.rem_euclid(self.width as isize) as usize;
        self.data[r * self.width + c]
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &Grid2) -> f64 {
        debug_assert_eq!(self.dims(), other.dims());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Row-major index of the maximum; the first occurrence wins ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid2 {
        Grid2 {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    /// `self += k * other`
    pub fn axpy(&mut self, k: f64, other: &Grid2) {
        debug_assert_eq!(self.dims(), other.dims());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn hadamard(&self, other: &Grid2) -> Result<Grid2> {
        same_shape(self.dims(), other.dims())?;
        Ok(Grid2 {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        })
    }

    /// Copy of the `h x w` block whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Grid2 {
        assert!(top + h <= self.height && left + w <= self.width, "crop out of bounds");
        Grid2::from_fn(h, w, |r, c| self.data[(top + r) * self.width + left + c])
    }

    /// Embeds `self` into a zero grid of `height x width` at `(top, left)`.
    pub fn pad_into(&self, height: usize, width: usize, top: usize, left: usize) -> Grid2 {
        assert!(top + self.height <= height && left + self.width <= width, "pad out of bounds");
        let mut out = Grid2::zeros(height, width);
        for r in 0..self.height {
            let dst = (top + r) * width + left;
            out.data[dst..dst + self.width]
                .copy_from_slice(&self.data[r * self.width..(r + 1) * self.width]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Grid2 {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.width + c]
    }
}

impl IndexMut<(usize, usize)> for Grid2 {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.width + c]
    }
}

impl SpectrumGrid2 {
    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "grid dims must be positive");
        SpectrumGrid2 {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: Complex64) -> Self {
        SpectrumGrid2 {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: height * width,
            });
        }
        Ok(SpectrumGrid2 {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn conj(&self) -> SpectrumGrid2 {
        SpectrumGrid2 {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.conj()).collect(),
        }
    }

    /// Largest deviation from `s[u,v] = conj(s[-u,-v])`.
    pub fn symmetry_residual(&self) -> f64 {
        let (h, w) = self.dims();
        let mut worst: f64 = 0.0;
        for u in 0..h {
            for v in 0..w {
                let mirror = self.data[((h - u) % h) * w + (w - v) % w];
                worst = worst.max((self.data[u * w + v] - mirror.conj()).norm());
            }
        }
        worst
    }
}

impl Index<(usize, usize)> for SpectrumGrid2 {
    type Output = Complex64;
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.width + c]
    }
}

impl IndexMut<(usize, usize)> for SpectrumGrid2 {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.width + c]
    }
}

fn same_shape(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch { expected, actual });
    }
    Ok(())
}

/// Unscaled in-place 2-D FFT over a row-major buffer.
fn fft2_in_place(data: &mut [Complex64], height: usize, width: usize, direction: FftDirection) {
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let row_fft = planner.plan_fft(width, direction);
        row_fft.process(data);
        if height > 1 {
            let col_fft = planner.plan_fft(height, direction);
            let mut column = vec![Complex64::new(0.0, 0.0); height];
            for c in 0..width {
                for r in 0..height {
                    column[r] = data[r * width + c];
                }
                col_fft.process(&mut column);
                for r in 0..height {
                    data[r * width + c] = column[r];
                }
            }
        }
    });
}

/// Unitary forward DFT of a real grid.
pub fn dft2(g: &Grid2) -> SpectrumGrid2 {
    let (h, w) = g.dims();
    let mut data: Vec<Complex64> = g.data.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    fft2_in_place(&mut data, h, w, FftDirection::Forward);
    let k = 1.0 / ((h * w) as f64).sqrt();
    data.iter_mut().for_each(|v| *v *= k);
    SpectrumGrid2 {
        height: h,
        width: w,
        data,
    }
}

/// Unitary inverse DFT that keeps the full complex result.
pub fn idft2_complex(s: &SpectrumGrid2) -> SpectrumGrid2 {
    let (h, w) = s.dims();
    let mut data = s.data.clone();
    fft2_in_place(&mut data, h, w, FftDirection::Inverse);
    let k = 1.0 / ((h * w) as f64).sqrt();
    data.iter_mut().for_each(|v| *v *= k);
    SpectrumGrid2 {
        height: h,
        width: w,
        data,
    }
}

/// Unitary inverse DFT back to a real grid.
///
/// Fails when the imaginary part of the result exceeds [`IMAG_TOLERANCE`]
/// relative to the largest magnitude, i.e. the input was not the spectrum of
/// a real grid.
pub fn idft2(s: &SpectrumGrid2) -> Result<Grid2> {
    let full = idft2_complex(s);
    let scale = full.data.iter().fold(1.0_f64, |m, v| m.max(v.norm()));
    let residual = full.data.iter().fold(0.0_f64, |m, v| m.max(v.im.abs()));
    if residual > IMAG_TOLERANCE * scale {
        return Err(Error::NotConjugateSymmetric { residual });
    }
    Ok(Grid2 {
        height: full.height,
        width: full.width,
        data: full.data.iter().map(|v| v.re).collect(),
    })
}

/// Real part of the inverse transform without the symmetry check.
pub(crate) fn idft2_real(s: &SpectrumGrid2) -> Grid2 {
    let full = idft2_complex(s);
    Grid2 {
        height: full.height,
        width: full.width,
        data: full.data.iter().map(|v| v.re).collect(),
    }
}

/// Cyclic correlation: `out[s] = Σ_t filter[t] · base[t + s]` for every 2-D shift.
pub fn circ_correlate(filter: &Grid2, base: &Grid2) -> Result<Grid2> {
    same_shape(filter.dims(), base.dims())?;
    Ok(circ_correlate_spectra(&dft2(filter), &dft2(base)))
}

/// Correlation from precomputed unitary spectra.
pub fn circ_correlate_spectra(filter_hat: &SpectrumGrid2, base_hat: &SpectrumGrid2) -> Grid2 {
    let (h, w) = base_hat.dims();
    let root_t = ((h * w) as f64).sqrt();
    let mut prod = SpectrumGrid2::zeros(h, w);
    for ((p, f), b) in prod.data.iter_mut().zip(&filter_hat.data).zip(&base_hat.data) {
        *p = f.conj() * b * root_t;
    }
    idft2_real(&prod)
}

fn hann1(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

/// Separable Hann window.
pub fn hann2(height: usize, width: usize) -> Grid2 {
    let rows = hann1(height);
    let cols = hann1(width);
    Grid2::from_fn(height, width, |r, c| rows[r] * cols[c])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointwiseOp {
    Multiply,
    Divide,
    /// `conj(a) * b`
    ConjMultiply,
}

/// Element-wise spectrum arithmetic.
pub fn pointwise(a: &SpectrumGrid2, b: &SpectrumGrid2, op: PointwiseOp) -> Result<SpectrumGrid2> {
    same_shape(a.dims(), b.dims())?;
    let (h, w) = a.dims();
    let data = match op {
        PointwiseOp::Multiply => a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
        PointwiseOp::ConjMultiply => a.data.iter().zip(&b.data).map(|(x, y)| x.conj() * y).collect(),
        PointwiseOp::Divide => {
            let peak = b.data.iter().fold(0.0_f64, |m, v| m.max(v.norm()));
            let floor = DIVISION_EPS * peak;
            let mut out = Vec::with_capacity(a.data.len());
            for (i, (x, y)) in a.data.iter().zip(&b.data).enumerate() {
                if y.norm() <= floor || peak == 0.0 {
                    return Err(Error::DivisionByZero {
                        row: i / w,
                        col: i % w,
                    });
                }
                out.push(x / y);
            }
            out
        }
    };
    Ok(SpectrumGrid2 {
        height: h,
        width: w,
        data,
    })
}

/// Maps a cyclic index in `0..n` to the signed displacement in `(-n/2, n/2]`.
pub fn signed_shift(index: usize, n: usize) -> isize {
    let i = index as isize;
    let n = n as isize;
    if i > n / 2 {
        i - n
    } else {
        i
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(h: usize, w: usize, seed: u64) -> Grid2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid2::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn brute_correlate(f: &Grid2, b: &Grid2) -> Grid2 {
        let (h, w) = f.dims();
        Grid2::from_fn(h, w, |sr, sc| {
            let mut acc = 0.0;
            for r in 0..h {
                for c in 0..w {
                    acc += f[(r, c)] * b[((r + sr) % h, (c + sc) % w)];
                }
            }
            acc
        })
    }

    #[test]
    fn zero_grid_has_zero_spectrum() {
        let s = dft2(&Grid2::zeros(5, 3));
        assert!(s.as_slice().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn constant_grid_is_dc_only() {
        let s = dft2(&Grid2::filled(4, 6, 2.5));
        let expected = 2.5 * (24.0_f64).sqrt();
        assert!((s[(0, 0)].re - expected).abs() < 1e-12);
        for (i, v) in s.as_slice().iter().enumerate().skip(1) {
            assert!(v.norm() < 1e-12, "bin {i} = {v}");
        }
    }

    #[test]
    fn parseval_on_random_grid() {
        let g = random_grid(8, 8, 1);
        assert!((g.norm() - dft2(&g).norm()).abs() < 1e-10);
    }

    #[test]
    fn round_trip_16x16() {
        let g = random_grid(16, 16, 2);
        let back = idft2(&dft2(&g)).unwrap();
        let err = back
            .as_slice()
            .iter()
            .zip(g.as_slice())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-10);
    }

    #[test]
    fn idft_of_zero_and_dc() {
        assert_eq!(idft2(&SpectrumGrid2::zeros(3, 3)).unwrap(), Grid2::zeros(3, 3));
        let mut s = SpectrumGrid2::zeros(3, 3);
        s[(0, 0)] = Complex64::new(3.0, 0.0);
        let g = idft2(&s).unwrap();
        assert!(g.as_slice().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn idft_rejects_asymmetric_spectrum() {
        let mut s = SpectrumGrid2::zeros(4, 4);
        s[(0, 1)] = Complex64::new(1.0, 0.0);
        assert!(matches!(idft2(&s), Err(Error::NotConjugateSymmetric { .. })));
    }

    #[test]
    fn delta_filter_reproduces_base() {
        let base = random_grid(5, 7, 3);
        let mut delta = Grid2::zeros(5, 7);
        delta[(0, 0)] = 1.0;
        let out = circ_correlate(&delta, &base).unwrap();
        for (a, b) in out.as_slice().iter().zip(base.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_matches_brute_force_6x6() {
        let f = random_grid(6, 6, 4);
        let b = random_grid(6, 6, 5);
        let fast = circ_correlate(&f, &b).unwrap();
        let slow = brute_correlate(&f, &b);
        for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn autocorrelation_peaks_at_origin() {
        let b = random_grid(7, 5, 6);
        let out = circ_correlate(&b, &b).unwrap();
        assert_eq!(out.argmax(), (0, 0));
    }

    #[test]
    fn correlation_shape_mismatch() {
        assert!(circ_correlate(&Grid2::zeros(2, 3), &Grid2::zeros(3, 2)).is_err());
    }

    #[test]
    fn hann_edge_cases() {
        assert_eq!(hann2(1, 1).as_slice(), &[1.0]);
        let w = hann2(4, 4);
        for (r, c) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            assert_eq!(w[(r, c)], 0.0);
        }
        let w8 = hann2(8, 8);
        let h = |n: f64| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n / 7.0).cos());
        assert!((w8[(3, 4)] - h(3.0) * h(4.0)).abs() < 1e-15);
        assert!((w8[(4, 3)] - h(4.0) * h(3.0)).abs() < 1e-15);
        assert!(w8[(3, 3)] >= w8.max() - 1e-15);
    }

    #[test]
    fn pointwise_ops() {
        let a = dft2(&random_grid(4, 4, 7));
        let ones = SpectrumGrid2::filled(4, 4, Complex64::new(1.0, 0.0));
        assert_eq!(pointwise(&a, &ones, PointwiseOp::Multiply).unwrap(), a);

        let power = pointwise(&a, &a, PointwiseOp::ConjMultiply).unwrap();
        assert!(power.as_slice().iter().all(|v| v.im.abs() < 1e-14 && v.re >= 0.0));

        let b = SpectrumGrid2::from_vec(
            4,
            4,
            (0..16).map(|i| Complex64::new(1.0 + i as f64, 0.5)).collect(),
        )
        .unwrap();
        let round = pointwise(&pointwise(&a, &b, PointwiseOp::Multiply).unwrap(), &b, PointwiseOp::Divide).unwrap();
        for (x, y) in round.as_slice().iter().zip(a.as_slice()) {
            assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn divide_names_offending_bin() {
        let a = SpectrumGrid2::filled(2, 3, Complex64::new(1.0, 0.0));
        let mut b = a.clone();
        b[(1, 2)] = Complex64::new(0.0, 0.0);
        match pointwise(&a, &b, PointwiseOp::Divide) {
            Err(Error::DivisionByZero { row, col }) => assert_eq!((row, col), (1, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn signed_shift_ranges() {
        assert_eq!(signed_shift(0, 8), 0);
        assert_eq!(signed_shift(4, 8), 4);
        assert_eq!(signed_shift(5, 8), -3);
        assert_eq!(signed_shift(7, 8), -1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn grid_strategy() -> impl Strategy<Value = Grid2> {
            (1usize..=8, 1usize..=8).prop_flat_map(|(h, w)| {
                prop::collection::vec(-10.0f64..10.0, h * w)
                    .prop_map(move |v| Grid2::from_vec(h, w, v).unwrap())
            })
        }

        proptest! {
            #[test]
            fn parseval(g in grid_strategy()) {
                let e = g.norm_sqr();
                let s = dft2(&g).norm().powi(2);
                prop_assert!((e - s).abs() <= 1e-9 * e.max(1e-300));
            }

            #[test]
            fn linearity(g in grid_strategy(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in 0u64..1000) {
                let (h, w) = g.dims();
                let other = random_grid(h, w, seed);
                let mut combo = g.clone();
                combo.scale(alpha);
                combo.axpy(beta, &other);
                let lhs = dft2(&combo);
                let (ga, gb) = (dft2(&g), dft2(&other));
                for i in 0..h * w {
                    let rhs = ga.as_slice()[i] * alpha + gb.as_slice()[i] * beta;
                    prop_assert!((lhs.as_slice()[i] - rhs).norm() < 1e-10 * (1.0 + rhs.norm()));
                }
            }

            #[test]
            fn correlation_equals_brute_force(g in grid_strategy(), seed in 0u64..1000) {
                let (h, w) = g.dims();
                let b = random_grid(h, w, seed);
                let fast = circ_correlate(&g, &b).unwrap();
                let slow = brute_correlate(&g, &b);
                for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
                    prop_assert!((x - y).abs() <= 1e-9);
                }
            }

            #[test]
            fn hann_is_flip_symmetric(h in 1usize..20, w in 1usize..20) {
                let win = hann2(h, w);
                for r in 0..h {
                    for c in 0..w {
                        prop_assert!((win[(r, c)] - win[(h - 1 - r, c)]).abs() < 1e-15);
                        prop_assert!((win[(r, c)] - win[(r, w - 1 - c)]).abs() < 1e-15);
                        prop_assert!((0.0..=1.0).contains(&win[(r, c)]));
                    }
                }
            }
        }
    }
}
