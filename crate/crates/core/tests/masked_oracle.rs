//! The masked ridge solvers against an explicit least-squares system built
//! shift by shift.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracklab::cflbmc::{solve_cflbmc_direct, solve_cflbmc_traced, AlmConfig, MaskSpec};
use tracklab::dsp::Grid2;
use tracklab::features::ChannelPatch;
use tracklab::labels::gaussian_labels;

/// Row `s` of the design matrix holds `x_l[t + s]` for every active cell `t`,
/// so `A w` is the correlation response restricted to the mask.
fn explicit_solution(base: &[Grid2], labels: &Grid2, mask: &MaskSpec, lambda: f64) -> Vec<f64> {
    let (h, w) = labels.dims();
    let active = mask.positions();
    let cols = base.len() * active.len();
    let mut a = DMatrix::<f64>::zeros(h * w, cols);
    for sr in 0..h {
        for sc in 0..w {
            let row = sr * w + sc;
            for (l, x) in base.iter().enumerate() {
                for (j, &(r, c)) in active.iter().enumerate() {
                    a[(row, l * active.len() + j)] = x[((r + sr) % h, (c + sc) % w)];
                }
            }
        }
    }
    let y = DVector::from_row_slice(labels.as_slice());
    let lhs = a.transpose() * &a + DMatrix::identity(cols, cols) * lambda;
    let rhs = a.transpose() * y;
    lhs.cholesky().expect("positive definite").solve(&rhs).iter().copied().collect()
}

fn grids(h: usize, w: usize, values: &[f64], channels: usize) -> Vec<Grid2> {
    (0..channels)
        .map(|l| Grid2::from_vec(h, w, values[l * h * w..(l + 1) * h * w].to_vec()).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn direct_solver_matches_explicit_system(
        th in 2usize..=4, tw in 2usize..=4, dh in 1usize..=2, dw in 1usize..=2,
        channels in 1usize..=3, lambda in 0.1f64..10.0,
        values in proptest::collection::vec(-1.0f64..1.0, 3 * 64),
    ) {
        // Even sizes keep the active block centred.
        let (th, tw, dh, dw) = (2 * th, 2 * tw, 2 * dh, 2 * dw);
        let base = grids(th, tw, &values, channels);
        let labels = gaussian_labels(th, tw, (0, 0), 1.0).unwrap().values;
        let mask = MaskSpec::new((th, tw), (dh, dw)).unwrap();
        let patch = ChannelPatch::from_grids(base.clone()).unwrap();
        let ours = solve_cflbmc_direct(&patch, &labels, &mask, lambda).unwrap().flatten();
        let theirs = explicit_solution(&base, &labels, &mask, lambda);
        for (a, b) in ours.iter().zip(&theirs) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn alm_objective_never_beats_the_optimum(seed in 0u64..1000, lambda in 1.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..2 * 36).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = grids(6, 6, &values, 2);
        let labels = gaussian_labels(6, 6, (0, 0), 1.0).unwrap().values;
        let mask = MaskSpec::new((6, 6), (2, 2)).unwrap();
        let patch = ChannelPatch::from_grids(base.clone()).unwrap();
        let cfg = AlmConfig { lambda, iterations: 10, ..AlmConfig::default() };
        let (_, trace) = solve_cflbmc_traced(&patch, &labels, &mask, &cfg, true).unwrap();
        let optimum = explicit_solution(&base, &labels, &mask, lambda);
        let filter = tracklab::filter::FilterBank::from_flat(2, 2, 2, &optimum).unwrap();
        let best = tracklab::cflbmc::cflbmc_objective(&patch, &labels, &mask, lambda, &filter).unwrap();
        for obj in trace.objective {
            prop_assert!(obj >= best - 1e-9 * best.abs().max(1.0));
        }
    }
}
