//! Bounding boxes, the shared-size overlap function, and regression label maps.

use serde::{Deserialize, Serialize};

use crate::dsp::{signed_shift, Grid2};
use crate::error::{Error, Result};

/// Axis-aligned box in continuous pixel coordinates (0-indexed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) || !left.is_finite() || !top.is_finite() {
            return Err(Error::DegenerateRegion(format!(
                "box {left},{top} {width}x{height}"
            )));
        }
        Ok(BBox {
            left,
            top,
            width,
            height,
        })
    }

    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        BBox::new(cx - width / 2.0, cy - height / 2.0, width, height)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.left + self.width / 2.0, self.top + self.height / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            left: self.left + dx,
            top: self.top + dy,
            ..*self
        }
    }

    /// Same center, both sides multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> BBox {
        let (cx, cy) = self.center();
        let (w, h) = (self.width * factor, self.height * factor);
        BBox {
            left: cx - w / 2.0,
            top: cy - h / 2.0,
            width: w,
            height: h,
        }
    }

    /// Geometric intersection-over-union; boxes may differ in size.
    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.left + self.width).min(other.left + other.width) - self.left.max(other.left);
        let ih = (self.top + self.height).min(other.top + other.height) - self.top.max(other.top);
        if iw <= 0.0 || ih <= 0.0 {
            return 0.0;
        }
        let inter = iw * ih;
        inter / (self.area() + other.area() - inter)
    }
}

/// Length of the intersection of `[a, a+c]` and `[a_i, a_i+c]`, clamped at zero.
pub fn clamped_overlap_len(a: f64, a_i: f64, c: f64) -> f64 {
    (2.0 * c - (a + c).max(a_i + c) + a.min(a_i)).max(0.0)
}

fn sizes_match(y: &BBox, y_i: &BBox) -> bool {
    let tol = 1e-9 * y.width.max(y.height).max(1.0);
    (y.width - y_i.width).abs() <= tol && (y.height - y_i.height).abs() <= tol
}

/// Intersection-over-union of two boxes that share width and height.
pub fn overlap_score(y: &BBox, y_i: &BBox) -> Result<f64> {
    if !sizes_match(y, y_i) {
        return Err(Error::UnequalBoxSizes);
    }
    let (w, h) = (y.width, y.height);
    let inter = clamped_overlap_len(y.left, y_i.left, w) * clamped_overlap_len(y.top, y_i.top, h);
    Ok(inter / (2.0 * w * h - inter))
}

/// Structured loss `1 - overlap_score`.
pub fn delta_loss(y: &BBox, y_i: &BBox) -> Result<f64> {
    Ok(1.0 - overlap_score(y, y_i)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Gaussian,
    Iou,
}

/// Regression target over a lattice of shifts, peaking at `center` with value 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub values: Grid2,
    pub center: (usize, usize),
    pub kind: LabelKind,
}

fn cyclic_displacement(index: usize, center: usize, n: usize) -> f64 {
    signed_shift((index + n - center % n) % n, n) as f64
}

/// Gaussian label with wrap-around displacement to `center`.
pub fn gaussian_labels(grid_h: usize, grid_w: usize, center: (usize, usize), sigma: f64) -> Result<LabelMap> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("label sigma must be positive, got {sigma}")));
    }
    check_center(grid_h, grid_w, center)?;
    let denom = 2.0 * sigma * sigma;
    let values = Grid2::from_fn(grid_h, grid_w, |r, c| {
        let dr = cyclic_displacement(r, center.0, grid_h);
        let dc = cyclic_displacement(c, center.1, grid_w);
        (-(dr * dr + dc * dc) / denom).exp()
    });
    Ok(LabelMap {
        values,
        center,
        kind: LabelKind::Gaussian,
    })
}

/// Shared-size overlap between a `box_w x box_h` box displaced to each cell and
/// the box at `center`.
pub fn iou_labels(
    grid_h: usize,
    grid_w: usize,
    center: (usize, usize),
    box_w: f64,
    box_h: f64,
) -> Result<LabelMap> {
    if !(box_w >= 1.0 && box_h >= 1.0) {
        return Err(Error::InvalidConfig(format!("label box must be at least 1x1, got {box_w}x{box_h}")));
    }
    check_center(grid_h, grid_w, center)?;
    let anchor = BBox::new(0.0, 0.0, box_w, box_h)?;
    let values = Grid2::from_fn(grid_h, grid_w, |r, c| {
        let dr = cyclic_displacement(r, center.0, grid_h);
        let dc = cyclic_displacement(c, center.1, grid_w);
        overlap_score(&anchor.translated(dc, dr), &anchor).expect("equal sizes")
    });
    Ok(LabelMap {
        values,
        center,
        kind: LabelKind::Iou,
    })
}

fn check_center(grid_h: usize, grid_w: usize, center: (usize, usize)) -> Result<()> {
    if grid_h == 0 || grid_w == 0 {
        return Err(Error::EmptyGrid {
            height: grid_h,
            width: grid_w,
        });
    }
    if center.0 >= grid_h || center.1 >= grid_w {
        return Err(Error::InvalidConfig(format!(
            "label center {center:?} outside {grid_h}x{grid_w} grid"
        )));
    }
    Ok(())
}

/// Loss weight of one training frame: `alpha = impact / pair_count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleWeights {
    pub impact: f64,
    pub pair_count: usize,
}

impl SampleWeights {
    pub fn new(impact: f64, pair_count: usize) -> Result<Self> {
        if !(impact >= 0.0) || pair_count == 0 {
            return Err(Error::InvalidConfig(format!(
                "sample weights need impact >= 0 and pair_count > 0, got {impact}, {pair_count}"
            )));
        }
        Ok(SampleWeights { impact, pair_count })
    }

    /// Unit impact spread over `pair_count` samples.
    pub fn uniform(pair_count: usize) -> Self {
        SampleWeights {
            impact: 1.0,
            pair_count: pair_count.max(1),
        }
    }

    /// Every sample weighted by one.
    pub fn unit() -> Self {
        SampleWeights {
            impact: 1.0,
            pair_count: 1,
        }
    }

    /// Pair count under dense sampling of a `w_l x h_l` region by a `w x h` box.
    pub fn dense_pair_count(region: (usize, usize), object: (usize, usize)) -> usize {
        (region.0 + 1).saturating_sub(object.0) * (region.1 + 1).saturating_sub(object.1)
    }

    pub fn alpha(&self) -> f64 {
        self.impact / self.pair_count as f64
    }
}

impl Default for SampleWeights {
    fn default() -> Self {
        SampleWeights::unit()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(l: f64, t: f64, w: f64, h: f64) -> BBox {
        BBox::new(l, t, w, h).unwrap()
    }

    /// Rectangle intersection / union computed from corner coordinates.
    fn rect_iou(a: &BBox, b: &BBox) -> f64 {
        let x0 = a.left.max(b.left);
        let x1 = (a.left + a.width).min(b.left + b.width);
        let y0 = a.top.max(b.top);
        let y1 = (a.top + a.height).min(b.top + b.height);
        let inter = (x1 - x0).max(0.0) * (y1 - y0).max(0.0);
        inter / (a.area() + b.area() - inter)
    }

    #[test]
    fn overlap_len_cases() {
        assert_eq!(clamped_overlap_len(3.0, 3.0, 7.0), 7.0);
        assert_eq!(clamped_overlap_len(0.0, 12.0, 10.0), 0.0);
        assert_eq!(clamped_overlap_len(0.0, 10.0, 10.0), 0.0);
        assert_eq!(clamped_overlap_len(0.0, 5.0, 10.0), 5.0);
    }

    #[test]
    fn overlap_score_cases() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(overlap_score(&a, &a).unwrap(), 1.0);
        let b = a.translated(5.0, 0.0);
        let expected = rect_iou(&a, &b);
        assert!((expected - 1.0 / 3.0).abs() < 1e-15);
        assert!((overlap_score(&a, &b).unwrap() - expected).abs() < 1e-15);
        assert_eq!(overlap_score(&a, &a.translated(10.0, 10.0)).unwrap(), 0.0);
        assert_eq!(overlap_score(&a, &a.translated(25.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn overlap_rejects_unequal_sizes() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let b = bx(0.0, 0.0, 10.0, 11.0);
        assert!(matches!(overlap_score(&a, &b), Err(Error::UnequalBoxSizes)));
        assert!(delta_loss(&a, &b).is_err());
    }

    #[test]
    fn delta_cases() {
        let a = bx(2.0, 3.0, 10.0, 10.0);
        assert_eq!(delta_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(delta_loss(&a, &a.translated(40.0, -3.0)).unwrap(), 1.0);
        assert!((delta_loss(&a, &a.translated(5.0, 0.0)).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 3.0).is_err());
        assert!(BBox::new(0.0, 0.0, 3.0, -1.0).is_err());
    }

    #[test]
    fn gaussian_label_values() {
        let sigma = 1.5;
        let map = gaussian_labels(16, 12, (7, 5), sigma).unwrap();
        assert_eq!(map.values[(7, 5)], 1.0);
        assert_eq!(map.values.argmax(), (7, 5));
        assert_eq!(map.values[(7, 8)], map.values[(7, 2)]);
        // displacement of exactly sigma along rows
        let map = gaussian_labels(16, 16, (8, 8), 2.0).unwrap();
        assert!((map.values[(10, 8)] - (-0.5_f64).exp()).abs() < 1e-15);
        assert!((map.values[(10, 8)] - 0.6065306597126334).abs() < 1e-15);
    }

    #[test]
    fn gaussian_wraps_around() {
        let map = gaussian_labels(8, 8, (0, 0), 1.0).unwrap();
        assert_eq!(map.values[(0, 1)], map.values[(0, 7)]);
        assert_eq!(map.values[(1, 0)], map.values[(7, 0)]);
    }

    #[test]
    fn iou_label_values() {
        let map = iou_labels(21, 21, (10, 10), 6.0, 6.0).unwrap();
        assert_eq!(map.values[(10, 10)], 1.0);
        assert_eq!(map.values[(10, 16)], 0.0);
        assert!((map.values[(10, 13)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((map.values[(13, 10)] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sample_weight_law() {
        let w = SampleWeights::new(3.0, 7).unwrap();
        assert!((w.alpha() * 7.0 - 3.0).abs() < 1e-15);
        assert_eq!(SampleWeights::dense_pair_count((20, 14), (8, 6)), 13 * 9);
        assert!(SampleWeights::new(1.0, 0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn overlap_symmetric_bounded_and_geometric(
                l in -50.0f64..50.0, t in -50.0f64..50.0,
                li in -50.0f64..50.0, ti in -50.0f64..50.0,
                w in 1.0f64..40.0, h in 1.0f64..40.0,
            ) {
                let a = bx(l, t, w, h);
                let b = bx(li, ti, w, h);
                let s = overlap_score(&a, &b).unwrap();
                prop_assert!((0.0..=1.0).contains(&s));
                prop_assert!((s - overlap_score(&b, &a).unwrap()).abs() < 1e-12);
                prop_assert!((s - rect_iou(&a, &b)).abs() < 1e-9);
                prop_assert_eq!(delta_loss(&a, &b).unwrap() + s, 1.0);
            }

            #[test]
            fn overlap_monotone_in_horizontal_distance(
                d1 in 0.0f64..60.0, d2 in 0.0f64..60.0, dt in -20.0f64..20.0,
                w in 1.0f64..40.0, h in 1.0f64..40.0,
            ) {
                let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
                let a = bx(0.0, 0.0, w, h);
                let s_near = overlap_score(&a, &a.translated(near, dt)).unwrap();
                let s_far = overlap_score(&a, &a.translated(-far, dt)).unwrap();
                prop_assert!(s_far <= s_near + 1e-12);
            }

            #[test]
            fn label_maps_peak_at_center(
                h in 1usize..24, w in 1usize..24, sigma in 0.2f64..6.0, bw in 1.0f64..10.0,
                rf in 0.0f64..1.0, cf in 0.0f64..1.0,
            ) {
                let center = (((h as f64 - 1.0) * rf) as usize, ((w as f64 - 1.0) * cf) as usize);
                for map in [gaussian_labels(h, w, center, sigma).unwrap(), iou_labels(h, w, center, bw, bw).unwrap()] {
                    prop_assert_eq!(map.values[center], 1.0);
                    prop_assert!(map.values.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
                    prop_assert_eq!(map.values.max(), 1.0);
                }
            }
        }
    }
}
