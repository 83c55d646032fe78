//! Unit-disk domain, boundary detector arcs and exit classification.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec2::Vec2;

/// Reduces an angle to `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// The compact domain particles live in. Only the unit disk ships.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    #[default]
    UnitDisk,
}

impl Domain {
    pub fn radius(&self) -> f64 {
        match self {
            Domain::UnitDisk => 1.0,
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.norm_sq() < 1.0
    }

    /// Euclidean distance from an interior point to the boundary.
    pub fn distance_to_boundary(&self, p: Vec2) -> f64 {
        1.0 - p.norm()
    }

    /// First crossing of the boundary on the segment `p_in -> p_out`.
    pub fn segment_crossing(&self, p_in: Vec2, p_out: Vec2) -> Result<(f64, BoundaryHit)> {
        segment_boundary_crossing(p_in, p_out)
    }

    /// Distance travelled along unit direction `dir` from interior `p` before
    /// leaving the domain.
    pub fn ray_exit_distance(&self, p: Vec2, dir: Vec2) -> f64 {
        let pu = p.dot(dir);
        let c = 1.0 - p.norm_sq();
        let disc = pu * pu + c;
        // stable positive root of s² + 2(p·u)s - c = 0
        if pu <= 0.0 {
            -pu + disc.sqrt()
        } else {
            c / (pu + disc.sqrt())
        }
    }
}

/// One detector arc on the unit circle, `[center - half_width, center + half_width)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub center: f64,
    pub half_width: f64,
}

impl Arc {
    pub fn new(center: f64, half_width: f64) -> Self {
        Arc { center, half_width }
    }

    pub fn start(&self) -> f64 {
        wrap_angle(self.center - self.half_width)
    }

    pub fn width(&self) -> f64 {
        2.0 * self.half_width
    }

    pub fn contains(&self, angle: f64) -> bool {
        let offset = (angle - (self.center - self.half_width)).rem_euclid(TAU);
        offset < self.width()
    }

    /// Same arc rotated by `by` radians.
    pub fn rotated(&self, by: f64) -> Arc {
        Arc::new(wrap_angle(self.center + by), self.half_width)
    }
}

/// Disjoint detector arcs on the boundary of the unit disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayoutFile", into = "LayoutFile")]
pub struct DetectorLayout {
    arcs: Vec<Arc>,
}

/// On-disk form: `{J, center_angles[], half_widths[]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayoutFile {
    #[serde(rename = "J")]
    j: usize,
    #[serde(default)]
    center_angles: Option<Vec<f64>>,
    #[serde(default)]
    half_widths: Option<Vec<f64>>,
}

impl TryFrom<LayoutFile> for DetectorLayout {
    type Error = Error;

    fn try_from(f: LayoutFile) -> Result<Self> {
        let default = DetectorLayout::equally_spaced(f.j)?;
        let centers = f
            .center_angles
            .unwrap_or_else(|| default.arcs.iter().map(|a| a.center).collect());
        let widths = f
            .half_widths
            .unwrap_or_else(|| default.arcs.iter().map(|a| a.half_width).collect());
        if centers.len() != f.j || widths.len() != f.j {
            return Err(Error::InvalidLayout(format!(
                "J = {} but {} centers and {} half widths given",
                f.j,
                centers.len(),
                widths.len()
            )));
        }
        DetectorLayout::new(
            centers
                .into_iter()
                .zip(widths)
                .map(|(c, w)| Arc::new(c, w))
                .collect(),
        )
    }
}

impl From<DetectorLayout> for LayoutFile {
    fn from(l: DetectorLayout) -> Self {
        LayoutFile {
            j: l.arcs.len(),
            center_angles: Some(l.arcs.iter().map(|a| a.center).collect()),
            half_widths: Some(l.arcs.iter().map(|a| a.half_width).collect()),
        }
    }
}

impl DetectorLayout {
    /// Validates disjointness and strict partial coverage.
    pub fn new(arcs: Vec<Arc>) -> Result<Self> {
        if arcs.is_empty() {
            return Err(Error::InvalidLayout("no detectors".into()));
        }
        for (i, a) in arcs.iter().enumerate() {
            if !(a.half_width > 0.0) || !a.center.is_finite() {
                return Err(Error::InvalidLayout(format!(
                    "arc {i} has non-positive or non-finite extent"
                )));
            }
        }
        let total: f64 = arcs.iter().map(Arc::width).sum();
        if total >= TAU {
            return Err(Error::InvalidLayout(format!(
                "detectors cover {total} rad, which is not a strict subset of the boundary"
            )));
        }
        let mut spans: Vec<(f64, f64)> = arcs.iter().map(|a| (a.start(), a.width())).collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in spans.windows(2) {
            if w[0].0 + w[0].1 > w[1].0 + 1e-15 {
                return Err(Error::InvalidLayout("detector arcs overlap".into()));
            }
        }
        let (first, last) = (spans[0], spans[spans.len() - 1]);
        if spans.len() > 1 && last.0 + last.1 > first.0 + TAU + 1e-15 {
            return Err(Error::InvalidLayout("detector arcs overlap".into()));
        }
        Ok(DetectorLayout { arcs })
    }

    /// `j` arcs centered at `2πk/j`, each covering `π/j`, so that half the
    /// boundary is instrumented and gaps equal arcs.
    pub fn equally_spaced(j: usize) -> Result<Self> {
        if j == 0 {
            return Err(Error::InvalidLayout("no detectors".into()));
        }
        let half = PI / (2.0 * j as f64);
        Self::new(
            (0..j)
                .map(|k| Arc::new(TAU * k as f64 / j as f64, half))
                .collect(),
        )
    }

    /// A single arc.
    pub fn single(center: f64, half_width: f64) -> Result<Self> {
        Self::new(vec![Arc::new(center, half_width)])
    }

    /// A single arc covering the boundary except for a sliver of `gap` radians.
    /// Used where "the whole boundary is one detector" is wanted while keeping
    /// the strict-subset invariant.
    pub fn nearly_full(gap: f64) -> Result<Self> {
        Self::single(PI, PI - gap / 2.0)
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn len(&self) -> usize {
        self.arcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    /// Total angular measure of the instrumented boundary.
    pub fn coverage(&self) -> f64 {
        self.arcs.iter().map(Arc::width).sum()
    }

    /// Fraction of the boundary covered by detectors.
    pub fn coverage_fraction(&self) -> f64 {
        self.coverage() / TAU
    }

    /// Detector index (0-based) containing `angle`, if any.
    pub fn classify(&self, angle: f64) -> Option<usize> {
        classify_exit(self, angle)
    }

    pub fn rotated(&self, by: f64) -> DetectorLayout {
        DetectorLayout {
            arcs: self.arcs.iter().map(|a| a.rotated(by)).collect(),
        }
    }
}

/// An exit location on the unit circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryHit {
    pub point: Vec2,
    pub angle: f64,
    pub detector: Option<usize>,
}

impl BoundaryHit {
    /// Projects `p` onto the circle and records its angle; detector left unset.
    pub fn project(p: Vec2) -> Self {
        let angle = p.angle();
        BoundaryHit {
            point: Vec2::from_polar(1.0, angle),
            angle,
            detector: None,
        }
    }

    pub fn classified(mut self, layout: &DetectorLayout) -> Self {
        self.detector = layout.classify(self.angle);
        self
    }
}

/// Returns the detector whose half-open arc contains `angle`.
pub fn classify_exit(layout: &DetectorLayout, angle: f64) -> Option<usize> {
    layout.arcs.iter().position(|a| a.contains(angle))
}

/// Root `t*` in `(0, 1]` of `|p_in + t (p_out - p_in)| = 1` and the crossing point.
pub fn segment_boundary_crossing(p_in: Vec2, p_out: Vec2) -> Result<(f64, BoundaryHit)> {
    let d = p_out - p_in;
    let a = d.norm_sq();
    if a == 0.0 {
        return Err(Error::InvalidSegment("p_in equals p_out".into()));
    }
    let c = p_in.norm_sq() - 1.0;
    if c >= 0.0 {
        return Err(Error::InvalidSegment(format!("start {p_in:?} is not interior")));
    }
    if p_out.norm_sq() < 1.0 {
        return Err(Error::InvalidSegment(format!("end {p_out:?} is interior")));
    }
    let b = p_in.dot(d);
    let disc = (b * b - a * c).sqrt();
    let t = if b <= 0.0 { (disc - b) / a } else { -c / (b + disc) };
    let t = t.clamp(f64::MIN_POSITIVE, 1.0);
    Ok((t, BoundaryHit::project(p_in + d * t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn five() -> DetectorLayout {
        DetectorLayout::equally_spaced(5).unwrap()
    }

    #[test]
    fn classify_examples() {
        let l = five();
        assert_eq!(l.classify(0.0), Some(0));
        assert_eq!(l.classify(PI / 5.0), None);
        assert_eq!(l.classify(2.0 * PI / 5.0), Some(1));
        // wrap-around: just below 2π belongs to the arc centred at 0
        assert_eq!(l.classify(TAU - 1e-9), Some(0));
    }

    #[test]
    fn half_open_endpoints() {
        let l = DetectorLayout::single(1.0, 0.25).unwrap();
        assert_eq!(l.classify(0.75), Some(0));
        assert_eq!(l.classify(1.25), None);
    }

    #[test]
    fn default_layout_measure() {
        let l = five();
        assert_eq!(l.arcs()[0].half_width, PI / 10.0);
        assert_abs_diff_eq!(l.coverage(), 5.0 * 2.0 * PI / 10.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_overlap_and_full_cover() {
        assert!(DetectorLayout::new(vec![Arc::new(0.0, 0.5), Arc::new(0.9, 0.5)]).is_err());
        assert!(DetectorLayout::new(vec![Arc::new(0.1, 0.2), Arc::new(TAU - 0.05, 0.2)]).is_err());
        assert!(DetectorLayout::single(0.0, PI).is_err());
        assert!(DetectorLayout::nearly_full(1e-9).is_ok());
    }

    #[test]
    fn crossing_examples() {
        let (t, hit) = segment_boundary_crossing(Vec2::ZERO, Vec2::new(2.0, 0.0)).unwrap();
        assert_eq!(t, 0.5);
        assert_eq!(hit.angle, 0.0);

        let (t, hit) =
            segment_boundary_crossing(Vec2::new(0.5, 0.0), Vec2::new(0.5, 2.0)).unwrap();
        assert_abs_diff_eq!(t, 0.75f64.sqrt() / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hit.angle, 0.75f64.sqrt().atan2(0.5), epsilon = 1e-15);

        let (t, hit) = segment_boundary_crossing(Vec2::ZERO, Vec2::new(0.0, 1.0)).unwrap();
        assert_eq!(t, 1.0);
        assert_abs_diff_eq!(hit.angle, PI / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_segment() {
        let p = Vec2::new(1.0, 0.0);
        assert!(matches!(
            segment_boundary_crossing(p, p),
            Err(Error::InvalidSegment(_))
        ));
    }

    #[test]
    fn ray_exit_from_center() {
        let d = Domain::UnitDisk.ray_exit_distance(Vec2::ZERO, Vec2::from_polar(1.0, 0.3));
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-15);
        let d = Domain::UnitDisk.ray_exit_distance(Vec2::new(0.5, 0.0), Vec2::new(1.0, 0.0));
        assert_abs_diff_eq!(d, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn layout_file_roundtrip() {
        let l = five();
        let s = serde_json::to_string(&l).unwrap();
        assert!(s.contains("\"J\":5"));
        let back: DetectorLayout = serde_json::from_str(&s).unwrap();
        assert_eq!(back, l);
        let short: DetectorLayout = serde_json::from_str(r#"{"J":5}"#).unwrap();
        assert_eq!(short, l);
    }

    proptest! {
        #[test]
        fn crossing_lies_on_circle_and_segment(
            r_in in 0.0..0.999f64, a_in in 0.0..TAU,
            r_out in 1.0..3.0f64, a_out in 0.0..TAU,
        ) {
            let p_in = Vec2::from_polar(r_in, a_in);
            let p_out = Vec2::from_polar(r_out, a_out);
            let (t, hit) = segment_boundary_crossing(p_in, p_out).unwrap();
            prop_assert!(t > 0.0 && t <= 1.0);
            prop_assert!((hit.point.norm() - 1.0).abs() <= 1e-12);
            let on_seg = p_in + (p_out - p_in) * t;
            prop_assert!((on_seg - hit.point).norm() <= 1e-10);
        }

        #[test]
        fn classification_is_a_partition(angle in 0.0..TAU, j in 1usize..12) {
            let l = DetectorLayout::equally_spaced(j).unwrap();
            let hits = l.arcs().iter().filter(|a| a.contains(angle)).count();
            prop_assert!(hits <= 1);
            prop_assert!((l.coverage() - j as f64 * 2.0 * l.arcs()[0].half_width).abs() <= 1e-12);
        }
    }
}
