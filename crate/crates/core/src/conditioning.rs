//! Detail-removing transforms for ground-truth masks.
//!
//! Morphology uses solid rectangular structuring elements anchored at their
//! centre. Pixels outside the image count as background: erosion shrinks at
//! the border and dilation simply ignores out-of-bounds neighbours. Both are
//! computed separably (rows then columns) with prefix counts, so the cost is
//! independent of the element size.
//!
//! The convex hull is built on integer pixel centres and rasterized with
//! exact integer half-plane tests; no floating point is involved.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Solid rectangular structuring element with a centre anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructuringElement {
    width: u32,
    height: u32,
}

impl StructuringElement {
    pub fn rect(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 || width.is_multiple_of(2) || height.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "structuring element sides must be odd and positive, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn square(side: u32) -> Result<Self> {
        Self::rect(side, side)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    fn radii(&self) -> (u32, u32) {
        (self.width / 2, self.height / 2)
    }
}

impl Default for StructuringElement {
    /// The 5x5 square.
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditioningKind {
    /// Control: the mask as annotated.
    None,
    /// Morphological opening.
    Opening,
    /// Opening followed by the convex hull.
    ConvexHull,
}

impl ConditioningKind {
    pub const ALL: [ConditioningKind; 3] = [
        ConditioningKind::None,
        ConditioningKind::Opening,
        ConditioningKind::ConvexHull,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ConditioningKind::None => "none",
            ConditioningKind::Opening => "opening",
            ConditioningKind::ConvexHull => "convexhull",
        }
    }
}

impl fmt::Display for ConditioningKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditioningKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(ConditioningKind::None),
            "opening" => Ok(ConditioningKind::Opening),
            "convexhull" | "convex_hull" | "convex-hull" => Ok(ConditioningKind::ConvexHull),
            other => Err(Error::InvalidArgument(format!(
                "unknown conditioning `{other}` (expected none, opening or convexhull)"
            ))),
        }
    }
}

#[derive(Clone, Copy)]
enum Window {
    /// Every in-bounds pixel set and the window fully inside the image.
    All,
    /// At least one in-bounds pixel set.
    Any,
}

/// One separable pass along rows (`horizontal`) or columns.
fn window_pass(mask: &BinaryMask, radius: u32, horizontal: bool, mode: Window) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let (len, lines) = if horizontal { (w, h) } else { (h, w) };
    let r = radius as usize;
    let src = mask.pixels();
    let mut out = vec![false; w * h];
    let mut prefix = vec![0u32; len + 1];
    for line in 0..lines {
        let at = |i: usize| {
            if horizontal {
                line * w + i
            } else {
                i * w + line
            }
        };
        for i in 0..len {
            prefix[i + 1] = prefix[i] + u32::from(src[at(i)]);
        }
        for i in 0..len {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(len - 1);
            let count = prefix[hi + 1] - prefix[lo];
            out[at(i)] = match mode {
                Window::All => i >= r && i + r < len && count as usize == 2 * r + 1,
                Window::Any => count > 0,
            };
        }
    }
    BinaryMask::from_pixels(mask.width(), mask.height(), out).expect("same dimensions")
}

/// Foreground where the whole element, centred on the pixel, lies on
/// foreground.
pub fn erode(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    let (rx, ry) = se.radii();
    let rows = window_pass(mask, rx, true, Window::All);
    window_pass(&rows, ry, false, Window::All)
}

/// Foreground where the (reflected) element, centred on the pixel, touches
/// any foreground pixel. The element is symmetric, so reflection is a no-op.
pub fn dilate(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    let (rx, ry) = se.radii();
    let rows = window_pass(mask, rx, true, Window::Any);
    window_pass(&rows, ry, false, Window::Any)
}

/// Erosion followed by dilation with the same element.
pub fn open(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    dilate(&erode(mask, se), se)
}

type Point = (i64, i64);

#[inline]
fn cross(o: Point, a: Point, b: Point) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull of integer points by Andrew's monotone chain.
///
/// Returns vertices with strictly positive turns (collinear points dropped).
/// A single distinct point yields one vertex; collinear input yields the two
/// segment endpoints.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() <= 1 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Rasterized convex hull of the foreground.
///
/// A pixel is foreground iff its centre lies inside or on the hull of the
/// foreground pixel centres. Empty input gives an empty mask.
pub fn convex_hull_mask(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dimensions();
    let mut out = BinaryMask::new(w, h).expect("non-empty dimensions");

    // Only the extreme pixels of each row can be hull vertices.
    let mut points = Vec::new();
    for y in 0..h {
        let row = mask.row(y);
        if let Some(first) = row.iter().position(|&p| p) {
            let last = row.iter().rposition(|&p| p).expect("row has foreground");
            points.push((first as i64, y as i64));
            if last != first {
                points.push((last as i64, y as i64));
            }
        }
    }
    let hull = convex_hull(&points);
    if hull.is_empty() {
        return out;
    }

    let x_min = hull.iter().map(|p| p.0).min().expect("non-empty");
    let x_max = hull.iter().map(|p| p.0).max().expect("non-empty");
    let y_min = hull.iter().map(|p| p.1).min().expect("non-empty");
    let y_max = hull.iter().map(|p| p.1).max().expect("non-empty");
    let edges: Vec<(Point, Point)> = if hull.len() == 1 {
        Vec::new()
    } else {
        (0..hull.len())
            .map(|i| (hull[i], hull[(i + 1) % hull.len()]))
            .collect()
    };

    for y in y_min..=y_max {
        let (mut lo, mut hi) = (x_min, x_max);
        // Inside-or-on for edge a->b is cross(a, b, p) >= 0, which for a
        // fixed row is the linear constraint k*x + c >= 0.
        for &(a, b) in &edges {
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let k = -dy;
            let c = dx * (y - a.1) + dy * a.0;
            match k.signum() {
                0 if c < 0 => {
                    lo = 1;
                    hi = 0;
                }
                0 => {}
                1 => lo = lo.max(-(c.div_euclid(k))),
                _ => hi = hi.min(c.div_euclid(-k)),
            }
            if lo > hi {
                break;
            }
        }
        for x in lo..=hi {
            out.set(x as u32, y as u32, true);
        }
    }
    out
}

/// Applies one of the conditionings. `ConvexHull` is the hull of the opening.
pub fn apply_conditioning(
    mask: &BinaryMask,
    kind: ConditioningKind,
    se: StructuringElement,
) -> BinaryMask {
    match kind {
        ConditioningKind::None => mask.clone(),
        ConditioningKind::Opening => open(mask, se),
        ConditioningKind::ConvexHull => convex_hull_mask(&open(mask, se)),
    }
}
