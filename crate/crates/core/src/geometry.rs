//! Box arithmetic: areas, intersection-over-union, and the anchor-relative
//! offset parameterization used by the regression loss.
//!
//! Boxes use the corner representation externally (dataset files are
//! corner-based) and centers/sizes internally for the offset math.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, y growing downward.
///
/// Serialized as `[x_min, y_min, x_max, y_max]`. Construction rejects
/// degenerate boxes: width and height must be strictly positive and all
/// coordinates finite, so downstream ratios and logarithms are always
/// well defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::validation(format!(
                "bbox coordinates must be finite, got {coords:?}"
            )));
        }
        if x_max <= x_min || y_max <= y_min {
            return Err(Error::validation(format!(
                "bbox must have positive width and height, got [{x_min}, {y_min}, {x_max}, {y_max}]"
            )));
        }
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from its center and size.
    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        BBox::new(
            cx - width / 2.0,
            cy - height / 2.0,
            cx + width / 2.0,
            cy + height / 2.0,
        )
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center_x(&self) -> f64 {
        (self.x_min + self.x_max) / 2.0
    }

    pub fn center_y(&self) -> f64 {
        (self.y_min + self.y_max) / 2.0
    }

    /// Area in square pixels; strictly positive for any constructed box.
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// The same box shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Result<Self> {
        BBox::new(
            self.x_min + dx,
            self.y_min + dy,
            self.x_max + dx,
            self.y_max + dy,
        )
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

/// Dimensionless regression targets relative to an anchor box.
///
/// `tw` and `th` are logarithms of positive size ratios; all components
/// must be finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxOffsets {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl BoxOffsets {
    pub fn new(tx: f64, ty: f64, tw: f64, th: f64) -> Result<Self> {
        if ![tx, ty, tw, th].iter().all(|c| c.is_finite()) {
            return Err(Error::validation(format!(
                "box offsets must be finite, got ({tx}, {ty}, {tw}, {th})"
            )));
        }
        Ok(BoxOffsets { tx, ty, tw, th })
    }

    pub const ZERO: BoxOffsets = BoxOffsets {
        tx: 0.0,
        ty: 0.0,
        tw: 0.0,
        th: 0.0,
    };

    pub fn components(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }
}

/// Intersection-over-union of two boxes: `|a∩b| / |a∪b|`, in `[0, 1]`,
/// `0.0` when the boxes are disjoint.
pub fn iou(a: BBox, b: BBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let intersection = ix * iy;
    if intersection <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - intersection;
    intersection / union
}

/// Encodes a ground-truth box as offsets relative to an anchor:
/// `tx = (x - x_a) / w_a`, `ty = (y - y_a) / h_a`,
/// `tw = ln(w / w_a)`, `th = ln(h / h_a)` on centers and sizes.
pub fn encode_offsets(gt: BBox, anchor: BBox) -> BoxOffsets {
    BoxOffsets {
        tx: (gt.center_x() - anchor.center_x()) / anchor.width(),
        ty: (gt.center_y() - anchor.center_y()) / anchor.height(),
        tw: (gt.width() / anchor.width()).ln(),
        th: (gt.height() / anchor.height()).ln(),
    }
}

/// Inverts [`encode_offsets`]: reconstructs the box whose offsets relative
/// to `anchor` are `t`. Fails only if the exponentials overflow the finite
/// float range.
pub fn decode_offsets(t: BoxOffsets, anchor: BBox) -> Result<BBox> {
    let cx = anchor.center_x() + t.tx * anchor.width();
    let cy = anchor.center_y() + t.ty * anchor.height();
    let w = anchor.width() * t.tw.exp();
    let h = anchor.height() * t.th.exp();
    BBox::from_center(cx, cy, w, h)
}
