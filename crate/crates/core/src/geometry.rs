//! Boxes, anchor grids, overlaps and the anchor-relative regression encoding.
//!
//! Boxes are kept in center/size form everywhere; corner forms only appear at
//! I/O boundaries.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Axis-aligned box in pixels, center/size form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Validated constructor: finite coordinates, strictly positive size.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::Usage(format!("non-finite box ({cx}, {cy}, {w}, {h})")));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::Usage(format!("degenerate box size {w}x{h}")));
        }
        Ok(BBox { cx, cy, w, h })
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        BBox::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    /// Top-left corner plus size, the on-disk convention.
    pub fn from_xywh(x0: f64, y0: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(x0 + w / 2.0, y0 + h / 2.0, w, h)
    }

    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn xywh(&self) -> (f64, f64, f64, f64) {
        (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    /// Scales coordinates and sizes about the origin.
    pub fn scaled(&self, c: f64) -> BBox {
        BBox {
            cx: self.cx * c,
            cy: self.cy * c,
            w: self.w * c,
            h: self.h * c,
        }
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        (self.cx - other.cx).hypot(self.cy - other.cy)
    }

    /// True when the box lies within `[0, width] x [0, height]`.
    pub fn inside(&self, width: f64, height: f64) -> bool {
        let (x0, y0, x1, y1) = self.corners();
        x0 >= 0.0 && y0 >= 0.0 && x1 <= width && y1 <= height
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    // areas from the same corners, so iou(a, a) is exactly 1
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Anchor shapes laid over the response grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    /// Aspect ratios `h / w`.
    pub ratios: Vec<f64>,
    /// Base sizes as multiples of the stride.
    pub scales: Vec<f64>,
    /// Pixels per response cell.
    pub stride: usize,
}

impl AnchorConfig {
    pub fn new(ratios: Vec<f64>, scales: Vec<f64>, stride: usize) -> Result<Self> {
        let cfg = AnchorConfig { ratios, scales, stride };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Five ratios, one scale of `8 * stride`.
    pub fn with_stride(stride: usize) -> Self {
        AnchorConfig {
            ratios: vec![0.33, 0.5, 1.0, 2.0, 3.0],
            scales: vec![8.0],
            stride,
        }
    }

    pub fn k(&self) -> usize {
        self.ratios.len() * self.scales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k() == 0 {
            return Err(Error::Config("anchor config needs at least one ratio and scale".into()));
        }
        if self.ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config(format!("anchor ratios must be positive: {:?}", self.ratios)));
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config(format!("anchor scales must be positive: {:?}", self.scales)));
        }
        if self.stride == 0 {
            return Err(Error::Config("anchor stride must be a positive integer".into()));
        }
        Ok(())
    }

    /// `(w, h)` of each anchor shape, in anchor-index order (scale-major).
    pub fn shapes(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.k());
        for &scale in &self.scales {
            let s = scale * self.stride as f64;
            for &r in &self.ratios {
                out.push((s / r.sqrt(), s * r.sqrt()));
            }
        }
        out
    }
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig::with_stride(8)
    }
}

/// Dense anchors over an `h x w` response grid, `k` per cell.
///
/// Flat index of anchor `a` at cell `(i, j)` is `(i * w + j) * k + a`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    pub boxes: Vec<BBox>,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    /// Image coordinates of the center of cell `(0, 0)`.
    pub origin_offset: (f64, f64),
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn flat_index(&self, i: usize, j: usize, a: usize) -> usize {
        (i * self.w + j) * self.k + a
    }

    /// `(i, j, a)` of a flat index.
    pub fn unflatten(&self, idx: usize) -> (usize, usize, usize) {
        let a = idx % self.k;
        let cell = idx / self.k;
        (cell / self.w, cell % self.w, a)
    }

    pub fn get(&self, i: usize, j: usize, a: usize) -> &BBox {
        &self.boxes[self.flat_index(i, j, a)]
    }
}

/// Lays `cfg.k()` anchors on every cell; cell `(i, j)` is centered at
/// `origin_offset + stride * (j, i)`.
pub fn make_anchors(cfg: &AnchorConfig, grid: (usize, usize), origin_offset: (f64, f64)) -> Result<AnchorSet> {
    cfg.validate()?;
    let (h, w) = grid;
    if h == 0 || w == 0 {
        return Err(Error::Usage(format!("anchor grid must be non-empty, got {h}x{w}")));
    }
    let shapes = cfg.shapes();
    let stride = cfg.stride as f64;
    let mut boxes = Vec::with_capacity(h * w * shapes.len());
    for i in 0..h {
        for j in 0..w {
            let cx = origin_offset.0 + stride * j as f64;
            let cy = origin_offset.1 + stride * i as f64;
            for &(aw, ah) in &shapes {
                boxes.push(BBox::new(cx, cy, aw, ah)?);
            }
        }
    }
    Ok(AnchorSet {
        boxes,
        h,
        w,
        k: shapes.len(),
        stride: cfg.stride,
        origin_offset,
    })
}

/// Offsets of a box relative to an anchor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl RegressionDelta {
    pub const ZERO: RegressionDelta = RegressionDelta {
        dx: 0.0,
        dy: 0.0,
        dw: 0.0,
        dh: 0.0,
    };

    pub fn as_array(&self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        RegressionDelta {
            dx: v[0],
            dy: v[1],
            dw: v[2],
            dh: v[3],
        }
    }
}

pub fn encode_regression(anchor: &BBox, gt: &BBox) -> RegressionDelta {
    RegressionDelta {
        dx: (gt.cx - anchor.cx) / anchor.w,
        dy: (gt.cy - anchor.cy) / anchor.h,
        dw: (gt.w / anchor.w).ln(),
        dh: (gt.h / anchor.h).ln(),
    }
}

/// Inverse of [`encode_regression`]; a size that overflows or underflows the
/// float range is reported as a numeric error.
pub fn decode_regression(anchor: &BBox, delta: &RegressionDelta) -> Result<BBox> {
    let d = delta.as_array();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite regression delta {delta:?}")));
    }
    let w = anchor.w * delta.dw.exp();
    let h = anchor.h * delta.dh.exp();
    if !(w.is_finite() && h.is_finite()) || w <= 0.0 || h <= 0.0 {
        return Err(Error::Numeric(format!(
            "decoded size {w}x{h} leaves the float range for delta {delta:?}"
        )));
    }
    BBox::new(anchor.cx + delta.dx * anchor.w, anchor.cy + delta.dy * anchor.h, w, h)
        .map_err(|e| Error::Numeric(e.to_string()))
}

/// Parses the `x0,y0,w,h` per-line box format. Blank lines are skipped.
pub fn parse_boxes(text: &str) -> Result<Vec<BBox>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Dataset(format!("line {}: {e}", lineno + 1)))?;
        if vals.len() != 4 {
            return Err(Error::Dataset(format!(
                "line {}: expected 4 comma-separated values, got {}",
                lineno + 1,
                vals.len()
            )));
        }
        let b = BBox::from_xywh(vals[0], vals[1], vals[2], vals[3])
            .map_err(|e| Error::Dataset(format!("line {}: {e}", lineno + 1)))?;
        out.push(b);
    }
    Ok(out)
}

/// Writes boxes in the `x0,y0,w,h` per-line format.
pub fn format_boxes(boxes: &[BBox]) -> String {
    let mut s = String::new();
    for b in boxes {
        let (x0, y0, w, h) = b.xywh();
        let _ = writeln!(s, "{x0},{y0},{w},{h}");
    }
    s
}
