//! Stride grids and the grid-anchor selection rule.
//!
//! Each ground truth is assigned, at every stride whose scale gate it
//! passes, the cell containing its center plus the two other cells whose
//! centers lie nearest to it (Euclidean distance, ties by `(row, col)`).

use log::warn;
use serde::{Deserialize, Serialize};

use crate::boxgeom::PixelBox;
use crate::error::{Error, Result};

/// Detection strides, lowest level first.
pub const STRIDES: [u32; 3] = [8, 16, 32];

/// Number of anchors selected per ground truth per eligible level.
pub const ANCHORS_PER_LEVEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub stride: u32,
    pub cols: u32,
    pub rows: u32,
}

impl GridSpec {
    pub fn new(image_w: u32, image_h: u32, stride: u32) -> Result<Self> {
        for dim in [image_w, image_h] {
            if dim == 0 || dim % stride != 0 {
                return Err(Error::NotDivisible { dim, stride });
            }
        }
        let (cols, rows) = (image_w / stride, image_h / stride);
        if cols < 2 || rows < 2 {
            return Err(Error::GridTooSmall { stride, cols, rows });
        }
        Ok(Self { stride, cols, rows })
    }

    pub fn anchor(&self, row: u32, col: u32) -> Anchor {
        debug_assert!(row < self.rows && col < self.cols);
        Anchor { g_x: (col * self.stride) as f64, g_y: (row * self.stride) as f64, stride: self.stride, row, col }
    }

    /// Cell containing a pixel position, clamped to the grid.
    pub fn containing_cell(&self, x: f64, y: f64) -> (u32, u32) {
        let d = self.stride as f64;
        let clamp = |v: f64, n: u32| (v / d).floor().clamp(0.0, (n - 1) as f64) as u32;
        (clamp(y, self.rows), clamp(x, self.cols))
    }
}

/// A `d x d` grid cell used as the regression reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    /// Upper-left corner abscissa, `col * d`.
    pub g_x: f64,
    /// Upper-left corner ordinate, `row * d`.
    pub g_y: f64,
    pub stride: u32,
    pub row: u32,
    pub col: u32,
}

impl Anchor {
    pub fn center(&self) -> (f64, f64) {
        let half = self.stride as f64 / 2.0;
        (self.g_x + half, self.g_y + half)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub gt_index: usize,
    pub anchor: Anchor,
}

/// Grids for strides 8, 16 and 32. Both dimensions must be multiples of 32
/// and every grid must be at least 2x2.
pub fn build_grids(image_w: u32, image_h: u32) -> Result<[GridSpec; 3]> {
    Ok([
        GridSpec::new(image_w, image_h, STRIDES[0])?,
        GridSpec::new(image_w, image_h, STRIDES[1])?,
        GridSpec::new(image_w, image_h, STRIDES[2])?,
    ])
}

/// Size limit of the scale gate: a box whose longer side exceeds `d^2`
/// is ignored at stride `d`.
pub fn scale_limit(stride: u32) -> f64 {
    (stride * stride) as f64
}

/// Strides at which `gt` passes the scale gate (longer side `<= d^2`).
pub fn eligible_levels(gt: &PixelBox) -> Vec<u32> {
    let side = gt.longer_side();
    let levels: Vec<u32> = STRIDES.into_iter().filter(|&d| side <= scale_limit(d)).collect();
    if levels.is_empty() {
        warn!("ground truth with longer side {side} exceeds every scale gate; skipped");
    }
    levels
}

fn dist2_to_center(x: f64, y: f64, grid: &GridSpec, row: u32, col: u32) -> f64 {
    let d = grid.stride as f64;
    let cx = (col as f64 + 0.5) * d;
    let cy = (row as f64 + 0.5) * d;
    (x - cx).powi(2) + (y - cy).powi(2)
}

/// The three anchors for a center on one grid: containing cell first, then
/// the two nearest other cells ordered by `(distance, row, col)`.
///
/// The two runners-up always lie within two cells of the containing cell:
/// an in-grid horizontal and vertical neighbour both exist (grids are at
/// least 2x2) at squared distance at most 2.5 cells, while anything three
/// or more cells away is at least 2.5 cells off along one axis.
pub fn select_cells(center: (f64, f64), grid: &GridSpec) -> [Anchor; 3] {
    const RADIUS: i64 = 2;
    let (x, y) = center;
    let (row0, col0) = grid.containing_cell(x, y);

    let mut candidates: Vec<(f64, u32, u32)> = Vec::with_capacity(24);
    for dr in -RADIUS..=RADIUS {
        for dc in -RADIUS..=RADIUS {
            if dr == 0 && dc == 0 {
                continue;
            }
            let (r, c) = (row0 as i64 + dr, col0 as i64 + dc);
            if r < 0 || c < 0 || r >= grid.rows as i64 || c >= grid.cols as i64 {
                continue;
            }
            let (r, c) = (r as u32, c as u32);
            candidates.push((dist2_to_center(x, y, grid, r, c), r, c));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    [
        grid.anchor(row0, col0),
        grid.anchor(candidates[0].1, candidates[0].2),
        grid.anchor(candidates[1].1, candidates[1].2),
    ]
}

/// Anchor assignments for every ground truth of one image.
///
/// Ground truths whose center lies outside `[0, w) x [0, h)`, or which
/// fail every scale gate, are skipped with a warning.
pub fn assign_all(gts: &[PixelBox], image_w: u32, image_h: u32) -> Result<Vec<Assignment>> {
    let grids = build_grids(image_w, image_h)?;
    let mut out = Vec::with_capacity(gts.len() * 9);
    for (gt_index, gt) in gts.iter().enumerate() {
        let inside = gt.x >= 0.0 && gt.y >= 0.0 && gt.x < image_w as f64 && gt.y < image_h as f64;
        if !inside {
            warn!("ground truth {gt_index} has center ({}, {}) outside the image; skipped", gt.x, gt.y);
            continue;
        }
        for stride in eligible_levels(gt) {
            let grid = grids.iter().find(|g| g.stride == stride).expect("stride grid");
            for anchor in select_cells((gt.x, gt.y), grid) {
                out.push(Assignment { gt_index, anchor });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cells(anchors: &[Anchor; 3]) -> Vec<(u32, u32)> {
        anchors.iter().map(|a| (a.row, a.col)).collect()
    }

    #[test]
    fn grids_for_square_and_wide_images() {
        let g = build_grids(640, 640).unwrap();
        assert_eq!(g.map(|s| (s.cols, s.rows)), [(80, 80), (40, 40), (20, 20)]);
        let g = build_grids(320, 640).unwrap();
        assert_eq!(g.map(|s| (s.cols, s.rows)), [(40, 80), (20, 40), (10, 20)]);
    }

    #[test]
    fn grid_errors() {
        assert!(matches!(build_grids(64, 32), Err(Error::GridTooSmall { stride: 32, .. })));
        assert!(matches!(build_grids(100, 64), Err(Error::NotDivisible { dim: 100, .. })));
    }

    #[test]
    fn eligibility_gate_is_strict() {
        let gt = |w, h| PixelBox::new(100.0, 100.0, w, h).unwrap();
        assert_eq!(eligible_levels(&gt(70.0, 20.0)), vec![16, 32]);
        assert_eq!(eligible_levels(&gt(64.0, 64.0)), vec![8, 16, 32]);
        assert_eq!(eligible_levels(&gt(300.0, 1100.0)), Vec::<u32>::new());
        assert_eq!(eligible_levels(&gt(1024.0, 10.0)), vec![32]);
    }

    #[test]
    fn select_cells_spot_values() {
        let grid = GridSpec::new(640, 640, 8).unwrap();
        assert_eq!(cells(&select_cells((101.0, 61.0), &grid)), vec![(7, 12), (7, 13), (8, 12)]);
        assert_eq!(cells(&select_cells((4.0, 4.0), &grid)), vec![(0, 0), (0, 1), (1, 0)]);
        assert_eq!(cells(&select_cells((3.0, 3.0), &grid)), vec![(0, 0), (0, 1), (1, 0)]);
    }

    #[test]
    fn select_cells_bottom_right_corner() {
        let grid = GridSpec::new(64, 64, 32).unwrap();
        assert_eq!(cells(&select_cells((63.0, 63.0), &grid)), vec![(1, 1), (0, 1), (1, 0)]);
    }

    #[test]
    fn anchor_corner_matches_cell() {
        let grid = GridSpec::new(640, 640, 16).unwrap();
        let a = grid.anchor(3, 5);
        assert_eq!((a.g_x, a.g_y), (80.0, 48.0));
        assert_eq!(a.center(), (88.0, 56.0));
    }

    #[test]
    fn assign_counts() {
        let gt = PixelBox::new(101.0, 61.0, 40.0, 24.0).unwrap();
        assert_eq!(assign_all(&[gt], 640, 640).unwrap().len(), 9);
        let wide = PixelBox::new(101.0, 61.0, 70.0, 20.0).unwrap();
        let a = assign_all(&[wide], 640, 640).unwrap();
        assert_eq!(a.len(), 6);
        assert!(a.iter().all(|s| s.anchor.stride != 8));
        assert!(assign_all(&[], 640, 640).unwrap().is_empty());
    }

    #[test]
    fn assign_skips_outside_centers_and_keeps_shared_cells() {
        let outside = PixelBox::new(700.0, 10.0, 10.0, 10.0).unwrap();
        let a = PixelBox::new(101.0, 61.0, 10.0, 10.0).unwrap();
        let b = PixelBox::new(102.0, 62.0, 12.0, 12.0).unwrap();
        let out = assign_all(&[outside, a, b], 640, 640).unwrap();
        assert_eq!(out.len(), 18);
        assert!(out.iter().all(|s| s.gt_index != 0));
        let first = out.iter().find(|s| s.gt_index == 1).unwrap().anchor;
        assert!(out.iter().any(|s| s.gt_index == 2 && s.anchor == first));
    }
}
