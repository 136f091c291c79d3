use serde::{Deserialize, Serialize};

use super::raster::{draw_line, fill_circle, fill_rect, Rect, Rgb};
use crate::detect::TamperMask;
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::intent::TamperMethod;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TamperKind {
    PaintCircle { cx: usize, cy: usize, radius: usize, color: Rgb },
    PaintRect { rect: Rect, color: Rgb },
    PaintLine { from: (usize, usize), to: (usize, usize), width: usize, color: Rgb },
    /// Copies `rect` to `rect` shifted by `(dx, dy)`.
    CopyRegion { rect: Rect, dx: isize, dy: isize },
    /// Fills `rect` with `fill`.
    DeleteRegion { rect: Rect, fill: Rgb },
    /// Inside `rect`, pixels equal to `from` at 8-bit precision become `to`.
    RecolorRegion { rect: Rect, from: Rgb, to: Rgb },
}

impl TamperKind {
    pub fn name(&self) -> &'static str {
        match self {
            TamperKind::PaintCircle { .. } => "paint_circle",
            TamperKind::PaintRect { .. } => "paint_rect",
            TamperKind::PaintLine { .. } => "paint_line",
            TamperKind::CopyRegion { .. } => "copy_region",
            TamperKind::DeleteRegion { .. } => "delete_region",
            TamperKind::RecolorRegion { .. } => "recolor_region",
        }
    }

    pub const NAMES: [&'static str; 6] = [
        "paint_circle",
        "paint_rect",
        "paint_line",
        "copy_region",
        "delete_region",
        "recolor_region",
    ];

    /// Rectangle containing every pixel the op may write.
    pub fn bbox(&self) -> Rect {
        match *self {
            TamperKind::PaintCircle { cx, cy, radius, .. } => Rect::new(
                cx.saturating_sub(radius),
                cy.saturating_sub(radius),
                cx + radius + 1,
                cy + radius + 1,
            ),
            TamperKind::PaintRect { rect, .. }
            | TamperKind::DeleteRegion { rect, .. }
            | TamperKind::RecolorRegion { rect, .. } => rect,
            TamperKind::PaintLine { from, to, width, .. } => {
                let lo = (width.max(1) - 1) / 2;
                let hi = width.max(1) / 2;
                Rect::new(
                    from.0.min(to.0).saturating_sub(lo),
                    from.1.min(to.1).saturating_sub(lo),
                    from.0.max(to.0) + hi + 1,
                    from.1.max(to.1) + hi + 1,
                )
            }
            TamperKind::CopyRegion { rect, dx, dy } => Rect::new(
                (rect.x0 as isize + dx).max(0) as usize,
                (rect.y0 as isize + dy).max(0) as usize,
                (rect.x1 as isize + dx).max(0) as usize,
                (rect.y1 as isize + dy).max(0) as usize,
            ),
        }
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        let ok = match *self {
            TamperKind::CopyRegion { rect, dx, dy } => {
                let shifted = |v: usize, d: isize| v as isize + d;
                rect.fits(h, w)
                    && shifted(rect.x0, dx) >= 0
                    && shifted(rect.y0, dy) >= 0
                    && shifted(rect.x1, dx) <= w as isize
                    && shifted(rect.y1, dy) <= h as isize
            }
            _ => self.bbox().fits(h, w),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::geometry(format!("{} at {:?} outside {h}x{w} canvas", self.name(), self.bbox())))
        }
    }

    fn apply(&self, img: &mut ImageTensor) {
        match *self {
            TamperKind::PaintCircle { cx, cy, radius, color } => {
                fill_circle(img, cx as isize, cy as isize, radius as isize, &color)
            }
            TamperKind::PaintRect { rect, color } => fill_rect(img, rect, &color),
            TamperKind::PaintLine { from, to, width, color } => draw_line(
                img,
                (from.0 as isize, from.1 as isize),
                (to.0 as isize, to.1 as isize),
                width,
                &color,
            ),
            TamperKind::CopyRegion { rect, dx, dy } => {
                let src = img.clone();
                for y in rect.y0..rect.y1 {
                    for x in rect.x0..rect.x1 {
                        let (tx, ty) = ((x as isize + dx) as usize, (y as isize + dy) as usize);
                        img.set_pixel(ty, tx, src.pixel(y, x));
                    }
                }
            }
            TamperKind::DeleteRegion { rect, fill } => fill_rect(img, rect, &fill),
            TamperKind::RecolorRegion { rect, from, to } => {
                for y in rect.y0..rect.y1 {
                    for x in rect.x0..rect.x1 {
                        let hit = img.pixel(y, x).iter().zip(&from).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0);
                        if hit {
                            img.set_pixel(y, x, &to);
                        }
                    }
                }
            }
        }
    }
}

/// One tampering edit with its ground-truth label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TamperOp {
    #[serde(flatten)]
    pub kind: TamperKind,
    pub method: TamperMethod,
    pub intent: String,
}

impl TamperOp {
    pub fn bbox(&self) -> Rect {
        self.kind.bbox()
    }
}

/// Pixels where any channel differs.
pub fn diff_mask(a: &ImageTensor, b: &ImageTensor) -> Result<TamperMask> {
    a.check_same_shape(b)?;
    let c = a.channels();
    let bits = a
        .data()
        .chunks_exact(c)
        .zip(b.data().chunks_exact(c))
        .map(|(p, q)| p != q)
        .collect();
    TamperMask::from_bits(a.height(), a.width(), bits)
}

/// Applies `ops` in order; the truth mask is the exact pixel-difference support.
pub fn apply_tamper(img: &ImageTensor, ops: &[TamperOp]) -> Result<(ImageTensor, TamperMask)> {
    let mut out = img.to_rgb();
    for op in ops {
        op.kind.check(img.height(), img.width())?;
        op.kind.apply(&mut out);
    }
    let base = img.to_rgb();
    let mask = diff_mask(&base, &out)?;
    Ok((out, mask))
}
