//! Layout-aware tamper recipes, one or more per tampering method.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::raster::{Rect, Rgb};
use super::tamper::TamperKind;
use super::{rgb8, ChartKind, ChartLayout, ChartSpec, Mark, LOGO, PALETTE, WHITE};
use crate::intent::TamperMethod;

pub(crate) const ANNOTATION_RED: Rgb = rgb8(230, 20, 20);

/// Every (method, op kind) pair a recipe exists for.
pub(crate) const RECIPES: [(TamperMethod, &str); 13] = [
    (TamperMethod::Mdv, "paint_rect"),
    (TamperMethod::Mdv, "paint_circle"),
    (TamperMethod::Dvd, "delete_region"),
    (TamperMethod::Ard, "delete_region"),
    (TamperMethod::Ard, "copy_region"),
    (TamperMethod::Mcv, "paint_line"),
    (TamperMethod::Daa, "paint_line"),
    (TamperMethod::Ml, "recolor_region"),
    (TamperMethod::Hl, "delete_region"),
    (TamperMethod::Arl, "paint_circle"),
    (TamperMethod::Arl, "delete_region"),
    (TamperMethod::Mc, "recolor_region"),
    (TamperMethod::Mc, "paint_rect"),
];

pub(crate) fn intent_text(method: TamperMethod) -> &'static str {
    match method {
        TamperMethod::Mdv => "Make one value look larger or smaller than reported.",
        TamperMethod::Ard => "Change how many observations the chart appears to show.",
        TamperMethod::Mcv => "Shift the reader's sense of scale along an axis.",
        TamperMethod::Daa => "Steer attention toward a particular data point.",
        TamperMethod::Ml => "Attribute a series to the wrong category.",
        TamperMethod::Hl => "Hide an exact value the reader could check.",
        TamperMethod::Arl => "Misrepresent who published the chart.",
        TamperMethod::Dvd => "Make differences between values look different than they are.",
        TamperMethod::Mc => "Break the link between colors and series.",
        TamperMethod::Others => "Unspecified manipulation.",
    }
}

pub(crate) struct Ctx<'a> {
    pub spec: &'a ChartSpec,
    pub layout: &'a ChartLayout,
}

impl Ctx<'_> {
    fn size(&self) -> (usize, usize) {
        self.spec.size
    }

    fn unused_color(&self, rng: &mut ChaCha8Rng) -> Rgb {
        let free: Vec<Rgb> = PALETTE.iter().copied().filter(|c| !self.spec.palette.contains(c)).collect();
        *free.choose(rng).unwrap_or(&PALETTE[0])
    }

    fn mark(&self, rng: &mut ChaCha8Rng) -> Mark {
        *self.layout.marks.choose(rng).expect("charts have marks")
    }
}

/// Proposes geometry for `(method, kind)`; `None` when the chart has no
/// suitable target.
pub(crate) fn propose(method: TamperMethod, kind: &str, ctx: &Ctx, rng: &mut ChaCha8Rng) -> Option<TamperKind> {
    let (h, w) = ctx.size();
    let plot = ctx.layout.plot;
    let bars = ctx.spec.kind == ChartKind::Bar;
    match (method, kind) {
        (TamperMethod::Mdv, "paint_rect") if bars => {
            let m = ctx.mark(rng);
            let room = m.rect.y0.checked_sub(plot.y0 + 1)?;
            if room < 4 {
                return None;
            }
            let ext = rng.gen_range(4..=room.min(12));
            Some(TamperKind::PaintRect {
                rect: Rect::new(m.rect.x0, m.rect.y0 - ext, m.rect.x1, m.rect.y0),
                color: ctx.spec.palette[m.series % ctx.spec.palette.len()],
            })
        }
        (TamperMethod::Mdv, "paint_circle") if !bars => {
            let m = ctx.mark(rng);
            let r = m.rect.width() / 2 + 1;
            let cx = (m.rect.x0 + m.rect.x1) / 2;
            let cy = (m.rect.y0 + m.rect.y1) / 2;
            let d = rng.gen_range(4..=10);
            let cy = if rng.gen_bool(0.5) { cy.checked_sub(d)? } else { cy + d };
            if cy < plot.y0 + r || cy + r >= plot.y1 {
                return None;
            }
            Some(TamperKind::PaintCircle {
                cx,
                cy,
                radius: r,
                color: ctx.spec.palette[m.series % ctx.spec.palette.len()],
            })
        }
        (TamperMethod::Dvd, "delete_region") if bars => {
            let m = ctx.mark(rng);
            if m.rect.height() < 10 {
                return None;
            }
            let cut = rng.gen_range(4..=m.rect.height() / 2);
            Some(TamperKind::DeleteRegion {
                rect: Rect::new(m.rect.x0, m.rect.y0, m.rect.x1, m.rect.y0 + cut),
                fill: WHITE,
            })
        }
        (TamperMethod::Ard, "delete_region") => {
            let m = ctx.mark(rng);
            Some(TamperKind::DeleteRegion { rect: m.rect, fill: WHITE })
        }
        (TamperMethod::Ard, "copy_region") => {
            let m = ctx.mark(rng);
            let slot = plot.width() / ctx.spec.series[0].values.len();
            let dx = (slot / 2).max(m.rect.width() + 1) as isize;
            let dx = if rng.gen_bool(0.5) { dx } else { -dx };
            let x0 = m.rect.x0 as isize + dx;
            let x1 = m.rect.x1 as isize + dx;
            if x0 < plot.x0 as isize || x1 > plot.x1 as isize {
                return None;
            }
            Some(TamperKind::CopyRegion { rect: m.rect, dx, dy: 0 })
        }
        (TamperMethod::Mcv, "paint_line") => {
            let t = *ctx.layout.tick_labels.choose(rng)?;
            let y = (t.y0 + t.y1) / 2;
            Some(TamperKind::PaintLine {
                from: (t.x0.saturating_sub(3), y),
                to: (t.x1 + 2, y),
                width: 3,
                color: super::INK,
            })
        }
        (TamperMethod::Daa, "paint_line") => {
            let len = (w / 5).max(6);
            if plot.width() <= len + 2 || plot.height() <= len + 2 {
                return None;
            }
            let x = rng.gen_range(plot.x0 + 1..plot.x1 - len);
            let y = rng.gen_range(plot.y0 + 1..plot.y1 - len);
            let down = rng.gen_bool(0.5);
            let (from, to) = if down {
                ((x, y), (x + len, y + len))
            } else {
                ((x, y + len), (x + len, y))
            };
            Some(TamperKind::PaintLine {
                from,
                to,
                width: 2,
                color: ANNOTATION_RED,
            })
        }
        (TamperMethod::Ml, "recolor_region") => {
            let s = rng.gen_range(0..ctx.layout.legend.swatches.len());
            Some(TamperKind::RecolorRegion {
                rect: ctx.layout.legend.swatches[s],
                from: ctx.spec.palette[s % ctx.spec.palette.len()],
                to: ctx.unused_color(rng),
            })
        }
        (TamperMethod::Hl, "delete_region") => {
            let r = *ctx.layout.data_labels.choose(rng)?;
            Some(TamperKind::DeleteRegion { rect: r, fill: WHITE })
        }
        (TamperMethod::Arl, "paint_circle") => {
            let r = (w / 40).max(2);
            let cy = (ctx.layout.title.y0 + ctx.layout.title.y1) / 2;
            let lo = ctx.layout.title.x1 + r + 3;
            let hi = w.checked_sub(r + 2)?;
            if lo >= hi || cy < r || cy + r >= h {
                return None;
            }
            Some(TamperKind::PaintCircle {
                cx: rng.gen_range(lo..hi),
                cy,
                radius: r,
                color: LOGO,
            })
        }
        (TamperMethod::Arl, "delete_region") => Some(TamperKind::DeleteRegion {
            rect: ctx.layout.logo,
            fill: WHITE,
        }),
        (TamperMethod::Mc, "recolor_region") => {
            let m = ctx.mark(rng);
            Some(TamperKind::RecolorRegion {
                rect: m.rect,
                from: ctx.spec.palette[m.series % ctx.spec.palette.len()],
                to: ctx.unused_color(rng),
            })
        }
        (TamperMethod::Mc, "paint_rect") if bars => {
            let m = ctx.mark(rng);
            Some(TamperKind::PaintRect {
                rect: m.rect,
                color: ctx.unused_color(rng),
            })
        }
        _ => None,
    }
}
