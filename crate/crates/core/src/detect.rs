//! Residual thresholding of the revealed location map, morphological cleanup,
//! connected components and contour tracing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{encode_png, render_overlay, ImageTensor, OverlayStyle};
use crate::inn::{realize_location_map, InnModel, MapPattern, Revealed};
use crate::intent::ComponentLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Morphology {
    None,
    /// Opening then closing with a `(2r+1)²` square element.
    OpenClose { radius: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub tau: f64,
    pub min_area: usize,
    /// 4 or 8.
    pub connectivity: u8,
    pub morphology: Morphology,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            tau: 0.2,
            min_area: 16,
            connectivity: 8,
            morphology: Morphology::OpenClose { radius: 1 },
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::arg(format!("tau must be in (0, 1), got {}", self.tau)));
        }
        if self.connectivity != 4 && self.connectivity != 8 {
            return Err(Error::arg(format!(
                "connectivity must be 4 or 8, got {}",
                self.connectivity
            )));
        }
        Ok(())
    }
}

/// Binary per-pixel tamper mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TamperMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl TamperMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape(format!(
                "mask has {} bits, expected {height}x{width}",
                bits.len()
            )));
        }
        Ok(Self { height, width, bits })
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn same_shape(&self, other: &TamperMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Grayscale image, 1.0 where set.
    pub fn to_image(&self) -> ImageTensor {
        let data = self.bits.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
        ImageTensor::new(self.height, self.width, 1, data).expect("mask dimensions")
    }

    /// Any channel ≥ 0.5 sets the bit.
    pub fn from_image(img: &ImageTensor) -> Self {
        let c = img.channels();
        let bits = img
            .data()
            .chunks_exact(c)
            .map(|px| px.iter().any(|v| *v >= 0.5))
            .collect();
        Self {
            height: img.height(),
            width: img.width(),
            bits,
        }
    }

    /// 0/255 grayscale PNG.
    pub fn encode_png(&self) -> Vec<u8> {
        encode_png(&self.to_image())
    }

    pub fn crop(&self, height: usize, width: usize) -> Result<TamperMask> {
        if height > self.height || width > self.width {
            return Err(Error::shape("mask crop larger than mask"));
        }
        let mut out = TamperMask::empty(height, width);
        for y in 0..height {
            for x in 0..width {
                out.set(y, x, self.get(y, x));
            }
        }
        Ok(out)
    }
}

/// A connected component of the tamper mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TamperRegion {
    pub id: usize,
    /// `(x0, y0, x1, y1)`, upper bounds exclusive.
    pub bbox: (usize, usize, usize, usize),
    pub area: usize,
    /// Closed boundary loop of `(x, y)` points; the first point is repeated at the end.
    pub contour: Vec<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component_label: Option<ComponentLabel>,
    #[serde(skip)]
    pub pixels: Vec<(u32, u32)>,
}

impl TamperRegion {
    /// Builds a region from the `(x, y)` pixels of one connected component.
    ///
    /// # Panics
    /// If `pixels` is empty.
    pub fn from_pixels(id: usize, mut pixels: Vec<(u32, u32)>) -> Self {
        assert!(!pixels.is_empty(), "region needs at least one pixel");
        pixels.sort_by_key(|&(x, y)| (y, x));
        pixels.dedup();
        let x0 = pixels.iter().map(|p| p.0).min().unwrap() as usize;
        let x1 = pixels.iter().map(|p| p.0).max().unwrap() as usize + 1;
        let y0 = pixels.iter().map(|p| p.1).min().unwrap() as usize;
        let y1 = pixels.iter().map(|p| p.1).max().unwrap() as usize + 1;
        let (w, h) = (x1 - x0, y1 - y0);
        let mut local = TamperMask::empty(h, w);
        for &(x, y) in &pixels {
            local.set(y as usize - y0, x as usize - x0, true);
        }
        // pixels are sorted row-major, so the first one is topmost-then-leftmost
        let start = (pixels[0].0 as usize - x0, pixels[0].1 as usize - y0);
        let contour = moore_trace(&local, start)
            .into_iter()
            .map(|(x, y)| ((x + x0) as u32, (y + y0) as u32))
            .collect();
        Self {
            id,
            bbox: (x0, y0, x1, y1),
            area: pixels.len(),
            contour,
            component_label: None,
            pixels,
        }
    }
}

/// Clockwise neighbor offsets `(dx, dy)` starting west (y grows downward).
const MOORE: [(isize, isize); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

fn direction_of(dx: isize, dy: isize) -> usize {
    MOORE.iter().position(|&d| d == (dx, dy)).expect("unit offset")
}

/// Moore-neighbor boundary tracing, clockwise, from `start` which must be the
/// topmost-then-leftmost set pixel. Stops when the first move repeats.
fn moore_trace(mask: &TamperMask, start: (usize, usize)) -> Vec<(usize, usize)> {
    let inside = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < mask.width && (y as usize) < mask.height && mask.get(y as usize, x as usize)
    };
    let mut contour = vec![start];
    let (mut px, mut py) = (start.0 as isize, start.1 as isize);
    // the west neighbor of the topmost-leftmost pixel is background
    let mut back = 0usize;
    let mut first_move: Option<(isize, isize)> = None;
    loop {
        let mut next = None;
        for i in 1..=8 {
            let d = (back + i) % 8;
            let (nx, ny) = (px + MOORE[d].0, py + MOORE[d].1);
            if inside(nx, ny) {
                let prev = (back + i - 1) % 8;
                next = Some((nx, ny, prev));
                break;
            }
        }
        let Some((nx, ny, prev)) = next else {
            // isolated pixel
            contour.push(start);
            return contour;
        };
        if (px, py) == (start.0 as isize, start.1 as isize) {
            match first_move {
                None => first_move = Some((nx, ny)),
                Some(m) if m == (nx, ny) => return contour,
                Some(_) => {}
            }
        }
        // new backtrack: the background cell examined just before `next`,
        // expressed relative to `next`
        let (bx, by) = (px + MOORE[prev].0, py + MOORE[prev].1);
        back = direction_of(bx - nx, by - ny);
        px = nx;
        py = ny;
        contour.push((px as usize, py as usize));
    }
}

/// Thresholds the per-pixel max-over-channels residual at `tau`, then
/// applies the configured morphology.
pub fn residual_mask(original: &ImageTensor, revealed: &ImageTensor, cfg: &DetectionConfig) -> Result<TamperMask> {
    cfg.validate()?;
    original.check_same_shape(revealed)?;
    let c = original.channels();
    let bits = original
        .data()
        .chunks_exact(c)
        .zip(revealed.data().chunks_exact(c))
        .map(|(a, b)| {
            let d = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            d >= cfg.tau
        })
        .collect();
    let mask = TamperMask {
        height: original.height(),
        width: original.width(),
        bits,
    };
    Ok(match cfg.morphology {
        Morphology::None => mask,
        Morphology::OpenClose { radius } => open_close(&mask, radius),
    })
}

fn morph(mask: &TamperMask, radius: usize, dilate: bool) -> TamperMask {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = (mask.height, mask.width);
    let mut out = TamperMask::empty(h, w);
    let r = radius as isize;
    for y in 0..h {
        for x in 0..w {
            let mut hit = !dilate;
            'win: for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let v = mask.get(ny as usize, nx as usize);
                    if dilate && v {
                        hit = true;
                        break 'win;
                    }
                    if !dilate && !v {
                        hit = false;
                        break 'win;
                    }
                }
            }
            out.set(y, x, hit);
        }
    }
    out
}

pub fn erode(mask: &TamperMask, radius: usize) -> TamperMask {
    morph(mask, radius, false)
}

pub fn dilate(mask: &TamperMask, radius: usize) -> TamperMask {
    morph(mask, radius, true)
}

/// Opening removes specks, closing fills pinholes.
pub fn open_close(mask: &TamperMask, radius: usize) -> TamperMask {
    let opened = dilate(&erode(mask, radius), radius);
    erode(&dilate(&opened, radius), radius)
}

/// Component label per pixel (0 = background) and the component count.
pub fn label_components(mask: &TamperMask, connectivity: u8) -> (Vec<usize>, usize) {
    let (h, w) = (mask.height, mask.width);
    let mut labels = vec![0usize; h * w];
    let mut next = 0;
    let offsets: &[(isize, isize)] = if connectivity == 4 {
        &[(1, 0), (-1, 0), (0, 1), (0, -1)]
    } else {
        &MOORE
    };
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask.bits[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for &(dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.bits[j] && labels[j] == 0 {
                    labels[j] = next;
                    stack.push(j);
                }
            }
        }
    }
    (labels, next)
}

/// Connected components with area ≥ `min_area`, largest first (ties broken
/// by raster order of the first pixel), ids `0..n`.
pub fn extract_regions(mask: &TamperMask, cfg: &DetectionConfig) -> Result<Vec<TamperRegion>> {
    cfg.validate()?;
    let (labels, n) = label_components(mask, cfg.connectivity);
    let mut groups: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            groups[l - 1].push(((i % mask.width) as u32, (i / mask.width) as u32));
        }
    }
    // labels are assigned in raster order, so a stable sort keeps that as the tie-break
    groups.retain(|g| g.len() >= cfg.min_area.max(1));
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(id, g)| TamperRegion::from_pixels(id, g))
        .collect())
}

/// All artifacts of one detection run.
#[derive(Debug, Clone)]
pub struct Detection {
    pub mask: TamperMask,
    pub regions: Vec<TamperRegion>,
    pub overlay: ImageTensor,
    pub revealed: Revealed,
}

/// reveal → residual mask → regions → green-contour overlay.
pub fn detect_pipeline(
    model: &InnModel,
    map_pattern: &MapPattern,
    suspect: &ImageTensor,
    cfg: &DetectionConfig,
) -> Result<Detection> {
    if !suspect.is_even_sized() {
        return Err(Error::shape(format!(
            "suspect image is {}x{}, height and width must be even",
            suspect.height(),
            suspect.width()
        )));
    }
    cfg.validate()?;
    let original = realize_location_map(map_pattern, suspect.height(), suspect.width(), suspect.channels())?;
    let revealed = model.reveal(suspect)?;
    let mask = residual_mask(&original, &revealed.map, cfg)?;
    let regions = extract_regions(&mask, cfg)?;
    let overlay = render_overlay(suspect, &regions, &OverlayStyle::default())?;
    Ok(Detection {
        mask,
        regions,
        overlay,
        revealed,
    })
}

/// JSON array of `{id, bbox, area, contour}`.
pub fn regions_to_json(regions: &[TamperRegion]) -> String {
    serde_json::to_string_pretty(regions).expect("regions serialize")
}

pub fn save_mask(mask: &TamperMask, path: &Path) -> Result<()> {
    std::fs::write(path, mask.encode_png()).map_err(|e| Error::io(path, e))
}
