//! Minimal clipped drawing primitives on RGB images.

use crate::imaging::ImageTensor;

pub type Rgb = [f64; 3];

/// Axis-aligned pixel rectangle, `x1`/`y1` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn intersects(&self, o: &Rect) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.y0 < o.y1 && o.y0 < self.y1
    }

    pub fn dilate(&self, r: usize) -> Rect {
        Rect::new(self.x0.saturating_sub(r), self.y0.saturating_sub(r), self.x1 + r, self.y1 + r)
    }

    pub fn fits(&self, h: usize, w: usize) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= w && self.y1 <= h
    }

    pub fn tuple(&self) -> (usize, usize, usize, usize) {
        (self.x0, self.y0, self.x1, self.y1)
    }
}

pub fn fill_rect(img: &mut ImageTensor, r: Rect, color: &Rgb) {
    let (h, w) = (img.height(), img.width());
    for y in r.y0.min(h)..r.y1.min(h) {
        for x in r.x0.min(w)..r.x1.min(w) {
            img.set_pixel(y, x, color);
        }
    }
}

pub fn fill_circle(img: &mut ImageTensor, cx: isize, cy: isize, radius: isize, color: &Rgb) {
    let (h, w) = (img.height() as isize, img.width() as isize);
    for y in (cy - radius).max(0)..=(cy + radius).min(h - 1) {
        for x in (cx - radius).max(0)..=(cx + radius).min(w - 1) {
            let (dx, dy) = (x - cx, y - cy);
            if dx * dx + dy * dy <= radius * radius {
                img.set_pixel(y as usize, x as usize, color);
            }
        }
    }
}

/// Bresenham line stamped with a `width × width` square brush.
pub fn draw_line(img: &mut ImageTensor, from: (isize, isize), to: (isize, isize), width: usize, color: &Rgb) {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let lo = -(((width.max(1) - 1) / 2) as isize);
    let hi = (width.max(1) / 2) as isize;
    let (mut x, mut y) = from;
    let dx = (to.0 - x).abs();
    let dy = -(to.1 - y).abs();
    let sx = if x < to.0 { 1 } else { -1 };
    let sy = if y < to.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        for oy in lo..=hi {
            for ox in lo..=hi {
                let (px, py) = (x + ox, y + oy);
                if px >= 0 && py >= 0 && px < w && py < h {
                    img.set_pixel(py as usize, px as usize, color);
                }
            }
        }
        if (x, y) == to {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Stand-in for a text run: columns of glyph strokes whose on/off pattern
/// is derived from `key`.
pub fn pseudo_text(img: &mut ImageTensor, r: Rect, key: u64, color: &Rgb) {
    let mut state = key.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    for x in r.x0..r.x1 {
        let col = x - r.x0;
        if col % 3 == 2 {
            continue;
        }
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        let skip_top = state.is_multiple_of(3) as usize;
        fill_rect(img, Rect::new(x, r.y0 + skip_top.min(r.height().saturating_sub(1)), x + 1, r.y1), color);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_fill_counts() {
        let mut img = ImageTensor::filled(20, 20, 3, 1.0);
        fill_rect(&mut img, Rect::new(2, 3, 12, 13), &[0.0; 3]);
        let dark = img.data().chunks(3).filter(|p| p[0] == 0.0).count();
        assert_eq!(dark, 100);
    }

    #[test]
    fn clipping_never_panics() {
        let mut img = ImageTensor::filled(8, 8, 3, 1.0);
        fill_circle(&mut img, -3, 20, 5, &[0.0; 3]);
        draw_line(&mut img, (-5, -5), (20, 3), 3, &[0.0; 3]);
        fill_rect(&mut img, Rect::new(6, 6, 30, 30), &[0.0; 3]);
    }

    #[test]
    fn line_endpoints_drawn() {
        let mut img = ImageTensor::filled(10, 10, 3, 1.0);
        draw_line(&mut img, (1, 1), (8, 5), 1, &[0.0; 3]);
        assert_eq!(img.pixel(1, 1), &[0.0; 3]);
        assert_eq!(img.pixel(5, 8), &[0.0; 3]);
    }
}
