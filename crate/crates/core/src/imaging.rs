//! Raster images in normalized `[0, 1]` form, file I/O and overlay rendering.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GenericImageView, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::detect::TamperRegion;
use crate::error::{Error, Result};

/// An `height × width × channels` raster stored row-major with interleaved
/// channels. Values are nominally in `[0, 1]`; intermediate network tensors
/// use [`crate::autodiff::Tensor`] instead.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::shape(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite pixel value {v}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
            .expect("valid constant image")
    }

    /// An image painted with a single color; `color.len()` fixes the channel count.
    pub fn solid(height: usize, width: usize, color: &[f64]) -> Self {
        let data = (0..height * width)
            .flat_map(|_| color.iter().copied())
            .collect();
        Self::new(height, width, color.len(), data).expect("valid solid image")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn check_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    pub fn is_even_sized(&self) -> bool {
        self.height.is_multiple_of(2) && self.width.is_multiple_of(2) && self.height > 0 && self.width > 0
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = self.index(y, x, 0);
        &self.data[i..i + self.channels]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, color: &[f64]) {
        let i = self.index(y, x, 0);
        let n = self.channels;
        if color.len() == n {
            self.data[i..i + n].copy_from_slice(color);
        } else {
            // gray target from an RGB color or vice versa
            let v = color.iter().sum::<f64>() / color.len() as f64;
            self.data[i..i + n].iter_mut().for_each(|d| *d = v);
        }
    }

    pub fn clamp01(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    /// Rounds every value to the nearest 8-bit level, as storing to PNG would.
    pub fn quantize8(&self) -> Self {
        let data = self.data.iter().map(|&v| to_u8(v) as f64 / 255.0).collect();
        Self { data, ..*self }
    }

    pub fn to_rgb(&self) -> ImageTensor {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Self {
            channels: 3,
            data,
            ..*self
        }
    }

    /// Pads odd dimensions to even by replicating the last row/column.
    pub fn pad_to_even(&self) -> ImageTensor {
        let h = self.height + self.height % 2;
        let w = self.width + self.width % 2;
        if h == self.height && w == self.width {
            return self.clone();
        }
        let mut out = ImageTensor::filled(h, w, self.channels, 0.0);
        for y in 0..h {
            for x in 0..w {
                let src = self.pixel(y.min(self.height - 1), x.min(self.width - 1)).to_vec();
                out.set_pixel(y, x, &src);
            }
        }
        out
    }

    pub fn crop(&self, height: usize, width: usize) -> Result<ImageTensor> {
        if height > self.height || width > self.width {
            return Err(Error::geometry(format!(
                "crop {height}x{width} exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for y in 0..height {
            let start = self.index(y, 0, 0);
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        ImageTensor::new(height, width, self.channels, data)
    }
}

#[inline]
fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Output container for [`save_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Png,
    Jpeg,
}

impl FileFormat {
    pub fn from_path(path: &Path) -> Option<FileFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "png" => Some(FileFormat::Png),
            "jpg" | "jpeg" => Some(FileFormat::Jpeg),
            _ => None,
        }
    }
}

pub fn decode_image(bytes: &[u8]) -> Result<ImageTensor> {
    let format = image::guess_format(bytes).map_err(|e| Error::Format(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(Error::Format(format!("{format:?} is not PNG or JPEG")));
    }
    let img = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(from_dynamic(&img))
}

fn from_dynamic(img: &DynamicImage) -> ImageTensor {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
        ImageTensor::new(h, w, 3, data).expect("decoded rgb buffer")
    } else {
        let gray = img.to_luma8();
        let data = gray.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
        ImageTensor::new(h, w, 1, data).expect("decoded gray buffer")
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

fn to_bytes8(img: &ImageTensor) -> Vec<u8> {
    img.data.iter().map(|&v| to_u8(v)).collect()
}

pub fn encode_png(img: &ImageTensor) -> Vec<u8> {
    let (w, h) = (img.width as u32, img.height as u32);
    let raw = to_bytes8(img);
    let dynamic = if img.channels == 3 {
        DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, raw).expect("rgb buffer"))
    } else {
        DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, raw).expect("gray buffer"))
    };
    let mut out = Cursor::new(Vec::new());
    dynamic
        .write_to(&mut out, ImageFormat::Png)
        .expect("in-memory png encoding");
    out.into_inner()
}

/// Baseline JPEG with libjpeg quality scaling and 4:2:0 chroma subsampling.
pub fn encode_jpeg(img: &ImageTensor, quality: u8) -> Result<Vec<u8>> {
    if !(1..=100).contains(&quality) {
        return Err(Error::arg(format!("jpeg quality must be in 1..=100, got {quality}")));
    }
    if img.width > u16::MAX as usize || img.height > u16::MAX as usize {
        return Err(Error::arg("image too large for JPEG"));
    }
    let raw = to_bytes8(img);
    let mut out = Vec::new();
    let mut encoder = jpeg_encoder::Encoder::new(&mut out, quality);
    let color = if img.channels == 3 {
        encoder.set_sampling_factor(jpeg_encoder::SamplingFactor::F_2_2);
        jpeg_encoder::ColorType::Rgb
    } else {
        jpeg_encoder::ColorType::Luma
    };
    encoder
        .encode(&raw, img.width as u16, img.height as u16, color)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(out)
}

pub fn save_image(
    img: &ImageTensor,
    path: impl AsRef<Path>,
    format: FileFormat,
    jpeg_quality: u8,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        FileFormat::Png => encode_png(img),
        FileFormat::Jpeg => encode_jpeg(img, jpeg_quality)?,
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// How tamper regions are drawn on top of an image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlayStyle {
    pub contour_color: [f64; 3],
    pub line_width: usize,
    pub fill_alpha: f64,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            contour_color: [0.0, 1.0, 0.0],
            line_width: 2,
            fill_alpha: 0.0,
        }
    }
}

impl OverlayStyle {
    /// Translucent fill, easier for people to read than thin outlines.
    pub fn spotlight() -> Self {
        Self {
            fill_alpha: 0.3,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.line_width < 1 {
            return Err(Error::arg("overlay line_width must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.fill_alpha) {
            return Err(Error::arg("overlay fill_alpha must be in [0, 1]"));
        }
        if self.contour_color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::arg("overlay contour_color must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Draws region contours (and optionally translucent interiors) onto a copy
/// of `base`. Gray bases are promoted to RGB so the contour color survives.
pub fn render_overlay(
    base: &ImageTensor,
    regions: &[TamperRegion],
    style: &OverlayStyle,
) -> Result<ImageTensor> {
    style.validate()?;
    for r in regions {
        let (x0, y0, x1, y1) = r.bbox;
        if x0 >= x1 || y0 >= y1 || x1 > base.width || y1 > base.height {
            return Err(Error::geometry(format!(
                "region {} bbox {:?} outside {}x{} image",
                r.id, r.bbox, base.height, base.width
            )));
        }
    }
    if regions.is_empty() {
        return Ok(base.clone());
    }
    let mut out = base.to_rgb();
    let color = style.contour_color;
    let (h, w) = (out.height as isize, out.width as isize);
    let lo = -(((style.line_width - 1) / 2) as isize);
    let hi = (style.line_width / 2) as isize;

    let mut on_contour = vec![false; out.height * out.width];
    for r in regions {
        for &(cx, cy) in &r.contour {
            for dy in lo..=hi {
                for dx in lo..=hi {
                    let (x, y) = (cx as isize + dx, cy as isize + dy);
                    if x >= 0 && y >= 0 && x < w && y < h {
                        on_contour[y as usize * out.width + x as usize] = true;
                    }
                }
            }
        }
    }
    if style.fill_alpha > 0.0 {
        let a = style.fill_alpha;
        for r in regions {
            for &(px, py) in &r.pixels {
                let (x, y) = (px as usize, py as usize);
                if on_contour[y * out.width + x] {
                    continue;
                }
                for (c, &col) in color.iter().enumerate() {
                    let v = out.get(y, x, c);
                    out.set(y, x, c, (1.0 - a) * v + a * col);
                }
            }
        }
    }
    for (i, _) in on_contour.iter().enumerate().filter(|(_, &on)| on) {
        out.set_pixel(i / out.width, i % out.width, &color);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::TamperRegion;

    fn square_region(x0: usize, y0: usize, side: usize) -> TamperRegion {
        let mut pixels = Vec::new();
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                pixels.push((x as u32, y as u32));
            }
        }
        TamperRegion::from_pixels(0, pixels)
    }

    #[test]
    fn png_white_and_black_load_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.png");
        save_image(&ImageTensor::filled(2, 2, 3, 1.0), &p, FileFormat::Png, 90).unwrap();
        assert!(load_image(&p).unwrap().data().iter().all(|&v| v == 1.0));
        save_image(&ImageTensor::filled(2, 2, 3, 0.0), &p, FileFormat::Png, 90).unwrap();
        assert!(load_image(&p).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gray_128_maps_to_128_over_255() {
        let img = ImageTensor::filled(2, 2, 1, 128.0 / 255.0);
        let back = decode_image(&encode_png(&img)).unwrap();
        assert_eq!(back.channels(), 1);
        assert!((back.get(0, 0, 0) - 0.501_960_784).abs() < 1e-8);
    }

    #[test]
    fn jpeg_quality_bounds() {
        let img = ImageTensor::filled(8, 8, 3, 0.5);
        assert!(matches!(encode_jpeg(&img, 0), Err(Error::Argument(_))));
        assert!(matches!(encode_jpeg(&img, 101), Err(Error::Argument(_))));
        let back = decode_image(&encode_jpeg(&img, 100).unwrap()).unwrap();
        assert_eq!(back.height(), 8);
    }

    #[test]
    fn jpeg_is_lossy_on_detail() {
        let data = (0..32 * 32 * 3).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
        let img = ImageTensor::new(32, 32, 3, data).unwrap();
        let back = decode_image(&encode_jpeg(&img, 100).unwrap()).unwrap();
        let mad: f64 = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / img.data().len() as f64;
        assert!(mad > 0.0);
    }

    #[test]
    fn unsupported_and_corrupt_inputs() {
        assert!(matches!(decode_image(b"GIF89a......"), Err(Error::Format(_))));
        assert!(matches!(decode_image(b"\x89PNG\r\n\x1a\nbroken"), Err(Error::Format(_))));
        assert!(matches!(load_image("/nonexistent/x.png"), Err(Error::Io { .. })));
    }

    #[test]
    fn overlay_empty_is_identity() {
        let base = ImageTensor::filled(8, 8, 3, 0.25);
        assert_eq!(render_overlay(&base, &[], &OverlayStyle::default()).unwrap(), base);
    }

    #[test]
    fn overlay_thin_square_changes_border_only() {
        let base = ImageTensor::filled(10, 10, 3, 1.0);
        let style = OverlayStyle {
            line_width: 1,
            ..OverlayStyle::default()
        };
        let out = render_overlay(&base, &[square_region(3, 3, 4)], &style).unwrap();
        let mut changed = 0;
        for y in 0..10 {
            for x in 0..10 {
                if out.pixel(y, x) != base.pixel(y, x) {
                    changed += 1;
                    assert!((3..7).contains(&x) && (3..7).contains(&y));
                    assert_eq!(out.pixel(y, x), &[0.0, 1.0, 0.0]);
                }
            }
        }
        assert_eq!(changed, 12);
    }

    #[test]
    fn overlay_full_alpha_fills_interior() {
        let base = ImageTensor::filled(10, 10, 3, 1.0);
        let style = OverlayStyle {
            line_width: 1,
            fill_alpha: 1.0,
            contour_color: [1.0, 0.0, 0.0],
        };
        let out = render_overlay(&base, &[square_region(2, 2, 5)], &style).unwrap();
        assert_eq!(out.pixel(4, 4), &[1.0, 0.0, 0.0]);
        assert_eq!(out.pixel(0, 0), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn overlay_rejects_out_of_bounds() {
        let base = ImageTensor::filled(4, 4, 3, 1.0);
        let mut r = square_region(0, 0, 2);
        r.bbox = (0, 0, 8, 8);
        assert!(matches!(
            render_overlay(&base, &[r], &OverlayStyle::default()),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn pad_and_crop_roundtrip() {
        let data = (0..5 * 3).map(|i| i as f64 / 15.0).collect();
        let img = ImageTensor::new(5, 3, 1, data).unwrap();
        let padded = img.pad_to_even();
        assert_eq!((padded.height(), padded.width()), (6, 4));
        assert_eq!(padded.get(5, 3, 0), img.get(4, 2, 0));
        assert_eq!(padded.crop(5, 3).unwrap(), img);
    }

    proptest::proptest! {
        #[test]
        fn png_roundtrip_within_quantization(seed in 0u64..1000, h in 1usize..12, w in 1usize..12, rgb: bool) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let c = if rgb { 3 } else { 1 };
            let data = (0..h * w * c).map(|_| rng.gen::<f64>()).collect();
            let img = ImageTensor::new(h, w, c, data).unwrap();
            let back = decode_image(&encode_png(&img)).unwrap();
            proptest::prop_assert!(img.same_shape(&back));
            for (a, b) in img.data().iter().zip(back.data()) {
                proptest::prop_assert!((a - b).abs() <= 1.0 / 255.0);
            }
        }

        #[test]
        fn overlay_stays_inside_dilated_bboxes(x0 in 0usize..10, y0 in 0usize..10, side in 1usize..6, width in 1usize..4) {
            let base = ImageTensor::filled(16, 16, 3, 1.0);
            let style = OverlayStyle { line_width: width, ..OverlayStyle::default() };
            let out = render_overlay(&base, &[square_region(x0, y0, side)], &style).unwrap();
            for y in 0..16 {
                for x in 0..16 {
                    if out.pixel(y, x) != base.pixel(y, x) {
                        let inside = x + width >= x0 && x < x0 + side + width && y + width >= y0 && y < y0 + side + width;
                        proptest::prop_assert!(inside);
                    }
                }
            }
        }
    }
}
