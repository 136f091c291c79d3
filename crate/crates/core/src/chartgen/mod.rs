//! Synthetic charts and programmatic tampering with exact ground truth.

mod corpus;
pub mod raster;
mod recipes;
mod tamper;

pub use corpus::{
    gen_corpus, load_manifest, write_corpus, Corpus, CorpusConfig, CorpusItem, Manifest, ManifestItem,
};
pub use raster::{Rect, Rgb};
pub use tamper::{apply_tamper, diff_mask, TamperKind, TamperOp};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use raster::{draw_line, fill_circle, fill_rect, pseudo_text};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    Bar,
    Line,
    Scatter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub kind: ChartKind,
    pub series: Vec<Series>,
    pub palette: Vec<Rgb>,
    /// `(height, width)`.
    pub size: (usize, usize),
    /// Varies text strokes.
    pub seed: u64,
}

const fn rgb8(r: u8, g: u8, b: u8) -> Rgb {
    [r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0]
}

pub const WHITE: Rgb = rgb8(255, 255, 255);
pub const INK: Rgb = rgb8(51, 51, 51);
pub const FRAME: Rgb = rgb8(153, 153, 153);
pub const LOGO: Rgb = rgb8(20, 40, 110);

/// Series colors; no pure green, which is reserved for overlays.
pub const PALETTE: [Rgb; 6] = [
    rgb8(31, 119, 180),
    rgb8(255, 127, 14),
    rgb8(214, 39, 40),
    rgb8(148, 103, 189),
    rgb8(140, 86, 75),
    rgb8(227, 119, 194),
];

impl ChartSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.size;
        if h % 2 != 0 || w % 2 != 0 || h < 32 || w < 32 {
            return Err(Error::arg(format!("chart size {h}x{w} must be even and at least 32x32")));
        }
        if self.series.is_empty() {
            return Err(Error::arg("chart needs at least one series"));
        }
        if self.palette.is_empty() {
            return Err(Error::arg("chart palette is empty"));
        }
        let n = self.series[0].values.len();
        for s in &self.series {
            if s.values.is_empty() {
                return Err(Error::arg(format!("series `{}` has no values", s.label)));
            }
            if s.values.len() != n {
                return Err(Error::arg("all series must have the same number of values"));
            }
            if s.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::arg(format!("series `{}` has negative or non-finite values", s.label)));
            }
        }
        if self.series.iter().flat_map(|s| &s.values).all(|v| *v == 0.0) {
            return Err(Error::arg("chart values are all zero"));
        }
        Ok(())
    }

    /// A random chart: 1–3 series over 3–6 categories.
    pub fn random(seed: u64, height: usize, width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kind = [ChartKind::Bar, ChartKind::Line, ChartKind::Scatter][rng.gen_range(0..3)];
        let n_series = rng.gen_range(1..=3);
        let n_values = rng.gen_range(3..=6);
        let offset = rng.gen_range(0..PALETTE.len());
        Self {
            kind,
            series: (0..n_series)
                .map(|s| Series {
                    label: format!("series {s}"),
                    values: (0..n_values).map(|_| rng.gen_range(0.15..1.0)).collect(),
                })
                .collect(),
            palette: (0..n_series).map(|s| PALETTE[(offset + s) % PALETTE.len()]).collect(),
            size: (height, width),
            seed: rng.gen(),
        }
    }

    fn color(&self, s: usize) -> Rgb {
        self.palette[s % self.palette.len()]
    }
}

/// One drawn data mark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mark {
    pub series: usize,
    pub index: usize,
    pub rect: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendLayout {
    pub frame: Rect,
    pub swatches: Vec<Rect>,
    pub texts: Vec<Rect>,
}

/// Where everything was drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartLayout {
    pub plot: Rect,
    pub marks: Vec<Mark>,
    pub data_labels: Vec<Rect>,
    pub tick_labels: Vec<Rect>,
    pub legend: LegendLayout,
    pub logo: Rect,
    pub title: Rect,
}

fn frac(v: usize, f: f64) -> usize {
    (v as f64 * f).round() as usize
}

/// Renders on a white background; identical specs give identical rasters.
pub fn render_chart(spec: &ChartSpec) -> Result<(ImageTensor, ChartLayout)> {
    spec.validate()?;
    let (h, w) = spec.size;
    let mut img = ImageTensor::filled(h, w, 3, 1.0);
    let text_h = (h / 32).max(2);
    let plot = Rect::new(frac(w, 0.12), frac(h, 0.14), frac(w, 0.78), frac(h, 0.80));

    // axes
    fill_rect(&mut img, Rect::new(plot.x0 - 1, plot.y0, plot.x0, plot.y1 + 1), &INK);
    fill_rect(&mut img, Rect::new(plot.x0 - 1, plot.y1, plot.x1, plot.y1 + 1), &INK);
    for k in 0..3 {
        let y = plot.y1 - (plot.height() * (k + 1)) / 3;
        fill_rect(&mut img, Rect::new(plot.x0 - 3, y, plot.x0 - 1, y + 1), &INK);
        let label = Rect::new(frac(w, 0.02), y.saturating_sub(text_h / 2), plot.x0 - 4, y.saturating_sub(text_h / 2) + text_h);
        pseudo_text(&mut img, label, spec.seed ^ (100 + k as u64), &INK);
    }

    let n = spec.series[0].values.len();
    let ns = spec.series.len();
    let vmax = spec.series.iter().flat_map(|s| &s.values).cloned().fold(0.0, f64::max);
    let slot = plot.width() as f64 / n as f64;
    let headroom = text_h + 2;
    let usable = (plot.height() - headroom - 1) as f64;
    let level = |v: f64| plot.y1 - ((v / vmax) * usable).round().max(1.0) as usize;

    let mut marks = Vec::new();
    let mut data_labels = Vec::new();
    let mut tick_labels = Vec::new();
    let tick_y = frac(h, 0.86);
    for i in 0..n {
        let x_center = plot.x0 as f64 + slot * (i as f64 + 0.5);
        let tw = ((slot * 0.6).round() as usize).max(3);
        let tx = (x_center - tw as f64 / 2.0).round() as usize;
        let tick = Rect::new(tx, tick_y, tx + tw, tick_y + text_h);
        pseudo_text(&mut img, tick, spec.seed ^ (200 + i as u64), &INK);
        tick_labels.push(tick);
    }
    let marker = (w / 64).max(1);
    for (s, series) in spec.series.iter().enumerate() {
        let color = spec.color(s);
        let mut prev: Option<(isize, isize)> = None;
        for (i, &v) in series.values.iter().enumerate() {
            let x_center = plot.x0 as f64 + slot * (i as f64 + 0.5);
            let top = level(v);
            let rect = match spec.kind {
                ChartKind::Bar => {
                    let group = slot * 0.75;
                    let bw = ((group / ns as f64).floor() as usize).max(1);
                    let x0 = (x_center - group / 2.0).round() as usize + s * bw;
                    Rect::new(x0, top, x0 + bw, plot.y1)
                }
                ChartKind::Line | ChartKind::Scatter => {
                    let cx = x_center.round() as isize;
                    let cy = top as isize;
                    if spec.kind == ChartKind::Line {
                        if let Some(p) = prev {
                            draw_line(&mut img, p, (cx, cy), 1, &color);
                        }
                        prev = Some((cx, cy));
                    }
                    let r = marker as isize;
                    Rect::new((cx - r) as usize, (cy - r) as usize, (cx + r + 1) as usize, (cy + r + 1) as usize)
                }
            };
            match spec.kind {
                ChartKind::Scatter => fill_circle(
                    &mut img,
                    ((rect.x0 + rect.x1) / 2) as isize,
                    ((rect.y0 + rect.y1) / 2) as isize,
                    marker as isize,
                    &color,
                ),
                _ => fill_rect(&mut img, rect, &color),
            }
            marks.push(Mark { series: s, index: i, rect });
            if s == 0 {
                let lw = rect.width().max(3);
                let lx = ((rect.x0 + rect.x1) / 2).saturating_sub(lw / 2);
                let label = Rect::new(lx, rect.y0 - 1 - text_h, lx + lw, rect.y0 - 1);
                pseudo_text(&mut img, label, spec.seed ^ (300 + i as u64), &INK);
                data_labels.push(label);
            }
        }
    }

    // legend on the right
    let sw = (w / 16).max(3);
    let row = sw + 2;
    let frame = Rect::new(frac(w, 0.81), plot.y0, frac(w, 0.97), plot.y0 + 2 + ns * row);
    let border = [
        Rect::new(frame.x0, frame.y0, frame.x1, frame.y0 + 1),
        Rect::new(frame.x0, frame.y1 - 1, frame.x1, frame.y1),
        Rect::new(frame.x0, frame.y0, frame.x0 + 1, frame.y1),
        Rect::new(frame.x1 - 1, frame.y0, frame.x1, frame.y1),
    ];
    border.into_iter().for_each(|r| fill_rect(&mut img, r, &FRAME));
    let mut swatches = Vec::new();
    let mut texts = Vec::new();
    for s in 0..ns {
        let y = frame.y0 + 2 + s * row;
        let swatch = Rect::new(frame.x0 + 2, y, frame.x0 + 2 + sw, y + sw);
        fill_rect(&mut img, swatch, &spec.color(s));
        let text = Rect::new(swatch.x1 + 1, y + (sw - text_h.min(sw)) / 2, frame.x1 - 2, y + (sw + text_h.min(sw)) / 2);
        pseudo_text(&mut img, text, spec.seed ^ (400 + s as u64), &INK);
        swatches.push(swatch);
        texts.push(text);
    }

    // logo top-left, title top-center
    let ls = (w / 10).max(6);
    let logo = Rect::new(frac(w, 0.02), frac(h, 0.02), frac(w, 0.02) + ls, frac(h, 0.02) + ls);
    fill_rect(&mut img, logo, &LOGO);
    let inner = ls / 3;
    fill_rect(
        &mut img,
        Rect::new(logo.x0 + inner, logo.y0 + inner, logo.x1 - inner, logo.y1 - inner),
        &WHITE,
    );
    let title = Rect::new(frac(w, 0.3), frac(h, 0.04), frac(w, 0.62), frac(h, 0.04) + text_h);
    pseudo_text(&mut img, title, spec.seed ^ 500, &INK);

    Ok((
        img,
        ChartLayout {
            plot,
            marks,
            data_labels,
            tick_labels,
            legend: LegendLayout { frame, swatches, texts },
            logo,
            title,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bar_spec(values: Vec<f64>) -> ChartSpec {
        ChartSpec {
            kind: ChartKind::Bar,
            series: vec![Series {
                label: "a".into(),
                values,
            }],
            palette: vec![PALETTE[0]],
            size: (64, 64),
            seed: 1,
        }
    }

    #[test]
    fn equal_values_equal_bars() {
        let (_, layout) = render_chart(&bar_spec(vec![0.5; 4])).unwrap();
        let heights: Vec<_> = layout.marks.iter().map(|m| m.rect.height()).collect();
        assert!(heights.iter().all(|h| *h == heights[0] && *h > 0));
    }

    #[test]
    fn deterministic() {
        for seed in 0..6 {
            let spec = ChartSpec::random(seed, 64, 64);
            assert_eq!(render_chart(&spec).unwrap(), render_chart(&spec).unwrap());
        }
    }

    #[test]
    fn degenerate_specs_rejected() {
        assert!(matches!(render_chart(&bar_spec(vec![])), Err(Error::Argument(_))));
        assert!(matches!(render_chart(&bar_spec(vec![f64::NAN])), Err(Error::Argument(_))));
        let mut odd = bar_spec(vec![1.0]);
        odd.size = (63, 64);
        assert!(matches!(render_chart(&odd), Err(Error::Argument(_))));
    }

    #[test]
    fn layout_respects_bands() {
        for seed in 0..20 {
            let spec = ChartSpec::random(seed, 128, 128);
            let (img, layout) = render_chart(&spec).unwrap();
            for t in &layout.tick_labels {
                assert!((t.y0 + t.y1) as f64 / 2.0 >= 0.85 * 128.0);
            }
            let f = layout.legend.frame;
            assert!((f.x0 + f.x1) as f64 / 2.0 >= 0.8 * 128.0);
            for m in &layout.marks {
                assert!(m.rect.fits(128, 128));
            }
            // no overlay green anywhere
            assert!(img.data().chunks(3).all(|p| !(p[0] < 0.02 && p[1] > 0.98 && p[2] < 0.02)));
        }
    }

    #[test]
    fn colors_survive_png() {
        let (img, _) = render_chart(&ChartSpec::random(3, 64, 64)).unwrap();
        let back = crate::imaging::decode_image(&crate::imaging::encode_png(&img)).unwrap();
        assert!(img.data().iter().zip(back.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
