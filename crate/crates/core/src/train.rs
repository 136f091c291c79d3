//! Optimization of the watermark network and finite-difference gradient checks.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::degrade::{apply_differentiable, Degradation};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::inn::{realize_location_map, save_checkpoint, InnModel, MapPattern};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Batches cycle through the entries in order; each batch gets a fresh seed.
    pub degradation_schedule: Vec<Degradation>,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    /// Share of training items that use a random location map instead of
    /// the target map.
    pub map_augment: f64,
    /// Round the protected image to 8 bits (straight-through) before the channel.
    pub quantize: bool,
    /// Share of each batch, rounded to whole items, whose protected image gets
    /// a random solid rectangle pasted before the channel. The map target
    /// inside the rectangle is `1 - map`.
    pub tamper_rate: f64,
    /// Global gradient-norm ceiling applied before each update; 0 disables it.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 100.0,
            beta: 1.0,
            learning_rate: 1e-4,
            iterations: 1000,
            batch_size: 4,
            seed: 0,
            degradation_schedule: default_schedule(),
            checkpoint_every: 0,
            map_augment: 0.0,
            quantize: true,
            tamper_rate: 0.5,
            grad_clip: 10.0,
        }
    }
}

/// No noise, mild Gaussian noise and high-quality JPEG.
pub fn default_schedule() -> Vec<Degradation> {
    vec![
        Degradation::none(),
        Degradation::gaussian(0.01, 0),
        Degradation::gaussian(0.02, 0),
        Degradation::gaussian(0.04, 0),
        Degradation::jpeg(95),
        Degradation::jpeg(90),
        Degradation::jpeg(80),
        Degradation::jpeg(70),
    ]
}

impl TrainConfig {
    /// Desk-scale settings used by the scripted toy run.
    pub fn toy() -> Self {
        Self {
            learning_rate: 1e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::arg(format!("loss weights must be positive (alpha={}, beta={})", self.alpha, self.beta)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg(format!("learning rate {} must be finite and non-negative", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.map_augment) {
            return Err(Error::arg(format!("map_augment {} outside [0, 1]", self.map_augment)));
        }
        if !(0.0..=1.0).contains(&self.tamper_rate) {
            return Err(Error::arg(format!("tamper_rate {} outside [0, 1]", self.tamper_rate)));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return Err(Error::arg(format!("grad_clip {} must be finite and non-negative", self.grad_clip)));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be positive"));
        }
        for d in &self.degradation_schedule {
            d.validate()?;
            if let crate::degrade::DegradationKind::Poisson { .. } = d.kind {
                return Err(Error::Unsupported("poisson noise in the training schedule".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// MSE between protected image and cover.
    pub enc: f64,
    /// L1 between revealed map and embedded map.
    pub ext: f64,
}

impl LossBreakdown {
    pub fn combine(enc: f64, ext: f64, alpha: f64, beta: f64) -> Self {
        Self {
            total: alpha * enc + beta * ext,
            enc,
            ext,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn loss_on(
    model: &InnModel,
    tape: &mut Tape,
    cover: &ImageTensor,
    map: &ImageTensor,
    deg: &Degradation,
    paste: Option<&Paste>,
    weights: (f64, f64),
    quantize: bool,
) -> Result<(Var, LossBreakdown)> {
    cover.check_same_shape(map)?;
    if cover.channels() != model.config().image_channels || !cover.is_even_sized() {
        return Err(Error::shape(format!(
            "cover is {}x{}x{}, model expects even size with {} channels",
            cover.height(),
            cover.width(),
            cover.channels(),
            model.config().image_channels
        )));
    }
    let protected = model.embed_on(tape, cover, map);
    let enc = tape.mse(protected, &Tensor::from_image(cover));
    let mut sent = protected;
    if quantize {
        let q = tape.value(protected).map(|v| (v * 255.0).round() / 255.0);
        sent = tape.straight_through(protected, q);
    }
    let mut target = Tensor::from_image(map);
    if let Some(p) = paste {
        let (keep, fill) = p.layers(cover.height(), cover.width(), cover.channels())?;
        let keep = tape.input(Tensor::from_image(&keep));
        let fill = tape.input(Tensor::from_image(&fill));
        let kept = tape.mul(sent, keep);
        sent = tape.add(kept, fill);
        target = Tensor::from_image(&p.flip_inside(map)?);
    }
    let received = apply_differentiable(tape, sent, deg)?;
    let (revealed, _) = model.reveal_raw_on(tape, received);
    let ext = tape.l1(revealed, &target);
    let total = tape.weighted_sum(&[(enc, weights.0), (ext, weights.1)]);
    let breakdown = LossBreakdown {
        total: tape.scalar(total),
        enc: tape.scalar(enc),
        ext: tape.scalar(ext),
    };
    Ok((total, breakdown))
}

/// Embeds, passes through `deg`, reveals, and scores both ends.
pub fn compute_loss(
    model: &InnModel,
    cover: &ImageTensor,
    map: &ImageTensor,
    deg: &Degradation,
    alpha: f64,
    beta: f64,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new(model.params());
    Ok(loss_on(model, &mut tape, cover, map, deg, None, (alpha, beta), false)?.1)
}

fn loss_and_grads(
    model: &InnModel,
    cover: &ImageTensor,
    map: &ImageTensor,
    deg: &Degradation,
    paste: Option<&Paste>,
    weights: (f64, f64),
    quantize: bool,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let mut tape = Tape::new(model.params());
    let (root, loss) = loss_on(model, &mut tape, cover, map, deg, paste, weights, quantize)?;
    let mut grads = model.params().zeros_like();
    tape.backward(root).accumulate_into(&mut grads, 1.0);
    Ok((loss, grads))
}

/// Adam moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update. Parameters are rounded to `f32` afterwards
    /// so a checkpoint reproduces the in-memory model exactly.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (((e, g), m), v) in params.entries_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, g), m), v) in e.value.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let step = lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                *p = (*p - step) as f32 as f64;
            }
        }
    }
}

/// One training item with the channel it passes through.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub cover: ImageTensor,
    pub map: ImageTensor,
    pub degradation: Degradation,
    pub paste: Option<Paste>,
}

/// Solid rectangle pasted over the protected image during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Paste {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
    pub color: [f64; 3],
}

impl Paste {
    /// Side lengths drawn from `[4, size / 2]`, color uniform per channel.
    pub fn random(rng: &mut impl Rng, height: usize, width: usize) -> Self {
        let ph = rng.gen_range(4.min(height)..=(height / 2).max(4).min(height));
        let pw = rng.gen_range(4.min(width)..=(width / 2).max(4).min(width));
        Self {
            y: rng.gen_range(0..=height - ph),
            x: rng.gen_range(0..=width - pw),
            height: ph,
            width: pw,
            color: [rng.gen(), rng.gen(), rng.gen()],
        }
    }

    fn inside(&self, y: usize, x: usize) -> bool {
        (self.y..self.y + self.height).contains(&y) && (self.x..self.x + self.width).contains(&x)
    }

    fn check(&self, height: usize, width: usize) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.y + self.height > height || self.x + self.width > width {
            return Err(Error::geometry(format!("paste {self:?} outside {height}x{width}")));
        }
        Ok(())
    }

    fn color_for(&self, channels: usize) -> Vec<f64> {
        if channels == 1 {
            vec![self.color.iter().sum::<f64>() / 3.0]
        } else {
            self.color.to_vec()
        }
    }

    /// `(keep, fill)` with `pasted = img ⊙ keep + fill`.
    fn layers(&self, height: usize, width: usize, channels: usize) -> Result<(ImageTensor, ImageTensor)> {
        self.check(height, width)?;
        let mut keep = ImageTensor::filled(height, width, channels, 1.0);
        let mut fill = ImageTensor::filled(height, width, channels, 0.0);
        let zero = vec![0.0; channels];
        let color = self.color_for(channels);
        for y in self.y..self.y + self.height {
            for x in self.x..self.x + self.width {
                keep.set_pixel(y, x, &zero);
                fill.set_pixel(y, x, &color);
            }
        }
        Ok((keep, fill))
    }

    /// Applies the paste to an image.
    pub fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        self.check(img.height(), img.width())?;
        let mut out = img.clone();
        let color = self.color_for(img.channels());
        for y in self.y..self.y + self.height {
            for x in self.x..self.x + self.width {
                out.set_pixel(y, x, &color);
            }
        }
        Ok(out)
    }

    /// The map with every value inside the rectangle replaced by `1 - v`.
    pub fn flip_inside(&self, map: &ImageTensor) -> Result<ImageTensor> {
        self.check(map.height(), map.width())?;
        let mut out = map.clone();
        for y in 0..map.height() {
            for x in 0..map.width() {
                if self.inside(y, x) {
                    let px: Vec<f64> = map.pixel(y, x).iter().map(|v| 1.0 - v).collect();
                    out.set_pixel(y, x, &px);
                }
            }
        }
        Ok(out)
    }
}

/// Mean batch loss, gradients summed in item order, then one Adam update.
/// A non-finite loss leaves the model untouched.
pub fn step(
    model: &mut InnModel,
    adam: &mut AdamState,
    batch: &[BatchItem],
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::arg("empty training batch"));
    }
    let mut acc = model.params().zeros_like();
    let (mut enc, mut ext) = (0.0, 0.0);
    let scale = 1.0 / batch.len() as f64;
    for item in batch {
        let (loss, grads) = loss_and_grads(
            model,
            &item.cover,
            &item.map,
            &item.degradation,
            item.paste.as_ref(),
            (cfg.alpha, cfg.beta),
            cfg.quantize,
        )?;
        enc += loss.enc * scale;
        ext += loss.ext * scale;
        for (a, g) in acc.iter_mut().zip(&grads) {
            a.data.iter_mut().zip(&g.data).for_each(|(x, y)| *x += scale * y);
        }
    }
    let loss = LossBreakdown::combine(enc, ext, cfg.alpha, cfg.beta);
    let finite_grads = acc.iter().all(|t| t.data.iter().all(|v| v.is_finite()));
    if !loss.total.is_finite() || !finite_grads {
        return Err(Error::Divergence {
            iteration: adam.steps() as usize,
            loss: loss.total,
        });
    }
    if cfg.grad_clip > 0.0 {
        let norm = acc.iter().flat_map(|t| &t.data).map(|v| v * v).sum::<f64>().sqrt();
        if norm > cfg.grad_clip {
            let s = cfg.grad_clip / norm;
            acc.iter_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v *= s));
        }
    }
    adam.update(model.params_mut(), &acc, cfg.learning_rate);
    Ok(loss)
}

/// Random map used for augmentation: a checkerboard, a grid of independently
/// colored cells, or a solid color. Colors use five levels per channel.
pub fn random_map(rng: &mut impl Rng, height: usize, width: usize, channels: usize) -> Result<ImageTensor> {
    let color = |rng: &mut dyn rand::RngCore| -> [f64; 3] { [0, 1, 2].map(|_| rng.gen_range(0..=4) as f64 / 4.0) };
    let cell = [2, 4, 8, 16][rng.gen_range(0..4)];
    let roll: f64 = rng.gen();
    if roll < 0.4 {
        let a = color(rng);
        let mut b = color(rng);
        if a == b {
            b = a.map(|v| 1.0 - v);
        }
        realize_location_map(&MapPattern::Checkerboard { cell, colors: [a, b] }, height, width, channels)
    } else if roll < 0.9 {
        let mut img = realize_location_map(&MapPattern::Solid { color: [0.0; 3] }, height, width, channels)?;
        let (cy, cx) = (height.div_ceil(cell), width.div_ceil(cell));
        let cells: Vec<[f64; 3]> = (0..cy * cx).map(|_| color(rng)).collect();
        for y in 0..height {
            for x in 0..width {
                let c = cells[(y / cell) * cx + x / cell];
                let px: Vec<f64> = if channels == 1 {
                    vec![c.iter().sum::<f64>() / 3.0]
                } else {
                    c.to_vec()
                };
                img.set_pixel(y, x, &px);
            }
        }
        Ok(img)
    } else {
        realize_location_map(&MapPattern::Solid { color: color(rng) }, height, width, channels)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub losses: Vec<LossBreakdown>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    /// Means of consecutive, non-overlapping windows of the total loss.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        self.losses
            .chunks(window.max(1))
            .map(|c| c.iter().map(|l| l.total).sum::<f64>() / c.len() as f64)
            .collect()
    }
}

pub fn log_line(iteration: usize, loss: &LossBreakdown) -> String {
    format!("{iteration} {:.9e} {:.9e} {:.9e}", loss.enc, loss.ext, loss.total)
}

/// Trains on `covers` for `cfg.iterations` batches. Every iteration appends
/// one log line. With `checkpoint_dir`, intermediate checkpoints are written
/// as `iter_NNNNNN.vzmk`, and on divergence the last good model is saved as
/// `last_good.vzmk` before the error is returned.
pub fn train(
    model: &mut InnModel,
    covers: &[ImageTensor],
    map: &MapPattern,
    cfg: &TrainConfig,
    log: &mut dyn Write,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if covers.is_empty() {
        return Err(Error::arg("no training images"));
    }
    let schedule = if cfg.degradation_schedule.is_empty() {
        vec![Degradation::none()]
    } else {
        cfg.degradation_schedule.clone()
    };
    let channels = model.config().image_channels;
    let mut targets: Vec<Option<ImageTensor>> = vec![None; covers.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.params());
    let mut report = TrainReport::default();
    let log_err = |e: std::io::Error| Error::io("training log", e);

    for it in 0..cfg.iterations {
        let mut deg = schedule[it % schedule.len()];
        deg.seed = rng.gen();
        let pasted = (cfg.tamper_rate * cfg.batch_size as f64).round() as usize;
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for slot_index in 0..cfg.batch_size {
            let idx = rng.gen_range(0..covers.len());
            let cover = &covers[idx];
            if cover.channels() != channels {
                return Err(Error::shape(format!("training image has {} channels, model expects {channels}", cover.channels())));
            }
            let augment = rng.gen_bool(cfg.map_augment);
            let map_img = if augment {
                random_map(&mut rng, cover.height(), cover.width(), channels)?
            } else {
                let slot = &mut targets[idx];
                if slot.is_none() {
                    *slot = Some(realize_location_map(map, cover.height(), cover.width(), channels)?);
                }
                slot.clone().expect("filled above")
            };
            let paste = (slot_index < pasted).then(|| Paste::random(&mut rng, cover.height(), cover.width()));
            batch.push(BatchItem {
                cover: cover.clone(),
                map: map_img,
                degradation: deg,
                paste,
            });
        }
        let loss = match step(model, &mut adam, &batch, cfg) {
            Ok(l) => l,
            Err(Error::Divergence { loss, .. }) => {
                if let Some(dir) = checkpoint_dir {
                    save_checkpoint(model, &dir.join("last_good.vzmk"))?;
                }
                return Err(Error::Divergence { iteration: it, loss });
            }
            Err(e) => return Err(e),
        };
        writeln!(log, "{}", log_line(it, &loss)).map_err(log_err)?;
        report.losses.push(loss);
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
                let path = dir.join(format!("iter_{:06}.vzmk", it + 1));
                save_checkpoint(model, &path)?;
                report.checkpoints.push(path);
            }
        }
    }
    log.flush().map_err(log_err)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub h: f64,
    /// Share of scalar parameters probed.
    pub fraction: f64,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-3,
            fraction: 0.05,
            seed: 0,
            alpha: 100.0,
            beta: 1.0,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Largest relative error per parameter tensor among probed entries.
    pub per_param: Vec<(String, f64)>,
    /// Probes that crossed a kink at the configured step and were retried
    /// with a smaller one.
    pub reduced_step: usize,
    /// Probes that crossed a kink at every step tried.
    pub kinked: usize,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Step reductions tried when a probe crosses a kink.
const KINK_RETRIES: usize = 2;

/// Compares `analytic` against central differences of `loss` on a random
/// subset of scalar parameters. `loss` returns the value and the tape's
/// [`Tape::branch_signature`]; when a probe's two evaluations leave the
/// linear pieces of the unperturbed point, the step is divided by 10 and
/// the probe repeated.
pub fn check_gradients(
    params: &ParamStore,
    analytic: &[Tensor],
    cfg: &GradcheckConfig,
    mut loss: impl FnMut(&ParamStore) -> Result<(f64, u64)>,
) -> Result<GradcheckReport> {
    let total = params.scalar_count();
    let mut flat: Vec<(usize, usize)> = params
        .entries()
        .iter()
        .enumerate()
        .flat_map(|(i, e)| (0..e.value.len()).map(move |j| (i, j)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    flat.shuffle(&mut rng);
    let k = ((total as f64 * cfg.fraction).ceil() as usize).clamp(1, total.max(1));
    flat.truncate(k);
    flat.sort_unstable();

    let (_, base_sig) = loss(params)?;
    let mut probe = params.clone();
    let mut per_param: Vec<(String, f64)> = Vec::new();
    let mut max_rel = 0.0f64;
    let (mut reduced, mut kinked) = (0, 0);
    for &(i, j) in &flat {
        let orig = probe.get(i).data[j];
        let mut h = cfg.h;
        let mut numeric = 0.0;
        for attempt in 0..=KINK_RETRIES {
            probe.get_mut(i).data[j] = orig + h;
            let (up, sig_up) = loss(&probe)?;
            probe.get_mut(i).data[j] = orig - h;
            let (down, sig_down) = loss(&probe)?;
            numeric = (up - down) / (2.0 * h);
            if sig_up == base_sig && sig_down == base_sig {
                if attempt > 0 {
                    reduced += 1;
                }
                break;
            }
            if attempt == KINK_RETRIES {
                kinked += 1;
            }
            h /= 10.0;
        }
        probe.get_mut(i).data[j] = orig;
        let rel = relative_error(analytic[i].data[j], numeric);
        max_rel = max_rel.max(rel);
        let name = &params.entries()[i].name;
        match per_param.last_mut() {
            Some((n, r)) if n == name => *r = r.max(rel),
            _ => per_param.push((name.clone(), rel)),
        }
    }
    Ok(GradcheckReport {
        checked: flat.len(),
        max_rel_error: max_rel,
        per_param,
        reduced_step: reduced,
        kinked,
        tolerance: cfg.tolerance,
    })
}

/// Largest model [`gradcheck`] accepts.
pub const GRADCHECK_MAX_PARAMS: usize = 5000;

/// Verifies the analytic gradient of the total loss (no channel).
pub fn gradcheck(model: &InnModel, cover: &ImageTensor, map: &ImageTensor, tolerance: f64) -> Result<GradcheckReport> {
    let cfg = GradcheckConfig {
        tolerance,
        ..GradcheckConfig::default()
    };
    gradcheck_with(model, cover, map, &cfg, &|_| {})
}

/// Like [`gradcheck`]; `corrupt` may alter the analytic gradients before
/// comparison, which negative-control tests use.
pub fn gradcheck_with(
    model: &InnModel,
    cover: &ImageTensor,
    map: &ImageTensor,
    cfg: &GradcheckConfig,
    corrupt: &dyn Fn(&mut [Tensor]),
) -> Result<GradcheckReport> {
    let n = model.params().scalar_count();
    if n > GRADCHECK_MAX_PARAMS {
        return Err(Error::arg(format!("gradcheck needs at most {GRADCHECK_MAX_PARAMS} parameters, model has {n}")));
    }
    let none = Degradation::none();
    let weights = (cfg.alpha, cfg.beta);
    let (_, mut grads) = loss_and_grads(model, cover, map, &none, None, weights, false)?;
    corrupt(&mut grads);
    let mut probe_model = model.clone();
    check_gradients(model.params(), &grads, cfg, |store| {
        probe_model.params_mut().clone_from(store);
        let mut tape = Tape::new(probe_model.params());
        let (_, l) = loss_on(&probe_model, &mut tape, cover, map, &none, None, weights, false)?;
        Ok((l.total, tape.branch_signature()))
    })
}
