use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::posterior::{PosteriorEstimator, PROMPT_COUNT};
use super::subnet::Subnet;
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

/// Architecture hyper-parameters. Everything needed to rebuild the parameter
/// layout of a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnConfig {
    /// Image channels (1 or 3); each stream carries `4 ×` this many subbands.
    pub image_channels: usize,
    pub blocks: usize,
    /// Channels added by each dense-block layer.
    pub growth: usize,
    /// Bound on the log-scale: factors stay within `[e^-clamp, e^clamp]`.
    pub clamp: f64,
    pub pem_features: usize,
    pub pem_resblocks: usize,
    pub pem_attention: usize,
}

impl Default for InnConfig {
    fn default() -> Self {
        Self {
            image_channels: 3,
            blocks: 4,
            growth: 16,
            clamp: 2.0,
            pem_features: 16,
            pem_resblocks: 2,
            pem_attention: 1,
        }
    }
}

impl InnConfig {
    /// Desk-scale configuration used by the toy training run.
    pub fn toy() -> Self {
        Self {
            blocks: 2,
            growth: 8,
            pem_features: 12,
            ..Self::default()
        }
    }

    pub fn subband_channels(&self) -> usize {
        4 * self.image_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_channels != 1 && self.image_channels != 3 {
            return Err(Error::arg("image_channels must be 1 or 3"));
        }
        if self.blocks == 0 || self.growth == 0 || self.pem_features == 0 {
            return Err(Error::arg("blocks, growth and pem_features must be positive"));
        }
        if !(self.clamp.is_finite() && self.clamp > 0.0) {
            return Err(Error::arg("clamp must be a positive finite number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct CouplingBlock {
    phi: Subnet,
    eta: Subnet,
    rho: Subnet,
}

/// The revealed location map and the recovered cover.
#[derive(Debug, Clone)]
pub struct Revealed {
    pub map: ImageTensor,
    pub cover: ImageTensor,
}

/// Output of the posterior estimator.
#[derive(Debug, Clone)]
pub struct Posterior {
    /// Hidden-stream initialization, `4C × H/2 × W/2`.
    pub latent: Tensor,
    /// Degradation-prompt blend weights (softmax output).
    pub weights: [f64; PROMPT_COUNT],
}

/// Coupling blocks plus posterior estimator, with all weights in one store.
#[derive(Debug, Clone)]
pub struct InnModel {
    config: InnConfig,
    params: ParamStore,
    blocks: Vec<CouplingBlock>,
    pem: PosteriorEstimator,
}

/// Default initialization gain for hidden convolutions. Output layers of
/// every subnet start at zero so a fresh model is the identity coupling.
const INIT_GAIN: f64 = 0.5;

impl InnModel {
    /// Randomly initialized model; a fixed seed gives identical weights.
    pub fn new(config: InnConfig, seed: u64) -> Result<Self> {
        Self::build(config, seed, INIT_GAIN)
    }

    /// All parameters zero: every block is the identity.
    pub fn zeroed(config: InnConfig) -> Result<Self> {
        Self::build(config, 0, 0.0)
    }

    fn build(config: InnConfig, seed: u64, gain: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let ch = config.subband_channels();
        let blocks = (0..config.blocks)
            .map(|i| CouplingBlock {
                phi: Subnet::register(&mut params, &format!("block{i}.phi"), ch, config.growth, gain, &mut rng),
                eta: Subnet::register(&mut params, &format!("block{i}.eta"), ch, config.growth, gain, &mut rng),
                rho: Subnet::register(&mut params, &format!("block{i}.rho"), ch, config.growth, gain, &mut rng),
            })
            .collect();
        let pem = PosteriorEstimator::register(
            &mut params,
            ch,
            config.pem_features,
            config.pem_resblocks,
            config.pem_attention,
            gain,
            &mut rng,
        );
        Ok(Self {
            config,
            params,
            blocks,
            pem,
        })
    }

    pub fn config(&self) -> &InnConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Overwrites every parameter with small random values, including the
    /// zero-initialized output layers. Used for invertibility and gradient
    /// checks, which must hold for arbitrary weights.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for e in self.params.entries_mut() {
            let fan_in = (e.value.h * e.value.w).max(1) as f64;
            let std = scale / fan_in.sqrt();
            e.value
                .data
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-1.0..1.0) * std * 3f64.sqrt());
        }
    }

    fn log_scale(&self, tape: &mut Tape, block: &CouplingBlock, xc: Var, negate: bool) -> Var {
        let r = block.rho.forward(tape, xc);
        let s = tape.sigmoid(r);
        let c = self.config.clamp;
        // clamp·(2σ(r) − 1), optionally negated for the inverse direction
        if negate {
            tape.affine(s, -2.0 * c, c)
        } else {
            tape.affine(s, 2.0 * c, -c)
        }
    }

    /// One pass through all blocks in embedding order.
    pub(crate) fn forward_streams_on(&self, tape: &mut Tape, mut xc: Var, mut xl: Var) -> (Var, Var) {
        for block in &self.blocks {
            let shift_c = block.phi.forward(tape, xl);
            xc = tape.add(xc, shift_c);
            let log_s = self.log_scale(tape, block, xc, false);
            let scale = tape.exp(log_s);
            let scaled = tape.mul(xl, scale);
            let shift_l = block.eta.forward(tape, xc);
            xl = tape.add(scaled, shift_l);
        }
        (xc, xl)
    }

    /// Exact algebraic inverse of [`Self::forward_streams_on`].
    pub(crate) fn inverse_streams_on(&self, tape: &mut Tape, mut xc: Var, mut xl: Var) -> (Var, Var) {
        for block in self.blocks.iter().rev() {
            let shift_l = block.eta.forward(tape, xc);
            let centered = tape.sub(xl, shift_l);
            let log_inv = self.log_scale(tape, block, xc, true);
            let inv_scale = tape.exp(log_inv);
            xl = tape.mul(centered, inv_scale);
            let shift_c = block.phi.forward(tape, xl);
            xc = tape.sub(xc, shift_c);
        }
        (xc, xl)
    }

    pub(crate) fn posterior_on(&self, tape: &mut Tape, subbands: Var) -> (Var, Var) {
        let out = self.pem.forward(tape, subbands);
        (out.latent, out.weights)
    }

    fn check_stream(&self, t: &Tensor, what: &str) -> Result<()> {
        if t.c != self.config.subband_channels() {
            return Err(Error::shape(format!(
                "{what} has {} channels, model expects {}",
                t.c,
                self.config.subband_channels()
            )));
        }
        Ok(())
    }

    fn check_image(&self, img: &ImageTensor, what: &str) -> Result<()> {
        if img.channels() != self.config.image_channels {
            return Err(Error::shape(format!(
                "{what} has {} channels, model expects {}",
                img.channels(),
                self.config.image_channels
            )));
        }
        if !img.is_even_sized() {
            return Err(Error::shape(format!(
                "{what} is {}x{}, height and width must be even",
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }

    /// Embedding direction on subband streams, returning both outputs.
    pub fn forward_streams(&self, xc: &Tensor, xl: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_stream(xc, "cover stream")?;
        self.check_stream(xl, "map stream")?;
        if !xc.same_shape(xl) {
            return Err(Error::shape("cover and map streams differ in shape"));
        }
        let mut tape = Tape::new(&self.params);
        let (c, l) = (tape.input(xc.clone()), tape.input(xl.clone()));
        let (c, l) = self.forward_streams_on(&mut tape, c, l);
        Ok((tape.value(c).clone(), tape.value(l).clone()))
    }

    /// Revealing direction on subband streams with an explicit hidden-stream
    /// initialization (instead of the posterior estimate).
    pub fn inverse_streams(&self, xc: &Tensor, xl: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_stream(xc, "cover stream")?;
        self.check_stream(xl, "map stream")?;
        if !xc.same_shape(xl) {
            return Err(Error::shape("cover and map streams differ in shape"));
        }
        let mut tape = Tape::new(&self.params);
        let (c, l) = (tape.input(xc.clone()), tape.input(xl.clone()));
        let (c, l) = self.inverse_streams_on(&mut tape, c, l);
        Ok((tape.value(c).clone(), tape.value(l).clone()))
    }

    /// Hides `map` in `cover`, returning the protected image clamped to `[0, 1]`.
    pub fn embed(&self, cover: &ImageTensor, map: &ImageTensor) -> Result<ImageTensor> {
        self.check_image(cover, "cover")?;
        cover.check_same_shape(map)?;
        let mut tape = Tape::new(&self.params);
        let protected = self.embed_on(&mut tape, cover, map);
        tape.value(protected).to_image()
    }

    pub(crate) fn embed_on(&self, tape: &mut Tape, cover: &ImageTensor, map: &ImageTensor) -> Var {
        let c = tape.input(Tensor::from_image(cover));
        let l = tape.input(Tensor::from_image(map));
        let (c, l) = (tape.dwt(c), tape.dwt(l));
        let (c, _discarded) = self.forward_streams_on(tape, c, l);
        let img = tape.idwt(c);
        tape.clamp01(img)
    }

    /// Recovers `(map, cover)` from a received image.
    pub fn reveal(&self, received: &ImageTensor) -> Result<Revealed> {
        self.check_image(received, "received image")?;
        let mut tape = Tape::new(&self.params);
        let input = tape.input(Tensor::from_image(received));
        let (map, cover) = self.reveal_on(&mut tape, input);
        Ok(Revealed {
            map: tape.value(map).to_image()?,
            cover: tape.value(cover).to_image()?,
        })
    }

    /// Returns clamped `(map, cover)` vars.
    pub(crate) fn reveal_on(&self, tape: &mut Tape, received: Var) -> (Var, Var) {
        let (map, cover) = self.reveal_raw_on(tape, received);
        (tape.clamp01(map), tape.clamp01(cover))
    }

    /// Unclamped `(map, cover)` vars; training scores these so saturated
    /// outputs still receive gradient.
    pub(crate) fn reveal_raw_on(&self, tape: &mut Tape, received: Var) -> (Var, Var) {
        let xc = tape.dwt(received);
        let (latent, _) = self.posterior_on(tape, xc);
        let (c, l) = self.inverse_streams_on(tape, xc, latent);
        (tape.idwt(l), tape.idwt(c))
    }

    pub fn estimate_posterior(&self, received: &ImageTensor) -> Result<Posterior> {
        self.check_image(received, "received image")?;
        let mut tape = Tape::new(&self.params);
        let input = tape.input(Tensor::from_image(received));
        let sb = tape.dwt(input);
        let (latent, weights) = self.posterior_on(&mut tape, sb);
        let w = &tape.value(weights).data;
        Ok(Posterior {
            latent: tape.value(latent).clone(),
            weights: [w[0], w[1], w[2]],
        })
    }

    /// Largest multiplicative factor any coupling block applies to the given
    /// embedding, as `(min, max)` over all activations.
    pub fn scale_range(&self, cover: &ImageTensor, map: &ImageTensor) -> Result<(f64, f64)> {
        self.check_image(cover, "cover")?;
        cover.check_same_shape(map)?;
        let mut tape = Tape::new(&self.params);
        let c = tape.input(Tensor::from_image(cover));
        let l = tape.input(Tensor::from_image(map));
        let (mut xc, mut xl) = (tape.dwt(c), tape.dwt(l));
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for block in &self.blocks {
            let shift_c = block.phi.forward(&mut tape, xl);
            xc = tape.add(xc, shift_c);
            let log_s = self.log_scale(&mut tape, block, xc, false);
            let scale = tape.exp(log_s);
            for v in &tape.value(scale).data {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
            let scaled = tape.mul(xl, scale);
            let shift_l = block.eta.forward(&mut tape, xc);
            xl = tape.add(scaled, shift_l);
        }
        Ok((lo, hi))
    }
}
