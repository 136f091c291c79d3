use rand::Rng;

use super::subnet::{ConvIds, LEAKY_SLOPE};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};

pub(crate) const PROMPT_COUNT: usize = 3;

#[derive(Debug, Clone)]
struct ResBlock {
    a: ConvIds,
    b: ConvIds,
}

#[derive(Debug, Clone)]
struct AttentionBlock {
    q: ConvIds,
    k: ConvIds,
    v: ConvIds,
    proj: ConvIds,
}

/// Predicts the hidden-stream initialization from a received image:
/// local residual features, a non-local channel-attention refinement, and a
/// softmax-weighted blend of learnable degradation prompts.
#[derive(Debug, Clone)]
pub(crate) struct PosteriorEstimator {
    head: ConvIds,
    residual: Vec<ResBlock>,
    attention: Vec<AttentionBlock>,
    prompts: [ParamId; PROMPT_COUNT],
    fusion: ConvIds,
    projection: ConvIds,
}

pub(crate) struct PosteriorVars {
    pub latent: Var,
    pub weights: Var,
}

impl PosteriorEstimator {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        store: &mut ParamStore,
        subband_channels: usize,
        features: usize,
        resblocks: usize,
        attention_blocks: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let f = features;
        let head = ConvIds::register(store, "pem.head", subband_channels, f, 3, gain, rng);
        let residual = (0..resblocks)
            .map(|i| ResBlock {
                a: ConvIds::register(store, &format!("pem.res{i}.a"), f, f, 3, gain, rng),
                b: ConvIds::register(store, &format!("pem.res{i}.b"), f, f, 3, 0.0, rng),
            })
            .collect();
        let attention = (0..attention_blocks)
            .map(|i| AttentionBlock {
                q: ConvIds::register(store, &format!("pem.attn{i}.q"), f, f, 1, gain, rng),
                k: ConvIds::register(store, &format!("pem.attn{i}.k"), f, f, 1, gain, rng),
                v: ConvIds::register(store, &format!("pem.attn{i}.v"), f, f, 1, gain, rng),
                proj: ConvIds::register(store, &format!("pem.attn{i}.proj"), f, f, 1, 0.0, rng),
            })
            .collect();
        let prompts = std::array::from_fn(|k| {
            let data = (0..f).map(|_| gain * 0.1 * rng.gen_range(-1.0..1.0)).collect();
            store.add(
                format!("pem.prompt{}", k + 1),
                Tensor::from_vec(f, 1, 1, data).expect("prompt shape"),
            )
        });
        let fusion = ConvIds::register(store, "pem.fusion", f, PROMPT_COUNT, 1, gain, rng);
        let projection =
            ConvIds::register(store, "pem.projection", 2 * f, subband_channels, 3, 0.0, rng);
        Self {
            head,
            residual,
            attention,
            prompts,
            fusion,
            projection,
        }
    }

    /// `subbands` is the wavelet decomposition of the received image.
    pub fn forward(&self, tape: &mut Tape, subbands: Var) -> PosteriorVars {
        let mut x = self.head.apply(tape, subbands);
        for rb in &self.residual {
            let y = rb.a.apply(tape, x);
            let y = tape.leaky_relu(y, LEAKY_SLOPE);
            let y = rb.b.apply(tape, y);
            x = tape.add(x, y);
        }
        let local = x;
        let mut g = local;
        for ab in &self.attention {
            let q = ab.q.apply(tape, g);
            let k = ab.k.apply(tape, g);
            let v = ab.v.apply(tape, g);
            let a = tape.attention(q, k, v);
            let a = ab.proj.apply(tape, a);
            g = tape.add(g, a);
        }
        let features = if self.attention.is_empty() {
            local
        } else {
            tape.add(g, local)
        };
        let pooled = tape.avg_pool(features);
        let logits = self.fusion.apply(tape, pooled);
        let weights = tape.softmax(logits);
        let prompts: Vec<Var> = self.prompts.iter().map(|p| tape.param(*p)).collect();
        let prompt = tape.mix(weights, &prompts);
        let (h, w) = {
            let t = tape.value(features);
            (t.h, t.w)
        };
        let prompt = tape.broadcast(prompt, h, w);
        let fused = tape.concat(&[features, prompt]);
        let latent = self.projection.apply(tape, fused);
        PosteriorVars { latent, weights }
    }
}
