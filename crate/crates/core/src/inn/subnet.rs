use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};

pub(crate) const LEAKY_SLOPE: f64 = 0.2;

/// Convolution parameters registered in a [`ParamStore`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvIds {
    pub w: ParamId,
    pub b: ParamId,
}

impl ConvIds {
    /// Registers a `cout × cin × k²` kernel. `gain = 0` yields a zero kernel.
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (cin * k * k) as f64;
        let mut w = Tensor::zeros(cout, cin, k * k);
        if gain > 0.0 {
            let normal = Normal::new(0.0, gain / fan_in.sqrt()).expect("finite std");
            w.data.iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        let w = store.add(format!("{name}.weight"), w);
        let b = store.add(format!("{name}.bias"), Tensor::zeros(cout, 1, 1));
        Self { w, b }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        tape.conv_p(x, self.w, self.b)
    }
}

/// Five 3×3 convolutions with dense connectivity, followed by a pointwise
/// channel-mixing layer: `out = d5 + W·lrelu(d5)`.
#[derive(Debug, Clone)]
pub(crate) struct Subnet {
    convs: Vec<ConvIds>,
    mix: ConvIds,
}

impl Subnet {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        growth: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut convs = Vec::with_capacity(5);
        for layer in 0..5 {
            let cin = channels + layer * growth;
            let (cout, g) = if layer == 4 { (channels, 0.0) } else { (growth, gain) };
            convs.push(ConvIds::register(
                store,
                &format!("{name}.conv{}", layer + 1),
                cin,
                cout,
                3,
                g,
                rng,
            ));
        }
        let mix = ConvIds::register(store, &format!("{name}.mix"), channels, channels, 1, gain, rng);
        Self { convs, mix }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut features = vec![x];
        for (i, conv) in self.convs.iter().enumerate() {
            let input = if features.len() == 1 {
                x
            } else {
                tape.concat(&features)
            };
            let y = conv.apply(tape, input);
            if i < 4 {
                let y = tape.leaky_relu(y, LEAKY_SLOPE);
                features.push(y);
            } else {
                let act = tape.leaky_relu(y, LEAKY_SLOPE);
                let mixed = self.mix.apply(tape, act);
                return tape.add(y, mixed);
            }
        }
        unreachable!("five layers always end in the mixing layer")
    }
}
