//! Minimal reverse-mode differentiation for the watermark network.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse applying the hand-derived adjoint of each op.
//! Parameters live in a [`ParamStore`] and are read by reference, so a tape
//! never copies weights.

mod conv;
mod tensor;

pub use tensor::Tensor;

use crate::wavelet;

pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
}

/// Ordered collection of named parameter tensors. Declaration order is the
/// serialization order of checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
        });
        self.entries.len() - 1
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id].value
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Zero-valued gradient buffers matching every parameter.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.entries
            .iter()
            .map(|e| Tensor::zeros(e.value.c, e.value.h, e.value.w))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Conv { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    LeakyRelu { x: Var, slope: f64 },
    Sigmoid(Var),
    Exp(Var),
    Concat(Vec<Var>),
    Dwt(Var),
    Idwt(Var),
    Clamp01(Var),
    AvgPool(Var),
    Softmax(Var),
    Mix { weights: Var, items: Vec<Var> },
    Broadcast(Var),
    Attention { q: Var, k: Var, v: Var, attn: Vec<f64>, scale: f64 },
    StraightThrough(Var),
    Mse { x: Var, target: Tensor },
    L1 { x: Var, target: Tensor },
    Sum(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// Records one forward computation.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params[id].as_ref()
    }

    /// Adds every parameter gradient, scaled, into `acc`.
    pub fn accumulate_into(&self, acc: &mut [Tensor], scale: f64) {
        for (a, g) in acc.iter_mut().zip(&self.params) {
            if let Some(g) = g {
                a.data
                    .iter_mut()
                    .zip(&g.data)
                    .for_each(|(x, y)| *x += scale * y);
            }
        }
    }
}

fn shape_check(a: &Tensor, b: &Tensor, op: &str) {
    assert!(
        a.same_shape(b),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn dwt_tensor(x: &Tensor) -> Tensor {
    let (c, h, w) = x.shape();
    let n = (h / 2) * (w / 2);
    let mut out = Tensor::zeros(4 * c, h / 2, w / 2);
    let mut tmp = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for ci in 0..c {
        let [ll, lh, hl, hh] = &mut tmp;
        wavelet::forward_plane(x.plane(ci), h, w, [ll, lh, hl, hh]);
        // subband-major channel order: [LL(0..c), LH(0..c), HL(0..c), HH(0..c)]
        for (b, band) in tmp.iter().enumerate() {
            out.data[(b * c + ci) * n..][..n].copy_from_slice(band);
        }
    }
    out
}

fn idwt_tensor(x: &Tensor) -> Tensor {
    let (c4, h2, w2) = x.shape();
    let c = c4 / 4;
    let n = h2 * w2;
    let mut out = Tensor::zeros(c, 2 * h2, 2 * w2);
    for ci in 0..c {
        let band = |b: usize| &x.data[(b * c + ci) * n..][..n];
        wavelet::inverse_plane(
            [band(0), band(1), band(2), band(3)],
            2 * h2,
            2 * w2,
            out.plane_mut(ci),
        );
    }
    out
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data[0]
    }

    /// Hash of every branch taken by piecewise-linear ops (leaky ReLU sign,
    /// clamp region, L1 sign). Two evaluations with equal signatures lie on
    /// the same linear piece of each such op.
    pub fn branch_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu { x, .. } => self.value(*x).data.iter().for_each(|v| (*v > 0.0).hash(&mut h)),
                Op::Clamp01(x) => self
                    .value(*x)
                    .data
                    .iter()
                    .for_each(|v| ((*v < 0.0) as u8 + 2 * (*v > 1.0) as u8).hash(&mut h)),
                Op::L1 { x, target } => self
                    .value(*x)
                    .data
                    .iter()
                    .zip(&target.data)
                    .for_each(|(a, b)| (a > b).hash(&mut h)),
                _ => {}
            }
        }
        h.finish()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Var) -> Var {
        let out = conv::forward(self.value(x), self.value(w), self.value(b));
        self.push(out, Op::Conv { x, w, b })
    }

    /// Convolution straight from parameter ids.
    pub fn conv_p(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let (w, b) = (self.param(w), self.param(b));
        self.conv(x, w, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        shape_check(ta, tb, "add");
        let out = ta.zip_map(tb, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        shape_check(ta, tb, "sub");
        let out = ta.zip_map(tb, |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        shape_check(ta, tb, "mul");
        let out = ta.zip_map(tb, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// `scale·x + offset`.
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + offset);
        self.push(out, Op::Affine { x, scale })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu { x, slope })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        self.push(out, Op::Exp(x))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let first = self.value(xs[0]);
        let (h, w) = (first.h, first.w);
        let c: usize = xs.iter().map(|v| self.value(*v).c).sum();
        let mut data = Vec::with_capacity(c * h * w);
        for v in xs {
            let t = self.value(*v);
            assert_eq!((t.h, t.w), (h, w), "concat: spatial mismatch");
            data.extend_from_slice(&t.data);
        }
        let out = Tensor { c, h, w, data };
        self.push(out, Op::Concat(xs.to_vec()))
    }

    /// Haar analysis: `c × h × w` to `4c × h/2 × w/2`, subband-major.
    pub fn dwt(&mut self, x: Var) -> Var {
        let t = self.value(x);
        assert!(t.h.is_multiple_of(2) && t.w.is_multiple_of(2), "dwt: odd spatial size");
        let out = dwt_tensor(t);
        self.push(out, Op::Dwt(x))
    }

    pub fn idwt(&mut self, x: Var) -> Var {
        let t = self.value(x);
        assert!(t.c.is_multiple_of(4), "idwt: channel count not a multiple of 4");
        let out = idwt_tensor(t);
        self.push(out, Op::Idwt(x))
    }

    pub fn clamp01(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.clamp(0.0, 1.0));
        self.push(out, Op::Clamp01(x))
    }

    /// Spatial mean per channel: `c × h × w` to `c × 1 × 1`.
    pub fn avg_pool(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.plane_len() as f64;
        let data = (0..t.c).map(|c| t.plane(c).iter().sum::<f64>() / n).collect();
        let out = Tensor {
            c: t.c,
            h: 1,
            w: 1,
            data,
        };
        self.push(out, Op::AvgPool(x))
    }

    /// Softmax across all entries of `x` (used on `k × 1 × 1` logits).
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = t.data.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let out = Tensor {
            data: e.iter().map(|v| v / s).collect(),
            ..*t
        };
        self.push(out, Op::Softmax(x))
    }

    /// `Σ_k weights[k] · items[k]`.
    pub fn mix(&mut self, weights: Var, items: &[Var]) -> Var {
        let wt = self.value(weights);
        assert_eq!(wt.len(), items.len(), "mix: weight count");
        let first = self.value(items[0]);
        let mut out = Tensor::zeros(first.c, first.h, first.w);
        for (k, it) in items.iter().enumerate() {
            let t = self.value(*it);
            shape_check(&out, t, "mix");
            let wk = wt.data[k];
            out.data
                .iter_mut()
                .zip(&t.data)
                .for_each(|(o, v)| *o += wk * v);
        }
        self.push(
            out,
            Op::Mix {
                weights,
                items: items.to_vec(),
            },
        )
    }

    /// Repeats a `c × 1 × 1` vector over an `h × w` grid.
    pub fn broadcast(&mut self, x: Var, h: usize, w: usize) -> Var {
        let t = self.value(x);
        assert_eq!((t.h, t.w), (1, 1), "broadcast: expects c x 1 x 1");
        let mut out = Tensor::zeros(t.c, h, w);
        for c in 0..t.c {
            let v = t.data[c];
            out.plane_mut(c).iter_mut().for_each(|o| *o = v);
        }
        self.push(out, Op::Broadcast(x))
    }

    /// Channel ("transposed") attention: `softmax_rows(Q·Kᵀ·s)·V` with
    /// `Q, K, V` viewed as `c × (h·w)` matrices and `s = 1/√(h·w)`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Var {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        shape_check(tq, tk, "attention");
        shape_check(tq, tv, "attention");
        let (c, n) = (tq.c, tq.plane_len());
        let scale = 1.0 / (n as f64).sqrt();
        let mut attn = vec![0.0; c * c];
        conv::gemm(
            c,
            n,
            c,
            &tq.data,
            (n as isize, 1),
            &tk.data,
            (1, n as isize),
            0.0,
            &mut attn,
        );
        for row in attn.chunks_exact_mut(c) {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b * scale));
            let mut s = 0.0;
            for r in row.iter_mut() {
                *r = (*r * scale - m).exp();
                s += *r;
            }
            row.iter_mut().for_each(|r| *r /= s);
        }
        let mut out = Tensor::zeros(tv.c, tv.h, tv.w);
        conv::gemm(
            c,
            c,
            n,
            &attn,
            (c as isize, 1),
            &tv.data,
            (n as isize, 1),
            0.0,
            &mut out.data,
        );
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                attn,
                scale,
            },
        )
    }

    /// Forward value is `replacement`; gradient passes to `x` unchanged.
    pub fn straight_through(&mut self, x: Var, replacement: Tensor) -> Var {
        shape_check(self.value(x), &replacement, "straight_through");
        self.push(replacement, Op::StraightThrough(x))
    }

    /// Mean squared error against a constant target; scalar output.
    pub fn mse(&mut self, x: Var, target: &Tensor) -> Var {
        let t = self.value(x);
        shape_check(t, target, "mse");
        let n = t.len() as f64;
        let v = t
            .data
            .iter()
            .zip(&target.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        self.push(
            Tensor {
                c: 1,
                h: 1,
                w: 1,
                data: vec![v],
            },
            Op::Mse {
                x,
                target: target.clone(),
            },
        )
    }

    /// Mean absolute error against a constant target; scalar output.
    pub fn l1(&mut self, x: Var, target: &Tensor) -> Var {
        let t = self.value(x);
        shape_check(t, target, "l1");
        let n = t.len() as f64;
        let v = t
            .data
            .iter()
            .zip(&target.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n;
        self.push(
            Tensor {
                c: 1,
                h: 1,
                w: 1,
                data: vec![v],
            },
            Op::L1 {
                x,
                target: target.clone(),
            },
        )
    }

    /// Weighted sum of same-shaped tensors.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let first = self.value(terms[0].0);
        let mut out = Tensor::zeros(first.c, first.h, first.w);
        for (v, wgt) in terms {
            let t = self.value(*v);
            shape_check(&out, t, "weighted_sum");
            out.data
                .iter_mut()
                .zip(&t.data)
                .for_each(|(o, x)| *o += wgt * x);
        }
        self.push(out, Op::Sum(terms.to_vec()))
    }

    /// Reverse sweep from a scalar `root` with seed gradient 1.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed = self.value(root).map(|_| 1.0);
        grads[root.0] = Some(seed);
        let mut params: Vec<Option<Tensor>> = (0..self.params.len()).map(|_| None).collect();

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &g, &mut grads, &mut params);
            grads[idx] = Some(g);
        }
        Gradients {
            nodes: grads,
            params,
        }
    }

    fn backward_node(
        &self,
        idx: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        params: &mut [Option<Tensor>],
    ) {
        let acc = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let zeros_for = |v: Var| {
            let t = self.value(v);
            Tensor::zeros(t.c, t.h, t.w)
        };
        match &self.nodes[idx].op {
            Op::Input => {}
            Op::Param(id) => match &mut params[*id] {
                Some(existing) => existing.add_assign(g),
                slot @ None => *slot = Some(g.clone()),
            },
            Op::Conv { x, w, b } => {
                let mut dx = zeros_for(*x);
                let mut dw = zeros_for(*w);
                let mut db = zeros_for(*b);
                conv::backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    Some(&mut dx),
                    Some(&mut dw),
                    Some(&mut db),
                );
                acc(grads, *x, dx);
                acc(grads, *w, dw);
                acc(grads, *b, db);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(grads, *a, g.zip_map(tb, |x, y| x * y));
                acc(grads, *b, g.zip_map(ta, |x, y| x * y));
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                acc(grads, *x, g.map(|v| s * v));
            }
            Op::LeakyRelu { x, slope } => {
                let s = *slope;
                let d = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { s * gv });
                acc(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[idx].value.as_ref().expect("sigmoid value");
                acc(grads, *x, g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv)));
            }
            Op::Exp(x) => {
                let y = self.nodes[idx].value.as_ref().expect("exp value");
                acc(grads, *x, g.zip_map(y, |gv, yv| gv * yv));
            }
            Op::Concat(xs) => {
                let mut offset = 0;
                for v in xs {
                    let t = self.value(*v);
                    let n = t.len();
                    let part = Tensor {
                        data: g.data[offset..offset + n].to_vec(),
                        ..*t
                    };
                    offset += n;
                    acc(grads, *v, part);
                }
            }
            // Both transforms are orthogonal and symmetric: the adjoint of
            // analysis is synthesis and vice versa.
            Op::Dwt(x) => acc(grads, *x, idwt_tensor(g)),
            Op::Idwt(x) => acc(grads, *x, dwt_tensor(g)),
            Op::Clamp01(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| {
                    if (0.0..=1.0).contains(&xv) {
                        gv
                    } else {
                        0.0
                    }
                });
                acc(grads, *x, d);
            }
            Op::AvgPool(x) => {
                let t = self.value(*x);
                let n = t.plane_len() as f64;
                let mut d = Tensor::zeros(t.c, t.h, t.w);
                for c in 0..t.c {
                    let gv = g.data[c] / n;
                    d.plane_mut(c).iter_mut().for_each(|v| *v = gv);
                }
                acc(grads, *x, d);
            }
            Op::Softmax(x) => {
                let y = self.nodes[idx].value.as_ref().expect("softmax value");
                let dot: f64 = g.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
                acc(grads, *x, g.zip_map(y, |gv, yv| yv * (gv - dot)));
            }
            Op::Mix { weights, items } => {
                let wt = self.value(*weights);
                let mut dw = zeros_for(*weights);
                for (k, it) in items.iter().enumerate() {
                    let t = self.value(*it);
                    dw.data[k] = g.data.iter().zip(&t.data).map(|(a, b)| a * b).sum();
                    let wk = wt.data[k];
                    acc(grads, *it, g.map(|v| wk * v));
                }
                acc(grads, *weights, dw);
            }
            Op::Broadcast(x) => {
                let mut d = zeros_for(*x);
                for c in 0..g.c {
                    d.data[c] = g.plane(c).iter().sum();
                }
                acc(grads, *x, d);
            }
            Op::Attention {
                q,
                k,
                v,
                attn,
                scale,
            } => {
                let (tq, tk, tv) = (self.value(*q), self.value(*k), self.value(*v));
                let (c, n) = (tq.c, tq.plane_len());
                // dV = Aᵀ·G
                let mut dv = zeros_for(*v);
                conv::gemm(c, c, n, attn, (1, c as isize), &g.data, (n as isize, 1), 0.0, &mut dv.data);
                // dA = G·Vᵀ
                let mut da = vec![0.0; c * c];
                conv::gemm(c, n, c, &g.data, (n as isize, 1), &tv.data, (1, n as isize), 0.0, &mut da);
                // dS = s · A ⊙ (dA − rowsum(dA ⊙ A))
                let mut ds = vec![0.0; c * c];
                for r in 0..c {
                    let row_a = &attn[r * c..(r + 1) * c];
                    let row_d = &da[r * c..(r + 1) * c];
                    let dot: f64 = row_a.iter().zip(row_d).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        ds[r * c + j] = scale * row_a[j] * (row_d[j] - dot);
                    }
                }
                // dQ = dS·K, dK = dSᵀ·Q
                let mut dq = zeros_for(*q);
                conv::gemm(c, c, n, &ds, (c as isize, 1), &tk.data, (n as isize, 1), 0.0, &mut dq.data);
                let mut dk = zeros_for(*k);
                conv::gemm(c, c, n, &ds, (1, c as isize), &tq.data, (n as isize, 1), 0.0, &mut dk.data);
                acc(grads, *q, dq);
                acc(grads, *k, dk);
                acc(grads, *v, dv);
            }
            Op::StraightThrough(x) => acc(grads, *x, g.clone()),
            Op::Mse { x, target } => {
                let t = self.value(*x);
                let k = 2.0 * g.data[0] / t.len() as f64;
                acc(grads, *x, t.zip_map(target, |a, b| k * (a - b)));
            }
            Op::L1 { x, target } => {
                let t = self.value(*x);
                let k = g.data[0] / t.len() as f64;
                let d = t.zip_map(target, |a, b| {
                    let diff = a - b;
                    if diff > 0.0 {
                        k
                    } else if diff < 0.0 {
                        -k
                    } else {
                        0.0
                    }
                });
                acc(grads, *x, d);
            }
            Op::Sum(terms) => {
                for (v, wgt) in terms {
                    let s = *wgt;
                    acc(grads, *v, g.map(|x| s * x));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;
