//! Central-difference checks of every op's adjoint.

use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..c * h * w).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(c, h, w, data).unwrap()
}

/// Checks d(loss)/d(inputs) where `build` maps input vars to a tensor and the
/// loss is `mse(build(..), target)`.
fn check_inputs(inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Var, tol: f64) {
    let store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let eval = |ins: &[Tensor], target: Option<&Tensor>| -> (f64, Tensor, Vec<Option<Tensor>>) {
        let mut tape = Tape::new(&store);
        let vars: Vec<Var> = ins.iter().map(|t| tape.input(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let out_val = tape.value(out).clone();
        let target = target.cloned().unwrap_or_else(|| out_val.map(|_| 0.0));
        let loss = tape.mse(out, &target);
        let grads = tape.backward(loss);
        let gs = vars.iter().map(|v| grads.of(*v).cloned()).collect();
        (tape.scalar(loss), out_val, gs)
    };
    let (_, out0, _) = eval(&inputs, None);
    let target = random(&mut rng, out0.c, out0.h, out0.w, -1.0, 1.0);
    let (_, _, analytic) = eval(&inputs, Some(&target));
    let h = 1e-6;
    for (i, inp) in inputs.iter().enumerate() {
        let ga = analytic[i].clone().unwrap_or_else(|| inp.map(|_| 0.0));
        for j in 0..inp.len() {
            let mut plus = inputs.clone();
            plus[i].data[j] += h;
            let mut minus = inputs.clone();
            minus[i].data[j] -= h;
            let fd = (eval(&plus, Some(&target)).0 - eval(&minus, Some(&target)).0) / (2.0 * h);
            let err = (fd - ga.data[j]).abs() / (fd.abs() + ga.data[j].abs()).max(1e-2);
            assert!(err < tol, "input {i} elem {j}: analytic {} vs fd {fd}", ga.data[j]);
        }
    }
}

#[test]
fn conv_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in [1usize, 3] {
        let x = random(&mut rng, 2, 4, 5, -1.0, 1.0);
        let w = random(&mut rng, 3, 2, k * k, -0.5, 0.5);
        let b = random(&mut rng, 3, 1, 1, -0.5, 0.5);
        check_inputs(vec![x, w, b], |t, v| t.conv(v[0], v[1], v[2]), 1e-6);
    }
}

#[test]
fn elementwise_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random(&mut rng, 2, 3, 3, 0.1, 1.0);
    let b = random(&mut rng, 2, 3, 3, -1.0, -0.1);
    check_inputs(vec![a.clone(), b.clone()], |t, v| t.add(v[0], v[1]), 1e-6);
    check_inputs(vec![a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]), 1e-6);
    check_inputs(vec![a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]), 1e-6);
    check_inputs(vec![a.clone()], |t, v| t.affine(v[0], -1.7, 0.3), 1e-6);
    check_inputs(vec![a.clone()], |t, v| t.sigmoid(v[0]), 1e-6);
    check_inputs(vec![b.clone()], |t, v| t.exp(v[0]), 1e-6);
    check_inputs(vec![b.clone()], |t, v| t.leaky_relu(v[0], 0.2), 1e-6);
    check_inputs(vec![a.clone()], |t, v| t.leaky_relu(v[0], 0.2), 1e-6);
    check_inputs(vec![a.clone(), b], |t, v| t.weighted_sum(&[(v[0], 0.5), (v[1], -2.0)]), 1e-6);
    let mixed = random(&mut rng, 1, 4, 4, -0.5, 1.5);
    let away_from_edges = mixed.map(|v| if (v.abs() < 0.05) || ((v - 1.0).abs() < 0.05) { 0.5 } else { v });
    check_inputs(vec![away_from_edges], |t, v| t.clamp01(v[0]), 1e-6);
}

#[test]
fn structural_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&mut rng, 2, 4, 4, -1.0, 1.0);
    let b = random(&mut rng, 1, 4, 4, -1.0, 1.0);
    check_inputs(vec![a.clone(), b], |t, v| t.concat(&[v[0], v[1]]), 1e-6);
    check_inputs(vec![a.clone()], |t, v| t.dwt(v[0]), 1e-6);
    let sub = random(&mut rng, 8, 2, 3, -1.0, 1.0);
    check_inputs(vec![sub], |t, v| t.idwt(v[0]), 1e-6);
    check_inputs(vec![a.clone()], |t, v| t.avg_pool(v[0]), 1e-6);
    let logits = random(&mut rng, 3, 1, 1, -2.0, 2.0);
    check_inputs(vec![logits], |t, v| t.softmax(v[0]), 1e-6);
    let vec3 = random(&mut rng, 3, 1, 1, -1.0, 1.0);
    check_inputs(vec![vec3], |t, v| t.broadcast(v[0], 2, 3), 1e-6);
}

#[test]
fn mix_and_attention_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = random(&mut rng, 3, 1, 1, 0.0, 1.0);
    let p: Vec<Tensor> = (0..3).map(|_| random(&mut rng, 4, 1, 1, -1.0, 1.0)).collect();
    check_inputs(
        vec![w, p[0].clone(), p[1].clone(), p[2].clone()],
        |t, v| t.mix(v[0], &[v[1], v[2], v[3]]),
        1e-6,
    );
    let q = random(&mut rng, 3, 3, 4, -1.0, 1.0);
    let k = random(&mut rng, 3, 3, 4, -1.0, 1.0);
    let v = random(&mut rng, 3, 3, 4, -1.0, 1.0);
    check_inputs(vec![q, k, v], |t, x| t.attention(x[0], x[1], x[2]), 1e-6);
}

#[test]
fn losses() {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let x = tape.input(Tensor::from_vec(1, 1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap());
    let target = Tensor::from_vec(1, 1, 4, vec![0.0, 0.0, 0.5, 0.5]).unwrap();
    let mse = tape.mse(x, &target);
    let l1 = tape.l1(x, &target);
    assert!((tape.scalar(mse) - (0.01 + 0.04 + 0.04 + 0.01) / 4.0).abs() < 1e-15);
    assert!((tape.scalar(l1) - 0.6 / 4.0).abs() < 1e-15);
    let g = tape.backward(l1);
    assert_eq!(g.of(x).unwrap().data, vec![0.25, 0.25, -0.25, -0.25]);
}

#[test]
fn straight_through_is_identity_backward() {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let x = tape.input(Tensor::from_vec(1, 1, 3, vec![0.1, 0.5, 0.9]).unwrap());
    let y = tape.straight_through(x, Tensor::from_vec(1, 1, 3, vec![0.0, 0.0, 1.0]).unwrap());
    assert_eq!(tape.value(y).data, vec![0.0, 0.0, 1.0]);
    let target = Tensor::zeros(1, 1, 3);
    let loss = tape.mse(y, &target);
    let g = tape.backward(loss);
    assert_eq!(g.of(x).unwrap(), g.of(y).unwrap());
}

#[test]
fn param_grads_accumulate_over_reuse() {
    let mut store = ParamStore::new();
    let id = store.add("p", Tensor::from_vec(1, 1, 1, vec![2.0]).unwrap());
    let mut tape = Tape::new(&store);
    let a = tape.param(id);
    let b = tape.param(id);
    let y = tape.mul(a, b);
    let loss = tape.weighted_sum(&[(y, 1.0)]);
    let g = tape.backward(loss);
    assert_eq!(g.param(id).unwrap().data, vec![4.0]);
}
