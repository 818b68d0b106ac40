//! Shared test helpers: a random small-graph generator and brute-force kernels
//! written independently of the interpreter.

#![allow(dead_code)]

pub mod fuzz;

use oninfer_core::graph::{ConvSpec, DenseSpec, Graph, LayerSpec, PoolSpec, Shape, Tensor};
use oninfer_core::interpret::NamedTensors;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| r.random_range(-1.0f32..1.0)).collect()
}

pub fn random_tensor(r: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let shape = Shape::new(dims.to_vec()).unwrap();
    let n = shape.numel();
    Tensor::from_f32(shape, random_vec(r, n)).unwrap()
}

pub fn random_inputs(g: &Graph, r: &mut ChaCha8Rng) -> NamedTensors {
    g.inputs
        .iter()
        .map(|i| (i.name.clone(), random_tensor(r, i.shape.dims())))
        .collect()
}

pub fn fill_weights(g: &mut Graph, r: &mut ChaCha8Rng) {
    for (name, shape) in g.weight_slots() {
        let t = random_tensor(r, shape.dims());
        g.weights.insert(name, t);
    }
}

struct Builder {
    g: Graph,
    n: usize,
}

impl Builder {
    fn add(&mut self, layer: LayerSpec, inputs: &[&str]) -> String {
        self.n += 1;
        let id = format!("n{}", self.n);
        self.g.add_node(id.clone(), layer, inputs.iter().copied());
        id
    }
}

fn out_len(len: usize, k: usize, s: usize, p: usize) -> usize {
    (len + 2 * p - k) / s + 1
}

fn activation(r: &mut ChaCha8Rng) -> LayerSpec {
    match r.random_range(0..4) {
        0 => LayerSpec::ReLU,
        1 => LayerSpec::LeakyReLU { alpha: 0.1 },
        2 => LayerSpec::Sigmoid,
        _ => LayerSpec::GreaterThan { theta: r.random_range(-0.5f32..0.5) },
    }
}

/// Random valid DAG: a spatial trunk (2-D or 3-D) with an optional parallel
/// branch joined by channel concat, then flatten and one or two dense heads.
/// Weights are filled from the same stream.
pub fn random_graph(seed: u64) -> Graph {
    let mut r = rng(seed);
    let rank = r.random_range(2..=3usize);
    let mut dims: Vec<usize> = (0..rank).map(|_| r.random_range(3..=7)).collect();
    let mut ch = r.random_range(1..=3usize);
    let mut b = Builder { g: Graph::new(), n: 0 };
    let mut input_dims = vec![ch];
    input_dims.extend(&dims);
    b.g.add_input("x", Shape::new(input_dims).unwrap());
    let mut cur = "x".to_string();

    for _ in 0..r.random_range(1..=4) {
        match r.random_range(0..4) {
            0 | 1 => {
                let k = r.random_range(1..=3usize).min(*dims.iter().min().unwrap());
                let s = r.random_range(1..=2usize);
                let p = r.random_range(0..k);
                let oc = r.random_range(1..=4usize);
                let spec = |cin: usize, oc: usize| ConvSpec {
                    in_channels: cin,
                    out_channels: oc,
                    kernel: vec![k; rank],
                    stride: vec![s; rank],
                    padding: vec![p; rank],
                    has_bias: true,
                };
                let wrap = |c: ConvSpec| if rank == 2 { LayerSpec::Conv2D(c) } else { LayerSpec::Conv3D(c) };
                let a = b.add(wrap(spec(ch, oc)), &[&cur]);
                if r.random_bool(0.3) {
                    let oc2 = r.random_range(1..=3usize);
                    let c = b.add(wrap(spec(ch, oc2)), &[&cur]);
                    cur = b.add(LayerSpec::Concat { axis: 0 }, &[&a, &c]);
                    ch = oc + oc2;
                } else {
                    cur = a;
                    ch = oc;
                }
                dims = dims.iter().map(|&d| out_len(d, k, s, p)).collect();
            }
            2 => {
                let w = r.random_range(1..=2usize).min(*dims.iter().min().unwrap());
                let s = r.random_range(1..=2usize);
                let p = if w > 1 { r.random_range(0..w) } else { 0 };
                let spec = PoolSpec { window: vec![w; rank], stride: vec![s; rank], padding: vec![p; rank] };
                let layer =
                    if rank == 2 { LayerSpec::MaxPool2D(spec) } else { LayerSpec::MaxPool3D(spec) };
                cur = b.add(layer, &[&cur]);
                dims = dims.iter().map(|&d| out_len(d, w, s, p)).collect();
            }
            _ => cur = b.add(activation(&mut r), &[&cur]),
        }
    }

    cur = b.add(LayerSpec::Flatten, &[&cur]);
    let mut features = ch * dims.iter().product::<usize>();
    let hidden = r.random_range(1..=6usize);
    let dense = |i, o, bias| LayerSpec::Dense(DenseSpec { in_features: i, out_features: o, has_bias: bias });
    let h = b.add(dense(features, hidden, r.random_bool(0.8)), &[&cur]);
    cur = b.add(activation(&mut r), &[&h]);
    features = hidden;
    if r.random_bool(0.4) {
        let a = b.add(dense(features, 2, true), &[&cur]);
        let c = b.add(dense(features, 1, false), &[&cur]);
        cur = b.add(LayerSpec::Concat { axis: 0 }, &[&a, &c]);
    }
    b.g.add_output(cur);
    let mut g = b.g;
    fill_weights(&mut g, &mut r);
    g
}

fn idx(dims: &[usize], at: &[usize]) -> usize {
    dims.iter().zip(at).fold(0, |acc, (d, i)| acc * d + i)
}

fn pad_copy(x: &[f32], dims: &[usize], pad: &[usize], fill: f32) -> (Vec<f32>, Vec<usize>) {
    let c = dims[0];
    let sp = &dims[1..];
    let mut pd = vec![c];
    pd.extend(sp.iter().zip(pad).map(|(d, p)| d + 2 * p));
    let mut out = vec![fill; pd.iter().product()];
    let n: usize = dims.iter().product();
    let mut at = vec![0; dims.len()];
    for (flat, v) in x.iter().enumerate().take(n) {
        let mut rem = flat;
        for a in (0..dims.len()).rev() {
            at[a] = rem % dims[a];
            rem /= dims[a];
        }
        let mut to = at.clone();
        for a in 1..dims.len() {
            to[a] += pad[a - 1];
        }
        out[idx(&pd, &to)] = *v;
    }
    (out, pd)
}

/// Enumerates every multi-index below `dims`, last axis fastest.
fn each_index(dims: &[usize]) -> Vec<Vec<usize>> {
    let mut all = vec![vec![]];
    for &d in dims {
        all = all
            .into_iter()
            .flat_map(|p| (0..d).map(move |i| [p.clone(), vec![i]].concat()))
            .collect();
    }
    all
}

/// Convolution by zero-padded copy. Sums run over (ic, kernel offsets) in
/// row-major order starting from 0, bias last.
pub fn oracle_conv(
    x: &[f32],
    xdims: &[usize],
    w: &[f32],
    wdims: &[usize],
    b: Option<&[f32]>,
    stride: &[usize],
    pad: &[usize],
) -> (Vec<f32>, Vec<usize>) {
    let (xp, pd) = pad_copy(x, xdims, pad, 0.0);
    let cout = wdims[0];
    let cin = wdims[1];
    let kdims = &wdims[2..];
    let odims: Vec<usize> = (0..kdims.len())
        .map(|a| (pd[a + 1] - kdims[a]) / stride[a] + 1)
        .collect();
    let mut full = vec![cout];
    full.extend(&odims);
    let mut out = Vec::new();
    for oc in 0..cout {
        for o in each_index(&odims) {
            let mut acc = 0.0f32;
            for ic in 0..cin {
                for k in each_index(kdims) {
                    let mut xi = vec![ic];
                    xi.extend(o.iter().zip(&k).zip(stride).map(|((o, k), s)| o * s + k));
                    let mut wi = vec![oc, ic];
                    wi.extend(&k);
                    acc += xp[idx(&pd, &xi)] * w[idx(wdims, &wi)];
                }
            }
            if let Some(b) = b {
                acc += b[oc];
            }
            out.push(acc);
        }
    }
    (out, full)
}

pub fn oracle_pool(
    x: &[f32],
    xdims: &[usize],
    window: &[usize],
    stride: &[usize],
    pad: &[usize],
) -> (Vec<f32>, Vec<usize>) {
    let (xp, pd) = pad_copy(x, xdims, pad, f32::NEG_INFINITY);
    let odims: Vec<usize> =
        (0..window.len()).map(|a| (pd[a + 1] - window[a]) / stride[a] + 1).collect();
    let mut full = vec![xdims[0]];
    full.extend(&odims);
    let mut out = Vec::new();
    for c in 0..xdims[0] {
        for o in each_index(&odims) {
            let mut best = f32::NEG_INFINITY;
            for k in each_index(window) {
                let mut xi = vec![c];
                xi.extend(o.iter().zip(&k).zip(stride).map(|((o, k), s)| o * s + k));
                best = best.max(xp[idx(&pd, &xi)]);
            }
            out.push(best);
        }
    }
    (out, full)
}

pub fn oracle_dense(x: &[f32], w: &[f32], b: Option<&[f32]>, out_features: usize) -> Vec<f32> {
    let n = x.len();
    (0..out_features)
        .map(|o| {
            let mut acc = 0.0f32;
            for i in 0..n {
                acc += w[o * n + i] * x[i];
            }
            acc + b.map_or(0.0, |b| b[o])
        })
        .collect()
}
