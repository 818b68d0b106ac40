//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::fuzz::{check_sequence, random_ops};
use common::{oracle_conv, oracle_dense, oracle_pool, random_graph, random_inputs, random_tensor, rng};
use oninfer_core::devsim::{dram_for, host_infer, Device};
use oninfer_core::graph::{count_operations, count_parameters, LayerKind, OpCountConvention, PoolSpec, Tensor};
use oninfer_core::interpret::{
    activation_forward, argmax_classify, concat_forward, conv2d_forward, conv3d_forward,
    dense_forward, pool_forward, run_graph, single_input, Activation,
};
use oninfer_core::modelfmt::{build_zoo_model, split_multi_esperta, WeightInit, ZooModelId};
use oninfer_core::plan::{
    check_backend_support, estimate_onchip_bytes, place_weights, BackendProfile, DeviceModel,
    Placement, Precision,
};
use oninfer_core::quantize::{calibrate, compare_outputs, quantize_graph, run_quantized, QuantParams};
use oninfer_core::report::{build_metrics_table, reference_records, shipped_reference, MetricsRow};
use oninfer_core::trace::{parse_power_trace, phase_energy, PowerTrace, Sample};
use rand::Rng;

type Outcome = Result<String, String>;

/// Top-1 agreement of int8 vs fp32 logistic_net under the fixed seeds below.
const FROZEN_TOP1_AGREEMENT: f64 = 1.0;

fn zoo(id: ZooModelId) -> oninfer_core::graph::Graph {
    build_zoo_model(id, &WeightInit::SeededUniform(2024)).unwrap()
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg.into()) }
}

fn within_time(started: Instant, limit: Duration) -> Result<(), String> {
    let t = started.elapsed();
    ensure(t < limit, format!("took {:.2?}, limit {:.0?}", t, limit))
}

fn parameter_counts() -> Outcome {
    let t = Instant::now();
    let mut notes = Vec::new();
    for id in ZooModelId::ALL {
        let g = build_zoo_model(id, &WeightInit::None).unwrap();
        let (expected, _) = id.reference_counts();
        let ours = count_parameters(&g);
        if id.is_exact_topology() {
            ensure(ours == expected, format!("{id}: {ours} != {expected}"))?;
        }
        notes.push(format!("{id}={ours}"));
    }
    within_time(t, Duration::from_secs(1))?;
    Ok(notes.join(" "))
}

fn op_count_equivalence() -> Outcome {
    let t = Instant::now();
    let conv = OpCountConvention::default();
    for id in ZooModelId::ALL {
        let g = zoo(id);
        let x = random_inputs(&g, &mut rng(1));
        let traced = run_graph(&g, &x, true).unwrap().trace.unwrap().total_ops();
        let counted = count_operations(&g, &conv).unwrap();
        ensure(traced == counted, format!("{id}: tally {traced} != count {counted}"))?;
    }
    for seed in 0..100 {
        let g = random_graph(seed);
        let traced = run_graph(&g, &random_inputs(&g, &mut rng(seed)), true)
            .unwrap()
            .trace
            .unwrap()
            .total_ops();
        let counted = count_operations(&g, &conv).unwrap();
        ensure(traced == counted, format!("random graph {seed}: {traced} != {counted}"))?;
    }
    within_time(t, Duration::from_secs(30))?;
    Ok("6 zoo models and 100 random graphs agree exactly".into())
}

fn metrics_rows() -> Vec<MetricsRow> {
    let refs = shipped_reference();
    build_metrics_table(&reference_records(&refs), &refs).unwrap()
}

fn label(r: &MetricsRow) -> String {
    format!("{}/{}", r.model, r.platform)
}

fn energy_reproduction() -> Outcome {
    let t = Instant::now();
    let rows = metrics_rows();
    ensure(rows.len() == 12, format!("{} rows", rows.len()))?;
    let mut worst = (0.0, String::new());
    for r in &rows {
        let c = r.energy_mj.as_ref().ok_or(format!("{}: no reference", label(r)))?;
        let limit = if r.model == "baseline_net" { 0.05 } else { 0.01 };
        ensure(c.deviation <= limit, format!("{}: {:.2}% > {:.0}%", label(r), c.deviation * 100.0, limit * 100.0))?;
        if c.deviation > worst.0 {
            worst = (c.deviation, label(r));
        }
    }
    within_time(t, Duration::from_secs(1))?;
    Ok(format!("worst {} at {:.2}%", worst.1, worst.0 * 100.0))
}

fn throughput_reproduction() -> Outcome {
    let t = Instant::now();
    let rows = metrics_rows();
    let mut failures = Vec::new();
    for r in &rows {
        let c = r.throughput_mops.as_ref().unwrap();
        if r.model == "vae_encoder" && r.platform == "cpu" {
            ensure(c.expected == 2_103.0, "VAE-CPU row must compare against 2,103 MOP/s")?;
        }
        if c.deviation > 0.05 {
            failures.push(format!("{} {:.3} vs {} ({:.1}%)", label(r), c.ours, c.expected, c.deviation * 100.0));
        }
    }
    within_time(t, Duration::from_secs(1))?;
    if failures.is_empty() {
        Ok("all 12 rows within 5% (VAE-CPU against 2,103)".into())
    } else {
        Err(failures.join("; "))
    }
}

fn speedup_reproduction() -> Outcome {
    let t = Instant::now();
    let mut failures = Vec::new();
    let mut n = 0;
    for r in metrics_rows() {
        if let Some(c) = &r.speedup {
            n += 1;
            if c.deviation > 0.02 {
                failures.push(format!("{} {:.4} vs {} ({:.1}%)", label(&r), c.ours, c.expected, c.deviation * 100.0));
            }
        }
    }
    within_time(t, Duration::from_secs(1))?;
    if failures.is_empty() {
        Ok(format!("{n} rows within 2%"))
    } else {
        Err(failures.join("; "))
    }
}

fn backend_verdicts() -> Outcome {
    use LayerKind::*;
    let dpu = BackendProfile::dpu_like();
    let hls = BackendProfile::hls_like();
    let expect: [(ZooModelId, &[LayerKind]); 6] = [
        (ZooModelId::VaeEncoder, &[]),
        (ZooModelId::CnetPlusScalar, &[]),
        (ZooModelId::MultiEsperta, &[Sigmoid, GreaterThan]),
        (ZooModelId::LogisticNet, &[MaxPool3D]),
        (ZooModelId::ReducedNet, &[Conv3D, MaxPool3D]),
        (ZooModelId::BaselineNet, &[Conv3D, MaxPool3D]),
    ];
    for (id, unsupported) in expect {
        let g = build_zoo_model(id, &WeightInit::None).unwrap();
        let v = check_backend_support(&g, &dpu);
        ensure(v.unsupported == unsupported, format!("{id}: dpu-like rejects {:?}", v.unsupported))?;
        ensure(v.supported == unsupported.is_empty(), format!("{id}: dpu-like verdict"))?;
        ensure(check_backend_support(&g, &hls).supported, format!("{id}: hls-like rejects"))?;
    }
    Ok("dpu-like accepts 2/6, hls-like accepts 6/6".into())
}

fn placement() -> Outcome {
    let d = DeviceModel::zcu104();
    let expect = [
        (ZooModelId::BaselineNet, Placement::ExternalDram),
        (ZooModelId::LogisticNet, Placement::OnChip),
        (ZooModelId::ReducedNet, Placement::OnChip),
        (ZooModelId::MultiEsperta, Placement::OnChip),
    ];
    for (id, want) in expect {
        let g = build_zoo_model(id, &WeightInit::None).unwrap();
        let p = place_weights(&g, Precision::Fp32, &d).unwrap();
        ensure(p.weights_placement() == want, format!("{id}: {}", p.weights_placement()))?;
    }
    let small = estimate_onchip_bytes(13, 0);
    ensure(small as f64 / 1024.0 == 58.5, format!("(13,0) = {small} B"))?;
    let dpu_mib = estimate_onchip_bytes(165, 92) as f64 / (1u64 << 20) as f64;
    let dev = (dpu_mib - 3.92).abs() / 3.92;
    ensure(dev <= 0.05, format!("(165,92) = {dpu_mib:.4} MiB, {:.1}% from 3.92", dev * 100.0))?;
    Ok(format!("(13,0) = 58.5 KiB; (165,92) = {dpu_mib:.4} MiB ({:.2}% from 3.92)", dev * 100.0))
}

fn interpreter_oracle() -> Outcome {
    let t = Instant::now();
    for seed in 0..50u64 {
        let mut r = rng(10_000 + seed);
        for rank in [2usize, 3] {
            let cin = r.random_range(1..=3);
            let cout = r.random_range(1..=3);
            let sp: Vec<usize> = (0..rank).map(|_| r.random_range(1..=8)).collect();
            let k: Vec<usize> = sp.iter().map(|&d| r.random_range(1..=d.min(3))).collect();
            let stride: Vec<usize> = (0..rank).map(|_| r.random_range(1..=2)).collect();
            let pad: Vec<usize> = k.iter().map(|&k| r.random_range(0..k)).collect();
            let xd = [&[cin][..], &sp].concat();
            let wd = [&[cout, cin][..], &k].concat();
            let x = random_tensor(&mut r, &xd);
            let w = random_tensor(&mut r, &wd);
            let b = random_tensor(&mut r, &[cout]);
            let f = if rank == 2 { conv2d_forward } else { conv3d_forward };
            let got = f(&x, &w, Some(&b), &stride, &pad).unwrap();
            let (want, _) = oracle_conv(x.as_f32().unwrap(), &xd, w.as_f32().unwrap(), &wd, b.as_f32(), &stride, &pad);
            ensure(got.as_f32().unwrap() == &want[..], format!("conv{rank}d seed {seed}"))?;

            let spec = PoolSpec { window: k.clone(), stride: stride.clone(), padding: pad.clone() };
            let got = pool_forward(&x, &spec, rank).unwrap();
            let (want, _) = oracle_pool(x.as_f32().unwrap(), &xd, &k, &stride, &pad);
            ensure(got.as_f32().unwrap() == &want[..], format!("pool{rank}d seed {seed}"))?;
        }
        let n = r.random_range(1..=512);
        let m = r.random_range(1..=8);
        let x = random_tensor(&mut r, &[n]);
        let w = random_tensor(&mut r, &[m, n]);
        let b = random_tensor(&mut r, &[m]);
        let got = dense_forward(&x, &w, Some(&b)).unwrap();
        let want = oracle_dense(x.as_f32().unwrap(), w.as_f32().unwrap(), b.as_f32(), m);
        ensure(got.as_f32().unwrap() == &want[..], format!("dense seed {seed}"))?;
    }
    within_time(t, Duration::from_secs(60))?;
    Ok("50 instances each of conv2d, conv3d, pool2d, pool3d, dense: zero difference".into())
}

fn argmax_and_split() -> Outcome {
    let mut r = rng(99);
    for i in 0..1000 {
        let n = r.random_range(1..=10);
        let logits: Vec<f32> = (0..n).map(|_| r.random_range(-6.0f32..6.0)).collect();
        let s = activation_forward(&Tensor::vector(&logits), Activation::Sigmoid).unwrap();
        ensure(argmax_classify(&logits) == argmax_classify(s.as_f32().unwrap()), format!("vector {i}"))?;
    }
    let g = zoo(ZooModelId::MultiEsperta);
    let branches = split_multi_esperta(&g);
    for i in 0..1000 {
        let x: Vec<f32> = (0..3).map(|_| r.random_range(-3.0f32..3.0)).collect();
        let joint = run_graph(&g, &single_input(&g, Tensor::vector(&x)), false).unwrap().outputs.remove(0);
        let parts: Vec<Tensor> = branches
            .iter()
            .map(|b| run_graph(b, &single_input(b, Tensor::vector(&x)), false).unwrap().outputs.remove(0))
            .collect();
        let refs: Vec<&Tensor> = parts.iter().collect();
        ensure(joint == concat_forward(&refs, 0).unwrap(), format!("esperta input {i}"))?;
    }
    Ok("1,000 logit vectors; 1,000 ESPERTA inputs".into())
}

fn logistic_agreement() -> f64 {
    let g = zoo(ZooModelId::LogisticNet);
    let mut r = rng(12);
    let calib: Vec<_> = (0..16).map(|_| random_inputs(&g, &mut r)).collect();
    let q = quantize_graph(&g, &calibrate(&g, &calib).unwrap()).unwrap();
    let eval: Vec<_> = (0..64).map(|_| random_inputs(&g, &mut r)).collect();
    let fp: Vec<_> = eval.iter().map(|x| run_graph(&g, x, false).unwrap().outputs).collect();
    let qt: Vec<_> = eval.iter().map(|x| run_quantized(&q, x).unwrap()).collect();
    compare_outputs(&fp, &qt).top1_agreement
}

fn quantizer_properties() -> Outcome {
    let mut r = rng(7);
    for i in 0..1000 {
        let n = r.random_range(1..=64);
        let spread = r.random_range(0.001f32..100.0);
        let v: Vec<f32> = (0..n).map(|_| r.random_range(-spread..spread)).collect();
        let lo = v.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        for p in [QuantParams::for_weights(&v), QuantParams::asymmetric(lo, hi)] {
            ensure(p.scale > 0.0, format!("tensor {i}: scale {}", p.scale))?;
            for &x in &v {
                let err = (p.dequantize_exact(p.quantize(x)) - x as f64).abs();
                ensure(err <= p.scale as f64 / 2.0 * (1.0 + 1e-6), format!("tensor {i}: error {err} > scale/2"))?;
            }
        }
    }
    for seed in 0..10 {
        let g = random_graph(seed);
        let mut r = rng(seed);
        let calib: Vec<_> = (0..4).map(|_| random_inputs(&g, &mut r)).collect();
        let q = quantize_graph(&g, &calibrate(&g, &calib).unwrap()).unwrap();
        ensure(q.edge_params.values().all(|p| p.scale > 0.0), "edge scale <= 0")?;
        ensure(q.weights.values().all(|w| w.params.scale > 0.0), "weight scale <= 0")?;
        let x = random_inputs(&g, &mut r);
        ensure(run_quantized(&q, &x).unwrap() == run_quantized(&q, &x).unwrap(), "nondeterministic")?;
    }
    let a = logistic_agreement();
    ensure(a == logistic_agreement(), "top-1 agreement differs between runs")?;
    ensure(a == FROZEN_TOP1_AGREEMENT, format!("top-1 agreement {a} != frozen {FROZEN_TOP1_AGREEMENT}"))?;
    Ok(format!("1,000 tensors within scale/2; logistic_net top-1 agreement {a}"))
}

fn devsim_differential() -> Outcome {
    let t = Instant::now();
    for id in ZooModelId::ALL {
        let g = zoo(id);
        let mut d = Device::new(&g, dram_for(&g).unwrap()).unwrap();
        let mut r = rng(500 + id as u64);
        for i in 0..100 {
            let x = random_inputs(&g, &mut r);
            let want = run_graph(&g, &x, false).unwrap().outputs;
            let got = host_infer(&mut d, &x).map_err(|e| format!("{id} input {i}: {e}"))?;
            ensure(got == want, format!("{id} input {i} differs"))?;
        }
    }
    let g = zoo(ZooModelId::MultiEsperta);
    let x = single_input(&g, Tensor::vector(&[0.3, -0.7, 1.1]));
    let want = run_graph(&g, &x, false).unwrap().outputs.remove(0);
    let mut r = rng(31337);
    for i in 0..100_000 {
        let len = r.random_range(1..=24);
        let ops = random_ops(&mut r, len);
        check_sequence(&g, want.as_f32().unwrap(), &ops).map_err(|e| format!("sequence {i}: {e}"))?;
    }
    Ok(format!("6 models x 100 inputs bit-identical; 100,000 MMIO sequences clean ({:.1?})", t.elapsed()))
}

fn compression_ratio() -> Outcome {
    let g = zoo(ZooModelId::VaeEncoder);
    let input: usize = g.inputs.iter().map(|i| i.shape.numel()).sum();
    let x = random_inputs(&g, &mut rng(3));
    let latent = run_graph(&g, &x, false).unwrap().outputs[0].len();
    ensure(input == 98_304 && latent == 6, format!("{input} / {latent}"))?;
    ensure(input / latent == 16_384 && input % latent == 0, "ratio")?;
    Ok("98,304 / 6 = 16,384".into())
}

fn trace_analysis() -> Outcome {
    let constant = phase_energy(&parse_power_trace(b"t_s,watts,phase\n0,2,a\n1,2,a\n2,2,a\n3,2,a\n").unwrap());
    ensure((constant.total_energy_j - 6.0).abs() <= 1e-9, format!("constant {}", constant.total_energy_j))?;
    let ramp = phase_energy(&parse_power_trace(b"0,0,r\n0.5,0.5,r\n1,1,r\n2,2,r\n").unwrap());
    ensure((ramp.total_energy_j - 2.0).abs() <= 1e-9, format!("ramp {}", ramp.total_energy_j))?;
    let mut r = rng(13);
    for i in 0..100 {
        let n = r.random_range(3..=60);
        let mut t = 0.0;
        let samples: Vec<Sample> = (0..n)
            .map(|_| {
                t += r.random_range(0.001..0.5);
                Sample { t, watts: r.random_range(0.0..8.0) }
            })
            .collect();
        let labels: Vec<String> = (0..n).map(|j| format!("p{}", j * 3 / n)).collect();
        let whole = phase_energy(&PowerTrace::from_labeled(samples.clone(), &labels));
        let k = r.random_range(1..n);
        let split: Vec<String> =
            labels.iter().enumerate().map(|(j, l)| if j >= k && *l == labels[k] { format!("{l}'") } else { l.clone() }).collect();
        let parts = phase_energy(&PowerTrace::from_labeled(samples, &split));
        let sum: f64 = parts.phases.iter().map(|p| p.energy_j).sum();
        ensure((sum - whole.total_energy_j).abs() <= 1e-9, format!("trace {i}: {sum} vs {}", whole.total_energy_j))?;
    }
    Ok("constant 6 J, ramp 2 J, 100 split traces additive".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("parameter counts", parameter_counts),
        ("op-count oracle equivalence", op_count_equivalence),
        ("energy per inference", energy_reproduction),
        ("throughput", throughput_reproduction),
        ("speedup", speedup_reproduction),
        ("backend support verdicts", backend_verdicts),
        ("weight placement and on-chip estimates", placement),
        ("interpreter vs brute-force oracle", interpreter_oracle),
        ("argmax invariance and ESPERTA split", argmax_and_split),
        ("quantizer properties", quantizer_properties),
        ("device simulator differential and fuzzing", devsim_differential),
        ("VAE compression ratio", compression_ratio),
        ("power trace analysis", trace_analysis),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
