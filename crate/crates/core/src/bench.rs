//! Host-side timing harness.
//!
//! fp32 runs go through the device simulator; only the start-to-done window
//! is timed, staging and output readback are not. int8 runs time the integer
//! pipeline directly. Power never comes from the host: it is supplied by the
//! caller or taken from a power trace.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::devsim::{dram_for, load_ip_input, read_ip_output, start_ip, Device, DevsimError, DriverConfig};
use crate::graph::{count_operations, Graph, GraphError, LayerKind, OpCountConvention, Tensor};
use crate::interpret::NamedTensors;
use crate::modelfmt::{
    build_zoo_model, load_weight_blob, parse_model_text, ModelError, WeightInit, ZooModelId,
};
use crate::plan::{
    check_backend_support, derive_metrics, BackendProfile, BenchRecord, DerivedMetrics, PlanError,
    Precision,
};
use crate::quantize::{calibrate, quantize_graph, run_quantized, QuantError};
use crate::trace::PhaseReport;

/// Inputs used for int8 calibration before timing starts.
pub const CALIBRATION_INPUTS: usize = 16;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot load model: {0}")]
    ModelLoad(String),
    #[error("backend {backend} does not support {kinds:?}")]
    UnsupportedBackend { backend: &'static str, kinds: Vec<LayerKind> },
    #[error("input count must be at least 1")]
    NoInputs,
    #[error(transparent)]
    Device(#[from] DevsimError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl From<ModelError> for BenchError {
    fn from(e: ModelError) -> Self {
        BenchError::ModelLoad(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Zoo(ZooModelId),
    Path { model: PathBuf, weights: Option<PathBuf> },
}

/// Loads a model with weights. Zoo models without a blob get seeded weights.
pub fn load_model(
    source: &ModelSource,
    weights: Option<&PathBuf>,
    seed: u64,
) -> Result<(String, Graph), BenchError> {
    let read = |p: &PathBuf| {
        std::fs::read(p).map_err(|e| BenchError::ModelLoad(format!("{}: {e}", p.display())))
    };
    match source {
        ModelSource::Zoo(id) => {
            let init = match weights {
                Some(p) => WeightInit::FromBlob(read(p)?),
                None => WeightInit::SeededUniform(seed),
            };
            Ok((id.name().to_string(), build_zoo_model(*id, &init)?))
        }
        ModelSource::Path { model, weights: own } => {
            let m = parse_model_text(&read(model)?)?;
            let g = match weights.or(own.as_ref()) {
                Some(p) => load_weight_blob(&read(p)?, &m.graph)?,
                None => m.graph,
            };
            Ok((m.name, g))
        }
    }
}

/// Default input count: 1000, with fewer for the heaviest model and more for the lightest.
pub fn default_input_count(id: Option<ZooModelId>) -> usize {
    match id {
        Some(ZooModelId::BaselineNet) => 10,
        Some(ZooModelId::MultiEsperta) => 1_000_000,
        _ => 1_000,
    }
}

/// Deterministic input stream: uniform in [-1, 1), one ChaCha8 stream per seed.
pub struct InputGen<'g> {
    graph: &'g Graph,
    rng: ChaCha8Rng,
}

impl<'g> InputGen<'g> {
    pub fn new(graph: &'g Graph, seed: u64) -> Self {
        InputGen { graph, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Iterator for InputGen<'_> {
    type Item = NamedTensors;

    fn next(&mut self) -> Option<NamedTensors> {
        let mut m = NamedTensors::new();
        for decl in &self.graph.inputs {
            let v = (0..decl.shape.numel()).map(|_| self.rng.random_range(-1.0f32..1.0)).collect();
            m.insert(decl.name.clone(), Tensor::from_f32(decl.shape.clone(), v).ok()?);
        }
        Some(m)
    }
}

pub fn seeded_inputs(g: &Graph, seed: u64, n: usize) -> Vec<NamedTensors> {
    InputGen::new(g, seed).take(n).collect()
}

/// FNV-1a 64 over output bit patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Checksum(u64);

impl Default for Checksum {
    fn default() -> Self {
        Checksum(0xcbf2_9ce4_8422_2325)
    }
}

impl Checksum {
    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn update_tensors(&mut self, ts: &[Tensor]) {
        for t in ts {
            for v in t.as_f32().unwrap_or_default() {
                self.update(&v.to_le_bytes());
            }
        }
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PowerSource {
    /// No power figure; energy comes out as zero.
    #[default]
    None,
    Supplied { p_mpsoc: f64, p_board: Option<f64> },
}

impl PowerSource {
    /// Mean power of a trace is used as the MPSoC figure.
    pub fn from_trace(r: &PhaseReport) -> Self {
        match r.mean_watts() {
            Some(p) => PowerSource::Supplied { p_mpsoc: p, p_board: None },
            None => PowerSource::None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub model_name: String,
    pub backend: Precision,
    pub inputs: usize,
    pub seed: u64,
    pub power: PowerSource,
    /// Replaces the measured FPS in the derived metrics.
    pub fps_override: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    pub model: String,
    pub backend: Precision,
    pub inputs: usize,
    /// Wall-clock, start-to-done only. Varies run to run.
    pub timed_seconds: f64,
    pub host_fps: f64,
    pub record: BenchRecord,
    pub metrics: DerivedMetrics,
    pub checksum: u64,
}

pub fn cmd_bench(g: &Graph, cfg: &BenchConfig) -> Result<BenchResult, BenchError> {
    if cfg.inputs == 0 {
        return Err(BenchError::NoInputs);
    }
    let mut sum = Checksum::default();
    let mut timed = Duration::ZERO;
    match cfg.backend {
        Precision::Fp32 => {
            let mut dev = Device::new(g, dram_for(g)?)?;
            let drv = DriverConfig::for_device(&dev);
            for x in InputGen::new(g, cfg.seed).take(cfg.inputs) {
                load_ip_input(&mut dev, &drv, &x)?;
                let t0 = Instant::now();
                start_ip(&mut dev, &drv)?;
                timed += t0.elapsed();
                sum.update_tensors(&read_ip_output(&mut dev, &drv)?);
            }
        }
        Precision::Int8 => {
            let dpu = BackendProfile::dpu_like();
            let verdict = check_backend_support(g, &dpu);
            if !verdict.supported {
                return Err(BenchError::UnsupportedBackend {
                    backend: dpu.name,
                    kinds: verdict.unsupported,
                });
            }
            let calib = seeded_inputs(g, cfg.seed ^ 0x5eed, CALIBRATION_INPUTS);
            let q = quantize_graph(g, &calibrate(g, &calib)?)?;
            for x in InputGen::new(g, cfg.seed).take(cfg.inputs) {
                let t0 = Instant::now();
                let out = run_quantized(&q, &x)?;
                timed += t0.elapsed();
                sum.update_tensors(&out);
            }
        }
    }
    let seconds = timed.as_secs_f64();
    let host_fps = if seconds > 0.0 { cfg.inputs as f64 / seconds } else { f64::INFINITY };
    let (p_mpsoc, p_board) = match cfg.power {
        PowerSource::None => (0.0, 0.0),
        PowerSource::Supplied { p_mpsoc, p_board } => (p_mpsoc, p_board.unwrap_or(0.0)),
    };
    let record = BenchRecord {
        fps: cfg.fps_override.unwrap_or(host_fps),
        p_board,
        p_mpsoc,
        op_count: count_operations(g, &OpCountConvention::default())?,
    };
    Ok(BenchResult {
        model: cfg.model_name.clone(),
        backend: cfg.backend,
        inputs: cfg.inputs,
        timed_seconds: seconds,
        host_fps,
        metrics: derive_metrics(&record, None)?,
        record,
        checksum: sum.value(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(name: &str, backend: Precision, n: usize) -> BenchConfig {
        BenchConfig {
            model_name: name.into(),
            backend,
            inputs: n,
            seed: 7,
            power: PowerSource::None,
            fps_override: None,
        }
    }

    #[test]
    fn fnv1a_reference_values() {
        assert_eq!(Checksum::default().value(), 0xcbf29ce484222325);
        let mut c = Checksum::default();
        c.update(b"a");
        assert_eq!(c.value(), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn checksum_is_deterministic() {
        let (name, g) = load_model(&ModelSource::Zoo(ZooModelId::MultiEsperta), None, 1).unwrap();
        let a = cmd_bench(&g, &cfg(&name, Precision::Fp32, 200)).unwrap();
        let b = cmd_bench(&g, &cfg(&name, Precision::Fp32, 200)).unwrap();
        assert_eq!(a.checksum, b.checksum);
        assert!(a.host_fps > 0.0);
    }

    #[test]
    fn forced_fps_and_power() {
        let (name, g) = load_model(&ModelSource::Zoo(ZooModelId::LogisticNet), None, 1).unwrap();
        let mut c = cfg(&name, Precision::Fp32, 2);
        c.power = PowerSource::Supplied { p_mpsoc: 1.75, p_board: Some(10.7) };
        c.fps_override = Some(646.0);
        let r = cmd_bench(&g, &c).unwrap();
        assert!((r.metrics.energy_mj() - 2.71).abs() < 0.005);
    }

    #[test]
    fn int8_needs_dpu_support() {
        let (name, g) = load_model(&ModelSource::Zoo(ZooModelId::MultiEsperta), None, 1).unwrap();
        match cmd_bench(&g, &cfg(&name, Precision::Int8, 1)) {
            Err(BenchError::UnsupportedBackend { kinds, .. }) => {
                assert_eq!(kinds, [LayerKind::Sigmoid, LayerKind::GreaterThan])
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(cmd_bench(&g, &cfg(&name, Precision::Fp32, 0)), Err(BenchError::NoInputs)));
    }

    #[test]
    fn default_counts() {
        assert_eq!(default_input_count(Some(ZooModelId::BaselineNet)), 10);
        assert_eq!(default_input_count(Some(ZooModelId::MultiEsperta)), 1_000_000);
        assert_eq!(default_input_count(None), 1_000);
    }
}
