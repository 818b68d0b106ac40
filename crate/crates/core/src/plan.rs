//! Deployment planning for a ZCU104-class MPSoC: device budgets, backend
//! operator coverage, weight residency, and per-inference energy metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{count_parameters, infer_shapes, Graph, GraphError, LayerKind};

pub const BRAM36_BYTES: u64 = 4_608;
pub const URAM_BYTES: u64 = 36_864;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("invalid bench record: {0}")]
    InvalidRecord(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceModel {
    pub name: String,
    pub lut: u64,
    pub ff: u64,
    pub dsp: u64,
    pub bram36_blocks: u64,
    pub uram_blocks: u64,
    /// Metadata only; nothing here is cycle-accurate.
    pub clock_hz: u64,
}

impl DeviceModel {
    pub fn zcu104() -> Self {
        DeviceModel {
            name: "zcu104".into(),
            lut: 230_000,
            ff: 461_000,
            dsp: 1_728,
            bram36_blocks: 312,
            uram_blocks: 96,
            clock_hz: 100_000_000,
        }
    }

    pub fn bram_bytes(&self) -> u64 {
        self.bram36_blocks * BRAM36_BYTES
    }

    pub fn onchip_bytes(&self) -> u64 {
        estimate_onchip_bytes(self.bram36_blocks, self.uram_blocks)
    }

    pub fn is_valid(&self) -> bool {
        [self.lut, self.ff, self.dsp, self.bram36_blocks, self.uram_blocks, self.clock_hz]
            .iter()
            .all(|&v| v > 0)
    }
}

impl Default for DeviceModel {
    fn default() -> Self {
        DeviceModel::zcu104()
    }
}

/// `bram36 * 4,608 + uram * 36,864` bytes.
pub fn estimate_onchip_bytes(bram36: u64, uram: u64) -> u64 {
    bram36 * BRAM36_BYTES + uram * URAM_BYTES
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Fp32,
    Int8,
}

impl Precision {
    pub fn bytes(self) -> u64 {
        match self {
            Precision::Fp32 => 4,
            Precision::Int8 => 1,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Fp32 => "fp32",
            Precision::Int8 => "int8",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendProfile {
    pub name: &'static str,
    pub supported: BTreeSet<LayerKind>,
    pub precision: Precision,
}

impl BackendProfile {
    /// DPU-style CNN overlay: int8 only, no 3-D layers, sigmoid or comparisons.
    pub fn dpu_like() -> Self {
        BackendProfile {
            name: "dpu-like",
            supported: [
                LayerKind::Conv2D,
                LayerKind::MaxPool2D,
                LayerKind::ReLU,
                LayerKind::Dense,
                LayerKind::Concat,
                LayerKind::Flatten,
            ]
            .into(),
            precision: Precision::Int8,
        }
    }

    /// Custom HLS kernel: every layer kind, fp32.
    pub fn hls_like() -> Self {
        BackendProfile {
            name: "hls-like",
            supported: LayerKind::ALL.into(),
            precision: Precision::Fp32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportVerdict {
    pub supported: bool,
    /// Deduplicated and sorted.
    pub unsupported: Vec<LayerKind>,
}

pub fn check_backend_support(g: &Graph, b: &BackendProfile) -> SupportVerdict {
    let unsupported: Vec<LayerKind> =
        g.kinds().into_iter().filter(|k| !b.supported.contains(k)).collect();
    SupportVerdict { supported: unsupported.is_empty(), unsupported }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    OnChip,
    ExternalDram,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::OnChip => "on-chip",
            Placement::ExternalDram => "external-dram",
        })
    }
}

/// Where the accelerator leaves its results for the host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputPath {
    #[default]
    Dram,
    /// Small outputs only; read through the register window.
    Registers,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeploymentPlan {
    pub precision: Precision,
    pub placements: BTreeMap<String, Placement>,
    pub weight_bytes: u64,
    /// Two largest inter-layer tensors, which double-buffer between stages.
    pub buffer_bytes: u64,
    pub onchip_bytes: u64,
    pub capacity_bytes: u64,
    pub bram36_used: u64,
    /// False when even the activation buffers exceed on-chip capacity.
    pub fits: bool,
    pub unsupported: Vec<LayerKind>,
    pub output_path: OutputPath,
}

impl DeploymentPlan {
    /// Where the weights live; all tensors share one placement.
    pub fn weights_placement(&self) -> Placement {
        if self.placements.values().any(|p| *p == Placement::ExternalDram) {
            Placement::ExternalDram
        } else {
            Placement::OnChip
        }
    }
}

fn buffer_bytes(g: &Graph, precision: Precision) -> Result<u64, GraphError> {
    let mut sizes: Vec<u64> =
        infer_shapes(g)?.values().map(|s| s.numel() as u64 * precision.bytes()).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    Ok(sizes.iter().take(2).sum())
}

/// All-on-chip-or-spill weight residency against the BRAM-only budget.
pub fn place_weights(
    g: &Graph,
    precision: Precision,
    d: &DeviceModel,
) -> Result<DeploymentPlan, GraphError> {
    let weight_bytes = count_parameters(g) * precision.bytes();
    let buffer_bytes = buffer_bytes(g, precision)?;
    let capacity_bytes = d.bram_bytes();
    let on_chip = weight_bytes + buffer_bytes <= capacity_bytes;
    let placement = if on_chip { Placement::OnChip } else { Placement::ExternalDram };
    let placements = g.weight_slots().into_iter().map(|(n, _)| (n, placement)).collect();
    let onchip_bytes = if on_chip { weight_bytes + buffer_bytes } else { buffer_bytes };
    let unsupported = check_backend_support(g, &BackendProfile::hls_like()).unsupported;
    Ok(DeploymentPlan {
        precision,
        placements,
        weight_bytes,
        buffer_bytes,
        onchip_bytes,
        capacity_bytes,
        bram36_used: onchip_bytes.div_ceil(BRAM36_BYTES),
        fits: onchip_bytes <= capacity_bytes,
        unsupported,
        output_path: OutputPath::Dram,
    })
}

/// One measured (or published) operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub fps: f64,
    pub p_board: f64,
    pub p_mpsoc: f64,
    pub op_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedMetrics {
    /// Joules: `p_mpsoc * (1 / fps)`.
    pub energy_per_inference: f64,
    /// Millions of scalar ops per second.
    pub throughput_mops: f64,
    pub speedup: Option<f64>,
}

impl DerivedMetrics {
    pub fn energy_mj(&self) -> f64 {
        self.energy_per_inference * 1e3
    }
}

pub fn derive_metrics(
    r: &BenchRecord,
    baseline: Option<&BenchRecord>,
) -> Result<DerivedMetrics, PlanError> {
    if !(r.fps > 0.0 && r.fps.is_finite()) {
        return Err(PlanError::InvalidRecord(format!("fps must be positive, got {}", r.fps)));
    }
    if let Some(b) = baseline {
        if !(b.fps > 0.0) {
            return Err(PlanError::InvalidRecord(format!("baseline fps {}", b.fps)));
        }
    }
    Ok(DerivedMetrics {
        energy_per_inference: r.p_mpsoc / r.fps,
        throughput_mops: r.op_count as f64 * r.fps / 1e6,
        speedup: baseline.map(|b| r.fps / b.fps),
    })
}
