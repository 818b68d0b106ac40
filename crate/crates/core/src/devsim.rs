//! Software model of the memory-mapped accelerator and its host driver.
//!
//! Register map (32-bit registers, byte offsets):
//!
//! | offset      | name          | notes                                                      |
//! |-------------|---------------|------------------------------------------------------------|
//! | 0x00        | CTRL          | bit0 START (W1, self-clearing), bit1 DONE (clear on read), |
//! |             |               | bit2 IDLE (RO), bit7 AUTO_RESTART (RW)                     |
//! | 0x04        | GIER          | global interrupt enable, stored only                       |
//! | 0x08        | IP_IER        | bit0 done, bit1 error                                      |
//! | 0x0C        | IP_ISR        | bit0 done, bit1 error; write 1 to clear                    |
//! | 0x10 / 0x14 | INPUT_ADDR    | low / high word                                            |
//! | 0x18 / 0x1C | OUTPUT_ADDR   | low / high word                                            |
//! | 0x40..0x80  | OUTPUT_REGS   | read-only result words when the register output path is on |
//!
//! Inputs are fetched as little-endian fp32, graph inputs packed back to back in
//! declaration order. Outputs are written the same way, and only on completion.

use thiserror::Error;

use crate::graph::{infer_shapes, Graph, GraphError, OpCountConvention, Shape, Tensor};
use crate::interpret::{ExecError, Executor, NamedTensors};
use crate::plan::OutputPath;

pub const CTRL: u32 = 0x00;
pub const GIER: u32 = 0x04;
pub const IP_IER: u32 = 0x08;
pub const IP_ISR: u32 = 0x0C;
pub const INPUT_ADDR_LO: u32 = 0x10;
pub const INPUT_ADDR_HI: u32 = 0x14;
pub const OUTPUT_ADDR_LO: u32 = 0x18;
pub const OUTPUT_ADDR_HI: u32 = 0x1C;
pub const OUTPUT_REGS: u32 = 0x40;
pub const OUTPUT_REG_WORDS: usize = 16;

pub const CTRL_START: u32 = 1 << 0;
pub const CTRL_DONE: u32 = 1 << 1;
pub const CTRL_IDLE: u32 = 1 << 2;
pub const CTRL_AUTO_RESTART: u32 = 1 << 7;

pub const IRQ_DONE: u32 = 1 << 0;
pub const IRQ_ERROR: u32 = 1 << 1;

pub const DEFAULT_DRAM_BASE: u64 = 0x1000_0000;
pub const DEFAULT_POLL_BUDGET: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DevsimError {
    #[error("no register at offset {0:#x}")]
    UnmappedOffset(u32),
    #[error("register at offset {0:#x} is read-only")]
    ReadOnly(u32),
    #[error("DMA access of {len} bytes at {addr:#x} is outside simulated DRAM")]
    DmaOutOfBounds { addr: u64, len: usize },
    #[error("done bit not observed after {0} polls")]
    Timeout(u64),
    #[error("device is not idle")]
    Busy,
    #[error("outputs need {0} words, register window holds {OUTPUT_REG_WORDS}")]
    OutputTooLarge(usize),
    #[error("bad snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Byte-addressable memory shared by host and device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimDram {
    base: u64,
    bytes: Vec<u8>,
}

impl SimDram {
    pub fn new(base: u64, size: usize) -> Self {
        SimDram { base, bytes: vec![0; size] }
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn size(&self) -> usize {
        self.bytes.len()
    }

    fn range(&self, addr: u64, len: usize) -> Result<std::ops::Range<usize>, DevsimError> {
        let oob = DevsimError::DmaOutOfBounds { addr, len };
        let start = addr.checked_sub(self.base).ok_or(oob.clone())?;
        let start = usize::try_from(start).map_err(|_| oob.clone())?;
        let end = start.checked_add(len).ok_or(oob.clone())?;
        if end > self.bytes.len() {
            return Err(oob);
        }
        Ok(start..end)
    }

    pub fn read(&self, addr: u64, len: usize) -> Result<&[u8], DevsimError> {
        Ok(&self.bytes[self.range(addr, len)?])
    }

    pub fn write(&mut self, addr: u64, data: &[u8]) -> Result<(), DevsimError> {
        let r = self.range(addr, data.len())?;
        self.bytes[r].copy_from_slice(data);
        Ok(())
    }

    /// `u64 base, u64 size` (little-endian), then the raw bytes.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.bytes.len());
        out.extend_from_slice(&self.base.to_le_bytes());
        out.extend_from_slice(&(self.bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn from_snapshot(raw: &[u8]) -> Result<Self, DevsimError> {
        if raw.len() < 16 {
            return Err(DevsimError::Snapshot("header shorter than 16 bytes".into()));
        }
        let base = u64::from_le_bytes(raw[..8].try_into().expect("8 bytes"));
        let size = u64::from_le_bytes(raw[8..16].try_into().expect("8 bytes"));
        if raw.len() as u64 - 16 != size {
            return Err(DevsimError::Snapshot(format!(
                "header says {size} bytes, found {}",
                raw.len() - 16
            )));
        }
        Ok(SimDram { base, bytes: raw[16..].to_vec() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceState {
    Idle,
    /// `progress` counts nodes already executed in the current run.
    Running { progress: usize },
    DoneLatched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepBudget {
    Nodes(usize),
    RunToCompletion,
}

pub fn encode_f32(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

fn numel_total(shapes: &[Shape]) -> usize {
    shapes.iter().map(Shape::numel).sum()
}

pub struct Device<'g> {
    graph: &'g Graph,
    input_shapes: Vec<Shape>,
    output_shapes: Vec<Shape>,
    output_path: OutputPath,
    pub dram: SimDram,
    state: DeviceState,
    exec: Option<Executor<'g>>,
    done: bool,
    auto_restart: bool,
    gier: u32,
    ier: u32,
    isr: u32,
    input_addr: [u32; 2],
    output_addr: [u32; 2],
    output_regs: [u32; OUTPUT_REG_WORDS],
    error: Option<DevsimError>,
    completions: u64,
    rejected_accesses: u64,
}

impl<'g> Device<'g> {
    pub fn new(graph: &'g Graph, dram: SimDram) -> Result<Self, DevsimError> {
        let shapes = infer_shapes(graph)?;
        let input_shapes = graph.inputs.iter().map(|i| i.shape.clone()).collect();
        let output_shapes = graph
            .outputs
            .iter()
            .map(|o| {
                shapes
                    .get(o)
                    .cloned()
                    .or_else(|| graph.input(o).map(|i| i.shape.clone()))
                    .ok_or_else(|| GraphError::UnresolvedInput { node: "<outputs>".into(), input: o.clone() })
            })
            .collect::<Result<_, _>>()?;
        Ok(Device {
            graph,
            input_shapes,
            output_shapes,
            output_path: OutputPath::Dram,
            dram,
            state: DeviceState::Idle,
            exec: None,
            done: false,
            auto_restart: false,
            gier: 0,
            ier: 0,
            isr: 0,
            input_addr: [0; 2],
            output_addr: [0; 2],
            output_regs: [0; OUTPUT_REG_WORDS],
            error: None,
            completions: 0,
            rejected_accesses: 0,
        })
    }

    pub fn with_output_path(mut self, path: OutputPath) -> Result<Self, DevsimError> {
        if path == OutputPath::Registers && self.output_words() > OUTPUT_REG_WORDS {
            return Err(DevsimError::OutputTooLarge(self.output_words()));
        }
        self.output_path = path;
        Ok(self)
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn output_path(&self) -> OutputPath {
        self.output_path
    }

    pub fn input_bytes(&self) -> usize {
        numel_total(&self.input_shapes) * 4
    }

    pub fn output_words(&self) -> usize {
        numel_total(&self.output_shapes)
    }

    pub fn output_shapes(&self) -> &[Shape] {
        &self.output_shapes
    }

    pub fn state(&self) -> DeviceState {
        match (&self.state, &self.exec) {
            (DeviceState::Running { .. }, Some(e)) => DeviceState::Running { progress: e.progress() },
            (s, _) => *s,
        }
    }

    /// Error of the most recent failed run, if any. Cleared by the next START.
    pub fn error(&self) -> Option<&DevsimError> {
        self.error.as_ref()
    }

    pub fn completions(&self) -> u64 {
        self.completions
    }

    /// Accesses to unmapped or read-only offsets since construction.
    pub fn rejected_accesses(&self) -> u64 {
        self.rejected_accesses
    }

    /// CTRL contents without the clear-on-read side effect.
    pub fn peek_ctrl(&self) -> u32 {
        self.ctrl_bits()
    }

    fn ctrl_bits(&self) -> u32 {
        let mut v = 0;
        if self.done {
            v |= CTRL_DONE;
        }
        if !matches!(self.state, DeviceState::Running { .. }) {
            v |= CTRL_IDLE;
        }
        if self.auto_restart {
            v |= CTRL_AUTO_RESTART;
        }
        v
    }

    fn reject(&mut self, e: DevsimError) -> DevsimError {
        self.rejected_accesses += 1;
        e
    }

    fn is_output_reg(offset: u32) -> bool {
        (OUTPUT_REGS..OUTPUT_REGS + 4 * OUTPUT_REG_WORDS as u32).contains(&offset)
    }

    pub fn mmio_write(&mut self, offset: u32, value: u32) -> Result<(), DevsimError> {
        if offset % 4 != 0 {
            return Err(self.reject(DevsimError::UnmappedOffset(offset)));
        }
        match offset {
            CTRL => {
                self.auto_restart = value & CTRL_AUTO_RESTART != 0;
                if value & CTRL_START != 0 && self.state == DeviceState::Idle {
                    self.begin_run();
                }
            }
            GIER => self.gier = value & 1,
            IP_IER => self.ier = value & (IRQ_DONE | IRQ_ERROR),
            IP_ISR => self.isr &= !value,
            INPUT_ADDR_LO => self.input_addr[0] = value,
            INPUT_ADDR_HI => self.input_addr[1] = value,
            OUTPUT_ADDR_LO => self.output_addr[0] = value,
            OUTPUT_ADDR_HI => self.output_addr[1] = value,
            o if Self::is_output_reg(o) => return Err(self.reject(DevsimError::ReadOnly(o))),
            o => return Err(self.reject(DevsimError::UnmappedOffset(o))),
        }
        Ok(())
    }

    pub fn mmio_read(&mut self, offset: u32) -> Result<u32, DevsimError> {
        if offset % 4 != 0 {
            return Err(self.reject(DevsimError::UnmappedOffset(offset)));
        }
        Ok(match offset {
            CTRL => {
                let v = self.ctrl_bits();
                self.done = false;
                if self.state == DeviceState::DoneLatched {
                    self.state = DeviceState::Idle;
                }
                v
            }
            GIER => self.gier,
            IP_IER => self.ier,
            IP_ISR => self.isr,
            INPUT_ADDR_LO => self.input_addr[0],
            INPUT_ADDR_HI => self.input_addr[1],
            OUTPUT_ADDR_LO => self.output_addr[0],
            OUTPUT_ADDR_HI => self.output_addr[1],
            o if Self::is_output_reg(o) => self.output_regs[((o - OUTPUT_REGS) / 4) as usize],
            o => return Err(self.reject(DevsimError::UnmappedOffset(o))),
        })
    }

    pub fn input_addr(&self) -> u64 {
        (self.input_addr[1] as u64) << 32 | self.input_addr[0] as u64
    }

    pub fn output_addr(&self) -> u64 {
        (self.output_addr[1] as u64) << 32 | self.output_addr[0] as u64
    }

    fn begin_run(&mut self) {
        self.error = None;
        self.exec = None;
        self.state = DeviceState::Running { progress: 0 };
    }

    fn fail(&mut self, e: DevsimError) -> DevsimError {
        self.exec = None;
        self.state = DeviceState::Idle;
        self.error = Some(e.clone());
        if self.ier & IRQ_ERROR != 0 {
            self.isr |= IRQ_ERROR;
        }
        e
    }

    fn fetch_inputs(&self) -> Result<NamedTensors, DevsimError> {
        let raw = self.dram.read(self.input_addr(), self.input_bytes())?;
        let mut offset = 0;
        let mut inputs = NamedTensors::new();
        for (decl, shape) in self.graph.inputs.iter().zip(&self.input_shapes) {
            let n = shape.numel() * 4;
            let t = Tensor::from_f32(shape.clone(), decode_f32(&raw[offset..offset + n]))?;
            inputs.insert(decl.name.clone(), t);
            offset += n;
        }
        Ok(inputs)
    }

    fn complete(&mut self) -> Result<(), DevsimError> {
        let exec = self.exec.take().expect("running device has an executor");
        let outputs = exec.finish()?.outputs;
        let mut words = Vec::with_capacity(self.output_words());
        for t in &outputs {
            words.extend_from_slice(t.as_f32().ok_or_else(|| ExecError::NotFloat("output".into()))?);
        }
        match self.output_path {
            OutputPath::Dram => {
                let addr = self.output_addr();
                self.dram.write(addr, &encode_f32(words))?;
            }
            OutputPath::Registers => {
                self.output_regs = [0; OUTPUT_REG_WORDS];
                for (r, w) in self.output_regs.iter_mut().zip(words) {
                    *r = w.to_bits();
                }
            }
        }
        self.completions += 1;
        self.done = true;
        if self.ier & IRQ_DONE != 0 {
            self.isr |= IRQ_DONE;
        }
        self.state = DeviceState::DoneLatched;
        if self.auto_restart {
            self.begin_run();
        }
        Ok(())
    }

    fn step_inner(&mut self, budget: StepBudget) -> Result<(), DevsimError> {
        if self.exec.is_none() {
            let inputs = self.fetch_inputs()?;
            self.exec = Some(Executor::new(self.graph, &inputs, false, OpCountConvention::default())?);
        }
        let exec = self.exec.as_mut().expect("executor present");
        let mut left = match budget {
            StepBudget::Nodes(n) => n,
            StepBudget::RunToCompletion => usize::MAX,
        };
        while left > 0 && !exec.is_finished() {
            exec.step()?;
            left -= 1;
        }
        if exec.is_finished() {
            self.complete()?;
        }
        Ok(())
    }

    /// Advances a running device. Does nothing in other states.
    ///
    /// With AUTO_RESTART set, `RunToCompletion` stops after one completion.
    pub fn step(&mut self, budget: StepBudget) -> Result<DeviceState, DevsimError> {
        if !matches!(self.state, DeviceState::Running { .. }) {
            return Ok(self.state());
        }
        if let Err(e) = self.step_inner(budget) {
            return Err(self.fail(e));
        }
        Ok(self.state())
    }
}

/// Host-side addresses and polling limit for [`host_infer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DriverConfig {
    pub input_addr: u64,
    pub output_addr: u64,
    pub poll_budget: u64,
}

impl DriverConfig {
    /// Input at the DRAM base, output right after it on a 64-byte boundary.
    pub fn for_device(dev: &Device<'_>) -> Self {
        let base = dev.dram.base();
        DriverConfig {
            input_addr: base,
            output_addr: base + (dev.input_bytes() as u64).next_multiple_of(64),
            poll_budget: DEFAULT_POLL_BUDGET,
        }
    }
}

/// Smallest DRAM that holds one input and one output at the default layout.
pub fn dram_for(g: &Graph) -> Result<SimDram, DevsimError> {
    let probe = Device::new(g, SimDram::new(DEFAULT_DRAM_BASE, 0))?;
    let size = probe.input_bytes().next_multiple_of(64) + probe.output_words() * 4;
    Ok(SimDram::new(DEFAULT_DRAM_BASE, size))
}

pub fn load_ip_input(
    dev: &mut Device<'_>,
    cfg: &DriverConfig,
    inputs: &NamedTensors,
) -> Result<(), DevsimError> {
    let mut bytes = Vec::with_capacity(dev.input_bytes());
    for (decl, shape) in dev.graph().inputs.iter().zip(&dev.input_shapes) {
        let t = inputs.get(&decl.name).ok_or_else(|| ExecError::MissingInput(decl.name.clone()))?;
        if t.shape() != shape {
            return Err(ExecError::ShapeMismatch(format!(
                "input `{}` has shape {}, device expects {shape}",
                decl.name,
                t.shape()
            ))
            .into());
        }
        let v = t.as_f32().ok_or_else(|| ExecError::NotFloat(decl.name.clone()))?;
        bytes.extend(encode_f32(v.iter().copied()));
    }
    dev.dram.write(cfg.input_addr, &bytes)?;
    dev.mmio_write(INPUT_ADDR_LO, cfg.input_addr as u32)?;
    dev.mmio_write(INPUT_ADDR_HI, (cfg.input_addr >> 32) as u32)?;
    dev.mmio_write(OUTPUT_ADDR_LO, cfg.output_addr as u32)?;
    dev.mmio_write(OUTPUT_ADDR_HI, (cfg.output_addr >> 32) as u32)?;
    Ok(())
}

/// Asserts START, then polls DONE, letting the device advance one node per poll.
pub fn start_ip(dev: &mut Device<'_>, cfg: &DriverConfig) -> Result<(), DevsimError> {
    dev.mmio_write(CTRL, CTRL_START)?;
    for _ in 0..cfg.poll_budget {
        if dev.mmio_read(CTRL)? & CTRL_DONE != 0 {
            return Ok(());
        }
        dev.step(StepBudget::Nodes(1))?;
        if let Some(e) = dev.error() {
            return Err(e.clone());
        }
    }
    Err(DevsimError::Timeout(cfg.poll_budget))
}

pub fn read_ip_output(dev: &mut Device<'_>, cfg: &DriverConfig) -> Result<Vec<Tensor>, DevsimError> {
    let words = match dev.output_path() {
        OutputPath::Dram => decode_f32(dev.dram.read(cfg.output_addr, dev.output_words() * 4)?),
        OutputPath::Registers => (0..dev.output_words())
            .map(|i| dev.mmio_read(OUTPUT_REGS + 4 * i as u32).map(f32::from_bits))
            .collect::<Result<_, _>>()?,
    };
    let mut offset = 0;
    let mut out = Vec::new();
    for shape in dev.output_shapes() {
        let n = shape.numel();
        out.push(Tensor::from_f32(shape.clone(), words[offset..offset + n].to_vec())?);
        offset += n;
    }
    Ok(out)
}

/// One inference through the register interface. The device must be idle.
pub fn host_infer_with(
    dev: &mut Device<'_>,
    cfg: &DriverConfig,
    inputs: &NamedTensors,
) -> Result<Vec<Tensor>, DevsimError> {
    if dev.state() != DeviceState::Idle {
        return Err(DevsimError::Busy);
    }
    load_ip_input(dev, cfg, inputs)?;
    start_ip(dev, cfg)?;
    read_ip_output(dev, cfg)
}

pub fn host_infer(dev: &mut Device<'_>, inputs: &NamedTensors) -> Result<Vec<Tensor>, DevsimError> {
    let cfg = DriverConfig::for_device(dev);
    host_infer_with(dev, &cfg, inputs)
}
