//! Random MMIO sequences against the device invariants.

use oninfer_core::devsim::*;
use oninfer_core::graph::Graph;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub enum Op {
    Write(u32, u32),
    Read(u32),
    Step(Option<usize>),
}

pub const OFFSETS: [u32; 13] = [
    CTRL, GIER, IP_IER, IP_ISR, INPUT_ADDR_LO, INPUT_ADDR_HI, OUTPUT_ADDR_LO, OUTPUT_ADDR_HI,
    OUTPUT_REGS, 0x20, 0x3C, 0x80, 0x02,
];

pub const VALUES: [u32; 7] = [
    CTRL_START,
    CTRL_START | CTRL_AUTO_RESTART,
    CTRL_AUTO_RESTART,
    0,
    DEFAULT_DRAM_BASE as u32,
    DEFAULT_DRAM_BASE as u32 + 64,
    0x2000_0000,
];

pub fn random_ops(r: &mut ChaCha8Rng, len: usize) -> Vec<Op> {
    (0..len)
        .map(|_| {
            let o = OFFSETS[r.random_range(0..OFFSETS.len())];
            match r.random_range(0..3) {
                0 => {
                    let v = if r.random_bool(0.1) { r.random() } else { VALUES[r.random_range(0..VALUES.len())] };
                    Op::Write(o, v)
                }
                1 => Op::Read(o),
                _ => Op::Step(r.random_bool(0.8).then(|| r.random_range(0..8))),
            }
        })
        .collect()
}

/// Applies a sequence of MMIO operations and checks the device invariants after each.
pub fn check_sequence(g: &Graph, want: &[f32], ops: &[Op]) -> Result<(), String> {
    let mut d = Device::new(g, SimDram::new(DEFAULT_DRAM_BASE, 256)).unwrap();
    d.dram.write(DEFAULT_DRAM_BASE, &encode_f32([0.3f32, -0.7, 1.1])).unwrap();
    let total = g.nodes.len();
    for op in ops {
        // The host keeps its input staged at the DRAM base.
        d.dram.write(DEFAULT_DRAM_BASE, &encode_f32([0.3f32, -0.7, 1.1])).unwrap();
        let before = d.completions();
        match *op {
            Op::Write(o, v) => {
                let _ = d.mmio_write(o, v);
            }
            Op::Read(o) => {
                let v = d.mmio_read(o);
                if o == CTRL && v.clone().unwrap() & CTRL_DONE != 0 && d.completions() == 0 {
                    return Err("DONE before any completion".into());
                }
            }
            Op::Step(n) => {
                let budget = n.map_or(StepBudget::RunToCompletion, StepBudget::Nodes);
                let _ = d.step(budget);
            }
        }
        if d.completions() > before {
            // Only the input at the DRAM base decodes to a valid run here.
            let addr = d.output_addr();
            let got = decode_f32(d.dram.read(addr, 24).map_err(|e| e.to_string())?);
            if d.input_addr() == DEFAULT_DRAM_BASE && got != want {
                return Err(format!("partial or wrong output after DONE: {got:?}"));
            }
        }
        let ctrl = d.peek_ctrl();
        match d.state() {
            DeviceState::Running { progress } => {
                if ctrl & CTRL_IDLE != 0 || progress > total {
                    return Err(format!("bad running state {ctrl:#x} {progress}"));
                }
            }
            DeviceState::DoneLatched => {
                if ctrl & (CTRL_IDLE | CTRL_DONE) != CTRL_IDLE | CTRL_DONE {
                    return Err(format!("done latched with ctrl {ctrl:#x}"));
                }
            }
            DeviceState::Idle => {
                if ctrl & CTRL_IDLE == 0 {
                    return Err("idle without IDLE bit".into());
                }
            }
        }
    }
    // Quiescence: with auto-restart off, running to completion leaves IDLE set.
    let _ = d.mmio_write(CTRL, 0);
    let _ = d.step(StepBudget::RunToCompletion);
    if d.peek_ctrl() & CTRL_IDLE == 0 {
        return Err("not idle after quiescence".into());
    }
    Ok(())
}

