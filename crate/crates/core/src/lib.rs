//! Framework-free inference engine and FPGA deployment toolkit for small
//! onboard neural networks.
//!
//! * [`graph`]: layer DAG, validation, shape inference, parameter and op counts
//! * [`modelfmt`]: model text and weight blob formats, the six-model zoo
//! * [`interpret`]: deterministic fp32 reference executor
//! * [`quantize`]: INT8 post-training quantization
//! * [`plan`]: device model, backend coverage, weight placement, derived metrics
//! * [`devsim`]: memory-mapped accelerator simulator and host driver
//! * [`trace`], [`bench`], [`report`]: power traces, timing harness, table reports

pub mod bench;
pub mod devsim;
pub mod graph;
pub mod interpret;
pub mod modelfmt;
pub mod plan;
pub mod quantize;
pub mod report;
pub mod trace;
