use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use oninfer_core::bench::{
    cmd_bench, default_input_count, load_model, seeded_inputs, BenchConfig, ModelSource,
    PowerSource,
};
use oninfer_core::graph::{count_operations, count_parameters, validate_graph, Graph, OpCountConvention};
use oninfer_core::interpret::run_graph;
use oninfer_core::modelfmt::{
    build_zoo_model, load_weight_blob, parse_model_text, serialize_model_text, WeightInit, ZooModelId,
};
use oninfer_core::plan::{
    check_backend_support, place_weights, BackendProfile, DeviceModel, Precision,
};
use oninfer_core::quantize::{
    calibrate, load_quantized, quant_error_report, quantize_graph, run_quantized, save_quantized,
};
use oninfer_core::report::{
    build_table_report, load_reference, reference_records, shipped_reference, CountRecord,
    NamedRecord, ReferenceRow,
};
use oninfer_core::trace::{parse_power_trace, phase_energy};

#[derive(Parser)]
#[command(name = "oninfer", version, about = "Onboard inference engine and FPGA deployment toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a model on seeded inputs and print its outputs.
    Run(Common),
    /// Parse and validate a model file (and weights, if given).
    Validate(Common),
    /// INT8 post-training quantization; writes `<out>` and `<out>.blob`.
    Quantize(Common),
    /// Parameter and operation counts.
    Count(Common),
    /// Backend coverage and weight placement.
    Plan(Common),
    /// Time inferences and derive energy and throughput.
    Bench(Common),
    /// Counts and performance tables with deviations from reference values.
    Report(Common),
    /// Per-phase energy of a power trace.
    Trace(Common),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Md,
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrecisionArg {
    Fp32,
    Int8,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Fp32 => Precision::Fp32,
            PrecisionArg::Int8 => Precision::Int8,
        }
    }
}

#[derive(Args, Clone)]
struct Common {
    /// Model text file.
    #[arg(long, conflicts_with = "zoo")]
    model: Option<PathBuf>,
    /// Built-in model id.
    #[arg(long)]
    zoo: Option<ZooModelId>,
    /// Weight blob.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "fp32")]
    backend: PrecisionArg,
    /// Number of inputs (bench default follows the model).
    #[arg(long)]
    inputs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Device model JSON; defaults to a ZCU104.
    #[arg(long)]
    device: Option<PathBuf>,
    /// Reference values CSV; defaults to the shipped table.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Bench records JSON for `report`; defaults to the reference operating points.
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// MPSoC power in watts.
    #[arg(long)]
    p_mpsoc: Option<f64>,
    /// Board power in watts.
    #[arg(long)]
    p_board: Option<f64>,
    /// Power trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Use this FPS instead of the measured one.
    #[arg(long)]
    fps: Option<f64>,
    /// Weight precision for `plan`.
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
}

type CliResult = Result<ExitCode, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn read(p: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn emit(c: &Common, text: &str) -> Result<(), String> {
    match &c.out {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn to_json(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn source(c: &Common) -> Result<ModelSource, String> {
    match (&c.model, c.zoo) {
        (Some(p), _) => Ok(ModelSource::Path { model: p.clone(), weights: None }),
        (None, Some(id)) => Ok(ModelSource::Zoo(id)),
        (None, None) => Err("one of --model or --zoo is required".into()),
    }
}

fn model(c: &Common) -> Result<(String, Graph), String> {
    load_model(&source(c)?, c.weights.as_ref(), c.seed).map_err(err)
}

/// Topology only; weights are not needed for counting or planning.
fn topology(c: &Common) -> Result<(String, Graph, Option<u64>), String> {
    match (&c.model, c.zoo) {
        (Some(p), _) => {
            let m = parse_model_text(&read(p)?).map_err(err)?;
            Ok((m.name, m.graph, m.metadata.reference_ops))
        }
        (None, Some(id)) => {
            let g = build_zoo_model(id, &WeightInit::None).map_err(err)?;
            Ok((id.name().into(), g, Some(id.reference_counts().1)))
        }
        (None, None) => Err("one of --model or --zoo is required".into()),
    }
}

fn run(c: &Common) -> CliResult {
    let n = c.inputs.unwrap_or(1);
    let mut outputs = Vec::with_capacity(n);
    let quantized_file = match &c.model {
        Some(p) => {
            let m = parse_model_text(&read(p)?).map_err(err)?;
            m.metadata.quant_params.is_some().then_some(m)
        }
        None => None,
    };
    if let Some(m) = quantized_file {
        let blob = read(c.weights.as_ref().ok_or("quantized models need --weights")?)?;
        let q = load_quantized(&m, &blob).map_err(err)?;
        for x in seeded_inputs(&q.base, c.seed, n) {
            outputs.push(run_quantized(&q, &x).map_err(err)?);
        }
    } else {
        let (_, g) = model(c)?;
        let inputs = seeded_inputs(&g, c.seed, n);
        match c.backend {
            PrecisionArg::Fp32 => {
                for x in &inputs {
                    outputs.push(run_graph(&g, x, false).map_err(err)?.outputs);
                }
            }
            PrecisionArg::Int8 => {
                let q = quantize_graph(&g, &calibrate(&g, &inputs).map_err(err)?).map_err(err)?;
                for x in &inputs {
                    outputs.push(run_quantized(&q, x).map_err(err)?);
                }
            }
        }
    }
    let values: Vec<Vec<Vec<f32>>> = outputs
        .iter()
        .map(|o| o.iter().map(|t| t.as_f32().unwrap_or_default().to_vec()).collect())
        .collect();
    let text = match c.format {
        Format::Json => to_json(&values),
        _ => values
            .iter()
            .enumerate()
            .map(|(i, outs)| {
                let cols: Vec<String> = outs.iter().map(|o| format!("{o:?}")).collect();
                format!("input {i}: {}\n", cols.join(" "))
            })
            .collect(),
    };
    emit(c, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn validate(c: &Common) -> CliResult {
    let g = match (&c.model, c.zoo) {
        (Some(p), _) => {
            let m = parse_model_text(&read(p)?).map_err(err)?;
            match &c.weights {
                Some(w) if m.metadata.quant_params.is_some() => {
                    load_quantized(&m, &read(w)?).map_err(err)?.base
                }
                Some(w) => load_weight_blob(&read(w)?, &m.graph).map_err(err)?,
                None => m.graph,
            }
        }
        _ => model(c)?.1,
    };
    let report = validate_graph(&g);
    if !report.is_ok() {
        for v in &report.violations {
            eprintln!("node `{}`: {}", v.node, v.rule);
        }
        return Ok(ExitCode::FAILURE);
    }
    emit(c, &format!("ok: {} nodes, {} parameters", g.nodes.len(), count_parameters(&g)))?;
    Ok(ExitCode::SUCCESS)
}

fn quantize(c: &Common) -> CliResult {
    let (name, g) = model(c)?;
    let out = c.out.as_ref().ok_or("--out is required")?;
    let n = c.inputs.unwrap_or(32);
    let calib = seeded_inputs(&g, c.seed, n);
    let q = quantize_graph(&g, &calibrate(&g, &calib).map_err(err)?).map_err(err)?;
    let eval = seeded_inputs(&g, c.seed.wrapping_add(1), n);
    let r = quant_error_report(&g, &q, &eval).map_err(err)?;
    let (m, blob) = save_quantized(&q, &name);
    let blob_path = PathBuf::from(format!("{}.blob", out.display()));
    std::fs::write(out, serialize_model_text(&m)).map_err(err)?;
    std::fs::write(&blob_path, blob).map_err(err)?;
    let text = match c.format {
        Format::Json => to_json(&r),
        _ => format!(
            "wrote {} and {}\nmax_abs_error={:.6} mse={:.3e} top1_agreement={:.4} samples={}\n",
            out.display(),
            blob_path.display(),
            r.max_abs_error,
            r.mean_square_error,
            r.top1_agreement,
            r.samples
        ),
    };
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn count(c: &Common) -> CliResult {
    let (name, g, ref_ops) = topology(c)?;
    let params = count_parameters(&g);
    let ops = count_operations(&g, &OpCountConvention::default()).map_err(err)?;
    let deviation = ref_ops.map(|p| (ops as f64 - p as f64) / p as f64 * 100.0);
    let text = match c.format {
        Format::Json => to_json(&json!({
            "model": name, "params": params, "ops": ops,
            "ref_ops": ref_ops, "deviation_pct": deviation,
        })),
        Format::Csv => format!(
            "model,params,ops,ref_ops,deviation_pct\n{name},{params},{ops},{},{}\n",
            ref_ops.map(|p| p.to_string()).unwrap_or_default(),
            deviation.map(|d| format!("{d:.2}")).unwrap_or_default()
        ),
        _ => match (ref_ops, deviation) {
            (Some(p), Some(d)) => format!("params={params} ops={ops} ref_ops={p} deviation={d:.2}%\n"),
            _ => format!("params={params} ops={ops}\n"),
        },
    };
    emit(c, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn device(c: &Common) -> Result<DeviceModel, String> {
    match &c.device {
        None => Ok(DeviceModel::zcu104()),
        Some(p) => {
            let d: DeviceModel = serde_json::from_slice(&read(p)?).map_err(err)?;
            if !d.is_valid() {
                return Err(format!("{}: every device budget must be positive", p.display()));
            }
            Ok(d)
        }
    }
}

fn plan(c: &Common) -> CliResult {
    let (name, g, _) = topology(c)?;
    let precision: Precision = c.precision.unwrap_or(c.backend).into();
    let d = device(c)?;
    let p = place_weights(&g, precision, &d).map_err(err)?;
    let dpu = check_backend_support(&g, &BackendProfile::dpu_like());
    let hls = check_backend_support(&g, &BackendProfile::hls_like());
    let text = match c.format {
        Format::Json => to_json(&json!({
            "model": name,
            "plan": p,
            "dpu_like": { "supported": dpu.supported, "unsupported": dpu.unsupported },
            "hls_like": { "supported": hls.supported, "unsupported": hls.unsupported },
        })),
        _ => {
            let verdict = |v: &oninfer_core::plan::SupportVerdict| {
                if v.supported {
                    "supported".to_string()
                } else {
                    let kinds: Vec<&str> = v.unsupported.iter().map(|k| k.name()).collect();
                    format!("unsupported ({})", kinds.join(", "))
                }
            };
            format!(
                "model: {name}\nprecision: {precision}\nweights: {}\nweight_bytes: {}\nbuffer_bytes: {}\n\
                 onchip_bytes: {}\nbram_capacity_bytes: {}\nbram36_estimate: {}\nfits: {}\n\
                 dpu-like: {}\nhls-like: {}\n",
                p.weights_placement(),
                p.weight_bytes,
                p.buffer_bytes,
                p.onchip_bytes,
                p.capacity_bytes,
                p.bram36_used,
                p.fits,
                verdict(&dpu),
                verdict(&hls),
            )
        }
    };
    emit(c, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn bench(c: &Common) -> CliResult {
    let (name, g) = model(c)?;
    let power = match (&c.trace, c.p_mpsoc) {
        (_, Some(p)) => PowerSource::Supplied { p_mpsoc: p, p_board: c.p_board },
        (Some(t), None) => {
            let trace = parse_power_trace(&read(t)?).map_err(err)?;
            PowerSource::from_trace(&phase_energy(&trace))
        }
        (None, None) => PowerSource::None,
    };
    let cfg = BenchConfig {
        model_name: name,
        backend: c.backend.into(),
        inputs: c.inputs.unwrap_or_else(|| default_input_count(c.zoo)),
        seed: c.seed,
        power,
        fps_override: c.fps,
    };
    let r = cmd_bench(&g, &cfg).map_err(err)?;
    let text = match c.format {
        Format::Json => to_json(&r),
        _ => format!(
            "model: {}\nbackend: {}\ninputs: {}\nchecksum: {:016x}\nops_per_inference: {}\n\
             fps: {:.3}\np_mpsoc_w: {}\nenergy_mj: {:.4}\nthroughput_mops: {:.4}\n\
             [timing] timed_seconds: {:.6}\n[timing] host_fps: {:.3}\n",
            r.model,
            r.backend,
            r.inputs,
            r.checksum,
            r.record.op_count,
            r.record.fps,
            r.record.p_mpsoc,
            r.metrics.energy_mj(),
            r.metrics.throughput_mops,
            r.timed_seconds,
            r.host_fps,
        ),
    };
    emit(c, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn report(c: &Common) -> CliResult {
    let refs: Vec<ReferenceRow> = match &c.reference {
        Some(p) => load_reference(p).map_err(err)?,
        None => shipped_reference(),
    };
    let records: Vec<NamedRecord> = match &c.records {
        Some(p) => serde_json::from_slice(&read(p)?).map_err(err)?,
        None => reference_records(&refs),
    };
    let counts = ZooModelId::ALL
        .into_iter()
        .map(|id| {
            let g = build_zoo_model(id, &WeightInit::None).map_err(err)?;
            Ok(CountRecord {
                model: id.name().into(),
                params: count_parameters(&g),
                ops: count_operations(&g, &OpCountConvention::default()).map_err(err)?,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    let rep = build_table_report(&counts, &records, &refs).map_err(err)?;
    let text = match c.format {
        Format::Json => to_json(&rep),
        Format::Csv => rep.to_csv(),
        Format::Md | Format::Text => rep.to_markdown(),
    };
    emit(c, &text)?;
    Ok(if rep.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn trace(c: &Common) -> CliResult {
    let path = c.trace.as_ref().ok_or("--trace is required")?;
    let r = phase_energy(&parse_power_trace(&read(path)?).map_err(err)?);
    let text = match c.format {
        Format::Json => to_json(&r),
        _ => {
            let mut s = String::from("phase,t_start,t_end,mean_w,energy_j,peak_w\n");
            for p in &r.phases {
                s += &format!(
                    "{},{},{},{:.6},{:.6},{}\n",
                    p.label, p.t_start, p.t_end, p.mean_watts, p.energy_j, p.peak_watts
                );
            }
            s += &format!(
                "total_energy_j={:.6} peak_phase={}\n",
                r.total_energy_j,
                r.peak_phase.as_deref().unwrap_or("-")
            );
            s
        }
    };
    emit(c, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => run(c),
        Command::Validate(c) => validate(c),
        Command::Quantize(c) => quantize(c),
        Command::Count(c) => count(c),
        Command::Plan(c) => plan(c),
        Command::Bench(c) => bench(c),
        Command::Report(c) => report(c),
        Command::Trace(c) => trace(c),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
