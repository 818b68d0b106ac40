//! Power trace ingestion and per-phase energy.
//!
//! CSV rows are `t_s,watts[,phase]`; a `t_s,...` header line is optional.
//! A phase is a maximal run of consecutive samples with the same label. It
//! covers the time from its first sample to the first sample of the next phase
//! (the last phase ends at the final sample), so phases tile the trace and
//! their energies add up to the total.

use serde::Serialize;
use thiserror::Error;

pub const UNLABELED: &str = "unlabeled";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub watts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Phase {
    pub label: String,
    pub t_start: f64,
    pub t_end: f64,
    /// Index of the first sample with this label.
    pub first: usize,
    /// One past the last sample with this label.
    pub end: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PowerTrace {
    pub samples: Vec<Sample>,
    pub phases: Vec<Phase>,
}

impl PowerTrace {
    /// Builds phases from per-sample labels. Timestamps must strictly increase.
    pub fn from_labeled(samples: Vec<Sample>, labels: &[String]) -> Self {
        assert_eq!(samples.len(), labels.len());
        let mut phases: Vec<Phase> = Vec::new();
        for (i, label) in labels.iter().enumerate() {
            match phases.last_mut() {
                Some(p) if &p.label == label => p.end = i + 1,
                _ => phases.push(Phase {
                    label: label.clone(),
                    t_start: samples[i].t,
                    t_end: samples[i].t,
                    first: i,
                    end: i + 1,
                }),
            }
        }
        let starts: Vec<f64> = phases.iter().skip(1).map(|p| p.t_start).collect();
        let last_t = samples.last().map(|s| s.t).unwrap_or(0.0);
        for (p, next) in phases.iter_mut().zip(starts.into_iter().map(Some).chain([None])) {
            p.t_end = next.unwrap_or(last_t);
        }
        PowerTrace { samples, phases }
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

fn parse_field(field: &str, line: u64, what: &str) -> Result<f64, TraceError> {
    let v: f64 = field.trim().parse().map_err(|_| TraceError::Parse {
        line,
        message: format!("{what} `{field}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(TraceError::Parse { line, message: format!("{what} must be finite") });
    }
    Ok(v)
}

pub fn parse_power_trace(bytes: &[u8]) -> Result<PowerTrace, TraceError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| TraceError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(i as u64 + 1);
        if i == 0 && record.get(0) == Some("t_s") {
            continue;
        }
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if !(2..=3).contains(&record.len()) {
            return Err(TraceError::Parse {
                line,
                message: format!("expected 2 or 3 fields, found {}", record.len()),
            });
        }
        let t = parse_field(&record[0], line, "timestamp")?;
        let watts = parse_field(&record[1], line, "power")?;
        if let Some(prev) = samples.last().map(|s: &Sample| s.t) {
            if t <= prev {
                return Err(TraceError::Parse {
                    line,
                    message: format!("timestamp {t} does not increase (previous {prev})"),
                });
            }
        }
        let label = match record.get(2) {
            Some(l) if !l.is_empty() => l.to_string(),
            _ => UNLABELED.to_string(),
        };
        samples.push(Sample { t, watts });
        labels.push(label);
    }
    Ok(PowerTrace::from_labeled(samples, &labels))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseStats {
    pub label: String,
    pub t_start: f64,
    pub t_end: f64,
    pub mean_watts: f64,
    pub energy_j: f64,
    pub peak_watts: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PhaseReport {
    pub phases: Vec<PhaseStats>,
    pub peak_phase: Option<String>,
    pub total_energy_j: f64,
}

impl PhaseReport {
    /// Average power over the whole trace.
    pub fn mean_watts(&self) -> Option<f64> {
        let t0 = self.phases.first()?.t_start;
        let t1 = self.phases.last()?.t_end;
        (t1 > t0).then(|| self.total_energy_j / (t1 - t0))
    }
}

fn trapezoid(samples: &[Sample]) -> f64 {
    samples.windows(2).map(|w| 0.5 * (w[0].watts + w[1].watts) * (w[1].t - w[0].t)).sum()
}

pub fn phase_energy(trace: &PowerTrace) -> PhaseReport {
    let n = trace.samples.len();
    let mut phases = Vec::with_capacity(trace.phases.len());
    for p in &trace.phases {
        // Integrate up to the next phase's first sample.
        let stop = (p.end + 1).min(n);
        let energy = trapezoid(&trace.samples[p.first..stop]);
        let peak = trace.samples[p.first..p.end].iter().map(|s| s.watts).fold(f64::MIN, f64::max);
        let span = p.t_end - p.t_start;
        phases.push(PhaseStats {
            label: p.label.clone(),
            t_start: p.t_start,
            t_end: p.t_end,
            mean_watts: if span > 0.0 { energy / span } else { trace.samples[p.first].watts },
            energy_j: energy,
            peak_watts: peak,
        });
    }
    let mut peak_phase: Option<&PhaseStats> = None;
    for p in &phases {
        if peak_phase.is_none_or(|best| p.peak_watts > best.peak_watts) {
            peak_phase = Some(p);
        }
    }
    PhaseReport {
        peak_phase: peak_phase.map(|p| p.label.clone()),
        total_energy_j: trapezoid(&trace.samples),
        phases,
    }
}
