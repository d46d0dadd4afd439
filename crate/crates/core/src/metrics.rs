//! Per-step training metrics and their CSV serialization.
//!
//! The metrics file is deterministic under a fixed seed and the oracle
//! judge; wall-clock latency is therefore written to a separate telemetry
//! sidecar that is explicitly outside the determinism contract.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub mean_fused_reward: f64,
    pub mean_s_vis: f64,
    pub mean_s_ans: f64,
    pub mean_s_fmt: f64,
    pub holdout_accuracy: f64,
    /// Fraction of wave trajectories with at least one contradicted claim.
    pub hallucination_rate: f64,
    pub mean_response_len: f64,
    /// Wall-clock per step; telemetry only, never in the deterministic file.
    pub wall_ms: f64,
}

impl MetricRecord {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("mean_s_vis", self.mean_s_vis),
            ("mean_s_ans", self.mean_s_ans),
            ("mean_s_fmt", self.mean_s_fmt),
            ("holdout_accuracy", self.holdout_accuracy),
            ("hallucination_rate", self.hallucination_rate),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Dataset(format!("{name} out of [0,1]: {r}")));
            }
        }
        if self.mean_response_len < 0.0 {
            return Err(Error::Dataset("negative response length".into()));
        }
        Ok(())
    }
}

pub const METRICS_SCHEMA_VERSION: u32 = 1;

const HEADER: &str = "step,mean_fused_reward,mean_s_vis,mean_s_ans,mean_s_fmt,holdout_accuracy,hallucination_rate,mean_response_len";

pub fn metrics_header() -> String {
    format!("# metrics v{METRICS_SCHEMA_VERSION}\n{HEADER}")
}

pub fn metrics_row(r: &MetricRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        r.step,
        r.mean_fused_reward,
        r.mean_s_vis,
        r.mean_s_ans,
        r.mean_s_fmt,
        r.holdout_accuracy,
        r.hallucination_rate,
        r.mean_response_len
    )
}

pub fn write_metrics<W: Write>(mut w: W, records: &[MetricRecord]) -> Result<()> {
    writeln!(w, "{}", metrics_header())?;
    for r in records {
        writeln!(w, "{}", metrics_row(r))?;
    }
    Ok(())
}

/// Parse a metrics CSV produced by `write_metrics`. Wall-clock is not in
/// the file and reads back as zero.
pub fn read_metrics<R: BufRead>(r: R) -> Result<Vec<MetricRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("step,") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Dataset(format!("bad metrics row: {line:?}")));
        }
        let f = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| Error::Dataset(format!("bad metrics field {i}: {e}")))
        };
        out.push(MetricRecord {
            step: fields[0]
                .parse()
                .map_err(|e| Error::Dataset(format!("bad step: {e}")))?,
            mean_fused_reward: f(1)?,
            mean_s_vis: f(2)?,
            mean_s_ans: f(3)?,
            mean_s_fmt: f(4)?,
            holdout_accuracy: f(5)?,
            hallucination_rate: f(6)?,
            mean_response_len: f(7)?,
            wall_ms: 0.0,
        });
    }
    Ok(out)
}

/// Telemetry sidecar rows: step and wall-clock only.
pub fn write_telemetry<W: Write>(mut w: W, records: &[MetricRecord]) -> Result<()> {
    writeln!(w, "step,wall_ms")?;
    for r in records {
        writeln!(w, "{},{}", r.step, r.wall_ms)?;
    }
    Ok(())
}
