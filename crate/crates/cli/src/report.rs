//! Versioned run report.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vitalsig::ptt::{PttSummary, SiteAnalysis};
use vitalsig::rppg::Method;
use vitalsig::stats::HrErrorReport;

use crate::error::{CliError, CliResult};
use crate::pipeline::Verb;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Validation,
    Runtime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbError {
    pub verb: String,
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub manifest: String,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub file: String,
    pub frames: usize,
    pub rows: usize,
    pub fs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseReport {
    pub waveform_file: String,
    pub hr_file: String,
    pub channels: Vec<String>,
    pub samples: usize,
    pub hr_windows: usize,
    pub confident_windows: usize,
    pub mean_hr_bpm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RppgEntry {
    pub site: String,
    pub method: Method,
    pub waveform_file: String,
    pub hr_file: String,
    pub hr_windows: usize,
    pub confident_windows: usize,
    pub mean_hr_bpm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PttEntry {
    /// `contact` or the rPPG method name.
    pub source: String,
    pub file: String,
    pub windows: usize,
    pub weak_windows: usize,
    pub summary: Option<PttSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespReport {
    pub waveform_file: String,
    pub rate_file: String,
    pub windows: usize,
    pub mean_rate_brpm: Option<f64>,
    /// Motion route only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<MotionDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionDiagnostics {
    pub source: String,
    /// `None` when the out-of-band power is zero.
    pub snr: Option<f64>,
    pub low_confidence: bool,
    pub selected: Vec<usize>,
    pub rank_deficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedErrors {
    pub estimator: String,
    pub errors: HrErrorReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    /// Pulse-rate estimators against the ground-truth rate.
    pub hr: Vec<NamedErrors>,
    /// Breathing-rate estimators against the ground-truth rate.
    pub resp: Vec<NamedErrors>,
    pub site_analysis: Option<SiteAnalysis>,
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    pub subject: String,
    pub seed: Option<u64>,
    pub config_hash: String,
    /// Unix seconds at which the run finished.
    pub timestamp: u64,
    pub verbs: Vec<Verb>,
    pub synth: Option<SynthReport>,
    pub flow: Option<FlowReport>,
    pub fuse: Option<FuseReport>,
    pub rppg: Vec<RppgEntry>,
    pub ptt: Vec<PttEntry>,
    pub resp_ppg: Option<RespReport>,
    pub resp_motion: Option<RespReport>,
    pub stats: Option<StatsReport>,
    pub errors: Vec<VerbError>,
}

impl Report {
    pub fn new(subject: impl Into<String>, config_hash: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_owned(),
            subject: subject.into(),
            seed,
            config_hash: config_hash.into(),
            timestamp: 0,
            verbs: Vec::new(),
            synth: None,
            flow: None,
            fuse: None,
            rppg: Vec::new(),
            ptt: Vec::new(),
            resp_ppg: None,
            resp_motion: None,
            stats: None,
            errors: Vec::new(),
        }
    }

    pub fn push_error(&mut self, verb: &str, err: &CliError) {
        let kind = match err.exit_code() {
            crate::error::EXIT_VALIDATION => ErrorKind::Validation,
            _ => ErrorKind::Runtime,
        };
        self.errors.push(VerbError {
            verb: verb.to_owned(),
            kind,
            message: err.to_string(),
        });
    }

    /// Process exit status implied by the recorded errors.
    pub fn exit_code(&self) -> i32 {
        if self.errors.iter().any(|e| e.kind == ErrorKind::Validation) {
            crate::error::EXIT_VALIDATION
        } else if self.errors.is_empty() {
            crate::error::EXIT_OK
        } else {
            crate::error::EXIT_RUNTIME
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| CliError::Validation(format!("report: {e}")))?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "report schema {} is not {SCHEMA_VERSION}",
                r.schema_version
            )));
        }
        Ok(r)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()).map_err(|e| CliError::io(path, e))
    }
}

/// Maps non-finite values to `None` so the JSON form stays lossless.
pub fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}
