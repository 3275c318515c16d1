//! Experiment manifests. Paths are resolved against the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use vitalsig::ptt::SiteAnalysisInput;
use vitalsig::synth::{MotionOptions, RgbOptions, SubjectSpec};

use crate::error::{CliError, CliResult};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactInput {
    /// CSV `t,<site>...` sampled at the contact rate.
    pub file: PathBuf,
    /// CSV `t,bpm` from the fingertip oximeter.
    pub guide: PathBuf,
    /// Expected sampling rate; checked against the file when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramesInput {
    pub dir: PathBuf,
    pub fs: f64,
    /// `[x, y, width, height]` in pixels; the whole frame when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[usize; 4]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthInput {
    /// CSV `t,bpm` of windowed pulse rate, `t` at window centres.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr: Option<PathBuf>,
    /// CSV `t,brpm` of windowed breathing rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resp: Option<PathBuf>,
    /// CSV `t,pulse` of the clean pulse waveform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse: Option<PathBuf>,
}

impl TruthInput {
    fn is_empty(&self) -> bool {
        self.hr.is_none() && self.resp.is_none() && self.pulse.is_none()
    }
}

/// Rendering of a breathing chest as a frame sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameSynth {
    pub fs: f64,
    pub width: usize,
    pub height: usize,
    /// Peak vertical displacement, pixels.
    pub amplitude_px: f64,
    /// Inset of the bounding box from every edge, pixels.
    pub margin: usize,
    /// Standard deviation of per-pixel sensor noise, gray levels.
    pub noise_sigma: f64,
}

impl Default for FrameSynth {
    fn default() -> Self {
        Self {
            fs: 15.0,
            width: 140,
            height: 140,
            amplitude_px: 3.0,
            margin: 20,
            noise_sigma: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthInput {
    pub subject: SubjectSpec,
    /// Sites rendered as skin-colour traces.
    #[serde(default)]
    pub rgb_sites: Vec<String>,
    #[serde(default)]
    pub rgb: RgbOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<MotionOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<FrameSynth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub subject: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact: Option<ContactInput>,
    /// Site name to CSV `t,r,g,b`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rgb: BTreeMap<String, PathBuf>,
    /// CSV `t,c00..c99`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<FramesInput>,
    #[serde(default, skip_serializing_if = "TruthInput::is_empty")]
    pub truth: TruthInput,
    /// Contact-channel pairs for transit time, `(proximal, distal)`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ptt_pairs: Vec<(String, String)>,
    /// rPPG site pairs for transit time.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rppg_ptt_pairs: Vec<(String, String)>,
    /// Pre-collected transit groups for the site analysis; derived from the
    /// contact pairs when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_groups: Option<SiteAnalysisInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthInput>,
    /// Overrides of the pipeline configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<Value>,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(subject: impl Into<String>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            subject: subject.into(),
            contact: None,
            rgb: BTreeMap::new(),
            motion: None,
            frames: None,
            truth: TruthInput::default(),
            ptt_pairs: Vec::new(),
            rppg_ptt_pairs: Vec::new(),
            site_groups: None,
            synth: None,
            config: None,
            base_dir: PathBuf::from("."),
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut m = Self::parse(&text).map_err(|e| match e {
            CliError::Validation(msg) => CliError::Validation(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        m.base_dir = std::path::absolute(dir).map_err(|e| CliError::io(dir, e))?;
        m.validate()?;
        Ok(m)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(CliError::Validation(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.base_dir.join(p) }
    }

    /// Every referenced input path, resolved.
    pub fn input_paths(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        if let Some(c) = &self.contact {
            out.push(self.resolve(&c.file));
            out.push(self.resolve(&c.guide));
        }
        out.extend(self.rgb.values().map(|p| self.resolve(p)));
        out.extend(self.motion.iter().map(|p| self.resolve(p)));
        out.extend(self.frames.iter().map(|f| self.resolve(&f.dir)));
        for p in [&self.truth.hr, &self.truth.resp, &self.truth.pulse].into_iter().flatten() {
            out.push(self.resolve(p));
        }
        out
    }

    /// Checks that referenced files exist and pairs name known sources.
    pub fn validate(&self) -> CliResult<()> {
        if let Some(missing) = self.input_paths().into_iter().find(|p| !p.exists()) {
            return Err(CliError::Io {
                path: missing.display().to_string(),
                message: "file not found".into(),
            });
        }
        for (a, b) in &self.rppg_ptt_pairs {
            for site in [a, b] {
                if !self.rgb.contains_key(site) && !self.synth_rgb_site(site) {
                    return Err(CliError::Validation(format!("rppg_ptt_pairs: no rgb trace for site `{site}`")));
                }
            }
        }
        if let Some(f) = &self.frames {
            if !(f.fs > 0.0) {
                return Err(CliError::Validation(format!("frames.fs must be positive, got {}", f.fs)));
            }
        }
        if let Some(fs) = self.contact.as_ref().and_then(|c| c.fs) {
            if !(fs > 0.0) {
                return Err(CliError::Validation(format!("contact.fs must be positive, got {fs}")));
            }
        }
        Ok(())
    }

    fn synth_rgb_site(&self, site: &str) -> bool {
        self.synth.as_ref().is_some_and(|s| s.rgb_sites.iter().any(|r| r == site))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}
