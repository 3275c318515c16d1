//! Pipeline configuration: built-in defaults overridden by the manifest's
//! `config` object and then by a `--config` JSON file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use vitalsig::dsp::BandpassSpec;
use vitalsig::fusion::FusionConfig;
use vitalsig::ptt::PttConfig;
use vitalsig::respiration::RespConfig;
use vitalsig::rppg::{Method, RppgConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RppgSettings {
    pub methods: Vec<Method>,
    pub window_len: f64,
    pub bandpass: Option<BandpassSpec>,
}

impl Default for RppgSettings {
    fn default() -> Self {
        let base = RppgConfig::default();
        Self {
            methods: vec![Method::Chrom, Method::Pos],
            window_len: base.window_len,
            bandpass: base.bandpass,
        }
    }
}

impl RppgSettings {
    pub fn for_method(&self, method: Method) -> RppgConfig {
        RppgConfig {
            method,
            window_len: self.window_len,
            bandpass: self.bandpass,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HrSettings {
    /// STFT window, seconds.
    pub window: f64,
    /// STFT hop, seconds.
    pub hop: f64,
}

impl Default for HrSettings {
    fn default() -> Self {
        Self { window: 10.0, hop: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PttSettings {
    #[serde(flatten)]
    pub lag: PttConfig,
    /// Zero-phase bandpass applied to both waveforms before correlation.
    pub bandpass: BandpassSpec,
}

impl Default for PttSettings {
    fn default() -> Self {
        Self {
            lag: PttConfig::default(),
            bandpass: BandpassSpec::from_bpm(40.0, 180.0, 4),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    /// Vertical search range, pixels.
    pub search_px: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { search_px: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsSettings {
    /// Lag range for the maximum cross-correlation, seconds.
    pub mxcorr_max_lag: f64,
}

impl Default for StatsSettings {
    fn default() -> Self {
        Self { mxcorr_max_lag: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub fusion: FusionConfig,
    pub hr: HrSettings,
    pub rppg: RppgSettings,
    pub ptt: PttSettings,
    pub resp: RespConfig,
    pub flow: FlowConfig,
    pub stats: StatsSettings,
}

impl PipelineConfig {
    /// Defaults with each override object merged in order.
    pub fn with_overrides(overrides: &[&Value]) -> CliResult<Self> {
        let defaults = serde_json::to_value(Self::default()).expect("config serializes");
        let mut merged = defaults.clone();
        for o in overrides {
            check_known_keys(o, &defaults, "config")?;
            merge(&mut merged, o);
        }
        serde_json::from_value(merged).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load_override(path: &Path) -> CliResult<Value> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Rejects keys that do not exist in the defaults, so typos are not ignored.
fn check_known_keys(over: &Value, defaults: &Value, path: &str) -> CliResult<()> {
    let (Value::Object(o), Value::Object(d)) = (over, defaults) else {
        if over.is_object() && !defaults.is_object() && !defaults.is_null() {
            return Err(CliError::Validation(format!("{path}: expected a value, not an object")));
        }
        return Ok(());
    };
    for (k, v) in o {
        match d.get(k) {
            Some(dv) => check_known_keys(v, dv, &format!("{path}.{k}"))?,
            None => return Err(CliError::Validation(format!("{path}: unknown key `{k}`"))),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_match_documented_parameters() {
        let c = PipelineConfig::default();
        assert_eq!(c.fusion.window, 10.0);
        assert_eq!(c.fusion.delta_bpm, 30.0);
        assert_eq!(c.ptt.lag.window, 5.0);
        assert_eq!(c.ptt.lag.stride, 0.010);
        assert_eq!(c.ptt.lag.max_lag, 0.300);
        assert_eq!(c.ptt.lag.accept_lag, 0.200);
        assert_eq!(c.rppg.bandpass, Some(BandpassSpec::from_bpm(40.0, 180.0, 4)));
        assert_eq!(c.resp.ppg_band_bpm, (6.0, 24.0));
        assert_eq!(c.resp.ppg_order, 3);
    }

    #[test]
    fn overrides_merge_in_order() {
        let a = json!({"fusion": {"window": 8.0}, "ptt": {"max_lag": 0.25}});
        let b = json!({"fusion": {"delta_bpm": 20.0}});
        let c = PipelineConfig::with_overrides(&[&a, &b]).unwrap();
        assert_eq!(c.fusion.window, 8.0);
        assert_eq!(c.fusion.delta_bpm, 20.0);
        assert_eq!(c.ptt.lag.max_lag, 0.25);
        assert_eq!(c.ptt.lag.window, 5.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = json!({"fusion": {"windw": 8.0}});
        assert!(matches!(
            PipelineConfig::with_overrides(&[&bad]),
            Err(CliError::Validation(_))
        ));
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.fusion.window = 9.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn round_trips_through_json() {
        let c = PipelineConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), c);
    }
}
