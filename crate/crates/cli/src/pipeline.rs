//! Verb execution in dependency order with cached intermediate products.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use vitalsig::dsp::{self, butterworth_bandpass, filtfilt, RateSeries, HR_BAND};
use vitalsig::fusion::{self, GuideRate};
use vitalsig::ptt::{self, LagSeries, SiteAnalysisInput};
use vitalsig::respiration::{self, MotionMatrix};
use vitalsig::rppg::{self, Method};
use vitalsig::signal::io::{read_rgb_trace, read_table, write_table};
use vitalsig::signal::{resample, Interpolation};
use vitalsig::stats::{self, HrErrorReport};
use vitalsig::synth::{self, SubjectSpec};
use vitalsig::{ChannelSet, TimeSeries};

use crate::config::PipelineConfig;
use crate::error::{from_core, CliError, CliResult};
use crate::flow;
use crate::manifest::{ContactInput, FrameSynth, FramesInput, Manifest, SynthInput};
use crate::report::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verb {
    Synth,
    Flow,
    Fuse,
    Rppg,
    Ptt,
    RespPpg,
    RespMotion,
    Stats,
}

impl Verb {
    /// Execution order.
    pub const ALL: [Verb; 8] = [
        Verb::Synth,
        Verb::Flow,
        Verb::Fuse,
        Verb::Rppg,
        Verb::Ptt,
        Verb::RespPpg,
        Verb::RespMotion,
        Verb::Stats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Verb::Synth => "synth",
            Verb::Flow => "flow",
            Verb::Fuse => "fuse",
            Verb::Rppg => "rppg",
            Verb::Ptt => "ptt",
            Verb::RespPpg => "resp-ppg",
            Verb::RespMotion => "resp-motion",
            Verb::Stats => "stats",
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Verb {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Verb::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| CliError::Validation(format!("unknown verb `{s}`")))
    }
}

/// Parses a comma-separated verb list into execution order.
pub fn parse_verbs(list: &str) -> CliResult<Vec<Verb>> {
    let mut verbs = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Verb::from_str)
        .collect::<CliResult<Vec<_>>>()?;
    verbs.sort();
    verbs.dedup();
    Ok(verbs)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// `None` runs every verb the manifest has inputs for.
    pub verbs: Option<Vec<Verb>>,
    /// Overrides the synthetic subject's seed.
    pub seed: Option<u64>,
    /// Configuration override applied after the manifest's.
    pub config: Option<Value>,
}

pub const REPORT_FILE: &str = "report.json";

/// Runs the requested verbs and returns the report. Failures of individual
/// verbs are recorded in the report and do not stop later verbs.
pub fn run(manifest: Manifest, opts: &RunOptions) -> Report {
    let seed = opts
        .seed
        .or_else(|| manifest.synth.as_ref().map(|s| s.subject.seed));
    let overrides: Vec<&Value> = manifest.config.iter().chain(opts.config.iter()).collect();
    let cfg = match PipelineConfig::with_overrides(&overrides) {
        Ok(c) => c,
        Err(e) => {
            let mut report = Report::new(manifest.subject.clone(), String::new(), seed);
            report.push_error("config", &e);
            return report;
        }
    };
    let mut report = Report::new(manifest.subject.clone(), cfg.hash(), seed);
    let explicit = opts.verbs.is_some();
    let verbs = opts.verbs.clone().unwrap_or_else(|| Verb::ALL.to_vec());
    let mut p = Pipeline::new(manifest, cfg, opts.out_dir.clone(), opts.seed);
    for verb in verbs {
        if !explicit && !p.applicable(verb) {
            continue;
        }
        log::info!("{}: {verb}", p.m.subject);
        report.verbs.push(verb);
        if let Err(e) = p.execute(verb, &mut report) {
            log::warn!("{verb}: {e}");
            report.push_error(verb.name(), &e);
        }
    }
    report
}

struct Contact {
    channels: ChannelSet,
    guide: GuideRate,
}

struct Fused {
    waveform: TimeSeries,
    hr: RateSeries,
}

struct Estimate {
    waveform: TimeSeries,
    rate: RateSeries,
}

type Cached<T> = Option<CliResult<T>>;

fn cached<T>(slot: &mut Cached<T>, f: impl FnOnce() -> CliResult<T>) -> CliResult<&T> {
    if slot.is_none() {
        *slot = Some(f());
    }
    slot.as_ref().unwrap().as_ref().map_err(Clone::clone)
}

struct Pipeline {
    m: Manifest,
    cfg: PipelineConfig,
    out: PathBuf,
    seed: Option<u64>,
    contact: Cached<Contact>,
    fused: Cached<Fused>,
    flow_motion: Cached<MotionMatrix>,
    rppg: BTreeMap<(String, Method), CliResult<Estimate>>,
    contact_lags: BTreeMap<(String, String), CliResult<LagSeries>>,
    resp_ppg: Cached<Estimate>,
    resp_motion: Cached<(Estimate, respiration::MotionRespiration)>,
}

impl Pipeline {
    fn new(m: Manifest, cfg: PipelineConfig, out: PathBuf, seed: Option<u64>) -> Self {
        Self {
            m,
            cfg,
            out,
            seed,
            contact: None,
            fused: None,
            flow_motion: None,
            rppg: BTreeMap::new(),
            contact_lags: BTreeMap::new(),
            resp_ppg: None,
            resp_motion: None,
        }
    }

    fn applicable(&self, verb: Verb) -> bool {
        let m = &self.m;
        let synth = m.synth.as_ref();
        match verb {
            Verb::Synth => synth.is_some(),
            Verb::Flow => m.frames.is_some() || synth.is_some_and(|s| s.frames.is_some()),
            Verb::Fuse | Verb::RespPpg => m.contact.is_some() || synth.is_some_and(|s| !s.subject.sites.is_empty()),
            Verb::Rppg => !m.rgb.is_empty() || synth.is_some_and(|s| !s.rgb_sites.is_empty()),
            Verb::Ptt => !m.ptt_pairs.is_empty() || !m.rppg_ptt_pairs.is_empty(),
            Verb::RespMotion => {
                m.motion.is_some()
                    || m.frames.is_some()
                    || synth.is_some_and(|s| s.motion.is_some() || s.frames.is_some())
            }
            Verb::Stats => true,
        }
    }

    fn execute(&mut self, verb: Verb, report: &mut Report) -> CliResult<()> {
        match verb {
            Verb::Synth => report.synth = Some(self.synth()?),
            Verb::Flow => report.flow = Some(self.flow_verb()?),
            Verb::Fuse => report.fuse = Some(self.fuse_verb()?),
            Verb::Rppg => report.rppg = self.rppg_verb(report)?,
            Verb::Ptt => report.ptt = self.ptt_verb(report)?,
            Verb::RespPpg => report.resp_ppg = Some(self.resp_ppg_verb()?),
            Verb::RespMotion => report.resp_motion = Some(self.resp_motion_verb()?),
            Verb::Stats => report.stats = Some(self.stats_verb()?),
        }
        Ok(())
    }

    fn out_file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    // ---- inputs -------------------------------------------------------

    fn contact(&mut self) -> CliResult<&Contact> {
        let m = &self.m;
        cached(&mut self.contact, || {
            let input = m
                .contact
                .as_ref()
                .ok_or_else(|| CliError::Validation("manifest has no contact recording".into()))?;
            load_contact(m, input)
        })
    }

    fn motion(&mut self) -> CliResult<MotionMatrix> {
        if let Some(path) = &self.m.motion {
            return read_motion(&self.m.resolve(path));
        }
        self.flow_motion().cloned()
    }

    fn flow_motion(&mut self) -> CliResult<&MotionMatrix> {
        let (m, search) = (&self.m, self.cfg.flow.search_px);
        cached(&mut self.flow_motion, || {
            let frames = m
                .frames
                .as_ref()
                .ok_or_else(|| CliError::Validation("manifest has neither motion nor frames".into()))?;
            flow::flow_dir(&m.resolve(&frames.dir), frames.fs, frames.bbox, search).map_err(|e| match e {
                flow::FlowError::Core(c) => from_core("flow", c),
                flow::FlowError::Read { path, message } => CliError::Io { path, message },
                other => CliError::Validation(format!("flow: {other}")),
            })
        })
    }

    fn fused(&mut self) -> CliResult<&Fused> {
        if self.fused.is_none() {
            let cfg = self.cfg.fusion;
            let result = self.contact().and_then(|c| {
                let waveform = fusion::fuse(&c.channels, &c.guide, &cfg).map_err(|e| from_core("fuse", e))?;
                let hr = dsp::estimate_hr_series(&waveform, cfg.hr_window, cfg.hr_hop)
                    .map_err(|e| from_core("fuse", e))?;
                Ok(Fused { waveform, hr })
            });
            self.fused = Some(result);
        }
        self.fused.as_ref().unwrap().as_ref().map_err(Clone::clone)
    }

    fn rppg_estimate(&mut self, site: &str, method: Method) -> CliResult<&Estimate> {
        let key = (site.to_owned(), method);
        if !self.rppg.contains_key(&key) {
            let result = (|| {
                let path = self
                    .m
                    .rgb
                    .get(site)
                    .ok_or_else(|| CliError::Validation(format!("no rgb trace for site `{site}`")))?;
                let trace = read_rgb_trace(&self.m.resolve(path)).map_err(|e| from_core("rppg", e))?;
                let waveform =
                    rppg::extract(&trace, &self.cfg.rppg.for_method(method)).map_err(|e| from_core("rppg", e))?;
                let rate = dsp::estimate_hr_series(&waveform, self.cfg.hr.window, self.cfg.hr.hop)
                    .map_err(|e| from_core("rppg", e))?;
                Ok(Estimate { waveform, rate })
            })();
            self.rppg.insert(key.clone(), result);
        }
        self.rppg[&key].as_ref().map_err(Clone::clone)
    }

    fn contact_lags(&mut self, a: &str, b: &str) -> CliResult<&LagSeries> {
        let key = (a.to_owned(), b.to_owned());
        if !self.contact_lags.contains_key(&key) {
            let cfg = self.cfg.ptt;
            let result = self.contact().and_then(|c| {
                let x = c
                    .channels
                    .get(a)
                    .ok_or_else(|| CliError::Validation(format!("ptt: no contact channel `{a}`")))?;
                let y = c
                    .channels
                    .get(b)
                    .ok_or_else(|| CliError::Validation(format!("ptt: no contact channel `{b}`")))?;
                lag_series(x, y, &cfg, (a, b))
            });
            self.contact_lags.insert(key.clone(), result);
        }
        self.contact_lags[&key].as_ref().map_err(Clone::clone)
    }

    fn resp_ppg(&mut self) -> CliResult<&Estimate> {
        if self.resp_ppg.is_none() {
            let cfg = self.cfg.resp.clone();
            let result = self.contact().and_then(|c| {
                let waveform = respiration::resp_from_ppg(&c.channels, &cfg).map_err(|e| from_core("resp-ppg", e))?;
                let rate = respiration::estimate_resp_rate(&waveform, &cfg).map_err(|e| from_core("resp-ppg", e))?;
                Ok(Estimate { waveform, rate })
            });
            self.resp_ppg = Some(result);
        }
        self.resp_ppg.as_ref().unwrap().as_ref().map_err(Clone::clone)
    }

    fn resp_motion(&mut self) -> CliResult<&(Estimate, respiration::MotionRespiration)> {
        if self.resp_motion.is_none() {
            let cfg = self.cfg.resp.clone();
            let result = self.motion().and_then(|m| {
                let r = respiration::resp_from_motion(&m, &cfg).map_err(|e| from_core("resp-motion", e))?;
                let rate =
                    respiration::estimate_resp_rate(&r.waveform, &cfg).map_err(|e| from_core("resp-motion", e))?;
                Ok((
                    Estimate {
                        waveform: r.waveform.clone(),
                        rate,
                    },
                    r,
                ))
            });
            self.resp_motion = Some(result);
        }
        self.resp_motion.as_ref().unwrap().as_ref().map_err(Clone::clone)
    }

    // ---- verbs --------------------------------------------------------

    fn synth(&mut self) -> CliResult<SynthReport> {
        let input = self
            .m
            .synth
            .clone()
            .ok_or_else(|| CliError::Validation("synth verb needs a `synth` section".into()))?;
        let (generated, files) = write_synthetic(&self.m, &input, self.seed, &self.out)?;
        // Later verbs read the generated recording.
        let cfg = self.cfg.clone();
        *self = Pipeline::new(generated, cfg, self.out.clone(), self.seed);
        Ok(SynthReport {
            manifest: MANIFEST_FILE.to_owned(),
            files,
        })
    }

    fn flow_verb(&mut self) -> CliResult<FlowReport> {
        let frames = self.m.frames.as_ref().map(|f| f.fs);
        let m = self.flow_motion()?.clone();
        let name = "motion_flow.csv";
        write_motion(&self.out_file(name), &m)?;
        Ok(FlowReport {
            file: name.to_owned(),
            frames: m.rows() + 1,
            rows: m.rows(),
            fs: frames.unwrap_or(m.fs()),
        })
    }

    fn fuse_verb(&mut self) -> CliResult<FuseReport> {
        let channels: Vec<String> = self.contact()?.channels.names().map(str::to_owned).collect();
        let out = self.out.clone();
        let f = self.fused()?;
        write_series(&out.join("fused.csv"), "fused", &f.waveform)?;
        write_rate(&out.join("fused_hr.csv"), "bpm", &f.hr)?;
        Ok(FuseReport {
            waveform_file: "fused.csv".into(),
            hr_file: "fused_hr.csv".into(),
            channels,
            samples: f.waveform.len(),
            hr_windows: f.hr.len(),
            confident_windows: f.hr.confident.iter().filter(|c| **c).count(),
            mean_hr_bpm: f.hr.mean_confident(),
        })
    }

    fn rppg_verb(&mut self, report: &mut Report) -> CliResult<Vec<RppgEntry>> {
        if self.m.rgb.is_empty() {
            return Err(CliError::Validation("manifest has no rgb traces".into()));
        }
        let sites: Vec<String> = self.m.rgb.keys().cloned().collect();
        let methods = self.cfg.rppg.methods.clone();
        let mut entries = Vec::new();
        for site in &sites {
            for &method in &methods {
                let out = self.out.clone();
                let stem = format!("rppg_{site}_{}", method_name(method));
                let result = self.rppg_estimate(site, method).and_then(|e| {
                    write_series(&out.join(format!("{stem}.csv")), "pulse", &e.waveform)?;
                    write_rate(&out.join(format!("{stem}_hr.csv")), "bpm", &e.rate)?;
                    Ok(RppgEntry {
                        site: site.clone(),
                        method,
                        waveform_file: format!("{stem}.csv"),
                        hr_file: format!("{stem}_hr.csv"),
                        hr_windows: e.rate.len(),
                        confident_windows: e.rate.confident.iter().filter(|c| **c).count(),
                        mean_hr_bpm: e.rate.mean_confident(),
                    })
                });
                match result {
                    Ok(entry) => entries.push(entry),
                    Err(e) => report.push_error(&format!("rppg/{site}/{}", method_name(method)), &e),
                }
            }
        }
        Ok(entries)
    }

    fn ptt_verb(&mut self, report: &mut Report) -> CliResult<Vec<PttEntry>> {
        if self.m.ptt_pairs.is_empty() && self.m.rppg_ptt_pairs.is_empty() {
            return Err(CliError::Validation("manifest lists no ptt pairs".into()));
        }
        let accept = self.cfg.ptt.lag;
        let mut entries = Vec::new();
        for (a, b) in self.m.ptt_pairs.clone() {
            let file = format!("ptt_contact_{a}_{b}.csv");
            let out = self.out_file(&file);
            let result = self.contact_lags(&a, &b).and_then(|s| ptt_entry("contact", file, &out, s, &accept));
            match result {
                Ok(e) => entries.push(e),
                Err(e) => report.push_error(&format!("ptt/contact/{a}/{b}"), &e),
            }
        }
        if let Some(&method) = self.cfg.rppg.methods.first() {
            let cfg = self.cfg.ptt;
            for (a, b) in self.m.rppg_ptt_pairs.clone() {
                let name = method_name(method);
                let file = format!("ptt_rppg_{name}_{a}_{b}.csv");
                let out = self.out_file(&file);
                let result = (|| {
                    let x = self.rppg_estimate(&a, method)?.waveform.clone();
                    let y = self.rppg_estimate(&b, method)?.waveform.clone();
                    let series = lag_series(&x, &y, &cfg, (&a, &b))?;
                    ptt_entry(name, file, &out, &series, &accept)
                })();
                match result {
                    Ok(e) => entries.push(e),
                    Err(e) => report.push_error(&format!("ptt/{name}/{a}/{b}"), &e),
                }
            }
        }
        Ok(entries)
    }

    fn resp_ppg_verb(&mut self) -> CliResult<RespReport> {
        let out = self.out.clone();
        let e = self.resp_ppg()?;
        write_series(&out.join("resp_ppg.csv"), "resp", &e.waveform)?;
        write_rate(&out.join("resp_ppg_rate.csv"), "brpm", &e.rate)?;
        Ok(RespReport {
            waveform_file: "resp_ppg.csv".into(),
            rate_file: "resp_ppg_rate.csv".into(),
            windows: e.rate.len(),
            mean_rate_brpm: e.rate.mean_confident(),
            motion: None,
        })
    }

    fn resp_motion_verb(&mut self) -> CliResult<RespReport> {
        let source = if self.m.motion.is_some() { "motion" } else { "flow" };
        let out = self.out.clone();
        let (e, r) = self.resp_motion()?;
        write_series(&out.join("resp_motion.csv"), "resp", &e.waveform)?;
        write_rate(&out.join("resp_motion_rate.csv"), "brpm", &e.rate)?;
        Ok(RespReport {
            waveform_file: "resp_motion.csv".into(),
            rate_file: "resp_motion_rate.csv".into(),
            windows: e.rate.len(),
            mean_rate_brpm: e.rate.mean_confident(),
            motion: Some(MotionDiagnostics {
                source: source.into(),
                snr: finite(r.snr),
                low_confidence: r.low_confidence,
                selected: r.selected.clone(),
                rank_deficient: r.rank_deficient,
            }),
        })
    }

    fn stats_verb(&mut self) -> CliResult<StatsReport> {
        let mut out = StatsReport::default();
        let max_lag = self.cfg.stats.mxcorr_max_lag;

        let truth_hr = match &self.m.truth.hr {
            Some(p) => Some(read_rate(&self.m.resolve(p), self.cfg.hr.window, HR_BAND)?),
            None => None,
        };
        let truth_pulse = match &self.m.truth.pulse {
            Some(p) => Some(read_single(&self.m.resolve(p))?),
            None => None,
        };
        if let Some(truth) = &truth_hr {
            if self.m.contact.is_some() {
                match self.fused() {
                    Ok(f) => match rate_errors(truth, &f.hr, Some(&f.waveform), truth_pulse.as_ref(), max_lag) {
                        Ok(e) => out.hr.push(NamedErrors {
                            estimator: "fused".into(),
                            errors: e,
                        }),
                        Err(e) => out.skipped.push(format!("fused: {e}")),
                    },
                    Err(e) => out.skipped.push(format!("fused: {e}")),
                }
            }
            let sites: Vec<String> = self.m.rgb.keys().cloned().collect();
            for site in sites {
                for method in self.cfg.rppg.methods.clone() {
                    let label = format!("rppg/{site}/{}", method_name(method));
                    match self.rppg_estimate(&site, method) {
                        Ok(e) => match rate_errors(truth, &e.rate, Some(&e.waveform), truth_pulse.as_ref(), max_lag) {
                            Ok(r) => out.hr.push(NamedErrors {
                                estimator: label,
                                errors: r,
                            }),
                            Err(err) => out.skipped.push(format!("{label}: {err}")),
                        },
                        Err(err) => out.skipped.push(format!("{label}: {err}")),
                    }
                }
            }
        } else {
            out.skipped.push("pulse-rate errors: no truth.hr".into());
        }

        match &self.m.truth.resp {
            Some(p) => {
                let cfg = &self.cfg.resp;
                let band = dsp::RateBand::from_bpm(cfg.rate_band_bpm.0, cfg.rate_band_bpm.1);
                let truth = read_rate(&self.m.resolve(p), cfg.rate_window, band)?;
                if self.m.contact.is_some() {
                    match self.resp_ppg().and_then(|e| rate_errors(&truth, &e.rate, None, None, max_lag)) {
                        Ok(e) => out.resp.push(NamedErrors {
                            estimator: "resp-ppg".into(),
                            errors: e,
                        }),
                        Err(e) => out.skipped.push(format!("resp-ppg: {e}")),
                    }
                }
                if self.m.motion.is_some() || self.m.frames.is_some() {
                    match self.resp_motion().and_then(|(e, _)| rate_errors(&truth, &e.rate, None, None, max_lag)) {
                        Ok(e) => out.resp.push(NamedErrors {
                            estimator: "resp-motion".into(),
                            errors: e,
                        }),
                        Err(e) => out.skipped.push(format!("resp-motion: {e}")),
                    }
                }
            }
            None => out.skipped.push("breathing-rate errors: no truth.resp".into()),
        }

        let input = match &self.m.site_groups {
            Some(g) => Some(g.clone()),
            None => self.derived_site_groups(),
        };
        match input {
            Some(input) => match ptt::ptt_site_analysis(&input) {
                Ok(a) => out.site_analysis = Some(a),
                Err(e) => out.skipped.push(format!("site analysis: {e}")),
            },
            None => out.skipped.push("site analysis: fewer than two ptt groups".into()),
        }
        Ok(out)
    }

    /// One group per contact pair, holding its accepted window lags.
    fn derived_site_groups(&mut self) -> Option<SiteAnalysisInput> {
        if self.m.ptt_pairs.len() < 2 {
            return None;
        }
        let accept_ms = self.cfg.ptt.lag.accept_lag * 1000.0;
        let mut groups = Vec::new();
        for (a, b) in self.m.ptt_pairs.clone() {
            if let Ok(s) = self.contact_lags(&a, &b) {
                let lags: Vec<f64> = s.lags().filter(|l| l.abs() <= accept_ms).collect();
                groups.push((format!("{a}-{b}"), lags));
            }
        }
        (groups.len() >= 2).then(|| SiteAnalysisInput {
            groups,
            residuals: Vec::new(),
        })
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Chrom => "chrom",
        Method::Pos => "pos",
    }
}

fn lag_series(x: &TimeSeries, y: &TimeSeries, cfg: &crate::config::PttSettings, pair: (&str, &str)) -> CliResult<LagSeries> {
    let coeffs = butterworth_bandpass(cfg.bandpass, x.fs()).map_err(|e| from_core("ptt", e))?;
    let fx = filtfilt(&coeffs, x).map_err(|e| from_core("ptt", e))?;
    let fy = filtfilt(&coeffs, y).map_err(|e| from_core("ptt", e))?;
    ptt::sliding_xcorr_lag(&fx, &fy, &cfg.lag, pair).map_err(|e| from_core("ptt", e))
}

fn ptt_entry(source: &str, file: String, path: &Path, s: &LagSeries, cfg: &ptt::PttConfig) -> CliResult<PttEntry> {
    write_lags(path, s)?;
    let summary = match ptt::ptt_summary(s, cfg) {
        Ok(sum) => Some(sum),
        Err(vitalsig::Error::AllRejected) => None,
        Err(e) => return Err(from_core("ptt", e)),
    };
    Ok(PttEntry {
        source: source.to_owned(),
        file,
        windows: s.len(),
        weak_windows: (0..s.len()).filter(|&i| s.is_weak(i)).count(),
        summary,
    })
}

fn rate_errors(
    truth: &RateSeries,
    pred: &RateSeries,
    wave: Option<&TimeSeries>,
    truth_wave: Option<&TimeSeries>,
    max_lag: f64,
) -> CliResult<HrErrorReport> {
    let (t, p) = stats::align_rate_series(truth, pred);
    let errors = stats::hr_errors(&t, &p).map_err(|e| from_core("stats", e))?;
    let (mut r_wave, mut mx) = (None, None);
    if let (Some(w), Some(tw)) = (wave, truth_wave) {
        let tw = if (tw.fs() - w.fs()).abs() > 1e-9 * w.fs() {
            resample(tw, w.fs(), Interpolation::Cubic).map_err(|e| from_core("stats", e))?
        } else {
            tw.clone()
        };
        r_wave = stats::waveform_corr(&tw, w).ok().and_then(finite);
        mx = stats::mxcorr(&tw, w, max_lag).ok().and_then(|(r, _)| finite(r));
    }
    Ok(HrErrorReport::new(errors, r_wave, mx))
}

// ---- file formats ------------------------------------------------------

pub const MANIFEST_FILE: &str = "manifest.json";

fn core_io(e: vitalsig::Error) -> CliError {
    from_core("io", e)
}

fn load_contact(m: &Manifest, input: &ContactInput) -> CliResult<Contact> {
    let path = m.resolve(&input.file);
    let table = read_table(&path).map_err(core_io)?;
    if let Some(fs) = input.fs {
        if (fs - table.fs).abs() > 1e-6 * fs {
            return Err(CliError::Validation(format!(
                "{}: manifest says {fs} Hz, file is sampled at {} Hz",
                path.display(),
                table.fs
            )));
        }
    }
    let mut channels = ChannelSet::new();
    for (name, col) in table.names.iter().zip(table.columns) {
        let ts = TimeSeries::with_offset(col, table.fs, table.t0.max(0.0)).map_err(|e| from_core("contact", e))?;
        channels.insert(name.clone(), ts).map_err(|e| from_core("contact", e))?;
    }
    let guide_path = m.resolve(&input.guide);
    let g = read_table(&guide_path).map_err(core_io)?;
    let col = g
        .names
        .iter()
        .position(|n| n == "bpm")
        .ok_or_else(|| CliError::Validation(format!("{}: expected a `bpm` column", guide_path.display())))?;
    let t = (0..g.columns[col].len()).map(|i| g.t0 + i as f64 / g.fs).collect();
    let guide = GuideRate::new(t, g.columns[col].clone()).map_err(|e| from_core("guide", e))?;
    Ok(Contact { channels, guide })
}

fn read_single(path: &Path) -> CliResult<TimeSeries> {
    let table = read_table(path).map_err(core_io)?;
    let col = table.columns.into_iter().next().expect("parser requires a value column");
    TimeSeries::with_offset(col, table.fs, table.t0.max(0.0)).map_err(|e| from_core("io", e))
}

/// Reads a `t,<rate>[,confident]` file of window centres.
pub fn read_rate(path: &Path, window: f64, band: dsp::RateBand) -> CliResult<RateSeries> {
    let table = read_table(path).map_err(core_io)?;
    let n = table.columns[0].len();
    let confident = match table.names.iter().position(|n| n == "confident") {
        Some(c) => table.columns[c].iter().map(|v| *v != 0.0).collect(),
        None => vec![true; n],
    };
    Ok(RateSeries {
        centers: (0..n).map(|i| table.t0 + i as f64 / table.fs).collect(),
        rate: table.columns[0].clone(),
        confident,
        window,
        hop: 1.0 / table.fs,
        band,
    })
}

pub fn write_rate(path: &Path, name: &str, r: &RateSeries) -> CliResult<()> {
    let confident: Vec<f64> = r.confident.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
    let t0 = r.centers.first().copied().unwrap_or(0.0);
    write_table(path, &[name, "confident"], t0, 1.0 / r.hop, &[&r.rate, &confident]).map_err(core_io)
}

fn write_series(path: &Path, name: &str, ts: &TimeSeries) -> CliResult<()> {
    write_table(path, &[name], ts.t0(), ts.fs(), &[ts.samples()]).map_err(core_io)
}

fn motion_names() -> Vec<String> {
    (0..MotionMatrix::COLUMNS).map(|c| format!("c{c:02}")).collect()
}

pub fn write_motion(path: &Path, m: &MotionMatrix) -> CliResult<()> {
    let names = motion_names();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let cols: Vec<Vec<f64>> = (0..MotionMatrix::COLUMNS).map(|c| m.column(c)).collect();
    let cols: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    write_table(path, &names, 0.0, m.fs(), &cols).map_err(core_io)
}

pub fn read_motion(path: &Path) -> CliResult<MotionMatrix> {
    let table = read_table(path).map_err(core_io)?;
    if table.names != motion_names() {
        return Err(CliError::Validation(format!("{}: expected header `t,c00..c99`", path.display())));
    }
    MotionMatrix::from_columns(&table.columns, table.fs).map_err(|e| from_core("motion", e))
}

fn write_lags(path: &Path, s: &LagSeries) -> CliResult<()> {
    use std::fmt::Write as _;
    let mut text = String::from("center_s,lag_ms,peak_r\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for i in 0..s.len() {
        let _ = writeln!(text, "{},{},{}", s.centers[i], opt(s.lag_ms[i]), opt(s.peak_r[i]));
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Generates a synthetic recording into `out` and returns a manifest that
/// reads it back, with the list of files written.
fn write_synthetic(base: &Manifest, input: &SynthInput, seed: Option<u64>, out: &Path) -> CliResult<(Manifest, Vec<String>)> {
    let mut spec: SubjectSpec = input.subject.clone();
    if let Some(s) = seed {
        spec.seed = s;
    }
    let core = |e| from_core("synth", e);
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut m = Manifest::new(base.subject.clone());
    m.ptt_pairs = base.ptt_pairs.clone();
    m.rppg_ptt_pairs = base.rppg_ptt_pairs.clone();
    m.site_groups = base.site_groups.clone();
    m.config = base.config.clone();
    m.base_dir = out.to_path_buf();
    let mut files = Vec::new();

    if !spec.sites.is_empty() {
        let rec = synth::gen_contact_channels(&spec).map_err(core)?;
        let names: Vec<&str> = rec.channels.names().collect();
        let cols: Vec<&[f64]> = rec.channels.iter().map(|(_, ts)| ts.samples()).collect();
        let file = emit(out, &mut files, "contact.csv", |p| write_table(p, &names, 0.0, spec.contact_fs, &cols).map_err(core_io))?;
        let guide = emit(out, &mut files, "guide.csv", |p| {
            write_table(p, &["bpm"], 0.0, spec.guide_fs, &[&rec.guide.bpm]).map_err(core_io)
        })?;
        m.contact = Some(ContactInput {
            file,
            guide,
            fs: Some(spec.contact_fs),
        });
        m.truth.hr = Some(emit(out, &mut files, "truth_hr.csv", |p| write_rate(p, "bpm", &rec.truth))?);
        let n = (spec.duration * spec.contact_fs).round() as usize;
        let pulse = TimeSeries::from_fn(n, spec.contact_fs, |t| spec.pulse(t)).map_err(core)?;
        m.truth.pulse = Some(emit(out, &mut files, "truth_pulse.csv", |p| write_series(p, "pulse", &pulse))?);
    }

    for site in &input.rgb_sites {
        let trace = synth::gen_rgb_trace(&spec, site, &input.rgb).map_err(core)?;
        let name = format!("rgb_{site}.csv");
        let path = emit(out, &mut files, &name, |p| {
            vitalsig::signal::io::write_rgb_trace(p, &trace).map_err(core_io)
        })?;
        m.rgb.insert(site.clone(), path);
    }

    if let Some(opts) = &input.motion {
        let (motion, truth) = synth::gen_motion_matrix(&spec, opts).map_err(core)?;
        m.motion = Some(emit(out, &mut files, "motion.csv", |p| write_motion(p, &motion))?);
        m.truth.resp = Some(emit(out, &mut files, "truth_resp.csv", |p| write_rate(p, "brpm", &truth))?);
    }

    if let Some(fr) = &input.frames {
        let dir = out.join("frames");
        let n = render_frames(&spec, fr, &dir)?;
        files.push("frames/".into());
        m.frames = Some(FramesInput {
            dir: PathBuf::from("frames"),
            fs: fr.fs,
            bbox: Some([fr.margin, fr.margin, fr.width - 2 * fr.margin, fr.height - 2 * fr.margin]),
        });
        if m.truth.resp.is_none() {
            let band = dsp::RateBand::from_bpm(6.0, 30.0);
            let truth = synth::windowed_true_rate(&spec.resp, fr.fs, n - 1, 30.0, 1.0, band);
            m.truth.resp = Some(emit(out, &mut files, "truth_resp.csv", |p| write_rate(p, "brpm", &truth))?);
        }
    }

    let text = m.to_json();
    std::fs::write(out.join(MANIFEST_FILE), text).map_err(|e| CliError::io(&out.join(MANIFEST_FILE), e))?;
    files.push(MANIFEST_FILE.to_owned());
    Ok((m, files))
}

fn emit(out: &Path, files: &mut Vec<String>, name: &str, f: impl FnOnce(&Path) -> CliResult<()>) -> CliResult<PathBuf> {
    f(&out.join(name))?;
    files.push(name.to_owned());
    Ok(PathBuf::from(name))
}

/// Writes `frame_NNNNN.pgm` files of a texture displaced vertically by the
/// subject's breathing. Returns the frame count.
pub fn render_frames(spec: &SubjectSpec, fr: &FrameSynth, dir: &Path) -> CliResult<usize> {
    if fr.width <= 2 * fr.margin || fr.height <= 2 * fr.margin || !(fr.fs > 0.0) {
        return Err(CliError::Validation("synth.frames: margin leaves no bounding box".into()));
    }
    let noise = Normal::new(0.0, fr.noise_sigma)
        .map_err(|e| CliError::Validation(format!("synth.frames.noise_sigma: {e}")))?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let n = (spec.duration * fr.fs).round() as usize;
    use rayon::prelude::*;
    (0..n).into_par_iter().try_for_each(|i| {
        let shift = fr.amplitude_px * spec.breathing(i as f64 / fr.fs);
        let mut frame = flow::render_shifted(fr.width, fr.height, shift);
        // One stream per frame keeps the output independent of scheduling.
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        frame.pixels.iter_mut().for_each(|p| *p += noise.sample(&mut rng));
        flow::write_pgm(&dir.join(format!("frame_{i:05}.pgm")), &frame).map_err(|e| CliError::Runtime(e.to_string()))
    })?;
    Ok(n)
}
