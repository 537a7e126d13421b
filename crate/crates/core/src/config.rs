//! Experiment configuration: TOML files with device, workload, sweep and
//! output sections, shipped presets, validation and sweep expansion.
//!
//! A file may start from a preset with `preset = "<name>"`; its own keys
//! are merged on top. Unknown keys anywhere are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::FirmwareLatency;
use crate::dram::{DramConfig, PagePolicy};
use crate::flash::{FlashGeometry, FlashTimingParams};
use crate::ftl::FtlConfig;
use crate::hil::InterfaceConfig;
use crate::icl::CacheConfig;
use crate::metrics::EnergyTable;
use crate::time::SimTime;
use crate::workload::WorkloadSpec;

pub const PRESETS: &[(&str, &str)] = &[
    ("intel750-like", include_str!("../presets/intel750-like.toml")),
    ("fast-flash", include_str!("../presets/fast-flash.toml")),
    ("tiny", include_str!("../presets/tiny.toml")),
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

/// Flash timings in microseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingConfig {
    pub t_read_fast_us: f64,
    pub t_read_slow_us: f64,
    pub t_prog_fast_us: f64,
    pub t_prog_slow_us: f64,
    pub t_erase_us: f64,
    pub channel_mhz: f64,
    pub bus_width_bits: u32,
    pub ddr: bool,
    pub command_cycles: u32,
    pub slow_page_pattern: Vec<bool>,
}

impl Default for TimingConfig {
    fn default() -> Self {
        let t = crate::flash::mlc_table_timings();
        TimingConfig {
            t_read_fast_us: 59.975,
            t_read_slow_us: 104.956,
            t_prog_fast_us: 820.62,
            t_prog_slow_us: 2250.0,
            t_erase_us: 3000.0,
            channel_mhz: t.channel_mhz,
            bus_width_bits: t.bus_width_bits,
            ddr: t.ddr,
            command_cycles: t.command_cycles,
            slow_page_pattern: t.slow_page_pattern,
        }
    }
}

impl TimingConfig {
    pub fn to_params(&self) -> FlashTimingParams {
        FlashTimingParams {
            t_read_fast: SimTime::from_us_f64(self.t_read_fast_us),
            t_read_slow: SimTime::from_us_f64(self.t_read_slow_us),
            t_prog_fast: SimTime::from_us_f64(self.t_prog_fast_us),
            t_prog_slow: SimTime::from_us_f64(self.t_prog_slow_us),
            t_erase: SimTime::from_us_f64(self.t_erase_us),
            channel_mhz: self.channel_mhz,
            bus_width_bits: self.bus_width_bits,
            ddr: self.ddr,
            command_cycles: self.command_cycles,
            slow_page_pattern: self.slow_page_pattern.clone(),
        }
    }
}

/// Controller DRAM with timings in nanoseconds and size in MiB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DramSection {
    pub size_mb: u64,
    pub channels: u32,
    pub ranks: u32,
    pub banks: u32,
    pub chips: u32,
    pub bus_width_bits: u32,
    pub t_rp_ns: f64,
    pub t_rcd_ns: f64,
    pub t_cl_ns: f64,
    pub burst_bytes: u32,
    pub io_mhz: f64,
    pub ddr: bool,
    pub row_bytes: u32,
    pub page_policy: PagePolicy,
}

impl Default for DramSection {
    fn default() -> Self {
        let d = DramConfig::ddr3l_1600(1 << 30);
        DramSection {
            size_mb: 1024,
            channels: d.channels,
            ranks: d.ranks,
            banks: d.banks,
            chips: d.chips,
            bus_width_bits: d.bus_width_bits,
            t_rp_ns: 13.75,
            t_rcd_ns: 13.75,
            t_cl_ns: 13.75,
            burst_bytes: d.burst_bytes,
            io_mhz: d.io_mhz,
            ddr: d.ddr,
            row_bytes: d.row_bytes,
            page_policy: d.page_policy,
        }
    }
}

impl DramSection {
    pub fn to_config(&self, energy: &EnergyTable) -> DramConfig {
        DramConfig {
            size_bytes: self.size_mb << 20,
            channels: self.channels,
            ranks: self.ranks,
            banks: self.banks,
            chips: self.chips,
            bus_width_bits: self.bus_width_bits,
            t_rp: SimTime::from_ns_f64(self.t_rp_ns),
            t_rcd: SimTime::from_ns_f64(self.t_rcd_ns),
            t_cl: SimTime::from_ns_f64(self.t_cl_ns),
            burst_bytes: self.burst_bytes,
            io_mhz: self.io_mhz,
            ddr: self.ddr,
            row_bytes: self.row_bytes,
            page_policy: self.page_policy,
            energy_per_burst_nj: energy.dram_burst_nj,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct DeviceConfig {
    pub geometry: Option<FlashGeometry>,
    pub timing: TimingConfig,
    pub dram: DramSection,
    pub icl: CacheConfig,
    pub ftl: FtlConfig,
    pub interface: InterfaceConfig,
    pub firmware_latency: FirmwareLatency,
    pub energy: EnergyTable,
}


impl DeviceConfig {
    /// Geometry of a validated config.
    pub fn geometry(&self) -> &FlashGeometry {
        self.geometry.as_ref().expect("validated config has a geometry")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<ReportFormat>,
    /// Write one CSV row per command for each sweep point.
    pub command_records: bool,
    /// Write the flash transaction log for each sweep point.
    pub transaction_log: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            formats: vec![ReportFormat::Csv, ReportFormat::Json],
            command_records: false,
            transaction_log: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Preset the file was layered on, if any.
    pub preset: Option<String>,
    pub seed: u64,
    pub device: Option<DeviceConfig>,
    pub workload: Option<WorkloadSpec>,
    /// Dotted config key -> values; points are the cartesian product in key
    /// order.
    pub sweep: BTreeMap<String, Vec<toml::Value>>,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            preset: None,
            seed: 1,
            device: None,
            workload: None,
            sweep: BTreeMap::new(),
            output: OutputConfig::default(),
        }
    }
}

/// One expanded sweep point.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub index: usize,
    pub label: String,
    pub params: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Nested `[sweep.section]` tables flatten to dotted keys.
fn flatten_sweep(prefix: &str, v: &toml::Value, out: &mut toml::map::Map<String, toml::Value>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_sweep(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

fn parse_value(text: &str) -> Result<toml::Value, ConfigError> {
    text.parse::<toml::Table>()
        .map(toml::Value::Table)
        .map_err(|e| ConfigError::Parse(e.to_string()))
}

/// Resolves `preset` layering and sweep flattening on a raw document.
fn resolve(mut v: toml::Value) -> Result<toml::Value, ConfigError> {
    if let Some(name) = v.get("preset").cloned() {
        let name = name
            .as_str()
            .ok_or_else(|| ConfigError::Invalid(vec!["preset must be a string".into()]))?
            .to_string();
        let text = preset_text(&name).ok_or_else(|| {
            let known: Vec<_> = PRESETS.iter().map(|p| p.0).collect();
            ConfigError::Invalid(vec![format!("unknown preset {name:?} (known: {})", known.join(", "))])
        })?;
        let mut base = parse_value(text)?;
        merge(&mut base, v);
        v = base;
    }
    if let Some(s) = v.get("sweep").cloned() {
        let mut flat = toml::map::Map::new();
        flatten_sweep("", &s, &mut flat);
        v.as_table_mut()
            .expect("document is a table")
            .insert("sweep".into(), toml::Value::Table(flat));
    }
    Ok(v)
}

/// Deserializes and reports every unknown key instead of stopping at one.
fn from_value(v: toml::Value) -> Result<(ExperimentConfig, Vec<String>), ConfigError> {
    let mut unknown = Vec::new();
    let cfg: ExperimentConfig = serde_ignored::deserialize(v, |path| {
        unknown.push(format!("unknown key `{}`", path.to_string().replace(".?", "")));
    })
    .map_err(|e| ConfigError::Parse(e.to_string()))?;
    Ok((cfg, unknown))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let v = resolve(parse_value(text)?)?;
        let (cfg, mut problems) = from_value(v)?;
        problems.extend(cfg.problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        Self::from_toml_str(&format!("preset = {name:?}\n"))
    }

    pub fn device(&self) -> &DeviceConfig {
        self.device.as_ref().expect("validated config has a device")
    }

    pub fn device_mut(&mut self) -> &mut DeviceConfig {
        self.device.as_mut().expect("validated config has a device")
    }

    pub fn workload(&self) -> &WorkloadSpec {
        self.workload.as_ref().expect("validated config has a workload")
    }

    pub fn workload_mut(&mut self) -> &mut WorkloadSpec {
        self.workload.as_mut().expect("validated config has a workload")
    }

    /// Every violation found, without building anything.
    pub fn problems(&self) -> Vec<String> {
        let mut bad = Vec::new();
        match &self.device {
            None => bad.push("missing section [device]".into()),
            Some(d) => {
                match &d.geometry {
                    None => bad.push("missing section [device.geometry]".into()),
                    Some(g) => {
                        if let Err(e) = g.validate() {
                            bad.push(e);
                        }
                    }
                }
                if let Err(e) = d.timing.to_params().validate() {
                    bad.push(e);
                }
                if let Err(e) = d.dram.to_config(&d.energy).validate() {
                    bad.push(e);
                }
                bad.extend(d.icl.validate());
                bad.extend(d.ftl.validate());
                bad.extend(d.interface.validate());
                bad.extend(d.firmware_latency.validate());
                bad.extend(d.energy.validate());
            }
        }
        match &self.workload {
            None => bad.push("missing section [workload]".into()),
            Some(w) => bad.extend(w.validate()),
        }
        if self.output.formats.is_empty() {
            bad.push("output.formats must name at least one format".into());
        }
        for (k, vals) in &self.sweep {
            if vals.is_empty() {
                bad.push(format!("sweep.{k} has no values"));
            }
        }
        bad
    }

    /// Stable hash of the effective configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replaces the configured sweep; values are parsed as TOML scalars and
    /// fall back to strings.
    pub fn set_sweep_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (key, vals) = spec
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid(vec![format!("--sweep {spec:?}: expected KEY=V1,V2,...")]))?;
        let values = vals
            .split(',')
            .map(|v| {
                format!("v = {v}")
                    .parse::<toml::Table>()
                    .ok()
                    .and_then(|mut t| t.remove("v"))
                    .unwrap_or_else(|| toml::Value::String(v.to_string()))
            })
            .collect();
        self.sweep.clear();
        self.sweep.insert(key.trim().to_string(), values);
        Ok(())
    }

    /// Sets one dotted key and re-validates. Unknown keys are rejected.
    pub fn with_override(&self, key: &str, value: toml::Value) -> Result<Self, ConfigError> {
        let mut v = toml::Value::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let parts: Vec<&str> = key.split('.').collect();
        let mut cur = &mut v;
        for p in &parts[..parts.len() - 1] {
            let t = cur
                .as_table_mut()
                .ok_or_else(|| ConfigError::Invalid(vec![format!("sweep key `{key}`: `{p}` is not a section")]))?;
            cur = t
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
        }
        cur.as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(vec![format!("sweep key `{key}` does not name a field")]))?
            .insert(parts[parts.len() - 1].to_string(), value);
        let (cfg, mut problems) = from_value(v)?;
        problems.extend(cfg.problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }

    /// Expands the sweep into independent configs (one point when empty).
    pub fn points(&self) -> Result<Vec<SweepPoint>, ConfigError> {
        let mut base = self.clone();
        base.sweep.clear();
        let keys: Vec<(&String, &Vec<toml::Value>)> = self.sweep.iter().collect();
        let total: usize = keys.iter().map(|(_, v)| v.len()).product();
        let mut out = Vec::with_capacity(total);
        for index in 0..total {
            let mut rem = index;
            let mut cfg = base.clone();
            let mut params = BTreeMap::new();
            let mut choice = vec![0; keys.len()];
            for (i, (_, vals)) in keys.iter().enumerate().rev() {
                choice[i] = rem % vals.len();
                rem /= vals.len();
            }
            for (i, (k, vals)) in keys.iter().enumerate() {
                let v = vals[choice[i]].clone();
                cfg = cfg.with_override(k, v.clone())?;
                params.insert(k.to_string(), v.to_string().trim_matches('"').to_string());
            }
            let label = if params.is_empty() {
                "base".to_string()
            } else {
                params
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            out.push(SweepPoint {
                index,
                label,
                params,
                config: cfg,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_lists_required_sections() {
        match ExperimentConfig::from_toml_str("") {
            Err(ConfigError::Invalid(v)) => {
                assert!(v.iter().any(|e| e.contains("[device]")));
                assert!(v.iter().any(|e| e.contains("[workload]")));
            }
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn op_ratio_out_of_range() {
        let t = "preset = \"tiny\"\n[device.ftl]\nop_ratio = 1.5\n";
        match ExperimentConfig::from_toml_str(t) {
            Err(ConfigError::Invalid(v)) => assert!(v.iter().any(|e| e.contains("op_ratio"))),
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_all_reported() {
        let t = "preset = \"tiny\"\n[device.ftl]\nop_ration = 0.1\n[workload]\nqueue_dept = 3\n";
        match ExperimentConfig::from_toml_str(t) {
            Err(ConfigError::Invalid(v)) => {
                assert!(v.iter().any(|e| e.contains("device.ftl.op_ration")), "{v:?}");
                assert!(v.iter().any(|e| e.contains("workload.queue_dept")), "{v:?}");
            }
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn sweep_expands_cartesian() {
        let t = "preset = \"tiny\"\n[sweep]\n\"workload.queue_depth\" = [1, 2]\n[sweep.device.ftl]\nop_ratio = [0.2, 0.1, 0.05]\n";
        let c = ExperimentConfig::from_toml_str(t).unwrap();
        let p = c.points().unwrap();
        assert_eq!(p.len(), 6);
        // keys sort as device.ftl.op_ratio, workload.queue_depth; the last varies fastest
        assert_eq!(p[1].config.device().ftl.op_ratio, 0.2);
        assert_eq!(p[1].config.workload().queue_depth, 2);
        assert_eq!(p[2].config.device().ftl.op_ratio, 0.1);
        assert_eq!(p[2].config.workload().queue_depth, 1);
        assert_eq!(p[5].label, "device.ftl.op_ratio=0.05,workload.queue_depth=2");
        assert!(p.iter().all(|x| x.config.sweep.is_empty()));
    }

    #[test]
    fn sweep_typo_is_rejected() {
        let mut c = ExperimentConfig::preset("tiny").unwrap();
        c.set_sweep_override("workload.queue_dpth=1,2").unwrap();
        assert!(c.points().is_err());
        c.set_sweep_override("device.interface.kind=nvme,sata").unwrap();
        let p = c.points().unwrap();
        assert!(p[1].config.device().interface.kind.is_htype());
    }

    #[test]
    fn hash_is_stable() {
        let a = ExperimentConfig::preset("tiny").unwrap();
        let b = ExperimentConfig::preset("tiny").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
