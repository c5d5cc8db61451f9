//! Scenario and sweep configuration.
//!
//! Configuration files are TOML: flat `key = value` pairs grouped under one
//! section per concern (`[scenario]`, `[radio.main]`, `[radio.wur]`,
//! `[medium]`, `[dora]`, `[bmac]`, `[csma154]`, `[sweep]`). Every key is
//! optional; omitted keys take the defaults below, which reproduce the
//! evaluation setup. Quantities are in SI units (seconds, amperes, volts,
//! metres) unless the key name says otherwise.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{DataFrame, MacAddr, WakeUpCallFrame};
use crate::kernel::SimDuration;
use crate::medium::{dbm_to_mw, PropagationModel};
use crate::radio::RadioParams;

#[derive(Debug, Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Dora,
    Bmac,
    Csma154,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Dora, Protocol::Bmac, Protocol::Csma154];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Dora => "dora",
            Protocol::Bmac => "bmac",
            Protocol::Csma154 => "csma154",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dora" => Ok(Protocol::Dora),
            "bmac" | "b-mac" => Ok(Protocol::Bmac),
            "csma154" | "802.15.4" | "csma" => Ok(Protocol::Csma154),
            other => Err(format!("unknown protocol `{other}` (expected dora, bmac or csma154)")),
        }
    }
}

/// Whether `t_ipa` is each node's reporting period or the spacing between
/// consecutive receptions at the base station.
#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IpaScope {
    Node,
    Bs,
}

#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Traffic {
    Periodic,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Placement {
    /// Only `"uniform-random"` is recognised.
    Named(String),
    Coordinates(Vec<[f64; 2]>),
}

#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BsIdleMode {
    Rx,
    Sleep,
}

#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreambleMode {
    Carrier,
    Microframe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub protocol: Protocol,
    pub n_nodes: usize,
    pub arena_m: [f64; 2],
    /// Base station position; defaults to the arena centre.
    pub bs_position_m: Option<[f64; 2]>,
    pub placement: Placement,
    pub payload_bytes: u16,
    pub header_bytes: u16,
    pub queue_len: usize,
    pub duration_s: f64,
    pub seed: u64,
    pub t_ipa_s: f64,
    pub ipa_scope: IpaScope,
    pub traffic: Traffic,
    /// Upper bound of the uniform per-packet generation offset.
    pub app_jitter_s: f64,
    /// Periodic sources stop generating this long before the end of the run
    /// so every packet has a determined fate.
    pub traffic_guard_s: f64,
    pub battery_mah: f64,
    pub include_bs_in_average: bool,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            protocol: Protocol::Dora,
            n_nodes: 5,
            arena_m: [20.0, 20.0],
            bs_position_m: None,
            placement: Placement::Named("uniform-random".into()),
            payload_bytes: 100,
            header_bytes: 12,
            queue_len: 10,
            duration_s: 3600.0,
            seed: 1,
            t_ipa_s: 15.0,
            ipa_scope: IpaScope::Node,
            traffic: Traffic::Periodic,
            app_jitter_s: 0.1,
            traffic_guard_s: 30.0,
            battery_mah: 2900.0,
            include_bs_in_average: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MainRadioSection {
    pub supply_voltage_v: f64,
    pub sleep_current_a: f64,
    pub rx_current_a: f64,
    pub tx_current_a: f64,
    pub bitrate_bps: u64,
    pub switch_time_s: f64,
}

impl Default for MainRadioSection {
    fn default() -> Self {
        MainRadioSection {
            supply_voltage_v: 3.3,
            sleep_current_a: 900e-9,
            rx_current_a: 16.6e-3,
            tx_current_a: 21.2e-3,
            bitrate_bps: 250_000,
            switch_time_s: 300e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WurSection {
    pub sleep_current_a: f64,
    pub rx_current_a: f64,
    pub active_current_a: f64,
    pub bitrate_bps: u64,
}

impl Default for WurSection {
    fn default() -> Self {
        WurSection {
            sleep_current_a: 200e-9,
            rx_current_a: 1.1e-6,
            active_current_a: 9e-3,
            bitrate_bps: 32_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioSection {
    pub main: MainRadioSection,
    pub wur: WurSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediumSection {
    pub tx_power_dbm: f64,
    pub data_sensitivity_dbm: f64,
    pub path_loss_exponent: f64,
    pub reference_distance_m: f64,
    pub reference_loss_db: f64,
    pub max_range_m: f64,
}

impl Default for MediumSection {
    fn default() -> Self {
        let m = PropagationModel::default();
        MediumSection {
            tx_power_dbm: 0.0,
            data_sensitivity_dbm: -95.0,
            path_loss_exponent: m.exponent,
            reference_distance_m: m.reference_distance_m,
            reference_loss_db: m.reference_loss_db,
            max_range_m: m.max_range_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoraSection {
    pub timeout_window_s: f64,
    pub preamble_s: f64,
    pub decider_min_duration_s: f64,
    pub wakeup_threshold_dbm: f64,
    pub bs_idle_mode: BsIdleMode,
    /// Nodes (zero-based) whose wake-up receiver is switched off.
    pub dead_nodes: Vec<usize>,
}

impl Default for DoraSection {
    fn default() -> Self {
        DoraSection {
            timeout_window_s: 10e-3,
            preamble_s: 5e-3,
            decider_min_duration_s: 4.5e-3,
            wakeup_threshold_dbm: -55.0,
            bs_idle_mode: BsIdleMode::Rx,
            dead_nodes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BmacSection {
    pub slot_duration_s: f64,
    pub check_interval_s: f64,
    pub cca_s: f64,
    pub preamble_mode: PreambleMode,
    pub microframe_bytes: u16,
}

impl Default for BmacSection {
    fn default() -> Self {
        BmacSection {
            slot_duration_s: 1.0,
            check_interval_s: 10e-3,
            cca_s: 128e-6,
            preamble_mode: PreambleMode::Microframe,
            microframe_bytes: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsmaSection {
    pub min_be: u8,
    pub max_be: u8,
    pub max_csma_backoffs: u8,
    pub cca_s: f64,
    pub unit_backoff_s: f64,
}

impl Default for CsmaSection {
    fn default() -> Self {
        CsmaSection {
            min_be: 3,
            max_be: 5,
            max_csma_backoffs: 4,
            cca_s: 128e-6,
            unit_backoff_s: 320e-6,
        }
    }
}

/// Default swept inter-packet-arrival points, seconds. Nothing below 5 s:
/// five B-MAC senders each holding the channel for a 1.01 s preamble per
/// period saturate it there.
pub const DEFAULT_SWEEP_POINTS: [f64; 8] = [5.0, 6.0, 7.0, 8.0, 9.0, 11.0, 13.0, 15.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub t_ipa_s: Vec<f64>,
    pub seeds: u64,
    pub protocols: Vec<Protocol>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            t_ipa_s: DEFAULT_SWEEP_POINTS.to_vec(),
            seeds: 10,
            protocols: Protocol::ALL.to_vec(),
        }
    }
}

/// One simulation run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub radio: RadioSection,
    pub medium: MediumSection,
    pub dora: DoraSection,
    pub bmac: BmacSection,
    pub csma154: CsmaSection,
}

/// Everything a config file may contain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub scenario: ScenarioSection,
    pub radio: RadioSection,
    pub medium: MediumSection,
    pub dora: DoraSection,
    pub bmac: BmacSection,
    pub csma154: CsmaSection,
    pub sweep: SweepSpec,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            scenario: self.scenario.clone(),
            radio: self.radio.clone(),
            medium: self.medium.clone(),
            dora: self.dora.clone(),
            bmac: self.bmac.clone(),
            csma154: self.csma154.clone(),
        }
    }

    /// Validates the scenario and the sweep together, including the
    /// protocol sections of every protocol the sweep runs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = self.scenario().field_errors();
        for &p in &self.sweep.protocols {
            let mut cfg = self.scenario();
            cfg.scenario.protocol = p;
            for e in cfg.field_errors() {
                if !errs.contains(&e) {
                    errs.push(e);
                }
            }
        }
        errs.extend(self.sweep.field_errors());
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  - {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldError>),
}

impl ConfigError {
    pub fn fields(&self) -> Vec<&str> {
        match self {
            ConfigError::Invalid(v) => v.iter().map(|e| e.field.as_str()).collect(),
            _ => Vec::new(),
        }
    }
}

struct Checker(Vec<FieldError>);

impl Checker {
    fn check(&mut self, ok: bool, field: &str, message: impl Into<String>) {
        if !ok {
            self.0.push(FieldError { field: field.into(), message: message.into() });
        }
    }

    fn positive(&mut self, v: f64, field: &str) {
        self.check(v.is_finite() && v > 0.0, field, format!("must be a positive number, got {v}"));
    }

    fn non_negative(&mut self, v: f64, field: &str) {
        self.check(v.is_finite() && v >= 0.0, field, format!("must be finite and >= 0, got {v}"));
    }

    fn finite(&mut self, v: f64, field: &str) {
        self.check(v.is_finite(), field, format!("must be finite, got {v}"));
    }
}

fn amps_to_na(a: f64) -> u64 {
    (a * 1e9).round() as u64
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let errs = self.field_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    pub fn field_errors(&self) -> Vec<FieldError> {
        let mut c = Checker(Vec::new());
        let s = &self.scenario;
        c.check(s.n_nodes >= 1, "scenario.n_nodes", "at least one node is required");
        c.check(s.n_nodes < 0xFFFE, "scenario.n_nodes", "exceeds the 16-bit address space");
        c.positive(s.arena_m[0], "scenario.arena_m");
        c.positive(s.arena_m[1], "scenario.arena_m");
        if let Some([x, y]) = s.bs_position_m {
            c.finite(x, "scenario.bs_position_m");
            c.finite(y, "scenario.bs_position_m");
        }
        match &s.placement {
            Placement::Named(name) => c.check(
                name == "uniform-random",
                "scenario.placement",
                format!("unknown placement `{name}` (use \"uniform-random\" or a coordinate list)"),
            ),
            Placement::Coordinates(pts) => {
                c.check(
                    pts.len() == s.n_nodes,
                    "scenario.placement",
                    format!("{} coordinates given for {} nodes", pts.len(), s.n_nodes),
                );
                c.check(
                    pts.iter().all(|p| p.iter().all(|v| v.is_finite())),
                    "scenario.placement",
                    "coordinates must be finite",
                );
            }
        }
        c.check(s.payload_bytes > 0, "scenario.payload_bytes", "must be positive");
        c.check(s.queue_len >= 1, "scenario.queue_len", "must be at least 1");
        c.positive(s.duration_s, "scenario.duration_s");
        c.positive(s.t_ipa_s, "scenario.t_ipa_s");
        c.non_negative(s.app_jitter_s, "scenario.app_jitter_s");
        c.non_negative(s.traffic_guard_s, "scenario.traffic_guard_s");
        c.check(
            !(s.traffic_guard_s >= s.duration_s),
            "scenario.traffic_guard_s",
            "must be shorter than the run",
        );
        c.check(
            s.app_jitter_s.is_nan() || s.t_ipa_s.is_nan() || s.app_jitter_s < self.node_period_s(),
            "scenario.app_jitter_s",
            "must be shorter than the per-node reporting period",
        );
        c.positive(s.battery_mah, "scenario.battery_mah");

        let m = &self.radio.main;
        c.positive(m.supply_voltage_v, "radio.main.supply_voltage_v");
        c.non_negative(m.sleep_current_a, "radio.main.sleep_current_a");
        c.non_negative(m.rx_current_a, "radio.main.rx_current_a");
        c.non_negative(m.tx_current_a, "radio.main.tx_current_a");
        c.check(m.bitrate_bps > 0, "radio.main.bitrate_bps", "must be positive");
        c.non_negative(m.switch_time_s, "radio.main.switch_time_s");
        let w = &self.radio.wur;
        c.non_negative(w.sleep_current_a, "radio.wur.sleep_current_a");
        c.non_negative(w.rx_current_a, "radio.wur.rx_current_a");
        c.non_negative(w.active_current_a, "radio.wur.active_current_a");
        c.check(w.bitrate_bps > 0, "radio.wur.bitrate_bps", "must be positive");

        let md = &self.medium;
        c.finite(md.tx_power_dbm, "medium.tx_power_dbm");
        c.finite(md.data_sensitivity_dbm, "medium.data_sensitivity_dbm");
        c.positive(md.path_loss_exponent, "medium.path_loss_exponent");
        c.positive(md.reference_distance_m, "medium.reference_distance_m");
        c.finite(md.reference_loss_db, "medium.reference_loss_db");
        c.positive(md.max_range_m, "medium.max_range_m");

        match s.protocol {
            Protocol::Dora => self.check_dora(&mut c),
            Protocol::Bmac => self.check_bmac(&mut c),
            Protocol::Csma154 => self.check_csma(&mut c),
        }
        c.0
    }

    fn check_dora(&self, c: &mut Checker) {
        let d = &self.dora;
        c.positive(d.timeout_window_s, "dora.timeout_window_s");
        c.positive(d.preamble_s, "dora.preamble_s");
        c.positive(d.decider_min_duration_s, "dora.decider_min_duration_s");
        c.finite(d.wakeup_threshold_dbm, "dora.wakeup_threshold_dbm");
        c.check(
            !(d.decider_min_duration_s > d.preamble_s),
            "dora.decider_min_duration_s",
            "longer than the wake-up preamble; no call could ever be confirmed",
        );
        if self.scenario.payload_bytes > 0 && self.radio.main.bitrate_bps > 0 {
            let data = self.data_frame(MacAddr::node(0), 0).airtime();
            c.check(
                SimDuration::from_secs_f64(d.decider_min_duration_s) > data,
                "dora.decider_min_duration_s",
                format!(
                    "must exceed the data frame airtime ({data}) or data frames would pass as wake-up preambles"
                ),
            );
            if self.radio.wur.bitrate_bps > 0 && d.timeout_window_s > 0.0 {
                let latency = self.dora_wake_latency();
                c.check(
                    latency < SimDuration::from_secs_f64(d.timeout_window_s),
                    "dora.timeout_window_s",
                    format!("shorter than the wake-to-data latency ({latency})"),
                );
            }
        }
        for &n in &d.dead_nodes {
            c.check(n < self.scenario.n_nodes, "dora.dead_nodes", format!("node {n} does not exist"));
        }
    }

    fn check_bmac(&self, c: &mut Checker) {
        let b = &self.bmac;
        c.positive(b.slot_duration_s, "bmac.slot_duration_s");
        c.positive(b.check_interval_s, "bmac.check_interval_s");
        c.positive(b.cca_s, "bmac.cca_s");
        c.check(
            !(b.check_interval_s >= b.slot_duration_s),
            "bmac.check_interval_s",
            "must be shorter than the slot",
        );
        c.check(b.microframe_bytes > 0, "bmac.microframe_bytes", "must be positive");
    }

    fn check_csma(&self, c: &mut Checker) {
        let k = &self.csma154;
        c.check(k.min_be <= k.max_be, "csma154.min_be", "must not exceed max_be");
        c.check(k.max_be <= 20, "csma154.max_be", "must be at most 20");
        c.positive(k.cca_s, "csma154.cca_s");
        c.positive(k.unit_backoff_s, "csma154.unit_backoff_s");
    }

    pub fn duration(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.scenario.duration_s)
    }

    /// Reporting period of each node, seconds.
    pub fn node_period_s(&self) -> f64 {
        match self.scenario.ipa_scope {
            IpaScope::Node => self.scenario.t_ipa_s,
            IpaScope::Bs => self.scenario.t_ipa_s * self.scenario.n_nodes as f64,
        }
    }

    pub fn main_radio(&self) -> RadioParams {
        let m = &self.radio.main;
        RadioParams {
            supply_mv: (m.supply_voltage_v * 1e3).round() as u64,
            sleep_na: amps_to_na(m.sleep_current_a),
            rx_na: amps_to_na(m.rx_current_a),
            tx_na: amps_to_na(m.tx_current_a),
            active_na: amps_to_na(m.rx_current_a),
            bitrate_bps: m.bitrate_bps,
            switch_time: SimDuration::from_secs_f64(m.switch_time_s),
        }
    }

    pub fn wake_up_radio(&self) -> RadioParams {
        let w = &self.radio.wur;
        let active = amps_to_na(w.active_current_a);
        RadioParams {
            supply_mv: (self.radio.main.supply_voltage_v * 1e3).round() as u64,
            sleep_na: amps_to_na(w.sleep_current_a),
            rx_na: amps_to_na(w.rx_current_a),
            tx_na: active,
            active_na: active,
            bitrate_bps: w.bitrate_bps,
            switch_time: SimDuration::ZERO,
        }
    }

    pub fn propagation(&self) -> PropagationModel {
        PropagationModel {
            exponent: self.medium.path_loss_exponent,
            reference_distance_m: self.medium.reference_distance_m,
            reference_loss_db: self.medium.reference_loss_db,
            max_range_m: self.medium.max_range_m,
        }
    }

    pub fn tx_power_mw(&self) -> f64 {
        dbm_to_mw(self.medium.tx_power_dbm)
    }

    pub fn data_sensitivity_mw(&self) -> f64 {
        dbm_to_mw(self.medium.data_sensitivity_dbm)
    }

    pub fn data_frame(&self, src: MacAddr, seq: u32) -> DataFrame {
        DataFrame {
            src,
            dest: MacAddr::BS,
            seq,
            payload_len: self.scenario.payload_bytes,
            header_len: self.scenario.header_bytes,
            bitrate_bps: self.radio.main.bitrate_bps,
        }
    }

    pub fn wake_up_call(&self, dest: MacAddr) -> WakeUpCallFrame {
        WakeUpCallFrame::new(dest, SimDuration::from_secs_f64(self.dora.preamble_s), self.radio.wur.bitrate_bps)
    }

    /// From the end of a wake-up call to the end of the answering data frame.
    pub fn dora_wake_latency(&self) -> SimDuration {
        let main = self.main_radio();
        main.switch_time + self.data_frame(MacAddr::node(0), 0).airtime()
    }
}

impl SweepSpec {
    pub fn field_errors(&self) -> Vec<FieldError> {
        let mut c = Checker(Vec::new());
        c.check(!self.t_ipa_s.is_empty(), "sweep.t_ipa_s", "at least one point is required");
        for &t in &self.t_ipa_s {
            c.positive(t, "sweep.t_ipa_s");
        }
        c.check(self.seeds >= 1, "sweep.seeds", "at least one seed is required");
        c.check(!self.protocols.is_empty(), "sweep.protocols", "at least one protocol is required");
        c.0
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let errs = self.field_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}
