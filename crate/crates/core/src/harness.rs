//! Scenario execution, metrics and parameter sweeps.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::bmac::BmacWorld;
use crate::config::{ConfigError, Protocol, ScenarioConfig, SweepSpec};
use crate::csma::CsmaWorld;
use crate::dora::DoraWorld;
use crate::kernel::SimDuration;
use crate::net::{DeviceEnergy, RadioKind, SimError};
use crate::radio::ModeBin;
use crate::sim::{RunOutcome, BS_ENTITY};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation failed ({protocol}, t_ipa {t_ipa_s} s, seed {seed}): {source}")]
    Sim {
        protocol: Protocol,
        t_ipa_s: f64,
        seed: u64,
        #[source]
        source: SimError,
    },
    #[error("energy accounting does not balance: {0}")]
    Conservation(String),
    #[error("no results to write")]
    EmptyTable,
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io { path: path.to_path_buf(), message: e.to_string() }
}

/// Time spent in each mode by one radio of a device.
#[derive(Debug, Clone, PartialEq)]
pub struct Residency {
    pub kind: RadioKind,
    pub per_mode: [SimDuration; 5],
}

/// Energy figures of one device (all its radios together).
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceMetrics {
    /// `None` for the base station.
    pub node: Option<usize>,
    pub energy_j: f64,
    pub mean_power_w: f64,
    pub residency: Vec<Residency>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub protocol: Protocol,
    pub t_ipa_s: f64,
    pub seed: u64,
    pub duration_s: f64,
    /// Sensor nodes in index order.
    pub nodes: Vec<DeviceMetrics>,
    pub bs: DeviceMetrics,
    /// Mean over sensor nodes (plus the base station when so configured).
    pub mean_power_w: f64,
    pub packets_generated: u64,
    pub packets_received: u64,
    pub pdr: f64,
    pub overlaps: u64,
    pub dropped_queue: u64,
    pub dropped_access: u64,
    pub polls: Vec<u64>,
    pub lifetime_days: f64,
    pub events: u64,
}

/// Checks that every radio's residencies cover the run exactly and that
/// its charge matches the residencies at the configured currents.
pub fn check_conservation(devices: &[DeviceEnergy], duration: SimDuration) -> Result<(), String> {
    for (i, d) in devices.iter().enumerate() {
        let total = d.ledger.total_residency();
        if total != duration {
            return Err(format!("radio {i}: residencies sum to {total}, run lasted {duration}"));
        }
        let recomputed = d.ledger.charge_from_residency(&d.params);
        if recomputed != d.ledger.charge_raw() {
            return Err(format!(
                "radio {i}: ledger charge {} differs from residency charge {recomputed}",
                d.ledger.charge_raw()
            ));
        }
        if d.ledger.energy_raw(d.params.supply_mv) != recomputed * d.params.supply_mv as u128 {
            return Err(format!("radio {i}: energy is not supply x charge"));
        }
    }
    Ok(())
}

pub fn simulate(cfg: &ScenarioConfig) -> Result<RunOutcome, SimError> {
    match cfg.scenario.protocol {
        Protocol::Dora => DoraWorld::new(cfg)?.run(),
        Protocol::Bmac => BmacWorld::new(cfg)?.run(),
        Protocol::Csma154 => CsmaWorld::new(cfg)?.run(),
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunMetrics, HarnessError> {
    cfg.validate()?;
    let outcome = simulate(cfg).map_err(|source| HarnessError::Sim {
        protocol: cfg.scenario.protocol,
        t_ipa_s: cfg.scenario.t_ipa_s,
        seed: cfg.scenario.seed,
        source,
    })?;
    metrics(cfg, &outcome)
}

pub fn metrics(cfg: &ScenarioConfig, out: &RunOutcome) -> Result<RunMetrics, HarnessError> {
    check_conservation(&out.devices, out.duration).map_err(HarnessError::Conservation)?;
    let secs = out.duration.as_secs_f64();
    let n = cfg.scenario.n_nodes;

    let mut by_owner: BTreeMap<u32, DeviceMetrics> = BTreeMap::new();
    for d in &out.devices {
        let node = (d.owner != BS_ENTITY).then(|| d.owner.0 as usize - 1);
        let entry = by_owner.entry(d.owner.0).or_insert_with(|| DeviceMetrics {
            node,
            energy_j: 0.0,
            mean_power_w: 0.0,
            residency: Vec::new(),
        });
        entry.energy_j += d.ledger.energy_joules(d.params.supply_mv);
        let mut per_mode = [SimDuration::ZERO; 5];
        for (slot, bin) in per_mode.iter_mut().zip(ModeBin::ALL) {
            *slot = d.ledger.residency(bin);
        }
        entry.residency.push(Residency { kind: d.kind, per_mode });
    }
    for m in by_owner.values_mut() {
        m.mean_power_w = m.energy_j / secs;
    }
    let bs = by_owner.remove(&BS_ENTITY.0).expect("base station present");
    let nodes: Vec<DeviceMetrics> = by_owner.into_values().collect();
    assert_eq!(nodes.len(), n);

    let mut powers: Vec<f64> = nodes.iter().map(|m| m.mean_power_w).collect();
    if cfg.scenario.include_bs_in_average {
        powers.push(bs.mean_power_w);
    }
    let mean_power_w = powers.iter().sum::<f64>() / powers.len() as f64;

    let pdr = if out.generated == 0 { 1.0 } else { out.received as f64 / out.generated as f64 };
    let battery_j = cfg.scenario.battery_mah * 3.6 * cfg.radio.main.supply_voltage_v;
    let lifetime_days = battery_j / mean_power_w / 86_400.0;

    Ok(RunMetrics {
        protocol: cfg.scenario.protocol,
        t_ipa_s: cfg.scenario.t_ipa_s,
        seed: cfg.scenario.seed,
        duration_s: secs,
        nodes,
        bs,
        mean_power_w,
        packets_generated: out.generated,
        packets_received: out.received,
        pdr,
        overlaps: out.overlaps,
        dropped_queue: out.dropped_queue,
        dropped_access: out.dropped_access,
        polls: out.polls.clone(),
        lifetime_days,
        events: out.events,
    })
}

/// Seeds used for a sweep: `base, base + 1, ...`.
pub fn sweep_seeds(base: u64, count: u64) -> impl Iterator<Item = u64> {
    (0..count).map(move |k| base.wrapping_add(k))
}

/// Runs every (protocol, t_ipa, seed) combination in parallel. Rows come
/// back sorted by protocol, then t_ipa, then seed.
pub fn run_sweep(spec: &SweepSpec, base: &ScenarioConfig) -> Result<Vec<RunMetrics>, HarnessError> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for &p in &spec.protocols {
        for &t in &spec.t_ipa_s {
            for seed in sweep_seeds(base.scenario.seed, spec.seeds) {
                let mut cfg = base.clone();
                cfg.scenario.protocol = p;
                cfg.scenario.t_ipa_s = t;
                cfg.scenario.seed = seed;
                cfg.validate()?;
                jobs.push(cfg);
            }
        }
    }
    let mut rows = jobs.par_iter().map(run_scenario).collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| a.protocol.cmp(&b.protocol).then(a.t_ipa_s.total_cmp(&b.t_ipa_s)).then(a.seed.cmp(&b.seed)));
    Ok(rows)
}

/// Seed-averaged figures at one (protocol, t_ipa) point.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub protocol: Protocol,
    pub t_ipa_s: f64,
    pub seeds: usize,
    pub mean_power_w: f64,
    pub min_power_w: f64,
    pub max_power_w: f64,
    pub pdr: f64,
    pub min_pdr: f64,
    pub max_pdr: f64,
    pub lifetime_days: f64,
    /// Energy saved relative to 802.15.4 at the same point, if it was run.
    pub saving_vs_csma154: Option<f64>,
}

pub fn summarize(rows: &[RunMetrics]) -> Vec<SummaryRow> {
    let mut groups: Vec<((Protocol, f64), Vec<&RunMetrics>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(k, _)| k.0 == r.protocol && k.1 == r.t_ipa_s) {
            Some((_, v)) => v.push(r),
            None => groups.push(((r.protocol, r.t_ipa_s), vec![r])),
        }
    }
    groups.sort_by(|a, b| a.0 .0.cmp(&b.0 .0).then(a.0 .1.total_cmp(&b.0 .1)));
    let mut out: Vec<SummaryRow> = groups
        .iter()
        .map(|((p, t), v)| {
            let k = v.len() as f64;
            let power = v.iter().map(|r| r.mean_power_w);
            let pdr = v.iter().map(|r| r.pdr);
            SummaryRow {
                protocol: *p,
                t_ipa_s: *t,
                seeds: v.len(),
                mean_power_w: power.clone().sum::<f64>() / k,
                min_power_w: power.clone().fold(f64::INFINITY, f64::min),
                max_power_w: power.fold(f64::NEG_INFINITY, f64::max),
                pdr: pdr.clone().sum::<f64>() / k,
                min_pdr: pdr.clone().fold(f64::INFINITY, f64::min),
                max_pdr: pdr.fold(f64::NEG_INFINITY, f64::max),
                lifetime_days: v.iter().map(|r| r.lifetime_days).sum::<f64>() / k,
                saving_vs_csma154: None,
            }
        })
        .collect();
    let reference: Vec<(f64, f64)> = out
        .iter()
        .filter(|s| s.protocol == Protocol::Csma154)
        .map(|s| (s.t_ipa_s, s.mean_power_w))
        .collect();
    for s in &mut out {
        s.saving_vs_csma154 = reference
            .iter()
            .find(|(t, _)| *t == s.t_ipa_s)
            .map(|(_, p)| 1.0 - s.mean_power_w / p);
    }
    out
}

fn num(v: f64) -> String {
    // Shortest representation that parses back to the same f64.
    format!("{v:?}")
}

fn write_rows(path: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes one row per run. Fails without creating the file if `rows` is
/// empty.
pub fn emit_csv(rows: &[RunMetrics], path: &Path) -> Result<(), HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyTable);
    }
    let n = rows.iter().map(|r| r.nodes.len()).max().unwrap_or(0);
    let mut header: Vec<String> = ["protocol", "t_ipa_s", "seed", "mean_power_w", "pdr"].map(String::from).to_vec();
    header.extend((0..n).map(|i| format!("energy_node_{i}_j")));
    header.extend(["packets_generated", "packets_received", "lifetime_days"].map(String::from));
    let body = rows
        .iter()
        .map(|r| {
            let mut rec = vec![r.protocol.to_string(), num(r.t_ipa_s), r.seed.to_string(), num(r.mean_power_w), num(r.pdr)];
            rec.extend((0..n).map(|i| r.nodes.get(i).map(|m| num(m.energy_j)).unwrap_or_default()));
            rec.push(r.packets_generated.to_string());
            rec.push(r.packets_received.to_string());
            rec.push(num(r.lifetime_days));
            rec
        })
        .collect();
    write_rows(path, header, body)
}

pub fn emit_summary_csv(summary: &[SummaryRow], path: &Path) -> Result<(), HarnessError> {
    if summary.is_empty() {
        return Err(HarnessError::EmptyTable);
    }
    let header = [
        "protocol",
        "t_ipa_s",
        "seeds",
        "mean_power_w",
        "min_power_w",
        "max_power_w",
        "pdr",
        "min_pdr",
        "max_pdr",
        "lifetime_days",
        "saving_vs_csma154",
    ]
    .map(String::from)
    .to_vec();
    let body = summary
        .iter()
        .map(|s| {
            vec![
                s.protocol.to_string(),
                num(s.t_ipa_s),
                s.seeds.to_string(),
                num(s.mean_power_w),
                num(s.min_power_w),
                num(s.max_power_w),
                num(s.pdr),
                num(s.min_pdr),
                num(s.max_pdr),
                num(s.lifetime_days),
                s.saving_vs_csma154.map(num).unwrap_or_default(),
            ]
        })
        .collect();
    write_rows(path, header, body)
}

/// Writes `results.csv`, `summary.csv`, `power.svg` and `pdr.svg` into
/// `dir`, creating it if needed.
pub fn write_outputs(rows: &[RunMetrics], dir: &Path, charts: bool) -> Result<Vec<PathBuf>, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyTable);
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    let results = dir.join("results.csv");
    emit_csv(rows, &results)?;
    written.push(results);
    let summary = summarize(rows);
    let path = dir.join("summary.csv");
    emit_summary_csv(&summary, &path)?;
    written.push(path);
    if charts {
        for (name, svg) in [
            ("power.svg", crate::chart::power_chart(&summary)),
            ("pdr.svg", crate::chart::pdr_chart(&summary)),
        ] {
            let path = dir.join(name);
            fs::write(&path, svg).map_err(|e| io_err(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(p: Protocol) -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.scenario.protocol = p;
        c
    }

    #[test]
    fn dora_defaults_deliver_1200_packets() {
        let m = run_scenario(&cfg(Protocol::Dora)).unwrap();
        assert_eq!(m.packets_received, 1200);
        assert_eq!(m.packets_generated, 1200);
        assert_eq!(m.pdr, 1.0);
        assert_eq!(m.overlaps, 0);
        assert!(m.polls.iter().all(|&p| p == 240));
    }

    #[test]
    fn csma_power_sits_on_the_rx_floor() {
        for t in [1.0, 15.0] {
            let mut c = cfg(Protocol::Csma154);
            c.scenario.t_ipa_s = t;
            c.scenario.duration_s = 600.0;
            let m = run_scenario(&c).unwrap();
            assert!(m.mean_power_w >= 0.05478 && m.mean_power_w <= 1.02 * 0.05478, "{}", m.mean_power_w);
            // Anything above the floor is traffic: well under 1 %.
            assert!(m.mean_power_w < 0.05478 * 1.01);
        }
    }

    #[test]
    fn zero_duration_is_a_config_error() {
        let mut c = cfg(Protocol::Dora);
        c.scenario.duration_s = 0.0;
        let err = run_scenario(&c).unwrap_err();
        let HarnessError::Config(e) = err else { panic!("{err}") };
        assert!(e.fields().contains(&"scenario.duration_s"));
    }

    #[test]
    fn empty_table_creates_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("results.csv");
        assert!(matches!(emit_csv(&[], &p), Err(HarnessError::EmptyTable)));
        assert!(!p.exists());
    }

    #[test]
    fn summary_computes_saving() {
        let spec = SweepSpec { t_ipa_s: vec![15.0], seeds: 1, protocols: vec![Protocol::Dora, Protocol::Csma154] };
        let mut base = ScenarioConfig::default();
        base.scenario.duration_s = 300.0;
        let rows = run_sweep(&spec, &base).unwrap();
        assert_eq!(rows.len(), 2);
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        let dora = s.iter().find(|r| r.protocol == Protocol::Dora).unwrap();
        assert!(dora.saving_vs_csma154.unwrap() > 0.999);
        assert_eq!(s.iter().find(|r| r.protocol == Protocol::Csma154).unwrap().saving_vs_csma154, Some(0.0));
    }
}
