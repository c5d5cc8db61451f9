//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use dorasim::config::{Protocol, ScenarioConfig, SweepSpec, Traffic};
use dorasim::csma::{backoff_periods, Attempt};
use dorasim::dora::{decide_wakeup, BsAction, BsInput, BsMac, PowerSegment};
use dorasim::frame::MacAddr;
use dorasim::harness::{check_conservation, emit_csv, run_sweep, simulate, summarize, RunMetrics, SummaryRow};
use dorasim::kernel::{RngStream, SimDuration, SimTime};
use dorasim::radio::ModeBin;

/// Floor of the always-on receiver: 3.3 V x 16.6 mA.
const RX_FLOOR_W: f64 = 3.3 * 16.6e-3;

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, id: u32, name: &str, result: Result<String, String>) {
        match result {
            Ok(detail) => println!("[PASS] {id:>2} {name}: {detail}"),
            Err(detail) => {
                self.failures += 1;
                println!("[FAIL] {id:>2} {name}: {detail}");
            }
        }
    }
}

fn ensure(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn point(summary: &[SummaryRow], p: Protocol, t: f64) -> &SummaryRow {
    summary.iter().find(|s| s.protocol == p && s.t_ipa_s == t).expect("sweep point present")
}

fn headline(summary: &[SummaryRow]) -> Result<String, String> {
    let dora = point(summary, Protocol::Dora, 15.0).saving_vs_csma154.unwrap();
    let bmac = point(summary, Protocol::Bmac, 15.0).saving_vs_csma154.unwrap();
    ensure(
        dora >= 0.999 && (0.85..=0.97).contains(&bmac),
        format!("at 15 s dora saves {:.3}% (>= 99.9%), bmac saves {:.2}% (85-97%)", dora * 100.0, bmac * 100.0),
    )
}

fn flatness(summary: &[SummaryRow]) -> Result<String, String> {
    let p: Vec<f64> = summary.iter().filter(|s| s.protocol == Protocol::Csma154).map(|s| s.mean_power_w).collect();
    let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ratio = hi / lo;
    let within = p.iter().all(|v| (v / RX_FLOOR_W - 1.0).abs() <= 0.10);
    ensure(
        p.len() == 8 && ratio <= 1.02 && within,
        format!("{} points, max/min {ratio:.5} (<= 1.02), range {:.4}-{:.4} mW vs 54.78 mW +-10%", p.len(), lo * 1e3, hi * 1e3),
    )
}

fn pdr(rows: &[RunMetrics], summary: &[SummaryRow]) -> Result<String, String> {
    let dora_ok = rows.iter().filter(|r| r.protocol == Protocol::Dora).all(|r| r.pdr == 1.0);
    let csma_min = summary.iter().filter(|s| s.protocol == Protocol::Csma154).map(|s| s.pdr).fold(1.0, f64::min);
    let bmac: Vec<f64> = summary.iter().filter(|s| s.protocol == Protocol::Bmac).map(|s| s.pdr).collect();
    let bmac_lo = bmac.iter().cloned().fold(1.0, f64::min);
    let bmac_hi = bmac.iter().cloned().fold(0.0, f64::max);
    ensure(
        dora_ok && csma_min >= 0.999 && bmac_lo >= 0.94 && bmac_hi <= 1.0,
        format!(
            "dora exactly 1 in every run: {dora_ok}; csma154 lowest point {csma_min:.5} (>= 0.999); bmac points {bmac_lo:.4}-{bmac_hi:.4} (0.94-1)"
        ),
    )
}

fn ordering(rows: &[RunMetrics]) -> Result<String, String> {
    let mut checked = 0;
    let mut bad = Vec::new();
    for d in rows.iter().filter(|r| r.protocol == Protocol::Dora) {
        let find = |p: Protocol| rows.iter().find(|r| r.protocol == p && r.t_ipa_s == d.t_ipa_s && r.seed == d.seed);
        match (find(Protocol::Bmac), find(Protocol::Csma154)) {
            (Some(b), Some(c)) => {
                checked += 1;
                if !(d.mean_power_w < b.mean_power_w && b.mean_power_w < c.mean_power_w) {
                    bad.push(format!("t_ipa {} seed {}", d.t_ipa_s, d.seed));
                }
            }
            _ => bad.push(format!("missing rows at t_ipa {} seed {}", d.t_ipa_s, d.seed)),
        }
    }
    ensure(bad.is_empty() && checked == 80, format!("dora < bmac < csma154 in {checked} (point, seed) pairs; violations: {bad:?}"))
}

fn collision_freedom() -> Result<String, String> {
    let mut rounds = 0u64;
    let mut overlaps = 0u64;
    for seed in 1..=100 {
        let mut cfg = ScenarioConfig::default();
        cfg.scenario.seed = seed;
        let m = dorasim::run_scenario(&cfg).map_err(|e| e.to_string())?;
        rounds += m.polls.iter().sum::<u64>();
        overlaps += m.overlaps;
    }
    ensure(
        rounds >= 100_000 && overlaps == 0,
        format!("{rounds} polling rounds over 100 seeds, {overlaps} overlapping transmissions"),
    )
}

fn round_robin() -> Result<String, String> {
    let k = 3u64;
    let mut notes = Vec::new();
    for n in [1usize, 2, 5, 50] {
        // Pure state machine.
        let mut bs = BsMac::new(n);
        let mut counts = vec![0u64; n];
        for r in 0..k as usize * n {
            let a = bs.step(BsInput::TimerFired).map_err(|e| e.to_string())?;
            let Some(BsAction::SendWuc { target }) = a.first().copied() else {
                return Err("no wake-up call emitted".into());
            };
            counts[target] += 1;
            bs.step(BsInput::WucSent).map_err(|e| e.to_string())?;
            let input = if r % 3 == 0 { BsInput::Timeout } else { BsInput::DataRx { src: MacAddr::node(target) } };
            bs.step(input).map_err(|e| e.to_string())?;
        }
        if counts.iter().any(|&c| c != k) {
            return Err(format!("fsm N={n}: counts {counts:?}"));
        }
        // Full simulation over exactly k * N rounds.
        let mut cfg = ScenarioConfig::default();
        cfg.scenario.n_nodes = n;
        cfg.scenario.duration_s = k as f64 * cfg.scenario.t_ipa_s;
        let m = dorasim::run_scenario(&cfg).map_err(|e| e.to_string())?;
        if m.polls.len() != n || m.polls.iter().any(|&c| c != k) {
            return Err(format!("simulation N={n}: polls {:?}", m.polls));
        }
        notes.push(format!("N={n}"));
    }
    Ok(format!("each node targeted exactly {k} times over {k}xN rounds for {}", notes.join(", ")))
}

fn decider() -> Result<String, String> {
    let thr = 1e-6;
    let min = SimDuration::from_millis(3);
    let seg = |a: u64, b: u64, p: f64| PowerSegment { start: SimTime(a), end: SimTime(b), power_mw: p };
    let exact = decide_wakeup(&[seg(0, min.0, thr)], thr, min);
    let dip = decide_wakeup(
        &[seg(0, 1_500_000, 2.0 * thr), seg(1_500_000, 1_500_001, 0.5 * thr), seg(1_500_001, 3_000_001, 2.0 * thr)],
        thr,
        min,
    );
    let short = decide_wakeup(&[seg(0, min.0 - 1, thr)], thr, min);
    ensure(
        exact && !dip && !short,
        format!("threshold/duration exactly at bounds -> {exact}; one-tick dip -> {dip}; one tick short -> {short}"),
    )
}

fn conservation(sweep_runs: usize) -> Result<String, String> {
    let mut devices = 0;
    let mut runs = 0;
    for p in Protocol::ALL {
        for seed in 1..=3 {
            for t in [5.0, 15.0] {
                let mut cfg = ScenarioConfig::default();
                cfg.scenario.protocol = p;
                cfg.scenario.seed = seed;
                cfg.scenario.t_ipa_s = t;
                cfg.scenario.duration_s = 600.0;
                let out = simulate(&cfg).map_err(|e| e.to_string())?;
                check_conservation(&out.devices, out.duration)?;
                for d in &out.devices {
                    // Independent recomputation: V * sum(I * t) in exact integers.
                    let charge: u128 = ModeBin::ALL
                        .iter()
                        .map(|&b| d.params.current_na(b) as u128 * d.ledger.residency(b).0 as u128)
                        .sum();
                    if d.ledger.energy_raw(d.params.supply_mv) != d.params.supply_mv as u128 * charge {
                        return Err(format!("{p} seed {seed}: energy mismatch"));
                    }
                    devices += 1;
                }
                runs += 1;
            }
        }
    }
    Ok(format!(
        "{devices} radios in {runs} runs balance to the tick and to the unit; the {sweep_runs} sweep runs were checked in-line"
    ))
}

fn determinism(first: &[RunMetrics]) -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    emit_csv(first, &a).map_err(|e| e.to_string())?;
    let second = run_sweep(&SweepSpec::default(), &ScenarioConfig::default()).map_err(|e| e.to_string())?;
    emit_csv(&second, &b).map_err(|e| e.to_string())?;
    let x = std::fs::read(&a).map_err(|e| e.to_string())?;
    let y = std::fs::read(&b).map_err(|e| e.to_string())?;
    ensure(x == y, format!("two full default sweeps -> results.csv of {} bytes, identical: {}", x.len(), x == y))
}

fn backoff_stats() -> Result<String, String> {
    let mut rng = RngStream::new(2024).substream(1);
    let n = 10_000u64;
    let mut counts = [0u64; 8];
    for _ in 0..n {
        counts[backoff_periods(&mut rng, 3) as usize] += 1;
    }
    let e = n as f64 / 8.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let p_value = 1.0 - ChiSquared::new(7.0).unwrap().cdf(chi2);
    let params = ScenarioConfig::default().csma154;
    let mut a = Attempt::new(&params);
    let mut bes = vec![a.be];
    for _ in 0..3 {
        a.on_busy(&params);
        bes.push(a.be);
    }
    // Draws at the clamped exponent never exceed 2^5 - 1 periods.
    let max_draw = (0..10_000).map(|_| backoff_periods(&mut rng, a.be)).max().unwrap_or(0);
    ensure(
        p_value > 0.01 && bes == [3, 4, 5, 5] && max_draw <= 31,
        format!("chi2 {chi2:.2} on 7 dof, p = {p_value:.3} (> 0.01); BE {bes:?}; max draw at BE 5: {max_draw}"),
    )
}

fn bmac_idle() -> Result<String, String> {
    let mut cfg = ScenarioConfig::default();
    cfg.scenario.protocol = Protocol::Bmac;
    cfg.scenario.traffic = Traffic::None;
    cfg.scenario.duration_s = 100.0;
    let out = simulate(&cfg).map_err(|e| e.to_string())?;
    let rx: Vec<f64> = out.devices.iter().map(|d| d.ledger.residency(ModeBin::Rx).as_secs_f64()).collect();
    let worst = rx.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    ensure(
        worst <= 0.010 + 1e-12,
        format!("Rx residency per device {:?} s, worst deviation {:.4} s (<= 0.010)", rx.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(), worst),
    )
}

fn main() -> ExitCode {
    let mut report = Report { failures: 0 };
    let started = Instant::now();
    let rows = match run_sweep(&SweepSpec::default(), &ScenarioConfig::default()) {
        Ok(r) => r,
        Err(e) => {
            println!("[FAIL] default sweep did not complete: {e}");
            return ExitCode::FAILURE;
        }
    };
    let sweep_time = started.elapsed();
    let summary = summarize(&rows);
    println!(
        "default sweep: {} runs ({} protocols x {} points x {} seeds) in {:.1} s",
        rows.len(),
        3,
        summary.len() / 3,
        SweepSpec::default().seeds,
        sweep_time.as_secs_f64()
    );

    report.record(1, "energy-saving headline", headline(&summary));
    report.record(2, "802.15.4 flatness", flatness(&summary));
    report.record(3, "packet delivery ratio", pdr(&rows, &summary));
    report.record(4, "power ordering", ordering(&rows));
    report.record(5, "DoRa collision-freedom", collision_freedom());
    report.record(6, "round-robin completeness", round_robin());
    report.record(7, "decider truth table", decider());
    report.record(8, "energy conservation", conservation(rows.len()));
    report.record(9, "determinism", determinism(&rows));
    report.record(10, "CSMA backoff statistics", backoff_stats());
    report.record(11, "B-MAC idle duty cycle", bmac_idle());

    println!("acceptance: {} of 11 criteria passed", 11 - report.failures);
    if report.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
