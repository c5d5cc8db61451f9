//! Radio transceiver model with exact energy accounting.
//!
//! Currents are held in whole nanoamperes and the supply in millivolts, so
//! a mode interval of `dt` nanoseconds adds exactly `I_nA * dt` to the
//! ledger's charge (units of 1e-18 C) and energy is `V_mV * charge` in units
//! of 1e-21 J. All accumulation is integer; the only rounding happens when
//! configuration values given in SI units are converted to nA / mV (nearest
//! integer) and when the final integers are converted to `f64` for reports.

use thiserror::Error;

use crate::kernel::{SimDuration, SimTime};

/// 1e-18 coulomb per (nA * ns).
const CHARGE_UNIT_C: f64 = 1e-18;
/// 1e-21 joule per (mV * nA * ns).
const ENERGY_UNIT_J: f64 = 1e-21;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RadioParams {
    pub supply_mv: u64,
    pub sleep_na: u64,
    pub rx_na: u64,
    pub tx_na: u64,
    /// Current while the receiver processes a frame (wake-up address decode).
    pub active_na: u64,
    pub bitrate_bps: u64,
    /// Settling time for transitions between Sleep and Rx/Tx.
    pub switch_time: SimDuration,
}

impl RadioParams {
    /// 250 kbps 802.15.4-class main transceiver.
    pub fn main_radio() -> Self {
        RadioParams {
            supply_mv: 3_300,
            sleep_na: 900,
            rx_na: 16_600_000,
            tx_na: 21_200_000,
            active_na: 16_600_000,
            bitrate_bps: 250_000,
            switch_time: SimDuration::from_micros(300),
        }
    }

    /// Passive wake-up receiver with its decoding micro-controller.
    pub fn wake_up_radio() -> Self {
        RadioParams {
            supply_mv: 3_300,
            sleep_na: 200,
            rx_na: 1_100,
            tx_na: 9_000_000,
            active_na: 9_000_000,
            bitrate_bps: 32_000,
            switch_time: SimDuration::ZERO,
        }
    }

    pub fn current_na(&self, bin: ModeBin) -> u64 {
        match bin {
            ModeBin::Sleep => self.sleep_na,
            ModeBin::Rx | ModeBin::Switching => self.rx_na,
            ModeBin::Tx => self.tx_na,
            ModeBin::Active => self.active_na,
        }
    }

    pub fn power_w(&self, bin: ModeBin) -> f64 {
        self.supply_mv as f64 * 1e-3 * self.current_na(bin) as f64 * 1e-9
    }

    pub fn scaled(&self, factor: u64) -> Self {
        RadioParams {
            sleep_na: self.sleep_na * factor,
            rx_na: self.rx_na * factor,
            tx_na: self.tx_na * factor,
            active_na: self.active_na * factor,
            ..*self
        }
    }
}

#[derive(Debug, Copy, Clone, PartialEq, Eq, Hash)]
pub enum SwitchTarget {
    Sleep,
    Rx,
    Tx,
}

impl From<SwitchTarget> for RadioMode {
    fn from(t: SwitchTarget) -> Self {
        match t {
            SwitchTarget::Sleep => RadioMode::Sleep,
            SwitchTarget::Rx => RadioMode::Rx,
            SwitchTarget::Tx => RadioMode::Tx,
        }
    }
}

#[derive(Debug, Copy, Clone, PartialEq, Eq, Hash)]
pub enum RadioMode {
    Sleep,
    Rx,
    Tx,
    Active,
    Switching(SwitchTarget),
}

impl RadioMode {
    pub fn bin(self) -> ModeBin {
        match self {
            RadioMode::Sleep => ModeBin::Sleep,
            RadioMode::Rx => ModeBin::Rx,
            RadioMode::Tx => ModeBin::Tx,
            RadioMode::Active => ModeBin::Active,
            RadioMode::Switching(_) => ModeBin::Switching,
        }
    }

    pub fn is_receiving(self) -> bool {
        matches!(self, RadioMode::Rx | RadioMode::Active)
    }
}

/// Ledger bucket. Switching is billed at the receive current.
#[derive(Debug, Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModeBin {
    Sleep,
    Rx,
    Tx,
    Active,
    Switching,
}

impl ModeBin {
    pub const ALL: [ModeBin; 5] =
        [ModeBin::Sleep, ModeBin::Rx, ModeBin::Tx, ModeBin::Active, ModeBin::Switching];

    pub fn name(self) -> &'static str {
        match self {
            ModeBin::Sleep => "sleep",
            ModeBin::Rx => "rx",
            ModeBin::Tx => "tx",
            ModeBin::Active => "active",
            ModeBin::Switching => "switching",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RadioError {
    #[error("illegal transition {from:?} -> {to:?}")]
    IllegalTransition { from: RadioMode, to: RadioMode },
    #[error("no switch in progress, or it completes at {due:?} not {now}")]
    NoSwitchDue { due: Option<SimTime>, now: SimTime },
    #[error("elapsed time must be positive")]
    ZeroElapsed,
    #[error("ledger closed at {closed} cannot move back to {now}")]
    TimeWentBack { closed: SimTime, now: SimTime },
}

/// Accumulated residency per mode plus the charge drawn.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EnergyLedger {
    residency_ns: [u64; 5],
    charge: u128,
}

impl EnergyLedger {
    pub fn residency(&self, bin: ModeBin) -> SimDuration {
        SimDuration(self.residency_ns[bin.index()])
    }

    pub fn total_residency(&self) -> SimDuration {
        SimDuration(self.residency_ns.iter().sum())
    }

    /// Charge in units of 1e-18 C (nA * ns).
    pub fn charge_raw(&self) -> u128 {
        self.charge
    }

    pub fn charge_coulombs(&self) -> f64 {
        self.charge as f64 * CHARGE_UNIT_C
    }

    /// Energy in units of 1e-21 J.
    pub fn energy_raw(&self, supply_mv: u64) -> u128 {
        self.charge * supply_mv as u128
    }

    pub fn energy_joules(&self, supply_mv: u64) -> f64 {
        self.energy_raw(supply_mv) as f64 * ENERGY_UNIT_J
    }

    fn record(&mut self, bin: ModeBin, dt: SimDuration, current_na: u64) {
        self.residency_ns[bin.index()] += dt.0;
        self.charge += dt.0 as u128 * current_na as u128;
    }

    /// Recomputes charge from residencies alone.
    pub fn charge_from_residency(&self, params: &RadioParams) -> u128 {
        ModeBin::ALL
            .iter()
            .map(|&b| self.residency_ns[b.index()] as u128 * params.current_na(b) as u128)
            .sum()
    }
}

pub fn mean_power(ledger: &EnergyLedger, supply_mv: u64, elapsed: SimDuration) -> Result<f64, RadioError> {
    if elapsed == SimDuration::ZERO {
        return Err(RadioError::ZeroElapsed);
    }
    Ok(ledger.energy_joules(supply_mv) / elapsed.as_secs_f64())
}

#[derive(Debug, Clone)]
pub struct Radio {
    params: RadioParams,
    mode: RadioMode,
    since: SimTime,
    switch_due: Option<SimTime>,
    transmitting: bool,
    ledger: EnergyLedger,
}

impl Radio {
    pub fn new(params: RadioParams, initial: RadioMode) -> Self {
        assert!(!matches!(initial, RadioMode::Switching(_)));
        Radio {
            params,
            mode: initial,
            since: SimTime::ZERO,
            switch_due: None,
            transmitting: false,
            ledger: EnergyLedger::default(),
        }
    }

    pub fn params(&self) -> &RadioParams {
        &self.params
    }

    pub fn mode(&self) -> RadioMode {
        self.mode
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    pub fn is_transmitting(&self) -> bool {
        self.transmitting
    }

    pub fn switch_due(&self) -> Option<SimTime> {
        self.switch_due
    }

    fn close_interval(&mut self, now: SimTime) -> Result<(), RadioError> {
        let dt = now
            .checked_since(self.since)
            .ok_or(RadioError::TimeWentBack { closed: self.since, now })?;
        let bin = self.mode.bin();
        self.ledger.record(bin, dt, self.params.current_na(bin));
        self.since = now;
        Ok(())
    }

    /// Requests `target`; returns when the radio will actually be in it.
    ///
    /// Transitions between Sleep and Rx/Tx pass through `Switching` for
    /// `switch_time`; the owner must call [`Radio::complete_switch`] at the
    /// returned instant. Other transitions take effect immediately.
    pub fn set_mode(&mut self, target: RadioMode, now: SimTime) -> Result<SimTime, RadioError> {
        let illegal = RadioError::IllegalTransition { from: self.mode, to: target };
        if matches!(target, RadioMode::Switching(_)) || matches!(self.mode, RadioMode::Switching(_)) {
            return Err(illegal);
        }
        if self.transmitting && target != RadioMode::Tx {
            return Err(illegal);
        }
        if target == self.mode {
            return Ok(now);
        }
        let via_switch = matches!(
            (self.mode, target),
            (RadioMode::Sleep, RadioMode::Rx | RadioMode::Tx)
                | (RadioMode::Rx | RadioMode::Tx, RadioMode::Sleep)
        );
        if matches!((self.mode, target), (RadioMode::Sleep, RadioMode::Active) | (RadioMode::Active, RadioMode::Sleep)) {
            return Err(illegal);
        }
        self.close_interval(now)?;
        if via_switch && self.params.switch_time > SimDuration::ZERO {
            let to = match target {
                RadioMode::Sleep => SwitchTarget::Sleep,
                RadioMode::Rx => SwitchTarget::Rx,
                _ => SwitchTarget::Tx,
            };
            let due = now + self.params.switch_time;
            self.mode = RadioMode::Switching(to);
            self.switch_due = Some(due);
            Ok(due)
        } else {
            self.mode = target;
            Ok(now)
        }
    }

    pub fn complete_switch(&mut self, now: SimTime) -> Result<RadioMode, RadioError> {
        match (self.mode, self.switch_due) {
            (RadioMode::Switching(to), Some(due)) if due == now => {
                self.close_interval(now)?;
                self.mode = to.into();
                self.switch_due = None;
                Ok(self.mode)
            }
            _ => Err(RadioError::NoSwitchDue { due: self.switch_due, now }),
        }
    }

    /// Marks the start of a frame on the air. The radio must be in Tx.
    pub fn start_transmit(&mut self) -> Result<(), RadioError> {
        if self.mode != RadioMode::Tx || self.transmitting {
            return Err(RadioError::IllegalTransition { from: self.mode, to: RadioMode::Tx });
        }
        self.transmitting = true;
        Ok(())
    }

    pub fn finish_transmit(&mut self) {
        self.transmitting = false;
    }

    /// Closes the open interval at `now` and returns the ledger.
    pub fn finalize(&mut self, now: SimTime) -> Result<&EnergyLedger, RadioError> {
        self.close_interval(now)?;
        Ok(&self.ledger)
    }
}
