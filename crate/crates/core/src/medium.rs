//! Single shared radio channel.
//!
//! The medium tracks every transmission in flight and every radio that is
//! currently receiving. Collisions are binary: any temporal overlap between
//! two transmissions corrupts both, for every receiver. A radio that starts
//! receiving while a transmission is already on the air senses its carrier
//! but cannot decode it.

use std::collections::VecDeque;

use thiserror::Error;

use crate::frame::Frame;
use crate::kernel::{SimDuration, SimTime};

#[derive(Debug, Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RadioId(pub u32);

#[derive(Debug, Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TransmissionId(pub u64);

#[derive(Debug, Copy, Clone, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Log-distance path loss:
///
/// `P_rx = P_tx * 10^(-L0/10) * (d0 / max(d, d0))^n`
///
/// Zero distance (an observer co-located with the source) returns `P_tx`
/// unchanged, and anything beyond `max_range_m` receives nothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationModel {
    pub exponent: f64,
    pub reference_distance_m: f64,
    pub reference_loss_db: f64,
    pub max_range_m: f64,
}

impl Default for PropagationModel {
    fn default() -> Self {
        PropagationModel {
            exponent: 2.0,
            reference_distance_m: 1.0,
            reference_loss_db: 20.0,
            max_range_m: 100.0,
        }
    }
}

impl PropagationModel {
    pub fn rx_power_mw(&self, tx_power_mw: f64, distance_m: f64) -> f64 {
        if distance_m == 0.0 {
            return tx_power_mw;
        }
        if distance_m > self.max_range_m {
            return 0.0;
        }
        let d = distance_m.max(self.reference_distance_m);
        tx_power_mw
            * 10f64.powf(-self.reference_loss_db / 10.0)
            * (self.reference_distance_m / d).powf(self.exponent)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub id: TransmissionId,
    pub source: RadioId,
    pub frame: Frame,
    pub start: SimTime,
    pub airtime: SimDuration,
    pub tx_power_mw: f64,
}

impl Transmission {
    pub fn end(&self) -> SimTime {
        self.start + self.airtime
    }

    /// Half-open overlap of `[start, end)` with `[from, to)`.
    pub fn overlaps(&self, from: SimTime, to: SimTime) -> bool {
        self.start < to && self.end() > from
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceptionReport {
    pub transmission: Transmission,
    pub corrupted: bool,
    pub rx_power_mw: f64,
}

#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub enum ChannelState {
    Busy,
    Idle,
}

#[derive(Debug, Error, PartialEq)]
pub enum MediumError {
    #[error("radio {0:?} already has a transmission in flight")]
    AlreadyTransmitting(RadioId),
    #[error("radio {0:?} was not receiving for the whole sensing window")]
    RadioNotReceiving(RadioId),
    #[error("unknown transmission {0:?}")]
    UnknownTransmission(TransmissionId),
    #[error("unknown radio {0:?}")]
    UnknownRadio(RadioId),
    #[error("transmission end {id:?} does not match its airtime (now {now}, due {due})")]
    EarlyEnd { id: TransmissionId, now: SimTime, due: SimTime },
    #[error("overlapping transmissions {0:?} and {1:?} on a collision-free medium")]
    Overlap(TransmissionId, TransmissionId),
}

#[derive(Debug)]
struct Endpoint {
    pos: Position,
    sensitivity_mw: f64,
    listening_since: Option<SimTime>,
    in_flight: Option<TransmissionId>,
}

#[derive(Debug)]
struct InFlight {
    tx: Transmission,
    corrupted: bool,
    // (receiver, heard from the first bit)
    receivers: Vec<(RadioId, bool)>,
}

#[derive(Debug)]
pub struct Medium {
    model: PropagationModel,
    endpoints: Vec<Endpoint>,
    in_flight: Vec<InFlight>,
    history: VecDeque<Transmission>,
    history_horizon: SimDuration,
    forbid_overlap: bool,
    overlaps: u64,
    next_id: u64,
}

impl Medium {
    pub fn new(model: PropagationModel) -> Self {
        Medium {
            model,
            endpoints: Vec::new(),
            in_flight: Vec::new(),
            history: VecDeque::new(),
            history_horizon: SimDuration::from_secs(2),
            forbid_overlap: false,
            overlaps: 0,
            next_id: 0,
        }
    }

    /// Makes any overlap a hard error instead of a collision.
    pub fn forbid_overlap(mut self, forbid: bool) -> Self {
        self.forbid_overlap = forbid;
        self
    }

    /// How long ended transmissions are kept for carrier sensing.
    pub fn with_history_horizon(mut self, horizon: SimDuration) -> Self {
        self.history_horizon = horizon;
        self
    }

    pub fn model(&self) -> &PropagationModel {
        &self.model
    }

    pub fn add_radio(&mut self, pos: Position, sensitivity_mw: f64) -> RadioId {
        let id = RadioId(self.endpoints.len() as u32);
        self.endpoints.push(Endpoint {
            pos,
            sensitivity_mw,
            listening_since: None,
            in_flight: None,
        });
        id
    }

    pub fn radio_count(&self) -> usize {
        self.endpoints.len()
    }

    pub fn position(&self, radio: RadioId) -> Option<Position> {
        self.endpoints.get(radio.0 as usize).map(|e| e.pos)
    }

    /// Number of pairwise overlaps observed so far.
    pub fn overlap_count(&self) -> u64 {
        self.overlaps
    }

    fn endpoint(&self, radio: RadioId) -> Result<&Endpoint, MediumError> {
        self.endpoints.get(radio.0 as usize).ok_or(MediumError::UnknownRadio(radio))
    }

    fn power_between(&self, tx_power_mw: f64, from: RadioId, to: RadioId) -> f64 {
        if from == to {
            return tx_power_mw;
        }
        let a = self.endpoints[from.0 as usize].pos;
        let b = self.endpoints[to.0 as usize].pos;
        self.model.rx_power_mw(tx_power_mw, a.distance(&b))
    }

    fn audible(&self, tx: &Transmission, at: RadioId) -> bool {
        tx.source != at
            && self.power_between(tx.tx_power_mw, tx.source, at)
                >= self.endpoints[at.0 as usize].sensitivity_mw
    }

    pub fn is_listening(&self, radio: RadioId) -> bool {
        self.endpoints.get(radio.0 as usize).is_some_and(|e| e.listening_since.is_some())
    }

    /// Starts or stops reception at `radio`. When starting, returns the
    /// transmissions already on the air that the radio now senses (it will
    /// get a corrupted report for each).
    pub fn set_listening(
        &mut self,
        radio: RadioId,
        on: bool,
        now: SimTime,
    ) -> Result<Vec<TransmissionId>, MediumError> {
        let ep = self.endpoint(radio)?;
        if on == ep.listening_since.is_some() {
            return Ok(Vec::new());
        }
        if !on {
            self.endpoints[radio.0 as usize].listening_since = None;
            for f in &mut self.in_flight {
                f.receivers.retain(|(r, _)| *r != radio);
            }
            return Ok(Vec::new());
        }
        self.endpoints[radio.0 as usize].listening_since = Some(now);
        let mut sensed = Vec::new();
        for i in 0..self.in_flight.len() {
            if self.audible(&self.in_flight[i].tx, radio) {
                self.in_flight[i].receivers.push((radio, false));
                sensed.push(self.in_flight[i].tx.id);
            }
        }
        Ok(sensed)
    }

    /// Puts `frame` on the air from `source`. Returns the transmission and
    /// every radio that hears it from the first bit.
    pub fn begin_tx(
        &mut self,
        source: RadioId,
        frame: Frame,
        tx_power_mw: f64,
        now: SimTime,
    ) -> Result<(Transmission, Vec<RadioId>), MediumError> {
        let ep = self.endpoint(source)?;
        if ep.in_flight.is_some() {
            return Err(MediumError::AlreadyTransmitting(source));
        }
        let airtime = frame.airtime();
        assert!(airtime > SimDuration::ZERO, "zero-length transmission");
        let id = TransmissionId(self.next_id);
        if self.forbid_overlap {
            if let Some(other) = self.in_flight.first() {
                return Err(MediumError::Overlap(other.tx.id, id));
            }
        }
        self.next_id += 1;
        let tx = Transmission { id, source, frame, start: now, airtime, tx_power_mw };

        let mut corrupted = false;
        for other in &mut self.in_flight {
            other.corrupted = true;
            corrupted = true;
            self.overlaps += 1;
        }

        let listeners: Vec<RadioId> = (0..self.endpoints.len() as u32)
            .map(RadioId)
            .filter(|&r| self.endpoints[r.0 as usize].listening_since.is_some() && self.audible(&tx, r))
            .collect();
        self.endpoints[source.0 as usize].in_flight = Some(id);
        self.in_flight.push(InFlight {
            tx: tx.clone(),
            corrupted,
            receivers: listeners.iter().map(|&r| (r, true)).collect(),
        });
        Ok((tx, listeners))
    }

    /// Takes `id` off the air and produces one report per radio that was
    /// still receiving it.
    pub fn end_tx(
        &mut self,
        id: TransmissionId,
        now: SimTime,
    ) -> Result<(Transmission, Vec<(RadioId, ReceptionReport)>), MediumError> {
        let idx = self
            .in_flight
            .iter()
            .position(|f| f.tx.id == id)
            .ok_or(MediumError::UnknownTransmission(id))?;
        let due = self.in_flight[idx].tx.end();
        if due != now {
            return Err(MediumError::EarlyEnd { id, now, due });
        }
        let f = self.in_flight.swap_remove(idx);
        self.endpoints[f.tx.source.0 as usize].in_flight = None;

        let reports = f
            .receivers
            .iter()
            .map(|&(r, from_start)| {
                let report = ReceptionReport {
                    transmission: f.tx.clone(),
                    corrupted: f.corrupted || !from_start,
                    rx_power_mw: self.power_between(f.tx.tx_power_mw, f.tx.source, r),
                };
                (r, report)
            })
            .collect();

        self.history.push_back(f.tx.clone());
        let horizon = now.saturating_sub(self.history_horizon);
        while self.history.front().is_some_and(|t| t.end() < horizon) {
            self.history.pop_front();
        }
        Ok((f.tx, reports))
    }

    /// Clear-channel assessment over `[now - window, now)`.
    pub fn carrier_sense(
        &self,
        observer: RadioId,
        window: SimDuration,
        now: SimTime,
    ) -> Result<ChannelState, MediumError> {
        let ep = self.endpoint(observer)?;
        let from = now.checked_since(SimTime(window.0)).map(|d| SimTime(d.0));
        let from = match (ep.listening_since, from) {
            (Some(since), Some(from)) if since <= from => from,
            _ => return Err(MediumError::RadioNotReceiving(observer)),
        };
        let busy = self
            .in_flight
            .iter()
            .map(|f| &f.tx)
            .chain(self.history.iter())
            .any(|t| t.overlaps(from, now) && self.audible(t, observer));
        Ok(if busy { ChannelState::Busy } else { ChannelState::Idle })
    }

    pub fn rx_power_at(&self, observer: RadioId, tx: TransmissionId) -> Result<f64, MediumError> {
        self.endpoint(observer)?;
        let t = self.transmission(tx).ok_or(MediumError::UnknownTransmission(tx))?;
        Ok(self.power_between(t.tx_power_mw, t.source, observer))
    }

    /// A transmission that is on the air or ended within the history horizon.
    pub fn transmission(&self, id: TransmissionId) -> Option<&Transmission> {
        self.in_flight
            .iter()
            .map(|f| &f.tx)
            .chain(self.history.iter())
            .find(|t| t.id == id)
    }

    /// Whether `id` is still on the air.
    pub fn in_flight(&self, id: TransmissionId) -> bool {
        self.in_flight.iter().any(|f| f.tx.id == id)
    }

    /// Collision flag of an in-flight transmission.
    pub fn is_corrupted(&self, id: TransmissionId) -> Option<bool> {
        self.in_flight.iter().find(|f| f.tx.id == id).map(|f| f.corrupted)
    }

    /// In-flight transmissions audible at `observer`.
    pub fn on_air_at(&self, observer: RadioId) -> Vec<&Transmission> {
        self.in_flight
            .iter()
            .map(|f| &f.tx)
            .filter(|t| self.audible(t, observer))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{DataFrame, MacAddr};

    const SENS: f64 = 1e-12;

    fn data(bytes: u16) -> Frame {
        Frame::Data(DataFrame {
            src: MacAddr::node(0),
            dest: MacAddr::BS,
            seq: 0,
            payload_len: bytes,
            header_len: 0,
            bitrate_bps: 250_000,
        })
    }

    fn medium3() -> (Medium, [RadioId; 3]) {
        let mut m = Medium::new(PropagationModel::default());
        let a = m.add_radio(Position::new(0.0, 0.0), SENS);
        let b = m.add_radio(Position::new(5.0, 0.0), SENS);
        let c = m.add_radio(Position::new(0.0, 5.0), SENS);
        (m, [a, b, c])
    }

    #[test]
    fn path_loss_unity_gain_at_10m() {
        // 1 mW * (1 m / 10 m)^2 with no reference loss.
        let model = PropagationModel { reference_loss_db: 0.0, ..Default::default() };
        let p = model.rx_power_mw(1.0, 10.0);
        assert!((p - 0.01).abs() < 1e-15, "{p}");
        // Default 20 dB reference loss: -40 dBm at 10 m.
        let p = PropagationModel::default().rx_power_mw(1.0, 10.0);
        assert!((mw_to_dbm(p) + 40.0).abs() < 1e-9);
    }

    #[test]
    fn path_loss_loopback_and_range() {
        let model = PropagationModel::default();
        assert_eq!(model.rx_power_mw(1.0, 0.0), 1.0);
        assert_eq!(model.rx_power_mw(1.0, 100.1), 0.0);
    }

    #[test]
    fn arena_diagonal_is_within_default_thresholds() {
        // 20 m x 20 m arena, 0 dBm: the worst link still clears -55 dBm.
        let p = PropagationModel::default().rx_power_mw(1.0, 20f64.hypot(20.0));
        assert!(mw_to_dbm(p) > -55.0);
    }

    #[test]
    fn single_listener_gets_clean_report() {
        let (mut m, [a, b, _]) = medium3();
        m.set_listening(b, true, SimTime(0)).unwrap();
        let (tx, listeners) = m.begin_tx(a, data(10), 1.0, SimTime(0)).unwrap();
        assert_eq!(listeners, vec![b]);
        let (_, reports) = m.end_tx(tx.id, tx.end()).unwrap();
        assert_eq!(reports.len(), 1);
        assert!(!reports[0].1.corrupted);
        assert_eq!(reports[0].0, b);
    }

    #[test]
    fn one_nanosecond_overlap_corrupts_both() {
        let (mut m, [a, b, c]) = medium3();
        m.set_listening(c, true, SimTime(0)).unwrap();
        let (t1, _) = m.begin_tx(a, data(10), 1.0, SimTime(0)).unwrap();
        let start2 = SimTime(t1.end().0 - 1);
        let (t2, _) = m.begin_tx(b, data(10), 1.0, start2).unwrap();
        let (_, r1) = m.end_tx(t1.id, t1.end()).unwrap();
        let (_, r2) = m.end_tx(t2.id, t2.end()).unwrap();
        assert!(r1.iter().all(|(_, r)| r.corrupted));
        assert!(r2.iter().all(|(_, r)| r.corrupted));
        assert_eq!(m.overlap_count(), 1);
    }

    #[test]
    fn back_to_back_does_not_collide() {
        let (mut m, [a, b, c]) = medium3();
        m.set_listening(c, true, SimTime(0)).unwrap();
        let (t1, _) = m.begin_tx(a, data(10), 1.0, SimTime(0)).unwrap();
        m.end_tx(t1.id, t1.end()).unwrap();
        let (t2, _) = m.begin_tx(b, data(10), 1.0, t1.end()).unwrap();
        let (_, r2) = m.end_tx(t2.id, t2.end()).unwrap();
        assert!(!r2[0].1.corrupted);
        assert_eq!(m.overlap_count(), 0);
    }

    #[test]
    fn nobody_listening_means_no_reports() {
        let (mut m, [a, _, _]) = medium3();
        let (tx, listeners) = m.begin_tx(a, data(10), 1.0, SimTime(0)).unwrap();
        assert!(listeners.is_empty());
        assert!(m.end_tx(tx.id, tx.end()).unwrap().1.is_empty());
    }

    #[test]
    fn mid_air_listener_senses_but_cannot_decode() {
        let (mut m, [a, b, _]) = medium3();
        let (tx, _) = m.begin_tx(a, data(10), 1.0, SimTime(0)).unwrap();
        let sensed = m.set_listening(b, true, SimTime(100)).unwrap();
        assert_eq!(sensed, vec![tx.id]);
        let (_, reports) = m.end_tx(tx.id, tx.end()).unwrap();
        assert!(reports[0].1.corrupted);
    }

    #[test]
    fn leaving_rx_drops_the_report() {
        let (mut m, [a, b, _]) = medium3();
        m.set_listening(b, true, SimTime(0)).unwrap();
        let (tx, _) = m.begin_tx(a, data(10), 1.0, SimTime(0)).unwrap();
        m.set_listening(b, false, SimTime(10)).unwrap();
        assert!(m.end_tx(tx.id, tx.end()).unwrap().1.is_empty());
    }

    #[test]
    fn second_tx_from_same_source_rejected() {
        let (mut m, [a, _, _]) = medium3();
        m.begin_tx(a, data(10), 1.0, SimTime(0)).unwrap();
        assert_eq!(
            m.begin_tx(a, data(10), 1.0, SimTime(1)).unwrap_err(),
            MediumError::AlreadyTransmitting(a)
        );
    }

    #[test]
    fn forbidden_overlap_is_an_error() {
        let mut m = Medium::new(PropagationModel::default()).forbid_overlap(true);
        let a = m.add_radio(Position::new(0.0, 0.0), SENS);
        let b = m.add_radio(Position::new(1.0, 0.0), SENS);
        m.begin_tx(a, data(10), 1.0, SimTime(0)).unwrap();
        assert!(matches!(m.begin_tx(b, data(10), 1.0, SimTime(5)), Err(MediumError::Overlap(..))));
    }

    #[test]
    fn carrier_sense_cases() {
        let cca = SimDuration::from_micros(128);
        let (mut m, [a, b, _]) = medium3();
        m.set_listening(b, true, SimTime(0)).unwrap();

        let t0 = SimTime(1_000_000);
        assert_eq!(m.carrier_sense(b, cca, t0).unwrap(), ChannelState::Idle);

        // Spans the whole window.
        let (tx, _) = m.begin_tx(a, data(100), 1.0, t0).unwrap();
        assert_eq!(m.carrier_sense(b, cca, t0 + cca).unwrap(), ChannelState::Busy);
        m.end_tx(tx.id, tx.end()).unwrap();

        // Ends exactly at the window start: idle. One nanosecond later: busy.
        let end = tx.end();
        assert_eq!(m.carrier_sense(b, cca, end + cca).unwrap(), ChannelState::Idle);
        let now = end + (cca - SimDuration::from_nanos(1));
        assert_eq!(m.carrier_sense(b, cca, now).unwrap(), ChannelState::Busy);
    }

    #[test]
    fn carrier_sense_requires_full_window_in_rx() {
        let cca = SimDuration::from_micros(128);
        let (mut m, [_, b, _]) = medium3();
        assert_eq!(
            m.carrier_sense(b, cca, SimTime(1_000_000)).unwrap_err(),
            MediumError::RadioNotReceiving(b)
        );
        m.set_listening(b, true, SimTime(1_000_000)).unwrap();
        assert!(m.carrier_sense(b, cca, SimTime(1_000_000) + SimDuration::from_micros(100)).is_err());
        assert!(m.carrier_sense(b, cca, SimTime(1_000_000) + cca).is_ok());
    }

    #[test]
    fn rx_power_lookup() {
        let (mut m, [a, b, _]) = medium3();
        let (tx, _) = m.begin_tx(a, data(10), 1.0, SimTime(0)).unwrap();
        assert_eq!(m.rx_power_at(a, tx.id).unwrap(), 1.0);
        let expected = PropagationModel::default().rx_power_mw(1.0, 5.0);
        assert_eq!(m.rx_power_at(b, tx.id).unwrap(), expected);
        assert_eq!(
            m.rx_power_at(b, TransmissionId(99)).unwrap_err(),
            MediumError::UnknownTransmission(TransmissionId(99))
        );
    }

    #[test]
    fn out_of_range_listener_hears_nothing() {
        let mut m = Medium::new(PropagationModel::default());
        let a = m.add_radio(Position::new(0.0, 0.0), SENS);
        let far = m.add_radio(Position::new(150.0, 0.0), SENS);
        m.set_listening(far, true, SimTime(0)).unwrap();
        let (tx, listeners) = m.begin_tx(a, data(10), 1.0, SimTime(0)).unwrap();
        assert!(listeners.is_empty());
        assert_eq!(m.rx_power_at(far, tx.id).unwrap(), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // Any pair of overlapping transmissions is corrupted at every
            // receiver; disjoint ones never are.
            #[test]
            fn collision_symmetry(s1 in 0u64..20_000, s2 in 0u64..20_000, len1 in 1u16..10, len2 in 1u16..10) {
                let (mut m, [a, b, c]) = medium3();
                m.set_listening(c, true, SimTime(0)).unwrap();
                let mut starts = [(s1, a, len1), (s2, b, len2)];
                starts.sort_by_key(|s| s.0);
                let f0 = data(starts[0].2);
                let f1 = data(starts[1].2);
                let end0 = SimTime(starts[0].0) + f0.airtime();
                let overlap = starts[1].0 < end0.0;

                let (t0, _) = m.begin_tx(starts[0].1, f0, 1.0, SimTime(starts[0].0)).unwrap();
                let mut reports = Vec::new();
                if overlap {
                    let (t1, _) = m.begin_tx(starts[1].1, f1, 1.0, SimTime(starts[1].0)).unwrap();
                    let mut ends = [(t0.end(), t0.id), (t1.end(), t1.id)];
                    ends.sort();
                    for (at, id) in ends {
                        reports.extend(m.end_tx(id, at).unwrap().1);
                    }
                } else {
                    reports.extend(m.end_tx(t0.id, t0.end()).unwrap().1);
                    let (t1, _) = m.begin_tx(starts[1].1, f1, 1.0, SimTime(starts[1].0)).unwrap();
                    reports.extend(m.end_tx(t1.id, t1.end()).unwrap().1);
                }
                let at_c: Vec<_> = reports.iter().filter(|(r, _)| *r == c).collect();
                prop_assert_eq!(at_c.len(), 2);
                for (_, r) in at_c {
                    prop_assert_eq!(r.corrupted, overlap);
                }
            }
        }
    }
}
