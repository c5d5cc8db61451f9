//! B-MAC low-power listening.
//!
//! Every device (base station included) wakes once per slot at a random
//! phase and listens for one check interval. A sender precedes each data
//! frame with a preamble one slot plus one check interval long, so every
//! sampler in range hears part of it. In microframe mode the preamble is a
//! train of short address-bearing packets and a sampler that is not the
//! destination goes back to sleep after decoding one of them.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{PreambleMode, ScenarioConfig, Traffic};
use crate::frame::{DataFrame, Frame, LplPreamble, MacAddr};
use crate::kernel::{EntityId, EventHandle, SimDuration, SimTime};
use crate::medium::{ChannelState, Medium, RadioId, ReceptionReport, TransmissionId};
use crate::net::{Net, PhyEvent, RadioKind, SimError};
use crate::radio::RadioMode;
use crate::sim::{device_rng, node_entity, placements, PeriodicSource, RunOutcome, BS_ENTITY};

#[derive(Debug, Clone, PartialEq)]
pub enum Msg {
    Phy(PhyEvent),
    SampleTick,
    SampleEnd(u64),
    CcaEnd(u64),
    BackoffEnd,
    MicroframeDecoded { tx: TransmissionId, epoch: u64 },
    WaitExpired(u64),
    App,
}

impl From<PhyEvent> for Msg {
    fn from(p: PhyEvent) -> Self {
        Msg::Phy(p)
    }
}

#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub enum BmacState {
    Sleep,
    WakingToSample,
    CcaSample,
    RxWaitData,
    WakingToSend,
    Cca,
    TxPreamble,
    TxData,
}

/// Time at which a listener that joined a microframe preamble at
/// `listen_start` has received one complete microframe.
pub fn microframe_decode_time(start: SimTime, listen_start: SimTime, microframe: SimDuration) -> SimTime {
    let into = listen_start.checked_since(start).unwrap_or(SimDuration::ZERO).0;
    let mf = microframe.0;
    let boundary = into.div_ceil(mf);
    start + SimDuration((boundary + 1) * mf)
}

struct Agent {
    addr: MacAddr,
    entity: EntityId,
    radio: RadioId,
    state: BmacState,
    epoch: u64,
    rng: ChaCha8Rng,
    queue: VecDeque<DataFrame>,
    next_seq: u32,
    source: Option<PeriodicSource>,
    backoff: Option<EventHandle>,
    sample_tick: Option<EventHandle>,
    /// A sample is due as soon as the radio is free.
    want_sample: bool,
    /// Restart the sampling period when the device next goes to sleep.
    resync: bool,
    listen_start: SimTime,
    saw_preamble: bool,
}

pub struct BmacWorld {
    cfg: ScenarioConfig,
    net: Net<Msg>,
    /// Index 0 is the base station; `i + 1` is node `i`.
    agents: Vec<Agent>,
    slot: SimDuration,
    check: SimDuration,
    cca: SimDuration,
    max_wait: SimDuration,
    microframe: Option<SimDuration>,
    end: SimTime,
    generated: u64,
    received: u64,
    dropped_queue: u64,
    unannounced: u64,
    delivery_times: Vec<(usize, SimTime)>,
}

impl BmacWorld {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        let (bs_pos, node_pos) = placements(cfg);
        let mut net = Net::new(Medium::new(cfg.propagation()));
        let sens = cfg.data_sensitivity_mw();
        let tx_mw = cfg.tx_power_mw();
        let b = &cfg.bmac;
        let slot = SimDuration::from_secs_f64(b.slot_duration_s);
        let microframe = match b.preamble_mode {
            PreambleMode::Carrier => None,
            PreambleMode::Microframe => {
                Some(SimDuration::for_bits(b.microframe_bytes as u64 * 8, cfg.radio.main.bitrate_bps))
            }
        };
        let data_airtime = cfg.data_frame(MacAddr::node(0), 0).airtime();

        let mut agents = Vec::new();
        let positions = std::iter::once((None, bs_pos)).chain(node_pos.iter().enumerate().map(|(i, p)| (Some(i), *p)));
        for (node, pos) in positions {
            let entity = node.map_or(BS_ENTITY, node_entity);
            let radio = net.add_radio(entity, RadioKind::Main, cfg.main_radio(), RadioMode::Sleep, pos, sens, tx_mw);
            let source = match (node, cfg.scenario.traffic) {
                (Some(_), Traffic::Periodic) => Some(PeriodicSource::from_config(cfg)),
                _ => None,
            };
            agents.push(Agent {
                addr: node.map_or(MacAddr::BS, MacAddr::node),
                entity,
                radio,
                state: BmacState::Sleep,
                epoch: 0,
                rng: device_rng(cfg, node),
                queue: VecDeque::new(),
                next_seq: 0,
                source,
                backoff: None,
                sample_tick: None,
                want_sample: false,
                resync: false,
                listen_start: SimTime::ZERO,
                saw_preamble: false,
            });
        }

        let mut world = BmacWorld {
            cfg: cfg.clone(),
            net,
            agents,
            slot,
            check: SimDuration::from_secs_f64(b.check_interval_s),
            cca: SimDuration::from_secs_f64(b.cca_s),
            // Long enough to cover a whole preamble that starts just as
            // the sample begins, plus its data frame.
            max_wait: slot + SimDuration::from_secs_f64(b.check_interval_s) + data_airtime,
            microframe,
            end: SimTime::ZERO + cfg.duration(),
            generated: 0,
            received: 0,
            dropped_queue: 0,
            unannounced: 0,
            delivery_times: Vec::new(),
        };
        for a in 0..world.agents.len() {
            let phase = SimDuration(world.agents[a].rng.gen_range(0..world.slot.0));
            world.schedule_sample(a, SimTime::ZERO + phase)?;
            world.schedule_app(a)?;
        }
        Ok(world)
    }

    /// Replaces the random sampling phases (index 0 is the base station).
    pub fn set_sample_phases(&mut self, phases: &[SimDuration]) -> Result<(), SimError> {
        assert_eq!(phases.len(), self.agents.len());
        for (a, &p) in phases.iter().enumerate() {
            if let Some(h) = self.agents[a].sample_tick.take() {
                self.net.sched.cancel(h);
            }
            self.schedule_sample(a, SimTime::ZERO + p)?;
        }
        Ok(())
    }

    /// Queues one packet at node `node` at time `at`, on top of any
    /// configured traffic.
    pub fn inject(&mut self, node: usize, at: SimTime) -> Result<(), SimError> {
        self.net.sched.schedule(at, node_entity(node), Msg::App)?;
        Ok(())
    }

    /// Data frames delivered to the base station, as (node, end time).
    pub fn deliveries(&self) -> &[(usize, SimTime)] {
        &self.delivery_times
    }

    /// Deliveries not preceded by a preamble heard by the receiver.
    pub fn unannounced_deliveries(&self) -> u64 {
        self.unannounced
    }

    fn schedule_sample(&mut self, a: usize, at: SimTime) -> Result<(), SimError> {
        let entity = self.agents[a].entity;
        self.agents[a].sample_tick = Some(self.net.sched.schedule(at, entity, Msg::SampleTick)?);
        Ok(())
    }

    fn schedule_app(&mut self, a: usize) -> Result<(), SimError> {
        let agent = &mut self.agents[a];
        if let Some(src) = agent.source.as_mut() {
            if let Some(at) = src.next(&mut agent.rng) {
                self.net.sched.schedule(at, agent.entity, Msg::App)?;
            }
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<RunOutcome, SimError> {
        self.run_in_place()?;
        self.into_outcome()
    }

    fn run_in_place(&mut self) -> Result<(), SimError> {
        while let Some(ev) = self.net.sched.pop_until(self.end) {
            self.handle(ev.target.0 as usize, ev.payload)?;
        }
        self.net.sched.advance_to(self.end)?;
        Ok(())
    }

    /// Runs to the end and keeps the world around for inspection.
    pub fn run_inspect(mut self) -> Result<(Self, RunOutcome), SimError> {
        self.run_in_place()?;
        let devices = self.net.finalize(self.end)?;
        let outcome = self.outcome(devices);
        Ok((self, outcome))
    }

    fn into_outcome(mut self) -> Result<RunOutcome, SimError> {
        let devices = self.net.finalize(self.end)?;
        Ok(self.outcome(devices))
    }

    fn outcome(&self, devices: Vec<crate::net::DeviceEnergy>) -> RunOutcome {
        RunOutcome {
            duration: self.cfg.duration(),
            devices,
            generated: self.generated,
            received: self.received,
            polls: Vec::new(),
            overlaps: self.net.medium.overlap_count(),
            dropped_queue: self.dropped_queue,
            dropped_access: 0,
            events: self.net.sched.dispatched(),
        }
    }

    fn set_state(&mut self, a: usize, state: BmacState) -> u64 {
        let agent = &mut self.agents[a];
        agent.state = state;
        agent.epoch += 1;
        agent.epoch
    }

    fn handle(&mut self, a: usize, msg: Msg) -> Result<(), SimError> {
        let now = self.net.now();
        match msg {
            Msg::SampleTick => {
                self.schedule_sample(a, now + self.slot)?;
                // A device that is already awake has nothing to sample for.
                if self.agents[a].state == BmacState::Sleep {
                    self.agents[a].want_sample = true;
                }
                self.wake(a)
            }
            Msg::App => {
                let frame = {
                    let agent = &mut self.agents[a];
                    let f = self.cfg.data_frame(agent.addr, agent.next_seq);
                    agent.next_seq += 1;
                    f
                };
                self.generated += 1;
                self.schedule_app(a)?;
                if self.agents[a].queue.len() >= self.cfg.scenario.queue_len {
                    self.dropped_queue += 1;
                    return Ok(());
                }
                self.agents[a].queue.push_back(frame);
                self.wake(a)
            }
            Msg::BackoffEnd => {
                self.agents[a].backoff = None;
                self.wake(a)
            }
            Msg::SampleEnd(epoch) => {
                if self.agents[a].epoch == epoch && self.agents[a].state == BmacState::CcaSample {
                    self.go_idle(a)?;
                }
                Ok(())
            }
            Msg::CcaEnd(epoch) => {
                if self.agents[a].epoch == epoch && self.agents[a].state == BmacState::Cca {
                    self.cca_done(a)?;
                }
                Ok(())
            }
            Msg::MicroframeDecoded { tx, epoch } => {
                let agent = &self.agents[a];
                if agent.epoch != epoch || agent.state != BmacState::RxWaitData {
                    return Ok(());
                }
                match self.net.medium.transmission(tx).map(|t| t.frame) {
                    Some(Frame::Preamble(p)) if p.dest != agent.addr => self.go_idle(a),
                    _ => Ok(()),
                }
            }
            Msg::WaitExpired(epoch) => {
                if self.agents[a].epoch == epoch && self.agents[a].state == BmacState::RxWaitData {
                    self.go_idle(a)?;
                }
                Ok(())
            }
            Msg::Phy(PhyEvent::RadioReady(r)) => {
                self.net.complete_switch(r)?;
                match (self.agents[a].state, self.net.mode(r)) {
                    (BmacState::WakingToSample, RadioMode::Rx) => self.start_sample(a),
                    (BmacState::WakingToSend, RadioMode::Rx) => self.start_cca(a),
                    (BmacState::Sleep, RadioMode::Sleep) => self.wake(a),
                    _ => Ok(()),
                }
            }
            Msg::Phy(PhyEvent::Carrier { tx, .. }) => self.on_carrier(a, tx),
            Msg::Phy(PhyEvent::RxEnd { report, .. }) => self.on_rx_end(a, report),
            Msg::Phy(PhyEvent::TxEnd(tx)) => {
                let t = self.net.end_transmission(tx)?;
                match (self.agents[a].state, t.frame) {
                    (BmacState::TxPreamble, Frame::Preamble(_)) => {
                        let frame = *self.agents[a].queue.front().expect("sending with empty queue");
                        self.set_state(a, BmacState::TxData);
                        self.net.transmit(self.agents[a].radio, Frame::Data(frame))?;
                        Ok(())
                    }
                    (BmacState::TxData, Frame::Data(_)) => {
                        self.agents[a].queue.pop_front();
                        self.go_idle(a)
                    }
                    (state, frame) => Err(SimError::Fsm(format!("bmac: tx end of {frame:?} in {state:?}"))),
                }
            }
        }
    }

    /// Called whenever the device may have something to do while asleep:
    /// take a pending sample, or start sending queued data.
    fn wake(&mut self, a: usize) -> Result<(), SimError> {
        let agent = &self.agents[a];
        if agent.state != BmacState::Sleep {
            return Ok(());
        }
        let wants_send = !agent.queue.is_empty() && agent.backoff.is_none();
        if !agent.want_sample && !wants_send {
            return Ok(());
        }
        let radio = agent.radio;
        match self.net.mode(radio) {
            RadioMode::Switching(_) => {
                // Still settling into Sleep; RadioReady calls back here.
                Ok(())
            }
            RadioMode::Sleep => {
                if wants_send {
                    self.agents[a].want_sample = false;
                }
                let next = if wants_send { BmacState::WakingToSend } else { BmacState::WakingToSample };
                self.set_state(a, next);
                let ready = self.net.set_mode(radio, RadioMode::Rx)?;
                if ready == self.net.now() {
                    return self.after_wake(a);
                }
                Ok(())
            }
            _ => {
                // Radio is awake already (left in Rx by go_idle).
                if wants_send {
                    self.agents[a].want_sample = false;
                    self.start_cca(a)
                } else {
                    self.start_sample(a)
                }
            }
        }
    }

    fn after_wake(&mut self, a: usize) -> Result<(), SimError> {
        match self.agents[a].state {
            BmacState::WakingToSample => self.start_sample(a),
            BmacState::WakingToSend => self.start_cca(a),
            _ => Ok(()),
        }
    }

    fn start_sample(&mut self, a: usize) -> Result<(), SimError> {
        let now = self.net.now();
        let epoch = self.set_state(a, BmacState::CcaSample);
        let agent = &mut self.agents[a];
        agent.want_sample = false;
        agent.listen_start = now;
        agent.saw_preamble = false;
        let radio = agent.radio;
        let entity = agent.entity;
        if self.net.mode(radio) != RadioMode::Rx {
            self.net.set_mode(radio, RadioMode::Rx)?;
        }
        self.net.sched.schedule_in(self.check, entity, Msg::SampleEnd(epoch))?;
        // Anything already on the air counts as activity for this sample.
        let on_air: Vec<TransmissionId> = self.net.medium.on_air_at(radio).iter().map(|t| t.id).collect();
        for tx in on_air {
            self.on_carrier(a, tx)?;
        }
        Ok(())
    }

    fn start_cca(&mut self, a: usize) -> Result<(), SimError> {
        let epoch = self.set_state(a, BmacState::Cca);
        let agent = &self.agents[a];
        if self.net.mode(agent.radio) != RadioMode::Rx {
            self.net.set_mode(agent.radio, RadioMode::Rx)?;
        }
        self.net.sched.schedule_in(self.cca, agent.entity, Msg::CcaEnd(epoch))?;
        Ok(())
    }

    fn cca_done(&mut self, a: usize) -> Result<(), SimError> {
        let radio = self.agents[a].radio;
        match self.net.carrier_sense(radio, self.cca)? {
            ChannelState::Idle => {
                let frame = *self.agents[a].queue.front().expect("cca with empty queue");
                self.set_state(a, BmacState::TxPreamble);
                self.agents[a].resync = true;
                self.net.set_mode(radio, RadioMode::Tx)?;
                let preamble = LplPreamble {
                    src: self.agents[a].addr,
                    dest: frame.dest,
                    duration: self.slot + self.check,
                    microframe: self.microframe,
                };
                self.net.transmit(radio, Frame::Preamble(preamble))?;
                Ok(())
            }
            ChannelState::Busy => {
                let delay = SimDuration(self.agents[a].rng.gen_range(0..self.slot.0));
                let entity = self.agents[a].entity;
                self.agents[a].backoff = Some(self.net.sched.schedule_in(delay, entity, Msg::BackoffEnd)?);
                // The busy channel may be a preamble for us: listen as a sampler would.
                self.start_sample(a)
            }
        }
    }

    fn on_carrier(&mut self, a: usize, tx: TransmissionId) -> Result<(), SimError> {
        let state = self.agents[a].state;
        if state != BmacState::CcaSample && state != BmacState::RxWaitData {
            return Ok(());
        }
        let Some(t) = self.net.medium.transmission(tx).cloned() else {
            return Ok(());
        };
        if state == BmacState::CcaSample {
            let epoch = self.set_state(a, BmacState::RxWaitData);
            self.agents[a].resync = true;
            let entity = self.agents[a].entity;
            self.net.sched.schedule_in(self.max_wait, entity, Msg::WaitExpired(epoch))?;
        }
        if let Frame::Preamble(p) = t.frame {
            self.agents[a].saw_preamble = true;
            if let Some(mf) = p.microframe {
                let listen = self.agents[a].listen_start.max(t.start);
                let at = microframe_decode_time(t.start, listen, mf);
                if at <= t.end() {
                    let epoch = self.agents[a].epoch;
                    let entity = self.agents[a].entity;
                    self.net.sched.schedule(at, entity, Msg::MicroframeDecoded { tx, epoch })?;
                }
            }
        }
        Ok(())
    }

    fn on_rx_end(&mut self, a: usize, report: ReceptionReport) -> Result<(), SimError> {
        if self.agents[a].state != BmacState::RxWaitData {
            return Ok(());
        }
        let Frame::Data(data) = report.transmission.frame else {
            // Preamble over; the data frame follows in the same tick.
            return Ok(());
        };
        if !report.corrupted && data.dest == self.agents[a].addr {
            if !self.agents[a].saw_preamble {
                self.unannounced += 1;
            }
            if a == 0 {
                self.received += 1;
                let src = data.src.node_index().expect("data from a node");
                self.delivery_times.push((src, self.net.now()));
            }
        }
        self.go_idle(a)
    }

    /// Leaves whatever the device was doing: sends queued data if allowed,
    /// otherwise puts the radio to sleep.
    fn go_idle(&mut self, a: usize) -> Result<(), SimError> {
        self.set_state(a, BmacState::Sleep);
        let agent = &self.agents[a];
        if !agent.queue.is_empty() && agent.backoff.is_none() {
            return self.start_cca(a);
        }
        if agent.resync {
            // The next sample comes one full slot after going back to sleep,
            // so a preamble starting from now on cannot slip past.
            self.agents[a].resync = false;
            if let Some(h) = self.agents[a].sample_tick.take() {
                self.net.sched.cancel(h);
            }
            let now = self.net.now();
            self.schedule_sample(a, now + self.slot)?;
        }
        let agent = &self.agents[a];
        let radio = agent.radio;
        if self.net.mode(radio) != RadioMode::Sleep {
            self.net.set_mode(radio, RadioMode::Sleep)?;
        }
        self.wake(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Placement;
    use crate::radio::ModeBin;

    fn quiet(duration: f64) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.scenario.protocol = crate::config::Protocol::Bmac;
        cfg.scenario.traffic = Traffic::None;
        cfg.scenario.duration_s = duration;
        cfg
    }

    #[test]
    fn decode_time_examples() {
        let mf = SimDuration::from_micros(256);
        let s = SimTime(1_000_000);
        // Listening from the first bit: one full microframe, then decode.
        assert_eq!(microframe_decode_time(s, s, mf), s + SimDuration::from_micros(256));
        // Joining mid-frame: wait for the next boundary plus one frame.
        assert_eq!(
            microframe_decode_time(s, s + SimDuration::from_micros(10), mf),
            s + SimDuration::from_micros(512)
        );
        assert_eq!(microframe_decode_time(s, s + mf, mf), s + SimDuration::from_micros(512));
    }

    #[test]
    fn idle_duty_cycle_over_100s() {
        let (_, out) = BmacWorld::new(&quiet(100.0)).unwrap().run_inspect().unwrap();
        for d in &out.devices {
            let rx = d.ledger.residency(ModeBin::Rx).as_secs_f64();
            assert!((rx - 1.0).abs() <= 0.010 + 1e-12, "rx residency {rx}");
        }
    }

    #[test]
    fn lone_sender_delivers_after_preamble_and_data() {
        let mut cfg = quiet(20.0);
        cfg.scenario.n_nodes = 1;
        cfg.scenario.placement = Placement::Coordinates(vec![[5.0, 5.0]]);
        let mut w = BmacWorld::new(&cfg).unwrap();
        // Keep both samplers away from the sender's wake-up.
        w.set_sample_phases(&[SimDuration::from_millis(600), SimDuration::from_millis(700)]).unwrap();
        let t0 = SimTime::ZERO + SimDuration::from_secs(5);
        w.inject(0, t0).unwrap();
        let (w, out) = w.run_inspect().unwrap();
        assert_eq!(out.received, 1);
        let main = cfg.main_radio();
        let tx_start = t0 + main.switch_time + SimDuration::from_micros(128);
        let data = cfg.data_frame(MacAddr::node(0), 0).airtime();
        let preamble = SimDuration::from_millis(1010);
        assert_eq!(w.deliveries(), &[(0, tx_start + preamble + data)]);
        assert_eq!(w.unannounced_deliveries(), 0);
    }

    #[test]
    fn simultaneous_cca_collides() {
        let mut cfg = quiet(20.0);
        cfg.scenario.n_nodes = 2;
        cfg.scenario.placement = Placement::Coordinates(vec![[5.0, 5.0], [15.0, 15.0]]);
        let mut w = BmacWorld::new(&cfg).unwrap();
        let ph = SimDuration::from_millis(600);
        w.set_sample_phases(&[SimDuration::from_millis(300), ph, ph]).unwrap();
        let t0 = SimTime::ZERO + SimDuration::from_secs(5);
        w.inject(0, t0).unwrap();
        w.inject(1, t0).unwrap();
        let (_, out) = w.run_inspect().unwrap();
        assert!(out.overlaps >= 1);
        assert_eq!(out.generated, 2);
        assert_eq!(out.received, 0);
    }

    #[test]
    fn overhearer_sleeps_after_one_microframe() {
        let mut cfg = quiet(10.0);
        cfg.scenario.n_nodes = 2;
        cfg.scenario.placement = Placement::Coordinates(vec![[5.0, 5.0], [15.0, 15.0]]);
        let mut w = BmacWorld::new(&cfg).unwrap();
        // Node 1 samples 200 ms into node 0's preamble.
        let t0 = SimTime::ZERO + SimDuration::from_millis(4_000);
        w.set_sample_phases(&[
            SimDuration::from_millis(900),
            SimDuration::from_millis(500),
            SimDuration::from_millis(200),
        ])
        .unwrap();
        w.inject(0, t0).unwrap();
        let (_, out) = w.run_inspect().unwrap();
        assert_eq!(out.received, 1);
        // Node 1's main radio: the owner of entity 2.
        let node1 = out.devices.iter().find(|d| d.owner == node_entity(1)).unwrap();
        let rx = node1.ledger.residency(ModeBin::Rx);
        // Ten 10 ms samples at most, one of them cut short by an early decode.
        assert!(rx < SimDuration::from_millis(100), "{rx}");
        assert!(rx > SimDuration::from_millis(80), "{rx}");
    }

    #[test]
    fn full_queue_drops_are_counted() {
        let mut cfg = quiet(30.0);
        cfg.scenario.n_nodes = 1;
        cfg.scenario.queue_len = 2;
        let mut w = BmacWorld::new(&cfg).unwrap();
        let t0 = SimTime::ZERO + SimDuration::from_secs(2);
        for k in 0..5 {
            w.inject(0, t0 + SimDuration::from_micros(k)).unwrap();
        }
        let (_, out) = w.run_inspect().unwrap();
        assert_eq!(out.generated, 5);
        assert_eq!(out.dropped_queue, 3);
        assert_eq!(out.received, 2);
    }
}
