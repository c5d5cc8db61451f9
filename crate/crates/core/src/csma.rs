//! Unslotted IEEE 802.15.4 CSMA-CA with an always-on receiver.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{CsmaSection, ScenarioConfig, Traffic};
use crate::frame::{DataFrame, Frame, MacAddr};
use crate::kernel::{EntityId, SimDuration, SimTime};
use crate::medium::{ChannelState, Medium, RadioId};
use crate::net::{Net, PhyEvent, RadioKind, SimError};
use crate::radio::RadioMode;
use crate::sim::{device_rng, node_entity, placements, PeriodicSource, RunOutcome, BS_ENTITY};

/// Number of unit backoff periods to wait: uniform on `0..2^be`.
pub fn backoff_periods(rng: &mut ChaCha8Rng, be: u8) -> u64 {
    rng.gen_range(0..(1u64 << be))
}

/// NB/BE bookkeeping for one channel-access attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attempt {
    pub nb: u8,
    pub be: u8,
}

impl Attempt {
    pub fn new(p: &CsmaSection) -> Self {
        Attempt { nb: 0, be: p.min_be }
    }

    /// Records a busy CCA. Returns false once the attempt has failed.
    pub fn on_busy(&mut self, p: &CsmaSection) -> bool {
        self.nb += 1;
        self.be = (self.be + 1).min(p.max_be);
        self.nb <= p.max_csma_backoffs
    }
}

#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub enum CsmaState {
    RxIdle,
    Backoff,
    Cca,
    TxData,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Msg {
    Phy(PhyEvent),
    App,
    BackoffEnd,
    CcaEnd,
}

impl From<PhyEvent> for Msg {
    fn from(p: PhyEvent) -> Self {
        Msg::Phy(p)
    }
}

struct Node {
    addr: MacAddr,
    entity: EntityId,
    radio: RadioId,
    state: CsmaState,
    attempt: Attempt,
    rng: ChaCha8Rng,
    queue: VecDeque<DataFrame>,
    next_seq: u32,
    source: Option<PeriodicSource>,
}

pub struct CsmaWorld {
    cfg: ScenarioConfig,
    net: Net<Msg>,
    bs_radio: RadioId,
    nodes: Vec<Node>,
    unit: SimDuration,
    cca: SimDuration,
    end: SimTime,
    generated: u64,
    received: u64,
    dropped_queue: u64,
    dropped_access: u64,
    tx_starts: Vec<(usize, SimTime)>,
}

impl CsmaWorld {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        let (bs_pos, node_pos) = placements(cfg);
        let mut net = Net::new(Medium::new(cfg.propagation()));
        let sens = cfg.data_sensitivity_mw();
        let tx_mw = cfg.tx_power_mw();
        let bs_radio = net.add_radio(BS_ENTITY, RadioKind::Main, cfg.main_radio(), RadioMode::Rx, bs_pos, sens, tx_mw);
        let mut nodes = Vec::new();
        for (i, pos) in node_pos.iter().enumerate() {
            let entity = node_entity(i);
            let radio = net.add_radio(entity, RadioKind::Main, cfg.main_radio(), RadioMode::Rx, *pos, sens, tx_mw);
            nodes.push(Node {
                addr: MacAddr::node(i),
                entity,
                radio,
                state: CsmaState::RxIdle,
                attempt: Attempt::new(&cfg.csma154),
                rng: device_rng(cfg, Some(i)),
                queue: VecDeque::new(),
                next_seq: 0,
                source: (cfg.scenario.traffic == Traffic::Periodic).then(|| PeriodicSource::from_config(cfg)),
            });
        }
        let mut world = CsmaWorld {
            cfg: cfg.clone(),
            net,
            bs_radio,
            nodes,
            unit: SimDuration::from_secs_f64(cfg.csma154.unit_backoff_s),
            cca: SimDuration::from_secs_f64(cfg.csma154.cca_s),
            end: SimTime::ZERO + cfg.duration(),
            generated: 0,
            received: 0,
            dropped_queue: 0,
            dropped_access: 0,
            tx_starts: Vec::new(),
        };
        for i in 0..world.nodes.len() {
            world.schedule_app(i)?;
        }
        Ok(world)
    }

    /// Queues one packet at node `node` at time `at`.
    pub fn inject(&mut self, node: usize, at: SimTime) -> Result<(), SimError> {
        self.net.sched.schedule(at, node_entity(node), Msg::App)?;
        Ok(())
    }

    /// Start time of every data transmission, as (node, time).
    pub fn tx_starts(&self) -> &[(usize, SimTime)] {
        &self.tx_starts
    }

    fn schedule_app(&mut self, i: usize) -> Result<(), SimError> {
        let node = &mut self.nodes[i];
        if let Some(src) = node.source.as_mut() {
            if let Some(at) = src.next(&mut node.rng) {
                self.net.sched.schedule(at, node.entity, Msg::App)?;
            }
        }
        Ok(())
    }

    pub fn run(self) -> Result<RunOutcome, SimError> {
        self.run_inspect().map(|(_, o)| o)
    }

    pub fn run_inspect(mut self) -> Result<(Self, RunOutcome), SimError> {
        while let Some(ev) = self.net.sched.pop_until(self.end) {
            if ev.target == BS_ENTITY {
                self.on_bs(ev.payload)?;
            } else {
                self.on_node(ev.target.0 as usize - 1, ev.payload)?;
            }
        }
        self.net.sched.advance_to(self.end)?;
        let devices = self.net.finalize(self.end)?;
        let outcome = RunOutcome {
            duration: self.cfg.duration(),
            devices,
            generated: self.generated,
            received: self.received,
            polls: Vec::new(),
            overlaps: self.net.medium.overlap_count(),
            dropped_queue: self.dropped_queue,
            dropped_access: self.dropped_access,
            events: self.net.sched.dispatched(),
        };
        Ok((self, outcome))
    }

    fn on_bs(&mut self, msg: Msg) -> Result<(), SimError> {
        if let Msg::Phy(PhyEvent::RxEnd { radio, report }) = msg {
            if radio == self.bs_radio && !report.corrupted {
                if let Frame::Data(d) = report.transmission.frame {
                    if d.dest == MacAddr::BS {
                        self.received += 1;
                    }
                }
            }
        }
        Ok(())
    }

    fn on_node(&mut self, i: usize, msg: Msg) -> Result<(), SimError> {
        match msg {
            Msg::App => {
                let node = &mut self.nodes[i];
                let frame = self.cfg.data_frame(node.addr, node.next_seq);
                node.next_seq += 1;
                self.generated += 1;
                self.schedule_app(i)?;
                let node = &mut self.nodes[i];
                if node.queue.len() >= self.cfg.scenario.queue_len {
                    self.dropped_queue += 1;
                    return Ok(());
                }
                node.queue.push_back(frame);
                if node.state == CsmaState::RxIdle {
                    self.begin_access(i)?;
                }
                Ok(())
            }
            Msg::BackoffEnd => {
                let node = &mut self.nodes[i];
                node.state = CsmaState::Cca;
                self.net.sched.schedule_in(self.cca, node.entity, Msg::CcaEnd)?;
                Ok(())
            }
            Msg::CcaEnd => self.cca_done(i),
            Msg::Phy(PhyEvent::TxEnd(tx)) => {
                self.net.end_transmission(tx)?;
                let node = &mut self.nodes[i];
                node.queue.pop_front();
                node.state = CsmaState::RxIdle;
                self.net.set_mode(node.radio, RadioMode::Rx)?;
                if !self.nodes[i].queue.is_empty() {
                    self.begin_access(i)?;
                }
                Ok(())
            }
            // Nodes do not process each other's frames.
            Msg::Phy(_) => Ok(()),
        }
    }

    fn begin_access(&mut self, i: usize) -> Result<(), SimError> {
        self.nodes[i].attempt = Attempt::new(&self.cfg.csma154);
        self.backoff(i)
    }

    fn backoff(&mut self, i: usize) -> Result<(), SimError> {
        let node = &mut self.nodes[i];
        node.state = CsmaState::Backoff;
        let periods = backoff_periods(&mut node.rng, node.attempt.be);
        let delay = SimDuration(self.unit.0 * periods);
        self.net.sched.schedule_in(delay, node.entity, Msg::BackoffEnd)?;
        Ok(())
    }

    fn cca_done(&mut self, i: usize) -> Result<(), SimError> {
        let radio = self.nodes[i].radio;
        match self.net.carrier_sense(radio, self.cca)? {
            ChannelState::Idle => {
                let node = &mut self.nodes[i];
                let frame = *node.queue.front().expect("access with empty queue");
                node.state = CsmaState::TxData;
                self.net.set_mode(radio, RadioMode::Tx)?;
                self.net.transmit(radio, Frame::Data(frame))?;
                self.tx_starts.push((i, self.net.now()));
                Ok(())
            }
            ChannelState::Busy => {
                if self.nodes[i].attempt.on_busy(&self.cfg.csma154) {
                    return self.backoff(i);
                }
                // Channel access failure: the frame is dropped.
                self.dropped_access += 1;
                let node = &mut self.nodes[i];
                node.queue.pop_front();
                node.state = CsmaState::RxIdle;
                if !node.queue.is_empty() {
                    self.begin_access(i)?;
                }
                Ok(())
            }
        }
    }
}
