//! DoRa: base-station-driven wake-up-radio polling.
//!
//! Three sans-IO state machines make up the protocol:
//!
//! * [`BsMac`] on the base station sends a wake-up call (WUC) to one node at
//!   a time and listens for that node's data until it arrives or the timeout
//!   window closes, then advances to the next address.
//! * [`WurMac`] runs on each node's wake-up receiver. A WUC is accepted only
//!   if the decider confirms a strong, long-enough preamble and the decoded
//!   address is the node's own.
//! * [`MainMac`] drives the node's main radio: asleep until the wake-up MAC
//!   signals it, then on to Tx for one data frame, then back to sleep.
//!
//! The two node MACs exchange [`ControlMsg`]s over a zero-latency side
//! channel. [`DoraWorld`] wires the machines to the scheduler, medium and
//! radios.

use std::collections::VecDeque;

use thiserror::Error;

use crate::config::{BsIdleMode, ScenarioConfig};
use crate::frame::{DataFrame, Frame, MacAddr, WakeUpCallFrame};
use crate::kernel::{EntityId, EventHandle, SimDuration, SimTime};
use crate::medium::{dbm_to_mw, Medium, RadioId, ReceptionReport, TransmissionId};
use crate::net::{Net, PhyEvent, RadioKind, SimError};
use crate::radio::RadioMode;
use crate::sim::{placements, RunOutcome, BS_ENTITY};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{machine}: input {input} not accepted in state {state}")]
pub struct IllegalInput {
    pub machine: &'static str,
    pub state: String,
    pub input: String,
}

fn illegal(machine: &'static str, state: impl std::fmt::Debug, input: impl std::fmt::Debug) -> IllegalInput {
    IllegalInput { machine, state: format!("{state:?}"), input: format!("{input:?}") }
}

impl From<IllegalInput> for SimError {
    fn from(e: IllegalInput) -> Self {
        SimError::Fsm(e.to_string())
    }
}

// ---------------------------------------------------------------- decider

/// Piece of a received-power trace: `power_mw` held over `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSegment {
    pub start: SimTime,
    pub end: SimTime,
    pub power_mw: f64,
}

/// Wake-up signal decider: true iff the received power stays at or above
/// `threshold_mw` without interruption for at least `min_duration`.
///
/// Both bounds are inclusive. Segments must be sorted by start; a gap
/// between segments, or any segment below threshold, breaks continuity.
pub fn decide_wakeup(trace: &[PowerSegment], threshold_mw: f64, min_duration: SimDuration) -> bool {
    let mut run_start: Option<SimTime> = None;
    let mut run_end = SimTime::ZERO;
    for seg in trace {
        if seg.end <= seg.start {
            continue;
        }
        if seg.power_mw >= threshold_mw {
            match run_start {
                Some(_) if seg.start == run_end => {}
                _ => run_start = Some(seg.start),
            }
            run_end = seg.end;
            if run_end - run_start.unwrap() >= min_duration {
                return true;
            }
        } else {
            run_start = None;
        }
    }
    false
}

// ---------------------------------------------------------------- BSMAC

#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub enum BsMacState {
    WaitTimer,
    SendWuc,
    WaitData,
}

#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub enum BsInput {
    TimerFired,
    WucSent,
    DataRx { src: MacAddr },
    Timeout,
}

#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub enum BsAction {
    /// Switch to Tx and send a wake-up call to node `target`.
    SendWuc { target: usize },
    /// Switch to Rx and arm the timeout window.
    ListenForData,
    CancelTimeout,
    /// The round for `target` is over; arm the timer for the next one.
    NextRound { target: usize, delivered: bool },
}

/// Base-station polling MAC.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BsMac {
    state: BsMacState,
    current_target: usize,
    n_nodes: usize,
}

impl BsMac {
    pub fn new(n_nodes: usize) -> Self {
        assert!(n_nodes > 0);
        BsMac { state: BsMacState::WaitTimer, current_target: 0, n_nodes }
    }

    pub fn state(&self) -> BsMacState {
        self.state
    }

    pub fn current_target(&self) -> usize {
        self.current_target
    }

    pub fn step(&mut self, input: BsInput) -> Result<Vec<BsAction>, IllegalInput> {
        use BsInput::*;
        use BsMacState::*;
        let actions = match (self.state, input) {
            (WaitTimer, TimerFired) => {
                self.state = SendWuc;
                vec![BsAction::SendWuc { target: self.current_target }]
            }
            (SendWuc, WucSent) => {
                self.state = WaitData;
                vec![BsAction::ListenForData]
            }
            (WaitData, DataRx { src }) if src == MacAddr::node(self.current_target) => {
                let done = self.advance();
                vec![BsAction::CancelTimeout, BsAction::NextRound { target: done, delivered: true }]
            }
            (WaitData, Timeout) => {
                let done = self.advance();
                vec![BsAction::NextRound { target: done, delivered: false }]
            }
            (state, input) => return Err(illegal("bsmac", state, input)),
        };
        Ok(actions)
    }

    fn advance(&mut self) -> usize {
        let done = self.current_target;
        self.current_target = (self.current_target + 1) % self.n_nodes;
        self.state = BsMacState::WaitTimer;
        done
    }
}

// ---------------------------------------------------------------- DoRa-MAC

#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub enum WurMacState {
    Listen,
    DecodeAddress,
    WakeUp,
    WaitTxDone,
}

#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub enum WurInput {
    /// The decider accepted the preamble.
    PreambleOk,
    /// Address field received; `None` when the checksum failed.
    AddrDecoded(Option<MacAddr>),
    /// The wakeup control message has been handed to the main MAC.
    WakeupSent,
    TxDoneCtrl,
}

#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub enum WurAction {
    /// Bill the wake-up receiver at its active current while decoding.
    BeginDecode,
    EndDecode,
    SendWakeup,
    RequestAppData,
}

/// Wake-up receiver MAC of one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WurMac {
    state: WurMacState,
    own: MacAddr,
}

impl WurMac {
    pub fn new(own: MacAddr) -> Self {
        WurMac { state: WurMacState::Listen, own }
    }

    pub fn state(&self) -> WurMacState {
        self.state
    }

    pub fn step(&mut self, input: WurInput) -> Result<Vec<WurAction>, IllegalInput> {
        use WurInput::*;
        use WurMacState::*;
        let actions = match (self.state, input) {
            (Listen, PreambleOk) => {
                self.state = DecodeAddress;
                vec![WurAction::BeginDecode]
            }
            (DecodeAddress, AddrDecoded(Some(addr))) if addr == self.own => {
                self.state = WakeUp;
                vec![WurAction::EndDecode, WurAction::SendWakeup, WurAction::RequestAppData]
            }
            (DecodeAddress, AddrDecoded(_)) => {
                self.state = Listen;
                vec![WurAction::EndDecode]
            }
            (WakeUp, WakeupSent) => {
                self.state = WaitTxDone;
                vec![]
            }
            (WaitTxDone, TxDoneCtrl) => {
                self.state = Listen;
                vec![]
            }
            (state, input) => return Err(illegal("dora-mac", state, input)),
        };
        Ok(actions)
    }
}

// ---------------------------------------------------------------- Mac_Main

#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub enum MainMacState {
    Sleep,
    IdleWaitData,
    Tx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MainInput {
    WakeupCtrl,
    AppData(DataFrame),
    TxComplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MainAction {
    /// Switch the main radio to Tx and send the frame once it settles.
    Transmit(DataFrame),
    SendTxDone,
    RadioSleep,
}

/// Main-radio MAC of one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MainMac {
    state: MainMacState,
}

impl Default for MainMac {
    fn default() -> Self {
        MainMac { state: MainMacState::Sleep }
    }
}

impl MainMac {
    pub fn state(&self) -> MainMacState {
        self.state
    }

    pub fn step(&mut self, input: MainInput) -> Result<Vec<MainAction>, IllegalInput> {
        use MainInput::*;
        use MainMacState::*;
        let actions = match (self.state, input) {
            (Sleep, WakeupCtrl) => {
                self.state = IdleWaitData;
                vec![]
            }
            (IdleWaitData, AppData(frame)) => {
                self.state = Tx;
                vec![MainAction::Transmit(frame)]
            }
            (Tx, TxComplete) => {
                self.state = Sleep;
                vec![MainAction::SendTxDone, MainAction::RadioSleep]
            }
            (state, input) => return Err(illegal("mac-main", state, input)),
        };
        Ok(actions)
    }
}

/// Address carried by a received wake-up call, or `None` if the frame was
/// not a wake-up call or its fields did not survive (collision, bad CRC).
pub fn wuc_address(report: &ReceptionReport) -> Option<MacAddr> {
    match report.transmission.frame {
        Frame::WakeUpCall(wuc) => {
            let mut bits = wuc.encode_fields();
            if report.corrupted {
                // A collision garbles the address field; flip its bits.
                bits[0] ^= 0xFF;
                bits[1] ^= 0xFF;
            }
            WakeUpCallFrame::decode_fields(bits).ok()
        }
        _ => None,
    }
}

#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub enum ControlKind {
    Wakeup,
    TxDone,
}

/// Cross-layer message between a node's two MACs.
#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub struct ControlMsg {
    pub kind: ControlKind,
    pub timestamp: SimTime,
}

// ---------------------------------------------------------------- world

#[derive(Debug, Clone, PartialEq)]
pub enum Msg {
    Phy(PhyEvent),
    WucTimer,
    Timeout,
    PreambleCheck(TransmissionId),
    AddressStart(TransmissionId),
    Ctrl(ControlMsg),
    AppData(DataFrame),
}

impl From<PhyEvent> for Msg {
    fn from(p: PhyEvent) -> Self {
        Msg::Phy(p)
    }
}

/// Carrier currently being examined by a wake-up receiver.
#[derive(Debug, Clone, Copy)]
struct Tracked {
    tx: TransmissionId,
    start: SimTime,
    power_mw: f64,
}

struct BsAgent {
    mac: BsMac,
    radio: RadioId,
    timeout: Option<EventHandle>,
    round: u64,
    pending_wuc: Option<WakeUpCallFrame>,
}

struct NodeAgent {
    addr: MacAddr,
    wur: RadioId,
    main: RadioId,
    wur_mac: WurMac,
    main_mac: MainMac,
    tracked: Option<Tracked>,
    pending_tx: Option<DataFrame>,
    next_seq: u32,
    dead: bool,
}

/// Per-round record kept for diagnostics and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundRecord {
    pub target: usize,
    pub wuc_start: SimTime,
    pub wuc_end: SimTime,
    pub closed_at: SimTime,
    pub delivered: bool,
}

pub struct DoraWorld {
    cfg: ScenarioConfig,
    net: Net<Msg>,
    bs: BsAgent,
    nodes: Vec<NodeAgent>,
    spacing: SimDuration,
    end: SimTime,
    generated: u64,
    received: u64,
    polls: Vec<u64>,
    rounds: VecDeque<RoundRecord>,
    keep_rounds: usize,
    current_round: Option<RoundRecord>,
}

impl DoraWorld {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        let n = cfg.scenario.n_nodes;
        let (bs_pos, node_pos) = placements(cfg);
        let medium = Medium::new(cfg.propagation()).forbid_overlap(true);
        let mut net = Net::new(medium);
        let tx_mw = cfg.tx_power_mw();
        let sens = cfg.data_sensitivity_mw();

        let bs_mode = match cfg.dora.bs_idle_mode {
            BsIdleMode::Rx => RadioMode::Rx,
            BsIdleMode::Sleep => RadioMode::Sleep,
        };
        let bs_radio = net.add_radio(BS_ENTITY, RadioKind::Main, cfg.main_radio(), bs_mode, bs_pos, sens, tx_mw);

        let mut nodes = Vec::with_capacity(n);
        for (i, pos) in node_pos.iter().enumerate() {
            let owner = EntityId(i as u32 + 1);
            let dead = cfg.dora.dead_nodes.contains(&i);
            let wur_mode = if dead { RadioMode::Sleep } else { RadioMode::Rx };
            let main = net.add_radio(owner, RadioKind::Main, cfg.main_radio(), RadioMode::Sleep, *pos, sens, tx_mw);
            let wur = net.add_radio(owner, RadioKind::WakeUp, cfg.wake_up_radio(), wur_mode, *pos, sens, tx_mw);
            nodes.push(NodeAgent {
                addr: MacAddr::node(i),
                wur,
                main,
                wur_mac: WurMac::new(MacAddr::node(i)),
                main_mac: MainMac::default(),
                tracked: None,
                pending_tx: None,
                next_seq: 0,
                dead,
            });
        }

        let spacing = match cfg.scenario.ipa_scope {
            crate::config::IpaScope::Node => SimDuration::from_secs_f64(cfg.scenario.t_ipa_s / n as f64),
            crate::config::IpaScope::Bs => SimDuration::from_secs_f64(cfg.scenario.t_ipa_s),
        };
        let end = SimTime::ZERO + cfg.duration();
        let mut world = DoraWorld {
            cfg: cfg.clone(),
            net,
            bs: BsAgent { mac: BsMac::new(n), radio: bs_radio, timeout: None, round: 0, pending_wuc: None },
            nodes,
            spacing,
            end,
            generated: 0,
            received: 0,
            polls: vec![0; n],
            rounds: VecDeque::new(),
            keep_rounds: 0,
            current_round: None,
        };
        world.arm_round(SimTime::ZERO)?;
        Ok(world)
    }

    /// Keep the last `n` round records (0 disables recording).
    pub fn record_rounds(&mut self, n: usize) {
        self.keep_rounds = n;
    }

    pub fn rounds(&self) -> impl Iterator<Item = &RoundRecord> {
        self.rounds.iter()
    }

    /// Longest a round can take from its timer firing to its close.
    fn round_budget(&self) -> SimDuration {
        let wuc = self.cfg.wake_up_call(MacAddr::node(0)).airtime();
        let wake = match self.cfg.dora.bs_idle_mode {
            BsIdleMode::Rx => SimDuration::ZERO,
            BsIdleMode::Sleep => self.cfg.main_radio().switch_time,
        };
        wake + wuc + SimDuration::from_secs_f64(self.cfg.dora.timeout_window_s)
    }

    /// Schedules the wake-up timer for the next round if it can finish
    /// before the end of the run.
    fn arm_round(&mut self, not_before: SimTime) -> Result<(), SimError> {
        let slot = self.spacing.checked_mul(self.bs.round).ok_or(crate::kernel::KernelError::Overflow)?;
        let at = (SimTime::ZERO + slot).max(not_before);
        if at + self.round_budget() <= self.end {
            self.net.sched.schedule(at, BS_ENTITY, Msg::WucTimer)?;
        }
        Ok(())
    }

    pub fn run(self) -> Result<RunOutcome, SimError> {
        self.run_inspect().map(|(_, o)| o)
    }

    /// Runs to the end and keeps the world around for inspection.
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
            polls: self.polls.clone(),
            overlaps: self.net.medium.overlap_count(),
            dropped_queue: 0,
            dropped_access: 0,
            events: self.net.sched.dispatched(),
        };
        Ok((self, outcome))
    }

    // ---- base station

    fn on_bs(&mut self, msg: Msg) -> Result<(), SimError> {
        match msg {
            Msg::WucTimer => {
                let actions = self.bs.mac.step(BsInput::TimerFired)?;
                self.apply_bs(actions)
            }
            Msg::Timeout => {
                self.bs.timeout = None;
                let actions = self.bs.mac.step(BsInput::Timeout)?;
                self.apply_bs(actions)
            }
            Msg::Phy(PhyEvent::RadioReady(r)) => {
                self.net.complete_switch(r)?;
                if let Some(wuc) = self.bs.pending_wuc.take() {
                    self.send_wuc(wuc)?;
                }
                Ok(())
            }
            Msg::Phy(PhyEvent::TxEnd(tx)) => {
                self.net.end_transmission(tx)?;
                if let Some(r) = self.current_round.as_mut() {
                    r.wuc_end = self.net.now();
                }
                let actions = self.bs.mac.step(BsInput::WucSent)?;
                self.apply_bs(actions)
            }
            Msg::Phy(PhyEvent::RxEnd { report, .. }) => self.bs_receive(report),
            Msg::Phy(PhyEvent::Carrier { .. }) => Ok(()),
            other => Err(SimError::Fsm(format!("base station cannot handle {other:?}"))),
        }
    }

    fn bs_receive(&mut self, report: ReceptionReport) -> Result<(), SimError> {
        if report.corrupted {
            return Ok(());
        }
        let Frame::Data(data) = report.transmission.frame else {
            return Ok(());
        };
        if data.dest != MacAddr::BS {
            return Ok(());
        }
        self.received += 1;
        let actions = self.bs.mac.step(BsInput::DataRx { src: data.src })?;
        self.apply_bs(actions)
    }

    fn send_wuc(&mut self, wuc: WakeUpCallFrame) -> Result<(), SimError> {
        let now = self.net.now();
        if let Some(r) = self.current_round.as_mut() {
            r.wuc_start = now;
        }
        self.net.transmit(self.bs.radio, Frame::WakeUpCall(wuc))?;
        Ok(())
    }

    fn apply_bs(&mut self, actions: Vec<BsAction>) -> Result<(), SimError> {
        let now = self.net.now();
        for action in actions {
            match action {
                BsAction::SendWuc { target } => {
                    self.polls[target] += 1;
                    let wuc = self.cfg.wake_up_call(MacAddr::node(target));
                    self.current_round = Some(RoundRecord {
                        target,
                        wuc_start: now,
                        wuc_end: now,
                        closed_at: now,
                        delivered: false,
                    });
                    let ready = self.net.set_mode(self.bs.radio, RadioMode::Tx)?;
                    if ready == now {
                        self.send_wuc(wuc)?;
                    } else {
                        self.bs.pending_wuc = Some(wuc);
                    }
                }
                BsAction::ListenForData => {
                    self.net.set_mode(self.bs.radio, RadioMode::Rx)?;
                    let t_out = SimDuration::from_secs_f64(self.cfg.dora.timeout_window_s);
                    self.bs.timeout = Some(self.net.sched.schedule_in(t_out, BS_ENTITY, Msg::Timeout)?);
                }
                BsAction::CancelTimeout => {
                    if let Some(h) = self.bs.timeout.take() {
                        self.net.sched.cancel(h);
                    }
                }
                BsAction::NextRound { target, delivered } => {
                    if let Some(mut r) = self.current_round.take() {
                        debug_assert_eq!(r.target, target);
                        r.closed_at = now;
                        r.delivered = delivered;
                        if self.keep_rounds > 0 {
                            if self.rounds.len() == self.keep_rounds {
                                self.rounds.pop_front();
                            }
                            self.rounds.push_back(r);
                        }
                    }
                    if self.cfg.dora.bs_idle_mode == BsIdleMode::Sleep {
                        self.net.set_mode(self.bs.radio, RadioMode::Sleep)?;
                    }
                    self.bs.round += 1;
                    self.arm_round(now)?;
                }
            }
        }
        Ok(())
    }

    // ---- nodes

    fn on_node(&mut self, idx: usize, msg: Msg) -> Result<(), SimError> {
        let now = self.net.now();
        match msg {
            Msg::Phy(PhyEvent::Carrier { radio, tx }) => {
                let node = &mut self.nodes[idx];
                if radio != node.wur || node.wur_mac.state() != WurMacState::Listen || node.tracked.is_some() {
                    return Ok(());
                }
                let power_mw = self.net.medium.rx_power_at(radio, tx)?;
                node.tracked = Some(Tracked { tx, start: now, power_mw });
                let min = SimDuration::from_secs_f64(self.cfg.dora.decider_min_duration_s);
                self.net.sched.schedule_in(min, EntityId(idx as u32 + 1), Msg::PreambleCheck(tx))?;
                Ok(())
            }
            Msg::PreambleCheck(tx) => self.preamble_check(idx, tx),
            Msg::AddressStart(tx) => {
                let node = &self.nodes[idx];
                if node.wur_mac.state() == WurMacState::DecodeAddress && node.tracked.is_some_and(|t| t.tx == tx) {
                    self.net.set_mode(node.wur, RadioMode::Active)?;
                }
                Ok(())
            }
            Msg::Phy(PhyEvent::RxEnd { radio, report }) => {
                if radio == self.nodes[idx].wur {
                    self.wur_frame_end(idx, report)
                } else {
                    Ok(())
                }
            }
            Msg::Ctrl(ctrl) => self.on_ctrl(idx, ctrl),
            Msg::AppData(frame) => {
                let actions = self.nodes[idx].main_mac.step(MainInput::AppData(frame))?;
                self.apply_main(idx, actions)
            }
            Msg::Phy(PhyEvent::RadioReady(r)) => {
                self.net.complete_switch(r)?;
                let node = &mut self.nodes[idx];
                if r == node.main && self.net.mode(r) == RadioMode::Tx {
                    let frame = node.pending_tx.take().ok_or_else(|| SimError::Invariant {
                        at: now,
                        what: format!("node {idx} main radio reached Tx with nothing to send"),
                    })?;
                    if node.main_mac.state() != MainMacState::Tx {
                        return Err(SimError::Invariant {
                            at: now,
                            what: format!("node {idx} main radio in Tx outside TX state"),
                        });
                    }
                    self.net.transmit(r, Frame::Data(frame))?;
                }
                Ok(())
            }
            Msg::Phy(PhyEvent::TxEnd(tx)) => {
                self.net.end_transmission(tx)?;
                let actions = self.nodes[idx].main_mac.step(MainInput::TxComplete)?;
                self.apply_main(idx, actions)
            }
            other => Err(SimError::Fsm(format!("node {idx} cannot handle {other:?}"))),
        }
    }

    fn preamble_check(&mut self, idx: usize, tx: TransmissionId) -> Result<(), SimError> {
        let now = self.net.now();
        let node = &mut self.nodes[idx];
        let Some(track) = node.tracked.filter(|t| t.tx == tx) else {
            return Ok(());
        };
        if node.wur_mac.state() != WurMacState::Listen {
            return Ok(());
        }
        // The carrier is still up if the transmission has not ended.
        let end = if self.net.medium.in_flight(tx) { now } else { track.start };
        let trace = [PowerSegment { start: track.start, end, power_mw: track.power_mw }];
        let threshold = dbm_to_mw(self.cfg.dora.wakeup_threshold_dbm);
        let min = SimDuration::from_secs_f64(self.cfg.dora.decider_min_duration_s);
        if !decide_wakeup(&trace, threshold, min) {
            node.tracked = None;
            return Ok(());
        }
        node.wur_mac.step(WurInput::PreambleOk)?;
        let addr_at = (track.start + SimDuration::from_secs_f64(self.cfg.dora.preamble_s)).max(now);
        self.net.sched.schedule(addr_at, EntityId(idx as u32 + 1), Msg::AddressStart(tx))?;
        Ok(())
    }

    fn wur_frame_end(&mut self, idx: usize, report: ReceptionReport) -> Result<(), SimError> {
        let node = &mut self.nodes[idx];
        if node.tracked.map(|t| t.tx) != Some(report.transmission.id) {
            return Ok(());
        }
        node.tracked = None;
        if node.wur_mac.state() != WurMacState::DecodeAddress {
            return Ok(());
        }
        let addr = wuc_address(&report);
        let actions = node.wur_mac.step(WurInput::AddrDecoded(addr))?;
        self.apply_wur(idx, actions)
    }

    fn apply_wur(&mut self, idx: usize, actions: Vec<WurAction>) -> Result<(), SimError> {
        let now = self.net.now();
        let entity = EntityId(idx as u32 + 1);
        for action in actions {
            let node = &mut self.nodes[idx];
            match action {
                // Active billing starts with the address field itself; the
                // AddressStart event scheduled by the preamble check does it.
                WurAction::BeginDecode => {}
                WurAction::EndDecode => {
                    if self.net.mode(node.wur) == RadioMode::Active {
                        self.net.set_mode(node.wur, RadioMode::Rx)?;
                    }
                }
                WurAction::SendWakeup => {
                    let ctrl = ControlMsg { kind: ControlKind::Wakeup, timestamp: now };
                    self.net.sched.schedule(now, entity, Msg::Ctrl(ctrl))?;
                    node.wur_mac.step(WurInput::WakeupSent)?;
                }
                WurAction::RequestAppData => {
                    // Data is produced on demand with no generation delay.
                    let frame = self.cfg.data_frame(node.addr, node.next_seq);
                    node.next_seq += 1;
                    self.generated += 1;
                    self.net.sched.schedule(now, entity, Msg::AppData(frame))?;
                }
            }
        }
        Ok(())
    }

    fn on_ctrl(&mut self, idx: usize, ctrl: ControlMsg) -> Result<(), SimError> {
        match ctrl.kind {
            ControlKind::Wakeup => {
                let actions = self.nodes[idx].main_mac.step(MainInput::WakeupCtrl)?;
                self.apply_main(idx, actions)
            }
            ControlKind::TxDone => {
                let actions = self.nodes[idx].wur_mac.step(WurInput::TxDoneCtrl)?;
                self.apply_wur(idx, actions)
            }
        }
    }

    fn apply_main(&mut self, idx: usize, actions: Vec<MainAction>) -> Result<(), SimError> {
        let now = self.net.now();
        let entity = EntityId(idx as u32 + 1);
        for action in actions {
            let node = &mut self.nodes[idx];
            match action {
                MainAction::Transmit(frame) => {
                    debug_assert!(!node.dead);
                    let ready = self.net.set_mode(node.main, RadioMode::Tx)?;
                    if ready == now {
                        self.net.transmit(node.main, Frame::Data(frame))?;
                    } else {
                        node.pending_tx = Some(frame);
                    }
                }
                MainAction::SendTxDone => {
                    let ctrl = ControlMsg { kind: ControlKind::TxDone, timestamp: now };
                    self.net.sched.schedule(now, entity, Msg::Ctrl(ctrl))?;
                }
                MainAction::RadioSleep => {
                    self.net.set_mode(node.main, RadioMode::Sleep)?;
                }
            }
        }
        Ok(())
    }
}
