//! Glue between the scheduler, the medium and the per-device radios.
//!
//! Protocol worlds own a [`Net`] and route [`PhyEvent`]s back into it; the
//! net keeps radio modes, medium listening state and the event queue in
//! step so protocol code only ever asks for a mode or a transmission.

use thiserror::Error;

use crate::frame::Frame;
use crate::kernel::{EntityId, KernelError, Scheduler, SimDuration, SimTime};
use crate::medium::{ChannelState, Medium, MediumError, Position, RadioId, ReceptionReport, Transmission, TransmissionId};
use crate::radio::{EnergyLedger, Radio, RadioError, RadioMode, RadioParams};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Medium(#[from] MediumError),
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error("protocol state machine: {0}")]
    Fsm(String),
    #[error("invariant violated at {at}: {what}")]
    Invariant { at: SimTime, what: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhyEvent {
    /// A Sleep<->Rx/Tx switch has settled.
    RadioReady(RadioId),
    /// Own transmission left the air.
    TxEnd(TransmissionId),
    /// A carrier became audible at `radio` (from the first bit, or mid-air).
    Carrier { radio: RadioId, tx: TransmissionId },
    RxEnd { radio: RadioId, report: ReceptionReport },
}

#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub enum RadioKind {
    Main,
    WakeUp,
}

#[derive(Debug, Clone)]
struct Slot {
    owner: EntityId,
    kind: RadioKind,
    radio: Radio,
    tx_power_mw: f64,
}

/// Energy record of one radio at the end of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceEnergy {
    pub owner: EntityId,
    pub kind: RadioKind,
    pub params: RadioParams,
    pub ledger: EnergyLedger,
}

pub struct Net<M> {
    pub sched: Scheduler<M>,
    pub medium: Medium,
    slots: Vec<Slot>,
}

impl<M: From<PhyEvent>> Net<M> {
    pub fn new(medium: Medium) -> Self {
        Net { sched: Scheduler::new(), medium, slots: Vec::new() }
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn add_radio(
        &mut self,
        owner: EntityId,
        kind: RadioKind,
        params: RadioParams,
        initial: RadioMode,
        pos: Position,
        sensitivity_mw: f64,
        tx_power_mw: f64,
    ) -> RadioId {
        let id = self.medium.add_radio(pos, sensitivity_mw);
        assert_eq!(id.0 as usize, self.slots.len());
        if initial.is_receiving() {
            self.medium.set_listening(id, true, self.now()).expect("fresh radio");
        }
        self.slots.push(Slot { owner, kind, radio: Radio::new(params, initial), tx_power_mw });
        id
    }

    pub fn radio(&self, id: RadioId) -> &Radio {
        &self.slots[id.0 as usize].radio
    }

    pub fn owner(&self, id: RadioId) -> EntityId {
        self.slots[id.0 as usize].owner
    }

    pub fn mode(&self, id: RadioId) -> RadioMode {
        self.radio(id).mode()
    }

    fn sync_listening(&mut self, id: RadioId) -> Result<(), SimError> {
        let now = self.now();
        let on = self.slots[id.0 as usize].radio.mode().is_receiving();
        let sensed = self.medium.set_listening(id, on, now)?;
        let owner = self.owner(id);
        for tx in sensed {
            self.sched.schedule(now, owner, PhyEvent::Carrier { radio: id, tx }.into())?;
        }
        Ok(())
    }

    /// Requests a mode change. If the radio has to settle first, a
    /// [`PhyEvent::RadioReady`] is delivered to the owner when it has.
    pub fn set_mode(&mut self, id: RadioId, mode: RadioMode) -> Result<SimTime, SimError> {
        let now = self.now();
        let effective = self.slots[id.0 as usize].radio.set_mode(mode, now)?;
        if effective > now {
            let owner = self.owner(id);
            self.sched.schedule(effective, owner, PhyEvent::RadioReady(id).into())?;
        }
        self.sync_listening(id)?;
        Ok(effective)
    }

    /// Completes a pending switch; call when handling `RadioReady`.
    pub fn complete_switch(&mut self, id: RadioId) -> Result<RadioMode, SimError> {
        let now = self.now();
        let mode = self.slots[id.0 as usize].radio.complete_switch(now)?;
        self.sync_listening(id)?;
        Ok(mode)
    }

    /// Puts `frame` on the air. The radio must already be in Tx.
    pub fn transmit(&mut self, id: RadioId, frame: Frame) -> Result<Transmission, SimError> {
        let now = self.now();
        let slot = &mut self.slots[id.0 as usize];
        slot.radio.start_transmit()?;
        let tx_power = slot.tx_power_mw;
        let owner = slot.owner;
        let (tx, listeners) = match self.medium.begin_tx(id, frame, tx_power, now) {
            Ok(ok) => ok,
            Err(e) => {
                self.slots[id.0 as usize].radio.finish_transmit();
                return Err(e.into());
            }
        };
        self.sched.schedule(tx.end(), owner, PhyEvent::TxEnd(tx.id).into())?;
        for r in listeners {
            self.sched.schedule(now, self.owner(r), PhyEvent::Carrier { radio: r, tx: tx.id }.into())?;
        }
        Ok(tx)
    }

    /// Takes a finished transmission off the air and queues reception
    /// reports for everyone who was still listening.
    pub fn end_transmission(&mut self, tx: TransmissionId) -> Result<Transmission, SimError> {
        let now = self.now();
        let (t, reports) = self.medium.end_tx(tx, now)?;
        self.slots[t.source.0 as usize].radio.finish_transmit();
        for (radio, report) in reports {
            self.sched.schedule(now, self.owner(radio), PhyEvent::RxEnd { radio, report }.into())?;
        }
        Ok(t)
    }

    pub fn carrier_sense(&self, id: RadioId, window: SimDuration) -> Result<ChannelState, SimError> {
        Ok(self.medium.carrier_sense(id, window, self.now())?)
    }

    /// Closes every ledger at `end` and returns them in radio order.
    pub fn finalize(&mut self, end: SimTime) -> Result<Vec<DeviceEnergy>, SimError> {
        self.slots
            .iter_mut()
            .map(|s| {
                let ledger = s.radio.finalize(end)?.clone();
                Ok(DeviceEnergy { owner: s.owner, kind: s.kind, params: *s.radio.params(), ledger })
            })
            .collect()
    }
}
