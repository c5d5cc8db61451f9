//! Discrete-event core: integer nanosecond clock, a cancellable event queue
//! ordered by `(fire_at, seq)`, and seeded random streams.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

const NANOS_PER_SEC: u64 = 1_000_000_000;

/// Simulation timestamp, nanoseconds since simulation start.
#[derive(Debug, Default, Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(pub u64);

/// Non-negative span between two [`SimTime`]s, in nanoseconds.
#[derive(Debug, Default, Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimDuration(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_secs_f64(secs: f64) -> SimTime {
        SimTime(SimDuration::from_secs_f64(secs).0)
    }

    pub fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    pub fn checked_add(self, d: SimDuration) -> Option<SimTime> {
        self.0.checked_add(d.0).map(SimTime)
    }

    /// Span from `earlier` to `self`, or `None` if `earlier` is later.
    pub fn checked_since(self, earlier: SimTime) -> Option<SimDuration> {
        self.0.checked_sub(earlier.0).map(SimDuration)
    }

    pub fn saturating_sub(self, d: SimDuration) -> SimTime {
        SimTime(self.0.saturating_sub(d.0))
    }
}

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);

    pub const fn from_nanos(ns: u64) -> Self {
        SimDuration(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimDuration(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimDuration(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimDuration(s * NANOS_PER_SEC)
    }

    /// Rounds to the nearest nanosecond. Negative and NaN inputs map to zero.
    pub fn from_secs_f64(secs: f64) -> Self {
        if !(secs > 0.0) {
            return SimDuration::ZERO;
        }
        SimDuration((secs * NANOS_PER_SEC as f64).round() as u64)
    }

    /// Time needed to clock `bits` out at `bitrate_bps`, rounded up to the
    /// next whole nanosecond.
    pub fn for_bits(bits: u64, bitrate_bps: u64) -> Self {
        assert!(bitrate_bps > 0, "bitrate must be positive");
        let num = bits as u128 * NANOS_PER_SEC as u128;
        SimDuration(num.div_ceil(bitrate_bps as u128) as u64)
    }

    pub fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    pub fn checked_mul(self, k: u64) -> Option<SimDuration> {
        self.0.checked_mul(k).map(SimDuration)
    }
}

impl Add<SimDuration> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimDuration) -> SimTime {
        self.checked_add(rhs).expect("simulation clock overflow")
    }
}

impl AddAssign<SimDuration> for SimTime {
    fn add_assign(&mut self, rhs: SimDuration) {
        *self = *self + rhs;
    }
}

impl Sub<SimTime> for SimTime {
    type Output = SimDuration;

    fn sub(self, rhs: SimTime) -> SimDuration {
        self.checked_since(rhs).expect("negative simulation interval")
    }
}

impl Add for SimDuration {
    type Output = SimDuration;

    fn add(self, rhs: SimDuration) -> SimDuration {
        SimDuration(self.0.checked_add(rhs.0).expect("duration overflow"))
    }
}

impl AddAssign for SimDuration {
    fn add_assign(&mut self, rhs: SimDuration) {
        *self = *self + rhs;
    }
}

impl Sub for SimDuration {
    type Output = SimDuration;

    fn sub(self, rhs: SimDuration) -> SimDuration {
        SimDuration(self.0.checked_sub(rhs.0).expect("negative duration"))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.9}s", self.as_secs_f64())
    }
}

impl fmt::Display for SimDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.9}s", self.as_secs_f64())
    }
}

/// Identifies the simulated entity (base station or node) an event is for.
#[derive(Debug, Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: EntityId,
    pub payload: P,
}

/// Returned by [`Scheduler::schedule`]; the only way to cancel an event.
#[derive(Debug, Copy, Clone, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("event scheduled at {at} but clock is already at {now}")]
    SchedulingInPast { at: SimTime, now: SimTime },
    #[error("run_until({to}) would move the clock back from {now}")]
    ClockRewind { to: SimTime, now: SimTime },
    #[error("simulation time overflow")]
    Overflow,
}

struct Queued<P>(Event<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.seq == other.0.seq
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.fire_at, other.0.seq).cmp(&(self.0.fire_at, self.0.seq))
    }
}

/// Single-threaded event queue with a monotonic clock.
pub struct Scheduler<P> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Queued<P>>,
    pending: HashSet<u64>,
    dispatched: u64,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Scheduler<P> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            pending: HashSet::new(),
            dispatched: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of events dispatched over the scheduler's lifetime.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn schedule(
        &mut self,
        fire_at: SimTime,
        target: EntityId,
        payload: P,
    ) -> Result<EventHandle, KernelError> {
        if fire_at < self.now {
            return Err(KernelError::SchedulingInPast { at: fire_at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.insert(seq);
        self.queue.push(Queued(Event { fire_at, seq, target, payload }));
        Ok(EventHandle(seq))
    }

    pub fn schedule_in(
        &mut self,
        delay: SimDuration,
        target: EntityId,
        payload: P,
    ) -> Result<EventHandle, KernelError> {
        let at = self.now.checked_add(delay).ok_or(KernelError::Overflow)?;
        self.schedule(at, target, payload)
    }

    /// Returns true iff the event was still pending; it will now never fire.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.pending.remove(&handle.0)
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.pending.contains(&handle.0)
    }

    /// Pops the next live event with `fire_at <= t_end` and advances the
    /// clock to it.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<Event<P>> {
        loop {
            let top = self.queue.peek()?;
            if top.0.fire_at > t_end {
                return None;
            }
            let Queued(ev) = self.queue.pop().expect("peeked");
            if !self.pending.remove(&ev.seq) {
                continue;
            }
            debug_assert!(ev.fire_at >= self.now);
            self.now = ev.fire_at;
            self.dispatched += 1;
            return Some(ev);
        }
    }

    /// Moves the clock forward without dispatching; fails if events at or
    /// before `t` are still pending or `t` is in the past.
    pub fn advance_to(&mut self, t: SimTime) -> Result<(), KernelError> {
        if t < self.now {
            return Err(KernelError::ClockRewind { to: t, now: self.now });
        }
        self.now = t;
        Ok(())
    }

    /// Dispatches every event with `fire_at <= t_end`, including events the
    /// handler schedules along the way, then sets the clock to `t_end`.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> Result<u64, KernelError>
    where
        F: FnMut(&mut Scheduler<P>, Event<P>),
    {
        if t_end < self.now {
            return Err(KernelError::ClockRewind { to: t_end, now: self.now });
        }
        let mut count = 0;
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, ev);
            count += 1;
        }
        self.now = t_end;
        Ok(count)
    }
}

/// Per-run source of independent, reproducible random streams.
///
/// Backed by ChaCha8 (`rand_chacha`), whose output is specified bit-for-bit
/// and does not depend on platform or word size. Substream `i` uses the run
/// seed as key and `i` as the ChaCha stream number, so consumers with
/// different indices never share draws and adding a consumer leaves the
/// others untouched. By convention index 0 is the base station and
/// `node + 1` is sensor node `node`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn substream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    const E: EntityId = EntityId(0);

    fn drain(s: &mut Scheduler<&'static str>, t: SimTime) -> Vec<&'static str> {
        let mut out = Vec::new();
        s.run_until(t, |_, ev| out.push(ev.payload)).unwrap();
        out
    }

    #[test]
    fn event_at_now_fires_before_later_ones() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(5), E, "later").unwrap();
        s.schedule(SimTime(0), E, "now").unwrap();
        assert_eq!(drain(&mut s, SimTime(10)), vec!["now", "later"]);
    }

    #[test]
    fn ties_break_by_insertion_order() {
        let mut s = Scheduler::new();
        let t = SimTime::from_secs_f64(1.0);
        s.schedule(t, E, "a").unwrap();
        s.schedule(t, E, "b").unwrap();
        s.schedule(t, E, "c").unwrap();
        assert_eq!(drain(&mut s, t), vec!["a", "b", "c"]);
    }

    #[test]
    fn past_scheduling_is_rejected() {
        let mut s: Scheduler<()> = Scheduler::new();
        s.advance_to(SimTime(100)).unwrap();
        assert_eq!(
            s.schedule(SimTime(99), E, ()),
            Err(KernelError::SchedulingInPast { at: SimTime(99), now: SimTime(100) })
        );
    }

    #[test]
    fn cancel_semantics() {
        let mut s = Scheduler::new();
        let h = s.schedule(SimTime(10), E, "timer").unwrap();
        assert!(s.cancel(h));
        assert!(!s.cancel(h));
        assert!(drain(&mut s, SimTime(20)).is_empty());

        let h2 = s.schedule(SimTime(30), E, "fired").unwrap();
        assert_eq!(drain(&mut s, SimTime(40)), vec!["fired"]);
        assert!(!s.cancel(h2));
    }

    #[test]
    fn empty_run_moves_clock() {
        let mut s: Scheduler<()> = Scheduler::new();
        let end = SimTime::from_secs_f64(10.0);
        assert_eq!(s.run_until(end, |_, _| {}).unwrap(), 0);
        assert_eq!(s.now(), end);
    }

    #[test]
    fn dispatch_order_by_time_then_seq() {
        let mut s = Scheduler::new();
        let sec = |x: f64| SimTime::from_secs_f64(x);
        s.schedule(sec(2.0), E, "2a").unwrap();
        s.schedule(sec(1.0), E, "1").unwrap();
        s.schedule(sec(2.0), E, "2b").unwrap();
        assert_eq!(drain(&mut s, sec(3.0)), vec!["1", "2a", "2b"]);
    }

    #[test]
    fn cascaded_events_fire_in_same_call() {
        // Each firing schedules another 1 s later; all within 10 s fire.
        let mut s: Scheduler<u32> = Scheduler::new();
        s.schedule(SimTime::ZERO, E, 0).unwrap();
        let mut fired = 0;
        let n = s
            .run_until(SimTime::from_secs_f64(10.0), |s, ev| {
                fired += 1;
                s.schedule_in(SimDuration::from_secs(1), E, ev.payload + 1).unwrap();
            })
            .unwrap();
        // t = 0, 1, ..., 10
        assert_eq!(n, 11);
        assert_eq!(fired, 11);
        assert_eq!(s.pending_len(), 1);
    }

    #[test]
    fn clock_never_decreases_for_handlers() {
        let mut s: Scheduler<()> = Scheduler::new();
        for t in [7u64, 3, 9, 3, 1, 8] {
            s.schedule(SimTime(t), E, ()).unwrap();
        }
        let mut last = SimTime::ZERO;
        s.run_until(SimTime(100), |s, ev| {
            assert!(s.now() >= last);
            assert_eq!(s.now(), ev.fire_at);
            last = s.now();
        })
        .unwrap();
    }

    #[test]
    fn bit_airtime_is_exact_at_250kbps() {
        assert_eq!(SimDuration::for_bits(1, 250_000), SimDuration::from_nanos(4_000));
        assert_eq!(SimDuration::for_bits(24, 32_000), SimDuration::from_micros(750));
        // 1/3 µs rounds up.
        assert_eq!(SimDuration::for_bits(1, 3_000_000), SimDuration::from_nanos(334));
    }

    #[test]
    fn substreams_are_reproducible_and_independent() {
        let s = RngStream::new(42);
        let a: Vec<u64> = (0..4).map(|_| 0).scan(s.substream(1), |r, _| Some(r.gen())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(s.substream(1), |r, _| Some(r.gen())).collect();
        let c: Vec<u64> = (0..4).map(|_| 0).scan(s.substream(2), |r, _| Some(r.gen())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn chacha_stream_is_pinned() {
        // Frozen output guards against silent PRNG or derivation changes.
        let mut r = RngStream::new(7).substream(3);
        let first: u64 = r.gen();
        let mut again = RngStream::new(7).substream(3);
        assert_eq!(first, again.gen::<u64>());
        assert_eq!(first, PINNED_SEED7_STREAM3);
    }

    const PINNED_SEED7_STREAM3: u64 = 3_348_856_302_973_006_449;

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dispatch_order_is_sorted_key(times in proptest::collection::vec(0u64..50, 0..40)) {
                let mut s: Scheduler<usize> = Scheduler::new();
                for (i, t) in times.iter().enumerate() {
                    s.schedule(SimTime(*t), E, i).unwrap();
                }
                let mut seen = Vec::new();
                s.run_until(SimTime(100), |_, ev| seen.push((ev.fire_at, ev.seq))).unwrap();
                let mut sorted = seen.clone();
                sorted.sort();
                prop_assert_eq!(seen.len(), times.len());
                prop_assert_eq!(seen, sorted);
            }
        }
    }
}
