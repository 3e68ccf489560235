//! In-process message bus.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::messages::{
    ErrorMsg, Inbound, PlanMsg, SchemaMsg, SchemaScope, Sequenced, StateMsg, StatsMsg, TracesMsg,
};

struct Slot<T> {
    seq: u64,
    history: VecDeque<(u64, Arc<T>)>,
}

/// A latest-wins topic.
///
/// Readers that only care about the newest message use [`Topic::latest`].
/// A short history is retained so that readers polling with a cursor
/// ([`Topic::since`]) see every message as long as they keep up.
pub struct Topic<T> {
    slot: Mutex<Slot<T>>,
    cond: Condvar,
    capacity: usize,
}

impl<T: Sequenced> Topic<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            slot: Mutex::new(Slot { seq: 0, history: VecDeque::with_capacity(capacity.max(1)) }),
            cond: Condvar::new(),
            capacity: capacity.max(1),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Slot<T>> {
        self.slot.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Stamps the next sequence number on `msg` and stores it. Never waits
    /// on readers beyond the brief slot lock.
    pub fn publish(&self, mut msg: T) -> u64 {
        let mut slot = self.lock();
        slot.seq += 1;
        let seq = slot.seq;
        msg.set_seq(seq);
        if slot.history.len() == self.capacity {
            slot.history.pop_front();
        }
        slot.history.push_back((seq, Arc::new(msg)));
        drop(slot);
        self.cond.notify_all();
        seq
    }

    /// Sequence number of the last publish, 0 if none.
    pub fn seq(&self) -> u64 {
        self.lock().seq
    }

    pub fn latest(&self) -> Option<(u64, Arc<T>)> {
        self.lock().history.back().cloned()
    }

    /// Retained messages newer than `cursor`, oldest first.
    pub fn since(&self, cursor: u64) -> Vec<(u64, Arc<T>)> {
        let slot = self.lock();
        slot.history.iter().filter(|(s, _)| *s > cursor).cloned().collect()
    }

    /// Latest message if it is newer than `cursor`, waiting up to `timeout`.
    pub fn wait_newer(&self, cursor: u64, timeout: Duration) -> Option<(u64, Arc<T>)> {
        let deadline = Instant::now() + timeout;
        let mut slot = self.lock();
        while slot.seq <= cursor {
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            slot = self.cond.wait_timeout(slot, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
        }
        slot.history.back().cloned()
    }
}

/// All topics of one running stack.
pub struct Bus {
    pub state: Topic<StateMsg>,
    pub plan: Topic<PlanMsg>,
    pub traces: Topic<TracesMsg>,
    pub stats: Topic<StatsMsg>,
    pub errors: Topic<ErrorMsg>,
    /// Client requests; every consumer walks it with its own cursor.
    pub inbound: Topic<Inbound>,
    schemas: [Topic<SchemaMsg>; 4],
}

impl Default for Bus {
    fn default() -> Self {
        Self::new()
    }
}

impl Bus {
    pub fn new() -> Self {
        const OUT: usize = 64;
        Self {
            state: Topic::new(OUT),
            plan: Topic::new(OUT),
            traces: Topic::new(OUT),
            stats: Topic::new(OUT),
            errors: Topic::new(OUT),
            inbound: Topic::new(1024),
            schemas: std::array::from_fn(|_| Topic::new(1)),
        }
    }

    pub fn shared() -> Arc<Self> {
        Arc::new(Self::new())
    }

    pub fn schema(&self, scope: SchemaScope) -> &Topic<SchemaMsg> {
        &self.schemas[scope.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::thread;

    fn err(i: usize) -> ErrorMsg {
        ErrorMsg::new(i.to_string())
    }

    #[test]
    fn keeps_latest_and_history() {
        let t = Topic::new(3);
        assert!(t.latest().is_none());
        for i in 0..5 {
            t.publish(err(i));
        }
        let (seq, last) = t.latest().unwrap();
        assert_eq!((seq, last.seq, last.message.as_str()), (5, 5, "4"));
        let seqs: Vec<u64> = t.since(0).iter().map(|(s, _)| *s).collect();
        assert_eq!(seqs, vec![3, 4, 5]);
        assert!(t.since(5).is_empty());
    }

    #[test]
    fn wait_newer_times_out_and_wakes() {
        let t = Arc::new(Topic::new(1));
        assert!(t.wait_newer(0, Duration::from_millis(10)).is_none());
        let t2 = t.clone();
        let h = thread::spawn(move || t2.wait_newer(0, Duration::from_secs(5)).map(|(s, _)| s));
        thread::sleep(Duration::from_millis(20));
        t.publish(err(0));
        assert_eq!(h.join().unwrap(), Some(1));
    }

    #[test]
    fn slow_reader_sees_increasing_seqs() {
        let t = Arc::new(Topic::new(1));
        let w = t.clone();
        let writer = thread::spawn(move || {
            for i in 0..20_000 {
                w.publish(err(i));
            }
        });
        let mut last = 0;
        while last < 20_000 {
            if let Some((s, m)) = t.latest() {
                assert!(s >= last);
                assert_eq!(s, m.seq);
                last = s;
            }
            thread::yield_now();
        }
        writer.join().unwrap();
    }

    proptest! {
        #[test]
        fn since_is_ordered_suffix(n in 0usize..50, cap in 1usize..10, cursor in 0u64..60) {
            let t = Topic::new(cap);
            for i in 0..n {
                t.publish(err(i));
            }
            let got: Vec<u64> = t.since(cursor).iter().map(|(s, _)| *s).collect();
            let lo = (n as u64).saturating_sub(cap as u64).max(cursor) + 1;
            let want: Vec<u64> = (lo..=n as u64).collect();
            prop_assert_eq!(got, want);
        }
    }
}
