//! Discrete-event scheduler. Events fire in (time, insertion order).

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

pub type SimTime = u64;
pub type EventId = u64;

#[derive(Debug)]
pub struct Scheduler<A> {
    now: SimTime,
    next_id: EventId,
    heap: BinaryHeap<Reverse<(SimTime, EventId)>>,
    actions: BTreeMap<EventId, A>,
    finalized: bool,
}

impl<A> Default for Scheduler<A> {
    fn default() -> Self {
        Scheduler {
            now: 0,
            next_id: 0,
            heap: BinaryHeap::new(),
            actions: BTreeMap::new(),
            finalized: false,
        }
    }
}

impl<A> Scheduler<A> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn schedule(&mut self, action: A, delay: SimTime) -> EventId {
        assert!(!self.finalized, "schedule on a finalized simulator");
        let id = self.next_id;
        self.next_id += 1;
        self.heap.push(Reverse((self.now + delay, id)));
        self.actions.insert(id, action);
        id
    }

    pub fn cancel(&mut self, id: EventId) -> Option<A> {
        self.actions.remove(&id)
    }

    /// Advances time to the next live event and returns it.
    pub fn pop(&mut self) -> Option<(SimTime, A)> {
        while let Some(Reverse((t, id))) = self.heap.pop() {
            if let Some(a) = self.actions.remove(&id) {
                debug_assert!(t >= self.now);
                self.now = t;
                return Some((t, a));
            }
        }
        None
    }

    pub fn pending(&self) -> usize {
        self.actions.len()
    }

    pub fn iter_pending(&self) -> impl Iterator<Item = &A> {
        self.actions.values()
    }

    pub fn finalize(&mut self) {
        self.finalized = true;
    }
}
