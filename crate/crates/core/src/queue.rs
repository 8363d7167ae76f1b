//! FIFO queues with batching, a single in-flight invocation per queue and
//! identical-batch redelivery.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::Txid;
use crate::storage::records::STATE_COUNTER;
use crate::storage::KvStore;
use crate::sync::counter_add;

/// How the distributor queue assigns transaction ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueueMode {
    /// Enqueue and `state` counter increment happen as one step; the txid is
    /// the new counter value.
    #[default]
    AtomicPush,
    /// The txid is the queue sequence number; the counter is raised later,
    /// inside the writer's commit.
    SequenceNumber,
}

impl QueueMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QueueMode::AtomicPush => "atomic-push",
            QueueMode::SequenceNumber => "sequence-number",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueMessage<T> {
    pub seqno: u64,
    pub payload: T,
    pub enqueue_time: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch<T> {
    pub messages: Vec<QueueMessage<T>>,
    pub delivery_count: u32,
}

/// What happened to a batch whose invocation failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FailOutcome<T> {
    /// The batch stays at the head and will be redelivered as is.
    Redeliver,
    /// Retry budget exhausted; the messages leave the queue.
    DeadLetter(Vec<QueueMessage<T>>),
}

#[derive(Debug, Clone)]
pub struct FifoQueue<T> {
    waiting: VecDeque<QueueMessage<T>>,
    in_flight: Option<Batch<T>>,
    /// A batch that failed or must be delivered again.
    retry: Option<Batch<T>>,
    next_seqno: u64,
    batch_max: usize,
    retry_cap: Option<u32>,
}

impl<T: Clone> FifoQueue<T> {
    pub fn new(batch_max: usize, retry_cap: Option<u32>) -> Self {
        assert!(batch_max > 0, "batch_max must be positive");
        FifoQueue {
            waiting: VecDeque::new(),
            in_flight: None,
            retry: None,
            next_seqno: 1,
            batch_max,
            retry_cap,
        }
    }

    pub fn enqueue(&mut self, payload: T, now: u64) -> u64 {
        let seqno = self.next_seqno;
        self.next_seqno += 1;
        self.waiting.push_back(QueueMessage {
            seqno,
            payload,
            enqueue_time: now,
        });
        seqno
    }

    pub fn busy(&self) -> bool {
        self.in_flight.is_some()
    }

    pub fn has_work(&self) -> bool {
        self.retry.is_some() || !self.waiting.is_empty()
    }

    pub fn is_drained(&self) -> bool {
        !self.busy() && !self.has_work()
    }

    /// Hands out the next batch unless an invocation is already running.
    pub fn dispatch(&mut self) -> Option<Batch<T>> {
        if self.busy() {
            return None;
        }
        let batch = match self.retry.take() {
            Some(mut b) => {
                b.delivery_count += 1;
                b
            }
            None => {
                if self.waiting.is_empty() {
                    return None;
                }
                let n = self.waiting.len().min(self.batch_max);
                Batch {
                    messages: self.waiting.drain(..n).collect(),
                    delivery_count: 1,
                }
            }
        };
        self.in_flight = Some(batch.clone());
        Some(batch)
    }

    pub fn complete(&mut self) {
        self.in_flight = None;
    }

    /// Completes the batch but schedules one more identical delivery, as an
    /// at-least-once queue may do without any failure.
    pub fn complete_with_duplicate(&mut self) {
        if let Some(b) = self.in_flight.take() {
            self.retry = Some(b);
        }
    }

    pub fn fail(&mut self) -> FailOutcome<T> {
        let Some(b) = self.in_flight.take() else {
            return FailOutcome::Redeliver;
        };
        if self.retry_cap.is_some_and(|cap| b.delivery_count > cap) {
            return FailOutcome::DeadLetter(b.messages);
        }
        self.retry = Some(b);
        FailOutcome::Redeliver
    }
}

/// Pushes an update to the distributor queue and returns its txid.
/// `make` builds the payload once the txid is known.
pub fn distributor_push<T: Clone>(
    kv: &mut KvStore,
    queue: &mut FifoQueue<T>,
    mode: QueueMode,
    now: u64,
    make: impl FnOnce(Txid) -> T,
) -> Result<Txid> {
    match mode {
        QueueMode::AtomicPush => {
            let txid = counter_add(kv, STATE_COUNTER, 1)?;
            queue.enqueue(make(txid), now);
            Ok(txid)
        }
        QueueMode::SequenceNumber => {
            let txid = queue.next_seqno;
            let seqno = queue.enqueue(make(txid), now);
            debug_assert_eq!(seqno, txid);
            Ok(txid)
        }
    }
}
