//! Txid assignment under both distributor queue modes, and redelivery of a
//! failed batch.

use coordsim::queue::{distributor_push, FifoQueue, QueueMode};
use coordsim::storage::records::{table, STATE_COUNTER};
use coordsim::storage::KvStore;
use coordsim::sync::counter_read;

fn main() -> coordsim::Result<()> {
    for mode in [QueueMode::AtomicPush, QueueMode::SequenceNumber] {
        let mut kv = KvStore::with_tables(&table::ALL);
        let mut q = FifoQueue::new(2, Some(3));
        let txids: Vec<_> = (0..3)
            .map(|i| distributor_push(&mut kv, &mut q, mode, i, |t| format!("update {t}")))
            .collect::<Result<_, _>>()?;
        println!(
            "{:<16} txids {txids:?}, state counter {}",
            mode.as_str(),
            counter_read(&kv, STATE_COUNTER)?
        );

        let first = q.dispatch().expect("work queued");
        q.fail();
        let again = q.dispatch().expect("redelivered");
        assert_eq!(first.messages, again.messages);
        println!("  batch of {} redelivered, delivery {}", again.messages.len(), again.delivery_count);
    }
    Ok(())
}
