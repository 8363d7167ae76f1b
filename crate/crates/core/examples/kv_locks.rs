//! Timed locks on the system store: acquire, expiry takeover, and a stale
//! holder whose commit is refused.

use coordsim::model::NodeImage;
use coordsim::storage::records::table;
use coordsim::storage::KvStore;
use coordsim::sync::{commit_unlock, lock_acquire, lock_release, NodeCommit};

fn main() -> coordsim::Result<()> {
    let mut kv = KvStore::with_tables(&table::ALL);
    let max_hold = 20;

    for now in [5, 10, 30] {
        let got = lock_acquire(&mut kv, "/app", now, max_hold)?;
        println!("t={now:<3} acquire /app -> {}", got.acquired);
    }

    let stale = NodeCommit {
        path: "/app".into(),
        holder_ts: Some(5),
        image: Some(NodeImage {
            data: b"late".to_vec(),
            mtxid: 1,
            ..Default::default()
        }),
        seq_counter: None,
    };
    println!("commit by holder from t=5 -> {:?}", commit_unlock(&mut kv, &[stale], 1, vec![])?);
    println!("release by holder from t=30 -> {:?}", lock_release(&mut kv, "/app", 30)?);
    Ok(())
}
