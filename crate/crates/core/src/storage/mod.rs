//! Simulated cloud stores: a strongly consistent key-value system store and a
//! region-replicated object store for user data.

pub mod kv;
pub mod records;
pub mod user;

pub use kv::{CmpOp, Condition, Item, KvStore, Mutation, TxOp, TxOutcome, UpdateOutcome, Value};
pub use records::{DoneMarker, SessionRecord, SessionStatus, SystemNodeRecord};
pub use user::{DataNodeObject, UserStore};
