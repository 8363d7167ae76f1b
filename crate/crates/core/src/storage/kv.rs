//! Strongly consistent key-value store with single-item conditional updates
//! and multi-item transactions.
//!
//! Items are attribute maps. A condition is evaluated and a mutation list is
//! applied as one indivisible step; a rejected update leaves the item
//! untouched and hands back its current value.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attribute value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Value {
    Int(u64),
    Str(String),
    Bytes(Vec<u8>),
    List(Vec<Value>),
}

impl Value {
    pub fn as_int(&self) -> Option<u64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(l) => Some(l),
            _ => None,
        }
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

pub type Item = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
}

/// Predicate over a single item. An absent item behaves like an item with no
/// attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Condition {
    Always,
    ItemAbsent,
    FieldAbsent(String),
    FieldEquals(String, Value),
    /// Integer comparison `field <op> operand`; false when the field is
    /// missing or not an integer.
    Compare(String, CmpOp, u64),
    /// Head of a list attribute equals the value; false for empty or missing
    /// lists.
    ListHeadEquals(String, Value),
    And(Vec<Condition>),
    Or(Vec<Condition>),
}

impl Condition {
    pub fn absent(field: &str) -> Self {
        Condition::FieldAbsent(field.to_string())
    }

    pub fn equals(field: &str, value: impl Into<Value>) -> Self {
        Condition::FieldEquals(field.to_string(), value.into())
    }

    pub fn compare(field: &str, op: CmpOp, operand: u64) -> Self {
        Condition::Compare(field.to_string(), op, operand)
    }

    pub fn head_equals(field: &str, value: impl Into<Value>) -> Self {
        Condition::ListHeadEquals(field.to_string(), value.into())
    }

    pub fn evaluate(&self, item: Option<&Item>) -> bool {
        let get = |f: &str| item.and_then(|i| i.get(f));
        match self {
            Condition::Always => true,
            Condition::ItemAbsent => item.is_none(),
            Condition::FieldAbsent(f) => get(f).is_none(),
            Condition::FieldEquals(f, v) => get(f) == Some(v),
            Condition::Compare(f, op, rhs) => match get(f).and_then(Value::as_int) {
                Some(lhs) => match op {
                    CmpOp::Lt => lhs < *rhs,
                    CmpOp::Le => lhs <= *rhs,
                    CmpOp::Gt => lhs > *rhs,
                    CmpOp::Ge => lhs >= *rhs,
                },
                None => false,
            },
            Condition::ListHeadEquals(f, v) => get(f)
                .and_then(Value::as_list)
                .and_then(|l| l.first())
                .is_some_and(|h| h == v),
            Condition::And(cs) => cs.iter().all(|c| c.evaluate(item)),
            Condition::Or(cs) => cs.iter().any(|c| c.evaluate(item)),
        }
    }
}

/// Field-level mutation. Applying any mutation to an absent item creates it,
/// except `DeleteItem`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mutation {
    Set(String, Value),
    Remove(String),
    /// Integer add; a missing field counts as zero.
    Add(String, u64),
    /// `field := max(field, value)`.
    Max(String, u64),
    Append(String, Vec<Value>),
    PopFront(String),
    /// Removes the first occurrence of the value, if any.
    RemoveValue(String, Value),
    DeleteItem,
}

impl Mutation {
    pub fn set(field: &str, value: impl Into<Value>) -> Self {
        Mutation::Set(field.to_string(), value.into())
    }

    pub fn remove(field: &str) -> Self {
        Mutation::Remove(field.to_string())
    }

    pub fn append(field: &str, values: Vec<Value>) -> Self {
        Mutation::Append(field.to_string(), values)
    }
}

/// Applies mutations to a copy; the caller commits the copy only when every
/// mutation succeeded.
fn apply_mutations(key: &str, current: Option<&Item>, muts: &[Mutation]) -> Result<Option<Item>> {
    let mut item = current.cloned().unwrap_or_default();
    let mut deleted = false;
    for m in muts {
        match m {
            Mutation::Set(f, v) => {
                item.insert(f.clone(), v.clone());
            }
            Mutation::Remove(f) => {
                item.remove(f);
            }
            Mutation::Add(f, d) => {
                let cur = int_field(key, &item, f)?;
                item.insert(f.clone(), Value::Int(cur + d));
            }
            Mutation::Max(f, v) => {
                let cur = int_field(key, &item, f)?;
                item.insert(f.clone(), Value::Int(cur.max(*v)));
            }
            Mutation::Append(f, vs) => {
                let list = list_field(key, &mut item, f)?;
                list.extend(vs.iter().cloned());
            }
            Mutation::PopFront(f) => {
                let list = list_field(key, &mut item, f)?;
                if list.is_empty() {
                    return Err(Error::EmptyListPop {
                        key: key.to_string(),
                        field: f.clone(),
                    });
                }
                list.remove(0);
            }
            Mutation::RemoveValue(f, v) => {
                let list = list_field(key, &mut item, f)?;
                if let Some(pos) = list.iter().position(|x| x == v) {
                    list.remove(pos);
                }
            }
            Mutation::DeleteItem => deleted = true,
        }
    }
    Ok(if deleted { None } else { Some(item) })
}

fn int_field(key: &str, item: &Item, f: &str) -> Result<u64> {
    match item.get(f) {
        None => Ok(0),
        Some(Value::Int(v)) => Ok(*v),
        Some(_) => Err(Error::TypeMismatch {
            key: key.to_string(),
            field: f.to_string(),
        }),
    }
}

fn list_field<'a>(key: &str, item: &'a mut Item, f: &str) -> Result<&'a mut Vec<Value>> {
    let entry = item
        .entry(f.to_string())
        .or_insert_with(|| Value::List(Vec::new()));
    match entry {
        Value::List(l) => Ok(l),
        _ => Err(Error::TypeMismatch {
            key: key.to_string(),
            field: f.to_string(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UpdateOutcome {
    /// Holds the post-update item (`None` when the item was deleted).
    Applied(Option<Item>),
    Rejected(Option<Item>),
}

impl UpdateOutcome {
    pub fn applied(&self) -> bool {
        matches!(self, UpdateOutcome::Applied(_))
    }
}

/// One leg of a multi-item transaction.
#[derive(Debug, Clone)]
pub struct TxOp {
    pub table: String,
    pub key: String,
    pub condition: Condition,
    pub mutations: Vec<Mutation>,
}

impl TxOp {
    pub fn new(table: &str, key: &str, condition: Condition, mutations: Vec<Mutation>) -> Self {
        TxOp {
            table: table.to_string(),
            key: key.to_string(),
            condition,
            mutations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxOutcome {
    Committed,
    /// Index of the first leg whose condition failed, with that item's value.
    Rejected { leg: usize, current: Option<Item> },
}

/// Named tables of items.
#[derive(Debug, Clone, Default)]
pub struct KvStore {
    tables: BTreeMap<String, BTreeMap<String, Item>>,
}

impl KvStore {
    pub fn with_tables(names: &[&str]) -> Self {
        KvStore {
            tables: names
                .iter()
                .map(|n| (n.to_string(), BTreeMap::new()))
                .collect(),
        }
    }

    fn table(&self, table: &str) -> Result<&BTreeMap<String, Item>> {
        self.tables
            .get(table)
            .ok_or_else(|| Error::UnknownTable(table.to_string()))
    }

    fn table_mut(&mut self, table: &str) -> Result<&mut BTreeMap<String, Item>> {
        self.tables
            .get_mut(table)
            .ok_or_else(|| Error::UnknownTable(table.to_string()))
    }

    pub fn read(&self, table: &str, key: &str) -> Result<Option<Item>> {
        Ok(self.table(table)?.get(key).cloned())
    }

    pub fn scan(&self, table: &str) -> Result<impl Iterator<Item = (&String, &Item)>> {
        Ok(self.table(table)?.iter())
    }

    pub fn conditional_update(
        &mut self,
        table: &str,
        key: &str,
        condition: &Condition,
        mutations: &[Mutation],
    ) -> Result<UpdateOutcome> {
        let t = self.table_mut(table)?;
        let current = t.get(key);
        if !condition.evaluate(current) {
            return Ok(UpdateOutcome::Rejected(current.cloned()));
        }
        let next = apply_mutations(key, current, mutations)?;
        match &next {
            Some(item) => {
                t.insert(key.to_string(), item.clone());
            }
            None => {
                t.remove(key);
            }
        }
        Ok(UpdateOutcome::Applied(next))
    }

    /// Legs apply in order, each seeing the state left by earlier legs, and
    /// either every leg applies or none does.
    pub fn transact(&mut self, ops: &[TxOp]) -> Result<TxOutcome> {
        let mut staged: BTreeMap<(String, String), Option<Item>> = BTreeMap::new();
        for (leg, op) in ops.iter().enumerate() {
            let k = (op.table.clone(), op.key.clone());
            let current = match staged.get(&k) {
                Some(v) => v.clone(),
                None => self.table(&op.table)?.get(&op.key).cloned(),
            };
            if !op.condition.evaluate(current.as_ref()) {
                return Ok(TxOutcome::Rejected { leg, current });
            }
            let next = apply_mutations(&op.key, current.as_ref(), &op.mutations)?;
            staged.insert(k, next);
        }
        for ((table, key), next) in staged {
            let t = self.table_mut(&table)?;
            match next {
                Some(item) => {
                    t.insert(key, item);
                }
                None => {
                    t.remove(&key);
                }
            }
        }
        Ok(TxOutcome::Committed)
    }
}
