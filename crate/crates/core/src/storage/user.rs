//! Per-region object store holding the client-readable replica of each node.
//! Objects are replaced wholesale on every write.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NodeImage, WatchId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataNodeObject {
    pub path: String,
    #[serde(flatten)]
    pub image: NodeImage,
    /// Watch ids in flight in this region when the object was written.
    pub epoch_snapshot: Vec<WatchId>,
    /// Deletion marker; keeps the deleting txid visible to readers.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub deleted: bool,
}

impl DataNodeObject {
    pub fn live(&self) -> bool {
        !self.deleted
    }
}

#[derive(Debug, Clone, Default)]
pub struct UserStore {
    regions: BTreeMap<String, BTreeMap<String, DataNodeObject>>,
}

impl UserStore {
    pub fn new<S: AsRef<str>>(regions: &[S]) -> Self {
        UserStore {
            regions: regions
                .iter()
                .map(|r| (r.as_ref().to_string(), BTreeMap::new()))
                .collect(),
        }
    }

    fn region(&self, region: &str) -> Result<&BTreeMap<String, DataNodeObject>> {
        self.regions
            .get(region)
            .ok_or_else(|| Error::UnknownRegion(region.to_string()))
    }

    fn region_mut(&mut self, region: &str) -> Result<&mut BTreeMap<String, DataNodeObject>> {
        self.regions
            .get_mut(region)
            .ok_or_else(|| Error::UnknownRegion(region.to_string()))
    }

    pub fn put(&mut self, region: &str, object: DataNodeObject) -> Result<()> {
        self.region_mut(region)?.insert(object.path.clone(), object);
        Ok(())
    }

    pub fn get(&self, region: &str, path: &str) -> Result<Option<DataNodeObject>> {
        Ok(self.region(region)?.get(path).cloned())
    }

    pub fn delete(&mut self, region: &str, path: &str) -> Result<()> {
        self.region_mut(region)?.remove(path);
        Ok(())
    }

    pub fn regions(&self) -> impl Iterator<Item = &String> {
        self.regions.keys()
    }

    pub fn objects(&self, region: &str) -> Result<impl Iterator<Item = &DataNodeObject>> {
        Ok(self.region(region)?.values())
    }
}
