//! Versioned entity store over an abstract key-value backend.
//!
//! Writes are compare-and-swap on the entity version: a put succeeds only
//! when the caller's expected version matches the stored one, and each
//! successful put increments the version by exactly one.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    Io(String),
    #[error("corrupt record at {key}: {reason}")]
    Corrupt { key: String, reason: String },
    #[error("version conflict on {kind}/{id}: expected {expected}, found {actual}")]
    VersionConflict { kind: String, id: String, expected: u64, actual: u64 },
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

pub trait KvBackend: Send + Sync {
    fn get(&self, key: &str) -> Result<Option<Vec<u8>>, StoreError>;
    fn put(&self, key: &str, value: &[u8]) -> Result<(), StoreError>;
    fn delete(&self, key: &str) -> Result<(), StoreError>;
    /// Entries whose key starts with `prefix`, in key order.
    fn scan_prefix(&self, prefix: &str) -> Result<Vec<(String, Vec<u8>)>, StoreError>;
    /// An independent deep copy, when the backend supports it.
    fn fork(&self) -> Option<Arc<dyn KvBackend>> {
        None
    }
}

#[derive(Debug, Default, Clone)]
pub struct MemoryKv {
    map: Arc<Mutex<BTreeMap<String, Vec<u8>>>>,
}

impl MemoryKv {
    pub fn new() -> Self {
        Self::default()
    }
}

impl KvBackend for MemoryKv {
    fn get(&self, key: &str) -> Result<Option<Vec<u8>>, StoreError> {
        Ok(self.map.lock().unwrap().get(key).cloned())
    }

    fn put(&self, key: &str, value: &[u8]) -> Result<(), StoreError> {
        self.map.lock().unwrap().insert(key.to_owned(), value.to_vec());
        Ok(())
    }

    fn delete(&self, key: &str) -> Result<(), StoreError> {
        self.map.lock().unwrap().remove(key);
        Ok(())
    }

    fn scan_prefix(&self, prefix: &str) -> Result<Vec<(String, Vec<u8>)>, StoreError> {
        let map = self.map.lock().unwrap();
        Ok(map
            .range(prefix.to_owned()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect())
    }

    fn fork(&self) -> Option<Arc<dyn KvBackend>> {
        let copy = self.map.lock().unwrap().clone();
        Some(Arc::new(MemoryKv { map: Arc::new(Mutex::new(copy)) }))
    }
}

/// One file per key in a flat directory; file names are the hex-encoded key.
#[derive(Debug)]
pub struct FileKv {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl FileKv {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(FileKv { root, write_lock: Mutex::new(()) })
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.root.join(hex::encode(key.as_bytes()))
    }
}

impl KvBackend for FileKv {
    fn get(&self, key: &str) -> Result<Option<Vec<u8>>, StoreError> {
        match fs::read(self.path_for(key)) {
            Ok(v) => Ok(Some(v)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn put(&self, key: &str, value: &[u8]) -> Result<(), StoreError> {
        let _g = self.write_lock.lock().unwrap();
        let target = self.path_for(key);
        let tmp = target.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(value)?;
            f.sync_all()?;
        }
        fs::rename(tmp, target)?;
        Ok(())
    }

    fn delete(&self, key: &str) -> Result<(), StoreError> {
        match fs::remove_file(self.path_for(key)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    fn scan_prefix(&self, prefix: &str) -> Result<Vec<(String, Vec<u8>)>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            let Ok(raw) = hex::decode(name) else { continue };
            let Ok(key) = String::from_utf8(raw) else { continue };
            if key.starts_with(prefix) {
                out.push((key, fs::read(entry.path())?));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }
}

/// Kind, id and version of a stored entity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityRef {
    #[serde(rename = "type")]
    pub kind: String,
    pub id: String,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionedRecord {
    pub entity_ref: EntityRef,
    pub version: u64,
    pub body: serde_json::Value,
}

/// Types persisted in the entity store.
pub trait Stored: Serialize + DeserializeOwned {
    const KIND: &'static str;
    fn store_id(&self) -> String;
}

pub const ENTITY_PREFIX: &str = "entity/";
const SEQUENCE_KEY: &str = "meta/sequence";

#[derive(Clone)]
pub struct Store {
    kv: Arc<dyn KvBackend>,
    lock: Arc<RwLock<()>>,
}

impl Store {
    pub fn new(kv: Arc<dyn KvBackend>) -> Self {
        Store { kv, lock: Arc::new(RwLock::new(())) }
    }

    pub fn in_memory() -> Self {
        Self::new(Arc::new(MemoryKv::new()))
    }

    pub fn backend(&self) -> &Arc<dyn KvBackend> {
        &self.kv
    }

    pub fn fork(&self) -> Option<Store> {
        self.kv.fork().map(Store::new)
    }

    fn key(kind: &str, id: &str) -> String {
        format!("{ENTITY_PREFIX}{kind}/{id}")
    }

    fn decode(key: &str, bytes: &[u8]) -> Result<VersionedRecord, StoreError> {
        serde_json::from_slice(bytes).map_err(|e| StoreError::Corrupt { key: key.into(), reason: e.to_string() })
    }

    pub fn get_entity(&self, kind: &str, id: &str) -> Result<Option<VersionedRecord>, StoreError> {
        let _r = self.lock.read().unwrap();
        let key = Self::key(kind, id);
        self.kv.get(&key)?.map(|b| Self::decode(&key, &b)).transpose()
    }

    /// Compare-and-swap write. `expected_version` is 0 for a new entity.
    pub fn put_entity(
        &self,
        kind: &str,
        id: &str,
        body: serde_json::Value,
        expected_version: u64,
    ) -> Result<VersionedRecord, StoreError> {
        let _w = self.lock.write().unwrap();
        let key = Self::key(kind, id);
        let current = match self.kv.get(&key)? {
            Some(b) => Self::decode(&key, &b)?.version,
            None => 0,
        };
        if current != expected_version {
            return Err(StoreError::VersionConflict {
                kind: kind.into(),
                id: id.into(),
                expected: expected_version,
                actual: current,
            });
        }
        let version = current + 1;
        let record = VersionedRecord {
            entity_ref: EntityRef { kind: kind.into(), id: id.into(), version },
            version,
            body,
        };
        self.kv.put(&key, &crate::canonical::to_vec(&record))?;
        Ok(record)
    }

    pub fn get<T: Stored>(&self, id: &str) -> Result<Option<(T, u64)>, StoreError> {
        let Some(rec) = self.get_entity(T::KIND, id)? else { return Ok(None) };
        let key = Self::key(T::KIND, id);
        let value = serde_json::from_value(rec.body).map_err(|e| StoreError::Corrupt { key, reason: e.to_string() })?;
        Ok(Some((value, rec.version)))
    }

    pub fn put<T: Stored>(&self, entity: &T, expected_version: u64) -> Result<VersionedRecord, StoreError> {
        self.put_entity(T::KIND, &entity.store_id(), crate::canonical::to_value(entity), expected_version)
    }

    pub fn list<T: Stored>(&self) -> Result<Vec<(T, u64)>, StoreError> {
        let _r = self.lock.read().unwrap();
        let prefix = format!("{ENTITY_PREFIX}{}/", T::KIND);
        self.kv
            .scan_prefix(&prefix)?
            .into_iter()
            .map(|(k, b)| {
                let rec = Self::decode(&k, &b)?;
                let v = serde_json::from_value(rec.body).map_err(|e| StoreError::Corrupt { key: k, reason: e.to_string() })?;
                Ok((v, rec.version))
            })
            .collect()
    }

    /// Next value of the store-wide identifier sequence.
    pub fn next_sequence(&self) -> Result<u64, StoreError> {
        let _w = self.lock.write().unwrap();
        let current = match self.kv.get(SEQUENCE_KEY)? {
            Some(b) => std::str::from_utf8(&b)
                .ok()
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| StoreError::Corrupt { key: SEQUENCE_KEY.into(), reason: "not an integer".into() })?,
            None => 0,
        };
        let next = current + 1;
        self.kv.put(SEQUENCE_KEY, next.to_string().as_bytes())?;
        Ok(next)
    }
}
