//! Named property sets, optionally persisted one file per set.
//!
//! A set file holds the canonical encoding of the entries map and is
//! replaced atomically (temp file, fsync, rename) on every change.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use crate::codec;
use crate::value::{Value, ValueMap};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PropertyError {
    #[error("invalid name `{0}`")]
    InvalidName(String),
    #[error("no such property set `{0}`")]
    NoSuchSet(String),
    #[error("no such property `{1}` in set `{0}`")]
    NoSuchProperty(String, String),
    #[error("property store i/o: {0}")]
    Io(String),
}

impl PropertyError {
    pub fn code(&self) -> &'static str {
        match self {
            PropertyError::InvalidName(_) => "InvalidName",
            PropertyError::NoSuchSet(_) => "NoSuchSet",
            PropertyError::NoSuchProperty(..) => "NoSuchProperty",
            PropertyError::Io(_) => "IoError",
        }
    }
}

impl From<io::Error> for PropertyError {
    fn from(e: io::Error) -> Self {
        PropertyError::Io(e.to_string())
    }
}

/// Set ids become file names, so separators, NUL and a leading dot are
/// refused.
fn check_set_id(id: &str) -> Result<(), PropertyError> {
    if id.is_empty() || id.starts_with('.') || id.contains(['/', '\\', '\0']) {
        return Err(PropertyError::InvalidName(id.to_owned()));
    }
    Ok(())
}

type Entries = Arc<Mutex<ValueMap>>;

#[derive(Debug, Default)]
pub struct PropertyService {
    dir: Option<PathBuf>,
    sets: RwLock<HashMap<String, Entries>>,
}

impl PropertyService {
    pub fn in_memory() -> Self {
        PropertyService::default()
    }

    /// Opens `<data_dir>/props`, creating it if needed, and loads every set.
    pub fn open(data_dir: &Path) -> Result<Self, PropertyError> {
        let dir = data_dir.join("props");
        fs::create_dir_all(&dir)?;
        let mut sets = HashMap::new();
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if check_set_id(&name).is_err() {
                continue;
            }
            let bytes = fs::read(entry.path())?;
            let entries = codec::decode_value(&bytes)
                .ok()
                .and_then(Value::into_map)
                .ok_or_else(|| PropertyError::Io(format!("corrupt property set file `{name}`")))?;
            sets.insert(name, Arc::new(Mutex::new(entries)));
        }
        Ok(PropertyService {
            dir: Some(dir),
            sets: RwLock::new(sets),
        })
    }

    fn set(&self, id: &str) -> Result<Entries, PropertyError> {
        self.sets
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| PropertyError::NoSuchSet(id.to_owned()))
    }

    fn persist(&self, id: &str, entries: &ValueMap) -> Result<(), PropertyError> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let tmp = dir.join(format!(".{id}.tmp"));
        let mut file = fs::File::create(&tmp)?;
        file.write_all(codec::encode_value(&Value::Map(entries.clone())).as_bytes())?;
        file.sync_all()?;
        fs::rename(&tmp, dir.join(id))?;
        Ok(())
    }

    /// Creates or replaces one entry; the set springs into existence on its
    /// first definition.
    pub fn define_property(&self, set_id: &str, name: &str, value: Value) -> Result<(), PropertyError> {
        check_set_id(set_id)?;
        if name.is_empty() {
            return Err(PropertyError::InvalidName(name.to_owned()));
        }
        let entries = self
            .sets
            .write()
            .entry(set_id.to_owned())
            .or_default()
            .clone();
        let mut guard = entries.lock();
        let mut next = guard.clone();
        next.insert(name.to_owned(), value);
        self.persist(set_id, &next)?;
        *guard = next;
        Ok(())
    }

    pub fn get_property(&self, set_id: &str, name: &str) -> Result<Value, PropertyError> {
        self.set(set_id)?
            .lock()
            .get(name)
            .cloned()
            .ok_or_else(|| PropertyError::NoSuchProperty(set_id.to_owned(), name.to_owned()))
    }

    /// Consistent snapshot of the whole set.
    pub fn get_all(&self, set_id: &str) -> Result<ValueMap, PropertyError> {
        Ok(self.set(set_id)?.lock().clone())
    }

    pub fn delete_property(&self, set_id: &str, name: &str) -> Result<(), PropertyError> {
        let entries = self.set(set_id)?;
        let mut guard = entries.lock();
        if !guard.contains_key(name) {
            return Err(PropertyError::NoSuchProperty(set_id.to_owned(), name.to_owned()));
        }
        let mut next = guard.clone();
        next.remove(name);
        self.persist(set_id, &next)?;
        *guard = next;
        Ok(())
    }

    pub fn set_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.sets.read().keys().cloned().collect();
        ids.sort();
        ids
    }
}
