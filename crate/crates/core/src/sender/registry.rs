use crate::wire::SpeakerId;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimbreStatus {
    None,
    InFlight,
    Registered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegistryEntry {
    pub id: SpeakerId,
    pub status: TimbreStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("speaker id space exhausted")]
    Full,
}

/// Maps caller-chosen speaker keys to dense wire ids.
#[derive(Debug, Clone, Default)]
pub struct SpeakerRegistry {
    entries: HashMap<String, RegistryEntry>,
    keys: Vec<String>,
}

impl SpeakerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<RegistryEntry> {
        self.entries.get(key).copied()
    }

    /// Returns the entry for `key`, assigning the next id if it is new.
    pub fn entry(&mut self, key: &str) -> Result<RegistryEntry, RegistryError> {
        if let Some(e) = self.entries.get(key) {
            return Ok(*e);
        }
        let id = u16::try_from(self.keys.len()).map_err(|_| RegistryError::Full)?;
        let e = RegistryEntry { id: SpeakerId(id), status: TimbreStatus::None };
        self.entries.insert(key.to_string(), e);
        self.keys.push(key.to_string());
        Ok(e)
    }

    pub fn set_status(&mut self, key: &str, status: TimbreStatus) {
        if status == TimbreStatus::InFlight {
            debug_assert!(self.in_flight().is_none_or(|k| k == key), "two transfers in flight");
        }
        if let Some(e) = self.entries.get_mut(key) {
            e.status = status;
        }
    }

    pub fn in_flight(&self) -> Option<&str> {
        self.keys.iter().find(|k| self.entries[k.as_str()].status == TimbreStatus::InFlight).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Keys in id order.
    pub fn keys(&self) -> &[String] {
        &self.keys
    }
}
