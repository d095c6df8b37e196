//! Parameter checkpoints: JSON with a layout header.
//!
//! Floats are written in shortest round-trip form and parsed with correct
//! rounding, so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::param::{Layout, ParamVector};
use crate::error::{Error, Result};

pub const FORMAT: &str = "objsup-params/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub format: String,
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl ParamRecord {
    pub fn from_params(p: &ParamVector) -> Self {
        Self {
            format: FORMAT.to_string(),
            layout: (*p.layout).clone(),
            values: p.values.clone(),
        }
    }

    pub fn into_params(self) -> Result<ParamVector> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        ParamVector::from_values(Arc::new(self.layout), self.values)
    }
}

/// A set of named parameter vectors (policies and critics of one run).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub entries: BTreeMap<String, ParamRecord>,
}

impl Checkpoint {
    pub fn insert(&mut self, name: &str, params: &ParamVector) {
        self.entries.insert(name.to_string(), ParamRecord::from_params(params));
    }

    /// Copies the stored values into `target`, which must have the same layout.
    pub fn restore_into(&self, name: &str, target: &mut ParamVector) -> Result<()> {
        let record = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry {name:?}")))?;
        let params = record.clone().into_params()?;
        if *params.layout != *target.layout {
            return Err(Error::Checkpoint(format!(
                "entry {name:?} does not match the configured architecture"
            )));
        }
        target.values = params.values;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
