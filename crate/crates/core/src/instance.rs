//! JSON instance files: a tree, its measure family and optional named
//! processes and random variables.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conditional::RandomVariable;
use crate::filtration::FiltrationTree;
use crate::measures::MeasureFamily;
use crate::process::AdaptedProcess;
use crate::{Error, Result, Tolerances};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub schema_version: u32,
    pub tree: FiltrationTree,
    /// One row of leaf probabilities per measure.
    pub measures: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub processes: BTreeMap<String, AdaptedProcess>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub random_variables: BTreeMap<String, RandomVariable>,
    /// Free-form provenance of generated instances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

impl InstanceFile {
    pub fn from_family(family: &MeasureFamily) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tree: family.tree().clone(),
            measures: family.rows().to_vec(),
            processes: BTreeMap::new(),
            random_variables: BTreeMap::new(),
            metadata: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: Self = serde_json::from_str(text)?;
        if inst.schema_version != SCHEMA_VERSION {
            return Err(Error::Shape(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                inst.schema_version
            )));
        }
        Ok(inst)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// Validated measure family (also validates every stored process and
    /// random variable against the tree).
    pub fn family(&self, tol: &Tolerances) -> Result<MeasureFamily> {
        let family = MeasureFamily::with_tolerances(self.tree.clone(), self.measures.clone(), tol)?;
        for (name, p) in &self.processes {
            p.check_shape(&self.tree)
                .map_err(|e| Error::Shape(format!("process {name:?}: {e}")))?;
        }
        for (name, v) in &self.random_variables {
            if v.len() != self.tree.leaf_count() {
                return Err(Error::Shape(format!(
                    "random variable {name:?} has {} values, tree has {} leaves",
                    v.len(),
                    self.tree.leaf_count()
                )));
            }
        }
        Ok(family)
    }

    pub fn process(&self, name: &str) -> Result<&AdaptedProcess> {
        self.processes
            .get(name)
            .ok_or_else(|| Error::Index(format!("no process named {name:?}")))
    }
}
