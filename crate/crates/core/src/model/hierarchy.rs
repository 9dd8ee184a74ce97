// SPDX-License-Identifier: Apache-2.0

//! Administrative hierarchy (ADM1 down to ADM4) with city resolution.
//!
//! Codes are opaque strings. The analysis level is ADM3 ("city"); every
//! observation is resolved to its enclosing ADM3 before detection.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Pseudo-city used for observations whose code is outside the loaded hierarchy.
pub const OUT_OF_COVERAGE: &str = "OUT_OF_COVERAGE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AdminLevel {
    #[serde(rename = "ADM1")]
    Adm1,
    #[serde(rename = "ADM2")]
    Adm2,
    #[serde(rename = "ADM3")]
    Adm3,
    #[serde(rename = "ADM4")]
    Adm4,
}

impl AdminLevel {
    /// The level one step coarser, if any.
    pub fn parent_level(self) -> Option<AdminLevel> {
        match self {
            AdminLevel::Adm1 => None,
            AdminLevel::Adm2 => Some(AdminLevel::Adm1),
            AdminLevel::Adm3 => Some(AdminLevel::Adm2),
            AdminLevel::Adm4 => Some(AdminLevel::Adm3),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AdminLevel::Adm1 => "ADM1",
            AdminLevel::Adm2 => "ADM2",
            AdminLevel::Adm3 => "ADM3",
            AdminLevel::Adm4 => "ADM4",
        }
    }
}

impl fmt::Display for AdminLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdminLevel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ADM1" => Ok(AdminLevel::Adm1),
            "ADM2" => Ok(AdminLevel::Adm2),
            "ADM3" => Ok(AdminLevel::Adm3),
            "ADM4" => Ok(AdminLevel::Adm4),
            other => Err(ModelError::BadLevel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdminUnit {
    pub code: String,
    pub name: String,
    pub level: AdminLevel,
    pub parent_code: Option<String>,
}

impl AdminUnit {
    pub fn new(code: impl Into<String>, name: impl Into<String>, level: AdminLevel, parent: Option<&str>) -> Self {
        AdminUnit {
            code: code.into(),
            name: name.into(),
            level,
            parent_code: parent.map(str::to_string),
        }
    }
}

#[derive(Debug, Deserialize)]
struct HierarchyRow {
    code: String,
    name: String,
    level: String,
    #[serde(default)]
    parent_code: Option<String>,
}

/// A validated, immutable administrative hierarchy.
#[derive(Debug, Clone, Default)]
pub struct Hierarchy {
    units: BTreeMap<String, AdminUnit>,
    warnings: Vec<String>,
}

impl Hierarchy {
    /// Builds a hierarchy, checking code uniqueness and parent levels.
    ///
    /// A non-ADM1 unit without a parent is accepted with a warning; resolving
    /// such an ADM4 later yields [`ModelError::HierarchyGap`].
    pub fn new(units: impl IntoIterator<Item = AdminUnit>) -> Result<Self, ModelError> {
        let mut map = BTreeMap::new();
        for unit in units {
            if unit.code.is_empty() {
                return Err(ModelError::EmptyCode);
            }
            if map.contains_key(&unit.code) {
                return Err(ModelError::DuplicateCode(unit.code));
            }
            map.insert(unit.code.clone(), unit);
        }

        let mut warnings = Vec::new();
        for unit in map.values() {
            match (&unit.parent_code, unit.level.parent_level()) {
                (Some(parent), Some(expected)) => {
                    let parent_unit = map.get(parent).ok_or_else(|| ModelError::UnknownParent {
                        code: unit.code.clone(),
                        parent: parent.clone(),
                    })?;
                    if parent_unit.level != expected {
                        return Err(ModelError::ParentLevel {
                            code: unit.code.clone(),
                            level: unit.level,
                            parent: parent.clone(),
                            parent_level: parent_unit.level,
                        });
                    }
                }
                (Some(parent), None) => {
                    return Err(ModelError::ParentLevel {
                        code: unit.code.clone(),
                        level: unit.level,
                        parent: parent.clone(),
                        parent_level: map.get(parent).map(|p| p.level).unwrap_or(AdminLevel::Adm1),
                    });
                }
                (None, Some(_)) => warnings.push(format!("{} unit {} has no parent", unit.level, unit.code)),
                (None, None) => {}
            }
        }
        Ok(Hierarchy { units: map, warnings })
    }

    /// Reads `code,name,level,parent_code` CSV with a header row.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, ModelError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut units = Vec::new();
        for (i, row) in rdr.deserialize::<HierarchyRow>().enumerate() {
            let row = row.map_err(|e| ModelError::Csv { line: i + 2, message: e.to_string() })?;
            let level = row.level.parse()?;
            let parent = row.parent_code.filter(|p| !p.is_empty());
            units.push(AdminUnit { code: row.code, name: row.name, level, parent_code: parent });
        }
        Hierarchy::new(units)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["code", "name", "level", "parent_code"])?;
        for unit in self.units.values() {
            w.write_record([
                unit.code.as_str(),
                unit.name.as_str(),
                unit.level.as_str(),
                unit.parent_code.as_deref().unwrap_or(""),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn get(&self, code: &str) -> Option<&AdminUnit> {
        self.units.get(code)
    }

    pub fn contains(&self, code: &str) -> bool {
        self.units.contains_key(code)
    }

    pub fn units(&self) -> impl Iterator<Item = &AdminUnit> {
        self.units.values()
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// All ADM3 codes, sorted.
    pub fn cities(&self) -> impl Iterator<Item = &str> {
        self.units.values().filter(|u| u.level == AdminLevel::Adm3).map(|u| u.code.as_str())
    }

    /// True when the hierarchy carries no ADM4 units, i.e. inputs can only be city-level.
    pub fn is_city_level_only(&self) -> bool {
        !self.units.values().any(|u| u.level == AdminLevel::Adm4)
    }

    /// Resolves an ADM3 or ADM4 code to its enclosing ADM3 code.
    pub fn city_of<'a>(&'a self, code: &str) -> Result<&'a str, ModelError> {
        let unit = self.units.get(code).ok_or_else(|| ModelError::UnknownCode(code.to_string()))?;
        match unit.level {
            AdminLevel::Adm3 => Ok(unit.code.as_str()),
            AdminLevel::Adm4 => {
                let parent = unit
                    .parent_code
                    .as_deref()
                    .and_then(|p| self.units.get(p))
                    .filter(|p| p.level == AdminLevel::Adm3)
                    .ok_or_else(|| ModelError::HierarchyGap(code.to_string()))?;
                Ok(parent.code.as_str())
            }
            level => Err(ModelError::AboveCityLevel { code: code.to_string(), level }),
        }
    }
}
