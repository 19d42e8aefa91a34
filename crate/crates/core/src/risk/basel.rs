use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../../data/basel_pic.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Y48 {
    Likely,
    Possible,
    No,
}

impl Y48 {
    pub fn parse(s: &str) -> Option<Y48> {
        match s.trim().to_ascii_lowercase().as_str() {
            "likely" => Some(Y48::Likely),
            "possible" => Some(Y48::Possible),
            "no" | "" => Some(Y48::No),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Y48::Likely => "likely",
            Y48::Possible => "possible",
            Y48::No => "no",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselInfo {
    pub y48: Y48,
    pub a3210: bool,
    pub note: String,
}

impl BaselInfo {
    pub fn unmapped() -> Self {
        BaselInfo {
            y48: Y48::No,
            a3210: false,
            note: "unmapped".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    hs_code: String,
    y48: String,
    a3210: String,
    note: String,
}

/// HS prefix to Basel PIC overlap; lookups use the longest matching prefix.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BaselTable {
    pub entries: BTreeMap<String, BaselInfo>,
}

impl BaselTable {
    pub fn bundled() -> Self {
        Self::from_csv(BUNDLED.as_bytes()).expect("bundled Basel table parses")
    }

    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut entries = BTreeMap::new();
        for row in rdr.deserialize() {
            let row: Row = row?;
            let y48 = Y48::parse(&row.y48)
                .ok_or_else(|| Error::Data(format!("bad y48 value `{}`", row.y48)))?;
            let a3210 = match row.a3210.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => true,
                "false" | "no" | "0" | "" => false,
                other => return Err(Error::Data(format!("bad a3210 value `{other}`"))),
            };
            entries.insert(
                row.hs_code,
                BaselInfo {
                    y48,
                    a3210,
                    note: row.note,
                },
            );
        }
        Ok(BaselTable { entries })
    }

    /// Rows of `other` replace rows with the same key.
    pub fn extend(&mut self, other: BaselTable) {
        self.entries.extend(other.entries);
    }

    pub fn lookup(&self, hs_code: &str) -> BaselInfo {
        self.entries
            .iter()
            .filter(|(k, _)| hs_code.starts_with(k.as_str()))
            .max_by_key(|(k, _)| k.len())
            .map_or_else(BaselInfo::unmapped, |(_, v)| v.clone())
    }
}

/// Lookup against the bundled table.
pub fn basel_overlap(hs_code: &str) -> BaselInfo {
    BaselTable::bundled().lookup(hs_code)
}
