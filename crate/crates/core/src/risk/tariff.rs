use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../../data/tariffs.csv");

/// Ad-valorem rate band in basis points, so differences are exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateBand {
    pub lo_bp: u32,
    pub hi_bp: u32,
    pub note: String,
}

impl RateBand {
    pub fn lo(&self) -> f64 {
        f64::from(self.lo_bp) / 1e4
    }

    pub fn hi(&self) -> f64 {
        f64::from(self.hi_bp) / 1e4
    }
}

fn to_bp(s: &str) -> Result<u32> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("bad rate `{s}`")))?;
    let bp = (v * 1e4).round();
    if !(0.0..=1e4).contains(&bp) || (v * 1e4 - bp).abs() > 1e-6 {
        return Err(Error::Data(format!(
            "rate `{s}` must be a fraction in [0, 1] with at most 4 decimals"
        )));
    }
    Ok(bp as u32)
}

#[derive(Debug, Deserialize)]
struct Row {
    prefix: String,
    rate_lo: String,
    rate_hi: String,
    #[serde(default)]
    note: String,
}

/// HS prefix to import-burden band; longest matching prefix wins.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TariffTable {
    pub rates: BTreeMap<String, RateBand>,
}

impl TariffTable {
    pub fn bundled() -> Self {
        Self::from_csv(BUNDLED.as_bytes()).expect("bundled tariff table parses")
    }

    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut rates = BTreeMap::new();
        for row in rdr.deserialize() {
            let row: Row = row?;
            let (lo_bp, hi_bp) = (to_bp(&row.rate_lo)?, to_bp(&row.rate_hi)?);
            if lo_bp > hi_bp {
                return Err(Error::Data(format!(
                    "rate band for {} has lo > hi",
                    row.prefix
                )));
            }
            rates.insert(
                row.prefix,
                RateBand {
                    lo_bp,
                    hi_bp,
                    note: row.note,
                },
            );
        }
        Ok(TariffTable { rates })
    }

    pub fn rate(&self, code: &str) -> Option<&RateBand> {
        self.rates
            .iter()
            .filter(|(k, _)| code.starts_with(k.as_str()))
            .max_by_key(|(k, _)| k.len())
            .map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DutyGap {
    pub lo: f64,
    pub hi: f64,
}

/// Extra duty owed had the goods been declared under `true_code`.
/// Negative when the declared code carries the higher rate.
pub fn duty_gap(
    declared_code: &str,
    true_code: &str,
    customs_value_usd: f64,
    table: &TariffTable,
) -> Result<DutyGap> {
    let missing: Vec<&str> = [declared_code, true_code]
        .into_iter()
        .filter(|c| table.rate(c).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(Error::UnmappedTariff(missing.join(", ")));
    }
    let d = table.rate(declared_code).expect("checked");
    let t = table.rate(true_code).expect("checked");
    let lo = i64::from(t.lo_bp) - i64::from(d.hi_bp);
    let hi = i64::from(t.hi_bp) - i64::from(d.lo_bp);
    Ok(DutyGap {
        lo: lo as f64 * customs_value_usd / 1e4,
        hi: hi as f64 * customs_value_usd / 1e4,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DilutionScenario {
    pub n_containers: u32,
    pub n_poisoned: u32,
    pub kg_per_container: f64,
    /// USD/kg of the declared goods.
    pub declared_price: f64,
    /// USD/kg of the substituted scrap.
    pub scrap_price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DilutionOutcome {
    pub total_kg: f64,
    pub genuine_kg: f64,
    pub poisoned_kg: f64,
    pub declared_value: f64,
    pub actual_value: f64,
    pub blended_price: f64,
    pub overstatement_usd: f64,
    /// Overstatement as a share of the declared value.
    pub overstatement_fraction: f64,
}

pub fn dilution_model(s: &DilutionScenario) -> Result<DilutionOutcome> {
    if s.n_poisoned > s.n_containers {
        return Err(Error::Config(
            "more poisoned containers than containers".into(),
        ));
    }
    if s.declared_price < 0.0 || s.scrap_price < 0.0 || s.kg_per_container < 0.0 {
        return Err(Error::Config(
            "prices and weights must be non-negative".into(),
        ));
    }
    let total_kg = f64::from(s.n_containers) * s.kg_per_container;
    if total_kg <= 0.0 {
        return Err(Error::insufficient(
            None,
            "blended price undefined for zero total weight",
        ));
    }
    let poisoned_kg = f64::from(s.n_poisoned) * s.kg_per_container;
    let genuine_kg = f64::from(s.n_containers - s.n_poisoned) * s.kg_per_container;
    let declared_value = total_kg * s.declared_price;
    let actual_value = genuine_kg * s.declared_price + poisoned_kg * s.scrap_price;
    let overstatement_usd = declared_value - actual_value;
    Ok(DilutionOutcome {
        total_kg,
        genuine_kg,
        poisoned_kg,
        declared_value,
        actual_value,
        blended_price: actual_value / total_kg,
        overstatement_usd,
        overstatement_fraction: if declared_value > 0.0 {
            overstatement_usd / declared_value
        } else {
            0.0
        },
    })
}
