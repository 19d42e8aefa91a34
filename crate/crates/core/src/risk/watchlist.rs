use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::basel::{BaselInfo, BaselTable};
use super::forecast::{Forecast, ForecastPoint};
use super::signature::SignatureCall;
use super::tariff::{duty_gap, DutyGap, TariffTable};
use crate::error::{Error, Result};
use crate::ingest::HsCode;
use crate::segment::Archetype;

pub const WATCHLIST_SCHEMA_VERSION: u32 = 1;

/// Everything needed to price the duty gap of each code.
#[derive(Debug, Clone, PartialEq)]
pub struct DutyContext {
    pub tariffs: TariffTable,
    /// Code the goods are assumed to really belong to, e.g. scrap 3915.
    pub true_code: String,
    /// Customs value per code, normally the last observed year's USD.
    pub customs_value_usd: BTreeMap<HsCode, f64>,
}

pub struct WatchlistInputs<'a> {
    pub segments: &'a BTreeMap<HsCode, Archetype>,
    pub signatures: &'a [SignatureCall],
    pub anomalies: &'a BTreeMap<HsCode, Vec<i32>>,
    pub forecasts: &'a BTreeMap<HsCode, Forecast>,
    pub basel: &'a BaselTable,
    pub duty: &'a DutyContext,
}

/// The comparison keys, in priority order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankKey {
    pub signature: bool,
    pub strong_signature: bool,
    pub anomaly_count: usize,
    pub high_risk_archetype: bool,
    pub duty_gap_hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatchlistEntry {
    pub risk_rank: usize,
    pub hs_code: HsCode,
    pub archetype: Archetype,
    pub signature: bool,
    pub strong_signature: bool,
    pub price_change: Option<f64>,
    pub kg_change: Option<f64>,
    pub anomaly_years: Vec<i32>,
    pub forecast: Vec<ForecastPoint>,
    pub forecast_clamped: bool,
    pub basel: BaselInfo,
    pub customs_value_usd: f64,
    /// `None` when either code has no tariff entry.
    pub duty_gap: Option<DutyGap>,
    pub rank_key: RankKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Watchlist {
    pub schema_version: u32,
    pub true_code: String,
    pub entries: Vec<WatchlistEntry>,
}

impl Watchlist {
    pub fn entry(&self, code: &HsCode) -> Option<&WatchlistEntry> {
        self.entries.iter().find(|e| &e.hs_code == code)
    }

    pub fn at_risk(&self) -> impl Iterator<Item = &WatchlistEntry> {
        self.entries.iter().filter(|e| e.signature)
    }
}

fn compare(a: &WatchlistEntry, b: &WatchlistEntry) -> Ordering {
    let (ka, kb) = (&a.rank_key, &b.rank_key);
    let gap = |k: &RankKey| k.duty_gap_hi.unwrap_or(f64::NEG_INFINITY);
    kb.signature
        .cmp(&ka.signature)
        .then(kb.strong_signature.cmp(&ka.strong_signature))
        .then(kb.anomaly_count.cmp(&ka.anomaly_count))
        .then(kb.high_risk_archetype.cmp(&ka.high_risk_archetype))
        .then(gap(kb).total_cmp(&gap(ka)))
        .then(a.hs_code.cmp(&b.hs_code))
}

fn orphans<'a>(
    universe: &BTreeSet<&'a HsCode>,
    keys: impl Iterator<Item = &'a HsCode>,
    out: &mut BTreeSet<String>,
) {
    let keys: BTreeSet<&HsCode> = keys.collect();
    for k in keys.symmetric_difference(universe) {
        out.insert(k.to_string());
    }
}

/// Rank codes by the lexicographic key: signature, strong signature,
/// anomaly count, high-risk archetype, duty gap (upper end), then code.
pub fn build_watchlist(inp: &WatchlistInputs<'_>) -> Result<Watchlist> {
    let universe: BTreeSet<&HsCode> = inp.segments.keys().collect();
    let mut bad = BTreeSet::new();
    orphans(
        &universe,
        inp.signatures.iter().map(|s| &s.hs_code),
        &mut bad,
    );
    orphans(&universe, inp.anomalies.keys(), &mut bad);
    orphans(&universe, inp.forecasts.keys(), &mut bad);
    orphans(&universe, inp.duty.customs_value_usd.keys(), &mut bad);
    if inp.signatures.len() != universe.len() && bad.is_empty() {
        return Err(Error::Data("duplicate signature rows".into()));
    }
    if !bad.is_empty() {
        return Err(Error::OrphanCodes(bad.into_iter().collect()));
    }
    let mut entries: Vec<WatchlistEntry> = inp
        .signatures
        .iter()
        .map(|sig| {
            let code = &sig.hs_code;
            let archetype = inp.segments[code];
            let anomaly_years = inp.anomalies[code].clone();
            let fc = &inp.forecasts[code];
            let value = inp.duty.customs_value_usd[code];
            let gap = duty_gap(code.as_str(), &inp.duty.true_code, value, &inp.duty.tariffs).ok();
            WatchlistEntry {
                risk_rank: 0,
                hs_code: code.clone(),
                archetype,
                signature: sig.signature,
                strong_signature: sig.strong_signature,
                price_change: sig.price_change,
                kg_change: sig.kg_change,
                rank_key: RankKey {
                    signature: sig.signature,
                    strong_signature: sig.strong_signature,
                    anomaly_count: anomaly_years.len(),
                    high_risk_archetype: archetype.is_high_risk(),
                    duty_gap_hi: gap.map(|g| g.hi),
                },
                anomaly_years,
                forecast: fc.points.clone(),
                forecast_clamped: fc.clamped,
                basel: inp.basel.lookup(code.as_str()),
                customs_value_usd: value,
                duty_gap: gap,
            }
        })
        .collect();
    entries.sort_by(compare);
    for (i, e) in entries.iter_mut().enumerate() {
        e.risk_rank = i + 1;
    }
    Ok(Watchlist {
        schema_version: WATCHLIST_SCHEMA_VERSION,
        true_code: inp.duty.true_code.clone(),
        entries,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::features::LineFit;

    pub(crate) fn code(s: &str) -> HsCode {
        HsCode::new(s).unwrap()
    }

    pub(crate) struct Fixture {
        pub segments: BTreeMap<HsCode, Archetype>,
        pub signatures: Vec<SignatureCall>,
        pub anomalies: BTreeMap<HsCode, Vec<i32>>,
        pub forecasts: BTreeMap<HsCode, Forecast>,
        pub basel: BaselTable,
        pub duty: DutyContext,
    }

    impl Fixture {
        pub fn inputs(&self) -> WatchlistInputs<'_> {
            WatchlistInputs {
                segments: &self.segments,
                signatures: &self.signatures,
                anomalies: &self.anomalies,
                forecasts: &self.forecasts,
                basel: &self.basel,
                duty: &self.duty,
            }
        }
    }

    /// `(code, signature, strong, anomaly years, archetype)`.
    pub(crate) fn fixture(rows: &[(&str, bool, bool, &[i32], Archetype)]) -> Fixture {
        let mut f = Fixture {
            segments: BTreeMap::new(),
            signatures: Vec::new(),
            anomalies: BTreeMap::new(),
            forecasts: BTreeMap::new(),
            basel: BaselTable::bundled(),
            duty: DutyContext {
                tariffs: TariffTable::bundled(),
                true_code: "3915".into(),
                customs_value_usd: BTreeMap::new(),
            },
        };
        for &(c, sig, strong, years, arch) in rows {
            let hs = code(c);
            f.segments.insert(hs.clone(), arch);
            f.signatures.push(SignatureCall {
                hs_code: hs.clone(),
                signature: sig,
                strong_signature: strong,
                price_change: None,
                kg_change: None,
            });
            f.anomalies.insert(hs.clone(), years.to_vec());
            f.forecasts.insert(
                hs.clone(),
                Forecast {
                    hs_code: hs.clone(),
                    base_year: 2019,
                    last_observed: 2023,
                    horizon: 2025,
                    kg_fit: LineFit {
                        slope: 10.0,
                        intercept: 100.0,
                    },
                    price_fit: LineFit {
                        slope: -0.1,
                        intercept: 2.0,
                    },
                    points: (2023..=2025)
                        .map(|y| ForecastPoint {
                            year: y,
                            kg: 100.0 + 10.0 * f64::from(y - 2019),
                            price: 2.0 - 0.1 * f64::from(y - 2019),
                            clamped: false,
                        })
                        .collect(),
                    clamped: false,
                },
            );
            f.duty.customs_value_usd.insert(hs, 1000.0);
        }
        f
    }

    fn ranked(w: &Watchlist) -> Vec<&str> {
        w.entries.iter().map(|e| e.hs_code.as_str()).collect()
    }

    #[test]
    fn anomaly_count_breaks_signature_ties() {
        let f = fixture(&[
            ("390100", true, false, &[], Archetype::StableMidMarket),
            ("390200", true, false, &[2021], Archetype::StableMidMarket),
            (
                "390300",
                false,
                false,
                &[2020, 2021],
                Archetype::HighVolumeCommodity,
            ),
        ]);
        let w = build_watchlist(&f.inputs()).unwrap();
        assert_eq!(ranked(&w), ["390200", "390100", "390300"]);
        assert_eq!(
            w.entries.iter().map(|e| e.risk_rank).collect::<Vec<_>>(),
            [1, 2, 3]
        );
    }

    #[test]
    fn no_flags_fall_back_to_code_order() {
        let f = fixture(&[
            ("392690", false, false, &[], Archetype::StableMidMarket),
            ("392020", false, false, &[], Archetype::StableMidMarket),
            ("390410", false, false, &[], Archetype::StableMidMarket),
        ]);
        let w = build_watchlist(&f.inputs()).unwrap();
        assert_eq!(ranked(&w), ["390410", "392020", "392690"]);
        assert!(w.entry(&code("390410")).unwrap().basel.a3210);
    }

    #[test]
    fn duty_gap_orders_otherwise_equal_codes() {
        // 3901 vs 3915 has a positive gap; 3926 is unmapped and sorts after.
        let f = fixture(&[
            ("392690", true, false, &[], Archetype::EmergingCommodity),
            ("390110", true, false, &[], Archetype::EmergingCommodity),
        ]);
        let w = build_watchlist(&f.inputs()).unwrap();
        assert_eq!(ranked(&w), ["390110", "392690"]);
        let g = w.entries[0].duty_gap.unwrap();
        assert_eq!((g.lo, g.hi), (230.0, 260.0));
        assert!(w.entries[1].duty_gap.is_none());
    }

    #[test]
    fn shuffled_input_same_output() {
        let rows: [(&str, bool, bool, &[i32], Archetype); 4] = [
            (
                "390100",
                true,
                true,
                &[2020],
                Archetype::HighVolumeCommodity,
            ),
            ("390200", true, false, &[], Archetype::StableMidMarket),
            ("390300", false, false, &[2020], Archetype::HighPriceNiche),
            ("391510", false, false, &[], Archetype::EmergingCommodity),
        ];
        let f = fixture(&rows);
        let base = build_watchlist(&f.inputs()).unwrap();
        let mut g = fixture(&rows);
        g.signatures.reverse();
        assert_eq!(build_watchlist(&g.inputs()).unwrap(), base);
        g.signatures.swap(0, 2);
        assert_eq!(build_watchlist(&g.inputs()).unwrap(), base);
    }

    #[test]
    fn orphans_are_named() {
        let mut f = fixture(&[("390100", false, false, &[], Archetype::StableMidMarket)]);
        f.anomalies.insert(code("390999"), vec![]);
        match build_watchlist(&f.inputs()) {
            Err(Error::OrphanCodes(c)) => assert_eq!(c, ["390999"]),
            other => panic!("{other:?}"),
        }
    }
}
