//! Seeded synthetic trade series with known ground truth.
//!
//! Trends are additive, so a noiseless series is exactly linear and the
//! fitted slopes equal the generator parameters.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{unit_price, AnnualSeries, HsCode, SeriesPoint};
use crate::seeds;
use crate::segment::Archetype;

pub const PRICE_FLOOR: f64 = 0.01;
pub const DEFAULT_YEARS: (i32, i32) = (2014, 2023);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSpec {
    pub hs_code: HsCode,
    pub start_year: i32,
    pub end_year: i32,
    pub base_kg: f64,
    /// Added to kg each year.
    pub kg_growth: f64,
    pub base_price: f64,
    /// Added to the unit price each year.
    pub price_drift: f64,
    pub noise_sd_kg: f64,
    pub noise_sd_price: f64,
    pub seed: u64,
}

impl SeriesSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{}: {m}", self.hs_code)));
        if self.start_year > self.end_year {
            return bad("start year after end year");
        }
        if !(self.base_kg > 0.0) || !(self.base_price > 0.0) {
            return bad("base kg and base price must be positive");
        }
        if !(self.noise_sd_kg >= 0.0) || !(self.noise_sd_price >= 0.0) {
            return bad("noise sd must be non-negative");
        }
        Ok(())
    }
}

fn normal(rng: &mut seeds::Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sd).expect("sd checked").sample(rng)
    }
}

pub fn generate_series(spec: &SeriesSpec) -> Result<AnnualSeries> {
    spec.validate()?;
    let mut rng = seeds::rng(spec.seed, seeds::SYNTH, 0);
    let points = (spec.start_year..=spec.end_year)
        .map(|year| {
            let t = f64::from(year - spec.start_year);
            let kg =
                (spec.base_kg + spec.kg_growth * t + normal(&mut rng, spec.noise_sd_kg)).max(0.0);
            let price =
                (spec.base_price + spec.price_drift * t + normal(&mut rng, spec.noise_sd_price))
                    .max(PRICE_FLOOR);
            SeriesPoint::observed(year, kg, kg * price)
        })
        .collect();
    Ok(AnnualSeries {
        hs_code: spec.hs_code.clone(),
        points,
    })
}

/// Multiply every kg and unit price by `1 + N(0, sd)`, keeping usd = kg × price.
pub fn perturb_multiplicative(series: &AnnualSeries, sd: f64, seed: u64) -> AnnualSeries {
    let mut rng = seeds::rng(seed, seeds::SYNTH, 1);
    let mut out = series.clone();
    for p in &mut out.points {
        let kg = (p.kg * (1.0 + normal(&mut rng, sd))).max(0.0);
        let price = (p.unit_price.unwrap_or(0.0) * (1.0 + normal(&mut rng, sd))).max(PRICE_FLOOR);
        set(p, kg, kg * price);
    }
    out
}

fn set(p: &mut SeriesPoint, kg: f64, usd: f64) {
    p.kg = kg;
    p.usd = usd;
    p.unit_price = unit_price(kg, usd);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonSpec {
    pub virgin_code: HsCode,
    pub scrap_code: HsCode,
    /// Share of the scrap mass re-declared under the virgin code; years
    /// without an entry move nothing.
    pub fraction_schedule: BTreeMap<i32, f64>,
    /// Declared USD/kg of the moved mass.
    pub scrap_price: f64,
}

impl PoisonSpec {
    /// Fraction rising linearly from `from` in `start` to `to` in `end`.
    pub fn ramp(
        virgin: HsCode,
        scrap: HsCode,
        start: i32,
        end: i32,
        from: f64,
        to: f64,
        scrap_price: f64,
    ) -> Self {
        let span = f64::from((end - start).max(1));
        PoisonSpec {
            virgin_code: virgin,
            scrap_code: scrap,
            fraction_schedule: (start..=end)
                .map(|y| (y, from + (to - from) * f64::from(y - start) / span))
                .collect(),
            scrap_price,
        }
    }
}

/// Move scrap mass into the virgin series at scrap-level declared prices.
pub fn inject_misclassification(
    virgin: &AnnualSeries,
    scrap: &AnnualSeries,
    spec: &PoisonSpec,
) -> Result<(AnnualSeries, AnnualSeries)> {
    if let Some((y, f)) = spec
        .fraction_schedule
        .iter()
        .find(|(_, f)| !(0.0..=1.0).contains(*f))
    {
        return Err(Error::Config(format!(
            "fraction {f} for {y} outside [0, 1]"
        )));
    }
    if !(spec.scrap_price >= 0.0) {
        return Err(Error::Config("scrap price must be non-negative".into()));
    }
    let years = |s: &AnnualSeries| s.points.iter().map(|p| p.year).collect::<Vec<_>>();
    if years(virgin) != years(scrap) {
        return Err(Error::MisalignedYears(
            virgin.hs_code.to_string(),
            scrap.hs_code.to_string(),
        ));
    }
    let mut v = virgin.clone();
    let mut s = scrap.clone();
    for (pv, ps) in v.points.iter_mut().zip(&mut s.points) {
        let f = spec.fraction_schedule.get(&pv.year).copied().unwrap_or(0.0);
        let moved = f * ps.kg;
        let value = moved * spec.scrap_price;
        set(pv, pv.kg + moved, pv.usd + value);
        set(ps, ps.kg - moved, ps.usd - value);
    }
    Ok((v, s))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub hs_code: HsCode,
    pub class: String,
    pub at_risk: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub series: Vec<AnnualSeries>,
    /// Same order as `series`.
    pub truth: Vec<GroundTruth>,
}

pub const INGEST_HEADER: &str = "hs_code,year,flow,reporter,partner,value_usd,mass_kg";
pub const LABELS_HEADER: &str = "hs_code,class,at_risk";

impl Corpus {
    /// Distinct class names in first-seen order.
    pub fn classes(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.truth {
            if !out.contains(&t.class) {
                out.push(t.class.clone());
            }
        }
        out
    }

    pub fn class_ids(&self, classes: &[String]) -> Vec<usize> {
        self.truth
            .iter()
            .map(|t| {
                classes
                    .iter()
                    .position(|c| *c == t.class)
                    .expect("class listed")
            })
            .collect()
    }

    pub fn at_risk_codes(&self) -> Vec<HsCode> {
        self.truth
            .iter()
            .filter(|t| t.at_risk)
            .map(|t| t.hs_code.clone())
            .collect()
    }

    /// One import record per code and year, readable by the ingest parser.
    pub fn to_ingest_csv(&self) -> String {
        let mut out = String::from(INGEST_HEADER);
        out.push('\n');
        for s in &self.series {
            for p in &s.points {
                let _ = writeln!(
                    out,
                    "{},{},import,MYS,WLD,{},{}",
                    s.hs_code, p.year, p.usd, p.kg
                );
            }
        }
        out
    }

    pub fn labels_csv(&self) -> String {
        let mut out = String::from(LABELS_HEADER);
        out.push('\n');
        for t in &self.truth {
            let _ = writeln!(out, "{},{},{}", t.hs_code, t.class, t.at_risk);
        }
        out
    }
}

/// Parse a labels sidecar written by [`Corpus::labels_csv`].
pub fn parse_labels(text: &str) -> Result<Vec<GroundTruth>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let get = |i: usize| row.get(i).unwrap_or("");
        out.push(GroundTruth {
            hs_code: HsCode::new(get(0))?,
            class: get(1).to_string(),
            at_risk: matches!(get(2), "true" | "1"),
        });
    }
    Ok(out)
}

fn code(prefix: u32, i: usize) -> HsCode {
    HsCode::new(format!("{prefix}{i:03}")).expect("synthetic code is valid")
}

/// Parameter ranges of one archetype template, fractions relative to base.
struct Template {
    archetype: Archetype,
    prefix: u32,
    kg: (f64, f64),
    growth: (f64, f64),
    kg_noise: f64,
    price: (f64, f64),
    drift: (f64, f64),
    price_noise: f64,
    /// Drift and growth used for the at-risk members.
    at_risk: Option<((f64, f64), (f64, f64))>,
}

const TEMPLATES: [Template; 4] = [
    Template {
        archetype: Archetype::HighVolumeCommodity,
        prefix: 391,
        kg: (4.5e7, 5.5e7),
        growth: (0.002, 0.004),
        kg_noise: 0.002,
        price: (0.7, 0.9),
        drift: (0.002, 0.006),
        price_noise: 0.0,
        at_risk: Some(((0.004, 0.006), (-0.006, -0.003))),
    },
    Template {
        archetype: Archetype::EmergingCommodity,
        prefix: 392,
        kg: (4.0e6, 5.0e6),
        growth: (0.18, 0.22),
        kg_noise: 0.01,
        price: (1.8, 2.2),
        drift: (0.025, 0.035),
        price_noise: 0.0,
        at_risk: Some(((0.18, 0.22), (-0.012, -0.008))),
    },
    // Falling volume without kg noise: never a signature, whatever the price does.
    Template {
        archetype: Archetype::StableMidMarket,
        prefix: 393,
        kg: (9.0e6, 1.1e7),
        growth: (-0.006, -0.002),
        kg_noise: 0.0,
        price: (2.8, 3.2),
        drift: (-0.032, -0.028),
        price_noise: 0.002,
        at_risk: None,
    },
    Template {
        archetype: Archetype::HighPriceNiche,
        prefix: 394,
        kg: (1.8e5, 2.2e5),
        growth: (-0.006, -0.002),
        kg_noise: 0.0,
        price: (8.0, 10.0),
        drift: (-0.003, 0.003),
        price_noise: 0.003,
        at_risk: None,
    },
];

fn uniform(rng: &mut seeds::Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Four archetype templates, `n` codes each. In the two commodity
/// archetypes `max(1, n / 8)` codes get a falling price trend and are
/// marked at risk.
pub fn generate_archetype_corpus(n: usize, seed: u64) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::Config("need at least one code per archetype".into()));
    }
    let (start, end) = DEFAULT_YEARS;
    let n_risk = (n / 8).max(1);
    let mut corpus = Corpus {
        series: Vec::new(),
        truth: Vec::new(),
    };
    for (ti, t) in TEMPLATES.iter().enumerate() {
        for i in 0..n {
            let mut rng = seeds::rng(seed, seeds::SYNTH, (ti * 100_000 + i) as u64 + 2);
            let at_risk = t.at_risk.is_some() && i < n_risk;
            let (growth, drift) = match t.at_risk {
                Some(r) if at_risk => r,
                _ => (t.growth, t.drift),
            };
            let base_kg = uniform(&mut rng, t.kg);
            let base_price = uniform(&mut rng, t.price);
            let spec = SeriesSpec {
                hs_code: code(t.prefix, i),
                start_year: start,
                end_year: end,
                base_kg,
                kg_growth: uniform(&mut rng, growth) * base_kg,
                base_price,
                price_drift: uniform(&mut rng, drift) * base_price,
                noise_sd_kg: t.kg_noise * base_kg,
                noise_sd_price: t.price_noise * base_price,
                seed: rng.random(),
            };
            corpus.series.push(generate_series(&spec)?);
            corpus.truth.push(GroundTruth {
                hs_code: spec.hs_code,
                class: t.archetype.name().into(),
                at_risk,
            });
        }
    }
    Ok(corpus)
}

/// 40 clean codes (10 scrap donors plus 30 others) and 10 virgin codes
/// poisoned with a 0 to 0.4 fraction ramp. `noise_sd > 0` applies
/// multiplicative noise to every series after poisoning.
pub fn generate_signature_corpus(seed: u64, noise_sd: f64) -> Result<Corpus> {
    let (start, end) = DEFAULT_YEARS;
    let mut series = Vec::new();
    let mut truth = Vec::new();
    let virgin_prefix = [3901, 3902, 3907];
    for i in 0..10 {
        let mut rng = seeds::rng(seed, seeds::SYNTH, 1_000_000 + i as u64);
        let flat = |code: HsCode, kg: f64, price: f64| SeriesSpec {
            hs_code: code,
            start_year: start,
            end_year: end,
            base_kg: kg,
            kg_growth: 0.0,
            base_price: price,
            price_drift: 0.0,
            noise_sd_kg: 0.0,
            noise_sd_price: 0.0,
            seed: 0,
        };
        let vcode = HsCode::new(format!("{}{:02}", virgin_prefix[i % 3], 10 + i))?;
        let scode = HsCode::new(format!("3915{:02}", 10 + i))?;
        let scrap_price = uniform(&mut rng, (0.3, 0.7));
        let virgin = generate_series(&flat(
            vcode.clone(),
            uniform(&mut rng, (1e6, 2e6)),
            uniform(&mut rng, (4.0, 6.0)),
        ))?;
        let scrap = generate_series(&flat(
            scode.clone(),
            uniform(&mut rng, (1e6, 2e6)),
            scrap_price,
        ))?;
        let spec = PoisonSpec::ramp(
            vcode.clone(),
            scode.clone(),
            start,
            end,
            0.0,
            0.4,
            scrap_price,
        );
        let (v, s) = inject_misclassification(&virgin, &scrap, &spec)?;
        series.push(v);
        truth.push(GroundTruth {
            hs_code: vcode,
            class: "poisoned".into(),
            at_risk: true,
        });
        series.push(s);
        truth.push(GroundTruth {
            hs_code: scode,
            class: "scrap".into(),
            at_risk: false,
        });
    }
    // Clean shapes that can never be a signature.
    let shapes = [(0.02, 0.05), (-0.04, -0.03), (-0.03, 0.02)];
    for i in 0..30 {
        let mut rng = seeds::rng(seed, seeds::SYNTH, 2_000_000 + i as u64);
        let (g, d) = shapes[i % 3];
        let base_kg = uniform(&mut rng, (5e5, 5e6));
        let base_price = uniform(&mut rng, (1.0, 4.0));
        let spec = SeriesSpec {
            hs_code: code(392, 100 + i),
            start_year: start,
            end_year: end,
            base_kg,
            kg_growth: g * base_kg,
            base_price,
            price_drift: d * base_price,
            noise_sd_kg: 0.0,
            noise_sd_price: 0.0,
            seed: 0,
        };
        series.push(generate_series(&spec)?);
        truth.push(GroundTruth {
            hs_code: spec.hs_code,
            class: "clean".into(),
            at_risk: false,
        });
    }
    if noise_sd > 0.0 {
        series = series
            .iter()
            .enumerate()
            .map(|(i, s)| {
                perturb_multiplicative(
                    s,
                    noise_sd,
                    seeds::derive(seed, seeds::SYNTH, 3_000_000 + i as u64),
                )
            })
            .collect();
    }
    Ok(Corpus { series, truth })
}

/// Which feature family separates the classes of a driver corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Driver {
    Price,
    Volume,
}

/// Four classes that differ only in price behaviour (`Price`) or only in
/// volume behaviour (`Volume`); the other family is drawn from one shared
/// distribution.
pub fn generate_driver_corpus(driver: Driver, n: usize, seed: u64) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::Config("need at least one code per class".into()));
    }
    let (start, end) = DEFAULT_YEARS;
    let mut corpus = Corpus {
        series: Vec::new(),
        truth: Vec::new(),
    };
    let price_classes = [(-0.05, 0.01), (-0.05, 0.06), (0.03, 0.01), (0.03, 0.06)];
    let volume_classes = [(1e6, -0.05), (1e6, 0.12), (4e6, -0.05), (4e6, 0.12)];
    for c in 0..4 {
        for i in 0..n {
            let mut rng = seeds::rng(seed, seeds::SYNTH, 4_000_000 + (c * 100_000 + i) as u64);
            let (base_kg, growth, kg_noise, base_price, drift, price_noise) = match driver {
                Driver::Price => {
                    let (d, v) = price_classes[c];
                    (
                        uniform(&mut rng, (1e6, 4e6)),
                        uniform(&mut rng, (-0.05, 0.12)),
                        0.02,
                        uniform(&mut rng, (1.5, 3.0)),
                        d,
                        v,
                    )
                }
                Driver::Volume => {
                    let (k, g) = volume_classes[c];
                    (
                        uniform(&mut rng, (0.8 * k, 1.2 * k)),
                        g,
                        0.02,
                        uniform(&mut rng, (1.5, 3.0)),
                        uniform(&mut rng, (-0.05, 0.03)),
                        uniform(&mut rng, (0.01, 0.06)),
                    )
                }
            };
            let spec = SeriesSpec {
                hs_code: code(395 + c as u32, i),
                start_year: start,
                end_year: end,
                base_kg,
                kg_growth: growth * base_kg,
                base_price,
                price_drift: drift * base_price,
                noise_sd_kg: kg_noise * base_kg,
                noise_sd_price: price_noise * base_price,
                seed: rng.random(),
            };
            corpus.series.push(generate_series(&spec)?);
            corpus.truth.push(GroundTruth {
                hs_code: spec.hs_code,
                class: format!("segment-{c}"),
                at_risk: false,
            });
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{compute_features, signature_flag};
    use proptest::prelude::*;

    fn spec(noise: f64, seed: u64) -> SeriesSpec {
        SeriesSpec {
            hs_code: HsCode::new("390110").unwrap(),
            start_year: 2014,
            end_year: 2023,
            base_kg: 10_000.0,
            kg_growth: 100.0,
            base_price: 10.0,
            price_drift: -0.5,
            noise_sd_kg: noise * 10_000.0,
            noise_sd_price: noise * 10.0,
            seed,
        }
    }

    #[test]
    fn noiseless_round_trip() {
        let fv = compute_features(&generate_series(&spec(0.0, 1)).unwrap()).unwrap();
        assert!((fv.kg_trend - 100.0).abs() < 1e-9);
        assert!((fv.price_trend + 0.5).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            generate_series(&spec(0.05, 3)).unwrap(),
            generate_series(&spec(0.05, 3)).unwrap()
        );
        assert_ne!(
            generate_series(&spec(0.05, 3)).unwrap(),
            generate_series(&spec(0.05, 4)).unwrap()
        );
    }

    #[test]
    fn small_noise_trends_within_three_standard_errors() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let sxx: f64 = xs.iter().map(|x| (x - 4.5).powi(2)).sum();
        let mut hits = 0;
        for seed in 0..100 {
            let s = generate_series(&spec(0.01, seed)).unwrap();
            let fv = compute_features(&s).unwrap();
            // Standard error from the generator's own noise sd.
            let se_kg = 100.0 / sxx.sqrt();
            let se_p = 0.1 / sxx.sqrt();
            let ok = (fv.kg_trend - 100.0).abs() <= 3.0 * se_kg
                && (fv.price_trend + 0.5).abs() <= 3.0 * se_p;
            hits += usize::from(ok);
        }
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let mut s = spec(0.0, 0);
        s.base_kg = 0.0;
        assert!(generate_series(&s).is_err());
        let mut s = spec(0.0, 0);
        s.noise_sd_price = -1.0;
        assert!(generate_series(&s).is_err());
    }

    fn flat(code: &str, kg: f64, price: f64) -> AnnualSeries {
        let triples: Vec<(i32, f64, f64)> = (2018..2023).map(|y| (y, kg, kg * price)).collect();
        AnnualSeries::from_triples(HsCode::new(code).unwrap(), &triples)
    }

    #[test]
    fn zero_fraction_is_identity() {
        let v = flat("390110", 100_000.0, 5.0);
        let s = flat("391510", 50_000.0, 0.5);
        let spec = PoisonSpec::ramp(
            v.hs_code.clone(),
            s.hs_code.clone(),
            2018,
            2022,
            0.0,
            0.0,
            0.5,
        );
        let (pv, ps) = inject_misclassification(&v, &s, &spec).unwrap();
        assert_eq!((pv, ps), (v, s));
    }

    #[test]
    fn blended_price_example() {
        let v = flat("390110", 100_000.0, 5.0);
        let s = flat("391510", 50_000.0, 0.5);
        let mut spec = PoisonSpec::ramp(
            v.hs_code.clone(),
            s.hs_code.clone(),
            2018,
            2022,
            0.0,
            0.0,
            0.5,
        );
        spec.fraction_schedule.insert(2020, 0.5);
        let (pv, ps) = inject_misclassification(&v, &s, &spec).unwrap();
        let p = &pv.points[2];
        assert_eq!((p.kg, p.usd), (125_000.0, 512_500.0));
        assert!((p.unit_price.unwrap() - 4.10).abs() < 1e-12);
        assert_eq!(ps.points[2].kg, 25_000.0);
        assert_eq!(pv.points[1], v.points[1]);
    }

    #[test]
    fn rising_ramp_creates_signature() {
        let v = flat("390110", 100_000.0, 5.0);
        let s = flat("391510", 80_000.0, 0.5);
        let spec = PoisonSpec::ramp(
            v.hs_code.clone(),
            s.hs_code.clone(),
            2018,
            2022,
            0.0,
            0.4,
            0.5,
        );
        let (pv, ps) = inject_misclassification(&v, &s, &spec).unwrap();
        assert!(signature_flag(&compute_features(&pv).unwrap()));
        assert!(!signature_flag(&compute_features(&ps).unwrap()));
    }

    #[test]
    fn misaligned_and_bad_fraction() {
        let v = flat("390110", 1.0, 5.0);
        let mut s = flat("391510", 1.0, 0.5);
        s.points.pop();
        let spec = PoisonSpec::ramp(
            v.hs_code.clone(),
            s.hs_code.clone(),
            2018,
            2022,
            0.0,
            0.4,
            0.5,
        );
        assert!(matches!(
            inject_misclassification(&v, &s, &spec),
            Err(Error::MisalignedYears(..))
        ));
        let s = flat("391510", 1.0, 0.5);
        let spec = PoisonSpec::ramp(
            v.hs_code.clone(),
            s.hs_code.clone(),
            2018,
            2022,
            0.0,
            1.5,
            0.5,
        );
        assert!(matches!(
            inject_misclassification(&v, &s, &spec),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn archetype_corpus_shape() {
        let c = generate_archetype_corpus(32, 7).unwrap();
        assert_eq!(c.series.len(), 128);
        assert_eq!(c.classes().len(), 4);
        assert_eq!(c.at_risk_codes().len(), 8);
        for (s, t) in c.series.iter().zip(&c.truth) {
            let sig = signature_flag(&compute_features(s).unwrap());
            assert_eq!(sig, t.at_risk, "{}", s.hs_code);
            if t.class == "StableMidMarket" {
                assert!(!sig);
            }
        }
        assert_eq!(c, generate_archetype_corpus(32, 7).unwrap());
    }

    #[test]
    fn csv_round_trip_through_ingest() {
        use crate::ingest::{aggregate_annual, parse_records, ColumnMapping, ParseOptions};
        let c = generate_archetype_corpus(2, 1).unwrap();
        let parsed = parse_records(
            c.to_ingest_csv().as_bytes(),
            &ColumnMapping::default(),
            &ParseOptions::default(),
        )
        .unwrap();
        assert_eq!(parsed.report.rejected, 0);
        let agg = aggregate_annual(&parsed.records, None, None);
        assert_eq!(agg.len(), 8);
        for s in &agg {
            let orig = c.series.iter().find(|o| o.hs_code == s.hs_code).unwrap();
            assert_eq!(s.kgs(), orig.kgs());
        }
        let labels = parse_labels(&c.labels_csv()).unwrap();
        assert_eq!(labels, c.truth);
    }

    #[test]
    fn signature_corpus_shape() {
        let c = generate_signature_corpus(0, 0.0).unwrap();
        assert_eq!(c.series.len(), 50);
        assert_eq!(c.at_risk_codes().len(), 10);
        let d = generate_driver_corpus(Driver::Volume, 8, 0).unwrap();
        assert_eq!(d.series.len(), 32);
        assert_eq!(d.classes().len(), 4);
    }

    proptest! {
        #[test]
        fn mass_and_value_conserved(
            vk in 1.0f64..1e7, sk in 1.0f64..1e7, vp in 0.5f64..20.0, sp in 0.0f64..0.5,
            fr in proptest::collection::vec(0.0f64..=1.0, 5),
        ) {
            let v = flat("390110", vk, vp);
            let s = flat("391510", sk, sp);
            let spec = PoisonSpec {
                virgin_code: v.hs_code.clone(),
                scrap_code: s.hs_code.clone(),
                fraction_schedule: (2018..2023).zip(fr.iter().copied()).collect(),
                scrap_price: sp,
            };
            let (pv, ps) = inject_misclassification(&v, &s, &spec).unwrap();
            for i in 0..5 {
                let kg0 = v.points[i].kg + s.points[i].kg;
                let kg1 = pv.points[i].kg + ps.points[i].kg;
                prop_assert!((kg0 - kg1).abs() <= 1e-12 * kg0);
                let usd0 = v.points[i].usd + s.points[i].usd;
                let usd1 = pv.points[i].usd + ps.points[i].usd;
                prop_assert!((usd0 - usd1).abs() <= 1e-12 * usd0);
                if fr[i] > 0.0 {
                    prop_assert!(pv.points[i].unit_price.unwrap() < vp);
                }
            }
        }

        #[test]
        fn more_fraction_lowers_price(f1 in 0.0f64..=1.0, f2 in 0.0f64..=1.0) {
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let v = flat("390110", 1000.0, 5.0);
            let s = flat("391510", 700.0, 0.5);
            let price_at = |f: f64| {
                let spec = PoisonSpec::ramp(v.hs_code.clone(), s.hs_code.clone(), 2018, 2022, f, f, 0.5);
                inject_misclassification(&v, &s, &spec).unwrap().0.points[0].unit_price.unwrap()
            };
            prop_assert!(price_at(hi) <= price_at(lo));
        }
    }

    #[test]
    fn exact_conservation_on_dyadic_values() {
        let v = flat("390110", 1024.0, 4.0);
        let s = flat("391510", 512.0, 0.5);
        let spec = PoisonSpec::ramp(
            v.hs_code.clone(),
            s.hs_code.clone(),
            2018,
            2022,
            0.25,
            0.5,
            0.5,
        );
        let (pv, ps) = inject_misclassification(&v, &s, &spec).unwrap();
        for i in 0..5 {
            assert_eq!(pv.points[i].kg + ps.points[i].kg, 1536.0);
            assert_eq!(pv.points[i].usd + ps.points[i].usd, 4096.0 + 256.0);
        }
    }
}
