//! Parse a small trade extract, aggregate it to annual series and clean it.

use tradesig::ingest::{
    aggregate_annual, clean_series, parse_records, CleaningConfig, ColumnMapping, Flow,
    ParseOptions,
};

const TRADES: &str = "\
hs_code,year,flow,reporter,partner,value_usd,mass_kg
390210,2018,import,MYS,CHN,52000,40000
390210,2018,import,MYS,USA,13000,10000
390210,2019,import,MYS,CHN,60000,48000
390210,2021,import,MYS,CHN,61000,55000
390210,2022,import,MYS,CHN,900000,60000
390210,2023,import,MYS,CHN,64000,66000
392690,2018,import,MYS,JPN,250000,30000
392690,2019,import,MYS,JPN,240000,29000
392690,2020,import,MYS,JPN,260000,31000
392690,2021,export,MYS,SGP,10,1
392690,2021,import,MYS,JPN,255000,30500
392690,2022,import,MYS,JPN,262000,31500
392690,2023,import,MYS,JPN,266000,32000
39x690,2023,import,MYS,JPN,1,1
";

fn main() -> tradesig::Result<()> {
    let parsed = parse_records(
        TRADES.as_bytes(),
        &ColumnMapping::default(),
        &ParseOptions::default(),
    )?;
    println!(
        "accepted {} rows, rejected {}",
        parsed.report.accepted, parsed.report.rejected
    );
    for r in &parsed.report.rejections {
        println!("  line {}: {}", r.line, r.reason);
    }

    let series = aggregate_annual(&parsed.records, Some(Flow::Import), None);
    let cfg = CleaningConfig {
        cap_lo: 0.05,
        cap_hi: 0.95,
        ..Default::default()
    };
    let (cleaned, report) = clean_series(series, None, &cfg)?;
    println!(
        "{} codes in, {} kept, {} interpolated points, {} capped prices",
        report.codes_in,
        report.codes_kept,
        report.interpolated_points,
        report.capping.capped_points
    );
    for s in &cleaned {
        println!("{}", s.hs_code);
        for p in &s.points {
            let price = p.unit_price.map_or("-".into(), |v| format!("{v:.3}"));
            let mut flags = format!("{:?}", p.origin).to_lowercase();
            if p.capped {
                flags.push_str(",capped");
            }
            println!(
                "  {}  kg {:>8.0}  usd {:>9.0}  price {price:>6}  {flags}",
                p.year, p.kg, p.usd
            );
        }
    }
    Ok(())
}
