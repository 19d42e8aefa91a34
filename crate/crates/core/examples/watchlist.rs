//! Full pipeline into a run directory, then the top of the ranked watchlist.
//!
//! `cargo run --example watchlist -- <out-dir>`; defaults to a temp dir.

use std::path::PathBuf;

use tradesig::config::RunConfig;
use tradesig::pipeline::{run_pipeline, Workspace};
use tradesig::synth::generate_archetype_corpus;

fn main() -> tradesig::Result<()> {
    let out: PathBuf = std::env::args().nth(1).map_or_else(
        || std::env::temp_dir().join("tradesig-watchlist"),
        PathBuf::from,
    );
    std::fs::create_dir_all(&out).map_err(|e| tradesig::Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let input = out.join("trades.csv");
    let corpus = generate_archetype_corpus(32, 7)?;
    std::fs::write(&input, corpus.to_ingest_csv()).map_err(|e| tradesig::Error::Io {
        path: input.clone(),
        source: e,
    })?;

    let mut cfg = RunConfig::default();
    cfg.input.paths = vec![input.display().to_string()];
    let ws = Workspace::new(out.join("run"), cfg)?;
    let files = run_pipeline(&ws)?;
    println!("{} artifacts in {}", files.len(), ws.dir().display());

    let w = ws.load_watchlist()?;
    println!("rank  code    archetype            sig  strong anomalies  2030 price");
    for e in w.entries.iter().take(12) {
        let horizon = e.forecast.last().map_or(f64::NAN, |p| p.price);
        println!(
            "{:>4}  {}  {:<20} {:<4} {:<6} {:<10} {horizon:.3}",
            e.risk_rank,
            e.hs_code,
            e.archetype.name(),
            e.signature,
            e.strong_signature,
            format!("{:?}", e.anomaly_years)
        );
    }
    let injected = corpus.at_risk_codes();
    let worst = injected
        .iter()
        .filter_map(|c| w.entry(c).map(|e| e.risk_rank))
        .max()
        .unwrap_or(0);
    println!("all {} injected codes within rank {worst}", injected.len());
    Ok(())
}
