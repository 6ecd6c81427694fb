//! Weekly systemic-risk table: density, concentration, spillover and the
//! protocols with the highest importance score.
//!
//! cargo run --release --example risk_dashboard -- [n_weeks]

use dexp_core::graph::sequence_from_snapshots;
use dexp_core::risk::{risk_report, RiskConfig};
use dexp_core::synth::{generate, SynthConfig};

fn fmt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = SynthConfig::default();
    if let Some(w) = std::env::args().nth(1) {
        cfg.n_weeks = w.parse()?;
    }
    let data = generate(&cfg)?;
    let categories = data.snapshots.iter().flat_map(|s| s.categories()).collect();
    let seq = sequence_from_snapshots(&data.snapshots, &data.issuers, 0.0)?;

    println!("{:>5} {:>6} {:>6} {:>8} {:>8} {:>9}  top protocols", "week", "nodes", "edges", "density", "tvl_hhi", "spillover");
    for g in seq.graphs() {
        let r = risk_report(g, &categories, &RiskConfig::default())?;
        let top: Vec<_> = r.top_sis.iter().take(3).map(|(p, _)| p.as_str()).collect();
        println!(
            "{:>5} {:>6} {:>6} {:>8} {:>8} {:>9}  {}",
            r.week,
            r.nodes,
            r.edges,
            fmt(r.density),
            fmt(r.tvl_hhi),
            fmt(r.spillover_index),
            top.join(", ")
        );
    }
    Ok(())
}
