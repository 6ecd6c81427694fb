//! Generates the synthetic holdings panel and re-measures its network
//! statistics through graph construction.
//!
//! cargo run --release --example synth_dataset -- [n_weeks] [edge_overlap]

use dexp_core::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = SynthConfig::default();
    if let Some(w) = args.next() {
        cfg.n_weeks = w.parse()?;
    }
    if let Some(o) = args.next() {
        cfg.edge_overlap = o.parse()?;
    }
    for (label, cfg) in [
        ("default", cfg.clone()),
        ("regime-shift", SynthConfig { n_weeks: cfg.n_weeks, ..SynthConfig::regime_shift() }),
        ("frozen", SynthConfig { n_weeks: cfg.n_weeks, ..SynthConfig::frozen() }),
    ] {
        let data = generate(&cfg)?;
        let s = data.stats()?;
        println!(
            "{label:>12}: {} weeks -> {} graphs, {:.1} nodes, {:.1} edges, overlap {:.4} (target {})",
            s.weeks, s.graphs, s.mean_nodes, s.mean_edges, s.mean_overlap, s.target_overlap
        );
        println!(
            "{:>12}  tokens {}: declared {}, manual {}, described {}, primary {}",
            "", s.tokens, s.tokens_declared, s.tokens_manual, s.tokens_described, s.tokens_primary
        );
    }
    Ok(())
}
