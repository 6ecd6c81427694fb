//! Flags weeks whose jump in TVL concentration is large relative to the
//! trailing window, on a panel with a mid-sample regime shift.
//!
//! cargo run --release --example early_warning -- [window]

use dexp_core::graph::sequence_from_snapshots;
use dexp_core::risk::{early_warning, hhi, DEFAULT_WARNING_WINDOW};
use dexp_core::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let window: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(DEFAULT_WARNING_WINDOW);
    let data = generate(&SynthConfig::regime_shift())?;
    let seq = sequence_from_snapshots(&data.snapshots, &data.issuers, 0.0)?;
    let series = seq
        .graphs()
        .iter()
        .map(|g| Ok((g.week(), hhi(&g.nodes().values().copied().collect::<Vec<_>>())?)))
        .collect::<dexp_core::Result<Vec<_>>>()?;
    let flags = early_warning(&series, window);
    for ((week, h), (_, flag)) in series.iter().zip(&flags) {
        println!("{week:>5} {h:.5}{}", if *flag { "  <- warning" } else { "" });
    }
    println!("{} of {} weeks flagged (window {window})", flags.iter().filter(|f| f.1).count(), flags.len());
    Ok(())
}
