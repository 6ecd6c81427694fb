//! Runs the standard contagion scenarios, plus a shock sweep, on the latest
//! weekly graph.
//!
//! cargo run --release --example stress_test -- [tau]

use dexp_core::contagion::{canonical_scenarios, run_scenario, ScenarioSpec, TargetRule, DEFAULT_TAU};
use dexp_core::graph::sequence_from_snapshots;
use dexp_core::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tau: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(DEFAULT_TAU);
    let data = generate(&SynthConfig::default())?;
    let categories = data.snapshots.iter().flat_map(|s| s.categories()).collect();
    let seq = sequence_from_snapshots(&data.snapshots, &data.issuers, 0.0)?;
    let g = seq.graphs().last().ok_or("no graphs")?;
    println!("week {}: {} nodes, TVL {:.0}", g.week(), g.node_count(), g.total_tvl());

    let mut specs = canonical_scenarios();
    for s in &mut specs {
        s.distress_threshold = tau;
    }
    for d in [0.1, 0.25, 0.5, 0.75, 1.0] {
        specs.push(ScenarioSpec {
            name: format!("top3_{d}"),
            targets: TargetRule::TopN(3),
            loss_ratio: d,
            distress_threshold: tau,
        });
    }
    for spec in &specs {
        match run_scenario(g, &categories, spec) {
            Ok(r) => println!(
                "  {:<18} loss {:>6.2}% depth {} distressed {:>3} affected {:>3}",
                spec.name, r.system_loss_pct, r.depth, r.distressed_count, r.affected_count
            ),
            Err(e) => println!("  {:<18} skipped: {e}", spec.name),
        }
    }
    Ok(())
}
