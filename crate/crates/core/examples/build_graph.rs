//! Builds weekly exposure graphs from a synthetic holdings panel and prints
//! the heaviest exposures of one week.
//!
//! cargo run --release --example build_graph -- [week_index] [prune_theta]

use dexp_core::graph::{edge_overlap, sequence_from_snapshots};
use dexp_core::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let idx: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let theta: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.0);

    let data = generate(&SynthConfig::default())?;
    let seq = sequence_from_snapshots(&data.snapshots, &data.issuers, theta)?;
    let graphs = seq.graphs();
    let g = graphs.get(idx).ok_or("week index out of range")?;
    println!(
        "week {} ({} -> {}): {} nodes, {} edges, TVL {:.0}, exposure {:.0}",
        g.week(),
        g.interval().start,
        g.interval().end,
        g.node_count(),
        g.edge_count(),
        g.total_tvl(),
        g.total_edge_weight()
    );

    let mut edges: Vec<_> = g.edges().iter().collect();
    edges.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
    println!("largest exposures (holder -> issuer):");
    for ((p, q), w) in edges.iter().take(10) {
        println!("  {:>14} -> {:<14} {:>14.2}", p.as_str(), q.as_str(), w);
    }
    if let Some(next) = graphs.get(idx + 1) {
        if let Some(o) = edge_overlap(g, next) {
            println!("edge overlap with the next week: {o:.4}");
        }
    }
    Ok(())
}
