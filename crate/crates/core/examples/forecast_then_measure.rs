//! Forecasts future graphs with a trained model, measures risk on them,
//! and compares the measurements with what was later observed.
//!
//! cargo run --release --example forecast_then_measure -- [out_dir]

use dexp_core::pipeline::{cmd_build, cmd_forecast_measure, cmd_synth, cmd_train, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = PipelineConfig::from_toml_str(include_str!("../../../configs/small.toml"))?;
    if let Some(out) = std::env::args().nth(1) {
        cfg.out_dir = out.into();
    }
    if !cfg.artifacts().checkpoint().exists() {
        cmd_synth(&cfg)?;
        cmd_build(&cfg)?;
        cmd_train(&cfg)?;
    }
    let out = cmd_forecast_measure(&cfg)?;
    for c in &out.calibration {
        println!("h={} calibration over {} points", c.horizon, c.points.len());
        for (metric, r) in &c.correlation {
            println!("  {metric:<16} corr {}", r.map_or("-".into(), |x| format!("{x:+.3}")));
        }
    }
    for v in &out.dashboard {
        println!(
            "from week {} at h={}: {} nodes, {} edges, density {}",
            v.origin_week,
            v.horizon,
            v.nodes,
            v.edges,
            v.density.map_or("-".into(), |d| format!("{d:.4}"))
        );
        let watch: Vec<_> = v.watchlist.iter().take(5).map(|(p, _)| p.as_str()).collect();
        println!("  watchlist: {}", watch.join(", "));
        for (name, pct) in &v.stress {
            println!("  {name:<18} predicted loss {pct:.2}%");
        }
    }
    Ok(())
}
