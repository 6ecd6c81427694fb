//! Scores a trained forecaster against persistence on held-out weeks:
//! link AUPRC/AUROC, weight and TVL errors, and stress-loss errors on the
//! hardest 20% of cases.
//!
//! cargo run --release --example evaluate_forecast -- [out_dir]

use dexp_core::pipeline::{cmd_build, cmd_evaluate, cmd_synth, cmd_train, PipelineConfig};

fn fmt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

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
    let report = cmd_evaluate(&cfg)?;
    println!("{:<12} {:>3} {:>7} {:>7} {:>7} {:>7}", "model", "h", "auprc", "auroc", "mae_w", "mae_n");
    for r in &report.task1 {
        println!(
            "{:<12} {:>3} {:>7} {:>7} {:>7} {:>7}",
            r.model,
            r.horizon,
            fmt(r.auprc),
            fmt(r.auroc),
            fmt(r.mae_w),
            fmt(r.mae_n)
        );
    }
    println!("{:>3} {:>6} {:>12} {:>12} {:>9}", "h", "cases", "dMAE all", "dMAE worst", "win rate");
    for s in &report.task2 {
        println!(
            "{:>3} {:>6} {:>12.4} {:>12.4} {:>9.3}",
            s.horizon, s.cases, s.delta_mae_all, s.delta_mae_worst20, s.win_rate_worst20
        );
    }
    println!("dAUPRC {}, pooled worst-20% win rate {}", fmt(report.delta_auprc), fmt(report.pooled_win_rate()));
    Ok(())
}
