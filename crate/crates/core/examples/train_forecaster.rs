//! Trains the multi-task forecaster on a small synthetic panel and prints
//! the per-epoch losses.
//!
//! cargo run --release --example train_forecaster -- [out_dir] [epochs]

use dexp_core::pipeline::{cmd_build, cmd_synth, cmd_train, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = PipelineConfig::from_toml_str(include_str!("../../../configs/small.toml"))?;
    cfg.out_dir = args.next().unwrap_or_else(|| "runs/small".into()).into();
    if let Some(e) = args.next() {
        cfg.train.epochs = e.parse()?;
    }
    cmd_synth(&cfg)?;
    cmd_build(&cfg)?;
    let ckpt = cmd_train(&cfg)?;
    println!("{:>5} {:>9} {:>9} {:>9} {:>9} {:>9}", "epoch", "loss", "exist", "weight", "node", "val_auprc");
    for e in &ckpt.history.epochs {
        let val = e.val_auprc.map_or("-".into(), |v| format!("{v:.4}"));
        println!("{:>5} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9}", e.epoch, e.loss, e.exist, e.weight, e.node, val);
    }
    println!("best epoch {:?}; checkpoint in {}", ckpt.history.best_epoch, cfg.artifacts().checkpoint().display());
    Ok(())
}
