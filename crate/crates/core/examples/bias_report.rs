//! The full command pipeline in a scratch directory, ending with the
//! popularity-bias report: per-level token amplification by popularity group
//! and per-level teacher-forced token recall.
//!
//! ```bash
//! cargo run --release --example bias_report
//! ```

use care::cli::{run_command, Command, ExperimentConfig};

fn fmt_amp(a: &[Option<f64>]) -> String {
    a.iter()
        .map(|v| v.map_or("   -".to_string(), |v| format!("{v:4.2}")))
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut cfg = ExperimentConfig { seed: 2, output_dir: dir.path().to_path_buf(), ..ExperimentConfig::default() };
    cfg.data.synth.n_users = 600;
    cfg.data.synth.noise_scale = 0.0;
    cfg.model.query_counts = "1-1-2-2".parse()?;
    cfg.train.learning_rate = 3e-3;
    cfg.train.max_epochs = 5;

    for command in [Command::Synth, Command::Tokenize, Command::Train, Command::Evaluate] {
        run_command(command, &cfg)?;
    }
    let report = run_command(Command::AnalyzeBias, &cfg)?;
    let bias = report.bias.expect("analyze-bias fills the bias section");
    println!("amplification (generated / test share), popular groups first");
    for level in &bias.levels {
        println!(
            "  level {}: {}   token recall {:.3}",
            level.level,
            fmt_amp(&level.groups.amplification),
            level.token_recall
        );
    }
    println!("  items  : {}", fmt_amp(&bias.items.amplification));
    println!("last-level head-group amplification: {:?}", bias.last_level_head_amplification());
    Ok(())
}
