//! `advregions` — adversarial region segregation, isolation and
//! neutralization pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use advregions_core::data::synth;
use advregions_core::pipeline::artifacts::{read_json, write_image_png};
use advregions_core::pipeline::{self, ExperimentConfig, Manifest, RunPaths};
use advregions_core::{run_experiment, run_matrix};

#[derive(Parser)]
#[command(name = "advregions", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for this run's artifacts.
    #[arg(long)]
    dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline: train, attack, segregate, isolate, blob,
    /// neutralize and evaluate, writing all artifacts.
    Run(StageArgs),
    /// Run several configs into subdirectories and write combined CSVs.
    Matrix {
        /// JSON list of {"name": ..., "config": {...}} entries.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dir: PathBuf,
    },
    /// Train the classifier (or reuse the cached checkpoint).
    Train(StageArgs),
    /// Generate FGSM adversarial pairs for the source-class train subset.
    Attack(StageArgs),
    /// Compute RoI/RoA maps, masks and class representatives.
    Segregate(StageArgs),
    /// Partition the image plane into the four RoI/RoA regions.
    Isolate(StageArgs),
    /// Extract the ŪV blob from the representative maps.
    Blob(StageArgs),
    /// Apply the blob defense to the contributor images, writing PNGs.
    Neutralize(StageArgs),
    /// Run the four-score protocol and the RoI/RoA similarity report.
    Evaluate(StageArgs),
    /// Print the manifest summary of a finished run.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Generate a synthetic dataset in the layout the loaders expect.
    GenData {
        /// "digits" (IDX tree under <root>/mnist) or "cells"
        /// (class folders under <root>/cells).
        #[arg(long)]
        kind: String,
        #[arg(long)]
        root: PathBuf,
        /// Training images per class (digits) or total per class (cells).
        #[arg(long, default_value_t = 1000)]
        train_per_class: usize,
        /// Test images per class; ignored for folder datasets.
        #[arg(long, default_value_t = 200)]
        test_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// How far through the pipeline a staged subcommand goes.
#[derive(PartialEq, PartialOrd)]
enum Stage {
    Train,
    Attack,
    Segregate,
    Isolate,
    Blob,
    Neutralize,
    Evaluate,
}

fn load_config(path: &PathBuf) -> anyhow::Result<ExperimentConfig> {
    Ok(ExperimentConfig::from_file(path)?)
}

/// Runs the pipeline up to (and including) `stage`, reusing the cached
/// model when the config is unchanged.
fn run_through(args: &StageArgs, stage: Stage) -> anyhow::Result<()> {
    let cfg = load_config(&args.config)?;
    std::fs::create_dir_all(&args.dir)?;
    let paths = RunPaths::new(&args.dir);

    let (train_set, test_set) = pipeline::stage_ingest(&cfg)?;
    let (model, cache_hit) = pipeline::stage_train(&cfg, &train_set, &paths)?;
    println!(
        "train: {} ({} train / {} test images)",
        if cache_hit { "cached model reused" } else { "model trained" },
        train_set.len(),
        test_set.len()
    );
    if stage == Stage::Train {
        return Ok(());
    }

    let contributors = pipeline::contributor_set(&cfg, &train_set);
    let pairs = pipeline::stage_attack(&cfg, &model, &contributors, &paths)?;
    println!("attack: {} adversarial pairs at epsilon {}", pairs.len(), cfg.attack.epsilon);
    if stage == Stage::Attack {
        return Ok(());
    }

    let seg = pipeline::stage_segregate(&cfg, &model, &pairs, &paths)?;
    println!("segregate: {} RoI/RoA mask pairs", seg.roi_masks.len());
    for w in &seg.warnings {
        eprintln!("warning: {w}");
    }
    if stage == Stage::Segregate {
        return Ok(());
    }

    let stats = pipeline::stage_isolate(&cfg, &seg, &paths)?;
    println!(
        "isolate: region fractions UV {:.3}, UV\u{0304} {:.3}, \u{016a}V {:.3}, \u{016a}V\u{0304} {:.3}",
        stats.fractions[0], stats.fractions[1], stats.fractions[2], stats.fractions[3]
    );
    if stage == Stage::Isolate {
        return Ok(());
    }

    let blob = pipeline::stage_blob(&cfg, &seg, &paths)?;
    println!("blob: {} pixels at theta {}", blob.mask.count(), cfg.theta);
    if let Some(w) = &blob.warning {
        eprintln!("warning: {w}");
    }
    if stage == Stage::Blob {
        return Ok(());
    }

    if stage == Stage::Neutralize {
        let out = args.dir.join("neutralized");
        std::fs::create_dir_all(&out)?;
        let modified = advregions_core::neutralization::neutralize_set(&contributors, &blob)?;
        for (i, img) in modified.images.iter().enumerate() {
            write_image_png(&out.join(format!("{i:05}.png")), img)?;
        }
        println!("neutralize: {} images written to {}", modified.len(), out.display());
        return Ok(());
    }

    let (scores, ssim) = pipeline::stage_evaluate(&cfg, &model, &test_set, &seg, &blob, &paths)?;
    println!(
        "evaluate: clean {:.4}  adv {:.4}  mod {:.4}  mod-adv {:.4}",
        scores.score_clean, scores.score_adv, scores.score_mod, scores.score_mod_adv
    );
    println!(
        "ssim: mean individual {:.4}  representative {:.4}  (n = {})",
        ssim.mean_individual_ssim, ssim.representative_ssim, ssim.n
    );
    Ok(())
}

fn cmd_run(args: &StageArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.config)?;
    let outcome = run_experiment(&cfg, &args.dir)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "scores: clean {:.4}  adv {:.4}  mod {:.4}  mod-adv {:.4}",
        outcome.scores.score_clean,
        outcome.scores.score_adv,
        outcome.scores.score_mod,
        outcome.scores.score_mod_adv
    );
    println!("artifacts written to {}", args.dir.display());
    Ok(())
}

fn cmd_matrix(config: &PathBuf, dir: &PathBuf) -> anyhow::Result<()> {
    #[derive(serde::Deserialize)]
    struct Entry {
        name: String,
        config: ExperimentConfig,
    }
    let entries: Vec<Entry> = read_json(config)?;
    let configs: Vec<(String, ExperimentConfig)> =
        entries.into_iter().map(|e| (e.name, e.config)).collect();
    let rows = run_matrix(&configs, dir)?;
    for row in &rows {
        println!(
            "{} [{}]: clean {:.4}  adv {:.4}  mod {:.4}  mod-adv {:.4}  ({})",
            row.dataset,
            row.direction,
            row.score_clean,
            row.score_adv,
            row.score_mod,
            row.score_mod_adv,
            row.status
        );
    }
    println!("combined tables written to {}", dir.display());
    Ok(())
}

fn cmd_report(dir: &PathBuf) -> anyhow::Result<()> {
    let paths = RunPaths::new(dir);
    let manifest: Manifest = read_json(&paths.manifest())?;
    println!(
        "{}: {} -> {}",
        manifest.config.dataset_id, manifest.config.source_class, manifest.config.target_class
    );
    println!(
        "epsilon {}  theta {}  fill {}",
        manifest.config.attack.epsilon, manifest.config.theta, manifest.config.fill_value
    );
    println!(
        "train {}  test {}  contributors {}",
        manifest.n_train, manifest.n_test, manifest.n_contributors
    );
    println!(
        "scores: clean {:.4}  adv {:.4}  mod {:.4}  mod-adv {:.4}",
        manifest.scores.score_clean,
        manifest.scores.score_adv,
        manifest.scores.score_mod,
        manifest.scores.score_mod_adv
    );
    println!(
        "ssim: mean individual {:.4}  representative {:.4}",
        manifest.ssim.mean_individual_ssim, manifest.ssim.representative_ssim
    );
    println!(
        "blob: {} pixels ({} contributors)",
        manifest.blob.pixel_count, manifest.blob.n_contributors
    );
    for w in &manifest.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

fn cmd_gen_data(
    kind: &str,
    root: &PathBuf,
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> anyhow::Result<()> {
    match kind {
        "digits" => {
            let dir = root.join("mnist");
            synth::generate_digit_idx(&dir, &[0, 1], train_per_class, test_per_class, seed)?;
            println!(
                "digit IDX dataset written to {} ({train_per_class} train / {test_per_class} test per class)",
                dir.display()
            );
        }
        "cells" => {
            let dir = root.join("cells");
            synth::generate_cell_folders(&dir, train_per_class, seed)?;
            println!(
                "cell folder dataset written to {} ({train_per_class} images per class)",
                dir.display()
            );
        }
        other => anyhow::bail!("unknown dataset kind '{other}' (expected 'digits' or 'cells')"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Matrix { config, dir } => cmd_matrix(config, dir),
        Command::Train(args) => run_through(args, Stage::Train),
        Command::Attack(args) => run_through(args, Stage::Attack),
        Command::Segregate(args) => run_through(args, Stage::Segregate),
        Command::Isolate(args) => run_through(args, Stage::Isolate),
        Command::Blob(args) => run_through(args, Stage::Blob),
        Command::Neutralize(args) => run_through(args, Stage::Neutralize),
        Command::Evaluate(args) => run_through(args, Stage::Evaluate),
        Command::Report { dir } => cmd_report(dir),
        Command::GenData {
            kind,
            root,
            train_per_class,
            test_per_class,
            seed,
        } => cmd_gen_data(kind, root, *train_per_class, *test_per_class, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
