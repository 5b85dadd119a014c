mod config;
mod manifest;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use senti_core::env::{read_cot, read_samples, write_cot, write_samples};
use senti_core::grpo::{read_reward_curve, write_reward_curve};
use senti_core::metrics::{evaluate, REPORT_CSV_HEADER};
use senti_core::pipeline::{generate_data, run_arm, run_sft};
use senti_core::{Arm, ExperimentConfig, Sample};

use manifest::RunManifest;

const SAMPLES: &str = "samples.jsonl";
const CANDIDATES: &str = "cot_candidates.jsonl";
const FILTERED: &str = "cot_filtered.jsonl";
const TEST: &str = "test.jsonl";
const SHIFT: &str = "shift.jsonl";
const DATA_MANIFEST: &str = "manifest.json";

#[derive(Parser)]
#[command(
    name = "senti",
    version,
    about = "Structured multimodal sentiment policy: data, SFT, GRPO, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config, or a run manifest whose config snapshot is reused.
    /// Defaults to the data directory's manifest when one exists.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Unconstrained decoding instead of the grammar mask.
    #[arg(long)]
    free_decoding: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
    Shift,
}

impl Split {
    fn file(self) -> &'static str {
        match self {
            Split::Train => SAMPLES,
            Split::Test => TEST,
            Split::Shift => SHIFT,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Shift => "shift",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate train, test and shifted splits plus teacher chains of thought.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised cold start from a fresh initialization.
    Sft {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Group-relative policy optimization from an SFT checkpoint.
    Grpo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "full")]
        arm: Arm,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one split; prints the report and appends a CSV row.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Directory holding `metrics.csv`; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Overlay smoothed mean-reward curves from reward CSVs into one SVG.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, default_value = "reward_curves.svg")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, out } => gen_data(&common, &config::output_path(&out)),
        Command::Sft { common, data, out } => sft(&common, &data, &config::output_path(&out)),
        Command::Grpo {
            common,
            data,
            checkpoint,
            arm,
            out,
        } => grpo(&common, &data, &checkpoint, arm, &config::output_path(&out)),
        Command::Eval {
            common,
            data,
            checkpoint,
            split,
            out,
        } => {
            let out = match out {
                Some(o) => config::output_path(&o),
                None => checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            eval(&common, &data, &checkpoint, split, &out)
        }
        Command::Plot { csv, out } => plot_cmd(&csv, &config::output_path(&out)),
    }
}

/// Config for a stage that consumes a data directory: an explicit `--config`
/// wins, then the data directory's manifest, then the defaults.
fn stage_config(common: &Common, data: Option<&Path>) -> Result<ExperimentConfig> {
    let fallback = data.map(|d| d.join(DATA_MANIFEST)).filter(|p| p.is_file());
    let path = common.config.clone().or(fallback);
    config::resolve(config::load(path.as_deref())?, common.seed, common.free_decoding)
}

fn require_dir(dir: &Path, what: &str) -> Result<()> {
    if !dir.is_dir() {
        bail!("{what} directory {} does not exist", dir.display());
    }
    Ok(())
}

fn load_split(data: &Path, file: &str, cfg: &ExperimentConfig) -> Result<Vec<Sample>> {
    let path = data.join(file);
    read_samples(&path, &cfg.env.profile).with_context(|| format!("reading {}", path.display()))
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))
}

fn gen_data(common: &Common, out: &Path) -> Result<()> {
    let cfg = stage_config(common, None)?;
    let bundle = generate_data(&cfg)?;
    create_out(out)?;
    write_samples(&out.join(SAMPLES), &bundle.train)?;
    write_cot(&out.join(CANDIDATES), &bundle.candidates)?;
    write_cot(&out.join(FILTERED), &bundle.filtered)?;
    write_samples(&out.join(TEST), &bundle.test)?;
    write_samples(&out.join(SHIFT), &bundle.shift)?;
    let mut m = RunManifest::new("gen-data", &cfg)?;
    if let Some(c) = &common.config {
        m.add_input(c)?;
    }
    m.add_artifacts(out, &[SAMPLES, CANDIDATES, FILTERED, TEST, SHIFT].map(String::from))?;
    m.write(&out.join(DATA_MANIFEST))?;
    println!(
        "wrote {} train, {} test, {} shift samples; {} of {} teacher chains kept -> {}",
        bundle.train.len(),
        bundle.test.len(),
        bundle.shift.len(),
        bundle.filtered.len(),
        bundle.candidates.len(),
        out.display()
    );
    Ok(())
}

fn sft(common: &Common, data: &Path, out: &Path) -> Result<()> {
    require_dir(data, "data")?;
    let cfg = stage_config(common, Some(data))?;
    let model = cfg.build_model()?;
    let train = load_split(data, SAMPLES, &cfg)?;
    let cot_path = data.join(FILTERED);
    let filtered = read_cot(&cot_path).with_context(|| format!("reading {}", cot_path.display()))?;
    let bundle = senti_core::pipeline::DataBundle {
        train,
        candidates: Vec::new(),
        filtered,
        test: Vec::new(),
        shift: Vec::new(),
    };
    let init = model.init_params(cfg.init_seed());
    let (params, curve) = run_sft(&cfg, &model, &init, &bundle)?;

    create_out(out)?;
    model.save_checkpoint(&params, &out.join("sft.ckpt"))?;
    let mut csv = String::from("epoch,mean_loss\n");
    for (i, l) in curve.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    std::fs::write(out.join("sft_loss.csv"), csv)?;
    let mut m = RunManifest::new("sft", &cfg)?;
    m.add_input(&data.join(SAMPLES))?;
    m.add_input(&cot_path)?;
    m.add_artifacts(out, &["sft.ckpt".to_string(), "sft_loss.csv".to_string()])?;
    m.write(&out.join("sft_manifest.json"))?;
    println!(
        "sft: {} examples, {} epochs, loss {:.4} -> {:.4}; wrote {}",
        bundle.filtered.len(),
        curve.len(),
        curve.first().copied().unwrap_or(f64::NAN),
        curve.last().copied().unwrap_or(f64::NAN),
        out.join("sft.ckpt").display()
    );
    Ok(())
}

fn grpo(common: &Common, data: &Path, checkpoint: &Path, arm: Arm, out: &Path) -> Result<()> {
    require_dir(data, "data")?;
    let cfg = stage_config(common, Some(data))?;
    let model = cfg.build_model()?;
    let sft_params = model
        .load_checkpoint(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let train = load_split(data, SAMPLES, &cfg)?;
    let bundle = senti_core::pipeline::DataBundle {
        train,
        candidates: Vec::new(),
        filtered: Vec::new(),
        test: Vec::new(),
        shift: Vec::new(),
    };
    let outcome = run_arm(&cfg, &model, &sft_params, &bundle, arm)?;

    create_out(out)?;
    let ckpt = format!("grpo_{arm}.ckpt");
    let curve = format!("reward_{arm}.csv");
    model.save_checkpoint(&outcome.params, &out.join(&ckpt))?;
    write_reward_curve(&out.join(&curve), &outcome.curve)?;
    let mut m = RunManifest::new(&format!("grpo-{arm}"), &cfg)?;
    m.config.grpo = arm.apply(&cfg.grpo);
    m.add_input(checkpoint)?;
    m.add_input(&data.join(SAMPLES))?;
    m.add_artifacts(out, &[ckpt.clone(), curve])?;
    m.write(&out.join(format!("grpo_{arm}_manifest.json")))?;
    let s = &outcome.stats;
    println!(
        "grpo[{arm}]: {} steps, {} groups ({} hard, {} hinted), pool {}; wrote {}",
        s.steps,
        s.groups,
        s.hard_groups,
        s.hinted_groups,
        s.pool_size,
        out.join(ckpt).display()
    );
    Ok(())
}

fn eval(common: &Common, data: &Path, checkpoint: &Path, split: Split, out: &Path) -> Result<()> {
    require_dir(data, "data")?;
    let cfg = stage_config(common, Some(data))?;
    let model = cfg.build_model()?;
    let params = model
        .load_checkpoint(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let samples = load_split(data, split.file(), &cfg)?;
    let report = evaluate(&model, &params, &samples)?;
    let stem = checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let run_id = format!("{stem}:{}", split.name());

    print!("run_id={run_id}\n{}", report.to_kv());
    create_out(out)?;
    let csv = out.join("metrics.csv");
    let mut text = if csv.is_file() {
        std::fs::read_to_string(&csv)?
    } else {
        format!("{REPORT_CSV_HEADER}\n")
    };
    if text.lines().next() != Some(REPORT_CSV_HEADER) {
        bail!("{} exists with an unexpected header", csv.display());
    }
    text.push_str(&report.to_csv_row(&run_id));
    text.push('\n');
    std::fs::write(&csv, text).with_context(|| format!("writing {}", csv.display()))
}

fn plot_cmd(csvs: &[PathBuf], out: &Path) -> Result<()> {
    let mut series = Vec::with_capacity(csvs.len());
    for path in csvs {
        let rows = read_reward_curve(path).with_context(|| format!("reading {}", path.display()))?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        series.push((plot::label_from_stem(&stem), rows));
    }
    let svg = plot::render_svg(&series);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_out(parent)?;
    }
    std::fs::write(out, svg).with_context(|| format!("writing {}", out.display()))?;
    println!("plotted {} curve(s) -> {}", series.len(), out.display());
    Ok(())
}
