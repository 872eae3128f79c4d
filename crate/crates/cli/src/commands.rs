//! Command implementations. Each returns a summary value so tests can
//! inspect results without parsing console output.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use graphdiff::config::RunConfig;
use graphdiff::diffusion::{sample_trajectory, SnapshotRecord, Trajectory};
use graphdiff::fresnel::{greedy_baseline, ineffective_link_count, random_baseline, reward};
use graphdiff::graph::{Condition, Point, Violation};
use graphdiff::nn::{load_checkpoint, save_checkpoint, DenoiserCheckpoint};
use graphdiff::rng::{derive_seed, seeded};
use graphdiff::trainer::{evaluate, std_dev, EpochMetrics, MetricsWriter, Trainer};
use log::{info, warn};

use crate::args::{BaselineArgs, Command, EvalArgs, RunArgs, SampleArgs, TrainArgs, ValidateArgs};
use crate::render::{scene_svg, training_curve_svg};
use crate::{Cli, ConfigError};

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "denoiser.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CURVE_FILE: &str = "training_curve.svg";
pub const FINAL_GRAPH_FILE: &str = "final_graph.toml";
pub const EVAL_REPORT_FILE: &str = "eval_report.txt";
pub const BASELINE_REPORT_FILE: &str = "baselines.txt";

const STREAM_SAMPLE: u64 = 6;
const STREAM_BASELINE_TARGETS: u64 = 7;

/// What a command produced.
#[derive(Debug)]
pub enum Outcome {
    Trained(TrainSummary),
    Sampled(SampleSummary),
    Evaluated(EvalSummary),
    Baselines(BaselineSummary),
    Validated,
}

#[derive(Debug)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub metrics: Vec<EpochMetrics>,
}

#[derive(Debug)]
pub struct SampleSummary {
    pub out_dir: PathBuf,
    pub trajectory: Trajectory,
    pub scene_files: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub targets: usize,
    pub trained_mean: f64,
    pub greedy_mean: f64,
    pub random_mean: f64,
    pub mean_ineffective_links: f64,
    pub report: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSummary {
    pub greedy: (f64, f64),
    pub random: (f64, f64),
    pub report: String,
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Train(a) => train(&a).map(Outcome::Trained),
        Command::Sample(a) => sample(&a).map(Outcome::Sampled),
        Command::Eval(a) => eval(&a).map(Outcome::Evaluated),
        Command::Baselines(a) => baselines(&a).map(Outcome::Baselines),
        Command::ValidateConfig(a) => validate_config(&a).map(|()| Outcome::Validated),
    }
}

fn config_error(source: &Path, violations: Vec<Violation>) -> ConfigError {
    ConfigError {
        source_name: source.display().to_string(),
        violations,
    }
}

/// Reads a config file, mapping parse failures to configuration errors.
fn read_config(path: &Path) -> Result<RunConfig> {
    match RunConfig::load(path) {
        Ok(c) => Ok(c),
        Err(graphdiff::Error::Format(msg)) => {
            Err(config_error(path, vec![Violation::new("unparsable_config", msg)]).into())
        }
        Err(e) => Err(e.into()),
    }
}

/// Config file first, then command-line overrides, then validation.
fn resolve_config(run: &RunArgs, fallback: Option<&Path>) -> Result<RunConfig> {
    let source = run
        .config
        .clone()
        .or_else(|| fallback.map(Path::to_path_buf).filter(|p| p.is_file()));
    let mut cfg = match &source {
        Some(path) => {
            info!("reading config {}", path.display());
            read_config(path)?
        }
        None => {
            info!("no config given, using the reference configuration");
            RunConfig::reference()
        }
    };
    if let Some(seed) = run.seed {
        info!("override seed: {} -> {seed}", cfg.seed);
        cfg.seed = seed;
    }
    if let Some(out) = &run.out {
        info!(
            "override output_dir: {} -> {}",
            cfg.output_dir.display(),
            out.display()
        );
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn check_config(cfg: &RunConfig, name: &str) -> Result<()> {
    cfg.validate()
        .map_err(|v| config_error(Path::new(name), v).into())
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_resolved_config(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let text = cfg.to_resolved_toml()?;
    write_file(&dir.join(CONFIG_FILE), &text)?;
    Ok(text)
}

pub fn train(args: &TrainArgs) -> Result<TrainSummary> {
    let mut cfg = resolve_config(&args.run, None)?;
    if let Some(epochs) = args.epochs {
        info!(
            "override training.epochs: {} -> {epochs}",
            cfg.training.epochs
        );
        cfg.training.epochs = epochs;
    }
    check_config(&cfg, "train")?;
    let dir = prepare_out_dir(&cfg)?;
    let resolved = write_resolved_config(&cfg, &dir)?;
    println!("{resolved}");

    let net = cfg.init_network()?;
    let ckpt = DenoiserCheckpoint::new(net, cfg.training.learning_rate, vec![cfg.seed]);
    let mut trainer = Trainer::new(ckpt, cfg.train_config(), cfg.scenario(), cfg.schedule()?)?;
    let metrics_path = dir.join(METRICS_FILE);
    let file = fs::File::create(&metrics_path)
        .with_context(|| format!("creating {}", metrics_path.display()))?;
    let mut writer = MetricsWriter::new(BufWriter::new(file))?;
    let epochs = cfg.training.epochs;
    let metrics = trainer.run(|m| {
        writer.append(m).map_err(|e| graphdiff::Error::Io {
            path: metrics_path.clone(),
            source: e,
        })?;
        info!(
            "epoch {:>4}/{epochs}: val {:.2} greedy {:.2} random {:.2} grad {:.3}",
            m.epoch + 1,
            m.val_mean,
            m.greedy_mean,
            m.random_mean,
            m.grad_norm
        );
        Ok(())
    })?;
    use std::io::Write;
    writer
        .into_inner()
        .flush()
        .with_context(|| format!("writing {}", metrics_path.display()))?;
    save_checkpoint(&trainer.checkpoint, dir.join(CHECKPOINT_FILE))?;
    write_file(&dir.join(CURVE_FILE), &training_curve_svg(&metrics))?;
    if let Some(last) = metrics.last() {
        println!(
            "epoch {}: trained {:.2}  greedy {:.2}  random {:.2}",
            last.epoch, last.val_mean, last.greedy_mean, last.random_mean
        );
    }
    println!("artifacts written to {}", dir.display());
    Ok(TrainSummary {
        out_dir: dir,
        metrics,
    })
}

fn checkpoint_dir(path: &Path) -> Option<PathBuf> {
    path.parent().map(|p| p.join(CONFIG_FILE))
}

/// Loads a checkpoint and the config it must agree with.
fn load_trained(run: &RunArgs, checkpoint: &Path) -> Result<(RunConfig, DenoiserCheckpoint)> {
    let cfg = resolve_config(run, checkpoint_dir(checkpoint).as_deref())?;
    check_config(&cfg, "run")?;
    let ckpt = load_checkpoint(checkpoint)?;
    if ckpt.net.architecture() != &cfg.architecture() {
        return Err(graphdiff::Error::Domain(format!(
            "checkpoint architecture {:?} does not match the configuration {:?}",
            ckpt.net.architecture(),
            cfg.architecture()
        ))
        .into());
    }
    Ok((cfg, ckpt))
}

pub fn sample(args: &SampleArgs) -> Result<SampleSummary> {
    let [x, y] = args.target[..] else {
        bail!(graphdiff::Error::Domain(
            "--target takes exactly two values".into()
        ));
    };
    let (cfg, ckpt) = load_trained(&args.run, &args.checkpoint)?;
    let scenario = cfg.scenario();
    let cond = Condition::at(x, y);
    if !scenario.area.contains(Point::new(x, y)) {
        return Err(graphdiff::Error::Domain(format!(
            "target ({x}, {y}) lies outside the scenario area"
        ))
        .into());
    }
    let sched = cfg.schedule()?;
    for &k in &args.steps {
        if k > sched.steps() {
            return Err(graphdiff::Error::Domain(format!(
                "snapshot step {k} exceeds the {} diffusion steps",
                sched.steps()
            ))
            .into());
        }
    }
    let dir = if args.run.out.is_some() {
        cfg.output_dir.clone()
    } else {
        cfg.output_dir.join("samples")
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut cfg_copy = cfg.clone();
    cfg_copy.output_dir = dir.clone();
    write_resolved_config(&cfg_copy, &dir)?;

    let mut rng = seeded(derive_seed(cfg.seed, STREAM_SAMPLE, 0));
    let traj = sample_trajectory(&ckpt.net, &cond, &scenario, &sched, &mut rng)?;
    let mut scene_files = Vec::with_capacity(args.steps.len());
    for &k in &args.steps {
        let g = traj.after_steps(k).expect("step checked above");
        let ineffective = ineffective_link_count(g, &scenario, &cond)?;
        let r = reward(g, &scenario, &cond)?;
        let title = format!(
            "step {k}: {} active, {ineffective} ineffective, reward {:.2}",
            g.active_count(),
            r.total
        );
        let path = dir.join(format!("scene_step_{k:02}.svg"));
        write_file(&path, &scene_svg(g, &scenario, &cond, &title)?)?;
        println!("{title}");
        scene_files.push(path);
    }
    let record = SnapshotRecord::new(sched.steps(), traj.final_graph(), &scenario, &cond);
    let text = record.to_text()?;
    write_file(&dir.join(FINAL_GRAPH_FILE), &text)?;
    println!("final graph:\n{}", traj.final_graph());
    Ok(SampleSummary {
        out_dir: dir,
        trajectory: traj,
        scene_files,
    })
}

pub fn eval(args: &EvalArgs) -> Result<EvalSummary> {
    let (cfg, ckpt) = load_trained(&args.run, &args.checkpoint)?;
    let tc = cfg.train_config();
    let ev = evaluate(
        &ckpt.net,
        &tc.validation,
        &cfg.scenario(),
        &cfg.schedule()?,
        tc.eval_seed,
    )?;
    let report = format!(
        "targets: {}\ntrained: {:.4} +- {:.4}\ngreedy: {:.4} +- {:.4}\nrandom: {:.4} +- {:.4}\nmean active links: {:.4}\nmean ineffective links: {:.4}\n",
        tc.validation.len(),
        ev.mean_reward,
        std_dev(&ev.rewards),
        ev.greedy_mean,
        std_dev(&ev.greedy_rewards),
        ev.random_mean,
        std_dev(&ev.random_rewards),
        ev.mean_active_links,
        ev.mean_ineffective_links
    );
    print!("{report}");
    if args.run.out.is_some() {
        let dir = prepare_out_dir(&cfg)?;
        write_resolved_config(&cfg, &dir)?;
        write_file(&dir.join(EVAL_REPORT_FILE), &report)?;
    }
    Ok(EvalSummary {
        targets: tc.validation.len(),
        trained_mean: ev.mean_reward,
        greedy_mean: ev.greedy_mean,
        random_mean: ev.random_mean,
        mean_ineffective_links: ev.mean_ineffective_links,
        report,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub fn baselines(args: &BaselineArgs) -> Result<BaselineSummary> {
    let cfg = resolve_config(&args.run, None)?;
    check_config(&cfg, "baselines")?;
    if args.targets == 0 {
        warn!("no targets requested");
    }
    let scenario = cfg.scenario();
    let m = scenario.num_edges();
    let eval_seed = cfg.training.eval_seed;
    let mut targets_rng = seeded(derive_seed(eval_seed, STREAM_BASELINE_TARGETS, 0));
    let mut greedy = Vec::with_capacity(args.targets);
    let mut random = Vec::with_capacity(args.targets);
    for i in 0..args.targets {
        let cond = Condition {
            target: scenario.area.sample(&mut targets_rng),
        };
        greedy.push(reward(&greedy_baseline(&scenario, &cond)?, &scenario, &cond)?.total);
        let mut rng = seeded(derive_seed(
            eval_seed,
            STREAM_BASELINE_TARGETS,
            1 + i as u64,
        ));
        random.push(reward(&random_baseline(&mut rng, m), &scenario, &cond)?.total);
    }
    let summary = BaselineSummary {
        greedy: (mean(&greedy), std_dev(&greedy)),
        random: (mean(&random), std_dev(&random)),
        report: String::new(),
    };
    let report = format!(
        "targets: {}\ngreedy: {:.4} +- {:.4}\nrandom: {:.4} +- {:.4}\n",
        args.targets, summary.greedy.0, summary.greedy.1, summary.random.0, summary.random.1
    );
    print!("{report}");
    let dir = prepare_out_dir(&cfg)?;
    write_resolved_config(&cfg, &dir)?;
    write_file(&dir.join(BASELINE_REPORT_FILE), &report)?;
    Ok(BaselineSummary { report, ..summary })
}

pub fn validate_config(args: &ValidateArgs) -> Result<()> {
    let cfg = read_config(&args.config)?;
    check_config(&cfg, &args.config.display().to_string())?;
    println!("{}: ok", args.config.display());
    Ok(())
}
