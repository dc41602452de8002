//! The `pep` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{equivariance_sweep, evaluate, evaluate_baseline, EvalReport, StabilityCurve};
use crate::model::{Model, ModelParams};
use crate::scene::{generate_synthetic, load_scenes, save_scenes, Dataset};
use crate::train::{write_atomic, Trainer};

fn config_help() -> String {
    let mut out = String::from(
        "Configuration keys (TOML file via --config, env var PEP_<SECTION>__<KEY>, or --set key=value):\n",
    );
    for (k, v) in RunConfig::documented_keys() {
        out.push_str(&format!("  {k} = {v}\n"));
    }
    out.push_str("\nExit codes: 0 success, 1 validation, 2 I/O or checkpoint, 3 non-finite values, 4 threshold failure.");
    out
}

#[derive(Debug, Parser)]
#[command(name = "pep", version, about = "SE(2)-equivariant joint prediction and planning", after_help = config_help())]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Override a config key, e.g. `--set train.lr0=0.001`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene file.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint plus history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a scene file.
    Eval(EvalArgs),
    /// Rotation/translation output-stability sweep.
    Equivariance(EquivarianceArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator seed (overrides data.seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of scenes (overrides data.generator.scenes).
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Output scene file (default: data.train_path).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training scene file (default: data.train_path).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory for checkpoint.json, history.csv and config.toml.
    #[arg(long, default_value = "run")]
    pub out_dir: PathBuf,
    /// Total epochs (overrides train.epochs).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Initialization and shuffle seed (overrides train.seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Scene file (default: data.test_path).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Per-scene CSV report.
    #[arg(long, default_value = "report.csv")]
    pub out: PathBuf,
    /// Evaluate the constant-velocity baseline instead of a checkpoint.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Args)]
pub struct EquivarianceArgs {
    /// Checkpoint to test; random weights from the config when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Scene file (default: data.test_path).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of scenes from the file to sweep.
    #[arg(long, default_value_t = 1)]
    pub scenes: usize,
    /// Stability curve CSV.
    #[arg(long, default_value = "stability.csv")]
    pub out: PathBuf,
    /// Debug switch: skip the mean subtraction at initialization.
    #[arg(long)]
    pub break_equivariance: bool,
}

/// Defaults, then the config file, then environment, then `--set`.
pub fn resolve_config<I, K, V>(cli: &Cli, env: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.apply_env(env)?;
    for item in &cli.overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{item}`")))?;
        config.set(k.trim(), v.trim())?;
    }
    Ok(config)
}

/// Runs the parsed command with the process environment, passing each
/// progress or summary line to `log`.
pub fn run(cli: &Cli, log: &mut dyn FnMut(&str)) -> Result<()> {
    if let Some(n) = cli.threads {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let config = resolve_config(cli, std::env::vars())?;
    dispatch(cli, config, log)
}

pub fn dispatch(cli: &Cli, mut config: RunConfig, log: &mut dyn FnMut(&str)) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => {
            if let Some(s) = a.seed {
                config.data.seed = s;
            }
            if let Some(n) = a.scenes {
                config.data.generator.scenes = n;
            }
            config.validate()?;
            let out = a
                .out
                .clone()
                .unwrap_or_else(|| config.data.train_path.clone());
            cmd_generate(&config, &out, log)
        }
        Command::Train(a) => {
            if let Some(e) = a.epochs {
                config.train.epochs = e;
            }
            if let Some(s) = a.seed {
                config.train.seed = s;
            }
            config.validate()?;
            let data = a
                .data
                .clone()
                .unwrap_or_else(|| config.data.train_path.clone());
            cmd_train(
                &config,
                &data,
                &a.out_dir,
                a.resume.as_deref(),
                a.epochs,
                log,
            )
        }
        Command::Eval(a) => {
            config.validate()?;
            let data = a
                .data
                .clone()
                .unwrap_or_else(|| config.data.test_path.clone());
            if a.baseline {
                cmd_eval_baseline(&config, &data, &a.out, log)
            } else {
                let ckpt = a
                    .checkpoint
                    .as_deref()
                    .ok_or_else(|| Error::Config("eval needs --checkpoint or --baseline".into()))?;
                cmd_eval(&config, cli.config.is_some(), ckpt, &data, &a.out, log)
            }
        }
        Command::Equivariance(a) => {
            config.validate()?;
            let data = a
                .data
                .clone()
                .unwrap_or_else(|| config.data.test_path.clone());
            cmd_equivariance(&config, cli.config.is_some(), a, &data, log)
        }
    }
}

pub fn cmd_generate(config: &RunConfig, out: &Path, log: &mut dyn FnMut(&str)) -> Result<()> {
    let data = generate_synthetic(&config.data.generator, config.data.seed)?;
    save_scenes(&data, out)?;
    log(&format!(
        "wrote {} scenes (seed {}) to {}",
        data.len(),
        config.data.seed,
        out.display()
    ));
    Ok(())
}

fn load_data(config: &RunConfig, path: &Path) -> Result<Dataset> {
    load_scenes(path, config.data.generator.horizon())
}

pub fn cmd_train(
    config: &RunConfig,
    data_path: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
    epochs: Option<usize>,
    log: &mut dyn FnMut(&str),
) -> Result<()> {
    let data = load_data(config, data_path)?;
    let mut trainer = match resume {
        Some(path) => {
            let mut t = Trainer::load(path)?;
            t.config.epochs = epochs.unwrap_or(config.train.epochs);
            t
        }
        None => Trainer::new(config.model, config.train.clone(), config.score_mode)?,
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_atomic(
        &out_dir.join("config.toml"),
        config.to_toml_string().as_bytes(),
    )?;
    let ckpt = out_dir.join("checkpoint.json");
    let history = out_dir.join("history.csv");
    let save = |t: &Trainer| -> Result<()> {
        t.save(&ckpt)?;
        write_atomic(&history, t.history_csv().as_bytes())
    };
    save(&trainer)?;
    trainer.fit(&data, |t, r| {
        log(&format!(
            "epoch {} lr={:.3e} loss={:.4} plan={:.4} wta={:.4} pred={:.4} l2_avg={:.4} selection_accuracy={:.3}",
            r.epoch, r.lr, r.loss, r.plan, r.wta, r.pred, r.l2_avg, r.selection_accuracy
        ));
        save(t)
    })?;
    save(&trainer)?;
    log(&format!(
        "trained {} epochs on {} scenes; checkpoint {}",
        trainer.epoch,
        data.len(),
        ckpt.display()
    ));
    Ok(())
}

fn load_model(config: &RunConfig, explicit_config: bool, path: &Path) -> Result<Trainer> {
    let t = Trainer::load(path)?;
    if explicit_config && config.model != *t.model.config() {
        return Err(Error::Checkpoint(format!(
            "{} was trained with model {:?}, the config asks for {:?}",
            path.display(),
            t.model.config(),
            config.model
        )));
    }
    Ok(t)
}

fn write_report(report: &EvalReport, out: &Path, log: &mut dyn FnMut(&str)) -> Result<()> {
    write_atomic(out, report.to_csv().as_bytes())?;
    log(&report.summary());
    log(&format!("report written to {}", out.display()));
    Ok(())
}

pub fn cmd_eval(
    config: &RunConfig,
    explicit_config: bool,
    checkpoint: &Path,
    data_path: &Path,
    out: &Path,
    log: &mut dyn FnMut(&str),
) -> Result<()> {
    let t = load_model(config, explicit_config, checkpoint)?;
    let data = load_data(config, data_path)?;
    let report = evaluate(&t.model, &data, t.score_mode, &config.eval)?;
    write_report(&report, out, log)
}

pub fn cmd_eval_baseline(
    config: &RunConfig,
    data_path: &Path,
    out: &Path,
    log: &mut dyn FnMut(&str),
) -> Result<()> {
    let data = load_data(config, data_path)?;
    write_report(&evaluate_baseline(&data, &config.eval)?, out, log)
}

pub fn cmd_equivariance(
    config: &RunConfig,
    explicit_config: bool,
    args: &EquivarianceArgs,
    data_path: &Path,
    log: &mut dyn FnMut(&str),
) -> Result<()> {
    let (mut model, score_mode) = match &args.checkpoint {
        Some(path) => {
            let t = load_model(config, explicit_config, path)?;
            (t.model, t.score_mode)
        }
        None => (
            Model::new(
                ModelParams::init(config.model, config.train.seed)?,
                config.train.model_options(),
            ),
            config.score_mode,
        ),
    };
    if args.break_equivariance {
        model.options.equivariant_init = false;
    }
    let data = load_data(config, data_path)?;
    let scenes: Vec<_> = data.scenes.into_iter().take(args.scenes).collect();
    let curve: StabilityCurve = equivariance_sweep(&model, &scenes, score_mode, &config.eval)?;
    write_atomic(&args.out, curve.to_csv().as_bytes())?;
    let lines = [
        format!(
            "per-mode deviation: max {:.3e} m, mean {:.3e} m over {} angles x {} transforms",
            curve.max_mode_deviation(),
            curve.mean_mode_deviation(),
            curve.rows.len(),
            curve.translations.len() + 1
        ),
        format!(
            "plan deviation: max {:.3e} m; selection flips: {}",
            curve.max_plan_deviation(),
            curve.selection_flips()
        ),
        format!("curve written to {}", args.out.display()),
    ];
    if curve.max_mode_deviation() > config.eval.tolerance {
        return Err(Error::Threshold(format!(
            "per-mode deviation {:.3e} m exceeds tolerance {:.1e} m\n{}",
            curve.max_mode_deviation(),
            config.eval.tolerance,
            lines.join("\n")
        )));
    }
    for line in &lines {
        log(line);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_lists_every_config_key() {
        let help = Cli::command().render_long_help().to_string();
        for (k, v) in RunConfig::documented_keys() {
            assert!(help.contains(&format!("{k} = {v}")), "{k}");
        }
    }

    #[test]
    fn precedence_is_file_then_env_then_set() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[train]\nepochs = 5\nlr0 = 0.1\nalpha = 0.3\n").unwrap();
        let cli = Cli::parse_from([
            "pep",
            "--config",
            path.to_str().unwrap(),
            "--set",
            "train.alpha=0.7",
            "generate",
        ]);
        let c = resolve_config(
            &cli,
            [("PEP_TRAIN__LR0", "0.2"), ("PEP_TRAIN__ALPHA", "0.5")],
        )
        .unwrap();
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.train.lr0, 0.2);
        assert_eq!(c.train.alpha, 0.7);
    }

    #[test]
    fn malformed_set_is_a_config_error() {
        let cli = Cli::parse_from(["pep", "--set", "train.alpha", "generate"]);
        let err = resolve_config(&cli, Vec::<(String, String)>::new()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
