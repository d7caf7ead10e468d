//! `safe-gain` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::agent::{evaluate, load_checkpoint, save_checkpoint, train, Checkpoint};
use crate::certification::AdmissibleLibrary;
use crate::controller::GainVector;
use crate::error::{Error, Result};
use crate::harness::audit::audit_directory;
use crate::harness::config::{load_config, RunConfig};
use crate::harness::csv_io::{write_episode_csv, write_training_csv};
use crate::harness::episode::{run_fixed_gain_episode, GainTable};

/// Environment variable overriding the configured output directory.
pub const OUTPUT_ENV: &str = "SAFE_GAIN_OUT";

#[derive(Parser, Debug)]
#[command(name = "safe-gain", version, about = "Certified gain library and shielded DQN gain scheduling")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set agent.episodes=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (takes precedence over the environment and config).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the gain library and print one line per certified entry.
    Certify,
    /// Fixed-gain episode written as CSV.
    Rollout {
        #[arg(long, required_unless_present = "gain_override")]
        gain_index: Option<usize>,
        /// Fourteen comma-separated gains used instead of a library entry.
        #[arg(long, value_delimiter = ',', conflicts_with = "gain_index")]
        gain_override: Option<Vec<f64>>,
        /// CSV path; `<out>/rollout_<i>.csv` by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one or more seeds; each gets a checkpoint and training CSV.
    Train {
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Comma-separated seeds, trained in parallel.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Greedy shielded rollout of a checkpoint written as CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV path; `<out>/eval_seed_<s>.csv` by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the CSV bundle consumed by the plotting scripts.
    ExportFiguresData {
        /// Checkpoint to roll out; the mid library gain is used otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Training CSV to include in the bundle.
        #[arg(long)]
        training: Option<PathBuf>,
    },
    /// Print the resolved configuration as TOML.
    Config,
    /// Shield, dwell and V-consistency audit of every episode CSV in a directory.
    Audit {
        /// Directory to scan; the output directory by default.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

/// Parses `argv` (program name first), runs, and returns the exit code:
/// 0 on success, 2 on usage errors, 1 on any other failure.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    for assignment in &common.overrides {
        cfg.apply_override(assignment)?;
    }
    if let Some(dir) = std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()) {
        cfg.output_dir = PathBuf::from(dir);
    }
    if let Some(dir) = &common.out_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    match cli.command {
        Command::Certify => certify_cmd(&cfg, out),
        Command::Rollout {
            gain_index,
            gain_override,
            out: path,
        } => rollout_cmd(&cfg, gain_index, gain_override, path, out),
        Command::Train { seed, seeds } => {
            let seeds = seeds.unwrap_or_else(|| vec![seed.unwrap_or(cfg.seed)]);
            train_cmd(&cfg, &seeds, out)
        }
        Command::Eval { checkpoint, out: path } => eval_cmd(&cfg, &checkpoint, path, out),
        Command::ExportFiguresData { checkpoint, training } => {
            export_cmd(&cfg, checkpoint.as_deref(), training.as_deref(), out)
        }
        Command::Config => Ok(out.write_all(cfg.to_toml_string().as_bytes())?),
        Command::Audit { dir } => audit_cmd(&cfg, dir, out),
    }
}

pub fn library_table(library: &AdmissibleLibrary) -> String {
    let mut s = String::new();
    for (i, e) in library.entries.iter().enumerate() {
        let l = e.certificate.lyapunov.as_ref().expect("library entries are certified");
        s.push_str(&format!(
            "{i:>3}  lambda={:.4}  mu={:.4}  margin={:.6}  rho_star={:.6e}  residual={:.2e}  HURWITZ\n",
            e.lambda, e.mu, e.certificate.stability_margin, l.level.rho_star, l.residual
        ));
    }
    s
}

fn certify_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let library = cfg.build_library()?;
    out.write_all(library_table(&library).as_bytes())?;
    for r in &library.rejected {
        eprintln!(
            "rejected lambda={:.4} mu={:.4} margin={:.6}",
            r.lambda, r.mu, r.stability_margin
        );
    }
    eprintln!(
        "{} of {} candidates certified; r_bar={:.6e}; rho_adm={:.6e}",
        library.len(),
        cfg.n_trans * cfg.n_yaw,
        library.r_bar,
        cfg.resolve_rho_adm(&library)?
    );
    Ok(())
}

fn rollout_cmd(
    cfg: &RunConfig,
    gain_index: Option<usize>,
    gain_override: Option<Vec<f64>>,
    path: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<()> {
    let library = cfg.build_library()?;
    let (table, index, default_name) = match gain_override {
        Some(k) if k.len() != 14 => {
            return Err(Error::validation(
                "--gain-override",
                format!("needs 14 comma-separated gains, got {}", k.len()),
            ))
        }
        Some(k) => (
            GainTable::override_gain(GainVector::from_slice(&k), cfg.r_bar())?,
            0,
            "rollout_override.csv".to_string(),
        ),
        None => {
            let i = gain_index.expect("clap requires one of the two");
            library.get(i)?;
            (GainTable::from_library(&library), i, format!("rollout_{i}.csv"))
        }
    };
    let log = run_fixed_gain_episode(&cfg.env(), &table, index, cfg.seed)?;
    let path = path.unwrap_or_else(|| cfg.output_dir.join(default_name));
    ensure_parent(&path)?;
    write_episode_csv(&log, &path)?;
    writeln!(
        out,
        "{}  rows={}  return={:.6e}  termination={}",
        path.display(),
        log.rows.len(),
        log.episode_return,
        log.termination.name()
    )?;
    Ok(())
}

fn train_cmd(cfg: &RunConfig, seeds: &[u64], out: &mut dyn Write) -> Result<()> {
    let library = cfg.build_library()?;
    let table = GainTable::from_library(&library);
    let env = cfg.env();
    let hash = cfg.hash();
    let results: Vec<Result<String>> = seeds
        .par_iter()
        .map(|&seed| {
            let outcome = train(&env, &table, &cfg.agent, seed)?;
            let dir = cfg.output_dir.join(format!("seed_{seed}"));
            std::fs::create_dir_all(&dir)?;
            let checkpoint = Checkpoint {
                net: outcome.net,
                seed,
                config_hash: hash.clone(),
            };
            save_checkpoint(&dir.join("checkpoint.txt"), &checkpoint)?;
            write_training_csv(&outcome.log, seed, &hash, &dir.join("training.csv"))?;
            let seeded = RunConfig {
                seed,
                output_dir: cfg.output_dir.clone(),
                ..cfg.clone()
            };
            std::fs::write(dir.join("config.toml"), seeded.to_toml_string())?;
            let last = outcome.log.len().saturating_sub(10);
            let tail: f64 = outcome.log[last..].iter().map(|e| e.episode_return).sum::<f64>()
                / (outcome.log.len() - last) as f64;
            Ok(format!(
                "seed {seed}: {} episodes, mean return of last {} = {tail:.6e} -> {}",
                outcome.log.len(),
                outcome.log.len() - last,
                dir.display()
            ))
        })
        .collect();
    for r in results {
        writeln!(out, "{}", r?)?;
    }
    Ok(())
}

fn load_for_eval(cfg: &RunConfig, checkpoint: &Path, library: &AdmissibleLibrary) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(checkpoint)?;
    if ckpt.net.output_dim() != library.len() {
        return Err(Error::Checkpoint(format!(
            "network has {} outputs but the library has {} entries",
            ckpt.net.output_dim(),
            library.len()
        )));
    }
    if ckpt.config_hash != cfg.hash() {
        eprintln!("warning: checkpoint was trained under a different configuration");
    }
    Ok(ckpt)
}

fn eval_cmd(cfg: &RunConfig, checkpoint: &Path, path: Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let library = cfg.build_library()?;
    let ckpt = load_for_eval(cfg, checkpoint, &library)?;
    let log = evaluate(
        &ckpt.net,
        &cfg.env(),
        &GainTable::from_library(&library),
        cfg.agent.dwell_steps,
        ckpt.seed,
    )?;
    let path = path.unwrap_or_else(|| cfg.output_dir.join(format!("eval_seed_{}.csv", ckpt.seed)));
    ensure_parent(&path)?;
    write_episode_csv(&log, &path)?;
    writeln!(
        out,
        "{}  rows={}  return={:.6e}  switches={}  termination={}",
        path.display(),
        log.rows.len(),
        log.episode_return,
        log.switches(),
        log.termination.name()
    )?;
    Ok(())
}

fn export_cmd(cfg: &RunConfig, checkpoint: Option<&Path>, training: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let library = cfg.build_library()?;
    let table = GainTable::from_library(&library);
    let dir = cfg.output_dir.join("figures_data");
    std::fs::create_dir_all(&dir)?;
    let (log, source) = match checkpoint {
        Some(path) => {
            let ckpt = load_for_eval(cfg, path, &library)?;
            (
                evaluate(&ckpt.net, &cfg.env(), &table, cfg.agent.dwell_steps, ckpt.seed)?,
                format!("eval {}", path.display()),
            )
        }
        None => {
            let mid = library.mid_index();
            (
                run_fixed_gain_episode(&cfg.env(), &table, mid, cfg.seed)?,
                format!("fixed gain index {mid}"),
            )
        }
    };
    write_episode_csv(&log, &dir.join("episode.csv"))?;
    let mut files = vec!["episode.csv".to_string()];
    if let Some(src) = training {
        std::fs::copy(src, dir.join("training.csv"))?;
        files.push("training.csv".into());
    }
    std::fs::write(dir.join("library.txt"), library_table(&library))?;
    files.push("library.txt".into());
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
    files.push("config.toml".into());
    let manifest = format!(
        "source = {source:?}\ntf = {:?}\nr_star = [{:?}, {:?}, {:?}]\nfiles = [{}]\n",
        cfg.trajectory.tf,
        cfg.trajectory.r_star[0],
        cfg.trajectory.r_star[1],
        cfg.trajectory.r_star[2],
        files.iter().map(|f| format!("{f:?}")).collect::<Vec<_>>().join(", ")
    );
    std::fs::write(dir.join("manifest.toml"), manifest)?;
    writeln!(out, "{}", dir.display())?;
    Ok(())
}

fn audit_cmd(cfg: &RunConfig, dir: Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let library = cfg.build_library()?;
    let dir = dir.unwrap_or_else(|| cfg.output_dir.clone());
    let reports = audit_directory(&dir, &library)?;
    let mut failed = 0;
    for (path, r) in &reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        if !r.passed() {
            failed += 1;
        }
        writeln!(
            out,
            "{status}  {}  rows={} off_library={} index_mismatch={} dwell_violations={} max_v_error={:.2e}",
            path.display(),
            r.rows,
            r.off_library,
            r.index_mismatch,
            r.dwell_violations,
            r.max_v_error
        )?;
    }
    if failed > 0 {
        return Err(Error::validation(
            "audit",
            format!("{failed} of {} episode logs failed", reports.len()),
        ));
    }
    Ok(())
}
