mod teach;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mt_client::MtClient;
use mt_core::artifacts::{open_kb_dir, DataDir, SessionSpec, TEST_FILE};
use mt_core::corpus::load_dataset;
use mt_core::experiments::{
    compare_curves, comparison_csv, curve_rows, curves_from_rows, median_curve, median_final, parse_strategies,
    read_curves_csv, run_grid, write_curves_csv, ExperimentConfig, DEFAULT_BOOTSTRAP_FRACTION, DEFAULT_BUDGET,
};
use mt_core::learner::{sweep, Hyperparams, LinearModel};
use mt_core::pack::Pack;
use mt_core::selector::{rank_pool, ConfusionConfig};
use mt_core::session::{Session, SessionConfig, TimeModel};
use serde::Deserialize;

use crate::teach::{Driver, LocalDriver, RemoteDriver};

const CURVES_FILE: &str = "curves.csv";
const SUMMARY_FILE: &str = "summary.json";

#[derive(Parser)]
#[command(name = "mt", version, about = "Machine-teaching workbench for intent classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the shipped template pack to a directory
    Pack {
        #[arg(long)]
        out: PathBuf,
    },
    /// Split templates into bootstrap and novel data plus a knowledge-base directory
    GenerateData {
        /// Templates JSONL; sibling pack files are used when present. Defaults to the shipped pack.
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BOOTSTRAP_FRACTION)]
        bootstrap_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the bootstrap model on a data directory
    Bootstrap {
        #[arg(long)]
        data: PathBuf,
        /// Hyperparameters JSON; defaults to the bootstrap preset
        #[arg(long)]
        hp: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid search over hyperparameters, evaluated on the novel pool
    Sweep {
        /// JSON list of hyperparameter sets, or an object of per-field value lists
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the most confusing pool examples as JSONL
    Rank {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long, default_value_t = mt_core::selector::DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Teach interactively, or replay an event log
    Teach(TeachArgs),
    /// Run simulated-teacher experiments and write curves
    Simulate {
        #[arg(long, default_value = "RL,AL,FULL_MT")]
        strategies: String,
        /// Number of seeds, run as 0..seeds
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        #[arg(long)]
        out: PathBuf,
        /// Pack directory; defaults to the shipped pack
        #[arg(long)]
        pack: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BOOTSTRAP_FRACTION)]
        bootstrap_fraction: f64,
        /// Also write every run's event log under <out>/logs
        #[arg(long)]
        logs: bool,
    },
    /// Compare median curves per strategy from a results directory
    Compare {
        /// Results directory (or a curves CSV file)
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export data produced by a session log
    Export {
        /// Write the augmented examples with their provenance as JSONL
        #[arg(long, required = true)]
        augmented: bool,
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        artifacts: SessionArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        artifacts: PathBuf,
    },
}

#[derive(Args, Clone)]
struct SessionArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    kb: PathBuf,
    /// Test set; defaults to test.jsonl next to the pool
    #[arg(long)]
    test: Option<PathBuf>,
    /// Initial training set for replay batches; defaults to bootstrap.jsonl next to the pool
    #[arg(long)]
    bootstrap: Option<PathBuf>,
    /// Session configuration JSON
    #[arg(long)]
    config: Option<PathBuf>,
    /// Teacher time preset
    #[arg(long, value_parser = ["t1", "t2"])]
    time: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SessionArgs {
    fn spec(&self) -> Result<SessionSpec> {
        let mut config: SessionConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => SessionConfig::default(),
        };
        match self.time.as_deref() {
            Some("t1") => config.time = TimeModel::t1(),
            Some("t2") => config.time = TimeModel::t2(),
            _ => {}
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        Ok(SessionSpec {
            model: self.model.clone(),
            pool: self.pool.clone(),
            kb: self.kb.clone(),
            test: self.test.clone(),
            bootstrap: self.bootstrap.clone(),
            config,
        })
    }

    /// Session over a detached copy of the knowledge base, so replays do not
    /// write to the validated store.
    fn replay_session(&self, events: &[mt_core::session::InteractionEvent]) -> Result<Session> {
        let spec = self.spec()?;
        let kb = Arc::new(open_kb_dir(&spec.kb)?.fork_in_memory());
        Ok(Session::replay("replay", spec.load(kb)?, events)?)
    }
}

#[derive(Args)]
struct TeachArgs {
    #[command(flatten)]
    artifacts: SessionArgs,
    /// Replay this event log instead of teaching and print the report
    #[arg(long, conflicts_with = "remote")]
    replay: Option<PathBuf>,
    /// Teach through a running service; artifact paths are relative to its artifacts directory
    #[arg(long)]
    remote: Option<String>,
    /// Event log to write; defaults to session-<timestamp>.jsonl
    #[arg(long)]
    log: Option<PathBuf>,
    /// Save the final model checkpoint here
    #[arg(long)]
    save: Option<PathBuf>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GridFile {
    List(Vec<Hyperparams>),
    Axes {
        learning_rate: Vec<f64>,
        epochs: Vec<usize>,
        l2: Vec<f64>,
        replay_batch: Vec<usize>,
    },
}

impl GridFile {
    fn points(self) -> Vec<Hyperparams> {
        match self {
            GridFile::List(v) => v,
            GridFile::Axes {
                learning_rate,
                epochs,
                l2,
                replay_batch,
            } => {
                let mut out = Vec::new();
                for &lr in &learning_rate {
                    for &ep in &epochs {
                        for &l in &l2 {
                            for &rb in &replay_batch {
                                out.push(Hyperparams {
                                    learning_rate: lr,
                                    epochs: ep,
                                    l2: l,
                                    replay_batch: rb,
                                });
                            }
                        }
                    }
                }
                out
            }
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        let closed_pipe = e
            .chain()
            .filter_map(|c| c.downcast_ref::<io::Error>())
            .any(|io| io.kind() == io::ErrorKind::BrokenPipe);
        if closed_pipe {
            return;
        }
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Pack { out: dir } => {
            Pack::write_builtin(&dir)?;
            writeln!(out, "wrote the template pack to {}", dir.display())?;
        }
        Command::GenerateData {
            templates,
            bootstrap_fraction,
            seed,
            out: dir,
        } => {
            let pack = match templates {
                Some(p) => Pack::from_templates_file(&p)?,
                None => Pack::builtin(),
            };
            let data = DataDir::generate(&pack, bootstrap_fraction, seed, &dir)?;
            writeln!(
                out,
                "{}: {} intents, {} bootstrap, {} pool, {} test examples",
                dir.display(),
                data.inventory.len(),
                data.bootstrap.len(),
                data.pool.len(),
                data.test.len()
            )?;
        }
        Command::Bootstrap {
            data,
            hp,
            seed,
            out: path,
        } => {
            let hp = match hp {
                Some(p) => read_json(&p)?,
                None => Hyperparams::bootstrap(),
            };
            let data = DataDir::load(&data)?;
            let model = LinearModel::train(&data.bootstrap, &data.inventory, &hp, seed)?;
            model.save(&path)?;
            writeln!(
                out,
                "saved {} (test error {:.4})",
                path.display(),
                model.error_rate(&data.test)?
            )?;
        }
        Command::Sweep {
            grid,
            data,
            seed,
            out: path,
        } => {
            let grid = read_json::<GridFile>(&grid)?.points();
            let data = DataDir::load(&data)?;
            let outcome = sweep(&grid, &data.bootstrap, &data.pool, &data.inventory, seed)?;
            let text = serde_json::to_string_pretty(&outcome)?;
            match path {
                Some(p) => {
                    std::fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
                    writeln!(out, "best: {}", serde_json::to_string(&outcome.best)?)?;
                }
                None => writeln!(out, "{text}")?,
            }
        }
        Command::Rank {
            model,
            pool,
            top,
            threshold,
        } => {
            let model = LinearModel::load(&model)?;
            let pool = load_dataset(&pool, model.inventory())?;
            let cfg = ConfusionConfig {
                threshold,
                ..ConfusionConfig::default()
            };
            for c in rank_pool(&model, &pool, &cfg).iter().take(top) {
                writeln!(out, "{}", serde_json::to_string(c)?)?;
            }
        }
        Command::Teach(args) => teach_command(args, &mut out)?,
        Command::Simulate {
            strategies,
            seeds,
            budget,
            out: dir,
            pack,
            bootstrap_fraction,
            logs,
        } => {
            let strategies = parse_strategies(&strategies).map_err(anyhow::Error::msg)?;
            if seeds == 0 {
                bail!("--seeds must be at least 1");
            }
            let pack = match pack {
                Some(p) => Pack::load(&p)?,
                None => Pack::builtin(),
            };
            let cfg = ExperimentConfig {
                budget,
                ..ExperimentConfig::default()
            };
            let seeds: Vec<u64> = (0..seeds).collect();
            let runs = run_grid(&pack, &strategies, &seeds, bootstrap_fraction, &Hyperparams::bootstrap(), &cfg)?;
            create_dir(&dir)?;
            let rows: Vec<_> = runs.iter().flat_map(curve_rows).collect();
            let csv_path = dir.join(CURVES_FILE);
            let file = File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
            write_curves_csv(BufWriter::new(file), &rows)?;
            let finals: BTreeMap<String, f64> = median_final(&runs)
                .into_iter()
                .map(|(s, v)| (s.name().to_string(), v))
                .collect();
            write_json(&dir.join(SUMMARY_FILE), &finals)?;
            if logs {
                let log_dir = dir.join("logs");
                create_dir(&log_dir)?;
                for r in &runs {
                    mt_core::jsonl::write(&log_dir.join(format!("{}-{}.jsonl", r.strategy, r.seed)), &r.log)?;
                }
            }
            for r in runs.iter().filter(|r| r.truncated) {
                writeln!(out, "warning: {} seed {} stopped at {} examples", r.strategy, r.seed, r.curve.len())?;
            }
            writeln!(out, "median final running-average error over {} seeds:", seeds.len())?;
            for s in &strategies {
                writeln!(out, "  {:<8} {:.4}", s.name(), finals[s.name()])?;
            }
            writeln!(out, "wrote {}", csv_path.display())?;
        }
        Command::Compare { input, out: path } => {
            let csv_path = if input.is_dir() { input.join(CURVES_FILE) } else { input };
            let file = File::open(&csv_path).with_context(|| format!("opening {}", csv_path.display()))?;
            let rows = read_curves_csv(file)?;
            let curves = curves_from_rows(&rows);
            let mut names: Vec<String> = Vec::new();
            for r in &rows {
                if !names.contains(&r.strategy) {
                    names.push(r.strategy.clone());
                }
            }
            let medians: Vec<(String, mt_core::session::ErrorCurve)> = names
                .iter()
                .map(|n| {
                    let per_seed: Vec<_> = curves.iter().filter(|((s, _), _)| s == n).map(|(_, c)| c).collect();
                    (n.clone(), median_curve(&per_seed))
                })
                .collect();
            let table = compare_curves(&medians)?;
            std::fs::write(&path, comparison_csv(&table)?).with_context(|| format!("writing {}", path.display()))?;
            writeln!(out, "{:<8} {:>6} {:>10} {:>12} {:>12}", "name", "points", "final_avg", "auc_examples", "auc_seconds")?;
            for s in &table.summaries {
                let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                writeln!(
                    out,
                    "{:<8} {:>6} {:>10.4} {:>12} {:>12}",
                    s.name,
                    s.points,
                    s.final_running_avg,
                    f(s.auc_examples),
                    f(s.auc_seconds)
                )?;
            }
            for n in &table.notes {
                writeln!(out, "note: {n}")?;
            }
            writeln!(out, "wrote {}", path.display())?;
        }
        Command::Export {
            augmented: _,
            log,
            artifacts,
            out: path,
        } => {
            let events = Session::read_log(&log)?;
            let session = artifacts.replay_session(&events)?;
            let records = session.augmented_records();
            match path {
                Some(p) => {
                    mt_core::jsonl::write(&p, &records)?;
                    writeln!(out, "wrote {} augmented examples to {}", records.len(), p.display())?;
                }
                None => out.write_all(mt_core::jsonl::to_string(&records)?.as_bytes())?,
            }
        }
        Command::Serve { port, host, artifacts } => {
            let state = mt_service::AppState::new(&artifacts)
                .with_context(|| format!("opening artifacts directory {}", artifacts.display()))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                    .await
                    .with_context(|| format!("binding {host}:{port}"))?;
                writeln!(out, "listening on http://{}", listener.local_addr()?)?;
                out.flush()?;
                log::info!("serving artifacts from {}", artifacts.display());
                mt_service::serve(listener, state).await?;
                Ok::<_, anyhow::Error>(())
            })?;
        }
    }
    Ok(())
}

fn teach_command(args: TeachArgs, out: &mut dyn Write) -> Result<()> {
    if let Some(log) = &args.replay {
        let events = Session::read_log(log)?;
        let session = args.artifacts.replay_session(&events)?;
        if let Some(p) = &args.save {
            session.model().save(p)?;
        }
        return teach::print_report(&session.report(), out);
    }

    let log_path = args.log.clone().unwrap_or_else(|| {
        let ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_millis());
        PathBuf::from(format!("session-{ms}.jsonl"))
    });
    teach::ensure_fresh_log(&log_path)?;
    let spec = args.artifacts.spec()?;
    let stdin = io::stdin();
    let mut input = stdin.lock();

    let report = match &args.remote {
        Some(url) => {
            let mut driver = RemoteDriver::create(MtClient::new(url), &spec)?;
            writeln!(out, "remote session {}", driver.id())?;
            let report = teach::run_interactive(&mut driver, &mut input, out)?;
            mt_core::jsonl::write(&log_path, &driver.events()?)?;
            if args.save.is_some() {
                log::warn!("--save is ignored for remote sessions");
            }
            report
        }
        None => {
            if args.artifacts.pool.file_name().is_some_and(|n| n == TEST_FILE) {
                log::warn!("teaching from the test set");
            }
            let kb = Arc::new(open_kb_dir(&spec.kb)?);
            let session = Session::new("terminal", spec.load(kb)?)?.with_log_file(&log_path);
            let mut driver = LocalDriver::new(session);
            let report = teach::run_interactive(&mut driver, &mut input, out)?;
            if let Some(p) = &args.save {
                driver.session.model().save(p)?;
            }
            report
        }
    };
    writeln!(out, "event log: {}", log_path.display())?;
    teach::print_report(&report, out)
}
