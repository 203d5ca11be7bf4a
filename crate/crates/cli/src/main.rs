//! `clic`: generate scenario libraries, run the closed training loop and
//! produce the evaluation artifacts.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
//! error. Failures print one `error[<category>]: <detail>` line on stderr.

mod manifest;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use clic_core::curriculum::{featurize_library, DifficultyPredictor, Strategy};
use clic_core::metrics::{compute_metrics, individualization_experiment, matrix_experiment, reweighting_analysis, test_all, OutcomeTable};
use clic_core::pipeline::{self, IterationRecord};
use clic_core::sac::SacAgent;
use clic_core::scenario::{library_stats, load_library, validate_scenario, write_library, LibraryFormat, LoadOptions};
use clic_core::util::{read_json, write_json};
use clic_core::{Config, ErrorCategory, ScenarioLibrary};
use manifest::RunManifest;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "clic", version, about = "Closed-loop individualized curricula for driving policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat TOML config; keys override the selected profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for rollouts.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct LibraryArg {
    /// Scenario library (`.jsonl`, or `.csv` for the flat layout).
    #[arg(long)]
    library: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scenario library.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Summary statistics of a library.
    Stats {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        lib: LibraryArg,
    },
    /// Check every scenario against the road and dynamics limits.
    Validate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        lib: LibraryArg,
    },
    /// Run the closed loop; resumes an interrupted run in the same directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        lib: LibraryArg,
        /// clic, rand, rand_fail, fail, pcl_bv, pcl_label, order or per.
        #[arg(long)]
        strategy: Option<Strategy>,
    },
    /// Test an agent on the whole library and compare with a baseline.
    Test {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        lib: LibraryArg,
        /// Run directory: tests its final agent against its initial one.
        #[arg(long, conflicts_with = "agent")]
        run: Option<PathBuf>,
        /// Agent checkpoint to test.
        #[arg(long)]
        agent: Option<PathBuf>,
        /// Baseline outcome table (JSON written by a previous `test`).
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Agent × curriculum success-rate matrix of a finished run.
    Matrix {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        lib: LibraryArg,
        #[arg(long)]
        run: PathBuf,
    },
    /// Label histograms under uniform and difficulty-weighted sampling.
    Reweight {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        lib: LibraryArg,
        #[arg(long)]
        run: PathBuf,
        /// Predictor iteration for the "before" side (default: first).
        #[arg(long)]
        before: Option<usize>,
        /// Predictor iteration for the "after" side (default: last).
        #[arg(long)]
        after: Option<usize>,
    },
    /// Curriculum selected for an agent with and without a perception mask.
    Individualize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        lib: LibraryArg,
        #[arg(long)]
        run: PathBuf,
    },
    /// Flatten a run's iteration records into CSV tables.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run: PathBuf,
    },
}

fn category(e: &anyhow::Error) -> ErrorCategory {
    e.chain()
        .find_map(|c| c.downcast_ref::<clic_core::Error>().map(|e| e.category()))
        .unwrap_or(ErrorCategory::Runtime)
}

fn exit_code(c: ErrorCategory) -> u8 {
    match c {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Runtime => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let c = category(&e);
            let detail = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{c}]: {detail}");
            ExitCode::from(exit_code(c))
        }
    }
}

/// Effective config: flag > file > profile default.
fn load_config(common: &Common) -> anyhow::Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn init_pool(cfg: &Config) {
    if let Some(n) = cfg.pool_size() {
        // A second initialization only happens in tests and is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn open_library(path: &Path, cfg: &Config, validate: bool) -> anyhow::Result<ScenarioLibrary> {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => LibraryFormat::FlatCsv,
        _ => LibraryFormat::Jsonl,
    };
    let opts = LoadOptions {
        limits: cfg.limits(),
        validate_dynamics: validate,
        road: cfg.road(),
        dt: cfg.dt,
        n_max: cfg.bv_count_weights.len(),
        h_max: cfg.h_max,
    };
    load_library(path, format, &opts).with_context(|| format!("loading {}", path.display()))
}

/// Starts a manifest, runs `body`, then finalizes the manifest with the
/// artifacts `body` reports.
fn with_manifest(
    command: &str,
    cfg: &Config,
    out: &Path,
    library: Option<&Path>,
    body: impl FnOnce() -> anyhow::Result<Vec<String>>,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut m = RunManifest::start(command, cfg, library)?;
    m.write(&out.join(format!("{command}_manifest.json")))?;
    cfg.save(&out.join(format!("{command}_config.toml")))?;
    m.artifacts = body()?;
    m.finish();
    m.write(&out.join(format!("{command}_manifest.json")))?;
    Ok(())
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Gen { common } => {
            let cfg = load_config(&common)?;
            init_pool(&cfg);
            let out = out_dir(&common, "library");
            with_manifest("gen", &cfg, &out, None, || {
                let lib = clic_core::gen::generate_library(&cfg.gen_config(), &cfg.road())?;
                write_library(&lib, &out.join("library.jsonl"))?;
                let report = clic_core::gen::describe_library(&lib, &cfg.limits())?;
                write_json(&out.join("generation_report.json"), &report)?;
                println!("generated {} scenarios into {}", lib.len(), out.display());
                Ok(vec!["library.jsonl".into(), "generation_report.json".into()])
            })
        }
        Command::Stats { common, lib } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common, "stats");
            with_manifest("stats", &cfg, &out, Some(&lib.library), || {
                let l = open_library(&lib.library, &cfg, false)?;
                write_json(&out.join("stats.json"), &library_stats(&l)?)?;
                Ok(vec!["stats.json".into()])
            })
        }
        Command::Validate { common, lib } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common, "validation");
            let mut bad = 0;
            with_manifest("validate", &cfg, &out, Some(&lib.library), || {
                let l = open_library(&lib.library, &cfg, false)?;
                let report: Vec<serde_json::Value> = l
                    .scenarios
                    .iter()
                    .filter_map(|s| {
                        let v = validate_scenario(s, &l.road, &cfg.limits());
                        (!v.is_empty()).then(|| serde_json::json!({ "id": s.id, "violations": v }))
                    })
                    .collect();
                bad = report.len();
                write_json(&out.join("validation.json"), &report)?;
                println!("{} of {} scenarios violate the limits", bad, l.len());
                Ok(vec!["validation.json".into()])
            })?;
            if bad > 0 {
                return Err(clic_core::Error::Invariant {
                    id: format!("{bad} scenarios"),
                    field: "dynamics".into(),
                    detail: "see validation.json".into(),
                }
                .into());
            }
            Ok(())
        }
        Command::Train { common, lib, strategy } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = strategy {
                cfg.strategy = s;
            }
            init_pool(&cfg);
            let out = out_dir(&common, "run");
            let snapshot = out.join("config.toml");
            if snapshot.exists() {
                let prev = Config::load(&snapshot)?;
                if (Config { jobs: cfg.jobs, ..prev.clone() }) != cfg {
                    bail!(clic_core::Error::Config(format!(
                        "{} holds a run with a different config; use a fresh --out",
                        out.display()
                    )));
                }
            }
            std::fs::create_dir_all(&out)?;
            cfg.save(&snapshot)?;
            with_manifest("train", &cfg, &out, Some(&lib.library), || {
                let l = open_library(&lib.library, &cfg, true)?;
                let env = cfg.env_for(&l);
                let res = pipeline::run(&cfg.loop_config(), &l, &env, Some(&out))?;
                for r in &res.records {
                    println!(
                        "iteration {}: eval SR {:.2}%, mean return {:.2}, {} updates",
                        r.iteration, r.eval_success_rate, r.train.mean_return, r.train.updates
                    );
                }
                let mut arts = vec!["config.toml".to_string(), pipeline::initial_agent_path(Path::new("")).display().to_string()];
                for r in &res.records {
                    arts.extend(r.agent_checkpoint.clone());
                    arts.extend(r.predictor_checkpoint.clone());
                }
                Ok(arts)
            })
        }
        Command::Test { common, lib, run, agent, baseline } => {
            let cfg = load_config(&common)?;
            init_pool(&cfg);
            let out = out_dir(&common, "test");
            with_manifest("test", &cfg, &out, Some(&lib.library), || {
                let l = open_library(&lib.library, &cfg, true)?;
                let env = cfg.env_for(&l);
                let (agent_path, base_agent) = match (&run, &agent) {
                    (Some(r), _) => (last_agent(r)?, Some(pipeline::initial_agent_path(r))),
                    (None, Some(a)) => (a.clone(), None),
                    (None, None) => bail!(clic_core::Error::Config("test needs --run or --agent".into())),
                };
                let a = SacAgent::load(&agent_path)?;
                let after = test_all(&a, &l, &env, cfg.pool_size())?;
                write_json(&out.join("outcomes.json"), &after)?;
                after.write_csv(&out.join("outcomes.csv"))?;
                let mut arts = vec!["outcomes.json".to_string(), "outcomes.csv".to_string()];
                let before: Option<OutcomeTable> = match (&baseline, base_agent) {
                    (Some(b), _) => Some(read_json(b)?),
                    (None, Some(p)) => {
                        let t = test_all(&SacAgent::load(&p)?, &l, &env, cfg.pool_size())?;
                        write_json(&out.join("baseline_outcomes.json"), &t)?;
                        arts.push("baseline_outcomes.json".into());
                        Some(t)
                    }
                    (None, None) => None,
                };
                let before = before.unwrap_or_else(|| after.clone());
                let m = compute_metrics(&before, &after)?;
                write_json(&out.join("metrics.json"), &m)?;
                arts.push("metrics.json".into());
                println!("SR {:.2}%  FNR {}  TNR {}", m.sr, fmt_opt(m.fnr), fmt_opt(m.tnr));
                Ok(arts)
            })
        }
        Command::Matrix { common, lib, run } => {
            let cfg = run_config(&common, &run)?;
            init_pool(&cfg);
            let out = common.out.clone().unwrap_or_else(|| run.join("matrix"));
            with_manifest("matrix", &cfg, &out, Some(&lib.library), || {
                let l = open_library(&lib.library, &cfg, true)?;
                let env = cfg.env_for(&l);
                let records = pipeline::read_records(&run)?;
                let mut agents = Vec::new();
                let mut preds = Vec::new();
                for r in &records {
                    agents.push(SacAgent::load(&pipeline::agent_checkpoint_path(&run, r.iteration))?);
                    preds.push(DifficultyPredictor::load(&pipeline::predictor_checkpoint_path(&run, r.iteration), cfg.predictor_config())?);
                }
                if agents.len() < 2 {
                    bail!(clic_core::Error::MissingInput("the matrix needs at least two iterations of checkpoints".into()));
                }
                let feats = featurize_library(&l, &cfg.feature_spec(&l))?;
                let m = matrix_experiment(&agents, &preds, &l, feats.view(), cfg.matrix_size(), cfg.seed, &env)?;
                m.write_csv(&out.join("matrix.csv"))?;
                write_json(&out.join("matrix.json"), &m)?;
                println!("agent trend {:.3}, predictor trend {:.3}", m.agent_trend(), m.predictor_trend());
                Ok(vec!["matrix.csv".into(), "matrix.json".into()])
            })
        }
        Command::Reweight { common, lib, run, before, after } => {
            let cfg = run_config(&common, &run)?;
            let out = common.out.clone().unwrap_or_else(|| run.join("reweight"));
            with_manifest("reweight", &cfg, &out, Some(&lib.library), || {
                let l = open_library(&lib.library, &cfg, true)?;
                let its = predictor_iterations(&run)?;
                let b = before.unwrap_or(its[0]);
                let a = after.unwrap_or(*its.last().expect("nonempty"));
                let load = |k| DifficultyPredictor::load(&pipeline::predictor_checkpoint_path(&run, k), cfg.predictor_config());
                let feats = featurize_library(&l, &cfg.feature_spec(&l))?;
                let r = reweighting_analysis(&load(b)?, &load(a)?, &l, feats.view(), cfg.reweight_bins, cfg.reweight_draws, cfg.seed)?;
                r.export(&out)?;
                Ok(vec!["scatter.csv".into(), "histograms.csv".into(), "analysis.json".into()])
            })
        }
        Command::Individualize { common, lib, run } => {
            let cfg = run_config(&common, &run)?;
            init_pool(&cfg);
            let out = common.out.clone().unwrap_or_else(|| run.join("individualize"));
            with_manifest("individualize", &cfg, &out, Some(&lib.library), || {
                let l = open_library(&lib.library, &cfg, true)?;
                let env = cfg.env_for(&l);
                let agent = SacAgent::load(&last_agent(&run)?)?;
                let feats = featurize_library(&l, &cfg.feature_spec(&l))?;
                let r = individualization_experiment(&agent, cfg.mask(), &cfg.individualize_config(), &l, feats.view(), &env)?;
                r.export(&out)?;
                println!(
                    "left-front share: masked {:.2}%, unmasked {:.2}%",
                    r.masked.left_front_share, r.unmasked.left_front_share
                );
                Ok(vec!["individualization.json".into(), "left_front_distances.csv".into()])
            })
        }
        Command::Export { common, run } => {
            let cfg = run_config(&common, &run)?;
            let out = common.out.clone().unwrap_or_else(|| run.join("export"));
            with_manifest("export", &cfg, &out, None, || {
                let records = pipeline::read_records(&run)?;
                if records.is_empty() {
                    bail!(clic_core::Error::MissingInput(format!("no iteration records in {}", run.display())));
                }
                export_records(&records, &out)?;
                Ok(vec!["iterations.csv".into(), "curricula.csv".into(), "evaluations.csv".into(), "episode_returns.csv".into()])
            })
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.2}%"))
}

/// The run's snapshot config, with command-line overrides on top.
fn run_config(common: &Common, run: &Path) -> anyhow::Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::load(&run.join("config.toml")).with_context(|| format!("reading the config of run {}", run.display()))?,
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn last_agent(run: &Path) -> anyhow::Result<PathBuf> {
    let n = pipeline::read_records(run)?.len();
    if n == 0 {
        return Err(anyhow!(clic_core::Error::MissingInput(format!("no finished iteration in {}", run.display()))));
    }
    Ok(pipeline::agent_checkpoint_path(run, n))
}

fn predictor_iterations(run: &Path) -> anyhow::Result<Vec<usize>> {
    let its: Vec<usize> = pipeline::read_records(run)?
        .iter()
        .filter(|r| r.predictor_checkpoint.is_some())
        .map(|r| r.iteration)
        .collect();
    if its.is_empty() {
        bail!(clic_core::Error::MissingInput(format!("no predictor checkpoints in {}", run.display())));
    }
    Ok(its)
}

fn export_records(records: &[IterationRecord], out: &Path) -> anyhow::Result<()> {
    let mut it = String::from("iteration,eval_success_rate,eval_size,curriculum_size,episodes,env_steps,updates,accidents,mean_return,mean_q_loss,mean_actor_loss,mean_entropy,alpha,final_predictor_loss\n");
    let mut cur = String::from("iteration,pick,id,index,probability\n");
    let mut ev = String::from("iteration,id,label\n");
    let mut ret = String::from("iteration,episode,return\n");
    for r in records {
        let t = &r.train;
        let loss = r.predictor_losses.last().map_or(String::new(), |l| l.to_string());
        it.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.iteration,
            r.eval_success_rate,
            r.eval_ids.len(),
            r.curriculum.len(),
            t.episodes,
            t.env_steps,
            t.updates,
            t.accidents,
            t.mean_return,
            t.mean_q_loss,
            t.mean_actor_loss,
            t.mean_entropy,
            t.alpha,
            loss
        ));
        for (k, ((id, idx), w)) in r.curriculum.ids.iter().zip(&r.curriculum.indices).zip(&r.curriculum.weights).enumerate() {
            cur.push_str(&format!("{},{},{},{},{}\n", r.iteration, k, id, idx, w));
        }
        for (id, l) in r.eval_ids.iter().zip(&r.eval_labels) {
            ev.push_str(&format!("{},{},{}\n", r.iteration, id, l));
        }
        for (k, g) in t.episode_returns.iter().enumerate() {
            ret.push_str(&format!("{},{},{}\n", r.iteration, k, g));
        }
    }
    for (name, body) in [("iterations.csv", it), ("curricula.csv", cur), ("evaluations.csv", ev), ("episode_returns.csv", ret)] {
        clic_core::util::write_atomic(&out.join(name), body.as_bytes())?;
    }
    Ok(())
}
