use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use featgraph::harness::{
    builtin_scenario, emit_report, evaluate, explain_record, fit, load_split, project, run_experiment, Algorithm,
    AnyModel, ExperimentConfig,
};
use featgraph::schema::{load_dataset, select_stage_features, write_dataset, FeatureSchema};
use featgraph::synth::{generate_dataset, GroundTruthModel};
use featgraph::{Error, Result};

/// Interpretable graph-attention classifier for tabular records.
#[derive(Parser)]
#[command(name = "featgraph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled dataset from a ground-truth model.
    Synth {
        /// Ground-truth model JSON.
        #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
        config: Option<PathBuf>,
        /// Built-in scenario instead of a file: `desk` or `staged`.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value_t = 20_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on the configured data and write a checkpoint.
    Train {
        /// Experiment TOML supplying data and hyperparameters.
        #[arg(long)]
        config: PathBuf,
        /// Split and initialization seed (default: the config's first seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Feature stage 1..=4 (default: the config's largest model id).
        #[arg(long)]
        model_id: Option<u8>,
        /// gatv2, dot_product or logistic (default: the config's first).
        #[arg(long)]
        algorithm: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split of the configured data.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a JSON and DOT explanation of one record.
    Explain {
        /// Graph-model checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Experiment TOML; the record is taken from its test split.
        #[arg(long, conflicts_with = "data", required_unless_present = "data")]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV file; the record is taken from it directly.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Schema of `--data` (default: the checkpoint's schema).
        #[arg(long, requires = "data")]
        schema: Option<PathBuf>,
        /// Zero-based record index.
        #[arg(long, default_value_t = 0)]
        record: usize,
        /// Edges kept in the DOT graph.
        #[arg(long, default_value_t = 11)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the model-stage by algorithm by seed grid and write the report.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Run this seed only, overriding the config's list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::Format(_) => 3,
        _ => 1,
    }
}

fn write_json(path: &Path, value: serde_json::Result<String>) -> Result<()> {
    let text = value.map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    println!("wrote {}", path.display());
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn out_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name))
}

fn seed_or_first(cfg: &ExperimentConfig, seed: Option<u64>) -> u64 {
    seed.unwrap_or(cfg.seeds[0])
}

fn parse_algorithm(name: &str) -> Result<Algorithm> {
    serde_json::from_value(serde_json::Value::String(name.to_string())).map_err(|_| {
        Error::Usage(format!(
            "unknown algorithm `{name}` (expected gatv2, dot_product or logistic)"
        ))
    })
}

fn synth(config: Option<PathBuf>, scenario: Option<String>, n: usize, seed: u64, out: PathBuf) -> Result<()> {
    let gt = match (config, scenario) {
        (Some(p), _) => GroundTruthModel::load(&p)?,
        (None, Some(s)) => builtin_scenario(&s)
            .ok_or_else(|| Error::Usage(format!("unknown scenario `{s}` (expected desk or staged)")))?,
        (None, None) => return Err(Error::Usage("give --config or --scenario".into())),
    };
    let ds = generate_dataset(&gt, n, seed)?;
    create_dir(&out)?;
    write_dataset(&out.join("data.csv"), &ds)?;
    println!("wrote {}", out.join("data.csv").display());
    ds.schema.save(&out.join("schema.json"))?;
    println!("wrote {}", out.join("schema.json").display());
    gt.save(&out.join("ground_truth.json"))?;
    println!("wrote {}", out.join("ground_truth.json").display());
    Ok(())
}

fn train(
    config: PathBuf,
    seed: Option<u64>,
    model_id: Option<u8>,
    algorithm: Option<String>,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = ExperimentConfig::load(&config)?;
    let seed = seed_or_first(&cfg, seed);
    let model_id = model_id.unwrap_or_else(|| *cfg.model_ids.iter().max().expect("validated nonempty"));
    let algorithm = match algorithm {
        Some(a) => parse_algorithm(&a)?,
        None => cfg.algorithms[0],
    };
    let (tr, va, _) = load_split(&cfg, seed)?;
    let tr = select_stage_features(&tr, model_id)?;
    let va = select_stage_features(&va, model_id)?;
    let (model, summary) = fit(&cfg, algorithm, &tr, &va, seed)?;
    let dir = out_dir(&cfg, out);
    create_dir(&dir)?;
    model.save(&dir.join("model.json"))?;
    println!("wrote {}", dir.join("model.json").display());
    write_json(&dir.join("fit.json"), serde_json::to_string_pretty(&summary))
}

fn eval(config: PathBuf, seed: Option<u64>, model: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let cfg = ExperimentConfig::load(&config)?;
    let seed = seed_or_first(&cfg, seed);
    let model = AnyModel::load(&model)?;
    let (_, va, te) = load_split(&cfg, seed)?;
    let va = project(&va, model.schema())?;
    let te = project(&te, model.schema())?;
    let metrics = evaluate(&model, &va, &te)?;
    let dir = out_dir(&cfg, out);
    create_dir(&dir)?;
    write_json(&dir.join("eval.json"), serde_json::to_string_pretty(&metrics))
}

#[allow(clippy::too_many_arguments)]
fn explain(
    model: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
    data: Option<PathBuf>,
    schema: Option<PathBuf>,
    record: usize,
    k: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    let AnyModel::Graph(graph) = AnyModel::load(&model)? else {
        return Err(Error::Usage("explain needs a graph-model checkpoint".into()));
    };
    let (records, dir) = match (config, data) {
        (Some(c), _) => {
            let cfg = ExperimentConfig::load(&c)?;
            let (_, _, te) = load_split(&cfg, seed_or_first(&cfg, seed))?;
            (project(&te, &graph.schema)?, out_dir(&cfg, out))
        }
        (None, Some(d)) => {
            let schema = match schema {
                Some(p) => FeatureSchema::load(&p)?,
                None => graph.schema.clone(),
            };
            if schema.hash() != graph.schema.hash() {
                return Err(Error::SchemaMismatch(format!(
                    "schema hash {} does not match the checkpoint's {}",
                    schema.hash(),
                    graph.schema.hash()
                )));
            }
            (load_dataset(&d, &schema)?, out.unwrap_or_else(|| PathBuf::from(".")))
        }
        (None, None) => return Err(Error::Usage("give --config or --data".into())),
    };
    let r = records.records.get(record).ok_or_else(|| {
        Error::Usage(format!("record {record} out of range ({} records)", records.len()))
    })?;
    let (json, dot) = explain_record(&graph, r, k, &dir, &format!("explanation-{record}"))?;
    println!("wrote {}", json.display());
    println!("wrote {}", dot.display());
    Ok(())
}

fn experiment(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<u8> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let report = run_experiment(&cfg)?;
    let dir = out_dir(&cfg, out);
    for p in emit_report(&report, &dir)? {
        println!("wrote {}", p.display());
    }
    let failed = report.failures();
    if failed > 0 {
        for c in report.cells.iter().filter(|c| !c.ok()) {
            eprintln!(
                "cell model={} algorithm={} seed={} failed: {}",
                c.model_id,
                c.algorithm,
                c.seed,
                c.error.as_deref().unwrap_or("")
            );
        }
        return Ok(2);
    }
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Synth {
            config,
            scenario,
            n,
            seed,
            out,
        } => synth(config, scenario, n, seed, out).map(|_| 0),
        Command::Train {
            config,
            seed,
            model_id,
            algorithm,
            out,
        } => train(config, seed, model_id, algorithm, out).map(|_| 0),
        Command::Eval {
            config,
            seed,
            model,
            out,
        } => eval(config, seed, model, out).map(|_| 0),
        Command::Explain {
            model,
            config,
            seed,
            data,
            schema,
            record,
            k,
            out,
        } => explain(model, config, seed, data, schema, record, k, out).map(|_| 0),
        Command::Experiment { config, seed, out } => experiment(config, seed, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
