//! `xlmeta`: config-driven runner for base training, meta-training,
//! self-training, synthetic data generation and report rendering.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use xlmeta::corpus::Format;
use xlmeta::eval::{
    metrics_from_jsonl, metrics_to_jsonl, render_report, EvalReport, MetricRecord, ReportFormat,
};
use xlmeta::experiment::{run_experiment, Experiment, RunConfig, RunVariant, SeedOutcome};
use xlmeta::model::{digest_json, TrainedModel};
use xlmeta::selftrain::audits_to_jsonl;
use xlmeta::synth::{gen_family, FamilyManifest, FamilySpec};
use xlmeta::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(
    name = "xlmeta",
    version,
    about = "Cross-lingual meta-learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the source-language base model for every seed.
    TrainBase(Common),
    /// Adapt saved base models with the configured variant and evaluate.
    MetaTrain(Common),
    /// Silver-label self-training from saved base models, then evaluate.
    SelfTrain(Common),
    /// Generate a synthetic language family.
    Synth(Common),
    /// Render collected metrics into CSV and markdown tables.
    Report(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportConfig {
    /// Directory searched recursively for `metrics.jsonl` files.
    metrics_dir: PathBuf,
    #[serde(default)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ModelRecord {
    seed: u64,
    params_digest: String,
    parent: Option<String>,
}

#[derive(Serialize)]
struct ProvenanceRecord<'a> {
    command: &'a str,
    version: &'a str,
    config_digest: String,
    config: &'a RunConfig,
    seeds: &'a [u64],
    corpus_digest: String,
    models: Vec<ModelRecord>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn load_run(args: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed_override {
        config.seeds = vec![seed];
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    config.out = Some(out.clone());
    config.validate()?;
    Ok((config, out))
}

fn write_provenance(
    command: &str,
    exp: &Experiment,
    out: &Path,
    models: Vec<ModelRecord>,
) -> Result<()> {
    let record = ProvenanceRecord {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_digest: digest_json(&exp.config),
        config: &exp.config,
        seeds: &exp.config.seeds,
        corpus_digest: exp.corpus.digest(),
        models,
    };
    let path = out.join(format!("provenance-{command}.json"));
    write(&path, serde_json::to_string_pretty(&record)? + "\n")
}

fn write_reports(out: &Path, reports: &[EvalReport]) -> Result<String> {
    let csv = render_report(reports, ReportFormat::Csv);
    let md = render_report(reports, ReportFormat::Markdown);
    write(&out.join("report.csv"), &csv)?;
    write(&out.join("report.md"), &md)?;
    Ok(md)
}

fn cmd_train_base(args: &Common) -> Result<()> {
    let (config, out) = load_run(args)?;
    let exp = Experiment::from_config(config)?;
    let mut models = Vec::new();
    // Base training is sequential per seed; each run is already parallel inside.
    for &seed in &exp.config.seeds {
        let base = exp.train_base(seed).map_err(|e| Error::SeedRun {
            seed,
            source: Box::new(e),
        })?;
        base.save(&seed_dir(&out, seed).join("base"))?;
        log::info!("seed {seed}: base model {}", base.params_digest());
        models.push(ModelRecord {
            seed,
            params_digest: base.params_digest(),
            parent: base.provenance.parent.clone(),
        });
    }
    write_provenance("train-base", &exp, &out, models)
}

fn load_base(out: &Path, seed: u64) -> Result<TrainedModel> {
    let dir = seed_dir(out, seed).join("base");
    if !dir.join(xlmeta::model::META_FILE).exists() {
        return Err(Error::MissingData(format!(
            "no base model at {}; run `xlmeta train-base` first",
            dir.display()
        )));
    }
    TrainedModel::load(&dir)
}

fn run_and_save(command: &str, args: &Common, self_train: bool) -> Result<()> {
    let (config, out) = load_run(args)?;
    if self_train != (config.variant == RunVariant::SelfTrain) {
        return Err(Error::Config(if self_train {
            "self-train requires variant = \"self_train\"".into()
        } else {
            "variant \"self_train\" runs through the self-train subcommand".into()
        }));
    }
    let exp = Experiment::from_config(config)?;
    let (report, records, outcomes) = run_experiment(&exp, |seed| load_base(&out, seed))?;
    let variant = exp.config.variant.as_str();
    let mut models = Vec::new();
    for SeedOutcome {
        seed,
        model,
        audits,
        ..
    } in &outcomes
    {
        let dir = seed_dir(&out, *seed).join(variant);
        model.save(&dir)?;
        if self_train {
            write(&dir.join("audit.jsonl"), audits_to_jsonl(audits))?;
        }
        models.push(ModelRecord {
            seed: *seed,
            params_digest: model.params_digest(),
            parent: model.provenance.parent.clone(),
        });
    }
    write(&out.join("metrics.jsonl"), metrics_to_jsonl(&records))?;
    let md = write_reports(&out, &[report])?;
    print!("{md}");
    write_provenance(command, &exp, &out, models)
}

fn cmd_synth(args: &Common) -> Result<()> {
    let mut spec = FamilySpec::from_toml_str(&read(&args.config)?)?;
    if let Some(seed) = args.seed_override {
        spec.seed = seed;
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("synth"));
    let corpus = gen_family(&spec)?;
    let path = out.join("corpus.jsonl");
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    corpus.save(&path, Format::Jsonl)?;
    let manifest = FamilyManifest::new(&spec, &corpus);
    write(
        &out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    println!(
        "{} samples in {} languages -> {}",
        corpus.len(),
        spec.languages.len(),
        path.display()
    );
    Ok(())
}

fn collect_metrics(dir: &Path, records: &mut Vec<MetricRecord>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_metrics(&path, records)?;
        } else if path.file_name().is_some_and(|n| n == "metrics.jsonl") {
            records.extend(metrics_from_jsonl(&read(&path)?)?);
        }
    }
    Ok(())
}

fn cmd_report(args: &Common) -> Result<()> {
    let config: ReportConfig =
        toml::from_str(&read(&args.config)?).map_err(|e| Error::Config(e.to_string()))?;
    let out = args
        .out
        .clone()
        .or(config.out)
        .unwrap_or_else(|| config.metrics_dir.clone());
    let mut records = Vec::new();
    collect_metrics(&config.metrics_dir, &mut records)?;
    let md = write_reports(&out, &EvalReport::from_records(&records))?;
    print!("{md}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::TrainBase(a) => cmd_train_base(a),
        Command::MetaTrain(a) => run_and_save("meta-train", a, false),
        Command::SelfTrain(a) => run_and_save("self-train", a, true),
        Command::Synth(a) => cmd_synth(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Runtime => 4,
            })
        }
    }
}
