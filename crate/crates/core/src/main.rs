use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mhgraph::attngraph::example_two;
use mhgraph::error::{Error, Result};
use mhgraph::fidelity::{compare_head_system, per_head_vs_combined, FidelityForm, HeadComparison};
use mhgraph::io::file_sha256;
use mhgraph::microformer::{
    evaluate, load_checkpoint, save_checkpoint, train_with_hook, MicroformerModel, ModelConfig, Scalar,
};
use mhgraph::mixing::{Aggregation, ForwardNormalization};
use mhgraph::numerics::Precision;
use mhgraph::record::read_dump;
use mhgraph::runner::{
    analyze_records, run_name, run_plan, verify_examples, write_report, Analysis, ExperimentPlan, MetricTable,
    Provenance,
};
use mhgraph::taskdata::{generate_task, Dataset, Task};

#[derive(Parser)]
#[command(name = "mhgraph", version, about = "Mixing and fidelity analysis of multi-head attention")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Master seed (defaults to the plan's).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (defaults to the plan's).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// JSON experiment plan supplying defaults for every command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Floating-point width for model arithmetic.
    #[arg(long, global = true, value_parser = ["32", "64"])]
    precision: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a copy or cycle dataset.
    GenData {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long, default_value_t = mhgraph::taskdata::DEFAULT_COUNT)]
        count: usize,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        vocab: Option<usize>,
        /// Output file (default `<out-dir>/data/<task>.bin`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on a dataset file and write a checkpoint and log.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        heads: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Also write a checkpoint every this many epochs.
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Run an estimator over a checkpoint's attention or over attention dumps.
    Analyze(AnalyzeArgs),
    /// Best single head against the combined operator.
    CompareHeads {
        /// Attention dump stem; the built-in four-node example when absent.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Check the worked examples against their expected values.
    VerifyExamples,
    /// Merge metric tables and write table, figure and JSON reports.
    Report {
        /// Metric table files (`.json` sidecars or their `.csv` siblings).
        #[arg(required = true)]
        tables: Vec<PathBuf>,
    },
    /// Run a whole experiment plan end to end.
    RunPlan {
        /// Use the full-scale schedule instead of the reduced one.
        #[arg(long)]
        full: bool,
    },
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(value_enum)]
    kind: AnalysisArg,
    #[arg(long, required_unless_present = "dump")]
    checkpoint: Option<PathBuf>,
    #[arg(long, required_unless_present = "dump")]
    data: Option<PathBuf>,
    /// Analyze existing attention dumps instead of a checkpoint.
    #[arg(long, conflicts_with_all = ["checkpoint", "data"])]
    dump: Vec<PathBuf>,
    /// 1-based layers, comma separated.
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    all_samples: bool,
    #[arg(long, value_enum)]
    aggregation: Option<AggregationArg>,
    #[arg(long)]
    sims: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Read fidelity off the transposed head sum.
    #[arg(long)]
    transposed: bool,
    /// Column-normalize each head before combining walk matrices.
    #[arg(long)]
    normalize_per_head: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Copy,
    Cycle,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Copy => Task::Copy,
            TaskArg::Cycle => Task::Cycle,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalysisArg {
    Mixing,
    Fidelity,
    CompareHeads,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Mean,
    Max,
}

fn plan_from(common: &Common) -> Result<ExperimentPlan> {
    let mut plan = match &common.config {
        Some(path) => ExperimentPlan::load(path)?,
        None => ExperimentPlan::default(),
    };
    if let Some(seed) = common.seed {
        plan.seed = seed;
    }
    if let Some(dir) = &common.out_dir {
        plan.out_dir = dir.clone();
    }
    if let Some(p) = &common.precision {
        plan.precision = if p == "64" { Precision::Double } else { Precision::Single };
    }
    Ok(plan)
}

fn main() -> ExitCode {
    // clap exits with 2 on bad usage, which is reserved for failed verification
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let plan = plan_from(&cli.common)?;
    match cli.command {
        Command::GenData {
            task,
            count,
            n,
            vocab,
            out,
        } => {
            let task = Task::from(task);
            let ds = generate_task(
                task,
                count,
                n.unwrap_or(plan.model.seq_len),
                vocab.unwrap_or(plan.model.vocab),
                plan.seed,
            )?;
            ds.verify()?;
            let path = out.unwrap_or_else(|| plan.dataset_path(task));
            ds.save(&path)?;
            println!("{} {}", path.display(), file_sha256(&path)?);
        }
        Command::Train {
            data,
            heads,
            epochs,
            batch_size,
            lr,
            checkpoint_every,
        } => {
            let ds = Dataset::load(&data)?;
            let mut schedule = plan.schedule.clone();
            schedule.epochs = epochs.unwrap_or(schedule.epochs);
            schedule.batch_size = batch_size.unwrap_or(schedule.batch_size);
            schedule.lr = lr.unwrap_or(schedule.lr);
            schedule.checkpoint_every = checkpoint_every.unwrap_or(schedule.checkpoint_every);
            let cfg = ModelConfig {
                seq_len: ds.seq_len(),
                vocab: ds.vocab(),
                ..plan.run_config(heads)
            };
            let dir = plan.out_dir.join(run_name(ds.task(), heads));
            match plan.precision {
                Precision::Single => train_cmd::<f32>(&cfg, &ds, &schedule, &dir, &data)?,
                Precision::Double => train_cmd::<f64>(&cfg, &ds, &schedule, &dir, &data)?,
            }
        }
        Command::Analyze(args) => analyze_cmd(plan, args)?,
        Command::CompareHeads { dump, horizon } => {
            let horizon = horizon.unwrap_or(plan.analysis.horizon);
            let cmp = match dump {
                Some(stem) => {
                    let (_, records) = read_dump(&stem)?;
                    per_head_vs_combined(&records, horizon, plan.analysis.fidelity_form)?
                }
                None => compare_head_system(&example_two(), horizon)?,
            };
            print_comparison(&cmp);
        }
        Command::VerifyExamples => {
            let results = verify_examples();
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(Error::Verification(format!("{failed} example check(s) failed")));
            }
        }
        Command::Report { tables } => {
            let mut merged = MetricTable::default();
            for t in &tables {
                merged.merge(MetricTable::load(t)?)?;
            }
            for f in write_report(&merged, &plan.out_dir.join("report"))? {
                println!("{}", f.display());
            }
        }
        Command::RunPlan { full } => {
            let plan = if full && cli.common.config.is_none() {
                ExperimentPlan {
                    seed: plan.seed,
                    out_dir: plan.out_dir.clone(),
                    precision: plan.precision,
                    ..ExperimentPlan::full_scale()
                }
            } else {
                plan
            };
            let outcome = run_plan(&plan, |line| eprintln!("{line}"))?;
            println!("{}", plan.out_dir.join("metrics.csv").display());
            println!("{} rows", outcome.table.rows().len());
        }
    }
    Ok(())
}

fn train_cmd<T: Scalar>(
    cfg: &ModelConfig,
    ds: &Dataset,
    schedule: &mhgraph::microformer::Schedule,
    dir: &Path,
    data: &Path,
) -> Result<()> {
    let ckpt = dir.join("checkpoint");
    let run = train_with_hook::<T, _>(cfg, ds, schedule, |model, stats| {
        save_checkpoint(model, &ckpt)?;
        eprintln!("epoch {}: loss {:.4}, accuracy {:.4}", stats.epoch + 1, stats.loss, stats.accuracy);
        Ok(())
    })?;
    mhgraph::io::write_atomic(&dir.join("train_log.json"), &serde_json::to_vec_pretty(&run.log)?)?;
    if let Some(epoch) = run.log.diverged_at {
        save_checkpoint(&run.model, &ckpt)?;
        return Err(Error::Diverged {
            epoch,
            loss: f64::NAN,
        });
    }
    let hash = save_checkpoint(&run.model, &ckpt)?;
    let provenance = Provenance {
        checkpoint_hash: hash,
        dataset_checksum: file_sha256(data)?,
        config_hash: cfg.hash(),
    };
    mhgraph::io::write_atomic(&dir.join("provenance.json"), &serde_json::to_vec_pretty(&provenance)?)?;
    let (loss, acc) = evaluate(&run.model, ds)?;
    println!("checkpoint {}", ckpt.display());
    println!("parameters {}", run.model.parameter_count());
    println!("train loss {:.6}  eval loss {loss:.6}  eval accuracy {acc:.4}", run.log.final_loss().unwrap_or(f64::NAN));
    Ok(())
}

fn analyze_cmd(mut plan: ExperimentPlan, args: AnalyzeArgs) -> Result<()> {
    let cfg = &mut plan.analysis;
    if args.all_samples {
        cfg.samples = None;
    } else if let Some(s) = args.samples {
        cfg.samples = Some(s);
    }
    if let Some(a) = args.aggregation {
        cfg.mixing.aggregation = match a {
            AggregationArg::Mean => Aggregation::Mean,
            AggregationArg::Max => Aggregation::Max,
        };
    }
    if args.normalize_per_head {
        cfg.mixing.normalization = ForwardNormalization::NormalizeThenCombine;
    }
    cfg.mixing.simulations = args.sims.unwrap_or(cfg.mixing.simulations);
    cfg.mixing.max_steps = args.max_steps.unwrap_or(cfg.mixing.max_steps);
    cfg.horizon = args.horizon.unwrap_or(cfg.horizon);
    if args.transposed {
        cfg.fidelity_form = FidelityForm::Transposed;
    }
    if let Some(layers) = args.layers {
        plan.layers = layers;
    }
    plan.validate()?;
    let analysis = match args.kind {
        AnalysisArg::Mixing => Analysis::Mixing,
        AnalysisArg::Fidelity => Analysis::Fidelity,
        AnalysisArg::CompareHeads => Analysis::CompareHeads,
    };

    let stem = plan.out_dir.join("metrics");
    let mut table = if stem.with_extension("json").exists() {
        MetricTable::load(&stem)?
    } else {
        MetricTable::default()
    };

    if args.dump.is_empty() {
        let (ckpt, data) = (args.checkpoint.expect("required"), args.data.expect("required"));
        let ds = Dataset::load(&data)?;
        let (model, hash) = load_checkpoint::<f32>(&ckpt)?;
        let heads = model.config().heads;
        if let Some(&l) = plan.layers.iter().find(|&&l| l > model.config().layers) {
            return Err(Error::Contract(format!("layer {l} out of range for this checkpoint")));
        }
        table.set_provenance(
            run_name(ds.task(), heads),
            Provenance {
                checkpoint_hash: hash,
                dataset_checksum: file_sha256(&data)?,
                config_hash: model.config().hash(),
            },
        );
        let records = analyze_checkpoint(&plan, &model, &ds)?;
        for (layer, recs) in records {
            for row in analyze_records(ds.task(), layer, &recs, analysis, &plan.analysis, plan.seed)? {
                print_row(&row);
                table.insert(row)?;
            }
        }
    } else {
        for stem in &args.dump {
            let (manifest, records) = read_dump(stem)?;
            let task: Task = manifest.task.parse()?;
            let limit = plan.analysis.samples.unwrap_or(records.len()).min(records.len());
            for row in analyze_records(task, manifest.layer, &records[..limit], analysis, &plan.analysis, plan.seed)? {
                print_row(&row);
                table.insert(row)?;
            }
        }
    }
    table.save(&stem)?;
    println!("{}", stem.with_extension("csv").display());
    Ok(())
}

/// Dumps each selected layer's attention and returns the records as read back.
fn analyze_checkpoint(
    plan: &ExperimentPlan,
    model: &MicroformerModel<f32>,
    ds: &Dataset,
) -> Result<Vec<(usize, Vec<mhgraph::record::AttentionRecord>)>> {
    let limit = plan.analysis.samples.unwrap_or(ds.len());
    let by_layer = mhgraph::microformer::extract_all_layers(model, ds, limit)?;
    let heads = model.config().heads;
    let mut out = Vec::new();
    for &layer in &plan.layers {
        let stem = plan.dump_stem(ds.task(), heads, layer);
        mhgraph::record::write_dump(&stem, ds.task().name(), layer, &by_layer[layer - 1])?;
        out.push((layer, read_dump(&stem)?.1));
    }
    Ok(out)
}

fn print_row(r: &mhgraph::runner::MetricRow) {
    println!(
        "{} heads={} layer={} {} = {:.4} ± {:.4} (n={})",
        r.task,
        r.heads,
        r.layer,
        r.metric.name(),
        r.mean,
        r.std,
        r.n_samples
    );
}

fn print_comparison(c: &HeadComparison) {
    for (h, v) in c.per_head.iter().enumerate() {
        println!("head {}: {v:.6}", h + 1);
    }
    println!("best head {} = {:.6}", c.best_head + 1, c.best);
    println!("combined = {:.6}", c.combined);
    println!("synergy = {}", c.synergy);
}
