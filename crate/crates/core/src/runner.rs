//! Experiment orchestration: plans, metric tables, reports and the built-in
//! example checks. The CLI is a thin layer over this module.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attngraph::{
    combine_heads, diffusion_matrix, example_one, example_two, verify_sink_stationarity, walk_matrix,
    FeedforwardGraph, HeadSystem, Orientation, TransitionMatrix,
};
use crate::error::{Error, Result};
use crate::fidelity::{
    compare_head_system, dataset_fidelity_proxy, minimax_fidelity, per_head_vs_combined, FidelityForm,
    DEFAULT_HORIZON,
};
use crate::io::{file_sha256, write_atomic};
use crate::microformer::{
    extract_all_layers, save_checkpoint, train, MicroformerModel, ModelConfig, Scalar, Schedule, TrainLog,
};
use crate::mixing::{exact_mixing_time, mc_hitting_proxy, MixingConfig, MixingTime};
use crate::numerics::{matmul, Matrix, Precision, RngStream};
use crate::record::{read_dump, write_dump, AttentionRecord};
use crate::taskdata::{generate_task, Dataset, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Dataset samples per analysis pass; `None` uses all of them.
    pub samples: Option<usize>,
    pub mixing: MixingConfig,
    pub horizon: usize,
    pub fidelity_form: FidelityForm,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            samples: Some(200),
            mixing: MixingConfig::default(),
            horizon: DEFAULT_HORIZON,
            fidelity_form: FidelityForm::RowSum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub tasks: Vec<Task>,
    pub heads: Vec<usize>,
    /// 1-based layer indices to analyze.
    pub layers: Vec<usize>,
    /// Architecture; `heads` and `seed` are overridden per run.
    pub model: ModelConfig,
    pub train_samples: usize,
    pub schedule: Schedule,
    pub analysis: AnalysisConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub precision: Precision,
}

impl Default for ExperimentPlan {
    /// Reduced-scale grid: 1000 samples, 50 epochs, 200 analyzed samples.
    fn default() -> Self {
        Self {
            tasks: vec![Task::Copy, Task::Cycle],
            heads: vec![1, 4, 8, 16],
            layers: vec![1, 2, 3, 4],
            model: ModelConfig::default(),
            train_samples: 1000,
            schedule: Schedule::reduced(),
            analysis: AnalysisConfig::default(),
            seed: 0,
            out_dir: PathBuf::from("out"),
            precision: Precision::Single,
        }
    }
}

impl ExperimentPlan {
    /// 5000 samples, 200 epochs, every sample analyzed.
    pub fn full_scale() -> Self {
        Self {
            train_samples: crate::taskdata::DEFAULT_COUNT,
            schedule: Schedule::default(),
            analysis: AnalysisConfig {
                samples: None,
                ..AnalysisConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read(path)?;
        let plan: Self = serde_json::from_slice(&text).map_err(|e| Error::format(path, e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() || self.heads.is_empty() || self.layers.is_empty() {
            return Err(Error::contract("plan needs at least one task, head count and layer"));
        }
        if let Some(&l) = self.layers.iter().find(|&&l| l == 0 || l > self.model.layers) {
            return Err(Error::contract(format!("layer {l} outside 1..={}", self.model.layers)));
        }
        for &h in &self.heads {
            self.run_config(h).validate()?;
        }
        if self.train_samples == 0 {
            return Err(Error::contract("plan needs at least one training sample"));
        }
        if self.analysis.samples == Some(0) || self.analysis.horizon == 0 {
            return Err(Error::contract("analysis needs samples and a positive horizon"));
        }
        self.schedule.validate()?;
        self.analysis.mixing.validate()
    }

    pub fn run_config(&self, heads: usize) -> ModelConfig {
        ModelConfig {
            heads,
            seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn dataset_path(&self, task: Task) -> PathBuf {
        self.out_dir.join("data").join(format!("{task}.bin"))
    }

    pub fn checkpoint_dir(&self, task: Task, heads: usize) -> PathBuf {
        self.out_dir.join("checkpoints").join(run_name(task, heads))
    }

    pub fn log_path(&self, task: Task, heads: usize) -> PathBuf {
        self.out_dir.join("logs").join(format!("{}.json", run_name(task, heads)))
    }

    pub fn dump_stem(&self, task: Task, heads: usize, layer: usize) -> PathBuf {
        self.out_dir
            .join("attention")
            .join(format!("{}-l{layer}", run_name(task, heads)))
    }
}

pub fn run_name(task: Task, heads: usize) -> String {
    format!("{task}-h{heads}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MixingSteps,
    PhiMin,
    PhiMinBestHead,
    PhiMinCombined,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::MixingSteps,
        Metric::PhiMin,
        Metric::PhiMinBestHead,
        Metric::PhiMinCombined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::MixingSteps => "mixing_steps",
            Metric::PhiMin => "phi_min",
            Metric::PhiMinBestHead => "phi_min_best_head",
            Metric::PhiMinCombined => "phi_min_combined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub task: Task,
    pub heads: usize,
    /// 1-based.
    pub layer: usize,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub n_samples: usize,
    /// Mixing rows only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub censored_fraction: Option<f64>,
    /// Best-head rows only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_head: Option<usize>,
}

type RowKey = (Task, usize, usize, Metric);

impl MetricRow {
    fn key(&self) -> RowKey {
        (self.task, self.heads, self.layer, self.metric)
    }
}

/// Hashes tying a (task, heads) run to its inputs and outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint_hash: String,
    pub dataset_checksum: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    rows: Vec<MetricRow>,
    /// Keyed by run name, e.g. `copy-h16`.
    provenance: BTreeMap<String, Provenance>,
}

const CSV_HEADER: &str = "task,heads,layer,metric,mean,std,n_samples,censored_fraction,best_head";

impl MetricTable {
    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn provenance(&self) -> &BTreeMap<String, Provenance> {
        &self.provenance
    }

    /// Inserts a row, replacing any row with the same key; rows stay sorted.
    pub fn insert(&mut self, row: MetricRow) -> Result<()> {
        if !(row.std >= 0.0) || !row.mean.is_finite() {
            return Err(Error::contract(format!("invalid statistics in row {:?}", row.key())));
        }
        match self.rows.binary_search_by(|r| r.key().cmp(&row.key())) {
            Ok(i) => self.rows[i] = row,
            Err(i) => self.rows.insert(i, row),
        }
        Ok(())
    }

    pub fn set_provenance(&mut self, run: String, p: Provenance) {
        self.provenance.insert(run, p);
    }

    pub fn merge(&mut self, other: MetricTable) -> Result<()> {
        for r in other.rows {
            self.insert(r)?;
        }
        self.provenance.extend(other.provenance);
        Ok(())
    }

    pub fn get(&self, task: Task, heads: usize, layer: usize, metric: Metric) -> Option<&MetricRow> {
        self.rows
            .binary_search_by(|r| r.key().cmp(&(task, heads, layer, metric)))
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.task,
                r.heads,
                r.layer,
                r.metric.name(),
                r.mean,
                r.std,
                r.n_samples,
                r.censored_fraction.map(|c| c.to_string()).unwrap_or_default(),
                r.best_head.map(|c| c.to_string()).unwrap_or_default(),
            );
        }
        out
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar with provenance.
    pub fn save(&self, stem: &Path) -> Result<()> {
        write_atomic(&stem.with_extension("csv"), self.to_csv().as_bytes())?;
        write_atomic(&stem.with_extension("json"), &serde_json::to_vec_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = path.with_extension("json");
        let text = std::fs::read(&json)?;
        let table: Self = serde_json::from_slice(&text).map_err(|e| Error::format(&json, e.to_string()))?;
        let mut sorted = Self::default();
        sorted.merge(table)?;
        Ok(sorted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    Mixing,
    Fidelity,
    CompareHeads,
}

impl Analysis {
    pub const ALL: [Analysis; 3] = [Analysis::Mixing, Analysis::Fidelity, Analysis::CompareHeads];
}

/// Runs one estimator over one layer's records and returns its rows.
pub fn analyze_records(
    task: Task,
    layer: usize,
    records: &[AttentionRecord],
    analysis: Analysis,
    cfg: &AnalysisConfig,
    seed: u64,
) -> Result<Vec<MetricRow>> {
    let heads = records
        .first()
        .ok_or_else(|| Error::contract("no attention records to analyze"))?
        .heads();
    let row = |metric, mean, std| MetricRow {
        task,
        heads,
        layer,
        metric,
        mean,
        std,
        n_samples: records.len(),
        censored_fraction: None,
        best_head: None,
    };
    Ok(match analysis {
        Analysis::Mixing => {
            let est = mc_hitting_proxy(records, &cfg.mixing, seed)?;
            vec![MetricRow {
                censored_fraction: Some(est.censored_fraction),
                ..row(Metric::MixingSteps, est.value(), est.std)
            }]
        }
        Analysis::Fidelity => {
            let s = dataset_fidelity_proxy(records, cfg.horizon, cfg.fidelity_form)?;
            vec![row(Metric::PhiMin, s.mean, s.std)]
        }
        Analysis::CompareHeads => {
            let c = per_head_vs_combined(records, cfg.horizon, cfg.fidelity_form)?;
            vec![
                MetricRow {
                    best_head: Some(c.best_head),
                    ..row(Metric::PhiMinBestHead, c.best, c.best_std())
                },
                row(Metric::PhiMinCombined, c.combined, c.combined_std),
            ]
        }
    })
}

/// What a finished plan produced.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub table: MetricTable,
    pub logs: BTreeMap<String, TrainLog>,
}

/// Runs the whole grid: data, training, attention dumps, analysis and report.
///
/// `progress` receives one line per finished stage.
pub fn run_plan(plan: &ExperimentPlan, mut progress: impl FnMut(&str)) -> Result<PlanOutcome> {
    plan.validate()?;
    std::fs::create_dir_all(&plan.out_dir)?;
    write_atomic(&plan.out_dir.join("plan.json"), &serde_json::to_vec_pretty(plan)?)?;
    let mut table = MetricTable::default();
    let mut logs = BTreeMap::new();
    for &task in &plan.tasks {
        let n = plan.model.seq_len;
        let ds = generate_task(task, plan.train_samples, n, plan.model.vocab, plan.seed)?;
        let data_path = plan.dataset_path(task);
        ds.save(&data_path)?;
        let checksum = file_sha256(&data_path)?;
        progress(&format!("dataset {} sha256 {checksum}", data_path.display()));
        for &heads in &plan.heads {
            let log = match plan.precision {
                Precision::Single => run_one::<f32>(plan, task, heads, &ds, &checksum, &mut table)?,
                Precision::Double => run_one::<f64>(plan, task, heads, &ds, &checksum, &mut table)?,
            };
            progress(&format!(
                "{}: final loss {:.4}, accuracy {:.4}, {:.0}s",
                run_name(task, heads),
                log.final_loss().unwrap_or(f64::NAN),
                log.final_accuracy().unwrap_or(f64::NAN),
                log.wall_time_secs
            ));
            logs.insert(run_name(task, heads), log);
            table.save(&plan.out_dir.join("metrics"))?;
        }
    }
    write_report(&table, &plan.out_dir.join("report"))?;
    Ok(PlanOutcome { table, logs })
}

fn run_one<T: Scalar>(
    plan: &ExperimentPlan,
    task: Task,
    heads: usize,
    ds: &Dataset,
    dataset_checksum: &str,
    table: &mut MetricTable,
) -> Result<TrainLog> {
    let cfg = plan.run_config(heads);
    let run = train::<T>(&cfg, ds, &plan.schedule)?;
    if let Some(epoch) = run.log.diverged_at {
        save_checkpoint(&run.model, &plan.checkpoint_dir(task, heads))?;
        return Err(Error::Diverged {
            epoch,
            loss: f64::NAN,
        });
    }
    let checkpoint_hash = save_checkpoint(&run.model, &plan.checkpoint_dir(task, heads))?;
    write_atomic(&plan.log_path(task, heads), &serde_json::to_vec_pretty(&run.log)?)?;
    table.set_provenance(
        run_name(task, heads),
        Provenance {
            checkpoint_hash,
            dataset_checksum: dataset_checksum.to_string(),
            config_hash: cfg.hash(),
        },
    );
    analyze_model(plan, task, &run.model, ds, table)?;
    Ok(run.log)
}

/// Dumps the selected layers' attention to disk, reads the dumps back and
/// runs every estimator on them.
pub fn analyze_model<T: Scalar>(
    plan: &ExperimentPlan,
    task: Task,
    model: &MicroformerModel<T>,
    ds: &Dataset,
    table: &mut MetricTable,
) -> Result<()> {
    let heads = model.config().heads;
    let limit = plan.analysis.samples.unwrap_or(ds.len());
    let by_layer = extract_all_layers(model, ds, limit)?;
    for &layer in &plan.layers {
        let stem = plan.dump_stem(task, heads, layer);
        write_dump(&stem, task.name(), layer, &by_layer[layer - 1])?;
        let (_, records) = read_dump(&stem)?;
        for analysis in Analysis::ALL {
            for row in analyze_records(task, layer, &records, analysis, &plan.analysis, plan.seed)? {
                table.insert(row)?;
            }
        }
    }
    Ok(())
}

fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

/// Table-shaped CSVs (heads × layers, `mean ± std` to 4 decimals), per-figure
/// series at full precision, synergy cells, and `report.json` with everything.
pub fn write_report(table: &MetricTable, dir: &Path) -> Result<Vec<PathBuf>> {
    if table.rows().is_empty() {
        return Err(Error::contract("no metric rows to report"));
    }
    let mut written = Vec::new();
    let mut tasks: Vec<Task> = table.rows().iter().map(|r| r.task).collect();
    tasks.sort_unstable();
    tasks.dedup();
    let mut heads: Vec<usize> = table.rows().iter().map(|r| r.heads).collect();
    heads.sort_unstable();
    heads.dedup();
    let mut layers: Vec<usize> = table.rows().iter().map(|r| r.layer).collect();
    layers.sort_unstable();
    layers.dedup();

    let mut synergy_json = Vec::new();
    for &task in &tasks {
        for metric in Metric::ALL {
            if !table.rows().iter().any(|r| r.task == task && r.metric == metric) {
                continue;
            }
            let mut t = String::from("heads");
            for l in &layers {
                let _ = write!(t, ",L{l}");
            }
            t.push('\n');
            let mut fig = String::from("heads,layer,mean,std\n");
            for &h in &heads {
                let _ = write!(t, "{h}");
                for &l in &layers {
                    match table.get(task, h, l, metric) {
                        Some(r) => {
                            let _ = write!(t, ",{} ± {}", fmt4(r.mean), fmt4(r.std));
                            let _ = writeln!(fig, "{h},{l},{},{}", r.mean, r.std);
                        }
                        None => t.push(','),
                    }
                }
                t.push('\n');
            }
            let name = format!("{}-{}", metric.name(), task);
            let tpath = dir.join("tables").join(format!("{name}.csv"));
            let fpath = dir.join("figures").join(format!("{name}.csv"));
            write_atomic(&tpath, t.as_bytes())?;
            write_atomic(&fpath, fig.as_bytes())?;
            written.push(tpath);
            written.push(fpath);
        }

        let mut syn = String::from("heads,layer,best_head,best,combined,synergy\n");
        let mut any = false;
        for &h in &heads {
            for &l in &layers {
                let (Some(b), Some(c)) = (
                    table.get(task, h, l, Metric::PhiMinBestHead),
                    table.get(task, h, l, Metric::PhiMinCombined),
                ) else {
                    continue;
                };
                any = true;
                let synergy = c.mean > b.mean;
                let _ = writeln!(
                    syn,
                    "{h},{l},{},{},{},{synergy}",
                    b.best_head.map(|x| x.to_string()).unwrap_or_default(),
                    b.mean,
                    c.mean
                );
                synergy_json.push(SynergyCell {
                    task,
                    heads: h,
                    layer: l,
                    best: b.mean,
                    combined: c.mean,
                    synergy,
                });
            }
        }
        if any {
            let path = dir.join(format!("synergy-{task}.csv"));
            write_atomic(&path, syn.as_bytes())?;
            written.push(path);
        }
    }
    let report = Report {
        rows: table.rows(),
        synergy: &synergy_json,
        provenance: table.provenance(),
    };
    let path = dir.join("report.json");
    write_atomic(&path, &serde_json::to_vec_pretty(&report)?)?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynergyCell {
    pub task: Task,
    pub heads: usize,
    pub layer: usize,
    pub best: f64,
    pub combined: f64,
    pub synergy: bool,
}

#[derive(Serialize)]
struct Report<'a> {
    rows: &'a [MetricRow],
    synergy: &'a [SynergyCell],
    provenance: &'a BTreeMap<String, Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn matrix_equals(m: &Matrix, rows: &[&[f64]]) -> bool {
    rows.iter()
        .enumerate()
        .all(|(i, r)| r.iter().enumerate().all(|(j, &v)| m.get(i, j) == v))
}

/// The worked examples and a small stationarity sweep, checked against
/// their known values.
pub fn verify_examples() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut push = |name, r: Result<(bool, String)>| {
        out.push(match r {
            Ok((passed, detail)) => check(name, passed, detail),
            Err(e) => check(name, false, e.to_string()),
        })
    };

    push("example-1 head matrices from graphs", (|| {
        let g1 = FeedforwardGraph::new(3, [(0, 1)])?;
        let g2 = FeedforwardGraph::new(3, [(1, 2)])?;
        let d1 = diffusion_matrix(&g1)?;
        let d2 = diffusion_matrix(&g2)?;
        let ok = matrix_equals(d1.matrix(), &[&[1.0, 0.0, 0.0], &[0.5, 0.5, 0.0], &[0.0, 0.0, 1.0]])
            && matrix_equals(d2.matrix(), &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.5, 0.5]]);
        Ok((ok, "rows [1,0,0],[½,½,0],[0,0,1] and [1,0,0],[0,1,0],[0,½,½]".into()))
    })());

    push("example-1 cross-head term", (|| {
        let hs = example_one(0.5)?;
        let prod = matmul(hs.heads()[1].matrix(), hs.heads()[0].matrix())?;
        let v = prod.get(2, 0);
        Ok((v == 0.25, format!("(Δ2·Δ1)[τ,u] = {v}")))
    })());

    push("example-1 single heads never reach the sink from u", (|| {
        let hs = example_one(0.5)?;
        let mut worst: f64 = 0.0;
        for h in hs.heads() {
            let (phi, _) = crate::fidelity::node_fidelity(h, 0, DEFAULT_HORIZON)?;
            worst = worst.max(phi);
        }
        Ok((worst == 0.0, format!("max single-head φ_u = {worst}")))
    })());

    push("example-1 combined square", (|| {
        let mut worst: f64 = 0.0;
        for beta in [0.1, 0.25, 0.5, 0.7, 0.9] {
            let combined = combine_heads(&example_one(beta)?)?;
            let v = combined.matrix().power(2)?.get(2, 0);
            worst = worst.max((v - beta * (1.0 - beta) * 0.25).abs());
        }
        Ok((worst <= 1e-12, format!("max |(Δ̄²)[τ,u] − β1β2/4| = {worst:e}")))
    })());

    push("example-2 combined operator", (|| {
        let combined = combine_heads(&example_two())?;
        let ok = matrix_equals(
            combined.matrix(),
            &[
                &[0.75, 0.25, 0.0, 0.0],
                &[0.25, 0.75, 0.0, 0.0],
                &[0.25, 0.25, 0.5, 0.0],
                &[0.0, 0.0, 0.5, 0.5],
            ],
        );
        Ok((ok, "rows [¾,¼,0,0],[¼,¾,0,0],[¼,¼,½,0],[0,0,½,½]".into()))
    })());

    push("example-2 minimax fidelities", (|| {
        let hs = example_two();
        let c = compare_head_system(&hs, DEFAULT_HORIZON)?;
        let ok = c.per_head.iter().all(|&v| close(v, 0.375, 1e-12)) && close(c.combined, 0.5, 1e-12) && c.synergy;
        Ok((ok, format!("per head {:?}, combined {}", c.per_head, c.combined)))
    })());

    push("example-2 combined reaches every node", (|| {
        let p = minimax_fidelity(&combine_heads(&example_two())?, DEFAULT_HORIZON)?;
        Ok((p.peaks.iter().all(|&x| x >= 0.5 - 1e-12), format!("peaks {:?}", p.peaks)))
    })());

    push("chain of five mixes in four steps", (|| {
        let w = walk_matrix(&FeedforwardGraph::chain(5));
        let t = exact_mixing_time(&w, &MixingConfig::default())?;
        Ok((t == MixingTime::Mixed(4), format!("{t:?}")))
    })());

    push("sink is the only stationary point (random graphs)", (|| {
        let mut rng = RngStream::new(2024, 1);
        for k in 0..50 {
            let n = 2 + k % 11;
            let g = FeedforwardGraph::random(n, 0.3, &mut rng);
            let report = verify_sink_stationarity(&walk_matrix(&g), 4096, 1e-9)?;
            if !report.converged() {
                return Ok((false, format!("graph {k} (n={n}) did not converge")));
            }
        }
        Ok((true, "50 graphs converge to the sink".into()))
    })());

    push("sink is the only stationary point (3-head combinations)", (|| {
        let mut rng = RngStream::new(2024, 2);
        for k in 0..20 {
            let n = 3 + k % 9;
            let heads = (0..3)
                .map(|_| walk_matrix(&FeedforwardGraph::random(n, 0.3, &mut rng)))
                .collect::<Vec<TransitionMatrix>>();
            let raw: Vec<f64> = (0..3).map(|_| rng.uniform() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            let hs = HeadSystem::new(heads, raw.iter().map(|x| x / s).collect())?;
            let w = combine_heads(&hs)?;
            debug_assert_eq!(w.orientation(), Orientation::Walk);
            if !verify_sink_stationarity(&w, 4096, 1e-9)?.converged() {
                return Ok((false, format!("combination {k} did not converge")));
            }
        }
        Ok((true, "20 combinations converge to the sink".into()))
    })());

    out
}
