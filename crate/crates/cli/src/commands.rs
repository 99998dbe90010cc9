//! Subcommand implementations. Every command computes its outputs in memory
//! and only then creates the output directory and writes files, so a failed
//! validation leaves nothing behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use cyclelife::baseline::{fit_variance_model, predict_variance_model, VarianceModel};
use cyclelife::dataset::{
    load_manifest, proportional_counts, read_cell, split_dataset, synth_cohort, write_dataset, CellRecord,
    DatasetSplit, SplitName, SplitSpec,
};
use cyclelife::eval::{
    evaluate_artifact, fit_model, split_metrics, sweep_terminal_cycles, terminal_cycles, write_plot_rows, EvalReport,
    PredictionSet, SeedResult, SplitMetrics, METRICS_HEADER, PLOT_HEADER,
};
use cyclelife::features::{apply_scaler, build_sequence, check_window_coverage, write_features_csv, VoltageGrid, Window};
use cyclelife::nn::{grad_check_with, gradcheck_problem, predict, Architecture, GradCheckReport, ModelArtifact};
use cyclelife::optim::TrainHistory;
use cyclelife::rng;

use crate::config::RunConfig;

pub const MODEL_FILE: &str = "model.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PLOT_FILE: &str = "sweep.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const BASELINE_FILE: &str = "baseline.json";
pub const BASELINE_METRICS_FILE: &str = "baseline_metrics.csv";

/// Exit code for an error: 2 for I/O or schema problems, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<cyclelife::Error>() {
            return if e.is_io_or_schema() { 2 } else { 1 };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// CSV body preceded by the config echo comment line and a header.
fn csv_with_echo(cfg: &RunConfig, header: &str, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 256);
    writeln!(out, "# config: {}", cfg.echo()).unwrap();
    writeln!(out, "{header}").unwrap();
    out.extend_from_slice(body);
    out
}

#[derive(Debug)]
pub struct SynthOutcome {
    pub manifest: PathBuf,
    pub split: DatasetSplit,
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthOutcome> {
    let count = cfg.synth.count;
    if count == 0 {
        bail!(cyclelife::Error::InvalidConfig("synth count must be at least 1".into()));
    }
    let cells = synth_cohort(count, &cfg.synth.ranges, cfg.seed)?;
    let (train, primary, secondary) = proportional_counts(count);
    let split = split_dataset(
        &cells,
        &SplitSpec::Counts { train, primary, secondary, seed: rng::derive_seed(cfg.seed, &[u64::MAX]) },
    )?;
    ensure_dir(&cfg.out)?;
    let manifest = write_dataset(&cfg.out, &cells, &split)?;
    Ok(SynthOutcome { manifest, split })
}

fn load_data(cfg: &RunConfig) -> Result<(Vec<CellRecord>, DatasetSplit)> {
    let path = cfg.data_path()?;
    let data = load_manifest(path).with_context(|| format!("loading dataset {}", path.display()))?;
    Ok(data)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub artifact_path: PathBuf,
    pub history_path: PathBuf,
    pub artifact: ModelArtifact,
    pub history: TrainHistory,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let (cells, split) = load_data(cfg)?;
    let exp = cfg.experiment();
    let (artifact, history) = fit_model(&cells, &split, &exp, cfg.seed)?;
    let bytes = artifact.to_bytes()?;
    let mut hist = Vec::new();
    history.write_csv(&mut hist)?;
    // Header line comes from `write_csv`; prepend only the echo.
    let mut history_csv = Vec::new();
    writeln!(history_csv, "# config: {}", cfg.echo())?;
    history_csv.extend_from_slice(&hist);

    ensure_dir(&cfg.out)?;
    let artifact_path = cfg.out.join(MODEL_FILE);
    let history_path = cfg.out.join(HISTORY_FILE);
    write_file(&artifact_path, &bytes)?;
    write_file(&history_path, &history_csv)?;
    Ok(TrainOutcome { artifact_path, history_path, artifact, history })
}

#[derive(Debug)]
pub enum EvaluateMode {
    /// Evaluate a saved model on every split.
    Artifact(PathBuf),
    /// Train `k` seeds per terminal cycle and report mean ± std.
    Sweep,
}

#[derive(Debug)]
pub struct EvaluateOutcome {
    pub reports: Vec<EvalReport>,
    pub metrics_path: PathBuf,
    pub plot_path: Option<PathBuf>,
}

pub fn cmd_evaluate(cfg: &RunConfig, mode: &EvaluateMode) -> Result<EvaluateOutcome> {
    let (cells, split) = load_data(cfg)?;
    match mode {
        EvaluateMode::Artifact(path) => {
            let artifact = ModelArtifact::load(path).with_context(|| format!("loading model {}", path.display()))?;
            let window = artifact.window.unwrap_or(cfg.train.window);
            let sets = evaluate_artifact(&artifact, &cells, &split, window, cfg.train.execution)?;
            let metrics = split_metrics(&sets)?;
            let label = format!("@{}", window.terminal);
            let report = EvalReport::aggregate(
                label,
                window.terminal,
                false,
                vec![SeedResult { seed: cfg.seed, metrics, final_loss: None }],
            );
            let mut body = Vec::new();
            report.write_metrics_rows(&mut body)?;
            let mut preds = Vec::new();
            for (name, set) in &sets {
                for (id, (p, a)) in split.ids(*name).iter().zip(&set.pairs) {
                    writeln!(preds, "{id},{},{p},{a}", name.as_str())?;
                }
            }
            ensure_dir(&cfg.out)?;
            let metrics_path = cfg.out.join(METRICS_FILE);
            write_file(&metrics_path, &csv_with_echo(cfg, METRICS_HEADER, &body))?;
            write_file(
                &cfg.out.join(PREDICTIONS_FILE),
                &csv_with_echo(cfg, "cell_id,split,predicted,actual", &preds),
            )?;
            Ok(EvaluateOutcome { reports: vec![report], metrics_path, plot_path: None })
        }
        EvaluateMode::Sweep => {
            let s = &cfg.sweep;
            let terminals = terminal_cycles(s.from, s.to, s.step);
            let reports = sweep_terminal_cycles(&cells, &split, &cfg.experiment(), &terminals)?;
            let mut body = Vec::new();
            let mut plot = Vec::new();
            for r in &reports {
                r.write_metrics_rows(&mut body)?;
            }
            write_plot_rows(&reports, &mut plot)?;
            ensure_dir(&cfg.out)?;
            let metrics_path = cfg.out.join(METRICS_FILE);
            let plot_path = cfg.out.join(PLOT_FILE);
            write_file(&metrics_path, &csv_with_echo(cfg, METRICS_HEADER, &body))?;
            write_file(&plot_path, &csv_with_echo(cfg, PLOT_HEADER, &plot))?;
            Ok(EvaluateOutcome { reports, metrics_path, plot_path: Some(plot_path) })
        }
    }
}

#[derive(Debug)]
pub struct BaselineOutcome {
    pub model: VarianceModel,
    pub metrics: Vec<SplitMetrics>,
    pub predictions: Vec<(SplitName, PredictionSet)>,
    pub model_path: PathBuf,
}

/// Baseline predictions on every non-empty split.
pub fn baseline_predictions(
    model: &VarianceModel,
    cells: &[CellRecord],
    split: &DatasetSplit,
    cfg: &RunConfig,
) -> Result<Vec<(SplitName, PredictionSet)>> {
    let grid = VoltageGrid::standard();
    let mut out = Vec::new();
    for name in SplitName::ALL {
        let members = split.resolve(name, cells)?;
        if members.is_empty() {
            continue;
        }
        let predicted = members
            .iter()
            .map(|c| predict_variance_model(model, c, &grid, cfg.baseline.cycles))
            .collect::<cyclelife::Result<Vec<_>>>()?;
        let actual: Vec<f64> = members.iter().map(|c| c.cycle_life as f64).collect();
        out.push((name, PredictionSet::new(name.as_str(), &predicted, &actual)?));
    }
    Ok(out)
}

pub fn cmd_baseline(cfg: &RunConfig) -> Result<BaselineOutcome> {
    let (cells, split) = load_data(cfg)?;
    let grid = VoltageGrid::standard();
    let train = split.resolve(SplitName::Train, &cells)?;
    let model = fit_variance_model(&train, &grid, cfg.baseline.transform, cfg.baseline.cycles)?;
    let predictions = baseline_predictions(&model, &cells, &split, cfg)?;
    let metrics = split_metrics(&predictions)?;
    let mut body = Vec::new();
    let label = format!("variance@{}", cfg.baseline.cycles.c_hi);
    for m in &metrics {
        writeln!(body, "{label},{},rmse,{},0,1", m.split.as_str(), m.rmse)?;
        writeln!(body, "{label},{},mape,{},0,1", m.split.as_str(), m.mape)?;
    }
    ensure_dir(&cfg.out)?;
    let model_path = cfg.out.join(BASELINE_FILE);
    model.save(&model_path)?;
    write_file(&cfg.out.join(BASELINE_METRICS_FILE), &csv_with_echo(cfg, METRICS_HEADER, &body))?;
    Ok(BaselineOutcome { model, metrics, predictions, model_path })
}

#[derive(Debug)]
pub struct GradcheckOutcome {
    pub report: GradCheckReport,
    pub passed: bool,
}

/// Finite-difference check on a seeded random network and sequence with
/// frozen dropout masks. `corrupt` perturbs the analytic gradient as a
/// negative control.
pub fn cmd_gradcheck(cfg: &RunConfig, corrupt: bool) -> Result<GradcheckOutcome> {
    let g = &cfg.gradcheck;
    let arch = Architecture { input_size: g.input_size, lstm1: g.lstm1, lstm2: g.lstm2, dense: g.dense };
    let p = gradcheck_problem(arch, cfg.dropout.resolve(), g.steps, cfg.seed)?;
    let report = grad_check_with(&p.network, &p.features, p.target, &p.masks, g.eps, |grads| {
        if corrupt {
            grads.0.lstm1.recurrent_weights.data.iter_mut().for_each(|x| *x *= 1.5);
        }
    })?;
    Ok(GradcheckOutcome { passed: report.max_relative_error < g.tolerance, report })
}

#[derive(Debug)]
pub struct PredictOutcome {
    pub cell_id: String,
    pub predicted: f64,
    pub window: Window,
}

pub fn cmd_predict(
    model: &Path,
    cell_path: &Path,
    window: Option<Window>,
    csv: Option<&Path>,
    features_csv: Option<&Path>,
) -> Result<PredictOutcome> {
    let artifact = ModelArtifact::load(model).with_context(|| format!("loading model {}", model.display()))?;
    let cell = read_cell(cell_path)?;
    let window = window.or(artifact.window).unwrap_or_default();
    check_window_coverage(&[&cell], window)?;
    let grid = VoltageGrid::standard();
    let raw = build_sequence(&cell, window, &grid)?;
    let sample = apply_scaler(&artifact.scaler, &raw);
    let predicted = artifact.to_cycles(predict(&artifact.network, &sample.features)?);
    if let Some(path) = csv {
        let mut out = Vec::new();
        writeln!(out, "cell_id,start_cycle,terminal_cycle,predicted_cycle_life")?;
        writeln!(out, "{},{},{},{predicted}", cell.cell_id, window.start, window.terminal)?;
        write_file(path, &out)?;
    }
    if let Some(path) = features_csv {
        let mut out = Vec::new();
        write_features_csv(&raw, &grid, &mut out)?;
        write_file(path, &out)?;
    }
    Ok(PredictOutcome { cell_id: cell.cell_id, predicted, window })
}
