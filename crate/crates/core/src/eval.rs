//! RMSE / MAPE, the end-to-end train-and-evaluate pipeline, multi-seed
//! repeat experiments and the terminal-cycle sweep.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{CellRecord, DatasetSplit, SplitName};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::{apply_scaler, build_samples, build_sequence, check_window_coverage, fit_scaler, VoltageGrid, Window};
use crate::nn::{init_network, predict, Architecture, DropoutConfig, ModelArtifact};
use crate::optim::{train, AdamHyper, TrainConfig, TrainHistory};

/// Predicted and actual cycle lives for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub split: String,
    /// `(predicted, actual)`
    pub pairs: Vec<(f64, f64)>,
}

impl PredictionSet {
    pub fn new(split: impl Into<String>, predicted: &[f64], actual: &[f64]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::LengthMismatch(predicted.len(), actual.len()));
        }
        Ok(Self { split: split.into(), pairs: predicted.iter().copied().zip(actual.iter().copied()).collect() })
    }
}

pub fn rmse(preds: &PredictionSet) -> Result<f64> {
    if preds.pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = preds.pairs.len() as f64;
    Ok((preds.pairs.iter().map(|(p, a)| (a - p) * (a - p)).sum::<f64>() / n).sqrt())
}

/// Mean absolute percentage error, in percent.
pub fn mape(preds: &PredictionSet) -> Result<f64> {
    if preds.pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(i) = preds.pairs.iter().position(|&(_, a)| a == 0.0) {
        return Err(Error::ZeroActual(i));
    }
    let n = preds.pairs.len() as f64;
    Ok(100.0 / n * preds.pairs.iter().map(|(p, a)| ((a - p) / a).abs()).sum::<f64>())
}

/// Mean and sample (N - 1) standard deviation; the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// `mean ± std` with one decimal, as in published result tables.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.1} ± {std:.1}")
}

/// Everything needed to train one model and evaluate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub architecture: Architecture,
    pub dropout: DropoutConfig,
    pub train: TrainConfig,
    pub adam: AdamHyper,
    /// Number of seeds per configuration.
    pub k: usize,
    pub base_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::default(),
            dropout: DropoutConfig::default(),
            train: TrainConfig::default(),
            adam: AdamHyper::default(),
            k: 10,
            base_seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Short label such as `@80` or `@80,aug`.
    pub fn label(&self) -> String {
        let aug = if self.train.augmentation.is_some() { ",aug" } else { "" };
        format!("@{}{aug}", self.train.window.terminal)
    }
}

/// Builds and scales the training set, initializes a network from `seed`
/// and trains it with `config.train.seed = seed`.
pub fn fit_model(
    cells: &[CellRecord],
    split: &DatasetSplit,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(ModelArtifact, TrainHistory)> {
    let grid = VoltageGrid::standard();
    let train_cells = split.resolve(SplitName::Train, cells)?;
    if train_cells.is_empty() {
        return Err(Error::InvalidConfig("training split is empty".into()));
    }
    let tc = &config.train;
    check_window_coverage(&train_cells, tc.window)?;
    let raw = build_samples(&train_cells, tc.window, tc.augmentation.as_ref(), &grid)?;
    let scaler = fit_scaler(&raw)?;
    let samples: Vec<_> = raw.iter().map(|s| apply_scaler(&scaler, s)).collect();
    let arch = Architecture { input_size: grid.len(), ..config.architecture };
    let net = init_network(arch, config.dropout, seed)?;
    let train_cfg = TrainConfig { seed, ..tc.clone() };
    let (network, history) = train(net, &samples, &train_cfg, &config.adam)?;
    let artifact = ModelArtifact { network, scaler, target_scale: tc.target_scale, window: Some(tc.window) };
    Ok((artifact, history))
}

/// Predicted cycle life of each cell from its genuine window.
pub fn predict_cells(artifact: &ModelArtifact, cells: &[&CellRecord], window: Window, execution: Execution) -> Result<Vec<f64>> {
    let grid = VoltageGrid::standard();
    execution.try_map(cells.len(), |i| {
        let sample = apply_scaler(&artifact.scaler, &build_sequence(cells[i], window, &grid)?);
        Ok(artifact.to_cycles(predict(&artifact.network, &sample.features)?))
    })
}

/// Prediction sets for every non-empty split.
pub fn evaluate_artifact(
    artifact: &ModelArtifact,
    cells: &[CellRecord],
    split: &DatasetSplit,
    window: Window,
    execution: Execution,
) -> Result<Vec<(SplitName, PredictionSet)>> {
    let mut out = Vec::new();
    for name in SplitName::ALL {
        let members = split.resolve(name, cells)?;
        if members.is_empty() {
            continue;
        }
        check_window_coverage(&members, window)?;
        let predicted = predict_cells(artifact, &members, window, execution)?;
        let actual: Vec<f64> = members.iter().map(|c| c.cycle_life as f64).collect();
        out.push((name, PredictionSet::new(name.as_str(), &predicted, &actual)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMetrics {
    pub split: SplitName,
    pub rmse: f64,
    pub mape: f64,
}

pub fn split_metrics(sets: &[(SplitName, PredictionSet)]) -> Result<Vec<SplitMetrics>> {
    sets.iter()
        .map(|(split, p)| Ok(SplitMetrics { split: *split, rmse: rmse(p)?, mape: mape(p)? }))
        .collect()
}

/// Metrics of one trained seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub metrics: Vec<SplitMetrics>,
    pub final_loss: Option<f64>,
}

/// Trains and evaluates a single seed.
pub fn run_single(cells: &[CellRecord], split: &DatasetSplit, config: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    let annotate = |e: Error| Error::Experiment { seed, config: config.label(), source: Box::new(e) };
    let (artifact, history) = fit_model(cells, split, config, seed).map_err(annotate)?;
    let sets = evaluate_artifact(&artifact, cells, split, config.train.window, config.train.execution).map_err(annotate)?;
    Ok(SeedResult { seed, metrics: split_metrics(&sets)?, final_loss: history.final_loss() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSummary {
    pub split: SplitName,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub mape_mean: f64,
    pub mape_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub terminal_cycle: u32,
    pub augmented: bool,
    pub k: usize,
    pub splits: Vec<SplitSummary>,
    pub per_seed: Vec<SeedResult>,
}

impl EvalReport {
    /// Aggregates per-seed results in seed order.
    pub fn aggregate(label: String, terminal_cycle: u32, augmented: bool, per_seed: Vec<SeedResult>) -> Self {
        let mut splits = Vec::new();
        if let Some(first) = per_seed.first() {
            for (j, m) in first.metrics.iter().enumerate() {
                let r: Vec<f64> = per_seed.iter().map(|s| s.metrics[j].rmse).collect();
                let p: Vec<f64> = per_seed.iter().map(|s| s.metrics[j].mape).collect();
                let (rmse_mean, rmse_std) = mean_std(&r);
                let (mape_mean, mape_std) = mean_std(&p);
                splits.push(SplitSummary { split: m.split, rmse_mean, rmse_std, mape_mean, mape_std });
            }
        }
        Self { label, terminal_cycle, augmented, k: per_seed.len(), splits, per_seed }
    }

    pub fn split(&self, name: SplitName) -> Option<&SplitSummary> {
        self.splits.iter().find(|s| s.split == name)
    }

    /// `config,split,metric,mean,std,k` rows (no header).
    pub fn write_metrics_rows<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for s in &self.splits {
            writeln!(out, "{},{},rmse,{},{},{}", self.label, s.split.as_str(), s.rmse_mean, s.rmse_std, self.k)?;
            writeln!(out, "{},{},mape,{},{},{}", self.label, s.split.as_str(), s.mape_mean, s.mape_std, self.k)?;
        }
        Ok(())
    }

    /// Human-readable table with `mean ± std` cells.
    pub fn summary_lines(&self) -> Vec<String> {
        self.splits
            .iter()
            .map(|s| {
                format!(
                    "{:<10} {:<15} RMSE {:>16}  MAPE {:>12}",
                    self.label,
                    s.split.as_str(),
                    format_mean_std(s.rmse_mean, s.rmse_std),
                    format_mean_std(s.mape_mean, s.mape_std)
                )
            })
            .collect()
    }
}

pub const METRICS_HEADER: &str = "config,split,metric,mean,std,k";
pub const PLOT_HEADER: &str = "terminal_cycle,split,metric,mean,std";

/// Trains `config.k` networks with seeds `base_seed..base_seed + k` and
/// aggregates their metrics. Seeds may run concurrently; results are
/// collected in seed order.
pub fn run_experiments(cells: &[CellRecord], split: &DatasetSplit, config: &ExperimentConfig) -> Result<EvalReport> {
    if config.k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    split.validate(cells)?;
    let per_seed = config
        .train
        .execution
        .try_map(config.k, |i| run_single(cells, split, config, config.base_seed + i as u64))?;
    Ok(EvalReport::aggregate(
        config.label(),
        config.train.window.terminal,
        config.train.augmentation.is_some(),
        per_seed,
    ))
}

/// `from, from + step, ...` up to and including `to`.
pub fn terminal_cycles(from: u32, to: u32, step: u32) -> Vec<u32> {
    (from..=to).step_by(step.max(1) as usize).collect()
}

/// One [`run_experiments`] per terminal cycle.
pub fn sweep_terminal_cycles(
    cells: &[CellRecord],
    split: &DatasetSplit,
    base: &ExperimentConfig,
    terminals: &[u32],
) -> Result<Vec<EvalReport>> {
    let max_terminal = terminals.iter().copied().max().ok_or(Error::EmptyInput)?;
    for name in SplitName::ALL {
        for cell in split.resolve(name, cells)? {
            if cell.cycle_life <= max_terminal {
                return Err(Error::WindowExceedsLife {
                    cell_id: cell.cell_id.clone(),
                    terminal: max_terminal,
                    cycle_life: cell.cycle_life,
                });
            }
        }
    }
    terminals
        .iter()
        .map(|&t| {
            let mut cfg = base.clone();
            cfg.train.window.terminal = t;
            run_experiments(cells, split, &cfg)
        })
        .collect()
}

/// Plot-data rows `terminal_cycle,split,metric,mean,std` (no header).
pub fn write_plot_rows<W: Write>(reports: &[EvalReport], out: &mut W) -> std::io::Result<()> {
    for r in reports {
        for s in &r.splits {
            writeln!(out, "{},{},rmse,{},{}", r.terminal_cycle, s.split.as_str(), s.rmse_mean, s.rmse_std)?;
            writeln!(out, "{},{},mape,{},{}", r.terminal_cycle, s.split.as_str(), s.mape_mean, s.mape_std)?;
        }
    }
    Ok(())
}

/// RMSE on `test` of always predicting the mean training life.
pub fn constant_predictor_rmse(train: &[&CellRecord], test: &[&CellRecord]) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mean = train.iter().map(|c| c.cycle_life as f64).sum::<f64>() / train.len() as f64;
    let actual: Vec<f64> = test.iter().map(|c| c.cycle_life as f64).collect();
    rmse(&PredictionSet::new("constant", &vec![mean; actual.len()], &actual)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(p: &[f64], a: &[f64]) -> PredictionSet {
        PredictionSet::new("t", p, a).unwrap()
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&set(&[3.0, 4.0], &[3.0, 4.0])).unwrap(), 0.0);
        assert_eq!(rmse(&set(&[100.0, 200.0], &[110.0, 190.0])).unwrap(), 10.0);
        assert_eq!(rmse(&set(&[5.0], &[2.0])).unwrap(), 3.0);
        assert!(matches!(rmse(&set(&[], &[])), Err(Error::EmptyInput)));
    }

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&set(&[7.0], &[7.0])).unwrap(), 0.0);
        assert_eq!(mape(&set(&[90.0], &[100.0])).unwrap(), 10.0);
        assert_eq!(mape(&set(&[110.0, 90.0], &[100.0, 100.0])).unwrap(), 10.0);
        // The signed reading would cancel to zero here.
        let signed: f64 = [(110.0, 100.0), (90.0, 100.0)].iter().map(|(p, a): &(f64, f64)| (a - p) / a).sum();
        assert_eq!(signed, 0.0);
        assert!(matches!(mape(&set(&[1.0], &[0.0])), Err(Error::ZeroActual(0))));
    }

    #[test]
    fn sample_std_aggregation() {
        assert_eq!(mean_std(&[3.0, 4.0, 5.0]), (4.0, 1.0));
        assert_eq!(mean_std(&[42.0]), (42.0, 0.0));
        assert_eq!(format_mean_std(87.71, 6.04), "87.7 ± 6.0");
    }

    #[test]
    fn aggregate_from_injected_seed_metrics() {
        let seeds: Vec<SeedResult> = [3.0, 4.0, 5.0]
            .iter()
            .enumerate()
            .map(|(i, &r)| SeedResult {
                seed: i as u64,
                metrics: vec![SplitMetrics { split: SplitName::PrimaryTest, rmse: r, mape: 2.0 * r }],
                final_loss: None,
            })
            .collect();
        let rep = EvalReport::aggregate("@80".into(), 80, false, seeds);
        let s = rep.split(SplitName::PrimaryTest).unwrap();
        assert_eq!((s.rmse_mean, s.rmse_std), (4.0, 1.0));
        assert_eq!((s.mape_mean, s.mape_std), (8.0, 2.0));
        assert_eq!(rep.k, 3);
        let mut buf = Vec::new();
        rep.write_metrics_rows(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "@80,primary_test,rmse,4,1,3\n@80,primary_test,mape,8,2,3\n");
        assert!(rep.summary_lines()[0].contains("4.0 ± 1.0"));
    }

    #[test]
    fn terminal_cycle_ranges() {
        assert_eq!(terminal_cycles(60, 60, 10), vec![60]);
        assert_eq!(terminal_cycles(40, 100, 20), vec![40, 60, 80, 100]);
        assert_eq!(terminal_cycles(40, 100, 10).len(), 7);
    }

    proptest! {
        #[test]
        fn metric_invariants(
            pairs in prop::collection::vec((1.0f64..3000.0, 1.0f64..3000.0), 1..30),
            scale in 0.01f64..100.0,
            shift in -500.0f64..500.0,
        ) {
            let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let a: Vec<f64> = pairs.iter().map(|x| x.1).collect();
            let base_rmse = rmse(&set(&p, &a)).unwrap();
            prop_assert!(base_rmse >= 0.0);
            prop_assert_eq!(rmse(&set(&a, &a)).unwrap(), 0.0);

            let base_mape = mape(&set(&p, &a)).unwrap();
            let ps: Vec<f64> = p.iter().map(|x| x * scale).collect();
            let as_: Vec<f64> = a.iter().map(|x| x * scale).collect();
            prop_assert!((mape(&set(&ps, &as_)).unwrap() - base_mape).abs() <= 1e-12 * base_mape.max(1.0));

            // Shifting both sides by a constant preserves each difference when
            // the shift is exact in floating point.
            let shift = shift.round();
            let pt: Vec<f64> = p.iter().map(|x| x.round() + shift).collect();
            let at: Vec<f64> = a.iter().map(|x| x.round() + shift).collect();
            let pr: Vec<f64> = p.iter().map(|x| x.round()).collect();
            let ar: Vec<f64> = a.iter().map(|x| x.round()).collect();
            prop_assert_eq!(rmse(&set(&pt, &at)).unwrap(), rmse(&set(&pr, &ar)).unwrap());
        }
    }
}
