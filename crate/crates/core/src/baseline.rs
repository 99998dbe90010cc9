//! Single-feature linear baseline: ordinary least squares of (optionally
//! log-transformed) cycle life on `log10 var(Q_hi(V) - Q_lo(V))`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::CellRecord;
use crate::error::{Error, Result};
use crate::features::{variance_feature, VoltageGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    Identity,
    #[default]
    Log10,
}

impl TargetTransform {
    pub fn forward(self, life: f64) -> f64 {
        match self {
            TargetTransform::Identity => life,
            TargetTransform::Log10 => life.log10(),
        }
    }

    pub fn inverse(self, value: f64) -> f64 {
        match self {
            TargetTransform::Identity => value,
            TargetTransform::Log10 => 10f64.powf(value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceModel {
    pub slope: f64,
    pub intercept: f64,
    pub target_transform: TargetTransform,
}

/// Cycle pair the feature is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCycles {
    pub c_hi: u32,
    pub c_lo: u32,
}

impl Default for FeatureCycles {
    fn default() -> Self {
        Self { c_hi: 100, c_lo: 10 }
    }
}

/// Closed-form simple regression `y = slope * x + intercept`.
///
/// Pairs are put in a canonical order before any summation so the result
/// does not depend on input order.
pub fn fit_ols(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = pairs.len() as f64;
    let x_mean = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - x_mean) * (p.0 - x_mean)).sum();
    if sxx == 0.0 || pairs.iter().all(|p| p.0 == pairs[0].0) {
        return Err(Error::DegenerateDesign);
    }
    let sxy: f64 = pairs.iter().map(|p| (p.0 - x_mean) * (p.1 - y_mean)).sum();
    let slope = sxy / sxx;
    Ok((slope, y_mean - slope * x_mean))
}

fn features_of(cells: &[&CellRecord], grid: &VoltageGrid, cycles: FeatureCycles) -> Result<Vec<f64>> {
    let missing: Vec<String> = cells
        .iter()
        .flat_map(|c| {
            [cycles.c_hi, cycles.c_lo]
                .into_iter()
                .filter(|&k| c.cycle(k).is_none())
                .map(move |k| format!("{} (cycle {k})", c.cell_id))
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCycles(missing.join(", ")));
    }
    cells.iter().map(|c| variance_feature(c, grid, cycles.c_hi, cycles.c_lo)).collect()
}

pub fn fit_variance_model(
    cells: &[&CellRecord],
    grid: &VoltageGrid,
    transform: TargetTransform,
    cycles: FeatureCycles,
) -> Result<VarianceModel> {
    let xs = features_of(cells, grid, cycles)?;
    let ys: Vec<f64> = cells.iter().map(|c| transform.forward(c.cycle_life as f64)).collect();
    let (slope, intercept) = fit_ols(&xs, &ys)?;
    Ok(VarianceModel { slope, intercept, target_transform: transform })
}

impl VarianceModel {
    /// Predicted life in cycles for a feature value, clamped below at one cycle.
    pub fn predict_feature(&self, feature: f64) -> f64 {
        self.target_transform.inverse(self.slope * feature + self.intercept).max(1.0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self)?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::SchemaViolation {
            field: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

pub fn predict_variance_model(
    model: &VarianceModel,
    cell: &CellRecord,
    grid: &VoltageGrid,
    cycles: FeatureCycles,
) -> Result<f64> {
    let x = variance_feature(cell, grid, cycles.c_hi, cycles.c_lo)?;
    Ok(model.predict_feature(x))
}
