//! ΔQ(V) sequence construction on the fixed voltage grid, standardization,
//! shift augmentation and the log-variance feature.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{CellRecord, CycleCurve};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Descending voltages from 3.5 V to 2.0 V in 0.01 V steps.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageGrid {
    points: Vec<f64>,
}

impl VoltageGrid {
    pub const V_HIGH: f64 = 3.5;
    pub const V_LOW: f64 = 2.0;
    pub const STEP: f64 = 0.01;
    pub const LEN: usize = 151;

    pub fn standard() -> Self {
        // Integer centivolts keep both endpoints exact.
        let points = (0..Self::LEN).map(|i| (350 - i as i64) as f64 / 100.0).collect();
        Self { points }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl Default for VoltageGrid {
    fn default() -> Self {
        Self::standard()
    }
}

/// Piecewise-linear capacity at each grid voltage. Queries outside the
/// curve's voltage span clamp to the nearest end point.
pub fn interpolate_qv(curve: &CycleCurve, grid: &VoltageGrid) -> Result<Vec<f64>> {
    let pts = &curve.points;
    if pts.len() < 2 || pts[0].voltage <= pts[pts.len() - 1].voltage {
        return Err(Error::DegenerateCurve);
    }
    let first = pts[0];
    let last = pts[pts.len() - 1];
    let out = grid
        .points()
        .iter()
        .map(|&v| {
            if v >= first.voltage {
                return first.capacity;
            }
            if v <= last.voltage {
                return last.capacity;
            }
            // First index whose voltage is below the query; voltages descend.
            let hi = pts.partition_point(|p| p.voltage >= v);
            let (a, b) = (pts[hi - 1], pts[hi]);
            if a.voltage == v {
                return a.capacity;
            }
            let t = (a.voltage - v) / (a.voltage - b.voltage);
            a.capacity + t * (b.capacity - a.capacity)
        })
        .collect();
    Ok(out)
}

/// Inclusive cycle window plus the baseline cycle subtracted from every row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: u32,
    pub terminal: u32,
    pub baseline: u32,
}

impl Default for Window {
    fn default() -> Self {
        Self { start: 11, terminal: 100, baseline: 10 }
    }
}

impl Window {
    pub fn new(start: u32, terminal: u32) -> Self {
        Self { start, terminal, ..Self::default() }
    }

    pub fn shifted(self, by: u32) -> Self {
        Self { start: self.start + by, terminal: self.terminal + by, baseline: self.baseline }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub cell_id: String,
    pub start_cycle: u32,
    pub terminal_cycle: u32,
    /// Cycle index of each row.
    pub cycles: Vec<u32>,
    /// `T x 151` ΔQ rows ordered by increasing cycle.
    pub features: Matrix,
    /// Cycle life in cycles.
    pub target: f64,
}

impl SequenceSample {
    pub fn steps(&self) -> usize {
        self.features.rows
    }

    pub fn width(&self) -> usize {
        self.features.cols
    }
}

/// Rows `Q_C(V) - Q_baseline(V)` for every cycle `C` of the window present
/// in the cell, targeting the cell's cycle life.
pub fn build_sequence(cell: &CellRecord, window: Window, grid: &VoltageGrid) -> Result<SequenceSample> {
    if window.terminal >= cell.cycle_life {
        return Err(Error::WindowExceedsLife {
            cell_id: cell.cell_id.clone(),
            terminal: window.terminal,
            cycle_life: cell.cycle_life,
        });
    }
    let base_curve = cell.cycle(window.baseline).ok_or_else(|| Error::MissingBaselineCycle {
        cell_id: cell.cell_id.clone(),
        cycle: window.baseline,
    })?;
    let base = interpolate_qv(base_curve, grid)?;
    let mut cycles = Vec::new();
    let mut data = Vec::new();
    for curve in cell.cycles_in(window.start, window.terminal) {
        let q = interpolate_qv(curve, grid)?;
        data.extend(q.iter().zip(&base).map(|(a, b)| a - b));
        cycles.push(curve.cycle_index);
    }
    if cycles.is_empty() {
        return Err(Error::EmptyWindow {
            cell_id: cell.cell_id.clone(),
            start: window.start,
            terminal: window.terminal,
        });
    }
    Ok(SequenceSample {
        cell_id: cell.cell_id.clone(),
        start_cycle: window.start,
        terminal_cycle: window.terminal,
        features: Matrix::from_vec(cycles.len(), grid.len(), data),
        cycles,
        target: cell.cycle_life as f64,
    })
}

/// Errors unless every cell has recorded cycles through `window.terminal`.
pub fn check_window_coverage(cells: &[&CellRecord], window: Window) -> Result<()> {
    for cell in cells {
        let available = cell.last_cycle().unwrap_or(0);
        if available < window.terminal {
            return Err(Error::WindowExceedsData {
                cell_id: cell.cell_id.clone(),
                start: window.start,
                terminal: window.terminal,
                available,
            });
        }
    }
    Ok(())
}

pub const STD_FLOOR: f64 = 1e-8;

/// Per-grid-point standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Scaler {
    pub fn identity(width: usize) -> Self {
        Self { means: vec![0.0; width], stds: vec![1.0; width] }
    }

    pub fn width(&self) -> usize {
        self.means.len()
    }

    /// `x * std + mean`, the inverse of [`apply_scaler`].
    pub fn invert(&self, sample: &SequenceSample) -> SequenceSample {
        let mut out = sample.clone();
        for r in 0..out.features.rows {
            for ((x, m), s) in out.features.row_mut(r).iter_mut().zip(&self.means).zip(&self.stds) {
                *x = *x * s + m;
            }
        }
        out
    }
}

/// Population mean and standard deviation of every column over all rows of
/// all samples; standard deviations are floored at [`STD_FLOOR`].
pub fn fit_scaler(samples: &[SequenceSample]) -> Result<Scaler> {
    let width = samples.first().ok_or(Error::EmptyInput)?.width();
    if let Some(bad) = samples.iter().find(|s| s.width() != width) {
        return Err(Error::ShapeMismatch(format!(
            "sample {} has width {}, expected {width}",
            bad.cell_id,
            bad.width()
        )));
    }
    let rows: usize = samples.iter().map(|s| s.steps()).sum();
    if rows == 0 {
        return Err(Error::EmptyInput);
    }
    let n = rows as f64;
    let mut means = vec![0.0; width];
    for s in samples {
        for r in 0..s.steps() {
            for (m, x) in means.iter_mut().zip(s.features.row(r)) {
                *m += x;
            }
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut vars = vec![0.0; width];
    for s in samples {
        for r in 0..s.steps() {
            for ((v, x), m) in vars.iter_mut().zip(s.features.row(r)).zip(&means) {
                *v += (x - m) * (x - m);
            }
        }
    }
    let stds = vars.into_iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
    Ok(Scaler { means, stds })
}

pub fn apply_scaler(scaler: &Scaler, sample: &SequenceSample) -> SequenceSample {
    let mut out = sample.clone();
    for r in 0..out.features.rows {
        for ((x, m), s) in out.features.row_mut(r).iter_mut().zip(&scaler.means).zip(&scaler.stds) {
            *x = (*x - m) / s;
        }
    }
    out
}

/// Shift augmentation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub shift_step: u32,
    pub max_shift: u32,
    /// Only cells whose cycle life exceeds this are augmented.
    pub life_threshold: u32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { shift_step: 3, max_shift: 9, life_threshold: 775 }
    }
}

/// One (possibly shifted) training window and its adjusted target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowDescriptor {
    pub window: Window,
    pub shift: u32,
    pub target: f64,
}

/// Genuine window plus, for long-lived cells, windows shifted by multiples
/// of `shift_step` up to `max_shift`, each targeting `cycle_life - shift`.
pub fn augment(cell: &CellRecord, window: Window, config: &AugmentConfig) -> Result<Vec<WindowDescriptor>> {
    if config.shift_step == 0 {
        return Err(Error::InvalidConfig("shift_step must be at least 1".into()));
    }
    let max_shift = if cell.cycle_life > config.life_threshold { config.max_shift } else { 0 };
    let available = cell.last_cycle().unwrap_or(0);
    (0..=max_shift)
        .step_by(config.shift_step as usize)
        .map(|shift| {
            let w = window.shifted(shift);
            if w.terminal >= cell.cycle_life || w.terminal > available {
                return Err(Error::ShiftExceedsData { cell_id: cell.cell_id.clone(), shift });
            }
            Ok(WindowDescriptor { window: w, shift, target: cell.cycle_life as f64 - shift as f64 })
        })
        .collect()
}

/// Sequences for every cell, expanded by augmentation when configured.
pub fn build_samples(
    cells: &[&CellRecord],
    window: Window,
    augmentation: Option<&AugmentConfig>,
    grid: &VoltageGrid,
) -> Result<Vec<SequenceSample>> {
    let mut out = Vec::new();
    for cell in cells {
        match augmentation {
            None => out.push(build_sequence(cell, window, grid)?),
            Some(cfg) => {
                for d in augment(cell, window, cfg)? {
                    let mut s = build_sequence(cell, d.window, grid)?;
                    s.target = d.target;
                    out.push(s);
                }
            }
        }
    }
    Ok(out)
}

/// `log10` of the population variance over the grid of `Q_hi(V) - Q_lo(V)`.
pub fn variance_feature(cell: &CellRecord, grid: &VoltageGrid, c_hi: u32, c_lo: u32) -> Result<f64> {
    let missing = |cycle| Error::MissingCycle { cell_id: cell.cell_id.clone(), cycle };
    let hi = interpolate_qv(cell.cycle(c_hi).ok_or_else(|| missing(c_hi))?, grid)?;
    let lo = interpolate_qv(cell.cycle(c_lo).ok_or_else(|| missing(c_lo))?, grid)?;
    let delta: Vec<f64> = hi.iter().zip(&lo).map(|(a, b)| a - b).collect();
    log10_variance(&delta)
}

pub(crate) fn log10_variance(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    // A constant vector has zero variance even if the computed mean is off by an ulp.
    if values.iter().all(|&x| x == values[0]) {
        return Err(Error::DegenerateVariance);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var < 1e-300 {
        return Err(Error::DegenerateVariance);
    }
    Ok(var.log10())
}

/// Writes one CSV row per time step: `cycle,v_3.50,...,v_2.00`.
pub fn write_features_csv<W: Write>(sample: &SequenceSample, grid: &VoltageGrid, mut out: W) -> std::io::Result<()> {
    write!(out, "cycle")?;
    for v in grid.points() {
        write!(out, ",v_{v:.2}")?;
    }
    writeln!(out)?;
    for (r, cycle) in sample.cycles.iter().enumerate() {
        write!(out, "{cycle}")?;
        for x in sample.features.row(r) {
            write!(out, ",{x}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
