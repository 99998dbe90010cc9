//! Cell records, the on-disk cell/manifest format, the parametric synthetic
//! generator and dataset splits.
//!
//! A cell file holds raw `(voltage, capacity)` discharge points per cycle:
//!
//! ```json
//! {"cell_id": "b1c0", "nominal_capacity_ah": 1.1, "cycle_life": 1852,
//!  "cycles": [{"index": 1, "points": [[3.5, 0.0], [3.49, 0.0012], ...]}, ...]}
//! ```
//!
//! Voltages are listed in decreasing order and capacity must not decrease
//! along a curve. A manifest lists cell files relative to its own directory
//! together with the train / primary-test / secondary-test assignment.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::VoltageGrid;
use crate::rng;

pub const MIN_VOLTAGE: f64 = 1.5;
pub const MAX_VOLTAGE: f64 = 4.0;

/// Capacity fraction of nominal that defines end of life.
pub const END_OF_LIFE_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct DischargePoint {
    /// Volts.
    pub voltage: f64,
    /// Ampere-hours discharged so far.
    pub capacity: f64,
}

impl From<[f64; 2]> for DischargePoint {
    fn from([voltage, capacity]: [f64; 2]) -> Self {
        Self { voltage, capacity }
    }
}

impl From<DischargePoint> for [f64; 2] {
    fn from(p: DischargePoint) -> Self {
        [p.voltage, p.capacity]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleCurve {
    #[serde(rename = "index")]
    pub cycle_index: u32,
    pub points: Vec<DischargePoint>,
}

impl CycleCurve {
    /// Capacity at the end of discharge (last point).
    pub fn end_capacity(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.capacity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell_id: String,
    #[serde(rename = "nominal_capacity_ah")]
    pub nominal_capacity: f64,
    pub cycle_life: u32,
    pub cycles: Vec<CycleCurve>,
}

impl CellRecord {
    pub fn cycle(&self, index: u32) -> Option<&CycleCurve> {
        self.cycles
            .binary_search_by_key(&index, |c| c.cycle_index)
            .ok()
            .map(|i| &self.cycles[i])
    }

    pub fn last_cycle(&self) -> Option<u32> {
        self.cycles.last().map(|c| c.cycle_index)
    }

    /// Cycles whose index lies in `start..=terminal`, in increasing order.
    pub fn cycles_in(&self, start: u32, terminal: u32) -> impl Iterator<Item = &CycleCurve> {
        self.cycles
            .iter()
            .skip_while(move |c| c.cycle_index < start)
            .take_while(move |c| c.cycle_index <= terminal)
    }

    /// Checks every record invariant.
    pub fn validate(&self) -> Result<()> {
        let schema = |field: &str, reason: String| Error::SchemaViolation {
            field: format!("{}.{field}", self.cell_id),
            reason,
        };
        if self.cell_id.is_empty() {
            return Err(schema("cell_id", "must be non-empty".into()));
        }
        if !(self.nominal_capacity.is_finite() && self.nominal_capacity > 0.0) {
            return Err(schema("nominal_capacity_ah", format!("{} is not positive", self.nominal_capacity)));
        }
        if self.cycle_life == 0 {
            return Err(schema("cycle_life", "must be positive".into()));
        }
        let mut prev: Option<u32> = None;
        for cycle in &self.cycles {
            if cycle.cycle_index == 0 {
                return Err(schema("cycles.index", "cycle indices start at 1".into()));
            }
            if prev.is_some_and(|p| cycle.cycle_index <= p) {
                return Err(schema(
                    "cycles.index",
                    format!("cycle {} is not after cycle {}", cycle.cycle_index, prev.unwrap()),
                ));
            }
            prev = Some(cycle.cycle_index);
            if cycle.points.len() < 2 {
                return Err(schema(
                    "cycles.points",
                    format!("cycle {} has fewer than 2 points", cycle.cycle_index),
                ));
            }
            for p in &cycle.points {
                if !(p.voltage.is_finite() && (MIN_VOLTAGE..=MAX_VOLTAGE).contains(&p.voltage)) {
                    return Err(schema(
                        "cycles.points.voltage",
                        format!("{} V in cycle {} is outside [1.5, 4.0]", p.voltage, cycle.cycle_index),
                    ));
                }
                if !(p.capacity.is_finite() && p.capacity >= 0.0) {
                    return Err(schema(
                        "cycles.points.capacity",
                        format!("{} Ah in cycle {} is negative", p.capacity, cycle.cycle_index),
                    ));
                }
            }
            let monotone = cycle
                .points
                .windows(2)
                .all(|w| w[1].voltage < w[0].voltage && w[1].capacity >= w[0].capacity);
            if !monotone {
                return Err(Error::MonotonicityViolation {
                    cell_id: self.cell_id.clone(),
                    cycle_index: cycle.cycle_index,
                });
            }
        }
        Ok(())
    }
}

pub fn read_cell(path: &Path) -> Result<CellRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cell: CellRecord = serde_json::from_str(&text).map_err(|e| Error::SchemaViolation {
        field: path.display().to_string(),
        reason: e.to_string(),
    })?;
    cell.validate()?;
    Ok(cell)
}

pub fn write_cell(cell: &CellRecord, path: &Path) -> Result<()> {
    let bytes = serde_json::to_vec(cell)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads every cell from a directory of cell files (sorted by file name,
/// `manifest.json` excluded) or from the cell list of a manifest file.
pub fn load_cells(path: &Path) -> Result<Vec<CellRecord>> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_dir() {
        let mut files = Vec::new();
        for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
            let p = entry.map_err(|e| Error::io(path, e))?.path();
            let is_json = p.extension().is_some_and(|e| e == "json");
            let is_manifest = p.file_name().is_some_and(|n| n == MANIFEST_FILE);
            if is_json && !is_manifest && p.is_file() {
                files.push(p);
            }
        }
        files.sort();
        files.iter().map(|p| read_cell(p)).collect()
    } else {
        load_manifest(path).map(|(cells, _)| cells)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub primary_test: Vec<String>,
    pub secondary_test: Vec<String>,
}

/// Names of the three evaluation splits, in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitName {
    Train,
    PrimaryTest,
    SecondaryTest,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::PrimaryTest, SplitName::SecondaryTest];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::PrimaryTest => "primary_test",
            SplitName::SecondaryTest => "secondary_test",
        }
    }
}

impl DatasetSplit {
    pub fn ids(&self, split: SplitName) -> &[String] {
        match split {
            SplitName::Train => &self.train,
            SplitName::PrimaryTest => &self.primary_test,
            SplitName::SecondaryTest => &self.secondary_test,
        }
    }

    /// Checks that the lists are disjoint and every id names a known cell.
    pub fn validate(&self, cells: &[CellRecord]) -> Result<()> {
        let known: BTreeSet<&str> = cells.iter().map(|c| c.cell_id.as_str()).collect();
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.primary_test).chain(&self.secondary_test) {
            if !known.contains(id.as_str()) {
                return Err(Error::UnknownCellId(id.clone()));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::OverlappingSplits(id.clone()));
            }
        }
        Ok(())
    }

    /// Resolves the ids of one split against `cells`, preserving split order.
    pub fn resolve<'a>(&self, split: SplitName, cells: &'a [CellRecord]) -> Result<Vec<&'a CellRecord>> {
        let by_id: HashMap<&str, &CellRecord> = cells.iter().map(|c| (c.cell_id.as_str(), c)).collect();
        self.ids(split)
            .iter()
            .map(|id| by_id.get(id.as_str()).copied().ok_or_else(|| Error::UnknownCellId(id.clone())))
            .collect()
    }
}

/// How to divide cells into splits.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    Explicit(DatasetSplit),
    /// Seeded shuffle, then the first `train`, next `primary`, next `secondary` cells.
    Counts { train: usize, primary: usize, secondary: usize, seed: u64 },
    /// Seeded shuffle with sizes `floor(fraction * n)`.
    Fractions { train: f64, primary: f64, secondary: f64, seed: u64 },
}

pub fn split_dataset(cells: &[CellRecord], spec: &SplitSpec) -> Result<DatasetSplit> {
    let n = cells.len();
    let (train, primary, secondary, seed) = match *spec {
        SplitSpec::Explicit(ref split) => {
            split.validate(cells)?;
            return Ok(split.clone());
        }
        SplitSpec::Counts { train, primary, secondary, seed } => {
            if train + primary + secondary > n {
                return Err(Error::InvalidConfig(format!(
                    "split counts {train}+{primary}+{secondary} exceed {n} cells"
                )));
            }
            (train, primary, secondary, seed)
        }
        SplitSpec::Fractions { train, primary, secondary, seed } => {
            let fracs = [train, primary, secondary];
            if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || fracs.iter().sum::<f64>() > 1.0 + 1e-12 {
                return Err(Error::InvalidConfig("split fractions must be in [0, 1] and sum to at most 1".into()));
            }
            let count = |f: f64| (f * n as f64).floor() as usize;
            (count(train), count(primary), count(secondary), seed)
        }
    };
    let mut ids: Vec<String> = cells.iter().map(|c| c.cell_id.clone()).collect();
    let distinct: BTreeSet<&String> = ids.iter().collect();
    if distinct.len() != ids.len() {
        let dup = ids.iter().find(|id| ids.iter().filter(|o| o == id).count() > 1).unwrap();
        return Err(Error::OverlappingSplits(dup.clone()));
    }
    ids.shuffle(&mut rng::seeded(seed));
    let mut it = ids.into_iter();
    let split = DatasetSplit {
        train: it.by_ref().take(train).collect(),
        primary_test: it.by_ref().take(primary).collect(),
        secondary_test: it.by_ref().take(secondary).collect(),
    };
    Ok(split)
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub cells: Vec<PathBuf>,
    pub splits: DatasetSplit,
}

/// Reads a manifest and every cell it lists; the split is validated.
pub fn load_manifest(path: &Path) -> Result<(Vec<CellRecord>, DatasetSplit)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::SchemaViolation {
        field: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let root = path.parent().unwrap_or(Path::new("."));
    let cells = manifest
        .cells
        .iter()
        .map(|rel| read_cell(&root.join(rel)))
        .collect::<Result<Vec<_>>>()?;
    manifest.splits.validate(&cells)?;
    Ok((cells, manifest.splits))
}

/// Writes `cells/<id>.json` for every cell plus `manifest.json` under `dir`.
pub fn write_dataset(dir: &Path, cells: &[CellRecord], split: &DatasetSplit) -> Result<PathBuf> {
    split.validate(cells)?;
    let cell_dir = dir.join("cells");
    fs::create_dir_all(&cell_dir).map_err(|e| Error::io(&cell_dir, e))?;
    let mut rel_paths = Vec::with_capacity(cells.len());
    for cell in cells {
        let rel = PathBuf::from("cells").join(format!("{}.json", cell.cell_id));
        write_cell(cell, &dir.join(&rel))?;
        rel_paths.push(rel);
    }
    let manifest = Manifest { cells: rel_paths, splits: split.clone() };
    let path = dir.join(MANIFEST_FILE);
    let bytes = serde_json::to_vec_pretty(&manifest)?;
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Parameters of one synthetic cell.
///
/// Capacity fades as `f(C) = 1 - 0.2 (C / L)^gamma`, so the noise-free end of
/// discharge capacity reaches 80% of nominal exactly at cycle `L`. Each curve
/// is `Q(V, C) = f(C) * nominal * g(V)` with a tanh-shaped `g` normalized to
/// 0 at 3.5 V and 1 at 2.0 V.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub nominal_capacity: f64,
    pub target_life: u32,
    pub fade_exponent: f64,
    pub curve_midpoint: f64,
    pub curve_width: f64,
    pub noise_std: f64,
    pub cycles_to_emit: u32,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            nominal_capacity: 1.1,
            target_life: 1000,
            fade_exponent: 1.0,
            curve_midpoint: 3.25,
            curve_width: 0.1,
            noise_std: 0.0,
            cycles_to_emit: 120,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if !(self.nominal_capacity.is_finite() && self.nominal_capacity > 0.0) {
            return bad("nominal_capacity must be positive");
        }
        if !(self.fade_exponent.is_finite() && self.fade_exponent > 0.0) {
            return bad("fade_exponent must be positive");
        }
        if !(self.curve_width.is_finite() && self.curve_width > 0.0) {
            return bad("curve_width must be positive");
        }
        if !self.curve_midpoint.is_finite() {
            return bad("curve_midpoint must be finite");
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad("noise_std must be non-negative");
        }
        if self.cycles_to_emit < 11 {
            return bad("cycles_to_emit must be at least 11 so a cycle-10 baseline exists");
        }
        if self.target_life < self.cycles_to_emit {
            return bad("target_life must be at least cycles_to_emit");
        }
        Ok(())
    }

    /// Fraction of nominal capacity remaining at `cycle`.
    pub fn fade(&self, cycle: f64) -> f64 {
        1.0 - 0.2 * (cycle / self.target_life as f64).powf(self.fade_exponent)
    }

    /// Normalized curve shape: 0 at 3.5 V, 1 at 2.0 V.
    pub fn shape(&self, voltage: f64) -> f64 {
        let s = |v: f64| ((self.curve_midpoint - v) / self.curve_width).tanh();
        let top = s(VoltageGrid::V_HIGH);
        (s(voltage) - top) / (s(VoltageGrid::V_LOW) - top)
    }
}

/// Generates a synthetic cell with cycles `1..=cycles_to_emit` sampled on the
/// 151-point grid. Deterministic in `(params, seed)`.
pub fn synth_cell(params: &SynthParams, seed: u64) -> Result<CellRecord> {
    params.validate()?;
    let grid = VoltageGrid::standard();
    let shape: Vec<f64> = grid.points().iter().map(|&v| params.shape(v)).collect();
    let mut rng = rng::seeded(seed);
    let noise = if params.noise_std > 0.0 {
        Some(Normal::new(0.0, params.noise_std).map_err(|e| Error::InvalidParams(e.to_string()))?)
    } else {
        None
    };
    let cycles = (1..=params.cycles_to_emit)
        .map(|c| {
            let scale = params.fade(c as f64) * params.nominal_capacity;
            let mut floor = 0.0f64;
            let points = grid
                .points()
                .iter()
                .zip(&shape)
                .map(|(&voltage, &g)| {
                    let mut q = scale * g;
                    if let Some(n) = &noise {
                        q += n.sample(&mut rng);
                    }
                    // Keep the curve non-decreasing and non-negative.
                    floor = floor.max(q);
                    DischargePoint { voltage, capacity: floor }
                })
                .collect();
            CycleCurve { cycle_index: c, points }
        })
        .collect();
    Ok(CellRecord {
        cell_id: format!("synth-{seed}"),
        nominal_capacity: params.nominal_capacity,
        cycle_life: params.target_life,
        cycles,
    })
}

/// Ranges that synthetic cohort parameters are drawn from uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthRanges {
    pub nominal_capacity: f64,
    pub life: (u32, u32),
    pub fade_exponent: (f64, f64),
    pub curve_midpoint: (f64, f64),
    pub curve_width: (f64, f64),
    pub noise_std: f64,
    pub cycles_to_emit: u32,
}

impl Default for SynthRanges {
    fn default() -> Self {
        Self {
            nominal_capacity: 1.1,
            life: (150, 2300),
            fade_exponent: (0.9, 1.1),
            curve_midpoint: (3.2, 3.3),
            curve_width: (0.06, 0.12),
            noise_std: 2e-4,
            cycles_to_emit: 120,
        }
    }
}

impl SynthRanges {
    pub fn sample(&self, rng: &mut rng::Rng) -> SynthParams {
        let mut uni = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let fade_exponent = uni(self.fade_exponent);
        let curve_midpoint = uni(self.curve_midpoint);
        let curve_width = uni(self.curve_width);
        let (lo, hi) = self.life;
        let target_life = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        SynthParams {
            nominal_capacity: self.nominal_capacity,
            target_life: target_life.max(self.cycles_to_emit),
            fade_exponent,
            curve_midpoint,
            curve_width,
            noise_std: self.noise_std,
            cycles_to_emit: self.cycles_to_emit,
        }
    }
}

/// Generates `count` cells named `cell-000`, `cell-001`, ...
pub fn synth_cohort(count: usize, ranges: &SynthRanges, seed: u64) -> Result<Vec<CellRecord>> {
    let mut rng = rng::seeded(seed);
    (0..count)
        .map(|i| {
            let params = ranges.sample(&mut rng);
            let mut cell = synth_cell(&params, rng::derive_seed(seed, &[i as u64]))?;
            cell.cell_id = format!("cell-{i:03}");
            Ok(cell)
        })
        .collect()
}

/// Split sizes proportional to the 41/43/40 reference split of 124 cells.
pub fn proportional_counts(count: usize) -> (usize, usize, usize) {
    if count == 0 {
        return (0, 0, 0);
    }
    let train = ((count as f64 * 41.0 / 124.0).round() as usize).clamp(1, count);
    let primary = ((count as f64 * 43.0 / 124.0).round() as usize).min(count - train);
    (train, primary, count - train - primary)
}
