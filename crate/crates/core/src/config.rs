//! Run configuration (TOML) and the inputs it resolves to.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{DwellSpec, DEFAULT_RADIUS, DEFAULT_T_MAX};
use crate::demand::{
    disaggregate, parse_intensity, split_demand, synth_demand, ArrivalSeries, SynthSpec, DEFAULT_COMPETITOR_SHARE,
    DEFAULT_PARTICIPANT_SHARE, MINUTES_PER_DAY,
};
use crate::error::{Result, SimError};
use crate::grid::GridSpec;
use crate::predictor::{HistoryCorpus, RetrainConfig};
use crate::rng::{derive_seed, StreamTag};
use crate::strategies::StrategyKind;

pub const DEFAULT_RUNS: u32 = 3;
pub const DEFAULT_RETRAIN_EVERY: u32 = 60;
pub const PEAK_WINDOW: (u32, u32) = (9 * 60, 17 * 60);

/// Grid source: a CSV file or an `n x n` synthetic grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub file: Option<PathBuf>,
    pub n: Option<u32>,
    /// Uniform capacity per cell, or one value per cell (row-major).
    pub capacity: Option<Capacity>,
    /// Side length of square zone blocks for synthetic grids.
    pub zone_block: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Capacity {
    Uniform(u32),
    PerCell(Vec<u32>),
}

/// Arrival source: exactly one of a pre-split arrival CSV, a traffic
/// intensity CSV, or a synthetic pattern.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalSection {
    pub file: Option<PathBuf>,
    pub intensity_file: Option<PathBuf>,
    pub synth: Option<SynthSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub pattern: crate::demand::Pattern,
    pub magnitude: f64,
    /// Fixed demand seed; when absent each run derives one from its seed.
    pub seed: Option<u64>,
    pub peak_minute: Option<u32>,
    pub base_level: Option<f64>,
    pub hotspots: Option<u32>,
    pub hotspot_sigma: Option<f64>,
    pub background: Option<f64>,
}

impl SynthSection {
    pub fn spec(&self, run_seed: u64) -> SynthSpec {
        let seed = self.seed.unwrap_or_else(|| derive_seed(run_seed, StreamTag::Demand as u64));
        let mut s = SynthSpec::new(self.pattern, self.magnitude, seed);
        if let Some(v) = self.peak_minute {
            s.peak_minute = v;
        }
        if let Some(v) = self.base_level {
            s.base_level = v;
        }
        if let Some(v) = self.hotspots {
            s.hotspots = v;
        }
        if let Some(v) = self.hotspot_sigma {
            s.hotspot_sigma = v;
        }
        if let Some(v) = self.background {
            s.background = v;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorSection {
    pub history_file: Option<PathBuf>,
    /// Minutes between online refits; 0 disables online retraining.
    pub retrain_every: u32,
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    pub window_hours: u32,
}

impl Default for PredictorSection {
    fn default() -> Self {
        let r = RetrainConfig::default();
        Self {
            history_file: None,
            retrain_every: DEFAULT_RETRAIN_EVERY,
            lambda_grid: r.lambda_grid,
            folds: r.folds,
            window_hours: r.window_buckets,
        }
    }
}

impl PredictorSection {
    pub fn retrain_config(&self) -> RetrainConfig {
        RetrainConfig {
            lambda_grid: self.lambda_grid.clone(),
            folds: self.folds,
            window_buckets: self.window_hours,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub grid: GridSection,
    pub arrivals: ArrivalSection,
    pub strategy: StrategyKind,
    pub radius: u32,
    pub t_max: u32,
    pub participant_share: f64,
    pub competitor_share: f64,
    pub dwell: DwellSpec,
    pub horizon: u32,
    pub seed: u64,
    pub runs: u32,
    pub clip_reachable: bool,
    /// Fraction of every cell's capacity occupied at tick 0.
    pub initial_occupancy: f64,
    /// Multiplier applied to arrival counts.
    pub demand_scale: f64,
    /// Absolute day index of the simulated day (drives weekday features).
    pub day: u32,
    /// Metrics window in minutes `[start, end)`.
    pub window: (u32, u32),
    pub predictor: PredictorSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            grid: GridSection::default(),
            arrivals: ArrivalSection::default(),
            strategy: StrategyKind::CordAgn,
            radius: DEFAULT_RADIUS,
            t_max: DEFAULT_T_MAX,
            participant_share: DEFAULT_PARTICIPANT_SHARE,
            competitor_share: DEFAULT_COMPETITOR_SHARE,
            dwell: DwellSpec::default(),
            horizon: MINUTES_PER_DAY,
            seed: 0,
            runs: DEFAULT_RUNS,
            clip_reachable: false,
            initial_occupancy: 0.0,
            demand_scale: 1.0,
            day: 0,
            window: PEAK_WINDOW,
            predictor: PredictorSection::default(),
            base_dir: PathBuf::new(),
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| SimError::Config(e.message().to_string() + &span_hint(text, e.span())))?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Field-level checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        match (&g.file, g.n) {
            (Some(_), Some(_)) => return Err(SimError::config("grid: set either `file` or `n`, not both")),
            (None, None) => return Err(SimError::config("grid: one of `file` or `n` is required")),
            (None, Some(0)) => return Err(SimError::config("grid.n: must be positive")),
            (None, Some(_)) if g.capacity.is_none() => {
                return Err(SimError::config("grid.capacity: required for synthetic grids"))
            }
            _ => {}
        }
        let a = &self.arrivals;
        let sources = [a.file.is_some(), a.intensity_file.is_some(), a.synth.is_some()]
            .iter()
            .filter(|&&b| b)
            .count();
        if sources != 1 {
            return Err(SimError::config(
                "arrivals: exactly one of `file`, `intensity_file` or `synth` is required",
            ));
        }
        if self.runs == 0 {
            return Err(SimError::config("runs: must be positive"));
        }
        if !(0.0..=1.0).contains(&self.initial_occupancy) {
            return Err(SimError::config("initial_occupancy: must lie in [0, 1]"));
        }
        if !(self.demand_scale >= 0.0 && self.demand_scale.is_finite()) {
            return Err(SimError::config("demand_scale: must be a non-negative number"));
        }
        if self.window.0 > self.window.1 {
            return Err(SimError::config("window: start must not exceed end"));
        }
        if self.predictor.folds < 2 {
            return Err(SimError::config("predictor.folds: must be at least 2"));
        }
        if self.predictor.lambda_grid.is_empty() || self.predictor.lambda_grid.iter().any(|&l| !(l > 0.0)) {
            return Err(SimError::config("predictor.lambda_grid: needs positive values"));
        }
        self.dwell.validate().map_err(|e| SimError::config(format!("dwell: {e}")))?;
        crate::demand::check_shares(self.participant_share, self.competitor_share)
            .map_err(|e| SimError::config(format!("shares: {e}")))?;
        Ok(())
    }

    pub fn load_grid(&self) -> Result<GridSpec> {
        if let Some(file) = &self.grid.file {
            let path = self.resolve(file);
            let f = File::open(&path).map_err(|e| SimError::config(format!("grid.file {}: {e}", path.display())))?;
            return GridSpec::read_csv(BufReader::new(f));
        }
        let n = self.grid.n.unwrap_or(0);
        let capacity = match &self.grid.capacity {
            Some(Capacity::Uniform(c)) => vec![*c; (n * n) as usize],
            Some(Capacity::PerCell(v)) => v.clone(),
            None => Vec::new(),
        };
        GridSpec::synthetic(n, capacity, self.grid.zone_block)
    }

    pub fn load_history(&self) -> Result<Option<HistoryCorpus>> {
        match &self.predictor.history_file {
            None => Ok(None),
            Some(file) => {
                let path = self.resolve(file);
                let f = File::open(&path)
                    .map_err(|e| SimError::config(format!("predictor.history_file {}: {e}", path.display())))?;
                Ok(Some(HistoryCorpus::read_csv(BufReader::new(f))?))
            }
        }
    }

    /// Arrival series for one run.
    pub fn load_arrivals(&self, grid: &GridSpec, run_seed: u64) -> Result<ArrivalSeries> {
        let a = &self.arrivals;
        let series = if let Some(file) = &a.file {
            let path = self.resolve(file);
            let f = File::open(&path)
                .map_err(|e| SimError::config(format!("arrivals.file {}: {e}", path.display())))?;
            ArrivalSeries::read_csv(BufReader::new(f), Some(self.horizon))?
        } else if let Some(file) = &a.intensity_file {
            let path = self.resolve(file);
            let f = File::open(&path)
                .map_err(|e| SimError::config(format!("arrivals.intensity_file {}: {e}", path.display())))?;
            let records = parse_intensity(BufReader::new(f), grid)?;
            let mut minutes = disaggregate(&records);
            minutes.horizon = minutes.horizon.min(self.horizon);
            minutes.counts.retain(|&(_, m), _| m < self.horizon);
            split_demand(&minutes, self.participant_share, self.competitor_share)?
        } else {
            let synth = a.synth.as_ref().expect("validated");
            synth_demand(
                &synth.spec(run_seed),
                grid,
                self.horizon,
                self.participant_share,
                self.competitor_share,
            )?
        };
        Ok(if self.demand_scale == 1.0 {
            series
        } else {
            series.scaled(self.demand_scale)
        })
    }

    /// Seed of run `index` (0-based).
    pub fn run_seed(&self, index: u32) -> u64 {
        derive_seed(self.seed, index as u64)
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = text[..r.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}
