//! Availability forecasting for the prediction-weighted strategy.
//!
//! The corpus holds hourly per-cell success ratios. A ridge model over
//! time-of-day (sin/cos), weekday one-hot, cell one-hot and a short trend
//! feature predicts the chance that a trip to a cell ends in a park there.
//! The intercept is fitted on centred data and is never penalised.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub const BUCKET_MINUTES: u32 = 60;
pub const BUCKETS_PER_DAY: u32 = 24;
pub const CLAMP_FLOOR: f64 = 0.01;
pub const PRIOR_AVAILABILITY: f64 = 0.5;
pub const TREND_BUCKETS: u32 = 3;
pub const DEFAULT_WINDOW_BUCKETS: u32 = 3 * BUCKETS_PER_DAY;
pub const DEFAULT_LAMBDA_GRID: [f64; 6] = [0.01, 0.1, 1.0, 10.0, 100.0, 1000.0];
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub cell: usize,
    /// Absolute hour index (`day * 24 + hour`).
    pub bucket: u32,
    pub rho: f64,
    pub attempts: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HistoryCorpus {
    pub records: Vec<HistoryRecord>,
}

/// Attempt/success counts of one cell within one bucket.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CellObservation {
    pub cell: usize,
    pub attempts: u32,
    pub successes: u32,
}

impl HistoryCorpus {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn latest_bucket(&self) -> Option<u32> {
        self.records.iter().map(|r| r.bucket).max()
    }

    pub fn merge(&mut self, other: &HistoryCorpus) {
        self.records.extend_from_slice(&other.records);
    }

    /// Appends `successes / attempts` for every cell with at least one
    /// attempt in `bucket`.
    pub fn update(&mut self, bucket: u32, observations: &[CellObservation]) -> Result<()> {
        for o in observations {
            if o.successes > o.attempts {
                return Err(SimError::validation(
                    None,
                    format!(
                        "cell {} bucket {bucket}: {} successes exceed {} attempts",
                        o.cell, o.successes, o.attempts
                    ),
                ));
            }
        }
        self.records.extend(observations.iter().filter(|o| o.attempts > 0).map(|o| HistoryRecord {
            cell: o.cell,
            bucket,
            rho: o.successes as f64 / o.attempts as f64,
            attempts: o.attempts,
        }));
        Ok(())
    }

    /// Writes `k,bucket_start,rho,attempts` rows; `bucket_start` in minutes.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "bucket_start", "rho", "attempts"])?;
        for r in &self.records {
            w.write_record([
                r.cell.to_string(),
                (r.bucket * BUCKET_MINUTES).to_string(),
                r.rho.to_string(),
                r.attempts.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            k: usize,
            bucket_start: u32,
            rho: f64,
            attempts: u32,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut records = Vec::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row?;
            if !(0.0..=1.0).contains(&row.rho) {
                return Err(SimError::validation(
                    Some(i + 2),
                    format!("success ratio {} outside [0, 1]", row.rho),
                ));
            }
            records.push(HistoryRecord {
                cell: row.k,
                bucket: row.bucket_start / BUCKET_MINUTES,
                rho: row.rho,
                attempts: row.attempts,
            });
        }
        Ok(Self { records })
    }
}

/// Layout of the feature vector for a grid of `cells` cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub cells: usize,
}

impl FeatureSchema {
    pub fn dim(&self) -> usize {
        2 + 7 + self.cells + 1
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["tod_sin".to_string(), "tod_cos".to_string()];
        names.extend((0..7).map(|d| format!("weekday_{d}")));
        names.extend((0..self.cells).map(|k| format!("cell_{k}")));
        names.push("trend".to_string());
        names
    }

    pub fn features(&self, cell: usize, bucket: u32, trend: f64) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        let hour = (bucket % BUCKETS_PER_DAY) as f64 + 0.5;
        let angle = 2.0 * std::f64::consts::PI * hour / BUCKETS_PER_DAY as f64;
        x[0] = angle.sin();
        x[1] = angle.cos();
        x[2 + ((bucket / BUCKETS_PER_DAY) % 7) as usize] = 1.0;
        x[9 + cell] = 1.0;
        x[9 + self.cells] = trend;
        x
    }
}

/// Lookup of `(cell, bucket) -> rho` for trend features.
#[derive(Debug, Clone, Default)]
pub struct TrendIndex {
    by_key: HashMap<(usize, u32), (f64, u32)>,
    fallback: f64,
}

impl TrendIndex {
    pub fn new(corpus: &HistoryCorpus) -> Self {
        let mut by_key: HashMap<(usize, u32), (f64, u32)> = HashMap::new();
        for r in &corpus.records {
            // Attempt-weighted if a (cell, bucket) appears more than once.
            let e = by_key.entry((r.cell, r.bucket)).or_insert((0.0, 0));
            e.0 += r.rho * r.attempts.max(1) as f64;
            e.1 += r.attempts.max(1);
        }
        for v in by_key.values_mut() {
            v.0 /= v.1 as f64;
        }
        let fallback = if corpus.records.is_empty() {
            PRIOR_AVAILABILITY
        } else {
            corpus.records.iter().map(|r| r.rho).sum::<f64>() / corpus.records.len() as f64
        };
        Self { by_key, fallback }
    }

    /// Mean rho of `cell` over the `TREND_BUCKETS` buckets before `bucket`;
    /// the corpus mean when none were observed.
    pub fn trend(&self, cell: usize, bucket: u32) -> f64 {
        let mut sum = 0.0;
        let mut n = 0;
        for b in bucket.saturating_sub(TREND_BUCKETS)..bucket {
            if let Some(&(rho, _)) = self.by_key.get(&(cell, b)) {
                sum += rho;
                n += 1;
            }
        }
        if n == 0 {
            self.fallback
        } else {
            sum / n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub schema: Option<FeatureSchema>,
}

impl RidgeModel {
    pub fn predict_raw(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Cholesky solve of the symmetric system `a x = b` (`a` is `p x p`,
/// row-major). Returns `None` if `a` is not numerically positive definite.
fn cholesky_solve(a: &[f64], b: &[f64], p: usize) -> Option<Vec<f64>> {
    let scale = (0..p).map(|i| a[i * p + i].abs()).fold(0.0, f64::max).max(1e-300);
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if s <= 1e-12 * scale {
                    return None;
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in i + 1..p {
            s -= l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    Some(x)
}

/// Numerical rank by Gaussian elimination with partial pivoting.
fn numerical_rank(a: &[f64], p: usize) -> usize {
    let mut m = a.to_vec();
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-300);
    let tol = 1e-10 * scale;
    let mut rank = 0;
    let mut row = 0;
    for col in 0..p {
        if row >= p {
            break;
        }
        let pivot = (row..p)
            .max_by(|&x, &y| m[x * p + col].abs().total_cmp(&m[y * p + col].abs()))
            .unwrap();
        if m[pivot * p + col].abs() <= tol {
            continue;
        }
        for k in 0..p {
            m.swap(row * p + k, pivot * p + k);
        }
        for r in row + 1..p {
            let f = m[r * p + col] / m[row * p + col];
            for k in col..p {
                m[r * p + k] -= f * m[row * p + k];
            }
        }
        row += 1;
        rank += 1;
    }
    rank
}

/// Centred cross-products of a design: `sxx = Σ (x - x̄)(x - x̄)ᵀ`,
/// `sxy = Σ (x - x̄)(y - ȳ)`.
struct Centred {
    p: usize,
    x_mean: Vec<f64>,
    y_mean: f64,
    sxx: Vec<f64>,
    sxy: Vec<f64>,
}

impl Centred {
    fn solve(&self, lambda: f64) -> Result<RidgeModel> {
        let p = self.p;
        let mut a = self.sxx.clone();
        for i in 0..p {
            a[i * p + i] += lambda;
        }
        let beta = match cholesky_solve(&a, &self.sxy, p) {
            Some(b) => b,
            None => {
                return Err(SimError::Singular {
                    rank: numerical_rank(&a, p),
                    dim: p,
                })
            }
        };
        let intercept = self.y_mean - beta.iter().zip(&self.x_mean).map(|(b, m)| b * m).sum::<f64>();
        Ok(RidgeModel {
            coefficients: beta,
            intercept,
            lambda,
            schema: None,
        })
    }
}

/// Running raw sums, so fold statistics can be formed by subtraction.
#[derive(Clone)]
struct RawSums {
    p: usize,
    n: f64,
    sx: Vec<f64>,
    sy: f64,
    sxx: Vec<f64>,
    sxy: Vec<f64>,
}

impl RawSums {
    fn new(p: usize) -> Self {
        Self {
            p,
            n: 0.0,
            sx: vec![0.0; p],
            sy: 0.0,
            sxx: vec![0.0; p * p],
            sxy: vec![0.0; p],
        }
    }

    fn add(&mut self, x: &[f64], y: f64) {
        let p = self.p;
        self.n += 1.0;
        self.sy += y;
        for i in 0..p {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            self.sx[i] += xi;
            self.sxy[i] += xi * y;
            let row = &mut self.sxx[i * p..(i + 1) * p];
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0.0 {
                    row[j] += xi * xj;
                }
            }
        }
    }

    fn minus(&self, other: &RawSums) -> RawSums {
        let sub = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
        RawSums {
            p: self.p,
            n: self.n - other.n,
            sx: sub(&self.sx, &other.sx),
            sy: self.sy - other.sy,
            sxx: sub(&self.sxx, &other.sxx),
            sxy: sub(&self.sxy, &other.sxy),
        }
    }

    fn centred(&self) -> Centred {
        let p = self.p;
        let x_mean: Vec<f64> = self.sx.iter().map(|s| s / self.n).collect();
        let y_mean = self.sy / self.n;
        let mut sxx = self.sxx.clone();
        for i in 0..p {
            for j in 0..p {
                sxx[i * p + j] -= self.n * x_mean[i] * x_mean[j];
            }
        }
        let sxy = (0..p).map(|i| self.sxy[i] - self.n * x_mean[i] * y_mean).collect();
        Centred {
            p,
            x_mean,
            y_mean,
            sxx,
            sxy,
        }
    }
}

fn check_design(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.is_empty() || x.len() != y.len() {
        return Err(SimError::config(format!(
            "ridge fit needs matching non-empty X and y (rows {}, targets {})",
            x.len(),
            y.len()
        )));
    }
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) {
        return Err(SimError::config("ragged feature matrix"));
    }
    Ok(p)
}

/// Solves `(Xcᵀ Xc + λ I) β = Xcᵀ yc` on centred data and recovers the
/// intercept from the means.
pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<RidgeModel> {
    let p = check_design(x, y)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(SimError::config(format!("lambda must be >= 0, got {lambda}")));
    }
    let n = x.len() as f64;
    let x_mean: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let y_mean = y.iter().sum::<f64>() / n;
    let mut sxx = vec![0.0; p * p];
    let mut sxy = vec![0.0; p];
    let mut xc = vec![0.0; p];
    for (row, &yv) in x.iter().zip(y) {
        for j in 0..p {
            xc[j] = row[j] - x_mean[j];
        }
        let yc = yv - y_mean;
        for i in 0..p {
            if xc[i] == 0.0 {
                continue;
            }
            sxy[i] += xc[i] * yc;
            for j in 0..p {
                sxx[i * p + j] += xc[i] * xc[j];
            }
        }
    }
    Centred {
        p,
        x_mean,
        y_mean,
        sxx,
        sxy,
    }
    .solve(lambda)
}

/// K-fold cross-validation over `grid`; row `i` belongs to fold `i % folds`.
/// Returns the value with the lowest mean fold MSE (smallest on ties).
pub fn select_lambda(x: &[Vec<f64>], y: &[f64], grid: &[f64], folds: usize) -> Result<f64> {
    let p = check_design(x, y)?;
    if grid.is_empty() {
        return Err(SimError::config("lambda grid is empty"));
    }
    if folds < 2 {
        return Err(SimError::config("cross-validation needs at least 2 folds"));
    }
    if x.len() < folds {
        return Err(SimError::config(format!(
            "{} rows are fewer than {folds} folds",
            x.len()
        )));
    }
    let mut per_fold = vec![RawSums::new(p); folds];
    let mut total = RawSums::new(p);
    for (i, (row, &yv)) in x.iter().zip(y).enumerate() {
        per_fold[i % folds].add(row, yv);
    }
    for f in &per_fold {
        total.sxx.iter_mut().zip(&f.sxx).for_each(|(a, b)| *a += b);
        total.sxy.iter_mut().zip(&f.sxy).for_each(|(a, b)| *a += b);
        total.sx.iter_mut().zip(&f.sx).for_each(|(a, b)| *a += b);
        total.sy += f.sy;
        total.n += f.n;
    }
    let train: Vec<Centred> = per_fold.iter().map(|f| total.minus(f).centred()).collect();

    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let mut mse_sum = 0.0;
        for (f, centred) in train.iter().enumerate() {
            let model = match centred.solve(lambda) {
                Ok(m) => m,
                Err(SimError::Singular { .. }) => {
                    mse_sum = f64::INFINITY;
                    break;
                }
                Err(e) => return Err(e),
            };
            let mut se = 0.0;
            let mut count = 0usize;
            for i in (f..x.len()).step_by(folds) {
                let r = model.predict_raw(&x[i]) - y[i];
                se += r * r;
                count += 1;
            }
            mse_sum += se / count as f64;
        }
        let mse = mse_sum / folds as f64;
        if best.is_none_or(|(l, b)| mse < b || (mse == b && lambda < l)) {
            best = Some((lambda, mse));
        }
    }
    Ok(best.expect("grid non-empty").0)
}

pub fn clamp_availability(raw: f64) -> f64 {
    if raw.is_nan() {
        return CLAMP_FLOOR;
    }
    raw.clamp(CLAMP_FLOOR, 1.0)
}

/// Clamped availability for `cell` in `bucket`.
pub fn predict_availability(model: &RidgeModel, cell: usize, bucket: u32, trends: &TrendIndex) -> Result<f64> {
    let schema = model
        .schema
        .ok_or_else(|| SimError::Schema("model carries no feature schema".into()))?;
    if cell >= schema.cells {
        return Err(SimError::Schema(format!(
            "cell {cell} not covered by a model over {} cells",
            schema.cells
        )));
    }
    let x = schema.features(cell, bucket, trends.trend(cell, bucket));
    Ok(clamp_availability(model.predict_raw(&x)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainConfig {
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    /// Only records within this many buckets of the newest one are used.
    pub window_buckets: u32,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            folds: DEFAULT_FOLDS,
            window_buckets: DEFAULT_WINDOW_BUCKETS,
        }
    }
}

/// A fitted ridge model or the uniform prior used before any history exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AvailabilityModel {
    Prior { p: f64 },
    Ridge(RidgeModel),
}

/// Design matrix of the corpus restricted to the training window, in
/// canonical `(bucket, cell)` order so results do not depend on row order.
pub fn training_set(corpus: &HistoryCorpus, schema: FeatureSchema, window: u32) -> (Vec<Vec<f64>>, Vec<f64>) {
    let Some(latest) = corpus.latest_bucket() else {
        return (Vec::new(), Vec::new());
    };
    let start = (latest + 1).saturating_sub(window);
    let mut recs: Vec<&HistoryRecord> = corpus
        .records
        .iter()
        .filter(|r| r.bucket >= start && r.cell < schema.cells)
        .collect();
    recs.sort_by(|a, b| {
        (a.bucket, a.cell, a.attempts)
            .cmp(&(b.bucket, b.cell, b.attempts))
            .then(a.rho.total_cmp(&b.rho))
    });
    let trends = TrendIndex::new(corpus);
    let x = recs
        .iter()
        .map(|r| schema.features(r.cell, r.bucket, trends.trend(r.cell, r.bucket)))
        .collect();
    let y = recs.iter().map(|r| r.rho).collect();
    (x, y)
}

pub fn retrain(corpus: &HistoryCorpus, schema: FeatureSchema, cfg: &RetrainConfig) -> Result<AvailabilityModel> {
    let (x, y) = training_set(corpus, schema, cfg.window_buckets);
    if x.is_empty() {
        return Ok(AvailabilityModel::Prior { p: PRIOR_AVAILABILITY });
    }
    let lambda = if x.len() >= cfg.folds {
        select_lambda(&x, &y, &cfg.lambda_grid, cfg.folds)?
    } else {
        cfg.lambda_grid.iter().copied().fold(f64::NAN, f64::max)
    };
    let mut model = fit_ridge(&x, &y, lambda)?;
    model.schema = Some(schema);
    Ok(AvailabilityModel::Ridge(model))
}

/// The model in force for the current tick plus its per-cell predictions for
/// one bucket. Swapped wholesale between ticks.
#[derive(Debug, Clone)]
pub struct PredictorSnapshot {
    pub model: Arc<AvailabilityModel>,
    bucket: Option<u32>,
    cached: Vec<f64>,
}

impl PredictorSnapshot {
    pub fn new(model: AvailabilityModel) -> Self {
        Self {
            model: Arc::new(model),
            bucket: None,
            cached: Vec::new(),
        }
    }

    /// Clamped predictions for every cell in `bucket`.
    pub fn availability(&mut self, cells: usize, bucket: u32, trends: &TrendIndex) -> Result<&[f64]> {
        if self.bucket != Some(bucket) || self.cached.len() != cells {
            self.cached = match &*self.model {
                AvailabilityModel::Prior { p } => vec![clamp_availability(*p); cells],
                AvailabilityModel::Ridge(m) => (0..cells)
                    .map(|k| predict_availability(m, k, bucket, trends))
                    .collect::<Result<_>>()?,
            };
            self.bucket = Some(bucket);
        }
        Ok(&self.cached)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use crate::rng::{RngStream, StreamTag};

    /// Independent route: solve the augmented system with an unpenalised
    /// intercept column using nalgebra's LU.
    fn oracle(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (f64, Vec<f64>) {
        let n = x.len();
        let p = x[0].len();
        let a = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
        let yv = DVector::from_column_slice(y);
        let mut g = a.transpose() * &a;
        for j in 1..=p {
            g[(j, j)] += lambda;
        }
        let rhs = a.transpose() * yv;
        let sol = g.lu().solve(&rhs).expect("oracle solve");
        (sol[0], sol.iter().skip(1).copied().collect())
    }

    fn random_system(rng: &mut RngStream, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect();
        let y = (0..n).map(|_| rng.random::<f64>()).collect();
        (x, y)
    }

    #[test]
    fn perfect_fit() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..6).map(|i| 2.0 * i as f64).collect();
        let m = fit_ridge(&x, &y, 0.0).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-12);
        assert!(m.intercept.abs() < 1e-12);
    }

    #[test]
    fn shrinkage_limit() {
        let mut r = RngStream::new(1, StreamTag::Ties);
        let (mut x, y) = random_system(&mut r, 40, 3);
        for j in 0..3 {
            let mean = x.iter().map(|row| row[j]).sum::<f64>() / 40.0;
            x.iter_mut().for_each(|row| row[j] -= mean);
        }
        let m = fit_ridge(&x, &y, 1e9).unwrap();
        let norm = m.coefficients.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "{norm}");
    }

    #[test]
    fn matches_normal_equations_oracle() {
        let mut r = RngStream::new(2, StreamTag::Ties);
        let (x, y) = random_system(&mut r, 5, 2);
        let m = fit_ridge(&x, &y, 1.0).unwrap();
        let (b0, beta) = oracle(&x, &y, 1.0);
        for (a, b) in m.coefficients.iter().zip(&beta) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        assert!((m.intercept - b0).abs() <= 1e-9 * b0.abs().max(1.0));
    }

    #[test]
    fn singular_without_penalty() {
        let x = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
        let y = vec![1.0, 2.0, 3.0];
        match fit_ridge(&x, &y, 0.0) {
            Err(SimError::Singular { rank, dim }) => {
                assert_eq!(dim, 2);
                assert_eq!(rank, 1);
            }
            other => panic!("expected singular error, got {other:?}"),
        }
        assert!(fit_ridge(&x, &y, 0.5).is_ok());
    }

    #[test]
    fn select_lambda_rules() {
        let mut r = RngStream::new(3, StreamTag::Ties);
        let (x, y) = random_system(&mut r, 30, 3);
        assert_eq!(select_lambda(&x, &y, &[0.7], 5).unwrap(), 0.7);
        // Duplicate values: the first occurrence wins (same value anyway).
        assert_eq!(select_lambda(&x, &y, &[5.0, 5.0], 3).unwrap(), 5.0);
        assert!(select_lambda(&x[..2], &y[..2], &[1.0], 3).is_err());
        assert!(select_lambda(&x, &y, &[], 3).is_err());
        assert!(select_lambda(&x, &y, &[1.0], 1).is_err());
    }

    #[test]
    fn select_lambda_cv_matches_explicit_refits() {
        // Oracle: refit each training split from scratch with fit_ridge.
        let mut r = RngStream::new(8, StreamTag::Ties);
        let (x, y) = random_system(&mut r, 37, 4);
        let grid = [0.001, 0.5, 3.0, 40.0];
        let folds = 4;
        let mut best = (f64::NAN, f64::INFINITY);
        for &l in &grid {
            let mut mse = 0.0;
            for f in 0..folds {
                let tr: Vec<usize> = (0..x.len()).filter(|i| i % folds != f).collect();
                let xs: Vec<Vec<f64>> = tr.iter().map(|&i| x[i].clone()).collect();
                let ys: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
                let m = fit_ridge(&xs, &ys, l).unwrap();
                let va: Vec<usize> = (0..x.len()).filter(|i| i % folds == f).collect();
                mse += va.iter().map(|&i| (m.predict_raw(&x[i]) - y[i]).powi(2)).sum::<f64>() / va.len() as f64;
            }
            if mse / (folds as f64) < best.1 {
                best = (l, mse / folds as f64);
            }
        }
        assert_eq!(select_lambda(&x, &y, &grid, folds).unwrap(), best.0);
    }

    #[test]
    fn noise_targets_prefer_heavy_penalty() {
        let grid = [0.01, 0.1, 1.0, 10.0, 100.0, 1000.0];
        let mut largest = 0;
        for rep in 0..100 {
            let mut r = RngStream::with_key(4, StreamTag::Ties, rep);
            let (x, y) = random_system(&mut r, 500, 10);
            if select_lambda(&x, &y, &grid, 5).unwrap() == 1000.0 {
                largest += 1;
            }
        }
        assert!(largest >= 80, "largest lambda chosen {largest}/100 times");
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_availability(0.7), 0.7);
        assert_eq!(clamp_availability(-0.3), 0.01);
        assert_eq!(clamp_availability(1.8), 1.0);
    }

    #[test]
    fn predict_checks_schema() {
        let model = RidgeModel {
            coefficients: vec![0.0; FeatureSchema { cells: 4 }.dim()],
            intercept: 0.7,
            lambda: 1.0,
            schema: Some(FeatureSchema { cells: 4 }),
        };
        let trends = TrendIndex::default();
        assert_eq!(predict_availability(&model, 2, 10, &trends).unwrap(), 0.7);
        assert!(matches!(predict_availability(&model, 4, 10, &trends), Err(SimError::Schema(_))));
    }

    #[test]
    fn update_history_rules() {
        let mut c = HistoryCorpus::default();
        c.update(3, &[
            CellObservation { cell: 1, attempts: 4, successes: 3 },
            CellObservation { cell: 2, attempts: 0, successes: 0 },
        ]).unwrap();
        assert_eq!(c.records.len(), 1);
        assert_eq!(c.records[0].rho, 0.75);
        assert!(c.update(4, &[CellObservation { cell: 1, attempts: 1, successes: 2 }]).is_err());
    }

    #[test]
    fn corpus_csv_roundtrip() {
        let mut c = HistoryCorpus::default();
        c.update(25, &[CellObservation { cell: 7, attempts: 3, successes: 1 }]).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).contains("7,1500,"));
        assert_eq!(HistoryCorpus::read_csv(buf.as_slice()).unwrap(), c);
        assert!(HistoryCorpus::read_csv("k,bucket_start,rho,attempts\n1,0,1.5,2\n".as_bytes()).is_err());
    }

    #[test]
    fn retrain_fallbacks() {
        let schema = FeatureSchema { cells: 3 };
        let empty = retrain(&HistoryCorpus::default(), schema, &RetrainConfig::default()).unwrap();
        assert_eq!(empty, AvailabilityModel::Prior { p: 0.5 });

        let mut one = HistoryCorpus::default();
        one.update(5, &[CellObservation { cell: 1, attempts: 5, successes: 2 }]).unwrap();
        let AvailabilityModel::Ridge(m) = retrain(&one, schema, &RetrainConfig::default()).unwrap() else {
            panic!("expected ridge model");
        };
        let trends = TrendIndex::new(&one);
        for cell in 0..3 {
            for bucket in [0, 5, 17, 40] {
                let p = predict_availability(&m, cell, bucket, &trends).unwrap();
                assert!((p - 0.4).abs() < 1e-9, "{p}");
            }
        }
    }

    fn stationary_field(cells: usize) -> Vec<f64> {
        (0..cells).map(|k| 0.15 + 0.7 * ((k * 37 % 11) as f64 / 10.0)).collect()
    }

    fn noisy_day(corpus: &mut HistoryCorpus, day: u32, field: &[f64], rng: &mut RngStream) {
        for h in 0..BUCKETS_PER_DAY {
            let obs: Vec<CellObservation> = field
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    let attempts = 6;
                    let successes = (0..attempts).filter(|_| rng.random::<f64>() < p).count() as u32;
                    CellObservation { cell: k, attempts, successes }
                })
                .collect();
            corpus.update(day * BUCKETS_PER_DAY + h, &obs).unwrap();
        }
    }

    #[test]
    fn retraining_improves_on_stationary_field() {
        let cells = 12;
        let field = stationary_field(cells);
        let schema = FeatureSchema { cells };
        let mut rng = RngStream::new(5, StreamTag::Ties);
        let mut corpus = HistoryCorpus::default();
        let mut errors = Vec::new();
        // Rounds with a quarter, half and a full day of history.
        for hours in [6u32, 12, 24] {
            corpus.records.clear();
            let mut full = HistoryCorpus::default();
            noisy_day(&mut full, 0, &field, &mut rng);
            corpus.records = full.records.into_iter().filter(|r| r.bucket < hours).collect();
            let AvailabilityModel::Ridge(m) = retrain(&corpus, schema, &RetrainConfig::default()).unwrap() else {
                panic!()
            };
            let trends = TrendIndex::new(&corpus);
            let mse: f64 = (0..cells)
                .map(|k| (predict_availability(&m, k, 30, &trends).unwrap() - field[k]).powi(2))
                .sum::<f64>()
                / cells as f64;
            errors.push(mse);
        }
        assert!(errors[1] <= errors[0] * 1.1, "{errors:?}");
        assert!(errors[2] <= errors[1] * 1.1, "{errors:?}");
        assert!(errors[2] < errors[0], "{errors:?}");
    }

    #[test]
    fn retrain_ignores_row_order() {
        let cells = 6;
        let field = stationary_field(cells);
        let mut rng = RngStream::new(6, StreamTag::Ties);
        let mut corpus = HistoryCorpus::default();
        noisy_day(&mut corpus, 0, &field, &mut rng);
        let mut shuffled = corpus.clone();
        shuffled.records.reverse();
        let schema = FeatureSchema { cells };
        let a = retrain(&corpus, schema, &RetrainConfig::default()).unwrap();
        let b = retrain(&shuffled, schema, &RetrainConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn snapshot_is_not_mutated_by_retrain() {
        let snap = PredictorSnapshot::new(AvailabilityModel::Prior { p: 0.5 });
        let held = Arc::clone(&snap.model);
        let mut corpus = HistoryCorpus::default();
        corpus.update(0, &[CellObservation { cell: 0, attempts: 2, successes: 2 }]).unwrap();
        let next = PredictorSnapshot::new(retrain(&corpus, FeatureSchema { cells: 1 }, &RetrainConfig::default()).unwrap());
        assert!(Arc::ptr_eq(&held, &snap.model));
        assert!(!Arc::ptr_eq(&held, &next.model));
        assert_eq!(*held, AvailabilityModel::Prior { p: 0.5 });
    }
}
