//! Dataset ingestion, seeded synthetic generation, normalization, and
//! index-set management for experiment splits.
//!
//! A sample is a feature matrix (one row of `M` features per load) paired
//! with a target load vector in MW. Features are stored flattened load-major:
//! column `l * n_features + f` of the feature table holds feature `f` of
//! load `l`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Per-channel normalization statistics, fitted on one index subset and
/// applied everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

/// A load-forecasting dataset: `N` samples of (per-load feature matrix,
/// per-load target vector).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// N x (n_loads * n_features), load-major columns.
    features: DMatrix<f64>,
    /// N x n_loads, MW when `norm` is `None`, z-scores afterwards.
    targets: DMatrix<f64>,
    n_loads: usize,
    n_features: usize,
    norm: Option<NormStats>,
    base_mw: f64,
}

impl Dataset {
    pub fn new(
        features: DMatrix<f64>,
        targets: DMatrix<f64>,
        n_loads: usize,
        n_features: usize,
        base_mw: f64,
    ) -> Result<Self> {
        if n_loads == 0 || n_features == 0 {
            return Err(Error::Config("n_loads and n_features must be positive".into()));
        }
        if features.nrows() == 0 {
            return Err(Error::Config("dataset must contain at least one sample".into()));
        }
        if features.nrows() != targets.nrows() {
            return Err(Error::Dim(format!(
                "features have {} rows but targets have {}",
                features.nrows(),
                targets.nrows()
            )));
        }
        if features.ncols() != n_loads * n_features {
            return Err(Error::Dim(format!(
                "feature table has {} columns, expected n_loads*n_features = {}",
                features.ncols(),
                n_loads * n_features
            )));
        }
        if targets.ncols() != n_loads {
            return Err(Error::Dim(format!(
                "target table has {} columns, expected {}",
                targets.ncols(),
                n_loads
            )));
        }
        Ok(Dataset {
            features,
            targets,
            n_loads,
            n_features,
            norm: None,
            base_mw,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_loads(&self) -> usize {
        self.n_loads
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn base_mw(&self) -> f64 {
        self.base_mw
    }

    pub fn set_base_mw(&mut self, base_mw: f64) {
        self.base_mw = base_mw;
    }

    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.norm.as_ref()
    }

    pub fn features_table(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn targets_table(&self) -> &DMatrix<f64> {
        &self.targets
    }

    /// Feature matrix of sample `i`, shaped n_loads x n_features.
    pub fn sample_features(&self, i: usize) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.n_loads, self.n_features);
        for l in 0..self.n_loads {
            for f in 0..self.n_features {
                x[(l, f)] = self.features[(i, l * self.n_features + f)];
            }
        }
        x
    }

    /// Flattened feature vector of sample `i` (load-major, length n_loads*n_features).
    pub fn sample_features_flat(&self, i: usize) -> DVector<f64> {
        DVector::from_fn(self.features.ncols(), |c, _| self.features[(i, c)])
    }

    /// Target vector of sample `i` in stored units.
    pub fn sample_target(&self, i: usize) -> DVector<f64> {
        DVector::from_fn(self.n_loads, |l, _| self.targets[(i, l)])
    }

    /// Target vector of sample `i` in MW, undoing normalization if present.
    pub fn sample_target_mw(&self, i: usize) -> DVector<f64> {
        let y = self.sample_target(i);
        self.to_mw(&y)
    }

    /// Map a vector in stored target units to MW.
    pub fn to_mw(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.norm {
            None => y.clone(),
            Some(s) => DVector::from_fn(self.n_loads, |l, _| {
                y[l] * s.target_std[l] + s.target_mean[l]
            }),
        }
    }

    /// Per-load scale factor d(MW)/d(stored unit); all ones when raw.
    pub fn target_scale(&self) -> DVector<f64> {
        match &self.norm {
            None => DVector::from_element(self.n_loads, 1.0),
            Some(s) => DVector::from_fn(self.n_loads, |l, _| s.target_std[l]),
        }
    }

    /// Fit per-channel mean/std on `fit_idx` rows (population std, constant
    /// channels fall back to std 1) and apply to every row of both tables.
    pub fn normalize(&self, fit_idx: &[usize]) -> Result<(Dataset, NormStats)> {
        if self.norm.is_some() {
            return Err(Error::Config("dataset is already normalized".into()));
        }
        if fit_idx.is_empty() {
            return Err(Error::Config("normalize requires a nonempty fit index set".into()));
        }
        for &i in fit_idx {
            if i >= self.n_samples() {
                return Err(Error::Config(format!(
                    "fit index {i} out of range (N = {})",
                    self.n_samples()
                )));
            }
        }

        let fit_channel = |table: &DMatrix<f64>, c: usize| -> (f64, f64) {
            let mut mean = 0.0;
            for &i in fit_idx {
                mean += table[(i, c)];
            }
            mean /= fit_idx.len() as f64;
            let mut var = 0.0;
            for &i in fit_idx {
                let d = table[(i, c)] - mean;
                var += d * d;
            }
            var /= fit_idx.len() as f64;
            let std = var.sqrt();
            // constant channel: std fallback 1, channel maps to zeros
            (mean, if std > 0.0 { std } else { 1.0 })
        };

        let n_fc = self.features.ncols();
        let mut stats = NormStats {
            feature_mean: vec![0.0; n_fc],
            feature_std: vec![1.0; n_fc],
            target_mean: vec![0.0; self.n_loads],
            target_std: vec![1.0; self.n_loads],
        };
        for c in 0..n_fc {
            let (m, s) = fit_channel(&self.features, c);
            stats.feature_mean[c] = m;
            stats.feature_std[c] = s;
        }
        for c in 0..self.n_loads {
            let (m, s) = fit_channel(&self.targets, c);
            stats.target_mean[c] = m;
            stats.target_std[c] = s;
        }

        let mut features = self.features.clone();
        for c in 0..n_fc {
            for i in 0..features.nrows() {
                features[(i, c)] = (features[(i, c)] - stats.feature_mean[c]) / stats.feature_std[c];
            }
        }
        let mut targets = self.targets.clone();
        for c in 0..self.n_loads {
            for i in 0..targets.nrows() {
                targets[(i, c)] = (targets[(i, c)] - stats.target_mean[c]) / stats.target_std[c];
            }
        }

        let out = Dataset {
            features,
            targets,
            n_loads: self.n_loads,
            n_features: self.n_features,
            norm: Some(stats.clone()),
            base_mw: self.base_mw,
        };
        Ok((out, stats))
    }

    /// Invert [`Dataset::normalize`], recovering the raw tables.
    pub fn denormalize(&self) -> Result<Dataset> {
        let stats = self
            .norm
            .as_ref()
            .ok_or_else(|| Error::Config("dataset is not normalized".into()))?;
        let mut features = self.features.clone();
        for c in 0..features.ncols() {
            for i in 0..features.nrows() {
                features[(i, c)] = features[(i, c)] * stats.feature_std[c] + stats.feature_mean[c];
            }
        }
        let mut targets = self.targets.clone();
        for c in 0..targets.ncols() {
            for i in 0..targets.nrows() {
                targets[(i, c)] = targets[(i, c)] * stats.target_std[c] + stats.target_mean[c];
            }
        }
        Ok(Dataset {
            features,
            targets,
            n_loads: self.n_loads,
            n_features: self.n_features,
            norm: None,
            base_mw: self.base_mw,
        })
    }

    /// Write the feature and target tables as CSV (header + full-precision
    /// floats, '.' decimal, comma separated).
    pub fn save_csv(&self, features_path: &Path, targets_path: &Path) -> Result<()> {
        let mut fbuf = String::new();
        let mut header: Vec<String> = Vec::with_capacity(self.features.ncols());
        for l in 0..self.n_loads {
            for f in 0..self.n_features {
                header.push(format!("l{l}_f{f}"));
            }
        }
        fbuf.push_str(&header.join(","));
        fbuf.push('\n');
        for i in 0..self.n_samples() {
            for c in 0..self.features.ncols() {
                if c > 0 {
                    fbuf.push(',');
                }
                let _ = write!(fbuf, "{}", self.features[(i, c)]);
            }
            fbuf.push('\n');
        }
        std::fs::write(features_path, fbuf)?;

        let mut tbuf = String::new();
        let theader: Vec<String> = (0..self.n_loads).map(|l| format!("l{l}")).collect();
        tbuf.push_str(&theader.join(","));
        tbuf.push('\n');
        for i in 0..self.n_samples() {
            for c in 0..self.n_loads {
                if c > 0 {
                    tbuf.push(',');
                }
                let _ = write!(tbuf, "{}", self.targets[(i, c)]);
            }
            tbuf.push('\n');
        }
        std::fs::write(targets_path, tbuf)?;
        Ok(())
    }
}

fn parse_header_cell(cell: &str, path: &str) -> Result<(usize, usize)> {
    let err = || Error::Parse {
        path: path.to_string(),
        line: 1,
        msg: format!("bad feature header cell '{cell}', expected l<load>_f<feat>"),
    };
    let rest = cell.strip_prefix('l').ok_or_else(err)?;
    let (l, f) = rest.split_once("_f").ok_or_else(err)?;
    Ok((
        l.parse::<usize>().map_err(|_| err())?,
        f.parse::<usize>().map_err(|_| err())?,
    ))
}

/// Load a dataset from the features/targets CSV pair written by
/// [`Dataset::save_csv`]. Shapes are inferred from the headers.
pub fn load_csv(features_path: &Path, targets_path: &Path) -> Result<Dataset> {
    let fpath = features_path.display().to_string();
    let tpath = targets_path.display().to_string();

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(features_path)?;
    let header = rdr.headers()?.clone();
    let mut n_loads = 0usize;
    let mut n_features = 0usize;
    for cell in header.iter() {
        let (l, f) = parse_header_cell(cell, &fpath)?;
        n_loads = n_loads.max(l + 1);
        n_features = n_features.max(f + 1);
    }
    let n_cols = header.len();
    if n_features == 0 || n_cols % n_features != 0 || n_cols != n_loads * n_features {
        return Err(Error::Parse {
            path: fpath,
            line: 1,
            msg: format!(
                "feature column count {n_cols} inconsistent with {n_loads} loads x {n_features} features"
            ),
        });
    }

    let mut fdata: Vec<f64> = Vec::new();
    let mut n_rows = 0usize;
    for (row_i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != n_cols {
            return Err(Error::Parse {
                path: fpath,
                line: row_i + 2,
                msg: format!("ragged row: {} cells, expected {}", rec.len(), n_cols),
            });
        }
        for cell in rec.iter() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                path: fpath.clone(),
                line: row_i + 2,
                msg: format!("non-numeric cell '{cell}'"),
            })?;
            fdata.push(v);
        }
        n_rows += 1;
    }

    let mut trdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(targets_path)?;
    let theader = trdr.headers()?.clone();
    if theader.len() != n_loads {
        return Err(Error::Parse {
            path: tpath,
            line: 1,
            msg: format!("targets have {} columns, features imply {}", theader.len(), n_loads),
        });
    }
    let mut tdata: Vec<f64> = Vec::new();
    let mut t_rows = 0usize;
    for (row_i, rec) in trdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != n_loads {
            return Err(Error::Parse {
                path: tpath,
                line: row_i + 2,
                msg: format!("ragged row: {} cells, expected {}", rec.len(), n_loads),
            });
        }
        for cell in rec.iter() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                path: tpath.clone(),
                line: row_i + 2,
                msg: format!("non-numeric cell '{cell}'"),
            })?;
            tdata.push(v);
        }
        t_rows += 1;
    }
    if t_rows != n_rows {
        return Err(Error::Parse {
            path: tpath,
            line: t_rows + 1,
            msg: format!("targets have {t_rows} rows, features have {n_rows}"),
        });
    }

    let features = DMatrix::from_row_slice(n_rows, n_cols, &fdata);
    let targets = DMatrix::from_row_slice(n_rows, n_loads, &tdata);
    Dataset::new(features, targets, n_loads, n_features, 100.0)
}

/// Configuration for the seeded synthetic generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub n_loads: usize,
    pub n_features: usize,
    /// Gaussian noise on targets, as a fraction of each load's base level.
    pub noise_std: f64,
    pub base_mw: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        // one year of hourly data, 14 loads x 10 features
        SyntheticConfig {
            seed: 7,
            n_samples: 8760,
            n_loads: 14,
            n_features: 10,
            noise_std: 0.05,
            base_mw: 100.0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.n_samples < 10 {
            return Err(Error::Config("synthetic generator requires N >= 10".into()));
        }
        if self.n_loads < 1 {
            return Err(Error::Config("synthetic generator requires n >= 1".into()));
        }
        if self.n_features < 2 {
            return Err(Error::Config("synthetic generator requires M >= 2".into()));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be nonnegative".into()));
        }
        Ok(())
    }

    /// Number of trailing calendar channels (cos/sin of hour and weekday).
    pub fn n_calendar(&self) -> usize {
        4.min(self.n_features - 1)
    }
}

/// The generator's ground-truth map from a raw feature matrix to the
/// noiseless target vector: a per-load affine response to tanh-transformed
/// weather channels plus a linear response to the periodic calendar channels.
#[derive(Debug, Clone)]
pub struct SyntheticMap {
    pub base: DVector<f64>,
    /// n_loads x n_weather, rows scaled to unit 1-norm times the weather amplitude.
    pub weather_coef: DMatrix<f64>,
    /// n_loads x n_calendar, same scaling with the calendar amplitude.
    pub calendar_coef: DMatrix<f64>,
    n_features: usize,
}

const WEATHER_AMPLITUDE: f64 = 0.30;
const CALENDAR_AMPLITUDE: f64 = 0.22;

impl SyntheticMap {
    pub fn from_config(cfg: &SyntheticConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n_cal = cfg.n_calendar();
        let n_weather = cfg.n_features - n_cal;

        let base = DVector::from_fn(cfg.n_loads, |_, _| {
            0.20 * cfg.base_mw * rng.random_range(0.7..1.3)
        });
        let mut weather_coef = DMatrix::zeros(cfg.n_loads, n_weather);
        let mut calendar_coef = DMatrix::zeros(cfg.n_loads, n_cal);
        for l in 0..cfg.n_loads {
            let raw: Vec<f64> = (0..n_weather)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm: f64 = raw.iter().map(|v| v.abs()).sum::<f64>().max(1e-12);
            for (c, v) in raw.iter().enumerate() {
                weather_coef[(l, c)] = WEATHER_AMPLITUDE * base[l] * v / norm;
            }
            let rawc: Vec<f64> = (0..n_cal)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let normc: f64 = rawc.iter().map(|v| v.abs()).sum::<f64>().max(1e-12);
            for (c, v) in rawc.iter().enumerate() {
                calendar_coef[(l, c)] = CALENDAR_AMPLITUDE * base[l] * v / normc;
            }
        }
        Ok(SyntheticMap {
            base,
            weather_coef,
            calendar_coef,
            n_features: cfg.n_features,
        })
    }

    /// Noiseless target vector for one raw feature matrix (n_loads x n_features).
    pub fn apply(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let n_loads = self.base.len();
        let n_cal = self.calendar_coef.ncols();
        let n_weather = self.n_features - n_cal;
        DVector::from_fn(n_loads, |l, _| {
            let mut y = self.base[l];
            for c in 0..n_weather {
                y += self.weather_coef[(l, c)] * x[(l, c)].tanh();
            }
            for c in 0..n_cal {
                y += self.calendar_coef[(l, c)] * x[(l, n_weather + c)];
            }
            y.max(1e-3)
        })
    }
}

/// Generate a seeded synthetic dataset with weather-like channels, periodic
/// calendar channels, and strictly positive targets in MW.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    let map = SyntheticMap::from_config(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);

    let n_cal = cfg.n_calendar();
    let n_weather = cfg.n_features - n_cal;

    // per-(load, channel) signal parameters
    struct WeatherParams {
        daily_amp: f64,
        daily_phase: f64,
        weekly_amp: f64,
        weekly_phase: f64,
        drift: f64,
    }
    let mut params = Vec::with_capacity(cfg.n_loads * n_weather);
    for _ in 0..cfg.n_loads * n_weather {
        params.push(WeatherParams {
            daily_amp: rng.random_range(0.5..1.5),
            daily_phase: rng.random_range(0.0..std::f64::consts::TAU),
            weekly_amp: rng.random_range(0.2..0.8),
            weekly_phase: rng.random_range(0.0..std::f64::consts::TAU),
            drift: rng.random_range(-0.6..0.6),
        });
    }

    let n = cfg.n_samples;
    let mut features = DMatrix::zeros(n, cfg.n_loads * cfg.n_features);
    let mut targets = DMatrix::zeros(n, cfg.n_loads);
    let tau = std::f64::consts::TAU;
    for t in 0..n {
        let hour = (t % 24) as f64;
        let dow = ((t / 24) % 7) as f64;
        let cal = [
            (tau * hour / 24.0).cos(),
            (tau * hour / 24.0).sin(),
            (tau * dow / 7.0).cos(),
            (tau * dow / 7.0).sin(),
        ];
        let progress = 2.0 * (t as f64) / (n as f64) - 1.0;
        let mut x = DMatrix::zeros(cfg.n_loads, cfg.n_features);
        for l in 0..cfg.n_loads {
            for c in 0..n_weather {
                let p = &params[l * n_weather + c];
                let noise: f64 = rng.sample(StandardNormal);
                x[(l, c)] = p.daily_amp * (tau * (t as f64) / 24.0 + p.daily_phase).sin()
                    + p.weekly_amp * (tau * (t as f64) / 168.0 + p.weekly_phase).sin()
                    + p.drift * progress
                    + 0.25 * noise;
            }
            for (c, v) in cal.iter().take(n_cal).enumerate() {
                x[(l, n_weather + c)] = *v;
            }
        }
        let clean = map.apply(&x);
        for l in 0..cfg.n_loads {
            let noise: f64 = rng.sample(StandardNormal);
            let y = clean[l] + map.base[l] * cfg.noise_std * noise;
            targets[(t, l)] = y.max(1e-3);
            for c in 0..cfg.n_features {
                features[(t, l * cfg.n_features + c)] = x[(l, c)];
            }
        }
    }

    Dataset::new(features, targets, cfg.n_loads, cfg.n_features, cfg.base_mw)
}

/// How the unlearn subset is drawn from its scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnlearnPolicy {
    /// First `k` indices of the scope (chronological removal).
    FirstK,
    /// `k` indices sampled without replacement, deterministic under the seed.
    SeededRandom,
}

/// Which index set the unlearn request is drawn from: the whole training set
/// (shared-coefficient linear model) or only the sensitive portion (extractor
/// head, where the pretrain portion never touches the trainable layer).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnlearnScope {
    Train,
    Sensitive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub pretrain_frac: f64,
    pub unlearn_ratio: f64,
    pub policy: UnlearnPolicy,
    pub scope: UnlearnScope,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_frac: 0.8,
            pretrain_frac: 0.3,
            unlearn_ratio: 0.0,
            policy: UnlearnPolicy::SeededRandom,
            scope: UnlearnScope::Train,
            seed: 0,
        }
    }
}

/// Ordered index sets for every experiment role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub pretrain_idx: Vec<usize>,
    pub sensitive_idx: Vec<usize>,
    pub unlearn_idx: Vec<usize>,
    pub remain_idx: Vec<usize>,
    pub scope: UnlearnScope,
}

impl SplitPlan {
    /// The index set the unlearn/remain partition covers.
    pub fn scope_idx(&self) -> &[usize] {
        match self.scope {
            UnlearnScope::Train => &self.train_idx,
            UnlearnScope::Sensitive => &self.sensitive_idx,
        }
    }
}

/// Chronological train/test and pretrain/sensitive cuts, then an unlearn
/// subset drawn from the configured scope. Deterministic under the seed.
pub fn make_splits(n_samples: usize, cfg: &SplitConfig) -> Result<SplitPlan> {
    if !(0.0 < cfg.train_frac && cfg.train_frac < 1.0) {
        return Err(Error::Config("train_frac must lie in (0, 1)".into()));
    }
    if !(0.0..1.0).contains(&cfg.pretrain_frac) {
        return Err(Error::Config("pretrain_frac must lie in [0, 1)".into()));
    }
    if !(0.0..1.0).contains(&cfg.unlearn_ratio) {
        return Err(Error::Config(
            "unlearn_ratio must lie in [0, 1): the remain set must be nonempty".into(),
        ));
    }
    let n_train = ((n_samples as f64) * cfg.train_frac).floor() as usize;
    if n_train == 0 || n_train == n_samples {
        return Err(Error::Config(format!(
            "train_frac {} leaves an empty train or test set for N = {}",
            cfg.train_frac, n_samples
        )));
    }
    let train_idx: Vec<usize> = (0..n_train).collect();
    let test_idx: Vec<usize> = (n_train..n_samples).collect();

    let n_pre = ((n_train as f64) * cfg.pretrain_frac).floor() as usize;
    let pretrain_idx: Vec<usize> = (0..n_pre).collect();
    let sensitive_idx: Vec<usize> = (n_pre..n_train).collect();

    let scope: &[usize] = match cfg.scope {
        UnlearnScope::Train => &train_idx,
        UnlearnScope::Sensitive => &sensitive_idx,
    };
    if scope.is_empty() {
        return Err(Error::Config("unlearn scope is empty".into()));
    }

    let k = ((scope.len() as f64) * cfg.unlearn_ratio).floor() as usize;
    let k = k.min(scope.len() - 1);
    let unlearn_idx: Vec<usize> = match cfg.policy {
        UnlearnPolicy::FirstK => scope[..k].to_vec(),
        UnlearnPolicy::SeededRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut pool: Vec<usize> = scope.to_vec();
            // partial Fisher-Yates: first k entries are the sample
            for i in 0..k {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            let mut chosen = pool[..k].to_vec();
            chosen.sort_unstable();
            chosen
        }
    };
    let remain_idx: Vec<usize> = scope
        .iter()
        .copied()
        .filter(|i| unlearn_idx.binary_search(i).is_err())
        .collect();

    Ok(SplitPlan {
        train_idx,
        test_idx,
        pretrain_idx,
        sensitive_idx,
        unlearn_idx,
        remain_idx,
        scope: cfg.scope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn small_cfg() -> SyntheticConfig {
        SyntheticConfig {
            seed: 7,
            n_samples: 100,
            n_loads: 14,
            n_features: 10,
            noise_std: 0.05,
            base_mw: 100.0,
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(&small_cfg()).unwrap();
        let b = generate_synthetic(&small_cfg()).unwrap();
        assert_eq!(a.features_table(), b.features_table());
        assert_eq!(a.targets_table(), b.targets_table());
    }

    #[test]
    fn synthetic_seeds_differ() {
        let a = generate_synthetic(&small_cfg()).unwrap();
        let mut cfg = small_cfg();
        cfg.seed = 8;
        let b = generate_synthetic(&cfg).unwrap();
        assert_ne!(a.features_table(), b.features_table());
    }

    #[test]
    fn synthetic_zero_noise_matches_ground_truth_map() {
        let mut cfg = small_cfg();
        cfg.noise_std = 0.0;
        let ds = generate_synthetic(&cfg).unwrap();
        let map = SyntheticMap::from_config(&cfg).unwrap();
        for i in 0..ds.n_samples() {
            let x = ds.sample_features(i);
            let y = map.apply(&x);
            let stored = ds.sample_target(i);
            assert_relative_eq!(y, stored, epsilon = 1e-12);
        }
    }

    #[test]
    fn synthetic_targets_positive_and_finite() {
        let mut cfg = small_cfg();
        cfg.noise_std = 0.3;
        let ds = generate_synthetic(&cfg).unwrap();
        for i in 0..ds.n_samples() {
            for l in 0..ds.n_loads() {
                let y = ds.targets_table()[(i, l)];
                assert!(y.is_finite() && y > 0.0);
            }
        }
    }

    #[test]
    fn synthetic_rejects_bad_config() {
        let mut cfg = small_cfg();
        cfg.n_samples = 5;
        assert!(generate_synthetic(&cfg).is_err());
        let mut cfg = small_cfg();
        cfg.noise_std = -0.1;
        assert!(generate_synthetic(&cfg).is_err());
        let mut cfg = small_cfg();
        cfg.n_features = 1;
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn normalize_hand_statistics() {
        // one load, one feature channel {0, 2}: mean 1, population std 1
        let features = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        let targets = DMatrix::from_row_slice(2, 1, &[10.0, 30.0]);
        let ds = Dataset::new(features, targets, 1, 1, 100.0).unwrap();
        let (nds, stats) = ds.normalize(&[0, 1]).unwrap();
        assert_relative_eq!(stats.feature_mean[0], 1.0);
        assert_relative_eq!(stats.feature_std[0], 1.0);
        assert_relative_eq!(nds.features_table()[(0, 0)], -1.0);
        assert_relative_eq!(nds.features_table()[(1, 0)], 1.0);
        // target channel {10, 30}: mean 20, std 10
        assert_relative_eq!(nds.targets_table()[(0, 0)], -1.0);
        assert_relative_eq!(nds.targets_table()[(1, 0)], 1.0);
    }

    #[test]
    fn normalize_constant_channel_falls_back() {
        let features = DMatrix::from_row_slice(3, 1, &[5.0, 5.0, 5.0]);
        let targets = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let ds = Dataset::new(features, targets, 1, 1, 100.0).unwrap();
        let (nds, stats) = ds.normalize(&[0, 1, 2]).unwrap();
        assert_relative_eq!(stats.feature_std[0], 1.0);
        for i in 0..3 {
            assert_relative_eq!(nds.features_table()[(i, 0)], 0.0);
        }
    }

    #[test]
    fn normalize_fits_only_on_fit_rows() {
        let ds = generate_synthetic(&small_cfg()).unwrap();
        let fit: Vec<usize> = (0..80).collect();
        let (nds, _) = ds.normalize(&fit).unwrap();
        // fitted split has |mean| ~ 0 and |std - 1| ~ 0 per channel
        for c in 0..nds.features_table().ncols() {
            let mut mean = 0.0;
            for &i in &fit {
                mean += nds.features_table()[(i, c)];
            }
            mean /= fit.len() as f64;
            let mut var = 0.0;
            for &i in &fit {
                let d = nds.features_table()[(i, c)] - mean;
                var += d * d;
            }
            var /= fit.len() as f64;
            assert!(mean.abs() < 1e-9, "channel {c} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-6, "channel {c} std {}", var.sqrt());
        }
    }

    #[test]
    fn normalize_round_trip() {
        let ds = generate_synthetic(&small_cfg()).unwrap();
        let fit: Vec<usize> = (0..50).collect();
        let (nds, _) = ds.normalize(&fit).unwrap();
        let back = nds.denormalize().unwrap();
        for i in 0..ds.n_samples() {
            for c in 0..ds.features_table().ncols() {
                assert_relative_eq!(
                    back.features_table()[(i, c)],
                    ds.features_table()[(i, c)],
                    max_relative = 1e-12,
                    epsilon = 1e-12
                );
            }
            for l in 0..ds.n_loads() {
                assert_relative_eq!(
                    back.targets_table()[(i, l)],
                    ds.targets_table()[(i, l)],
                    max_relative = 1e-12,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn csv_round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let fp = dir.path().join("features.csv");
        let tp = dir.path().join("targets.csv");
        let mut cfg = small_cfg();
        cfg.n_samples = 20;
        let ds = generate_synthetic(&cfg).unwrap();
        ds.save_csv(&fp, &tp).unwrap();
        let back = load_csv(&fp, &tp).unwrap();
        assert_eq!(back.n_loads(), ds.n_loads());
        assert_eq!(back.n_features(), ds.n_features());
        assert_eq!(back.features_table(), ds.features_table());
        assert_eq!(back.targets_table(), ds.targets_table());
    }

    #[test]
    fn csv_minimal_file() {
        let dir = tempfile::tempdir().unwrap();
        let fp = dir.path().join("f.csv");
        let tp = dir.path().join("t.csv");
        std::fs::write(&fp, "l0_f0,l0_f1\n1.0,2.0\n3.0,4.0\n").unwrap();
        std::fs::write(&tp, "l0\n5.0\n6.0\n").unwrap();
        let ds = load_csv(&fp, &tp).unwrap();
        assert_eq!(ds.n_samples(), 2);
        assert_eq!(ds.n_loads(), 1);
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.targets_table()[(1, 0)], 6.0);
    }

    #[test]
    fn csv_row_count_mismatch_errors() {
        let dir = tempfile::tempdir().unwrap();
        let fp = dir.path().join("f.csv");
        let tp = dir.path().join("t.csv");
        std::fs::write(&fp, "l0_f0,l0_f1\n1.0,2.0\n3.0,4.0\n").unwrap();
        std::fs::write(&tp, "l0\n5.0\n").unwrap();
        assert!(load_csv(&fp, &tp).is_err());
    }

    #[test]
    fn csv_bad_cells_error() {
        let dir = tempfile::tempdir().unwrap();
        let fp = dir.path().join("f.csv");
        let tp = dir.path().join("t.csv");
        std::fs::write(&fp, "l0_f0,l0_f1\n1.0,abc\n").unwrap();
        std::fs::write(&tp, "l0\n5.0\n").unwrap();
        assert!(load_csv(&fp, &tp).is_err());
        std::fs::write(&fp, "l0_f0,l0_f1\n1.0\n").unwrap();
        assert!(load_csv(&fp, &tp).is_err());
    }

    #[test]
    fn splits_first_fraction_rule() {
        let cfg = SplitConfig::default();
        let plan = make_splits(10, &cfg).unwrap();
        assert_eq!(plan.train_idx, (0..8).collect::<Vec<_>>());
        assert_eq!(plan.test_idx, vec![8, 9]);
        assert_eq!(plan.pretrain_idx, vec![0, 1]);
        assert_eq!(plan.sensitive_idx, (2..8).collect::<Vec<_>>());
    }

    #[test]
    fn splits_zero_ratio_is_noop() {
        let cfg = SplitConfig::default();
        let plan = make_splits(100, &cfg).unwrap();
        assert!(plan.unlearn_idx.is_empty());
        assert_eq!(plan.remain_idx, plan.train_idx);
    }

    #[test]
    fn splits_seeded_random_deterministic() {
        let cfg = SplitConfig {
            unlearn_ratio: 0.25,
            seed: 42,
            ..SplitConfig::default()
        };
        let a = make_splits(100, &cfg).unwrap();
        let b = make_splits(100, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.unlearn_idx.len(), 20);
    }

    #[test]
    fn splits_ratio_one_rejected() {
        let cfg = SplitConfig {
            unlearn_ratio: 1.0,
            ..SplitConfig::default()
        };
        assert!(make_splits(100, &cfg).is_err());
    }

    proptest! {
        #[test]
        fn split_invariants(
            n in 10usize..300,
            train_frac in 0.2f64..0.9,
            pretrain_frac in 0.0f64..0.9,
            ratio in 0.0f64..0.99,
            policy in prop_oneof![Just(UnlearnPolicy::FirstK), Just(UnlearnPolicy::SeededRandom)],
            scope in prop_oneof![Just(UnlearnScope::Train), Just(UnlearnScope::Sensitive)],
            seed in 0u64..1000,
        ) {
            let cfg = SplitConfig { train_frac, pretrain_frac, unlearn_ratio: ratio, policy, scope, seed };
            let Ok(plan) = make_splits(n, &cfg) else { return Ok(()); };
            // train/test partition 0..n
            let mut all = plan.train_idx.clone();
            all.extend(&plan.test_idx);
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            // pretrain + sensitive = train, disjoint
            let mut tr = plan.pretrain_idx.clone();
            tr.extend(&plan.sensitive_idx);
            prop_assert_eq!(&tr, &plan.train_idx);
            // unlearn + remain = scope, disjoint, remain nonempty
            let mut sc = plan.unlearn_idx.clone();
            sc.extend(&plan.remain_idx);
            sc.sort_unstable();
            prop_assert_eq!(&sc, &plan.scope_idx().to_vec());
            prop_assert!(!plan.remain_idx.is_empty());
            for u in &plan.unlearn_idx {
                prop_assert!(plan.remain_idx.binary_search(u).is_err());
            }
        }
    }
}
