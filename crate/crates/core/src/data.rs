//! Dataset generation, CSV ingestion, one-hot encoding, and splitting. All
//! loaders are pure functions of their inputs and seeds; standardization
//! statistics always travel with the dataset so predictions can be mapped
//! back to raw units.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::standard_normal;
use crate::tensor::Tensor;

pub const TOY_DEFAULT_N: usize = 2000;
pub const TOY_DEFAULT_NOISE: f64 = 0.1;
pub const TOY_AMPLITUDE: f64 = 1.0;
pub const TOY_ANGULAR_FREQ: f64 = 2.0 * std::f64::consts::PI * 0.75;

/// A feature/target table plus the statistics needed to undo
/// standardization. Raw datasets carry identity statistics.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub features: Tensor,
    pub targets: Tensor,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl Dataset {
    /// Wrap raw (unstandardized) features and targets.
    pub fn raw(name: &str, features: Tensor, targets: Tensor, seed: u64) -> Result<Dataset> {
        if features.rows() != targets.rows() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                lhs: features.shape(),
                rhs: targets.shape(),
            });
        }
        if !features.is_finite() || !targets.is_finite() {
            return Err(Error::NonFinite(format!("dataset {name}")));
        }
        let d = features.cols();
        Ok(Dataset {
            name: name.to_string(),
            features,
            targets,
            feature_means: vec![0.0; d],
            feature_stds: vec![1.0; d],
            target_mean: 0.0,
            target_std: 1.0,
            seed,
            warnings: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Map standardized predictions back to raw target units.
    pub fn destandardize_targets(&self, standardized: &Tensor) -> Tensor {
        standardized.map(|v| v * self.target_std + self.target_mean)
    }

    /// Map raw feature rows into this dataset's standardized space.
    pub fn standardize_features(&self, raw: &Tensor) -> Result<Tensor> {
        if raw.cols() != self.dim() {
            return Err(Error::ShapeMismatch {
                op: "standardize_features",
                lhs: (raw.rows(), self.dim()),
                rhs: raw.shape(),
            });
        }
        let mut out = raw.clone();
        for r in 0..raw.rows() {
            for c in 0..raw.cols() {
                out.set(r, c, (raw.get(r, c) - self.feature_means[c]) / self.feature_stds[c]);
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Toy data
// ---------------------------------------------------------------------------

/// One-dimensional noisy periodic regression data:
/// x ~ Uniform(-2, 2), y = sin(2 pi 0.75 x) + N(0, noise_sigma^2).
pub fn toy_periodic(n: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if n < 1 {
        return Err(Error::InvalidParam("toy_periodic needs n >= 1".into()));
    }
    if noise_sigma < 0.0 {
        return Err(Error::InvalidParam("noise_sigma must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: f64 = rng.gen_range(-2.0..2.0);
        let eps = if noise_sigma > 0.0 {
            noise_sigma * standard_normal(&mut rng)
        } else {
            0.0
        };
        x.push(xi);
        y.push(TOY_AMPLITUDE * (TOY_ANGULAR_FREQ * xi).sin() + eps);
    }
    Dataset::raw("toy-periodic", Tensor::new(n, 1, x)?, Tensor::new(n, 1, y)?, seed)
}

/// The noiseless regression curve underlying `toy_periodic`.
pub fn toy_curve(x: &Tensor) -> Tensor {
    x.map(|v| TOY_AMPLITUDE * (TOY_ANGULAR_FREQ * v).sin())
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

/// Load a rectangular numeric CSV with a header row. The named target column
/// becomes the regression target. Missing cells (empty, "?", "NA") error with
/// their row indices; non-numeric cells error with their location. Constant
/// feature columns are dropped with a warning. With `standardize`, columns
/// are centered and scaled and the statistics retained.
pub fn load_csv(path: &Path, target_column: &str, standardize: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::InvalidParam(format!("no column named '{target_column}' in {}", path.display())))?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut missing_rows = BTreeSet::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::InvalidParam(format!(
                "row {r} has {} cells, header has {}",
                record.len(),
                headers.len()
            )));
        }
        let mut parsed = Vec::with_capacity(record.len());
        for (c, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() || cell == "?" || cell.eq_ignore_ascii_case("na") {
                missing_rows.insert(r);
                parsed.push(f64::NAN);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => parsed.push(v),
                _ => {
                    return Err(Error::NonNumeric {
                        row: r,
                        col: headers[c].clone(),
                        value: cell.to_string(),
                    })
                }
            }
        }
        rows.push(parsed);
    }
    if !missing_rows.is_empty() {
        return Err(Error::MissingValues(missing_rows.into_iter().collect()));
    }
    if rows.is_empty() {
        return Err(Error::InvalidParam(format!("{} has no data rows", path.display())));
    }

    let n = rows.len();
    let mut warnings = Vec::new();
    // identify constant feature columns before assembling the matrix
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| {
            if c == target_idx {
                return false;
            }
            let first = rows[0][c];
            let constant = rows.iter().all(|row| row[c] == first);
            if constant {
                warnings.push(format!("dropped constant column '{}'", headers[c]));
            }
            !constant
        })
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::InvalidParam("no non-constant feature columns".into()));
    }

    let d = feature_cols.len();
    let mut features = Tensor::zeros(n, d);
    let mut targets = Tensor::zeros(n, 1);
    for (r, row) in rows.iter().enumerate() {
        for (j, &c) in feature_cols.iter().enumerate() {
            features.set(r, j, row[c]);
        }
        targets.set(r, 0, row[target_idx]);
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "csv".to_string());
    let mut ds = Dataset::raw(&name, features, targets, 0)?;
    ds.warnings = warnings;
    if standardize {
        standardize_in_place(&mut ds)?;
    }
    Ok(ds)
}

fn column_stats(t: &Tensor, col: usize) -> (f64, f64) {
    let n = t.rows() as f64;
    let mean = (0..t.rows()).map(|r| t.get(r, col)).sum::<f64>() / n;
    let var = (0..t.rows()).map(|r| (t.get(r, col) - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn standardize_in_place(ds: &mut Dataset) -> Result<()> {
    for c in 0..ds.dim() {
        let (mean, std) = column_stats(&ds.features, c);
        if std <= 1e-12 {
            return Err(Error::InvalidParam(format!(
                "feature column {c} of {} is constant",
                ds.name
            )));
        }
        for r in 0..ds.n() {
            let v = (ds.features.get(r, c) - mean) / std;
            ds.features.set(r, c, v);
        }
        ds.feature_means[c] = mean;
        ds.feature_stds[c] = std;
    }
    let (tmean, tstd) = column_stats(&ds.targets, 0);
    if tstd <= 1e-12 {
        return Err(Error::InvalidParam(format!("target column of {} is constant", ds.name)));
    }
    for r in 0..ds.n() {
        let v = (ds.targets.get(r, 0) - tmean) / tstd;
        ds.targets.set(r, 0, v);
    }
    ds.target_mean = tmean;
    ds.target_std = tstd;
    Ok(())
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Seeded disjoint row partition with no statistics changes.
pub fn partition(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParam(format!(
            "test_fraction must be in (0,1), got {test_fraction}"
        )));
    }
    let n = ds.n();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::InvalidParam(format!(
            "split of {n} rows at fraction {test_fraction} leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let (test_idx, train_idx) = order.split_at(n_test);
    let mut sorted_train = train_idx.to_vec();
    let mut sorted_test = test_idx.to_vec();
    sorted_train.sort_unstable();
    sorted_test.sort_unstable();
    let sub = |idx: &[usize], suffix: &str| -> Result<Dataset> {
        let mut out = ds.clone();
        out.name = format!("{}-{suffix}", ds.name);
        out.features = ds.features.select_rows(idx);
        out.targets = ds.targets.select_rows(idx);
        out.seed = seed;
        Ok(out)
    };
    Ok((sub(&sorted_train, "train")?, sub(&sorted_test, "test")?))
}

/// Seeded train/test split with train-only standardization: statistics are
/// computed on the training rows and applied to both sides, so nothing about
/// the test set leaks into the model's input scale.
pub fn split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (mut train, mut test) = partition(ds, test_fraction, seed)?;
    for c in 0..train.dim() {
        let (mean, std) = column_stats(&train.features, c);
        let std = if std > 1e-12 {
            std
        } else {
            // a column can collapse inside the training rows even when the
            // full table varies; center it and leave the scale alone
            train.warnings.push(format!("feature column {c} constant within train rows"));
            1.0
        };
        for part in [&mut train, &mut test] {
            for r in 0..part.n() {
                let v = (part.features.get(r, c) - mean) / std;
                part.features.set(r, c, v);
            }
            part.feature_means[c] = mean;
            part.feature_stds[c] = std;
        }
    }
    let (tmean, tstd) = column_stats(&train.targets, 0);
    if tstd <= 1e-12 {
        return Err(Error::InvalidParam("train targets are constant".into()));
    }
    for part in [&mut train, &mut test] {
        for r in 0..part.n() {
            let v = (part.targets.get(r, 0) - tmean) / tstd;
            part.targets.set(r, 0, v);
        }
        part.target_mean = tmean;
        part.target_std = tstd;
    }
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Mushroom encoding
// ---------------------------------------------------------------------------

/// Mushroom class label from the first column of the agaricus table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MushroomClass {
    Edible,
    Poisonous,
}

/// One-hot encoded mushroom table: one block of indicator columns per
/// categorical feature; '?' is an ordinary category.
#[derive(Clone, Debug)]
pub struct MushroomData {
    pub contexts: Tensor,
    pub labels: Vec<MushroomClass>,
    /// Number of raw categorical feature columns (22 for agaricus data).
    pub n_features: usize,
}

/// Read a UCI agaricus-lepiota style file: 23 comma-separated single
/// character columns, label first ('e' or 'p'), no header.
pub fn encode_mushroom(path: &Path) -> Result<MushroomData> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut labels = Vec::new();
    let mut raw: Vec<Vec<String>> = Vec::new();
    let mut n_cols = None;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let cols = record.len();
        if cols < 2 {
            return Err(Error::InvalidParam(format!("row {r} has {cols} columns")));
        }
        match n_cols {
            None => n_cols = Some(cols),
            Some(c) if c != cols => {
                return Err(Error::InvalidParam(format!(
                    "row {r} has {cols} columns, expected {c}"
                )))
            }
            _ => {}
        }
        match record.get(0).map(str::trim) {
            Some("e") => labels.push(MushroomClass::Edible),
            Some("p") => labels.push(MushroomClass::Poisonous),
            other => {
                return Err(Error::InvalidParam(format!(
                    "row {r}: unknown label {:?}, expected 'e' or 'p'",
                    other.unwrap_or("")
                )))
            }
        }
        raw.push(record.iter().skip(1).map(|s| s.trim().to_string()).collect());
    }
    if raw.is_empty() {
        return Err(Error::InvalidParam(format!("{} has no rows", path.display())));
    }
    let n_features = n_cols.unwrap() - 1;

    // deterministic category sets: sorted unique values per column
    let mut categories: Vec<Vec<String>> = Vec::with_capacity(n_features);
    for c in 0..n_features {
        let set: BTreeSet<String> = raw.iter().map(|row| row[c].clone()).collect();
        categories.push(set.into_iter().collect());
    }
    let offsets: Vec<usize> = categories
        .iter()
        .scan(0usize, |acc, cats| {
            let start = *acc;
            *acc += cats.len();
            Some(start)
        })
        .collect();
    let width: usize = categories.iter().map(|c| c.len()).sum();

    let mut contexts = Tensor::zeros(raw.len(), width);
    for (r, row) in raw.iter().enumerate() {
        for (c, value) in row.iter().enumerate() {
            let k = categories[c]
                .binary_search(value)
                .expect("category sets were built from these rows");
            contexts.set(r, offsets[c] + k, 1.0);
        }
    }
    Ok(MushroomData {
        contexts,
        labels,
        n_features,
    })
}

// ---------------------------------------------------------------------------
// Synthetic stand-ins (this environment cannot fetch the UCI archives)
// ---------------------------------------------------------------------------

/// Nonlinear regression table from a random tanh-mixture teacher. Written to
/// CSV, these files exercise the same ingestion path as the real UCI sets.
pub fn synth_regression(name: &str, n: usize, d: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 || d < 1 {
        return Err(Error::InvalidParam("synth_regression needs n >= 2, d >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // per-column location/scale so the raw table looks unstandardized
    let col_mean: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let col_std: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..4.0)).collect();
    let units = 4usize;
    let w: Vec<Vec<f64>> = (0..units)
        .map(|_| (0..d).map(|_| standard_normal(&mut rng) * (1.5 / (d as f64).sqrt())).collect())
        .collect();
    let b: Vec<f64> = (0..units).map(|_| standard_normal(&mut rng)).collect();
    let c: Vec<f64> = (0..units)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(1.0..2.0)
        })
        .collect();
    let y_shift: f64 = rng.gen_range(-10.0..10.0);
    let y_scale: f64 = rng.gen_range(1.0..5.0);

    let mut features = Tensor::zeros(n, d);
    let mut targets = Tensor::zeros(n, 1);
    for r in 0..n {
        let z: Vec<f64> = (0..d).map(|_| standard_normal(&mut rng)).collect();
        let mut y = 0.0;
        for u in 0..units {
            let pre: f64 = z.iter().zip(&w[u]).map(|(zi, wi)| zi * wi).sum::<f64>() + b[u];
            y += c[u] * pre.tanh();
        }
        y = y_shift + y_scale * (y + noise * standard_normal(&mut rng));
        for j in 0..d {
            features.set(r, j, col_mean[j] + col_std[j] * z[j]);
        }
        targets.set(r, 0, y);
    }
    Dataset::raw(name, features, targets, seed)
}

/// Write a raw regression table with header f0..f{d-1}, target.
pub fn write_regression_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    header.push("target".to_string());
    writer.write_record(&header)?;
    for r in 0..ds.n() {
        let mut row: Vec<String> = (0..ds.dim()).map(|c| format!("{}", ds.features.get(r, c))).collect();
        row.push(format!("{}", ds.targets.get(r, 0)));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

const MUSHROOM_ALPHABETS: [&str; 22] = [
    "bcxfks",    // cap shape
    "fgys",      // cap surface
    "nbcgrpuewy",// cap color
    "tf",        // bruises
    "alcyfmnps", // odor
    "adfn",      // gill attachment
    "cwd",       // gill spacing
    "bn",        // gill size
    "knbhgropuewy", // gill color
    "et",        // stalk shape
    "bcuezr?",   // stalk root, '?' is the dataset's missing marker
    "fyks",      // stalk surface above ring
    "fyks",      // stalk surface below ring
    "nbcgopewy", // stalk color above ring
    "nbcgopewy", // stalk color below ring
    "p",         // veil type (constant in the real data too)
    "nowy",      // veil color
    "not",       // ring number
    "ceflnpsz",  // ring type
    "knbhrouwy", // spore print color
    "abcnsvy",   // population
    "glmpuwd",   // habitat
];

const ODOR_COL: usize = 4;
const STALK_ROOT_COL: usize = 10;
const SPORE_COL: usize = 19;

/// Write an agaricus-style table whose labels follow a sparse rule on odor
/// and spore print color, roughly matching the real file's 52/48 class split.
/// The rule is deterministic in the features, so it is learnable from the
/// one-hot encoding.
pub fn synth_mushroom_file(path: &Path, n: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut writer = csv::Writer::from_path(path)?;
    for _ in 0..n {
        let mut row: Vec<String> = Vec::with_capacity(23);
        row.push(String::new()); // label filled below
        for (c, alphabet) in MUSHROOM_ALPHABETS.iter().enumerate() {
            let chars: Vec<char> = alphabet.chars().collect();
            let ch = match c {
                // odor: 'n' (none) common, pleasant smells rare, the rest foul
                ODOR_COL => {
                    let r: f64 = rng.gen();
                    if r < 0.43 {
                        'n'
                    } else if r < 0.48 {
                        'a'
                    } else if r < 0.53 {
                        'l'
                    } else {
                        ['c', 'y', 'f', 'm', 'p', 's'][rng.gen_range(0..6)]
                    }
                }
                // stalk root: missing in about 30 percent of rows
                STALK_ROOT_COL => {
                    if rng.gen::<f64>() < 0.3 {
                        '?'
                    } else {
                        let known: Vec<char> = "bcuezr".chars().collect();
                        known[rng.gen_range(0..known.len())]
                    }
                }
                _ => chars[rng.gen_range(0..chars.len())],
            };
            row.push(ch.to_string());
        }
        let odor = row[1 + ODOR_COL].chars().next().unwrap();
        let spore = row[1 + SPORE_COL].chars().next().unwrap();
        let poisonous = matches!(odor, 'c' | 'y' | 'f' | 'm' | 'p' | 's') || (odor == 'n' && spore == 'r');
        row[0] = if poisonous { "p" } else { "e" }.to_string();
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_points_lie_on_curve_without_noise() {
        let ds = toy_periodic(50, 0.0, 3).unwrap();
        let curve = toy_curve(&ds.features);
        for (y, c) in ds.targets.data().iter().zip(curve.data()) {
            assert!((y - c).abs() < 1e-12);
        }
        for &x in ds.features.data() {
            assert!((-2.0..2.0).contains(&x));
        }
    }

    #[test]
    fn toy_is_seed_deterministic() {
        let a = toy_periodic(100, 0.1, 9).unwrap();
        let b = toy_periodic(100, 0.1, 9).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.targets, b.targets);
        let c = toy_periodic(100, 0.1, 10).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn csv_roundtrip_with_exact_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.csv");
        std::fs::write(&path, "a,b,target\n1.0,2.5,3.0\n2.0,1.5,5.0\n3.0,0.5,7.0\n").unwrap();
        let ds = load_csv(&path, "target", false).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.features.get(1, 1), 1.5);
        assert_eq!(ds.targets.get(2, 0), 7.0);
        assert!(ds.warnings.is_empty());
    }

    #[test]
    fn csv_standardization_and_destandardization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("std.csv");
        let mut body = String::from("a,b,target\n");
        for i in 0..40 {
            body.push_str(&format!("{},{},{}\n", i as f64, (i * i) as f64, 3.0 * i as f64 + 1.0));
        }
        std::fs::write(&path, body).unwrap();
        let raw = load_csv(&path, "target", false).unwrap();
        let ds = load_csv(&path, "target", true).unwrap();
        for c in 0..ds.dim() {
            let (mean, std) = column_stats(&ds.features, c);
            assert!(mean.abs() < 1e-9);
            assert!((std - 1.0).abs() < 1e-9);
        }
        let back = ds.destandardize_targets(&ds.targets);
        for (a, b) in back.data().iter().zip(raw.targets.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        // features too
        for r in 0..ds.n() {
            for c in 0..ds.dim() {
                let restored = ds.features.get(r, c) * ds.feature_stds[c] + ds.feature_means[c];
                assert!((restored - raw.features.get(r, c)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn csv_reports_missing_and_non_numeric_cells() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.csv");
        std::fs::write(&missing, "a,target\n1.0,2.0\n,3.0\n4.0,?\n").unwrap();
        match load_csv(&missing, "target", false) {
            Err(Error::MissingValues(rows)) => assert_eq!(rows, vec![1, 2]),
            other => panic!("expected MissingValues, got {other:?}"),
        }
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "a,target\n1.0,2.0\nfoo,3.0\n").unwrap();
        match load_csv(&bad, "target", false) {
            Err(Error::NonNumeric { row, col, value }) => {
                assert_eq!(row, 1);
                assert_eq!(col, "a");
                assert_eq!(value, "foo");
            }
            other => panic!("expected NonNumeric, got {other:?}"),
        }
    }

    #[test]
    fn csv_drops_constant_columns_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("const.csv");
        std::fs::write(&path, "a,flat,target\n1.0,5.0,2.0\n2.0,5.0,3.0\n3.0,5.0,4.0\n").unwrap();
        let ds = load_csv(&path, "target", true).unwrap();
        assert_eq!(ds.dim(), 1);
        assert_eq!(ds.warnings.len(), 1);
        assert!(ds.warnings[0].contains("flat"));
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_seeded() {
        let ds = synth_regression("demo", 100, 3, 0.05, 4).unwrap();
        let (train, test) = split(&ds, 0.1, 11).unwrap();
        assert_eq!(train.n(), 90);
        assert_eq!(test.n(), 10);
        // recover raw targets from both sides and compare multisets
        let mut recovered: Vec<i64> = train
            .destandardize_targets(&train.targets)
            .data()
            .iter()
            .chain(test.destandardize_targets(&test.targets).data())
            .map(|v| (v * 1e9).round() as i64)
            .collect();
        let mut original: Vec<i64> = ds.targets.data().iter().map(|v| (v * 1e9).round() as i64).collect();
        recovered.sort_unstable();
        original.sort_unstable();
        assert_eq!(recovered, original);

        let (train2, _) = split(&ds, 0.1, 11).unwrap();
        assert_eq!(train.features, train2.features);
        let (train3, _) = split(&ds, 0.1, 12).unwrap();
        assert_ne!(train.features, train3.features);
    }

    #[test]
    fn split_statistics_come_from_train_rows_only() {
        let ds = synth_regression("leak", 200, 4, 0.05, 5).unwrap();
        let (train, test) = split(&ds, 0.2, 7).unwrap();
        for c in 0..train.dim() {
            let (mean, std) = column_stats(&train.features, c);
            assert!(mean.abs() < 1e-9, "train col {c} mean {mean}");
            assert!((std - 1.0).abs() < 1e-9, "train col {c} std {std}");
            assert_eq!(train.feature_means[c], test.feature_means[c]);
            assert_eq!(train.feature_stds[c], test.feature_stds[c]);
        }
        // test rows restored with the shared stats match the raw table rows
        let raw_restored: Vec<f64> = (0..test.n())
            .flat_map(|r| {
                (0..test.dim())
                    .map(|c| test.features.get(r, c) * test.feature_stds[c] + test.feature_means[c])
                    .collect::<Vec<_>>()
            })
            .collect();
        for v in raw_restored {
            let found = ds.features.data().iter().any(|&orig| (orig - v).abs() < 1e-9);
            assert!(found, "restored value {v} not present in the raw table");
        }
    }

    #[test]
    fn partition_keeps_raw_values() {
        let ds = synth_regression("rawsplit", 50, 2, 0.05, 6).unwrap();
        let (a, b) = partition(&ds, 0.1, 3).unwrap();
        assert_eq!(a.n() + b.n(), 50);
        assert_eq!(a.feature_stds, vec![1.0, 1.0]);
        assert_eq!(b.target_mean, 0.0);
    }

    #[test]
    fn mushroom_encoding_properties() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mushrooms.csv");
        synth_mushroom_file(&path, 2000, 13).unwrap();
        let data = encode_mushroom(&path).unwrap();
        assert_eq!(data.labels.len(), 2000);
        assert_eq!(data.n_features, 22);
        for r in 0..data.contexts.rows() {
            let s: f64 = (0..data.contexts.cols()).map(|c| data.contexts.get(r, c)).sum();
            assert_eq!(s, 22.0, "row {r} one-hot sum");
        }
        let edible = data.labels.iter().filter(|&&l| l == MushroomClass::Edible).count();
        let frac = edible as f64 / 2000.0;
        assert!((0.4..0.65).contains(&frac), "edible fraction {frac}");
        // '?' appears as its own category: stalk root block has 7 columns
        // (bcuezr plus ?), so total width reflects it
        assert!(data.contexts.cols() > 80);
    }

    #[test]
    fn mushroom_rejects_unknown_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("badlabel.csv");
        std::fs::write(&path, "e,x,y\np,x,y\nq,x,y\n").unwrap();
        match encode_mushroom(&path) {
            Err(Error::InvalidParam(msg)) => assert!(msg.contains("unknown label")),
            other => panic!("expected label error, got {other:?}"),
        }
    }

    #[test]
    fn synth_regression_is_learnable_scale() {
        let ds = synth_regression("scale", 400, 8, 0.05, 21).unwrap();
        let (mean, std) = column_stats(&ds.targets, 0);
        assert!(std > 0.5, "target std {std}");
        assert!(mean.is_finite());
        let a = synth_regression("scale", 400, 8, 0.05, 21).unwrap();
        assert_eq!(a.targets, ds.targets);
    }
}
