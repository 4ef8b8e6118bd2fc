//! Prostate gene-expression study driver: 102 subjects x 6033 genes,
//! binary cancer labels (52 cases, 50 controls). The dataset is not
//! bundled; callers skip cleanly when it is absent.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{cv_fit, CvOptions};
use crate::em::{PredictScale, SbGamFit};
use crate::error::{Error, Result};
use crate::family::Family;
use crate::io::{read_table, read_x_csv};
use crate::linalg::Mat;
use crate::metrics::auc;

pub const PROSTATE_N: usize = 102;
pub const PROSTATE_P: usize = 6033;
pub const PROSTATE_CASES: usize = 52;
pub const PROSTATE_TRAIN: usize = 82;

/// Random 82/20 train/test splits, no stratification.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitProtocol {
    pub train_size: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for SplitProtocol {
    fn default() -> Self {
        SplitProtocol {
            train_size: PROSTATE_TRAIN,
            repeats: 50,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProstateReport {
    pub n: usize,
    pub p: usize,
    /// 0-based gene indices selected by the full-data fit.
    pub full_selected: Vec<usize>,
    pub full_chosen_lambda0: f64,
    pub repeat_aucs: Vec<f64>,
    pub mean_auc: f64,
}

pub fn load_labels(path: &Path) -> Result<Vec<f64>> {
    let t = read_table(path)?;
    let y: Vec<f64> = t.rows.iter().map(|r| r[0]).collect();
    for (i, &v) in y.iter().enumerate() {
        if v != 0.0 && v != 1.0 {
            return Err(Error::data(format!(
                "{}: label at row {} is {v}, expected 0 or 1",
                path.display(),
                i + 2
            )));
        }
    }
    Ok(y)
}

fn validate(x: &Mat, y: &[f64]) -> Result<()> {
    if x.nrows() != PROSTATE_N || x.ncols() != PROSTATE_P {
        return Err(Error::data(format!(
            "expected {PROSTATE_N} x {PROSTATE_P} expression matrix, found {} x {}",
            x.nrows(),
            x.ncols()
        )));
    }
    if y.len() != PROSTATE_N {
        return Err(Error::data(format!(
            "expected {PROSTATE_N} labels, found {}",
            y.len()
        )));
    }
    let cases = y.iter().filter(|&&v| v == 1.0).count();
    if cases != PROSTATE_CASES {
        return Err(Error::data(format!(
            "expected {PROSTATE_CASES} case labels (1), found {cases}"
        )));
    }
    Ok(())
}

fn submat_rows(x: &Mat, rows: &[usize]) -> Mat {
    Mat::from_fn(rows.len(), x.ncols(), |i, j| x.get(rows[i], j))
}

fn run_split(
    x: &Mat,
    y: &[f64],
    train: &[usize],
    test: &[usize],
    opts: &CvOptions,
) -> Result<f64> {
    let x_train = submat_rows(x, train);
    let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let (_, fit) = cv_fit(&Family::Binomial, &y_train, &x_train, opts)?;
    let x_test = submat_rows(x, test);
    let preds = fit.predict(&x_test, PredictScale::Response)?;
    let y_test: Vec<f64> = test.iter().map(|&i| y[i]).collect();
    auc(&y_test, &preds.values)
}

/// Full study: one full-data CV fit plus `protocol.repeats` random
/// 82/20 splits, each tuned by CV inside its training split.
pub fn run_prostate(
    x: &Mat,
    y: &[f64],
    protocol: &SplitProtocol,
    opts: &CvOptions,
) -> Result<(ProstateReport, SbGamFit)> {
    validate(x, y)?;
    let n = x.nrows();
    if protocol.train_size == 0 || protocol.train_size >= n {
        return Err(Error::argument(format!(
            "train size {} must be in 1..{n}",
            protocol.train_size
        )));
    }

    let (full_cv, full_fit) = cv_fit(&Family::Binomial, y, x, opts)?;

    // derive one split per repeat up front so repeats can run in parallel
    let mut rng = ChaCha20Rng::seed_from_u64(protocol.seed);
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..protocol.repeats)
        .map(|_| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let (train, test) = idx.split_at(protocol.train_size);
            (train.to_vec(), test.to_vec())
        })
        .collect();

    let repeat_aucs: Vec<f64> = splits
        .par_iter()
        .map(|(train, test)| run_split(x, y, train, test, opts))
        .collect::<Result<_>>()?;
    let mean_auc = repeat_aucs.iter().sum::<f64>() / repeat_aucs.len().max(1) as f64;

    Ok((
        ProstateReport {
            n,
            p: x.ncols(),
            full_selected: full_fit.selected.clone(),
            full_chosen_lambda0: full_cv.chosen_lambda0,
            repeat_aucs,
            mean_auc,
        },
        full_fit,
    ))
}

/// Load and validate the dataset; Ok(None) signals a clean skip when
/// either file is missing.
pub fn load_dataset(data: &Path, labels: &Path) -> Result<Option<(Mat, Vec<f64>)>> {
    if !data.exists() || !labels.exists() {
        return Ok(None);
    }
    let x = read_x_csv(data)?;
    let y = load_labels(labels)?;
    validate(&x, &y)?;
    Ok(Some((x, y)))
}
