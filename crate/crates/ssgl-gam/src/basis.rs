//! Covariate rescaling and per-covariate B-spline design blocks.
//!
//! Each covariate is mapped to [0,1], expanded in a clamped B-spline
//! basis with interior knots at training-sample quantiles, reduced to
//! `df` columns by dropping the first basis function (which removes the
//! partition-of-unity redundancy), and centered. Centering enforces the
//! empirical zero-integral constraint on the fitted component functions.
//! Blocks are optionally orthonormalized (per-group thin QR, Q'Q = I)
//! before they reach the solver; coefficients are mapped back to
//! original basis coordinates for reporting and prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{qr_thin, solve_upper, spectral_norm, sym_eig_max, Mat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    /// Basis functions per covariate after the column drop.
    pub df: usize,
    /// Spline degree (3 = cubic).
    pub degree: usize,
    /// Interior knot locations as sample quantiles, strictly increasing
    /// in (0,1).
    pub knot_quantiles: Vec<f64>,
    /// Orthonormalize each block before the solver.
    pub orthonormalize: bool,
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec {
            df: 6,
            degree: 3,
            knot_quantiles: vec![0.25, 0.5, 0.75],
            orthonormalize: true,
        }
    }
}

impl BasisSpec {
    /// `df` basis functions with `df - degree` equally spaced interior
    /// knot quantiles. df = 6, degree = 3 reproduces quartile knots.
    pub fn with_df(df: usize, degree: usize) -> Result<Self> {
        if df < 2 || df <= degree {
            return Err(Error::argument(format!(
                "df = {df} must be >= 2 and exceed the spline degree {degree}"
            )));
        }
        let m = df - degree;
        let knot_quantiles = (1..=m).map(|k| k as f64 / (m + 1) as f64).collect();
        Ok(BasisSpec {
            df,
            degree,
            knot_quantiles,
            orthonormalize: true,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.df < 2 {
            return Err(Error::argument("df must be >= 2"));
        }
        if self.degree == 0 {
            return Err(Error::argument("degree must be >= 1"));
        }
        for w in self.knot_quantiles.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::argument(
                    "knot quantiles must be strictly increasing",
                ));
            }
        }
        if self
            .knot_quantiles
            .iter()
            .any(|&q| !(0.0 < q && q < 1.0))
        {
            return Err(Error::argument("knot quantiles must lie in (0,1)"));
        }
        // raw count (knots + degree + 1) minus the dropped column
        let implied = self.knot_quantiles.len() + self.degree;
        if implied != self.df {
            return Err(Error::argument(format!(
                "df = {} inconsistent with {} interior knots and degree {} \
                 (implies df = {implied})",
                self.df,
                self.knot_quantiles.len(),
                self.degree
            )));
        }
        Ok(())
    }
}

/// Per-fit basis metadata needed to rebuild the design at new points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisMeta {
    pub spec: BasisSpec,
    /// Interior knots per covariate (training-sample quantiles).
    pub knots: Vec<Vec<f64>>,
    /// Per-covariate (min, max) of the raw training covariates.
    pub ranges: Vec<(f64, f64)>,
    /// Pre-centering column means per block.
    pub column_means: Vec<Vec<f64>>,
}

/// The solver-facing design: p blocks of n x df plus the transforms
/// mapping solver coordinates back to original basis coordinates.
#[derive(Debug, Clone)]
pub struct DesignBlocks {
    /// Solver-facing matrices (orthonormalized when spec says so).
    pub blocks: Vec<Mat>,
    /// Upper-triangular R per block with original_block = block * R;
    /// identity when orthonormalization is off.
    pub transforms: Vec<Mat>,
    pub meta: BasisMeta,
}

/// Rescale every column of a raw covariate matrix to [0,1].
pub fn rescale(x_raw: &Mat) -> Result<(Mat, Vec<(f64, f64)>)> {
    let n = x_raw.nrows();
    if n < 2 {
        return Err(Error::data("need at least 2 observations to rescale"));
    }
    let mut ranges = Vec::with_capacity(x_raw.ncols());
    let mut x = Mat::zeros(n, x_raw.ncols());
    for j in 0..x_raw.ncols() {
        let col = x_raw.col(j);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in col {
            if !v.is_finite() {
                return Err(Error::data(format!("non-finite value in covariate {}", j + 1)));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi <= lo {
            return Err(Error::data(format!(
                "covariate {} is constant and cannot be rescaled",
                j + 1
            )));
        }
        let span = hi - lo;
        for (i, &v) in col.iter().enumerate() {
            x.set(i, j, (v - lo) / span);
        }
        ranges.push((lo, hi));
    }
    Ok((x, ranges))
}

/// Rescale new data with stored training ranges, clamping out-of-range
/// values into [0,1]. Returns the number of clamped entries.
pub fn rescale_with_ranges(x_raw: &Mat, ranges: &[(f64, f64)]) -> Result<(Mat, usize)> {
    if x_raw.ncols() != ranges.len() {
        return Err(Error::data(format!(
            "expected {} covariates, got {}",
            ranges.len(),
            x_raw.ncols()
        )));
    }
    let mut clamped = 0usize;
    let mut x = Mat::zeros(x_raw.nrows(), x_raw.ncols());
    for (j, &(lo, hi)) in ranges.iter().enumerate() {
        let span = hi - lo;
        for (i, &v) in x_raw.col(j).iter().enumerate() {
            let u = (v - lo) / span;
            if !(0.0..=1.0).contains(&u) {
                clamped += 1;
            }
            x.set(i, j, u.clamp(0.0, 1.0));
        }
    }
    Ok((x, clamped))
}

/// Type-7 sample quantile (linear interpolation of order statistics).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n as f64 - 1.0) * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Full clamped knot vector on [0,1]: boundary knots with multiplicity
/// degree + 1 plus the interior knots.
fn clamped_knots(interior: &[f64], degree: usize) -> Vec<f64> {
    let mut t = vec![0.0; degree + 1];
    t.extend_from_slice(interior);
    t.extend(std::iter::repeat(1.0).take(degree + 1));
    t
}

/// Evaluate all raw B-spline basis functions at x in [0,1].
/// Returns interior.len() + degree + 1 values (partition of unity).
pub fn bspline_raw(interior: &[f64], degree: usize, x: f64) -> Vec<f64> {
    let knots = clamped_knots(interior, degree);
    let nb = interior.len() + degree + 1;
    let x = x.clamp(0.0, 1.0);
    // knot span index in [degree, nb-1]
    let span = if x >= 1.0 {
        nb - 1
    } else {
        let mut lo = degree;
        let mut hi = nb;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    // Cox-de Boor triangular scheme for the degree+1 nonzero functions
    let mut vals = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    vals[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let tmp = vals[r] / (right[r + 1] + left[j - r]);
            vals[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        vals[j] = saved;
    }
    let mut full = vec![0.0; nb];
    full[(span - degree)..=span].copy_from_slice(&vals);
    full
}

fn interior_knots_for(col: &[f64], spec: &BasisSpec, cov_idx: usize) -> Result<Vec<f64>> {
    let mut sorted = col.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let knots: Vec<f64> = spec
        .knot_quantiles
        .iter()
        .map(|&q| quantile(&sorted, q))
        .collect();
    for w in knots.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::data(format!(
                "covariate {}: tied sample quantiles produce duplicate knots; \
                 reduce the knot count or use fewer basis functions",
                cov_idx + 1
            )));
        }
    }
    if knots.first().is_some_and(|&k| k <= 0.0) || knots.last().is_some_and(|&k| k >= 1.0) {
        return Err(Error::data(format!(
            "covariate {}: interior knot collides with a boundary knot; \
             reduce the knot count or use fewer basis functions",
            cov_idx + 1
        )));
    }
    Ok(knots)
}

/// Raw basis at the given points, first column dropped, stored means
/// subtracted.
fn centered_block(interior: &[f64], degree: usize, means: &[f64], xs: &[f64]) -> Mat {
    let d = means.len();
    let mut m = Mat::zeros(xs.len(), d);
    for (i, &x) in xs.iter().enumerate() {
        let raw = bspline_raw(interior, degree, x);
        for k in 0..d {
            m.set(i, k, raw[k + 1] - means[k]);
        }
    }
    m
}

/// Build the per-covariate design blocks from rescaled covariates.
pub fn build_design(x: &Mat, spec: &BasisSpec) -> Result<DesignBlocks> {
    spec.validate()?;
    let n = x.nrows();
    if n <= spec.df {
        return Err(Error::data(format!(
            "need more than df = {} observations, got {n}",
            spec.df
        )));
    }
    let p = x.ncols();
    let mut blocks = Vec::with_capacity(p);
    let mut transforms = Vec::with_capacity(p);
    let mut knots = Vec::with_capacity(p);
    let mut column_means = Vec::with_capacity(p);
    for j in 0..p {
        let col = x.col(j);
        let interior = interior_knots_for(col, spec, j)?;
        // raw basis, drop first column, then center
        let mut block = Mat::zeros(n, spec.df);
        for (i, &xi) in col.iter().enumerate() {
            let raw = bspline_raw(&interior, spec.degree, xi);
            for k in 0..spec.df {
                block.set(i, k, raw[k + 1]);
            }
        }
        let mut means = vec![0.0; spec.df];
        for k in 0..spec.df {
            let m = block.col(k).iter().sum::<f64>() / n as f64;
            means[k] = m;
            for v in block.col_mut(k) {
                *v -= m;
            }
        }
        if spec.orthonormalize {
            // thin QR scaled so each solver block has gram n * I: a
            // group's solver-coordinate norm then equals the fitted
            // component's root-mean-square over the sample, the scale
            // the default lambda grid on [1, 100] is calibrated against
            let (mut q, mut r) = qr_thin(&block).map_err(|e| {
                Error::data(format!(
                    "covariate {}: design block is rank deficient ({e}); \
                     reduce df or check for heavily tied values",
                    j + 1
                ))
            })?;
            let sqrt_n = (n as f64).sqrt();
            for k in 0..spec.df {
                for v in q.col_mut(k) {
                    *v *= sqrt_n;
                }
                for v in r.col_mut(k) {
                    *v /= sqrt_n;
                }
            }
            blocks.push(q);
            transforms.push(r);
        } else {
            blocks.push(block);
            transforms.push(Mat::identity(spec.df));
        }
        knots.push(interior);
        column_means.push(means);
    }
    Ok(DesignBlocks {
        blocks,
        transforms,
        meta: BasisMeta {
            spec: spec.clone(),
            knots,
            ranges: vec![(0.0, 1.0); p], // overwritten by callers that rescaled
            column_means,
        },
    })
}

impl DesignBlocks {
    /// Test/solver constructor from explicit blocks; transforms are
    /// identity and the metadata is a placeholder.
    pub fn from_blocks(blocks: Vec<Mat>) -> Self {
        let p = blocks.len();
        let d = blocks.first().map_or(0, Mat::ncols);
        let transforms = blocks.iter().map(|b| Mat::identity(b.ncols())).collect();
        DesignBlocks {
            blocks,
            transforms,
            meta: BasisMeta {
                spec: BasisSpec {
                    df: d.max(2),
                    degree: 1,
                    knot_quantiles: vec![],
                    orthonormalize: false,
                },
                knots: vec![vec![]; p],
                ranges: vec![(0.0, 1.0); p],
                column_means: vec![vec![0.0; d]; p],
            },
        }
    }

    pub fn n_groups(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_obs(&self) -> usize {
        self.blocks.first().map_or(0, Mat::nrows)
    }

    pub fn group_size(&self) -> usize {
        self.blocks.first().map_or(0, Mat::ncols)
    }

    /// Map solver coordinates of group j back to original basis
    /// coordinates (beta with original_block * beta = block * coef).
    pub fn to_original(&self, j: usize, coef: &[f64]) -> Result<Vec<f64>> {
        solve_upper(&self.transforms[j], coef)
    }

    /// max_j ||X_j||_2 over the original (pre-orthonormalization)
    /// blocks, computed via block * R.
    pub fn design_norm_diag(&self) -> f64 {
        let mut best = 0.0f64;
        for (b, r) in self.blocks.iter().zip(&self.transforms) {
            // ||B R||_2^2 = lambda_max(R' (B'B) R)
            let g = b.gram();
            let gr = g.matmul(r);
            let d = r.ncols();
            let mut m = Mat::zeros(d, d);
            for a in 0..d {
                for c in 0..d {
                    let mut s = 0.0;
                    for k in 0..d {
                        s += r.get(k, a) * gr.get(k, c);
                    }
                    m.set(a, c, s);
                }
            }
            best = best.max(sym_eig_max(&m).max(0.0).sqrt());
        }
        best
    }

    /// Condition-1 style diagnostic ratio ||X||_*^2 d / n.
    pub fn norm_diag_ratio(&self) -> f64 {
        let nrm = self.design_norm_diag();
        nrm * nrm * self.group_size() as f64 / self.n_obs().max(1) as f64
    }
}

/// Evaluate the fitted component function X_j^{new} beta_j at rescaled
/// points, using the stored knots and column means (original basis
/// coordinates).
pub fn eval_function(meta: &BasisMeta, j: usize, beta_j: &[f64], x_new_j: &[f64]) -> Vec<f64> {
    let block = centered_block(
        &meta.knots[j],
        meta.spec.degree,
        &meta.column_means[j],
        x_new_j,
    );
    block.matvec(beta_j)
}

/// Spectral norm of an arbitrary matrix (exposed for diagnostics).
pub fn block_spectral_norm(m: &Mat) -> f64 {
    spectral_norm(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn rescale_affine() {
        let x = Mat::from_fn(3, 1, |i, _| [1.0, 3.0, 5.0][i]);
        let (r, ranges) = rescale(&x).unwrap();
        assert_eq!(r.col(0), &[0.0, 0.5, 1.0]);
        assert_eq!(ranges, vec![(1.0, 5.0)]);
        // already spanning [0,1] stays put
        let x2 = Mat::from_fn(3, 1, |i, _| [0.0, 0.25, 1.0][i]);
        let (r2, _) = rescale(&x2).unwrap();
        assert_eq!(r2.col(0), &[0.0, 0.25, 1.0]);
    }

    #[test]
    fn rescale_rejects_constant_column() {
        let x = Mat::from_fn(4, 2, |i, j| if j == 0 { i as f64 } else { 7.0 });
        let err = rescale(&x).unwrap_err();
        assert!(err.to_string().contains("covariate 2"));
    }

    #[test]
    fn prediction_rescale_clamps() {
        let ranges = vec![(0.0, 10.0)];
        let x = Mat::from_fn(2, 1, |i, _| [11.0, 5.0][i]);
        let (r, clamped) = rescale_with_ranges(&x, &ranges).unwrap();
        assert_eq!(clamped, 1);
        assert_eq!(r.col(0), &[1.0, 0.5]);
    }

    #[test]
    fn partition_of_unity_and_endpoints() {
        let interior = vec![0.25, 0.5, 0.75];
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x: f64 = rng.random();
            let vals = bspline_raw(&interior, 3, x);
            assert_eq!(vals.len(), 7);
            let s: f64 = vals.iter().sum();
            assert!((s - 1.0).abs() <= 1e-10);
            assert!(vals.iter().all(|&v| v >= -1e-14));
        }
        let at0 = bspline_raw(&interior, 3, 0.0);
        assert!((at0[0] - 1.0).abs() < 1e-14);
        assert!(at0[1..].iter().all(|&v| v == 0.0));
        let at1 = bspline_raw(&interior, 3, 1.0);
        assert!((at1[6] - 1.0).abs() < 1e-14);
        assert!(at1[..6].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn build_design_centers_columns() {
        let n = 10;
        let x = Mat::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64);
        for ortho in [false, true] {
            let spec = BasisSpec {
                orthonormalize: ortho,
                ..BasisSpec::default()
            };
            let db = build_design(&x, &spec).unwrap();
            assert_eq!(db.blocks.len(), 1);
            assert_eq!(db.blocks[0].nrows(), 10);
            assert_eq!(db.blocks[0].ncols(), 6);
            // block * R is the centered design; its columns have mean 0
            let b = &db.blocks[0];
            let r = &db.transforms[0];
            for k in 0..6 {
                let mut mean = 0.0;
                for i in 0..n {
                    let mut v = 0.0;
                    for a in 0..6 {
                        v += b.get(i, a) * r.get(a, k);
                    }
                    mean += v;
                }
                assert!((mean / n as f64).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn orthonormalized_block_has_scaled_identity_gram() {
        let n = 40;
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let x = Mat::from_fn(n, 1, |_, _| rng.random());
        let db = build_design(&x, &BasisSpec::default()).unwrap();
        let g = db.blocks[0].gram();
        for a in 0..6 {
            for b in 0..6 {
                let want = if a == b { n as f64 } else { 0.0 };
                assert!((g.get(a, b) - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn norm_diag_identity_and_scaling() {
        let db = DesignBlocks::from_blocks(vec![Mat::identity(4)]);
        assert!((db.design_norm_diag() - 1.0).abs() < 1e-9);
        let mut two = Mat::identity(4);
        for j in 0..4 {
            for v in two.col_mut(j) {
                *v *= 2.0;
            }
        }
        let db2 = DesignBlocks::from_blocks(vec![two]);
        assert!((db2.design_norm_diag() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn norm_diag_matches_power_iteration_oracle() {
        let n = 100;
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let x = Mat::from_fn(n, 1, |_, _| rng.random());
        let db = build_design(&x, &BasisSpec::default()).unwrap();
        // oracle: rebuild the centered block and run the generic
        // spectral norm on it directly
        let centered = centered_block(
            &db.meta.knots[0],
            3,
            &db.meta.column_means[0],
            x.col(0),
        );
        let oracle = spectral_norm(&centered);
        assert!((db.design_norm_diag() - oracle).abs() <= 1e-8);
    }

    #[test]
    fn eval_function_consistency() {
        let n = 30;
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let x = Mat::from_fn(n, 1, |_, _| rng.random());
        let db = build_design(&x, &BasisSpec::default()).unwrap();
        let coef: Vec<f64> = (0..6).map(|_| rng.random::<f64>() - 0.5).collect();
        let beta = db.to_original(0, &coef).unwrap();
        // evaluation at training points equals block * coef
        let direct = db.blocks[0].matvec(&coef);
        let via_eval = eval_function(&db.meta, 0, &beta, x.col(0));
        for (a, b) in direct.iter().zip(&via_eval) {
            assert!((a - b).abs() <= 1e-10);
        }
        // zero coefficients give the zero function
        let z = eval_function(&db.meta, 0, &vec![0.0; 6], &[0.1, 0.9]);
        assert!(z.iter().all(|&v| v == 0.0));
        // fitted training-sample mean is 0 for any beta
        let mean = via_eval.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() <= 1e-8);
    }

    #[test]
    fn duplicate_knots_error() {
        // heavy ties: quartiles coincide
        let x = Mat::from_fn(12, 1, |i, _| if i < 10 { 0.5 } else { i as f64 / 12.0 });
        let err = build_design(&x, &BasisSpec::default()).unwrap_err();
        assert!(err.to_string().contains("knot"));
    }

    #[test]
    fn deterministic_rebuild() {
        let n = 25;
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let x = Mat::from_fn(n, 2, |_, _| rng.random());
        let a = build_design(&x, &BasisSpec::default()).unwrap();
        let b = build_design(&x, &BasisSpec::default()).unwrap();
        assert_eq!(a.blocks[0], b.blocks[0]);
        assert_eq!(a.meta, b.meta);
    }
}
