//! Sparsity-penalized fitting along the full LARS path with the lasso
//! modification, plus sparsity-level slicing and the debiasing least-squares
//! refit on the selected support.
//!
//! The solved problem is
//!
//! ```text
//! min_b  1/(2 q) ||Y - b0 - X b||_2^2 + alpha ||b||_1
//! ```
//!
//! with `b0 = mean(Y)` (columns are centered) and `q` set by the
//! [`PenaltyConvention`]: `q = 1` for the plain half-squared-error form and
//! `q = n` for the sample-normalized form most reference toolkits use. The
//! path is piecewise linear in `alpha`; every knot carries a KKT certificate
//! that [`kkt_violation`] can re-check from scratch.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, RegressorBundle};

/// Cholesky pivot threshold below which an entering column is treated as
/// degenerate (numerically collinear with the active set) and excluded.
pub const GRAM_PIVOT_THRESHOLD: f64 = 1e-12;

/// Residual 2-norm below which the path terminates (the fit is exact).
pub const RESIDUAL_FLOOR: f64 = 1e-10;

#[derive(Error, Debug)]
pub enum SolverError {
    #[error("design has no columns to solve over")]
    EmptyDesign,
    #[error("alpha must be nonnegative, got {0}")]
    NegativeAlpha(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("level step must divide 100 and be in [1, 100], got {0}")]
    BadLevelStep(u32),
    #[error("internal invariant violated: {0}")]
    Internal(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Scaling of the quadratic term of the cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyConvention {
    /// `1/2 ||r||^2 + alpha ||b||_1`; alpha has correlation units.
    PaperEq7,
    /// `1/(2n) ||r||^2 + alpha ||b||_1`; the reference-toolkit convention
    /// under which the default `alpha_f = 8e-4` is meaningful.
    NormalizedByL,
}

impl PenaltyConvention {
    pub fn denom(self, n: usize) -> f64 {
        match self {
            PenaltyConvention::PaperEq7 => 1.0,
            PenaltyConvention::NormalizedByL => n as f64,
        }
    }
}

impl Default for PenaltyConvention {
    fn default() -> Self {
        PenaltyConvention::NormalizedByL
    }
}

/// Predictor matrix stored column-major: row `j` holds column `j` of `X`,
/// so correlation scans run over contiguous memory.
#[derive(Debug, Clone)]
pub struct Design {
    data: Array2<f64>,
}

impl Design {
    /// Wrap a `(p, n)` array whose row `j` is predictor column `j`.
    pub fn from_rows(data: Array2<f64>) -> Self {
        let data = if data.is_standard_layout() {
            data
        } else {
            let dim = data.raw_dim();
            Array2::from_shape_vec(dim, data.iter().cloned().collect()).unwrap()
        };
        Self { data }
    }

    /// Copy a conventional `(n, p)` samples-by-features matrix.
    pub fn from_samples(x: ArrayView2<f64>) -> Self {
        let (n, p) = x.dim();
        let mut data = Array2::zeros((p, n));
        for j in 0..p {
            for i in 0..n {
                data[[j, i]] = x[[i, j]];
            }
        }
        Self { data }
    }

    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn p(&self) -> usize {
        self.data.nrows()
    }

    pub fn col(&self, j: usize) -> &[f64] {
        self.data
            .row(j)
            .to_slice()
            .expect("design rows are contiguous")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sparse coefficient vector: sorted `(column id, value)` pairs, all nonzero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    entries: Vec<(usize, f64)>,
}

impl SparseVec {
    pub fn new() -> Self {
        Self::default()
    }

    /// Collect the nonzero entries of a dense slice.
    pub fn from_dense(dense: &[f64]) -> Self {
        Self {
            entries: dense
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
        }
    }

    pub fn from_entries(mut entries: Vec<(usize, f64)>) -> Self {
        entries.retain(|(_, v)| *v != 0.0);
        entries.sort_by_key(|(i, _)| *i);
        Self { entries }
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.entries
            .binary_search_by_key(&idx, |(i, _)| *i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn support(&self) -> Vec<usize> {
        self.entries.iter().map(|(i, _)| *i).collect()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn l1_norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v.abs()).sum()
    }

    /// Linear interpolation `self + t (other - self)` over the union support.
    pub fn lerp(&self, other: &Self, t: f64) -> Self {
        let mut out = Vec::with_capacity(self.entries.len().max(other.entries.len()));
        let (mut a, mut b) = (0, 0);
        while a < self.entries.len() || b < other.entries.len() {
            let (idx, va, vb) = match (self.entries.get(a), other.entries.get(b)) {
                (Some(&(ia, va)), Some(&(ib, vb))) => {
                    if ia == ib {
                        a += 1;
                        b += 1;
                        (ia, va, vb)
                    } else if ia < ib {
                        a += 1;
                        (ia, va, 0.0)
                    } else {
                        b += 1;
                        (ib, 0.0, vb)
                    }
                }
                (Some(&(ia, va)), None) => {
                    a += 1;
                    (ia, va, 0.0)
                }
                (None, Some(&(ib, vb))) => {
                    b += 1;
                    (ib, 0.0, vb)
                }
                (None, None) => break,
            };
            let v = va + t * (vb - va);
            if v != 0.0 {
                out.push((idx, v));
            }
        }
        Self { entries: out }
    }
}

/// One knot of the solution path: the exact lasso solution at `alpha`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathKnot {
    pub alpha: f64,
    pub beta: SparseVec,
    pub intercept: f64,
}

/// The full LARS/lasso path from `alpha_max` down to the requested floor.
#[derive(Debug, Clone)]
pub struct SolutionPath {
    pub knots: Vec<PathKnot>,
    pub convention: PenaltyConvention,
    /// The `alpha_f` the path was asked to reach.
    pub alpha_requested: f64,
    /// True when the path stopped above `alpha_requested` (exact fit reached
    /// or the active set saturated); slices below the last knot clamp to it.
    pub saturated: bool,
    /// Degeneracies encountered while solving (excluded columns, guards).
    pub diagnostics: Vec<String>,
    pub n_iter: usize,
}

impl SolutionPath {
    pub fn alpha_max(&self) -> f64 {
        self.knots.first().map(|k| k.alpha).unwrap_or(0.0)
    }

    pub fn last_alpha(&self) -> f64 {
        self.knots.last().map(|k| k.alpha).unwrap_or(0.0)
    }

    pub fn intercept(&self) -> f64 {
        self.knots.first().map(|k| k.intercept).unwrap_or(0.0)
    }

    /// Coefficients at an arbitrary `alpha`, linearly interpolated between the
    /// bracketing knots. Returns `(beta, extrapolated)`; `extrapolated` is
    /// true when `alpha` lies below the last knot of a saturated path and the
    /// last knot was reused.
    pub fn beta_at(&self, alpha: f64) -> (SparseVec, bool) {
        if self.knots.is_empty() {
            return (SparseVec::new(), false);
        }
        if alpha >= self.knots[0].alpha {
            // above alpha_max the solution is identically zero
            return (self.knots[0].beta.clone(), false);
        }
        let last = self.knots.last().unwrap();
        if alpha < last.alpha {
            return (last.beta.clone(), true);
        }
        let mut hi = 0;
        while hi + 1 < self.knots.len() && self.knots[hi + 1].alpha >= alpha {
            hi += 1;
        }
        if self.knots[hi].alpha == alpha || hi + 1 == self.knots.len() {
            return (self.knots[hi].beta.clone(), false);
        }
        let (a0, a1) = (self.knots[hi].alpha, self.knots[hi + 1].alpha);
        let t = if a0 > a1 { (a0 - alpha) / (a0 - a1) } else { 0.0 };
        (self.knots[hi].beta.lerp(&self.knots[hi + 1].beta, t), false)
    }
}

/// Options for [`lars_path`].
#[derive(Debug, Clone, Copy)]
pub struct LarsOptions {
    pub convention: PenaltyConvention,
    /// Final penalty `alpha_f` the path should reach.
    pub alpha_min: f64,
}

impl Default for LarsOptions {
    fn default() -> Self {
        Self {
            convention: PenaltyConvention::default(),
            alpha_min: 0.0,
        }
    }
}

/// `max_j |x_j' (Y - mean(Y))|` in the units of the chosen convention; the
/// lasso solution is identically zero for any alpha at or above this value.
pub fn alpha_max(design: &Design, y: &[f64], convention: PenaltyConvention) -> f64 {
    let n = design.n();
    assert_eq!(y.len(), n, "y length must match design");
    let ybar = y.iter().sum::<f64>() / n as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    let mut best = 0.0f64;
    for j in 0..design.p() {
        best = best.max(dot(design.col(j), &yc).abs());
    }
    best / convention.denom(n)
}

/// Growing Cholesky factor of the active-set Gram matrix, with exclusion of
/// degenerate pivots and refactoring on variable drops.
struct GramChol {
    cap: usize,
    k: usize,
    gram: Vec<f64>,
    chol: Vec<f64>,
}

impl GramChol {
    fn new(cap: usize) -> Self {
        Self {
            cap,
            k: 0,
            gram: vec![0.0; cap * cap],
            chol: vec![0.0; cap * cap],
        }
    }


    /// Try to extend the factor with a new column whose Gram row against the
    /// current active set is `g_vec` and whose squared norm is `g_jj`.
    /// Returns false (leaving the factor untouched) on a degenerate pivot.
    fn try_append(&mut self, g_vec: &[f64], g_jj: f64) -> bool {
        let k = self.k;
        debug_assert_eq!(g_vec.len(), k);
        debug_assert!(k < self.cap);
        // forward substitution L w = g_vec
        let mut w = vec![0.0; k];
        for i in 0..k {
            let mut s = g_vec[i];
            for (jj, w_jj) in w.iter().enumerate().take(i) {
                s -= self.chol[i * self.cap + jj] * w_jj;
            }
            w[i] = s / self.chol[i * self.cap + i];
        }
        let pivot2 = g_jj - w.iter().map(|v| v * v).sum::<f64>();
        if pivot2 < GRAM_PIVOT_THRESHOLD {
            return false;
        }
        for i in 0..k {
            self.gram[k * self.cap + i] = g_vec[i];
            self.gram[i * self.cap + k] = g_vec[i];
            self.chol[k * self.cap + i] = w[i];
        }
        self.gram[k * self.cap + k] = g_jj;
        self.chol[k * self.cap + k] = pivot2.sqrt();
        self.k += 1;
        true
    }

    /// Remove active position `idx`, shifting the Gram matrix and
    /// refactoring.
    fn remove(&mut self, idx: usize) -> Result<(), SolverError> {
        let k = self.k;
        debug_assert!(idx < k);
        for r in idx..k - 1 {
            for c in 0..k {
                self.gram[r * self.cap + c] = self.gram[(r + 1) * self.cap + c];
            }
        }
        for c in idx..k - 1 {
            for r in 0..k - 1 {
                self.gram[r * self.cap + c] = self.gram[r * self.cap + c + 1];
            }
        }
        self.k = k - 1;
        self.refactor()
    }

    fn refactor(&mut self) -> Result<(), SolverError> {
        let k = self.k;
        for i in 0..k {
            for j in 0..=i {
                let mut s = self.gram[i * self.cap + j];
                for t in 0..j {
                    s -= self.chol[i * self.cap + t] * self.chol[j * self.cap + t];
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(SolverError::Internal(format!(
                            "non-positive pivot {s} while refactoring active Gram"
                        )));
                    }
                    self.chol[i * self.cap + i] = s.sqrt();
                } else {
                    self.chol[i * self.cap + j] = s / self.chol[j * self.cap + j];
                }
            }
        }
        Ok(())
    }

    /// Solve `G x = rhs` through the Cholesky factor.
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut x = rhs.to_vec();
        for i in 0..k {
            for j in 0..i {
                x[i] = x[i] - self.chol[i * self.cap + j] * x[j];
            }
            x[i] /= self.chol[i * self.cap + i];
        }
        for i in (0..k).rev() {
            for j in i + 1..k {
                x[i] = x[i] - self.chol[j * self.cap + i] * x[j];
            }
            x[i] /= self.chol[i * self.cap + i];
        }
        x
    }
}

/// Full lasso path by least-angle regression with the lasso modification
/// (variables may leave the active set). Expects centered columns; the
/// intercept is the response mean throughout.
pub fn lars_path(
    design: &Design,
    y: &[f64],
    opts: LarsOptions,
) -> Result<SolutionPath, SolverError> {
    let n = design.n();
    let p = design.p();
    if p == 0 {
        return Err(SolverError::EmptyDesign);
    }
    if y.len() != n {
        return Err(SolverError::DimensionMismatch(format!(
            "y has length {}, design has {} samples",
            y.len(),
            n
        )));
    }
    if !(opts.alpha_min >= 0.0) {
        return Err(SolverError::NegativeAlpha(opts.alpha_min));
    }

    let denom = opts.convention.denom(n);
    let amin = opts.alpha_min * denom;
    let ybar = y.iter().sum::<f64>() / n as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    let max_active = n.saturating_sub(1).min(p);

    let mut beta = vec![0.0; p];
    let mut residual = yc.clone();
    let mut cov: Vec<f64> = (0..p).map(|j| dot(design.col(j), &residual)).collect();
    let mut active: Vec<usize> = Vec::new();
    let mut sign: Vec<f64> = Vec::new();
    let mut in_active = vec![false; p];
    let mut excluded = vec![false; p];
    let mut gram = GramChol::new(max_active.max(1));
    let mut diagnostics = Vec::new();
    let mut knots: Vec<PathKnot> = Vec::new();
    let mut drop_pending = false;
    let mut saturated = false;
    let mut iter = 0usize;
    let max_iter = 8 * max_active.max(1) + 100;
    const COV_REFRESH_PERIOD: usize = 16;
    const TINY: f64 = 1e-38;

    let push_knot = |knots: &mut Vec<PathKnot>, alpha_int: f64, beta: &[f64]| {
        let knot = PathKnot {
            alpha: alpha_int / denom,
            beta: SparseVec::from_dense(beta),
            intercept: ybar,
        };
        match knots.last_mut() {
            Some(last) if knot.alpha >= last.alpha => {
                // keep alphas strictly decreasing; the later beta wins a tie
                last.beta = knot.beta;
            }
            _ => knots.push(knot),
        }
    };

    loop {
        let mut c_all = 0.0f64;
        for j in 0..p {
            if !excluded[j] {
                c_all = c_all.max(cov[j].abs());
            }
        }

        push_knot(&mut knots, c_all, &beta);

        if c_all <= amin {
            if knots.len() >= 2 && c_all < amin {
                // the floor was crossed inside the last segment: interpolate
                let cur = knots.pop().unwrap();
                let prev = knots.last().unwrap();
                let span = prev.alpha - cur.alpha;
                let t = if span > 0.0 {
                    (prev.alpha - opts.alpha_min) / span
                } else {
                    1.0
                };
                let beta_interp = prev.beta.lerp(&cur.beta, t);
                let knot = PathKnot {
                    alpha: opts.alpha_min,
                    beta: beta_interp,
                    intercept: ybar,
                };
                knots.push(knot);
            }
            break;
        }
        if active.len() >= max_active {
            saturated = true;
            diagnostics.push(format!(
                "path stopped with {} active columns (limit min(L-1, p))",
                active.len()
            ));
            break;
        }
        let res_norm = dot(&residual, &residual).sqrt();
        if res_norm < RESIDUAL_FLOOR {
            saturated = true;
            diagnostics.push(format!("path stopped at residual norm {res_norm:.3e}"));
            break;
        }
        if iter >= max_iter {
            saturated = true;
            diagnostics.push(format!("iteration guard hit at {iter}"));
            break;
        }

        if !drop_pending {
            // enter the most correlated inactive column; on a degenerate
            // Gram pivot exclude it and take the next candidate
            loop {
                let mut c_idx = None;
                let mut c_best = 0.0f64;
                for j in 0..p {
                    if !in_active[j] && !excluded[j] && cov[j].abs() > c_best {
                        c_best = cov[j].abs();
                        c_idx = Some(j);
                    }
                }
                let Some(jn) = c_idx else { break };
                let col_n = design.col(jn);
                let g_vec: Vec<f64> = active.iter().map(|&a| dot(col_n, design.col(a))).collect();
                let g_jj = dot(col_n, col_n);
                if gram.try_append(&g_vec, g_jj) {
                    in_active[jn] = true;
                    active.push(jn);
                    sign.push(if cov[jn] >= 0.0 { 1.0 } else { -1.0 });
                    break;
                }
                excluded[jn] = true;
                diagnostics.push(format!(
                    "column {jn} excluded: degenerate Gram pivot below {GRAM_PIVOT_THRESHOLD:e}"
                ));
            }
        }

        if active.is_empty() {
            // every candidate was degenerate; nothing more to fit
            saturated = c_all > amin;
            diagnostics.push("no usable columns remain".to_string());
            break;
        }

        // equiangular direction
        let ls0 = gram.solve(&sign);
        let ss: f64 = ls0.iter().zip(&sign).map(|(a, b)| a * b).sum();
        if ss <= 0.0 {
            return Err(SolverError::Internal(format!(
                "non-positive equiangular normalization {ss}"
            )));
        }
        let aa = 1.0 / ss.sqrt();
        let ls: Vec<f64> = ls0.iter().map(|v| v * aa).collect();

        // u = X_A ls in sample space
        let mut u = vec![0.0; n];
        for (i, &ja) in active.iter().enumerate() {
            let col = design.col(ja);
            let w = ls[i];
            for (uv, cv) in u.iter_mut().zip(col) {
                *uv += w * cv;
            }
        }

        // correlation of every column with the direction
        let mut corr_dir = vec![0.0; p];
        for (j, cd) in corr_dir.iter_mut().enumerate() {
            if !excluded[j] {
                *cd = dot(design.col(j), &u);
            }
        }

        // step length to the next event
        let mut gamma = c_all / aa;
        for j in 0..p {
            if in_active[j] || excluded[j] {
                continue;
            }
            let r1 = (c_all - cov[j]) / (aa - corr_dir[j] + TINY);
            if r1 > 0.0 && r1 < gamma {
                gamma = r1;
            }
            let r2 = (c_all + cov[j]) / (aa + corr_dir[j] + TINY);
            if r2 > 0.0 && r2 < gamma {
                gamma = r2;
            }
        }

        // lasso modification: a coefficient hitting zero leaves the set
        let mut drops: Vec<usize> = Vec::new();
        let mut z_pos = f64::INFINITY;
        for (i, &ja) in active.iter().enumerate() {
            let z = -beta[ja] / ls[i];
            if z > 0.0 && z < z_pos {
                z_pos = z;
            }
        }
        if z_pos < gamma {
            gamma = z_pos;
            for (i, &ja) in active.iter().enumerate() {
                if -beta[ja] / ls[i] == z_pos {
                    drops.push(i);
                }
            }
        }

        for (i, &ja) in active.iter().enumerate() {
            beta[ja] += gamma * ls[i];
        }
        for &i in &drops {
            beta[active[i]] = 0.0;
        }

        // exact residual for the new beta
        residual.copy_from_slice(&yc);
        for &ja in &active {
            let b = beta[ja];
            if b != 0.0 {
                let col = design.col(ja);
                for (rv, cv) in residual.iter_mut().zip(col) {
                    *rv -= b * cv;
                }
            }
        }

        if iter % COV_REFRESH_PERIOD == COV_REFRESH_PERIOD - 1 {
            for (j, c) in cov.iter_mut().enumerate() {
                *c = dot(design.col(j), &residual);
            }
        } else {
            for j in 0..p {
                cov[j] -= gamma * corr_dir[j];
            }
        }

        drop_pending = !drops.is_empty();
        for &i in drops.iter().rev() {
            let ja = active.remove(i);
            sign.remove(i);
            in_active[ja] = false;
            gram.remove(i)?;
        }

        iter += 1;
    }

    if knots.is_empty() {
        knots.push(PathKnot {
            alpha: 0.0,
            beta: SparseVec::new(),
            intercept: ybar,
        });
    }

    Ok(SolutionPath {
        knots,
        convention: opts.convention,
        alpha_requested: opts.alpha_min,
        saturated,
        diagnostics,
        n_iter: iter,
    })
}

/// Value of the penalized cost at `(beta, intercept)`.
pub fn objective(
    design: &Design,
    y: &[f64],
    beta: &SparseVec,
    intercept: f64,
    alpha: f64,
    convention: PenaltyConvention,
) -> f64 {
    let n = design.n();
    let mut r: Vec<f64> = y.iter().map(|v| v - intercept).collect();
    for (j, b) in beta.iter() {
        let col = design.col(j);
        for (rv, cv) in r.iter_mut().zip(col) {
            *rv -= b * cv;
        }
    }
    let rss: f64 = r.iter().map(|v| v * v).sum();
    0.5 * rss / convention.denom(n) + alpha * beta.l1_norm()
}

/// Worst KKT violation of a path knot, in the units of its alpha: for active
/// columns `|x_j' r - alpha sign(b_j)|`, for inactive `max(0, |x_j' r| - alpha)`.
pub fn kkt_violation(
    design: &Design,
    y: &[f64],
    knot: &PathKnot,
    convention: PenaltyConvention,
) -> f64 {
    let n = design.n();
    let denom = convention.denom(n);
    let alpha_int = knot.alpha * denom;
    let mut r: Vec<f64> = y.iter().map(|v| v - knot.intercept).collect();
    for (j, b) in knot.beta.iter() {
        let col = design.col(j);
        for (rv, cv) in r.iter_mut().zip(col) {
            *rv -= b * cv;
        }
    }
    let mut worst = 0.0f64;
    for j in 0..design.p() {
        let c = dot(design.col(j), &r);
        let b = knot.beta.get(j);
        let v = if b != 0.0 {
            (c - alpha_int * b.signum()).abs()
        } else {
            (c.abs() - alpha_int).max(0.0)
        };
        worst = worst.max(v);
    }
    worst / denom
}

/// Least-squares refit of the support in original coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DebiasedFit {
    /// Refit coefficients keyed by design column id, in the units of the
    /// original (unstandardized, unweighted) columns.
    pub beta: SparseVec,
    pub intercept: f64,
    /// `||Y - Y_hat||_2` after the refit.
    pub residual_norm: f64,
}

/// One sparsity level of a path: interpolated standardized coefficients and,
/// after [`debias_refit`], the least-squares refit on the same support.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparsitySlice {
    /// Sparsity percentage: 100 is the empty solution, 0 the final penalty.
    pub level: u32,
    /// Penalty value this level maps to.
    pub alpha: f64,
    pub beta_std: SparseVec,
    /// Active design column ids, ascending.
    pub support: Vec<usize>,
    /// True when `alpha_f >= alpha_max` collapsed the grid to a single slice.
    pub degenerate: bool,
    /// True when the path stopped above this alpha and the last knot was
    /// reused instead of interpolating.
    pub extrapolated: bool,
    pub debiased: Option<DebiasedFit>,
}

/// Slice the interval `[alpha_f, alpha_max]` linearly at `step`-percent
/// sparsity levels: level `s` maps to `alpha_f + (alpha_max - alpha_f) s/100`.
pub fn slice_path(
    path: &SolutionPath,
    alpha_f: f64,
    step: u32,
) -> Result<Vec<SparsitySlice>, SolverError> {
    if step == 0 || step > 100 || 100 % step != 0 {
        return Err(SolverError::BadLevelStep(step));
    }
    let amax = path.alpha_max();
    if alpha_f >= amax {
        return Ok(vec![SparsitySlice {
            level: 100,
            alpha: amax,
            beta_std: SparseVec::new(),
            support: Vec::new(),
            degenerate: true,
            extrapolated: false,
            debiased: None,
        }]);
    }
    let mut slices = Vec::with_capacity((100 / step + 1) as usize);
    let mut s = 100i64;
    while s >= 0 {
        let alpha = if s == 100 {
            amax
        } else if s == 0 {
            alpha_f
        } else {
            alpha_f + (amax - alpha_f) * s as f64 / 100.0
        };
        let (beta_std, extrapolated) = path.beta_at(alpha);
        let support = beta_std.support();
        slices.push(SparsitySlice {
            level: s as u32,
            alpha,
            beta_std,
            support,
            degenerate: false,
            extrapolated,
            debiased: None,
        });
        s -= step as i64;
    }
    Ok(slices)
}

/// Minimum-norm least squares of `y` on `[1 | cols]` via SVD.
///
/// Returns `(intercept, coefficients, residual_norm)`.
fn lstsq_with_intercept(cols: &[&[f64]], y: &[f64]) -> (f64, Vec<f64>, f64) {
    let n = y.len();
    let s = cols.len();
    if s == 0 {
        let ybar = y.iter().sum::<f64>() / n as f64;
        let res = y.iter().map(|v| (v - ybar) * (v - ybar)).sum::<f64>().sqrt();
        return (ybar, Vec::new(), res);
    }
    let a = nalgebra::DMatrix::from_fn(n, s + 1, |r, c| if c == 0 { 1.0 } else { cols[c - 1][r] });
    let b = nalgebra::DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let eps = smax * f64::EPSILON * (n.max(s + 1) as f64);
    let sol = svd
        .solve(&b, eps)
        .expect("SVD solve only fails when factors were not requested");
    let residual = (&a * &sol - &b).norm();
    (sol[0], sol.as_slice()[1..].to_vec(), residual)
}

/// Debias a slice against explicit original columns (used when the design
/// itself is the original coordinate system, e.g. in randomized checks).
pub fn debias_refit_design(slice: &SparsitySlice, design: &Design, y: &[f64]) -> SparsitySlice {
    let cols: Vec<&[f64]> = slice.support.iter().map(|&j| design.col(j)).collect();
    let (intercept, coefs, residual_norm) = lstsq_with_intercept(&cols, y);
    let beta = SparseVec::from_entries(slice.support.iter().copied().zip(coefs).collect());
    SparsitySlice {
        debiased: Some(DebiasedFit {
            beta,
            intercept,
            residual_norm,
        }),
        ..slice.clone()
    }
}

/// Least-squares refit of `y` on the original (unstandardized, unweighted)
/// support columns plus intercept, solved by a rank-revealing orthogonal
/// decomposition with a minimum-norm solution on rank deficiency.
pub fn debias_refit(
    slice: &SparsitySlice,
    bundle: &RegressorBundle,
    y: &[f64],
) -> Result<SparsitySlice, SolverError> {
    let std = bundle.standardization()?;
    let mut owned: Vec<Vec<f64>> = Vec::with_capacity(slice.support.len());
    for &j in &slice.support {
        let id = *std.retained.get(j).ok_or_else(|| {
            SolverError::Internal(format!("design column {j} out of range for bundle"))
        })?;
        owned.push(bundle.original_column(id).to_vec());
    }
    let cols: Vec<&[f64]> = owned.iter().map(|v| v.as_slice()).collect();
    let (intercept, coefs, residual_norm) = lstsq_with_intercept(&cols, y);
    let beta = SparseVec::from_entries(slice.support.iter().copied().zip(coefs).collect());
    Ok(SparsitySlice {
        debiased: Some(DebiasedFit {
            beta,
            intercept,
            residual_norm,
        }),
        ..slice.clone()
    })
}

/// Map standardized coefficients back to original coordinates:
/// `b_orig = b_std * blockweight / norm`, keyed by bundle column id.
///
/// The prediction identity `X_std b_std = phi_centered b_orig` holds by
/// construction. A coefficient referencing a dropped column is an internal
/// error (the solver never sees dropped columns).
pub fn map_back(
    beta_std: &SparseVec,
    bundle: &RegressorBundle,
) -> Result<Vec<(usize, f64)>, SolverError> {
    let std = bundle.standardization()?;
    let mut out = Vec::with_capacity(beta_std.nnz());
    for (j, v) in beta_std.iter() {
        let id = *std.retained.get(j).ok_or_else(|| {
            SolverError::Internal(format!(
                "standardized coefficient {j} does not map to a retained column"
            ))
        })?;
        let bw = bundle.block_weight(id)?;
        out.push((id, v * bw / std.norm[id]));
    }
    Ok(out)
}

/// Residual norm of the standardized prediction `ybar + X_std b_std`
/// (the pre-refit residual a debias refit must not exceed).
pub fn standardized_residual_norm(design: &Design, y: &[f64], beta_std: &SparseVec) -> f64 {
    let n = design.n();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let mut r: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    for (j, b) in beta_std.iter() {
        let col = design.col(j);
        for (rv, cv) in r.iter_mut().zip(col) {
            *rv -= b * cv;
        }
    }
    dot(&r, &r).sqrt()
}
