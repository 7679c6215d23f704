//! Discrete harmonic-oscillator bank and the linear regressor mapping
//! `(x0, U) -> predicted signal`.
//!
//! Each mode is a forward-Euler discretized pendulum with state
//! `(position, velocity)`:
//!
//! ```text
//! a_i = | 1        Ts |    b_i = | 0  |    c_i = ( fs*w_i  0 )
//!       | -Ts*w_i^2 1 |          | Ts |
//! ```
//!
//! The bank stacks `m` decoupled modes block-diagonally. The `fs*w_i` output
//! scaling makes a unit excitation impulse carry over to a unit oscillation
//! amplitude (up to the Euler growth factor `sqrt(1 + Ts^2 w_i^2)` per step).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solver::Design;

/// Threshold below which a centered column is considered identically zero
/// and excluded from solving.
pub const DROP_NORM_THRESHOLD: f64 = 1e-12;

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("angular frequency must be positive, got {0}")]
    NonPositiveOmega(f64),
    #[error("sampling rate must be positive, got {0}")]
    NonPositiveFs(f64),
    #[error("mode frequencies must be strictly increasing and positive")]
    BadFrequencyGrid,
    #[error("band ({low}, {high}) Hz invalid for fs = {fs} Hz: need 0 < low < high <= fs/2")]
    InvalidBand { low: f64, high: f64, fs: f64 },
    #[error("oscillator bank needs at least two modes, got {0}")]
    TooFewModes(usize),
    #[error("signal length must be at least 2, got {0}")]
    SignalTooShort(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("weight w must lie in [0, 1], got {0}")]
    InvalidWeight(f64),
    #[error("bundle is not standardized")]
    NotStandardized,
}

/// The three matrices of a single discretized harmonic oscillator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeBlocks {
    /// 2x2 dynamics block, row-major.
    pub a: [[f64; 2]; 2],
    /// 2x1 input block.
    pub b: [f64; 2],
    /// 1x2 output block.
    pub c: [f64; 2],
}

/// Discretize one mode of angular frequency `omega` (rad/s) at rate `fs` (Hz).
pub fn discretize_mode(omega: f64, fs: f64) -> Result<ModeBlocks, ModelError> {
    if !(omega > 0.0) {
        return Err(ModelError::NonPositiveOmega(omega));
    }
    if !(fs > 0.0) {
        return Err(ModelError::NonPositiveFs(fs));
    }
    let ts = 1.0 / fs;
    Ok(ModeBlocks {
        a: [[1.0, ts], [-(ts * omega * omega), 1.0]],
        b: [0.0, ts],
        c: [fs * omega, 0.0],
    })
}

/// Bank of `m` decoupled harmonic oscillators in discrete state space.
///
/// State dimension is `2m` with per-mode layout `(position, velocity)`;
/// the input dimension is `m` (one excitation channel per mode).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OscillatorBank {
    m: usize,
    fs: f64,
    ts: f64,
    omegas: Vec<f64>,
}

impl OscillatorBank {
    /// Build a bank from explicit angular frequencies (rad/s).
    ///
    /// Frequencies must be strictly increasing and positive. A single mode is
    /// allowed here; the evenly-spaced constructor [`build_bank`] requires
    /// `m >= 2`.
    pub fn new(omegas: Vec<f64>, fs: f64) -> Result<Self, ModelError> {
        if !(fs > 0.0) {
            return Err(ModelError::NonPositiveFs(fs));
        }
        if omegas.is_empty() || omegas[0] <= 0.0 {
            return Err(ModelError::BadFrequencyGrid);
        }
        if omegas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::BadFrequencyGrid);
        }
        Ok(Self {
            m: omegas.len(),
            fs,
            ts: 1.0 / fs,
            omegas,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    /// Matrices of mode `i`.
    pub fn mode(&self, i: usize) -> ModeBlocks {
        discretize_mode(self.omegas[i], self.fs).expect("bank frequencies validated at build")
    }

    /// Dense 2m x 2m block-diagonal dynamics matrix.
    pub fn dynamics(&self) -> Array2<f64> {
        let mut a = Array2::zeros((2 * self.m, 2 * self.m));
        for i in 0..self.m {
            let blk = self.mode(i);
            for (r, row) in blk.a.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    a[[2 * i + r, 2 * i + c]] = *v;
                }
            }
        }
        a
    }

    /// Dense 2m x m block-diagonal input matrix.
    pub fn input(&self) -> Array2<f64> {
        let mut b = Array2::zeros((2 * self.m, self.m));
        for i in 0..self.m {
            let blk = self.mode(i);
            b[[2 * i, i]] = blk.b[0];
            b[[2 * i + 1, i]] = blk.b[1];
        }
        b
    }

    /// Dense 1 x 2m output matrix as a vector.
    pub fn output(&self) -> Array1<f64> {
        let mut c = Array1::zeros(2 * self.m);
        for i in 0..self.m {
            let blk = self.mode(i);
            c[2 * i] = blk.c[0];
            c[2 * i + 1] = blk.c[1];
        }
        c
    }
}

/// Assemble a bank with `m` modes evenly spaced over `[f_low, f_high]` Hz.
pub fn build_bank(f_low: f64, f_high: f64, m: usize, fs: f64) -> Result<OscillatorBank, ModelError> {
    if !(fs > 0.0) {
        return Err(ModelError::NonPositiveFs(fs));
    }
    if !(f_low > 0.0 && f_low < f_high && f_high <= fs / 2.0) {
        return Err(ModelError::InvalidBand {
            low: f_low,
            high: f_high,
            fs,
        });
    }
    if m < 2 {
        return Err(ModelError::TooFewModes(m));
    }
    let step = (f_high - f_low) / (m - 1) as f64;
    let omegas: Vec<f64> = (0..m)
        .map(|i| {
            let f = if i == m - 1 { f_high } else { f_low + i as f64 * step };
            2.0 * std::f64::consts::PI * f
        })
        .collect();
    OscillatorBank::new(omegas, fs)
}

/// Run the state recursion `x_{k+1} = A x_k + B u_k`, `y_k = C x_k`.
///
/// `x0` has length `2m`; `u` is the `m x (L-1)` excitation grid (`u[[i, k]]`
/// is the force on mode `i` at sample `k`); the output has length
/// `L = u.ncols() + 1`.
pub fn simulate(
    bank: &OscillatorBank,
    x0: ArrayView1<f64>,
    u: ArrayView2<f64>,
) -> Result<Array1<f64>, ModelError> {
    let m = bank.m;
    if x0.len() != 2 * m {
        return Err(ModelError::DimensionMismatch(format!(
            "x0 has length {}, expected {}",
            x0.len(),
            2 * m
        )));
    }
    if u.nrows() != m {
        return Err(ModelError::DimensionMismatch(format!(
            "u has {} rows, expected {}",
            u.nrows(),
            m
        )));
    }
    let l = u.ncols() + 1;
    let ts = bank.ts;
    let mut pos: Vec<f64> = (0..m).map(|i| x0[2 * i]).collect();
    let mut vel: Vec<f64> = (0..m).map(|i| x0[2 * i + 1]).collect();
    let mut y = Array1::zeros(l);
    let read_out = |pos: &[f64]| -> f64 {
        pos.iter()
            .zip(&bank.omegas)
            .map(|(p, w)| bank.fs * w * p)
            .sum()
    };
    y[0] = read_out(&pos);
    for k in 0..l - 1 {
        for i in 0..m {
            let w = bank.omegas[i];
            let p = pos[i];
            let v = vel[i];
            pos[i] = p + ts * v;
            vel[i] = -(ts * w * w) * p + v + ts * u[[i, k]];
        }
        y[k + 1] = read_out(&pos);
    }
    Ok(y)
}

/// Which block of the regressor matrix a column belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnKind {
    /// Initial-state entry of a mode; `k` is 0 for position, 1 for velocity.
    InitialState,
    /// Excitation impulse of a mode at sample `k` (timestamp `k / fs`).
    Excitation,
}

/// Metadata of one regressor column; every coefficient index maps to exactly
/// one of these records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub kind: ColumnKind,
    pub mode: usize,
    pub k: usize,
    pub time_s: f64,
}

/// Per-column standardization record (mean and pre-scaling Euclidean norm).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardization {
    pub w: f64,
    /// Column means, indexed by bundle column id.
    pub mean: Vec<f64>,
    /// Euclidean norms of the centered columns, pre block-weight scaling.
    pub norm: Vec<f64>,
    /// Bundle column id of each retained design column, in design order.
    pub retained: Vec<usize>,
    /// Inverse of `retained`: design index of each bundle column, if kept.
    pub design_index: Vec<Option<usize>>,
    /// Bundle column ids excluded for near-zero centered norm.
    pub dropped: Vec<usize>,
}

/// Regressor matrices `phi1` (initial state) and `phi2` (excitations) for a
/// bank at a fixed signal length, plus column metadata and, once
/// [`standardize`]d, the centered/weighted solver design.
#[derive(Debug, Clone)]
pub struct RegressorBundle {
    bank: OscillatorBank,
    l: usize,
    phi1: Array2<f64>,
    phi2: Array2<f64>,
    columns: Vec<ColumnInfo>,
    std: Option<(Standardization, Design)>,
}

impl RegressorBundle {
    pub fn bank(&self) -> &OscillatorBank {
        &self.bank
    }

    pub fn len(&self) -> usize {
        self.l
    }

    pub fn is_empty(&self) -> bool {
        self.l == 0
    }

    /// Total coefficient dimension `2m + m(L-1)`.
    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn phi1(&self) -> &Array2<f64> {
        &self.phi1
    }

    pub fn phi2(&self) -> &Array2<f64> {
        &self.phi2
    }

    pub fn columns(&self) -> &[ColumnInfo] {
        &self.columns
    }

    pub fn column_info(&self, id: usize) -> &ColumnInfo {
        &self.columns[id]
    }

    /// Original (unstandardized, unweighted) column by bundle id.
    pub fn original_column(&self, id: usize) -> ArrayView1<'_, f64> {
        let m2 = 2 * self.bank.m;
        if id < m2 {
            self.phi1.column(id)
        } else {
            self.phi2.column(id - m2)
        }
    }

    /// Block weight of a column: `w` for phi1 columns, `1 - w` for phi2.
    pub fn block_weight(&self, id: usize) -> Result<f64, ModelError> {
        let (std, _) = self.std.as_ref().ok_or(ModelError::NotStandardized)?;
        Ok(match self.columns[id].kind {
            ColumnKind::InitialState => std.w,
            ColumnKind::Excitation => 1.0 - std.w,
        })
    }

    pub fn standardization(&self) -> Result<&Standardization, ModelError> {
        self.std
            .as_ref()
            .map(|(s, _)| s)
            .ok_or(ModelError::NotStandardized)
    }

    /// Centered, weighted design over retained columns, ready for the solver.
    pub fn design(&self) -> Result<&Design, ModelError> {
        self.std
            .as_ref()
            .map(|(_, d)| d)
            .ok_or(ModelError::NotStandardized)
    }

    /// Bundle column id of design column `j`.
    pub fn bundle_id(&self, design_col: usize) -> Result<usize, ModelError> {
        Ok(self.standardization()?.retained[design_col])
    }
}

/// Build the regressor matrices for `bank` at signal length `l`.
///
/// Row `j` of `phi1` is `C A^j` (computed by row recursion); `phi2` is block
/// lower-triangular with `phi2[j, (k, i)] = c_i a_i^{j-1-k} b_i` for `j > k`.
/// For every `(x0, U)`, `phi1 x0 + phi2 vec(U)` equals the state recursion of
/// [`simulate`].
pub fn build_phi(bank: &OscillatorBank, l: usize) -> Result<RegressorBundle, ModelError> {
    if l < 2 {
        return Err(ModelError::SignalTooShort(l));
    }
    let m = bank.m;
    let ts = bank.ts;

    // phi1 rows by recursion: row_{j+1} = row_j * A, blockwise per mode.
    let mut phi1 = Array2::zeros((l, 2 * m));
    for i in 0..m {
        let blk = bank.mode(i);
        phi1[[0, 2 * i]] = blk.c[0];
        phi1[[0, 2 * i + 1]] = blk.c[1];
    }
    for j in 0..l - 1 {
        for i in 0..m {
            let w = bank.omegas[i];
            let ep = phi1[[j, 2 * i]];
            let ev = phi1[[j, 2 * i + 1]];
            phi1[[j + 1, 2 * i]] = ep - ev * (ts * w * w);
            phi1[[j + 1, 2 * i + 1]] = ep * ts + ev;
        }
    }

    // Per-mode impulse response g_i(d) = c_i a_i^d b_i for d = 0..L-2.
    // g_i(0) = c_i b_i = 0 identically.
    let mut g = Array2::zeros((m, l - 1));
    for i in 0..m {
        let w = bank.omegas[i];
        let mut sp = 0.0;
        let mut sv = ts;
        g[[i, 0]] = bank.fs * w * sp;
        for d in 1..l - 1 {
            let (p, v) = (sp, sv);
            sp = p + ts * v;
            sv = -(ts * w * w) * p + v;
            g[[i, d]] = bank.fs * w * sp;
        }
    }

    // phi2 filled row-wise; row 0 is all zero.
    let mut phi2 = Array2::zeros((l, m * (l - 1)));
    for j in 1..l {
        let mut row = phi2.row_mut(j);
        for k in 0..j {
            let d = j - 1 - k;
            for i in 0..m {
                row[k * m + i] = g[[i, d]];
            }
        }
    }

    let mut columns = Vec::with_capacity(2 * m + m * (l - 1));
    for i in 0..m {
        for comp in 0..2 {
            columns.push(ColumnInfo {
                kind: ColumnKind::InitialState,
                mode: i,
                k: comp,
                time_s: 0.0,
            });
        }
    }
    for k in 0..l - 1 {
        for i in 0..m {
            columns.push(ColumnInfo {
                kind: ColumnKind::Excitation,
                mode: i,
                k,
                time_s: k as f64 / bank.fs,
            });
        }
    }

    Ok(RegressorBundle {
        bank: bank.clone(),
        l,
        phi1,
        phi2,
        columns,
        std: None,
    })
}

/// Center every column, scale it to unit Euclidean norm, then weight the
/// phi1 block by `w` and the phi2 block by `1 - w`.
///
/// Columns whose centered norm falls below [`DROP_NORM_THRESHOLD`] are moved
/// to `dropped` and excluded from the solver design (their coefficients are
/// pinned to zero). Means and norms are recorded for the inverse mapping.
pub fn standardize(bundle: &RegressorBundle, w: f64) -> Result<RegressorBundle, ModelError> {
    if !(0.0..=1.0).contains(&w) {
        return Err(ModelError::InvalidWeight(w));
    }
    let n_cols = bundle.n_columns();
    let l = bundle.l;
    let mut mean = vec![0.0; n_cols];
    let mut norm = vec![0.0; n_cols];
    let mut retained = Vec::new();
    let mut design_index = vec![None; n_cols];
    let mut dropped = Vec::new();

    // First pass: means, centered norms, retention.
    for id in 0..n_cols {
        let col = bundle.original_column(id);
        let mu = col.sum() / l as f64;
        let nrm = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>().sqrt();
        mean[id] = mu;
        norm[id] = nrm;
        if nrm < DROP_NORM_THRESHOLD {
            dropped.push(id);
        } else {
            design_index[id] = Some(retained.len());
            retained.push(id);
        }
    }

    // Second pass: materialize the design, one row per retained column.
    let mut data = Array2::zeros((retained.len(), l));
    for (j, &id) in retained.iter().enumerate() {
        let bw = match bundle.columns[id].kind {
            ColumnKind::InitialState => w,
            ColumnKind::Excitation => 1.0 - w,
        };
        let col = bundle.original_column(id);
        let scale = bw / norm[id];
        let mu = mean[id];
        let mut row = data.row_mut(j);
        for (dst, src) in row.iter_mut().zip(col.iter()) {
            *dst = (src - mu) * scale;
        }
    }

    Ok(RegressorBundle {
        bank: bundle.bank.clone(),
        l,
        phi1: bundle.phi1.clone(),
        phi2: bundle.phi2.clone(),
        columns: bundle.columns.clone(),
        std: Some((
            Standardization {
                w,
                mean,
                norm,
                retained,
                design_index,
                dropped,
            },
            Design::from_rows(data),
        )),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn discretize_matches_direct_substitution() {
        let blk = discretize_mode(2.0 * PI, 500.0).unwrap();
        assert_relative_eq!(blk.a[0][0], 1.0);
        assert_relative_eq!(blk.a[0][1], 0.002);
        assert_relative_eq!(blk.a[1][0], -0.07895683520871486, max_relative = 1e-12);
        assert_relative_eq!(blk.a[1][1], 1.0);
        assert_eq!(blk.b, [0.0, 0.002]);
        assert_relative_eq!(blk.c[0], 3141.5926535897934, max_relative = 1e-12);
        assert_eq!(blk.c[1], 0.0);
    }

    #[test]
    fn discretize_small_omega_is_double_integrator() {
        let blk = discretize_mode(1e-9, 500.0).unwrap();
        assert!(blk.a[1][0].abs() < 1e-20);
        assert_eq!(blk.a[0][1], 0.002);
    }

    #[test]
    fn discretize_determinant_identity() {
        for &(omega, fs) in &[(2.0 * PI, 500.0), (60.0 * PI, 500.0), (3.7, 128.0)] {
            let blk = discretize_mode(omega, fs).unwrap();
            let det = blk.a[0][0] * blk.a[1][1] - blk.a[0][1] * blk.a[1][0];
            let ts = 1.0 / fs;
            assert_relative_eq!(det, 1.0 + ts * ts * omega * omega, max_relative = 1e-15);
        }
    }

    #[test]
    fn discretize_rejects_bad_args() {
        assert!(discretize_mode(0.0, 500.0).is_err());
        assert!(discretize_mode(-1.0, 500.0).is_err());
        assert!(discretize_mode(1.0, 0.0).is_err());
    }

    #[test]
    fn bank_grid_endpoints_and_spacing() {
        let bank = build_bank(1.0, 30.0, 40, 500.0).unwrap();
        assert_eq!(bank.m(), 40);
        assert_relative_eq!(bank.omegas()[0], 2.0 * PI, max_relative = 1e-15);
        assert_relative_eq!(bank.omegas()[39], 60.0 * PI, max_relative = 1e-15);
        let spacing = 2.0 * PI * 29.0 / 39.0;
        for w in bank.omegas().windows(2) {
            assert_relative_eq!(w[1] - w[0], spacing, max_relative = 1e-10);
        }
    }

    #[test]
    fn bank_two_modes_is_the_endpoints() {
        let bank = build_bank(1.0, 30.0, 2, 500.0).unwrap();
        assert_eq!(bank.omegas(), &[2.0 * PI, 60.0 * PI]);
    }

    #[test]
    fn bank_rejects_nyquist_violation() {
        assert!(build_bank(1.0, 300.0, 40, 500.0).is_err());
        assert!(build_bank(0.0, 30.0, 40, 500.0).is_err());
        assert!(build_bank(1.0, 30.0, 1, 500.0).is_err());
        // fs/2 itself is allowed
        assert!(build_bank(1.0, 250.0, 3, 500.0).is_ok());
    }

    #[test]
    fn simulate_zero_in_zero_out() {
        let bank = build_bank(1.0, 30.0, 4, 500.0).unwrap();
        let x0 = Array1::zeros(8);
        let u = Array2::zeros((4, 63));
        let y = simulate(&bank, x0.view(), u.view()).unwrap();
        assert_eq!(y.len(), 64);
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn simulate_checks_dimensions() {
        let bank = build_bank(1.0, 30.0, 4, 500.0).unwrap();
        let x0 = Array1::zeros(7);
        let u = Array2::zeros((4, 63));
        assert!(simulate(&bank, x0.view(), u.view()).is_err());
        let x0 = Array1::zeros(8);
        let u = Array2::zeros((3, 63));
        assert!(simulate(&bank, x0.view(), u.view()).is_err());
    }

    #[test]
    fn simulate_is_linear_in_state_and_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bank = build_bank(2.0, 20.0, 3, 250.0).unwrap();
        let x0 = Array1::from_iter((0..6).map(|_| rng.random_range(-1.0..1.0)));
        let u = Array2::from_shape_fn((3, 31), |_| rng.random_range(-1.0..1.0));
        let full = simulate(&bank, x0.view(), u.view()).unwrap();
        let state_only = simulate(&bank, x0.view(), Array2::zeros((3, 31)).view()).unwrap();
        let input_only = simulate(&bank, Array1::zeros(6).view(), u.view()).unwrap();
        for k in 0..32 {
            assert_relative_eq!(full[k], state_only[k] + input_only[k], max_relative = 1e-12);
        }
    }

    /// Growth-compensated impulse amplitude. The forward-Euler blocks grow by
    /// `rho = sqrt(1 + Ts^2 w^2)` per step, so the raw peak overshoots by
    /// `exp(pi Ts w / 4)` at the first quarter period (22% at 20 Hz); dividing
    /// the response by `rho^(k-1)` isolates the amplitude actually injected
    /// by the impulse.
    fn impulse_amplitude(freq_hz: f64, fs: f64) -> f64 {
        let omega = 2.0 * PI * freq_hz;
        let bank = OscillatorBank::new(vec![omega], fs).unwrap();
        let period = (fs / freq_hz).round() as usize;
        let mut u = Array2::zeros((1, period + 2));
        u[[0, 0]] = 1.0;
        let y = simulate(&bank, Array1::zeros(2).view(), u.view()).unwrap();
        let ts = 1.0 / fs;
        let rho = (1.0 + ts * ts * omega * omega).sqrt();
        let mut peak: f64 = 0.0;
        let mut growth = 1.0;
        for k in 1..=period + 1 {
            peak = peak.max(y[k].abs() / growth);
            growth *= rho;
        }
        peak
    }

    #[test]
    fn impulse_amplitude_calibration() {
        for &f in &[2.0, 5.0, 10.0, 20.0] {
            let amp = impulse_amplitude(f, 500.0);
            assert!(
                (amp - 1.0).abs() <= 0.05,
                "compensated impulse amplitude at {f} Hz = {amp}"
            );
        }
    }

    #[test]
    fn impulse_amplitude_five_hz_band() {
        let amp = impulse_amplitude(5.0, 500.0);
        assert!((0.95..=1.05).contains(&amp), "got {amp}");
    }

    #[test]
    fn modes_stay_decoupled() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bank = build_bank(2.0, 20.0, 3, 250.0).unwrap();
        let mut u = Array2::zeros((3, 49));
        for k in 0..49 {
            u[[1, k]] = rng.random_range(-1.0..1.0);
        }
        let y3 = simulate(&bank, Array1::zeros(6).view(), u.view()).unwrap();
        let single = OscillatorBank::new(vec![bank.omegas()[1]], 250.0).unwrap();
        let y1 = simulate(&single, Array1::zeros(2).view(), u.row(1).insert_axis(ndarray::Axis(0))).unwrap();
        for k in 0..50 {
            assert_relative_eq!(y3[k], y1[k], max_relative = 1e-13, epsilon = 1e-15);
        }
    }

    #[test]
    fn phi_shapes_at_paper_scale() {
        let bank = build_bank(1.0, 30.0, 40, 500.0).unwrap();
        let bundle = build_phi(&bank, 250).unwrap();
        assert_eq!(bundle.phi1().dim(), (250, 80));
        assert_eq!(bundle.phi2().dim(), (250, 9960));
        assert_eq!(bundle.n_columns(), 80 + 9960);
    }

    #[test]
    fn phi2_first_row_is_zero() {
        let bank = build_bank(1.0, 30.0, 4, 500.0).unwrap();
        let bundle = build_phi(&bank, 32).unwrap();
        assert!(bundle.phi2().row(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn phi2_last_time_block_is_zero_because_cb_vanishes() {
        let bank = build_bank(1.0, 30.0, 4, 500.0).unwrap();
        let l = 32;
        let bundle = build_phi(&bank, l).unwrap();
        let m = 4;
        let k = l - 2;
        for i in 0..m {
            let col = bundle.phi2().column(k * m + i);
            assert!(col.iter().all(|v| *v == 0.0), "mode {i}");
        }
    }

    #[test]
    fn phi_reconstructs_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..200 {
            let m = rng.random_range(1..=8usize);
            let l = rng.random_range(2..=64usize);
            let fs = 250.0;
            let omegas: Vec<f64> = {
                let mut fs_grid: Vec<f64> =
                    (0..m).map(|_| rng.random_range(0.5..100.0)).collect();
                fs_grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
                fs_grid.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
                fs_grid.iter().map(|f| 2.0 * PI * f).collect()
            };
            let bank = OscillatorBank::new(omegas, fs).unwrap();
            let m = bank.m();
            let bundle = build_phi(&bank, l).unwrap();
            let x0 = Array1::from_iter((0..2 * m).map(|_| rng.random_range(-1.0..1.0)));
            let u = Array2::from_shape_fn((m, l - 1), |_| rng.random_range(-1.0..1.0));
            let y_sim = simulate(&bank, x0.view(), u.view()).unwrap();

            // vec(U) is time-major: entry k*m + i is u[[i, k]].
            let mut vec_u = Array1::zeros(m * (l - 1));
            for k in 0..l - 1 {
                for i in 0..m {
                    vec_u[k * m + i] = u[[i, k]];
                }
            }
            let y_phi = bundle.phi1().dot(&x0) + bundle.phi2().dot(&vec_u);
            let scale = y_sim.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            let err = y_sim
                .iter()
                .zip(y_phi.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(err / scale < 1e-10, "case {case}: rel err {}", err / scale);
        }
    }

    #[test]
    fn standardize_w_one_zeroes_phi2_block() {
        let bank = build_bank(1.0, 30.0, 3, 500.0).unwrap();
        let bundle = build_phi(&bank, 16).unwrap();
        let std = standardize(&bundle, 1.0).unwrap();
        let info = std.standardization().unwrap();
        let design = std.design().unwrap();
        for (j, &id) in info.retained.iter().enumerate() {
            if std.columns()[id].kind == ColumnKind::Excitation {
                assert!(design.col(j).iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn standardize_half_weight_gives_equal_norms() {
        let bank = build_bank(1.0, 30.0, 3, 500.0).unwrap();
        let bundle = build_phi(&bank, 16).unwrap();
        let std = standardize(&bundle, 0.5).unwrap();
        let design = std.design().unwrap();
        for j in 0..design.p() {
            let nrm = design.col(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_relative_eq!(nrm, 0.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn standardize_drops_zero_columns() {
        let bank = build_bank(1.0, 30.0, 3, 500.0).unwrap();
        let l = 16;
        let bundle = build_phi(&bank, l).unwrap();
        let std = standardize(&bundle, 0.55).unwrap();
        let info = std.standardization().unwrap();
        // the u_{L-2} columns have zero norm (C B = 0)
        let expected: Vec<usize> = (0..3).map(|i| 6 + (l - 2) * 3 + i).collect();
        assert_eq!(info.dropped, expected);
        assert_eq!(info.retained.len() + info.dropped.len(), std.n_columns());
    }

    #[test]
    fn standardize_round_trips() {
        let bank = build_bank(1.0, 30.0, 3, 500.0).unwrap();
        let bundle = build_phi(&bank, 16).unwrap();
        let w = 0.55;
        let std = standardize(&bundle, w).unwrap();
        let info = std.standardization().unwrap();
        let design = std.design().unwrap();
        for (j, &id) in info.retained.iter().enumerate() {
            let bw = std.block_weight(id).unwrap();
            let orig = bundle.original_column(id);
            for (r, v) in design.col(j).iter().enumerate() {
                let back = v * info.norm[id] / bw + info.mean[id];
                assert_relative_eq!(back, orig[r], max_relative = 1e-12, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn standardized_columns_have_zero_mean() {
        let bank = build_bank(1.0, 30.0, 3, 500.0).unwrap();
        let bundle = build_phi(&bank, 16).unwrap();
        let std = standardize(&bundle, 0.3).unwrap();
        let design = std.design().unwrap();
        for j in 0..design.p() {
            let mean: f64 = design.col(j).iter().sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_rejects_bad_weight() {
        let bank = build_bank(1.0, 30.0, 3, 500.0).unwrap();
        let bundle = build_phi(&bank, 16).unwrap();
        assert!(standardize(&bundle, -0.1).is_err());
        assert!(standardize(&bundle, 1.1).is_err());
    }
}
