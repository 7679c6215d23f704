//! Decomposition of a fitted solution into background and forced
//! contributions, and the two sparse dynamical features extracted from the
//! excitation grid: F1 (instant of the lowest excitation amplitude) and
//! F2 (mean excitation over a late interval).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{build_bank, build_phi, standardize, ColumnKind, ModelError, RegressorBundle};
use crate::signal::{ErpSet, Group, SignalError, Stimulus};
use crate::solver::{
    lars_path, slice_path, LarsOptions, PenaltyConvention, SolverError, SparsitySlice,
};

#[derive(Error, Debug)]
pub enum FeatureError {
    #[error("channel {requested} not in dataset; available: {available:?}")]
    UnknownChannel {
        requested: String,
        available: Vec<String>,
    },
    #[error("stimulus {0} not present for subject {1}")]
    MissingStimulus(Stimulus, String),
    #[error("slice has not been debiased")]
    NotDebiased,
    #[error("interval [{0}, {1}) is invalid for this window")]
    BadInterval(f64, f64),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Half-open time interval `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start_s: f64,
    pub end_s: f64,
}

impl Interval {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }
}

/// Operating intervals of the two features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureIntervals {
    pub i1: Interval,
    pub i2: Interval,
}

impl Default for FeatureIntervals {
    fn default() -> Self {
        Self {
            i1: Interval::new(0.0, 0.5),
            i2: Interval::new(0.180, 0.500),
        }
    }
}

/// One excitation impulse of the recovered input grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UEntry {
    pub mode: usize,
    pub k: usize,
    pub value: f64,
}

/// A debiased solution split into its initial-state and excitation parts,
/// with the two partial predictions (`yhat = yhat_x0 + yhat_u + intercept`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VmsDecomposition {
    pub m: usize,
    pub l: usize,
    pub fs: f64,
    pub intercept: f64,
    /// Initial oscillator states in original coordinates, length 2m.
    pub x0: Vec<f64>,
    /// Sparse excitation grid, sorted by (k, mode).
    pub u: Vec<UEntry>,
    pub yhat_x0: Vec<f64>,
    pub yhat_u: Vec<f64>,
}

impl VmsDecomposition {
    pub fn yhat(&self) -> Vec<f64> {
        self.yhat_x0
            .iter()
            .zip(&self.yhat_u)
            .map(|(a, b)| a + b + self.intercept)
            .collect()
    }

    /// Time grid of the excitation entries.
    pub fn time_of(&self, k: usize) -> f64 {
        k as f64 / self.fs
    }
}

/// Split a debiased slice by column kind and compute both partial
/// predictions.
pub fn decompose(
    slice: &SparsitySlice,
    bundle: &RegressorBundle,
) -> Result<VmsDecomposition, FeatureError> {
    let fit = slice.debiased.as_ref().ok_or(FeatureError::NotDebiased)?;
    let bank = bundle.bank();
    let m = bank.m();
    let l = bundle.len();
    let mut x0 = vec![0.0; 2 * m];
    let mut u = Vec::new();
    let mut yhat_x0 = vec![0.0; l];
    let mut yhat_u = vec![0.0; l];
    for (j, v) in fit.beta.iter() {
        let id = bundle.bundle_id(j)?;
        let info = bundle.column_info(id);
        let col = bundle.original_column(id);
        match info.kind {
            ColumnKind::InitialState => {
                x0[2 * info.mode + info.k] = v;
                for (acc, x) in yhat_x0.iter_mut().zip(col.iter()) {
                    *acc += v * x;
                }
            }
            ColumnKind::Excitation => {
                u.push(UEntry {
                    mode: info.mode,
                    k: info.k,
                    value: v,
                });
                for (acc, x) in yhat_u.iter_mut().zip(col.iter()) {
                    *acc += v * x;
                }
            }
        }
    }
    u.sort_by_key(|e| (e.k, e.mode));
    Ok(VmsDecomposition {
        m,
        l,
        fs: bank.fs(),
        intercept: fit.intercept,
        x0,
        u,
        yhat_x0,
        yhat_u,
    })
}

/// F1: the instant of the lowest excitation amplitude inside `i1`.
///
/// All grid cells count, zeros included; ties break to the earliest time,
/// then the lowest mode. Returns `(seconds, degenerate)` where `degenerate`
/// marks an all-zero grid inside `i1` (the tie-break then yields the earliest
/// grid time in the interval). With `absolute` set, the minimum is taken over
/// the magnitudes of the nonzero entries instead.
pub fn extract_f1(dec: &VmsDecomposition, i1: Interval, absolute: bool) -> (f64, bool) {
    let grid: Vec<usize> = (0..dec.l.saturating_sub(1))
        .filter(|k| i1.contains(dec.time_of(*k)))
        .collect();
    let earliest = grid.first().map(|k| dec.time_of(*k)).unwrap_or(i1.start_s);
    let inside: Vec<&UEntry> = dec
        .u
        .iter()
        .filter(|e| e.value != 0.0 && i1.contains(dec.time_of(e.k)))
        .collect();
    if inside.is_empty() {
        return (earliest, true);
    }
    // ties break to the earliest time, then the lowest mode
    let beats = |cand: f64, e: &UEntry, best: f64, b: &UEntry| {
        cand < best || (cand == best && (e.k, e.mode) < (b.k, b.mode))
    };
    if absolute {
        let mut best = inside[0];
        for e in &inside[1..] {
            if beats(e.value.abs(), e, best.value.abs(), best) {
                best = e;
            }
        }
        return (dec.time_of(best.k), false);
    }
    let mut best = inside[0];
    for e in &inside[1..] {
        if beats(e.value, e, best.value, best) {
            best = e;
        }
    }
    if best.value < 0.0 {
        return (dec.time_of(best.k), false);
    }
    // every stored entry is positive: the signed minimum is 0, attained at
    // the earliest grid time with an unoccupied (zero) cell
    for &k in &grid {
        let occupied = dec.u.iter().filter(|e| e.k == k && e.value != 0.0).count();
        if occupied < dec.m {
            return (dec.time_of(k), false);
        }
    }
    (dec.time_of(best.k), false)
}

/// F2: sum of all excitation entries with timestamps in `i2`, divided by the
/// number of sample-grid points in `i2` (zero cells count in the
/// denominator). With `nonzero_only`, the mean runs over the nonzero entries
/// inside `i2` instead.
pub fn extract_f2(dec: &VmsDecomposition, i2: Interval, nonzero_only: bool) -> f64 {
    let sum: f64 = dec
        .u
        .iter()
        .filter(|e| i2.contains(dec.time_of(e.k)))
        .map(|e| e.value)
        .sum();
    if nonzero_only {
        let count = dec
            .u
            .iter()
            .filter(|e| e.value != 0.0 && i2.contains(dec.time_of(e.k)))
            .count();
        if count == 0 {
            return 0.0;
        }
        return sum / count as f64;
    }
    let count = (0..dec.l).filter(|k| i2.contains(dec.time_of(*k))).count();
    if count == 0 {
        return 0.0;
    }
    sum / count as f64
}

/// The (F1, F2) pair for one (subject, channel, stimulus, m, level) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdfVector {
    pub subject: String,
    pub group: Group,
    pub channel: String,
    pub stimulus: Stimulus,
    pub m: usize,
    pub level: u32,
    pub f1_s: f64,
    pub f2: f64,
    pub degenerate: bool,
}

/// Featurization parameters; defaults are the reference experiment values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub channels: Vec<String>,
    pub stimulus: Stimulus,
    pub m_grid: Vec<usize>,
    pub band: (f64, f64),
    pub w: f64,
    pub alpha_f: f64,
    pub level_step: u32,
    pub intervals: FeatureIntervals,
    pub convention: PenaltyConvention,
    /// F1 variant: minimum magnitude over nonzero entries.
    pub f1_absolute: bool,
    /// F2 variant: average over nonzero entries only.
    pub f2_nonzero_only: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            channels: vec!["CP1".into(), "CPz".into(), "CP2".into()],
            stimulus: Stimulus::Target,
            m_grid: vec![40],
            band: (1.0, 30.0),
            w: 0.55,
            alpha_f: 8e-4,
            level_step: 2,
            intervals: FeatureIntervals::default(),
            convention: PenaltyConvention::NormalizedByL,
            f1_absolute: false,
            f2_nonzero_only: false,
        }
    }
}

impl FeatureConfig {
    /// Sparsity levels that produce features (the 100% level is the all-zero
    /// solution and is excluded from feature use).
    pub fn feature_levels(&self) -> Vec<u32> {
        let mut out = Vec::new();
        let mut s = 100i64 - self.level_step as i64;
        while s >= 0 {
            out.push(s as u32);
            s -= self.level_step as i64;
        }
        out
    }
}

/// Full per-(channel, m, level) record of one decomposition, as written to
/// the VMS archive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionRecord {
    pub subject: String,
    pub group: Group,
    pub channel: String,
    pub stimulus: Stimulus,
    pub m: usize,
    pub level: u32,
    pub alpha: f64,
    pub degenerate: bool,
    pub extrapolated: bool,
    pub residual_norm: f64,
    pub vms: VmsDecomposition,
}

/// Per-knot path diagnostics for the optional solver dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathDump {
    pub subject: String,
    pub channel: String,
    pub m: usize,
    /// One row per knot: (alpha, support size, l1 norm, objective value).
    pub knots: Vec<(f64, usize, f64, f64)>,
}

/// Extract the (F1, F2) pair from a stored decomposition record; only the
/// intervals and variant flags of the config are consulted.
pub fn features_of_record(rec: &DecompositionRecord, cfg: &FeatureConfig) -> SdfVector {
    let (f1_s, f1_degenerate) = extract_f1(&rec.vms, cfg.intervals.i1, cfg.f1_absolute);
    let f2 = extract_f2(&rec.vms, cfg.intervals.i2, cfg.f2_nonzero_only);
    SdfVector {
        subject: rec.subject.clone(),
        group: rec.group,
        channel: rec.channel.clone(),
        stimulus: rec.stimulus,
        m: rec.m,
        level: rec.level,
        f1_s,
        f2,
        degenerate: rec.degenerate || f1_degenerate,
    }
}

/// Shared, immutable featurization state: one standardized regressor bundle
/// per bank size, reused across subjects and channels.
pub struct SdfPipeline {
    cfg: FeatureConfig,
    fs: f64,
    l: usize,
    bundles: Vec<(usize, RegressorBundle)>,
}

impl SdfPipeline {
    pub fn new(cfg: FeatureConfig, fs: f64, l: usize) -> Result<Self, FeatureError> {
        if cfg.m_grid.is_empty() {
            return Err(FeatureError::Config("m grid is empty".into()));
        }
        if cfg.channels.is_empty() {
            return Err(FeatureError::Config("channel list is empty".into()));
        }
        if cfg.level_step == 0 || cfg.level_step > 100 || 100 % cfg.level_step != 0 {
            return Err(FeatureError::Config(format!(
                "level step {} must divide 100",
                cfg.level_step
            )));
        }
        let horizon = l as f64 / fs;
        for iv in [cfg.intervals.i1, cfg.intervals.i2] {
            if !(iv.start_s >= 0.0 && iv.start_s < iv.end_s && iv.start_s < horizon) {
                return Err(FeatureError::BadInterval(iv.start_s, iv.end_s));
            }
        }
        let mut bundles = Vec::with_capacity(cfg.m_grid.len());
        for &m in &cfg.m_grid {
            let bank = build_bank(cfg.band.0, cfg.band.1, m, fs)?;
            let bundle = standardize(&build_phi(&bank, l)?, cfg.w)?;
            bundles.push((m, bundle));
        }
        Ok(Self {
            cfg,
            fs,
            l,
            bundles,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn bundle_for(&self, m: usize) -> Option<&RegressorBundle> {
        self.bundles.iter().find(|(mm, _)| *mm == m).map(|(_, b)| b)
    }

    fn check_erp(&self, erps: &ErpSet) -> Result<(), FeatureError> {
        if erps.fs != self.fs || erps.epoch_len() != self.l {
            return Err(FeatureError::Config(format!(
                "subject {}: fs/length ({}, {}) do not match pipeline ({}, {})",
                erps.subject,
                erps.fs,
                erps.epoch_len(),
                self.fs,
                self.l
            )));
        }
        Ok(())
    }

    /// Full decomposition records for one subject: one per
    /// (channel, m, sparsity level), the 100% level included.
    pub fn decompose_subject(
        &self,
        erps: &ErpSet,
    ) -> Result<Vec<DecompositionRecord>, FeatureError> {
        Ok(self.decompose_subject_full(erps, false)?.0)
    }

    /// As [`Self::decompose_subject`], optionally collecting per-knot path
    /// diagnostics.
    pub fn decompose_subject_full(
        &self,
        erps: &ErpSet,
        collect_paths: bool,
    ) -> Result<(Vec<DecompositionRecord>, Vec<PathDump>), FeatureError> {
        self.check_erp(erps)?;
        let mut dumps = Vec::new();
        let mut out = Vec::new();
        for channel in &self.cfg.channels {
            let ch = erps
                .channel_index(channel)
                .ok_or_else(|| FeatureError::UnknownChannel {
                    requested: channel.clone(),
                    available: erps.channel_names.clone(),
                })?;
            let y = erps
                .erp(self.cfg.stimulus, ch)
                .ok_or_else(|| {
                    FeatureError::MissingStimulus(self.cfg.stimulus, erps.subject.clone())
                })?;
            let y = y.to_vec();
            for (m, bundle) in &self.bundles {
                let design = bundle.design()?;
                let path = lars_path(
                    design,
                    &y,
                    LarsOptions {
                        convention: self.cfg.convention,
                        alpha_min: self.cfg.alpha_f,
                    },
                )?;
                if collect_paths {
                    dumps.push(PathDump {
                        subject: erps.subject.clone(),
                        channel: channel.clone(),
                        m: *m,
                        knots: path
                            .knots
                            .iter()
                            .map(|knot| {
                                (
                                    knot.alpha,
                                    knot.beta.nnz(),
                                    knot.beta.l1_norm(),
                                    crate::solver::objective(
                                        design,
                                        &y,
                                        &knot.beta,
                                        knot.intercept,
                                        knot.alpha,
                                        self.cfg.convention,
                                    ),
                                )
                            })
                            .collect(),
                    });
                }
                let slices = slice_path(&path, self.cfg.alpha_f, self.cfg.level_step)?;
                if slices.len() == 1 && slices[0].degenerate {
                    // flat response: emit explicitly degenerate records
                    let ybar = y.iter().sum::<f64>() / y.len() as f64;
                    let residual =
                        y.iter().map(|v| (v - ybar) * (v - ybar)).sum::<f64>().sqrt();
                    let mut s = 100i64;
                    while s >= 0 {
                        out.push(DecompositionRecord {
                            subject: erps.subject.clone(),
                            group: erps.group,
                            channel: channel.clone(),
                            stimulus: self.cfg.stimulus,
                            m: *m,
                            level: s as u32,
                            alpha: slices[0].alpha,
                            degenerate: true,
                            extrapolated: false,
                            residual_norm: residual,
                            vms: VmsDecomposition {
                                m: *m,
                                l: self.l,
                                fs: self.fs,
                                intercept: ybar,
                                x0: vec![0.0; 2 * m],
                                u: Vec::new(),
                                yhat_x0: vec![0.0; self.l],
                                yhat_u: vec![0.0; self.l],
                            },
                        });
                        s -= self.cfg.level_step as i64;
                    }
                    continue;
                }
                for slice in slices {
                    let done = crate::solver::debias_refit(&slice, bundle, &y)?;
                    let fit = done.debiased.as_ref().unwrap();
                    let residual_norm = fit.residual_norm;
                    let vms = decompose(&done, bundle)?;
                    out.push(DecompositionRecord {
                        subject: erps.subject.clone(),
                        group: erps.group,
                        channel: channel.clone(),
                        stimulus: self.cfg.stimulus,
                        m: *m,
                        level: done.level,
                        alpha: done.alpha,
                        degenerate: done.degenerate,
                        extrapolated: done.extrapolated,
                        residual_norm,
                        vms,
                    });
                }
            }
        }
        Ok((out, dumps))
    }

    /// Extract one feature vector from a decomposition record.
    pub fn features_of(&self, rec: &DecompositionRecord) -> SdfVector {
        features_of_record(rec, &self.cfg)
    }

    /// Features for one subject: one [`SdfVector`] per
    /// (channel, m, sparsity level below 100%).
    pub fn featurize(&self, erps: &ErpSet) -> Result<Vec<SdfVector>, FeatureError> {
        let records = self.decompose_subject(erps)?;
        Ok(records
            .iter()
            .filter(|r| r.level < 100)
            .map(|r| self.features_of(r))
            .collect())
    }
}

/// One-shot featurization of a single subject (builds the pipeline
/// internally; batch callers should share an [`SdfPipeline`]).
pub fn featurize(erps: &ErpSet, cfg: &FeatureConfig) -> Result<Vec<SdfVector>, FeatureError> {
    let pipeline = SdfPipeline::new(cfg.clone(), erps.fs, erps.epoch_len())?;
    pipeline.featurize(erps)
}
