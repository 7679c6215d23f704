//! Nested leave-one-out cross-validation with inner hyperparameter selection,
//! repeated stratified K-fold, permutation testing, and metric computation.
//!
//! Features are precomputed once per subject and reused across folds; this is
//! exact because featurization is per-subject and label-free. The outer loop
//! holds subjects out; the inner loop is always LOOCV over the learning set
//! and selects the `(m, sparsity level)` cell per channel by a smoothed
//! validation-accuracy rule. Every fold record carries its learning-set ids
//! so the leakage guard can be re-checked after the fact.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{lda_fit, vote, ClassifyError, COV_EIG_FLOOR, COV_REG_EPS};
use crate::features::SdfVector;
use crate::signal::{Group, Stimulus};

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("need both classes with at least {need} subjects each; got PD={pd}, CTL={ctl}")]
    TooFewSubjects { need: usize, pd: usize, ctl: usize },
    #[error("feature table inconsistent: {0}")]
    BadTable(String),
    #[error("voting needs an odd channel count, got {0}")]
    EvenChannels(usize),
    #[error("K = {k} folds exceed the smallest class size {min_class}")]
    BadK { k: usize, min_class: usize },
    #[error("no predictions to score")]
    NoPredictions,
    #[error("leakage guard violated: held-out {0} present in inner training set")]
    Leakage(String),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}

/// Deterministic per-task RNG stream derived from `(seed, task index)`;
/// parallel and serial runs agree bit-exactly.
pub fn task_rng(seed: u64, task: u64) -> ChaCha8Rng {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ task.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

/// Per-subject features over the `(channel, m, level)` grid.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub subjects: Vec<String>,
    pub groups: Vec<Group>,
    pub channels: Vec<String>,
    pub m_grid: Vec<usize>,
    /// Sparsity levels in descending order (100% excluded).
    pub levels: Vec<u32>,
    pub stimulus: Stimulus,
    /// Flattened `[subject][channel][cell][2]`.
    data: Vec<f64>,
}

impl FeatureTable {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_cells(&self) -> usize {
        self.m_grid.len() * self.levels.len()
    }

    pub fn cell_index(&self, m_idx: usize, level_idx: usize) -> usize {
        m_idx * self.levels.len() + level_idx
    }

    pub fn cell_params(&self, cell: usize) -> (usize, u32) {
        (
            self.m_grid[cell / self.levels.len()],
            self.levels[cell % self.levels.len()],
        )
    }

    pub fn feature(&self, subject: usize, channel: usize, cell: usize) -> [f64; 2] {
        let idx = ((subject * self.channels.len() + channel) * self.n_cells() + cell) * 2;
        [self.data[idx], self.data[idx + 1]]
    }

    /// Same features under a different label assignment (permutation runs).
    pub fn with_groups(&self, groups: Vec<Group>) -> Self {
        assert_eq!(groups.len(), self.groups.len());
        Self {
            groups,
            ..self.clone()
        }
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pd = self.groups.iter().filter(|g| **g == Group::Pd).count();
        (pd, self.groups.len() - pd)
    }

    /// Assemble a table from per-subject feature vectors. The grid
    /// (channels, m values, levels) is inferred and every cell must be
    /// present exactly once per subject.
    pub fn from_sdf_vectors(vectors: &[SdfVector]) -> Result<Self, EvalError> {
        if vectors.is_empty() {
            return Err(EvalError::BadTable("no feature vectors".into()));
        }
        let stimulus = vectors[0].stimulus;
        let mut subjects: Vec<String> = Vec::new();
        let mut groups: Vec<Group> = Vec::new();
        let mut channels: Vec<String> = Vec::new();
        let mut m_grid: Vec<usize> = Vec::new();
        let mut levels: Vec<u32> = Vec::new();
        for v in vectors {
            if v.stimulus != stimulus {
                return Err(EvalError::BadTable(format!(
                    "mixed stimuli {} and {}",
                    stimulus, v.stimulus
                )));
            }
            match subjects.iter().position(|s| *s == v.subject) {
                Some(i) => {
                    if groups[i] != v.group {
                        return Err(EvalError::BadTable(format!(
                            "subject {} appears with two groups",
                            v.subject
                        )));
                    }
                }
                None => {
                    subjects.push(v.subject.clone());
                    groups.push(v.group);
                }
            }
            if !channels.contains(&v.channel) {
                channels.push(v.channel.clone());
            }
            if !m_grid.contains(&v.m) {
                m_grid.push(v.m);
            }
            if !levels.contains(&v.level) {
                levels.push(v.level);
            }
        }
        m_grid.sort_unstable();
        levels.sort_unstable_by(|a, b| b.cmp(a));
        let n_cells = m_grid.len() * levels.len();
        let mut data = vec![f64::NAN; subjects.len() * channels.len() * n_cells * 2];
        let mut seen = vec![false; subjects.len() * channels.len() * n_cells];
        for v in vectors {
            let s = subjects.iter().position(|x| *x == v.subject).unwrap();
            let c = channels.iter().position(|x| *x == v.channel).unwrap();
            let m_idx = m_grid.iter().position(|x| *x == v.m).unwrap();
            let l_idx = levels.iter().position(|x| *x == v.level).unwrap();
            let cell = m_idx * levels.len() + l_idx;
            let flat = (s * channels.len() + c) * n_cells + cell;
            if seen[flat] {
                return Err(EvalError::BadTable(format!(
                    "duplicate cell for subject {}, channel {}, m {}, level {}",
                    v.subject, v.channel, v.m, v.level
                )));
            }
            seen[flat] = true;
            data[flat * 2] = v.f1_s;
            data[flat * 2 + 1] = v.f2;
        }
        if let Some(flat) = seen.iter().position(|s| !s) {
            let s = flat / (channels.len() * n_cells);
            return Err(EvalError::BadTable(format!(
                "missing feature cell for subject {}",
                subjects[s]
            )));
        }
        Ok(Self {
            subjects,
            groups,
            channels,
            m_grid,
            levels,
            stimulus,
            data,
        })
    }
}

/// Confusion counts and derived rates, with PD as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Confusion counts over `(predicted, truth)` pairs.
pub fn compute_metrics(predictions: &[(Group, Group)]) -> Result<Metrics, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::NoPredictions);
    }
    let mut tp = 0;
    let mut fn_ = 0;
    let mut fp = 0;
    let mut tn = 0;
    for (pred, truth) in predictions {
        match (truth, pred) {
            (Group::Pd, Group::Pd) => tp += 1,
            (Group::Pd, Group::Ctl) => fn_ += 1,
            (Group::Ctl, Group::Pd) => fp += 1,
            (Group::Ctl, Group::Ctl) => tn += 1,
        }
    }
    let total = (tp + fn_ + fp + tn) as f64;
    Ok(Metrics {
        tp,
        fn_,
        fp,
        tn,
        accuracy: (tp + tn) as f64 / total,
        sensitivity: if tp + fn_ > 0 {
            tp as f64 / (tp + fn_) as f64
        } else {
            f64::NAN
        },
        specificity: if tn + fp > 0 {
            tn as f64 / (tn + fp) as f64
        } else {
            f64::NAN
        },
    })
}

/// Pick the level maximizing the 3-point moving average of the validation
/// accuracy (window shrinks at the grid edges). Ties break to the higher raw
/// accuracy, then to the level closest to the grid median, then to grid
/// order. Returns the index into `levels`.
pub fn select_level(levels: &[u32], accuracy: &[f64]) -> usize {
    select_from_curves(&[0], levels, &[accuracy.to_vec()]).1
}

/// Generalization of [`select_level`] over an `(m, level)` grid; smoothing
/// runs along levels within each m. Returns `(m index, level index)`.
pub fn select_from_curves(
    m_grid: &[usize],
    levels: &[u32],
    curves: &[Vec<f64>],
) -> (usize, usize) {
    let median = {
        let mut sorted: Vec<u32> = levels.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
        }
    };
    let mut best: Option<(usize, usize, f64, f64, f64)> = None;
    for (m_idx, curve) in curves.iter().enumerate() {
        debug_assert_eq!(curve.len(), levels.len());
        for i in 0..levels.len() {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(levels.len() - 1);
            let smoothed = curve[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
            let raw = curve[i];
            let dist = (levels[i] as f64 - median).abs();
            let better = match &best {
                None => true,
                Some((_, _, bs, br, bd)) => {
                    smoothed > *bs
                        || (smoothed == *bs && (raw > *br || (raw == *br && dist < *bd)))
                }
            };
            if better {
                best = Some((m_idx, i, smoothed, raw, dist));
            }
        }
    }
    let (m_idx, level_idx, ..) = best.expect("non-empty grid");
    let _ = m_grid;
    (m_idx, level_idx)
}

/// Leave-one-out accuracy of the pooled-covariance LDA on 2-D points,
/// computed by downdating class sufficient statistics. Matches a naive
/// refit-per-fold loop; folds whose training set degenerates (a class with
/// fewer than two remaining points) count as incorrect.
pub fn loocv_accuracy(points: &[([f64; 2], Group)]) -> f64 {
    let n = points.len();
    if n < 3 {
        return 0.0;
    }
    let mut count = [0usize; 2];
    let mut sum = [[0.0f64; 2]; 2];
    let mut sq = [[0.0f64; 3]; 2]; // xx, xy, yy per class
    for (x, g) in points {
        let c = if *g == Group::Pd { 0 } else { 1 };
        count[c] += 1;
        sum[c][0] += x[0];
        sum[c][1] += x[1];
        sq[c][0] += x[0] * x[0];
        sq[c][1] += x[0] * x[1];
        sq[c][2] += x[1] * x[1];
    }
    let mut correct = 0usize;
    for (x, g) in points {
        let held = if *g == Group::Pd { 0 } else { 1 };
        let mut cnt = count;
        let mut s = sum;
        let mut q = sq;
        cnt[held] -= 1;
        s[held][0] -= x[0];
        s[held][1] -= x[1];
        q[held][0] -= x[0] * x[0];
        q[held][1] -= x[0] * x[1];
        q[held][2] -= x[1] * x[1];
        if cnt[0] < 2 || cnt[1] < 2 {
            continue; // degenerate inner fit counts as a miss
        }
        let n_tot = (cnt[0] + cnt[1]) as f64;
        let mu = [
            [s[0][0] / cnt[0] as f64, s[0][1] / cnt[0] as f64],
            [s[1][0] / cnt[1] as f64, s[1][1] / cnt[1] as f64],
        ];
        let mut cov = [[0.0f64; 2]; 2];
        for c in 0..2 {
            let nc = cnt[c] as f64;
            cov[0][0] += q[c][0] - nc * mu[c][0] * mu[c][0];
            cov[0][1] += q[c][1] - nc * mu[c][0] * mu[c][1];
            cov[1][1] += q[c][2] - nc * mu[c][1] * mu[c][1];
        }
        cov[0][0] /= n_tot;
        cov[0][1] /= n_tot;
        cov[1][1] /= n_tot;
        cov[1][0] = cov[0][1];
        let trace = cov[0][0] + cov[1][1];
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let disc = (trace * trace / 4.0 - det).max(0.0).sqrt();
        if trace / 2.0 - disc < COV_EIG_FLOOR * trace.max(f64::MIN_POSITIVE) {
            let ridge = COV_REG_EPS * (trace / 2.0).max(f64::MIN_POSITIVE);
            cov[0][0] += ridge;
            cov[1][1] += ridge;
        }
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let diff = [mu[0][0] - mu[1][0], mu[0][1] - mu[1][1]];
        let w = [
            (cov[1][1] * diff[0] - cov[0][1] * diff[1]) / det,
            (-cov[1][0] * diff[0] + cov[0][0] * diff[1]) / det,
        ];
        let mid = [(mu[0][0] + mu[1][0]) / 2.0, (mu[0][1] + mu[1][1]) / 2.0];
        let bias = -(w[0] * mid[0] + w[1] * mid[1])
            + (cnt[0] as f64 / n_tot).ln()
            - (cnt[1] as f64 / n_tot).ln();
        let score = w[0] * x[0] + w[1] * x[1] + bias;
        let pred = if score >= 0.0 { Group::Pd } else { Group::Ctl };
        if pred == *g {
            correct += 1;
        }
    }
    correct as f64 / n as f64
}

/// Hyperparameters selected for one channel in one fold, with the resulting
/// per-subject predictions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSelection {
    pub channel: String,
    pub m: usize,
    pub level: u32,
    pub validation_accuracy: f64,
    /// (subject id, predicted label) for the held-out subjects.
    pub predictions: Vec<(String, Group)>,
}

/// One outer fold: held-out subjects, learning-set ids (the leakage guard),
/// per-channel selections, and the final voted predictions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldRecord {
    pub held_out: Vec<String>,
    pub inner_subjects: Vec<String>,
    pub per_channel: Vec<ChannelSelection>,
    pub predicted: Vec<(String, Group)>,
    pub truth: Vec<(String, Group)>,
}

/// Cross-validation report: per-fold records, aggregate metrics, and mean
/// validation-accuracy curves per channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub channels: Vec<String>,
    pub m_grid: Vec<usize>,
    pub levels: Vec<u32>,
    pub folds: Vec<FoldRecord>,
    pub metrics: Metrics,
    pub per_channel_metrics: Vec<(String, Metrics)>,
    /// Mean inner-loop accuracy per channel per cell (m-major, level-minor).
    pub validation_curves: Vec<Vec<f64>>,
}

struct SplitOutcome {
    selections: Vec<ChannelSelection>,
    voted: Vec<(usize, Group)>,
    curves: Vec<Vec<f64>>,
    train_accuracy: f64,
    validation_accuracy: f64,
}

fn channel_points(table: &FeatureTable, ids: &[usize], channel: usize, cell: usize) -> Vec<([f64; 2], Group)> {
    ids.iter()
        .map(|&s| (table.feature(s, channel, cell), table.groups[s]))
        .collect()
}

/// Select hyperparameters on `learn` by inner LOOCV, refit, and predict
/// `test`. The leakage guard rejects any overlap.
fn evaluate_split(
    table: &FeatureTable,
    learn: &[usize],
    test: &[usize],
) -> Result<SplitOutcome, EvalError> {
    for &t in test {
        if learn.contains(&t) {
            return Err(EvalError::Leakage(table.subjects[t].clone()));
        }
    }
    let n_channels = table.channels.len();
    let n_levels = table.levels.len();
    let mut selections = Vec::with_capacity(n_channels);
    let mut curves = Vec::with_capacity(n_channels);
    let mut per_channel_test: Vec<Vec<Group>> = Vec::with_capacity(n_channels);
    let mut per_channel_train: Vec<Vec<Group>> = Vec::with_capacity(n_channels);
    let mut val_sum = 0.0;
    for c in 0..n_channels {
        // inner LOOCV accuracy per grid cell
        let mut per_m: Vec<Vec<f64>> = Vec::with_capacity(table.m_grid.len());
        for m_idx in 0..table.m_grid.len() {
            let mut curve = Vec::with_capacity(n_levels);
            for l_idx in 0..n_levels {
                let cell = table.cell_index(m_idx, l_idx);
                curve.push(loocv_accuracy(&channel_points(table, learn, c, cell)));
            }
            per_m.push(curve);
        }
        let (m_idx, l_idx) = select_from_curves(&table.m_grid, &table.levels, &per_m);
        let cell = table.cell_index(m_idx, l_idx);
        let val_acc = per_m[m_idx][l_idx];
        val_sum += val_acc;
        // retrain on the full learning set
        let model = lda_fit(&channel_points(table, learn, c, cell))?;
        let mut preds = Vec::with_capacity(test.len());
        let mut labels = Vec::with_capacity(test.len());
        for &t in test {
            let (label, _) = model.predict(table.feature(t, c, cell))?;
            preds.push((table.subjects[t].clone(), label));
            labels.push(label);
        }
        per_channel_test.push(labels);
        per_channel_train.push(
            learn
                .iter()
                .map(|&s| model.predict(table.feature(s, c, cell)).map(|(l, _)| l))
                .collect::<Result<_, _>>()?,
        );
        selections.push(ChannelSelection {
            channel: table.channels[c].clone(),
            m: table.m_grid[m_idx],
            level: table.levels[l_idx],
            validation_accuracy: val_acc,
            predictions: preds,
        });
        curves.push(per_m.into_iter().flatten().collect());
    }
    // majority vote across channels per subject
    let mut voted = Vec::with_capacity(test.len());
    for (i, &t) in test.iter().enumerate() {
        let labels: Vec<Group> = per_channel_test.iter().map(|ch| ch[i]).collect();
        voted.push((t, vote(&labels)?));
    }
    let mut train_correct = 0usize;
    for (i, &s) in learn.iter().enumerate() {
        let labels: Vec<Group> = per_channel_train.iter().map(|ch| ch[i]).collect();
        if vote(&labels)? == table.groups[s] {
            train_correct += 1;
        }
    }
    Ok(SplitOutcome {
        selections,
        voted,
        curves,
        train_accuracy: train_correct as f64 / learn.len() as f64,
        validation_accuracy: val_sum / n_channels as f64,
    })
}

fn validate_table(table: &FeatureTable, need_per_class: usize) -> Result<(), EvalError> {
    if table.n_cells() == 0 || table.channels.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if table.channels.len() % 2 == 0 {
        return Err(EvalError::EvenChannels(table.channels.len()));
    }
    let (pd, ctl) = table.class_counts();
    if pd < need_per_class || ctl < need_per_class {
        return Err(EvalError::TooFewSubjects {
            need: need_per_class,
            pd,
            ctl,
        });
    }
    Ok(())
}

/// Nested leave-one-out cross-validation: every subject is held out once;
/// hyperparameters are selected by inner LOOCV over the remaining subjects.
pub fn nested_loocv(table: &FeatureTable) -> Result<CvReport, EvalError> {
    validate_table(table, 3)?;
    let n = table.n_subjects();
    let folds: Vec<(FoldRecord, Vec<Vec<f64>>)> = (0..n)
        .into_par_iter()
        .map(|held| {
            let learn: Vec<usize> = (0..n).filter(|&s| s != held).collect();
            let outcome = evaluate_split(table, &learn, &[held])?;
            let record = FoldRecord {
                held_out: vec![table.subjects[held].clone()],
                inner_subjects: learn.iter().map(|&s| table.subjects[s].clone()).collect(),
                per_channel: outcome.selections,
                predicted: outcome
                    .voted
                    .iter()
                    .map(|(t, g)| (table.subjects[*t].clone(), *g))
                    .collect(),
                truth: vec![(table.subjects[held].clone(), table.groups[held])],
            };
            Ok((record, outcome.curves))
        })
        .collect::<Result<_, EvalError>>()?;

    let mut predictions = Vec::with_capacity(n);
    let mut per_channel_preds: Vec<Vec<(Group, Group)>> =
        vec![Vec::with_capacity(n); table.channels.len()];
    let mut curve_sums = vec![vec![0.0; table.n_cells()]; table.channels.len()];
    for (fold, curves) in &folds {
        for ((_, pred), (_, truth)) in fold.predicted.iter().zip(&fold.truth) {
            predictions.push((*pred, *truth));
        }
        for (c, sel) in fold.per_channel.iter().enumerate() {
            for ((_, pred), (_, truth)) in sel.predictions.iter().zip(&fold.truth) {
                per_channel_preds[c].push((*pred, *truth));
            }
        }
        for (c, curve) in curves.iter().enumerate() {
            for (acc, v) in curve_sums[c].iter_mut().zip(curve) {
                *acc += v;
            }
        }
    }
    let metrics = compute_metrics(&predictions)?;
    let per_channel_metrics = table
        .channels
        .iter()
        .zip(&per_channel_preds)
        .map(|(name, preds)| Ok((name.clone(), compute_metrics(preds)?)))
        .collect::<Result<_, EvalError>>()?;
    for sums in curve_sums.iter_mut() {
        for v in sums.iter_mut() {
            *v /= folds.len() as f64;
        }
    }
    Ok(CvReport {
        channels: table.channels.clone(),
        m_grid: table.m_grid.clone(),
        levels: table.levels.clone(),
        folds: folds.into_iter().map(|(f, _)| f).collect(),
        metrics,
        per_channel_metrics,
        validation_curves: curve_sums,
    })
}

/// Stratified K-fold assignment: per-class shuffle, then round-robin deal.
/// Class balance within each fold is preserved to within one subject.
pub fn stratified_kfold(groups: &[Group], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut folds = vec![Vec::new(); k];
    for class in [Group::Pd, Group::Ctl] {
        let mut ids: Vec<usize> = groups
            .iter()
            .enumerate()
            .filter(|(_, g)| **g == class)
            .map(|(i, _)| i)
            .collect();
        ids.shuffle(rng);
        for (i, id) in ids.into_iter().enumerate() {
            folds[i % k].push(id);
        }
    }
    for fold in folds.iter_mut() {
        fold.sort_unstable();
    }
    folds
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SetSummary {
    pub mean: f64,
    pub std: f64,
    /// 5th percentile (linear interpolation on the sorted values).
    pub p5: f64,
}

fn summarize(values: &[f64]) -> SetSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = 0.05 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let p5 = if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    };
    SetSummary { mean, std, p5 }
}

/// Accuracy summaries over repeated stratified K-fold runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PercentileSummary {
    pub k: usize,
    pub repeats: usize,
    pub train: SetSummary,
    pub validation: SetSummary,
    pub test: SetSummary,
    pub test_accuracies: Vec<f64>,
}

/// Repeated stratified K-fold with the inner loop kept LOOCV. Deterministic
/// under a fixed seed regardless of thread count.
pub fn repeated_kfold(
    table: &FeatureTable,
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<PercentileSummary, EvalError> {
    validate_table(table, 3)?;
    let (pd, ctl) = table.class_counts();
    let min_class = pd.min(ctl);
    if k < 2 || k > min_class {
        return Err(EvalError::BadK { k, min_class });
    }
    let n = table.n_subjects();
    let per_rep: Vec<(f64, f64, f64)> = (0..repeats)
        .into_par_iter()
        .map(|rep| {
            let mut rng = task_rng(seed, rep as u64);
            let folds = stratified_kfold(&table.groups, k, &mut rng);
            let mut correct = 0usize;
            let mut train_sum = 0.0;
            let mut val_sum = 0.0;
            for fold in &folds {
                let learn: Vec<usize> = (0..n).filter(|s| !fold.contains(s)).collect();
                let outcome = evaluate_split(table, &learn, fold)?;
                for (t, pred) in &outcome.voted {
                    if *pred == table.groups[*t] {
                        correct += 1;
                    }
                }
                train_sum += outcome.train_accuracy;
                val_sum += outcome.validation_accuracy;
            }
            Ok((
                correct as f64 / n as f64,
                train_sum / k as f64,
                val_sum / k as f64,
            ))
        })
        .collect::<Result<_, EvalError>>()?;
    let test: Vec<f64> = per_rep.iter().map(|r| r.0).collect();
    let train: Vec<f64> = per_rep.iter().map(|r| r.1).collect();
    let val: Vec<f64> = per_rep.iter().map(|r| r.2).collect();
    Ok(PercentileSummary {
        k,
        repeats,
        train: summarize(&train),
        validation: summarize(&val),
        test: summarize(&test),
        test_accuracies: test,
    })
}

/// Empirical permutation p-value with the `>=` convention:
/// `(1 + #{null >= observed}) / (n + 1)`.
pub fn empirical_p(observed: f64, null: &[f64]) -> f64 {
    let exceed = null.iter().filter(|v| **v >= observed).count();
    (1 + exceed) as f64 / (null.len() + 1) as f64
}

/// Complementary error function (rational approximation, ~1.2e-7 absolute
/// accuracy), used for the Gaussian-fit p-value.
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398
                                + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277))))))));
    let ans = t * poly.exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Permutation-test report. The statistic is the nested-LOOCV accuracy with
/// the full hyperparameter selection re-run inside every permutation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PermutationReport {
    pub n: usize,
    pub observed: f64,
    pub null: Vec<f64>,
    pub p_empirical: f64,
    /// p under a normal fit of the null (reported alongside; the empirical
    /// value is the primary number).
    pub p_gaussian: f64,
}

/// Label-permutation test of the nested-LOOCV accuracy.
pub fn permutation_test(
    table: &FeatureTable,
    n: usize,
    seed: u64,
) -> Result<PermutationReport, EvalError> {
    let observed = nested_loocv(table)?.metrics.accuracy;
    let null: Vec<f64> = (1..=n)
        .into_par_iter()
        .map(|t| {
            let mut rng = task_rng(seed, t as u64);
            let mut groups = table.groups.clone();
            groups.shuffle(&mut rng);
            Ok(nested_loocv(&table.with_groups(groups))?.metrics.accuracy)
        })
        .collect::<Result<_, EvalError>>()?;
    let p_empirical = empirical_p(observed, &null);
    let mu = null.iter().sum::<f64>() / null.len() as f64;
    let sd = if null.len() > 1 {
        (null.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (null.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let p_gaussian = if sd > 1e-12 {
        0.5 * erfc((observed - mu) / (sd * std::f64::consts::SQRT_2))
    } else if observed > mu {
        0.0
    } else {
        1.0
    };
    Ok(PermutationReport {
        n,
        observed,
        null,
        p_empirical,
        p_gaussian,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Synthetic table: one informative level separates the classes by
    /// `sep` standard deviations; all other cells are pure noise.
    fn synthetic_table(
        n_per_class: usize,
        channels: usize,
        levels: usize,
        informative: Option<usize>,
        sep: f64,
        seed: u64,
    ) -> FeatureTable {
        let mut rng = task_rng(seed, 999);
        let mut subjects = Vec::new();
        let mut groups = Vec::new();
        for i in 0..2 * n_per_class {
            subjects.push(format!("s{i:02}"));
            groups.push(if i % 2 == 0 { Group::Pd } else { Group::Ctl });
        }
        let channel_names: Vec<String> = (0..channels).map(|c| format!("C{c}")).collect();
        let level_grid: Vec<u32> = (0..levels).map(|i| (100 - 10 * (i + 1)) as u32).collect();
        let n_cells = levels;
        let mut data = Vec::new();
        for s in 0..2 * n_per_class {
            for _c in 0..channels {
                for cell in 0..n_cells {
                    // informative cells form a plateau of three adjacent
                    // levels; the smoothed selection rule rejects isolated
                    // single-level spikes by design
                    let offset = match informative {
                        Some(inf) if cell.abs_diff(inf) <= 1 => {
                            if groups[s] == Group::Pd {
                                sep
                            } else {
                                -sep
                            }
                        }
                        _ => 0.0,
                    };
                    data.push(offset + rng.random_range(-0.5..0.5));
                    data.push(offset + rng.random_range(-0.5..0.5));
                }
            }
        }
        FeatureTable {
            subjects,
            groups,
            channels: channel_names,
            m_grid: vec![40],
            levels: level_grid,
            stimulus: Stimulus::Target,
            data,
        }
    }

    #[test]
    fn metrics_reproduce_reference_confusion() {
        let mut preds = Vec::new();
        for _ in 0..24 {
            preds.push((Group::Pd, Group::Pd));
        }
        preds.push((Group::Ctl, Group::Pd)); // FN
        for _ in 0..2 {
            preds.push((Group::Pd, Group::Ctl)); // FP
        }
        for _ in 0..23 {
            preds.push((Group::Ctl, Group::Ctl));
        }
        let m = compute_metrics(&preds).unwrap();
        assert_eq!((m.tp, m.fn_, m.fp, m.tn), (24, 1, 2, 23));
        assert_eq!(m.accuracy, 0.94);
        assert_eq!(m.sensitivity, 0.96);
        assert_eq!(m.specificity, 0.92);
    }

    #[test]
    fn metrics_all_correct() {
        let preds = vec![(Group::Pd, Group::Pd), (Group::Ctl, Group::Ctl)];
        let m = compute_metrics(&preds).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.sensitivity, 1.0);
        assert_eq!(m.specificity, 1.0);
    }

    #[test]
    fn metrics_match_direct_count() {
        let mut rng = task_rng(7, 1);
        let preds: Vec<(Group, Group)> = (0..101)
            .map(|_| {
                let flip = |b: bool| if b { Group::Pd } else { Group::Ctl };
                (flip(rng.random_bool(0.5)), flip(rng.random_bool(0.5)))
            })
            .collect();
        let m = compute_metrics(&preds).unwrap();
        let correct = preds.iter().filter(|(p, t)| p == t).count();
        assert_eq!(m.accuracy, correct as f64 / 101.0);
        assert_eq!(m.tp + m.fn_ + m.fp + m.tn, 101);
    }

    #[test]
    fn metrics_require_predictions() {
        assert!(matches!(
            compute_metrics(&[]),
            Err(EvalError::NoPredictions)
        ));
    }

    #[test]
    fn smoothed_selection_prefers_plateau_over_spike() {
        let levels: Vec<u32> = vec![90, 80, 70, 60, 50, 40, 30, 20, 10, 0];
        let acc = vec![0.50, 0.60, 0.95, 0.55, 0.50, 0.50, 0.88, 0.90, 0.88, 0.50];
        let idx = select_level(&levels, &acc);
        assert_eq!(levels[idx], 20, "plateau center must win (88.67 > 70)");
    }

    #[test]
    fn flat_curve_selects_median_level() {
        let levels = vec![80, 60, 40, 20, 0];
        let acc = vec![0.8; 5];
        let idx = select_level(&levels, &acc);
        assert_eq!(levels[idx], 40);
    }

    #[test]
    fn single_level_grid_selects_it() {
        assert_eq!(select_level(&[42], &[0.5]), 0);
    }

    #[test]
    fn loocv_accuracy_matches_naive_refit_loop() {
        let mut rng = task_rng(11, 3);
        for _ in 0..20 {
            let n = rng.random_range(6..24);
            let points: Vec<([f64; 2], Group)> = (0..n)
                .map(|i| {
                    let g = if i % 2 == 0 { Group::Pd } else { Group::Ctl };
                    let off = if g == Group::Pd { 0.6 } else { -0.6 };
                    (
                        [
                            off + rng.random_range(-1.0..1.0),
                            off + rng.random_range(-1.0..1.0),
                        ],
                        g,
                    )
                })
                .collect();
            let fast = loocv_accuracy(&points);
            let mut correct = 0usize;
            for held in 0..points.len() {
                let train: Vec<([f64; 2], Group)> = points
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != held)
                    .map(|(_, p)| *p)
                    .collect();
                match lda_fit(&train) {
                    Ok(model) => {
                        if model.predict(points[held].0).unwrap().0 == points[held].1 {
                            correct += 1;
                        }
                    }
                    Err(_) => {}
                }
            }
            let naive = correct as f64 / points.len() as f64;
            assert_eq!(fast, naive, "downdated LOOCV disagrees with refit loop");
        }
    }

    #[test]
    fn nested_loocv_structure_and_leakage_guard() {
        let table = synthetic_table(8, 1, 5, Some(2), 4.0, 5);
        let report = nested_loocv(&table).unwrap();
        assert_eq!(report.folds.len(), 16);
        for fold in &report.folds {
            assert_eq!(fold.inner_subjects.len(), 15);
            for held in &fold.held_out {
                assert!(!fold.inner_subjects.contains(held), "leakage: {held}");
            }
        }
        assert_eq!(report.metrics.accuracy, 1.0, "separable case");
        // the informative level is selected in every fold
        for fold in &report.folds {
            assert_eq!(fold.per_channel[0].level, table.levels[2]);
        }
    }

    #[test]
    fn nested_loocv_on_noise_stays_in_chance_band() {
        let table = synthetic_table(25, 1, 5, None, 0.0, 17);
        let report = nested_loocv(&table).unwrap();
        assert!(
            (0.3..=0.7).contains(&report.metrics.accuracy),
            "noise accuracy {}",
            report.metrics.accuracy
        );
    }

    #[test]
    fn loocv_prediction_invariant_to_subject_order() {
        let table = synthetic_table(6, 1, 4, Some(1), 1.0, 23);
        let report = nested_loocv(&table).unwrap();
        // rotate the subject order and re-evaluate
        let n = table.n_subjects();
        let perm: Vec<usize> = (0..n).map(|i| (i + 5) % n).collect();
        let mut subjects = Vec::new();
        let mut groups = Vec::new();
        let mut data = Vec::new();
        for &p in &perm {
            subjects.push(table.subjects[p].clone());
            groups.push(table.groups[p]);
            for c in 0..table.channels.len() {
                for cell in 0..table.n_cells() {
                    let f = table.feature(p, c, cell);
                    data.push(f[0]);
                    data.push(f[1]);
                }
            }
        }
        let permuted = FeatureTable {
            subjects,
            groups,
            channels: table.channels.clone(),
            m_grid: table.m_grid.clone(),
            levels: table.levels.clone(),
            stimulus: table.stimulus,
            data,
        };
        let report2 = nested_loocv(&permuted).unwrap();
        for fold in &report.folds {
            let id = &fold.held_out[0];
            let other = report2
                .folds
                .iter()
                .find(|f| &f.held_out[0] == id)
                .unwrap();
            assert_eq!(fold.predicted[0].1, other.predicted[0].1, "subject {id}");
        }
    }

    #[test]
    fn voting_requires_odd_channels() {
        let table = synthetic_table(4, 2, 3, Some(0), 2.0, 2);
        assert!(matches!(
            nested_loocv(&table),
            Err(EvalError::EvenChannels(2))
        ));
    }

    #[test]
    fn three_channel_voting_produces_per_channel_metrics() {
        let table = synthetic_table(6, 3, 4, Some(1), 3.0, 29);
        let report = nested_loocv(&table).unwrap();
        assert_eq!(report.per_channel_metrics.len(), 3);
        assert_eq!(report.metrics.accuracy, 1.0);
        for (_, m) in &report.per_channel_metrics {
            assert!(m.accuracy > 0.9);
        }
    }

    #[test]
    fn stratified_folds_balanced_within_one() {
        let mut rng = task_rng(3, 0);
        let groups: Vec<Group> = (0..50)
            .map(|i| if i < 25 { Group::Pd } else { Group::Ctl })
            .collect();
        let folds = stratified_kfold(&groups, 5, &mut rng);
        assert_eq!(folds.len(), 5);
        for fold in &folds {
            assert_eq!(fold.len(), 10);
            let pd = fold.iter().filter(|&&i| groups[i] == Group::Pd).count();
            assert_eq!(pd, 5, "balanced 5/5 per fold");
        }
        // covers every subject exactly once
        let mut all: Vec<usize> = folds.iter().flatten().cloned().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn repeated_kfold_learning_and_test_sizes() {
        let table = synthetic_table(25, 1, 4, Some(1), 3.0, 31);
        let summary = repeated_kfold(&table, 5, 3, 7).unwrap();
        assert_eq!(summary.k, 5);
        assert_eq!(summary.repeats, 3);
        // separable features: every repetition classifies everyone correctly
        assert_eq!(summary.test.p5, 1.0);
        assert_eq!(summary.test.mean, 1.0);
    }

    #[test]
    fn repeated_kfold_is_deterministic() {
        let table = synthetic_table(8, 1, 4, Some(1), 0.5, 37);
        let a = repeated_kfold(&table, 2, 4, 12345).unwrap();
        let b = repeated_kfold(&table, 2, 4, 12345).unwrap();
        assert_eq!(a.test_accuracies, b.test_accuracies);
        assert_eq!(a.test.mean.to_bits(), b.test.mean.to_bits());
        let c = repeated_kfold(&table, 2, 4, 54321).unwrap();
        assert_ne!(a.test_accuracies, c.test_accuracies);
    }

    #[test]
    fn kfold_rejects_k_beyond_class_size() {
        let table = synthetic_table(4, 1, 3, Some(0), 1.0, 41);
        assert!(matches!(
            repeated_kfold(&table, 5, 2, 1),
            Err(EvalError::BadK { k: 5, min_class: 4 })
        ));
    }

    #[test]
    fn empirical_p_formula_cases() {
        // observed beats all 999 null draws
        let null = vec![0.5; 999];
        assert_eq!(empirical_p(0.9, &null), 1.0 / 1000.0);
        // observed at the null median
        let null: Vec<f64> = (0..999).map(|i| i as f64 / 998.0).collect();
        let p = empirical_p(0.5, &null);
        assert!((p - 0.5).abs() < 0.01, "{p}");
        // a single tying draw with the >= convention
        assert_eq!(empirical_p(0.7, &[0.7]), 1.0);
    }

    #[test]
    fn permutation_p_in_valid_range_and_detects_signal() {
        let table = synthetic_table(5, 1, 3, Some(1), 4.0, 43);
        let report = permutation_test(&table, 19, 99).unwrap();
        assert_eq!(report.null.len(), 19);
        assert!(report.p_empirical >= 1.0 / 20.0);
        assert!(report.p_empirical <= 1.0);
        assert_eq!(report.observed, 1.0);
        assert!(report.p_empirical <= 0.10, "signal should be significant");
        assert!(report.p_gaussian < 0.05);
    }

    #[test]
    fn permutation_p_is_uniform_ish_under_the_null() {
        // 20 meta-repetitions of a null dataset; the fraction of p < 0.05
        // must stay within [0, 0.15]
        let mut low = 0usize;
        let meta = 20;
        for rep in 0..meta {
            let table = synthetic_table(5, 1, 3, None, 0.0, 1000 + rep as u64);
            let report = permutation_test(&table, 19, rep as u64).unwrap();
            if report.p_empirical < 0.05 {
                low += 1;
            }
        }
        assert!(
            (low as f64 / meta as f64) <= 0.15,
            "{low}/{meta} null p-values below 0.05"
        );
    }

    #[test]
    fn erfc_matches_reference_values() {
        // reference values: erfc(0) = 1, erfc(1) = 0.157299..., erfc(-1)
        assert!((erfc(0.0) - 1.0).abs() < 1e-7);
        assert!((erfc(1.0) - 0.15729920705028513).abs() < 1e-6);
        assert!((erfc(-1.0) - 1.8427007929497148).abs() < 1e-6);
        assert!((erfc(2.0) - 0.004677734981063127).abs() < 1e-7);
    }

    #[test]
    fn feature_table_from_vectors_validates_completeness() {
        use crate::features::SdfVector;
        let mk = |s: &str, g, level| SdfVector {
            subject: s.into(),
            group: g,
            channel: "CPz".into(),
            stimulus: Stimulus::Target,
            m: 40,
            level,
            f1_s: 0.1,
            f2: 0.2,
            degenerate: false,
        };
        let vecs = vec![
            mk("a", Group::Pd, 50),
            mk("a", Group::Pd, 0),
            mk("b", Group::Ctl, 50),
            mk("b", Group::Ctl, 0),
        ];
        let table = FeatureTable::from_sdf_vectors(&vecs).unwrap();
        assert_eq!(table.n_subjects(), 2);
        assert_eq!(table.levels, vec![50, 0]);
        assert_eq!(table.feature(0, 0, 0), [0.1, 0.2]);

        let missing = vec![
            mk("a", Group::Pd, 50),
            mk("a", Group::Pd, 0),
            mk("b", Group::Ctl, 50),
        ];
        assert!(FeatureTable::from_sdf_vectors(&missing).is_err());

        let mut conflicted = vecs.clone();
        conflicted[2].group = Group::Pd;
        conflicted[3].group = Group::Ctl;
        assert!(FeatureTable::from_sdf_vectors(&conflicted).is_err());
    }
}
