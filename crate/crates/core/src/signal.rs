//! Continuous-recording ingestion: FIR bandpass filtering, segmentation
//! around stimulus events, and averaging into event-related potentials.

use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum SignalError {
    #[error("band ({low}, {high}) Hz invalid for fs = {fs} Hz: need 0 < low < high < fs/2")]
    InvalidBand { low: f64, high: f64, fs: f64 },
    #[error("window [{0}, {1}) is invalid")]
    InvalidWindow(f64, f64),
    #[error("no epochs for stimulus {0:?}")]
    NoEpochs(Stimulus),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Stimulus type of the auditory oddball protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "lowercase")]
pub enum Stimulus {
    Standard,
    Target,
    Novel,
}

impl Stimulus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stimulus::Standard => "standard",
            Stimulus::Target => "target",
            Stimulus::Novel => "novel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "standard" => Some(Stimulus::Standard),
            "target" => Some(Stimulus::Target),
            "novel" => Some(Stimulus::Novel),
            _ => None,
        }
    }
}

impl std::fmt::Display for Stimulus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Subject group label. `Pd` is the positive class throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
pub enum Group {
    #[serde(rename = "PD")]
    Pd,
    #[serde(rename = "CTL")]
    Ctl,
}

impl Group {
    pub fn as_str(&self) -> &'static str {
        match self {
            Group::Pd => "PD",
            Group::Ctl => "CTL",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "PD" => Some(Group::Pd),
            "CTL" => Some(Group::Ctl),
            _ => None,
        }
    }
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A stimulus onset in a continuous recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time_s: f64,
    pub stimulus: Stimulus,
}

/// A continuous multichannel recording with its stimulus events.
#[derive(Debug, Clone)]
pub struct ContinuousRecording {
    pub subject: String,
    pub group: Group,
    pub fs: f64,
    pub channel_names: Vec<String>,
    /// channels x samples, microvolts.
    pub data: Array2<f64>,
    pub events: Vec<Event>,
}

/// Time-locked epochs per stimulus type.
#[derive(Debug, Clone)]
pub struct EpochSet {
    pub subject: String,
    pub group: Group,
    pub fs: f64,
    /// `[t0, t1)` in seconds relative to stimulus onset.
    pub window: (f64, f64),
    pub channel_names: Vec<String>,
    /// Per stimulus: epochs x channels x L.
    pub epochs: BTreeMap<Stimulus, Array3<f64>>,
    /// Events whose window fell outside the recording, per stimulus.
    pub skipped: BTreeMap<Stimulus, usize>,
}

impl EpochSet {
    pub fn epoch_len(&self) -> usize {
        window_len(self.window, self.fs)
    }
}

/// Per-stimulus ERPs of one subject.
#[derive(Debug, Clone)]
pub struct ErpSet {
    pub subject: String,
    pub group: Group,
    pub fs: f64,
    pub window: (f64, f64),
    pub channel_names: Vec<String>,
    /// Per stimulus: channels x L.
    pub erps: BTreeMap<Stimulus, Array2<f64>>,
    /// Number of epochs averaged per stimulus (absent for precomputed ERPs).
    pub epoch_counts: BTreeMap<Stimulus, usize>,
}

impl ErpSet {
    pub fn epoch_len(&self) -> usize {
        window_len(self.window, self.fs)
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|c| c == name)
    }

    pub fn erp(&self, stimulus: Stimulus, channel: usize) -> Option<Array1<f64>> {
        self.erps.get(&stimulus).map(|m| m.row(channel).to_owned())
    }
}

/// Number of samples in a `[t0, t1)` window at rate `fs`.
pub fn window_len(window: (f64, f64), fs: f64) -> usize {
    ((window.1 - window.0) * fs).round() as usize
}

/// Linear-phase FIR bandpass taps, Hamming-window design.
///
/// Transition bandwidths follow the usual EEG defaults: a quarter of the edge
/// frequency clamped to `[2 Hz, edge]` below and `[2 Hz, fs/2 - edge]` above
/// (1 Hz and 7.5 Hz for the (1, 30) Hz band at 500 Hz). The odd tap count
/// comes from the `3.3 / normalized transition` Hamming rule; cutoffs sit at
/// the centers of the transition bands and the taps are scaled for unit gain
/// at the passband center.
pub fn design_bandpass(low: f64, high: f64, fs: f64) -> Result<Vec<f64>, SignalError> {
    if !(low > 0.0 && low < high && high < fs / 2.0) {
        return Err(SignalError::InvalidBand { low, high, fs });
    }
    let trans_low = (0.25 * low).max(2.0).min(low);
    let trans_high = (0.25 * high).max(2.0).min(fs / 2.0 - high);
    let n_taps = {
        let n = (3.3 * fs / trans_low.min(trans_high)).ceil() as usize;
        if n % 2 == 0 {
            n + 1
        } else {
            n
        }
    };
    let f1 = (low - trans_low / 2.0) / fs;
    let f2 = (high + trans_high / 2.0) / fs;
    let mid = (n_taps - 1) as f64 / 2.0;
    let sinc = |t: f64| {
        if t == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * t).sin() / (std::f64::consts::PI * t)
        }
    };
    let mut taps: Vec<f64> = (0..n_taps)
        .map(|k| {
            let x = k as f64 - mid;
            let ideal = 2.0 * f2 * sinc(2.0 * f2 * x) - 2.0 * f1 * sinc(2.0 * f1 * x);
            let win =
                0.54 - 0.46 * (2.0 * std::f64::consts::PI * k as f64 / (n_taps - 1) as f64).cos();
            ideal * win
        })
        .collect();
    // unit gain at the passband center
    let fc = (f1 + f2) / 2.0;
    let mut re = 0.0;
    let mut im = 0.0;
    for (k, h) in taps.iter().enumerate() {
        let phase = 2.0 * std::f64::consts::PI * fc * k as f64;
        re += h * phase.cos();
        im -= h * phase.sin();
    }
    let gain = (re * re + im * im).sqrt();
    for h in taps.iter_mut() {
        *h /= gain;
    }
    Ok(taps)
}

/// Apply FIR taps once with group-delay compensation (zero-padded edges), so
/// the output stays time-aligned with the input.
pub fn filter_delay_compensated(taps: &[f64], x: &[f64]) -> Vec<f64> {
    let delay = (taps.len() - 1) / 2;
    let n = x.len();
    let mut y = vec![0.0; n];
    for (i, out) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        // y[i] = sum_k h[k] * x[i + delay - k]
        let src_hi = i + delay;
        let k_lo = src_hi.saturating_sub(n - 1);
        let k_hi = taps.len().min(src_hi + 1);
        for k in k_lo..k_hi {
            acc += taps[k] * x[src_hi - k];
        }
        *out = acc;
    }
    y
}

/// Bandpass-filter every channel of a recording.
pub fn bandpass_fir(
    rec: &ContinuousRecording,
    low: f64,
    high: f64,
) -> Result<ContinuousRecording, SignalError> {
    let taps = design_bandpass(low, high, rec.fs)?;
    let mut out = rec.clone();
    for mut row in out.data.rows_mut() {
        let x: Vec<f64> = row.iter().cloned().collect();
        let y = filter_delay_compensated(&taps, &x);
        for (dst, v) in row.iter_mut().zip(y) {
            *dst = v;
        }
    }
    Ok(out)
}

/// Extract `[t0, t1)` windows around every event by exact sample arithmetic:
/// the epoch of an event at `t` starts at `round(t fs) + round(t0 fs)`.
/// Events whose window exceeds the recording are skipped and counted.
pub fn segment(rec: &ContinuousRecording, window: (f64, f64)) -> Result<EpochSet, SignalError> {
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(SignalError::InvalidWindow(t0, t1));
    }
    let l = window_len(window, rec.fs);
    if l == 0 {
        return Err(SignalError::InvalidWindow(t0, t1));
    }
    let n_samples = rec.data.ncols();
    let n_channels = rec.data.nrows();
    let offset = (t0 * rec.fs).round() as i64;

    let mut kept: BTreeMap<Stimulus, Vec<usize>> = BTreeMap::new();
    let mut skipped: BTreeMap<Stimulus, usize> = BTreeMap::new();
    for ev in &rec.events {
        let start = (ev.time_s * rec.fs).round() as i64 + offset;
        if start < 0 || start as usize + l > n_samples {
            *skipped.entry(ev.stimulus).or_insert(0) += 1;
        } else {
            kept.entry(ev.stimulus).or_default().push(start as usize);
        }
    }

    let mut epochs = BTreeMap::new();
    for (stim, starts) in kept {
        let mut arr = Array3::zeros((starts.len(), n_channels, l));
        for (e, &s) in starts.iter().enumerate() {
            for c in 0..n_channels {
                for k in 0..l {
                    arr[[e, c, k]] = rec.data[[c, s + k]];
                }
            }
        }
        epochs.insert(stim, arr);
    }

    Ok(EpochSet {
        subject: rec.subject.clone(),
        group: rec.group,
        fs: rec.fs,
        window,
        channel_names: rec.channel_names.clone(),
        epochs,
        skipped,
    })
}

/// Vertically average the epochs of each stimulus into an ERP.
pub fn average_erp(epochs: &EpochSet) -> Result<ErpSet, SignalError> {
    let mut erps = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for (stim, arr) in &epochs.epochs {
        if arr.len_of(Axis(0)) == 0 {
            return Err(SignalError::NoEpochs(*stim));
        }
        let mean = arr.mean_axis(Axis(0)).expect("nonempty epoch axis");
        counts.insert(*stim, arr.len_of(Axis(0)));
        erps.insert(*stim, mean);
    }
    Ok(ErpSet {
        subject: epochs.subject.clone(),
        group: epochs.group,
        fs: epochs.fs,
        window: epochs.window,
        channel_names: epochs.channel_names.clone(),
        erps,
        epoch_counts: counts,
    })
}

/// Subtract each epoch's own mean per channel (off by default in the
/// pipeline; exposed as an option).
pub fn baseline_correct(epochs: &mut EpochSet) {
    for arr in epochs.epochs.values_mut() {
        let (n_e, n_c, l) = arr.dim();
        for e in 0..n_e {
            for c in 0..n_c {
                let mut mean = 0.0;
                for k in 0..l {
                    mean += arr[[e, c, k]];
                }
                mean /= l as f64;
                for k in 0..l {
                    arr[[e, c, k]] -= mean;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn single_channel_rec(fs: f64, data: Vec<f64>, events: Vec<Event>) -> ContinuousRecording {
        let n = data.len();
        ContinuousRecording {
            subject: "s".into(),
            group: Group::Ctl,
            fs,
            channel_names: vec!["CPz".into()],
            data: Array2::from_shape_vec((1, n), data).unwrap(),
            events,
        }
    }

    #[test]
    fn bandpass_preserves_midband_sinusoid() {
        let fs = 500.0;
        let taps = design_bandpass(1.0, 30.0, fs).unwrap();
        assert_eq!(taps.len(), 1651);
        let n = 6000;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * 10.0 * i as f64 / fs).sin())
            .collect();
        let y = filter_delay_compensated(&taps, &x);
        let mid = &y[2500..3500];
        let amp = rms(mid) * 2f64.sqrt();
        assert!((amp - 1.0).abs() < 0.05, "10 Hz amplitude {amp}");
    }

    #[test]
    fn bandpass_attenuates_out_of_band() {
        let fs = 500.0;
        let taps = design_bandpass(1.0, 30.0, fs).unwrap();
        let n = 6000;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * 60.0 * i as f64 / fs).sin())
            .collect();
        let y = filter_delay_compensated(&taps, &x);
        let amp = rms(&y[2500..3500]) * 2f64.sqrt();
        assert!(amp < 0.1, "60 Hz leak {amp} (need >= 20 dB attenuation)");
    }

    #[test]
    fn bandpass_rejects_dc() {
        let fs = 500.0;
        let taps = design_bandpass(1.0, 30.0, fs).unwrap();
        let x = vec![1.0; 6000];
        let y = filter_delay_compensated(&taps, &x);
        let mean = y[2500..3500].iter().sum::<f64>() / 1000.0;
        assert!(mean.abs() < 0.01, "DC leak {mean}");
    }

    #[test]
    fn bandpass_midband_ripple_below_half_db() {
        let fs = 500.0;
        let taps = design_bandpass(1.0, 30.0, fs).unwrap();
        for f in [5.0, 10.0, 15.0, 20.0, 25.0] {
            let (mut re, mut im) = (0.0, 0.0);
            for (k, h) in taps.iter().enumerate() {
                let ph = 2.0 * PI * f / fs * k as f64;
                re += h * ph.cos();
                im -= h * ph.sin();
            }
            let mag = (re * re + im * im).sqrt();
            let db = 20.0 * mag.log10();
            assert!(db.abs() < 0.5, "{f} Hz gain {db} dB");
        }
    }

    #[test]
    fn filter_is_shift_invariant() {
        let fs = 500.0;
        let taps = design_bandpass(1.0, 30.0, fs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 6000;
        let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let d = 7usize;
        let mut xd = vec![0.0; n];
        xd[d..].copy_from_slice(&x[..n - d]);
        let y = filter_delay_compensated(&taps, &x);
        let yd = filter_delay_compensated(&taps, &xd);
        for i in 2500..3500 {
            assert!((yd[i] - y[i - d]).abs() < 1e-9);
        }
    }

    #[test]
    fn bandpass_rejects_invalid_band() {
        assert!(design_bandpass(0.0, 30.0, 500.0).is_err());
        assert!(design_bandpass(30.0, 1.0, 500.0).is_err());
        assert!(design_bandpass(1.0, 250.0, 500.0).is_err());
    }

    #[test]
    fn segment_window_gives_expected_length() {
        let fs = 500.0;
        let data = vec![0.0; 2000];
        let events = vec![Event {
            time_s: 1.0,
            stimulus: Stimulus::Target,
        }];
        let rec = single_channel_rec(fs, data, events);
        let seg = segment(&rec, (0.0, 0.5)).unwrap();
        assert_eq!(seg.epoch_len(), 250);
        assert_eq!(seg.epochs[&Stimulus::Target].dim(), (1, 1, 250));
    }

    #[test]
    fn segment_event_at_zero_starts_at_sample_zero() {
        let fs = 100.0;
        let data: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let rec = single_channel_rec(
            fs,
            data,
            vec![Event {
                time_s: 0.0,
                stimulus: Stimulus::Standard,
            }],
        );
        let seg = segment(&rec, (0.0, 0.1)).unwrap();
        let arr = &seg.epochs[&Stimulus::Standard];
        assert_eq!(arr[[0, 0, 0]], 0.0);
        assert_eq!(arr[[0, 0, 9]], 9.0);
    }

    #[test]
    fn segment_finds_planted_pulses_at_fixed_index() {
        let fs = 250.0;
        let mut data = vec![0.0; 5000];
        let mut events = Vec::new();
        for e in 0..10 {
            let start = 300 * e + 57;
            data[start + 13] = 7.0;
            events.push(Event {
                time_s: start as f64 / fs,
                stimulus: Stimulus::Novel,
            });
        }
        let rec = single_channel_rec(fs, data, events);
        let seg = segment(&rec, (0.0, 0.2)).unwrap();
        let arr = &seg.epochs[&Stimulus::Novel];
        for e in 0..10 {
            assert_eq!(arr[[e, 0, 13]], 7.0, "epoch {e}");
            assert_eq!(arr.slice(ndarray::s![e, 0, ..]).sum(), 7.0);
        }
    }

    #[test]
    fn segment_skips_boundary_events_and_counts_them() {
        let fs = 100.0;
        let data = vec![1.0; 100];
        let events = vec![
            Event {
                time_s: 0.5,
                stimulus: Stimulus::Target,
            },
            Event {
                time_s: 0.95,
                stimulus: Stimulus::Target,
            },
        ];
        let rec = single_channel_rec(fs, data, events);
        let seg = segment(&rec, (0.0, 0.2)).unwrap();
        assert_eq!(seg.epochs[&Stimulus::Target].dim().0, 1);
        assert_eq!(seg.skipped[&Stimulus::Target], 1);
    }

    #[test]
    fn resegmenting_concatenated_epochs_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fs = 250.0;
        let l = 50usize;
        let n_epochs = 8;
        let orig: Vec<Vec<f64>> = (0..n_epochs)
            .map(|_| (0..l).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let mut data = Vec::new();
        let mut events = Vec::new();
        for (e, ep) in orig.iter().enumerate() {
            events.push(Event {
                time_s: (e * l) as f64 / fs,
                stimulus: Stimulus::Target,
            });
            data.extend_from_slice(ep);
        }
        let rec = single_channel_rec(fs, data, events);
        let seg = segment(&rec, (0.0, l as f64 / fs)).unwrap();
        let arr = &seg.epochs[&Stimulus::Target];
        assert_eq!(arr.dim(), (n_epochs, 1, l));
        for (e, ep) in orig.iter().enumerate() {
            for (k, v) in ep.iter().enumerate() {
                assert_eq!(arr[[e, 0, k]].to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn average_of_identical_epochs_is_the_epoch() {
        let fs = 100.0;
        let mut data = vec![0.0; 400];
        for s in [0usize, 100, 200] {
            for k in 0..50 {
                data[s + k] = (k as f64 * 0.3).sin();
            }
        }
        let events = (0..3)
            .map(|e| Event {
                time_s: e as f64,
                stimulus: Stimulus::Standard,
            })
            .collect();
        let rec = single_channel_rec(fs, data, events);
        let erp = average_erp(&segment(&rec, (0.0, 0.5)).unwrap()).unwrap();
        let row = erp.erp(Stimulus::Standard, 0).unwrap();
        for k in 0..50 {
            assert!((row[k] - (k as f64 * 0.3).sin()).abs() < 1e-12);
        }
        assert_eq!(erp.epoch_counts[&Stimulus::Standard], 3);
    }

    #[test]
    fn average_of_opposite_epochs_is_zero() {
        let fs = 100.0;
        let mut data = vec![0.0; 250];
        for k in 0..50 {
            data[k] = (k as f64).cos();
            data[100 + k] = -(k as f64).cos();
        }
        let events = vec![
            Event {
                time_s: 0.0,
                stimulus: Stimulus::Target,
            },
            Event {
                time_s: 1.0,
                stimulus: Stimulus::Target,
            },
        ];
        let rec = single_channel_rec(fs, data, events);
        let erp = average_erp(&segment(&rec, (0.0, 0.5)).unwrap()).unwrap();
        let row = erp.erp(Stimulus::Target, 0).unwrap();
        assert!(row.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn averaging_shrinks_noise_roughly_sqrt_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fs = 250.0;
        let l = 64usize;
        let n = 400usize;
        let signal: Vec<f64> = (0..l).map(|k| (k as f64 * 0.2).sin()).collect();
        let mut data = Vec::new();
        let mut events = Vec::new();
        for e in 0..n {
            events.push(Event {
                time_s: (e * l) as f64 / fs,
                stimulus: Stimulus::Target,
            });
            for v in &signal {
                data.push(v + rng.sample::<f64, _>(StandardNormal));
            }
        }
        let rec = single_channel_rec(fs, data, events);
        let seg = segment(&rec, (0.0, l as f64 / fs)).unwrap();
        let erp = average_erp(&seg).unwrap();
        let row = erp.erp(Stimulus::Target, 0).unwrap();
        let err_avg = row
            .iter()
            .zip(&signal)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let arr = &seg.epochs[&Stimulus::Target];
        let err_single = (0..l)
            .map(|k| (arr[[0, 0, k]] - signal[k]).abs())
            .fold(0.0f64, f64::max);
        assert!(
            err_avg < 0.2 * err_single,
            "avg err {err_avg} vs single {err_single}"
        );
    }

    #[test]
    fn averaging_is_linear_in_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let fs = 100.0;
        let data: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let events: Vec<Event> = (0..4)
            .map(|e| Event {
                time_s: e as f64,
                stimulus: Stimulus::Standard,
            })
            .collect();
        let rec = single_channel_rec(fs, data.clone(), events.clone());
        let scaled = single_channel_rec(fs, data.iter().map(|v| 2.5 * v).collect(), events);
        let a = average_erp(&segment(&rec, (0.0, 0.3)).unwrap()).unwrap();
        let b = average_erp(&segment(&scaled, (0.0, 0.3)).unwrap()).unwrap();
        let ra = a.erp(Stimulus::Standard, 0).unwrap();
        let rb = b.erp(Stimulus::Standard, 0).unwrap();
        for (x, y) in ra.iter().zip(rb.iter()) {
            assert!((2.5 * x - y).abs() < 1e-12);
        }
    }
}
