//! Run configuration: defaults, JSON config file, flag merging, hashing.
//!
//! Precedence: built-in defaults < config file (`--config`) < explicit
//! flags. `SDF_OUT_DIR` supplies the default output directory only.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use sdf_core::features::{FeatureConfig, FeatureIntervals, Interval};
use sdf_core::signal::Stimulus;
use sdf_core::solver::PenaltyConvention;
use sdf_core::synth::SynthConfig;

/// Cross-validation mode, spelled `nested-loocv`, `kfold:KxR` or
/// `permtest:N` on the command line and in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvMode {
    NestedLoocv,
    KFold { k: usize, repeats: usize },
    PermTest { n: usize },
}

impl fmt::Display for CvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CvMode::NestedLoocv => write!(f, "nested-loocv"),
            CvMode::KFold { k, repeats } => write!(f, "kfold:{k}x{repeats}"),
            CvMode::PermTest { n } => write!(f, "permtest:{n}"),
        }
    }
}

impl FromStr for CvMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "nested-loocv" {
            return Ok(CvMode::NestedLoocv);
        }
        if let Some(rest) = s.strip_prefix("kfold:") {
            let (k, r) = rest
                .split_once(['x', 'X'])
                .ok_or_else(|| format!("expected kfold:KxR, got {s}"))?;
            let k = k.parse().map_err(|_| format!("bad K in {s}"))?;
            let repeats = r.parse().map_err(|_| format!("bad repeat count in {s}"))?;
            return Ok(CvMode::KFold { k, repeats });
        }
        if let Some(n) = s.strip_prefix("permtest:") {
            let n = n.parse().map_err(|_| format!("bad permutation count in {s}"))?;
            return Ok(CvMode::PermTest { n });
        }
        Err(format!(
            "unknown cv mode {s}; expected nested-loocv, kfold:KxR or permtest:N"
        ))
    }
}

impl Serialize for CvMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for CvMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Synthetic-dataset effect sizes (the remaining generator knobs come from
/// the shared config fields).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub n_subjects: usize,
    pub latency_shift_s: f64,
    pub amplitude_factor: f64,
    pub snr_db: f64,
    pub fs: f64,
    pub l: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            n_subjects: d.n_subjects,
            latency_shift_s: d.latency_shift_s,
            amplitude_factor: d.amplitude_factor,
            snr_db: d.snr_db,
            fs: d.fs,
            l: d.l,
        }
    }
}

/// The resolved run configuration; defaults are the reference experiment
/// values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub stimulus: Stimulus,
    pub channels: Vec<String>,
    pub m_grid: Vec<usize>,
    pub band: (f64, f64),
    pub w: f64,
    pub alpha_f: f64,
    pub level_step: u32,
    pub i1: (f64, f64),
    pub i2: (f64, f64),
    pub convention: PenaltyConvention,
    pub f1_absolute: bool,
    pub f2_nonzero_only: bool,
    pub baseline_correct: bool,
    pub cv: CvMode,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub synth: SynthParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            stimulus: Stimulus::Target,
            channels: vec!["CP1".into(), "CPz".into(), "CP2".into()],
            m_grid: vec![40],
            band: (1.0, 30.0),
            w: 0.55,
            alpha_f: 8e-4,
            level_step: 2,
            i1: (0.0, 0.5),
            i2: (0.18, 0.5),
            convention: PenaltyConvention::NormalizedByL,
            f1_absolute: false,
            f2_nonzero_only: false,
            baseline_correct: false,
            cv: CvMode::NestedLoocv,
            seed: 0,
            out_dir: default_out_dir(),
            workers: 0,
            synth: SynthParams::default(),
        }
    }
}

fn default_out_dir() -> PathBuf {
    std::env::var_os("SDF_OUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("sdf-out"))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.channels.is_empty() {
            return Err("channel list is empty".into());
        }
        if self.m_grid.is_empty() {
            return Err("m grid is empty".into());
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(format!("w = {} outside [0, 1]", self.w));
        }
        if self.alpha_f < 0.0 {
            return Err(format!("alpha_f = {} negative", self.alpha_f));
        }
        if self.level_step == 0 || self.level_step > 100 || 100 % self.level_step != 0 {
            return Err(format!("level step {} must divide 100", self.level_step));
        }
        if !(self.band.0 > 0.0 && self.band.0 < self.band.1) {
            return Err(format!("band ({}, {}) invalid", self.band.0, self.band.1));
        }
        for (name, iv) in [("I1", self.i1), ("I2", self.i2)] {
            if !(iv.0 >= 0.0 && iv.0 < iv.1) {
                return Err(format!("{name} = [{}, {}) invalid", iv.0, iv.1));
            }
        }
        if let CvMode::KFold { k, repeats } = self.cv {
            if k < 2 || repeats == 0 {
                return Err(format!("kfold needs K >= 2 and repeats >= 1, got {k}x{repeats}"));
            }
        }
        if let CvMode::PermTest { n } = self.cv {
            if n == 0 {
                return Err("permtest needs n >= 1".into());
            }
        }
        Ok(())
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            channels: self.channels.clone(),
            stimulus: self.stimulus,
            m_grid: self.m_grid.clone(),
            band: self.band,
            w: self.w,
            alpha_f: self.alpha_f,
            level_step: self.level_step,
            intervals: FeatureIntervals {
                i1: Interval::new(self.i1.0, self.i1.1),
                i2: Interval::new(self.i2.0, self.i2.1),
            },
            convention: self.convention,
            f1_absolute: self.f1_absolute,
            f2_nonzero_only: self.f2_nonzero_only,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_subjects: self.synth.n_subjects,
            fs: self.synth.fs,
            l: self.synth.l,
            channels: self.channels.clone(),
            stimulus: self.stimulus,
            m: self.m_grid[0],
            band: self.band,
            latency_shift_s: self.synth.latency_shift_s,
            amplitude_factor: self.synth.amplitude_factor,
            snr_db: self.synth.snr_db,
            seed: self.seed,
            ..SynthConfig::default()
        }
    }

    /// Hash of the semantically relevant fields (output directory and worker
    /// count excluded, so archives stay resumable across relocations).
    pub fn semantic_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut value = serde_json::to_value(self).expect("config serializes");
        let obj = value.as_object_mut().unwrap();
        obj.remove("out_dir");
        obj.remove("workers");
        let canon = serde_json::to_string(&value).expect("config reserializes");
        let digest = Sha256::digest(canon.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cv_mode_round_trips() {
        for s in ["nested-loocv", "kfold:5x100", "permtest:1000"] {
            let mode: CvMode = s.parse().unwrap();
            assert_eq!(mode.to_string(), s);
        }
        assert!("kfold:5".parse::<CvMode>().is_err());
        assert!("bogus".parse::<CvMode>().is_err());
    }

    #[test]
    fn defaults_are_reference_values() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.w, 0.55);
        assert_eq!(cfg.alpha_f, 8e-4);
        assert_eq!(cfg.level_step, 2);
        assert_eq!(cfg.band, (1.0, 30.0));
        assert_eq!(cfg.m_grid, vec![40]);
        assert_eq!(cfg.i2, (0.18, 0.5));
        assert_eq!(cfg.stimulus, Stimulus::Target);
        assert_eq!(cfg.channels, vec!["CP1", "CPz", "CP2"]);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn hash_ignores_out_dir_but_not_solver_knobs() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out_dir = PathBuf::from("/elsewhere");
        b.workers = 7;
        assert_eq!(a.semantic_hash(), b.semantic_hash());
        let mut c = a.clone();
        c.alpha_f = 1e-3;
        assert_ne!(a.semantic_hash(), c.semantic_hash());
    }
}
