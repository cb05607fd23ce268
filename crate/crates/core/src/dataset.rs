//! Labeled trigger-state buffers, stride-based index selection along
//! trajectories, and inverse-frequency class weights.
//!
//! On disk a dataset is a JSON-lines file, one object per sample:
//!
//! ```text
//! {"id":3,"t":40,"state":[7.1,2.4],"label":0,"iteration":2,"env_params":{...}}
//! ```
//!
//! A sidecar JSON file records per-iteration buffer counts.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EnvParams, State};
use crate::error::{PrismError, Result};
use crate::rollout::{Label, Trajectory};

/// One labeled trigger state with provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSample {
    #[serde(rename = "id")]
    pub traj_id: u64,
    #[serde(rename = "t")]
    pub time_index: usize,
    pub state: State,
    pub label: Label,
    pub iteration: usize,
    pub env_params: EnvParams,
}

/// An immutable collection of samples with unique `(traj_id, time_index)` keys.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    samples: Vec<TriggerSample>,
    n_safe: usize,
    n_unsafe: usize,
}

impl Dataset {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<TriggerSample>) -> Result<Self> {
        let mut keys = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !keys.insert((s.traj_id, s.time_index)) {
                return Err(PrismError::DuplicateKey { traj_id: s.traj_id, time_index: s.time_index });
            }
        }
        let n_safe = samples.iter().filter(|s| s.label.is_safe()).count();
        let n_unsafe = samples.len() - n_safe;
        Ok(Self { samples, n_safe, n_unsafe })
    }

    pub fn samples(&self) -> &[TriggerSample] {
        &self.samples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TriggerSample> {
        self.samples.iter()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_safe(&self) -> usize {
        self.n_safe
    }

    pub fn n_unsafe(&self) -> usize {
        self.n_unsafe
    }

    /// Fraction of samples labeled unsafe (0 for an empty dataset).
    pub fn unsafe_ratio(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.n_unsafe as f64 / self.samples.len() as f64
        }
    }

    pub fn trajectory_ids(&self) -> HashSet<u64> {
        self.samples.iter().map(|s| s.traj_id).collect()
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectory_ids().len()
    }

    /// Union of two key-disjoint buffers, `self`'s samples first.
    pub fn merge(&self, other: &Dataset) -> Result<Dataset> {
        let keys: HashSet<(u64, usize)> = self.samples.iter().map(|s| (s.traj_id, s.time_index)).collect();
        if let Some(dup) = other.samples.iter().find(|s| keys.contains(&(s.traj_id, s.time_index))) {
            return Err(PrismError::DuplicateKey { traj_id: dup.traj_id, time_index: dup.time_index });
        }
        let mut samples = Vec::with_capacity(self.len() + other.len());
        samples.extend_from_slice(&self.samples);
        samples.extend_from_slice(&other.samples);
        Ok(Dataset { samples, n_safe: self.n_safe + other.n_safe, n_unsafe: self.n_unsafe + other.n_unsafe })
    }

    pub fn class_weights(&self) -> Result<ClassWeights> {
        class_weights(self)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for s in &self.samples {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Dataset> {
        let reader = BufReader::new(File::open(path)?);
        let mut samples = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            samples.push(serde_json::from_str(&line)?);
        }
        Dataset::from_samples(samples)
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a TriggerSample;
    type IntoIter = std::slice::Iter<'a, TriggerSample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

/// Per-iteration buffer counts, written next to the sample file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferSummary {
    pub iteration: usize,
    pub total_data: usize,
    pub n_safe: usize,
    pub n_unsafe: usize,
    pub unsafe_ratio: f64,
    pub num_traj: usize,
}

impl BufferSummary {
    pub fn of(iteration: usize, d: &Dataset, num_traj: usize) -> Self {
        Self {
            iteration,
            total_data: d.len(),
            n_safe: d.n_safe(),
            n_unsafe: d.n_unsafe(),
            unsafe_ratio: d.unsafe_ratio(),
            num_traj,
        }
    }
}

pub fn write_summaries(path: &Path, summaries: &[BufferSummary]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, summaries)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Loss weights for the two classes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    /// Weight of label 0 (unsafe).
    pub unsafe_weight: f64,
    /// Weight of label 1 (safe).
    pub safe_weight: f64,
}

impl ClassWeights {
    pub fn uniform() -> Self {
        Self { unsafe_weight: 1.0, safe_weight: 1.0 }
    }

    pub fn for_label(&self, label: Label) -> f64 {
        match label {
            Label::Unsafe => self.unsafe_weight,
            Label::Safe => self.safe_weight,
        }
    }
}

/// Inverse-frequency weights `w_y = n / (2 n_y)`; a balanced set gets 1 and 1.
pub fn class_weights(d: &Dataset) -> Result<ClassWeights> {
    if d.n_safe == 0 || d.n_unsafe == 0 {
        return Err(PrismError::DegenerateDataset(format!(
            "need both classes for class weights, have {} safe / {} unsafe",
            d.n_safe, d.n_unsafe
        )));
    }
    let n = d.len() as f64;
    Ok(ClassWeights { unsafe_weight: n / (2.0 * d.n_unsafe as f64), safe_weight: n / (2.0 * d.n_safe as f64) })
}

/// Fine and coarse temporal strides, in steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrideConfig {
    pub coarse: usize,
    pub fine: usize,
}

impl Default for StrideConfig {
    fn default() -> Self {
        Self { coarse: 20, fine: 2 }
    }
}

impl StrideConfig {
    pub fn new(coarse: usize, fine: usize) -> Result<Self> {
        let s = Self { coarse, fine };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.fine && self.fine < self.coarse) {
            return Err(PrismError::InvalidConfig(format!(
                "strides must satisfy 1 <= fine < coarse, got fine={} coarse={}",
                self.fine, self.coarse
            )));
        }
        Ok(())
    }
}

/// Region-adaptive index selection along a trajectory.
///
/// Starting at index 0, each emitted index advances by `fine` when its state
/// lies in the region and by `coarse` otherwise.
pub fn stride_sample<F>(traj: &Trajectory, strides: &StrideConfig, in_region: F) -> Vec<usize>
where
    F: Fn(&State) -> bool,
{
    assert!(!traj.is_empty(), "cannot stride-sample an empty trajectory");
    let mut indices = Vec::new();
    let mut t = 0;
    while t < traj.len() {
        indices.push(t);
        t += if in_region(&traj.states[t]) { strides.fine } else { strides.coarse };
    }
    indices
}

/// Every `stride`-th index, starting at 0.
pub fn uniform_indices(len: usize, stride: usize) -> Vec<usize> {
    assert!(stride >= 1);
    (0..len).step_by(stride).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(len: usize) -> Trajectory {
        Trajectory {
            id: 1,
            seed: 0,
            dt: 0.01,
            env_params: EnvParams::default(),
            states: (0..len).map(|t| State::from([t as f64, 0.0])).collect(),
            violation_step: None,
        }
    }

    fn sample(traj_id: u64, t: usize, label: Label) -> TriggerSample {
        TriggerSample {
            traj_id,
            time_index: t,
            state: State::from([t as f64 * 0.1, 1.0 / (t as f64 + 3.0)]),
            label,
            iteration: 0,
            env_params: EnvParams::default(),
        }
    }

    fn counts(n_unsafe: usize, n_safe: usize) -> Dataset {
        let samples = (0..n_unsafe)
            .map(|t| sample(0, t, Label::Unsafe))
            .chain((0..n_safe).map(|t| sample(1, t, Label::Safe)))
            .collect();
        Dataset::from_samples(samples).unwrap()
    }

    #[test]
    fn stride_examples() {
        let t = traj(101);
        let s = StrideConfig::new(20, 2).unwrap();
        assert_eq!(stride_sample(&t, &s, |_| false), vec![0, 20, 40, 60, 80, 100]);
        assert_eq!(stride_sample(&t, &s, |_| true), (0..=100).step_by(2).collect::<Vec<_>>());
        let mixed = stride_sample(&t, &s, |x| (40.0..=60.0).contains(&x[0]));
        // 60 is in the region, so the scan continues to 62 before going coarse.
        let mut expected = vec![0, 20];
        expected.extend((40..=62).step_by(2));
        expected.push(82);
        assert_eq!(mixed, expected);
    }

    #[test]
    fn stride_validation() {
        assert!(StrideConfig::new(20, 20).is_err());
        assert!(StrideConfig::new(20, 0).is_err());
        assert!(StrideConfig::new(2, 1).is_ok());
    }

    #[test]
    fn class_weight_examples() {
        let w = counts(50, 50).class_weights().unwrap();
        assert_eq!((w.unsafe_weight, w.safe_weight), (1.0, 1.0));
        let w = counts(30, 70).class_weights().unwrap();
        assert!((w.unsafe_weight - 100.0 / 60.0).abs() < 1e-12);
        assert!((w.safe_weight - 100.0 / 140.0).abs() < 1e-12);
        assert!(matches!(counts(0, 70).class_weights(), Err(PrismError::DegenerateDataset(_))));
    }

    #[test]
    fn merge_examples() {
        let a = counts(3, 7);
        assert_eq!(a.merge(&Dataset::empty()).unwrap(), a);

        let b = Dataset::from_samples((0..5).map(|t| sample(9, t, Label::Unsafe)).collect()).unwrap();
        let m = a.merge(&b).unwrap();
        assert_eq!(m.len(), a.len() + b.len());
        let weighted = (a.unsafe_ratio() * a.len() as f64 + b.unsafe_ratio() * b.len() as f64) / m.len() as f64;
        assert!((m.unsafe_ratio() - weighted).abs() < 1e-12);
        assert_eq!((m.n_unsafe(), m.n_safe()), (8, 7));

        assert!(matches!(a.merge(&a), Err(PrismError::DuplicateKey { .. })));
        assert!(Dataset::from_samples(vec![sample(0, 1, Label::Safe), sample(0, 1, Label::Unsafe)]).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.jsonl");
        let mut samples: Vec<_> = counts(4, 6).samples().to_vec();
        samples[2].env_params.friction_scale = 1.734_519_284_112_093;
        samples[3].state = State::from([std::f64::consts::PI, -1e-300]);
        let d = Dataset::from_samples(samples).unwrap();
        d.write_jsonl(&path).unwrap();
        assert_eq!(Dataset::read_jsonl(&path).unwrap(), d);

        let first = std::fs::read_to_string(&path).unwrap();
        let line: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
        for key in ["id", "t", "state", "label", "iteration", "env_params"] {
            assert!(line.get(key).is_some(), "missing {key}");
        }
    }

    proptest! {
        #[test]
        fn stride_output_is_well_formed(
            len in 1usize..400,
            fine in 1usize..6,
            extra in 1usize..40,
            mask in proptest::collection::vec(any::<bool>(), 400),
        ) {
            let strides = StrideConfig::new(fine + extra, fine).unwrap();
            let t = traj(len);
            let region = |x: &State| mask[x[0] as usize];
            let idx = stride_sample(&t, &strides, region);
            prop_assert_eq!(idx[0], 0);
            for w in idx.windows(2) {
                let gap = w[1] - w[0];
                prop_assert!(gap == strides.fine || gap == strides.coarse);
            }
            prop_assert!(*idx.last().unwrap() < len);
        }

        #[test]
        fn wider_region_never_yields_fewer_indices(
            len in 1usize..400,
            a in proptest::collection::vec(any::<bool>(), 400),
            b in proptest::collection::vec(any::<bool>(), 400),
        ) {
            let strides = StrideConfig::default();
            let t = traj(len);
            let narrow = |x: &State| a[x[0] as usize] && b[x[0] as usize];
            let wide = |x: &State| a[x[0] as usize];
            prop_assert!(stride_sample(&t, &strides, narrow).len() <= stride_sample(&t, &strides, wide).len());
        }

        #[test]
        fn class_weights_preserve_mass(n0 in 1usize..300, n1 in 1usize..300) {
            let d = counts(n0, n1);
            let w = d.class_weights().unwrap();
            let mass = w.unsafe_weight * n0 as f64 + w.safe_weight * n1 as f64;
            prop_assert!((mass - d.len() as f64).abs() < 1e-9);
        }
    }
}
