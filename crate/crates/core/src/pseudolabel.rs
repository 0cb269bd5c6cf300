//! Augmentation-averaged confident pseudo-labeling of the target domain with
//! a decaying confidence threshold.
//!
//! Confidence for a sample averages the class probabilities of the sample and
//! of a noise-augmented view; the sample receives a pseudo-label only while
//! that averaged confidence strictly exceeds the scheduled threshold.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::argmax;
use crate::seeding;
use crate::synthdata::SubjectDomain;

/// Stepwise-decaying confidence threshold:
/// `tau(e) = max(floor, tau0 - delta * floor(e / update_interval))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdSchedule {
    pub tau0: f64,
    pub delta: f64,
    pub update_interval: usize,
    pub floor: f64,
}

impl Default for ThresholdSchedule {
    fn default() -> Self {
        ThresholdSchedule {
            tau0: 0.90,
            delta: 0.01,
            update_interval: 20,
            floor: 0.50,
        }
    }
}

impl ThresholdSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > 0.0 && self.tau0 <= 1.0) {
            return Err(Error::invalid_config("tau0 must lie in (0, 1]"));
        }
        if self.delta < 0.0 {
            return Err(Error::invalid_config("delta must be nonnegative"));
        }
        if self.update_interval == 0 {
            return Err(Error::invalid_config("update_interval must be positive"));
        }
        if !(0.0..1.0).contains(&self.floor) || self.tau0 <= self.floor {
            return Err(Error::invalid_config("floor must lie in [0, 1) below tau0"));
        }
        Ok(())
    }

    /// Threshold at the given epoch; non-increasing in the epoch.
    pub fn current_tau(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.update_interval) as f64;
        (self.tau0 - self.delta * steps).max(self.floor)
    }
}

/// One accepted pseudo-label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub index: usize,
    pub label: usize,
    pub confidence: f64,
}

/// Accepted pseudo-labels for one refresh; every confidence strictly exceeds
/// the threshold in force, and each index appears at most once.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PseudoLabelSet {
    pub entries: Vec<PseudoLabel>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sample index -> assigned label.
    pub fn label_by_index(&self) -> std::collections::BTreeMap<usize, usize> {
        self.entries.iter().map(|e| (e.index, e.label)).collect()
    }
}

/// Additive seeded Gaussian noise of standard deviation `strength`; zero
/// strength returns the input unchanged.
pub fn augment(x: &[f64], strength: f64, seed: u64) -> Vec<f64> {
    if strength == 0.0 {
        return x.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    x.iter()
        .map(|v| v + strength * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn averaged_confidence(probs: &[f64], aug_probs: &[f64]) -> (usize, f64) {
    let avg: Vec<f64> = probs
        .iter()
        .zip(aug_probs)
        .map(|(p, q)| 0.5 * (p + q))
        .collect();
    let label = argmax(&avg);
    (label, avg[label])
}

/// Label and confidence from averaging the probabilities of the sample and
/// its augmented view.
pub fn acpl_confidence(
    params: &ModelParams,
    x: &[f64],
    strength: f64,
    seed: u64,
) -> Result<(usize, f64)> {
    let probs = params.predict_probs(x)?;
    let aug = augment(x, strength, seed);
    let aug_probs = params.predict_probs(&aug)?;
    Ok(averaged_confidence(&probs, &aug_probs))
}

/// Pseudo-label every target sample whose averaged confidence strictly
/// exceeds the scheduled threshold at `epoch`. Deterministic given `seed`.
pub fn assign_pseudo_labels(
    params: &ModelParams,
    target: &SubjectDomain,
    schedule: &ThresholdSchedule,
    epoch: usize,
    strength: f64,
    seed: u64,
) -> Result<PseudoLabelSet> {
    if target.is_empty() {
        return Err(Error::Empty { what: "target domain" });
    }
    schedule.validate()?;
    let tau = schedule.current_tau(epoch);
    let mut entries = Vec::new();
    for (i, x) in target.samples.iter().enumerate() {
        let sample_seed = seeding::mix(seed, "augment", i as u64);
        let (label, confidence) = acpl_confidence(params, x, strength, sample_seed)?;
        if confidence > tau {
            entries.push(PseudoLabel {
                index: i,
                label,
                confidence,
            });
        }
    }
    Ok(PseudoLabelSet { entries })
}
