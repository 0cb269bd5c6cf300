//! Seeded generator of synthetic subject domains.
//!
//! Each subject draws Gaussian class blobs around anchors of norm 2 placed in
//! the first two coordinates, optionally rotated per subject, then offset by a
//! subject-level mean shift. Benchmarks compose subjects at graded shifts from
//! a target subject so that tests can recover the ground-truth ordering from
//! the specs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Recipe for one subject domain.
///
/// `rotation_seed` encodes the subject's class-axis rotation in degrees,
/// applied in the plane of the first two coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSpec {
    pub subject_id: String,
    pub class_count: usize,
    /// Per-class sample counts; a zero entry models a missing class.
    pub samples_per_class: Vec<usize>,
    pub mean_shift: Vec<f64>,
    pub rotation_seed: i64,
    pub noise_std: f64,
    pub dim: usize,
}

/// One subject's data: samples, optional labels, and a train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectDomain {
    pub subject_id: String,
    pub dim: usize,
    pub samples: Vec<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl SubjectDomain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Check split disjointness/coverage and label alignment.
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Empty { what: "domain samples" });
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.samples.len() {
                return Err(Error::DimensionMismatch {
                    context: "labels",
                    left: self.samples.len(),
                    right: labels.len(),
                });
            }
        }
        for s in &self.samples {
            if s.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    context: "sample dim",
                    left: self.dim,
                    right: s.len(),
                });
            }
        }
        let mut seen = vec![false; self.samples.len()];
        for &i in self.train_idx.iter().chain(&self.test_idx) {
            if i >= self.samples.len() || seen[i] {
                return Err(Error::invalid_config(format!(
                    "split index {i} out of range or duplicated in {}",
                    self.subject_id
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid_config(format!(
                "split does not cover domain {}",
                self.subject_id
            )));
        }
        Ok(())
    }

    fn subset(&self, idx: &[usize], all_train: bool) -> SubjectDomain {
        let samples: Vec<Vec<f64>> = idx.iter().map(|&i| self.samples[i].clone()).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| idx.iter().map(|&i| l[i]).collect());
        let n = samples.len();
        SubjectDomain {
            subject_id: self.subject_id.clone(),
            dim: self.dim,
            samples,
            labels,
            train_idx: if all_train { (0..n).collect() } else { Vec::new() },
            test_idx: if all_train { Vec::new() } else { (0..n).collect() },
        }
    }

    /// The training partition as a standalone domain.
    pub fn train_subdomain(&self) -> SubjectDomain {
        self.subset(&self.train_idx, true)
    }

    /// The held-out partition as a standalone domain.
    pub fn test_subdomain(&self) -> SubjectDomain {
        self.subset(&self.test_idx, false)
    }

    /// Labeled (sample, label) pairs over the whole domain.
    pub fn labeled_pairs(&self) -> Result<Vec<(Vec<f64>, usize)>> {
        let labels = self.labels.as_ref().ok_or_else(|| Error::Unlabeled {
            subject_id: self.subject_id.clone(),
        })?;
        Ok(self
            .samples
            .iter()
            .cloned()
            .zip(labels.iter().cloned())
            .collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("domain serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: SubjectDomain = serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "subject domain",
            message: e.to_string(),
        })?;
        d.validate()?;
        Ok(d)
    }
}

/// Unit-norm-2 anchor for class `c`, spread around the circle in the first
/// two coordinates. Two classes land at +/-2 along the first axis.
pub fn class_anchor(dim: usize, class_count: usize, class: usize) -> Vec<f64> {
    let angle = std::f64::consts::TAU * class as f64 / class_count as f64;
    let mut v = vec![0.0; dim];
    v[0] = 2.0 * angle.cos();
    v[1] = 2.0 * angle.sin();
    v
}

fn rotate_in_anchor_plane(v: &mut [f64], degrees: f64) {
    let theta = degrees.to_radians();
    let (s, c) = theta.sin_cos();
    let (x, y) = (v[0], v[1]);
    v[0] = c * x - s * y;
    v[1] = s * x + c * y;
}

fn validate_spec(spec: &SubjectSpec) -> Result<()> {
    if spec.class_count < 2 {
        return Err(Error::invalid_config("class_count must be at least 2"));
    }
    if spec.samples_per_class.len() != spec.class_count {
        return Err(Error::invalid_config(
            "samples_per_class must have one entry per class",
        ));
    }
    if spec.samples_per_class.iter().all(|&n| n == 0) {
        return Err(Error::invalid_config(
            "at least one class must have samples",
        ));
    }
    if spec.dim < 2 {
        return Err(Error::invalid_config("dim must be at least 2"));
    }
    if spec.mean_shift.len() != spec.dim {
        return Err(Error::invalid_config("mean_shift must have length dim"));
    }
    if !(spec.noise_std > 0.0) {
        return Err(Error::invalid_config("noise_std must be positive"));
    }
    Ok(())
}

/// Draw one subject domain: Gaussian blobs per class, then an 80/20
/// train/test split by seeded shuffle. Deterministic per `(spec, master_seed)`.
pub fn generate_subject(spec: &SubjectSpec, master_seed: u64) -> Result<SubjectDomain> {
    validate_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix(
        master_seed,
        "subject",
        seeding::hash_str(&spec.subject_id),
    ));
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (class, &count) in spec.samples_per_class.iter().enumerate() {
        let mut center = class_anchor(spec.dim, spec.class_count, class);
        rotate_in_anchor_plane(&mut center, spec.rotation_seed as f64);
        for (c, shift) in center.iter_mut().zip(&spec.mean_shift) {
            *c += shift;
        }
        for _ in 0..count {
            let sample: Vec<f64> = center
                .iter()
                .map(|&c| c + spec.noise_std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            samples.push(sample);
            labels.push(class);
        }
    }
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let train_len = ((n as f64) * 0.8).floor().max(1.0) as usize;
    let mut train_idx: Vec<usize> = order[..train_len].to_vec();
    let mut test_idx: Vec<usize> = order[train_len..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let domain = SubjectDomain {
        subject_id: spec.subject_id.clone(),
        dim: spec.dim,
        samples,
        labels: Some(labels),
        train_idx,
        test_idx,
    };
    domain.validate()?;
    Ok(domain)
}

/// Named benchmark layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkName {
    Standard,
    Imbalanced,
    MissingClass,
    CrossShift,
}

impl std::str::FromStr for BenchmarkName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(BenchmarkName::Standard),
            "imbalanced" => Ok(BenchmarkName::Imbalanced),
            "missing_class" => Ok(BenchmarkName::MissingClass),
            "cross_shift" => Ok(BenchmarkName::CrossShift),
            other => Err(Error::invalid_config(format!(
                "unknown benchmark name {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for BenchmarkName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BenchmarkName::Standard => "standard",
            BenchmarkName::Imbalanced => "imbalanced",
            BenchmarkName::MissingClass => "missing_class",
            BenchmarkName::CrossShift => "cross_shift",
        };
        f.write_str(s)
    }
}

pub const BENCH_DIM: usize = 8;
pub const BENCH_CLASSES: usize = 2;
pub const BENCH_PER_CLASS: usize = 100;
pub const BENCH_NOISE_STD: f64 = 1.0;
/// Per-index step of the source-to-target center distance; source `i` sits
/// at distance `i * BENCH_SHIFT_STEP`.
pub const BENCH_SHIFT_STEP: f64 = 0.5;
/// Per-index class-axis rotation of the nearer, compatible sources.
pub const BENCH_ROTATION_STEP_DEG: f64 = 16.0;
/// Fraction of the pool (the nearest sources) whose labels stay compatible
/// with the target's; the remaining, farthest sources carry near-flipped
/// labels. Pooled training over the whole pool absorbs that contradiction
/// everywhere, while a distance-ranked curriculum with a budget mostly stays
/// in the compatible prefix.
pub const BENCH_COMPATIBLE_FRACTION: f64 = 0.5;
/// Golden angle; spreads the shift directions across subjects.
const GOLDEN_ANGLE: f64 = 2.399963229728653;

/// Unit shift direction for source `i`, lying in coordinates orthogonal to
/// the class plane: shifts separate the domains without relabeling any
/// region of the class plane itself.
fn shift_direction(i: usize) -> Vec<f64> {
    let psi = GOLDEN_ANGLE * i as f64;
    let mut u = vec![0.0; BENCH_DIM];
    u[2] = psi.cos();
    u[3] = psi.sin();
    u
}

fn scaled(direction: &[f64], scale: f64) -> Vec<f64> {
    direction.iter().map(|d| d * scale).collect()
}

fn base_spec(subject_id: String, samples_per_class: Vec<usize>, mean_shift: Vec<f64>) -> SubjectSpec {
    SubjectSpec {
        subject_id,
        class_count: BENCH_CLASSES,
        samples_per_class,
        mean_shift,
        rotation_seed: 0,
        noise_std: BENCH_NOISE_STD,
        dim: BENCH_DIM,
    }
}

/// Subject specs for a named benchmark; the configured `mean_shift` values are
/// the ground truth that ranking tests compare against.
pub fn benchmark_specs(
    name: BenchmarkName,
    n_sources: usize,
) -> Result<(Vec<SubjectSpec>, SubjectSpec)> {
    if n_sources < 3 {
        return Err(Error::invalid_config(format!(
            "n_sources must be at least 3, got {n_sources}"
        )));
    }
    let balanced = vec![BENCH_PER_CLASS; BENCH_CLASSES];
    let target_counts = match name {
        // Dominated 3:1 by class zero.
        BenchmarkName::Imbalanced => vec![150, 50],
        _ => balanced.clone(),
    };
    let target = base_spec("target".to_string(), target_counts, vec![0.0; BENCH_DIM]);

    let compatible = ((n_sources as f64) * BENCH_COMPATIBLE_FRACTION).round().max(1.0) as usize;
    let mut sources = Vec::with_capacity(n_sources);
    for i in 1..=n_sources {
        let id = format!("src-{i:02}");
        let counts = match name {
            // Odd-indexed sources lack the second class entirely.
            BenchmarkName::MissingClass if i % 2 == 1 => vec![2 * BENCH_PER_CLASS, 0],
            _ => balanced.clone(),
        };
        let shift = match name {
            BenchmarkName::CrossShift => {
                // A large common displacement plus a small graded offset.
                let mut s = scaled(&shift_direction(i), 0.3 * i as f64);
                s[4] += 6.0;
                s
            }
            _ => scaled(&shift_direction(i), BENCH_SHIFT_STEP * i as f64),
        };
        let rotation = if i <= compatible {
            BENCH_ROTATION_STEP_DEG * i as f64
        } else {
            // Near-flipped labelers at the far end of the pool.
            185.0 + 8.0 * (i - compatible) as f64
        };
        let mut spec = base_spec(id, counts, shift);
        spec.rotation_seed = rotation.round() as i64;
        sources.push(spec);
    }
    Ok((sources, target))
}

/// Generate a full benchmark: `n_sources` labeled sources plus one target.
pub fn generate_benchmark(
    name: BenchmarkName,
    n_sources: usize,
    seed: u64,
) -> Result<(Vec<SubjectDomain>, SubjectDomain)> {
    let (source_specs, target_spec) = benchmark_specs(name, n_sources)?;
    let sources = source_specs
        .iter()
        .map(|spec| generate_subject(spec, seed))
        .collect::<Result<Vec<_>>>()?;
    let target = generate_subject(&target_spec, seed)?;
    Ok((sources, target))
}
