//! The replay memory: a bounded, distance-sorted store of labeled source
//! samples kept for re-training alongside each newly introduced source.
//!
//! The main selection path clusters source embeddings to find their dense
//! regions, orders source samples by distance to their own cluster centroids
//! (pushing outliers last), then scores each sample by its distance to the
//! nearest target centroid. The memory keeps the globally smallest target
//! distances up to capacity.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{centroid_distance_matrix, dbscan, kmeans, min_over_clusters, DbscanConfig};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::seeding;
use crate::synthdata::SubjectDomain;

/// One stored sample with its target-side distance score.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEntry {
    pub sample: Vec<f64>,
    pub label: usize,
    pub distance: f64,
    pub origin_subject: String,
    seq: u64,
}

/// A source sample scored by the density-selection pipeline, in dense-first
/// source order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub sample: Vec<f64>,
    pub label: usize,
    /// Squared distance to the nearest target centroid.
    pub distance: f64,
    pub origin_subject: String,
}

/// Bounded store of replay entries, sorted ascending by distance with ties
/// broken by origin subject then insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMemory {
    entries: Vec<ReplayEntry>,
    pub capacity: usize,
    pub per_stage_intake: usize,
    next_seq: u64,
}

/// Replay selection strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayVariant {
    /// Keep nothing.
    None,
    /// Keep uniformly random samples from each visited source.
    Random,
    /// Density pipeline with k-means centroids (k from DBSCAN).
    KmeansClosest,
    /// Fixed 100-sample quota per visited subject, no global cap.
    DbscanPerSubject,
    /// The main density-dictionary path.
    DensityDictionary,
}

impl std::str::FromStr for ReplayVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ReplayVariant::None),
            "random" => Ok(ReplayVariant::Random),
            "kmeans_closest" => Ok(ReplayVariant::KmeansClosest),
            "dbscan_per_subject" => Ok(ReplayVariant::DbscanPerSubject),
            "density_dictionary" => Ok(ReplayVariant::DensityDictionary),
            other => Err(Error::invalid_config(format!(
                "unknown replay variant {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for ReplayVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ReplayVariant::None => "none",
            ReplayVariant::Random => "random",
            ReplayVariant::KmeansClosest => "kmeans_closest",
            ReplayVariant::DbscanPerSubject => "dbscan_per_subject",
            ReplayVariant::DensityDictionary => "density_dictionary",
        };
        f.write_str(s)
    }
}

impl ReplayMemory {
    pub fn new(capacity: usize, per_stage_intake: usize) -> Self {
        ReplayMemory {
            entries: Vec::new(),
            capacity,
            per_stage_intake,
            next_seq: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    /// Labeled pairs for training batches.
    pub fn pairs(&self) -> Vec<(Vec<f64>, usize)> {
        self.entries
            .iter()
            .map(|e| (e.sample.clone(), e.label))
            .collect()
    }

    fn sort_entries(&mut self) {
        self.entries.sort_by(|a, b| {
            a.distance
                .partial_cmp(&b.distance)
                .unwrap()
                .then_with(|| a.origin_subject.cmp(&b.origin_subject))
                .then_with(|| a.seq.cmp(&b.seq))
        });
    }

    fn push_scored(&mut self, scored: &[ScoredSample]) {
        for s in scored {
            self.entries.push(ReplayEntry {
                sample: s.sample.clone(),
                label: s.label,
                distance: s.distance,
                origin_subject: s.origin_subject.clone(),
                seq: self.next_seq,
            });
            self.next_seq += 1;
        }
    }

    /// Take the first `per_stage_intake` scored samples, union them with the
    /// existing entries, re-sort ascending by distance, and truncate to
    /// capacity. A no-op for an empty scored list.
    pub fn merge(&mut self, scored: &[ScoredSample]) {
        let take = self.per_stage_intake.min(scored.len());
        self.push_scored(&scored[..take]);
        self.sort_entries();
        self.entries.truncate(self.capacity);
    }

    /// Quota-based insertion used by the per-subject variant: keeps the given
    /// entries without enforcing the global capacity.
    fn merge_unbounded(&mut self, scored: &[ScoredSample]) {
        self.push_scored(scored);
        self.sort_entries();
    }

    /// Count of entries per origin subject, in first-seen order of `origins`.
    pub fn count_by_origin(&self, origins: &[String]) -> Vec<usize> {
        origins
            .iter()
            .map(|o| {
                self.entries
                    .iter()
                    .filter(|e| &e.origin_subject == o)
                    .count()
            })
            .collect()
    }

    /// Snapshot for the report pipeline.
    pub fn snapshot_json(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            subject: &'a str,
            label: usize,
            distance: f64,
        }
        let rows: Vec<Row> = self
            .entries
            .iter()
            .map(|e| Row {
                subject: &e.origin_subject,
                label: e.label,
                distance: e.distance,
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("snapshot serialization cannot fail")
    }
}

/// Embed every sample and scale each embedding to unit norm (zero vectors
/// pass through). Memory distances are compared across stages while the
/// encoder keeps training, so scoring runs in direction space, where the
/// scale cannot drift between stages.
fn unit_embeddings(params: &ModelParams, domain: &SubjectDomain) -> Result<Vec<Vec<f64>>> {
    domain
        .samples
        .iter()
        .map(|x| {
            let mut e = params.embed(x)?;
            let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in e.iter_mut() {
                    *v /= norm;
                }
            }
            Ok(e)
        })
        .collect()
}

/// Density-based scoring of a source domain against the target.
///
/// Embeds and clusters the source, orders its samples by distance to their
/// nearest source centroid (dense core first, outliers last), then attaches
/// to each sample its distance to the nearest target centroid. The returned
/// order is the source-density order; the target distances are not re-sorted
/// here.
pub fn score_source_against_target(
    params: &ModelParams,
    source: &SubjectDomain,
    target: &SubjectDomain,
    dbscan_cfg: &DbscanConfig,
) -> Result<Vec<ScoredSample>> {
    if source.is_empty() {
        return Err(Error::Empty { what: "source domain" });
    }
    if target.is_empty() {
        return Err(Error::Empty { what: "target domain" });
    }
    let labels = source.labels.as_ref().ok_or_else(|| Error::Unlabeled {
        subject_id: source.subject_id.clone(),
    })?;

    let src_emb = unit_embeddings(params, source)?;
    let tgt_emb = unit_embeddings(params, target)?;

    let src_clusters = dbscan(&src_emb, dbscan_cfg)?;
    let tgt_clusters = dbscan(&tgt_emb, dbscan_cfg)?;
    score_with_centroids(
        source,
        labels,
        &src_emb,
        &src_clusters.centroids,
        &tgt_clusters.centroids,
    )
}

fn score_with_centroids(
    source: &SubjectDomain,
    labels: &[usize],
    src_emb: &[Vec<f64>],
    src_centroids: &[Vec<f64>],
    tgt_centroids: &[Vec<f64>],
) -> Result<Vec<ScoredSample>> {
    let h_src = centroid_distance_matrix(src_emb, src_centroids)?;
    let z_src = min_over_clusters(&h_src);
    let mut order: Vec<usize> = (0..src_emb.len()).collect();
    order.sort_by(|&a, &b| z_src[a].partial_cmp(&z_src[b]).unwrap().then(a.cmp(&b)));

    let sorted_emb: Vec<Vec<f64>> = order.iter().map(|&i| src_emb[i].clone()).collect();
    let h_tgt = centroid_distance_matrix(&sorted_emb, tgt_centroids)?;
    let z_tgt = min_over_clusters(&h_tgt);

    Ok(order
        .iter()
        .zip(z_tgt)
        .map(|(&i, distance)| ScoredSample {
            sample: source.samples[i].clone(),
            label: labels[i],
            distance,
            origin_subject: source.subject_id.clone(),
        })
        .collect())
}

/// Apply the configured replay strategy at the end of a stage.
pub fn replay_variant_select(
    variant: ReplayVariant,
    memory: &mut ReplayMemory,
    params: &ModelParams,
    source: &SubjectDomain,
    target: &SubjectDomain,
    dbscan_cfg: &DbscanConfig,
    seed: u64,
) -> Result<()> {
    match variant {
        ReplayVariant::None => Ok(()),
        ReplayVariant::Random => {
            let labels = source.labels.as_ref().ok_or_else(|| Error::Unlabeled {
                subject_id: source.subject_id.clone(),
            })?;
            // Uniform retention expressed through the same bounded sorted
            // store: random priorities stand in for distances.
            let order = seeding::shuffled_indices(source.len(), seed);
            let take = memory.per_stage_intake.min(order.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix(seed, "priority", 0));
            let scored: Vec<ScoredSample> = order[..take]
                .iter()
                .map(|&i| ScoredSample {
                    sample: source.samples[i].clone(),
                    label: labels[i],
                    distance: rng.random_range(0.0..1.0),
                    origin_subject: source.subject_id.clone(),
                })
                .collect();
            memory.merge(&scored);
            Ok(())
        }
        ReplayVariant::KmeansClosest => {
            let labels = source.labels.as_ref().ok_or_else(|| Error::Unlabeled {
                subject_id: source.subject_id.clone(),
            })?;
            let src_emb = unit_embeddings(params, source)?;
            let tgt_emb = unit_embeddings(params, target)?;
            // Cluster counts come from DBSCAN; the centroids come from Lloyd.
            let k_src = dbscan(&src_emb, dbscan_cfg)?.cluster_count;
            let k_tgt = dbscan(&tgt_emb, dbscan_cfg)?.cluster_count;
            let src_km = kmeans(&src_emb, k_src, 25, seeding::mix(seed, "kmeans-src", 0))?;
            let tgt_km = kmeans(&tgt_emb, k_tgt, 25, seeding::mix(seed, "kmeans-tgt", 0))?;
            let scored = score_with_centroids(
                source,
                labels,
                &src_emb,
                &src_km.centroids,
                &tgt_km.centroids,
            )?;
            memory.merge(&scored);
            Ok(())
        }
        ReplayVariant::DbscanPerSubject => {
            let scored = score_source_against_target(params, source, target, dbscan_cfg)?;
            let quota = 100.min(scored.len());
            memory.merge_unbounded(&scored[..quota]);
            Ok(())
        }
        ReplayVariant::DensityDictionary => {
            let scored = score_source_against_target(params, source, target, dbscan_cfg)?;
            memory.merge(&scored);
            Ok(())
        }
    }
}
