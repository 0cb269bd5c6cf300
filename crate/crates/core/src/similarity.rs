//! Ranking of unvisited source domains against the target by mini-batch
//! cosine similarity of encoder embeddings, with min-max normalization and a
//! threshold gate deciding which sources enter the current adaptation round.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::alignment::{mmd_value, MmdConfig};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::cosine_similarity;
use crate::seeding;
use crate::synthdata::SubjectDomain;

/// Source-selection settings: the normalized-similarity gate `gamma`, the
/// subject budget `top_s`, and the pairing batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub gamma: f64,
    pub top_s: usize,
    pub batch_size: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            gamma: 0.8,
            top_s: 40,
            batch_size: 16,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid_config("gamma must lie in (0, 1]"));
        }
        if self.top_s == 0 {
            return Err(Error::invalid_config("top_s must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid_config("batch_size must be positive"));
        }
        Ok(())
    }
}

/// Raw and min-max normalized per-source similarity scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTable {
    pub scores: BTreeMap<String, f64>,
    pub normalized: BTreeMap<String, f64>,
    pub computed_at_stage: usize,
}

/// JSON export of one ranking round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingReport {
    pub stage: usize,
    pub criterion: String,
    pub scores: BTreeMap<String, f64>,
    pub normalized: BTreeMap<String, f64>,
    pub selected: Vec<String>,
}

/// Mean over aligned mini-batches of the mean per-pair cosine similarity of
/// embeddings. Both domains are shuffled with the same seed; the shorter one
/// cycles. Deterministic given `(params, seed)`.
pub fn domain_similarity(
    params: &ModelParams,
    source: &SubjectDomain,
    target: &SubjectDomain,
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    batched_score(params, source, target, batch_size, seed, |xs, ys| {
        let mut total = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            total += cosine_similarity(x, y)?;
        }
        Ok(total / xs.len() as f64)
    })
}

fn batched_score<F>(
    params: &ModelParams,
    source: &SubjectDomain,
    target: &SubjectDomain,
    batch_size: usize,
    seed: u64,
    score_batch: F,
) -> Result<f64>
where
    F: Fn(&[Vec<f64>], &[Vec<f64>]) -> Result<f64>,
{
    if source.is_empty() {
        return Err(Error::Empty { what: "source domain" });
    }
    if target.is_empty() {
        return Err(Error::Empty { what: "target domain" });
    }
    if batch_size == 0 {
        return Err(Error::invalid_config("batch_size must be positive"));
    }
    let emb_s: Vec<Vec<f64>> = source
        .samples
        .iter()
        .map(|x| params.embed(x))
        .collect::<Result<_>>()?;
    let emb_t: Vec<Vec<f64>> = target
        .samples
        .iter()
        .map(|x| params.embed(x))
        .collect::<Result<_>>()?;
    let ns = emb_s.len();
    let nt = emb_t.len();
    let perm_s = seeding::shuffled_indices(ns, seed);
    let perm_t = seeding::shuffled_indices(nt, seed);
    let longest = ns.max(nt);
    let n_batches = longest.div_ceil(batch_size);
    let mut total = 0.0;
    for b in 0..n_batches {
        let len = batch_size.min(longest - b * batch_size);
        let mut xs = Vec::with_capacity(len);
        let mut ys = Vec::with_capacity(len);
        for j in 0..len {
            let pos = b * batch_size + j;
            xs.push(emb_s[perm_s[pos % ns]].clone());
            ys.push(emb_t[perm_t[pos % nt]].clone());
        }
        total += score_batch(&xs, &ys)?;
    }
    Ok(total / n_batches as f64)
}

fn min_max_normalize(scores: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let min = scores.values().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    scores
        .iter()
        .map(|(k, &v)| {
            // Degenerate spread (single candidate or all-equal) normalizes
            // to 1.0 so selection can still make progress.
            let n = if max > min { (v - min) / (max - min) } else { 1.0 };
            (k.clone(), n)
        })
        .collect()
}

fn rank_with<F>(
    unvisited: &[&SubjectDomain],
    stage: usize,
    score_fn: F,
) -> Result<SimilarityTable>
where
    F: Fn(&SubjectDomain) -> Result<f64>,
{
    if unvisited.is_empty() {
        return Err(Error::Empty { what: "unvisited sources" });
    }
    let mut scores = BTreeMap::new();
    for domain in unvisited {
        scores.insert(domain.subject_id.clone(), score_fn(domain)?);
    }
    let normalized = min_max_normalize(&scores);
    Ok(SimilarityTable {
        scores,
        normalized,
        computed_at_stage: stage,
    })
}

/// Score every unvisited source against the target by cosine similarity of
/// embeddings, then min-max scale the scores to `[0, 1]`.
pub fn rank_sources(
    params: &ModelParams,
    unvisited: &[&SubjectDomain],
    target: &SubjectDomain,
    cfg: &SelectionConfig,
    seed: u64,
    stage: usize,
) -> Result<SimilarityTable> {
    cfg.validate()?;
    rank_with(unvisited, stage, |domain| {
        domain_similarity(params, domain, target, cfg.batch_size, seed)
    })
}

/// Ranking variant scored by the negated kernel two-sample discrepancy
/// between embedding batches (higher still means closer). Used by the
/// ablation harness.
pub fn mmd_rank_sources(
    params: &ModelParams,
    unvisited: &[&SubjectDomain],
    target: &SubjectDomain,
    cfg: &SelectionConfig,
    seed: u64,
    stage: usize,
) -> Result<SimilarityTable> {
    cfg.validate()?;
    let mmd_cfg = MmdConfig::default();
    rank_with(unvisited, stage, |domain| {
        let d = batched_score(params, domain, target, cfg.batch_size, seed, |xs, ys| {
            mmd_value(xs, ys, &mmd_cfg)
        })?;
        Ok(-d)
    })
}

/// Subjects whose normalized score strictly exceeds `gamma`, ordered by
/// descending raw score (ties by ascending id), truncated to
/// `remaining_budget`. Falls back to the single best subject when nothing
/// clears the gate, so each round always makes progress.
pub fn select_above_threshold(
    table: &SimilarityTable,
    cfg: &SelectionConfig,
    remaining_budget: usize,
) -> Vec<String> {
    let mut passing: Vec<(&String, f64)> = table
        .normalized
        .iter()
        .filter(|(_, &n)| n > cfg.gamma)
        .map(|(id, _)| (id, table.scores[id]))
        .collect();
    if passing.is_empty() {
        let best = table
            .scores
            .iter()
            .max_by(|(ida, a), (idb, b)| {
                a.partial_cmp(b)
                    .unwrap()
                    .then_with(|| idb.cmp(ida))
            })
            .map(|(id, _)| id.clone());
        return best.into_iter().collect();
    }
    passing.sort_by(|(ida, a), (idb, b)| {
        b.partial_cmp(a).unwrap().then_with(|| ida.cmp(idb))
    });
    passing
        .into_iter()
        .take(remaining_budget)
        .map(|(id, _)| id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_subject, SubjectSpec};
    use proptest::prelude::*;

    fn domain_from(samples: Vec<Vec<f64>>, id: &str) -> SubjectDomain {
        let n = samples.len();
        let dim = samples[0].len();
        SubjectDomain {
            subject_id: id.to_string(),
            dim,
            samples,
            labels: None,
            train_idx: (0..n).collect(),
            test_idx: Vec::new(),
        }
    }

    fn shifted_spec(id: &str, shift: f64) -> SubjectSpec {
        SubjectSpec {
            subject_id: id.to_string(),
            class_count: 2,
            samples_per_class: vec![40, 40],
            mean_shift: vec![0.0, 0.0, shift, 0.0],
            rotation_seed: 0,
            noise_std: 0.3,
            dim: 4,
        }
    }

    #[test]
    fn identical_domains_score_one() {
        let params = ModelParams::init(3, 5, 2, 1).unwrap();
        let samples: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64 * 0.1, 1.0, -0.5])
            .collect();
        let a = domain_from(samples.clone(), "a");
        let b = domain_from(samples, "b");
        let s = domain_similarity(&params, &a, &b, 64, 7).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_batch_reduces_to_pairwise_by_index() {
        let params = ModelParams::init(2, 4, 2, 3).unwrap();
        let src = domain_from(vec![vec![1.0, 0.0], vec![0.0, 1.0]], "s");
        let tgt = domain_from(vec![vec![0.5, 0.5], vec![1.0, 1.0]], "t");
        let got = domain_similarity(&params, &src, &tgt, 10, 11).unwrap();
        let perm_s = seeding::shuffled_indices(2, 11);
        let perm_t = seeding::shuffled_indices(2, 11);
        let mut expect = 0.0;
        for j in 0..2 {
            let es = params.embed(&src.samples[perm_s[j]]).unwrap();
            let et = params.embed(&tgt.samples[perm_t[j]]).unwrap();
            expect += cosine_similarity(&es, &et).unwrap() / 2.0;
        }
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn hand_set_encoder_matches_average_of_two_cosines() {
        // Encoder: 1 input -> 2 hidden, weights [1, 0.5], no bias.
        let mut params = ModelParams::init(1, 2, 2, 0).unwrap();
        params.encoder_weights.set(0, 0, 1.0);
        params.encoder_weights.set(0, 1, 0.5);
        params.encoder_bias = vec![0.0, 0.0];
        let src = domain_from(vec![vec![0.4], vec![0.8]], "s");
        let tgt = domain_from(vec![vec![0.2], vec![1.0]], "t");
        let got = domain_similarity(&params, &src, &tgt, 2, 5).unwrap();
        let emb = |x: f64| vec![x.tanh(), (0.5 * x).tanh()];
        let perm_s = seeding::shuffled_indices(2, 5);
        let perm_t = seeding::shuffled_indices(2, 5);
        let c0 = cosine_similarity(&emb(src.samples[perm_s[0]][0]), &emb(tgt.samples[perm_t[0]][0]))
            .unwrap();
        let c1 = cosine_similarity(&emb(src.samples[perm_s[1]][0]), &emb(tgt.samples[perm_t[1]][0]))
            .unwrap();
        assert!((got - 0.5 * (c0 + c1)).abs() < 1e-12);
    }

    #[test]
    fn empty_domain_is_rejected() {
        let params = ModelParams::init(2, 2, 2, 0).unwrap();
        let empty = SubjectDomain {
            subject_id: "e".into(),
            dim: 2,
            samples: vec![],
            labels: None,
            train_idx: vec![],
            test_idx: vec![],
        };
        let full = domain_from(vec![vec![1.0, 0.0]], "f");
        assert!(domain_similarity(&params, &empty, &full, 4, 0).is_err());
        assert!(domain_similarity(&params, &full, &empty, 4, 0).is_err());
    }

    #[test]
    fn min_max_normalization_examples() {
        let mut scores = BTreeMap::new();
        scores.insert("A".to_string(), 0.2);
        scores.insert("B".to_string(), 0.6);
        scores.insert("C".to_string(), 1.0);
        let n = min_max_normalize(&scores);
        assert_eq!(n["A"], 0.0);
        assert!((n["B"] - 0.5).abs() < 1e-12);
        assert_eq!(n["C"], 1.0);

        let mut single = BTreeMap::new();
        single.insert("only".to_string(), 0.37);
        assert_eq!(min_max_normalize(&single)["only"], 1.0);
    }

    #[test]
    fn single_unvisited_source_normalizes_to_one() {
        let params = ModelParams::init(4, 6, 2, 2).unwrap();
        let s = generate_subject(&shifted_spec("s1", 1.0), 3).unwrap();
        let t = generate_subject(&shifted_spec("t", 0.0), 3).unwrap();
        let table =
            rank_sources(&params, &[&s], &t, &SelectionConfig::default(), 5, 0).unwrap();
        assert_eq!(table.normalized["s1"], 1.0);
    }

    #[test]
    fn ranking_is_invariant_to_listing_order() {
        let params = ModelParams::init(4, 6, 2, 2).unwrap();
        let a = generate_subject(&shifted_spec("a", 0.5), 3).unwrap();
        let b = generate_subject(&shifted_spec("b", 1.5), 3).unwrap();
        let c = generate_subject(&shifted_spec("c", 3.0), 3).unwrap();
        let t = generate_subject(&shifted_spec("t", 0.0), 3).unwrap();
        let cfg = SelectionConfig::default();
        let t1 = rank_sources(&params, &[&a, &b, &c], &t, &cfg, 5, 0).unwrap();
        let t2 = rank_sources(&params, &[&c, &a, &b], &t, &cfg, 5, 0).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn threshold_selection_examples() {
        let mut scores = BTreeMap::new();
        let mut normalized = BTreeMap::new();
        for (id, raw, norm) in [("A", 0.9, 0.9), ("B", 0.85, 0.85), ("C", 0.4, 0.4)] {
            scores.insert(id.to_string(), raw);
            normalized.insert(id.to_string(), norm);
        }
        let table = SimilarityTable {
            scores,
            normalized,
            computed_at_stage: 0,
        };
        let cfg = SelectionConfig {
            gamma: 0.8,
            ..SelectionConfig::default()
        };
        assert_eq!(select_above_threshold(&table, &cfg, 10), vec!["A", "B"]);
        assert_eq!(select_above_threshold(&table, &cfg, 1), vec!["A"]);
        let strict = SelectionConfig {
            gamma: 0.95,
            ..SelectionConfig::default()
        };
        // Nothing clears the gate: fall back to the single best.
        assert_eq!(select_above_threshold(&table, &strict, 10), vec!["A"]);
    }

    #[test]
    fn mmd_ranking_puts_identical_source_on_top() {
        let params = ModelParams::init(4, 6, 2, 9).unwrap();
        let t = generate_subject(&shifted_spec("t", 0.0), 3).unwrap();
        let twin = SubjectDomain {
            subject_id: "twin".to_string(),
            ..t.clone()
        };
        let far = generate_subject(&shifted_spec("far", 4.0), 3).unwrap();
        let cfg = SelectionConfig::default();
        let table = mmd_rank_sources(&params, &[&far, &twin], &t, &cfg, 5, 0).unwrap();
        assert!(table.scores["twin"] > table.scores["far"]);
        let again = mmd_rank_sources(&params, &[&twin, &far], &t, &cfg, 5, 0).unwrap();
        assert_eq!(table, again);
    }

    #[test]
    fn cosine_and_mmd_rankings_agree_on_separated_subjects() {
        let params = ModelParams::init(4, 6, 2, 4).unwrap();
        let t = generate_subject(&shifted_spec("t", 0.0), 7).unwrap();
        let subjects: Vec<SubjectDomain> = [0.5, 1.5, 3.0, 5.0]
            .iter()
            .enumerate()
            .map(|(i, &s)| generate_subject(&shifted_spec(&format!("s{i}"), s), 7).unwrap())
            .collect();
        let refs: Vec<&SubjectDomain> = subjects.iter().collect();
        let cfg = SelectionConfig::default();
        let cos = rank_sources(&params, &refs, &t, &cfg, 5, 0).unwrap();
        let mmd = mmd_rank_sources(&params, &refs, &t, &cfg, 5, 0).unwrap();
        let order = |table: &SimilarityTable| {
            let mut ids: Vec<&String> = table.scores.keys().collect();
            ids.sort_by(|a, b| {
                table.scores[*b]
                    .partial_cmp(&table.scores[*a])
                    .unwrap()
            });
            ids.into_iter().cloned().collect::<Vec<String>>()
        };
        assert_eq!(order(&cos), vec!["s0", "s1", "s2", "s3"]);
        assert_eq!(order(&mmd), vec!["s0", "s1", "s2", "s3"]);
    }

    proptest! {
        #[test]
        fn normalized_scores_stay_in_unit_interval(
            raw in proptest::collection::vec(-5.0f64..5.0, 1..8),
        ) {
            let scores: BTreeMap<String, f64> = raw
                .iter()
                .enumerate()
                .map(|(i, &v)| (format!("s{i}"), v))
                .collect();
            let n = min_max_normalize(&scores);
            prop_assert_eq!(n.len(), scores.len());
            for v in n.values() {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }

        #[test]
        fn selection_is_nonempty_and_bounded(
            raw in proptest::collection::vec(0.0f64..1.0, 1..8),
            gamma in 0.05f64..1.0,
            budget in 1usize..5,
        ) {
            let scores: BTreeMap<String, f64> = raw
                .iter()
                .enumerate()
                .map(|(i, &v)| (format!("s{i}"), v))
                .collect();
            let table = SimilarityTable {
                normalized: min_max_normalize(&scores),
                scores,
                computed_at_stage: 0,
            };
            let cfg = SelectionConfig { gamma, ..SelectionConfig::default() };
            let picked = select_above_threshold(&table, &cfg, budget);
            prop_assert!(!picked.is_empty());
            prop_assert!(picked.len() <= budget);
        }
    }
}
