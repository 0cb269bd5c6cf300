//! The progressive curriculum loop: rank unvisited sources, select those
//! above the similarity gate, adapt to each in order while mixing the
//! pseudo-labeled target and the replay memory into every batch, update the
//! memory, re-rank, and repeat until the subject budget is spent.
//!
//! Also hosts the source-introduction baselines (random/closest sample
//! packets, keep-all subject curriculum, source-only, oracle) that the
//! ablation harness compares against.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::alignment::{three_domain_discrepancy, MmdConfig};
use crate::clustering::DbscanConfig;
use crate::error::{Error, Result};
use crate::model::{backward, backward_scalar, sgd_step, GradientSet, ModelParams, SgdConfig};
use crate::numerics::{argmax, cosine_similarity};
use crate::pseudolabel::{assign_pseudo_labels, ThresholdSchedule};
use crate::replay::{replay_variant_select, ReplayMemory, ReplayVariant};
use crate::seeding;
use crate::similarity::{rank_sources, select_above_threshold, SelectionConfig, SimilarityTable};
use crate::synthdata::SubjectDomain;

/// How source data enters the curriculum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Pmsda,
    RandomSamples,
    ClosestSamples,
    ClosestSubjectsKeepAll,
    NoAdapt,
    Oracle,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pmsda" => Ok(Strategy::Pmsda),
            "random_samples" => Ok(Strategy::RandomSamples),
            "closest_samples" => Ok(Strategy::ClosestSamples),
            "closest_subjects_keep_all" => Ok(Strategy::ClosestSubjectsKeepAll),
            "no_adapt" => Ok(Strategy::NoAdapt),
            "oracle" => Ok(Strategy::Oracle),
            other => Err(Error::invalid_config(format!("unknown strategy {other:?}"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::Pmsda => "pmsda",
            Strategy::RandomSamples => "random_samples",
            Strategy::ClosestSamples => "closest_samples",
            Strategy::ClosestSubjectsKeepAll => "closest_subjects_keep_all",
            Strategy::NoAdapt => "no_adapt",
            Strategy::Oracle => "oracle",
        };
        f.write_str(s)
    }
}

/// Replay memory sizing and selection strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub per_stage_intake: usize,
    pub variant: ReplayVariant,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            capacity: 200,
            per_stage_intake: 200,
            variant: ReplayVariant::DensityDictionary,
        }
    }
}

/// Full training configuration. Defaults are tuned for the synthetic
/// benchmark; the threshold schedule and selection gate keep their standard
/// settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub selection: SelectionConfig,
    pub schedule: ThresholdSchedule,
    pub mmd: MmdConfig,
    pub sgd: SgdConfig,
    pub dbscan: DbscanConfig,
    pub replay: ReplayConfig,
    pub epochs_per_stage: usize,
    pub batch_size: usize,
    pub hidden_dim: usize,
    /// Augmentation noise std; `None` derives 0.1x the mean per-feature std
    /// of the target training data.
    pub augment_strength: Option<f64>,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            selection: SelectionConfig {
                gamma: 0.8,
                top_s: 6,
                batch_size: 16,
            },
            schedule: ThresholdSchedule::default(),
            mmd: MmdConfig::default(),
            sgd: SgdConfig {
                learning_rate: 0.02,
                classifier_lr: 0.045,
                momentum: 0.9,
                weight_decay: 5e-4,
            },
            dbscan: DbscanConfig::default(),
            replay: ReplayConfig::default(),
            epochs_per_stage: 10,
            batch_size: 16,
            hidden_dim: 4,
            augment_strength: None,
            strategy: Strategy::Pmsda,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        self.schedule.validate()?;
        self.mmd.validate()?;
        self.sgd.validate()?;
        self.dbscan.validate()?;
        if self.epochs_per_stage == 0 {
            return Err(Error::invalid_config("epochs_per_stage must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid_config("batch_size must be positive"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::invalid_config("hidden_dim must be positive"));
        }
        if self.replay.capacity == 0 || self.replay.per_stage_intake == 0 {
            return Err(Error::invalid_config(
                "replay capacity and per_stage_intake must be positive",
            ));
        }
        if let Some(s) = self.augment_strength {
            if s < 0.0 {
                return Err(Error::invalid_config("augment_strength must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// One trace row: per-epoch means of the loss components plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub stage: usize,
    pub epoch: usize,
    pub loss_source: f64,
    pub loss_target: f64,
    pub loss_replay: f64,
    pub loss_dis: f64,
    pub loss_total: f64,
    pub tau: f64,
    pub pseudo_label_count: usize,
    pub target_accuracy: f64,
    pub wall_seconds: f64,
}

/// Per-stage bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    pub subject_id: String,
    pub wall_seconds: f64,
    /// Per-batch training-mix size: source + replay + target stream lengths.
    pub mix_size: usize,
}

/// Append-only per-epoch records in (stage, epoch) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTrace {
    pub epochs: Vec<EpochRecord>,
}

pub const TRACE_CSV_HEADER: &str = "stage,epoch,loss_source,loss_target,loss_replay,loss_dis,loss_total,tau,pseudo_label_count,target_accuracy,epoch_wall_seconds";

impl MetricsTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.stage,
                r.epoch,
                r.loss_source,
                r.loss_target,
                r.loss_replay,
                r.loss_dis,
                r.loss_total,
                r.tau,
                r.pseudo_label_count,
                r.target_accuracy,
                r.wall_seconds,
            ));
        }
        out
    }
}

/// One ranking round: the table over the then-unvisited sources and the
/// subjects selected from it.
#[derive(Debug, Clone, Serialize)]
pub struct RankingRound {
    pub stage: usize,
    pub table: SimilarityTable,
    pub selected: Vec<String>,
}

/// Mutable curriculum state threaded through the run.
#[derive(Debug, Clone)]
pub struct CurriculumState {
    pub visited: Vec<String>,
    pub stage: usize,
    pub global_epoch: usize,
    pub memory: ReplayMemory,
    pub model: ModelParams,
    pub momentum: GradientSet,
    pub trace: MetricsTrace,
    pub stages: Vec<StageRecord>,
    pub rounds: Vec<RankingRound>,
    pub re_rank_count: usize,
    pub total_wall_seconds: f64,
}

/// Final per-run summary, serialized next to the trace CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    pub seed: u64,
    pub visited_order: Vec<String>,
    pub final_accuracy: f64,
    pub wall_time_seconds: f64,
    pub re_rank_count: usize,
    pub stage_wall_seconds: Vec<f64>,
}

impl CurriculumState {
    /// Fresh state with a seeded model sized from the data.
    pub fn init(
        sources: &[SubjectDomain],
        target: &SubjectDomain,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if sources.is_empty() {
            return Err(Error::Empty { what: "sources" });
        }
        for s in sources.iter().chain(std::iter::once(target)) {
            s.validate()?;
            if s.dim != target.dim {
                return Err(Error::DimensionMismatch {
                    context: "domain dims",
                    left: target.dim,
                    right: s.dim,
                });
            }
        }
        let class_count = infer_class_count(sources, target)?;
        let model = ModelParams::init(
            target.dim,
            cfg.hidden_dim,
            class_count,
            seeding::mix(cfg.seed, "model-init", 0),
        )?;
        let momentum = GradientSet::zeros_like(&model);
        Ok(CurriculumState {
            visited: Vec::new(),
            stage: 0,
            global_epoch: 0,
            memory: ReplayMemory::new(cfg.replay.capacity, cfg.replay.per_stage_intake),
            model,
            momentum,
            trace: MetricsTrace::default(),
            stages: Vec::new(),
            rounds: Vec::new(),
            re_rank_count: 0,
            total_wall_seconds: 0.0,
        })
    }

    pub fn final_accuracy(&self) -> f64 {
        self.trace
            .epochs
            .last()
            .map(|r| r.target_accuracy)
            .unwrap_or(f64::NAN)
    }

    pub fn summary(&self, strategy: Strategy, seed: u64) -> RunSummary {
        RunSummary {
            strategy: strategy.to_string(),
            seed,
            visited_order: self.visited.clone(),
            final_accuracy: self.final_accuracy(),
            wall_time_seconds: self.total_wall_seconds,
            re_rank_count: self.re_rank_count,
            stage_wall_seconds: self.stages.iter().map(|s| s.wall_seconds).collect(),
        }
    }
}

fn infer_class_count(sources: &[SubjectDomain], target: &SubjectDomain) -> Result<usize> {
    let mut max_label = 0;
    let mut any = false;
    for d in sources.iter().chain(std::iter::once(target)) {
        if let Some(labels) = &d.labels {
            for &l in labels {
                max_label = max_label.max(l);
                any = true;
            }
        }
    }
    if !any {
        return Err(Error::Empty { what: "labeled domains" });
    }
    Ok((max_label + 1).max(2))
}

/// Fraction of samples whose predicted class equals the label.
pub fn evaluate(params: &ModelParams, domain: &SubjectDomain) -> Result<f64> {
    if domain.is_empty() {
        return Err(Error::Empty { what: "evaluation domain" });
    }
    let labels = domain.labels.as_ref().ok_or_else(|| Error::Unlabeled {
        subject_id: domain.subject_id.clone(),
    })?;
    let mut correct = 0usize;
    for (x, &y) in domain.samples.iter().zip(labels) {
        let probs = params.predict_probs(x)?;
        if argmax(&probs) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / domain.samples.len() as f64)
}

fn mean_feature_std(samples: &[Vec<f64>]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let dim = samples[0].len();
    let n = samples.len() as f64;
    let mut total = 0.0;
    for d in 0..dim {
        let mean = samples.iter().map(|s| s[d]).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s[d] - mean) * (s[d] - mean)).sum::<f64>() / n;
        total += var.sqrt();
    }
    total / dim as f64
}

fn resolve_strength(cfg: &TrainConfig, target_train: &SubjectDomain) -> f64 {
    cfg.augment_strength
        .unwrap_or_else(|| 0.1 * mean_feature_std(&target_train.samples))
}

/// Accuracy on the held-out target split, falling back to the whole domain
/// when no split exists; NaN for unlabeled targets.
fn target_accuracy(params: &ModelParams, target: &SubjectDomain) -> f64 {
    if target.labels.is_none() {
        return f64::NAN;
    }
    let test = target.test_subdomain();
    let eval_domain = if test.is_empty() { target } else { &test };
    evaluate(params, eval_domain).unwrap_or(f64::NAN)
}

/// Adapt to one source for `epochs_per_stage` epochs, mixing the source,
/// the pseudo-labeled target, and the replay stream into every batch.
///
/// On the first stage, while the memory is still empty, the current source
/// also serves as the replay stream (unless the replay variant is `none`, in
/// which case the replay terms stay switched off).
pub fn stage_step(
    state: &mut CurriculumState,
    source: &SubjectDomain,
    target: &SubjectDomain,
    cfg: &TrainConfig,
) -> Result<()> {
    let source_pairs = source.labeled_pairs()?;
    if source_pairs.is_empty() {
        return Err(Error::Empty { what: "source domain" });
    }
    let replay_pairs = if cfg.replay.variant == ReplayVariant::None {
        None
    } else if state.memory.is_empty() {
        Some(source_pairs.clone())
    } else {
        Some(state.memory.pairs())
    };
    stage_core(
        state,
        &source.subject_id.clone(),
        &source_pairs,
        replay_pairs,
        target,
        cfg,
    )
}

fn stage_core(
    state: &mut CurriculumState,
    subject_id: &str,
    source_pairs: &[(Vec<f64>, usize)],
    replay_pairs: Option<Vec<(Vec<f64>, usize)>>,
    target: &SubjectDomain,
    cfg: &TrainConfig,
) -> Result<()> {
    if source_pairs.is_empty() {
        return Err(Error::Empty { what: "source domain" });
    }
    let target_train = target.train_subdomain();
    if target_train.is_empty() {
        return Err(Error::Empty { what: "target domain" });
    }
    let strength = resolve_strength(cfg, &target_train);
    let stage = state.stage;
    let batch = cfg.batch_size;
    let n_src = source_pairs.len();
    let n_tgt = target_train.len();
    let n_rep = replay_pairs.as_ref().map_or(0, |r| r.len());
    let mix_size = n_src + n_rep + n_tgt;
    let stage_start = Instant::now();

    for epoch in 0..cfg.epochs_per_stage {
        let epoch_start = Instant::now();
        let tau = cfg.schedule.current_tau(state.global_epoch);
        let pseudo = assign_pseudo_labels(
            &state.model,
            &target_train,
            &cfg.schedule,
            state.global_epoch,
            strength,
            seeding::mix(cfg.seed, "pseudo", state.global_epoch as u64),
        )?;
        let pl_map = pseudo.label_by_index();

        let shuffle_base = seeding::mix(cfg.seed, "epoch-shuffle", (stage * 100_000 + epoch) as u64);
        let src_order = seeding::shuffled_indices(n_src, seeding::mix(shuffle_base, "src", 0));
        let tgt_order = seeding::shuffled_indices(n_tgt, seeding::mix(shuffle_base, "tgt", 0));
        let rep_order = replay_pairs
            .as_ref()
            .map(|r| seeding::shuffled_indices(r.len(), seeding::mix(shuffle_base, "rep", 0)));

        let longest = n_src.max(n_tgt).max(n_rep);
        let n_batches = longest.div_ceil(batch);
        let mut sums = [0.0f64; 5];

        for b in 0..n_batches {
            let src_batch: Vec<(&[f64], usize)> = (0..batch)
                .map(|j| {
                    let (x, y) = &source_pairs[src_order[(b * batch + j) % n_src]];
                    (x.as_slice(), *y)
                })
                .collect();
            let tgt_batch_idx: Vec<usize> = (0..batch)
                .map(|j| tgt_order[(b * batch + j) % n_tgt])
                .collect();
            let rep_batch: Option<Vec<(&[f64], usize)>> =
                replay_pairs.as_ref().map(|pairs| {
                    let order = rep_order.as_ref().unwrap();
                    (0..batch)
                        .map(|j| {
                            let (x, y) = &pairs[order[(b * batch + j) % pairs.len()]];
                            (x.as_slice(), *y)
                        })
                        .collect()
                });

            let ones_src = vec![1.0; src_batch.len()];
            let (loss_src, mut grads) = backward(&state.model, &src_batch, &ones_src)?;

            let pl_batch: Vec<(&[f64], usize)> = tgt_batch_idx
                .iter()
                .filter_map(|&i| {
                    pl_map
                        .get(&i)
                        .map(|&label| (target_train.samples[i].as_slice(), label))
                })
                .collect();
            let loss_tgt = if pl_batch.is_empty() {
                0.0
            } else {
                let ones = vec![1.0; pl_batch.len()];
                let (l, g) = backward(&state.model, &pl_batch, &ones)?;
                grads.add(&g);
                l
            };

            let loss_rep = match &rep_batch {
                Some(rb) => {
                    let ones = vec![1.0; rb.len()];
                    let (l, g) = backward(&state.model, rb, &ones)?;
                    grads.add(&g);
                    l
                }
                None => 0.0,
            };

            // Discrepancy over the batch embeddings; gradients reach only
            // the encoder.
            let ns = src_batch.len();
            let nt = tgt_batch_idx.len();
            let mut inputs: Vec<&[f64]> = Vec::with_capacity(mix_size);
            inputs.extend(src_batch.iter().map(|(x, _)| *x));
            inputs.extend(tgt_batch_idx.iter().map(|&i| target_train.samples[i].as_slice()));
            if let Some(rb) = &rep_batch {
                inputs.extend(rb.iter().map(|(x, _)| *x));
            }
            let hidden = state.model.hidden_dim;
            let mmd_cfg = cfg.mmd.clone();
            let (loss_dis, g_dis) = backward_scalar(&state.model, &inputs, move |embs| {
                let (s_emb, rest) = embs.split_at(ns);
                let (t_emb, r_emb) = rest.split_at(nt);
                match three_domain_discrepancy(s_emb, t_emb, r_emb, &mmd_cfg) {
                    Ok(res) => {
                        let mut g = res.grad_source;
                        g.extend(res.grad_target);
                        g.extend(res.grad_replay);
                        (res.value, g)
                    }
                    Err(_) => (0.0, vec![vec![0.0; hidden]; embs.len()]),
                }
            })?;
            grads.add(&g_dis);

            sgd_step(&mut state.model, &grads, &cfg.sgd, &mut state.momentum);

            sums[0] += loss_src;
            sums[1] += loss_tgt;
            sums[2] += loss_rep;
            sums[3] += loss_dis;
            sums[4] += loss_src + loss_tgt + loss_rep + loss_dis;
        }

        let nb = n_batches as f64;
        state.trace.epochs.push(EpochRecord {
            stage,
            epoch,
            loss_source: sums[0] / nb,
            loss_target: sums[1] / nb,
            loss_replay: sums[2] / nb,
            loss_dis: sums[3] / nb,
            loss_total: sums[4] / nb,
            tau,
            pseudo_label_count: pseudo.len(),
            target_accuracy: target_accuracy(&state.model, target),
            wall_seconds: epoch_start.elapsed().as_secs_f64(),
        });
        state.global_epoch += 1;
    }

    state.stages.push(StageRecord {
        stage,
        subject_id: subject_id.to_string(),
        wall_seconds: stage_start.elapsed().as_secs_f64(),
        mix_size,
    });
    state.stage += 1;
    Ok(())
}

/// Dispatch on the configured strategy.
pub fn run(
    sources: &[SubjectDomain],
    target: &SubjectDomain,
    cfg: &TrainConfig,
) -> Result<(ModelParams, CurriculumState)> {
    match cfg.strategy {
        Strategy::Pmsda => run_curriculum(sources, target, cfg),
        other => run_baseline(other, sources, target, cfg),
    }
}

/// The progressive curriculum: rank, select above the gate, adapt stage by
/// stage, update the replay memory, re-rank, until `top_s` subjects are
/// visited or the pool is exhausted.
pub fn run_curriculum(
    sources: &[SubjectDomain],
    target: &SubjectDomain,
    cfg: &TrainConfig,
) -> Result<(ModelParams, CurriculumState)> {
    if cfg.strategy != Strategy::Pmsda {
        return Err(Error::invalid_config(
            "run_curriculum requires the pmsda strategy",
        ));
    }
    let run_start = Instant::now();
    let mut state = CurriculumState::init(sources, target, cfg)?;
    let views: BTreeMap<String, SubjectDomain> = sources
        .iter()
        .map(|s| (s.subject_id.clone(), s.train_subdomain()))
        .collect();
    let target_train = target.train_subdomain();
    let budget = cfg.selection.top_s.min(sources.len());
    let mut round = 0u64;

    while state.visited.len() < budget {
        let unvisited: Vec<&SubjectDomain> = views
            .iter()
            .filter(|(id, _)| !state.visited.contains(id))
            .map(|(_, v)| v)
            .collect();
        if unvisited.is_empty() {
            break;
        }
        let table = rank_sources(
            &state.model,
            &unvisited,
            &target_train,
            &cfg.selection,
            seeding::mix(cfg.seed, "rank", round),
            state.stage,
        )?;
        let selected =
            select_above_threshold(&table, &cfg.selection, budget - state.visited.len());
        if round > 0 {
            state.re_rank_count += 1;
        }
        state.rounds.push(RankingRound {
            stage: state.stage,
            table,
            selected: selected.clone(),
        });
        for id in selected {
            let view = &views[&id];
            stage_step(&mut state, view, target, cfg)?;
            let replay_start = Instant::now();
            replay_variant_select(
                cfg.replay.variant,
                &mut state.memory,
                &state.model,
                view,
                &target_train,
                &cfg.dbscan,
                seeding::mix(cfg.seed, "replay", state.stage as u64),
            )?;
            if let Some(last) = state.stages.last_mut() {
                last.wall_seconds += replay_start.elapsed().as_secs_f64();
            }
            state.visited.push(id);
        }
        round += 1;
    }
    state.total_wall_seconds = run_start.elapsed().as_secs_f64();
    Ok((state.model.clone(), state))
}

/// Source-introduction baselines and reference bounds.
pub fn run_baseline(
    strategy: Strategy,
    sources: &[SubjectDomain],
    target: &SubjectDomain,
    cfg: &TrainConfig,
) -> Result<(ModelParams, CurriculumState)> {
    if strategy == Strategy::Pmsda {
        return Err(Error::invalid_config(
            "run_baseline requires a non-pmsda strategy",
        ));
    }
    match strategy {
        Strategy::RandomSamples | Strategy::ClosestSamples => {
            run_packets(strategy, sources, target, cfg)
        }
        Strategy::ClosestSubjectsKeepAll => run_keep_all(sources, target, cfg),
        Strategy::NoAdapt => {
            let mut pool = Vec::new();
            for s in sources {
                pool.extend(s.train_subdomain().labeled_pairs()?);
            }
            let stages = cfg.selection.top_s.min(sources.len());
            let visited = sources.iter().map(|s| s.subject_id.clone()).collect();
            run_supervised(sources, target, cfg, pool, stages, visited)
        }
        Strategy::Oracle => {
            let pool = target.train_subdomain().labeled_pairs()?;
            let stages = cfg.selection.top_s.min(sources.len());
            run_supervised(sources, target, cfg, pool, stages, vec![target.subject_id.clone()])
        }
        Strategy::Pmsda => unreachable!(),
    }
}

/// Plain supervised training over a fixed labeled pool; no target terms, no
/// replay, no alignment. Used by the source-only and oracle bounds.
fn run_supervised(
    sources: &[SubjectDomain],
    target: &SubjectDomain,
    cfg: &TrainConfig,
    pool: Vec<(Vec<f64>, usize)>,
    stages: usize,
    visited: Vec<String>,
) -> Result<(ModelParams, CurriculumState)> {
    if pool.is_empty() {
        return Err(Error::Empty { what: "training pool" });
    }
    let run_start = Instant::now();
    let mut state = CurriculumState::init(sources, target, cfg)?;
    let n = pool.len();
    let batch = cfg.batch_size;
    for stage in 0..stages {
        let stage_start = Instant::now();
        for epoch in 0..cfg.epochs_per_stage {
            let epoch_start = Instant::now();
            let tau = cfg.schedule.current_tau(state.global_epoch);
            let order = seeding::shuffled_indices(
                n,
                seeding::mix(cfg.seed, "sup-shuffle", (stage * 100_000 + epoch) as u64),
            );
            let n_batches = n.div_ceil(batch);
            let mut loss_sum = 0.0;
            for b in 0..n_batches {
                let hi = ((b + 1) * batch).min(n);
                let batch_pairs: Vec<(&[f64], usize)> = order[b * batch..hi]
                    .iter()
                    .map(|&i| (pool[i].0.as_slice(), pool[i].1))
                    .collect();
                let ones = vec![1.0; batch_pairs.len()];
                let (loss, grads) = backward(&state.model, &batch_pairs, &ones)?;
                sgd_step(&mut state.model, &grads, &cfg.sgd, &mut state.momentum);
                loss_sum += loss;
            }
            let mean_loss = loss_sum / n_batches as f64;
            state.trace.epochs.push(EpochRecord {
                stage,
                epoch,
                loss_source: mean_loss,
                loss_target: 0.0,
                loss_replay: 0.0,
                loss_dis: 0.0,
                loss_total: mean_loss,
                tau,
                pseudo_label_count: 0,
                target_accuracy: target_accuracy(&state.model, target),
                wall_seconds: epoch_start.elapsed().as_secs_f64(),
            });
            state.global_epoch += 1;
        }
        state.stages.push(StageRecord {
            stage,
            subject_id: format!("pool-{stage}"),
            wall_seconds: stage_start.elapsed().as_secs_f64(),
            mix_size: n,
        });
        state.stage += 1;
    }
    state.visited = visited;
    state.total_wall_seconds = run_start.elapsed().as_secs_f64();
    Ok((state.model.clone(), state))
}

/// Progressive sample packets: random draws or globally closest samples by
/// embedding cosine to the mean target embedding, re-ranked with the current
/// model at every stage. Each packet is a stage-equivalent pseudo-subject
/// (the median source training size).
fn run_packets(
    strategy: Strategy,
    sources: &[SubjectDomain],
    target: &SubjectDomain,
    cfg: &TrainConfig,
) -> Result<(ModelParams, CurriculumState)> {
    let run_start = Instant::now();
    let mut state = CurriculumState::init(sources, target, cfg)?;
    let target_train = target.train_subdomain();

    let mut pool: Vec<(Vec<f64>, usize)> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    for s in sources {
        let pairs = s.train_subdomain().labeled_pairs()?;
        sizes.push(pairs.len());
        pool.extend(pairs);
    }
    sizes.sort_unstable();
    let packet_size = sizes[sizes.len() / 2].max(1);
    let max_stages = pool.len().div_ceil(packet_size);
    let stages = cfg.selection.top_s.min(max_stages);

    let mut remaining: Vec<usize> = (0..pool.len()).collect();
    if strategy == Strategy::RandomSamples {
        let order = seeding::shuffled_indices(pool.len(), seeding::mix(cfg.seed, "packets", 0));
        remaining = order;
    }

    for k in 0..stages {
        if remaining.is_empty() {
            break;
        }
        let take = packet_size.min(remaining.len());
        let picked: Vec<usize> = match strategy {
            Strategy::RandomSamples => remaining.drain(..take).collect(),
            Strategy::ClosestSamples => {
                // Mean cosine of each pool sample's embedding against every
                // target embedding, under the current model.
                let target_embs: Vec<Vec<f64>> = target_train
                    .samples
                    .iter()
                    .map(|x| state.model.embed(x))
                    .collect::<Result<_>>()?;
                let nt = target_embs.len() as f64;
                let mut scored: Vec<(usize, f64)> = Vec::with_capacity(remaining.len());
                for &i in &remaining {
                    let emb = state.model.embed(&pool[i].0)?;
                    let mut total = 0.0;
                    for t in &target_embs {
                        total += cosine_similarity(&emb, t).unwrap_or(0.0);
                    }
                    scored.push((i, total / nt));
                }
                scored.sort_by(|(ia, a), (ib, b)| {
                    b.partial_cmp(a).unwrap().then_with(|| ia.cmp(ib))
                });
                let picked: Vec<usize> = scored[..take].iter().map(|(i, _)| *i).collect();
                remaining.retain(|i| !picked.contains(i));
                picked
            }
            _ => unreachable!(),
        };
        let packet_id = format!("packet-{k:02}");
        let packet = SubjectDomain {
            subject_id: packet_id.clone(),
            dim: target.dim,
            samples: picked.iter().map(|&i| pool[i].0.clone()).collect(),
            labels: Some(picked.iter().map(|&i| pool[i].1).collect()),
            train_idx: (0..picked.len()).collect(),
            test_idx: Vec::new(),
        };
        stage_step(&mut state, &packet, target, cfg)?;
        let replay_start = Instant::now();
        replay_variant_select(
            cfg.replay.variant,
            &mut state.memory,
            &state.model,
            &packet,
            &target_train,
            &cfg.dbscan,
            seeding::mix(cfg.seed, "replay", state.stage as u64),
        )?;
        if let Some(last) = state.stages.last_mut() {
            last.wall_seconds += replay_start.elapsed().as_secs_f64();
        }
        state.visited.push(packet_id);
    }
    state.total_wall_seconds = run_start.elapsed().as_secs_f64();
    Ok((state.model.clone(), state))
}

/// Subject curriculum without a replay memory: every visited subject's full
/// training data stays in the source mix, so the per-stage cost grows with
/// each stage.
fn run_keep_all(
    sources: &[SubjectDomain],
    target: &SubjectDomain,
    cfg: &TrainConfig,
) -> Result<(ModelParams, CurriculumState)> {
    let run_start = Instant::now();
    let mut state = CurriculumState::init(sources, target, cfg)?;
    let views: BTreeMap<String, SubjectDomain> = sources
        .iter()
        .map(|s| (s.subject_id.clone(), s.train_subdomain()))
        .collect();
    let target_train = target.train_subdomain();
    let budget = cfg.selection.top_s.min(sources.len());
    let mut round = 0u64;
    let mut mix: Vec<(Vec<f64>, usize)> = Vec::new();

    while state.visited.len() < budget {
        let unvisited: Vec<&SubjectDomain> = views
            .iter()
            .filter(|(id, _)| !state.visited.contains(id))
            .map(|(_, v)| v)
            .collect();
        if unvisited.is_empty() {
            break;
        }
        let table = rank_sources(
            &state.model,
            &unvisited,
            &target_train,
            &cfg.selection,
            seeding::mix(cfg.seed, "rank", round),
            state.stage,
        )?;
        let selected =
            select_above_threshold(&table, &cfg.selection, budget - state.visited.len());
        if round > 0 {
            state.re_rank_count += 1;
        }
        state.rounds.push(RankingRound {
            stage: state.stage,
            table,
            selected: selected.clone(),
        });
        for id in selected {
            mix.extend(views[&id].labeled_pairs()?);
            stage_core(&mut state, &id, &mix, None, target, cfg)?;
            state.visited.push(id);
        }
        round += 1;
    }
    state.total_wall_seconds = run_start.elapsed().as_secs_f64();
    Ok((state.model.clone(), state))
}
