//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use pmsda_core::model::ModelParams;
use pmsda_core::replay::ReplayVariant;
use pmsda_core::similarity::{mmd_rank_sources, rank_sources, select_above_threshold, RankingReport};
use pmsda_core::stats::{mean, median, std_dev};
use pmsda_core::synthdata::SubjectDomain;
use pmsda_core::trainer::{self, RunSummary, Strategy};
use pmsda_core::CurriculumState;

use crate::config::{DatasetManifest, ExperimentConfig};
use crate::CliError;

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

/// Generate benchmark subject files plus a manifest.
pub fn cmd_generate(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<(), CliError> {
    let bench = cfg
        .benchmark
        .as_ref()
        .ok_or_else(|| CliError::config("generate requires a benchmark section"))?;
    let seed = cfg.seeds[0];
    let (sources, target) = cfg.dataset(seed)?;
    let out_dir = cfg.out_dir(out)?;
    ensure_dir(&out_dir)?;

    write_file(&out_dir.join("target.json"), &target.to_json())?;
    let mut source_files = Vec::new();
    for s in &sources {
        let name = format!("source_{}.json", s.subject_id);
        write_file(&out_dir.join(&name), &s.to_json())?;
        source_files.push(name);
    }
    let manifest = DatasetManifest {
        benchmark: bench.name.clone(),
        n_sources: bench.n_sources,
        seed,
        target: "target.json".to_string(),
        sources: source_files,
    };
    write_file(
        &out_dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).expect("manifest serialization cannot fail"),
    )?;
    println!(
        "generated benchmark {} with {} sources into {}",
        bench.name,
        sources.len(),
        out_dir.display()
    );
    Ok(())
}

/// Rank every source against the target and emit the table as JSON.
pub fn cmd_rank(
    cfg: &ExperimentConfig,
    criterion_flag: Option<&str>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let criterion = criterion_flag.unwrap_or(&cfg.criterion).to_string();
    if criterion != "cosine" && criterion != "mmd" {
        return Err(CliError::config(format!(
            "unknown criterion {criterion:?} (expected cosine or mmd)"
        )));
    }
    let seed = cfg.seeds[0];
    let (sources, target) = cfg.dataset(seed)?;
    let target_train = target.train_subdomain();

    let model = match &cfg.model_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::io(format!("cannot read model {}: {e}", path.display())))?;
            ModelParams::from_checkpoint_json(&text).map_err(|e| CliError::io(e.to_string()))?
        }
        None => {
            let class_count = sources
                .iter()
                .filter_map(|s| s.labels.as_ref())
                .flatten()
                .max()
                .map(|m| m + 1)
                .unwrap_or(2)
                .max(2);
            ModelParams::init(
                target.dim,
                cfg.train.hidden_dim,
                class_count,
                pmsda_core::seeding::mix(seed, "model-init", 0),
            )
            .map_err(|e| CliError::config(e.to_string()))?
        }
    };

    let refs: Vec<&SubjectDomain> = sources.iter().collect();
    let views: Vec<SubjectDomain> = refs.iter().map(|s| s.train_subdomain()).collect();
    let view_refs: Vec<&SubjectDomain> = views.iter().collect();
    let rank_seed = pmsda_core::seeding::mix(seed, "rank", 0);
    let table = if criterion == "mmd" {
        mmd_rank_sources(&model, &view_refs, &target_train, &cfg.train.selection, rank_seed, 0)
    } else {
        rank_sources(&model, &view_refs, &target_train, &cfg.train.selection, rank_seed, 0)
    }
    .map_err(|e| CliError::config(e.to_string()))?;
    let selected = select_above_threshold(&table, &cfg.train.selection, cfg.train.selection.top_s);
    let report = RankingReport {
        stage: 0,
        criterion,
        scores: table.scores.clone(),
        normalized: table.normalized.clone(),
        selected,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serialization cannot fail");
    if let Ok(dir) = cfg.out_dir(out) {
        ensure_dir(&dir)?;
        write_file(&dir.join("ranking.json"), &json)?;
    }
    println!("{json}");
    Ok(())
}

#[derive(Serialize)]
struct Aggregate {
    strategy: String,
    seeds: Vec<u64>,
    mean_final_accuracy: f64,
    std_final_accuracy: f64,
    per_seed_accuracy: Vec<f64>,
}

fn run_one_seed(
    cfg: &ExperimentConfig,
    strategy: Strategy,
    seed: u64,
) -> Result<(u64, CurriculumState, ModelParams), CliError> {
    let (sources, target) = cfg.dataset(seed)?;
    let mut train = cfg.train.clone();
    train.seed = seed;
    train.strategy = strategy;
    let (model, state) =
        trainer::run(&sources, &target, &train).map_err(|e| CliError::config(e.to_string()))?;
    Ok((seed, state, model))
}

fn write_run_outputs(
    out_dir: &Path,
    strategy: Strategy,
    results: &[(u64, CurriculumState, ModelParams)],
) -> Result<Aggregate, CliError> {
    for (seed, state, model) in results {
        write_file(
            &out_dir.join(format!("trace_seed{seed}.csv")),
            &state.trace.to_csv(),
        )?;
        let summary = state.summary(strategy, *seed);
        write_file(
            &out_dir.join(format!("summary_seed{seed}.json")),
            &serde_json::to_string_pretty(&summary).expect("summary serialization cannot fail"),
        )?;
        write_file(
            &out_dir.join(format!("model_seed{seed}.json")),
            &model.to_checkpoint_json(),
        )?;
    }
    let accs: Vec<f64> = results.iter().map(|(_, s, _)| s.final_accuracy()).collect();
    let aggregate = Aggregate {
        strategy: strategy.to_string(),
        seeds: results.iter().map(|(s, _, _)| *s).collect(),
        mean_final_accuracy: mean(&accs),
        std_final_accuracy: std_dev(&accs),
        per_seed_accuracy: accs,
    };
    write_file(
        &out_dir.join("aggregate.json"),
        &serde_json::to_string_pretty(&aggregate).expect("aggregate serialization cannot fail"),
    )?;
    Ok(aggregate)
}

/// Run the configured strategy across all seeds; per-seed traces, summaries,
/// and checkpoints plus a cross-seed aggregate.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    seeds_flag: Option<Vec<u64>>,
    strategy_flag: Option<&str>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let seeds = seeds_flag.unwrap_or_else(|| cfg.seeds.clone());
    if seeds.is_empty() {
        return Err(CliError::config("seed list must not be empty"));
    }
    let strategy: Strategy = match strategy_flag {
        Some(s) => s.parse().map_err(|e: pmsda_core::Error| CliError::config(e.to_string()))?,
        None => cfg.train.strategy,
    };
    let out_dir = cfg.out_dir(out)?;
    ensure_dir(&out_dir)?;

    let mut results: Vec<(u64, CurriculumState, ModelParams)> = seeds
        .par_iter()
        .map(|&seed| run_one_seed(cfg, strategy, seed))
        .collect::<Result<_, _>>()?;
    results.sort_by_key(|(seed, _, _)| *seed);
    let aggregate = write_run_outputs(&out_dir, strategy, &results)?;
    println!(
        "strategy {} over {} seeds: accuracy {:.4} +/- {:.4}",
        aggregate.strategy,
        aggregate.seeds.len(),
        aggregate.mean_final_accuracy,
        aggregate.std_final_accuracy
    );
    Ok(())
}

const GAMMA_DEFAULTS: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
const TAU0_DEFAULTS: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
const REPLAY_DEFAULTS: [&str; 5] = [
    "none",
    "random",
    "kmeans_closest",
    "dbscan_per_subject",
    "density_dictionary",
];
const STRATEGY_DEFAULTS: [&str; 4] = [
    "pmsda",
    "random_samples",
    "closest_samples",
    "closest_subjects_keep_all",
];

/// Sweep one axis over its values, running every configured seed per value.
pub fn cmd_ablate(
    cfg: &ExperimentConfig,
    axis: &str,
    values_flag: Option<&str>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let values: Vec<String> = match values_flag {
        Some(list) => list.split(',').map(|v| v.trim().to_string()).collect(),
        None => match axis {
            "gamma" => GAMMA_DEFAULTS.iter().map(|v| v.to_string()).collect(),
            "tau0" => TAU0_DEFAULTS.iter().map(|v| v.to_string()).collect(),
            "replay_variant" => REPLAY_DEFAULTS.iter().map(|v| v.to_string()).collect(),
            "source_strategy" => STRATEGY_DEFAULTS.iter().map(|v| v.to_string()).collect(),
            other => {
                return Err(CliError::config(format!(
                    "unknown ablation axis {other:?} (expected replay_variant, source_strategy, gamma, or tau0)"
                )))
            }
        },
    };

    // Materialize one patched config per value; value parsing happens up
    // front so a bad sweep fails before any training starts.
    let mut patched: Vec<(String, ExperimentConfig)> = Vec::new();
    for value in &values {
        let mut c = cfg.clone();
        match axis {
            "gamma" => {
                let g: f64 = value
                    .parse()
                    .map_err(|_| CliError::config(format!("invalid gamma {value:?}")))?;
                c.train.selection.gamma = g;
            }
            "tau0" => {
                let t: f64 = value
                    .parse()
                    .map_err(|_| CliError::config(format!("invalid tau0 {value:?}")))?;
                c.train.schedule.tau0 = t;
                // Keep the schedule invariant tau0 > floor satisfied for
                // low sweep points.
                if t <= c.train.schedule.floor {
                    c.train.schedule.floor = t / 2.0;
                }
            }
            "replay_variant" => {
                let v: ReplayVariant = value
                    .parse()
                    .map_err(|e: pmsda_core::Error| CliError::config(e.to_string()))?;
                c.train.replay.variant = v;
            }
            "source_strategy" => {
                let s: Strategy = value
                    .parse()
                    .map_err(|e: pmsda_core::Error| CliError::config(e.to_string()))?;
                c.train.strategy = s;
            }
            other => {
                return Err(CliError::config(format!(
                    "unknown ablation axis {other:?} (expected replay_variant, source_strategy, gamma, or tau0)"
                )))
            }
        }
        c.validate()?;
        patched.push((value.clone(), c));
    }

    let out_dir = cfg.out_dir(out)?;
    ensure_dir(&out_dir)?;

    let mut csv = String::from("axis,value,mean_accuracy,std_accuracy,mean_re_rank_count\n");
    for (value, c) in &patched {
        let results: Vec<(u64, CurriculumState, ModelParams)> = c
            .seeds
            .par_iter()
            .map(|&seed| run_one_seed(c, c.train.strategy, seed))
            .collect::<Result<_, _>>()?;
        let accs: Vec<f64> = results.iter().map(|(_, s, _)| s.final_accuracy()).collect();
        let reranks: Vec<f64> = results
            .iter()
            .map(|(_, s, _)| s.re_rank_count as f64)
            .collect();
        csv.push_str(&format!(
            "{axis},{value},{},{},{}\n",
            mean(&accs),
            std_dev(&accs),
            mean(&reranks)
        ));
        println!(
            "{axis}={value}: accuracy {:.4} +/- {:.4} (re-ranks {:.1})",
            mean(&accs),
            std_dev(&accs),
            mean(&reranks)
        );
    }
    write_file(&out_dir.join(format!("ablation_{axis}.csv")), &csv)?;
    Ok(())
}

struct LoadedRun {
    strategy: String,
    seed: u64,
    summary: RunSummary,
    /// (stage, loss_dis, target_accuracy) per epoch row.
    epochs: Vec<(usize, f64, f64)>,
}

fn load_runs(dir: &Path) -> Result<Vec<LoadedRun>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", dir.display())))?;
    let mut runs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(e.to_string()))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if !name.starts_with("summary_seed") || !name.ends_with(".json") {
            continue;
        }
        let text = std::fs::read_to_string(entry.path())
            .map_err(|e| CliError::io(e.to_string()))?;
        let summary: RunSummary =
            serde_json::from_str(&text).map_err(|e| CliError::io(format!("bad summary: {e}")))?;
        let trace_path = dir.join(format!("trace_seed{}.csv", summary.seed));
        let trace = std::fs::read_to_string(&trace_path).map_err(|e| {
            CliError::io(format!("cannot read {}: {e}", trace_path.display()))
        })?;
        let mut epochs = Vec::new();
        for line in trace.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() < 11 {
                return Err(CliError::io(format!("malformed trace row: {line}")));
            }
            let stage: usize = cols[0].parse().map_err(|_| CliError::io("bad stage"))?;
            let dis: f64 = cols[5].parse().map_err(|_| CliError::io("bad loss_dis"))?;
            let acc: f64 = cols[9]
                .parse()
                .map_err(|_| CliError::io("bad target_accuracy"))?;
            epochs.push((stage, dis, acc));
        }
        runs.push(LoadedRun {
            strategy: summary.strategy.clone(),
            seed: summary.seed,
            summary,
            epochs,
        });
    }
    if runs.is_empty() {
        return Err(CliError::io(format!(
            "no run summaries found in {}",
            dir.display()
        )));
    }
    runs.sort_by(|a, b| a.strategy.cmp(&b.strategy).then(a.seed.cmp(&b.seed)));
    Ok(runs)
}

/// Plot-ready aggregates from a run directory: per-stage discrepancy series,
/// per-stage wall-time series, and accuracy-vs-stage curves.
pub fn cmd_report(run_dir: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let runs = load_runs(run_dir)?;
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.to_path_buf());
    ensure_dir(&out_dir)?;

    let mut dis_csv = String::from("strategy,seed,stage,first_epoch_dis,last_epoch_dis,mean_dis\n");
    let mut acc_csv = String::from("strategy,seed,stage,stage_end_accuracy\n");
    let mut wall_csv =
        String::from("strategy,seed,stage,stage_wall_seconds,relative_to_median\n");

    for run in &runs {
        let mut by_stage: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for (stage, dis, acc) in &run.epochs {
            by_stage.entry(*stage).or_default().push((*dis, *acc));
        }
        for (stage, rows) in &by_stage {
            let dis: Vec<f64> = rows.iter().map(|(d, _)| *d).collect();
            dis_csv.push_str(&format!(
                "{},{},{stage},{},{},{}\n",
                run.strategy,
                run.seed,
                dis.first().unwrap(),
                dis.last().unwrap(),
                mean(&dis)
            ));
            acc_csv.push_str(&format!(
                "{},{},{stage},{}\n",
                run.strategy,
                run.seed,
                rows.last().unwrap().1
            ));
        }
        let walls = &run.summary.stage_wall_seconds;
        let med = median(walls);
        for (stage, w) in walls.iter().enumerate() {
            let rel = if med > 0.0 { w / med } else { f64::NAN };
            wall_csv.push_str(&format!(
                "{},{},{stage},{},{}\n",
                run.strategy, run.seed, w, rel
            ));
        }
    }

    write_file(&out_dir.join("report_dis.csv"), &dis_csv)?;
    write_file(&out_dir.join("report_accuracy.csv"), &acc_csv)?;
    write_file(&out_dir.join("report_walltime.csv"), &wall_csv)?;
    println!(
        "report over {} runs written to {}",
        runs.len(),
        out_dir.display()
    );
    Ok(())
}
