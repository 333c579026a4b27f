//! End-to-end runs: split, hulls on the post-processing split, guarded region
//! search, recipe construction and test evaluation, plus file output.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::constraints::{disparities, LossSpec, Metric, MetricDisparity};
use crate::construct::{construct_recipe, Mechanism, Recipe};
use crate::data::{load_csv, split, synth_generate, write_csv, Dataset, ScoredSample};
use crate::eval::{evaluate_recipe, oracle_rates, report_table, EvalReport, OracleReport};
use crate::region::{
    build_inner_lp, feasibility_guard, region_search_detailed, scaled_specs, write_grid_csv, CentroidGrid,
    GridPointRecord, TargetRates,
};
use crate::roc::{build_hulls, write_hull_csv, GroupHull};
use crate::Error;

/// Post-processing and test splits sharing one group mapping.
#[derive(Debug, Clone)]
pub struct Splits {
    pub post: Dataset,
    pub test: Dataset,
}

fn realign(data: Dataset, names: &[String], path: &Path) -> Result<Dataset, Error> {
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let map = data
        .group_names()
        .iter()
        .map(|n| {
            index.get(n.as_str()).copied().ok_or_else(|| {
                Error::Input(format!("{}: group `{n}` does not occur in the post-processing split", path.display()))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let samples = data
        .samples()
        .iter()
        .map(|s| ScoredSample {
            group: map[s.group],
            ..*s
        })
        .collect();
    Ok(Dataset::new(samples, names.to_vec())?)
}

pub fn load_splits(cfg: &RunConfig, seed: u64) -> Result<Splits, Error> {
    let schema = cfg.data.schema();
    if let Some(input) = &cfg.data.input {
        let all = load_csv(input, &schema)?;
        let (_, post, test) = split(&all, cfg.data.split, seed)?;
        return Ok(Splits { post, test });
    }
    match (&cfg.data.post_path, &cfg.data.test_path) {
        (Some(p), Some(t)) => {
            let post = load_csv(p, &schema)?;
            let test = realign(load_csv(t, &schema)?, post.group_names(), t)?;
            Ok(Splits { post, test })
        }
        _ => Err(Error::Input("config needs data.input or data.post_path with data.test_path".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardSummary {
    pub alpha: f64,
    pub triggered: bool,
    pub fallback: bool,
    pub alpha_upper: f64,
    pub baseline_gaps: Vec<Option<f64>>,
    pub searches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seed: u64,
    pub mechanism: Mechanism,
    pub groups: Vec<String>,
    pub post_samples: usize,
    pub guard: GuardSummary,
    pub target: TargetRates,
    /// Disparities of the target rates under the nominal tolerances, on the post split.
    pub target_gaps: Vec<MetricDisparity>,
    /// Expected intervention rate per group on the post split.
    pub post_interventions: Vec<f64>,
    pub test: EvalReport,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub recipe: Recipe,
    pub report: RunReport,
    pub hulls: Vec<GroupHull>,
    pub grid_records: Vec<GridPointRecord>,
    pub lp_dump: Option<String>,
}

fn seeded(cfg: &RunConfig, seed: u64) -> RunConfig {
    RunConfig { seed, ..cfg.clone() }
}

/// Full pipeline for one seed (split, randomization and the config hash stamped on the recipe).
pub fn run(cfg: &RunConfig, seed: u64) -> Result<RunOutput, Error> {
    let cfg = seeded(cfg, seed);
    let hash = cfg.hash()?;
    let splits = load_splits(&cfg, seed)?;
    run_on(&cfg, &splits, &hash)
}

pub fn run_on(cfg: &RunConfig, splits: &Splits, config_hash: &str) -> Result<RunOutput, Error> {
    let post = &splits.post;
    let names = post.group_names().to_vec();
    let hulls = build_hulls(post)?;
    let stats = post.stats();
    let specs = cfg.constraints.specs(&stats)?;
    let loss = LossSpec::misclassification(&stats);
    let grid_cfg = cfg.region.grid();
    let guard = feasibility_guard(&hulls, &specs, &loss, &grid_cfg, &cfg.region.guard())?;
    log::info!(
        "seed {}: alpha {:.4} (triggered {}), post loss {:.6}",
        cfg.seed,
        guard.alpha,
        guard.triggered,
        guard.target.objective
    );

    let (grid_records, lp_dump) = if cfg.output.grid_csv || cfg.output.dump_lp {
        let scaled = scaled_specs(&specs, guard.alpha);
        let grid = CentroidGrid::for_specs(&scaled, &grid_cfg)?;
        let records = if cfg.output.grid_csv {
            region_search_detailed(&hulls, &scaled, &loss, &grid)?.records
        } else {
            Vec::new()
        };
        let dump = if cfg.output.dump_lp && !guard.fallback {
            let inner = build_inner_lp(&hulls, &scaled, &loss, &guard.target.lf_centroids)?;
            Some(inner.problem.to_string())
        } else {
            None
        };
        (records, dump)
    } else {
        (Vec::new(), None)
    };

    let recipe = construct_recipe(&hulls, &guard.target, &names, &cfg.construct, cfg.seed, config_hash)?;
    let test = evaluate_recipe(&recipe, &splits.test, cfg.seed)?;
    let target_gaps = disparities(&specs, &guard.target.rates)?.metrics;
    let report = RunReport {
        config_hash: config_hash.to_string(),
        seed: cfg.seed,
        mechanism: cfg.construct.mechanism,
        groups: names,
        post_samples: post.len(),
        guard: GuardSummary {
            alpha: guard.alpha,
            triggered: guard.triggered,
            fallback: guard.fallback,
            alpha_upper: guard.alpha_upper,
            baseline_gaps: guard.baseline_gaps.clone(),
            searches: guard.searches,
        },
        target: guard.target,
        target_gaps,
        post_interventions: recipe.groups.iter().map(|g| g.expected_intervention).collect(),
        test,
    };
    Ok(RunOutput {
        recipe,
        report,
        hulls,
        grid_records,
        lp_dump,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Error> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn json<T: Serialize>(value: &T) -> Result<String, Error> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn report_text(report: &RunReport, recipe: &Recipe) -> String {
    let mut out = format!(
        "seed {}  mechanism {}  config {}\n",
        report.seed,
        report.mechanism.short(),
        &report.config_hash[..report.config_hash.len().min(12)]
    );
    out.push_str(&format!(
        "alpha {:.4}  triggered {}  fallback {}\n",
        report.guard.alpha, report.guard.triggered, report.guard.fallback
    ));
    out.push_str(&format!("post loss {:.6}\n\n", report.target.objective));
    out.push_str(&report_table(&[("test".to_string(), report.test.clone())]));
    out.push('\n');
    out.push_str(&format!("{:<16} {:>10} {:>10} {:>8} {:>10}\n", "group", "tpr", "fpr", "snapped", "interv"));
    for g in &recipe.groups {
        let r = report.target.rates[g.group];
        out.push_str(&format!(
            "{:<16} {:>10.6} {:>10.6} {:>8} {:>10.6}\n",
            g.name, r.tpr, r.fpr, g.snapped, g.expected_intervention
        ));
    }
    out
}

/// Writes recipe.json, report.json, report.txt and the optional CSV / LP files.
pub fn write_run(output: &RunOutput, cfg: &RunConfig, dir: &Path) -> Result<(), Error> {
    ensure_dir(dir)?;
    write_file(&dir.join("recipe.json"), output.recipe.to_json()?.as_bytes())?;
    write_file(&dir.join("report.json"), json(&output.report)?.as_bytes())?;
    let text = report_text(&output.report, &output.recipe);
    write_file(&dir.join("report.txt"), text.as_bytes())?;
    if cfg.output.hull_csv {
        let mut buf = Vec::new();
        write_hull_csv(&output.hulls, &output.report.groups, &mut buf)?;
        write_file(&dir.join("hulls.csv"), &buf)?;
    }
    if cfg.output.grid_csv {
        let mut buf = Vec::new();
        write_grid_csv(&output.grid_records, &mut buf)?;
        write_file(&dir.join("grid.csv"), &buf)?;
    }
    if let Some(dump) = &output.lp_dump {
        write_file(&dir.join("inner_lp.txt"), dump.as_bytes())?;
    }
    Ok(())
}

/// Mean and sample standard deviation of one reported quantity across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStat {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// Seeds contributing a defined value.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub stats: Vec<SeedStat>,
}

fn mean_sd(name: &str, values: &[f64]) -> SeedStat {
    let n = values.len();
    let mean = if n == 0 { f64::NAN } else { values.iter().sum::<f64>() / n as f64 };
    let sd = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    SeedStat {
        name: name.to_string(),
        mean,
        sd,
        count: n,
    }
}

pub fn summarize_seeds(reports: &[RunReport]) -> SeedSummary {
    let mut stats = vec![mean_sd("Acc", &reports.iter().map(|r| r.test.accuracy).collect::<Vec<_>>())];
    for m in Metric::REPORTED {
        let values: Vec<f64> = reports.iter().filter_map(|r| r.test.gap(m)).collect();
        stats.push(mean_sd(m.label(), &values));
    }
    stats.push(mean_sd(
        "Interv.",
        &reports.iter().map(|r| r.test.sampled_intervention).collect::<Vec<_>>(),
    ));
    stats.push(mean_sd("alpha", &reports.iter().map(|r| r.guard.alpha).collect::<Vec<_>>()));
    SeedSummary {
        seeds: reports.iter().map(|r| r.seed).collect(),
        stats,
    }
}

pub fn summary_text(summary: &SeedSummary) -> String {
    let mut out = format!("{} seeds\n", summary.seeds.len());
    for s in &summary.stats {
        out.push_str(&format!("{:<8} {:.4} ± {:.4}\n", s.name, s.mean, s.sd));
    }
    out
}

/// Runs seeds `first..first + count`, each into `dir/seed-<s>`, then writes the summary.
pub fn run_seeds(cfg: &RunConfig, first: u64, count: u64, dir: &Path) -> Result<SeedSummary, Error> {
    let mut reports = Vec::new();
    for seed in first..first + count {
        let out = run(cfg, seed)?;
        write_run(&out, cfg, &dir.join(format!("seed-{seed}")))?;
        reports.push(out.report);
    }
    let summary = summarize_seeds(&reports);
    ensure_dir(dir)?;
    write_file(&dir.join("summary.json"), json(&summary)?.as_bytes())?;
    write_file(&dir.join("summary.txt"), summary_text(&summary).as_bytes())?;
    Ok(summary)
}

/// Hulls of the post-processing split.
pub fn hulls(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<Vec<GroupHull>, Error> {
    let splits = load_splits(cfg, seed)?;
    let hulls = build_hulls(&splits.post)?;
    ensure_dir(dir)?;
    let mut buf = Vec::new();
    write_hull_csv(&hulls, splits.post.group_names(), &mut buf)?;
    write_file(&dir.join("hulls.csv"), &buf)?;
    Ok(hulls)
}

/// Guarded region search on the test split.
pub fn oracle(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<OracleReport, Error> {
    let splits = load_splits(cfg, seed)?;
    let stats = splits.test.stats();
    let specs = cfg.constraints.specs(&stats)?;
    let loss = LossSpec::misclassification(&stats);
    let report = oracle_rates(&splits.test, &specs, &loss, &cfg.region.grid(), &cfg.region.guard())?;
    ensure_dir(dir)?;
    write_file(&dir.join("oracle.json"), json(&report)?.as_bytes())?;
    let text = format!(
        "oracle accuracy {:.4}\nalpha {:.4}  triggered {}\n",
        report.accuracy, report.guard.alpha, report.guard.triggered
    );
    write_file(&dir.join("oracle.txt"), text.as_bytes())?;
    Ok(report)
}

/// Synthetic population from the `[synth]` section written as CSV to `path`.
pub fn synth(cfg: &RunConfig, seed: u64, path: &Path) -> Result<Dataset, Error> {
    let spec = cfg
        .synth
        .as_ref()
        .ok_or_else(|| Error::Input("config has no [synth] section".into()))?;
    let data = synth_generate(spec, seed)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let file = fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv(&data, file)?;
    Ok(data)
}

/// Evaluates a saved recipe on the test split.
pub fn eval_recipe(cfg: &RunConfig, recipe: &Recipe, seed: u64, dir: &Path) -> Result<EvalReport, Error> {
    let splits = load_splits(cfg, seed)?;
    let report = evaluate_recipe(recipe, &splits.test, seed)?;
    ensure_dir(dir)?;
    write_file(&dir.join("eval.json"), json(&report)?.as_bytes())?;
    write_file(
        &dir.join("eval.txt"),
        report_table(&[("test".to_string(), report.clone())]).as_bytes(),
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ActiveConstraint;
    use crate::data::{ScoreDist, SynthGroup, SynthSpec};

    fn spec() -> SynthSpec {
        let g = |name: &str, pos, neg, a: f64| SynthGroup {
            name: name.into(),
            positives: pos,
            negatives: neg,
            positive_scores: ScoreDist::Beta { alpha: a, beta: 2.0 },
            negative_scores: ScoreDist::Beta { alpha: 2.0, beta: a },
        };
        SynthSpec {
            groups: vec![g("a", 900, 1100, 5.0), g("b", 500, 1500, 3.0)],
        }
    }

    fn config(input: &Path, metric: Metric) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.data.input = Some(input.to_path_buf());
        cfg.constraints.active = vec![ActiveConstraint {
            metric,
            delta: 0.02,
            epsilon: 1e-7,
        }];
        cfg.output.hull_csv = true;
        cfg.output.grid_csv = true;
        cfg.output.dump_lp = true;
        cfg.synth = Some(spec());
        cfg
    }

    #[test]
    fn run_writes_deterministic_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("scores.csv");
        let cfg = config(&csv, Metric::Pp);
        synth(&cfg, 3, &csv).unwrap();

        let one = run(&cfg, 11).unwrap();
        write_run(&one, &cfg, &dir.path().join("r1")).unwrap();
        let two = run(&cfg, 11).unwrap();
        write_run(&two, &cfg, &dir.path().join("r2")).unwrap();
        for f in ["recipe.json", "report.json", "report.txt", "hulls.csv", "grid.csv", "inner_lp.txt"] {
            let a = fs::read(dir.path().join("r1").join(f)).unwrap();
            let b = fs::read(dir.path().join("r2").join(f)).unwrap();
            assert_eq!(a, b, "{f} differs between identical runs");
        }
        assert_eq!(one.grid_records.len(), 1000);
        assert_eq!(one.recipe.seed, 11);
        assert_eq!(one.recipe.config_hash, one.report.config_hash);

        let other = run(&cfg, 12).unwrap();
        assert_ne!(other.report.post_samples, 0);
        assert_ne!(other.report.config_hash, one.report.config_hash);
    }

    #[test]
    fn target_meets_tolerance_scaled_by_alpha() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("scores.csv");
        let cfg = config(&csv, Metric::Dp);
        synth(&cfg, 5, &csv).unwrap();
        let out = run(&cfg, 1).unwrap();
        for d in &out.report.target_gaps {
            let limit = (out.report.guard.alpha * d.delta).min(1.0);
            assert!(d.gap <= limit + 1e-6, "{} gap {} > {}", d.metric, d.gap, limit);
        }
        for g in &out.recipe.groups {
            let want = out.report.target.rates[g.group];
            assert!((g.target.tpr - want.tpr).abs() < 1e-3);
            assert!((g.target.fpr - want.fpr).abs() < 1e-3);
        }
    }

    #[test]
    fn pre_split_files_align_groups_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let post = dir.path().join("post.csv");
        let test = dir.path().join("test.csv");
        fs::write(&post, "score,group,label\n0.9,x,1\n0.2,x,0\n0.7,y,1\n0.4,y,0\n").unwrap();
        fs::write(&test, "score,group,label\n0.6,y,1\n0.1,x,0\n0.8,x,1\n0.3,y,0\n").unwrap();
        let mut cfg = RunConfig::default();
        cfg.data.post_path = Some(post.clone());
        cfg.data.test_path = Some(test.clone());
        let s = load_splits(&cfg, 0).unwrap();
        assert_eq!(s.test.group_names(), s.post.group_names());
        assert_eq!(s.test.samples()[0].group, 1);
        assert_eq!(s.test.samples()[1].group, 0);

        fs::write(&test, "score,group,label\n0.6,z,1\n0.1,z,0\n").unwrap();
        let err = load_splits(&cfg, 0).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn seed_summary_statistics() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("scores.csv");
        let mut cfg = config(&csv, Metric::Eopp);
        cfg.output = Default::default();
        synth(&cfg, 9, &csv).unwrap();
        let summary = run_seeds(&cfg, 0, 3, &dir.path().join("multi")).unwrap();
        assert_eq!(summary.seeds, vec![0, 1, 2]);
        let acc = &summary.stats[0];
        assert_eq!(acc.count, 3);
        assert!(acc.mean > 0.5 && acc.sd >= 0.0);
        assert!(dir.path().join("multi/summary.txt").exists());
        assert!(dir.path().join("multi/seed-2/recipe.json").exists());
    }

    #[test]
    fn mean_sd_matches_hand_values() {
        let s = mean_sd("x", &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd("y", &[7.0]).sd, 0.0);
    }
}
