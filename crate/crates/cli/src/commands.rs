//! Subcommand implementations. Each command computes everything in memory
//! first and only then writes its files (each atomically), so a failing
//! command leaves no partial output behind.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dcg_ope::consistency::{
    disagreement_report, lemma_check, read_model_metrics, reproduce_table1, search_counterexample, Counterexample,
    DISAGREEMENT_CSV_HEADER,
};
use dcg_ope::domain::{read_dataset, validate_dataset, write_atomic, write_dataset, LoggedDataset, QualityModel};
use dcg_ope::estimators::{
    evaluate, evaluate_with_exposure, ClipM, EstimatorConfig, Normalization, TargetExposure, REPORT_CSV_HEADER,
};
use dcg_ope::exec::{derive_seed, Execution};
use dcg_ope::simulator::{simulate_dataset, simulate_experiment_series, true_policy_value, DayRecord};
use dcg_ope::stats::{
    compare_means, pearson_p_two_tailed, pearson_r, sensitivity_summary, ComparisonResult, Series,
    COMPARISON_CSV_HEADER,
};

use crate::config::Experiment;

/// A file produced by a command, written only once the command succeeded.
struct Output {
    path: PathBuf,
    body: Body,
}

enum Body {
    Text(String),
    Dataset(LoggedDataset),
}

fn text(out: &Path, name: &str, body: String) -> Output {
    Output { path: out.join(name), body: Body::Text(body) }
}

fn write_outputs(out: &Path, outputs: Vec<Output>) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
    for o in outputs {
        match o.body {
            Body::Text(s) => write_atomic(&o.path, |w| Ok(w.write_all(s.as_bytes())?)),
            Body::Dataset(ds) => write_dataset(&ds, &o.path),
        }
        .with_context(|| format!("writing {}", o.path.display()))?;
    }
    Ok(())
}

fn series(exp: &Experiment) -> Result<Vec<DayRecord>> {
    if exp.config.trajectories_per_day == 0 {
        eprintln!("warning: trajectories_per_day = 0; datasets will be empty");
    }
    Ok(simulate_experiment_series(
        &exp.env,
        &exp.target,
        &exp.target_pbm,
        &exp.drift,
        exp.config.trajectories_per_day,
        exp.online,
        exp.config.seed,
    )?)
}

/// One logged dataset per day plus `online.csv`.
pub fn simulate(exp: &Experiment, out: &Path) -> Result<String> {
    let records = series(exp)?;
    let mut online = String::from("day,online_value,online_std_err\n");
    let mut outputs = Vec::new();
    for r in records {
        writeln!(online, "{},{},{}", r.day, r.online_value, r.online_std_err)?;
        outputs.push(Output { path: out.join(format!("day_{}.jsonl", r.day)), body: Body::Dataset(r.dataset) });
    }
    let days = outputs.len();
    outputs.push(text(out, "online.csv", online));
    write_outputs(out, outputs)?;
    Ok(format!("wrote {days} daily datasets and online.csv to {}", out.display()))
}

/// Exact values of the logging and target policies on the base environment.
pub fn value(exp: &Experiment, out: &Path) -> Result<String> {
    let logging = true_policy_value(&exp.env, &exp.env.logging, &exp.env.logging_pbm)?;
    let target = true_policy_value(&exp.env, &exp.target, &exp.target_pbm)?;
    let body = format!("policy,true_value\nlogging,{logging}\ntarget,{target}\n");
    write_outputs(out, vec![text(out, "value.csv", body)])?;
    Ok(format!("true value: logging {logging:.6}, target {target:.6}"))
}

/// Every configured estimator for the target policy on a logged dataset.
pub fn estimate(exp: &Experiment, dataset: &Path, out: &Path) -> Result<String> {
    let ds = read_dataset(dataset).with_context(|| format!("reading dataset {}", dataset.display()))?;
    if let Some(v) = validate_dataset(&ds, &exp.env.catalog).first() {
        bail!("dataset {} is invalid: {v}", dataset.display());
    }
    let mut body = format!("{REPORT_CSV_HEADER}\n");
    let mut summary = String::new();
    for (name, cfg) in &exp.estimators {
        let report = evaluate(&ds, &exp.target, cfg, &exp.env.catalog).with_context(|| format!("estimator {name}"))?;
        writeln!(body, "{}", report.csv_row(name, cfg))?;
        writeln!(summary, "{name}: {:.6}", report.mean)?;
    }
    write_outputs(out, vec![text(out, "estimates.csv", body)])?;
    Ok(summary.trim_end().to_owned())
}

/// Per-day offline estimates against the online series, `correlation.csv`
/// and the underlying `series.csv`.
pub fn correlate(exp: &Experiment, out: &Path) -> Result<String> {
    if exp.config.days < 3 {
        bail!("correlation needs days >= 3, got {}", exp.config.days);
    }
    let records = series(exp)?;
    let online: Vec<f64> = records.iter().map(|r| r.online_value).collect();
    let mut columns: Vec<std::result::Result<Vec<f64>, String>> = Vec::new();
    for (name, cfg) in &exp.estimators {
        let col = records
            .iter()
            .map(|r| evaluate(&r.dataset, &exp.target, cfg, &exp.env.catalog).map(|rep| rep.mean))
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| format!("{name}: {e}"));
        columns.push(col);
    }

    let mut corr = String::from("variant,r,p\n");
    let mut summary = String::new();
    for ((name, _), col) in exp.estimators.iter().zip(&columns) {
        let rp = col.clone().and_then(|c| {
            let x = Series::new(c).map_err(|e| e.to_string())?;
            let y = Series::new(online.clone()).map_err(|e| e.to_string())?;
            let r = pearson_r(&x, &y).map_err(|e| e.to_string())?;
            let p = pearson_p_two_tailed(r, x.len()).map_err(|e| e.to_string())?;
            Ok((r, p))
        });
        match rp {
            Ok((r, p)) => {
                writeln!(corr, "{name},{r},{p}")?;
                writeln!(summary, "{name}: r = {r:.4}, p = {p:.3e}")?;
            }
            Err(reason) => {
                eprintln!("warning: correlation for {name} is undefined: {reason}");
                writeln!(corr, "{name},NA,NA")?;
                writeln!(summary, "{name}: NA ({reason})")?;
            }
        }
    }

    let mut table = String::from("day,online_value");
    for (name, _) in &exp.estimators {
        write!(table, ",{name}")?;
    }
    table.push('\n');
    for (i, r) in records.iter().enumerate() {
        write!(table, "{},{}", r.day, r.online_value)?;
        for col in &columns {
            match col {
                Ok(v) => write!(table, ",{}", v[i])?,
                Err(_) => table.push_str(",NA"),
            }
        }
        table.push('\n');
    }
    write_outputs(out, vec![text(out, "correlation.csv", corr), text(out, "series.csv", table)])?;
    Ok(summary.trim_end().to_owned())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    Dcg,
    Ndcg,
}

impl Metric {
    fn name(self) -> &'static str {
        match self {
            Metric::Dcg => "dcg",
            Metric::Ndcg => "ndcg",
        }
    }

    fn config(self, exp: &Experiment, m: ClipM) -> EstimatorConfig {
        let base = EstimatorConfig::unbiased(exp.target_pbm.clone()).with_clip(m);
        match self {
            Metric::Dcg => base,
            Metric::Ndcg => base.with_normalization(Normalization::PerTrajectory),
        }
    }
}

/// Unpaired A/B comparisons of the logging policy (arm A) and the target
/// policy (arm B), each estimated from its own independent logged dataset,
/// for every reward signal, pseudo-day and replicate. Refuses to run unless
/// the target is truly better in every one of those environments.
pub fn sensitivity(exp: &Experiment, out: &Path) -> Result<String> {
    let cfg = &exp.config;
    let mut cells = Vec::new();
    for (s, base_quality) in exp.reward_signals.iter().enumerate() {
        for d in 0..cfg.days {
            let quality: QualityModel = exp.drift.perturb(base_quality, d, derive_seed(cfg.seed, &[s as u64]), exp.env.reward_mode);
            let env = exp.env.with_quality(quality);
            let v_log = true_policy_value(&env, &env.logging, &env.logging_pbm)?;
            let v_target = true_policy_value(&env, &exp.target, &exp.target_pbm)?;
            if v_target <= v_log {
                bail!(
                    "sensitivity needs the target to be strictly better than logging; signal {s}, day {d}: \
                     target {v_target} <= logging {v_log}"
                );
            }
            for rep in 0..cfg.n_replicates {
                cells.push((s, d, rep, env.clone()));
            }
        }
    }

    let metrics = [Metric::Dcg, Metric::Ndcg];
    // results[metric][m] -> comparisons in (signal, day, replicate) order
    let mut results = vec![vec![Vec::new(); cfg.m_grid.len()]; metrics.len()];
    let mut comparison = format!("{COMPARISON_CSV_HEADER}\n");
    for (s, d, rep, env) in &cells {
        let path = |arm: u64| derive_seed(cfg.seed, &[*s as u64, *d as u64, *rep as u64, arm]);
        let ds_a = simulate_dataset(env, cfg.trajectories_per_day, *d as u32, path(0))?;
        let ds_b = simulate_dataset(env, cfg.trajectories_per_day, *d as u32, path(1))?;
        let exp_a = TargetExposure::for_dataset(&env.logging, &exp.target_pbm, &env.catalog, &ds_a)?;
        let exp_b = TargetExposure::for_dataset(&exp.target, &exp.target_pbm, &env.catalog, &ds_b)?;
        for (mi, metric) in metrics.iter().enumerate() {
            for (gi, m) in cfg.m_grid.iter().enumerate() {
                let config = metric.config(exp, *m);
                let a = evaluate_with_exposure(Execution::default(), &ds_a, &exp_a, &config, &env.catalog)?;
                let b = evaluate_with_exposure(Execution::default(), &ds_b, &exp_b, &config, &env.catalog)?;
                let c: ComparisonResult = compare_means(
                    &Series::new(a.per_trajectory_values)?,
                    &Series::new(b.per_trajectory_values)?,
                    cfg.alpha,
                )?;
                let label = format!("{}/m={m}/signal={s}/day={d}/rep={rep}", metric.name());
                writeln!(comparison, "{}", c.csv_row(&label))?;
                results[mi][gi].push(c);
            }
        }
    }

    let mut sens = String::from("metric,m,tpr,sign_agreement,mean_p\n");
    let mut summary = format!("{} comparisons per (metric, m)\n", cells.len());
    for (mi, metric) in metrics.iter().enumerate() {
        for (gi, m) in cfg.m_grid.iter().enumerate() {
            let sum = sensitivity_summary(&results[mi][gi], true)?;
            writeln!(sens, "{},{m},{},{},{}", metric.name(), sum.tpr, sum.sign_agreement, sum.mean_p)?;
            writeln!(
                summary,
                "{:>4} m={m:<5} tpr={:.2} sign_agreement={:.2} mean_p={:.3e}",
                metric.name(),
                sum.tpr,
                sum.sign_agreement,
                sum.mean_p
            )?;
        }
    }
    write_outputs(out, vec![text(out, "sensitivity.csv", sens), text(out, "comparison.csv", comparison)])?;
    Ok(summary.trim_end().to_owned())
}

fn counterexample_rows(instance: &str, ce: &Counterexample, csv: &mut String) -> Result<()> {
    // Contexts whose ideal DCG is zero (no positive quality) are absent from the nDCG table.
    let ndcg_contexts: Vec<usize> = (0..ce.contexts.len())
        .filter(|&x| ce.actions.iter().any(|a| ce.quality.get(&ce.contexts[x], a).is_ok_and(|q| q > 0.0)))
        .collect();
    for ((policy, dcg), (_, ndcg)) in ce.per_sample_dcg.rows().iter().zip(ce.per_sample_ndcg.rows()) {
        for (x, ctx) in ce.contexts.iter().enumerate() {
            let n = ndcg_contexts.iter().position(|&k| k == x).map(|j| ndcg[j].to_string()).unwrap_or_else(|| "NA".into());
            writeln!(csv, "{instance},{policy},{ctx},{},{n}", dcg[x])?;
        }
    }
    Ok(())
}

fn describe(ce: &Counterexample) -> Result<String> {
    let agg = ce.aggregate()?;
    let order = |v: &[(String, f64)]| v.iter().map(|(p, m)| format!("{p} {m:.2}")).collect::<Vec<_>>().join(" > ");
    let mut s = String::new();
    writeln!(s, "  DCG  order: {}", order(&agg.dcg_order))?;
    writeln!(s, "  nDCG order: {}", order(&agg.ndcg_order))?;
    writeln!(
        s,
        "  aggregate orders {}; per-sample orders {}",
        if agg.consistent { "agree" } else { "inverted" },
        if ce.per_sample_consistent() { "consistent" } else { "inconsistent" }
    )?;
    Ok(s)
}

/// The two-context table instance, plus the first instance found by the
/// exhaustive search over binary qualities with standard nDCG.
pub fn counterexample(out: &Path) -> Result<String> {
    let table = reproduce_table1();
    let mut summary = String::from("Two-context top-1 instance (qualities x1: 1.0/0.0, x2: 1.0/2.5)\n");
    summary += &describe(&table)?;
    let mut csv = String::from("instance,policy,context,dcg,ndcg\n");
    counterexample_rows("table", &table, &mut csv)?;
    match search_counterexample(3, 3, &[0.0, 1.0], 3)? {
        Some(found) => {
            writeln!(
                summary,
                "Search (qualities in {{0, 1}}, <= 3 contexts, <= 3 actions, log discount): {} contexts x {} actions",
                found.contexts.len(),
                found.actions.len()
            )?;
            for (x, ctx) in found.contexts.iter().enumerate() {
                let q: Vec<String> =
                    found.actions.iter().map(|a| found.quality.get(ctx, a).map(|v| v.to_string())).collect::<Result<_, _>>()?;
                let shown: Vec<String> = found
                    .policies
                    .iter()
                    .map(|(p, r)| format!("{p}=[{}]", r[x].iter().map(|a| a.as_str()).collect::<Vec<_>>().join(" ")))
                    .collect();
                writeln!(summary, "  {ctx}: qualities ({}) {}", q.join(", "), shown.join(" "))?;
            }
            summary += &describe(&found)?;
            counterexample_rows("search", &found, &mut csv)?;
        }
        None => summary += "Search found no inversion\n",
    }
    write_outputs(out, vec![text(out, "counterexample.csv", csv)])?;
    Ok(summary.trim_end().to_owned())
}

pub fn lemma(samples: usize, seed: u64, out: &Path) -> Result<String> {
    let r = lemma_check(samples, seed);
    let body = format!("checked,consistent\n{},{}\n", r.checked, r.consistent);
    write_outputs(out, vec![text(out, "lemma_check.csv", body)])?;
    let line = format!("{}/{} single-sample checks consistent", r.consistent, r.checked);
    if r.consistent != r.checked {
        bail!(line);
    }
    Ok(line)
}

pub fn disagree(path: &Path, out: &Path) -> Result<String> {
    let rows = read_model_metrics(path).with_context(|| format!("reading {}", path.display()))?;
    let r = disagreement_report(&rows)?;
    let body = format!("{DISAGREEMENT_CSV_HEADER}\n{}\n", r.csv_row());
    write_outputs(out, vec![text(out, "disagreement.csv", body)])?;
    Ok(format!(
        "{} models: pearson {:.4}, kendall {:.4}, inversion_rate {:.4} over {} untied pairs",
        r.n_models, r.pearson, r.kendall, r.inversion_rate, r.n_pairs_used
    ))
}
