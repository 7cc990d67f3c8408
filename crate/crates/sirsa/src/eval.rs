//! Evaluation protocols: per-set worst/mean-case returns over sampled
//! contexts, the maximum-uncertainty set, misspecified priors, non-stationary
//! contexts, and the worst-case-gap diagnostic — plus CSV/JSON report export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{Algorithm, PolicyRuntime};
use crate::env::{
    make_misspecified_contexts, nonstationary_rollout, rollout_fixed, EnvVariant,
};
use crate::error::SirsaError;
use crate::rcmdp::{
    child_rng, sample_context_uniform, ContextSpace, ContextVector, TaskSuite, UncertaintySet,
};
use crate::Result;

/// Per-set evaluation: K contexts, K returns, min and mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetEvalStats {
    pub set_index: usize,
    pub contexts: Vec<ContextVector>,
    pub returns: Vec<f64>,
    pub min_return: f64,
    pub mean_return: f64,
    /// Set when any rollout failed; stats cover the completed ones.
    pub failure: Option<String>,
}

/// Suite-level evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub seed: u64,
    pub config_hash: String,
    pub k_rollouts: usize,
    pub per_set: Vec<SetEvalStats>,
    pub mean_of_mins: f64,
    pub mean_of_means: f64,
    pub stderr_of_mins: f64,
    pub stderr_of_means: f64,
}

/// One sweep observation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    pub min_return: f64,
    pub mean_return: f64,
}

/// Sweep results over one axis (α, N, B, or the misspecification level).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: String,
    pub rows: Vec<SweepRow>,
}

/// Mean ± standard error of `values`.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl SweepTable {
    /// Per-value (mean, stderr) over seeds, in the given metric.
    pub fn summarize(&self, use_min: bool) -> Vec<(f64, f64, f64)> {
        let mut values: Vec<f64> = self.rows.iter().map(|r| r.value).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        values
            .into_iter()
            .map(|v| {
                let metric: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.value == v)
                    .map(|r| if use_min { r.min_return } else { r.mean_return })
                    .collect();
                let (m, s) = mean_and_stderr(&metric);
                (v, m, s)
            })
            .collect()
    }
}

fn rollout_once(
    runtime: &mut PolicyRuntime,
    variant: EnvVariant,
    c: &ContextVector,
    prior: &UncertaintySet,
    horizon: usize,
    seed: u64,
    stream: u64,
) -> Result<f64> {
    if runtime.algorithm == Algorithm::Oracle {
        runtime.set_true_context(Some(c.clone()));
    }
    let mut rng = child_rng(seed, stream);
    let (ret, _) = rollout_fixed(runtime, variant, c, prior, horizon, &mut rng)?;
    Ok(ret)
}

/// K independent rollouts on contexts sampled uniformly from one set,
/// deterministic evaluation actions throughout.
pub fn evaluate_on_set(
    runtime: &mut PolicyRuntime,
    set: &UncertaintySet,
    set_index: usize,
    k_rollouts: usize,
    horizon: usize,
    seed: u64,
) -> Result<SetEvalStats> {
    let variant = runtime.variant;
    let mut ctx_rng = child_rng(seed, 1_000_000 + set_index as u64);
    let contexts: Vec<ContextVector> = (0..k_rollouts)
        .map(|_| sample_context_uniform(set, &mut ctx_rng))
        .collect();
    let mut returns = Vec::with_capacity(k_rollouts);
    let mut failure = None;
    for (k, c) in contexts.iter().enumerate() {
        let stream = 2_000_000 + (set_index * k_rollouts + k) as u64;
        match rollout_once(runtime, variant, c, set, horizon, seed, stream) {
            Ok(ret) => returns.push(ret),
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    let (min_return, mean_return) = if returns.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (
            returns.iter().cloned().fold(f64::INFINITY, f64::min),
            returns.iter().sum::<f64>() / returns.len() as f64,
        )
    };
    Ok(SetEvalStats {
        set_index,
        contexts,
        returns,
        min_return,
        mean_return,
        failure,
    })
}

/// Evaluate on every test set of the suite and aggregate.
pub fn evaluate_test_suite(
    runtime: &mut PolicyRuntime,
    suite: &TaskSuite,
    k_rollouts: usize,
    horizon: usize,
    seed: u64,
    config_hash: &str,
) -> Result<EvalReport> {
    if suite.test_sets.is_empty() {
        return Err(SirsaError::Suite("suite has no test sets".into()));
    }
    let mut per_set = Vec::with_capacity(suite.test_sets.len());
    for (i, set) in suite.test_sets.iter().enumerate() {
        per_set.push(evaluate_on_set(runtime, set, i, k_rollouts, horizon, seed)?);
    }
    let mins: Vec<f64> = per_set.iter().map(|s| s.min_return).collect();
    let means: Vec<f64> = per_set.iter().map(|s| s.mean_return).collect();
    let (mean_of_mins, stderr_of_mins) = mean_and_stderr(&mins);
    let (mean_of_means, stderr_of_means) = mean_and_stderr(&means);
    Ok(EvalReport {
        method: runtime.algorithm.name().to_string(),
        seed,
        config_hash: config_hash.to_string(),
        k_rollouts,
        per_set,
        mean_of_mins,
        mean_of_means,
        stderr_of_mins,
        stderr_of_means,
    })
}

/// Evaluation on the single maximal uncertainty set spanning the whole
/// context space.
pub fn evaluate_max_uncertainty(
    runtime: &mut PolicyRuntime,
    space: &ContextSpace,
    k_rollouts: usize,
    horizon: usize,
    seed: u64,
) -> Result<SetEvalStats> {
    let set = UncertaintySet::spanning(space);
    evaluate_on_set(runtime, &set, 0, k_rollouts, horizon, seed)
}

/// Misspecification protocol: for every test set and level r, roll out on the
/// corner contexts `μ ± (1+r)σ` while the policy keeps the original prior.
/// Rows aggregate over corners and sets per level.
pub fn misspecification_sweep(
    runtime: &mut PolicyRuntime,
    suite: &TaskSuite,
    r_levels: &[f64],
    horizon: usize,
    seed: u64,
) -> Result<SweepTable> {
    if r_levels.is_empty() {
        return Err(SirsaError::InvalidConfig("r_levels must be non-empty".into()));
    }
    let variant = runtime.variant;
    let mut rows = Vec::new();
    for (li, &r) in r_levels.iter().enumerate() {
        let mut corner_returns = Vec::new();
        for (si, set) in suite.test_sets.iter().enumerate() {
            for (ci, corner) in make_misspecified_contexts(set, r, variant)
                .iter()
                .enumerate()
            {
                let stream = 3_000_000 + ((li * suite.test_sets.len() + si) * 16 + ci) as u64;
                corner_returns.push(rollout_once(
                    runtime, variant, corner, set, horizon, seed, stream,
                )?);
            }
        }
        let (mean, _) = mean_and_stderr(&corner_returns);
        let min = corner_returns.iter().cloned().fold(f64::INFINITY, f64::min);
        rows.push(SweepRow {
            axis: "r_level".to_string(),
            value: r,
            seed,
            min_return: min,
            mean_return: mean,
        });
    }
    Ok(SweepTable {
        axis: "r_level".to_string(),
        rows,
    })
}

/// Non-stationary protocol: n rollouts, each with a fresh initial set and the
/// hidden context resampled every `period` steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonstationaryReport {
    pub total_returns: Vec<f64>,
    pub mean_return: f64,
    pub stderr_return: f64,
    /// Per-step rewards of each rollout.
    pub traces: Vec<Vec<f64>>,
}

pub fn nonstationary_eval(
    runtime: &mut PolicyRuntime,
    suite: &TaskSuite,
    period: usize,
    horizon: usize,
    n_rollouts: usize,
    seed: u64,
) -> Result<NonstationaryReport> {
    let variant = runtime.variant;
    let mut totals = Vec::with_capacity(n_rollouts);
    let mut traces = Vec::with_capacity(n_rollouts);
    for k in 0..n_rollouts {
        let set = &suite.test_sets[k % suite.test_sets.len()];
        let mut rng = child_rng(seed, 4_000_000 + k as u64);
        let (total, rewards) =
            nonstationary_rollout(runtime, variant, set, period, horizon, &mut rng)?;
        totals.push(total);
        traces.push(rewards);
    }
    let (mean_return, stderr_return) = mean_and_stderr(&totals);
    Ok(NonstationaryReport {
        total_returns: totals,
        mean_return,
        stderr_return,
        traces,
    })
}

/// Monte-Carlo worst-case gap: how much return is lost in context `c_eval`
/// by running the oracle policy of confusable contexts instead of its own.
pub fn estimate_worst_case_gap(
    oracle: &mut PolicyRuntime,
    confusion_set: &[ContextVector],
    c_eval: &ContextVector,
    n_rollouts: usize,
    horizon: usize,
    seed: u64,
) -> Result<f64> {
    if oracle.algorithm != Algorithm::Oracle {
        return Err(SirsaError::InvalidConfig(
            "worst-case gap needs an oracle runtime".into(),
        ));
    }
    let variant = oracle.variant;
    let prior = UncertaintySet::degenerate(c_eval);
    let mut mean_return_with = |policy_ctx: &ContextVector, base: u64| -> Result<f64> {
        let mut total = 0.0;
        for k in 0..n_rollouts {
            oracle.set_true_context(Some(policy_ctx.clone()));
            let mut rng = child_rng(seed, 5_000_000 + base + k as u64);
            let (ret, _) = rollout_fixed(oracle, variant, c_eval, &prior, horizon, &mut rng)?;
            total += ret;
        }
        Ok(total / n_rollouts as f64)
    };
    let own = mean_return_with(c_eval, 0)?;
    let mut gap = f64::NEG_INFINITY;
    for (i, c_other) in confusion_set.iter().enumerate() {
        let cross = mean_return_with(c_other, 1000 * (i as u64 + 1))?;
        gap = gap.max(own - cross);
    }
    Ok(gap)
}

/// Write a report as pretty JSON plus a flat CSV of per-rollout rows
/// (method, seed, set_id, sample_id, return).
pub fn emit_report(report: &EvalReport, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let json_path = dir.join(format!("{stem}.json"));
    std::fs::write(&json_path, serde_json::to_string_pretty(report)?)?;

    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["method", "seed", "set_id", "sample_id", "return"])?;
    for set in &report.per_set {
        for (k, ret) in set.returns.iter().enumerate() {
            w.write_record([
                report.method.as_str(),
                &report.seed.to_string(),
                &set.set_index.to_string(),
                &k.to_string(),
                &format!("{ret:.17}"),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write a sweep table as JSON plus CSV rows (axis, value, seed, min, mean).
pub fn emit_sweep(table: &SweepTable, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(table)?,
    )?;
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    w.write_record(["axis", "value", "seed", "min", "mean"])?;
    for row in &table.rows {
        w.write_record([
            row.axis.as_str(),
            &format!("{}", row.value),
            &row.seed.to_string(),
            &format!("{:.17}", row.min_return),
            &format!("{:.17}", row.mean_return),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{PolicySpec, Trainer, TrainingConfig};
    use crate::env::HORIZON;
    use crate::rcmdp::{make_task_suite, SetDistribution};

    fn quick_runtime(algorithm: Algorithm, variant: EnvVariant) -> (PolicyRuntime, TaskSuite) {
        let dist = SetDistribution::new(variant.context_space(), 0.25).unwrap();
        let suite = make_task_suite(&dist, 3, 2, 4, 300).unwrap();
        let cfg = TrainingConfig {
            budget: 10,
            batch_size: 8,
            cvar_batch_size: 4,
            grad_steps_per_episode: 5,
            warmup_episodes: 1,
            min_buffer: 40,
            hidden: vec![8, 8],
            log_every: 100,
            ..Default::default()
        };
        let mut spec = PolicySpec::defaults_for(algorithm);
        spec.t_threshold = 5;
        spec.n_cvar_samples = 8;
        let mut trainer = Trainer::new(spec, cfg, variant, suite.clone(), 5).unwrap();
        trainer.train().unwrap();
        (PolicyRuntime::from_artifacts(&trainer.artifacts()), suite)
    }

    #[test]
    fn zero_width_set_gives_identical_returns() {
        let (mut runtime, _) = quick_runtime(Algorithm::SetEpopt, EnvVariant::ObstacleOnly);
        let set = UncertaintySet::new(vec![0.05], vec![0.0]).unwrap();
        let stats = evaluate_on_set(&mut runtime, &set, 0, 5, HORIZON, 42).unwrap();
        assert_eq!(stats.returns.len(), 5);
        for r in &stats.returns {
            assert_eq!(*r, stats.returns[0]);
        }
        assert_eq!(stats.min_return, stats.mean_return);
    }

    #[test]
    fn k_one_min_equals_mean() {
        let (mut runtime, suite) = quick_runtime(Algorithm::SetEpopt, EnvVariant::ObstacleOnly);
        let stats =
            evaluate_on_set(&mut runtime, &suite.test_sets[0], 0, 1, HORIZON, 43).unwrap();
        assert_eq!(stats.min_return, stats.mean_return);
    }

    #[test]
    fn suite_report_aggregates_and_is_deterministic() {
        let (mut runtime, suite) = quick_runtime(Algorithm::Sirsa, EnvVariant::VelocityOnly);
        let a = evaluate_test_suite(&mut runtime, &suite, 3, HORIZON, 44, "h").unwrap();
        let b = evaluate_test_suite(&mut runtime, &suite, 3, HORIZON, 44, "h").unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a.per_set.len(), suite.test_sets.len());
        for s in &a.per_set {
            assert_eq!(s.returns.len(), 3);
            assert!(s.min_return <= s.mean_return + 1e-12);
        }
        // Single-set suite: aggregates equal that set's stats.
        let mut single = suite.clone();
        single.test_sets.truncate(1);
        let r = evaluate_test_suite(&mut runtime, &single, 3, HORIZON, 44, "h").unwrap();
        assert_eq!(r.mean_of_mins, r.per_set[0].min_return);
        assert_eq!(r.mean_of_means, r.per_set[0].mean_return);
    }

    #[test]
    fn max_uncertainty_is_spanning_set_eval() {
        let (mut runtime, _) = quick_runtime(Algorithm::Epopt, EnvVariant::ObstacleOnly);
        let space = EnvVariant::ObstacleOnly.context_space();
        let a = evaluate_max_uncertainty(&mut runtime, &space, 4, HORIZON, 45).unwrap();
        let set = UncertaintySet::spanning(&space);
        let b = evaluate_on_set(&mut runtime, &set, 0, 4, HORIZON, 45).unwrap();
        assert_eq!(a.returns, b.returns);
    }

    #[test]
    fn misspec_sweep_counts_corners() {
        let (mut runtime, suite) = quick_runtime(Algorithm::SetEpopt, EnvVariant::Combined);
        let table =
            misspecification_sweep(&mut runtime, &suite, &[0.25, 1.0], HORIZON, 46).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert!(table.rows.iter().all(|r| r.axis == "r_level"));
    }

    #[test]
    fn nonstationary_eval_runs_and_reports_traces() {
        let (mut runtime, suite) = quick_runtime(Algorithm::Sirsa, EnvVariant::VelocityOnly);
        let report = nonstationary_eval(&mut runtime, &suite, 10, HORIZON, 6, 47).unwrap();
        assert_eq!(report.total_returns.len(), 6);
        assert_eq!(report.traces.len(), 6);
        assert!(report.traces.iter().all(|t| t.len() == HORIZON));
    }

    #[test]
    fn gap_is_zero_for_self_confusion() {
        let (mut runtime, _) = quick_runtime(Algorithm::Oracle, EnvVariant::ObstacleOnly);
        let c = ContextVector(vec![0.05]);
        let gap =
            estimate_worst_case_gap(&mut runtime, &[c.clone()], &c, 3, HORIZON, 48).unwrap();
        assert_eq!(gap, 0.0);
    }

    #[test]
    fn report_round_trip_through_files() {
        let (mut runtime, suite) = quick_runtime(Algorithm::SetEpopt, EnvVariant::ObstacleOnly);
        let report = evaluate_test_suite(&mut runtime, &suite, 2, HORIZON, 49, "hash").unwrap();
        let dir = std::env::temp_dir().join("sirsa_eval_test");
        emit_report(&report, &dir, "round_trip").unwrap();
        let loaded: EvalReport =
            serde_json::from_str(&std::fs::read_to_string(dir.join("round_trip.json")).unwrap())
                .unwrap();
        assert_eq!(
            serde_json::to_string(&loaded).unwrap(),
            serde_json::to_string(&report).unwrap()
        );
        let csv_content = std::fs::read_to_string(dir.join("round_trip.csv")).unwrap();
        // Header + one row per (set, sample).
        assert_eq!(
            csv_content.lines().count(),
            1 + suite.test_sets.len() * 2
        );
        std::fs::remove_dir_all(&dir).ok();
    }
}
