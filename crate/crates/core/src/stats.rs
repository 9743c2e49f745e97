//! Experiment orchestration: reproducible ensembles of billiard/walk
//! trajectories, normalized checkpoint statistics with bootstrap errors,
//! limit-law comparisons, joint finite-dimensional tests, and flow runs.
//!
//! Reproducibility contract: trajectory i always draws from
//! `rng::stream(seed, i)`, workers only compute per-trajectory records, and
//! every reduction runs serially in trajectory order — reports are
//! bit-identical for a fixed seed under any worker count.

use crate::billiard::{run_flow, sample_initial, MapRunner};
use crate::error::{precondition, Error, Result};
use crate::geometry::BilliardTable;
use crate::ks::ks_two_sample;
use crate::limit_laws::{sample_ml, JointFddSampler, LimitSpec};
use crate::observables::{Cell, NormalizationSeq, ObservableSpec};
use crate::rng::{stream, STREAM_BOOTSTRAP, STREAM_SAMPLER};
use crate::rw_oracle::CompensatedSum;
use crate::walk_sim::CompiledWalk;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Per-trajectory record of one ensemble member.
#[derive(Debug, Clone)]
struct TrajOut {
    acc0: Vec<f64>,
    acc1: Vec<f64>,
    final_pos: Cell,
    truncated: bool,
    /// Birkhoff sums of τ·1{cell=0} and 1{cell=0} (billiard only).
    hopf_tau0: f64,
    hopf_n0: u64,
}

/// Column-major ensemble statistics: `acc0[cp][traj]`.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub checkpoints: Vec<u64>,
    pub acc0: Vec<Vec<f64>>,
    pub acc1: Vec<Vec<f64>>,
    pub final_pos: Vec<Cell>,
    pub trajectories: u64,
    pub truncated: u64,
    pub hopf_tau0: f64,
    pub hopf_n0: u64,
}

fn collect_ensemble(records: Vec<TrajOut>, checkpoints: &[u64], with_acc1: bool) -> Ensemble {
    let n_cp = checkpoints.len();
    let mut ens = Ensemble {
        checkpoints: checkpoints.to_vec(),
        acc0: vec![Vec::new(); n_cp],
        acc1: vec![Vec::new(); if with_acc1 { n_cp } else { 0 }],
        final_pos: Vec::new(),
        trajectories: records.len() as u64,
        truncated: 0,
        hopf_tau0: 0.0,
        hopf_n0: 0,
    };
    // serial, trajectory-ordered reduction (fixed tree)
    for rec in records {
        if rec.truncated {
            ens.truncated += 1;
            continue;
        }
        for (i, v) in rec.acc0.iter().enumerate() {
            ens.acc0[i].push(*v);
        }
        if with_acc1 {
            for (i, v) in rec.acc1.iter().enumerate() {
                ens.acc1[i].push(*v);
            }
        }
        ens.final_pos.push(rec.final_pos);
        ens.hopf_tau0 += rec.hopf_tau0;
        ens.hopf_n0 += rec.hopf_n0;
    }
    ens
}

/// Walk ensemble accumulating one or two observables at the checkpoints.
pub fn walk_ensemble(
    step: &crate::rw_oracle::StepDistribution,
    spec0: &ObservableSpec,
    spec1: Option<&ObservableSpec>,
    n: u64,
    checkpoints: &[u64],
    trajectories: u64,
    seed: u64,
) -> Ensemble {
    let walk = CompiledWalk::from_step(step);
    let records: Vec<TrajOut> = (0..trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i);
            let (acc0, acc1, final_pos) =
                walk.accumulate_observables(n, checkpoints, spec0, spec1, &mut rng);
            TrajOut { acc0, acc1, final_pos, truncated: false, hopf_tau0: 0.0, hopf_n0: 0 }
        })
        .collect();
    collect_ensemble(records, checkpoints, spec1.is_some())
}

/// Billiard map ensemble; truncated trajectories are counted and excluded.
pub fn billiard_ensemble(
    table: &BilliardTable,
    spec0: &ObservableSpec,
    spec1: Option<&ObservableSpec>,
    n: u64,
    checkpoints: &[u64],
    trajectories: u64,
    seed: u64,
) -> Ensemble {
    assert!(checkpoints.last().is_none_or(|&cp| cp <= n));
    let sup0: Vec<(Cell, f64)> = spec0.support().to_vec();
    let sup1: Vec<(Cell, f64)> = spec1.map(|s| s.support().to_vec()).unwrap_or_default();
    let records: Vec<TrajOut> = (0..trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i);
            let st = sample_initial(table, &mut rng);
            let mut runner = MapRunner::new(&st, table);
            let mut out = TrajOut {
                acc0: Vec::with_capacity(checkpoints.len()),
                acc1: Vec::with_capacity(checkpoints.len()),
                final_pos: [0, 0],
                truncated: false,
                hopf_tau0: 0.0,
                hopf_n0: 0,
            };
            let mut a0 = 0.0f64;
            let mut a1 = 0.0f64;
            let mut k = 0u64;
            'outer: for &cp in checkpoints {
                while k < cp {
                    let cell = runner.cell();
                    for &(c, v) in &sup0 {
                        if c == cell {
                            a0 += v;
                        }
                    }
                    for &(c, v) in &sup1 {
                        if c == cell {
                            a1 += v;
                        }
                    }
                    let at_origin = cell == [0, 0];
                    match runner.step(table) {
                        Ok((_, tau)) => {
                            if at_origin {
                                out.hopf_tau0 += tau;
                                out.hopf_n0 += 1;
                            }
                        }
                        Err(Error::TruncatedFlight { .. }) => {
                            out.truncated = true;
                            break 'outer;
                        }
                        Err(_) => unreachable!("map stepping only truncates"),
                    }
                    k += 1;
                }
                out.acc0.push(a0);
                out.acc1.push(a1);
            }
            out.final_pos = runner.cell();
            out
        })
        .collect();
    collect_ensemble(records, checkpoints, spec1.is_some())
}

/// Tail counts of single free flights from i.i.d. μ̄ states:
/// counts[j] = #{samples with τ > thresholds[j]}.
pub fn flight_tail_counts(
    table: &BilliardTable,
    samples: u64,
    thresholds: &[f64],
    seed: u64,
) -> Vec<u64> {
    let partial: Vec<Vec<u64>> = (0..samples)
        .into_par_iter()
        .fold(
            || vec![0u64; thresholds.len()],
            |mut acc, i| {
                let mut rng = stream(seed, i);
                let st = sample_initial(table, &mut rng);
                let mut runner = MapRunner::new(&st, table);
                if let Ok((_, tau)) = runner.step(table) {
                    for (j, &l) in thresholds.iter().enumerate() {
                        if tau > l {
                            acc[j] += 1;
                        }
                    }
                }
                acc
            },
        )
        .collect();
    let mut out = vec![0u64; thresholds.len()];
    for p in partial {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// Least-squares slope of log10(y) against log10(x).
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y > 0.0)
        .map(|(&x, &y)| (x.log10(), y.log10()))
        .collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

pub fn mean(xs: &[f64]) -> f64 {
    let mut acc = CompensatedSum::default();
    for &x in xs {
        acc.add(x);
    }
    acc.value() / xs.len() as f64
}

pub fn mean_sq(xs: &[f64]) -> f64 {
    let mut acc = CompensatedSum::default();
    for &x in xs {
        acc.add(x * x);
    }
    acc.value() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let mut acc = CompensatedSum::default();
    for &x in xs {
        acc.add((x - m) * (x - m));
    }
    acc.value() / (xs.len() as f64 - 1.0)
}

pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub const BOOTSTRAP_RESAMPLES: u64 = 1_000;

/// Percentile bootstrap CI for a statistic of one or two paired samples.
fn bootstrap_ci<F: Fn(&[f64], &[f64]) -> f64>(
    xs: &[f64],
    ys: &[f64],
    stat: F,
    resamples: u64,
    seed: u64,
    level: f64,
) -> (f64, f64) {
    let n = xs.len();
    let mut vals = Vec::with_capacity(resamples as usize);
    let mut bx = vec![0.0; n];
    let mut by = vec![0.0; n];
    for r in 0..resamples {
        let mut rng = stream(seed, STREAM_BOOTSTRAP + r);
        for i in 0..n {
            let j = (rng.random::<u64>() % n as u64) as usize;
            bx[i] = xs[j];
            by[i] = ys[j];
        }
        vals.push(stat(&bx, &by));
    }
    vals.sort_unstable_by(|a, b| a.total_cmp(b));
    let lo_idx = (((1.0 - level) / 2.0) * resamples as f64) as usize;
    let hi_idx = (resamples as usize - 1).min(resamples as usize - 1 - lo_idx);
    (vals[lo_idx], vals[hi_idx])
}

pub fn bootstrap_mean_ci(xs: &[f64], seed: u64, level: f64) -> (f64, f64) {
    bootstrap_ci(xs, xs, |a, _| mean(a), BOOTSTRAP_RESAMPLES, seed, level)
}

pub fn bootstrap_corr_ci(xs: &[f64], ys: &[f64], seed: u64, level: f64) -> (f64, f64) {
    bootstrap_ci(xs, ys, |a, b| correlation(a, b), BOOTSTRAP_RESAMPLES, seed, level)
}

/// Block-jackknife standard error of a statistic of a sample.
fn jackknife_se<F: Fn(&[f64]) -> f64>(xs: &[f64], stat: F) -> f64 {
    let blocks = 100.min(xs.len());
    let mut jack = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let held: Vec<f64> = xs
            .iter()
            .enumerate()
            .filter(|(i, _)| i % blocks != b)
            .map(|(_, &x)| x)
            .collect();
        jack.push(stat(&held));
    }
    let jm = mean(&jack);
    let var_j: f64 =
        jack.iter().map(|v| (v - jm) * (v - jm)).sum::<f64>() * (blocks as f64 - 1.0)
            / blocks as f64;
    var_j.sqrt()
}

/// Φ(0) estimated from the empirical variance of S̄_n/𝔞_n (d = 1), with a
/// 100-block jackknife standard error.
pub fn estimate_phi0_d1(final_pos: &[Cell], a_n: f64) -> (f64, f64) {
    let xs: Vec<f64> = final_pos.iter().map(|c| c[0] as f64 / a_n).collect();
    let phi0_of =
        |v: &[f64]| 1.0 / (2.0 * std::f64::consts::PI * variance(v)).sqrt();
    (phi0_of(&xs), jackknife_se(&xs, phi0_of))
}

/// d = 2 version: Φ(0) = (2π)^{-1} (det Σ̂)^{-1/2} from the empirical
/// covariance of S̄_n/𝔞_n. The jackknife runs on the paired coordinates.
pub fn estimate_phi0_d2(final_pos: &[Cell], a_n: f64) -> (f64, f64) {
    let xs: Vec<f64> = final_pos.iter().map(|c| c[0] as f64 / a_n).collect();
    let ys: Vec<f64> = final_pos.iter().map(|c| c[1] as f64 / a_n).collect();
    let phi0_of = |x: &[f64], y: &[f64]| {
        let mx = mean(x);
        let my = mean(y);
        let n = x.len() as f64;
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for (a, b) in x.iter().zip(y) {
            sxx += (a - mx) * (a - mx);
            syy += (b - my) * (b - my);
            sxy += (a - mx) * (b - my);
        }
        let det = (sxx * syy - sxy * sxy) / ((n - 1.0) * (n - 1.0));
        1.0 / (2.0 * std::f64::consts::PI * det.sqrt())
    };
    let full = phi0_of(&xs, &ys);
    let blocks = 100.min(xs.len());
    let mut jack = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let hx: Vec<f64> = xs
            .iter()
            .enumerate()
            .filter(|(i, _)| i % blocks != b)
            .map(|(_, &x)| x)
            .collect();
        let hy: Vec<f64> = ys
            .iter()
            .enumerate()
            .filter(|(i, _)| i % blocks != b)
            .map(|(_, &x)| x)
            .collect();
        jack.push(phi0_of(&hx, &hy));
    }
    let jm = mean(&jack);
    let var_j: f64 =
        jack.iter().map(|v| (v - jm) * (v - jm)).sum::<f64>() * (blocks as f64 - 1.0)
            / blocks as f64;
    (full, var_j.sqrt())
}

/// Bootstrap standard error of the sample mean (1000 resamples).
pub fn bootstrap_se(xs: &[f64], seed: u64) -> f64 {
    let n = xs.len();
    let mut means = Vec::with_capacity(BOOTSTRAP_RESAMPLES as usize);
    for r in 0..BOOTSTRAP_RESAMPLES {
        let mut rng = stream(seed, STREAM_BOOTSTRAP + r);
        let mut acc = 0.0;
        for _ in 0..n {
            acc += xs[(rng.random::<u64>() % n as u64) as usize];
        }
        means.push(acc / n as f64);
    }
    variance(&means).sqrt()
}

/// Draws from the scaled Mittag-Leffler limit Φ(0)·𝒴 of index θ.
pub fn limit_local_time_sample(count: u64, phi0: f64, theta: f64, seed: u64) -> Vec<f64> {
    (0..count)
        .map(|i| {
            let mut rng = stream(seed, STREAM_SAMPLER + i);
            phi0 * sample_ml(theta, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenanced {
    pub value: f64,
    pub provenance: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatLine {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckpointStats {
    pub n: u64,
    pub big_a: f64,
    pub stats: Vec<StatLine>,
}

/// The versioned experiment report.
#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub mode: String,
    pub system: String,
    pub log_base: String,
    pub trajectories: u64,
    pub truncated_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leak: Option<f64>,
    pub phi0: Provenanced,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_sq: Option<Provenanced>,
    pub checkpoints: Vec<CheckpointStats>,
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

impl MomentReport {
    pub fn empty(config_hash: &str, seed: u64, error: &str) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            config_hash: config_hash.to_owned(),
            seed,
            mode: "none".into(),
            system: "none".into(),
            log_base: "natural".into(),
            trajectories: 0,
            truncated_fraction: 0.0,
            leak: None,
            phi0: Provenanced { value: f64::NAN, provenance: "unavailable".into(), stderr: None },
            sigma_sq: None,
            checkpoints: Vec::new(),
            notes: Vec::new(),
            error: Some(error.to_owned()),
        }
    }
}

/// Per-checkpoint dumps of normalized per-trajectory statistics.
#[derive(Debug, Clone, Default)]
pub struct SampleDumps {
    pub checkpoints: Vec<u64>,
    /// columns[i] = (name, values at checkpoint i per trajectory)
    pub columns: Vec<(String, Vec<Vec<f64>>)>,
}

/// Joint finite-dimensional test report (Theorem-level dependence checks).
#[derive(Debug, Clone, Serialize)]
pub struct FddReport {
    pub times: Vec<f64>,
    pub n: u64,
    pub trajectories: u64,
    /// corr(ℒ at t_M, |B-component| at t_M) with its 99% bootstrap CI.
    pub corr_l_absb: f64,
    pub corr_ci99: (f64, f64),
    /// Conditional variance ratio (upper/lower half by ℒ) vs the conditional
    /// mean ratio of ℒ — equal in a variance mixture.
    pub cond_var_ratio: f64,
    pub cond_mean_ratio: f64,
    /// Marginal KS distances (data vs oracle sampler) for both components
    /// at the final time.
    pub ks_first: f64,
    pub ks_second: f64,
    /// d = 2 only: pairwise KS p-values between checkpoint distributions of
    /// the first component.
    pub constancy_p: Option<f64>,
}

/// Runs the joint fdd experiment on a walk system.
#[allow(clippy::too_many_arguments)]
pub fn fdd_joint_test(
    step: &crate::rw_oracle::StepDistribution,
    spec_g: &ObservableSpec,
    spec_f: &ObservableSpec,
    seq: &NormalizationSeq,
    limit: &LimitSpec,
    times: &[f64],
    n: u64,
    trajectories: u64,
    oracle_fine_scale: u64,
    seed: u64,
) -> Result<FddReport> {
    precondition(spec_f.null_sum(), "f-like observable must be null-sum")?;
    precondition(!times.is_empty() && times.windows(2).all(|w| w[0] < w[1]), "bad times")?;
    let checkpoints: Vec<u64> = times
        .iter()
        .map(|t| ((t * n as f64).floor() as u64).max(1))
        .collect();
    let ens = walk_ensemble(step, spec_g, Some(spec_f), n, &checkpoints, trajectories, seed);
    let big_a = seq.big_a(n);
    let last = checkpoints.len() - 1;
    let first: Vec<f64> = ens.acc0[last].iter().map(|v| v / big_a).collect();
    let second: Vec<f64> = ens.acc1[last].iter().map(|v| v / big_a.sqrt()).collect();
    let abs_second: Vec<f64> = second.iter().map(|v| v.abs()).collect();
    let corr = correlation(&first, &abs_second);
    let ci = bootstrap_corr_ci(&first, &abs_second, seed ^ 0x5eed, 0.99);

    // conditional variance-mixture check across the median split of ℒ
    let mut sorted = first.clone();
    sorted.sort_unstable_by(|a, b| a.total_cmp(b));
    let med = sorted[sorted.len() / 2];
    let (mut lo_x, mut hi_x, mut lo_l, mut hi_l) = (vec![], vec![], vec![], vec![]);
    for (l, x) in first.iter().zip(&second) {
        if *l <= med {
            lo_x.push(*x);
            lo_l.push(*l);
        } else {
            hi_x.push(*x);
            hi_l.push(*l);
        }
    }
    let cond_var_ratio = variance(&hi_x) / variance(&lo_x);
    let cond_mean_ratio = mean(&hi_l) / mean(&lo_l);

    // marginal comparisons against the oracle sampler
    let sampler = JointFddSampler::new(times, *limit, oracle_fine_scale)?;
    let draws = trajectories.min(50_000);
    let mut o_first = Vec::with_capacity(draws as usize);
    let mut o_second = Vec::with_capacity(draws as usize);
    for i in 0..draws {
        let mut rng = stream(seed ^ 0x0bac1e, STREAM_SAMPLER + i);
        let (ell, b) = sampler.sample(&mut rng);
        o_first.push(ell[last]);
        o_second.push(b[last]);
    }
    let (ks_first, _) = ks_two_sample(first.clone(), o_first);
    let (ks_second, _) = ks_two_sample(second.clone(), o_second);

    let constancy_p = if limit.d == 2 && checkpoints.len() >= 2 {
        let a: Vec<f64> = ens.acc0[last - 1].iter().map(|v| v / big_a).collect();
        let (_, p) = ks_two_sample(a, first.clone());
        Some(p)
    } else {
        None
    };

    Ok(FddReport {
        times: times.to_vec(),
        n,
        trajectories,
        corr_l_absb: corr,
        corr_ci99: ci,
        cond_var_ratio,
        cond_mean_ratio,
        ks_first,
        ks_second,
        constancy_p,
    })
}

/// Flow experiment report.
#[derive(Debug, Clone, Serialize)]
pub struct FlowExperimentReport {
    pub t_max: f64,
    pub checkpoint_times: Vec<f64>,
    pub trajectories: u64,
    pub truncated: u64,
    /// ensemble mean of 𝔫_t / t at each checkpoint.
    pub collision_rate: Vec<f64>,
    /// max relative deviation of 𝔫_t/t from its final value over the last
    /// decade of checkpoints.
    pub rate_stability: f64,
    pub mean_free_path_analytic: f64,
    /// normalized null-sum statistic at the final checkpoint: mean, stderr.
    pub null_sum_mean: f64,
    pub null_sum_stderr: f64,
    /// mean of 𝔄_{𝔫_T} / (𝔄_T / E[τ]^{(2−d)/2}): the time-change factor.
    pub time_change_ratio: f64,
    /// Hopf ratio Σ τ·1₀ / Σ 1₀ (map-side estimate of E_μ̄[τ]) per checkpoint
    /// trend from the companion map ensemble, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hopf_ratio: Option<f64>,
}

/// Runs the flow ensemble: per-cell collision counts at checkpoint times,
/// the collision-rate trend, and the normalized null-sum flow statistic.
#[allow(clippy::too_many_arguments)]
pub fn flow_experiment(
    table: &BilliardTable,
    spec: &ObservableSpec,
    seq: &NormalizationSeq,
    t_max: f64,
    checkpoint_times: &[f64],
    trajectories: u64,
    seed: u64,
) -> Result<FlowExperimentReport> {
    precondition(spec.null_sum(), "flow statistic requires a null-sum observable")?;
    let watched: Vec<Cell> = spec.support().iter().map(|(c, _)| *c).collect();
    let records: Vec<_> = (0..trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i);
            let st = sample_initial(table, &mut rng);
            run_flow(&st, t_max, table, &watched, checkpoint_times)
        })
        .collect::<Result<Vec<_>>>()?;
    let truncated = records.iter().filter(|r| r.truncated).count() as u64;
    let kept: Vec<_> = records.into_iter().filter(|r| !r.truncated).collect();
    precondition(!kept.is_empty(), "all flow trajectories truncated")?;

    let n_cp = checkpoint_times.len();
    let mut collision_rate = vec![0.0; n_cp];
    for r in &kept {
        for (i, &c) in r.collisions.iter().enumerate() {
            collision_rate[i] += c as f64 / checkpoint_times[i];
        }
    }
    for v in collision_rate.iter_mut() {
        *v /= kept.len() as f64;
    }
    let final_rate = collision_rate[n_cp - 1];
    let mut rate_stability: f64 = 0.0;
    for (i, &t) in checkpoint_times.iter().enumerate() {
        if t >= t_max / 10.0 {
            rate_stability = rate_stability.max((collision_rate[i] - final_rate).abs() / final_rate);
        }
    }

    // null-sum statistic 𝔄_n^{-1/2} Σ_ℓ β_ℓ 𝒩_T(ℓ) with n = T
    let n_scale = t_max as u64;
    let big_a = seq.big_a(n_scale.max(1));
    let stats: Vec<f64> = kept
        .iter()
        .map(|r| {
            let mut s = 0.0;
            for (w, (cell, b)) in spec.support().iter().enumerate() {
                debug_assert_eq!(r.watched[w], *cell);
                s += b * r.counts[n_cp - 1][w] as f64;
            }
            s / big_a.sqrt()
        })
        .collect();
    let null_sum_mean = mean(&stats);
    let null_sum_stderr = std_error(&stats);

    // time-change diagnostic
    let e_tau = table.mean_free_path();
    let exponent = (2.0 - table.dim() as f64) / 2.0;
    let want = big_a / e_tau.powf(exponent);
    let mut ratio_acc = 0.0;
    for r in &kept {
        let n_t = r.collisions[n_cp - 1].max(1);
        ratio_acc += seq.big_a(n_t) / want;
    }
    let time_change_ratio = ratio_acc / kept.len() as f64;

    Ok(FlowExperimentReport {
        t_max,
        checkpoint_times: checkpoint_times.to_vec(),
        trajectories,
        truncated,
        collision_rate,
        rate_stability,
        mean_free_path_analytic: e_tau,
        null_sum_mean,
        null_sum_stderr,
        time_change_ratio,
        hopf_ratio: None,
    })
}

/// The analytic Φ(0) of a walk system: Gaussian density for α = 2 steps,
/// Γ(1+1/α)/π for a fitted-scale stable walk (cf exp(−|t|^α)).
pub fn walk_phi0(step: &crate::rw_oracle::StepDistribution, seq: &NormalizationSeq) -> f64 {
    if (seq.alpha - 2.0).abs() < 1e-9 {
        let cov = step.covariance();
        let c2 = seq.c * seq.c;
        let d = if step.dim() == 1 { 1.0 } else { 2.0 };
        let det = if step.dim() == 1 {
            cov[0][0] / c2
        } else {
            (cov[0][0] / c2) * (cov[1][1] / c2) - (cov[0][1] / c2) * (cov[1][0] / c2)
        };
        (2.0 * std::f64::consts::PI).powf(-d / 2.0) / det.sqrt()
    } else {
        crate::gamma::gamma(1.0 + 1.0 / seq.alpha) / std::f64::consts::PI
    }
}

/// Runs the configured experiment and assembles the report plus the
/// per-trajectory normalized sample dumps.
pub fn run_experiment(
    cfg: &crate::config::ExperimentConfig,
    cfg_hash: &str,
) -> Result<(MomentReport, SampleDumps)> {
    use crate::config::SystemConfig;
    cfg.validate()?;
    let dim = cfg.dim();
    let spec = cfg.observable.build(dim)?;
    let seq = cfg.normalization;
    precondition(seq.d == dim, "normalization dimension mismatch")?;
    let theta = (seq.alpha - dim as f64) / seq.alpha;

    let mut report = MomentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config_hash: cfg_hash.to_owned(),
        seed: cfg.seed,
        mode: String::new(),
        system: String::new(),
        log_base: "natural".into(),
        trajectories: cfg.trajectories,
        truncated_fraction: 0.0,
        leak: None,
        phi0: Provenanced { value: f64::NAN, provenance: "unset".into(), stderr: None },
        sigma_sq: None,
        checkpoints: Vec::new(),
        notes: Vec::new(),
        error: None,
    };
    let eta = cfg.observable.eta.unwrap_or((seq.alpha - dim as f64 + 0.25) / 2.0);
    report.notes.push(format!(
        "observable: sum(beta) = {:.3e}, eta = {eta}, eta-weighted norm = {:.6}",
        spec.sum(),
        spec.eta_weight_norm(eta)
    ));

    // exact-DP mode (walk systems only)
    if let Some(dp_cfg) = &cfg.exact_dp {
        let step = match &cfg.system {
            SystemConfig::Walk { step } => step.build()?,
            _ => {
                return Err(Error::Precondition(
                    "exact_dp mode requires a walk system".into(),
                ))
            }
        };
        report.mode = "exact_dp".into();
        report.system = "walk".into();
        report.phi0 = Provenanced {
            value: walk_phi0(&step, &seq),
            provenance: "analytic".into(),
            stderr: None,
        };
        let hw = dp_cfg
            .half_width
            .unwrap_or((10.0 * seq.a(cfg.n_max)).ceil() as i64);
        let dp = crate::rw_oracle::exact_moment_dp(
            &step,
            &spec,
            dp_cfg.degree,
            cfg.n_max,
            hw,
            &cfg.checkpoints,
            dp_cfg.leak_bound.unwrap_or(1e-9),
        )?;
        report.leak = Some(dp.final_leak);
        for (i, &cp) in cfg.checkpoints.iter().enumerate() {
            let big_a = seq.big_a(cp);
            let mut stats = Vec::new();
            if spec.null_sum() {
                stats.push(StatLine {
                    name: "null_sum_m2_norm".into(),
                    value: dp.moments[i][2] / big_a,
                    stderr: None,
                    predicted: None,
                });
                if dp_cfg.degree >= 4 {
                    let r = dp.moments[i][4] / (dp.moments[i][2] * dp.moments[i][2]);
                    stats.push(StatLine {
                        name: "null_sum_m4_ratio".into(),
                        value: r,
                        stderr: None,
                        predicted: Some(3.0 * crate::limit_laws::ml_index_moment(theta, 2)),
                    });
                }
            } else {
                stats.push(StatLine {
                    name: "integrable_mean_norm".into(),
                    value: dp.moments[i][1] / big_a,
                    stderr: None,
                    predicted: Some(report.phi0.value * spec.sum()),
                });
            }
            report.checkpoints.push(CheckpointStats { n: cp, big_a, stats });
        }
        return Ok((report, SampleDumps::default()));
    }

    if cfg.trajectories == 0 {
        return Ok((MomentReport::empty(cfg_hash, cfg.seed, "zero trajectories requested"), SampleDumps::default()));
    }

    // Monte Carlo mode
    report.mode = "monte_carlo".into();
    let spec_g = match &cfg.observable_g {
        Some(g) => Some(g.build(dim)?),
        None => None,
    };
    let (spec0, spec1) = match (&spec_g, spec.null_sum()) {
        // joint run: g-like integrable first, f-like null-sum second
        (Some(g), _) => (g.clone(), Some(spec.clone())),
        (None, true) => (ObservableSpec::local_time(dim), Some(spec.clone())),
        (None, false) => (spec.clone(), None),
    };
    let ens = match &cfg.system {
        SystemConfig::Walk { step } => {
            report.system = "walk".into();
            let step = step.build()?;
            let ens = walk_ensemble(
                &step,
                &spec0,
                spec1.as_ref(),
                cfg.n_max,
                &cfg.checkpoints,
                cfg.trajectories,
                cfg.seed,
            );
            report.phi0 = Provenanced {
                value: walk_phi0(&step, &seq),
                provenance: "analytic".into(),
                stderr: None,
            };
            if let Some(s1) = &spec1 {
                let k_max = 10_000usize.min(cfg.n_max as usize);
                let occ = crate::rw_oracle::convolve(
                    &step,
                    k_max,
                    (10.0 * seq.a(k_max as u64)).ceil() as i64,
                )?;
                let est = crate::limit_laws::sigma_beta_sq(&occ, s1, k_max)?;
                report.sigma_sq = Some(Provenanced {
                    value: est.value(),
                    provenance: format!("exact convolution to k = {k_max} + tail"),
                    stderr: Some(est.tail_bound),
                });
            }
            ens
        }
        SystemConfig::Billiard { table } => {
            report.system = "billiard".into();
            let table = table.build()?;
            let ens = billiard_ensemble(
                &table,
                &spec0,
                spec1.as_ref(),
                cfg.n_max,
                &cfg.checkpoints,
                cfg.trajectories,
                cfg.seed,
            );
            let frac = ens.truncated as f64 / cfg.trajectories as f64;
            if frac > 0.01 {
                return Err(Error::Precondition(format!(
                    "truncated fraction {frac:.3} exceeds 1%"
                )));
            }
            let a_n = seq.a(cfg.n_max);
            let (phi0, se) = if dim == 1 {
                estimate_phi0_d1(&ens.final_pos, a_n)
            } else {
                estimate_phi0_d2(&ens.final_pos, a_n)
            };
            report.phi0 =
                Provenanced { value: phi0, provenance: "estimated".into(), stderr: Some(se) };
            report.notes.push(format!(
                "hopf ratio (E[τ] estimate): {:.5}, analytic mean free path {:.5}",
                ens.hopf_tau0 / ens.hopf_n0.max(1) as f64,
                table.mean_free_path()
            ));
            ens
        }
    };
    report.truncated_fraction = ens.truncated as f64 / cfg.trajectories as f64;

    let mut dumps = SampleDumps { checkpoints: cfg.checkpoints.clone(), columns: Vec::new() };
    let mut col0 = Vec::new();
    let mut col1 = Vec::new();
    for (i, &cp) in cfg.checkpoints.iter().enumerate() {
        let big_a = seq.big_a(cp);
        let mut stats = Vec::new();
        let vals0: Vec<f64> = ens.acc0[i].iter().map(|v| v / big_a).collect();
        stats.push(StatLine {
            name: "integrable_mean_norm".into(),
            value: mean(&vals0),
            stderr: Some(bootstrap_se(&vals0, cfg.seed ^ cp)),
            predicted: Some(report.phi0.value * spec0.sum()),
        });
        let m1 = mean(&vals0);
        let m2 = mean_sq(&vals0);
        stats.push(StatLine {
            name: "integrable_m2_ratio".into(),
            value: m2 / (m1 * m1),
            stderr: None,
            predicted: Some(crate::limit_laws::ml_index_moment(theta, 2)),
        });
        if let Some(acc1) = ens.acc1.get(i) {
            let vals1: Vec<f64> = acc1.iter().map(|v| v / big_a.sqrt()).collect();
            stats.push(StatLine {
                name: "null_sum_mean_norm".into(),
                value: mean(&vals1),
                stderr: Some(std_error(&vals1)),
                predicted: Some(0.0),
            });
            let sq: Vec<f64> = vals1.iter().map(|v| v * v).collect();
            stats.push(StatLine {
                name: "null_sum_m2_norm".into(),
                value: mean(&sq),
                stderr: Some(bootstrap_se(&sq, cfg.seed ^ cp ^ 0xff)),
                predicted: report
                    .sigma_sq
                    .as_ref()
                    .map(|s| s.value * report.phi0.value),
            });
            col1.push(vals1);
        }
        col0.push(vals0);
        report.checkpoints.push(CheckpointStats { n: cp, big_a, stats });
    }
    dumps.columns.push(("integrable_norm".into(), col0));
    if !col1.is_empty() {
        dumps.columns.push(("null_sum_norm".into(), col1));
    }
    Ok((report, dumps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observables::cell1;
    use crate::rw_oracle::{exact_moment_dp, StepDistribution};

    #[test]
    fn ensemble_deterministic_under_worker_count() {
        let step = StepDistribution::lazy1d();
        let lt = ObservableSpec::local_time(1);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| walk_ensemble(&step, &lt, None, 2_000, &[1_000, 2_000], 500, 99))
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.acc0, b.acc0);
        assert_eq!(a.final_pos, b.final_pos);
    }

    #[test]
    fn bootstrap_covers_exact_dp_mean() {
        // self-calibration: 99% bootstrap CIs over repeated MC runs cover the
        // exact-DP value of E[L_n]/𝔄_n in at least 90% of runs
        let step = StepDistribution::lazy1d();
        let lt = ObservableSpec::local_time(1);
        let n = 2_000u64;
        let seq = NormalizationSeq::lazy_walk(1);
        let big_a = seq.big_a(n);
        let dp = exact_moment_dp(&step, &lt, 1, n, 500, &[n], 1e-9).unwrap();
        let exact = dp.moments[0][1] / big_a;
        let reps = 50;
        let mut covered = 0;
        for rep in 0..reps {
            let ens = walk_ensemble(&step, &lt, None, n, &[n], 1_500, 7_000 + rep);
            let vals: Vec<f64> = ens.acc0[0].iter().map(|v| v / big_a).collect();
            let (lo, hi) = bootstrap_mean_ci(&vals, 7_000 + rep, 0.99);
            if exact >= lo && exact <= hi {
                covered += 1;
            }
        }
        assert!(covered * 100 >= reps * 90, "covered {covered}/{reps}");
    }

    #[test]
    fn billiard_ensemble_runs_and_counts() {
        let table = BilliardTable::canonical(2);
        let lt = ObservableSpec::local_time(2);
        let ens = billiard_ensemble(&table, &lt, None, 200, &[100, 200], 50, 5);
        assert_eq!(ens.trajectories, 50);
        assert_eq!(ens.acc0.len(), 2);
        // local time counts start at 1 (k = 0 in cell 0) and never decrease
        for (a, b) in ens.acc0[0].iter().zip(&ens.acc0[1]) {
            assert!(*a >= 1.0);
            assert!(b >= a);
        }
        // Hopf ratio estimates E_μ̄[τ]
        let hopf = ens.hopf_tau0 / ens.hopf_n0 as f64;
        let want = table.mean_free_path();
        assert!((hopf - want).abs() / want < 0.05, "hopf {hopf} vs {want}");
    }

    #[test]
    fn phi0_estimator_on_gaussian_walk() {
        // lazy walk: S_n/𝔞_n → N(0,1), so Φ(0) → 1/√(2π)
        let step = StepDistribution::lazy1d();
        let lt = ObservableSpec::local_time(1);
        let n = 4_000u64;
        let ens = walk_ensemble(&step, &lt, None, n, &[n], 4_000, 11);
        let seq = NormalizationSeq::lazy_walk(1);
        let (phi0, se) = estimate_phi0_d1(&ens.final_pos, seq.a(n));
        let want = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!(
            (phi0 - want).abs() < 4.0 * se.max(0.003),
            "phi0 {phi0} ± {se} vs {want}"
        );
    }

    #[test]
    fn fdd_report_positive_dependence() {
        let step = StepDistribution::lazy1d();
        let g = ObservableSpec::local_time(1);
        let f = ObservableSpec::cell_difference(1, cell1(0), cell1(1)).unwrap();
        let seq = NormalizationSeq::lazy_walk(1);
        let limit =
            LimitSpec::new(2.0, 1, 1.0 / (2.0 * std::f64::consts::PI).sqrt(), 6.0).unwrap();
        let rep = fdd_joint_test(
            &step, &g, &f, &seq, &limit, &[0.5, 1.0], 10_000, 2_000, 20_000, 17,
        )
        .unwrap();
        assert!(rep.corr_l_absb > 0.2, "corr {}", rep.corr_l_absb);
        assert!(rep.corr_ci99.0 > 0.0, "CI {:?}", rep.corr_ci99);
        let rel = rep.cond_var_ratio / rep.cond_mean_ratio - 1.0;
        assert!(rel.abs() < 0.25, "mixture check {rel}");
    }

    #[test]
    fn run_experiment_modes() {
        let text = r#"
seed = 5
trajectories = 300
n_max = 2000
checkpoints = [500, 2000]
[system]
kind = "walk"
[system.step]
kind = "lazy1d"
[normalization]
kind = "pure_power"
d = 1
alpha = 2.0
c = 0.7071067811865476
[observable]
beta = [{ cell = [0], value = 1.0 }, { cell = [1], value = -1.0 }]
"#;
        let cfg = crate::config::parse_experiment(text).unwrap();
        let (rep1, dumps) = run_experiment(&cfg, "h").unwrap();
        let (rep2, _) = run_experiment(&cfg, "h").unwrap();
        // determinism: identical seeds give bit-identical reports
        assert_eq!(
            serde_json::to_string(&rep1).unwrap(),
            serde_json::to_string(&rep2).unwrap()
        );
        assert_eq!(rep1.mode, "monte_carlo");
        assert!(rep1.sigma_sq.is_some());
        assert_eq!(dumps.columns.len(), 2);

        // zero trajectories: empty report with the error flag set
        let mut cfg0 = cfg.clone();
        cfg0.trajectories = 0;
        let (rep0, _) = run_experiment(&cfg0, "h").unwrap();
        assert!(rep0.error.is_some());
        assert!(rep0.checkpoints.is_empty());

        // exact-DP mode reports exact (not Monte Carlo) moments
        let mut cfg_dp = cfg.clone();
        cfg_dp.exact_dp = Some(crate::config::DpConfig {
            degree: 2,
            half_width: Some(400),
            leak_bound: None,
        });
        let (rep_dp, _) = run_experiment(&cfg_dp, "h").unwrap();
        assert_eq!(rep_dp.mode, "exact_dp");
        assert!(rep_dp.leak.unwrap() < 1e-9);
        let m2 = rep_dp.checkpoints[1]
            .stats
            .iter()
            .find(|s| s.name == "null_sum_m2_norm")
            .unwrap()
            .value;
        // cross-route: Monte Carlo mean of X²/𝔄 should be near the exact one
        let mc = rep1.checkpoints[1]
            .stats
            .iter()
            .find(|s| s.name == "null_sum_m2_norm")
            .unwrap();
        assert!((mc.value - m2).abs() < 6.0 * mc.stderr.unwrap().max(0.01));
    }

    #[test]
    fn flow_experiment_shapes() {
        let table = BilliardTable::canonical(2);
        let spec = ObservableSpec::cell_difference(2, [1, 0], [-1, 0]).unwrap();
        let seq = NormalizationSeq::billiard_log(2);
        let cps = vec![50.0, 100.0, 200.0, 400.0];
        let rep =
            flow_experiment(&table, &spec, &seq, 400.0, &cps, 200, 13).unwrap();
        assert_eq!(rep.collision_rate.len(), 4);
        let want = 1.0 / rep.mean_free_path_analytic;
        assert!(
            (rep.collision_rate[3] - want).abs() / want < 0.05,
            "rate {} vs {want}",
            rep.collision_rate[3]
        );
        assert!(rep.null_sum_mean.abs() < 5.0 * rep.null_sum_stderr);
    }
}
