//! The acceptance suite: ten named criteria, each a self-contained run with
//! pinned seeds, sizes, and tolerances, reporting one pass/fail line plus
//! its measured numbers. `verify` in the CLI and the acceptance integration
//! tests both dispatch through [`criteria`].

use crate::billiard::{run_flow, run_map, sample_initial};
use crate::geometry::{reflect, BilliardTable};
use crate::ks::{ks_statistic, ks_two_sample};
use crate::limit_laws::{ml_moment, sigma_beta_sq, LimitSpec};
use crate::observables::{cell1, NormalizationSeq, ObservableSpec};
use crate::rng::stream;
use crate::rw_oracle::{
    convolve, exact_moment_dp, fourier_occupation, lazy2d_return_probs,
    local_time_mean_var_from_returns, q_double_diff, q_prime, stable_step_builder,
    StepDistribution,
};
use crate::stats::{
    billiard_ensemble, estimate_phi0_d1, fdd_joint_test, flight_tail_counts, flow_experiment,
    limit_local_time_sample, loglog_slope, mean, mean_sq, walk_ensemble,
};
use rand::Rng;
use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct CriterionOutcome {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub lines: Vec<String>,
}

impl CriterionOutcome {
    fn new(id: u32, name: &'static str) -> Self {
        Self { id, name, passed: true, lines: Vec::new() }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.passed &= ok;
        self.lines.push(format!("[{}] {line}", if ok { "ok" } else { "FAIL" }));
    }

    fn note(&mut self, line: String) {
        self.lines.push(format!("[--] {line}"));
    }

    pub fn summary(&self) -> String {
        format!(
            "criterion {:2} {:34} {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// 1. Exact-oracle identities: conservation, the Appendix decomposition,
/// Fourier vs convolution.
pub fn c01_oracle_identities() -> CriterionOutcome {
    let mut out = CriterionOutcome::new(1, "oracle-identities");

    // lazy 1d at full depth 2000 and 10·𝔞_n half-width
    let step = StepDistribution::lazy1d();
    let hw = 316i64;
    let occ = convolve(&step, 2000, hw).unwrap();
    let mut worst_sum: f64 = 0.0;
    for k in 0..=2000 {
        worst_sum = worst_sum.max((occ.row_sum(k) + occ.leaked(k) - 1.0).abs());
    }
    out.check(
        worst_sum < 1e-12,
        format!("1d row sums + leak = 1 within 1e-12 (worst {worst_sum:.2e})"),
    );

    // decomposition ν(S_k = b−a) = Q'' + Q'(b) + Q'(−a) + ν(0), exhaustive
    let mut worst_dec: f64 = 0.0;
    for k in 0..=2000usize {
        let row = occ.row(k);
        let origin = hw as usize;
        let nu0 = row[origin];
        for a in -hw..=hw {
            for b in (a - hw).max(-hw)..=(a + hw).min(hw) {
                let lhs = row[(b - a + hw) as usize];
                let rhs = (row[(b - a + hw) as usize]
                    - row[(b + hw) as usize]
                    - row[(-a + hw) as usize]
                    + nu0)
                    + (row[(b + hw) as usize] - nu0)
                    + (row[(-a + hw) as usize] - nu0)
                    + nu0;
                let err = (lhs - rhs).abs();
                if err > worst_dec {
                    worst_dec = err;
                }
            }
        }
    }
    out.check(
        worst_dec < 1e-13,
        format!("1d decomposition exact for all in-range (k,a,b) (worst {worst_dec:.2e})"),
    );

    // Fourier route vs convolution, 1d
    let mut worst_fourier: f64 = 0.0;
    for &k in &[0usize, 1, 2, 5, 13, 100, 500, 1000, 2000] {
        let row = fourier_occupation(&step, k, hw);
        for (i, v) in occ.row(k).iter().enumerate() {
            worst_fourier = worst_fourier.max((row[i] - v).abs());
        }
    }
    out.check(
        worst_fourier < 1e-10,
        format!("1d Fourier vs convolution < 1e-10 (worst {worst_fourier:.2e})"),
    );

    // lazy 2d: tight grid with real leak; identities stay exact
    let step2 = StepDistribution::lazy2d();
    let hw2 = 40i64;
    let occ2 = convolve(&step2, 2000, hw2).unwrap();
    let mut worst_sum2: f64 = 0.0;
    for k in 0..=2000 {
        worst_sum2 = worst_sum2.max((occ2.row_sum(k) + occ2.leaked(k) - 1.0).abs());
    }
    out.check(
        worst_sum2 < 1e-12,
        format!(
            "2d row sums + leak = 1 within 1e-12 (worst {worst_sum2:.2e}, final leak {:.3})",
            occ2.leaked(2000)
        ),
    );
    let mut worst_dec2: f64 = 0.0;
    let grid: Vec<i64> = (-hw2..=hw2).step_by(8).collect();
    for k in (0..=2000usize).step_by(1) {
        for &ax in &grid {
            for &ay in &grid {
                for &bx in &grid {
                    for &by in &grid {
                        let a = [ax, ay];
                        let b = [bx, by];
                        if (bx - ax).abs() > hw2 || (by - ay).abs() > hw2 {
                            continue;
                        }
                        let lhs = occ2.value(k, [bx - ax, by - ay]).unwrap();
                        let rhs = q_double_diff(&occ2, k, a, b).unwrap()
                            + q_prime(&occ2, k, b).unwrap()
                            + q_prime(&occ2, k, [-ax, -ay]).unwrap()
                            + occ2.value(k, [0, 0]).unwrap();
                        worst_dec2 = worst_dec2.max((lhs - rhs).abs());
                    }
                }
            }
        }
    }
    out.check(
        worst_dec2 < 1e-13,
        format!("2d decomposition exact on (a,b) sublattice, all k (worst {worst_dec2:.2e})"),
    );
    let occ2f = convolve(&step2, 100, 50).unwrap();
    let mut worst_fourier2: f64 = 0.0;
    for &k in &[0usize, 1, 2, 10, 50, 100] {
        let row = fourier_occupation(&step2, k, 50);
        for (i, v) in occ2f.row(k).iter().enumerate() {
            worst_fourier2 = worst_fourier2.max((row[i] - v).abs());
        }
    }
    out.check(
        worst_fourier2 < 1e-10,
        format!("2d Fourier vs convolution < 1e-10 (worst {worst_fourier2:.2e})"),
    );
    out
}

/// 2. d=1 local-time first moment against Φ(0)·E[𝒴] = Φ(0).
pub fn c02_local_time_mean_d1() -> CriterionOutcome {
    let mut out = CriterionOutcome::new(2, "local-time-mean-d1");
    let step = StepDistribution::lazy1d();
    let lt = ObservableSpec::local_time(1);
    let seq = NormalizationSeq::lazy_walk(1);
    let n = 100_000u64;
    let hw = (10.0 * seq.a(n)).ceil() as i64;
    let cps = [1_000u64, 10_000, 100_000];
    let dp = exact_moment_dp(&step, &lt, 1, n, hw, &cps, 1e-9).unwrap();
    let phi0 = 1.0 / (2.0 * PI).sqrt();
    out.note(format!("a_k = sqrt(k/2), phi0 = {phi0:.6}, E[Y] = {}", ml_moment(2.0, 1, 1)));
    for (i, &cp) in cps.iter().enumerate() {
        let ratio = dp.moments[i][1] / seq.big_a(cp) / phi0;
        let line = format!("E[L_n]/A_n / phi0 = {ratio:.5} at n = {cp}");
        if cp == n {
            out.check((ratio - 1.0).abs() < 0.02, format!("{line} (within 2%)"));
        } else {
            out.note(line);
        }
    }
    out.note(format!("dp leak {:.2e}", dp.final_leak));
    out
}

/// 3. d=1 null-sum second moment against σ_β²Φ(0).
pub fn c03_null_sum_second_moment_d1() -> CriterionOutcome {
    let mut out = CriterionOutcome::new(3, "null-sum-second-moment-d1");
    let step = StepDistribution::lazy1d();
    let spec = ObservableSpec::cell_difference(1, cell1(0), cell1(1)).unwrap();
    let seq = NormalizationSeq::lazy_walk(1);
    let phi0 = 1.0 / (2.0 * PI).sqrt();

    let k_max = 10_000usize;
    let occ = convolve(&step, k_max, (10.0 * seq.a(k_max as u64)).ceil() as i64).unwrap();
    let est = sigma_beta_sq(&occ, &spec, k_max).unwrap();
    out.check(
        (est.via_correlation - est.via_qdiff).abs() < 1e-6,
        format!(
            "sigma^2 formulas agree: {:.8} vs {:.8}",
            est.via_correlation, est.via_qdiff
        ),
    );
    let sigma_sq = est.value();
    out.note(format!(
        "sigma^2 = {sigma_sq:.6} (partial {:.6} + tail bound {:.2e})",
        est.via_correlation, est.tail_bound
    ));

    let n = 100_000u64;
    let hw = (10.0 * seq.a(n)).ceil() as i64;
    let cps = [1_000u64, 10_000, 100_000];
    let dp = exact_moment_dp(&step, &spec, 2, n, hw, &cps, 1e-9).unwrap();
    for (i, &cp) in cps.iter().enumerate() {
        let ratio = dp.moments[i][2] / seq.big_a(cp) / (sigma_sq * phi0);
        let line = format!("E[X^2]/A_n / (sigma^2 phi0) = {ratio:.5} at n = {cp}");
        if cp == n {
            out.check((ratio - 1.0).abs() < 0.05, format!("{line} (within 5%)"));
        } else {
            out.note(line);
        }
    }
    out
}

/// 4. d=1 fourth-moment ratio toward 3·E[𝒴²] = 3π/2.
pub fn c04_fourth_moment_ratio_d1() -> CriterionOutcome {
    let mut out = CriterionOutcome::new(4, "fourth-moment-ratio-d1");
    let step = StepDistribution::lazy1d();
    let spec = ObservableSpec::cell_difference(1, cell1(0), cell1(1)).unwrap();
    let seq = NormalizationSeq::lazy_walk(1);
    let n = 100_000u64;
    let hw = (10.0 * seq.a(n)).ceil() as i64;
    let cps = [1_000u64, 10_000, 100_000];
    let dp = exact_moment_dp(&step, &spec, 4, n, hw, &cps, 1e-9).unwrap();
    let limit = 3.0 * ml_moment(2.0, 1, 2);
    out.note(format!("limit 3·E[Y^2] = 3π/2 = {limit:.6}"));
    let mut ratios = Vec::new();
    for (i, &cp) in cps.iter().enumerate() {
        let r = dp.moments[i][4] / (dp.moments[i][2] * dp.moments[i][2]);
        out.check(
            (r - limit).abs() / limit < 0.10,
            format!("E[X^4]/E[X^2]^2 = {r:.5} at n = {cp} (within 10%)"),
        );
        ratios.push(r);
    }
    out.check(
        ratios.windows(2).all(|w| w[1] > w[0]) && ratios[2] < limit,
        format!("monotone trend toward the limit: {ratios:.5?}"),
    );
    out
}

/// 5. d=2 exponential limit: E[L_n]/𝔄_n → Φ(0) and Var/E² → 1 (log rate;
/// the 10% band is pinned at the largest n, the triple pins the trend).
pub fn c05_exponential_limit_d2() -> CriterionOutcome {
    let mut out = CriterionOutcome::new(5, "exponential-limit-d2");
    let n = 1_000_000usize;
    let u = lazy2d_return_probs(n);

    // dual route: the binomial-mixing returns against the 2d convolution
    let occ = convolve(&StepDistribution::lazy2d(), 64, 70).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..=64 {
        worst = worst.max((u[k] - occ.value(k, [0, 0]).unwrap()).abs());
    }
    out.check(worst < 1e-12, format!("return probs match 2d convolution (worst {worst:.2e})"));

    let seq = NormalizationSeq::pure_power(2, 2.0, 1.0);
    let phi0 = 2.0 / PI;
    let cps = [10_000u64, 100_000, 1_000_000];
    let mv = local_time_mean_var_from_returns(&u, &cps);
    let mut devs = Vec::new();
    let mut var_ratios = Vec::new();
    for (i, &cp) in cps.iter().enumerate() {
        let (m, v) = mv[i];
        let ratio = m / seq.big_a(cp) / phi0;
        let vr = v / (m * m);
        out.note(format!(
            "n = {cp}: E[L]/A/phi0 = {ratio:.5}, Var/E^2 = {vr:.5}"
        ));
        devs.push((ratio - 1.0).abs());
        var_ratios.push(vr);
    }
    out.check(
        devs[2] < 0.10,
        format!("within 10% of phi0 = 2/π at n = 10^6 (deviation {:.4})", devs[2]),
    );
    out.check(
        devs.windows(2).all(|w| w[1] < w[0]),
        format!("monotone approach toward phi0: deviations {devs:.4?}"),
    );
    out.check(
        var_ratios.windows(2).all(|w| w[1] > w[0]) && var_ratios[2] < 1.0,
        format!("Var/E^2 trends toward 1 (exponential signature): {var_ratios:.4?}"),
    );
    out
}

/// 6. General-α Mittag-Leffler: stable step α = 1.5, Monte Carlo
/// E[(L/𝔄)²]/E[L/𝔄]² against E[𝒴²] at index 1/3.
pub fn c06_mittag_leffler_alpha15() -> CriterionOutcome {
    let mut out = CriterionOutcome::new(6, "mittag-leffler-alpha15");
    let (step, fit) = stable_step_builder(1.5, 10_000).unwrap();
    out.check(
        (fit.fitted_alpha - 1.5).abs() < 0.05,
        format!("fitted tail exponent {:.4} (nominal 1.5 ± 0.05)", fit.fitted_alpha),
    );
    let lt = ObservableSpec::local_time(1);
    let n = 100_000u64;
    let trajectories = 100_000u64;
    let ens = walk_ensemble(&step, &lt, None, n, &[n], trajectories, 0x6a15);
    let l: &[f64] = &ens.acc0[0];
    let m1 = mean(l);
    let m2 = mean_sq(l);
    let ratio = m2 / (m1 * m1);
    // prediction from the fitted exponent per the truncation design note
    let theta = (fit.fitted_alpha - 1.0) / fit.fitted_alpha;
    let want = crate::limit_laws::ml_index_moment(theta, 2);
    out.note(format!(
        "E[L] = {m1:.3}, index {theta:.4}, predicted E[Y^2] = {want:.5} \
         (nominal-index value {:.5})",
        ml_moment(1.5, 1, 2)
    ));
    out.check(
        (ratio - want).abs() / want < 0.10,
        format!("E[L^2]/E[L]^2 = {ratio:.5} vs {want:.5} (within 10%)"),
    );
    out
}

/// 7. Billiard invariants: reflection accuracy, conjugation, reversibility
/// within the documented budget, μ̄-invariance, free-flight tail exponent.
pub fn c07_billiard_invariants() -> CriterionOutcome {
    let mut out = CriterionOutcome::new(7, "billiard-invariants");
    let table = BilliardTable::canonical(2);

    // speed preservation of the reflection law
    let mut rng = stream(0x07, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let va = rng.random::<f64>() * std::f64::consts::TAU;
        let na = rng.random::<f64>() * std::f64::consts::TAU;
        let v = [va.cos(), va.sin()];
        let nrm = [na.cos(), na.sin()];
        if v[0] * nrm[0] + v[1] * nrm[1] < -1e-6 {
            let w = reflect(v, nrm).unwrap();
            worst = worst.max(((w[0] * w[0] + w[1] * w[1]).sqrt() - 1.0).abs());
        }
    }
    out.check(worst < 1e-12, format!("reflection speed preservation (worst {worst:.2e})"));

    // conjugation identity along a long orbit (asserted exactly inside
    // run_map; a panic would fail the criterion)
    let mut rng = stream(0x07, 1);
    let st = sample_initial(&table, &mut rng);
    let rec = run_map(&st, 10_000, &table).unwrap();
    let last = rec.states.last().unwrap();
    let s = rec.birkhoff.last().unwrap();
    out.check(
        last.cell == [st.cell[0] + s[0], st.cell[1] + s[1]] && !rec.truncated,
        "conjugation identity cell_n = cell_0 + S_n exact over 10^4 collisions".into(),
    );

    // reversibility: full retrace within 1e-6·k up to the double-precision
    // horizon, per-step involution residual along 100 collisions
    let mut worst_retrace: f64 = 0.0;
    let mut rng = stream(0x07, 2);
    for _ in 0..20 {
        let st = sample_initial(&table, &mut rng);
        for k in [1u64, 4, 7, 10] {
            let fwd = run_map(&st, k, &table).unwrap();
            if fwd.truncated {
                continue;
            }
            let last = fwd.states.last().unwrap();
            let rev = crate::billiard::ExtendedState {
                base: last.base.time_reverse(),
                cell: last.cell,
            };
            let back = run_map(&rev, k, &table).unwrap();
            let end = back.states.last().unwrap();
            let want = st.base.time_reverse();
            let pg = end.base.position(&table);
            let pw = want.position(&table);
            let dx = pg[0] - pw[0] + (end.cell[0] - st.cell[0]) as f64;
            let dy = pg[1] - pw[1] + (end.cell[1] - st.cell[1]) as f64;
            let err = (dx * dx + dy * dy).sqrt() / k as f64;
            worst_retrace = worst_retrace.max(err);
        }
    }
    out.check(
        worst_retrace < 1e-6,
        format!(
            "full retrace within 1e-6·k for k ≤ 10 (worst {worst_retrace:.2e}/k); \
             budget: roundoff grows ≈ e^3.4 per collision pair beyond"
        ),
    );
    let mut rng = stream(0x07, 3);
    let st = sample_initial(&table, &mut rng);
    let fwd = run_map(&st, 100, &table).unwrap();
    let mut prev = st;
    let mut worst_step: f64 = 0.0;
    for s in &fwd.states {
        let rev = crate::billiard::ExtendedState { base: s.base.time_reverse(), cell: s.cell };
        let (got, _, _) = crate::billiard::step(&rev, &table).unwrap();
        let want = prev.base.time_reverse();
        let pg = got.base.position(&table);
        let pw = want.position(&table);
        let dcell = [got.cell[0] - rev.cell[0], got.cell[1] - rev.cell[1]];
        let wcell = [prev.cell[0] - s.cell[0], prev.cell[1] - s.cell[1]];
        let dx = pg[0] - pw[0] + (dcell[0] - wcell[0]) as f64;
        let dy = pg[1] - pw[1] + (dcell[1] - wcell[1]) as f64;
        worst_step = worst_step.max((dx * dx + dy * dy).sqrt());
        prev = *s;
    }
    out.check(
        worst_step < 1e-10,
        format!("per-step reversal involution over 100 collisions (worst {worst_step:.2e})"),
    );

    // μ̄-invariance at 10^6 samples
    let m = 1_000_000u64;
    let mut b_angle = Vec::with_capacity(m as usize);
    let mut a_angle = Vec::with_capacity(m as usize);
    let mut b_sin = Vec::with_capacity(m as usize);
    let mut a_sin = Vec::with_capacity(m as usize);
    for i in 0..m {
        let mut rng = stream(0x07aa, i);
        let st = sample_initial(&table, &mut rng);
        b_angle.push(st.base.boundary_angle);
        b_sin.push(st.base.outgoing_angle.sin());
        if let Ok((next, _, _)) = crate::billiard::step(&st, &table) {
            a_angle.push(next.base.boundary_angle);
            a_sin.push(next.base.outgoing_angle.sin());
        }
    }
    let d1 = ks_statistic(&mut b_angle, &mut a_angle);
    let d2 = ks_statistic(&mut b_sin, &mut a_sin);
    out.check(
        d1 < 0.01 && d2 < 0.01,
        format!("μ̄ invariance at 10^6 samples: KS(angle) {d1:.4}, KS(sin φ) {d2:.4} < 0.01"),
    );

    // free-flight tail ~ c/L² over one decade at 10^7 flights
    let thresholds = [5.0f64, 8.9, 15.8, 28.1, 50.0];
    let counts = flight_tail_counts(&table, 10_000_000, &thresholds, 0x07f1);
    let fracs: Vec<f64> = counts.iter().map(|&c| c as f64 / 1e7).collect();
    let slope = loglog_slope(&thresholds, &fracs);
    let frac_list: Vec<String> = fracs.iter().map(|f| format!("{f:.3e}")).collect();
    out.check(
        (-2.3..=-1.7).contains(&slope),
        format!("free-flight tail slope {slope:.3} in −2 ± 0.3 (fracs {frac_list:?})"),
    );
    out
}

/// 8. Billiard distributional trend, d=1 tube: KS distance to the
/// Φ̂(0)·𝒴(1/2) sampler strictly decreases across the checkpoint decades.
pub fn c08_billiard_local_time_trend() -> CriterionOutcome {
    let mut out = CriterionOutcome::new(8, "billiard-local-time-trend");
    let table = BilliardTable::canonical(1);
    let lt = ObservableSpec::local_time(1);
    let seq = NormalizationSeq::billiard_log(1);
    let n = 100_000u64;
    let cps = [1_000u64, 10_000, 100_000];
    let trajectories = 100_000u64;
    let ens = billiard_ensemble(&table, &lt, None, n, &cps, trajectories, 0x08b1);
    let truncated_frac = ens.truncated as f64 / trajectories as f64;
    out.check(
        truncated_frac < 0.01,
        format!("truncated fraction {truncated_frac:.2e} below 1%"),
    );

    let (phi0, phi0_se) = estimate_phi0_d1(&ens.final_pos, seq.a(n));
    out.note(format!(
        "phi0 estimated from S_n/a_n covariance: {phi0:.5} ± {phi0_se:.5} (jackknife)"
    ));
    // mean-one Mittag-Leffler (index 1/2) draws scaled by the estimate
    let sampler = limit_local_time_sample(200_000, phi0, 0.5, 0x08b2);
    let mut distances = Vec::new();
    for (i, &cp) in cps.iter().enumerate() {
        let big_a = seq.big_a(cp);
        let vals: Vec<f64> = ens.acc0[i].iter().map(|v| v / big_a).collect();
        let (d, _) = ks_two_sample(vals, sampler.clone());
        out.note(format!("KS(L_n/A_n, phi0·Y) = {d:.4} at n = {cp}"));
        distances.push(d);
    }
    out.check(
        distances.windows(2).all(|w| w[1] < w[0]),
        format!("KS distance strictly decreases across decades: {distances:.4?}"),
    );
    out
}

/// 9. Joint functional structure: d=1 dependence checks and marginal
/// against the fine-scale oracle; d=2 checkpoint constancy.
pub fn c09_joint_fdd_structure() -> CriterionOutcome {
    let mut out = CriterionOutcome::new(9, "joint-fdd-structure");
    let step = StepDistribution::lazy1d();
    let g = ObservableSpec::local_time(1);
    let f = ObservableSpec::cell_difference(1, cell1(0), cell1(1)).unwrap();
    let seq = NormalizationSeq::lazy_walk(1);
    let phi0 = 1.0 / (2.0 * PI).sqrt();
    let limit = LimitSpec::new(2.0, 1, phi0, 6.0).unwrap();
    let rep = fdd_joint_test(
        &step,
        &g,
        &f,
        &seq,
        &limit,
        &[0.25, 0.5, 1.0],
        100_000,
        30_000,
        1_000_000,
        0x09d1,
    )
    .unwrap();
    out.check(
        rep.corr_l_absb > 0.0 && rep.corr_ci99.0 > 0.0,
        format!(
            "corr(L, |B-comp|) = {:.4}, 99% CI ({:.4}, {:.4}) excludes 0",
            rep.corr_l_absb, rep.corr_ci99.0, rep.corr_ci99.1
        ),
    );
    let mix = rep.cond_var_ratio / rep.cond_mean_ratio - 1.0;
    out.check(
        mix.abs() < 0.15,
        format!(
            "variance-mixture conditional check: var ratio {:.4} vs mean ratio {:.4} \
             (rel diff {:.4}, within 15%)",
            rep.cond_var_ratio, rep.cond_mean_ratio, mix
        ),
    );
    out.check(
        rep.ks_first < 0.02,
        format!("L_1 marginal vs fine-scale oracle: KS {:.4} < 0.02", rep.ks_first),
    );
    out.note(format!("B-component marginal KS {:.4}", rep.ks_second));

    // d = 2: first component is checkpoint-constant in distribution
    let step2 = StepDistribution::lazy2d();
    let lt2 = ObservableSpec::local_time(2);
    let n2 = 200_000u64;
    let ens = walk_ensemble(&step2, &lt2, None, n2, &[100_000, 200_000], 5_000, 0x09d2);
    let seq2 = NormalizationSeq::pure_power(2, 2.0, 1.0);
    let big_a = seq2.big_a(n2);
    let a: Vec<f64> = ens.acc0[0].iter().map(|v| v / big_a).collect();
    let b: Vec<f64> = ens.acc0[1].iter().map(|v| v / big_a).collect();
    let (d, p) = ks_two_sample(a, b);
    out.check(
        p > 0.001,
        format!("d=2 constancy: KS(t=0.5, t=1) = {d:.4}, p = {p:.4} > 0.001"),
    );
    out
}

/// 10. Flow consistency: map/flow counts equal at collision times, the
/// collision rate stabilizes, the null-sum flow statistic is centered.
pub fn c10_flow_consistency() -> CriterionOutcome {
    let mut out = CriterionOutcome::new(10, "flow-consistency");
    let table = BilliardTable::canonical(2);

    // exact map/flow agreement at collision times on one trajectory
    let mut rng = stream(0x0a, 0);
    let st = sample_initial(&table, &mut rng);
    let map_rec = run_map(&st, 500, &table).unwrap();
    let times: Vec<f64> = map_rec
        .flight_times
        .iter()
        .scan(0.0, |acc, t| {
            *acc += t;
            Some(*acc)
        })
        .collect();
    let watched = vec![[0i64, 0], [1, 0], [-1, 0]];
    let cps: Vec<f64> = times.iter().step_by(53).copied().collect();
    let flow_rec = run_flow(&st, times[499] + 1.0, &table, &watched, &cps).unwrap();
    let mut exact = true;
    for (i, &t) in cps.iter().enumerate() {
        let k = times.iter().filter(|&&x| x <= t).count();
        exact &= flow_rec.collisions[i] == k as u64;
        let part: u64 = flow_rec.counts[i].iter().sum::<u64>() + flow_rec.unwatched[i];
        exact &= part == k as u64;
        for (w, cell) in watched.iter().enumerate() {
            let direct =
                map_rec.states[..k].iter().filter(|s| s.cell == *cell).count() as u64;
            exact &= flow_rec.counts[i][w] == direct;
        }
    }
    out.check(exact, "map/flow collision counts equal at collision times (exact)".into());

    // ensemble: rate stabilization and the centered null-sum statistic
    let spec = ObservableSpec::cell_difference(2, [1, 0], [-1, 0]).unwrap();
    let seq = NormalizationSeq::billiard_log(2);
    let t_max = 20_000.0;
    let cps: Vec<f64> = (0..=10)
        .map(|i| 2_000.0 * (10.0f64).powf(i as f64 / 10.0))
        .collect();
    let rep = flow_experiment(&table, &spec, &seq, t_max, &cps, 2_000, 0x0a02).unwrap();
    out.check(
        rep.rate_stability < 0.02,
        format!(
            "collision rate stable within 2% over the final decade \
             (max dev {:.4}; rate {:.4}, 1/E[τ] = {:.4})",
            rep.rate_stability,
            rep.collision_rate.last().unwrap(),
            1.0 / rep.mean_free_path_analytic
        ),
    );
    out.check(
        rep.null_sum_mean.abs() <= 3.0 * rep.null_sum_stderr,
        format!(
            "null-sum flow statistic mean {:.4} within 3·stderr ({:.4})",
            rep.null_sum_mean, rep.null_sum_stderr
        ),
    );
    out.note(format!(
        "time-change ratio A(n_T)/(A(T)/E[τ]^((2-d)/2)) = {:.4}",
        rep.time_change_ratio
    ));
    out
}

/// The registry: ids, names, runners.
pub fn criteria() -> Vec<(u32, &'static str, fn() -> CriterionOutcome)> {
    vec![
        (1, "oracle-identities", c01_oracle_identities),
        (2, "local-time-mean-d1", c02_local_time_mean_d1),
        (3, "null-sum-second-moment-d1", c03_null_sum_second_moment_d1),
        (4, "fourth-moment-ratio-d1", c04_fourth_moment_ratio_d1),
        (5, "exponential-limit-d2", c05_exponential_limit_d2),
        (6, "mittag-leffler-alpha15", c06_mittag_leffler_alpha15),
        (7, "billiard-invariants", c07_billiard_invariants),
        (8, "billiard-local-time-trend", c08_billiard_local_time_trend),
        (9, "joint-fdd-structure", c09_joint_fdd_structure),
        (10, "flow-consistency", c10_flow_consistency),
    ]
}
