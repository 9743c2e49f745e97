//! The limit objects: Mittag-Leffler moments and samplers, the
//! Gaussian-mixture law √(σ²Φ(0)𝒴)·𝒩, the asymptotic variance σ_β², and
//! joint (ℒ_t, B_{σ²ℒ_t}) finite-dimensional samples.
//!
//! Normalization convention: 𝒴 always denotes the mean-one Mittag-Leffler
//! variable with E[𝒴^N] = N! Γ(1+θ)^N / Γ(1+Nθ), θ = (α−d)/α. For θ = 1/2
//! this is √(π/2)·|𝒩|, for θ = 0 a standard exponential. All samplers here
//! reproduce exactly the moments of [`ml_moment`], which is what the
//! occupation-time normalizations E[L_n] ~ Φ(0)𝔄_n force.

use crate::error::{precondition, Error, Result};
use crate::gamma::gamma;
use crate::observables::{NormalizationSeq, ObservableSpec};
use crate::rw_oracle::{q_double_diff, stable_step_builder, OccupationTable};
use crate::walk_sim::CompiledWalk;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use std::f64::consts::PI;

/// Parameters of a limit law: stable index α, lattice dimension d, the
/// density value Φ(0) of the α-stable limit of S_n/𝔞_n, and σ² of the
/// null-sum observable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitSpec {
    pub alpha: f64,
    pub d: u8,
    pub phi0: f64,
    pub sigma_sq: f64,
}

impl LimitSpec {
    pub fn new(alpha: f64, d: u8, phi0: f64, sigma_sq: f64) -> Result<Self> {
        precondition(d == 1 || d == 2, "d must be 1 or 2")?;
        precondition(
            alpha >= d as f64 && alpha <= 2.0,
            "alpha must lie in [d, 2]",
        )?;
        precondition(phi0 > 0.0, "phi0 must be positive")?;
        precondition(sigma_sq >= 0.0, "sigma_sq must be nonnegative")?;
        Ok(Self { alpha, d, phi0, sigma_sq })
    }

    /// Gaussian case: Φ(0) = (2π)^{−d/2} (det Σ)^{−1/2} for the covariance
    /// of the limit of S_n/𝔞_n.
    pub fn gaussian_from_cov(d: u8, cov: [[f64; 2]; 2], sigma_sq: f64) -> Result<Self> {
        let det = match d {
            1 => cov[0][0],
            _ => cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0],
        };
        precondition(det > 0.0, "covariance must be positive definite")?;
        let phi0 = (2.0 * PI).powf(-(d as f64) / 2.0) / det.sqrt();
        Self::new(2.0, d, phi0, sigma_sq)
    }

    /// Mittag-Leffler index (α − d)/α ∈ [0, 1].
    pub fn index(&self) -> f64 {
        (self.alpha - self.d as f64) / self.alpha
    }
}

/// E[𝒴^N] = N! Γ(1+θ)^N / Γ(1+Nθ) with θ = (α−d)/α.
pub fn ml_moment(alpha: f64, d: u8, n: u32) -> f64 {
    assert!(
        alpha >= d as f64 && alpha <= 2.0 && (d == 1 || d == 2),
        "ml_moment requires d in {{1,2}} and alpha in [d,2]"
    );
    ml_index_moment((alpha - d as f64) / alpha, n)
}

/// E[𝒴^N] for a Mittag-Leffler law of index θ.
pub fn ml_index_moment(theta: f64, n: u32) -> f64 {
    assert!((0.0..=1.0).contains(&theta));
    let mut fact = 1.0;
    for j in 1..=n {
        fact *= j as f64;
    }
    fact * gamma(1.0 + theta).powi(n as i32) / gamma(1.0 + n as f64 * theta)
}

/// One-sided θ-stable variable with Laplace transform exp(−λ^θ)
/// (Kanter's representation), 0 < θ < 1.
pub fn sample_positive_stable<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> f64 {
    debug_assert!(theta > 0.0 && theta < 1.0);
    let u: f64 = rng.random::<f64>() * PI;
    let w: f64 = Exp1.sample(rng);
    let a = (theta * u).sin().powf(theta / (1.0 - theta)) * ((1.0 - theta) * u).sin()
        / u.sin().powf(1.0 / (1.0 - theta));
    (a / w).powf((1.0 - theta) / theta)
}

/// Mean-one Mittag-Leffler draw of index θ: exponential at θ = 0,
/// √(π/2)|𝒩| at θ = 1/2, Γ(1+θ)·S^{−θ} via the stable subordinator
/// otherwise.
pub fn sample_ml<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> f64 {
    debug_assert!((0.0..1.0).contains(&theta));
    if theta < 1e-12 {
        let e: f64 = Exp1.sample(rng);
        return e;
    }
    if (theta - 0.5).abs() < 1e-12 {
        let z: f64 = StandardNormal.sample(rng);
        return (PI / 2.0).sqrt() * z.abs();
    }
    let s = sample_positive_stable(theta, rng);
    gamma(1.0 + theta) * s.powf(-theta)
}

/// √(σ² Φ(0) 𝒴) · 𝒩 with 𝒩 independent of 𝒴.
pub fn sample_mixture<R: Rng + ?Sized>(spec: &LimitSpec, rng: &mut R) -> f64 {
    if spec.sigma_sq == 0.0 {
        return 0.0;
    }
    let y = sample_ml(spec.index(), rng);
    let n: f64 = StandardNormal.sample(rng);
    (spec.sigma_sq * spec.phi0 * y).sqrt() * n
}

/// Moment summary of a half-normal sampler run, for consistency checks
/// against the closed forms E|𝒵| = √(2/π) and E𝒵² = 1.
#[derive(Debug, Clone, Copy)]
pub struct HalfNormalReport {
    pub samples: u64,
    pub mean_abs: f64,
    pub second: f64,
    pub se_mean: f64,
    pub se_second: f64,
}

pub fn half_normal_consistency<R: Rng + ?Sized>(samples: u64, rng: &mut R) -> HalfNormalReport {
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s4 = 0.0;
    for _ in 0..samples {
        let z: f64 = StandardNormal.sample(rng);
        let a = z.abs();
        s1 += a;
        s2 += a * a;
        s4 += a * a * a * a;
    }
    let m = samples as f64;
    let mean_abs = s1 / m;
    let second = s2 / m;
    let var1 = (second - mean_abs * mean_abs).max(0.0);
    let var2 = (s4 / m - second * second).max(0.0);
    HalfNormalReport {
        samples,
        mean_abs,
        second,
        se_mean: (var1 / m).sqrt(),
        se_second: (var2 / m).sqrt(),
    }
}

/// σ_β² truncated at k_max, through both of its defining sums.
#[derive(Debug, Clone, Copy)]
pub struct SigmaEstimate {
    /// Σ_{|k|≤k_max} Σ_{a,b} β_a β_b ν(S_|k| = b−a).
    pub via_correlation: f64,
    /// Same truncation of the Q''-mass rewriting.
    pub via_qdiff: f64,
    /// Extrapolated bound on the discarded |k| > k_max mass.
    pub tail_bound: f64,
    pub k_max: usize,
}

impl SigmaEstimate {
    /// Point value used by predictions: the correlation form plus the
    /// extrapolated tail (the terms beyond k_max are positive for the
    /// symmetric unimodal steps used here).
    pub fn value(&self) -> f64 {
        self.via_correlation + self.tail_bound
    }
}

pub fn sigma_beta_sq(
    occ: &OccupationTable,
    spec: &ObservableSpec,
    k_max: usize,
) -> Result<SigmaEstimate> {
    if !spec.null_sum() {
        return Err(Error::Precondition(format!(
            "sigma_beta_sq requires a null-sum observable, got Σβ = {:.3e}",
            spec.sum()
        )));
    }
    precondition(occ.depth >= k_max, "occupation table shallower than k_max")?;
    precondition(
        2 * spec.support_radius() <= occ.half_width,
        "support arithmetic exceeds table range",
    )?;
    let support = spec.support();
    let term = |k: usize| -> Result<(f64, f64)> {
        let mut t21 = 0.0;
        let mut t22 = 0.0;
        for &(a, ba) in support {
            for &(b, bb) in support {
                let bma = [b[0] - a[0], b[1] - a[1]];
                t21 += ba * bb * occ.value(k, bma)?;
                t22 += ba * bb * q_double_diff(occ, k, a, b)?;
            }
        }
        Ok((t21, t22))
    };
    let (mut s21, mut s22) = term(0)?;
    let mut terms = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let (t21, t22) = term(k)?;
        s21 += 2.0 * t21;
        s22 += 2.0 * t22;
        terms.push(t21);
    }
    // tail: power-law extrapolation over the last decade of |terms|
    let lo = (k_max / 10).max(1);
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut cnt = 0.0;
    for k in lo..=k_max {
        let t = terms[k - 1].abs();
        if t > 0.0 {
            let x = (k as f64).ln();
            let y = t.ln();
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
            cnt += 1.0;
        }
    }
    let tail_bound = if cnt >= 2.0 {
        let slope = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
        if slope < -1.0 {
            2.0 * terms[k_max - 1].abs() * k_max as f64 / (-slope - 1.0)
        } else {
            f64::INFINITY
        }
    } else {
        0.0
    };
    Ok(SigmaEstimate { via_correlation: s21, via_qdiff: s22, tail_bound, k_max })
}

/// Prepared sampler for joint finite-dimensional draws
/// (ℒ_{t_j}, B_{σ²ℒ_{t_j}}).
///
/// d = 1: ℒ comes from the normalized local time of a fine-scale walk of
/// `fine_scale` steps (the lazy walk for α = 2, a fitted power-tail walk
/// for α < 2), B increments are independent centered Gaussians on the
/// clock σ²Δℒ. d = 2: ℒ_t ≡ ℒ_1 ~ Exp(mean Φ(0)) and B is evaluated once.
pub struct JointFddSampler {
    spec: LimitSpec,
    times: Vec<f64>,
    fine_scale: u64,
    fine: Option<(CompiledWalk, Vec<u64>, f64)>, // walk, step checkpoints, 𝔄_m
}

impl JointFddSampler {
    pub fn new(times: &[f64], spec: LimitSpec, fine_scale: u64) -> Result<Self> {
        precondition(!times.is_empty(), "need at least one time")?;
        precondition(
            times.windows(2).all(|w| w[0] < w[1]) && times[0] > 0.0,
            "times must be strictly increasing and positive",
        )?;
        precondition(
            *times.last().unwrap() <= 1.0,
            "times are fractions of the horizon, at most 1",
        )?;
        if (fine_scale as f64) < 100.0 / times[0] {
            return Err(Error::Precondition(format!(
                "fine_scale {} too small for t_1 = {}: need at least {}",
                fine_scale,
                times[0],
                (100.0 / times[0]).ceil()
            )));
        }
        let fine = if spec.d == 1 {
            let (walk, seq) = if (spec.alpha - 2.0).abs() < 1e-12 {
                (
                    CompiledWalk::from_step(&crate::rw_oracle::StepDistribution::lazy1d()),
                    NormalizationSeq::lazy_walk(1),
                )
            } else {
                let (step, fit) = stable_step_builder(spec.alpha, 10_000)?;
                (CompiledWalk::from_step(&step), fit.seq)
            };
            let cps: Vec<u64> = times
                .iter()
                .map(|t| ((t * fine_scale as f64).floor() as u64).max(1))
                .collect();
            let a_m = seq.big_a(fine_scale);
            Some((walk, cps, a_m))
        } else {
            None
        };
        Ok(Self { spec, times: times.to_vec(), fine_scale, fine })
    }

    pub fn fine_scale(&self) -> u64 {
        self.fine_scale
    }

    /// One joint draw; returns (ℒ_{t_j})_j and (B at clock σ²ℒ_{t_j})_j.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let m = self.times.len();
        let mut ell = vec![0.0; m];
        match &self.fine {
            Some((walk, cps, a_m)) => {
                let counts = walk.local_time_counts(self.fine_scale, cps, rng);
                for (j, &c) in counts.iter().enumerate() {
                    ell[j] = c as f64 / a_m;
                }
            }
            None => {
                let e: f64 = Exp1.sample(rng);
                let l1 = self.spec.phi0 * e;
                for v in ell.iter_mut() {
                    *v = l1;
                }
            }
        }
        let mut b = vec![0.0; m];
        let mut prev_l = 0.0;
        let mut acc = 0.0;
        for j in 0..m {
            let dl = (ell[j] - prev_l).max(0.0);
            if dl > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                acc += (self.spec.sigma_sq * dl).sqrt() * z;
            }
            b[j] = acc;
            prev_l = ell[j];
        }
        (ell, b)
    }
}

/// Convenience one-shot wrapper around [`JointFddSampler`].
pub fn sample_joint_fdd<R: Rng + ?Sized>(
    times: &[f64],
    spec: LimitSpec,
    fine_scale: u64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok(JointFddSampler::new(times, spec, fine_scale)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observables::cell1;
    use crate::rng::stream;
    use crate::rw_oracle::{convolve, StepDistribution};
    use approx::assert_relative_eq;

    #[test]
    fn ml_moment_examples() {
        assert_relative_eq!(ml_moment(1.7, 1, 0), 1.0, max_relative = 1e-13);
        assert_relative_eq!(ml_moment(2.0, 2, 0), 1.0, max_relative = 1e-13);
        assert_relative_eq!(ml_moment(2.0, 1, 2), PI / 2.0, max_relative = 1e-13);
        assert_relative_eq!(ml_moment(2.0, 1, 2), 1.570796, max_relative = 1e-6);
        // index 0 (α = d): E[𝒴^N] = N!
        for d in [1u8, 2] {
            let mut fact = 1.0;
            for n in 1..=6u32 {
                fact *= n as f64;
                assert_relative_eq!(ml_moment(d as f64, d, n), fact, max_relative = 1e-12);
            }
        }
        // mean is 1 for every index
        for alpha in [1.2, 1.5, 1.8, 2.0] {
            assert_relative_eq!(ml_moment(alpha, 1, 1), 1.0, max_relative = 1e-13);
        }
    }

    #[test]
    fn ml_half_index_matches_half_normal_closed_forms() {
        // E[𝒴^N] with θ = 1/2 equals (π/2)^{N/2} E|𝒵|^N ; E|𝒵|^N = 2^{N/2}Γ((N+1)/2)/√π
        for n in 0..=8u32 {
            let want = (PI / 2.0).powf(n as f64 / 2.0)
                * 2f64.powf(n as f64 / 2.0)
                * gamma((n as f64 + 1.0) / 2.0)
                / PI.sqrt();
            let got = ml_moment(2.0, 1, n);
            assert!(
                ((got - want) / want).abs() < 1e-10,
                "N={n}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn half_normal_sampler_consistent() {
        let mut rng = stream(40, 0);
        let rep = half_normal_consistency(1_000_000, &mut rng);
        let want_mean = (2.0 / PI).sqrt();
        assert!((rep.mean_abs - want_mean).abs() < 4.0 * rep.se_mean);
        assert!((rep.second - 1.0).abs() < 4.0 * rep.se_second);
        // moment-ratio identity with ml_moment(2,1,2) = π/2
        let ratio = rep.second / (rep.mean_abs * rep.mean_abs);
        assert!((ratio - ml_moment(2.0, 1, 2)).abs() < 0.01);
    }

    #[test]
    fn kanter_sampler_reproduces_ml_moments() {
        let m = 400_000u64;
        for &theta in &[0.25f64, 1.0 / 3.0, 0.5, 0.7] {
            let mut rng = stream(41, (theta * 1000.0) as u64);
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for _ in 0..m {
                let y = if (theta - 0.5).abs() < 1e-12 {
                    // exercise the generic path even at θ = 1/2
                    let s = sample_positive_stable(theta, &mut rng);
                    gamma(1.0 + theta) * s.powf(-theta)
                } else {
                    sample_ml(theta, &mut rng)
                };
                s1 += y;
                s2 += y * y;
            }
            let mean = s1 / m as f64;
            let second = s2 / m as f64;
            let want2 = ml_index_moment(theta, 2);
            // SEs: Var(Y) and Var(Y²) from ml moments
            let se1 = ((want2 - 1.0) / m as f64).sqrt();
            let se2 = ((ml_index_moment(theta, 4) - want2 * want2) / m as f64).sqrt();
            assert!(
                (mean - 1.0).abs() < 5.0 * se1,
                "theta={theta}: mean {mean}, se {se1}"
            );
            assert!(
                (second - want2).abs() < 5.0 * se2,
                "theta={theta}: m2 {second} vs {want2}"
            );
        }
    }

    #[test]
    fn mixture_examples() {
        let mut rng = stream(42, 0);
        let spec = LimitSpec::new(2.0, 1, 0.39894, 0.0).unwrap();
        for _ in 0..10 {
            assert_eq!(sample_mixture(&spec, &mut rng), 0.0);
        }
        // d=1, α=2: E[X⁴]/E[X²]² → 3π/2
        let spec = LimitSpec::new(2.0, 1, 0.39894, 6.0).unwrap();
        let m = 1_000_000;
        let (mut s2, mut s4) = (0.0, 0.0);
        for _ in 0..m {
            let x = sample_mixture(&spec, &mut rng);
            s2 += x * x;
            s4 += x * x * x * x;
        }
        let ratio = (s4 / m as f64) / (s2 / m as f64).powi(2);
        assert!(
            (ratio - 1.5 * PI).abs() < 0.12,
            "kurtosis ratio {ratio} vs {}",
            1.5 * PI
        );
        // d=2 (index 0): ratio → 3·2 = 6
        let spec = LimitSpec::new(2.0, 2, 2.0 / PI, 1.0).unwrap();
        let (mut s2, mut s4) = (0.0, 0.0);
        for _ in 0..m {
            let x = sample_mixture(&spec, &mut rng);
            s2 += x * x;
            s4 += x * x * x * x;
        }
        let ratio = (s4 / m as f64) / (s2 / m as f64).powi(2);
        assert!((ratio - 6.0).abs() < 0.25, "ratio {ratio} vs 6");
    }

    #[test]
    fn sigma_examples() {
        let lazy = StepDistribution::lazy1d();
        let occ = convolve(&lazy, 10_000, 700).unwrap();
        let not_null = ObservableSpec::local_time(1);
        assert!(sigma_beta_sq(&occ, &not_null, 100).is_err());

        let zero = ObservableSpec::new(1, vec![]).unwrap();
        let est = sigma_beta_sq(&occ, &zero, 100).unwrap();
        assert_eq!(est.via_correlation, 0.0);
        assert_eq!(est.via_qdiff, 0.0);

        let diff = ObservableSpec::cell_difference(1, cell1(0), cell1(1)).unwrap();
        let est = sigma_beta_sq(&occ, &diff, 10_000).unwrap();
        assert!(
            (est.via_correlation - est.via_qdiff).abs() < 1e-6,
            "{} vs {}",
            est.via_correlation,
            est.via_qdiff
        );
        // generating-function closed form for this walk and observable: σ² = 6
        assert!(
            (est.value() - 6.0).abs() < 0.01,
            "sigma^2 {} (partial {}, tail {})",
            est.value(),
            est.via_correlation,
            est.tail_bound
        );
    }

    #[test]
    fn fdd_sampler_shapes() {
        let spec = LimitSpec::new(2.0, 1, 1.0 / (2.0 * PI).sqrt(), 6.0).unwrap();
        assert!(JointFddSampler::new(&[0.5, 1.0], spec, 50).is_err()); // m too small
        assert!(JointFddSampler::new(&[1.0, 0.5], spec, 10_000).is_err());
        let s = JointFddSampler::new(&[0.25, 0.5, 1.0], spec, 20_000).unwrap();
        let mut rng = stream(43, 0);
        for _ in 0..50 {
            let (ell, _) = s.sample(&mut rng);
            assert!(ell.windows(2).all(|w| w[1] >= w[0]), "local time monotone");
        }
        // d = 2: all coordinates equal per sample
        let spec2 = LimitSpec::new(2.0, 2, 2.0 / PI, 1.0).unwrap();
        let s2 = JointFddSampler::new(&[0.5, 1.0], spec2, 20_000).unwrap();
        for _ in 0..50 {
            let (ell, b) = s2.sample(&mut rng);
            assert_eq!(ell[0], ell[1]);
            assert_eq!(b[0], b[1]);
            assert!(ell[0] > 0.0);
        }
    }
}
