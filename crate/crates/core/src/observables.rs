//! Cell-indexed observables and the normalization sequences.
//!
//! An observable is a finitely supported β: Z^d → ℝ; the function on phase
//! space is f ≡ β_ℓ on the ℓ-cell. Birkhoff sums of f along a trajectory
//! reduce to Σ_{k<n} β_{S_k} over the cell path, which is what
//! [`accumulate`] computes. Integrable statistics are normalized by 𝔄_n,
//! null-sum ones by √𝔄_n.

use crate::error::{precondition, Error, Result};
use serde::{Deserialize, Serialize};

/// Lattice cell label. d = 1 stores the index in the first component with
/// the second fixed to zero.
pub type Cell = [i64; 2];

pub fn cell1(x: i64) -> Cell {
    [x, 0]
}

pub fn cell_norm(c: Cell) -> f64 {
    ((c[0] * c[0] + c[1] * c[1]) as f64).sqrt()
}

/// Finitely supported cell observable β with its summability metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSpec {
    dim: u8,
    entries: Vec<(Cell, f64)>,
}

pub const NULL_SUM_TOL: f64 = 1e-12;

impl ObservableSpec {
    pub fn new(dim: u8, entries: Vec<(Cell, f64)>) -> Result<Self> {
        precondition(dim == 1 || dim == 2, "dim must be 1 or 2")?;
        let mut seen = entries.iter().map(|e| e.0).collect::<Vec<_>>();
        seen.sort_unstable();
        seen.dedup();
        precondition(seen.len() == entries.len(), "duplicate cell in observable")?;
        if dim == 1 {
            precondition(
                entries.iter().all(|e| e.0[1] == 0),
                "d=1 observable cells must have zero second component",
            )?;
        }
        Ok(Self { dim, entries })
    }

    /// Indicator of the origin cell (local time).
    pub fn local_time(dim: u8) -> Self {
        Self { dim, entries: vec![([0, 0], 1.0)] }
    }

    /// δ_a − δ_b: the difference between visit counts of two cells.
    pub fn cell_difference(dim: u8, a: Cell, b: Cell) -> Result<Self> {
        Self::new(dim, vec![(a, 1.0), (b, -1.0)])
    }

    pub fn dim(&self) -> u8 {
        self.dim
    }

    pub fn support(&self) -> &[(Cell, f64)] {
        &self.entries
    }

    pub fn beta(&self, cell: Cell) -> f64 {
        self.entries
            .iter()
            .find(|(c, _)| *c == cell)
            .map(|(_, v)| *v)
            .unwrap_or(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v).sum()
    }

    pub fn null_sum(&self) -> bool {
        self.sum().abs() < NULL_SUM_TOL
    }

    /// Σ_ℓ (1+|ℓ|)^η |β_ℓ|. Finite support keeps this finite; it is reported
    /// so runs can state the summability margin they operate under.
    pub fn eta_weight_norm(&self, eta: f64) -> f64 {
        self.entries
            .iter()
            .map(|(c, v)| (1.0 + cell_norm(*c)).powf(eta) * v.abs())
            .sum()
    }

    /// Largest sup-norm coordinate over the support.
    pub fn support_radius(&self) -> i64 {
        self.entries
            .iter()
            .map(|(c, _)| c[0].abs().max(c[1].abs()))
            .max()
            .unwrap_or(0)
    }
}

/// Which 𝔞-sequence a run normalizes by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqKind {
    /// 𝔞_k = max(1, √(k log k)) — the infinite-horizon billiard scale.
    /// Natural logarithm; recorded in every report.
    BilliardLog,
    /// 𝔞_k = c · k^{1/α}.
    PurePower,
}

/// Normalization sequence 𝔞 together with its prefix sums 𝔄_n = Σ_{k=1}^n 𝔞_k^{−d}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSeq {
    pub d: u8,
    pub alpha: f64,
    pub kind: SeqKind,
    pub c: f64,
}

impl NormalizationSeq {
    pub fn billiard_log(d: u8) -> Self {
        Self { d, alpha: 2.0, kind: SeqKind::BilliardLog, c: 1.0 }
    }

    pub fn pure_power(d: u8, alpha: f64, c: f64) -> Self {
        Self { d, alpha, kind: SeqKind::PurePower, c }
    }

    /// The lazy walk scales: 𝔞_k = √(k/2) for d=1, 𝔞_k = √k for d=2
    /// (variance 1/2 resp. covariance I/4 per step).
    pub fn lazy_walk(d: u8) -> Self {
        match d {
            1 => Self::pure_power(1, 2.0, 0.5f64.sqrt()),
            _ => Self::pure_power(2, 2.0, 1.0),
        }
    }

    /// 𝔞_k. Panics if k = 0: the sequence starts at k = 1.
    pub fn a(&self, k: u64) -> f64 {
        assert!(k >= 1, "a_k is defined for k >= 1");
        let kf = k as f64;
        match self.kind {
            SeqKind::BilliardLog => (kf * kf.ln()).sqrt().max(1.0),
            SeqKind::PurePower => self.c * kf.powf(1.0 / self.alpha),
        }
    }

    /// 𝔄_n = Σ_{k=1}^n 𝔞_k^{−d}.
    pub fn big_a(&self, n: u64) -> f64 {
        assert!(n >= 1, "A_n is defined for n >= 1");
        self.prefix(n)[n as usize]
    }

    /// Prefix table with `out[k] = 𝔄_k`, `out[0] = 0`.
    pub fn prefix(&self, n: u64) -> Vec<f64> {
        let mut out = Vec::with_capacity(n as usize + 1);
        out.push(0.0);
        let mut acc = 0.0;
        for k in 1..=n {
            acc += self.a(k).powi(-(self.d as i32));
            out.push(acc);
        }
        out
    }

    /// Closed-form large-n equivalent of 𝔄_n, exposed for diagnostics.
    pub fn asymptote(&self, n: u64) -> f64 {
        let nf = n as f64;
        match self.kind {
            SeqKind::BilliardLog => {
                if self.d == 1 {
                    2.0 * (nf / nf.ln()).sqrt()
                } else {
                    nf.ln().ln()
                }
            }
            SeqKind::PurePower => {
                let p = self.d as f64 / self.alpha;
                if (1.0 - p).abs() < 1e-12 {
                    self.c.powi(-(self.d as i32)) * nf.ln()
                } else {
                    self.c.powi(-(self.d as i32)) * nf.powf(1.0 - p) / (1.0 - p)
                }
            }
        }
    }
}

/// Σ_{k<n'} β_{S_k} at each checkpoint n' for a recorded cell path.
/// The path slice holds S_0, S_1, ... (S_0 included).
pub fn accumulate(path: &[Cell], spec: &ObservableSpec, checkpoints: &[u64]) -> Result<Vec<f64>> {
    precondition(
        checkpoints.windows(2).all(|w| w[0] <= w[1]),
        "checkpoints must be sorted",
    )?;
    precondition(
        checkpoints.last().is_none_or(|&c| c as usize <= path.len()),
        "checkpoint exceeds path length",
    )?;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut acc = 0.0;
    let mut k = 0usize;
    for &cp in checkpoints {
        while (k as u64) < cp {
            acc += spec.beta(path[k]);
            k += 1;
        }
        out.push(acc);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Divide by 𝔄_n (integrable observables).
    Integrable,
    /// Divide by √𝔄_n (null-sum observables only).
    NullSum,
}

/// Normalize raw checkpoint sums per the mode. `ns[i]` is the checkpoint
/// index the i-th raw value was taken at.
pub fn normalized_stat(
    raw: &[f64],
    ns: &[u64],
    seq: &NormalizationSeq,
    mode: NormMode,
    spec: &ObservableSpec,
) -> Result<Vec<f64>> {
    precondition(raw.len() == ns.len(), "raw/checkpoint length mismatch")?;
    if mode == NormMode::NullSum && !spec.null_sum() {
        return Err(Error::Precondition(format!(
            "null-sum normalization requires Σβ = 0, got {:.3e}",
            spec.sum()
        )));
    }
    Ok(raw
        .iter()
        .zip(ns)
        .map(|(&r, &n)| {
            let a = seq.big_a(n);
            match mode {
                NormMode::Integrable => r / a,
                NormMode::NullSum => r / a.sqrt(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn a_seq_examples() {
        let bl = NormalizationSeq::billiard_log(1);
        assert_eq!(bl.a(1), 1.0);
        assert_relative_eq!(bl.a(2), (2.0 * 2f64.ln()).sqrt(), max_relative = 1e-12);
        assert_relative_eq!(bl.a(2), 1.17741, max_relative = 1e-5);
        let pp = NormalizationSeq::pure_power(1, 2.0, 1.0);
        assert_eq!(pp.a(9), 3.0);
    }

    #[test]
    #[should_panic(expected = "k >= 1")]
    fn a_seq_rejects_zero() {
        NormalizationSeq::billiard_log(1).a(0);
    }

    #[test]
    fn big_a_examples() {
        let bl = NormalizationSeq::billiard_log(1);
        assert_eq!(bl.big_a(1), 1.0);
        let pp = NormalizationSeq::pure_power(1, 2.0, 1.0);
        let want = 1.0 + 1.0 / 2f64.sqrt() + 1.0 / 3f64.sqrt() + 0.5;
        assert_relative_eq!(pp.big_a(4), want, max_relative = 1e-12);
        assert_relative_eq!(pp.big_a(4), 2.78445, max_relative = 1e-5);
    }

    #[test]
    fn big_a_tracks_asymptote_d1() {
        // 𝔄_n / (2√(n/ln n)) approaches 1 with shrinking error across decades.
        let bl = NormalizationSeq::billiard_log(1);
        let mut errs = Vec::new();
        for n in [10_000u64, 100_000, 1_000_000] {
            let r = bl.big_a(n) / bl.asymptote(n);
            errs.push((r - 1.0).abs());
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "errors not shrinking: {errs:?}");
        assert!(errs[2] < 0.2);
    }

    #[test]
    fn big_a_d2_divergent_slowly() {
        let bl = NormalizationSeq::billiard_log(2);
        let a4 = bl.big_a(10_000);
        let a6 = bl.big_a(1_000_000);
        assert!(a6 > a4);
        // log log growth: the increment over two decades is order-one small
        assert!(a6 - a4 < 1.0);
    }

    #[test]
    fn comparan_sums_pure_power() {
        // with η = (α−d+ε)/2: Σ 𝔞_k^{−d−2η} stays bounded while
        // Σ 𝔞_k^{−d−η} / √𝔄_n decays to zero.
        let seq = NormalizationSeq::lazy_walk(1);
        let (alpha, d, eps) = (2.0f64, 1.0f64, 0.25f64);
        let eta = (alpha - d + eps) / 2.0;
        let mut prev_ratio = f64::INFINITY;
        let mut tail_increments = Vec::new();
        let mut s_2eta = 0.0;
        let mut s_eta = 0.0;
        let mut big_a = 0.0;
        let mut mark = 1_000u64;
        let mut prev_s2 = 0.0;
        for k in 1..=10_000_000u64 {
            let a = seq.a(k);
            s_2eta += a.powf(-(d + 2.0 * eta));
            s_eta += a.powf(-(d + eta));
            big_a += a.powf(-d);
            if k == mark {
                let ratio = s_eta / big_a.sqrt();
                assert!(ratio < prev_ratio, "ratio not decreasing at n={k}");
                prev_ratio = ratio;
                tail_increments.push(s_2eta - prev_s2);
                prev_s2 = s_2eta;
                mark *= 10;
            }
        }
        // bounded: per-decade increments of Σ 𝔞^{−d−2η} shrink geometrically
        // (exponent (α+ε)/α = 1.125, so the decade ratio is 10^{-1/8} ≈ 0.75)
        for w in tail_increments.windows(2) {
            assert!(w[1] < 0.85 * w[0], "increments {tail_increments:?}");
        }
    }

    #[test]
    fn observable_flags() {
        let lt = ObservableSpec::local_time(1);
        assert!(!lt.null_sum());
        assert_eq!(lt.beta([0, 0]), 1.0);
        assert_eq!(lt.beta([3, 0]), 0.0);
        let diff = ObservableSpec::cell_difference(1, cell1(0), cell1(1)).unwrap();
        assert!(diff.null_sum());
        assert_relative_eq!(
            diff.eta_weight_norm(0.625),
            1.0 + 2f64.powf(0.625),
            max_relative = 1e-12
        );
    }

    #[test]
    fn accumulate_examples() {
        let lt = ObservableSpec::local_time(1);
        let path = vec![[0, 0]; 5];
        assert_eq!(accumulate(&path, &lt, &[5]).unwrap(), vec![5.0]);

        let diff = ObservableSpec::cell_difference(1, cell1(0), cell1(1)).unwrap();
        let alt = vec![[0, 0], [1, 0], [0, 0], [1, 0]];
        assert_eq!(accumulate(&alt, &diff, &[4]).unwrap(), vec![0.0]);
        assert_eq!(accumulate(&alt, &diff, &[1, 2, 3, 4]).unwrap(), vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn normalized_stat_modes() {
        let seq = NormalizationSeq::pure_power(1, 2.0, 1.0);
        // construct n with 𝔄_n = 4: not a round number; instead test the arithmetic directly
        let lt = ObservableSpec::local_time(1);
        let spec_ns = ObservableSpec::cell_difference(1, cell1(0), cell1(1)).unwrap();
        let n = 9u64;
        let a = seq.big_a(n);
        let got = normalized_stat(&[10.0], &[n], &seq, NormMode::Integrable, &lt).unwrap();
        assert_relative_eq!(got[0], 10.0 / a, max_relative = 1e-12);
        let got = normalized_stat(&[10.0], &[n], &seq, NormMode::NullSum, &spec_ns).unwrap();
        assert_relative_eq!(got[0], 10.0 / a.sqrt(), max_relative = 1e-12);
        assert!(normalized_stat(&[10.0], &[n], &seq, NormMode::NullSum, &lt).is_err());
    }

    proptest! {
        #[test]
        fn prefix_diff_is_a_inv_d(n in 2u64..200, d in 1u8..=2) {
            let seq = NormalizationSeq::billiard_log(d);
            let pre = seq.prefix(n);
            for k in 1..=n as usize {
                let diff = pre[k] - pre[k - 1];
                prop_assert!((diff - seq.a(k as u64).powi(-(d as i32))).abs() < 1e-12);
            }
            prop_assert!(pre.windows(2).all(|w| w[1] > w[0]));
        }

        #[test]
        fn accumulate_additive_over_segments(
            steps in proptest::collection::vec(-1i64..=1, 1..60),
            split in 0usize..60,
            b0 in -2.0f64..2.0,
            b1 in -2.0f64..2.0,
        ) {
            let mut path = vec![[0i64, 0i64]];
            for s in &steps {
                let last = *path.last().unwrap();
                path.push([last[0] + s, 0]);
            }
            let split = split.min(path.len());
            let spec = ObservableSpec::new(1, vec![(cell1(0), b0), (cell1(1), b1)]).unwrap();
            let whole = accumulate(&path, &spec, &[path.len() as u64]).unwrap()[0];
            let first = accumulate(&path[..split], &spec, &[split as u64]).unwrap_or(vec![0.0])[0];
            let second = accumulate(&path[split..], &spec, &[(path.len() - split) as u64])
                .unwrap_or(vec![0.0])[0];
            prop_assert!((whole - (first + second)).abs() < 1e-9);
        }

        #[test]
        fn accumulate_matches_bruteforce(
            steps in proptest::collection::vec(-1i64..=1, 1..40),
        ) {
            let mut path = vec![[0i64, 0i64]];
            for s in &steps {
                let last = *path.last().unwrap();
                path.push([last[0] + s, 0]);
            }
            let spec = ObservableSpec::new(1, vec![(cell1(0), 0.7), (cell1(-1), -0.2)]).unwrap();
            let n = path.len() as u64;
            let got = accumulate(&path, &spec, &[n]).unwrap()[0];
            let brute: f64 = path.iter().map(|&c| spec.beta(c)).sum();
            prop_assert!((got - brute).abs() < 1e-12);
        }
    }
}
