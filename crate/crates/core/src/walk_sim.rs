//! Monte-Carlo path kernels for lattice walks.
//!
//! The lazy walks consume 2–3 random bits per step (batched from u64
//! draws); general steps go through a Walker alias table with one u64 per
//! step. All kernels are deterministic functions of the supplied stream.

use crate::observables::{Cell, ObservableSpec};
use crate::rw_oracle::StepDistribution;
use rand::Rng;

/// Walker alias table over the step's atoms.
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
    cells: Vec<Cell>,
}

impl AliasTable {
    pub fn new(atoms: &[(Cell, f64)]) -> Self {
        let n = atoms.len();
        let cells: Vec<Cell> = atoms.iter().map(|(c, _)| *c).collect();
        let mut prob: Vec<f64> = atoms.iter().map(|(_, p)| p * n as f64).collect();
        let mut alias = vec![0u32; n];
        let mut small: Vec<usize> = (0..n).filter(|&i| prob[i] < 1.0).collect();
        let mut large: Vec<usize> = (0..n).filter(|&i| prob[i] >= 1.0).collect();
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            alias[s] = l as u32;
            prob[l] = (prob[l] + prob[s]) - 1.0;
            if prob[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        for &i in small.iter().chain(large.iter()) {
            prob[i] = 1.0;
        }
        Self { prob, alias, cells }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Cell {
        let r = rng.random::<u64>();
        let n = self.prob.len() as u64;
        // disjoint bit ranges: low 32 bits pick the column, high 32 the coin
        let idx = (((r & 0xffff_ffff) * n) >> 32) as usize;
        let coin = (r >> 32) as f64 * (1.0 / 4_294_967_296.0);
        if coin < self.prob[idx] {
            self.cells[idx]
        } else {
            self.cells[self.alias[idx] as usize]
        }
    }
}

/// Batches random bits from u64 draws for the lazy-step kernels.
struct BitBuf {
    bits: u64,
    left: u32,
}

impl BitBuf {
    fn new() -> Self {
        Self { bits: 0, left: 0 }
    }

    #[inline]
    fn take<R: Rng + ?Sized>(&mut self, k: u32, rng: &mut R) -> u64 {
        if self.left < k {
            self.bits = rng.random::<u64>();
            self.left = 64;
        }
        let out = self.bits & ((1 << k) - 1);
        self.bits >>= k;
        self.left -= k;
        out
    }
}

/// A step law compiled for simulation. The two lazy walks get exact
/// bit-twiddling kernels; anything else samples through the alias table.
pub enum CompiledWalk {
    Lazy1d,
    Lazy2d,
    General(u8, AliasTable),
}

impl CompiledWalk {
    pub fn from_step(step: &StepDistribution) -> Self {
        if *step == StepDistribution::lazy1d() {
            CompiledWalk::Lazy1d
        } else if *step == StepDistribution::lazy2d() {
            CompiledWalk::Lazy2d
        } else {
            CompiledWalk::General(step.dim(), AliasTable::new(step.atoms()))
        }
    }

    pub fn dim(&self) -> u8 {
        match self {
            CompiledWalk::Lazy1d => 1,
            CompiledWalk::Lazy2d => 2,
            CompiledWalk::General(d, _) => *d,
        }
    }

    /// Local time at the origin: counts of #{k < cp : S_k = 0} for each
    /// checkpoint (S_0 = 0 included).
    pub fn local_time_counts<R: Rng + ?Sized>(
        &self,
        n: u64,
        checkpoints: &[u64],
        rng: &mut R,
    ) -> Vec<u64> {
        debug_assert!(checkpoints.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(*checkpoints.last().unwrap() <= n);
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut count = 0u64;
        let mut k = 0u64;
        match self {
            CompiledWalk::Lazy1d => {
                let mut buf = BitBuf::new();
                let mut x = 0i64;
                for &cp in checkpoints {
                    while k < cp {
                        if x == 0 {
                            count += 1;
                        }
                        let b = buf.take(2, rng);
                        x += (b & 1) as i64 + ((b >> 1) & 1) as i64 - 1;
                        k += 1;
                    }
                    out.push(count);
                }
            }
            CompiledWalk::Lazy2d => {
                let mut buf = BitBuf::new();
                let (mut x, mut y) = (0i64, 0i64);
                for &cp in checkpoints {
                    while k < cp {
                        if x == 0 && y == 0 {
                            count += 1;
                        }
                        let b = buf.take(3, rng);
                        let s = (b & 1) as i64 + ((b >> 1) & 1) as i64 - 1;
                        if b >> 2 == 0 {
                            x += s;
                        } else {
                            y += s;
                        }
                        k += 1;
                    }
                    out.push(count);
                }
            }
            CompiledWalk::General(_, alias) => {
                let (mut x, mut y) = (0i64, 0i64);
                for &cp in checkpoints {
                    while k < cp {
                        if x == 0 && y == 0 {
                            count += 1;
                        }
                        let c = alias.sample(rng);
                        x += c[0];
                        y += c[1];
                        k += 1;
                    }
                    out.push(count);
                }
            }
        }
        out
    }

    #[inline]
    fn advance<R: Rng + ?Sized>(&self, pos: &mut Cell, buf: &mut BitBuf, rng: &mut R) {
        match self {
            CompiledWalk::Lazy1d => {
                let b = buf.take(2, rng);
                pos[0] += (b & 1) as i64 + ((b >> 1) & 1) as i64 - 1;
            }
            CompiledWalk::Lazy2d => {
                let b = buf.take(3, rng);
                let s = (b & 1) as i64 + ((b >> 1) & 1) as i64 - 1;
                if b >> 2 == 0 {
                    pos[0] += s;
                } else {
                    pos[1] += s;
                }
            }
            CompiledWalk::General(_, alias) => {
                let c = alias.sample(rng);
                pos[0] += c[0];
                pos[1] += c[1];
            }
        }
    }

    /// Accumulates one or two observables along a path, recording partial
    /// sums Σ_{k<cp} β_{S_k} at each checkpoint, plus the final position.
    pub fn accumulate_observables<R: Rng + ?Sized>(
        &self,
        n: u64,
        checkpoints: &[u64],
        spec0: &ObservableSpec,
        spec1: Option<&ObservableSpec>,
        rng: &mut R,
    ) -> (Vec<f64>, Vec<f64>, Cell) {
        debug_assert!(*checkpoints.last().unwrap() <= n);
        let sup0: Vec<(Cell, f64)> = spec0.support().to_vec();
        let sup1: Vec<(Cell, f64)> = spec1.map(|s| s.support().to_vec()).unwrap_or_default();
        let mut acc0 = 0.0;
        let mut acc1 = 0.0;
        let mut out0 = Vec::with_capacity(checkpoints.len());
        let mut out1 = Vec::with_capacity(checkpoints.len());
        let mut pos: Cell = [0, 0];
        let mut buf = BitBuf::new();
        let mut k = 0u64;
        for &cp in checkpoints {
            while k < cp {
                for &(c, v) in &sup0 {
                    if c == pos {
                        acc0 += v;
                    }
                }
                for &(c, v) in &sup1 {
                    if c == pos {
                        acc1 += v;
                    }
                }
                self.advance(&mut pos, &mut buf, rng);
                k += 1;
            }
            out0.push(acc0);
            out1.push(acc1);
        }
        (out0, out1, pos)
    }

    /// Final position after n steps (for scale estimation).
    pub fn final_position<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> Cell {
        let mut pos: Cell = [0, 0];
        let mut buf = BitBuf::new();
        for _ in 0..n {
            self.advance(&mut pos, &mut buf, rng);
        }
        pos
    }
}
