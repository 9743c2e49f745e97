//! Exact occupation laws and moments for i.i.d. lattice walks.
//!
//! This is the desk-scale instantiation of the operator framework: for an
//! i.i.d. walk the operators Q_{k,a} act on constants as the scalar masses
//! ν(S_k = a), so every hypothesis-level quantity (Q', Q'', the Fourier
//! representation, the moment sums) reduces to arithmetic on occupation
//! grids that can be computed exactly and cross-checked two independent
//! ways (space-domain convolution vs. characteristic-function inversion).

use crate::error::{precondition, Error, Result};
use crate::gamma::ln_gamma;
use crate::observables::{Cell, NormalizationSeq, ObservableSpec};

/// Neumaier compensated sum; keeps long row/leak accumulations well below
/// the 1e-12 identity tolerances.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    c: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

pub fn compensated_sum(xs: &[f64]) -> f64 {
    let mut acc = CompensatedSum::default();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

/// A finitely supported step law on Z^d.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    dim: u8,
    atoms: Vec<(Cell, f64)>,
}

pub const PROB_SUM_TOL: f64 = 1e-15;

impl StepDistribution {
    pub fn new(dim: u8, atoms: Vec<(Cell, f64)>) -> Result<Self> {
        precondition(dim == 1 || dim == 2, "dim must be 1 or 2")?;
        precondition(!atoms.is_empty(), "step distribution needs at least one atom")?;
        precondition(
            atoms.iter().all(|(_, p)| *p >= 0.0),
            "step probabilities must be nonnegative",
        )?;
        if dim == 1 {
            precondition(
                atoms.iter().all(|(c, _)| c[1] == 0),
                "d=1 atoms must have zero second component",
            )?;
        }
        let total = compensated_sum(&atoms.iter().map(|(_, p)| *p).collect::<Vec<_>>());
        precondition(
            (total - 1.0).abs() < PROB_SUM_TOL,
            "step probabilities must sum to 1",
        )?;
        let mut cells: Vec<Cell> = atoms.iter().map(|(c, _)| *c).collect();
        cells.sort_unstable();
        cells.dedup();
        precondition(cells.len() == atoms.len(), "duplicate atom cell")?;
        Ok(Self { dim, atoms })
    }

    /// Steps −1, 0, +1 with probabilities 1/4, 1/2, 1/4.
    pub fn lazy1d() -> Self {
        Self {
            dim: 1,
            atoms: vec![([-1, 0], 0.25), ([0, 0], 0.5), ([1, 0], 0.25)],
        }
    }

    /// Hold with probability 1/2, else one of the four unit moves (1/8 each).
    pub fn lazy2d() -> Self {
        Self {
            dim: 2,
            atoms: vec![
                ([0, 0], 0.5),
                ([1, 0], 0.125),
                ([-1, 0], 0.125),
                ([0, 1], 0.125),
                ([0, -1], 0.125),
            ],
        }
    }

    /// Simple ±1 walk (periodic; useful as a negative control).
    pub fn srw1d() -> Self {
        Self {
            dim: 1,
            atoms: vec![([-1, 0], 0.5), ([1, 0], 0.5)],
        }
    }

    /// Deterministic unit step (degenerate control: |λ| ≡ 1).
    pub fn deterministic1d() -> Self {
        Self { dim: 1, atoms: vec![([1, 0], 1.0)] }
    }

    pub fn dim(&self) -> u8 {
        self.dim
    }

    pub fn atoms(&self) -> &[(Cell, f64)] {
        &self.atoms
    }

    pub fn mean(&self) -> [f64; 2] {
        let mut m = [0.0, 0.0];
        for (c, p) in &self.atoms {
            m[0] += p * c[0] as f64;
            m[1] += p * c[1] as f64;
        }
        m
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let m = self.mean();
        let mut cov = [[0.0; 2]; 2];
        for (c, p) in &self.atoms {
            let dx = c[0] as f64 - m[0];
            let dy = c[1] as f64 - m[1];
            cov[0][0] += p * dx * dx;
            cov[0][1] += p * dx * dy;
            cov[1][0] += p * dy * dx;
            cov[1][1] += p * dy * dy;
        }
        cov
    }

    pub fn is_symmetric(&self) -> bool {
        self.atoms.iter().all(|(c, p)| {
            let mirror = [-c[0], -c[1]];
            self.atoms
                .iter()
                .any(|(c2, p2)| *c2 == mirror && (p2 - p).abs() < 1e-15)
        })
    }

    /// Strong aperiodicity: the subgroup of Z^d generated by differences of
    /// support points is all of Z^d. Required for the local limit behaviour
    /// of ν(S_k = ·) without sublattice corrections.
    pub fn is_aperiodic(&self) -> bool {
        let base = self.atoms[0].0;
        let mut diffs: Vec<[i64; 2]> = self
            .atoms
            .iter()
            .skip(1)
            .map(|(c, _)| [c[0] - base[0], c[1] - base[1]])
            .collect();
        diffs.retain(|v| *v != [0, 0]);
        if diffs.is_empty() {
            return false;
        }
        if self.dim == 1 {
            let g = diffs.iter().fold(0i64, |g, v| gcd(g, v[0].abs()));
            return g == 1;
        }
        lattice_index(&mut diffs) == 1
    }

    /// Largest sup-norm coordinate over atoms.
    pub fn range(&self) -> i64 {
        self.atoms
            .iter()
            .map(|(c, _)| c[0].abs().max(c[1].abs()))
            .max()
            .unwrap()
    }

    /// Characteristic function λ(t) = Σ p_x e^{i <t, x>}.
    pub fn lambda(&self, t: [f64; 2]) -> (f64, f64) {
        let mut re = 0.0;
        let mut im = 0.0;
        for (c, p) in &self.atoms {
            let phase = t[0] * c[0] as f64 + t[1] * c[1] as f64;
            re += p * phase.cos();
            im += p * phase.sin();
        }
        (re, im)
    }

    /// Half-width making the projected truncation leak comfortably below
    /// `bound` for a depth-n table (Bernstein bound per coordinate).
    pub fn suggested_half_width(&self, n: usize, bound: f64) -> i64 {
        let cov = self.covariance();
        let sigma = cov[0][0].max(cov[1][1]).sqrt().max(1e-9);
        let r = self.range() as f64;
        // solve n * 2 exp(-A^2 / (2 n sigma^2 + (2/3) A r)) <= bound
        let mut a = sigma * (n as f64).sqrt();
        for _ in 0..60 {
            let log_tail =
                (2.0 * n as f64).ln() - a * a / (2.0 * n as f64 * sigma * sigma + 2.0 / 3.0 * a * r);
            if log_tail < bound.ln() {
                break;
            }
            a *= 1.15;
        }
        a.ceil() as i64 + self.range()
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Index of the sublattice of Z^2 generated by `vs` (0 if rank-deficient).
fn lattice_index(vs: &mut Vec<[i64; 2]>) -> i64 {
    // integer row reduction on the x components
    loop {
        vs.retain(|v| *v != [0, 0]);
        let nz: Vec<usize> = (0..vs.len()).filter(|&i| vs[i][0] != 0).collect();
        if nz.len() <= 1 {
            break;
        }
        let &pivot = nz
            .iter()
            .min_by_key(|&&i| vs[i][0].abs())
            .expect("nonempty");
        let pv = vs[pivot];
        for &i in &nz {
            if i != pivot {
                let q = vs[i][0] / pv[0];
                vs[i][0] -= q * pv[0];
                vs[i][1] -= q * pv[1];
            }
        }
    }
    let x_basis = vs.iter().find(|v| v[0] != 0).copied();
    let g_y = vs
        .iter()
        .filter(|v| v[0] == 0)
        .fold(0i64, |g, v| gcd(g, v[1]));
    match x_basis {
        Some(b) if g_y != 0 => (b[0] * g_y).abs(),
        _ => 0,
    }
}

/// Exact (truncation-accounted) grid of ν(S_k = a) for 0 ≤ k ≤ depth,
/// |a|_∞ ≤ half_width.
#[derive(Debug, Clone)]
pub struct OccupationTable {
    pub dim: u8,
    pub depth: usize,
    pub half_width: i64,
    row_len: usize,
    side: usize,
    rows: Vec<f64>,
    leaked: Vec<f64>,
}

impl OccupationTable {
    fn allocate(dim: u8, depth: usize, half_width: i64) -> Result<Self> {
        precondition(half_width >= 1, "half_width must be >= 1")?;
        let side = 2 * half_width as usize + 1;
        let row_len = if dim == 1 { side } else { side * side };
        let total = row_len
            .checked_mul(depth + 1)
            .ok_or_else(|| Error::Precondition("table size overflow".into()))?;
        precondition(total <= 300_000_000, "occupation table would exceed memory budget")?;
        Ok(Self {
            dim,
            depth,
            half_width,
            row_len,
            side,
            rows: vec![0.0; total],
            leaked: vec![0.0; depth + 1],
        })
    }

    pub fn row_len(&self) -> usize {
        self.row_len
    }

    fn offset(&self, cell: Cell) -> Option<usize> {
        let a = self.half_width;
        if cell[0].abs() > a || (self.dim == 2 && cell[1].abs() > a) {
            return None;
        }
        if self.dim == 1 {
            if cell[1] != 0 {
                return None;
            }
            Some((cell[0] + a) as usize)
        } else {
            Some(((cell[0] + a) as usize) * self.side + (cell[1] + a) as usize)
        }
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.row_len..(k + 1) * self.row_len]
    }

    fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.rows[k * self.row_len..(k + 1) * self.row_len]
    }

    /// ν(S_k = a); errors outside the stored range.
    pub fn value(&self, k: usize, cell: Cell) -> Result<f64> {
        precondition(k <= self.depth, "row index beyond table depth")?;
        let off = self
            .offset(cell)
            .ok_or_else(|| Error::Precondition(format!("cell {cell:?} outside table range")))?;
        Ok(self.row(k)[off])
    }

    pub fn row_sum(&self, k: usize) -> f64 {
        compensated_sum(self.row(k))
    }

    pub fn leaked(&self, k: usize) -> f64 {
        self.leaked[k]
    }

    /// Cells enumerated in storage order (for exports).
    pub fn cells(&self) -> Vec<Cell> {
        let a = self.half_width;
        let mut out = Vec::with_capacity(self.row_len);
        if self.dim == 1 {
            for x in -a..=a {
                out.push([x, 0]);
            }
        } else {
            for x in -a..=a {
                for y in -a..=a {
                    out.push([x, y]);
                }
            }
        }
        out
    }
}

/// Sparse-stencil convolution of one row into the next; returns the mass
/// pushed outside the grid by this step.
fn convolve_row(
    dim: u8,
    side: usize,
    half_width: i64,
    atoms: &[(Cell, f64)],
    cur: &[f64],
    next: &mut [f64],
) -> f64 {
    next.fill(0.0);
    let mut leak = CompensatedSum::default();
    if dim == 1 {
        let w = side as i64;
        for &(c, p) in atoms {
            let dx = c[0];
            // out[i + dx] += p * cur[i]
            let lo = (-dx).max(0);
            let hi = (w - dx).min(w);
            for i in lo..hi {
                next[(i + dx) as usize] += p * cur[i as usize];
            }
            let mut esc = CompensatedSum::default();
            for i in 0..lo {
                esc.add(cur[i as usize]);
            }
            for i in hi.max(0)..w {
                esc.add(cur[i as usize]);
            }
            leak.add(p * esc.value());
        }
    } else {
        let w = side as i64;
        let _ = half_width;
        for &(c, p) in atoms {
            let (dx, dy) = (c[0], c[1]);
            let xlo = (-dx).max(0);
            let xhi = (w - dx).min(w);
            let ylo = (-dy).max(0);
            let yhi = (w - dy).min(w);
            let mut esc = CompensatedSum::default();
            for x in 0..w {
                let rowi = &cur[(x as usize) * side..(x as usize + 1) * side];
                if x < xlo || x >= xhi {
                    esc.add(compensated_sum(rowi));
                    continue;
                }
                let out_row =
                    &mut next[((x + dx) as usize) * side..((x + dx) as usize + 1) * side];
                for y in ylo..yhi {
                    out_row[(y + dy) as usize] += p * rowi[y as usize];
                }
                for y in 0..ylo {
                    esc.add(rowi[y as usize]);
                }
                for y in yhi.max(0)..w {
                    esc.add(rowi[y as usize]);
                }
            }
            leak.add(p * esc.value());
        }
    }
    leak.value()
}

/// Build the exact occupation table of `step` to the given depth and
/// half-width. Mass leaving the grid is accumulated, never redistributed.
pub fn convolve(step: &StepDistribution, depth: usize, half_width: i64) -> Result<OccupationTable> {
    let mut table = OccupationTable::allocate(step.dim(), depth, half_width)?;
    let origin = table
        .offset([0, 0])
        .expect("origin is always inside the grid");
    table.row_mut(0)[origin] = 1.0;
    let side = table.side;
    let dim = table.dim;
    let mut leak_acc = CompensatedSum::default();
    for k in 0..depth {
        let (done, rest) = table.rows.split_at_mut((k + 1) * table.row_len);
        let cur = &done[k * table.row_len..];
        let next = &mut rest[..table.row_len];
        let esc = convolve_row(dim, side, half_width, step.atoms(), cur, next);
        leak_acc.add(esc);
        table.leaked[k + 1] = leak_acc.value();
    }
    Ok(table)
}

/// ν(S_k = a).
pub fn q_mass(occ: &OccupationTable, k: usize, a: Cell) -> Result<f64> {
    occ.value(k, a)
}

/// Q'_{k,a} mass: ν(S_k = a) − ν(S_k = 0).
pub fn q_prime(occ: &OccupationTable, k: usize, a: Cell) -> Result<f64> {
    Ok(occ.value(k, a)? - occ.value(k, [0, 0])?)
}

/// Q''_{k,a,b} mass: ν(S_k = b−a) − ν(S_k = b) − ν(S_k = −a) + ν(S_k = 0).
pub fn q_double_diff(occ: &OccupationTable, k: usize, a: Cell, b: Cell) -> Result<f64> {
    let bma = [b[0] - a[0], b[1] - a[1]];
    let na = [-a[0], -a[1]];
    Ok(occ.value(k, bma)? - occ.value(k, b)? - occ.value(k, na)? + occ.value(k, [0, 0])?)
}

/// Row of ν(S_k = ·) computed through the characteristic function on a
/// discrete Fourier grid of (2A+1)^d points. This is the independent route
/// against the space-domain convolution; it periodizes rather than
/// truncates, so both agree only when the walk's mass fits the grid.
pub fn fourier_occupation(step: &StepDistribution, k: usize, half_width: i64) -> Vec<f64> {
    let m = 2 * half_width as usize + 1;
    // phase table: e^{-2pi i q / m}
    let tau = 2.0 * std::f64::consts::PI / m as f64;
    let phase: Vec<(f64, f64)> = (0..m)
        .map(|q| {
            let th = -tau * q as f64;
            (th.cos(), th.sin())
        })
        .collect();
    let lam_pow = |t: [f64; 2]| -> (f64, f64) {
        let (re, im) = step.lambda(t);
        let r = (re * re + im * im).sqrt();
        let th = im.atan2(re);
        let rk = r.powi(k as i32);
        let thk = th * k as f64;
        (rk * thk.cos(), rk * thk.sin())
    };
    let midx = |j: usize, a_idx: usize| -> usize {
        // exponent j * (a_idx - A) mod m
        let e = (j as i64 * (a_idx as i64 - half_width)).rem_euclid(m as i64);
        e as usize
    };
    if step.dim() == 1 {
        let lam: Vec<(f64, f64)> = (0..m).map(|j| lam_pow([tau * j as f64, 0.0])).collect();
        let mut out = vec![0.0; m];
        for (a_idx, o) in out.iter_mut().enumerate() {
            let mut re = 0.0;
            for (j, &(lr, li)) in lam.iter().enumerate() {
                let (pr, pi) = phase[midx(j, a_idx)];
                re += lr * pr - li * pi;
            }
            *o = re / m as f64;
        }
        out
    } else {
        let mut lam = vec![(0.0, 0.0); m * m];
        for jx in 0..m {
            for jy in 0..m {
                lam[jx * m + jy] = lam_pow([tau * jx as f64, tau * jy as f64]);
            }
        }
        // pass 1: transform the y index
        let mut g = vec![(0.0, 0.0); m * m]; // [jx][ay]
        for jx in 0..m {
            for ay in 0..m {
                let mut re = 0.0;
                let mut im = 0.0;
                for jy in 0..m {
                    let (lr, li) = lam[jx * m + jy];
                    let (pr, pi) = phase[midx(jy, ay)];
                    re += lr * pr - li * pi;
                    im += lr * pi + li * pr;
                }
                g[jx * m + ay] = (re / m as f64, im / m as f64);
            }
        }
        // pass 2: transform the x index
        let mut out = vec![0.0; m * m];
        for ax in 0..m {
            for ay in 0..m {
                let mut re = 0.0;
                for jx in 0..m {
                    let (gr, gi) = g[jx * m + ay];
                    let (pr, pi) = phase[midx(jx, ax)];
                    re += gr * pr - gi * pi;
                }
                out[ax * m + ay] = re / m as f64;
            }
        }
        out
    }
}

/// Numeric verification of the spectral-criterion shape for an i.i.d. step:
/// aperiodicity (|λ| < 1 away from 0) and the Gaussian/stable envelope
/// |λ_{t/𝔞_k}|^k ≤ exp(−c·min(|t|^{α−ε}, |t|^{α+ε})).
#[derive(Debug, Clone)]
pub struct CriteriaReport {
    pub aperiodic_lattice: bool,
    pub lambda_at_zero: f64,
    /// sup |λ(u)| over b < |u|_∞ ≤ π.
    pub sup_lambda_away: f64,
    pub envelope_c: f64,
    pub envelope_ok: bool,
    pub notes: Vec<String>,
}

pub fn criteria_check(
    step: &StepDistribution,
    seq: &NormalizationSeq,
    b: f64,
    eps: f64,
) -> CriteriaReport {
    let mut notes = Vec::new();
    let aperiodic_lattice = step.is_aperiodic();
    if !aperiodic_lattice {
        notes.push("support differences do not generate Z^d".into());
    }
    let (re0, im0) = step.lambda([0.0, 0.0]);
    let lambda_at_zero = (re0 * re0 + im0 * im0).sqrt();

    let grid = 401usize;
    let mut sup_away: f64 = 0.0;
    let modulus = |t: [f64; 2]| {
        let (re, im) = step.lambda(t);
        (re * re + im * im).sqrt()
    };
    if step.dim() == 1 {
        for i in 0..=grid {
            let u = -std::f64::consts::PI
                + 2.0 * std::f64::consts::PI * i as f64 / grid as f64;
            if u.abs() > b {
                sup_away = sup_away.max(modulus([u, 0.0]));
            }
        }
    } else {
        for i in 0..=grid {
            for j in 0..=grid {
                let ux = -std::f64::consts::PI
                    + 2.0 * std::f64::consts::PI * i as f64 / grid as f64;
                let uy = -std::f64::consts::PI
                    + 2.0 * std::f64::consts::PI * j as f64 / grid as f64;
                if ux.abs().max(uy.abs()) > b {
                    sup_away = sup_away.max(modulus([ux, uy]));
                }
            }
        }
    }
    if sup_away >= 1.0 - 1e-12 {
        notes.push(format!("sup |lambda| away from 0 is {sup_away:.6}; not contracting"));
    }

    // envelope fit: c = min over the (k, t) grid of -ln|λ_{t/a_k}|^k / g(t)
    let alpha = seq.alpha;
    let mut c_min = f64::INFINITY;
    let mut any = false;
    for &k in &[8u64, 64, 512, 4096] {
        let ak = seq.a(k);
        let tmax = b * ak;
        for i in 1..=200 {
            let t = tmax * i as f64 / 200.0;
            let lam = modulus([t / ak, 0.0]);
            let lam = if step.dim() == 2 {
                // probe the diagonal too and keep the worse direction
                lam.max(modulus([
                    t / ak / 2f64.sqrt(),
                    t / ak / 2f64.sqrt(),
                ]))
            } else {
                lam
            };
            let g = t.powf(alpha - eps).min(t.powf(alpha + eps));
            if g > 0.0 && lam > 0.0 {
                let c = -(k as f64) * lam.ln() / g;
                c_min = c_min.min(c);
                any = true;
            }
        }
    }
    let envelope_c = if any { c_min } else { 0.0 };
    let envelope_ok = aperiodic_lattice && sup_away < 1.0 - 1e-9 && envelope_c > 0.0;
    CriteriaReport {
        aperiodic_lattice,
        lambda_at_zero,
        sup_lambda_away: sup_away,
        envelope_c,
        envelope_ok,
        notes,
    }
}

/// Exact moments E[(Σ_{k<n'} β_{S_k})^j], j ≤ degree, at each checkpoint.
#[derive(Debug, Clone)]
pub struct MomentTable {
    pub checkpoints: Vec<u64>,
    /// `moments[i][j]` = E[(Σ_{k < checkpoints[i]} β_{S_k})^j]; j = 0 carries
    /// the retained mass (1 − leak).
    pub moments: Vec<Vec<f64>>,
    pub final_leak: f64,
}

pub const DP_MAX_DEGREE: usize = 8;

/// Forward moment recursion: carries m_j(k, a) = E[(Σ_{i≤k} β_{S_i})^j 1{S_k=a}]
/// for all degrees at once; each step convolves in space then applies the
/// binomial shift (x + β_a)^j at the support cells.
pub fn exact_moment_dp(
    step: &StepDistribution,
    spec: &ObservableSpec,
    degree: usize,
    n: u64,
    half_width: i64,
    checkpoints: &[u64],
    leak_bound: f64,
) -> Result<MomentTable> {
    precondition(degree >= 1 && degree <= DP_MAX_DEGREE, "degree must be in 1..=8")?;
    precondition(step.dim() == spec.dim(), "step/observable dimension mismatch")?;
    precondition(!checkpoints.is_empty(), "need at least one checkpoint")?;
    precondition(
        checkpoints.windows(2).all(|w| w[0] < w[1]),
        "checkpoints must be strictly increasing",
    )?;
    precondition(
        *checkpoints.last().unwrap() <= n && checkpoints[0] >= 1,
        "checkpoints must lie in [1, n]",
    )?;
    precondition(
        spec.support_radius() <= half_width,
        "observable support exceeds half_width",
    )?;

    let side = 2 * half_width as usize + 1;
    let row_len = if step.dim() == 1 { side } else { side * side };
    let total = row_len * (degree + 1);
    precondition(total <= 300_000_000, "moment DP grid exceeds memory budget")?;

    let probe = OccupationTable::allocate(step.dim(), 0, half_width)?;
    let offset_of = |cell: Cell| probe.offset(cell);
    let origin = offset_of([0, 0]).expect("origin in-grid");
    let support: Vec<(usize, f64)> = spec
        .support()
        .iter()
        .map(|(c, v)| (offset_of(*c).expect("support inside grid"), *v))
        .collect();

    let binom: Vec<Vec<f64>> = (0..=degree)
        .map(|j| {
            (0..=j)
                .map(|r| {
                    ((ln_gamma(j as f64 + 1.0)
                        - ln_gamma(r as f64 + 1.0)
                        - ln_gamma((j - r) as f64 + 1.0))
                    .exp())
                    .round()
                })
                .collect()
        })
        .collect();

    let mut cur = vec![vec![0.0f64; row_len]; degree + 1];
    let mut next = vec![vec![0.0f64; row_len]; degree + 1];
    cur[0][origin] = 1.0;
    let shift = |arrs: &mut [Vec<f64>], off: usize, beta: f64| {
        let mut vals = vec![0.0; degree + 1];
        for (j, v) in vals.iter_mut().enumerate() {
            *v = arrs[j][off];
        }
        for j in (0..=degree).rev() {
            let mut acc = 0.0;
            let mut bpow = 1.0;
            for r in (0..=j).rev() {
                acc += binom[j][r] * bpow * vals[r];
                bpow *= beta;
            }
            arrs[j][off] = acc;
        }
    };
    // k = 0 contribution: X_0 = β_{S_0} at the origin
    for &(off, beta) in &support {
        if off == origin {
            shift(&mut cur, off, beta);
        }
    }

    let mut out = MomentTable {
        checkpoints: checkpoints.to_vec(),
        moments: Vec::with_capacity(checkpoints.len()),
        final_leak: 0.0,
    };
    let mut leak = CompensatedSum::default();
    let mut cp_iter = checkpoints.iter().peekable();
    let record = |cur: &[Vec<f64>], leak: f64, out: &mut MomentTable| {
        let row: Vec<f64> = cur.iter().map(|arr| compensated_sum(arr)).collect();
        out.moments.push(row);
        out.final_leak = leak;
    };
    if **cp_iter.peek().unwrap() == 1 {
        record(&cur, leak.value(), &mut out);
        cp_iter.next();
    }
    for k in 1..n {
        for j in 0..=degree {
            let esc = convolve_row(
                step.dim(),
                side,
                half_width,
                step.atoms(),
                &cur[j],
                &mut next[j],
            );
            if j == 0 {
                leak.add(esc);
            }
        }
        std::mem::swap(&mut cur, &mut next);
        for &(off, beta) in &support {
            shift(&mut cur, off, beta);
        }
        if let Some(&&cp) = cp_iter.peek() {
            if cp == k + 1 {
                record(&cur, leak.value(), &mut out);
                cp_iter.next();
            }
        }
        if cp_iter.peek().is_none() {
            break;
        }
    }
    if out.final_leak > leak_bound {
        return Err(Error::LeakExceeded { leak: out.final_leak, bound: leak_bound });
    }
    Ok(out)
}

/// Fit metadata for a truncated power-tail step.
#[derive(Debug, Clone)]
pub struct StableFit {
    pub fitted_alpha: f64,
    /// c in 1 − λ(t) ≈ c |t|^α near 0.
    pub fitted_scale: f64,
    /// The matching pure-power normalization 𝔞_n = (c n)^{1/α}.
    pub seq: NormalizationSeq,
}

/// Symmetric step with p(±j) ∝ j^{−1−α}, 1 ≤ j ≤ cutoff, plus the
/// empirically fitted scale of its characteristic function.
pub fn stable_step_builder(alpha: f64, cutoff: i64) -> Result<(StepDistribution, StableFit)> {
    precondition(alpha > 1.0 && alpha < 2.0, "alpha must be in (1, 2)")?;
    precondition(cutoff >= 1, "cutoff must be >= 1")?;
    let weights: Vec<f64> = (1..=cutoff).map(|j| (j as f64).powf(-1.0 - alpha)).collect();
    let z = 2.0 * compensated_sum(&weights);
    let mut atoms = Vec::with_capacity(2 * cutoff as usize);
    for (j, w) in (1..=cutoff).zip(&weights) {
        atoms.push(([j, 0], w / z));
        atoms.push(([-j, 0], w / z));
    }
    // the atoms sum to 1 up to rounding; rebalance the first pair exactly
    let total = compensated_sum(&atoms.iter().map(|(_, p)| *p).collect::<Vec<_>>());
    let corr = (1.0 - total) / 2.0;
    atoms[0].1 += corr;
    atoms[1].1 += corr;
    let step = StepDistribution::new(1, atoms)?;

    // log-log fit of 1 − λ(t) over a window where the tail (not the cutoff
    // or the quadratic core) rules: 1/t well inside [1, cutoff].
    let t_lo = (30.0 / cutoff as f64).max(1e-4).min(3e-3);
    let t_hi = 3e-2f64.max(t_lo * 4.0);
    let m = 24;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..m {
        let t = t_lo * (t_hi / t_lo).powf(i as f64 / (m - 1) as f64);
        let (re, _) = step.lambda([t, 0.0]);
        let x = t.ln();
        let y = (1.0 - re).ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let mf = m as f64;
    let slope = (mf * sxy - sx * sy) / (mf * sxx - sx * sx);
    let intercept = (sy - slope * sx) / mf;
    let fitted_alpha = slope;
    let fitted_scale = intercept.exp();
    let seq = NormalizationSeq::pure_power(1, fitted_alpha, fitted_scale.powf(1.0 / fitted_alpha));
    Ok((step, StableFit { fitted_alpha, fitted_scale, seq }))
}

/// ν(S_k = 0) for k ≤ n by a rolling two-row convolution (no full table).
pub fn return_probs(step: &StepDistribution, n: usize, half_width: i64) -> Result<(Vec<f64>, f64)> {
    let side = 2 * half_width as usize + 1;
    let row_len = if step.dim() == 1 { side } else { side * side };
    precondition(row_len <= 300_000_000, "grid exceeds memory budget")?;
    let probe = OccupationTable::allocate(step.dim(), 0, half_width)?;
    let origin = probe.offset([0, 0]).expect("origin in-grid");
    let mut cur = vec![0.0f64; row_len];
    let mut next = vec![0.0f64; row_len];
    cur[origin] = 1.0;
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    let mut leak = CompensatedSum::default();
    for _ in 0..n {
        let esc = convolve_row(step.dim(), side, half_width, step.atoms(), &cur, &mut next);
        leak.add(esc);
        std::mem::swap(&mut cur, &mut next);
        out.push(cur[origin]);
    }
    Ok((out, leak.value()))
}

/// u_k = ν(S_k = 0) for the lazy 1d walk, in closed form
/// (u_k = C(2k,k) 4^{−k}, by the two-coin representation of the step).
pub fn lazy1d_return_probs(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut u = 1.0f64;
    out.push(u);
    for k in 1..=n {
        u *= (2 * k - 1) as f64 / (2 * k) as f64;
        out.push(u);
    }
    out
}

/// ν(S_k = (0,0)) for the lazy 2d walk. Each step picks a coordinate fairly
/// and moves it by a lazy 1d step, so the return probability mixes the 1d
/// law binomially: p_k(0) = 2^{−k} Σ_j C(k,j) u_j u_{k−j}. The binomial
/// weight concentrates at j ≈ k/2, so the sum is windowed at ±7 standard
/// deviations with a multiplicative weight recurrence.
pub fn lazy2d_return_probs(n: usize) -> Vec<f64> {
    let u1 = lazy1d_return_probs(n);
    // ln j! by compensated cumulative sum
    let mut lgf = Vec::with_capacity(n + 1);
    let mut acc = CompensatedSum::default();
    lgf.push(0.0);
    for j in 1..=n {
        acc.add((j as f64).ln());
        lgf.push(acc.value());
    }
    let ln2 = std::f64::consts::LN_2;
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    for k in 1..=n {
        let kf = k as f64;
        let w = (3.5 * kf.sqrt()).ceil() as usize + 2;
        let j0 = (k / 2).saturating_sub(w);
        let j1 = (k / 2 + w).min(k);
        // weight at j0, then recurrence along the window
        let lw = lgf[k] - kf * ln2 - lgf[j0] - lgf[k - j0];
        let mut weight = lw.exp();
        let mut sum = CompensatedSum::default();
        for j in j0..=j1 {
            sum.add(weight * u1[j] * u1[k - j]);
            // C(k, j+1)/C(k, j) = (k−j)/(j+1)
            weight *= (k - j) as f64 / (j + 1) as f64;
        }
        out.push(sum.value());
    }
    out
}

/// Renewal-form first and second local-time moments from a return
/// probability sequence: E[L_n] = Σ_{k<n} u_k and
/// E[L_n²] = E[L_n] + 2 Σ_{j<n} u_j U(n−1−j) with U(m) = Σ_{1≤p≤m} u_p.
pub fn local_time_mean_var_from_returns(u: &[f64], checkpoints: &[u64]) -> Vec<(f64, f64)> {
    let n_max = *checkpoints.last().unwrap() as usize;
    assert!(u.len() >= n_max, "return sequence shorter than checkpoints");
    let mut prefix0 = Vec::with_capacity(n_max + 1); // Σ_{k<m} u_k
    let mut prefix1 = Vec::with_capacity(n_max + 1); // Σ_{1<=p<=m} u_p
    prefix0.push(0.0);
    prefix1.push(0.0);
    let mut a0 = CompensatedSum::default();
    let mut a1 = CompensatedSum::default();
    for m in 1..=n_max {
        a0.add(u[m - 1]);
        prefix0.push(a0.value());
        a1.add(u[m]);
        prefix1.push(a1.value());
    }
    checkpoints
        .iter()
        .map(|&cp| {
            let n = cp as usize;
            let mean = prefix0[n];
            let mut cross = CompensatedSum::default();
            for j in 0..n {
                cross.add(u[j] * prefix1[n - 1 - j]);
            }
            let m2 = mean + 2.0 * cross.value();
            (mean, m2 - mean * mean)
        })
        .collect()
}
