//! The collision map T, its Z^d-extension bookkeeping (cell labels, the
//! cell-change Ψ̄ and Birkhoff sums S̄_n), the invariant-measure sampler, and
//! the unit-speed flow with per-cell collision counts 𝒩_t(ℓ).
//!
//! States are always stored in quotient coordinates (the scatterer copy of
//! the current cell translated back to the unit cell), so one step's
//! geometry never depends on the cell label: translation equivariance of
//! (Ψ̄, τ, next base) is exact by construction, and the conjugation identity
//! cell_n = cell_0 + S̄_n holds in integer arithmetic.

use crate::error::{Error, Result};
use crate::geometry::{next_collision, reflect_unchecked, BilliardTable, Ray};
use crate::observables::Cell;
use rand::Rng;
use std::f64::consts::{PI, TAU};

/// Post-collisional state on a scatterer boundary: position angle on the
/// circle and the angle of the outgoing velocity against the outward
/// normal (in (−π/2, π/2)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionState {
    pub disk: usize,
    pub boundary_angle: f64,
    pub outgoing_angle: f64,
}

impl CollisionState {
    /// Boundary point in quotient coordinates.
    pub fn position(&self, table: &BilliardTable) -> [f64; 2] {
        let d = &table.disks()[self.disk];
        [
            d.center[0] + d.radius * self.boundary_angle.cos(),
            d.center[1] + d.radius * self.boundary_angle.sin(),
        ]
    }

    /// Outgoing unit velocity.
    pub fn velocity(&self) -> [f64; 2] {
        let a = self.boundary_angle + self.outgoing_angle;
        [a.cos(), a.sin()]
    }

    /// The time-reversal involution on post-collisional states: retracing a
    /// trajectory means flipping the sign of the outgoing angle.
    pub fn time_reverse(&self) -> Self {
        Self {
            disk: self.disk,
            boundary_angle: self.boundary_angle,
            outgoing_angle: -self.outgoing_angle,
        }
    }
}

/// Collision state plus the Z^d cell label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtendedState {
    pub base: CollisionState,
    pub cell: Cell,
}

/// Internal stepping state in Cartesian quotient coordinates; avoids the
/// per-step trigonometry of the angle representation.
#[derive(Debug, Clone, Copy)]
pub struct MapRunner {
    disk: usize,
    point: [f64; 2],
    vel: [f64; 2],
    cell: Cell,
}

impl MapRunner {
    pub fn new(state: &ExtendedState, table: &BilliardTable) -> Self {
        Self {
            disk: state.base.disk,
            point: state.base.position(table),
            vel: state.base.velocity(),
            cell: state.cell,
        }
    }

    pub fn cell(&self) -> Cell {
        self.cell
    }

    pub fn speed(&self) -> f64 {
        (self.vel[0] * self.vel[0] + self.vel[1] * self.vel[1]).sqrt()
    }

    pub fn state(&self, table: &BilliardTable) -> ExtendedState {
        let d = &table.disks()[self.disk];
        let theta = (self.point[1] - d.center[1]).atan2(self.point[0] - d.center[0]);
        let theta = theta.rem_euclid(TAU);
        let vel_angle = self.vel[1].atan2(self.vel[0]);
        let mut phi = vel_angle - theta;
        while phi > PI {
            phi -= TAU;
        }
        while phi < -PI {
            phi += TAU;
        }
        ExtendedState {
            base: CollisionState { disk: self.disk, boundary_angle: theta, outgoing_angle: phi },
            cell: self.cell,
        }
    }

    /// One collision: returns (Ψ̄ of this step, flight time τ).
    pub fn step(&mut self, table: &BilliardTable) -> Result<(Cell, f64)> {
        let hit = next_collision(&Ray { origin: self.point, direction: self.vel }, table)?;
        let m = hit.cell_offset;
        // quotient reduction: pull the hit copy back to the unit cell. In the
        // d = 1 tube the vertical offset is identified away; only the
        // horizontal translate counts as a cell change.
        let psi = if table.dim() == 1 { [m[0], 0] } else { m };
        self.point = [
            hit.point[0] - m[0] as f64,
            hit.point[1] - m[1] as f64,
        ];
        let v = reflect_unchecked(self.vel, hit.inward_normal);
        // keep unit speed over arbitrarily long orbits (reflection alone
        // drifts by ~1 ulp per collision)
        let inv = 1.0 / (v[0] * v[0] + v[1] * v[1]).sqrt();
        self.vel = [v[0] * inv, v[1] * inv];
        self.disk = hit.disk;
        self.cell = [self.cell[0] + psi[0], self.cell[1] + psi[1]];
        Ok((psi, hit.flight_time))
    }
}

/// One application of the extended collision map.
pub fn step(state: &ExtendedState, table: &BilliardTable) -> Result<(ExtendedState, Cell, f64)> {
    let mut runner = MapRunner::new(state, table);
    let (psi, tau) = runner.step(table)?;
    Ok((runner.state(table), psi, tau))
}

/// Full record of a map trajectory (for modest n; ensembles stream through
/// [`MapRunner`] instead).
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub initial: ExtendedState,
    /// State after the (k+1)-th collision.
    pub states: Vec<ExtendedState>,
    pub flight_times: Vec<f64>,
    /// Running Birkhoff sums S̄_1, ..., S̄_n of the cell-change function.
    pub birkhoff: Vec<Cell>,
    pub truncated: bool,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// The visited cell labels S̄_0 = 0, S̄_1, ..., relative to the start.
    pub fn cell_path(&self) -> Vec<Cell> {
        let mut out = Vec::with_capacity(self.birkhoff.len() + 1);
        out.push([0, 0]);
        out.extend(self.birkhoff.iter().copied());
        out
    }
}

/// Iterates the map n times, checking the conjugation identity at each step.
pub fn run_map(initial: &ExtendedState, n: u64, table: &BilliardTable) -> Result<TrajectoryRecord> {
    let mut rec = TrajectoryRecord {
        initial: *initial,
        states: Vec::with_capacity(n as usize),
        flight_times: Vec::with_capacity(n as usize),
        birkhoff: Vec::with_capacity(n as usize),
        truncated: false,
    };
    let mut runner = MapRunner::new(initial, table);
    let mut s = [0i64, 0i64];
    for _ in 0..n {
        match runner.step(table) {
            Ok((psi, tau)) => {
                s = [s[0] + psi[0], s[1] + psi[1]];
                let st = runner.state(table);
                assert_eq!(
                    st.cell,
                    [initial.cell[0] + s[0], initial.cell[1] + s[1]],
                    "conjugation identity must hold exactly"
                );
                rec.states.push(st);
                rec.flight_times.push(tau);
                rec.birkhoff.push(s);
            }
            Err(Error::TruncatedFlight { .. }) => {
                rec.truncated = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(rec)
}

/// Samples from μ̄ restricted to the 0-cell: disk proportional to its
/// circumference, uniform boundary angle, outgoing angle with density
/// cos(φ)/2 on (−π/2, π/2).
pub fn sample_initial<R: Rng + ?Sized>(table: &BilliardTable, rng: &mut R) -> ExtendedState {
    let disks = table.disks();
    let total: f64 = disks.iter().map(|d| d.radius).sum();
    let mut pick = rng.random::<f64>() * total;
    let mut disk = disks.len() - 1;
    for (i, d) in disks.iter().enumerate() {
        if pick < d.radius {
            disk = i;
            break;
        }
        pick -= d.radius;
    }
    let boundary_angle = rng.random::<f64>() * TAU;
    let outgoing_angle = (2.0 * rng.random::<f64>() - 1.0).asin();
    ExtendedState {
        base: CollisionState { disk, boundary_angle, outgoing_angle },
        cell: [0, 0],
    }
}

/// Flow run: collision counts per watched cell at each checkpoint time.
#[derive(Debug, Clone)]
pub struct FlowRecord {
    pub checkpoint_times: Vec<f64>,
    pub watched: Vec<Cell>,
    /// counts[i][w] = 𝒩_{t_i}(watched[w]).
    pub counts: Vec<Vec<u64>>,
    /// Collisions in cells outside the watched set, per checkpoint.
    pub unwatched: Vec<u64>,
    /// 𝔫 at each checkpoint (total collisions up to that time).
    pub collisions: Vec<u64>,
    pub truncated: bool,
}

/// Advances the flow by free flights until `t_max`, recording 𝒩_t(ℓ) for
/// each watched ℓ at the requested checkpoint times (all ≤ t_max).
pub fn run_flow(
    initial: &ExtendedState,
    t_max: f64,
    table: &BilliardTable,
    watched: &[Cell],
    checkpoint_times: &[f64],
) -> Result<FlowRecord> {
    crate::error::precondition(t_max > 0.0, "t_max must be positive")?;
    crate::error::precondition(
        checkpoint_times.windows(2).all(|w| w[0] < w[1]),
        "checkpoint times must be strictly increasing",
    )?;
    crate::error::precondition(
        checkpoint_times.last().is_none_or(|&t| t <= t_max),
        "checkpoints must not exceed t_max",
    )?;
    let mut rec = FlowRecord {
        checkpoint_times: checkpoint_times.to_vec(),
        watched: watched.to_vec(),
        counts: Vec::with_capacity(checkpoint_times.len()),
        unwatched: Vec::with_capacity(checkpoint_times.len()),
        collisions: Vec::with_capacity(checkpoint_times.len()),
        truncated: false,
    };
    let mut counts = vec![0u64; watched.len()];
    let mut unwatched = 0u64;
    let mut total = 0u64;
    let mut t = 0.0f64;
    let mut cp = 0usize;
    let mut runner = MapRunner::new(initial, table);
    loop {
        let step_res = runner.step(table);
        let (_, tau) = match step_res {
            Ok(x) => x,
            Err(Error::TruncatedFlight { .. }) => {
                rec.truncated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let t_next = t + tau;
        while cp < checkpoint_times.len() && checkpoint_times[cp] < t_next {
            rec.counts.push(counts.clone());
            rec.unwatched.push(unwatched);
            rec.collisions.push(total);
            cp += 1;
        }
        if t_next > t_max {
            break;
        }
        t = t_next;
        total += 1;
        let cell = runner.cell();
        match watched.iter().position(|w| *w == cell) {
            Some(i) => counts[i] += 1,
            None => unwatched += 1,
        }
    }
    while cp < checkpoint_times.len() {
        rec.counts.push(counts.clone());
        rec.unwatched.push(unwatched);
        rec.collisions.push(total);
        cp += 1;
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Disk;
    use crate::ks::ks_statistic;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    fn two_disk_table() -> BilliardTable {
        BilliardTable::new(
            2,
            vec![
                Disk { center: [0.3, 0.5], radius: 0.15 },
                Disk { center: [0.7, 0.5], radius: 0.15 },
            ],
            1_000_000,
            3,
        )
        .unwrap()
    }

    #[test]
    fn step_intra_cell_has_zero_psi() {
        let table = two_disk_table();
        // on disk 0 at angle 0 → point (0.45, 0.5), shooting right at disk 1
        let st = ExtendedState {
            base: CollisionState { disk: 0, boundary_angle: 0.0, outgoing_angle: 0.0 },
            cell: [0, 0],
        };
        let (next, psi, tau) = step(&st, &table).unwrap();
        assert_eq!(psi, [0, 0]);
        assert_eq!(next.base.disk, 1);
        assert_relative_eq!(tau, 0.1, epsilon = 1e-12);
        assert_eq!(next.cell, [0, 0]);
    }

    #[test]
    fn step_axis_crossing_example() {
        let table = BilliardTable::canonical(2);
        let st = ExtendedState {
            base: CollisionState { disk: 0, boundary_angle: 0.0, outgoing_angle: 0.0 },
            cell: [0, 0],
        };
        let (next, psi, tau) = step(&st, &table).unwrap();
        assert_eq!(psi, [1, 0]);
        assert_relative_eq!(tau, 0.2, epsilon = 1e-12);
        assert_eq!(next.cell, [1, 0]);
        // head-on hit reverses the velocity
        assert_relative_eq!(next.base.boundary_angle, PI, epsilon = 1e-9);
    }

    #[test]
    fn translation_equivariance_bit_exact() {
        let table = BilliardTable::canonical(2);
        let mut rng = stream(20, 0);
        for _ in 0..200 {
            let mut st = sample_initial(&table, &mut rng);
            let (n0, psi0, tau0) = step(&st, &table).unwrap();
            st.cell = [-17, 4];
            let (n1, psi1, tau1) = step(&st, &table).unwrap();
            assert_eq!(psi0, psi1);
            assert_eq!(tau0.to_bits(), tau1.to_bits());
            assert_eq!(n0.base, n1.base);
            assert_eq!(n1.cell, [-17 + psi1[0], 4 + psi1[1]]);
        }
    }

    #[test]
    fn run_map_zero_and_conjugation() {
        let table = BilliardTable::canonical(2);
        let mut rng = stream(21, 0);
        let st = sample_initial(&table, &mut rng);
        let rec = run_map(&st, 0, &table).unwrap();
        assert!(rec.is_empty());
        let rec = run_map(&st, 300, &table).unwrap();
        assert!(!rec.truncated);
        for (k, s) in rec.states.iter().enumerate() {
            assert_eq!(
                s.cell,
                [rec.birkhoff[k][0], rec.birkhoff[k][1]],
                "start cell 0: cell_n = S̄_n"
            );
        }
        assert!(rec.flight_times.iter().all(|&t| t > 0.0));
    }

    #[test]
    fn d1_tube_psi_is_horizontal_only() {
        let table = BilliardTable::canonical(1);
        let mut rng = stream(22, 0);
        let st = sample_initial(&table, &mut rng);
        let rec = run_map(&st, 500, &table).unwrap();
        for s in &rec.states {
            assert_eq!(s.cell[1], 0, "d=1 cell label is one-dimensional");
        }
    }

    /// Full retrace error for a k-collision round trip.
    fn retrace_error(st: &ExtendedState, k: u64, table: &BilliardTable) -> Option<f64> {
        let fwd = run_map(st, k, table).unwrap();
        if fwd.truncated {
            return None;
        }
        let last = fwd.states.last().unwrap();
        let rev_start = ExtendedState { base: last.base.time_reverse(), cell: last.cell };
        let back = run_map(&rev_start, k, table).unwrap();
        if back.truncated {
            return None;
        }
        let end = back.states.last().unwrap();
        let want = st.base.time_reverse();
        let p_got = end.base.position(table);
        let p_want = want.position(table);
        let dx = p_got[0] - p_want[0] + (end.cell[0] - st.cell[0]) as f64;
        let dy = p_got[1] - p_want[1] + (end.cell[1] - st.cell[1]) as f64;
        Some((dx * dx + dy * dy).sqrt())
    }

    /// Error budget: full retrace within 1e-6·k holds up to the double
    /// precision horizon (k ≈ 10 for this table; roundoff is amplified by
    /// roughly e^{3.4} per retraced collision pair, so by k = 20 the
    /// round trip carries no precision at all). Beyond that horizon the
    /// testable form of time reversal is the per-step involution identity
    /// T(R(T(x))) = R(x), which carries no compounding.
    #[test]
    fn reversibility_within_budget() {
        let table = BilliardTable::canonical(2);
        let mut rng = stream(23, 0);
        for trial in 0..20 {
            let st = sample_initial(&table, &mut rng);
            for k in [1u64, 4, 7, 10] {
                if let Some(err) = retrace_error(&st, k, &table) {
                    assert!(
                        err < 1e-6 * k as f64,
                        "trial {trial} k={k}: retrace error {err:.3e}"
                    );
                }
            }
        }
    }

    #[test]
    fn reversibility_per_step_along_100_collisions() {
        let table = BilliardTable::canonical(2);
        let mut rng = stream(23, 999);
        let st = sample_initial(&table, &mut rng);
        let fwd = run_map(&st, 100, &table).unwrap();
        assert!(!fwd.truncated);
        let mut prev = st;
        for s in &fwd.states {
            let rev = ExtendedState { base: s.base.time_reverse(), cell: s.cell };
            let (got, _, _) = step(&rev, &table).unwrap();
            let want = prev.base.time_reverse();
            let p_got = got.base.position(&table);
            let p_want = want.position(&table);
            let dcell = [got.cell[0] - rev.cell[0], got.cell[1] - rev.cell[1]];
            let wcell = [prev.cell[0] - s.cell[0], prev.cell[1] - s.cell[1]];
            let dx = p_got[0] - p_want[0] + (dcell[0] - wcell[0]) as f64;
            let dy = p_got[1] - p_want[1] + (dcell[1] - wcell[1]) as f64;
            let err = (dx * dx + dy * dy).sqrt();
            assert!(err < 1e-10, "per-step reversal residual {err:.3e}");
            prev = *s;
        }
    }

    #[test]
    fn speed_preserved_along_orbit() {
        let table = BilliardTable::canonical(2);
        let mut rng = stream(24, 0);
        let st = sample_initial(&table, &mut rng);
        let mut runner = MapRunner::new(&st, &table);
        for _ in 0..2_000 {
            runner.step(&table).unwrap();
            assert!((runner.speed() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_initial_cosine_law() {
        let table = BilliardTable::canonical(2);
        let mut rng = stream(25, 0);
        let m = 200_000;
        let mut sum_cos = 0.0;
        for _ in 0..m {
            let st = sample_initial(&table, &mut rng);
            sum_cos += st.base.outgoing_angle.cos();
        }
        let mean = sum_cos / m as f64;
        // E[cos φ] = π/4; sd of cos φ ≈ 0.22
        let se = 0.22 / (m as f64).sqrt();
        assert!((mean - PI / 4.0).abs() < 4.0 * se, "mean {mean}");
    }

    #[test]
    fn invariance_of_mu_under_map() {
        let table = BilliardTable::canonical(2);
        let m = 100_000u64;
        let mut before_angle = Vec::with_capacity(m as usize);
        let mut after_angle = Vec::with_capacity(m as usize);
        let mut before_sin = Vec::with_capacity(m as usize);
        let mut after_sin = Vec::with_capacity(m as usize);
        for i in 0..m {
            let mut rng = stream(26, i);
            let st = sample_initial(&table, &mut rng);
            before_angle.push(st.base.boundary_angle);
            before_sin.push(st.base.outgoing_angle.sin());
            if let Ok((next, _, _)) = step(&st, &table) {
                after_angle.push(next.base.boundary_angle);
                after_sin.push(next.base.outgoing_angle.sin());
            }
        }
        let d1 = ks_statistic(&mut before_angle, &mut after_angle);
        let d2 = ks_statistic(&mut before_sin, &mut after_sin);
        assert!(d1 < 0.01, "boundary angle KS {d1}");
        assert!(d2 < 0.01, "sin(outgoing) KS {d2}");
    }

    #[test]
    fn flow_examples() {
        let table = BilliardTable::canonical(2);
        let mut rng = stream(27, 0);
        let st = sample_initial(&table, &mut rng);
        // t_max below the first flight time: zero counts everywhere
        let first_tau = step(&st, &table).unwrap().2;
        let rec = run_flow(&st, first_tau * 0.5, &table, &[[0, 0]], &[first_tau * 0.25])
            .unwrap();
        assert_eq!(rec.collisions, vec![0]);
        assert_eq!(rec.counts[0], vec![0]);

        // partition: watched + unwatched = total, and map/flow agree at
        // collision times
        let map_rec = run_map(&st, 400, &table).unwrap();
        let times: Vec<f64> = map_rec
            .flight_times
            .iter()
            .scan(0.0, |acc, t| {
                *acc += t;
                Some(*acc)
            })
            .collect();
        let t_max = times[times.len() - 1] + 0.5;
        let watched = vec![[0i64, 0i64], [1, 0], [-1, 0], [0, 1]];
        let cps: Vec<f64> = times.iter().step_by(37).copied().collect();
        let rec = run_flow(&st, t_max, &table, &watched, &cps).unwrap();
        for (i, &cp_t) in cps.iter().enumerate() {
            let k = times.iter().filter(|&&t| t <= cp_t).count() as u64;
            assert_eq!(rec.collisions[i], k, "collision count at t={cp_t}");
            let sum: u64 = rec.counts[i].iter().sum::<u64>() + rec.unwatched[i];
            assert_eq!(sum, k, "partition of collisions");
            // per-cell counts match the map record
            for (w, cell) in watched.iter().enumerate() {
                let direct = map_rec.states[..k as usize]
                    .iter()
                    .filter(|s| s.cell == *cell)
                    .count() as u64;
                assert_eq!(rec.counts[i][w], direct);
            }
        }
    }

    #[test]
    fn flow_collision_rate_matches_mean_free_path() {
        let table = BilliardTable::canonical(2);
        let t_max = 3_000.0;
        let mut total = 0u64;
        let trials = 40;
        for i in 0..trials {
            let mut rng = stream(28, i);
            let st = sample_initial(&table, &mut rng);
            let rec = run_flow(&st, t_max, &table, &[], &[t_max]).unwrap();
            total += rec.collisions[0];
        }
        let rate = total as f64 / (trials as f64 * t_max);
        let want = 1.0 / table.mean_free_path();
        assert!(
            (rate - want).abs() / want < 0.02,
            "rate {rate} vs 1/mean-free-path {want}"
        );
    }
}
