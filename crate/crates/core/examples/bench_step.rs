use lorentz_core::geometry::BilliardTable;
use lorentz_core::observables::ObservableSpec;
use lorentz_core::stats::billiard_ensemble;
use std::time::Instant;

fn main() {
    for dim in [1u8, 2] {
        let table = BilliardTable::canonical(dim);
        let lt = ObservableSpec::local_time(dim);
        let t0 = Instant::now();
        let n = 10_000u64;
        let traj = 2_000u64;
        let ens = billiard_ensemble(&table, &lt, None, n, &[n], traj, 123);
        let dt = t0.elapsed().as_secs_f64();
        let total = (n * traj) as f64;
        println!(
            "d={dim}: {:.1} ns/collision  ({:.2} s for {:.0e} collisions, {} truncated)",
            dt / total * 1e9, dt, total, ens.truncated
        );
    }
}
