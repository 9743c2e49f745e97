//! Gamma function via the Lanczos approximation (g = 7, 9 terms).
//!
//! Relative error is below 1e-13 on [0.5, 30], which covers every moment
//! formula in this crate; accuracy is pinned by tests against externally
//! computed references.

use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Γ(x) for x > 0 (reflection handles x in (0, 0.5)).
pub fn gamma(x: f64) -> f64 {
    assert!(x > 0.0, "gamma requires a positive argument, got {x}");
    if x < 0.5 {
        // Γ(x)Γ(1-x) = π / sin(πx)
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    let z = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * acc
}

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma requires a positive argument, got {x}");
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// ln n! (exact table for small n, ln Γ otherwise).
pub fn ln_factorial(n: u64) -> f64 {
    const TABLE: [f64; 11] = [
        1.0, 1.0, 2.0, 6.0, 24.0, 120.0, 720.0, 5040.0, 40320.0, 362880.0, 3628800.0,
    ];
    if n < TABLE.len() as u64 {
        TABLE[n as usize].ln()
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn matches_references_to_1e12() {
        // reference values computed independently with IEEE-correct libm
        let refs: [(f64, f64); 10] = [
            (0.5, 1.772_453_850_905_515_9),
            (1.0, 1.0),
            (4.0 / 3.0, 0.892_979_511_569_249_5),
            (1.5, 0.886_226_925_452_758),
            (5.0 / 3.0, 0.902_745_292_950_933_6),
            (2.5, 1.329_340_388_179_137_2),
            (7.0 / 3.0, 1.190_639_348_758_999),
            (7.5, 1_871.254_305_797_788_2),
            (12.25, 73_711_509.046_769_96),
            (19.5, 2.772_432_298_633_372e16),
        ];
        for &(x, want) in &refs {
            assert!(
                rel(gamma(x), want) < 1e-12,
                "gamma({x}) = {}, want {want}",
                gamma(x)
            );
        }
    }

    #[test]
    fn integer_factorials_exact_to_1e13() {
        let mut fact = 1.0;
        for n in 1..=20u64 {
            fact *= n as f64;
            assert!(rel(gamma(n as f64 + 1.0), fact) < 1e-13, "n={n}");
        }
    }

    #[test]
    fn ln_gamma_consistent_with_gamma() {
        for i in 1..=200 {
            let x = 0.1 * i as f64;
            assert!(
                (ln_gamma(x) - gamma(x).ln()).abs() < 1e-11 * (1.0 + ln_gamma(x).abs()),
                "x={x}"
            );
        }
        assert!((ln_gamma(101.0) - 363.739_375_555_563_47).abs() < 1e-10);
    }

    #[test]
    fn ln_factorial_matches() {
        assert_eq!(ln_factorial(0), 0.0);
        assert!((ln_factorial(5) - 120f64.ln()).abs() < 1e-14);
        assert!((ln_factorial(50) - ln_gamma(51.0)).abs() < 1e-12);
    }
}
