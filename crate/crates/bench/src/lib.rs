//! Shared fixtures for the benchmark targets.

/// Deterministic sample on [-1, 1]: smooth trend plus a period-11 ripple, so
/// benchmarks never depend on an RNG.
pub fn synthetic(n: usize) -> (Vec<f64>, Vec<f64>) {
    let xs: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
    let ys: Vec<f64> = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let ripple = 0.15 * ((i % 11) as f64 - 5.0) / 5.0;
            (3.0 * x).sin() * (-x * x).exp() + ripple
        })
        .collect();
    (xs, ys)
}
