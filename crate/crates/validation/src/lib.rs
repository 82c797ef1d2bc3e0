//! Shared helpers for the acceptance suite in `tests/acceptance.rs`.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;

/// Writes `CRITERION <id> PASS|FAIL <detail>` straight to stderr so the line
/// survives the test harness's output capture.
pub fn report(id: &str, pass: bool, detail: &str) {
    let line = format!("CRITERION {id} {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

/// Row-stochastic matrix with entries bounded away from zero.
pub fn random_stochastic(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(rows, cols, |_, _| 0.05 + rng.random::<f64>());
    for mut row in m.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    m
}
