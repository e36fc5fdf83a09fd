//! Central finite-difference gradients, used as an oracle for the analytic
//! backward passes.

/// Central difference of `f` at `x` with step `h`, one coordinate at a time.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest violation of `|a - n| <= rel * max(|a|, |n|) + abs`, as a ratio;
/// values `<= 1` mean every component is within tolerance.
pub fn worst_violation(analytic: &[f64], numeric: &[f64], rel: f64, abs: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (rel * a.abs().max(n.abs()) + abs))
        .fold(0.0, f64::max)
}

#[track_caller]
pub fn assert_grad_close(analytic: &[f64], numeric: &[f64], rel: f64, abs: f64) {
    let worst = worst_violation(analytic, numeric, rel, abs);
    if worst > 1.0 {
        let i = analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / (rel * a.abs().max(n.abs()) + abs))
            .enumerate()
            .fold((0, 0.0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc })
            .0;
        panic!(
            "gradient mismatch at {i}: analytic {} vs numeric {} (violation ratio {worst})",
            analytic[i], numeric[i]
        );
    }
}
