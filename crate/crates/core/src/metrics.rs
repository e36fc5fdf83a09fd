//! Trace agreement metrics.

use crate::error::{Error, Result};

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!(
            "trace lengths differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if truth.len() < 2 {
        return Err(Error::invalid("traces need at least 2 samples"));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric input".into()));
    }
    Ok(())
}

/// `100 · RMSE / (max(truth) − min(truth))`, in percent.
pub fn nrmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let (lo, hi) = truth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo <= 0.0 {
        return Err(Error::DegenerateRange("ground-truth trace is constant".into()));
    }
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / truth.len() as f64;
    Ok(100.0 * mse.sqrt() / (hi - lo))
}

/// Squared Pearson correlation.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let n = truth.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::DegenerateRange("correlation of a constant trace".into()));
    }
    Ok((sxy * sxy / (sxx * syy)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nrmse_examples() {
        assert_eq!(nrmse(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap(), 0.0);
        assert!((nrmse(&[0.1, 0.9], &[0.0, 1.0]).unwrap() - 10.0).abs() < 1e-12);
        assert!(matches!(nrmse(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::DegenerateRange(_))));
        assert!(nrmse(&[1.0], &[1.0]).is_err());
        assert!(nrmse(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn r_squared_examples() {
        let t = [0.0, 1.0, 2.0, 5.0];
        let p: Vec<f64> = t.iter().map(|v| -3.0 * v + 2.0).collect();
        assert!((r_squared(&p, &t).unwrap() - 1.0).abs() < 1e-12);
        // Zero covariance.
        assert!(r_squared(&[1.0, -1.0, -1.0, 1.0], &[0.0, 1.0, 2.0, 3.0]).unwrap().abs() < 1e-15);
        assert!(r_squared(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    fn traces() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0..100.0f64, n),
                prop::collection::vec(-100.0..100.0f64, n),
            )
        })
    }

    proptest! {
        #[test]
        fn nrmse_ignores_common_affine_rescaling((p, t) in traces(), a in 0.1..10.0f64, b in -50.0..50.0f64) {
            prop_assume!(nrmse(&p, &t).is_ok());
            let f = |v: &Vec<f64>| v.iter().map(|x| a * x + b).collect::<Vec<_>>();
            let base = nrmse(&p, &t).unwrap();
            prop_assert!((nrmse(&f(&p), &f(&t)).unwrap() - base).abs() <= 1e-9 * base.max(1.0));
        }

        #[test]
        fn r_squared_is_symmetric_and_bounded((p, t) in traces()) {
            prop_assume!(r_squared(&p, &t).is_ok());
            let r = r_squared(&p, &t).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!((r - r_squared(&t, &p).unwrap()).abs() < 1e-12);
        }
    }
}
