//! Fixed-step explicit integrators for small autonomous systems.

/// One classical fourth-order Runge-Kutta step of `y' = f(y)`.
pub fn rk4_step<const N: usize, F>(f: F, y: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let axpy = |a: &[f64; N], k: &[f64; N], s: f64| -> [f64; N] {
        let mut out = *a;
        for (o, ki) in out.iter_mut().zip(k) {
            *o += s * ki;
        }
        out
    };
    let k1 = f(y);
    let k2 = f(&axpy(y, &k1, 0.5 * h));
    let k3 = f(&axpy(y, &k2, 0.5 * h));
    let k4 = f(&axpy(y, &k3, h));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// One forward Euler step of `y' = f(y)`.
pub fn euler_step<const N: usize, F>(f: F, y: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let d = f(y);
    let mut out = *y;
    for (o, di) in out.iter_mut().zip(d) {
        *o += h * di;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential_decay() {
        let f = |y: &[f64; 1]| [-y[0]];
        let mut y = [1.0];
        for _ in 0..100 {
            y = rk4_step(f, &y, 0.01);
        }
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn rk4_is_fourth_order_on_oscillator() {
        let f = |y: &[f64; 2]| [y[1], -y[0]];
        let err = |h: f64| {
            let mut y = [1.0, 0.0];
            let n = (1.0 / h).round() as usize;
            for _ in 0..n {
                y = rk4_step(f, &y, h);
            }
            (y[0] - 1.0f64.cos()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 1.5, "ratio {ratio}");
    }

    #[test]
    fn euler_is_first_order() {
        let f = |y: &[f64; 1]| [-y[0]];
        let err = |h: f64| {
            let mut y = [1.0];
            for _ in 0..(1.0 / h).round() as usize {
                y = euler_step(f, &y, h);
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.01) / err(0.005);
        assert!((ratio - 2.0).abs() < 0.05, "ratio {ratio}");
    }
}
