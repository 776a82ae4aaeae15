/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F>(f: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let plus = f(&p);
            p[i] = orig - h;
            let minus = f(&p);
            p[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Largest relative error `|a - n| / max(|a|, |n|, floor)` across coordinates.
///
/// The floor keeps coordinates whose true gradient is ~0 from blowing up the
/// ratio on finite-difference noise.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    const FLOOR: f64 = 1e-6;
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR))
        .fold(0.0, f64::max)
}

#[cfg(test)]
pub(crate) fn assert_grad_close(analytic: &[f64], numeric: &[f64], tol: f64) {
    let err = max_relative_error(analytic, numeric);
    assert!(err <= tol, "max relative gradient error {err:e} exceeds {tol:e}");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let g = fd_gradient(|p| p[0] * p[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_has_zero_gradient() {
        assert_eq!(fd_gradient(|_| 4.2, &[1.0, -2.0, 3.0], 1e-5), vec![0.0; 3]);
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(max_relative_error(&[0.0], &[1e-12]), 1e-6);
        assert!((max_relative_error(&[1.0], &[1.1]) - 0.1 / 1.1).abs() < 1e-12);
    }
}
