/// Step used for central differences.
pub const FD_STEP: f64 = 1e-4;

/// Relative error with a floor on the reference magnitude, so components
/// whose true gradient is ~0 are judged on absolute error instead.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-3)
}

/// Compare the analytic gradient of `loss_fn` at `params` with central
/// differences and return the largest relative error over all coordinates.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64]) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss_fn(params);
    assert_eq!(analytic.len(), params.len(), "gradient length");
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        probe[i] = params[i] + FD_STEP;
        let up = loss_fn(&probe).0;
        probe[i] = params[i] - FD_STEP;
        let down = loss_fn(&probe).0;
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}
