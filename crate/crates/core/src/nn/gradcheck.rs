use rand::{Rng, RngExt};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small absolute floor on the denominator, so that
/// coordinates with vanishing gradients are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares the analytic gradient returned by `loss_fn` against central
/// differences on `samples` randomly chosen coordinates. Returns the largest
/// relative error.
pub fn grad_check<F, R>(mut loss_fn: F, params: &[f64], samples: usize, rng: &mut R) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    R: Rng + ?Sized,
{
    let (_, analytic) = loss_fn(params);
    assert_eq!(analytic.len(), params.len(), "gradient length mismatch");
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let i = rng.random_range(0..params.len());
        let orig = probe[i];
        probe[i] = orig + FD_STEP;
        let up = loss_fn(&probe).0;
        probe[i] = orig - FD_STEP;
        let down = loss_fn(&probe).0;
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}
