use nlfactor::objective::sample_points;
use nlfactor::{FactorMatrix, Link, ObservationSet};

/// `sqrt(mean (y_k - phi(x_k))^2)`. Squared errors are summed in sorted order,
/// so the value does not depend on sample order.
pub fn rmse(obs: &ObservationSet, z: &FactorMatrix, phi: &dyn Link) -> f64 {
    let mut sq: Vec<f64> = sample_points(obs, z)
        .iter()
        .zip(obs.samples())
        .map(|(&x, s)| {
            let e = s.y - phi.value(x);
            e * e
        })
        .collect();
    sq.sort_by(f64::total_cmp);
    (sq.iter().sum::<f64>() / sq.len() as f64).sqrt()
}

/// Smallest and largest entry of `X = U V^T` over the observed cells.
pub fn x_range(obs: &ObservationSet, z: &FactorMatrix) -> (f64, f64) {
    sample_points(obs, z)
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}
