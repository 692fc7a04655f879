use nlfactor::{AnalyticLink, FactorMatrix, Link, ObservationSet, Sample};
use nlfactor_experiments::metrics::{rmse, x_range};
use proptest::prelude::*;

struct Constant(f64);

impl Link for Constant {
    fn value(&self, _x: f64) -> f64 {
        self.0
    }

    fn derivative(&self, _x: f64) -> f64 {
        0.0
    }
}

#[test]
fn perfect_predictions_score_zero() {
    let z = FactorMatrix::new(2, 2, 1, vec![1.0, 2.0, 3.0, -1.0]).unwrap();
    let samples = vec![
        Sample { row: 0, col: 0, y: 3.0 },
        Sample {
            row: 1,
            col: 1,
            y: -2.0,
        },
    ];
    let obs = ObservationSet::new(2, 2, samples).unwrap();
    assert_eq!(rmse(&obs, &z, &AnalyticLink::Identity), 0.0);
    assert_eq!(x_range(&obs, &z), (-2.0, 3.0));
}

#[test]
fn mean_predictor_on_two_points() {
    let z = FactorMatrix::zeros(1, 2, 1);
    let samples = vec![Sample { row: 0, col: 0, y: 0.0 }, Sample { row: 0, col: 1, y: 2.0 }];
    let obs = ObservationSet::new(1, 2, samples).unwrap();
    assert_eq!(rmse(&obs, &z, &Constant(1.0)), 1.0);
}

proptest! {
    #[test]
    fn rmse_ignores_sample_order(
        ys in prop::collection::vec(-1e3f64..1e3, 2..60),
        zs in prop::collection::vec(-2.0f64..2.0, 8),
        rot in 1usize..59,
    ) {
        let z = FactorMatrix::new(2, 2, 2, zs).unwrap();
        let samples: Vec<Sample> = ys.iter().enumerate().map(|(k, &y)| Sample { row: k % 2, col: (k / 2) % 2, y }).collect();
        let mut shuffled = samples.clone();
        shuffled.rotate_left(rot % samples.len());
        shuffled.reverse();
        let a = rmse(&ObservationSet::new(2, 2, samples).unwrap(), &z, &AnalyticLink::Sigmoid);
        let b = rmse(&ObservationSet::new(2, 2, shuffled).unwrap(), &z, &AnalyticLink::Sigmoid);
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }
}
