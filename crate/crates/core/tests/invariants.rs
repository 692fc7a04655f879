use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nlfactor::diagnostics::procrustes_align;
use nlfactor::kernel::{gram_matrix, grid_slopes, project_monotone};
use nlfactor::linalg::min_eigenvalue;
use nlfactor::model::random_orthonormal;
use nlfactor::objective::{grad_z, loss, DataScale, ObjectiveParams};
use nlfactor::solver::project_incoherent;
use nlfactor::{FactorMatrix, KernelSpec, Link, LinkFunction, MonotoneBounds, ObservationSet, ProjectionMode, Sample};

fn factor(n: usize, t: usize, r: usize) -> impl Strategy<Value = FactorMatrix> {
    prop::collection::vec(-2.0f64..2.0, (n + t) * r).prop_map(move |d| FactorMatrix::new(n, t, r, d).unwrap())
}

fn instance() -> impl Strategy<Value = (ObservationSet, FactorMatrix)> {
    (1usize..6, 1usize..6, 1usize..4).prop_flat_map(|(n, t, r)| {
        let cells = prop::collection::vec((0..n, 0..t, -1.0f64..1.0), 1..15);
        (factor(n, t, r), cells).prop_map(move |(z, cells)| {
            let samples = cells.into_iter().map(|(row, col, y)| Sample { row, col, y }).collect();
            (ObservationSet::new(n, t, samples).unwrap(), z)
        })
    })
}

fn dictionary(h: f64) -> impl Strategy<Value = LinkFunction> {
    (prop::collection::vec((-3.0f64..3.0, -1.0f64..1.0), 1..8), -1.0f64..1.0).prop_map(move |(atoms, offset)| {
        let (c, b): (Vec<f64>, Vec<f64>) = atoms.into_iter().unzip();
        LinkFunction::from_atoms(KernelSpec::gaussian(h).unwrap(), &c, &b, offset).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_matrices_are_psd(points in prop::collection::vec(-5.0f64..5.0, 1..25), h in 0.2f64..3.0) {
        for kernel in [KernelSpec::gaussian(h).unwrap(), KernelSpec::laplacian(h).unwrap()] {
            let g = gram_matrix(&kernel, &points);
            prop_assert!(min_eigenvalue(&g) >= -1e-10 * points.len() as f64);
        }
    }

    #[test]
    fn rkhs_norm_is_nonnegative(phi in dictionary(0.8)) {
        prop_assert!(phi.rkhs_norm_sq() >= -1e-12);
    }

    #[test]
    fn loss_and_gradient_are_rotation_equivariant(
        (obs, z) in instance(),
        phi in dictionary(1.0),
        seed in any::<u64>(),
        sum in any::<bool>(),
    ) {
        let scale = if sum { DataScale::Sum } else { DataScale::Mean };
        let p = ObjectiveParams::new(0.5, 0.1).unwrap().with_scale(scale);
        let rot = random_orthonormal(z.rank(), z.rank(), &mut ChaCha8Rng::seed_from_u64(seed));
        let zr = z.mul_right(&rot);
        let (a, b) = (loss(&obs, &z, &phi, &p).total, loss(&obs, &zr, &phi, &p).total);
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        // grad(Z R) = grad(Z) R
        let g = grad_z(&obs, &z, &phi, &p).mul_right(&rot);
        let gr = grad_z(&obs, &zr, &phi, &p);
        for (x, y) in g.as_slice().iter().zip(gr.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn procrustes_recovers_rotations(z in factor(4, 5, 3), seed in any::<u64>()) {
        let rot = random_orthonormal(3, 3, &mut ChaCha8Rng::seed_from_u64(seed));
        let a = procrustes_align(&z.mul_right(&rot), &z).unwrap();
        prop_assert!(a.delta_fro <= 1e-10 * z.frobenius_norm().max(1.0));
    }

    #[test]
    fn incoherent_projection_is_feasible_and_idempotent(z in factor(6, 4, 2), frac in 0.05f64..1.5) {
        let beta = (z.max_row_norm() * frac).max(1e-6);
        let p = project_incoherent(&z, beta);
        prop_assert!(p.max_row_norm() <= beta * (1.0 + 1e-12));
        let again = project_incoherent(&p, beta);
        prop_assert_eq!(again.as_slice(), p.as_slice());
        for j in 0..z.rows() {
            if z.row_norm(j) <= beta {
                prop_assert_eq!(z.row(j), p.row(j));
            }
        }
    }

    #[test]
    fn monotone_projection_lands_in_the_slope_band(
        phi in dictionary(1.0),
        xi in 0.05f64..0.5,
        big_xi in 1.0f64..4.0,
        qp in any::<bool>(),
    ) {
        let mode = if qp { ProjectionMode::Qp } else { ProjectionMode::SlopeClip };
        let bounds = MonotoneBounds::new(xi, big_xi, 9, -3.0, 3.0).unwrap();
        let kernel = KernelSpec::gaussian(1.2 * bounds.spacing()).unwrap();
        let phi = LinkFunction::from_atoms(kernel, phi.centers(), phi.coeffs(), phi.offset()).unwrap();
        let once = project_monotone(&phi, &bounds, mode).unwrap();
        for s in grid_slopes(&once, &bounds) {
            prop_assert!(s >= xi - 1e-9 && s <= big_xi + 1e-9, "slope {}", s);
        }
        let twice = project_monotone(&once, &bounds, mode).unwrap();
        for g in bounds.grid() {
            prop_assert!((once.value(g) - twice.value(g)).abs() <= 1e-9);
        }
    }
}
