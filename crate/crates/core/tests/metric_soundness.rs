mod common;

use common::{apl_reference, gaussian_expectation, quadrature_inner};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use taan::apl::{AplCoordinates, BasisGrid};
use taan::metrics::{build_gram, distance_matrix, distance_sq, inner_product, norm, GaussianMixture, GramCache, MixtureComponent};
use taan::moments::{moment_b0_sq, moment_b0b, moment_bb, Breakpoint, GaussianParams};
use taan::Matrix;

fn mixture_strategy() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((0.1f64..1.0, -2.0f64..2.0, 0.3f64..2.5), 1..4).prop_map(|raw| {
        let total: f64 = raw.iter().map(|r| r.0).sum();
        let mut comps: Vec<(f64, f64, f64)> = raw.iter().map(|&(w, m, s)| (w / total, m, s)).collect();
        // Force the weights to sum to one exactly.
        let rest: f64 = comps[1..].iter().map(|c| c.0).sum();
        comps[0].0 = 1.0 - rest;
        comps
    })
}

fn mixture(comps: &[(f64, f64, f64)]) -> GaussianMixture {
    GaussianMixture::new(
        comps
            .iter()
            .map(|&(weight, mu, sigma)| MixtureComponent { weight, mu, sigma })
            .collect(),
    )
    .unwrap()
}

/// The Gram matrix of the functions `B_0, B_1, ..., B_M` under the measure.
fn full_gram(cache: &GramCache) -> DMatrix<f64> {
    let m = cache.basis_count();
    DMatrix::from_fn(m + 1, m + 1, |i, j| match (i, j) {
        (0, 0) => cache.relu_moment(),
        (0, j) => cache.relu_cross()[j - 1],
        (i, 0) => cache.relu_cross()[i - 1],
        (i, j) => cache.gram()[(i - 1, j - 1)],
    })
}

fn coords(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gram_is_positive_semidefinite(m in 1usize..40, comps in mixture_strategy()) {
        let grid = BasisGrid::uniform(m, -2.0, 2.0).unwrap();
        let cache = build_gram(&grid, &mixture(&comps));
        let g = full_gram(&cache);
        prop_assert!((&g - g.transpose()).abs().max() == 0.0);
        let min = SymmetricEigen::new(g).eigenvalues.min();
        prop_assert!(min >= -1e-10, "min eigenvalue {min}");
    }

    #[test]
    fn inner_product_laws(comps in mixture_strategy(), a in coords(16), b in coords(16), c in coords(16)) {
        let grid = BasisGrid::uniform(16, -2.0, 2.0).unwrap();
        let cache = build_gram(&grid, &mixture(&comps));
        let ab = inner_product(&a, &b, &cache).unwrap();
        let (na, nb) = (norm(&a, &cache).unwrap(), norm(&b, &cache).unwrap());
        prop_assert!(ab.abs() <= na * nb * (1.0 + 1e-9) + 1e-12);
        prop_assert!((ab - inner_product(&b, &a, &cache).unwrap()).abs() <= 1e-12 * (1.0 + ab.abs()));

        let d = distance_sq(&a, &b, &cache).unwrap();
        let polar = na * na + nb * nb - 2.0 * ab;
        prop_assert!((d - polar).abs() <= 1e-9 * (1.0 + na * na + nb * nb));
        prop_assert!(d >= 0.0);

        let dab = d.sqrt();
        let dbc = distance_sq(&b, &c, &cache).unwrap().sqrt();
        let dac = distance_sq(&a, &c, &cache).unwrap().sqrt();
        prop_assert!(dac <= dab + dbc + 1e-9);
        prop_assert_eq!(distance_sq(&a, &a, &cache).unwrap(), 0.0);
    }

    #[test]
    fn mixture_products_are_weighted_sums(comps in mixture_strategy(), a in coords(8), b in coords(8)) {
        let grid = BasisGrid::uniform(8, -2.0, 2.0).unwrap();
        let whole = inner_product(&a, &b, &build_gram(&grid, &mixture(&comps))).unwrap();
        let parts: f64 = comps
            .iter()
            .map(|&(w, mu, s)| {
                let single = build_gram(&grid, &GaussianMixture::single(GaussianParams::new(mu, s).unwrap()));
                w * inner_product(&a, &b, &single).unwrap()
            })
            .sum();
        prop_assert!((whole - parts).abs() <= 1e-10 * (1.0 + whole.abs()));
    }

    #[test]
    fn distance_matrix_is_symmetric_with_zero_diagonal(rows in prop::collection::vec(coords(8), 2..6)) {
        let grid = BasisGrid::uniform(8, -2.0, 2.0).unwrap();
        let cache = build_gram(&grid, &GaussianMixture::standard_normal());
        let alpha = AplCoordinates::new(Matrix::from_rows(&rows).unwrap()).unwrap();
        let d = distance_matrix(&alpha, &cache).unwrap();
        for i in 0..rows.len() {
            prop_assert_eq!(d[(i, i)], 0.0);
            for j in 0..rows.len() {
                prop_assert_eq!(d[(i, j)], d[(j, i)]);
                prop_assert!((d[(i, j)] - distance_sq(&rows[i], &rows[j], &cache).unwrap()).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn closed_form_moments_match_simpson() {
    let mut worst = 0.0_f64;
    for mu in [-3.0, -1.0, 0.0, 0.7, 3.0] {
        for sigma in [0.3, 1.0, 3.0] {
            let g = GaussianParams::new(mu, sigma).unwrap();
            let relu2 = gaussian_expectation(|x| x.max(0.0).powi(2), mu, sigma, &[0.0], 4000);
            worst = worst.max((moment_b0_sq(g) - relu2).abs());
            for bi in [-2.0, -0.4, 0.9, 3.0] {
                let hinge = |b: f64| move |x: f64| (b - x).max(0.0);
                let v = gaussian_expectation(|x| x.max(0.0) * hinge(bi)(x), mu, sigma, &[0.0, bi], 4000);
                worst = worst.max((moment_b0b(Breakpoint::new(bi).unwrap(), g) - v).abs());
                for bj in [-1.1, 0.2, 2.5] {
                    let v = gaussian_expectation(|x| hinge(bi)(x) * hinge(bj)(x), mu, sigma, &[bi, bj], 4000);
                    let closed = moment_bb(Breakpoint::new(bi).unwrap(), Breakpoint::new(bj).unwrap(), g);
                    worst = worst.max((closed - v).abs());
                }
            }
        }
    }
    assert!(worst < 1e-8, "worst {worst}");
}

#[test]
fn standard_normal_relu_hinge_value() {
    // E[(1 - X)^2; X < 1] for standard normal X is 2 Phi(1) + phi(1).
    let g = GaussianParams::standard();
    let one = Breakpoint::new(1.0).unwrap();
    assert!((moment_bb(one, one, g) - 1.924_660_2).abs() < 1e-7);
    let oracle = gaussian_expectation(|x| (1.0 - x).max(0.0).powi(2), 0.0, 1.0, &[1.0], 4000);
    assert!((moment_bb(one, one, g) - oracle).abs() < 1e-10);
}

#[test]
fn inner_product_matches_pointwise_quadrature() {
    let grid = BasisGrid::uniform(6, -2.0, 2.0).unwrap();
    let comps = [(0.3, -0.5, 0.7), (0.7, 1.0, 1.4)];
    let cache = build_gram(&grid, &mixture(&comps));
    let a = [0.3, -0.2, 0.5, 0.1, -0.7, 0.25];
    let b = [-0.4, 0.6, 0.05, 0.3, 0.2, -0.15];
    let expect = quadrature_inner(&a, &b, grid.breakpoints(), &comps);
    assert!((inner_product(&a, &b, &cache).unwrap() - expect).abs() < 1e-9);
    assert!(apl_reference(0.5, &a, grid.breakpoints()).is_finite());
}

#[test]
fn mismatched_lengths_are_errors() {
    let grid = BasisGrid::uniform(4, -2.0, 2.0).unwrap();
    let cache = build_gram(&grid, &GaussianMixture::standard_normal());
    assert!(inner_product(&[1.0; 3], &[1.0; 4], &cache).is_err());
    assert!(distance_sq(&[1.0; 4], &[1.0; 5], &cache).is_err());
}
