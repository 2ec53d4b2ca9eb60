use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topogbm::topology::{
    compute_persistence, compute_persistence_naive, latent_grid_diagram, matched_persistence_mse, wasserstein2, CubicalFiltration, PersistenceDiagram,
};

fn sorted(d: &PersistenceDiagram) -> Vec<(u8, u64, u64)> {
    let mut v: Vec<_> = d.points.iter().map(|p| (p.dim, p.birth.to_bits(), p.death.to_bits())).collect();
    v.sort_unstable();
    v
}

#[test]
fn clearing_matches_plain_reduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for ext in [vec![5, 5, 5], vec![3, 6, 4], vec![9, 9], vec![12]] {
        for _ in 0..10 {
            let n = ext.iter().product();
            // Coarse values force ties between cells.
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            let f = CubicalFiltration::sublevel(ext.clone(), values);
            assert_eq!(sorted(&compute_persistence(&f)), sorted(&compute_persistence_naive(&f)), "extents {ext:?}");
        }
    }
}

#[test]
fn one_essential_component_per_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let values: Vec<f64> = (0..64).map(|_| rng.random()).collect();
        let d = compute_persistence(&CubicalFiltration::sublevel(vec![4, 4, 4], values.clone()));
        assert_eq!(d.essential_count(0), 1);
        assert_eq!(d.essential_count(1) + d.essential_count(2), 0);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(d.points.iter().any(|p| p.is_essential() && p.birth == min));
    }
}

#[test]
fn superlevel_is_sublevel_of_negation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let values: Vec<f64> = (0..100).map(|_| rng.random()).collect();
    let sup = compute_persistence(&CubicalFiltration::superlevel(vec![10, 10], values.clone()));
    let sub = compute_persistence(&CubicalFiltration::sublevel(vec![10, 10], values.iter().map(|v| -v).collect()));
    let mut a: Vec<_> = sup.points.iter().map(|p| (p.dim, p.persistence().to_bits())).collect();
    let mut b: Vec<_> = sub.points.iter().map(|p| (p.dim, p.persistence().to_bits())).collect();
    a.sort_unstable();
    b.sort_unstable();
    assert_eq!(a, b);
}

#[test]
fn latent_grid_annulus_has_a_loop() {
    let mut z = vec![1.0; 256];
    for y in 4..12 {
        for x in 4..12 {
            if !(6..10).contains(&y) || !(6..10).contains(&x) {
                z[y * 16 + x] = 0.0;
            }
        }
    }
    let (d, _) = latent_grid_diagram(&z).unwrap();
    assert_eq!(d.betti_at(0.5)[..2], [1, 1]);
}

fn pairs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0f64..1.0, 0.0f64..1.0).prop_map(|(b, p)| (b, b + p)), 0..6)
}

fn diagram(points: &[(f64, f64)]) -> PersistenceDiagram {
    PersistenceDiagram::from_triples(&points.iter().map(|&(b, d)| (b, d, 0)).collect::<Vec<_>>())
}

proptest! {
    #[test]
    fn wasserstein_is_a_metric(a in pairs(), b in pairs(), c in pairs()) {
        let (da, db, dc) = (diagram(&a), diagram(&b), diagram(&c));
        prop_assert_eq!(wasserstein2(&da, &da, 0), 0.0);
        let ab = wasserstein2(&da, &db, 0);
        prop_assert!((ab - wasserstein2(&db, &da, 0)).abs() <= 1e-12);
        prop_assert!(wasserstein2(&da, &dc, 0) <= ab + wasserstein2(&db, &dc, 0) + 1e-12);
    }

    #[test]
    fn wasserstein_bounded_by_diagonal_matching(a in pairs(), b in pairs()) {
        let half: f64 = a.iter().chain(&b).map(|(x, y)| (y - x).powi(2) / 2.0).sum();
        prop_assert!(wasserstein2(&diagram(&a), &diagram(&b), 0) <= half.sqrt() + 1e-12);
    }

    #[test]
    fn matched_mse_nonnegative(a in pairs(), b in pairs()) {
        let m = matched_persistence_mse(&diagram(&a), &diagram(&b), 0);
        prop_assert!(m >= 0.0 && m.is_finite());
    }

    #[test]
    fn betti_invariant_under_monotone_relabelling(values in prop::collection::vec(0u8..5, 27)) {
        let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        let w: Vec<f64> = values.iter().map(|&x| (x as f64).powi(3) + 10.0).collect();
        let dv = compute_persistence(&CubicalFiltration::sublevel(vec![3, 3, 3], v));
        let dw = compute_persistence(&CubicalFiltration::sublevel(vec![3, 3, 3], w));
        for level in 0..5 {
            prop_assert_eq!(dv.betti_at(level as f64), dw.betti_at((level as f64).powi(3) + 10.0));
        }
    }
}
