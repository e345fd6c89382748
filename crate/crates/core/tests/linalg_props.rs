use physadv::linalg::{self, Matrix, DEFAULT_PIVOT_TOL};
use physadv::Error;
use proptest::prelude::*;

/// Small integer entries make rank deficiency common; the extra rows are
/// combinations of earlier ones so some instances have dependent rows.
fn constraint_matrix() -> impl Strategy<Value = Matrix> {
    (1usize..=5, 2usize..=8)
        .prop_flat_map(|(k, r)| {
            (
                prop::collection::vec(-3i32..=3, k * r),
                prop::collection::vec(-2i32..=2, 2 * k),
                Just((k, r)),
            )
        })
        .prop_map(|(base, mix, (k, r))| {
            let mut rows: Vec<Vec<f64>> = base
                .chunks(r)
                .map(|c| c.iter().map(|&v| v as f64).collect())
                .collect();
            let a = &rows[mix[0].unsigned_abs() as usize % k];
            let b = &rows[mix[1].unsigned_abs() as usize % k];
            let combo: Vec<f64> = a
                .iter()
                .zip(b)
                .map(|(x, y)| mix[2 % mix.len()] as f64 * x + mix[3 % mix.len()] as f64 * y)
                .collect();
            rows.push(combo);
            Matrix::from_rows(&rows).unwrap()
        })
}

fn real_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-10.0f64..10.0, rows * cols)
        .prop_map(move |data| Matrix::new(rows, cols, data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dependency_basis_spans_null_space(phi in constraint_matrix()) {
        let r = phi.cols();
        let rank = linalg::rank(&phi, DEFAULT_PIVOT_TOL);
        match linalg::dependency(&phi, DEFAULT_PIVOT_TOL) {
            Ok(dep) => {
                let basis = dep.null_space_basis();
                prop_assert_eq!(basis.cols(), r - rank);
                prop_assert_eq!(dep.independent.len() + dep.dependent.len(), r);
                for j in 0..basis.cols() {
                    let v = phi.matvec(&basis.column(j)).unwrap();
                    prop_assert!(linalg::norm_inf(&v) < 1e-9, "column {} gives {:?}", j, v);
                }
                // Basis columns are independent: the identity sits on the free rows.
                let free = basis.select_rows(&dep.independent).unwrap();
                prop_assert_eq!(free, Matrix::identity(r - rank));
            }
            Err(Error::DegenerateConstraint { rank: got }) => {
                prop_assert_eq!(got, r);
                prop_assert_eq!(rank, r);
            }
            Err(Error::EmptyConstraint) => prop_assert_eq!(rank, 0),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn null_space_combinations_satisfy_constraint(
        phi in constraint_matrix(),
        coeffs in prop::collection::vec(-5.0f64..5.0, 8),
    ) {
        if let Ok(dep) = linalg::dependency(&phi, DEFAULT_PIVOT_TOL) {
            let basis = dep.null_space_basis();
            let mut x = vec![0.0; basis.rows()];
            for (j, coeff) in coeffs.iter().enumerate().take(basis.cols()) {
                for (i, v) in basis.column(j).iter().enumerate() {
                    x[i] += coeff * v;
                }
            }
            let v = phi.matvec(&x).unwrap();
            prop_assert!(linalg::norm_inf(&v) < 1e-9 * (1.0 + linalg::norm_inf(&x)));
        }
    }

    #[test]
    fn rref_is_idempotent(m in (1usize..6, 1usize..8).prop_flat_map(|(r, c)| real_matrix(r, c))) {
        let (once, pivots) = linalg::rref(&m, DEFAULT_PIVOT_TOL);
        let (twice, pivots2) = linalg::rref(&once, DEFAULT_PIVOT_TOL);
        prop_assert_eq!(pivots, pivots2);
        prop_assert!(twice.sub(&once).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn rescaling_rows_keeps_the_decomposition(phi in constraint_matrix(), s in 0.01f64..100.0) {
        let a = linalg::dependency(&phi, DEFAULT_PIVOT_TOL);
        let b = linalg::dependency(&phi.scale(s), DEFAULT_PIVOT_TOL);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(&a.independent, &b.independent);
                prop_assert!(a.dependency.sub(&b.dependency).unwrap().max_abs() < 1e-9);
            }
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }

    #[test]
    fn least_squares_residual_is_orthogonal(
        h in real_matrix(12, 6),
        z in prop::collection::vec(-100.0f64..100.0, 12),
        w in prop::collection::vec(0.5f64..4.0, 12),
    ) {
        prop_assume!(linalg::rank(&h, DEFAULT_PIVOT_TOL) == 6);
        let w = Matrix::diagonal(&w).unwrap();
        let x = linalg::least_squares(&h, &w, &z).unwrap();
        let hx = h.matvec(&x).unwrap();
        let r: Vec<f64> = z.iter().zip(&hx).map(|(a, b)| a - b).collect();
        let wr = w.matvec(&r).unwrap();
        let g = h.transpose().matvec(&wr).unwrap();
        let scale = h.max_abs() * w.max_abs() * (1.0 + linalg::norm2(&z));
        prop_assert!(linalg::norm_inf(&g) < 1e-9 * scale, "Hᵀ W r = {:?}", g);
    }

    #[test]
    fn exact_measurements_recover_the_state(
        h in real_matrix(12, 6),
        x in prop::collection::vec(-50.0f64..50.0, 6),
    ) {
        prop_assume!(linalg::rank(&h, DEFAULT_PIVOT_TOL) == 6);
        let z = h.matvec(&x).unwrap();
        let got = linalg::least_squares(&h, &Matrix::identity(12), &z).unwrap();
        for (a, b) in got.iter().zip(&x) {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
