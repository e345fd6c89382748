use physadv::attack::{self, AttackConfig, Classifier};
use physadv::constraints::{self, ConstraintKind, ConstraintSet, MeasurementVector};
use physadv::linalg::{self, Matrix};
use physadv::nn::{LayerSpec, Network, NetworkSpec, ATTACK};
use physadv::water::{self, WaterParams};
use physadv::Result;
use proptest::prelude::*;
use std::sync::OnceLock;

fn small_net(d: usize, seed: u64) -> Network {
    Network::build(NetworkSpec {
        input_dim: d,
        layers: vec![LayerSpec::relu(8), LayerSpec::relu(6), LayerSpec::softmax(2)],
        seed,
    })
    .unwrap()
}

/// Equality instance: dimension, compromised set and a Φ with fewer rows
/// than compromised columns (so it never has full column rank).
fn equality_instance() -> impl Strategy<Value = (usize, Vec<usize>, Matrix, Vec<f64>, u64)> {
    (4usize..10)
        .prop_flat_map(|d| (Just(d), prop::sample::subsequence((0..d).collect::<Vec<_>>(), 2..=d)))
        .prop_flat_map(|(d, c)| {
            let r = c.len();
            (
                Just(d),
                Just(c),
                (1..r).prop_flat_map(move |k| prop::collection::vec(-3i32..=3, k * r)),
                prop::collection::vec(-2.0f64..2.0, d),
                any::<u64>(),
            )
        })
        .prop_map(|(d, c, entries, m, seed)| {
            let r = c.len();
            let rows: Vec<Vec<f64>> = entries
                .chunks(r)
                .map(|row| row.iter().map(|&v| v as f64).collect())
                .collect();
            (d, c, Matrix::from_rows(&rows).unwrap(), m, seed)
        })
}

fn equality_set(phi: &Matrix, c: &[usize]) -> ConstraintSet {
    ConstraintSet::new(
        phi.clone(),
        vec![0.0; phi.rows()],
        ConstraintKind::Equality,
        c.to_vec(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn eq_one_step_stays_in_the_null_space((d, c, phi, m, seed) in equality_instance(), size in 0.01f64..2.0) {
        let net = small_net(d, seed);
        let cs = equality_set(&phi, &c);
        let r = attack::eq_one_step(&net, &c, &m, size, &cs, ATTACK).unwrap();
        let r_c = constraints::subvector(&r, &c).unwrap();
        prop_assert!(cs.validate_perturbation(&r_c, 1e-9).unwrap(), "Φr = {:?}", phi.matvec(&r_c));
        for u in constraints::complement(&c, d) {
            prop_assert_eq!(r[u], 0.0);
        }
        prop_assert!(linalg::norm_inf(&r) <= size * (1.0 + 1e-12));
    }

    #[test]
    fn doubling_phi_gives_the_same_step((d, c, phi, m, seed) in equality_instance()) {
        let net = small_net(d, seed);
        let a = attack::eq_one_step(&net, &c, &m, 0.3, &equality_set(&phi, &c), ATTACK).unwrap();
        let b = attack::eq_one_step(&net, &c, &m, 0.3, &equality_set(&phi.scale(2.0), &c), ATTACK).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn accumulated_equality_perturbation_is_valid((d, c, phi, m, seed) in equality_instance(), steps in 0usize..30) {
        let net = small_net(d, seed);
        let cs = equality_set(&phi, &c);
        let s = attack::gen_eq_per(&vec![0.0; d], &net, &c, &m, steps, 0.2, &cs, ATTACK).unwrap();
        prop_assert!(s.steps <= steps);
        let v_c = constraints::subvector(&s.perturbation, &c).unwrap();
        prop_assert!(cs.validate_perturbation(&v_c, 1e-9).unwrap());
        for u in constraints::complement(&c, d) {
            prop_assert_eq!(s.perturbation[u], 0.0);
        }
    }
}

fn water_instances() -> &'static Vec<Vec<f64>> {
    static CELL: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = WaterParams {
            records: 20,
            test_count: 40,
            ..WaterParams::default()
        };
        let data = water::synthesize_dataset(&p, 17).unwrap();
        data.tests.into_iter().flat_map(|t| t.attacked).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn inequality_search_returns_a_feasible_point(
        idx in 0usize..120,
        case in prop::sample::select(vec![2usize, 5, 7]),
        seed in any::<u64>(),
        size in 0.01f64..0.2,
    ) {
        let m = &water_instances()[idx];
        let cs = water::scenario_constraints(case).unwrap();
        prop_assert!(cs.check_inequality(&constraints::subvector(m, &cs.compromised).unwrap()).unwrap().is_empty());
        let net = small_net(water::FEATURES, seed);
        let u = constraints::complement(&cs.compromised, m.len());
        let s = attack::gen_iq_per(&vec![0.0; m.len()], &net, &cs.compromised, &u, m, 50, size, &cs, ATTACK).unwrap();
        let adv: Vec<f64> = m.iter().zip(&s.perturbation).map(|(a, b)| a + b).collect();
        let adv_c = constraints::subvector(&adv, &cs.compromised).unwrap();
        prop_assert_eq!(cs.check_inequality(&adv_c).unwrap(), Vec::<usize>::new());
        for &i in &u {
            prop_assert_eq!(s.perturbation[i], 0.0);
        }
    }
}

/// Loss `2x² + 2y²`; never changes its prediction.
struct Bowl;

impl Classifier for Bowl {
    fn input_dim(&self) -> usize {
        2
    }
    fn predict(&self, _x: &[f64]) -> Result<usize> {
        Ok(ATTACK)
    }
    fn loss_gradient(&self, x: &[f64], _label: usize) -> Result<Vec<f64>> {
        Ok(vec![4.0 * x[0], 4.0 * x[1]])
    }
}

#[test]
fn boundary_walk_under_a_linear_inequality() {
    // y ≤ 2 − 2x, i.e. 2x + y ≤ 2.
    let cs = ConstraintSet::new(
        Matrix::from_rows(&[[2.0, 1.0]]).unwrap(),
        vec![2.0],
        ConstraintKind::Inequality,
        vec![0, 1],
    )
    .unwrap();
    let m = [0.5, 0.5];
    // First free step: gradient (2, 2) → probe (0.7, 0.7), which violates.
    let s = attack::gen_iq_per(&[0.0, 0.0], &Bowl, &[0, 1], &[], &m, 1, 0.2, &cs, ATTACK).unwrap();
    assert_eq!(s.perturbation, vec![0.0, 0.0]);
    // Second step slides along the boundary direction (−1, 2) from the last
    // valid point, which the third step accepts.
    let s = attack::gen_iq_per(&[0.0, 0.0], &Bowl, &[0, 1], &[], &m, 3, 0.2, &cs, ATTACK).unwrap();
    let moved = &s.perturbation;
    assert!((moved[0] + 0.1).abs() < 1e-12 && (moved[1] - 0.2).abs() < 1e-12, "{moved:?}");
    assert!((2.0 * moved[0] + moved[1]).abs() < 1e-12);
    // Any budget ends on a feasible point.
    for steps in 0..60 {
        let s = attack::gen_iq_per(&[0.0, 0.0], &Bowl, &[0, 1], &[], &m, steps, 0.2, &cs, ATTACK).unwrap();
        let p = [m[0] + s.perturbation[0], m[1] + s.perturbation[1]];
        assert!(cs.check_inequality(&p).unwrap().is_empty(), "steps {steps}: {p:?}");
    }
}

#[test]
fn single_true_sample_reduces_to_one_search() {
    let d = 6;
    let c = vec![0, 1, 3, 4];
    let phi = Matrix::from_rows(&[[1.0, -1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]]).unwrap();
    let cs = equality_set(&phi, &c);
    let m = vec![0.3, -0.2, 0.9, 0.1, -0.4, 0.7];
    let net = small_net(d, 42);
    let cfg = AttackConfig {
        step: 25,
        size: 0.05,
        max_itera: 1,
        lambda_threshold: 1.0,
        ..AttackConfig::default()
    };
    let mv = MeasurementVector::new(m.clone(), c.clone()).unwrap();
    let universal = attack::uni_adv_measur(&net, std::slice::from_ref(&m), &mv, 1.0, ATTACK, 1, &cs, &cfg).unwrap();
    let direct = attack::gen_eq_per(&vec![0.0; d], &net, &c, &m, 25, 0.05, &cs, ATTACK).unwrap();
    assert_eq!(universal.perturbation, direct.perturbation);
}
