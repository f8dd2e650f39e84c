use super::*;
use crate::dgp::{build_entry_exit_model, build_entry_game_model, Dependence, EntryExitSpec, EntryGameSpec};
use crate::linalg::{dense_solve, materialize, sup_diff, DenseMatrix};
use crate::model::{logit_ccp, random_ccp, social_surplus, CcpProfile, MixtureDdcModel, EULER_GAMMA};

fn entry_exit(dependence: Dependence) -> MixtureDdcModel {
    build_entry_exit_model(&EntryExitSpec {
        n_grid: 2,
        dependence,
        ..Default::default()
    })
    .unwrap()
}

fn game(n_firms: usize) -> MixtureDdcModel {
    build_entry_game_model(&EntryGameSpec {
        n_firms,
        ..Default::default()
    })
    .unwrap()
}

fn solve_bellman(m: &MixtureDdcModel, theta: &[f64], ccp: &CcpProfile) -> Vec<f64> {
    let map = BellmanMap::new(m, 0, theta, ccp).unwrap();
    let g = make_gamma(InnerAlgorithm::Newton, Truncation::Converge).with_tol(1e-12);
    let (v, rep) = g.solve_diff_map(&map, &vec![0.0; m.n_states()]).unwrap();
    assert!(rep.converged);
    v
}

fn fd_jvp(g: &dyn FixedPointMap, y: &[f64], d: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    let n = y.len();
    let plus: Vec<f64> = y.iter().zip(d).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = y.iter().zip(d).map(|(a, b)| a - h * b).collect();
    let (mut gp, mut gm) = (vec![0.0; n], vec![0.0; n]);
    g.apply(&plus, &mut gp);
    g.apply(&minus, &mut gm);
    gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
}

fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed;
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

#[test]
fn policy_operator_matches_dense_transition() {
    let m = game(2);
    let ccp = random_ccp(2, m.n_states(), 2, 3);
    let op = PolicyOperator::new(&m, &ccp);
    let dense = materialize(&op);
    let w = op.weights();
    let beta = m.beta();
    for x in 0..m.n_states() {
        for y in 0..m.n_states() {
            let f: f64 = (0..m.n_profiles()).map(|p| w.joint_row(x)[p] * m.transition_entry(p, x, y)).sum();
            let expect = if x == y { 1.0 } else { 0.0 } - beta * f;
            assert!((dense.get(x, y) - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn w_components_reproduce_policy_value() {
    let m = entry_exit(Dependence::Fd);
    let theta = m.type_params()[0].clone();
    let ccp = random_ccp(1, m.n_states(), 2, 4);
    let (op, b) = policy_valuation_system(&m, 0, &theta, &ccp).unwrap();
    let dense = materialize(&op);
    let v = dense_solve(&dense, &b).unwrap();
    let (_, rhs) = w_components_system(&m, 0, &ccp).unwrap();
    let w: Vec<Vec<f64>> = rhs.iter().map(|r| dense_solve(&dense, r).unwrap()).collect();
    assert!(sup_diff(&v, &combine_components(&w, &theta)) < 1e-9);
}

#[test]
fn w_systems_do_not_depend_on_theta() {
    let m = entry_exit(Dependence::Fd);
    let ccp = random_ccp(1, m.n_states(), 2, 5);
    let (op1, rhs1) = w_components_system(&m, 0, &ccp).unwrap();
    let m2 = m
        .with_types(vec![vec![9.0; m.n_params()]], vec![1.0])
        .unwrap();
    let (op2, rhs2) = w_components_system(&m2, 0, &ccp).unwrap();
    assert_eq!(rhs1, rhs2);
    assert_eq!(materialize(&op1), materialize(&op2));
}

#[test]
fn bellman_fixed_point_is_policy_value_of_its_ccps() {
    let m = entry_exit(Dependence::Nfd);
    let theta = m.type_params()[1].clone();
    let dummy = CcpProfile::uniform(1, m.n_states(), 2);
    let v_star = solve_bellman(&m, &theta, &dummy);
    let cond = m.conditional_values(&theta, &v_star, 0, &dummy);
    let ccp = CcpProfile::from_values(1, m.n_states(), 2, &cond);
    let (op, b) = policy_valuation_system(&m, 0, &theta, &ccp).unwrap();
    let v_pv = dense_solve(&materialize(&op), &b).unwrap();
    assert!(sup_diff(&v_pv, &v_star) < 1e-8, "gap {}", sup_diff(&v_pv, &v_star));
    let shift = m.beta() * EULER_GAMMA;
    for x in 0..m.n_states() {
        let s = social_surplus(&cond[2 * x..2 * x + 2]) + shift;
        assert!((s - v_star[x]).abs() < 1e-10);
    }
}

#[test]
fn bellman_is_a_beta_contraction() {
    let m = entry_exit(Dependence::Fd);
    let theta = m.type_params()[0].clone();
    let ccp = CcpProfile::uniform(1, m.n_states(), 2);
    let map = BellmanMap::new(&m, 0, &theta, &ccp).unwrap();
    let n = m.n_states();
    for seed in 0..5 {
        let a: Vec<f64> = pseudo_random(n, seed).iter().map(|x| 10.0 * x).collect();
        let b: Vec<f64> = pseudo_random(n, seed + 100).iter().map(|x| 10.0 * x).collect();
        let (mut ga, mut gb) = (vec![0.0; n], vec![0.0; n]);
        map.apply(&a, &mut ga);
        map.apply(&b, &mut gb);
        assert!(sup_diff(&ga, &gb) <= m.beta() * sup_diff(&a, &b) + 1e-12);
    }
}

#[test]
fn bellman_jacobian_matches_finite_differences() {
    let m = game(2);
    let theta = m.type_params()[0].clone();
    let ccp = random_ccp(2, m.n_states(), 2, 8);
    let map = BellmanMap::new(&m, 1, &theta, &ccp).unwrap();
    let n = m.n_states();
    let y = pseudo_random(n, 1);
    let d = pseudo_random(n, 2);
    let mut jv = vec![0.0; n];
    map.jacobian_apply(&y, &d, &mut jv);
    assert!(sup_diff(&jv, &fd_jvp(&map, &y, &d)) < 1e-7);
}

#[test]
fn euler_fixed_point_equals_bellman_value_differences() {
    let m = entry_exit(Dependence::Fd);
    let theta = m.type_params()[2].clone();
    let dummy = CcpProfile::uniform(1, m.n_states(), 2);
    let v_star = solve_bellman(&m, &theta, &dummy);
    let cond = m.conditional_values(&theta, &v_star, 0, &dummy);
    let diffs: Vec<f64> = cond.chunks_exact(2).flat_map(|c| [0.0, c[1] - c[0]]).collect();
    let euler = EulerMap::new(&m, &theta).unwrap();
    let mut out = vec![0.0; diffs.len()];
    euler.apply(&diffs, &mut out);
    assert!(sup_diff(&out, &diffs) < 1e-9, "gap {}", sup_diff(&out, &diffs));

    let g = make_gamma(InnerAlgorithm::Sa, Truncation::Converge).with_tol(1e-12);
    let (solved, _) = g.solve_map(&euler, &vec![0.0; diffs.len()]).unwrap();
    assert!(sup_diff(&solved, &diffs) < 1e-9);
}

#[test]
fn euler_jacobian_matches_finite_differences() {
    let m = entry_exit(Dependence::Fd);
    let theta = m.type_params()[0].clone();
    let euler = EulerMap::new(&m, &theta).unwrap();
    let n = euler.dim();
    let y = pseudo_random(n, 4);
    let d = pseudo_random(n, 5);
    let mut jv = vec![0.0; n];
    euler.jacobian_apply(&y, &d, &mut jv);
    assert!(sup_diff(&jv, &fd_jvp(&euler, &y, &d)) < 1e-7);
}

#[test]
fn euler_requires_finite_dependence() {
    let nfd = entry_exit(Dependence::Nfd);
    assert!(matches!(EulerMap::new(&nfd, &nfd.type_params()[0]), Err(Error::Config(_))));
    let g = game(2);
    assert!(matches!(check_euler_structure(&g), Err(Error::Config(_))));
}

#[test]
fn epl_single_agent_fixed_point_is_bellman_solution() {
    let m = entry_exit(Dependence::Nfd);
    let theta = m.type_params()[0].clone();
    let dummy = CcpProfile::uniform(1, m.n_states(), 2);
    let v_star = solve_bellman(&m, &theta, &dummy);
    let cond = m.conditional_values(&theta, &v_star, 0, &dummy);
    let map = EplMap::new(&m, &theta).unwrap();
    let mut out = vec![0.0; cond.len()];
    map.apply(&cond, &mut out);
    assert!(sup_diff(&out, &cond) < 1e-9);
}

#[test]
fn epl_jacobian_matches_finite_differences_in_games() {
    for j in [1, 2, 3] {
        let m = game(j);
        let theta = m.type_params()[0].clone();
        let map = EplMap::new(&m, &theta).unwrap();
        let n = map.dim();
        let y: Vec<f64> = pseudo_random(n, 10 + j as u64).iter().map(|x| 2.0 * x).collect();
        let d = pseudo_random(n, 20 + j as u64);
        let mut jv = vec![0.0; n];
        map.jacobian_apply(&y, &d, &mut jv);
        let fd = fd_jvp(&map, &y, &d);
        assert!(sup_diff(&jv, &fd) < 1e-6, "J={j}: gap {}", sup_diff(&jv, &fd));
    }
}

#[test]
fn epl_equilibrium_satisfies_policy_valuation_for_every_firm() {
    let m = game(3);
    let theta = m.type_params()[0].clone();
    let map = EplMap::new(&m, &theta).unwrap();
    let g = make_gamma(InnerAlgorithm::Newton, Truncation::Converge).with_tol(1e-11);
    let (v, rep) = g.solve_diff_map(&map, &vec![0.0; map.dim()]).unwrap();
    assert!(rep.converged, "{rep:?}");
    let nx = m.n_states();
    let ccp = CcpProfile::from_values(3, nx, 2, &v);
    let shift = m.beta() * EULER_GAMMA;
    for j in 0..3 {
        let (op, b) = policy_valuation_system(&m, j, &theta, &ccp).unwrap();
        let vj = dense_solve(&materialize(&op), &b).unwrap();
        for x in 0..nx {
            let s = social_surplus(&v[(j * nx + x) * 2..(j * nx + x) * 2 + 2]) + shift;
            assert!((vj[x] - s).abs() < 1e-8);
        }
    }
}

#[test]
fn separable_epl_step_is_affine_newton_step() {
    let m = game(2);
    let theta_prev = m.type_params()[0].clone();
    let v: Vec<f64> = pseudo_random(2 * m.n_states() * 2, 7);
    let lin = EplLinearization::new(&m, &theta_prev, &v).unwrap();
    let dense = materialize(&lin);
    let rhs = lin.separable_rhs(&v);
    let ys: Vec<Vec<f64>> = rhs.iter().map(|r| dense_solve(&dense, r).unwrap()).collect();
    let theta: Vec<f64> = theta_prev.iter().map(|t| t * 1.1 + 0.05).collect();
    let mut affine: Vec<f64> = v.iter().zip(&ys[0]).map(|(a, b)| a - b).collect();
    for (t, y) in theta.iter().zip(&ys[1..]) {
        for (o, yi) in affine.iter_mut().zip(y) {
            *o += t * yi;
        }
    }
    let phi = EplLinearization::new(&m, &theta, &v).unwrap();
    let resid: Vec<f64> = phi.value().iter().zip(&v).map(|(a, b)| a - b).collect();
    let step = dense_solve(&dense, &resid).unwrap();
    let direct: Vec<f64> = v.iter().zip(&step).map(|(a, b)| a + b).collect();
    assert!(sup_diff(&affine, &direct) < 1e-9);
}

#[test]
fn linear_solvers_agree_at_convergence() {
    let m = entry_exit(Dependence::Fd);
    let theta = m.type_params()[0].clone();
    let ccp = random_ccp(1, m.n_states(), 2, 9);
    let (op, b) = policy_valuation_system(&m, 0, &theta, &ccp).unwrap();
    let exact = dense_solve(&materialize(&op), &b).unwrap();
    let y0 = vec![0.0; b.len()];
    for alg in [InnerAlgorithm::Gmres, InnerAlgorithm::Sa, InnerAlgorithm::Anderson] {
        let g = make_gamma(alg, Truncation::Converge).with_tol(1e-11);
        let (y, rep) = g.solve_linear(&op, &b, &y0).unwrap();
        assert!(rep.converged, "{alg:?}");
        assert!(sup_diff(&y, &exact) < 1e-8, "{alg:?}: {}", sup_diff(&y, &exact));
    }
}

#[test]
fn truncated_gamma_takes_exactly_q_steps() {
    let m = entry_exit(Dependence::Fd);
    let ccp = random_ccp(1, m.n_states(), 2, 11);
    let (op, b) = policy_valuation_system(&m, 0, &m.type_params()[0], &ccp).unwrap();
    let y0 = vec![0.0; b.len()];
    for q in [1, 3, 7] {
        for alg in [InnerAlgorithm::Gmres, InnerAlgorithm::Sa] {
            let g = make_gamma(alg, Truncation::Steps(q)).with_tol(0.0);
            let (_, rep) = g.solve_linear(&op, &b, &y0).unwrap();
            assert_eq!(rep.iterations, q, "{alg:?}");
        }
    }
}

#[test]
fn sa_steps_on_linear_system_are_richardson_iterates() {
    let a = DenseMatrix::new(2, vec![1.0, -0.5, 0.0, 0.5]).unwrap();
    let b = [1.0, 1.0];
    let g = make_gamma(InnerAlgorithm::Sa, Truncation::Steps(1)).with_tol(0.0);
    let (y, _) = g.solve_linear(&a, &b, &[0.0, 0.0]).unwrap();
    assert_eq!(y, vec![1.0, 1.0]);
    let (y, _) = g.solve_linear(&a, &b, &y).unwrap();
    assert_eq!(y, vec![1.5, 1.5]);
}

#[test]
fn incompatible_algorithm_pairs_are_rejected() {
    let a = DenseMatrix::identity(2);
    let g = make_gamma(InnerAlgorithm::Newton, Truncation::Steps(1));
    assert!(matches!(g.solve_linear(&a, &[1.0, 1.0], &[0.0, 0.0]), Err(Error::Config(_))));
    let m = entry_exit(Dependence::Fd);
    let euler = EulerMap::new(&m, &m.type_params()[0]).unwrap();
    let g = make_gamma(InnerAlgorithm::Gmres, Truncation::Steps(1));
    assert!(matches!(g.solve_map(&euler, &vec![0.0; euler.dim()]), Err(Error::Config(_))));
    assert!(matches!(g.solve_diff_map(&euler, &vec![0.0; euler.dim()]), Err(Error::Config(_))));
}

#[test]
fn truncation_parses_and_round_trips() {
    assert_eq!("inf".parse::<Truncation>().unwrap(), Truncation::Converge);
    assert_eq!("4".parse::<Truncation>().unwrap(), Truncation::Steps(4));
    assert!("0".parse::<Truncation>().is_err());
    assert!("abc".parse::<Truncation>().is_err());
    let ts = vec![Truncation::Steps(2), Truncation::Converge];
    let json = serde_json::to_string(&ts).unwrap();
    assert_eq!(json, r#"[2,"inf"]"#);
    assert_eq!(serde_json::from_str::<Vec<Truncation>>(&json).unwrap(), ts);
}

#[test]
fn separability_flags() {
    assert!(Mapping::PolicyValuation.is_theta_separable(true));
    assert!(Mapping::Epl.is_theta_separable(true));
    assert!(!Mapping::Bellman.is_theta_separable(true));
    assert!(!Mapping::Euler.is_theta_separable(true));
    assert!(!Mapping::PolicyValuation.is_theta_separable(false));
    assert_eq!(Mapping::PolicyValuation.nuisance_block(true), NuisanceBlock::WComponents);
    assert_eq!(Mapping::Euler.nuisance_block(true), NuisanceBlock::CondValueDiff);
}

#[test]
fn logit_of_epl_values_are_ccps() {
    let m = game(2);
    let v = pseudo_random(2 * m.n_states() * 2, 3);
    let lin = EplLinearization::new(&m, &m.type_params()[0], &v).unwrap();
    let p = logit_ccp(&v[0..2]);
    assert!((lin.ccp().get(0, 0, 1) - p[1]).abs() < 1e-14);
}
