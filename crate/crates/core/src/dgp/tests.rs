use super::*;
use crate::maps::EulerMap;
use crate::linalg::{newton_kantorovich, NewtonOptions};
use crate::model::{logit_ccp, CcpProfile, MixtureDdcModel, PanelData};

fn entry_exit(dependence: Dependence, n_grid: usize) -> MixtureDdcModel {
    build_entry_exit_model(&EntryExitSpec {
        n_grid,
        dependence,
        ..Default::default()
    })
    .unwrap()
}

fn game_spec(n_firms: usize) -> EntryGameSpec {
    EntryGameSpec {
        n_firms,
        ..Default::default()
    }
}

fn sim(n_markets: usize, n_periods: usize, seed: u64) -> SimulationSpec {
    SimulationSpec {
        n_markets,
        n_periods,
        burn_in: 100,
        seed,
    }
}

#[test]
fn myopic_policy_is_logit_of_flow_utility() {
    let m = build_entry_exit_model(&EntryExitSpec {
        n_grid: 2,
        beta: 0.0,
        ..Default::default()
    })
    .unwrap();
    let (_, p) = solve_type_policy(&m, 0).unwrap();
    let theta = &m.type_params()[0];
    for x in 0..m.n_states() {
        let u = [m.flow_utility(0, x, 0, theta), m.flow_utility(0, x, 1, theta)];
        let expect = logit_ccp(&u);
        assert!((p.get(0, x, 1) - expect[1]).abs() < 1e-12);
    }
}

#[test]
fn bellman_and_euler_routes_give_same_policy() {
    let m = entry_exit(Dependence::Fd, 2);
    for t in 0..3 {
        let (_, p) = solve_type_policy(&m, t).unwrap();
        let euler = EulerMap::new(&m, &m.type_params()[t]).unwrap();
        let (diffs, rep) =
            newton_kantorovich(&euler, &vec![0.0; 2 * m.n_states()], 50, 1e-12, NewtonOptions::default()).unwrap();
        assert!(rep.converged);
        let pe = CcpProfile::from_values(1, m.n_states(), 2, &diffs);
        assert!(pe.max_abs_diff(&p) < 1e-9);
    }
}

#[test]
fn high_profit_type_responds_more_to_productivity() {
    let m = entry_exit(Dependence::Fd, 3);
    let s = m.space();
    let mut lo: Vec<usize> = s.exo_sizes().iter().map(|n| n / 2).collect();
    let mut hi = lo.clone();
    lo[0] = 0;
    hi[0] = s.exo_sizes()[0] - 1;
    let (x_lo, x_hi) = (s.state_index(1, s.exo_index(&lo)), s.state_index(1, s.exo_index(&hi)));
    let log_odds = |p: &CcpProfile, x: usize| (p.get(0, x, 1) / p.get(0, x, 0)).ln();
    let (_, p1) = solve_type_policy(&m, 0).unwrap();
    let (_, p2) = solve_type_policy(&m, 1).unwrap();
    let slope1 = log_odds(&p1, x_hi) - log_odds(&p1, x_lo);
    let slope2 = log_odds(&p2, x_hi) - log_odds(&p2, x_lo);
    assert!(slope1 > slope2 && slope2 > 0.0);
}

#[test]
fn game_equilibrium_meets_residual_bound() {
    let m = build_entry_game_model(&game_spec(3)).unwrap();
    let start = CcpProfile::uniform(3, m.n_states(), 2);
    let p = solve_game_equilibrium(&m, 0, &start).unwrap();
    assert!(equilibrium_residual(&m, &m.type_params()[0], &p).unwrap() <= EQUILIBRIUM_TOL);
}

#[test]
fn symmetric_firms_reach_symmetric_equilibrium() {
    let spec = EntryGameSpec {
        theta_fc: vec![1.5; 3],
        ..game_spec(3)
    };
    let m = build_entry_game_model(&spec).unwrap();
    let s = m.space();
    let p = solve_game_equilibrium(&m, 0, &CcpProfile::uniform(3, m.n_states(), 2)).unwrap();
    for x in 0..m.n_states() {
        let (lag, e) = s.split(x);
        let acts = s.profile_actions(lag);
        for j in 1..3 {
            // Swapping firms 0 and j maps the state to one where firm j plays firm 0's role.
            let mut swapped = acts.clone();
            swapped.swap(0, j);
            let y = s.state_index(s.profile_index(&swapped), e);
            assert!((p.get(0, x, 1) - p.get(j, y, 1)).abs() < 1e-9);
        }
    }
}

#[test]
fn without_competition_each_firm_solves_its_own_problem() {
    let spec = EntryGameSpec {
        theta_rc: 0.0,
        ..game_spec(3)
    };
    let m = build_entry_game_model(&spec).unwrap();
    let s = m.space();
    let p = solve_game_equilibrium(&m, 0, &CcpProfile::uniform(3, m.n_states(), 2)).unwrap();
    let fc = spec.fixed_costs().unwrap();
    for (j, &fcj) in fc.iter().enumerate() {
        let single = build_entry_game_model(&EntryGameSpec {
            n_firms: 1,
            theta_rc: 0.0,
            theta_fc: vec![fcj],
            ..Default::default()
        })
        .unwrap();
        let (_, ps) = solve_type_policy(&single, 0).unwrap();
        let ss = single.space();
        for x in 0..m.n_states() {
            let (lag, e) = s.split(x);
            let own = s.profile_action(lag, j);
            let y = ss.state_index(own, e);
            assert!((p.get(j, x, 1) - ps.get(0, y, 1)).abs() < 1e-9);
        }
    }
}

#[test]
fn degenerate_mixture_assigns_single_type() {
    let m = entry_exit(Dependence::Fd, 2).with_types(vec![vec![0.5; 7]], vec![1.0]).unwrap();
    let pol = solve_design(&m).unwrap();
    let panel = simulate_panel(&m, &pol, &[1.0], &sim(50, 5, 3)).unwrap();
    assert!(panel.types().unwrap().iter().all(|&t| t == 0));
}

#[test]
fn simulation_is_deterministic_and_seed_sensitive() {
    let m = entry_exit(Dependence::Nfd, 2);
    let pol = solve_design(&m).unwrap();
    let pi = m.type_weights().to_vec();
    let a = simulate_panel(&m, &pol, &pi, &sim(200, 10, 9)).unwrap();
    let b = simulate_panel(&m, &pol, &pi, &sim(200, 10, 9)).unwrap();
    let c = simulate_panel(&m, &pol, &pi, &sim(200, 10, 10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

fn counts(panel: &PanelData, m: &MixtureDdcModel) -> (Vec<f64>, Vec<f64>) {
    let mut visits = vec![0.0; m.n_states()];
    let mut ones = vec![0.0; m.n_states()];
    for i in 0..panel.n_markets() {
        for t in 0..panel.n_periods() {
            let x = panel.state(i, t);
            visits[x] += 1.0;
            ones[x] += panel.action(i, t, 0) as f64;
        }
    }
    (visits, ones)
}

#[test]
fn simulated_frequencies_match_generating_ccps() {
    let m = entry_exit(Dependence::Fd, 2).with_types(vec![vec![1.5, 1.5, -0.3, -0.3, -0.2, -0.3, -1.0]], vec![1.0]).unwrap();
    let pol = solve_design(&m).unwrap();
    let panel = simulate_panel(&m, &pol, &[1.0], &sim(50_000, 2, 21)).unwrap();
    let (visits, ones) = counts(&panel, &m);
    let mut checked = 0;
    let mut outside = 0;
    for x in 0..m.n_states() {
        if visits[x] < 100.0 {
            continue;
        }
        let p = pol[0].get(0, x, 1);
        let se = (p * (1.0 - p) / visits[x]).sqrt();
        checked += 1;
        if (ones[x] / visits[x] - p).abs() > 3.0 * se {
            outside += 1;
        }
    }
    assert!(checked > 20);
    // Each state fails a 3-SE band with probability ≈ 0.27%.
    assert!(outside <= 2, "{outside} of {checked} states outside 3 standard errors");

    let freq = frequency_ccp(&panel, &m, LAPLACE_SMOOTHING).unwrap();
    for x in 0..m.n_states() {
        if visits[x] >= 2000.0 {
            assert!((freq.get(0, x, 1) - pol[0].get(0, x, 1)).abs() <= 0.02);
        }
    }
}

#[test]
fn frequency_estimator_handles_unvisited_and_pure_states() {
    let m = entry_exit(Dependence::Fd, 2);
    let panel = PanelData::new(2, 2, 1, vec![3, 3, 3, 3], vec![1, 1, 1, 1], None).unwrap();
    let p = frequency_ccp(&panel, &m, LAPLACE_SMOOTHING).unwrap();
    assert_eq!(p.get(0, 0, 1), 0.5);
    assert!((p.get(0, 3, 1) - 4.5 / 5.0).abs() < 1e-15);
    let p0 = frequency_ccp(&panel, &m, 0.0).unwrap();
    assert!(p0.get(0, 3, 1) > 1.0 - 1e-9);
    assert!(p0.get(0, 3, 0) > 0.0);
}

#[test]
fn counter_uniforms_are_keyed_and_uniform() {
    assert_eq!(counter_uniform(1, 2, 3, 4), counter_uniform(1, 2, 3, 4));
    assert_ne!(counter_uniform(1, 2, 3, 4), counter_uniform(1, 2, 4, 3));
    let n = 100_000;
    let mean: f64 = (0..n).map(|i| counter_uniform(7, i, 0, 0)).sum::<f64>() / n as f64;
    assert!((mean - 0.5).abs() < 0.005);
    assert_ne!(replication_seed(1, 0), replication_seed(1, 1));
}

#[test]
fn single_type_sieve_is_pooled_fit() {
    let m = entry_exit(Dependence::Fd, 2);
    let pol = solve_design(&m).unwrap();
    let panel = simulate_panel(&m, &pol, m.type_weights(), &sim(300, 5, 4)).unwrap();
    let init = sieve_logit_init(&panel, &m, &SieveInitConfig::default(), SieveStart::Clustered, 1).unwrap();
    assert_eq!(init.pi, vec![1.0]);
    assert_eq!(init.ccps.len(), 1);
}

#[test]
fn intercept_only_sieve_is_state_constant() {
    let m = entry_exit(Dependence::Fd, 2);
    let pol = solve_design(&m).unwrap();
    let panel = simulate_panel(&m, &pol, m.type_weights(), &sim(300, 5, 4)).unwrap();
    let basis = SieveBasis::intercept_only(m.n_states());
    let cfg = SieveInitConfig {
        n_types: 2,
        restarts: 3,
        ..Default::default()
    };
    let init = sieve_init_with_basis(&panel, &m, &basis, &cfg, SieveStart::Clustered, 2).unwrap();
    for p in &init.ccps {
        let first = p.get(0, 0, 1);
        assert!((0..m.n_states()).all(|x| (p.get(0, x, 1) - first).abs() < 1e-12));
    }
}

#[test]
fn sieve_basis_skips_powers_of_binary_features() {
    let m = entry_exit(Dependence::Fd, 3);
    let b = SieveBasis::new(&m, 2).unwrap();
    // 6 features, one binary: 1 + 6 + (21 − 1) terms.
    assert_eq!(b.n_terms(), 27);
}

#[test]
fn sieve_em_recovers_separated_mixture_weights() {
    let base = entry_exit(Dependence::Fd, 2);
    let m = base
        .with_types(
            vec![vec![1.5, 1.5, -0.3, -0.3, -0.2, -0.3, -1.0], vec![0.2, 0.2, -0.2, 3.5, 2.0, 0.5, 3.0]],
            vec![0.6, 0.4],
        )
        .unwrap();
    let pol = solve_design(&m).unwrap();
    let panel = simulate_panel(&m, &pol, &[0.6, 0.4], &sim(2000, 20, 5)).unwrap();
    let cfg = SieveInitConfig {
        n_types: 2,
        ..Default::default()
    };
    for start in [SieveStart::Clustered, SieveStart::Random] {
        let init = sieve_logit_init(&panel, &m, &cfg, start, 3).unwrap();
        let mut pi = init.pi.clone();
        pi.sort_by(f64::total_cmp);
        assert!((pi[0] - 0.4).abs() < 0.05 && (pi[1] - 0.6).abs() < 0.05, "{start:?}: {pi:?}");
    }
}

#[test]
fn posterior_weights_follow_bayes_rule() {
    let ll = vec![vec![0.8f64.ln()], vec![0.2f64.ln()]];
    let (w, total) = posterior_weights(&ll, &[0.5, 0.5]);
    assert!((w[0][0] - 0.8).abs() < 1e-15 && (w[0][1] - 0.2).abs() < 1e-15);
    assert!((total - 0.5f64.ln()).abs() < 1e-15);
    let tiny = vec![vec![-2000.0], vec![-2001.0]];
    let (w, _) = posterior_weights(&tiny, &[0.5, 0.5]);
    assert!((w[0][0] + w[0][1] - 1.0).abs() < 1e-12 && w[0][0] > w[0][1]);
}
