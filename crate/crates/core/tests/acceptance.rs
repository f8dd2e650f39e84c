//! Acceptance suite: prints one PASS/FAIL line per criterion.
//!
//! Usage: `cargo test --release -p emnpl --test acceptance [-- 1 4 7]`.
//! Numeric arguments select criteria; other arguments are ignored. The
//! process exits nonzero on a FAIL only when `EMNPL_ACCEPTANCE_STRICT=1`.

use std::time::Instant;

use emnpl::dgp::{solve_game_equilibrium, EQUILIBRIUM_TOL};
use emnpl::estimator::{
    em_npl_q_run, match_labels, permute, pv_design, separable_m_step, CcpUpdate, Method, PanelCounts, RunConfig,
};
use emnpl::harness::{estimate_once, replication_start, run_study, DesignConfig, DesignKind, EstimateConfig, MethodCell, StudyConfig};
use emnpl::linalg::{
    dense_solve, gmres, kron_matvec, materialize, sup_diff, sup_norm, DenseMatrix, FixedPointMap, FnOperator,
    KroneckerOperator, LinearOperator,
};
use emnpl::logit::LogitOptions;
use emnpl::maps::{
    combine_components, make_gamma, policy_valuation_system, w_components_system, BellmanMap, EplLinearization,
    EplMap, EulerMap, InnerAlgorithm, Truncation,
};
use emnpl::model::{logit_ccp, social_surplus, CcpProfile, MixtureDdcModel};
use emnpl::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

struct Criterion {
    id: usize,
    name: &'static str,
    budget_secs: Option<f64>,
    run: fn() -> Result<Outcome>,
}

const CRITERIA: [Criterion; 10] = [
    Criterion { id: 1, name: "truncation invariance", budget_secs: Some(120.0), run: truncation_invariance },
    Criterion { id: 2, name: "MSE q-invariance", budget_secs: Some(1200.0), run: mse_invariance },
    Criterion { id: 3, name: "convergence robustness", budget_secs: None, run: convergence_robustness },
    Criterion { id: 4, name: "speed ordering", budget_secs: None, run: speed_ordering },
    Criterion { id: 5, name: "discount-factor stress", budget_secs: None, run: discount_stress },
    Criterion { id: 6, name: "cross-representation oracle", budget_secs: Some(10.0), run: cross_representation },
    Criterion { id: 7, name: "game estimation", budget_secs: Some(1800.0), run: game_estimation },
    Criterion { id: 8, name: "EPL stationarity", budget_secs: None, run: epl_stationarity },
    Criterion { id: 9, name: "solver unit suite", budget_secs: Some(60.0), run: solver_suite },
    Criterion { id: 10, name: "consistency", budget_secs: None, run: consistency },
];

fn reduced(beta: f64, n_markets: usize) -> DesignConfig {
    DesignConfig {
        family: DesignKind::EntryExitFd,
        n_grid: Some(3),
        beta: Some(beta),
        n_markets: Some(n_markets),
        ..Default::default()
    }
}

fn study(design: DesignConfig, methods: &[Method], q: &[Truncation], eps_outer: f64) -> Result<Vec<MethodCell>> {
    run_study(&StudyConfig {
        design,
        methods: methods.to_vec(),
        q: q.to_vec(),
        replications: 20,
        eps_outer,
        ..Default::default()
    })
}

fn cell(cells: &[MethodCell], method: Method, q: Truncation) -> &MethodCell {
    cells.iter().find(|c| c.method == method && c.q == q).expect("cell present")
}

fn q_label(q: Truncation) -> String {
    match q {
        Truncation::Steps(n) => n.to_string(),
        Truncation::Converge => "inf".into(),
    }
}

fn mse_of(c: &MethodCell) -> f64 {
    c.mse.unwrap_or(f64::NAN)
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

fn random_stochastic(n: usize, seed: u64) -> DenseMatrix {
    let raw: Vec<f64> = pseudo_random(n * n, seed).iter().map(|u| (u + 1.0).powi(4)).collect();
    DenseMatrix::from_fn(n, |i, j| raw[i * n + j] / raw[i * n..(i + 1) * n].iter().sum::<f64>())
}

fn truncation_invariance() -> Result<Outcome> {
    let design = reduced(0.95, 1000).build()?;
    let data = design.simulate(11)?;
    let counts = PanelCounts::new(&data, &design.model)?;
    let init = replication_start(&design, &data, &counts, design.n_types(), 11)?;
    let mut runs = Vec::new();
    for q in [Truncation::Steps(1), Truncation::Steps(4), Truncation::Converge] {
        let config = RunConfig {
            eps_outer: 1e-10,
            max_outer: 2000,
            inner_tol: 1e-12,
            logit: LogitOptions {
                grad_tol: 1e-11,
                ..LogitOptions::default()
            },
            ..RunConfig::new(Method::PvGmres, q)
        };
        let res = em_npl_q_run(&design.model, &counts, &init, &config)?;
        runs.push((q, res));
    }
    let flat = |r: &emnpl::estimator::EstimationResult| {
        let mut v: Vec<f64> = r.state.theta.concat();
        v.extend(&r.state.pi);
        v
    };
    let base = flat(&runs[2].1);
    let mut gap: f64 = 0.0;
    let mut parts = Vec::new();
    for (q, r) in &runs {
        let g = sup_diff(&flat(r), &base);
        gap = gap.max(g);
        parts.push(format!("q={} iters {} conv {} gap {:.1e}", q_label(*q), r.outer_iterations, r.converged, g));
    }
    let all_converged = runs.iter().all(|(_, r)| r.converged);
    Ok(Outcome::new(
        all_converged && gap <= 1e-5,
        format!("sup gap {gap:.2e} (tol 1e-5); {}", parts.join("; ")),
    ))
}

const C2_Q: [Truncation; 4] = [Truncation::Steps(4), Truncation::Steps(6), Truncation::Steps(8), Truncation::Steps(10)];

fn c2_cells() -> Result<&'static [MethodCell]> {
    use std::sync::OnceLock;
    static CELLS: OnceLock<Vec<MethodCell>> = OnceLock::new();
    if let Some(c) = CELLS.get() {
        return Ok(c);
    }
    let cells = study(reduced(0.95, 500), &[Method::PvGmres, Method::PvSa, Method::EeSa], &C2_Q, 1e-6)?;
    Ok(CELLS.get_or_init(|| cells))
}

fn mse_invariance() -> Result<Outcome> {
    let cells = c2_cells()?;
    let pv: Vec<&MethodCell> = cells.iter().filter(|c| c.method != Method::EeSa).collect();
    let rounded: Vec<String> = pv.iter().map(|c| format!("{:.3}", mse_of(c))).collect();
    let equal = rounded.iter().all(|r| *r == rounded[0]) && mse_of(pv[0]).is_finite();
    let mut worst_gap: f64 = 0.0;
    let mut ee = Vec::new();
    for q in C2_Q {
        let base = mse_of(cell(cells, Method::PvGmres, q));
        let e = mse_of(cell(cells, Method::EeSa, q));
        let gap = ((e - base) / base).abs();
        worst_gap = worst_gap.max(if gap.is_nan() { f64::INFINITY } else { gap });
        ee.push(format!("q={} {e:.4}", q_label(q)));
    }
    Ok(Outcome::new(
        equal && worst_gap <= 0.15,
        format!(
            "PV MSE cells [{}]; EE_SA [{}], worst relative gap {:.1}% (limit 15%)",
            rounded.join(", "),
            ee.join(", "),
            100.0 * worst_gap
        ),
    ))
}

fn convergence_robustness() -> Result<Outcome> {
    let cells = c2_cells()?;
    let worst = cells
        .iter()
        .min_by(|a, b| a.conv_pct.total_cmp(&b.conv_pct))
        .expect("non-empty study");
    Ok(Outcome::new(
        cells.iter().all(|c| c.conv_pct >= 95.0),
        format!(
            "{} cells, lowest conv {:.0}% ({} q={}), need >= 95%",
            cells.len(),
            worst.conv_pct,
            worst.method,
            q_label(worst.q)
        ),
    ))
}

fn speed_ordering() -> Result<Outcome> {
    let q4 = Truncation::Steps(4);
    let cells = study(reduced(0.95, 500), &[Method::PvGmres, Method::PvSa, Method::BmNt], &[q4], 1e-3)?;
    let ct = |m| cell(&cells, m, q4).ct_mean;
    let (g, s, n) = (ct(Method::PvGmres), ct(Method::PvSa), ct(Method::BmNt));
    Ok(Outcome::new(
        g < s && s < n,
        format!("mean CT PV_GMRES {g:.3}s < PV_SA {s:.3}s < BM_NT {n:.3}s"),
    ))
}

fn discount_stress() -> Result<Outcome> {
    let q4 = Truncation::Steps(4);
    let cells = study(reduced(0.9999, 500), &[Method::PvGmres, Method::BmNt, Method::BmSa], &[q4], 1e-3)?;
    let (pv, nt, sa) = (cell(&cells, Method::PvGmres, q4), cell(&cells, Method::BmNt, q4), cell(&cells, Method::BmSa, q4));
    let sa_capped = sa.records.iter().any(|r| !r.converged);
    let ratio = sa.ct_mean / pv.ct_mean;
    let pass = pv.conv_pct >= 95.0 && nt.conv_pct >= 95.0 && (sa_capped || ratio > 5.0);
    Ok(Outcome::new(
        pass,
        format!(
            "conv PV_GMRES {:.0}%, BM_NT {:.0}%; BM_SA conv {:.0}%, CT {:.2}s vs PV_GMRES {:.3}s ({ratio:.0}x)",
            pv.conv_pct, nt.conv_pct, sa.conv_pct, sa.ct_mean, pv.ct_mean
        ),
    ))
}

fn small_single_agent() -> Result<MixtureDdcModel> {
    DesignConfig {
        n_grid: Some(2),
        ..Default::default()
    }
    .build_model()
}

fn cross_representation() -> Result<Outcome> {
    let m = small_single_agent()?;
    let nx = m.n_states();
    let mut value_gap: f64 = 0.0;
    let mut euler_gap: f64 = 0.0;
    for theta in m.type_params() {
        let dummy = CcpProfile::uniform(1, nx, 2);
        let bellman = BellmanMap::new(&m, 0, theta, &dummy)?;
        let newton = make_gamma(InnerAlgorithm::Newton, Truncation::Converge).with_tol(1e-12);
        let (v_bm, _) = newton.solve_diff_map(&bellman, &vec![0.0; nx])?;
        let cond = m.conditional_values(theta, &v_bm, 0, &dummy);
        let ccp = CcpProfile::from_values(1, nx, 2, &cond);

        let (op, b) = policy_valuation_system(&m, 0, theta, &ccp)?;
        let v_pv = dense_solve(&materialize(&op), &b)?;
        let (wop, rhs) = w_components_system(&m, 0, &ccp)?;
        let dense = materialize(&wop);
        let w: Vec<Vec<f64>> = rhs.iter().map(|r| dense_solve(&dense, r)).collect::<Result<_>>()?;
        let v_w = combine_components(&w, theta);
        value_gap = value_gap
            .max(sup_diff(&v_bm, &v_pv))
            .max(sup_diff(&v_bm, &v_w))
            .max(sup_diff(&v_pv, &v_w));

        let diffs: Vec<f64> = cond.chunks_exact(2).flat_map(|c| [0.0, c[1] - c[0]]).collect();
        let euler = EulerMap::new(&m, theta)?;
        let sa = make_gamma(InnerAlgorithm::Sa, Truncation::Converge).with_tol(1e-12);
        let (solved, _) = sa.solve_map(&euler, &vec![0.0; diffs.len()])?;
        euler_gap = euler_gap.max(sup_diff(&solved, &diffs));
    }
    Ok(Outcome::new(
        value_gap <= 1e-7 && euler_gap <= 1e-8,
        format!("|X| = {nx}; value gap {value_gap:.1e} (tol 1e-7), Euler gap {euler_gap:.1e} (tol 1e-8)"),
    ))
}

fn game_estimation() -> Result<Outcome> {
    let qs = [
        Truncation::Steps(4),
        Truncation::Steps(8),
        Truncation::Steps(12),
        Truncation::Steps(16),
        Truncation::Converge,
    ];
    let design = DesignConfig {
        family: DesignKind::EntryGame,
        n_firms: Some(3),
        theta_rc: Some(2.4),
        n_markets: Some(200),
        ..Default::default()
    };
    let cells = study(design, &[Method::PvGmres, Method::EplGmres], &qs, 1e-3)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for q in qs {
        let pv = cell(&cells, Method::PvGmres, q);
        let epl = cell(&cells, Method::EplGmres, q);
        let ok = pv.conv_pct == 100.0 && mse_of(epl) <= 1.05 * mse_of(pv);
        pass &= ok;
        parts.push(format!(
            "q={}: PV {:.3} ({:.0}%) EPL {:.3} ({:.0}%)",
            q_label(q),
            mse_of(pv),
            pv.conv_pct,
            mse_of(epl),
            epl.conv_pct
        ));
    }
    Ok(Outcome::new(pass, format!("MSE (conv) {}", parts.join("; "))))
}

fn epl_stationarity() -> Result<Outcome> {
    let m = DesignConfig {
        family: DesignKind::EntryGame,
        n_firms: Some(3),
        theta_rc: Some(2.4),
        ..Default::default()
    }
    .build_model()?;
    let theta = m.type_params()[0].clone();
    let (nj, nx) = (m.n_firms(), m.n_states());
    let eq = solve_game_equilibrium(&m, 0, &CcpProfile::uniform(nj, nx, 2))?;
    let map = EplMap::new(&m, &theta)?;
    let v0: Vec<f64> = eq.as_slice().chunks_exact(2).flat_map(|p| [0.0, p[1].ln() - p[0].ln()]).collect();
    let mut v = vec![0.0; v0.len()];
    map.apply(&v0, &mut v);
    let newton = make_gamma(InnerAlgorithm::Newton, Truncation::Converge).with_tol(1e-13);
    let (v, _) = newton.solve_diff_map(&map, &v)?;

    let lin = EplLinearization::new(&m, &theta, &v)?;
    let rhs = lin.separable_rhs(&v);
    let gm = make_gamma(InnerAlgorithm::Gmres, Truncation::Converge).with_tol(1e-14);
    let (ys, _) = gm.solve_linear_many(&lin, &rhs, &vec![vec![0.0; v.len()]; rhs.len()])?;
    let mut step: Vec<f64> = ys[0].iter().map(|y| -y).collect();
    for (t, y) in theta.iter().zip(&ys[1..]) {
        for (s, yi) in step.iter_mut().zip(y) {
            *s += t * yi;
        }
    }
    let residual = sup_norm(&step);
    Ok(Outcome::new(
        residual <= 1e-8,
        format!("equilibrium residual <= {EQUILIBRIUM_TOL:.0e}; EPL step sup-norm {residual:.2e} (tol 1e-8)"),
    ))
}

fn solver_suite() -> Result<Outcome> {
    let mut checks = Vec::new();

    let mut gmres_gap: f64 = 0.0;
    for (k, n) in [10usize, 80, 320, 640].into_iter().enumerate() {
        let f = random_stochastic(n, 100 + k as u64);
        let beta = 0.95;
        let a = DenseMatrix::from_fn(n, |i, j| if i == j { 1.0 } else { 0.0 } - beta * f.get(i, j));
        let b = pseudo_random(n, 200 + k as u64);
        let direct = dense_solve(&a, &b)?;
        let op = FnOperator::new(n, |x: &[f64], out: &mut [f64]| a.apply(x, out));
        let (sol, _) = gmres(&op, &b, &vec![0.0; n], n, 1e-13)?;
        gmres_gap = gmres_gap.max(sup_diff(&sol, &direct));
    }
    checks.push((gmres_gap <= 1e-8, format!("GMRES vs dense {gmres_gap:.1e}")));

    let factors = vec![random_stochastic(3, 1), random_stochastic(4, 2), random_stochastic(5, 3)];
    let kron = KroneckerOperator::new(factors.clone())?;
    let n = kron.dim();
    let dense = DenseMatrix::from_fn(n, |i, j| {
        let (i0, i1, i2) = (i / 20, (i / 5) % 4, i % 5);
        let (j0, j1, j2) = (j / 20, (j / 5) % 4, j % 5);
        factors[0].get(i0, j0) * factors[1].get(i1, j1) * factors[2].get(i2, j2)
    });
    let x = pseudo_random(n, 9);
    let mut expected = vec![0.0; n];
    dense.apply(&x, &mut expected);
    let kron_gap = sup_diff(&kron_matvec(&factors, &x)?, &expected);
    checks.push((kron_gap <= 1e-12, format!("Kronecker vs dense {kron_gap:.1e}")));

    let m = small_single_agent()?;
    let nx = m.n_states();
    let theta = m.type_params()[0].clone();
    let bellman = BellmanMap::new(&m, 0, &theta, &CcpProfile::uniform(1, nx, 2))?;
    let mut worst_ratio: f64 = 0.0;
    for pair in 0..100u64 {
        let a: Vec<f64> = pseudo_random(nx, 2 * pair).iter().map(|u| 20.0 * u).collect();
        let b: Vec<f64> = pseudo_random(nx, 2 * pair + 1).iter().map(|u| 20.0 * u).collect();
        let (mut ga, mut gb) = (vec![0.0; nx], vec![0.0; nx]);
        bellman.apply(&a, &mut ga);
        bellman.apply(&b, &mut gb);
        worst_ratio = worst_ratio.max(sup_diff(&ga, &gb) / sup_diff(&a, &b));
    }
    checks.push((worst_ratio <= m.beta() + 1e-12, format!("Bellman modulus {worst_ratio:.4} (beta {})", m.beta())));

    let mut grad_gap: f64 = 0.0;
    for seed in 0..20u64 {
        let v: Vec<f64> = pseudo_random(3, 50 + seed).iter().map(|u| 5.0 * u).collect();
        let p = logit_ccp(&v);
        for k in 0..3 {
            let h = 1e-6;
            let (mut up, mut dn) = (v.clone(), v.clone());
            up[k] += h;
            dn[k] -= h;
            let fd = (social_surplus(&up) - social_surplus(&dn)) / (2.0 * h);
            grad_gap = grad_gap.max((fd - p[k]).abs());
        }
    }
    checks.push((grad_gap <= 1e-6, format!("logit vs surplus gradient {grad_gap:.1e}")));

    let design = DesignConfig {
        n_grid: Some(3),
        theta: Some(vec![vec![1.5, 1.5, -0.3, -0.3, -0.2, -0.3, -1.0]]),
        n_markets: Some(400),
        ..Default::default()
    }
    .build()?;
    let data = design.simulate(5)?;
    let counts = PanelCounts::new(&data, &design.model)?;
    let ccp = &design.policies[0];
    let (op, rhs) = w_components_system(&design.model, 0, ccp)?;
    let gm = make_gamma(InnerAlgorithm::Gmres, Truncation::Converge).with_tol(1e-12);
    let (w, _) = gm.solve_linear_many(&op, &rhs, &vec![vec![0.0; design.model.n_states()]; rhs.len()])?;
    let logit_design = pv_design(&design.model, ccp, &[w]);
    let cell_counts = counts.weighted(&vec![1.0; counts.n_markets()]);
    let opts = LogitOptions {
        grad_tol: 1e-10,
        ..LogitOptions::default()
    };
    let fit = separable_m_step(&logit_design, &cell_counts, &vec![0.0; design.model.n_params()], &opts)?;
    checks.push((fit.grad_norm <= 1e-8, format!("M-step gradient {:.1e}", fit.grad_norm)));

    Ok(Outcome::new(
        checks.iter().all(|(ok, _)| *ok),
        checks.into_iter().map(|(_, s)| s).collect::<Vec<_>>().join("; "),
    ))
}

fn consistency() -> Result<Outcome> {
    let design_config = DesignConfig {
        n_grid: Some(3),
        n_markets: Some(20_000),
        theta: Some(vec![
            vec![1.5, 1.5, -0.3, -0.3, -0.2, -0.3, -1.0],
            vec![0.2, 0.2, -0.2, -3.5, -2.0, -0.5, -3.0],
        ]),
        pi: Some(vec![0.6, 0.4]),
        ..Default::default()
    };
    let design = design_config.build()?;
    let config = EstimateConfig {
        design: design_config,
        n_starts: 1,
        eps_outer: 1e-6,
        ccp_update: CcpUpdate::Spectral,
        ..Default::default()
    };
    let mut covered_runs = 0;
    let mut worst_z: f64 = 0.0;
    let runs = 20;
    for r in 0..runs {
        let data = design.simulate(1000 + r)?;
        let out = estimate_once(&EstimateConfig { seed: r, ..config.clone() }, &data)?;
        let state = &out.result.state;
        let Some(cov) = &out.result.covariance else {
            continue;
        };
        let labels = match_labels(&state.theta, &state.pi, &design.theta, &design.pi)?;
        let d = design.model.n_params();
        let mut z_max: f64 = 0.0;
        for (m, &s) in labels.permutation.iter().enumerate() {
            for l in 0..d {
                let se = cov.std_errors[s * d + l];
                z_max = z_max.max((state.theta[s][l] - design.theta[m][l]).abs() / se);
            }
        }
        let pi_hat = permute(&state.pi, &labels.permutation);
        let se_pi = cov.std_errors[2 * d];
        z_max = z_max.max((pi_hat[0] - design.pi[0]).abs() / se_pi);
        worst_z = worst_z.max(z_max);
        if z_max <= 3.0 {
            covered_runs += 1;
        }
    }
    Ok(Outcome::new(
        covered_runs >= 18,
        format!("{covered_runs}/{runs} runs with every coordinate within 3 SE (need 18); largest |z| {worst_z:.2}"),
    ))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let strict = std::env::var("EMNPL_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failures = 0;
    for c in CRITERIA.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let outcome = (c.run)();
        let secs = start.elapsed().as_secs_f64();
        let within_budget = c.budget_secs.is_none_or(|b| secs <= b);
        let budget = c.budget_secs.map_or(String::new(), |b| format!(" / {b:.0}s"));
        let (pass, detail) = match outcome {
            Ok(o) => (o.pass && within_budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {:>2} {:<28} {} | {detail} | {secs:.1}s{budget}",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if strict && failures > 0 {
        std::process::exit(1);
    }
}
