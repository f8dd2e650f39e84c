use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::logit::{fit_logit, LogitCells, LogitOptions};
use crate::model::{logit_ccp_into, CcpProfile, MixtureDdcModel, PanelData};
use crate::{Error, Result};

/// Laplace smoothing used by [`frequency_ccp`].
pub const LAPLACE_SMOOTHING: f64 = 0.5;

/// Smoothed frequency estimator `(count(a, x) + s)/(count(x) + s|A|)`.
/// Unvisited states get uniform CCPs.
pub fn frequency_ccp(data: &PanelData, model: &MixtureDdcModel, smoothing: f64) -> Result<CcpProfile> {
    data.validate_against(model)?;
    let (nj, nx, na) = (model.n_firms(), model.n_states(), model.n_actions());
    let mut counts = vec![0.0; nj * nx * na];
    for i in 0..data.n_markets() {
        for t in 0..data.n_periods() {
            let x = data.state(i, t);
            for j in 0..nj {
                counts[(j * nx + x) * na + data.action(i, t, j)] += 1.0;
            }
        }
    }
    let mut probs = vec![0.0; counts.len()];
    for (c, p) in counts.chunks_exact(na).zip(probs.chunks_exact_mut(na)) {
        let total: f64 = c.iter().sum();
        let denom = total + smoothing * na as f64;
        for (pi, ci) in p.iter_mut().zip(c) {
            *pi = if denom > 0.0 { (ci + smoothing) / denom } else { 1.0 / na as f64 };
        }
    }
    CcpProfile::from_vec(nj, nx, na, probs)
}

/// How type-specific sieve CCPs are started before the reduced-form EM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SieveStart {
    /// k-means on per-market CCP estimates, then per-cluster sieve logits.
    Clustered,
    /// Pooled sieve coefficients perturbed by scaled normal draws, uniform π.
    Random,
}

/// Settings of the sieve-logit initializer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SieveInitConfig {
    pub degree: usize,
    pub n_types: usize,
    /// k-means restarts.
    pub restarts: usize,
    /// k-means cluster count; `None` uses `n_types`.
    pub clusters: Option<usize>,
    /// Relative log-likelihood tolerance of the reduced-form EM.
    pub em_tol: f64,
    pub em_max_iter: usize,
    /// Ridge penalty of the sieve logits.
    pub ridge: f64,
    /// Standard deviation of coefficient perturbations for random starts.
    pub random_scale: f64,
}

impl Default for SieveInitConfig {
    fn default() -> Self {
        SieveInitConfig {
            degree: 2,
            n_types: 1,
            restarts: 20,
            clusters: None,
            em_tol: 1e-6,
            em_max_iter: 200,
            ridge: 1e-4,
            random_scale: 1.0,
        }
    }
}

/// Initial type CCPs on the full grid and mixing weights.
#[derive(Debug, Clone)]
pub struct SieveInit {
    pub ccps: Vec<CcpProfile>,
    pub pi: Vec<f64>,
    pub log_likelihood: f64,
    pub em_iterations: usize,
}

/// Polynomial basis in standardized state features, with intercept. Powers
/// of binary features are skipped since they duplicate lower terms.
#[derive(Debug, Clone)]
pub struct SieveBasis {
    n_terms: usize,
    values: Vec<f64>,
}

impl SieveBasis {
    pub fn new(model: &MixtureDdcModel, degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::Config("sieve degree must be at least 1".into()));
        }
        let nx = model.n_states();
        let nf = model.n_features();
        let mut mean = vec![0.0; nf];
        let mut sd = vec![0.0; nf];
        let mut binary = vec![true; nf];
        for f in 0..nf {
            let vals: Vec<f64> = (0..nx).map(|x| model.state_features(x)[f]).collect();
            mean[f] = vals.iter().sum::<f64>() / nx as f64;
            sd[f] = (vals.iter().map(|v| (v - mean[f]).powi(2)).sum::<f64>() / nx as f64).sqrt();
            let mut distinct: Vec<f64> = vals.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            binary[f] = distinct.len() <= 2;
        }
        let usable: Vec<usize> = (0..nf).filter(|&f| sd[f] > 0.0).collect();
        let mut terms: Vec<Vec<usize>> = vec![vec![]];
        let mut frontier: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..degree {
            let mut next = Vec::new();
            for t in &frontier {
                let start = t.last().map_or(0, |&l| usable.iter().position(|&u| u == l).unwrap_or(0));
                for &f in &usable[start..] {
                    if binary[f] && t.contains(&f) {
                        continue;
                    }
                    let mut nt = t.clone();
                    nt.push(f);
                    next.push(nt);
                }
            }
            terms.extend(next.iter().cloned());
            frontier = next;
        }
        let n_terms = terms.len();
        let mut values = Vec::with_capacity(nx * n_terms);
        for x in 0..nx {
            let raw = model.state_features(x);
            let z: Vec<f64> = (0..nf)
                .map(|f| if sd[f] > 0.0 { (raw[f] - mean[f]) / sd[f] } else { 0.0 })
                .collect();
            for t in &terms {
                values.push(t.iter().map(|&f| z[f]).product());
            }
        }
        Ok(SieveBasis { n_terms, values })
    }

    /// Basis with only the intercept.
    pub fn intercept_only(n_states: usize) -> Self {
        SieveBasis {
            n_terms: 1,
            values: vec![1.0; n_states],
        }
    }

    pub fn n_terms(&self) -> usize {
        self.n_terms
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.n_terms..(state + 1) * self.n_terms]
    }
}

// Observations of a panel flattened as (market, state, firm, action).
struct Observations<'a> {
    data: &'a PanelData,
}

impl Observations<'_> {
    fn for_market(&self, i: usize, mut f: impl FnMut(usize, usize, usize)) {
        let d = self.data;
        for t in 0..d.n_periods() {
            let x = d.state(i, t);
            for j in 0..d.n_firms() {
                f(x, j, d.action(i, t, j));
            }
        }
    }
}

/// Multinomial sieve logits: firm `j` of type `m` has coefficients
/// `α[m][j]`, `[(action − 1)][term]` with action 0 as the base.
struct SieveModel<'a> {
    basis: &'a SieveBasis,
    n_firms: usize,
    n_states: usize,
    n_actions: usize,
}

impl SieveModel<'_> {
    fn n_coef(&self) -> usize {
        (self.n_actions - 1) * self.basis.n_terms()
    }

    fn ccp(&self, alpha: &[Vec<f64>]) -> CcpProfile {
        let (nj, nx, na, k) = (self.n_firms, self.n_states, self.n_actions, self.basis.n_terms());
        let mut probs = vec![0.0; nj * nx * na];
        let mut u = vec![0.0; na];
        for j in 0..nj {
            for x in 0..nx {
                let b = self.basis.row(x);
                u[0] = 0.0;
                for a in 1..na {
                    u[a] = alpha[j][(a - 1) * k..a * k].iter().zip(b).map(|(c, v)| c * v).sum();
                }
                logit_ccp_into(&u, &mut probs[(j * nx + x) * na..(j * nx + x + 1) * na]);
            }
        }
        CcpProfile::from_vec(nj, nx, na, probs).expect("logit probabilities are valid")
    }

    // Weighted cell counts `[firm][state][action]`.
    fn fit(&self, counts: &[f64], alpha0: &[Vec<f64>], ridge: f64) -> Result<Vec<Vec<f64>>> {
        let (nj, nx, na, k) = (self.n_firms, self.n_states, self.n_actions, self.basis.n_terms());
        let d = self.n_coef();
        let opts = LogitOptions {
            grad_tol: 1e-8,
            max_iter: 200,
            ridge,
        };
        let mut out = Vec::with_capacity(nj);
        let mut z = vec![0.0; na * d];
        for j in 0..nj {
            let mut cells = LogitCells::new(na, d);
            for x in 0..nx {
                let n = &counts[(j * nx + x) * na..(j * nx + x + 1) * na];
                if n.iter().sum::<f64>() <= 0.0 {
                    continue;
                }
                z.iter_mut().for_each(|v| *v = 0.0);
                let b = self.basis.row(x);
                for a in 1..na {
                    z[a * d + (a - 1) * k..a * d + a * k].copy_from_slice(b);
                }
                cells.push(&z, &vec![0.0; na], n);
            }
            if cells.is_empty() {
                out.push(alpha0[j].clone());
                continue;
            }
            out.push(fit_logit(&cells, &alpha0[j], &opts)?.theta);
        }
        Ok(out)
    }
}

fn weighted_counts(data: &PanelData, model: &MixtureDdcModel, weights: &[f64]) -> Vec<f64> {
    let (nj, nx, na) = (model.n_firms(), model.n_states(), model.n_actions());
    let mut counts = vec![0.0; nj * nx * na];
    let obs = Observations { data };
    for (i, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        obs.for_market(i, |x, j, a| counts[(j * nx + x) * na + a] += w);
    }
    counts
}

/// Per-market log-likelihood under a CCP profile.
pub fn market_log_likelihoods(data: &PanelData, ccp: &CcpProfile) -> Vec<f64> {
    let obs = Observations { data };
    (0..data.n_markets())
        .map(|i| {
            let mut ll = 0.0;
            obs.for_market(i, |x, j, a| ll += ccp.get(j, x, a).ln());
            ll
        })
        .collect()
}

/// Posterior type weights `[market][type]` and the mixture log-likelihood,
/// computed in log space.
pub fn posterior_weights(log_lik: &[Vec<f64>], pi: &[f64]) -> (Vec<Vec<f64>>, f64) {
    let n = log_lik.first().map_or(0, Vec::len);
    let m = pi.len();
    let mut total = 0.0;
    let mut w = vec![vec![0.0; m]; n];
    for i in 0..n {
        let terms: Vec<f64> = (0..m).map(|k| pi[k].ln() + log_lik[k][i]).collect();
        let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = terms.iter().map(|t| (t - mx).exp()).sum();
        let lse = mx + s.ln();
        total += lse;
        for k in 0..m {
            w[i][k] = (terms[k] - lse).exp();
        }
    }
    (w, total)
}

/// Sieve-logit initial CCPs and mixing weights for `config.n_types` types.
pub fn sieve_logit_init(
    data: &PanelData,
    model: &MixtureDdcModel,
    config: &SieveInitConfig,
    start: SieveStart,
    seed: u64,
) -> Result<SieveInit> {
    data.validate_against(model)?;
    if config.n_types == 0 {
        return Err(Error::Config("sieve init needs at least one type".into()));
    }
    let basis = SieveBasis::new(model, config.degree)?;
    sieve_init_with_basis(data, model, &basis, config, start, seed)
}

/// [`sieve_logit_init`] with a caller-supplied basis.
pub fn sieve_init_with_basis(
    data: &PanelData,
    model: &MixtureDdcModel,
    basis: &SieveBasis,
    config: &SieveInitConfig,
    start: SieveStart,
    seed: u64,
) -> Result<SieveInit> {
    let n_types = config.n_types;
    let n = data.n_markets();
    let sieve = SieveModel {
        basis,
        n_firms: model.n_firms(),
        n_states: model.n_states(),
        n_actions: model.n_actions(),
    };
    let zero = vec![vec![0.0; sieve.n_coef()]; sieve.n_firms];
    let pooled = sieve.fit(&weighted_counts(data, model, &vec![1.0; n]), &zero, config.ridge)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (mut alpha, mut pi): (Vec<Vec<Vec<f64>>>, Vec<f64>) = if n_types == 1 {
        (vec![pooled.clone()], vec![1.0])
    } else {
        match start {
            SieveStart::Clustered => {
                let k = config.clusters.unwrap_or(n_types).max(n_types);
                let labels = cluster_markets(data, model, k, config.restarts, &mut rng)?;
                let mut sizes = vec![0usize; k];
                labels.iter().for_each(|&l| sizes[l] += 1);
                let mut order: Vec<usize> = (0..k).collect();
                order.sort_by_key(|&c| std::cmp::Reverse(sizes[c]));
                let keep = &order[..n_types];
                let mut alpha = Vec::with_capacity(n_types);
                let mut pi = Vec::with_capacity(n_types);
                for &c in keep {
                    let w: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect();
                    alpha.push(sieve.fit(&weighted_counts(data, model, &w), &pooled, config.ridge)?);
                    pi.push(sizes[c] as f64);
                }
                let total: f64 = pi.iter().sum();
                pi.iter_mut().for_each(|p| *p /= total);
                (alpha, pi)
            }
            SieveStart::Random => {
                let alpha = (0..n_types)
                    .map(|_| {
                        pooled
                            .iter()
                            .map(|a| {
                                a.iter()
                                    .map(|c| c + config.random_scale * rng.sample::<f64, _>(StandardNormal))
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
                (alpha, vec![1.0 / n_types as f64; n_types])
            }
        }
    };

    let mut ccps: Vec<CcpProfile> = alpha.iter().map(|a| sieve.ccp(a)).collect();
    let mut ll_prev = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut log_likelihood;
    loop {
        let log_lik: Vec<Vec<f64>> = ccps.iter().map(|p| market_log_likelihoods(data, p)).collect();
        let (w, ll) = posterior_weights(&log_lik, &pi);
        log_likelihood = ll;
        if n_types == 1
            || iterations >= config.em_max_iter
            || (ll - ll_prev).abs() <= config.em_tol * (1.0 + ll.abs())
        {
            break;
        }
        ll_prev = ll;
        for m in 0..n_types {
            let wm: Vec<f64> = w.iter().map(|r| r[m]).collect();
            pi[m] = (wm.iter().sum::<f64>() / n as f64).max(1e-12);
            alpha[m] = sieve.fit(&weighted_counts(data, model, &wm), &alpha[m], config.ridge)?;
        }
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
        ccps = alpha.iter().map(|a| sieve.ccp(a)).collect();
        iterations += 1;
    }
    Ok(SieveInit {
        ccps,
        pi,
        log_likelihood,
        em_iterations: iterations,
    })
}

// Per-market CCP vectors over visited (firm, state) cells, stored as the pooled
// vector plus sparse deviations.
struct MarketVectors {
    pooled: Vec<f64>,
    deviations: Vec<Vec<(usize, f64)>>,
}

impl MarketVectors {
    fn build(data: &PanelData, model: &MixtureDdcModel) -> Self {
        let (nj, nx, na) = (model.n_firms(), model.n_states(), model.n_actions());
        let mut slot = vec![usize::MAX; nx];
        let mut n_visited = 0;
        for i in 0..data.n_markets() {
            for &x in data.market_states(i) {
                if slot[x] == usize::MAX {
                    slot[x] = n_visited;
                    n_visited += 1;
                }
            }
        }
        let width = na - 1;
        let dim = nj * n_visited * width;
        let index = |j: usize, x: usize, a: usize| (j * n_visited + slot[x]) * width + a - 1;
        let mut pooled_num = vec![0.0; dim];
        let mut pooled_den = vec![0.0; nj * n_visited];
        let obs = Observations { data };
        let mut per_market = Vec::with_capacity(data.n_markets());
        for i in 0..data.n_markets() {
            let mut num: std::collections::BTreeMap<usize, f64> = Default::default();
            let mut den: std::collections::BTreeMap<usize, f64> = Default::default();
            obs.for_market(i, |x, j, a| {
                *den.entry(j * n_visited + slot[x]).or_default() += 1.0;
                pooled_den[j * n_visited + slot[x]] += 1.0;
                for b in 1..na {
                    num.entry(index(j, x, b)).or_default();
                }
                if a > 0 {
                    *num.get_mut(&index(j, x, a)).expect("inserted above") += 1.0;
                    pooled_num[index(j, x, a)] += 1.0;
                }
            });
            per_market.push((num, den));
        }
        let pooled: Vec<f64> = (0..dim).map(|s| pooled_num[s] / pooled_den[s / width]).collect();
        let deviations = per_market
            .into_iter()
            .map(|(num, den)| {
                num.into_iter()
                    .map(|(s, c)| (s, c / den[&(s / width)] - pooled[s]))
                    .collect()
            })
            .collect();
        MarketVectors { pooled, deviations }
    }

    fn dense(&self, i: usize) -> Vec<f64> {
        let mut v = self.pooled.clone();
        for &(s, d) in &self.deviations[i] {
            v[s] += d;
        }
        v
    }

    fn distance(&self, i: usize, centroid: &[f64], base: f64) -> f64 {
        let mut d = base;
        for &(s, dev) in &self.deviations[i] {
            let p = self.pooled[s] - centroid[s];
            let u = p + dev;
            d += u * u - p * p;
        }
        d.max(0.0)
    }
}

fn base_distance(pooled: &[f64], centroid: &[f64]) -> f64 {
    pooled.iter().zip(centroid).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// k-means labels of markets into `k` clusters, best of `restarts` k-means++ runs.
fn cluster_markets(
    data: &PanelData,
    model: &MixtureDdcModel,
    k: usize,
    restarts: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let n = data.n_markets();
    if k > n {
        return Err(Error::Clustering(format!("cannot form {k} clusters from {n} markets")));
    }
    let vecs = MarketVectors::build(data, model);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let (inertia, labels) = kmeans_run(&vecs, n, k, rng)?;
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    Ok(best.expect("at least one restart").1)
}

fn kmeans_run(vecs: &MarketVectors, n: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<(f64, Vec<usize>)> {
    let mut centroids = vec![vecs.dense(rng.random_range(0..n))];
    let mut nearest = vec![f64::INFINITY; n];
    while centroids.len() < k {
        let c = centroids.last().expect("non-empty");
        let base = base_distance(&vecs.pooled, c);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(vecs.distance(i, c, base));
        }
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.push(vecs.dense(pick));
    }

    let mut labels = vec![0usize; n];
    let mut reseeds = 0;
    let mut inertia = f64::INFINITY;
    for _ in 0..100 {
        let bases: Vec<f64> = centroids.iter().map(|c| base_distance(&vecs.pooled, c)).collect();
        let mut changed = false;
        let mut dist = vec![0.0; n];
        for i in 0..n {
            let (best, d) = (0..k)
                .map(|c| (c, vecs.distance(i, &centroids[c], bases[c])))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("k >= 1");
            if labels[i] != best {
                changed = true;
            }
            labels[i] = best;
            dist[i] = d;
        }
        inertia = dist.iter().sum();
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            reseeds += 1;
            if reseeds > 10 {
                return Err(Error::Clustering("k-means cluster stayed empty after 10 re-seeds".into()));
            }
            let far = (0..n).max_by(|&a, &b| dist[a].total_cmp(&dist[b])).expect("n >= 1");
            centroids[empty] = vecs.dense(far);
            continue;
        }
        if !changed && inertia.is_finite() {
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            centroid.copy_from_slice(&vecs.pooled);
            let scale = 1.0 / sizes[c] as f64;
            for (i, _) in labels.iter().enumerate().filter(|(_, &l)| l == c) {
                for &(s, d) in &vecs.deviations[i] {
                    centroid[s] += scale * d;
                }
            }
        }
    }
    Ok((inertia, labels))
}
