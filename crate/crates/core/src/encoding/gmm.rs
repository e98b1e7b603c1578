//! Diagonal-covariance Gaussian mixture fitted by EM.
//!
//! The E-step runs over fixed-size row chunks in parallel and the partial
//! sums are reduced in chunk order, so results do not depend on the thread
//! count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmConfig {
    pub components: usize,
    pub max_iter: usize,
    /// Stop when the log-likelihood gain falls below `tol·|LL|`.
    pub tol: f64,
    /// Per-dimension variance floor relative to the data variance.
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            components: 256,
            max_iter: 200,
            tol: 1e-6,
            variance_floor: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace {
    /// Total log-likelihood of the parameters entering each iteration.
    pub log_likelihood: Vec<f64>,
    /// Iterations after which a component was re-seeded (the log-likelihood
    /// may drop there).
    pub reinit_at: Vec<usize>,
    pub converged: bool,
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.variances.len() != k {
            return Err(Error::Shape("GMM parameter arrays disagree".into()));
        }
        let d = self.dims();
        if self
            .means
            .iter()
            .chain(&self.variances)
            .any(|v| v.len() != d)
        {
            return Err(Error::Shape("GMM component dimensions disagree".into()));
        }
        if self.weights.iter().any(|w| !(*w > 0.0))
            || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-8
        {
            return Err(Error::Range(
                "GMM weights must be positive and sum to 1".into(),
            ));
        }
        if self
            .variances
            .iter()
            .flatten()
            .any(|v| !(*v > 0.0) || !v.is_finite())
        {
            return Err(Error::Range("GMM variances must be positive".into()));
        }
        Ok(())
    }

    /// Precomputed per-component constants for fast density evaluation.
    pub fn evaluator(&self) -> GmmEval {
        let d = self.dims();
        let k = self.components();
        let mut inv_var = Vec::with_capacity(k * d);
        let mut inv_sd = Vec::with_capacity(k * d);
        let mut means = Vec::with_capacity(k * d);
        let mut log_norm = Vec::with_capacity(k);
        for i in 0..k {
            let mut ln = self.weights[i].ln() - 0.5 * d as f64 * LN_2PI;
            for j in 0..d {
                let v = self.variances[i][j];
                inv_var.push(1.0 / v);
                inv_sd.push(1.0 / v.sqrt());
                means.push(self.means[i][j]);
                ln -= 0.5 * v.ln();
            }
            log_norm.push(ln);
        }
        GmmEval {
            k,
            d,
            means,
            inv_var,
            inv_sd,
            log_norm,
            sqrt_w: self.weights.iter().map(|w| w.sqrt()).collect(),
        }
    }

    /// Soft assignment of `x` to each component.
    pub fn posteriors(&self, x: &[f64]) -> Vec<f64> {
        let ev = self.evaluator();
        let mut g = vec![0.0; self.components()];
        ev.posteriors_into(x, &mut g);
        g
    }

    pub fn log_likelihood(&self, data: &[Vec<f64>]) -> f64 {
        let ev = self.evaluator();
        let mut g = vec![0.0; self.components()];
        data.iter().map(|x| ev.posteriors_into(x, &mut g)).sum()
    }
}

#[derive(Debug, Clone)]
pub struct GmmEval {
    pub(crate) k: usize,
    pub(crate) d: usize,
    pub(crate) means: Vec<f64>,
    pub(crate) inv_var: Vec<f64>,
    pub(crate) inv_sd: Vec<f64>,
    log_norm: Vec<f64>,
    pub(crate) sqrt_w: Vec<f64>,
}

impl GmmEval {
    /// Fills `gamma` with posteriors and returns `log p(x)`.
    pub fn posteriors_into(&self, x: &[f64], gamma: &mut [f64]) -> f64 {
        let d = self.d;
        let mut best = f64::NEG_INFINITY;
        for i in 0..self.k {
            let mu = &self.means[i * d..(i + 1) * d];
            let iv = &self.inv_var[i * d..(i + 1) * d];
            let mut q = 0.0;
            for j in 0..d {
                let z = x[j] - mu[j];
                q += z * z * iv[j];
            }
            let l = self.log_norm[i] - 0.5 * q;
            gamma[i] = l;
            best = best.max(l);
        }
        let mut s = 0.0;
        for g in gamma.iter_mut() {
            *g = (*g - best).exp();
            s += *g;
        }
        for g in gamma.iter_mut() {
            *g /= s;
        }
        best + s.ln()
    }
}

struct Stats {
    ll: f64,
    n: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
    /// Lowest per-row log-density and its row, for re-seeding.
    worst: (f64, usize),
}

impl Stats {
    fn zeros(k: usize, d: usize) -> Self {
        Stats {
            ll: 0.0,
            n: vec![0.0; k],
            s1: vec![0.0; k * d],
            s2: vec![0.0; k * d],
            worst: (f64::INFINITY, usize::MAX),
        }
    }

    fn add(&mut self, o: &Stats) {
        self.ll += o.ll;
        for (a, b) in self.n.iter_mut().zip(&o.n) {
            *a += b;
        }
        for (a, b) in self.s1.iter_mut().zip(&o.s1) {
            *a += b;
        }
        for (a, b) in self.s2.iter_mut().zip(&o.s2) {
            *a += b;
        }
        if o.worst.0 < self.worst.0 {
            self.worst = o.worst;
        }
    }
}

fn e_step(ev: &GmmEval, data: &[Vec<f64>]) -> Stats {
    let (k, d) = (ev.k, ev.d);
    let parts: Vec<Stats> = data
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, rows)| {
            let mut st = Stats::zeros(k, d);
            let mut g = vec![0.0; k];
            for (r, x) in rows.iter().enumerate() {
                let lp = ev.posteriors_into(x, &mut g);
                st.ll += lp;
                if lp < st.worst.0 {
                    st.worst = (lp, c * CHUNK + r);
                }
                for i in 0..k {
                    let gi = g[i];
                    if gi < 1e-300 {
                        continue;
                    }
                    st.n[i] += gi;
                    let s1 = &mut st.s1[i * d..(i + 1) * d];
                    for j in 0..d {
                        s1[j] += gi * x[j];
                    }
                    let s2 = &mut st.s2[i * d..(i + 1) * d];
                    for j in 0..d {
                        s2[j] += gi * x[j] * x[j];
                    }
                }
            }
            st
        })
        .collect();
    let mut total = Stats::zeros(k, d);
    for p in &parts {
        total.add(p);
    }
    total
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centers = vec![data[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &v) in d2.iter().enumerate() {
                if r < v {
                    pick = i;
                    break;
                }
                r -= v;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = data[idx].clone();
        for (x, dd) in data.iter().zip(d2.iter_mut()) {
            *dd = dd.min(sq_dist(x, &c));
        }
        centers.push(c);
    }
    centers
}

/// EM fit with k-means++ seeding. Returns the model and its likelihood trace.
pub fn fit_gmm(data: &[Vec<f64>], cfg: &GmmConfig) -> Result<(GmmModel, FitTrace)> {
    let k = cfg.components;
    let n = data.len();
    if k == 0 {
        return Err(Error::Config("GMM needs at least one component".into()));
    }
    if n < k {
        return Err(Error::EmptyInput(format!(
            "{n} rows cannot support {k} components"
        )));
    }
    if n < 10 * k {
        log::warn!("fitting {k} components on only {n} rows");
    }
    let d = data[0].len();
    if d == 0 || data.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("GMM rows must share a positive length".into()));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Range("GMM data contains non-finite values".into()));
    }

    let mean: Vec<f64> = (0..d)
        .map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let global_var: Vec<f64> = (0..d)
        .map(|j| data.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64)
        .collect();
    let fallback = global_var.iter().copied().fold(0.0, f64::max).max(1e-12);
    let floor: Vec<f64> = global_var
        .iter()
        .map(|&v| cfg.variance_floor * if v > 0.0 { v } else { fallback })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = kmeans_pp(data, k, &mut rng);

    // Initial parameters from the hard nearest-center partition.
    let mut count = vec![0usize; k];
    let mut s1 = vec![vec![0.0; d]; k];
    let mut s2 = vec![vec![0.0; d]; k];
    for x in data {
        let c = (0..k)
            .min_by(|&a, &b| sq_dist(x, &centers[a]).total_cmp(&sq_dist(x, &centers[b])))
            .unwrap();
        count[c] += 1;
        for j in 0..d {
            s1[c][j] += x[j];
            s2[c][j] += x[j] * x[j];
        }
    }
    let mut model = GmmModel {
        weights: vec![0.0; k],
        means: centers,
        variances: vec![global_var.clone(); k],
    };
    for i in 0..k {
        let c = count[i].max(1) as f64;
        model.weights[i] = c / n as f64;
        if count[i] > 1 {
            for j in 0..d {
                let m = s1[i][j] / c;
                model.means[i][j] = m;
                model.variances[i][j] = (s2[i][j] / c - m * m).max(floor[j]);
            }
        } else {
            for j in 0..d {
                model.variances[i][j] = global_var[j].max(floor[j]);
            }
        }
    }
    let wsum: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= wsum);

    let mut trace = FitTrace::default();
    let mut reseeded = vec![false; k];
    let min_mass = 1e-8 * n as f64;
    for it in 0..cfg.max_iter {
        let st = e_step(&model.evaluator(), data);
        if !st.ll.is_finite() {
            return Err(Error::Fit(format!(
                "non-finite log-likelihood at iteration {it}"
            )));
        }
        if let Some(&prev) = trace.log_likelihood.last() {
            let just_reseeded = trace.reinit_at.last() == Some(&(it - 1));
            if !just_reseeded && st.ll - prev < cfg.tol * st.ll.abs() {
                trace.log_likelihood.push(st.ll);
                trace.converged = true;
                break;
            }
        }
        trace.log_likelihood.push(st.ll);

        let mut reseed = false;
        for i in 0..k {
            if st.n[i] < min_mass {
                if reseeded[i] {
                    return Err(Error::Fit(format!(
                        "component {i} emptied again after re-seeding"
                    )));
                }
                reseeded[i] = true;
                reseed = true;
                model.means[i] = data[st.worst.1].clone();
                model.variances[i] = global_var
                    .iter()
                    .zip(&floor)
                    .map(|(v, f)| v.max(*f))
                    .collect();
                model.weights[i] = 1.0 / n as f64;
                continue;
            }
            model.weights[i] = st.n[i] / n as f64;
            for j in 0..d {
                let m = st.s1[i * d + j] / st.n[i];
                model.means[i][j] = m;
                model.variances[i][j] = (st.s2[i * d + j] / st.n[i] - m * m).max(floor[j]);
            }
        }
        let wsum: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= wsum);
        if reseed {
            trace.reinit_at.push(it);
        }
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    #[test]
    fn single_component_is_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<Vec<f64>> = (0..300)
            .map(|_| vec![normal(&mut rng) * 2.0 + 1.0, normal(&mut rng)])
            .collect();
        let (m, _) = fit_gmm(
            &data,
            &GmmConfig {
                components: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.weights, vec![1.0]);
        for j in 0..2 {
            let mu = data.iter().map(|r| r[j]).sum::<f64>() / 300.0;
            let var = data.iter().map(|r| (r[j] - mu).powi(2)).sum::<f64>() / 300.0;
            assert!((m.means[0][j] - mu).abs() < 1e-10);
            assert!((m.variances[0][j] - var).abs() < 1e-10);
        }
    }

    #[test]
    fn two_separated_clusters_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut data = Vec::new();
        for i in 0..2000 {
            let c = if i % 2 == 0 { [-5.0, 0.0] } else { [5.0, 3.0] };
            data.push(vec![c[0] + normal(&mut rng), c[1] + normal(&mut rng)]);
        }
        let (m, trace) = fit_gmm(
            &data,
            &GmmConfig {
                components: 2,
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(trace.converged);
        let mut idx = [0usize, 1];
        if m.means[0][0] > m.means[1][0] {
            idx = [1, 0];
        }
        for (&i, c) in idx.iter().zip([[-5.0, 0.0], [5.0, 3.0]]) {
            assert!((m.means[i][0] - c[0]).abs() < 0.1 && (m.means[i][1] - c[1]).abs() < 0.1);
            assert!((m.weights[i] - 0.5).abs() < 0.05);
        }
        m.validate().unwrap();
    }

    #[test]
    fn log_likelihood_never_decreases() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<Vec<f64>> = (0..400)
                .map(|i| {
                    (0..3)
                        .map(|j| normal(&mut rng) + ((i % 4) * j) as f64)
                        .collect()
                })
                .collect();
            let (_, trace) = fit_gmm(
                &data,
                &GmmConfig {
                    components: 5,
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            for w in trace.log_likelihood.windows(2) {
                assert!(w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0), "{:?}", w);
            }
        }
    }

    #[test]
    fn posteriors_match_direct_density_ratio() {
        let m = GmmModel {
            weights: vec![0.3, 0.7],
            means: vec![vec![0.0, 1.0], vec![1.5, -0.5]],
            variances: vec![vec![1.0, 0.5], vec![2.0, 0.8]],
        };
        let dens = |i: usize, x: &[f64]| -> f64 {
            let mut p = m.weights[i];
            for j in 0..2 {
                let v = m.variances[i][j];
                p *= (-(x[j] - m.means[i][j]).powi(2) / (2.0 * v)).exp()
                    / (2.0 * std::f64::consts::PI * v).sqrt();
            }
            p
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = [normal(&mut rng) * 2.0, normal(&mut rng) * 2.0];
            let g = m.posteriors(&x);
            let tot = dens(0, &x) + dens(1, &x);
            assert!((g[0] - dens(0, &x) / tot).abs() < 1e-10);
            assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let far = GmmModel {
            weights: vec![0.5, 0.5],
            means: vec![vec![0.0], vec![100.0]],
            variances: vec![vec![1.0], vec![1.0]],
        };
        assert!(far.posteriors(&[0.0])[0] > 0.999);
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<Vec<f64>> = (0..3000)
            .map(|_| vec![normal(&mut rng), normal(&mut rng) * 3.0])
            .collect();
        let cfg = GmmConfig {
            components: 4,
            seed: 5,
            ..Default::default()
        };
        assert_eq!(
            fit_gmm(&data, &cfg).unwrap().0,
            fit_gmm(&data, &cfg).unwrap().0
        );
    }
}
