//! Policy sources the generative model is compared against: replaying the
//! nearest stored throw, perturbing it with noise, a target-conditional
//! kernel density model, and Bayesian optimization seeded by the lookup.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kinematics::{ArmModel, Policy, PolicyBounds};
use crate::math::{self, Vec2};
use crate::repertoire::{nearest_policy, Repertoire};
use crate::rng::{self, PolicyRng};
use crate::world::{self, Episode, ObstacleWorld, SimConfig};

/// The stored policy whose landing is closest to `c`.
pub fn lookup_throw(rep: &Repertoire, c: Vec2) -> Result<Policy> {
    Ok(nearest_policy(rep, c)?.0)
}

/// Adds per-gene noise with std `sigma × range` without clamping.
pub fn perturb_genes(base: &Policy, bounds: &PolicyBounds, sigma: f64, rng: &mut PolicyRng) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument("noise scale must be non-negative".into()));
    }
    let mut genes = base.to_vec();
    crate::error::check_dim(bounds.dim(), genes.len())?;
    if sigma > 0.0 {
        for (k, g) in genes.iter_mut().enumerate() {
            *g += sigma * bounds.range(k) * rng::standard_normal(rng);
        }
    }
    Ok(genes)
}

/// Lookup followed by clamped Gaussian perturbation.
pub fn noisy_lookup(rep: &Repertoire, c: Vec2, sigma: f64, bounds: &PolicyBounds, rng: &mut PolicyRng) -> Result<Policy> {
    let base = lookup_throw(rep, c)?;
    let mut genes = perturb_genes(&base, bounds, sigma, rng)?;
    bounds.clamp(&mut genes);
    Policy::from_slice(&genes)
}

pub const DEFAULT_KDE_BANDWIDTH_C: f64 = 0.15;
pub const DEFAULT_KDE_BANDWIDTH_PI: f64 = 0.05;

/// Mixture over repertoire entries: component `i` is weighted by a Gaussian
/// kernel on the distance between `c` and its landing, and emits `π_i` plus
/// per-gene Gaussian noise.
#[derive(Debug, Clone, Copy)]
pub struct KdeModel<'a> {
    rep: &'a Repertoire,
    bandwidth_c: f64,
    bandwidth_pi: f64,
}

/// Normalized component probabilities for one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeWeights {
    pub probs: Vec<f64>,
    /// Every kernel underflowed and all mass went to the nearest entry.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeSample {
    pub policy: Policy,
    pub component: usize,
    pub fallback: bool,
}

impl<'a> KdeModel<'a> {
    pub fn new(rep: &'a Repertoire, bandwidth_c: f64, bandwidth_pi: f64) -> Result<Self> {
        if rep.is_empty() {
            return Err(Error::EmptyRepertoire);
        }
        if !(bandwidth_c > 0.0) || !(bandwidth_pi >= 0.0) {
            return Err(Error::InvalidArgument("KDE bandwidths must be positive".into()));
        }
        Ok(KdeModel {
            rep,
            bandwidth_c,
            bandwidth_pi,
        })
    }

    pub fn bandwidths(&self) -> (f64, f64) {
        (self.bandwidth_c, self.bandwidth_pi)
    }

    pub fn weights(&self, c: Vec2) -> Result<KdeWeights> {
        let denom = 2.0 * self.bandwidth_c * self.bandwidth_c;
        let mut probs: Vec<f64> = self
            .rep
            .landings()
            .map(|l| {
                let d = math::dist2(l, c);
                libm::exp(-d * d / denom)
            })
            .collect();
        let total: f64 = probs.iter().sum();
        if total > 0.0 {
            probs.iter_mut().for_each(|p| *p /= total);
            return Ok(KdeWeights { probs, fallback: false });
        }
        let (nearest, _) = self.rep.nearest(c)?;
        probs.iter_mut().for_each(|p| *p = 0.0);
        probs[nearest] = 1.0;
        Ok(KdeWeights { probs, fallback: true })
    }

    pub fn sample(&self, c: Vec2, bounds: &PolicyBounds, rng: &mut PolicyRng) -> Result<KdeSample> {
        let w = self.weights(c)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut component = w.probs.len() - 1;
        for (i, p) in w.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                component = i;
                break;
            }
        }
        // Rounding can leave the tail with zero mass.
        while w.probs[component] == 0.0 && component > 0 {
            component -= 1;
        }
        let base = &self.rep.entries()[component].policy;
        let mut genes = perturb_genes(base, bounds, self.bandwidth_pi, rng)?;
        bounds.clamp(&mut genes);
        Ok(KdeSample {
            policy: Policy::from_slice(&genes)?,
            component,
            fallback: w.fallback,
        })
    }

    /// Mean log density of held-out `(π, c)` pairs under the mixture.
    pub fn log_likelihood<'b>(&self, holdout: impl IntoIterator<Item = (&'b Policy, Vec2)>, bounds: &PolicyBounds) -> Result<f64> {
        if !(self.bandwidth_pi > 0.0) {
            return Err(Error::InvalidArgument("likelihood needs a positive policy bandwidth".into()));
        }
        let sig: Vec<f64> = (0..bounds.dim()).map(|k| self.bandwidth_pi * bounds.range(k)).collect();
        let log_norm: f64 = sig.iter().map(|s| libm::log(s * libm::sqrt(2.0 * core::f64::consts::PI))).sum();
        let denom = 2.0 * self.bandwidth_c * self.bandwidth_c;
        let mut total = 0.0;
        let mut n = 0usize;
        let mut terms = Vec::with_capacity(self.rep.len());
        for (policy, c) in holdout {
            let x = policy.to_vec();
            terms.clear();
            for e in self.rep.entries() {
                let d = math::dist2(e.landing, c);
                let log_w = -d * d / denom;
                let q: f64 = e
                    .policy
                    .to_vec()
                    .iter()
                    .zip(&x)
                    .zip(&sig)
                    .map(|((m, v), s)| {
                        let z = (v - m) / s;
                        z * z
                    })
                    .sum();
                terms.push((log_w, log_w - 0.5 * q));
            }
            let lse = |f: &dyn Fn(&(f64, f64)) -> f64| {
                let m = terms.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
                m + libm::log(terms.iter().map(|t| libm::exp(f(t) - m)).sum::<f64>())
            };
            total += lse(&|t| t.1) - lse(&|t| t.0) - log_norm;
            n += 1;
        }
        if n == 0 {
            return Err(Error::InsufficientData { have: 0, need: 1 });
        }
        Ok(total / n as f64)
    }
}

/// Picks the bandwidth pair with the best held-out log-likelihood. Every
/// `holdout_every`-th entry is held out and the rest form the mixture.
pub fn select_kde_bandwidths(
    rep: &Repertoire,
    bounds: &PolicyBounds,
    candidates_c: &[f64],
    candidates_pi: &[f64],
    holdout_every: usize,
) -> Result<((f64, f64), f64)> {
    if holdout_every < 2 || candidates_c.is_empty() || candidates_pi.is_empty() {
        return Err(Error::InvalidArgument("bandwidth search needs candidates and a holdout stride ≥ 2".into()));
    }
    let (held, kept): (Vec<_>, Vec<_>) = rep.entries().iter().enumerate().partition(|(i, _)| i % holdout_every == 0);
    let train = Repertoire::new(kept.into_iter().map(|(_, e)| e.clone()).collect(), rep.meta.clone());
    let mut best: Option<((f64, f64), f64)> = None;
    for &bc in candidates_c {
        for &bp in candidates_pi {
            let model = KdeModel::new(&train, bc, bp)?;
            let ll = model.log_likelihood(held.iter().map(|(_, e)| (&e.policy, e.landing)), bounds)?;
            if best.is_none_or(|(_, b)| ll > b) {
                best = Some(((bc, bp), ll));
            }
        }
    }
    best.ok_or(Error::InsufficientData { have: 0, need: 1 })
}

/// Squared-exponential kernel hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpHyper {
    pub length_scale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl Default for GpHyper {
    fn default() -> Self {
        GpHyper {
            length_scale: 0.2,
            signal_var: 1.0,
            noise_var: 1e-6,
        }
    }
}

/// First jitter tried when the kernel matrix is not positive definite.
pub const JITTER_START: f64 = 1e-8;
pub const JITTER_MAX: f64 = 1e-4;

/// Zero-mean GP posterior over the given observations.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    xs: Vec<Vec<f64>>,
    hyper: GpHyper,
    /// Lower Cholesky factor of `K + (noise + jitter) I`, row-major.
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
}

impl GaussianProcess {
    pub fn fit(xs: Vec<Vec<f64>>, ys: &[f64], hyper: GpHyper) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::InsufficientData {
                have: xs.len().min(ys.len()),
                need: 1,
            });
        }
        if !(hyper.length_scale > 0.0) || !(hyper.signal_var > 0.0) || !(hyper.noise_var >= 0.0) {
            return Err(Error::InvalidArgument("GP hyperparameters must be positive".into()));
        }
        let n = xs.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = se_kernel(&xs[i], &xs[j], &hyper);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        let mut jitter = 0.0;
        let chol = loop {
            if let Some(l) = cholesky(&k, n, hyper.noise_var + jitter) {
                break l;
            }
            jitter = if jitter == 0.0 { JITTER_START } else { jitter * 10.0 };
            if jitter > JITTER_MAX * (1.0 + 1e-9) {
                return Err(Error::CholeskyFailure { jitter: JITTER_MAX });
            }
        };
        let alpha = chol_solve(&chol, n, ys);
        Ok(GaussianProcess {
            xs,
            hyper,
            chol,
            alpha,
            jitter,
        })
    }

    /// Diagonal jitter that was needed for the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior mean and variance at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let n = self.xs.len();
        let ks: Vec<f64> = self.xs.iter().map(|xi| se_kernel(xi, x, &self.hyper)).collect();
        let mean = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = forward_sub(&self.chol, n, &ks);
        let var = self.hyper.signal_var - v.iter().map(|x| x * x).sum::<f64>();
        (mean, var.max(0.0))
    }
}

fn se_kernel(a: &[f64], b: &[f64], h: &GpHyper) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    h.signal_var * libm::exp(-0.5 * d2 / (h.length_scale * h.length_scale))
}

fn cholesky(k: &[f64], n: usize, diag: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = k[i * n + j] + if i == j { diag } else { 0.0 };
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * n + i] = libm::sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn forward_sub(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|p| l[i * n + p] * x[p]).sum();
        x[i] = (b[i] - s) / l[i * n + i];
    }
    x
}

fn chol_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let y = forward_sub(l, n, b);
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|p| l[p * n + i] * x[p]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    x
}

/// Expected improvement over `best` for a maximization problem.
pub fn expected_improvement(mean: f64, var: f64, best: f64) -> f64 {
    let sd = libm::sqrt(var.max(0.0));
    let gain = mean - best;
    if sd < 1e-12 {
        return gain.max(0.0);
    }
    let z = gain / sd;
    let cdf = 0.5 * libm::erfc(-z / core::f64::consts::SQRT_2);
    let pdf = libm::exp(-0.5 * z * z) / libm::sqrt(2.0 * core::f64::consts::PI);
    (gain * cdf + sd * pdf).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesOptConfig {
    /// Number of rollouts, including the lookup seed.
    pub budget: usize,
    /// Candidates scored per acquisition step.
    pub acquisition_samples: usize,
    /// Fraction of candidates drawn around the incumbent instead of
    /// uniformly over the box.
    pub local_fraction: f64,
    /// Std of local candidates in normalized policy units.
    pub local_sigma: f64,
    pub hyper: GpHyper,
    /// Objective penalty for a collision, in multiples of the workspace
    /// diameter.
    pub penalty_factor: f64,
}

impl Default for BayesOptConfig {
    fn default() -> Self {
        BayesOptConfig {
            budget: 10,
            acquisition_samples: 2000,
            local_fraction: 0.5,
            local_sigma: 0.05,
            hyper: GpHyper::default(),
            penalty_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub policy: Policy,
    pub objective: f64,
    pub collided: bool,
    pub episode: Episode,
}

/// Observations of one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesOptState {
    pub history: Vec<Trial>,
    pub hyper: GpHyper,
    pub budget: usize,
}

impl BayesOptState {
    pub fn best_index(&self) -> Option<usize> {
        (0..self.history.len()).max_by(|&a, &b| self.history[a].objective.total_cmp(&self.history[b].objective).then(b.cmp(&a)))
    }

    pub fn best(&self) -> Option<&Trial> {
        self.best_index().map(|i| &self.history[i])
    }
}

/// `−(distance + P · collided)`, with a missing landing counted as one
/// workspace diameter away.
pub fn throw_objective(episode: &Episode, c: Vec2, world: &ObstacleWorld, penalty_factor: f64) -> f64 {
    let diameter = world.bounds().diameter();
    let distance = episode.landing_xy().map_or(diameter, |l| math::dist2(l, c));
    let collided = episode.flags.any_collision();
    -(distance + if collided { penalty_factor * diameter } else { 0.0 })
}

fn to_unit(genes: &[f64], bounds: &PolicyBounds) -> Vec<f64> {
    genes.iter().enumerate().map(|(k, g)| (g - bounds.lo[k]) / bounds.range(k)).collect()
}

fn from_unit(u: &[f64], bounds: &PolicyBounds) -> Vec<f64> {
    u.iter().enumerate().map(|(k, v)| bounds.lo[k] + v.clamp(0.0, 1.0) * bounds.range(k)).collect()
}

/// Starts from the lookup throw and spends the remaining budget on
/// expected-improvement steps under a GP surrogate over the normalized
/// policy box.
#[allow(clippy::too_many_arguments)]
pub fn bayes_opt_throw(
    arm: &ArmModel,
    world: &ObstacleWorld,
    sim: &SimConfig,
    c: Vec2,
    rep: &Repertoire,
    cfg: &BayesOptConfig,
    rng: &mut PolicyRng,
) -> Result<BayesOptState> {
    if cfg.budget == 0 || cfg.acquisition_samples == 0 {
        return Err(Error::InvalidArgument("BayesOpt budget and sample count must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.local_fraction) {
        return Err(Error::InvalidArgument("local fraction must lie in [0, 1]".into()));
    }
    let bounds = PolicyBounds::new(arm, sim.launch_window);
    let mut state = BayesOptState {
        history: Vec::with_capacity(cfg.budget),
        hyper: cfg.hyper,
        budget: cfg.budget,
    };
    let run = |policy: &Policy| -> Result<Trial> {
        let episode = world::rollout(arm, policy, world, sim)?;
        Ok(Trial {
            policy: episode.policy.clone(),
            objective: throw_objective(&episode, c, world, cfg.penalty_factor),
            collided: episode.flags.any_collision(),
            episode,
        })
    };
    state.history.push(run(&lookup_throw(rep, c)?)?);

    while state.history.len() < cfg.budget {
        let xs: Vec<Vec<f64>> = state.history.iter().map(|t| to_unit(&t.policy.to_vec(), &bounds)).collect();
        let raw: Vec<f64> = state.history.iter().map(|t| t.objective).collect();
        let mu = raw.iter().sum::<f64>() / raw.len() as f64;
        let sd = libm::sqrt(raw.iter().map(|y| (y - mu) * (y - mu)).sum::<f64>() / raw.len() as f64);
        let scale = if sd > 1e-12 { sd } else { 1.0 };
        let ys: Vec<f64> = raw.iter().map(|y| (y - mu) / scale).collect();
        let gp = GaussianProcess::fit(xs.clone(), &ys, cfg.hyper)?;
        let best_i = state.best_index().expect("history is non-empty");
        let best_y = ys[best_i];
        let incumbent = &xs[best_i];

        let dim = bounds.dim();
        let mut best_candidate: Option<(f64, Vec<f64>)> = None;
        for s in 0..cfg.acquisition_samples {
            let local = (s as f64) < cfg.local_fraction * cfg.acquisition_samples as f64;
            let x: Vec<f64> = if local {
                incumbent
                    .iter()
                    .map(|v| (v + cfg.local_sigma * rng::standard_normal(rng)).clamp(0.0, 1.0))
                    .collect()
            } else {
                (0..dim).map(|_| rng.random::<f64>()).collect()
            };
            let (m, v) = gp.predict(&x);
            let ei = expected_improvement(m, v, best_y);
            if best_candidate.as_ref().is_none_or(|(b, _)| ei > *b) {
                best_candidate = Some((ei, x));
            }
        }
        let (_, x) = best_candidate.expect("at least one candidate");
        let policy = Policy::from_slice(&from_unit(&x, &bounds))?;
        state.history.push(run(&policy)?);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::DEFAULT_LAUNCH_WINDOW;
    use crate::repertoire::{RepertoireEntry, RepertoireMeta};

    fn rep3() -> Repertoire {
        let entries = [[1.0, 0.0], [1.5, 0.5], [0.5, -0.5]]
            .iter()
            .enumerate()
            .map(|(i, &l)| RepertoireEntry {
                policy: Policy {
                    theta: vec![0.1 * i as f64; 7],
                    theta_dot: vec![0.2 * i as f64; 7],
                    t_launch: 0.5,
                },
                landing: l,
                t_land: 0.5,
                clamped_genes: 0,
            })
            .collect();
        Repertoire::new(entries, RepertoireMeta::default())
    }

    #[test]
    fn lookup_is_deterministic() {
        let rep = rep3();
        assert_eq!(lookup_throw(&rep, [1.4, 0.4]).unwrap(), rep.entries()[1].policy);
        assert_eq!(lookup_throw(&rep, [0.5, -0.5]).unwrap(), lookup_throw(&rep, [0.5, -0.5]).unwrap());
    }

    #[test]
    fn zero_noise_lookup() {
        let rep = rep3();
        let bounds = PolicyBounds::new(&ArmModel::default_arm(), DEFAULT_LAUNCH_WINDOW);
        let mut r = rng::seeded(1);
        let base = lookup_throw(&rep, [1.0, 0.1]).unwrap();
        assert_eq!(noisy_lookup(&rep, [1.0, 0.1], 0.0, &bounds, &mut r).unwrap(), base);
        let a = noisy_lookup(&rep, [1.0, 0.1], 0.05, &bounds, &mut rng::seeded(3)).unwrap();
        let b = noisy_lookup(&rep, [1.0, 0.1], 0.05, &bounds, &mut rng::seeded(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, base);
    }

    #[test]
    fn kde_delta_limit_and_exact_policies() {
        let rep = rep3();
        let bounds = PolicyBounds::new(&ArmModel::default_arm(), DEFAULT_LAUNCH_WINDOW);
        let kde = KdeModel::new(&rep, 1e-3, 0.0).unwrap();
        let mut r = rng::seeded(2);
        for _ in 0..50 {
            let s = kde.sample([1.5, 0.5], &bounds, &mut r).unwrap();
            assert_eq!(s.component, 1);
            assert_eq!(s.policy, rep.entries()[1].policy);
            assert!(!s.fallback);
        }
    }

    #[test]
    fn kde_fallback_when_all_weights_underflow() {
        let rep = rep3();
        let kde = KdeModel::new(&rep, 1e-3, 0.05).unwrap();
        let w = kde.weights([3.0, 3.0]).unwrap();
        assert!(w.fallback);
        assert_eq!(w.probs, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn kde_weights_sum_to_one() {
        let rep = rep3();
        let kde = KdeModel::new(&rep, 0.4, 0.05).unwrap();
        let w = kde.weights([1.1, 0.2]).unwrap();
        assert!((w.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gp_interpolates_noiseless_data() {
        let xs = vec![vec![0.1, 0.2], vec![0.5, 0.5], vec![0.9, 0.1]];
        let ys = [1.0, -0.5, 2.0];
        let hyper = GpHyper {
            noise_var: 0.0,
            ..GpHyper::default()
        };
        let gp = GaussianProcess::fit(xs.clone(), &ys, hyper).unwrap();
        for (x, y) in xs.iter().zip(ys) {
            let (m, v) = gp.predict(x);
            assert!((m - y).abs() < 1e-6, "{m} vs {y}");
            assert!(v <= gp.jitter().max(1e-10));
        }
    }

    #[test]
    fn duplicate_points_need_jitter() {
        let xs = vec![vec![0.3], vec![0.3]];
        let hyper = GpHyper {
            noise_var: 0.0,
            ..GpHyper::default()
        };
        let gp = GaussianProcess::fit(xs, &[1.0, 1.0], hyper).unwrap();
        assert!(gp.jitter() >= JITTER_START);
    }

    #[test]
    fn expected_improvement_limits() {
        assert_eq!(expected_improvement(0.0, 0.0, 1.0), 0.0);
        assert!(expected_improvement(0.0, 1e-30, 1.0) < 1e-12);
        assert!(expected_improvement(2.0, 0.0, 1.0) == 1.0);
        assert!(expected_improvement(0.0, 1.0, 0.0) > 0.39);
    }

    #[test]
    fn bayes_opt_budget_one_is_lookup() {
        let arm = ArmModel::default_arm();
        let sim = SimConfig::for_arm(&arm);
        let world = ObstacleWorld::empty(Default::default());
        let rep = rep3();
        let cfg = BayesOptConfig {
            budget: 1,
            ..BayesOptConfig::default()
        };
        let state = bayes_opt_throw(&arm, &world, &sim, [1.0, 0.0], &rep, &cfg, &mut rng::seeded(0)).unwrap();
        assert_eq!(state.history.len(), 1);
        let ep = world::rollout(&arm, &rep.entries()[0].policy, &world, &sim).unwrap();
        assert_eq!(state.best().unwrap().objective, throw_objective(&ep, [1.0, 0.0], &world, 10.0));
    }
}
