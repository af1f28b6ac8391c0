//! The three evaluation protocols and the wall scenarios they use.

use gpn_core::baselines::{self, BayesOptConfig, BayesOptState, KdeModel};
use gpn_core::gpn::{self, Generator, SampleOutcome, ValidityCriteria};
use gpn_core::kinematics::{ArmModel, PolicyBounds};
use gpn_core::math::{self, Vec2, Vec3};
use gpn_core::metrics::{self, GridEvalResult, TargetGrid, WelchResult};
use gpn_core::repertoire::{k_nearest_policies, Repertoire};
use gpn_core::rng;
use gpn_core::world::{self, Aabb, FloorBounds, Episode, ObstacleWorld, OcclusionSpec, SimConfig};
use rayon::prelude::*;

use crate::error::Result;

/// Everything an evaluation needs besides its own settings.
#[derive(Clone, Copy)]
pub struct Setup<'a> {
    pub arm: &'a ArmModel,
    pub sim: &'a SimConfig,
    pub rep: &'a Repertoire,
    pub gen: &'a Generator,
}

impl Setup<'_> {
    fn bounds(&self) -> PolicyBounds {
        PolicyBounds::new(self.arm, self.sim.launch_window)
    }
}

// Stream tags keep per-method randomness independent.
const TAG_GPN: u64 = 1 << 40;
const TAG_NOISY: u64 = 2 << 40;
const TAG_MAP: u64 = 3 << 40;
const TAG_KDE: u64 = 4 << 40;
const TAG_BO: u64 = 5 << 40;

fn gpn_throws(s: &Setup, c: Vec2, n: usize, world: &ObstacleWorld, seed: u64, stream: u64) -> Result<Vec<Episode>> {
    let mut r = rng::substream(seed, TAG_GPN | stream);
    (0..n)
        .map(|_| {
            let (p, _) = s.gen.sample_policy(c, &mut r)?;
            Ok(world::rollout(s.arm, &p, world, s.sim)?)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GridReport {
    pub gpn: GridEvalResult,
    pub lookup: GridEvalResult,
    pub noisy: Vec<(f64, GridEvalResult)>,
    /// Per-cell harmonic means, GPN against lookup.
    pub welch: std::result::Result<WelchResult, String>,
}

impl GridReport {
    /// Largest swept noise level whose RMSE stays within `tolerance` of the
    /// lookup RMSE (relative).
    pub fn matched_noise(&self, tolerance: f64) -> Option<&(f64, GridEvalResult)> {
        let limit = self.lookup.mean_rmse * (1.0 + tolerance);
        self.noisy
            .iter()
            .filter(|(_, r)| r.mean_rmse <= limit)
            .max_by(|a, b| a.0.total_cmp(&b.0))
    }
}

#[derive(Debug, Clone)]
pub struct GridSettings {
    pub grid: TargetGrid,
    pub trials: usize,
    pub sigmas: Vec<f64>,
    pub waypoints: usize,
}

/// Empty-world accuracy and diversity on the target grid for the generator,
/// the lookup and noisy lookups.
pub fn eval_grid(s: &Setup, world: &ObstacleWorld, cfg: &GridSettings, seed: u64) -> Result<GridReport> {
    let targets = cfg.grid.targets();
    let miss = world.bounds().diameter();
    let score = |trials: Vec<Vec<Episode>>| GridEvalResult::from_trials(cfg.grid.clone(), trials, miss, cfg.waypoints);

    let gpn_trials = targets
        .par_iter()
        .enumerate()
        .map(|(i, &c)| gpn_throws(s, c, cfg.trials, world, seed, i as u64))
        .collect::<Result<Vec<_>>>()?;

    let lookup_trials = targets
        .iter()
        .map(|&c| {
            let p = baselines::lookup_throw(s.rep, c)?;
            let ep = world::rollout(s.arm, &p, world, s.sim)?;
            Ok(vec![ep; cfg.trials])
        })
        .collect::<Result<Vec<_>>>()?;

    let bounds = s.bounds();
    let mut noisy = Vec::with_capacity(cfg.sigmas.len());
    for (si, &sigma) in cfg.sigmas.iter().enumerate() {
        let trials = targets
            .par_iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut r = rng::substream(seed, TAG_NOISY | (si as u64) << 20 | i as u64);
                (0..cfg.trials)
                    .map(|_| {
                        let p = baselines::noisy_lookup(s.rep, c, sigma, &bounds, &mut r)?;
                        Ok(world::rollout(s.arm, &p, world, s.sim)?)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        noisy.push((sigma, score(trials)?));
    }

    let gpn = score(gpn_trials)?;
    let lookup = score(lookup_trials)?;
    let welch = metrics::welch_t_test(&gpn.harmonic_scores(), &lookup.harmonic_scores()).map_err(|e| e.to_string());
    Ok(GridReport {
        gpn,
        lookup,
        noisy,
        welch,
    })
}

/// Outcome of the lookup protocol: replay the nearest stored throw and move
/// on to the next-nearest entry after each collision.
pub fn lookup_protocol(candidates: &[Episode], world: &ObstacleWorld, trials: usize) -> Vec<(bool, Option<Vec2>)> {
    let mut j = 0;
    (0..trials)
        .map(|_| {
            let ep = &candidates[j];
            let collided = ep.flags_in(world).any_collision();
            if collided && j + 1 < candidates.len() {
                j += 1;
            }
            (collided, ep.free_landing.map(|l| l.xy))
        })
        .collect()
}

/// Empty-world rollouts of the `k` entries nearest to `c`.
pub fn lookup_candidates(s: &Setup, c: Vec2, k: usize) -> Result<Vec<Episode>> {
    // Obstacles are checked later against each map's world.
    let empty = ObstacleWorld::empty(Default::default());
    k_nearest_policies(s.rep, c, k)?
        .into_iter()
        .map(|e| Ok(world::rollout(s.arm, &e.policy, &empty, s.sim)?))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ObstacleSettings {
    pub grid: TargetGrid,
    pub trials: usize,
    pub rates: Vec<f64>,
    pub maps: usize,
    pub ks: Vec<usize>,
    pub taus: Vec<f64>,
    pub spec: OcclusionSpec,
    pub lookup_candidates: usize,
}

/// Success proportions averaged over obstacle maps, indexed
/// `[rate][k][tau]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessTensor {
    pub rates: Vec<f64>,
    pub ks: Vec<usize>,
    pub taus: Vec<f64>,
    pub values: Vec<Vec<Vec<f64>>>,
}

impl SuccessTensor {
    pub fn at(&self, rate: usize, k: usize, tau: usize) -> f64 {
        self.values[rate][k][tau]
    }

    /// `k × rate` slice at one τ index.
    pub fn k_by_rate(&self, tau: usize) -> Vec<Vec<f64>> {
        (0..self.ks.len())
            .map(|k| (0..self.rates.len()).map(|r| self.values[r][k][tau]).collect())
            .collect()
    }

    /// `τ × rate` slice at one k index.
    pub fn tau_by_rate(&self, k: usize) -> Vec<Vec<f64>> {
        (0..self.taus.len())
            .map(|t| (0..self.rates.len()).map(|r| self.values[r][k][t]).collect())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ObstacleReport {
    pub gpn: SuccessTensor,
    pub lookup: SuccessTensor,
}

fn success_slices(hits: &[Vec<usize>], trials: usize, ks: &[usize]) -> Result<Vec<Vec<f64>>> {
    // hits[target][tau] → [k][tau]
    let n_tau = hits.first().map_or(0, Vec::len);
    ks.iter()
        .map(|&k| {
            (0..n_tau)
                .map(|t| {
                    let counts: Vec<usize> = hits.iter().map(|h| h[t]).collect();
                    Ok(metrics::success_proportion(&counts, trials, k)?)
                })
                .collect()
        })
        .collect()
}

fn hit_row(outcomes: impl Iterator<Item = (bool, Option<Vec2>)> + Clone, c: Vec2, taus: &[f64]) -> Vec<usize> {
    taus.iter()
        .map(|&tau| {
            outcomes
                .clone()
                .filter(|(collided, l)| !collided && l.is_some_and(|l| math::dist2(l, c) <= tau))
                .count()
        })
        .collect()
}

/// Random occlusion maps: generator samples against the lookup protocol.
pub fn eval_obstacles(s: &Setup, cfg: &ObstacleSettings, seed: u64) -> Result<ObstacleReport> {
    let targets = cfg.grid.targets();
    let candidates = targets
        .iter()
        .map(|&c| lookup_candidates(s, c, cfg.lookup_candidates))
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..cfg.rates.len()).flat_map(|r| (0..cfg.maps).map(move |m| (r, m))).collect();
    let per_map = jobs
        .par_iter()
        .map(|&(ri, m)| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
            let map_id = (ri * cfg.maps + m) as u64;
            let map_seed = seed ^ TAG_MAP ^ map_id.wrapping_mul(0x2545_f491_4f6c_dd1d);
            let world = world::random_occlusion_world(cfg.rates[ri], &cfg.spec, map_seed)?;
            let mut gpn_hits = Vec::with_capacity(targets.len());
            let mut lookup_hits = Vec::with_capacity(targets.len());
            for (ti, &c) in targets.iter().enumerate() {
                let stream = map_id << 16 | ti as u64;
                let eps = gpn_throws(s, c, cfg.trials, &world, seed, stream)?;
                gpn_hits.push(hit_row(
                    eps.iter().map(|e| (e.flags.any_collision(), e.landing_xy())),
                    c,
                    &cfg.taus,
                ));
                let outcomes = lookup_protocol(&candidates[ti], &world, cfg.trials);
                lookup_hits.push(hit_row(outcomes.iter().copied(), c, &cfg.taus));
            }
            Ok((
                success_slices(&gpn_hits, cfg.trials, &cfg.ks)?,
                success_slices(&lookup_hits, cfg.trials, &cfg.ks)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let average = |pick: &dyn Fn(&(Vec<Vec<f64>>, Vec<Vec<f64>>)) -> &Vec<Vec<f64>>| -> SuccessTensor {
        let values = (0..cfg.rates.len())
            .map(|ri| {
                let maps = &per_map[ri * cfg.maps..(ri + 1) * cfg.maps];
                (0..cfg.ks.len())
                    .map(|k| {
                        (0..cfg.taus.len())
                            .map(|t| maps.iter().map(|m| pick(m)[k][t]).sum::<f64>() / cfg.maps as f64)
                            .collect()
                    })
                    .collect()
            })
            .collect();
        SuccessTensor {
            rates: cfg.rates.clone(),
            ks: cfg.ks.clone(),
            taus: cfg.taus.clone(),
            values,
        }
    };
    Ok(ObstacleReport {
        gpn: average(&|m| &m.0),
        lookup: average(&|m| &m.1),
    })
}

/// A goal with a single wall box.
#[derive(Debug, Clone, PartialEq)]
pub struct WallScenario {
    pub goal: Vec2,
    pub wall: Aabb,
}

impl WallScenario {
    pub fn world(&self, bounds: FloorBounds) -> Result<ObstacleWorld> {
        Ok(ObstacleWorld::new(vec![self.wall], bounds)?)
    }
}

/// Height of a ball trace where it crosses the plane `x = x_wall`.
fn crossing_height(trace: &[Vec3], x_wall: f64) -> Option<f64> {
    trace.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        if (a[0] - x_wall) * (b[0] - x_wall) <= 0.0 && a[0] != b[0] {
            let f = (x_wall - a[0]) / (b[0] - a[0]);
            Some(a[2] + f * (b[2] - a[2]))
        } else {
            None
        }
    })
}

/// A thin wall across the x axis in front of `goal`, tall enough that the
/// ball traces of the `k` stored throws nearest to the goal all pass
/// through it (by `margin`).
pub fn blocking_wall(s: &Setup, goal: Vec2, k: usize, gap: f64, half_width: f64, margin: f64) -> Result<WallScenario> {
    let x_wall = goal[0] - gap;
    let mut top: f64 = 0.0;
    for ep in lookup_candidates(s, goal, k)? {
        let trace: Vec<Vec3> = ep.ball_trace.iter().map(|b| b.position).collect();
        if let Some(z) = crossing_height(&trace, x_wall) {
            top = top.max(z);
        }
    }
    let thickness = 0.05;
    let wall = Aabb::new(
        [x_wall - thickness, goal[1] - half_width, 0.0],
        [x_wall, goal[1] + half_width, top + margin],
    )?;
    Ok(WallScenario { goal, wall })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Gpn,
    Lookup,
    Kde,
    BayesOpt,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Gpn, Method::Lookup, Method::Kde, Method::BayesOpt];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gpn => "gpn",
            Method::Lookup => "lookup",
            Method::Kde => "kde",
            Method::BayesOpt => "bayes_opt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodStats {
    pub rmse: f64,
    pub diversity: f64,
    pub collision_rate: f64,
    pub success: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub scenario: WallScenario,
    /// Per method, in [`Method::ALL`] order.
    pub episodes: Vec<Vec<Episode>>,
    pub stats: Vec<MethodStats>,
    pub bayes_opt: BayesOptState,
}

#[derive(Debug, Clone)]
pub struct BaselineReport {
    pub scenarios: Vec<ScenarioResult>,
    /// Scenario averages in [`Method::ALL`] order.
    pub mean: Vec<MethodStats>,
}

#[derive(Debug, Clone)]
pub struct BaselineSettings {
    pub trials: usize,
    pub k: usize,
    pub tau: f64,
    pub waypoints: usize,
    pub kde_bandwidths: (f64, f64),
    pub bayes_opt: BayesOptConfig,
}

fn method_stats(eps: &[Episode], c: Vec2, miss: f64, cfg: &BaselineSettings) -> Result<MethodStats> {
    let landings: Vec<Option<Vec2>> = eps.iter().map(metrics::scored_landing).collect();
    let traces: Vec<Vec<Vec3>> = eps
        .iter()
        .filter(|e| e.ball_trace.len() >= 2)
        .map(|e| e.ball_trace.iter().map(|b| b.position).collect())
        .collect();
    let hits = eps.iter().filter(|e| e.hits(c, cfg.tau)).count();
    Ok(MethodStats {
        rmse: metrics::rmse(c, &landings, miss)?,
        diversity: metrics::trajectory_diversity(&traces, cfg.waypoints).unwrap_or(0.0),
        collision_rate: eps.iter().filter(|e| e.flags.any_collision()).count() as f64 / eps.len() as f64,
        success: metrics::success_proportion(&[hits], eps.len(), cfg.k)?,
    })
}

/// Ten throws per method in each wall scenario.
pub fn compare_baselines(
    s: &Setup,
    scenarios: &[WallScenario],
    bounds: FloorBounds,
    cfg: &BaselineSettings,
    seed: u64,
) -> Result<BaselineReport> {
    let pb = s.bounds();
    let kde = KdeModel::new(s.rep, cfg.kde_bandwidths.0, cfg.kde_bandwidths.1)?;
    let miss = bounds.diameter();
    let mut results = Vec::with_capacity(scenarios.len());
    for (si, sc) in scenarios.iter().enumerate() {
        let world = sc.world(bounds)?;
        let c = sc.goal;
        let gpn_eps = gpn_throws(s, c, cfg.trials, &world, seed, si as u64)?;
        let lookup = baselines::lookup_throw(s.rep, c)?;
        let lookup_eps = vec![world::rollout(s.arm, &lookup, &world, s.sim)?; cfg.trials];
        let mut r = rng::substream(seed, TAG_KDE | si as u64);
        let kde_eps = (0..cfg.trials)
            .map(|_| {
                let smp = kde.sample(c, &pb, &mut r)?;
                Ok(world::rollout(s.arm, &smp.policy, &world, s.sim)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut r = rng::substream(seed, TAG_BO | si as u64);
        let bo = baselines::bayes_opt_throw(s.arm, &world, s.sim, c, s.rep, &cfg.bayes_opt, &mut r)?;
        let bo_eps: Vec<Episode> = bo.history.iter().map(|t| t.episode.clone()).collect();
        let episodes = vec![gpn_eps, lookup_eps, kde_eps, bo_eps];
        let stats = episodes.iter().map(|e| method_stats(e, c, miss, cfg)).collect::<Result<Vec<_>>>()?;
        results.push(ScenarioResult {
            scenario: sc.clone(),
            episodes,
            stats,
            bayes_opt: bo,
        });
    }
    let n = results.len().max(1) as f64;
    let mean = (0..Method::ALL.len())
        .map(|m| {
            let sum = |f: fn(&MethodStats) -> f64| results.iter().map(|r| f(&r.stats[m])).sum::<f64>() / n;
            MethodStats {
                rmse: sum(|s| s.rmse),
                diversity: sum(|s| s.diversity),
                collision_rate: sum(|s| s.collision_rate),
                success: sum(|s| s.success),
            }
        })
        .collect();
    Ok(BaselineReport {
        scenarios: results,
        mean,
    })
}

/// Success counts of `sample_until_valid` and of the lookup protocol over
/// `attempts` independent attempts at one scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryComparison {
    pub attempts: usize,
    pub gpn_successes: usize,
    pub lookup_successes: usize,
}

pub fn compare_retries(
    s: &Setup,
    scenario: &WallScenario,
    bounds: FloorBounds,
    criteria: &ValidityCriteria,
    lookup_k: usize,
    attempts: usize,
    seed: u64,
) -> Result<RetryComparison> {
    let world = scenario.world(bounds)?;
    let c = scenario.goal;
    let gpn_successes = (0..attempts)
        .into_par_iter()
        .map(|a| {
            let mut r = rng::substream(seed, TAG_GPN | a as u64);
            let out = gpn::sample_until_valid(s.gen, c, s.arm, &world, s.sim, criteria, &mut r)?;
            Ok(matches!(out, SampleOutcome::Success { .. }))
        })
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&ok| ok)
        .count();
    // The lookup protocol is deterministic, so every attempt has the same
    // outcome.
    let cands = lookup_candidates(s, c, lookup_k)?;
    let lookup_ok = lookup_protocol(&cands, &world, criteria.max_tries)
        .iter()
        .any(|(collided, l)| !collided && l.is_some_and(|l| math::dist2(l, c) <= criteria.accept_radius));
    Ok(RetryComparison {
        attempts,
        gpn_successes,
        lookup_successes: if lookup_ok { attempts } else { 0 },
    })
}
