//! Quality-diversity search over throwing policies and landing-point lookup.
//!
//! The search is novelty search with local competition over an unbounded
//! archive. The behavior descriptor is the landing point. An offspring
//! enters the archive when it lands farther than `add_threshold` from every
//! archived landing; otherwise it may replace its nearest neighbor if it has
//! higher quality and falls in the same coverage cell, so the set of
//! occupied coverage cells never shrinks. Quality is the negated number of
//! genes that had to be clamped back into range after mutation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kinematics::{ArmModel, Policy, PolicyBounds};
use crate::math::{self, Vec2};
use crate::rng::{self, PolicyRng};
use crate::world::{self, Episode, ObstacleWorld, SimConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RepertoireEntry {
    pub policy: Policy,
    pub landing: Vec2,
    pub t_land: f64,
    /// Genes clamped when this policy was produced by mutation.
    pub clamped_genes: u32,
}

impl RepertoireEntry {
    pub fn quality(&self) -> i64 {
        -i64::from(self.clamped_genes)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RepertoireMeta {
    pub generations: u64,
    pub evaluations: u64,
    pub seed: u64,
    pub arm_hash: u64,
}

/// Uniform bucket grid over landing points.
#[derive(Debug, Clone)]
struct GridIndex {
    cell: f64,
    buckets: BTreeMap<(i64, i64), Vec<usize>>,
}

impl GridIndex {
    fn new(cell: f64) -> Self {
        GridIndex {
            cell,
            buckets: BTreeMap::new(),
        }
    }

    fn key(&self, p: Vec2) -> (i64, i64) {
        (libm::floor(p[0] / self.cell) as i64, libm::floor(p[1] / self.cell) as i64)
    }

    fn insert(&mut self, p: Vec2, idx: usize) {
        self.buckets.entry(self.key(p)).or_default().push(idx);
    }

    fn remove(&mut self, p: Vec2, idx: usize) {
        let key = self.key(p);
        if let Some(bucket) = self.buckets.get_mut(&key) {
            bucket.retain(|&i| i != idx);
            if bucket.is_empty() {
                self.buckets.remove(&key);
            }
        }
    }

    fn extent(&self) -> Option<((i64, i64), (i64, i64))> {
        let mut it = self.buckets.keys();
        let first = *it.next()?;
        Some(it.fold((first, first), |(lo, hi), &(x, y)| {
            ((lo.0.min(x), lo.1.min(y)), (hi.0.max(x), hi.1.max(y)))
        }))
    }

    /// Exact nearest neighbor by expanding square rings of cells.
    fn nearest(&self, entries: &[RepertoireEntry], target: Vec2) -> Option<(usize, f64)> {
        let ((x0, y0), (x1, y1)) = self.extent()?;
        let (cx, cy) = self.key(target);
        let max_ring = (cx - x0).abs().max((x1 - cx).abs()).max((cy - y0).abs()).max((y1 - cy).abs());
        let mut best: Option<(usize, f64)> = None;
        let visit = |key: (i64, i64), best: &mut Option<(usize, f64)>| {
            if let Some(bucket) = self.buckets.get(&key) {
                for &i in bucket {
                    let d = math::dist2(entries[i].landing, target);
                    let better = match *best {
                        None => true,
                        Some((bi, bd)) => d < bd || (d == bd && i < bi),
                    };
                    if better {
                        *best = Some((i, d));
                    }
                }
            }
        };
        for r in 0..=max_ring {
            if let Some((_, bd)) = best {
                // Every cell on ring r is at least (r - 1) cells away.
                if bd < (r - 1) as f64 * self.cell {
                    break;
                }
            }
            if r == 0 {
                visit((cx, cy), &mut best);
                continue;
            }
            for dx in -r..=r {
                visit((cx + dx, cy - r), &mut best);
                visit((cx + dx, cy + r), &mut best);
            }
            for dy in (-r + 1)..r {
                visit((cx - r, cy + dy), &mut best);
                visit((cx + r, cy + dy), &mut best);
            }
        }
        best
    }
}

const INDEX_CELL: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Repertoire {
    entries: Vec<RepertoireEntry>,
    index: GridIndex,
    pub meta: RepertoireMeta,
}

impl PartialEq for Repertoire {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.meta == other.meta
    }
}

impl Repertoire {
    pub fn new(entries: Vec<RepertoireEntry>, meta: RepertoireMeta) -> Self {
        let mut index = GridIndex::new(INDEX_CELL);
        for (i, e) in entries.iter().enumerate() {
            index.insert(e.landing, i);
        }
        Repertoire { entries, index, meta }
    }

    pub fn empty(meta: RepertoireMeta) -> Self {
        Self::new(Vec::new(), meta)
    }

    pub fn entries(&self) -> &[RepertoireEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: RepertoireEntry) {
        self.index.insert(entry.landing, self.entries.len());
        self.entries.push(entry);
    }

    pub fn replace(&mut self, idx: usize, entry: RepertoireEntry) {
        self.index.remove(self.entries[idx].landing, idx);
        self.index.insert(entry.landing, idx);
        self.entries[idx] = entry;
    }

    pub fn landings(&self) -> impl Iterator<Item = Vec2> + '_ {
        self.entries.iter().map(|e| e.landing)
    }

    /// Index and distance of the entry whose landing is closest to `target`;
    /// ties go to the lowest index.
    pub fn nearest(&self, target: Vec2) -> Result<(usize, f64)> {
        self.index.nearest(&self.entries, target).ok_or(Error::EmptyRepertoire)
    }

    /// Up to `k` entry indices ordered by landing distance, then index.
    pub fn k_nearest(&self, target: Vec2, k: usize) -> Result<Vec<usize>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.is_empty() {
            return Err(Error::EmptyRepertoire);
        }
        let mut order: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (math::dist2(e.landing, target), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_unstable_by(cmp);
        Ok(order.into_iter().map(|(_, i)| i).collect())
    }
}

pub fn nearest_policy(rep: &Repertoire, target: Vec2) -> Result<(Policy, Vec2)> {
    let (i, _) = rep.nearest(target)?;
    let e = &rep.entries[i];
    Ok((e.policy.clone(), e.landing))
}

pub fn k_nearest_policies(rep: &Repertoire, target: Vec2, k: usize) -> Result<Vec<&RepertoireEntry>> {
    Ok(rep.k_nearest(target, k)?.into_iter().map(|i| &rep.entries[i]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QdConfig {
    pub population: usize,
    pub generations: usize,
    /// Per-gene Gaussian σ as a fraction of the gene's legal range.
    pub mutation_scale: f64,
    /// Neighbors averaged in the novelty score.
    pub novelty_k: usize,
    /// Minimum landing distance (m) to the nearest archived landing for an
    /// offspring to be added as a new niche.
    pub add_threshold: f64,
    /// Cell size (m) of the coverage grid that bounds local competition.
    pub coverage_cell: f64,
    /// Total rollouts, including the initial population.
    pub budget: usize,
    pub seed: u64,
}

impl Default for QdConfig {
    fn default() -> Self {
        QdConfig {
            population: 200,
            generations: 1000,
            mutation_scale: 0.1,
            novelty_k: 15,
            add_threshold: 0.06,
            coverage_cell: 0.1,
            budget: 20_000,
            seed: 0,
        }
    }
}

impl QdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("qd config: {m}")));
        if self.population == 0 || self.generations == 0 || self.novelty_k == 0 || self.budget == 0 {
            return bad("counts must be positive");
        }
        if !(self.mutation_scale >= 0.0) {
            return bad("mutation scale must be non-negative");
        }
        if !(self.add_threshold >= 0.0) {
            return bad("add threshold must be non-negative");
        }
        if !(self.coverage_cell > 0.0) {
            return bad("coverage cell must be positive");
        }
        if self.budget < self.population {
            return bad("budget must cover the initial population");
        }
        Ok(())
    }
}

/// Per-generation diagnostics of a search.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QdTrace {
    /// Occupied coverage cells after initialization and each generation.
    pub coverage: Vec<usize>,
    pub archive_size: Vec<usize>,
    pub discarded: usize,
}

/// Why offspring were discarded.
#[derive(Debug, Clone, Copy, Default)]
struct Rejections {
    self_collision: usize,
    arm_collision: usize,
    ball_collision: usize,
    no_landing: usize,
}

impl Rejections {
    fn record(&mut self, ep: &Episode) {
        if ep.flags.self_collision {
            self.self_collision += 1;
        } else if ep.flags.arm_collision {
            self.arm_collision += 1;
        } else if ep.flags.ball_collision {
            self.ball_collision += 1;
        } else {
            self.no_landing += 1;
        }
    }
}

struct Candidate {
    policy: Policy,
    clamped_genes: u32,
}

fn coverage_key(p: Vec2, cell: f64) -> (i64, i64) {
    (libm::floor(p[0] / cell) as i64, libm::floor(p[1] / cell) as i64)
}

/// Mean distance from `entries[idx]` to its `k` nearest archive neighbors.
fn novelty(entries: &[RepertoireEntry], idx: usize, k: usize, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    let p = entries[idx].landing;
    scratch.extend(
        entries
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != idx)
            .map(|(_, e)| math::dist2(e.landing, p)),
    );
    if scratch.is_empty() {
        return f64::INFINITY;
    }
    let k = k.min(scratch.len());
    scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
    scratch[..k].iter().sum::<f64>() / k as f64
}

struct Archive {
    rep: Repertoire,
    cells: BTreeMap<(i64, i64), usize>,
    cfg: QdConfig,
}

impl Archive {
    fn offer(&mut self, cand: &Candidate, ep: &Episode) {
        let landing = ep.landing.expect("only landed episodes are offered");
        let entry = RepertoireEntry {
            policy: ep.policy.clone(),
            landing: landing.xy,
            t_land: landing.t_land,
            clamped_genes: cand.clamped_genes,
        };
        match self.rep.nearest(landing.xy) {
            Err(_) => self.add(entry),
            Ok((_, d)) if d > self.cfg.add_threshold => self.add(entry),
            Ok((j, _)) => {
                let incumbent = &self.rep.entries[j];
                let cell = self.cfg.coverage_cell;
                if entry.quality() > incumbent.quality()
                    && coverage_key(entry.landing, cell) == coverage_key(incumbent.landing, cell)
                {
                    self.rep.replace(j, entry);
                }
            }
        }
    }

    fn add(&mut self, entry: RepertoireEntry) {
        *self.cells.entry(coverage_key(entry.landing, self.cfg.coverage_cell)).or_default() += 1;
        self.rep.push(entry);
    }
}

/// Runs the search with serial rollouts in `world`.
pub fn qd_search(cfg: &QdConfig, arm: &ArmModel, world: &ObstacleWorld, sim: &SimConfig) -> Result<Repertoire> {
    qd_search_with(cfg, arm, sim, None, |batch| {
        batch.iter().map(|p| world::rollout(arm, p, world, sim)).collect()
    })
    .map(|(rep, _)| rep)
}

/// Full search. `initial` replaces the random initial population;
/// `evaluate` rolls out a batch of policies and must return one result per
/// policy in order (it may evaluate them in parallel). Archive updates are
/// applied serially in offspring order, so results depend only on the seed.
pub fn qd_search_with<F>(
    cfg: &QdConfig,
    arm: &ArmModel,
    sim: &SimConfig,
    initial: Option<Vec<Policy>>,
    mut evaluate: F,
) -> Result<(Repertoire, QdTrace)>
where
    F: FnMut(&[Policy]) -> Vec<Result<Episode>>,
{
    cfg.validate()?;
    let bounds = PolicyBounds::new(arm, sim.launch_window);
    let mut rng = rng::seeded(cfg.seed);
    let meta = RepertoireMeta {
        generations: 0,
        evaluations: 0,
        seed: cfg.seed,
        arm_hash: arm.fingerprint(),
    };
    let mut archive = Archive {
        rep: Repertoire::empty(meta),
        cells: BTreeMap::new(),
        cfg: cfg.clone(),
    };
    let mut trace = QdTrace::default();
    let mut rejections = Rejections::default();

    let initial: Vec<Candidate> = match initial {
        Some(pop) => pop
            .into_iter()
            .take(cfg.population)
            .map(|policy| Candidate { policy, clamped_genes: 0 })
            .collect(),
        None => (0..cfg.population)
            .map(|_| {
                let genes: Vec<f64> = (0..bounds.dim()).map(|g| rng.random_range(bounds.lo[g]..=bounds.hi[g])).collect();
                Candidate {
                    policy: Policy::from_slice(&genes).expect("bounds have 2n+1 genes"),
                    clamped_genes: 0,
                }
            })
            .collect(),
    };

    let mut evaluations = 0usize;
    let mut generations = 0usize;
    let mut run_batch = |cands: &[Candidate],
                         archive: &mut Archive,
                         rejections: &mut Rejections,
                         trace: &mut QdTrace|
     -> Result<()> {
        let policies: Vec<Policy> = cands.iter().map(|c| c.policy.clone()).collect();
        let episodes = evaluate(&policies);
        if episodes.len() != cands.len() {
            return Err(Error::DimensionMismatch {
                expected: cands.len(),
                actual: episodes.len(),
            });
        }
        for (cand, ep) in cands.iter().zip(episodes) {
            let ep = ep?;
            if ep.is_valid() {
                archive.offer(cand, &ep);
            } else {
                rejections.record(&ep);
                trace.discarded += 1;
            }
        }
        trace.coverage.push(archive.cells.len());
        trace.archive_size.push(archive.rep.len());
        Ok(())
    };

    run_batch(&initial, &mut archive, &mut rejections, &mut trace)?;
    evaluations += initial.len();
    if archive.rep.is_empty() {
        return Err(Error::SearchFailed(format!(
            "no valid individual in {} initial rollouts (self collision {}, arm collision {}, \
             ball collision {}, no landing {})",
            initial.len(),
            rejections.self_collision,
            rejections.arm_collision,
            rejections.ball_collision,
            rejections.no_landing
        )));
    }

    let mut scratch = Vec::new();
    while generations < cfg.generations && evaluations < cfg.budget {
        let batch = cfg.population.min(cfg.budget - evaluations);
        let entries = archive.rep.entries();
        let offspring: Vec<Candidate> = (0..batch)
            .map(|_| {
                let a = rng.random_range(0..entries.len());
                let b = rng.random_range(0..entries.len());
                let parent = if novelty(entries, b, cfg.novelty_k, &mut scratch)
                    > novelty(entries, a, cfg.novelty_k, &mut scratch)
                {
                    b
                } else {
                    a
                };
                mutate(&entries[parent].policy, &bounds, cfg.mutation_scale, &mut rng)
            })
            .collect();
        run_batch(&offspring, &mut archive, &mut rejections, &mut trace)?;
        evaluations += batch;
        generations += 1;
    }

    let mut rep = archive.rep;
    rep.meta.generations = generations as u64;
    rep.meta.evaluations = evaluations as u64;
    Ok((rep, trace))
}

fn mutate(parent: &Policy, bounds: &PolicyBounds, scale: f64, rng: &mut PolicyRng) -> Candidate {
    let mut genes = parent.to_vec();
    if scale > 0.0 {
        for (g, gene) in genes.iter_mut().enumerate() {
            *gene += rng::standard_normal(rng) * scale * bounds.range(g);
        }
    }
    let clamped = bounds.clamp(&mut genes);
    Candidate {
        policy: Policy::from_slice(&genes).expect("parent has 2n+1 genes"),
        clamped_genes: clamped as u32,
    }
}

/// Coverage cells (cell size `cell`) occupied by the repertoire's landings.
pub fn coverage_cells(rep: &Repertoire, cell: f64) -> usize {
    let mut seen = BTreeMap::new();
    for p in rep.landings() {
        seen.insert(coverage_key(p, cell), ());
    }
    seen.len()
}
