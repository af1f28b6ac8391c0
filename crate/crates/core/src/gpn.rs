//! Conditional generative policy network.
//!
//! The generator maps noise `z` and a goal landing point `c` to a policy
//! together with its own estimate `ĉ` of where that policy lands. The
//! discriminator scores `(π, c)` pairs. Training alternates one
//! discriminator step on the GAN objective with several generator steps on
//! the non-saturating adversarial loss plus `λ · mean ‖ĉ − c‖₂`.
//!
//! Both networks work in normalized coordinates: every policy gene and both
//! goal coordinates are mapped affinely onto `[-1, 1]` using the training
//! repertoire's range padded by 5% on each side.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{check_dim, Checkpoint, Error, Result};
use crate::kinematics::{ArmModel, Policy};
use crate::math::{self, Vec2};
use crate::neuralnet::{binary_cross_entropy, Activation, AdamConfig, AdamState, DenseNet};
use crate::repertoire::Repertoire;
use crate::rng::{self, PolicyRng};
use crate::world::{self, Episode, ObstacleWorld, SimConfig};

/// Fraction of each range added on both sides before normalizing.
pub const NORMALIZATION_PAD: f64 = 0.05;

/// Per-dimension affine map between data ranges and `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Normalizer {
    /// Range of each column padded by `pad` of its span. Constant columns
    /// get a unit span so the map stays invertible.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize, pad: f64) -> Result<Self> {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        let mut any = false;
        for row in rows {
            check_dim(dim, row.len())?;
            any = true;
            for (k, &v) in row.iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        if !any {
            return Err(Error::InsufficientData { have: 0, need: 1 });
        }
        for (l, h) in lo.iter_mut().zip(hi.iter_mut()) {
            let span = *h - *l;
            let margin = if span > 0.0 { pad * span } else { 0.5 };
            *l -= margin;
            *h += margin;
        }
        Ok(Normalizer { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    #[inline]
    pub fn normalize(&self, k: usize, x: f64) -> f64 {
        2.0 * (x - self.lo[k]) / (self.hi[k] - self.lo[k]) - 1.0
    }

    #[inline]
    pub fn denormalize(&self, k: usize, u: f64) -> f64 {
        self.lo[k] + 0.5 * (u + 1.0) * (self.hi[k] - self.lo[k])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpnConfig {
    pub z_dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub generator_steps: usize,
    /// λ, the weight of the landing-point reconstruction term.
    pub recon_weight: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for GpnConfig {
    fn default() -> Self {
        GpnConfig {
            z_dim: 100,
            lr: 2e-4,
            epochs: 1000,
            batch_size: 250,
            generator_steps: 20,
            recon_weight: 1.0,
            hidden: vec![128, 128, 128],
            seed: 0,
        }
    }
}

impl GpnConfig {
    /// Laptop-scale schedule for a ~2,000-entry repertoire: smaller batches
    /// and a higher learning rate so the discriminator sees enough updates.
    pub fn desk() -> Self {
        GpnConfig {
            lr: 1e-3,
            epochs: 400,
            batch_size: 64,
            generator_steps: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.z_dim == 0 || self.epochs == usize::MAX || self.batch_size == 0 || self.generator_steps == 0 {
            return Err(Error::InvalidArgument("gpn config: counts must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.recon_weight >= 0.0) || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidArgument("gpn config: lr, λ or hidden sizes out of range".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub net: DenseNet,
    /// Policy genes first, then the two goal coordinates.
    pub stats: Normalizer,
    pub z_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub net: DenseNet,
}

fn hidden_stack(input: usize, hidden: &[usize], output: usize, last: Activation) -> (Vec<usize>, Vec<Activation>) {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    let mut acts = vec![Activation::Relu; hidden.len()];
    acts.push(last);
    (dims, acts)
}

impl Generator {
    pub fn new(stats: Normalizer, z_dim: usize, hidden: &[usize], rng: &mut PolicyRng) -> Result<Self> {
        if stats.dim() < 5 {
            return Err(Error::InvalidArgument("normalizer must cover a policy and a 2-D goal".into()));
        }
        let out = stats.dim();
        let (dims, acts) = hidden_stack(z_dim + 2, hidden, out, Activation::Tanh);
        Ok(Generator {
            net: DenseNet::new(&dims, &acts, rng)?,
            stats,
            z_dim,
        })
    }

    pub fn from_parts(net: DenseNet, stats: Normalizer) -> Result<Self> {
        check_dim(stats.dim(), net.output_dim())?;
        if net.input_dim() < 3 {
            return Err(Error::InvalidArgument("generator input must hold noise and a goal".into()));
        }
        let z_dim = net.input_dim() - 2;
        Ok(Generator { net, stats, z_dim })
    }

    pub fn policy_dim(&self) -> usize {
        self.stats.dim() - 2
    }

    pub fn normalize_goal(&self, c: Vec2) -> [f64; 2] {
        let p = self.policy_dim();
        [self.stats.normalize(p, c[0]), self.stats.normalize(p + 1, c[1])]
    }

    fn decode(&self, out: &[f64]) -> Result<(Policy, Vec2)> {
        let p = self.policy_dim();
        let genes: Vec<f64> = (0..p).map(|k| self.stats.denormalize(k, out[k])).collect();
        let c_hat = [self.stats.denormalize(p, out[p]), self.stats.denormalize(p + 1, out[p + 1])];
        Ok((Policy::from_slice(&genes)?, c_hat))
    }

    /// Deterministic evaluation for explicit noise.
    pub fn generate(&self, c: Vec2, z: &[f64]) -> Result<(Policy, Vec2)> {
        check_dim(self.z_dim, z.len())?;
        let mut input = z.to_vec();
        input.extend_from_slice(&self.normalize_goal(c));
        let out = self.net.forward(&input)?;
        self.decode(&out)
    }

    pub fn draw_noise(&self, rng: &mut PolicyRng) -> Vec<f64> {
        (0..self.z_dim).map(|_| rng::standard_normal(rng)).collect()
    }

    /// Draws `z ~ N(0, I)` and returns the policy with its predicted landing.
    pub fn sample_policy(&self, c: Vec2, rng: &mut PolicyRng) -> Result<(Policy, Vec2)> {
        let z = self.draw_noise(rng);
        self.generate(c, &z)
    }
}

impl Discriminator {
    pub fn new(input_dim: usize, hidden: &[usize], rng: &mut PolicyRng) -> Result<Self> {
        let (dims, acts) = hidden_stack(input_dim, hidden, 1, Activation::Sigmoid);
        Ok(Discriminator {
            net: DenseNet::new(&dims, &acts, rng)?,
        })
    }

    pub fn from_net(net: DenseNet) -> Result<Self> {
        check_dim(1, net.output_dim())?;
        if net.layers().last().map(|l| l.activation) != Some(Activation::Sigmoid) {
            return Err(Error::InvalidArgument("discriminator must end in a sigmoid".into()));
        }
        Ok(Discriminator { net })
    }

    /// Probability that each normalized `(π, c)` row is real.
    pub fn score(&self, rows: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.net.forward_batch(rows, batch)?.output().to_vec())
    }
}

/// Normalized training rows `[π, c]`, one per repertoire entry.
pub fn normalized_rows(rep: &Repertoire, stats: &Normalizer) -> Vec<f64> {
    let mut rows = Vec::with_capacity(rep.len() * stats.dim());
    for e in rep.entries() {
        rows.extend(
            e.policy
                .to_vec()
                .into_iter()
                .chain(e.landing)
                .enumerate()
                .map(|(k, v)| stats.normalize(k, v)),
        );
    }
    rows
}

pub fn repertoire_stats(rep: &Repertoire) -> Result<Normalizer> {
    let rows: Vec<Vec<f64>> = rep
        .entries()
        .iter()
        .map(|e| e.policy.to_vec().into_iter().chain(e.landing).collect())
        .collect();
    let dim = rows.first().map_or(0, Vec::len);
    Normalizer::fit(rows.iter().map(Vec::as_slice), dim, NORMALIZATION_PAD)
}

/// Discriminator loss `mean BCE(D(real), 1) + mean BCE(D(fake), 0)` and its
/// parameter gradient. Rows are normalized `(π, c)`.
pub fn discriminator_objective(disc: &Discriminator, real: &[f64], fake: &[f64]) -> Result<(f64, Vec<f64>)> {
    let dim = disc.net.input_dim();
    let (nr, nf) = (real.len() / dim, fake.len() / dim);
    if nr == 0 || nf == 0 {
        return Err(Error::InsufficientData { have: nr.min(nf), need: 1 });
    }
    let mut rows = Vec::with_capacity(real.len() + fake.len());
    rows.extend_from_slice(real);
    rows.extend_from_slice(fake);
    let cache = disc.net.forward_batch(&rows, nr + nf)?;
    let mut loss = 0.0;
    let mut upstream = Vec::with_capacity(nr + nf);
    for (i, &p) in cache.output().iter().enumerate() {
        let (label, n) = if i < nr { (1.0, nr) } else { (0.0, nf) };
        let (l, g) = binary_cross_entropy(p, label);
        loss += l / n as f64;
        upstream.push(g / n as f64);
    }
    Ok((loss, disc.net.backward_params(&cache, &upstream)?))
}

/// Parts of the generator objective for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorLoss {
    /// `mean −log D(G(z, c)_{−T}, c)`.
    pub adversarial: f64,
    /// `mean ‖G(z, c)_T − c‖₂` in normalized goal units.
    pub reconstruction: f64,
    /// Same distance in meters.
    pub reconstruction_m: f64,
    /// `adversarial + λ · reconstruction`.
    pub total: f64,
}

/// Generator objective on noise `zs` (`batch × z_dim`) and raw goals `cs`,
/// with the gradient of `total` with respect to the generator parameters.
/// The discriminator is held fixed.
pub fn generator_objective(
    gen: &Generator,
    disc: &Discriminator,
    zs: &[f64],
    cs: &[Vec2],
    recon_weight: f64,
) -> Result<(GeneratorLoss, Vec<f64>)> {
    let batch = cs.len();
    check_dim(batch * gen.z_dim, zs.len())?;
    let pdim = gen.policy_dim();
    let out_dim = pdim + 2;
    let in_dim = gen.z_dim + 2;

    let goals: Vec<[f64; 2]> = cs.iter().map(|&c| gen.normalize_goal(c)).collect();
    let mut input = Vec::with_capacity(batch * in_dim);
    for (z, c) in zs.chunks_exact(gen.z_dim).zip(&goals) {
        input.extend_from_slice(z);
        input.extend_from_slice(c);
    }
    let g_cache = gen.net.forward_batch(&input, batch)?;
    let out = g_cache.output();

    let mut d_rows = Vec::with_capacity(batch * out_dim);
    for (o, c) in out.chunks_exact(out_dim).zip(&goals) {
        d_rows.extend_from_slice(&o[..pdim]);
        d_rows.extend_from_slice(c);
    }
    let d_cache = disc.net.forward_batch(&d_rows, batch)?;
    let n = batch as f64;
    let mut adversarial = 0.0;
    let upstream_d: Vec<f64> = d_cache
        .output()
        .iter()
        .map(|&p| {
            let (l, g) = binary_cross_entropy(p, 1.0);
            adversarial += l / n;
            g / n
        })
        .collect();
    let d_input = disc.net.backward_input(&d_cache, &upstream_d)?;

    let mut upstream_g = vec![0.0; batch * out_dim];
    let mut reconstruction = 0.0;
    let mut reconstruction_m = 0.0;
    for b in 0..batch {
        let row = &mut upstream_g[b * out_dim..(b + 1) * out_dim];
        row[..pdim].copy_from_slice(&d_input[b * out_dim..b * out_dim + pdim]);
        let o = &out[b * out_dim..(b + 1) * out_dim];
        let diff = [o[pdim] - goals[b][0], o[pdim + 1] - goals[b][1]];
        let norm = libm::hypot(diff[0], diff[1]);
        reconstruction += norm / n;
        let c_hat = [gen.stats.denormalize(pdim, o[pdim]), gen.stats.denormalize(pdim + 1, o[pdim + 1])];
        reconstruction_m += math::dist2(c_hat, cs[b]) / n;
        if norm > 0.0 {
            row[pdim] = recon_weight * diff[0] / (norm * n);
            row[pdim + 1] = recon_weight * diff[1] / (norm * n);
        }
    }
    let grads = gen.net.backward_params(&g_cache, &upstream_g)?;
    let loss = GeneratorLoss {
        adversarial,
        reconstruction,
        reconstruction_m,
        total: adversarial + recon_weight * reconstruction,
    };
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub d_loss: f64,
    /// Mean over this iteration's generator steps.
    pub g_adv_loss: f64,
    pub recon_loss: f64,
    pub recon_error_m: f64,
    /// Balanced accuracy on held-out real rows and fresh fakes.
    pub d_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<TrainingRecord>,
    pub iterations_per_epoch: usize,
}

impl TrainingLog {
    /// Mean reconstruction error (m) over the records of one epoch.
    pub fn epoch_recon_error(&self, epoch: usize) -> Option<f64> {
        let rs: Vec<f64> = self.records.iter().filter(|r| r.epoch == epoch).map(|r| r.recon_error_m).collect();
        (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64)
    }
}

/// Models in their seeded initial state, plus the stream training continues
/// with.
pub fn init_models(rep: &Repertoire, cfg: &GpnConfig) -> Result<(Generator, Discriminator, PolicyRng)> {
    cfg.validate()?;
    if rep.is_empty() {
        return Err(Error::InsufficientData {
            have: 0,
            need: cfg.batch_size,
        });
    }
    let stats = repertoire_stats(rep)?;
    let mut rng = rng::seeded(cfg.seed);
    let gen = Generator::new(stats.clone(), cfg.z_dim, &cfg.hidden, &mut rng)?;
    let disc = Discriminator::new(stats.dim(), &cfg.hidden, &mut rng)?;
    Ok((gen, disc, rng))
}

struct Batch {
    zs: Vec<f64>,
    cs: Vec<Vec2>,
}

fn fake_batch(rep: &Repertoire, train: &[usize], gen: &Generator, n: usize, rng: &mut PolicyRng) -> Batch {
    let zs = (0..n * gen.z_dim).map(|_| rng::standard_normal(rng)).collect();
    let cs = (0..n).map(|_| rep.entries()[train[rng.random_range(0..train.len())]].landing).collect();
    Batch { zs, cs }
}

/// Normalized `(G(z, c)_{−T}, c)` rows for the discriminator.
fn fake_rows(gen: &Generator, batch: &Batch) -> Result<Vec<f64>> {
    let pdim = gen.policy_dim();
    let mut input = Vec::with_capacity(batch.cs.len() * (gen.z_dim + 2));
    let goals: Vec<[f64; 2]> = batch.cs.iter().map(|&c| gen.normalize_goal(c)).collect();
    for (z, c) in batch.zs.chunks_exact(gen.z_dim).zip(&goals) {
        input.extend_from_slice(z);
        input.extend_from_slice(c);
    }
    let cache = gen.net.forward_batch(&input, batch.cs.len())?;
    let mut rows = Vec::with_capacity(batch.cs.len() * (pdim + 2));
    for (o, c) in cache.output().chunks_exact(pdim + 2).zip(&goals) {
        rows.extend_from_slice(&o[..pdim]);
        rows.extend_from_slice(c);
    }
    Ok(rows)
}

fn gather(rows: &[f64], dim: usize, idx: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * dim);
    for &i in idx {
        out.extend_from_slice(&rows[i * dim..(i + 1) * dim]);
    }
    out
}

pub fn train_gpn(rep: &Repertoire, cfg: &GpnConfig) -> Result<(Generator, Discriminator, TrainingLog)> {
    if rep.len() < cfg.batch_size {
        return Err(Error::InsufficientData {
            have: rep.len(),
            need: cfg.batch_size,
        });
    }
    let (mut gen, mut disc, mut rng) = init_models(rep, cfg)?;
    let dim = gen.stats.dim();
    let rows = normalized_rows(rep, &gen.stats);

    // Hold out a small fixed set of real rows for the accuracy diagnostic.
    let mut order: Vec<usize> = (0..rep.len()).collect();
    order.shuffle(&mut rng);
    let holdout_n = (rep.len() / 10).min(cfg.batch_size);
    let (holdout, train) = order.split_at(holdout_n);
    let mut train = train.to_vec();
    let holdout_rows = gather(&rows, dim, holdout);

    let b = cfg.batch_size.min(train.len());
    let iterations = (train.len() / b).max(1);
    let mut d_opt = AdamState::new(disc.net.n_params(), cfg.adam());
    let mut g_opt = AdamState::new(gen.net.n_params(), cfg.adam());
    let mut log = TrainingLog {
        records: Vec::with_capacity(cfg.epochs * iterations),
        iterations_per_epoch: iterations,
    };
    let mut checkpoint: Option<Box<Checkpoint>> = None;

    for epoch in 0..cfg.epochs {
        train.shuffle(&mut rng);
        for it in 0..iterations {
            let real = gather(&rows, dim, &train[it * b..(it + 1) * b]);
            let fb = fake_batch(rep, &train, &gen, b, &mut rng);
            let fake = fake_rows(&gen, &fb)?;
            let (d_loss, d_grads) = discriminator_objective(&disc, &real, &fake)?;
            disc.net.adam_step(&d_grads, &mut d_opt)?;

            let mut g_adv = 0.0;
            let mut recon = 0.0;
            let mut recon_m = 0.0;
            for _ in 0..cfg.generator_steps {
                let fb = fake_batch(rep, &train, &gen, b, &mut rng);
                let (loss, grads) = generator_objective(&gen, &disc, &fb.zs, &fb.cs, cfg.recon_weight)?;
                gen.net.adam_step(&grads, &mut g_opt)?;
                g_adv += loss.adversarial;
                recon += loss.reconstruction;
                recon_m += loss.reconstruction_m;
            }
            let steps = cfg.generator_steps as f64;

            let d_accuracy = if holdout_n > 0 {
                let fb = fake_batch(rep, &train, &gen, holdout_n, &mut rng);
                let fake = fake_rows(&gen, &fb)?;
                let real_ok = disc.score(&holdout_rows, holdout_n)?.iter().filter(|&&p| p > 0.5).count();
                let fake_ok = disc.score(&fake, holdout_n)?.iter().filter(|&&p| p < 0.5).count();
                0.5 * (real_ok + fake_ok) as f64 / holdout_n as f64
            } else {
                f64::NAN
            };

            let record = TrainingRecord {
                epoch,
                iteration: it,
                d_loss,
                g_adv_loss: g_adv / steps,
                recon_loss: recon / steps,
                recon_error_m: recon_m / steps,
                d_accuracy,
            };
            if ![record.d_loss, record.g_adv_loss, record.recon_loss].iter().all(|v| v.is_finite())
                || gen.net.params().iter().chain(disc.net.params()).any(|p| !p.is_finite())
            {
                return Err(Error::TrainingDiverged {
                    epoch,
                    iteration: it,
                    checkpoint,
                });
            }
            log.records.push(record);
        }
        checkpoint = Some(Box::new(Checkpoint {
            generator: gen.clone(),
            discriminator: disc.clone(),
            epoch,
        }));
    }
    Ok((gen, disc, log))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityCriteria {
    pub max_tries: usize,
    /// A rollout counts only if it lands within this distance of the goal.
    pub accept_radius: f64,
    /// Skip rollouts whose predicted landing is farther than this from the
    /// goal.
    pub plausibility: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleOutcome {
    Success {
        policy: Policy,
        episode: Episode,
        /// Rollouts spent, including the successful one.
        tries: usize,
    },
    Failure {
        attempts: Vec<Episode>,
    },
}

impl SampleOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, SampleOutcome::Success { .. })
    }
}

/// Samples and simulates until a throw is collision-free and lands within
/// the acceptance radius, or the rollout budget runs out.
#[allow(clippy::too_many_arguments)]
pub fn sample_until_valid(
    gen: &Generator,
    c: Vec2,
    arm: &ArmModel,
    world: &ObstacleWorld,
    sim: &SimConfig,
    criteria: &ValidityCriteria,
    rng: &mut PolicyRng,
) -> Result<SampleOutcome> {
    if criteria.max_tries == 0 {
        return Err(Error::InvalidArgument("max_tries must be at least 1".into()));
    }
    // Bound on draws rejected by the plausibility filter.
    let max_draws = 100 * criteria.max_tries;
    let mut attempts = Vec::with_capacity(criteria.max_tries);
    let mut draws = 0;
    while attempts.len() < criteria.max_tries && draws < max_draws {
        draws += 1;
        let (policy, c_hat) = gen.sample_policy(c, rng)?;
        if let Some(limit) = criteria.plausibility {
            if math::dist2(c_hat, c) > limit {
                continue;
            }
        }
        let episode = world::rollout(arm, &policy, world, sim)?;
        if episode.hits(c, criteria.accept_radius) {
            return Ok(SampleOutcome::Success {
                policy,
                episode,
                tries: attempts.len() + 1,
            });
        }
        attempts.push(episode);
    }
    Ok(SampleOutcome::Failure { attempts })
}
