//! TOML configuration: arm geometry files and experiment settings.

use std::fs;
use std::path::{Path, PathBuf};

use gpn_core::baselines::{BayesOptConfig, GpHyper, DEFAULT_KDE_BANDWIDTH_C, DEFAULT_KDE_BANDWIDTH_PI};
use gpn_core::gpn::{GpnConfig, ValidityCriteria};
use gpn_core::kinematics::{ArmModel, Limits, Link};
use gpn_core::math::{Pose, Vec2, Vec3};
use gpn_core::metrics::TargetGrid;
use gpn_core::repertoire::QdConfig;
use gpn_core::world::{Aabb, FloorBounds, OcclusionSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub axis: Vec3,
    pub offset: Vec3,
    pub theta_limits: [f64; 2],
    pub velocity_limits: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    pub translation: Vec3,
    /// Row-major rotation matrix; identity when omitted.
    #[serde(default = "identity")]
    pub rotation: [Vec3; 3],
}

fn identity() -> [Vec3; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub base_pose: PoseSpec,
    pub links: Vec<LinkSpec>,
}

impl ArmSpec {
    pub fn from_arm(arm: &ArmModel) -> Self {
        let p = arm.base_pose();
        ArmSpec {
            base_pose: PoseSpec {
                translation: p.translation,
                rotation: p.rotation,
            },
            links: arm
                .links()
                .iter()
                .map(|l| LinkSpec {
                    axis: l.axis,
                    offset: l.offset,
                    theta_limits: [l.theta_limits.lo, l.theta_limits.hi],
                    velocity_limits: [l.velocity_limits.lo, l.velocity_limits.hi],
                })
                .collect(),
        }
    }

    pub fn build(&self) -> Result<ArmModel> {
        let links = self
            .links
            .iter()
            .map(|l| Link {
                axis: l.axis,
                offset: l.offset,
                theta_limits: Limits::new(l.theta_limits[0], l.theta_limits[1]),
                velocity_limits: Limits::new(l.velocity_limits[0], l.velocity_limits[1]),
            })
            .collect();
        let pose = Pose {
            rotation: self.base_pose.rotation,
            translation: self.base_pose.translation,
        };
        Ok(ArmModel::new(links, pose)?)
    }
}

pub fn load_arm(path: &Path) -> Result<ArmModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: ArmSpec = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    spec.build()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QdSection {
    pub population: usize,
    pub generations: usize,
    pub mutation_scale: f64,
    pub novelty_k: usize,
    pub add_threshold: f64,
    pub coverage_cell: f64,
    pub budget: usize,
}

impl Default for QdSection {
    fn default() -> Self {
        let d = QdConfig::default();
        QdSection {
            population: d.population,
            generations: d.generations,
            mutation_scale: d.mutation_scale,
            novelty_k: d.novelty_k,
            add_threshold: d.add_threshold,
            coverage_cell: d.coverage_cell,
            budget: d.budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpnSection {
    pub z_dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub generator_steps: usize,
    pub recon_weight: f64,
    pub hidden: Vec<usize>,
}

impl From<&GpnConfig> for GpnSection {
    fn from(d: &GpnConfig) -> Self {
        GpnSection {
            z_dim: d.z_dim,
            lr: d.lr,
            epochs: d.epochs,
            batch_size: d.batch_size,
            generator_steps: d.generator_steps,
            recon_weight: d.recon_weight,
            hidden: d.hidden.clone(),
        }
    }
}

impl Default for GpnSection {
    fn default() -> Self {
        (&GpnConfig::desk()).into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub min: Vec2,
    pub max: Vec2,
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            min: [-1.0, -1.5],
            max: [2.0, 1.5],
            nx: 5,
            ny: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FloorSection {
    pub min: Vec2,
    pub max: Vec2,
    /// Side of the square occlusion cells (m).
    pub cell: f64,
    /// Height of occlusion boxes (m).
    pub obstacle_height: f64,
}

impl Default for FloorSection {
    fn default() -> Self {
        let d = OcclusionSpec::default();
        FloorSection {
            min: d.bounds.min,
            max: d.bounds.max,
            cell: d.cell,
            obstacle_height: d.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdeSection {
    pub bandwidth_c: f64,
    pub bandwidth_pi: f64,
}

impl Default for KdeSection {
    fn default() -> Self {
        KdeSection {
            bandwidth_c: DEFAULT_KDE_BANDWIDTH_C,
            bandwidth_pi: DEFAULT_KDE_BANDWIDTH_PI,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BayesOptSection {
    pub budget: usize,
    pub acquisition_samples: usize,
    pub local_fraction: f64,
    pub local_sigma: f64,
    pub length_scale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
    pub penalty_factor: f64,
}

impl Default for BayesOptSection {
    fn default() -> Self {
        let d = BayesOptConfig::default();
        BayesOptSection {
            budget: d.budget,
            acquisition_samples: d.acquisition_samples,
            local_fraction: d.local_fraction,
            local_sigma: d.local_sigma,
            length_scale: d.hyper.length_scale,
            signal_var: d.hyper.signal_var,
            noise_var: d.hyper.noise_var,
            penalty_factor: d.penalty_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub goal: Vec2,
    pub wall_min: Vec3,
    pub wall_max: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub max_tries: usize,
    /// Landing radius (m) for a sampled throw to count as valid.
    pub accept_radius: f64,
    /// Optional pre-rollout filter on the predicted landing (m).
    pub plausibility: Option<f64>,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection {
            max_tries: 10,
            accept_radius: 0.3,
            plausibility: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Arm geometry file, relative to the config file. The built-in arm is
    /// used when absent.
    pub arm: Option<PathBuf>,
    pub qd: QdSection,
    pub gpn: GpnSection,
    pub grid: GridSection,
    pub floor: FloorSection,
    pub trials: usize,
    pub taus: Vec<f64>,
    pub ks: Vec<usize>,
    pub occlusion_rates: Vec<f64>,
    pub obstacle_maps: usize,
    /// Noise levels for the perturbed-lookup sweep (fraction of gene range).
    pub noisy_sigmas: Vec<f64>,
    pub waypoints: usize,
    /// Radius used for the k × occlusion-rate success matrices.
    pub success_tau: f64,
    /// k used in the baseline comparison.
    pub baseline_k: usize,
    /// Stored entries the lookup protocol may fall back to.
    pub lookup_candidates: usize,
    pub kde: KdeSection,
    pub bayes_opt: BayesOptSection,
    pub sampling: SamplingSection,
    pub scenarios: Vec<ScenarioSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            arm: None,
            qd: QdSection::default(),
            gpn: GpnSection::default(),
            grid: GridSection::default(),
            floor: FloorSection::default(),
            trials: 10,
            taus: (0..=10).map(|i| i as f64 / 10.0).collect(),
            ks: (1..=9).collect(),
            occlusion_rates: (1..=8).map(|i| i as f64 / 100.0).collect(),
            obstacle_maps: 100,
            noisy_sigmas: vec![0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1],
            waypoints: gpn_core::metrics::DEFAULT_WAYPOINTS,
            success_tau: 0.2,
            baseline_k: 3,
            lookup_candidates: 10,
            kde: KdeSection::default(),
            bayes_opt: BayesOptSection::default(),
            sampling: SamplingSection::default(),
            scenarios: Vec::new(),
        }
    }
}

/// Pipeline stages that draw their own seed from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Search = 1,
    Train = 2,
    Grid = 3,
    Obstacles = 4,
    Baselines = 5,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(arm) = &cfg.arm {
            if arm.is_relative() {
                cfg.arm = Some(path.parent().unwrap_or(Path::new(".")).join(arm));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Switches every size to the magnitudes of the original study.
    pub fn paper_scale(&mut self) {
        self.qd.population = 500;
        self.qd.budget = 150_000;
        self.qd.add_threshold = 0.02;
        self.gpn = (&GpnConfig::default()).into();
        self.obstacle_maps = 1000;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.taus.is_empty() || self.ks.is_empty() || self.occlusion_rates.is_empty() || self.noisy_sigmas.is_empty() {
            return bad("tau, k, occlusion-rate and noise lists must be non-empty");
        }
        if self.trials == 0 || self.obstacle_maps == 0 || self.lookup_candidates == 0 {
            return bad("trial, map and candidate counts must be positive");
        }
        if self.ks.iter().any(|&k| k == 0 || k > self.trials) || self.baseline_k > self.trials {
            return bad("every k must lie in 1..=trials");
        }
        if self.taus.iter().any(|t| !(*t >= 0.0)) || self.occlusion_rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("taus must be non-negative and occlusion rates in [0, 1]");
        }
        let floor = self.floor_bounds()?;
        let g = self.target_grid()?;
        if !floor.contains(g.min) || !floor.contains(g.max) {
            return bad("grid extent must lie within the floor bounds");
        }
        if let Some(arm) = &self.arm {
            if !arm.exists() {
                return Err(Error::Config(format!("arm file {} does not exist", arm.display())));
            }
        }
        self.qd_config(0).validate()?;
        self.gpn_config(0).validate()?;
        Ok(())
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update([stage as u8]);
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
    }

    pub fn arm_model(&self) -> Result<ArmModel> {
        match &self.arm {
            Some(p) => load_arm(p),
            None => Ok(ArmModel::default_arm()),
        }
    }

    pub fn qd_config(&self, seed: u64) -> QdConfig {
        let q = &self.qd;
        QdConfig {
            population: q.population,
            generations: q.generations,
            mutation_scale: q.mutation_scale,
            novelty_k: q.novelty_k,
            add_threshold: q.add_threshold,
            coverage_cell: q.coverage_cell,
            budget: q.budget,
            seed,
        }
    }

    pub fn gpn_config(&self, seed: u64) -> GpnConfig {
        let g = &self.gpn;
        GpnConfig {
            z_dim: g.z_dim,
            lr: g.lr,
            epochs: g.epochs,
            batch_size: g.batch_size,
            generator_steps: g.generator_steps,
            recon_weight: g.recon_weight,
            hidden: g.hidden.clone(),
            seed,
        }
    }

    pub fn floor_bounds(&self) -> Result<FloorBounds> {
        Ok(FloorBounds::new(self.floor.min, self.floor.max)?)
    }

    pub fn occlusion_spec(&self) -> Result<OcclusionSpec> {
        Ok(OcclusionSpec {
            bounds: self.floor_bounds()?,
            cell: self.floor.cell,
            height: self.floor.obstacle_height,
        })
    }

    pub fn target_grid(&self) -> Result<TargetGrid> {
        Ok(TargetGrid::new(self.grid.min, self.grid.max, self.grid.nx, self.grid.ny)?)
    }

    pub fn bayes_opt_config(&self) -> BayesOptConfig {
        let b = &self.bayes_opt;
        BayesOptConfig {
            budget: b.budget,
            acquisition_samples: b.acquisition_samples,
            local_fraction: b.local_fraction,
            local_sigma: b.local_sigma,
            hyper: GpHyper {
                length_scale: b.length_scale,
                signal_var: b.signal_var,
                noise_var: b.noise_var,
            },
            penalty_factor: b.penalty_factor,
        }
    }

    pub fn validity(&self) -> ValidityCriteria {
        ValidityCriteria {
            max_tries: self.sampling.max_tries,
            accept_radius: self.sampling.accept_radius,
            plausibility: self.sampling.plausibility,
        }
    }

    pub fn scenario_walls(&self) -> Result<Vec<(Vec2, Aabb)>> {
        self.scenarios
            .iter()
            .map(|s| Ok((s.goal, Aabb::new(s.wall_min, s.wall_max)?)))
            .collect()
    }

    /// Canonical TOML of the effective configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    /// First 16 hex digits of the SHA-256 of [`ExperimentConfig::canonical`].
    pub fn hash(&self) -> String {
        let d = Sha256::digest(self.canonical().as_bytes());
        d[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
