//! Ball flight, box obstacles and rollouts of complete throws.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::kinematics::{self, ArmModel, JointState, Limits, Policy, SweepSample};
use crate::math::{self, Vec2, Vec3};
use crate::rng;

pub const DEFAULT_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandingPoint {
    pub xy: Vec2,
    pub t_land: f64,
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if (0..3).all(|k| min[k] < max[k]) {
            Ok(Aabb { min, max })
        } else {
            Err(Error::InvalidArgument(format!("box corners {min:?} / {max:?} are not ordered")))
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: core::array::from_fn(|k| self.min[k].min(other.min[k])),
            max: core::array::from_fn(|k| self.max[k].max(other.max[k])),
        }
    }

    /// Slab test: does the closed segment `a-b` touch the box?
    pub fn hits_segment(&self, a: Vec3, b: Vec3) -> bool {
        let mut t0: f64 = 0.0;
        let mut t1: f64 = 1.0;
        for k in 0..3 {
            let d = b[k] - a[k];
            if d.abs() < 1e-300 {
                if a[k] < self.min[k] || a[k] > self.max[k] {
                    return false;
                }
            } else {
                let inv = 1.0 / d;
                let mut ta = (self.min[k] - a[k]) * inv;
                let mut tb = (self.max[k] - a[k]) * inv;
                if ta > tb {
                    core::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

/// Axis-aligned rectangle of the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorBounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl FloorBounds {
    pub fn new(min: Vec2, max: Vec2) -> Result<Self> {
        if min[0] < max[0] && min[1] < max[1] {
            Ok(FloorBounds { min, max })
        } else {
            Err(Error::InvalidArgument(format!("floor bounds {min:?} / {max:?} are not ordered")))
        }
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn depth(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.depth()
    }

    pub fn diameter(&self) -> f64 {
        libm::hypot(self.width(), self.depth())
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }
}

impl Default for FloorBounds {
    /// 4 m × 4 m around the robot, offset forward.
    fn default() -> Self {
        FloorBounds {
            min: [-1.5, -2.0],
            max: [2.5, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleWorld {
    boxes: Vec<Aabb>,
    bounds: FloorBounds,
    hull: Option<Aabb>,
}

impl ObstacleWorld {
    pub fn empty(bounds: FloorBounds) -> Self {
        ObstacleWorld {
            boxes: Vec::new(),
            bounds,
            hull: None,
        }
    }

    /// Boxes must lie inside `bounds` in plan view.
    pub fn new(boxes: Vec<Aabb>, bounds: FloorBounds) -> Result<Self> {
        const SLACK: f64 = 1e-9;
        for (i, b) in boxes.iter().enumerate() {
            if !(0..3).all(|k| b.min[k] < b.max[k]) {
                return Err(Error::InvalidArgument(format!("box {i} has unordered corners")));
            }
            let inside = b.min[0] >= bounds.min[0] - SLACK
                && b.min[1] >= bounds.min[1] - SLACK
                && b.max[0] <= bounds.max[0] + SLACK
                && b.max[1] <= bounds.max[1] + SLACK;
            if !inside {
                return Err(Error::InvalidArgument(format!("box {i} lies outside the workspace")));
            }
        }
        let hull = boxes.iter().skip(1).fold(boxes.first().copied(), |acc, b| acc.map(|h| h.union(b)));
        Ok(ObstacleWorld { boxes, bounds, hull })
    }

    pub fn boxes(&self) -> &[Aabb] {
        &self.boxes
    }

    pub fn bounds(&self) -> &FloorBounds {
        &self.bounds
    }

    pub fn floor_z(&self) -> f64 {
        0.0
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Total plan-view area of the boxes (boxes may not overlap for this to
    /// be the blocked area).
    pub fn blocked_area(&self) -> f64 {
        self.boxes
            .iter()
            .map(|b| (b.max[0] - b.min[0]) * (b.max[1] - b.min[1]))
            .sum()
    }
}

pub fn segment_hits_world(world: &ObstacleWorld, a: Vec3, b: Vec3) -> bool {
    match &world.hull {
        Some(hull) if hull.hits_segment(a, b) => world.boxes.iter().any(|bx| bx.hits_segment(a, b)),
        _ => false,
    }
}

fn path_hits_world(world: &ObstacleWorld, points: impl Iterator<Item = Vec3>) -> bool {
    if world.is_empty() {
        return false;
    }
    let mut prev: Option<Vec3> = None;
    for p in points {
        if let Some(a) = prev {
            if segment_hits_world(world, a, p) {
                return true;
            }
        }
        prev = Some(p);
    }
    false
}

/// Drag-free flight from release until the ball reaches `z = 0`.
pub fn simulate_flight(release_pos: Vec3, release_vel: Vec3, g: f64, dt: f64) -> Result<(Vec<BallState>, LandingPoint)> {
    if !(release_pos[2] > 0.0) {
        return Err(Error::InvalidRelease { z: release_pos[2] });
    }
    if !(g > 0.0) {
        return Err(Error::InvalidArgument(format!("gravity {g} must be positive")));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("trace step {dt} must be positive")));
    }
    let t_land = landing_time(release_pos[2], release_vel[2], g);
    let at = |t: f64| BallState {
        position: [
            release_pos[0] + release_vel[0] * t,
            release_pos[1] + release_vel[1] * t,
            release_pos[2] + release_vel[2] * t - 0.5 * g * t * t,
        ],
        velocity: [release_vel[0], release_vel[1], release_vel[2] - g * t],
        t,
    };

    let mut trace = Vec::with_capacity((t_land / dt) as usize + 2);
    let mut k = 0u64;
    loop {
        let t = k as f64 * dt;
        if t >= t_land {
            break;
        }
        trace.push(at(t));
        k += 1;
    }
    let mut last = at(t_land);
    last.position[2] = 0.0;
    trace.push(last);
    let landing = LandingPoint {
        xy: [last.position[0], last.position[1]],
        t_land,
    };
    Ok((trace, landing))
}

/// Positive root of `z0 + vz t − g t²/2 = 0`, written to avoid cancellation.
fn landing_time(z0: f64, vz: f64, g: f64) -> f64 {
    let disc = libm::sqrt(vz * vz + 2.0 * g * z0);
    if vz >= 0.0 {
        (vz + disc) / g
    } else {
        2.0 * z0 / (disc - vz)
    }
}

/// Vertical cylinder standing on the floor that stands in for the torso.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyCylinder {
    pub center: Vec2,
    pub radius: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyConfig {
    pub body: BodyCylinder,
    pub clearance: f64,
    /// Link segments attached to the torso that are exempt from the body
    /// check, counted from the base.
    pub skip_links: usize,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        SafetyConfig {
            body: BodyCylinder {
                center: [-0.2, 0.0],
                radius: 0.15,
                height: 1.1,
            },
            clearance: 0.02,
            skip_links: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub gravity: f64,
    /// Step for the arm sweep and the ball trace; collision checks run on
    /// the segments between consecutive samples.
    pub dt: f64,
    /// Throws that have not landed by then count as not landing.
    pub flight_horizon: f64,
    pub start: JointState,
    pub launch_window: Limits,
    pub safety: SafetyConfig,
}

impl SimConfig {
    pub fn for_arm(arm: &ArmModel) -> Self {
        SimConfig {
            gravity: DEFAULT_GRAVITY,
            dt: 0.01,
            flight_horizon: 10.0,
            start: JointState::zeros(arm.n_joints()),
            launch_window: kinematics::DEFAULT_LAUNCH_WINDOW,
            safety: SafetyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EpisodeFlags {
    pub arm_collision: bool,
    pub ball_collision: bool,
    pub self_collision: bool,
    pub clamped: bool,
}

impl EpisodeFlags {
    pub fn any_collision(&self) -> bool {
        self.arm_collision || self.ball_collision || self.self_collision
    }

    pub fn bits(&self) -> u8 {
        u8::from(self.arm_collision)
            | u8::from(self.ball_collision) << 1
            | u8::from(self.self_collision) << 2
            | u8::from(self.clamped) << 3
    }

    pub fn from_bits(bits: u8) -> Self {
        EpisodeFlags {
            arm_collision: bits & 1 != 0,
            ball_collision: bits & 2 != 0,
            self_collision: bits & 4 != 0,
            clamped: bits & 8 != 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// The executed (clamped) policy.
    pub policy: Policy,
    pub arm_trace: Vec<SweepSample>,
    pub ball_trace: Vec<BallState>,
    pub landing: Option<LandingPoint>,
    /// Where the ball would land with no obstacles in the way.
    pub free_landing: Option<LandingPoint>,
    pub flags: EpisodeFlags,
    pub clamp_count: usize,
}

impl Episode {
    /// Collision-free and landed.
    pub fn is_valid(&self) -> bool {
        !self.flags.any_collision() && self.landing.is_some()
    }

    pub fn landing_xy(&self) -> Option<Vec2> {
        self.landing.map(|l| l.xy)
    }

    /// Landed within `tau` of `target` without any collision.
    pub fn hits(&self, target: Vec2, tau: f64) -> bool {
        !self.flags.any_collision() && self.landing.is_some_and(|l| math::dist2(l.xy, target) <= tau)
    }

    /// Re-evaluates the obstacle flags against another world. The arm and
    /// ball traces do not depend on obstacles, so this equals a fresh
    /// rollout in `world`.
    pub fn in_world(&self, world: &ObstacleWorld) -> Episode {
        let mut ep = self.clone();
        ep.apply_world(world);
        ep
    }

    fn apply_world(&mut self, world: &ObstacleWorld) {
        self.flags.arm_collision = path_hits_world(world, self.arm_trace.iter().map(|s| s.end_effector));
        self.flags.ball_collision = path_hits_world(world, self.ball_trace.iter().map(|b| b.position));
        self.landing = if self.flags.ball_collision { None } else { self.free_landing };
    }

    /// Obstacle flags in `world` without cloning the traces.
    pub fn flags_in(&self, world: &ObstacleWorld) -> EpisodeFlags {
        EpisodeFlags {
            arm_collision: path_hits_world(world, self.arm_trace.iter().map(|s| s.end_effector)),
            ball_collision: path_hits_world(world, self.ball_trace.iter().map(|b| b.position)),
            ..self.flags
        }
    }

    /// [`Episode::hits`] as it would be in `world`.
    pub fn hits_in(&self, world: &ObstacleWorld, target: Vec2, tau: f64) -> bool {
        !self.flags_in(world).any_collision()
            && self.free_landing.is_some_and(|l| math::dist2(l.xy, target) <= tau)
    }
}

/// Arm below the floor, or a link segment entering the torso cylinder
/// (inflated by the clearance).
pub fn self_collision_check(arm: &ArmModel, arm_trace: &[SweepSample], safety: &SafetyConfig) -> Result<bool> {
    let body = &safety.body;
    let axis_lo = [body.center[0], body.center[1], 0.0];
    let axis_hi = [body.center[0], body.center[1], body.height];
    let reach = body.radius + safety.clearance;
    for sample in arm_trace {
        if sample.end_effector[2] < 0.0 {
            return Ok(true);
        }
        let points = kinematics::link_points(arm, &sample.state.theta)?;
        if points.iter().any(|p| p[2] < 0.0) {
            return Ok(true);
        }
        for seg in points.windows(2).skip(safety.skip_links) {
            if math::segment_segment_distance(seg[0], seg[1], axis_lo, axis_hi) < reach {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Executes a policy: clamp, sweep the cubic plan, release the ball at the
/// end-effector state at `t_T`, fly it, and check every traced segment.
pub fn rollout(arm: &ArmModel, policy: &Policy, world: &ObstacleWorld, cfg: &SimConfig) -> Result<Episode> {
    let (executed, clamp_count) = kinematics::clamp_policy(arm, policy, cfg.launch_window)?;
    let plan = kinematics::trajectory_coefficients(&cfg.start, &executed)?;
    let arm_trace = kinematics::sweep_trajectory(arm, &plan, cfg.dt)?;
    let self_collision = self_collision_check(arm, &arm_trace, &cfg.safety)?;

    let launch = arm_trace.last().expect("sweep always has a final sample");
    let release_pos = launch.end_effector;
    let release_vel = kinematics::end_effector_velocity(arm, &launch.state.theta, &launch.state.theta_dot)?;

    let (ball_trace, free_landing, floor_breach) = match simulate_flight(release_pos, release_vel, cfg.gravity, cfg.dt) {
        Ok((trace, landing)) => {
            let landed = (landing.t_land <= cfg.flight_horizon).then_some(landing);
            (trace, landed, false)
        }
        Err(Error::InvalidRelease { .. }) => (Vec::new(), None, true),
        Err(e) => return Err(e),
    };

    let mut episode = Episode {
        policy: executed,
        arm_trace,
        ball_trace,
        landing: None,
        free_landing,
        flags: EpisodeFlags {
            self_collision: self_collision || floor_breach,
            clamped: clamp_count > 0,
            ..EpisodeFlags::default()
        },
        clamp_count,
    };
    episode.apply_world(world);
    Ok(episode)
}

/// Floor partition used for random occlusion maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionSpec {
    pub bounds: FloorBounds,
    pub cell: f64,
    pub height: f64,
}

impl Default for OcclusionSpec {
    fn default() -> Self {
        OcclusionSpec {
            bounds: FloorBounds::default(),
            cell: 0.2,
            height: 0.5,
        }
    }
}

impl OcclusionSpec {
    pub fn grid(&self) -> (usize, usize) {
        let nx = libm::round(self.bounds.width() / self.cell).max(1.0) as usize;
        let ny = libm::round(self.bounds.depth() / self.cell).max(1.0) as usize;
        (nx, ny)
    }
}

/// Blocks `round(rate · cells)` floor cells chosen uniformly without
/// replacement.
pub fn random_occlusion_world(rate: f64, spec: &OcclusionSpec, seed: u64) -> Result<ObstacleWorld> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("occlusion rate {rate} outside [0, 1]")));
    }
    if !(spec.cell > 0.0) || !(spec.height > 0.0) {
        return Err(Error::InvalidArgument("occlusion cell and height must be positive".into()));
    }
    let (nx, ny) = spec.grid();
    let total = nx * ny;
    let count = libm::round(rate * total as f64) as usize;
    let mut rng = rng::seeded(seed);
    let mut cells = index::sample(&mut rng, total, count).into_vec();
    cells.sort_unstable();

    let b = &spec.bounds;
    let wx = b.width() / nx as f64;
    let wy = b.depth() / ny as f64;
    let boxes = cells
        .into_iter()
        .map(|c| {
            let (ix, iy) = (c % nx, c / nx);
            let x0 = b.min[0] + ix as f64 * wx;
            let y0 = b.min[1] + iy as f64 * wy;
            Aabb {
                min: [x0, y0, 0.0],
                max: [x0 + wx, y0 + wy, spec.height],
            }
        })
        .collect();
    ObstacleWorld::new(boxes, spec.bounds)
}
