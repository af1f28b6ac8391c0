//! Serial-link arm model and open-loop launch trajectories.
//!
//! A throw is described by a [`Policy`]: the joint angles and velocities the
//! arm must reach at launch time `t_T`. Each joint follows a cubic in
//! normalized time `s = t / t_T`,
//!
//! ```text
//! θ(s) = α4 s³ + α3 s² + α2 s + α1
//! ```
//!
//! whose coefficients are fixed by the start state and the launch state.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::math::{self, Fnv64, Pose, Vec3};

/// Number of joints of the default arm; policies for it have 15 genes.
pub const DEFAULT_JOINTS: usize = 7;

/// Default launch-time window in seconds.
pub const DEFAULT_LAUNCH_WINDOW: Limits = Limits { lo: 0.2, hi: 2.0 };

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub lo: f64,
    pub hi: f64,
}

impl Limits {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Limits { lo, hi }
    }

    pub fn span(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// One revolute joint followed by a rigid link.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    /// Rotation axis in the parent frame (unit length).
    pub axis: Vec3,
    /// Translation from this joint to the next, in this joint's rotated frame.
    pub offset: Vec3,
    pub theta_limits: Limits,
    pub velocity_limits: Limits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    links: Vec<Link>,
    base_pose: Pose,
}

impl ArmModel {
    pub fn new(links: Vec<Link>, base_pose: Pose) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::InvalidArm("arm has no links".into()));
        }
        for (i, link) in links.iter().enumerate() {
            let n = math::norm(link.axis);
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArm(format!("link {i}: axis norm {n} is not 1")));
            }
            for (name, lim) in [("theta", link.theta_limits), ("velocity", link.velocity_limits)] {
                if !(lim.lo < lim.hi) {
                    return Err(Error::InvalidArm(format!(
                        "link {i}: {name} limits [{}, {}] are not increasing",
                        lim.lo, lim.hi
                    )));
                }
            }
            if link.offset.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArm(format!("link {i}: non-finite offset")));
            }
        }
        Ok(ArmModel { links, base_pose })
    }

    /// Seven joints with alternating z/y axes, about one meter of reach,
    /// shoulder 0.6 m above the floor, facing +x.
    pub fn default_arm() -> Self {
        const Z: Vec3 = [0.0, 0.0, 1.0];
        const Y: Vec3 = [0.0, 1.0, 0.0];
        let link = |axis, offset, lo: f64, hi: f64| Link {
            axis,
            offset,
            theta_limits: Limits::new(lo, hi),
            velocity_limits: Limits::new(-1.5, 1.5),
        };
        let links = alloc::vec![
            link(Z, [0.05, 0.0, 0.1], -1.0, 1.0),
            link(Y, [0.25, 0.0, 0.0], -1.2, 0.8),
            link(Z, [0.05, 0.0, 0.0], -1.5, 1.5),
            link(Y, [0.25, 0.0, 0.0], -1.5, 1.5),
            link(Z, [0.05, 0.0, 0.0], -1.5, 1.5),
            link(Y, [0.2, 0.0, 0.0], -1.5, 1.5),
            link(Z, [0.1, 0.0, 0.0], -1.5, 1.5),
        ];
        ArmModel::new(links, Pose::from_translation([0.0, 0.0, 0.6])).expect("default arm is valid")
    }

    pub fn n_joints(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn base_pose(&self) -> &Pose {
        &self.base_pose
    }

    /// Stable fingerprint of the geometry and limits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::default();
        for row in &self.base_pose.rotation {
            row.iter().for_each(|&v| h.write_f64(v));
        }
        self.base_pose.translation.iter().for_each(|&v| h.write_f64(v));
        for link in &self.links {
            link.axis.iter().chain(link.offset.iter()).for_each(|&v| h.write_f64(v));
            for lim in [link.theta_limits, link.velocity_limits] {
                h.write_f64(lim.lo);
                h.write_f64(lim.hi);
            }
        }
        h.finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub theta: Vec<f64>,
    pub theta_dot: Vec<f64>,
    pub theta_ddot: Vec<f64>,
    pub t: f64,
}

impl JointState {
    /// Arm at rest at the given angles, time zero.
    pub fn at_rest(theta: Vec<f64>) -> Self {
        let n = theta.len();
        JointState {
            theta,
            theta_dot: alloc::vec![0.0; n],
            theta_ddot: alloc::vec![0.0; n],
            t: 0.0,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::at_rest(alloc::vec![0.0; n])
    }

    pub fn n_joints(&self) -> usize {
        self.theta.len()
    }
}

/// Launch state of an open-loop throw.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub theta: Vec<f64>,
    pub theta_dot: Vec<f64>,
    pub t_launch: f64,
}

impl Policy {
    pub fn n_joints(&self) -> usize {
        self.theta.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.theta.len() + 1
    }

    /// Flattened `[θ_T, θ̇_T, t_T]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.theta);
        v.extend_from_slice(&self.theta_dot);
        v.push(self.t_launch);
        v
    }

    pub fn from_slice(genes: &[f64]) -> Result<Self> {
        if genes.len() < 3 || genes.len() % 2 == 0 {
            return Err(Error::InvalidPolicy(format!(
                "a policy has 2n+1 genes, got {}",
                genes.len()
            )));
        }
        let n = (genes.len() - 1) / 2;
        Ok(Policy {
            theta: genes[..n].to_vec(),
            theta_dot: genes[n..2 * n].to_vec(),
            t_launch: genes[2 * n],
        })
    }
}

/// Per-gene legal box for flattened policies.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl PolicyBounds {
    pub fn new(arm: &ArmModel, launch_window: Limits) -> Self {
        let mut lo = Vec::with_capacity(2 * arm.n_joints() + 1);
        let mut hi = Vec::with_capacity(2 * arm.n_joints() + 1);
        for l in arm.links() {
            lo.push(l.theta_limits.lo);
            hi.push(l.theta_limits.hi);
        }
        for l in arm.links() {
            lo.push(l.velocity_limits.lo);
            hi.push(l.velocity_limits.hi);
        }
        lo.push(launch_window.lo);
        hi.push(launch_window.hi);
        PolicyBounds { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn range(&self, gene: usize) -> f64 {
        self.hi[gene] - self.lo[gene]
    }

    /// Clamps in place and returns how many genes were moved.
    pub fn clamp(&self, genes: &mut [f64]) -> usize {
        let mut moved = 0;
        for ((g, &lo), &hi) in genes.iter_mut().zip(&self.lo).zip(&self.hi) {
            let c = if g.is_nan() { lo } else { g.clamp(lo, hi) };
            if c != *g {
                moved += 1;
                *g = c;
            }
        }
        moved
    }

    pub fn contains(&self, genes: &[f64]) -> bool {
        genes.len() == self.dim()
            && genes
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(g, (lo, hi))| g >= lo && g <= hi)
    }
}

/// Clamps a policy to the arm's limits and the launch window.
pub fn clamp_policy(arm: &ArmModel, policy: &Policy, launch_window: Limits) -> Result<(Policy, usize)> {
    check_dim(arm.n_joints(), policy.theta.len())?;
    check_dim(arm.n_joints(), policy.theta_dot.len())?;
    let bounds = PolicyBounds::new(arm, launch_window);
    let mut genes = policy.to_vec();
    let moved = bounds.clamp(&mut genes);
    Ok((Policy::from_slice(&genes)?, moved))
}

/// Cubic joint trajectory from the start state to a launch state.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicPlan {
    /// Per joint `[α1, α2, α3, α4]`.
    pub coeffs: Vec<[f64; 4]>,
    pub t_launch: f64,
}

impl CubicPlan {
    pub fn n_joints(&self) -> usize {
        self.coeffs.len()
    }
}

pub fn trajectory_coefficients(start: &JointState, policy: &Policy) -> Result<CubicPlan> {
    let t_launch = policy.t_launch;
    if !(t_launch > 0.0) || !t_launch.is_finite() {
        return Err(Error::InvalidPolicy(format!("launch time {t_launch} must be positive")));
    }
    let n = start.n_joints();
    check_dim(n, start.theta_dot.len())?;
    check_dim(n, policy.theta.len())?;
    check_dim(n, policy.theta_dot.len())?;

    let coeffs = (0..n)
        .map(|j| {
            let a1 = start.theta[j];
            let a2 = start.theta_dot[j] * t_launch;
            let a3 = 3.0 * policy.theta[j] - policy.theta_dot[j] * t_launch - 2.0 * a2 - 3.0 * a1;
            let a4 = policy.theta[j] - a1 - a2 - a3;
            [a1, a2, a3, a4]
        })
        .collect();
    Ok(CubicPlan { coeffs, t_launch })
}

pub fn evaluate_plan(plan: &CubicPlan, t: f64) -> Result<JointState> {
    if !(0.0..=plan.t_launch).contains(&t) {
        return Err(Error::OutOfRange {
            t,
            t_end: plan.t_launch,
        });
    }
    let tt = plan.t_launch;
    let s = t / tt;
    let n = plan.n_joints();
    let mut state = JointState {
        theta: Vec::with_capacity(n),
        theta_dot: Vec::with_capacity(n),
        theta_ddot: Vec::with_capacity(n),
        t,
    };
    for &[a1, a2, a3, a4] in &plan.coeffs {
        state.theta.push(((a4 * s + a3) * s + a2) * s + a1);
        state.theta_dot.push(((3.0 * a4 * s + 2.0 * a3) * s + a2) / tt);
        state.theta_ddot.push((6.0 * a4 * s + 2.0 * a3) / (tt * tt));
    }
    Ok(state)
}

/// World frames after each joint: `frames[i]` is the frame of joint `i`
/// *before* its rotation; `frames[n]` is the end effector.
fn chain_frames(arm: &ArmModel, theta: &[f64]) -> Result<Vec<Pose>> {
    check_dim(arm.n_joints(), theta.len())?;
    let mut frames = Vec::with_capacity(arm.n_joints() + 1);
    let mut pose = arm.base_pose;
    for (link, &q) in arm.links().iter().zip(theta) {
        frames.push(pose);
        let rotated = Pose {
            rotation: math::mat_mul(&pose.rotation, &math::axis_angle(link.axis, q)),
            translation: pose.translation,
        };
        pose = Pose {
            rotation: rotated.rotation,
            translation: rotated.transform_point(link.offset),
        };
    }
    frames.push(pose);
    Ok(frames)
}

pub fn forward_kinematics(arm: &ArmModel, theta: &[f64]) -> Result<Pose> {
    Ok(*chain_frames(arm, theta)?.last().expect("chain has an end effector"))
}

/// Origins of the base and every link frame, base first, end effector last.
pub fn link_points(arm: &ArmModel, theta: &[f64]) -> Result<Vec<Vec3>> {
    Ok(chain_frames(arm, theta)?.iter().map(|p| p.translation).collect())
}

/// Cartesian end-effector velocity `J(θ) θ̇`.
pub fn end_effector_velocity(arm: &ArmModel, theta: &[f64], theta_dot: &[f64]) -> Result<Vec3> {
    check_dim(arm.n_joints(), theta_dot.len())?;
    let frames = chain_frames(arm, theta)?;
    let ee = frames[arm.n_joints()].translation;
    let mut v = [0.0; 3];
    for (i, link) in arm.links().iter().enumerate() {
        let axis = frames[i].transform_vector(link.axis);
        let lever = math::sub(ee, frames[i].translation);
        v = math::add(v, math::scale(math::cross(axis, lever), theta_dot[i]));
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSample {
    pub t: f64,
    pub state: JointState,
    pub end_effector: Vec3,
}

/// Samples the plan at `0, dt, 2dt, …` and always at `t_T`.
pub fn sweep_trajectory(arm: &ArmModel, plan: &CubicPlan, dt: f64) -> Result<Vec<SweepSample>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("sweep step {dt} must be positive")));
    }
    check_dim(arm.n_joints(), plan.n_joints())?;
    let t_end = plan.t_launch;
    let mut samples = Vec::with_capacity((t_end / dt) as usize + 2);
    let mut k = 0u64;
    loop {
        let t = k as f64 * dt;
        // Grid points within rounding of t_T collapse onto t_T.
        if t >= t_end - 1e-9 * t_end.max(1.0) {
            break;
        }
        let state = evaluate_plan(plan, t)?;
        let end_effector = forward_kinematics(arm, &state.theta)?.translation;
        samples.push(SweepSample { t, state, end_effector });
        k += 1;
    }
    let state = evaluate_plan(plan, t_end)?;
    let end_effector = forward_kinematics(arm, &state.theta)?.translation;
    samples.push(SweepSample {
        t: t_end,
        state,
        end_effector,
    });
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;

    fn one_joint(axis: Vec3, offset: Vec3, base: Vec3) -> ArmModel {
        ArmModel::new(
            alloc::vec![Link {
                axis,
                offset,
                theta_limits: Limits::new(-3.0, 3.0),
                velocity_limits: Limits::new(-5.0, 5.0),
            }],
            Pose::from_translation(base),
        )
        .unwrap()
    }

    #[test]
    fn zero_plan_has_zero_coefficients() {
        let start = JointState::zeros(7);
        let policy = Policy {
            theta: alloc::vec![0.0; 7],
            theta_dot: alloc::vec![0.0; 7],
            t_launch: 1.0,
        };
        let plan = trajectory_coefficients(&start, &policy).unwrap();
        assert!(plan.coeffs.iter().all(|c| *c == [0.0; 4]));
    }

    #[test]
    fn unit_rise_coefficients() {
        let start = JointState::zeros(1);
        let policy = Policy {
            theta: alloc::vec![1.0],
            theta_dot: alloc::vec![0.0],
            t_launch: 1.0,
        };
        let plan = trajectory_coefficients(&start, &policy).unwrap();
        assert_eq!(plan.coeffs[0], [0.0, 0.0, 3.0, -2.0]);
        let end = evaluate_plan(&plan, 1.0).unwrap();
        assert_eq!(end.theta[0], 1.0);
        assert_eq!(end.theta_dot[0], 0.0);
    }

    #[test]
    fn coefficient_errors() {
        let start = JointState::zeros(2);
        let mut policy = Policy {
            theta: alloc::vec![0.0; 2],
            theta_dot: alloc::vec![0.0; 2],
            t_launch: 0.0,
        };
        assert!(matches!(trajectory_coefficients(&start, &policy), Err(Error::InvalidPolicy(_))));
        policy.t_launch = 1.0;
        policy.theta.push(0.0);
        assert!(matches!(
            trajectory_coefficients(&start, &policy),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn evaluate_rejects_times_outside_plan() {
        let plan = trajectory_coefficients(
            &JointState::zeros(1),
            &Policy {
                theta: alloc::vec![1.0],
                theta_dot: alloc::vec![0.0],
                t_launch: 0.5,
            },
        )
        .unwrap();
        assert!(matches!(evaluate_plan(&plan, -1e-3), Err(Error::OutOfRange { .. })));
        assert!(matches!(evaluate_plan(&plan, 0.5001), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn zero_angles_sum_offsets() {
        let arm = ArmModel::default_arm();
        let p = forward_kinematics(&arm, &[0.0; 7]).unwrap().translation;
        let mut expect = [0.0, 0.0, 0.6];
        for l in arm.links() {
            expect = math::add(expect, l.offset);
        }
        for k in 0..3 {
            assert!((p[k] - expect[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_turn_single_joint() {
        let arm = one_joint([0.0, 0.0, 1.0], [2.0, 0.0, 0.0], [0.1, 0.2, 0.3]);
        let p = forward_kinematics(&arm, &[FRAC_PI_2]).unwrap().translation;
        assert!((p[0] - 0.1).abs() < 1e-12);
        assert!((p[1] - 2.2).abs() < 1e-12);
        assert!((p[2] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn circular_motion_velocity() {
        let arm = one_joint([0.0, 0.0, 1.0], [1.5, 0.0, 0.0], [0.0; 3]);
        let v = end_effector_velocity(&arm, &[0.0], &[2.0]).unwrap();
        assert!(v[0].abs() < 1e-12 && (v[1] - 3.0).abs() < 1e-12 && v[2].abs() < 1e-12);
        let still = end_effector_velocity(&arm, &[0.7], &[0.0]).unwrap();
        assert_eq!(still, [0.0; 3]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let arm = ArmModel::default_arm();
        assert!(matches!(forward_kinematics(&arm, &[0.0; 6]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(
            end_effector_velocity(&arm, &[0.0; 7], &[0.0; 8]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sweep_grids() {
        let arm = ArmModel::default_arm();
        let start = JointState::zeros(7);
        let policy = Policy {
            theta: alloc::vec![0.0; 7],
            theta_dot: alloc::vec![0.0; 7],
            t_launch: 1.0,
        };
        let plan = trajectory_coefficients(&start, &policy).unwrap();
        let times: Vec<f64> = sweep_trajectory(&arm, &plan, 0.25).unwrap().iter().map(|s| s.t).collect();
        assert_eq!(times, [0.0, 0.25, 0.5, 0.75, 1.0]);
        let samples = sweep_trajectory(&arm, &plan, 0.3).unwrap();
        let times: Vec<f64> = samples.iter().map(|s| s.t).collect();
        assert_eq!(times.len(), 5);
        for (t, e) in times.iter().zip([0.0, 0.3, 0.6, 0.9, 1.0]) {
            assert!((t - e).abs() < 1e-12);
        }
        let rest = forward_kinematics(&arm, &start.theta).unwrap().translation;
        assert!(samples.iter().all(|s| s.end_effector == rest));
        assert!(matches!(sweep_trajectory(&arm, &plan, 0.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn arm_validation() {
        let mut links = ArmModel::default_arm().links().to_vec();
        links[2].axis = [0.0, 0.0, 2.0];
        assert!(ArmModel::new(links.clone(), Pose::IDENTITY).is_err());
        links[2].axis = [0.0, 0.0, 1.0];
        links[3].theta_limits = Limits::new(1.0, 1.0);
        assert!(ArmModel::new(links, Pose::IDENTITY).is_err());
    }

    #[test]
    fn clamping_counts_moved_genes() {
        let arm = ArmModel::default_arm();
        let mut genes = alloc::vec![0.0; 15];
        genes[0] = 5.0;
        genes[8] = -9.0;
        genes[14] = 3.0;
        let (p, moved) = clamp_policy(&arm, &Policy::from_slice(&genes).unwrap(), DEFAULT_LAUNCH_WINDOW).unwrap();
        assert_eq!(moved, 3);
        assert_eq!(p.theta[0], 1.0);
        assert_eq!(p.theta_dot[1], -1.5);
        assert_eq!(p.t_launch, 2.0);
    }
}
