//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use gpn_core::kinematics::{ArmModel, Limits, Link};
use gpn_core::math::{Pose, Vec2, Vec3};
use nalgebra::{Matrix4, Rotation3, Translation3, Unit, Vector3};
use rand::Rng;

pub fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v: Vec3 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Arm with random axes and offsets and a random base rotation.
pub fn random_arm<R: Rng>(rng: &mut R, joints: usize) -> ArmModel {
    let links = (0..joints)
        .map(|_| Link {
            axis: random_unit(rng),
            offset: [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)],
            theta_limits: Limits::new(-2.0, 2.0),
            velocity_limits: Limits::new(-3.0, 3.0),
        })
        .collect();
    let axis = random_unit(rng);
    let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), rng.random_range(-3.0..3.0));
    let m = r.matrix();
    let base = Pose {
        rotation: [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ],
        translation: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)],
    };
    ArmModel::new(links, base).unwrap()
}

/// Product of 4×4 homogeneous transforms `B · Π Rot(axis_i, θ_i) · Trans(offset_i)`.
pub fn fk_homogeneous(arm: &ArmModel, theta: &[f64]) -> Matrix4<f64> {
    let b = arm.base_pose();
    let mut t = Matrix4::identity();
    for i in 0..3 {
        for j in 0..3 {
            t[(i, j)] = b.rotation[i][j];
        }
        t[(i, 3)] = b.translation[i];
    }
    for (link, &q) in arm.links().iter().zip(theta) {
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(link.axis)), q).to_homogeneous();
        let tr = Translation3::from(Vector3::from(link.offset)).to_homogeneous();
        t = t * rot * tr;
    }
    t
}

/// Drag-free flight integrated with classical RK4 until the ball crosses
/// z = 0; the crossing step is refined by bisection on the step length.
pub fn rk4_landing(pos: Vec3, vel: Vec3, g: f64) -> (Vec2, f64) {
    type State = [f64; 6];
    let f = |s: &State| -> State { [s[3], s[4], s[5], 0.0, 0.0, -g] };
    let step = |s: &State, h: f64| -> State {
        let add = |a: &State, b: &State, k: f64| -> State {
            let mut o = *a;
            for i in 0..6 {
                o[i] += k * b[i];
            }
            o
        };
        let k1 = f(s);
        let k2 = f(&add(s, &k1, h / 2.0));
        let k3 = f(&add(s, &k2, h / 2.0));
        let k4 = f(&add(s, &k3, h));
        let mut o = *s;
        for i in 0..6 {
            o[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        o
    };
    let mut s: State = [pos[0], pos[1], pos[2], vel[0], vel[1], vel[2]];
    let mut t = 0.0;
    let h = 1e-3;
    loop {
        let next = step(&s, h);
        if next[2] <= 0.0 {
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if step(&s, mid)[2] > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let end = step(&s, 0.5 * (lo + hi));
            return ([end[0], end[1]], t + 0.5 * (lo + hi));
        }
        s = next;
        t += h;
    }
}

/// Whether any of `n` evenly spaced points on the segment lies in the box.
pub fn segment_box_sampled(a: Vec3, b: Vec3, min: Vec3, max: Vec3, n: usize) -> bool {
    (0..=n).any(|i| {
        let f = i as f64 / n as f64;
        (0..3).all(|k| {
            let p = a[k] + f * (b[k] - a[k]);
            p >= min[k] && p <= max[k]
        })
    })
}

/// Densely resample by parameter, then read waypoints off the dense
/// polyline by nearest arc length.
pub fn fine_diversity(traces: &[Vec<Vec3>], w: usize, dense: usize) -> f64 {
    let resampled: Vec<Vec<Vec3>> = traces
        .iter()
        .map(|tr| {
            let segs = tr.len() - 1;
            let pts: Vec<Vec3> = (0..dense)
                .map(|i| {
                    let u = i as f64 / (dense - 1) as f64 * segs as f64;
                    let s = (u.floor() as usize).min(segs - 1);
                    let f = u - s as f64;
                    let (a, b) = (tr[s], tr[s + 1]);
                    [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2])]
                })
                .collect();
            let mut cum = vec![0.0];
            for p in pts.windows(2) {
                let d = ((p[1][0] - p[0][0]).powi(2) + (p[1][1] - p[0][1]).powi(2) + (p[1][2] - p[0][2]).powi(2)).sqrt();
                cum.push(cum.last().unwrap() + d);
            }
            let total = *cum.last().unwrap();
            (0..w)
                .map(|j| {
                    let target = total * j as f64 / (w - 1) as f64;
                    let idx = cum.partition_point(|&c| c < target).min(dense - 1);
                    let best = if idx > 0 && (target - cum[idx - 1]).abs() < (cum[idx] - target).abs() { idx - 1 } else { idx };
                    pts[best]
                })
                .collect()
        })
        .collect();
    let n = traces.len() as f64;
    let mut total = 0.0;
    for j in 0..w {
        let mut var = 0.0;
        for k in 0..3 {
            let m = resampled.iter().map(|r| r[j][k]).sum::<f64>() / n;
            var += resampled.iter().map(|r| (r[j][k] - m).powi(2)).sum::<f64>() / n;
        }
        total += var.sqrt();
    }
    total / w as f64
}

/// Two-sided Student-t tail probability by quadrature. With
/// `s = √ν tan φ` the density becomes proportional to `cos^(ν−1) φ` on
/// `[0, π/2)`, so no special functions are involved.
pub fn t_two_sided_quadrature(t: f64, df: f64) -> f64 {
    let g = |phi: f64| phi.cos().powf(df - 1.0);
    let simpson = |a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        let mut s = g(a) + g(b);
        for i in 1..n {
            s += g(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    let phi_t = (t.abs() / df.sqrt()).atan();
    let n = 20_000;
    simpson(phi_t, half_pi, n) / simpson(0.0, half_pi, n)
}

/// Welch statistic and degrees of freedom, written out directly.
pub fn welch_reference(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0), n)
    };
    let (ma, va, na) = stats(a);
    let (mb, vb, nb) = stats(b);
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    (t, df, t_two_sided_quadrature(t, df))
}

pub fn linear_nearest(points: &[Vec2], q: Vec2) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Relative error with an absolute floor for tiny magnitudes.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
