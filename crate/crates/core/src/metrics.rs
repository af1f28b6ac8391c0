//! Evaluation quantities: landing RMSE, waypoint-based trajectory
//! diversity, the accuracy/diversity harmonic mean, success proportions and
//! Welch's unequal-variance t-test.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, Vec2, Vec3};
use crate::world::Episode;

pub const DEFAULT_WAYPOINTS: usize = 20;
/// Lower clamp on `1 − RMSE` in the harmonic mean.
pub const ACCURACY_EPS: f64 = 1e-6;

/// Root mean squared landing distance. `None` entries count as
/// `miss_distance`.
pub fn rmse(target: Vec2, landings: &[Option<Vec2>], miss_distance: f64) -> Result<f64> {
    if landings.is_empty() {
        return Err(Error::InsufficientTrials("RMSE needs at least one trial".into()));
    }
    let sum: f64 = landings
        .iter()
        .map(|l| {
            let d = l.map_or(miss_distance, |p| math::dist2(p, target));
            d * d
        })
        .sum();
    Ok(libm::sqrt(sum / landings.len() as f64))
}

/// Landing used for scoring: absent when the throw collided or never landed.
pub fn scored_landing(episode: &Episode) -> Option<Vec2> {
    if episode.flags.any_collision() {
        None
    } else {
        episode.landing_xy()
    }
}

/// `w` points spaced equally by arc length, including both ends.
pub fn resample_by_arc_length(trace: &[Vec3], w: usize) -> Result<Vec<Vec3>> {
    if trace.len() < 2 || w < 2 {
        return Err(Error::InsufficientTrials("resampling needs ≥ 2 points and ≥ 2 waypoints".into()));
    }
    let mut cum = Vec::with_capacity(trace.len());
    cum.push(0.0);
    for seg in trace.windows(2) {
        let last = *cum.last().expect("non-empty");
        cum.push(last + math::norm(math::sub(seg[1], seg[0])));
    }
    let total = *cum.last().expect("non-empty");
    if !(total > 0.0) {
        return Ok(vec![trace[0]; w]);
    }
    let mut out = Vec::with_capacity(w);
    let mut seg = 0;
    for i in 0..w {
        let s = total * i as f64 / (w - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let f = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(math::add(trace[seg], math::scale(math::sub(trace[seg + 1], trace[seg]), f)));
    }
    Ok(out)
}

/// Mean over `w` arc-length waypoints of the positional standard deviation
/// across traces. The positional std at a waypoint is the square root of
/// the summed per-axis population variances.
pub fn trajectory_diversity(traces: &[Vec<Vec3>], w: usize) -> Result<f64> {
    if traces.len() < 2 {
        return Err(Error::InsufficientTrials(alloc::format!(
            "diversity needs at least 2 traces, got {}",
            traces.len()
        )));
    }
    let resampled = traces.iter().map(|t| resample_by_arc_length(t, w)).collect::<Result<Vec<_>>>()?;
    let n = resampled.len() as f64;
    let mut total = 0.0;
    for i in 0..w {
        let mut var = 0.0;
        for k in 0..3 {
            let mean = resampled.iter().map(|r| r[i][k]).sum::<f64>() / n;
            var += resampled.iter().map(|r| (r[i][k] - mean) * (r[i][k] - mean)).sum::<f64>() / n;
        }
        total += libm::sqrt(var);
    }
    Ok(total / w as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicMean {
    pub score: f64,
    /// `1 − RMSE` fell below the clamp.
    pub accuracy_floor: bool,
}

/// `2ad / (a + d)` with `a = clamp(1 − rmse, ε, 1)` and `d` the diversity.
pub fn harmonic_mean_score(rmse_val: f64, diversity_val: f64) -> HarmonicMean {
    let raw = 1.0 - rmse_val;
    let accuracy_floor = !(raw >= ACCURACY_EPS);
    let a = if accuracy_floor { ACCURACY_EPS } else { raw.min(1.0) };
    let d = diversity_val;
    let score = if d > 0.0 { 2.0 * a * d / (a + d) } else { 0.0 };
    HarmonicMean { score, accuracy_floor }
}

/// Per-target count of throws that hit within `tau` with no collision.
pub fn hit_counts(targets: &[Vec2], trials: &[Vec<Episode>], tau: f64) -> Vec<usize> {
    targets
        .iter()
        .zip(trials)
        .map(|(&c, eps)| eps.iter().filter(|e| e.hits(c, tau)).count())
        .collect()
}

/// Fraction of targets hit at least `k` times out of `trials`.
pub fn success_proportion(hit_counts: &[usize], trials: usize, k: usize) -> Result<f64> {
    if k > trials {
        return Err(Error::InvalidArgument(alloc::format!("k = {k} exceeds the {trials} trials per target")));
    }
    if hit_counts.is_empty() {
        return Err(Error::InsufficientTrials("no targets".into()));
    }
    if let Some(&bad) = hit_counts.iter().find(|&&h| h > trials) {
        return Err(Error::InvalidArgument(alloc::format!("hit count {bad} exceeds {trials} trials")));
    }
    Ok(hit_counts.iter().filter(|&&h| h >= k).count() as f64 / hit_counts.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch's t-test with Welch–Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientTrials("Welch test needs at least 2 values per sample".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if !(se2 > 0.0) {
        return Err(Error::DegenerateSample);
    }
    let t = (ma - mb) / libm::sqrt(se2);
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let p = student_t_two_sided(t, df);
    Ok(WelchResult { t, df, p })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// `I_x(a, b)` by Lentz's continued fraction, using the symmetry relation
/// on the side where it converges fast.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log1p(-x);
    if x < (a + 1.0) / (a + b + 2.0) {
        libm::exp(ln_front) * beta_cf(a, b, x) / a
    } else {
        1.0 - libm::exp(ln_front) * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const MAX_ITER: usize = 10_000;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Rectangular grid of evaluation targets at cell centres, indexed
/// `iy * nx + ix`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGrid {
    pub min: Vec2,
    pub max: Vec2,
    pub nx: usize,
    pub ny: usize,
}

impl TargetGrid {
    pub fn new(min: Vec2, max: Vec2, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || !(max[0] > min[0]) || !(max[1] > min[1]) {
            return Err(Error::InvalidArgument("grid needs positive extent and cell counts".into()));
        }
        Ok(TargetGrid { min, max, nx, ny })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_size(&self) -> Vec2 {
        [(self.max[0] - self.min[0]) / self.nx as f64, (self.max[1] - self.min[1]) / self.ny as f64]
    }

    pub fn targets(&self) -> Vec<Vec2> {
        let [cx, cy] = self.cell_size();
        (0..self.ny)
            .flat_map(|iy| (0..self.nx).map(move |ix| [self.min[0] + (ix as f64 + 0.5) * cx, self.min[1] + (iy as f64 + 0.5) * cy]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStats {
    pub rmse: f64,
    /// Ball-trace diversity; `None` with fewer than two traces.
    pub diversity: Option<f64>,
    /// End-effector trace diversity.
    pub arm_diversity: Option<f64>,
    pub harmonic: HarmonicMean,
    pub collisions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEvalResult {
    pub grid: TargetGrid,
    pub targets: Vec<Vec2>,
    pub trials: Vec<Vec<Episode>>,
    pub cells: Vec<CellStats>,
    pub mean_rmse: f64,
    pub mean_diversity: f64,
    pub mean_harmonic: f64,
}

impl GridEvalResult {
    /// Scores per-target trials. Every target must have the same number of
    /// trials. Undefined diversity counts as 0 in the means.
    pub fn from_trials(grid: TargetGrid, trials: Vec<Vec<Episode>>, miss_distance: f64, waypoints: usize) -> Result<Self> {
        let targets = grid.targets();
        crate::error::check_dim(targets.len(), trials.len())?;
        let n = trials.first().map_or(0, Vec::len);
        if n == 0 || trials.iter().any(|t| t.len() != n) {
            return Err(Error::InsufficientTrials("every target needs the same non-zero trial count".into()));
        }
        let mut cells = Vec::with_capacity(targets.len());
        for (&c, eps) in targets.iter().zip(&trials) {
            let landings: Vec<Option<Vec2>> = eps.iter().map(scored_landing).collect();
            let r = rmse(c, &landings, miss_distance)?;
            let ball: Vec<Vec<Vec3>> = eps
                .iter()
                .filter(|e| e.ball_trace.len() >= 2)
                .map(|e| e.ball_trace.iter().map(|b| b.position).collect())
                .collect();
            let arm: Vec<Vec<Vec3>> = eps
                .iter()
                .filter(|e| e.arm_trace.len() >= 2)
                .map(|e| e.arm_trace.iter().map(|s| s.end_effector).collect())
                .collect();
            let diversity = trajectory_diversity(&ball, waypoints).ok();
            let arm_diversity = trajectory_diversity(&arm, waypoints).ok();
            cells.push(CellStats {
                rmse: r,
                diversity,
                arm_diversity,
                harmonic: harmonic_mean_score(r, diversity.unwrap_or(0.0)),
                collisions: eps.iter().filter(|e| e.flags.any_collision()).count(),
            });
        }
        let m = cells.len() as f64;
        let mean_rmse = cells.iter().map(|c| c.rmse).sum::<f64>() / m;
        let mean_diversity = cells.iter().map(|c| c.diversity.unwrap_or(0.0)).sum::<f64>() / m;
        let mean_harmonic = cells.iter().map(|c| c.harmonic.score).sum::<f64>() / m;
        Ok(GridEvalResult {
            grid,
            targets,
            trials,
            cells,
            mean_rmse,
            mean_diversity,
            mean_harmonic,
        })
    }

    pub fn trials_per_target(&self) -> usize {
        self.trials.first().map_or(0, Vec::len)
    }

    pub fn harmonic_scores(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.harmonic.score).collect()
    }

    pub fn hit_counts(&self, tau: f64) -> Vec<usize> {
        hit_counts(&self.targets, &self.trials, tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        let t = [1.0, 1.0];
        assert_eq!(rmse(t, &[Some(t), Some(t)], 5.0).unwrap(), 0.0);
        assert_eq!(rmse(t, &[Some([1.0, 3.5])], 5.0).unwrap(), 2.5);
        let r = rmse(t, &[Some([4.0, 1.0]), Some([1.0, 5.0])], 5.0).unwrap();
        assert!((r - libm::sqrt(12.5)).abs() < 1e-15);
        assert_eq!(rmse(t, &[None], 5.0).unwrap(), 5.0);
        assert!(rmse(t, &[], 5.0).is_err());
    }

    #[test]
    fn diversity_examples() {
        let a: Vec<Vec3> = (0..5).map(|i| [i as f64, 0.0, 1.0]).collect();
        assert_eq!(trajectory_diversity(&[a.clone(), a.clone()], 20).unwrap(), 0.0);
        let b: Vec<Vec3> = a.iter().map(|p| [p[0], 0.6, p[2]]).collect();
        assert!((trajectory_diversity(&[a.clone(), b], 20).unwrap() - 0.3).abs() < 1e-12);
        assert!(trajectory_diversity(&[a], 20).is_err());
    }

    #[test]
    fn resampling_hits_both_ends() {
        let tr = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 2.0, 0.0]];
        let r = resample_by_arc_length(&tr, 4).unwrap();
        assert_eq!(r[0], tr[0]);
        assert_eq!(r[3], tr[2]);
        assert!((r[1][0] - 1.0).abs() < 1e-12 && r[1][1].abs() < 1e-12);
    }

    #[test]
    fn harmonic_examples() {
        assert!((harmonic_mean_score(0.5, 0.5).score - 0.5).abs() < 1e-15);
        assert_eq!(harmonic_mean_score(0.2, 0.0).score, 0.0);
        let h = harmonic_mean_score(1.3, 0.4);
        assert!(h.accuracy_floor);
        assert!((h.score - 2.0 * ACCURACY_EPS * 0.4 / (ACCURACY_EPS + 0.4)).abs() < 1e-18);
    }

    #[test]
    fn success_examples() {
        assert_eq!(success_proportion(&[10; 25], 10, 7).unwrap(), 1.0);
        assert_eq!(success_proportion(&[0; 25], 10, 1).unwrap(), 0.0);
        assert!(success_proportion(&[3], 10, 11).is_err());
    }

    #[test]
    fn welch_examples() {
        let a = [1.0, 2.0, 3.0];
        let r = welch_t_test(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 1.0);
        let b = [1001.0, 1002.0, 1003.0];
        assert!(welch_t_test(&a, &b).unwrap().p < 1e-6);
        assert!(matches!(welch_t_test(&[1.0, 1.0], &[2.0, 2.0]), Err(Error::DegenerateSample)));
    }

    #[test]
    fn t_distribution_reference_values() {
        // df = 1 is Cauchy: P(|T| ≥ 1) = 1/2.
        assert!((student_t_two_sided(1.0, 1.0) - 0.5).abs() < 1e-14);
        // df = 2 has the closed form 1 − |t| / sqrt(2 + t²).
        let t: f64 = 1.7;
        assert!((student_t_two_sided(t, 2.0) - (1.0 - t / libm::sqrt(2.0 + t * t))).abs() < 1e-14);
    }

    #[test]
    fn grid_targets_are_cell_centres() {
        let g = TargetGrid::new([0.0, -1.0], [3.0, 2.0], 3, 3).unwrap();
        let t = g.targets();
        assert_eq!(t.len(), 9);
        assert_eq!(t[0], [0.5, -0.5]);
        assert_eq!(t[5], [2.5, 0.5]);
    }
}
