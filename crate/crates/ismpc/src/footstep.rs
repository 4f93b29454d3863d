//! Candidate footstep generation: timing from the velocity rule, orientations
//! and positions from two cascaded QPs over the preview horizon.

use crate::qp::{self, QpProblem, QpStatus, SolveOptions};
use nalgebra::{DMatrix, DVector, Vector2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FootstepError {
    #[error("invalid parameter {name}: {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("cruise parameters inconsistent: ls_bar/ts_bar = {expected}, v_bar = {got}")]
    InconsistentCruise { expected: f64, got: f64 },
    #[error("footstep placement QP infeasible at step {step}")]
    PlacementInfeasible { step: usize },
    #[error("QP solver failed: {0}")]
    Solver(#[from] qp::QpError),
    #[error("QP did not converge: {0:?}")]
    SolverStatus(QpStatus),
    #[error("footstep sides do not alternate at index {0}")]
    NonAlternatingSides(usize),
    #[error("footstep timing invalid at index {index}: {reason}")]
    BadTiming { index: usize, reason: &'static str },
    #[error("velocity profile is empty")]
    EmptyProfile,
}

/// Which foot a step lands on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// Sign of the coronal offset for a step landing on this side.
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }
}

/// High-level command: driving and steering velocities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceVelocity {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl ReferenceVelocity {
    pub const ZERO: ReferenceVelocity = ReferenceVelocity { vx: 0.0, vy: 0.0, omega: 0.0 };

    pub fn magnitude(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vy.is_finite() && self.omega.is_finite()
    }
}

/// Piecewise-constant reference velocity schedule. Each entry holds from its
/// start time until the next entry; the first entry also covers earlier times.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityProfile {
    pieces: Vec<(f64, ReferenceVelocity)>,
}

impl VelocityProfile {
    pub fn new(mut pieces: Vec<(f64, ReferenceVelocity)>) -> Result<Self, FootstepError> {
        if pieces.is_empty() {
            return Err(FootstepError::EmptyProfile);
        }
        for (i, &(t, v)) in pieces.iter().enumerate() {
            if !t.is_finite() || !v.is_finite() {
                return Err(FootstepError::InvalidParam { name: "profile piece", value: t });
            }
            if i > 0 && t <= pieces[i - 1].0 {
                return Err(FootstepError::BadTiming { index: i, reason: "profile times must increase" });
            }
        }
        pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(VelocityProfile { pieces })
    }

    pub fn constant(v: ReferenceVelocity) -> Self {
        VelocityProfile { pieces: vec![(0.0, v)] }
    }

    pub fn sample(&self, t: f64) -> ReferenceVelocity {
        let mut current = self.pieces[0].1;
        for &(start, v) in &self.pieces {
            if start <= t {
                current = v;
            } else {
                break;
            }
        }
        current
    }

    /// Piece boundaries strictly inside (t0, t1), in order.
    fn breaks_within(&self, t0: f64, t1: f64) -> Vec<f64> {
        self.pieces
            .iter()
            .map(|&(t, _)| t)
            .filter(|&t| t > t0 && t < t1)
            .collect()
    }

    pub fn pieces(&self) -> &[(f64, ReferenceVelocity)] {
        &self.pieces
    }
}

/// Cruise parameters for the step timing rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CruiseParams {
    pub v_bar: f64,
    pub ts_bar: f64,
    pub ls_bar: f64,
    pub alpha: f64,
}

impl CruiseParams {
    pub fn new(v_bar: f64, ts_bar: f64, ls_bar: f64, alpha: f64) -> Result<Self, FootstepError> {
        for (name, value) in [("v_bar", v_bar), ("ts_bar", ts_bar), ("ls_bar", ls_bar), ("alpha", alpha)] {
            if !value.is_finite() || value <= 0.0 {
                return Err(FootstepError::InvalidParam { name, value });
            }
        }
        let implied = ls_bar / ts_bar;
        if (implied - v_bar).abs() > 1e-9 {
            return Err(FootstepError::InconsistentCruise { expected: implied, got: v_bar });
        }
        Ok(CruiseParams { v_bar, ts_bar, ls_bar, alpha })
    }
}

/// Kinematic limits for footstep placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicLimits {
    pub theta_max: f64,
    pub ell: f64,
    pub da_x: f64,
    pub da_y: f64,
}

impl KinematicLimits {
    pub fn new(theta_max: f64, ell: f64, da_x: f64, da_y: f64) -> Result<Self, FootstepError> {
        for (name, value) in [("theta_max", theta_max), ("ell", ell), ("da_x", da_x), ("da_y", da_y)] {
            if !value.is_finite() || value <= 0.0 {
                return Err(FootstepError::InvalidParam { name, value });
            }
        }
        Ok(KinematicLimits { theta_max, ell, da_x, da_y })
    }
}

/// Planar pose of the template robot or of a footstep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

/// Step duration from the cruise timing rule.
pub fn step_duration(v: f64, cruise: &CruiseParams) -> f64 {
    cruise.ts_bar * (cruise.alpha + cruise.v_bar) / (cruise.alpha + v.abs())
}

/// Iterate the timing rule from `last_step_time`, keeping every generated
/// timestamp that does not overrun `preview_end` (a 1e-9 slack absorbs float
/// accumulation when the last step lands exactly on the boundary).
pub fn generate_timing(
    profile: &VelocityProfile,
    last_step_time: f64,
    preview_end: f64,
    cruise: &CruiseParams,
) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = last_step_time;
    loop {
        let v = profile.sample(t).magnitude();
        let next = t + step_duration(v, cruise);
        if next > preview_end + 1e-9 {
            break;
        }
        out.push(next);
        t = next;
    }
    out
}

/// Advance the template pose over one piece of constant velocity.
fn advance_constant(pose: Pose, v: ReferenceVelocity, dt: f64) -> Pose {
    let (s0, c0) = pose.theta.sin_cos();
    if v.omega.abs() < 1e-12 {
        Pose {
            x: pose.x + (v.vx * c0 - v.vy * s0) * dt,
            y: pose.y + (v.vx * s0 + v.vy * c0) * dt,
            theta: pose.theta,
        }
    } else {
        let theta1 = pose.theta + v.omega * dt;
        let (s1, c1) = theta1.sin_cos();
        Pose {
            x: pose.x + (v.vx * (s1 - s0) + v.vy * (c1 - c0)) / v.omega,
            y: pose.y + (-v.vx * (c1 - c0) + v.vy * (s1 - s0)) / v.omega,
            theta: theta1,
        }
    }
}

/// Integrate the omnidirectional template model from t0 to t1. Exact for the
/// piecewise-constant profile: straight segments when omega = 0, circular
/// arcs otherwise.
pub fn integrate_template(profile: &VelocityProfile, initial: Pose, t0: f64, t1: f64) -> Pose {
    let mut pose = initial;
    let mut t = t0;
    for b in profile.breaks_within(t0, t1) {
        pose = advance_constant(pose, profile.sample(t), b - t);
        t = b;
    }
    advance_constant(pose, profile.sample(t), t1 - t)
}

fn solve_or_status(problem: &QpProblem) -> Result<qp::QpSolution, FootstepError> {
    let sol = qp::solve(problem, &SolveOptions::default())?;
    match sol.status {
        QpStatus::Optimal => Ok(sol),
        QpStatus::Infeasible => Err(FootstepError::SolverStatus(QpStatus::Infeasible)),
        QpStatus::MaxIterations => Err(FootstepError::SolverStatus(QpStatus::MaxIterations)),
    }
}

/// Footstep orientations tracking the integrated steering angle, with the
/// per-step rotation bounded by theta_max.
pub fn solve_orientation_qp(
    omega_integrals: &[f64],
    theta0: f64,
    limits: &KinematicLimits,
) -> Result<Vec<f64>, FootstepError> {
    let f = omega_integrals.len();
    if f == 0 {
        return Ok(Vec::new());
    }
    let mut d = DMatrix::zeros(f, f);
    let mut b = DVector::zeros(f);
    for j in 0..f {
        d[(j, j)] = 1.0;
        if j > 0 {
            d[(j, j - 1)] = -1.0;
        }
        b[j] = omega_integrals[j] + if j == 0 { theta0 } else { 0.0 };
    }
    let hessian = 2.0 * d.transpose() * &d;
    let linear_cost = -2.0 * d.transpose() * &b;
    let mut lo = DVector::zeros(f);
    let mut hi = DVector::zeros(f);
    for j in 0..f {
        let shift = if j == 0 { theta0 } else { 0.0 };
        lo[j] = shift - limits.theta_max;
        hi[j] = shift + limits.theta_max;
    }
    let problem = QpProblem {
        hessian,
        linear_cost,
        eq_matrix: DMatrix::zeros(0, f),
        eq_rhs: DVector::zeros(0),
        ineq_matrix: d,
        ineq_lower: lo,
        ineq_upper: hi,
    };
    let sol = solve_or_status(&problem)?;
    Ok(sol.primal.iter().copied().collect())
}

/// Footstep positions tracking per-step displacement targets, subject to the
/// kinematically admissible boxes around each support foot.
///
/// `orientations[j]` is the orientation of footstep j, with index 0 the
/// current support foot; it must have one more entry than `deltas`.
pub fn solve_placement_qp(
    deltas: &[Vector2<f64>],
    start_foot: Vector2<f64>,
    start_side: Side,
    orientations: &[f64],
    limits: &KinematicLimits,
) -> Result<Vec<Vector2<f64>>, FootstepError> {
    let f = deltas.len();
    if orientations.len() != f + 1 {
        return Err(FootstepError::InvalidParam { name: "orientations length", value: orientations.len() as f64 });
    }
    if f == 0 {
        return Ok(Vec::new());
    }
    let n = 2 * f;
    let x_of = |j: usize| j;
    let y_of = |j: usize| f + j;

    let mut quad = DMatrix::zeros(n, n);
    let mut lin = DVector::zeros(n);
    let mut ineq = DMatrix::zeros(2 * f, n);
    let mut lo = DVector::zeros(2 * f);
    let mut hi = DVector::zeros(2 * f);

    let mut side = start_side;
    for j in 0..f {
        side = side.other();
        // Cost term |p_j - p_{j-1} - delta_j|^2 in difference form.
        let (tx, ty) = if j == 0 {
            (start_foot.x + deltas[j].x, start_foot.y + deltas[j].y)
        } else {
            (deltas[j].x, deltas[j].y)
        };
        for (idx_j, idx_prev, target) in [
            (x_of(j), j.checked_sub(1).map(x_of), tx),
            (y_of(j), j.checked_sub(1).map(y_of), ty),
        ] {
            quad[(idx_j, idx_j)] += 1.0;
            if let Some(p) = idx_prev {
                quad[(p, p)] += 1.0;
                quad[(idx_j, p)] -= 1.0;
                quad[(p, idx_j)] -= 1.0;
                lin[p] += target;
            }
            lin[idx_j] -= target;
        }
        // Admissible box in the frame of the previous footstep.
        let (s, c) = orientations[j].sin_cos();
        let rows = [(c, s), (-s, c)];
        let centers = [0.0, side.sign() * limits.ell];
        let halves = [limits.da_x / 2.0, limits.da_y / 2.0];
        for k in 0..2 {
            let r = 2 * j + k;
            ineq[(r, x_of(j))] = rows[k].0;
            ineq[(r, y_of(j))] = rows[k].1;
            let mut offset = 0.0;
            if j > 0 {
                ineq[(r, x_of(j - 1))] = -rows[k].0;
                ineq[(r, y_of(j - 1))] = -rows[k].1;
            } else {
                offset = rows[k].0 * start_foot.x + rows[k].1 * start_foot.y;
            }
            lo[r] = centers[k] - halves[k] + offset;
            hi[r] = centers[k] + halves[k] + offset;
        }
    }

    let problem = QpProblem {
        hessian: 2.0 * quad,
        linear_cost: 2.0 * lin,
        eq_matrix: DMatrix::zeros(0, n),
        eq_rhs: DVector::zeros(0),
        ineq_matrix: ineq,
        ineq_lower: lo,
        ineq_upper: hi,
    };
    let sol = match solve_or_status(&problem) {
        Ok(s) => s,
        Err(FootstepError::SolverStatus(QpStatus::Infeasible)) => {
            return Err(FootstepError::PlacementInfeasible { step: 0 });
        }
        Err(e) => return Err(e),
    };
    Ok((0..f).map(|j| Vector2::new(sol.primal[x_of(j)], sol.primal[y_of(j)])).collect())
}

/// A candidate footstep sequence. Index 0 is the current support foot; later
/// entries are candidates. `timestamps[j]` is when footstep j becomes the
/// support foot and `durations[j]` spans footstep j to j+1.
#[derive(Debug, Clone, PartialEq)]
pub struct FootstepPlan {
    pub poses: Vec<Pose>,
    pub sides: Vec<Side>,
    pub timestamps: Vec<f64>,
    pub durations: Vec<f64>,
    pub ss_fraction: f64,
}

impl FootstepPlan {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Index of the step interval containing time t, saturating at the ends.
    pub fn interval_at(&self, t: f64) -> usize {
        if self.timestamps.is_empty() {
            return 0;
        }
        let mut j = 0;
        while j + 1 < self.timestamps.len() && t >= self.timestamps[j + 1] {
            j += 1;
        }
        j
    }

    /// Double-support duration of step interval j.
    pub fn ds_duration(&self, j: usize) -> f64 {
        self.durations[j] * (1.0 - self.ss_fraction)
    }

    pub fn validate(&self, cruise: &CruiseParams, v_max: f64) -> Result<(), FootstepError> {
        if self.poses.len() != self.sides.len() || self.poses.len() != self.timestamps.len() {
            return Err(FootstepError::BadTiming { index: 0, reason: "field lengths disagree" });
        }
        if self.durations.len() + 1 != self.timestamps.len() {
            return Err(FootstepError::BadTiming { index: 0, reason: "durations/timestamps mismatch" });
        }
        if !(0.0 < self.ss_fraction && self.ss_fraction <= 1.0) {
            return Err(FootstepError::InvalidParam { name: "ss_fraction", value: self.ss_fraction });
        }
        for i in 1..self.sides.len() {
            if self.sides[i] == self.sides[i - 1] {
                return Err(FootstepError::NonAlternatingSides(i));
            }
        }
        let min_duration = step_duration(v_max, cruise);
        for j in 0..self.durations.len() {
            let gap = self.timestamps[j + 1] - self.timestamps[j];
            if (gap - self.durations[j]).abs() > 1e-9 {
                return Err(FootstepError::BadTiming { index: j, reason: "duration disagrees with timestamps" });
            }
            if self.durations[j] < min_duration - 1e-9 {
                return Err(FootstepError::BadTiming { index: j, reason: "duration below timing-rule minimum" });
            }
        }
        Ok(())
    }
}

/// Generate a full candidate plan: timing from the cruise rule, orientations
/// and positions from the two QPs, displacement targets from the template
/// model plus the alternating coronal offset.
#[allow(clippy::too_many_arguments)]
pub fn generate_plan(
    profile: &VelocityProfile,
    template_start: Pose,
    start_foot: Pose,
    start_side: Side,
    last_step_time: f64,
    preview_end: f64,
    cruise: &CruiseParams,
    limits: &KinematicLimits,
    ss_fraction: f64,
) -> Result<FootstepPlan, FootstepError> {
    let times = generate_timing(profile, last_step_time, preview_end, cruise);
    let mut timestamps = vec![last_step_time];
    timestamps.extend(&times);
    let f = times.len();

    let mut omega_integrals = Vec::with_capacity(f);
    let mut template_deltas = Vec::with_capacity(f);
    let mut template_pose = integrate_template(profile, template_start, last_step_time, timestamps[0]);
    for j in 0..f {
        let next = integrate_template(profile, template_pose, timestamps[j], timestamps[j + 1]);
        omega_integrals.push(next.theta - template_pose.theta);
        template_deltas.push(Vector2::new(next.x - template_pose.x, next.y - template_pose.y));
        template_pose = next;
    }

    let orientations = solve_orientation_qp(&omega_integrals, start_foot.theta, limits)?;
    let mut all_orients = vec![start_foot.theta];
    all_orients.extend(&orientations);

    let mut side = start_side;
    let mut deltas = Vec::with_capacity(f);
    for j in 0..f {
        side = side.other();
        let (s0, c0) = all_orients[j].sin_cos();
        let (s1, c1) = all_orients[j + 1].sin_cos();
        let half = limits.ell / 2.0;
        let offset = Vector2::new(-(s1 + s0) * half, (c1 + c0) * half) * side.sign();
        deltas.push(template_deltas[j] + offset);
    }
    let positions = solve_placement_qp(&deltas, start_foot.position(), start_side, &all_orients, limits)?;

    let mut poses = vec![start_foot];
    let mut sides = vec![start_side];
    for j in 0..f {
        poses.push(Pose { x: positions[j].x, y: positions[j].y, theta: all_orients[j + 1] });
        sides.push(sides[j].other());
    }
    let durations = (0..f).map(|j| timestamps[j + 1] - timestamps[j]).collect();
    Ok(FootstepPlan { poses, sides, timestamps, durations, ss_fraction })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cruise() -> CruiseParams {
        CruiseParams::new(0.15, 0.8, 0.12, 0.1).unwrap()
    }

    fn limits() -> KinematicLimits {
        KinematicLimits::new(std::f64::consts::FRAC_PI_8, 0.18, 0.3, 0.07).unwrap()
    }

    #[test]
    fn step_duration_reference_points() {
        let c = cruise();
        assert_eq!(step_duration(0.15, &c), 0.8);
        assert_eq!(step_duration(0.30, &c), 0.5);
        assert_eq!(step_duration(0.0, &c), 2.0);
    }

    #[test]
    fn cruise_params_validated() {
        assert!(CruiseParams::new(0.15, 0.8, 0.12, 0.1).is_ok());
        assert!(matches!(
            CruiseParams::new(0.2, 0.8, 0.12, 0.1),
            Err(FootstepError::InconsistentCruise { .. })
        ));
        assert!(CruiseParams::new(0.15, 0.8, 0.12, -0.1).is_err());
    }

    #[test]
    fn timing_constant_velocity() {
        let profile = VelocityProfile::constant(ReferenceVelocity { vx: 0.15, vy: 0.0, omega: 0.0 });
        let ts = generate_timing(&profile, 0.0, 3.2, &cruise());
        assert_eq!(ts.len(), 4);
        for (i, t) in ts.iter().enumerate() {
            assert!((t - 0.8 * (i + 1) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn timing_standing() {
        let profile = VelocityProfile::constant(ReferenceVelocity::ZERO);
        let ts = generate_timing(&profile, 0.0, 3.2, &cruise());
        assert_eq!(ts, vec![2.0]);
    }

    #[test]
    fn timing_speed_jump_shrinks_steps() {
        let profile = VelocityProfile::new(vec![
            (0.0, ReferenceVelocity { vx: 0.1, vy: 0.0, omega: 0.0 }),
            (1.5, ReferenceVelocity { vx: 0.3, vy: 0.0, omega: 0.0 }),
        ])
        .unwrap();
        let c = cruise();
        let ts = generate_timing(&profile, 0.0, 6.0, &c);
        let mut prev = 0.0;
        for &t in &ts {
            let expected = step_duration(profile.sample(prev).magnitude(), &c);
            assert!((t - prev - expected).abs() < 1e-12);
            prev = t;
        }
        assert!(ts.windows(2).any(|w| w[1] - w[0] < 0.9));
    }

    #[test]
    fn template_straight_line() {
        let profile = VelocityProfile::constant(ReferenceVelocity { vx: 0.2, vy: 0.0, omega: 0.0 });
        let p = integrate_template(&profile, Pose { x: 0.0, y: 0.0, theta: 0.0 }, 0.0, 1.0);
        assert!((p.x - 0.2).abs() < 1e-15);
        assert!(p.y.abs() < 1e-15);
        assert_eq!(p.theta, 0.0);
    }

    #[test]
    fn template_pure_rotation() {
        let profile = VelocityProfile::constant(ReferenceVelocity { vx: 0.0, vy: 0.0, omega: 0.5 });
        let p = integrate_template(&profile, Pose { x: 0.3, y: -0.1, theta: 0.2 }, 0.0, 1.0);
        assert!((p.x - 0.3).abs() < 1e-15);
        assert!((p.y + 0.1).abs() < 1e-15);
        assert!((p.theta - 0.7).abs() < 1e-15);
    }

    #[test]
    fn template_quarter_arc() {
        let profile = VelocityProfile::constant(ReferenceVelocity { vx: 0.2, vy: 0.0, omega: 0.2 });
        let t1 = std::f64::consts::FRAC_PI_2 / 0.2;
        let p = integrate_template(&profile, Pose { x: 0.0, y: 0.0, theta: 0.0 }, 0.0, t1);
        assert!((p.x - 1.0).abs() < 1e-12);
        assert!((p.y - 1.0).abs() < 1e-12);
        assert!((p.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    fn rk4_template(profile: &VelocityProfile, initial: Pose, t0: f64, t1: f64, steps_per_piece: usize) -> Pose {
        // Integrate each smooth piece separately; RK4 order collapses across
        // the jumps otherwise.
        let mut bounds = vec![t0];
        bounds.extend(profile.pieces().iter().map(|&(t, _)| t).filter(|&t| t > t0 && t < t1));
        bounds.push(t1);
        let mut s = [initial.x, initial.y, initial.theta];
        for w in bounds.windows(2) {
            let v = profile.sample(w[0]);
            let f = |p: [f64; 3]| {
                [
                    v.vx * p[2].cos() - v.vy * p[2].sin(),
                    v.vx * p[2].sin() + v.vy * p[2].cos(),
                    v.omega,
                ]
            };
            let h = (w[1] - w[0]) / steps_per_piece as f64;
            for _ in 0..steps_per_piece {
                let k1 = f(s);
                let mid1 = [s[0] + 0.5 * h * k1[0], s[1] + 0.5 * h * k1[1], s[2] + 0.5 * h * k1[2]];
                let k2 = f(mid1);
                let mid2 = [s[0] + 0.5 * h * k2[0], s[1] + 0.5 * h * k2[1], s[2] + 0.5 * h * k2[2]];
                let k3 = f(mid2);
                let end = [s[0] + h * k3[0], s[1] + h * k3[1], s[2] + h * k3[2]];
                let k4 = f(end);
                for i in 0..3 {
                    s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        Pose { x: s[0], y: s[1], theta: s[2] }
    }

    #[test]
    fn template_matches_rk4_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let mut pieces = vec![(0.0, random_vel(&mut rng))];
            let mut t = 0.0;
            for _ in 0..3 {
                t += rng.gen_range(0.3..1.0);
                pieces.push((t, random_vel(&mut rng)));
            }
            let profile = VelocityProfile::new(pieces).unwrap();
            let initial = Pose {
                x: rng.gen_range(-1.0..1.0),
                y: rng.gen_range(-1.0..1.0),
                theta: rng.gen_range(-1.0..1.0),
            };
            let t1 = rng.gen_range(2.0..5.0);
            let exact = integrate_template(&profile, initial, 0.0, t1);
            let oracle = rk4_template(&profile, initial, 0.0, t1, 4000);
            assert!((exact.x - oracle.x).abs() < 1e-9);
            assert!((exact.y - oracle.y).abs() < 1e-9);
            assert!((exact.theta - oracle.theta).abs() < 1e-12);
        }
    }

    fn random_vel(rng: &mut ChaCha8Rng) -> ReferenceVelocity {
        ReferenceVelocity {
            vx: rng.gen_range(-0.4..0.4),
            vy: rng.gen_range(-0.2..0.2),
            omega: rng.gen_range(-0.6..0.6),
        }
    }

    #[test]
    fn orientation_zero_integrals() {
        let out = solve_orientation_qp(&[0.0, 0.0, 0.0], 0.4, &limits()).unwrap();
        for th in out {
            assert!((th - 0.4).abs() < 1e-9);
        }
    }

    #[test]
    fn orientation_within_bound_unclamped() {
        let out = solve_orientation_qp(&[0.2, 0.2, 0.2], 0.0, &limits()).unwrap();
        for (j, th) in out.iter().enumerate() {
            assert!((th - 0.2 * (j + 1) as f64).abs() < 1e-8);
        }
    }

    #[test]
    fn orientation_clamped_at_theta_max() {
        let l = limits();
        let out = solve_orientation_qp(&[0.6, 0.6, 0.6], 0.0, &l).unwrap();
        for (j, th) in out.iter().enumerate() {
            assert!((th - l.theta_max * (j + 1) as f64).abs() < 1e-8);
        }
    }

    #[test]
    fn orientation_matches_grid_search() {
        let l = limits();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..20 {
            let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.7..0.7)).collect();
            let theta0 = rng.gen_range(-0.5..0.5);
            let qp_out = solve_orientation_qp(&w, theta0, &l).unwrap();
            // The cost separates over increments, so scan each 1-D problem.
            let mut th = theta0;
            for j in 0..3 {
                let mut best = (f64::INFINITY, 0.0);
                let mut d = -l.theta_max;
                while d <= l.theta_max + 1e-12 {
                    let cost = (d - w[j]) * (d - w[j]);
                    if cost < best.0 {
                        best = (cost, d);
                    }
                    d += 1e-3;
                }
                th += best.1;
                assert!((qp_out[j] - th).abs() < 2e-3);
            }
        }
    }

    #[test]
    fn placement_feasible_targets_reproduced() {
        let l = limits();
        let deltas = vec![Vector2::new(0.1, 0.18), Vector2::new(0.1, -0.18), Vector2::new(0.1, 0.18)];
        let out = solve_placement_qp(&deltas, Vector2::new(0.0, -0.09), Side::Right, &[0.0; 4], &l).unwrap();
        let mut expect = Vector2::new(0.0, -0.09);
        for (j, p) in out.iter().enumerate() {
            expect += deltas[j];
            assert!((p - expect).norm() < 1e-8);
        }
    }

    #[test]
    fn placement_clamps_to_box() {
        let l = limits();
        let deltas = vec![Vector2::new(0.5, 0.18), Vector2::new(0.5, -0.18)];
        let out = solve_placement_qp(&deltas, Vector2::new(0.0, -0.09), Side::Right, &[0.0; 3], &l).unwrap();
        assert!((out[0].x - 0.15).abs() < 1e-8);
        assert!((out[1].x - 0.30).abs() < 1e-8);
    }

    #[test]
    fn placement_matches_grid_search() {
        let l = limits();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..10 {
            let orientations: Vec<f64> = {
                let mut th = vec![rng.gen_range(-0.3..0.3)];
                for _ in 0..3 {
                    let prev = *th.last().unwrap();
                    th.push(prev + rng.gen_range(-0.3..0.3));
                }
                th
            };
            let deltas: Vec<Vector2<f64>> = (0..3)
                .map(|_| Vector2::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.3..0.3)))
                .collect();
            let start = Vector2::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
            let qp_out = solve_placement_qp(&deltas, start, Side::Right, &orientations, &l).unwrap();
            // Increments decouple per step: grid-project each target onto its
            // box in the support-foot frame.
            let mut side = Side::Right;
            let mut prev = start;
            for j in 0..3 {
                side = side.other();
                let (s, c) = orientations[j].sin_cos();
                let local = Vector2::new(c * deltas[j].x + s * deltas[j].y, -s * deltas[j].x + c * deltas[j].y);
                let mut best = (f64::INFINITY, Vector2::zeros());
                let mut u = -l.da_x / 2.0;
                while u <= l.da_x / 2.0 + 1e-12 {
                    let mut v = side.sign() * l.ell - l.da_y / 2.0;
                    while v <= side.sign() * l.ell + l.da_y / 2.0 + 1e-12 {
                        let cost = (u - local.x) * (u - local.x) + (v - local.y) * (v - local.y);
                        if cost < best.0 {
                            best = (cost, Vector2::new(u, v));
                        }
                        v += 1e-3;
                    }
                    u += 1e-3;
                }
                let world = Vector2::new(c * best.1.x - s * best.1.y, s * best.1.x + c * best.1.y);
                let expect = prev + world;
                assert!((qp_out[j] - expect).norm() < 2e-3);
                prev = qp_out[j];
            }
        }
    }

    #[test]
    fn straight_walk_alternates_about_path() {
        let profile = VelocityProfile::constant(ReferenceVelocity { vx: 0.15, vy: 0.0, omega: 0.0 });
        let plan = generate_plan(
            &profile,
            Pose { x: 0.0, y: 0.0, theta: 0.0 },
            Pose { x: 0.0, y: -0.09, theta: 0.0 },
            Side::Right,
            0.0,
            4.0,
            &cruise(),
            &limits(),
            0.6,
        )
        .unwrap();
        assert!(plan.len() > 3);
        for (j, pose) in plan.poses.iter().enumerate() {
            let expect = plan.sides[j].sign() * 0.09;
            assert!((pose.y - expect).abs() < 1e-7, "step {j}: y = {}", pose.y);
        }
        plan.validate(&cruise(), 1.0).unwrap();
    }

    #[test]
    fn plan_respects_kinematic_boxes() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let l = limits();
        for _ in 0..10 {
            let profile = VelocityProfile::constant(ReferenceVelocity {
                vx: rng.gen_range(0.0..0.3),
                vy: rng.gen_range(-0.1..0.1),
                omega: rng.gen_range(-0.4..0.4),
            });
            let plan = generate_plan(
                &profile,
                Pose { x: 0.0, y: 0.0, theta: 0.0 },
                Pose { x: 0.0, y: -0.09, theta: 0.0 },
                Side::Right,
                0.0,
                3.0,
                &cruise(),
                &l,
                0.6,
            )
            .unwrap();
            for j in 1..plan.len() {
                let (s, c) = plan.poses[j - 1].theta.sin_cos();
                let dx = plan.poses[j].x - plan.poses[j - 1].x;
                let dy = plan.poses[j].y - plan.poses[j - 1].y;
                let local = (c * dx + s * dy, -s * dx + c * dy);
                let cy = plan.sides[j].sign() * l.ell;
                assert!(local.0.abs() <= l.da_x / 2.0 + 1e-8);
                assert!((local.1 - cy).abs() <= l.da_y / 2.0 + 1e-8);
                let dth = plan.poses[j].theta - plan.poses[j - 1].theta;
                assert!(dth.abs() <= l.theta_max + 1e-9);
            }
        }
    }

    #[test]
    fn constant_velocity_gives_equal_durations() {
        let profile = VelocityProfile::constant(ReferenceVelocity { vx: 0.2, vy: 0.05, omega: 0.1 });
        let plan = generate_plan(
            &profile,
            Pose { x: 0.0, y: 0.0, theta: 0.0 },
            Pose { x: 0.0, y: -0.09, theta: 0.0 },
            Side::Right,
            0.0,
            5.0,
            &cruise(),
            &limits(),
            0.6,
        )
        .unwrap();
        for w in plan.durations.windows(2) {
            assert!((w[0] - w[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn plan_validation_catches_errors() {
        let mut plan = FootstepPlan {
            poses: vec![Pose { x: 0.0, y: 0.0, theta: 0.0 }; 3],
            sides: vec![Side::Right, Side::Left, Side::Right],
            timestamps: vec![0.0, 0.8, 1.6],
            durations: vec![0.8, 0.8],
            ss_fraction: 0.6,
        };
        plan.validate(&cruise(), 1.0).unwrap();
        plan.sides[2] = Side::Left;
        assert!(matches!(plan.validate(&cruise(), 1.0), Err(FootstepError::NonAlternatingSides(2))));
        plan.sides[2] = Side::Right;
        plan.durations[1] = 0.05;
        assert!(plan.validate(&cruise(), 1.0).is_err());
    }
}
