//! Feasibility analysis of the stability constraint: the interval of unstable
//! coordinates that admit a ZMP trajectory inside its moving bounds, the
//! explicit witness trajectory, the preview-length bound that guarantees
//! recursive feasibility, and per-sample region tracking along a run.
//!
//! Two tracks are provided. The continuous closed-form interval fixes the
//! anticipated tail at the region center, which makes the interval width
//! exactly `dz * (1 - exp(-eta * Tc))`. The discrete range reproduces the QP
//! verdict exactly by maximizing the stability row over the per-sample ZMP
//! boxes (Abel summation), useful for equivalence checks.

use crate::footstep::{FootstepPlan, Pose};
use crate::lip::{DecomposedState, LipParams};
use crate::tails::{StabilityConstraintRow, Tail, TailError, TailKind, TailResidual};
use crate::timeline::GaitTimeline;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FeasibilityError {
    #[error("state is infeasible (margin {margin:e})")]
    InfeasibleState { margin: f64 },
    #[error("invalid bound profile: {reason}")]
    BadProfile { reason: &'static str },
    #[error(transparent)]
    Tail(#[from] TailError),
}

/// Admissible range of the unstable coordinate at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityInterval {
    pub lower: f64,
    pub upper: f64,
    pub time: f64,
}

impl FeasibilityInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Signed distance of the unstable coordinate from the interval boundary;
/// non-negative iff the state is feasible.
pub fn feasibility_margin(state: DecomposedState, interval: &FeasibilityInterval) -> f64 {
    (state.unstable - interval.lower).min(interval.upper - state.unstable)
}

/// Piecewise-linear ZMP bounds over a horizon, relative to the current time.
/// The width between upper and lower is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct ZmpBoundProfile {
    times: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ZmpBoundProfile {
    pub fn new(times: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, FeasibilityError> {
        if times.len() < 2 {
            return Err(FeasibilityError::BadProfile { reason: "need at least two breakpoints" });
        }
        if times.len() != lower.len() || times.len() != upper.len() {
            return Err(FeasibilityError::BadProfile { reason: "field lengths disagree" });
        }
        if times[0].abs() > 1e-12 {
            return Err(FeasibilityError::BadProfile { reason: "profile must start at time 0" });
        }
        let width = upper[0] - lower[0];
        for i in 0..times.len() {
            if !times[i].is_finite() || !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(FeasibilityError::BadProfile { reason: "non-finite entry" });
            }
            if i > 0 && times[i] <= times[i - 1] {
                return Err(FeasibilityError::BadProfile { reason: "times must increase" });
            }
            if ((upper[i] - lower[i]) - width).abs() > 1e-9 {
                return Err(FeasibilityError::BadProfile { reason: "width must be constant" });
            }
        }
        if width < 0.0 {
            return Err(FeasibilityError::BadProfile { reason: "upper below lower" });
        }
        Ok(ZmpBoundProfile { times, lower, upper })
    }

    /// Constant-width profile from centers sampled at breakpoints.
    pub fn from_centers(times: Vec<f64>, centers: &[f64], dz: f64) -> Result<Self, FeasibilityError> {
        let lower = centers.iter().map(|c| c - dz / 2.0).collect();
        let upper = centers.iter().map(|c| c + dz / 2.0).collect();
        ZmpBoundProfile::new(times, lower, upper)
    }

    pub fn width(&self) -> f64 {
        self.upper[0] - self.lower[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn interp(&self, values: &[f64], t: f64) -> f64 {
        if t <= self.times[0] {
            return values[0];
        }
        if t >= *self.times.last().unwrap() {
            return *values.last().unwrap();
        }
        let mut i = 0;
        while self.times[i + 1] < t {
            i += 1;
        }
        let (a, b) = (self.times[i], self.times[i + 1]);
        let s = (t - a) / (b - a);
        values[i] * (1.0 - s) + values[i + 1] * s
    }

    pub fn lower_at(&self, t: f64) -> f64 {
        self.interp(&self.lower, t)
    }

    pub fn upper_at(&self, t: f64) -> f64 {
        self.interp(&self.upper, t)
    }

    pub fn center_at(&self, t: f64) -> f64 {
        0.5 * (self.lower_at(t) + self.upper_at(t))
    }

    /// `eta * int_0^tc exp(-eta s) f(s) ds` for the piecewise-linear bound,
    /// extended as a constant beyond the last breakpoint.
    fn weighted_integral(&self, values: &[f64], eta: f64, tc: f64) -> f64 {
        let mut total = 0.0;
        let mut segments: Vec<(f64, f64, f64, f64)> = Vec::new();
        for i in 0..self.times.len() - 1 {
            segments.push((self.times[i], self.times[i + 1], values[i], values[i + 1]));
        }
        let last_t = *self.times.last().unwrap();
        if last_t < tc {
            let v = *values.last().unwrap();
            segments.push((last_t, tc, v, v));
        }
        for (a, b, va, vb) in segments {
            if a >= tc {
                break;
            }
            let b_eff = b.min(tc);
            let q = (vb - va) / (b - a);
            let l = b_eff - a;
            let i0 = (-eta * a).exp() - (-eta * b_eff).exp();
            let i1 = (-eta * a).exp() * (1.0 - (1.0 + eta * l) * (-eta * l).exp()) / eta;
            total += va * i0 + q * i1;
        }
        total
    }
}

/// Tail term `eta * int_tc^inf exp(-eta s) ztilde(s) ds` with the anticipated
/// trajectory anchored at the region center.
fn tail_term(bounds: &ZmpBoundProfile, tail: &Tail, params: &LipParams, tc: f64) -> f64 {
    let eta = params.eta();
    let lam = eta * params.sample_time;
    let discount = (-eta * tc).exp();
    let center_tc = bounds.center_at(tc);
    match tail {
        Tail::Truncated => discount * center_tc,
        Tail::Periodic { .. } => {
            let centers: Vec<f64> = (0..bounds.times.len())
                .map(|i| 0.5 * (bounds.lower[i] + bounds.upper[i]))
                .collect();
            let ic = bounds.weighted_integral(&centers, eta, tc);
            discount * ic / (1.0 - discount)
        }
        Tail::Anticipative { preview, residual } => {
            let mut s = 0.0;
            for (j, &v) in preview.iter().enumerate() {
                s += (-(j as f64) * lam).exp() * v;
            }
            let w = (1.0 - (-lam).exp()) / eta;
            let extra = match residual {
                TailResidual::Truncated => w * s,
                TailResidual::Periodic => {
                    let q = preview.len().max(1) as f64;
                    w * s / (1.0 - (-q * lam).exp())
                }
            };
            discount * (center_tc + extra)
        }
    }
}

/// Closed-form feasibility interval: exponentially weighted integrals of the
/// bounds over the horizon plus the fixed anticipated tail term. The periodic
/// tail continues the center path with period `tc`, so the stored
/// `period_samples` is not consulted here.
pub fn feasibility_interval(
    bounds: &ZmpBoundProfile,
    tail: &Tail,
    params: &LipParams,
    tc: f64,
    time: f64,
) -> FeasibilityInterval {
    let eta = params.eta();
    let tail_value = tail_term(bounds, tail, params, tc);
    let lower = bounds.weighted_integral(&bounds.lower, eta, tc) + tail_value;
    let upper = bounds.weighted_integral(&bounds.upper, eta, tc) + tail_value;
    FeasibilityInterval { lower, upper, time }
}

/// Piecewise-linear trajectory over the horizon, relative times.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn at(&self, t: f64) -> f64 {
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= *self.times.last().unwrap() {
            return *self.values.last().unwrap();
        }
        let mut i = 0;
        while self.times[i + 1] < t {
            i += 1;
        }
        let (a, b) = (self.times[i], self.times[i + 1]);
        let s = (t - a) / (b - a);
        self.values[i] * (1.0 - s) + self.values[i + 1] * s
    }
}

/// Explicit ZMP trajectory that realizes the stability constraint for a
/// feasible state: the upper bound shifted down by a constant.
pub fn witness_trajectory(
    state: DecomposedState,
    bounds: &ZmpBoundProfile,
    tail: &Tail,
    params: &LipParams,
    tc: f64,
) -> Result<PiecewiseLinear, FeasibilityError> {
    let interval = feasibility_interval(bounds, tail, params, tc, 0.0);
    let margin = feasibility_margin(state, &interval);
    if margin < 0.0 {
        return Err(FeasibilityError::InfeasibleState { margin });
    }
    let eta = params.eta();
    let shift = (interval.upper - state.unstable) / (1.0 - (-eta * tc).exp());
    let mut times: Vec<f64> = bounds.times.clone();
    if bounds.horizon() < tc {
        times.push(tc);
    }
    let values: Vec<f64> = times.iter().map(|&t| bounds.upper_at(t) - shift).collect();
    let witness = PiecewiseLinear { times, values };

    let check = ZmpBoundProfile::new(
        witness.times.clone(),
        witness.values.clone(),
        witness.values.iter().map(|v| v + 1.0).collect(),
    )
    .expect("witness breakpoints are valid");
    let achieved =
        check.weighted_integral(&check.lower, eta, tc) + tail_term(bounds, tail, params, tc);
    if (achieved - state.unstable).abs() > 1e-8 {
        return Err(FeasibilityError::BadProfile { reason: "witness verification failed" });
    }
    Ok(witness)
}

/// Preview horizon that guarantees recursive feasibility:
/// `Tc + max(0, ln(2 v_max / (eta dz)) / eta)`. A non-positive log term means
/// any preview at least as long as the control horizon suffices.
pub fn recursive_feasibility_preview_bound(
    params: &LipParams,
    tc: f64,
    v_max: f64,
    dz: f64,
) -> f64 {
    assert!(v_max > 0.0 && dz > 0.0, "v_max and dz must be positive");
    let eta = params.eta();
    tc + ((2.0 * v_max / (eta * dz)).ln() / eta).max(0.0)
}

/// Largest per-axis ZMP reference velocity implied by a plan's transfers.
pub fn plan_velocity_bound(plan: &FootstepPlan) -> (f64, f64) {
    let mut vx: f64 = 0.0;
    let mut vy: f64 = 0.0;
    for j in 0..plan.len().saturating_sub(1) {
        let tds = plan.ds_duration(j);
        if tds <= 0.0 {
            continue;
        }
        let d = plan.poses[j + 1].position() - plan.poses[j].position();
        vx = vx.max(d.x.abs() / tds);
        vy = vy.max(d.y.abs() / tds);
    }
    (vx, vy)
}

/// Per-axis feasibility intervals along a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionTrack {
    pub x: Vec<FeasibilityInterval>,
    pub y: Vec<FeasibilityInterval>,
}

/// Builds per-sample feasibility intervals for the given sample times. Bound
/// profiles follow the centered ZMP path of the plan at width `dz`; the
/// anticipative tail uses the preview window [Tc, Tp]. Orientation of the
/// plan is ignored (per-axis decoupling), so runs with rotations are
/// approximate.
pub fn track_regions(
    sample_times: &[f64],
    plan: &FootstepPlan,
    initial_other: Option<Pose>,
    tail_kind: TailKind,
    params: &LipParams,
    tc: f64,
    tp: f64,
    dz_x: f64,
    dz_y: f64,
) -> Result<RegionTrack, FeasibilityError> {
    let delta = params.sample_time;
    let c = (tc / delta).round() as usize;
    let p = (tp / delta).round() as usize;
    let timeline = GaitTimeline::new(plan, initial_other, 0.0, 0.0);
    let mut x = Vec::with_capacity(sample_times.len());
    let mut y = Vec::with_capacity(sample_times.len());
    for &tk in sample_times {
        let times = breakpoints(plan, tk, tc);
        let mut cx = Vec::with_capacity(times.len());
        let mut cy = Vec::with_capacity(times.len());
        for &t in &times {
            let center = timeline.centered_path_at(tk + t);
            cx.push(center.x);
            cy.push(center.y);
        }
        let bx = ZmpBoundProfile::from_centers(times.clone(), &cx, dz_x)?;
        let by = ZmpBoundProfile::from_centers(times, &cy, dz_y)?;
        let (tail_x, tail_y) =
            tail_kind.build_axis_tails(plan, initial_other, params, tk, c, p)?;
        x.push(feasibility_interval(&bx, &tail_x, params, tc, tk));
        y.push(feasibility_interval(&by, &tail_y, params, tc, tk));
    }
    Ok(RegionTrack { x, y })
}

/// Breakpoints of the centered path within [tk, tk + tc], relative to tk.
fn breakpoints(plan: &FootstepPlan, tk: f64, tc: f64) -> Vec<f64> {
    let mut ts = vec![0.0, tc];
    let mut push = |t: f64| {
        let rel = t - tk;
        if rel > 1e-12 && rel < tc - 1e-12 {
            ts.push(rel);
        }
    };
    if !plan.timestamps.is_empty() {
        let lift = plan.timestamps[0];
        if plan.len() > 1 {
            push(lift - plan.ds_duration(0).min(lift.max(0.0)));
        }
        push(lift);
    }
    for j in 0..plan.len().saturating_sub(1) {
        let ss_end = plan.timestamps[j] + plan.durations[j] * plan.ss_fraction;
        push(ss_end);
        push(plan.timestamps[j + 1]);
    }
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    ts
}

/// Exact feasible range of the unstable coordinate for the discrete QP whose
/// ZMP samples are boxed per sample: Abel summation of the stability row over
/// the extremal ZMP sequences. `lower`/`upper` hold the bounds at samples
/// 1..=C; the current ZMP is unconstrained (it is a state, not a decision).
pub fn discrete_unstable_range(
    row: &StabilityConstraintRow,
    params: &LipParams,
    current_zmp: f64,
    lower: &[f64],
    upper: &[f64],
) -> (f64, f64) {
    let c = row.coeffs.len();
    assert_eq!(lower.len(), c, "need bounds at samples 1..=C");
    assert_eq!(upper.len(), c, "need bounds at samples 1..=C");
    let delta = params.sample_time;
    let mut s_min = -current_zmp;
    let mut s_max = -current_zmp;
    for j in 1..c {
        let coef = row.coeffs[j - 1] - row.coeffs[j];
        s_min += coef * lower[j - 1];
        s_max += coef * upper[j - 1];
    }
    let last = row.coeffs[c - 1];
    s_min += last * lower[c - 1];
    s_max += last * upper[c - 1];
    s_min /= delta;
    s_max /= delta;
    let lo = current_zmp + (s_min - row.rhs_offset) / row.rhs_state_gain;
    let hi = current_zmp + (s_max - row.rhs_offset) / row.rhs_state_gain;
    (lo, hi)
}
