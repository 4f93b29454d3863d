//! Support-phase anatomy of a footstep plan and the moving ZMP admissible
//! region: fixed enlarged boxes while standing on both feet, foot-centered
//! boxes in single support, linear roto-translation during double support.
//!
//! The final transfer of a plan targets the mid-stance of its last two feet
//! (weight spreading to both) so the region and the centered ZMP path stay
//! continuous when the robot stops.

use crate::footstep::{FootstepPlan, Pose};
use nalgebra::Vector2;

/// Which phase of the gait a time instant falls in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SupportPhase {
    /// Standing on both initial feet, before the first step.
    InitialStand,
    /// Single support on footstep `step`.
    Single { step: usize },
    /// Transfer from footstep `from` to `from + 1` (or to the terminal
    /// stand when `from + 1` is the last footstep), `sigma` in [0, 1].
    Double { from: usize, sigma: f64 },
    /// Standing on the last two feet after the plan ends.
    FinalStand,
}

impl SupportPhase {
    pub fn label(&self) -> &'static str {
        match self {
            SupportPhase::InitialStand | SupportPhase::FinalStand => "stand",
            SupportPhase::Single { .. } => "single",
            SupportPhase::Double { .. } => "double",
        }
    }
}

/// Region center as an affine expression in footstep positions: a constant
/// offset plus weighted plan entries. Entries stay symbolic so the controller
/// can map decision footsteps to QP variables.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCenter {
    pub offset: Vector2<f64>,
    pub terms: Vec<(usize, f64)>,
}

impl RegionCenter {
    fn foot(j: usize) -> Self {
        RegionCenter { offset: Vector2::zeros(), terms: vec![(j, 1.0)] }
    }

    fn blend(a: RegionCenter, b: RegionCenter, sigma: f64) -> Self {
        let mut terms: Vec<(usize, f64)> = Vec::new();
        let offset = a.offset * (1.0 - sigma) + b.offset * sigma;
        for (j, w) in a.terms {
            terms.push((j, w * (1.0 - sigma)));
        }
        for (j, w) in b.terms {
            match terms.iter_mut().find(|(i, _)| *i == j) {
                Some(entry) => entry.1 += w * sigma,
                None => terms.push((j, w * sigma)),
            }
        }
        terms.sort_by_key(|&(j, _)| j);
        RegionCenter { offset, terms }
    }

    /// Numeric value with footstep positions taken from the plan.
    pub fn value(&self, plan: &FootstepPlan) -> Vector2<f64> {
        let mut v = self.offset;
        for &(j, w) in &self.terms {
            v += plan.poses[j].position() * w;
        }
        v
    }
}

/// One sample of the ZMP admissible region schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSample {
    pub phase: SupportPhase,
    pub theta: f64,
    pub center: RegionCenter,
    pub half: Vector2<f64>,
}

/// Time anatomy of a plan plus region dimensions.
#[derive(Debug, Clone)]
pub struct GaitTimeline<'a> {
    pub plan: &'a FootstepPlan,
    /// The non-support foot of the initial stance, if the run starts with
    /// both feet planted.
    pub initial_other: Option<Pose>,
    /// ZMP region half-dimensions (dz_x/2, dz_y/2).
    pub half_dims: Vector2<f64>,
}

/// Half-dimensions of the axis-aligned (in the `theta` frame) bounding box of
/// two foot regions of half-dimensions `half` centered at `a` and `b`.
fn stand_halves(a: Vector2<f64>, b: Vector2<f64>, theta: f64, half: Vector2<f64>) -> Vector2<f64> {
    let (s, c) = theta.sin_cos();
    let d = b - a;
    let local = Vector2::new(c * d.x + s * d.y, -s * d.x + c * d.y);
    Vector2::new(half.x + local.x.abs() / 2.0, half.y + local.y.abs() / 2.0)
}

impl<'a> GaitTimeline<'a> {
    pub fn new(plan: &'a FootstepPlan, initial_other: Option<Pose>, dz_x: f64, dz_y: f64) -> Self {
        GaitTimeline { plan, initial_other, half_dims: Vector2::new(dz_x / 2.0, dz_y / 2.0) }
    }

    /// When footstep j touches the ground: the start of the double support
    /// that precedes its own support interval.
    pub fn landing_time(&self, j: usize) -> f64 {
        let ts = &self.plan.timestamps;
        if j == 0 || j >= ts.len() {
            return f64::NEG_INFINITY;
        }
        ts[j] - self.plan.ds_duration(j - 1)
    }

    pub fn phase_at(&self, t: f64) -> SupportPhase {
        let plan = self.plan;
        let f = plan.len();
        if f <= 1 {
            return SupportPhase::InitialStand;
        }
        let ts = &plan.timestamps;
        if t < ts[0] {
            return SupportPhase::InitialStand;
        }
        if t >= ts[f - 1] {
            return SupportPhase::FinalStand;
        }
        let j = plan.interval_at(t);
        let ss_end = ts[j] + plan.durations[j] * plan.ss_fraction;
        if t < ss_end {
            SupportPhase::Single { step: j }
        } else {
            let tds = plan.ds_duration(j);
            let sigma = if tds > 0.0 { ((t - ss_end) / tds).clamp(0.0, 1.0) } else { 1.0 };
            SupportPhase::Double { from: j, sigma }
        }
    }

    /// Mid-stance center of the two initial feet (affine).
    fn initial_stand_center(&self) -> RegionCenter {
        match self.initial_other {
            Some(other) => RegionCenter {
                offset: other.position() / 2.0,
                terms: vec![(0, 0.5)],
            },
            None => RegionCenter::foot(0),
        }
    }

    fn final_stand_center(&self) -> RegionCenter {
        let f = self.plan.len();
        if f >= 2 {
            RegionCenter { offset: Vector2::zeros(), terms: vec![(f - 2, 0.5), (f - 1, 0.5)] }
        } else {
            self.initial_stand_center()
        }
    }

    pub fn region_at(&self, t: f64) -> RegionSample {
        let plan = self.plan;
        let f = plan.len();
        let phase = self.phase_at(t);
        match phase {
            SupportPhase::InitialStand => {
                let theta = plan.poses[0].theta;
                let half = match self.initial_other {
                    Some(other) => {
                        stand_halves(plan.poses[0].position(), other.position(), theta, self.half_dims)
                    }
                    None => self.half_dims,
                };
                RegionSample { phase, theta, center: self.initial_stand_center(), half }
            }
            SupportPhase::FinalStand => {
                let theta = plan.poses[f - 1].theta;
                let half = if f >= 2 {
                    stand_halves(
                        plan.poses[f - 2].position(),
                        plan.poses[f - 1].position(),
                        theta,
                        self.half_dims,
                    )
                } else {
                    self.half_dims
                };
                RegionSample { phase, theta, center: self.final_stand_center(), half }
            }
            SupportPhase::Single { step } => RegionSample {
                phase,
                theta: plan.poses[step].theta,
                center: RegionCenter::foot(step),
                half: self.half_dims,
            },
            SupportPhase::Double { from, sigma } => {
                let last_transfer = from + 2 == f;
                let (target_center, target_theta, target_half) = if last_transfer {
                    let theta = plan.poses[f - 1].theta;
                    let half = stand_halves(
                        plan.poses[f - 2].position(),
                        plan.poses[f - 1].position(),
                        theta,
                        self.half_dims,
                    );
                    (self.final_stand_center(), theta, half)
                } else {
                    (RegionCenter::foot(from + 1), plan.poses[from + 1].theta, self.half_dims)
                };
                RegionSample {
                    phase,
                    theta: plan.poses[from].theta * (1.0 - sigma) + target_theta * sigma,
                    center: RegionCenter::blend(RegionCenter::foot(from), target_center, sigma),
                    half: self.half_dims * (1.0 - sigma) + target_half * sigma,
                }
            }
        }
    }

    /// The centered ZMP reference path: region centers, except that the tail
    /// end of an initial stand ramps from mid-stance to the first support
    /// foot so the path stays continuous at lift-off.
    pub fn centered_path_at(&self, t: f64) -> Vector2<f64> {
        let plan = self.plan;
        if plan.len() <= 1 {
            return self.initial_stand_center().value(plan);
        }
        if let SupportPhase::InitialStand = self.phase_at(t) {
            let mid = self.initial_stand_center().value(plan);
            let first = plan.poses[0].position();
            let lift = plan.timestamps[0];
            let shift = plan.ds_duration(0).min(lift.max(0.0));
            if shift <= 0.0 || t <= lift - shift {
                return mid;
            }
            let sigma = ((t - (lift - shift)) / shift).clamp(0.0, 1.0);
            return mid * (1.0 - sigma) + first * sigma;
        }
        self.region_at(t).center.value(plan)
    }

    /// Support-foot index for logging: the step whose interval contains t.
    pub fn active_footstep_index(&self, t: f64) -> usize {
        match self.phase_at(t) {
            SupportPhase::InitialStand => 0,
            SupportPhase::FinalStand => self.plan.len() - 1,
            SupportPhase::Single { step } => step,
            SupportPhase::Double { from, .. } => from,
        }
    }
}
