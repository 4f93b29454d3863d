//! Per-iteration MPC: assemble the QP over ZMP velocities and in-horizon
//! footstep positions, solve it, apply the first velocity sample, and
//! propagate the model by one sample. The stability constraint couples the
//! current unstable coordinate to the in-horizon velocities through the
//! selected tail; the standard baseline drops it and minimizes CoM jerk.

use crate::feasibility::{
    feasibility_margin, track_regions, FeasibilityError, FeasibilityInterval,
};
use crate::footstep::{FootstepPlan, KinematicLimits, Pose};
use crate::lip::{decompose, step_exact, LipParams, PlanarState};
use crate::qp::{
    solve_warm, BoundSide, QpError, QpProblem, QpStatus, SolveOptions, WarmStart,
};
use crate::tails::{build_stability_row, TailError, TailKind};
use crate::timeline::{GaitTimeline, RegionSample};
use nalgebra::{DMatrix, DVector, Vector2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("invalid controller configuration: {reason}")]
    BadConfig { reason: &'static str },
    #[error(transparent)]
    Tail(#[from] TailError),
    #[error(transparent)]
    Solver(#[from] QpError),
    #[error(transparent)]
    Feasibility(#[from] FeasibilityError),
}

/// Controller configuration. The control horizon spans `horizon_c` samples,
/// the preview (candidate footsteps, anticipative tail) `preview_p` samples.
#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub lip: LipParams,
    pub horizon_c: usize,
    pub preview_p: usize,
    pub dz_x: f64,
    pub dz_y: f64,
    pub limits: KinematicLimits,
    /// Footstep tracking weight in the cost.
    pub beta: f64,
    pub tail_kind: TailKind,
    /// Treat candidate footsteps as constants (the beta-to-infinity mode);
    /// kinematic rows are dropped.
    pub footsteps_fixed: bool,
    /// Extra cost weight pulling the ZMP toward region centers; only used by
    /// the standard-MPC baseline.
    pub zmp_centering_weight: f64,
    /// The non-support foot of the initial stance, if the run starts from a
    /// double-support stand.
    pub initial_other: Option<Pose>,
}

impl MpcConfig {
    pub fn new(
        lip: LipParams,
        horizon_c: usize,
        preview_p: usize,
        dz_x: f64,
        dz_y: f64,
        limits: KinematicLimits,
        tail_kind: TailKind,
    ) -> Result<Self, ControllerError> {
        let config = MpcConfig {
            lip,
            horizon_c,
            preview_p,
            dz_x,
            dz_y,
            limits,
            beta: 1e4,
            tail_kind,
            footsteps_fixed: false,
            zmp_centering_weight: 0.0,
            initial_other: None,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        if self.horizon_c == 0 {
            return Err(ControllerError::BadConfig { reason: "horizon_c must be positive" });
        }
        if self.preview_p < self.horizon_c {
            return Err(ControllerError::BadConfig { reason: "preview_p must cover horizon_c" });
        }
        if !(self.dz_x > 0.0 && self.dz_y > 0.0) {
            return Err(ControllerError::BadConfig { reason: "dz must be positive" });
        }
        if !(self.beta > 0.0) {
            return Err(ControllerError::BadConfig { reason: "beta must be positive" });
        }
        if self.zmp_centering_weight < 0.0 {
            return Err(ControllerError::BadConfig { reason: "centering weight must be >= 0" });
        }
        Ok(())
    }

    pub fn sample_time(&self) -> f64 {
        self.lip.sample_time
    }

    pub fn control_horizon(&self) -> f64 {
        self.horizon_c as f64 * self.lip.sample_time
    }

    pub fn preview_horizon(&self) -> f64 {
        self.preview_p as f64 * self.lip.sample_time
    }
}

/// Column layout of the decision vector (Ux, Uy, Fx, Fy).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionLayout {
    pub horizon_c: usize,
    /// Plan indices of in-horizon decision footsteps, ascending.
    pub feet: Vec<usize>,
    pub footsteps_fixed: bool,
}

impl DecisionLayout {
    pub fn num_feet(&self) -> usize {
        if self.footsteps_fixed {
            0
        } else {
            self.feet.len()
        }
    }

    pub fn num_vars(&self) -> usize {
        2 * self.horizon_c + 2 * self.num_feet()
    }

    pub fn col_ux(&self, i: usize) -> usize {
        i
    }

    pub fn col_uy(&self, i: usize) -> usize {
        self.horizon_c + i
    }

    pub fn col_fx(&self, slot: usize) -> usize {
        2 * self.horizon_c + slot
    }

    pub fn col_fy(&self, slot: usize) -> usize {
        2 * self.horizon_c + self.num_feet() + slot
    }

    /// Decision slot of a plan footstep index, if it is a variable.
    pub fn slot_of(&self, plan_index: usize) -> Option<usize> {
        if self.footsteps_fixed {
            return None;
        }
        self.feet.iter().position(|&j| j == plan_index)
    }
}

/// Footsteps that land strictly after `tk` and no later than `tk + tc`.
pub fn decision_footsteps(plan: &FootstepPlan, tk: f64, tc: f64) -> Vec<usize> {
    let timeline = GaitTimeline::new(plan, None, 0.0, 0.0);
    (1..plan.len())
        .filter(|&j| {
            let landing = timeline.landing_time(j);
            landing > tk + 1e-9 && landing <= tk + tc + 1e-9
        })
        .collect()
}

/// Region samples for the horizon: entry i-1 constrains the ZMP at sample i.
#[derive(Debug, Clone, PartialEq)]
pub struct ZmpRegionSchedule {
    pub samples: Vec<RegionSample>,
}

pub fn build_region_schedule(
    plan: &FootstepPlan,
    config: &MpcConfig,
    tk: f64,
) -> ZmpRegionSchedule {
    let timeline = GaitTimeline::new(plan, config.initial_other, config.dz_x, config.dz_y);
    let delta = config.sample_time();
    let samples = (1..=config.horizon_c)
        .map(|i| timeline.region_at(tk + i as f64 * delta))
        .collect();
    ZmpRegionSchedule { samples }
}

/// Inequality rows confining the ZMP to the moving region at samples 1..=C,
/// affine in velocities and decision footsteps: two rotated rows per sample.
pub fn build_zmp_constraints(
    schedule: &ZmpRegionSchedule,
    plan: &FootstepPlan,
    layout: &DecisionLayout,
    current_zmp: Vector2<f64>,
    delta: f64,
) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let c = layout.horizon_c;
    let n = layout.num_vars();
    let m = 2 * schedule.samples.len();
    let mut a = DMatrix::zeros(m, n);
    let mut lo = DVector::zeros(m);
    let mut hi = DVector::zeros(m);
    for (idx, sample) in schedule.samples.iter().enumerate() {
        let i = idx + 1;
        let (sin, cos) = sample.theta.sin_cos();
        let mut center_const = sample.center.offset;
        let mut var_terms: Vec<(usize, f64)> = Vec::new();
        for &(j, w) in &sample.center.terms {
            match layout.slot_of(j) {
                Some(slot) => var_terms.push((slot, w)),
                None => center_const += plan.poses[j].position() * w,
            }
        }
        for (axis, (rx, ry), half) in [
            (0usize, (cos, sin), sample.half.x),
            (1usize, (-sin, cos), sample.half.y),
        ] {
            let row = 2 * idx + axis;
            for l in 0..i.min(c) {
                a[(row, layout.col_ux(l))] = delta * rx;
                a[(row, layout.col_uy(l))] = delta * ry;
            }
            for &(slot, w) in &var_terms {
                a[(row, layout.col_fx(slot))] = -w * rx;
                a[(row, layout.col_fy(slot))] = -w * ry;
            }
            let known = rx * (current_zmp.x - center_const.x) + ry * (current_zmp.y - center_const.y);
            lo[row] = -half - known;
            hi[row] = half - known;
        }
    }
    (a, lo, hi)
}

/// Inequality rows keeping each decision footstep inside the kinematically
/// admissible box of its predecessor: two rotated rows per footstep.
pub fn build_kinematic_constraints(
    plan: &FootstepPlan,
    layout: &DecisionLayout,
    limits: &KinematicLimits,
) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let n = layout.num_vars();
    let m = 2 * layout.num_feet();
    let mut a = DMatrix::zeros(m, n);
    let mut lo = DVector::zeros(m);
    let mut hi = DVector::zeros(m);
    for (slot, &j) in layout.feet.iter().enumerate() {
        let prev = j - 1;
        let (sin, cos) = plan.poses[prev].theta.sin_cos();
        let sign = plan.sides[j].sign();
        for (axis, (rx, ry), center, half) in [
            (0usize, (cos, sin), 0.0, limits.da_x / 2.0),
            (1usize, (-sin, cos), sign * limits.ell, limits.da_y / 2.0),
        ] {
            let row = 2 * slot + axis;
            a[(row, layout.col_fx(slot))] = rx;
            a[(row, layout.col_fy(slot))] = ry;
            let mut known = 0.0;
            match layout.slot_of(prev) {
                Some(pslot) => {
                    a[(row, layout.col_fx(pslot))] -= rx;
                    a[(row, layout.col_fy(pslot))] -= ry;
                }
                None => {
                    let p = plan.poses[prev].position();
                    known = rx * p.x + ry * p.y;
                }
            }
            lo[row] = center - half + known;
            hi[row] = center + half + known;
        }
    }
    (a, lo, hi)
}

/// Which optimization the iteration solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    IsMpc,
    Standard,
}

/// Assembled QP plus the bookkeeping needed to interpret its solution.
#[derive(Debug, Clone)]
pub struct AssembledQp {
    pub problem: QpProblem,
    pub layout: DecisionLayout,
    pub schedule: ZmpRegionSchedule,
}

/// Builds the IS-MPC QP for the current state and candidate plan.
pub fn assemble_qp(
    state: &PlanarState,
    plan: &FootstepPlan,
    config: &MpcConfig,
) -> Result<AssembledQp, ControllerError> {
    assemble(state, plan, config, Mode::IsMpc)
}

fn assemble(
    state: &PlanarState,
    plan: &FootstepPlan,
    config: &MpcConfig,
    mode: Mode,
) -> Result<AssembledQp, ControllerError> {
    config.validate()?;
    let params = &config.lip;
    let delta = config.sample_time();
    let c = config.horizon_c;
    let tk = state.time;
    let tc = config.control_horizon();

    let feet = decision_footsteps(plan, tk, tc);
    let layout = DecisionLayout {
        horizon_c: c,
        feet,
        footsteps_fixed: config.footsteps_fixed,
    };
    let n = layout.num_vars();
    let nf = layout.num_feet();

    let mut hessian = DMatrix::zeros(n, n);
    let mut linear = DVector::zeros(n);
    match mode {
        Mode::IsMpc => {
            for i in 0..c {
                hessian[(layout.col_ux(i), layout.col_ux(i))] = 2.0;
                hessian[(layout.col_uy(i), layout.col_uy(i))] = 2.0;
            }
        }
        Mode::Standard => {
            let (jx, kx) = jerk_affine(params, c, state.x.com_vel, state.x.com_pos, state.x.zmp_pos);
            let (jy, ky) = jerk_affine(params, c, state.y.com_vel, state.y.com_pos, state.y.zmp_pos);
            let hx = 2.0 * jx.transpose() * &jx;
            let hy = 2.0 * jy.transpose() * &jy;
            hessian.view_mut((0, 0), (c, c)).copy_from(&hx);
            hessian.view_mut((c, c), (c, c)).copy_from(&hy);
            let gx = 2.0 * jx.transpose() * kx;
            let gy = 2.0 * jy.transpose() * ky;
            linear.rows_mut(0, c).copy_from(&gx);
            linear.rows_mut(c, c).copy_from(&gy);
        }
    }
    for slot in 0..nf {
        let j = layout.feet[slot];
        let target = plan.poses[j].position();
        hessian[(layout.col_fx(slot), layout.col_fx(slot))] = 2.0 * config.beta;
        hessian[(layout.col_fy(slot), layout.col_fy(slot))] = 2.0 * config.beta;
        linear[layout.col_fx(slot)] = -2.0 * config.beta * target.x;
        linear[layout.col_fy(slot)] = -2.0 * config.beta * target.y;
    }

    let schedule = build_region_schedule(plan, config, tk);
    let current_zmp = Vector2::new(state.x.zmp_pos, state.y.zmp_pos);
    let (zmp_a, zmp_lo, zmp_hi) =
        build_zmp_constraints(&schedule, plan, &layout, current_zmp, delta);

    if mode == Mode::Standard && config.zmp_centering_weight > 0.0 {
        // The centering residual reuses the rotated ZMP rows: their known
        // part is the (negated) offset from the region center, so the
        // squared row residual centered between the bounds is exactly the
        // squared distance from the center.
        let w = config.zmp_centering_weight;
        let m = zmp_a.nrows();
        for r in 0..m {
            let mid = 0.5 * (zmp_lo[r] + zmp_hi[r]);
            let row = zmp_a.row(r);
            for ci in 0..n {
                if row[ci] == 0.0 {
                    continue;
                }
                for cj in 0..n {
                    if row[cj] != 0.0 {
                        hessian[(ci, cj)] += 2.0 * w * row[ci] * row[cj];
                    }
                }
                linear[ci] += -2.0 * w * mid * row[ci];
            }
        }
    }

    let (ineq_matrix, ineq_lower, ineq_upper) = if config.footsteps_fixed || nf == 0 {
        (zmp_a, zmp_lo, zmp_hi)
    } else {
        let (kin_a, kin_lo, kin_hi) = build_kinematic_constraints(plan, &layout, &config.limits);
        let m = zmp_a.nrows() + kin_a.nrows();
        let mut a = DMatrix::zeros(m, n);
        a.view_mut((0, 0), (zmp_a.nrows(), n)).copy_from(&zmp_a);
        a.view_mut((zmp_a.nrows(), 0), (kin_a.nrows(), n)).copy_from(&kin_a);
        let mut lo = DVector::zeros(m);
        let mut hi = DVector::zeros(m);
        lo.rows_mut(0, zmp_lo.len()).copy_from(&zmp_lo);
        hi.rows_mut(0, zmp_hi.len()).copy_from(&zmp_hi);
        lo.rows_mut(zmp_lo.len(), kin_lo.len()).copy_from(&kin_lo);
        hi.rows_mut(zmp_hi.len(), kin_hi.len()).copy_from(&kin_hi);
        (a, lo, hi)
    };

    let (eq_matrix, eq_rhs) = match mode {
        Mode::IsMpc => {
            let (tail_x, tail_y) = config.tail_kind.build_axis_tails(
                plan,
                config.initial_other,
                params,
                tk,
                c,
                config.preview_p,
            )?;
            let row_x = build_stability_row(&tail_x, params, c)?;
            let row_y = build_stability_row(&tail_y, params, c)?;
            let mut eq = DMatrix::zeros(2, n);
            for i in 0..c {
                eq[(0, layout.col_ux(i))] = row_x.coeffs[i];
                eq[(1, layout.col_uy(i))] = row_y.coeffs[i];
            }
            let rhs = DVector::from_column_slice(&[
                row_x.rhs(decompose(state.x, params)),
                row_y.rhs(decompose(state.y, params)),
            ]);
            (eq, rhs)
        }
        Mode::Standard => (DMatrix::zeros(0, n), DVector::zeros(0)),
    };

    Ok(AssembledQp {
        problem: QpProblem {
            hessian,
            linear_cost: linear,
            eq_matrix,
            eq_rhs,
            ineq_matrix,
            ineq_lower,
            ineq_upper,
        },
        layout,
        schedule,
    })
}

/// Affine map from the velocity block of one axis to the per-sample CoM jerk
/// `eta^2 (com_vel_i - u_i)`: returns (J, k) with jerk = J u + k, built by
/// exact propagation of (com_pos, com_vel, zmp) over each interval.
fn jerk_affine(
    params: &LipParams,
    c: usize,
    com_vel: f64,
    com_pos: f64,
    zmp: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let eta = params.eta();
    let delta = params.sample_time;
    let sh = (eta * delta).sinh();
    let ch = (eta * delta).cosh();
    let eta2 = eta * eta;

    let mut pc = DVector::<f64>::zeros(c);
    let mut pcd = DVector::<f64>::zeros(c);
    let mut pz = DVector::<f64>::zeros(c);
    let (mut kc, mut kcd, kz) = (com_pos, com_vel, zmp);

    let mut j = DMatrix::zeros(c, c);
    let mut k = DVector::zeros(c);
    for l in 0..c {
        for col in 0..l {
            j[(l, col)] = eta2 * pcd[col];
        }
        j[(l, l)] = -eta2;
        k[l] = eta2 * kcd;

        let nc = &pc * ch + &pcd * (sh / eta) + &pz * (1.0 - ch);
        let ncd = &pc * (eta * sh) + &pcd * ch + &pz * (-eta * sh);
        let nz = pz.clone();
        pc = nc;
        pcd = ncd;
        pz = nz;
        pc[l] += delta - sh / eta;
        pcd[l] += 1.0 - ch;
        pz[l] += delta;
        let t_kc = ch * kc + (sh / eta) * kcd + (1.0 - ch) * kz;
        let t_kcd = eta * sh * kc + ch * kcd - eta * sh * kz;
        kc = t_kc;
        kcd = t_kcd;
    }
    (j, k)
}

/// Pulls the warm point's last velocity sample back so the predicted final
/// ZMP lands strictly inside the final region. The shifted solution covers
/// all earlier rows at the same absolute times as the previous solve; only
/// the newly revealed final sample can violate, and a violated start would
/// cost a feasibility restoration that discards the warm point.
fn clamp_final_input(
    point: &mut DVector<f64>,
    assembled: &AssembledQp,
    plan: &FootstepPlan,
    current_zmp: Vector2<f64>,
    delta: f64,
) {
    let layout = &assembled.layout;
    let c = layout.horizon_c;
    let Some(sample) = assembled.schedule.samples.last() else {
        return;
    };
    let mut z = current_zmp;
    for l in 0..c - 1 {
        z.x += delta * point[layout.col_ux(l)];
        z.y += delta * point[layout.col_uy(l)];
    }
    let mut center = sample.center.offset;
    for &(j, w) in &sample.center.terms {
        let p = match layout.slot_of(j) {
            Some(slot) => {
                Vector2::new(point[layout.col_fx(slot)], point[layout.col_fy(slot)])
            }
            None => plan.poses[j].position(),
        };
        center += p * w;
    }
    let (sin, cos) = sample.theta.sin_cos();
    let pred = Vector2::new(
        z.x + delta * point[layout.col_ux(c - 1)] - center.x,
        z.y + delta * point[layout.col_uy(c - 1)] - center.y,
    );
    let local = Vector2::new(cos * pred.x + sin * pred.y, -sin * pred.x + cos * pred.y);
    let keep = sample.half * 0.99;
    let clamped = Vector2::new(
        local.x.clamp(-keep.x, keep.x),
        local.y.clamp(-keep.y, keep.y),
    );
    if clamped == local {
        return;
    }
    let world = Vector2::new(cos * clamped.x - sin * clamped.y, sin * clamped.x + cos * clamped.y);
    point[layout.col_ux(c - 1)] = (center.x + world.x - z.x) / delta;
    point[layout.col_uy(c - 1)] = (center.y + world.y - z.y) / delta;
}

/// One footstep position chosen by the QP, tagged by its plan index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedFootstep {
    pub index: usize,
    pub position: Vector2<f64>,
}

/// The closed-form CoM/ZMP trajectory over one sample interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComSegment {
    pub start: PlanarState,
    pub end: PlanarState,
    pub inputs: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcDiagnostics {
    pub objective: f64,
    pub active_rows: usize,
    pub qp_iterations: usize,
    pub decision_feet: usize,
    pub interval_x: FeasibilityInterval,
    pub interval_y: FeasibilityInterval,
    pub margin_x: f64,
    pub margin_y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcIterationResult {
    pub first_inputs: (f64, f64),
    pub planned_footsteps: Vec<PlannedFootstep>,
    pub com_segment: ComSegment,
    pub qp_status: QpStatus,
    pub diagnostics: MpcDiagnostics,
}

struct WarmMemory {
    solution: DVector<f64>,
    active: Vec<(usize, BoundSide)>,
    feet: Vec<usize>,
}

/// Stateful controller owning its warm-start memory.
pub struct IsMpcController {
    pub config: MpcConfig,
    opts: SolveOptions,
    warm: Option<WarmMemory>,
}

impl IsMpcController {
    pub fn new(config: MpcConfig) -> Result<Self, ControllerError> {
        config.validate()?;
        Ok(IsMpcController { config, opts: SolveOptions::default(), warm: None })
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn iterate(
        &mut self,
        state: &PlanarState,
        plan: &FootstepPlan,
    ) -> Result<MpcIterationResult, ControllerError> {
        self.run(state, plan, Mode::IsMpc)
    }

    pub fn iterate_standard(
        &mut self,
        state: &PlanarState,
        plan: &FootstepPlan,
    ) -> Result<MpcIterationResult, ControllerError> {
        self.run(state, plan, Mode::Standard)
    }

    /// Previous solution shifted by one sample, with the active set shifted
    /// the same way: the ZMP row of sample i at time k covers the same
    /// absolute instant as the row of sample i-1 at time k+1, and kinematic
    /// rows follow their footstep.
    fn warm_start(&self, layout: &DecisionLayout, plan: &FootstepPlan) -> WarmStart {
        let Some(mem) = &self.warm else {
            return WarmStart::default();
        };
        let c = layout.horizon_c;
        let prev_nf = if layout.footsteps_fixed { 0 } else { mem.feet.len() };
        if mem.solution.len() != 2 * c + 2 * prev_nf {
            return WarmStart::default();
        }
        let n = layout.num_vars();
        let mut point = DVector::zeros(n);
        for i in 0..c {
            let src = (i + 1).min(c - 1);
            point[layout.col_ux(i)] = mem.solution[src];
            point[layout.col_uy(i)] = mem.solution[c + src];
        }
        if !layout.footsteps_fixed {
            for (slot, &j) in layout.feet.iter().enumerate() {
                match mem.feet.iter().position(|&pj| pj == j) {
                    Some(ps) => {
                        point[layout.col_fx(slot)] = mem.solution[2 * c + ps];
                        point[layout.col_fy(slot)] = mem.solution[2 * c + prev_nf + ps];
                    }
                    None => {
                        let p = plan.poses[j].position();
                        point[layout.col_fx(slot)] = p.x;
                        point[layout.col_fy(slot)] = p.y;
                    }
                }
            }
        }
        let mut active = Vec::new();
        for &(row, side) in &mem.active {
            if row < 2 * c {
                if row >= 2 {
                    active.push((row - 2, side));
                }
            } else {
                let slot_old = (row - 2 * c) / 2;
                let axis = row % 2;
                if let Some(slot_new) =
                    mem.feet.get(slot_old).and_then(|&j| layout.slot_of(j))
                {
                    active.push((2 * c + 2 * slot_new + axis, side));
                }
            }
        }
        WarmStart { point: Some(point), active_set: active }
    }

    fn run(
        &mut self,
        state: &PlanarState,
        plan: &FootstepPlan,
        mode: Mode,
    ) -> Result<MpcIterationResult, ControllerError> {
        let config = &self.config;
        let params = &config.lip;
        let assembled = assemble(state, plan, config, mode)?;
        let current_zmp = Vector2::new(state.x.zmp_pos, state.y.zmp_pos);
        let mut warm = self.warm_start(&assembled.layout, plan);
        if let Some(point) = warm.point.as_mut() {
            clamp_final_input(point, &assembled, plan, current_zmp, params.sample_time);
        }
        let solution = solve_warm(&assembled.problem, &self.opts, &warm)?;

        let track = track_regions(
            &[state.time],
            plan,
            config.initial_other,
            config.tail_kind,
            params,
            config.control_horizon(),
            config.preview_horizon(),
            config.dz_x,
            config.dz_y,
        )?;
        let interval_x = track.x[0];
        let interval_y = track.y[0];
        let margin_x = feasibility_margin(decompose(state.x, params), &interval_x);
        let margin_y = feasibility_margin(decompose(state.y, params), &interval_y);

        let optimal = solution.status == QpStatus::Optimal;
        let first_inputs = if optimal {
            (solution.primal[assembled.layout.col_ux(0)], solution.primal[assembled.layout.col_uy(0)])
        } else {
            (0.0, 0.0)
        };

        let end = if optimal {
            PlanarState {
                x: step_exact(state.x, first_inputs.0, params),
                y: step_exact(state.y, first_inputs.1, params),
                time: state.time + params.sample_time,
            }
        } else {
            *state
        };

        let planned_footsteps = assembled
            .layout
            .feet
            .iter()
            .enumerate()
            .map(|(slot, &j)| PlannedFootstep {
                index: j,
                position: if optimal && !assembled.layout.footsteps_fixed {
                    Vector2::new(
                        solution.primal[assembled.layout.col_fx(slot)],
                        solution.primal[assembled.layout.col_fy(slot)],
                    )
                } else {
                    plan.poses[j].position()
                },
            })
            .collect();

        if optimal {
            self.warm = Some(WarmMemory {
                solution: solution.primal.clone(),
                active: solution.active_set.clone(),
                feet: assembled.layout.feet.clone(),
            });
        }

        Ok(MpcIterationResult {
            first_inputs,
            planned_footsteps,
            com_segment: ComSegment { start: *state, end, inputs: first_inputs },
            qp_status: solution.status,
            diagnostics: MpcDiagnostics {
                objective: solution.objective,
                active_rows: solution.active_set.len(),
                qp_iterations: solution.iterations,
                decision_feet: assembled.layout.feet.len(),
                interval_x,
                interval_y,
                margin_x,
                margin_y,
            },
        })
    }
}

/// One-shot iteration without warm-start memory.
pub fn iterate(
    state: &PlanarState,
    plan: &FootstepPlan,
    config: &MpcConfig,
) -> Result<MpcIterationResult, ControllerError> {
    IsMpcController::new(config.clone())?.iterate(state, plan)
}

/// One-shot standard-MPC baseline iteration.
pub fn iterate_standard_mpc(
    state: &PlanarState,
    plan: &FootstepPlan,
    config: &MpcConfig,
) -> Result<MpcIterationResult, ControllerError> {
    IsMpcController::new(config.clone())?.iterate_standard(state, plan)
}
