//! Scenario definitions, the closed-loop gait runner, and CSV run logs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use nalgebra::Vector2;
use thiserror::Error;

use crate::controller::{ControllerError, IsMpcController, MpcConfig, MpcIterationResult};
use crate::footstep::{
    generate_plan, CruiseParams, FootstepError, FootstepPlan, KinematicLimits, Pose,
    ReferenceVelocity, Side, VelocityProfile,
};
use crate::lip::{LipError, LipParams, PlanarState};
use crate::qp::QpStatus;
use crate::tails::{TailKind, TailResidual};
use crate::timeline::{GaitTimeline, SupportPhase};

/// CoM drifting this far from the ZMP on either axis marks the run divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Lip(#[from] LipError),
    #[error(transparent)]
    Footstep(#[from] FootstepError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    IsMpc,
    StandardMpc,
    StandardMpcZmpCentering,
}

/// A complete, self-contained description of one closed-loop run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    /// Piecewise-constant reference velocities as (start time, value).
    pub velocity_schedule: Vec<(f64, ReferenceVelocity)>,
    pub lip: LipParams,
    pub horizon_c: usize,
    pub preview_p: usize,
    pub dz_x: f64,
    pub dz_y: f64,
    pub beta: f64,
    pub zmp_centering_weight: f64,
    pub footsteps_fixed: bool,
    pub limits: KinematicLimits,
    pub cruise: CruiseParams,
    pub controller: ControllerKind,
    pub tail: TailKind,
    pub ss_fraction: f64,
    /// Start of the first single support for generated plans; the robot
    /// stands on both feet until then.
    pub first_step_time: f64,
    /// Explicit footstep plan; set for runs that skip footstep generation.
    pub fixed_footsteps: Option<FootstepPlan>,
    /// The non-support foot of the initial double-support stance.
    pub initial_other: Option<Pose>,
    /// Reserved for future randomized scenarios; the deterministic pipeline
    /// does not consume it.
    pub rng_seed: u64,
}

impl Scenario {
    /// Walking defaults; builtins and config files override from here.
    pub fn base(name: &str) -> Self {
        Scenario {
            name: name.to_string(),
            duration: 10.0,
            velocity_schedule: vec![(0.0, ReferenceVelocity::ZERO)],
            lip: LipParams::new(9.81, 0.78, 0.01).expect("default lip parameters"),
            horizon_c: 100,
            preview_p: 100,
            dz_x: 0.04,
            dz_y: 0.04,
            beta: 1e4,
            zmp_centering_weight: 0.0,
            footsteps_fixed: false,
            limits: KinematicLimits::new(std::f64::consts::FRAC_PI_8, 0.18, 0.3, 0.07)
                .expect("default kinematic limits"),
            cruise: CruiseParams::new(0.15, 0.8, 0.12, 0.1).expect("default cruise parameters"),
            controller: ControllerKind::IsMpc,
            tail: TailKind::Periodic,
            ss_fraction: 0.8,
            first_step_time: 0.8,
            fixed_footsteps: None,
            initial_other: None,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::Config(msg));
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if self.velocity_schedule.is_empty() {
            return bad("velocity schedule is empty".into());
        }
        for (i, &(t, _)) in self.velocity_schedule.iter().enumerate() {
            if !t.is_finite() || t < 0.0 || t >= self.duration {
                return bad(format!("velocity start time {t} outside [0, {})", self.duration));
            }
            if i > 0 && t <= self.velocity_schedule[i - 1].0 {
                return bad("velocity start times must strictly increase".into());
            }
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.zmp_centering_weight.is_finite() && self.zmp_centering_weight >= 0.0) {
            return bad(format!(
                "zmp_centering_weight must be nonnegative, got {}",
                self.zmp_centering_weight
            ));
        }
        if self.controller == ControllerKind::StandardMpcZmpCentering
            && self.zmp_centering_weight <= 0.0
        {
            return bad("standard_zmp_centering needs a positive zmp_centering_weight".into());
        }
        if !(self.ss_fraction > 0.0 && self.ss_fraction <= 1.0) {
            return bad(format!("ss_fraction must lie in (0, 1], got {}", self.ss_fraction));
        }
        if let Some(plan) = &self.fixed_footsteps {
            let f = plan.len();
            if f == 0 {
                return bad("fixed footstep list is empty".into());
            }
            if plan.sides.len() != f || plan.timestamps.len() != f {
                return bad("fixed footstep arrays disagree in length".into());
            }
            if plan.durations.len() + 1 != f {
                return bad("fixed footstep durations must have one entry per interval".into());
            }
            for j in 1..f {
                if plan.timestamps[j] <= plan.timestamps[j - 1] {
                    return bad("fixed footstep timestamps must strictly increase".into());
                }
                if plan.sides[j] == plan.sides[j - 1] {
                    return bad(format!("fixed footsteps must alternate sides (index {j})"));
                }
                let gap = plan.timestamps[j] - plan.timestamps[j - 1];
                if (gap - plan.durations[j - 1]).abs() > 1e-9 {
                    return bad(format!("footstep duration {} disagrees with timestamps", j - 1));
                }
            }
        } else if !(self.first_step_time.is_finite() && self.first_step_time >= 0.0) {
            return bad(format!(
                "first_step_time must be nonnegative, got {}",
                self.first_step_time
            ));
        }
        Ok(())
    }

    /// The plan the controller runs against plus the effective initial
    /// non-support foot.
    fn build_plan(&self) -> Result<(FootstepPlan, Option<Pose>), ScenarioError> {
        if let Some(plan) = &self.fixed_footsteps {
            return Ok((plan.clone(), self.initial_other));
        }
        let profile = VelocityProfile::new(self.velocity_schedule.clone())?;
        let half = self.limits.ell / 2.0;
        let start_foot = Pose { x: 0.0, y: half, theta: 0.0 };
        let template_start = Pose { x: 0.0, y: 0.0, theta: 0.0 };
        let preview_end =
            self.duration + self.preview_p as f64 * self.lip.sample_time + 1.0;
        let plan = generate_plan(
            &profile,
            template_start,
            start_foot,
            Side::Left,
            self.first_step_time,
            preview_end,
            &self.cruise,
            &self.limits,
            self.ss_fraction,
        )?;
        let other = self
            .initial_other
            .or(Some(Pose { x: 0.0, y: -half, theta: 0.0 }));
        Ok((plan, other))
    }

    fn mpc_config(&self, initial_other: Option<Pose>) -> Result<MpcConfig, ScenarioError> {
        let mut config = MpcConfig::new(
            self.lip,
            self.horizon_c,
            self.preview_p,
            self.dz_x,
            self.dz_y,
            self.limits,
            self.tail,
        )?;
        config.beta = self.beta;
        config.footsteps_fixed = self.footsteps_fixed;
        config.zmp_centering_weight = match self.controller {
            ControllerKind::StandardMpcZmpCentering => self.zmp_centering_weight,
            _ => 0.0,
        };
        config.initial_other = initial_other;
        Ok(config)
    }
}

const BUILTIN_NAMES: [&str; 13] = [
    "sim1_ismpc",
    "sim1_standard",
    "sim2_ismpc",
    "sim2_standard",
    "sim2_standard_centering",
    "sim3_truncated",
    "sim3_periodic",
    "sim4_periodic",
    "sim4_anticipative",
    "highcom_ismpc",
    "highcom_standard",
    "sim5_speedup",
    "sim6_cusp",
];

pub fn list_builtins() -> &'static [&'static str] {
    &BUILTIN_NAMES
}

/// Evenly spaced fixed plan, left foot first, straight ahead.
fn regular_fixed_plan(steps: usize, stride: f64, half_spacing: f64, ss_fraction: f64) -> FootstepPlan {
    let step_duration = 0.5;
    let mut poses = Vec::with_capacity(steps);
    let mut sides = Vec::with_capacity(steps);
    let mut timestamps = Vec::with_capacity(steps);
    for j in 0..steps {
        poses.push(Pose {
            x: stride * j as f64,
            y: if j % 2 == 0 { half_spacing } else { -half_spacing },
            theta: 0.0,
        });
        sides.push(if j % 2 == 0 { Side::Left } else { Side::Right });
        timestamps.push(0.5 + step_duration * j as f64);
    }
    FootstepPlan {
        poses,
        sides,
        timestamps,
        durations: vec![step_duration; steps - 1],
        ss_fraction,
    }
}

/// Two steps forward, two steps back onto the same spots, repeating.
fn forward_backward_plan(steps: usize, stride: f64, half_spacing: f64, ss_fraction: f64) -> FootstepPlan {
    let mut plan = regular_fixed_plan(steps, stride, half_spacing, ss_fraction);
    for (j, pose) in plan.poses.iter_mut().enumerate() {
        let tri = match j % 4 {
            0 => 0.0,
            1 => 1.0,
            2 => 2.0,
            _ => 1.0,
        };
        pose.x = stride * tri;
    }
    plan
}

pub fn builtin_scenario(name: &str) -> Option<Scenario> {
    let mut s = Scenario::base(name);
    let mirror = Pose { x: 0.0, y: -0.09, theta: 0.0 };
    match name {
        "sim1_ismpc" | "sim1_standard" | "sim2_ismpc" | "sim2_standard"
        | "sim2_standard_centering" | "highcom_ismpc" | "highcom_standard" => {
            let c = if name.starts_with("sim2") { 100 } else { 150 };
            s.horizon_c = c;
            s.preview_p = c;
            s.fixed_footsteps = Some(regular_fixed_plan(24, 0.03, 0.09, 0.8));
            s.footsteps_fixed = true;
            s.initial_other = Some(mirror);
            if name.starts_with("highcom") {
                s.lip = LipParams::new(9.81, 1.6, 0.01).expect("high CoM lip parameters");
            }
            if name.ends_with("standard") {
                s.controller = ControllerKind::StandardMpc;
            }
            if name.ends_with("centering") {
                s.controller = ControllerKind::StandardMpcZmpCentering;
                s.zmp_centering_weight = 1e4;
            }
        }
        "sim3_truncated" | "sim3_periodic" => {
            s.horizon_c = 80;
            s.preview_p = 160;
            s.tail = if name.ends_with("truncated") {
                TailKind::Truncated
            } else {
                TailKind::Periodic
            };
            s.fixed_footsteps = Some(regular_fixed_plan(24, 0.15, 0.09, 0.8));
            s.footsteps_fixed = true;
            s.initial_other = Some(mirror);
        }
        "sim4_periodic" | "sim4_anticipative" => {
            s.horizon_c = 80;
            s.preview_p = 160;
            s.tail = if name.ends_with("periodic") {
                TailKind::Periodic
            } else {
                TailKind::Anticipative { residual: TailResidual::Truncated }
            };
            s.fixed_footsteps = Some(forward_backward_plan(24, 0.15, 0.09, 0.8));
            s.footsteps_fixed = true;
            s.initial_other = Some(mirror);
        }
        "sim5_speedup" => {
            s.duration = 12.0;
            s.horizon_c = 160;
            s.preview_p = 320;
            s.tail = TailKind::Anticipative { residual: TailResidual::Truncated };
            s.ss_fraction = 0.6;
            s.velocity_schedule = vec![
                (0.0, ReferenceVelocity { vx: 0.1, vy: 0.0, omega: 0.0 }),
                (6.0, ReferenceVelocity { vx: 0.3, vy: 0.0, omega: 0.0 }),
            ];
        }
        "sim6_cusp" => {
            s.duration = 20.0;
            s.horizon_c = 160;
            s.preview_p = 320;
            s.tail = TailKind::Anticipative { residual: TailResidual::Truncated };
            s.ss_fraction = 0.6;
            let quarter_turn = std::f64::consts::FRAC_PI_2 / 0.2;
            s.velocity_schedule = vec![
                (0.0, ReferenceVelocity { vx: 0.2, vy: 0.0, omega: 0.2 }),
                (quarter_turn, ReferenceVelocity { vx: -0.2, vy: 0.0, omega: 0.2 }),
                (2.0 * quarter_turn, ReferenceVelocity { vx: -0.2, vy: 0.0, omega: 0.0 }),
            ];
        }
        _ => return None,
    }
    Some(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseTag {
    InitialStand,
    Single,
    Double,
    FinalStand,
}

impl PhaseTag {
    fn from_phase(phase: &SupportPhase) -> Self {
        match phase {
            SupportPhase::InitialStand => PhaseTag::InitialStand,
            SupportPhase::Single { .. } => PhaseTag::Single,
            SupportPhase::Double { .. } => PhaseTag::Double,
            SupportPhase::FinalStand => PhaseTag::FinalStand,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            PhaseTag::InitialStand => "InitialStand",
            PhaseTag::Single => "Single",
            PhaseTag::Double => "Double",
            PhaseTag::FinalStand => "FinalStand",
        }
    }

    fn parse(text: &str) -> Option<Self> {
        match text {
            "InitialStand" => Some(PhaseTag::InitialStand),
            "Single" => Some(PhaseTag::Single),
            "Double" => Some(PhaseTag::Double),
            "FinalStand" => Some(PhaseTag::FinalStand),
            _ => None,
        }
    }
}

fn status_str(status: QpStatus) -> &'static str {
    match status {
        QpStatus::Optimal => "Optimal",
        QpStatus::Infeasible => "Infeasible",
        QpStatus::MaxIterations => "MaxIterations",
    }
}

fn parse_status(text: &str) -> Option<QpStatus> {
    match text {
        "Optimal" => Some(QpStatus::Optimal),
        "Infeasible" => Some(QpStatus::Infeasible),
        "MaxIterations" => Some(QpStatus::MaxIterations),
        _ => None,
    }
}

/// One logged sample: state at the solve instant plus that solve's outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRecord {
    pub t: f64,
    pub xc: f64,
    pub yc: f64,
    pub dxc: f64,
    pub dyc: f64,
    pub xz: f64,
    pub yz: f64,
    pub xu: f64,
    pub yu: f64,
    pub xu_min: f64,
    pub xu_max: f64,
    pub yu_min: f64,
    pub yu_max: f64,
    pub margin_x: f64,
    pub margin_y: f64,
    pub qp_status: QpStatus,
    pub support_phase: PhaseTag,
    pub active_footstep_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunExit {
    Completed,
    Infeasible { time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Stable,
    Divergent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub name: String,
    pub delta: f64,
    pub records: Vec<RunRecord>,
    pub exit: RunExit,
    pub first_divergence: Option<f64>,
}

impl RunLog {
    /// Derive exit reason and divergence stamp from bare records.
    pub fn from_records(name: &str, delta: f64, records: Vec<RunRecord>) -> Self {
        let exit = match records.last() {
            Some(r) if r.qp_status != QpStatus::Optimal => RunExit::Infeasible { time: r.t },
            _ => RunExit::Completed,
        };
        let first_divergence = records
            .iter()
            .find(|r| {
                (r.xc - r.xz).abs() > DIVERGENCE_THRESHOLD
                    || (r.yc - r.yz).abs() > DIVERGENCE_THRESHOLD
            })
            .map(|r| r.t);
        RunLog { name: name.to_string(), delta, records, exit, first_divergence }
    }

    pub fn verdict(&self) -> Verdict {
        if self.first_divergence.is_some() {
            Verdict::Divergent
        } else {
            Verdict::Stable
        }
    }
}

fn make_record(
    t: f64,
    state: &PlanarState,
    result: &MpcIterationResult,
    plan: &FootstepPlan,
    initial_other: Option<Pose>,
    dz_x: f64,
    dz_y: f64,
    eta: f64,
) -> RunRecord {
    let timeline = GaitTimeline::new(plan, initial_other, dz_x, dz_y);
    let d = &result.diagnostics;
    RunRecord {
        t,
        xc: state.x.com_pos,
        yc: state.y.com_pos,
        dxc: state.x.com_vel,
        dyc: state.y.com_vel,
        xz: state.x.zmp_pos,
        yz: state.y.zmp_pos,
        xu: state.x.com_pos + state.x.com_vel / eta,
        yu: state.y.com_pos + state.y.com_vel / eta,
        xu_min: d.interval_x.lower,
        xu_max: d.interval_x.upper,
        yu_min: d.interval_y.lower,
        yu_max: d.interval_y.upper,
        margin_x: d.margin_x,
        margin_y: d.margin_y,
        qp_status: result.qp_status,
        support_phase: PhaseTag::from_phase(&timeline.phase_at(t)),
        active_footstep_index: plan.interval_at(t),
    }
}

/// Run the closed loop until the duration elapses or a solve fails.
///
/// Footstep bookkeeping: while a step is in flight the plan keeps the
/// candidate as the tracking target; the last planned position is committed
/// into the plan when the step lands.
pub fn run_scenario(s: &Scenario) -> Result<RunLog, ScenarioError> {
    s.validate()?;
    let (mut plan, initial_other) = s.build_plan()?;
    let config = s.mpc_config(initial_other)?;
    let mut controller = IsMpcController::new(config)?;
    let delta = s.lip.sample_time;
    let eta = s.lip.eta();
    let steps = (s.duration / delta).round() as usize;

    let mut state = PlanarState::default();
    let mut in_flight: HashMap<usize, Vector2<f64>> = HashMap::new();
    let mut records = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = k as f64 * delta;
        let landed: Vec<usize> = in_flight
            .keys()
            .copied()
            .filter(|&j| plan.timestamps[j] - plan.ds_duration(j - 1) <= t + 1e-9)
            .collect();
        for j in landed {
            let p = in_flight.remove(&j).unwrap();
            plan.poses[j].x = p.x;
            plan.poses[j].y = p.y;
        }

        let result = match s.controller {
            ControllerKind::IsMpc => controller.iterate(&state, &plan)?,
            _ => controller.iterate_standard(&state, &plan)?,
        };
        records.push(make_record(t, &state, &result, &plan, initial_other, s.dz_x, s.dz_y, eta));
        if result.qp_status != QpStatus::Optimal {
            break;
        }
        if !s.footsteps_fixed {
            for f in &result.planned_footsteps {
                in_flight.insert(f.index, f.position);
            }
        }
        state = result.com_segment.end;
        state.time = (k + 1) as f64 * delta;
    }
    Ok(RunLog::from_records(&s.name, delta, records))
}

pub const CSV_HEADER: &str = "t,xc,yc,dxc,dyc,xz,yz,xu,yu,xu_min,xu_max,yu_min,yu_max,margin_x,margin_y,qp_status,support_phase,active_footstep_index";

pub fn render_csv(log: &RunLog) -> String {
    use std::fmt::Write;
    let mut out = String::with_capacity(64 + log.records.len() * 400);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &log.records {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{}",
            r.t,
            r.xc,
            r.yc,
            r.dxc,
            r.dyc,
            r.xz,
            r.yz,
            r.xu,
            r.yu,
            r.xu_min,
            r.xu_max,
            r.yu_min,
            r.yu_max,
            r.margin_x,
            r.margin_y,
            status_str(r.qp_status),
            r.support_phase.as_str(),
            r.active_footstep_index,
        )
        .expect("string write");
    }
    out
}

pub fn emit_csv(log: &RunLog, path: &Path) -> Result<(), ScenarioError> {
    if log.records.is_empty() {
        return Err(ScenarioError::Config("refusing to emit an empty run log".into()));
    }
    fs::write(path, render_csv(log))
        .map_err(|e| ScenarioError::Io { path: path.display().to_string(), source: e })
}

pub fn parse_csv(name: &str, text: &str) -> Result<RunLog, ScenarioError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| ScenarioError::Config("empty csv".into()))?;
    if header.trim() != CSV_HEADER {
        return Err(ScenarioError::Config("unrecognized csv header".into()));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 18 {
            return Err(ScenarioError::Config(format!(
                "line {lineno}: expected 18 columns, got {}",
                fields.len()
            )));
        }
        let num = |idx: usize| -> Result<f64, ScenarioError> {
            fields[idx].trim().parse::<f64>().map_err(|_| {
                ScenarioError::Config(format!("line {lineno}: bad number {:?}", fields[idx]))
            })
        };
        records.push(RunRecord {
            t: num(0)?,
            xc: num(1)?,
            yc: num(2)?,
            dxc: num(3)?,
            dyc: num(4)?,
            xz: num(5)?,
            yz: num(6)?,
            xu: num(7)?,
            yu: num(8)?,
            xu_min: num(9)?,
            xu_max: num(10)?,
            yu_min: num(11)?,
            yu_max: num(12)?,
            margin_x: num(13)?,
            margin_y: num(14)?,
            qp_status: parse_status(fields[15].trim()).ok_or_else(|| {
                ScenarioError::Config(format!("line {lineno}: bad qp status {:?}", fields[15]))
            })?,
            support_phase: PhaseTag::parse(fields[16].trim()).ok_or_else(|| {
                ScenarioError::Config(format!("line {lineno}: bad phase {:?}", fields[16]))
            })?,
            active_footstep_index: fields[17].trim().parse::<usize>().map_err(|_| {
                ScenarioError::Config(format!("line {lineno}: bad index {:?}", fields[17]))
            })?,
        });
    }
    let delta = if records.len() >= 2 { records[1].t - records[0].t } else { 0.0 };
    Ok(RunLog::from_records(name, delta, records))
}

pub fn load_csv(path: &Path) -> Result<RunLog, ScenarioError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io { path: path.display().to_string(), source: e })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    parse_csv(&name, &text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub samples: usize,
    /// True when the logs had different lengths and were truncated to match.
    pub truncated: bool,
    pub max_com_delta: f64,
    pub max_zmp_delta: f64,
    /// First (index, time) where either delta exceeds the threshold.
    pub first_exceeding: Option<(usize, f64)>,
    pub verdict_a: Verdict,
    pub verdict_b: Verdict,
}

pub fn compare_runs(a: &RunLog, b: &RunLog, threshold: f64) -> Result<CompareReport, ScenarioError> {
    if (a.delta - b.delta).abs() > 1e-12 {
        return Err(ScenarioError::Config(format!(
            "sample times differ: {} vs {}",
            a.delta, b.delta
        )));
    }
    let samples = a.records.len().min(b.records.len());
    let truncated = a.records.len() != b.records.len();
    let mut max_com_delta = 0.0f64;
    let mut max_zmp_delta = 0.0f64;
    let mut first_exceeding = None;
    for i in 0..samples {
        let (ra, rb) = (&a.records[i], &b.records[i]);
        let dcom = ((ra.xc - rb.xc).powi(2) + (ra.yc - rb.yc).powi(2)).sqrt();
        let dzmp = ((ra.xz - rb.xz).powi(2) + (ra.yz - rb.yz).powi(2)).sqrt();
        max_com_delta = max_com_delta.max(dcom);
        max_zmp_delta = max_zmp_delta.max(dzmp);
        if first_exceeding.is_none() && (dcom > threshold || dzmp > threshold) {
            first_exceeding = Some((i, ra.t));
        }
    }
    Ok(CompareReport {
        samples,
        truncated,
        max_com_delta,
        max_zmp_delta,
        first_exceeding,
        verdict_a: a.verdict(),
        verdict_b: b.verdict(),
    })
}

fn parse_float(key: &str, value: &str) -> Result<f64, ScenarioError> {
    value
        .parse::<f64>()
        .map_err(|_| ScenarioError::Config(format!("{key}: bad number {value:?}")))
}

fn parse_int(key: &str, value: &str) -> Result<u64, ScenarioError> {
    value
        .parse::<u64>()
        .map_err(|_| ScenarioError::Config(format!("{key}: bad integer {value:?}")))
}

fn parse_flag(key: &str, value: &str) -> Result<bool, ScenarioError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ScenarioError::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_floats<const N: usize>(key: &str, value: &str) -> Result<[f64; N], ScenarioError> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != N {
        return Err(ScenarioError::Config(format!(
            "{key}: expected {N} fields, got {}",
            parts.len()
        )));
    }
    let mut out = [0.0; N];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = parse_float(key, part)?;
    }
    Ok(out)
}

/// Parse the line-oriented `section.key = value` scenario format.
///
/// Unknown and duplicate keys are errors; the grammar is documented in the
/// project README.
pub fn parse_config(text: &str) -> Result<Scenario, ScenarioError> {
    let mut s = Scenario::base("unnamed");
    let base = Scenario::base("unnamed");
    let (mut gravity, mut com_height, mut sample_time) =
        (base.lip.gravity, base.lip.com_height, base.lip.sample_time);
    let (mut theta_max, mut ell, mut da_x, mut da_y) = (
        base.limits.theta_max,
        base.limits.ell,
        base.limits.da_x,
        base.limits.da_y,
    );
    let (mut v_bar, mut ts_bar, mut ls_bar, mut alpha) = (
        base.cruise.v_bar,
        base.cruise.ts_bar,
        base.cruise.ls_bar,
        base.cruise.alpha,
    );
    let mut velocity: BTreeMap<usize, (f64, ReferenceVelocity)> = BTreeMap::new();
    let mut feet: BTreeMap<usize, (Pose, f64, Side)> = BTreeMap::new();
    let mut seen: HashSet<String> = HashSet::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ScenarioError::Config(format!("line {lineno}: expected `key = value`"))
        })?;
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(ScenarioError::Config(format!("line {lineno}: duplicate key {key}")));
        }
        match key {
            "scenario.name" => s.name = value.to_string(),
            "scenario.duration" => s.duration = parse_float(key, value)?,
            "scenario.controller" => {
                s.controller = match value {
                    "ismpc" => ControllerKind::IsMpc,
                    "standard" => ControllerKind::StandardMpc,
                    "standard_zmp_centering" => ControllerKind::StandardMpcZmpCentering,
                    _ => {
                        return Err(ScenarioError::Config(format!(
                            "{key}: unknown controller {value:?}"
                        )))
                    }
                }
            }
            "scenario.tail" => {
                s.tail = match value {
                    "truncated" => TailKind::Truncated,
                    "periodic" => TailKind::Periodic,
                    "anticipative" => TailKind::Anticipative { residual: TailResidual::Truncated },
                    "anticipative_periodic" => {
                        TailKind::Anticipative { residual: TailResidual::Periodic }
                    }
                    _ => return Err(ScenarioError::Config(format!("{key}: unknown tail {value:?}"))),
                }
            }
            "scenario.rng_seed" => s.rng_seed = parse_int(key, value)?,
            "lip.gravity" => gravity = parse_float(key, value)?,
            "lip.com_height" => com_height = parse_float(key, value)?,
            "lip.sample_time" => sample_time = parse_float(key, value)?,
            "mpc.horizon_samples" => s.horizon_c = parse_int(key, value)? as usize,
            "mpc.preview_samples" => s.preview_p = parse_int(key, value)? as usize,
            "mpc.dz_x" => s.dz_x = parse_float(key, value)?,
            "mpc.dz_y" => s.dz_y = parse_float(key, value)?,
            "mpc.beta" => s.beta = parse_float(key, value)?,
            "mpc.footsteps_fixed" => s.footsteps_fixed = parse_flag(key, value)?,
            "mpc.zmp_centering_weight" => s.zmp_centering_weight = parse_float(key, value)?,
            "limits.theta_max" => theta_max = parse_float(key, value)?,
            "limits.ell" => ell = parse_float(key, value)?,
            "limits.da_x" => da_x = parse_float(key, value)?,
            "limits.da_y" => da_y = parse_float(key, value)?,
            "cruise.v_bar" => v_bar = parse_float(key, value)?,
            "cruise.ts_bar" => ts_bar = parse_float(key, value)?,
            "cruise.ls_bar" => ls_bar = parse_float(key, value)?,
            "cruise.alpha" => alpha = parse_float(key, value)?,
            "gait.ss_fraction" => s.ss_fraction = parse_float(key, value)?,
            "gait.first_step_time" => s.first_step_time = parse_float(key, value)?,
            "footsteps.initial_other" => {
                let [x, y, theta] = parse_floats::<3>(key, value)?;
                s.initial_other = Some(Pose { x, y, theta });
            }
            _ => {
                if let Some(rest) = key.strip_prefix("velocity.") {
                    let idx = rest.parse::<usize>().map_err(|_| {
                        ScenarioError::Config(format!("line {lineno}: bad velocity index {rest:?}"))
                    })?;
                    let [start, vx, vy, omega] = parse_floats::<4>(key, value)?;
                    velocity.insert(idx, (start, ReferenceVelocity { vx, vy, omega }));
                } else if let Some(rest) = key.strip_prefix("footsteps.") {
                    let idx = rest.parse::<usize>().map_err(|_| {
                        ScenarioError::Config(format!("line {lineno}: bad footstep index {rest:?}"))
                    })?;
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    if parts.len() != 5 {
                        return Err(ScenarioError::Config(format!(
                            "{key}: expected `x y theta timestamp side`, got {value:?}"
                        )));
                    }
                    let x = parse_float(key, parts[0])?;
                    let y = parse_float(key, parts[1])?;
                    let theta = parse_float(key, parts[2])?;
                    let timestamp = parse_float(key, parts[3])?;
                    let side = match parts[4] {
                        "L" => Side::Left,
                        "R" => Side::Right,
                        _ => {
                            return Err(ScenarioError::Config(format!(
                                "{key}: side must be L or R, got {:?}",
                                parts[4]
                            )))
                        }
                    };
                    feet.insert(idx, (Pose { x, y, theta }, timestamp, side));
                } else {
                    return Err(ScenarioError::Config(format!("line {lineno}: unknown key {key}")));
                }
            }
        }
    }

    s.lip = LipParams::new(gravity, com_height, sample_time)?;
    s.limits = KinematicLimits::new(theta_max, ell, da_x, da_y)?;
    s.cruise = CruiseParams::new(v_bar, ts_bar, ls_bar, alpha)?;

    if !velocity.is_empty() {
        for (expected, &actual) in velocity.keys().enumerate() {
            if actual != expected {
                return Err(ScenarioError::Config(format!(
                    "velocity indices must be consecutive from 0, missing {expected}"
                )));
            }
        }
        s.velocity_schedule = velocity.into_values().collect();
    }
    if !feet.is_empty() {
        for (expected, &actual) in feet.keys().enumerate() {
            if actual != expected {
                return Err(ScenarioError::Config(format!(
                    "footstep indices must be consecutive from 0, missing {expected}"
                )));
            }
        }
        let entries: Vec<(Pose, f64, Side)> = feet.into_values().collect();
        let poses: Vec<Pose> = entries.iter().map(|e| e.0).collect();
        let timestamps: Vec<f64> = entries.iter().map(|e| e.1).collect();
        let sides: Vec<Side> = entries.iter().map(|e| e.2).collect();
        let durations: Vec<f64> =
            timestamps.windows(2).map(|w| w[1] - w[0]).collect();
        s.fixed_footsteps = Some(FootstepPlan {
            poses,
            sides,
            timestamps,
            durations,
            ss_fraction: s.ss_fraction,
        });
    }

    s.validate()?;
    Ok(s)
}

pub fn load_config(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io { path: path.display().to_string(), source: e })?;
    parse_config(&text)
}
