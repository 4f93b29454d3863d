//! Stability constraint for the MPC horizon: the current unstable coordinate
//! must equal the exponentially weighted integral of the future ZMP, which
//! ties the in-horizon ZMP velocities to an anticipated tail. Three tails are
//! supported (truncated, periodic, anticipative), each with a closed-form
//! constraint row and an equivalent terminal condition.

use crate::footstep::{FootstepPlan, Pose};
use crate::lip::{DecomposedState, LipParams};
use crate::timeline::GaitTimeline;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TailError {
    #[error("periodic tail period {period} must equal the control horizon {horizon}")]
    PeriodMismatch { period: usize, horizon: usize },
    #[error("anticipative preview with a periodic residual must not be empty")]
    EmptyPreview,
    #[error("preview horizon P = {p} must exceed the control horizon C = {c}")]
    InvalidWindow { c: usize, p: usize },
    #[error("preview sample {index} is {value:e}, outside |v| <= {bound:e}")]
    SampleOutOfRange { index: usize, value: f64, bound: f64 },
    #[error("control horizon must be positive")]
    EmptyHorizon,
}

/// How the ZMP velocity is extended beyond the preview horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailResidual {
    /// Zero velocity after the preview.
    Truncated,
    /// The preview segment repeats forever.
    Periodic,
}

/// Anticipated ZMP velocity beyond the control horizon, per axis.
#[derive(Debug, Clone, PartialEq)]
pub enum Tail {
    /// Zero ZMP velocity after the horizon.
    Truncated,
    /// The in-horizon velocities repeat with the given period, which must
    /// equal the control horizon.
    Periodic { period_samples: usize },
    /// Known velocity samples for indices C..P (one per sample interval),
    /// extended by the residual.
    Anticipative { preview: Vec<f64>, residual: TailResidual },
}

impl Tail {
    /// Checks the tail against a control horizon and a velocity bound.
    pub fn validate(&self, horizon: usize, v_max: f64) -> Result<(), TailError> {
        if horizon == 0 {
            return Err(TailError::EmptyHorizon);
        }
        match self {
            Tail::Truncated => Ok(()),
            Tail::Periodic { period_samples } => {
                if *period_samples != horizon {
                    return Err(TailError::PeriodMismatch {
                        period: *period_samples,
                        horizon,
                    });
                }
                Ok(())
            }
            Tail::Anticipative { preview, residual } => {
                if *residual == TailResidual::Periodic && preview.is_empty() {
                    return Err(TailError::EmptyPreview);
                }
                for (index, &value) in preview.iter().enumerate() {
                    if !value.is_finite() || value.abs() > v_max + 1e-9 {
                        return Err(TailError::SampleOutOfRange { index, value, bound: v_max });
                    }
                }
                Ok(())
            }
        }
    }
}

/// One axis of the stability constraint, in the form
/// `sum_i coeffs[i] * u_i = rhs_state_gain * (xu - xz) + rhs_offset`
/// where `coeffs[i] = exp(-i * eta * delta)` for every tail.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityConstraintRow {
    pub coeffs: Vec<f64>,
    pub rhs_state_gain: f64,
    pub rhs_offset: f64,
}

impl StabilityConstraintRow {
    /// Numeric right-hand side for the current decomposed state.
    pub fn rhs(&self, current: DecomposedState) -> f64 {
        self.rhs_state_gain * (current.unstable - current.zmp_pos) + self.rhs_offset
    }
}

/// Builds the stability constraint row for a control horizon of `c` samples.
pub fn build_stability_row(
    tail: &Tail,
    params: &LipParams,
    c: usize,
) -> Result<StabilityConstraintRow, TailError> {
    tail.validate(c, f64::INFINITY)?;
    let eta = params.eta();
    let delta = params.sample_time;
    let lam = eta * delta;
    let coeffs: Vec<f64> = (0..c).map(|i| (-(i as f64) * lam).exp()).collect();
    let gain_truncated = eta / (1.0 - (-lam).exp());
    let (rhs_state_gain, rhs_offset) = match tail {
        Tail::Truncated => (gain_truncated, 0.0),
        Tail::Periodic { .. } => {
            (gain_truncated * (1.0 - (-(c as f64) * lam).exp()), 0.0)
        }
        Tail::Anticipative { preview, residual } => {
            let mut tail_sum = 0.0;
            for (j, &v) in preview.iter().enumerate() {
                tail_sum += (-((c + j) as f64) * lam).exp() * v;
            }
            if *residual == TailResidual::Periodic {
                let q = preview.len() as f64;
                tail_sum /= 1.0 - (-q * lam).exp();
            }
            (gain_truncated, -tail_sum)
        }
    };
    Ok(StabilityConstraintRow { coeffs, rhs_state_gain, rhs_offset })
}

/// The unstable-coordinate value at the end of the horizon that is equivalent
/// to the stability constraint: `xu at C = zmp_at_c + tail contribution`.
/// The periodic tail replicates the in-horizon inputs, so its terminal value
/// depends on the current unstable displacement.
pub fn terminal_constraint_value(
    tail: &Tail,
    params: &LipParams,
    zmp_at_c: f64,
    current: DecomposedState,
) -> Result<f64, TailError> {
    let eta = params.eta();
    let lam = eta * params.sample_time;
    let w = (1.0 - (-lam).exp()) / eta;
    match tail {
        Tail::Truncated => Ok(zmp_at_c),
        Tail::Periodic { .. } => Ok(zmp_at_c + (current.unstable - current.zmp_pos)),
        Tail::Anticipative { preview, residual } => {
            let mut s = 0.0;
            for (j, &v) in preview.iter().enumerate() {
                s += (-(j as f64) * lam).exp() * v;
            }
            match residual {
                TailResidual::Truncated => Ok(zmp_at_c + w * s),
                TailResidual::Periodic => {
                    if preview.is_empty() {
                        return Err(TailError::EmptyPreview);
                    }
                    let q = preview.len() as f64;
                    Ok(zmp_at_c + w * s / (1.0 - (-q * lam).exp()))
                }
            }
        }
    }
}

/// Per-axis anticipative velocity samples for indices C..P.
#[derive(Debug, Clone, PartialEq)]
pub struct PreviewSamples {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Tail selector; turned into concrete per-axis tails once a plan and a
/// current time are known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailKind {
    Truncated,
    Periodic,
    Anticipative { residual: TailResidual },
}

impl TailKind {
    /// Concrete tails for both axes at time `current_time`, with the
    /// anticipative preview drawn from the plan over sample window [c, p).
    pub fn build_axis_tails(
        self,
        plan: &FootstepPlan,
        initial_other: Option<Pose>,
        params: &LipParams,
        current_time: f64,
        c: usize,
        p: usize,
    ) -> Result<(Tail, Tail), TailError> {
        match self {
            TailKind::Truncated => Ok((Tail::Truncated, Tail::Truncated)),
            TailKind::Periodic => Ok((
                Tail::Periodic { period_samples: c },
                Tail::Periodic { period_samples: c },
            )),
            TailKind::Anticipative { residual } => {
                let preview =
                    build_anticipative_preview(plan, initial_other, params, current_time, c, p)?;
                Ok((
                    Tail::Anticipative { preview: preview.x, residual },
                    Tail::Anticipative { preview: preview.y, residual },
                ))
            }
        }
    }
}

/// Samples the derivative of the centered ZMP path of a candidate plan over
/// the window [C, P) of sample intervals past `current_time`. The path sits
/// at foot centers in single support and ramps linearly during transfers; a
/// plan that ends inside the window contributes zero velocity from its
/// terminal stance on.
pub fn build_anticipative_preview(
    plan: &FootstepPlan,
    initial_other: Option<Pose>,
    params: &LipParams,
    current_time: f64,
    c: usize,
    p: usize,
) -> Result<PreviewSamples, TailError> {
    if c == 0 {
        return Err(TailError::EmptyHorizon);
    }
    if p <= c {
        return Err(TailError::InvalidWindow { c, p });
    }
    let delta = params.sample_time;
    let timeline = GaitTimeline::new(plan, initial_other, 0.0, 0.0);
    let mut x = Vec::with_capacity(p - c);
    let mut y = Vec::with_capacity(p - c);
    for i in c..p {
        let t0 = current_time + i as f64 * delta;
        let t1 = current_time + (i + 1) as f64 * delta;
        let a = timeline.centered_path_at(t0);
        let b = timeline.centered_path_at(t1);
        x.push((b.x - a.x) / delta);
        y.push((b.y - a.y) / delta);
    }
    Ok(PreviewSamples { x, y })
}

/// Numerical check of the defining properties of the exponentially weighted
/// integral `eta * int_0^inf exp(-eta s) f(s) ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightingReport {
    pub linearity_error: f64,
    pub unit_step_error: f64,
    pub unit_ramp_error: f64,
    pub time_shift_error: f64,
    pub max_error: f64,
    pub pass: bool,
}

fn weighted_integral(f: &dyn Fn(f64) -> f64, eta: f64, breaks: &[f64], upto: f64) -> f64 {
    let mut bounds: Vec<f64> = Vec::with_capacity(breaks.len() + 2);
    bounds.push(0.0);
    for &b in breaks {
        if b > 0.0 && b < upto {
            bounds.push(b);
        }
    }
    bounds.push(upto);
    bounds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut total = 0.0;
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        let panels = 4000;
        let h = (b - a) / panels as f64;
        let g = |s: f64| eta * (-eta * s).exp() * f(s);
        let mut acc = g(a) + g(b);
        for k in 1..panels {
            let s = a + h * k as f64;
            acc += if k % 2 == 1 { 4.0 * g(s) } else { 2.0 * g(s) };
        }
        total += acc * h / 3.0;
    }
    total
}

pub fn verify_exponential_weighting_properties(params: &LipParams) -> WeightingReport {
    let eta = params.eta();
    let upto = 30.0 / eta;
    let shift = 0.5;

    let step = |_: f64| 1.0;
    let ramp = |s: f64| s;
    let shifted_ramp = move |s: f64| if s < shift { 0.0 } else { s - shift };

    let unit_step_error = (weighted_integral(&step, eta, &[], upto) - 1.0).abs();
    let unit_ramp_error = (weighted_integral(&ramp, eta, &[], upto) - 1.0 / eta).abs();
    let time_shift_error = (weighted_integral(&shifted_ramp, eta, &[shift], upto)
        - (-eta * shift).exp() / eta)
        .abs();

    let (a, b) = (0.7, -1.3);
    let combo = move |s: f64| a * step(s) + b * shifted_ramp(s);
    let linearity_error = (weighted_integral(&combo, eta, &[shift], upto)
        - (a * weighted_integral(&step, eta, &[], upto)
            + b * weighted_integral(&shifted_ramp, eta, &[shift], upto)))
    .abs();

    let max_error = unit_step_error
        .max(unit_ramp_error)
        .max(time_shift_error)
        .max(linearity_error);
    WeightingReport {
        linearity_error,
        unit_step_error,
        unit_ramp_error,
        time_shift_error,
        max_error,
        pass: max_error < 1e-6,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::footstep::Side;
    use crate::qp::{solve, QpProblem, QpStatus, SolveOptions};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> LipParams {
        LipParams::new(9.81, 0.78, 0.01).unwrap()
    }

    fn state(unstable: f64, zmp: f64) -> DecomposedState {
        DecomposedState { stable: 0.0, unstable, zmp_pos: zmp }
    }

    #[test]
    fn truncated_gain_reference() {
        let p = params();
        let row = build_stability_row(&Tail::Truncated, &p, 100).unwrap();
        let eta = p.eta();
        let expected = eta / (1.0 - (-eta * p.sample_time).exp());
        assert!((row.rhs_state_gain - expected).abs() < 1e-12);
        assert!((row.rhs_state_gain - 101.785).abs() < 2e-3);
        assert_eq!(row.rhs_offset, 0.0);
        assert_eq!(row.coeffs.len(), 100);
        assert_eq!(row.coeffs[0], 1.0);
        for (i, &c) in row.coeffs.iter().enumerate() {
            let exact = (-(i as f64) * eta * p.sample_time).exp();
            assert!((c - exact).abs() < 1e-15);
        }
    }

    #[test]
    fn periodic_gain_reference() {
        let p = params();
        let row = build_stability_row(&Tail::Periodic { period_samples: 100 }, &p, 100).unwrap();
        let eta = p.eta();
        let lam = eta * p.sample_time;
        let expected = eta / (1.0 - (-lam).exp()) * (1.0 - (-100.0 * lam).exp());
        assert!((row.rhs_state_gain - expected).abs() < 1e-12);
        assert!((row.rhs_state_gain - 98.8494).abs() < 1e-3);
        assert_eq!(row.rhs_offset, 0.0);
    }

    #[test]
    fn periodic_period_must_match_horizon() {
        let p = params();
        let err = build_stability_row(&Tail::Periodic { period_samples: 80 }, &p, 100);
        assert_eq!(err, Err(TailError::PeriodMismatch { period: 80, horizon: 100 }));
    }

    #[test]
    fn periodic_row_matches_many_period_truncation() {
        let p = params();
        let eta = p.eta();
        let lam = eta * p.sample_time;
        let c = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let u: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();

        // Fix the state so that the infinite periodic extension of u exactly
        // satisfies the stability condition, then the closed-form row must
        // hold for that state.
        let w = (1.0 - (-lam).exp()) / eta;
        let mut infinite_sum = 0.0;
        for period in 0..50 {
            for (i, &ui) in u.iter().enumerate() {
                let idx = period * c + i;
                infinite_sum += (-(idx as f64) * lam).exp() * ui;
            }
        }
        let displacement = w * infinite_sum;

        let row = build_stability_row(&Tail::Periodic { period_samples: c }, &p, c).unwrap();
        let lhs: f64 = row.coeffs.iter().zip(&u).map(|(a, b)| a * b).sum();
        let rhs = row.rhs(state(displacement, 0.0));
        assert!((lhs - rhs).abs() < 1e-10, "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn anticipative_with_zero_preview_degenerates_to_truncated() {
        let p = params();
        let tail = Tail::Anticipative { preview: vec![0.0; 30], residual: TailResidual::Truncated };
        let a = build_stability_row(&tail, &p, 50).unwrap();
        let t = build_stability_row(&Tail::Truncated, &p, 50).unwrap();
        assert_eq!(a, t);
    }

    #[test]
    fn anticipative_offset_matches_direct_sum() {
        let p = params();
        let eta = p.eta();
        let lam = eta * p.sample_time;
        let c = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let preview: Vec<f64> = (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let tail = Tail::Anticipative { preview: preview.clone(), residual: TailResidual::Truncated };
        let row = build_stability_row(&tail, &p, c).unwrap();
        let r = (-lam).exp();
        let mut direct = 0.0;
        for (j, &v) in preview.iter().enumerate() {
            direct -= r.powi((c + j) as i32) * v;
        }
        assert!((row.rhs_offset - direct).abs() < 1e-12);

        let tail_p = Tail::Anticipative { preview: preview.clone(), residual: TailResidual::Periodic };
        let row_p = build_stability_row(&tail_p, &p, c).unwrap();
        let mut replicated = 0.0;
        for period in 0..50 {
            for (j, &v) in preview.iter().enumerate() {
                let idx = c + period * preview.len() + j;
                replicated -= (-(idx as f64) * lam).exp() * v;
            }
        }
        assert!((row_p.rhs_offset - replicated).abs() < 1e-10);
    }

    #[test]
    fn terminal_values_for_simple_tails() {
        let p = params();
        let cur = state(0.13, 0.05);
        let v = terminal_constraint_value(&Tail::Truncated, &p, 0.3, cur).unwrap();
        assert_eq!(v, 0.3);
        let v = terminal_constraint_value(&Tail::Periodic { period_samples: 100 }, &p, 0.3, cur)
            .unwrap();
        assert!((v - (0.3 + 0.08)).abs() < 1e-15);
    }

    #[test]
    fn terminal_value_matches_quadrature_oracle() {
        let p = params();
        let eta = p.eta();
        let delta = p.sample_time;
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let preview: Vec<f64> = (0..40).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let zmp_at_c = 0.21;
        let cur = state(0.0, 0.0);

        for residual in [TailResidual::Truncated, TailResidual::Periodic] {
            let tail = Tail::Anticipative { preview: preview.clone(), residual };
            let value = terminal_constraint_value(&tail, &p, zmp_at_c, cur).unwrap();

            // Reconstruct the piecewise linear ZMP beyond the horizon and
            // integrate eta * exp(-eta s) * zmp(s) by Simpson per interval.
            let velocity_at = |j: usize| -> f64 {
                match residual {
                    TailResidual::Truncated => preview.get(j).copied().unwrap_or(0.0),
                    TailResidual::Periodic => preview[j % preview.len()],
                }
            };
            let horizon = (60.0 / eta / delta).ceil() as usize;
            let mut oracle = 0.0;
            let mut z_start = zmp_at_c;
            for j in 0..horizon {
                let v = velocity_at(j);
                let a = j as f64 * delta;
                let panels = 16;
                let h = delta / panels as f64;
                let g = |s: f64| eta * (-eta * s).exp() * (z_start + v * (s - a));
                let mut acc = g(a) + g(a + delta);
                for k in 1..panels {
                    let s = a + h * k as f64;
                    acc += if k % 2 == 1 { 4.0 * g(s) } else { 2.0 * g(s) };
                }
                oracle += acc * h / 3.0;
                z_start += v * delta;
            }
            assert!(
                (value - oracle).abs() < 1e-10,
                "{residual:?}: value {value} oracle {oracle}"
            );
        }
    }

    #[test]
    fn stability_row_and_terminal_constraint_give_same_qp_solution() {
        let p = params();
        let eta = p.eta();
        let lam = eta * p.sample_time;
        let c = 30;
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let preview: Vec<f64> = (0..20).map(|_| rng.gen_range(-0.6..0.6)).collect();
        let tail = Tail::Anticipative { preview: preview.clone(), residual: TailResidual::Truncated };
        let cur = state(0.04, -0.01);

        let row = build_stability_row(&tail, &p, c).unwrap();
        let reference: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let hessian = DMatrix::<f64>::identity(c, c) * 2.0;
        let linear = DVector::from_iterator(c, reference.iter().map(|v| -2.0 * v));

        let solve_with_row = |coeffs: &[f64], rhs: f64| -> DVector<f64> {
            let problem = QpProblem {
                hessian: hessian.clone(),
                linear_cost: linear.clone(),
                eq_matrix: DMatrix::from_row_slice(1, c, coeffs),
                eq_rhs: DVector::from_element(1, rhs),
                ineq_matrix: DMatrix::zeros(0, c),
                ineq_lower: DVector::zeros(0),
                ineq_upper: DVector::zeros(0),
            };
            let sol = solve(&problem, &SolveOptions::default()).unwrap();
            assert_eq!(sol.status, QpStatus::Optimal);
            sol.primal
        };

        let a = solve_with_row(&row.coeffs, row.rhs(cur));

        // Terminal form: propagate xu to the end of the horizon and pin it to
        // the terminal value; zmp_at_c cancels so only the preview term stays.
        let w = (1.0 - (-lam).exp()) / eta;
        let blow = ((c as f64) * lam).exp();
        let coeffs_b: Vec<f64> = (0..c).map(|i| blow * w * (-(i as f64) * lam).exp()).collect();
        let extra = terminal_constraint_value(&tail, &p, 0.0, cur).unwrap();
        let rhs_b = blow * (cur.unstable - cur.zmp_pos) - extra;
        let b = solve_with_row(&coeffs_b, rhs_b);

        assert!((&a - &b).amax() < 1e-8, "max diff {}", (&a - &b).amax());
    }

    #[test]
    fn preview_is_zero_when_plan_ends_before_window() {
        let p = params();
        let plan = FootstepPlan {
            poses: vec![
                Pose { x: 0.0, y: 0.09, theta: 0.0 },
                Pose { x: 0.12, y: -0.09, theta: 0.0 },
            ],
            sides: vec![Side::Left, Side::Right],
            timestamps: vec![0.2, 0.5],
            durations: vec![0.3],
            ss_fraction: 0.8,
        };
        let samples =
            build_anticipative_preview(&plan, None, &p, 0.0, 80, 160).unwrap();
        assert!(samples.x.iter().all(|v| v.abs() < 1e-12));
        assert!(samples.y.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn preview_single_transfer_gives_ramp_velocity() {
        let p = params();
        let plan = FootstepPlan {
            poses: vec![
                Pose { x: 0.0, y: 0.09, theta: 0.0 },
                Pose { x: 0.12, y: -0.09, theta: 0.0 },
                Pose { x: 0.24, y: 0.09, theta: 0.0 },
            ],
            sides: vec![Side::Left, Side::Right, Side::Left],
            timestamps: vec![1.0, 2.0, 3.0],
            durations: vec![1.0, 1.0],
            ss_fraction: 0.8,
        };
        // Transfer to the second foot spans [1.8, 2.0): 0.12 m over 0.2 s.
        let samples = build_anticipative_preview(&plan, None, &p, 0.0, 100, 260).unwrap();
        for (j, &v) in samples.x.iter().enumerate() {
            let i = 100 + j;
            let expected = if (180..200).contains(&i) { 0.12 / 0.2 } else { 0.0 };
            assert!((v - expected).abs() < 1e-9, "sample {i}: {v} vs {expected}");
        }
        for (j, &v) in samples.y.iter().enumerate() {
            let i = 100 + j;
            let expected = if (180..200).contains(&i) { -0.18 / 0.2 } else { 0.0 };
            assert!((v - expected).abs() < 1e-9, "sample {i}: {v} vs {expected}");
        }
    }

    #[test]
    fn preview_window_must_be_valid() {
        let p = params();
        let plan = FootstepPlan {
            poses: vec![Pose { x: 0.0, y: 0.09, theta: 0.0 }],
            sides: vec![Side::Left],
            timestamps: vec![0.0],
            durations: vec![],
            ss_fraction: 0.8,
        };
        let err = build_anticipative_preview(&plan, None, &p, 0.0, 100, 100);
        assert_eq!(err.unwrap_err(), TailError::InvalidWindow { c: 100, p: 100 });
    }

    #[test]
    fn tail_validation_enforces_velocity_bound() {
        let tail = Tail::Anticipative { preview: vec![0.3, 1.4], residual: TailResidual::Truncated };
        match tail.validate(10, 1.0) {
            Err(TailError::SampleOutOfRange { index: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(
            Tail::Anticipative { preview: vec![], residual: TailResidual::Periodic }
                .validate(10, 1.0),
            Err(TailError::EmptyPreview)
        );
    }

    #[test]
    fn weighting_properties_hold() {
        let p = params();
        let report = verify_exponential_weighting_properties(&p);
        assert!(report.pass, "{report:?}");
        assert!(report.unit_step_error < 1e-6);
        assert!(report.unit_ramp_error < 1e-6);
        assert!(report.time_shift_error < 1e-6);
        assert!(report.linearity_error < 1e-6);
    }
}
