//! Streamline integration with first-crossing detection.
//!
//! Integrates d(gamma)/ds = u(gamma) forward in s with an embedded
//! Dormand-Prince 5(4) pair (FSAL, PI-free step control) and a quartic dense
//! interpolant per accepted step. Crossings of the spheres |x| = r_inner and
//! |x| = r_outer are detected by scanning the dense output at sub-step
//! resolution and localizing each sign change by bisection on the
//! interpolant until the radius residual falls below `crossing_tol`.
//!
//! Step lengths near the event spheres are capped geometrically so a step
//! cannot tunnel through a sphere between scan samples; away from the
//! spheres the error controller alone governs the step.

use crate::error::{Error, Result};
use crate::field::Field;
use crate::vec3::Vec3;

/// Tolerances and budgets for one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Stop with `BudgetExhausted` once the traced arc length exceeds this.
    pub max_arc_length: f64,
    /// Stop with `BudgetExhausted` after this many step attempts
    /// (accepted or rejected).
    pub max_steps: u64,
    /// Speeds below this classify the trace as `Stagnated`.
    pub stagnation_speed: f64,
    /// Radius residual below which a crossing is considered localized.
    pub crossing_tol: f64,
}

impl TraceConfig {
    /// Defaults scaled for an outer sphere of radius `alpha`: resolves inner
    /// radii down to about 1e-4 * alpha.
    pub fn for_outer_radius(alpha: f64) -> TraceConfig {
        assert!(alpha > 0.0, "outer radius must be positive");
        TraceConfig {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_arc_length: 1e3 * alpha,
            max_steps: 1_000_000,
            stagnation_speed: 1e-12,
            crossing_tol: 1e-10 * alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_positive = self.rel_tol > 0.0
            && self.abs_tol > 0.0
            && self.max_arc_length > 0.0
            && self.stagnation_speed > 0.0
            && self.crossing_tol > 0.0;
        if !all_positive || self.max_steps < 1 {
            return Err(Error::InvalidConfig(format!("trace config not positive: {self:?}")));
        }
        Ok(())
    }
}

/// How a first-hit trace ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFate {
    EnteredInner,
    ExitedOuter,
    BudgetExhausted,
    Stagnated,
}

/// Outcome of `trace_first_hit`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceResult {
    pub fate: TraceFate,
    /// Crossing point; present for the two crossing fates, with
    /// | |hit_point| - r | <= crossing_tol for the sphere that was hit.
    pub hit_point: Option<Vec3>,
    /// Value of the streamline parameter s at the crossing.
    pub hit_parameter: Option<f64>,
    /// Accepted integration steps.
    pub steps_taken: u64,
    /// Chord-summed arc length up to the stop.
    pub arc_length: f64,
}

/// Why a path trace stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum PathStop {
    ReachedStop,
    Budget,
    Stagnated,
    /// The field became unevaluable mid-path (singular cutoff or grid mask);
    /// the samples collected up to that point are still returned.
    EvalFailed(String),
}

/// A polyline sample of one streamline.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrace {
    /// (s, gamma(s)) samples at spacing <= record_every, including the seed
    /// and the final point.
    pub samples: Vec<(f64, Vec3)>,
    pub stop: PathStop,
    pub arc_length: f64,
}

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Embedded error coefficients e = b - b_hat.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Quartic dense-output coefficients.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Sub-step samples scanned for event sign changes.
const EVENT_SCAN: usize = 16;
/// Hard cap on consecutive step rejections before the attempt budget
/// naturally runs out.
const STEP_GROW: f64 = 5.0;
const STEP_SHRINK: f64 = 0.2;
const SAFETY: f64 = 0.9;

/// One accepted step with its dense interpolant.
#[derive(Debug, Clone)]
struct DenseSegment {
    s0: f64,
    h: f64,
    cont: [Vec3; 5],
}

impl DenseSegment {
    fn new(y0: Vec3, y1: Vec3, k1: Vec3, k7: Vec3, ksum_d: Vec3, h: f64, s0: f64) -> Self {
        let diff = y1 - y0;
        let bspl = k1 * h - diff;
        DenseSegment {
            s0,
            h,
            cont: [y0, diff, bspl, diff - k7 * h - bspl, ksum_d * h],
        }
    }

    /// gamma(s0 + theta * h) for theta in [0, 1].
    fn eval(&self, theta: f64) -> Vec3 {
        let t1 = 1.0 - theta;
        let [c0, c1, c2, c3, c4] = self.cont;
        c0 + theta * (c1 + t1 * (c2 + theta * (c3 + t1 * c4)))
    }

    fn end(&self) -> Vec3 {
        self.cont[0] + self.cont[1]
    }
}

struct Stepper<'a> {
    field: &'a Field,
    cfg: &'a TraceConfig,
    s: f64,
    y: Vec3,
    /// Field value at (s, y); FSAL carries it across steps.
    k1: Vec3,
    h: f64,
    arc: f64,
    accepted: u64,
    attempts: u64,
}

enum Advance {
    Step(DenseSegment),
    Stagnated,
    Budget,
}

impl<'a> Stepper<'a> {
    fn start(field: &'a Field, cfg: &'a TraceConfig, seed: Vec3) -> Result<Self> {
        let k1 = field
            .eval(seed)
            .map_err(|e| Error::TraceAborted { at: seed, s: 0.0, source: Box::new(e) })?;
        let speed = k1.norm();
        // Initial step: ~1% of the position scale in displacement.
        let scale = seed.norm().max(cfg.abs_tol);
        let h = if speed > cfg.stagnation_speed {
            0.01 * scale / speed
        } else {
            1.0
        };
        Ok(Stepper { field, cfg, s: 0.0, y: seed, k1, h, arc: 0.0, accepted: 0, attempts: 0 })
    }

    fn eval(&self, x: Vec3) -> Result<Vec3> {
        self.field
            .eval(x)
            .map_err(|e| Error::TraceAborted { at: x, s: self.s, source: Box::new(e) })
    }

    /// Attempts steps until one is accepted. `max_len` caps the spatial
    /// length of the step; `s_cap` caps the parameter value it may reach.
    fn advance(&mut self, max_len: f64, s_cap: Option<f64>) -> Result<Advance> {
        let speed = self.k1.norm();
        if speed < self.cfg.stagnation_speed {
            return Ok(Advance::Stagnated);
        }
        if self.arc >= self.cfg.max_arc_length {
            return Ok(Advance::Budget);
        }
        let mut h = self.h.min(max_len / speed);
        if let Some(cap) = s_cap {
            let remaining = cap - self.s;
            if remaining <= 1e-15 * cap.abs().max(1.0) {
                return Ok(Advance::Budget);
            }
            h = h.min(remaining);
        }
        loop {
            if self.attempts >= self.cfg.max_steps {
                return Ok(Advance::Budget);
            }
            self.attempts += 1;
            h = h.max(f64::MIN_POSITIVE);

            let y = self.y;
            let k1 = self.k1;
            let k2 = self.eval(y + h * (A21 * k1))?;
            let k3 = self.eval(y + h * (A31 * k1 + A32 * k2))?;
            let k4 = self.eval(y + h * (A41 * k1 + A42 * k2 + A43 * k3))?;
            let k5 = self.eval(y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))?;
            let k6 = self.eval(y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))?;
            let y1 = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
            let k7 = self.eval(y1)?;
            let err_vec = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7);

            let mut err_sq = 0.0;
            for (e, (a, b)) in [
                (err_vec.x, (y.x, y1.x)),
                (err_vec.y, (y.y, y1.y)),
                (err_vec.z, (y.z, y1.z)),
            ] {
                let scale = self.cfg.abs_tol + self.cfg.rel_tol * a.abs().max(b.abs());
                err_sq += (e / scale) * (e / scale);
            }
            let err = (err_sq / 3.0).sqrt();

            if err <= 1.0 {
                let ksum_d = D1 * k1 + D3 * k3 + D4 * k4 + D5 * k5 + D6 * k6 + D7 * k7;
                let seg = DenseSegment::new(y, y1, k1, k7, ksum_d, h, self.s);
                self.arc += (y1 - y).norm();
                self.s += h;
                self.y = y1;
                self.k1 = k7;
                self.accepted += 1;
                let factor = if err == 0.0 {
                    STEP_GROW
                } else {
                    (SAFETY * err.powf(-0.2)).clamp(STEP_SHRINK, STEP_GROW)
                };
                self.h = h * factor;
                return Ok(Advance::Step(seg));
            }
            h *= (SAFETY * err.powf(-0.2)).clamp(STEP_SHRINK, 1.0);
        }
    }
}

/// Spatial step cap that prevents tunneling through either event sphere:
/// allows half the distance to the nearest sphere, floored so steps keep
/// making progress right at a sphere.
fn event_step_cap(y: Vec3, r_inner: f64, r_outer: f64) -> f64 {
    let rho = y.norm();
    let d = (rho - r_inner).abs().min((r_outer - rho).abs());
    let floor = 0.2 * r_inner.min(r_outer - r_inner);
    (0.5 * d).max(floor)
}

/// Bisection on the dense interpolant for |gamma| - target = 0 within
/// [lo, hi], assuming a sign change. Returns theta at which the residual
/// magnitude is below `tol`.
fn bisect_radius(seg: &DenseSegment, target: f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = |theta: f64| seg.eval(theta).norm() - target;
    let mut g_lo = g(lo);
    if g_lo.abs() <= tol {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g_mid = g(mid);
        if g_mid.abs() <= tol {
            return mid;
        }
        if (g_mid > 0.0) == (g_lo > 0.0) {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Integrates the streamline from `seed` and returns its first crossing of
/// |x| = r_inner (fate `EnteredInner`) or |x| = r_outer (fate `ExitedOuter`),
/// or the reason no crossing was found.
///
/// A seed launched on the outer sphere with inward motion is not reported as
/// an immediate exit: the outward test only arms once the trajectory has
/// penetrated `crossing_tol` inside the outer sphere.
pub fn trace_first_hit(
    field: &Field,
    seed: Vec3,
    r_inner: f64,
    r_outer: f64,
    cfg: &TraceConfig,
) -> Result<TraceResult> {
    cfg.validate()?;
    if !(r_inner > 0.0 && r_inner < r_outer) {
        return Err(Error::BadRadii { r: r_inner, alpha: r_outer });
    }
    let norm = seed.norm();
    if !(norm > r_inner && norm <= r_outer * (1.0 + 1e-12) + cfg.crossing_tol) {
        return Err(Error::SeedOutOfRange { seed, norm, r_inner, r_outer });
    }

    let mut stepper = Stepper::start(field, cfg, seed)?;
    let mut armed_outer = norm < r_outer - cfg.crossing_tol;

    loop {
        let cap = event_step_cap(stepper.y, r_inner, r_outer);
        let seg = match stepper.advance(cap, None)? {
            Advance::Step(seg) => seg,
            Advance::Stagnated => {
                return Ok(TraceResult {
                    fate: TraceFate::Stagnated,
                    hit_point: None,
                    hit_parameter: None,
                    steps_taken: stepper.accepted,
                    arc_length: stepper.arc,
                })
            }
            Advance::Budget => {
                return Ok(TraceResult {
                    fate: TraceFate::BudgetExhausted,
                    hit_point: None,
                    hit_parameter: None,
                    steps_taken: stepper.accepted,
                    arc_length: stepper.arc,
                })
            }
        };

        // Scan the dense output for the first sign change of either event.
        let mut prev_theta = 0.0;
        let mut prev_rho = seg.eval(0.0).norm();
        for j in 1..=EVENT_SCAN {
            let theta = j as f64 / EVENT_SCAN as f64;
            let rho = if j == EVENT_SCAN { seg.end().norm() } else { seg.eval(theta).norm() };

            // Inner crossing: radius falls through r_inner.
            let inner_hit = prev_rho > r_inner && rho <= r_inner;
            // Outer crossing: radius rises through r_outer, only once armed.
            let outer_hit = armed_outer && prev_rho < r_outer && rho >= r_outer;

            if inner_hit || outer_hit {
                // Both spheres crossed within one scan interval: localize
                // each and keep the earlier one.
                let inner_theta = inner_hit
                    .then(|| bisect_radius(&seg, r_inner, prev_theta, theta, cfg.crossing_tol));
                let outer_theta = outer_hit
                    .then(|| bisect_radius(&seg, r_outer, prev_theta, theta, cfg.crossing_tol));
                let (theta_hit, fate) = match (inner_theta, outer_theta) {
                    (Some(ti), Some(to)) if to < ti => (to, TraceFate::ExitedOuter),
                    (Some(ti), _) => (ti, TraceFate::EnteredInner),
                    (None, Some(to)) => (to, TraceFate::ExitedOuter),
                    (None, None) => unreachable!(),
                };
                let hit = seg.eval(theta_hit);
                let arc = stepper.arc - (seg.end() - seg.cont[0]).norm()
                    + (hit - seg.cont[0]).norm();
                return Ok(TraceResult {
                    fate,
                    hit_point: Some(hit),
                    hit_parameter: Some(seg.s0 + theta_hit * seg.h),
                    steps_taken: stepper.accepted,
                    arc_length: arc,
                });
            }

            if !armed_outer {
                if rho < r_outer - cfg.crossing_tol {
                    armed_outer = true;
                } else if rho > r_outer + 10.0 * cfg.crossing_tol {
                    // Never penetrated and clearly leaving: the seed sat on
                    // the outer sphere with outward motion. Report the exit
                    // at the sphere itself.
                    let theta_hit = if prev_rho < r_outer {
                        bisect_radius(&seg, r_outer, prev_theta, theta, cfg.crossing_tol)
                    } else {
                        prev_theta
                    };
                    let hit = seg.eval(theta_hit);
                    let hit = hit * (r_outer / hit.norm());
                    let arc = stepper.arc - (seg.end() - seg.cont[0]).norm()
                        + (hit - seg.cont[0]).norm();
                    return Ok(TraceResult {
                        fate: TraceFate::ExitedOuter,
                        hit_point: Some(hit),
                        hit_parameter: Some(seg.s0 + theta_hit * seg.h),
                        steps_taken: stepper.accepted,
                        arc_length: arc,
                    });
                }
            }
            prev_theta = theta;
            prev_rho = rho;
        }
    }
}

/// Samples the streamline from `seed` at parameter spacing <= `record_every`,
/// up to `s_max` (if given) or the configured budgets. Failures to evaluate
/// the field mid-path stop the trace and are reported in `stop` rather than
/// as errors; the seed itself must be evaluable.
pub fn trace_path(
    field: &Field,
    seed: Vec3,
    cfg: &TraceConfig,
    record_every: f64,
    s_max: Option<f64>,
) -> Result<PathTrace> {
    cfg.validate()?;
    if !(record_every > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "record_every must be positive, got {record_every}"
        )));
    }
    let mut stepper = Stepper::start(field, cfg, seed)?;
    let mut samples = vec![(0.0, seed)];
    let mut next_record = record_every;

    loop {
        if let Some(cap) = s_max {
            if stepper.s >= cap * (1.0 - 1e-15) {
                push_final(&mut samples, stepper.s, stepper.y);
                return Ok(PathTrace { samples, stop: PathStop::ReachedStop, arc_length: stepper.arc });
            }
        }
        let seg = match stepper.advance(f64::INFINITY, s_max) {
            Ok(Advance::Step(seg)) => seg,
            Ok(Advance::Stagnated) => {
                push_final(&mut samples, stepper.s, stepper.y);
                return Ok(PathTrace { samples, stop: PathStop::Stagnated, arc_length: stepper.arc });
            }
            Ok(Advance::Budget) => {
                push_final(&mut samples, stepper.s, stepper.y);
                return Ok(PathTrace { samples, stop: PathStop::Budget, arc_length: stepper.arc });
            }
            Err(e) => {
                push_final(&mut samples, stepper.s, stepper.y);
                return Ok(PathTrace {
                    samples,
                    stop: PathStop::EvalFailed(e.to_string()),
                    arc_length: stepper.arc,
                });
            }
        };
        while next_record <= seg.s0 + seg.h {
            let theta = (next_record - seg.s0) / seg.h;
            samples.push((next_record, seg.eval(theta)));
            next_record += record_every;
        }
    }
}

fn push_final(samples: &mut Vec<(f64, Vec3)>, s: f64, y: Vec3) {
    if samples.last().is_none_or(|&(s_last, _)| s > s_last) {
        samples.push((s, y));
    }
}

/// Samples the streamline at the given ascending parameter values via dense
/// output. Returns the samples it could produce; a trace that stops early
/// (budget, stagnation, unevaluable field) yields a shorter list.
pub fn trace_at_parameters(
    field: &Field,
    seed: Vec3,
    cfg: &TraceConfig,
    params: &[f64],
) -> Result<Vec<(f64, Vec3)>> {
    cfg.validate()?;
    if params.windows(2).any(|w| w[1] <= w[0]) || params.iter().any(|s| !s.is_finite() || *s < 0.0)
    {
        return Err(Error::InvalidConfig(
            "sample parameters must be finite, non-negative, strictly ascending".into(),
        ));
    }
    let mut samples = Vec::with_capacity(params.len());
    let mut next = params.iter().copied().peekable();
    if let Some(&0.0) = next.peek() {
        samples.push((0.0, seed));
        next.next();
    }
    let Some(&last) = params.last() else {
        return Ok(samples);
    };
    let mut stepper = Stepper::start(field, cfg, seed)?;
    while next.peek().is_some() {
        let seg = match stepper.advance(f64::INFINITY, Some(last)) {
            Ok(Advance::Step(seg)) => seg,
            _ => break,
        };
        let seg_end = seg.s0 + seg.h;
        while let Some(&s) = next.peek() {
            if s > seg_end + 1e-12 * seg_end.abs().max(1e-300) {
                break;
            }
            let theta = ((s - seg.s0) / seg.h).min(1.0);
            samples.push((s, seg.eval(theta)));
            next.next();
        }
    }
    Ok(samples)
}
