//! Vector fields on a domain around the origin: analytic built-ins,
//! linear superpositions, and grid-sampled data with trilinear interpolation.
//!
//! All built-ins except `RadialPower` with `beta != 3` are divergence-free
//! away from the origin, which is the hypothesis every downstream diagnostic
//! assumes; `divergence_residual` is the check that inputs actually satisfy it.

mod grid;

pub use grid::{load_grid, save_grid, GridField};

use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Default exclusion radius around the origin for singular analytic fields.
pub const DEFAULT_SINGULAR_CUTOFF: f64 = 1e-12;

/// Declarative description of a field, as parsed from the CLI or a config file.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldSpec {
    /// Point sink of given total inflow: u = -strength * x / (4 pi |x|^3).
    Sink { strength: f64 },
    /// Constant field u = direction.
    Uniform { direction: Vec3 },
    /// u = (y, -x, 0) / |x|^gamma. Tangent to every centered sphere.
    Rotating { gamma: f64 },
    /// u = sign * x / |x|^beta. Pure radial flow with a tunable flux exponent;
    /// divergence-free only for beta = 3.
    RadialPower { beta: f64, sign: f64 },
    /// Pointwise linear combination of sub-fields.
    Superposition(Vec<(f64, FieldSpec)>),
    /// Grid-sampled field loaded from an FLXF file.
    Grid { path: PathBuf },
}

impl FieldSpec {
    /// Validates this description and produces an evaluable field with the
    /// default singular cutoff.
    pub fn build(&self) -> Result<Field> {
        self.build_with_cutoff(DEFAULT_SINGULAR_CUTOFF)
    }

    pub fn build_with_cutoff(&self, cutoff: f64) -> Result<Field> {
        if !(cutoff > 0.0) {
            return Err(Error::InvalidFieldSpec(format!(
                "singular cutoff must be positive, got {cutoff}"
            )));
        }
        let kind = self.build_kind()?;
        Ok(Field { kind, cutoff })
    }

    fn build_kind(&self) -> Result<FieldKind> {
        match self {
            FieldSpec::Sink { strength } => {
                if !strength.is_finite() || *strength == 0.0 {
                    return Err(Error::InvalidFieldSpec(format!(
                        "sink strength must be finite and nonzero, got {strength}"
                    )));
                }
                Ok(FieldKind::Sink { strength: *strength })
            }
            FieldSpec::Uniform { direction } => {
                if !direction.is_finite() {
                    return Err(Error::InvalidFieldSpec(
                        "uniform direction must be finite".into(),
                    ));
                }
                Ok(FieldKind::Uniform { direction: *direction })
            }
            FieldSpec::Rotating { gamma } => {
                if !gamma.is_finite() {
                    return Err(Error::InvalidFieldSpec(format!(
                        "rotating exponent must be finite, got {gamma}"
                    )));
                }
                Ok(FieldKind::Rotating { gamma: *gamma })
            }
            FieldSpec::RadialPower { beta, sign } => {
                if !beta.is_finite() {
                    return Err(Error::InvalidFieldSpec(format!(
                        "radial exponent must be finite, got {beta}"
                    )));
                }
                if *sign != 1.0 && *sign != -1.0 {
                    return Err(Error::InvalidFieldSpec(format!(
                        "radial sign must be +1 or -1, got {sign}"
                    )));
                }
                Ok(FieldKind::RadialPower { beta: *beta, sign: *sign })
            }
            FieldSpec::Superposition(terms) => {
                if terms.is_empty() {
                    return Err(Error::InvalidFieldSpec(
                        "superposition must have at least one term".into(),
                    ));
                }
                let mut built = Vec::with_capacity(terms.len());
                for (coeff, sub) in terms {
                    if !coeff.is_finite() {
                        return Err(Error::InvalidFieldSpec(format!(
                            "superposition coefficient must be finite, got {coeff}"
                        )));
                    }
                    built.push((*coeff, sub.build_kind()?));
                }
                Ok(FieldKind::Superposition(built))
            }
            FieldSpec::Grid { path } => {
                let grid = load_grid(path)?;
                Ok(FieldKind::Grid(Arc::new(grid)))
            }
        }
    }
}

#[derive(Debug, Clone)]
enum FieldKind {
    Sink { strength: f64 },
    Uniform { direction: Vec3 },
    Rotating { gamma: f64 },
    RadialPower { beta: f64, sign: f64 },
    Superposition(Vec<(f64, FieldKind)>),
    Grid(Arc<GridField>),
}

impl FieldKind {
    fn singular_at_origin(&self) -> bool {
        match self {
            FieldKind::Sink { .. } => true,
            FieldKind::Uniform { .. } => false,
            FieldKind::Rotating { gamma } => *gamma > 0.0,
            FieldKind::RadialPower { beta, .. } => *beta > 0.0,
            FieldKind::Superposition(terms) => {
                terms.iter().any(|(_, k)| k.singular_at_origin())
            }
            FieldKind::Grid(_) => false,
        }
    }

    fn eval(&self, x: Vec3) -> Result<Vec3> {
        match self {
            FieldKind::Sink { strength } => {
                let r2 = x.norm_sq();
                let scale = -strength / (4.0 * PI * r2 * r2.sqrt());
                Ok(x * scale)
            }
            FieldKind::Uniform { direction } => Ok(*direction),
            FieldKind::Rotating { gamma } => {
                let scale = x.norm().powf(-gamma);
                Ok(Vec3::new(x.y * scale, -x.x * scale, 0.0))
            }
            FieldKind::RadialPower { beta, sign } => {
                let scale = sign * x.norm().powf(-beta);
                Ok(x * scale)
            }
            FieldKind::Superposition(terms) => {
                let mut acc = Vec3::default();
                for (coeff, kind) in terms {
                    acc += kind.eval(x)? * *coeff;
                }
                Ok(acc)
            }
            FieldKind::Grid(grid) => grid.eval(x),
        }
    }
}

/// An evaluable vector field. Immutable after construction; `eval` is pure
/// and safe to call from any number of threads.
#[derive(Debug, Clone)]
pub struct Field {
    kind: FieldKind,
    cutoff: f64,
}

impl Field {
    pub fn sink(strength: f64) -> Field {
        FieldSpec::Sink { strength }.build().expect("valid sink")
    }

    pub fn uniform(direction: Vec3) -> Field {
        FieldSpec::Uniform { direction }.build().expect("valid uniform")
    }

    pub fn rotating(gamma: f64) -> Field {
        FieldSpec::Rotating { gamma }.build().expect("valid rotating")
    }

    pub fn radial_power(beta: f64, sign: f64) -> Field {
        FieldSpec::RadialPower { beta, sign }
            .build()
            .expect("valid radial power")
    }

    pub fn from_grid(grid: GridField) -> Field {
        Field {
            kind: FieldKind::Grid(Arc::new(grid)),
            cutoff: DEFAULT_SINGULAR_CUTOFF,
        }
    }

    /// Exclusion radius below which singular analytic fields refuse to evaluate.
    pub fn singular_cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn with_singular_cutoff(mut self, cutoff: f64) -> Field {
        assert!(cutoff > 0.0, "cutoff must be positive");
        self.cutoff = cutoff;
        self
    }

    /// True if any component of the field is unbounded at the origin.
    pub fn is_singular_at_origin(&self) -> bool {
        self.kind.singular_at_origin()
    }

    /// Rotating-field exponent, if this field is a plain rotating field.
    /// Used by reports that discuss the rotating family's integrability.
    pub fn rotating_gamma(&self) -> Option<f64> {
        match &self.kind {
            FieldKind::Rotating { gamma } => Some(*gamma),
            _ => None,
        }
    }

    /// Evaluates u(x).
    pub fn eval(&self, x: Vec3) -> Result<Vec3> {
        if self.kind.singular_at_origin() && x.norm() < self.cutoff {
            return Err(Error::EvalAtSingularity { at: x, cutoff: self.cutoff });
        }
        self.kind.eval(x)
    }

    /// Central-difference estimate of div u at `x` with stencil width `h`.
    ///
    /// For an analytic divergence-free field the truncation error is
    /// O(h^2) times the local third-derivative scale, so the residual grows
    /// sharply toward a singularity; callers should budget tolerances from
    /// that scale, not from a flat constant.
    pub fn divergence_residual(&self, x: Vec3, h: f64) -> Result<f64> {
        assert!(h > 0.0, "stencil width must be positive");
        let two_h = 2.0 * h;
        let dx = (self.eval(Vec3::new(x.x + h, x.y, x.z))?.x
            - self.eval(Vec3::new(x.x - h, x.y, x.z))?.x)
            / two_h;
        let dy = (self.eval(Vec3::new(x.x, x.y + h, x.z))?.y
            - self.eval(Vec3::new(x.x, x.y - h, x.z))?.y)
            / two_h;
        let dz = (self.eval(Vec3::new(x.x, x.y, x.z + h))?.z
            - self.eval(Vec3::new(x.x, x.y, x.z - h))?.z)
            / two_h;
        Ok(dx + dy + dz)
    }
}

/// Pointwise linear combination a*f + b*g.
pub fn superpose(a: f64, f: &Field, b: f64, g: &Field) -> Field {
    Field {
        kind: FieldKind::Superposition(vec![
            (a, f.kind.clone()),
            (b, g.kind.clone()),
        ]),
        cutoff: f.cutoff.max(g.cutoff),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn sink_closed_form() {
        let f = Field::sink(1.0);
        let u = f.eval(Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!(close(u, Vec3::new(-1.0 / (4.0 * PI), 0.0, 0.0), 1e-15));
        // u = -x/(4 pi |x|^3) at a generic point.
        let x = Vec3::new(0.3, -0.2, 0.6);
        let r = x.norm();
        let expect = x * (-1.0 / (4.0 * PI * r * r * r));
        assert!(close(f.eval(x).unwrap(), expect, 1e-15));
    }

    #[test]
    fn rotating_closed_form() {
        let f = Field::rotating(1.0);
        let u = f.eval(Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert!(close(u, Vec3::new(1.0, 0.0, 0.0), 1e-15));
        // Always tangent to the sphere through x.
        let x = Vec3::new(0.4, 0.1, -0.3);
        let u = Field::rotating(2.5).eval(x).unwrap();
        assert!(x.dot(u).abs() < 1e-15);
    }

    #[test]
    fn uniform_is_constant() {
        let f = Field::uniform(Vec3::new(0.0, 0.0, -1.0));
        for &x in &[Vec3::new(1.0, 2.0, 3.0), Vec3::new(-0.1, 0.0, 5.0)] {
            assert_eq!(f.eval(x).unwrap(), Vec3::new(0.0, 0.0, -1.0));
        }
    }

    #[test]
    fn eval_rejects_singular_cutoff() {
        let f = Field::sink(1.0);
        let err = f.eval(Vec3::new(1e-13, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::EvalAtSingularity { .. }));
        // Uniform field is regular at the origin.
        let g = Field::uniform(Vec3::new(1.0, 0.0, 0.0));
        assert!(g.eval(Vec3::default()).is_ok());
        // Rotating with gamma = 0 is regular too.
        let h = Field::rotating(0.0);
        assert!(h.eval(Vec3::new(1e-300, 0.0, 0.0)).is_ok());
    }

    #[test]
    fn eval_is_pure() {
        let f = superpose(1.0, &Field::sink(2.0), -0.5, &Field::rotating(2.0));
        let x = Vec3::new(0.21, -0.43, 0.17);
        let a = f.eval(x).unwrap();
        let b = f.eval(x).unwrap();
        assert_eq!(a.x.to_bits(), b.x.to_bits());
        assert_eq!(a.y.to_bits(), b.y.to_bits());
        assert_eq!(a.z.to_bits(), b.z.to_bits());
    }

    #[test]
    fn divergence_examples() {
        // Constant field: differences vanish identically.
        let f = Field::uniform(Vec3::new(0.0, 0.0, -1.0));
        assert_eq!(
            f.divergence_residual(Vec3::new(0.7, 0.1, -0.2), 1e-3).unwrap(),
            0.0
        );
        let sink = Field::sink(1.0);
        let r = sink
            .divergence_residual(Vec3::new(0.5, 0.3, 0.1), 1e-4)
            .unwrap();
        assert!(r.abs() < 1e-5, "sink residual {r}");
        let rot = Field::rotating(2.0);
        let r = rot
            .divergence_residual(Vec3::new(0.2, 0.4, 0.1), 1e-4)
            .unwrap();
        assert!(r.abs() < 1e-5, "rotating residual {r}");
    }

    /// Deterministic low-discrepancy points in the annulus [r_lo, 1].
    fn annulus_points(n: usize, r_lo: f64) -> Vec<Vec3> {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        (0..n)
            .map(|_| {
                let r = r_lo + (1.0 - r_lo) * next();
                let z = 2.0 * next() - 1.0;
                let phi = 2.0 * PI * next();
                let s = (1.0 - z * z).sqrt();
                Vec3::new(r * s * phi.cos(), r * s * phi.sin(), r * z)
            })
            .collect()
    }

    /// Truncation bound for the central-difference divergence of a field
    /// whose components scale like |x|^(-k) near the origin: the third
    /// derivatives scale like |x|^(-k-3), with a combinatorial constant
    /// bounded by ~200 across the built-ins.
    fn truncation_bound(h: f64, r: f64, k: f64, amplitude: f64) -> f64 {
        200.0 * amplitude * h * h * r.powf(-k - 3.0) / 6.0
    }

    #[test]
    fn divergence_free_builtins_within_truncation_oracle() {
        let h = 1e-4;
        let cases: Vec<(Field, f64, f64)> = vec![
            // (field, homogeneity degree k of |u| ~ amplitude * r^-k, amplitude)
            (Field::sink(1.0), 2.0, 1.0 / (4.0 * PI)),
            (Field::rotating(1.0), 0.0, 1.0),
            (Field::rotating(2.0), 1.0, 1.0),
            (Field::rotating(3.0), 2.0, 1.0),
            (Field::radial_power(3.0, -1.0), 2.0, 1.0),
            (
                superpose(1.0, &Field::sink(1.0), 1.0, &Field::rotating(2.0)),
                2.0,
                1.0,
            ),
        ];
        for (field, k, amp) in &cases {
            for x in annulus_points(100, 0.1) {
                let r = x.norm();
                let res = field.divergence_residual(x, h).unwrap();
                let bound = truncation_bound(h, r, *k, *amp).max(1e-12);
                assert!(
                    res.abs() <= bound,
                    "residual {res:e} exceeds oracle bound {bound:e} at r = {r}"
                );
                // Where the oracle says the flat 1e-5 target is attainable,
                // hold the implementation to it.
                if bound <= 1e-5 {
                    assert!(res.abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn divergence_residual_is_second_order() {
        // Halving h must shrink the sink residual by ~4x where truncation
        // dominates rounding.
        let f = Field::sink(1.0);
        let x = Vec3::new(0.11, 0.05, 0.03);
        let r1 = f.divergence_residual(x, 2e-3).unwrap().abs();
        let r2 = f.divergence_residual(x, 1e-3).unwrap().abs();
        let ratio = r1 / r2;
        assert!(
            (3.3..4.7).contains(&ratio),
            "expected ~4x reduction, got {ratio}"
        );
    }

    #[test]
    fn radial_power_divergence_nonzero_off_three() {
        // beta != 3 is deliberately not divergence-free; the diagnostic
        // must say so rather than hide it.
        let f = Field::radial_power(2.0, -1.0);
        let res = f
            .divergence_residual(Vec3::new(0.5, 0.0, 0.0), 1e-5)
            .unwrap();
        // div(sign * x * r^-beta) = sign * (3 - beta) * r^-beta = -(1) * 1 * 0.5^-2
        assert!((res - (-(3.0 - 2.0) * 0.5f64.powf(-2.0))).abs() < 1e-6);
    }

    #[test]
    fn superpose_examples() {
        let u0 = Field::uniform(Vec3::new(0.0, 0.0, -1.0));
        let s = Field::sink(1.0);
        let zeroed = superpose(1.0, &u0, 0.0, &s);
        assert_eq!(
            zeroed.eval(Vec3::new(3.0, 2.0, 1.0)).unwrap(),
            Vec3::new(0.0, 0.0, -1.0)
        );

        let combo = superpose(1.0, &s, 1.0, &Field::rotating(2.0));
        let u = combo.eval(Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!(close(u, Vec3::new(-1.0 / (4.0 * PI), -1.0, 0.0), 1e-15));
    }

    #[test]
    fn validation_errors() {
        assert!(FieldSpec::Sink { strength: 0.0 }.build().is_err());
        assert!(FieldSpec::Rotating { gamma: f64::NAN }.build().is_err());
        assert!(FieldSpec::Superposition(vec![]).build().is_err());
        assert!(FieldSpec::RadialPower { beta: 2.0, sign: 0.5 }.build().is_err());
    }
}
