//! The field mini-language used on the command line and in report headers:
//!   sink:strength=1
//!   uniform:dir=0,0,-1
//!   rotating:gamma=3
//!   radial:beta=2.5,sign=-1
//!   grid:path=/data/field.flxf
//!   sup:1*sink:strength=1+0.5*rotating:gamma=2
//!
//! Parsing and printing round-trip, so the resolved spec embedded in a
//! report is independent of whether it arrived via flag or config file.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use fluxcrit::{FieldSpec, Vec3};

pub fn parse_field(spec: &str) -> Result<FieldSpec> {
    let spec = spec.trim();
    if let Some(rest) = spec.strip_prefix("sup:") {
        let mut terms = Vec::new();
        for term in rest.split('+') {
            let (coeff, inner) = term
                .split_once('*')
                .with_context(|| format!("superposition term {term:?} needs <coeff>*<field>"))?;
            let coeff: f64 = coeff
                .trim()
                .parse()
                .with_context(|| format!("bad coefficient {coeff:?}"))?;
            terms.push((coeff, parse_field(inner)?));
        }
        if terms.is_empty() {
            bail!("empty superposition");
        }
        return Ok(FieldSpec::Superposition(terms));
    }

    let (name, args) = match spec.split_once(':') {
        Some((n, a)) => (n, a),
        None => (spec, ""),
    };
    let kv = parse_kv(args)?;
    let get = |key: &str| -> Result<&str> {
        kv.iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .with_context(|| format!("field {name:?} needs {key}=..."))
    };
    let num = |key: &str| -> Result<f64> {
        get(key)?
            .parse::<f64>()
            .with_context(|| format!("bad number for {key}"))
    };
    match name {
        "sink" => Ok(FieldSpec::Sink { strength: num("strength")? }),
        "uniform" => {
            let dir = parse_vec3(get("dir")?)?;
            Ok(FieldSpec::Uniform { direction: dir })
        }
        "rotating" => Ok(FieldSpec::Rotating { gamma: num("gamma")? }),
        "radial" => Ok(FieldSpec::RadialPower { beta: num("beta")?, sign: num("sign")? }),
        "grid" => Ok(FieldSpec::Grid { path: PathBuf::from(get("path")?) }),
        other => bail!(
            "unknown field kind {other:?}; expected sink, uniform, rotating, radial, grid, or sup"
        ),
    }
}

/// key=value pairs separated by commas, where a vector value consumes the
/// following comma-separated numbers (e.g. dir=0,0,-1).
fn parse_kv(args: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    if args.trim().is_empty() {
        return Ok(out);
    }
    for piece in args.split(',') {
        match piece.split_once('=') {
            Some((k, v)) => out.push((k.trim().to_string(), v.trim().to_string())),
            None => match out.last_mut() {
                // Continuation of a vector value.
                Some((_, v)) => {
                    v.push(',');
                    v.push_str(piece.trim());
                }
                None => bail!("expected key=value, got {piece:?}"),
            },
        }
    }
    Ok(out)
}

pub fn parse_vec3(s: &str) -> Result<Vec3> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        bail!("expected three comma-separated components, got {s:?}");
    }
    let mut v = [0.0f64; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.parse().with_context(|| format!("bad component {p:?}"))?;
    }
    Ok(Vec3::new(v[0], v[1], v[2]))
}

/// Canonical spec string, stable across parse/print cycles.
pub fn field_to_string(spec: &FieldSpec) -> String {
    match spec {
        FieldSpec::Sink { strength } => format!("sink:strength={strength}"),
        FieldSpec::Uniform { direction } => {
            format!("uniform:dir={},{},{}", direction.x, direction.y, direction.z)
        }
        FieldSpec::Rotating { gamma } => format!("rotating:gamma={gamma}"),
        FieldSpec::RadialPower { beta, sign } => format!("radial:beta={beta},sign={sign}"),
        FieldSpec::Grid { path } => format!("grid:path={}", path.display()),
        FieldSpec::Superposition(terms) => {
            let joined: Vec<String> = terms
                .iter()
                .map(|(c, f)| format!("{c}*{}", field_to_string(f)))
                .collect();
            format!("sup:{}", joined.join("+"))
        }
    }
}
