// Validation sites use `!(x > 0.0)` on purpose: unlike `x <= 0.0` it also
// rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Command-line front end: field selection, one subcommand per analysis,
//! deterministic JSON/CSV reports.
//!
//! Exit codes: 0 success, 1 a verification ran but did not pass, 2 invalid
//! configuration, 3 computation error. Stdout carries only verdict lines and
//! report paths; diagnostics go to stderr.

mod fieldlang;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use fluxcrit::criterion::{default_r_grid, flux_scan, shell_scan, threshold_exponent, Verdict};
use fluxcrit::entryset::classify;
use fluxcrit::fluxtube::{verify_lemma, PatchSpec};
use fluxcrit::report::Json;
use fluxcrit::spheremesh::GeoMesh;
use fluxcrit::tracer::{trace_path, TraceConfig};
use fluxcrit::{Field, FieldSpec};

use fieldlang::{field_to_string, parse_field, parse_vec3};

#[derive(Parser)]
#[command(
    name = "fluxcrit",
    about = "Streamline-concentration diagnostics for divergence-free 3D vector fields",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify the entry set on the outer sphere for one inner radius.
    Classify(ClassifyArgs),
    /// Scan the entry flux over a radius grid and apply the criterion.
    FluxScan(FluxScanArgs),
    /// Integrate |u|^p over shrinking spheres and fit the decay exponent.
    ShellScan(ShellScanArgs),
    /// Advect a patch to the inner sphere and check flux conservation.
    TubeVerify(TubeVerifyArgs),
    /// Merge prior JSON reports into one verdict document.
    Report(ReportArgs),
    /// Export a geodesic sphere mesh as OFF text.
    MeshExport(MeshExportArgs),
    /// Trace one streamline and export it as CSV.
    Trace(TraceArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Field spec, e.g. sink:strength=1, uniform:dir=0,0,-1,
    /// rotating:gamma=3, radial:beta=2.5,sign=-1, grid:path=f.flxf,
    /// or sup:1*sink:strength=1+1*rotating:gamma=2.
    #[arg(long)]
    field: Option<String>,
    /// JSON config file mirroring the flags; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (overrides FLUXCRIT_THREADS; defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Exclusion radius around the origin for singular analytic fields.
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    abs_tol: Option<f64>,
    #[arg(long)]
    max_arc_length: Option<f64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    stagnation_speed: Option<f64>,
    #[arg(long)]
    crossing_tol: Option<f64>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    alpha: Option<f64>,
    /// Inner radius.
    #[arg(long)]
    r: Option<f64>,
    /// Mesh subdivision level.
    #[arg(long)]
    level: Option<u32>,
    /// Extra refinement levels applied to the boundary band.
    #[arg(long)]
    refine: Option<u32>,
    /// Output JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional per-triangle status CSV path.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct FluxScanArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    /// Largest radius of the geometric grid (ratio 1/2).
    #[arg(long)]
    rmax: Option<f64>,
    /// Smallest radius of the geometric grid.
    #[arg(long)]
    rmin: Option<f64>,
    /// Explicit comma-separated radius grid, decreasing (overrides rmin/rmax).
    #[arg(long)]
    r_grid: Option<String>,
    #[arg(long)]
    level: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ShellScanArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    rmax: Option<f64>,
    #[arg(long)]
    rmin: Option<f64>,
    #[arg(long)]
    r_grid: Option<String>,
    #[arg(long)]
    level: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct TubeVerifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Patch spec: cap:axis=0,0,1,half_angle=0.5236
    #[arg(long)]
    patch: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    /// Patch triangulation resolution (rings).
    #[arg(long)]
    resolution: Option<usize>,
    /// PASS threshold on the relative flux mismatch.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional OFF export of the tube surface.
    #[arg(long)]
    off: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Prior JSON reports to merge.
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, required = true)]
    out: PathBuf,
}

#[derive(Args)]
struct MeshExportArgs {
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 4)]
    level: u32,
    #[arg(long, required = true)]
    out: PathBuf,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Seed point, e.g. 1,0,0.
    #[arg(long, required = true)]
    seed: String,
    /// Parameter spacing between recorded samples.
    #[arg(long, default_value_t = 0.1)]
    record_every: f64,
    /// Stop at this parameter value.
    #[arg(long)]
    s_max: Option<f64>,
    #[arg(long, required = true)]
    out: PathBuf,
}

/// Keys accepted in --config files; every flag has a counterpart.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    field: Option<String>,
    alpha: Option<f64>,
    r: Option<f64>,
    p: Option<f64>,
    level: Option<u32>,
    refine: Option<u32>,
    rmin: Option<f64>,
    rmax: Option<f64>,
    r_grid: Option<Vec<f64>>,
    patch: Option<String>,
    resolution: Option<usize>,
    tol: Option<f64>,
    threads: Option<usize>,
    cutoff: Option<f64>,
    rel_tol: Option<f64>,
    abs_tol: Option<f64>,
    max_arc_length: Option<f64>,
    max_steps: Option<u64>,
    stagnation_speed: Option<f64>,
    crossing_tol: Option<f64>,
}

/// Everything a command needs, fully validated before any computation.
struct Resolved {
    spec: FieldSpec,
    field: Field,
    trace: TraceConfig,
    cutoff: f64,
    threads: Option<usize>,
    file: FileConfig,
}

enum CliError {
    Config(anyhow::Error),
    Compute(anyhow::Error),
    /// Verification ran to completion but did not pass.
    VerifyFailed,
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::VerifyFailed) => ExitCode::from(1),
        Err(CliError::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(CliError::Compute(e)) => {
            eprintln!("computation error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Classify(args) => cmd_classify(args),
        Command::FluxScan(args) => cmd_flux_scan(args),
        Command::ShellScan(args) => cmd_shell_scan(args),
        Command::TubeVerify(args) => cmd_tube_verify(args),
        Command::Report(args) => cmd_report(args),
        Command::MeshExport(args) => cmd_mesh_export(args),
        Command::Trace(args) => cmd_trace(args),
    }
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config file {}", p.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config file {}", p.display()))
        }
    }
}

fn resolve_common(common: &CommonArgs, default_alpha: f64) -> Result<Resolved> {
    let file = load_file_config(common.config.as_deref())?;
    let spec_str = common
        .field
        .clone()
        .or_else(|| file.field.clone())
        .ok_or_else(|| anyhow!("no field given (use --field or a config file)"))?;
    let spec = parse_field(&spec_str)?;
    let cutoff = common
        .cutoff
        .or(file.cutoff)
        .unwrap_or(fluxcrit::field::DEFAULT_SINGULAR_CUTOFF);
    let field = spec
        .build_with_cutoff(cutoff)
        .map_err(|e| anyhow!("invalid field: {e}"))?;
    let mut trace = TraceConfig::for_outer_radius(default_alpha);
    if let Some(v) = common.rel_tol.or(file.rel_tol) {
        trace.rel_tol = v;
    }
    if let Some(v) = common.abs_tol.or(file.abs_tol) {
        trace.abs_tol = v;
    }
    if let Some(v) = common.max_arc_length.or(file.max_arc_length) {
        trace.max_arc_length = v;
    }
    if let Some(v) = common.max_steps.or(file.max_steps) {
        trace.max_steps = v;
    }
    if let Some(v) = common.stagnation_speed.or(file.stagnation_speed) {
        trace.stagnation_speed = v;
    }
    if let Some(v) = common.crossing_tol.or(file.crossing_tol) {
        trace.crossing_tol = v;
    }
    trace.validate().map_err(|e| anyhow!("{e}"))?;
    let threads = match common.threads.or(file.threads) {
        Some(n) => Some(n),
        None => match std::env::var("FLUXCRIT_THREADS") {
            Ok(v) => Some(
                v.parse::<usize>()
                    .with_context(|| format!("FLUXCRIT_THREADS={v} is not a thread count"))?,
            ),
            Err(_) => None,
        },
    };
    Ok(Resolved { spec, field, trace, cutoff, threads, file })
}

/// Runs `body` inside a thread pool of the configured size.
fn with_pool<T: Send>(
    threads: Option<usize>,
    body: impl FnOnce() -> Result<T> + Send,
) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("building thread pool")?;
    pool.install(body)
}

/// Resolved run parameters embedded in every report. The thread count is
/// deliberately excluded: reports are byte-identical across thread counts.
fn config_json(resolved: &Resolved, extra: &[(&str, Json)]) -> Json {
    let t = &resolved.trace;
    let mut obj = Json::obj([
        ("field", field_to_string(&resolved.spec).into()),
        ("cutoff", resolved.cutoff.into()),
        ("rel_tol", t.rel_tol.into()),
        ("abs_tol", t.abs_tol.into()),
        ("max_arc_length", t.max_arc_length.into()),
        ("max_steps", (t.max_steps as i64).into()),
        ("stagnation_speed", t.stagnation_speed.into()),
        ("crossing_tol", t.crossing_tol.into()),
    ]);
    for (k, v) in extra {
        obj.insert(k, v.clone());
    }
    obj
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_r_grid_string(s: &str) -> Result<Vec<f64>> {
    let mut grid: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad radius {p:?}")))
        .collect::<Result<_>>()?;
    if grid.iter().any(|r| !(*r > 0.0)) {
        bail!("radii must be positive: {s:?}");
    }
    // Accept any order; scans want strictly decreasing radii.
    grid.sort_by(|a, b| b.partial_cmp(a).unwrap());
    grid.dedup();
    Ok(grid)
}

/// Geometric grid with ratio 1/2 from rmax down to rmin.
fn geometric_grid(rmax: f64, rmin: f64) -> Result<Vec<f64>> {
    if !(rmax > 0.0 && rmin > 0.0 && rmin <= rmax) {
        bail!("need 0 < rmin <= rmax, got rmin {rmin}, rmax {rmax}");
    }
    let mut grid = vec![rmax];
    let mut r = rmax;
    while r / 2.0 >= rmin * (1.0 - 1e-9) {
        r /= 2.0;
        grid.push(r);
    }
    Ok(grid)
}

fn cmd_classify(args: ClassifyArgs) -> Result<(), CliError> {
    let resolved = resolve_common(&args.common, args.alpha.unwrap_or(1.0))
        .map_err(CliError::Config)?;
    let run = (|| -> Result<(f64, f64, u32, u32)> {
        let alpha = args.alpha.or(resolved.file.alpha).unwrap_or(1.0);
        let r = args.r.or(resolved.file.r).ok_or_else(|| anyhow!("missing --r"))?;
        let level = args.level.or(resolved.file.level).unwrap_or(5);
        let refine = args.refine.or(resolved.file.refine).unwrap_or(0);
        if !(r > 0.0 && r < alpha) {
            bail!("r must be < alpha: r = {r}, alpha = {alpha}");
        }
        Ok((alpha, r, level, refine))
    })()
    .map_err(CliError::Config)?;
    let (alpha, r, level, refine) = run;

    let map = with_pool(resolved.threads, || {
        let mut map =
            classify(&resolved.field, alpha, r, level, &resolved.trace).map_err(|e| anyhow!("{e}"))?;
        if refine > 0 {
            map = map
                .refine(&resolved.field, refine, &resolved.trace)
                .map_err(|e| anyhow!("{e}"))?;
        }
        Ok(map)
    })
    .map_err(CliError::Compute)?;

    let mut doc = map.to_json();
    doc.insert(
        "config",
        config_json(
            &resolved,
            &[
                ("alpha", alpha.into()),
                ("r", r.into()),
                ("level", (level as i64).into()),
                ("refine", (refine as i64).into()),
            ],
        ),
    );
    doc.insert("kind", "classify".into());
    if let Some(out) = &args.out {
        write_text(out, &doc.render()).map_err(CliError::Compute)?;
        println!("{}", out.display());
    } else {
        println!("{}", doc.render());
    }
    if let Some(csv) = &args.csv {
        write_text(csv, &map.to_status_csv()).map_err(CliError::Compute)?;
        println!("{}", csv.display());
    }
    eprintln!(
        "classified {} triangles: members {}, flux [{:.6e}, {:.6e}]",
        map.status.len(),
        map.count(fluxcrit::entryset::TriStatus::Member),
        map.flux_lo_mag,
        map.flux_hi_mag
    );
    Ok(())
}

fn cmd_flux_scan(args: FluxScanArgs) -> Result<(), CliError> {
    let resolved = resolve_common(&args.common, args.alpha.unwrap_or(1.0))
        .map_err(CliError::Config)?;
    let parsed = (|| -> Result<(f64, f64, u32, Vec<f64>)> {
        let alpha = args.alpha.or(resolved.file.alpha).unwrap_or(1.0);
        let p = args.p.or(resolved.file.p).unwrap_or(2.0);
        let level = args.level.or(resolved.file.level).unwrap_or(5);
        let grid = match (&args.r_grid, &resolved.file.r_grid) {
            (Some(s), _) => parse_r_grid_string(s)?,
            (None, Some(g)) => g.clone(),
            (None, None) => {
                let rmax = args.rmax.or(resolved.file.rmax).unwrap_or(alpha / 2.0);
                let rmin = args.rmin.or(resolved.file.rmin).unwrap_or(alpha / 256.0);
                geometric_grid(rmax, rmin)?
            }
        };
        if grid.is_empty() || grid[0] >= alpha {
            bail!("radius grid must start below alpha");
        }
        Ok((alpha, p, level, grid))
    })()
    .map_err(CliError::Config)?;
    let (alpha, p, level, grid) = parsed;

    let scan = with_pool(resolved.threads, || {
        flux_scan(&resolved.field, alpha, p, &grid, level, &resolved.trace)
            .map_err(|e| anyhow!("{e}"))
    })
    .map_err(CliError::Compute)?;

    let mut doc = scan.to_json();
    doc.insert(
        "config",
        config_json(
            &resolved,
            &[
                ("alpha", alpha.into()),
                ("p", p.into()),
                ("level", (level as i64).into()),
                ("r_grid", Json::Arr(grid.iter().map(|&r| Json::Num(r)).collect())),
            ],
        ),
    );
    doc.insert("kind", "flux_scan".into());
    let beta = scan
        .fit
        .as_ref()
        .map_or("n/a".to_string(), |f| format!("{:.2}", f.exponent));
    let verdict_word = match scan.verdict {
        Verdict::CriterionSatisfied => "SATISFIED",
        Verdict::CriterionFailed => "FAILED",
        Verdict::Inconclusive => "INCONCLUSIVE",
    };
    println!(
        "CRITERION {verdict_word}: beta={beta} threshold={:.2}",
        threshold_exponent(p)
    );
    if let Some(out) = &args.out {
        write_text(out, &doc.render()).map_err(CliError::Compute)?;
        println!("{}", out.display());
    }
    if let Some(csv) = &args.csv {
        write_text(csv, &scan.to_csv()).map_err(CliError::Compute)?;
        println!("{}", csv.display());
    }
    Ok(())
}

fn cmd_shell_scan(args: ShellScanArgs) -> Result<(), CliError> {
    let resolved =
        resolve_common(&args.common, 1.0).map_err(CliError::Config)?;
    let parsed = (|| -> Result<(f64, u32, Vec<f64>)> {
        let p = args.p.or(resolved.file.p).unwrap_or(2.0);
        let level = args.level.or(resolved.file.level).unwrap_or(5);
        let grid = match (&args.r_grid, &resolved.file.r_grid) {
            (Some(s), _) => parse_r_grid_string(s)?,
            (None, Some(g)) => g.clone(),
            (None, None) => match (args.rmax.or(resolved.file.rmax), args.rmin.or(resolved.file.rmin)) {
                (Some(rmax), Some(rmin)) => geometric_grid(rmax, rmin)?,
                _ => default_r_grid(1.0, &resolved.trace),
            },
        };
        Ok((p, level, grid))
    })()
    .map_err(CliError::Config)?;
    let (p, level, grid) = parsed;

    let scan = with_pool(resolved.threads, || {
        shell_scan(&resolved.field, p, &grid, level).map_err(|e| anyhow!("{e}"))
    })
    .map_err(CliError::Compute)?;

    let mut doc = scan.to_json();
    doc.insert(
        "config",
        config_json(
            &resolved,
            &[
                ("p", p.into()),
                ("level", (level as i64).into()),
                ("r_grid", Json::Arr(grid.iter().map(|&r| Json::Num(r)).collect())),
            ],
        ),
    );
    doc.insert("kind", "shell_scan".into());
    if scan.divergent {
        println!("divergent near 0 (q={:.1})", scan.q);
    } else {
        println!("convergent near 0 (q={:.1})", scan.q);
    }
    if let Some(out) = &args.out {
        write_text(out, &doc.render()).map_err(CliError::Compute)?;
        println!("{}", out.display());
    }
    if let Some(csv) = &args.csv {
        write_text(csv, &scan.to_csv()).map_err(CliError::Compute)?;
        println!("{}", csv.display());
    }
    Ok(())
}

fn parse_patch(spec: &str, alpha: f64) -> Result<PatchSpec> {
    let Some(rest) = spec.strip_prefix("cap:") else {
        bail!("only cap:axis=x,y,z,half_angle=a patches are supported on the command line");
    };
    let Some((axis_part, angle_part)) = rest.split_once(",half_angle=") else {
        bail!("cap patch needs axis=x,y,z,half_angle=a, got {spec:?}");
    };
    let axis_str = axis_part
        .strip_prefix("axis=")
        .ok_or_else(|| anyhow!("cap patch needs axis=x,y,z first"))?;
    let axis = parse_vec3(axis_str)?;
    let half_angle: f64 = angle_part
        .trim()
        .parse()
        .with_context(|| format!("bad half_angle {angle_part:?}"))?;
    PatchSpec::cap(axis, half_angle, alpha).map_err(|e| anyhow!("{e}"))
}

fn cmd_tube_verify(args: TubeVerifyArgs) -> Result<(), CliError> {
    let resolved = resolve_common(&args.common, args.alpha.unwrap_or(1.0))
        .map_err(CliError::Config)?;
    let parsed = (|| -> Result<(PatchSpec, f64, f64, usize, f64)> {
        let alpha = args.alpha.or(resolved.file.alpha).unwrap_or(1.0);
        let r = args.r.or(resolved.file.r).ok_or_else(|| anyhow!("missing --r"))?;
        let resolution = args.resolution.or(resolved.file.resolution).unwrap_or(64);
        let tol = args
            .tol
            .or(resolved.file.tol)
            .unwrap_or(fluxcrit::fluxtube::DEFAULT_REL_ERR_TOLERANCE);
        let patch_str = args
            .patch
            .clone()
            .or_else(|| resolved.file.patch.clone())
            .ok_or_else(|| anyhow!("missing --patch"))?;
        let patch = parse_patch(&patch_str, alpha)?;
        if !(r > 0.0 && r < alpha) {
            bail!("r must be < alpha: r = {r}, alpha = {alpha}");
        }
        Ok((patch, alpha, r, resolution, tol))
    })()
    .map_err(CliError::Config)?;
    let (patch, alpha, r, resolution, tol) = parsed;

    let tube = with_pool(resolved.threads, || {
        verify_lemma(&resolved.field, &patch, r, resolution, &resolved.trace, tol)
            .map_err(|e| anyhow!("{e}"))
    })
    .map_err(CliError::Compute)?;

    let mut doc = tube.to_json();
    doc.insert(
        "config",
        config_json(
            &resolved,
            &[
                ("alpha", alpha.into()),
                ("r", r.into()),
                ("resolution", resolution.into()),
                ("tol", tol.into()),
            ],
        ),
    );
    doc.insert("kind", "tube_verify".into());
    println!(
        "TUBE {}: rel_err={:.3e} tol={:.1e} flux_d={:.6e} flux_dstar={:.6e}",
        if tube.pass { "PASS" } else { "FAIL" },
        tube.rel_err,
        tol,
        tube.flux_d,
        tube.flux_dstar
    );
    if let Some(out) = &args.out {
        write_text(out, &doc.render()).map_err(CliError::Compute)?;
        println!("{}", out.display());
    }
    if let Some(off) = &args.off {
        write_text(off, &tube.to_off()).map_err(CliError::Compute)?;
        println!("{}", off.display());
    }
    if tube.pass {
        Ok(())
    } else {
        Err(CliError::VerifyFailed)
    }
}

/// Converts parsed JSON into the deterministic writer's representation
/// (sorted keys, fixed float formatting).
fn to_report_json(value: &serde_json::Value) -> Json {
    match value {
        serde_json::Value::Null => Json::Null,
        serde_json::Value::Bool(b) => Json::Bool(*b),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Json::Int(i)
            } else {
                Json::Num(n.as_f64().unwrap_or(f64::NAN))
            }
        }
        serde_json::Value::String(s) => Json::Str(s.clone()),
        serde_json::Value::Array(items) => Json::Arr(items.iter().map(to_report_json).collect()),
        serde_json::Value::Object(map) => {
            let mut obj = Json::obj([]);
            for (k, v) in map {
                obj.insert(k, to_report_json(v));
            }
            obj
        }
    }
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let mut merged = Json::obj([]);
    let mut verdict: Option<String> = None;
    let mut shell_divergent: Option<bool> = None;
    let mut notes: Vec<Json> = Vec::new();
    for path in &args.inputs {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(CliError::Config)?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(CliError::Config)?;
        let kind = value
            .get("kind")
            .and_then(|k| k.as_str())
            .unwrap_or("unknown")
            .to_string();
        if kind == "flux_scan" {
            if let Some(v) = value.get("verdict").and_then(|v| v.as_str()) {
                verdict = Some(v.to_string());
            }
        }
        if kind == "shell_scan" {
            shell_divergent = value.get("divergent").and_then(|v| v.as_bool());
        }
        merged.insert(&kind, to_report_json(&value));
    }
    if let (Some(v), Some(divergent)) = (&verdict, shell_divergent) {
        if v == "CriterionSatisfied" && !divergent {
            notes.push(Json::Str(
                "inconsistency: criterion satisfied but the shell scan does not diverge; \
                 check that the shell grid reaches the asymptotic regime"
                    .into(),
            ));
        }
    }
    merged.insert(
        "verdict",
        verdict.map_or(Json::Null, Json::Str),
    );
    merged.insert("notes", Json::Arr(notes));
    merged.insert("kind", "combined_report".into());
    write_text(&args.out, &merged.render()).map_err(CliError::Compute)?;
    println!("{}", args.out.display());
    Ok(())
}

fn cmd_mesh_export(args: MeshExportArgs) -> Result<(), CliError> {
    if !(args.radius > 0.0) {
        return Err(CliError::Config(anyhow!("radius must be positive")));
    }
    let mesh = GeoMesh::build(args.radius, args.level)
        .map_err(|e| CliError::Config(anyhow!("{e}")))?;
    write_text(&args.out, &mesh.to_off()).map_err(CliError::Compute)?;
    println!("{}", args.out.display());
    Ok(())
}

fn cmd_trace(args: TraceArgs) -> Result<(), CliError> {
    let resolved = resolve_common(&args.common, 1.0).map_err(CliError::Config)?;
    let seed = parse_vec3(&args.seed).map_err(CliError::Config)?;
    if !(args.record_every > 0.0) {
        return Err(CliError::Config(anyhow!("record_every must be positive")));
    }
    let path = with_pool(resolved.threads, || {
        trace_path(&resolved.field, seed, &resolved.trace, args.record_every, args.s_max)
            .map_err(|e| anyhow!("{e}"))
    })
    .map_err(CliError::Compute)?;

    use fluxcrit::numeric::format_f64 as f;
    let mut csv = String::from("s,x,y,z\n");
    for &(s, pnt) in &path.samples {
        csv.push_str(&format!("{},{},{},{}\n", f(s), f(pnt.x), f(pnt.y), f(pnt.z)));
    }
    write_text(&args.out, &csv).map_err(CliError::Compute)?;
    println!("{}", args.out.display());
    eprintln!(
        "traced {} samples, arc length {:.6}, stop: {:?}",
        path.samples.len(),
        path.arc_length,
        path.stop
    );
    Ok(())
}
