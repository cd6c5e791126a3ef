//! Discrete flux tubes: a patch on the outer sphere is advected along
//! streamlines to the inner sphere by the first-hit map, and the flux through
//! the source patch is compared with the flux through its image. For a
//! divergence-free field the two agree up to discretization, because the tube
//! mantle is ruled by streamlines and carries no flux.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::numeric::CompensatedSum;
use crate::report::Json;
use crate::spheremesh::{spherical_excess, tri_flux, GeoMesh, PatchMask};
use crate::tracer::{trace_at_parameters, trace_first_hit, TraceConfig, TraceFate};
use crate::vec3::Vec3;

/// Default PASS threshold on the relative flux mismatch at resolution 64.
pub const DEFAULT_REL_ERR_TOLERANCE: f64 = 1e-3;

/// Boundary-ring size used for mantle sampling (uniform around each cap rim,
/// so across-streamline derivatives can use a high-order stencil).
const MANTLE_RING: usize = 512;
/// Turning-angle budget between consecutive mantle rungs along a streamline.
const MANTLE_MAX_TURN: f64 = 0.008;
/// Dense probe resolution used to lay out the rung schedule.
const MANTLE_PROBE: usize = 4096;

/// A patch of the outer sphere with inflow everywhere (checked at advection).
#[derive(Debug, Clone)]
pub struct PatchSpec {
    pub kind: PatchKind,
    /// Radius of the sphere carrying the patch.
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub enum PatchKind {
    /// Geodesic cap: points within `half_angle` of `axis`.
    Cap { axis: Vec3, half_angle: f64 },
    /// Marked triangles of an existing mesh.
    TriangleSet { mesh: Arc<GeoMesh>, mask: PatchMask },
}

impl PatchSpec {
    pub fn cap(axis: Vec3, half_angle: f64, alpha: f64) -> Result<PatchSpec> {
        if !(half_angle > 0.0 && half_angle < PI) {
            return Err(Error::InvalidConfig(format!(
                "cap half-angle must lie in (0, pi), got {half_angle}"
            )));
        }
        if !(axis.norm() > 0.0) {
            return Err(Error::InvalidConfig("cap axis must be nonzero".into()));
        }
        if !(alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be positive, got {alpha}")));
        }
        Ok(PatchSpec { kind: PatchKind::Cap { axis: axis.normalized(), half_angle }, alpha })
    }

    pub fn triangle_set(mesh: Arc<GeoMesh>, mask: PatchMask) -> Result<PatchSpec> {
        if mask.len() != mesh.tri_count() {
            return Err(Error::InvalidConfig("mask length does not match mesh".into()));
        }
        if mask.count() == 0 {
            return Err(Error::InvalidConfig("triangle-set patch is empty".into()));
        }
        let alpha = mesh.radius();
        Ok(PatchSpec { kind: PatchKind::TriangleSet { mesh, mask }, alpha })
    }

    /// True if the two patches are disjoint subsets of the same sphere.
    pub fn disjoint_from(&self, other: &PatchSpec) -> bool {
        if (self.alpha - other.alpha).abs() > 1e-12 * self.alpha {
            return false;
        }
        match (&self.kind, &other.kind) {
            (
                PatchKind::Cap { axis: a1, half_angle: h1 },
                PatchKind::Cap { axis: a2, half_angle: h2 },
            ) => a1.angle_to(*a2) > h1 + h2,
            (
                PatchKind::TriangleSet { mesh: m1, mask: k1 },
                PatchKind::TriangleSet { mesh: m2, mask: k2 },
            ) => {
                m1.level() == m2.level() && k1.len() == k2.len() && k1.disjoint_from(k2)
            }
            (PatchKind::Cap { axis, half_angle }, PatchKind::TriangleSet { mesh, mask })
            | (PatchKind::TriangleSet { mesh, mask }, PatchKind::Cap { axis, half_angle }) => {
                // A triangle intersects the cap only if some vertex is within
                // half_angle plus the triangle's own angular extent; vertex
                // checks at mesh resolution are adequate for the precondition.
                (0..mesh.tri_count()).filter(|&t| mask.get(t)).all(|t| {
                    mesh.triangle_unit_verts(t)
                        .iter()
                        .all(|v| v.angle_to(*axis) > *half_angle)
                })
            }
        }
    }
}

/// A triangulated patch on a sphere.
#[derive(Debug, Clone)]
pub struct PatchTriangulation {
    pub radius: f64,
    /// Unit-vector vertices; scale by `radius` for world coordinates.
    pub verts_unit: Vec<Vec3>,
    pub tris: Vec<[usize; 3]>,
    /// Boundary loops as ordered vertex indices.
    pub boundary_loops: Vec<Vec<usize>>,
}

impl PatchTriangulation {
    pub fn vertex(&self, i: usize) -> Vec3 {
        self.verts_unit[i] * self.radius
    }

    pub fn flux(&self, field: &Field) -> Result<f64> {
        let mut acc = CompensatedSum::new();
        for &[a, b, c] in &self.tris {
            acc.add(tri_flux(
                field,
                self.radius,
                [self.verts_unit[a], self.verts_unit[b], self.verts_unit[c]],
            )?);
        }
        Ok(acc.value())
    }

    pub fn area(&self) -> f64 {
        let r2 = self.radius * self.radius;
        CompensatedSum::sum_iter(self.tris.iter().map(|&[a, b, c]| {
            spherical_excess(self.verts_unit[a], self.verts_unit[b], self.verts_unit[c]) * r2
        }))
    }
}

/// One sampled point of the tube mantle with the discrete surface normal
/// estimated from neighboring boundary streamlines.
#[derive(Debug, Clone)]
pub struct MantleSample {
    pub point: Vec3,
    pub velocity: Vec3,
    pub normal: Vec3,
}

/// Result of advecting a patch to the inner sphere.
#[derive(Debug, Clone)]
pub struct TubeResult {
    /// Flux through the source patch on the outer sphere.
    pub flux_d: f64,
    /// Flux through the image patch on the inner sphere.
    pub flux_dstar: f64,
    /// |flux_d - flux_dstar| / max(|flux_d|, tiny).
    pub rel_err: f64,
    /// Whether rel_err is below the tolerance used by `verify_lemma`.
    pub pass: bool,
    pub rel_err_tolerance: f64,
    pub source: PatchTriangulation,
    pub image: PatchTriangulation,
    pub boundary_polylines_in: Vec<Vec<Vec3>>,
    pub boundary_polylines_out: Vec<Vec<Vec3>>,
    /// Boundary streamlines, one per mantle-ring point per loop, sampled at
    /// shared parameter fractions of each point's hit parameter (decimated
    /// for storage; the tangency maximum is taken over the full sampling).
    pub mantle_streamlines: Vec<Vec<Vec<(f64, Vec3)>>>,
    /// Representative subset of the mantle samples with their discrete
    /// surface normals.
    pub mantle_samples: Vec<MantleSample>,
    /// Maximum of |u . n|/|u| over the full mantle sampling.
    pub max_mantle_tangency: Option<f64>,
    /// Chords that collapsed while estimating mantle normals.
    pub degenerate_mantle_chords: usize,
    /// Discrete injectivity of the first-hit map on the patch vertices.
    pub injective: bool,
    /// Image quadrature nodes where the flow is not inward.
    pub image_inflow_violations: usize,
    pub notes: Vec<String>,
}

impl TubeResult {
    pub fn to_json(&self) -> Json {
        Json::obj([
            ("flux_d", self.flux_d.into()),
            ("flux_dstar", self.flux_dstar.into()),
            ("rel_err", self.rel_err.into()),
            ("rel_err_tolerance", self.rel_err_tolerance.into()),
            ("pass", self.pass.into()),
            (
                "max_mantle_normal",
                match self.max_mantle_tangency {
                    Some(v) => v.into(),
                    None => Json::Null,
                },
            ),
            ("injective", self.injective.into()),
            ("image_inflow_violations", self.image_inflow_violations.into()),
            ("source_area", self.source.area().into()),
            ("image_area", self.image.area().into()),
            ("notes", Json::Arr(self.notes.iter().map(|n| Json::Str(n.clone())).collect())),
        ])
    }

    /// OFF export of the tube surface: source patch, mantle, image patch,
    /// as labeled groups.
    pub fn to_off(&self) -> String {
        let mut verts: Vec<Vec3> = Vec::new();
        let mut faces: Vec<(String, Vec<[usize; 3]>)> = Vec::new();

        let src_base = verts.len();
        verts.extend((0..self.source.verts_unit.len()).map(|i| self.source.vertex(i)));
        faces.push((
            "D".into(),
            self.source.tris.iter().map(|&[a, b, c]| [a + src_base, b + src_base, c + src_base]).collect(),
        ));

        let img_base = verts.len();
        verts.extend((0..self.image.verts_unit.len()).map(|i| self.image.vertex(i)));
        faces.push((
            "Dstar".into(),
            self.image.tris.iter().map(|&[a, b, c]| [a + img_base, b + img_base, c + img_base]).collect(),
        ));

        let mut mantle_faces = Vec::new();
        for loop_lines in &self.mantle_streamlines {
            let n = loop_lines.len();
            if n < 2 {
                continue;
            }
            let bases: Vec<usize> = loop_lines
                .iter()
                .map(|line| {
                    let base = verts.len();
                    verts.extend(line.iter().map(|&(_, p)| p));
                    base
                })
                .collect();
            for i in 0..n {
                let j = (i + 1) % n;
                let (bi, bj) = (bases[i], bases[j]);
                let rungs = loop_lines[i].len().min(loop_lines[j].len());
                for k in 0..rungs.saturating_sub(1) {
                    mantle_faces.push([bi + k, bj + k, bj + k + 1]);
                    mantle_faces.push([bi + k, bj + k + 1, bi + k + 1]);
                }
            }
        }
        faces.push(("mantle".into(), mantle_faces));

        let mut out = String::from("OFF\n");
        let n_faces: usize = faces.iter().map(|(_, f)| f.len()).sum();
        let _ = writeln!(out, "{} {} 0", verts.len(), n_faces);
        for v in &verts {
            let _ = writeln!(out, "{} {} {}", v.x, v.y, v.z);
        }
        for (label, group) in &faces {
            let _ = writeln!(out, "# group {label}");
            for &[a, b, c] in group {
                let _ = writeln!(out, "3 {a} {b} {c}");
            }
        }
        out
    }
}

/// Triangulates a patch: caps get a polar grid (rings of constant azimuthal
/// count), triangle sets reuse their mesh triangles.
pub fn triangulate_patch(patch: &PatchSpec, resolution: usize) -> Result<PatchTriangulation> {
    match &patch.kind {
        PatchKind::Cap { axis, half_angle } => {
            if resolution < 1 {
                return Err(Error::InvalidConfig("resolution must be >= 1".into()));
            }
            let n_rings = resolution;
            let m = (4 * resolution).max(6);
            let (e1, e2) = orthobasis(*axis);

            let mut verts = vec![*axis];
            for i in 1..=n_rings {
                let theta = half_angle * i as f64 / n_rings as f64;
                let (sin_t, cos_t) = theta.sin_cos();
                for j in 0..m {
                    let phi = 2.0 * PI * j as f64 / m as f64;
                    verts.push(*axis * cos_t + (e1 * phi.cos() + e2 * phi.sin()) * sin_t);
                }
            }
            let ring = |i: usize, j: usize| 1 + (i - 1) * m + (j % m);
            let mut tris = Vec::with_capacity(m * (2 * n_rings - 1));
            for j in 0..m {
                tris.push([0, ring(1, j), ring(1, j + 1)]);
            }
            for i in 1..n_rings {
                for j in 0..m {
                    tris.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
                    tris.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
                }
            }
            orient_outward(&verts, &mut tris);
            let boundary = (0..m).map(|j| ring(n_rings, j)).collect();
            Ok(PatchTriangulation {
                radius: patch.alpha,
                verts_unit: verts,
                tris,
                boundary_loops: vec![boundary],
            })
        }
        PatchKind::TriangleSet { mesh, mask } => {
            let mut remap = vec![usize::MAX; mesh.vert_count()];
            let mut verts = Vec::new();
            let mut tris = Vec::new();
            for t in 0..mesh.tri_count() {
                if !mask.get(t) {
                    continue;
                }
                let mut tri = [0usize; 3];
                for (slot, &v) in mesh.triangle(t).iter().enumerate() {
                    if remap[v] == usize::MAX {
                        remap[v] = verts.len();
                        verts.push(mesh.vertex(v) / mesh.radius());
                    }
                    tri[slot] = remap[v];
                }
                tris.push(tri);
            }
            let boundary_loops = boundary_loops(&tris);
            Ok(PatchTriangulation {
                radius: patch.alpha,
                verts_unit: verts,
                tris,
                boundary_loops,
            })
        }
    }
}

fn orient_outward(verts: &[Vec3], tris: &mut [[usize; 3]]) {
    for tri in tris.iter_mut() {
        let [a, b, c] = *tri;
        let n = (verts[b] - verts[a]).cross(verts[c] - verts[a]);
        if n.dot(verts[a] + verts[b] + verts[c]) < 0.0 {
            tri.swap(1, 2);
        }
    }
}

/// Boundary loops of a triangulation: edges used by exactly one triangle,
/// chained along their orientation.
fn boundary_loops(tris: &[[usize; 3]]) -> Vec<Vec<usize>> {
    use std::collections::HashMap;
    let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
    for &[a, b, c] in tris {
        for (u, v) in [(a, b), (b, c), (c, a)] {
            *edges.entry((u, v)).or_insert(0) += 1;
            *edges.entry((v, u)).or_insert(0) -= 1;
        }
    }
    let mut successor: HashMap<usize, usize> = HashMap::new();
    for (&(u, v), &count) in &edges {
        if count > 0 {
            successor.insert(u, v);
        }
    }
    let mut loops = Vec::new();
    let mut remaining: Vec<usize> = successor.keys().copied().collect();
    remaining.sort_unstable();
    let mut visited = std::collections::HashSet::new();
    for start in remaining {
        if visited.contains(&start) {
            continue;
        }
        let mut cycle = vec![start];
        visited.insert(start);
        let mut cur = successor[&start];
        while cur != start {
            cycle.push(cur);
            visited.insert(cur);
            match successor.get(&cur) {
                Some(&next) => cur = next,
                None => break,
            }
        }
        loops.push(cycle);
    }
    loops
}

/// Advects every patch vertex to the inner sphere by the first-hit map and
/// assembles the image triangulation plus the mantle sampling.
///
/// Errors with `PatchNotEntirelyCaptured` if any sample seed is not strictly
/// inflow or its streamline fails to reach the inner sphere while staying
/// inside the outer ball.
pub fn advect_patch(
    field: &Field,
    patch: &PatchSpec,
    r: f64,
    resolution: usize,
    cfg: &TraceConfig,
) -> Result<TubeResult> {
    advect_patch_with_tolerance(field, patch, r, resolution, cfg, DEFAULT_REL_ERR_TOLERANCE)
}

fn advect_patch_with_tolerance(
    field: &Field,
    patch: &PatchSpec,
    r: f64,
    resolution: usize,
    cfg: &TraceConfig,
    rel_err_tolerance: f64,
) -> Result<TubeResult> {
    cfg.validate()?;
    let alpha = patch.alpha;
    if !(r > 0.0 && r < alpha) {
        return Err(Error::BadRadii { r, alpha });
    }
    let source = triangulate_patch(patch, resolution)?;

    // First-hit map on every vertex, in parallel, collected in vertex order.
    enum Hit {
        Ok { point: Vec3, s: f64 },
        Fail(String),
    }
    let hits: Vec<Hit> = source
        .verts_unit
        .par_iter()
        .map(|&v_unit| {
            let seed = v_unit * alpha;
            let u = match field.eval(seed) {
                Ok(u) => u,
                Err(e) => return Hit::Fail(e.to_string()),
            };
            if u.dot(v_unit) >= 0.0 {
                return Hit::Fail("seed is not inflow".into());
            }
            match trace_first_hit(field, seed, r, alpha, cfg) {
                Ok(res) => match res.fate {
                    TraceFate::EnteredInner => Hit::Ok {
                        point: res.hit_point.expect("crossing fate has a hit point"),
                        s: res.hit_parameter.expect("crossing fate has a parameter"),
                    },
                    fate => Hit::Fail(format!("trace ended with {fate:?}")),
                },
                Err(e) => Hit::Fail(e.to_string()),
            }
        })
        .collect();

    let failures: Vec<usize> = hits
        .iter()
        .enumerate()
        .filter_map(|(i, h)| matches!(h, Hit::Fail(_)).then_some(i))
        .collect();
    if !failures.is_empty() {
        let first = failures[0];
        let reason = match &hits[first] {
            Hit::Fail(msg) => msg.clone(),
            _ => unreachable!(),
        };
        return Err(Error::PatchNotEntirelyCaptured {
            failed: failures.len(),
            total: source.verts_unit.len(),
            first_seed: source.vertex(first),
            first_reason: reason,
            seeds: failures,
        });
    }

    let mut hit_points = Vec::with_capacity(hits.len());
    let mut hit_params = Vec::with_capacity(hits.len());
    for h in &hits {
        match h {
            Hit::Ok { point, s } => {
                hit_points.push(*point);
                hit_params.push(*s);
            }
            Hit::Fail(_) => unreachable!(),
        }
    }

    let image = PatchTriangulation {
        radius: r,
        verts_unit: hit_points.iter().map(|p| p.normalized()).collect(),
        tris: source.tris.clone(),
        boundary_loops: source.boundary_loops.clone(),
    };

    let mut notes = Vec::new();
    let injective = check_injective(&image, cfg.crossing_tol);
    if !injective {
        notes.push("first-hit map is not discretely injective at this resolution".into());
    }

    // Sign audit: the flow still points inward at the image nodes.
    let mut image_inflow_violations = 0usize;
    for &[a, b, c] in &image.tris {
        let [ua, ub, uc] = [image.verts_unit[a], image.verts_unit[b], image.verts_unit[c]];
        for n_hat in [
            (ua + ub).normalized(),
            (ub + uc).normalized(),
            (uc + ua).normalized(),
        ] {
            if let Ok(u) = field.eval(n_hat * r) {
                if u.dot(n_hat) >= 0.0 {
                    image_inflow_violations += 1;
                }
            }
        }
    }
    if image_inflow_violations > 0 {
        notes.push(format!(
            "{image_inflow_violations} image quadrature node(s) are not inflow"
        ));
    }

    let flux_d = source.flux(field)?;
    let flux_dstar = image.flux(field)?;
    let rel_err = (flux_d - flux_dstar).abs() / flux_d.abs().max(f64::MIN_POSITIVE);

    let mantle = build_mantle(field, patch, &source, &image, &hit_points, &hit_params, r, cfg)?;

    Ok(TubeResult {
        flux_d,
        flux_dstar,
        rel_err,
        pass: rel_err < rel_err_tolerance,
        rel_err_tolerance,
        source,
        image,
        boundary_polylines_in: mantle.boundary_in,
        boundary_polylines_out: mantle.boundary_out,
        mantle_streamlines: mantle.streamlines,
        mantle_samples: mantle.samples,
        max_mantle_tangency: mantle.max_tangency,
        degenerate_mantle_chords: mantle.degenerate,
        injective,
        image_inflow_violations,
        notes,
    })
}

struct MantleData {
    streamlines: Vec<Vec<Vec<(f64, Vec3)>>>,
    samples: Vec<MantleSample>,
    degenerate: usize,
    max_tangency: Option<f64>,
    boundary_in: Vec<Vec<Vec3>>,
    boundary_out: Vec<Vec<Vec3>>,
}

/// Ordered boundary rings for mantle sampling. Caps get a dedicated uniform
/// ring on the rim; triangle sets use their boundary-loop vertices (whose
/// first hits were already computed during advection).
#[allow(clippy::too_many_arguments)]
fn build_mantle(
    field: &Field,
    patch: &PatchSpec,
    source: &PatchTriangulation,
    image: &PatchTriangulation,
    hit_points: &[Vec3],
    hit_params: &[f64],
    r: f64,
    cfg: &TraceConfig,
) -> Result<MantleData> {
    let alpha = patch.alpha;
    // (seeds on the outer sphere, hit points, hit parameters) per loop.
    let mut rings: Vec<(Vec<Vec3>, Vec<Vec3>, Vec<f64>)> = Vec::new();
    match &patch.kind {
        PatchKind::Cap { axis, half_angle } => {
            let (e1, e2) = orthobasis(*axis);
            let (sin_t, cos_t) = half_angle.sin_cos();
            let seeds: Vec<Vec3> = (0..MANTLE_RING)
                .map(|j| {
                    let phi = 2.0 * PI * j as f64 / MANTLE_RING as f64;
                    (*axis * cos_t + (e1 * phi.cos() + e2 * phi.sin()) * sin_t) * alpha
                })
                .collect();
            enum RimHit {
                Ok(Vec3, f64),
                Fail(String),
            }
            let hits: Vec<RimHit> = seeds
                .par_iter()
                .map(|&seed| match trace_first_hit(field, seed, r, alpha, cfg) {
                    Ok(res) if res.fate == TraceFate::EnteredInner => {
                        RimHit::Ok(res.hit_point.unwrap(), res.hit_parameter.unwrap())
                    }
                    Ok(res) => RimHit::Fail(format!("rim trace ended with {:?}", res.fate)),
                    Err(e) => RimHit::Fail(e.to_string()),
                })
                .collect();
            let failures: Vec<usize> = hits
                .iter()
                .enumerate()
                .filter_map(|(i, h)| matches!(h, RimHit::Fail(_)).then_some(i))
                .collect();
            if !failures.is_empty() {
                let first = failures[0];
                let reason = match &hits[first] {
                    RimHit::Fail(m) => m.clone(),
                    _ => unreachable!(),
                };
                return Err(Error::PatchNotEntirelyCaptured {
                    failed: failures.len(),
                    total: seeds.len(),
                    first_seed: seeds[first],
                    first_reason: reason,
                    seeds: failures,
                });
            }
            let mut pts = Vec::with_capacity(hits.len());
            let mut params = Vec::with_capacity(hits.len());
            for h in hits {
                match h {
                    RimHit::Ok(p, s) => {
                        pts.push(p);
                        params.push(s);
                    }
                    RimHit::Fail(_) => unreachable!(),
                }
            }
            rings.push((seeds, pts, params));
        }
        PatchKind::TriangleSet { .. } => {
            for bloop in &source.boundary_loops {
                let seeds: Vec<Vec3> = bloop.iter().map(|&i| source.vertex(i)).collect();
                let pts: Vec<Vec3> = bloop.iter().map(|&i| hit_points[i]).collect();
                let params: Vec<f64> = bloop.iter().map(|&i| hit_params[i]).collect();
                rings.push((seeds, pts, params));
            }
        }
    }

    let boundary_in: Vec<Vec<Vec3>> = rings.iter().map(|(s, _, _)| s.clone()).collect();
    let boundary_out: Vec<Vec<Vec3>> = rings.iter().map(|(_, p, _)| p.clone()).collect();
    let _ = image;

    // Rung schedule: parameter fractions shared by all boundary streamlines,
    // dense wherever the probe streamline turns quickly.
    let fractions = rung_schedule(field, rings[0].0[0], rings[0].2[0], cfg)?;

    let mut streamlines_dec = Vec::new();
    let mut samples = Vec::new();
    let mut degenerate = 0usize;
    let mut max_tangency: Option<f64> = None;

    for (seeds, _, params) in &rings {
        let lines: Vec<Vec<(f64, Vec3)>> = seeds
            .par_iter()
            .zip(params)
            .map(|(&seed, &s_hit)| {
                let ps: Vec<f64> = fractions.iter().map(|f| f * s_hit).collect();
                trace_at_parameters(field, seed, cfg, &ps).unwrap_or_else(|_| vec![(0.0, seed)])
            })
            .collect();

        let (loop_samples, loop_degenerate, loop_max) =
            mantle_stats_from_lines(field, &lines);
        degenerate += loop_degenerate;
        if let Some(m) = loop_max {
            max_tangency = Some(max_tangency.map_or(m, |cur| cur.max(m)));
        }
        // Keep a bounded subset of the samples and streamlines for reports.
        let keep_every = (loop_samples.len() / 20_000).max(1);
        samples.extend(
            loop_samples
                .into_iter()
                .enumerate()
                .filter_map(|(k, s)| (k % keep_every == 0).then_some(s)),
        );
        let line_stride = (lines.len() / 128).max(1);
        let dec: Vec<Vec<(f64, Vec3)>> = lines
            .iter()
            .step_by(line_stride)
            .map(|line| {
                let rung_stride = (line.len() / 128).max(1);
                let mut d: Vec<(f64, Vec3)> =
                    line.iter().step_by(rung_stride).copied().collect();
                if let (Some(&last_kept), Some(&last)) = (d.last(), line.last()) {
                    if last_kept != last {
                        d.push(last);
                    }
                }
                d
            })
            .collect();
        streamlines_dec.push(dec);
    }

    Ok(MantleData {
        streamlines: streamlines_dec,
        samples,
        degenerate,
        max_tangency,
        boundary_in,
        boundary_out,
    })
}

fn orthobasis(axis: Vec3) -> (Vec3, Vec3) {
    let helper = if axis.x.abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let e1 = (helper - axis * helper.dot(axis)).normalized();
    (e1, axis.cross(e1))
}

/// Parameter fractions in [0, 1] for mantle rungs, spaced so the probe
/// streamline turns at most `MANTLE_MAX_TURN` between consecutive rungs and
/// never skips more than 1/64 of its arc length.
fn rung_schedule(field: &Field, seed: Vec3, s_hit: f64, cfg: &TraceConfig) -> Result<Vec<f64>> {
    let params: Vec<f64> = (0..=MANTLE_PROBE)
        .map(|k| s_hit * k as f64 / MANTLE_PROBE as f64)
        .collect();
    let probe = trace_at_parameters(field, seed, cfg, &params)?;
    if probe.len() < 3 {
        return Ok(vec![0.0, 0.5, 1.0]);
    }
    let total_arc: f64 = probe.windows(2).map(|w| (w[1].1 - w[0].1).norm()).sum();
    let max_chunk = total_arc / 64.0;

    let mut fractions = vec![0.0];
    let mut turn_acc = 0.0;
    let mut arc_acc = 0.0;
    let mut prev_dir: Option<Vec3> = None;
    for w in probe.windows(2) {
        let chord = w[1].1 - w[0].1;
        let len = chord.norm();
        if len == 0.0 {
            continue;
        }
        let dir = chord / len;
        if let Some(p) = prev_dir {
            turn_acc += p.angle_to(dir);
        }
        prev_dir = Some(dir);
        arc_acc += len;
        if turn_acc >= MANTLE_MAX_TURN || arc_acc >= max_chunk {
            fractions.push(w[1].0 / s_hit);
            turn_acc = 0.0;
            arc_acc = 0.0;
        }
    }
    if *fractions.last().unwrap() < 1.0 {
        fractions.push(1.0);
    }
    fractions.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    Ok(fractions)
}

/// Scans boundary streamlines of one closed ring and estimates the mantle
/// normal at each interior rung: the along-direction by a central difference
/// on the rung schedule, the across-direction by a five-point stencil over
/// the (uniformly spaced) ring index. Returns the samples, the number of
/// degenerate chords, and the tangency maximum over everything scanned.
fn mantle_stats_from_lines(
    field: &Field,
    lines: &[Vec<(f64, Vec3)>],
) -> (Vec<MantleSample>, usize, Option<f64>) {
    let n = lines.len();
    let mut samples = Vec::new();
    let mut degenerate = 0usize;
    let mut max_tan: Option<f64> = None;
    if n < 5 {
        return (samples, degenerate, max_tan);
    }
    for i in 0..n {
        let l_m2 = &lines[(i + n - 2) % n];
        let l_m1 = &lines[(i + n - 1) % n];
        let cur = &lines[i];
        let l_p1 = &lines[(i + 1) % n];
        let l_p2 = &lines[(i + 2) % n];
        let rungs = cur.len();
        if rungs < 3 {
            degenerate += 1;
            continue;
        }
        for j in 1..rungs - 1 {
            if j >= l_m2.len() || j >= l_m1.len() || j >= l_p1.len() || j >= l_p2.len() {
                continue;
            }
            // Rung spacing is non-uniform, so the along-direction uses the
            // second-order three-point derivative for unequal intervals;
            // collinear rungs (ruled mantles) still give an exact direction.
            let (s_minus, p_minus) = cur[j - 1];
            let (s_mid, p_mid) = cur[j];
            let (s_plus, p_plus) = cur[j + 1];
            let (h_minus, h_plus) = (s_mid - s_minus, s_plus - s_mid);
            let along = p_plus * (h_minus * h_minus)
                + p_mid * (h_plus * h_plus - h_minus * h_minus)
                - p_minus * (h_plus * h_plus);
            let across =
                l_m2[j].1 - 8.0 * l_m1[j].1 + 8.0 * l_p1[j].1 - l_p2[j].1;
            let scale = along.norm().max(across.norm());
            if scale == 0.0 || along.norm() < 1e-14 * scale || across.norm() < 1e-14 * scale {
                degenerate += 1;
                continue;
            }
            let normal = along.cross(across);
            if normal.norm() < 1e-14 * along.norm() * across.norm() {
                degenerate += 1;
                continue;
            }
            let point = cur[j].1;
            let Ok(velocity) = field.eval(point) else {
                continue;
            };
            let normal = normal.normalized();
            let speed = velocity.norm();
            if speed > 0.0 {
                let t = velocity.dot(normal).abs() / speed;
                max_tan = Some(max_tan.map_or(t, |cur| cur.max(t)));
            }
            samples.push(MantleSample { point, velocity, normal });
        }
    }
    (samples, degenerate, max_tan)
}

/// Advects the patch and checks the flux-conservation identity
/// flux(D) = flux(D*) against `rel_err_tolerance`.
pub fn verify_lemma(
    field: &Field,
    patch: &PatchSpec,
    r: f64,
    resolution: usize,
    cfg: &TraceConfig,
    rel_err_tolerance: f64,
) -> Result<TubeResult> {
    advect_patch_with_tolerance(field, patch, r, resolution, cfg, rel_err_tolerance)
}

fn check_injective(image: &PatchTriangulation, tol: f64) -> bool {
    // Hash image directions into angular bins of width > tol/r so collisions
    // only need checking within neighboring bins.
    use std::collections::HashMap;
    let r = image.radius;
    let cell = (8.0 * tol / r).max(1e-9);
    let key = |v: Vec3| {
        (
            (v.x / cell).floor() as i64,
            (v.y / cell).floor() as i64,
            (v.z / cell).floor() as i64,
        )
    };
    let mut bins: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, &v) in image.verts_unit.iter().enumerate() {
        bins.entry(key(v)).or_default().push(i);
    }
    for (i, &v) in image.verts_unit.iter().enumerate() {
        let (kx, ky, kz) = key(v);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(cands) = bins.get(&(kx + dx, ky + dy, kz + dz)) else {
                        continue;
                    };
                    for &j in cands {
                        if j > i && (image.verts_unit[j] - v).norm() * r < tol {
                            return false;
                        }
                    }
                }
            }
        }
    }
    true
}

/// Maximum over mantle samples of |u . n| / |u| for the discrete surface
/// normal n; zero for a perfectly streamline-ruled mantle.
pub fn mantle_tangency(tube: &TubeResult) -> Result<f64> {
    if tube.degenerate_mantle_chords > 0 {
        return Err(Error::DegenerateMantle);
    }
    tube.max_mantle_tangency.ok_or(Error::DegenerateMantle)
}

/// Advects two disjoint patches and tests whether their images overlap on
/// the inner sphere. Errors if the patches are not disjoint to begin with.
pub fn disjoint_images(
    field: &Field,
    patch1: &PatchSpec,
    patch2: &PatchSpec,
    r: f64,
    resolution: usize,
    cfg: &TraceConfig,
) -> Result<bool> {
    if !patch1.disjoint_from(patch2) {
        return Err(Error::PatchesOverlap);
    }
    let tube1 = advect_patch(field, patch1, r, resolution, cfg)?;
    let tube2 = advect_patch(field, patch2, r, resolution, cfg)?;
    let tol_angle = cfg.crossing_tol / r;
    Ok(!images_overlap(&tube1.image, &tube2.image, tol_angle))
}

/// Spherical triangle overlap between two image triangulations, with an
/// angular slack: contacts shallower than `tol_angle` do not count.
fn images_overlap(a: &PatchTriangulation, b: &PatchTriangulation, tol_angle: f64) -> bool {
    // Bounding-cone prefilter.
    let cones = |p: &PatchTriangulation| -> Vec<(Vec3, f64)> {
        p.tris
            .iter()
            .map(|&[i, j, k]| {
                let c = (p.verts_unit[i] + p.verts_unit[j] + p.verts_unit[k]).normalized();
                let r = [i, j, k]
                    .iter()
                    .map(|&v| c.angle_to(p.verts_unit[v]))
                    .fold(0.0f64, f64::max);
                (c, r)
            })
            .collect()
    };
    let ca = cones(a);
    let cb = cones(b);
    for (ta, &[a0, a1, a2]) in a.tris.iter().enumerate() {
        let t1 = [a.verts_unit[a0], a.verts_unit[a1], a.verts_unit[a2]];
        for (tb, &[b0, b1, b2]) in b.tris.iter().enumerate() {
            let (c1, r1) = ca[ta];
            let (c2, r2) = cb[tb];
            if c1.angle_to(c2) > r1 + r2 + tol_angle {
                continue;
            }
            let t2 = [b.verts_unit[b0], b.verts_unit[b1], b.verts_unit[b2]];
            if spherical_tris_overlap(t1, t2, tol_angle) {
                return true;
            }
        }
    }
    false
}

fn spherical_tris_overlap(t1: [Vec3; 3], t2: [Vec3; 3], tol: f64) -> bool {
    // Vertex of one strictly inside the other.
    for &v in &t2 {
        if point_in_spherical_tri(v, t1, tol) {
            return true;
        }
    }
    for &v in &t1 {
        if point_in_spherical_tri(v, t2, tol) {
            return true;
        }
    }
    // Edge-arc crossings.
    for i in 0..3 {
        let (p1, q1) = (t1[i], t1[(i + 1) % 3]);
        for j in 0..3 {
            let (p2, q2) = (t2[j], t2[(j + 1) % 3]);
            if arcs_cross(p1, q1, p2, q2, tol) {
                return true;
            }
        }
    }
    false
}

/// Strictly inside with margin `tol` (radians): on the inner side of each
/// oriented edge plane by more than tol.
fn point_in_spherical_tri(x: Vec3, tri: [Vec3; 3], tol: f64) -> bool {
    let centroid = (tri[0] + tri[1] + tri[2]).normalized();
    for i in 0..3 {
        let (p, q) = (tri[i], tri[(i + 1) % 3]);
        let mut n = p.cross(q);
        let norm = n.norm();
        if norm < 1e-15 {
            return false;
        }
        n = n / norm;
        let side = if n.dot(centroid) >= 0.0 { 1.0 } else { -1.0 };
        if side * n.dot(x) <= tol {
            return false;
        }
    }
    true
}

fn arcs_cross(p1: Vec3, q1: Vec3, p2: Vec3, q2: Vec3, tol: f64) -> bool {
    let n1 = p1.cross(q1);
    let n2 = p2.cross(q2);
    let l = n1.cross(n2);
    let norm = l.norm();
    if norm < 1e-15 {
        // Near-coplanar great circles; the vertex-inside tests handle
        // genuine overlap of such arcs.
        return false;
    }
    let l = l / norm;
    for cand in [l, -l] {
        if within_arc(p1, q1, n1, cand, tol) && within_arc(p2, q2, n2, cand, tol) {
            return true;
        }
    }
    false
}

fn within_arc(p: Vec3, q: Vec3, n: Vec3, x: Vec3, tol: f64) -> bool {
    let n_unit = n / n.norm().max(1e-300);
    p.cross(x).dot(n_unit) > tol && x.cross(q).dot(n_unit) > tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::superpose;

    fn cfg() -> TraceConfig {
        TraceConfig::for_outer_radius(1.0)
    }

    fn z_axis() -> Vec3 {
        Vec3::new(0.0, 0.0, 1.0)
    }

    #[test]
    fn sink_cap_image_is_radially_scaled() {
        let field = Field::sink(1.0);
        let patch = PatchSpec::cap(z_axis(), PI / 6.0, 1.0).unwrap();
        let tube = advect_patch(&field, &patch, 0.2, 16, &cfg()).unwrap();
        for (src, img) in tube.source.verts_unit.iter().zip(&tube.image.verts_unit) {
            let image_pt = *img * tube.image.radius;
            let expect = *src * 0.2;
            assert!(
                (image_pt - expect).norm() < 1e-7,
                "image {image_pt:?} vs {expect:?}"
            );
        }
        assert!(tube.injective);
        assert_eq!(tube.image_inflow_violations, 0);
    }

    #[test]
    fn uniform_cap_image_preserves_xy() {
        // Vertical lines meet the inner sphere at z = +sqrt(r^2 - rho^2).
        let field = Field::uniform(Vec3::new(0.0, 0.0, -1.0));
        let half_angle = (0.05f64).asin();
        let patch = PatchSpec::cap(z_axis(), half_angle, 1.0).unwrap();
        let tube = advect_patch(&field, &patch, 0.1, 16, &cfg()).unwrap();
        for (src, img) in tube.source.verts_unit.iter().zip(&tube.image.verts_unit) {
            let s = *src * 1.0;
            let p = *img * tube.image.radius;
            assert!((p.x - s.x).abs() < 1e-7);
            assert!((p.y - s.y).abs() < 1e-7);
            let rho_sq = s.x * s.x + s.y * s.y;
            let expect_z = (0.01 - rho_sq).sqrt();
            assert!((p.z - expect_z).abs() < 1e-6, "z {} vs {expect_z}", p.z);
        }
    }

    #[test]
    fn bad_radii_for_patch_advection() {
        let field = Field::sink(1.0);
        let patch = PatchSpec::cap(z_axis(), PI / 6.0, 1.0).unwrap();
        assert!(matches!(
            advect_patch(&field, &patch, 1.5, 8, &cfg()),
            Err(Error::BadRadii { .. })
        ));
    }

    #[test]
    fn outflow_patch_is_rejected_with_offenders() {
        // Under the uniform field the southern cap is outflow everywhere.
        let field = Field::uniform(Vec3::new(0.0, 0.0, -1.0));
        let patch = PatchSpec::cap(Vec3::new(0.0, 0.0, -1.0), 0.3, 1.0).unwrap();
        match advect_patch(&field, &patch, 0.1, 8, &cfg()) {
            Err(Error::PatchNotEntirelyCaptured { failed, total, .. }) => {
                assert_eq!(failed, total);
            }
            other => panic!("expected PatchNotEntirelyCaptured, got {other:?}"),
        }
    }

    #[test]
    fn sink_cap_lemma_solid_angle_oracle() {
        // Flux through a cap of the unit-strength sink is minus its
        // solid-angle fraction.
        let field = Field::sink(1.0);
        let patch = PatchSpec::cap(z_axis(), PI / 6.0, 1.0).unwrap();
        let tube = verify_lemma(&field, &patch, 0.2, 64, &cfg(), 1e-3).unwrap();
        let want = -(1.0 - (PI / 6.0).cos()) / 2.0;
        assert!(
            ((tube.flux_d - want) / want).abs() < 1e-4,
            "flux_d {} vs {want}",
            tube.flux_d
        );
        assert!(
            ((tube.flux_dstar - want) / want).abs() < 1e-4,
            "flux_dstar {} vs {want}",
            tube.flux_dstar
        );
        assert!(tube.rel_err < 1e-4, "rel_err {}", tube.rel_err);
        assert!(tube.pass);
    }

    #[test]
    fn uniform_thin_cap_lemma_shadow_oracle() {
        let field = Field::uniform(Vec3::new(0.0, 0.0, -1.0));
        let half_angle = (0.05f64).asin();
        let patch = PatchSpec::cap(z_axis(), half_angle, 1.0).unwrap();
        let tube = verify_lemma(&field, &patch, 0.1, 64, &cfg(), 1e-2).unwrap();
        let want = -PI * 0.05 * 0.05;
        assert!(((tube.flux_d - want) / want).abs() < 0.01);
        assert!(((tube.flux_dstar - want) / want).abs() < 0.01);
        assert!(tube.rel_err < 1e-2);
        assert!(tube.pass);
    }

    #[test]
    fn superposition_lemma_tightens_under_refinement() {
        let field = superpose(1.0, &Field::sink(1.0), 1.0, &Field::rotating(2.0));
        let patch = PatchSpec::cap(z_axis(), PI / 8.0, 1.0).unwrap();
        let coarse = verify_lemma(&field, &patch, 0.2, 32, &cfg(), 1e-2).unwrap();
        let fine = verify_lemma(&field, &patch, 0.2, 64, &cfg(), 1e-2).unwrap();
        assert!(coarse.rel_err < 1e-2, "coarse {}", coarse.rel_err);
        assert!(fine.rel_err < coarse.rel_err, "{} vs {}", fine.rel_err, coarse.rel_err);
        assert!(fine.pass);
    }

    #[test]
    fn partitioned_cap_fluxes_add_up() {
        // Split a cap into an inner cap plus an annular triangle set drawn
        // from a mesh-based decomposition of the same region: fluxes add.
        let field = Field::sink(1.0);
        let full = PatchSpec::cap(z_axis(), 0.5, 1.0).unwrap();
        let tube_full = advect_patch(&field, &full, 0.2, 48, &cfg()).unwrap();
        let half = PatchSpec::cap(z_axis(), 0.25, 1.0).unwrap();
        let tube_half = advect_patch(&field, &half, 0.2, 48, &cfg()).unwrap();
        // Radial field: flux of cap(theta) = -(1 - cos theta)/2 exactly, so
        // the difference must match the annulus contribution.
        let annulus_flux = tube_full.flux_d - tube_half.flux_d;
        let want = -((0.5f64.cos() - 0.25f64.cos()) / 2.0).abs();
        assert!(((annulus_flux - want) / want).abs() < 1e-3);
    }

    #[test]
    fn mantle_is_tangent_for_cone_and_cylinder() {
        // Sink: the mantle is an exact cone ruled by radial lines.
        let field = Field::sink(1.0);
        let patch = PatchSpec::cap(z_axis(), PI / 6.0, 1.0).unwrap();
        let tube = advect_patch(&field, &patch, 0.2, 24, &cfg()).unwrap();
        let t = mantle_tangency(&tube).unwrap();
        assert!(t < 1e-6, "cone tangency {t:e}");

        // Uniform: the mantle is a vertical cylinder.
        let field = Field::uniform(Vec3::new(0.0, 0.0, -1.0));
        let patch = PatchSpec::cap(z_axis(), (0.05f64).asin(), 1.0).unwrap();
        let tube = advect_patch(&field, &patch, 0.1, 24, &cfg()).unwrap();
        let t = mantle_tangency(&tube).unwrap();
        assert!(t < 1e-6, "cylinder tangency {t:e}");
    }

    #[test]
    fn mantle_tangency_small_on_twisted_tube() {
        let field = superpose(1.0, &Field::sink(1.0), 1.0, &Field::rotating(2.0));
        let patch = PatchSpec::cap(z_axis(), PI / 8.0, 1.0).unwrap();
        let tube = advect_patch(&field, &patch, 0.2, 64, &cfg()).unwrap();
        let t = mantle_tangency(&tube).unwrap();
        assert!(t < 1e-4, "twisted tangency {t:e}");
    }

    #[test]
    fn degenerate_mantle_reported() {
        let field = Field::sink(1.0);
        let patch = PatchSpec::cap(z_axis(), PI / 6.0, 1.0).unwrap();
        let mut tube = advect_patch(&field, &patch, 0.2, 8, &cfg()).unwrap();
        // Repeated boundary points collapse the cross-chords.
        let first = tube.mantle_streamlines[0][0].clone();
        let lines: Vec<Vec<(f64, Vec3)>> =
            (0..8).map(|_| first.clone()).collect();
        let (samples, degenerate, max_tan) = mantle_stats_from_lines(&field, &lines);
        tube.mantle_samples = samples;
        tube.degenerate_mantle_chords = degenerate;
        tube.max_mantle_tangency = max_tan;
        assert!(tube.degenerate_mantle_chords > 0);
        assert!(matches!(mantle_tangency(&tube), Err(Error::DegenerateMantle)));
    }

    #[test]
    fn disjoint_caps_have_disjoint_images() {
        // Sink: the radial map preserves angular separation.
        let field = Field::sink(1.0);
        let p1 = PatchSpec::cap(z_axis(), PI / 8.0, 1.0).unwrap();
        let p2 = PatchSpec::cap(Vec3::new(1.0, 0.0, 0.0), PI / 8.0, 1.0).unwrap();
        assert!(disjoint_images(&field, &p1, &p2, 0.2, 16, &cfg()).unwrap());

        // Uniform: (x, y) are preserved by the vertical map.
        let field = Field::uniform(Vec3::new(0.0, 0.0, -1.0));
        let p1 = PatchSpec::cap(z_axis(), 0.02, 1.0).unwrap();
        let tilted = Vec3::new((0.06f64).sin(), 0.0, (0.06f64).cos());
        let p2 = PatchSpec::cap(tilted, 0.02, 1.0).unwrap();
        assert!(disjoint_images(&field, &p1, &p2, 0.1, 12, &cfg()).unwrap());
    }

    #[test]
    fn identical_patches_violate_precondition() {
        let field = Field::sink(1.0);
        let p = PatchSpec::cap(z_axis(), PI / 8.0, 1.0).unwrap();
        assert!(matches!(
            disjoint_images(&field, &p, &p, 0.2, 8, &cfg()),
            Err(Error::PatchesOverlap)
        ));
    }

    #[test]
    fn partition_into_sub_patches_preserves_flux_sums() {
        // Disjoint triangle-set sub-patches of one region, on one mesh:
        // source fluxes regroup exactly, image fluxes regroup to quadrature
        // rounding (shared vertices advect identically), and the images are
        // pairwise disjoint.
        let field = Field::uniform(Vec3::new(0.0, 0.0, -1.0));
        let mesh = Arc::new(GeoMesh::build(1.0, 4).unwrap());
        let rho = |c: Vec3| (c.x * c.x + c.y * c.y).sqrt();
        let bands = [(0.0, 0.2), (0.2, 0.35), (0.35, 0.5)];
        let sub_masks: Vec<PatchMask> = bands
            .iter()
            .map(|&(lo, hi)| {
                PatchMask::from_centroid_predicate(&mesh, |c| {
                    c.z > 0.0 && rho(c) >= lo && rho(c) < hi
                })
            })
            .collect();
        let full_mask = PatchMask::from_centroid_predicate(&mesh, |c| {
            c.z > 0.0 && rho(c) < 0.5
        });

        let r = 0.7;
        let full = advect_patch(
            &field,
            &PatchSpec::triangle_set(mesh.clone(), full_mask).unwrap(),
            r,
            1,
            &cfg(),
        )
        .unwrap();
        let subs: Vec<TubeResult> = sub_masks
            .iter()
            .map(|m| {
                advect_patch(
                    &field,
                    &PatchSpec::triangle_set(mesh.clone(), m.clone()).unwrap(),
                    r,
                    1,
                    &cfg(),
                )
                .unwrap()
            })
            .collect();
        let sum_d: f64 = subs.iter().map(|t| t.flux_d).sum();
        let sum_dstar: f64 = subs.iter().map(|t| t.flux_dstar).sum();
        assert!((sum_d - full.flux_d).abs() < 1e-10, "{sum_d} vs {}", full.flux_d);
        assert!(
            (sum_dstar - full.flux_dstar).abs() < 1e-10,
            "{sum_dstar} vs {}",
            full.flux_dstar
        );
        for i in 0..subs.len() {
            for j in i + 1..subs.len() {
                let p_i = PatchSpec::triangle_set(mesh.clone(), sub_masks[i].clone()).unwrap();
                let p_j = PatchSpec::triangle_set(mesh.clone(), sub_masks[j].clone()).unwrap();
                assert!(
                    disjoint_images(&field, &p_i, &p_j, r, 1, &cfg()).unwrap(),
                    "images of sub-patches {i} and {j} overlap"
                );
            }
        }
    }

    #[test]
    fn triangle_set_patch_advects_under_uniform_field() {
        // Polar cap and a mid-latitude annulus from mesh triangles; both
        // reach B_0.6 under the vertical field, and their images stay
        // disjoint because (x, y) are preserved.
        let field = Field::uniform(Vec3::new(0.0, 0.0, -1.0));
        let mesh = Arc::new(GeoMesh::build(1.0, 5).unwrap());
        let rho = |c: Vec3| (c.x * c.x + c.y * c.y).sqrt();
        let cap_mask =
            PatchMask::from_centroid_predicate(&mesh, |c| c.z > 0.0 && rho(c) < 0.15);
        let ann_mask = PatchMask::from_centroid_predicate(&mesh, |c| {
            c.z > 0.0 && rho(c) > 0.3 && rho(c) < 0.5
        });
        let cap = PatchSpec::triangle_set(mesh.clone(), cap_mask).unwrap();
        let ann = PatchSpec::triangle_set(mesh.clone(), ann_mask).unwrap();
        assert!(disjoint_images(&field, &cap, &ann, 0.6, 8, &cfg()).unwrap());

        // The annulus has two boundary loops.
        let tri = triangulate_patch(&ann, 1).unwrap();
        assert_eq!(tri.boundary_loops.len(), 2);
    }

    #[test]
    fn cap_triangulation_area_matches_solid_angle() {
        let patch = PatchSpec::cap(z_axis(), 0.7, 2.0).unwrap();
        let tri = triangulate_patch(&patch, 32).unwrap();
        let want = 2.0 * PI * (1.0 - 0.7f64.cos()) * 4.0;
        assert!(((tri.area() - want) / want).abs() < 1e-3);
        // Spot-check orientation: all triangles wind outward.
        for &[a, b, c] in &tri.tris {
            let n = (tri.verts_unit[b] - tri.verts_unit[a])
                .cross(tri.verts_unit[c] - tri.verts_unit[a]);
            assert!(n.dot(tri.verts_unit[a]) > 0.0);
        }
    }

    #[test]
    fn off_export_contains_three_groups() {
        let field = Field::sink(1.0);
        let patch = PatchSpec::cap(z_axis(), PI / 6.0, 1.0).unwrap();
        let tube = advect_patch(&field, &patch, 0.2, 6, &cfg()).unwrap();
        let off = tube.to_off();
        assert!(off.starts_with("OFF\n"));
        assert!(off.contains("# group D\n"));
        assert!(off.contains("# group Dstar\n"));
        assert!(off.contains("# group mantle\n"));
    }
}
