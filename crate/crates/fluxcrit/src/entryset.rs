//! Classification of the entry set on the outer sphere.
//!
//! Each triangle of a geodesic mesh on the sphere of radius `alpha` is
//! classified by tracing the streamline from its projected centroid: seeds
//! whose streamline reaches the ball of radius `r` before leaving the ball
//! of radius `alpha` are members of the entry set. Outflow seeds can never
//! be members; seeds whose normal velocity component is negligible are set
//! aside as tangential (the entry flux is insensitive to them); traces that
//! run out of budget, stagnate, or hit unevaluable field regions leave their
//! triangle undetermined.
//!
//! Membership decided at a centroid stands in for the whole triangle, so the
//! set measure and the entry flux are reported as intervals: the certified
//! member total on the low side, plus everything undetermined on the high
//! side. The boundary band (triangles whose neighbors disagree) is where
//! centroid sampling can err; `refine` re-resolves exactly that band at a
//! finer subdivision, which can only narrow the intervals.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::numeric::CompensatedSum;
use crate::report::Json;
use crate::spheremesh::{
    integrate_flux, spherical_excess, subdivide_spherical, tri_flux, GeoMesh, PatchMask,
};
use crate::tracer::{trace_first_hit, TraceConfig, TraceFate};
use crate::vec3::Vec3;

/// Relative tangency threshold: |u . n| below this fraction of |u|
/// classifies the seed as tangential rather than inflow or outflow.
pub const TANGENCY_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriStatus {
    Member,
    NonMember,
    Undetermined,
    Tangential,
}

impl TriStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TriStatus::Member => "member",
            TriStatus::NonMember => "non_member",
            TriStatus::Undetermined => "undetermined",
            TriStatus::Tangential => "tangential",
        }
    }
}

/// Per-triangle classification of the entry set, with interval estimates of
/// its surface measure and entry flux.
#[derive(Debug, Clone)]
pub struct EntrySetMap {
    pub alpha: f64,
    pub r: f64,
    pub level: u32,
    pub status: Vec<TriStatus>,
    /// Certified member area.
    pub measure_lo: f64,
    /// Member area plus everything undetermined.
    pub measure_hi: f64,
    /// Magnitude bounds on the entry flux.
    pub flux_lo_mag: f64,
    pub flux_hi_mag: f64,
    /// Signed flux through the member triangles; non-positive, inflow.
    pub signed_flux_member: f64,
    /// Total area of triangles whose status disagrees with a neighbor's;
    /// the region where centroid sampling can misjudge membership.
    pub boundary_band_area: f64,
    /// Subdivision depth (relative to the base mesh) at which the boundary
    /// band has been resolved; 0 for a plain classification.
    pub refine_depth: u32,
    pub notes: Vec<String>,
    mesh: Arc<GeoMesh>,
}

/// Where a classified seed ended up, independent of triangle bookkeeping.
fn classify_seed(field: &Field, seed_unit: Vec3, r: f64, alpha: f64, cfg: &TraceConfig)
    -> (TriStatus, Option<String>)
{
    let seed = seed_unit * alpha;
    let u = match field.eval(seed) {
        Ok(u) => u,
        Err(e) => return (TriStatus::Undetermined, Some(e.to_string())),
    };
    let speed = u.norm();
    if speed < cfg.stagnation_speed {
        return (TriStatus::Tangential, None);
    }
    let inward = u.dot(seed_unit);
    if inward.abs() < TANGENCY_THRESHOLD * speed {
        return (TriStatus::Tangential, None);
    }
    if inward > 0.0 {
        return (TriStatus::NonMember, None);
    }
    match trace_first_hit(field, seed, r, alpha, cfg) {
        Ok(res) => match res.fate {
            TraceFate::EnteredInner => (TriStatus::Member, None),
            TraceFate::ExitedOuter => (TriStatus::NonMember, None),
            TraceFate::BudgetExhausted | TraceFate::Stagnated => (TriStatus::Undetermined, None),
        },
        Err(e) => (TriStatus::Undetermined, Some(e.to_string())),
    }
}

/// Classifies the entry set for radii `r < alpha` on a fresh mesh at the
/// given subdivision level.
pub fn classify(
    field: &Field,
    alpha: f64,
    r: f64,
    level: u32,
    cfg: &TraceConfig,
) -> Result<EntrySetMap> {
    let mesh = Arc::new(GeoMesh::build(alpha, level)?);
    classify_on(&mesh, field, r, cfg)
}

/// Classifies on an existing outer-sphere mesh, so radius scans can share
/// one mesh (and their member sets stay triangle-wise comparable).
pub fn classify_on(
    mesh: &Arc<GeoMesh>,
    field: &Field,
    r: f64,
    cfg: &TraceConfig,
) -> Result<EntrySetMap> {
    cfg.validate()?;
    let alpha = mesh.radius();
    if !(r > 0.0 && r < alpha) {
        return Err(Error::BadRadii { r, alpha });
    }

    // Triangle classifications are independent; results are collected in
    // triangle order so every downstream reduction is order-fixed.
    let outcomes: Vec<(TriStatus, Option<String>)> = (0..mesh.tri_count())
        .into_par_iter()
        .map(|t| classify_seed(field, mesh.centroid_unit(t), r, alpha, cfg))
        .collect();

    let status: Vec<TriStatus> = outcomes.iter().map(|(s, _)| *s).collect();
    let mut notes = Vec::new();
    let failures: Vec<(usize, &String)> = outcomes
        .iter()
        .enumerate()
        .filter_map(|(t, (_, note))| note.as_ref().map(|n| (t, n)))
        .collect();
    if !failures.is_empty() {
        let (t, first) = failures[0];
        notes.push(format!(
            "{} seed(s) left undetermined by trace errors; first at triangle {t}: {first}",
            failures.len()
        ));
    }

    finish_map(mesh.clone(), field, r, status, notes, None, 0)
}

/// Child-level resolution of the boundary band, carried by refined maps.
#[derive(Debug, Clone, Default)]
struct BandResolution {
    member_area: f64,
    undetermined_area: f64,
    member_flux: f64,
    undetermined_flux_mag: f64,
    /// Area of children disagreeing with a sibling: the residual band.
    child_band_area: f64,
}

fn finish_map(
    mesh: Arc<GeoMesh>,
    field: &Field,
    r: f64,
    status: Vec<TriStatus>,
    mut notes: Vec<String>,
    band_resolution: Option<(Vec<bool>, BandResolution)>,
    refine_depth: u32,
) -> Result<EntrySetMap> {
    let alpha = mesh.radius();
    let in_resolved_band =
        |t: usize| band_resolution.as_ref().is_some_and(|(band, _)| band[t]);

    let member_mask = PatchMask::from_marks(
        (0..mesh.tri_count())
            .map(|t| status[t] == TriStatus::Member && !in_resolved_band(t))
            .collect(),
    );
    let undet_mask = PatchMask::from_marks(
        (0..mesh.tri_count())
            .map(|t| status[t] == TriStatus::Undetermined && !in_resolved_band(t))
            .collect(),
    );

    let mut measure_lo = member_mask.marked_area(&mesh);
    let mut undet_area = undet_mask.marked_area(&mesh);
    let mut signed_flux_member = integrate_flux(&mesh, field, Some(&member_mask))?;
    let mut undet_flux_mag = integrate_flux(&mesh, field, Some(&undet_mask))?.abs();

    if let Some((_, res)) = &band_resolution {
        measure_lo += res.member_area;
        undet_area += res.undetermined_area;
        signed_flux_member += res.member_flux;
        undet_flux_mag += res.undetermined_flux_mag;
    }

    let flux_lo_mag = signed_flux_member.abs();
    if signed_flux_member > 0.0 {
        notes.push(format!(
            "member flux came out positive ({signed_flux_member:e}); the field is not inflow \
             across the certified member set"
        ));
    }

    let boundary_band_area = match &band_resolution {
        Some((_, res)) => res.child_band_area,
        None => base_band_area(&mesh, &status),
    };

    Ok(EntrySetMap {
        alpha,
        r,
        level: mesh.level(),
        status,
        measure_lo,
        measure_hi: measure_lo + undet_area,
        flux_lo_mag,
        flux_hi_mag: flux_lo_mag + undet_flux_mag,
        signed_flux_member,
        boundary_band_area,
        refine_depth,
        notes,
        mesh,
    })
}

fn base_band_area(mesh: &GeoMesh, status: &[TriStatus]) -> f64 {
    let neighbors = mesh.edge_neighbors();
    CompensatedSum::sum_iter((0..mesh.tri_count()).filter(|&t| neighbors[t]
            .iter()
            .any(|&n| status[n] != status[t])).map(|t| mesh.area(t)))
}

impl EntrySetMap {
    pub fn mesh(&self) -> &Arc<GeoMesh> {
        &self.mesh
    }

    pub fn count(&self, s: TriStatus) -> usize {
        self.status.iter().filter(|&&x| x == s).count()
    }

    pub fn member_mask(&self) -> PatchMask {
        PatchMask::from_marks(self.status.iter().map(|&s| s == TriStatus::Member).collect())
    }

    /// Undetermined area relative to the candidate (member + undetermined)
    /// area; zero when nothing is undetermined.
    pub fn undetermined_fraction(&self) -> f64 {
        let width = self.measure_hi - self.measure_lo;
        if width <= 0.0 {
            0.0
        } else {
            width / self.measure_hi
        }
    }

    pub fn is_empty(&self) -> bool {
        self.count(TriStatus::Member) == 0 && self.count(TriStatus::Undetermined) == 0
    }

    /// Re-classifies the boundary band (triangles whose neighbors disagree)
    /// at `extra_levels` finer subdivision; on maps with no disagreeing
    /// neighbors this is a no-op. Refining an already-refined map deepens
    /// the resolution: depths accumulate.
    ///
    /// With trace budgets that resolve every seed, interval widths never
    /// grow under refinement. A budget-starved classification can widen
    /// honestly: a centroid trace may finish inside the budget while its
    /// children do not, and the wider interval reports that uncertainty.
    pub fn refine(&self, field: &Field, extra_levels: u32, cfg: &TraceConfig) -> Result<EntrySetMap> {
        assert!(extra_levels >= 1, "extra_levels must be >= 1");
        cfg.validate()?;
        let depth = self.refine_depth + extra_levels;
        let mesh = &self.mesh;
        let neighbors = mesh.edge_neighbors();
        let band: Vec<bool> = (0..mesh.tri_count())
            .map(|t| neighbors[t].iter().any(|&n| self.status[n] != self.status[t]))
            .collect();
        if band.iter().all(|&b| !b) {
            return Ok(self.clone());
        }
        let alpha = mesh.radius();
        let r = self.r;

        struct ChildOutcome {
            status: TriStatus,
            centroid: Vec3,
            excess: f64,
            flux: f64,
            note: Option<String>,
        }

        let band_tris: Vec<usize> =
            (0..mesh.tri_count()).filter(|&t| band[t]).collect();
        let per_tri: Vec<Vec<ChildOutcome>> = band_tris
            .par_iter()
            .map(|&t| {
                subdivide_spherical(mesh.triangle_unit_verts(t), depth)
                    .into_iter()
                    .map(|child| {
                        let [a, b, c] = child;
                        let centroid = (a + b + c).normalized();
                        let (status, note) = classify_seed(field, centroid, r, alpha, cfg);
                        let flux = match status {
                            TriStatus::Member | TriStatus::Undetermined => {
                                tri_flux(field, alpha, child).unwrap_or(0.0)
                            }
                            _ => 0.0,
                        };
                        ChildOutcome {
                            status,
                            centroid,
                            excess: spherical_excess(a, b, c),
                            flux,
                            note,
                        }
                    })
                    .collect()
            })
            .collect();

        let r2 = alpha * alpha;
        let mut res = BandResolution::default();
        let mut member_area = CompensatedSum::new();
        let mut undet_area = CompensatedSum::new();
        let mut member_flux = CompensatedSum::new();
        let mut undet_flux = CompensatedSum::new();
        let mut child_band = CompensatedSum::new();
        let mut status = self.status.clone();
        let mut notes = self.notes.clone();
        let mut failure_note: Option<String> = None;

        for (children, &t) in per_tri.iter().zip(&band_tris) {
            let mut mixed = false;
            let first = children[0].status;
            for child in children {
                match child.status {
                    TriStatus::Member => {
                        member_area.add(child.excess * r2);
                        member_flux.add(child.flux);
                    }
                    TriStatus::Undetermined => {
                        undet_area.add(child.excess * r2);
                        undet_flux.add(child.flux);
                    }
                    _ => {}
                }
                if child.status != first {
                    mixed = true;
                }
                if failure_note.is_none() {
                    if let Some(n) = &child.note {
                        failure_note = Some(format!("refinement trace failure: {n}"));
                    }
                }
            }
            if mixed {
                // The residual band is the ribbon of children adjacent to a
                // differently classified child, measured geometrically:
                // child centroids sit about one child-edge apart.
                let [va, vb, vc] = mesh.triangle_unit_verts(t);
                let base_edge = va
                    .angle_to(vb)
                    .max(vb.angle_to(vc))
                    .max(vc.angle_to(va));
                let adjacency = 1.2 * base_edge / (1u32 << depth) as f64;
                for child in children {
                    let disagrees = children.iter().any(|c| {
                        c.status != child.status
                            && c.centroid.angle_to(child.centroid) < adjacency
                    });
                    if disagrees {
                        child_band.add(child.excess * r2);
                    }
                }
            } else {
                status[t] = first;
            }
        }
        res.member_area = member_area.value();
        res.undetermined_area = undet_area.value();
        res.member_flux = member_flux.value();
        res.undetermined_flux_mag = undet_flux.value().abs();
        res.child_band_area = child_band.value();
        if let Some(n) = failure_note {
            notes.push(n);
        }

        finish_map(mesh.clone(), field, r, status, notes, Some((band, res)), depth)
    }

    /// Openness diagnostic: perturbs `n_probes` random member centroids by
    /// arc distance `radius` along the sphere, re-traces, and returns the
    /// fraction still classified as members.
    pub fn stability_probe(
        &self,
        field: &Field,
        n_probes: usize,
        radius: f64,
        seed: u64,
        cfg: &TraceConfig,
    ) -> Result<f64> {
        let members: Vec<usize> = (0..self.status.len())
            .filter(|&t| self.status[t] == TriStatus::Member)
            .collect();
        if members.is_empty() {
            return Err(Error::InvalidConfig(
                "stability probe needs at least one member triangle".into(),
            ));
        }
        if n_probes == 0 {
            return Err(Error::InvalidConfig("n_probes must be positive".into()));
        }
        let mut rng = SplitMix64::new(seed);
        let angle = radius / self.alpha;
        let mut still_member = 0usize;
        for _ in 0..n_probes {
            let t = members[(rng.next() % members.len() as u64) as usize];
            let c = self.mesh.centroid_unit(t);
            // Random unit tangent at c.
            let tangent = loop {
                let v = Vec3::new(rng.unit(), rng.unit(), rng.unit());
                let w = v - c * v.dot(c);
                if w.norm() > 1e-6 {
                    break w.normalized();
                }
            };
            let probe = c * angle.cos() + tangent * angle.sin();
            let (status, _) = classify_seed(field, probe.normalized(), self.r, self.alpha, cfg);
            if status == TriStatus::Member {
                still_member += 1;
            }
        }
        Ok(still_member as f64 / n_probes as f64)
    }

    pub fn to_json(&self) -> Json {
        Json::obj([
            ("alpha", self.alpha.into()),
            ("r", self.r.into()),
            ("level", (self.level as i64).into()),
            (
                "counts",
                Json::obj([
                    ("member", self.count(TriStatus::Member).into()),
                    ("non_member", self.count(TriStatus::NonMember).into()),
                    ("undetermined", self.count(TriStatus::Undetermined).into()),
                    ("tangential", self.count(TriStatus::Tangential).into()),
                ]),
            ),
            ("measure_lo", self.measure_lo.into()),
            ("measure_hi", self.measure_hi.into()),
            ("flux_lo_mag", self.flux_lo_mag.into()),
            ("flux_hi_mag", self.flux_hi_mag.into()),
            ("signed_flux_member", self.signed_flux_member.into()),
            ("boundary_band_area", self.boundary_band_area.into()),
            ("refine_depth", (self.refine_depth as i64).into()),
            ("undetermined_fraction", self.undetermined_fraction().into()),
            ("notes", Json::Arr(self.notes.iter().map(|n| Json::Str(n.clone())).collect())),
        ])
    }

    /// Per-triangle status CSV.
    pub fn to_status_csv(&self) -> String {
        let mut out = String::from("tri_index,status\n");
        for (t, s) in self.status.iter().enumerate() {
            out.push_str(&format!("{t},{}\n", s.as_str()));
        }
        out
    }
}

/// Small deterministic RNG for probe sampling.
struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    fn next(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [-1, 1).
    fn unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    }
}
