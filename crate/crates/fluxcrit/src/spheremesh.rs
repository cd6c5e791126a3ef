//! Geodesic sphere meshes and surface quadrature.
//!
//! A `GeoMesh` is an icosahedral subdivision of a centered sphere. The
//! icosahedral family keeps triangle areas nearly uniform, so a triangle mask
//! approximates surface measure with the same resolution everywhere on the
//! sphere. Triangle areas are exact spherical areas (L'Huilier's formula),
//! which makes the total come out at 4 pi r^2 to rounding at every level.
//!
//! Quadrature uses three edge-midpoint nodes per triangle, projected to the
//! sphere, each carrying a third of the spherical area. Edge midpoints are
//! shared between adjacent triangles, so integrals over a mask and its
//! complement add up to the whole-sphere integral using the same node values.
//! Sums always run in triangle-index order with compensated accumulation,
//! which keeps results identical no matter how callers parallelize upstream.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::numeric::CompensatedSum;
use crate::vec3::Vec3;

/// Memory guard: 20 * 4^9 ~ 5.2M triangles.
pub const MAX_LEVEL: u32 = 9;

#[derive(Debug, Clone)]
pub struct GeoMesh {
    radius: f64,
    level: u32,
    /// Unit-sphere vertices; scale by `radius` to get world coordinates.
    verts: Vec<Vec3>,
    tris: Vec<[usize; 3]>,
    /// Spherical area of each triangle on the unit sphere (solid angle).
    excess: Vec<f64>,
}

impl GeoMesh {
    /// Builds the subdivision-`level` icosahedral mesh of the sphere of the
    /// given radius.
    pub fn build(radius: f64, level: u32) -> Result<GeoMesh> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "mesh radius must be positive and finite, got {radius}"
            )));
        }
        if level > MAX_LEVEL {
            return Err(Error::LevelTooLarge { level, max: MAX_LEVEL });
        }
        let (mut verts, mut tris) = icosahedron();
        for _ in 0..level {
            subdivide(&mut verts, &mut tris);
        }
        let excess = tris
            .iter()
            .map(|&[a, b, c]| spherical_excess(verts[a], verts[b], verts[c]))
            .collect();
        Ok(GeoMesh { radius, level, verts, tris, excess })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn tri_count(&self) -> usize {
        self.tris.len()
    }

    pub fn vert_count(&self) -> usize {
        self.verts.len()
    }

    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.tris[t]
    }

    /// Vertex in world coordinates (on the sphere of radius `radius`).
    pub fn vertex(&self, i: usize) -> Vec3 {
        self.verts[i] * self.radius
    }

    /// Triangle vertices as unit vectors.
    pub fn triangle_unit_verts(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.tris[t];
        [self.verts[a], self.verts[b], self.verts[c]]
    }

    /// Triangle centroid projected onto the sphere, world coordinates.
    pub fn centroid(&self, t: usize) -> Vec3 {
        self.centroid_unit(t) * self.radius
    }

    /// Outward unit normal at the projected centroid, n = x/|x|.
    pub fn centroid_unit(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.tris[t];
        (self.verts[a] + self.verts[b] + self.verts[c]).normalized()
    }

    /// Exact spherical area of triangle `t`.
    pub fn area(&self, t: usize) -> f64 {
        self.excess[t] * self.radius * self.radius
    }

    /// Solid angle of triangle `t` (area on the unit sphere).
    pub fn solid_angle(&self, t: usize) -> f64 {
        self.excess[t]
    }

    pub fn total_area(&self) -> f64 {
        let r2 = self.radius * self.radius;
        CompensatedSum::sum_iter(self.excess.iter().map(|&e| e * r2))
    }

    /// The three quadrature nodes of triangle `t`: edge midpoints projected
    /// to the sphere, world coordinates.
    pub fn quad_nodes(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangle_unit_verts(t);
        [
            (a + b).normalized() * self.radius,
            (b + c).normalized() * self.radius,
            (c + a).normalized() * self.radius,
        ]
    }

    /// For each triangle, the indices of the three edge-adjacent triangles
    /// (across edges v0-v1, v1-v2, v2-v0). Every edge of the closed mesh has
    /// exactly two incident triangles.
    pub fn edge_neighbors(&self) -> Vec<[usize; 3]> {
        let mut by_edge: HashMap<(usize, usize), (usize, Option<usize>)> =
            HashMap::with_capacity(self.tris.len() * 3 / 2);
        for (t, &[a, b, c]) in self.tris.iter().enumerate() {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                let key = (u.min(v), u.max(v));
                by_edge
                    .entry(key)
                    .and_modify(|e| e.1 = Some(t))
                    .or_insert((t, None));
            }
        }
        let mut out = vec![[usize::MAX; 3]; self.tris.len()];
        for (t, &[a, b, c]) in self.tris.iter().enumerate() {
            for (slot, (u, v)) in [(a, b), (b, c), (c, a)].into_iter().enumerate() {
                let key = (u.min(v), u.max(v));
                let (first, second) = by_edge[&key];
                let other = if first == t {
                    second.expect("closed mesh: every edge has two triangles")
                } else {
                    first
                };
                out[t][slot] = other;
            }
        }
        out
    }

    /// OFF-format text export for external inspection.
    pub fn to_off(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "OFF");
        let _ = writeln!(s, "{} {} 0", self.verts.len(), self.tris.len());
        for v in &self.verts {
            let w = *v * self.radius;
            let _ = writeln!(s, "{} {} {}", w.x, w.y, w.z);
        }
        for &[a, b, c] in &self.tris {
            let _ = writeln!(s, "3 {a} {b} {c}");
        }
        s
    }
}

/// Boolean triangle mask over a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMask {
    marks: Vec<bool>,
}

impl PatchMask {
    pub fn all(mesh: &GeoMesh) -> PatchMask {
        PatchMask { marks: vec![true; mesh.tri_count()] }
    }

    pub fn none(mesh: &GeoMesh) -> PatchMask {
        PatchMask { marks: vec![false; mesh.tri_count()] }
    }

    /// Marks triangles whose projected centroid satisfies the predicate.
    pub fn from_centroid_predicate(mesh: &GeoMesh, pred: impl Fn(Vec3) -> bool) -> PatchMask {
        PatchMask {
            marks: (0..mesh.tri_count()).map(|t| pred(mesh.centroid(t))).collect(),
        }
    }

    pub fn from_marks(marks: Vec<bool>) -> PatchMask {
        PatchMask { marks }
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn get(&self, t: usize) -> bool {
        self.marks[t]
    }

    pub fn set(&mut self, t: usize, value: bool) {
        self.marks[t] = value;
    }

    pub fn complement(&self) -> PatchMask {
        PatchMask { marks: self.marks.iter().map(|&m| !m).collect() }
    }

    pub fn count(&self) -> usize {
        self.marks.iter().filter(|&&m| m).count()
    }

    pub fn marked_area(&self, mesh: &GeoMesh) -> f64 {
        assert_eq!(self.marks.len(), mesh.tri_count(), "mask built for another mesh");
        let r2 = mesh.radius() * mesh.radius();
        CompensatedSum::sum_iter(
            (0..mesh.tri_count()).filter(|&t| self.marks[t]).map(|t| mesh.excess[t] * r2),
        )
    }

    /// True where both masks are marked on no triangle.
    pub fn disjoint_from(&self, other: &PatchMask) -> bool {
        self.marks
            .iter()
            .zip(&other.marks)
            .all(|(&a, &b)| !(a && b))
    }
}

/// Quadrature contribution of one spherical triangle to a flux integral:
/// sum over the three projected edge-midpoint nodes of (u . n) * area/3,
/// with n = x/|x| at each node. Vertices are unit vectors.
pub(crate) fn tri_flux(field: &Field, radius: f64, verts: [Vec3; 3]) -> Result<f64> {
    let [a, b, c] = verts;
    let excess = spherical_excess(a, b, c);
    let w = excess * radius * radius / 3.0;
    let mut sum = 0.0;
    for n_hat in [
        (a + b).normalized(),
        (b + c).normalized(),
        (c + a).normalized(),
    ] {
        let u = field.eval(n_hat * radius)?;
        sum += u.dot(n_hat) * w;
    }
    Ok(sum)
}

/// Same rule for a scalar integral of |u|^p.
pub(crate) fn tri_scalar(field: &Field, radius: f64, p: f64, verts: [Vec3; 3]) -> Result<f64> {
    let [a, b, c] = verts;
    let excess = spherical_excess(a, b, c);
    let w = excess * radius * radius / 3.0;
    let mut sum = 0.0;
    for n_hat in [
        (a + b).normalized(),
        (b + c).normalized(),
        (c + a).normalized(),
    ] {
        let u = field.eval(n_hat * radius)?;
        sum += u.norm().powf(p) * w;
    }
    Ok(sum)
}

/// Flux of `field` through the marked part of the mesh (outward normal).
/// `mask = None` integrates over the whole sphere.
pub fn integrate_flux(mesh: &GeoMesh, field: &Field, mask: Option<&PatchMask>) -> Result<f64> {
    if let Some(m) = mask {
        assert_eq!(m.len(), mesh.tri_count(), "mask built for another mesh");
    }
    let mut acc = CompensatedSum::new();
    for t in 0..mesh.tri_count() {
        if mask.is_none_or(|m| m.get(t)) {
            acc.add(tri_flux(field, mesh.radius(), mesh.triangle_unit_verts(t))?);
        }
    }
    Ok(acc.value())
}

/// Integral of |u|^p over the marked part of the mesh.
pub fn integrate_scalar(
    mesh: &GeoMesh,
    field: &Field,
    p: f64,
    mask: Option<&PatchMask>,
) -> Result<f64> {
    assert!(p >= 1.0, "exponent p must be >= 1");
    if let Some(m) = mask {
        assert_eq!(m.len(), mesh.tri_count(), "mask built for another mesh");
    }
    let mut acc = CompensatedSum::new();
    for t in 0..mesh.tri_count() {
        if mask.is_none_or(|m| m.get(t)) {
            acc.add(tri_scalar(field, mesh.radius(), p, mesh.triangle_unit_verts(t))?);
        }
    }
    Ok(acc.value())
}

/// Exact spherical area (solid angle) of the triangle with the given unit
/// vertices, by L'Huilier's formula.
pub fn spherical_excess(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let sa = b.angle_to(c);
    let sb = c.angle_to(a);
    let sc = a.angle_to(b);
    let s = 0.5 * (sa + sb + sc);
    let prod = (s / 2.0).tan()
        * ((s - sa) / 2.0).tan()
        * ((s - sb) / 2.0).tan()
        * ((s - sc) / 2.0).tan();
    // Degenerate slivers can produce tiny negative products through rounding.
    4.0 * prod.max(0.0).sqrt().atan()
}

/// Recursively subdivides a spherical triangle (unit vertices) `levels`
/// times, projecting midpoints to the sphere; yields 4^levels children.
pub fn subdivide_spherical(verts: [Vec3; 3], levels: u32) -> Vec<[Vec3; 3]> {
    if levels == 0 {
        return vec![verts];
    }
    let [a, b, c] = verts;
    let ab = (a + b).normalized();
    let bc = (b + c).normalized();
    let ca = (c + a).normalized();
    let mut out = Vec::with_capacity(4usize.pow(levels));
    for child in [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]] {
        out.extend(subdivide_spherical(child, levels - 1));
    }
    out
}

fn icosahedron() -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let verts: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .into_iter()
    .map(|(x, y, z)| Vec3::new(x, y, z).normalized())
    .collect();
    let tris = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (verts, tris)
}

fn subdivide(verts: &mut Vec<Vec3>, tris: &mut Vec<[usize; 3]>) {
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoint = |i: usize, j: usize, verts: &mut Vec<Vec3>| -> usize {
        let key = (i.min(j), i.max(j));
        if let Some(&idx) = midpoints.get(&key) {
            return idx;
        }
        let m = (verts[i] + verts[j]).normalized();
        let idx = verts.len();
        verts.push(m);
        midpoints.insert(key, idx);
        idx
    };
    let mut next = Vec::with_capacity(tris.len() * 4);
    for &[a, b, c] in tris.iter() {
        let ab = midpoint(a, b, verts);
        let bc = midpoint(b, c, verts);
        let ca = midpoint(c, a, verts);
        next.push([a, ab, ca]);
        next.push([b, bc, ab]);
        next.push([c, ca, bc]);
        next.push([ab, bc, ca]);
    }
    *tris = next;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{superpose, Field};
    use std::f64::consts::PI;

    #[test]
    fn base_icosahedron_counts_and_area() {
        let mesh = GeoMesh::build(1.0, 0).unwrap();
        assert_eq!(mesh.tri_count(), 20);
        assert_eq!(mesh.vert_count(), 12);
        let total = mesh.total_area();
        assert!(((total - 4.0 * PI) / (4.0 * PI)).abs() < 1e-10, "total {total}");
    }

    #[test]
    fn scaled_mesh_counts_and_area() {
        let mesh = GeoMesh::build(2.0, 3).unwrap();
        assert_eq!(mesh.tri_count(), 20 * 4usize.pow(3));
        let total = mesh.total_area();
        assert!(((total - 16.0 * PI) / (16.0 * PI)).abs() < 1e-10);
    }

    #[test]
    fn level_guard() {
        assert!(matches!(
            GeoMesh::build(1.0, 10),
            Err(Error::LevelTooLarge { level: 10, max: 9 })
        ));
    }

    #[test]
    fn area_identity_holds_at_levels_0_to_7() {
        for level in 0..=7 {
            for radius in [1.0, 2.5] {
                let mesh = GeoMesh::build(radius, level).unwrap();
                let expect = 4.0 * PI * radius * radius;
                let total = mesh.total_area();
                assert!(
                    ((total - expect) / expect).abs() < 1e-10,
                    "level {level} radius {radius}: {total} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn vertices_lie_on_sphere() {
        let mesh = GeoMesh::build(3.0, 4).unwrap();
        for i in 0..mesh.vert_count() {
            let r = mesh.vertex(i).norm();
            assert!((r - 3.0).abs() < 1e-12 * 3.0);
        }
    }

    #[test]
    fn faces_oriented_outward() {
        let mesh = GeoMesh::build(1.0, 2).unwrap();
        for t in 0..mesh.tri_count() {
            let [a, b, c] = mesh.triangle_unit_verts(t);
            let n = (b - a).cross(c - a);
            assert!(n.dot(mesh.centroid_unit(t)) > 0.0, "face {t} inward");
        }
    }

    #[test]
    fn sink_flux_through_any_sphere_is_minus_strength() {
        for (radius, level) in [(1.0, 4), (0.3, 5)] {
            let mesh = GeoMesh::build(radius, level).unwrap();
            let flux = integrate_flux(&mesh, &Field::sink(1.0), None).unwrap();
            assert!((flux + 1.0).abs() < 1e-6, "flux {flux}");
        }
        // Linearity: doubled sink through any sphere.
        let mesh = GeoMesh::build(0.7, 4).unwrap();
        let doubled = superpose(2.0, &Field::sink(1.0), 0.0, &Field::sink(1.0));
        let flux = integrate_flux(&mesh, &doubled, None).unwrap();
        assert!((flux + 2.0).abs() < 1e-6);
    }

    #[test]
    fn uniform_flux_through_closed_sphere_vanishes() {
        for radius in [1.0, 2.0] {
            let mesh = GeoMesh::build(radius, 5).unwrap();
            let flux =
                integrate_flux(&mesh, &Field::uniform(Vec3::new(0.0, 0.0, -1.0)), None).unwrap();
            assert!(flux.abs() < 1e-10, "flux {flux}");
        }
    }

    #[test]
    fn uniform_flux_through_polar_cap_is_minus_shadow_area() {
        // Cap of cylindrical radius 0.25 about +z on the unit sphere.
        let mesh = GeoMesh::build(1.0, 6).unwrap();
        let z_min = (1.0f64 - 0.25 * 0.25).sqrt();
        let mask = PatchMask::from_centroid_predicate(&mesh, |c| c.z > z_min);
        let flux =
            integrate_flux(&mesh, &Field::uniform(Vec3::new(0.0, 0.0, -1.0)), Some(&mask))
                .unwrap();
        let want = -PI * 0.25 * 0.25;
        assert!(
            ((flux - want) / want).abs() < 0.01,
            "flux {flux}, want {want}"
        );
    }

    #[test]
    fn scalar_integral_closed_forms() {
        // Sink: |u| = 1/(4 pi r^2) on the sphere of radius r.
        let mesh = GeoMesh::build(0.5, 5).unwrap();
        let got = integrate_scalar(&mesh, &Field::sink(1.0), 2.0, None).unwrap();
        let want = 1.0 / (4.0 * PI * 0.25);
        assert!(((got - want) / want).abs() < 1e-4, "got {got}, want {want}");

        // Rotating gamma: integral of sin^2 over the sphere is (8 pi / 3) r^2.
        for (radius, gamma) in [(1.0, 3.0), (0.25, 3.0), (0.5, 2.0)] {
            let mesh = GeoMesh::build(radius, 5).unwrap();
            let got = integrate_scalar(&mesh, &Field::rotating(gamma), 2.0, None).unwrap();
            let want = (8.0 * PI / 3.0) * radius.powf(4.0 - 2.0 * gamma);
            assert!(
                ((got - want) / want).abs() < 1e-3,
                "gamma {gamma} radius {radius}: got {got}, want {want}"
            );
        }

        // Empty mask integrates to zero.
        let mesh = GeoMesh::build(1.0, 3).unwrap();
        let zero =
            integrate_scalar(&mesh, &Field::sink(1.0), 2.0, Some(&PatchMask::none(&mesh)))
                .unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn quadrature_refinement_converges() {
        // Icosahedral symmetry integrates spherical harmonics below degree 6
        // exactly, so a convergence check needs an integrand with an l >= 6
        // component: |u|^6 of the rotating field is sin^6(theta), and
        // int sin^6 dsigma = 64 pi / 35 on the unit sphere.
        let exact = 64.0 * PI / 35.0;
        let mut errs = Vec::new();
        for level in 4..=7 {
            let mesh = GeoMesh::build(1.0, level).unwrap();
            let got = integrate_scalar(&mesh, &Field::rotating(1.0), 6.0, None).unwrap();
            errs.push((got - exact).abs());
        }
        for pair in errs.windows(2) {
            assert!(pair[1] < pair[0], "errors not decreasing: {errs:?}");
        }
        // Superposed field against the sum of closed forms.
        let f = superpose(1.0, &Field::sink(1.0), 1.0, &Field::rotating(2.0));
        let mesh = GeoMesh::build(0.5, 6).unwrap();
        let got = integrate_scalar(&mesh, &f, 2.0, None).unwrap();
        let want = 1.0 / (4.0 * PI * 0.25) + 8.0 * PI / 3.0;
        assert!(((got - want) / want).abs() < 1e-4);
    }

    #[test]
    fn jensen_inequality_on_quadrature_weights() {
        // (sum w |u|)^2 <= (sum w)(sum w |u|^2) on the discrete measure.
        let mesh = GeoMesh::build(1.0, 4).unwrap();
        for field in [Field::rotating(2.0), Field::uniform(Vec3::new(0.3, -0.2, 0.9))] {
            let sum_w = mesh.total_area();
            let sum_wu = integrate_scalar(&mesh, &field, 1.0, None).unwrap();
            let sum_wu2 = integrate_scalar(&mesh, &field, 2.0, None).unwrap();
            assert!(sum_wu * sum_wu <= sum_w * sum_wu2 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn edge_neighbors_are_mutual() {
        let mesh = GeoMesh::build(1.0, 2).unwrap();
        let nbrs = mesh.edge_neighbors();
        for (t, tri_nbrs) in nbrs.iter().enumerate() {
            for &n in tri_nbrs {
                assert!(n < mesh.tri_count());
                assert!(nbrs[n].contains(&t), "adjacency not mutual: {t} vs {n}");
            }
        }
    }

    #[test]
    fn subdivide_spherical_preserves_area() {
        let mesh = GeoMesh::build(1.0, 1).unwrap();
        for t in 0..mesh.tri_count() {
            let parent = mesh.solid_angle(t);
            let children = subdivide_spherical(mesh.triangle_unit_verts(t), 2);
            assert_eq!(children.len(), 16);
            let total: f64 = children
                .iter()
                .map(|&[a, b, c]| spherical_excess(a, b, c))
                .sum();
            assert!((total - parent).abs() < 1e-13);
        }
    }

    #[test]
    fn off_export_shape() {
        let mesh = GeoMesh::build(1.0, 0).unwrap();
        let off = mesh.to_off();
        let mut lines = off.lines();
        assert_eq!(lines.next(), Some("OFF"));
        assert_eq!(lines.next(), Some("12 20 0"));
        assert_eq!(off.lines().count(), 2 + 12 + 20);
    }
}
