//! One composed run of the whole pipeline on the swirling singular field
//! (sink plus rotation): every diagnostic must tell the same story.

use std::f64::consts::PI;

use fluxcrit::criterion::{
    flux_scan_with_maps, jensen_check, nested_sets_check, shell_scan, Verdict,
};
use fluxcrit::fluxtube::{mantle_tangency, verify_lemma, PatchSpec};
use fluxcrit::{superpose, Field, TraceConfig, Vec3};

#[test]
fn swirling_sink_tells_one_consistent_story() {
    let field = superpose(1.0, &Field::sink(1.0), 1.0, &Field::rotating(2.0));
    let cfg = TraceConfig::for_outer_radius(1.0);
    let grid = [0.4, 0.2, 0.1, 0.05];

    // The swirl is tangential to every centered sphere, so the entry flux
    // is the sink's: flat in r, criterion satisfied.
    let (scan, maps) = flux_scan_with_maps(&field, 1.0, 2.0, &grid, 4, &cfg).unwrap();
    assert_eq!(scan.verdict, Verdict::CriterionSatisfied);
    let fit = scan.fit.as_ref().unwrap();
    assert!(fit.exponent.abs() < 0.01);
    assert!((fit.c - 1.0).abs() < 0.01);
    for rec in &scan.records {
        assert!((rec.signed_flux_member + 1.0).abs() < 1e-6);
        assert_eq!(rec.undetermined_fraction, 0.0);
    }

    // Member sets nest and persist: the whole sphere drains inward.
    let nested = nested_sets_check(&field, &maps).unwrap();
    assert!(nested.nested);
    assert!(nested.hypothesis_met);
    assert!((nested.common_flux + 1.0).abs() < 1e-6);

    // Shell integrals diverge once the radius window reaches the regime
    // where the sink part dominates the swirl.
    let shell = shell_scan(&field, 2.0, &[0.02, 0.01, 0.005, 0.0025], 4).unwrap();
    assert!(shell.divergent, "q = {}", shell.q);

    // The inequality chain connecting the two routes holds at every radius.
    for map in &maps {
        let rep = jensen_check(&field, map).unwrap();
        assert!(rep.holds, "chain violated at r = {}", map.r);
        assert!(rep.flux_term <= rep.shell_term);
    }

    // Flux-tube conservation on a cap, with a streamline-ruled mantle.
    let patch = PatchSpec::cap(Vec3::new(0.0, 0.0, 1.0), PI / 8.0, 1.0).unwrap();
    let tube = verify_lemma(&field, &patch, 0.2, 48, &cfg, 1e-2).unwrap();
    assert!(tube.pass, "rel_err {}", tube.rel_err);
    assert!(tube.injective);
    assert_eq!(tube.image_inflow_violations, 0);
    assert!(mantle_tangency(&tube).unwrap() < 1e-4);

    // And the whole thing is reproducible bit for bit.
    let (scan2, _) = flux_scan_with_maps(&field, 1.0, 2.0, &grid, 4, &cfg).unwrap();
    assert_eq!(scan.to_json().render(), scan2.to_json().render());
}
