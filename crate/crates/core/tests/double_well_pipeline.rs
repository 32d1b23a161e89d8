use std::sync::Arc;

use conley_core::conley::{build_disjoint_pairs, build_filtration, default_tau, ConleyParams, Filtration, FiltrationSamples};
use conley_core::critical::{find_critical_points, CritSet, Multistart, StartRegion};
use conley_core::homology::{compare_complexes, relative_homology, triple_boundary, CubicalPair, Grid};
use conley_core::model::{AnalyticEnergy, ModelSystem};
use conley_core::morse_complex::{build_morse_complex, OrbitConfig};
use conley_core::semiflow::{Flow, FlowConfig};

fn setup() -> (Arc<Flow>, CritSet) {
    let sys = Arc::new(ModelSystem::analytic(AnalyticEnergy::DoubleWell).unwrap());
    let ms = Multistart { count: 40, seed: 1, region: StartRegion::Box { lower: vec![-1.5, -1.0], upper: vec![1.5, 1.0] } };
    let crit = find_critical_points(&sys, 2.0, &ms).unwrap();
    (Arc::new(Flow::new(sys, FlowConfig::rk4(0.01)).unwrap()), crit)
}

#[test]
fn full_pipeline() {
    let (flow, crit) = setup();
    let eps = 0.2;
    let tau = default_tau(&flow, &crit, eps, 0.1).unwrap();
    let grid = Grid::centered(&[0.0, 0.0], &[1.7, 1.5], 0.02).unwrap();
    let (pairs, masks, rep) = build_disjoint_pairs(flow.clone(), &crit, ConleyParams { eps, tau }, &grid, 3).unwrap();
    assert!(rep.disjoint());
    for m in &masks {
        let h = relative_homology(&CubicalPair::new(m.n.clone(), m.l.clone()).unwrap()).unwrap();
        assert!(h.is_sphere_like(crit.points[m.point].morse_index), "point {}: {:?}", m.point, h.betti);
    }
    let samples = FiltrationSamples::from_grid(&flow, &crit, &pairs, &masks, &grid).unwrap();
    let filt = build_filtration(flow.clone(), &crit, pairs, &samples, 200.0).unwrap();
    let (fm, _) = filt.rasterize(&grid);
    Filtration::check_nesting(&fm).unwrap();
    let cc = triple_boundary(&fm).unwrap();
    assert_eq!(cc.ranks, vec![2, 1]);
    let mc = build_morse_complex(&flow, &crit, &OrbitConfig::default()).unwrap();
    let iso = compare_complexes(&cc, &mc.counts(), &mc.boundaries, &mc.homology).unwrap();
    assert!(iso.matched(), "{iso:?}");
}

#[test]
fn saddle_homology_is_stable_under_refinement() {
    let (flow, crit) = setup();
    let eps = 0.2;
    let tau = default_tau(&flow, &crit, eps, 0.1).unwrap();
    let saddle = crit.indices_of(1)[0];
    for h in [0.02, 0.01] {
        let grid = Grid::centered(&[0.0, 0.0], &[0.6, 0.6], h).unwrap();
        let mut pairs = vec![conley_core::conley::ConleyPair::new(flow.clone(), &crit, saddle, ConleyParams { eps, tau }).unwrap()];
        let masks = conley_core::conley::rasterize_pairs(&mut pairs, &grid).unwrap();
        let hom = relative_homology(&CubicalPair::new(masks[0].n.clone(), masks[0].l.clone()).unwrap()).unwrap();
        assert_eq!(hom.betti, vec![0, 1], "h = {h}");
    }
}
