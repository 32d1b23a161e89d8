use std::sync::Arc;

use conley_core::conley::{default_tau, rasterize_pairs, ConleyPair, ConleyParams};
use conley_core::critical::{find_critical_points, Multistart, StartRegion};
use conley_core::homology::{relative_homology, CubicalPair, Grid};
use conley_core::model::{AnalyticEnergy, ModelSystem};
use conley_core::semiflow::{Flow, FlowConfig};

#[test]
fn index_two_pair_has_degree_two_homology() {
    let sys = Arc::new(ModelSystem::analytic(AnalyticEnergy::SaddleChain3d { scale: 2.0 }).unwrap());
    let ms = Multistart { count: 120, seed: 5, region: StartRegion::Box { lower: vec![-3.0, -3.0, -1.0], upper: vec![3.0, 3.0, 1.0] } };
    let crit = find_critical_points(&sys, 9.0, &ms).unwrap();
    assert_eq!(crit.counts(), vec![4, 4, 1]);
    let values = crit.critical_values();
    assert!(values.iter().any(|v| (v - 8.0).abs() < 1e-9));

    let flow = Arc::new(Flow::new(sys, FlowConfig::rk4(0.01)).unwrap());
    let eps = 1.0;
    let tau = default_tau(&flow, &crit, eps, 0.1).unwrap();
    let origin = crit.indices_of(2)[0];
    let grid = Grid::centered(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.2], 0.05).unwrap();
    let mut pairs = vec![ConleyPair::new(flow, &crit, origin, ConleyParams { eps, tau }).unwrap()];
    let masks = rasterize_pairs(&mut pairs, &grid).unwrap();
    assert!(masks[0].l.is_subset(&masks[0].n));
    let hom = relative_homology(&CubicalPair::new(masks[0].n.clone(), masks[0].l.clone()).unwrap()).unwrap();
    assert!(hom.is_sphere_like(2), "{:?} {:?}", hom.betti, hom.torsion);
}

#[test]
fn unstable_disk_pairs_are_spheres() {
    use conley_core::foliation::{unstable_disk_pair, ChartConfig, LocalChart};
    let sys = Arc::new(ModelSystem::analytic(AnalyticEnergy::SaddleChain3d { scale: 2.0 }).unwrap());
    let ms = Multistart { count: 120, seed: 5, region: StartRegion::Box { lower: vec![-3.0, -3.0, -1.0], upper: vec![3.0, 3.0, 1.0] } };
    let crit = find_critical_points(&sys, 9.0, &ms).unwrap();
    for k in [1, 2] {
        let chart = LocalChart::new(sys.clone(), &crit, crit.indices_of(k)[0], &ChartConfig::default()).unwrap();
        let disk = relative_homology(&unstable_disk_pair(&chart, 1.0, 0.02).unwrap()).unwrap();
        assert!(disk.is_sphere_like(k), "k={k}: {:?}", disk.betti);
    }
}

#[test]
fn axis_aligned_index_two_source_has_consistent_boundary() {
    let sys = Arc::new(ModelSystem::analytic(AnalyticEnergy::SaddleChain3d { scale: 2.0 }).unwrap());
    let ms = Multistart { count: 120, seed: 5, region: StartRegion::Box { lower: vec![-3.0, -3.0, -1.0], upper: vec![3.0, 3.0, 1.0] } };
    let crit = find_critical_points(&sys, 10.0, &ms).unwrap();
    let flow = Flow::new(sys, FlowConfig::rk4(0.01)).unwrap();
    let mc = conley_core::morse_complex::build_morse_complex(&flow, &crit, &Default::default()).unwrap();
    let column: Vec<i64> = mc.boundaries[2].to_rows().into_iter().flatten().collect();
    assert_eq!(column.iter().map(|c| c.abs()).collect::<Vec<_>>(), vec![1; 4]);
    assert!(mc.boundaries[1].mul(&mc.boundaries[2]).is_zero());
    assert_eq!(mc.homology.betti.iter().sum::<usize>(), 1);
}
