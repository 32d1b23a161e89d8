use std::sync::Arc;

use conley_core::conley::{build_disjoint_pairs_sampled, default_eps, default_tau, separation_radius, shrink_into_ball, ConleyParams};
use conley_core::critical::{find_critical_points, Multistart, StartRegion};
use conley_core::model::{AnalyticEnergy, FourierTerm, ManifoldDescriptor, ModelSystem, Potential, Trig};
use conley_core::sampling;
use conley_core::semiflow::{Flow, FlowConfig};
use nalgebra::DVector;

#[test]
fn saddle_chain_pairs_are_disjoint() {
    let sys = Arc::new(ModelSystem::analytic(AnalyticEnergy::SaddleChain3d { scale: 2.0 }).unwrap());
    let ms = Multistart { count: 120, seed: 5, region: StartRegion::Box { lower: vec![-3.0, -3.0, -1.0], upper: vec![3.0, 3.0, 1.0] } };
    let crit = find_critical_points(&sys, 9.0, &ms).unwrap();
    let flow = Arc::new(Flow::new(sys, FlowConfig::rk4(0.01)).unwrap());
    let eps = default_eps(&crit);
    let tau = default_tau(&flow, &crit, eps, 0.1).unwrap();
    let mut rng = sampling::rng(11);
    let states = sampling::boxed(&[-3.0, -3.0, -1.2], &[3.0, 3.0, 1.2], 4000, &mut rng);
    let radius = separation_radius(&flow, &crit, 1.0);
    let (pairs, rep) = build_disjoint_pairs_sampled(flow, &crit, ConleyParams { eps, tau }, radius, &states, 3).unwrap();
    assert_eq!(pairs.len(), 9);
    assert!(rep.disjoint());
}

#[test]
fn torus_loop_pairs_are_disjoint() {
    let term = |coeff, time_mode, wave| FourierTerm { coeff, time_mode, time_trig: Trig::Cos, wave, space_trig: Trig::Cos };
    let pot = Potential { terms: vec![term(0.3, 0, vec![1, 0]), term(0.2, 0, vec![0, 1]), term(0.02, 1, vec![1, 1])] };
    let sys = Arc::new(ModelSystem::loop_space(ManifoldDescriptor::FlatTorus { dim: 2 }, pot, 8, vec![0, 0]).unwrap());
    let ms = Multistart { count: 96, seed: 5, region: StartRegion::LoopModes { modes: 2, amplitude: 0.15 } };
    let crit = find_critical_points(&sys, 1.5, &ms).unwrap();
    let flow = Arc::new(Flow::new(sys, FlowConfig::semi_implicit(0.005)).unwrap());
    let eps = default_eps(&crit);
    let tau = default_tau(&flow, &crit, eps, 0.05).unwrap();
    let mut rng = sampling::rng(4);
    let mut states = Vec::new();
    for p in &crit.points {
        for _ in 0..100 {
            states.push(&p.state + DVector::from_fn(16, |_, _| 0.1 * sampling::gaussian(&mut rng)));
        }
    }
    let radius = separation_radius(&flow, &crit, 0.5);
    let (_, rep) = build_disjoint_pairs_sampled(flow, &crit, ConleyParams { eps, tau }, radius, &states, 3).unwrap();
    assert!(rep.disjoint());
}

#[test]
fn shrinking_moves_the_saddle_set_into_a_small_ball() {
    let sys = Arc::new(ModelSystem::analytic(AnalyticEnergy::DoubleWell).unwrap());
    let ms = Multistart { count: 30, seed: 1, region: StartRegion::Box { lower: vec![-1.5, -1.0], upper: vec![1.5, 1.0] } };
    let crit = find_critical_points(&sys, 2.0, &ms).unwrap();
    let flow = Arc::new(Flow::new(sys, FlowConfig::rk4(0.01)).unwrap());
    let tau = default_tau(&flow, &crit, 0.2, 0.1).unwrap();
    let rep = shrink_into_ball(flow, &crit, crit.indices_of(1)[0], ConleyParams { eps: 0.2, tau }, 0.05, 8).unwrap();
    assert!(rep.inside, "{rep:?}");
    assert!(rep.rounds.last().unwrap().radius < 0.05);
}
