use std::sync::Arc;

use conley_core::critical::{find_critical_points, Multistart, StartRegion};
use conley_core::homology::homology_of_matrices;
use conley_core::model::{FourierTerm, ManifoldDescriptor, ModelSystem, Potential, Trig};
use conley_core::morse_complex::{build_morse_complex, OrbitConfig};
use conley_core::semiflow::{Flow, FlowConfig};

fn loop_starts(count: usize) -> Multistart {
    Multistart { count, seed: 5, region: StartRegion::LoopModes { modes: 2, amplitude: 0.15 } }
}

fn term(coeff: f64, time_mode: i32, wave: Vec<i32>) -> FourierTerm {
    FourierTerm { coeff, time_mode, time_trig: Trig::Cos, wave, space_trig: Trig::Cos }
}

#[test]
fn pendulum_orbits_cancel() {
    let sys = Arc::new(ModelSystem::loop_space(ManifoldDescriptor::Circle, Potential::pendulum(0.5), 16, vec![0]).unwrap());
    let crit = find_critical_points(&sys, 6.0, &loop_starts(64)).unwrap();
    let flow = Flow::new(sys, FlowConfig::semi_implicit(0.005)).unwrap();
    let mc = build_morse_complex(&flow, &crit, &OrbitConfig::default()).unwrap();
    assert_eq!(mc.boundaries[1].to_rows(), vec![vec![0]]);
    assert_eq!(mc.orbits.len(), 2);
    assert_eq!(mc.orbits.iter().map(|o| o.sign as i64).sum::<i64>(), 0);
    assert_ne!(mc.orbits[0].lift, mc.orbits[1].lift);
    assert_eq!(mc.homology.betti, vec![1, 1]);
}

#[test]
fn torus_complex_has_torus_homology() {
    let pot = Potential { terms: vec![term(0.3, 0, vec![1, 0]), term(0.2, 0, vec![0, 1]), term(0.02, 1, vec![1, 1])] };
    let sys = Arc::new(ModelSystem::loop_space(ManifoldDescriptor::FlatTorus { dim: 2 }, pot, 8, vec![0, 0]).unwrap());
    let crit = find_critical_points(&sys, 1.5, &loop_starts(96)).unwrap();
    assert_eq!(crit.counts(), vec![1, 2, 1]);
    let flow = Flow::new(sys, FlowConfig::semi_implicit(0.005)).unwrap();
    let mc = build_morse_complex(&flow, &crit, &OrbitConfig::default()).unwrap();
    assert!(mc.boundaries[1].mul(&mc.boundaries[2]).is_zero());
    assert_eq!(mc.homology.betti, vec![1, 2, 1]);
    for (k, j) in [(1, 0), (2, 0)] {
        let flipped = mc.with_generator_negated(k, j);
        let h = homology_of_matrices(&flipped.boundaries).unwrap();
        assert!(h.same_groups(&mc.homology));
    }
}
