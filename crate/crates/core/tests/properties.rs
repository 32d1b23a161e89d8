use std::sync::Arc;

use conley_core::conley::{default_tau, rasterize_pairs, ConleyPair, ConleyParams};
use conley_core::critical::{find_critical_points, Multistart, StartRegion};
use conley_core::homology::{relative_homology, CubicalPair, Grid, Mask};
use conley_core::model::{AnalyticEnergy, FourierTerm, ManifoldDescriptor, ModelSystem, Potential, Trig};
use conley_core::morse_complex::{build_morse_complex, OrbitConfig};
use conley_core::semiflow::{Flow, FlowConfig};
use conley_core::snf::{smith_normal_form, IntMatrix};
use nalgebra::DVector;
use proptest::prelude::*;

fn trig() -> impl Strategy<Value = Trig> {
    prop_oneof![Just(Trig::Cos), Just(Trig::Sin)]
}

fn potential(dim: usize) -> impl Strategy<Value = Potential> {
    prop::collection::vec(
        (-1.0..1.0f64, 0..3i32, trig(), prop::collection::vec(-2..=2i32, dim), trig()).prop_map(|(coeff, time_mode, time_trig, wave, space_trig)| FourierTerm {
            coeff,
            time_mode,
            time_trig,
            wave,
            space_trig,
        }),
        1..4,
    )
    .prop_map(|terms| Potential { terms })
}

fn loop_system() -> impl Strategy<Value = ModelSystem> {
    (1..=2usize, prop::sample::select(vec![8usize, 12, 16]), -1..=1i64).prop_flat_map(|(d, n, w)| {
        potential(d).prop_map(move |pot| {
            let manifold = if d == 1 { ManifoldDescriptor::Circle } else { ManifoldDescriptor::FlatTorus { dim: 2 } };
            ModelSystem::loop_space(manifold, pot, n, vec![w; d]).unwrap()
        })
    })
}

fn analytic_system() -> impl Strategy<Value = ModelSystem> {
    prop_oneof![
        Just(AnalyticEnergy::DoubleWell),
        Just(AnalyticEnergy::CubicSaddle),
        (0.0..2.0f64).prop_map(|coupling| AnalyticEnergy::CoupledSaddle { coupling }),
        (0.5..3.0f64).prop_map(|scale| AnalyticEnergy::SaddleChain3d { scale }),
        prop::collection::vec(-3.0..3.0f64, 1..5).prop_map(|diag| AnalyticEnergy::Quadratic { diag }),
    ]
    .prop_map(|e| ModelSystem::analytic(e).unwrap())
}

fn system() -> impl Strategy<Value = ModelSystem> {
    prop_oneof![loop_system(), analytic_system()]
}

fn vector(len: usize, seed: u64, scale: f64) -> DVector<f64> {
    let mut rng = conley_core::sampling::rng(seed);
    DVector::from_fn(len, |_, _| conley_core::sampling::gaussian(&mut rng) * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn derivatives_match_finite_differences(sys in system(), seed in 0u64..1000) {
        let n = sys.dim();
        let z = vector(n, seed, 0.5) + sys.loop_from_fn(|_, _| 0.0).unwrap_or_else(|_| DVector::zeros(n));
        let u = vector(n, seed + 1, 1.0);
        let h = 1e-5;
        let fd = (sys.action(&(&z + &u * h)).unwrap() - sys.action(&(&z - &u * h)).unwrap()) / (2.0 * h);
        let g = sys.gradient(&z).unwrap();
        prop_assert!((fd - sys.l2_dot(&g, &u)).abs() <= 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", sys.l2_dot(&g, &u));
        let fd_h = (sys.gradient(&(&z + &u * h)).unwrap() - sys.gradient(&(&z - &u * h)).unwrap()) / (2.0 * h);
        let hu = sys.hessian(&z).unwrap() * &u;
        prop_assert!((&fd_h - &hu).amax() <= 1e-5 * (1.0 + hu.amax()));
    }

    #[test]
    fn smith_normal_form_invariants(rows in 1..7usize, cols in 1..7usize, seed in 0u64..10_000) {
        let mut rng = conley_core::sampling::rng(seed);
        use rand::Rng;
        let data: Vec<i64> = (0..rows * cols).map(|_| rng.gen_range(-5..=5)).collect();
        let a = IntMatrix::with_shape(rows, cols, data);
        let snf = smith_normal_form(&a).unwrap();
        prop_assert_eq!(snf.p.mul(&a).mul(&snf.q), snf.d_matrix());
        prop_assert_eq!(snf.p.mul(&snf.p_inv), IntMatrix::identity(rows));
        prop_assert_eq!(snf.q.mul(&snf.q_inv), IntMatrix::identity(cols));
        prop_assert!(snf.diagonal.iter().all(|&d| d > 0));
        prop_assert!(snf.diagonal.windows(2).all(|w| w[1] % w[0] == 0));
    }
}

fn pendulum(n: usize) -> Arc<ModelSystem> {
    Arc::new(ModelSystem::loop_space(ManifoldDescriptor::Circle, Potential::pendulum(0.5), n, vec![0]).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn flow_is_a_monotone_semigroup(seed in 0u64..1000, s in 1usize..40, t in 1usize..40) {
        let sys = pendulum(16);
        let flow = Flow::new(sys.clone(), FlowConfig::semi_implicit(0.005)).unwrap();
        let z = vector(16, seed, 0.3);
        let (s, t) = (s as f64 * 0.005, t as f64 * 0.005);
        let direct = flow.flow(&z, s + t).unwrap();
        let composed = flow.flow(&flow.flow(&z, s).unwrap(), t).unwrap();
        prop_assert!((direct - composed).amax() < 1e-10);
        let traj = flow.integrate(&z, 0.5).unwrap();
        prop_assert!(traj.max_action_increase() <= 1e-12);
    }

    #[test]
    fn conley_pair_invariants(x in -0.5..0.5f64, y in -0.6..0.6f64) {
        let sys = Arc::new(ModelSystem::analytic(AnalyticEnergy::DoubleWell).unwrap());
        let ms = Multistart { count: 30, seed: 1, region: StartRegion::Box { lower: vec![-1.5, -1.0], upper: vec![1.5, 1.0] } };
        let crit = find_critical_points(&sys, 2.0, &ms).unwrap();
        let flow = Arc::new(Flow::new(sys, FlowConfig::rk4(0.01)).unwrap());
        let saddle = crit.indices_of(1)[0];
        let pair = ConleyPair::new(flow.clone(), &crit, saddle, ConleyParams { eps: 0.2, tau: 0.3 }).unwrap();
        let z = DVector::from_vec(vec![x, y]);
        let (n, l) = pair.classify(&z).unwrap();
        prop_assert!(!l || n);
        if l {
            let mut w = z.clone();
            for _ in 0..20 {
                w = flow.flow(&w, 0.05).unwrap();
                let (n2, l2) = pair.classify(&w).unwrap();
                if !n2 {
                    break;
                }
                prop_assert!(l2);
            }
        }
        let wider = ConleyPair::new(flow, &crit, saddle, ConleyParams { eps: 0.2, tau: 0.6 }).unwrap();
        let (n_wide, _) = wider.classify(&z).unwrap();
        prop_assert!(!n_wide || n);
    }
}

#[test]
fn step_halving_converges_at_first_order() {
    let sys = pendulum(16);
    let z = vector(16, 3, 0.3);
    let at = |h: f64| Flow::new(sys.clone(), FlowConfig::semi_implicit(h)).unwrap().flow(&z, 0.4).unwrap();
    let reference = at(0.0005 / 8.0);
    let e1 = (at(0.002) - &reference).amax();
    let e2 = (at(0.001) - &reference).amax();
    let slope = (e1 / e2).log2();
    assert!(slope >= 0.9, "slope {slope}");
}

#[test]
fn free_modes_decay_at_discrete_rates() {
    let n = 16;
    let sys = Arc::new(ModelSystem::loop_space(ManifoldDescriptor::Circle, Potential::zero(), n, vec![0]).unwrap());
    let flow = Flow::new(sys.clone(), FlowConfig::rk4(0.0005)).unwrap();
    for m in 1..=3 {
        let z = sys.loop_from_fn(|t, _| 0.1 * (std::f64::consts::TAU * m as f64 * t).cos()).unwrap();
        let lambda = 4.0 * (n * n) as f64 * (std::f64::consts::PI * m as f64 / n as f64).sin().powi(2);
        let t = 0.5 / lambda;
        let out = flow.flow(&z, t).unwrap();
        let ratio = out[0] / z[0];
        assert!((ratio / (-lambda * t).exp() - 1.0).abs() < 0.01, "mode {m}: {ratio}");
    }
}

#[test]
fn morse_boundary_is_stable_in_sphere_radius() {
    let sys = Arc::new(ModelSystem::analytic(AnalyticEnergy::DoubleWell).unwrap());
    let ms = Multistart { count: 30, seed: 1, region: StartRegion::Box { lower: vec![-1.5, -1.0], upper: vec![1.5, 1.0] } };
    let crit = find_critical_points(&sys, 2.0, &ms).unwrap();
    let flow = Flow::new(sys, FlowConfig::rk4(0.01)).unwrap();
    let reference = build_morse_complex(&flow, &crit, &OrbitConfig::default()).unwrap();
    for eps_u in [0.05, 0.2] {
        let mc = build_morse_complex(&flow, &crit, &OrbitConfig { eps_u, ..OrbitConfig::default() }).unwrap();
        assert_eq!(mc.boundaries, reference.boundaries);
    }
}

fn ball_pair(k: usize, h: f64) -> CubicalPair {
    let grid = Grid::centered(&vec![0.0; k], &vec![1.2; k], h).unwrap();
    let big = Mask::from_fn(&grid, |p| p.norm() < 1.0);
    let small = Mask::from_fn(&grid, |p| p.norm() < 1.0 && p.norm() > 0.6);
    CubicalPair::new(big, small).unwrap()
}

#[test]
fn disk_rel_boundary_is_a_sphere() {
    for (k, h) in [(1, 0.05), (2, 0.05), (3, 0.1)] {
        let hom = relative_homology(&ball_pair(k, h)).unwrap();
        assert!(hom.is_sphere_like(k), "k={k}: {:?}", hom.betti);
    }
}

#[test]
fn homology_of_disjoint_union_is_the_direct_sum() {
    let grid = Grid::centered(&[0.0, 0.0], &[3.0, 1.2], 0.05).unwrap();
    let left = |p: &DVector<f64>| (p - DVector::from_vec(vec![-1.6, 0.0])).norm();
    let right = |p: &DVector<f64>| p[0] > 0.6 && p[0] < 2.6 && p[1].abs() < 0.5;
    let a = CubicalPair::new(Mask::from_fn(&grid, |p| left(p) < 1.0), Mask::from_fn(&grid, |p| left(p) < 1.0 && left(p) > 0.6)).unwrap();
    let b = CubicalPair::new(Mask::from_fn(&grid, right), Mask::from_fn(&grid, |p| right(p) && (p[0] < 0.9 || p[0] > 2.3))).unwrap();
    let union = CubicalPair::new(a.big.union(&b.big).unwrap(), a.small.union(&b.small).unwrap()).unwrap();
    let (ha, hb, hu) = (relative_homology(&a).unwrap(), relative_homology(&b).unwrap(), relative_homology(&union).unwrap());
    for m in 0..3 {
        assert_eq!(hu.betti(m), ha.betti(m) + hb.betti(m));
    }
    assert_eq!(hu.betti, vec![0, 1, 1]);
}

#[test]
fn longer_windows_keep_the_saddle_index() {
    let sys = Arc::new(ModelSystem::analytic(AnalyticEnergy::DoubleWell).unwrap());
    let ms = Multistart { count: 30, seed: 1, region: StartRegion::Box { lower: vec![-1.5, -1.0], upper: vec![1.5, 1.0] } };
    let crit = find_critical_points(&sys, 2.0, &ms).unwrap();
    let flow = Arc::new(Flow::new(sys, FlowConfig::rk4(0.01)).unwrap());
    let tau0 = default_tau(&flow, &crit, 0.2, 0.1).unwrap();
    let grid = Grid::centered(&[0.0, 0.0], &[0.7, 0.7], 0.02).unwrap();
    for tau in [0.5 * tau0, tau0, 2.0 * tau0] {
        let mut pairs = vec![ConleyPair::new(flow.clone(), &crit, crit.indices_of(1)[0], ConleyParams { eps: 0.2, tau }).unwrap()];
        let masks = rasterize_pairs(&mut pairs, &grid).unwrap();
        let hom = relative_homology(&CubicalPair::new(masks[0].n.clone(), masks[0].l.clone()).unwrap()).unwrap();
        assert!(hom.is_sphere_like(1), "tau {tau}: {:?}", hom.betti);
    }
}
