//! Property tests over seeded runs.

use proptest::prelude::*;

use super::*;
use crate::observables::count_fields;

fn spec(dim: usize, mu: f64, horizon: f64, seed: u64) -> ProcessSpec {
    ProcessSpec::new(dim, mu, 1.0, horizon, ProcessMode::FullSpace, MasterSeed(seed)).with_guard(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn types_never_mix_and_b_only_grows(dim in 1usize..=3, mu in 0.3f64..3.0, seed in any::<u64>()) {
        let horizon = if dim == 3 { 2.0 } else { 4.0 };
        let s = spec(dim, mu, horizon, seed);
        let mut sim = Simulation::new(&s).unwrap();
        let id = sim.add_layer(default_layer(&s)).unwrap().unwrap();
        let n = sim.world().len();
        let mut prev_b = 0;
        let mut prev_visited = Vec::new();
        for k in 0..=8 {
            let t = horizon * k as f64 / 8.0;
            sim.advance_to(t).unwrap();
            let f = count_fields(sim.layer(id), sim.world());
            prop_assert!(f.mixed_sites().is_empty());
            prop_assert_eq!(f.total() as usize, n);
            let b = sim.layer(id).b_particles(t).count();
            prop_assert!(b >= prev_b);
            prev_b = b;
            let visited = sim.layer(id).b_tilde(t);
            prop_assert!(prev_visited.iter().all(|x| visited.contains(x)));
            for o in sim.layer(id).b_particles(t) {
                prop_assert!(visited.contains(&sim.world().position(o)));
            }
            prev_visited = visited;
        }
    }

    #[test]
    fn event_log_replays_positions(dim in 1usize..=2, seed in any::<u64>()) {
        let s = spec(dim, 1.0, 5.0, seed);
        let mut sim = Simulation::new(&s).unwrap();
        sim.add_layer(default_layer(&s)).unwrap();
        let mut pos = sim.world().positions().to_vec();
        let mut rec = EventRecorder::new();
        sim.advance_to_with(s.horizon, |e| rec.record(e)).unwrap();
        let mut last = 0.0;
        for e in &rec.events {
            prop_assert!(e.time >= last && e.time <= s.horizon);
            prop_assert_eq!(pos[e.who as usize], e.from);
            prop_assert_eq!(e.from.linf_dist(&e.to), 1);
            pos[e.who as usize] = e.to;
            last = e.time;
        }
        prop_assert_eq!(&pos[..], sim.world().positions());
        prop_assert_eq!(rec.events.len() as u64, sim.events());
    }

    #[test]
    fn restricted_layers_ignore_outsiders(seed in any::<u64>(), c in -3.0f64..3.0) {
        let s = spec(2, 1.0, 5.0, seed);
        let u = Direction::new(&[1.0, 1.0]).unwrap();
        let h = HalfSpace::new(u, c);
        let mut sim = Simulation::new(&s).unwrap();
        let id = sim.add_layer(LayerInit::nearest(LatticePoint::origin(2)).restricted(h)).unwrap().unwrap();
        sim.advance_to(s.horizon).unwrap();
        let layer = sim.layer(id);
        for (o, pid) in sim.world().ids().iter().enumerate() {
            let o = o as u32;
            prop_assert_eq!(layer.is_eligible(o), h.contains(&pid.origin));
            if !h.contains(&pid.origin) {
                prop_assert!(layer.theta(o).is_infinite());
            }
        }
    }
}
