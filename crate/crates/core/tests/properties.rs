use proptest::prelude::*;

use qkcm_core::bootstrap::{bp_closure, bp_run, constraint, internally_spanned};
use qkcm_core::exact::{
    build_generator, functional_t, random_functions, solve_poisson, spectral_gap, survival_curve, taubar, ExactTarget,
};
use qkcm_core::harness::{kcm_sweep_on, Dynamics, SweepSpec};
use qkcm_core::kcm::{estimate_tau0, Scheme, SimParams};
use qkcm_core::percolation::{coarse_grain, good_box_path, label_clusters, origin_cluster_geometry};
use qkcm_core::{
    sample_environment, sample_equilibrium, Boundary, Configuration, Coord, Dims, EnvParams, Environment, ModelKind,
    Rect,
};

fn kind_of(ne: bool) -> ModelKind {
    if ne {
        ModelKind::MixedNeFa1f
    } else {
        ModelKind::MixedFa
    }
}

fn field(bits: &[bool], dims: Dims) -> Configuration {
    Configuration::from_eta(dims, Boundary::Occupied, bits.iter().map(|&e| u8::from(!e)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn environments_regenerate(ne: bool, pi in 0.05f64..1.0, w in 1usize..30, h in 1usize..30, seed: u64) {
        let p = EnvParams::new(kind_of(ne), pi, w, h, seed);
        prop_assert_eq!(sample_environment(p).unwrap(), sample_environment(p).unwrap());
    }

    #[test]
    fn relabeling_is_idempotent(flags in prop::collection::vec(any::<bool>(), 12 * 9)) {
        let dims = Dims::new(12, 9);
        let a = label_clusters(&flags, dims).unwrap();
        let b = label_clusters(&a.flags(), dims).unwrap();
        prop_assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn boundary_and_path_are_consistent(pi in 0.3f64..0.9, seed: u64, l in 1usize..12) {
        let env = sample_environment(EnvParams::new(ModelKind::MixedFa, pi, 63, 63, seed)).unwrap();
        let grid = coarse_grain(&env, 3).unwrap();
        let labels = label_clusters(&grid.good, grid.dims).unwrap();
        let s = labels.spanning_cluster();
        if let Ok(g) = origin_cluster_geometry(&grid, &labels) {
            let degenerate = g.c0.len() == 1 && labels.label(g.c0[0]) == s;
            for b in &g.boundary {
                prop_assert_eq!(labels.label(*b), s);
                prop_assert!(g.c0.iter().any(|c| c.x.abs_diff(b.x) + c.y.abs_diff(b.y) == 1) || degenerate);
            }
            if !degenerate {
                prop_assert!(g.c0.iter().all(|c| labels.label(*c) != s));
            }
        }
        if let Ok(path) = good_box_path(&grid, &labels, l) {
            prop_assert_eq!(path.len(), l + 1);
            prop_assert!(path.iter().all(|b| grid.is_good(*b)));
            prop_assert!(path.windows(2).all(|w| w[0].x.abs_diff(w[1].x) + w[0].y.abs_diff(w[1].y) == 1));
            let mut sorted = path.clone();
            sorted.sort_by_key(|c| (c.x, c.y));
            sorted.dedup();
            prop_assert_eq!(sorted.len(), path.len());
            prop_assert_eq!(good_box_path(&grid, &labels, l).unwrap(), path);
        }
    }

    #[test]
    fn bp_is_monotone_in_the_field(
        ne: bool,
        seed: u64,
        base in prop::collection::vec(prop::bool::weighted(0.15), 100),
        extra in prop::collection::vec(prop::bool::weighted(0.1), 100),
    ) {
        let env = sample_environment(EnvParams::new(kind_of(ne), 0.5, 10, 10, seed)).unwrap();
        let more: Vec<bool> = base.iter().zip(&extra).map(|(a, b)| *a || *b).collect();
        let (c, c2) = (field(&more, env.dims()), field(&base, env.dims()));
        let rect = env.dims().rect();
        let (big, small) = (bp_closure(&env, &c, rect).unwrap(), bp_closure(&env, &c2, rect).unwrap());
        prop_assert!(small.coords().iter().all(|x| big.contains(*x)));
        let t = |cfg| bp_run(&env, cfg, 100).unwrap().tau0.unwrap_or(u64::MAX);
        prop_assert!(t(&c) <= t(&c2));
    }

    #[test]
    fn easier_sites_never_slow_bp(seed: u64, q in 0.05f64..0.4, x in 0usize..15, y in 0usize..15) {
        let hard = sample_environment(EnvParams::new(ModelKind::MixedFa, 0.3, 15, 15, seed)).unwrap();
        let mut easy = hard.clone();
        easy.set_easy(Coord::new(x, y), true);
        let cfg = sample_equilibrium(q, hard.dims(), Boundary::Occupied, seed ^ 1).unwrap();
        let t = |e: &Environment| bp_run(e, &cfg, 225).unwrap().tau0.unwrap_or(u64::MAX);
        prop_assert!(t(&easy) <= t(&hard));
    }

    #[test]
    fn bp_reaches_a_fixed_point(ne: bool, seed: u64, q in 0.02f64..0.5) {
        let env = sample_environment(EnvParams::new(kind_of(ne), 0.4, 12, 9, seed)).unwrap();
        let mut cfg = sample_equilibrium(q, env.dims(), Boundary::Occupied, seed).unwrap();
        // keep the origin occupied so the run does not stop there
        cfg.set(env.origin(), false);
        if let Some(t) = bp_run(&env, &cfg, u64::MAX).unwrap().tau0 {
            prop_assert!(t <= env.len() as u64);
        }
        let (_, r) = qkcm_core::bootstrap::bp_evolve(&env, &cfg, env.len() as u64 + 1).unwrap();
        prop_assert!(r.fixed_point);
        prop_assert!(r.steps_run <= env.len() as u64);
    }

    #[test]
    fn span_ignores_exterior_and_interior_legal_flips(
        ne: bool,
        seed: u64,
        q in 0.1f64..0.5,
        (x0, y0, w, h) in (0usize..4, 0usize..4, 3usize..8, 3usize..8),
        pick in 0usize..1000,
        outside: bool,
    ) {
        let env = sample_environment(EnvParams::new(kind_of(ne), 0.5, 12, 12, seed)).unwrap();
        let mut cfg = sample_equilibrium(q, env.dims(), Boundary::Occupied, seed).unwrap();
        let rect = Rect::new(x0, y0, w, h);
        let before = bp_closure(&env, &cfg, rect).unwrap();
        let candidates: Vec<Coord> = if outside {
            env.dims().rect().coords().filter(|c| !rect.contains(*c)).collect()
        } else {
            rect.coords().filter(|c| !rect.on_inner_boundary(*c) && constraint(&env, &cfg, *c).unwrap()).collect()
        };
        prop_assume!(!candidates.is_empty());
        cfg.flip(candidates[pick % candidates.len()]);
        prop_assert_eq!(bp_closure(&env, &cfg, rect).unwrap(), before);
    }

    #[test]
    fn spanned_difficult_rectangles_need_empties(
        bits in prop::collection::vec(prop::bool::weighted(0.3), 64),
        (x0, y0, w, h) in (0usize..4, 0usize..4, 1usize..5, 1usize..5),
    ) {
        let env = Environment::uniform(ModelKind::MixedFa, 8, 8, false).unwrap();
        let cfg = field(&bits, env.dims());
        let rect = Rect::new(x0, y0, w, h);
        if internally_spanned(&env, &cfg, rect).unwrap() {
            let empties = rect.coords().filter(|c| cfg.is_empty(*c)).count();
            prop_assert!(empties >= w.div_ceil(2));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn longer_horizons_only_uncensor(ne: bool, seed: u64, q in 0.1f64..0.5, tracked: bool) {
        let env = sample_environment(EnvParams::new(kind_of(ne), 0.5, 9, 9, seed)).unwrap();
        let scheme = if tracked { Scheme::Tracked } else { Scheme::Rejection };
        let run = |t| estimate_tau0(&env, &SimParams::new(q, t, seed).with_scheme(scheme), 40).unwrap().samples;
        let (short, long) = (run(2.0), run(8.0));
        for (a, b) in short.iter().zip(&long) {
            if !a.censored {
                prop_assert!(!b.censored);
                prop_assert_eq!(a.tau, b.tau);
            }
        }
    }

    #[test]
    fn exact_identities_hold(ne: bool, seed: u64, q in 0.1f64..0.6, w in 1usize..4, h in 1usize..4, empty: bool) {
        let env = sample_environment(EnvParams::new(kind_of(ne), 0.5, w, h, seed)).unwrap();
        let b = if empty { Boundary::Empty } else { Boundary::Occupied };
        let g = build_generator(&env, Rect::new(0, 0, w, h), q, b).unwrap();
        let a = ExactTarget::OriginEmpty.mask(&env, &g).unwrap();
        let sol = solve_poisson(&g, &a).unwrap();
        prop_assume!(sol.finite);
        prop_assert!((sol.mean - sol.dirichlet).abs() <= 1e-9 * sol.mean.max(1.0));
        let tt = functional_t(&g, &sol.tau, &a).unwrap();
        prop_assert!((tt - sol.mean).abs() <= 1e-9 * sol.mean.max(1.0));
        for f in random_functions(&a, 50, seed) {
            prop_assert!(functional_t(&g, &f, &a).unwrap() <= tt * (1.0 + 1e-9));
        }
        let tb = taubar(&g, &a).unwrap();
        prop_assert!(tb >= sol.mean * (1.0 - 1e-9));
        let times: Vec<f64> = (1..=8).map(|k| k as f64 * tb / 2.0).collect();
        for (t, p) in times.iter().zip(survival_curve(&g, &a, &times).unwrap()) {
            prop_assert!(p <= (-t / tb).exp() + 1e-8);
        }
    }

    #[test]
    fn fewer_constraints_hit_sooner(ne: bool, seed: u64, q in 0.1f64..0.6, flip in 0usize..12) {
        let hard = sample_environment(EnvParams::new(kind_of(ne), 0.4, 4, 3, seed)).unwrap();
        let mut easy = hard.clone();
        easy.set_easy(Coord::new(flip % 4, flip / 4), true);
        let mean = |e: &Environment| {
            let g = build_generator(e, Rect::new(0, 0, 4, 3), q, Boundary::Empty).unwrap();
            let a = ExactTarget::OriginEmpty.mask(e, &g).unwrap();
            solve_poisson(&g, &a).unwrap().mean
        };
        prop_assert!(mean(&easy) <= mean(&hard) * (1.0 + 1e-9));
    }

    #[test]
    fn difficult_box_caps_the_mixed_gap(seed: u64, q in 0.2f64..0.7, x0 in 0usize..2, y0 in 0usize..2) {
        let mut env = sample_environment(EnvParams::new(ModelKind::MixedFa, 0.5, 4, 4, seed)).unwrap();
        let bx = Rect::new(x0, y0, 3, 3);
        env.plant(bx, false);
        let mixed = spectral_gap(&build_generator(&env, env.dims().rect(), q, Boundary::Empty).unwrap()).unwrap().gap;
        let pure = Environment::uniform(ModelKind::MixedFa, 3, 3, false).unwrap();
        let box_gap = spectral_gap(&build_generator(&pure, pure.dims().rect(), q, Boundary::Empty).unwrap()).unwrap().gap;
        prop_assert!(mixed <= box_gap * (1.0 + 1e-8));
    }

    #[test]
    fn occupied_ne_crossing_blocks_relaxation(seed: u64, q in 0.2f64..0.7, start in 0usize..3) {
        let mut env = sample_environment(EnvParams::new(ModelKind::MixedNeFa1f, 0.6, 4, 4, seed)).unwrap();
        // up-right staircase of difficult sites from the west edge to the occupied top boundary
        let mut c = Coord::new(0, start);
        env.set_easy(c, false);
        while c.y < 3 || c.x < 3 {
            c = if c.y < 3 && (c.x + c.y) % 2 == 0 { Coord::new(c.x, c.y + 1) } else if c.x < 3 { Coord::new(c.x + 1, c.y) } else { Coord::new(c.x, c.y + 1) };
            env.set_easy(c, false);
        }
        let g = build_generator(&env, env.dims().rect(), q, Boundary::Occupied).unwrap();
        let r = spectral_gap(&g).unwrap();
        prop_assert!(!r.ergodic);
        prop_assert_eq!(r.gap, 0.0);
    }
}

#[test]
fn sweep_tables_do_not_depend_on_worker_count() {
    let mut spec = SweepSpec::new(ModelKind::MixedFa, 0.5, vec![0.4, 0.3, 0.2], 11, 24, Dynamics::Kcm).with_seed(4);
    spec.t_max = 5.0;
    spec.t_budget = 40.0;
    let env = spec.environment(0).unwrap();
    let rows = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| kcm_sweep_on(&spec, &env, 0).unwrap().rows)
    };
    assert_eq!(rows(1), rows(3));
}
