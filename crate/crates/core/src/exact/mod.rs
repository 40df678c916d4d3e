//! Exact analysis of the constrained dynamics on small regions: hitting
//! times from the Poisson problem, Dirichlet forms, spectral gaps, the
//! variational time `taubar` and survival probabilities.
//!
//! States are bitmasks over the sites of a rectangle. Sites outside the
//! rectangle are fixed by the boundary convention.

mod checks;
mod generator;
mod linalg;
mod solve;

pub use checks::{verify_block_gap, verify_restricted_inequalities, BlockGapReport, BlockPartition, RestrictedReport};
pub use generator::{ExactTarget, Generator, StateSpace, MAX_SITES};
pub use solve::{
    dirichlet_form, functional_t, mean, solve_poisson, spectral, spectral_gap, survival_curve, survival_probability, taubar,
    HittingSolution, SpectralResult,
};

use crate::environment::Environment;
use crate::error::Result;
use crate::lattice::{Boundary, Rect};

pub fn build_generator(env: &Environment, region: Rect, q: f64, boundary: Boundary) -> Result<Generator> {
    Generator::new(env, region, q, boundary)
}

/// Standard normal test functions vanishing on `A`.
pub fn random_functions(a: &[bool], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = crate::rng::stream_rng(seed, 0x6676);
    (0..count).map(|_| checks::random_in_va(a, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{sample_environment, EnvParams, ModelKind};
    use crate::lattice::Coord;

    fn single(easy: bool, boundary: Boundary, q: f64) -> (Environment, Generator) {
        let env = Environment::uniform(ModelKind::MixedFa, 1, 1, easy).unwrap();
        let g = build_generator(&env, Rect::new(0, 0, 1, 1), q, boundary).unwrap();
        (env, g)
    }

    #[test]
    fn single_site_generators() {
        let (_, g) = single(true, Boundary::Empty, 0.3);
        let m = g.to_dense().unwrap();
        assert_eq!(m[(0, 1)], 0.3);
        assert_eq!(m[(1, 0)], 0.7);
        assert!(g.row_sum_residual() < 1e-12);
        let (_, frozen) = single(false, Boundary::Occupied, 0.3);
        assert!(frozen.to_dense().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_site_hitting_and_spectrum() {
        let q = 0.2;
        let (env, g) = single(true, Boundary::Empty, q);
        let a = ExactTarget::OriginEmpty.mask(&env, &g).unwrap();
        let sol = solve_poisson(&g, &a).unwrap();
        assert!((sol.tau[0] - 1.0 / q).abs() < 1e-12);
        assert!((sol.mean - (1.0 - q) / q).abs() < 1e-12);
        assert!((sol.dirichlet - sol.mean).abs() < 1e-12);
        assert!((taubar(&g, &a).unwrap() - 1.0 / q).abs() < 1e-12);
        assert!((spectral_gap(&g).unwrap().gap - 1.0).abs() < 1e-12);
        for t in [0.0, 0.5, 3.0, 10.0] {
            let p = survival_probability(&g, &a, t).unwrap();
            assert!((p - (1.0 - q) * (-q * t).exp()).abs() < 1e-10, "t = {t}");
        }
        let ind = vec![0.0, 1.0];
        assert!((dirichlet_form(&g, &ind).unwrap() - q * (1.0 - q)).abs() < 1e-15);
        assert_eq!(dirichlet_form(&g, &[2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(functional_t(&g, &[0.0, 0.0], &a).unwrap(), 0.0);
        assert!(matches!(functional_t(&g, &[1.0, 1.0], &a), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn whole_space_target_is_instant() {
        let env = Environment::uniform(ModelKind::MixedFa, 2, 2, true).unwrap();
        let g = build_generator(&env, Rect::new(0, 0, 2, 2), 0.4, Boundary::Empty).unwrap();
        let sol = solve_poisson(&g, &vec![true; g.len()]).unwrap();
        assert!(sol.tau.iter().all(|&t| t == 0.0));
        assert_eq!(survival_probability(&g, &vec![true; g.len()], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn frozen_box_is_unreachable_and_reducible() {
        let env = Environment::uniform(ModelKind::MixedFa, 2, 2, false).unwrap();
        let g = build_generator(&env, Rect::new(0, 0, 2, 2), 0.3, Boundary::Occupied).unwrap();
        let a = ExactTarget::OriginEmpty.mask(&env, &g).unwrap();
        let sol = solve_poisson(&g, &a).unwrap();
        assert!(!sol.finite);
        assert!(sol.tau[0].is_infinite());
        assert!(sol.unreachable.contains(&0));
        let sp = spectral_gap(&g).unwrap();
        assert!(!sp.ergodic);
        assert_eq!(sp.gap, 0.0);
        assert_eq!(taubar(&g, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn capacity_and_encoding() {
        let env = Environment::uniform(ModelKind::MixedFa, 5, 5, true).unwrap();
        assert!(matches!(
            build_generator(&env, Rect::new(0, 0, 5, 5), 0.3, Boundary::Empty),
            Err(crate::Error::Capacity { sites: 25, cap: MAX_SITES })
        ));
        let space = StateSpace::new(Rect::new(1, 1, 3, 3), 0.3).unwrap();
        assert!((space.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut cfg = crate::Configuration::all_occupied(env.dims(), Boundary::Occupied);
        for s in [0usize, 5, 77, 511] {
            space.decode(s, &mut cfg).unwrap();
            assert_eq!(space.encode(&cfg).unwrap(), s);
        }
    }

    #[test]
    fn random_instances_satisfy_identities() {
        for seed in 0..12u64 {
            let kind = if seed % 2 == 0 { ModelKind::MixedFa } else { ModelKind::MixedNeFa1f };
            let env = sample_environment(EnvParams::new(kind, 0.5, 3, 3, seed)).unwrap();
            let q = [0.1, 0.3, 0.5][seed as usize % 3];
            let g = build_generator(&env, Rect::new(0, 0, 3, 3), q, Boundary::Empty).unwrap();
            assert!(g.detailed_balance_residual() < 1e-12);
            let a = ExactTarget::OriginEmpty.mask(&env, &g).unwrap();
            let sol = solve_poisson(&g, &a).unwrap();
            if !sol.finite {
                continue;
            }
            assert!((sol.mean - sol.dirichlet).abs() <= 1e-9 * sol.mean);
            let tb = taubar(&g, &a).unwrap();
            assert!(tb >= sol.mean * (1.0 - 1e-12));
            for f in random_functions(&a, 50, seed) {
                let t = functional_t(&g, &f, &a).unwrap();
                let delta: Vec<f64> = f.iter().zip(&sol.tau).map(|(x, y)| x - y).collect();
                let d = dirichlet_form(&g, &delta).unwrap();
                assert!((sol.mean - d - t).abs() <= 1e-9 * sol.mean.max(d));
            }
            let times: Vec<f64> = (0..10).map(|i| i as f64 * tb / 3.0).collect();
            for (t, p) in times.iter().zip(survival_curve(&g, &a, &times).unwrap()) {
                assert!(p <= (-t / tb).exp() + 1e-8);
            }
        }
    }

    #[test]
    fn iterative_paths_match_dense() {
        // 11 sites exceed the dense threshold for the hitting-time solve
        let env = sample_environment(EnvParams::new(ModelKind::MixedFa, 0.6, 4, 3, 3)).unwrap();
        let g = build_generator(&env, Rect::new(0, 0, 4, 3), 0.4, Boundary::Empty).unwrap();
        let a = ExactTarget::AnyEmpty(vec![Coord::new(1, 1), Coord::new(3, 2)]).mask(&env, &g).unwrap();
        let sol = solve_poisson(&g, &a).unwrap();
        assert!(sol.finite);
        assert!((sol.mean - sol.dirichlet).abs() <= 1e-9 * sol.mean);
        for seed in 0..4 {
            let kind = if seed % 2 == 0 { ModelKind::MixedFa } else { ModelKind::MixedNeFa1f };
            let env = sample_environment(EnvParams::new(kind, 0.6, 4, 2, seed)).unwrap();
            let g = build_generator(&env, Rect::new(0, 0, 4, 2), 0.3, Boundary::Empty).unwrap();
            let m = g.to_dense().unwrap();
            let n = g.len();
            let w: Vec<f64> = (0..n).map(|s| g.space.weight(s).sqrt()).collect();
            let sym = nalgebra::DMatrix::from_fn(n, n, |i, j| -w[i] * m[(i, j)] / w[j]);
            let ev = linalg::sorted_eigenvalues((&sym + sym.transpose()) * 0.5);
            let dense = solve::gap_with(&g, true).unwrap();
            if !dense.ergodic {
                continue;
            }
            let iter = solve::gap_with(&g, false).unwrap();
            assert!((dense.gap - ev[1]).abs() < 1e-10 * ev[1]);
            assert!((iter.gap - ev[1]).abs() < 1e-9 * ev[1], "{} vs {}", iter.gap, ev[1]);
        }
    }

    #[test]
    fn block_gap_closed_form() {
        let env = Environment::uniform(ModelKind::MixedNeFa1f, 4, 4, false).unwrap();
        let part = BlockPartition::ne_bisection(Coord::new(0, 0), 2).unwrap();
        for q in [0.1, 0.3, 0.5] {
            let rep = verify_block_gap(&env, &part, q).unwrap();
            assert!(rep.ok, "{rep:?}");
        }
        let open = BlockPartition { always: vec![Coord::new(0, 0)], gated: vec![Coord::new(1, 0)], gate: vec![] };
        let rep = verify_block_gap(&env, &open, 0.3).unwrap();
        assert!((rep.computed - 1.0).abs() < 1e-12);
        let three = BlockPartition {
            always: vec![Coord::new(0, 0), Coord::new(1, 0), Coord::new(2, 0)],
            gated: vec![Coord::new(0, 1), Coord::new(1, 1)],
            gate: vec![Coord::new(0, 0), Coord::new(2, 0)],
        };
        assert!(verify_block_gap(&env, &three, 0.2).unwrap().ok);
    }

    #[test]
    fn restricted_inequalities_hold() {
        let env = sample_environment(EnvParams::new(ModelKind::MixedFa, 0.5, 3, 3, 9)).unwrap();
        let region = Rect::new(0, 0, 3, 3);
        let o = env.origin();
        let rep = verify_restricted_inequalities(&env, region, region, &ExactTarget::OriginEmpty, 0.3, Boundary::Empty, 200, 1)
            .unwrap();
        assert!(rep.ok, "{rep:?}");
        let h = Rect::new(o.x, o.y, 1, 1);
        let two_env = Environment::uniform(ModelKind::MixedFa, 2, 1, true).unwrap();
        let rep2 = verify_restricted_inequalities(
            &two_env,
            Rect::new(0, 0, 2, 1),
            Rect::new(1, 0, 1, 1),
            &ExactTarget::SiteEmpty(Coord::new(1, 0)),
            0.4,
            Boundary::Empty,
            100,
            2,
        )
        .unwrap();
        assert!(rep2.ok);
        // a lone easy site with occupied surroundings never moves
        assert_eq!(rep2.gamma_h, 0.0);
        let rep3 = verify_restricted_inequalities(&env, region, h, &ExactTarget::OriginEmpty, 0.3, Boundary::Empty, 50, 3).unwrap();
        assert!(rep3.ok);
    }
}
