use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tactforge_core::pattern::{
    centroid_residual, generate, max_offpeak_autocorrelation, nearest_neighbor_tour, path_length, solve_tour, stipple,
    two_opt, PatternConfig, PointSet,
};

fn random_points(n: usize, seed: u64) -> PointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointSet {
        points: (0..n).map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)]).collect(),
        domain_size: 10.0,
        seed,
        iterations: 0,
    }
}

fn is_permutation(order: &[usize], n: usize) -> bool {
    let mut s = order.to_vec();
    s.sort_unstable();
    s == (0..n).collect::<Vec<_>>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tours_are_permutations(n in 2usize..120, seed in any::<u64>()) {
        let ps = random_points(n, seed);
        let t = solve_tour(&ps, seed).unwrap();
        prop_assert!(is_permutation(&t.order, n));
        prop_assert!((t.length - path_length(&ps.points, &t.order)).abs() <= 1e-9 * t.length.max(1.0));
    }
}

#[test]
fn two_opt_never_lengthens_the_seed_tour() {
    for n in [10usize, 50, 200] {
        for i in 0..100u64 {
            let ps = random_points(n, 1000 * n as u64 + i);
            let nn = nearest_neighbor_tour(&ps, i).unwrap();
            let seed_len = path_length(&ps.points, &nn.order);
            let opt = two_opt(&ps, nn);
            assert!(is_permutation(&opt.order, n));
            let len = path_length(&ps.points, &opt.order);
            assert!(len <= seed_len, "n={n} case {i}: {len} > {seed_len}");
        }
    }
}

#[test]
fn lloyd_residual_does_not_grow() {
    for seed in 0..4u64 {
        let mut ps = stipple(300, 10.0, 0, seed).unwrap();
        let mut last = centroid_residual(&ps.points, 10.0);
        for it in 0..25 {
            ps.points = tactforge_core::pattern::voronoi_centroids(&ps.points, 10.0);
            let r = centroid_residual(&ps.points, 10.0);
            assert!(r <= last, "seed {seed} iteration {it}: {r} > {last}");
            last = r;
        }
    }
}

#[test]
fn identical_seeds_are_bit_identical() {
    let cfg = PatternConfig {
        n: 600,
        domain_mm: 8.0,
        iterations: 8,
        ..PatternConfig::default()
    };
    let a = generate(&cfg, 17).unwrap();
    let b = generate(&cfg, 17).unwrap();
    assert_eq!(a.points, b.points);
    assert_eq!(a.tour, b.tour);
    assert_eq!(a.image, b.image);
    let c = generate(&cfg, 18).unwrap();
    assert_ne!(a.points, c.points);
}

#[test]
fn default_pattern_is_locally_unique() {
    let g = generate(&PatternConfig::default(), 0).unwrap();
    assert_eq!(g.points.points.len(), 8192);
    assert!(is_permutation(&g.tour.order, 8192));
    assert!(g.tour.length <= g.nearest_neighbor_length);
    let cov = tactforge_core::pattern::coverage_fraction(&g.image);
    assert!((0.2..=0.6).contains(&cov), "coverage {cov}");
    let ac = max_offpeak_autocorrelation(&g.image.pixels, 2.0);
    assert!(ac < 0.5, "off-peak autocorrelation {ac}");
}
