//! End-to-end scenarios on constructed instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankq::rsh::object_column;
use rankq::{
    build_tree, collision_prob_exact, compute_rank_matrix, derive_params, disorder_constant, distortion_fit,
    phi_exact, popularity_scores, verify_sampling_properties, BuildConfig, Error, HiddenSpace, HierIndex,
    OracleSession, QueryPoint, QueryRanks, RankMatrix, RankMode, RshParams, RshTableSet,
};

fn ranks(s: &HiddenSpace<f64>) -> RankMatrix {
    compute_rank_matrix(&OracleSession::new(s), RankMode::Direct).unwrap()
}

fn euclidean(points: &[(f64, f64)]) -> HiddenSpace<f64> {
    let n = points.len();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = ((points[i].0 - points[j].0).powi(2) + (points[i].1 - points[j].1).powi(2)).sqrt();
        }
    }
    HiddenSpace::from_matrix(n, m).unwrap()
}

#[test]
fn hierarchical_index_satisfies_sampling_properties() {
    let space = HiddenSpace::<f64>::torus(256, 2, 21).unwrap();
    let rm = ranks(&space);
    let dr = disorder_constant(&rm).unwrap();
    let s = OracleSession::new(&space);
    let (idx, _) = HierIndex::build_with_retry(&s, BuildConfig::from_disorder(&dr, 2.0, 1).unwrap(), 5).unwrap();
    let q = space.random_query(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let qr = QueryRanks::compute(&space.ground_truth().unwrap(), &q).unwrap();
    let report = verify_sampling_properties(&idx, &rm, Some(&qr)).unwrap();
    assert!(report.pass, "pass fraction {}", report.pass_fraction());
    assert!(report.query_pass());
    let hit = idx.search(&s.with_query(&q).unwrap()).unwrap();
    assert_eq!(hit.nearest, qr.nearest());
}

#[test]
fn hierarchical_search_on_an_exact_line() {
    let space = HiddenSpace::line((0..64).map(|i| (i * i) as f64).collect()).unwrap();
    let s = OracleSession::new(&space);
    let idx = HierIndex::build(&s, BuildConfig::new(1.0, 2.0, 5).unwrap()).unwrap();
    for target in [0usize, 7, 40, 63] {
        let q = QueryPoint::Coords(vec![(target * target) as f64 + 0.25]);
        assert_eq!(idx.search(&s.with_query(&q).unwrap()).unwrap().nearest, target);
    }
}

#[test]
fn degenerate_cuts_are_retried_then_accepted() {
    let space = HiddenSpace::line(vec![0.0f64, 1.0, 3.0]).unwrap();
    let s = OracleSession::new(&space);
    let tree = build_tree(&s, &[0, 1, 2], 1, 16, 4).unwrap();
    assert!(tree.retries >= 3);
    assert!(tree.accepted_degenerate >= 1);
    let mut ids: Vec<usize> = tree.leaves().flatten().copied().collect();
    ids.sort_unstable();
    assert_eq!(ids, vec![0, 1, 2]);
}

#[test]
fn trees_are_deterministic_per_seed() {
    let space = HiddenSpace::<f64>::torus(120, 2, 8).unwrap();
    let s = OracleSession::new(&space);
    let all: Vec<usize> = (0..120).collect();
    let a = build_tree(&s, &all, 4, 64, 17).unwrap();
    let b = build_tree(&s, &all, 4, 64, 17).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn duplicated_center_is_most_popular() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut pts = vec![(0.0, 0.0), (0.0, 0.0)];
    for k in 0..58 {
        let t = (k as f64 + rng.gen::<f64>() * 0.5) / 58.0 * std::f64::consts::TAU;
        pts.push((t.cos(), t.sin()));
    }
    let space = euclidean(&pts);
    let s = OracleSession::new(&space);
    let first = (0..20u64)
        .filter(|&seed| {
            let est = popularity_scores(&s, 1000, seed).unwrap();
            est.ranking[0] < 2
        })
        .count();
    assert!(first >= 18, "center ranked first in {first} of 20 seeds");
}

#[test]
fn outlier_is_least_popular() {
    let mut pts: Vec<f64> = (0..20).map(|i| i as f64 * 1.3).collect();
    pts.push(1000.0);
    let rm = ranks(&HiddenSpace::line(pts).unwrap());
    let phi: Vec<f64> = (0..21).map(|u| phi_exact(&rm, u)).collect();
    let min = phi.iter().cloned().fold(f64::MAX, f64::min);
    assert_eq!(phi[20], min);
    assert!(phi.iter().take(20).all(|&p| p > min));
}

#[test]
fn evenly_spaced_circle_has_flat_popularity() {
    let n = 41;
    let coords: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    let rm = ranks(&HiddenSpace::torus_from_coords(1, coords).unwrap());
    let phi: Vec<f64> = (0..n).map(|u| phi_exact(&rm, u)).collect();
    let spread = phi.iter().cloned().fold(f64::MIN, f64::max) - phi.iter().cloned().fold(f64::MAX, f64::min);
    // equidistant neighbors are split by id, which moves each rank by at most one
    assert!(spread <= 1.0 / n as f64, "spread {spread}");
}

#[test]
fn near_pairs_collide_more_than_far_pairs() {
    let space = HiddenSpace::<f64>::torus(80, 1, 12).unwrap();
    let rm = ranks(&space);
    let q = 0;
    let order = rm.ordering(q);
    let col = object_column(&rm, q);
    let near = collision_prob_exact(&rm, order[1], &col);
    let far = collision_prob_exact(&rm, order[79], &col);
    assert!(near > far);
    assert_eq!(collision_prob_exact(&rm, q, &col), 1.0);
}

#[test]
fn bucket_load_falls_with_more_bits() {
    let space = HiddenSpace::<f64>::torus(100, 2, 13).unwrap();
    let s = OracleSession::new(&space);
    let load = |bits: usize| {
        (0..10u64)
            .map(|seed| {
                let set = RshTableSet::build(&s, RshParams::explicit(5, 1.0, bits, 1).unwrap(), seed).unwrap();
                let t = &set.tables()[0];
                t.buckets.values().map(|b| (b.len() * b.len()) as f64).sum::<f64>() / 100.0
            })
            .sum::<f64>()
            / 10.0
    };
    let loads: Vec<f64> = (0..6).map(load).collect();
    assert_eq!(loads[0], 100.0);
    assert!(loads.windows(2).all(|w| w[1] < w[0]), "{loads:?}");
}

#[test]
fn query_at_an_object_returns_it() {
    let space = HiddenSpace::<f64>::torus(200, 2, 14).unwrap();
    let s = OracleSession::new(&space);
    let set = RshTableSet::build(&s, RshParams::explicit(10, 1.0, 6, 6).unwrap(), 3).unwrap();
    let gt = space.ground_truth().unwrap();
    for u in [0usize, 57, 199] {
        let q = QueryPoint::Coords(gt.coords(u).unwrap().to_vec());
        let trace = set.query(&s.with_query(&q).unwrap()).unwrap();
        assert_eq!(trace.result, Some(u));
        assert_eq!(trace.questions, 36 + trace.comparisons);
    }
}

#[test]
fn vacuous_radius_accepts_any_bucket() {
    let space = HiddenSpace::<f64>::torus(50, 2, 15).unwrap();
    let s = OracleSession::new(&space);
    let params = RshParams::explicit(25, 1.0, 0, 1).unwrap();
    assert!(params.far_rank() >= 50);
    let set = RshTableSet::build(&s, params, 0).unwrap();
    assert_eq!(set.build_questions(), 0);
    let q = space.random_query(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(set.query(&s.with_query(&q).unwrap()).unwrap().result.is_some());
}

#[test]
fn derived_parameters_respect_the_exponent_bound() {
    let space = HiddenSpace::<f64>::torus(100, 1, 16).unwrap();
    let rm = ranks(&space);
    let fit = distortion_fit(&rm, 100, 0).unwrap();
    let gamma = *fit.gamma.numer() as f64 / *fit.gamma.denom() as f64;
    if gamma >= 2.0 {
        assert!(matches!(derive_params(100, 5, 1.0, &fit), Err(Error::Parameterization(_))));
    }
    let eps = 2.0 * gamma;
    let p = derive_params(100, 1, eps, &fit).unwrap();
    let bound = 1.0 / ((1.0 + eps) / gamma - 1.0);
    assert!(p.theta.unwrap() <= bound, "theta {} > {bound}", p.theta.unwrap());
    assert!(p.big_p.unwrap() < p.p.unwrap());
}
