use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rankq::annulus::search_annulus;
use rankq::bintree::cut_with_anchors;
use rankq::rsh::object_column;
use rankq::{
    annulus_bounds, collision_prob_exact, compute_rank_matrix, diameter, disorder_constant, distortion_fit,
    insertion_bound, AnnulusIndex, BuildConfig, Dataset, Exact, HiddenSpace, HierIndex, OracleSession, Point,
    RankMatrix, RankMode, RshParams, RshTableSet,
};

fn small_space() -> impl Strategy<Value = HiddenSpace<f64>> {
    prop_oneof![
        (2usize..40, 1usize..4, any::<u64>()).prop_map(|(n, d, s)| HiddenSpace::torus(n, d, s).unwrap()),
        prop::collection::vec(-50i32..50, 2..40)
            .prop_map(|v| HiddenSpace::line(v.into_iter().map(f64::from).collect()).unwrap()),
    ]
}

fn ranks(s: &HiddenSpace<f64>) -> RankMatrix {
    compute_rank_matrix(&OracleSession::new(s), RankMode::Direct).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn oracle_answers_are_consistent(space in small_space(), triples in prop::collection::vec((0usize..1000, 0usize..1000, 0usize..1000), 1..50)) {
        let n = space.n();
        let s = OracleSession::new(&space);
        let asked = triples.len() as u64 * 3;
        for (q, u, v) in triples {
            let (q, u, v) = (Point::Object(q % n), Point::Object(u % n), Point::Object(v % n));
            let a = s.ask(q, u, v).unwrap();
            prop_assert!(a == u || a == v);
            prop_assert_eq!(a, s.ask(q, v, u).unwrap());
            prop_assert_eq!(a, s.ask(q, u, v).unwrap());
        }
        prop_assert_eq!(s.ledger().total(), asked);
    }

    #[test]
    fn ledger_counts_every_question(space in small_space(), k in 0usize..200) {
        let s = OracleSession::new(&space);
        for i in 0..k {
            s.ask(Point::Object(i % space.n()), Point::Object(0), Point::Object(space.n() - 1)).unwrap();
        }
        prop_assert_eq!(s.ledger().total(), k as u64);
    }

    #[test]
    fn ranking_matches_sort_within_bound(space in small_space(), o in 0usize..1000, keep in 0usize..40) {
        let n = space.n();
        let o = o % n;
        let rm = ranks(&space);
        let set: Vec<usize> = (0..n).filter(|&j| j != o).collect();
        let s = OracleSession::new(&space).scoped();
        let got = s.rank_objects(Point::Object(o), &set).unwrap();
        prop_assert!(s.ledger().total() <= insertion_bound(set.len()));
        prop_assert_eq!(&got, &rm.ordering(o)[1..].to_vec());
        let head = s.rank_prefix(Point::Object(o), &set, keep).unwrap();
        prop_assert_eq!(&head[..], &got[..keep.min(got.len())]);
    }

    #[test]
    fn linear_distortion_bounds_disorder(space in small_space(), seed in any::<u64>()) {
        prop_assume!(space.n() >= 3);
        let rm = ranks(&space);
        let fit = distortion_fit(&rm, rm.n(), seed).unwrap();
        prop_assert!(fit.sandwich_holds());
        let d = disorder_constant(&rm).unwrap();
        prop_assert!(d.d <= fit.gamma, "D = {} > gamma = {}", d.d, fit.gamma);
    }

    #[test]
    fn balls_lie_in_the_annulus(space in small_space(), zeta in 1u64..8) {
        let rm = ranks(&space);
        let n = rm.n();
        let dr = disorder_constant(&rm).unwrap();
        for x in 0..n {
            for q in (0..n).filter(|&q| q != x) {
                let j = rm.get(x, q) as u64;
                let b = annulus_bounds(j, zeta, dr.d);
                let (lo, hi) = search_annulus(j as usize, zeta as usize, dr.d_f64(), n);
                for o in (0..n).filter(|&o| o != x && rm.get(q, o) as u64 <= zeta) {
                    let r = rm.get(x, o);
                    prop_assert!(b.contains(r));
                    prop_assert!(lo as u32 <= r && r as usize <= hi);
                }
            }
        }
    }

    #[test]
    fn cuts_are_sound_and_narrow(space in small_space(), a in 0usize..1000, b in 0usize..1000) {
        let n = space.n();
        let (x1, x2) = (a % n, b % n);
        prop_assume!(x1 != x2);
        let rm = ranks(&space);
        let d = disorder_constant(&rm).unwrap().d;
        let all: Vec<usize> = (0..n).collect();
        let s = OracleSession::new(&space).scoped();
        let cut = cut_with_anchors(&s, &all, x1, x2).unwrap();
        prop_assert_eq!(s.ledger().total(), n as u64 - 2);
        let k = rm.get(x1, x2);
        let want: BTreeSet<usize> = all.iter().copied().filter(|&u| rm.get(x1, u) < k).collect();
        prop_assert_eq!(cut.s0.iter().copied().collect::<BTreeSet<_>>(), want);
        prop_assert_eq!(cut.s0.len() + cut.s1.len(), n);
        prop_assert!(cut.s0.contains(&x1) && cut.s1.contains(&x2));
        let diam = Exact::from_integer(diameter(&rm, &cut.s0).unwrap() as i64);
        prop_assert!(diam <= Exact::from_integer(4 * k as i64) * d);
    }

    #[test]
    fn collision_law_is_oriented_by_the_sandwich(space in small_space(), eps in 0.1f64..2.0) {
        prop_assume!(space.n() >= 3);
        let rm = ranks(&space);
        let n = rm.n();
        let fit = distortion_fit(&rm, n, 0).unwrap();
        let c = *fit.c.numer() as f64 / *fit.c.denom() as f64;
        let g = *fit.gamma.numer() as f64 / *fit.gamma.denom() as f64;
        let nn = (n * n) as f64;
        let r = (n / 4).max(1) as f64;
        for q in 0..n {
            let col = object_column(&rm, q);
            for u in (0..n).filter(|&u| u != q) {
                let p = collision_prob_exact(&rm, u, &col);
                let rank = rm.get(q, u) as f64;
                if rank < r {
                    prop_assert!(p >= 1.0 - g * c * r / nn - 1e-12);
                }
                if rank > (1.0 + eps) * r {
                    prop_assert!(p <= 1.0 - c * (1.0 + eps) * r / nn + 1e-12);
                }
            }
        }
    }

    #[test]
    fn index_files_round_trip(n in 2usize..48, d in 1usize..3, seed in any::<u64>()) {
        let space = HiddenSpace::<f64>::torus(n, d, seed).unwrap();
        let ds = Dataset::new(space.clone());
        prop_assert_eq!(&Dataset::<f64>::from_bytes(&ds.to_bytes().unwrap()).unwrap(), &ds);
        let s = OracleSession::new(&space);
        let hier = HierIndex::build(&s, BuildConfig::new(2.0, 1.0, seed).unwrap()).unwrap();
        prop_assert_eq!(&HierIndex::from_bytes(&hier.to_bytes()).unwrap(), &hier);
        let ann = AnnulusIndex::learn(&s, 1 + (seed as usize) % n, seed).unwrap();
        prop_assert_eq!(&AnnulusIndex::from_bytes(&ann.to_bytes()).unwrap(), &ann);
        let rsh = RshTableSet::build(&s, RshParams::explicit(1, 1.0, 3, 2).unwrap(), seed).unwrap();
        let bytes = rsh.to_bytes();
        prop_assert_eq!(&RshTableSet::from_bytes(&bytes).unwrap(), &rsh);
        prop_assert!(RshTableSet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn located_rank_is_exact(seed in any::<u64>(), m in 1usize..10) {
        let space = HiddenSpace::<f64>::torus(60, 2, seed).unwrap();
        let s = OracleSession::new(&space);
        let idx = AnnulusIndex::learn(&s, m, seed).unwrap();
        let q = space.random_query(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let qr = rankq::QueryRanks::compute(&space.ground_truth().unwrap(), &q).unwrap();
        let sq = s.with_query(&q).unwrap();
        let t = idx.search(&sq, &rankq::AnnulusParams::new(3, 2.0, seed)).unwrap();
        prop_assert_eq!(t.j_prime as u32, qr.of_query[t.x]);
        prop_assert_eq!(t.questions, (m as u64 - 1) + t.locate_questions + t.draws.len() as u64);
        let rm = ranks(&space);
        for &c in &t.draws {
            let r = rm.get(t.x, c) as usize;
            prop_assert!(t.lo <= r && r <= t.hi);
        }
    }
}
