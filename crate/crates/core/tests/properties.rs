//! Property tests for the algebraic and structural invariants.

use std::collections::{HashMap, HashSet};

use proptest::prelude::*;

use poirec_core::checkin::{
    assign_time_slot, build_frequency_matrix, fit_home_location, split_by_date, CheckIn,
    TimeSlotSpec,
};
use poirec_core::eval::{f1_at_k, precision_at_k, recall_at_k};
use poirec_core::graph::{KnowledgeGraph, PoiId, Triple, UserId};
use poirec_core::mf::FactorModel;
use poirec_core::transr::compose_relation_embedding;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn checkin(user: u8, poi: u8, lat: f64, lon: f64, ts: i64) -> CheckIn<f64> {
    CheckIn::new(format!("u{user}"), format!("p{poi}"), lat, lon, ts, None).unwrap()
}

prop_compose! {
    fn arb_checkins()(
        raw in prop::collection::vec((0u8..5, 0u8..6, -5.0f64..5.0, -5.0f64..5.0, 1i64..2000), 1..60)
    ) -> Vec<CheckIn<f64>> {
        raw.into_iter().map(|(u, p, lat, lon, ts)| checkin(u, p, lat, lon, ts)).collect()
    }
}

prop_compose! {
    fn arb_vectors()(n in 1usize..8)(
        a in prop::collection::vec(-2.0f64..2.0, n),
        b in prop::collection::vec(-2.0f64..2.0, n),
        c in prop::collection::vec(-2.0f64..2.0, n),
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (a, b, c)
    }
}

proptest! {
    #[test]
    fn hadamard_composition_is_commutative_associative_with_identity(
        (a, b, c) in arb_vectors()
    ) {
        let (a, b, c) = (Array1::from(a), Array1::from(b), Array1::from(c));
        let ones = Array1::from_elem(a.len(), 1.0);

        let ab = compose_relation_embedding(&[a.view(), b.view()]).unwrap();
        let ba = compose_relation_embedding(&[b.view(), a.view()]).unwrap();
        for (x, y) in ab.iter().zip(ba.iter()) {
            prop_assert_eq!(x, y);
        }

        let ab_c = compose_relation_embedding(&[ab.view(), c.view()]).unwrap();
        let bc = compose_relation_embedding(&[b.view(), c.view()]).unwrap();
        let a_bc = compose_relation_embedding(&[a.view(), bc.view()]).unwrap();
        for (x, y) in ab_c.iter().zip(a_bc.iter()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0));
        }

        let a_ones = compose_relation_embedding(&[a.view(), ones.view()]).unwrap();
        prop_assert_eq!(a_ones, a);
    }

    #[test]
    fn split_preserves_the_record_multiset(records in arb_checkins(), frac in 0.1f64..0.9) {
        let sorted_key = |c: &CheckIn<f64>| (c.timestamp, c.user.clone(), c.poi.clone());
        let mut before: Vec<_> = records.iter().map(&sorted_key).collect();
        before.sort();

        match split_by_date(records, frac) {
            Ok(split) => {
                let mut after: Vec<_> =
                    split.train.iter().chain(split.test.iter()).map(&sorted_key).collect();
                after.sort();
                prop_assert_eq!(before, after);
                prop_assert!(split.train.iter().all(|c| c.timestamp < split.cutoff_timestamp));
                prop_assert!(split.test.iter().all(|c| c.timestamp >= split.cutoff_timestamp));
                prop_assert!(!split.train.is_empty() && !split.test.is_empty());
            }
            Err(_) => {
                // Only legitimate for degenerate inputs: too few records or
                // a quantile that leaves one side empty.
            }
        }
    }

    #[test]
    fn home_fit_is_translation_equivariant(
        points in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..12),
        shift in (-5.0f64..5.0, -5.0f64..5.0),
    ) {
        let base: Vec<CheckIn<f64>> = points
            .iter()
            .enumerate()
            .map(|(i, &(lat, lon))| checkin(0, 0, lat, lon, i as i64 + 1))
            .collect();
        let moved: Vec<CheckIn<f64>> = points
            .iter()
            .enumerate()
            .map(|(i, &(lat, lon))| checkin(0, 0, lat + shift.0, lon + shift.1, i as i64 + 1))
            .collect();
        let h0 = fit_home_location(&base).unwrap();
        let h1 = fit_home_location(&moved).unwrap();
        prop_assert!((h1.mu.0 - h0.mu.0 - shift.0).abs() < 1e-9);
        prop_assert!((h1.mu.1 - h0.mu.1 - shift.1).abs() < 1e-9);
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((h1.sigma[i][j] - h0.sigma[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn frequency_matrix_sums_match_per_key_tallies(records in arb_checkins()) {
        let users: Vec<String> = (0..5).map(|i| format!("u{i}")).collect();
        let pois: Vec<String> = (0..6).map(|i| format!("p{i}")).collect();
        let m = build_frequency_matrix(&records, &users, &pois).unwrap();

        let mut per_user = vec![0u64; users.len()];
        let mut per_poi = vec![0u64; pois.len()];
        for c in &records {
            let u: usize = c.user[1..].parse().unwrap();
            let p: usize = c.poi[1..].parse().unwrap();
            per_user[u] += 1;
            per_poi[p] += 1;
        }
        prop_assert_eq!(m.row_sums(), per_user);
        prop_assert_eq!(m.col_sums(), per_poi);
    }

    #[test]
    fn time_slots_are_total_and_in_range(
        ts in 1i64..4_000_000_000,
        tz in -12.0f64..14.0,
        hours_idx in 0usize..6,
    ) {
        let hours = [1u32, 2, 4, 8, 12, 24][hours_idx];
        let spec = TimeSlotSpec::new(hours).unwrap();
        let slot = assign_time_slot(ts, &spec, tz);
        prop_assert!(slot < spec.slots_per_day());
    }

    #[test]
    fn recall_is_monotone_in_k_and_metrics_are_bounded(
        seed in 0u64..5000,
        n_users in 1usize..8,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pool: Vec<String> = (0..15).map(|i| format!("p{i}")).collect();
        let mut lists = Vec::new();
        let mut truths: Vec<HashSet<String>> = Vec::new();
        for _ in 0..n_users {
            use rand::seq::SliceRandom;
            let mut l = pool.clone();
            l.shuffle(&mut rng);
            l.truncate(rng.random_range(0..12));
            lists.push(l);
            let mut t = pool.clone();
            t.shuffle(&mut rng);
            truths.push(t.into_iter().take(rng.random_range(1..5)).collect());
        }
        let mut prev_recall = 0.0;
        for k in 1..=12usize {
            let prec = precision_at_k(&lists, &truths, k).unwrap();
            let rec = recall_at_k(&lists, &truths, k).unwrap();
            let f1 = f1_at_k(prec, rec);
            prop_assert!((0.0..=1.0).contains(&prec));
            prop_assert!((0.0..=1.0).contains(&rec));
            prop_assert!((0.0..=1.0).contains(&f1));
            prop_assert!(rec + 1e-12 >= prev_recall, "recall decreased at k={}", k);
            prev_recall = rec;
        }
    }

    #[test]
    fn combined_ranking_is_invariant_under_positive_rescaling(
        seed in 0u64..5000,
        scale_num in 1u32..500,
    ) {
        let scale = scale_num as f64 / 100.0; // (0, 5]
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 3usize;
        let n_pois = 6usize;
        let fill = |r: usize, c: usize, rng: &mut ChaCha8Rng| {
            Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
        };
        let st_u = fill(k, 1, &mut rng);
        let st_p = fill(k, n_pois, &mut rng);
        let pref_u = fill(k, 1, &mut rng);
        let pref_p = fill(k, n_pois, &mut rng);
        let pois: Vec<PoiId> = (0..n_pois as u32).map(PoiId).collect();

        let base = FactorModel::new(
            k, 0.0, st_u.clone(), st_p.clone(), pref_u.clone(), pref_p.clone(),
            vec![UserId(0)], pois.clone(),
        );
        let rescaled_st = FactorModel::new(
            k, 0.0, st_u.mapv(|x| x * scale), st_p.clone(), pref_u.clone(), pref_p.clone(),
            vec![UserId(0)], pois.clone(),
        );
        let rescaled_pref = FactorModel::new(
            k, 0.0, st_u, st_p, pref_u.mapv(|x| x * scale), pref_p,
            vec![UserId(0)], pois.clone(),
        );

        let rank = |m: &FactorModel<f64>| -> Vec<u32> {
            let mut scored: Vec<(u32, f64)> = pois
                .iter()
                .map(|&p| (p.0, m.combine(UserId(0), p).unwrap()))
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            scored.into_iter().map(|(p, _)| p).collect()
        };
        let expected = rank(&base);
        prop_assert_eq!(&expected, &rank(&rescaled_st));
        prop_assert_eq!(&expected, &rank(&rescaled_pref));
    }

    #[test]
    fn sampled_negatives_satisfy_the_corruption_contract(
        seed in 0u64..5000,
        n_users in 2u32..6,
        n_pois in 2u32..6,
    ) {
        let mut graph = KnowledgeGraph::default();
        graph.slots_per_day = 1;
        graph.region_count = 1;
        for i in 0..n_users {
            graph.vocab.intern_user(&format!("u{i}"));
        }
        for i in 0..n_pois {
            graph.vocab.intern_poi(&format!("p{i}"));
        }
        let r = graph.compose_relation_id(0, 0, None);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // A sparse random positive set, leaving room for corruptions.
        for u in 0..n_users {
            let p = rng.random_range(0..n_pois);
            graph.add_positive(UserId(u), r, PoiId(p)).unwrap();
        }
        let pos = graph.positives()[rng.random_range(0..graph.positives().len())];
        if let Ok(negs) = graph.sample_negatives(pos, 2, &mut rng) {
            let mut seen = HashSet::new();
            for neg in negs {
                prop_assert!(!graph.contains(&neg));
                prop_assert!(seen.insert(neg), "negatives must be distinct");
                prop_assert!((neg.head != pos.head) ^ (neg.tail != pos.tail));
                prop_assert_eq!(neg.relation, pos.relation);
            }
        }
    }
}

#[test]
fn time_slots_cover_the_day_surjectively() {
    for hours in [1u32, 2, 4, 8, 12, 24] {
        let spec = TimeSlotSpec::new(hours).unwrap();
        let mut seen = HashSet::new();
        for hour in 0..24i64 {
            seen.insert(assign_time_slot(hour * 3600 + 30, &spec, 0.0));
        }
        assert_eq!(seen.len() as u32, spec.slots_per_day(), "h={hours}");
    }
}

#[test]
fn split_error_cases_are_the_documented_ones() {
    // Uniform timestamps cannot split.
    let records: Vec<CheckIn<f64>> = (0..6).map(|_| checkin(0, 0, 0.0, 0.0, 9)).collect();
    assert!(split_by_date(records, 0.5).is_err());
}

#[test]
fn frequency_matrix_total_equals_record_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let records: Vec<CheckIn<f64>> = (0..200)
        .map(|i| checkin(rng.random_range(0..5), rng.random_range(0..6), 0.0, 0.0, i + 1))
        .collect();
    let users: Vec<String> = (0..5).map(|i| format!("u{i}")).collect();
    let pois: Vec<String> = (0..6).map(|i| format!("p{i}")).collect();
    let m = build_frequency_matrix(&records, &users, &pois).unwrap();
    assert_eq!(m.row_sums().iter().sum::<u64>(), 200);
    assert_eq!(m.col_sums().iter().sum::<u64>(), 200);
}

#[test]
fn negative_triple_type_safety_is_structural() {
    // Triple fields are typed ids; a head is a UserId by construction.
    let t = Triple { head: UserId(3), relation: poirec_core::graph::RelationId(0), tail: PoiId(5) };
    let _: HashMap<Triple, ()> = [(t, ())].into_iter().collect();
}
