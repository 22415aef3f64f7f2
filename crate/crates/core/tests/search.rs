mod common;

use common::{brute_force, codes_from, hits, random_bools, textbook_ap};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semhash::codebook::{read_codebook, write_codebook};
use semhash::index::{average_precision, binarize, build_index, evaluate_map, query};
use semhash::losses::code_similarity;
use semhash::BitCode;

#[test]
fn thousand_random_codes_match_naive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let bools: Vec<Vec<bool>> = (0..1000).map(|_| random_bools(&mut rng, 32)).collect();
    let ids: Vec<u64> = (0..1000).collect();
    let index = build_index(&codes_from(&bools), &ids).unwrap();
    for _ in 0..50 {
        let q = random_bools(&mut rng, 32);
        for k in [1, 10, 100, 1000, 5000] {
            let got = query(&index, &BitCode::from_bools(&q), k).unwrap();
            assert_eq!(hits(&got), brute_force(&bools, &ids, &q, k));
        }
    }
}

#[test]
fn persisted_index_answers_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bools: Vec<Vec<bool>> = (0..300).map(|_| random_bools(&mut rng, 48)).collect();
    let ids: Vec<u64> = (0..300).map(|i| i * 3 + 1).collect();
    let index = build_index(&codes_from(&bools), &ids).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("db.usdb");
    write_codebook(&index, &path).unwrap();
    let back = read_codebook(&path).unwrap();
    assert_eq!(back, index);
    for _ in 0..20 {
        let q = BitCode::from_bools(&random_bools(&mut rng, 48));
        assert_eq!(query(&index, &q, 25).unwrap(), query(&back, &q, 25).unwrap());
    }
}

#[test]
fn ties_break_by_ascending_id_regardless_of_storage_order() {
    let codes = codes_from(&[vec![true, false], vec![true, false], vec![false, false]]);
    let index = build_index(&codes, &[9, 2, 5]).unwrap();
    let got = query(&index, &BitCode::parse("10").unwrap(), 3).unwrap();
    assert_eq!(hits(&got), vec![(2, 0), (9, 0), (5, 1)]);
}

#[test]
fn binarized_code_similarity_is_one_minus_normalized_hamming() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let k = rng.random_range(1..=70);
        let a = random_bools(&mut rng, k);
        let b = random_bools(&mut rng, k);
        let fa: Vec<f64> = a.iter().map(|&x| x as u8 as f64).collect();
        let fb: Vec<f64> = b.iter().map(|&x| x as u8 as f64).collect();
        let dh = BitCode::from_bools(&a).hamming(&BitCode::from_bools(&b)) as f64;
        // (k - dH) / k is the exactly rounded form of 1 - dH/k
        assert_eq!(code_similarity(&fa, &fb).unwrap(), (k as f64 - dh) / k as f64);
    }
}

#[test]
fn binarize_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let relaxed: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..2.0)).collect();
        let once = binarize(&relaxed).unwrap();
        let as_values: Vec<f64> = once.to_bools().iter().map(|&b| b as u8 as f64).collect();
        assert_eq!(binarize(&as_values).unwrap(), once);
    }
}

#[test]
fn average_precision_matches_textbook_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let len = rng.random_range(0..40);
        let rel: Vec<bool> = (0..len).map(|_| rng.random_bool(0.3)).collect();
        assert!((average_precision(&rel) - textbook_ap(&rel)).abs() < 1e-12);
    }
    assert!((average_precision(&[true, false, true]) - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
}

#[test]
fn map_is_invariant_to_database_storage_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let bools: Vec<Vec<bool>> = (0..200).map(|_| random_bools(&mut rng, 16)).collect();
    let labels: Vec<Vec<u32>> = (0..200).map(|i| vec![i % 4]).collect();
    let ids: Vec<u64> = (0..200).collect();
    let queries: Vec<BitCode> = (0..30)
        .map(|_| BitCode::from_bools(&random_bools(&mut rng, 16)))
        .collect();
    let q_labels: Vec<Vec<u32>> = (0..30).map(|i| vec![i % 4]).collect();
    let index = build_index(&codes_from(&bools), &ids).unwrap();
    let base = evaluate_map(&index, &queries, &q_labels, &labels, 20).unwrap();

    let mut order: Vec<usize> = (0..200).collect();
    order.shuffle(&mut rng);
    let shuffled_codes: Vec<Vec<bool>> = order.iter().map(|&i| bools[i].clone()).collect();
    let shuffled_ids: Vec<u64> = order.iter().map(|&i| ids[i]).collect();
    let shuffled_labels: Vec<Vec<u32>> = order.iter().map(|&i| labels[i].clone()).collect();
    let index2 = build_index(&codes_from(&shuffled_codes), &shuffled_ids).unwrap();
    let other = evaluate_map(&index2, &queries, &q_labels, &shuffled_labels, 20).unwrap();
    assert_eq!(base, other);
}

#[test]
fn map_over_hand_ranked_fixture() {
    // q=0000; stored at distances 0,1,2,3 with ids 0..4, labels a,b,a,b.
    let codes = codes_from(&[
        vec![false; 4],
        vec![true, false, false, false],
        vec![true, true, false, false],
        vec![true, true, true, false],
    ]);
    let index = build_index(&codes, &[0, 1, 2, 3]).unwrap();
    let labels = vec![vec![0], vec![1], vec![0], vec![1]];
    let q = [BitCode::zeros(4)];
    let r = evaluate_map(&index, &q, &[vec![0]], &labels, 3).unwrap();
    assert!((r.map_at_k - 0.8333333333333334).abs() < 1e-9);
    let r = evaluate_map(&index, &q, &[vec![7]], &labels, 4).unwrap();
    assert_eq!(r.map_at_k, 0.0);
}
