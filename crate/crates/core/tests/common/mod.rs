#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use semhash::BitCode;

pub fn random_bools(rng: &mut ChaCha8Rng, bits: usize) -> Vec<bool> {
    (0..bits).map(|_| rng.random()).collect()
}

/// Naive top-K: compare every bit of every stored code, sort by
/// (distance, id).
pub fn brute_force(codes: &[Vec<bool>], ids: &[u64], q: &[bool], k: usize) -> Vec<(u64, u32)> {
    let mut all: Vec<(u32, u64)> = codes
        .iter()
        .zip(ids)
        .map(|(c, &id)| {
            let mut d = 0u32;
            for j in 0..q.len() {
                if c[j] != q[j] {
                    d += 1;
                }
            }
            (d, id)
        })
        .collect();
    all.sort();
    all.into_iter().take(k).map(|(d, id)| (id, d)).collect()
}

pub fn hits(result: &semhash::QueryResult) -> Vec<(u64, u32)> {
    result.hits.iter().map(|h| (h.id, h.distance)).collect()
}

pub fn codes_from(bools: &[Vec<bool>]) -> Vec<BitCode> {
    bools.iter().map(|b| BitCode::from_bools(b)).collect()
}

/// Textbook average precision over a ranked relevance list: mean of
/// precision@p at each relevant position p, 0 if nothing is relevant.
pub fn textbook_ap(relevant: &[bool]) -> f64 {
    let mut hits = 0.0;
    let mut sum = 0.0;
    for (p, &r) in relevant.iter().enumerate() {
        if r {
            hits += 1.0;
            sum += hits / (p as f64 + 1.0);
        }
    }
    if hits == 0.0 {
        0.0
    } else {
        sum / hits
    }
}
