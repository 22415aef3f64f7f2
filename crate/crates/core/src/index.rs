//! Binarization, exact top-K Hamming search over packed codes, MAP@K
//! evaluation and a random-hyperplane baseline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::codebook::{hamming_words, BinaryCodebook, BitCode};
use crate::error::{Error, Result};
use crate::features::FeatureSet;

/// Binarization threshold: a relaxed entry maps to 1 iff it is `>= 0.5`.
pub const THRESHOLD: f64 = 0.5;

pub fn binarize(code: &[f64]) -> Result<BitCode> {
    if code.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("binarize"));
    }
    let mut out = BitCode::zeros(code.len());
    for (j, &v) in code.iter().enumerate() {
        if v >= THRESHOLD {
            out.set(j, true);
        }
    }
    Ok(out)
}

/// Packs codes into a searchable codebook. Codes must share one length and
/// ids must be unique.
pub fn build_index(codes: &[BitCode], ids: &[u64]) -> Result<BinaryCodebook> {
    BinaryCodebook::from_codes(codes, ids)
}

/// One search hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hit {
    pub id: u64,
    pub distance: u32,
}

/// Hits ordered by distance, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QueryResult {
    pub hits: Vec<Hit>,
}

impl QueryResult {
    pub fn ids(&self) -> Vec<u64> {
        self.hits.iter().map(|h| h.id).collect()
    }
}

/// Exact top-K by Hamming distance.
///
/// One XOR+popcount pass fills a per-distance histogram; the cut-off
/// distance where the running count reaches K is then known, and only
/// candidates at or below it are collected and sorted.
pub fn query(index: &BinaryCodebook, q: &BitCode, top_k: usize) -> Result<QueryResult> {
    if top_k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if q.len() != index.bits() {
        return Err(Error::DimensionMismatch {
            context: "query code length",
            expected: index.bits(),
            found: q.len(),
        });
    }
    let n = index.len();
    let wpc = index.words_per_code();
    let qw = q.words();
    let packed = index.packed_words();

    let mut dists = Vec::with_capacity(n);
    let mut hist = vec![0usize; index.bits() + 1];
    if wpc == 0 {
        dists.resize(n, 0);
        hist[0] = n;
    } else {
        for code in packed.chunks_exact(wpc) {
            let d = hamming_words(code, qw);
            hist[d as usize] += 1;
            dists.push(d);
        }
    }

    let want = top_k.min(n);
    let mut cutoff = 0u32;
    let mut seen = 0usize;
    for (d, &count) in hist.iter().enumerate() {
        seen += count;
        cutoff = d as u32;
        if seen >= want {
            break;
        }
    }

    let ids = index.ids();
    let mut hits: Vec<Hit> = dists
        .iter()
        .enumerate()
        .filter(|(_, &d)| d <= cutoff)
        .map(|(i, &d)| Hit {
            id: ids[i],
            distance: d,
        })
        .collect();
    hits.sort_unstable_by_key(|h| (h.distance, h.id));
    hits.truncate(want);
    Ok(QueryResult { hits })
}

/// Average precision over a ranked relevance list: the mean of
/// precision@p over the positions `p` holding relevant items; 0 when
/// nothing relevant was retrieved.
pub fn average_precision(relevant: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (p, &rel) in relevant.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (p + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// Two items are relevant to each other when their label sets intersect
/// (single-label data: same class).
pub fn labels_match(a: &[u32], b: &[u32]) -> bool {
    a.iter().any(|x| b.contains(x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub map_at_k: f64,
    pub per_query_ap: Vec<f64>,
    pub top_k: usize,
}

impl EvalReport {
    /// `key=value` summary lines.
    pub fn summary(&self) -> String {
        format!(
            "map_at_k={}\nk={}\nqueries={}\n",
            self.map_at_k,
            self.top_k,
            self.per_query_ap.len()
        )
    }

    /// Per-query CSV with header `query_id,ap`.
    pub fn to_csv(&self, query_ids: &[u64]) -> String {
        let mut out = String::from("query_id,ap\n");
        for (id, ap) in query_ids.iter().zip(&self.per_query_ap) {
            out.push_str(&format!("{id},{ap}\n"));
        }
        out
    }
}

/// MAP@K of `queries` against `index`. `db_labels[i]` belongs to the item
/// stored at position `i` of the index. Queries with no relevant item
/// retrieved score AP = 0 and still count toward the mean.
pub fn evaluate_map(
    index: &BinaryCodebook,
    queries: &[BitCode],
    query_labels: &[Vec<u32>],
    db_labels: &[Vec<u32>],
    top_k: usize,
) -> Result<EvalReport> {
    if queries.is_empty() {
        return Err(Error::invalid("evaluation needs at least one query"));
    }
    if queries.len() != query_labels.len() {
        return Err(Error::DimensionMismatch {
            context: "query labels",
            expected: queries.len(),
            found: query_labels.len(),
        });
    }
    if db_labels.len() != index.len() {
        return Err(Error::DimensionMismatch {
            context: "database labels",
            expected: index.len(),
            found: db_labels.len(),
        });
    }
    let position: std::collections::HashMap<u64, usize> =
        index.ids().iter().enumerate().map(|(i, &id)| (id, i)).collect();

    let per_query_ap = queries
        .par_iter()
        .zip(query_labels.par_iter())
        .map(|(q, ql)| {
            let result = query(index, q, top_k)?;
            let relevance: Vec<bool> = result
                .hits
                .iter()
                .map(|h| labels_match(ql, &db_labels[position[&h.id]]))
                .collect();
            Ok(average_precision(&relevance))
        })
        .collect::<Result<Vec<f64>>>()?;
    let map_at_k = per_query_ap.iter().sum::<f64>() / per_query_ap.len() as f64;
    Ok(EvalReport {
        map_at_k,
        per_query_ap,
        top_k,
    })
}

/// Single-label vectors as one-element label sets.
pub fn label_sets(labels: &[u32]) -> Vec<Vec<u32>> {
    labels.iter().map(|&l| vec![l]).collect()
}

/// Random-hyperplane hashing of mean-centred features: bit `j` is the sign
/// of the projection onto the `j`-th Gaussian direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LshHasher {
    bits: usize,
    mean: Vec<f64>,
    planes: Vec<f64>,
}

impl LshHasher {
    /// Centres on the reference block of `fs` and draws `bits` hyperplanes.
    pub fn fit(fs: &FeatureSet, bits: usize, seed: u64) -> Result<Self> {
        if bits == 0 || fs.dim() == 0 {
            return Err(Error::invalid("bits and feature dimension must be positive"));
        }
        let d = fs.dim();
        let mut mean = vec![0.0; d];
        for i in 0..fs.len() {
            for (m, &x) in mean.iter_mut().zip(fs.reference_row(i)) {
                *m += x as f64;
            }
        }
        if !fs.is_empty() {
            for m in &mut mean {
                *m /= fs.len() as f64;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planes = (0..bits * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(LshHasher { bits, mean, planes })
    }

    pub fn hash_row(&self, row: &[f32]) -> BitCode {
        let d = self.mean.len();
        let mut code = BitCode::zeros(self.bits);
        for j in 0..self.bits {
            let plane = &self.planes[j * d..(j + 1) * d];
            let proj: f64 = plane
                .iter()
                .zip(row.iter().zip(&self.mean))
                .map(|(p, (&x, m))| p * (x as f64 - m))
                .sum();
            if proj >= 0.0 {
                code.set(j, true);
            }
        }
        code
    }

    pub fn encode(&self, fs: &FeatureSet) -> Result<BinaryCodebook> {
        if fs.dim() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                context: "lsh features",
                expected: self.mean.len(),
                found: fs.dim(),
            });
        }
        let codes: Vec<BitCode> = (0..fs.len()).map(|i| self.hash_row(fs.reference_row(i))).collect();
        let ids: Vec<u64> = (0..fs.len() as u64).collect();
        if codes.is_empty() {
            return Ok(BinaryCodebook::new(self.bits));
        }
        BinaryCodebook::from_codes(&codes, &ids)
    }
}

pub fn lsh_baseline(fs: &FeatureSet, bits: usize, seed: u64) -> Result<BinaryCodebook> {
    LshHasher::fit(fs, bits, seed)?.encode(fs)
}
