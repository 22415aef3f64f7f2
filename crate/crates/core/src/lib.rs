//! Unsupervised semantic hashing.
//!
//! Learns compact binary codes from precomputed image features with a
//! shallow hashing head trained on four criteria: agreement between
//! feature-space and code-space similarity, closeness of relaxed codes to
//! binary values, per-bit balance, and invariance to rotation. Codes are
//! stored bit-packed and searched exactly in Hamming space; retrieval
//! quality is measured with MAP@K.
//!
//! The pipeline, end to end:
//!
//! ```no_run
//! use semhash::{features, synth, trainer};
//!
//! let fs = synth::generate(&synth::SynthConfig::default())?;
//! let (db_idx, q_idx) = synth::holdout_split(fs.len(), 60, 42)?;
//! let (db, queries) = (fs.select(&db_idx)?, fs.select(&q_idx)?);
//! let cfg = trainer::TrainConfig { epochs_stage2: 0, ..Default::default() };
//! let trace = trainer::train(&db, &cfg)?;
//! let report = trainer::evaluate_head(&trace.params, &db, &queries, 100)?;
//! println!("MAP@100 = {}", report.map_at_k);
//! features::write_features(&db, "db.usdf")?;
//! # Ok::<(), semhash::Error>(())
//! ```

pub mod codebook;
pub mod error;
pub mod features;
mod format;
pub mod gradcheck;
pub mod head;
pub mod index;
pub mod losses;
pub mod similarity;
pub mod synth;
pub mod trainer;

pub use codebook::{read_codebook, write_codebook, BinaryCodebook, BitCode};
pub use error::{Error, Result};
pub use features::{read_features, write_features, FeatureSet};
pub use head::{init_head, read_head, write_head, CodeBatch, HashHeadParams};
pub use index::{binarize, build_index, evaluate_map, lsh_baseline, query, EvalReport, QueryResult};
pub use losses::{LossReport, LossWeights};
pub use similarity::{RhoParam, SimilarityMatrix};
pub use trainer::{train, TrainConfig, TrainTrace};
