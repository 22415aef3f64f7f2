use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semhash::codebook::{read_codebook, write_codebook, BinaryCodebook, BitCode};
use semhash::features::{read_features, read_manifest, write_features, write_manifest, FeatureSet, Manifest};
use semhash::gradcheck::{run_trials, LossSelector};
use semhash::head::{init_head, read_head, write_head};
use semhash::index::{evaluate_map, label_sets, query, LshHasher};
use semhash::synth::{generate, holdout_split, SynthConfig};
use semhash::trainer::{format_sweep_table, rho_sweep, train_from, TrainConfig};
use semhash::Error;

#[derive(Parser)]
#[command(
    name = "semhash",
    version,
    about = "Unsupervised semantic hashing: train, encode, search, evaluate"
)]
struct Cli {
    /// Seed for every random choice made by the command [default: 42].
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a labeled Gaussian-mixture feature file.
    Synth(SynthArgs),
    /// Split a feature file into database and query files.
    Split(SplitArgs),
    /// Train a hashing head.
    Train(TrainArgs),
    /// Encode one block of a feature file into a codebook.
    Encode(EncodeArgs),
    /// Encode features with the random-hyperplane baseline.
    Lsh(LshArgs),
    /// Top-K Hamming search.
    Query(QueryArgs),
    /// MAP@K of query codes against a codebook.
    Eval(EvalArgs),
    /// Train and evaluate one head per rho value.
    Sweep(SweepArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Measure packed-scan throughput and check it against brute force.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    clusters: usize,
    #[arg(long, default_value_t = 600)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    d: usize,
    /// Distance between cluster means in units of the within-cluster std.
    #[arg(long, default_value_t = 6.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    std: f64,
    /// Comma-separated rotation angles in degrees, one block each.
    #[arg(long, value_delimiter = ',')]
    rotations: Vec<f64>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    queries: usize,
    #[arg(long)]
    db_out: PathBuf,
    #[arg(long)]
    queries_out: PathBuf,
}

/// Training overrides; each one beats the config file.
#[derive(Args, Default)]
struct TrainFlags {
    /// File of key=value lines with TrainConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bits: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    w_sem: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    epochs_stage1: Option<usize>,
    #[arg(long)]
    epochs_stage2: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    rotation_angles: Option<Vec<f64>>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    /// Output parameter file.
    #[arg(long)]
    out: PathBuf,
    /// Training log; defaults to `<out>.log`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// 0 is the reference block, 1..=R the rotation blocks.
    #[arg(long, default_value_t = 0)]
    block: usize,
}

#[derive(Args)]
struct LshArgs {
    /// Features the hyperplanes are fitted on (mean-centering uses these).
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    bits: usize,
    #[arg(long)]
    out: PathBuf,
    /// Extra feature file encoded with the same hyperplanes.
    #[arg(long, requires = "queries_out")]
    queries: Option<PathBuf>,
    #[arg(long)]
    queries_out: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["code", "features"])))]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    /// Query as a bit string, bit 0 first.
    #[arg(long)]
    code: Option<String>,
    /// Feature file holding the query row (needs --params).
    #[arg(long, requires = "params")]
    features: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    row: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("codes").required(true).args(["params", "query_codes"])))]
struct EvalArgs {
    /// Database codebook.
    #[arg(long)]
    index: PathBuf,
    /// Feature file carrying the database labels, aligned with the codebook ids.
    #[arg(long)]
    labels: PathBuf,
    /// Labeled query feature file.
    #[arg(long)]
    queries: PathBuf,
    /// Head used to encode the queries.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Precomputed query codebook, aligned with the query rows.
    #[arg(long)]
    query_codes: Option<PathBuf>,
    #[arg(long = "K", alias = "k", default_value_t = 100)]
    top_k: usize,
    /// Per-query AP file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,0.5,0.25,0.125")]
    rho_list: Vec<f64>,
    #[arg(long = "K", alias = "k", default_value_t = 100)]
    top_k: usize,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct GradcheckArgs {
    /// One of j1, j2, j3, j4, total, head.
    #[arg(long)]
    loss: LossSelector,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    bits: usize,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Queries re-checked against a per-bit brute-force scan.
    #[arg(long, default_value_t = 10)]
    verify: usize,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

const DEFAULT_SEED: u64 = 42;

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a, seed),
        Command::Split(a) => cmd_split(a, seed),
        Command::Train(a) => cmd_train(a, cli.seed),
        Command::Encode(a) => cmd_encode(a, seed),
        Command::Lsh(a) => cmd_lsh(a, seed),
        Command::Query(a) => cmd_query(a, seed),
        Command::Eval(a) => cmd_eval(a, seed),
        Command::Sweep(a) => cmd_sweep(a, cli.seed),
        Command::Gradcheck(a) => cmd_gradcheck(a, seed),
        Command::Bench(a) => cmd_bench(a, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn echo(command: &str, lines: &[(&str, String)]) {
    println!("# {command}");
    for (k, v) in lines {
        println!("{k}={v}");
    }
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_synth(a: SynthArgs, seed: u64) -> CmdResult {
    let cfg = SynthConfig {
        clusters: a.clusters,
        n: a.n,
        d: a.d,
        separation: a.separation,
        std: a.std,
        rotation_angles: a.rotations,
        seed,
    };
    echo(
        "synth",
        &[
            ("out", show(&a.out)),
            ("clusters", cfg.clusters.to_string()),
            ("n", cfg.n.to_string()),
            ("d", cfg.d.to_string()),
            ("separation", cfg.separation.to_string()),
            ("std", cfg.std.to_string()),
            ("rotations", join(&cfg.rotation_angles)),
            ("seed", seed.to_string()),
        ],
    );
    let fs = generate(&cfg)?;
    write_features(&fs, &a.out)?;
    let mut manifest = Manifest::new();
    manifest
        .set("source", "synth")
        .set("clusters", cfg.clusters)
        .set("separation", cfg.separation)
        .set("std", cfg.std)
        .set("seed", seed)
        .set_rotation_angles(&cfg.rotation_angles);
    write_manifest(&a.out, &manifest)?;
    println!("wrote n={} d={} R={}", fs.len(), fs.dim(), fs.rotations());
    Ok(())
}

fn cmd_split(a: SplitArgs, seed: u64) -> CmdResult {
    echo(
        "split",
        &[
            ("features", show(&a.features)),
            ("queries", a.queries.to_string()),
            ("db_out", show(&a.db_out)),
            ("queries_out", show(&a.queries_out)),
            ("seed", seed.to_string()),
        ],
    );
    let fs = read_features(&a.features)?;
    let (db_idx, q_idx) = holdout_split(fs.len(), a.queries, seed)?;
    let manifest = read_manifest(&a.features)?;
    for (idx, path) in [(&db_idx, &a.db_out), (&q_idx, &a.queries_out)] {
        write_features(&fs.select(idx)?, path)?;
        if let Some(m) = &manifest {
            write_manifest(path, m)?;
        }
    }
    println!("database={} queries={}", db_idx.len(), q_idx.len());
    Ok(())
}

/// Defaults, then the config file, then flags. Returns the config and the
/// keys set explicitly by file or flag.
fn resolve_config(flags: &TrainFlags, seed: Option<u64>) -> Result<(TrainConfig, BTreeSet<String>), Failure> {
    let mut cfg = TrainConfig::default();
    let mut explicit = BTreeSet::new();
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Runtime(Error::io(path, e)))?;
        let keys = cfg
            .apply_text(&text)
            .map_err(|e| Failure::Usage(format!("{}: {e}", show(path))))?;
        explicit.extend(keys);
    }
    let mut set = |key: &str, value: Option<String>| -> Result<(), Failure> {
        if let Some(v) = value {
            cfg.set(key, &v).map_err(|m| Failure::Usage(format!("--{key}: {m}")))?;
            explicit.insert(key.to_string());
        }
        Ok(())
    };
    set("bits", flags.bits.map(|v| v.to_string()))?;
    set("rho", flags.rho.map(|v| v.to_string()))?;
    set("w_sem", flags.w_sem.map(|v| v.to_string()))?;
    set("alpha", flags.alpha.map(|v| v.to_string()))?;
    set("beta", flags.beta.map(|v| v.to_string()))?;
    set("gamma", flags.gamma.map(|v| v.to_string()))?;
    set("lr", flags.lr.map(|v| v.to_string()))?;
    set("momentum", flags.momentum.map(|v| v.to_string()))?;
    set("epochs_stage1", flags.epochs_stage1.map(|v| v.to_string()))?;
    set("epochs_stage2", flags.epochs_stage2.map(|v| v.to_string()))?;
    set("batch_size", flags.batch_size.map(|v| v.to_string()))?;
    set("rotation_angles", flags.rotation_angles.as_deref().map(join))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok((cfg, explicit))
}

/// Fills rotation metadata from the manifest and drops the default stage 2
/// when the features carry no rotation blocks.
fn fit_to_features(
    cfg: &mut TrainConfig,
    explicit: &BTreeSet<String>,
    fs: &FeatureSet,
    features: &Path,
) -> Result<(), Failure> {
    if fs.rotations() == 0 && cfg.epochs_stage2 > 0 && !explicit.contains("epochs_stage2") {
        eprintln!("note: features have no rotation blocks; stage 2 skipped (epochs_stage2=0)");
        cfg.epochs_stage2 = 0;
    }
    if cfg.rotation_angles.is_empty() {
        if let Some(m) = read_manifest(features)? {
            let angles = m.rotation_angles()?;
            if angles.len() == fs.rotations() {
                cfg.rotation_angles = angles;
            }
        }
    }
    Ok(())
}

fn cmd_train(a: TrainArgs, seed: Option<u64>) -> CmdResult {
    let (mut cfg, explicit) = resolve_config(&a.flags, seed)?;
    let fs = read_features(&a.features)?;
    fit_to_features(&mut cfg, &explicit, &fs, &a.features)?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut os = a.out.clone().into_os_string();
        os.push(".log");
        PathBuf::from(os)
    });
    println!("# train");
    println!("features={}", show(&a.features));
    println!("out={}", show(&a.out));
    println!("log={}", show(&log_path));
    print!("{}", cfg.to_text());

    let head = init_head(cfg.bits, fs.dim(), cfg.seed)?;
    let mut log = String::new();
    let trace = train_from(&fs, &cfg, head, |rec| {
        let line = rec.log_line();
        println!("{line}");
        log.push_str(&line);
        log.push('\n');
    })?;
    write_text(&log_path, &log)?;
    write_head(&trace.params, &a.out)?;
    println!("wrote {}", show(&a.out));
    Ok(())
}

fn cmd_encode(a: EncodeArgs, seed: u64) -> CmdResult {
    echo(
        "encode",
        &[
            ("features", show(&a.features)),
            ("params", show(&a.params)),
            ("out", show(&a.out)),
            ("block", a.block.to_string()),
            ("seed", seed.to_string()),
        ],
    );
    let fs = read_features(&a.features)?;
    let head = read_head(&a.params)?;
    let cb = head.encode(&fs, a.block)?;
    write_codebook(&cb, &a.out)?;
    println!("wrote n={} bits={}", cb.len(), cb.bits());
    Ok(())
}

fn cmd_lsh(a: LshArgs, seed: u64) -> CmdResult {
    echo(
        "lsh",
        &[
            ("features", show(&a.features)),
            ("bits", a.bits.to_string()),
            ("out", show(&a.out)),
            ("queries", a.queries.as_deref().map(show).unwrap_or_default()),
            ("queries_out", a.queries_out.as_deref().map(show).unwrap_or_default()),
            ("seed", seed.to_string()),
        ],
    );
    let fs = read_features(&a.features)?;
    let hasher = LshHasher::fit(&fs, a.bits, seed)?;
    write_codebook(&hasher.encode(&fs)?, &a.out)?;
    if let (Some(q), Some(out)) = (&a.queries, &a.queries_out) {
        write_codebook(&hasher.encode(&read_features(q)?)?, out)?;
    }
    Ok(())
}

fn cmd_query(a: QueryArgs, seed: u64) -> CmdResult {
    echo(
        "query",
        &[
            ("index", show(&a.index)),
            ("code", a.code.clone().unwrap_or_default()),
            ("features", a.features.as_deref().map(show).unwrap_or_default()),
            ("params", a.params.as_deref().map(show).unwrap_or_default()),
            ("row", a.row.to_string()),
            ("k", a.k.to_string()),
            ("seed", seed.to_string()),
        ],
    );
    let index = read_codebook(&a.index)?;
    let q = match (&a.code, &a.features, &a.params) {
        (Some(code), _, _) => BitCode::parse(code)?,
        (None, Some(features), Some(params)) => {
            let fs = read_features(features)?;
            if a.row >= fs.len() {
                return Err(Failure::Usage(format!(
                    "--row {} out of range for n={}",
                    a.row,
                    fs.len()
                )));
            }
            read_head(params)?.encode_row(fs.reference_row(a.row))?
        }
        _ => return Err(Failure::Usage("give --code, or --features with --params".into())),
    };
    let result = query(&index, &q, a.k)?;
    println!("rank,id,distance");
    for (rank, hit) in result.hits.iter().enumerate() {
        println!("{},{},{}", rank + 1, hit.id, hit.distance);
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs, seed: u64) -> CmdResult {
    echo(
        "eval",
        &[
            ("index", show(&a.index)),
            ("labels", show(&a.labels)),
            ("queries", show(&a.queries)),
            ("params", a.params.as_deref().map(show).unwrap_or_default()),
            ("query_codes", a.query_codes.as_deref().map(show).unwrap_or_default()),
            ("K", a.top_k.to_string()),
            ("csv", a.csv.as_deref().map(show).unwrap_or_default()),
            ("seed", seed.to_string()),
        ],
    );
    let index = read_codebook(&a.index)?;
    let db = read_features(&a.labels)?;
    let queries = read_features(&a.queries)?;
    let query_codes: BinaryCodebook = match (&a.params, &a.query_codes) {
        (Some(p), _) => read_head(p)?.encode(&queries, 0)?,
        (None, Some(c)) => read_codebook(c)?,
        _ => return Err(Failure::Usage("give --params or --query-codes".into())),
    };
    let db_labels = db
        .labels()
        .ok_or_else(|| Error::invalid(format!("{} has no labels", show(&a.labels))))?;
    let q_labels = queries
        .labels()
        .ok_or_else(|| Error::invalid(format!("{} has no labels", show(&a.queries))))?;
    if query_codes.len() != queries.len() {
        return Err(Failure::Runtime(Error::DimensionMismatch {
            context: "query codes vs query rows",
            expected: queries.len(),
            found: query_codes.len(),
        }));
    }
    // Codebook ids are row indices into the label file.
    let db_sets = label_sets(db_labels);
    let aligned: Vec<Vec<u32>> = index
        .ids()
        .iter()
        .map(|&id| {
            db_sets
                .get(id as usize)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("codebook id {id} has no label row in {}", show(&a.labels))))
        })
        .collect::<Result<_, _>>()?;
    let codes: Vec<BitCode> = query_codes.iter().map(|(_, c)| c).collect();
    let report = evaluate_map(&index, &codes, &label_sets(q_labels), &aligned, a.top_k)?;
    print!("{}", report.summary());
    if let Some(csv) = &a.csv {
        write_text(csv, &report.to_csv(query_codes.ids()))?;
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs, seed: Option<u64>) -> CmdResult {
    let (mut cfg, explicit) = resolve_config(&a.flags, seed)?;
    let db = read_features(&a.features)?;
    let queries = read_features(&a.queries)?;
    fit_to_features(&mut cfg, &explicit, &db, &a.features)?;
    println!("# sweep");
    println!("features={}", show(&a.features));
    println!("queries={}", show(&a.queries));
    println!("rho_list={}", join(&a.rho_list));
    println!("K={}", a.top_k);
    print!("{}", cfg.to_text());
    let rows = rho_sweep(&db, &queries, &cfg, &a.rho_list, a.top_k)?;
    print!("{}", format_sweep_table(&rows, a.top_k));
    let maps: Vec<f64> = rows.iter().map(|r| r.map_at_k).collect();
    let spread = maps.iter().cloned().fold(f64::MIN, f64::max) - maps.iter().cloned().fold(f64::MAX, f64::min);
    println!("spread={spread}");
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs, seed: u64) -> CmdResult {
    echo(
        "gradcheck",
        &[
            ("loss", a.loss.to_string()),
            ("trials", a.trials.to_string()),
            ("epsilon", a.epsilon.to_string()),
            ("tolerance", a.loss.tolerance().to_string()),
            ("seed", seed.to_string()),
        ],
    );
    let summary = run_trials(a.loss, a.trials, a.epsilon, seed)?;
    println!("max_rel_error={:e}", summary.max_rel_error);
    println!("failures={}", summary.failures);
    if summary.passed() {
        Ok(())
    } else {
        Err(Failure::Runtime(Error::invalid(format!(
            "{} of {} trials exceeded tolerance {:e}",
            summary.failures,
            summary.trials,
            a.loss.tolerance()
        ))))
    }
}

fn cmd_bench(a: BenchArgs, seed: u64) -> CmdResult {
    echo(
        "bench",
        &[
            ("n", a.n.to_string()),
            ("bits", a.bits.to_string()),
            ("queries", a.queries.to_string()),
            ("k", a.k.to_string()),
            ("verify", a.verify.to_string()),
            ("seed", seed.to_string()),
        ],
    );
    if a.bits == 0 || a.n == 0 || a.queries == 0 {
        return Err(Failure::Usage("n, bits and queries must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_code = |rng: &mut ChaCha8Rng| {
        let bools: Vec<bool> = (0..a.bits).map(|_| rng.random()).collect();
        BitCode::from_bools(&bools)
    };
    let codes: Vec<BitCode> = (0..a.n).map(|_| random_code(&mut rng)).collect();
    let ids: Vec<u64> = (0..a.n as u64).collect();
    let index = BinaryCodebook::from_codes(&codes, &ids)?;
    let queries: Vec<BitCode> = (0..a.queries).map(|_| random_code(&mut rng)).collect();

    let started = Instant::now();
    let mut results = Vec::with_capacity(queries.len());
    for q in &queries {
        results.push(query(&index, q, a.k)?);
    }
    let secs = started.elapsed().as_secs_f64().max(1e-9);
    let scanned = (a.n * a.queries) as f64;
    println!("seconds={secs:.6}");
    println!("codes_per_second={:.0}", scanned / secs);

    let mut mismatches = 0;
    for (q, got) in queries.iter().zip(&results).take(a.verify) {
        let q_bits = q.to_bools();
        let mut all: Vec<(u32, u64)> = codes
            .iter()
            .zip(&ids)
            .map(|(c, &id)| {
                let d = c.to_bools().iter().zip(&q_bits).filter(|(x, y)| x != y).count() as u32;
                (d, id)
            })
            .collect();
        all.sort_unstable();
        all.truncate(a.k);
        let expected: Vec<(u32, u64)> = all;
        let actual: Vec<(u32, u64)> = got.hits.iter().map(|h| (h.distance, h.id)).collect();
        if expected != actual {
            mismatches += 1;
        }
    }
    let checked = a.verify.min(queries.len());
    println!("parity={}/{}", checked - mismatches, checked);
    if mismatches > 0 {
        return Err(Failure::Runtime(Error::invalid(format!(
            "{mismatches} queries disagree with the brute-force scan"
        ))));
    }
    Ok(())
}

fn join(values: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
    out
}
