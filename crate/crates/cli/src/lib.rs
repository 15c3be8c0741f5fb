//! Command implementations behind the `pcsi` binary.
//!
//! Each command renders its output to a string so runs are reproducible
//! byte-for-byte given the same flags and seed. Indices on the command line
//! are 1-based (`X_1 .. X_K`); the library underneath is 0-based.

pub mod dbfile;
pub mod report;

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pcsi_core::audit::{
    answer_uniformity_census, audit_lemma1, enumerate_posterior, exact_rate, Verdict,
};
use pcsi_core::grs::{is_mds, min_weight_support_census};
use pcsi_core::net::Client;
use pcsi_core::protocol::{
    build_generator_for, build_query_with, retrieve_local, sample_instance,
    sample_side_info_for_demand,
};
use pcsi_core::{
    Database, FieldElement, FieldParams, Model, ProtocolParams, QueryRandomness, SideInformation,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::report::KeyValueReport;

pub const LISTEN_ENV: &str = "PCSI_LISTEN";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:7878";

#[derive(Debug, Parser)]
#[command(
    name = "pcsi",
    version,
    about = "Private retrieval with private coded side information"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a database of K uniform messages.
    DbGen(DbGenArgs),
    /// Retrieve one message, locally or from a remote server.
    Retrieve(RetrieveArgs),
    /// Run an exhaustive audit.
    Audit(AuditArgs),
    /// Host a database over TCP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    #[value(name = "I", alias = "1")]
    I,
    #[value(name = "II", alias = "2")]
    II,
}

impl From<ModelArg> for Model {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::I => Model::I,
            ModelArg::II => Model::II,
        }
    }
}

#[derive(Debug, Args)]
pub struct DbGenArgs {
    #[arg(long)]
    pub q: u32,
    #[arg(long = "K")]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long = "M")]
    pub side_info_size: usize,
    /// Demand index, 1-based.
    #[arg(long = "W")]
    pub demand: usize,
    /// Side-information support, comma-separated 1-based indices.
    #[arg(long = "S", value_delimiter = ',', requires = "coeffs")]
    pub support: Option<Vec<usize>>,
    /// Side-information coefficients, comma-separated nonzero residues.
    #[arg(long = "C", value_delimiter = ',', requires = "support")]
    pub coeffs: Option<Vec<u64>>,
    /// Fetch from a server at host:port instead of in-process.
    #[arg(long)]
    pub remote: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AuditMode {
    Privacy,
    Lemma1,
    Mds,
    Census,
    Uniformity,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long, value_enum)]
    pub mode: AuditMode,
    #[arg(long)]
    pub q: u32,
    #[arg(long = "K")]
    pub k: usize,
    #[arg(long = "M")]
    pub side_info_size: usize,
    #[arg(long, value_enum, default_value = "I")]
    pub model: ModelArg,
    /// Number of seeded protocol builds (mds, lemma1).
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write a key-value report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long, env = LISTEN_ENV, default_value = DEFAULT_LISTEN)]
    pub listen: String,
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long = "M")]
    pub side_info_size: usize,
}

/// Rendered command output and whether the command succeeded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub stdout: String,
    pub success: bool,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self {
            stdout,
            success: true,
        }
    }
}

pub fn fraction(numer: u64, denom: u64) -> String {
    let r = exact_rate(numer as usize, denom as usize);
    format!("{}/{}", r.numer(), r.denom())
}

fn join<T: std::fmt::Display>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn db_gen(args: &DbGenArgs) -> Result<Outcome> {
    let field = FieldParams::new(args.q).with_context(|| format!("--q {}", args.q))?;
    ensure!(
        args.k >= 1 && args.k <= args.q as usize,
        "need 1 <= K <= q, got K = {} and q = {}",
        args.k,
        args.q
    );
    ensure!(
        args.m >= 1 && args.m <= u16::MAX as usize,
        "need 1 <= m <= 65535"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let db = Database::random(field, args.k, args.m, &mut rng)?;
    dbfile::write(&args.out, &db)?;
    let bytes = dbfile::HEADER_LEN + 2 * args.k * args.m;
    Ok(Outcome::ok(format!(
        "wrote {} (q={} K={} m={}, {bytes} bytes)\n",
        args.out.display(),
        args.q,
        args.k,
        args.m
    )))
}

fn protocol_params(db: &Database, model: Model, side_info_size: usize) -> Result<ProtocolParams> {
    Ok(ProtocolParams::canonical(
        db.field().modulus() as u32,
        db.k(),
        side_info_size,
        db.message_len(),
        model,
    )?)
}

fn side_info_from_args(
    args: &RetrieveArgs,
    params: &ProtocolParams,
    db: &Database,
    rng: &mut ChaCha8Rng,
) -> Result<SideInformation> {
    let k = params.k();
    ensure!(
        (1..=k).contains(&args.demand),
        "--W {} outside 1..={k}",
        args.demand
    );
    let demand = args.demand - 1;
    let si = match (&args.support, &args.coeffs) {
        (Some(support), Some(coeffs)) => {
            ensure!(
                support.len() == coeffs.len(),
                "--S has {} entries but --C has {}",
                support.len(),
                coeffs.len()
            );
            let mut pairs = Vec::with_capacity(support.len());
            for (&s, &c) in support.iter().zip(coeffs) {
                ensure!((1..=k).contains(&s), "--S entry {s} outside 1..={k}");
                ensure!(
                    c != 0 && c < params.field().modulus() as u64,
                    "--C entry {c} must be a nonzero residue below q"
                );
                pairs.push((s - 1, params.field().elem(c)));
            }
            pairs.sort_by_key(|&(s, _)| s);
            let (support, coeffs): (Vec<usize>, Vec<FieldElement>) = pairs.into_iter().unzip();
            SideInformation::from_database(db, support, coeffs, demand)?
        }
        _ => sample_side_info_for_demand(params, db, demand, rng)?,
    };
    ensure!(
        params.model().admits(si.demand, &si.support),
        "model violation: model {} requires W = {} {} S",
        params.model(),
        args.demand,
        if params.model() == Model::I {
            "outside"
        } else {
            "inside"
        }
    );
    si.validate(params)?;
    Ok(si)
}

pub fn retrieve(args: &RetrieveArgs) -> Result<Outcome> {
    let db = dbfile::read(&args.db).with_context(|| format!("reading {}", args.db.display()))?;
    let params = protocol_params(&db, args.model.into(), args.side_info_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let si = side_info_from_args(args, &params, &db, &mut rng)?;

    let (recovered, downloaded, rows) = match &args.remote {
        None => {
            let run = retrieve_local(&params, &db, si.clone(), &mut rng)?;
            (run.recovered, run.downloaded_symbols, params.num_rows())
        }
        Some(endpoint) => {
            let mut client = Client::connect(endpoint.as_str())
                .with_context(|| format!("connecting to {endpoint}"))?;
            let r = client.retrieve(&si, &params, &mut rng)?;
            (r.recovered, r.answer_element_bytes / 2, r.rows)
        }
    };
    let correct = recovered == db.messages()[si.demand];

    let mut out = String::new();
    writeln!(
        out,
        "model {} q={} K={} M={} m={}",
        params.model(),
        params.field().modulus(),
        params.k(),
        params.side_info_size(),
        params.message_len()
    )?;
    writeln!(out, "W = {}", si.demand + 1)?;
    writeln!(out, "S = {{{}}}", join(si.support.iter().map(|s| s + 1)))?;
    writeln!(out, "C = ({})", join(&si.coeffs))?;
    writeln!(
        out,
        "recovered X_{} = [{}]",
        si.demand + 1,
        join(&recovered)
    )?;
    writeln!(
        out,
        "matches database: {}",
        if correct { "yes" } else { "no" }
    )?;
    writeln!(out, "rows R = {rows}")?;
    writeln!(out, "downloaded symbols = {downloaded}")?;
    writeln!(
        out,
        "rate = {}",
        fraction(params.message_len() as u64, downloaded as u64)
    )?;
    Ok(Outcome {
        stdout: out,
        success: correct,
    })
}

/// A seeded protocol build: sample `(W, S, C)` and client randomness, return
/// the un-permuted generator.
fn seeded_generator(
    params: &ProtocolParams,
    seed: u64,
) -> Result<(pcsi_core::GeneratorMatrix, SideInformation)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let db = Database::random(params.field(), params.k(), params.message_len(), &mut rng)?;
    let si = sample_instance(params, &db, &mut rng)?;
    let rnd = QueryRandomness::sample(params, &si, &mut rng)?;
    let (g, _) = build_generator_for(&si, params, &rnd)?;
    Ok((g, si))
}

pub fn audit(args: &AuditArgs) -> Result<Outcome> {
    let model: Model = args.model.into();
    let params = ProtocolParams::canonical(args.q, args.k, args.side_info_size, 1, model)?;
    let mut kv = KeyValueReport::new();
    kv.push("mode", format!("{:?}", args.mode).to_lowercase());
    kv.push("model", model);
    kv.push("q", args.q);
    kv.push("K", args.k);
    kv.push("M", args.side_info_size);
    kv.push("R", params.num_rows());
    let mut out = String::new();

    let pass = match args.mode {
        AuditMode::Privacy => {
            let report = enumerate_posterior(&params)?;
            let dev = report.worst_deviation;
            let check = pcsi_core::audit::check_ws_privacy(&report)?;
            writeln!(out, "{}", check.summary)?;
            writeln!(
                out,
                "{}, deviation {}/{}",
                report.verdict,
                dev.numer(),
                dev.denom()
            )?;
            kv.push("queries", report.joint.len());
            kv.push("atoms", report.total_atoms());
            kv.push("atoms_per_pair", report.atoms_per_pair);
            let prior = report.prior.values().next().expect("nonempty prior");
            kv.push("prior", format!("{}/{}", prior.numer(), prior.denom()));
            kv.push(
                "worst_deviation",
                format!("{}/{}", dev.numer(), dev.denom()),
            );
            if let Some((key, (w, s))) = &check.offending {
                kv.push("offending_query", join(key));
                kv.push("offending_W", w + 1);
                kv.push("offending_S", join(s.iter().map(|i| i + 1)));
            }
            report.verdict == Verdict::Pass
        }
        AuditMode::Mds | AuditMode::Lemma1 => {
            let trials = args.trials.unwrap_or(100);
            ensure!(trials >= 1, "--trials must be positive");
            let mut passed = 0;
            let mut first_failure = None;
            for t in 0..trials as u64 {
                let seed = args.seed.wrapping_add(t);
                let (g, _) = seeded_generator(&params, seed)?;
                let ok = match args.mode {
                    AuditMode::Mds => is_mds(&g),
                    _ => audit_lemma1(&g, model, &params)?.verdict == Verdict::Pass,
                };
                if ok {
                    passed += 1;
                } else if first_failure.is_none() {
                    first_failure = Some(seed);
                }
            }
            let verdict = if passed == trials { "PASS" } else { "FAIL" };
            writeln!(out, "{verdict} {passed}/{trials}")?;
            kv.push("trials", trials);
            kv.push("passed", passed);
            if let Some(seed) = first_failure {
                kv.push("first_failing_seed", seed);
            }
            passed == trials
        }
        AuditMode::Census => {
            let (g, _) = seeded_generator(&params, args.seed)?;
            let census = min_weight_support_census(&g)?;
            let expected_weight = args.k - params.num_rows() + 1;
            let n = census.counts.len();
            match census.uniform_count() {
                Some(c) => writeln!(
                    out,
                    "min weight {}; {c} codewords per each of {n} supports",
                    census.min_weight
                )?,
                None => writeln!(
                    out,
                    "min weight {}; counts differ across {n} supports",
                    census.min_weight
                )?,
            }
            let all_supports = pcsi_core::audit::binomial(args.k, expected_weight) as usize;
            let ok = census.min_weight == expected_weight
                && census.uniform_count().is_some()
                && n == all_supports;
            writeln!(out, "{}", if ok { "PASS" } else { "FAIL" })?;
            kv.push("min_weight", census.min_weight);
            kv.push("supports", n);
            if let Some(c) = census.uniform_count() {
                kv.push("count_per_support", c);
            }
            ok
        }
        AuditMode::Uniformity => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let db = Database::random(params.field(), params.k(), 1, &mut rng)?;
            let si = sample_instance(&params, &db, &mut rng)?;
            let rnd = QueryRandomness::sample(&params, &si, &mut rng)?;
            let (query, _) = build_query_with(&si, &params, &rnd)?;
            let census = answer_uniformity_census(&query, &params)?;
            let counts: std::collections::BTreeSet<u64> =
                census.histogram.values().copied().collect();
            writeln!(
                out,
                "{} answer tuples; counts {{{}}}",
                census.histogram.len(),
                join(&counts)
            )?;
            let ok = census.is_uniform();
            writeln!(out, "{}", if ok { "PASS" } else { "FAIL" })?;
            kv.push("answer_tuples", census.histogram.len());
            kv.push("counts", join(&counts));
            ok
        }
    };
    kv.push("verdict", if pass { "PASS" } else { "FAIL" });
    if let Some(path) = &args.report {
        kv.write(path)
            .with_context(|| format!("writing report to {}", path.display()))?;
    }
    Ok(Outcome {
        stdout: out,
        success: pass,
    })
}

/// Startup banner for `serve`.
pub fn serve_banner(params: &ProtocolParams, addr: std::net::SocketAddr) -> String {
    format!(
        "serving q={} K={} M={} m={} model {} omegas=[{}] on {addr}",
        params.field().modulus(),
        params.k(),
        params.side_info_size(),
        params.message_len(),
        params.model(),
        join(params.code().omegas())
    )
}

pub fn bind_server(args: &ServeArgs) -> Result<pcsi_core::net::Server> {
    let db = dbfile::read(&args.db).with_context(|| format!("reading {}", args.db.display()))?;
    let params = protocol_params(&db, args.model.into(), args.side_info_size)?;
    let server = pcsi_core::net::Server::bind(args.listen.as_str(), db, params)
        .with_context(|| format!("binding {}", args.listen))?;
    Ok(server)
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::DbGen(a) => db_gen(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Audit(a) => audit(a),
        Command::Serve(_) => bail!("serve runs from the binary entry point"),
    }
}
