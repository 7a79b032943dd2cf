use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use provnr_cli::{fixtures, sha256_hex};
use provnr_core::crypto::{Certificate, KeyRole, Signer, SoftwareKey};
use provnr_core::evidence::{verify_evidence, EvidencePipeline, Keyring, SignedToken, TrustPolicy};
use provnr_core::meta::{reconstruct_between, reconstruct_document, HistoryDocument};
use provnr_core::notary::{open_backend, Notary, NotaryKind};
use provnr_core::prov::{canonical_bytes, decode_document, encode_document};
use provnr_core::service::{DataDirSource, DocumentService, ServiceConfig};
use provnr_core::sim::{read_csv, summarize, write_csv, ScenarioKind};
use provnr_core::{Substitution, Template};
use provnr_server::bench::run_grid;
use provnr_server::{notary_router, provenance_router, serve_forever, HttpNotaryClient};

const PATIENT_WARNING: &str =
    "WARNING: the evidence did not verify. The patient must not follow the recommendation provided alongside it.";

#[derive(Parser)]
#[command(name = "provnr", version, about = "Provenance templates with non-repudiable, notarized evidence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the provenance service.
    Serve(ServeArgs),
    /// Run a notary.
    Notary(NotaryArgs),
    /// Generate token-signing, hash-signing and timestamping keys.
    Keygen(KeygenArgs),
    /// Latency benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Verify an evidence token on behalf of a patient.
    Verify(VerifyArgs),
    /// Rebuild an object-level document from its history.
    Reconstruct(ReconstructArgs),
    /// Print SHA-256 of canonical serializations.
    Hash(HashArgs),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory written by `provnr keygen`.
    #[arg(long)]
    keys: Option<PathBuf>,
    /// Notary base URL.
    #[arg(long)]
    notary: Option<String>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value = "provnr")]
    service_id: String,
    #[arg(long, default_value = "provnr-tsa")]
    tsa_id: String,
    /// Disable history documents (and therefore evidence).
    #[arg(long)]
    no_meta_provenance: bool,
    #[arg(long)]
    no_sync: bool,
}

#[derive(Args)]
struct NotaryArgs {
    #[arg(long, value_enum)]
    kind: NotaryKindArg,
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8090")]
    addr: SocketAddr,
    #[arg(long)]
    id: Option<String>,
    /// Reject submissions whose signature does not verify under this
    /// certificate.
    #[arg(long)]
    hash_cert: Option<PathBuf>,
}

#[derive(Args)]
struct KeygenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "provnr")]
    subject: String,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run scenarios against notaries and write per-call latencies.
    Run(BenchRunArgs),
    /// Summarize a latency CSV.
    Report { input: PathBuf },
}

#[derive(Args)]
struct BenchRunArgs {
    /// Repeatable; all scenarios when omitted.
    #[arg(long, value_enum)]
    scenario: Vec<ScenarioArg>,
    /// Repeatable; all notaries when omitted.
    #[arg(long, value_enum)]
    notary: Vec<NotaryKindArg>,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Verify every issued token after each cell.
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    token: PathBuf,
    #[arg(long)]
    patient: String,
    #[arg(long)]
    notary: String,
    /// Trust policy JSON, as written by `provnr keygen`.
    #[arg(long)]
    trust: PathBuf,
    /// Revoked certificate fingerprints, one per line.
    #[arg(long)]
    revoked: Option<PathBuf>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    history: PathBuf,
    /// Service data directory holding templates and substitutions.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, requires = "to")]
    from: Option<u64>,
    #[arg(long, requires = "from")]
    to: Option<u64>,
}

#[derive(Args)]
struct HashArgs {
    #[arg(value_enum)]
    kind: HashKind,
    /// Input file; not used for `fixtures`.
    file: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum HashKind {
    Document,
    Template,
    Substitution,
    /// The built-in deterministic fixtures.
    Fixtures,
}

#[derive(Clone, Copy, ValueEnum)]
enum NotaryKindArg {
    Ledger,
    File,
    Object,
}

impl From<NotaryKindArg> for NotaryKind {
    fn from(k: NotaryKindArg) -> Self {
        match k {
            NotaryKindArg::Ledger => NotaryKind::Ledger,
            NotaryKindArg::File => NotaryKind::File,
            NotaryKindArg::Object => NotaryKind::Object,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Recommendation,
    Sensor,
    Chatbot,
}

impl From<ScenarioArg> for ScenarioKind {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Recommendation => ScenarioKind::Recommendation,
            ScenarioArg::Sensor => ScenarioKind::Sensor,
            ScenarioArg::Chatbot => ScenarioKind::Chatbot,
        }
    }
}

type Failure = (u8, String);

fn fail<E: std::fmt::Display>(code: u8) -> impl Fn(E) -> Failure {
    move |e| (code, e.to_string())
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| (2, format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve(a) => serve(a),
        Command::Notary(a) => notary(a),
        Command::Keygen(a) => keygen(a),
        Command::Bench(BenchCommand::Run(a)) => bench_run(a),
        Command::Bench(BenchCommand::Report { input }) => bench_report(&input),
        Command::Verify(a) => verify(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Hash(a) => hash(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err((code, message)) => {
            eprintln!("provnr: {message}");
            ExitCode::from(code)
        }
    }
}

fn serve(a: ServeArgs) -> Result<u8, Failure> {
    let mut config = ServiceConfig::new(&a.data);
    config.service_id = a.service_id.clone();
    config.meta_provenance = !a.no_meta_provenance;
    config.sync_writes = !a.no_sync;
    let pipeline = match (a.keys, a.notary) {
        (Some(keys), Some(url)) => {
            let keyring = Keyring::load(&keys, &a.tsa_id).map_err(fail(1))?;
            let notary = HttpNotaryClient::connect(&url, Duration::from_secs(30)).map_err(fail(1))?;
            Some(EvidencePipeline {
                keyring,
                notary: Arc::new(notary),
                service_id: a.service_id,
            })
        }
        (None, None) => None,
        _ => return Err((2, "--keys and --notary go together".into())),
    };
    let service = DocumentService::open(config, pipeline).map_err(fail(1))?;
    eprintln!("provenance service listening on {}", a.addr);
    serve_forever(provenance_router(Arc::new(service)), a.addr).map_err(fail(1))?;
    Ok(0)
}

fn notary(a: NotaryArgs) -> Result<u8, Failure> {
    let kind = NotaryKind::from(a.kind);
    let backend = open_backend(kind, &a.dir).map_err(fail(1))?;
    let mut n = Notary::new(a.id.unwrap_or_else(|| format!("notary-{}", kind.as_str())), backend);
    if let Some(path) = a.hash_cert {
        let cert: Certificate = serde_json::from_slice(&read(&path)?).map_err(fail(2))?;
        n = n.with_hash_certificate(cert);
    }
    eprintln!("{} notary listening on {}", kind.as_str(), a.addr);
    serve_forever(notary_router(Arc::new(n)), a.addr).map_err(fail(1))?;
    Ok(0)
}

fn keygen(a: KeygenArgs) -> Result<u8, Failure> {
    fs::create_dir_all(&a.out).map_err(fail(1))?;
    let keys = [
        ("token.key", SoftwareKey::generate_now(&a.subject, KeyRole::TokenSigning)),
        ("hash.key", SoftwareKey::generate_now(&format!("{}-dss", a.subject), KeyRole::HashSigning)),
        ("tsa.key", SoftwareKey::generate_now(&format!("{}-tsa", a.subject), KeyRole::Timestamping)),
    ];
    let mut certs = Vec::new();
    for (name, key) in &keys {
        key.save(&a.out.join(name)).map_err(fail(1))?;
        certs.push(key.certificate().clone());
        println!("{name}\t{}", key.certificate().fingerprint());
    }
    fs::write(a.out.join("hash.cert.json"), pretty(&certs[1])).map_err(fail(1))?;
    fs::write(a.out.join("anchors.json"), pretty(&TrustPolicy::trusting(&certs))).map_err(fail(1))?;
    Ok(0)
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn bench_run(a: BenchRunArgs) -> Result<u8, Failure> {
    let scenarios: Vec<ScenarioKind> = if a.scenario.is_empty() {
        ScenarioKind::ALL.to_vec()
    } else {
        a.scenario.iter().map(|&s| s.into()).collect()
    };
    let notaries: Vec<NotaryKind> = if a.notary.is_empty() {
        NotaryKind::ALL.to_vec()
    } else {
        a.notary.iter().map(|&k| k.into()).collect()
    };
    let mut unverified = 0usize;
    let cells = run_grid(&notaries, &scenarios, a.n, a.seed, a.verify, |cell| {
        let s = cell.stats();
        let tokens = cell.run.tokens.len();
        match cell.verified {
            Some(ok) => {
                unverified += tokens - ok;
                eprintln!("{} / {}: {} samples, {ok}/{tokens} tokens verified", s.notary.as_str(), s.scenario, s.n());
            }
            None => eprintln!("{} / {}: {} samples, {tokens} tokens", s.notary.as_str(), s.scenario, s.n()),
        }
    })
    .map_err(fail(1))?;
    let stats: Vec<_> = cells.iter().map(|c| c.stats().clone()).collect();
    let file = fs::File::create(&a.out).map_err(|e| (1, format!("{}: {e}", a.out.display())))?;
    write_csv(file, &stats).map_err(fail(1))?;
    println!("{}", summarize(&stats));
    if unverified > 0 {
        eprintln!("{unverified} tokens failed verification");
        return Ok(1);
    }
    Ok(0)
}

fn bench_report(input: &Path) -> Result<u8, Failure> {
    let stats = read_csv(&read(input)?[..]).map_err(fail(2))?;
    if stats.is_empty() {
        return Err((2, format!("{}: no samples", input.display())));
    }
    println!("{}", summarize(&stats));
    Ok(0)
}

fn verify(a: VerifyArgs) -> Result<u8, Failure> {
    let token = SignedToken::from_bytes(&read(&a.token)?).map_err(|e| (2, format!("malformed token: {e}")))?;
    let mut policy = TrustPolicy::load(&a.trust).map_err(fail(2))?;
    if let Some(path) = &a.revoked {
        policy = policy.with_revocation_list(path).map_err(fail(2))?;
    }
    let report = match HttpNotaryClient::connect(&a.notary, Duration::from_secs(30)) {
        Ok(notary) => verify_evidence(&token, &a.patient, &notary, &policy),
        Err(e) => {
            eprintln!("notary unreachable: {e}");
            verify_evidence(&token, &a.patient, &Unreachable(e.to_string()), &policy)
        }
    };
    println!("{report}");
    if report.passed {
        Ok(0)
    } else {
        println!("{PATIENT_WARNING}");
        Ok(1)
    }
}

/// Stands in for a notary that could not be contacted, so the report
/// still shows every check.
struct Unreachable(String);

impl provnr_core::notary::NotaryClient for Unreachable {
    fn notary_id(&self) -> &str {
        ""
    }

    fn submit(
        &self,
        _: &provnr_core::notary::NotarySubmission,
    ) -> Result<provnr_core::notary::NotaryReceipt, provnr_core::notary::NotaryError> {
        Err(provnr_core::notary::NotaryError::Unavailable(self.0.clone()))
    }

    fn validate(
        &self,
        _: &str,
        _: Option<&provnr_core::crypto::Digest>,
    ) -> Result<provnr_core::notary::PresenceReport, provnr_core::notary::NotaryError> {
        Err(provnr_core::notary::NotaryError::Unavailable(self.0.clone()))
    }
}

fn reconstruct(a: ReconstructArgs) -> Result<u8, Failure> {
    let text = String::from_utf8(read(&a.history)?).map_err(fail(2))?;
    let history = HistoryDocument::from_document(decode_document(&text).map_err(fail(2))?).map_err(fail(2))?;
    let source = DataDirSource::open(&a.data);
    let doc = match (a.from, a.to) {
        (Some(from), Some(to)) => reconstruct_between(&history, from, to, &source),
        _ => reconstruct_document(&history, &source),
    }
    .map_err(fail(1))?;
    fs::write(&a.out, encode_document(&doc)).map_err(fail(1))?;
    Ok(0)
}

fn hash(a: HashArgs) -> Result<u8, Failure> {
    if let HashKind::Fixtures = a.kind {
        for f in fixtures::all() {
            println!("{}\t{}", f.name, f.sha256());
        }
        return Ok(0);
    }
    let path = a.file.ok_or((2, "missing input file".to_string()))?;
    let text = String::from_utf8(read(&path)?).map_err(fail(2))?;
    let bytes = match a.kind {
        HashKind::Document => canonical_bytes(&decode_document(&text).map_err(fail(2))?),
        HashKind::Template => Template::decode(&text).map_err(fail(2))?.canonical_bytes(),
        HashKind::Substitution => Substitution::decode(&text).map_err(fail(2))?.canonical_bytes(),
        HashKind::Fixtures => unreachable!(),
    };
    println!("{}", sha256_hex(&bytes));
    Ok(0)
}
