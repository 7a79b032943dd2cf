//! Benchmark deployment: a notary server and a provenance server on
//! loopback, driven over HTTP by the scenario simulator.

use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use crate::client::{HttpError, HttpNotaryClient, HttpProvenanceClient};
use crate::{notary_router, provenance_router, spawn, ServerHandle};
use provnr_core::evidence::{verify_evidence, EvidencePipeline, Keyring, TrustPolicy};
use provnr_core::notary::{open_backend, Notary, NotaryKind};
use provnr_core::service::{DocumentService, ServiceConfig};
use provnr_core::sim::{run_scenario, RunFailure, RunStats, Scenario, ScenarioDriver, ScenarioKind, ScenarioRun};

const TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug)]
pub enum BenchError {
    Setup(String),
    Http(HttpError),
    Run(RunFailure),
}

impl std::fmt::Display for BenchError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BenchError::Setup(m) => write!(f, "setup: {m}"),
            BenchError::Http(e) => write!(f, "{e}"),
            BenchError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for BenchError {}

impl From<HttpError> for BenchError {
    fn from(e: HttpError) -> Self {
        BenchError::Http(e)
    }
}

fn setup<E: std::fmt::Display>(e: E) -> BenchError {
    BenchError::Setup(e.to_string())
}

/// A running notary and provenance server sharing one keyring. The
/// servers stop when the deployment is dropped.
pub struct Deployment {
    pub kind: NotaryKind,
    pub keyring: Keyring,
    pub policy: TrustPolicy,
    pub notary: Arc<HttpNotaryClient>,
    pub provenance: HttpProvenanceClient,
    // Field order matters: servers stop before the directory goes.
    provenance_server: ServerHandle,
    notary_server: ServerHandle,
    root: PathBuf,
    _temp: Option<tempfile::TempDir>,
}

impl Deployment {
    /// Deploys into a fresh temporary directory.
    pub fn start(kind: NotaryKind) -> Result<Self, BenchError> {
        let temp = tempfile::tempdir().map_err(setup)?;
        let root = temp.path().to_path_buf();
        let mut d = Self::start_in(kind, &root, Keyring::generate("provnr"))?;
        d._temp = Some(temp);
        Ok(d)
    }

    /// Deploys with state under `root/notary` and `root/service`.
    pub fn start_in(kind: NotaryKind, root: &Path, keyring: Keyring) -> Result<Self, BenchError> {
        let loopback = SocketAddr::from((Ipv4Addr::LOCALHOST, 0));
        let backend = open_backend(kind, &root.join("notary")).map_err(setup)?;
        let hash_cert = keyring.hash_signer().certificate().clone();
        let notary = Notary::new(format!("notary-{}", kind.as_str()), backend).with_hash_certificate(hash_cert);
        let notary_server = spawn(notary_router(Arc::new(notary)), loopback).map_err(setup)?;
        let notary_client = Arc::new(HttpNotaryClient::connect(&notary_server.url(), TIMEOUT)?);

        let pipeline = EvidencePipeline {
            keyring: keyring.clone(),
            notary: notary_client.clone(),
            service_id: "provnr".into(),
        };
        let service = DocumentService::open(ServiceConfig::new(root.join("service")), Some(pipeline)).map_err(setup)?;
        let provenance_server = spawn(provenance_router(Arc::new(service)), loopback).map_err(setup)?;
        let provenance = HttpProvenanceClient::new(&provenance_server.url(), TIMEOUT);
        let certs = keyring.certificates();
        Ok(Self {
            kind,
            policy: TrustPolicy::trusting(&certs),
            keyring,
            notary: notary_client,
            provenance,
            provenance_server,
            notary_server,
            root: root.to_path_buf(),
            _temp: None,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn provenance_url(&self) -> String {
        self.provenance_server.url()
    }

    pub fn notary_url(&self) -> String {
        self.notary_server.url()
    }
}

/// One notary by scenario measurement.
pub struct Cell {
    pub run: ScenarioRun,
    /// Tokens that passed every verification check, when verification
    /// was requested.
    pub verified: Option<usize>,
}

impl Cell {
    pub fn stats(&self) -> &RunStats {
        &self.run.stats
    }
}

/// Runs `scenario` against the deployment until `n` samples exist.
pub fn run_cell(d: &Deployment, scenario: &Scenario, n: usize, seed: u64, verify: bool) -> Result<Cell, BenchError> {
    let run = run_scenario(&d.provenance, scenario, d.kind, n, seed).map_err(BenchError::Run)?;
    Ok(Cell {
        verified: verify.then(|| verified(d, &run)),
        run,
    })
}

fn verified(d: &Deployment, run: &ScenarioRun) -> usize {
    run.tokens
        .iter()
        .filter(|t| verify_evidence(&t.token, &t.patient_id, d.notary.as_ref(), &d.policy).passed)
        .count()
}

/// Every (notary, scenario) pair. All notaries are deployed side by
/// side and, within a scenario, runs alternate between them in rotating
/// order, so drift in host load is shared by the cells being compared.
pub fn run_grid(
    notaries: &[NotaryKind],
    scenarios: &[ScenarioKind],
    n: usize,
    seed: u64,
    verify: bool,
    mut progress: impl FnMut(&Cell),
) -> Result<Vec<Cell>, BenchError> {
    let deployments = notaries
        .iter()
        .map(|&k| Deployment::start(k))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cells = Vec::new();
    for (i, &s) in scenarios.iter().enumerate() {
        let scenario = Scenario::default_for(s);
        let mut drivers = deployments
            .iter()
            .map(|d| ScenarioDriver::new(&d.provenance, &scenario, d.kind, seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(BenchError::Run)?;
        let mut round = 0;
        while drivers.iter().any(|d| d.samples() < n.max(1)) {
            for j in 0..drivers.len() {
                let k = (j + round) % drivers.len();
                if drivers[k].samples() < n.max(1) {
                    if let Err(e) = drivers[k].run_once() {
                        let failed = drivers.swap_remove(k);
                        return Err(BenchError::Run(failed.fail(e)));
                    }
                }
            }
            round += 1;
        }
        for (d, driver) in deployments.iter().zip(drivers) {
            let run = driver.finish();
            let cell = Cell {
                verified: verify.then(|| verified(d, &run)),
                run,
            };
            progress(&cell);
            cells.push(cell);
        }
    }
    Ok(cells)
}
