//! Workload simulator for the three decision-support use cases.
//!
//! A scenario drives a [`ProvenanceClient`] through setup calls (new
//! document, template registration) and then the measured calls, timing
//! each measured call around the client invocation.

mod stats;

pub use stats::{
    mann_whitney, mean, percentile_nearest_rank, quantile_sorted, read_csv, summarize, write_csv, Comparison,
    MannWhitney, RunStats, Sample, Summary, SummaryRow,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::evidence::SignedToken;
use crate::notary::NotaryKind;
use crate::prov::{Element, ProvDocument, QualifiedName, Relation, RelationKind, Timestamp};
use crate::service::{CallContext, DocumentService, ServiceError};
use crate::template::{Bindings, Substitution, Template};

pub const CONSULT_NS: &str = "https://example.org/consult#";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Recommendation,
    Sensor,
    Chatbot,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [ScenarioKind::Recommendation, ScenarioKind::Sensor, ScenarioKind::Chatbot];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Recommendation => "recommendation",
            ScenarioKind::Sensor => "sensor",
            ScenarioKind::Chatbot => "chatbot",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown scenario `{s}`"))
    }
}

/// Scenario parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    /// One large generate per run after simulated upstream compute.
    Recommendation { evidence_items: usize, compute_delay: Duration },
    /// `readings` small generate calls per run.
    Sensor { readings: usize },
    /// generateInitialise, k generateZone, generateFinalise; k uniform in
    /// `turns`.
    Chatbot { turns: (usize, usize) },
}

impl Scenario {
    pub fn default_for(kind: ScenarioKind) -> Self {
        match kind {
            ScenarioKind::Recommendation => Scenario::Recommendation {
                evidence_items: 12,
                compute_delay: Duration::from_millis(1),
            },
            ScenarioKind::Sensor => Scenario::Sensor { readings: 10 },
            ScenarioKind::Chatbot => Scenario::Chatbot { turns: (1, 5) },
        }
    }

    pub fn kind(&self) -> ScenarioKind {
        match self {
            Scenario::Recommendation { .. } => ScenarioKind::Recommendation,
            Scenario::Sensor { .. } => ScenarioKind::Sensor,
            Scenario::Chatbot { .. } => ScenarioKind::Chatbot,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Scenario::Recommendation { evidence_items, .. } if evidence_items == 0 => {
                Err("recommendation needs at least one evidence item".into())
            }
            Scenario::Sensor { readings } if readings == 0 => Err("sensor needs at least one reading".into()),
            Scenario::Chatbot { turns: (lo, hi) } if lo > hi => Err(format!("empty turn range {lo}..={hi}")),
            _ => Ok(()),
        }
    }

    /// The template every run of this scenario uses.
    pub fn template(&self) -> Template {
        let c = |l: &str| QualifiedName::of("consult", l);
        let v = |l: &str| QualifiedName::of("var", l);
        let vv = |l: &str| QualifiedName::of("vvar", l);
        let mut body = ProvDocument::new().with_namespace("consult", CONSULT_NS).expect("fresh document");
        let mut add = |s: crate::prov::Statement| body.insert(s).expect("scenario template statement");
        let mut zones = BTreeMap::new();
        match self {
            Scenario::Recommendation { evidence_items, .. } => {
                add(Element::agent(v("patient")).with_attribute(c("name"), vv("patientName")).into());
                add(Element::activity(v("recommend"))
                    .with_attribute(QualifiedName::of("prov", "type"), c("Recommendation"))
                    .with_attribute(c("ruleset"), vv("ruleset"))
                    .into());
                add(Element::entity(v("recommendation")).with_attribute(c("advice"), vv("advice")).into());
                add(Relation::new(RelationKind::WasAssociatedWith, v("recommend"), v("patient")).into());
                add(Relation::new(RelationKind::WasGeneratedBy, v("recommendation"), v("recommend")).into());
                for i in 1..=*evidence_items {
                    add(Element::entity(v(&format!("evidence{i}")))
                        .with_attribute(c("observation"), vv(&format!("observation{i}")))
                        .with_attribute(c("value"), vv(&format!("value{i}")))
                        .into());
                    add(Relation::new(RelationKind::Used, v("recommend"), v(&format!("evidence{i}"))).into());
                }
            }
            Scenario::Sensor { .. } => {
                add(Element::agent(v("sensor")).with_attribute(c("device"), vv("device")).into());
                add(Element::activity(v("measure")).into());
                add(Element::entity(v("reading"))
                    .with_attribute(c("value"), vv("value"))
                    .with_attribute(c("unit"), vv("unit"))
                    .with_attribute(c("takenAt"), vv("takenAt"))
                    .into());
                add(Relation::new(RelationKind::WasAssociatedWith, v("measure"), v("sensor")).into());
                add(Relation::new(RelationKind::WasGeneratedBy, v("reading"), v("measure")).into());
                add(Relation::new(RelationKind::WasAttributedTo, v("reading"), v("sensor")).into());
            }
            Scenario::Chatbot { .. } => {
                add(Element::agent(v("patient")).with_attribute(c("name"), vv("patientName")).into());
                add(Element::activity(v("conversation")).into());
                add(Relation::new(RelationKind::WasAssociatedWith, v("conversation"), v("patient")).into());
                add(Element::entity(v("question")).with_attribute(c("text"), vv("questionText")).into());
                add(Element::entity(v("answer")).with_attribute(c("text"), vv("answerText")).into());
                add(Relation::new(RelationKind::Used, v("conversation"), v("question")).into());
                add(Relation::new(RelationKind::WasGeneratedBy, v("answer"), v("conversation")).into());
                add(Relation::new(RelationKind::WasDerivedFrom, v("answer"), v("question")).into());
                zones.insert("turn".to_string(), BTreeSet::from([v("question"), v("answer")]));
            }
        }
        Template::with_zones(body, zones).expect("scenario template validates")
    }
}

/// What a client gets back from one call.
#[derive(Clone, Debug)]
pub struct Reply {
    pub result: String,
    pub token: Option<SignedToken>,
}

/// The service operations a simulated application uses, local or remote.
pub trait ProvenanceClient {
    fn new_template(&self, ctx: &CallContext, template: &Template) -> Result<Reply, String>;
    fn new_document(&self, ctx: &CallContext, default_url: Option<&str>) -> Result<Reply, String>;
    fn register_template(&self, ctx: &CallContext, doc_id: &str, template_id: &str) -> Result<Reply, String>;
    fn generate(&self, ctx: &CallContext, doc_id: &str, template_id: &str, s: &Substitution) -> Result<Reply, String>;
    fn generate_initialise(
        &self,
        ctx: &CallContext,
        doc_id: &str,
        template_id: &str,
        s: &Substitution,
    ) -> Result<Reply, String>;
    fn generate_zone(&self, ctx: &CallContext, session_id: &str, zone: &str, b: &Bindings) -> Result<Reply, String>;
    fn generate_finalise(&self, ctx: &CallContext, session_id: &str) -> Result<Reply, String>;
}

fn reply<T: ToString>(r: Result<crate::service::Response<T>, ServiceError>) -> Result<Reply, String> {
    r.map(|r| Reply {
        result: r.result.to_string(),
        token: r.token,
    })
    .map_err(|e| e.to_string())
}

impl ProvenanceClient for DocumentService {
    fn new_template(&self, ctx: &CallContext, template: &Template) -> Result<Reply, String> {
        reply(DocumentService::new_template(self, ctx, template.clone()))
    }

    fn new_document(&self, ctx: &CallContext, default_url: Option<&str>) -> Result<Reply, String> {
        reply(DocumentService::new_document(self, ctx, default_url.map(str::to_string)))
    }

    fn register_template(&self, ctx: &CallContext, doc_id: &str, template_id: &str) -> Result<Reply, String> {
        reply(DocumentService::register_template(self, ctx, doc_id, template_id).map(unit))
    }

    fn generate(&self, ctx: &CallContext, doc_id: &str, template_id: &str, s: &Substitution) -> Result<Reply, String> {
        reply(DocumentService::generate(self, ctx, doc_id, template_id, s.clone()).map(unit))
    }

    fn generate_initialise(
        &self,
        ctx: &CallContext,
        doc_id: &str,
        template_id: &str,
        s: &Substitution,
    ) -> Result<Reply, String> {
        reply(DocumentService::generate_initialise(self, ctx, doc_id, template_id, s.clone()))
    }

    fn generate_zone(&self, ctx: &CallContext, session_id: &str, zone: &str, b: &Bindings) -> Result<Reply, String> {
        reply(DocumentService::generate_zone(self, ctx, session_id, zone, b.clone()).map(unit))
    }

    fn generate_finalise(&self, ctx: &CallContext, session_id: &str) -> Result<Reply, String> {
        reply(DocumentService::generate_finalise(self, ctx, session_id).map(unit))
    }
}

fn unit(r: crate::service::Response<()>) -> crate::service::Response<&'static str> {
    crate::service::Response {
        result: "",
        token: r.token,
    }
}

/// A token handed to a simulated patient.
#[derive(Clone, Debug)]
pub struct IssuedToken {
    pub patient_id: String,
    pub token: SignedToken,
}

#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub stats: RunStats,
    pub tokens: Vec<IssuedToken>,
}

/// A run aborted by a failing call, with what was measured before it.
#[derive(Clone, Debug)]
pub struct RunFailure {
    pub error: String,
    pub partial: ScenarioRun,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} after {} samples: {}",
            self.partial.stats.scenario,
            self.partial.stats.n(),
            self.error
        )
    }
}

impl std::error::Error for RunFailure {}

/// Drives one scenario against one client, a run at a time. Runs of
/// different drivers can be interleaved so that slow drift of the host
/// affects every driver alike.
pub struct ScenarioDriver<'a> {
    client: &'a dyn ProvenanceClient,
    scenario: Scenario,
    rng: StdRng,
    template_id: String,
    out: ScenarioRun,
    run: usize,
    call: usize,
}

impl<'a> ScenarioDriver<'a> {
    /// Validates the scenario and uploads its template.
    pub fn new(
        client: &'a dyn ProvenanceClient,
        scenario: &Scenario,
        notary: NotaryKind,
        seed: u64,
    ) -> Result<Self, RunFailure> {
        let mut d = Self {
            client,
            scenario: scenario.clone(),
            rng: StdRng::seed_from_u64(seed),
            template_id: String::new(),
            out: ScenarioRun {
                stats: RunStats::new(notary, scenario.kind()),
                tokens: Vec::new(),
            },
            run: 0,
            call: 0,
        };
        let result = scenario.validate().and_then(|_| {
            let admin = CallContext::new("consult-sim", "operator");
            let template = scenario.template();
            d.setup(&admin, |cl| cl.new_template(&admin, &template))
        });
        match result {
            Ok(id) => {
                d.template_id = id;
                Ok(d)
            }
            Err(error) => Err(d.fail(error)),
        }
    }

    pub fn samples(&self) -> usize {
        self.out.stats.n()
    }

    pub fn finish(self) -> ScenarioRun {
        self.out
    }

    pub fn fail(self, error: String) -> RunFailure {
        RunFailure {
            error,
            partial: self.out,
        }
    }

    fn keep(&mut self, patient: &str, r: &Reply) {
        if let Some(t) = &r.token {
            self.out.tokens.push(IssuedToken {
                patient_id: patient.to_string(),
                token: t.clone(),
            });
        }
    }

    fn setup(&mut self, ctx: &CallContext, f: impl FnOnce(&dyn ProvenanceClient) -> Result<Reply, String>) -> Result<String, String> {
        let r = f(self.client)?;
        self.keep(&ctx.user_id, &r);
        Ok(r.result)
    }

    fn measured(&mut self, ctx: &CallContext, f: impl FnOnce(&dyn ProvenanceClient) -> Result<Reply, String>) -> Result<String, String> {
        let start = Instant::now();
        let r = f(self.client)?;
        let latency_ms = start.elapsed().as_secs_f64() * 1e3;
        self.out.stats.samples.push(Sample {
            run: self.run,
            call: self.call,
            latency_ms,
        });
        self.call += 1;
        self.keep(&ctx.user_id, &r);
        Ok(r.result)
    }

    /// One run: a new document for a new patient, then the scenario's
    /// measured calls.
    pub fn run_once(&mut self) -> Result<(), String> {
        let c = |l: &str| QualifiedName::of("consult", l);
        let v = |l: &str| QualifiedName::of("var", l);
        let vv = |l: &str| QualifiedName::of("vvar", l);
        let tpl = self.template_id.clone();
        let run = self.run;
        let patient = format!("patient-{}-{run}", self.scenario.kind());
        let ctx = CallContext::new("consult-sim", patient.clone());
        self.call = 0;
        let doc = self.setup(&ctx, |cl| cl.new_document(&ctx, Some(CONSULT_NS)))?;
        self.setup(&ctx, |cl| cl.register_template(&ctx, &doc, &tpl))?;
        match self.scenario.clone() {
            Scenario::Recommendation {
                evidence_items,
                compute_delay,
            } => {
                std::thread::sleep(compute_delay);
                let mut s = Substitution::new()
                    .bind(v("patient"), c(&patient))
                    .bind(vv("patientName"), patient.as_str())
                    .bind(v("recommend"), c(&format!("recommend-{run}")))
                    .bind(vv("ruleset"), "hypertension-2024")
                    .bind(v("recommendation"), c(&format!("recommendation-{run}")))
                    .bind(vv("advice"), "reduce dosage of lisinopril");
                for i in 1..=evidence_items {
                    s = s
                        .bind(v(&format!("evidence{i}")), c(&format!("obs-{run}-{i}")))
                        .bind(vv(&format!("observation{i}")), format!("code-{}", self.rng.gen_range(1000..9999)))
                        .bind(vv(&format!("value{i}")), self.rng.gen_range(40..200i64));
                }
                self.measured(&ctx, |cl| cl.generate(&ctx, &doc, &tpl, &s))?;
            }
            Scenario::Sensor { readings } => {
                for i in 0..readings {
                    let s = Substitution::new()
                        .bind(v("sensor"), c(&format!("bp-monitor-{run}")))
                        .bind(vv("device"), "bp-monitor")
                        .bind(v("measure"), c(&format!("measure-{run}-{i}")))
                        .bind(v("reading"), c(&format!("reading-{run}-{i}")))
                        .bind(vv("value"), self.rng.gen_range(90..180i64))
                        .bind(vv("unit"), "mmHg")
                        .bind(vv("takenAt"), Timestamp::now());
                    self.measured(&ctx, |cl| cl.generate(&ctx, &doc, &tpl, &s))?;
                }
            }
            Scenario::Chatbot { turns: (lo, hi) } => {
                let k = self.rng.gen_range(lo..=hi);
                let s = Substitution::new()
                    .bind(v("patient"), c(&patient))
                    .bind(vv("patientName"), patient.as_str())
                    .bind(v("conversation"), c(&format!("conversation-{run}")));
                let session = self.measured(&ctx, |cl| cl.generate_initialise(&ctx, &doc, &tpl, &s))?;
                for i in 0..k {
                    let b = Bindings::from([
                        (v("question"), c(&format!("q-{run}-{i}")).into()),
                        (vv("questionText"), format!("question {i}").into()),
                        (v("answer"), c(&format!("a-{run}-{i}")).into()),
                        (vv("answerText"), format!("answer {i}").into()),
                    ]);
                    self.measured(&ctx, |cl| cl.generate_zone(&ctx, &session, "turn", &b))?;
                }
                self.measured(&ctx, |cl| cl.generate_finalise(&ctx, &session))?;
            }
        }
        self.run += 1;
        Ok(())
    }
}

/// Runs the scenario until at least `min_calls` measured samples exist.
pub fn run_scenario(
    client: &dyn ProvenanceClient,
    scenario: &Scenario,
    notary: NotaryKind,
    min_calls: usize,
    seed: u64,
) -> Result<ScenarioRun, RunFailure> {
    let mut driver = ScenarioDriver::new(client, scenario, notary, seed)?;
    while driver.samples() < min_calls.max(1) {
        if let Err(error) = driver.run_once() {
            return Err(driver.fail(error));
        }
    }
    Ok(driver.finish())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::evidence::{verify_evidence, EvidencePipeline, Keyring, TrustPolicy};
    use crate::notary::{open_backend, Notary};
    use crate::service::ServiceConfig;

    struct Bench {
        _dir: tempfile::TempDir,
        service: DocumentService,
        notary: Arc<Notary>,
        policy: TrustPolicy,
    }

    fn bench(kind: NotaryKind) -> Bench {
        let dir = tempfile::tempdir().unwrap();
        let keyring = Keyring::generate("prov");
        let notary = Arc::new(
            Notary::new("notary", open_backend(kind, &dir.path().join("notary")).unwrap())
                .with_hash_certificate(keyring.hash_signer().certificate().clone()),
        );
        let mut config = ServiceConfig::new(dir.path().join("data"));
        config.sync_writes = false;
        let policy = TrustPolicy::trusting(&keyring.certificates());
        let pipeline = EvidencePipeline {
            keyring,
            notary: notary.clone(),
            service_id: "dss".into(),
        };
        Bench {
            service: DocumentService::open(config, Some(pipeline)).unwrap(),
            notary,
            policy,
            _dir: dir,
        }
    }

    #[test]
    fn sensor_run_yields_one_sample_per_reading() {
        let b = bench(NotaryKind::Object);
        let run = run_scenario(&b.service, &Scenario::Sensor { readings: 10 }, NotaryKind::Object, 10, 1).unwrap();
        assert_eq!(run.stats.n(), 10);
        assert_eq!(run.stats.runs(), 1);
        assert!(run.stats.latencies().iter().all(|l| *l > 0.0));
        // new document + register + 10 readings
        assert_eq!(run.tokens.len(), 12);
        for t in &run.tokens {
            let r = verify_evidence(&t.token, &t.patient_id, b.notary.as_ref(), &b.policy);
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn chatbot_samples_are_turns_plus_two() {
        let b = bench(NotaryKind::File);
        let run = run_scenario(&b.service, &Scenario::Chatbot { turns: (3, 3) }, NotaryKind::File, 10, 7).unwrap();
        assert_eq!(run.stats.n(), 10);
        assert_eq!(run.stats.runs(), 2);
        let docs = b.service.document_ids();
        assert_eq!(docs.len(), 2);
        for d in docs {
            assert_eq!(b.service.history(&d).unwrap().action_count(), 7);
            assert_eq!(
                encode_doc(&b.service.reconstruct(&d).unwrap()),
                b.service.export_document(&d).unwrap()
            );
        }
    }

    fn encode_doc(d: &ProvDocument) -> String {
        crate::prov::encode_document(d)
    }

    #[test]
    fn recommendation_is_one_call_per_run() {
        let b = bench(NotaryKind::Ledger);
        let scenario = Scenario::Recommendation {
            evidence_items: 4,
            compute_delay: Duration::ZERO,
        };
        let run = run_scenario(&b.service, &scenario, NotaryKind::Ledger, 3, 2).unwrap();
        assert_eq!(run.stats.n(), 3);
        assert_eq!(run.stats.runs(), 3);
        assert_eq!(run.tokens.len(), 9);
        let doc = &b.service.document_ids()[0];
        assert!(b.service.export_document(doc).unwrap().contains("consult:obs-"));
    }

    #[test]
    fn failing_client_reports_partial_stats() {
        struct Flaky(DocumentService, std::cell::Cell<usize>);
        impl ProvenanceClient for Flaky {
            fn new_template(&self, c: &CallContext, t: &Template) -> Result<Reply, String> {
                ProvenanceClient::new_template(&self.0, c, t)
            }
            fn new_document(&self, c: &CallContext, u: Option<&str>) -> Result<Reply, String> {
                ProvenanceClient::new_document(&self.0, c, u)
            }
            fn register_template(&self, c: &CallContext, d: &str, t: &str) -> Result<Reply, String> {
                ProvenanceClient::register_template(&self.0, c, d, t)
            }
            fn generate(&self, c: &CallContext, d: &str, t: &str, s: &Substitution) -> Result<Reply, String> {
                self.1.set(self.1.get() + 1);
                if self.1.get() > 3 {
                    return Err("server unavailable".into());
                }
                ProvenanceClient::generate(&self.0, c, d, t, s)
            }
            fn generate_initialise(&self, _: &CallContext, _: &str, _: &str, _: &Substitution) -> Result<Reply, String> {
                unreachable!()
            }
            fn generate_zone(&self, _: &CallContext, _: &str, _: &str, _: &Bindings) -> Result<Reply, String> {
                unreachable!()
            }
            fn generate_finalise(&self, _: &CallContext, _: &str) -> Result<Reply, String> {
                unreachable!()
            }
        }
        let b = bench(NotaryKind::Object);
        let flaky = Flaky(b.service, std::cell::Cell::new(0));
        let err = run_scenario(&flaky, &Scenario::Sensor { readings: 5 }, NotaryKind::Object, 5, 0).unwrap_err();
        assert_eq!(err.partial.stats.n(), 3);
        assert!(err.to_string().contains("server unavailable"));
    }

    #[test]
    fn scenario_kinds_parse() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.as_str().parse::<ScenarioKind>().unwrap(), k);
            assert_eq!(Scenario::default_for(k).kind(), k);
            Scenario::default_for(k).template();
        }
        assert!("batch".parse::<ScenarioKind>().is_err());
        assert!(Scenario::Chatbot { turns: (3, 1) }.validate().is_err());
    }
}
