//! Deterministic documents, templates and substitutions, built from
//! code with fixed identifiers and times so that separate processes
//! can compare their hashes.

use std::sync::Arc;

use provnr_core::prov::{
    canonical_bytes, Decimal, Element, Literal, ProvDocument, QualifiedName, Relation, RelationKind, Timestamp,
};
use provnr_core::sim::{Scenario, ScenarioKind, CONSULT_NS};
use provnr_core::template::{instantiate, Bindings, FragmentSession, Substitution, ZoneBinding};

use crate::sha256_hex;

pub struct Fixture {
    pub name: &'static str,
    pub bytes: Vec<u8>,
}

impl Fixture {
    pub fn sha256(&self) -> String {
        sha256_hex(&self.bytes)
    }
}

fn c(l: &str) -> QualifiedName {
    QualifiedName::of("consult", l)
}

fn v(l: &str) -> QualifiedName {
    QualifiedName::of("var", l)
}

fn vv(l: &str) -> QualifiedName {
    QualifiedName::of("vvar", l)
}

fn at(millis: i64) -> Timestamp {
    Timestamp::from_millis(millis).expect("fixture time")
}

fn recommendation_substitution() -> Substitution {
    let mut s = Substitution::new()
        .bind(v("patient"), c("patient-7"))
        .bind(vv("patientName"), "Ada")
        .bind(v("recommend"), c("recommend-7"))
        .bind(vv("ruleset"), "hypertension-2024")
        .bind(v("recommendation"), c("recommendation-7"))
        .bind(vv("advice"), "reduce dosage of lisinopril");
    for i in 1..=12 {
        s = s
            .bind(v(&format!("evidence{i}")), c(&format!("obs-7-{i}")))
            .bind(vv(&format!("observation{i}")), format!("code-{}", 1000 + i * 37))
            .bind(vv(&format!("value{i}")), 40 + i as i64 * 11);
    }
    s
}

fn sensor_substitution(i: i64) -> Substitution {
    Substitution::new()
        .bind(v("sensor"), c("bp-monitor-3"))
        .bind(vv("device"), "bp-monitor")
        .bind(v("measure"), c(&format!("measure-3-{i}")))
        .bind(v("reading"), c(&format!("reading-3-{i}")))
        .bind(vv("value"), 120 + i)
        .bind(vv("unit"), "mmHg")
        .bind(vv("takenAt"), at(1_700_000_000_000 + i * 60_000))
}

fn turn(i: usize) -> Bindings {
    Bindings::from([
        (v("question"), c(&format!("q-5-{i}")).into()),
        (vv("questionText"), format!("question {i}: is this dose safe?").into()),
        (v("answer"), c(&format!("a-5-{i}")).into()),
        (vv("answerText"), format!("answer {i}: ask your GP \u{2764}").into()),
    ])
}

fn chatbot_substitution() -> Substitution {
    let mut s = Substitution::new()
        .bind(v("patient"), c("patient-5"))
        .bind(vv("patientName"), "Grace")
        .bind(v("conversation"), c("conversation-5"));
    s.zone_bindings = (0..3)
        .map(|i| ZoneBinding {
            zone: "turn".into(),
            bindings: turn(i),
        })
        .collect();
    s
}

fn literal_rich() -> ProvDocument {
    let ex = |l: &str| QualifiedName::of("ex", l);
    let mut d = ProvDocument::new()
        .with_namespace("ex", "http://example.org/fixture#")
        .expect("fresh document");
    d.insert(
        Element::entity(ex("e1"))
            .with_attribute(ex("label"), "quote \" backslash \\ tab \t newline \n")
            .with_attribute(ex("unicode"), "\u{00e9}\u{4e2d}\u{1f600}")
            .with_attribute(ex("count"), -42i64)
            .with_attribute(ex("ratio"), Literal::Decimal(Decimal::new(0.1).expect("finite")))
            .with_attribute(ex("flag"), true)
            .with_attribute(ex("seen"), at(0)),
    )
    .expect("entity");
    d.insert(Element::activity(ex("a1")).with_times(Some(at(1_000)), Some(at(2_500))))
        .expect("activity");
    d.insert(Element::agent(ex("ag1")).with_attribute(QualifiedName::of("prov", "type"), ex("Person")))
        .expect("agent");
    d.insert(Relation::new(RelationKind::Used, ex("a1"), ex("e1")).with_time(at(1_500)))
        .expect("used");
    d.insert(Relation::new(RelationKind::WasAssociatedWith, ex("a1"), ex("ag1")))
        .expect("association");
    d
}

/// The ten fixtures, in a fixed order.
pub fn all() -> Vec<Fixture> {
    let rec = Scenario::default_for(ScenarioKind::Recommendation).template();
    let sensor = Scenario::default_for(ScenarioKind::Sensor).template();
    let chat = Arc::new(Scenario::default_for(ScenarioKind::Chatbot).template());

    let rec_doc = instantiate(&rec, &recommendation_substitution()).expect("recommendation fragment");
    let mut sensor_doc = ProvDocument::new().with_namespace("consult", CONSULT_NS).expect("fresh document");
    for i in 0..3 {
        let f = instantiate(&sensor, &sensor_substitution(i)).expect("sensor fragment");
        sensor_doc.merge_in_place(&f).expect("merge");
    }
    let mut session = FragmentSession::begin("fixture", chat.clone(), &chatbot_substitution()).expect("session");
    let chat_doc = session.finalise().expect("finalise");

    vec![
        Fixture {
            name: "template-recommendation",
            bytes: rec.canonical_bytes(),
        },
        Fixture {
            name: "template-sensor",
            bytes: sensor.canonical_bytes(),
        },
        Fixture {
            name: "template-chatbot",
            bytes: chat.canonical_bytes(),
        },
        Fixture {
            name: "substitution-recommendation",
            bytes: recommendation_substitution().canonical_bytes(),
        },
        Fixture {
            name: "substitution-sensor",
            bytes: sensor_substitution(0).canonical_bytes(),
        },
        Fixture {
            name: "substitution-chatbot",
            bytes: chatbot_substitution().canonical_bytes(),
        },
        Fixture {
            name: "document-recommendation",
            bytes: canonical_bytes(&rec_doc),
        },
        Fixture {
            name: "document-sensor",
            bytes: canonical_bytes(&sensor_doc),
        },
        Fixture {
            name: "document-chatbot",
            bytes: canonical_bytes(&chat_doc),
        },
        Fixture {
            name: "document-literals",
            bytes: canonical_bytes(&literal_rich()),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_stable_within_a_process() {
        let a: Vec<String> = all().iter().map(Fixture::sha256).collect();
        let b: Vec<String> = all().iter().map(Fixture::sha256).collect();
        assert_eq!(a.len(), 10);
        assert_eq!(a, b);
    }

    #[test]
    fn fixtures_reparse_to_the_same_bytes() {
        for f in all() {
            let text = std::str::from_utf8(&f.bytes).unwrap();
            let again = if f.name.starts_with("template") {
                provnr_core::Template::decode(text).unwrap().canonical_bytes()
            } else if f.name.starts_with("substitution") {
                Substitution::decode(text).unwrap().canonical_bytes()
            } else {
                canonical_bytes(&provnr_core::prov::decode_document(text).unwrap())
            };
            assert_eq!(again, f.bytes, "{}", f.name);
        }
    }
}
