use std::sync::Arc;

use proptest::prelude::*;
use trilogy_core::broker::{BrokerProfile, BrokerStore, Hit, SharedStore, INDEX_FILE};
use trilogy_core::indexer::analyze;
use trilogy_core::ontology::Ontology;
use trilogy_core::soif::SoifRecord;

const ALTL: &str = "Adaptation Layer And Transport Layer";
const PHRASES: [&str; 9] = [
    "aal",
    "wdm",
    "connection admission control",
    "regenerator section",
    "hello",
    "world",
    "cell",
    "admission",
    "section",
];

fn store() -> BrokerStore {
    BrokerStore::new(
        BrokerProfile::new("test", vec!["ATM General".into()]),
        Arc::new(Ontology::seed()),
    )
}

fn doc(i: usize, picks: &[usize]) -> SoifRecord {
    let words: Vec<&str> = picks.iter().map(|&p| PHRASES[p % PHRASES.len()]).collect();
    let (title, rest) = words.split_at(words.len().min(2));
    SoifRecord::new("FILE", format!("mem:{i}"))
        .with("title", title.join(" "))
        .with("abstract", rest.join(". "))
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Linear scan: fraction of distinct terms appearing as a token run in some field.
fn keyword_oracle(s: &BrokerStore, terms: &[&str]) -> Vec<(String, f64)> {
    let mut distinct: Vec<Vec<String>> = Vec::new();
    for t in terms {
        let w = words(t);
        if !w.is_empty() && !distinct.contains(&w) {
            distinct.push(w);
        }
    }
    let mut out = Vec::new();
    for e in s.entries() {
        let fields: Vec<Vec<String>> = ["title", "keywords", "abstract"]
            .iter()
            .filter_map(|f| e.record.get_text(f))
            .map(|v| words(&v))
            .collect();
        let matched = distinct
            .iter()
            .filter(|t| fields.iter().any(|f| f.windows(t.len()).any(|w| w == t.as_slice())))
            .count();
        if matched > 0 {
            out.push((e.record.url.clone(), matched as f64 / distinct.len() as f64));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

fn pairs(hits: &[Hit]) -> Vec<(String, f64)> {
    hits.iter().map(|h| (h.url.clone(), h.score)).collect()
}

fn assert_coherent(s: &BrokerStore) {
    for e in s.entries() {
        let (matches, vector) = analyze(&e.record, s.ontology());
        assert_eq!(e.vector, vector);
        assert_eq!(e.matches, matches);
        for (c, emph) in e.vector.iter() {
            assert!(s
                .index()
                .postings(c)
                .iter()
                .any(|p| p.doc == e.id && p.emphasis == emph));
        }
    }
    for (c, list) in s.index().iter() {
        for p in list {
            assert_eq!(s.get(p.doc).unwrap().vector.get(c), p.emphasis);
        }
    }
    assert!(s.index().is_well_ordered());
}

#[derive(Debug, Clone)]
enum Op {
    Add(usize, Vec<usize>),
    Remove(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0usize..30, proptest::collection::vec(0usize..9, 0..6)).prop_map(|(i, p)| Op::Add(i, p)),
        1 => (0usize..30).prop_map(Op::Remove),
    ]
}

proptest! {
    #[test]
    fn store_stays_coherent(ops in proptest::collection::vec(op(), 0..40)) {
        let mut s = store();
        for op in ops {
            match op {
                Op::Add(i, picks) => {
                    let before = s.len();
                    match s.add_document(doc(i, &picks)) {
                        Ok(_) => prop_assert_eq!(s.len(), before + 1),
                        Err(_) => prop_assert_eq!(s.len(), before),
                    }
                }
                Op::Remove(i) => {
                    if let Some(id) = s.id_for_url(&format!("mem:{i}")) {
                        s.remove_document(id).unwrap();
                        prop_assert!(!s.index().contains_doc(id));
                    }
                }
            }
            assert_coherent(&s);
        }
    }

    #[test]
    fn keyword_query_equals_linear_scan(
        docs in proptest::collection::vec(proptest::collection::vec(0usize..9, 0..6), 50),
        terms in proptest::collection::vec(0usize..9, 1..4),
    ) {
        let mut s = store();
        for (i, picks) in docs.iter().enumerate() {
            s.add_document(doc(i, picks)).unwrap();
        }
        let terms: Vec<&str> = terms.iter().map(|&t| PHRASES[t]).collect();
        let got = s.query_keywords(&terms, 1000).unwrap();
        prop_assert_eq!(pairs(&got.hits), keyword_oracle(&s, &terms));
        let top = s.query_keywords(&terms, 3).unwrap();
        prop_assert_eq!(&top.hits[..], &got.hits[..got.len().min(3)]);
    }
}

#[test]
fn concept_query_uses_max_emphasis() {
    let mut s = store();
    s.add_document(SoifRecord::new("FILE", "mem:aal").with("title", "aal"))
        .unwrap();
    let intro = s.query_concepts(&["ATM Introduction"], 10).unwrap();
    assert_eq!(intro.hits[0].score, 3.0 / 23.0);
    let both = s.query_concepts(&[ALTL, "ATM Introduction"], 10).unwrap();
    assert_eq!(both.len(), 1);
    assert_eq!(both.hits[0].score, 20.0 / 23.0);
    assert!(s.query_concepts(&["Nonexistent"], 10).unwrap().is_empty());
}

#[test]
fn removing_one_doc_keeps_the_other_posting() {
    let mut s = store();
    let a = s
        .add_document(SoifRecord::new("FILE", "mem:a").with("title", "aal"))
        .unwrap();
    let b = s
        .add_document(SoifRecord::new("FILE", "mem:b").with("title", "aal wdm"))
        .unwrap();
    let before = s.index().postings(ALTL).iter().find(|p| p.doc == b).copied().unwrap();
    s.remove_document(a).unwrap();
    assert_eq!(s.index().postings(ALTL), &[before]);
    assert_eq!(before.emphasis, 20.0 / 38.0);
}

#[test]
fn same_document_is_retrievable_from_two_topic_brokers() {
    let record = SoifRecord::new("FILE", "mem:shared").with("title", "aal over wdm");
    let mut atm = BrokerStore::new(
        BrokerProfile::new("atm", vec!["ATM General".into()]),
        Arc::new(Ontology::seed()),
    );
    let mut optical = BrokerStore::new(
        BrokerProfile::new("optical", vec!["Optical Networks".into()]),
        Arc::new(Ontology::seed()),
    );
    atm.add_document(record.clone()).unwrap();
    optical.add_document(record).unwrap();
    for s in [&atm, &optical] {
        let r = s
            .query_concepts(&[ALTL, "Wavelength Division Multiplexing"], 10)
            .unwrap();
        assert_eq!(r.urls(), ["mem:shared"]);
    }
}

fn all_queries(s: &BrokerStore) -> Vec<Vec<Hit>> {
    let mut out = Vec::new();
    for c in s.ontology().concepts() {
        out.push(s.query_concepts(&[c.name.as_str()], 100).unwrap().hits);
    }
    for p in PHRASES {
        out.push(s.query_keywords(&[p], 100).unwrap().hits);
    }
    out
}

#[test]
fn save_load_is_query_equivalent() {
    let mut s = store();
    for i in 0..10 {
        s.add_document(doc(i, &[i, i + 1, i * 3, 2 * i + 5])).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    s.save(dir.path()).unwrap();
    let profile = s.profile().clone();
    let ontology = Arc::clone(s.ontology());

    let loaded = BrokerStore::load(dir.path(), profile.clone(), Arc::clone(&ontology)).unwrap();
    assert!(loaded.issues.is_empty());
    assert!(!loaded.index_rebuilt);
    assert_eq!(all_queries(&loaded.store), all_queries(&s));

    std::fs::remove_file(dir.path().join(INDEX_FILE)).unwrap();
    let rebuilt = BrokerStore::load(dir.path(), profile, ontology).unwrap();
    assert!(rebuilt.index_rebuilt);
    assert_eq!(all_queries(&rebuilt.store), all_queries(&s));
    assert_eq!(rebuilt.store.encode_index(), s.encode_index());
}

#[test]
fn readers_see_whole_writes() {
    let shared = Arc::new(SharedStore::new(store()));
    let writer = {
        let shared = Arc::clone(&shared);
        std::thread::spawn(move || {
            for i in 0..200 {
                shared.write(|s| s.add_document(doc(i, &[0, 1])).unwrap());
            }
        })
    };
    let mut last = 0;
    while last < 200 {
        let snap = shared.snapshot();
        let n = snap.len();
        assert!(n >= last);
        // Every visible document is fully indexed.
        assert_eq!(snap.index().postings(ALTL).len(), n);
        last = n;
    }
    writer.join().unwrap();
}
