use proptest::prelude::*;
use trilogy_core::ontology::{load_ontology, Concept, KeywordLink, Ontology, MAX_WEIGHT, MIN_WEIGHT};

/// The reference keyword table, row for row.
const TABLE: [(&str, &str, u32); 5] = [
    ("Aal", "Adaptation Layer And Transport Layer", 20),
    ("Aal", "ATM Introduction", 3),
    ("Connection admission control", "ATM Bandwidth allocation", 10),
    ("Regenerator section", "SDH Networking and Components", 8),
    ("WDM", "Wavelength Division Multiplexing", 15),
];

const ROOTS: [&str; 6] = [
    "ATM General",
    "SDH General",
    "Analytical Models",
    "Simulation Models",
    "High Speed LANs and MANs",
    "Optical Networks",
];

#[test]
fn seed_matches_reference_table() {
    let o = Ontology::seed();
    assert!(o.validate().is_empty());
    assert_eq!(o.links().len(), TABLE.len());
    for (kw, concept, weight) in TABLE {
        let found = o.concepts_for(kw);
        assert!(found.contains(&(concept.to_string(), weight)), "{kw} -> {concept}");
        // Case-folding both sides gives the same lookup.
        assert_eq!(o.concepts_for(&kw.to_uppercase()), o.concepts_for(&kw.to_lowercase()));
    }
    assert_eq!(
        o.concepts_for("aal"),
        vec![
            ("Adaptation Layer And Transport Layer".to_string(), 20),
            ("ATM Introduction".to_string(), 3)
        ]
    );
    let mut roots: Vec<_> = o.roots().map(|c| c.name.as_str()).collect();
    roots.sort();
    let mut expected = ROOTS.to_vec();
    expected.sort();
    assert_eq!(roots, expected);
    assert_eq!(
        o.concept("wireless atm").unwrap().parent.as_deref(),
        Some("ATM General")
    );
}

#[test]
fn wireless_atm_is_in_atm_general_subtree() {
    let o = Ontology::seed();
    assert!(o.subtree("ATM General").unwrap().contains("Wireless ATM"));
    assert!(!o.subtree("SDH General").unwrap().contains("Wireless ATM"));
}

#[test]
fn weight_21_is_rejected_on_load() {
    let err = load_ontology("A\t\n", "k\tA\t21\n").unwrap_err();
    assert!(err.to_string().contains("weight out of bounds"), "{err}");
}

#[derive(Debug, Clone)]
enum Op {
    AddConcept {
        name: usize,
        parent: Option<usize>,
    },
    SetLink {
        keyword: usize,
        concept: usize,
        weight: i64,
    },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0usize..12, proptest::option::of(0usize..12)).prop_map(|(name, parent)| Op::AddConcept { name, parent }),
        (0usize..10, 0usize..12, -5i64..30).prop_map(|(keyword, concept, weight)| Op::SetLink {
            keyword,
            concept,
            weight
        }),
    ]
}

const KEYWORDS: [&str; 10] = [
    "aal",
    "wdm",
    "cell",
    "cell loss",
    "cell loss ratio",
    "sonet",
    "Traffic Shaping",
    "atm",
    "fibre",
    "a b c d e f g h",
];

fn concept_name(i: usize) -> String {
    format!("Concept {i}")
}

fn apply(o: &Ontology, op: &Op) -> Option<Ontology> {
    match op {
        Op::AddConcept { name, parent } => o
            .add_concept(&concept_name(*name), parent.map(concept_name).as_deref())
            .ok(),
        Op::SetLink {
            keyword,
            concept,
            weight,
        } => o.set_link(KEYWORDS[*keyword], &concept_name(*concept), *weight).ok(),
    }
}

fn build(ops: &[Op]) -> Ontology {
    let mut o = Ontology::empty();
    for op in ops {
        if let Some(next) = apply(&o, op) {
            o = next;
        }
    }
    o
}

proptest! {
    #[test]
    fn weights_stay_bounded_under_mutation(ops in proptest::collection::vec(op(), 0..60)) {
        let o = build(&ops);
        prop_assert!(o.validate().is_empty(), "{:?}", o.validate());
        for l in o.links() {
            prop_assert!((MIN_WEIGHT..=MAX_WEIGHT).contains(&l.weight));
        }
    }

    #[test]
    fn out_of_range_weights_are_refused(w in prop_oneof![i64::MIN..1, 21i64..i64::MAX]) {
        let o = Ontology::seed();
        prop_assert!(o.set_link("aal", "ATM Introduction", w).is_err());
    }

    #[test]
    fn concepts_for_is_weight_ordered(ops in proptest::collection::vec(op(), 0..60)) {
        let o = build(&ops);
        for kw in KEYWORDS {
            let found = o.concepts_for(kw);
            for pair in found.windows(2) {
                prop_assert!(pair[0].1 > pair[1].1 || (pair[0].1 == pair[1].1 && pair[0].0 < pair[1].0));
            }
            let expected = o.links().iter().filter(|l| l.keyword.to_lowercase() == kw.to_lowercase()).count();
            prop_assert_eq!(found.len(), expected);
        }
    }

    #[test]
    fn subtree_is_monotone(ops in proptest::collection::vec(op(), 0..60)) {
        let o = build(&ops);
        for c in o.concepts() {
            let own = o.subtree(&c.name).unwrap();
            prop_assert!(own.contains(&c.name));
            if let Some(p) = &c.parent {
                let parent = o.subtree(p).unwrap();
                prop_assert!(own.is_subset(&parent));
            }
        }
    }

    #[test]
    fn snapshots_are_immutable(ops in proptest::collection::vec(op(), 1..40)) {
        let mut o = Ontology::seed();
        for op in &ops {
            let before = o.clone();
            let fingerprint = o.fingerprint();
            let next = apply(&o, op);
            prop_assert_eq!(&o, &before);
            prop_assert_eq!(o.fingerprint(), fingerprint);
            if let Some(n) = next {
                o = n;
            }
        }
    }

    #[test]
    fn load_after_serialize_is_identity(ops in proptest::collection::vec(op(), 0..60)) {
        let o = build(&ops);
        let reloaded = load_ontology(&o.hierarchy_tsv(), &o.links_tsv()).unwrap();
        prop_assert_eq!(&reloaded, &o);
        prop_assert_eq!(reloaded.fingerprint(), o.fingerprint());
    }
}

#[test]
fn forced_cycle_and_zero_weight_are_reported() {
    let o = Ontology::from_parts_unchecked(
        vec![Concept::child("A", "B"), Concept::child("B", "A")],
        vec![KeywordLink::new("k", "A", 0)],
    );
    let report: Vec<String> = o.validate().iter().map(ToString::to_string).collect();
    assert!(report.iter().any(|v| v.contains("cycle")), "{report:?}");
    assert!(report.iter().any(|v| v.contains("weight out of bounds")), "{report:?}");
}
