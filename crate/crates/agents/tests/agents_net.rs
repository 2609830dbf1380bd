use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use tokio::net::TcpListener;
use trilogy_agents::client::{CallError, Client};
use trilogy_agents::mediator::spawn_mediator;
use trilogy_agents::paa::Paa;
use trilogy_agents::protocol::{
    AdvertiseBody, Connection, ErrorBody, FailureClass, Message, MessageType, QueuedBody, RouteKind, RouteRequestBody,
    SearchPayload, ServiceRequestBody,
};
use trilogy_agents::resource::{
    advertise_all, spawn_resource_agent, BrokerResource, MockExperiment, Resource, ResourceAgentHandle, RUN_EXPERIMENT,
};
use trilogy_core::broker::{BrokerProfile, BrokerStore, SharedStore, SEARCH_BY_KEYWORD};
use trilogy_core::ontology::Ontology;
use trilogy_core::soif::SoifRecord;

const TIMEOUT: Duration = Duration::from_secs(10);

async fn listener() -> TcpListener {
    TcpListener::bind("127.0.0.1:0").await.unwrap()
}

async fn serve(resource: Arc<dyn Resource>, timeout: Duration) -> ResourceAgentHandle {
    spawn_resource_agent(listener().await, resource, "resource:test".into(), timeout).unwrap()
}

fn request(service: &str, inputs: &[&str]) -> Message {
    Message::new(
        MessageType::ServiceRequest,
        "paa:t",
        ServiceRequestBody {
            service: service.into(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            user: "t".into(),
        },
    )
}

fn broker(name: &str, topics: &[&str], keywords: &[&str]) -> Arc<BrokerResource> {
    let mut profile = BrokerProfile::new(name, topics.iter().map(|s| s.to_string()).collect());
    profile.keywords = keywords.iter().map(|s| s.to_string()).collect();
    let store = BrokerStore::new(profile, Arc::new(Ontology::seed()));
    Arc::new(BrokerResource::new(Arc::new(SharedStore::new(store)), None))
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn queued_requests_get_positions_and_run_in_order() {
    let mut mock = MockExperiment::new("lab", 1);
    mock.duration = Duration::from_millis(30);
    let ins = Arc::clone(&mock.instrumentation);
    let agent = serve(Arc::new(mock), TIMEOUT).await;
    let mut conn = Connection::connect(agent.addr).await.unwrap();
    let reqs: Vec<Message> = (0..4).map(|i| request(RUN_EXPERIMENT, &[&format!("job{i}")])).collect();
    for r in &reqs {
        conn.send(r).await.unwrap();
    }
    let index: HashMap<String, usize> = reqs.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
    let mut positions: Vec<Vec<u32>> = vec![Vec::new(); 4];
    let mut results = Vec::new();
    while results.len() < 4 {
        let m = tokio::time::timeout(TIMEOUT, conn.recv()).await.unwrap().unwrap();
        let i = index[m.reply_to.as_ref().unwrap()];
        match m.kind {
            MessageType::ServiceQueued => positions[i].push(m.body::<QueuedBody>().unwrap().position),
            MessageType::ServiceResult => results.push(i),
            other => panic!("unexpected {other:?}"),
        }
    }
    assert_eq!(results, [0, 1, 2, 3]);
    assert_eq!(positions, vec![vec![], vec![1], vec![2, 1], vec![3, 2, 1]]);
    assert_eq!(ins.peak(), 1);
    assert_eq!(ins.started(), ["job0", "job1", "job2", "job3"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn bad_requests_are_rejected_before_queuing() {
    let mock = MockExperiment::new("lab", 1);
    let ins = Arc::clone(&mock.instrumentation);
    let agent = serve(Arc::new(mock), TIMEOUT).await;
    let client = Client::new("paa:t");
    let addr = agent.addr.to_string();
    let arity = client
        .call_service(&addr, RUN_EXPERIMENT, vec!["a".into(), "b".into()], "t", |_| {
            panic!("queued")
        })
        .await
        .unwrap_err();
    assert!(
        matches!(
            arity,
            CallError::Service {
                class: FailureClass::BadInput,
                ..
            }
        ),
        "{arity}"
    );
    let unknown = client
        .call_service(&addr, "nope", vec![], "t", |_| {})
        .await
        .unwrap_err();
    assert!(matches!(
        unknown,
        CallError::Service {
            class: FailureClass::BadInput,
            ..
        }
    ));
    assert!(ins.started().is_empty());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn failure_reason_and_timeout_class_reach_the_caller() {
    let mut mock = MockExperiment::new("lab", 2);
    mock.fail_reason = Some("oscilloscope offline: probe 3 disconnected".into());
    let agent = serve(Arc::new(mock), TIMEOUT).await;
    let client = Client::new("paa:t");
    let err = client
        .call_service(&agent.addr.to_string(), RUN_EXPERIMENT, vec!["x".into()], "t", |_| {})
        .await
        .unwrap_err();
    assert_eq!(err.reason(), Some("oscilloscope offline: probe 3 disconnected"));
    assert!(matches!(
        err,
        CallError::Service {
            class: FailureClass::ResourceCrash,
            ..
        }
    ));

    let mut slow = MockExperiment::new("slow", 1);
    slow.duration = Duration::from_secs(5);
    let agent = serve(Arc::new(slow), Duration::from_millis(50)).await;
    let err = client
        .call_service(&agent.addr.to_string(), RUN_EXPERIMENT, vec!["x".into()], "t", |_| {})
        .await
        .unwrap_err();
    assert!(
        matches!(
            err,
            CallError::Service {
                class: FailureClass::Timeout,
                ..
            }
        ),
        "{err}"
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn repeated_message_id_is_handled_once() {
    let agent = serve(Arc::new(MockExperiment::new("lab", 1)), TIMEOUT).await;
    let mut conn = Connection::connect(agent.addr).await.unwrap();
    let first = request(RUN_EXPERIMENT, &["a"]);
    conn.send(&first).await.unwrap();
    conn.send(&first).await.unwrap();
    let second = request(RUN_EXPERIMENT, &["b"]);
    conn.send(&second).await.unwrap();
    let mut replies = Vec::new();
    while replies.len() < 2 {
        let m = tokio::time::timeout(TIMEOUT, conn.recv()).await.unwrap().unwrap();
        if m.kind == MessageType::ServiceResult {
            replies.push(m.reply_to.unwrap());
        }
    }
    assert_eq!(replies, [first.id, second.id]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn broker_resource_adds_and_searches() {
    let b = broker("atm", &["ATM General"], &[]);
    let agent = serve(b.clone(), TIMEOUT).await;
    let addr = agent.addr.to_string();
    let client = Client::new("paa:t");
    let record = SoifRecord::new("FILE", "mem:1").with("title", "Cell Level Simulation in ATM Networks with aal");
    let added = client.submit(&addr, &record, "t").await.unwrap();
    assert_eq!(added.resource, "atm");
    assert_eq!(added.vector.get("ATM Introduction"), 3.0 / 23.0);
    let dup = client.submit(&addr, &record, "t").await.unwrap_err();
    assert!(dup.reason().unwrap().contains("duplicate url"), "{dup}");

    let payload = client
        .call_service(&addr, SEARCH_BY_KEYWORD, vec!["cell level\nabsent".into()], "t", |_| {})
        .await
        .unwrap();
    let found: SearchPayload = serde_json::from_value(payload).unwrap();
    assert_eq!(found.hits.len(), 1);
    assert_eq!(found.hits[0].score, 0.5);

    drop(agent);
    tokio::time::sleep(Duration::from_millis(50)).await;
    let dead = client
        .submit(&addr, &SoifRecord::new("FILE", "mem:2").with("title", "x"), "t")
        .await;
    assert!(matches!(dead, Err(CallError::Network { .. })));
    assert_eq!(b.store().snapshot().len(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn mediator_registers_routes_and_guards_names() {
    let med = spawn_mediator(listener().await, "m", Arc::new(Ontology::seed())).unwrap();
    let maddr = med.addr.to_string();
    let client = Client::new("resource:w");
    let wireless = broker("wireless", &["Wireless ATM"], &["aal"]);
    let agent = serve(wireless.clone(), TIMEOUT).await;
    let advert = AdvertiseBody {
        descriptor: wireless.descriptor(),
        address: agent.addr.to_string(),
    };
    let outcome = advertise_all(&client, std::slice::from_ref(&maddr), &advert, 3).await;
    assert!(outcome[0].1.is_ok());
    let topic = |v: &str| RouteRequestBody {
        kind: RouteKind::Topic,
        value: v.into(),
    };
    let names = |r: Vec<trilogy_agents::protocol::RouteEntry>| r.into_iter().map(|e| e.name).collect::<Vec<_>>();
    assert_eq!(
        names(client.route(&maddr, &topic("ATM General")).await.unwrap()),
        ["wireless"]
    );
    assert!(client.route(&maddr, &topic("SDH General")).await.unwrap().is_empty());
    let kw = RouteRequestBody {
        kind: RouteKind::Keyword,
        value: "AAL".into(),
    };
    assert_eq!(names(client.route(&maddr, &kw).await.unwrap()), ["wireless"]);

    // A live holder keeps its name.
    let impostor = AdvertiseBody {
        address: "127.0.0.1:9".into(),
        ..advert.clone()
    };
    let err = client.advertise(&maddr, &impostor).await.unwrap_err();
    assert!(err.reason().unwrap().contains("already registered"), "{err}");

    // A dead holder loses it.
    drop(agent);
    tokio::time::sleep(Duration::from_millis(50)).await;
    let replacement = serve(wireless, TIMEOUT).await;
    let moved = AdvertiseBody {
        address: replacement.addr.to_string(),
        ..advert
    };
    client.advertise(&maddr, &moved).await.unwrap();
    let entries = client.route(&maddr, &topic("Wireless ATM")).await.unwrap();
    assert_eq!(entries[0].address, replacement.addr.to_string());

    let bad = Message::new(MessageType::Notify, "x", serde_json::json!({}));
    let mut conn = Connection::connect(&maddr).await.unwrap();
    conn.send(&bad).await.unwrap();
    let reply = conn.recv().await.unwrap();
    assert_eq!(reply.kind, MessageType::ServiceError);
    assert_eq!(reply.body::<ErrorBody>().unwrap().class, FailureClass::BadInput);
}

const GROUP_A: [(&str, &str); 3] = [
    ("aal", "Adaptation Layer And Transport Layer"),
    ("connection admission control", "ATM Bandwidth allocation"),
    ("aal", "ATM Introduction"),
];
const GROUP_B: [(&str, &str); 2] = [
    ("regenerator section", "SDH Networking and Components"),
    ("wdm", "Wavelength Division Multiplexing"),
];

fn corpus() -> Vec<(bool, SoifRecord)> {
    let filler = ["simulation", "report", "network", "study"];
    (0..40)
        .map(|i| {
            let in_a = i % 2 == 0;
            let group: &[(&str, &str)] = if in_a { &GROUP_A } else { &GROUP_B };
            let k1 = group[i % group.len()].0;
            let k2 = group[(i / 3) % group.len()].0;
            let title = format!("{k1} {} {k2} {}", filler[i % 4], i);
            (
                in_a,
                SoifRecord::new("FILE", format!("mem:{i:03}")).with("title", title),
            )
        })
        .collect()
}

async fn advertise(client: &Client, mediator: &str, b: &BrokerResource, agent: &ResourceAgentHandle) {
    let advert = AdvertiseBody {
        descriptor: b.descriptor(),
        address: agent.addr.to_string(),
    };
    client.advertise(mediator, &advert).await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn split_and_union_deployments_answer_alike() {
    let ontology = Arc::new(Ontology::seed());
    let split_med = spawn_mediator(listener().await, "split", Arc::clone(&ontology)).unwrap();
    let union_med = spawn_mediator(listener().await, "union", Arc::clone(&ontology)).unwrap();
    let topics_a = [
        "Adaptation Layer And Transport Layer",
        "ATM Introduction",
        "ATM Bandwidth allocation",
    ];
    let topics_b = ["SDH Networking and Components", "Wavelength Division Multiplexing"];
    let kws_a = ["aal", "connection admission control"];
    let kws_b = ["regenerator section", "wdm"];
    let a = broker("a", &topics_a, &kws_a);
    let b = broker("b", &topics_b, &kws_b);
    let all_topics: Vec<&str> = topics_a.iter().chain(&topics_b).copied().collect();
    let all_kws: Vec<&str> = kws_a.iter().chain(&kws_b).copied().collect();
    let u = broker("u", &all_topics, &all_kws);
    for (in_a, record) in corpus() {
        let target = if in_a { &a } else { &b };
        target.store().write(|s| s.add_document(record.clone())).unwrap();
        u.store().write(|s| s.add_document(record)).unwrap();
    }
    let client = Client::new("resource:setup");
    let (ha, hb, hu) = (
        serve(a.clone(), TIMEOUT).await,
        serve(b.clone(), TIMEOUT).await,
        serve(u.clone(), TIMEOUT).await,
    );
    advertise(&client, &split_med.addr.to_string(), &a, &ha).await;
    advertise(&client, &split_med.addr.to_string(), &b, &hb).await;
    advertise(&client, &union_med.addr.to_string(), &u, &hu).await;

    let mut split = Paa::new("t", vec![split_med.addr.to_string()], Arc::clone(&ontology));
    let mut union = Paa::new("t", vec![union_med.addr.to_string()], ontology);
    split.limit = 100;
    union.limit = 100;
    for q in [
        "ATM connection admission control",
        "aal and wdm",
        "ATM General",
        "regenerator section report",
        "SDH General",
    ] {
        let s = split.query(q).await.unwrap();
        let w = union.query(q).await.unwrap();
        assert!(!s.partial && !w.partial);
        let key =
            |o: &trilogy_agents::paa::QueryOutcome| o.hits.iter().map(|h| (h.url.clone(), h.score)).collect::<Vec<_>>();
        assert!(!s.hits.is_empty(), "{q}");
        assert_eq!(key(&s), key(&w), "{q}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn dead_broker_gives_partial_results_and_dead_mediator_an_error() {
    let ontology = Arc::new(Ontology::seed());
    let med = spawn_mediator(listener().await, "m", Arc::clone(&ontology)).unwrap();
    let maddr = med.addr.to_string();
    let live = broker("live", &["ATM Introduction"], &["aal"]);
    live.store()
        .write(|s| s.add_document(SoifRecord::new("FILE", "mem:x").with("title", "aal")))
        .unwrap();
    let hl = serve(live.clone(), TIMEOUT).await;
    let client = Client::new("resource:setup");
    advertise(&client, &maddr, &live, &hl).await;
    let dead = broker("dead", &["ATM Introduction"], &[]);
    let hd = serve(dead.clone(), TIMEOUT).await;
    advertise(&client, &maddr, &dead, &hd).await;
    drop(hd);
    tokio::time::sleep(Duration::from_millis(50)).await;

    let mut paa = Paa::new("t", vec![maddr], Arc::clone(&ontology));
    paa.client = paa.client.with_timeout(Duration::from_secs(5));
    let out = paa.query("aal").await.unwrap();
    assert!(out.partial);
    assert!(out.warnings.iter().any(|w| w.starts_with("dead")), "{:?}", out.warnings);
    assert_eq!(out.hits.len(), 1);

    let unreachable = Paa::new("t", vec!["127.0.0.1:9".into()], ontology);
    assert!(unreachable.query("aal").await.is_err());
}
