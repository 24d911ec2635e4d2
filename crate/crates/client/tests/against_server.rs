use sgq_client::api::*;
use sgq_client::{Client, ClientError};
use sgq_core::io::SyntheticStreamSpec;
use sgq_core::oracle::Instants;

const LIKE_CHAINS: &str = "RL(x,y) <- likes(x,m), posts(y,m)\nAnswer(x,y) <- RL+(x,y) as RLP\nWINDOW 24 SLIDE 1";
const EDGES: &str = "u v follows 7\nv b posts 10\nv c posts 11\nu a posts 13\ny u follows 20\ny a likes 28\nu b likes 29\nu c likes 30\n";

async fn server() -> Client {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(sgq_server::serve(listener));
    Client::new(format!("http://{addr}/"))
}

#[tokio::test]
async fn round_trips() {
    let c = server().await;
    c.health().await.unwrap();

    let p = c.plan(&PlanRequest { query: LIKE_CHAINS.into(), ..Default::default() }).await.unwrap();
    assert_eq!(p.plans.len(), 1);

    let r = c.run(&RunRequest { query: LIKE_CHAINS.into(), edges: EDGES.into(), ..Default::default() }).await.unwrap();
    assert_eq!(r.metrics.tuples_in, 8);
    assert!(r.results.contains("y:RL:u;u:RL:v"));

    let mut spec = SyntheticStreamSpec::new(6, 120, &["likes", "posts"], 5);
    spec.deletions = 0.2;
    let g = c.generate(&GenRequest { spec }).await.unwrap();
    let req = CheckRequest { query: LIKE_CHAINS.into(), edges: g.edges, instants: Instants::Boundary, window: None };
    let chk = c.check(&req).await.unwrap();
    assert!(chk.passed, "{:?}", chk.diffs.first());
}

#[tokio::test]
async fn sessions_stream_results() {
    let c = server().await;
    let info = c.open(&OpenSession { query: LIKE_CHAINS.into(), window: None }).await.unwrap();
    let mut lines = 0;
    for e in EDGES.lines() {
        lines += c.push(info.id, &PushEdges { edges: format!("{e}\n"), until: None }).await.unwrap().results.lines().count();
    }
    assert_eq!(c.status(info.id).await.unwrap().now, Some(30));
    let closed = c.close(info.id).await.unwrap();
    assert_eq!(closed.metrics.tuples_out, lines as u64);
    assert!(matches!(c.status(info.id).await, Err(ClientError::Server { status, .. }) if status == 404));
}

#[tokio::test]
async fn server_errors_carry_the_message() {
    let c = server().await;
    let err = c.run(&RunRequest { query: "nonsense".into(), ..Default::default() }).await.unwrap_err();
    match err {
        ClientError::Server { status, message } => {
            assert_eq!(status, 400);
            assert!(message.starts_with("query"), "{message}");
        }
        e => panic!("{e}"),
    }
}

#[tokio::test]
async fn unreachable_server() {
    let c = Client::new("http://127.0.0.1:1");
    assert!(matches!(c.health().await, Err(ClientError::Transport(_))));
}
