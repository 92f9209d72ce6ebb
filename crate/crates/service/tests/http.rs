use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use cspos_core::bank::{trail_to, TrailStep};
use cspos_core::project::state::session_task;
use cspos_core::project::{ItemAnswer, Project, ProjectConfig};
use cspos_core::{TokenId, UniversalTag};
use cspos_service::{router, AppState, ManualClock};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const MINUTE: i64 = 60_000;

fn fixture_config() -> ProjectConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/project.json");
    ProjectConfig::load(&path).unwrap()
}

struct Harness {
    app: Router,
    state: AppState,
    clock: Arc<ManualClock>,
    data: PathBuf,
    _dir: tempfile::TempDir,
}

fn harness(edit: impl FnOnce(&mut ProjectConfig)) -> Harness {
    let mut cfg = fixture_config();
    edit(&mut cfg);
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let auth = cfg.auth.clone();
    let project = Project::ingest_config(cfg, &data, 0).unwrap();
    let clock = Arc::new(ManualClock::new(0));
    let state = AppState::new(project, auth, clock.clone());
    Harness {
        app: router(state.clone()),
        state,
        clock,
        data,
        _dir: dir,
    }
}

enum Reply {
    Json(Value),
    Text(String),
}

impl Harness {
    async fn call(&self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Reply) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(b.to_string()))
                .unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let is_json = resp
            .headers()
            .get(header::CONTENT_TYPE)
            .is_some_and(|v| v.to_str().unwrap().starts_with("application/json"));
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let text = String::from_utf8(bytes.to_vec()).unwrap();
        if is_json {
            (status, Reply::Json(serde_json::from_str(&text).unwrap()))
        } else {
            (status, Reply::Text(text))
        }
    }

    async fn get(&self, uri: &str, token: &str) -> (StatusCode, Value) {
        match self.call(Method::GET, uri, Some(token), None).await {
            (s, Reply::Json(v)) => (s, v),
            (s, Reply::Text(t)) => panic!("{s}: expected JSON, got {t:?}"),
        }
    }

    async fn post(&self, uri: &str, token: &str, body: Value) -> (StatusCode, Value) {
        match self.call(Method::POST, uri, Some(token), Some(body)).await {
            (s, Reply::Json(v)) => (s, v),
            (s, Reply::Text(t)) => panic!("{s}: expected JSON, got {t:?}"),
        }
    }

    async fn screen(&self, token: &str) {
        let key = self.state.with_project(|p| p.state().inputs().quiz.key());
        let (s, v) = self.post("/api/screening", token, json!({ "answers": key })).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        assert_eq!(v["passed"], true);
    }

    /// Page items of an outstanding page, with whether each is the hidden test.
    fn items(&self, page_id: &str) -> Vec<(TokenId, bool)> {
        self.state.with_project(|p| {
            p.state()
                .page(page_id)
                .unwrap()
                .items
                .iter()
                .map(|i| (i.token_id.clone(), i.is_test))
                .collect()
        })
    }

    /// Tags the task for `token_id` can produce, in tag order.
    fn reachable(&self, token_id: &TokenId) -> Vec<(UniversalTag, Vec<TrailStep>)> {
        self.state.with_project(|p| {
            let s = p.state();
            let bank = &s.inputs().bank;
            let task = session_task(s.assignment(token_id).unwrap(), bank).unwrap();
            UniversalTag::ALL
                .iter()
                .filter_map(|t| trail_to(bank, &task, *t).map(|tr| (*t, tr)))
                .collect()
        })
    }

    fn gold(&self, token_id: &TokenId) -> Option<UniversalTag> {
        self.state.with_project(|p| p.state().test_gold(token_id))
    }

    fn status(&self, worker_id: &str) -> String {
        self.state
            .with_project(|p| p.state().worker(worker_id).unwrap().status.as_str().to_string())
    }

    /// Takes a page and answers it; `pick` chooses among the reachable tags
    /// of each real item, and tests get `test_tag` (gold when `None`).
    async fn work_page(
        &self,
        token: &str,
        test_tag: Option<UniversalTag>,
        mut pick: impl FnMut(&[(UniversalTag, Vec<TrailStep>)]) -> usize,
    ) -> Option<(String, Vec<TokenId>)> {
        let (s, page) = self.get("/api/pages/next", token).await;
        if s == StatusCode::CONFLICT {
            return None;
        }
        assert_eq!(s, StatusCode::OK, "{page}");
        let page_id = page["page_id"].as_str().unwrap().to_string();
        let mut real = Vec::new();
        let mut answers = Vec::new();
        for (item, (token_id, is_test)) in self.items(&page_id).into_iter().enumerate() {
            let options = self.reachable(&token_id);
            let trail = if is_test {
                let want = test_tag.or(self.gold(&token_id)).unwrap();
                options
                    .iter()
                    .find(|(t, _)| *t == want)
                    .or_else(|| options.iter().find(|(t, _)| Some(*t) != self.gold(&token_id)))
                    .unwrap()
                    .1
                    .clone()
            } else {
                real.push(token_id.clone());
                options[pick(&options)].1.clone()
            };
            answers.push(ItemAnswer { item, trail });
        }
        let (s, v) = self
            .post(&format!("/api/pages/{page_id}"), token, json!({ "answers": answers }))
            .await;
        assert_eq!(s, StatusCode::OK, "{v}");
        Some((page_id, real))
    }
}

/// Walks a rendered questionnaire always taking the first option, the way a
/// client would.
fn first_option_trail(questionnaire: &Value) -> Value {
    let mut node = questionnaire["root"].as_str().unwrap().to_string();
    let mut trail = Vec::new();
    loop {
        trail.push(json!({ "node": node, "answer": 0 }));
        match &questionnaire["nodes"][&node]["options"][0]["next"] {
            Value::String(next) => node = next.clone(),
            _ => return Value::Array(trail),
        }
    }
}

#[tokio::test]
async fn requests_need_a_known_bearer_token_and_the_right_role() {
    let h = harness(|_| {});
    let (s, _) = h.call(Method::GET, "/api/pages/next", None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let req = Request::get("/api/pages/next").body(Body::empty()).unwrap();
    let resp = h.app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()[header::WWW_AUTHENTICATE], "Bearer");
    let (s, v) = h.get("/api/pages/next", "nope").await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_eq!(v["error"], "unauthorized");

    assert_eq!(h.get("/api/reports", "worker-a-token").await.0, StatusCode::FORBIDDEN);
    assert_eq!(h.get("/api/expert/ties", "admin-token").await.0, StatusCode::FORBIDDEN);
    assert_eq!(h.get("/api/pages/next", "expert-token").await.0, StatusCode::FORBIDDEN);
    assert_eq!(h.get("/api/admin/workers", "expert-token").await.0, StatusCode::FORBIDDEN);
    let (s, v) = h.get("/api/screening", "worker-x-token").await;
    assert_eq!(s, StatusCode::FORBIDDEN, "locale outside the allowed set: {v}");
    assert_eq!(v["error"], "forbidden");
}

#[tokio::test]
async fn screening_gates_pages() {
    let h = harness(|_| {});
    let (s, v) = h.get("/api/screening", "worker-a-token").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "unscreened");
    let questions = v["questions"].as_array().unwrap();
    assert_eq!(questions.len(), 10);
    assert!(!v.to_string().contains("correct"), "answer key leaked");

    assert_eq!(h.get("/api/pages/next", "worker-a-token").await.0, StatusCode::FORBIDDEN);
    let (s, _) = h.post("/api/screening", "worker-a-token", json!({ "answers": "abc" })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = h.post("/api/screening", "worker-a-token", json!({ "answers": [0, 1] })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "short answer list");

    h.screen("worker-a-token").await;
    assert_eq!(h.status("wa"), "active");
    let (s, v) = h
        .post("/api/screening", "worker-a-token", json!({ "answers": vec![0; 10] }))
        .await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");

    // Two wrong answers fail the quiz for good.
    let mut key = h.state.with_project(|p| p.state().inputs().quiz.key());
    key[0] = (key[0] + 1) % 3;
    key[1] = (key[1] + 1) % 3;
    let (s, v) = h.post("/api/screening", "worker-b-token", json!({ "answers": key })).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({ "passed": false, "status": "rejected_quiz" }));
    assert_eq!(h.get("/api/pages/next", "worker-b-token").await.0, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn a_page_round_trip_from_the_wire_format_alone() {
    let h = harness(|_| {});
    h.screen("worker-a-token").await;
    let (s, page) = h.get("/api/pages/next", "worker-a-token").await;
    assert_eq!(s, StatusCode::OK);
    let items = page["items"].as_array().unwrap();
    assert_eq!(items.len(), 10);
    assert_eq!(page["expires_at"], 1800 * 1000);
    assert!(page["price_cents"] == 5 || page["price_cents"] == 6);
    for item in items {
        for key in ["item", "task", "surface", "sentence", "questionnaire"] {
            assert!(item.get(key).is_some(), "missing {key}");
        }
        assert!(item.get("token_id").is_none());
        assert!(item.get("is_test").is_none());
    }
    let page_id = page["page_id"].as_str().unwrap();

    // The same page comes back until it is submitted.
    let (_, again) = h.get("/api/pages/next", "worker-a-token").await;
    assert_eq!(again["page_id"], page["page_id"]);

    let answers: Vec<Value> = items
        .iter()
        .map(|it| json!({ "item": it["item"], "trail": first_option_trail(&it["questionnaire"]) }))
        .collect();
    let uri = format!("/api/pages/{page_id}");

    let (s, v) = h.post(&uri, "worker-a-token", json!({ "answers": &answers[..9] })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    let mut bad = answers.clone();
    bad[0]["trail"] = json!([{ "node": "nowhere", "answer": 0 }]);
    assert_eq!(h.post(&uri, "worker-a-token", json!({ "answers": bad })).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = h.post(&uri, "worker-a-token", json!({ "nonsense": true })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = h.post("/api/pages/p999999", "worker-a-token", json!({ "answers": answers })).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    h.screen("worker-b-token").await;
    let (s, _) = h.post(&uri, "worker-b-token", json!({ "answers": answers })).await;
    assert_eq!(s, StatusCode::NOT_FOUND, "someone else's page");

    let (s, v) = h.post(&uri, "worker-a-token", json!({ "answers": answers })).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["status"], "accepted");
    assert_eq!(v["recorded"], 10);
    assert_eq!(h.post(&uri, "worker-a-token", json!({ "answers": answers })).await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn expired_pages_are_gone() {
    let h = harness(|_| {});
    h.screen("worker-a-token").await;
    let (_, page) = h.get("/api/pages/next", "worker-a-token").await;
    let answers: Vec<Value> = page["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|it| json!({ "item": it["item"], "trail": first_option_trail(&it["questionnaire"]) }))
        .collect();
    h.clock.advance(31 * MINUTE);
    let uri = format!("/api/pages/{}", page["page_id"].as_str().unwrap());
    let (s, v) = h.post(&uri, "worker-a-token", json!({ "answers": answers })).await;
    assert_eq!(s, StatusCode::GONE, "{v}");
    assert_eq!(v["error"], "gone");
    let (s, fresh) = h.get("/api/pages/next", "worker-a-token").await;
    assert_eq!(s, StatusCode::OK);
    assert_ne!(fresh["page_id"], page["page_id"]);
}

#[tokio::test]
async fn disagreement_reaches_the_expert_queue_and_reports() {
    let h = harness(|_| {});
    h.screen("worker-a-token").await;
    h.screen("worker-b-token").await;
    // Worker a takes the first reachable tag, worker b the last; with the
    // source tag as third vote many tokens end three ways.
    loop {
        let a = h.work_page("worker-a-token", None, |_| 0).await;
        let b = h.work_page("worker-b-token", None, |o| o.len() - 1).await;
        if a.is_none() && b.is_none() {
            break;
        }
    }

    let (s, ties) = h.get("/api/expert/ties", "expert-token").await;
    assert_eq!(s, StatusCode::OK);
    let ties = ties.as_array().unwrap().clone();
    assert!(!ties.is_empty());
    let tie = &ties[0];
    assert!(tie["tied"].as_array().unwrap().len() >= 2);
    let token_id = tie["token_id"].as_str().unwrap();
    let tag = tie["tied"][0].clone();

    let (s, v) = h
        .post(&format!("/api/expert/ties/{token_id}"), "worker-a-token", json!({ "tag": tag }))
        .await;
    assert_eq!(s, StatusCode::FORBIDDEN, "{v}");
    let (s, _) = h
        .post(&format!("/api/expert/ties/{token_id}"), "expert-token", json!({ "tag": "NOT_A_TAG" }))
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, v) = h
        .post(&format!("/api/expert/ties/{token_id}"), "expert-token", json!({ "tag": tag }))
        .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["source"], "expert");
    assert_eq!(v["warning"], Value::Null);
    let (s, _) = h
        .post(&format!("/api/expert/ties/{token_id}"), "expert-token", json!({ "tag": tag }))
        .await;
    assert_eq!(s, StatusCode::CONFLICT, "already resolved");
    let (s, _) = h.post("/api/expert/ties/u999:0", "expert-token", json!({ "tag": tag })).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (_, after) = h.get("/api/expert/ties", "expert-token").await;
    assert_eq!(after.as_array().unwrap().len(), ties.len() - 1);

    // Tokens outside every crowd task go to the manual queue.
    let (s, manual) = h.get("/api/expert/manual", "expert-token").await;
    assert_eq!(s, StatusCode::OK);
    if let Some(m) = manual.as_array().unwrap().first() {
        let id = m["token_id"].as_str().unwrap();
        let (s, v) = h
            .post(&format!("/api/expert/manual/{id}"), "expert-token", json!({ "tag": "NOUN" }))
            .await;
        assert_eq!(s, StatusCode::OK, "{v}");
    }

    let (s, report) = h.get("/api/reports", "expert-token").await;
    assert_eq!(s, StatusCode::OK);
    assert!(report["routing"]["total"].as_u64().unwrap() > 0);
    assert!(report["pool"]["decided"].as_u64().unwrap() > 0);
    assert_eq!(report["metrics"].as_array().unwrap().len(), 3);
    let (s, one) = h.get("/api/reports?task=eng_qt", "admin-token").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(one["metrics"].as_array().unwrap().len(), 1);
    let (s, v) = h.get("/api/reports?task=bogus", "admin-token").await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");

    match h.call(Method::GET, "/api/export", Some("expert-token"), None).await {
        (StatusCode::OK, Reply::Text(tsv)) => {
            let resolved = tsv
                .lines()
                .find(|l| l.split('\t').next() == Some(token_id))
                .expect("resolved token exported");
            assert!(resolved.contains(tag.as_str().unwrap()));
            assert!(resolved.contains("expert"));
        }
        (s, _) => panic!("export returned {s}"),
    }

    // Everything above survived on disk.
    let (_, d) = h.get("/api/admin/digest", "admin-token").await;
    let reopened = Project::open(&h.data).unwrap();
    assert_eq!(d["digest"], reopened.state().digest());
    assert_eq!(d["txn"], reopened.state().txn());
}

#[tokio::test]
async fn failing_hidden_tests_bans_and_discards() {
    let h = harness(|c| c.qc.grace_min = 2);
    h.screen("worker-a-token").await;
    h.screen("worker-c-token").await;
    let mut seen = Vec::new();
    for _ in 0..2 {
        let (_, real) = h
            .work_page("worker-c-token", Some(UniversalTag::X), |_| 0)
            .await
            .unwrap();
        seen.extend(real);
    }
    assert_eq!(h.status("wc"), "banned");
    let (s, v) = h.get("/api/pages/next", "worker-c-token").await;
    assert_eq!(s, StatusCode::FORBIDDEN, "{v}");
    let remaining = h.state.with_project(|p| {
        p.state()
            .core()
            .judgments
            .for_worker("wc")
            .filter(|j| j.valid)
            .count()
    });
    assert_eq!(remaining, 0);

    // An admin ban, previewed first.
    h.work_page("worker-a-token", None, |_| 0).await.unwrap();
    let before = h.state.digest();
    let (s, preview) = h
        .post("/api/admin/workers/wa/ban?dry_run=true", "admin-token", json!(null))
        .await;
    assert_eq!(s, StatusCode::OK, "{preview}");
    assert_eq!(preview["dry_run"], true);
    assert_eq!(preview["judgments_invalidated"], 10);
    assert_eq!(h.state.digest(), before);
    let (s, done) = h.post("/api/admin/workers/wa/ban", "admin-token", json!(null)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(done["dry_run"], false);
    assert_eq!(done["tokens_affected"], preview["tokens_affected"]);
    assert_eq!(h.get("/api/pages/next", "worker-a-token").await.0, StatusCode::FORBIDDEN);
    let (s, _) = h.post("/api/admin/workers/wa/ban", "admin-token", json!(null)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = h.post("/api/admin/workers/ghost/ban", "admin-token", json!(null)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, workers) = h.get("/api/admin/workers", "admin-token").await;
    assert_eq!(s, StatusCode::OK);
    let statuses: Vec<(&str, &str)> = workers
        .as_array()
        .unwrap()
        .iter()
        .map(|w| (w["worker_id"].as_str().unwrap(), w["status"].as_str().unwrap()))
        .collect();
    assert_eq!(statuses, vec![("wa", "banned"), ("wc", "banned")]);
}
