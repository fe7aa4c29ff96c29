#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::sync::Arc;
use std::time::Duration;

use delib_core::ids::DiscussionId;
use delib_core::service::auth::{Auth, Grant, Role};
use delib_core::service::http::{self, AppState};
use delib_core::service::{Command, Platform};
use delib_core::transcript::TranscriptInput;
use serde_json::Value;

pub const FOOD: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/food_workshop_transcript.json");

pub fn food_transcript() -> TranscriptInput {
    TranscriptInput::from_json(&std::fs::read(FOOD).unwrap()).unwrap()
}

/// Discussion built from the food workshop: ingest, analyze, approve, merge.
pub fn imported_discussion(p: &Platform) -> DiscussionId {
    let d = p.create_discussion("Food", "How can our city build a sustainable food system?", "host").unwrap();
    let t = p.upload_transcript(food_transcript()).unwrap();
    let s = p.start_import(&t, &d, "curator").unwrap();
    p.analyze(&s, "curator").unwrap();
    p.execute(&Command::Approve { session_id: s.clone(), curator: "curator".into() }).unwrap();
    p.execute(&Command::Merge { session_id: s, actor: "curator".into() }).unwrap();
    d
}

pub const ADMIN: &str = "tok-admin";
pub const CURATOR: &str = "tok-curator";
pub const FACILITATOR: &str = "tok-facilitator";
pub const PARTICIPANT: &str = "tok-participant";

pub fn test_auth() -> Auth {
    Auth::with_tokens([
        (ADMIN.to_string(), Grant { role: Role::Admin, scope: None }),
        (CURATOR.to_string(), Grant { role: Role::Curator, scope: None }),
        (FACILITATOR.to_string(), Grant { role: Role::Facilitator, scope: None }),
        (PARTICIPANT.to_string(), Grant { role: Role::Participant, scope: None }),
    ])
}

/// The HTTP service on an ephemeral port, torn down on drop.
pub struct Server {
    pub base: String,
    pub platform: Arc<Platform>,
    rt: Option<tokio::runtime::Runtime>,
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(rt) = self.rt.take() {
            rt.shutdown_background();
        }
    }
}

pub fn spawn_server(platform: Arc<Platform>, auth: Auth) -> Server {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(http::serve(AppState { platform: platform.clone(), auth: Arc::new(auth) }, listener));
    Server { base: format!("http://{addr}"), platform, rt: Some(rt) }
}

#[derive(Clone)]
pub struct Client {
    agent: ureq::Agent,
    base: String,
}

pub struct Reply {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("not JSON ({e}): {}", self.body))
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

impl Client {
    pub fn new(base: &str) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).timeout_global(Some(Duration::from_secs(30))).build().into();
        Self { agent, base: base.to_string() }
    }

    fn finish(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Reply {
        let mut resp = resp.expect("transport error");
        let headers = resp.headers().iter().map(|(k, v)| (k.to_string(), v.to_str().unwrap_or("").to_string())).collect();
        Reply { status: resp.status().as_u16(), headers, body: resp.body_mut().read_to_string().unwrap_or_default() }
    }

    pub fn post_raw(&self, path: &str, token: Option<&str>, body: &str) -> Reply {
        let mut req = self.agent.post(&format!("{}{path}", self.base)).header("Content-Type", "application/json");
        if let Some(t) = token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        Self::finish(req.send(body))
    }

    pub fn post(&self, path: &str, token: Option<&str>, body: &Value) -> Reply {
        self.post_raw(path, token, &body.to_string())
    }

    pub fn get(&self, path: &str, token: Option<&str>) -> Reply {
        let mut req = self.agent.get(&format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        Self::finish(req.call())
    }

    /// First `n` lines of a streaming NDJSON response.
    pub fn stream_lines(&self, path: &str, token: &str, n: usize) -> (u16, Vec<Value>) {
        let resp = self.agent.get(&format!("{}{path}", self.base)).header("Authorization", &format!("Bearer {token}")).call().unwrap();
        let status = resp.status().as_u16();
        if status != 200 {
            return (status, Vec::new());
        }
        let reader = BufReader::new(resp.into_body().into_reader());
        let lines = reader.lines().take(n).map(|l| serde_json::from_str(&l.unwrap()).unwrap()).collect();
        (status, lines)
    }
}
