use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use dmsrec_core::candidates::CandidateSet;
use dmsrec_core::corpus::Session;
use dmsrec_core::intent::{
    build_prompts, classify_intents, mine_intents, parse_intents, CachedClient, HttpLlm, HttpLlmConfig, LlmClient,
    MatchMode, MiningConfig, MockLlm, INSTRUCTION,
};
use dmsrec_core::Error;

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn clicks() -> Vec<String> {
    strings(&["Wool Socks", "Trail Shoes", "Rain Jacket"])
}

fn cands() -> Vec<String> {
    strings(&["Rain Jacket", "Hiking Poles", "Trail Shoes Pro"])
}

#[test]
fn prompt_matches_golden_file() {
    let p = build_prompts(&clicks(), &cands()).unwrap();
    assert_eq!(p.input, include_str!("golden/prompt_input.txt"));
    assert_eq!(p.instruction, INSTRUCTION);
    assert!(INSTRUCTION.contains("1.") && INSTRUCTION.contains("2.") && INSTRUCTION.contains("3."));
}

#[test]
fn mock_answer_and_partition() {
    let raw = MockLlm::answer(&clicks(), &cands());
    let intents = parse_intents(&raw);
    assert_eq!(intents, cands());
    let (ex, la) = classify_intents(&intents, &clicks(), MatchMode::Exact);
    assert_eq!(ex, strings(&["Rain Jacket"]));
    assert_eq!(la, strings(&["Hiking Poles", "Trail Shoes Pro"]));
    let (ex, la) = classify_intents(&intents, &clicks(), MatchMode::Substring);
    assert_eq!(ex, strings(&["Rain Jacket", "Trail Shoes Pro"]));
    assert_eq!(la, strings(&["Hiking Poles"]));
}

#[test]
fn parse_handles_numbering_and_case() {
    let got = parse_intents("1. rain  JACKET;\n2) Hiking poles\n\n- Map;");
    assert_eq!(got, strings(&["rain JACKET", "Hiking poles", "Map"]));
    let (ex, _) = classify_intents(&got, &clicks(), MatchMode::Exact);
    assert_eq!(ex, strings(&["rain JACKET"]));
}

/// Serves one scripted `(status, body)` per connection and records every
/// request body.
fn fake_server(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    std::thread::spawn(move || {
        for (status, body) in script {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut req = vec![0; len];
            reader.read_exact(&mut req).unwrap();
            log.lock().unwrap().push(String::from_utf8(req).unwrap());
            let mut stream = stream;
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    (url, seen)
}

fn client(url: String, retries: u32) -> HttpLlm {
    HttpLlm::new(HttpLlmConfig {
        url,
        model: "test-model".into(),
        max_retries: retries,
        backoff: Duration::from_millis(1),
        timeout: Duration::from_secs(10),
        ..HttpLlmConfig::default()
    })
}

fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

#[test]
fn http_retries_server_errors_then_succeeds() {
    let (url, seen) = fake_server(vec![
        (500, "{}".into()),
        (500, "{}".into()),
        (200, completion("Rain Jacket; Tent")),
    ]);
    let llm = client(url, 3);
    let p = build_prompts(&clicks(), &cands()).unwrap();
    assert_eq!(llm.complete(&p).unwrap(), "Rain Jacket; Tent");
    assert_eq!(llm.retries(), 2);

    let bodies = seen.lock().unwrap();
    assert_eq!(bodies.len(), 3);
    let req: serde_json::Value = serde_json::from_str(&bodies[2]).unwrap();
    assert_eq!(req["model"], "test-model");
    assert_eq!(req["temperature"], 0.0);
    assert_eq!(req["messages"][0]["content"], INSTRUCTION);
    assert_eq!(req["messages"][1]["content"], p.input);
}

#[test]
fn http_gives_up_after_budget() {
    let (url, _) = fake_server(vec![(503, "{}".into()), (429, "{}".into()), (200, completion("   "))]);
    let llm = client(url, 2);
    let err = llm.complete(&build_prompts(&clicks(), &cands()).unwrap()).unwrap_err();
    assert!(matches!(err, Error::LlmExhausted { attempts: 3, .. }), "{err}");
}

#[test]
fn http_client_errors_are_fatal() {
    let (url, seen) = fake_server(vec![(400, "{}".into()), (200, completion("x"))]);
    let llm = client(url, 3);
    let err = llm.complete(&build_prompts(&clicks(), &cands()).unwrap()).unwrap_err();
    assert!(matches!(err, Error::LlmExhausted { attempts: 1, .. }), "{err}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

fn fixture() -> (Vec<Session>, Vec<CandidateSet>) {
    let sessions: Vec<Session> = (0..6)
        .map(|i| Session {
            session_id: format!("s{i}"),
            items: vec![1, 2],
            titles: strings(&["Wool Socks", "Rain Jacket"]),
            target: 3,
        })
        .collect();
    let cands = sessions
        .iter()
        .map(|s| CandidateSet {
            session_id: s.session_id.clone(),
            item_ids: vec![2, 4],
            titles: strings(&["Rain Jacket", "Hiking Poles"]),
            scores: vec![1.0, 0.5],
        })
        .collect();
    (sessions, cands)
}

#[test]
fn response_cache_persists_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("cache.jsonl");
    let (sessions, cands) = fixture();
    let cfg = MiningConfig {
        workers: 1,
        ..MiningConfig::default()
    };
    let first = CachedClient::with_file(MockLlm, &path).unwrap();
    let a = mine_intents(&sessions, &cands, &first, &cfg).unwrap();
    // identical prompts after the first call
    assert_eq!(first.misses.load(Ordering::Relaxed), 1);
    assert_eq!(first.hits.load(Ordering::Relaxed) + first.misses.load(Ordering::Relaxed), 6);
    drop(first);

    let second = CachedClient::with_file(MockLlm, &path).unwrap();
    let b = mine_intents(&sessions, &cands, &second, &cfg).unwrap();
    assert_eq!(second.misses.load(Ordering::Relaxed), 0);
    assert_eq!(a.records, b.records);
    assert_eq!(a.records[0].explicit, strings(&["Rain Jacket"]));
    assert_eq!(a.records[0].latent, strings(&["Hiking Poles"]));
    assert_eq!(a.stats.hallucination_rate, 0.0);
}

struct Flaky;

impl LlmClient for Flaky {
    fn describe(&self) -> String {
        "flaky".into()
    }
    fn complete(&self, p: &dmsrec_core::intent::PromptPair) -> dmsrec_core::Result<String> {
        Err(Error::LlmExhausted {
            attempts: 1,
            message: format!("{} bytes", p.input.len()),
        })
    }
}

#[test]
fn failures_are_recorded_not_fatal() {
    let (sessions, cands) = fixture();
    let out = mine_intents(&sessions, &cands[..3], &Flaky, &MiningConfig::default());
    match out {
        Ok(o) => {
            assert!(o.records.is_empty());
            assert_eq!(o.failures.len(), 6);
            assert_eq!(o.stats.failed, 6);
            assert_eq!(o.failures[5].error, "no candidate set for session");
        }
        Err(e) => panic!("mining should degrade, got {e}"),
    }
}
