//! Prompted intent mining.
//!
//! The LLM sees the numbered click titles and the numbered candidate titles
//! and answers with semicolon-separated intents. Each intent is explicit
//! when it matches one of the session's own titles and latent otherwise.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::candidates::CandidateSet;
use crate::corpus::{normalize_title, Session};
use crate::encoder::tokenize;
use crate::error::{Error, Result};

pub const INSTRUCTION: &str = "You are tasked with inferring the user's intents based on a sequence of items they have interacted with.
Requirements:
1. If multiple intents are inferred, list all relevant intents that reflect the user's current preferences and separate them with semicolons.
2. The inferred intents must be selected from the Candidate item set.
3. Note that the number of recommended intents should be appropriate.";

const CLICKS_HEADER: &str = "The order in which users click on items is as follows:";
const CANDIDATES_HEADER: &str = "Candidate item set:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub instruction: String,
    pub input: String,
}

impl PromptPair {
    pub fn hash(&self) -> String {
        let mut bytes = Vec::with_capacity(self.instruction.len() + self.input.len() + 1);
        bytes.extend_from_slice(self.instruction.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(self.input.as_bytes());
        crate::seed::sha256_hex(&bytes)
    }
}

/// Renders the instruction and the numbered click/candidate lists.
pub fn build_prompts(titles: &[String], candidate_titles: &[String]) -> Result<PromptPair> {
    if titles.is_empty() {
        return Err(Error::Validation("prompt needs at least one clicked title".into()));
    }
    if candidate_titles.is_empty() {
        return Err(Error::Validation("prompt needs a non-empty candidate set".into()));
    }
    let mut input = String::new();
    input.push_str(CLICKS_HEADER);
    input.push('\n');
    for (i, t) in titles.iter().enumerate() {
        let sep = if i + 1 < titles.len() { ";" } else { "" };
        input.push_str(&format!("{}. {t}{sep}\n", i + 1));
    }
    input.push('\n');
    input.push_str(CANDIDATES_HEADER);
    input.push('\n');
    for (i, c) in candidate_titles.iter().enumerate() {
        input.push_str(&format!("{}. {c}\n", i + 1));
    }
    Ok(PromptPair {
        instruction: INSTRUCTION.to_string(),
        input,
    })
}

fn strip_numbering(line: &str) -> &str {
    let t = line.trim_start();
    if let Some(rest) = t.strip_prefix(['-', '*', '•']) {
        return rest.trim_start();
    }
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(after) = rest.strip_prefix(['.', ')']) {
            if after.is_empty() || after.starts_with(char::is_whitespace) {
                return after.trim_start();
            }
        }
    }
    t
}

/// Recovers the click titles and candidate titles from a rendered input
/// prompt.
pub fn parse_input_prompt(input: &str) -> (Vec<String>, Vec<String>) {
    let mut clicks = Vec::new();
    let mut cands = Vec::new();
    let mut section = 0;
    for line in input.lines() {
        let l = line.trim();
        if l == CLICKS_HEADER {
            section = 1;
        } else if l == CANDIDATES_HEADER {
            section = 2;
        } else if !l.is_empty() {
            let item = strip_numbering(l);
            match section {
                1 => clicks.push(item.strip_suffix(';').unwrap_or(item).to_string()),
                2 => cands.push(item.to_string()),
                _ => {}
            }
        }
    }
    (clicks, cands)
}

pub trait LlmClient: Send + Sync {
    /// Model identity; part of the response-cache key.
    fn describe(&self) -> String;
    fn complete(&self, prompt: &PromptPair) -> Result<String>;
}

/// Deterministic offline stand-in: returns every candidate that shares a
/// token with some clicked title, plus the first candidate that shares none.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockLlm;

impl MockLlm {
    pub fn answer(clicks: &[String], candidates: &[String]) -> String {
        let vocab: HashSet<String> = clicks.iter().flat_map(|t| tokenize(t)).collect();
        let mut out: Vec<&str> = Vec::new();
        let mut took_novel = false;
        for c in candidates {
            let overlaps = tokenize(c).iter().any(|t| vocab.contains(t));
            if overlaps {
                out.push(c);
            } else if !took_novel {
                out.push(c);
                took_novel = true;
            }
        }
        out.join("; ")
    }
}

impl LlmClient for MockLlm {
    fn describe(&self) -> String {
        "mock:v1".into()
    }

    fn complete(&self, prompt: &PromptPair) -> Result<String> {
        let (clicks, cands) = parse_input_prompt(&prompt.input);
        Ok(Self::answer(&clicks, &cands))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpLlmConfig {
    /// Full chat-completions URL.
    pub url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub api_key: Option<String>,
    pub max_retries: u32,
    pub backoff: Duration,
    pub timeout: Duration,
}

impl Default for HttpLlmConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "Qwen2.5-7B-Instruct".into(),
            temperature: 0.0,
            max_tokens: 512,
            api_key: None,
            max_retries: 3,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
        }
    }
}

/// Chat-completions client with exponential-backoff retries on transport
/// errors, 429, 5xx and empty completions.
pub struct HttpLlm {
    cfg: HttpLlmConfig,
    agent: ureq::Agent,
    retries: AtomicU64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(String),
}

impl HttpLlm {
    pub fn new(cfg: HttpLlmConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(cfg.timeout))
            .build()
            .into();
        Self {
            cfg,
            agent,
            retries: AtomicU64::new(0),
        }
    }

    /// Retries performed so far across all requests.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    fn attempt(&self, prompt: &PromptPair) -> Attempt {
        let body = serde_json::json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
            "messages": [
                {"role": "system", "content": prompt.instruction},
                {"role": "user", "content": prompt.input},
            ],
        });
        let mut req = self.agent.post(&self.cfg.url);
        if let Some(k) = &self.cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = match req.send_json(&body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(format!("transport: {e}")),
        };
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Attempt::Retry(format!("status {status}"));
        }
        if status >= 400 {
            return Attempt::Fatal(format!("status {status}"));
        }
        match resp.body_mut().read_json::<ChatResponse>() {
            Ok(r) => match r.choices.into_iter().next().and_then(|c| c.message.content) {
                Some(text) if !text.trim().is_empty() => Attempt::Done(text),
                _ => Attempt::Retry("empty completion".into()),
            },
            Err(e) => Attempt::Retry(format!("malformed completion: {e}")),
        }
    }
}

impl LlmClient for HttpLlm {
    fn describe(&self) -> String {
        format!("http:{}:{}:t={}", self.cfg.url, self.cfg.model, self.cfg.temperature)
    }

    fn complete(&self, prompt: &PromptPair) -> Result<String> {
        let hash = prompt.hash();
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                self.retries.fetch_add(1, Ordering::Relaxed);
                log::info!("retry {attempt} for prompt {} after: {last}", &hash[..12]);
                std::thread::sleep(self.cfg.backoff * 2u32.saturating_pow(attempt - 1));
            }
            log::debug!("llm request prompt={}", &hash[..12]);
            match self.attempt(prompt) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Retry(msg) => last = msg,
                Attempt::Fatal(msg) => {
                    return Err(Error::LlmExhausted {
                        attempts: attempt + 1,
                        message: msg,
                    })
                }
            }
        }
        Err(Error::LlmExhausted {
            attempts: self.cfg.max_retries + 1,
            message: last,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    response: String,
}

/// Response cache keyed by `(client, prompt)` hash, backed by an
/// append-only JSONL file.
pub struct CachedClient<C> {
    inner: C,
    file: Option<PathBuf>,
    entries: Mutex<HashMap<String, String>>,
    pub hits: AtomicUsize,
    pub misses: AtomicUsize,
}

impl<C: LlmClient> CachedClient<C> {
    pub fn in_memory(inner: C) -> Self {
        Self {
            inner,
            file: None,
            entries: Mutex::new(HashMap::new()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn with_file(inner: C, path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(|e| Error::io(path, e))?;
                // a torn final line from an interrupted run is skipped
                if let Ok(c) = serde_json::from_str::<CacheLine>(&line) {
                    entries.insert(c.key, c.response);
                }
            }
        }
        Ok(Self {
            file: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
            ..Self::in_memory(inner)
        })
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }

    fn key(&self, prompt: &PromptPair) -> String {
        crate::seed::sha256_hex(format!("{}\0{}", self.inner.describe(), prompt.hash()).as_bytes())
    }
}

impl<C: LlmClient> LlmClient for CachedClient<C> {
    fn describe(&self) -> String {
        self.inner.describe()
    }

    fn complete(&self, prompt: &PromptPair) -> Result<String> {
        let key = self.key(prompt);
        if let Some(hit) = self.entries.lock().expect("cache lock").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let response = self.inner.complete(prompt)?;
        let mut entries = self.entries.lock().expect("cache lock");
        if let Some(path) = &self.file {
            let mut line = serde_json::to_vec(&CacheLine {
                key: key.clone(),
                response: response.clone(),
            })?;
            line.push(b'\n');
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            f.write_all(&line).map_err(|e| Error::io(path, e))?;
        }
        entries.insert(key, response.clone());
        Ok(response)
    }
}

/// Splits a completion into intents.
pub fn parse_intents(raw: &str) -> Vec<String> {
    raw.split([';', '\n'])
        .map(|p| normalize_title(strip_numbering(p.trim())))
        .filter(|p| !p.is_empty())
        .collect()
}

/// Case-folded normalized form used for all intent/title comparisons.
pub fn match_key(s: &str) -> String {
    normalize_title(s).to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    #[default]
    Exact,
    /// Either string contains the other.
    Substring,
}

impl std::str::FromStr for MatchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(MatchMode::Exact),
            "substring" => Ok(MatchMode::Substring),
            other => Err(Error::Config(format!("unknown match mode {other:?}"))),
        }
    }
}

/// Buckets intents into `(explicit, latent)`, preserving order.
pub fn classify_intents(intents: &[String], titles: &[String], mode: MatchMode) -> (Vec<String>, Vec<String>) {
    let keys: Vec<String> = titles.iter().map(|t| match_key(t)).collect();
    let exact: HashSet<&str> = keys.iter().map(String::as_str).collect();
    let mut explicit = Vec::new();
    let mut latent = Vec::new();
    for intent in intents {
        let k = match_key(intent);
        let hit = match mode {
            MatchMode::Exact => exact.contains(k.as_str()),
            MatchMode::Substring => keys.iter().any(|t| t.contains(&k) || k.contains(t.as_str())),
        };
        if hit {
            explicit.push(intent.clone());
        } else {
            latent.push(intent.clone());
        }
    }
    (explicit, latent)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentRecord {
    pub session_id: String,
    pub raw_response: String,
    pub explicit: Vec<String>,
    pub latent: Vec<String>,
}

impl IntentRecord {
    pub fn intents(&self) -> impl Iterator<Item = &String> {
        self.explicit.iter().chain(&self.latent)
    }

    pub fn is_empty(&self) -> bool {
        self.explicit.is_empty() && self.latent.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningFailure {
    pub session_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiningConfig {
    pub workers: usize,
    pub max_intents: usize,
    /// Drop intents that are not candidate titles.
    pub strict: bool,
    pub match_mode: MatchMode,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            max_intents: 10,
            strict: false,
            match_mode: MatchMode::Exact,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MiningStats {
    pub sessions: usize,
    pub records: usize,
    pub failed: usize,
    /// Records whose completion parsed to zero intents.
    pub empty: usize,
    pub intents: usize,
    pub explicit: usize,
    pub latent: usize,
    /// Parsed intents that are not candidate titles.
    pub hallucinated: usize,
    pub hallucination_rate: f64,
    /// Number of explicit intents per session → session count.
    pub explicit_histogram: BTreeMap<usize, usize>,
    pub latent_histogram: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, Default)]
pub struct MiningOutput {
    pub records: Vec<IntentRecord>,
    pub failures: Vec<MiningFailure>,
    pub stats: MiningStats,
}

/// Builds the record for one session from a raw completion.
pub fn record_from_response(
    session: &Session,
    candidates: &CandidateSet,
    raw: String,
    cfg: &MiningConfig,
) -> (IntentRecord, usize) {
    let cand_keys: HashSet<String> = candidates.titles.iter().map(|t| match_key(t)).collect();
    let mut intents = parse_intents(&raw);
    intents.truncate(cfg.max_intents);
    let hallucinated = intents.iter().filter(|i| !cand_keys.contains(&match_key(i))).count();
    if cfg.strict {
        intents.retain(|i| cand_keys.contains(&match_key(i)));
    }
    let (explicit, latent) = classify_intents(&intents, &session.titles, cfg.match_mode);
    (
        IntentRecord {
            session_id: session.session_id.clone(),
            raw_response: raw,
            explicit,
            latent,
        },
        hallucinated,
    )
}

type Slot = Mutex<Option<std::result::Result<(IntentRecord, usize), String>>>;

/// Mines every session that has a candidate set, with at most
/// `cfg.workers` requests in flight. Output order follows `sessions`.
pub fn mine_intents(
    sessions: &[Session],
    candidates: &[CandidateSet],
    client: &dyn LlmClient,
    cfg: &MiningConfig,
) -> Result<MiningOutput> {
    let by_id: HashMap<&str, &CandidateSet> = candidates.iter().map(|c| (c.session_id.as_str(), c)).collect();
    let next = AtomicUsize::new(0);
    let slots: Vec<Slot> =
        sessions.iter().map(|_| Mutex::new(None)).collect();
    let workers = cfg.workers.max(1).min(sessions.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(s) = sessions.get(i) else { break };
                let res = match by_id.get(s.session_id.as_str()) {
                    None => Err("no candidate set for session".to_string()),
                    Some(c) => build_prompts(&s.titles, &c.titles)
                        .and_then(|p| client.complete(&p))
                        .map(|raw| record_from_response(s, c, raw, cfg))
                        .map_err(|e| e.to_string()),
                };
                *slots[i].lock().expect("slot lock") = Some(res);
            });
        }
    });
    let mut out = MiningOutput::default();
    let st = &mut out.stats;
    st.sessions = sessions.len();
    for (s, slot) in sessions.iter().zip(slots) {
        match slot.into_inner().expect("slot lock").expect("every slot filled") {
            Ok((rec, halluc)) => {
                st.hallucinated += halluc;
                st.intents += rec.explicit.len() + rec.latent.len();
                st.explicit += rec.explicit.len();
                st.latent += rec.latent.len();
                st.empty += usize::from(rec.is_empty());
                *st.explicit_histogram.entry(rec.explicit.len()).or_default() += 1;
                *st.latent_histogram.entry(rec.latent.len()).or_default() += 1;
                out.records.push(rec);
            }
            Err(error) => {
                log::warn!("intent mining failed for {}: {error}", s.session_id);
                out.failures.push(MiningFailure {
                    session_id: s.session_id.clone(),
                    error,
                });
            }
        }
    }
    st.records = out.records.len();
    st.failed = out.failures.len();
    let parsed = st.hallucinated_denominator();
    st.hallucination_rate = if parsed == 0 { 0.0 } else { st.hallucinated as f64 / parsed as f64 };
    Ok(out)
}

impl MiningStats {
    fn hallucinated_denominator(&self) -> usize {
        // in strict mode dropped intents are not in `intents`
        self.intents.max(self.hallucinated)
    }
}

pub const INTENTS_FILE: &str = "intents.jsonl";
pub const FAILURES_FILE: &str = "intents.failures.jsonl";
pub const CACHE_FILE: &str = "llm_cache.jsonl";

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn prompt_layout() {
        let p = build_prompts(&s(&["Zia Bamboo", "Remington S1051"]), &s(&["Olay", "Max Factor", "Jane Carter"])).unwrap();
        let expected = "The order in which users click on items is as follows:\n1. Zia Bamboo;\n2. Remington S1051\n\nCandidate item set:\n1. Olay\n2. Max Factor\n3. Jane Carter\n";
        assert_eq!(p.input, expected);
        assert!(p.instruction.contains("separate them with semicolons"));
        assert!(p.instruction.contains("must be selected from the Candidate item set"));
        assert!(p.instruction.contains("should be appropriate"));
    }

    #[test]
    fn prompt_keeps_duplicates_and_rejects_empty() {
        let p = build_prompts(&s(&["A", "A"]), &s(&["B"])).unwrap();
        assert!(p.input.contains("1. A;\n2. A\n"));
        assert!(build_prompts(&s(&["A"]), &[]).is_err());
        assert!(build_prompts(&[], &s(&["A"])).is_err());
    }

    #[test]
    fn prompt_roundtrips_through_parser() {
        let clicks = s(&["3.5 Ounce tube", "Pack (of 12)"]);
        let cands = s(&["Olay Regenerist", "- dash item"]);
        let p = build_prompts(&clicks, &cands).unwrap();
        let (c, k) = parse_input_prompt(&p.input);
        assert_eq!(c, clicks);
        assert_eq!(k, cands);
    }

    #[test]
    fn parse_cases() {
        assert_eq!(parse_intents("A; B ;C"), s(&["A", "B", "C"]));
        assert_eq!(parse_intents("1. A; 2. B"), s(&["A", "B"]));
        assert_eq!(parse_intents("- A;\n- B;;"), s(&["A", "B"]));
        assert_eq!(parse_intents("3.5 Ounce"), s(&["3.5 Ounce"]));
        assert!(parse_intents("").is_empty());
        assert!(parse_intents(" ; ;").is_empty());
    }

    #[test]
    fn classify_cases() {
        let (e, l) = classify_intents(&s(&["A", "C"]), &s(&["A", "B"]), MatchMode::Exact);
        assert_eq!((e, l), (s(&["A"]), s(&["C"])));
        let (e, l) = classify_intents(&s(&["b", "A"]), &s(&["A", "B"]), MatchMode::Exact);
        assert_eq!(e, s(&["b", "A"]));
        assert!(l.is_empty());
        let (e, _) = classify_intents(&s(&["Olay"]), &s(&["Olay Regenerist"]), MatchMode::Substring);
        assert_eq!(e, s(&["Olay"]));
        let (e, _) = classify_intents(&s(&["Olay"]), &s(&["Olay Regenerist"]), MatchMode::Exact);
        assert!(e.is_empty());
    }

    #[test]
    fn mock_rule() {
        let clicks = s(&["red lipstick", "blue shampoo"]);
        let cands = s(&["green tea", "red nail polish", "yellow soap", "Shampoo bar"]);
        assert_eq!(MockLlm::answer(&clicks, &cands), "green tea; red nail polish; Shampoo bar");
        let p = build_prompts(&clicks, &cands).unwrap();
        assert_eq!(MockLlm.complete(&p).unwrap(), "green tea; red nail polish; Shampoo bar");
    }

    struct Counting(AtomicUsize);
    impl LlmClient for Counting {
        fn describe(&self) -> String {
            "count".into()
        }
        fn complete(&self, _: &PromptPair) -> Result<String> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok("A; B".into())
        }
    }

    #[test]
    fn cache_hit_skips_client() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let p = build_prompts(&s(&["x"]), &s(&["y"])).unwrap();
        {
            let c = CachedClient::with_file(Counting(AtomicUsize::new(0)), &path).unwrap();
            assert_eq!(c.complete(&p).unwrap(), "A; B");
            assert_eq!(c.complete(&p).unwrap(), "A; B");
            assert_eq!(c.inner().0.load(Ordering::SeqCst), 1);
            assert_eq!(c.hits.load(Ordering::SeqCst), 1);
        }
        let c = CachedClient::with_file(Counting(AtomicUsize::new(0)), &path).unwrap();
        assert_eq!(c.complete(&p).unwrap(), "A; B");
        assert_eq!(c.inner().0.load(Ordering::SeqCst), 0);
    }

    fn session(id: &str, titles: &[&str]) -> Session {
        Session {
            session_id: id.into(),
            items: (1..=titles.len() as u32).collect(),
            titles: s(titles),
            target: 1,
        }
    }

    fn cands(id: &str, titles: &[&str]) -> CandidateSet {
        CandidateSet {
            session_id: id.into(),
            item_ids: (1..=titles.len() as u32).collect(),
            titles: s(titles),
            scores: vec![0.0; titles.len()],
        }
    }

    #[test]
    fn mining_with_mock_partitions_and_grounds() {
        let sessions = vec![
            session("a", &["red lipstick", "blue shampoo"]),
            session("b", &["green tea"]),
            session("c", &["nothing"]),
        ];
        let cs = vec![
            cands("a", &["red lipstick", "Shampoo bar", "yellow soap", "green tea"]),
            cands("b", &["green tea", "black tea", "coffee"]),
        ];
        let out = mine_intents(&sessions, &cs, &MockLlm, &MiningConfig::default()).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].session_id, "c");
        let a = &out.records[0];
        assert_eq!(a.explicit, s(&["red lipstick"]));
        assert_eq!(a.latent, s(&["Shampoo bar", "yellow soap"]));
        assert_eq!(out.stats.hallucinated, 0);
        assert_eq!(out.stats.hallucination_rate, 0.0);
    }

    #[test]
    fn strict_mode_and_cap() {
        let sess = session("a", &["x1"]);
        let c = cands("a", &["x1", "x2"]);
        let raw = "x1; made up; x2; ".to_string();
        let cfg = MiningConfig::default();
        let (r, h) = record_from_response(&sess, &c, raw.clone(), &cfg);
        assert_eq!(h, 1);
        assert_eq!(r.latent, s(&["made up", "x2"]));
        let (r, _) = record_from_response(&sess, &c, raw, &MiningConfig { strict: true, ..cfg });
        assert_eq!(r.latent, s(&["x2"]));
        let many: String = (0..15).map(|i| format!("i{i};")).collect();
        let (r, _) = record_from_response(&sess, &c, many, &cfg);
        assert_eq!(r.latent.len(), 10);
    }
}
