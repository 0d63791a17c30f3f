//! Raw interaction ingest, filtering, sessionization and augmentation.
//!
//! Two corpus styles are supported. `Prefix` groups each user's events into
//! one click sequence and expands it into every (prefix, next item) pair
//! whose prefix is longer than one item. `Time` splits each user's stream
//! on inactivity gaps and a maximum session span, and uses the last click of
//! every session as its target.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub type ItemId = u32;

/// One raw click/rating row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionEvent {
    /// Grouping key. A user id at ingest; a session id once sessionized.
    pub user_id: String,
    pub item_id: ItemId,
    pub timestamp: u64,
    pub title: Option<String>,
}

/// Item id ↔ title table after contiguous reindexing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemCatalog {
    pub id_to_title: BTreeMap<ItemId, String>,
}

impl ItemCatalog {
    pub fn n_items(&self) -> usize {
        self.id_to_title.len()
    }

    pub fn title(&self, id: ItemId) -> Option<&str> {
        self.id_to_title.get(&id).map(String::as_str)
    }

    pub fn contains(&self, id: ItemId) -> bool {
        self.id_to_title.contains_key(&id)
    }

    pub fn titles_for(&self, items: &[ItemId]) -> Result<Vec<String>> {
        items
            .iter()
            .map(|&id| {
                self.title(id)
                    .map(str::to_string)
                    .ok_or(Error::UnknownItem(id))
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// A full ordered click sequence before target selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub session_id: String,
    pub items: Vec<ItemId>,
    pub titles: Vec<String>,
    pub timestamps: Vec<u64>,
}

impl Sequence {
    pub fn start(&self) -> u64 {
        self.timestamps.first().copied().unwrap_or(0)
    }

    /// Last click becomes the target; `None` when fewer than two clicks.
    pub fn last_item_session(&self) -> Option<Session> {
        let n = self.items.len();
        (n >= 2).then(|| Session {
            session_id: self.session_id.clone(),
            items: self.items[..n - 1].to_vec(),
            titles: self.titles[..n - 1].to_vec(),
            target: self.items[n - 1],
        })
    }

    fn to_events(&self) -> impl Iterator<Item = InteractionEvent> + '_ {
        self.items.iter().enumerate().map(move |(i, &item_id)| InteractionEvent {
            user_id: self.session_id.clone(),
            item_id,
            timestamp: self.timestamps[i],
            title: Some(self.titles[i].clone()).filter(|t| !t.is_empty()),
        })
    }
}

/// A training/inference unit: input clicks plus the next item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub items: Vec<ItemId>,
    pub titles: Vec<String>,
    pub target: ItemId,
}

/// Trim, collapse internal whitespace and apply Unicode NFC.
pub fn normalize_title(raw: &str) -> String {
    let nfc: String = raw.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterConfig {
    pub min_item_freq: usize,
    /// Sessions with this many interactions or fewer are dropped.
    pub min_session_len: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_item_freq: 5,
            min_session_len: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilteredCorpus {
    /// Surviving events with reindexed item ids, in input order.
    pub events: Vec<InteractionEvent>,
    pub catalog: ItemCatalog,
    /// `original_ids[new_id - 1]` is the raw id.
    pub original_ids: Vec<ItemId>,
}

/// Removes rare items and short sessions until both rules hold, then
/// reindexes surviving items to `1..=n` in order of first appearance.
///
/// Sessions are the groups of events sharing a `user_id`.
pub fn filter_corpus(events: &[InteractionEvent], cfg: FilterConfig) -> Result<FilteredCorpus> {
    if events.is_empty() {
        return Err(Error::Validation("no events to filter".into()));
    }
    let mut alive = vec![true; events.len()];
    loop {
        let mut freq: HashMap<ItemId, usize> = HashMap::new();
        for (e, _) in events.iter().zip(&alive).filter(|(_, &a)| a) {
            *freq.entry(e.item_id).or_default() += 1;
        }
        let mut changed = false;
        for (e, a) in events.iter().zip(alive.iter_mut()) {
            if *a && freq[&e.item_id] < cfg.min_item_freq {
                *a = false;
                changed = true;
            }
        }
        let mut len: HashMap<&str, usize> = HashMap::new();
        for (e, _) in events.iter().zip(&alive).filter(|(_, &a)| a) {
            *len.entry(e.user_id.as_str()).or_default() += 1;
        }
        for (e, a) in events.iter().zip(alive.iter_mut()) {
            if *a && len[e.user_id.as_str()] <= cfg.min_session_len {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut remap: HashMap<ItemId, ItemId> = HashMap::new();
    let mut original_ids = Vec::new();
    let mut titles: Vec<Option<String>> = Vec::new();
    let mut out = Vec::new();
    for (e, _) in events.iter().zip(&alive).filter(|(_, &a)| a) {
        let new_id = *remap.entry(e.item_id).or_insert_with(|| {
            original_ids.push(e.item_id);
            titles.push(None);
            original_ids.len() as ItemId
        });
        let slot = &mut titles[(new_id - 1) as usize];
        if slot.is_none() {
            *slot = e
                .title
                .as_deref()
                .map(normalize_title)
                .filter(|t| !t.is_empty());
        }
        out.push(InteractionEvent {
            item_id: new_id,
            ..e.clone()
        });
    }
    if out.is_empty() {
        return Err(Error::CorpusExhausted);
    }
    let id_to_title = titles
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let id = (i + 1) as ItemId;
            (id, t.unwrap_or_else(|| format!("item {}", original_ids[i])))
        })
        .collect();
    Ok(FilteredCorpus {
        events: out,
        catalog: ItemCatalog { id_to_title },
        original_ids,
    })
}

/// Groups events by `user_id` (first-appearance order), keeping event order
/// within each group. Titles are looked up in `catalog` when given.
pub fn group_sequences(events: &[InteractionEvent], catalog: Option<&ItemCatalog>) -> Vec<Sequence> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut seqs: Vec<Sequence> = Vec::new();
    for e in events {
        let i = *index.entry(e.user_id.as_str()).or_insert_with(|| {
            seqs.push(Sequence {
                session_id: e.user_id.clone(),
                items: Vec::new(),
                titles: Vec::new(),
                timestamps: Vec::new(),
            });
            seqs.len() - 1
        });
        let title = match catalog.and_then(|c| c.title(e.item_id)) {
            Some(t) => t.to_string(),
            None => e.title.as_deref().map(normalize_title).unwrap_or_default(),
        };
        let s = &mut seqs[i];
        s.items.push(e.item_id);
        s.titles.push(title);
        s.timestamps.push(e.timestamp);
    }
    seqs
}

/// Splits every user's events into sessions.
///
/// A session closes when the gap to the next event exceeds `gap_secs`, or
/// when the next event would put the session span over `max_span_secs`.
/// Events must already be sorted by timestamp within each user.
pub fn sessionize_by_time(
    events: &[InteractionEvent],
    gap_secs: u64,
    max_span_secs: u64,
) -> Result<Vec<Sequence>> {
    let mut out = Vec::new();
    for user in group_sequences(events, None) {
        if let Some(w) = user.timestamps.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::Validation(format!(
                "events for user {} are not sorted by timestamp (position {})",
                user.session_id,
                w + 1
            )));
        }
        let mut n_sessions = 0usize;
        let mut begin = 0usize;
        for i in 1..=user.items.len() {
            let split = i == user.items.len() || {
                let t = user.timestamps[i];
                t - user.timestamps[i - 1] > gap_secs || t - user.timestamps[begin] > max_span_secs
            };
            if split {
                out.push(Sequence {
                    session_id: format!("{}:{}", user.session_id, n_sessions),
                    items: user.items[begin..i].to_vec(),
                    titles: user.titles[begin..i].to_vec(),
                    timestamps: user.timestamps[begin..i].to_vec(),
                });
                n_sessions += 1;
                begin = i;
            }
        }
    }
    Ok(out)
}

/// Expands `[v1..vn]` into `([v1..vk], v{k+1})` for `k = 2..n-1`.
pub fn prefix_augment(seq: &Sequence) -> Vec<Session> {
    let n = seq.items.len();
    (2..n)
        .map(|k| Session {
            session_id: format!("{}#{}", seq.session_id, k),
            items: seq.items[..k].to_vec(),
            titles: seq.titles[..k].to_vec(),
            target: seq.items[k],
        })
        .collect()
}

/// Chronological split by session start; the last `test_fraction` of
/// sessions become the test set.
pub fn split_chronological(mut seqs: Vec<Sequence>, test_fraction: f64) -> (Vec<Sequence>, Vec<Sequence>) {
    seqs.sort_by_key(Sequence::start);
    let n = seqs.len();
    let n_test = if n >= 2 {
        ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let test = seqs.split_off(n - n_test);
    (seqs, test)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusMode {
    Prefix,
    Time,
}

impl std::str::FromStr for CorpusMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prefix" => Ok(CorpusMode::Prefix),
            "time" => Ok(CorpusMode::Time),
            other => Err(Error::Config(format!("unknown corpus mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub mode: CorpusMode,
    pub min_item_freq: usize,
    pub min_session_len: usize,
    pub gap_secs: u64,
    pub max_span_secs: u64,
    pub test_fraction: f64,
    /// Expand sequences into prefix pairs (defaults on for `Prefix`).
    pub augment: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            mode: CorpusMode::Prefix,
            min_item_freq: 5,
            min_session_len: 1,
            gap_secs: 300,
            max_span_secs: 24 * 3600,
            test_fraction: 0.1,
            augment: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub catalog: ItemCatalog,
    pub train: Vec<Session>,
    pub test: Vec<Session>,
}

/// Runs the full ingest pipeline over raw events.
pub fn preprocess(events: &[InteractionEvent], cfg: &PreprocessConfig) -> Result<PreparedCorpus> {
    let filter = FilterConfig {
        min_item_freq: cfg.min_item_freq,
        min_session_len: cfg.min_session_len,
    };
    let grouped: Vec<InteractionEvent> = match cfg.mode {
        CorpusMode::Prefix => {
            let mut users = group_sequences(events, None);
            for u in &mut users {
                sort_sequence(u);
            }
            users.iter().flat_map(Sequence::to_events).collect()
        }
        CorpusMode::Time => sessionize_by_time(events, cfg.gap_secs, cfg.max_span_secs)?
            .iter()
            .flat_map(Sequence::to_events)
            .collect(),
    };
    let filtered = filter_corpus(&grouped, filter)?;
    let seqs = group_sequences(&filtered.events, Some(&filtered.catalog));
    let (train, test) = split_chronological(seqs, cfg.test_fraction);
    let expand = |seqs: &[Sequence]| -> Vec<Session> {
        if cfg.augment {
            seqs.iter().flat_map(prefix_augment).collect()
        } else {
            seqs.iter().filter_map(Sequence::last_item_session).collect()
        }
    };
    let train = expand(&train);
    let test = expand(&test);
    if train.is_empty() {
        return Err(Error::CorpusExhausted);
    }
    Ok(PreparedCorpus {
        catalog: filtered.catalog,
        train,
        test,
    })
}

fn sort_sequence(s: &mut Sequence) {
    let mut order: Vec<usize> = (0..s.items.len()).collect();
    order.sort_by_key(|&i| s.timestamps[i]);
    s.items = order.iter().map(|&i| s.items[i]).collect();
    s.titles = order.iter().map(|&i| s.titles[i].clone()).collect();
    s.timestamps = order.iter().map(|&i| s.timestamps[i]).collect();
}

/// Reads `(user_id, item_id, timestamp[, title])` rows. Tab-separated when
/// the first line contains a tab, comma-separated otherwise. A header row
/// is skipped when its item_id column is not numeric.
pub fn read_events(path: &Path, metadata: Option<&Path>) -> Result<Vec<InteractionEvent>> {
    let titles = match metadata {
        Some(m) => read_metadata(m)?,
        None => HashMap::new(),
    };
    let mut rdr = delimited_reader(path)?;
    let mut events = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        if rec.len() < 3 {
            return Err(Error::Validation(format!(
                "{}: line {} has {} fields, expected at least 3",
                path.display(),
                line + 1,
                rec.len()
            )));
        }
        let Ok(item_id) = rec[1].trim().parse::<ItemId>() else {
            if line == 0 {
                continue;
            }
            return Err(Error::Validation(format!(
                "{}: line {}: bad item id {:?}",
                path.display(),
                line + 1,
                &rec[1]
            )));
        };
        if item_id == 0 {
            return Err(Error::Validation(format!("{}: line {}: item id must be ≥ 1", path.display(), line + 1)));
        }
        let timestamp = rec[2].trim().parse::<f64>().ok().filter(|t| *t >= 0.0).ok_or_else(|| {
            Error::Validation(format!("{}: line {}: bad timestamp {:?}", path.display(), line + 1, &rec[2]))
        })? as u64;
        let title = rec
            .get(3)
            .map(str::to_string)
            .or_else(|| titles.get(&item_id).cloned());
        events.push(InteractionEvent {
            user_id: rec[0].trim().to_string(),
            item_id,
            timestamp,
            title,
        });
    }
    Ok(events)
}

fn read_metadata(path: &Path) -> Result<HashMap<ItemId, String>> {
    let mut rdr = delimited_reader(path)?;
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        if let (Some(id), Some(title)) = (rec.get(0).and_then(|s| s.trim().parse().ok()), rec.get(1)) {
            out.insert(id, title.to_string());
        }
    }
    Ok(out)
}

fn delimited_reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = String::new();
    BufReader::new(&f)
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    let delim = if first.contains('\t') { b'\t' } else { b',' };
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(delim)
        .has_headers(false)
        .flexible(true)
        .from_reader(f))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub const TRAIN_FILE: &str = "sessions.train.jsonl";
pub const TEST_FILE: &str = "sessions.test.jsonl";
pub const CATALOG_FILE: &str = "catalog.json";

impl PreparedCorpus {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(TRAIN_FILE), &self.train)?;
        write_jsonl(&dir.join(TEST_FILE), &self.test)?;
        self.catalog.save(&dir.join(CATALOG_FILE))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(Self {
            catalog: ItemCatalog::load(&dir.join(CATALOG_FILE))?,
            train: read_jsonl(&dir.join(TRAIN_FILE))?,
            test: read_jsonl(&dir.join(TEST_FILE))?,
        })
    }
}
