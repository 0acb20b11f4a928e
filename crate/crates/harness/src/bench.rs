//! Editing-trace replay and size/latency metrics.
//!
//! Traces are one event per line, tab separated:
//! `offsetMs  kind  index  content`, where kind is `insert` (content is the
//! inserted text, with `\t`, `\n` and `\\` escaped) or `delete` (content is
//! the number of deleted characters).

use std::collections::HashMap;
use std::time::Instant;

use collab_kernel::runtime::{decode_batch, encode_batch, BATCH_MAGIC};
use collab_kernel::{CCounter, CText, CValueList, Document, Handle, MessageEnvelope, Mode, ReplicaId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sim::{Latency, NetConfig, SimNetwork};
use crate::HarnessError;

type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Edit {
    Insert(String),
    Delete(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub offset_ms: u64,
    pub index: usize,
    pub edit: Edit,
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match it.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            other => return Err(HarnessError::Protocol(format!("bad escape \\{other:?}"))),
        }
    }
    Ok(out)
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| HarnessError::Protocol(format!("trace line {}: {what}", n + 1));
        let cols: Vec<&str> = line.splitn(4, '\t').collect();
        let [offset, kind, index, content] = cols[..] else {
            return Err(bad("expected 4 tab-separated columns"));
        };
        let offset_ms = offset.parse().map_err(|_| bad("bad offset"))?;
        let index = index.parse().map_err(|_| bad("bad index"))?;
        let edit = match kind {
            "insert" => Edit::Insert(unescape(content)?),
            "delete" => Edit::Delete(content.parse().map_err(|_| bad("bad delete count"))?),
            _ => return Err(bad("kind must be insert or delete")),
        };
        out.push(TraceEvent { offset_ms, index, edit });
    }
    Ok(out)
}

pub fn format_trace(events: &[TraceEvent]) -> String {
    let mut s = String::new();
    for e in events {
        let (kind, content) = match &e.edit {
            Edit::Insert(t) => ("insert", escape(t)),
            Edit::Delete(n) => ("delete", n.to_string()),
        };
        s.push_str(&format!("{}\t{kind}\t{}\t{content}\n", e.offset_ms, e.index));
    }
    s
}

/// Milliseconds between keystrokes at six keystrokes per second.
pub const KEYSTROKE_MS: u64 = 167;

/// One author typing `chars` characters of prose front to back.
pub fn typing_trace(chars: usize, seed: u64) -> Vec<TraceEvent> {
    const WORDS: [&str; 12] =
        ["the", "dough", "rises", "while", "you", "knead", "flour", "and", "water", "gently", "until", "smooth"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::new();
    while text.len() < chars {
        text.push_str(WORDS.choose(&mut rng).expect("non-empty"));
        text.push(if rng.gen_bool(0.1) { '\n' } else { ' ' });
    }
    text.chars()
        .take(chars)
        .enumerate()
        .map(|(i, c)| TraceEvent { offset_ms: i as u64 * KEYSTROKE_MS, index: i, edit: Edit::Insert(c.to_string()) })
        .collect()
}

/// Converts the common `[[pos, deleteCount, insertText], ...]` edit format
/// (optionally wrapped as `{"edits": [...]}`). Cursor movements, when
/// present elsewhere in the source, are not represented.
pub fn convert_triples(json: &str) -> Result<Vec<TraceEvent>> {
    let v: serde_json::Value = serde_json::from_str(json).map_err(|e| HarnessError::Protocol(e.to_string()))?;
    let edits = v.get("edits").unwrap_or(&v);
    let edits: Vec<(usize, usize, Option<String>)> =
        serde_json::from_value(edits.clone()).map_err(|e| HarnessError::Protocol(format!("edit list: {e}")))?;
    let mut out = Vec::new();
    for (pos, del, ins) in edits {
        let t = out.len() as u64 * KEYSTROKE_MS;
        if del > 0 {
            out.push(TraceEvent { offset_ms: t, index: pos, edit: Edit::Delete(del) });
        }
        if let Some(ins) = ins.filter(|s| !s.is_empty()) {
            let t = out.len() as u64 * KEYSTROKE_MS;
            out.push(TraceEvent { offset_ms: t, index: pos, edit: Edit::Insert(ins) });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub replicas: usize,
    /// Sender-side batching window; `None` sends every envelope at once.
    pub batch_ms: Option<u64>,
    pub latency: Latency,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { replicas: 1, batch_ms: None, latency: Latency::Uniform(20, 80), seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchMetrics {
    pub events: usize,
    pub replicas: usize,
    pub ops_applied: u64,
    pub ops_per_sec: f64,
    pub frames: u64,
    pub envelopes: u64,
    pub mean_frame_bytes: f64,
    pub total_bytes: u64,
    pub latency_p50_ms: u64,
    pub latency_p95_ms: u64,
    pub latency_p99_ms: u64,
    pub latency_max_ms: u64,
    pub raw_text_bytes: usize,
    pub save_bytes: usize,
    pub save_ratio: f64,
    pub save_ms: f64,
    pub load_ms: f64,
    pub converged: bool,
}

fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

struct Replica {
    doc: Document,
    text: Handle<CText>,
}

fn text_replica(id: ReplicaId) -> Result<Replica> {
    let mut doc = Document::new(id, Mode::Full);
    let text = doc.register("text", CValueList::new)?;
    Ok(Replica { doc, text })
}

fn apply(r: &mut Replica, e: &TraceEvent) -> Result<()> {
    let len = r.doc.get(&r.text)?.len();
    let index = e.index.min(len);
    match &e.edit {
        Edit::Insert(s) => r.text.insert_str(&mut r.doc, index, s)?,
        Edit::Delete(n) => {
            let n = (*n).min(len - index);
            if n > 0 {
                r.text.delete(&mut r.doc, index, n)?;
            }
        }
    }
    Ok(())
}

/// Replays `events` on replica 0, broadcasting to the others.
pub fn run_bench(events: &[TraceEvent], cfg: &BenchConfig) -> Result<BenchMetrics> {
    if cfg.replicas == 0 {
        return Err(HarnessError::Config("at least one replica".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reps = (0..cfg.replicas).map(|_| text_replica(ReplicaId::random(&mut rng))).collect::<Result<Vec<_>>>()?;
    let net_cfg = NetConfig { latency: cfg.latency, ..NetConfig::default() };
    let mut net = SimNetwork::new(net_cfg, cfg.replicas, rng.gen());
    let mut op_time: HashMap<u64, u64> = HashMap::new();
    let mut latencies = Vec::new();
    let mut pending: Vec<MessageEnvelope> = Vec::new();
    let mut last_flush = 0u64;
    let (mut frames, mut envelopes, mut ops_applied) = (0u64, 0u64, 0u64);

    let deliver =
        |reps: &mut [Replica], d: crate::sim::Delivered, latencies: &mut Vec<u64>, op_time: &HashMap<u64, u64>| {
            let envs = if d.bytes.first() == Some(&BATCH_MAGIC) {
                decode_batch(&d.bytes)?
            } else {
                vec![MessageEnvelope::decode(&d.bytes)?]
            };
            let mut applied = 0;
            for env in envs {
                applied += reps[d.to].doc.receive(env.clone())?.len() as u64;
                latencies.push(d.time - op_time.get(&env.sender.counter).copied().unwrap_or(d.sent_at));
            }
            Ok::<_, HarnessError>(applied)
        };
    let mut flush = |net: &mut SimNetwork, pending: &mut Vec<MessageEnvelope>| -> Result<()> {
        if pending.is_empty() {
            return Ok(());
        }
        frames += 1;
        envelopes += pending.len() as u64;
        if pending.len() == 1 {
            net.broadcast(0, pending[0].encode());
        } else {
            net.broadcast(0, encode_batch(pending)?);
        }
        pending.clear();
        Ok(())
    };

    let start = Instant::now();
    for e in events {
        while let Some(d) = net.next_until(e.offset_ms) {
            ops_applied += deliver(&mut reps, d, &mut latencies, &op_time)?;
        }
        apply(&mut reps[0], e)?;
        let out = reps[0].doc.take_outbox();
        ops_applied += out.len() as u64;
        for env in out {
            op_time.insert(env.sender.counter, e.offset_ms);
            match cfg.batch_ms.filter(|&b| b > 0) {
                None => {
                    pending.push(env);
                    flush(&mut net, &mut pending)?;
                }
                Some(_) => pending.push(env),
            }
        }
        if let Some(b) = cfg.batch_ms.filter(|&b| b > 0) {
            if e.offset_ms >= last_flush + b {
                flush(&mut net, &mut pending)?;
                last_flush = e.offset_ms;
            }
        }
    }
    flush(&mut net, &mut pending)?;
    while let Some(d) = net.next_any() {
        ops_applied += deliver(&mut reps, d, &mut latencies, &op_time)?;
    }
    let wall = start.elapsed().as_secs_f64();

    let text = reps[0].doc.get(&reps[0].text)?.as_string();
    let mut converged = true;
    for r in &reps[1..] {
        converged &= r.doc.get(&r.text)?.as_string() == text;
    }

    let t = Instant::now();
    let save = reps[0].doc.save();
    let save_ms = t.elapsed().as_secs_f64() * 1e3;
    let mut fresh = text_replica(ReplicaId::random(&mut rng))?;
    let t = Instant::now();
    fresh.doc.load(&save)?;
    let load_ms = t.elapsed().as_secs_f64() * 1e3;
    converged &= fresh.doc.get(&fresh.text)?.as_string() == text;

    latencies.sort_unstable();
    let total_bytes = net.stats.bytes_sent;
    Ok(BenchMetrics {
        events: events.len(),
        replicas: cfg.replicas,
        ops_applied,
        ops_per_sec: if wall > 0.0 { ops_applied as f64 / wall } else { 0.0 },
        frames,
        envelopes,
        mean_frame_bytes: if net.stats.sent == 0 { 0.0 } else { total_bytes as f64 / net.stats.sent as f64 },
        total_bytes,
        latency_p50_ms: percentile(&latencies, 50.0),
        latency_p95_ms: percentile(&latencies, 95.0),
        latency_p99_ms: percentile(&latencies, 99.0),
        latency_max_ms: latencies.last().copied().unwrap_or(0),
        raw_text_bytes: text.len(),
        save_bytes: save.len(),
        save_ratio: if text.is_empty() { 0.0 } else { save.len() as f64 / text.len() as f64 },
        save_ms,
        load_ms,
        converged,
    })
}

/// Encoded size of a single counter increment from a fresh replica.
pub fn counter_envelope_bytes(seed: u64) -> Result<usize> {
    let id = ReplicaId::random(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut doc = Document::new(id, Mode::Full);
    let c = doc.register("counter", CCounter::new)?;
    c.add(&mut doc, 1)?;
    let env = doc.take_outbox().pop().ok_or_else(|| HarnessError::Protocol("no envelope".into()))?;
    Ok(env.encode().len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_round_trip() {
        let events = vec![
            TraceEvent { offset_ms: 0, index: 0, edit: Edit::Insert("a\tb\\c\n".into()) },
            TraceEvent { offset_ms: 5, index: 1, edit: Edit::Delete(2) },
        ];
        assert_eq!(parse_trace(&format_trace(&events)).unwrap(), events);
    }

    #[test]
    fn trace_errors() {
        assert!(parse_trace("0\tinsert\t0").is_err());
        assert!(parse_trace("0\tpaste\t0\tx").is_err());
        assert!(parse_trace("x\tinsert\t0\tx").is_err());
        assert!(parse_trace("# comment\n\n").unwrap().is_empty());
    }

    #[test]
    fn converts_triples() {
        let ev = convert_triples(r#"{"edits": [[0, 0, "ab"], [1, 1, ""], [1, 0, "x"]]}"#).unwrap();
        assert_eq!(ev.len(), 3);
        assert_eq!(ev[1].edit, Edit::Delete(1));
        let m = run_bench(&ev, &BenchConfig::default()).unwrap();
        assert_eq!(m.raw_text_bytes, 2);
    }

    #[test]
    fn typing_trace_shape() {
        let t = typing_trace(100, 1);
        assert_eq!(t.len(), 100);
        assert!(t.iter().enumerate().all(|(i, e)| e.index == i));
    }

    #[test]
    fn replicas_converge_and_batching_saves_bytes() {
        let trace = typing_trace(300, 2);
        let cfg = BenchConfig { replicas: 3, ..BenchConfig::default() };
        let plain = run_bench(&trace, &cfg).unwrap();
        let batched = run_bench(&trace, &BenchConfig { batch_ms: Some(1000), ..cfg }).unwrap();
        assert!(plain.converged && batched.converged);
        assert!(batched.total_bytes < plain.total_bytes);
        assert!(batched.frames < plain.frames);
        assert!(batched.latency_p50_ms >= plain.latency_p50_ms);
    }

    #[test]
    fn counter_envelope_is_small() {
        assert!(counter_envelope_bytes(0).unwrap() <= 128);
    }
}
