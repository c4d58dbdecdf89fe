//! Event streams: data model, train/test split and CSV/JSON I/O.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SocialGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Endo,
    Exo,
}

impl Label {
    pub fn token(self) -> &'static str {
        match self {
            Label::Endo => "endo",
            Label::Exo => "exo",
        }
    }

    pub fn parse(s: &str) -> Option<Option<Label>> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" => Some(None),
            "endo" | "endogenous" => Some(Some(Label::Endo)),
            "exo" | "exogenous" => Some(Some(Label::Exo)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub user: usize,
    pub sentiment: f64,
    pub time: f64,
    /// Ground truth, only present for simulated data.
    pub label: Option<Label>,
}

impl Event {
    pub fn new(user: usize, sentiment: f64, time: f64) -> Self {
        Self { user, sentiment, time, label: None }
    }

    pub fn labeled(user: usize, sentiment: f64, time: f64, label: Label) -> Self {
        Self { user, sentiment, time, label: Some(label) }
    }
}

/// Time-ordered events observed on `[0, horizon)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    horizon: f64,
}

/// Smallest representable horizon strictly after `t`.
pub fn horizon_after(t: f64) -> f64 {
    t.next_up()
}

impl EventStream {
    /// Sorts stably by time and checks every time is finite, non-negative
    /// and below `horizon`.
    pub fn new(mut events: Vec<Event>, horizon: f64) -> Result<Self> {
        if !horizon.is_finite() || horizon < 0.0 {
            return Err(Error::Input(format!("invalid horizon {horizon}")));
        }
        for e in &events {
            if !e.time.is_finite() || e.time < 0.0 {
                return Err(Error::Input(format!("invalid event time {}", e.time)));
            }
            if !e.sentiment.is_finite() {
                return Err(Error::Input(format!("invalid sentiment {}", e.sentiment)));
            }
            if e.time >= horizon {
                return Err(Error::Input(format!(
                    "event time {} not below horizon {horizon}",
                    e.time
                )));
            }
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(Self { events, horizon })
    }

    /// Stream whose horizon sits just after the last event.
    pub fn from_events(events: Vec<Event>) -> Result<Self> {
        let last = events.iter().map(|e| e.time).fold(0.0, f64::max);
        Self::new(events, horizon_after(last))
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn max_user(&self) -> Option<usize> {
        self.events.iter().map(|e| e.user).max()
    }

    /// Checks every poster exists in `graph`.
    pub fn check_users(&self, graph: &SocialGraph) -> Result<()> {
        match self.max_user() {
            Some(u) if u >= graph.n_users() => Err(Error::Input(format!(
                "event user {u} not in graph with {} users",
                graph.n_users()
            ))),
            _ => Ok(()),
        }
    }

    /// Events strictly before `t`, keeping `t` as the horizon.
    pub fn truncated_before(&self, t: f64) -> EventStream {
        let end = self.events.partition_point(|e| e.time < t);
        EventStream { events: self.events[..end].to_vec(), horizon: t.max(0.0) }
    }

    pub fn with_events(&self, events: Vec<Event>) -> Result<EventStream> {
        EventStream::new(events, self.horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.9 }
    }
}

/// First `floor(f * n)` events train, the rest test. The training horizon is
/// the first test time (nudged past the last training event on ties).
pub fn split(stream: &EventStream, spec: SplitSpec) -> Result<(EventStream, EventStream)> {
    if stream.is_empty() {
        return Err(Error::Input("cannot split an empty stream".into()));
    }
    let f = spec.train_fraction;
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::Parameter(format!("train_fraction {f} outside (0,1]")));
    }
    let n = stream.len();
    let n_train = ((f * n as f64) + 1e-9).floor() as usize;
    let n_train = n_train.min(n);
    let (tr, te) = stream.events.split_at(n_train);
    let train_horizon = match (te.first(), tr.last()) {
        (Some(first_test), Some(last_train)) => {
            first_test.time.max(horizon_after(last_train.time))
        }
        (Some(first_test), None) => first_test.time,
        (None, _) => stream.horizon,
    };
    let train = EventStream { events: tr.to_vec(), horizon: train_horizon };
    let test = EventStream { events: te.to_vec(), horizon: stream.horizon };
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub horizon: f64,
    pub n_events: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_iso8601: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_config: Option<serde_json::Value>,
}

/// `events.csv` -> `events.meta.json`
pub fn sidecar_path(events_path: &Path) -> PathBuf {
    events_path.with_extension("meta.json")
}

pub fn save_events(stream: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    save_events_with_meta(stream, path, None)
}

pub fn save_events_with_meta(
    stream: &EventStream,
    path: impl AsRef<Path>,
    sim_config: Option<serde_json::Value>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["user_id", "sentiment", "timestamp", "label"])
        .map_err(|e| csv_err(path, e))?;
    for e in &stream.events {
        w.write_record([
            e.user.to_string(),
            format!("{:?}", e.sentiment),
            format!("{:?}", e.time),
            e.label.map(|l| l.token().to_string()).unwrap_or_default(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = StreamMeta {
        horizon: stream.horizon,
        n_events: stream.len(),
        origin_iso8601: None,
        sim_config,
    };
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::format(path, line, e.to_string())
}

/// Reads `user_id,sentiment,timestamp[,label]`. The horizon comes from the
/// sidecar JSON when present, otherwise just past the last event.
pub fn load_events(path: impl AsRef<Path>) -> Result<EventStream> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                _ => unreachable!(),
            },
            _ => csv_err(path, e),
        })?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < 3 || names[..3] != ["user_id", "sentiment", "timestamp"] {
        return Err(Error::format(path, 1, "expected header `user_id,sentiment,timestamp[,label]`"));
    }
    let mut events = Vec::new();
    let mut warned = false;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() < 3 || rec.len() > 4 {
            return Err(Error::format(path, line, format!("expected 3 or 4 fields, got {}", rec.len())));
        }
        let user = rec[0]
            .parse::<usize>()
            .map_err(|_| Error::format(path, line, format!("invalid user id {:?}", &rec[0])))?;
        let sentiment = parse_finite(&rec[1])
            .ok_or_else(|| Error::format(path, line, format!("invalid sentiment {:?}", &rec[1])))?;
        let time = parse_finite(&rec[2])
            .filter(|t| *t >= 0.0)
            .ok_or_else(|| Error::format(path, line, format!("invalid timestamp {:?}", &rec[2])))?;
        let label = match rec.get(3) {
            Some(tok) => Label::parse(tok)
                .ok_or_else(|| Error::format(path, line, format!("unknown label {tok:?}")))?,
            None => None,
        };
        if sentiment.abs() > 1.0 && label.is_none() && !warned {
            log::warn!("{}: sentiment {sentiment} outside [-1,1] (line {line})", path.display());
            warned = true;
        }
        events.push(Event { user, sentiment, time, label });
    }
    let side = sidecar_path(path);
    let horizon = if side.exists() {
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: StreamMeta = serde_json::from_str(&text)
            .map_err(|e| Error::format(&side, e.line() as u64, e.to_string()))?;
        meta.horizon
    } else {
        horizon_after(events.iter().map(|e| e.time).fold(0.0, f64::max))
    };
    EventStream::new(events, horizon)
}

fn parse_finite(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamStats {
    pub n_users: usize,
    pub n_edges: usize,
    pub n_events: usize,
    pub mean_sentiment: f64,
    /// Population standard deviation.
    pub sentiment_std: f64,
}

pub fn summarize(stream: &EventStream, graph: &SocialGraph) -> StreamStats {
    let n = stream.len();
    let (mean, std) = if n == 0 {
        (0.0, 0.0)
    } else {
        // Welford
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (k, e) in stream.events.iter().enumerate() {
            let d = e.sentiment - mean;
            mean += d / (k + 1) as f64;
            m2 += d * (e.sentiment - mean);
        }
        (mean, (m2 / n as f64).max(0.0).sqrt())
    };
    StreamStats {
        n_users: graph.n_users(),
        n_edges: graph.n_edges(),
        n_events: n,
        mean_sentiment: mean,
        sentiment_std: std,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(n: usize) -> EventStream {
        EventStream::from_events((0..n).map(|i| Event::new(i % 3, 0.1, i as f64)).collect()).unwrap()
    }

    #[test]
    fn split_counts() {
        let (tr, te) = split(&stream(10), SplitSpec { train_fraction: 0.9 }).unwrap();
        assert_eq!((tr.len(), te.len()), (9, 1));
        assert_eq!(tr.horizon(), 9.0);
        let (tr, te) = split(&stream(10), SplitSpec { train_fraction: 1.0 }).unwrap();
        assert_eq!((tr.len(), te.len()), (10, 0));
        let (tr, te) = split(&stream(9409), SplitSpec::default()).unwrap();
        assert_eq!((tr.len(), te.len()), (8468, 941));
    }

    #[test]
    fn split_rejects_empty() {
        let empty = EventStream::new(vec![], 1.0).unwrap();
        assert!(matches!(split(&empty, SplitSpec::default()), Err(Error::Input(_))));
    }

    #[test]
    fn split_with_tied_boundary_keeps_invariant() {
        let ev = vec![Event::new(0, 0.0, 1.0), Event::new(0, 0.0, 1.0)];
        let s = EventStream::from_events(ev).unwrap();
        let (tr, te) = split(&s, SplitSpec { train_fraction: 0.5 }).unwrap();
        assert!(tr.events().iter().all(|e| e.time < tr.horizon()));
        assert_eq!(te.len(), 1);
    }

    #[test]
    fn sort_is_stable() {
        let ev = vec![
            Event::new(2, 0.3, 1.0),
            Event::new(0, 0.1, 0.5),
            Event::new(1, 0.2, 1.0),
        ];
        let s = EventStream::from_events(ev).unwrap();
        let users: Vec<usize> = s.events().iter().map(|e| e.user).collect();
        assert_eq!(users, vec![0, 2, 1]);
    }

    #[test]
    fn constant_stream_has_zero_std() {
        let g = SocialGraph::empty(3);
        let st = summarize(&stream(20), &g);
        assert_eq!(st.sentiment_std, 0.0);
        assert!((st.mean_sentiment - 0.1).abs() < 1e-15);
        assert_eq!(st.n_events, 20);
    }
}
