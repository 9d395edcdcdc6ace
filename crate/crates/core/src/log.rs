//! Event log ingestion: XES and CSV readers, writers, and completion-order
//! replay of traces.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDateTime};
use quick_xml::events::{BytesStart, Event as XmlEvent};
use quick_xml::{Reader, XmlVersion};
use serde::{Deserialize, Serialize};

use crate::error::LogError;

/// Milliseconds since the Unix epoch.
pub type Millis = i64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub label: String,
    pub timestamp: Option<Millis>,
}

impl Event {
    pub fn new(label: impl Into<String>) -> Self {
        Event {
            label: label.into(),
            timestamp: None,
        }
    }

    pub fn at(label: impl Into<String>, timestamp: Millis) -> Self {
        Event {
            label: label.into(),
            timestamp: Some(timestamp),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub case_id: String,
    pub events: Vec<Event>,
}

impl Trace {
    pub fn new(case_id: impl Into<String>, events: Vec<Event>) -> Self {
        Trace {
            case_id: case_id.into(),
            events,
        }
    }

    /// Untimed trace from a label sequence.
    pub fn from_labels<S: AsRef<str>>(case_id: impl Into<String>, labels: &[S]) -> Self {
        Trace::new(
            case_id,
            labels.iter().map(|l| Event::new(l.as_ref())).collect(),
        )
    }

    /// Timestamp of the last event, if it carries one.
    pub fn completion_time(&self) -> Option<Millis> {
        self.events.last().and_then(|e| e.timestamp)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.events.iter().map(|e| e.label.as_str())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    pub traces: Vec<Trace>,
}

impl EventLog {
    pub fn new(traces: Vec<Trace>) -> Self {
        EventLog { traces }
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn label_alphabet(&self) -> BTreeSet<String> {
        self.traces
            .iter()
            .flat_map(|t| t.events.iter().map(|e| e.label.clone()))
            .collect()
    }
}

/// Parses an ISO-8601 date-time or integer epoch milliseconds.
pub fn parse_timestamp(raw: &str) -> Option<Millis> {
    let raw = raw.trim();
    if let Ok(ms) = raw.parse::<i64>() {
        return Some(ms);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp_millis());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt.and_utc().timestamp_millis());
        }
    }
    None
}

fn format_timestamp(ms: Millis) -> String {
    DateTime::from_timestamp_millis(ms)
        .map(|dt| dt.format("%Y-%m-%dT%H:%M:%S%.3f+00:00").to_string())
        .unwrap_or_else(|| ms.to_string())
}

fn line_col(source: &[u8], offset: usize) -> (usize, usize) {
    let offset = offset.min(source.len());
    let before = &source[..offset];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let column = offset - before.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

#[derive(Default)]
struct PendingTrace {
    case_id: Option<String>,
    events: Vec<Event>,
}

#[derive(Default)]
struct PendingEvent {
    label: Option<String>,
    timestamp: Option<Millis>,
}

/// Reads the XES subset: `trace` elements holding `event` elements with a
/// `concept:name` string attribute and an optional `time:timestamp` date.
/// Document order is kept for traces and for events within a trace.
pub fn parse_xes<R: Read>(mut source: R) -> Result<EventLog, LogError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut reader = Reader::from_reader(bytes.as_slice());
    reader.config_mut().check_end_names = true;

    let xml_err = |reader: &Reader<&[u8]>, message: String| {
        let (line, column) = line_col(&bytes, reader.error_position() as usize);
        LogError::Xml {
            line,
            column,
            message,
        }
    };

    let mut traces = Vec::new();
    let mut trace: Option<PendingTrace> = None;
    let mut event: Option<PendingEvent> = None;
    let mut depth_in_event = 0usize;

    loop {
        let ev = reader
            .read_event()
            .map_err(|e| xml_err(&reader, e.to_string()))?;
        match ev {
            XmlEvent::Start(ref e) | XmlEvent::Empty(ref e) => {
                let is_empty = matches!(ev, XmlEvent::Empty(_));
                match e.local_name().into_inner() {
                    "trace" if trace.is_none() => {
                        trace = Some(PendingTrace::default());
                        if is_empty {
                            close_trace(&mut trace, &mut traces)?;
                        }
                    }
                    "event" if trace.is_some() && event.is_none() => {
                        event = Some(PendingEvent::default());
                        depth_in_event = 0;
                        if is_empty {
                            close_event(&mut trace, &mut event, traces.len())?;
                        }
                    }
                    _ => {
                        // attributes nested deeper than the event/trace level are ignored
                        if let Some(ev) = event.as_mut() {
                            if depth_in_event == 0 {
                                read_event_attribute(e, ev)
                                    .map_err(|m| xml_err(&reader, m))?;
                            }
                            if !is_empty {
                                depth_in_event += 1;
                            }
                        } else if let Some(tr) = trace.as_mut() {
                            if tr.case_id.is_none() && attr_key(e).as_deref() == Some("concept:name")
                            {
                                tr.case_id = attr_value(e, "value").map_err(|m| xml_err(&reader, m))?;
                            }
                        }
                    }
                }
            }
            XmlEvent::End(ref e) => match e.local_name().into_inner() {
                "event" if event.is_some() && depth_in_event == 0 => {
                    close_event(&mut trace, &mut event, traces.len())?;
                }
                "trace" if trace.is_some() && event.is_none() => {
                    close_trace(&mut trace, &mut traces)?;
                }
                _ => {
                    if event.is_some() && depth_in_event > 0 {
                        depth_in_event -= 1;
                    }
                }
            },
            XmlEvent::Eof => break,
            _ => {}
        }
    }
    if trace.is_some() {
        let (line, column) = line_col(&bytes, bytes.len());
        return Err(LogError::Xml {
            line,
            column,
            message: "unterminated trace element".into(),
        });
    }
    Ok(EventLog::new(traces))
}

fn attr_key(e: &BytesStart<'_>) -> Option<String> {
    attr_value(e, "key").ok().flatten()
}

fn attr_value(e: &BytesStart<'_>, name: &str) -> Result<Option<String>, String> {
    for attr in e.attributes() {
        let attr = attr.map_err(|err| err.to_string())?;
        if attr.key.into_inner() == name {
            let v = attr
                .normalized_value(XmlVersion::Implicit1_0)
                .map_err(|err| err.to_string())?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

fn read_event_attribute(e: &BytesStart<'_>, ev: &mut PendingEvent) -> Result<(), String> {
    match (e.local_name().into_inner(), attr_key(e).as_deref()) {
        ("string", Some("concept:name")) => ev.label = attr_value(e, "value")?,
        ("date", Some("time:timestamp")) => {
            if let Some(raw) = attr_value(e, "value")? {
                ev.timestamp = Some(
                    parse_timestamp(&raw).ok_or_else(|| format!("invalid timestamp {raw:?}"))?,
                );
            }
        }
        _ => {}
    }
    Ok(())
}

fn close_event(
    trace: &mut Option<PendingTrace>,
    event: &mut Option<PendingEvent>,
    trace_index: usize,
) -> Result<(), LogError> {
    let ev = event.take().expect("open event");
    let tr = trace.as_mut().expect("event inside trace");
    let label = ev.label.ok_or(LogError::MissingName {
        trace: trace_index,
        event: tr.events.len(),
    })?;
    if label.is_empty() {
        return Err(LogError::EmptyLabel { trace: trace_index });
    }
    tr.events.push(Event {
        label,
        timestamp: ev.timestamp,
    });
    Ok(())
}

fn close_trace(trace: &mut Option<PendingTrace>, traces: &mut Vec<Trace>) -> Result<(), LogError> {
    let tr = trace.take().expect("open trace");
    // traces without events carry no behaviour
    if !tr.events.is_empty() {
        let case_id = tr.case_id.unwrap_or_else(|| traces.len().to_string());
        traces.push(Trace::new(case_id, tr.events));
    }
    Ok(())
}

/// Reads a `case,activity[,timestamp]` CSV. Rows of a case form one trace,
/// sorted by timestamp (stable on ties); traces appear in order of first row.
pub fn parse_csv<R: Read>(source: R) -> Result<EventLog, LogError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| LogError::Header(e.to_string()))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
    };
    let case_col = find("case").ok_or_else(|| LogError::Header("missing column `case`".into()))?;
    let act_col =
        find("activity").ok_or_else(|| LogError::Header("missing column `activity`".into()))?;
    let ts_col = find("timestamp");

    let mut order: Vec<String> = Vec::new();
    let mut cases: HashMap<String, Vec<Event>> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        // header is row 1
        let row = i + 2;
        let record = record.map_err(|e| LogError::Row {
            row,
            message: e.to_string(),
        })?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let case = field(case_col).to_string();
        let label = field(act_col).to_string();
        if label.is_empty() {
            return Err(LogError::Row {
                row,
                message: "empty activity".into(),
            });
        }
        let timestamp = match ts_col.map(field) {
            None | Some("") => None,
            Some(raw) => Some(parse_timestamp(raw).ok_or_else(|| LogError::Row {
                row,
                message: format!("unparseable timestamp {raw:?}"),
            })?),
        };
        let events = cases.entry(case.clone()).or_insert_with(|| {
            order.push(case);
            Vec::new()
        });
        events.push(Event { label, timestamp });
    }

    let traces = order
        .into_iter()
        .map(|case| {
            let mut events = cases.remove(&case).unwrap_or_default();
            if events.iter().all(|e| e.timestamp.is_some()) {
                events.sort_by_key(|e| e.timestamp);
            }
            Trace::new(case, events)
        })
        .collect();
    Ok(EventLog::new(traces))
}

/// Writes the log as `case,activity,timestamp` rows.
pub fn write_csv<W: Write>(log: &EventLog, sink: W) -> Result<(), LogError> {
    let mut writer = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| LogError::Io(std::io::Error::other(e));
    writer
        .write_record(["case", "activity", "timestamp"])
        .map_err(io)?;
    for trace in &log.traces {
        for ev in &trace.events {
            let ts = ev.timestamp.map(|t| t.to_string()).unwrap_or_default();
            writer
                .write_record([trace.case_id.as_str(), ev.label.as_str(), ts.as_str()])
                .map_err(io)?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Writes the log as a minimal XES document readable by [`parse_xes`].
pub fn write_xes<W: Write>(log: &EventLog, mut sink: W) -> Result<(), LogError> {
    use quick_xml::escape::escape;
    writeln!(sink, r#"<?xml version="1.0" encoding="UTF-8"?>"#)?;
    writeln!(sink, r#"<log xes.version="1.0" xes.features="">"#)?;
    for trace in &log.traces {
        writeln!(sink, "  <trace>")?;
        writeln!(
            sink,
            r#"    <string key="concept:name" value="{}"/>"#,
            escape(trace.case_id.as_str())
        )?;
        for ev in &trace.events {
            writeln!(sink, "    <event>")?;
            writeln!(
                sink,
                r#"      <string key="concept:name" value="{}"/>"#,
                escape(ev.label.as_str())
            )?;
            if let Some(ts) = ev.timestamp {
                writeln!(
                    sink,
                    r#"      <date key="time:timestamp" value="{}"/>"#,
                    format_timestamp(ts)
                )?;
            }
            writeln!(sink, "    </event>")?;
        }
        writeln!(sink, "  </trace>")?;
    }
    writeln!(sink, "</log>")?;
    Ok(())
}

/// Replays traces in completion order.
///
/// Timestamped traces are stably sorted among the positions they occupy;
/// traces without a completion time stay where they are.
pub fn stream_traces(log: &EventLog) -> Vec<Trace> {
    let mut out = log.traces.clone();
    let slots: Vec<usize> = (0..out.len())
        .filter(|&i| out[i].completion_time().is_some())
        .collect();
    let mut timed: Vec<Trace> = slots.iter().map(|&i| out[i].clone()).collect();
    timed.sort_by_key(|t| t.completion_time());
    for (slot, trace) in slots.into_iter().zip(timed) {
        out[slot] = trace;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(t: &Trace) -> Vec<&str> {
        t.labels().collect()
    }

    #[test]
    fn xes_empty_document() {
        let log = parse_xes(r#"<?xml version="1.0"?><log></log>"#.as_bytes()).unwrap();
        assert!(log.is_empty());
    }

    #[test]
    fn xes_keeps_document_order() {
        let doc = r#"<log>
          <trace><string key="concept:name" value="c1"/>
            <event><string key="concept:name" value="B"/><date key="time:timestamp" value="1970-01-01T00:00:00.010+00:00"/></event>
            <event><string key="concept:name" value="A"/><date key="time:timestamp" value="1970-01-01T00:00:00.005+00:00"/></event>
          </trace>
          <trace>
            <event><string key="concept:name" value="A"/><string key="org:resource" value="bob"/></event>
            <event><string key="lifecycle:transition" value="complete"/><string key="concept:name" value="B"/></event>
          </trace>
        </log>"#;
        let log = parse_xes(doc.as_bytes()).unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(log.traces[0].case_id, "c1");
        assert_eq!(labels(&log.traces[0]), ["B", "A"]);
        assert_eq!(log.traces[0].events[0].timestamp, Some(10));
        assert_eq!(labels(&log.traces[1]), ["A", "B"]);
    }

    #[test]
    fn xes_missing_name_reports_trace_index() {
        let doc = r#"<log><trace><event><string key="concept:name" value="A"/></event></trace>
            <trace><event><string key="x" value="A"/></event></trace></log>"#;
        match parse_xes(doc.as_bytes()) {
            Err(LogError::MissingName { trace, event }) => {
                assert_eq!((trace, event), (1, 0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn xes_malformed_reports_position() {
        let doc = "<log>\n<trace>\n<event></trace>\n</log>";
        match parse_xes(doc.as_bytes()) {
            Err(LogError::Xml { line, .. }) => assert!(line >= 3, "line {line}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_groups_and_sorts() {
        let log = parse_csv("case,activity,timestamp\nc1,A,1\nc1,B,2\nc2,A,3\n".as_bytes()).unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(labels(&log.traces[0]), ["A", "B"]);
        assert_eq!(labels(&log.traces[1]), ["A"]);
        assert_eq!(log.traces[0].completion_time(), Some(2));

        let log = parse_csv("case,activity,timestamp\nc1,B,2\nc1,A,1\n".as_bytes()).unwrap();
        assert_eq!(labels(&log.traces[0]), ["A", "B"]);
    }

    #[test]
    fn csv_header_only_and_optional_timestamp() {
        assert!(parse_csv("case,activity,timestamp\n".as_bytes())
            .unwrap()
            .is_empty());
        let log = parse_csv("activity,case\nX,1\nY,1\n".as_bytes()).unwrap();
        assert_eq!(labels(&log.traces[0]), ["X", "Y"]);
        assert_eq!(log.traces[0].completion_time(), None);
    }

    #[test]
    fn csv_iso_timestamps() {
        let log = parse_csv(
            "case,activity,timestamp\nc,B,2020-01-01T00:00:02Z\nc,A,2020-01-01T00:00:01.500+00:00\n"
                .as_bytes(),
        )
        .unwrap();
        assert_eq!(labels(&log.traces[0]), ["A", "B"]);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            parse_csv("case,timestamp\nc,1\n".as_bytes()),
            Err(LogError::Header(_))
        ));
        match parse_csv("case,activity,timestamp\nc,A,1\nc,B,yesterday\n".as_bytes()) {
            Err(LogError::Row { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stream_orders_by_completion() {
        let t = |id: &str, ts: i64| Trace::new(id, vec![Event::at("a", ts)]);
        let log = EventLog::new(vec![t("x", 30), t("y", 10), t("z", 20), t("w", 10)]);
        let ids: Vec<_> = stream_traces(&log).into_iter().map(|t| t.case_id).collect();
        assert_eq!(ids, ["y", "w", "z", "x"]);

        let untimed = EventLog::new(vec![
            Trace::from_labels("1", &["a"]),
            Trace::from_labels("2", &["b"]),
        ]);
        assert_eq!(stream_traces(&untimed), untimed.traces);
    }

    #[test]
    fn writers_roundtrip() {
        let log = EventLog::new(vec![
            Trace::new("c1", vec![Event::at("A & B", 1_000), Event::at("C", 2_000)]),
            Trace::new("c2", vec![Event::at("A", 3_000)]),
        ]);
        let mut buf = Vec::new();
        write_xes(&log, &mut buf).unwrap();
        assert_eq!(parse_xes(buf.as_slice()).unwrap(), log);
        let mut buf = Vec::new();
        write_csv(&log, &mut buf).unwrap();
        assert_eq!(parse_csv(buf.as_slice()).unwrap(), log);
    }
}
