//! End-to-end detection over a trace stream and the JSON drift report.

use std::io::Write;
use std::sync::mpsc::sync_channel;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::gradual::{GradualDetector, GradualDrift, Outcome};
use crate::log::Trace;
use crate::scalar::Scalar;
use crate::sudden::{DetectorConfig, DriftEvent, Interval, PValue, SuddenDetector, SuddenDrift};

pub const SCHEMA_VERSION: u32 = 1;

/// Everything a detection pass produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection<T> {
    /// Sudden drifts that were not absorbed into a gradual interval.
    pub sudden: Vec<SuddenDrift>,
    pub gradual: Vec<GradualDrift<T>>,
    /// Every sudden drift the first stage confirmed.
    pub raw_sudden: Vec<SuddenDrift>,
    pub p_series: Vec<PValue<T>>,
    pub traces: usize,
}

enum Message {
    Drift(DriftEvent),
    End(Interval),
}

/// Runs the sudden detector and, when `gradual_alpha` is set, the gradual
/// post-processor as a consumer thread fed through a bounded queue.
pub fn detect<T: Scalar>(
    traces: impl IntoIterator<Item = Trace>,
    cfg: &DetectorConfig<T>,
    gradual_alpha: Option<T>,
) -> Result<Detection<T>, ConfigError> {
    let mut detector = SuddenDetector::new(cfg.clone())?;
    let Some(alpha) = gradual_alpha else {
        for t in traces {
            detector.observe(t);
        }
        return Ok(Detection {
            sudden: detector.drifts().to_vec(),
            gradual: Vec::new(),
            raw_sudden: detector.drifts().to_vec(),
            p_series: detector.p_series().to_vec(),
            traces: detector.observed(),
        });
    };

    let (tx, rx) = sync_channel::<Message>(2);
    let outcomes = thread::scope(|scope| {
        let consumer = scope.spawn(move || {
            let mut gradual = GradualDetector::new(alpha);
            for msg in rx {
                match msg {
                    Message::Drift(e) => gradual.push_drift(e.drift, e.before),
                    Message::End(last) => return gradual.finish(last),
                }
            }
            unreachable!("producer always sends the final interval")
        });
        for t in traces {
            detector.observe(t);
            while let Some(event) = detector.pop_event() {
                tx.send(Message::Drift(event)).expect("consumer alive");
            }
        }
        tx.send(Message::End(detector.finish())).expect("consumer alive");
        consumer.join().expect("gradual consumer panicked")
    });

    let mut sudden = Vec::new();
    let mut gradual = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Sudden(d) => sudden.push(d),
            Outcome::Gradual(g) => gradual.push(g),
        }
    }
    Ok(Detection {
        sudden,
        gradual,
        raw_sudden: detector.drifts().to_vec(),
        p_series: detector.p_series().to_vec(),
        traces: detector.observed(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuddenTag {
    Sudden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradualTag {
    Gradual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuddenEntry {
    #[serde(rename = "type")]
    pub kind: SuddenTag,
    pub position: usize,
    pub confirmed_at: usize,
    pub delay: usize,
    pub window: usize,
    pub juxtaposition: usize,
}

impl From<&SuddenDrift> for SuddenEntry {
    fn from(d: &SuddenDrift) -> Self {
        SuddenEntry {
            kind: SuddenTag::Sudden,
            position: d.position,
            confirmed_at: d.confirmed_at,
            delay: d.delay,
            window: d.window,
            juxtaposition: d.juxtaposition,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GradualEntry<T> {
    #[serde(rename = "type")]
    pub kind: GradualTag,
    pub start: usize,
    pub end: usize,
    pub confirmed_at: usize,
    pub delay: usize,
    pub weight_before: T,
    pub weight_after: T,
    pub x: T,
    pub y: T,
    pub gof: T,
    pub critical: T,
    pub df: usize,
    pub p_value: T,
    pub pooled_mass: u64,
}

impl<T: Scalar> From<&GradualDrift<T>> for GradualEntry<T> {
    fn from(g: &GradualDrift<T>) -> Self {
        GradualEntry {
            kind: GradualTag::Gradual,
            start: g.start,
            end: g.end,
            confirmed_at: g.confirmed_at,
            delay: g.delay,
            weight_before: g.weight_before,
            weight_after: g.weight_after,
            x: g.x,
            y: g.y,
            gof: g.gof,
            critical: g.critical,
            df: g.df,
            p_value: g.p_value,
            pooled_mass: g.pooled_mass,
        }
    }
}

/// Settings a report was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ConfigEcho<T> {
    pub detector: DetectorConfig<T>,
    pub gradual: bool,
    pub gradual_alpha: Option<T>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct DriftReport<T> {
    pub schema_version: u32,
    pub log_id: String,
    pub traces: usize,
    pub sudden: Vec<SuddenEntry>,
    pub gradual: Vec<GradualEntry<T>>,
    pub p_series_path: Option<String>,
    pub config: ConfigEcho<T>,
}

impl<T: Scalar> DriftReport<T> {
    pub fn new(log_id: impl Into<String>, detection: &Detection<T>, config: ConfigEcho<T>) -> Self {
        DriftReport {
            schema_version: SCHEMA_VERSION,
            log_id: log_id.into(),
            traces: detection.traces,
            sudden: detection.sudden.iter().map(SuddenEntry::from).collect(),
            gradual: detection.gradual.iter().map(GradualEntry::from).collect(),
            p_series_path: None,
            config,
        }
    }
}

/// Writes `stream_index,p_value,window_size` rows.
pub fn write_p_series<T: Scalar, W: Write>(series: &[PValue<T>], sink: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for p in series {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
