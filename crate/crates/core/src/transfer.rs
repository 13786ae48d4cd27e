//! Out-of-vocabulary rates when a source vocabulary is applied to another
//! dataset.
//!
//! Counting is per event, stratified by the event's attribute kind. Under
//! joint encoding an event is OOV when its fused token is unknown; under
//! factorized encoding only the code token decides, since attribute tokens
//! come from the shared set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::events::{Attribute, Dataset};
use crate::tokenizer::{encode_event, expand_workflow, EventEncoding, TokenizerConfig};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StratumCounts {
    pub total_events: u64,
    pub oov_events: u64,
}

impl StratumCounts {
    pub fn rate(&self) -> f64 {
        if self.total_events == 0 {
            0.0
        } else {
            self.oov_events as f64 / self.total_events as f64
        }
    }

    fn add(&mut self, other: StratumCounts) {
        self.total_events += other.total_events;
        self.oov_events += other.oov_events;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OovReport {
    pub code_only: StratumCounts,
    pub numeric: StratumCounts,
    pub categorical_text: StratumCounts,
}

impl OovReport {
    pub fn overall(&self) -> StratumCounts {
        let mut all = StratumCounts::default();
        all.add(self.code_only);
        all.add(self.numeric);
        all.add(self.categorical_text);
        all
    }

    fn merge(mut self, other: OovReport) -> OovReport {
        self.code_only.add(other.code_only);
        self.numeric.add(other.numeric);
        self.categorical_text.add(other.categorical_text);
        self
    }
}

#[derive(Serialize)]
struct StratumJson {
    total_events: u64,
    oov_events: u64,
    rate: f64,
}

impl From<StratumCounts> for StratumJson {
    fn from(c: StratumCounts) -> Self {
        StratumJson {
            total_events: c.total_events,
            oov_events: c.oov_events,
            rate: c.rate(),
        }
    }
}

impl Serialize for OovReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("OovReport", 4)?;
        st.serialize_field("code_only", &StratumJson::from(self.code_only))?;
        st.serialize_field("numeric", &StratumJson::from(self.numeric))?;
        st.serialize_field("categorical_text", &StratumJson::from(self.categorical_text))?;
        st.serialize_field("overall", &StratumJson::from(self.overall()))?;
        st.end()
    }
}

pub fn oov_report(target: &Dataset, vocab: &Vocabulary, config: &TokenizerConfig) -> Result<OovReport> {
    vocab.check_compatible(config)?;
    let timelines: Vec<_> = target.timelines().collect();
    let report = timelines
        .par_iter()
        .map(|tl| {
            let mut r = OovReport::default();
            for ev in &expand_workflow(tl, config.workflow).timeline.events {
                let tokens = encode_event(ev, config, vocab);
                let oov = match config.event_encoding {
                    EventEncoding::Joint => tokens.iter().any(|t| vocab.id(t).is_none()),
                    EventEncoding::Factorized => vocab.id(&tokens[0]).is_none(),
                };
                let stratum = match ev.attribute() {
                    Attribute::None => &mut r.code_only,
                    Attribute::Numeric(_) => &mut r.numeric,
                    Attribute::Text(_) => &mut r.categorical_text,
                };
                stratum.total_events += 1;
                stratum.oov_events += u64::from(oov);
            }
            r
        })
        .reduce(OovReport::default, OovReport::merge);
    Ok(report)
}
