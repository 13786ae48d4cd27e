//! Timeline → token sequence under one tokenization condition.
//!
//! The pipeline is: workflow expansion, per-event encoding (joint or
//! factorized), then time handling (age-in-days positions, interval tokens,
//! or plain order), and finally truncation to the most recent tokens.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Attribute, ClinicalEvent, Domain, PatientTimeline, WorkflowStage, SECONDS_PER_DAY};
use crate::vocab::{self, QuantileBins, Vocabulary, INTERVAL_TOKENS};

/// Separator between a code and its fused attributes in joint tokens.
pub const JOINT_SEPARATOR: char = '⎪';
pub const DEFAULT_MAX_CONTEXT_TOKENS: usize = 32_768;
/// Age normalizer for the auxiliary age channel (100 years).
pub const AGE_NORMALIZER_DAYS: f64 = 36_500.0;
/// Placeholder value token for numeric values of concepts without bins.
pub const UNBINNED_VALUE: &str = "Q?";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventEncoding {
    Joint,
    Factorized,
}

impl fmt::Display for EventEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventEncoding::Joint => "joint",
            EventEncoding::Factorized => "factorized",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeEncoding {
    TimePositions,
    TimeTokens,
    OrderOnly,
    PositionsPlusScalar,
}

impl TimeEncoding {
    pub fn uses_age_positions(self) -> bool {
        matches!(self, TimeEncoding::TimePositions | TimeEncoding::PositionsPlusScalar)
    }
}

/// Information-content ablation levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InformationContent {
    CodeOnly,
    Attributes,
    Workflow,
    Full,
}

impl InformationContent {
    /// `(workflow, include_attributes)`
    pub fn flags(self) -> (bool, bool) {
        match self {
            InformationContent::CodeOnly => (false, false),
            InformationContent::Attributes => (false, true),
            InformationContent::Workflow => (true, false),
            InformationContent::Full => (true, true),
        }
    }

    pub fn from_flags(workflow: bool, include_attributes: bool) -> Self {
        match (workflow, include_attributes) {
            (false, false) => InformationContent::CodeOnly,
            (false, true) => InformationContent::Attributes,
            (true, false) => InformationContent::Workflow,
            (true, true) => InformationContent::Full,
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_max_context() -> usize {
    DEFAULT_MAX_CONTEXT_TOKENS
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub event_encoding: EventEncoding,
    pub time_encoding: TimeEncoding,
    pub workflow: bool,
    #[serde(default = "default_true")]
    pub include_attributes: bool,
    #[serde(default = "default_max_context")]
    pub max_context_tokens: usize,
}

impl TokenizerConfig {
    pub fn new(event_encoding: EventEncoding, time_encoding: TimeEncoding, workflow: bool) -> Self {
        TokenizerConfig {
            event_encoding,
            time_encoding,
            workflow,
            include_attributes: true,
            max_context_tokens: DEFAULT_MAX_CONTEXT_TOKENS,
        }
    }

    pub fn with_information(mut self, level: InformationContent) -> Self {
        let (workflow, attrs) = level.flags();
        self.workflow = workflow;
        self.include_attributes = attrs;
        self
    }

    pub fn information(&self) -> InformationContent {
        InformationContent::from_flags(self.workflow, self.include_attributes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_context_tokens == 0 {
            return Err(Error::InvalidArgument("max_context_tokens must be > 0".into()));
        }
        Ok(())
    }

    /// The eight cells of the event × time × workflow factorial.
    pub fn factorial() -> Vec<TokenizerConfig> {
        let mut out = Vec::with_capacity(8);
        for event in [EventEncoding::Joint, EventEncoding::Factorized] {
            for time in [TimeEncoding::TimePositions, TimeEncoding::TimeTokens] {
                for workflow in [false, true] {
                    out.push(TokenizerConfig::new(event, time, workflow));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedSequence {
    pub patient_id: String,
    pub token_ids: Vec<u32>,
    pub position_ids: Vec<u32>,
    pub age_channels: Option<Vec<[f64; 2]>>,
    /// Source event per token (`None` for interval and demographic tokens).
    /// Not part of the JSONL output.
    #[serde(skip)]
    pub event_index: Vec<Option<u32>>,
}

impl TokenizedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Token strings with per-token metadata, before ID lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedStrings {
    pub tokens: Vec<String>,
    pub position_ids: Vec<u32>,
    pub age_days: Vec<u32>,
    pub event_index: Vec<Option<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expanded {
    pub timeline: PatientTimeline,
    /// Multi-stage actions dropped because their primary stage is missing.
    pub dropped_actions: usize,
}

/// Applies the workflow condition to a timeline.
///
/// With `workflow` on, all stage events are kept. With it off, each
/// multi-stage action keeps only its primary event(s); single-event domains
/// are untouched either way. Events without a stage are treated as primary.
pub fn expand_workflow(timeline: &PatientTimeline, workflow: bool) -> Expanded {
    let mut events: Vec<ClinicalEvent> = if workflow {
        timeline.events.clone()
    } else {
        timeline
            .events
            .iter()
            .filter(|e| e.is_primary())
            .cloned()
            .collect()
    };
    events.sort_by_key(|e| e.time);
    let dropped_actions = if workflow { 0 } else { count_actions_missing_primary(&timeline.events) };
    if dropped_actions > 0 {
        log::warn!(
            "patient {}: {dropped_actions} action(s) without a primary stage dropped",
            timeline.patient_id()
        );
    }
    Expanded {
        timeline: timeline.with_events(events),
        dropped_actions,
    }
}

/// Counts actions whose pre-primary stages are never followed by a primary
/// stage for the same (domain, code). A repeated opening stage while an
/// action is pending closes the pending one as incomplete.
fn count_actions_missing_primary(events: &[ClinicalEvent]) -> usize {
    let mut pending: HashMap<(Domain, &str), bool> = HashMap::new();
    let mut missing = 0;
    for ev in events {
        let Some(stage) = ev.workflow_stage else { continue };
        if !ev.domain.is_multi_stage() || ev.domain == Domain::Visit {
            continue;
        }
        let stages = ev.domain.workflow();
        let primary_pos = stages
            .iter()
            .position(|s| ev.domain.primary_stages().contains(s))
            .unwrap_or(0);
        let pos = stages.iter().position(|&s| s == stage).unwrap_or(0);
        let open = pending.entry((ev.domain, ev.code.as_str())).or_insert(false);
        if ev.is_primary() {
            *open = false;
        } else if pos < primary_pos {
            if pos == 0 && *open {
                missing += 1;
            }
            *open = true;
        }
        // stages after the primary one (surgery end) never open an action
    }
    missing + pending.values().filter(|&&open| open).count()
}

/// Token strings for one event; see [`encode_event_with_bins`].
pub fn encode_event(event: &ClinicalEvent, config: &TokenizerConfig, vocab: &Vocabulary) -> Vec<String> {
    encode_event_with_bins(event, config, vocab.bins())
}

/// Encodes an event as token strings.
///
/// Joint encoding fuses the code with its attributes (`CODE⎪Q7⎪S=result`);
/// factorized encoding emits the code followed by shared attribute tokens
/// (`CODE`, `Q7`, `S=result`). Value attributes come before the stage.
pub fn encode_event_with_bins(
    event: &ClinicalEvent,
    config: &TokenizerConfig,
    bins: &BTreeMap<String, QuantileBins>,
) -> Vec<String> {
    let mut attrs: Vec<String> = Vec::with_capacity(2);
    if config.include_attributes {
        match event.attribute() {
            Attribute::Numeric(v) => {
                let token = bins
                    .get(&event.code)
                    .and_then(|b| b.assign_bin(v).ok())
                    .map(|bin| format!("Q{bin}"))
                    .unwrap_or_else(|| UNBINNED_VALUE.to_string());
                attrs.push(token);
            }
            Attribute::Text(t) => attrs.push(format!("T={t}")),
            Attribute::None => {}
        }
    }
    if config.workflow {
        if let Some(stage) = event.workflow_stage {
            if stage != WorkflowStage::Single {
                attrs.push(format!("S={stage}"));
            }
        }
    }
    match config.event_encoding {
        EventEncoding::Joint => {
            let mut token = event.code.clone();
            for a in &attrs {
                token.push(JOINT_SEPARATOR);
                token.push_str(a);
            }
            vec![token]
        }
        EventEncoding::Factorized => {
            let mut out = Vec::with_capacity(1 + attrs.len());
            out.push(event.code.clone());
            out.extend(attrs);
            out
        }
    }
}

const MINUTE: i64 = 60;
const HOUR: i64 = 60 * MINUTE;
/// Six months as 182.5 days; one month is a sixth of that.
pub const SIX_MONTHS_SECS: i64 = 182 * SECONDS_PER_DAY + SECONDS_PER_DAY / 2;
const MONTH: i64 = SIX_MONTHS_SECS / 6;

/// Lower bound (inclusive) of each interval bin, aligned with [`INTERVAL_TOKENS`].
pub const INTERVAL_LOWER_BOUNDS_SECS: [i64; 13] = [
    5 * MINUTE,
    15 * MINUTE,
    HOUR,
    2 * HOUR,
    6 * HOUR,
    12 * HOUR,
    SECONDS_PER_DAY,
    3 * SECONDS_PER_DAY,
    7 * SECONDS_PER_DAY,
    14 * SECONDS_PER_DAY,
    MONTH,
    3 * MONTH,
    SIX_MONTHS_SECS,
];

/// Interval tokens for an elapsed time in seconds.
///
/// Under 5 minutes nothing is emitted. Bins are lower-inclusive and
/// upper-exclusive. From six months on, the six-month token is repeated
/// `max(1, round(elapsed / 182.5 days))` times.
pub fn interval_tokens(elapsed_secs: i64) -> Result<Vec<&'static str>> {
    if elapsed_secs < 0 {
        return Err(Error::InvalidData(format!(
            "negative elapsed time {elapsed_secs}s between events"
        )));
    }
    if elapsed_secs < INTERVAL_LOWER_BOUNDS_SECS[0] {
        return Ok(Vec::new());
    }
    if elapsed_secs >= SIX_MONTHS_SECS {
        let k = ((elapsed_secs + SIX_MONTHS_SECS / 2) / SIX_MONTHS_SECS).max(1);
        return Ok(vec![INTERVAL_TOKENS[12]; k as usize]);
    }
    let bin = INTERVAL_LOWER_BOUNDS_SECS.partition_point(|&lo| lo <= elapsed_secs) - 1;
    Ok(vec![INTERVAL_TOKENS[bin]])
}

fn age_days(timeline: &PatientTimeline, time: i64, birth: i64) -> Result<u32> {
    if time < birth {
        return Err(Error::InvalidData(format!(
            "patient {}: event at {} precedes birth date {}",
            timeline.patient_id(),
            crate::events::format_timestamp(time),
            timeline.patient.birth_date
        )));
    }
    u32::try_from((time - birth) / SECONDS_PER_DAY)
        .map_err(|_| Error::InvalidData(format!("patient {}: age out of range", timeline.patient_id())))
}

/// Runs the tokenization pipeline up to (but excluding) ID lookup.
pub fn tokenize_to_strings(
    timeline: &PatientTimeline,
    config: &TokenizerConfig,
    vocab: &Vocabulary,
) -> Result<TokenizedStrings> {
    vocab.check_compatible(config)?;
    tokenize_strings_with_bins(timeline, config, vocab.bins())
}

pub(crate) fn tokenize_strings_with_bins(
    timeline: &PatientTimeline,
    config: &TokenizerConfig,
    bins: &BTreeMap<String, QuantileBins>,
) -> Result<TokenizedStrings> {
    config.validate()?;
    let expanded = expand_workflow(timeline, config.workflow).timeline;
    let birth = timeline.patient.birth_time();
    let events = &expanded.events;

    let mut tokens = Vec::new();
    let mut ages = Vec::new();
    let mut event_index = Vec::new();

    if config.time_encoding == TimeEncoding::TimeTokens {
        let first_age_days = match events.first() {
            Some(e) => age_days(timeline, e.time, birth)?,
            None => 0,
        };
        let years = (f64::from(first_age_days) / 365.25).floor() as u32;
        tokens.push(vocab::age_token(years));
        tokens.push(vocab::sex_token(timeline.patient.sex));
        ages.extend([first_age_days; 2]);
        event_index.extend([None, None]);
    }

    let mut prev_time: Option<i64> = None;
    for (idx, ev) in events.iter().enumerate() {
        let age = age_days(timeline, ev.time, birth)?;
        if config.time_encoding == TimeEncoding::TimeTokens {
            if let Some(prev) = prev_time {
                for t in interval_tokens(ev.time - prev)? {
                    tokens.push(t.to_string());
                    ages.push(age);
                    event_index.push(None);
                }
            }
        }
        prev_time = Some(ev.time);
        for t in encode_event_with_bins(ev, config, bins) {
            tokens.push(t);
            ages.push(age);
            event_index.push(Some(idx as u32));
        }
    }

    let excess = tokens.len().saturating_sub(config.max_context_tokens);
    if excess > 0 {
        tokens.drain(..excess);
        ages.drain(..excess);
        event_index.drain(..excess);
    }

    let position_ids = if config.time_encoding.uses_age_positions() {
        ages.clone()
    } else {
        (0..tokens.len() as u32).collect()
    };
    Ok(TokenizedStrings {
        tokens,
        position_ids,
        age_days: ages,
        event_index,
    })
}

/// Tokenizes one patient timeline.
pub fn tokenize_timeline(
    timeline: &PatientTimeline,
    config: &TokenizerConfig,
    vocab: &Vocabulary,
) -> Result<TokenizedSequence> {
    let strings = tokenize_to_strings(timeline, config, vocab)?;
    let token_ids = strings.tokens.iter().map(|t| vocab.id_or_oov(t)).collect();
    let age_channels = (config.time_encoding == TimeEncoding::PositionsPlusScalar).then(|| {
        strings
            .age_days
            .iter()
            .map(|&d| {
                let a = (f64::from(d) / AGE_NORMALIZER_DAYS).clamp(0.0, 1.0);
                [a, a * a]
            })
            .collect()
    });
    Ok(TokenizedSequence {
        patient_id: timeline.patient_id().to_string(),
        token_ids,
        position_ids: strings.position_ids,
        age_channels,
        event_index: strings.event_index,
    })
}

/// Events at or before the prediction time.
pub fn truncate_at_prediction_time(timeline: &PatientTimeline, prediction_time: i64) -> PatientTimeline {
    crate::events::apply_temporal_cutoff(timeline, prediction_time)
}

/// Keeps the `n_events` most recent events.
pub fn truncate_fixed_events(timeline: &PatientTimeline, n_events: usize) -> Result<PatientTimeline> {
    if n_events == 0 {
        return Err(Error::InvalidArgument("n_events must be > 0".into()));
    }
    let start = timeline.events.len().saturating_sub(n_events);
    Ok(timeline.with_events(timeline.events[start..].to_vec()))
}
