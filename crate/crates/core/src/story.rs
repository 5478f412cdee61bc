//! The hierarchical story document.
//!
//! A [`StorySession`] holds one slot per level of the hierarchy: title,
//! characters, plot, one slot per distinct location, and one dialogue slot per
//! scene. Every mutation goes through [`StorySession::commit`], which applies a
//! [`Change`] and appends it to the history. Replaying the history from scratch
//! rebuilds the same session.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;
use uuid::Uuid;

use crate::engine::loops::LoopReport;
use crate::engine::parse::{parse_characters, parse_plot};
use crate::gateway::SamplingConfig;
use crate::metrics;

/// End of a full generated sequence.
pub const END_MARKER: &str = "<end>";
/// End of one generated line (character entries).
pub const STOP_MARKER: &str = "<stop>";
pub const CHARACTER_TAG: &str = "<character>";
pub const DESCRIPTION_TAG: &str = "<description>";
pub const SCENES_TAG: &str = "<scenes>";
pub const DIALOG_TAG: &str = "<dialog>";

pub const RESERVED_MARKERS: [&str; 6] = [
    END_MARKER,
    STOP_MARKER,
    CHARACTER_TAG,
    DESCRIPTION_TAG,
    SCENES_TAG,
    DIALOG_TAG,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoryError {
    #[error("invalid log line: {0}")]
    InvalidLogLine(String),
    #[error("invalid character: {0}")]
    InvalidCharacter(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("slot {0} has neither an accepted candidate nor edited text")]
    EmptySlot(SlotAddress),
    #[error("no such slot: {0}")]
    UnknownSlot(String),
    #[error("candidate index {index} out of range for slot {address} ({len} candidates)")]
    CandidateOutOfRange {
        address: SlotAddress,
        index: usize,
        len: usize,
    },
    #[error("plot text does not parse into scenes: {0}")]
    UnparseablePlot(String),
    #[error("candidate text still contains the end marker")]
    UntruncatedCandidate,
    #[error("history must start with a creation event")]
    MissingCreation,
    #[error("session already created")]
    AlreadyCreated,
}

/// Returns the first reserved marker or `<UPPER_SNAKE>` placeholder token found in `text`.
pub fn find_reserved_token(text: &str) -> Option<&str> {
    if let Some(marker) = RESERVED_MARKERS.iter().find(|m| text.contains(*m)) {
        return Some(marker);
    }
    find_placeholder_token(text)
}

/// Returns the first `<UPPER_SNAKE>` token in `text`, if any.
pub fn find_placeholder_token(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            let mut j = i + 1;
            if j < bytes.len() && bytes[j].is_ascii_uppercase() {
                while j < bytes.len()
                    && (bytes[j].is_ascii_uppercase() || bytes[j].is_ascii_digit() || bytes[j] == b'_')
                {
                    j += 1;
                }
                if j < bytes.len() && bytes[j] == b'>' {
                    return Some(&text[i..=j]);
                }
            }
        }
        i += 1;
    }
    None
}

/// One-to-few sentences summarizing the central dramatic conflict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogLine {
    text: String,
}

impl LogLine {
    pub fn new(text: impl Into<String>) -> Result<Self, StoryError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(StoryError::InvalidLogLine("log line is empty".into()));
        }
        if let Some(token) = find_reserved_token(&text) {
            return Err(StoryError::InvalidLogLine(format!(
                "log line contains reserved token {token}"
            )));
        }
        Ok(Self { text })
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl fmt::Display for LogLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterSpec {
    pub name: String,
    pub description: String,
}

impl CharacterSpec {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Result<Self, StoryError> {
        let name = name.into().trim().to_string();
        let description = description.into().trim().to_string();
        if name.is_empty() {
            return Err(StoryError::InvalidCharacter("empty name".into()));
        }
        if name.contains('\n') {
            return Err(StoryError::InvalidCharacter(format!("name {name:?} spans lines")));
        }
        if description.is_empty() {
            return Err(StoryError::InvalidCharacter(format!("{name} has no description")));
        }
        for field in [&name, &description] {
            if let Some(token) = find_reserved_token(field) {
                return Err(StoryError::InvalidCharacter(format!(
                    "{name} contains reserved token {token}"
                )));
            }
        }
        Ok(Self { name, description })
    }

    /// The line used when this character is embedded in a plot or dialogue prompt.
    ///
    /// Descriptions that already open with the name are used as-is.
    pub fn prompt_line(&self) -> String {
        if self.description.starts_with(&self.name) {
            self.description.clone()
        } else {
            format!("{}: {}", self.name, self.description)
        }
    }
}

/// Drops later entries whose name matches an earlier one, ignoring case.
pub fn dedup_characters(characters: Vec<CharacterSpec>) -> Vec<CharacterSpec> {
    let mut seen = std::collections::HashSet::new();
    characters
        .into_iter()
        .filter(|c| seen.insert(c.name.to_lowercase()))
        .collect()
}

/// A scene of the plot outline: where, which narrative-arc position, and what happens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub place: String,
    pub plot_element: String,
    pub beat: String,
    /// Whether `plot_element` names a label of one of the shipped arc scaffolds.
    pub canonical_element: bool,
}

impl Scene {
    pub fn new(
        place: impl Into<String>,
        plot_element: impl Into<String>,
        beat: impl Into<String>,
    ) -> Result<Self, StoryError> {
        let place = place.into().trim().to_string();
        let plot_element = plot_element.into().trim().to_string();
        let beat = beat.into().trim().to_string();
        if place.is_empty() {
            return Err(StoryError::InvalidScene("empty place".into()));
        }
        if beat.is_empty() {
            return Err(StoryError::InvalidScene("empty beat".into()));
        }
        for field in [&place, &plot_element, &beat] {
            if let Some(token) = find_reserved_token(field) {
                return Err(StoryError::InvalidScene(format!("contains reserved token {token}")));
            }
        }
        let canonical_element = ArcScaffold::is_canonical(&plot_element);
        Ok(Self {
            place,
            plot_element,
            beat,
            canonical_element,
        })
    }
}

/// Distinct place names in order of first appearance.
///
/// Names are compared after trimming surrounding whitespace; case matters.
pub fn unique_locations(scenes: &[Scene]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for scene in scenes {
        let place = scene.place.trim();
        if !out.iter().any(|p| p == place) {
            out.push(place.to_string());
        }
    }
    out
}

/// An ordered narrative-arc vocabulary used to scaffold plots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArcScaffold {
    pub name: &'static str,
    pub labels: &'static [&'static str],
}

const FREYTAG_LABELS: &[&str] = &[
    "Exposition",
    "Inciting Incident",
    "Conflict",
    "Rising Action",
    "Dilemma",
    "Climax",
    "Falling Action",
    "Resolution",
    "Denouement",
];

const HERO_JOURNEY_LABELS: &[&str] = &[
    "The Ordinary World",
    "Call to Adventure",
    "Refusal of the Call",
    "Crossing the First Threshold",
    "Tests Allies and Enemies",
    "The Approach to the Inmost Cave",
    "The Ordeal",
    "The Reward",
    "The Road Back",
    "The Resurrection",
    "The Return",
];

impl ArcScaffold {
    pub const fn freytag() -> Self {
        Self {
            name: "freytag",
            labels: FREYTAG_LABELS,
        }
    }

    pub const fn hero_journey() -> Self {
        Self {
            name: "hero_journey",
            labels: HERO_JOURNEY_LABELS,
        }
    }

    pub fn all() -> [ArcScaffold; 2] {
        [Self::freytag(), Self::hero_journey()]
    }

    /// Position of `label` in this scaffold, tolerant of trailing periods,
    /// case, commas and accents ("Dénouement." matches "Denouement").
    pub fn position(&self, label: &str) -> Option<usize> {
        let wanted = normalize_label(label);
        self.labels.iter().position(|l| normalize_label(l) == wanted)
    }

    pub fn is_canonical(label: &str) -> bool {
        Self::all().iter().any(|s| s.position(label).is_some())
    }
}

fn normalize_label(label: &str) -> String {
    let trimmed = label.trim().trim_end_matches('.');
    let folded: String = trimmed
        .chars()
        .filter(|c| *c != ',')
        .map(|c| match c {
            'à' | 'á' | 'â' | 'ä' | 'À' | 'Á' | 'Â' | 'Ä' => 'a',
            'é' | 'è' | 'ê' | 'ë' | 'É' | 'È' | 'Ê' | 'Ë' => 'e',
            'í' | 'ì' | 'î' | 'ï' => 'i',
            'ó' | 'ò' | 'ô' | 'ö' => 'o',
            'ú' | 'ù' | 'û' | 'ü' => 'u',
            'ç' => 'c',
            'ñ' => 'n',
            other => other,
        })
        .collect::<String>()
        .to_lowercase();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Title,
    Characters,
    Plot,
    Location,
    Dialogue,
}

/// Path-style slot address: `title`, `characters`, `plot`, `location:<name>`,
/// `dialogue:<scene number>` (scene numbers start at 1).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotAddress {
    Title,
    Characters,
    Plot,
    Location(String),
    Dialogue(usize),
}

impl SlotAddress {
    pub fn kind(&self) -> SlotKind {
        match self {
            SlotAddress::Title => SlotKind::Title,
            SlotAddress::Characters => SlotKind::Characters,
            SlotAddress::Plot => SlotKind::Plot,
            SlotAddress::Location(_) => SlotKind::Location,
            SlotAddress::Dialogue(_) => SlotKind::Dialogue,
        }
    }

    pub fn location(name: impl AsRef<str>) -> Self {
        SlotAddress::Location(name.as_ref().trim().to_string())
    }
}

impl fmt::Display for SlotAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotAddress::Title => f.write_str("title"),
            SlotAddress::Characters => f.write_str("characters"),
            SlotAddress::Plot => f.write_str("plot"),
            SlotAddress::Location(name) => write!(f, "location:{name}"),
            SlotAddress::Dialogue(n) => write!(f, "dialogue:{n}"),
        }
    }
}

impl FromStr for SlotAddress {
    type Err = StoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "title" => return Ok(SlotAddress::Title),
            "characters" => return Ok(SlotAddress::Characters),
            "plot" => return Ok(SlotAddress::Plot),
            _ => {}
        }
        if let Some(name) = s.strip_prefix("location:") {
            if name.trim().is_empty() {
                return Err(StoryError::UnknownSlot(s.to_string()));
            }
            return Ok(SlotAddress::location(name));
        }
        if let Some(n) = s.strip_prefix("dialogue:") {
            return match n.parse::<usize>() {
                Ok(n) if n >= 1 => Ok(SlotAddress::Dialogue(n)),
                _ => Err(StoryError::UnknownSlot(s.to_string())),
            };
        }
        Err(StoryError::UnknownSlot(s.to_string()))
    }
}

impl Serialize for SlotAddress {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SlotAddress {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Generated,
    Edited,
    Mixed,
}

/// One model generation for a slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Model output, already truncated at the end marker.
    pub raw_text: String,
    /// Seed of the gateway call that produced `raw_text`.
    pub seed: u64,
    pub sampling: SamplingConfig,
    /// Hex SHA-256 of the exact prompt sent.
    pub prompt_hash: String,
    pub created_at: DateTime<Utc>,
    /// Gateway calls spent on this candidate, resamples included.
    pub gateway_calls: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_report: Option<LoopReport>,
}

impl Candidate {
    pub fn loop_unresolved(&self) -> bool {
        self.loop_report.as_ref().is_some_and(|r| r.unresolved)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSlot {
    pub kind: SlotKind,
    pub key: SlotAddress,
    pub candidates: Vec<Candidate>,
    pub accepted: Option<usize>,
    pub edited_text: Option<String>,
    pub provenance: Provenance,
    /// Set when upstream text this slot was built from has changed since.
    pub stale: bool,
}

impl GenerationSlot {
    pub fn empty(key: SlotAddress) -> Self {
        Self {
            kind: key.kind(),
            key,
            candidates: Vec::new(),
            accepted: None,
            edited_text: None,
            provenance: Provenance::Generated,
            stale: false,
        }
    }

    pub fn has_content(&self) -> bool {
        !self.candidates.is_empty() || self.edited_text.is_some()
    }

    pub fn accepted_candidate(&self) -> Option<&Candidate> {
        self.accepted.and_then(|i| self.candidates.get(i))
    }

    pub fn is_resolvable(&self) -> bool {
        resolve_slot_text(self).is_ok()
    }
}

/// The text currently standing for a slot: the edit if there is one, else the
/// accepted candidate.
pub fn resolve_slot_text(slot: &GenerationSlot) -> Result<&str, StoryError> {
    if let Some(text) = &slot.edited_text {
        return Ok(text);
    }
    slot.accepted_candidate()
        .map(|c| c.raw_text.as_str())
        .ok_or_else(|| StoryError::EmptySlot(slot.key.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddMode {
    Generate,
    Continue,
}

/// A slot removed from the session when the plot was reshaped. Kept in the
/// history so no text is lost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetiredSlot {
    pub slot: GenerationSlot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Change {
    Created {
        session_id: Uuid,
        log_line: LogLine,
        prompt_set: String,
    },
    CandidateAdded {
        address: SlotAddress,
        mode: AddMode,
        requested_seed: u64,
        candidate: Candidate,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        retired: Vec<RetiredSlot>,
    },
    Edited {
        address: SlotAddress,
        text: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        retired: Vec<RetiredSlot>,
    },
    Accepted {
        address: SlotAddress,
        index: usize,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        retired: Vec<RetiredSlot>,
    },
}

impl Change {
    pub fn address(&self) -> Option<&SlotAddress> {
        match self {
            Change::Created { .. } => None,
            Change::CandidateAdded { address, .. }
            | Change::Edited { address, .. }
            | Change::Accepted { address, .. } => Some(address),
        }
    }

    fn retired_mut(&mut self) -> Option<&mut Vec<RetiredSlot>> {
        match self {
            Change::Created { .. } => None,
            Change::CandidateAdded { retired, .. }
            | Change::Edited { retired, .. }
            | Change::Accepted { retired, .. } => Some(retired),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub change: Change,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorySession {
    pub id: Uuid,
    pub log_line: LogLine,
    pub prompt_set_name: String,
    pub title_slot: GenerationSlot,
    pub character_slot: GenerationSlot,
    pub plot_slot: GenerationSlot,
    pub location_slots: IndexMap<String, GenerationSlot>,
    pub dialogue_slots: Vec<GenerationSlot>,
    pub history: Vec<SessionEvent>,
}

impl StorySession {
    pub fn create(
        id: Uuid,
        log_line: LogLine,
        prompt_set: impl Into<String>,
        at: DateTime<Utc>,
    ) -> Self {
        let mut session = Self::blank();
        session
            .commit(
                at,
                Change::Created {
                    session_id: id,
                    log_line,
                    prompt_set: prompt_set.into(),
                },
            )
            .expect("creating a blank session cannot fail");
        session
    }

    fn blank() -> Self {
        Self {
            id: Uuid::nil(),
            log_line: LogLine {
                text: String::new(),
            },
            prompt_set_name: String::new(),
            title_slot: GenerationSlot::empty(SlotAddress::Title),
            character_slot: GenerationSlot::empty(SlotAddress::Characters),
            plot_slot: GenerationSlot::empty(SlotAddress::Plot),
            location_slots: IndexMap::new(),
            dialogue_slots: Vec::new(),
            history: Vec::new(),
        }
    }

    /// Rebuilds a session from its event log.
    pub fn replay(events: &[SessionEvent]) -> Result<Self, StoryError> {
        match events.first() {
            Some(SessionEvent {
                change: Change::Created { .. },
                ..
            }) => {}
            _ => return Err(StoryError::MissingCreation),
        }
        let mut session = Self::blank();
        for event in events {
            session.commit(event.at, event.change.clone())?;
        }
        Ok(session)
    }

    pub fn slot(&self, address: &SlotAddress) -> Option<&GenerationSlot> {
        match address {
            SlotAddress::Title => Some(&self.title_slot),
            SlotAddress::Characters => Some(&self.character_slot),
            SlotAddress::Plot => Some(&self.plot_slot),
            SlotAddress::Location(name) => self.location_slots.get(name.trim()),
            SlotAddress::Dialogue(n) => n.checked_sub(1).and_then(|i| self.dialogue_slots.get(i)),
        }
    }

    fn slot_mut(&mut self, address: &SlotAddress) -> Option<&mut GenerationSlot> {
        match address {
            SlotAddress::Title => Some(&mut self.title_slot),
            SlotAddress::Characters => Some(&mut self.character_slot),
            SlotAddress::Plot => Some(&mut self.plot_slot),
            SlotAddress::Location(name) => self.location_slots.get_mut(name.trim()),
            SlotAddress::Dialogue(n) => n
                .checked_sub(1)
                .and_then(move |i| self.dialogue_slots.get_mut(i)),
        }
    }

    /// Every slot, in hierarchy order.
    pub fn slots(&self) -> impl Iterator<Item = &GenerationSlot> {
        [&self.title_slot, &self.character_slot, &self.plot_slot]
            .into_iter()
            .chain(self.location_slots.values())
            .chain(self.dialogue_slots.iter())
    }

    pub fn resolved_text(&self, address: &SlotAddress) -> Result<&str, StoryError> {
        let slot = self
            .slot(address)
            .ok_or_else(|| StoryError::UnknownSlot(address.to_string()))?;
        resolve_slot_text(slot)
    }

    /// Scenes of the resolved plot, if the plot is resolvable and parses.
    pub fn scenes(&self) -> Option<Vec<Scene>> {
        resolve_slot_text(&self.plot_slot)
            .ok()
            .and_then(|text| parse_plot(text).ok())
    }

    /// Characters of the resolved character slot, if resolvable and parseable.
    pub fn characters(&self) -> Option<Vec<CharacterSpec>> {
        resolve_slot_text(&self.character_slot)
            .ok()
            .and_then(|text| parse_characters(text).ok())
    }

    /// Validates and applies `change`, then appends it to the history.
    pub fn commit(&mut self, at: DateTime<Utc>, mut change: Change) -> Result<&SessionEvent, StoryError> {
        let before = change
            .address()
            .and_then(|a| self.slot(a))
            .and_then(|s| resolve_slot_text(s).ok().map(str::to_string));

        match &change {
            Change::Created {
                session_id,
                log_line,
                prompt_set,
            } => {
                if !self.history.is_empty() {
                    return Err(StoryError::AlreadyCreated);
                }
                self.id = *session_id;
                self.log_line = log_line.clone();
                self.prompt_set_name = prompt_set.clone();
            }
            Change::CandidateAdded {
                address,
                mode,
                candidate,
                ..
            } => {
                if candidate.raw_text.contains(END_MARKER) {
                    return Err(StoryError::UntruncatedCandidate);
                }
                let slot = self
                    .slot_mut(address)
                    .ok_or_else(|| StoryError::UnknownSlot(address.to_string()))?;
                let was_empty = slot.candidates.is_empty();
                slot.candidates.push(candidate.clone());
                let index = slot.candidates.len() - 1;
                match mode {
                    AddMode::Generate => {
                        slot.edited_text = None;
                        slot.provenance = Provenance::Generated;
                        if was_empty || slot.accepted.is_none() {
                            slot.accepted = Some(index);
                        }
                    }
                    AddMode::Continue => {
                        if slot.edited_text.is_some() {
                            slot.edited_text = Some(candidate.raw_text.clone());
                        } else {
                            slot.accepted = Some(index);
                        }
                    }
                }
                slot.stale = false;
            }
            Change::Edited { address, text, .. } => {
                if *address == SlotAddress::Plot {
                    parse_plot(text).map_err(|e| StoryError::UnparseablePlot(e.to_string()))?;
                }
                let slot = self
                    .slot_mut(address)
                    .ok_or_else(|| StoryError::UnknownSlot(address.to_string()))?;
                slot.provenance = match slot.accepted_candidate() {
                    Some(original) if metrics::shares_lemma(&original.raw_text, text) => Provenance::Mixed,
                    _ => Provenance::Edited,
                };
                slot.edited_text = Some(text.clone());
                slot.stale = false;
            }
            Change::Accepted { address, index, .. } => {
                let slot = self
                    .slot_mut(address)
                    .ok_or_else(|| StoryError::UnknownSlot(address.to_string()))?;
                if *index >= slot.candidates.len() {
                    return Err(StoryError::CandidateOutOfRange {
                        address: address.clone(),
                        index: *index,
                        len: slot.candidates.len(),
                    });
                }
                slot.accepted = Some(*index);
                slot.edited_text = None;
                slot.provenance = Provenance::Generated;
                slot.stale = false;
            }
        }

        if let Some(address) = change.address().cloned() {
            let after = self.slot(&address).and_then(|s| resolve_slot_text(s).ok().map(str::to_string));
            if before != after {
                self.mark_downstream_stale(&address);
                if address == SlotAddress::Plot {
                    let retired = self.reshape_to_plot();
                    if let Some(slot) = change.retired_mut() {
                        *slot = retired;
                    }
                }
            }
        }

        let seq = self.history.len() as u64;
        self.history.push(SessionEvent { seq, at, change });
        Ok(self.history.last().expect("just pushed"))
    }

    fn mark_downstream_stale(&mut self, address: &SlotAddress) {
        let scenes = self.scenes().unwrap_or_default();
        let mark = |slot: &mut GenerationSlot| {
            if slot.has_content() {
                slot.stale = true;
            }
        };
        match address {
            SlotAddress::Title => {}
            SlotAddress::Characters => {
                mark(&mut self.plot_slot);
                self.dialogue_slots.iter_mut().for_each(mark);
            }
            SlotAddress::Plot => self.dialogue_slots.iter_mut().for_each(mark),
            SlotAddress::Location(name) => {
                for (slot, scene) in self.dialogue_slots.iter_mut().zip(&scenes) {
                    if scene.place.trim() == name.trim() {
                        mark(slot);
                    }
                }
            }
            SlotAddress::Dialogue(_) => {}
        }
    }

    /// Re-derives location keys and dialogue slot count from the resolved plot.
    /// Scene identity is positional. Returns the slots that were dropped.
    fn reshape_to_plot(&mut self) -> Vec<RetiredSlot> {
        let scenes = self.scenes().unwrap_or_default();
        let mut retired = Vec::new();

        let names = unique_locations(&scenes);
        let mut old = std::mem::take(&mut self.location_slots);
        for name in &names {
            let slot = old
                .shift_remove(name)
                .unwrap_or_else(|| GenerationSlot::empty(SlotAddress::Location(name.clone())));
            self.location_slots.insert(name.clone(), slot);
        }
        retired.extend(old.into_values().map(|slot| RetiredSlot { slot }));

        if self.dialogue_slots.len() > scenes.len() {
            retired.extend(
                self.dialogue_slots
                    .drain(scenes.len()..)
                    .map(|slot| RetiredSlot { slot }),
            );
        }
        while self.dialogue_slots.len() < scenes.len() {
            let n = self.dialogue_slots.len() + 1;
            self.dialogue_slots
                .push(GenerationSlot::empty(SlotAddress::Dialogue(n)));
        }
        retired
    }
}
