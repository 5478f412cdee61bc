//! Script assembly, plain-text export and session files.
//!
//! Export layout (blocks separated by one blank line, file ends with a newline):
//!
//! ```text
//! <title>
//!
//! CHARACTERS
//! <name>: <description>
//! ...
//!
//! SCENE <n> — <place> (<plot element>)
//! <location description>
//! [<beat>]
//!
//! SPEAKER
//!   (stage direction)
//!   utterance
//!
//! (standalone stage direction, verbatim)
//! ```

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::parse::{parse_dialogue, parse_title, DialogueLine};
use crate::story::{
    resolve_slot_text, CharacterSpec, Provenance, Scene, SlotAddress, StorySession,
};

/// Version written into session files; newer files are refused.
pub const FORMAT_VERSION: u32 = 1;
pub const SESSION_EXTENSION: &str = "dramaturg.json";

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("session is incomplete; missing: {}", .0.join(", "))]
    IncompleteSession(Vec<String>),
    #[error("cannot read session: {0}")]
    Serialization(String),
    #[error("session file has format version {found}, this build reads up to {supported}")]
    VersionMismatch { found: u64, supported: u32 },
    #[error("session state does not match its own history")]
    Inconsistent,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptLocation {
    pub place: String,
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptScene {
    pub number: usize,
    pub scene: Scene,
    pub location_description: Option<String>,
    /// Resolved dialogue text, trimmed.
    pub dialogue_text: Option<String>,
    pub dialogue: Vec<DialogueLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotProvenance {
    pub address: SlotAddress,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptDocument {
    pub log_line: String,
    pub title: Option<String>,
    pub characters: Vec<CharacterSpec>,
    pub locations: Vec<ScriptLocation>,
    pub scenes: Vec<ScriptScene>,
    pub provenance: Vec<SlotProvenance>,
    /// Slots with no usable text. Empty for a complete script.
    pub missing: Vec<SlotAddress>,
}

impl ScriptDocument {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Builds a document from whatever the session can resolve, listing the rest
/// in `missing`. Never mutates the session.
pub fn assemble_partial(session: &StorySession) -> ScriptDocument {
    let mut missing = Vec::new();
    let mut text_of = |address: &SlotAddress| -> Option<String> {
        let text = session
            .slot(address)
            .and_then(|s| resolve_slot_text(s).ok())
            .map(str::to_string);
        if text.is_none() {
            missing.push(address.clone());
        }
        text
    };

    let title_text = text_of(&SlotAddress::Title);
    let has_title_text = title_text.is_some();
    let title = title_text.and_then(|t| parse_title(&t).ok());
    let has_character_text = text_of(&SlotAddress::Characters).is_some();
    let characters = session.characters();
    let has_plot_text = text_of(&SlotAddress::Plot).is_some();
    let plot = session.scenes();

    let locations: Vec<ScriptLocation> = session
        .location_slots
        .keys()
        .map(|place| ScriptLocation {
            place: place.clone(),
            description: text_of(&SlotAddress::location(place)).map(|d| d.trim().to_string()),
        })
        .collect();
    let scenes: Vec<ScriptScene> = plot
        .clone()
        .unwrap_or_default()
        .into_iter()
        .enumerate()
        .map(|(i, scene)| {
            let dialogue_text =
                text_of(&SlotAddress::Dialogue(i + 1)).map(|d| d.trim().to_string());
            let location_description = locations
                .iter()
                .find(|l| l.place == scene.place.trim())
                .and_then(|l| l.description.clone());
            ScriptScene {
                number: i + 1,
                dialogue: dialogue_text.as_deref().map(parse_dialogue).unwrap_or_default(),
                dialogue_text,
                location_description,
                scene,
            }
        })
        .collect();

    // Text that is present but unusable counts as missing too.
    if has_title_text && title.is_none() {
        missing.push(SlotAddress::Title);
    }
    if has_character_text && characters.is_none() {
        missing.push(SlotAddress::Characters);
    }
    if has_plot_text && plot.is_none() {
        missing.push(SlotAddress::Plot);
    }
    let order: Vec<SlotAddress> = session.slots().map(|s| s.key.clone()).collect();
    missing.sort_by_key(|a| order.iter().position(|o| o == a));
    missing.dedup();

    ScriptDocument {
        log_line: session.log_line.as_str().to_string(),
        title,
        characters: characters.unwrap_or_default(),
        locations,
        scenes,
        provenance: session
            .slots()
            .filter(|s| s.is_resolvable())
            .map(|s| SlotProvenance {
                address: s.key.clone(),
                provenance: s.provenance,
            })
            .collect(),
        missing,
    }
}

/// Like [`assemble_partial`] but fails unless every slot has usable text.
pub fn assemble_script(session: &StorySession) -> Result<ScriptDocument, ScriptError> {
    let doc = assemble_partial(session);
    if doc.is_complete() {
        Ok(doc)
    } else {
        Err(ScriptError::IncompleteSession(
            doc.missing.iter().map(ToString::to_string).collect(),
        ))
    }
}

fn indent(text: &str) -> String {
    text.lines().map(|l| format!("\n  {l}")).collect()
}

fn dialogue_block(line: &DialogueLine) -> String {
    if line.speaker.is_empty() {
        return line.stage_direction.clone().unwrap_or_default();
    }
    let mut out = line.speaker.clone();
    if let Some(direction) = &line.stage_direction {
        out.push_str(&indent(direction));
    }
    out.push_str(&indent(&line.utterance));
    out
}

pub fn export_plaintext(doc: &ScriptDocument) -> String {
    let mut blocks: Vec<String> = Vec::new();
    if let Some(title) = &doc.title {
        blocks.push(title.clone());
    }
    if !doc.characters.is_empty() {
        let lines: Vec<String> = doc
            .characters
            .iter()
            .map(|c| format!("{}: {}", c.name, c.description))
            .collect();
        blocks.push(format!("CHARACTERS\n{}", lines.join("\n")));
    }
    for scene in &doc.scenes {
        let mut header = format!(
            "SCENE {} — {} ({})",
            scene.number, scene.scene.place, scene.scene.plot_element
        );
        if let Some(description) = &scene.location_description {
            header.push('\n');
            header.push_str(description);
        }
        header.push_str(&format!("\n[{}]", scene.scene.beat));
        blocks.push(header);
        blocks.extend(scene.dialogue.iter().map(dialogue_block));
    }
    let mut out = blocks.join("\n\n");
    out.push('\n');
    out
}

/// Sectioned dump of every resolved text: title, character list, plot
/// outline, location descriptions, then each scene's dialogue.
pub fn flatten_text(doc: &ScriptDocument) -> String {
    let characters: Vec<String> = doc
        .characters
        .iter()
        .map(|c| format!("{}: {}", c.name, c.description))
        .collect();
    let plot: Vec<String> = doc
        .scenes
        .iter()
        .map(|s| {
            format!(
                "Scene {}\nPlace: {}\nPlot element: {}\nBeat: {}",
                s.number, s.scene.place, s.scene.plot_element, s.scene.beat
            )
        })
        .collect();
    let locations: Vec<String> = doc
        .locations
        .iter()
        .map(|l| {
            format!(
                "Place: {}\nDescription: {}",
                l.place,
                l.description.as_deref().unwrap_or("")
            )
        })
        .collect();
    let dialogue: Vec<String> = doc
        .scenes
        .iter()
        .map(|s| format!("Scene {}\n{}", s.number, s.dialogue_text.as_deref().unwrap_or("")))
        .collect();
    let sections = [
        format!("Title\n{}", doc.title.as_deref().unwrap_or("")),
        format!(
            "List of Characters and Character Descriptions\n{}",
            characters.join("\n\n")
        ),
        format!("Plot Outline\n{}", plot.join("\n\n")),
        format!("Location Description\n{}", locations.join("\n\n")),
        format!("Scene Dialogue\n{}", dialogue.join("\n\n")),
    ];
    let mut out = sections.join("\n\n");
    out.push('\n');
    out
}

#[derive(Serialize)]
struct SessionFileOut<'a> {
    format_version: u32,
    session: &'a StorySession,
}

#[derive(Deserialize)]
struct SessionFileIn {
    format_version: u64,
    session: Box<serde_json::value::RawValue>,
}

pub fn session_to_json(session: &StorySession) -> String {
    serde_json::to_string_pretty(&SessionFileOut {
        format_version: FORMAT_VERSION,
        session,
    })
    .expect("sessions always serialize")
}

/// Parses a session file and checks that its state matches a replay of its
/// history.
pub fn session_from_json(text: &str) -> Result<StorySession, ScriptError> {
    let file: SessionFileIn =
        serde_json::from_str(text).map_err(|e| ScriptError::Serialization(e.to_string()))?;
    if file.format_version > u64::from(FORMAT_VERSION) {
        return Err(ScriptError::VersionMismatch {
            found: file.format_version,
            supported: FORMAT_VERSION,
        });
    }
    let session: StorySession = serde_json::from_str(file.session.get())
        .map_err(|e| ScriptError::Serialization(e.to_string()))?;
    let replayed = StorySession::replay(&session.history).map_err(|_| ScriptError::Inconsistent)?;
    // Map equality ignores order, so scene order is checked separately.
    if replayed != session || !replayed.location_slots.keys().eq(session.location_slots.keys()) {
        return Err(ScriptError::Inconsistent);
    }
    Ok(session)
}

/// Writes atomically: a temporary file in the target directory is renamed
/// over `path`.
pub fn save_session(session: &StorySession, path: impl AsRef<Path>) -> Result<(), ScriptError> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(session_to_json(session).as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| ScriptError::Io(e.error))?;
    Ok(())
}

pub fn load_session(path: impl AsRef<Path>) -> Result<StorySession, ScriptError> {
    session_from_json(&fs::read_to_string(path)?)
}
