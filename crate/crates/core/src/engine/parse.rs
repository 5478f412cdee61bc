//! Parsers for the tagged text each prompt family produces.
//!
//! Every parser ignores `<end>` and anything after it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::story::{
    dedup_characters, CharacterSpec, Scene, CHARACTER_TAG, DESCRIPTION_TAG, END_MARKER,
    STOP_MARKER,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("title is empty")]
    EmptyTitle,
    #[error("no <character> entries found")]
    NoCharactersFound,
    #[error("no scenes found")]
    NoScenesFound,
    #[error("scene {0} is malformed")]
    MalformedScene(usize),
}

fn before_end(raw: &str) -> &str {
    raw.find(END_MARKER).map_or(raw, |i| &raw[..i])
}

/// First non-empty line, trimmed.
pub fn parse_title(raw: &str) -> Result<String, ParseError> {
    before_end(raw)
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(str::to_string)
        .ok_or(ParseError::EmptyTitle)
}

/// Reads `<character>NAME <description>DESC<stop>` units. A unit missing its
/// `<stop>` still counts when it runs to the end of the text or into the next
/// `<character>`. Malformed units are skipped; repeated names keep the first.
pub fn parse_characters(raw: &str) -> Result<Vec<CharacterSpec>, ParseError> {
    let text = before_end(raw);
    let mut found = Vec::new();
    for unit in text.split(CHARACTER_TAG).skip(1) {
        let unit = unit.find(STOP_MARKER).map_or(unit, |i| &unit[..i]);
        let Some((name, description)) = unit.split_once(DESCRIPTION_TAG) else {
            tracing::debug!(unit, "character unit without description tag");
            continue;
        };
        match CharacterSpec::new(name, description) {
            Ok(spec) => found.push(spec),
            Err(e) => tracing::debug!(error = %e, "skipping character unit"),
        }
    }
    let characters = dedup_characters(found);
    if characters.is_empty() {
        return Err(ParseError::NoCharactersFound);
    }
    Ok(characters)
}

#[derive(Default)]
struct PartialScene {
    place: Option<String>,
    element: Option<String>,
    beat: Option<String>,
}

impl PartialScene {
    fn finish(self, ordinal: usize) -> Result<Scene, ParseError> {
        match (self.place, self.element, self.beat) {
            (Some(place), Some(element), Some(beat)) => {
                Scene::new(place, element, beat).map_err(|_| ParseError::MalformedScene(ordinal))
            }
            _ => Err(ParseError::MalformedScene(ordinal)),
        }
    }
}

fn is_scene_header(line: &str) -> bool {
    line.strip_prefix("Scene ")
        .is_some_and(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
}

/// Reads `Place:` / `Plot element:` / `Beat:` triples. A beat continues over
/// following lines (joined with a space) until the next `Place:`. Bare
/// `Scene <n>` header lines are ignored.
pub fn parse_plot(raw: &str) -> Result<Vec<Scene>, ParseError> {
    let mut scenes = Vec::new();
    let mut current: Option<PartialScene> = None;
    let mut in_beat = false;

    for line in before_end(raw).lines() {
        let line = line.trim();
        if let Some(place) = line.strip_prefix("Place:") {
            if let Some(done) = current.take() {
                scenes.push(done.finish(scenes.len() + 1)?);
            }
            current = Some(PartialScene {
                place: Some(place.to_string()),
                ..PartialScene::default()
            });
            in_beat = false;
        } else if let Some(element) = line.strip_prefix("Plot element:") {
            let scene = current.get_or_insert_with(PartialScene::default);
            if scene.element.is_some() || scene.beat.is_some() {
                return Err(ParseError::MalformedScene(scenes.len() + 1));
            }
            scene.element = Some(element.to_string());
            in_beat = false;
        } else if let Some(beat) = line.strip_prefix("Beat:") {
            let scene = current.get_or_insert_with(PartialScene::default);
            if scene.beat.is_some() {
                return Err(ParseError::MalformedScene(scenes.len() + 1));
            }
            scene.beat = Some(beat.trim().to_string());
            in_beat = true;
        } else if in_beat && !line.is_empty() && !is_scene_header(line) {
            let beat = current
                .as_mut()
                .and_then(|s| s.beat.as_mut())
                .expect("in_beat implies an open beat");
            if !beat.is_empty() {
                beat.push(' ');
            }
            beat.push_str(line);
        }
    }
    if let Some(done) = current.take() {
        scenes.push(done.finish(scenes.len() + 1)?);
    }
    if scenes.is_empty() {
        return Err(ParseError::NoScenesFound);
    }
    Ok(scenes)
}

/// Serializes scenes in the shape [`parse_plot`] reads.
pub fn format_plot(scenes: &[Scene]) -> String {
    scenes
        .iter()
        .map(|s| {
            format!(
                "Place: {}\nPlot element: {}\nBeat: {}\n",
                s.place, s.plot_element, s.beat
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// One entry of a dialogue. Pure stage directions have an empty speaker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueLine {
    pub speaker: String,
    /// Kept verbatim, parentheses included.
    pub stage_direction: Option<String>,
    pub utterance: String,
}

/// Splits a cue line into the speaker name and an optional trailing
/// parenthetical, or returns `None` if the line is not a cue.
fn split_cue(line: &str) -> Option<(&str, Option<&str>)> {
    if line.starts_with('(') {
        return None;
    }
    let (name, extension) = match line.find('(') {
        Some(i) if line.ends_with(')') => (line[..i].trim_end(), Some(&line[i..])),
        Some(_) => return None,
        None => (line, None),
    };
    let letters = name.chars().filter(|c| c.is_alphabetic()).count();
    if letters == 0 || name.chars().any(char::is_lowercase) || name.chars().count() > 40 {
        return None;
    }
    Some((name, extension))
}

/// Number of leading lines that form one parenthetical group closing exactly at
/// a line end, if the first line opens one.
fn leading_parenthetical(lines: &[&str]) -> Option<usize> {
    if !lines.first()?.starts_with('(') {
        return None;
    }
    let mut depth = 0i32;
    for (i, line) in lines.iter().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        for (j, c) in chars.iter().enumerate() {
            match c {
                '(' => depth += 1,
                ')' => {
                    depth -= 1;
                    if depth == 0 {
                        return (j + 1 == chars.len()).then_some(i + 1);
                    }
                }
                _ => {}
            }
        }
    }
    None
}

/// Reads screenplay-style dialogue. A paragraph (blank-line separated) that
/// opens with an upper-case cue line is one speaker turn; a parenthetical
/// directly under the cue becomes its stage direction. Any other paragraph is
/// kept as a stage direction with no speaker.
pub fn parse_dialogue(raw: &str) -> Vec<DialogueLine> {
    let mut entries = Vec::new();
    let mut paragraph: Vec<&str> = Vec::new();
    let text = before_end(raw);
    for line in text.lines().chain(std::iter::once("")) {
        let line = line.trim();
        if !line.is_empty() {
            paragraph.push(line);
            continue;
        }
        if paragraph.is_empty() {
            continue;
        }
        entries.push(paragraph_entry(&paragraph));
        paragraph.clear();
    }
    entries
}

fn paragraph_entry(lines: &[&str]) -> DialogueLine {
    match split_cue(lines[0]) {
        Some((speaker, extension)) => {
            let rest = &lines[1..];
            let (direction, utterance) = match leading_parenthetical(rest) {
                Some(n) => (Some(rest[..n].join("\n")), &rest[n..]),
                None => (None, rest),
            };
            let stage_direction = match (extension, direction) {
                (Some(ext), Some(dir)) => Some(format!("{ext}\n{dir}")),
                (ext, dir) => dir.or(ext.map(str::to_string)),
            };
            DialogueLine {
                speaker: speaker.to_string(),
                stage_direction,
                utterance: utterance.join("\n"),
            }
        }
        None => DialogueLine {
            speaker: String::new(),
            stage_direction: Some(lines.join("\n")),
            utterance: String::new(),
        },
    }
}
