//! Prompt sets and prompt rendering.
//!
//! A prompt set bundles five few-shot templates, one per generation family.
//! Sets are stored as `.promptset` text files:
//!
//! ```text
//! @family title
//! ...verbatim template body...
//! @family plot
//! @repeat CHARACTER_DESCRIPTION
//! ...
//! ```
//!
//! A section body runs from the line after its `@family` header up to the next
//! header or end of file, minus the final line break. `@repeat NAME` declares a
//! placeholder that expands once per item: one line per item when the
//! placeholder sits alone on its line, space-joined otherwise.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::story::{find_reserved_token, CharacterSpec, LogLine, Scene, END_MARKER};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PromptError {
    #[error("prompt set {set}: line {line}: {message}")]
    Parse {
        set: String,
        line: usize,
        message: String,
    },
    #[error("prompt set {set}: {family} template uses unknown placeholder {token}")]
    UnknownPlaceholder {
        set: String,
        family: PromptFamily,
        token: String,
    },
    #[error("prompt set {set}: {family} template lacks placeholder <{placeholder}>")]
    MissingPlaceholder {
        set: String,
        family: PromptFamily,
        placeholder: &'static str,
    },
    #[error("prompt set {set}: missing {family} section")]
    MissingFamily { set: String, family: PromptFamily },
    #[error("prompt set {set}: {family} examples must end with {END_MARKER} before the template")]
    MissingEndMarker { set: String, family: PromptFamily },
    #[error("invalid log line: {0}")]
    InvalidLogLine(String),
    #[error("plot prompt needs at least one character")]
    EmptyCharacterList,
    #[error("location name is empty")]
    EmptyLocationName,
    #[error("input contains reserved token {0}")]
    ReservedToken(String),
    #[error("unknown prompt set {0}")]
    UnknownSet(String),
    #[error("cannot read prompt set: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptFamily {
    Title,
    Character,
    Plot,
    Location,
    Dialogue,
}

impl PromptFamily {
    pub const ALL: [PromptFamily; 5] = [
        PromptFamily::Title,
        PromptFamily::Character,
        PromptFamily::Plot,
        PromptFamily::Location,
        PromptFamily::Dialogue,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptFamily::Title => "title",
            PromptFamily::Character => "character",
            PromptFamily::Plot => "plot",
            PromptFamily::Location => "location",
            PromptFamily::Dialogue => "dialogue",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == name)
    }

    fn required(self) -> &'static [Placeholder] {
        use Placeholder::*;
        match self {
            PromptFamily::Title | PromptFamily::Character => &[LogLine],
            PromptFamily::Plot => &[LogLine, CharacterDescription],
            PromptFamily::Location => &[LogLine, LocationName],
            PromptFamily::Dialogue => &[
                PlaceName,
                PlaceDescription,
                CharacterDescription,
                PlotElement,
                LogLine,
                PreviousBeat,
                Beat,
            ],
        }
    }
}

impl fmt::Display for PromptFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Placeholder {
    LogLine,
    CharacterDescription,
    LocationName,
    PlaceName,
    PlaceDescription,
    PlotElement,
    Beat,
    PreviousBeat,
}

impl Placeholder {
    const ALL: [Placeholder; 8] = [
        Placeholder::LogLine,
        Placeholder::CharacterDescription,
        Placeholder::LocationName,
        Placeholder::PlaceName,
        Placeholder::PlaceDescription,
        Placeholder::PlotElement,
        Placeholder::Beat,
        Placeholder::PreviousBeat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Placeholder::LogLine => "LOG_LINE",
            Placeholder::CharacterDescription => "CHARACTER_DESCRIPTION",
            Placeholder::LocationName => "LOCATION_NAME",
            Placeholder::PlaceName => "PLACE_NAME",
            Placeholder::PlaceDescription => "PLACE_DESCRIPTION",
            Placeholder::PlotElement => "PLOT_ELEMENT",
            Placeholder::Beat => "BEAT",
            Placeholder::PreviousBeat => "PREVIOUS_BEAT",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot { placeholder: Placeholder, own_line: bool },
}

/// A template body with its placeholders located.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateText {
    body: String,
    segments: Vec<Segment>,
    repeatable: Option<Placeholder>,
}

impl TemplateText {
    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn placeholders(&self) -> BTreeSet<Placeholder> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot { placeholder, .. } => Some(*placeholder),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    fn render(&self, values: &BTreeMap<Placeholder, Value<'_>>) -> String {
        let mut out = String::with_capacity(self.body.len() + 512);
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                Segment::Slot {
                    placeholder,
                    own_line,
                } => match values.get(placeholder) {
                    Some(Value::One(text)) => out.push_str(text),
                    Some(Value::Many(items)) => {
                        out.push_str(&items.join(if *own_line { "\n" } else { " " }))
                    }
                    None => unreachable!("template validated against family placeholders"),
                },
            }
        }
        out
    }
}

enum Value<'a> {
    One(&'a str),
    Many(Vec<String>),
}

/// A fully rendered prompt ready for the gateway.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub family: PromptFamily,
    pub stop_markers: Vec<String>,
}

impl Prompt {
    fn new(text: String, family: PromptFamily) -> Self {
        Self {
            text,
            family,
            stop_markers: vec![END_MARKER.to_string()],
        }
    }

    /// Hex SHA-256 of the prompt text.
    pub fn digest(&self) -> String {
        prompt_digest(&self.text)
    }
}

pub fn prompt_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// The five templates defining one prompting style.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub name: String,
    pub title_prefix: TemplateText,
    pub character_prefix: TemplateText,
    pub plot_prefix: TemplateText,
    pub location_prefix: TemplateText,
    pub dialogue_prefix: TemplateText,
}

pub const MEDEA_SOURCE: &str = include_str!("../../../prompts/medea.promptset");
pub const SCIFI_SOURCE: &str = include_str!("../../../prompts/scifi.promptset");

impl PromptSet {
    pub fn medea() -> Self {
        Self::parse("medea", MEDEA_SOURCE).expect("shipped medea prompt set is valid")
    }

    pub fn scifi() -> Self {
        Self::parse("scifi", SCIFI_SOURCE).expect("shipped scifi prompt set is valid")
    }

    pub fn from_reader(name: &str, mut reader: impl Read) -> Result<Self, PromptError> {
        let mut source = String::new();
        reader
            .read_to_string(&mut source)
            .map_err(|e| PromptError::Io(format!("{name}: {e}")))?;
        Self::parse(name, &source)
    }

    /// Loads a `.promptset` file; the set is named after the file stem.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("unnamed")
            .to_string();
        let file = std::fs::File::open(path)
            .map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))?;
        Self::from_reader(&name, file)
    }

    pub fn parse(name: &str, source: &str) -> Result<Self, PromptError> {
        let parse_err = |line: usize, message: String| PromptError::Parse {
            set: name.to_string(),
            line,
            message,
        };

        struct Section {
            body: String,
            repeat: Option<(usize, String)>,
        }
        let mut sections: BTreeMap<PromptFamily, Section> = BTreeMap::new();
        let mut current: Option<PromptFamily> = None;

        for (idx, line) in source.split_inclusive('\n').enumerate() {
            let lineno = idx + 1;
            let content = line.trim_end_matches(['\n', '\r']);
            if let Some(rest) = content.strip_prefix("@family") {
                let family_name = rest.trim();
                let family = PromptFamily::from_name(family_name)
                    .ok_or_else(|| parse_err(lineno, format!("unknown family {family_name:?}")))?;
                if sections.contains_key(&family) {
                    return Err(parse_err(lineno, format!("duplicate {family} section")));
                }
                sections.insert(
                    family,
                    Section {
                        body: String::new(),
                        repeat: None,
                    },
                );
                current = Some(family);
                continue;
            }
            let Some(family) = current else {
                if content.trim().is_empty() {
                    continue;
                }
                return Err(parse_err(lineno, "text before the first @family header".into()));
            };
            let section = sections.get_mut(&family).expect("section opened");
            if let Some(rest) = content.strip_prefix("@repeat") {
                if section.repeat.is_some() {
                    return Err(parse_err(lineno, "only one @repeat per section".into()));
                }
                section.repeat = Some((lineno, rest.trim().to_string()));
                continue;
            }
            section.body.push_str(line);
        }

        let mut templates = BTreeMap::new();
        for family in PromptFamily::ALL {
            let section = sections.remove(&family).ok_or_else(|| PromptError::MissingFamily {
                set: name.to_string(),
                family,
            })?;
            let mut body = section.body;
            if body.ends_with('\n') {
                body.pop();
                if body.ends_with('\r') {
                    body.pop();
                }
            }
            let repeatable = match section.repeat {
                None => None,
                Some((line, token)) => match Placeholder::from_name(&token) {
                    Some(Placeholder::CharacterDescription)
                        if matches!(family, PromptFamily::Plot | PromptFamily::Dialogue) =>
                    {
                        Some(Placeholder::CharacterDescription)
                    }
                    _ => return Err(parse_err(line, format!("{token} cannot repeat in {family}"))),
                },
            };
            templates.insert(family, build_template(name, family, body, repeatable)?);
        }

        let mut take = |f| templates.remove(&f).expect("all families built");
        Ok(Self {
            name: name.to_string(),
            title_prefix: take(PromptFamily::Title),
            character_prefix: take(PromptFamily::Character),
            plot_prefix: take(PromptFamily::Plot),
            location_prefix: take(PromptFamily::Location),
            dialogue_prefix: take(PromptFamily::Dialogue),
        })
    }

    pub fn template(&self, family: PromptFamily) -> &TemplateText {
        match family {
            PromptFamily::Title => &self.title_prefix,
            PromptFamily::Character => &self.character_prefix,
            PromptFamily::Plot => &self.plot_prefix,
            PromptFamily::Location => &self.location_prefix,
            PromptFamily::Dialogue => &self.dialogue_prefix,
        }
    }

    pub fn render_title_prompt(&self, log_line: &LogLine) -> Prompt {
        let values = BTreeMap::from([(Placeholder::LogLine, Value::One(log_line.as_str()))]);
        Prompt::new(self.title_prefix.render(&values), PromptFamily::Title)
    }

    pub fn render_character_prompt(&self, log_line: &LogLine) -> Prompt {
        let values = BTreeMap::from([(Placeholder::LogLine, Value::One(log_line.as_str()))]);
        Prompt::new(self.character_prefix.render(&values), PromptFamily::Character)
    }

    pub fn render_plot_prompt(
        &self,
        log_line: &LogLine,
        characters: &[CharacterSpec],
    ) -> Result<Prompt, PromptError> {
        if characters.is_empty() {
            return Err(PromptError::EmptyCharacterList);
        }
        let values = BTreeMap::from([
            (Placeholder::LogLine, Value::One(log_line.as_str())),
            (
                Placeholder::CharacterDescription,
                Value::Many(characters.iter().map(CharacterSpec::prompt_line).collect()),
            ),
        ]);
        Ok(Prompt::new(self.plot_prefix.render(&values), PromptFamily::Plot))
    }

    pub fn render_location_prompt(
        &self,
        log_line: &LogLine,
        location_name: &str,
    ) -> Result<Prompt, PromptError> {
        let location_name = location_name.trim();
        if location_name.is_empty() {
            return Err(PromptError::EmptyLocationName);
        }
        if let Some(token) = find_reserved_token(location_name) {
            return Err(PromptError::ReservedToken(token.to_string()));
        }
        let values = BTreeMap::from([
            (Placeholder::LogLine, Value::One(log_line.as_str())),
            (Placeholder::LocationName, Value::One(location_name)),
        ]);
        Ok(Prompt::new(
            self.location_prefix.render(&values),
            PromptFamily::Location,
        ))
    }

    /// `characters` should already be narrowed to the scene with
    /// [`select_characters_for_beat`]. The previous beat is empty for scene 1.
    pub fn render_dialogue_prompt(
        &self,
        log_line: &LogLine,
        scene: &Scene,
        previous_beat: Option<&str>,
        location_description: &str,
        characters: &[CharacterSpec],
    ) -> Prompt {
        if characters.is_empty() {
            tracing::warn!(place = %scene.place, "dialogue prompt rendered without characters");
        }
        let values = BTreeMap::from([
            (Placeholder::PlaceName, Value::One(scene.place.as_str())),
            (Placeholder::PlaceDescription, Value::One(location_description)),
            (
                Placeholder::CharacterDescription,
                Value::Many(characters.iter().map(CharacterSpec::prompt_line).collect()),
            ),
            (Placeholder::PlotElement, Value::One(scene.plot_element.as_str())),
            (Placeholder::LogLine, Value::One(log_line.as_str())),
            (Placeholder::PreviousBeat, Value::One(previous_beat.unwrap_or(""))),
            (Placeholder::Beat, Value::One(scene.beat.as_str())),
        ]);
        Prompt::new(
            self.dialogue_prefix.render(&values),
            PromptFamily::Dialogue,
        )
    }
}

fn build_template(
    set: &str,
    family: PromptFamily,
    body: String,
    repeatable: Option<Placeholder>,
) -> Result<TemplateText, PromptError> {
    let mut segments = Vec::new();
    let mut rest = body.as_str();
    let mut consumed = 0;
    while let Some(token) = crate::story::find_placeholder_token(rest) {
        let start = token.as_ptr() as usize - rest.as_ptr() as usize;
        let name = &token[1..token.len() - 1];
        let placeholder = Placeholder::from_name(name)
            .filter(|p| family.required().contains(p))
            .ok_or_else(|| PromptError::UnknownPlaceholder {
                set: set.to_string(),
                family,
                token: token.to_string(),
            })?;
        if start > 0 {
            segments.push(Segment::Literal(rest[..start].to_string()));
        }
        let abs = consumed + start;
        let end = abs + token.len();
        let own_line = (abs == 0 || body.as_bytes()[abs - 1] == b'\n')
            && (end == body.len() || body.as_bytes()[end] == b'\n');
        segments.push(Segment::Slot {
            placeholder,
            own_line,
        });
        consumed = end;
        rest = &body[end..];
    }
    if !rest.is_empty() {
        segments.push(Segment::Literal(rest.to_string()));
    }

    let template = TemplateText {
        body: body.clone(),
        segments,
        repeatable,
    };
    let found = template.placeholders();
    for required in family.required() {
        if !found.contains(required) {
            return Err(PromptError::MissingPlaceholder {
                set: set.to_string(),
                family,
                placeholder: required.name(),
            });
        }
    }
    if family.required().contains(&Placeholder::CharacterDescription) {
        let count = template
            .segments
            .iter()
            .filter(|s| matches!(s, Segment::Slot { placeholder: Placeholder::CharacterDescription, .. }))
            .count();
        if template.repeatable != Some(Placeholder::CharacterDescription) || count != 1 {
            return Err(PromptError::Parse {
                set: set.to_string(),
                line: 0,
                message: format!(
                    "{family} template must use <CHARACTER_DESCRIPTION> exactly once, declared with @repeat"
                ),
            });
        }
    }

    let first_placeholder = crate::story::find_placeholder_token(&body)
        .and_then(|t| body.find(t))
        .unwrap_or(body.len());
    match body.rfind(END_MARKER) {
        Some(pos) if pos < first_placeholder => Ok(template),
        _ => Err(PromptError::MissingEndMarker {
            set: set.to_string(),
            family,
        }),
    }
}

/// Characters whose name occurs in `beat` (case-sensitive substring), in input order.
pub fn select_characters_for_beat(characters: &[CharacterSpec], beat: &str) -> Vec<CharacterSpec> {
    characters
        .iter()
        .filter(|c| beat.contains(c.name.as_str()))
        .cloned()
        .collect()
}

/// Named prompt sets available to an engine.
#[derive(Debug, Clone, Default)]
pub struct PromptLibrary {
    sets: BTreeMap<String, Arc<PromptSet>>,
}

impl PromptLibrary {
    /// The two shipped sets, `medea` and `scifi`.
    pub fn builtin() -> Self {
        let mut lib = Self::default();
        lib.insert(PromptSet::medea());
        lib.insert(PromptSet::scifi());
        lib
    }

    pub fn insert(&mut self, set: PromptSet) {
        self.sets.insert(set.name.clone(), Arc::new(set));
    }

    /// Adds every `*.promptset` file in `dir`, replacing same-named sets.
    pub fn load_dir(&mut self, dir: impl AsRef<Path>) -> Result<usize, PromptError> {
        let mut loaded = 0;
        let mut paths: Vec<_> = std::fs::read_dir(dir.as_ref())
            .map_err(|e| PromptError::Io(format!("{}: {e}", dir.as_ref().display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "promptset"))
            .collect();
        paths.sort();
        for path in paths {
            self.insert(PromptSet::from_path(&path)?);
            loaded += 1;
        }
        Ok(loaded)
    }

    pub fn get(&self, name: &str) -> Result<Arc<PromptSet>, PromptError> {
        self.sets
            .get(name)
            .cloned()
            .ok_or_else(|| PromptError::UnknownSet(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        self.sets.keys().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ll(text: &str) -> LogLine {
        LogLine::new(text).unwrap()
    }

    fn character(name: &str, description: &str) -> CharacterSpec {
        CharacterSpec::new(name, description).unwrap()
    }

    const MINIMAL: &str = "@family title\nEx 1. a Title: b<end>\n\nEx 2. <LOG_LINE> Title:\n\
@family character\nx<end>\n<LOG_LINE>\n\
@family plot\n@repeat CHARACTER_DESCRIPTION\nx<end>\n<LOG_LINE>\n<CHARACTER_DESCRIPTION>\n<scenes>\n\
@family location\nx<end>\n<LOG_LINE>\nPlace: <LOCATION_NAME>\nDescription:\n\
@family dialogue\n@repeat CHARACTER_DESCRIPTION\nx<end>\n<PLACE_NAME> <PLACE_DESCRIPTION> Characters: <CHARACTER_DESCRIPTION> <PLOT_ELEMENT> <LOG_LINE> <PREVIOUS_BEAT> <BEAT>\n";

    #[test]
    fn shipped_sets_load() {
        let medea = PromptSet::medea();
        assert!(medea
            .title_prefix
            .body()
            .ends_with("Example 4. <LOG_LINE> Title:"));
        assert!(medea.character_prefix.body().ends_with("Example 2. <LOG_LINE>\n"));
        let scifi = PromptSet::scifi();
        assert!(scifi.title_prefix.body().ends_with("Example 3. <LOG_LINE> Title:"));
        assert_eq!(PromptLibrary::builtin().names(), vec!["medea", "scifi"]);
    }

    #[test]
    fn missing_family_is_reported() {
        let source = MINIMAL.split("@family dialogue").next().unwrap();
        let err = PromptSet::parse("t", source).unwrap_err();
        assert!(
            matches!(err, PromptError::MissingFamily { family: PromptFamily::Dialogue, .. }),
            "{err}"
        );
    }

    #[test]
    fn unknown_placeholder_is_reported() {
        let source = MINIMAL.replace("Ex 2. <LOG_LINE> Title:", "Ex 2. <LOG_LINE> <WHATEVER> Title:");
        let err = PromptSet::parse("t", &source).unwrap_err();
        assert!(
            matches!(&err, PromptError::UnknownPlaceholder { token, family: PromptFamily::Title, .. } if token == "<WHATEVER>"),
            "{err}"
        );
        // a known placeholder in the wrong family is just as unknown
        let source = MINIMAL.replace("Ex 2. <LOG_LINE> Title:", "Ex 2. <LOG_LINE> <BEAT> Title:");
        assert!(matches!(
            PromptSet::parse("t", &source),
            Err(PromptError::UnknownPlaceholder { .. })
        ));
    }

    #[test]
    fn structural_errors() {
        let no_end = MINIMAL.replace("Ex 1. a Title: b<end>", "Ex 1. a Title: b");
        assert!(matches!(
            PromptSet::parse("t", &no_end),
            Err(PromptError::MissingEndMarker { family: PromptFamily::Title, .. })
        ));
        let no_repeat = MINIMAL.replacen("@repeat CHARACTER_DESCRIPTION\n", "", 1);
        assert!(matches!(PromptSet::parse("t", &no_repeat), Err(PromptError::Parse { .. })));
        let stray = format!("hello\n{MINIMAL}");
        assert!(matches!(
            PromptSet::parse("t", &stray),
            Err(PromptError::Parse { line: 1, .. })
        ));
        let dup = format!("{MINIMAL}@family title\nx\n");
        assert!(matches!(PromptSet::parse("t", &dup), Err(PromptError::Parse { .. })));
        let no_log = MINIMAL.replace("Place: <LOCATION_NAME>", "Place:");
        assert!(matches!(
            PromptSet::parse("t", &no_log),
            Err(PromptError::MissingPlaceholder { placeholder: "LOCATION_NAME", .. })
        ));
    }

    #[test]
    fn title_prompt() {
        let l = ll("Grandma Phyllis and Grandpa Jim [...]");
        let p = PromptSet::medea().render_title_prompt(&l);
        assert!(p.text.ends_with("Example 4. Grandma Phyllis and Grandpa Jim [...] Title:"));
        assert_eq!(p.stop_markers, vec!["<end>"]);
        assert_eq!(p.family, PromptFamily::Title);
        let p = PromptSet::scifi().render_title_prompt(&l);
        assert!(p
            .text
            .contains("Example 2. Residents of San Fernando Valley are under attack"));
    }

    #[test]
    fn character_prompt() {
        let l = ll("A story.");
        let p = PromptSet::medea().render_character_prompt(&l);
        assert!(p.text.ends_with("Example 2. A story.\n"));
        let p = PromptSet::scifi().render_character_prompt(&l);
        assert_eq!(p.text.matches("<character>").count(), 6);
        assert!(LogLine::new("bad <stop>").is_err());
    }

    #[test]
    fn plot_prompt_expands_one_line_per_character() {
        let l = ll("L.");
        let cast = [
            character("Ann", "Ann is a pilot."),
            character("Bo", "A sailor."),
            character("Cy", "Cy cooks."),
        ];
        let p = PromptSet::medea().render_plot_prompt(&l, &cast).unwrap();
        assert!(p
            .text
            .ends_with("Example 2. L.\nAnn is a pilot.\nBo: A sailor.\nCy cooks.\n\n<scenes>"));
        let p = PromptSet::medea().render_plot_prompt(&l, &cast[..1]).unwrap();
        assert!(p.text.ends_with("Example 2. L.\nAnn is a pilot.\n\n<scenes>"));
        assert!(matches!(
            PromptSet::medea().render_plot_prompt(&l, &[]),
            Err(PromptError::EmptyCharacterList)
        ));
    }

    #[test]
    fn location_prompt() {
        let l = ll("L.");
        let p = PromptSet::medea()
            .render_location_prompt(&l, "Outside the Royal Palace.")
            .unwrap();
        assert!(p.text.ends_with("Place: Outside the Royal Palace.\nDescription:"));
        let p = PromptSet::scifi().render_location_prompt(&l, "The well.").unwrap();
        assert!(p.text.contains("James finds a well in his backyard"));
        assert!(matches!(
            PromptSet::medea().render_location_prompt(&l, "  "),
            Err(PromptError::EmptyLocationName)
        ));
    }

    #[test]
    fn dialogue_prompt_first_scene_has_empty_previous_beat() {
        let scene = Scene::new("The bar.", "Exposition.", "Ann pours a drink.").unwrap();
        let cast = [character("Ann", "Ann is a pilot.")];
        let p = PromptSet::medea().render_dialogue_prompt(&ll("L."), &scene, None, "Dim.", &cast);
        assert!(p.text.ends_with(
            "Example 2.\nPlace: The bar.\nDescription: Dim.\nCharacters: Ann is a pilot.\nPlot element: Exposition.\nSummary: L.\nPrevious beat: \nBeat: Ann pours a drink.\n\n<dialog>"
        ));
    }

    #[test]
    fn dialogue_prompt_reproduces_medea_example_shape() {
        // Feed Example 1's own scene data back through the template; the rendered
        // Example 2 must read exactly like Example 1's header.
        let medea = PromptSet::medea();
        let body = medea.dialogue_prefix.body();
        let header_end = body.find("\n\n<dialog>").unwrap();
        let example1_header = &body["Example 1.\n".len()..header_end];
        let field = |label: &str| {
            example1_header
                .lines()
                .find_map(|l| l.strip_prefix(label))
                .unwrap()
                .to_string()
        };
        let summary = field("Summary: ");
        let scene = Scene::new(field("Place: "), field("Plot element: "), field("Beat: ")).unwrap();
        let cast_line = field("Characters: ");
        let (medea_desc, rest) = cast_line.split_at(cast_line.find(" Jason can be").unwrap());
        let (jason_desc, messenger_desc) = rest[1..].split_at(rest[1..].find(" The Messenger").unwrap());
        let cast = vec![
            character("Medea", medea_desc),
            character("Jason", jason_desc),
            character("The Messenger", &messenger_desc[1..]),
        ];
        let p = medea.render_dialogue_prompt(
            &ll(&summary),
            &scene,
            Some(&field("Previous beat: ")),
            &field("Description: "),
            &cast,
        );
        let rendered_header = p.text.rsplit("Example 2.\n").next().unwrap();
        assert_eq!(
            rendered_header,
            format!("{example1_header}\n\n<dialog>")
        );
    }

    #[test]
    fn select_characters_examples() {
        let medea_cast: Vec<CharacterSpec> = [
            "Medea",
            "Jason",
            "Women of Corinth",
            "Creon",
            "The Nurse",
        ]
        .iter()
        .map(|n| character(n, &format!("{n} is here.")))
        .collect();
        let picked = select_characters_for_beat(
            &medea_cast,
            "Medea denies Jason the right to a proper burial of his children.",
        );
        let names: Vec<_> = picked.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, vec!["Medea", "Jason"]);
        assert!(select_characters_for_beat(&medea_cast, "").is_empty());
        let jo = [character("Jo", "Jo."), character("Joanna", "Joanna.")];
        assert_eq!(select_characters_for_beat(&jo, "Joanna waves").len(), 2);
    }

    #[test]
    fn empty_character_list_renders() {
        let scene = Scene::new("P", "Climax", "Nobody known appears.").unwrap();
        let cast = [character("Ann", "Ann.")];
        let selected = select_characters_for_beat(&cast, &scene.beat);
        assert!(selected.is_empty());
        let p = PromptSet::scifi().render_dialogue_prompt(&ll("L"), &scene, Some("x"), "d", &selected);
        assert!(p.text.contains("\nCharacters: \nPlot element: Climax\n"));
    }

    #[test]
    fn library_loads_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("mini.promptset"), MINIMAL).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let mut lib = PromptLibrary::builtin();
        assert_eq!(lib.load_dir(dir.path()).unwrap(), 1);
        assert_eq!(lib.names(), vec!["medea", "mini", "scifi"]);
        assert!(matches!(lib.get("nope"), Err(PromptError::UnknownSet(_))));
    }
}
