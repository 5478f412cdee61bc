//! A complete worked example: a lounge-singer story whose model outputs are
//! recorded as fixtures, plus a mock script that replays them for any
//! prompt set.

use crate::engine::parse::{parse_characters, parse_plot};
use crate::gateway::MockEntry;
use crate::prompt::{select_characters_for_beat, PromptSet};
use crate::story::{unique_locations, LogLine};

pub const LOG_LINE: &str = include_str!("../fixtures/teddy/log_line.txt");
pub const TITLE_OUTPUT: &str = include_str!("../fixtures/teddy/title.out");
pub const CHARACTERS_OUTPUT: &str = include_str!("../fixtures/teddy/characters.out");
pub const PLOT_OUTPUT: &str = include_str!("../fixtures/teddy/plot.out");
pub const LOCATION_OUTPUT: &str = include_str!("../fixtures/teddy/location.out");
pub const DIALOGUE_1_SEED_1: &str = include_str!("../fixtures/teddy/dialogue_1_seed_1.out");
pub const DIALOGUE_1_SEED_2: &str = include_str!("../fixtures/teddy/dialogue_1_seed_2.out");
pub const DIALOGUE_2_SEED_1: &str = include_str!("../fixtures/teddy/dialogue_2_seed_1.out");

/// Output used for scenes whose dialogue was not recorded.
pub const EMPTY_OUTPUT: &str = "<end>";

pub fn log_line() -> LogLine {
    LogLine::new(LOG_LINE.trim_end()).expect("fixture log line is valid")
}

/// Mock entries answering every prompt of a full run over `set` at `seed`.
///
/// Scene 1 also gets its second recorded dialogue at `seed + 1`.
pub fn mock_entries(set: &PromptSet, seed: u64) -> Vec<MockEntry> {
    let log = log_line();
    let characters = parse_characters(CHARACTERS_OUTPUT).expect("fixture characters parse");
    let scenes = parse_plot(PLOT_OUTPUT).expect("fixture plot parses");
    let description = LOCATION_OUTPUT
        .split("<end>")
        .next()
        .unwrap_or_default()
        .trim();

    let mut entries = vec![
        MockEntry::new(&set.render_title_prompt(&log).text, seed, TITLE_OUTPUT),
        MockEntry::new(&set.render_character_prompt(&log).text, seed, CHARACTERS_OUTPUT),
        MockEntry::new(
            &set.render_plot_prompt(&log, &characters)
                .expect("fixture has characters")
                .text,
            seed,
            PLOT_OUTPUT,
        ),
    ];
    for place in unique_locations(&scenes) {
        let prompt = set
            .render_location_prompt(&log, &place)
            .expect("fixture place is valid");
        entries.push(MockEntry::new(&prompt.text, seed, LOCATION_OUTPUT));
    }
    for (i, scene) in scenes.iter().enumerate() {
        let previous = i.checked_sub(1).map(|p| scenes[p].beat.as_str());
        let cast = select_characters_for_beat(&characters, &scene.beat);
        let prompt = set.render_dialogue_prompt(&log, scene, previous, description, &cast);
        let output = match i {
            0 => DIALOGUE_1_SEED_1,
            1 => DIALOGUE_2_SEED_1,
            _ => EMPTY_OUTPUT,
        };
        entries.push(MockEntry::new(&prompt.text, seed, output));
        if i == 0 {
            entries.push(MockEntry::new(&prompt.text, seed + 1, DIALOGUE_1_SEED_2));
        }
    }
    entries
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_parse() {
        assert_eq!(parse_characters(CHARACTERS_OUTPUT).unwrap().len(), 5);
        let scenes = parse_plot(PLOT_OUTPUT).unwrap();
        assert_eq!(scenes.len(), 8);
        assert_eq!(scenes[0].plot_element, "Exposition.");
        assert_eq!(scenes[0].place, "The Pool Pit.");
        assert!(log_line().as_str().starts_with("Teddy is a lounge singer"));
    }

    #[test]
    fn one_entry_per_prompt() {
        let entries = mock_entries(&PromptSet::medea(), 1);
        // title, characters, plot, one location, eight dialogues, one extra seed
        assert_eq!(entries.len(), 3 + 1 + 8 + 1);
    }
}
