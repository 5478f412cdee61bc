//! Rendered prompts must match the hand-assembled golden prompts byte for byte
//! (up to a trailing newline).

use dramaturg_core::engine::parse::{parse_characters, parse_plot};
use dramaturg_core::prompt::{select_characters_for_beat, PromptFamily, PromptSet};
use dramaturg_core::sample;
use dramaturg_core::story::{unique_locations, CharacterSpec, Scene};

fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/prompts/{name}.txt", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn same(actual: &str, expected: &str, label: &str) {
    let a = actual.trim_end_matches('\n');
    let e = expected.trim_end_matches('\n');
    if a != e {
        let at = a
            .chars()
            .zip(e.chars())
            .position(|(x, y)| x != y)
            .unwrap_or(a.len().min(e.len()));
        panic!(
            "{label}: prompts differ at char {at}\nactual:   {:?}\nexpected: {:?}",
            a.chars().skip(at.saturating_sub(40)).take(120).collect::<String>(),
            e.chars().skip(at.saturating_sub(40)).take(120).collect::<String>()
        );
    }
}

struct Inputs {
    characters: Vec<CharacterSpec>,
    scenes: Vec<Scene>,
    description: String,
}

fn inputs() -> Inputs {
    Inputs {
        characters: parse_characters(sample::CHARACTERS_OUTPUT).unwrap(),
        scenes: parse_plot(sample::PLOT_OUTPUT).unwrap(),
        description: sample::LOCATION_OUTPUT.split("<end>").next().unwrap().trim().to_string(),
    }
}

fn check_set(name: &str, set: &PromptSet) {
    let input = inputs();
    let log = sample::log_line();
    same(&set.render_title_prompt(&log).text, &golden(&format!("{name}_title")), "title");
    same(
        &set.render_character_prompt(&log).text,
        &golden(&format!("{name}_character")),
        "character",
    );
    same(
        &set.render_plot_prompt(&log, &input.characters).unwrap().text,
        &golden(&format!("{name}_plot")),
        "plot",
    );
    let place = &unique_locations(&input.scenes)[0];
    same(
        &set.render_location_prompt(&log, place).unwrap().text,
        &golden(&format!("{name}_location")),
        "location",
    );
    for k in 1..=2 {
        let scene = &input.scenes[k - 1];
        let previous = (k > 1).then(|| input.scenes[k - 2].beat.as_str());
        let cast = select_characters_for_beat(&input.characters, &scene.beat);
        let prompt = set.render_dialogue_prompt(&log, scene, previous, &input.description, &cast);
        assert_eq!(prompt.family, PromptFamily::Dialogue);
        same(&prompt.text, &golden(&format!("{name}_dialogue_scene{k}")), "dialogue");
    }
}

#[test]
fn medea_prompts_match_golden() {
    check_set("medea", &PromptSet::medea());
}

#[test]
fn scifi_prompts_match_golden() {
    check_set("scifi", &PromptSet::scifi());
}

#[test]
fn shipped_examples_parse() {
    let medea = PromptSet::medea();
    let characters = parse_characters(medea.template(PromptFamily::Character).body()).unwrap();
    assert_eq!(characters.len(), 5);
    assert_eq!(characters[0].name, "Medea");

    let scenes = parse_plot(medea.template(PromptFamily::Plot).body()).unwrap();
    assert_eq!(scenes.len(), 9);
    assert_eq!(scenes.last().unwrap().plot_element, "Denouement.");
    assert!(scenes.iter().all(|s| s.canonical_element));
}

#[test]
fn every_prompt_ends_with_the_open_slot() {
    let log = sample::log_line();
    for set in [PromptSet::medea(), PromptSet::scifi()] {
        assert!(set.render_title_prompt(&log).text.ends_with("Title:"));
        assert!(set.render_location_prompt(&log, "X").unwrap().text.ends_with("Description:"));
        let input = inputs();
        assert!(set
            .render_plot_prompt(&log, &input.characters)
            .unwrap()
            .text
            .ends_with("<scenes>"));
    }
}
