//! Full run over the recorded lounge-singer fixtures.

use std::sync::Arc;

use dramaturg_core::engine::parse::parse_dialogue;
use dramaturg_core::gateway::{GatewayConfig, MockBackend};
use dramaturg_core::script::{assemble_script, export_plaintext, flatten_text};
use dramaturg_core::story::{Provenance, SlotAddress};
use dramaturg_core::{sample, Engine, FixedClock, Gateway, PromptLibrary, PromptSet, SeedPolicy};
use uuid::Uuid;

fn golden(name: &str) -> String {
    std::fs::read_to_string(format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn engine_for(set: &PromptSet) -> (Engine, Arc<MockBackend>) {
    let mock = Arc::new(MockBackend::scripted(sample::mock_entries(set, 1)));
    let gateway = Arc::new(Gateway::new(mock.clone(), GatewayConfig::default()));
    let engine = Engine::new(gateway, Arc::new(PromptLibrary::builtin()))
        .with_clock(Arc::new(FixedClock::default()));
    (engine, mock)
}

async fn full_run(set_name: &str) -> (Engine, Arc<MockBackend>, dramaturg_core::StorySession) {
    let set = PromptLibrary::builtin().get(set_name).unwrap();
    let (engine, mock) = engine_for(&set);
    let mut session = engine
        .new_session_with_id(Uuid::nil(), sample::LOG_LINE.trim_end(), set_name)
        .unwrap();
    let report = engine
        .generate_full(&mut session, SeedPolicy::Fixed { seed: 1 })
        .await
        .unwrap();
    assert!(report.unresolved_loops.is_empty());
    (engine, mock, session)
}

#[tokio::test]
async fn flattened_script_matches_golden() {
    for set in ["medea", "scifi"] {
        let (_, mock, session) = full_run(set).await;
        // title, characters, plot, one location, eight dialogues; nothing unscripted
        assert_eq!(mock.calls(), 12, "{set}");
        let doc = assemble_script(&session).unwrap();
        assert_eq!(doc.title.as_deref(), Some("The Day The Pool Pit Burned Down"));
        assert_eq!(doc.scenes.len(), 8);
        assert_eq!(doc.scenes[0].scene.plot_element, "Exposition.");
        assert_eq!(flatten_text(&doc), golden("teddy_flattened.txt"), "{set}");
        assert!(doc.provenance.iter().all(|p| p.provenance == Provenance::Generated));
    }
}

#[tokio::test]
async fn export_matches_golden() {
    let (_, _, session) = full_run("medea").await;
    let doc = assemble_script(&session).unwrap();
    let export = export_plaintext(&doc);
    assert_eq!(export, golden("teddy_export.txt"));
    assert_eq!(export, export_plaintext(&assemble_script(&session).unwrap()));
}

#[tokio::test]
async fn exported_dialogue_reparses() {
    let (_, _, session) = full_run("medea").await;
    let doc = assemble_script(&session).unwrap();
    let export = export_plaintext(&doc);
    for scene in &doc.scenes {
        if scene.dialogue.is_empty() {
            continue;
        }
        let section = export
            .split(&format!("[{}]\n\n", scene.scene.beat))
            .nth(1)
            .unwrap();
        let reparsed: Vec<_> = parse_dialogue(section)
            .into_iter()
            .take(scene.dialogue.len())
            .collect();
        assert_eq!(reparsed, scene.dialogue);
    }
    let directions: Vec<_> = doc.scenes[0]
        .dialogue
        .iter()
        .filter_map(|l| l.stage_direction.as_deref())
        .collect();
    assert!(directions.contains(&"(pause)"));
    assert!(export.contains("  (pause)\n"));
}

#[tokio::test]
async fn scene_one_dialogue_shape() {
    let (_, _, session) = full_run("medea").await;
    let text = session.resolved_text(&SlotAddress::Dialogue(1)).unwrap();
    let lines = parse_dialogue(text);
    let speakers: Vec<&str> = lines
        .iter()
        .filter(|l| !l.speaker.is_empty())
        .map(|l| l.speaker.as_str())
        .collect();
    for pair in speakers.windows(2) {
        assert_ne!(pair[0], pair[1]);
    }
    assert_eq!(speakers[0], "TEDDY");
    assert_eq!(speakers[1], "ROSIE");
    let last = lines.last().unwrap();
    assert!(last.speaker.is_empty());
    assert!(last.stage_direction.as_deref().unwrap().starts_with("(TEDDY picks up"));
}

#[tokio::test]
async fn second_seed_offers_alternative() {
    let (engine, _, mut session) = full_run("medea").await;
    let first = session.resolved_text(&SlotAddress::Dialogue(1)).unwrap().to_string();
    let c = engine
        .generate(&mut session, &SlotAddress::Dialogue(1), 2)
        .await
        .unwrap();
    assert_eq!(format!("{}<end>", c.raw_text), sample::DIALOGUE_1_SEED_2);
    assert_eq!(session.resolved_text(&SlotAddress::Dialogue(1)).unwrap(), first);
    engine.accept(&mut session, &SlotAddress::Dialogue(1), 1).unwrap();
    assert_ne!(session.resolved_text(&SlotAddress::Dialogue(1)).unwrap(), first);
}

#[tokio::test]
async fn dropping_last_scene_retires_its_dialogue() {
    let (engine, _, mut session) = full_run("medea").await;
    let plot = session.resolved_text(&SlotAddress::Plot).unwrap().to_string();
    let cut = plot.rfind("Place:").unwrap();
    let dropped = session.dialogue_slots[7].clone();
    engine.apply_edit(&mut session, &SlotAddress::Plot, &plot[..cut]).unwrap();
    assert_eq!(session.dialogue_slots.len(), 7);
    assert!(session.dialogue_slots.iter().all(|d| d.stale));
    let replayed = dramaturg_core::StorySession::replay(&session.history).unwrap();
    assert_eq!(replayed, session);
    let last = session.history.last().unwrap();
    let json = serde_json::to_value(&last.change).unwrap();
    let retired = json["retired"].as_array().unwrap();
    assert_eq!(retired.len(), 1);
    let kept: dramaturg_core::story::GenerationSlot =
        serde_json::from_value(retired[0]["slot"].clone()).unwrap();
    assert_eq!(kept.key, dropped.key);
    assert_eq!(kept.candidates, dropped.candidates);
}
