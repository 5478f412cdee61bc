//! Deterministic in-process backend.
//!
//! Scripted responses are keyed by `(sha256(prompt), seed)`. Anything not
//! scripted gets pseudo-text drawn from a ChaCha stream seeded by the prompt
//! digest, seed and sampling knobs, shaped to look like the output the prompt
//! family expects.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendFailure, Completion, CompletionBackend, CompletionRequest};
use crate::prompt::prompt_digest;

/// One scripted response. Either `prompt` or `digest` identifies the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub text: String,
}

impl MockEntry {
    pub fn new(prompt: &str, seed: u64, text: impl Into<String>) -> Self {
        Self {
            prompt: None,
            digest: Some(prompt_digest(prompt)),
            seed,
            text: text.into(),
        }
    }

    fn key(&self) -> Option<(String, u64)> {
        let digest = match (&self.digest, &self.prompt) {
            (Some(d), _) => d.clone(),
            (None, Some(p)) => prompt_digest(p),
            (None, None) => return None,
        };
        Some((digest, self.seed))
    }
}

#[derive(Debug, Default)]
pub struct MockBackend {
    script: Mutex<HashMap<(String, u64), String>>,
    failures: Mutex<VecDeque<BackendFailure>>,
    failing_prompts: Mutex<HashMap<String, BackendFailure>>,
    log: Mutex<Vec<(String, u64)>>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    latency: Option<Duration>,
    context_window: Option<usize>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn scripted(entries: impl IntoIterator<Item = MockEntry>) -> Self {
        let mock = Self::new();
        mock.script_all(entries);
        mock
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    pub fn with_context_window(mut self, window: usize) -> Self {
        self.context_window = Some(window);
        self
    }

    pub fn script(&self, prompt: &str, seed: u64, text: impl Into<String>) {
        self.script
            .lock()
            .unwrap()
            .insert((prompt_digest(prompt), seed), text.into());
    }

    pub fn script_all(&self, entries: impl IntoIterator<Item = MockEntry>) {
        let mut script = self.script.lock().unwrap();
        for entry in entries {
            if let Some(key) = entry.key() {
                script.insert(key, entry.text);
            }
        }
    }

    /// Queues a failure for the next call; queued failures are consumed in order.
    pub fn fail_next(&self, failure: BackendFailure) {
        self.failures.lock().unwrap().push_back(failure);
    }

    /// Every call with exactly this prompt fails, whatever the seed.
    pub fn fail_prompt(&self, prompt: &str, failure: BackendFailure) {
        self.failing_prompts
            .lock()
            .unwrap()
            .insert(prompt_digest(prompt), failure);
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneously running calls observed.
    pub fn max_concurrent(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    /// `(prompt digest, seed)` for every call, in arrival order.
    pub fn call_log(&self) -> Vec<(String, u64)> {
        self.log.lock().unwrap().clone()
    }

    pub fn calls_with_prompt(&self, prompt: &str) -> usize {
        let digest = prompt_digest(prompt);
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter(|(d, _)| *d == digest)
            .count()
    }

    fn respond(&self, request: &CompletionRequest) -> Result<String, BackendFailure> {
        if let Some(failure) = self.failures.lock().unwrap().pop_front() {
            return Err(failure);
        }
        let seed = request.seed.unwrap_or(0);
        let digest = prompt_digest(&request.prompt);
        if let Some(failure) = self.failing_prompts.lock().unwrap().get(&digest) {
            return Err(failure.clone());
        }
        if let Some(text) = self.script.lock().unwrap().get(&(digest, seed)) {
            return Ok(text.clone());
        }
        Ok(fallback_text(request))
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

#[async_trait]
impl CompletionBackend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn context_window(&self) -> Option<usize> {
        self.context_window
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log
            .lock()
            .unwrap()
            .push((prompt_digest(&request.prompt), request.seed.unwrap_or(0)));
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if let Some(latency) = self.latency {
            tokio::time::sleep(latency).await;
        }
        let text = self.respond(request)?;
        Ok(Completion {
            text,
            backend_id: self.id().to_string(),
            token_count: None,
        })
    }
}

const NAMES: &[&str] = &[
    "Ada", "Bruno", "Celia", "Dmitri", "Esme", "Felix", "Greta", "Hugo",
];
const ROLES: &[&str] = &[
    "a retired lighthouse keeper",
    "a restless cartographer",
    "an apprentice clockmaker",
    "a disgraced magistrate",
    "a travelling puppeteer",
    "a botanist with a secret",
    "a night-shift radio host",
    "a stubborn ferry captain",
];
const TRAITS: &[&str] = &[
    "who never forgets a debt",
    "who hides a talent for lying",
    "who wants one last chance",
    "who distrusts everyone in town",
    "who collects other people's letters",
    "who is afraid of open water",
];
const PLACES: &[&str] = &[
    "The Harbour",
    "The Clock Tower",
    "The Greenhouse",
    "The Night Market",
    "The Archive",
    "The Ferry Deck",
];
const ACTIONS: &[&str] = &[
    "discovers a forged letter",
    "confronts an old rival",
    "makes a reckless promise",
    "loses the only key",
    "hears a confession",
    "refuses to leave",
    "finds the missing map",
    "breaks a long silence",
];
const PHASES: &[&str] = &[
    "Exposition.",
    "Inciting Incident.",
    "Rising Action.",
    "Dilemma.",
    "Climax.",
    "Falling Action.",
    "Resolution.",
    "Dénouement.",
];
const LINES: &[&str] = &[
    "You said you would be here at dawn.",
    "I never asked for any of this.",
    "Keep your voice down, they can hear us.",
    "Then tell me what really happened.",
    "It was not my idea, I swear it.",
    "We leave tonight or not at all.",
    "Look at the water. Something is wrong.",
    "I kept your letters, every one of them.",
    "Nobody in this town tells the truth.",
    "Give me one more hour.",
];
const SCENERY: &[&str] = &[
    "Salt-stained boards creak underfoot.",
    "A single lamp swings from a hook.",
    "Rows of dusty shelves lean towards each other.",
    "Rain taps steadily against the glass.",
    "Gulls argue somewhere overhead.",
    "The air smells of oil and old paper.",
];
const TITLE_ADJ: &[&str] = &["Silent", "Last", "Hollow", "Crooked", "Distant", "Burning"];
const TITLE_NOUN: &[&str] = &["Harbour", "Lantern", "Promise", "Archive", "Tide", "Clock"];
const GARBAGE: &str = "\n\nExample 3.\n";

fn rng_for(request: &CompletionRequest) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(request.prompt.as_bytes());
    hasher.update(request.seed.unwrap_or(0).to_le_bytes());
    hasher.update(request.temperature.to_bits().to_le_bytes());
    hasher.update(request.top_p.to_bits().to_le_bytes());
    hasher.update(request.max_tokens.to_le_bytes());
    let seed: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(seed)
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &'a [&'a str]) -> &'a str {
    items.choose(rng).copied().unwrap_or_default()
}

/// Family-shaped pseudo-text ending with `<end>` followed by trailing junk.
fn fallback_text(request: &CompletionRequest) -> String {
    let mut rng = rng_for(request);
    let prompt = request.prompt.as_str();
    let body = if prompt.contains("<dialog>") {
        fake_dialogue(&mut rng)
    } else if prompt.contains("<scenes>") {
        fake_plot(&mut rng)
    } else if prompt.contains("<character>") {
        fake_characters(&mut rng)
    } else if prompt.trim_end().ends_with("Description:") {
        format!(" {} {}", pick(&mut rng, SCENERY), pick(&mut rng, SCENERY))
    } else if prompt.trim_end().ends_with("Title:") {
        format!(
            " The {} {}",
            pick(&mut rng, TITLE_ADJ),
            pick(&mut rng, TITLE_NOUN)
        )
    } else {
        format!(" {}", pick(&mut rng, SCENERY))
    };
    format!("{body}<end>{GARBAGE}")
}

fn fake_characters(rng: &mut ChaCha8Rng) -> String {
    let count = rng.random_range(2..=4);
    let mut names = NAMES.to_vec();
    names.shuffle(rng);
    let mut out = String::new();
    for name in names.into_iter().take(count) {
        out.push_str(&format!(
            "<character>{name} <description>{name} is {} {}.<stop>\n",
            pick(rng, ROLES),
            pick(rng, TRAITS)
        ));
    }
    out
}

fn fake_plot(rng: &mut ChaCha8Rng) -> String {
    let count = rng.random_range(3..=6);
    let mut out = String::from("\n\n");
    for (i, phase) in PHASES.iter().take(count).enumerate() {
        let phase = if i + 1 == count { "Resolution." } else { phase };
        out.push_str(&format!(
            "Place: {}.\nPlot element: {phase}\nBeat: {} {}.\n\n",
            pick(rng, PLACES),
            pick(rng, NAMES),
            pick(rng, ACTIONS)
        ));
    }
    out
}

fn fake_dialogue(rng: &mut ChaCha8Rng) -> String {
    let turns = rng.random_range(2..=5);
    let mut combos: Vec<(usize, usize)> = (0..NAMES.len())
        .flat_map(|n| (0..LINES.len()).map(move |l| (n, l)))
        .collect();
    combos.shuffle(rng);
    let mut out = String::from("\n\n");
    for (n, l) in combos.into_iter().take(turns) {
        out.push_str(&format!("{}\n{}\n\n", NAMES[n].to_uppercase(), LINES[l]));
    }
    out.truncate(out.len() - 1);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::parse::{parse_characters, parse_dialogue, parse_plot};
    use crate::gateway::truncate_at_marker;

    fn request(prompt: &str, seed: u64) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.to_string(),
            max_tokens: 511,
            temperature: 1.0,
            top_p: 0.9,
            seed: Some(seed),
        }
    }

    #[tokio::test]
    async fn scripted_lookup_by_prompt_and_seed() {
        let mock = MockBackend::scripted([MockEntry::new("p", 1, "one"), MockEntry::new("p", 2, "two")]);
        assert_eq!(mock.complete(&request("p", 1)).await.unwrap().text, "one");
        assert_eq!(mock.complete(&request("p", 2)).await.unwrap().text, "two");
        assert_ne!(mock.complete(&request("p", 3)).await.unwrap().text, "one");
        assert_eq!(mock.calls_with_prompt("p"), 3);
    }

    #[test]
    fn entry_by_raw_prompt_matches_digest() {
        let raw = MockEntry {
            prompt: Some("abc".into()),
            digest: None,
            seed: 4,
            text: "x".into(),
        };
        assert_eq!(raw.key(), MockEntry::new("abc", 4, "x").key());
    }

    #[test]
    fn fallback_is_deterministic() {
        let a = fallback_text(&request("Example 1. x\n<dialog>", 7));
        let b = fallback_text(&request("Example 1. x\n<dialog>", 7));
        let c = fallback_text(&request("Example 1. x\n<dialog>", 8));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fallback_output_parses_per_family() {
        for seed in 0..50 {
            let chars = fallback_text(&request("... <character>", seed));
            assert!(parse_characters(truncate_at_marker(&chars, &["<end>"])).is_ok());
            let plot = fallback_text(&request("... <scenes>", seed));
            let scenes = parse_plot(truncate_at_marker(&plot, &["<end>"])).unwrap();
            assert!(scenes.len() >= 3);
            let dialogue = fallback_text(&request("... <dialog>", seed));
            let entries = parse_dialogue(truncate_at_marker(&dialogue, &["<end>"]));
            assert!(entries.len() >= 2);
            let title = fallback_text(&request("Title:", seed));
            assert!(title.starts_with(" The "));
        }
    }

    #[tokio::test]
    async fn queued_failures_consumed_in_order() {
        let mock = MockBackend::new();
        mock.fail_next(BackendFailure::Transient("a".into()));
        assert!(mock.complete(&request("p", 0)).await.is_err());
        assert!(mock.complete(&request("p", 0)).await.is_ok());
    }
}
