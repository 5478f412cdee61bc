//! Hierarchical generation: renders each family's prompt from the resolved
//! upstream text, calls the gateway, and records the result in the session.
//!
//! A generation is split into three steps so callers can run the slow middle
//! one without holding the session: [`Engine::prepare`] (reads the session),
//! [`Engine::execute`] (gateway calls only), [`Engine::commit_candidate`]
//! (writes the session).

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::clock::{Clock, SystemClock};
use crate::gateway::{truncate_at_marker, Gateway, GatewayError, SamplingConfig};
use crate::prompt::{select_characters_for_beat, Prompt, PromptError, PromptFamily, PromptLibrary, PromptSet};
use crate::story::{
    AddMode, Candidate, CharacterSpec, Change, LogLine, Scene, SlotAddress, StoryError,
    StorySession,
};

pub mod loops;
pub mod parse;

use loops::{worst_loop, LoopDetectorConfig, LoopReport};
use parse::{parse_characters, parse_plot};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid log line: {0}")]
    InvalidLogLine(String),
    #[error("upstream slot {0} is missing")]
    UpstreamMissing(String),
    #[error("upstream slot {0} does not parse")]
    UpstreamUnparseable(String),
    #[error("slot {0} is empty")]
    EmptySlot(SlotAddress),
    #[error("no such slot: {0}")]
    UnknownSlot(String),
    #[error("edit rejected: {0}")]
    UnparseableEdit(String),
    #[error("slot {address} still loops after all resamples")]
    LoopUnresolved {
        address: SlotAddress,
        candidate: Box<Candidate>,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Story(StoryError),
    #[error("{address}: {source}")]
    Slot {
        address: String,
        source: Box<EngineError>,
    },
}

impl EngineError {
    /// The underlying error, with slot tagging removed.
    pub fn root(&self) -> &EngineError {
        match self {
            EngineError::Slot { source, .. } => source.root(),
            other => other,
        }
    }

    fn tagged(address: &SlotAddress, source: EngineError) -> Self {
        EngineError::Slot {
            address: address.to_string(),
            source: Box::new(source),
        }
    }
}

impl From<StoryError> for EngineError {
    fn from(e: StoryError) -> Self {
        match e {
            StoryError::EmptySlot(a) => EngineError::EmptySlot(a),
            StoryError::UnknownSlot(s) => EngineError::UnknownSlot(s),
            StoryError::UnparseablePlot(m) => EngineError::UnparseableEdit(m),
            StoryError::InvalidLogLine(m) => EngineError::InvalidLogLine(m),
            other => EngineError::Story(other),
        }
    }
}

/// How [`Engine::generate_full`] picks a seed for each slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Same seed for every slot.
    Fixed { seed: u64 },
    /// `start + ordinal`, where slots are numbered in hierarchy order.
    Sequential { start: u64 },
}

impl Default for SeedPolicy {
    fn default() -> Self {
        SeedPolicy::Fixed { seed: 1 }
    }
}

impl SeedPolicy {
    pub fn seed_for(&self, ordinal: usize) -> u64 {
        match *self {
            SeedPolicy::Fixed { seed } => seed,
            SeedPolicy::Sequential { start } => start.wrapping_add(ordinal as u64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    /// Base sampling settings; the seed is overwritten per call.
    pub sampling: SamplingConfig,
    pub loops: LoopDetectorConfig,
    /// Run location and dialogue generations of a full run concurrently.
    pub parallel: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            sampling: SamplingConfig::default(),
            loops: LoopDetectorConfig::default(),
            parallel: true,
        }
    }
}

/// Everything needed to call the gateway for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCall {
    pub address: SlotAddress,
    pub mode: AddMode,
    pub prompt: Prompt,
    /// Text the completion extends; empty unless continuing.
    pub base_text: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FullRunReport {
    /// Slots that received a new candidate, in commit order.
    pub generated: Vec<SlotAddress>,
    /// Slots whose kept candidate still loops.
    pub unresolved_loops: Vec<SlotAddress>,
}

pub struct Engine {
    gateway: Arc<Gateway>,
    prompts: Arc<PromptLibrary>,
    clock: Arc<dyn Clock>,
    config: EngineConfig,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("gateway", &self.gateway)
            .field("prompt_sets", &self.prompts.names())
            .field("config", &self.config)
            .finish()
    }
}

impl Engine {
    pub fn new(gateway: Arc<Gateway>, prompts: Arc<PromptLibrary>) -> Self {
        Self {
            gateway,
            prompts,
            clock: Arc::new(SystemClock),
            config: EngineConfig::default(),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_config(mut self, config: EngineConfig) -> Self {
        self.config = config;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn prompts(&self) -> &Arc<PromptLibrary> {
        &self.prompts
    }

    pub fn new_session(&self, log_line: &str, prompt_set: &str) -> Result<StorySession, EngineError> {
        self.new_session_with_id(Uuid::new_v4(), log_line, prompt_set)
    }

    pub fn new_session_with_id(
        &self,
        id: Uuid,
        log_line: &str,
        prompt_set: &str,
    ) -> Result<StorySession, EngineError> {
        let log_line = LogLine::new(log_line)?;
        self.prompts.get(prompt_set)?;
        Ok(StorySession::create(id, log_line, prompt_set, self.clock.now()))
    }

    fn prompt_set(&self, session: &StorySession) -> Result<Arc<PromptSet>, EngineError> {
        Ok(self.prompts.get(&session.prompt_set_name)?)
    }

    fn resolved_scenes(&self, session: &StorySession) -> Result<Vec<Scene>, EngineError> {
        let text = session
            .resolved_text(&SlotAddress::Plot)
            .map_err(|_| EngineError::UpstreamMissing(SlotAddress::Plot.to_string()))?;
        parse_plot(text).map_err(|_| EngineError::UpstreamUnparseable(SlotAddress::Plot.to_string()))
    }

    fn resolved_characters(&self, session: &StorySession) -> Result<Vec<CharacterSpec>, EngineError> {
        let text = session
            .resolved_text(&SlotAddress::Characters)
            .map_err(|_| EngineError::UpstreamMissing(SlotAddress::Characters.to_string()))?;
        parse_characters(text)
            .map_err(|_| EngineError::UpstreamUnparseable(SlotAddress::Characters.to_string()))
    }

    /// Renders the family prompt for `address` from the session's resolved
    /// upstream text.
    pub fn render_prompt(
        &self,
        session: &StorySession,
        address: &SlotAddress,
    ) -> Result<Prompt, EngineError> {
        let set = self.prompt_set(session)?;
        let log_line = &session.log_line;
        match address {
            SlotAddress::Title => Ok(set.render_title_prompt(log_line)),
            SlotAddress::Characters => Ok(set.render_character_prompt(log_line)),
            SlotAddress::Plot => {
                let characters = self.resolved_characters(session)?;
                Ok(set.render_plot_prompt(log_line, &characters)?)
            }
            SlotAddress::Location(name) => {
                if !session.plot_slot.is_resolvable() {
                    return Err(EngineError::UpstreamMissing(SlotAddress::Plot.to_string()));
                }
                if session.slot(address).is_none() {
                    return Err(EngineError::UnknownSlot(address.to_string()));
                }
                Ok(set.render_location_prompt(log_line, name)?)
            }
            SlotAddress::Dialogue(n) => {
                let scenes = self.resolved_scenes(session)?;
                let index = n
                    .checked_sub(1)
                    .filter(|i| *i < scenes.len())
                    .ok_or_else(|| EngineError::UnknownSlot(address.to_string()))?;
                let characters = self.resolved_characters(session)?;
                let scene = &scenes[index];
                let location = SlotAddress::location(&scene.place);
                let description = session
                    .resolved_text(&location)
                    .map_err(|_| EngineError::UpstreamMissing(location.to_string()))?
                    .trim();
                let previous_beat = index.checked_sub(1).map(|i| scenes[i].beat.as_str());
                let cast = select_characters_for_beat(&characters, &scene.beat);
                Ok(set.render_dialogue_prompt(log_line, scene, previous_beat, description, &cast))
            }
        }
    }

    /// Checks dependencies and renders the prompt for one generation.
    ///
    /// Continuing without an explicit seed reuses the accepted candidate's seed.
    pub fn prepare(
        &self,
        session: &StorySession,
        address: &SlotAddress,
        mode: AddMode,
        seed: Option<u64>,
    ) -> Result<PreparedCall, EngineError> {
        let prompt = self.render_prompt(session, address)?;
        match mode {
            AddMode::Generate => Ok(PreparedCall {
                address: address.clone(),
                mode,
                prompt,
                base_text: String::new(),
                seed: seed.unwrap_or(0),
            }),
            AddMode::Continue => {
                let slot = session
                    .slot(address)
                    .ok_or_else(|| EngineError::UnknownSlot(address.to_string()))?;
                let base_text = session.resolved_text(address)?.to_string();
                let seed = seed
                    .or_else(|| slot.accepted_candidate().map(|c| c.seed))
                    .unwrap_or(0);
                let prompt = Prompt {
                    text: format!("{}{}", prompt.text, base_text),
                    ..prompt
                };
                Ok(PreparedCall {
                    address: address.clone(),
                    mode,
                    prompt,
                    base_text,
                    seed,
                })
            }
        }
    }

    /// Calls the gateway, truncates at the stop markers and, for dialogue,
    /// resamples with `seed + 1` while the output loops.
    pub async fn execute(&self, call: &PreparedCall) -> Result<Candidate, EngineError> {
        let loops = &self.config.loops;
        let mut seed = call.seed;
        let mut calls = 0u32;
        let mut report: Option<LoopReport> = None;
        let text = loop {
            calls += 1;
            let sampling = self.config.sampling.with_seed(seed);
            let completion = self.gateway.complete(&call.prompt, &sampling).await?;
            let text = truncate_at_marker(&completion.text, &call.prompt.stop_markers).to_string();
            if call.prompt.family != PromptFamily::Dialogue {
                break text;
            }
            let Some((block, count)) = worst_loop(&text, loops) else {
                break text;
            };
            let report = report.get_or_insert_with(|| LoopReport {
                threshold: loops.repeat_threshold,
                rejected_seeds: Vec::new(),
                block: String::new(),
                count: 0,
                unresolved: false,
            });
            report.rejected_seeds.push(seed);
            report.block = block;
            report.count = count;
            if calls > loops.max_resamples {
                report.unresolved = true;
                tracing::warn!(address = %call.address, seed, "loop persists after resampling");
                break text;
            }
            tracing::info!(address = %call.address, seed, count, "loop detected, resampling");
            seed = seed.wrapping_add(1);
        };
        Ok(Candidate {
            raw_text: format!("{}{}", call.base_text, text),
            seed,
            sampling: self.config.sampling.with_seed(seed),
            prompt_hash: call.prompt.digest(),
            created_at: self.clock.now(),
            gateway_calls: calls,
            loop_report: report,
        })
    }

    pub fn commit_candidate(
        &self,
        session: &mut StorySession,
        call: &PreparedCall,
        candidate: Candidate,
    ) -> Result<(), EngineError> {
        session.commit(
            self.clock.now(),
            Change::CandidateAdded {
                address: call.address.clone(),
                mode: call.mode,
                requested_seed: call.seed,
                candidate,
                retired: Vec::new(),
            },
        )?;
        Ok(())
    }

    async fn run_call(
        &self,
        session: &mut StorySession,
        call: PreparedCall,
    ) -> Result<Candidate, EngineError> {
        let candidate = self.execute(&call).await?;
        self.commit_candidate(session, &call, candidate.clone())?;
        if candidate.loop_unresolved() {
            return Err(EngineError::LoopUnresolved {
                address: call.address,
                candidate: Box::new(candidate),
            });
        }
        Ok(candidate)
    }

    /// Adds a fresh candidate to `address`. The first candidate of a slot is
    /// accepted automatically; later ones wait for [`Engine::accept`].
    pub async fn generate(
        &self,
        session: &mut StorySession,
        address: &SlotAddress,
        seed: u64,
    ) -> Result<Candidate, EngineError> {
        let call = self.prepare(session, address, AddMode::Generate, Some(seed))?;
        self.run_call(session, call).await
    }

    /// Extends the slot's current text with a further completion.
    pub async fn continue_generation(
        &self,
        session: &mut StorySession,
        address: &SlotAddress,
        seed: Option<u64>,
    ) -> Result<Candidate, EngineError> {
        let call = self.prepare(session, address, AddMode::Continue, seed)?;
        self.run_call(session, call).await
    }

    pub fn apply_edit(
        &self,
        session: &mut StorySession,
        address: &SlotAddress,
        text: &str,
    ) -> Result<(), EngineError> {
        session.commit(
            self.clock.now(),
            Change::Edited {
                address: address.clone(),
                text: text.to_string(),
                retired: Vec::new(),
            },
        )?;
        Ok(())
    }

    pub fn accept(
        &self,
        session: &mut StorySession,
        address: &SlotAddress,
        index: usize,
    ) -> Result<(), EngineError> {
        session.commit(
            self.clock.now(),
            Change::Accepted {
                address: address.clone(),
                index,
                retired: Vec::new(),
            },
        )?;
        Ok(())
    }

    /// Fills every slot that has no resolvable text, top of the hierarchy
    /// first. On failure the slots completed so far stay in the session and
    /// the error names the failing slot.
    pub async fn generate_full(
        &self,
        session: &mut StorySession,
        policy: SeedPolicy,
    ) -> Result<FullRunReport, EngineError> {
        let mut report = FullRunReport::default();
        let top = [SlotAddress::Title, SlotAddress::Characters, SlotAddress::Plot];
        for (ordinal, address) in top.iter().enumerate() {
            if session.slot(address).is_some_and(|s| s.is_resolvable()) {
                continue;
            }
            let result = self
                .generate(session, address, policy.seed_for(ordinal))
                .await;
            record(&mut report, address, result)?;
        }
        if let Err(e) = self.resolved_scenes(session) {
            return Err(EngineError::tagged(&SlotAddress::Plot, e));
        }

        let base = top.len();
        let locations: Vec<(u64, SlotAddress)> = session
            .location_slots
            .iter()
            .enumerate()
            .filter(|(_, (_, slot))| !slot.is_resolvable())
            .map(|(i, (name, _))| (policy.seed_for(base + i), SlotAddress::location(name)))
            .collect();
        self.run_batch(session, locations, &mut report).await?;

        let base = base + session.location_slots.len();
        let dialogues: Vec<(u64, SlotAddress)> = session
            .dialogue_slots
            .iter()
            .enumerate()
            .filter(|(_, slot)| !slot.is_resolvable())
            .map(|(i, _)| (policy.seed_for(base + i), SlotAddress::Dialogue(i + 1)))
            .collect();
        self.run_batch(session, dialogues, &mut report).await?;
        Ok(report)
    }

    /// Runs independent generations, committing results in the given order up
    /// to the first failure. The outcome does not depend on `parallel`.
    async fn run_batch(
        &self,
        session: &mut StorySession,
        jobs: Vec<(u64, SlotAddress)>,
        report: &mut FullRunReport,
    ) -> Result<(), EngineError> {
        if !self.config.parallel {
            for (seed, address) in jobs {
                let result = self.generate(session, &address, seed).await;
                record(report, &address, result)?;
            }
            return Ok(());
        }

        let mut calls = Vec::new();
        let mut prepare_failure = None;
        for (seed, address) in jobs {
            match self.prepare(session, &address, AddMode::Generate, Some(seed)) {
                Ok(call) => calls.push(call),
                Err(e) => {
                    prepare_failure = Some(EngineError::tagged(&address, e));
                    break;
                }
            }
        }
        let outcomes = futures::future::join_all(calls.iter().map(|c| self.execute(c))).await;
        for (call, outcome) in calls.iter().zip(outcomes) {
            let result = match outcome {
                Ok(candidate) => {
                    self.commit_candidate(session, call, candidate.clone())?;
                    if candidate.loop_unresolved() {
                        Err(EngineError::LoopUnresolved {
                            address: call.address.clone(),
                            candidate: Box::new(candidate),
                        })
                    } else {
                        Ok(candidate)
                    }
                }
                Err(e) => Err(e),
            };
            record(report, &call.address, result)?;
        }
        match prepare_failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

fn record(
    report: &mut FullRunReport,
    address: &SlotAddress,
    result: Result<Candidate, EngineError>,
) -> Result<(), EngineError> {
    match result {
        Ok(_) => {
            report.generated.push(address.clone());
            Ok(())
        }
        Err(EngineError::LoopUnresolved { .. }) => {
            report.generated.push(address.clone());
            report.unresolved_loops.push(address.clone());
            Ok(())
        }
        Err(e) => Err(EngineError::tagged(address, e)),
    }
}
