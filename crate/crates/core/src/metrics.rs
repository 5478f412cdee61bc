//! Measures of how much a writer changed generated text.
//!
//! Tokens are maximal runs of alphanumeric characters, lowercased; everything
//! else is a separator. Lemmas come from a small irregular-form table plus
//! suffix rules, applied without part-of-speech information.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::story::{SlotAddress, StorySession};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("original text is empty")]
    EmptyOriginal,
    #[error("no text pairs given")]
    EmptyInput,
}

/// Character-level edit distance with unit-cost insert, delete and substitute.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance divided by the original's length in characters.
pub fn relative_levenshtein(original: &str, edited: &str) -> Result<f64, MetricsError> {
    let len = original.chars().count();
    if len == 0 {
        return Err(MetricsError::EmptyOriginal);
    }
    Ok(levenshtein(original, edited) as f64 / len as f64)
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

const IRREGULAR: &[(&str, &str)] = &[
    ("am", "be"),
    ("are", "be"),
    ("is", "be"),
    ("was", "be"),
    ("were", "be"),
    ("been", "be"),
    ("being", "be"),
    ("has", "have"),
    ("had", "have"),
    ("having", "have"),
    ("does", "do"),
    ("did", "do"),
    ("done", "do"),
    ("went", "go"),
    ("gone", "go"),
    ("goes", "go"),
    ("said", "say"),
    ("made", "make"),
    ("took", "take"),
    ("taken", "take"),
    ("came", "come"),
    ("saw", "see"),
    ("seen", "see"),
    ("got", "get"),
    ("gotten", "get"),
    ("knew", "know"),
    ("known", "know"),
    ("thought", "think"),
    ("told", "tell"),
    ("found", "find"),
    ("gave", "give"),
    ("given", "give"),
    ("left", "leave"),
    ("felt", "feel"),
    ("brought", "bring"),
    ("began", "begin"),
    ("begun", "begin"),
    ("kept", "keep"),
    ("held", "hold"),
    ("stood", "stand"),
    ("heard", "hear"),
    ("meant", "mean"),
    ("sat", "sit"),
    ("met", "meet"),
    ("ran", "run"),
    ("paid", "pay"),
    ("sent", "send"),
    ("built", "build"),
    ("fell", "fall"),
    ("fallen", "fall"),
    ("lost", "lose"),
    ("spoke", "speak"),
    ("spoken", "speak"),
    ("wrote", "write"),
    ("written", "write"),
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("people", "person"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("mice", "mouse"),
    ("better", "good"),
    ("best", "good"),
    ("worse", "bad"),
    ("worst", "bad"),
];

fn has_vowel(s: &str) -> bool {
    s.chars().any(|c| "aeiouy".contains(c))
}

fn undouble(stem: &str) -> String {
    let chars: Vec<char> = stem.chars().collect();
    if let [.., a, b] = chars[..] {
        if a == b && !"aeiouylszf".contains(b) {
            return chars[..chars.len() - 1].iter().collect();
        }
    }
    stem.to_string()
}

/// Lowercases `token` and maps it to a base form.
///
/// The irregular table is consulted first; otherwise the first matching rule
/// applies: `-ies` to `-y`, `-es` after a sibilant, plural `-s`, then `-ing`
/// and `-ed` with a doubled final consonant undone.
pub fn lemmatize(token: &str) -> String {
    let t = token.to_lowercase();
    if let Some((_, lemma)) = IRREGULAR.iter().find(|(form, _)| *form == t) {
        return lemma.to_string();
    }
    let len = t.chars().count();
    if let Some(stem) = t.strip_suffix("ies") {
        if stem.chars().count() >= 2 {
            return format!("{stem}y");
        }
    }
    if let Some(stem) = t.strip_suffix("es") {
        if ["s", "x", "z", "ch", "sh"].iter().any(|s| stem.ends_with(s)) {
            return stem.to_string();
        }
    }
    if t.ends_with('s') && !["ss", "us", "is"].iter().any(|s| t.ends_with(s)) && len > 3 {
        return t[..t.len() - 1].to_string();
    }
    for suffix in ["ing", "ed"] {
        if let Some(stem) = t.strip_suffix(suffix) {
            if stem.chars().count() >= 3 && has_vowel(stem) {
                return undouble(stem);
            }
        }
    }
    t
}

pub fn lemma_set(text: &str) -> BTreeSet<String> {
    tokenize(text).iter().map(|t| lemmatize(t)).collect()
}

/// |A ∩ B| / |A ∪ B| over lemma sets; 1.0 when both are empty.
pub fn jaccard_lemma_similarity(a: &str, b: &str) -> f64 {
    let a = lemma_set(a);
    let b = lemma_set(b);
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Whether the two texts have at least one lemma in common.
pub fn shares_lemma(a: &str, b: &str) -> bool {
    let a = lemma_set(a);
    lemma_set(b).iter().any(|l| a.contains(l))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    /// n → 1 − distinct/total n-grams, for n = 1..=10.
    pub ngram_overlap: BTreeMap<usize, f64>,
    /// Share of tokens inside some immediately repeating run.
    pub total_consecutive_repetition: f64,
    /// Longest immediately repeating run, as a share of all tokens.
    pub longest_consecutive_repetition: f64,
}

pub const MAX_NGRAM: usize = 10;

pub fn repetition_scores(text: &str) -> RepetitionReport {
    let tokens = tokenize(text);
    let n_tokens = tokens.len();
    let ngram_overlap = (1..=MAX_NGRAM)
        .map(|n| {
            if n_tokens < n {
                return (n, 0.0);
            }
            let windows: Vec<&[String]> = tokens.windows(n).collect();
            let distinct: HashSet<&[String]> = windows.iter().copied().collect();
            (n, 1.0 - distinct.len() as f64 / windows.len() as f64)
        })
        .collect();

    // A run is a maximal stretch with period L at least 2L tokens long.
    let mut covered = vec![false; n_tokens];
    let mut longest = 0usize;
    for period in 1..=n_tokens / 2 {
        let mut k = 0;
        while k + period < n_tokens {
            if tokens[k] != tokens[k + period] {
                k += 1;
                continue;
            }
            let start = k;
            while k + period < n_tokens && tokens[k] == tokens[k + period] {
                k += 1;
            }
            let run_len = (k - start) + period;
            if run_len >= 2 * period {
                covered[start..start + run_len].iter_mut().for_each(|c| *c = true);
                longest = longest.max(run_len);
            }
        }
    }
    let share = |x: usize| if n_tokens == 0 { 0.0 } else { x as f64 / n_tokens as f64 };
    RepetitionReport {
        ngram_overlap,
        total_consecutive_repetition: share(covered.iter().filter(|c| **c).count()),
        longest_consecutive_repetition: share(longest),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    /// Edited minus original length, in characters.
    pub deltas: Vec<i64>,
    /// Absolute deltas scaled to [0, 1]; all zero when they are all equal.
    pub normalized: Vec<f64>,
}

pub fn length_delta(original: &str, edited: &str) -> i64 {
    edited.chars().count() as i64 - original.chars().count() as i64
}

pub fn length_stats<O: AsRef<str>, E: AsRef<str>>(
    pairs: &[(O, E)],
) -> Result<LengthStats, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let deltas: Vec<i64> = pairs
        .iter()
        .map(|(o, e)| length_delta(o.as_ref(), e.as_ref()))
        .collect();
    Ok(LengthStats {
        normalized: min_max(&deltas.iter().map(|d| d.unsigned_abs()).collect::<Vec<_>>()),
        deltas,
    })
}

fn min_max(values: &[u64]) -> Vec<f64> {
    let (Some(min), Some(max)) = (values.iter().min(), values.iter().max()) else {
        return Vec::new();
    };
    if min == max {
        return vec![0.0; values.len()];
    }
    values
        .iter()
        .map(|v| (v - min) as f64 / (max - min) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditReport {
    pub slot_address: SlotAddress,
    pub levenshtein: usize,
    /// `None` when there is no generated original to compare against.
    pub relative_levenshtein: Option<f64>,
    pub jaccard_lemma: f64,
    pub length_delta: i64,
    /// Scores for the edited (current) text.
    pub repetition: RepetitionReport,
}

pub fn compare(address: SlotAddress, original: &str, edited: &str) -> EditReport {
    EditReport {
        slot_address: address,
        levenshtein: levenshtein(original, edited),
        relative_levenshtein: relative_levenshtein(original, edited).ok(),
        jaccard_lemma: jaccard_lemma_similarity(original, edited),
        length_delta: length_delta(original, edited),
        repetition: repetition_scores(edited),
    }
}

/// One row per resolvable slot: the accepted candidate against the current text.
pub fn session_report(session: &StorySession) -> Vec<EditReport> {
    session
        .slots()
        .filter_map(|slot| {
            let current = crate::story::resolve_slot_text(slot).ok()?;
            let original = slot.accepted_candidate().map_or("", |c| c.raw_text.as_str());
            Some(compare(slot.key.clone(), original, current))
        })
        .collect()
}
