//! Degenerate-repetition detection for generated text.
//!
//! Text is cut into blocks at blank-line delimiters and identical blocks are
//! counted. A block seen `repeat_threshold` or more times means the sample
//! looped and should be drawn again with another seed.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopDetectorConfig {
    /// Minimum run of blank lines that separates two blocks.
    pub delimiter_blank_lines: usize,
    pub repeat_threshold: usize,
    pub max_resamples: u32,
}

impl Default for LoopDetectorConfig {
    fn default() -> Self {
        Self {
            delimiter_blank_lines: 1,
            repeat_threshold: 3,
            max_resamples: 5,
        }
    }
}

impl LoopDetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.repeat_threshold < 2 {
            return Err(format!(
                "repeat_threshold must be at least 2, got {}",
                self.repeat_threshold
            ));
        }
        if self.delimiter_blank_lines == 0 {
            return Err("delimiter_blank_lines must be positive".into());
        }
        Ok(())
    }
}

/// Outcome of loop checking over one candidate's sampling attempts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopReport {
    pub threshold: usize,
    /// Seeds that produced looping text, in order.
    pub rejected_seeds: Vec<u64>,
    /// Most repeated block of the last looping sample.
    pub block: String,
    pub count: usize,
    /// True when the resample budget ran out and the kept text still loops.
    pub unresolved: bool,
}

/// Splits `text` into trimmed, non-empty blocks.
pub fn split_blocks(text: &str, delimiter_blank_lines: usize) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let mut blank_run = 0usize;
    let flush = |current: &mut Vec<&str>, blocks: &mut Vec<String>| {
        let block = current.join("\n").trim().to_string();
        if !block.is_empty() {
            blocks.push(block);
        }
        current.clear();
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            blank_run += 1;
            if blank_run == delimiter_blank_lines.max(1) {
                flush(&mut current, &mut blocks);
            } else if blank_run < delimiter_blank_lines {
                current.push(line);
            }
        } else {
            blank_run = 0;
            current.push(line);
        }
    }
    flush(&mut current, &mut blocks);
    blocks
}

/// Block frequencies in order of first appearance.
pub fn detect_loops(text: &str, config: &LoopDetectorConfig) -> IndexMap<String, usize> {
    let mut counts = IndexMap::new();
    for block in split_blocks(text, config.delimiter_blank_lines) {
        *counts.entry(block).or_insert(0) += 1;
    }
    counts
}

/// The most repeated block if it reaches the threshold.
pub fn worst_loop(text: &str, config: &LoopDetectorConfig) -> Option<(String, usize)> {
    detect_loops(text, config)
        .into_iter()
        .filter(|(_, n)| *n >= config.repeat_threshold)
        .max_by_key(|(_, n)| *n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_example() {
        let counts = detect_loops("A\n\nB\n\nA\n\nA", &LoopDetectorConfig::default());
        assert_eq!(counts.len(), 2);
        assert_eq!(counts["A"], 3);
        assert_eq!(counts["B"], 1);
    }

    #[test]
    fn empty_and_single() {
        let cfg = LoopDetectorConfig::default();
        assert!(detect_loops("", &cfg).is_empty());
        assert!(detect_loops("\n\n  \n", &cfg).is_empty());
        let counts = detect_loops("one block\nstill one", &cfg);
        assert_eq!(counts.len(), 1);
        assert_eq!(counts["one block\nstill one"], 1);
    }

    #[test]
    fn blocks_are_trimmed_and_runs_collapse() {
        let cfg = LoopDetectorConfig::default();
        let counts = detect_loops("  A  \n\n\n\nA\n \t\nA ", &cfg);
        assert_eq!(counts["A"], 3);
        assert!(worst_loop("A\n\nA\n\nA", &cfg).is_some());
        assert!(worst_loop("A\n\nA\n\nB", &cfg).is_none());
    }

    #[test]
    fn wider_delimiter_keeps_single_blank_inside() {
        let cfg = LoopDetectorConfig {
            delimiter_blank_lines: 2,
            ..LoopDetectorConfig::default()
        };
        assert_eq!(split_blocks("A\n\nB\n\n\nC", 2), vec!["A\n\nB", "C"]);
        assert_eq!(detect_loops("A\n\nA\n\nA", &cfg).len(), 1);
    }

    #[test]
    fn validation() {
        assert!(LoopDetectorConfig::default().validate().is_ok());
        let bad = LoopDetectorConfig {
            repeat_threshold: 1,
            ..LoopDetectorConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
