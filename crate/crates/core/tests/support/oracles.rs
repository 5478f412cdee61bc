//! Brute-force reference implementations for the edit metrics.

use std::collections::HashMap;

use dramaturg_core::metrics::lemmatize;

/// Edit distance straight from its recursive definition, memoized.
pub fn lev_oracle(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(&d) = memo.get(&(a.len(), b.len())) {
            return d;
        }
        let cost = usize::from(a[0] != b[0]);
        let d = (go(&a[1..], b, memo) + 1)
            .min(go(a, &b[1..], memo) + 1)
            .min(go(&a[1..], &b[1..], memo) + cost);
        memo.insert((a.len(), b.len()), d);
        d
    }
    go(a, b, &mut HashMap::new())
}

pub fn chars(s: &str) -> Vec<char> {
    s.chars().collect()
}

pub fn jaccard_oracle(a: &[String], b: &[String]) -> f64 {
    let mut la: Vec<String> = a.iter().map(|t| lemmatize(t)).collect();
    let mut lb: Vec<String> = b.iter().map(|t| lemmatize(t)).collect();
    la.sort();
    la.dedup();
    lb.sort();
    lb.dedup();
    let inter = la.iter().filter(|x| lb.contains(x)).count();
    let union = la.len() + lb.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn overlap_oracle(tokens: &[String], n: usize) -> f64 {
    if tokens.len() < n {
        return 0.0;
    }
    let total = tokens.len() - n + 1;
    let mut distinct = 0;
    for i in 0..total {
        if !(0..i).any(|j| tokens[j..j + n] == tokens[i..i + n]) {
            distinct += 1;
        }
    }
    1.0 - distinct as f64 / total as f64
}

/// Token i is covered when it lies in some `xx` square; the longest run is the
/// longest segment with a period p at least twice as long as p.
pub fn runs_oracle(tokens: &[String]) -> (f64, f64) {
    let n = tokens.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mut covered = vec![false; n];
    for p in 1..=n / 2 {
        for i in 0..=n - 2 * p {
            if tokens[i..i + p] == tokens[i + p..i + 2 * p] {
                covered[i..i + 2 * p].iter_mut().for_each(|c| *c = true);
            }
        }
    }
    let mut longest = 0;
    for i in 0..n {
        for j in i + 1..=n {
            let len = j - i;
            let periodic = (1..=len / 2).any(|p| (i..j - p).all(|k| tokens[k] == tokens[k + p]));
            if periodic {
                longest = longest.max(len);
            }
        }
    }
    let total = covered.iter().filter(|c| **c).count();
    (total as f64 / n as f64, longest as f64 / n as f64)
}
