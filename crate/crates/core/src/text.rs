//! Tokenisation, lexical overlap and script-based language detection.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Zh,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Zh => "zh",
        }
    }

    pub fn other(self) -> Language {
        match self {
            Language::En => Language::Zh,
            Language::Zh => Language::En,
        }
    }
}

/// Detected language of a piece of generated text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LangTag {
    En,
    Zh,
    Ambiguous,
}

impl LangTag {
    pub fn matches(self, lang: Language) -> Option<bool> {
        match (self, lang) {
            (LangTag::Ambiguous, _) => None,
            (LangTag::En, Language::En) | (LangTag::Zh, Language::Zh) => Some(true),
            _ => Some(false),
        }
    }
}

impl From<Language> for LangTag {
    fn from(l: Language) -> Self {
        match l {
            Language::En => LangTag::En,
            Language::Zh => LangTag::Zh,
        }
    }
}

/// Whitespace tokenisation; a word is a whitespace-separated token.
pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Lower-cased unigram set.
pub fn unigram_set(text: &str) -> BTreeSet<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// 1-gram Jaccard similarity. Two empty texts are identical (1.0).
pub fn jaccard(a: &str, b: &str) -> f64 {
    let sa = unigram_set(a);
    let sb = unigram_set(b);
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    inter as f64 / union as f64
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0x20000..=0x2A6DF | 0xF900..=0xFAFF | 0x3000..=0x303F)
}

/// Unicode-script heuristic for real text: Latin letters read as English,
/// CJK ideographs as Chinese; text with both (or neither) is ambiguous.
pub fn detect_language(text: &str) -> LangTag {
    let mut latin = 0usize;
    let mut cjk = 0usize;
    for c in text.chars() {
        if c.is_ascii_alphabetic() {
            latin += 1;
        } else if is_cjk(c) {
            cjk += 1;
        }
    }
    match (latin, cjk) {
        (0, 0) => LangTag::Ambiguous,
        (_, 0) => LangTag::En,
        (0, _) => LangTag::Zh,
        _ => LangTag::Ambiguous,
    }
}

/// Hashed bag of lower-cased unigrams (FNV-1a bucket counts).
pub fn hashed_unigrams(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for w in text.split_whitespace() {
        let h = crate::rng::fnv1a(w.to_lowercase().as_bytes());
        v[(h % dim as u64) as usize] += 1.0;
    }
    v
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = crate::math::l2_norm(a);
    let nb = crate::math::l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    crate::math::dot(a, b) / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jaccard_basics() {
        assert_eq!(jaccard("a b c", "a b c"), 1.0);
        assert_eq!(jaccard("a b", "c d"), 0.0);
        assert!((jaccard("a b c", "a b d") - 0.5).abs() < 1e-12);
        assert_eq!(jaccard("A b", "a B"), 1.0);
    }

    #[test]
    fn script_detection() {
        assert_eq!(detect_language("how to bake bread"), LangTag::En);
        assert_eq!(detect_language("如何 烘焙 面包"), LangTag::Zh);
        assert_eq!(detect_language("bake 面包"), LangTag::Ambiguous);
        assert_eq!(detect_language("123 ?"), LangTag::Ambiguous);
    }

    #[test]
    fn word_counting() {
        assert_eq!(word_count("  one two\tthree\n"), 3);
        assert_eq!(words("a  b"), vec!["a", "b"]);
    }
}
