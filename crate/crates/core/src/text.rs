//! Small text helpers shared by the classifier, threading rule, theme
//! extraction and the mock gateway.

use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "could", "did", "do", "does", "doing", "don", "down", "during", "each",
    "even", "few", "for", "from", "further", "get", "going", "had", "has", "have", "having", "he",
    "her", "here", "hers", "him", "his", "how", "however", "i", "if", "in", "into", "is", "it",
    "its", "itself", "just", "let", "like", "lot", "make", "me", "might", "more", "most", "much",
    "must", "my", "need", "no", "nor", "not", "now", "of", "off", "on", "once", "one", "only",
    "or", "other", "our", "ours", "out", "over", "own", "really", "same", "she", "should", "since",
    "so", "some", "such", "than", "that", "the", "their", "theirs", "them", "then", "there",
    "therefore", "these", "they", "thing", "things", "think", "this", "those", "through", "to",
    "too", "under", "until", "up", "us", "very", "want", "was", "way", "we", "well", "were", "what",
    "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would", "yes", "you",
    "your", "yours",
];

/// Lower-cased alphanumeric tokens. Apostrophes and hyphens inside a word are
/// kept so "community-generated" stays one token.
pub fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let joiner = (c == '-' || c == '\'')
            && !cur.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || joiner {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Tokens minus stopwords and very short fragments.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokens(text)
        .into_iter()
        .filter(|t| t.chars().count() > 2 && !is_stopword(t))
        .collect()
}

/// Case-folded token-set Jaccard similarity. Two empty sets compare as 1.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let sa: BTreeSet<String> = tokens(a).into_iter().collect();
    let sb: BTreeSet<String> = tokens(b).into_iter().collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count() as f64;
    let union = sa.union(&sb).count() as f64;
    inter / union
}

/// Hex SHA-256 of the input.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// First 16 hex chars of SHA-256; used as a stable short digest.
pub fn short_digest(bytes: &[u8]) -> String {
    sha256_hex(bytes)[..16].to_string()
}

/// Stable 64-bit key derived from SHA-256, independent of platform and
/// process (unlike `std::hash`).
pub fn stable_u64(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Substring by char offsets `[start, end)`. Returns `None` when out of bounds.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let b0 = indices.nth(start)?;
    if start == end {
        return Some(&text[b0..b0]);
    }
    let b1 = indices.nth(end - start - 1)?;
    Some(&text[b0..b1])
}

pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Truncate to at most `max` chars.
pub fn truncate_chars(text: &str, max: usize) -> String {
    text.chars().take(max).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopwords_sorted_for_binary_search() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn tokens_keep_inner_hyphen() {
        assert_eq!(
            tokens("Community-generated data, AI!"),
            vec!["community-generated", "data", "ai"]
        );
        assert_eq!(tokens("end- of"), vec!["end", "of"]);
    }

    #[test]
    fn jaccard_case_folded() {
        assert_eq!(jaccard("How should we FEED cities?", "how should we feed cities"), 1.0);
        assert!((jaccard("a b c", "a b d") - 0.5).abs() < 1e-12);
    }

    #[test]
    fn char_slice_multibyte() {
        let s = "héllo wörld";
        assert_eq!(char_slice(s, 0, 5), Some("héllo"));
        assert_eq!(char_slice(s, 6, 11), Some("wörld"));
        assert_eq!(char_slice(s, 11, 11), Some(""));
        assert_eq!(char_slice(s, 6, 12), None);
        assert_eq!(char_slice(s, 3, 2), None);
    }
}
