//! Shared text utilities: tokenization, stopword filtering, phrase
//! containment, and name slugs.
//!
//! Every textual comparison in the crate (metric computation, the
//! correctness judge, anonymity checks, snippet overlap scoring) goes
//! through [`tokenize`] so the normalization rule is stated exactly once:
//! lowercase, split on non-alphanumeric characters, drop empty fragments.

/// Stopwords used when reducing text to content tokens.
///
/// Deliberately excludes interrogatives (who/what/where/when/why/how/which):
/// question words carry signal when scoring snippet overlap against a
/// question. Must stay sorted — [`is_stopword`] binary-searches it.
const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "been", "being", "but", "by", "did", "do", "does",
    "done", "for", "from", "had", "has", "have", "he", "her", "his", "i", "in", "is", "it", "its",
    "me", "my", "of", "on", "or", "our", "she", "that", "the", "their", "them", "these", "they",
    "this", "those", "to", "us", "was", "we", "were", "with", "you", "your",
];

/// Interrogatives stripped (in addition to stopwords) when deriving a
/// detection query from a question; see [`crate::region::detection_query`].
pub(crate) const INTERROGATIVES: &[&str] = &[
    "how", "what", "when", "where", "which", "who", "whom", "whose", "why",
];

/// Lowercase, split on non-alphanumeric characters, drop empty fragments.
///
/// `"Who painted it?"` tokenizes to `["who", "painted", "it"]`;
/// `"Mona-Lisa (1503)"` to `["mona", "lisa", "1503"]`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// True when `token` (already lowercased) is on the stopword list.
pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Tokenize and drop stopwords. Interrogatives survive by design.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !is_stopword(t))
        .collect()
}

/// Count whitespace-separated tokens (the budget unit for prompt assembly
/// and the answer-length statistic).
pub fn whitespace_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Search `haystack` for `phrase` as a contiguous token subsequence after
/// normalization (case-insensitive, punctuation-stripped). Returns the
/// matched span in normalized form (tokens joined by single spaces), or
/// `None` when the phrase does not occur or normalizes to nothing.
pub fn find_phrase(haystack: &str, phrase: &str) -> Option<String> {
    let hay = tokenize(haystack);
    let needle = tokenize(phrase);
    if needle.is_empty() || hay.len() < needle.len() {
        return None;
    }
    hay.windows(needle.len())
        .any(|w| w == needle.as_slice())
        .then(|| needle.join(" "))
}

/// Derive a stable identifier from an entity name: lowercase alphanumeric
/// runs joined by single hyphens. `"Abel Tasman National Park"` becomes
/// `"abel-tasman-national-park"`.
pub fn slug(name: &str) -> String {
    tokenize(name).join("-")
}
