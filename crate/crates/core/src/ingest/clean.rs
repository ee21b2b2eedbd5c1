use std::sync::LazyLock;

use regex::Regex;

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?:https?://|www\.)\S+").expect("url regex"));
static MENTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"@([A-Za-z0-9_]+)").expect("mention regex"));

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '\u{2018}' | '\u{02BC}')
}

/// Strips URLs, `@` references, emoji, and punctuation; lowercases and
/// collapses whitespace. Mentions are returned in order of appearance.
///
/// Apostrophes join their neighbours (`don't` → `dont`); every other
/// non-alphanumeric character acts as a separator.
pub fn clean_text(raw: &str) -> (String, Vec<String>) {
    let mentions = MENTION
        .captures_iter(raw)
        .map(|c| c[1].to_string())
        .collect();
    let no_urls = URL.replace_all(raw, " ");
    let no_mentions = MENTION.replace_all(&no_urls, " ");
    let lowered = no_mentions.to_lowercase();

    let mut out = String::with_capacity(lowered.len());
    let mut pending_space = false;
    for c in lowered.chars() {
        if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        } else if !is_apostrophe(c) {
            pending_space = true;
        }
    }
    (out, mentions)
}

pub fn tokens(clean: &str) -> impl Iterator<Item = &str> {
    clean.split_whitespace()
}
