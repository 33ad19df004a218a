//! Tokenization shared by the knowledge base and the corpus.
//!
//! The rule is deliberately simple so that every component sees the same
//! token stream: scan characters, split on whitespace, and emit each
//! punctuation character as its own single-character token. Tokens are
//! lowercased after span extraction, so spans always index the original
//! text (character offsets, not bytes).

/// A token together with its `[start, end)` character span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpannedToken {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Tokenize `text`, keeping character spans.
pub fn tokenize_spans(text: &str) -> Vec<SpannedToken> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut cur_start = 0usize;
    for (pos, ch) in text.chars().enumerate() {
        if ch.is_whitespace() {
            flush(&mut out, &mut cur, cur_start, pos);
        } else if ch.is_alphanumeric() {
            if cur.is_empty() {
                cur_start = pos;
            }
            cur.push(ch);
        } else {
            // punctuation: ends the current token and stands alone
            flush(&mut out, &mut cur, cur_start, pos);
            out.push(SpannedToken {
                text: ch.to_lowercase().to_string(),
                start: pos,
                end: pos + 1,
            });
        }
    }
    let end = text.chars().count();
    flush(&mut out, &mut cur, cur_start, end);
    out
}

fn flush(out: &mut Vec<SpannedToken>, cur: &mut String, start: usize, end: usize) {
    if !cur.is_empty() {
        out.push(SpannedToken {
            text: cur.to_lowercase(),
            start,
            end,
        });
        cur.clear();
    }
}

/// Tokenize `text`, discarding spans.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_spans(text).into_iter().map(|t| t.text).collect()
}

/// Canonical form used to key alias lookups: tokens joined by single spaces.
pub fn normalize_surface(text: &str) -> String {
    tokenize(text).join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_whitespace_and_lowercases() {
        assert_eq!(tokenize("New York"), vec!["new", "york"]);
    }

    #[test]
    fn punctuation_becomes_own_token() {
        assert_eq!(tokenize("Barcelona, Spain."), vec!["barcelona", ",", "spain", "."]);
    }

    #[test]
    fn spans_are_char_offsets() {
        let toks = tokenize_spans("a bc");
        assert_eq!(toks[0].start, 0);
        assert_eq!(toks[0].end, 1);
        assert_eq!(toks[1].start, 2);
        assert_eq!(toks[1].end, 4);
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn normalize_collapses_case_and_spacing() {
        assert_eq!(normalize_surface("  New   YORK "), "new york");
        assert_eq!(normalize_surface("U.S."), "u . s .");
    }
}
