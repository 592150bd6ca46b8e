//! Text folding shared by subject merging, gold matching and value grouping.

/// Lower-cases, drops possessive `'s`, and turns every non-alphanumeric run
/// into a single space.
pub fn fold(text: &str) -> String {
    let lowered = text.to_lowercase();
    let mut cleaned = String::with_capacity(lowered.len());
    let chars: Vec<char> = lowered.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let is_apostrophe = matches!(c, '\'' | '\u{2019}' | '\u{02bc}');
        if is_apostrophe {
            let next_is_s = chars.get(i + 1) == Some(&'s');
            let word_ends = chars.get(i + 2).is_none_or(|n| !n.is_alphanumeric());
            if next_is_s && word_ends {
                i += 2;
                continue;
            }
            // "users'" and "o'brien" both lose the apostrophe without splitting.
            i += 1;
            continue;
        }
        cleaned.push(if c.is_alphanumeric() { c } else { ' ' });
        i += 1;
    }
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn tokens(text: &str) -> Vec<String> {
    fold(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// True when `needle` occurs in `haystack` as a contiguous run of whole tokens.
pub fn contains_phrase(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && needle.len() <= haystack.len() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// True when every token of `short` appears in `long`, in order.
pub fn is_token_subsequence(short: &[String], long: &[String]) -> bool {
    if short.is_empty() {
        return false;
    }
    let mut it = long.iter();
    short.iter().all(|s| it.any(|l| l == s))
}

/// Crude suffix stripping so "users"/"user" and "speaking"/"speak" compare equal.
pub fn stem(token: &str) -> String {
    let n = token.chars().count();
    if n > 5 {
        if let Some(base) = token.strip_suffix("ing") {
            return base.to_string();
        }
    }
    if n > 4 {
        if let Some(base) = token.strip_suffix("ies") {
            return format!("{base}y");
        }
    }
    if n > 3 && token.ends_with('s') && !token.ends_with("ss") {
        return token[..token.len() - 1].to_string();
    }
    token.to_string()
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "and", "or", "in", "on", "at", "to", "for", "by", "with", "who", "that", "which", "from",
    "as", "their", "his", "her", "its", "this", "these", "those",
];

/// Stemmed tokens with function words removed.
pub fn content_stems(text: &str) -> Vec<String> {
    tokens(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .map(|t| stem(&t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokens(s)
    }

    #[test]
    fn folding() {
        assert_eq!(fold("Users of Yandex's Alice"), "users of yandex alice");
        assert_eq!(fold("  NAGA   Munchetty! "), "naga munchetty");
        assert_eq!(fold("Drivers’ union"), "drivers union");
        assert_eq!(fold("Non-binary"), "non binary");
        assert_eq!(fold("CÉLINE Dion"), "céline dion");
    }

    #[test]
    fn subsequence() {
        assert!(is_token_subsequence(
            &toks("Users of Alice"),
            &toks("Users of Yandex's Alice")
        ));
        assert!(!is_token_subsequence(&toks("Alice users"), &toks("Users of Alice")));
        assert!(!is_token_subsequence(&[], &toks("x")));
    }

    #[test]
    fn phrase() {
        assert!(contains_phrase(&toks("former politician"), &toks("politician")));
        assert!(!contains_phrase(&toks("politicians"), &toks("politician")));
    }

    #[test]
    fn stems() {
        assert_eq!(stem("users"), "user");
        assert_eq!(stem("speaking"), "speak");
        assert_eq!(stem("communities"), "community");
        assert_eq!(stem("class"), "class");
        assert_eq!(stem("bus"), "bus");
    }
}
