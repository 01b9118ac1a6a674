fn is_delimiter(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '\n')
}

/// Splits at `.`, `!`, `?` and newlines. Segments are trimmed and empty ones
/// dropped, so runs of delimiters collapse.
pub fn split_sentences(text: &str) -> Vec<String> {
    text.split(is_delimiter)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basic_rules() {
        assert_eq!(split_sentences("A b. C d!\nE"), ["A b", "C d", "E"]);
        assert!(split_sentences("...").is_empty());
        assert_eq!(split_sentences("no delimiters"), ["no delimiters"]);
        assert_eq!(split_sentences("  x?!  y\n\n"), ["x", "y"]);
        assert!(split_sentences("").is_empty());
    }

    proptest! {
        #[test]
        fn content_characters_preserved(text in "[a-c .!?\n\t]{0,60}") {
            let joined = split_sentences(&text).join(" ");
            let keep = |s: &str| s.chars().filter(|c| !c.is_whitespace() && !is_delimiter(*c)).collect::<String>();
            prop_assert_eq!(keep(&joined), keep(&text));
        }
    }
}
