use super::types::Sentence;

const TERMINATORS: [char; 6] = ['.', '!', '?', '。', '！', '？'];

/// Splits text into sentences. A boundary is a terminator ('.', '!', '?',
/// '。', '！', '？') followed by whitespace or end-of-text; a '.' between two
/// digits never splits, so decimal numbers stay intact. Concatenating the
/// returned texts with single spaces reproduces the input up to whitespace
/// normalization. Empty input yields an empty list.
pub fn segment_sentences(text: &str) -> Vec<Sentence> {
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut prev: Option<char> = None;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if TERMINATORS.contains(&c) {
            let next = iter.peek().map(|&(_, n)| n);
            let at_boundary = match next {
                None => true,
                Some(n) => n.is_whitespace(),
            };
            let inside_decimal = c == '.'
                && prev.is_some_and(|p| p.is_ascii_digit())
                && next.is_some_and(|n| n.is_ascii_digit());
            if at_boundary && !inside_decimal {
                let end = i + c.len_utf8();
                push_trimmed(&mut out, &text[start..end]);
                start = end;
            }
        }
        prev = Some(c);
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<Sentence>, piece: &str) {
    let trimmed = piece.trim();
    if !trimmed.is_empty() {
        out.push(Sentence::new(trimmed, false));
    }
}

/// Segments a backend response, honoring its end-of-response marker: when the
/// input ends with `marker`, the marker is stripped and the last sentence is
/// flagged terminal.
pub fn segment_with_marker(text: &str, marker: &str) -> Vec<Sentence> {
    let trimmed = text.trim_end();
    let (body, ends) = match trimmed.strip_suffix(marker) {
        Some(rest) if !marker.is_empty() => (rest, true),
        _ => (trimmed, false),
    };
    let mut sentences = segment_sentences(body);
    if ends {
        if let Some(last) = sentences.last_mut() {
            last.terminal = true;
        }
    }
    sentences
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(text: &str) -> Vec<String> {
        segment_sentences(text).into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn single_sentence() {
        assert_eq!(texts("Unicorns don't exist."), vec!["Unicorns don't exist."]);
    }

    #[test]
    fn empty_input() {
        assert!(segment_sentences("").is_empty());
    }

    #[test]
    fn splits_on_all_three_ascii_terminators() {
        assert_eq!(
            texts("A is true. B follows! Done?"),
            vec!["A is true.", "B follows!", "Done?"]
        );
    }

    #[test]
    fn decimal_numbers_do_not_split() {
        assert_eq!(
            texts("Pi is 3.14 exactly. Done."),
            vec!["Pi is 3.14 exactly.", "Done."]
        );
    }

    #[test]
    fn fullwidth_terminators_split_before_whitespace() {
        assert_eq!(texts("事实一。 事实二。"), vec!["事实一。", "事实二。"]);
    }

    #[test]
    fn marker_sets_terminal_on_last_sentence() {
        let s = segment_with_marker("First. Second. <END>", "<END>");
        assert_eq!(s.len(), 2);
        assert!(!s[0].terminal);
        assert!(s[1].terminal);
        assert_eq!(s[1].text, "Second.");
    }

    #[test]
    fn no_marker_means_no_terminal_flag() {
        let s = segment_with_marker("First. Second.", "<END>");
        assert!(s.iter().all(|x| !x.terminal));
    }
}
