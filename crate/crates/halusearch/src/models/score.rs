use crate::core::HallucinationScore;

use super::{ModelError, RewardMode};

/// Parses a reward-model reply into a score. The last standalone digit in
/// 1..=5 wins (critique replies end with the score line); "standalone" means
/// not adjacent to another digit or a decimal point. In critique mode the
/// text preceding the score is captured as the critique. No integer in range
/// is an error carrying the raw reply; clamping is never performed.
pub fn parse_likert_reply(reply: &str, mode: RewardMode) -> Result<HallucinationScore, ModelError> {
    let chars: Vec<char> = reply.chars().collect();
    let mut found: Option<(usize, u8)> = None;
    for (i, &c) in chars.iter().enumerate() {
        if !('1'..='5').contains(&c) {
            continue;
        }
        let prev_ok = i == 0 || {
            let p = chars[i - 1];
            !p.is_ascii_digit() && p != '.'
        };
        let next_ok = i + 1 == chars.len() || {
            let n = chars[i + 1];
            !n.is_ascii_digit() && n != '.'
        };
        if prev_ok && next_ok {
            found = Some((i, c as u8 - b'0'));
        }
    }
    let (pos, likert) = found.ok_or_else(|| ModelError::Score { raw: reply.to_string() })?;
    let critique = match mode {
        RewardMode::Generative => None,
        RewardMode::Critique => {
            let byte_pos = chars[..pos].iter().map(|c| c.len_utf8()).sum::<usize>();
            let prefix = reply[..byte_pos]
                .trim_end_matches(|c: char| {
                    c.is_whitespace() || c == ':' || c == '-' || c == '*'
                })
                .trim_end_matches("Score")
                .trim()
                .to_string();
            Some(prefix)
        }
    };
    HallucinationScore::new(likert, critique)
        .map_err(|_| ModelError::Score { raw: reply.to_string() })
}
