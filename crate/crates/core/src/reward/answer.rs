//! Exact-match answer checking.

/// Trims, case-folds, collapses whitespace and strips surrounding punctuation.
pub fn normalize_answer(text: &str) -> String {
    let folded = text.to_lowercase();
    let stripped = folded.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation());
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Leading option letter of a multiple-choice reply (`"B"`, `"(b)"`, `"B. red"`),
/// restricted to the first `n_choices` letters.
pub fn option_letter(text: &str, n_choices: usize) -> Option<char> {
    let norm = normalize_answer(text);
    let mut chars = norm.chars();
    let first = chars.next()?;
    let idx = (first as u32).checked_sub('a' as u32)? as usize;
    if !first.is_ascii_lowercase() || idx >= n_choices {
        return None;
    }
    match chars.next() {
        None => Some(first),
        Some(c) if !c.is_alphanumeric() => Some(first),
        _ => None,
    }
}

fn parse_number(text: &str) -> Option<f64> {
    let t = text.replace(',', "");
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Whether `answer` matches `truth`. With `choices`, both sides are reduced to
/// an option letter (a reply may also quote the choice text verbatim).
pub fn answers_match(answer: &str, truth: &str, choices: Option<&[String]>) -> bool {
    if let Some(choices) = choices.filter(|c| !c.is_empty()) {
        let letter_of = |s: &str| {
            option_letter(s, choices.len()).or_else(|| {
                let n = normalize_answer(s);
                choices
                    .iter()
                    .position(|c| normalize_answer(c) == n)
                    .map(|i| (b'a' + i as u8) as char)
            })
        };
        return match (letter_of(answer), letter_of(truth)) {
            (Some(a), Some(t)) => a == t,
            _ => false,
        };
    }
    let (a, t) = (normalize_answer(answer), normalize_answer(truth));
    if a == t {
        return true;
    }
    match (parse_number(&a), parse_number(&t)) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-9 * y.abs().max(1.0),
        _ => false,
    }
}
