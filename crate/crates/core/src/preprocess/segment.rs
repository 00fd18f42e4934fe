//! Rule-based sentence splitting.

/// Lowercased words that end in a period without ending a sentence.
const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "st", "jr", "sr", "prof", "vs", "etc", "lt", "sgt", "capt", "det",
    "gen", "col", "rev", "mt", "no",
];

/// Splits on `.`, `!` and `?` followed by whitespace (closing quotes and
/// brackets stay with their sentence), and on blank lines. A period after a
/// known abbreviation or a single capital initial does not split. Text with
/// no terminal punctuation comes back as one sentence.
pub fn segment_sentences(raw: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = raw.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c == '\n' {
            // Blank line: newline, optional horizontal space, newline.
            let mut j = i + 1;
            while j < chars.len() && chars[j].1 != '\n' && chars[j].1.is_whitespace() {
                j += 1;
            }
            if j < chars.len() && chars[j].1 == '\n' {
                push_trimmed(&mut out, &raw[start..pos]);
                start = chars[j].0;
                i = j + 1;
                continue;
            }
        }
        if matches!(c, '.' | '!' | '?') {
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j].1, '.' | '!' | '?' | '"' | '\'' | ')' | ']' | '”' | '’') {
                j += 1;
            }
            let at_break = j == chars.len() || chars[j].1.is_whitespace();
            if at_break && !(c == '.' && j == i + 1 && guarded(&raw[start..pos])) {
                let end = if j == chars.len() { raw.len() } else { chars[j].0 };
                push_trimmed(&mut out, &raw[start..end]);
                start = end;
                i = j;
                continue;
            }
            i = j;
            continue;
        }
        i += 1;
    }
    push_trimmed(&mut out, &raw[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let t = s.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
}

/// Whether a period ending `before` (the current sentence so far) follows an
/// abbreviation or a mid-sentence initial.
fn guarded(before: &str) -> bool {
    let word: String = before
        .chars()
        .rev()
        .take_while(|c| c.is_alphabetic())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    if word.is_empty() {
        return false;
    }
    let mut cs = word.chars();
    if let (Some(only), None) = (cs.next(), cs.next()) {
        if only.is_uppercase() {
            // A lone letter opening the sentence is a sentence of its own.
            return before.trim() != word;
        }
    }
    ABBREVIATIONS.contains(&word.to_lowercase().as_str())
}
