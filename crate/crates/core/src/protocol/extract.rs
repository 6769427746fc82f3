use std::sync::LazyLock;

use regex::Regex;

static ALLOY_KEYWORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(sig|pred|fact|fun|assert|check|run)\b").expect("valid regex"));

// A line that opens a top-level Alloy paragraph or command.
static TOP_LEVEL_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^\s*(?:(?:abstract|one|lone|some|private|var)\s+)*(?:sig|pred|fact|fun|assert|check|run|module|open|enum)\b",
    )
    .expect("valid regex")
});

/// Contents of every closed triple-backtick fence, in order of appearance.
pub fn fenced_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        let is_fence = line.trim_start().starts_with("```");
        match (&mut current, is_fence) {
            (None, true) => current = Some(Vec::new()),
            (Some(lines), true) => {
                blocks.push(lines.join("\n"));
                current = None;
            }
            (Some(lines), false) => lines.push(line.trim_end_matches('\r')),
            (None, false) => {}
        }
    }
    blocks
}

/// Recovers a specification from a response that skipped the JSON tool format.
///
/// 1. If the text has fenced blocks: the largest one mentioning an Alloy keyword.
/// 2. Otherwise: from the first line opening a top-level Alloy paragraph to the
///    last line at which braces balance again.
pub fn extract_spec_fallback(raw_response: &str) -> Option<String> {
    let blocks = fenced_blocks(raw_response);
    if !blocks.is_empty() {
        return blocks.into_iter().filter(|b| ALLOY_KEYWORD.is_match(b)).fold(
            None,
            |best: Option<String>, b| match best {
                Some(cur) if cur.len() >= b.len() => Some(cur),
                _ => Some(b),
            },
        );
    }
    unfenced_listing(raw_response)
}

fn unfenced_listing(text: &str) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines.iter().position(|l| TOP_LEVEL_LINE.is_match(l))?;

    let mut depth: i64 = 0;
    let mut end = None;
    for (i, line) in lines.iter().enumerate().skip(start) {
        let code = strip_line_comment(line);
        for c in code.chars() {
            match c {
                '{' => depth += 1,
                '}' => depth -= 1,
                _ => {}
            }
        }
        if depth < 0 {
            break;
        }
        if depth == 0 && (code.contains('}') || TOP_LEVEL_LINE.is_match(line)) {
            end = Some(i);
        }
    }
    let end = end?;
    Some(lines[start..=end].iter().map(|l| l.trim_end_matches('\r')).collect::<Vec<_>>().join("\n"))
}

fn strip_line_comment(line: &str) -> &str {
    let cut = [line.find("//"), line.find("--")].into_iter().flatten().min();
    cut.map_or(line, |i| &line[..i])
}
