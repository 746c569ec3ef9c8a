/// No JSON object could be located in a reply.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no JSON object found in reply")]
pub struct NoJsonFound;

/// Returns the first balanced `{...}` object, looking inside fenced code
/// blocks before falling back to the raw text.
///
/// Balance is checked lexically (braces inside string literals are ignored);
/// the returned slice is not guaranteed to be valid JSON.
pub fn extract_json_block(text: &str) -> Result<&str, NoJsonFound> {
    for body in fenced_blocks(text) {
        if let Some(obj) = first_balanced_object(body) {
            return Ok(obj);
        }
    }
    first_balanced_object(text).ok_or(NoJsonFound)
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        // skip the info string (e.g. "json") up to end of line
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        match body.find("```") {
            Some(end) => {
                blocks.push(&body[..end]);
                rest = &body[end + 3..];
            }
            None => {
                blocks.push(body);
                break;
            }
        }
    }
    blocks
}

fn first_balanced_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut search_from = 0;
    while let Some(offset) = text[search_from..].find('{') {
        let start = search_from + offset;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_string {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&text[start..=i]);
                    }
                }
                _ => {}
            }
        }
        search_from = start + 1;
    }
    None
}
