//! Single-pass template filling for prompt construction.

/// Replaces `{key}` markers for the given keys only, in one left-to-right
/// pass. Substituted values are never rescanned, so map or trajectory content
/// containing brace markers cannot inject into later slots. Unknown braces
/// (e.g. JSON examples inside the template) pass through untouched.
pub(crate) fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        for (key, value) in values {
            let marker_len = key.len() + 2;
            if tail.len() >= marker_len
                && tail.as_bytes()[marker_len - 1] == b'}'
                && &tail[1..marker_len - 1] == *key
            {
                out.push_str(value);
                rest = &tail[marker_len..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}
