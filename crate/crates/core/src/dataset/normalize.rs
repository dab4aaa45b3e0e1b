use unicode_normalization::UnicodeNormalization;

/// NFKC, lowercase, every run of non-alphanumeric characters collapsed to a
/// single space, trimmed.
pub fn normalize_title(title: &str) -> String {
    let mut current = normalize_once(title);
    // A handful of exotic code points (alphabetic combining marks, case folds
    // that leave NFKC) need a second pass to reach the fixed point.
    for _ in 0..4 {
        let next = normalize_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn normalize_once(text: &str) -> String {
    let folded: String = text.nfkc().flat_map(char::to_lowercase).collect::<String>().nfkc().collect();
    let mut out = String::with_capacity(folded.len());
    let mut gap = false;
    for c in folded.chars() {
        if c.is_alphanumeric() {
            if gap && !out.is_empty() {
                out.push(' ');
            }
            gap = false;
            out.push(c);
        } else {
            gap = true;
        }
    }
    out
}

/// Whitespace tokens of the normalized text.
pub fn tokens(text: &str) -> Vec<String> {
    normalize_title(text).split_whitespace().map(str::to_owned).collect()
}
