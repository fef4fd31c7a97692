//! Character-offset helpers. Regex matches report byte offsets; everything
//! public in this crate speaks in `char` offsets.

/// Number of chars in `s`.
pub(crate) fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Char offset of byte offset `byte` within `s`. `byte` must sit on a char
/// boundary.
pub(crate) fn char_offset(s: &str, byte: usize) -> usize {
    if s.is_ascii() {
        return byte;
    }
    s[..byte].chars().count()
}

/// Byte offset of char offset `ch`, or `None` if `ch` is past the end.
pub(crate) fn byte_offset(s: &str, ch: usize) -> Option<usize> {
    if s.is_ascii() {
        return (ch <= s.len()).then_some(ch);
    }
    if ch == 0 {
        return Some(0);
    }
    let mut count = 0;
    for (b, _) in s.char_indices() {
        if count == ch {
            return Some(b);
        }
        count += 1;
    }
    (count == ch).then_some(s.len())
}

/// Substring by char range `[start, end)`.
pub(crate) fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let b0 = byte_offset(s, start)?;
    let b1 = byte_offset(s, end)?;
    Some(&s[b0..b1])
}
