//! Flat `key=value` text: one pair per line, `#` starts a comment.

use crate::error::{Error, Result};

/// Parse `key=value` lines in order. Keys are trimmed and `_` is folded to
/// `-`; blank lines and comments are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
        })?;
        let key = normalize_key(key);
        if key.is_empty() {
            return Err(Error::config(format!("line {}: empty key", lineno + 1)));
        }
        pairs.push((key, value.trim().to_string()));
    }
    Ok(pairs)
}

pub fn normalize_key(key: &str) -> String {
    key.trim().replace('_', "-")
}

pub(crate) fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("bad value {value:?} for {key}")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!("bad boolean {value:?} for {key}"))),
    }
}

pub fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

pub(crate) fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blank_lines() {
        let pairs = parse("# header\nd = 64\n\nuse_glu=true # inline\n").unwrap();
        assert_eq!(
            pairs,
            vec![("d".into(), "64".into()), ("use-glu".into(), "true".into())]
        );
    }

    #[test]
    fn missing_equals_is_an_error() {
        assert!(parse("d 64").is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<usize>("k", "3, 7,15").unwrap(), vec![3, 7, 15]);
        assert!(parse_list::<usize>("k", "3,x").is_err());
    }
}
