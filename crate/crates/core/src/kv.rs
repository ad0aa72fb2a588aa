//! `key=value` text: one pair per line, `#` starts a comment.

use crate::error::{Error, Result};

/// Splits text into ordered pairs, rejecting malformed lines and duplicates.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::config(format!("line {}", lineno + 1), format!("expected key=value, got {line:?}")));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::config(format!("line {}", lineno + 1), "empty key"));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Error::config(k, "given more than once"));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn render(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub(crate) fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(key, format!("cannot parse {v:?}")))
}

pub(crate) fn parse_f64(key: &str, v: &str) -> Result<f64> {
    let x: f64 = parse_num(key, v)?;
    if !x.is_finite() {
        return Err(Error::config(key, format!("{v} is not finite")));
    }
    Ok(x)
}

pub(crate) fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(key, format!("expected a boolean, got {v:?}"))),
    }
}

pub(crate) fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse_num(key, p.trim())).collect()
}

pub(crate) fn parse_size(key: &str, v: &str) -> Result<(usize, usize)> {
    let (h, w) = v
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::config(key, format!("expected HxW, got {v:?}")))?;
    Ok((parse_num(key, h.trim())?, parse_num(key, w.trim())?))
}

pub(crate) fn list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Shortest text that parses back to the same `f64`.
pub(crate) fn float(x: f64) -> String {
    format!("{x:?}")
}
