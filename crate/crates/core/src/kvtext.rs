//! Line-oriented `key = value` text shared by schedule specs and run configs.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    /// 1-based line number in the source text.
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits `text` into entries. `#` starts a comment; blank lines are skipped.
pub fn entries(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| {
            Error::parse(line, format!("expected `key = value`, got `{content}`"))
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return Err(Error::parse(
                line,
                format!("expected `key = value`, got `{content}`"),
            ));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(Error::parse(
                line,
                format!("duplicate key `{key}` (first set on line {})", prev.line),
            ));
        }
        out.push(Entry {
            line,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(out)
}

/// Splits `name(arg, arg, ...)` into the name and trimmed arguments.
pub fn call(line: usize, value: &str) -> Result<(String, Vec<String>)> {
    let open = value
        .find('(')
        .ok_or_else(|| Error::parse(line, format!("expected `name(...)`, got `{value}`")))?;
    if !value.ends_with(')') {
        return Err(Error::parse(line, format!("missing `)` in `{value}`")));
    }
    let name = value[..open].trim().to_string();
    let inner = value[open + 1..value.len() - 1].trim();
    let args = if inner.is_empty() {
        Vec::new()
    } else {
        inner.split(',').map(|a| a.trim().to_string()).collect()
    };
    if args.iter().any(String::is_empty) {
        return Err(Error::parse(line, format!("empty argument in `{value}`")));
    }
    Ok((name, args))
}

pub fn real(line: usize, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("expected a number, got `{s}`")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite number `{s}`")));
    }
    Ok(v)
}

pub fn integer(line: usize, s: &str) -> Result<u64> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("expected a non-negative integer, got `{s}`")))
}

pub fn boolean(line: usize, s: &str) -> Result<bool> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::parse(
            line,
            format!("expected true/false, got `{other}`"),
        )),
    }
}
