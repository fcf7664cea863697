//! Plain-text `key=value` metadata files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::{RegadError, Result};

pub type KvMap = BTreeMap<String, String>;

pub fn format(map: &KvMap) -> String {
    map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn parse(text: &str) -> Result<KvMap> {
    let mut out = KvMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| RegadError::MetadataMismatch(format!("line {}: expected key=value", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn write(path: &Path, map: &KvMap) -> Result<()> {
    fs::write(path, format(map)).map_err(|e| RegadError::io(path, e))
}

pub fn read(path: &Path) -> Result<KvMap> {
    let text = fs::read_to_string(path).map_err(|e| RegadError::io(path, e))?;
    parse(&text)
}

pub fn get<'a>(map: &'a KvMap, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| RegadError::MetadataMismatch(format!("missing key `{key}`")))
}

pub fn get_parsed<T: FromStr>(map: &KvMap, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = get(map, key)?;
    raw.parse()
        .map_err(|e| RegadError::MetadataMismatch(format!("`{key}` = `{raw}`: {e}")))
}

/// Comma-separated list.
pub fn get_list<T: FromStr>(map: &KvMap, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let raw = get(map, key)?;
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| RegadError::MetadataMismatch(format!("`{key}` item `{s}`: {e}")))
        })
        .collect()
}

pub fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut m = KvMap::new();
        m.insert("b".into(), "1,2,3".into());
        m.insert("a".into(), "x=y".into());
        let back = parse(&format(&m)).unwrap();
        assert_eq!(back, m);
        assert_eq!(get_list::<u32>(&back, "b").unwrap(), vec![1, 2, 3]);
        assert!(get(&back, "c").is_err());
    }
}
