//! The `key=value` text format shared by config files and the
//! checkpoint's config block: one pair per line, `#` comments, keys
//! unique, rendered in sorted order.

use std::collections::BTreeMap;

use super::PipelineError;

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            PipelineError::Config(format!("line {}: expected key=value, got {line:?}", i + 1))
        })?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(PipelineError::Config(format!("line {}: empty key", i + 1)));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(PipelineError::Config(format!(
                "line {}: duplicate key {key}",
                i + 1
            )));
        }
    }
    Ok(map)
}

pub fn render_kv(map: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in map {
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_whitespace() {
        let text = "# a comment\n\n  lr = 0.01 \nseed=7\n";
        let map = parse_kv(text).unwrap();
        assert_eq!(map["lr"], "0.01");
        assert_eq!(map["seed"], "7");
        assert_eq!(map.len(), 2);
    }

    #[test]
    fn round_trips_through_render() {
        let mut map = BTreeMap::new();
        map.insert("b".to_string(), "2".to_string());
        map.insert("a".to_string(), "1,2,3".to_string());
        let text = render_kv(&map);
        assert_eq!(text, "a=1,2,3\nb=2\n");
        assert_eq!(parse_kv(&text).unwrap(), map);
    }

    #[test]
    fn rejects_duplicates_and_bare_lines() {
        assert!(parse_kv("a=1\na=2\n").is_err());
        assert!(parse_kv("just words\n").is_err());
        assert!(parse_kv("=5\n").is_err());
    }
}
