//! Line-based `key = value` parser with `[section]` headers, shared by the
//! network description files and dataset manifests.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Section { line: usize, name: String },
    Pair { line: usize, key: String, value: String },
}

/// Parse the format: blank lines and `#` comments ignored, sections as
/// `[name]`, pairs as `key = value`.
pub fn parse(text: &str) -> Result<Vec<Item>> {
    let mut items = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if s.is_empty() {
            continue;
        }
        if let Some(name) = s.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(Error::Parse {
                line,
                msg: format!("unterminated section header `{s}`"),
            })?;
            items.push(Item::Section {
                line,
                name: name.trim().to_string(),
            });
        } else if let Some((k, v)) = s.split_once('=') {
            items.push(Item::Pair {
                line,
                key: k.trim().to_string(),
                value: v.trim().to_string(),
            });
        } else {
            return Err(Error::Parse {
                line,
                msg: format!("expected `key = value` or `[section]`, got `{s}`"),
            });
        }
    }
    Ok(items)
}

pub fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid value `{value}` for `{key}`"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_pairs() {
        let items = parse("a = 1\n# comment\n[sec]\nb=two\n").unwrap();
        assert_eq!(items.len(), 3);
        assert!(matches!(&items[1], Item::Section { name, .. } if name == "sec"));
        assert!(matches!(&items[2], Item::Pair { key, value, .. } if key == "b" && value == "two"));
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse("a = 1\nnot a pair\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
