use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One raw user-item event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub timestamp: Option<i64>,
}

/// Column layout of a delimited interaction file. Header cells are matched
/// either exactly or on the part before a `:` type suffix (`user_id:token`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelimitedFormat {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_user")]
    pub user: String,
    #[serde(default = "default_item")]
    pub item: String,
    #[serde(default = "default_timestamp")]
    pub timestamp: Option<String>,
}

fn default_delimiter() -> char {
    '\t'
}
fn default_user() -> String {
    "user_id".into()
}
fn default_item() -> String {
    "item_id".into()
}
fn default_timestamp() -> Option<String> {
    Some("timestamp".into())
}

impl Default for DelimitedFormat {
    fn default() -> Self {
        DelimitedFormat {
            delimiter: default_delimiter(),
            user: default_user(),
            item: default_item(),
            timestamp: default_timestamp(),
        }
    }
}

impl DelimitedFormat {
    pub fn csv() -> Self {
        DelimitedFormat { delimiter: ',', ..Default::default() }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadedInteractions {
    pub interactions: Vec<Interaction>,
    pub malformed: usize,
    /// 1-based line numbers of the first malformed rows (at most 20).
    pub malformed_lines: Vec<usize>,
}

fn column_matches(cell: &str, wanted: &str) -> bool {
    let cell = cell.trim();
    cell == wanted || cell.split(':').next() == Some(wanted)
}

fn parse_timestamp(s: &str) -> Option<i64> {
    s.parse::<i64>()
        .ok()
        .or_else(|| s.parse::<f64>().ok().filter(|v| v.is_finite()).map(|v| v.floor() as i64))
}

/// Read every well-formed row in file order. Rows with a wrong field count,
/// an empty user or item, or an unparsable timestamp are skipped and counted.
pub fn load_interactions(path: &Path, format: &DelimitedFormat) -> Result<LoadedInteractions> {
    if !format.delimiter.is_ascii() {
        return Err(Error::Config(format!("delimiter {:?} is not ascii", format.delimiter)));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter as u8)
        .has_headers(true)
        .flexible(true)
        .quoting(format.delimiter != '\t')
        .from_reader(std::io::BufReader::new(file));

    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse { path: path.into(), line: 1, msg: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| header.iter().position(|h| column_matches(h, name));
    let mut missing = Vec::new();
    let user_col = find(&format.user);
    let item_col = find(&format.item);
    let ts_col = format.timestamp.as_deref().map(|t| (t, find(t)));
    if user_col.is_none() {
        missing.push(format.user.clone());
    }
    if item_col.is_none() {
        missing.push(format.item.clone());
    }
    if let Some((name, None)) = ts_col {
        missing.push(name.to_string());
    }
    if !missing.is_empty() {
        return Err(Error::MissingColumns { path: path.into(), missing, header });
    }
    let (user_col, item_col) = (user_col.unwrap(), item_col.unwrap());
    let ts_col = ts_col.and_then(|(_, c)| c);

    let mut out = LoadedInteractions::default();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let mut bad = || {
            out.malformed += 1;
            if out.malformed_lines.len() < 20 {
                out.malformed_lines.push(line);
            }
        };
        let rec = match rec {
            Ok(r) => r,
            Err(_) => {
                bad();
                continue;
            }
        };
        if rec.len() != header.len() {
            bad();
            continue;
        }
        let user = rec[user_col].trim();
        let item = rec[item_col].trim();
        if user.is_empty() || item.is_empty() {
            bad();
            continue;
        }
        let timestamp = match ts_col.map(|c| rec[c].trim()) {
            None | Some("") => None,
            Some(s) => match parse_timestamp(s) {
                Some(t) => Some(t),
                None => {
                    bad();
                    continue;
                }
            },
        };
        out.interactions.push(Interaction { user: user.to_string(), item: item.to_string(), timestamp });
    }
    if out.malformed > 0 {
        log::warn!("{}: skipped {} malformed rows (first at lines {:?})", path.display(), out.malformed, out.malformed_lines);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn three_row_tsv_in_file_order() {
        let f = write("user_id\titem_id\ttimestamp\nu1\ta\t1\nu1\tb\t2\nu2\ta\t5\n");
        let got = load_interactions(f.path(), &DelimitedFormat::default()).unwrap();
        assert_eq!(got.malformed, 0);
        let pairs: Vec<_> = got.interactions.iter().map(|i| (i.user.as_str(), i.item.as_str(), i.timestamp)).collect();
        assert_eq!(pairs, vec![("u1", "a", Some(1)), ("u1", "b", Some(2)), ("u2", "a", Some(5))]);
    }

    #[test]
    fn header_only_file_is_empty() {
        let f = write("user_id\titem_id\ttimestamp\n");
        let got = load_interactions(f.path(), &DelimitedFormat::default()).unwrap();
        assert!(got.interactions.is_empty());
        assert_eq!(got.malformed, 0);
    }

    #[test]
    fn malformed_rows_are_counted() {
        // rows: ok, empty item, ok, too few fields, bad timestamp
        let f = write("user_id\titem_id\ttimestamp\nu1\ta\t1\nu1\t\t2\nu2\tb\t3\nu2\tc\nu3\td\tnoon\n");
        let got = load_interactions(f.path(), &DelimitedFormat::default()).unwrap();
        assert_eq!(got.interactions.len(), 2);
        assert_eq!(got.malformed, 3);
        assert_eq!(got.malformed_lines, vec![3, 5, 6]);
    }

    #[test]
    fn single_empty_item_row_counts_one() {
        let f = write("user_id\titem_id\ttimestamp\nu1\ta\t1\nu1\tb\t2\nu1\t\t3\nu2\ta\t4\nu2\tc\t5\n");
        let got = load_interactions(f.path(), &DelimitedFormat::default()).unwrap();
        assert_eq!(got.interactions.len(), 4);
        assert_eq!(got.malformed, 1);
    }

    #[test]
    fn typed_headers_and_float_timestamps() {
        let f = write("user_id:token\titem_id:token\trating:float\ttimestamp:float\n7\t42\t5\t978300760.0\n");
        let got = load_interactions(f.path(), &DelimitedFormat::default()).unwrap();
        assert_eq!(got.interactions[0].timestamp, Some(978300760));
    }

    #[test]
    fn missing_columns_are_named() {
        let f = write("uid,item_id\n1,2\n");
        let err = load_interactions(f.path(), &DelimitedFormat::csv()).unwrap_err();
        match err {
            Error::MissingColumns { missing, .. } => assert_eq!(missing, vec!["user_id", "timestamp"]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_interactions(Path::new("/nonexistent/x.tsv"), &DelimitedFormat::default()).unwrap_err();
        assert_eq!(err.kind(), "io");
    }
}
