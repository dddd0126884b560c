use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user: u64,
    pub item: u64,
    pub timestamp: i64,
}

/// How to read a tab-separated interaction file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatOptions {
    /// Skip the first line.
    #[serde(default)]
    pub header: bool,
    /// Zero-based column holding the timestamp. `2` for `user item ts`,
    /// `3` for MovieLens-style `user item rating ts`.
    #[serde(default = "default_timestamp_column")]
    pub timestamp_column: usize,
}

fn default_timestamp_column() -> usize {
    2
}

impl Default for FormatOptions {
    fn default() -> Self {
        FormatOptions {
            header: false,
            timestamp_column: default_timestamp_column(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadStats {
    pub lines: usize,
    pub blank_lines: usize,
    pub records: usize,
    pub duplicates: usize,
}

/// Implicit-feedback events, grouped by user and ordered by time.
///
/// Records are sorted by `(user, timestamp)`; ties keep input order. Exact
/// duplicate `(user, item, timestamp)` triples are dropped.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InteractionLog {
    records: Vec<Interaction>,
    stats: LoadStats,
}

impl InteractionLog {
    pub fn from_records(records: impl IntoIterator<Item = Interaction>) -> Self {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        let mut duplicates = 0;
        for r in records {
            if seen.insert(r) {
                kept.push(r);
            } else {
                duplicates += 1;
            }
        }
        // stable: equal (user, timestamp) keep input order
        kept.sort_by_key(|r| (r.user, r.timestamp));
        let stats = LoadStats {
            lines: kept.len() + duplicates,
            blank_lines: 0,
            records: kept.len(),
            duplicates,
        };
        InteractionLog { records: kept, stats }
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn stats(&self) -> &LoadStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_users(&self) -> usize {
        self.records.iter().map(|r| r.user).collect::<BTreeSet<_>>().len()
    }

    pub fn num_items(&self) -> usize {
        self.records.iter().map(|r| r.item).collect::<BTreeSet<_>>().len()
    }

    /// Per-user time-ordered `(item, timestamp)` sequences.
    pub fn by_user(&self) -> BTreeMap<u64, Vec<(u64, i64)>> {
        let mut out: BTreeMap<u64, Vec<(u64, i64)>> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.user).or_default().push((r.item, r.timestamp));
        }
        out
    }
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, name: &str, path: &Path, line: usize) -> Result<T> {
    let raw = field.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("missing {name} column"),
    })?;
    let raw = raw.trim();
    // float-formatted timestamps ("881250949.0") are accepted
    raw.parse::<T>()
        .or_else(|e| {
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0)
                .and_then(|v| format!("{v:.0}").parse::<T>().ok())
                .ok_or(e)
        })
        .map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("cannot parse {name} from {raw:?}"),
        })
}

/// Parse tab-separated `user<TAB>item<TAB>timestamp` lines from `reader`.
pub fn parse_interactions(reader: impl BufRead, path: &Path, options: &FormatOptions) -> Result<InteractionLog> {
    if options.timestamp_column < 2 {
        return Err(Error::InvalidArgument(format!(
            "timestamp column {} collides with user/item columns",
            options.timestamp_column
        )));
    }
    let mut records = Vec::new();
    let mut lines = 0;
    let mut blank = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        lines += 1;
        if idx == 0 && options.header {
            continue;
        }
        if line.trim().is_empty() {
            blank += 1;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let user = parse_field::<u64>(fields.first().copied(), "user", path, line_no)?;
        let item = parse_field::<u64>(fields.get(1).copied(), "item", path, line_no)?;
        let timestamp = parse_field::<i64>(
            fields.get(options.timestamp_column).copied(),
            "timestamp",
            path,
            line_no,
        )?;
        records.push(Interaction { user, item, timestamp });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} contains no interactions",
            path.display()
        )));
    }
    let mut log = InteractionLog::from_records(records);
    log.stats.lines = lines;
    log.stats.blank_lines = blank;
    Ok(log)
}

pub fn load_interactions(path: impl AsRef<Path>, options: &FormatOptions) -> Result<InteractionLog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let log = parse_interactions(BufReader::new(file), path, options)?;
    log::info!(
        "loaded {} interactions from {} ({} duplicates dropped, {} users, {} items)",
        log.len(),
        path.display(),
        log.stats.duplicates,
        log.num_users(),
        log.num_items()
    );
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, opts: &FormatOptions) -> Result<InteractionLog> {
        parse_interactions(text.as_bytes(), Path::new("mem.tsv"), opts)
    }

    #[test]
    fn three_lines_in_time_order() {
        let log = parse("1\t10\t300\n1\t11\t100\n2\t10\t200\n", &FormatOptions::default()).unwrap();
        assert_eq!(log.len(), 3);
        let by_user = log.by_user();
        assert_eq!(by_user[&1], vec![(11, 100), (10, 300)]);
        assert_eq!(by_user[&2], vec![(10, 200)]);
    }

    #[test]
    fn duplicate_triple_counted_once() {
        let log = parse("1\t10\t5\n1\t10\t5\n1\t10\t6\n", &FormatOptions::default()).unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(log.stats().duplicates, 1);
    }

    #[test]
    fn ties_keep_input_order() {
        let log = parse("1\t30\t5\n1\t10\t5\n1\t20\t5\n", &FormatOptions::default()).unwrap();
        let items: Vec<u64> = log.by_user()[&1].iter().map(|p| p.0).collect();
        assert_eq!(items, vec![30, 10, 20]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("1\t2\t3\n4\tx\t6\n", &FormatOptions::default()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
        let err = parse("1\t2\n", &FormatOptions::default()).unwrap_err();
        assert!(err.to_string().contains("missing timestamp"), "{err}");
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            parse("", &FormatOptions::default()),
            Err(Error::EmptyInput(_))
        ));
        let header_only = FormatOptions {
            header: true,
            ..Default::default()
        };
        assert!(parse("user\titem\tts\n", &header_only).is_err());
    }

    #[test]
    fn header_and_ratings_layout() {
        let opts = FormatOptions {
            header: true,
            timestamp_column: 3,
        };
        let log = parse(
            "u\ti\tr\tt\n196\t242\t3\t881250949\n186\t302\t3.5\t891717742.0\n",
            &opts,
        )
        .unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(log.by_user()[&196], vec![(242, 881250949)]);
        assert_eq!(log.by_user()[&186], vec![(302, 891717742)]);
    }

    #[test]
    fn extra_column_ignored() {
        let log = parse("1\t2\t3\tfoo\n", &FormatOptions::default()).unwrap();
        assert_eq!(log.records()[0].timestamp, 3);
    }
}
