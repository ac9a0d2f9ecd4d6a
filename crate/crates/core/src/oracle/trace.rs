use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::block::Key;

/// Kind of a linearized operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Insert,
    Delete,
    /// A delete that returned nothing.
    Fail,
}

impl OpKind {
    fn code(self) -> char {
        match self {
            OpKind::Insert => 'I',
            OpKind::Delete => 'D',
            OpKind::Fail => 'F',
        }
    }
}

/// One operation at its linearization index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Record {
    pub idx: u64,
    pub op: OpKind,
    pub handle: usize,
    /// `None` exactly for failed deletes.
    pub key: Option<Key>,
}

impl Record {
    pub fn insert(idx: u64, handle: usize, key: Key) -> Self {
        Self { idx, op: OpKind::Insert, handle, key: Some(key) }
    }

    pub fn delete(idx: u64, handle: usize, key: Key) -> Self {
        Self { idx, op: OpKind::Delete, handle, key: Some(key) }
    }

    pub fn fail(idx: u64, handle: usize) -> Self {
        Self { idx, op: OpKind::Fail, handle, key: None }
    }
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.key {
            Some(k) => write!(f, "{} {} {} {}", self.idx, self.op.code(), self.handle, k),
            None => write!(f, "{} {} {} -", self.idx, self.op.code(), self.handle),
        }
    }
}

/// A linearized history, ordered by index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<Record>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("record {record}: linearization index {idx} does not increase")]
    IndexOrder { record: usize, idx: u64 },
    #[error("record {record}: key {key} is not live")]
    NotLive { record: usize, key: Key },
    #[error("record {record}: {msg}")]
    BadRecord { record: usize, msg: String },
}

impl Trace {
    pub fn new(records: Vec<Record>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Builds a trace from a plain operation sequence, numbering records
    /// from zero.
    pub fn from_ops(ops: impl IntoIterator<Item = (OpKind, usize, Option<Key>)>) -> Self {
        let records = ops
            .into_iter()
            .enumerate()
            .map(|(i, (op, handle, key))| Record { idx: i as u64, op, handle, key })
            .collect();
        Self { records }
    }

    /// Checks index order and key presence.
    pub fn validate_shape(&self) -> Result<(), TraceError> {
        let mut last = None;
        for (i, r) in self.records.iter().enumerate() {
            if last.is_some_and(|l| r.idx <= l) {
                return Err(TraceError::IndexOrder { record: i, idx: r.idx });
            }
            last = Some(r.idx);
            match (r.op, r.key) {
                (OpKind::Fail, Some(_)) => {
                    return Err(TraceError::BadRecord { record: i, msg: "failed delete carries a key".into() })
                }
                (OpKind::Insert | OpKind::Delete, None) => {
                    return Err(TraceError::BadRecord { record: i, msg: "missing key".into() })
                }
                _ => {}
            }
        }
        Ok(())
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.records {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

impl Trace {
    /// Parses `idx op handle key` lines, also returning the 1-based source
    /// line of every record. Blank lines and `#` comments are skipped; the
    /// key of an `F` record may be `-` or absent.
    pub fn parse_with_lines(s: &str) -> Result<(Self, Vec<usize>), TraceError> {
        let mut records = Vec::new();
        let mut lines = Vec::new();
        for (n, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| TraceError::Parse { line: n + 1, msg: msg.to_string() };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !(3..=4).contains(&fields.len()) {
                return Err(err("expected `idx op handle key`"));
            }
            let idx = fields[0].parse().map_err(|_| err("bad index"))?;
            let op = match fields[1] {
                "I" => OpKind::Insert,
                "D" => OpKind::Delete,
                "F" => OpKind::Fail,
                _ => return Err(err("op must be I, D or F")),
            };
            let handle = fields[2].parse().map_err(|_| err("bad handle"))?;
            let key = match (op, fields.get(3)) {
                (OpKind::Fail, None | Some(&"-")) => None,
                (OpKind::Fail, Some(_)) => return Err(err("F records carry no key")),
                (_, Some(k)) => Some(k.parse().map_err(|_| err("bad key"))?),
                (_, None) => return Err(err("missing key")),
            };
            records.push(Record { idx, op, handle, key });
            lines.push(n + 1);
        }
        Ok((Trace { records }, lines))
    }
}

impl FromStr for Trace {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_with_lines(s).map(|(t, _)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let t = Trace::new(vec![Record::insert(0, 1, 5), Record::delete(3, 0, 5), Record::fail(7, 2)]);
        let text = t.to_string();
        assert_eq!(text, "0 I 1 5\n3 D 0 5\n7 F 2 -\n");
        assert_eq!(text.parse::<Trace>().unwrap(), t);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let e = "0 I 0 1\n1 X 0 2\n".parse::<Trace>().unwrap_err();
        assert_eq!(e, TraceError::Parse { line: 2, msg: "op must be I, D or F".into() });
        assert!("0 D 0\n".parse::<Trace>().is_err());
        assert!("0 F 0 3\n".parse::<Trace>().is_err());
        let (t, lines) = Trace::parse_with_lines("# c\n\n4 F 1\n").unwrap();
        assert_eq!((t.records, lines), (vec![Record::fail(4, 1)], vec![3]));
    }

    #[test]
    fn shape_requires_increasing_indices() {
        let t = Trace::new(vec![Record::insert(2, 0, 1), Record::insert(2, 0, 1)]);
        assert_eq!(t.validate_shape(), Err(TraceError::IndexOrder { record: 1, idx: 2 }));
    }
}
