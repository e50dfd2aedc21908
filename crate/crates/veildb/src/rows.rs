//! Schemas, typed values, and the fixed-width row codec.
//!
//! Every row of a table serializes to exactly `Schema::row_size` bytes: a
//! one-byte in-use flag followed by each column at its declared width. Fixed
//! widths are what let storage treat rows as interchangeable blocks; a dummy
//! row is all zeroes and is distinguishable only after decryption.

use crate::error::{EngineError, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColType {
    /// Signed 64-bit integer.
    Int64,
    /// UTF-8 text stored in a fixed number of bytes, zero-padded.
    Utf8(u16),
    /// Calendar date stored as i64 days since 1970-01-01.
    Date,
}

impl ColType {
    pub fn width(&self) -> usize {
        match self {
            ColType::Int64 | ColType::Date => 8,
            ColType::Utf8(k) => *k as usize,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub ty: ColType,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schema {
    columns: Vec<Column>,
    row_size: u32,
}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        if columns.is_empty() {
            return Err(EngineError::TypeError("a schema needs at least one column".into()));
        }
        for (i, c) in columns.iter().enumerate() {
            if let ColType::Utf8(0) = c.ty {
                return Err(EngineError::TypeError(format!(
                    "column {} has zero width",
                    c.name
                )));
            }
            if columns[..i].iter().any(|p| p.name == c.name) {
                return Err(EngineError::TypeError(format!(
                    "duplicate column name {}",
                    c.name
                )));
            }
        }
        let row_size = 1 + columns.iter().map(|c| c.ty.width()).sum::<usize>();
        Ok(Self {
            columns,
            row_size: row_size as u32,
        })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    /// Serialized row width in bytes, in-use flag included.
    pub fn row_size(&self) -> u32 {
        self.row_size
    }

    pub fn col_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| EngineError::UnknownColumn(name.into()))
    }

    /// Concatenation used by joins: every column of `self`, then of `other`,
    /// names qualified to stay unique.
    pub fn joined(&self, left_name: &str, other: &Schema, right_name: &str) -> Result<Schema> {
        let mut cols = Vec::new();
        for c in &self.columns {
            cols.push(Column {
                name: format!("{left_name}.{}", c.name),
                ty: c.ty,
            });
        }
        for c in &other.columns {
            cols.push(Column {
                name: format!("{right_name}.{}", c.name),
                ty: c.ty,
            });
        }
        Schema::new(cols)
    }
}

/// The derived `Ord` orders by variant then payload; it exists so callers
/// can canonicalize mixed row sets. Inside predicates and keys, columns are
/// always compared through `cmp_same_type`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Value {
    Int(i64),
    Text(String),
    Date(i64),
    /// Result of an aggregate over zero qualifying rows.
    Null,
}

impl Value {
    pub fn matches_type(&self, ty: ColType) -> bool {
        matches!(
            (self, ty),
            (Value::Int(_), ColType::Int64)
                | (Value::Text(_), ColType::Utf8(_))
                | (Value::Date(_), ColType::Date)
        )
    }

    /// Total order within one column type; cross-type comparison is a bind
    /// error upstream, so it only debug-asserts here.
    pub fn cmp_same_type(&self, other: &Value) -> std::cmp::Ordering {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Date(a), Value::Date(b)) => a.cmp(b),
            (Value::Text(a), Value::Text(b)) => a.as_bytes().cmp(b.as_bytes()),
            _ => {
                debug_assert!(false, "cross-type comparison");
                std::cmp::Ordering::Equal
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Text(s) => write!(f, "{s}"),
            Value::Date(d) => {
                let (y, m, day) = civil_from_days(*d);
                write!(f, "{y:04}-{m:02}-{day:02}")
            }
            Value::Null => write!(f, "NULL"),
        }
    }
}

/// Days since 1970-01-01 for a proleptic Gregorian date.
pub fn days_from_civil(y: i64, m: u32, d: u32) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let doy = (153 * (if m > 2 { m - 3 } else { m + 9 }) as i64 + 2) / 5 + d as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe - 719468
}

/// Inverse of `days_from_civil`.
pub fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719468;
    let era = if z >= 0 { z } else { z - 146096 } / 146097;
    let doe = z - era * 146097;
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

/// Parse `YYYY-MM-DD` into days since epoch.
pub fn parse_date(text: &str) -> Result<i64> {
    let bad = || EngineError::TypeError(format!("bad date literal {text:?}, want YYYY-MM-DD"));
    let mut parts = text.split('-');
    let y: i64 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
    let m: u32 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
    let d: u32 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
    if parts.next().is_some() || !(1..=12).contains(&m) || !(1..=31).contains(&d) {
        return Err(bad());
    }
    Ok(days_from_civil(y, m, d))
}

/// Encode a live row. Values must already be bind-checked against the schema.
pub fn encode_row(schema: &Schema, values: &[Value]) -> Result<Vec<u8>> {
    if values.len() != schema.columns().len() {
        return Err(EngineError::TypeError(format!(
            "row has {} values, schema has {} columns",
            values.len(),
            schema.columns().len()
        )));
    }
    let mut out = vec![0u8; schema.row_size() as usize];
    out[0] = 1;
    let mut at = 1;
    for (v, c) in values.iter().zip(schema.columns()) {
        let w = c.ty.width();
        match (v, c.ty) {
            (Value::Int(x), ColType::Int64) | (Value::Date(x), ColType::Date) => {
                out[at..at + 8].copy_from_slice(&x.to_le_bytes());
            }
            (Value::Text(s), ColType::Utf8(k)) => {
                let bytes = s.as_bytes();
                if bytes.len() > k as usize {
                    return Err(EngineError::TypeError(format!(
                        "text {:?} exceeds column width {k}",
                        s
                    )));
                }
                if bytes.contains(&0) {
                    return Err(EngineError::TypeError("text value contains NUL".into()));
                }
                out[at..at + bytes.len()].copy_from_slice(bytes);
            }
            _ => {
                return Err(EngineError::TypeError(format!(
                    "value {v} does not fit column {}",
                    c.name
                )))
            }
        }
        at += w;
    }
    Ok(out)
}

/// All-zero filler; the leading 0 flag marks it unused.
pub fn dummy_row(schema: &Schema) -> Vec<u8> {
    vec![0u8; schema.row_size() as usize]
}

pub fn row_is_live(bytes: &[u8]) -> bool {
    !bytes.is_empty() && bytes[0] == 1
}

/// Decode a row buffer; None for a dummy.
pub fn decode_row(schema: &Schema, bytes: &[u8]) -> Option<Vec<Value>> {
    if !row_is_live(bytes) {
        return None;
    }
    debug_assert_eq!(bytes.len(), schema.row_size() as usize);
    let mut at = 1;
    let mut out = Vec::with_capacity(schema.columns().len());
    for c in schema.columns() {
        let w = c.ty.width();
        match c.ty {
            ColType::Int64 => {
                out.push(Value::Int(i64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())))
            }
            ColType::Date => {
                out.push(Value::Date(i64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())))
            }
            ColType::Utf8(_) => {
                let raw = &bytes[at..at + w];
                let end = raw.iter().position(|&b| b == 0).unwrap_or(w);
                out.push(Value::Text(String::from_utf8_lossy(&raw[..end]).into_owned()));
            }
        }
        at += w;
    }
    Some(out)
}

/// Order-preserving fixed-width key bytes for the index: big-endian with the
/// sign bit flipped for integers, raw padded bytes for text.
pub fn encode_key(ty: ColType, v: &Value) -> Result<Vec<u8>> {
    match (v, ty) {
        (Value::Int(x), ColType::Int64) | (Value::Date(x), ColType::Date) => {
            Ok(((*x as u64) ^ (1 << 63)).to_be_bytes().to_vec())
        }
        (Value::Text(s), ColType::Utf8(k)) => {
            let mut out = vec![0u8; k as usize];
            let b = s.as_bytes();
            if b.len() > out.len() {
                return Err(EngineError::TypeError("key text exceeds column width".into()));
            }
            out[..b.len()].copy_from_slice(b);
            Ok(out)
        }
        _ => Err(EngineError::TypeError(format!("value {v} is not a valid key for this column"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Cmp {
    pub fn eval(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            Cmp::Eq => ord == Equal,
            Cmp::Ne => ord != Equal,
            Cmp::Lt => ord == Less,
            Cmp::Le => ord != Greater,
            Cmp::Gt => ord == Greater,
            Cmp::Ge => ord != Less,
        }
    }
}

/// Boolean tree over column-vs-constant atoms. Evaluation is pure enclave
/// computation; it never touches untrusted memory.
#[derive(Debug, Clone)]
pub enum Predicate {
    True,
    Atom { col: usize, cmp: Cmp, value: Value },
    And(Box<Predicate>, Box<Predicate>),
    Or(Box<Predicate>, Box<Predicate>),
    Not(Box<Predicate>),
}

impl Predicate {
    pub fn eval(&self, row: &[Value]) -> bool {
        match self {
            Predicate::True => true,
            Predicate::Atom { col, cmp, value } => cmp.eval(row[*col].cmp_same_type(value)),
            Predicate::And(a, b) => a.eval(row) && b.eval(row),
            Predicate::Or(a, b) => a.eval(row) || b.eval(row),
            Predicate::Not(a) => !a.eval(row),
        }
    }
}

/// UPDATE assignment target: a constant, or another column plus a delta
/// (covers `SET age = age + 1`).
#[derive(Debug, Clone)]
pub enum Assign {
    Const(Value),
    Incr { src: usize, delta: i64 },
}

impl Assign {
    pub fn apply(&self, row: &[Value]) -> Value {
        match self {
            Assign::Const(v) => v.clone(),
            Assign::Incr { src, delta } => match &row[*src] {
                Value::Int(x) => Value::Int(x + delta),
                Value::Date(x) => Value::Date(x + delta),
                other => {
                    debug_assert!(false, "increment of non-numeric column");
                    other.clone()
                }
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggFunc {
    Count,
    Sum,
    Min,
    Max,
    Avg,
}

#[derive(Debug, Clone)]
pub struct AggSpec {
    pub func: AggFunc,
    /// None only for COUNT.
    pub col: Option<usize>,
}

/// Running aggregate state: 24 bytes in enclave memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggState {
    pub count: u64,
    pub sum: i64,
    pub min: Option<Value>,
    pub max: Option<Value>,
}

impl AggState {
    pub fn new() -> Self {
        Self {
            count: 0,
            sum: 0,
            min: None,
            max: None,
        }
    }

    pub fn fold(&mut self, spec: &AggSpec, row: &[Value]) {
        self.count += 1;
        if let Some(col) = spec.col {
            let v = &row[col];
            if let Value::Int(x) | Value::Date(x) = v {
                self.sum += *x;
            }
            let lower = self.min.get_or_insert_with(|| v.clone());
            if v.cmp_same_type(lower).is_lt() {
                *lower = v.clone();
            }
            let upper = self.max.get_or_insert_with(|| v.clone());
            if v.cmp_same_type(upper).is_gt() {
                *upper = v.clone();
            }
        }
    }

    /// Final answer. SUM of nothing is 0; MIN/MAX/AVG of nothing are NULL.
    /// AVG stays a (sum, count) rational; division happens at presentation.
    pub fn finish(&self, spec: &AggSpec) -> AggValue {
        match spec.func {
            AggFunc::Count => AggValue::Int(self.count as i64),
            AggFunc::Sum => AggValue::Int(self.sum),
            AggFunc::Min => self.min.clone().map_or(AggValue::Null, AggValue::Value),
            AggFunc::Max => self.max.clone().map_or(AggValue::Null, AggValue::Value),
            AggFunc::Avg => {
                if self.count == 0 {
                    AggValue::Null
                } else {
                    AggValue::Rational {
                        sum: self.sum,
                        count: self.count,
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AggValue {
    Int(i64),
    Value(Value),
    Rational { sum: i64, count: u64 },
    Null,
}

impl AggValue {
    /// Presentation form; the rational divides here and only here.
    pub fn to_value(&self) -> Value {
        match self {
            AggValue::Int(v) => Value::Int(*v),
            AggValue::Value(v) => v.clone(),
            AggValue::Rational { sum, count } => Value::Int(sum / *count as i64),
            AggValue::Null => Value::Null,
        }
    }
}
