//! CSV ingestion.
//!
//! The header row is required and must name the table's columns exactly, in
//! schema order. Values parse per column type: integers for INT,
//! `YYYY-MM-DD` for DATE, and width-checked text for TEXT(n). Errors carry
//! the 1-based file line.

use crate::error::{EngineError, Result};
use crate::rows::{parse_date, ColType, Schema, Value};

fn csv_err(line: u64, msg: impl std::fmt::Display) -> EngineError {
    EngineError::Csv(format!("line {line}: {msg}"))
}

/// Parse CSV bytes into typed rows for `schema`.
pub fn parse_csv(schema: &Schema, bytes: &[u8]) -> Result<Vec<Vec<Value>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(bytes);

    {
        let headers = reader
            .headers()
            .map_err(|e| csv_err(1, e))?
            .iter()
            .map(str::to_string)
            .collect::<Vec<_>>();
        let want: Vec<&str> = schema.columns().iter().map(|c| c.name.as_str()).collect();
        if headers != want {
            return Err(csv_err(
                1,
                format!("header {headers:?} does not match schema columns {want:?}"),
            ));
        }
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let mut row = Vec::with_capacity(schema.columns().len());
        for (field, col) in record.iter().zip(schema.columns()) {
            let value = match col.ty {
                ColType::Int64 => Value::Int(field.parse().map_err(|_| {
                    csv_err(line, format!("bad integer {field:?} in column {}", col.name))
                })?),
                ColType::Date => Value::Date(
                    parse_date(field)
                        .map_err(|e| csv_err(line, format!("column {}: {e}", col.name)))?,
                ),
                ColType::Utf8(w) => {
                    if field.len() > w as usize {
                        return Err(csv_err(
                            line,
                            format!("text exceeds width {w} in column {}", col.name),
                        ));
                    }
                    Value::Text(field.to_string())
                }
            };
            row.push(value);
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rows::Column;

    fn schema() -> Schema {
        Schema::new(vec![
            Column { name: "id".into(), ty: ColType::Int64 },
            Column { name: "day".into(), ty: ColType::Date },
            Column { name: "tag".into(), ty: ColType::Utf8(4) },
        ])
        .unwrap()
    }

    #[test]
    fn parses_typed_rows() {
        let rows = parse_csv(&schema(), b"id,day,tag\n1,1970-01-02,ab\n-5,1969-12-31,\n").unwrap();
        assert_eq!(
            rows,
            vec![
                vec![Value::Int(1), Value::Date(1), Value::Text("ab".into())],
                vec![Value::Int(-5), Value::Date(-1), Value::Text("".into())],
            ]
        );
    }

    #[test]
    fn empty_file_is_zero_rows() {
        assert_eq!(parse_csv(&schema(), b"id,day,tag\n").unwrap().len(), 0);
    }

    #[test]
    fn header_must_match() {
        let e = parse_csv(&schema(), b"id,when,tag\n").unwrap_err().to_string();
        assert!(e.contains("header"), "{e}");
        let e = parse_csv(&schema(), b"").unwrap_err().to_string();
        assert!(e.contains("header") || e.contains("line 1"), "{e}");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_csv(&schema(), b"id,day,tag\n1,1970-01-02,ok\nx,1970-01-02,ok\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("line 3"), "{e}");
        let e = parse_csv(&schema(), b"id,day,tag\n1,not-a-date,ok\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("line 2"), "{e}");
        let e = parse_csv(&schema(), b"id,day,tag\n1,1970-01-02,toolong\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("line 2") && e.contains("width"), "{e}");
        // Wrong field count.
        let e = parse_csv(&schema(), b"id,day,tag\n1,1970-01-02\n").unwrap_err().to_string();
        assert!(e.contains("line"), "{e}");
    }
}
