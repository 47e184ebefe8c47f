//! CSV interchange: UTF-8, one header row, one row per (user, round)
//! observation. Feature columns use schema names (contextual columns are
//! `<feature>@o<offset>`), plus the target column. Numbers are written with
//! 12 significant digits. A contextual cell holding `NA` marks its round as
//! absent; every contextual cell of that offset must then be `NA`.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::dataset::{Column, Dataset};
use super::schema::{FeatureKind, FeatureSchema};
use crate::error::{Error, Result};

pub const ABSENT: &str = "NA";

/// 12 significant digits, scientific notation.
pub fn format_number(v: f64) -> String {
    format!("{v:.11e}")
}

pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut header: Vec<&str> = data.schema.features.iter().map(|f| f.name.as_str()).collect();
    header.push(&data.schema.target);
    w.write_record(&header)?;
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for r in 0..data.len() {
        record.clear();
        for (c, col) in data.columns.iter().enumerate() {
            if data.is_absent(r, c) {
                record.push(ABSENT.into());
                continue;
            }
            record.push(match col {
                Column::Numerical(v) => format_number(v[r]),
                Column::Categorical(v) => v[r].clone(),
            });
        }
        record.push(format_number(data.target[r]));
        w.write_record(&record)?;
    }
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: &Path, schema: &FeatureSchema) -> Result<Dataset> {
    schema.validate()?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let header = reader.headers()?.clone();
    let mut positions = vec![usize::MAX; schema.features.len()];
    let mut target_pos = None;
    for (pos, name) in header.iter().enumerate() {
        if name == schema.target {
            target_pos = Some(pos);
        } else if let Some(i) = schema.index_of(name) {
            if positions[i] != usize::MAX {
                return Err(parse_err(1, format!("duplicate column {name}")));
            }
            positions[i] = pos;
        } else {
            return Err(Error::Schema(format!("unknown column {name} in {}", path.display())));
        }
    }
    let target_pos = target_pos
        .ok_or_else(|| Error::Schema(format!("header of {} lacks target column {}", path.display(), schema.target)))?;
    if let Some(i) = positions.iter().position(|&p| p == usize::MAX) {
        return Err(Error::Schema(format!(
            "header of {} lacks column {}",
            path.display(),
            schema.features[i].name
        )));
    }

    let mut columns: Vec<Column> = schema
        .features
        .iter()
        .map(|f| {
            if f.kind.is_numeric_valued() {
                Column::Numerical(Vec::new())
            } else {
                Column::Categorical(Vec::new())
            }
        })
        .collect();
    let mut absent = Vec::new();
    let mut target = Vec::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(parse_err(line, format!("expected {} cells, found {}", header.len(), record.len())));
        }
        // Per offset slot: Some(true) = absent, Some(false) = present.
        let mut slot_state: Vec<Option<bool>> = vec![None; schema.n_offset_slots()];
        for (i, feature) in schema.features.iter().enumerate() {
            let cell = record[positions[i]].trim();
            if cell.is_empty() {
                return Err(parse_err(line, format!("missing value in column {}", feature.name)));
            }
            let is_na = cell == ABSENT;
            if let FeatureKind::Contextual { offset, .. } = feature.kind {
                let slot = schema.offset_slot(offset)?;
                match slot_state[slot] {
                    Some(prev) if prev != is_na => {
                        return Err(parse_err(
                            line,
                            format!("offset {offset:+} is partially absent (column {})", feature.name),
                        ))
                    }
                    _ => slot_state[slot] = Some(is_na),
                }
            } else if is_na {
                return Err(parse_err(line, format!("missing value in column {}", feature.name)));
            }
            match &mut columns[i] {
                Column::Numerical(v) => {
                    let value = if is_na {
                        0.0
                    } else {
                        parse_finite(cell).ok_or_else(|| {
                            parse_err(line, format!("cannot parse {cell:?} as a number in column {}", feature.name))
                        })?
                    };
                    v.push(value);
                }
                Column::Categorical(v) => v.push(if is_na { String::new() } else { cell.to_string() }),
            }
        }
        let bits = slot_state
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == Some(true))
            .fold(0u64, |acc, (slot, _)| acc | 1 << slot);
        absent.push(bits);
        let cell = record[target_pos].trim();
        let t = parse_finite(cell)
            .ok_or_else(|| parse_err(line, format!("cannot parse target {cell:?} as a finite number")))?;
        target.push(t);
    }
    if target.is_empty() {
        return Err(Error::Schema(format!("{} has no data rows", path.display())));
    }
    Dataset::new(schema.clone(), columns, absent, target)
}

fn parse_finite(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{BaseKind, Feature};

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            "spend",
            1,
            vec![
                Feature::numerical("x"),
                Feature::categorical("k", 3),
                Feature::contextual("r", BaseKind::Numerical, -1),
                Feature::contextual("r", BaseKind::Numerical, 1),
            ],
        )
        .unwrap()
    }

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_fixture() {
        let f = write("x,k,r@o-1,r@o+1,spend\n1.5,a,0.1,0.2,10\n-2,b,NA,3,20.5\n0,a,1,NA,0\n");
        let ds = load_csv(f.path(), &schema()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.columns[0], Column::Numerical(vec![1.5, -2.0, 0.0]));
        assert_eq!(ds.target, vec![10.0, 20.5, 0.0]);
        assert!(ds.is_absent(1, 2));
        assert!(!ds.is_absent(1, 3));
        assert!(ds.is_absent(2, 3));
    }

    #[test]
    fn missing_target_column() {
        let f = write("x,k,r@o-1,r@o+1\n1,a,0,0\n");
        assert!(matches!(load_csv(f.path(), &schema()), Err(Error::Schema(_))));
    }

    #[test]
    fn unknown_column() {
        let f = write("x,k,r@o-1,r@o+1,extra,spend\n1,a,0,0,0,1\n");
        let err = load_csv(f.path(), &schema()).unwrap_err().to_string();
        assert!(err.contains("extra"), "{err}");
    }

    #[test]
    fn bad_value_cites_line() {
        let mut text = String::from("x,k,r@o-1,r@o+1,spend\n");
        for _ in 0..5 {
            text.push_str("1,a,0,0,1\n");
        }
        text.push_str("abc,a,0,0,1\n");
        let f = write(&text);
        match load_csv(f.path(), &schema()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 7);
                assert!(message.contains("abc"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_cell_is_missing() {
        let f = write("x,k,r@o-1,r@o+1,spend\n,a,0,0,1\n");
        assert!(matches!(load_csv(f.path(), &schema()), Err(Error::Parse { line: 2, .. })));
    }
}
