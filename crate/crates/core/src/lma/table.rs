//! Delimited feature tables: `instance_id` then one column per slot, missing
//! values as empty fields.

use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("feature table: {0}")]
    Schema(String),
    #[error("feature table row {row}: {message}")]
    Row { row: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub ids: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl FeatureTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn fmt_value(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_feature_table<W: Write>(w: W, table: &FeatureTable) -> Result<(), TableError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = Vec::with_capacity(table.names.len() + 1);
    header.push("instance_id".to_string());
    header.extend(table.names.iter().cloned());
    out.write_record(&header)?;
    for (id, row) in table.ids.iter().zip(&table.rows) {
        if row.len() != table.names.len() {
            return Err(TableError::Schema(format!("row `{id}` has {} values", row.len())));
        }
        out.write_field(id)?;
        for v in row {
            out.write_field(fmt_value(*v))?;
        }
        out.write_record(None::<&[u8]>)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_feature_table<R: Read>(r: R) -> Result<FeatureTable, TableError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("instance_id") {
        return Err(TableError::Schema("first column must be instance_id".into()));
    }
    let names: Vec<String> = headers.iter().skip(1).map(String::from).collect();
    let mut table = FeatureTable { names, ..Default::default() };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = i + 1;
        let mut fields = rec.iter();
        let id = fields.next().unwrap_or_default().to_string();
        let mut row = Vec::with_capacity(table.names.len());
        for f in fields {
            let f = f.trim();
            if f.is_empty() {
                row.push(None);
            } else {
                let v: f64 = f
                    .parse()
                    .map_err(|_| TableError::Row { row: row_no, message: format!("bad number `{f}`") })?;
                row.push(Some(v));
            }
        }
        if row.len() != table.names.len() {
            return Err(TableError::Row { row: row_no, message: "wrong field count".into() });
        }
        table.ids.push(id);
        table.rows.push(row);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn write_then_read_is_identity(
            rows in prop::collection::vec(prop::collection::vec(prop::option::of(-1e6f64..1e6), 3), 0..8)
        ) {
            let table = FeatureTable {
                names: vec!["a".into(), "b_max".into(), "c".into()],
                ids: (0..rows.len()).map(|i| format!("i{i}")).collect(),
                rows,
            };
            let mut buf = Vec::new();
            write_feature_table(&mut buf, &table).unwrap();
            prop_assert_eq!(read_feature_table(buf.as_slice()).unwrap(), table);
        }
    }

    #[test]
    fn missing_written_as_empty() {
        let table = FeatureTable { names: vec!["a".into(), "b".into()], ids: vec!["x".into()], rows: vec![vec![None, Some(1.5)]] };
        let mut buf = Vec::new();
        write_feature_table(&mut buf, &table).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "instance_id,a,b\nx,,1.5\n");
    }
}
