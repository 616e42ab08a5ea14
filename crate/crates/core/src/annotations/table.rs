//! Annotation and label tables (comma-delimited, header row required).

use std::io::{Read, Write};
use std::sync::LazyLock;

use super::{
    AgeGroup, AnnotationError, AnnotationRecord, CategoricalLabel, Category, Ethnicity, Gender, RowError, Split,
    NUM_CATEGORIES,
};

/// Annotation table header, in order.
pub static ANNOTATION_COLUMNS: LazyLock<Vec<String>> = LazyLock::new(|| {
    let mut cols: Vec<String> = ["instance_id", "participant_id", "corrupted"].map(String::from).to_vec();
    cols.extend(Category::ALL.iter().map(|c| c.name().to_string()));
    cols.extend(
        [
            "valence",
            "arousal",
            "dominance",
            "char_gender",
            "char_age",
            "char_ethnicity",
            "start_frame",
            "end_frame",
        ]
        .map(String::from),
    );
    cols
});

static LABEL_COLUMNS: LazyLock<Vec<String>> = LazyLock::new(|| {
    let mut cols = vec!["instance_id".to_string()];
    cols.extend(Category::ALL.iter().map(|c| format!("ds_{}", c.name())));
    cols.extend(Category::ALL.iter().map(|c| format!("label_{}", c.name())));
    cols.extend(["valence", "arousal", "dominance", "confidence", "split"].map(String::from));
    cols
});

fn check_header(found: &csv::StringRecord, expected: &[String], what: &str) -> Result<(), AnnotationError> {
    let found: Vec<&str> = found.iter().map(str::trim).collect();
    if found.len() == expected.len() && found.iter().zip(expected).all(|(a, b)| *a == b) {
        return Ok(());
    }
    if let Some(bad) = found.iter().find(|c| !expected.iter().any(|e| e == *c)) {
        return Err(AnnotationError::Schema(format!("{what}: unknown column `{bad}`")));
    }
    if let Some(miss) = expected.iter().find(|e| !found.contains(&e.as_str())) {
        return Err(AnnotationError::Schema(format!("{what}: missing column `{miss}`")));
    }
    Err(AnnotationError::Schema(format!(
        "{what}: expected {} columns in canonical order",
        expected.len()
    )))
}

fn parse_flag(s: &str) -> Result<bool, String> {
    match s {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        _ => Err(format!("bad flag `{s}`")),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, col: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("{col}: bad number `{s}`"))
}

fn parse_label<T: CategoricalLabel>(s: &str, col: &str) -> Result<T, String> {
    T::from_name(s).ok_or_else(|| format!("{col}: unknown value `{s}`"))
}

fn parse_row(f: &[&str]) -> Result<AnnotationRecord, String> {
    let c = 3 + NUM_CATEGORIES;
    let mut categories = [false; NUM_CATEGORIES];
    for (i, slot) in categories.iter_mut().enumerate() {
        *slot = parse_flag(f[3 + i]).map_err(|e| format!("{}: {e}", Category::ALL[i]))?;
    }
    let rec = AnnotationRecord {
        instance_id: f[0].to_string(),
        participant_id: f[1].to_string(),
        corrupted: parse_flag(f[2]).map_err(|e| format!("corrupted: {e}"))?,
        categories,
        valence: parse_num(f[c], "valence")?,
        arousal: parse_num(f[c + 1], "arousal")?,
        dominance: parse_num(f[c + 2], "dominance")?,
        char_gender: parse_label::<Gender>(f[c + 3], "char_gender")?,
        char_age: parse_label::<AgeGroup>(f[c + 4], "char_age")?,
        char_ethnicity: parse_label::<Ethnicity>(f[c + 5], "char_ethnicity")?,
        start_frame: parse_num(f[c + 6], "start_frame")?,
        end_frame: parse_num(f[c + 7], "end_frame")?,
    };
    rec.validate()?;
    Ok(rec)
}

/// Reads an annotation table. Header problems are schema errors; every bad
/// row is collected and reported together.
pub fn parse_annotations<R: Read>(r: R) -> Result<Vec<AnnotationRecord>, AnnotationError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    check_header(rdr.headers()?, &ANNOTATION_COLUMNS, "annotation table")?;
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let fields: Vec<&str> = rec.iter().map(str::trim).collect();
        if fields.len() != ANNOTATION_COLUMNS.len() {
            errors.push(RowError { row, message: format!("{} fields, expected {}", fields.len(), ANNOTATION_COLUMNS.len()) });
            continue;
        }
        match parse_row(&fields) {
            Ok(r) => out.push(r),
            Err(message) => errors.push(RowError { row, message }),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(AnnotationError::Rows(errors))
    }
}

pub fn write_annotations<W: Write>(w: W, records: &[AnnotationRecord]) -> Result<(), AnnotationError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ANNOTATION_COLUMNS.iter())?;
    let flag = |b: bool| if b { "1" } else { "0" };
    for r in records {
        out.write_field(&r.instance_id)?;
        out.write_field(&r.participant_id)?;
        out.write_field(flag(r.corrupted))?;
        for &c in &r.categories {
            out.write_field(flag(c))?;
        }
        for v in [r.valence, r.arousal, r.dominance] {
            out.write_field(v.to_string())?;
        }
        out.write_field(r.char_gender.name())?;
        out.write_field(r.char_age.name())?;
        out.write_field(r.char_ethnicity.name())?;
        out.write_field(r.start_frame.to_string())?;
        out.write_field(r.end_frame.to_string())?;
        out.write_record(None::<&[u8]>)?;
    }
    out.flush()?;
    Ok(())
}

/// One row of a label table.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub instance_id: String,
    pub ds_scores: [f64; NUM_CATEGORIES],
    pub labels: [bool; NUM_CATEGORIES],
    pub vad: [f64; 3],
    pub confidence: f64,
    /// Empty in the file when the row belongs to no split.
    pub split: Option<Split>,
}

pub fn write_label_table<W: Write>(w: W, rows: &[LabelRow]) -> Result<(), AnnotationError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(LABEL_COLUMNS.iter())?;
    for r in rows {
        out.write_field(&r.instance_id)?;
        for s in r.ds_scores {
            out.write_field(s.to_string())?;
        }
        for l in r.labels {
            out.write_field(if l { "1" } else { "0" })?;
        }
        for v in r.vad {
            out.write_field(v.to_string())?;
        }
        out.write_field(r.confidence.to_string())?;
        out.write_field(r.split.map(Split::name).unwrap_or(""))?;
        out.write_record(None::<&[u8]>)?;
    }
    out.flush()?;
    Ok(())
}

fn parse_label_row(f: &[&str]) -> Result<LabelRow, String> {
    let n = NUM_CATEGORIES;
    let mut ds_scores = [0.0; NUM_CATEGORIES];
    let mut labels = [false; NUM_CATEGORIES];
    for i in 0..n {
        ds_scores[i] = parse_num(f[1 + i], "ds score")?;
        labels[i] = parse_flag(f[1 + n + i])?;
    }
    let b = 1 + 2 * n;
    let split = match f[b + 4] {
        "" => None,
        s => Some(Split::from_name(s).ok_or_else(|| format!("split: unknown value `{s}`"))?),
    };
    Ok(LabelRow {
        instance_id: f[0].to_string(),
        ds_scores,
        labels,
        vad: [parse_num(f[b], "valence")?, parse_num(f[b + 1], "arousal")?, parse_num(f[b + 2], "dominance")?],
        confidence: parse_num(f[b + 3], "confidence")?,
        split,
    })
}

pub fn read_label_table<R: Read>(r: R) -> Result<Vec<LabelRow>, AnnotationError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    check_header(rdr.headers()?, &LABEL_COLUMNS, "label table")?;
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let fields: Vec<&str> = rec.iter().map(str::trim).collect();
        if fields.len() != LABEL_COLUMNS.len() {
            errors.push(RowError { row, message: format!("{} fields, expected {}", fields.len(), LABEL_COLUMNS.len()) });
            continue;
        }
        match parse_label_row(&fields) {
            Ok(r) => out.push(r),
            Err(message) => errors.push(RowError { row, message }),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(AnnotationError::Rows(errors))
    }
}
