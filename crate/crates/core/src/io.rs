//! Template CSV files and gallery manifests.
//!
//! The CSV header is `id,identity,attribute,quality,v0,...,v{D-1}`. `quality`
//! may be empty. The dimension is taken from the header and every row must
//! match it.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::template::LabeledTemplate;

const FIXED_COLUMNS: [&str; 4] = ["id", "identity", "attribute", "quality"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GalleryManifest {
    pub name: String,
    pub dimension: usize,
    pub attributes: Vec<String>,
    pub source: String,
}

pub fn read_templates<R: Read>(reader: R) -> Result<Vec<LabeledTemplate>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::Parse { line: 1, message: "missing header row".into() }),
    };
    let dimension = check_header(&header)?;

    let mut templates = Vec::new();
    let mut seen = HashSet::new();
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != FIXED_COLUMNS.len() + dimension {
            return Err(Error::Parse {
                line,
                message: format!(
                    "expected {} fields, found {}",
                    FIXED_COLUMNS.len() + dimension,
                    record.len()
                ),
            });
        }
        let parse_err = |message: String| Error::Parse { line, message };
        let quality = match record[3].trim() {
            "" => None,
            q => Some(q.parse::<f64>().map_err(|e| parse_err(format!("quality {q:?}: {e}")))?),
        };
        let embedding = record
            .iter()
            .skip(FIXED_COLUMNS.len())
            .enumerate()
            .map(|(i, v)| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("v{i} {v:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let template = LabeledTemplate::new(&record[0], &record[1], &record[2], quality, embedding)
            .map_err(|e| parse_err(e.to_string()))?;
        if template.id.is_empty() || template.identity.is_empty() {
            return Err(parse_err("empty id or identity".into()));
        }
        if !seen.insert(template.id.clone()) {
            return Err(parse_err(format!("duplicate id {:?}", template.id)));
        }
        templates.push(template);
    }
    Ok(templates)
}

fn check_header(header: &csv::StringRecord) -> Result<usize> {
    let err = |message: String| Error::Parse { line: 1, message };
    for (i, expected) in FIXED_COLUMNS.iter().enumerate() {
        match header.get(i) {
            Some(col) if col.trim() == *expected => {}
            Some(col) => return Err(err(format!("column {i}: expected {expected:?}, found {col:?}"))),
            None => return Err(err(format!("missing column {expected:?}"))),
        }
    }
    let dimension = header.len() - FIXED_COLUMNS.len();
    if dimension == 0 {
        return Err(err("no embedding columns".into()));
    }
    for (i, col) in header.iter().skip(FIXED_COLUMNS.len()).enumerate() {
        if col.trim() != format!("v{i}") {
            return Err(err(format!("expected embedding column v{i}, found {col:?}")));
        }
    }
    Ok(dimension)
}

/// Writes templates with a header derived from the first template's dimension.
pub fn write_templates<W: Write>(writer: W, templates: &[LabeledTemplate]) -> Result<()> {
    let dimension = templates.first().map_or(0, LabeledTemplate::dimension);
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..dimension).map(|i| format!("v{i}")));
    wtr.write_record(&header)?;
    for t in templates {
        if t.dimension() != dimension {
            return Err(Error::DimensionMismatch { expected: dimension, found: t.dimension() });
        }
        let mut row = Vec::with_capacity(header.len());
        row.push(t.id.clone());
        row.push(t.identity.clone());
        row.push(t.attribute.clone());
        row.push(t.quality.map(|q| q.to_string()).unwrap_or_default());
        row.extend(t.embedding.iter().map(f64::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn load_templates(path: &Path) -> Result<Vec<LabeledTemplate>> {
    read_templates(BufReader::new(File::open(path)?))
}

pub fn save_templates(path: &Path, templates: &[LabeledTemplate]) -> Result<()> {
    write_templates(BufWriter::new(File::create(path)?), templates)
}

/// Writes pretty JSON with a trailing newline.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_and_writes_the_same_bytes() {
        let text = "id,identity,attribute,quality,v0,v1\na,x,F,0.5,1,-0.25\nb,y,M,,0.1,3\n";
        let templates = read_templates(text.as_bytes()).unwrap();
        assert_eq!(templates.len(), 2);
        assert_eq!(templates[0].quality, Some(0.5));
        assert_eq!(templates[1].quality, None);
        assert_eq!(templates[1].embedding, vec![0.1, 3.0]);
        let mut out = Vec::new();
        write_templates(&mut out, &templates).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn reports_line_numbers() {
        let text = "id,identity,attribute,quality,v0,v1\na,x,F,,1,0\nb,y,M,,oops,1\n";
        match read_templates(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let short = "id,identity,attribute,quality,v0,v1\na,x,F,,1\n";
        assert!(matches!(read_templates(short.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let zero = "id,identity,attribute,quality,v0,v1\na,x,F,,0,0\n";
        assert!(matches!(read_templates(zero.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let dup = "id,identity,attribute,quality,v0\na,x,F,,1\na,y,M,,1\n";
        assert!(matches!(read_templates(dup.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn rejects_bad_headers() {
        let missing_attr = "id,identity,quality,v0\na,x,,1\n";
        assert!(matches!(read_templates(missing_attr.as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(read_templates("".as_bytes()).is_err());
        assert!(read_templates("id,identity,attribute,quality\n".as_bytes()).is_err());
        assert!(read_templates("id,identity,attribute,quality,v1\n".as_bytes()).is_err());
    }

    #[test]
    fn manifest_schema_is_strict() {
        let json = r#"{"name":"g","dimension":4,"attributes":["F","M"],"source":"synth"}"#;
        let m: GalleryManifest = serde_json::from_str(json).unwrap();
        assert_eq!(m.dimension, 4);
        assert!(serde_json::from_str::<GalleryManifest>(r#"{"name":"g"}"#).is_err());
    }
}
