use std::io::{Read, Write};
use std::path::Path;

use abha_core::model::{Detection, DetectionTable, TrackPoint, TrackTable};

use super::{file_error, write_atomic, IoError, Result};

fn csv_error(e: csv::Error) -> IoError {
    let line = e.position().map_or(0, |p| p.line());
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("expected {expected_len} fields, found {len}")
        }
        _ => e.to_string(),
    };
    IoError::Csv { line, message }
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, index: usize, name: &str) -> Result<T> {
    let line = record.position().map_or(0, |p| p.line());
    let raw = record.get(index).unwrap_or("");
    raw.trim().parse().map_err(|_| IoError::Csv {
        line,
        message: format!("column `{name}`: cannot parse {raw:?}"),
    })
}

fn check_header(reader: &mut csv::Reader<impl Read>, accepted: &[&[&str]]) -> Result<usize> {
    let header = reader.headers().map_err(csv_error)?;
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    accepted
        .iter()
        .position(|h| *h == names.as_slice())
        .ok_or_else(|| IoError::Csv {
            line: 1,
            message: format!(
                "bad header {:?}, expected {}",
                names.join(","),
                accepted.iter().map(|h| h.join(",")).collect::<Vec<_>>().join(" or ")
            ),
        })
}

/// Reads `t,x,y` or `t,x,y,label` rows in file order.
pub fn detections_from_reader(r: impl Read) -> Result<DetectionTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let labeled = check_header(&mut reader, &[&["t", "x", "y"], &["t", "x", "y", "label"]])? == 1;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let mut d = Detection::new(
            field(&record, 1, "x")?,
            field(&record, 2, "y")?,
            field(&record, 0, "t")?,
        );
        if labeled {
            d.label = Some(field(&record, 3, "label")?);
        }
        rows.push(d);
    }
    Ok(DetectionTable::new(rows))
}

pub fn read_detections(path: &Path) -> Result<DetectionTable> {
    let file = std::fs::File::open(path).map_err(file_error(path))?;
    detections_from_reader(std::io::BufReader::new(file))
}

/// Writes a label column only when every row carries a label.
pub fn write_detections_to(d: &DetectionTable, w: impl Write) -> Result<()> {
    let labeled = d.is_labeled() && !d.is_empty();
    let mut writer = csv::Writer::from_writer(w);
    let header: &[&str] = if labeled {
        &["t", "x", "y", "label"]
    } else {
        &["t", "x", "y"]
    };
    writer.write_record(header).map_err(csv_error)?;
    for r in &d.rows {
        let mut rec = vec![r.t.to_string(), r.x.to_string(), r.y.to_string()];
        if let (true, Some(l)) = (labeled, r.label) {
            rec.push(l.to_string());
        }
        writer.write_record(&rec).map_err(csv_error)?;
    }
    writer.flush().map_err(|e| IoError::Csv {
        line: 0,
        message: e.to_string(),
    })
}

pub fn write_detections(path: &Path, d: &DetectionTable) -> Result<()> {
    let mut buf = Vec::new();
    write_detections_to(d, &mut buf)?;
    write_atomic(path, &buf)
}

/// Reads `id,t,x,y` rows; kept in file order when already grouped by id with
/// increasing frames, otherwise sorted by `(id, t)`.
pub fn tracks_from_reader(r: impl Read) -> Result<TrackTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    check_header(&mut reader, &[&["id", "t", "x", "y"]])?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        rows.push(TrackPoint {
            id: field(&record, 0, "id")?,
            t: field(&record, 1, "t")?,
            x: field(&record, 2, "x")?,
            y: field(&record, 3, "y")?,
        });
    }
    match TrackTable::new(rows.clone()) {
        Ok(t) => Ok(t),
        Err(_) => Ok(TrackTable::from_unsorted(rows)?),
    }
}

pub fn read_tracks(path: &Path) -> Result<TrackTable> {
    let file = std::fs::File::open(path).map_err(file_error(path))?;
    tracks_from_reader(std::io::BufReader::new(file))
}

pub fn write_tracks_to(x: &TrackTable, w: impl Write) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    writer.write_record(["id", "t", "x", "y"]).map_err(csv_error)?;
    for p in x.rows() {
        writer
            .write_record([p.id.to_string(), p.t.to_string(), p.x.to_string(), p.y.to_string()])
            .map_err(csv_error)?;
    }
    writer.flush().map_err(|e| IoError::Csv {
        line: 0,
        message: e.to_string(),
    })
}

pub fn write_tracks(path: &Path, x: &TrackTable) -> Result<()> {
    let mut buf = Vec::new();
    write_tracks_to(x, &mut buf)?;
    write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detections_round_trip() {
        let d = DetectionTable::new(vec![
            Detection::labeled(0.1, 1.0 / 3.0, 2, 4),
            Detection::labeled(-0.0, 1e300, 1, -1),
            Detection::labeled(5e-324, 29.999999999999996, 2, 0),
        ]);
        let mut buf = Vec::new();
        write_detections_to(&d, &mut buf).unwrap();
        let back = detections_from_reader(buf.as_slice()).unwrap();
        assert_eq!(back.rows.len(), 3);
        for (a, b) in d.rows.iter().zip(&back.rows) {
            assert_eq!(
                (a.x.to_bits(), a.y.to_bits(), a.t, a.label),
                (b.x.to_bits(), b.y.to_bits(), b.t, b.label)
            );
        }
    }

    #[test]
    fn unlabeled_file() {
        let d = detections_from_reader("t,x,y\n1,2.5,3\n2,4,5\n".as_bytes()).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.rows.iter().all(|r| r.label.is_none()));
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = detections_from_reader("t,x,y\n1,2,3\n2,4\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IoError::Csv { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn bad_header() {
        let err = detections_from_reader("frame,x,y\n1,2,3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IoError::Csv { line: 1, .. }), "{err:?}");
    }

    #[test]
    fn bad_number_reports_line() {
        let err = detections_from_reader("t,x,y\n1,2,3\n2,4,oops\n".as_bytes()).unwrap_err();
        match err {
            IoError::Csv { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("`y`"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tracks_round_trip() {
        let x = TrackTable::new(vec![
            TrackPoint {
                id: 3,
                t: 1,
                x: 0.1,
                y: 0.2,
            },
            TrackPoint {
                id: 3,
                t: 4,
                x: 0.3,
                y: 0.4,
            },
            TrackPoint {
                id: -2,
                t: 2,
                x: 1.0,
                y: 2.0,
            },
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_tracks_to(&x, &mut buf).unwrap();
        assert_eq!(tracks_from_reader(buf.as_slice()).unwrap(), x);
    }

    #[test]
    fn duplicate_track_frame_rejected() {
        assert!(tracks_from_reader("id,t,x,y\n1,2,0,0\n1,2,1,1\n".as_bytes()).is_err());
    }
}
