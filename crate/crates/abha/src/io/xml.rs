use std::fmt::Write as _;
use std::path::Path;

use abha_core::model::{TrackPoint, TrackTable};

use super::{file_error, IoError, Result};

fn xml_error(doc: &roxmltree::Document, node: roxmltree::Node, message: String) -> IoError {
    let pos = doc.text_pos_at(node.range().start);
    IoError::Xml {
        line: pos.row,
        column: pos.col,
        message,
    }
}

fn attribute<T: std::str::FromStr>(doc: &roxmltree::Document, node: roxmltree::Node, name: &str) -> Result<T> {
    let raw = node
        .attribute(name)
        .ok_or_else(|| xml_error(doc, node, format!("detection missing attribute `{name}`")))?;
    raw.trim()
        .parse()
        .map_err(|_| xml_error(doc, node, format!("attribute `{name}` is not a number: {raw:?}")))
}

/// One row per `<detection>`; ids follow `<particle>` document order and
/// frames are shifted so the earliest becomes 1. `z` is ignored.
pub fn parse_isbi_xml(text: &str) -> Result<TrackTable> {
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        IoError::Xml {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let mut raw: Vec<(i64, i64, f64, f64, roxmltree::Node)> = Vec::new();
    let particles = doc.descendants().filter(|n| n.has_tag_name("particle"));
    for (id, particle) in particles.enumerate() {
        for det in particle.children().filter(|n| n.has_tag_name("detection")) {
            let t: i64 = attribute(&doc, det, "t")?;
            let x: f64 = attribute(&doc, det, "x")?;
            let y: f64 = attribute(&doc, det, "y")?;
            if !x.is_finite() || !y.is_finite() {
                return Err(xml_error(&doc, det, "non-finite coordinate".into()));
            }
            raw.push((id as i64, t, x, y, det));
        }
    }
    let Some(t_min) = raw.iter().map(|r| r.1).min() else {
        return Ok(TrackTable::empty());
    };
    let mut rows = Vec::with_capacity(raw.len());
    for &(id, t, x, y, node) in &raw {
        let t = u32::try_from(t - t_min + 1).map_err(|_| xml_error(&doc, node, format!("frame {t} out of range")))?;
        rows.push(TrackPoint { id, t, x, y });
    }
    let mut sorted = rows.clone();
    sorted.sort_by_key(|p| (p.id, p.t));
    if let Some(w) = sorted.windows(2).find(|w| w[0].id == w[1].id && w[0].t == w[1].t) {
        let node = raw
            .iter()
            .filter(|r| r.0 == w[1].id && (r.1 - t_min + 1) as u32 == w[1].t)
            .nth(1)
            .map(|r| r.4)
            .expect("duplicate present");
        return Err(xml_error(
            &doc,
            node,
            format!("particle {} has two detections at frame {}", w[1].id, w[1].t),
        ));
    }
    Ok(TrackTable::from_unsorted(rows)?)
}

pub fn read_isbi_xml(path: &Path) -> Result<TrackTable> {
    let text = std::fs::read_to_string(path).map_err(file_error(path))?;
    parse_isbi_xml(&text)
}

/// Serializes in the ISBI layout with frames counted from 0, one
/// `<particle>` per id in ascending id order.
pub fn to_isbi_xml(x: &TrackTable) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<root>\n<TrackContestISBI2012>\n");
    for idx in x.by_id().values() {
        out.push_str("<particle>\n");
        for &i in idx {
            let p = x.rows()[i];
            let _ = writeln!(
                out,
                "<detection t=\"{}\" x=\"{}\" y=\"{}\" z=\"0\"/>",
                p.t - 1,
                p.x,
                p.y
            );
        }
        out.push_str("</particle>\n");
    }
    out.push_str("</TrackContestISBI2012>\n</root>\n");
    out
}
