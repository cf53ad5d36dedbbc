//! Landmark CSV tables.
//!
//! Schema: header `image_id,class,instance,dim0,dim1[,dim2]`, one row per
//! present landmark. Images and classes are ordered by first appearance;
//! (class, instance) cells absent for an image are sentinels. Missing
//! landmarks are not written, so a fully-missing image drops out of the
//! file.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::LandmarkSet;

/// A landmark set together with the image identifier of each sample row.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkTable {
    pub landmarks: LandmarkSet,
    pub image_ids: Vec<String>,
}

fn csv_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Csv {
        line,
        reason: reason.into(),
    }
}

pub fn parse_landmarks_csv(text: &str) -> Result<LandmarkTable> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| csv_err(1, "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let dim = match cols.as_slice() {
        ["image_id", "class", "instance", "dim0", "dim1"] => 2,
        ["image_id", "class", "instance", "dim0", "dim1", "dim2"] => 3,
        _ => {
            return Err(csv_err(
                1,
                "header must be image_id,class,instance,dim0,dim1[,dim2]",
            ))
        }
    };

    struct Row {
        image: usize,
        class: usize,
        instance: usize,
        point: Vec<f64>,
        line: usize,
    }
    let mut image_ids: Vec<String> = Vec::new();
    let mut image_index: HashMap<String, usize> = HashMap::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Row> = Vec::new();
    let mut max_instance = 0usize;

    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 + dim {
            return Err(csv_err(
                line_no,
                format!("expected {} fields, got {}", 3 + dim, fields.len()),
            ));
        }
        let image = *image_index.entry(fields[0].to_string()).or_insert_with(|| {
            image_ids.push(fields[0].to_string());
            image_ids.len() - 1
        });
        let class = *class_index.entry(fields[1].to_string()).or_insert_with(|| {
            class_names.push(fields[1].to_string());
            class_names.len() - 1
        });
        let instance: usize = fields[2]
            .parse()
            .map_err(|_| csv_err(line_no, format!("bad instance '{}'", fields[2])))?;
        let mut point = Vec::with_capacity(dim);
        for f in &fields[3..] {
            let v: f64 = f
                .parse()
                .map_err(|_| csv_err(line_no, format!("bad coordinate '{f}'")))?;
            if !v.is_finite() {
                return Err(csv_err(line_no, "coordinates must be finite"));
            }
            point.push(v);
        }
        max_instance = max_instance.max(instance);
        rows.push(Row {
            image,
            class,
            instance,
            point,
            line: line_no,
        });
    }

    if image_ids.is_empty() {
        return Err(csv_err(2, "no landmark rows"));
    }
    let mut lms = LandmarkSet::new_missing(
        image_ids.len(),
        class_names.len(),
        max_instance + 1,
        dim,
        class_names,
    )?;
    for row in rows {
        if lms.get(row.image, row.class, row.instance).is_some() {
            return Err(csv_err(
                row.line,
                "duplicate (image_id, class, instance) row",
            ));
        }
        lms.set(row.image, row.class, row.instance, &row.point)?;
    }
    Ok(LandmarkTable {
        landmarks: lms,
        image_ids,
    })
}

pub fn format_landmarks_csv(lms: &LandmarkSet, image_ids: &[String]) -> Result<String> {
    if image_ids.len() != lms.n_samples() {
        return Err(Error::ShapeMismatch(format!(
            "{} image ids for {} samples",
            image_ids.len(),
            lms.n_samples()
        )));
    }
    let mut out = String::from("image_id,class,instance,dim0,dim1");
    if lms.dim() == 3 {
        out.push_str(",dim2");
    }
    out.push('\n');
    for (n, c, i, point) in lms.iter() {
        let Some(point) = point else { continue };
        write!(out, "{},{},{}", image_ids[n], lms.class_names()[c], i).unwrap();
        for v in point {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn read_landmarks_csv(path: &Path) -> Result<LandmarkTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_landmarks_csv(&text)
}

pub fn write_landmarks_csv(path: &Path, lms: &LandmarkSet, image_ids: &[String]) -> Result<()> {
    let text = format_landmarks_csv(lms, image_ids)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
