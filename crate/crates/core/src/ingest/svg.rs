use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labeled fruit: center column `cx`, center row `cy`, radius `r`, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthLabel {
    pub frame: usize,
    pub circles: Vec<Circle>,
    pub visual_count: usize,
}

impl GroundTruthLabel {
    pub fn new(frame: usize, circles: Vec<Circle>) -> Self {
        let visual_count = circles.len();
        Self {
            frame,
            circles,
            visual_count,
        }
    }

    /// Indices of circles that extend past the image bounds.
    pub fn clipped(&self, width: usize, height: usize) -> Vec<usize> {
        self.circles
            .iter()
            .enumerate()
            .filter(|(_, c)| c.cx - c.r < 0.0 || c.cy - c.r < 0.0 || c.cx + c.r > width as f64 || c.cy + c.r > height as f64)
            .map(|(i, _)| i)
            .collect()
    }
}

fn attr(node: &roxmltree::Node, name: &str) -> Result<f64> {
    let raw = node
        .attribute(name)
        .ok_or_else(|| Error::MalformedSvg(format!("circle missing {name} attribute")))?;
    let trimmed = raw.trim().trim_end_matches("px");
    trimmed
        .parse::<f64>()
        .map_err(|_| Error::MalformedSvg(format!("circle attribute {name}={raw:?} is not a number")))
}

pub fn parse_svg_labels(text: &str, frame: usize) -> Result<GroundTruthLabel> {
    let doc = roxmltree::Document::parse(text).map_err(|e| Error::MalformedSvg(e.to_string()))?;
    if doc.root_element().tag_name().name() != "svg" {
        return Err(Error::MalformedSvg("root element is not <svg>".into()));
    }
    let mut circles = Vec::new();
    for node in doc.descendants().filter(|n| n.has_tag_name("circle")) {
        let c = Circle {
            cx: attr(&node, "cx")?,
            cy: attr(&node, "cy")?,
            r: attr(&node, "r")?,
        };
        if !(c.r > 0.0) || !c.cx.is_finite() || !c.cy.is_finite() {
            return Err(Error::MalformedSvg(format!("invalid circle {c:?}")));
        }
        circles.push(c);
    }
    Ok(GroundTruthLabel::new(frame, circles))
}

pub fn load_svg_labels(path: &Path, frame: usize) -> Result<GroundTruthLabel> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    parse_svg_labels(&text, frame)
}

/// Serializes circles so that [`parse_svg_labels`] recovers them bit-exactly.
pub fn svg_text(label: &GroundTruthLabel, width: usize, height: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" data-frame="{}">"#,
        label.frame
    );
    for c in &label.circles {
        let _ = writeln!(
            out,
            r#"  <circle cx="{}" cy="{}" r="{}" fill="none" stroke="red"/>"#,
            c.cx, c.cy, c.r
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_svg_labels(label: &GroundTruthLabel, width: usize, height: usize, path: &Path) -> Result<()> {
    fs::write(path, svg_text(label, width, height)).map_err(|e| Error::io(path, e))
}
