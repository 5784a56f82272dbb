//! SVG rendering of a predicted hypnogram over a per-epoch confidence background.

use std::fmt::Write as _;

use crate::data::StageLabel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RenderSpec {
    pub recording_id: String,
    pub predicted: Vec<StageLabel>,
    pub tcp: Vec<f64>,
    /// Reference stages; drawn only when `show_reference` is set, but its
    /// Unknown epochs are always shaded gray.
    pub reference: Option<Vec<StageLabel>>,
    pub show_reference: bool,
    pub width: u32,
    pub height: u32,
}

impl RenderSpec {
    pub fn new(recording_id: &str, predicted: Vec<StageLabel>, tcp: Vec<f64>) -> Self {
        RenderSpec {
            recording_id: recording_id.to_string(),
            predicted,
            tcp,
            reference: None,
            show_reference: false,
            width: 1200,
            height: 300,
        }
    }
}

const MARGIN_LEFT: f64 = 50.0;
const MARGIN_RIGHT: f64 = 10.0;
const MARGIN_TOP: f64 = 25.0;
const MARGIN_BOTTOM: f64 = 10.0;
const UNKNOWN_FILL: &str = "#9e9e9e";
const AXIS_ORDER: [StageLabel; 5] = [
    StageLabel::W,
    StageLabel::Rem,
    StageLabel::N1,
    StageLabel::N2,
    StageLabel::N3,
];

/// Linear red (TCP 0) to green (TCP 1) background color.
pub fn confidence_color(tcp: f64) -> String {
    if !tcp.is_finite() {
        return UNKNOWN_FILL.to_string();
    }
    let c = tcp.clamp(0.0, 1.0);
    let red = (255.0 * (1.0 - c)).round() as u8;
    let green = (255.0 * c).round() as u8;
    format!("#{red:02x}{green:02x}00")
}

fn axis_row(stage: StageLabel) -> Option<usize> {
    AXIS_ORDER.iter().position(|&s| s == stage)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn step_path(stages: &[StageLabel], x: impl Fn(usize) -> f64, y: impl Fn(usize) -> f64) -> String {
    let mut d = String::new();
    let mut pen_down = false;
    for (t, s) in stages.iter().enumerate() {
        match axis_row(*s) {
            Some(row) => {
                let cmd = if pen_down { 'L' } else { 'M' };
                let _ = write!(d, "{cmd}{:.3},{:.3} L{:.3},{:.3} ", x(t), y(row), x(t + 1), y(row));
                pen_down = true;
            }
            None => pen_down = false,
        }
    }
    d.trim_end().to_string()
}

pub fn render_confidence_hypnogram(spec: &RenderSpec) -> Result<Vec<u8>> {
    let t_len = spec.predicted.len();
    if spec.tcp.len() != t_len {
        return Err(Error::Shape(format!(
            "{} predicted stages vs {} TCP values",
            t_len,
            spec.tcp.len()
        )));
    }
    if let Some(r) = &spec.reference {
        if r.len() != t_len {
            return Err(Error::Shape(format!("{} predicted stages vs {} reference stages", t_len, r.len())));
        }
    }
    if t_len == 0 {
        return Err(Error::Shape("nothing to render".into()));
    }
    let width = spec.width.max(100) as f64;
    let height = spec.height.max(80) as f64;
    let plot_w = width - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = height - MARGIN_TOP - MARGIN_BOTTOM;
    let cell_w = plot_w / t_len as f64;
    let row_h = plot_h / AXIS_ORDER.len() as f64;
    let x = |t: usize| MARGIN_LEFT + t as f64 * cell_w;
    let y = |row: usize| MARGIN_TOP + (row as f64 + 0.5) * row_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"##,
        w = width,
        h = height
    );
    let _ = writeln!(svg, r##"<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>"##);
    let _ = writeln!(
        svg,
        r##"<text x="{MARGIN_LEFT}" y="16" font-family="sans-serif" font-size="13">{}</text>"##,
        escape(&spec.recording_id)
    );
    let _ = writeln!(svg, r##"<g id="confidence">"##);
    for t in 0..t_len {
        let unknown = spec.reference.as_ref().is_some_and(|r| !r[t].is_scored());
        let fill = if unknown {
            UNKNOWN_FILL.to_string()
        } else {
            confidence_color(spec.tcp[t])
        };
        let _ = writeln!(
            svg,
            r##"<rect x="{:.3}" y="{MARGIN_TOP:.3}" width="{:.3}" height="{:.3}" fill="{fill}"/>"##,
            x(t),
            cell_w,
            plot_h
        );
    }
    let _ = writeln!(svg, "</g>");
    for (row, stage) in AXIS_ORDER.iter().enumerate() {
        let _ = writeln!(
            svg,
            r##"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="11" text-anchor="end" dominant-baseline="middle">{}</text>"##,
            MARGIN_LEFT - 6.0,
            y(row),
            stage.name()
        );
    }
    if spec.show_reference {
        if let Some(reference) = &spec.reference {
            let _ = writeln!(
                svg,
                r##"<path id="reference" d="{}" fill="none" stroke="#1a237e" stroke-width="1.5" stroke-dasharray="4 2"/>"##,
                step_path(reference, x, y)
            );
        }
    }
    let _ = writeln!(
        svg,
        r##"<path id="predicted" d="{}" fill="none" stroke="#ffffff" stroke-width="2"/>"##,
        step_path(&spec.predicted, x, y)
    );
    svg.push_str("</svg>\n");
    Ok(svg.into_bytes())
}
