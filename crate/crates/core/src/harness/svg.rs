//! Minimal SVG plots with fixed number formatting, so output bytes are stable.

use std::fmt::Write;

use nalgebra::DVector;

use crate::error::Result;
use crate::filter::ClosedLoopRecord;
use crate::geometry::{Polytope, VertexHull};

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 40.0;

struct Frame {
    lo: (f64, f64),
    hi: (f64, f64),
}

impl Frame {
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let sx = PAD + (x - self.lo.0) / (self.hi.0 - self.lo.0) * (W - 2.0 * PAD);
        let sy = H - PAD - (y - self.lo.1) / (self.hi.1 - self.lo.1) * (H - 2.0 * PAD);
        (sx, sy)
    }

    fn polyline(&self, pts: impl Iterator<Item = (f64, f64)>) -> String {
        pts.map(|(x, y)| {
            let (a, b) = self.map(x, y);
            format!("{a:.2},{b:.2}")
        })
        .collect::<Vec<_>>()
        .join(" ")
    }
}

fn header(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
}

/// Phase portrait: state constraints, terminal safe set, trajectory and interfering steps in red.
pub fn phase_plot(
    x_set: &Polytope,
    record: &ClosedLoopRecord,
    hull: &VertexHull,
    safe_boundary: &[DVector<f64>],
) -> Result<String> {
    let bb = x_set.bounding_box()?;
    let margin_x = 0.1 * (bb[0].1 - bb[0].0);
    let margin_y = 0.1 * (bb[1].1 - bb[1].0);
    let frame = Frame {
        lo: (bb[0].0 - margin_x, bb[1].0 - margin_y),
        hi: (bb[0].1 + margin_x, bb[1].1 + margin_y),
    };
    let mut out = String::new();
    header(&mut out);
    let corners = [(bb[0].0, bb[1].0), (bb[0].1, bb[1].0), (bb[0].1, bb[1].1), (bb[0].0, bb[1].1)];
    let _ = writeln!(
        out,
        r#"<polygon points="{}" fill="none" stroke="black" stroke-width="1.5"/>"#,
        frame.polyline(corners.into_iter())
    );
    if !safe_boundary.is_empty() {
        let _ = writeln!(
            out,
            r##"<polygon points="{}" fill="#dde8f5" stroke="#4a78b0" stroke-width="1"/>"##,
            frame.polyline(safe_boundary.iter().map(|p| (p[0], p[1])))
        );
    }
    let ring = hull.ring_2d();
    if ring.len() >= 3 {
        let _ = writeln!(
            out,
            r##"<polygon points="{}" fill="#b8d0a8" stroke="#3c6b2a" stroke-width="1"/>"##,
            frame.polyline(ring.into_iter())
        );
    }
    let states = &record.trajectory.states;
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="black" stroke-width="1"/>"#,
        frame.polyline(states.iter().map(|x| (x[0], x[1])))
    );
    for (k, d) in record.decisions.iter().enumerate() {
        let (cx, cy) = frame.map(states[k][0], states[k][1]);
        let color = if d.interfered { "red" } else { "gray" };
        let _ = writeln!(out, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2" fill="{color}"/>"#);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// First input channel over time: learning input (dashed) and applied input.
pub fn input_plot(record: &ClosedLoopRecord) -> String {
    let steps = record.decisions.len().max(1);
    let values = record
        .learning_inputs
        .iter()
        .chain(record.decisions.iter().map(|d| &d.applied))
        .map(|u| u[0].abs());
    let span = values.fold(1e-9, f64::max) * 1.1;
    let frame = Frame {
        lo: (0.0, -span),
        hi: (steps as f64, span),
    };
    let mut out = String::new();
    header(&mut out);
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="gray" stroke-dasharray="4 3"/>"#,
        frame.polyline(record.learning_inputs.iter().enumerate().map(|(k, u)| (k as f64, u[0])))
    );
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="black"/>"#,
        frame.polyline(record.decisions.iter().enumerate().map(|(k, d)| (k as f64, d.applied[0])))
    );
    for (k, d) in record.decisions.iter().enumerate().filter(|(_, d)| d.interfered) {
        let (cx, cy) = frame.map(k as f64, d.applied[0]);
        let _ = writeln!(out, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="1.5" fill="red"/>"#);
    }
    out.push_str("</svg>\n");
    out
}
