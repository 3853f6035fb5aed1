//! SVG plots of rotation distributions. Each rotation `R` is drawn as the
//! camera-frame direction `Rᵀ a` of a canonical object axis `a`, colored by
//! the tilt about that direction and faded by probability. The front
//! (`z ≥ 0`) and back hemispheres get one orthographic disc each.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::rotation::Rotation;

pub const DEFAULT_TOP_K: usize = 5000;
const DISC_RADIUS: f64 = 160.0;
const MARGIN: f64 = 24.0;
const DOT_RADIUS: f64 = 2.6;
const LEGEND_RADIUS: f64 = 36.0;

#[derive(Debug, Clone, PartialEq)]
pub struct VizOptions {
    /// Canonical object axis; the default is the object z-axis.
    pub axis: Vector3<f64>,
    pub top_k: usize,
    pub title: Option<String>,
}

impl Default for VizOptions {
    fn default() -> Self {
        VizOptions { axis: Vector3::z(), top_k: DEFAULT_TOP_K, title: None }
    }
}

/// One plotted rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotPoint {
    /// Unit direction of the rotated axis.
    pub dir: Vector3<f64>,
    /// Tilt about `dir` in `[0, 2π)`.
    pub tilt: f64,
    /// Probability relative to the heaviest plotted point.
    pub alpha: f64,
}

/// A unit vector orthogonal to `a`.
fn orthogonal(a: &Vector3<f64>) -> Vector3<f64> {
    let helper = if a.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    a.cross(&helper).normalize()
}

/// Tangent frame at `v` used to measure tilt.
fn tangent_frame(v: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let up = if v.z.abs() < 0.99 { Vector3::z() } else { Vector3::x() };
    let e1 = (up - v * up.dot(v)).normalize();
    (e1, v.cross(&e1))
}

/// Direction and tilt of one rotation.
pub fn axis_and_tilt(r: &Rotation, axis: &Vector3<f64>) -> (Vector3<f64>, f64) {
    let a = axis.normalize();
    let rt = r.inverse();
    let v = rt.rotate(&a);
    let w = rt.rotate(&orthogonal(&a));
    let (e1, e2) = tangent_frame(&v);
    (v, w.dot(&e2).atan2(w.dot(&e1)).rem_euclid(2.0 * PI))
}

/// The `top_k` heaviest rotations as plot points, heaviest first.
pub fn plot_points(rotations: &[Rotation], weights: &[f64], opts: &VizOptions) -> Result<Vec<PlotPoint>> {
    if rotations.len() != weights.len() {
        return Err(Error::LengthMismatch(rotations.len(), weights.len()));
    }
    if opts.axis.norm() < 1e-12 {
        return Err(Error::Config("visualization axis must be non-zero".into()));
    }
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order.truncate(opts.top_k);
    let max = order.first().map(|&i| weights[i]).ok_or(Error::AllZeroWeights)?;
    Ok(order
        .into_iter()
        .map(|i| {
            let (dir, tilt) = axis_and_tilt(&rotations[i], &opts.axis);
            PlotPoint { dir, tilt, alpha: weights[i] / max }
        })
        .collect())
}

/// Cyclic hue wheel as `#rrggbb`.
pub fn hue_color(angle: f64) -> String {
    let h = angle.rem_euclid(2.0 * PI) / (2.0 * PI) * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    let c = |v: f64| (v * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(r), c(g), c(b))
}

/// Renders plot points as a standalone SVG document.
pub fn render_svg(points: &[PlotPoint], opts: &VizOptions) -> String {
    let d = 2.0 * DISC_RADIUS;
    let width = 3.0 * MARGIN + 2.0 * d + 2.0 * LEGEND_RADIUS + MARGIN;
    let height = 2.0 * MARGIN + d + 20.0;
    let centers = [(MARGIN + DISC_RADIUS, MARGIN + 20.0 + DISC_RADIUS), (2.0 * MARGIN + d + DISC_RADIUS, MARGIN + 20.0 + DISC_RADIUS)];
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let Some(t) = &opts.title {
        let _ = writeln!(s, r#"<text x="{MARGIN}" y="16" font-family="sans-serif" font-size="13">{}</text>"#, escape(t));
    }
    for (label, (cx, cy)) in ["front", "back"].iter().zip(centers) {
        let _ = writeln!(
            s,
            r##"<circle cx="{cx:.1}" cy="{cy:.1}" r="{DISC_RADIUS}" fill="none" stroke="#888" stroke-width="1"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{label}</text>"#,
            cy + DISC_RADIUS + 16.0
        );
    }
    let _ = writeln!(s, "<g>");
    // lightest first so heavy points stay on top
    for p in points.iter().rev() {
        let (cx, cy) = if p.dir.z >= 0.0 { centers[0] } else { centers[1] };
        let x = if p.dir.z >= 0.0 { p.dir.x } else { -p.dir.x };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{DOT_RADIUS}" fill="{}" fill-opacity="{:.3}"/>"#,
            cx + x * DISC_RADIUS,
            cy - p.dir.y * DISC_RADIUS,
            hue_color(p.tilt),
            p.alpha.clamp(0.02, 1.0)
        );
    }
    let _ = writeln!(s, "</g>");
    let (lx, ly) = (width - MARGIN - LEGEND_RADIUS, MARGIN + 20.0 + LEGEND_RADIUS);
    let _ = writeln!(s, "<g>");
    for k in 0..36 {
        let a0 = k as f64 * PI / 18.0;
        let a1 = a0 + PI / 18.0;
        let _ = writeln!(
            s,
            r#"<path d="M {lx:.1} {ly:.1} L {:.1} {:.1} A {LEGEND_RADIUS} {LEGEND_RADIUS} 0 0 0 {:.1} {:.1} Z" fill="{}"/>"#,
            lx + LEGEND_RADIUS * a0.cos(),
            ly - LEGEND_RADIUS * a0.sin(),
            lx + LEGEND_RADIUS * a1.cos(),
            ly - LEGEND_RADIUS * a1.sin(),
            hue_color(a0 + PI / 36.0)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{lx:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">tilt</text>"#,
        ly + LEGEND_RADIUS + 14.0
    );
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Plots and writes an SVG file.
pub fn write_svg(path: &Path, rotations: &[Rotation], weights: &[f64], opts: &VizOptions) -> Result<Vec<PlotPoint>> {
    let points = plot_points(rotations, weights, opts)?;
    fs::write(path, render_svg(&points, opts))?;
    Ok(points)
}
