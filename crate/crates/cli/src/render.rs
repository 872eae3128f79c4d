//! Hand-written SVG output: scene snapshots and the training curve.
//!
//! Every number is printed with a fixed precision so the text is a
//! deterministic function of the inputs.

use std::fmt::Write;

use graphdiff::fresnel::{excess_path, link_geometries};
use graphdiff::graph::{Condition, EdgeGraph, Point, Scenario};
use graphdiff::trainer::EpochMetrics;
use graphdiff::Result;

const SCENE_SIZE: f64 = 480.0;
const SCENE_MARGIN: f64 = 30.0;

struct Frame {
    origin: Point,
    top: f64,
    scale: f64,
}

impl Frame {
    fn for_scenario(s: &Scenario) -> Self {
        let span = s.area.width().max(s.area.height());
        Self {
            origin: s.area.min,
            top: s.area.max.y,
            scale: (SCENE_SIZE - 2.0 * SCENE_MARGIN) / span,
        }
    }

    fn map(&self, p: Point) -> (f64, f64) {
        (
            SCENE_MARGIN + (p.x - self.origin.x) * self.scale,
            SCENE_MARGIN + (self.top - p.y) * self.scale,
        )
    }
}

/// One scene: device dots, active links (solid when effective, dashed red
/// when the target lies beyond the ineffective threshold), the first
/// Fresnel ellipse of each active link, and the target as a cross.
pub fn scene_svg(g: &EdgeGraph, s: &Scenario, cond: &Condition, title: &str) -> Result<String> {
    let links = link_geometries(s)?;
    let frame = Frame::for_scenario(s);
    let threshold = s.reward.ineffective_threshold_m;
    let mut out = String::new();
    let size = SCENE_SIZE;
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0}" height="{:.0}" viewBox="0 0 {size:.0} {:.0}">"#,
        size + 20.0,
        size + 20.0
    );
    let _ = writeln!(
        out,
        r##"<rect x="0" y="0" width="100%" height="100%" fill="#ffffff"/>"##
    );
    let (x0, y0) = frame.map(Point::new(s.area.min.x, s.area.max.y));
    let _ = writeln!(
        out,
        r##"<rect x="{x0:.3}" y="{y0:.3}" width="{:.3}" height="{:.3}" fill="none" stroke="#bbbbbb"/>"##,
        s.area.width() * frame.scale,
        s.area.height() * frame.scale
    );
    let _ = writeln!(out, r#"<g class="fresnel-zones">"#);
    for e in g.active_indices() {
        let l = &links[e];
        let (cx, cy) = frame.map(l.midpoint());
        let _ = writeln!(
            out,
            r##"<ellipse cx="{cx:.3}" cy="{cy:.3}" rx="{:.3}" ry="{:.3}" transform="rotate({:.3} {cx:.3} {cy:.3})" fill="#3b7dd8" fill-opacity="0.12"/>"##,
            l.semi_major() * frame.scale,
            l.semi_minor() * frame.scale,
            -l.angle().to_degrees()
        );
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(out, r#"<g class="links">"#);
    for e in g.active_indices() {
        let l = &links[e];
        let (ax, ay) = frame.map(l.tx);
        let (bx, by) = frame.map(l.rx);
        let style = if excess_path(cond.target, l) > threshold {
            r##"stroke="#d62728" stroke-width="1.5" stroke-dasharray="6 4" class="ineffective""##
        } else {
            r##"stroke="#1f4e96" stroke-width="2""##
        };
        let _ = writeln!(
            out,
            r#"<line x1="{ax:.3}" y1="{ay:.3}" x2="{bx:.3}" y2="{by:.3}" {style}/>"#
        );
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(out, r#"<g class="nodes">"#);
    for (i, p) in s.nodes.iter().enumerate() {
        let (x, y) = frame.map(*p);
        let _ = writeln!(
            out,
            r##"<circle cx="{x:.3}" cy="{y:.3}" r="5" fill="#222222"/>"##
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.3}" y="{:.3}" font-size="10" fill="#555555">{i}</text>"##,
            x + 6.0,
            y - 6.0
        );
    }
    let _ = writeln!(out, "</g>");
    let (tx, ty) = frame.map(cond.target);
    let _ = writeln!(
        out,
        r##"<path d="M {:.3} {:.3} L {:.3} {:.3} M {:.3} {:.3} L {:.3} {:.3}" stroke="#e6550d" stroke-width="2.5" class="target"/>"##,
        tx - 7.0,
        ty - 7.0,
        tx + 7.0,
        ty + 7.0,
        tx - 7.0,
        ty + 7.0,
        tx + 7.0,
        ty - 7.0
    );
    let _ = writeln!(
        out,
        r##"<text x="{SCENE_MARGIN:.0}" y="{:.0}" font-size="13" fill="#222222">{}</text>"##,
        size + 8.0,
        escape(title)
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Validation, greedy and random means per epoch.
pub fn training_curve_svg(rows: &[EpochMetrics]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 20.0;
    const BOTTOM: f64 = 40.0;
    let series: [(&str, &str, Vec<f64>); 3] = [
        (
            "trained",
            "#1f77b4",
            rows.iter().map(|r| r.val_mean).collect(),
        ),
        (
            "greedy",
            "#2ca02c",
            rows.iter().map(|r| r.greedy_mean).collect(),
        ),
        (
            "random",
            "#d62728",
            rows.iter().map(|r| r.random_mean).collect(),
        ),
    ];
    let (mut lo, mut hi) = series
        .iter()
        .flat_map(|(_, _, v)| v.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() || !hi.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let last_epoch = rows.last().map_or(1, |r| r.epoch.max(1)) as f64;
    let x = |epoch: usize| LEFT + epoch as f64 / last_epoch * (W - LEFT - RIGHT);
    let y = |v: f64| TOP + (hi - v) / (hi - lo) * (H - TOP - BOTTOM);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0}" height="{H:.0}" viewBox="0 0 {W:.0} {H:.0}">"#
    );
    let _ = writeln!(
        out,
        r##"<rect x="0" y="0" width="100%" height="100%" fill="#ffffff"/>"##
    );
    let _ = writeln!(
        out,
        r##"<path d="M {LEFT:.0} {TOP:.0} L {LEFT:.0} {:.0} L {:.0} {:.0}" stroke="#444444" fill="none"/>"##,
        H - BOTTOM,
        W - RIGHT,
        H - BOTTOM
    );
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r##"<text x="{:.0}" y="{:.3}" font-size="11" text-anchor="end" fill="#444444">{v:.0}</text>"##,
            LEFT - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r##"<text x="{:.0}" y="{:.0}" font-size="12" text-anchor="middle" fill="#444444">epoch (0 to {})</text>"##,
        (LEFT + W - RIGHT) / 2.0,
        H - 10.0,
        last_epoch
    );
    for (k, (name, color, values)) in series.iter().enumerate() {
        let points: Vec<String> = rows
            .iter()
            .zip(values)
            .map(|(r, &v)| format!("{:.3},{:.3}", x(r.epoch), y(v)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5" class="{name}"/>"#,
            points.join(" ")
        );
        let ly = TOP + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.0}" y="{ly:.0}" font-size="12" text-anchor="end" fill="{color}">{name}</text>"#,
            W - RIGHT - 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
