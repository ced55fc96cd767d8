//! SVG rendering of a rollout over its map, trajectories colored by time.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use bits_core::raster::SemanticGrid;
use bits_core::simengine::Rollout;
use bits_core::world::AgentState;

/// Viridis-like ramp from dark purple (start) to yellow (end).
fn ramp(t: f64) -> String {
    const STOPS: [(f64, f64, f64); 5] = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (94.0, 201.0, 98.0),
        (253.0, 231.0, 37.0),
    ];
    let x = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |p: f64, q: f64| (p + (q - p) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn corners(s: &AgentState) -> [(f64, f64); 4] {
    let (c, sn) = (s.heading.cos(), s.heading.sin());
    let (hl, hw) = (s.length / 2.0, s.width / 2.0);
    [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(u, v)| (s.x + u * c - v * sn, s.y + u * sn + v * c))
}

/// Renders the drivable area, each agent's path and its starting box.
pub fn render_svg(rollout: &Rollout, grid: &SemanticGrid) -> String {
    let ps = grid.pixel_size();
    let (ox, oy) = grid.origin();
    let (w, h) = (grid.width() as f64 * ps, grid.height() as f64 * ps);
    // World y points up; SVG y points down.
    let sx = |x: f64| x - ox;
    let sy = |y: f64| h - (y - oy);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w:.1} {h:.1}" width="{:.0}" height="{:.0}">"#,
        w * 4.0,
        h * 4.0
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#f4f1ea"/>"##);
    let mask = grid.drivable_mask();
    let _ = writeln!(out, r##"<g fill="#bfbfbf" shape-rendering="crispEdges">"##);
    for r in 0..grid.height() {
        let mut c = 0;
        while c < grid.width() {
            if !mask[r * grid.width() + c] {
                c += 1;
                continue;
            }
            let start = c;
            while c < grid.width() && mask[r * grid.width() + c] {
                c += 1;
            }
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/>"#,
                start as f64 * ps,
                h - (r + 1) as f64 * ps,
                (c - start) as f64 * ps,
                ps
            );
        }
    }
    out.push_str("</g>\n");

    let mut tracks: BTreeMap<u32, Vec<(usize, &AgentState)>> = BTreeMap::new();
    for (t, frame) in rollout.frames.iter().enumerate() {
        for s in frame {
            tracks.entry(s.agent_id).or_default().push((t, s));
        }
    }
    let last = rollout.frames.len().saturating_sub(1).max(1) as f64;
    out.push_str(r#"<g stroke-width="0.6" stroke-linecap="round" fill="none">"#);
    out.push('\n');
    for track in tracks.values() {
        for pair in track.windows(2) {
            let ((t, a), (_, b)) = (pair[0], pair[1]);
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}"/>"#,
                sx(a.x),
                sy(a.y),
                sx(b.x),
                sy(b.y),
                ramp(t as f64 / last)
            );
        }
    }
    out.push_str("</g>\n");
    out.push_str(r##"<g fill="none" stroke="#1f4e9c" stroke-width="0.4">"##);
    out.push('\n');
    for track in tracks.values() {
        let pts: Vec<String> = corners(track[0].1)
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(out, r#"<polygon points="{}"/>"#, pts.join(" "));
    }
    out.push_str("</g>\n</svg>\n");
    out
}
