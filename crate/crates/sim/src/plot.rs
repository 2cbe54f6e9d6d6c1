//! Minimal SVG path plots: top (x-y) and side (x-z) projections of the
//! flown path against the reference, with obstacle outlines.

use clbfet_core::Obstacle;

use crate::log::SimLog;

struct Panel {
    origin_x: f64,
    origin_y: f64,
    size: f64,
    min: (f64, f64),
    max: (f64, f64),
}

impl Panel {
    fn new(origin_x: f64, origin_y: f64, size: f64, points: &[(f64, f64)], radius_pad: f64) -> Self {
        let mut min = (f64::INFINITY, f64::INFINITY);
        let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(a, b) in points {
            min.0 = min.0.min(a - radius_pad);
            min.1 = min.1.min(b - radius_pad);
            max.0 = max.0.max(a + radius_pad);
            max.1 = max.1.max(b + radius_pad);
        }
        if !min.0.is_finite() {
            min = (-1.0, -1.0);
            max = (1.0, 1.0);
        }
        let span = ((max.0 - min.0).max(max.1 - min.1)).max(1e-6);
        let pad = 0.05 * span;
        let center = ((min.0 + max.0) / 2.0, (min.1 + max.1) / 2.0);
        let half = span / 2.0 + pad;
        Self {
            origin_x,
            origin_y,
            size,
            min: (center.0 - half, center.1 - half),
            max: (center.0 + half, center.1 + half),
        }
    }

    fn map(&self, a: f64, b: f64) -> (f64, f64) {
        let sx = self.size / (self.max.0 - self.min.0);
        let sy = self.size / (self.max.1 - self.min.1);
        (
            self.origin_x + (a - self.min.0) * sx,
            // svg y grows downward
            self.origin_y + self.size - (b - self.min.1) * sy,
        )
    }

    fn scale(&self) -> f64 {
        self.size / (self.max.0 - self.min.0)
    }

    fn polyline(&self, points: &[(f64, f64)], style: &str) -> String {
        if points.is_empty() {
            return String::new();
        }
        let coords: Vec<String> = points
            .iter()
            .map(|&(a, b)| {
                let (x, y) = self.map(a, b);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        format!("<polyline points=\"{}\" {} fill=\"none\"/>\n", coords.join(" "), style)
    }
}

/// Renders the run as a standalone SVG with two square panels.
pub fn render_path_svg(log: &SimLog, obstacles: &[Obstacle]) -> String {
    let size = 420.0;
    let margin = 48.0;
    let width = 2.0 * size + 3.0 * margin;
    let height = size + 2.0 * margin;

    let actual_xy: Vec<(f64, f64)> =
        log.rows.iter().map(|r| (r.state[0], r.state[1])).collect();
    let reference_xy: Vec<(f64, f64)> =
        log.rows.iter().map(|r| (r.reference[0], r.reference[1])).collect();
    let actual_xz: Vec<(f64, f64)> =
        log.rows.iter().map(|r| (r.state[0], r.state[2])).collect();
    let reference_xz: Vec<(f64, f64)> =
        log.rows.iter().map(|r| (r.reference[0], r.reference[2])).collect();

    let radius_pad = obstacles.iter().map(|o| o.radius).fold(0.0, f64::max);
    let mut pts_xy = actual_xy.clone();
    pts_xy.extend(reference_xy.iter().copied());
    pts_xy.extend(obstacles.iter().map(|o| (o.center.x, o.center.y)));
    let mut pts_xz = actual_xz.clone();
    pts_xz.extend(reference_xz.iter().copied());
    pts_xz.extend(obstacles.iter().map(|o| (o.center.x, o.center.z)));

    let top = Panel::new(margin, margin, size, &pts_xy, radius_pad);
    let side = Panel::new(2.0 * margin + size, margin, size, &pts_xz, radius_pad);

    let ref_style = "stroke=\"#888888\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"";
    let path_style = "stroke=\"#1f77b4\" stroke-width=\"1.8\"";

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n<rect width=\"{width}\" height=\"{height}\" \
         fill=\"white\"/>\n"
    );
    for (panel, label, obs_coords) in [
        (&top, "top view (x-y)", obstacles.iter().map(|o| (o.center.x, o.center.y)).collect::<Vec<_>>()),
        (&side, "side view (x-z)", obstacles.iter().map(|o| (o.center.x, o.center.z)).collect()),
    ] {
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333333\"/>\n",
            panel.origin_x, panel.origin_y, panel.size, panel.size
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
            panel.origin_x,
            panel.origin_y - 10.0,
            label
        ));
        for (obstacle, &(a, b)) in obstacles.iter().zip(&obs_coords) {
            let (cx, cy) = panel.map(a, b);
            svg.push_str(&format!(
                "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{:.2}\" fill=\"#d62728\" \
                 fill-opacity=\"0.35\" stroke=\"#d62728\"/>\n",
                obstacle.radius * panel.scale()
            ));
        }
    }
    svg.push_str(&top.polyline(&reference_xy, ref_style));
    svg.push_str(&top.polyline(&actual_xy, path_style));
    svg.push_str(&side.polyline(&reference_xz, ref_style));
    svg.push_str(&side.polyline(&actual_xz, path_style));
    if let Some(first) = log.rows.first() {
        let (x, y) = top.map(first.state[0], first.state[1]);
        svg.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"#2ca02c\"/>\n"
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
