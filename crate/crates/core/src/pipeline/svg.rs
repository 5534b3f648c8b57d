//! Minimal SVG emitters: site-value heatmaps on the lon/lat grid and
//! smoothed curve plots. Output is plain SVG 1.1 with a viewBox, byte
//! stable for identical inputs.

use std::fmt::Write as _;

/// Five-stop blue-to-red ramp evaluated at t in [0, 1].
fn color_ramp(t: f64) -> String {
    const STOPS: [(f64, f64, f64); 5] = [
        (33.0, 102.0, 172.0),
        (103.0, 169.0, 207.0),
        (247.0, 247.0, 247.0),
        (239.0, 138.0, 98.0),
        (178.0, 24.0, 43.0),
    ];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let k = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - k as f64;
    let mix = |a: f64, b: f64| (a + f * (b - a)).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(STOPS[k].0, STOPS[k + 1].0),
        mix(STOPS[k].1, STOPS[k + 1].1),
        mix(STOPS[k].2, STOPS[k + 1].2)
    )
}

/// Render one value per site as a colored cell at its coordinates.
/// NaN values render as empty cells.
pub fn heatmap(title: &str, coords: &[(f64, f64)], values: &[f64]) -> String {
    let mut svg = String::new();
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let (vmin, vmax) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let (mut lon_min, mut lon_max, mut lat_min, mut lat_max) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(lon, lat) in coords {
        lon_min = lon_min.min(lon);
        lon_max = lon_max.max(lon);
        lat_min = lat_min.min(lat);
        lat_max = lat_max.max(lat);
    }
    let cell = 18.0;
    let margin = 24.0;
    let cols = if coords.is_empty() {
        1.0
    } else {
        ((lon_max - lon_min) / cell_spacing(coords, true)).round() + 1.0
    };
    let rows = if coords.is_empty() {
        1.0
    } else {
        ((lat_max - lat_min) / cell_spacing(coords, false)).round() + 1.0
    };
    let width = margin * 2.0 + cols * cell;
    let height = margin * 2.0 + rows * cell + 16.0;
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{margin}" y="16" font-size="12" font-family="sans-serif">{}</text>"#,
        xml_escape(title)
    );
    if !coords.is_empty() {
        let dx = cell_spacing(coords, true);
        let dy = cell_spacing(coords, false);
        for (&(lon, lat), &v) in coords.iter().zip(values) {
            if !v.is_finite() {
                continue;
            }
            let col = ((lon - lon_min) / dx).round();
            let row = ((lat_max - lat) / dy).round();
            let t = if vmax > vmin {
                (v - vmin) / (vmax - vmin)
            } else {
                0.5
            };
            let _ = writeln!(
                svg,
                r#"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="{}"><title>{v:.4}</title></rect>"#,
                margin + col * cell,
                margin + row * cell,
                color_ramp(t)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{margin}" y="{:.1}" font-size="10" font-family="sans-serif">range [{vmin:.4}, {vmax:.4}]</text>"#,
            height - 8.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn cell_spacing(coords: &[(f64, f64)], lon: bool) -> f64 {
    let mut axis: Vec<f64> = coords
        .iter()
        .map(|&(x, y)| if lon { x } else { y })
        .collect();
    axis.sort_by(|a, b| a.partial_cmp(b).unwrap());
    axis.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    axis.windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
        .clamp(1e-9, 1e9)
}

/// Render one or more (x, y) polylines on shared axes.
pub fn curves(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const COLORS: [&str; 6] = ["#b2182b", "#2166ac", "#1b7837", "#762a83", "#e08214", "#252525"];
    let (width, height, margin) = (480.0, 320.0, 40.0);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{margin}" y="16" font-size="12" font-family="sans-serif">{}</text>"#,
        xml_escape(title)
    );
    let points: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if !points.is_empty() {
        let (mut x0, mut x1, mut y0, mut y1) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let to_px = |x: f64, y: f64| {
            (
                margin + (x - x0) / (x1 - x0) * (width - 2.0 * margin),
                height - margin - (y - y0) / (y1 - y0) * (height - 2.0 * margin),
            )
        };
        let _ = writeln!(
            svg,
            r##"<rect x="{margin}" y="{margin}" width="{:.1}" height="{:.1}" fill="none" stroke="#888888"/>"##,
            width - 2.0 * margin,
            height - 2.0 * margin
        );
        for (k, (label, pts)) in series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let path: Vec<String> = pts
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| {
                    let (px, py) = to_px(x, y);
                    format!("{px:.2},{py:.2}")
                })
                .collect();
            if !path.is_empty() {
                let _ = writeln!(
                    svg,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    path.join(" ")
                );
            }
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" font-family="sans-serif" fill="{color}">{}</text>"#,
                width - margin - 150.0,
                margin + 14.0 * (k as f64 + 1.0),
                xml_escape(label)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{margin}" y="{:.1}" font-size="10" font-family="sans-serif">x: [{x0:.2}, {x1:.2}]  y: [{y0:.4}, {y1:.4}]</text>"#,
            height - 10.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Check well-formedness of the emitted SVG subset: balanced tags and a
/// viewBox on the root. Used by tests and kept with the emitter.
pub fn is_well_formed(svg: &str) -> bool {
    if !svg.starts_with("<svg") || !svg.contains("viewBox=") {
        return false;
    }
    let mut stack: Vec<String> = Vec::new();
    let mut rest = svg;
    while let Some(open) = rest.find('<') {
        let Some(close_rel) = rest[open..].find('>') else {
            return false;
        };
        let tag = &rest[open + 1..open + close_rel];
        rest = &rest[open + close_rel + 1..];
        if let Some(name) = tag.strip_prefix('/') {
            if stack.pop().as_deref() != Some(name.trim()) {
                return false;
            }
        } else if !tag.ends_with('/') && !tag.starts_with('?') && !tag.starts_with('!') {
            let name = tag.split_whitespace().next().unwrap_or("");
            stack.push(name.to_string());
        }
    }
    stack.is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_is_well_formed_and_stable() {
        let coords = vec![(0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (0.5, 0.5)];
        let values = vec![1.0, 2.0, f64::NAN, 4.0];
        let a = heatmap("test <map>", &coords, &values);
        let b = heatmap("test <map>", &coords, &values);
        assert_eq!(a, b);
        assert!(is_well_formed(&a), "{a}");
        assert!(a.contains("viewBox"));
        // NaN cell omitted: 3 rects
        assert_eq!(a.matches("<rect").count(), 3);
    }

    #[test]
    fn empty_inputs_render_an_empty_canvas() {
        let svg = heatmap("empty", &[], &[]);
        assert!(is_well_formed(&svg), "{svg}");
        assert_eq!(svg.matches("<rect").count(), 0);
        let svg = curves("empty", &[]);
        assert!(is_well_formed(&svg), "{svg}");
        assert_eq!(svg.matches("<polyline").count(), 0);
    }

    #[test]
    fn curves_draw_each_series() {
        let series = vec![
            ("first".to_string(), vec![(0.0, 0.1), (1.0, 0.5), (2.0, 0.2)]),
            ("second".to_string(), vec![(0.0, 0.9), (2.0, 0.3)]),
        ];
        let svg = curves("chi vs distance", &series);
        assert!(is_well_formed(&svg), "{svg}");
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(color_ramp(0.0), "#2166ac");
        assert_eq!(color_ramp(1.0), "#b2182b");
    }
}
