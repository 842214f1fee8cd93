//! SVG figures: a station heat map with wind arrows and the diffusive flux
//! from one station to its neighbours.
//!
//! Output is plain text built with fixed-precision formatting, so the same
//! input always yields the same bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geo_graph::{SensorGraph, Station};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN: f64 = 70.0;
/// Length in pixels of the arrow for the fastest wind in the figure.
const MAX_ARROW: f64 = 40.0;

/// Sequential colormap: linear in RGB from `LOW` (value 0) to `HIGH`
/// (the figure maximum).
const LOW: [f64; 3] = [255.0, 255.0, 204.0];
const HIGH: [f64; 3] = [189.0, 0.0, 38.0];
/// Diverging colormap endpoints for fluxes: outflow red, inflow blue.
const OUT: [f64; 3] = [202.0, 0.0, 32.0];
const MID: [f64; 3] = [220.0, 220.0, 220.0];
const IN: [f64; 3] = [5.0, 113.0, 176.0];

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let c: Vec<u8> = (0..3).map(|i| (a[i] + (b[i] - a[i]) * t).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Fill colour for `value` on the `[0, max]` sequential scale.
pub fn sequential_color(value: f64, max: f64) -> String {
    lerp(LOW, HIGH, if max > 0.0 { value / max } else { 0.0 })
}

/// Colour for a signed flux on the `[−max, max]` diverging scale.
pub fn diverging_color(value: f64, max: f64) -> String {
    if max <= 0.0 || value == 0.0 {
        return lerp(MID, MID, 0.0);
    }
    if value > 0.0 {
        lerp(MID, OUT, value / max)
    } else {
        lerp(MID, IN, -value / max)
    }
}

fn mercator(s: &Station) -> (f64, f64) {
    let phi = s.latitude.to_radians();
    (s.longitude.to_radians(), (std::f64::consts::FRAC_PI_4 + phi / 2.0).tan().ln())
}

/// Screen positions of stations under a Mercator projection fitted to the
/// drawing area with equal scale on both axes.
fn project(stations: &[Station]) -> Vec<(f64, f64)> {
    let pts: Vec<(f64, f64)> = stations.iter().map(mercator).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in &pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    let span = (x1 - x0).max(y1 - y0);
    let scale = if span > 0.0 {
        ((WIDTH - 2.0 * MARGIN) / span).min((HEIGHT - 2.0 * MARGIN) / span)
    } else {
        0.0
    };
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    pts.iter()
        .map(|(x, y)| (WIDTH / 2.0 + (x - cx) * scale, HEIGHT / 2.0 - (y - cy) * scale))
        .collect()
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} contains {v}")));
    }
    Ok(())
}

/// Heat map of one forecast step: station discs coloured by concentration
/// and arrows in the direction the wind blows, scaled by speed. Calm
/// stations get no arrow.
pub fn wind_heatmap_svg(stations: &[Station], values: &[f64], wind: &[(f64, f64)]) -> Result<String> {
    if values.len() != stations.len() || wind.len() != stations.len() {
        return Err(Error::Dimension(format!(
            "{} stations with {} values and {} wind vectors",
            stations.len(),
            values.len(),
            wind.len()
        )));
    }
    check_finite(values, "concentration field")?;
    check_finite(&wind.iter().flat_map(|(u, v)| [*u, *v]).collect::<Vec<_>>(), "wind field")?;
    let max = values.iter().copied().fold(0.0, f64::max);
    let max_speed = wind.iter().map(|(u, v)| u.hypot(*v)).fold(0.0, f64::max);
    let pos = project(stations);
    let mut out = String::new();
    header(&mut out, "PM2.5 forecast (µg/m³) and wind");
    out.push_str(
        r#"<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="black"/></marker></defs>"#,
    );
    out.push('\n');
    for ((s, (x, y)), v) in stations.iter().zip(&pos).zip(values) {
        let _ = writeln!(
            out,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="14" fill="{}" stroke="black" stroke-width="0.5"><title>{}: {v:.2}</title></circle>"#,
            sequential_color(*v, max),
            escape(&s.id)
        );
    }
    for ((x, y), (u, v)) in pos.iter().zip(wind) {
        let speed = u.hypot(*v);
        if speed == 0.0 {
            continue;
        }
        let len = MAX_ARROW * speed / max_speed;
        let (dx, dy) = (u / speed * len, -v / speed * len);
        let _ = writeln!(
            out,
            r#"<line class="wind" x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="1.5" marker-end="url(#head)"/>"#,
            x + dx,
            y + dy
        );
    }
    legend(&mut out, &format!("0 to {max:.1} µg/m³"), |t| sequential_color(t * max, max));
    out.push_str("</svg>\n");
    Ok(out)
}

fn legend(out: &mut String, label: &str, color: impl Fn(f64) -> String) {
    let (x, y, w, h) = (WIDTH - MARGIN - 200.0, HEIGHT - 40.0, 200.0, 12.0);
    let steps = 20;
    for i in 0..steps {
        let t = (i as f64 + 0.5) / steps as f64;
        let _ = writeln!(
            out,
            r#"<rect class="legend" x="{:.2}" y="{y:.2}" width="{:.2}" height="{h:.2}" fill="{}"/>"#,
            x + w * i as f64 / steps as f64,
            w / steps as f64,
            color(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
        x + w / 2.0,
        y - 4.0,
        escape(label)
    );
}

/// Pairwise diffusive flux `k·W_ij·(X_i − X_j)` from `source` to every
/// other station, in graph order.
pub fn diffusion_fluxes(graph: &SensorGraph, values: &[f64], source: &str, k: f64) -> Result<Vec<(String, f64)>> {
    if values.len() != graph.len() {
        return Err(Error::Dimension(format!("{} values for {} stations", values.len(), graph.len())));
    }
    check_finite(values, "concentration field")?;
    let i = graph
        .index_of(source)
        .ok_or_else(|| Error::Reference(format!("unknown station `{source}`")))?;
    let w = graph.weights();
    Ok(graph
        .stations()
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(j, s)| (s.id.clone(), k * w.get(i, j) * (values[i] - values[j])))
        .collect())
}

/// Lines from `source` to every neighbour, coloured by diffusive flux
/// (red: outflow, blue: inflow). Returns the SVG and the fluxes drawn.
pub fn diffusion_lines_svg(
    graph: &SensorGraph,
    values: &[f64],
    source: &str,
    k: f64,
) -> Result<(String, Vec<(String, f64)>)> {
    let fluxes = diffusion_fluxes(graph, values, source, k)?;
    let max = fluxes.iter().map(|(_, f)| f.abs()).fold(0.0, f64::max);
    let pos = project(graph.stations());
    let i = graph.index_of(source).expect("checked by diffusion_fluxes");
    let mut out = String::new();
    header(&mut out, &format!("Diffusive flux from {source}"));
    for (id, f) in &fluxes {
        let j = graph.index_of(id).expect("graph station");
        let width = if max > 0.0 { 1.0 + 4.0 * f.abs() / max } else { 1.0 };
        let _ = writeln!(
            out,
            r#"<line class="flux" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="{width:.2}"><title>{} → {}: {f:.6}</title></line>"#,
            pos[i].0,
            pos[i].1,
            pos[j].0,
            pos[j].1,
            diverging_color(*f, max),
            escape(source),
            escape(id)
        );
    }
    for (s, (x, y)) in graph.stations().iter().zip(&pos) {
        let r = if s.id == source { 9 } else { 6 };
        let _ = writeln!(
            out,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="black"><title>{}</title></circle>"#,
            escape(&s.id)
        );
    }
    legend(&mut out, &format!("flux −{max:.3} (in) to +{max:.3} (out)"), |t| {
        diverging_color((2.0 * t - 1.0) * max, max)
    });
    out.push_str("</svg>\n");
    Ok((out, fluxes))
}

fn write(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

pub fn render_wind_heatmap(
    stations: &[Station],
    values: &[f64],
    wind: &[(f64, f64)],
    path: impl AsRef<Path>,
) -> Result<()> {
    write(path.as_ref(), &wind_heatmap_svg(stations, values, wind)?)
}

pub fn render_diffusion_lines(
    graph: &SensorGraph,
    values: &[f64],
    source: &str,
    k: f64,
    path: impl AsRef<Path>,
) -> Result<Vec<(String, f64)>> {
    let (svg, fluxes) = diffusion_lines_svg(graph, values, source, k)?;
    write(path.as_ref(), &svg)?;
    Ok(fluxes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(id: &str, lat: f64, lon: f64) -> Station {
        Station::new(id, lat, lon).unwrap()
    }

    #[test]
    fn single_station_figure() {
        let svg = wind_heatmap_svg(&[st("a", 39.9, 116.4)], &[40.0], &[(1.0, 1.0)]).unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert_eq!(svg.matches("class=\"wind\"").count(), 1);
        let calm = wind_heatmap_svg(&[st("a", 39.9, 116.4)], &[40.0], &[(0.0, 0.0)]).unwrap();
        assert_eq!(calm.matches("class=\"wind\"").count(), 0);
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(sequential_color(0.0, 10.0), "#ffffcc");
        assert_eq!(sequential_color(10.0, 10.0), "#bd0026");
        assert_eq!(diverging_color(0.0, 1.0), "#dcdcdc");
    }

    #[test]
    fn equal_field_has_no_flux() {
        let g = crate::geo_graph::distance_adjacency(vec![st("a", 39.9, 116.4), st("b", 40.0, 116.5), st("c", 39.8, 116.2)])
            .unwrap();
        let f = diffusion_fluxes(&g, &[5.0, 5.0, 5.0], "a", 0.1).unwrap();
        assert!(f.iter().all(|(_, v)| *v == 0.0));
        let f = diffusion_fluxes(&g, &[9.0, 5.0, 1.0], "a", 0.1).unwrap();
        assert!(f.iter().all(|(_, v)| *v > 0.0));
        assert!(matches!(diffusion_fluxes(&g, &[1.0; 3], "zz", 0.1), Err(Error::Reference(_))));
    }
}
