//! Static SVG figures, each paired with a CSV of the plotted numbers.

use std::fmt::Write as _;

use super::curves::CurveSet;
use super::dump::LatentDump;
use super::pca::{pca_project, Pca};
use crate::error::Result;

const SIZE: f64 = 360.0;
const MARGIN: f64 = 36.0;

/// Anchor colours of a perceptually ordered dark-blue to yellow ramp.
const RAMP: [(f64, f64, f64); 5] =
    [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];

/// Colour of `t` in `[0, 1]` on the ramp.
pub fn ramp_color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let f = x - i as f64;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    let mix = |p: f64, q: f64| (p + (q - p) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn scale(v: f64, (lo, hi): (f64, f64), from: f64, to: f64) -> f64 {
    from + (v - lo) / (hi - lo) * (to - from)
}

fn panel(svg: &mut String, offset_x: f64, points: &[(f64, f64)], colors: &[String], title: &str) {
    let bx = bounds(points.iter().map(|p| p.0));
    let by = bounds(points.iter().map(|p| p.1));
    let (x0, x1, y0, y1) = (offset_x + MARGIN, offset_x + SIZE - 10.0, SIZE - MARGIN, 10.0);
    writeln!(svg, r##"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="#888"/>"##, x1 - x0, y0 - y1).unwrap();
    writeln!(svg, r##"<text x="{}" y="{}" font-size="12" text-anchor="middle">{title}</text>"##, (x0 + x1) / 2.0, SIZE - 8.0).unwrap();
    for (p, c) in points.iter().zip(colors) {
        writeln!(svg, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}" fill-opacity="0.8"/>"##, scale(p.0, bx, x0, x1), scale(p.1, by, y0, y1)).unwrap();
    }
}

pub struct LatentMap {
    pub svg: String,
    pub csv: String,
    pub pca: Pca,
}

/// Projects the dump onto its first `n_components` (2 or 3) principal
/// components and scatters them coloured by reward. Three components are
/// drawn as three pairwise panels.
pub fn plot_latent_map(dump: &LatentDump, n_components: usize) -> Result<LatentMap> {
    let pca = pca_project(&dump.latents(), n_components)?;
    if dump.is_empty() {
        log::warn!("empty latent dump; writing an empty plot");
    }
    let rewards = dump.rewards();
    let range = bounds(rewards.iter().copied());
    let colors: Vec<String> = rewards.iter().map(|&r| ramp_color((r - range.0) / (range.1 - range.0))).collect();
    let kept = pca.components.len();
    let pairs: Vec<(usize, usize)> = match kept {
        0 | 1 => vec![(0, 0)],
        2 => vec![(0, 1)],
        _ => vec![(0, 1), (0, 2), (1, 2)],
    };
    let width = SIZE * pairs.len() as f64;
    let mut svg = String::new();
    writeln!(svg, r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{SIZE}" viewBox="0 0 {width} {SIZE}">"##).unwrap();
    writeln!(svg, r##"<rect width="100%" height="100%" fill="white"/>"##).unwrap();
    for (i, &(a, b)) in pairs.iter().enumerate() {
        let coord = |z: &Vec<f64>, j: usize| z.get(j).copied().unwrap_or(0.0);
        let points: Vec<(f64, f64)> = pca.projected.iter().map(|z| (coord(z, a), coord(z, b))).collect();
        panel(&mut svg, i as f64 * SIZE, &points, &colors, &format!("PC{} vs PC{}", a + 1, b + 1));
    }
    svg.push_str("</svg>\n");

    let first = dump.rows.first();
    let mut header: Vec<String> = (0..first.map_or(0, |r| r.position.len())).map(|i| format!("pos_{i}")).collect();
    header.extend((0..kept).map(|i| format!("pc{}", i + 1)));
    header.push("reward".into());
    let mut csv = header.join(",") + "\n";
    for (row, z) in dump.rows.iter().zip(&pca.projected) {
        let fields: Vec<String> = row.position.iter().chain(z).chain(std::iter::once(&row.reward)).map(|v| v.to_string()).collect();
        writeln!(csv, "{}", fields.join(",")).unwrap();
    }
    Ok(LatentMap { svg, csv, pca })
}

/// Line plot of several aggregated curves with a one-standard-deviation band.
pub fn plot_curves(curves: &[(String, CurveSet)], y_label: &str) -> String {
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    let max_len = curves.iter().map(|(_, c)| c.mean.len()).max().unwrap_or(0);
    let by = bounds(curves.iter().flat_map(|(_, c)| {
        c.mean.iter().zip(&c.variance).flat_map(|(m, v)| [m - v.sqrt(), m + v.sqrt()])
    }));
    let bx = (0.0, (max_len.max(2) - 1) as f64);
    let (w, h) = (2.0 * SIZE, SIZE);
    let (x0, x1, y0, y1) = (MARGIN + 20.0, w - 140.0, h - MARGIN, 10.0);
    let mut svg = String::new();
    writeln!(svg, r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"##).unwrap();
    writeln!(svg, r##"<rect width="100%" height="100%" fill="white"/>"##).unwrap();
    writeln!(svg, r##"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="#888"/>"##, x1 - x0, y0 - y1).unwrap();
    writeln!(svg, r##"<text x="{}" y="{}" font-size="12" text-anchor="middle">episode</text>"##, (x0 + x1) / 2.0, h - 8.0).unwrap();
    writeln!(svg, r##"<text x="14" y="{}" font-size="12" transform="rotate(-90 14 {})" text-anchor="middle">{y_label}</text>"##, (y0 + y1) / 2.0, (y0 + y1) / 2.0).unwrap();
    writeln!(svg, r##"<text x="{x0}" y="{}" font-size="10">{:.3}</text>"##, y0 + 12.0, by.0).unwrap();
    writeln!(svg, r##"<text x="{x0}" y="{}" font-size="10">{:.3}</text>"##, y1 + 10.0, by.1).unwrap();
    for (i, (name, c)) in curves.iter().enumerate() {
        let color = palette[i % palette.len()];
        let px = |j: usize| scale(j as f64, bx, x0, x1);
        let py = |v: f64| scale(v, by, y0, y1);
        if !c.mean.is_empty() {
            let upper: Vec<String> = c.mean.iter().zip(&c.variance).enumerate().map(|(j, (m, v))| format!("{:.2},{:.2}", px(j), py(m + v.sqrt()))).collect();
            let lower: Vec<String> = c.mean.iter().zip(&c.variance).enumerate().rev().map(|(j, (m, v))| format!("{:.2},{:.2}", px(j), py(m - v.sqrt()))).collect();
            writeln!(svg, r##"<polygon points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"##, upper.join(" "), lower.join(" ")).unwrap();
            let line: Vec<String> = c.mean.iter().enumerate().map(|(j, m)| format!("{:.2},{:.2}", px(j), py(*m))).collect();
            writeln!(svg, r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"##, line.join(" ")).unwrap();
        }
        let ly = y1 + 16.0 + 16.0 * i as f64;
        writeln!(svg, r##"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"##, x1 + 10.0, x1 + 30.0).unwrap();
        writeln!(svg, r##"<text x="{}" y="{}" font-size="11">{name}</text>"##, x1 + 36.0, ly + 4.0).unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

/// Long-format CSV twin of [`plot_curves`].
pub fn curves_csv(curves: &[(String, CurveSet)]) -> String {
    let mut out = String::from("method,episode,mean,variance\n");
    for (name, c) in curves {
        for (i, (m, v)) in c.mean.iter().zip(&c.variance).enumerate() {
            writeln!(out, "{name},{i},{m},{v}").unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::dump::DumpRow;

    fn dump(n: usize) -> LatentDump {
        LatentDump {
            rows: (0..n)
                .map(|i| DumpRow {
                    position: vec![(i / 3) as f64, (i % 3) as f64],
                    latent: vec![i as f64, (i * i) as f64 * 0.1, (i as f64).sin()],
                    reward: -(i as f64),
                    actions: vec![],
                    deltas: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn csv_rows_match_dump() {
        let map = plot_latent_map(&dump(9), 2).unwrap();
        assert_eq!(map.csv.lines().count(), 10);
        assert!(map.csv.starts_with("pos_0,pos_1,pc1,pc2,reward"));
        assert_eq!(map.svg.matches("<circle").count(), 9);
        let three = plot_latent_map(&dump(9), 3).unwrap();
        assert_eq!(three.svg.matches("<circle").count(), 27);
    }

    #[test]
    fn empty_dump_plots_nothing() {
        let map = plot_latent_map(&LatentDump::default(), 2).unwrap();
        assert_eq!(map.csv.lines().count(), 1);
        assert!(map.svg.contains("</svg>"));
        assert!(!map.svg.contains("<circle"));
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp_color(0.0), "#440154");
        assert_eq!(ramp_color(1.0), "#fde725");
        assert_eq!(ramp_color(f64::NAN), "#440154");
    }

    #[test]
    fn curve_plot_and_csv() {
        let set = CurveSet { metric: "avg_steps".into(), selected_seeds: vec![0], mean: vec![3.0, 2.0, 1.0], variance: vec![0.0, 0.25, 0.0] };
        let curves = vec![("OURS".to_string(), set)];
        let svg = plot_curves(&curves, "avg steps");
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(curves_csv(&curves).lines().count(), 4);
    }
}
