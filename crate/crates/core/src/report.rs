//! Report emission: JSON summaries, per-step CSV and SVG plots.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::graph::{turning_angle, Graph};
use crate::io::{ToolpathFile, ToolpathHeader};
use crate::Result;

pub const HISTOGRAM_BINS: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

impl std::str::FromStr for ReportFormat {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(crate::Error::Argument(format!("unknown report format {other:?}"))),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Svg => "svg",
        }
    }
}

/// Everything a report is drawn from.
pub struct ReportInput<'a> {
    pub graph: &'a Graph,
    pub file: &'a ToolpathFile,
    pub wall_ms: Option<&'a [f64]>,
    pub temperature: Option<&'a [f64]>,
}

/// Counts of angles (radians) in 10° buckets over [0°, 180°]; 180° falls
/// in the last bucket. Angles are snapped to 1e-9° first so lattice angles
/// such as 60° land in the bucket they start.
pub fn angle_histogram(angles: &[f64]) -> [usize; HISTOGRAM_BINS] {
    let mut h = [0usize; HISTOGRAM_BINS];
    for &a in angles {
        let deg = ((a.to_degrees() * 1e9).round() / 1e9).clamp(0.0, 180.0);
        let k = ((deg / 10.0).floor() as usize).min(HISTOGRAM_BINS - 1);
        h[k] += 1;
    }
    h
}

/// Turning angles at interior junctions of the file's continuous runs.
pub fn file_turning_angles(graph: &Graph, file: &ToolpathFile) -> Vec<f64> {
    file.steps
        .windows(3)
        .filter(|w| !w[1].jump && !w[2].jump)
        .map(|w| turning_angle(graph.position(w[0].node), graph.position(w[1].node), graph.position(w[2].node)))
        .collect()
}

#[derive(Serialize)]
struct JsonReport<'a> {
    header: &'a ToolpathHeader,
    turning_histogram_10deg: [usize; HISTOGRAM_BINS],
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_ms_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_ms: Option<&'a [f64]>,
    /// Steps whose partial structure displaces more than 1 mm.
    #[serde(skip_serializing_if = "Option::is_none")]
    u_max_over_1mm: Option<usize>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

pub fn render(input: &ReportInput, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => render_json(input),
        ReportFormat::Csv => render_csv(input),
        ReportFormat::Svg => render_svg(input),
    }
}

fn render_json(input: &ReportInput) -> String {
    let angles = file_turning_angles(input.graph, input.file);
    let u: Vec<f64> = input.file.steps.iter().filter_map(|s| s.diagnostics.u_max).collect();
    let report = JsonReport {
        header: &input.file.header,
        turning_histogram_10deg: angle_histogram(&angles),
        wall_ms_total: input.wall_ms.map(|w| w.iter().sum()),
        wall_ms: input.wall_ms,
        u_max_over_1mm: (!u.is_empty()).then(|| u.iter().filter(|&&x| x > 1.0).count()),
    };
    let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
    s.push('\n');
    s
}

fn render_csv(input: &ReportInput) -> String {
    let mut out = String::from("step,node,jump,reward,u_max,temperature,turn_angle,episodes,wall_ms\n");
    for (k, s) in input.file.steps.iter().enumerate() {
        let d = &s.diagnostics;
        let wall = input.wall_ms.and_then(|w| w.get(k)).copied();
        let _ = writeln!(
            out,
            "{k},{},{},{},{},{},{},{},{}",
            s.node,
            s.jump as u8,
            s.reward,
            opt(d.u_max),
            opt(d.temperature),
            opt(d.turn_angle),
            d.episodes,
            opt(wall)
        );
    }
    out
}

/// Blue-to-red ramp for `t` in [0, 1].
fn heat_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    format!("#{r:02x}40{b:02x}")
}

fn render_svg(input: &ReportInput) -> String {
    let (w, h, pad) = (420.0, 400.0, 20.0);
    let g = input.graph;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for n in g.nodes() {
        for a in 0..2 {
            lo[a] = lo[a].min(n.position[a]);
            hi[a] = hi[a].max(n.position[a]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let scale = (w - 2.0 * pad) / span;
    let px = |p: &[f64; 3]| (pad + (p[0] - lo[0]) * scale, h - pad - (p[1] - lo[1]) * scale);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{h}" viewBox="0 0 {} {h}">"#,
        2.0 * w,
        2.0 * w
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="14" font-size="12">{} toolpath, {} steps, {} jumps</text>"#,
        input.file.header.mode, input.file.header.totals.steps, input.file.header.totals.jumps
    );
    for e in g.edges() {
        let (a, b) = (px(g.position(e.a)), px(g.position(e.b)));
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#dddddd" stroke-width="1"/>"##,
            a.0, a.1, b.0, b.1
        );
    }
    if let Some(t) = input.temperature {
        let tmax = t.iter().copied().fold(0.0, f64::max).max(1e-12);
        let r = (0.35 * scale * g.mean_edge_length()).clamp(0.5, 6.0);
        for (v, &tv) in t.iter().enumerate() {
            let p = px(g.position(v));
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="{r:.2}" fill="{}"/>"#,
                p.0,
                p.1,
                heat_color(tv / tmax)
            );
        }
    }
    for pair in input.file.steps.windows(2) {
        let (a, b) = (px(&pair[0].position), px(&pair[1].position));
        let style = if pair[1].jump {
            r##"stroke="#999999" stroke-dasharray="3,3""##
        } else {
            r##"stroke="#1f5fbf" stroke-width="1.5""##
        };
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" {style}/>"#,
            a.0, a.1, b.0, b.1
        );
    }

    // Turning-angle histogram.
    let hist = angle_histogram(&file_turning_angles(g, input.file));
    let peak = hist.iter().copied().max().unwrap_or(0).max(1) as f64;
    let (x0, y0, bw, bh) = (w + 40.0, h - 40.0, (w - 60.0) / HISTOGRAM_BINS as f64, h - 100.0);
    let _ = writeln!(s, r#"<text x="{x0}" y="30" font-size="12">turning angle (10° bins)</text>"#);
    for (k, &c) in hist.iter().enumerate() {
        let bar = bh * c as f64 / peak;
        let fill = if k >= 12 { "#c0392b" } else { "#2c7bb6" };
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"><title>{}-{}°: {c}</title></rect>"#,
            x0 + k as f64 * bw,
            y0 - bar,
            bw - 1.0,
            bar,
            10 * k,
            10 * (k + 1)
        );
    }
    for deg in [0, 60, 120, 180] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="10">{deg}</text>"#,
            x0 + deg as f64 / 10.0 * bw - 4.0,
            y0 + 14.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<stem>.<ext>` for each format into `dir`; returns the paths.
pub fn emit_report(input: &ReportInput, formats: &[ReportFormat], dir: &Path, stem: &str) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for &f in formats {
        let path = dir.join(format!("{stem}.{}", f.extension()));
        std::fs::write(&path, render(input, f))?;
        out.push(path);
    }
    Ok(out)
}
