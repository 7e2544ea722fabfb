//! Static SVG renderings of trajectory and embedding CSV files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use ktrace_core::metrics::pca_project;

use crate::error::{CliError, Result};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Plot(msg.into())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

fn read_table<R: Read>(input: R) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let rows = rdr
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| bad(e.to_string()))?;
    if rows.is_empty() {
        return Err(bad("no data rows"));
    }
    Ok((header, rows))
}

fn number(row: &csv::StringRecord, col: usize, name: &str) -> Result<f64> {
    let field = row.get(col).unwrap_or("");
    field
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| bad(format!("{name} value {field:?} is not a finite number")))
}

fn open_svg(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn points(xy: &[(f64, f64)]) -> String {
    xy.iter()
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Prior (dashed) and posterior (solid) mastery lines for each concept of
/// the first student in a trajectory CSV written by `predict`.
pub fn mastery_svg<R: Read>(input: R) -> Result<String> {
    let (header, rows) = read_table(input)?;
    let col = |name: &str| header.iter().position(|h| h == name);
    let step_col = col("step").ok_or_else(|| bad("missing step column"))?;
    let concepts: Vec<&str> = header.iter().filter_map(|h| h.strip_prefix("prior_")).collect();
    if concepts.is_empty() {
        return Err(bad("no prior_<concept> columns"));
    }
    let mut cols = Vec::with_capacity(concepts.len());
    for c in &concepts {
        let post = col(&format!("posterior_{c}")).ok_or_else(|| bad(format!("missing posterior_{c} column")))?;
        cols.push((col(&format!("prior_{c}")).expect("listed from the header"), post));
    }
    let student = col("student_id").map(|i| rows[0].get(i).unwrap_or("").to_string());
    let rows: Vec<&csv::StringRecord> = match (col("student_id"), &student) {
        (Some(i), Some(s)) => rows.iter().filter(|r| r.get(i) == Some(s.as_str())).collect(),
        _ => rows.iter().collect(),
    };
    let mut steps = Vec::with_capacity(rows.len());
    for r in &rows {
        steps.push(number(r, step_col, "step")?);
    }
    let (lo, hi) = steps.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_of = |s: f64| {
        if hi > lo {
            MARGIN_LEFT + (s - lo) / (hi - lo) * plot_w
        } else {
            MARGIN_LEFT + plot_w / 2.0
        }
    };
    let y_of = |p: f64| MARGIN_TOP + (1.0 - p) * plot_h;

    let title = match &student {
        Some(s) => format!("Mastery of student {s}"),
        None => "Mastery".to_string(),
    };
    let mut svg = open_svg(&title);
    let (x0, x1, y0, y1) = (MARGIN_LEFT, MARGIN_LEFT + plot_w, y_of(0.0), y_of(1.0));
    let _ = writeln!(svg, r##"<g class="axes" stroke="#333">"##);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    let _ = writeln!(svg, "</g>");
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = y_of(tick);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{tick}</text>"#, x0 - 6.0, y + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{lo}</text>"#, x0 + 4.0, y0 + 18.0);
    let _ = writeln!(svg, r#"<text x="{x1}" y="{}" text-anchor="end">{hi}</text>"#, y0 + 18.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">step</text>"#, (x0 + x1) / 2.0, y0 + 36.0);
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16,{:.2}) rotate(-90)" text-anchor="middle">p(mastered)</text>"#,
        (y0 + y1) / 2.0
    );

    for (i, (c, &(prior_col, post_col))) in concepts.iter().zip(&cols).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut prior = Vec::with_capacity(rows.len());
        let mut post = Vec::with_capacity(rows.len());
        for (r, &s) in rows.iter().zip(&steps) {
            let (a, b) = (number(r, prior_col, "prior")?, number(r, post_col, "posterior")?);
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
                return Err(bad(format!("probability outside [0, 1] for concept {c}")));
            }
            prior.push((x_of(s), y_of(a)));
            post.push((x_of(s), y_of(b)));
        }
        let _ = writeln!(svg, r#"<g class="concept" data-concept="{}" fill="none" stroke="{color}">"#, escape(c));
        let _ = writeln!(svg, r#"<polyline class="prior" stroke-dasharray="5,4" points="{}"/>"#, points(&prior));
        let _ = writeln!(svg, r#"<polyline class="posterior" stroke-width="2" points="{}"/>"#, points(&post));
        let _ = writeln!(svg, "</g>");
        let ly = MARGIN_TOP + 16.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 16.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(c)
        );
    }
    let ly = MARGIN_TOP + 16.0 * concepts.len() as f64 + 10.0;
    let lx = WIDTH - MARGIN_RIGHT + 16.0;
    let _ = writeln!(
        svg,
        r##"<text x="{lx}" y="{ly}" fill="#555">dashed: prior</text><text x="{lx}" y="{}" fill="#555">solid: posterior</text>"##,
        ly + 16.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

struct EmbeddingRow {
    kind: String,
    id: String,
    step: Option<f64>,
    vector: Vec<f64>,
}

/// PCA scatter of an embedding CSV written by `predict --embeddings-out`:
/// problems and concepts as points, each student's states as a path.
pub fn trajectory_svg<R: Read>(input: R) -> Result<String> {
    let (header, rows) = read_table(input)?;
    if header.len() < 5 || header[..3] != ["kind", "id", "step"] {
        return Err(bad("expected columns kind,id,step,v0,v1,..."));
    }
    let dim = header.len() - 3;
    let mut parsed = Vec::with_capacity(rows.len());
    for r in &rows {
        if r.len() != header.len() {
            return Err(bad(format!("row has {} fields, expected {}", r.len(), header.len())));
        }
        let kind = r[0].to_string();
        if !matches!(kind.as_str(), "student" | "problem" | "concept") {
            return Err(bad(format!("unknown kind {kind:?}")));
        }
        let step = if kind == "student" { Some(number(r, 2, "step")?) } else { None };
        let vector = (0..dim).map(|i| number(r, 3 + i, "embedding")).collect::<Result<Vec<_>>>()?;
        parsed.push(EmbeddingRow {
            kind,
            id: r[1].to_string(),
            step,
            vector,
        });
    }
    let vectors: Vec<Vec<f64>> = parsed.iter().map(|r| r.vector.clone()).collect();
    let proj = pca_project(&vectors).map_err(|e| bad(e.to_string()))?;

    let (mut xlo, mut xhi, mut ylo, mut yhi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for c in &proj.coords {
        xlo = xlo.min(c[0]);
        xhi = xhi.max(c[0]);
        ylo = ylo.min(c[1]);
        yhi = yhi.max(c[1]);
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let x_of = |x: f64| MARGIN_LEFT + (x - xlo) / span(xlo, xhi) * plot_w;
    let y_of = |y: f64| MARGIN_TOP + (1.0 - (y - ylo) / span(ylo, yhi)) * plot_h;

    let mut svg = open_svg("Student state trajectory (PCA)");
    let _ = writeln!(
        svg,
        r##"<text x="{}" y="{}" text-anchor="middle" fill="#555">PC1 ({:.3})   PC2 ({:.3})</text>"##,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 16.0,
        proj.explained[0],
        proj.explained[1]
    );
    let _ = writeln!(svg, r##"<g class="problems" fill="#bbbbbb">"##);
    for (r, c) in parsed.iter().zip(&proj.coords).filter(|(r, _)| r.kind == "problem") {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3"><title>{}</title></circle>"#,
            x_of(c[0]),
            y_of(c[1]),
            escape(&r.id)
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r##"<g class="concepts" fill="#d62728">"##);
    for (r, c) in parsed.iter().zip(&proj.coords).filter(|(r, _)| r.kind == "concept") {
        let (x, y) = (x_of(c[0]), y_of(c[1]));
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{:.2}" width="8" height="8"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            x - 4.0,
            y - 4.0,
            x + 7.0,
            y - 6.0,
            escape(&r.id)
        );
    }
    let _ = writeln!(svg, "</g>");

    let mut students: BTreeMap<&str, Vec<(f64, [f64; 2])>> = BTreeMap::new();
    for (r, c) in parsed.iter().zip(&proj.coords) {
        if let Some(step) = r.step {
            students.entry(&r.id).or_default().push((step, *c));
        }
    }
    for (i, (id, mut path)) in students.into_iter().enumerate() {
        path.sort_by(|a, b| a.0.total_cmp(&b.0));
        let color = PALETTE[i % PALETTE.len()];
        let xy: Vec<(f64, f64)> = path.iter().map(|(_, c)| (x_of(c[0]), y_of(c[1]))).collect();
        let _ = writeln!(svg, r#"<g class="student" data-student="{}" stroke="{color}">"#, escape(id));
        let _ = writeln!(svg, r#"<polyline fill="none" stroke-width="1.5" points="{}"/>"#, points(&xy));
        for (k, (x, y)) in xy.iter().enumerate() {
            let r = if k == 0 || k + 1 == xy.len() { 5.0 } else { 2.5 };
            let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{color}"/>"#);
        }
        let _ = writeln!(svg, "</g>");
        let ly = MARGIN_TOP + 16.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 16.0;
        let _ = writeln!(
            svg,
            r#"<circle cx="{lx}" cy="{ly}" r="4" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            lx + 10.0,
            ly + 4.0,
            escape(id)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
