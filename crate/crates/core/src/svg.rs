//! Minimal SVG heat strips: one row of colored cells per layer.

use std::fmt::Write;

/// One labeled strip of values.
pub struct Strip {
    pub label: String,
    pub values: Vec<f64>,
}

const CELL: usize = 6;
const ROW_GAP: usize = 18;
const LABEL_W: usize = 90;
const MAX_COLS: usize = 128;

/// Renders strips as wrapped rows of cells. With `diverging`, negative values
/// are blue and positive red; otherwise values in `[0, max]` go white to red.
pub fn heat_strips(title: &str, strips: &[Strip], diverging: bool) -> String {
    let scale = strips
        .iter()
        .flat_map(|s| s.values.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };

    let mut body = String::new();
    let mut y = 30;
    for s in strips {
        let rows = s.values.len().div_ceil(MAX_COLS).max(1);
        let _ = writeln!(
            body,
            r#"<text x="4" y="{}" font-size="11" font-family="monospace">{}</text>"#,
            y + CELL,
            escape(&s.label)
        );
        for (i, v) in s.values.iter().enumerate() {
            let (r, c) = (i / MAX_COLS, i % MAX_COLS);
            let _ = writeln!(
                body,
                r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="{}"><title>{i}: {v}</title></rect>"#,
                LABEL_W + c * CELL,
                y + r * CELL,
                color(*v / scale, diverging)
            );
        }
        y += rows * CELL + ROW_GAP;
    }
    let width = LABEL_W + MAX_COLS * CELL + 10;
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{y}\">\n\
         <text x=\"4\" y=\"16\" font-size=\"13\" font-family=\"sans-serif\">{} (scale {scale})</text>\n{body}</svg>\n",
        escape(title)
    )
}

fn color(x: f64, diverging: bool) -> String {
    let x = x.clamp(-1.0, 1.0);
    let fade = |a: f64| (255.0 * (1.0 - a)).round() as u8;
    if x >= 0.0 || !diverging {
        let a = x.abs();
        format!("#ff{:02x}{:02x}", fade(a), fade(a))
    } else {
        let a = -x;
        format!("#{:02x}{:02x}ff", fade(a), fade(a))
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
