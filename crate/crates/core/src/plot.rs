//! Log-log SVG of a `rates.csv` table.
//!
//! Guide lines are drawn inside a group whose transform maps
//! `(log10 x, log10 y)` to the canvas, so their path data are log-log
//! coordinates. Markers are drawn in canvas coordinates.

use std::fmt::Write as _;

use crate::io::{parse_rates, RatesRow};
use crate::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// `(column label, colour, accessor)` per series.
const SERIES: [(&str, &str, fn(&RatesRow) -> f64); 3] = [
    ("mean_E", "#1f77b4", |r| r.mean),
    ("q50", "#2ca02c", |r| r.q50),
    ("q90", "#d62728", |r| r.q90),
];

fn num(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        String::from("0.000000")
    } else {
        s
    }
}

/// SVG text for the rates table in `csv`. The abscissa is `tau` when it
/// varies across rows, `h` otherwise.
pub fn emit_plot(csv: &str) -> Result<String> {
    let rows = parse_rates(csv)?;
    if rows.len() < 2 {
        return Err(Error::Format(String::from("plot needs at least two rates rows")));
    }
    let tau_varies = rows.iter().any(|r| r.tau != rows[0].tau);
    let (xlabel, xs): (&str, Vec<f64>) =
        if tau_varies { ("tau", rows.iter().map(|r| r.tau).collect()) } else { ("h", rows.iter().map(|r| r.h).collect()) };
    let mut ys = Vec::new();
    for (_, _, get) in SERIES {
        ys.extend(rows.iter().map(get));
    }
    if xs.iter().chain(&ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Format(String::from("log-log plot needs positive finite values")));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.log10()).collect();
    let (x0, x1) = bounds(&lx);
    if x0 == x1 {
        return Err(Error::Format(String::from("abscissa does not vary")));
    }
    let ly_all: Vec<f64> = ys.iter().map(|v| v.log10()).collect();
    let (mut y0, mut y1) = bounds(&ly_all);
    // Room for the guides, which span the data's x range from the largest value.
    y0 = y0.min(y1 - 2.0 * (x1 - x0));
    if y0 == y1 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let sx = (WIDTH - 2.0 * MARGIN) / (x1 - x0);
    let sy = (HEIGHT - 2.0 * MARGIN) / (y1 - y0);
    let px = |lx: f64| MARGIN + (lx - x0) * sx;
    let py = |ly: f64| HEIGHT - MARGIN - (ly - y0) * sy;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">",
        w = WIDTH,
        h = HEIGHT
    );
    let _ = writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<rect x=\"{m}\" y=\"{m}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        num(WIDTH - 2.0 * MARGIN),
        num(HEIGHT - 2.0 * MARGIN),
        m = MARGIN
    );
    for d in (x0.floor() as i32)..=(x1.ceil() as i32) {
        let v = d as f64;
        if v >= x0 && v <= x1 {
            let _ = writeln!(
                s,
                "<text class=\"tick\" x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">1e{d}</text>",
                num(px(v)),
                num(HEIGHT - MARGIN + 18.0)
            );
        }
    }
    for d in (y0.floor() as i32)..=(y1.ceil() as i32) {
        let v = d as f64;
        if v >= y0 && v <= y1 {
            let _ = writeln!(
                s,
                "<text class=\"tick\" x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">1e{d}</text>",
                num(MARGIN - 6.0),
                num(py(v) + 4.0)
            );
        }
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\">{xlabel}</text>",
        num(WIDTH / 2.0),
        num(HEIGHT - 16.0)
    );
    let _ = writeln!(s, "<text x=\"16\" y=\"{}\" font-size=\"14\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">E</text>", num(HEIGHT / 2.0), num(HEIGHT / 2.0));

    let _ = writeln!(
        s,
        "<g class=\"loglog\" transform=\"matrix({} 0 0 {} {} {})\">",
        num(sx),
        num(-sy),
        num(MARGIN - x0 * sx),
        num(HEIGHT - MARGIN + y0 * sy)
    );
    let ytop = bounds(&ly_all).1;
    for slope in [1.0, 2.0] {
        let _ = writeln!(
            s,
            "<path class=\"guide\" data-slope=\"{slope}\" d=\"M {} {} L {} {}\" stroke=\"gray\" stroke-dasharray=\"4 3\" fill=\"none\" vector-effect=\"non-scaling-stroke\"/>",
            num(x0),
            num(ytop - slope * (x1 - x0)),
            num(x1),
            num(ytop)
        );
    }
    let _ = writeln!(s, "</g>");

    for (k, (name, colour, get)) in SERIES.iter().enumerate() {
        let pts: Vec<(f64, f64)> = rows.iter().zip(&lx).map(|(r, &x)| (px(x), py(get(r).log10()))).collect();
        let d: Vec<String> = pts.iter().map(|(x, y)| format!("{} {}", num(*x), num(*y))).collect();
        let _ = writeln!(
            s,
            "<polyline class=\"series\" data-series=\"{name}\" points=\"{}\" stroke=\"{colour}\" fill=\"none\"/>",
            d.join(" ")
        );
        for (x, y) in &pts {
            let _ = writeln!(
                s,
                "<circle class=\"marker\" data-series=\"{name}\" cx=\"{}\" cy=\"{}\" r=\"3.5\" fill=\"{colour}\"/>",
                num(*x),
                num(*y)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{colour}\">{name}</text>",
            num(MARGIN + 10.0),
            num(MARGIN + 16.0 + 16.0 * k as f64)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn bounds(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}
