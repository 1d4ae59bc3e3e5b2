//! Sweep output: the CSV record schema and a simple log-log SVG plot.

use std::fmt::Write as _;

use elfatt_core::{Error, Result};

use crate::bench::{BenchMode, BenchRecord};

pub const CSV_HEADER: &str = "mode,m,c,c1,c2,b,repeats,runtime_ns,flops_est,rel_err,seed";

/// Serialize records as CSV, ordered by (mode, m). The `rel_err` field is
/// empty for records without a vanilla reference.
pub fn emit_csv(records: &[BenchRecord]) -> String {
    let mut sorted: Vec<&BenchRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.mode.name().cmp(b.mode.name()).then(a.m.cmp(&b.m)));
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in sorted {
        let rel = r
            .rel_err_vs_vanilla
            .map(|e| e.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.mode.name(),
            r.m,
            r.c,
            r.c1,
            r.c2,
            r.b,
            r.repeats,
            r.runtime_ns,
            r.flops_est,
            rel,
            r.seed
        );
    }
    out
}

/// Parse CSV produced by [`emit_csv`] back into records.
pub fn parse_csv(text: &str) -> Result<Vec<BenchRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::Format {
                reason: format!("bad sweep csv header: {other:?}"),
            })
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Format {
                reason: format!("row {i}: expected 11 fields, got {}", fields.len()),
            });
        }
        let parse_u = |s: &str, what: &str| -> Result<u64> {
            s.parse().map_err(|_| Error::Format {
                reason: format!("row {i}: bad {what} `{s}`"),
            })
        };
        records.push(BenchRecord {
            mode: fields[0].parse()?,
            m: parse_u(fields[1], "m")? as usize,
            c: parse_u(fields[2], "c")? as usize,
            c1: parse_u(fields[3], "c1")? as usize,
            c2: parse_u(fields[4], "c2")? as usize,
            b: parse_u(fields[5], "b")? as usize,
            repeats: parse_u(fields[6], "repeats")? as usize,
            runtime_ns: parse_u(fields[7], "runtime_ns")?,
            flops_est: parse_u(fields[8], "flops_est")?,
            rel_err_vs_vanilla: if fields[9].is_empty() {
                None
            } else {
                Some(fields[9].parse().map_err(|_| Error::Format {
                    reason: format!("row {i}: bad rel_err `{}`", fields[9]),
                })?)
            },
            seed: parse_u(fields[10], "seed")?,
        });
    }
    Ok(records)
}

const PLOT_W: f64 = 800.0;
const PLOT_H: f64 = 560.0;
const MARGIN_L: f64 = 90.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 70.0;
const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Log-log runtime-vs-length plot, one polyline per mode, as standalone SVG.
pub fn emit_scaling_plot(records: &[BenchRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Insufficient { needed: 1, got: 0 });
    }
    let lx = |m: usize| (m as f64).ln();
    let ly = |ns: u64| (ns.max(1) as f64).ln();

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for r in records {
        x_min = x_min.min(lx(r.m));
        x_max = x_max.max(lx(r.m));
        y_min = y_min.min(ly(r.runtime_ns));
        y_max = y_max.max(ly(r.runtime_ns));
    }
    if x_max - x_min < 1e-9 {
        x_min -= 0.5;
        x_max += 0.5;
    }
    if y_max - y_min < 1e-9 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let px = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * (PLOT_W - MARGIN_L - MARGIN_R);
    let py =
        |y: f64| PLOT_H - MARGIN_B - (y - y_min) / (y_max - y_min) * (PLOT_H - MARGIN_T - MARGIN_B);

    let mut modes: Vec<BenchMode> = Vec::new();
    for r in records {
        if !modes.contains(&r.mode) {
            modes.push(r.mode);
        }
    }
    modes.sort_by_key(|m| m.name());

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" viewBox=\"0 0 {PLOT_W} {PLOT_H}\">"
    );
    let _ = writeln!(
        svg,
        "  <rect width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"white\"/>"
    );

    // Axes.
    let (x0, x1) = (MARGIN_L, PLOT_W - MARGIN_R);
    let (y0, y1) = (PLOT_H - MARGIN_B, MARGIN_T);
    let _ = writeln!(
        svg,
        "  <line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y0:.2}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        svg,
        "  <line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x0:.2}\" y2=\"{y1:.2}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"14\">sequence length m (log)</text>",
        (x0 + x1) / 2.0,
        PLOT_H - 18.0
    );
    let _ = writeln!(
        svg,
        "  <text x=\"22\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 22 {:.2})\">median runtime ns (log)</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    // X ticks at the distinct lengths.
    let mut lengths: Vec<usize> = records.iter().map(|r| r.m).collect();
    lengths.sort_unstable();
    lengths.dedup();
    for &m in &lengths {
        let x = px(lx(m));
        let _ = writeln!(
            svg,
            "  <line x1=\"{x:.2}\" y1=\"{y0:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
            y0 + 5.0
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"11\">{m}</text>",
            y0 + 20.0
        );
    }
    // Y ticks at decades.
    let dec_lo = (y_min / std::f64::consts::LN_10).ceil() as i32;
    let dec_hi = (y_max / std::f64::consts::LN_10).floor() as i32;
    for d in dec_lo..=dec_hi {
        let y = py(d as f64 * std::f64::consts::LN_10);
        let _ = writeln!(
            svg,
            "  <line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{x0:.2}\" y2=\"{y:.2}\" stroke=\"black\"/>",
            x0 - 5.0
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"11\">1e{d}</text>",
            x0 - 8.0,
            y + 4.0
        );
    }

    // One series per mode.
    for (i, &mode) in modes.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut series: Vec<&BenchRecord> = records.iter().filter(|r| r.mode == mode).collect();
        series.sort_by_key(|r| r.m);
        if series.len() > 1 {
            let pts: Vec<String> = series
                .iter()
                .map(|r| format!("{:.2},{:.2}", px(lx(r.m)), py(ly(r.runtime_ns))))
                .collect();
            let _ = writeln!(
                svg,
                "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
                pts.join(" ")
            );
        }
        for r in &series {
            let _ = writeln!(
                svg,
                "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                px(lx(r.m)),
                py(ly(r.runtime_ns))
            );
        }
        // Legend entry.
        let ly_pos = MARGIN_T + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            "  <rect x=\"{:.2}\" y=\"{:.2}\" width=\"12\" height=\"12\" fill=\"{color}\"/>",
            PLOT_W - MARGIN_R + 18.0,
            ly_pos
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{}</text>",
            PLOT_W - MARGIN_R + 36.0,
            ly_pos + 10.0,
            mode.name()
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(mode: BenchMode, m: usize, ns: u64, rel: Option<f64>) -> BenchRecord {
        BenchRecord {
            mode,
            m,
            c: 8,
            c1: 4,
            c2: 4,
            b: 2,
            repeats: 5,
            runtime_ns: ns,
            flops_est: 100,
            rel_err_vs_vanilla: rel,
            seed: 3,
        }
    }

    #[test]
    fn empty_csv_is_header_only() {
        assert_eq!(emit_csv(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn csv_round_trips_exactly() {
        let records = vec![
            record(BenchMode::Vanilla, 64, 1234, None),
            record(BenchMode::Elfatt, 64, 345, Some(0.125)),
            record(BenchMode::Elfatt, 128, 700, Some(2.5e-3)),
        ];
        let text = emit_csv(&records);
        let back = parse_csv(&text).unwrap();
        assert_eq!(back.len(), 3);
        // emit_csv sorts by (mode, m).
        assert_eq!(back[0].mode, BenchMode::Elfatt);
        assert_eq!(back[0].m, 64);
        assert_eq!(back[2].mode, BenchMode::Vanilla);
        for r in &back {
            let orig = records
                .iter()
                .find(|o| o.mode == r.mode && o.m == r.m)
                .unwrap();
            assert_eq!(r, orig);
        }
    }

    #[test]
    fn csv_rejects_malformed_rows() {
        assert!(parse_csv("bogus header\n").is_err());
        let bad = format!("{CSV_HEADER}\nelfatt,64,8,4,4,2,5,7,8\n");
        assert!(parse_csv(&bad).is_err());
    }

    #[test]
    fn single_point_plot_is_valid() {
        let svg = emit_scaling_plot(&[record(BenchMode::Elfatt, 64, 500, None)]).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("circle"));
        assert!(!svg.contains("polyline"));
    }

    #[test]
    fn two_mode_plot_has_two_polylines_and_legend() {
        let records = vec![
            record(BenchMode::Elfatt, 64, 500, None),
            record(BenchMode::Elfatt, 128, 900, None),
            record(BenchMode::Vanilla, 64, 2000, None),
            record(BenchMode::Vanilla, 128, 8000, None),
        ];
        let svg = emit_scaling_plot(&records).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">elfatt</text>"));
        assert!(svg.contains(">vanilla</text>"));
    }
}
