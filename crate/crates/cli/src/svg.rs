//! Static SVG plots built from trace data. Output carries no timestamps, so
//! identical inputs give identical files.

use std::fmt::Write;

use ibn_core::closed_loop::LoopOutcome;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 80.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 50.0;

const TX_COLOR: &str = "#1f77b4";
const EE_COLOR: &str = "#d62728";
const SUCCESS_COLOR: &str = "#4c9a2a";
const FAIL_COLOR: &str = "#c0392b";

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Padded `[lo, hi]` so flat series still get a visible range.
fn span(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.1).max(hi.abs() * 1e-4).max(1.0);
    (lo - pad, hi + pad)
}

fn scale(v: f64, (lo, hi): (f64, f64), px_lo: f64, px_hi: f64) -> f64 {
    px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo)
}

fn series(out: &mut String, points: &[(f64, f64)], color: &str, dashed: bool) {
    let path: Vec<String> = points.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
    let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
        path.join(" ")
    );
    for (x, y) in points {
        let _ = writeln!(out, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3.5" fill="{color}"/>"#);
    }
}

fn y_ticks(out: &mut String, range: (f64, f64), x: f64, anchor: &str, dx: f64, color: &str, fmt: impl Fn(f64) -> String) {
    for i in 0..=4 {
        let v = range.0 + (range.1 - range.0) * f64::from(i) / 4.0;
        let y = scale(v, range, H - BOTTOM, TOP);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="{anchor}" fill="{color}">{}</text>"#,
            x + dx,
            y + 4.0,
            fmt(v)
        );
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#eeeeee"/>"##,
            W - RIGHT
        );
    }
}

/// txPower on the left axis and EE on the right, both against iteration.
pub fn trajectory(outcome: &LoopOutcome) -> String {
    let tx: Vec<f64> = std::iter::once(outcome.baseline.tx_power_dbm)
        .chain(outcome.iterations.iter().map(|r| r.tx_power_after))
        .collect();
    let ee: Vec<f64> = std::iter::once(outcome.baseline.ee_bits_per_joule)
        .chain(outcome.iterations.iter().map(|r| r.ee_after))
        .collect();
    let n = tx.len();
    let x_of = |i: usize| {
        if n == 1 {
            (LEFT + W - RIGHT) / 2.0
        } else {
            LEFT + i as f64 / (n - 1) as f64 * (W - LEFT - RIGHT)
        }
    };
    let tx_range = span(&tx);
    let ee_range = span(&ee);

    let mut out = String::new();
    open(&mut out, "TxPower and PEE.EnergyEfficiency per iteration");
    y_ticks(&mut out, tx_range, LEFT, "end", -8.0, TX_COLOR, |v| format!("{v:.1}"));
    y_ticks(&mut out, ee_range, W - RIGHT, "start", 8.0, EE_COLOR, |v| format!("{:.1}k", v / 1000.0));
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    for i in 0..n {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{i}</text>"#,
            x_of(i),
            H - BOTTOM + 18.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">Iteration</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(18 {}) rotate(-90)" text-anchor="middle" fill="{TX_COLOR}">TxPower (dBm)</text>"#,
        H / 2.0
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate({} {}) rotate(90)" text-anchor="middle" fill="{EE_COLOR}">PEE.EnergyEfficiency (bit/J)</text>"#,
        W - 14.0,
        H / 2.0
    );

    let tx_pts: Vec<(f64, f64)> = tx
        .iter()
        .enumerate()
        .map(|(i, v)| (x_of(i), scale(*v, tx_range, H - BOTTOM, TOP)))
        .collect();
    let ee_pts: Vec<(f64, f64)> = ee
        .iter()
        .enumerate()
        .map(|(i, v)| (x_of(i), scale(*v, ee_range, H - BOTTOM, TOP)))
        .collect();
    let _ = writeln!(out, r#"<g id="txPower">"#);
    series(&mut out, &tx_pts, TX_COLOR, false);
    let _ = writeln!(out, "</g>");
    let _ = writeln!(out, r#"<g id="energyEfficiency">"#);
    series(&mut out, &ee_pts, EE_COLOR, true);
    let _ = writeln!(out, "</g>");

    legend(&mut out, &[("TxPower", TX_COLOR), ("PEE.EnergyEfficiency", EE_COLOR)]);
    out.push_str("</svg>\n");
    out
}

fn legend(out: &mut String, entries: &[(&str, &str)]) {
    let mut x = LEFT;
    for (label, color) in entries {
        let _ = writeln!(out, r#"<rect x="{x}" y="30" width="14" height="10" fill="{color}"/>"#);
        let _ = writeln!(out, r#"<text x="{}" y="39">{}</text>"#, x + 18.0, escape(label));
        x += 30.0 + label.len() as f64 * 7.0;
    }
}

/// One bar of the precision chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub label: String,
    pub value: u32,
    pub success: bool,
}

/// Iterations per attempt, colored by success.
pub fn attempts(bars: &[Bar]) -> String {
    let max = bars.iter().map(|b| b.value).max().unwrap_or(0).max(1);
    let range = (0.0, f64::from(max));
    let slot = (W - LEFT - RIGHT) / bars.len().max(1) as f64;
    let mut out = String::new();
    open(&mut out, "Closed-loop precision per attempt");
    for v in 0..=max {
        let y = scale(f64::from(v), range, H - BOTTOM, TOP);
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#eeeeee"/>"##,
            W - RIGHT
        );
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{v}</text>"#, LEFT - 8.0, y + 4.0);
    }
    for (i, b) in bars.iter().enumerate() {
        let x = LEFT + slot * i as f64 + slot * 0.2;
        let y = scale(f64::from(b.value), range, H - BOTTOM, TOP);
        let color = if b.success { SUCCESS_COLOR } else { FAIL_COLOR };
        let _ = writeln!(
            out,
            r#"<rect class="{}" x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{color}"/>"#,
            if b.success { "success" } else { "fail" },
            slot * 0.6,
            H - BOTTOM - y
        );
        let cx = x + slot * 0.3;
        let _ = writeln!(out, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, y - 5.0, b.value);
        let _ = writeln!(
            out,
            r#"<text x="{cx:.1}" y="{}" text-anchor="middle">{}</text>"#,
            H - BOTTOM + 18.0,
            escape(&b.label)
        );
    }
    let _ = writeln!(
        out,
        r#"<line x1="{LEFT}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        H - BOTTOM,
        W - RIGHT,
        H - BOTTOM
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle"># of Attempt</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(22 {}) rotate(-90)" text-anchor="middle"># of Iteration</text>"#,
        H / 2.0
    );
    legend(&mut out, &[("Success", SUCCESS_COLOR), ("Fail", FAIL_COLOR)]);
    out.push_str("</svg>\n");
    out
}

/// "1st", "2nd", ...
pub fn ordinal(n: usize) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ibn_core::closed_loop::{IterationRecord, LoopStatus};
    use ibn_core::history::KpiPoint;
    use ibn_core::prompt::Verdict;

    fn outcome() -> LoopOutcome {
        LoopOutcome {
            intent_id: "i".into(),
            status: LoopStatus::Fulfilled,
            reason: String::new(),
            baseline: KpiPoint {
                tx_power_dbm: 30.0,
                ee_bits_per_joule: 765_493.0,
            },
            iterations: vec![IterationRecord {
                index: 1,
                tx_power_before: 30.0,
                tx_power_after: 20.0,
                ee_before: 765_493.0,
                ee_after: 799_756.0,
                verdict: Verdict::Continue,
                error: None,
            }],
            edits_issued: 1,
            monitoring_windows: 0,
        }
    }

    #[test]
    fn trajectory_has_two_series() {
        let svg = trajectory(&outcome());
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 4);
        assert_eq!(svg, trajectory(&outcome()));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn bars_are_colored_by_result() {
        let bars = [
            Bar {
                label: ordinal(1),
                value: 3,
                success: true,
            },
            Bar {
                label: ordinal(2),
                value: 7,
                success: false,
            },
        ];
        let svg = attempts(&bars);
        assert_eq!(svg.matches(r#"class="success""#).count(), 1);
        assert_eq!(svg.matches(r#"class="fail""#).count(), 1);
    }

    #[test]
    fn ordinals() {
        let got: Vec<String> = [1, 2, 3, 4, 11, 12, 13, 21, 22].into_iter().map(ordinal).collect();
        assert_eq!(got, ["1st", "2nd", "3rd", "4th", "11th", "12th", "13th", "21st", "22nd"]);
    }
}
