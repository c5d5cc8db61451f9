//! Minimal SVG line charts for sweep summaries.

use std::fmt::Write;

use crate::config::Protocol;
use crate::harness::SummaryRow;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;

fn colour(p: Protocol) -> &'static str {
    match p {
        Protocol::Dora => "#1b9e77",
        Protocol::Bmac => "#d95f02",
        Protocol::Csma154 => "#7570b3",
    }
}

fn label(p: Protocol) -> &'static str {
    match p {
        Protocol::Dora => "DoRa",
        Protocol::Bmac => "B-MAC",
        Protocol::Csma154 => "IEEE 802.15.4",
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn frac(&self, v: f64) -> f64 {
        let (v, lo, hi) = if self.log { (v.log10(), self.lo.log10(), self.hi.log10()) } else { (v, self.lo, self.hi) };
        if hi == lo {
            0.5
        } else {
            (v - lo) / (hi - lo)
        }
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let a = self.lo.log10().floor() as i32;
            let b = self.hi.log10().ceil() as i32;
            (a..=b).map(|e| 10f64.powi(e)).collect()
        } else {
            (0..=5).map(|k| self.lo + (self.hi - self.lo) * k as f64 / 5.0).collect()
        }
    }
}

fn render(summary: &[SummaryRow], title: &str, y_label: &str, y: Axis, value: impl Fn(&SummaryRow) -> f64) -> String {
    let xs: Vec<f64> = summary.iter().map(|s| s.t_ipa_s).collect();
    let x = Axis {
        lo: xs.iter().cloned().fold(f64::INFINITY, f64::min),
        hi: xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        log: false,
    };
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |v: f64| LEFT + x.frac(v) * pw;
    let py = |v: f64| TOP + (1.0 - y.frac(v)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{title}</text>"#, LEFT + pw / 2.0);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in y.ticks() {
        if t < y.lo * 0.999 || t > y.hi * 1.001 {
            continue;
        }
        let yy = py(t);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.1}" x2="{}" y2="{yy:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            yy + 4.0,
            fmt_tick(t)
        );
    }
    let mut xt: Vec<f64> = xs.clone();
    xt.sort_by(f64::total_cmp);
    xt.dedup();
    for t in xt {
        let xx = px(t);
        let _ = writeln!(
            s,
            r#"<text x="{xx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            TOP + ph + 18.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">Inter packet arrival time (s)</text>"#,
        LEFT + pw / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{y_label}</text>"#,
        TOP + ph / 2.0
    );

    let mut legend_y = TOP + 10.0;
    for p in Protocol::ALL {
        let mut pts: Vec<(f64, f64)> =
            summary.iter().filter(|r| r.protocol == p).map(|r| (r.t_ipa_s, value(r))).collect();
        if pts.is_empty() {
            continue;
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = pts.iter().map(|(a, b)| format!("{:.2},{:.2}", px(*a), py(*b))).collect();
        let c = colour(p);
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#, path.join(" "));
        for (a, b) in &pts {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, px(*a), py(*b));
        }
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{legend_y}" x2="{}" y2="{legend_y}" stroke="{c}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            legend_y + 4.0,
            label(p)
        );
        legend_y += 18.0;
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.0e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

/// Mean node power against t_ipa, log-scaled (the protocols differ by
/// orders of magnitude).
pub fn power_chart(summary: &[SummaryRow]) -> String {
    let vals: Vec<f64> = summary.iter().map(|s| s.mean_power_w * 1e3).filter(|v| *v > 0.0).collect();
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() {
        (10f64.powf(lo.log10().floor()), 10f64.powf(hi.log10().ceil()))
    } else {
        (1e-3, 1.0)
    };
    render(summary, "Mean power consumption", "Mean power (mW)", Axis { lo, hi, log: true }, |r| r.mean_power_w * 1e3)
}

pub fn pdr_chart(summary: &[SummaryRow]) -> String {
    let lo = summary.iter().map(|s| s.pdr).fold(1.0, f64::min);
    let lo = ((lo - 0.05) * 20.0).floor() / 20.0;
    render(summary, "Packet delivery ratio", "PDR", Axis { lo: lo.max(0.0), hi: 1.0, log: false }, |r| r.pdr)
}
