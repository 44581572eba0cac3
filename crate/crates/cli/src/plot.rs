//! Minimal hand-written SVG: probability on a log-scaled left axis, cost on a
//! linear right axis labelled in both USD and Gwei.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

pub struct Series {
    pub n: Vec<u64>,
    pub probability: Vec<f64>,
    /// USD; `None` where no cost is defined.
    pub cost_usd: Vec<Option<f64>>,
}

pub struct Plot<'a> {
    pub title: &'a str,
    pub series: Series,
    pub usd_per_eth: f64,
    /// Horizontal reference lines on the probability axis.
    pub guides: Vec<(f64, &'a str)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl Plot<'_> {
    pub fn render(&self) -> String {
        let s = &self.series;
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let (n_min, n_max) = match (s.n.first(), s.n.last()) {
            (Some(&a), Some(&b)) if b > a => (a as f64, b as f64),
            (Some(&a), _) => (a as f64 - 0.5, a as f64 + 0.5),
            _ => (0.0, 1.0),
        };
        let x = |n: f64| LEFT + (n - n_min) / (n_max - n_min) * pw;

        // decades covering every positive probability and guide line
        let positive = s
            .probability
            .iter()
            .copied()
            .chain(self.guides.iter().map(|g| g.0))
            .filter(|p| *p > 0.0);
        let lo = positive.fold(1.0f64, f64::min).log10().floor().min(-1.0);
        let hi = 0.0;
        let y_p = |p: f64| TOP + (hi - p.log10()) / (hi - lo) * ph;

        let cost_max = s.cost_usd.iter().flatten().copied().fold(0.0f64, f64::max);
        let cost_top = nice_ceiling(cost_max);
        let y_c = |c: f64| TOP + (1.0 - c / cost_top) * ph;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            W / 2.0,
            escape(self.title)
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );

        // x ticks
        for &n in &s.n {
            let px = x(n as f64);
            let _ = writeln!(
                svg,
                r#"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{n}</text>"#,
                TOP + ph,
                TOP + ph + 5.0,
                TOP + ph + 18.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">n</text>"#,
            LEFT + pw / 2.0,
            H - 20.0
        );

        // left axis: probability decades
        let mut d = lo as i32;
        while d <= hi as i32 {
            let py = y_p(10f64.powi(d));
            let _ = writeln!(
                svg,
                r##"<line x1="{LEFT}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">1e{d}</text>"##,
                LEFT + pw,
                LEFT - 6.0,
                py + 4.0
            );
            d += 1;
        }
        let _ = writeln!(
            svg,
            r#"<text transform="translate(20 {:.1}) rotate(-90)" text-anchor="middle">probability</text>"#,
            TOP + ph / 2.0
        );

        // right axis: cost, same scale in two units
        for i in 0..=4 {
            let usd = cost_top * i as f64 / 4.0;
            let gwei = usd / self.usd_per_eth * 1e9;
            let py = y_c(usd);
            let _ = writeln!(
                svg,
                r#"<line x1="{:.1}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="black"/><text x="{:.1}" y="{:.1}">{} USD / {:.3e} Gwei</text>"#,
                LEFT + pw,
                LEFT + pw + 5.0,
                LEFT + pw + 8.0,
                py + 4.0,
                trim(usd),
                gwei
            );
        }

        for (p, label) in &self.guides {
            if *p <= 0.0 {
                continue;
            }
            let py = y_p(*p);
            let _ = writeln!(
                svg,
                r##"<line x1="{LEFT}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#888" stroke-dasharray="6 4"/><text x="{:.1}" y="{:.1}" fill="#555">{}</text>"##,
                LEFT + pw,
                LEFT + 4.0,
                py - 4.0,
                escape(label)
            );
        }

        let prob_points: Vec<String> =
            s.n.iter()
                .zip(&s.probability)
                .filter(|(_, p)| **p > 0.0)
                .map(|(&n, &p)| format!("{:.1},{:.1}", x(n as f64), y_p(p)))
                .collect();
        let cost_points: Vec<String> =
            s.n.iter()
                .zip(&s.cost_usd)
                .filter_map(|(&n, c)| c.map(|c| format!("{:.1},{:.1}", x(n as f64), y_c(c))))
                .collect();
        let _ = writeln!(
            svg,
            r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
            prob_points.join(" ")
        );
        let _ = writeln!(
            svg,
            r##"<polyline points="{}" fill="none" stroke="#d62728" stroke-width="2" stroke-dasharray="3 3"/>"##,
            cost_points.join(" ")
        );
        let _ = writeln!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" fill="#1f77b4">probability</text><text x="{:.1}" y="{:.1}" fill="#d62728">cost</text>"##,
            LEFT + 10.0,
            H - 20.0,
            LEFT + 100.0,
            H - 20.0
        );
        svg.push_str("</svg>\n");
        svg
    }
}

/// Smallest 1/2/5 x 10^k not below `v` (1 for non-positive input).
fn nice_ceiling(v: f64) -> f64 {
    if v.is_nan() || v <= 0.0 {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|c| *c >= v)
        .unwrap_or(10.0 * mag)
}

fn trim(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}
