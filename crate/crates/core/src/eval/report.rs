use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::unlearn::Variant;

use super::{Arm, SummaryRow, SweepRow};

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("pruner,sparsity,arm,runs,aggregate_mean,aggregate_std,fq_mean,utility_mean\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},\"{}\",{},{:.6},{:.6},{:.6},{:.6}",
            r.pruner.as_str(),
            r.sparsity,
            r.arm.label(),
            r.runs,
            r.aggregate_mean,
            r.aggregate_std,
            r.fq_mean,
            r.utility_mean
        );
    }
    out
}

const W: f64 = 800.0;
const H: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Aggregate score against sparsity, one polyline (with error bars) per arm.
/// Output depends only on the input rows.
pub fn sweep_svg(summary: &[SummaryRow], title: &str) -> String {
    let mut arms: Vec<Arm> = Vec::new();
    for r in summary {
        if !arms.contains(&r.arm) {
            arms.push(r.arm);
        }
    }
    let (mut xmin, mut xmax) = summary
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.sparsity), b.max(r.sparsity)));
    if !xmin.is_finite() {
        (xmin, xmax) = (0.0, 1.0);
    }
    if xmax - xmin < 1e-9 {
        xmax = xmin + 1.0;
    }
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - xmin) / (xmax - xmin) * pw;
    let py = |y: f64| TOP + (1.0 - y.clamp(0.0, 1.0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, escape(title));
    for i in 0..=5 {
        let y = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#ddd"/><text x="{2}" y="{3:.1}" text-anchor="end">{y:.1}</text>"##,
            py(y),
            LEFT + pw,
            LEFT - 6.0,
            py(y) + 4.0
        );
    }
    let mut ticks: Vec<f64> = summary.iter().map(|r| r.sparsity).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#,
            px(x),
            TOP + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">sparsity</text>"#, LEFT + pw / 2.0, H - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">aggregate (mean ± sd)</text>"#,
        TOP + ph / 2.0
    );

    for (i, arm) in arms.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut pts: Vec<&SummaryRow> = summary.iter().filter(|r| r.arm == *arm).collect();
        pts.sort_by(|a, b| a.sparsity.total_cmp(&b.sparsity));
        let path: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.1},{:.1}", px(r.sparsity), py(r.aggregate_mean)))
            .collect();
        let dash = if arm.variant == Variant::Baseline { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            path.join(" ")
        );
        for r in &pts {
            let (x, lo, hi) = (
                px(r.sparsity),
                py(r.aggregate_mean - r.aggregate_std),
                py(r.aggregate_mean + r.aggregate_std),
            );
            let _ = writeln!(
                s,
                r#"<line x1="{x:.1}" y1="{lo:.1}" x2="{x:.1}" y2="{hi:.1}" stroke="{color}"/><circle cx="{x:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                py(r.aggregate_mean)
            );
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            escape(&arm.label())
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Pruner;

    fn row(s: f64, variant: Variant, seed: u64, agg: f64) -> SweepRow {
        SweepRow {
            pruner: Pruner::Magnitude,
            sparsity: s,
            variant,
            topk: 1.0,
            alpha: 0.0,
            seed,
            fq: agg,
            utility: 1.0,
            aggregate: agg,
            forget_em: 1.0 - agg,
            retain_em: 1.0,
            epochs: 3,
            wall_ms: 0,
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row(0.0, Variant::Baseline, 1, 0.5), row(0.5, Variant::Sau, 2, 0.25)];
        let text = sweep_csv(&rows).unwrap();
        assert!(text.starts_with("pruner,sparsity,variant,topk,alpha,seed,fq,utility,aggregate,forget_em,retain_em,epochs,wall_ms\n"));
        assert!(text.contains("magnitude,0.5,sau,"));
        assert_eq!(read_sweep_csv(&text).unwrap(), rows);
    }

    #[test]
    fn svg_is_deterministic() {
        let table = crate::eval::SweepTable {
            rows: vec![row(0.0, Variant::Baseline, 1, 0.5), row(0.5, Variant::Baseline, 1, 0.3)],
            failures: vec![],
            manifests: vec![],
        };
        let a = sweep_svg(&table.summary(), "t");
        assert_eq!(a, sweep_svg(&table.summary(), "t"));
        assert!(a.contains("<polyline") && a.contains("baseline") && a.ends_with("</svg>\n"));
    }
}
