//! Tables and plots for evaluation reports. Output depends only on the
//! report contents, so identical reports give byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{ManipulationReport, ReconstructionReport};
use crate::error::Result;
use crate::track::Feature;

pub const RECON_TABLE: &str = "recon.tsv";
pub const MANIP_TABLE: &str = "manip.tsv";
pub const DISENTANGLE_TABLE: &str = "disentangle.tsv";
pub const RECON_PLOT: &str = "recon.svg";
pub const MANIP_PLOT: &str = "manip.svg";

fn num(v: f64) -> String {
    format!("{v:.6e}")
}

pub fn recon_table(report: &ReconstructionReport) -> String {
    let mut out = String::from("system\tfeature\tmse\tci_low\tci_high\tn_utterances\tn_frames\tbootstrap\tseed\n");
    for s in &report.systems {
        let rows = Feature::ALL
            .into_iter()
            .map(|f| (f.name(), s.feature(f)))
            .chain(std::iter::once(("overall", &s.overall)));
        for (name, iv) in rows {
            let _ = writeln!(
                out,
                "{}\t{name}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.name,
                num(iv.mean),
                num(iv.low),
                num(iv.high),
                s.per_utterance.len(),
                s.n_frames,
                report.bootstrap,
                report.seed
            );
        }
    }
    out
}

pub fn manip_table(report: &ManipulationReport) -> String {
    let mut out = String::from(
        "feature\tm\toverall_incl\toverall_incl_std\toverall_excl\toverall_excl_std\tci_low\tci_high\tn_utterances\tn_frames\tseed\n",
    );
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{}\t{:.2}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.feature,
            c.m,
            num(c.overall_incl.mean),
            num(c.overall_incl.std),
            num(c.overall_excl.mean),
            num(c.overall_excl.std),
            num(c.overall_ci.low),
            num(c.overall_ci.high),
            c.n_utterances,
            c.n_frames,
            report.seed
        );
    }
    out
}

pub fn disentangle_table(report: &ManipulationReport) -> String {
    let mut out = String::from("manipulated\tm");
    for f in Feature::ALL {
        let _ = write!(out, "\t{f}");
    }
    out.push_str("\tn_utterances\tseed\n");
    for c in &report.cells {
        let _ = write!(out, "{}\t{:.2}", c.feature, c.m);
        for v in c.per_feature {
            let _ = write!(out, "\t{}", num(v));
        }
        let _ = writeln!(out, "\t{}\t{}", c.n_utterances, report.seed);
    }
    out
}

const PALETTE: [&str; 5] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e"];

/// Grouped bars: one group per feature in track column order, one bar per
/// system, with bootstrap interval whiskers.
pub fn recon_plot(report: &ReconstructionReport) -> String {
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let top = report
        .systems
        .iter()
        .flat_map(|s| s.features.iter().map(|i| i.high))
        .fold(1e-12f64, f64::max);
    let n_sys = report.systems.len().max(1) as f64;
    let group = (w - 2.0 * pad) / Feature::ALL.len() as f64;
    let bar = group * 0.8 / n_sys;
    let y = |v: f64| h - pad - (v / top) * (h - 2.0 * pad);
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    svg.push('\n');
    let _ = writeln!(svg, r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - pad, w - pad, h - pad);
    let _ = writeln!(svg, r#"<text x="{pad}" y="20">copy-synthesis error (z-normalized MSE), max {:.3}</text>"#, top);
    for (fi, f) in Feature::ALL.into_iter().enumerate() {
        let gx = pad + fi as f64 * group + group * 0.1;
        for (si, s) in report.systems.iter().enumerate() {
            let iv = s.feature(f);
            let x = gx + si as f64 * bar;
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                y(iv.mean),
                bar * 0.9,
                (h - pad - y(iv.mean)).max(0.0),
                PALETTE[si % PALETTE.len()]
            );
            let cx = x + bar * 0.45;
            let _ = writeln!(svg, r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#, y(iv.low), y(iv.high));
        }
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{}" text-anchor="middle">{f}</text>"#, gx + group * 0.4, h - pad + 16.0);
    }
    for (si, s) in report.systems.iter().enumerate() {
        let ly = 36.0 + 14.0 * si as f64;
        let _ = writeln!(svg, r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/>"#, w - 170.0, ly - 9.0, PALETTE[si % PALETTE.len()]);
        let _ = writeln!(svg, r#"<text x="{}" y="{ly}">{}</text>"#, w - 155.0, s.name);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Mean overall error against `m` per manipulated feature, with a ±1 std
/// band.
pub fn manip_plot(report: &ManipulationReport) -> String {
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let (m_lo, m_hi) = report
        .m_set
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &m| (a.min(m), b.max(m)));
    let span = (m_hi - m_lo).max(1e-9);
    let top = report
        .cells
        .iter()
        .map(|c| c.overall_incl.mean + c.overall_incl.std)
        .fold(1e-12f64, f64::max);
    let x = |m: f64| pad + (m - m_lo) / span * (w - 2.0 * pad);
    let y = |v: f64| h - pad - (v / top).clamp(0.0, 1.0) * (h - 2.0 * pad);
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    svg.push('\n');
    let _ = writeln!(svg, r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - pad, w - pad, h - pad);
    let _ = writeln!(svg, r#"<text x="{pad}" y="20">overall error vs scaling factor, max {:.3}</text>"#, top);
    for &m in &report.m_set {
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{}" text-anchor="middle">{m:.1}</text>"#, x(m), h - pad + 16.0);
    }
    for (fi, &f) in report.features.iter().enumerate() {
        let colour = PALETTE[f.index() % PALETTE.len()];
        let cells: Vec<_> = report.cells.iter().filter(|c| c.feature == f).collect();
        if cells.is_empty() {
            continue;
        }
        let upper: Vec<String> = cells
            .iter()
            .map(|c| format!("{:.2},{:.2}", x(c.m), y(c.overall_incl.mean + c.overall_incl.std)))
            .collect();
        let lower: Vec<String> = cells
            .iter()
            .rev()
            .map(|c| format!("{:.2},{:.2}", x(c.m), y((c.overall_incl.mean - c.overall_incl.std).max(0.0))))
            .collect();
        let _ = writeln!(svg, r#"<polygon points="{} {}" fill="{colour}" fill-opacity="0.2"/>"#, upper.join(" "), lower.join(" "));
        let line: Vec<String> = cells.iter().map(|c| format!("{:.2},{:.2}", x(c.m), y(c.overall_incl.mean))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, line.join(" "));
        let ly = 36.0 + 14.0 * fi as f64;
        let _ = writeln!(svg, r#"<rect x="{}" y="{}" width="10" height="10" fill="{colour}"/>"#, w - 120.0, ly - 9.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{ly}">{f}</text>"#, w - 105.0);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the three tables and, for non-empty reports, the plots. Returns
/// the paths written.
pub fn emit_report(dir: impl AsRef<Path>, recon: &ReconstructionReport, manip: &ManipulationReport) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put(RECON_TABLE, recon_table(recon))?;
    put(MANIP_TABLE, manip_table(manip))?;
    put(DISENTANGLE_TABLE, disentangle_table(manip))?;
    if !recon.systems.is_empty() {
        put(RECON_PLOT, recon_plot(recon))?;
    }
    if !manip.cells.is_empty() {
        put(MANIP_PLOT, manip_plot(manip))?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{summarize, UttErrors};

    fn recon() -> ReconstructionReport {
        let utts = |k: f64| {
            (0..3)
                .map(|u| UttErrors {
                    id: format!("u{u}"),
                    sq_sum: [1.0 * k, 2.0 * k, 3.0, 4.0, 5.0 + u as f64],
                    frames: 10,
                })
                .collect::<Vec<_>>()
        };
        ReconstructionReport {
            seed: 7,
            bootstrap: 50,
            edge: 2,
            utterances: vec!["u0".into(), "u1".into(), "u2".into()],
            excluded: vec![],
            systems: vec![summarize("wavebender", utts(2.0), 50, 7), summarize("vocoder_only", utts(1.0), 50, 7)],
        }
    }

    #[test]
    fn empty_manipulation_report_has_header_only_and_no_plot() {
        let dir = tempfile::tempdir().unwrap();
        let written = emit_report(dir.path(), &recon(), &ManipulationReport::empty(0)).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join(MANIP_TABLE)).unwrap().lines().count(), 1);
        assert!(!dir.path().join(MANIP_PLOT).exists());
        assert!(written.iter().any(|p| p.ends_with(RECON_PLOT)));
    }

    #[test]
    fn identical_reports_give_identical_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        emit_report(a.path(), &recon(), &ManipulationReport::empty(0)).unwrap();
        emit_report(b.path(), &recon(), &ManipulationReport::empty(0)).unwrap();
        for name in [RECON_TABLE, MANIP_TABLE, DISENTANGLE_TABLE, RECON_PLOT] {
            assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        }
    }

    #[test]
    fn bars_follow_track_column_order() {
        let svg = recon_plot(&recon());
        let labels: Vec<usize> = Feature::ALL.iter().map(|f| svg.find(&format!(">{f}</text>")).unwrap()).collect();
        assert!(labels.windows(2).all(|w| w[0] < w[1]));
        let table = recon_table(&recon());
        let order: Vec<&str> = table.lines().skip(1).take(6).map(|l| l.split('\t').nth(1).unwrap()).collect();
        assert_eq!(order, ["f1", "f2", "f0", "centroid", "slope", "overall"]);
    }
}
