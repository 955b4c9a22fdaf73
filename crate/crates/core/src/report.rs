//! Run artifacts: loss-curve CSV, config snapshot, metrics table, and an SVG
//! loss plot. Exports are pure functions of the record, so re-exporting is
//! byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::train::RunRecord;

/// Writes `loss_curve.csv`, `config.toml`, `loss_curve.svg`, and (when the
/// record carries metrics) `metrics.txt` into `out_dir`. Returns the paths.
pub fn export_report(record: &RunRecord, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if record.epochs.is_empty() {
        return Err(Error::Validation("cannot export an empty run record".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot write to {}: {e}", out_dir.display()),
        ))
    })?;
    let mut written = Vec::new();

    let csv_path = out_dir.join("loss_curve.csv");
    std::fs::write(&csv_path, loss_csv(record))?;
    written.push(csv_path);

    let config_path = out_dir.join("config.toml");
    std::fs::write(&config_path, &record.config_snapshot)?;
    written.push(config_path);

    let svg_path = out_dir.join("loss_curve.svg");
    std::fs::write(&svg_path, loss_svg(record))?;
    written.push(svg_path);

    if let Some(metrics) = &record.final_metrics {
        let metrics_path = out_dir.join("metrics.txt");
        std::fs::write(&metrics_path, metrics)?;
        written.push(metrics_path);
    }
    Ok(written)
}

/// One data row per epoch; floats printed with shortest-roundtrip formatting
/// so differing runs always produce differing bytes.
pub fn loss_csv(record: &RunRecord) -> String {
    let mut out = String::from("epoch,lr,point_loss,edge_loss,total_loss\n");
    for e in &record.epochs {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            e.epoch, e.lr, e.point_loss, e.edge_loss, e.total_loss
        );
    }
    out
}

/// Minimal standalone SVG: one polyline per loss series plus axis labels.
pub fn loss_svg(record: &RunRecord) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const ML: f64 = 50.0;
    const MR: f64 = 20.0;
    const MT: f64 = 20.0;
    const MB: f64 = 40.0;

    let series: [(&str, &str, Box<dyn Fn(&crate::train::EpochRecord) -> f64>); 3] = [
        ("point", "#d62728", Box::new(|e| e.point_loss)),
        ("edge", "#1f77b4", Box::new(|e| e.edge_loss)),
        ("total", "#2ca02c", Box::new(|e| e.total_loss)),
    ];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, _, f) in &series {
        for e in &record.epochs {
            lo = lo.min(f(e));
            hi = hi.max(f(e));
        }
    }
    if !(hi > lo) {
        hi = lo + 1.0;
    }
    let n = record.epochs.len();
    let x_of = |i: usize| {
        if n == 1 {
            ML + (W - ML - MR) / 2.0
        } else {
            ML + (W - ML - MR) * i as f64 / (n - 1) as f64
        }
    };
    let y_of = |v: f64| MT + (H - MT - MB) * (1.0 - (v - lo) / (hi - lo));

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(out, "  <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "  <line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        H - MB,
        W - MR,
        H - MB
    );
    let _ = writeln!(
        out,
        "  <line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>",
        H - MB
    );
    for (idx, (name, color, f)) in series.iter().enumerate() {
        let mut points = String::new();
        for (i, e) in record.epochs.iter().enumerate() {
            let _ = write!(points, "{:.2},{:.2} ", x_of(i), y_of(f(e)));
        }
        let _ = writeln!(
            out,
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.trim_end()
        );
        let _ = writeln!(
            out,
            "  <text x=\"{}\" y=\"{}\" fill=\"{color}\" font-size=\"12\">{name}</text>",
            W - MR - 60.0,
            MT + 14.0 * (idx + 1) as f64
        );
    }
    let _ = writeln!(
        out,
        "  <text x=\"{}\" y=\"{}\" font-size=\"12\">epoch</text>",
        (W - ML - MR) / 2.0 + ML - 18.0,
        H - 10.0
    );
    let _ = writeln!(
        out,
        "  <text x=\"8\" y=\"{}\" font-size=\"12\">loss</text>",
        (H - MT - MB) / 2.0 + MT
    );
    let _ = writeln!(out, "</svg>");
    out
}
