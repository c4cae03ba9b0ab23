//! Power report artifacts: cells as CSV and JSON, plus SVG line charts of
//! each measure against the valid fraction p and against the number of valid
//! studies I*p, one line per I.

use std::path::Path;

use crate::error::{CbmaError, Result};

use super::{Measure, PowerCell, PowerReport};

const MEASURE_NAMES: [&str; 4] = ["p_any_detected", "p_all_detected", "mean_detected", "mean_tpr"];

pub fn write_report_csv(path: &Path, report: &PowerReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["I".to_string(), "p".to_string(), "B".to_string()];
    for name in MEASURE_NAMES {
        header.push(name.to_string());
        header.push(format!("{name}_se"));
    }
    w.write_record(&header)?;
    for cell in &report.cells {
        let mut row = vec![
            cell.n_studies.to_string(),
            format!("{}", cell.valid_fraction),
            cell.n_replicates.to_string(),
        ];
        for m in &cell.measures {
            row.push(format!("{}", m.mean));
            row.push(format!("{}", m.se));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reload the cell grid from CSV (the chart/provenance fields live in the
/// JSON artifact).
pub fn load_report_csv(path: &Path) -> Result<Vec<PowerCell>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut cells = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CbmaError::Parse {
            line: i + 2,
            msg: e.to_string(),
        })?;
        let get = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CbmaError::Parse {
                    line: i + 2,
                    msg: format!("bad field {k}"),
                })
        };
        let mut measures = Vec::new();
        for m in 0..4 {
            measures.push(Measure {
                mean: get(3 + 2 * m)?,
                se: get(4 + 2 * m)?,
            });
        }
        cells.push(PowerCell {
            n_studies: get(0)? as usize,
            valid_fraction: get(1)?,
            n_replicates: get(2)? as usize,
            measures: [measures[0], measures[1], measures[2], measures[3]],
            runtime_secs: 0.0,
        });
    }
    Ok(cells)
}

pub fn write_report_json(path: &Path, report: &PowerReport) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(report)?)?;
    Ok(())
}

struct Chart {
    svg: String,
    width: f64,
    height: f64,
    margin: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Chart {
    fn new(title: &str, x_label: &str, x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        let (width, height, margin) = (480.0, 320.0, 48.0);
        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
             viewBox=\"0 0 {width} {height}\">\n\
             <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{x_label}</text>\n",
            width / 2.0,
            width / 2.0,
            height - 8.0
        ));
        svg.push_str(&format!(
            "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
             <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
            m = margin,
            b = height - margin,
            r = width - margin,
            t = margin
        ));
        Self {
            svg,
            width,
            height,
            margin,
            x_range,
            y_range,
        }
    }

    fn to_px(&self, x: f64, y: f64) -> (f64, f64) {
        let xs = if self.x_range.1 > self.x_range.0 {
            (x - self.x_range.0) / (self.x_range.1 - self.x_range.0)
        } else {
            0.5
        };
        let ys = if self.y_range.1 > self.y_range.0 {
            (y - self.y_range.0) / (self.y_range.1 - self.y_range.0)
        } else {
            0.5
        };
        (
            self.margin + xs * (self.width - 2.0 * self.margin),
            self.height - self.margin - ys * (self.height - 2.0 * self.margin),
        )
    }

    fn polyline(&mut self, points: &[(f64, f64)], color: &str, label: &str, slot: usize) {
        if points.is_empty() {
            return;
        }
        let px: Vec<String> = points
            .iter()
            .map(|&(x, y)| {
                let (a, b) = self.to_px(x, y);
                format!("{a:.1},{b:.1}")
            })
            .collect();
        if points.len() == 1 {
            let (a, b) = self.to_px(points[0].0, points[0].1);
            self.svg
                .push_str(&format!("<circle cx=\"{a:.1}\" cy=\"{b:.1}\" r=\"3\" fill=\"{color}\"/>\n"));
        } else {
            self.svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                px.join(" ")
            ));
        }
        self.svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{label}</text>\n",
            self.width - self.margin + 4.0,
            self.margin + 14.0 * slot as f64
        ));
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn chart_for_measure(report: &PowerReport, measure_idx: usize, vs_valid_count: bool) -> String {
    let mut i_values: Vec<usize> = report.cells.iter().map(|c| c.n_studies).collect();
    i_values.sort_unstable();
    i_values.dedup();

    let x_of = |c: &PowerCell| {
        if vs_valid_count {
            c.n_studies as f64 * c.valid_fraction
        } else {
            c.valid_fraction
        }
    };
    let x_max = report.cells.iter().map(&x_of).fold(0.0f64, f64::max).max(1.0);
    let y_max = if measure_idx == 2 {
        report.n_centers as f64
    } else {
        1.0
    };
    let x_label = if vs_valid_count { "I*p (valid studies)" } else { "p (valid fraction)" };
    let mut chart = Chart::new(MEASURE_NAMES[measure_idx], x_label, (0.0, x_max), (0.0, y_max));
    for (slot, &i_val) in i_values.iter().enumerate() {
        let mut pts: Vec<(f64, f64)> = report
            .cells
            .iter()
            .filter(|c| c.n_studies == i_val)
            .map(|c| (x_of(c), c.measures[measure_idx].mean))
            .collect();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        chart.polyline(
            &pts,
            COLORS[slot % COLORS.len()],
            &format!("I={i_val}"),
            slot,
        );
    }
    chart.finish()
}

/// Write report.csv, report.json and the eight SVG charts into `dir`, plus
/// wall-clock timings as a separate file so the primary artifacts stay
/// byte-identical across reruns.
pub fn emit_report(dir: &Path, report: &PowerReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_report_csv(&dir.join("report.csv"), report)?;
    write_report_json(&dir.join("report.json"), report)?;
    {
        let mut w = csv::Writer::from_path(dir.join("timings.csv"))?;
        w.write_record(["I", "p", "runtime_secs"])?;
        for cell in &report.cells {
            w.write_record([
                cell.n_studies.to_string(),
                format!("{}", cell.valid_fraction),
                format!("{}", cell.runtime_secs),
            ])?;
        }
        w.flush()?;
    }
    for m in 0..4 {
        std::fs::write(
            dir.join(format!("{}_vs_p.svg", MEASURE_NAMES[m])),
            chart_for_measure(report, m, false),
        )?;
        std::fs::write(
            dir.join(format!("{}_vs_ip.svg", MEASURE_NAMES[m])),
            chart_for_measure(report, m, true),
        )?;
    }
    Ok(())
}
