//! Turns a long-format results table into per-metric summary tables and,
//! optionally, line charts. Output is a pure function of the input file:
//! re-running over the same table writes byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use crate::connectivity::FcMethod;
use crate::error::{Error, Result};
use crate::harness::run::{sha256_file, ResultRow};
use crate::metrics::paired_group_compare;

const REQUIRED_COLUMNS: [&str; 7] =
    ["sweep_parameter", "sweep_value", "group", "subject", "method", "metric", "value"];

/// Significance markers against the conventional 0.05 / 0.01 / 0.001 levels.
fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Per-group values for one (metric, sweep value, method) cell. Group-level
/// rows contribute one value per group; per-subject rows average within the
/// group first, so both kinds end up on the same group axis.
fn group_means(rows: &[&ResultRow]) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for row in rows {
        let e = acc.entry(row.group).or_insert((0.0, 0));
        e.0 += row.value;
        e.1 += 1;
    }
    acc.into_iter().map(|(g, (sum, n))| (g, sum / n as f64)).collect()
}

/// One line of a per-metric summary table.
struct TableRow {
    sweep_value: String,
    method: String,
    mean: f64,
    sd: f64,
    n_groups: usize,
    significance: String,
}

fn first_appearance_order<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for item in items {
        if !out.iter().any(|o| o == item) {
            out.push(item.to_string());
        }
    }
    out
}

/// Reads `results_csv`, writes one `fig_<metric>.csv` per metric into
/// `out_dir` (plus `fig_<metric>.svg` when `svg` is set) and returns
/// file-name to sha256 mappings. Each table row carries the across-group
/// mean, population standard deviation, group count, and a significance
/// marker from a two-sided signed-rank test against the random-convolution
/// method paired by group (blank for that method itself, for fewer than six
/// shared groups, or when the comparator is absent).
pub fn report(results_csv: &Path, out_dir: &Path, svg: bool) -> Result<BTreeMap<String, String>> {
    let file = std::fs::File::open(results_csv).map_err(|e| Error::io(results_csv, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers().map_err(|e| Error::format(e.to_string()))?.clone();
    let missing: Vec<&str> = REQUIRED_COLUMNS
        .iter()
        .filter(|c| !headers.iter().any(|h| h == **c))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(Error::format(format!(
            "results table is missing column(s): {}",
            missing.join(", ")
        )));
    }
    let mut rows: Vec<ResultRow> = Vec::new();
    for record in reader.deserialize() {
        rows.push(record.map_err(|e| Error::format(e.to_string()))?);
    }
    if rows.is_empty() {
        return Err(Error::format("results table has no data rows"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let metrics = first_appearance_order(rows.iter().map(|r| r.metric.as_str()));
    let sweep_values = first_appearance_order(rows.iter().map(|r| r.sweep_value.as_str()));
    let parameter =
        first_appearance_order(rows.iter().map(|r| r.sweep_parameter.as_str())).join("/");
    // Known methods in canonical order, then anything else as it appeared.
    let present = first_appearance_order(rows.iter().map(|r| r.method.as_str()));
    let mut methods: Vec<String> = FcMethod::ALL
        .iter()
        .map(|m| m.as_str().to_string())
        .filter(|m| present.contains(m))
        .collect();
    let extra: Vec<String> = present.into_iter().filter(|m| !methods.contains(m)).collect();
    methods.extend(extra);

    let comparator = FcMethod::RandCon.as_str();
    let mut hashes = BTreeMap::new();
    for metric in &metrics {
        let mut table: Vec<TableRow> = Vec::new();
        for value in &sweep_values {
            let cell = |method: &str| -> Vec<&ResultRow> {
                rows.iter()
                    .filter(|r| {
                        r.metric == *metric && r.sweep_value == *value && r.method == method
                    })
                    .collect()
            };
            let baseline = group_means(&cell(comparator));
            for method in &methods {
                let per_group = group_means(&cell(method));
                if per_group.is_empty() {
                    continue;
                }
                let n = per_group.len();
                let mean = per_group.values().sum::<f64>() / n as f64;
                let var =
                    per_group.values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let significance = if method == comparator {
                    String::new()
                } else {
                    let pairs: Vec<(f64, f64)> = per_group
                        .iter()
                        .filter_map(|(g, &v)| baseline.get(g).map(|&b| (v, b)))
                        .filter(|(v, b)| v.is_finite() && b.is_finite())
                        .collect();
                    if pairs.len() < 6 {
                        String::new()
                    } else {
                        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
                        stars(paired_group_compare(&a, &b)?.p_value).to_string()
                    }
                };
                table.push(TableRow {
                    sweep_value: value.clone(),
                    method: method.clone(),
                    mean,
                    sd: var.sqrt(),
                    n_groups: n,
                    significance,
                });
            }
        }
        let safe = metric.replace('/', "-");
        let name = format!("fig_{safe}.csv");
        let path = out_dir.join(&name);
        write_table(&path, &table)?;
        hashes.insert(name, sha256_file(&path)?);
        if svg {
            let name = format!("fig_{safe}.svg");
            let path = out_dir.join(&name);
            let chart = render_chart(metric, &parameter, &sweep_values, &methods, &table);
            std::fs::write(&path, chart).map_err(|e| Error::io(&path, e))?;
            hashes.insert(name, sha256_file(&path)?);
        }
    }
    Ok(hashes)
}

fn write_table(path: &Path, table: &[TableRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    writer
        .write_record(["sweep_value", "method", "mean", "sd", "n_groups", "significance_vs_randcon"])
        .map_err(|e| Error::format(e.to_string()))?;
    for row in table {
        writer
            .write_record([
                row.sweep_value.as_str(),
                row.method.as_str(),
                &format!("{:.6}", row.mean),
                &format!("{:.6}", row.sd),
                &row.n_groups.to_string(),
                row.significance.as_str(),
            ])
            .map_err(|e| Error::format(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

const PALETTE: [(&str, &str); 4] = [
    ("randcon", "#1f77b4"),
    ("sliding-window", "#ff7f0e"),
    ("mtd", "#2ca02c"),
    ("phase-sync", "#d62728"),
];

fn color_for(method: &str) -> &'static str {
    PALETTE.iter().find(|(m, _)| *m == method).map(|(_, c)| *c).unwrap_or("#7f7f7f")
}

/// Hand-rolled SVG line chart: categorical x positions per sweep value, one
/// polyline per method with +-1 sd whiskers. All coordinates are written
/// with fixed precision so the output is reproducible byte for byte.
fn render_chart(
    metric: &str,
    parameter: &str,
    sweep_values: &[String],
    methods: &[String],
    table: &[TableRow],
) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const LEFT: f64 = 64.0;
    const RIGHT: f64 = 170.0;
    const TOP: f64 = 36.0;
    const BOTTOM: f64 = 56.0;
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;

    let lookup = |value: &str, method: &str| -> Option<&TableRow> {
        table.iter().find(|r| r.sweep_value == value && r.method == method)
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for row in table {
        lo = lo.min(row.mean - row.sd);
        hi = hi.max(row.mean + row.sd);
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;

    let x_of = |i: usize| LEFT + (i as f64 + 0.5) * plot_w / sweep_values.len() as f64;
    let y_of = |v: f64| TOP + (hi - v) / (hi - lo) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W:.0}\" height=\"{H:.0}\" viewBox=\"0 0 {W:.0} {H:.0}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.4}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{metric}</text>\n",
        LEFT + plot_w / 2.0
    ));

    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{LEFT:.4}\" y1=\"{:.4}\" x2=\"{:.4}\" y2=\"{:.4}\" stroke=\"black\"/>\n",
        TOP + plot_h,
        LEFT + plot_w,
        TOP + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{LEFT:.4}\" y1=\"{TOP:.4}\" x2=\"{LEFT:.4}\" y2=\"{:.4}\" stroke=\"black\"/>\n",
        TOP + plot_h
    ));
    for tick in 0..=4 {
        let v = lo + (hi - lo) * tick as f64 / 4.0;
        let y = y_of(v);
        svg.push_str(&format!(
            "<line x1=\"{:.4}\" y1=\"{y:.4}\" x2=\"{LEFT:.4}\" y2=\"{y:.4}\" stroke=\"black\"/>\n",
            LEFT - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.4}\" y=\"{:.4}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{v:.4}</text>\n",
            LEFT - 7.0,
            y + 3.0
        ));
    }
    for (i, value) in sweep_values.iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"{:.4}\" y=\"{:.4}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{value}</text>\n",
            x_of(i),
            TOP + plot_h + 16.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.4}\" y=\"{:.4}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{parameter}</text>\n",
        LEFT + plot_w / 2.0,
        TOP + plot_h + 38.0
    ));

    for method in methods {
        let color = color_for(method);
        let mut points = Vec::new();
        for (i, value) in sweep_values.iter().enumerate() {
            if let Some(row) = lookup(value, method) {
                let x = x_of(i);
                points.push(format!("{x:.4},{:.4}", y_of(row.mean)));
                svg.push_str(&format!(
                    "<line x1=\"{x:.4}\" y1=\"{:.4}\" x2=\"{x:.4}\" y2=\"{:.4}\" stroke=\"{color}\" stroke-width=\"1\" opacity=\"0.6\"/>\n",
                    y_of(row.mean - row.sd),
                    y_of(row.mean + row.sd)
                ));
            }
        }
        if !points.is_empty() {
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                points.join(" ")
            ));
        }
    }

    // Legend.
    let lx = LEFT + plot_w + 14.0;
    for (i, method) in methods.iter().enumerate() {
        let y = TOP + 12.0 + 18.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{lx:.4}\" y1=\"{y:.4}\" x2=\"{:.4}\" y2=\"{y:.4}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            lx + 18.0,
            color_for(method)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.4}\" y=\"{:.4}\" font-family=\"sans-serif\" font-size=\"11\">{method}</text>\n",
            lx + 24.0,
            y + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
