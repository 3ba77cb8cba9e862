//! Table rendering and plot-data export.
//!
//! Forgetting tables shade positive cells red and negative cells green,
//! transfer tables the other way around, darker in proportion to the
//! magnitude; the intensity law is floor(4 * |value|) on the scaled values.
//! Rendered tables show one decimal; full precision lives in the CSV form.

use std::fmt::Write as _;

use crate::metrics::{AlignedCurve, CellStat, MetricKind, MetricTable};
use crate::schedule::Schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hue {
    Red,
    Green,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellShade {
    pub hue: Hue,
    pub intensity: u32,
}

/// Shade for an already-scaled cell value.
pub fn shade(kind: MetricKind, value: f64) -> CellShade {
    let intensity = (4.0 * value.abs()).floor() as u32;
    if intensity == 0 {
        return CellShade { hue: Hue::Neutral, intensity: 0 };
    }
    let hue = match (kind, value > 0.0) {
        (MetricKind::Forgetting, true) | (MetricKind::Transfer, false) => Hue::Red,
        _ => Hue::Green,
    };
    CellShade { hue, intensity }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
    Ansi,
}

impl TableFormat {
    pub fn from_name(name: &str) -> Option<TableFormat> {
        match name {
            "markdown" => Some(TableFormat::Markdown),
            "csv" => Some(TableFormat::Csv),
            "ansi" => Some(TableFormat::Ansi),
            _ => None,
        }
    }
}

/// One decimal, rounding halves away from zero; `-0.0` renders as such,
/// matching the table convention elsewhere.
fn fixed1(v: f64) -> String {
    format!("{:.1}", (v * 10.0).round() / 10.0)
}

fn cell_text(stat: Option<&CellStat>) -> String {
    match stat {
        None => "--".to_string(),
        Some(s) => format!("{} ± {}", fixed1(s.mean), fixed1(s.sem)),
    }
}

fn ansi_cell(kind: MetricKind, stat: Option<&CellStat>) -> String {
    let text = cell_text(stat);
    match stat {
        None => text,
        Some(s) => {
            let sh = shade(kind, s.mean);
            let code = match sh.hue {
                Hue::Neutral => return text,
                Hue::Red => 31,
                Hue::Green => 32,
            };
            // Darker shades render bold.
            if sh.intensity >= 8 {
                format!("\x1b[1;{code}m{text}\x1b[0m")
            } else {
                format!("\x1b[{code}m{text}\x1b[0m")
            }
        }
    }
}

/// Columns that can hold content: training the first task cannot affect an
/// earlier one (forgetting) and the last task has no later task to lift
/// (transfer); the structurally empty column is dropped.
fn visible_cols(kind: MetricKind, n: usize) -> Vec<usize> {
    match kind {
        MetricKind::Forgetting => (1..n).collect(),
        MetricKind::Transfer => (0..n.saturating_sub(1)).collect(),
    }
}

/// Render a diagnostic table with `Avg ± SEM` margins.
pub fn render_table(table: &MetricTable, format: TableFormat) -> String {
    match format {
        TableFormat::Csv => render_csv(table),
        TableFormat::Markdown => render_rows(table, false),
        TableFormat::Ansi => render_rows(table, true),
    }
}

fn render_rows(table: &MetricTable, ansi: bool) -> String {
    let n = table.task_names.len();
    let cols = visible_cols(table.kind, n);
    let mut out = String::new();
    let cell = |stat: Option<&CellStat>| {
        if ansi {
            ansi_cell(table.kind, stat)
        } else {
            cell_text(stat)
        }
    };
    let _ = write!(out, "| {} |", table.kind.as_str());
    for &j in &cols {
        let _ = write!(out, " {} |", table.task_names[j]);
    }
    let _ = writeln!(out, " Avg ± SEM |");
    let _ = write!(out, "|---|");
    for _ in &cols {
        let _ = write!(out, "---|");
    }
    let _ = writeln!(out, "---|");
    for i in 0..n {
        let _ = write!(out, "| {} |", table.task_names[i]);
        for &j in &cols {
            let _ = write!(out, " {} |", cell(table.cells[i][j].as_ref()));
        }
        let _ = writeln!(out, " {} |", cell(table.row_avg[i].as_ref()));
    }
    let _ = write!(out, "| Avg ± SEM |");
    for &j in &cols {
        let _ = write!(out, " {} |", cell(table.col_avg[j].as_ref()));
    }
    let _ = writeln!(out, " {} |", cell(table.overall.as_ref()));
    if table.single_seed {
        let _ = writeln!(out, "(single seed: standard errors degenerate to 0)");
    }
    out
}

fn g9(x: f64) -> String {
    crate::harness::format_g9(x)
}

fn render_csv(table: &MetricTable) -> String {
    let n = table.task_names.len();
    let mut out = String::new();
    let _ = writeln!(out, "kind,{}", table.kind.as_str());
    let _ = writeln!(out, "tasks,{}", table.task_names.join(";"));
    let _ = writeln!(out, "seeds,{}", table.seeds);
    for i in 0..n {
        for j in 0..n {
            if let Some(s) = &table.cells[i][j] {
                let sh = shade(table.kind, s.mean);
                let hue = match sh.hue {
                    Hue::Red => "red",
                    Hue::Green => "green",
                    Hue::Neutral => "neutral",
                };
                let _ = writeln!(
                    out,
                    "cell,{i},{j},{},{},{hue},{}",
                    g9(s.mean),
                    g9(s.sem),
                    sh.intensity
                );
                let raw = table.raw[i][j].iter().map(|&v| g9(v)).collect::<Vec<_>>().join(";");
                let _ = writeln!(out, "raw,{i},{j},{raw}");
            }
        }
    }
    for (i, stat) in table.row_avg.iter().enumerate() {
        if let Some(s) = stat {
            let _ = writeln!(out, "row_avg,{i},{},{}", g9(s.mean), g9(s.sem));
        }
    }
    for (j, stat) in table.col_avg.iter().enumerate() {
        if let Some(s) = stat {
            let _ = writeln!(out, "col_avg,{j},{},{}", g9(s.mean), g9(s.sem));
        }
    }
    if let Some(s) = &table.overall {
        let _ = writeln!(out, "overall,{},{}", g9(s.mean), g9(s.sem));
    }
    for &(i, j, s) in &table.undefined {
        let _ = writeln!(out, "undefined,{i},{j},{s}");
    }
    out
}

/// Parse the CSV form back into a table; numeric values survive at 9
/// significant digits.
pub fn parse_table_csv(text: &str) -> Result<MetricTable, String> {
    let mut kind = None;
    let mut names: Vec<String> = Vec::new();
    let mut seeds = 0usize;
    let mut cells: Vec<Vec<Option<CellStat>>> = Vec::new();
    let mut raw: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut row_avg: Vec<Option<CellStat>> = Vec::new();
    let mut col_avg: Vec<Option<CellStat>> = Vec::new();
    let mut overall = None;
    let mut undefined = Vec::new();
    let parse_f = |v: &str| v.parse::<f64>().map_err(|_| format!("bad number `{v}`"));
    let parse_i = |v: &str| v.parse::<usize>().map_err(|_| format!("bad index `{v}`"));
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match fields[0] {
            "kind" => {
                kind = Some(match fields.get(1) {
                    Some(&"forgetting") => MetricKind::Forgetting,
                    Some(&"transfer") => MetricKind::Transfer,
                    other => return Err(format!("bad kind {other:?}")),
                })
            }
            "tasks" => {
                names = fields
                    .get(1)
                    .ok_or("missing task names")?
                    .split(';')
                    .map(str::to_string)
                    .collect();
                let n = names.len();
                cells = vec![vec![None; n]; n];
                raw = vec![vec![Vec::new(); n]; n];
                row_avg = vec![None; n];
                col_avg = vec![None; n];
            }
            "seeds" => seeds = parse_i(fields.get(1).ok_or("missing seeds")?)?,
            "cell" => {
                let (i, j) = (parse_i(fields[1])?, parse_i(fields[2])?);
                cells[i][j] = Some(CellStat { mean: parse_f(fields[3])?, sem: parse_f(fields[4])? });
            }
            "raw" => {
                let (i, j) = (parse_i(fields[1])?, parse_i(fields[2])?);
                raw[i][j] = fields[3]
                    .split(';')
                    .map(parse_f)
                    .collect::<Result<Vec<f64>, String>>()?;
            }
            "row_avg" => {
                let i = parse_i(fields[1])?;
                row_avg[i] = Some(CellStat { mean: parse_f(fields[2])?, sem: parse_f(fields[3])? });
            }
            "col_avg" => {
                let j = parse_i(fields[1])?;
                col_avg[j] = Some(CellStat { mean: parse_f(fields[2])?, sem: parse_f(fields[3])? });
            }
            "overall" => {
                overall = Some(CellStat { mean: parse_f(fields[1])?, sem: parse_f(fields[2])? })
            }
            "undefined" => {
                undefined.push((parse_i(fields[1])?, parse_i(fields[2])?, parse_i(fields[3])?))
            }
            other => return Err(format!("unknown csv row `{other}`")),
        }
    }
    Ok(MetricTable {
        kind: kind.ok_or("missing kind")?,
        task_names: names,
        cells,
        raw,
        row_avg,
        col_avg,
        overall,
        seeds,
        single_seed: seeds == 1,
        undefined,
    })
}

/// Plot-ready CSV: a timestep column, then mean and stderr columns per
/// labeled series, followed by one segment-boundary annotation row per
/// schedule segment (for the shaded training-interval rectangles).
pub fn export_plotdata(series: &[(String, AlignedCurve)], schedule: Option<&Schedule>) -> String {
    assert!(!series.is_empty());
    let grid = &series[0].1.grid;
    assert!(
        series.iter().all(|(_, c)| c.grid == *grid),
        "plot data requires curves aligned to a common grid"
    );
    let mut out = String::new();
    let _ = write!(out, "timestep");
    for (label, _) in series {
        let _ = write!(out, ",{label}_mean,{label}_sem");
    }
    let _ = writeln!(out);
    for (k, &t) in grid.iter().enumerate() {
        let _ = write!(out, "{t}");
        for (_, curve) in series {
            let _ = write!(out, ",{},{}", g9(curve.mean[k]), g9(curve.stderr[k]));
        }
        let _ = writeln!(out);
    }
    if let Some(schedule) = schedule {
        for seg in &schedule.segments {
            let _ = writeln!(out, "boundary,{},{},{}", seg.start, seg.end, seg.task_id);
        }
    }
    out
}

/// Final-performance cell, two decimals on both sides.
pub fn format_final_perf(mean: f64, sem: f64) -> String {
    format!("{mean:.2} ± {sem:.2}")
}
