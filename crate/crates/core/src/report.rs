//! Result tables and learning-curve plots.
//!
//! Everything here is a pure function of the aggregates, so rerunning an experiment
//! with the same config reproduces the files byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::RunError;
use crate::runner::{write_file, RoundAggregate, SeedRun};
use crate::samplers::Strategy;

pub const RESULTS_CSV: &str = "results.csv";
pub const PLOT_SVG: &str = "acc_curves.svg";
pub const CROSSOVER_CSV: &str = "crossover.csv";
pub const RECORDS_CSV: &str = "records.csv";

const RESULTS_HEADER: &str = "round,strategy,alpha,mean_acc1,std_acc1,mean_acc10,std_acc10";

pub fn results_csv(aggregates: &[RoundAggregate]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for a in aggregates {
        let alpha = a.alpha.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            a.round, a.strategy, alpha, a.mean_acc1, a.std_acc1, a.mean_acc10, a.std_acc10
        );
    }
    out
}

/// Parses a file produced by [`results_csv`]; `n_seeds` is not stored and comes back as 0.
pub fn parse_results_csv(text: &str) -> Result<Vec<RoundAggregate>, RunError> {
    let bad = |line: usize, what: &str| RunError::Config(format!("results.csv line {}: {what}", line + 1));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == RESULTS_HEADER => {}
        _ => return Err(bad(0, "unexpected header")),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(i, "expected 7 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i, "bad number"));
            Ok(RoundAggregate {
                round: f[0].parse().map_err(|_| bad(i, "bad round"))?,
                strategy: f[1].parse().map_err(|_| bad(i, "unknown strategy"))?,
                alpha: if f[2].is_empty() { None } else { Some(num(f[2])?) },
                mean_acc1: num(f[3])?,
                std_acc1: num(f[4])?,
                mean_acc10: num(f[5])?,
                std_acc10: num(f[6])?,
                n_seeds: 0,
            })
        })
        .collect()
}

/// Who leads at each round when comparing the pure min-VI and max-VI strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossover {
    pub rounds: Vec<(usize, f64, f64)>,
    pub status: CrossoverStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossoverStatus {
    /// Min-VI leads early and max-VI leads late.
    MinThenMax,
    MaxThenMin,
    MinThroughout,
    MaxThroughout,
    Tied,
}

impl CrossoverStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CrossoverStatus::MinThenMax => "min_then_max",
            CrossoverStatus::MaxThenMin => "max_then_min",
            CrossoverStatus::MinThroughout => "min_throughout",
            CrossoverStatus::MaxThroughout => "max_throughout",
            CrossoverStatus::Tied => "tied",
        }
    }
}

fn leader(min: f64, max: f64) -> &'static str {
    if min > max {
        "vi_min"
    } else if max > min {
        "vi_max"
    } else {
        "tie"
    }
}

/// Compares `vi_min` with `vi_max` round by round; `None` unless both are present.
pub fn crossover(aggregates: &[RoundAggregate]) -> Option<Crossover> {
    let curve = |s: Strategy| -> Vec<&RoundAggregate> { aggregates.iter().filter(|a| a.strategy == s).collect() };
    let (min, max) = (curve(Strategy::ViMin), curve(Strategy::ViMax));
    if min.is_empty() || max.is_empty() {
        return None;
    }
    let rounds: Vec<(usize, f64, f64)> = min
        .iter()
        .filter_map(|a| {
            max.iter()
                .find(|b| b.round == a.round)
                .map(|b| (a.round, a.mean_acc1, b.mean_acc1))
        })
        .collect();
    let leaders: Vec<&str> = rounds
        .iter()
        .map(|&(_, a, b)| leader(a, b))
        .filter(|l| *l != "tie")
        .collect();
    let status = match (leaders.first(), leaders.last()) {
        (None, _) | (_, None) => CrossoverStatus::Tied,
        (Some(&"vi_min"), Some(&"vi_max")) => CrossoverStatus::MinThenMax,
        (Some(&"vi_max"), Some(&"vi_min")) => CrossoverStatus::MaxThenMin,
        (Some(&"vi_min"), _) => CrossoverStatus::MinThroughout,
        _ => CrossoverStatus::MaxThroughout,
    };
    Some(Crossover { rounds, status })
}

pub fn crossover_csv(c: &Crossover) -> String {
    let mut out = String::from("round,mean_acc1_vi_min,mean_acc1_vi_max,leader,status\n");
    for &(round, min, max) in &c.rounds {
        let _ = writeln!(out, "{round},{min},{max},{},{}", leader(min, max), c.status.as_str());
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Mean acc@1 per round with ±1 std bands, one curve per strategy.
pub fn plot_svg(aggregates: &[RoundAggregate]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 440.0;
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 220.0;
    const TOP: f64 = 20.0;
    const BOTTOM: f64 = 50.0;

    let mut labels: Vec<String> = Vec::new();
    for a in aggregates {
        if !labels.contains(&a.label()) {
            labels.push(a.label());
        }
    }
    let max_round = aggregates.iter().map(|a| a.round).max().unwrap_or(0).max(1) as f64;
    let y_top = aggregates
        .iter()
        .map(|a| a.mean_acc1 + a.std_acc1)
        .fold(0.0f64, f64::max);
    let y_max = ((y_top / 0.1).ceil() * 0.1).clamp(0.1, 1.0);
    let px = |r: f64| LEFT + r / max_round * (W - LEFT - RIGHT);
    let py = |v: f64| H - BOTTOM - v.clamp(0.0, y_max) / y_max * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    // Axes, gridlines, ticks.
    let (x0, x1, y0, y1) = (px(0.0), px(max_round), py(0.0), py(y_max));
    let _ = writeln!(
        s,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="black"/>"#
    );
    for r in 0..=max_round as usize {
        let x = px(r as f64);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{r}</text>"#,
            y0 + 18.0
        );
    }
    let ticks = (y_max / 0.1).round() as usize;
    for t in 0..=ticks {
        let v = t as f64 * 0.1;
        let y = py(v);
        let _ = writeln!(
            s,
            r##"<line x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="#dddddd"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">round</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">mean acc@1</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    for (i, label) in labels.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts: Vec<&RoundAggregate> = aggregates.iter().filter(|a| &a.label() == label).collect();
        pts.sort_by_key(|a| a.round);
        let upper = pts
            .iter()
            .map(|a| format!("{:.2},{:.2}", px(a.round as f64), py(a.mean_acc1 + a.std_acc1)));
        let lower = pts
            .iter()
            .rev()
            .map(|a| format!("{:.2},{:.2}", px(a.round as f64), py(a.mean_acc1 - a.std_acc1)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            band.join(" ")
        );
        let line: Vec<String> = pts
            .iter()
            .map(|a| format!("{:.2},{:.2}", px(a.round as f64), py(a.mean_acc1)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = TOP + 10.0 + i as f64 * 18.0;
        let lx = W - RIGHT + 16.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{label}</text>"#, lx + 26.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `results.csv` and the acc@1 plot into `dir`, plus `crossover.csv` when both
/// pure VI strategies were run. Returns the written paths.
pub fn emit_results(aggregates: &[RoundAggregate], dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    std::fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<(), RunError> {
        let path = dir.join(name);
        write_file(&path, body)?;
        written.push(path);
        Ok(())
    };
    put(RESULTS_CSV, results_csv(aggregates))?;
    put(PLOT_SVG, plot_svg(aggregates))?;
    if let Some(c) = crossover(aggregates) {
        put(CROSSOVER_CSV, crossover_csv(&c))?;
    }
    Ok(written)
}

/// Per-seed records, for inspection.
pub fn emit_records(runs: &[SeedRun], dir: &Path) -> Result<PathBuf, RunError> {
    let path = dir.join(RECORDS_CSV);
    write_file(&path, crate::runner::records_csv(runs))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agg(round: usize, strategy: Strategy, acc1: f64) -> RoundAggregate {
        RoundAggregate {
            round,
            strategy,
            alpha: strategy.effective_alpha(0.5),
            mean_acc1: acc1,
            std_acc1: 0.01,
            mean_acc10: acc1 + 0.1,
            std_acc10: 0.02,
            n_seeds: 3,
        }
    }

    #[test]
    fn csv_round_trips() {
        let a = vec![agg(0, Strategy::Random, 0.125), agg(0, Strategy::ViDiverse, 0.3)];
        let text = results_csv(&a);
        assert!(text.starts_with("round,strategy,alpha,mean_acc1"));
        let back = parse_results_csv(&text).unwrap();
        for (x, y) in a.iter().zip(&back) {
            assert_eq!(
                RoundAggregate {
                    n_seeds: 0,
                    ..x.clone()
                },
                *y
            );
        }
    }

    #[test]
    fn crossover_statuses() {
        let mk = |min: &[f64], max: &[f64]| {
            let mut v = Vec::new();
            for (r, (a, b)) in min.iter().zip(max).enumerate() {
                v.push(agg(r, Strategy::ViMin, *a));
                v.push(agg(r, Strategy::ViMax, *b));
            }
            crossover(&v).unwrap().status
        };
        assert_eq!(mk(&[0.3, 0.4, 0.5], &[0.2, 0.4, 0.6]), CrossoverStatus::MinThenMax);
        assert_eq!(mk(&[0.3, 0.4], &[0.2, 0.3]), CrossoverStatus::MinThroughout);
        assert_eq!(mk(&[0.1, 0.4], &[0.2, 0.3]), CrossoverStatus::MaxThenMin);
        assert_eq!(mk(&[0.1], &[0.1]), CrossoverStatus::Tied);
        assert!(crossover(&[agg(0, Strategy::ViMin, 0.1)]).is_none());
    }

    #[test]
    fn svg_is_deterministic_and_well_formed() {
        let a = vec![agg(0, Strategy::Random, 0.1), agg(1, Strategy::Random, 0.2)];
        let svg = plot_svg(&a);
        assert_eq!(svg, plot_svg(&a));
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<polygon").count(), 1);
    }
}
