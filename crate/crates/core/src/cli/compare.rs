use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::{load_config, RESOLVED_CONFIG};
use super::AttentionReport;
use crate::trainer::{read_metrics_csv, MetricsRecord};

pub const MAX_CURVE_POINTS: usize = 1000;

/// Per-bin means over a metrics stream.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CurvePoint {
    pub ep_return_ext: Option<f64>,
    pub mean_r_int: Option<f64>,
    pub ul_loss: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

/// Average `records` into `bins` equal slices of `(0, max_step]`.
pub fn downsample(records: &[MetricsRecord], max_step: u64, bins: usize) -> Vec<CurvePoint> {
    let width = max_step.div_ceil(bins.max(1) as u64).max(1);
    let mut grouped: Vec<Vec<&MetricsRecord>> = vec![Vec::new(); bins];
    for r in records {
        let b = (r.global_step.saturating_sub(1) / width) as usize;
        if let Some(g) = grouped.get_mut(b) {
            g.push(r);
        }
    }
    grouped
        .iter()
        .map(|g| CurvePoint {
            ep_return_ext: mean(g.iter().filter_map(|r| r.ep_return_ext)),
            mean_r_int: mean(g.iter().map(|r| r.mean_r_int)),
            ul_loss: mean(g.iter().map(|r| r.ul_loss)),
        })
        .collect()
}

pub struct CompareOutput {
    /// Aligned-by-step CSV.
    pub csv: String,
    /// Attention table plus final returns, as plain text.
    pub table: String,
}

fn metrics_path(dir: &Path) -> PathBuf {
    let resolved = dir.join(RESOLVED_CONFIG);
    match load_config(Some(&resolved), &[]) {
        Ok(cfg) => dir.join(cfg.io.metrics),
        Err(_) => dir.join("metrics.csv"),
    }
}

fn run_names(dirs: &[PathBuf]) -> Vec<String> {
    let base: Vec<String> =
        dirs.iter().map(|d| d.file_name().map_or_else(|| d.display().to_string(), |n| n.to_string_lossy().into_owned())).collect();
    base.iter().enumerate().map(|(i, b)| if base.iter().filter(|x| *x == b).count() > 1 { format!("{b}_{i}") } else { b.clone() }).collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

pub fn compare_runs(dirs: &[PathBuf]) -> Result<CompareOutput, String> {
    if dirs.len() < 2 {
        return Err("compare needs at least two run directories".into());
    }
    let mut runs = Vec::new();
    for d in dirs {
        let path = metrics_path(d);
        if !path.exists() {
            return Err(format!("missing metrics file {}", path.display()));
        }
        runs.push(read_metrics_csv(&path).map_err(|e| e.to_string())?);
    }
    let names = run_names(dirs);
    let max_step = runs.iter().flatten().map(|r| r.global_step).max().unwrap_or(0);
    let bins = (max_step as usize).clamp(1, MAX_CURVE_POINTS);
    let width = max_step.div_ceil(bins as u64).max(1);
    let curves: Vec<Vec<CurvePoint>> = runs.iter().map(|r| downsample(r, max_step, bins)).collect();

    let mut csv = String::from("global_step");
    for (i, n) in names.iter().enumerate() {
        write!(csv, ",{n}_return,{n}_mean_r_int,{n}_ul_loss").unwrap();
        if i > 0 {
            write!(csv, ",{n}_return_delta").unwrap();
        }
    }
    csv.push('\n');
    for b in 0..bins {
        if curves.iter().all(|c| c[b] == CurvePoint::default()) {
            continue;
        }
        write!(csv, "{}", ((b as u64 + 1) * width).min(max_step)).unwrap();
        let first = curves[0][b].ep_return_ext;
        for (i, c) in curves.iter().enumerate() {
            let p = c[b];
            write!(csv, ",{},{},{}", cell(p.ep_return_ext), cell(p.mean_r_int), cell(p.ul_loss)).unwrap();
            if i > 0 {
                let delta = p.ep_return_ext.zip(first).map(|(a, b)| a - b);
                write!(csv, ",{}", cell(delta)).unwrap();
            }
        }
        csv.push('\n');
    }

    let mut table = String::new();
    writeln!(table, "{:<28} {:>16} {:>18}", "policy", "frequency (%)", "duration").unwrap();
    for (d, n) in dirs.iter().zip(&names) {
        let mut reports: Vec<PathBuf> = std::fs::read_dir(d)
            .map_err(|e| format!("{}: {e}", d.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|f| f.to_str()).is_some_and(|f| f.starts_with("attention_") && f.ends_with(".json")))
            .collect();
        reports.sort();
        for p in reports {
            let text = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
            let r: AttentionReport = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?;
            let s = r.stats;
            writeln!(
                table,
                "{:<28} {:>16} {:>18}",
                format!("{n}/{}", r.policy),
                format!("{:.1} ± {:.1}", s.frequency_mean * 100.0, s.frequency_std * 100.0),
                format!("{:.1} ± {:.1}", s.duration_mean, s.duration_std)
            )
            .unwrap();
        }
    }
    writeln!(table, "\n{:<28} {:>16}", "run", "final return").unwrap();
    for (r, n) in runs.iter().zip(&names) {
        let tail = max_step - max_step / 10;
        let ret = mean(r.iter().filter(|m| m.global_step > tail).filter_map(|m| m.ep_return_ext));
        writeln!(table, "{:<28} {:>16}", n, ret.map_or("n/a".to_string(), |x| format!("{x:.4}"))).unwrap();
    }
    Ok(CompareOutput { csv, table })
}
