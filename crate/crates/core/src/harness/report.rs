use std::io::BufRead;
use std::path::Path;

use super::{MetricLine, Result};

pub fn read_metrics(path: &Path) -> Result<Vec<MetricLine>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub const REPORT_HEADER: [&str; 8] = [
    "epoch", "object", "phase", "success", "samples", "critic_loss", "actor_loss", "mean_q",
];

fn num(v: f64) -> String {
    serde_json::to_string(&v).unwrap_or_else(|_| "null".into())
}

/// One CSV row per metrics line, numbers formatted exactly as in the JSONL.
pub fn report(run_dir: &Path) -> Result<Vec<Vec<String>>> {
    let lines = read_metrics(&run_dir.join("metrics.jsonl"))?;
    Ok(lines
        .iter()
        .map(|l| {
            let loss = |f: fn(&crate::agent::Losses) -> f64| l.losses.as_ref().map(|x| num(f(x))).unwrap_or_default();
            vec![
                l.epoch.to_string(),
                l.object.clone(),
                l.phase.clone(),
                num(l.success),
                l.samples.to_string(),
                loss(|x| x.critic),
                loss(|x| x.actor),
                loss(|x| x.mean_q),
            ]
        })
        .collect())
}

pub fn write_report(run_dir: &Path, out: &Path) -> Result<usize> {
    let rows = report(run_dir)?;
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(REPORT_HEADER)?;
    for r in &rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(rows.len())
}
