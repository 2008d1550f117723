//! Plain-text result tables from per-seed reports.
//!
//! Reports sharing (system, task, r, m_u, paradigm) are averaged over seeds.
//! The first block lists one row per group; the second pivots engine results
//! by `r` so a grid over ratios reads across a line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use crate::SeedReport;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    system: String,
    task: String,
    /// `r` in parts per million so keys order and compare exactly.
    r_ppm: u64,
    m_u: usize,
    paradigm: String,
}

#[derive(Default)]
struct Cell {
    baseline: Vec<f64>,
    engine: Vec<f64>,
}

impl Cell {
    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn baseline(&self) -> f64 {
        Self::mean(&self.baseline)
    }

    fn engine(&self) -> f64 {
        Self::mean(&self.engine)
    }
}

fn key_of(r: &SeedReport) -> Key {
    Key {
        system: r.system.clone(),
        task: r.task.as_str().to_string(),
        r_ppm: (r.r * 1e6).round() as u64,
        m_u: r.m_u,
        paradigm: r.paradigm.as_str().to_string(),
    }
}

pub fn render(reports: &[SeedReport]) -> String {
    let mut groups: BTreeMap<Key, Cell> = BTreeMap::new();
    for r in reports {
        let cell = groups.entry(key_of(r)).or_default();
        cell.baseline.push(r.baseline_test_r2);
        cell.engine.push(r.engine_test_r2);
    }

    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:<8} {:>5} {:>5} {:<8} {:>5} {:>9} {:>9} {:>8}",
        "system", "task", "r", "m_u", "paradigm", "seeds", "baseline", "engine", "delta"
    );
    for (k, c) in &groups {
        let _ = writeln!(
            out,
            "{:<14} {:<8} {:>5.2} {:>5} {:<8} {:>5} {:>9.3} {:>9.3} {:>+8.3}",
            k.system,
            k.task,
            k.r_ppm as f64 / 1e6,
            k.m_u,
            k.paradigm,
            c.baseline.len(),
            c.baseline(),
            c.engine(),
            c.engine() - c.baseline()
        );
    }

    // Pivot: rows (system, task, m_u, paradigm), one column per r holding
    // "baseline -> engine".
    let ratios: BTreeSet<u64> = groups.keys().map(|k| k.r_ppm).collect();
    let mut rows: BTreeMap<(String, String, usize, String), BTreeMap<u64, &Cell>> = BTreeMap::new();
    for (k, c) in &groups {
        rows.entry((k.system.clone(), k.task.clone(), k.m_u, k.paradigm.clone())).or_default().insert(k.r_ppm, c);
    }
    out.push('\n');
    let _ = write!(out, "{:<14} {:<8} {:>5} {:<8}", "system", "task", "m_u", "paradigm");
    for r in &ratios {
        let _ = write!(out, " {:>15}", format!("r={:.2}", *r as f64 / 1e6));
    }
    out.push('\n');
    for ((system, task, m_u, paradigm), cells) in &rows {
        let _ = write!(out, "{system:<14} {task:<8} {m_u:>5} {paradigm:<8}");
        for r in &ratios {
            let text = match cells.get(r) {
                Some(c) => format!("{:.3} -> {:.3}", c.baseline(), c.engine()),
                None => "-".to_string(),
            };
            let _ = write!(out, " {text:>15}");
        }
        out.push('\n');
    }
    out
}
