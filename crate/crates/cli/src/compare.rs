//! Aggregation of result records into the comparison table.
//!
//! Every (method, hyperparameters) cell becomes one row of test-split means
//! over seeds. For methods swept over `lambda_up`, an extra row picks the
//! factor per seed by validation worst-group accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use dett_core::eval::select_best_by_scores;
use dett_core::io::write_atomic;

use crate::error::{CliError, Result};
use crate::record::{load_records, ResultRecord};
use crate::spec::Method;

pub const SELECTED: &str = "val-selected";
const SWEPT_KEY: &str = "lambda_up";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; `None` for a single value.
    pub sd: Option<f64>,
}

pub fn summarize(xs: &[f64]) -> Summary {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    Summary { mean, sd }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    /// Method name as stored in the records (`teacher_group_dro` for the teacher).
    pub method: String,
    /// `key=value` pairs joined by `, `; the swept key reads `val-selected` on
    /// selection rows.
    pub hyperparams: String,
    pub teacher: bool,
    pub transplant: bool,
    pub upweight: bool,
    pub seeds: usize,
    pub avg: Summary,
    pub worst: Summary,
}

impl Row {
    pub fn is(&self, method: &str, hyperparams: &str) -> bool {
        self.method == method && self.hyperparams == hyperparams
    }
}

fn format_params(params: &BTreeMap<String, String>) -> String {
    params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ")
}

fn params_of(rec: &ResultRecord) -> BTreeMap<String, String> {
    rec.hyperparams.iter().map(|(k, v)| (k.clone(), v.to_string())).collect()
}

fn make_row(method: &str, hyperparams: String, tests: &[&ResultRecord]) -> Row {
    let parsed: Option<Method> = method.parse().ok();
    let avg: Vec<f64> = tests.iter().map(|r| r.avg).collect();
    let worst: Vec<f64> = tests.iter().map(|r| r.worst).collect();
    Row {
        method: method.to_string(),
        hyperparams,
        teacher: parsed.is_none(),
        transplant: parsed.is_some_and(Method::transplants),
        upweight: parsed.is_some_and(Method::upweights),
        seeds: tests.len(),
        avg: summarize(&avg),
        worst: summarize(&worst),
    }
}

fn method_rank(method: &str) -> usize {
    match method.parse::<Method>() {
        Ok(m) => 1 + Method::ALL.iter().position(|&x| x == m).unwrap_or(0),
        Err(_) => 0,
    }
}

/// Builds the table rows from a set of records.
pub fn build_rows(records: &[ResultRecord]) -> Vec<Row> {
    type Key = (usize, String, String);
    let mut cells: BTreeMap<Key, Vec<&ResultRecord>> = BTreeMap::new();
    for rec in records.iter().filter(|r| r.split == "test") {
        let key = (method_rank(&rec.method), rec.method.clone(), format_params(&params_of(rec)));
        cells.entry(key).or_default().push(rec);
    }
    let val: BTreeMap<(String, String, u64), &ResultRecord> = records
        .iter()
        .filter(|r| r.split == "val")
        .map(|r| ((r.method.clone(), format_params(&params_of(r)), r.seed), r))
        .collect();

    // Selection families: same method and same non-swept params.
    let mut families: BTreeMap<Key, Vec<&str>> = BTreeMap::new();
    for (method, params) in cells.keys().map(|(_, m, p)| (m, p)) {
        let rec = cells[&(method_rank(method), method.clone(), params.clone())][0];
        let mut rest = params_of(rec);
        if rest.insert(SWEPT_KEY.to_string(), SELECTED.to_string()).is_some() {
            families
                .entry((method_rank(method), method.clone(), format_params(&rest)))
                .or_default()
                .push(params);
        }
    }

    let mut rows: Vec<(Key, Row)> = cells
        .iter()
        .map(|(key, tests)| (key.clone(), make_row(&key.1, key.2.clone(), tests)))
        .collect();
    for ((rank, method, label), members) in families.into_iter().filter(|(_, m)| m.len() > 1) {
        let seeds: Vec<u64> = {
            let mut s: Vec<u64> = cells[&(rank, method.clone(), members[0].to_string())]
                .iter()
                .map(|r| r.seed)
                .collect();
            s.sort_unstable();
            s
        };
        let mut chosen = Vec::new();
        for seed in seeds {
            let candidates: Vec<(&str, &ResultRecord)> = members
                .iter()
                .filter_map(|p| val.get(&(method.clone(), p.to_string(), seed)).map(|r| (*p, *r)))
                .collect();
            let scores: Vec<(f64, f64)> = candidates.iter().map(|(_, r)| (r.worst, r.avg)).collect();
            let Some(best) = select_best_by_scores(&scores) else { continue };
            let params = candidates[best].0;
            if let Some(test) = cells[&(rank, method.clone(), params.to_string())]
                .iter()
                .find(|r| r.seed == seed)
            {
                chosen.push(*test);
            }
        }
        if !chosen.is_empty() {
            let row = make_row(&method, label.clone(), &chosen);
            rows.push(((rank, method, format!("~{label}")), row));
        }
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    rows.into_iter().map(|(_, r)| r).collect()
}

fn pct(s: &Summary) -> String {
    match s.sd {
        Some(sd) => format!("{:.1} ± {:.1}", 100.0 * s.mean, 100.0 * sd),
        None => format!("{:.1}", 100.0 * s.mean),
    }
}

/// Plain-text table with the best student worst-group mean wrapped in `**`.
pub fn render_text(rows: &[Row]) -> String {
    let best = rows
        .iter()
        .filter(|r| !r.teacher)
        .map(|r| r.worst.mean)
        .fold(f64::NEG_INFINITY, f64::max);
    let mark = |b: bool| if b { "x" } else { "" };
    let header = ["method", "hyperparams", "TT", "Up", "seeds", "average", "worst-group"];
    let body: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            let worst = pct(&r.worst);
            [
                r.method.clone(),
                r.hyperparams.clone(),
                mark(r.transplant).to_string(),
                mark(r.upweight).to_string(),
                r.seeds.to_string(),
                pct(&r.avg),
                if !r.teacher && r.worst.mean == best { format!("**{worst}**") } else { worst },
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| body.iter().map(|r| r[c].chars().count()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect(), &mut out);
    for r in &body {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

pub fn render_csv(rows: &[Row]) -> String {
    let sd = |s: &Summary| s.sd.map(|v| v.to_string()).unwrap_or_default();
    let mut out = String::from("method,hyperparams,transplant,upweight,seeds,avg_mean,avg_sd,worst_mean,worst_sd\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},\"{}\",{},{},{},{},{},{},{}",
            r.method,
            r.hyperparams,
            r.transplant,
            r.upweight,
            r.seeds,
            r.avg.mean,
            sd(&r.avg),
            r.worst.mean,
            sd(&r.worst)
        );
    }
    out
}

pub struct Comparison {
    pub rows: Vec<Row>,
    pub text: String,
    pub csv: String,
}

/// Loads every record in `dir` and writes `compare.csv` and `compare.txt`
/// next to them.
pub fn compare(dir: &Path) -> Result<Comparison> {
    let records = load_records(dir)?;
    if !records.iter().any(|r| r.split == "test") {
        return Err(CliError::NoRecords(dir.to_path_buf()));
    }
    let rows = build_rows(&records);
    let cmp = Comparison {
        text: render_text(&rows),
        csv: render_csv(&rows),
        rows,
    };
    write_atomic(&dir.join("compare.csv"), cmp.csv.as_bytes())?;
    write_atomic(&dir.join("compare.txt"), cmp.text.as_bytes())?;
    Ok(cmp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: &str, hp: &[(&str, f64)], seed: u64, split: &str, avg: f64, worst: f64) -> ResultRecord {
        ResultRecord {
            method: method.into(),
            seed,
            hyperparams: hp.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            split: split.into(),
            epoch: 1,
            avg,
            worst,
            groups: vec![],
            wall_time: 0.0,
        }
    }

    #[test]
    fn sample_sd_of_three_seeds() {
        let s = summarize(&[0.8, 0.82, 0.84]);
        assert!((s.mean - 0.82).abs() < 1e-12);
        assert!((s.sd.unwrap() - 0.02).abs() < 1e-12);
    }

    #[test]
    fn single_record_omits_sd() {
        let rows = build_rows(&[rec("erm", &[], 1, "test", 0.9, 0.5)]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].worst.sd, None);
        assert!(render_text(&rows).contains("50.0"));
        assert!(!render_text(&rows).contains('±'));
    }

    #[test]
    fn selection_row_uses_validation_choice() {
        let mut recs = Vec::new();
        for (l, val_w, test_w) in [(5.0, 0.6, 0.9), (50.0, 0.7, 0.5)] {
            recs.push(rec("dett", &[("lambda_up", l)], 1, "val", 0.9, val_w));
            recs.push(rec("dett", &[("lambda_up", l)], 1, "test", 0.9, test_w));
        }
        let rows = build_rows(&recs);
        let sel = rows.iter().find(|r| r.is("dett", "lambda_up=val-selected")).unwrap();
        assert_eq!(sel.worst.mean, 0.5);
        assert!(sel.transplant && sel.upweight);
    }

    #[test]
    fn teacher_is_never_bold() {
        let rows = build_rows(&[
            rec("teacher_group_dro", &[("eta_q", 0.1)], 1, "test", 0.9, 0.9),
            rec("erm", &[], 1, "test", 0.9, 0.4),
            rec("simkd", &[], 1, "test", 0.9, 0.7),
        ]);
        assert_eq!(rows[0].method, "teacher_group_dro");
        let text = render_text(&rows);
        assert!(text.contains("**70.0**"));
        assert!(!text.contains("**90.0**"));
    }
}
