//! Macro-F1, multi-seed aggregation and report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unweighted mean of the per-class F1 over the binary labels {0, 1}.
///
/// A class with `P + R = 0` scores 0; a class absent from both sequences
/// also scores 0 and logs a warning.
pub fn macro_f1(predictions: &[usize], golds: &[usize]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::Config(format!(
            "macro_f1: {} predictions vs {} gold labels",
            predictions.len(),
            golds.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Config("macro_f1: empty input".into()));
    }
    if let Some(bad) = predictions.iter().chain(golds).find(|&&l| l > 1) {
        return Err(Error::Config(format!(
            "macro_f1: label {bad} outside {{0, 1}}"
        )));
    }
    // confusion[gold][pred]
    let mut confusion = [[0usize; 2]; 2];
    for (&p, &g) in predictions.iter().zip(golds) {
        confusion[g][p] += 1;
    }
    let mut total = 0.0;
    for c in 0..2 {
        let tp = confusion[c][c];
        let fp = confusion[1 - c][c];
        let fn_ = confusion[c][1 - c];
        if tp + fp + fn_ == 0 {
            log::warn!("macro_f1: class {c} absent from predictions and gold labels");
        }
        total += f1_from_counts(tp, fp, fn_);
    }
    Ok(total / 2.0)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Mean over values summed in sorted order, so the result does not depend
/// on the order of the inputs.
pub fn mean(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

/// Sample (n - 1) standard deviation; 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let mut sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    sq.sort_by(f64::total_cmp);
    (sq.iter().sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// One `(experiment, seed, language)` measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub experiment: String,
    pub variant: String,
    pub seed: u64,
    pub language: String,
    pub macro_f1: f64,
}

pub fn metrics_to_jsonl(records: &[MetricRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn metrics_from_jsonl(text: &str) -> Result<Vec<MetricRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Per-language macro-F1 across seeds for one (experiment, variant).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: String,
    pub variant: String,
    pub seeds: Vec<u64>,
    /// Language -> score per seed, in `seeds` order. Column order is the
    /// order languages were first reported.
    pub scores: Vec<(String, Vec<f64>)>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn single_seed(&self) -> bool {
        self.seeds.len() < 2
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.scores.iter().map(|(l, _)| l.as_str())
    }

    pub fn language_scores(&self, language: &str) -> Option<&[f64]> {
        self.scores
            .iter()
            .find(|(l, _)| l == language)
            .map(|(_, v)| v.as_slice())
    }

    pub fn mean(&self, language: &str) -> Option<f64> {
        self.language_scores(language).map(mean)
    }

    pub fn std(&self, language: &str) -> Option<f64> {
        self.language_scores(language).map(sample_std)
    }

    /// Per-seed average over languages.
    fn per_seed_average(&self) -> Vec<f64> {
        (0..self.seeds.len())
            .map(|i| mean(&self.scores.iter().map(|(_, v)| v[i]).collect::<Vec<_>>()))
            .collect()
    }

    /// Unweighted mean of the per-language means.
    pub fn avg(&self) -> f64 {
        mean(&self.scores.iter().map(|(_, v)| mean(v)).collect::<Vec<_>>())
    }

    pub fn avg_std(&self) -> f64 {
        sample_std(&self.per_seed_average())
    }

    /// Groups flat metric records into reports, keyed by
    /// (experiment, variant) in order of first appearance.
    pub fn from_records(records: &[MetricRecord]) -> Vec<EvalReport> {
        let mut reports: Vec<EvalReport> = Vec::new();
        for r in records {
            let idx = match reports
                .iter()
                .position(|x| x.experiment == r.experiment && x.variant == r.variant)
            {
                Some(i) => i,
                None => {
                    reports.push(EvalReport {
                        experiment: r.experiment.clone(),
                        variant: r.variant.clone(),
                        seeds: Vec::new(),
                        scores: Vec::new(),
                        metadata: BTreeMap::new(),
                    });
                    reports.len() - 1
                }
            };
            let report = &mut reports[idx];
            if !report.seeds.contains(&r.seed) {
                report.seeds.push(r.seed);
            }
            match report.scores.iter_mut().find(|(l, _)| *l == r.language) {
                Some((_, v)) => v.push(r.macro_f1),
                None => report.scores.push((r.language.clone(), vec![r.macro_f1])),
            }
        }
        reports
    }
}

/// Runs `run` once per seed (concurrently) and aggregates the per-language
/// scores. Returns the report and the flat records in seed order.
pub fn run_multi_seed<F>(
    experiment: &str,
    variant: &str,
    seeds: &[u64],
    run: F,
) -> Result<(EvalReport, Vec<MetricRecord>)>
where
    F: Fn(u64) -> Result<Vec<(String, f64)>> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let results: Vec<Result<Vec<(String, f64)>>> = seeds.par_iter().map(|&s| run(s)).collect();
    let mut records = Vec::new();
    for (&seed, result) in seeds.iter().zip(results) {
        let scores = result.map_err(|e| Error::SeedRun {
            seed,
            source: Box::new(e),
        })?;
        for (language, macro_f1) in scores {
            records.push(MetricRecord {
                experiment: experiment.to_string(),
                variant: variant.to_string(),
                seed,
                language,
                macro_f1,
            });
        }
    }
    let report = EvalReport::from_records(&records)
        .pop()
        .unwrap_or_else(|| EvalReport {
            experiment: experiment.into(),
            variant: variant.into(),
            seeds: seeds.to_vec(),
            scores: Vec::new(),
            metadata: BTreeMap::new(),
        });
    for (language, v) in &report.scores {
        if v.len() != seeds.len() {
            return Err(Error::Config(format!(
                "language `{language}` reported by {} of {} seeds",
                v.len(),
                seeds.len()
            )));
        }
    }
    Ok((report, records))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

/// Table with rows = (experiment, variant) and columns = languages + AVG.
pub fn render_report(reports: &[EvalReport], format: ReportFormat) -> String {
    let mut languages: Vec<&str> = Vec::new();
    for r in reports {
        for l in r.languages() {
            if !languages.contains(&l) {
                languages.push(l);
            }
        }
    }
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            let mut header = vec!["experiment".to_string(), "variant".to_string()];
            for l in languages.iter().copied().chain(["AVG"]) {
                header.push(format!("{l}_mean"));
                header.push(format!("{l}_std"));
            }
            header.push("seeds".into());
            writeln!(out, "{}", header.join(",")).unwrap();
            for r in reports {
                let mut row = vec![r.experiment.clone(), r.variant.clone()];
                for l in &languages {
                    match (r.mean(l), r.std(l)) {
                        (Some(m), Some(s)) => row.extend([fmt3(m), fmt3(s)]),
                        _ => row.extend([String::new(), String::new()]),
                    }
                }
                row.extend([fmt3(r.avg()), fmt3(r.avg_std()), r.seeds.len().to_string()]);
                writeln!(out, "{}", row.join(",")).unwrap();
            }
        }
        ReportFormat::Markdown => {
            let mut header = vec!["experiment", "variant"];
            header.extend(languages.iter().copied());
            header.push("AVG");
            writeln!(out, "| {} |", header.join(" | ")).unwrap();
            writeln!(out, "|{}", "---|".repeat(header.len())).unwrap();
            for r in reports {
                let mut row = vec![r.experiment.clone(), r.variant.clone()];
                for l in &languages {
                    row.push(match (r.mean(l), r.std(l)) {
                        (Some(m), Some(s)) => format!("{} ± {}", fmt3(m), fmt3(s)),
                        _ => "-".into(),
                    });
                }
                let avg = format!("{} ± {}", fmt3(r.avg()), fmt3(r.avg_std()));
                row.push(if r.single_seed() {
                    format!("{avg} (1 seed)")
                } else {
                    avg
                });
                writeln!(out, "| {} |", row.join(" | ")).unwrap();
            }
        }
    }
    out
}
