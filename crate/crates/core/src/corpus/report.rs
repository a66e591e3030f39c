use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train, LabeledFrames, Split};
use crate::classify::{Classifier, Measure, StreamState};
use crate::dictlearn::LearnConfig;
use crate::error::{Error, Result};
use crate::features::FrameMeta;
use crate::solver::SolverConfig;

/// MASDR windows evaluated run from 1 to this value.
pub const MASDR_MAX_WINDOW: usize = 20;

/// Frame-level results for one measure. Accuracies are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub measure: Measure,
    pub per_source: Vec<f64>,
    /// Correct frames over all classified frames.
    pub overall_frames: f64,
    /// Unweighted mean of the per-source accuracies.
    pub overall_sources: f64,
    /// `confusion[true][predicted]` frame counts.
    pub confusion: Vec<Vec<usize>>,
}

/// Stream accuracy of MASDR over windows `1..=MASDR_MAX_WINDOW`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasdrReport {
    pub windows: Vec<usize>,
    /// `accuracy[source][w]` in percent for window `windows[w]`, over every
    /// full window of the test stream; `None` when the stream is shorter
    /// than the window.
    pub accuracy: Vec<Vec<Option<f64>>>,
    /// Smallest window reaching 100 % per source.
    pub min_window: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub labels: Vec<String>,
    /// Classified (non-silent) test frames per source.
    pub frames: Vec<usize>,
    pub silent: Vec<usize>,
    pub measures: Vec<MeasureReport>,
    pub masdr: MasdrReport,
    pub solves: usize,
    pub unconverged: usize,
}

impl EvalReport {
    pub fn measure(&self, m: Measure) -> Option<&MeasureReport> {
        self.measures.iter().find(|r| r.measure == m)
    }

    pub fn unconverged_fraction(&self) -> f64 {
        if self.solves == 0 {
            0.0
        } else {
            self.unconverged as f64 / self.solves as f64
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Aligned plain-text summary.
    pub fn render_table(&self) -> String {
        let width = self
            .labels
            .iter()
            .map(|l| l.len())
            .max()
            .unwrap_or(0)
            .max(18);
        let mut out = String::new();
        let _ = write!(out, "{:<width$} {:>7}", "source", "frames");
        for m in &self.measures {
            let _ = write!(
                out,
                " {:>8}",
                format!("{} %", m.measure.name().to_uppercase())
            );
        }
        let _ = writeln!(out, " {:>8}", "MASDR P");
        for (i, label) in self.labels.iter().enumerate() {
            let _ = write!(out, "{label:<width$} {:>7}", self.frames[i]);
            for m in &self.measures {
                let _ = write!(out, " {:>8.2}", m.per_source[i]);
            }
            let p = self.masdr.min_window[i].map_or_else(|| "-".to_string(), |p| p.to_string());
            let _ = writeln!(out, " {p:>8}");
        }
        let total: usize = self.frames.iter().sum();
        let _ = write!(out, "{:<width$} {total:>7}", "overall (frames)");
        for m in &self.measures {
            let _ = write!(out, " {:>8.2}", m.overall_frames);
        }
        let _ = writeln!(out);
        let _ = write!(out, "{:<width$} {:>7}", "overall (sources)", "");
        for m in &self.measures {
            let _ = write!(out, " {:>8.2}", m.overall_sources);
        }
        let _ = writeln!(out);
        out
    }
}

fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

fn measure_report(measure: Measure, confusion: Vec<Vec<usize>>) -> MeasureReport {
    let per_source: Vec<f64> = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| percent(row[i], row.iter().sum()))
        .collect();
    let correct: usize = (0..confusion.len()).map(|i| confusion[i][i]).sum();
    let total: usize = confusion.iter().flatten().sum();
    let overall_sources = per_source.iter().sum::<f64>() / per_source.len().max(1) as f64;
    MeasureReport {
        measure,
        overall_frames: percent(correct, total),
        overall_sources,
        per_source,
        confusion,
    }
}

/// Classifies every test frame with every measure. `tests[i]` must hold
/// frames of dictionary source `i`.
pub fn evaluate(
    classifier: &Classifier,
    tests: &[LabeledFrames],
    meta: &FrameMeta,
) -> Result<EvalReport> {
    classifier.check_meta(meta)?;
    let dict = classifier.dictionary();
    let m = dict.source_count();
    if tests.len() != m {
        return Err(Error::MetaMismatch(format!(
            "{} test sets for {m} dictionaries",
            tests.len()
        )));
    }
    for (t, label) in tests.iter().zip(dict.labels()) {
        if t.label != label {
            return Err(Error::MetaMismatch(format!(
                "test set {:?} where dictionary {label:?} expected",
                t.label
            )));
        }
    }

    let mut measures: Vec<Measure> = Measure::FRAME.to_vec();
    let mut with_cascade = false;
    let mut confusion = vec![vec![vec![0usize; m]; m]; 4];
    let mut frames = vec![0; m];
    let mut silent = vec![0; m];
    let mut sdr_streams: Vec<Vec<Vec<f64>>> = vec![Vec::new(); m];
    let mut solves = 0;
    let mut unconverged = 0;

    for (truth, set) in tests.iter().enumerate() {
        for scores in classifier.score_all(&set.frames)? {
            let Some(s) = scores else {
                silent[truth] += 1;
                continue;
            };
            frames[truth] += 1;
            confusion[0][truth][s.predicted.sdr] += 1;
            confusion[1][truth][s.predicted.nnz] += 1;
            confusion[2][truth][s.predicted.sw] += 1;
            solves += m + 1;
            if let Some(c) = s.cascade {
                confusion[3][truth][c] += 1;
                with_cascade = true;
                solves += m.min(crate::classify::CASCADE_SHORTLIST);
            }
            unconverged += s.unconverged;
            sdr_streams[truth].push(s.sdr);
        }
        if frames[truth] == 0 {
            return Err(Error::Config(format!(
                "test set {:?} has no classifiable frames",
                set.label
            )));
        }
    }
    if with_cascade {
        measures.push(Measure::Cascade);
    }

    let windows: Vec<usize> = (1..=MASDR_MAX_WINDOW).collect();
    let mut accuracy = Vec::with_capacity(m);
    let mut min_window = Vec::with_capacity(m);
    for (truth, stream) in sdr_streams.iter().enumerate() {
        let row: Vec<Option<f64>> = windows
            .iter()
            .map(|&p| masdr_accuracy(stream, truth, p))
            .collect::<Result<_>>()?;
        min_window.push(
            windows
                .iter()
                .zip(&row)
                .find(|(_, a)| **a == Some(100.0))
                .map(|(p, _)| *p),
        );
        accuracy.push(row);
    }

    Ok(EvalReport {
        labels: dict.labels().into_iter().map(String::from).collect(),
        frames,
        silent,
        measures: measures
            .iter()
            .enumerate()
            .map(|(k, &ms)| measure_report(ms, confusion[k].clone()))
            .collect(),
        masdr: MasdrReport {
            windows,
            accuracy,
            min_window,
        },
        solves,
        unconverged,
    })
}

/// Share of full length-`window` windows whose MASDR picks `truth`.
fn masdr_accuracy(stream: &[Vec<f64>], truth: usize, window: usize) -> Result<Option<f64>> {
    if stream.len() < window {
        return Ok(None);
    }
    let mut state = StreamState::new(stream[0].len(), window)?;
    let mut correct = 0;
    let mut total = 0;
    for sdr in stream {
        let pred = state.update(sdr)?;
        if state.is_warm() {
            total += 1;
            correct += usize::from(pred == truth);
        }
    }
    Ok(Some(percent(correct, total)))
}

/// Writes `report.json`, `report.txt`, `accuracy.csv`, `masdr.csv` and one
/// `confusion_<measure>.csv` per measure into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::File {
        path: dir.to_path_buf(),
        source,
    })?;
    let write = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|source| Error::File { path, source })
    };
    write("report.json", report.to_json()? + "\n")?;
    write("report.txt", report.render_table())?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "source".to_string(),
        "frames".to_string(),
        "silent".to_string(),
    ];
    header.extend(
        report
            .measures
            .iter()
            .map(|m| format!("{}_accuracy", m.measure)),
    );
    header.push("masdr_min_window".into());
    w.write_record(&header)?;
    for (i, label) in report.labels.iter().enumerate() {
        let mut row = vec![
            label.clone(),
            report.frames[i].to_string(),
            report.silent[i].to_string(),
        ];
        row.extend(
            report
                .measures
                .iter()
                .map(|m| format!("{:.4}", m.per_source[i])),
        );
        row.push(report.masdr.min_window[i].map_or_else(String::new, |p| p.to_string()));
        w.write_record(&row)?;
    }
    for (name, pick) in [("overall_frames", 0), ("overall_sources", 1)] {
        let mut row = vec![
            name.to_string(),
            report.frames.iter().sum::<usize>().to_string(),
            report.silent.iter().sum::<usize>().to_string(),
        ];
        row.extend(report.measures.iter().map(|m| {
            format!(
                "{:.4}",
                if pick == 0 {
                    m.overall_frames
                } else {
                    m.overall_sources
                }
            )
        }));
        row.push(String::new());
        w.write_record(&row)?;
    }
    write("accuracy.csv", csv_string(w)?)?;

    for m in &report.measures {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(report.labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in report.labels.iter().zip(&m.confusion) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        write(&format!("confusion_{}.csv", m.measure), csv_string(w)?)?;
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["source".to_string()];
    header.extend(report.masdr.windows.iter().map(|p| format!("P{p}")));
    w.write_record(&header)?;
    for (label, row) in report.labels.iter().zip(&report.masdr.accuracy) {
        let mut rec = vec![label.clone()];
        rec.extend(
            row.iter()
                .map(|a| a.map_or_else(String::new, |v| format!("{v:.4}"))),
        );
        w.write_record(&rec)?;
    }
    write("masdr.csv", csv_string(w)?)
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Overall frame accuracies for one threshold pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t_intra: f64,
    pub t_inter: f64,
    pub sdr: f64,
    pub nnz: f64,
    pub sw: f64,
}

/// Threshold pairs of the standard sweep, in reporting order.
pub const SWEEP_GRID: [(f64, f64); 4] = [(0.95, 0.95), (0.95, 1.0), (1.0, 0.95), (1.0, 1.0)];

/// Trains and evaluates once per `(t_intra, t_inter)` pair.
pub fn sweep(
    split: &Split,
    base: &LearnConfig,
    solver: &SolverConfig,
    grid: &[(f64, f64)],
) -> Result<Vec<(SweepRow, EvalReport)>> {
    let tests = split.test_sets();
    grid.iter()
        .map(|&(t_intra, t_inter)| {
            let cfg = LearnConfig {
                t_intra,
                t_inter,
                ..*base
            };
            let (dict, _) = train(split, &cfg)?;
            let report = evaluate(&Classifier::new(dict, *solver)?, &tests, &split.meta)?;
            let acc = |m| report.measure(m).map_or(0.0, |r| r.overall_frames);
            let row = SweepRow {
                t_intra,
                t_inter,
                sdr: acc(Measure::Sdr),
                nnz: acc(Measure::Nnz),
                sw: acc(Measure::Sw),
            };
            Ok((row, report))
        })
        .collect()
}

/// Writes `sweep.csv` and `sweep.txt` into `dir`.
pub fn write_sweep(dir: &Path, rows: &[SweepRow]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::File {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "t_intra",
        "t_inter",
        "sdr_accuracy",
        "nnz_accuracy",
        "sw_accuracy",
    ])?;
    let mut text = format!(
        "{:>6} {:>6} {:>8} {:>8} {:>8}\n",
        "T_i", "T_I", "SDR", "NNZ", "SW"
    );
    for r in rows {
        w.write_record([
            format!("{:.2}", r.t_intra),
            format!("{:.2}", r.t_inter),
            format!("{:.4}", r.sdr),
            format!("{:.4}", r.nnz),
            format!("{:.4}", r.sw),
        ])?;
        let _ = writeln!(
            text,
            "{:>6.2} {:>6.2} {:>8.2} {:>8.2} {:>8.2}",
            r.t_intra, r.t_inter, r.sdr, r.nnz, r.sw
        );
    }
    let csv_path = dir.join("sweep.csv");
    std::fs::write(&csv_path, csv_string(w)?).map_err(|source| Error::File {
        path: csv_path,
        source,
    })?;
    let txt_path = dir.join("sweep.txt");
    std::fs::write(&txt_path, text).map_err(|source| Error::File {
        path: txt_path,
        source,
    })
}
