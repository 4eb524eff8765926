//! Section-level precision, recall and F1 against annotated ground truth.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::{Answer, Engine};
use crate::section_id::{Depth, SectionId};

pub const LOG_FILE: &str = "eval_log.jsonl";
pub const SCORES_FILE: &str = "eval_scores.csv";
pub const REPORT_JSON_FILE: &str = "eval_report.json";
pub const REPORT_MD_FILE: &str = "eval_report.md";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ground truth is empty")]
    EmptyTruth,
    #[error("no questions to evaluate")]
    EmptyInput,
    #[error("question file row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("question file: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question: String,
    pub truth: BTreeSet<SectionId>,
    pub subpart: String,
}

#[derive(Deserialize)]
struct CsvRow {
    question: String,
    truth_ids: String,
    subpart: String,
}

/// Reads `question,truth_ids,subpart` rows; ids are `;`-separated.
pub fn parse_questions<R: Read>(reader: R) -> Result<Vec<QuestionRecord>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["question", "truth_ids", "subpart"] {
        return Err(EvalError::BadRow {
            row: 1,
            reason: format!(
                "expected header question,truth_ids,subpart, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        // header is row 1
        let n = i + 2;
        let row = row?;
        let bad = |reason: String| EvalError::BadRow { row: n, reason };
        if row.question.is_empty() {
            return Err(bad("empty question".into()));
        }
        let mut truth = BTreeSet::new();
        for raw in row
            .truth_ids
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
        {
            let id = SectionId::parse_with(raw, Depth::Extended)
                .map_err(|e| bad(format!("{raw:?}: {e}")))?;
            truth.insert(id);
        }
        if truth.is_empty() {
            return Err(bad("no ground-truth section ids".into()));
        }
        out.push(QuestionRecord {
            question: row.question,
            truth,
            subpart: row.subpart,
        });
    }
    Ok(out)
}

pub fn read_questions(path: &Path) -> Result<Vec<QuestionRecord>, EvalError> {
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_questions(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub answered: BTreeSet<SectionId>,
    pub truth: BTreeSet<SectionId>,
}

/// Set precision, recall and their harmonic mean. An empty answer scores
/// zero on all three.
pub fn score(
    answered: &BTreeSet<SectionId>,
    truth: &BTreeSet<SectionId>,
) -> Result<ScoreRow, EvalError> {
    if truth.is_empty() {
        return Err(EvalError::EmptyTruth);
    }
    let correct = answered.intersection(truth).count() as f64;
    let precision = if answered.is_empty() {
        0.0
    } else {
        correct / answered.len() as f64
    };
    let recall = correct / truth.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ScoreRow {
        precision,
        recall,
        f1,
        answered: answered.clone(),
        truth: truth.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> MeanSd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanSd {
            mean,
            sd: var.sqrt(),
        }
    }

    /// `92.8% (0.240)`; a mean that rounds to 100 prints as `100%`.
    pub fn table_cell(&self) -> String {
        let pct = self.mean * 100.0;
        let pct = if format!("{pct:.1}") == "100.0" {
            "100%".to_string()
        } else {
            format!("{pct:.1}%")
        };
        format!("{pct} ({:.3})", self.sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub subpart: String,
    pub questions: usize,
    pub precision: MeanSd,
    pub recall: MeanSd,
    pub f1: MeanSd,
}

impl GroupStats {
    fn of(subpart: &str, rows: &[&ScoreRow]) -> GroupStats {
        let col =
            |f: fn(&ScoreRow) -> f64| MeanSd::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
        GroupStats {
            subpart: subpart.to_string(),
            questions: rows.len(),
            precision: col(|r| r.precision),
            recall: col(|r| r.recall),
            f1: col(|r| r.f1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub questions: usize,
    pub failed: usize,
    pub sd_kind: String,
    /// In order of first appearance.
    pub subparts: Vec<GroupStats>,
    pub overall: GroupStats,
}

/// Per-subpart and overall mean and population SD of the three metrics.
pub fn aggregate(rows: &[(String, ScoreRow)]) -> Result<EvalReport, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut order: Vec<&str> = Vec::new();
    for (s, _) in rows {
        if !order.contains(&s.as_str()) {
            order.push(s);
        }
    }
    let subparts = order
        .iter()
        .map(|s| {
            let group: Vec<&ScoreRow> = rows
                .iter()
                .filter(|(t, _)| t == s)
                .map(|(_, r)| r)
                .collect();
            GroupStats::of(s, &group)
        })
        .collect();
    let all: Vec<&ScoreRow> = rows.iter().map(|(_, r)| r).collect();
    Ok(EvalReport {
        questions: rows.len(),
        failed: 0,
        sd_kind: "population".to_string(),
        subparts,
        overall: GroupStats::of("Overall", &all),
    })
}

impl EvalReport {
    /// Markdown table with one P/R/F1 block per subpart, then the overall block.
    pub fn to_markdown(&self, system: &str) -> String {
        let mut out = format!("| Subpart | {system} |\n|---|---|\n");
        for g in self.subparts.iter().chain(std::iter::once(&self.overall)) {
            out.push_str(&format!(
                "| {} | P = {} |\n",
                g.subpart,
                g.precision.table_cell()
            ));
            out.push_str(&format!("|  | R = {} |\n", g.recall.table_cell()));
            out.push_str(&format!("|  | F1 = {} |\n", g.f1.table_cell()));
        }
        out.push_str(&format!(
            "\nMean with {} standard deviation in parentheses; {} questions, {} failed.\n",
            self.sd_kind, self.questions, self.failed
        ));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionLog {
    pub index: usize,
    pub question: String,
    pub subpart: String,
    pub score: ScoreRow,
    /// Error text when the engine failed; the row then scores zero.
    pub failure: Option<String>,
    pub answer: Option<Answer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub log: Vec<QuestionLog>,
    pub report: EvalReport,
}

/// Answers every question (in parallel) and scores the cited sections.
/// Engine failures are scored 0/0/0 and recorded, not propagated.
pub fn run_eval(questions: &[QuestionRecord], engine: &Engine) -> Result<EvalRun, EvalError> {
    if questions.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut log: Vec<QuestionLog> = questions
        .par_iter()
        .enumerate()
        .map(|(index, q)| -> Result<QuestionLog, EvalError> {
            let (answered, failure, answer) = match engine.answer_question(&q.question) {
                Ok(a) => (a.cited_ids(), None, Some(a)),
                Err(e) => {
                    log::warn!("question {index} failed: {e}");
                    (BTreeSet::new(), Some(e.to_string()), None)
                }
            };
            Ok(QuestionLog {
                index,
                question: q.question.clone(),
                subpart: q.subpart.clone(),
                score: score(&answered, &q.truth)?,
                failure,
                answer,
            })
        })
        .collect::<Result<_, _>>()?;
    log.sort_by_key(|l| l.index);
    let rows: Vec<(String, ScoreRow)> = log
        .iter()
        .map(|l| (l.subpart.clone(), l.score.clone()))
        .collect();
    let mut report = aggregate(&rows)?;
    report.failed = log.iter().filter(|l| l.failure.is_some()).count();
    Ok(EvalRun { log, report })
}

fn join_ids(ids: &BTreeSet<SectionId>) -> String {
    ids.iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

impl EvalRun {
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|l| serde_json::to_string(l).expect("log serializes") + "\n")
            .collect()
    }

    /// One row per question for external statistics tools.
    pub fn scores_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "index",
            "question",
            "subpart",
            "precision",
            "recall",
            "f1",
            "answered_ids",
            "truth_ids",
            "failed",
        ])
        .expect("in-memory write");
        for l in &self.log {
            w.write_record([
                l.index.to_string(),
                l.question.clone(),
                l.subpart.clone(),
                l.score.precision.to_string(),
                l.score.recall.to_string(),
                l.score.f1.to_string(),
                join_ids(&l.score.answered),
                join_ids(&l.score.truth),
                l.failure.is_some().to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    /// Writes the log, the score table and both report forms into `dir`.
    pub fn write(&self, dir: &Path, system: &str) -> Result<(), EvalError> {
        let io = |path: PathBuf| move |source| EvalError::Io { path, source };
        std::fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
        let files = [
            (LOG_FILE, self.log_jsonl()),
            (SCORES_FILE, self.scores_csv()),
            (
                REPORT_JSON_FILE,
                serde_json::to_string_pretty(&self.report).expect("report serializes") + "\n",
            ),
            (REPORT_MD_FILE, self.report.to_markdown(system)),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(io(path.clone()))?;
        }
        Ok(())
    }
}
