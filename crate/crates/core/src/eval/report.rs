use super::{relative_drop_pct, EmbeddingKind, EvalError, LabelRole, ProbeResult, Result};
use crate::shaper::TrainingLog;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

/// Fresh-critic MI estimates for the first task and sensitive label on
/// the original and encoded embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiComparison {
    pub original_task: f64,
    pub original_sensitive: f64,
    pub encoded_task: f64,
    pub encoded_sensitive: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct TsneRows<'a> {
    pub coords: &'a Array2<f64>,
    pub task: &'a [u8],
    pub sensitive: &'a [u8],
}

#[derive(Debug, Clone)]
pub struct ReportInputs<'a> {
    /// Resolved configuration, copied into `report.json` verbatim.
    pub config: serde_json::Value,
    pub log: Option<&'a TrainingLog>,
    pub probes: &'a [ProbeResult],
    pub mi: Option<MiComparison>,
    pub tsne: Option<TsneRows<'a>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: serde_json::Value,
    /// `re_estimated` when a [`MiComparison`] was given, otherwise
    /// `training_log` (first versus last epoch).
    pub mi_source: Option<String>,
    pub mi: Option<MiComparison>,
    pub sensitive_mi_before: Option<f64>,
    pub sensitive_mi_after: Option<f64>,
    pub sensitive_mi_reduction_pct: Option<f64>,
    pub task_mi_before: Option<f64>,
    pub task_mi_after: Option<f64>,
    pub task_mi_retention_pct: Option<f64>,
    pub task_mi_change_pct: Option<f64>,
    pub sensitive_auroc_original: Option<f64>,
    pub sensitive_auroc_encoded: Option<f64>,
    pub sensitive_auroc_drop_pct: Option<f64>,
    pub sensitive_auroc_drop_abs: Option<f64>,
    pub task_auroc_original: Option<f64>,
    pub task_auroc_encoded: Option<f64>,
    pub task_auroc_drop_pct: Option<f64>,
    pub task_auroc_drop_abs: Option<f64>,
    pub probes: Vec<ProbeResult>,
    pub epochs: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> EvalError + '_ {
    move |e| EvalError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn first_auroc(probes: &[ProbeResult], role: LabelRole, kind: EmbeddingKind) -> Option<f64> {
    probes
        .iter()
        .find(|p| p.role == role && p.embedding_kind == kind)
        .map(|p| p.auroc)
}

impl Report {
    pub fn build(inputs: &ReportInputs<'_>) -> Self {
        let (source, before, after) = match (inputs.mi, inputs.log) {
            (Some(m), _) => (
                Some("re_estimated"),
                Some((m.original_task, m.original_sensitive)),
                Some((m.encoded_task, m.encoded_sensitive)),
            ),
            (None, Some(log)) if !log.records.is_empty() => {
                let first = &log.records[0];
                let last = log.records.last().expect("non-empty");
                let pick = |r: &crate::shaper::EpochRecord| {
                    (
                        r.mi_task.first().copied().unwrap_or(f64::NAN),
                        r.mi_sens.first().copied().unwrap_or(f64::NAN),
                    )
                };
                (Some("training_log"), Some(pick(first)), Some(pick(last)))
            }
            _ => (None, None, None),
        };
        let finite = |v: f64| v.is_finite().then_some(v);
        let task_before = before.and_then(|b| finite(b.0));
        let task_after = after.and_then(|a| finite(a.0));
        let sens_before = before.and_then(|b| finite(b.1));
        let sens_after = after.and_then(|a| finite(a.1));
        let both = |a: Option<f64>, b: Option<f64>| a.zip(b);

        let probes = inputs.probes;
        let s_orig = first_auroc(probes, LabelRole::Sensitive, EmbeddingKind::Original);
        let s_enc = first_auroc(probes, LabelRole::Sensitive, EmbeddingKind::Encoded);
        let t_orig = first_auroc(probes, LabelRole::Task, EmbeddingKind::Original);
        let t_enc = first_auroc(probes, LabelRole::Task, EmbeddingKind::Encoded);

        Self {
            config: inputs.config.clone(),
            mi_source: source.map(str::to_owned),
            mi: inputs.mi,
            sensitive_mi_before: sens_before,
            sensitive_mi_after: sens_after,
            sensitive_mi_reduction_pct: both(sens_before, sens_after).map(|(b, a)| relative_drop_pct(b, a)),
            task_mi_before: task_before,
            task_mi_after: task_after,
            task_mi_retention_pct: both(task_before, task_after).map(|(b, a)| 100.0 * a / b),
            task_mi_change_pct: both(task_before, task_after).map(|(b, a)| 100.0 * (a - b) / b),
            sensitive_auroc_original: s_orig,
            sensitive_auroc_encoded: s_enc,
            sensitive_auroc_drop_pct: both(s_orig, s_enc).map(|(b, a)| relative_drop_pct(b, a)),
            sensitive_auroc_drop_abs: both(s_orig, s_enc).map(|(b, a)| b - a),
            task_auroc_original: t_orig,
            task_auroc_encoded: t_enc,
            task_auroc_drop_pct: both(t_orig, t_enc).map(|(b, a)| relative_drop_pct(b, a)),
            task_auroc_drop_abs: both(t_orig, t_enc).map(|(b, a)| b - a),
            probes: probes.to_vec(),
            epochs: inputs.log.map_or(0, |l| l.records.len()),
        }
    }
}

/// Writes `mi_curves.csv`, `auroc_table.csv`, `tsne.csv` (when t-SNE
/// coordinates are given) and `report.json` into `out_dir`.
pub fn emit_report(inputs: &ReportInputs<'_>, out_dir: &Path) -> Result<Report> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let path = out_dir.join("mi_curves.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["epoch", "term", "value"]).map_err(csv_err(&path))?;
    if let Some(log) = inputs.log {
        for r in &log.records {
            for (term, value) in log.term_values(r) {
                w.serialize((r.epoch, term, value)).map_err(csv_err(&path))?;
            }
        }
    }
    w.flush().map_err(io_err(&path))?;

    let path = out_dir.join("auroc_table.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["embedding_kind", "label", "role", "auroc", "n_train", "n_test", "seed"])
        .map_err(csv_err(&path))?;
    for p in inputs.probes {
        let role = match p.role {
            LabelRole::Task => "task",
            LabelRole::Sensitive => "sensitive",
        };
        w.serialize((p.embedding_kind.as_str(), &p.label_name, role, p.auroc, p.n_train, p.n_test, p.seed))
            .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    if let Some(t) = inputs.tsne {
        let path = out_dir.join("tsne.csv");
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(["x", "y", "task_label", "sens_label"]).map_err(csv_err(&path))?;
        for (i, row) in t.coords.rows().into_iter().enumerate() {
            w.serialize((row[0], row[1], t.task[i], t.sensitive[i])).map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
    }

    let report = Report::build(inputs);
    let path = out_dir.join("report.json");
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shaper::EpochRecord;

    fn record(epoch: usize, task: f64, sens: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            mi_keep: None,
            mi_task: vec![task],
            mi_sens: vec![sens],
            objective: task - sens,
            critic_steps_used: 20,
            encoder_grad_norm: 0.0,
            skipped_terms: 0,
        }
    }

    fn probe(role: LabelRole, kind: EmbeddingKind, auroc: f64) -> ProbeResult {
        ProbeResult {
            label_name: "l".into(),
            role,
            embedding_kind: kind,
            auroc,
            n_train: 8,
            n_test: 2,
            seed: 0,
        }
    }

    #[test]
    fn reductions_from_log_and_probes() {
        let mut log = TrainingLog::new(false, vec!["task".into()], vec!["sensitive".into()]);
        log.records = vec![record(0, 0.3, 0.40), record(1, 0.29, 0.075)];
        let probes = [
            probe(LabelRole::Sensitive, EmbeddingKind::Original, 0.83),
            probe(LabelRole::Sensitive, EmbeddingKind::Encoded, 0.62),
        ];
        let dir = tempfile::tempdir().unwrap();
        let r = emit_report(
            &ReportInputs {
                config: serde_json::json!({"seed": 1}),
                log: Some(&log),
                probes: &probes,
                mi: None,
                tsne: None,
            },
            dir.path(),
        )
        .unwrap();
        assert!((r.sensitive_mi_reduction_pct.unwrap() - 81.25).abs() < 1e-9);
        assert!((r.sensitive_auroc_drop_pct.unwrap() - 25.301).abs() < 1e-3);
        assert!((r.sensitive_auroc_drop_abs.unwrap() - 0.21).abs() < 1e-12);
        let curves = fs::read_to_string(dir.path().join("mi_curves.csv")).unwrap();
        assert_eq!(curves.lines().count(), 1 + 4);
        assert!(curves.contains("1,sens:sensitive,0.075"));
        assert!(!dir.path().join("tsne.csv").exists());
    }

    #[test]
    fn empty_probe_table_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(
            &ReportInputs {
                config: serde_json::Value::Null,
                log: None,
                probes: &[],
                mi: None,
                tsne: None,
            },
            dir.path(),
        )
        .unwrap();
        let table = fs::read_to_string(dir.path().join("auroc_table.csv")).unwrap();
        assert_eq!(table, "embedding_kind,label,role,auroc,n_train,n_test,seed\n");
    }
}
