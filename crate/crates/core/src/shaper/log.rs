use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `None` when the preservation term is disabled (γ = 0).
    pub mi_keep: Option<f64>,
    pub mi_task: Vec<f64>,
    pub mi_sens: Vec<f64>,
    pub objective: f64,
    pub critic_steps_used: usize,
    pub encoder_grad_norm: f64,
    /// Term evaluations skipped because a batch held a single label class.
    pub skipped_terms: usize,
}

/// Per-epoch epoch-mean MI estimates of every term.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub has_keep: bool,
    pub task_names: Vec<String>,
    pub sens_names: Vec<String>,
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn new(has_keep: bool, task_names: Vec<String>, sens_names: Vec<String>) -> Self {
        Self {
            has_keep,
            task_names,
            sens_names,
            records: Vec::new(),
        }
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// `(term, value)` pairs of one record, named `keep`, `task:<name>`, `sens:<name>`.
    pub fn term_values(&self, record: &EpochRecord) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        if let Some(v) = record.mi_keep {
            out.push(("keep".to_owned(), v));
        }
        for (name, &v) in self.task_names.iter().zip(&record.mi_task) {
            out.push((format!("task:{name}"), v));
        }
        for (name, &v) in self.sens_names.iter().zip(&record.mi_sens) {
            out.push((format!("sens:{name}"), v));
        }
        out
    }

    /// One row per epoch.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["epoch".to_owned()];
        if self.has_keep {
            header.push("mi_keep".to_owned());
        }
        header.extend(self.task_names.iter().map(|n| format!("mi_task:{n}")));
        header.extend(self.sens_names.iter().map(|n| format!("mi_sens:{n}")));
        header.extend(
            ["objective", "critic_steps_used", "encoder_grad_norm", "skipped_terms"]
                .iter()
                .map(|s| s.to_string()),
        );
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.epoch.to_string()];
            if self.has_keep {
                row.push(r.mi_keep.unwrap_or(f64::NAN).to_string());
            }
            row.extend(r.mi_task.iter().map(f64::to_string));
            row.extend(r.mi_sens.iter().map(f64::to_string));
            row.push(r.objective.to_string());
            row.push(r.critic_steps_used.to_string());
            row.push(r.encoder_grad_norm.to_string());
            row.push(r.skipped_terms.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
