//! CSV training logs.
//!
//! Embedding log columns: `step, L_kd, L_d_pos, L_d_neg, mean_w,
//! psnr_check_recovery`, then `check_disruption, kd_view, normal_view` and
//! one `w_<layer>` column per decoder layer. `psnr_check_recovery` is empty
//! on steps where it was not measured.

use std::path::Path;

use concealgs_core::train::{StepLog, TeacherLog};

use crate::error::Result;
use crate::io::write_bytes;

pub const EMBED_COLUMNS: [&str; 9] = [
    "step",
    "L_kd",
    "L_d_pos",
    "L_d_neg",
    "mean_w",
    "psnr_check_recovery",
    "check_disruption",
    "kd_view",
    "normal_view",
];

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner()
        .map_err(|e| crate::error::Error::Usage(format!("csv buffer: {e}")))
}

pub fn embed_log_csv(log: &[StepLog]) -> Result<Vec<u8>> {
    let layers = log.iter().map(|l| l.weights.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = EMBED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((1..=layers).map(|i| format!("w_{i}")));
    w.write_record(&header)?;
    for l in log {
        let mut row = vec![
            l.step.to_string(),
            l.l_kd.to_string(),
            l.l_d_pos.to_string(),
            l.l_d_neg.to_string(),
            l.mean_w.to_string(),
            l.psnr_check_recovery
                .map(|p| p.to_string())
                .unwrap_or_default(),
            l.check_disruption.to_string(),
            l.kd_view.to_string(),
            l.normal_view.to_string(),
        ];
        row.extend(
            (0..layers).map(|i| l.weights.get(i).map(|v| v.to_string()).unwrap_or_default()),
        );
        w.write_record(&row)?;
    }
    finish(w)
}

pub fn teacher_log_csv(log: &[TeacherLog]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "view", "loss"])?;
    for l in log {
        w.write_record([l.step.to_string(), l.view.to_string(), l.loss.to_string()])?;
    }
    finish(w)
}

pub fn write_embed_log(path: &Path, log: &[StepLog]) -> Result<()> {
    write_bytes(path, &embed_log_csv(log)?)
}

pub fn write_teacher_log(path: &Path, log: &[TeacherLog]) -> Result<()> {
    write_bytes(path, &teacher_log_csv(log)?)
}
