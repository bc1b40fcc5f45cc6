use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_HEADER: [&str; 10] = [
    "t",
    "train_loss",
    "val_loss",
    "eta_t",
    "r_t",
    "k_t",
    "target_norm",
    "actual_norm",
    "norm_ratio",
    "grad_norm",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: u64,
    /// Loss of the step's batch, at the parameters the gradient was taken at.
    pub train_loss: f64,
    /// Held-out loss after the step.
    pub val_loss: f64,
    pub eta_t: f64,
    pub r_t: f64,
    pub k_t: f64,
    pub target_norm: f64,
    pub actual_norm: f64,
    pub norm_ratio: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub initial_norm: f64,
    pub initial_val_loss: f64,
    pub rows: Vec<TraceRow>,
}

/// 17 significant digits, enough to round-trip any f64 through text.
pub(crate) fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

impl RunTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn final_ratio(&self) -> Option<f64> {
        self.last().map(|r| r.norm_ratio)
    }

    pub fn final_val_loss(&self) -> Option<f64> {
        self.last().map(|r| r.val_loss)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(TRACE_HEADER)?;
        for r in &self.rows {
            let mut rec = vec![r.t.to_string()];
            rec.extend(
                [
                    r.train_loss,
                    r.val_loss,
                    r.eta_t,
                    r.r_t,
                    r.k_t,
                    r.target_norm,
                    r.actual_norm,
                    r.norm_ratio,
                    r.grad_norm,
                ]
                .map(fmt_real),
            );
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is ASCII"))
    }

    /// Reads rows back. The CSV does not carry the initial validation loss,
    /// so it is reported as NaN; the initial norm is recovered from the first
    /// row as actual_norm / norm_ratio.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != TRACE_HEADER {
            return Err(Error::parse(
                1,
                format!("unexpected trace header {header:?}"),
            ));
        }
        let rows: Vec<TraceRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
        let initial_norm = rows
            .first()
            .map(|r| r.actual_norm / r.norm_ratio)
            .unwrap_or(f64::NAN);
        Ok(Self {
            initial_norm,
            initial_val_loss: f64::NAN,
            rows,
        })
    }
}
