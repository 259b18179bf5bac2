//! Metrics records and their line format.
//!
//! One record per line, fields as `key=value` separated by single spaces, in
//! this order:
//!
//! `label step train_loss val_loss val_ppl traj_mse energy_err disabled`
//! followed by `ppl.<kind>=<value>` for each system kind in name order.
//!
//! Absent values are written as `-`; `disabled` is a comma list or `-`.
//! Floats use Rust's shortest round-trip formatting, so parsing a line gives
//! back the exact values. Wall-clock time is not part of the line.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::Component;

#[derive(Clone, Debug, PartialEq)]
pub struct KindScore {
    pub kind: String,
    pub loss: f64,
    pub perplexity: f64,
    pub tokens: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub label: String,
    pub step: usize,
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub val_perplexity: f64,
    pub per_kind: Vec<KindScore>,
    pub trajectory_mse: Option<f64>,
    pub energy_error: Option<f64>,
    pub disabled: Vec<Component>,
    pub seconds: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

impl MetricsRecord {
    pub fn to_line(&self) -> String {
        let disabled = if self.disabled.is_empty() {
            "-".to_string()
        } else {
            self.disabled.iter().map(|c| c.name()).collect::<Vec<_>>().join(",")
        };
        let mut s = format!(
            "label={} step={} train_loss={} val_loss={} val_ppl={} traj_mse={} energy_err={} disabled={}",
            self.label,
            self.step,
            opt(self.train_loss),
            self.val_loss,
            self.val_perplexity,
            opt(self.trajectory_mse),
            opt(self.energy_error),
            disabled
        );
        for k in &self.per_kind {
            let _ = write!(s, " ppl.{}={}", k.kind, k.perplexity);
        }
        s
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidArgument(format!("metrics line: {m}"));
        let mut rec = MetricsRecord {
            label: String::new(),
            step: 0,
            train_loss: None,
            val_loss: f64::NAN,
            val_perplexity: f64::NAN,
            per_kind: Vec::new(),
            trajectory_mse: None,
            energy_error: None,
            disabled: Vec::new(),
            seconds: 0.0,
        };
        let float = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad number {v:?}")));
        let opt_float = |v: &str| if v == "-" { Ok(None) } else { float(v).map(Some) };
        for field in line.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| bad(format!("bad field {field:?}")))?;
            match k {
                "label" => rec.label = v.to_string(),
                "step" => rec.step = v.parse().map_err(|_| bad(format!("bad step {v:?}")))?,
                "train_loss" => rec.train_loss = opt_float(v)?,
                "val_loss" => rec.val_loss = float(v)?,
                "val_ppl" => rec.val_perplexity = float(v)?,
                "traj_mse" => rec.trajectory_mse = opt_float(v)?,
                "energy_err" => rec.energy_error = opt_float(v)?,
                "disabled" if v != "-" => {
                    rec.disabled = v.split(',').map(str::parse).collect::<Result<_>>()?;
                }
                "disabled" => {}
                _ => match k.strip_prefix("ppl.") {
                    Some(kind) => {
                        let p = float(v)?;
                        rec.per_kind.push(KindScore {
                            kind: kind.to_string(),
                            loss: p.ln(),
                            perplexity: p,
                            tokens: 0,
                        });
                    }
                    None => return Err(bad(format!("unknown key {k:?}"))),
                },
            }
        }
        Ok(rec)
    }
}

pub fn metrics_text(records: &[MetricsRecord]) -> String {
    records.iter().map(|r| r.to_line() + "\n").collect()
}
