//! Trajectory files and dataset manifests.
//!
//! A trajectory file starts with the schema line `#vamo-trajectory v1`,
//! then a column line, then one comma-separated step per line:
//!
//! ```text
//! day,task,t,budget_left,time_left_frac,spend_rate,win_rate,avg_value,action,reward,cost
//! ```
//!
//! Consecutive lines belong to the same trajectory until `t` returns to 0.
//! Quality is not stored; it is recomputed from the manifest's reference
//! returns.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::{BidState, StepRecord, Trajectory};
use crate::error::{Error, Result};

pub const TRAJECTORY_SCHEMA: &str = "#vamo-trajectory v1";
const COLUMNS: &str =
    "day,task,t,budget_left,time_left_frac,spend_rate,win_rate,avg_value,action,reward,cost";

pub fn write_trajectories<W: Write>(mut out: W, trajectories: &[Trajectory]) -> Result<()> {
    writeln!(out, "{TRAJECTORY_SCHEMA}")?;
    writeln!(out, "{COLUMNS}")?;
    for tr in trajectories {
        for (t, s) in tr.steps.iter().enumerate() {
            let st = &s.state;
            writeln!(
                out,
                "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                tr.day,
                tr.task,
                t,
                st.budget_left,
                st.time_left_frac,
                st.spend_rate,
                st.recent_win_rate,
                st.recent_avg_value,
                s.action,
                s.reward,
                s.cost
            )?;
        }
    }
    Ok(())
}

/// Reads trajectories; `quality` is left at 0 until
/// [`DatasetManifest::assign_quality`] is applied.
pub fn read_trajectories<R: BufRead>(input: R) -> Result<Vec<Trajectory>> {
    let mut lines = input.lines();
    let schema = lines.next().transpose()?.unwrap_or_default();
    if schema.trim() != TRAJECTORY_SCHEMA {
        return Err(Error::Parse(format!(
            "unexpected trajectory schema line {schema:?}"
        )));
    }
    let columns = lines.next().transpose()?.unwrap_or_default();
    if columns.trim() != COLUMNS {
        return Err(Error::Parse(format!(
            "unexpected trajectory columns {columns:?}"
        )));
    }
    let mut out: Vec<Trajectory> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 3;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(Error::Parse(format!(
                "line {lineno}: expected 11 fields, got {}",
                f.len()
            )));
        }
        let int = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("line {lineno}: {e}")))
        };
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {lineno}: {e}")))
        };
        let (day, task, t) = (int(f[0])?, int(f[1])?, int(f[2])?);
        let record = StepRecord {
            state: BidState {
                step: t,
                budget_left: num(f[3])?,
                time_left_frac: num(f[4])?,
                spend_rate: num(f[5])?,
                recent_win_rate: num(f[6])?,
                recent_avg_value: num(f[7])?,
                trailing: Default::default(),
            },
            action: num(f[8])?,
            reward: num(f[9])?,
            cost: num(f[10])?,
        };
        let continues = out
            .last()
            .is_some_and(|tr| t != 0 && tr.day == day && tr.task == task && tr.steps.len() == t);
        if continues {
            out.last_mut().expect("checked above").steps.push(record);
        } else if t == 0 {
            out.push(Trajectory {
                task,
                day,
                steps: vec![record],
                quality: 0.0,
            });
        } else {
            return Err(Error::Parse(format!(
                "line {lineno}: step {t} does not continue a trajectory"
            )));
        }
    }
    Ok(out)
}

/// `key = value` description of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub config_hash: String,
    pub seed: u64,
    pub days: usize,
    pub counts: Vec<usize>,
    pub reference_returns: Vec<f64>,
    pub trajectory_file: String,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        format!(
            "schema = vamo-dataset v1\nconfig_hash = {}\nseed = {}\ndays = {}\ncounts = {}\nreference_returns = {}\ntrajectory_file = {}\n",
            self.config_hash,
            self.seed,
            self.days,
            join(self.counts.iter().map(ToString::to_string).collect()),
            join(self.reference_returns.iter().map(|r| format!("{r:e}")).collect()),
            self.trajectory_file,
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("manifest line without '=': {line:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .cloned()
                .ok_or_else(|| Error::Parse(format!("manifest missing key {k}")))
        };
        if get("schema")? != "vamo-dataset v1" {
            return Err(Error::Parse("unsupported manifest schema".into()));
        }
        let parse_err = |e: std::fmt::Arguments| Error::Parse(e.to_string());
        let list = |k: &str| -> Result<Vec<String>> {
            Ok(get(k)?
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect())
        };
        Ok(Self {
            config_hash: get("config_hash")?,
            seed: get("seed")?
                .parse()
                .map_err(|e| parse_err(format_args!("seed: {e}")))?,
            days: get("days")?
                .parse()
                .map_err(|e| parse_err(format_args!("days: {e}")))?,
            counts: list("counts")?
                .iter()
                .map(|s| {
                    s.parse()
                        .map_err(|e| parse_err(format_args!("counts: {e}")))
                })
                .collect::<Result<_>>()?,
            reference_returns: list("reference_returns")?
                .iter()
                .map(|s| {
                    s.parse()
                        .map_err(|e| parse_err(format_args!("reference_returns: {e}")))
                })
                .collect::<Result<_>>()?,
            trajectory_file: get("trajectory_file")?,
        })
    }

    /// Sets each trajectory's quality to return / reference return.
    pub fn assign_quality(&self, trajectories: &mut [Trajectory]) -> Result<()> {
        for tr in trajectories {
            let r = *self
                .reference_returns
                .get(tr.task)
                .ok_or(Error::UnknownTask(tr.task))?;
            tr.quality = tr.total_return() / r;
        }
        Ok(())
    }
}
