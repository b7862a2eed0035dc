//! Menus, trials and per-user selection sequences, with the line-delimited
//! JSON file format and user-level splitting.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::numkit::RngStream;

pub const SCHEMA_VERSION: u64 = 1;
pub const MAX_MENU_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Organization {
    Unordered,
    Alphabetical,
    Semantic,
}

impl Organization {
    pub const ALL: [Organization; 3] = [
        Organization::Unordered,
        Organization::Alphabetical,
        Organization::Semantic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Organization::Unordered => "unordered",
            Organization::Alphabetical => "alphabetical",
            Organization::Semantic => "semantic",
        }
    }

    /// Single-letter code used in reports (U/A/S).
    pub fn code(self) -> char {
        match self {
            Organization::Unordered => 'U',
            Organization::Alphabetical => 'A',
            Organization::Semantic => 'S',
        }
    }
}

impl fmt::Display for Organization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Organization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "u" | "unordered" => Ok(Organization::Unordered),
            "a" | "alphabetical" => Ok(Organization::Alphabetical),
            "s" | "semantic" => Ok(Organization::Semantic),
            other => Err(Error::Validation(format!("unknown organization `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MenuSpec {
    pub menu_id: String,
    pub organization: Organization,
    pub items: Vec<String>,
}

impl MenuSpec {
    pub fn n(&self) -> usize {
        self.items.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 || n > MAX_MENU_LEN {
            return Err(Error::Validation(format!(
                "menu `{}` has {n} items (allowed 1..={MAX_MENU_LEN})",
                self.menu_id
            )));
        }
        let mut seen = HashSet::new();
        for item in &self.items {
            if !seen.insert(item.as_str()) {
                return Err(Error::Validation(format!(
                    "menu `{}` repeats item `{item}`",
                    self.menu_id
                )));
            }
        }
        Ok(())
    }
}

/// One selection. Blocks are numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    #[serde(rename = "block")]
    pub block_index: usize,
    #[serde(rename = "target")]
    pub target_index: usize,
    #[serde(rename = "time_s")]
    pub observed_time: f64,
    #[serde(rename = "noiseless_s", default, skip_serializing_if = "Option::is_none")]
    pub noiseless_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSequence {
    pub user_id: String,
    pub menu: MenuSpec,
    pub trials: Vec<Trial>,
}

impl SelectionSequence {
    pub fn validate(&self) -> Result<()> {
        self.menu.validate()?;
        if self.trials.is_empty() {
            return Err(Error::Validation(format!(
                "sequence of user `{}` has no trials",
                self.user_id
            )));
        }
        let n = self.menu.n();
        for (i, t) in self.trials.iter().enumerate() {
            if t.target_index >= n {
                return Err(Error::Validation(format!(
                    "trial {i}: target {} out of range for menu of {n} items",
                    t.target_index
                )));
            }
            if !(t.observed_time.is_finite() && t.observed_time > 0.0) {
                return Err(Error::Validation(format!(
                    "trial {i}: observed time {} is not a positive finite number",
                    t.observed_time
                )));
            }
            if let Some(nl) = t.noiseless_time {
                if !(nl.is_finite() && nl > 0.0) {
                    return Err(Error::Validation(format!(
                        "trial {i}: noiseless time {nl} is not a positive finite number"
                    )));
                }
            }
            if t.block_index == 0 {
                return Err(Error::Validation(format!("trial {i}: blocks start at 1")));
            }
        }
        Ok(())
    }

    pub fn observed(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.observed_time).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.trials.iter().map(|t| t.target_index).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceStats {
    pub mean_time: f64,
    pub variance_sum: f64,
    pub length: usize,
}

/// Mean and sum of squared deviations of a non-empty series.
pub fn series_stats(y: &[f64]) -> SequenceStats {
    let len = y.len();
    let mean_time = y.iter().sum::<f64>() / len as f64;
    let variance_sum = y.iter().map(|v| (v - mean_time).powi(2)).sum();
    SequenceStats {
        mean_time,
        variance_sum,
        length: len,
    }
}

pub fn sequence_stats(seq: &SelectionSequence) -> SequenceStats {
    series_stats(&seq.observed())
}

#[derive(Serialize)]
struct RecordOut<'a> {
    schema_version: u64,
    user_id: &'a str,
    menu: &'a MenuSpec,
    trials: &'a [Trial],
}

/// One JSON object per line.
pub fn write_sequences<W: Write>(seqs: &[SelectionSequence], mut sink: W) -> Result<()> {
    for seq in seqs {
        seq.validate()?;
        let rec = RecordOut {
            schema_version: SCHEMA_VERSION,
            user_id: &seq.user_id,
            menu: &seq.menu,
            trials: &seq.trials,
        };
        serde_json::to_writer(&mut sink, &rec)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

const RECORD_KEYS: &[&str] = &["schema_version", "user_id", "menu", "trials"];
const MENU_KEYS: &[&str] = &["menu_id", "organization", "items"];
const TRIAL_KEYS: &[&str] = &["block", "target", "time_s", "noiseless_s"];

fn schema(record: usize, field: &str, msg: impl Into<String>) -> Error {
    Error::Schema {
        record,
        field: field.to_string(),
        msg: msg.into(),
    }
}

fn warn_unknown(record: usize, scope: &str, obj: &Map<String, Value>, known: &[&str]) {
    for key in obj.keys().filter(|k| !known.contains(&k.as_str())) {
        log::warn!("record {record}: ignoring unknown field `{scope}{key}`");
    }
}

fn field<'a>(obj: &'a Map<String, Value>, record: usize, name: &str) -> Result<&'a Value> {
    obj.get(name).ok_or_else(|| schema(record, name, "missing"))
}

fn as_count(v: &Value, record: usize, name: &str) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| schema(record, name, "expected a non-negative integer"))
}

fn as_real(v: &Value, record: usize, name: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| schema(record, name, "expected a number"))
}

fn parse_record(value: Value, record: usize) -> Result<SelectionSequence> {
    let obj = value
        .as_object()
        .ok_or_else(|| schema(record, "<record>", "expected a JSON object"))?;
    warn_unknown(record, "", obj, RECORD_KEYS);

    let version = as_count(field(obj, record, "schema_version")?, record, "schema_version")?;
    if version as u64 != SCHEMA_VERSION {
        return Err(schema(
            record,
            "schema_version",
            format!("unsupported version {version}, expected {SCHEMA_VERSION}"),
        ));
    }
    let user_id = field(obj, record, "user_id")?
        .as_str()
        .ok_or_else(|| schema(record, "user_id", "expected a string"))?
        .to_string();

    let menu_obj = field(obj, record, "menu")?
        .as_object()
        .ok_or_else(|| schema(record, "menu", "expected an object"))?;
    warn_unknown(record, "menu.", menu_obj, MENU_KEYS);
    let menu_id = field(menu_obj, record, "menu_id")
        .map_err(|_| schema(record, "menu.menu_id", "missing"))?
        .as_str()
        .ok_or_else(|| schema(record, "menu.menu_id", "expected a string"))?
        .to_string();
    let organization = field(menu_obj, record, "organization")
        .map_err(|_| schema(record, "menu.organization", "missing"))?
        .as_str()
        .ok_or_else(|| schema(record, "menu.organization", "expected a string"))?
        .parse::<Organization>()
        .map_err(|e| schema(record, "menu.organization", e.to_string()))?;
    let items = field(menu_obj, record, "items")
        .map_err(|_| schema(record, "menu.items", "missing"))?
        .as_array()
        .ok_or_else(|| schema(record, "menu.items", "expected an array"))?
        .iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| schema(record, "menu.items", "expected strings"))
        })
        .collect::<Result<Vec<_>>>()?;

    let trial_values = field(obj, record, "trials")?
        .as_array()
        .ok_or_else(|| schema(record, "trials", "expected an array"))?;
    let mut trials = Vec::with_capacity(trial_values.len());
    for (i, tv) in trial_values.iter().enumerate() {
        let t = tv
            .as_object()
            .ok_or_else(|| schema(record, &format!("trials[{i}]"), "expected an object"))?;
        warn_unknown(record, &format!("trials[{i}]."), t, TRIAL_KEYS);
        let get = |name: &str| {
            t.get(name)
                .ok_or_else(|| schema(record, &format!("trials[{i}].{name}"), "missing"))
        };
        let fname = |name: &str| format!("trials[{i}].{name}");
        trials.push(Trial {
            block_index: as_count(get("block")?, record, &fname("block"))?,
            target_index: as_count(get("target")?, record, &fname("target"))?,
            observed_time: as_real(get("time_s")?, record, &fname("time_s"))?,
            noiseless_time: match t.get("noiseless_s") {
                None | Some(Value::Null) => None,
                Some(v) => Some(as_real(v, record, &fname("noiseless_s"))?),
            },
        });
    }

    let seq = SelectionSequence {
        user_id,
        menu: MenuSpec {
            menu_id,
            organization,
            items,
        },
        trials,
    };
    seq.validate()
        .map_err(|e| Error::Validation(format!("record {record}: {e}")))?;
    Ok(seq)
}

/// Read a line-delimited dataset. Record numbers in errors are 1-based
/// line numbers; blank lines are skipped.
pub fn read_sequences<R: BufRead>(source: R) -> Result<Vec<SelectionSequence>> {
    let mut out = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let record = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: record,
            msg: e.to_string(),
        })?;
        out.push(parse_record(value, record)?);
    }
    Ok(out)
}

/// Flat per-trial CSV for spreadsheet inspection.
pub fn write_trials_csv<W: Write>(seqs: &[SelectionSequence], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["user", "menu", "org", "n", "block", "target", "time_s"])?;
    for seq in seqs {
        for t in &seq.trials {
            w.write_record([
                seq.user_id.clone(),
                seq.menu.menu_id.clone(),
                seq.menu.organization.code().to_string(),
                seq.menu.n().to_string(),
                t.block_index.to_string(),
                t.target_index.to_string(),
                t.observed_time.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Partition sequences by user. Users are sorted, shuffled with `seed`, and
/// the first `round(train_fraction * users)` go to the training side.
pub fn split_by_user(
    seqs: &[SelectionSequence],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<SelectionSequence>, Vec<SelectionSequence>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!(
            "train fraction {train_fraction} not in (0, 1)"
        )));
    }
    let users: BTreeSet<&str> = seqs.iter().map(|s| s.user_id.as_str()).collect();
    if users.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 users, found {}",
            users.len()
        )));
    }
    let mut users: Vec<&str> = users.into_iter().collect();
    RngStream::new(seed).shuffle(&mut users);
    let n_train = ((train_fraction * users.len() as f64).round() as usize).clamp(1, users.len() - 1);
    let train_users: HashSet<&str> = users[..n_train].iter().copied().collect();
    let (train, test) = seqs
        .iter()
        .cloned()
        .partition(|s| train_users.contains(s.user_id.as_str()));
    Ok((train, test))
}
