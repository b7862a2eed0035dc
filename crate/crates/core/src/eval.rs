//! Coefficient of determination at sequence, target and menu level, block
//! learning curves and Jacobian recency profiles.
//!
//! Grouped levels average within each user first and then across users, so
//! every user carries equal weight in a group mean.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::dataset::{series_stats, Organization, SelectionSequence};
use crate::error::{Error, Result};
use crate::features::FeatureContext;
use crate::model::{forward_window_nudged, recency_jacobians, InputNudge, MenuInputs, ModelParams};

pub const MIN_VARIANCE: f64 = 1e-9;

/// `1 − Σ(y − t)² / Σ(y − ȳ)²`.
pub fn r_squared(y: &[f64], t: &[f64]) -> Result<f64> {
    if y.len() != t.len() {
        return Err(Error::Shape(format!("{} observations vs {} predictions", y.len(), t.len())));
    }
    if y.len() < 2 {
        return Err(Error::UndefinedR2(format!("{} samples", y.len())));
    }
    let stats = series_stats(y);
    if stats.variance_sum <= MIN_VARIANCE {
        return Err(Error::UndefinedR2(format!(
            "observation variance {:e} <= {MIN_VARIANCE:e}",
            stats.variance_sum
        )));
    }
    let sse: f64 = y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - sse / stats.variance_sum)
}

fn check_alignment(seqs: &[SelectionSequence], preds: &[Vec<f64>]) -> Result<()> {
    if seqs.len() != preds.len() {
        return Err(Error::Shape(format!("{} sequences vs {} prediction series", seqs.len(), preds.len())));
    }
    for (s, p) in seqs.iter().zip(preds) {
        if s.trials.len() != p.len() {
            return Err(Error::Shape(format!(
                "user `{}`: {} trials vs {} predictions",
                s.user_id,
                s.trials.len(),
                p.len()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct GroupKey {
    pub menu_id: String,
    pub organization: Organization,
    pub n: usize,
    /// 1-based target position; `None` at menu level.
    pub position: Option<usize>,
    pub block: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRow {
    pub key: GroupKey,
    pub users: usize,
    pub mean_observed: f64,
    pub mean_predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub overall: f64,
    pub per_org: BTreeMap<Organization, f64>,
    pub per_length: BTreeMap<usize, f64>,
    pub groups: Vec<GroupRow>,
}

#[derive(Default)]
struct Acc {
    obs: f64,
    pred: f64,
    count: usize,
}

fn grouped(
    seqs: &[SelectionSequence],
    preds: &[Vec<f64>],
    with_position: bool,
) -> Result<Vec<GroupRow>> {
    check_alignment(seqs, preds)?;
    // (key, user) → within-user sums
    let mut per_user: BTreeMap<(GroupKey, &str), Acc> = BTreeMap::new();
    for (s, p) in seqs.iter().zip(preds) {
        for (t, &pred) in s.trials.iter().zip(p) {
            let key = GroupKey {
                menu_id: s.menu.menu_id.clone(),
                organization: s.menu.organization,
                n: s.menu.n(),
                position: with_position.then_some(t.target_index + 1),
                block: t.block_index,
            };
            let a = per_user.entry((key, s.user_id.as_str())).or_default();
            a.obs += t.observed_time;
            a.pred += pred;
            a.count += 1;
        }
    }
    let mut groups: BTreeMap<GroupKey, Acc> = BTreeMap::new();
    for ((key, _), a) in per_user {
        let g = groups.entry(key).or_default();
        g.obs += a.obs / a.count as f64;
        g.pred += a.pred / a.count as f64;
        g.count += 1;
    }
    Ok(groups
        .into_iter()
        .map(|(key, g)| GroupRow {
            key,
            users: g.count,
            mean_observed: g.obs / g.count as f64,
            mean_predicted: g.pred / g.count as f64,
        })
        .collect())
}

fn r2_of_groups<'a>(rows: impl Iterator<Item = &'a GroupRow>) -> Result<f64> {
    let (y, t): (Vec<f64>, Vec<f64>) = rows.map(|r| (r.mean_observed, r.mean_predicted)).unzip();
    if y.len() < 2 {
        return Err(Error::UndefinedR2(format!("{} group(s)", y.len())));
    }
    r_squared(&y, &t)
}

fn level_report(groups: Vec<GroupRow>) -> Result<LevelReport> {
    let overall = r2_of_groups(groups.iter())?;
    let mut per_org = BTreeMap::new();
    for org in Organization::ALL {
        if let Ok(r) = r2_of_groups(groups.iter().filter(|g| g.key.organization == org)) {
            per_org.insert(org, r);
        }
    }
    let mut per_length = BTreeMap::new();
    let lengths: std::collections::BTreeSet<usize> = groups.iter().map(|g| g.key.n).collect();
    for n in lengths {
        if let Ok(r) = r2_of_groups(groups.iter().filter(|g| g.key.n == n)) {
            per_length.insert(n, r);
        }
    }
    Ok(LevelReport {
        overall,
        per_org,
        per_length,
        groups,
    })
}

/// Groups by (menu, organization, n, target position, block).
pub fn target_level_r2(seqs: &[SelectionSequence], preds: &[Vec<f64>]) -> Result<LevelReport> {
    level_report(grouped(seqs, preds, true)?)
}

/// Groups by (menu, organization, n, block).
pub fn menu_level_r2(seqs: &[SelectionSequence], preds: &[Vec<f64>]) -> Result<LevelReport> {
    level_report(grouped(seqs, preds, false)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceRow {
    pub user_id: String,
    pub menu_id: String,
    pub organization: Organization,
    pub n: usize,
    pub trials: usize,
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceLevelReport {
    /// Mean of per-sequence R² over sequences where it is defined.
    pub overall: f64,
    pub per_org: BTreeMap<Organization, f64>,
    pub per_length: BTreeMap<usize, f64>,
    pub rows: Vec<SequenceRow>,
}

fn mean_defined<'a>(rows: impl Iterator<Item = &'a SequenceRow>) -> Option<f64> {
    let vals: Vec<f64> = rows.filter_map(|r| r.r2).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn sequence_level_r2(seqs: &[SelectionSequence], preds: &[Vec<f64>]) -> Result<SequenceLevelReport> {
    check_alignment(seqs, preds)?;
    let rows: Vec<SequenceRow> = seqs
        .iter()
        .zip(preds)
        .map(|(s, p)| SequenceRow {
            user_id: s.user_id.clone(),
            menu_id: s.menu.menu_id.clone(),
            organization: s.menu.organization,
            n: s.menu.n(),
            trials: s.trials.len(),
            r2: r_squared(&s.observed(), p).ok(),
        })
        .collect();
    let overall = mean_defined(rows.iter())
        .ok_or_else(|| Error::UndefinedR2("no sequence with defined R²".into()))?;
    let mut per_org = BTreeMap::new();
    for org in Organization::ALL {
        if let Some(r) = mean_defined(rows.iter().filter(|r| r.organization == org)) {
            per_org.insert(org, r);
        }
    }
    let mut per_length = BTreeMap::new();
    for n in rows.iter().map(|r| r.n).collect::<std::collections::BTreeSet<_>>() {
        if let Some(r) = mean_defined(rows.iter().filter(|r| r.n == n)) {
            per_length.insert(n, r);
        }
    }
    Ok(SequenceLevelReport {
        overall,
        per_org,
        per_length,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockRow {
    pub n: usize,
    pub block: usize,
    pub trials: usize,
    pub mean_predicted: f64,
    pub mean_observed: f64,
}

/// Mean predicted and observed time per (menu length, block), pooled over
/// users and target positions.
pub fn block_curves(seqs: &[SelectionSequence], preds: &[Vec<f64>]) -> Result<Vec<BlockRow>> {
    check_alignment(seqs, preds)?;
    let mut acc: BTreeMap<(usize, usize), Acc> = BTreeMap::new();
    for (s, p) in seqs.iter().zip(preds) {
        for (t, &pred) in s.trials.iter().zip(p) {
            let a = acc.entry((s.menu.n(), t.block_index)).or_default();
            a.obs += t.observed_time;
            a.pred += pred;
            a.count += 1;
        }
    }
    Ok(acc
        .into_iter()
        .map(|((n, block), a)| BlockRow {
            n,
            block,
            trials: a.count,
            mean_predicted: a.pred / a.count as f64,
            mean_observed: a.obs / a.count as f64,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    pub organization: Organization,
    pub lag: usize,
    pub pairs: usize,
    /// `None` when no (trial, lag) pair qualified.
    pub mean_abs: Option<f64>,
}

/// Mean |∂t_i / ∂target flag of the same item at step i − lag| per
/// organization and lag. Every (organization, lag) present in the data is
/// reported; lags with no qualifying pair are flagged with `mean_abs = None`.
pub fn jacobian_recency_profile(
    params: &ModelParams,
    seqs: &[SelectionSequence],
    ctx: &FeatureContext,
    max_lag: usize,
) -> Result<Vec<ProfileRow>> {
    if max_lag == 0 {
        return Err(Error::Domain("max_lag must be >= 1".into()));
    }
    let mut acc: BTreeMap<(Organization, usize), (f64, usize)> = BTreeMap::new();
    for s in seqs {
        let org = s.menu.organization;
        for lag in 1..=max_lag {
            acc.entry((org, lag)).or_insert((0.0, 0));
        }
        let inputs = MenuInputs::new(&s.menu, ctx)?;
        for (_, lag, d) in recency_jacobians(params, &inputs, &s.targets(), max_lag)? {
            let e = acc.get_mut(&(org, lag)).expect("lag initialized");
            e.0 += d.abs();
            e.1 += 1;
        }
    }
    let rows: Vec<ProfileRow> = acc
        .into_iter()
        .map(|((organization, lag), (sum, pairs))| ProfileRow {
            organization,
            lag,
            pairs,
            mean_abs: (pairs > 0).then(|| sum / pairs as f64),
        })
        .collect();
    for r in rows.iter().filter(|r| r.pairs == 0) {
        log::warn!("jacobian profile: no qualifying pairs for {} at lag {}", r.organization, r.lag);
    }
    Ok(rows)
}

/// One recency derivative checked against a central difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpotCheck {
    pub step: usize,
    pub lag: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl SpotCheck {
    pub fn rel_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(1e-8)
    }
}

/// Finite-difference check of up to `count` recency derivatives, taking the
/// first qualifying pair of successive sequences.
pub fn jacobian_spot_check(
    params: &ModelParams,
    seqs: &[SelectionSequence],
    ctx: &FeatureContext,
    max_lag: usize,
    count: usize,
    h: f64,
) -> Result<Vec<SpotCheck>> {
    let mut out = Vec::new();
    for s in seqs {
        if out.len() >= count {
            break;
        }
        let inputs = MenuInputs::new(&s.menu, ctx)?;
        let targets = s.targets();
        // only the prefix up to the first qualifying trial is needed
        let Some(i) = (1..targets.len()).find(|&i| (1..=max_lag.min(i)).any(|l| targets[i - l] == targets[i])) else {
            continue;
        };
        let prefix = &targets[..=i];
        let (_, lag, analytic) = recency_jacobians(params, &inputs, prefix, max_lag)?
            .into_iter()
            .find(|&(step, _, _)| step == i)
            .expect("qualifying pair");
        let zero = vec![0.0; params.dims.pred_cells];
        let at = |delta: f64| -> Result<f64> {
            let nudge = InputNudge { step: i - lag, item: targets[i], coord: 0, delta };
            Ok(forward_window_nudged(params, &inputs, prefix, &zero, &zero, None, Some(nudge))?.0[i])
        };
        let numeric = (at(h)? - at(-h)?) / (2.0 * h);
        out.push(SpotCheck { step: i, lag, analytic, numeric });
    }
    Ok(out)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Shape(format!("spearman on {} and {} values", x.len(), y.len())));
    }
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mx = rx.iter().sum::<f64>() / rx.len() as f64;
    let my = ry.iter().sum::<f64>() / ry.len() as f64;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::UndefinedR2("constant series in rank correlation".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Everything computed for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub sequence: Option<SequenceLevelReport>,
    pub target: Option<LevelReport>,
    pub menu: Option<LevelReport>,
    pub blocks: Option<Vec<BlockRow>>,
    pub jacobian: Option<Vec<ProfileRow>>,
}

fn r4(x: f64) -> String {
    format!("{x:.4}")
}

pub fn write_level_csv<W: Write>(report: &LevelReport, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let with_pos = report.groups.first().is_some_and(|g| g.key.position.is_some());
    let mut header = vec!["menu_id", "org", "n"];
    if with_pos {
        header.push("position");
    }
    header.extend(["block", "users", "mean_observed_s", "mean_predicted_s"]);
    w.write_record(&header)?;
    for g in &report.groups {
        let mut rec = vec![g.key.menu_id.clone(), g.key.organization.code().to_string(), g.key.n.to_string()];
        if let Some(p) = g.key.position {
            rec.push(p.to_string());
        }
        rec.extend([
            g.key.block.to_string(),
            g.users.to_string(),
            g.mean_observed.to_string(),
            g.mean_predicted.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sequence_csv<W: Write>(report: &SequenceLevelReport, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["user", "menu_id", "org", "n", "trials", "r2"])?;
    for r in &report.rows {
        w.write_record([
            r.user_id.clone(),
            r.menu_id.clone(),
            r.organization.code().to_string(),
            r.n.to_string(),
            r.trials.to_string(),
            r.r2.map(r4).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_block_csv<W: Write>(rows: &[BlockRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["n", "block", "trials", "mean_predicted_s", "mean_observed_s"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.block.to_string(),
            r.trials.to_string(),
            r.mean_predicted.to_string(),
            r.mean_observed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_profile_csv<W: Write>(rows: &[ProfileRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["org", "lag", "pairs", "mean_abs_derivative"])?;
    for r in rows {
        w.write_record([
            r.organization.code().to_string(),
            r.lag.to_string(),
            r.pairs.to_string(),
            r.mean_abs.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `level,slice,r2` rows with R² at 4 decimals.
pub fn write_r2_summary_csv<W: Write>(report: &EvalReport, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["level", "slice", "r2"])?;
    let mut emit = |level: &str, overall: f64, per_org: &BTreeMap<Organization, f64>, per_len: &BTreeMap<usize, f64>| -> Result<()> {
        w.write_record([level, "overall", &r4(overall)])?;
        for (o, r) in per_org {
            w.write_record([level, &format!("org={}", o.code()), &r4(*r)])?;
        }
        for (n, r) in per_len {
            w.write_record([level, &format!("n={n}"), &r4(*r)])?;
        }
        Ok(())
    };
    if let Some(s) = &report.sequence {
        emit("sequence", s.overall, &s.per_org, &s.per_length)?;
    }
    if let Some(t) = &report.target {
        emit("target", t.overall, &t.per_org, &t.per_length)?;
    }
    if let Some(m) = &report.menu {
        emit("menu", m.overall, &m.per_org, &m.per_length)?;
    }
    w.flush()?;
    Ok(())
}

/// Single-line JSON summary.
pub fn summary_line(report: &EvalReport) -> String {
    let round = |x: f64| (x * 1e4).round() / 1e4;
    let mut obj = serde_json::Map::new();
    if let Some(s) = &report.sequence {
        obj.insert("sequence_r2".into(), round(s.overall).into());
    }
    if let Some(t) = &report.target {
        obj.insert("target_r2".into(), round(t.overall).into());
    }
    if let Some(m) = &report.menu {
        obj.insert("menu_r2".into(), round(m.overall).into());
    }
    if let Some(b) = &report.blocks {
        obj.insert("block_rows".into(), b.len().into());
    }
    serde_json::Value::Object(obj).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{generate_corpus, mixed_designs, noiseless_times, OracleParams};
    use proptest::prelude::*;

    #[test]
    fn r2_examples() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
        assert_eq!(r_squared(&y, &[2.0; 3]).unwrap(), 0.0);
        assert_eq!(r_squared(&y, &[3.0, 2.0, 1.0]).unwrap(), -3.0);
        assert!(matches!(r_squared(&[1.0; 4], &[1.0; 4]), Err(Error::UndefinedR2(_))));
        assert!(r_squared(&[1.0], &[1.0]).is_err());
    }

    fn corpus(ns: &[usize], users: usize, sigma: f64) -> Vec<SelectionSequence> {
        let p = OracleParams { sigma, ..Default::default() };
        generate_corpus(&mixed_designs(ns, &Organization::ALL, users, 12, 5), &p).unwrap()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let seqs = corpus(&[8, 12], 12, 0.0);
        let preds: Vec<Vec<f64>> = seqs.iter().map(|s| noiseless_times(s).unwrap()).collect();
        assert_eq!(target_level_r2(&seqs, &preds).unwrap().overall, 1.0);
        let m = menu_level_r2(&seqs, &preds).unwrap();
        assert_eq!(m.overall, 1.0);
        assert!(m.per_org.values().chain(m.per_length.values()).all(|&r| r == 1.0));
        assert_eq!(sequence_level_r2(&seqs, &preds).unwrap().overall, 1.0);
    }

    #[test]
    fn group_counts() {
        let p = OracleParams::default();
        let designs = mixed_designs(&[8], &[Organization::Unordered], 3, 12, 1);
        let seqs = generate_corpus(&designs, &p).unwrap();
        let preds: Vec<Vec<f64>> = seqs.iter().map(|s| s.observed()).collect();
        let t = target_level_r2(&seqs, &preds).unwrap();
        assert_eq!(t.groups.len(), 96);
        assert!(t.groups.iter().all(|g| g.users == 3));
        let m = menu_level_r2(&seqs, &preds).unwrap();
        assert_eq!(m.groups.len(), 12);
        // menu-level groups are means of target-level groups
        for mg in &m.groups {
            let members: Vec<&GroupRow> = t.groups.iter().filter(|g| g.key.block == mg.key.block).collect();
            assert_eq!(members.len(), 8);
            let obs = members.iter().map(|g| g.mean_observed).sum::<f64>() / 8.0;
            let pred = members.iter().map(|g| g.mean_predicted).sum::<f64>() / 8.0;
            assert!((obs - mg.mean_observed).abs() < 1e-9);
            assert!((pred - mg.mean_predicted).abs() < 1e-9);
        }
    }

    #[test]
    fn single_group_is_undefined() {
        let p = OracleParams::default();
        let designs = mixed_designs(&[1], &[Organization::Unordered], 2, 1, 1);
        let seqs = generate_corpus(&designs, &p).unwrap();
        let preds: Vec<Vec<f64>> = seqs.iter().map(|s| s.observed()).collect();
        assert!(matches!(target_level_r2(&seqs, &preds), Err(Error::UndefinedR2(_))));
    }

    #[test]
    fn identical_users_aggregate_like_one() {
        let seqs = corpus(&[8], 3, 0.15);
        let preds: Vec<Vec<f64>> = seqs.iter().map(|s| s.observed().iter().map(|v| v * 0.9 + 0.05).collect()).collect();
        let one = target_level_r2(&seqs[..1], &preds[..1]);
        let mut many = Vec::new();
        let mut many_p = Vec::new();
        for k in 0..4 {
            let mut s = seqs[0].clone();
            s.user_id = format!("clone{k}");
            many.push(s);
            many_p.push(preds[0].clone());
        }
        let rep = target_level_r2(&many, &many_p);
        assert_eq!(one.unwrap().overall, rep.unwrap().overall);
    }

    #[test]
    fn block_curve_examples() {
        let seqs = corpus(&[8, 12, 16], 9, 0.15);
        let preds: Vec<Vec<f64>> = seqs.iter().map(|s| noiseless_times(s).unwrap()).collect();
        let rows = block_curves(&seqs, &preds).unwrap();
        assert_eq!(rows.len(), 36);
        for r in &rows {
            let obs: Vec<f64> = seqs
                .iter()
                .filter(|s| s.menu.n() == r.n)
                .flat_map(|s| s.trials.iter().filter(|t| t.block_index == r.block).map(|t| t.observed_time))
                .collect();
            let brute = obs.iter().sum::<f64>() / obs.len() as f64;
            assert!((brute - r.mean_observed).abs() < 1e-12);
        }
        // constant data still yields rows
        let mut flat = seqs.clone();
        for s in &mut flat {
            s.trials.iter_mut().for_each(|t| t.observed_time = 1.0);
        }
        assert_eq!(block_curves(&flat, &preds).unwrap().len(), 36);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 5.0, 9.0, 100.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn summary_is_one_line() {
        let seqs = corpus(&[8], 3, 0.15);
        let preds: Vec<Vec<f64>> = seqs.iter().map(|s| noiseless_times(s).unwrap()).collect();
        let report = EvalReport {
            sequence: Some(sequence_level_r2(&seqs, &preds).unwrap()),
            target: Some(target_level_r2(&seqs, &preds).unwrap()),
            menu: None,
            blocks: None,
            jacobian: None,
        };
        let line = summary_line(&report);
        assert!(!line.contains('\n'));
        assert!(line.contains("target_r2"));
    }

    proptest! {
        #[test]
        fn r2_invariant_to_pair_order(pairs in proptest::collection::vec((0.1f64..5.0, 0.1f64..5.0), 2..60), seed in any::<u64>()) {
            let (y, t): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            prop_assume!(series_stats(&y).variance_sum > 1e-6);
            let a = r_squared(&y, &t).unwrap();
            let mut shuffled = pairs.clone();
            crate::numkit::RngStream::new(seed).shuffle(&mut shuffled);
            let (y2, t2): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
            let b = r_squared(&y2, &t2).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
            prop_assert!(a <= 1.0);
        }
    }
}
