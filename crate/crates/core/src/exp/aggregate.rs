use std::collections::BTreeMap;

use crate::track::{TraceRow, TRACE_VALUES};

/// Rows of one trial and whether any of its records was flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialTrace {
    pub rows: Vec<TraceRow>,
    pub error: bool,
}

/// Elementwise mean and population standard deviation across trials.
#[derive(Clone, Debug, PartialEq)]
pub struct Averaged {
    pub mean: Vec<TraceRow>,
    pub std: Vec<TraceRow>,
    pub used: usize,
    pub excluded: usize,
}

/// Two-pass mean and population standard deviation; identical values
/// give their value and an exact zero.
fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    let Some(&first) = v.first() else {
        return (None, None);
    };
    if v.iter().all(|&x| x == first) {
        return (Some(first), Some(0.0));
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (Some(m), Some(var.sqrt()))
}

/// Aligns rows by `(epoch, layer, sv_index)` and averages the trials
/// without an error flag. Empty cells are skipped; a cell empty in every
/// trial stays empty.
pub fn average_trials(trials: &[TrialTrace]) -> Averaged {
    let mut acc: BTreeMap<(usize, usize, usize), Vec<Vec<f64>>> = BTreeMap::new();
    let mut used = 0;
    for t in trials.iter().filter(|t| !t.error) {
        used += 1;
        for r in &t.rows {
            let a = acc.entry((r.epoch, r.layer, r.sv_index)).or_insert_with(|| vec![Vec::new(); TRACE_VALUES]);
            for (i, v) in r.values.iter().enumerate() {
                if let Some(v) = v {
                    a[i].push(*v);
                }
            }
        }
    }
    let mut mean = Vec::with_capacity(acc.len());
    let mut std = Vec::with_capacity(acc.len());
    for ((epoch, layer, sv_index), a) in acc {
        let mut mv = [None; TRACE_VALUES];
        let mut sv = [None; TRACE_VALUES];
        for i in 0..TRACE_VALUES {
            (mv[i], sv[i]) = mean_std(&a[i]);
        }
        mean.push(TraceRow { epoch, layer, sv_index, values: mv });
        std.push(TraceRow { epoch, layer, sv_index, values: sv });
    }
    Averaged { mean, std, used, excluded: trials.len() - used }
}

/// Mean and population standard deviation of equally long series, e.g.
/// per-trial loss curves.
pub fn average_series(series: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let len = series.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let col: Vec<f64> = series.iter().map(|v| v[i]).collect();
            let (m, sd) = mean_std(&col);
            (m.unwrap_or(f64::NAN), sd.unwrap_or(f64::NAN))
        })
        .unzip()
}

/// Elementwise mean of per-trial singular-value tables keyed by
/// `(epoch, layer)`.
pub fn average_svals(trials: &[Vec<(usize, usize, Vec<f64>)>]) -> Vec<(usize, usize, Vec<f64>)> {
    let mut acc: BTreeMap<(usize, usize), Vec<Vec<f64>>> = BTreeMap::new();
    for t in trials {
        for (epoch, layer, s) in t {
            let a = acc.entry((*epoch, *layer)).or_default();
            if a.len() < s.len() {
                a.resize(s.len(), Vec::new());
            }
            for (i, v) in s.iter().enumerate() {
                a[i].push(*v);
            }
        }
    }
    acc.into_iter()
        .map(|((e, l), cols)| (e, l, cols.iter().map(|c| mean_std(c).0.unwrap_or(f64::NAN)).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize, v: f64) -> TraceRow {
        let mut values = [Some(v); TRACE_VALUES];
        values[6] = None;
        TraceRow { epoch, layer: 1, sv_index: 5, values }
    }

    #[test]
    fn single_trial_has_zero_std() {
        let t = TrialTrace { rows: vec![row(0, 1.5), row(1, 2.5)], error: false };
        let a = average_trials(std::slice::from_ref(&t));
        assert_eq!(a.mean, t.rows);
        assert!(a.std.iter().all(|r| r.values.iter().all(|v| v.is_none_or(|x| x == 0.0))));
        assert_eq!(a.std[0].values[6], None);
    }

    #[test]
    fn hand_computed_three_trials() {
        let ts: Vec<TrialTrace> =
            [1.0, 2.0, 6.0].iter().map(|&v| TrialTrace { rows: vec![row(0, v)], error: false }).collect();
        let a = average_trials(&ts);
        assert_eq!(a.mean[0].values[0], Some(3.0));
        let sd = a.std[0].values[0].unwrap();
        assert!((sd - (14.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn flagged_trials_are_excluded() {
        let ok = TrialTrace { rows: vec![row(0, 1.0)], error: false };
        let bad = TrialTrace { rows: vec![row(0, f64::NAN)], error: true };
        let a = average_trials(&[ok, bad]);
        assert_eq!((a.used, a.excluded), (1, 1));
        assert_eq!(a.mean[0].values[0], Some(1.0));
    }

    #[test]
    fn series_average() {
        let (m, s) = average_series(&[vec![1.0, 2.0], vec![3.0, 2.0]]);
        assert_eq!(m, vec![2.0, 2.0]);
        assert_eq!(s, vec![1.0, 0.0]);
    }
}
