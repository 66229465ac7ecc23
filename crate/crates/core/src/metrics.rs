//! Evaluation metrics: accuracy, Matthews correlation, Pearson correlation.

use crate::data::{HeadKind, Label, Metric, TaskSpec};
use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize, min: usize) -> Result<()> {
    if a != b {
        return Err(Error::Metric(format!("length mismatch: {a} vs {b}")));
    }
    if a < min {
        return Err(Error::Metric(format!("need at least {min} values, got {a}")));
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), labels.len(), 1)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Matthews correlation of binary predictions; 0.0 when any marginal is empty.
pub fn matthews(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), labels.len(), 1)?;
    let (mut tp, mut tn, mut fp, mut fn_) = (0f64, 0f64, 0f64, 0f64);
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (1, 1) => tp += 1.0,
            (0, 0) => tn += 1.0,
            (1, 0) => fp += 1.0,
            (0, 1) => fn_ += 1.0,
            _ => return Err(Error::Metric(format!("non-binary value in ({p}, {l})"))),
        }
    }
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((tp * tn - fp * fn_) / denom.sqrt())
}

/// Pearson correlation; 0.0 when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x.len(), y.len(), 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Index of the largest logit; ties resolve to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Scores model outputs (one row per example) with the task's metric.
pub fn evaluate(spec: &TaskSpec, outputs: &[Vec<f32>], labels: &[Label]) -> Result<f64> {
    spec.validate()?;
    check_lengths(outputs.len(), labels.len(), 1)?;
    let width = spec.head.outputs();
    if let Some(row) = outputs.iter().find(|r| r.len() != width) {
        return Err(Error::Metric(format!("output of width {} for a head of width {width}", row.len())));
    }
    let wrong_label = || Error::Metric(format!("label kind does not match head of task `{}`", spec.id));
    match spec.head {
        HeadKind::Classification { .. } => {
            let preds: Vec<usize> = outputs.iter().map(|r| argmax(r)).collect();
            let gold = labels.iter().map(|l| l.class().ok_or_else(wrong_label)).collect::<Result<Vec<_>>>()?;
            match spec.metric {
                Metric::Accuracy => accuracy(&preds, &gold),
                Metric::Matthews => matthews(&preds, &gold),
                Metric::Pearson => unreachable!("rejected by validate"),
            }
        }
        HeadKind::Regression => {
            let preds: Vec<f64> = outputs.iter().map(|r| r[0] as f64).collect();
            let gold = labels.iter().map(|l| l.score().map(f64::from).ok_or_else(wrong_label)).collect::<Result<Vec<_>>>()?;
            pearson(&preds, &gold)
        }
    }
}
