//! Regression metrics: coefficient of determination and Spearman rank
//! correlation with average-rank tie handling.

use crate::error::{Error, Result};

pub fn r2(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    check(predictions, labels)?;
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    let ss_tot: f64 = labels.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ss_res: f64 = predictions
        .iter()
        .zip(labels.iter())
        .map(|(p, y)| (y - p) * (y - p))
        .sum();
    if ss_tot == 0.0 {
        return Err(Error::DegenerateMetrics(
            "labels have zero variance".into(),
        ));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Ranks with ties replaced by the average of the tied positions (1-based).
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (
        a.iter().sum::<f64>() / n,
        b.iter().sum::<f64>() / n,
    );
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::DegenerateMetrics(
            "zero variance in rank correlation".into(),
        ));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

pub fn spearman(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    check(predictions, labels)?;
    let rp = average_ranks(predictions);
    let rl = average_ranks(labels);
    let tie_free = |r: &[f64]| {
        let mut s: Vec<f64> = r.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s.iter().enumerate().all(|(i, v)| *v == (i + 1) as f64)
    };
    if tie_free(&rp) && tie_free(&rl) {
        // exact rank-difference form, valid without ties
        let n = rp.len() as f64;
        let d2: f64 = rp.iter().zip(rl.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
    } else {
        pearson(&rp, &rl)
    }
}

fn check(predictions: &[f64], labels: &[f64]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.len() < 2 {
        return Err(Error::DegenerateMetrics(
            "need at least 2 points".into(),
        ));
    }
    Ok(())
}
