//! Task losses on plain logit tensors.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// `-log softmax(row)[t]` via log-sum-exp.
fn nll(row: &[f64], t: usize) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    lse - row[t]
}

fn check_logits(z: &Tensor<f64>, what: &str) -> Result<(usize, usize)> {
    if z.rank() != 2 || z.shape()[0] == 0 || z.shape()[1] == 0 {
        return Err(Error::Shape(format!("{what} logits must be non-empty [rows, classes], got {:?}", z.shape())));
    }
    if let Some(i) = z.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("{what} logits"),
            detail: format!("flat index {i}"),
        });
    }
    Ok((z.shape()[0], z.shape()[1]))
}

/// Mean over defenders of the cross-entropy between one-hot `targets [D, R+1]`
/// (column 0 = no matchup) and `softmax(Z)`.
pub fn loss_matchup(z: &Tensor<f64>, targets: &Tensor<f64>) -> Result<f64> {
    let (d, c) = check_logits(z, "matchup")?;
    if targets.shape() != z.shape() {
        return Err(Error::Shape(format!(
            "targets {:?} do not match logits {:?}",
            targets.shape(),
            z.shape()
        )));
    }
    let mut total = 0.0;
    for (r, (zr, tr)) in z.rows().zip(targets.rows()).enumerate() {
        let ones = tr.iter().filter(|&&v| v == 1.0).count();
        let zeros = tr.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != c - 1 {
            return Err(Error::InvalidArgument(format!("matchup target row {r} is not one-hot")));
        }
        let t = tr.iter().position(|&v| v == 1.0).unwrap();
        total += nll(zr, t);
    }
    Ok(total / d as f64)
}

/// Index form of [`loss_matchup`]: `targets[d]` is the hot column.
pub fn loss_matchup_index(z: &Tensor<f64>, targets: &[usize]) -> Result<f64> {
    let (d, c) = check_logits(z, "matchup")?;
    let mut onehot = vec![0.0; d * c];
    if targets.len() != d {
        return Err(Error::Shape(format!("{} targets for {d} defenders", targets.len())));
    }
    for (r, &t) in targets.iter().enumerate() {
        if t >= c {
            return Err(Error::InvalidArgument(format!("matchup target {t} outside {c} columns")));
        }
        onehot[r * c + t] = 1.0;
    }
    loss_matchup(z, &Tensor::new(vec![d, c], onehot)?)
}

/// Mean per-defender cross-entropy over the coverage classes.
pub fn loss_coverage(z: &Tensor<f64>, classes: &[usize]) -> Result<f64> {
    let (d, c) = check_logits(z, "coverage")?;
    if classes.len() != d {
        return Err(Error::Shape(format!("{} labels for {d} defenders", classes.len())));
    }
    let mut total = 0.0;
    for (zr, &t) in z.rows().zip(classes) {
        if t >= c {
            return Err(Error::InvalidArgument(format!("coverage class {t} outside [0, {})", c)));
        }
        total += nll(zr, t);
    }
    Ok(total / d as f64)
}

/// Cross-entropy over the `D + 1` target slots; the last slot is the masked
/// offensive player and cannot be the label.
pub fn loss_target(z: &[f64], true_defender: usize) -> Result<f64> {
    let n = z.len();
    if n < 2 {
        return Err(Error::Shape(format!("target logits need at least 2 slots, got {n}")));
    }
    if true_defender >= n - 1 {
        return Err(Error::InvalidArgument(format!(
            "target index {true_defender} is not a defender slot (offensive slot is {})",
            n - 1
        )));
    }
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "target logits".into(),
            detail: format!("slot {i}"),
        });
    }
    Ok(nll(z, true_defender))
}
