use crate::{Error, Result};

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `+1` for class 1, `−1` for class 0.
pub fn signed_label(class: usize) -> f64 {
    if class == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Argmax of the logits; a single logit predicts class 1 iff it is positive.
pub fn predict(logits: &[f64]) -> usize {
    if logits.len() == 1 {
        return usize::from(logits[0] > 0.0);
    }
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

fn check_label(logits: &[f64], label: usize) -> Result<()> {
    let classes = logits.len().max(2);
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

pub fn loss(logits: &[f64], label: usize) -> Result<f64> {
    Ok(loss_and_grad(logits, label)?.0)
}

/// Loss and its gradient with respect to the logits.
pub fn loss_and_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    check_label(logits, label)?;
    if logits.len() == 1 {
        let y = signed_label(label);
        let margin = y * logits[0];
        return Ok((softplus(-margin), vec![-y * sigmoid(-margin)]));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_z = max + sum.ln();
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - log_z).exp()).collect();
    grad[label] -= 1.0;
    Ok((log_z - logits[label], grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_values() {
        assert!((loss(&[0.0], 1).unwrap() - 2f64.ln()).abs() < 1e-15);
        // log(1 + e^-10) = 4.539889921686465e-5
        assert!((loss(&[10.0], 1).unwrap() - 4.539_889_921_686_465e-5).abs() < 1e-18);
        assert!((loss(&[-10.0], 0).unwrap() - 4.539_889_921_686_465e-5).abs() < 1e-18);
        assert!(loss(&[800.0], 0).unwrap().is_finite());
    }

    #[test]
    fn softmax_values() {
        assert!((loss(&[0.0, 0.0], 0).unwrap() - 2f64.ln()).abs() < 1e-15);
        let (l, g) = loss_and_grad(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!(l > 0.0);
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        assert!(g[2] < 0.0);
    }

    #[test]
    fn label_range_is_checked() {
        assert!(matches!(loss(&[0.0], 2), Err(Error::LabelOutOfRange { .. })));
        assert!(loss(&[0.0, 1.0, 2.0], 3).is_err());
    }

    #[test]
    fn predictions() {
        assert_eq!(predict(&[0.1]), 1);
        assert_eq!(predict(&[0.0]), 0);
        assert_eq!(predict(&[0.0, 3.0, 3.0]), 1);
    }
}
