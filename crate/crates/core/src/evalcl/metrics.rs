use crate::error::{Error, Result};

fn check_lengths(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("{what}: {a} predictions for {b} labels")));
    }
    if a == 0 {
        return Err(Error::UndefinedMetric(format!("{what} of an empty set")));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths("accuracy", preds.len(), labels.len())?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Binary Matthews correlation. A confusion matrix with an empty row or
/// column scores 0.
pub fn matthews_corr(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths("matthews_corr", preds.len(), labels.len())?;
    let (mut tp, mut tn, mut fp, mut fnn) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (&p, &l) in preds.iter().zip(labels) {
        if p > 1 || l > 1 {
            return Err(Error::invalid("matthews_corr expects binary classes"));
        }
        match (p, l) {
            (1, 1) => tp += 1.0,
            (0, 0) => tn += 1.0,
            (1, 0) => fp += 1.0,
            _ => fnn += 1.0,
        }
    }
    let denom = ((tp + fp) * (tp + fnn) * (tn + fp) * (tn + fnn)).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((tp * tn - fp * fnn) / denom)
}

/// Pearson correlation; undefined when either side is constant.
pub fn pearson_corr(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths("pearson_corr", x.len(), y.len())?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("pearson correlation of a constant vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_basics() {
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 1, 1, 0]).unwrap(), 0.5);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn mcc_hand_computed() {
        // tp=2 tn=1 fp=1 fn=0: (2·1 − 1·0)/√(3·2·2·1) = 2/√12.
        let v = matthews_corr(&[1, 1, 1, 0], &[1, 1, 0, 0]).unwrap();
        assert!((v - 2.0 / 12f64.sqrt()).abs() < 1e-15);
        assert_eq!(matthews_corr(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(matthews_corr(&[0, 1, 0], &[1, 0, 1]).unwrap(), -1.0);
        assert_eq!(matthews_corr(&[1, 1, 1], &[1, 0, 1]).unwrap(), 0.0);
        assert!(matthews_corr(&[2], &[1]).is_err());
    }

    #[test]
    fn pearson_cases() {
        // Σdxdy = 4.5, Σdx² = 2, Σdy² = 61/6.
        let r = 4.5 / (61.0f64 / 3.0).sqrt();
        assert!((pearson_corr(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.5]).unwrap() - r).abs() < 1e-12);
        assert!((pearson_corr(&[1.0, 2.0], &[3.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            pearson_corr(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::UndefinedMetric(_))
        ));
    }
}
