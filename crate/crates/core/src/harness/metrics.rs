use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One forecast: the observed sentiment and the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub event_index: usize,
    pub m: f64,
    pub m_hat: f64,
}

fn non_empty(preds: &[Prediction]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Input("no predictions to score".into()));
    }
    Ok(())
}

/// Mean squared error.
pub fn mse(preds: &[Prediction]) -> Result<f64> {
    non_empty(preds)?;
    Ok(preds.iter().map(|p| (p.m - p.m_hat).powi(2)).sum::<f64>() / preds.len() as f64)
}

/// `+1` for zero.
fn sign(x: f64) -> bool {
    x >= 0.0
}

/// Fraction of predictions whose sign disagrees with the observation.
pub fn failure_rate(preds: &[Prediction]) -> Result<f64> {
    non_empty(preds)?;
    let miss = preds.iter().filter(|p| sign(p.m) != sign(p.m_hat)).count();
    Ok(miss as f64 / preds.len() as f64)
}

/// CSV `event_index,m,m_hat`.
pub fn save_predictions(preds: &[Prediction], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for p in preds {
        w.serialize(p).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::format(path, line, e.to_string())
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(m: f64, m_hat: f64) -> Prediction {
        Prediction { event_index: 0, m, m_hat }
    }

    #[test]
    fn single_pair() {
        assert_eq!(mse(&[p(1.0, 0.5)]).unwrap(), 0.25);
    }

    #[test]
    fn half_the_signs_wrong() {
        assert_eq!(failure_rate(&[p(1.0, -1.0), p(1.0, 1.0)]).unwrap(), 0.5);
    }

    #[test]
    fn zero_counts_as_positive() {
        assert_eq!(failure_rate(&[p(0.0, 0.3)]).unwrap(), 0.0);
        assert_eq!(failure_rate(&[p(-0.1, 0.0)]).unwrap(), 1.0);
    }

    #[test]
    fn perfect() {
        let v = [p(0.2, 0.2), p(-1.0, -1.0)];
        assert_eq!((mse(&v).unwrap(), failure_rate(&v).unwrap()), (0.0, 0.0));
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(mse(&[]), Err(Error::Input(_))));
        assert!(matches!(failure_rate(&[]), Err(Error::Input(_))));
    }
}
