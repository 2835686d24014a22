use crate::error::{Error, Result};

/// Confusion counts for hard binary predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
}

impl Confusion {
    pub fn from_labels(truth: &[bool], pred: &[bool]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Validation(format!(
                "{} labels but {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut c = Confusion::default();
        for (&t, &p) in truth.iter().zip(pred) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
            }
        }
        Ok(c)
    }

    /// Mean of the two per-class recalls.
    pub fn balanced_accuracy(&self) -> Result<f64> {
        let pos = self.tp + self.fn_;
        let neg = self.tn + self.fp;
        if pos == 0 || neg == 0 {
            return Err(Error::SingleClass);
        }
        Ok((self.tp as f64 / pos as f64 + self.tn as f64 / neg as f64) / 2.0)
    }
}

/// `(TPR + TNR) / 2`; errors unless `truth` holds both classes.
pub fn balanced_accuracy(truth: &[bool], pred: &[bool]) -> Result<f64> {
    Confusion::from_labels(truth, pred)?.balanced_accuracy()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed() {
        let truth = [true, true, true, true, false, false];
        let pred = [true, true, true, false, false, true];
        assert_eq!(balanced_accuracy(&truth, &pred).unwrap(), 0.625);
    }

    #[test]
    fn degenerate_predictors() {
        let truth = [true, false, false, true, false];
        assert_eq!(balanced_accuracy(&truth, &truth).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&truth, &[true; 5]).unwrap(), 0.5);
        assert_eq!(balanced_accuracy(&truth, &[false; 5]).unwrap(), 0.5);
    }

    #[test]
    fn one_class_truth_rejected() {
        assert!(balanced_accuracy(&[true, true], &[true, false]).is_err());
        assert!(balanced_accuracy(&[true], &[true, false]).is_err());
    }
}
