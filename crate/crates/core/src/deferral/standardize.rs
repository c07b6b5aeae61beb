use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard deviations below this are treated as zero and replaced by 1.
pub const MIN_STD: f64 = 1e-12;

/// Per-dimension z-score statistics fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation per dimension.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InsufficientData(format!("standardizer needs at least 2 rows, got {}", rows.len())));
        }
        let dim = rows[0].as_ref().len();
        if rows.iter().any(|r| r.as_ref().len() != dim) {
            return Err(Error::invalid("rows have differing dimensions"));
        }
        let n = rows.len() as f64;
        let mut means = vec![0.0; dim];
        for r in rows {
            for (m, x) in means.iter_mut().zip(r.as_ref()) {
                *m += x;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);

        let mut stds = vec![0.0; dim];
        for r in rows {
            for ((s, x), m) in stds.iter_mut().zip(r.as_ref()).zip(&means) {
                *s += (x - m) * (x - m);
            }
        }
        for s in &mut stds {
            *s = (*s / n).sqrt();
            if *s < MIN_STD {
                *s = 1.0;
            }
        }
        Ok(Standardizer { means, stds })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::SchemaMismatch(format!(
                "row has {} features, standardizer expects {}",
                row.len(),
                self.dim()
            )));
        }
        Ok(row.iter().zip(&self.means).zip(&self.stds).map(|((x, m), s)| (x - m) / s).collect())
    }

    pub fn transform_all<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.transform(r.as_ref())).collect()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.means.len() != self.stds.len() {
            return Err(Error::SchemaMismatch("standardizer means/stds lengths differ".into()));
        }
        if self.stds.iter().any(|s| !(s.is_finite() && *s > 0.0)) || self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::SchemaMismatch("standardizer statistics must be finite with positive stds".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let s = Standardizer::fit(&[[3.0, 0.0, -1.0], [3.0, 2.0, 1.0]]).unwrap();
        assert_eq!(s.means, vec![3.0, 1.0, 0.0]);
        assert_eq!(s.stds, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn needs_two_rows() {
        assert!(matches!(Standardizer::fit(&[[1.0]]), Err(Error::InsufficientData(_))));
        let empty: [[f64; 1]; 0] = [];
        assert!(Standardizer::fit(&empty).is_err());
    }

    #[test]
    fn transform_checks_dimension() {
        let s = Standardizer::fit(&[[0.0, 1.0], [2.0, 3.0]]).unwrap();
        assert!(s.transform(&[1.0]).is_err());
        assert_eq!(s.transform(&[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn standardized_rows_have_zero_mean_unit_std(
            rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 2..40)
        ) {
            let s = Standardizer::fit(&rows).unwrap();
            let z = s.transform_all(&rows).unwrap();
            let n = z.len() as f64;
            for j in 0..3 {
                let mean = z.iter().map(|r| r[j]).sum::<f64>() / n;
                prop_assert!(mean.abs() < 1e-9);
                if s.stds[j] != 1.0 {
                    let var = z.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                    prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
