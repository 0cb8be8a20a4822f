use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::NmseNormalizer;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Nmse,
    AccuracyPct,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Nmse => "nmse",
            Metric::AccuracyPct => "accuracy_pct",
        }
    }

    /// Whether larger values are better.
    pub fn maximize(self) -> bool {
        self == Metric::AccuracyPct
    }
}

/// `Σ(ŷ − y)² / (N·s)` with `s` the population variance (or standard
/// deviation) of `y_true`.
pub fn nmse(y_true: ArrayView1<'_, f64>, y_pred: ArrayView1<'_, f64>, normalizer: NmseNormalizer) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::shape(format!("{} targets but {} predictions", y_true.len(), y_pred.len())));
    }
    if y_true.len() < 2 {
        return Err(Error::UndefinedMetric("nmse needs at least two samples".into()));
    }
    let n = y_true.len() as f64;
    let var = y_true.var(0.0);
    if !(var > 0.0) {
        return Err(Error::UndefinedMetric("nmse is undefined for a constant target".into()));
    }
    let s = match normalizer {
        NmseNormalizer::Variance => var,
        NmseNormalizer::Std => var.sqrt(),
    };
    let sse: f64 = y_true.iter().zip(&y_pred).map(|(t, p)| (p - t) * (p - t)).sum();
    Ok(sse / (n * s))
}

/// Percentage of matching labels.
pub fn accuracy(labels_true: ArrayView1<'_, f64>, labels_pred: ArrayView1<'_, f64>) -> Result<f64> {
    if labels_true.len() != labels_pred.len() {
        return Err(Error::shape(format!(
            "{} labels but {} predictions",
            labels_true.len(),
            labels_pred.len()
        )));
    }
    if labels_true.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of zero samples".into()));
    }
    let hits = labels_true.iter().zip(&labels_pred).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / labels_true.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Two-sided Welch t-test.
pub fn t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("each sample needs at least two values"));
    }
    let moments = |s: &[f64]| {
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (n, mean, var)
    };
    let (na, ma, va) = moments(a);
    let (nb, mb, vb) = moments(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(if ma == mb {
            TTest {
                t: 0.0,
                df: na + nb - 2.0,
                p_value: 1.0,
            }
        } else {
            TTest {
                t: (ma - mb).signum() * f64::INFINITY,
                df: na + nb - 2.0,
                p_value: 0.0,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numeric(e.to_string()))?;
    let p_value = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, df, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn nmse_examples() {
        let y = array![0.0, 2.0, 5.0];
        assert_eq!(nmse(y.view(), y.view(), NmseNormalizer::Variance).unwrap(), 0.0);
        let v = nmse(array![0.0, 2.0].view(), array![1.0, 1.0].view(), NmseNormalizer::Variance).unwrap();
        assert_eq!(v, 1.0);
        let pred = array![0.5, 2.5, 4.0];
        let doubled = array![1.0, 3.0, 3.0];
        let a = nmse(y.view(), pred.view(), NmseNormalizer::Variance).unwrap();
        let b = nmse(y.view(), doubled.view(), NmseNormalizer::Variance).unwrap();
        assert_relative_eq!(b, 4.0 * a, max_relative = 1e-12);
        assert!(matches!(
            nmse(array![1.0, 1.0].view(), array![1.0, 2.0].view(), NmseNormalizer::Variance),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn nmse_std_normalizer() {
        // Variance 4, std 2.
        let v = nmse(array![-2.0, 2.0].view(), array![0.0, 0.0].view(), NmseNormalizer::Std).unwrap();
        assert_eq!(v, 2.0);
    }

    #[test]
    fn accuracy_examples() {
        let t = array![1.0, 0.0, 1.0, 1.0];
        assert_eq!(accuracy(t.view(), t.view()).unwrap(), 100.0);
        assert_eq!(accuracy(t.view(), array![1.0, 1.0, 0.0, 1.0].view()).unwrap(), 50.0);
        assert_eq!(accuracy(t.view(), array![1.0, 0.0, 0.0, 1.0].view()).unwrap(), 75.0);
        assert!(accuracy(array![].view(), array![].view()).is_err());
    }

    #[test]
    fn t_test_examples() {
        let same = t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(same.t, 0.0);
        assert_eq!(same.p_value, 1.0);
        let flat = t_test(&[2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert_eq!(flat.p_value, 1.0);
        let far = t_test(&[0.0; 4], &[10.0, 10.0, 10.0, 10.0001]).unwrap();
        assert!(far.p_value < 1e-3);
        assert!(t_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn t_test_matches_reference_values() {
        // Reference values from an independent Welch implementation.
        let far = t_test(&[0.0; 4], &[10.0, 10.0, 10.0, 10.0001]).unwrap();
        assert_relative_eq!(far.t, -400_001.000_000_932_3, max_relative = 1e-9);
        assert_relative_eq!(far.p_value, 3.445_779_752_871_818e-17, max_relative = 1e-6);
        let r = t_test(&[0.82, 0.91, 0.77, 0.88, 0.85], &[0.71, 0.69, 0.80, 0.74, 0.66, 0.73]).unwrap();
        assert_relative_eq!(r.t, 3.994_620_192_278_566_2, max_relative = 1e-12);
        assert_relative_eq!(r.df, 8.150_306_935_263_883, max_relative = 1e-12);
        assert_relative_eq!(r.p_value, 0.003_831_871_994_036_955, max_relative = 1e-8);
    }
}
