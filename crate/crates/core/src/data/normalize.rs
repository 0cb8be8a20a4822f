use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::{Error, Result, Scalar};

/// Per-feature z-score parameters. `scale` is the population standard
/// deviation, floored at `1e-12`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats<T> {
    pub mean: Array1<T>,
    pub scale: Array1<T>,
}

impl<T: Scalar> NormalizationStats<T> {
    pub fn fit(x: ArrayView2<'_, T>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::invalid("cannot fit normalization on zero rows"));
        }
        let n = T::count(x.nrows());
        let mean = x.sum_axis(Axis(0)).mapv(|s| s / n);
        let floor = T::lit(1e-12);
        let scale = x
            .axis_iter(Axis(1))
            .zip(&mean)
            .map(|(col, &m)| {
                let var: T = col.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / n;
                var.sqrt().max(floor)
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Identity transform on `d` features.
    pub fn identity(d: usize) -> Self {
        Self {
            mean: Array1::zeros(d),
            scale: Array1::ones(d),
        }
    }

    pub fn apply(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if x.ncols() != self.dim() {
            return Err(Error::shape(format!(
                "normalization fitted on {} features, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            row.zip_mut_with(&self.mean, |v, &m| *v -= m);
            row.zip_mut_with(&self.scale, |v, &s| *v /= s);
        }
        Ok(out)
    }

    pub fn apply_row(&self, x: ArrayView1<'_, T>) -> Result<Array1<T>> {
        Ok(self.apply(x.insert_axis(Axis(0)))?.row(0).to_owned())
    }

    pub fn cast<U: Scalar>(&self) -> NormalizationStats<U> {
        NormalizationStats {
            mean: self.mean.mapv(|v| U::lit(v.to_f64_lossy())),
            scale: self.scale.mapv(|v| U::lit(v.to_f64_lossy())),
        }
    }
}

/// Fits on `train` and applies the same transform to every other split.
pub fn fit_apply_normalization<T: Scalar>(
    train: ArrayView2<'_, T>,
    others: &[ArrayView2<'_, T>],
) -> Result<(NormalizationStats<T>, Array2<T>, Vec<Array2<T>>)> {
    let stats = NormalizationStats::fit(train)?;
    let train_n = stats.apply(train)?;
    let rest = others.iter().map(|x| stats.apply(*x)).collect::<Result<_>>()?;
    Ok((stats, train_n, rest))
}
