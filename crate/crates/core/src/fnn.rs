//! Layer math of one low-level Takagi–Sugeno branch and of the linear
//! coordination layer that combines branch outputs.
//!
//! A branch with `K` rules over `d` features maps a sample `x` to
//!
//! ```text
//! z(x) = Σ_k φ̄_k(x) · (w_k0 + Σ_j w_kj x_j),    φ̄_k = φ_k / Σ_r φ_r,
//! φ_k(x) = Π_j exp(-((x_j - m_kj) / σ_kj)²)
//! ```
//!
//! which is linear in the consequent weights, so a batch of samples is
//! evaluated as `Z = H w` with the design matrix `H` built by
//! [`build_design_matrix`].

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// Gaussian fuzzy set `exp(-((x - center) / width)²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFuzzySet<T> {
    center: T,
    width: T,
}

impl<T: Scalar> GaussianFuzzySet<T> {
    pub fn new(center: T, width: T) -> Result<Self> {
        if !center.is_finite() {
            return Err(Error::invalid(format!("fuzzy set center {center} is not finite")));
        }
        if !(width.is_finite() && width > T::zero()) {
            return Err(Error::invalid(format!("fuzzy set width {width} must be finite and > 0")));
        }
        Ok(Self { center, width })
    }

    pub fn center(&self) -> T {
        self.center
    }

    pub fn width(&self) -> T {
        self.width
    }

    pub fn membership(&self, x: T) -> Result<T> {
        if !x.is_finite() {
            return Err(Error::invalid(format!("membership input {x} is not finite")));
        }
        Ok(gaussian(x, self.center, self.width))
    }
}

#[inline]
fn gaussian<T: Scalar>(x: T, center: T, width: T) -> T {
    let z = (x - center) / width;
    (-(z * z)).exp()
}

/// Degree of membership of `x` in `set`. The value lies in (0, 1] up to
/// floating-point underflow far from the center.
pub fn membership<T: Scalar>(x: T, set: &GaussianFuzzySet<T>) -> Result<T> {
    set.membership(x)
}

/// Antecedent parameters of one branch: `K` rules, each with one Gaussian
/// fuzzy set per branch feature. Stored as two `K × d` arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct RuleBank<T> {
    branch_id: usize,
    centers: Array2<T>,
    widths: Array2<T>,
}

impl<T: Scalar> RuleBank<T> {
    pub fn new(branch_id: usize, centers: Array2<T>, widths: Array2<T>) -> Result<Self> {
        if centers.dim() != widths.dim() {
            return Err(Error::shape(format!(
                "centers {:?} and widths {:?} differ in shape",
                centers.dim(),
                widths.dim()
            )));
        }
        if centers.nrows() == 0 {
            return Err(Error::invalid("a rule bank needs at least one rule"));
        }
        if centers.ncols() == 0 {
            return Err(Error::invalid("a rule bank needs at least one feature"));
        }
        if let Some(c) = centers.iter().find(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("rule center {c} is not finite")));
        }
        if let Some(w) = widths.iter().find(|w| !(w.is_finite() && **w > T::zero())) {
            return Err(Error::invalid(format!("rule width {w} must be finite and > 0")));
        }
        Ok(Self {
            branch_id,
            centers,
            widths,
        })
    }

    pub fn from_rules(branch_id: usize, rules: &[Vec<GaussianFuzzySet<T>>]) -> Result<Self> {
        let k = rules.len();
        let d = rules.first().map_or(0, Vec::len);
        if rules.iter().any(|r| r.len() != d) {
            return Err(Error::shape("rules have differing dimensionality"));
        }
        let mut centers = Array2::zeros((k, d));
        let mut widths = Array2::zeros((k, d));
        for (r, rule) in rules.iter().enumerate() {
            for (j, set) in rule.iter().enumerate() {
                centers[[r, j]] = set.center;
                widths[[r, j]] = set.width;
            }
        }
        Self::new(branch_id, centers, widths)
    }

    pub fn branch_id(&self) -> usize {
        self.branch_id
    }

    /// Number of rules `K`.
    pub fn rules(&self) -> usize {
        self.centers.nrows()
    }

    /// Number of branch features `|F_b|`.
    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn centers(&self) -> ArrayView2<'_, T> {
        self.centers.view()
    }

    pub fn widths(&self) -> ArrayView2<'_, T> {
        self.widths.view()
    }

    pub fn rule(&self, k: usize) -> Vec<GaussianFuzzySet<T>> {
        self.centers
            .row(k)
            .iter()
            .zip(self.widths.row(k))
            .map(|(&center, &width)| GaussianFuzzySet { center, width })
            .collect()
    }

    /// Column count `K·(|F_b|+1)` of this branch's design matrix.
    pub fn design_columns(&self) -> usize {
        self.rules() * (self.dim() + 1)
    }

    /// Raw and normalized firing strengths written into caller buffers.
    fn fire_into(&self, x: ArrayView1<'_, T>, raw: &mut [T], normalized: &mut [T]) {
        let mut total = T::zero();
        for (k, (centers, widths)) in self.centers.rows().into_iter().zip(self.widths.rows()).enumerate() {
            let mut phi = T::one();
            for ((&xj, &m), &s) in x.iter().zip(centers).zip(widths) {
                phi *= gaussian(xj, m, s);
            }
            raw[k] = phi;
            total += phi;
        }
        if total > T::zero() {
            for (n, &r) in normalized.iter_mut().zip(raw.iter()) {
                *n = r / total;
            }
        } else {
            // Every rule underflowed: 0/0, fall back to a uniform blend.
            let uniform = T::one() / T::count(raw.len());
            normalized.iter_mut().for_each(|n| *n = uniform);
        }
    }
}

/// Rule-layer output for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FiringStrengths<T> {
    pub raw: Array1<T>,
    pub normalized: Array1<T>,
}

/// Product firing strength of every rule and its normalization across rules.
/// When every raw strength underflows to zero the normalized strengths are
/// uniform `1/K`.
pub fn firing_strengths<T: Scalar>(x: ArrayView1<'_, T>, bank: &RuleBank<T>) -> Result<FiringStrengths<T>> {
    if x.len() != bank.dim() {
        return Err(Error::shape(format!(
            "sample has {} features, rule bank expects {}",
            x.len(),
            bank.dim()
        )));
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("sample value {v} is not finite")));
    }
    let k = bank.rules();
    let mut raw = vec![T::zero(); k];
    let mut normalized = vec![T::zero(); k];
    bank.fire_into(x, &mut raw, &mut normalized);
    Ok(FiringStrengths {
        raw: Array1::from(raw),
        normalized: Array1::from(normalized),
    })
}

/// Firing-strength-weighted affine expansion of a branch's samples. Row `i`,
/// rule block `k` holds `φ̄_k(X_i) · [1, x_i1, …, x_id]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix<T> {
    data: Array2<T>,
    rules: usize,
    dim: usize,
}

impl<T: Scalar> DesignMatrix<T> {
    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn rules(&self) -> usize {
        self.rules
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array2<T> {
        self.data
    }
}

pub fn build_design_matrix<T: Scalar>(x: ArrayView2<'_, T>, bank: &RuleBank<T>) -> Result<DesignMatrix<T>> {
    let (n, d) = x.dim();
    if d != bank.dim() {
        return Err(Error::shape(format!(
            "sample matrix has {d} columns, rule bank expects {}",
            bank.dim()
        )));
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("sample value {v} is not finite")));
    }
    let k = bank.rules();
    let mut data = Array2::zeros((n, bank.design_columns()));
    Zip::from(data.rows_mut()).and(x.rows()).par_for_each(|mut row, xi| {
        let mut raw = vec![T::zero(); k];
        let mut phi = vec![T::zero(); k];
        bank.fire_into(xi, &mut raw, &mut phi);
        for (r, &p) in phi.iter().enumerate() {
            let base = r * (d + 1);
            row[base] = p;
            for (j, &xj) in xi.iter().enumerate() {
                row[base + 1 + j] = p * xj;
            }
        }
    });
    Ok(DesignMatrix { data, rules: k, dim: d })
}

/// Branch output `Z^b = H^b w^b`.
pub fn branch_output<T: Scalar>(h: &DesignMatrix<T>, w: ArrayView1<'_, T>) -> Result<Array1<T>> {
    if w.len() != h.cols() {
        return Err(Error::shape(format!(
            "weight vector has length {}, design matrix has {} columns",
            w.len(),
            h.cols()
        )));
    }
    Ok(h.data.dot(&w))
}

/// Branch output computed rule by rule (consequent then output layer),
/// without materializing the design matrix.
pub fn branch_output_direct<T: Scalar>(
    x: ArrayView2<'_, T>,
    bank: &RuleBank<T>,
    w: ArrayView1<'_, T>,
) -> Result<Array1<T>> {
    if w.len() != bank.design_columns() {
        return Err(Error::shape(format!(
            "weight vector has length {}, rule bank needs {}",
            w.len(),
            bank.design_columns()
        )));
    }
    let d = bank.dim();
    x.rows()
        .into_iter()
        .map(|xi| {
            let fs = firing_strengths(xi, bank)?;
            let z = fs
                .normalized
                .iter()
                .enumerate()
                .map(|(k, &phi)| {
                    let wk = w.slice(ndarray::s![k * (d + 1)..(k + 1) * (d + 1)]);
                    let consequent = wk[0] + xi.iter().zip(wk.iter().skip(1)).map(|(&a, &b)| a * b).sum::<T>();
                    phi * consequent
                })
                .sum();
            Ok(z)
        })
        .collect::<Result<Vec<T>>>()
        .map(Array1::from)
}

/// Coordinated output `Y = Z v` of the hierarchy.
pub fn hierarchy_output<T: Scalar>(z: ArrayView2<'_, T>, v: ArrayView1<'_, T>) -> Result<Array1<T>> {
    if z.ncols() != v.len() {
        return Err(Error::shape(format!(
            "branch output matrix has {} columns, coordination vector has {}",
            z.ncols(),
            v.len()
        )));
    }
    Ok(z.dot(&v))
}

/// Consequent weights of every branch plus the coordination weights.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyWeights<T> {
    pub w: Vec<Array1<T>>,
    pub v: Array1<T>,
}

impl<T: Scalar> HierarchyWeights<T> {
    pub fn new(w: Vec<Array1<T>>, v: Array1<T>) -> Result<Self> {
        if w.len() != v.len() {
            return Err(Error::shape(format!(
                "{} consequent blocks but {} coordination weights",
                w.len(),
                v.len()
            )));
        }
        Ok(Self { w, v })
    }

    pub fn branches(&self) -> usize {
        self.v.len()
    }

    /// All consequent weights stacked branch after branch.
    pub fn concatenated(&self) -> Array1<T> {
        self.w.iter().flat_map(|w| w.iter().copied()).collect()
    }

    /// Splits a stacked weight vector into per-branch blocks of `sizes`.
    pub fn split(stacked: ArrayView1<'_, T>, sizes: &[usize]) -> Result<Vec<Array1<T>>> {
        let total: usize = sizes.iter().sum();
        if total != stacked.len() {
            return Err(Error::shape(format!(
                "stacked weights have length {}, blocks need {total}",
                stacked.len()
            )));
        }
        let mut offset = 0;
        Ok(sizes
            .iter()
            .map(|&len| {
                let block = stacked.slice(ndarray::s![offset..offset + len]).to_owned();
                offset += len;
                block
            })
            .collect())
    }

    /// Checks each consequent block against its branch's design width.
    pub fn check_banks(&self, banks: &[RuleBank<T>]) -> Result<()> {
        if banks.len() != self.branches() {
            return Err(Error::shape(format!(
                "{} rule banks for {} weight blocks",
                banks.len(),
                self.branches()
            )));
        }
        for (b, (w, bank)) in self.w.iter().zip(banks).enumerate() {
            if w.len() != bank.design_columns() {
                return Err(Error::shape(format!(
                    "branch {b}: weight length {} != design columns {}",
                    w.len(),
                    bank.design_columns()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array};
    use proptest::prelude::*;

    fn bank(centers: Array2<f64>, widths: Array2<f64>) -> RuleBank<f64> {
        RuleBank::new(0, centers, widths).unwrap()
    }

    #[test]
    fn membership_examples() {
        let set = GaussianFuzzySet::new(2.0, 0.5).unwrap();
        assert_eq!(membership(2.0, &set).unwrap(), 1.0);
        assert_abs_diff_eq!(membership(2.5, &set).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(membership(3.0, &set).unwrap(), 0.018_315_638_888_734_18, epsilon = 1e-15);
    }

    #[test]
    fn membership_rejects_bad_input() {
        assert!(GaussianFuzzySet::new(0.0, 0.0).is_err());
        assert!(GaussianFuzzySet::new(0.0, -1.0).is_err());
        let set = GaussianFuzzySet::new(0.0, 1.0).unwrap();
        assert!(matches!(set.membership(f64::NAN), Err(Error::InvalidParameter(_))));
        assert!(set.membership(f64::INFINITY).is_err());
    }

    #[test]
    fn single_rule_normalizes_to_one() {
        let b = bank(array![[0.0, 1.0]], array![[1.0, 1.0]]);
        let fs = firing_strengths(array![7.0, -3.0].view(), &b).unwrap();
        assert_eq!(fs.normalized, array![1.0]);
    }

    #[test]
    fn raw_strength_is_product_of_memberships() {
        // Widths chosen so the per-dimension memberships are 0.5 and 0.2.
        let w1 = 1.0 / (2.0f64.ln()).sqrt();
        let w2 = 1.0 / (5.0f64.ln()).sqrt();
        let b = bank(array![[0.0, 0.0]], array![[w1, w2]]);
        let fs = firing_strengths(array![1.0, 1.0].view(), &b).unwrap();
        assert_abs_diff_eq!(fs.raw[0], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn normalization_of_raw_strengths() {
        // Two 1-D rules with raw strengths 0.1 and 0.3 at x = 1.
        let w1 = 1.0 / (10.0f64.ln()).sqrt();
        let w2 = 1.0 / (1.0f64 / 0.3).ln().sqrt();
        let b = bank(array![[0.0], [0.0]], array![[w1], [w2]]);
        let fs = firing_strengths(array![1.0].view(), &b).unwrap();
        assert_abs_diff_eq!(fs.raw[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(fs.raw[1], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(fs.normalized[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(fs.normalized[1], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn underflow_falls_back_to_uniform() {
        let b = bank(array![[0.0], [1.0], [2.0]], array![[1e-3], [1e-3], [1e-3]]);
        let fs = firing_strengths(array![1e6].view(), &b).unwrap();
        assert!(fs.raw.iter().all(|&r| r == 0.0));
        for &p in &fs.normalized {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn firing_dimension_mismatch() {
        let b = bank(array![[0.0, 0.0]], array![[1.0, 1.0]]);
        assert!(matches!(firing_strengths(array![1.0].view(), &b), Err(Error::Shape(_))));
    }

    #[test]
    fn design_matrix_single_rule_is_affine_row() {
        let b = bank(array![[0.0, 0.0, 0.0]], array![[1.0, 1.0, 1.0]]);
        let x = array![[1.5, -2.0, 3.0]];
        let h = build_design_matrix(x.view(), &b).unwrap();
        assert_eq!(h.view(), array![[1.0, 1.5, -2.0, 3.0]].view());
    }

    #[test]
    fn design_matrix_two_rules_hand_expansion() {
        // Same two rules as above, evaluated at x = 1 they fire 0.25 / 0.75;
        // shifting both centers by 1 gives the same strengths at x = 2.
        let w1 = 1.0 / (10.0f64.ln()).sqrt();
        let w2 = 1.0 / (1.0f64 / 0.3).ln().sqrt();
        let b = bank(array![[1.0], [1.0]], array![[w1], [w2]]);
        let h = build_design_matrix(array![[2.0]].view(), &b).unwrap();
        let expected = [0.25, 0.5, 0.75, 1.5];
        for (got, want) in h.view().iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-14);
        }
        let z = branch_output(&h, array![1.0, 1.0, 1.0, 1.0].view()).unwrap();
        assert_abs_diff_eq!(z[0], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn design_matrix_empty_input_keeps_columns() {
        let b = bank(Array2::zeros((3, 2)), Array2::ones((3, 2)));
        let h = build_design_matrix(Array2::<f64>::zeros((0, 2)).view(), &b).unwrap();
        assert_eq!((h.rows(), h.cols()), (0, 9));
    }

    #[test]
    fn branch_output_examples() {
        let b = bank(array![[0.0, 0.0]], array![[1.0, 1.0]]);
        let x = array![[1.0, 2.0], [-4.0, 0.5], [9.0, 9.0]];
        let h = build_design_matrix(x.view(), &b).unwrap();
        let zero = branch_output(&h, Array1::zeros(3).view()).unwrap();
        assert!(zero.iter().all(|&z| z == 0.0));
        let bias = branch_output(&h, array![2.5, 0.0, 0.0].view()).unwrap();
        assert!(bias.iter().all(|&z| z == 2.5));
        assert!(matches!(branch_output(&h, array![1.0].view()), Err(Error::Shape(_))));
    }

    #[test]
    fn hierarchy_output_examples() {
        let y = hierarchy_output(array![[1.0, 2.0]].view(), array![0.5, 0.25].view()).unwrap();
        assert_eq!(y[0], 1.0);
        let z = array![[1.0, 2.0], [3.0, -4.0]];
        let sel = hierarchy_output(z.view(), array![0.0, 1.0].view()).unwrap();
        assert_eq!(sel, z.column(1));
        let zero = hierarchy_output(Array2::<f64>::zeros((2, 2)).view(), array![3.0, 4.0].view()).unwrap();
        assert_eq!(zero, array![0.0, 0.0]);
        assert!(hierarchy_output(z.view(), array![1.0].view()).is_err());
    }

    #[test]
    fn weights_split_and_check() {
        let stacked = Array::range(0.0, 7.0, 1.0);
        let blocks = HierarchyWeights::split(stacked.view(), &[3, 4]).unwrap();
        assert_eq!(blocks[1], array![3.0, 4.0, 5.0, 6.0]);
        let hw = HierarchyWeights::new(blocks, array![1.0, 1.0]).unwrap();
        assert_eq!(hw.concatenated(), stacked);
        let b0 = bank(Array2::zeros((1, 2)), Array2::ones((1, 2)));
        let b1 = bank(Array2::zeros((2, 1)), Array2::ones((2, 1)));
        hw.check_banks(&[b0.clone(), b1]).unwrap();
        assert!(hw.check_banks(&[b0.clone(), b0]).is_err());
    }

    fn arb_bank() -> impl Strategy<Value = (RuleBank<f64>, Array2<f64>, Array1<f64>)> {
        (1usize..5, 1usize..4, 1usize..6).prop_flat_map(|(k, d, n)| {
            (
                prop::collection::vec(-3.0f64..3.0, k * d),
                prop::collection::vec(0.2f64..2.0, k * d),
                prop::collection::vec(-4.0f64..4.0, n * d),
                prop::collection::vec(-2.0f64..2.0, k * (d + 1)),
            )
                .prop_map(move |(c, s, x, w)| {
                    let b = RuleBank::new(
                        0,
                        Array2::from_shape_vec((k, d), c).unwrap(),
                        Array2::from_shape_vec((k, d), s).unwrap(),
                    )
                    .unwrap();
                    (b, Array2::from_shape_vec((n, d), x).unwrap(), Array1::from(w))
                })
        })
    }

    proptest! {
        #[test]
        fn normalized_strengths_sum_to_one((b, x, _w) in arb_bank()) {
            for xi in x.rows() {
                let fs = firing_strengths(xi, &b).unwrap();
                let s: f64 = fs.normalized.sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
                prop_assert!(fs.normalized.iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }

        #[test]
        fn membership_peaks_at_center(c in -5.0f64..5.0, s in 0.1f64..3.0, a in 0.0f64..4.0, da in 1e-3f64..2.0) {
            let set = GaussianFuzzySet::new(c, s).unwrap();
            prop_assert_eq!(set.membership(c).unwrap(), 1.0);
            let near = set.membership(c + a).unwrap();
            let far = set.membership(c - (a + da)).unwrap();
            prop_assert!(far < near || near == 0.0);
        }

        #[test]
        fn matrix_and_direct_paths_agree((b, x, w) in arb_bank()) {
            let h = build_design_matrix(x.view(), &b).unwrap();
            let via_h = branch_output(&h, w.view()).unwrap();
            let direct = branch_output_direct(x.view(), &b, w.view()).unwrap();
            for (a, d) in via_h.iter().zip(direct.iter()) {
                prop_assert!((a - d).abs() <= 1e-12);
            }
        }
    }
}
