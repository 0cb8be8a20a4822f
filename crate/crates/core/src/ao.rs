//! High-level coordination by alternating optimization.
//!
//! With the antecedents fixed, the pooled training problem
//!
//! ```text
//! min_{ŵ, v}  ½‖Y − Σ_b v_b H^b w^b‖² + (λ/2)‖ŵ‖² + (μ/2)‖v‖²
//! ```
//!
//! is convex in `ŵ` for fixed `v` and in `v` for fixed `ŵ`. Each half-step is
//! a ridge regression solved through its normal equations with a Cholesky
//! factorization.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::fnn::HierarchyWeights;
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AoConfig<T> {
    pub lambda: T,
    pub mu: T,
    pub iterations: usize,
    /// Stop early once the relative objective change of a full iteration
    /// falls below this value.
    pub rel_tol: Option<T>,
}

impl<T: Scalar> AoConfig<T> {
    pub fn new(lambda: T, mu: T, iterations: usize) -> Result<Self> {
        let cfg = Self {
            lambda,
            mu,
            iterations,
            rel_tol: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > T::zero() && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda = {} must be finite and > 0", self.lambda)));
        }
        if !(self.mu > T::zero() && self.mu.is_finite()) {
            return Err(Error::invalid(format!("mu = {} must be finite and > 0", self.mu)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("at least one AO iteration is required"));
        }
        Ok(())
    }
}

/// Solves a symmetric positive-definite system in place of `a`.
fn cholesky_solve<T: Scalar>(mut a: Array2<T>, b: ArrayView1<'_, T>) -> Result<Array1<T>> {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if !(d > T::zero() && d.is_finite()) {
            return Err(Error::Numeric(format!(
                "normal matrix is not positive definite (pivot {j} = {d})"
            )));
        }
        let l = d.sqrt();
        a[[j, j]] = l;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = s / l;
        }
    }
    let mut x = b.to_owned();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= a[[i, k]] * x[k];
        }
        x[i] = s / a[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= a[[k, i]] * x[k];
        }
        x[i] = s / a[[i, i]];
    }
    Ok(x)
}

fn check_finite<T: Scalar>(what: &str, mut values: impl Iterator<Item = T>) -> Result<()> {
    match values.find(|v| !v.is_finite()) {
        Some(v) => Err(Error::Numeric(format!("{what} contains non-finite value {v}"))),
        None => Ok(()),
    }
}

fn add_ridge<T: Scalar>(gram: &mut Array2<T>, reg: T) {
    gram.diag_mut().mapv_inplace(|d| d + reg);
}

/// `x = (AᵀA + reg·I)⁻¹ Aᵀy`.
pub fn ridge_solve<T: Scalar>(a: ArrayView2<'_, T>, y: ArrayView1<'_, T>, reg: T) -> Result<Array1<T>> {
    if a.nrows() != y.len() {
        return Err(Error::shape(format!("A has {} rows, y has {}", a.nrows(), y.len())));
    }
    if !(reg > T::zero() && reg.is_finite()) {
        return Err(Error::invalid(format!("ridge penalty {reg} must be finite and > 0")));
    }
    check_finite("design matrix", a.iter().copied())?;
    check_finite("target", y.iter().copied())?;
    let mut gram = a.t().dot(&a);
    add_ridge(&mut gram, reg);
    let rhs = a.t().dot(&y);
    cholesky_solve(gram, rhs.view())
}

/// `‖(AᵀA + reg·I)x − Aᵀy‖ / ‖Aᵀy‖` (absolute when `Aᵀy = 0`).
pub fn normal_equation_residual<T: Scalar>(
    a: ArrayView2<'_, T>,
    y: ArrayView1<'_, T>,
    reg: T,
    x: ArrayView1<'_, T>,
) -> T {
    let rhs = a.t().dot(&y);
    let lhs = a.t().dot(&a.dot(&x)) + &x.mapv(|v| v * reg);
    let num = (&lhs - &rhs).mapv(|v| v * v).sum().sqrt();
    let den = rhs.mapv(|v| v * v).sum().sqrt();
    if den > T::zero() {
        num / den
    } else {
        num
    }
}

fn check_blocks<T: Scalar>(blocks: &[ArrayView2<'_, T>], y_len: usize) -> Result<()> {
    if blocks.is_empty() {
        return Err(Error::invalid("at least one branch is required"));
    }
    for (b, h) in blocks.iter().enumerate() {
        if h.nrows() != y_len {
            return Err(Error::shape(format!(
                "branch {b} design matrix has {} rows, expected {y_len}",
                h.nrows()
            )));
        }
    }
    Ok(())
}

/// `H_w = [v_1 H¹, …, v_B H^B]`.
pub fn build_hw<T: Scalar>(blocks: &[ArrayView2<'_, T>], v: ArrayView1<'_, T>) -> Result<Array2<T>> {
    let rows = blocks.first().map_or(0, |h| h.nrows());
    check_blocks(blocks, rows)?;
    if v.len() != blocks.len() {
        return Err(Error::shape(format!("{} branches but {} coordination weights", blocks.len(), v.len())));
    }
    let scaled: Vec<Array2<T>> = blocks.iter().zip(v).map(|(h, &vb)| h.mapv(|x| x * vb)).collect();
    let views: Vec<_> = scaled.iter().map(|a| a.view()).collect();
    concatenate(Axis(1), &views).map_err(|e| Error::shape(e.to_string()))
}

fn block_sizes<T: Scalar>(blocks: &[ArrayView2<'_, T>]) -> Vec<usize> {
    blocks.iter().map(|h| h.ncols()).collect()
}

fn check_weights<T: Scalar>(blocks: &[ArrayView2<'_, T>], w: &[Array1<T>]) -> Result<()> {
    if w.len() != blocks.len() {
        return Err(Error::shape(format!("{} branches but {} consequent blocks", blocks.len(), w.len())));
    }
    for (b, (h, wb)) in blocks.iter().zip(w).enumerate() {
        if h.ncols() != wb.len() {
            return Err(Error::shape(format!(
                "branch {b}: {} design columns, {} weights",
                h.ncols(),
                wb.len()
            )));
        }
    }
    Ok(())
}

/// Consequent half-step: ridge fit of `H_w` on `Y`, split per branch.
pub fn update_w<T: Scalar>(
    blocks: &[ArrayView2<'_, T>],
    v: ArrayView1<'_, T>,
    y: ArrayView1<'_, T>,
    lambda: T,
) -> Result<Vec<Array1<T>>> {
    check_blocks(blocks, y.len())?;
    let hw = build_hw(blocks, v)?;
    let stacked = ridge_solve(hw.view(), y, lambda)?;
    HierarchyWeights::split(stacked.view(), &block_sizes(blocks))
}

/// Branch outputs `Z = [H¹w¹, …, H^B w^B]`.
pub fn hidden_outputs<T: Scalar>(blocks: &[ArrayView2<'_, T>], w: &[Array1<T>]) -> Result<Array2<T>> {
    check_weights(blocks, w)?;
    let rows = blocks[0].nrows();
    let mut z = Array2::zeros((rows, blocks.len()));
    for (b, (h, wb)) in blocks.iter().zip(w).enumerate() {
        if h.nrows() != rows {
            return Err(Error::shape("design matrices differ in row count"));
        }
        z.column_mut(b).assign(&h.dot(wb));
    }
    Ok(z)
}

/// Coordination half-step: ridge fit of `Z` on `Y`.
pub fn update_v<T: Scalar>(
    blocks: &[ArrayView2<'_, T>],
    w: &[Array1<T>],
    y: ArrayView1<'_, T>,
    mu: T,
) -> Result<Array1<T>> {
    check_blocks(blocks, y.len())?;
    let z = hidden_outputs(blocks, w)?;
    ridge_solve(z.view(), y, mu)
}

fn prediction<T: Scalar>(blocks: &[ArrayView2<'_, T>], w: &[Array1<T>], v: ArrayView1<'_, T>) -> Result<Array1<T>> {
    let z = hidden_outputs(blocks, w)?;
    if v.len() != z.ncols() {
        return Err(Error::shape(format!("{} branches but {} coordination weights", z.ncols(), v.len())));
    }
    Ok(z.dot(&v))
}

fn sq_norm<'a, T: Scalar>(x: impl IntoIterator<Item = &'a T>) -> T {
    x.into_iter().map(|&v| v * v).sum()
}

/// `½‖Y − Σ_b v_b H^b w^b‖² + (λ/2)‖ŵ‖² + (μ/2)‖v‖²`.
pub fn objective<T: Scalar>(
    blocks: &[ArrayView2<'_, T>],
    w: &[Array1<T>],
    v: ArrayView1<'_, T>,
    y: ArrayView1<'_, T>,
    lambda: T,
    mu: T,
) -> Result<T> {
    check_blocks(blocks, y.len())?;
    let fit = data_fit(blocks, w, v, y)?;
    let half = T::lit(0.5);
    Ok(fit + half * lambda * sq_norm(w.iter().flatten()) + half * mu * sq_norm(v.iter()))
}

/// Data-fit term `½‖Y − Σ_b v_b H^b w^b‖²` alone.
pub fn data_fit<T: Scalar>(
    blocks: &[ArrayView2<'_, T>],
    w: &[Array1<T>],
    v: ArrayView1<'_, T>,
    y: ArrayView1<'_, T>,
) -> Result<T> {
    let pred = prediction(blocks, w, v)?;
    if pred.len() != y.len() {
        return Err(Error::shape("prediction and target lengths differ"));
    }
    Ok(T::lit(0.5) * sq_norm((&y - &pred).iter()))
}

/// Gradient of the objective in the stacked consequent weights,
/// `H_wᵀ(H_w ŵ − Y) + λŵ`.
pub fn gradient_w<T: Scalar>(
    blocks: &[ArrayView2<'_, T>],
    w: &[Array1<T>],
    v: ArrayView1<'_, T>,
    y: ArrayView1<'_, T>,
    lambda: T,
) -> Result<Array1<T>> {
    let residual = prediction(blocks, w, v)? - y;
    let hw = build_hw(blocks, v)?;
    let stacked: Array1<T> = w.iter().flatten().copied().collect();
    Ok(hw.t().dot(&residual) + &stacked.mapv(|x| x * lambda))
}

/// Gradient of the objective in the coordination weights, `Zᵀ(Zv − Y) + μv`.
pub fn gradient_v<T: Scalar>(
    blocks: &[ArrayView2<'_, T>],
    w: &[Array1<T>],
    v: ArrayView1<'_, T>,
    y: ArrayView1<'_, T>,
    mu: T,
) -> Result<Array1<T>> {
    let z = hidden_outputs(blocks, w)?;
    let residual = z.dot(&v) - y;
    Ok(z.t().dot(&residual) + &v.mapv(|x| x * mu))
}

/// Pooled problem with `HᵀH` and `HᵀY` precomputed, so each half-step only
/// rescales cached products instead of touching every sample.
pub struct Stage2Problem<'a, T> {
    blocks: Vec<ArrayView2<'a, T>>,
    y: ArrayView1<'a, T>,
    gram: Array2<T>,
    hty: Array1<T>,
    offsets: Vec<usize>,
}

impl<'a, T: Scalar> Stage2Problem<'a, T> {
    pub fn new(blocks: &[ArrayView2<'a, T>], y: ArrayView1<'a, T>) -> Result<Self> {
        check_blocks(blocks, y.len())?;
        for h in blocks {
            check_finite("design matrix", h.iter().copied())?;
        }
        check_finite("target", y.iter().copied())?;
        let h = concatenate(Axis(1), blocks).map_err(|e| Error::shape(e.to_string()))?;
        let gram = h.t().dot(&h);
        let hty = h.t().dot(&y);
        let mut offsets = vec![0];
        for b in blocks {
            offsets.push(offsets.last().unwrap() + b.ncols());
        }
        Ok(Self {
            blocks: blocks.to_vec(),
            y,
            gram,
            hty,
            offsets,
        })
    }

    pub fn branches(&self) -> usize {
        self.blocks.len()
    }

    fn block_of(&self, col: usize) -> usize {
        self.offsets.partition_point(|&o| o <= col) - 1
    }

    /// Consequent half-step for fixed `v`.
    pub fn solve_w(&self, v: ArrayView1<'_, T>, lambda: T) -> Result<Vec<Array1<T>>> {
        if v.len() != self.branches() {
            return Err(Error::shape("coordination vector length differs from branch count"));
        }
        let n = self.gram.nrows();
        let scale: Vec<T> = (0..n).map(|i| v[self.block_of(i)]).collect();
        let mut m = Array2::from_shape_fn((n, n), |(i, j)| scale[i] * scale[j] * self.gram[[i, j]]);
        add_ridge(&mut m, lambda);
        let rhs: Array1<T> = self.hty.iter().zip(&scale).map(|(&h, &s)| h * s).collect();
        let stacked = cholesky_solve(m, rhs.view())?;
        let sizes: Vec<usize> = self.offsets.windows(2).map(|w| w[1] - w[0]).collect();
        HierarchyWeights::split(stacked.view(), &sizes)
    }

    /// Coordination half-step for fixed `ŵ`.
    pub fn solve_v(&self, w: &[Array1<T>], mu: T) -> Result<Array1<T>> {
        check_weights(&self.blocks, w)?;
        let nb = self.branches();
        let g_w: Vec<Array1<T>> = (0..nb)
            .map(|b| self.gram.slice(s![.., self.offsets[b]..self.offsets[b + 1]]).dot(&w[b]))
            .collect();
        let mut ztz = Array2::zeros((nb, nb));
        for a in 0..nb {
            let wa = &w[a];
            for (b, gwb) in g_w.iter().enumerate() {
                ztz[[a, b]] = wa.dot(&gwb.slice(s![self.offsets[a]..self.offsets[a + 1]]));
            }
        }
        add_ridge(&mut ztz, mu);
        let zty: Array1<T> = (0..nb)
            .map(|a| w[a].dot(&self.hty.slice(s![self.offsets[a]..self.offsets[a + 1]])))
            .collect();
        cholesky_solve(ztz, zty.view())
    }

    pub fn objective(&self, w: &[Array1<T>], v: ArrayView1<'_, T>, lambda: T, mu: T) -> Result<T> {
        objective(&self.blocks, w, v, self.y, lambda, mu)
    }
}

#[derive(Clone, Debug)]
pub struct Stage2Outcome<T> {
    pub weights: HierarchyWeights<T>,
    /// Objective after every half-step (w then v).
    pub objective_history: Vec<T>,
    pub iterations: usize,
    /// Coordination weights the final `ŵ` was solved against.
    pub v_for_last_w: Array1<T>,
}

/// Seeded `N(0, 1)/B` draw for the coordination weights.
pub fn initial_v<T: Scalar>(branches: usize, seed: u64) -> Array1<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / branches as f64;
    (0..branches)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::lit(z * scale)
        })
        .collect()
}

/// Alternates consequent and coordination solves for `config.iterations`
/// rounds, starting from a seeded random `v`.
pub fn run_stage2<T: Scalar>(
    blocks: &[ArrayView2<'_, T>],
    y: ArrayView1<'_, T>,
    config: &AoConfig<T>,
    seed: u64,
) -> Result<Stage2Outcome<T>> {
    config.validate()?;
    let problem = Stage2Problem::new(blocks, y)?;
    let mut v = initial_v::<T>(blocks.len(), seed);
    let mut history = Vec::with_capacity(2 * config.iterations);
    let mut w = Vec::new();
    let mut v_for_last_w = v.clone();
    let mut iterations = 0;
    for _ in 0..config.iterations {
        w = problem.solve_w(v.view(), config.lambda)?;
        v_for_last_w = v.clone();
        history.push(problem.objective(&w, v.view(), config.lambda, config.mu)?);
        v = problem.solve_v(&w, config.mu)?;
        history.push(problem.objective(&w, v.view(), config.lambda, config.mu)?);
        iterations += 1;
        if let (Some(tol), [.., before, _, after]) = (config.rel_tol, history.as_slice()) {
            let scale = before.abs().max(T::min_positive_value());
            if (*before - *after).abs() <= tol * scale {
                break;
            }
        }
    }
    Ok(Stage2Outcome {
        weights: HierarchyWeights::new(w, v)?,
        objective_history: history,
        iterations,
        v_for_last_w,
    })
}
