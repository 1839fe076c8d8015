//! Dense linear algebra, activations and the Adam optimizer.
//!
//! Everything is `f64`; the gradient checks need the headroom.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NecError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector(#[serde(with = "crate::codec::f64_array")] Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self(data)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Self(data)
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    #[serde(with = "crate::codec::f64_array")]
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    #[serde(with = "crate::codec::f64_array")]
    data: Vec<f64>,
}

impl TryFrom<MatrixRepr> for Matrix {
    type Error = NecError;

    fn try_from(r: MatrixRepr) -> Result<Self> {
        Matrix::from_vec(r.rows, r.cols, r.data)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(NecError::shape(
                "Matrix::from_vec",
                rows * cols,
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(NecError::shape("Matrix::from_rows", cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Entries drawn uniformly from `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self += a bᵀ`
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (x, &bj) in row.iter_mut().zip(b) {
                *x += ai * bj;
            }
        }
    }
}

/// `m v`
pub fn matvec(m: &Matrix, v: &Vector) -> Result<Vector> {
    if m.cols != v.len() {
        return Err(NecError::shape("matvec", m.cols, v.len()));
    }
    Ok(Vector(matvec_slice(m, v.as_slice())))
}

pub(crate) fn matvec_slice(m: &Matrix, v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.cols, v.len());
    (0..m.rows)
        .map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// `out += mᵀ v`
pub(crate) fn add_matvec_transposed(m: &Matrix, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.rows, v.len());
    debug_assert_eq!(m.cols, out.len());
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        for (o, &a) in out.iter_mut().zip(m.row(i)) {
            *o += a * vi;
        }
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &Vector) -> Vector {
    Vector(v.0.iter().map(|&x| sigmoid_scalar(x)).collect())
}

pub fn tanh_vec(v: &Vector) -> Vector {
    Vector(v.0.iter().map(|x| x.tanh()).collect())
}

pub(crate) fn softmax2_array(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Two-class softmax with max subtraction.
pub fn softmax2(logits: &Vector) -> Result<Vector> {
    if logits.len() != 2 {
        return Err(NecError::shape("softmax2", 2, logits.len()));
    }
    let p = softmax2_array([logits[0], logits[1]]);
    Ok(Vector(p.to_vec()))
}

/// A collection of named parameter tensors, visited in a fixed order.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(&'static str, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])>;
}

impl ParamSet for Vector {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![("vector", self.as_slice())]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![("vector", self.as_mut_slice())]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new<P: ParamSet + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let first: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|(_, t)| vec![0.0; t.len()])
            .collect();
        Self {
            config,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// All gradients are validated before any parameter is touched, so an
/// error leaves both `params` and `state` unchanged.
pub fn adam_step<P: ParamSet + ?Sized>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    let mut param_tensors = params.tensors_mut();
    if grad_tensors.len() != param_tensors.len() || state.first.len() != param_tensors.len() {
        return Err(NecError::shape(
            "adam_step tensor count",
            param_tensors.len(),
            grad_tensors.len(),
        ));
    }
    for (((name, p), (_, g)), m) in param_tensors.iter().zip(&grad_tensors).zip(&state.first) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(NecError::shape("adam_step", p.len(), g.len()));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(NecError::NonFinite(format!("gradient of {name}")));
        }
    }

    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);
    for (i, (_, p)) in param_tensors.iter_mut().enumerate() {
        let g = grad_tensors[i].1;
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for j in 0..p.len() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m[j] / correction1;
            let v_hat = v[j] / correction2;
            p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_matvec(m: &Matrix, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m.rows()];
        for (i, o) in out.iter_mut().enumerate() {
            for (j, x) in v.iter().enumerate() {
                *o += m.get(i, j) * x;
            }
        }
        out
    }

    #[test]
    fn matvec_examples() {
        let v = Vector::from(vec![1.0, 2.0, 3.0]);
        assert_eq!(matvec(&Matrix::identity(3), &v).unwrap(), v);
        let z = matvec(&Matrix::zeros(2, 3), &Vector::from(vec![5.0; 3])).unwrap();
        assert_eq!(z.as_slice(), &[0.0, 0.0]);
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let r = matvec(&m, &Vector::from(vec![1.0, 1.0])).unwrap();
        assert_eq!(r.as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_shape_error() {
        let err = matvec(&Matrix::zeros(2, 3), &Vector::zeros(2)).unwrap_err();
        assert!(matches!(err, NecError::Shape { .. }));
    }

    #[test]
    fn matvec_agrees_with_double_loop_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let rows = rng.random_range(1..12);
            let cols = rng.random_range(1..12);
            let m = Matrix::uniform(rows, cols, 3.0, &mut rng);
            let v: Vec<f64> = (0..cols).map(|_| rng.random_range(-3.0..3.0)).collect();
            let fast = matvec(&m, &Vector::from(v.clone())).unwrap();
            for (a, b) in fast.as_slice().iter().zip(naive_matvec(&m, &v)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn transposed_product_matches_explicit_transpose() {
        let m = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        let mut out = vec![0.0; 3];
        add_matvec_transposed(&m, &[1.0, -1.0], &mut out);
        assert_eq!(out, vec![-3.0, -3.0, -3.0]);
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(&Vector::from(vec![0.0]))[0], 0.5);
        assert!((sigmoid(&Vector::from(vec![1000.0]))[0] - 1.0).abs() < 1e-12);
        assert!(sigmoid(&Vector::from(vec![-1000.0]))[0] >= 0.0);
        assert!((sigmoid_scalar(1.0) - 0.7310585786).abs() < 1e-10);
    }

    #[test]
    fn tanh_examples() {
        assert_eq!(tanh_vec(&Vector::from(vec![0.0]))[0], 0.0);
        assert!((tanh_vec(&Vector::from(vec![1.0]))[0] - 0.7615941560).abs() < 1e-10);
    }

    #[test]
    fn softmax2_examples() {
        let p = softmax2(&Vector::from(vec![0.0, 0.0])).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
        let p = softmax2(&Vector::from(vec![2.0, 0.0])).unwrap();
        assert!((p[0] - 0.8807970780).abs() < 1e-10);
        assert!((p[1] - 0.1192029220).abs() < 1e-10);
        assert!(softmax2(&Vector::zeros(3)).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut p = Vector::from(vec![1.5, -2.0]);
        let g = Vector::zeros(2);
        let mut state = AdamState::new(&p, AdamConfig::with_learning_rate(0.1));
        adam_step(&mut p, &g, &mut state).unwrap();
        assert_eq!(p.as_slice(), &[1.5, -2.0]);
        assert_eq!(state.step(), 1);
        assert!(state.first.iter().flatten().all(|&m| m == 0.0));
    }

    #[test]
    fn adam_single_step_closed_form() {
        // m̂ = v̂ = 1 after bias correction, so the step is lr / (1 + ε).
        let mut p = Vector::from(vec![0.0]);
        let mut state = AdamState::new(&p, AdamConfig::with_learning_rate(0.01));
        adam_step(&mut p, &Vector::from(vec![1.0]), &mut state).unwrap();
        let expected = -0.01 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_two_steps_shrink_monotonically() {
        let mut p = Vector::from(vec![1.0]);
        let g = Vector::from(vec![0.5]);
        let mut state = AdamState::new(&p, AdamConfig::with_learning_rate(0.01));
        adam_step(&mut p, &g, &mut state).unwrap();
        let after_one = p[0];
        adam_step(&mut p, &g, &mut state).unwrap();
        assert!(after_one < 1.0);
        assert!(p[0] < after_one);
        // Constant gradient: both bias-corrected moments stay at g and g², so
        // every step has the same size.
        assert!(((1.0 - after_one) - (after_one - p[0])).abs() < 1e-12);
    }

    #[test]
    fn adam_rejects_non_finite_gradient_without_mutation() {
        let mut p = Vector::from(vec![1.0, 2.0]);
        let mut state = AdamState::new(&p, AdamConfig::default());
        let err = adam_step(&mut p, &Vector::from(vec![0.1, f64::NAN]), &mut state).unwrap_err();
        assert!(matches!(err, NecError::NonFinite(ref name) if name.contains("vector")));
        assert_eq!(state.step(), 0);
        assert_eq!(p.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = Vector::from(vec![1.0, 2.0]);
        let mut state = AdamState::new(&p, AdamConfig::default());
        assert!(adam_step(&mut p, &Vector::zeros(3), &mut state).is_err());
    }

    proptest! {
        #[test]
        fn softmax2_sums_to_one_and_is_shift_invariant(
            a in -1e3f64..1e3, b in -1e3f64..1e3, c in -50.0f64..50.0
        ) {
            let p = softmax2_array([a, b]);
            prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
            prop_assert!(p[0] >= 0.0 && p[1] >= 0.0);
            let q = softmax2_array([a + c, b + c]);
            prop_assert!((p[0] - q[0]).abs() <= 1e-12);
        }

        #[test]
        fn activations_are_monotone(x in -50.0f64..50.0, d in 0.0f64..10.0) {
            let y = x + d;
            prop_assert!(sigmoid_scalar(x) <= sigmoid_scalar(y));
            prop_assert!(x.tanh() <= y.tanh());
            prop_assert_eq!((-x).tanh(), -(x.tanh()));
        }
    }
}
