//! GRU recurrence with a two-way linear head, and exact BPTT gradients.
//!
//! Per step, with `h₀ = 0`:
//!
//! ```text
//! z  = σ(W_z x + U_z h_prev + b_z)
//! r  = σ(W_r x + U_r h_prev + b_r)
//! h̃  = tanh(W_h x + U_h (r ⊙ h_prev) + b_h)
//! h  = (1 − z) ⊙ h_prev + z ⊙ h̃
//! ŷ  = W h + b
//! P  = softmax(ŷ)
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NecError, Result};
use crate::numerics::{
    add_matvec_transposed, matvec_slice, sigmoid_scalar, softmax2_array, Matrix, ParamSet, Vector,
};
use crate::rng::SeedStream;

/// Number of output classes: index 0 is real, index 1 is fake.
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_z: Matrix,
    pub u_z: Matrix,
    pub b_z: Vector,
    pub w_r: Matrix,
    pub u_r: Matrix,
    pub b_r: Vector,
    pub w_h: Matrix,
    pub u_h: Matrix,
    pub b_h: Vector,
    pub head_w: Matrix,
    pub head_b: Vector,
}

impl ModelParams {
    /// Tensor names in canonical order.
    pub const TENSOR_NAMES: [&'static str; 11] = [
        "w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h", "head_w", "head_b",
    ];

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w_z: Matrix::zeros(hidden_dim, input_dim),
            u_z: Matrix::zeros(hidden_dim, hidden_dim),
            b_z: Vector::zeros(hidden_dim),
            w_r: Matrix::zeros(hidden_dim, input_dim),
            u_r: Matrix::zeros(hidden_dim, hidden_dim),
            b_r: Vector::zeros(hidden_dim),
            w_h: Matrix::zeros(hidden_dim, input_dim),
            u_h: Matrix::zeros(hidden_dim, hidden_dim),
            b_h: Vector::zeros(hidden_dim),
            head_w: Matrix::zeros(NUM_CLASSES, hidden_dim),
            head_b: Vector::zeros(NUM_CLASSES),
        }
    }

    /// Every weight matrix uniform in `±1/√fan_in`, biases zero.
    pub fn uniform<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let bx = 1.0 / (input_dim as f64).sqrt();
        let bh = 1.0 / (hidden_dim as f64).sqrt();
        Self {
            input_dim,
            hidden_dim,
            w_z: Matrix::uniform(hidden_dim, input_dim, bx, rng),
            u_z: Matrix::uniform(hidden_dim, hidden_dim, bh, rng),
            b_z: Vector::zeros(hidden_dim),
            w_r: Matrix::uniform(hidden_dim, input_dim, bx, rng),
            u_r: Matrix::uniform(hidden_dim, hidden_dim, bh, rng),
            b_r: Vector::zeros(hidden_dim),
            w_h: Matrix::uniform(hidden_dim, input_dim, bx, rng),
            u_h: Matrix::uniform(hidden_dim, hidden_dim, bh, rng),
            b_h: Vector::zeros(hidden_dim),
            head_w: Matrix::uniform(NUM_CLASSES, hidden_dim, bh, rng),
            head_b: Vector::zeros(NUM_CLASSES),
        }
    }

    /// Training initialization: uniform recurrent weights, zero head.
    ///
    /// A zero head gives `P = [0.5, 0.5]` at every step, so an untrained
    /// model never passes the stopping rule's confidence bar.
    pub fn init(input_dim: usize, hidden_dim: usize, seeds: &SeedStream) -> Self {
        let mut rng = seeds.derive("model/init");
        let mut params = Self::uniform(input_dim, hidden_dim, &mut rng);
        params.head_w = Matrix::zeros(NUM_CLASSES, hidden_dim);
        params
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden_dim)
    }

    /// `(rows, cols)` of each tensor in canonical order; vectors are `(len, 1)`.
    pub fn shapes(&self) -> Vec<(&'static str, (usize, usize))> {
        let (dx, dh) = (self.input_dim, self.hidden_dim);
        vec![
            ("w_z", (dh, dx)),
            ("u_z", (dh, dh)),
            ("b_z", (dh, 1)),
            ("w_r", (dh, dx)),
            ("u_r", (dh, dh)),
            ("b_r", (dh, 1)),
            ("w_h", (dh, dx)),
            ("u_h", (dh, dh)),
            ("b_h", (dh, 1)),
            ("head_w", (NUM_CLASSES, dh)),
            ("head_b", (NUM_CLASSES, 1)),
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Checks that every tensor matches the declared dimensions.
    pub fn validate(&self) -> Result<()> {
        let actual = [
            self.w_z.shape(),
            self.u_z.shape(),
            (self.b_z.len(), 1),
            self.w_r.shape(),
            self.u_r.shape(),
            (self.b_r.len(), 1),
            self.w_h.shape(),
            self.u_h.shape(),
            (self.b_h.len(), 1),
            self.head_w.shape(),
            (self.head_b.len(), 1),
        ];
        for ((name, expected), got) in self.shapes().into_iter().zip(actual) {
            if expected != got {
                return Err(NecError::Shape {
                    context: "ModelParams",
                    expected: format!("{name} {expected:?}"),
                    actual: format!("{got:?}"),
                });
            }
        }
        if !self.is_finite() {
            return Err(NecError::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }

    /// Euclidean norm over all tensors.
    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

impl ParamSet for ModelParams {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_z", self.w_z.as_slice()),
            ("u_z", self.u_z.as_slice()),
            ("b_z", self.b_z.as_slice()),
            ("w_r", self.w_r.as_slice()),
            ("u_r", self.u_r.as_slice()),
            ("b_r", self.b_r.as_slice()),
            ("w_h", self.w_h.as_slice()),
            ("u_h", self.u_h.as_slice()),
            ("b_h", self.b_h.as_slice()),
            ("head_w", self.head_w.as_slice()),
            ("head_b", self.head_b.as_slice()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("w_z", self.w_z.as_mut_slice()),
            ("u_z", self.u_z.as_mut_slice()),
            ("b_z", self.b_z.as_mut_slice()),
            ("w_r", self.w_r.as_mut_slice()),
            ("u_r", self.u_r.as_mut_slice()),
            ("b_r", self.b_r.as_mut_slice()),
            ("w_h", self.w_h.as_mut_slice()),
            ("u_h", self.u_h.as_mut_slice()),
            ("b_h", self.b_h.as_mut_slice()),
            ("head_w", self.head_w.as_mut_slice()),
            ("head_b", self.head_b.as_mut_slice()),
        ]
    }
}

/// Gate activations of one cell evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CellActivations {
    pub update: Vec<f64>,
    pub reset: Vec<f64>,
    pub candidate: Vec<f64>,
}

/// One timestep of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub input: Vector,
    pub gates: CellActivations,
    pub hidden: Vector,
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub steps: Vec<StepTrace>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn probabilities(&self) -> Vec<[f64; 2]> {
        self.steps.iter().map(|s| s.probs).collect()
    }
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(NecError::shape(context, expected, actual))
    }
}

/// Advances the recurrence by one input.
pub fn gru_cell(params: &ModelParams, x: &Vector, h_prev: &Vector) -> Result<(Vector, CellActivations)> {
    check_len("gru_cell input", params.input_dim, x.len())?;
    check_len("gru_cell hidden", params.hidden_dim, h_prev.len())?;
    Ok(cell_unchecked(params, x.as_slice(), h_prev.as_slice()))
}

fn cell_unchecked(params: &ModelParams, x: &[f64], h_prev: &[f64]) -> (Vector, CellActivations) {
    let dh = params.hidden_dim;
    let wz = matvec_slice(&params.w_z, x);
    let uz = matvec_slice(&params.u_z, h_prev);
    let wr = matvec_slice(&params.w_r, x);
    let ur = matvec_slice(&params.u_r, h_prev);
    let update: Vec<f64> = (0..dh)
        .map(|i| sigmoid_scalar(wz[i] + uz[i] + params.b_z[i]))
        .collect();
    let reset: Vec<f64> = (0..dh)
        .map(|i| sigmoid_scalar(wr[i] + ur[i] + params.b_r[i]))
        .collect();
    let gated: Vec<f64> = (0..dh).map(|i| reset[i] * h_prev[i]).collect();
    let wh = matvec_slice(&params.w_h, x);
    let uh = matvec_slice(&params.u_h, &gated);
    let candidate: Vec<f64> = (0..dh)
        .map(|i| (wh[i] + uh[i] + params.b_h[i]).tanh())
        .collect();
    let hidden: Vec<f64> = (0..dh)
        .map(|i| (1.0 - update[i]) * h_prev[i] + update[i] * candidate[i])
        .collect();
    (
        Vector::from(hidden),
        CellActivations {
            update,
            reset,
            candidate,
        },
    )
}

/// Linear head followed by two-class softmax.
pub fn head(params: &ModelParams, hidden: &[f64]) -> ([f64; 2], [f64; 2]) {
    let raw = matvec_slice(&params.head_w, hidden);
    let logits = [raw[0] + params.head_b[0], raw[1] + params.head_b[1]];
    (logits, softmax2_array(logits))
}

/// Runs the model over a whole sequence from `h₀ = 0`.
pub fn forward(params: &ModelParams, xs: &[Vector]) -> Result<ForwardTrace> {
    if xs.is_empty() {
        return Err(NecError::EmptyInput("forward: feature sequence"));
    }
    let mut h = Vector::zeros(params.hidden_dim);
    let mut steps = Vec::with_capacity(xs.len());
    for x in xs {
        let step = step_forward(params, x, &h)?;
        h = step.hidden.clone();
        steps.push(step);
    }
    Ok(ForwardTrace { steps })
}

/// One cell step plus head, shared by batch and incremental evaluation.
pub(crate) fn step_forward(params: &ModelParams, x: &Vector, h_prev: &Vector) -> Result<StepTrace> {
    let (hidden, gates) = gru_cell(params, x, h_prev)?;
    let (logits, probs) = head(params, hidden.as_slice());
    Ok(StepTrace {
        input: x.clone(),
        gates,
        hidden,
        logits,
        probs,
    })
}

/// Gradients of a loss with respect to every parameter, given the loss
/// gradient with respect to the logits at each step.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, dlogits: &[[f64; 2]]) -> Result<ModelParams> {
    check_len("backward: upstream gradients", trace.len(), dlogits.len())?;
    let dh_len = params.hidden_dim;
    let mut grads = params.zeros_like();
    let zeros = vec![0.0; dh_len];
    // Gradient flowing into h_t from step t+1.
    let mut dh_next = vec![0.0; dh_len];

    for t in (0..trace.len()).rev() {
        let step = &trace.steps[t];
        let h_prev: &[f64] = if t == 0 {
            &zeros
        } else {
            trace.steps[t - 1].hidden.as_slice()
        };
        let x = step.input.as_slice();
        let CellActivations {
            update: z,
            reset: r,
            candidate: n,
        } = &step.gates;
        let dy = dlogits[t];

        grads.head_b[0] += dy[0];
        grads.head_b[1] += dy[1];
        grads.head_w.add_outer(&dy, step.hidden.as_slice());
        let mut dh = dh_next.clone();
        add_matvec_transposed(&params.head_w, &dy, &mut dh);

        let mut dh_prev = vec![0.0; dh_len];
        let mut da_z = vec![0.0; dh_len];
        let mut da_n = vec![0.0; dh_len];
        for i in 0..dh_len {
            dh_prev[i] = dh[i] * (1.0 - z[i]);
            da_z[i] = dh[i] * (n[i] - h_prev[i]) * z[i] * (1.0 - z[i]);
            da_n[i] = dh[i] * z[i] * (1.0 - n[i] * n[i]);
        }

        let gated: Vec<f64> = (0..dh_len).map(|i| r[i] * h_prev[i]).collect();
        grads.w_h.add_outer(&da_n, x);
        grads.u_h.add_outer(&da_n, &gated);
        for (b, d) in grads.b_h.as_mut_slice().iter_mut().zip(&da_n) {
            *b += d;
        }
        let mut d_gated = vec![0.0; dh_len];
        add_matvec_transposed(&params.u_h, &da_n, &mut d_gated);

        let mut da_r = vec![0.0; dh_len];
        for i in 0..dh_len {
            dh_prev[i] += d_gated[i] * r[i];
            da_r[i] = d_gated[i] * h_prev[i] * r[i] * (1.0 - r[i]);
        }

        grads.w_z.add_outer(&da_z, x);
        grads.u_z.add_outer(&da_z, h_prev);
        grads.w_r.add_outer(&da_r, x);
        grads.u_r.add_outer(&da_r, h_prev);
        for i in 0..dh_len {
            grads.b_z[i] += da_z[i];
            grads.b_r[i] += da_r[i];
        }
        add_matvec_transposed(&params.u_z, &da_z, &mut dh_prev);
        add_matvec_transposed(&params.u_r, &da_r, &mut dh_prev);

        dh_next = dh_prev;
    }

    if !grads.is_finite() {
        return Err(NecError::NonFinite("BPTT gradients".into()));
    }
    Ok(grads)
}
