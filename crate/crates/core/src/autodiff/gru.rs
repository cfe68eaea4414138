//! Gated recurrent unit cell, composed from primitive tensor ops so the
//! backward pass comes for free.

use rand::Rng;

use super::tensor::{Tensor, TensorError};

/// Parameters of one GRU cell with reset gate `r`, update gate `z` and
/// candidate state `n`:
///
/// ```text
/// r  = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
/// z  = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
/// n  = tanh(x W_in + b_in + r .* (h W_hn + b_hn))
/// h' = (1 - z) .* n + z .* h
/// ```
pub struct GruParams {
    pub w_ir: Tensor,
    pub w_iz: Tensor,
    pub w_in: Tensor,
    pub w_hr: Tensor,
    pub w_hz: Tensor,
    pub w_hn: Tensor,
    pub b_ir: Tensor,
    pub b_iz: Tensor,
    pub b_in: Tensor,
    pub b_hr: Tensor,
    pub b_hz: Tensor,
    pub b_hn: Tensor,
}

impl GruParams {
    /// Uniform init in `(-1/sqrt(hidden), 1/sqrt(hidden))`.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> GruParams {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let mut mat = |rows: usize, cols: usize| {
            let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::param(&[rows, cols], data).unwrap()
        };
        let w_ir = mat(input_dim, hidden_dim);
        let w_iz = mat(input_dim, hidden_dim);
        let w_in = mat(input_dim, hidden_dim);
        let w_hr = mat(hidden_dim, hidden_dim);
        let w_hz = mat(hidden_dim, hidden_dim);
        let w_hn = mat(hidden_dim, hidden_dim);
        let mut vec = |cols: usize| {
            let data = (0..cols).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::param(&[cols], data).unwrap()
        };
        GruParams {
            w_ir,
            w_iz,
            w_in,
            w_hr,
            w_hz,
            w_hn,
            b_ir: vec(hidden_dim),
            b_iz: vec(hidden_dim),
            b_in: vec(hidden_dim),
            b_hr: vec(hidden_dim),
            b_hz: vec(hidden_dim),
            b_hn: vec(hidden_dim),
        }
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        vec![
            self.w_ir.clone(),
            self.w_iz.clone(),
            self.w_in.clone(),
            self.w_hr.clone(),
            self.w_hz.clone(),
            self.w_hn.clone(),
            self.b_ir.clone(),
            self.b_iz.clone(),
            self.b_in.clone(),
            self.b_hr.clone(),
            self.b_hz.clone(),
            self.b_hn.clone(),
        ]
    }
}

/// One GRU update for a row batch: `x` is `[rows, input_dim]`, `h` is
/// `[rows, hidden_dim]`, the result is the next hidden state.
pub fn gru_step(x: &Tensor, h: &Tensor, params: &GruParams) -> Result<Tensor, TensorError> {
    let r = x
        .matmul(&params.w_ir)?
        .add_bias(&params.b_ir)?
        .add(&h.matmul(&params.w_hr)?.add_bias(&params.b_hr)?)?
        .sigmoid();
    let z = x
        .matmul(&params.w_iz)?
        .add_bias(&params.b_iz)?
        .add(&h.matmul(&params.w_hz)?.add_bias(&params.b_hz)?)?
        .sigmoid();
    let hn = h.matmul(&params.w_hn)?.add_bias(&params.b_hn)?;
    let n = x.matmul(&params.w_in)?.add_bias(&params.b_in)?.add(&r.mul(&hn)?)?.tanh();
    // (1 - z).*n + z.*h == n + z.*(h - n)
    n.add(&z.mul(&h.sub(&n)?)?)
}
