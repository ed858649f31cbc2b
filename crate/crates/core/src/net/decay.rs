use super::ModelError;
use crate::autodiff::{Tape, Tensor, Var};

/// Every eigenvalue of the generator `A = Q·Σ·Q⁻¹` is fixed to this value
/// (`Σ = −I`).
pub const SIGMA_EIGENVALUE: f64 = -1.0;

/// Learned eigenbasis `Q`, separately learned `Q⁻¹`, fixed `Σ = −I`, and
/// time constant `τ`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayOperator {
    pub q: Tensor,
    pub q_inv: Tensor,
    pub tau: f64,
}

/// Scalar `e^{Σᵢᵢ·t/τ} = e^{−t/τ}` shared by every mode.
pub fn decay_factor(t: usize, tau: f64) -> Result<f64, ModelError> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(ModelError::Config(format!("τ must be positive, got {tau}")));
    }
    Ok((SIGMA_EIGENVALUE * t as f64 / tau).exp())
}

impl DecayOperator {
    pub fn dim(&self) -> usize {
        self.q.shape()[0]
    }

    /// `Σ = −I`.
    pub fn sigma(&self) -> Tensor {
        let d = self.dim();
        let mut s = Tensor::zeros(&[d, d]);
        for i in 0..d {
            s.data_mut()[i * d + i] = SIGMA_EIGENVALUE;
        }
        s
    }

    /// `Q·Q⁻¹`, i.e. `M(0)`.
    pub fn basis_product(&self) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let q = tape.constant(self.q.clone());
        let qi = tape.constant(self.q_inv.clone());
        let m = tape.matmul(q, qi)?;
        Ok(tape.value(m).clone())
    }

    /// `M(t) = Q·diag(e^{−t/τ})·Q⁻¹ = e^{−t/τ}·(Q·Q⁻¹)`.
    pub fn matrix(&self, t: usize) -> Result<Tensor, ModelError> {
        let f = decay_factor(t, self.tau)?;
        Ok(self.basis_product()?.map(|v| v * f))
    }

    /// Tape version of [`DecayOperator::matrix`]; gradients reach `Q` and `Q⁻¹`
    /// through `basis` (the recorded `Q·Q⁻¹`).
    pub fn matrix_on_tape(
        tape: &mut Tape,
        basis: Var,
        t: usize,
        tau: f64,
    ) -> Result<Var, ModelError> {
        let f = decay_factor(t, tau)?;
        Ok(tape.scale(basis, f))
    }
}
