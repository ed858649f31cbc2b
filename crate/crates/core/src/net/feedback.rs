use super::{
    decay_factor, unet_forward, BoundParams, DecayOperator, ModelError, ModelParams, Variant,
};
use crate::autodiff::{Tape, Tensor, Var};

/// Internal state `h(t)` on a tape: channels `[0, l)` are `u(t)`, channels
/// `[l, l+k)` are the feedback logits.
#[derive(Clone, Copy, Debug)]
pub struct StateField {
    pub h: Var,
    pub t: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    /// `h(t+1)`, stamped with `t + 1`.
    pub state: StateField,
    /// `δ(t) = M(t)·F([x, v(t)])`.
    pub delta: Var,
    /// Raw body output `F([x, v(t)])`.
    pub proposal: Var,
    /// `v(t)` as fed to the body.
    pub feedback: Var,
    /// `M(t)`.
    pub decay: Var,
}

fn feedback_flags(p: &BoundParams) -> Result<(bool, bool), ModelError> {
    match p.config.variant {
        Variant::Feedback {
            use_decay,
            use_softmax,
        } => Ok((use_decay, use_softmax)),
        Variant::Feedforward { .. } => Err(ModelError::Config(
            "feedback step on a feedforward model".into(),
        )),
    }
}

/// `v(t)`: softmax over the feedback slice of `h`, or the raw slice when the
/// projection is disabled.
pub fn project_feedback(
    tape: &mut Tape,
    h: Var,
    l: usize,
    k: usize,
    use_softmax: bool,
) -> Result<Var, ModelError> {
    let logits = tape.slice_channels(h, l, k)?;
    if use_softmax {
        Ok(tape.softmax_channels(logits)?)
    } else {
        Ok(logits)
    }
}

/// One update `h(t+1) = h(t) + M(t)·F([x, v(t)])`.
///
/// `basis` is the recorded `Q·Q⁻¹`; without the decay stabiliser it is used
/// as `M(t)` at every step.
pub fn feedback_step(
    tape: &mut Tape,
    state: StateField,
    x: Var,
    p: &BoundParams,
    basis: Var,
) -> Result<StepOutput, ModelError> {
    let (use_decay, use_softmax) = feedback_flags(p)?;
    let (l, k) = (p.config.seg_channels, p.config.classes);
    let feedback = project_feedback(tape, state.h, l, k, use_softmax)?;
    let input = tape.concat_channels(x, feedback)?;
    let proposal = unet_forward(tape, p, input)?;
    let decay = if use_decay {
        DecayOperator::matrix_on_tape(tape, basis, state.t, p.tau)?
    } else {
        basis
    };
    let delta = tape.matmul_channels(decay, proposal)?;
    if !tape.value(delta).is_finite() {
        let max_magnitude = tape
            .value(delta)
            .data()
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        return Err(ModelError::NonFinite {
            step: state.t,
            max_magnitude,
        });
    }
    let h = tape.add(state.h, delta)?;
    Ok(StepOutput {
        state: StateField { h, t: state.t + 1 },
        delta,
        proposal,
        feedback,
        decay,
    })
}

fn head(tape: &mut Tape, p: &BoundParams, h: Var) -> Result<(Var, Var), ModelError> {
    let u = tape.slice_channels(h, 0, p.config.seg_channels)?;
    let logits = tape.conv2d(u, p.head.kernel, p.head.bias, 1, 0)?;
    let pred = tape.softmax_channels(logits)?;
    Ok((logits, pred))
}

/// Tape handles of an unrolled trajectory.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    /// `h(0..=T)`.
    pub states: Vec<Var>,
    /// `δ(0..T)`.
    pub deltas: Vec<Var>,
    pub proposals: Vec<Var>,
    pub feedback: Vec<Var>,
    pub decays: Vec<Var>,
    /// Head logits for `h(1..=T)`.
    pub logits: Vec<Var>,
    /// `ŷ(1..=T)`.
    pub predictions: Vec<Var>,
}

/// Unrolls `timesteps` feedback steps from `h(0) = 0` on `tape`.
pub fn trajectory(
    tape: &mut Tape,
    p: &BoundParams,
    x: Var,
    timesteps: usize,
) -> Result<Trajectory, ModelError> {
    feedback_flags(p)?;
    if timesteps == 0 {
        return Err(ModelError::Config("T must be at least 1".into()));
    }
    let (b, _, h, w) = tape.value(x).dims4()?;
    let d = p.config.state_channels();
    let h0 = tape.constant(Tensor::zeros(&[b, d, h, w]));
    let basis = tape.matmul(p.q, p.q_inv)?;
    let mut tr = Trajectory {
        states: vec![h0],
        ..Default::default()
    };
    let mut state = StateField { h: h0, t: 0 };
    for _ in 0..timesteps {
        let step = feedback_step(tape, state, x, p, basis)?;
        state = step.state;
        let (logits, pred) = head(tape, p, state.h)?;
        tr.states.push(state.h);
        tr.deltas.push(step.delta);
        tr.proposals.push(step.proposal);
        tr.feedback.push(step.feedback);
        tr.decays.push(step.decay);
        tr.logits.push(logits);
        tr.predictions.push(pred);
    }
    Ok(tr)
}

/// Materialised trajectory for analysis.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub states: Vec<Tensor>,
    pub deltas: Vec<Tensor>,
    pub proposals: Vec<Tensor>,
    pub decays: Vec<Tensor>,
    pub logits: Vec<Tensor>,
    pub predictions: Vec<Tensor>,
}

impl TrajectoryRecord {
    pub fn from_tape(tape: &Tape, tr: &Trajectory) -> Self {
        let get = |vs: &[Var]| {
            vs.iter()
                .map(|&v| tape.value(v).clone())
                .collect::<Vec<_>>()
        };
        TrajectoryRecord {
            states: get(&tr.states),
            deltas: get(&tr.deltas),
            proposals: get(&tr.proposals),
            decays: get(&tr.decays),
            logits: get(&tr.logits),
            predictions: get(&tr.predictions),
        }
    }

    pub fn timesteps(&self) -> usize {
        self.deltas.len()
    }

    pub fn final_prediction(&self) -> &Tensor {
        self.predictions
            .last()
            .expect("trajectory has at least one step")
    }
}

/// Inference-only trajectory (no gradient bookkeeping on parameters).
pub fn run_trajectory(
    params: &ModelParams,
    x: &Tensor,
    timesteps: usize,
) -> Result<TrajectoryRecord, ModelError> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let tr = trajectory(&mut tape, &p, xv, timesteps)?;
    Ok(TrajectoryRecord::from_tape(&tape, &tr))
}

#[derive(Clone, Copy, Debug)]
pub struct FeedforwardOutput {
    /// Body output after optional static attenuation.
    pub state: Var,
    pub logits: Var,
    pub prediction: Var,
}

/// Single non-recurrent pass `ŷ = G(u)` of a feedforward model. With
/// `use_static_decay` the body output is first multiplied per pixel by
/// `M(T) = e^{−T/τ}·(Q·Q⁻¹)`.
pub fn feedforward_forward(
    tape: &mut Tape,
    p: &BoundParams,
    x: Var,
    use_static_decay: bool,
) -> Result<FeedforwardOutput, ModelError> {
    if p.config.variant.is_feedback() {
        return Err(ModelError::Config(
            "feedforward pass on a feedback model".into(),
        ));
    }
    let mut f = unet_forward(tape, p, x)?;
    if use_static_decay {
        let basis = tape.matmul(p.q, p.q_inv)?;
        let m = tape.scale(basis, decay_factor(p.config.timesteps, p.tau)?);
        f = tape.matmul_channels(m, f)?;
    }
    let (logits, prediction) = head(tape, p, f)?;
    Ok(FeedforwardOutput {
        state: f,
        logits,
        prediction,
    })
}

pub fn feedforward_predict(
    params: &ModelParams,
    x: &Tensor,
    use_static_decay: bool,
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let out = feedforward_forward(&mut tape, &p, xv, use_static_decay)?;
    Ok(tape.value(out.prediction).clone())
}

/// Per-pixel argmax over classes of a `[1, K, H, W]` prediction; ties go to
/// the lower class index (background).
pub fn prediction_mask(pred: &Tensor) -> Result<Vec<u8>, ModelError> {
    let (_, k, h, w) = pred.dims4()?;
    let plane = h * w;
    let d = pred.data();
    Ok((0..plane)
        .map(|p| {
            let mut best = 0;
            for c in 1..k {
                if d[c * plane + p] > d[best * plane + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect())
}
