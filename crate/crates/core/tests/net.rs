#![allow(clippy::needless_range_loop)]

use fbseg::autodiff::{Tape, Tensor};
use fbseg::net::{
    decay_factor, feedback_step, feedforward_predict, load_checkpoint, project_feedback,
    read_checkpoint, run_trajectory, save_checkpoint, unet_forward, write_checkpoint,
    DecayOperator, ModelError, ModelParams, NetConfig, StateField, Variant,
};
use fbseg::polygen::{add_gaussian_noise, generate_polygon, PolygonParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(h: usize, variant: Variant) -> NetConfig {
    NetConfig {
        height: h,
        width: h,
        variant,
        ..NetConfig::default()
    }
}

fn feedback(decay: bool, softmax: bool) -> Variant {
    Variant::Feedback {
        use_decay: decay,
        use_softmax: softmax,
    }
}

/// Initialised model whose zero-started proposal layer is replaced by a
/// random one, so the body actually reaches the state.
fn live_model(h: usize, variant: Variant, seed: u64) -> ModelParams {
    let mut p = ModelParams::init(&config(h, variant), seed).unwrap();
    let shape = p.out.kernel.shape().to_vec();
    p.out.kernel = Tensor::randn(&shape, 0.3, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xabc));
    p
}

fn zero_body(p: &mut ModelParams) {
    for t in p.tensors_mut() {
        t.data_mut().fill(0.0);
    }
}

fn image(seed: u64, h: usize, sigma: f64) -> Tensor {
    let clean = generate_polygon(seed, h, h, &PolygonParams::default()).unwrap();
    add_gaussian_noise(&clean, sigma, seed + 1)
        .unwrap()
        .image_tensor()
}

fn spectral_2x2(m: [[f64; 2]; 2]) -> f64 {
    // Largest singular value from the eigenvalues of MᵀM.
    let a = m[0][0] * m[0][0] + m[1][0] * m[1][0];
    let b = m[0][0] * m[0][1] + m[1][0] * m[1][1];
    let d = m[0][1] * m[0][1] + m[1][1] * m[1][1];
    let tr = a + d;
    let det = a * d - b * b;
    ((tr + (tr * tr - 4.0 * det).max(0.0).sqrt()) / 2.0).sqrt()
}

#[test]
fn initial_parameters_are_the_documented_layout() {
    let p = ModelParams::init(&NetConfig::default(), 0).unwrap();
    // enc1 3→8, 8→8; enc2 8→16, 16→16; bottleneck 16→32, 32→32;
    // dec2 48→16, 16→16; dec1 24→8, 8→8; out 8→6; head 4→2; Q, Q⁻¹ 6×6.
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
    let expect = conv(3, 8, 3)
        + conv(8, 8, 3)
        + conv(8, 16, 3)
        + conv(16, 16, 3)
        + conv(16, 32, 3)
        + conv(32, 32, 3)
        + conv(48, 16, 3)
        + conv(16, 16, 3)
        + conv(24, 8, 3)
        + conv(8, 8, 3)
        + conv(8, 6, 1)
        + conv(4, 2, 1)
        + 2 * 36;
    assert_eq!(p.parameter_count(), expect);
    assert!(p.is_finite());
    assert!(p.out.kernel.data().iter().all(|&v| v == 0.0));
    let ff = ModelParams::init(
        &config(
            64,
            Variant::Feedforward {
                static_decay: false,
            },
        ),
        0,
    )
    .unwrap();
    assert_eq!(ff.parameter_count(), expect - 2 * 8 * 9);
    assert_eq!(ModelParams::init(&NetConfig::default(), 0).unwrap(), p);
}

#[test]
fn body_with_only_biases_broadcasts_the_output_bias() {
    let mut p = ModelParams::init(&config(16, feedback(true, true)), 1).unwrap();
    zero_body(&mut p);
    let bias = [0.5, -1.0, 2.0, 0.0, 3.5, -0.25];
    p.out.bias.data_mut().copy_from_slice(&bias);
    let mut tape = Tape::new();
    let b = p.bind(&mut tape, false);
    let x = tape.constant(Tensor::randn(
        &[1, 3, 16, 16],
        1.0,
        &mut ChaCha8Rng::seed_from_u64(3),
    ));
    let y = unet_forward(&mut tape, &b, x).unwrap();
    let out = tape.value(y);
    assert_eq!(out.shape(), &[1, 6, 16, 16]);
    for (c, &bc) in bias.iter().enumerate() {
        assert!(out.data()[c * 256..(c + 1) * 256].iter().all(|&v| v == bc));
    }
}

#[test]
fn body_has_the_documented_shape_and_input_checks() {
    let p = live_model(64, feedback(true, true), 2);
    let mut tape = Tape::new();
    let b = p.bind(&mut tape, false);
    let x = tape.constant(Tensor::zeros(&[1, 3, 64, 64]));
    let y = unet_forward(&mut tape, &b, x).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 6, 64, 64]);
    let wrong_channels = tape.constant(Tensor::zeros(&[1, 1, 64, 64]));
    assert!(matches!(
        unet_forward(&mut tape, &b, wrong_channels),
        Err(ModelError::Config(_))
    ));
    let p18 = live_model(16, feedback(true, true), 2);
    let b18 = p18.bind(&mut tape, false);
    let odd = tape.constant(Tensor::zeros(&[1, 3, 18, 18]));
    assert!(matches!(
        unet_forward(&mut tape, &b18, odd),
        Err(ModelError::Config(_))
    ));
}

#[test]
fn swapping_feedback_channels_changes_the_output() {
    for seed in [4, 5] {
        let p = live_model(16, feedback(true, true), seed);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn(&[1, 3, 16, 16], 1.0, &mut r);
        let mut swapped = x.clone();
        let d = swapped.data_mut();
        for i in 0..256 {
            d.swap(256 + i, 512 + i);
        }
        let run = |inp: Tensor| {
            let mut tape = Tape::new();
            let b = p.bind(&mut tape, false);
            let v = tape.constant(inp);
            let y = unet_forward(&mut tape, &b, v).unwrap();
            tape.value(y).clone()
        };
        let diff = run(x).sub(&run(swapped)).max_abs();
        assert!(diff > 1e-6, "seed {seed}: outputs agree to {diff:e}");
    }
}

#[test]
fn decay_matrix_follows_the_exponential_law() {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    for tau in [0.5, 1.0, 3.0] {
        let op = DecayOperator {
            q: Tensor::randn(&[6, 6], 1.0, &mut r),
            q_inv: Tensor::randn(&[6, 6], 1.0, &mut r),
            tau,
        };
        let qq = op.basis_product().unwrap();
        assert_eq!(op.matrix(0).unwrap(), qq);
        for t in 0..6 {
            let a = op.matrix(t).unwrap().norm_l2();
            let b = op.matrix(t + 1).unwrap().norm_l2();
            assert!((b / a - (-1.0 / tau).exp()).abs() < 1e-12);
        }
        let s = op.sigma();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(s.data()[i * 6 + j], if i == j { -1.0 } else { 0.0 });
            }
        }
    }
    assert!((decay_factor(1, 1.0).unwrap() - 0.367_879_441_171_442_3).abs() < 1e-15);
    assert!(decay_factor(1, 0.0).is_err());
    assert!(decay_factor(1, -2.0).is_err());
}

#[test]
fn spectral_norm_matches_closed_form() {
    for m in [
        [[3.0, 0.0], [0.0, -2.0]],
        [[1.0, 2.0], [3.0, 4.0]],
        [[0.5, -1.5], [2.0, 0.25]],
    ] {
        let t = Tensor::new(vec![2, 2], vec![m[0][0], m[0][1], m[1][0], m[1][1]]).unwrap();
        assert!((t.spectral_norm().unwrap() - spectral_2x2(m)).abs() < 1e-9);
    }
}

#[test]
fn blank_state_feeds_back_a_uniform_simplex() {
    let mut tape = Tape::new();
    let h = tape.constant(Tensor::zeros(&[1, 6, 4, 4]));
    let v = project_feedback(&mut tape, h, 4, 2, true).unwrap();
    assert!(tape.value(v).data().iter().all(|&x| x == 0.5));
}

#[test]
fn zero_decay_matrix_leaves_the_state_unchanged() {
    let p = live_model(16, feedback(false, true), 6);
    let mut tape = Tape::new();
    let b = p.bind(&mut tape, false);
    let h0 = Tensor::randn(&[1, 6, 16, 16], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    let h = tape.constant(h0.clone());
    let x = tape.constant(image(1, 16, 0.0));
    let zero = tape.constant(Tensor::zeros(&[6, 6]));
    let out = feedback_step(&mut tape, StateField { h, t: 2 }, x, &b, zero).unwrap();
    assert_eq!(tape.value(out.state.h), &h0);
    assert_eq!(out.state.t, 3);
}

#[test]
fn constant_proposal_without_decay_grows_linearly() {
    let mut p = ModelParams::init(&config(16, feedback(false, true)), 7).unwrap();
    zero_body(&mut p);
    p.out.bias.data_mut().fill(1.0);
    let mut r = ChaCha8Rng::seed_from_u64(7);
    p.decay.q = Tensor::randn(&[6, 6], 0.5, &mut r);
    p.decay.q_inv = Tensor::randn(&[6, 6], 0.5, &mut r);
    let qq = p.decay.basis_product().unwrap();
    let row_sums: Vec<f64> = (0..6)
        .map(|i| (0..6).map(|j| qq.data()[i * 6 + j]).sum())
        .collect();
    let rec = run_trajectory(&p, &image(2, 16, 0.0), 4).unwrap();
    for (t, h) in rec.states.iter().enumerate() {
        for c in 0..6 {
            let expect = t as f64 * row_sums[c];
            assert!(h.data()[c * 256..(c + 1) * 256]
                .iter()
                .all(|&v| (v - expect).abs() < 1e-12));
        }
    }
}

#[test]
fn recorded_deltas_obey_the_decay_bound_at_high_noise() {
    for seed in 0..5 {
        let p = live_model(32, feedback(true, true), seed);
        let rec = run_trajectory(&p, &image(seed, 32, 6.0), 5).unwrap();
        let qq = p.decay.basis_product().unwrap().spectral_norm().unwrap();
        let f_max = rec
            .proposals
            .iter()
            .map(Tensor::norm_l2)
            .fold(0.0, f64::max);
        for (t, (d, f)) in rec.deltas.iter().zip(&rec.proposals).enumerate() {
            let factor = (-(t as f64)).exp() * qq;
            assert!(
                d.norm_l2() <= factor * f.norm_l2() * (1.0 + 1e-12),
                "seed {seed} t {t}"
            );
            assert!(d.norm_l2() <= factor * f_max * (1.0 + 1e-12));
        }
    }
}

#[test]
fn states_telescope_exactly() {
    for (seed, variant) in [
        (1, feedback(true, true)),
        (2, feedback(false, false)),
        (3, feedback(true, false)),
    ] {
        let p = live_model(16, variant, seed);
        let rec = run_trajectory(&p, &image(seed, 16, 1.0), 5).unwrap();
        assert_eq!(rec.states.len(), 6);
        assert_eq!(rec.predictions.len(), 5);
        assert!(rec.states[0].data().iter().all(|&v| v == 0.0));
        let mut sum = Tensor::zeros(rec.states[0].shape());
        for t in 0..5 {
            let mut next = rec.states[t].clone();
            next.add_assign(&rec.deltas[t]);
            assert!(next
                .data()
                .iter()
                .zip(rec.states[t + 1].data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
            sum.add_assign(&rec.deltas[t]);
        }
        assert!(sum.sub(&rec.states[5]).max_abs() < 1e-12);
    }
}

#[test]
fn single_step_trajectory_is_one_decayed_pass_with_uniform_feedback() {
    let p = live_model(16, feedback(true, true), 8);
    let x = image(8, 16, 0.5);
    let rec = run_trajectory(&p, &x, 1).unwrap();
    let mut tape = Tape::new();
    let b = p.bind(&mut tape, false);
    let mut input = x.data().to_vec();
    input.extend(std::iter::repeat_n(0.5, 2 * 256));
    let xin = tape.constant(Tensor::new(vec![1, 3, 16, 16], input).unwrap());
    let f = unet_forward(&mut tape, &b, xin).unwrap();
    let m = tape.constant(p.decay.matrix(0).unwrap());
    let delta = tape.matmul_channels(m, f).unwrap();
    assert!(tape.value(delta).sub(&rec.deltas[0]).max_abs() < 1e-12);
}

#[test]
fn static_decay_with_identity_basis_scales_by_e_to_minus_five() {
    let mut p = live_model(16, Variant::Feedforward { static_decay: true }, 9);
    p.decay.q = Tensor::identity(6);
    p.decay.q_inv = Tensor::identity(6);
    let x = image(9, 16, 0.0);
    let mut tape = Tape::new();
    let b = p.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let f = unet_forward(&mut tape, &b, xv).unwrap();
    let scaled = tape.value(f).map(|v| v * 6.737_946_999_085_467e-3);
    let u = tape.constant(scaled.channel_slice(0, 4).unwrap());
    let logits = tape.conv2d(u, b.head.kernel, b.head.bias, 1, 0).unwrap();
    let expect = tape.softmax_channels(logits).unwrap();
    let got = feedforward_predict(&p, &x, true).unwrap();
    assert_eq!(got.shape(), &[1, 2, 16, 16]);
    assert!(got.sub(tape.value(expect)).max_abs() < 1e-12);
    let plain = feedforward_predict(&p, &x, false).unwrap();
    for px in 0..256 {
        assert!((plain.data()[px] + plain.data()[256 + px] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (i, variant) in [
        feedback(true, true),
        feedback(false, true),
        Variant::Feedforward { static_decay: true },
    ]
    .into_iter()
    .enumerate()
    {
        let mut cfg = config(32, variant);
        cfg.tau = 0.75;
        let p = ModelParams::init(&cfg, i as u64).unwrap();
        let path = dir.path().join(format!("m{i}.ckpt"));
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), p);
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let p = ModelParams::init(&config(16, feedback(true, true)), 3).unwrap();
    let bytes = write_checkpoint(&p);
    let mut flipped = bytes.clone();
    flipped[40] ^= 0x10;
    assert!(matches!(
        read_checkpoint(&flipped, "x"),
        Err(ModelError::Checkpoint { .. })
    ));
    assert!(matches!(
        read_checkpoint(&bytes[..bytes.len() / 2], "x"),
        Err(ModelError::Checkpoint { .. })
    ));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(
        read_checkpoint(&magic, "x"),
        Err(ModelError::Checkpoint { .. })
    ));
    assert!(matches!(
        load_checkpoint(std::path::Path::new("/nonexistent/model.ckpt")),
        Err(ModelError::Io { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn feedback_projection_is_shift_invariant(vals in proptest::collection::vec(-20.0f64..20.0, 6 * 4), shift in -30.0f64..30.0) {
        let h = Tensor::new(vec![1, 6, 2, 2], vals.clone()).unwrap();
        let mut shifted = h.clone();
        for v in &mut shifted.data_mut()[4 * 4..] {
            *v += shift;
        }
        let mut tape = Tape::new();
        let a = tape.constant(h);
        let b = tape.constant(shifted);
        let va = project_feedback(&mut tape, a, 4, 2, true).unwrap();
        let vb = project_feedback(&mut tape, b, 4, 2, true).unwrap();
        prop_assert!(tape.value(va).sub(tape.value(vb)).max_abs() < 1e-9);
        for p in 0..4 {
            let s = tape.value(va).data()[p] + tape.value(va).data()[4 + p];
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
