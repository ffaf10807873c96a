//! A table of small differentiable programs, one per op configuration,
//! used to check tape gradients against central differences in f64.
//!
//! Each config builds its loss from a flat parameter vector so the same
//! builder serves both the analytic pass (tape backward) and the numeric
//! pass (coordinate-wise finite differences).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tsan_core::autodiff::gradcheck::{central_diff, compare};
use tsan_core::autodiff::{Mode, Tape, Tensor, Var};

pub struct GradConfig {
    pub name: &'static str,
    pub x0: Vec<f64>,
    pub build: fn(&mut Tape<f64>, &[f64]) -> Var,
}

/// Values bounded away from zero so relu kinks and maxpool ties cannot
/// sit inside the finite-difference stencil.
fn rnd(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mag = 0.1 + 0.9 * rng.gen::<f64>();
            if rng.gen::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn take(tape: &mut Tape<f64>, idx: &mut usize, shape: &[usize], x: &[f64], off: &mut usize) -> Var {
    let n: usize = shape.iter().product();
    let t = Tensor::new(shape.to_vec(), x[*off..*off + n].to_vec()).unwrap();
    *off += n;
    let v = tape.param(&format!("p{idx}"), t);
    *idx += 1;
    v
}

fn konst(tape: &mut Tape<f64>, shape: &[usize], data: &[f64]) -> Var {
    tape.constant(Tensor::new(shape.to_vec(), data.to_vec()).unwrap())
}

fn sq_sum(tape: &mut Tape<f64>, v: Var) -> Var {
    let m = tape.mul(v, v).unwrap();
    tape.sum(m)
}

pub fn all_configs() -> Vec<GradConfig> {
    vec![
        GradConfig {
            name: "matmul_2x3_by_3x4",
            x0: rnd(1, 2 * 3 + 3 * 4),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let a = take(tape, &mut i, &[2, 3], x, &mut o);
                let b = take(tape, &mut i, &[3, 4], x, &mut o);
                let c = tape.matmul(a, b).unwrap();
                sq_sum(tape, c)
            },
        },
        GradConfig {
            name: "matmul_chain_three_factors",
            x0: rnd(2, 3 * 2 * 2),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let a = take(tape, &mut i, &[2, 2], x, &mut o);
                let b = take(tape, &mut i, &[2, 2], x, &mut o);
                let c = take(tape, &mut i, &[2, 2], x, &mut o);
                let ab = tape.matmul(a, b).unwrap();
                let abc = tape.matmul(ab, c).unwrap();
                sq_sum(tape, abc)
            },
        },
        GradConfig {
            name: "bmm_batch2",
            x0: rnd(3, 2 * 2 * 3 + 2 * 3 * 2),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let a = take(tape, &mut i, &[2, 2, 3], x, &mut o);
                let b = take(tape, &mut i, &[2, 3, 2], x, &mut o);
                let c = tape.bmm(a, b).unwrap();
                sq_sum(tape, c)
            },
        },
        GradConfig {
            name: "bmm_with_transposed_keys",
            x0: rnd(4, 2 * (2 * 3 * 2)),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let q = take(tape, &mut i, &[2, 3, 2], x, &mut o);
                let k = take(tape, &mut i, &[2, 3, 2], x, &mut o);
                let kt = tape.transpose_last2(k).unwrap();
                let scores = tape.bmm(q, kt).unwrap();
                sq_sum(tape, scores)
            },
        },
        GradConfig {
            name: "conv1d_b2_l6_cin2_cout3_k3",
            x0: rnd(5, 2 * 6 * 2 + 3 * 2 * 3 + 3),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let xin = take(tape, &mut i, &[2, 6, 2], x, &mut o);
                let w = take(tape, &mut i, &[3, 2, 3], x, &mut o);
                let b = take(tape, &mut i, &[3], x, &mut o);
                let y = tape.conv1d(xin, w, b).unwrap();
                sq_sum(tape, y)
            },
        },
        GradConfig {
            name: "conv1d_then_maxpool2",
            x0: rnd(6, 1 * 6 * 1 + 2 * 1 * 2 + 2),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let xin = take(tape, &mut i, &[1, 6, 1], x, &mut o);
                let w = take(tape, &mut i, &[2, 1, 2], x, &mut o);
                let b = take(tape, &mut i, &[2], x, &mut o);
                let y = tape.conv1d(xin, w, b).unwrap();
                let p = tape.maxpool1d(y, 2).unwrap();
                sq_sum(tape, p)
            },
        },
        GradConfig {
            name: "maxpool_b1_l6_c2",
            x0: rnd(7, 6 * 2),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let xin = take(tape, &mut i, &[1, 6, 2], x, &mut o);
                let p = tape.maxpool1d(xin, 2).unwrap();
                sq_sum(tape, p)
            },
        },
        GradConfig {
            name: "layernorm_b3_d4",
            x0: rnd(8, 3 * 4 + 4 + 4),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let xin = take(tape, &mut i, &[3, 4], x, &mut o);
                let g = take(tape, &mut i, &[4], x, &mut o);
                let b = take(tape, &mut i, &[4], x, &mut o);
                let y = tape.layernorm(xin, g, b, 1e-5).unwrap();
                sq_sum(tape, y)
            },
        },
        GradConfig {
            name: "batchnorm_train_b4_c3",
            x0: rnd(9, 4 * 3 + 3 + 3),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let xin = take(tape, &mut i, &[4, 3], x, &mut o);
                let g = take(tape, &mut i, &[3], x, &mut o);
                let b = take(tape, &mut i, &[3], x, &mut o);
                let (y, _) = tape
                    .batchnorm(xin, g, b, &[0.0; 3], &[1.0; 3], Mode::Train, 0.1, 1e-5)
                    .unwrap();
                sq_sum(tape, y)
            },
        },
        GradConfig {
            name: "batchnorm_eval_b4_c3",
            x0: rnd(10, 4 * 3 + 3 + 3),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let xin = take(tape, &mut i, &[4, 3], x, &mut o);
                let g = take(tape, &mut i, &[3], x, &mut o);
                let b = take(tape, &mut i, &[3], x, &mut o);
                let (y, _) = tape
                    .batchnorm(
                        xin,
                        g,
                        b,
                        &[0.3, -0.2, 0.1],
                        &[1.7, 0.9, 1.2],
                        Mode::Eval,
                        0.1,
                        1e-5,
                    )
                    .unwrap();
                sq_sum(tape, y)
            },
        },
        GradConfig {
            name: "relu_b2_d5",
            x0: rnd(11, 10),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let xin = take(tape, &mut i, &[2, 5], x, &mut o);
                let y = tape.relu(xin);
                sq_sum(tape, y)
            },
        },
        GradConfig {
            name: "sigmoid_b5",
            x0: rnd(12, 5),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let xin = take(tape, &mut i, &[5], x, &mut o);
                let y = tape.sigmoid(xin);
                sq_sum(tape, y)
            },
        },
        GradConfig {
            name: "softmax_weighted_b3_d4",
            x0: rnd(13, 12),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let xin = take(tape, &mut i, &[3, 4], x, &mut o);
                let p = tape.softmax_last(xin).unwrap();
                let w = konst(
                    tape,
                    &[3, 4],
                    &[0.3, 1.7, -0.6, 0.9, 1.1, -0.4, 0.2, 0.8, -1.2, 0.5, 0.7, 1.3],
                );
                let weighted = tape.mul(p, w).unwrap();
                tape.sum(weighted)
            },
        },
        GradConfig {
            name: "dropout_train_seeded",
            x0: rnd(14, 24),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let xin = take(tape, &mut i, &[24], x, &mut o);
                // Same seed every call, so the mask is part of the function.
                let mut rng = ChaCha8Rng::seed_from_u64(77);
                let y = tape.dropout(xin, 0.3, Mode::Train, &mut rng).unwrap();
                sq_sum(tape, y)
            },
        },
        GradConfig {
            name: "bias_broadcast_over_3d",
            x0: rnd(15, 2 * 3 * 4 + 4),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let xin = take(tape, &mut i, &[2, 3, 4], x, &mut o);
                let b = take(tape, &mut i, &[4], x, &mut o);
                let y = tape.add_broadcast(xin, b).unwrap();
                sq_sum(tape, y)
            },
        },
        GradConfig {
            name: "mean_axis1_b2_t3_d2",
            x0: rnd(16, 12),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let xin = take(tape, &mut i, &[2, 3, 2], x, &mut o);
                let y = tape.mean_axis1(xin).unwrap();
                sq_sum(tape, y)
            },
        },
        GradConfig {
            name: "concat_last_then_weighted_sum",
            x0: rnd(17, 2 * 3 + 2 * 2),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let a = take(tape, &mut i, &[2, 3], x, &mut o);
                let b = take(tape, &mut i, &[2, 2], x, &mut o);
                let cat = tape.concat_last(&[a, b]).unwrap();
                let w = konst(
                    tape,
                    &[2, 5],
                    &[0.9, -0.3, 1.4, 0.2, -0.8, 0.6, 1.1, -0.5, 0.3, 0.7],
                );
                let weighted = tape.mul(cat, w).unwrap();
                tape.sum(weighted)
            },
        },
        GradConfig {
            name: "bce_on_sigmoid_logits",
            x0: rnd(18, 6),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let logits = take(tape, &mut i, &[6, 1], x, &mut o);
                let p = tape.sigmoid(logits);
                let y = konst(tape, &[6, 1], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
                tape.bce_loss(p, y).unwrap()
            },
        },
        GradConfig {
            name: "mse_on_affine_map",
            x0: rnd(19, 2 * 2 + 2),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let w = take(tape, &mut i, &[2, 2], x, &mut o);
                let b = take(tape, &mut i, &[2], x, &mut o);
                let xin = konst(tape, &[3, 2], &[0.4, -0.7, 1.2, 0.3, -0.9, 0.6]);
                let h = tape.matmul(xin, w).unwrap();
                let pred = tape.add_broadcast(h, b).unwrap();
                let target = konst(tape, &[3, 2], &[0.5, -0.1, 0.8, 0.2, -0.3, 0.9]);
                tape.mse_loss(pred, target).unwrap()
            },
        },
        GradConfig {
            name: "cce_on_softmax_logits",
            x0: rnd(20, 9),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let logits = take(tape, &mut i, &[3, 3], x, &mut o);
                let p = tape.softmax_last(logits).unwrap();
                let y = konst(tape, &[3, 3], &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
                tape.cce_loss(p, y).unwrap()
            },
        },
        GradConfig {
            name: "single_head_attention_micro",
            x0: rnd(21, 3 * (4 * 2)),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let wq = take(tape, &mut i, &[4, 2], x, &mut o);
                let wk = take(tape, &mut i, &[4, 2], x, &mut o);
                let wv = take(tape, &mut i, &[4, 2], x, &mut o);
                let xin = konst(
                    tape,
                    &[3, 4],
                    &[0.2, -0.5, 0.9, 0.1, -0.7, 0.4, 0.3, -0.2, 0.8, 0.6, -0.4, 0.5],
                );
                let q2 = tape.matmul(xin, wq).unwrap();
                let k2 = tape.matmul(xin, wk).unwrap();
                let v2 = tape.matmul(xin, wv).unwrap();
                let q = tape.reshape(q2, vec![1, 3, 2]).unwrap();
                let k = tape.reshape(k2, vec![1, 3, 2]).unwrap();
                let v = tape.reshape(v2, vec![1, 3, 2]).unwrap();
                let kt = tape.transpose_last2(k).unwrap();
                let raw = tape.bmm(q, kt).unwrap();
                let scaled = tape.scale(raw, 1.0 / (2.0f64).sqrt());
                let attn = tape.softmax_last(scaled).unwrap();
                let out = tape.bmm(attn, v).unwrap();
                sq_sum(tape, out)
            },
        },
        GradConfig {
            name: "residual_layernorm_ffn",
            x0: rnd(22, 2 * 4 + 4 + 4),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let xin = take(tape, &mut i, &[2, 4], x, &mut o);
                let g = take(tape, &mut i, &[4], x, &mut o);
                let b = take(tape, &mut i, &[4], x, &mut o);
                let normed = tape.layernorm(xin, g, b, 1e-5).unwrap();
                let res = tape.add(xin, normed).unwrap();
                let w1 = konst(
                    tape,
                    &[4, 3],
                    &[0.4, -0.2, 0.7, 0.1, 0.9, -0.6, -0.3, 0.5, 0.2, 0.8, -0.4, 0.3],
                );
                let h = tape.matmul(res, w1).unwrap();
                let a = tape.relu(h);
                sq_sum(tape, a)
            },
        },
        GradConfig {
            name: "scale_sub_mul_mix",
            x0: rnd(23, 2 * 6),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let a = take(tape, &mut i, &[6], x, &mut o);
                let b = take(tape, &mut i, &[6], x, &mut o);
                let d = tape.sub(a, b).unwrap();
                let prod = tape.mul(d, a).unwrap();
                let half = tape.scale(prod, 0.5);
                tape.sum(half)
            },
        },
        GradConfig {
            name: "mixed_heads_micro_objective",
            x0: rnd(24, 4 * 2 + 2 + 4 * 3 + 3),
            build: |tape, x| {
                let (mut i, mut o) = (0, 0);
                let wm = take(tape, &mut i, &[4, 2], x, &mut o);
                let bm = take(tape, &mut i, &[2], x, &mut o);
                let wp = take(tape, &mut i, &[4, 3], x, &mut o);
                let bp = take(tape, &mut i, &[3], x, &mut o);
                let xin = konst(tape, &[2, 4], &[0.3, -0.6, 0.2, 0.9, -0.4, 0.7, 0.5, -0.8]);
                let hm = tape.matmul(xin, wm).unwrap();
                let hm = tape.add_broadcast(hm, bm).unwrap();
                let pm = tape.sigmoid(hm);
                let ym = konst(tape, &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
                let lm = tape.bce_loss(pm, ym).unwrap();
                let hp = tape.matmul(xin, wp).unwrap();
                let hp = tape.add_broadcast(hp, bp).unwrap();
                let pp = tape.softmax_last(hp).unwrap();
                let yp = konst(tape, &[2, 3], &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
                let lp = tape.cce_loss(pp, yp).unwrap();
                let lp_w = tape.scale(lp, 0.3);
                tape.add(lm, lp_w).unwrap()
            },
        },
    ]
}

/// Run one config: analytic gradient from the tape vs central differences.
/// Returns (max relative error, number of coordinates checked).
pub fn check_config(cfg: &GradConfig) -> (f64, usize) {
    let build = cfg.build;
    let mut tape: Tape<f64> = Tape::new();
    let loss = build(&mut tape, &cfg.x0);
    let grads = tape.backward(loss).expect("backward");
    let mut analytic = Vec::with_capacity(cfg.x0.len());
    let mut idx = 0usize;
    loop {
        match grads.get(&format!("p{idx}")) {
            Some(g) => analytic.extend_from_slice(g.data()),
            None => break,
        }
        idx += 1;
    }
    assert_eq!(
        analytic.len(),
        cfg.x0.len(),
        "{}: analytic gradient does not cover the parameter vector",
        cfg.name
    );

    let mut f = |x: &[f64]| {
        let mut tape: Tape<f64> = Tape::new();
        let loss = build(&mut tape, x);
        tape.value(loss).item()
    };
    let numeric = central_diff(&mut f, &cfg.x0, 1e-5).expect("finite differences");
    let outcome = compare(&analytic, &numeric, 1e-9);
    (outcome.max_rel_err, cfg.x0.len())
}
