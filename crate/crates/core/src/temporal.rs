//! Bidirectional LSTM over per-bucket input rows.
//!
//! Parameters live in one [`Params`] under the prefixes `lstm_f.` and
//! `lstm_b.`; each direction has `w_{i,f,o,g}` of shape `[(I+H) × H]` and
//! `b_{i,f,o,g}` of shape `[1 × H]`, acting on `[x_t, h_{t-1}]`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{self, ops, NumArray, Params, Tape, Var};

pub const FORWARD: &str = "lstm_f";
pub const BACKWARD: &str = "lstm_b";
const GATES: [&str; 4] = ["i", "f", "o", "g"];

fn w_name(dir: &str, gate: &str) -> String {
    format!("{dir}.w_{gate}")
}

fn b_name(dir: &str, gate: &str) -> String {
    format!("{dir}.b_{gate}")
}

/// Forget-gate bias 1.0; everything else uniform in `[-0.1, 0.1]`.
pub fn init_bilstm(input: usize, hidden: usize, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Params::new();
    for dir in [FORWARD, BACKWARD] {
        for gate in GATES {
            p.insert(w_name(dir, gate), nn::uniform(&mut rng, &[input + hidden, hidden], 0.1));
            let b = if gate == "f" {
                NumArray::filled(&[1, hidden], 1.0)
            } else {
                nn::uniform(&mut rng, &[1, hidden], 0.1)
            };
            p.insert(b_name(dir, gate), b);
        }
    }
    p
}

/// `(input, hidden)` sizes of one direction, checking all gates agree.
pub fn cell_dims(params: &Params, dir: &str) -> Result<(usize, usize)> {
    let w = params.require(&w_name(dir, "i"))?;
    let h = w.cols();
    if w.rows() <= h {
        return Err(Error::Dimension(format!("{dir} weights {:?} leave no input columns", w.shape())));
    }
    for gate in GATES {
        let (wg, bg) = (params.require(&w_name(dir, gate))?, params.require(&b_name(dir, gate))?);
        if wg.shape() != w.shape() || bg.len() != h {
            return Err(Error::dims(&format!("{dir} gate {gate}"), w.shape(), wg.shape()));
        }
    }
    Ok((w.rows() - h, h))
}

pub fn bilstm_dims(params: &Params) -> Result<(usize, usize)> {
    let f = cell_dims(params, FORWARD)?;
    let b = cell_dims(params, BACKWARD)?;
    if f != b {
        return Err(Error::Dimension(format!("forward cell {f:?} vs backward cell {b:?}")));
    }
    Ok(f)
}

fn gate_pre(params: &Params, dir: &str, gate: &str, xh: &[f64], h: usize) -> Result<Vec<f64>> {
    let w = params.require(&w_name(dir, gate))?;
    let b = params.require(&b_name(dir, gate))?;
    let mut out = b.data().to_vec();
    for (k, &v) in xh.iter().enumerate() {
        let row = &w.data()[k * h..(k + 1) * h];
        for (o, &wk) in out.iter_mut().zip(row) {
            *o += v * wk;
        }
    }
    Ok(out)
}

/// One gated update of direction `dir`; returns `(h_t, c_t)`.
pub fn lstm_cell_step(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    params: &Params,
    dir: &str,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (i_dim, h_dim) = cell_dims(params, dir)?;
    if x.len() != i_dim || h_prev.len() != h_dim || c_prev.len() != h_dim {
        return Err(Error::Dimension(format!(
            "lstm step expects x[{i_dim}], h[{h_dim}], c[{h_dim}]; got x[{}], h[{}], c[{}]",
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let xh: Vec<f64> = x.iter().chain(h_prev).copied().collect();
    let i = gate_pre(params, dir, "i", &xh, h_dim)?;
    let f = gate_pre(params, dir, "f", &xh, h_dim)?;
    let o = gate_pre(params, dir, "o", &xh, h_dim)?;
    let g = gate_pre(params, dir, "g", &xh, h_dim)?;
    let mut h = vec![0.0; h_dim];
    let mut c = vec![0.0; h_dim];
    for k in 0..h_dim {
        c[k] = ops::sigmoid(f[k]) * c_prev[k] + ops::sigmoid(i[k]) * g[k].tanh();
        h[k] = ops::sigmoid(o[k]) * c[k].tanh();
    }
    Ok((h, c))
}

fn run_direction<'a>(xs: impl Iterator<Item = &'a Vec<f64>>, params: &Params, dir: &str, h_dim: usize) -> Result<Vec<Vec<f64>>> {
    let (mut h, mut c) = (vec![0.0; h_dim], vec![0.0; h_dim]);
    let mut out = Vec::new();
    for x in xs {
        (h, c) = lstm_cell_step(x, &h, &c, params, dir)?;
        out.push(h.clone());
    }
    Ok(out)
}

/// Full bidirectional pass; row `t` is `[h^f_t, h^b_t]` of width `2H`.
pub fn bilstm_forward(xs: &[Vec<f64>], params: &Params) -> Result<Vec<Vec<f64>>> {
    if xs.is_empty() {
        return Err(Error::Domain("bilstm needs a nonempty sequence".into()));
    }
    let (_, h_dim) = bilstm_dims(params)?;
    let fwd = run_direction(xs.iter(), params, FORWARD, h_dim)?;
    let mut bwd = run_direction(xs.iter().rev(), params, BACKWARD, h_dim)?;
    bwd.reverse();
    Ok(fwd.into_iter().zip(bwd).map(|(f, b)| [f, b].concat()).collect())
}

/// Row `j` equals row `j` of [`bilstm_forward`] applied to `xs[..=j]`: the
/// forward state after `j` steps and the backward state after one step on
/// `x_j` from zero. No row depends on later inputs.
pub fn bilstm_prefix_forward(xs: &[Vec<f64>], params: &Params) -> Result<Vec<Vec<f64>>> {
    if xs.is_empty() {
        return Err(Error::Domain("bilstm needs a nonempty sequence".into()));
    }
    let (_, h_dim) = bilstm_dims(params)?;
    let fwd = run_direction(xs.iter(), params, FORWARD, h_dim)?;
    let zero = vec![0.0; h_dim];
    fwd.into_iter()
        .zip(xs)
        .map(|(f, x)| Ok([f, lstm_cell_step(x, &zero, &zero, params, BACKWARD)?.0].concat()))
        .collect()
}

/// Tape counterpart of [`lstm_cell_step`]; `x`, `h`, `c` are `[1 × ·]`.
pub fn tape_cell_step(
    tape: &mut Tape,
    bound: &BTreeMap<String, Var>,
    dir: &str,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let xh = tape.concat_cols(&[x, h])?;
    let mut pre = Vec::with_capacity(4);
    for gate in GATES {
        let w = *bound
            .get(&w_name(dir, gate))
            .ok_or_else(|| Error::Checkpoint(format!("missing {}", w_name(dir, gate))))?;
        let b = *bound
            .get(&b_name(dir, gate))
            .ok_or_else(|| Error::Checkpoint(format!("missing {}", b_name(dir, gate))))?;
        pre.push(tape.linear(xh, w, b)?);
    }
    let i = tape.sigmoid(pre[0]);
    let f = tape.sigmoid(pre[1]);
    let o = tape.sigmoid(pre[2]);
    let g = tape.tanh(pre[3]);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_new = tape.add(keep, write)?;
    let squashed = tape.tanh(c_new);
    let h_new = tape.mul(o, squashed)?;
    Ok((h_new, c_new))
}

/// Tape counterpart of [`bilstm_forward`] (`causal == false`) or
/// [`bilstm_prefix_forward`] (`causal == true`). `xs` is `[L × I]`; the
/// result is `[L × 2H]`.
pub fn tape_bilstm(tape: &mut Tape, bound: &BTreeMap<String, Var>, params_h: usize, xs: Var, causal: bool) -> Result<Var> {
    let l = tape.value(xs).rows();
    let zero = tape.leaf(NumArray::zeros(&[1, params_h]));
    let rows: Vec<Var> = (0..l).map(|t| tape.row(xs, t)).collect::<Result<_>>()?;

    let (mut h, mut c) = (zero, zero);
    let mut fwd = Vec::with_capacity(l);
    for &x in &rows {
        (h, c) = tape_cell_step(tape, bound, FORWARD, x, h, c)?;
        fwd.push(h);
    }
    let bwd: Vec<Var> = if causal {
        rows.iter()
            .map(|&x| Ok(tape_cell_step(tape, bound, BACKWARD, x, zero, zero)?.0))
            .collect::<Result<_>>()?
    } else {
        let (mut h, mut c) = (zero, zero);
        let mut out = vec![zero; l];
        for t in (0..l).rev() {
            (h, c) = tape_cell_step(tape, bound, BACKWARD, rows[t], h, c)?;
            out[t] = h;
        }
        out
    };
    let joined: Vec<Var> = fwd
        .into_iter()
        .zip(bwd)
        .map(|(f, b)| tape.concat_cols(&[f, b]))
        .collect::<Result<_>>()?;
    tape.concat_rows(&joined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_seq(rng: &mut ChaCha8Rng, l: usize, i: usize) -> Vec<Vec<f64>> {
        (0..l).map(|_| (0..i).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    }

    /// Params with larger weights so gates leave their linear regime.
    fn lively(input: usize, hidden: usize, seed: u64) -> Params {
        let mut p = init_bilstm(input, hidden, seed);
        p.scale(8.0);
        p
    }

    #[test]
    fn zero_params_zero_hidden() {
        let mut p = init_bilstm(3, 4, 0);
        p.scale(0.0);
        let (h, c) = lstm_cell_step(&[1.0, -2.0, 0.5], &[0.0; 4], &[0.0; 4], &p, FORWARD).unwrap();
        assert_eq!(h, vec![0.0; 4]);
        assert_eq!(c, vec![0.0; 4]);
    }

    #[test]
    fn init_rules() {
        let p = init_bilstm(7, 16, 3);
        assert_eq!(p.get("lstm_f.b_f").unwrap().data(), &[1.0; 16]);
        assert!(p.get("lstm_b.w_g").unwrap().data().iter().all(|v| v.abs() <= 0.1));
        assert_eq!(bilstm_dims(&p).unwrap(), (7, 16));
    }

    #[test]
    fn shape_errors() {
        let p = init_bilstm(3, 4, 0);
        assert!(matches!(lstm_cell_step(&[1.0], &[0.0; 4], &[0.0; 4], &p, FORWARD), Err(Error::Dimension(_))));
        assert!(matches!(bilstm_forward(&[], &p), Err(Error::Domain(_))));
    }

    #[test]
    fn length_one() {
        let p = init_bilstm(3, 5, 1);
        let out = bilstm_forward(&[vec![0.3, 0.1, -0.2]], &p).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].len(), 10);
    }

    #[test]
    fn palindrome_symmetry() {
        let mut p = lively(3, 4, 2);
        for gate in GATES {
            let w = p.get(&w_name(FORWARD, gate)).unwrap().clone();
            let b = p.get(&b_name(FORWARD, gate)).unwrap().clone();
            p.insert(w_name(BACKWARD, gate), w);
            p.insert(b_name(BACKWARD, gate), b);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let half = random_seq(&mut rng, 3, 3);
        let mut xs = half.clone();
        xs.extend(half.iter().rev().cloned());
        let out = bilstm_forward(&xs, &p).unwrap();
        let t = xs.len();
        for j in 0..t {
            for k in 0..4 {
                assert!((out[j][k] - out[t - 1 - j][4 + k]).abs() < 1e-14);
            }
        }
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Manual unrolling with explicit index loops.
    fn unrolled(xs: &[Vec<f64>], p: &Params, dir: &str, hd: usize) -> Vec<Vec<f64>> {
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut out = Vec::new();
        for x in xs {
            let z: Vec<f64> = x.iter().chain(h.iter()).copied().collect();
            let gate = |g: &str| -> Vec<f64> {
                let w = p.get(&format!("{dir}.w_{g}")).unwrap();
                let b = p.get(&format!("{dir}.b_{g}")).unwrap();
                (0..hd)
                    .map(|col| b.data()[col] + (0..z.len()).map(|r| z[r] * w.get(r, col)).sum::<f64>())
                    .collect()
            };
            let (gi, gf, go, gg) = (gate("i"), gate("f"), gate("o"), gate("g"));
            for k in 0..hd {
                c[k] = sig(gf[k]) * c[k] + sig(gi[k]) * gg[k].tanh();
                h[k] = sig(go[k]) * c[k].tanh();
            }
            out.push(h.clone());
        }
        out
    }

    #[test]
    fn matches_unrolled_oracle() {
        let p = lively(2, 3, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs = random_seq(&mut rng, 3, 2);
        let out = bilstm_forward(&xs, &p).unwrap();
        let f = unrolled(&xs, &p, FORWARD, 3);
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let mut b = unrolled(&rev, &p, BACKWARD, 3);
        b.reverse();
        for t in 0..3 {
            for k in 0..3 {
                assert!((out[t][k] - f[t][k]).abs() < 1e-14);
                assert!((out[t][3 + k] - b[t][k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn tape_matches_forward() {
        let p = lively(3, 4, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs = random_seq(&mut rng, 5, 3);
        for causal in [false, true] {
            let mut tape = Tape::new();
            let bound = tape.bind(&p);
            let x = tape.leaf(NumArray::from_rows(&xs).unwrap());
            let y = tape_bilstm(&mut tape, &bound, 4, x, causal).unwrap();
            let want = if causal { bilstm_prefix_forward(&xs, &p) } else { bilstm_forward(&xs, &p) }.unwrap();
            assert!(tape.value(y).max_abs_diff(&NumArray::from_rows(&want).unwrap()) < 1e-14);
        }
    }

    #[test]
    fn prefix_rows_equal_bilstm_on_prefix() {
        let p = lively(3, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs = random_seq(&mut rng, 6, 3);
        let pre = bilstm_prefix_forward(&xs, &p).unwrap();
        for j in 0..xs.len() {
            let full = bilstm_forward(&xs[..=j], &p).unwrap();
            assert_eq!(pre[j], full[j]);
        }
    }

    #[test]
    fn grad_check_three_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for seed in 0..5 {
            let p = init_bilstm(3, 4, seed);
            let xs = random_seq(&mut rng, 3, 3);
            let weights = NumArray::from_rows(&random_seq(&mut rng, 1, 4)).unwrap();
            let objective = |q: &Params| {
                let mut tape = Tape::new();
                let bound = tape.bind(q);
                let zero = tape.leaf(NumArray::zeros(&[1, 4]));
                let r = tape.leaf(weights.clone());
                let (mut h, mut c) = (zero, zero);
                for x in &xs {
                    let xv = tape.leaf(NumArray::row(x.clone()).unwrap());
                    (h, c) = tape_cell_step(&mut tape, &bound, FORWARD, xv, h, c)?;
                }
                let weighted = tape.mul(h, r)?;
                let loss = tape.sum(weighted);
                let g = tape.backward(loss)?;
                let grads = g.collect(&tape, &bound).extract_prefixed(&format!("{FORWARD}."));
                Ok((tape.value(loss).data()[0], grads))
            };
            let fwd_only = p.extract_prefixed(&format!("{FORWARD}."));
            let report = grad_check(
                |q: &Params| {
                    let mut full = p.clone();
                    full.merge_prefixed(&format!("{FORWARD}."), q.clone());
                    objective(&full)
                },
                &fwd_only,
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }

    proptest! {
        #[test]
        fn bounded_and_causal(seed in 0u64..300, l in 1usize..7, t in 0usize..7, bump in -3.0f64..3.0) {
            let p = lively(3, 4, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs = random_seq(&mut rng, l, 3);
            let out = bilstm_forward(&xs, &p).unwrap();
            prop_assert!(out.iter().flatten().all(|v| v.abs() < 1.0));
            let t = t % l;
            let mut ys = xs.clone();
            ys[t][0] += bump;
            let moved = bilstm_forward(&ys, &p).unwrap();
            for j in 0..l {
                if j < t {
                    prop_assert_eq!(&out[j][..4], &moved[j][..4]);
                }
                if j > t {
                    prop_assert_eq!(&out[j][4..], &moved[j][4..]);
                }
            }
        }
    }
}
