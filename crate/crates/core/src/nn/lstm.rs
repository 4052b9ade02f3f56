//! Bidirectional LSTM over a node's window of spatial embeddings.
//!
//! Gate order in the stacked weight matrices is input, forget, cell, output.
//! The fused output is `[h_fwd(last step) ‖ h_bwd(first step)]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{sigmoid, Mat};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    /// `4h × d`
    pub w_ih: Mat,
    /// `4h × h`
    pub w_hh: Mat,
    /// `4h`
    pub bias: Vec<f64>,
}

impl LstmCell {
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        LstmCell {
            w_ih: Mat::glorot(4 * hidden, input, rng),
            w_hh: Mat::glorot(4 * hidden, hidden, rng),
            bias,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmCell {
            w_ih: Mat::zeros(4 * hidden, input),
            w_hh: Mat::zeros(4 * hidden, hidden),
            bias: vec![0.0; 4 * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.cols
    }

    pub fn input(&self) -> usize {
        self.w_ih.cols
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        BiLstm {
            forward: LstmCell::init(input, hidden, rng),
            backward: LstmCell::init(input, hidden, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        BiLstm {
            forward: LstmCell::zeros(self.forward.input(), self.forward.hidden()),
            backward: LstmCell::zeros(self.backward.input(), self.backward.hidden()),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden() + self.backward.hidden()
    }
}

/// Per-step intermediates: `gates` holds activated i, f, g, o.
#[derive(Clone, Debug)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DirectionCache {
    steps: Vec<StepCache>,
}

#[derive(Clone, Debug)]
pub struct BiLstmCache {
    fwd: DirectionCache,
    bwd: DirectionCache,
}

fn run_direction<'a>(cell: &LstmCell, seq: impl Iterator<Item = &'a [f64]>) -> (Vec<f64>, DirectionCache) {
    let hd = cell.hidden();
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut z = vec![0.0; 4 * hd];
    let mut zh = vec![0.0; 4 * hd];
    let mut steps = Vec::new();
    for x in seq {
        cell.w_ih.matvec_into(x, &mut z);
        cell.w_hh.matvec_into(&h, &mut zh);
        let mut gates = vec![0.0; 4 * hd];
        for r in 0..4 * hd {
            let v = z[r] + zh[r] + cell.bias[r];
            gates[r] = if (2 * hd..3 * hd).contains(&r) { v.tanh() } else { sigmoid(v) };
        }
        let mut c_new = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        let mut h_new = vec![0.0; hd];
        for u in 0..hd {
            let (ig, fg, gg, og) = (gates[u], gates[hd + u], gates[2 * hd + u], gates[3 * hd + u]);
            c_new[u] = fg * c[u] + ig * gg;
            tanh_c[u] = c_new[u].tanh();
            h_new[u] = og * tanh_c[u];
        }
        steps.push(StepCache {
            x: x.to_vec(),
            h_prev: std::mem::replace(&mut h, h_new),
            c_prev: std::mem::replace(&mut c, c_new),
            gates,
            tanh_c,
        });
    }
    (h, DirectionCache { steps })
}

/// Backprop through one direction given the gradient on its final hidden
/// state. Returns input gradients in processing order.
fn backprop_direction(cell: &LstmCell, cache: &DirectionCache, d_h_final: &[f64], grads: &mut LstmCell) -> Vec<Vec<f64>> {
    let hd = cell.hidden();
    let mut dh = d_h_final.to_vec();
    let mut dc = vec![0.0; hd];
    let mut dz = vec![0.0; 4 * hd];
    let mut dxs = vec![Vec::new(); cache.steps.len()];
    for (s, step) in cache.steps.iter().enumerate().rev() {
        let g = &step.gates;
        for u in 0..hd {
            let (ig, fg, gg, og) = (g[u], g[hd + u], g[2 * hd + u], g[3 * hd + u]);
            let tc = step.tanh_c[u];
            let d_o = dh[u] * tc;
            let dcu = dc[u] + dh[u] * og * (1.0 - tc * tc);
            let d_i = dcu * gg;
            let d_g = dcu * ig;
            let d_f = dcu * step.c_prev[u];
            dc[u] = dcu * fg;
            dz[u] = d_i * ig * (1.0 - ig);
            dz[hd + u] = d_f * fg * (1.0 - fg);
            dz[2 * hd + u] = d_g * (1.0 - gg * gg);
            dz[3 * hd + u] = d_o * og * (1.0 - og);
        }
        grads.w_ih.outer_acc(&dz, &step.x);
        grads.w_hh.outer_acc(&dz, &step.h_prev);
        for (b, d) in grads.bias.iter_mut().zip(&dz) {
            *b += d;
        }
        let mut dx = vec![0.0; cell.input()];
        cell.w_ih.matvec_t_acc(&dz, &mut dx);
        dxs[s] = dx;
        dh.fill(0.0);
        cell.w_hh.matvec_t_acc(&dz, &mut dh);
    }
    dxs
}

/// Forward over `seq` (each item a `d`-vector). Returns the `2h` fused vector.
pub fn bilstm_fuse(seq: &[&[f64]], p: &BiLstm) -> Result<(Vec<f64>, BiLstmCache)> {
    if seq.is_empty() {
        return Err(Error::Dimension("empty sequence".into()));
    }
    let d = p.forward.input();
    if seq.iter().any(|x| x.len() != d) {
        return Err(Error::Dimension(format!("sequence items must have {d} entries")));
    }
    let (hf, fwd) = run_direction(&p.forward, seq.iter().copied());
    let (hb, bwd) = run_direction(&p.backward, seq.iter().rev().copied());
    let mut out = hf;
    out.extend(hb);
    Ok((out, BiLstmCache { fwd, bwd }))
}

/// Backward of [`bilstm_fuse`]; returns gradients per sequence item.
pub fn bilstm_backward(cache: &BiLstmCache, p: &BiLstm, d_out: &[f64], grads: &mut BiLstm) -> Vec<Vec<f64>> {
    let hf = p.forward.hidden();
    let mut dx = backprop_direction(&p.forward, &cache.fwd, &d_out[..hf], &mut grads.forward);
    let dxb = backprop_direction(&p.backward, &cache.bwd, &d_out[hf..], &mut grads.backward);
    let w = dx.len();
    for (s, db) in dxb.into_iter().enumerate() {
        for (a, b) in dx[w - 1 - s].iter_mut().zip(db) {
            *a += b;
        }
    }
    dx
}
