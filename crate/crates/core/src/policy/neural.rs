//! Windowed MLP: concatenated token embeddings → tanh hidden layer → logits.
//!
//! Parameter layout (row-major):
//! `emb[V×d] | w1[H×(W·d)] | b1[H] | w2[V×H] | b2[V]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::Token;
use crate::math;

use super::window_into;

#[derive(Debug, Clone, Copy)]
pub(super) struct Layout {
    vocab: usize,
    embed: usize,
    hidden: usize,
    window: usize,
    emb: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    pub(super) total: usize,
}

impl Layout {
    pub(super) fn new(vocab: usize, embed: usize, hidden: usize, window: usize) -> Self {
        let emb = 0;
        let w1 = emb + vocab * embed;
        let b1 = w1 + hidden * window * embed;
        let w2 = b1 + hidden;
        let b2 = w2 + vocab * hidden;
        let total = b2 + vocab;
        Self { vocab, embed, hidden, window, emb, w1, b1, w2, b2, total }
    }

    fn input_width(&self) -> usize {
        self.window * self.embed
    }
}

fn gather_input(theta: &[f64], l: &Layout, context: &[Token]) -> (Vec<Token>, Vec<f64>) {
    let mut win = vec![0 as Token; l.window];
    window_into(context, &mut win);
    let mut input = Vec::with_capacity(l.input_width());
    for &t in &win {
        let off = l.emb + t as usize * l.embed;
        input.extend_from_slice(&theta[off..off + l.embed]);
    }
    (win, input)
}

fn hidden_activations(theta: &[f64], l: &Layout, input: &[f64]) -> Vec<f64> {
    let iw = l.input_width();
    (0..l.hidden)
        .map(|h| {
            let row = &theta[l.w1 + h * iw..l.w1 + (h + 1) * iw];
            let pre: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + theta[l.b1 + h];
            math::tanh(pre)
        })
        .collect()
}

pub(super) fn logits(theta: &[f64], l: &Layout, context: &[Token], out: &mut [f64]) {
    let (_, input) = gather_input(theta, l, context);
    let hid = hidden_activations(theta, l, &input);
    for (v, o) in out.iter_mut().enumerate() {
        let row = &theta[l.w2 + v * l.hidden..l.w2 + (v + 1) * l.hidden];
        *o = row.iter().zip(&hid).map(|(w, h)| w * h).sum::<f64>() + theta[l.b2 + v];
    }
}

pub(super) fn backprop(theta: &[f64], l: &Layout, context: &[Token], dlogits: &[f64], grad: &mut [f64]) {
    let (win, input) = gather_input(theta, l, context);
    let hid = hidden_activations(theta, l, &input);
    let iw = l.input_width();

    let mut dhid = vec![0.0; l.hidden];
    for v in 0..l.vocab {
        let d = dlogits[v];
        if d == 0.0 {
            continue;
        }
        grad[l.b2 + v] += d;
        let base = l.w2 + v * l.hidden;
        for h in 0..l.hidden {
            grad[base + h] += d * hid[h];
            dhid[h] += d * theta[base + h];
        }
    }

    let mut dinput = vec![0.0; iw];
    for h in 0..l.hidden {
        let dpre = dhid[h] * (1.0 - hid[h] * hid[h]);
        if dpre == 0.0 {
            continue;
        }
        grad[l.b1 + h] += dpre;
        let base = l.w1 + h * iw;
        for i in 0..iw {
            grad[base + i] += dpre * input[i];
            dinput[i] += dpre * theta[base + i];
        }
    }

    for (slot, &t) in win.iter().enumerate() {
        let off = l.emb + t as usize * l.embed;
        for e in 0..l.embed {
            grad[off + e] += dinput[slot * l.embed + e];
        }
    }
}
