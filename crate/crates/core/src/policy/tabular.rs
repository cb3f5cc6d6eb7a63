//! Order-`n` context table: one logit row per window of the last `n` tokens.

use crate::corpus::Token;

use super::window_into;

const MAX_ORDER: usize = 8;

pub(super) fn num_params(vocab: usize, order: usize) -> usize {
    vocab.pow(order as u32) * vocab
}

fn row_offset(vocab: usize, order: usize, context: &[Token]) -> usize {
    let mut win = [0 as Token; MAX_ORDER];
    let win = &mut win[..order];
    window_into(context, win);
    let row = win.iter().fold(0usize, |acc, &t| acc * vocab + t as usize);
    row * vocab
}

pub(super) fn logits(theta: &[f64], vocab: usize, order: usize, context: &[Token], out: &mut [f64]) {
    assert!(order <= MAX_ORDER, "tabular order above {MAX_ORDER}");
    let off = row_offset(vocab, order, context);
    out.copy_from_slice(&theta[off..off + vocab]);
}

pub(super) fn backprop(vocab: usize, order: usize, context: &[Token], dlogits: &[f64], grad: &mut [f64]) {
    let off = row_offset(vocab, order, context);
    for (g, d) in grad[off..off + vocab].iter_mut().zip(dlogits) {
        *g += d;
    }
}
