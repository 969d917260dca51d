//! Windowed feed-forward tagger: each token sees its own word and box
//! features plus those of `radius` neighbours on each side in reading
//! order (zero-padded at the edges).

use super::ops::{gelu, gelu_grad, linear, linear_backward, Matrix};
use super::{Gradients, Init, TaggerParams, TensorSpec, TokenFeatures, WindowConfig, GEOMETRY_DIM};
use crate::scalar::Scalar;

const WORD: usize = 0;
const HIDDEN_W: usize = 1;

pub(super) fn layout(w: &WindowConfig) -> Vec<TensorSpec> {
    let width = (2 * w.radius + 1) * (w.word_dim + GEOMETRY_DIM);
    vec![
        TensorSpec::new("embed.word", &[w.vocab_size, w.word_dim], Init::Uniform(0.1)),
        TensorSpec::glorot("hidden.w", width, w.hidden_dim),
        TensorSpec::new("hidden.b", &[w.hidden_dim], Init::Zeros),
        TensorSpec::glorot("head.w", w.hidden_dim, w.n_tags),
        TensorSpec::new("head.b", &[w.n_tags], Init::Zeros),
    ]
}

pub(crate) struct Cache<T> {
    input: Matrix<T>,
    pre: Matrix<T>,
}

pub(super) fn encode<T: Scalar>(w: &WindowConfig, p: &TaggerParams<T>, f: &TokenFeatures) -> (Matrix<T>, Cache<T>) {
    let n = f.len();
    let slot = w.word_dim + GEOMETRY_DIM;
    let width = (2 * w.radius + 1) * slot;
    let word = &p.tensors[WORD].data;
    let mut input = Matrix::zeros(n, width);
    for i in 0..n {
        let row = input.row_mut(i);
        for (k, off) in (-(w.radius as isize)..=w.radius as isize).enumerate() {
            let j = i as isize + off;
            if j < 0 || j >= n as isize {
                continue;
            }
            let j = j as usize;
            let id = f.word_ids[j];
            let dst = &mut row[k * slot..(k + 1) * slot];
            dst[..w.word_dim].copy_from_slice(&word[id * w.word_dim..(id + 1) * w.word_dim]);
            for (d, &g) in dst[w.word_dim..].iter_mut().zip(&f.geometry[j]) {
                *d = T::c(g);
            }
        }
    }
    let pre = linear(&input, &p.tensors[HIDDEN_W].data, &p.tensors[HIDDEN_W + 1].data);
    let hidden = pre.map(gelu);
    (hidden, Cache { input, pre })
}

pub(super) fn encode_backward<T: Scalar>(
    w: &WindowConfig,
    p: &TaggerParams<T>,
    f: &TokenFeatures,
    c: &Cache<T>,
    dz: &Matrix<T>,
    grads: &mut Gradients<T>,
) {
    let n = f.len();
    let slot = w.word_dim + GEOMETRY_DIM;
    let mut dpre = dz.clone();
    for (g, &x) in dpre.data.iter_mut().zip(&c.pre.data) {
        *g *= gelu_grad(x);
    }
    let dinput = {
        let (gw, gb) = grads.pair_mut(HIDDEN_W);
        linear_backward(&c.input, &p.tensors[HIDDEN_W].data, &dpre, gw, gb, true).unwrap()
    };
    let word_grad = &mut grads.data[WORD];
    for i in 0..n {
        let row = dinput.row(i);
        for (k, off) in (-(w.radius as isize)..=w.radius as isize).enumerate() {
            let j = i as isize + off;
            if j < 0 || j >= n as isize {
                continue;
            }
            let id = f.word_ids[j as usize];
            let src = &row[k * slot..k * slot + w.word_dim];
            for (acc, &g) in word_grad[id * w.word_dim..(id + 1) * w.word_dim].iter_mut().zip(src) {
                *acc += g;
            }
        }
    }
}
