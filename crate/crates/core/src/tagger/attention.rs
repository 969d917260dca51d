//! Self-attention encoder over word embeddings and box features.
//!
//! ```text
//! x0 = [E_word[id] ‖ tanh(geom · Wg + bg)] · Wp + bp
//! x  = x + MHA(LN1(x));  x = x + W2 · gelu(W1 · LN2(x))     (per block)
//! z  = LN_final(x)
//! ```
//!
//! There is no sequence-position embedding; the box features are the only
//! positional signal, so the encoder is permutation-equivariant in tokens.

use super::ops::{self, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, LayerNormCache, Matrix};
use super::{ArchConfig, Gradients, Init, TaggerParams, TensorSpec, TokenFeatures, GEOMETRY_DIM};
use crate::scalar::Scalar;

const WORD: usize = 0;
const GEOM_W: usize = 1;
const GEOM_B: usize = 2;
const PROJ_W: usize = 3;
const PROJ_B: usize = 4;
const BLOCK0: usize = 5;
const PER_BLOCK: usize = 16;

// offsets inside a block
const LN1_G: usize = 0;
const Q_W: usize = 2;
const K_W: usize = 4;
const V_W: usize = 6;
const O_W: usize = 8;
const LN2_G: usize = 10;
const FF1_W: usize = 12;
const FF2_W: usize = 14;

pub(super) fn layout(a: &ArchConfig) -> Vec<TensorSpec> {
    let (dm, dw, dg, dff) = (a.model_dim, a.word_dim, a.bbox_dim, a.ff_dim);
    let mut v = vec![
        TensorSpec::new("embed.word", &[a.vocab_size, dw], Init::Uniform(0.1)),
        TensorSpec::glorot("embed.geom.w", GEOMETRY_DIM, dg),
        TensorSpec::new("embed.geom.b", &[dg], Init::Zeros),
        TensorSpec::glorot("embed.proj.w", dw + dg, dm),
        TensorSpec::new("embed.proj.b", &[dm], Init::Zeros),
    ];
    for l in 0..a.n_blocks {
        let p = |s: &str| format!("block{l}.{s}");
        v.push(TensorSpec::new(p("ln1.g"), &[dm], Init::Ones));
        v.push(TensorSpec::new(p("ln1.b"), &[dm], Init::Zeros));
        for m in ["q", "k", "v", "o"] {
            v.push(TensorSpec::glorot(p(&format!("attn.{m}.w")), dm, dm));
            v.push(TensorSpec::new(p(&format!("attn.{m}.b")), &[dm], Init::Zeros));
        }
        v.push(TensorSpec::new(p("ln2.g"), &[dm], Init::Ones));
        v.push(TensorSpec::new(p("ln2.b"), &[dm], Init::Zeros));
        v.push(TensorSpec::glorot(p("ffn1.w"), dm, dff));
        v.push(TensorSpec::new(p("ffn1.b"), &[dff], Init::Zeros));
        v.push(TensorSpec::glorot(p("ffn2.w"), dff, dm));
        v.push(TensorSpec::new(p("ffn2.b"), &[dm], Init::Zeros));
    }
    v.push(TensorSpec::new("final_ln.g", &[dm], Init::Ones));
    v.push(TensorSpec::new("final_ln.b", &[dm], Init::Zeros));
    v.push(TensorSpec::glorot("head.w", dm, a.n_tags));
    v.push(TensorSpec::new("head.b", &[a.n_tags], Init::Zeros));
    v
}

fn final_ln(a: &ArchConfig) -> usize {
    BLOCK0 + PER_BLOCK * a.n_blocks
}

struct BlockCache<T> {
    ln1: LayerNormCache<T>,
    a: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    probs: Vec<Matrix<T>>,
    ctx: Matrix<T>,
    ln2: LayerNormCache<T>,
    b: Matrix<T>,
    ff_pre: Matrix<T>,
    ff_act: Matrix<T>,
}

pub(crate) struct Cache<T> {
    geom: Matrix<T>,
    g: Matrix<T>,
    concat: Matrix<T>,
    blocks: Vec<BlockCache<T>>,
    final_ln: LayerNormCache<T>,
}

pub(super) fn encode<T: Scalar>(a: &ArchConfig, p: &TaggerParams<T>, f: &TokenFeatures) -> (Matrix<T>, Cache<T>) {
    let t = |i: usize| p.tensors[i].data.as_slice();
    let n = f.len();
    let (dw, dg, dm) = (a.word_dim, a.bbox_dim, a.model_dim);

    let geom = f.geometry_matrix::<T>();
    let g = linear(&geom, t(GEOM_W), t(GEOM_B)).map(|v| v.tanh());
    let mut concat = Matrix::zeros(n, dw + dg);
    let word = t(WORD);
    for (i, &id) in f.word_ids.iter().enumerate() {
        let row = concat.row_mut(i);
        row[..dw].copy_from_slice(&word[id * dw..(id + 1) * dw]);
        row[dw..].copy_from_slice(g.row(i));
    }
    let mut x = linear(&concat, t(PROJ_W), t(PROJ_B));

    let heads = a.n_heads;
    let dh = dm / heads;
    let scale = T::one() / T::c(dh as f64).sqrt();
    let mut blocks = Vec::with_capacity(a.n_blocks);
    for l in 0..a.n_blocks {
        let base = BLOCK0 + PER_BLOCK * l;
        let (a_norm, ln1) = layer_norm(&x, t(base + LN1_G), t(base + LN1_G + 1));
        let q = linear(&a_norm, t(base + Q_W), t(base + Q_W + 1));
        let k = linear(&a_norm, t(base + K_W), t(base + K_W + 1));
        let v = linear(&a_norm, t(base + V_W), t(base + V_W + 1));
        let mut ctx = Matrix::zeros(n, dm);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = (q.columns(h * dh, dh), k.columns(h * dh, dh), v.columns(h * dh, dh));
            let mut s = ops::matmul(&qh, false, &kh, true);
            s.data.iter_mut().for_each(|e| *e *= scale);
            let pr = ops::softmax_rows(&s);
            ctx.set_columns(h * dh, &ops::matmul(&pr, false, &vh, false));
            probs.push(pr);
        }
        let o = linear(&ctx, t(base + O_W), t(base + O_W + 1));
        x.add_assign(&o);

        let (b_norm, ln2) = layer_norm(&x, t(base + LN2_G), t(base + LN2_G + 1));
        let ff_pre = linear(&b_norm, t(base + FF1_W), t(base + FF1_W + 1));
        let ff_act = ff_pre.map(gelu);
        let ff = linear(&ff_act, t(base + FF2_W), t(base + FF2_W + 1));
        x.add_assign(&ff);
        blocks.push(BlockCache {
            ln1,
            a: a_norm,
            q,
            k,
            v,
            probs,
            ctx,
            ln2,
            b: b_norm,
            ff_pre,
            ff_act,
        });
    }
    let fl = final_ln(a);
    let (z, final_cache) = layer_norm(&x, t(fl), t(fl + 1));
    (
        z,
        Cache {
            geom,
            g,
            concat,
            blocks,
            final_ln: final_cache,
        },
    )
}

pub(super) fn encode_backward<T: Scalar>(
    a: &ArchConfig,
    p: &TaggerParams<T>,
    f: &TokenFeatures,
    c: &Cache<T>,
    dz: &Matrix<T>,
    grads: &mut Gradients<T>,
) {
    let t = |i: usize| p.tensors[i].data.as_slice();
    let n = f.len();
    let (dw, dg, dm) = (a.word_dim, a.bbox_dim, a.model_dim);
    let heads = a.n_heads;
    let dh = dm / heads;
    let scale = T::one() / T::c(dh as f64).sqrt();

    let fl = final_ln(a);
    let mut dx = {
        let (dgain, dbias) = grads.pair_mut(fl);
        layer_norm_backward(&c.final_ln, t(fl), dz, dgain, dbias)
    };

    for l in (0..a.n_blocks).rev() {
        let base = BLOCK0 + PER_BLOCK * l;
        let bc = &c.blocks[l];

        // feed-forward residual branch
        let dact = {
            let (gw, gb) = grads.pair_mut(base + FF2_W);
            linear_backward(&bc.ff_act, t(base + FF2_W), &dx, gw, gb, true).unwrap()
        };
        let mut dpre = dact;
        for (g, &x) in dpre.data.iter_mut().zip(&bc.ff_pre.data) {
            *g *= gelu_grad(x);
        }
        let db_norm = {
            let (gw, gb) = grads.pair_mut(base + FF1_W);
            linear_backward(&bc.b, t(base + FF1_W), &dpre, gw, gb, true).unwrap()
        };
        let dln2 = {
            let (gg, gb) = grads.pair_mut(base + LN2_G);
            layer_norm_backward(&bc.ln2, t(base + LN2_G), &db_norm, gg, gb)
        };
        dx.add_assign(&dln2);

        // attention residual branch
        let dctx = {
            let (gw, gb) = grads.pair_mut(base + O_W);
            linear_backward(&bc.ctx, t(base + O_W), &dx, gw, gb, true).unwrap()
        };
        let mut dq = Matrix::zeros(n, dm);
        let mut dk = Matrix::zeros(n, dm);
        let mut dv = Matrix::zeros(n, dm);
        for h in 0..heads {
            let (qh, kh, vh) = (bc.q.columns(h * dh, dh), bc.k.columns(h * dh, dh), bc.v.columns(h * dh, dh));
            let pr = &bc.probs[h];
            let dctx_h = dctx.columns(h * dh, dh);
            let dpr = ops::matmul(&dctx_h, false, &vh, true);
            dv.set_columns(h * dh, &ops::matmul(pr, true, &dctx_h, false));
            let mut ds = Matrix::zeros(n, n);
            for i in 0..n {
                let (prow, dprow) = (pr.row(i), dpr.row(i));
                let dot: T = prow.iter().zip(dprow).map(|(&a, &b)| a * b).sum();
                let out = ds.row_mut(i);
                for j in 0..n {
                    out[j] = prow[j] * (dprow[j] - dot) * scale;
                }
            }
            dq.set_columns(h * dh, &ops::matmul(&ds, false, &kh, false));
            dk.set_columns(h * dh, &ops::matmul(&ds, true, &qh, false));
        }
        let mut da = Matrix::zeros(n, dm);
        for (off, d) in [(Q_W, &dq), (K_W, &dk), (V_W, &dv)] {
            let (gw, gb) = grads.pair_mut(base + off);
            da.add_assign(&linear_backward(&bc.a, t(base + off), d, gw, gb, true).unwrap());
        }
        let dln1 = {
            let (gg, gb) = grads.pair_mut(base + LN1_G);
            layer_norm_backward(&bc.ln1, t(base + LN1_G), &da, gg, gb)
        };
        dx.add_assign(&dln1);
    }

    // embeddings
    let dconcat = {
        let (gw, gb) = grads.pair_mut(PROJ_W);
        linear_backward(&c.concat, t(PROJ_W), &dx, gw, gb, true).unwrap()
    };
    let mut dgpre = Matrix::zeros(n, dg);
    for i in 0..n {
        let (src, g) = (dconcat.row(i), c.g.row(i));
        let out = dgpre.row_mut(i);
        for j in 0..dg {
            out[j] = src[dw + j] * (T::one() - g[j] * g[j]);
        }
    }
    {
        let (gw, gb) = grads.pair_mut(GEOM_W);
        linear_backward(&c.geom, t(GEOM_W), &dgpre, gw, gb, false);
    }
    let word_grad = &mut grads.data[WORD];
    for (i, &id) in f.word_ids.iter().enumerate() {
        let src = &dconcat.row(i)[..dw];
        for (acc, &g) in word_grad[id * dw..(id + 1) * dw].iter_mut().zip(src) {
            *acc += g;
        }
    }
}
