//! Pre-norm transformer encoder with sinusoidal positions and hand-written
//! backward pass.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayViewMut1, Axis, Zip};

use super::params::{Init, ParamSet};
use crate::error::{Result, SsrError};

const LN_EPS: f64 = 1e-5;
const EMB_STD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderShape {
    pub vocab: usize,
    pub dim: usize,
    pub heads: usize,
    pub ff: usize,
    pub layers: usize,
}

pub fn param_spec(shape: &EncoderShape) -> Vec<(String, Vec<usize>, Init)> {
    let EncoderShape {
        vocab, dim, ff, layers, ..
    } = *shape;
    let in_std = 1.0 / (dim as f64).sqrt();
    let resid = 1.0 / (2.0 * layers as f64).sqrt();
    let mut spec = vec![("enc.tok_emb".to_string(), vec![vocab, dim], Init::Normal(EMB_STD))];
    for l in 0..layers {
        let p = |n: &str| format!("enc.{l}.{n}");
        spec.extend([
            (p("ln1.g"), vec![dim], Init::Ones),
            (p("ln1.b"), vec![dim], Init::Zeros),
            (p("attn.wq"), vec![dim, dim], Init::Normal(in_std)),
            (p("attn.bq"), vec![dim], Init::Zeros),
            (p("attn.wk"), vec![dim, dim], Init::Normal(in_std)),
            (p("attn.bk"), vec![dim], Init::Zeros),
            (p("attn.wv"), vec![dim, dim], Init::Normal(in_std)),
            (p("attn.bv"), vec![dim], Init::Zeros),
            (p("attn.wo"), vec![dim, dim], Init::Normal(in_std * resid)),
            (p("attn.bo"), vec![dim], Init::Zeros),
            (p("ln2.g"), vec![dim], Init::Ones),
            (p("ln2.b"), vec![dim], Init::Zeros),
            (p("ff.w1"), vec![dim, ff], Init::Normal(in_std)),
            (p("ff.b1"), vec![ff], Init::Zeros),
            (p("ff.w2"), vec![ff, dim], Init::Normal(resid / (ff as f64).sqrt())),
            (p("ff.b2"), vec![dim], Init::Zeros),
        ]);
    }
    spec.push(("enc.ln_f.g".to_string(), vec![dim], Init::Ones));
    spec.push(("enc.ln_f.b".to_string(), vec![dim], Init::Zeros));
    spec
}

pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("enc.")
}

#[derive(Debug, Clone)]
struct LayerIdx {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Positions of the encoder tensors inside a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Encoder {
    shape: EncoderShape,
    emb: usize,
    layers: Vec<LayerIdx>,
    lnf_g: usize,
    lnf_b: usize,
}

fn lookup(params: &ParamSet, name: &str, shape: &[usize]) -> Result<usize> {
    let i = params
        .index(name)
        .ok_or_else(|| SsrError::ModelFormat(format!("missing tensor {name}")))?;
    if params.tensors()[i].shape != shape {
        return Err(SsrError::ModelFormat(format!(
            "tensor {name} has shape {:?}, expected {shape:?}",
            params.tensors()[i].shape
        )));
    }
    Ok(i)
}

pub struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn ln_forward(x: &Array2<f64>, g: ArrayView1<f64>, b: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
    let centered = x - &mean.insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).mean_axis(Axis(1)).expect("non-empty rows");
    let rstd = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * rstd.view().insert_axis(Axis(1));
    let y = &xhat * &g + b;
    (y, LnCache { xhat, rstd })
}

fn ln_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: ArrayView1<f64>,
    mut dg: ArrayViewMut1<f64>,
    mut db: ArrayViewMut1<f64>,
) -> Array2<f64> {
    db += &dy.sum_axis(Axis(0));
    dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    let dxhat = dy * &g;
    let mean_d = dxhat.mean_axis(Axis(1)).expect("non-empty rows").insert_axis(Axis(1));
    let mean_dx = (&dxhat * &cache.xhat)
        .mean_axis(Axis(1))
        .expect("non-empty rows")
        .insert_axis(Axis(1));
    (dxhat - &mean_d - &cache.xhat * &mean_dx) * cache.rstd.view().insert_axis(Axis(1))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

pub fn sinusoid(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(pos, i)| {
        let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
        let angle = pos as f64 * rate;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    concat: Array2<f64>,
    ln2: LnCache,
    b: Array2<f64>,
    f_pre: Array2<f64>,
    f_act: Array2<f64>,
}

/// Activations of one forward pass, kept for the backward pass.
pub struct EncoderCache {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    /// Final hidden states, one row per input token.
    pub output: Array2<f64>,
}

fn add_row_sums(mut dst: ArrayViewMut1<f64>, m: &Array2<f64>) {
    dst += &m.sum_axis(Axis(0));
}

fn acc_matmul_tn(params: &mut ParamSet, i: usize, a: &Array2<f64>, b: &Array2<f64>) {
    general_mat_mul(1.0, &a.t(), b, 1.0, &mut params.mat_mut(i));
}

impl Encoder {
    pub fn resolve(params: &ParamSet, shape: EncoderShape) -> Result<Self> {
        let EncoderShape {
            vocab,
            dim,
            ff,
            layers,
            heads,
        } = shape;
        if heads == 0 || dim % heads != 0 {
            return Err(SsrError::Param(format!(
                "embed_dim {dim} not divisible by num_heads {heads}"
            )));
        }
        let layers = (0..layers)
            .map(|l| {
                let n = |s: &str| format!("enc.{l}.{s}");
                Ok(LayerIdx {
                    ln1_g: lookup(params, &n("ln1.g"), &[dim])?,
                    ln1_b: lookup(params, &n("ln1.b"), &[dim])?,
                    wq: lookup(params, &n("attn.wq"), &[dim, dim])?,
                    bq: lookup(params, &n("attn.bq"), &[dim])?,
                    wk: lookup(params, &n("attn.wk"), &[dim, dim])?,
                    bk: lookup(params, &n("attn.bk"), &[dim])?,
                    wv: lookup(params, &n("attn.wv"), &[dim, dim])?,
                    bv: lookup(params, &n("attn.bv"), &[dim])?,
                    wo: lookup(params, &n("attn.wo"), &[dim, dim])?,
                    bo: lookup(params, &n("attn.bo"), &[dim])?,
                    ln2_g: lookup(params, &n("ln2.g"), &[dim])?,
                    ln2_b: lookup(params, &n("ln2.b"), &[dim])?,
                    w1: lookup(params, &n("ff.w1"), &[dim, ff])?,
                    b1: lookup(params, &n("ff.b1"), &[ff])?,
                    w2: lookup(params, &n("ff.w2"), &[ff, dim])?,
                    b2: lookup(params, &n("ff.b2"), &[dim])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoder {
            shape,
            emb: lookup(params, "enc.tok_emb", &[vocab, dim])?,
            layers,
            lnf_g: lookup(params, "enc.ln_f.g", &[dim])?,
            lnf_b: lookup(params, "enc.ln_f.b", &[dim])?,
        })
    }

    pub fn shape(&self) -> EncoderShape {
        self.shape
    }

    pub fn forward(&self, params: &ParamSet, ids: &[u32]) -> Result<EncoderCache> {
        if ids.is_empty() {
            return Err(SsrError::Param("empty input".into()));
        }
        let dim = self.shape.dim;
        let emb = params.mat(self.emb);
        let mut x = sinusoid(ids.len(), dim);
        for (mut row, &id) in x.rows_mut().into_iter().zip(ids) {
            if id as usize >= self.shape.vocab {
                return Err(SsrError::VocabMismatch(format!(
                    "token id {id} outside embedding table"
                )));
            }
            row += &emb.row(id as usize);
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = self.layer_forward(params, layer, x);
            caches.push(cache);
            x = next;
        }
        let (output, lnf) = ln_forward(&x, params.vec(self.lnf_g), params.vec(self.lnf_b));
        Ok(EncoderCache {
            ids: ids.to_vec(),
            layers: caches,
            lnf,
            output,
        })
    }

    fn layer_forward(&self, params: &ParamSet, l: &LayerIdx, x: Array2<f64>) -> (Array2<f64>, LayerCache) {
        let heads = self.shape.heads;
        let dh = self.shape.dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (a, ln1) = ln_forward(&x, params.vec(l.ln1_g), params.vec(l.ln1_b));
        let q = a.dot(&params.mat(l.wq)) + params.vec(l.bq);
        let k = a.dot(&params.mat(l.wk)) + params.vec(l.bk);
        let v = a.dot(&params.mat(l.wv)) + params.vec(l.bv);
        let mut concat = Array2::zeros(x.raw_dim());
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut p = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut p);
            concat.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let x1 = x + concat.dot(&params.mat(l.wo)) + params.vec(l.bo);
        let (b, ln2) = ln_forward(&x1, params.vec(l.ln2_g), params.vec(l.ln2_b));
        let f_pre = b.dot(&params.mat(l.w1)) + params.vec(l.b1);
        let f_act = f_pre.mapv(gelu);
        let x2 = &x1 + &(f_act.dot(&params.mat(l.w2)) + params.vec(l.b2));
        (
            x2,
            LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                concat,
                ln2,
                b,
                f_pre,
                f_act,
            },
        )
    }

    /// Accumulates parameter gradients for `d_output`, the gradient of the
    /// loss with respect to [`EncoderCache::output`].
    pub fn backward(&self, params: &ParamSet, cache: &EncoderCache, d_output: &Array2<f64>, grads: &mut ParamSet) {
        let (lg, lb) = (self.lnf_g, self.lnf_b);
        let mut dx = {
            let (dg, db) = two_vecs(grads, lg, lb);
            ln_backward(d_output, &cache.lnf, params.vec(lg), dg, db)
        };
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            dx = self.layer_backward(params, layer, lc, dx, grads);
        }
        let mut demb = grads.mat_mut(self.emb);
        for (row, &id) in dx.rows().into_iter().zip(&cache.ids) {
            let mut target = demb.row_mut(id as usize);
            target += &row;
        }
    }

    fn layer_backward(
        &self,
        params: &ParamSet,
        l: &LayerIdx,
        c: &LayerCache,
        dx2: Array2<f64>,
        grads: &mut ParamSet,
    ) -> Array2<f64> {
        let heads = self.shape.heads;
        let dh = self.shape.dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        // feed-forward block
        acc_matmul_tn(grads, l.w2, &c.f_act, &dx2);
        add_row_sums(grads.vec_mut(l.b2), &dx2);
        let mut df = dx2.dot(&params.mat(l.w2).t());
        Zip::from(&mut df).and(&c.f_pre).for_each(|d, &x| *d *= gelu_grad(x));
        acc_matmul_tn(grads, l.w1, &c.b, &df);
        add_row_sums(grads.vec_mut(l.b1), &df);
        let db = df.dot(&params.mat(l.w1).t());
        let dx1 = {
            let (dg, dbeta) = two_vecs(grads, l.ln2_g, l.ln2_b);
            dx2 + ln_backward(&db, &c.ln2, params.vec(l.ln2_g), dg, dbeta)
        };

        // attention block
        acc_matmul_tn(grads, l.wo, &c.concat, &dx1);
        add_row_sums(grads.vec_mut(l.bo), &dx1);
        let dconcat = dx1.dot(&params.mat(l.wo).t());
        let mut dq = Array2::zeros(c.q.raw_dim());
        let mut dk = Array2::zeros(c.k.raw_dim());
        let mut dv = Array2::zeros(c.v.raw_dim());
        for (h, p) in c.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let d_out = dconcat.slice(cols);
            dv.slice_mut(cols).assign(&p.t().dot(&d_out));
            let dp = d_out.dot(&c.v.slice(cols).t());
            let row_dot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
            let ds = (dp - &row_dot) * p * scale;
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        acc_matmul_tn(grads, l.wq, &c.a, &dq);
        acc_matmul_tn(grads, l.wk, &c.a, &dk);
        acc_matmul_tn(grads, l.wv, &c.a, &dv);
        add_row_sums(grads.vec_mut(l.bq), &dq);
        add_row_sums(grads.vec_mut(l.bk), &dk);
        add_row_sums(grads.vec_mut(l.bv), &dv);
        let da = dq.dot(&params.mat(l.wq).t()) + dk.dot(&params.mat(l.wk).t()) + dv.dot(&params.mat(l.wv).t());
        let (dg, dbeta) = two_vecs(grads, l.ln1_g, l.ln1_b);
        dx1 + ln_backward(&da, &c.ln1, params.vec(l.ln1_g), dg, dbeta)
    }
}

/// Two distinct mutable vectors of the same parameter set.
fn two_vecs(grads: &mut ParamSet, a: usize, b: usize) -> (ArrayViewMut1<'_, f64>, ArrayViewMut1<'_, f64>) {
    assert!(a < b, "tensor order: gain before bias");
    let (lo, hi) = grads.tensors_mut().split_at_mut(b);
    (
        ArrayViewMut1::from(&mut lo[a].data[..]),
        ArrayViewMut1::from(&mut hi[0].data[..]),
    )
}
