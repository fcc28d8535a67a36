//! Pre-norm transformer encoder-decoder with hand-derived reverse-mode
//! gradients. One sequence pair per call; no padding.

use rand::{Rng, RngCore};

use super::linalg::{add_assign, gemm, softmax_rows, Scalar, View, ViewMut};
use super::params::{AttnIx, FfnIx, LinearIx, NormIx, Parameters, Gradients};
use super::vocab::{BOS, EOS};
use crate::{Error, Result};

const NORM_EPS: f64 = 1e-5;

struct NormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
    out: Vec<T>,
}

struct AttnCache<T> {
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// heads x lq x lk attention probabilities
    probs: Vec<T>,
    o: Vec<T>,
    lq: usize,
    lk: usize,
}

struct FfnCache<T> {
    hidden: Vec<T>,
}

struct EncLayerCache<T> {
    ln1: NormCache<T>,
    attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    ln2: NormCache<T>,
    ffn: FfnCache<T>,
    drop2: Option<Vec<T>>,
}

struct DecLayerCache<T> {
    ln1: NormCache<T>,
    self_attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    ln2: NormCache<T>,
    cross: AttnCache<T>,
    drop2: Option<Vec<T>>,
    ln3: NormCache<T>,
    ffn: FfnCache<T>,
    drop3: Option<Vec<T>>,
}

struct EncoderState<T> {
    drop0: Option<Vec<T>>,
    layers: Vec<EncLayerCache<T>>,
    norm: NormCache<T>,
}

struct DecoderState<T> {
    drop0: Option<Vec<T>>,
    layers: Vec<DecLayerCache<T>>,
    norm: NormCache<T>,
}

/// Everything `backward` needs from one teacher-forced forward pass.
pub struct ForwardCache<T> {
    input: Vec<u32>,
    dec_in: Vec<u32>,
    gold: Vec<u32>,
    enc: EncoderState<T>,
    dec: DecoderState<T>,
    probs: Vec<T>,
    loss: f64,
}

impl<T> ForwardCache<T> {
    pub fn loss(&self) -> f64 {
        self.loss
    }

    pub fn target_positions(&self) -> usize {
        self.gold.len()
    }
}

fn linear_fwd<T: Scalar>(p: &[T], ix: &LinearIx, x: &[T], rows: usize) -> Vec<T> {
    let mut y = vec![T::zero(); rows * ix.dout];
    for row in y.chunks_mut(ix.dout) {
        row.copy_from_slice(&p[ix.b..ix.b + ix.dout]);
    }
    gemm(
        T::one(),
        View::new(x, rows, ix.din),
        View::new(&p[ix.w..], ix.din, ix.dout),
        T::one(),
        ViewMut::new(&mut y, rows, ix.dout),
    );
    y
}

/// Accumulates dW, db into `g` and, when given, dx into `dx`.
fn linear_bwd<T: Scalar>(
    p: &[T],
    ix: &LinearIx,
    x: &[T],
    dy: &[T],
    rows: usize,
    g: &mut [T],
    dx: Option<&mut [T]>,
) {
    gemm(
        T::one(),
        View::new(x, rows, ix.din).t(),
        View::new(dy, rows, ix.dout),
        T::one(),
        ViewMut::new(&mut g[ix.w..], ix.din, ix.dout),
    );
    let gb = &mut g[ix.b..ix.b + ix.dout];
    for row in dy.chunks(ix.dout) {
        add_assign(gb, row);
    }
    if let Some(dx) = dx {
        gemm(
            T::one(),
            View::new(dy, rows, ix.dout),
            View::new(&p[ix.w..], ix.din, ix.dout).t(),
            T::one(),
            ViewMut::new(dx, rows, ix.din),
        );
    }
}

fn norm_fwd<T: Scalar>(p: &[T], ix: &NormIx, x: &[T], d: usize) -> NormCache<T> {
    let rows = x.len() / d;
    let gamma = &p[ix.g..ix.g + d];
    let beta = &p[ix.b..ix.b + d];
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let n = T::from_f64(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = T::one() / (var + T::from_f64(NORM_EPS)).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gamma[j] + beta[j];
        }
    }
    NormCache { xhat, rstd, out }
}

fn norm_bwd<T: Scalar>(p: &[T], ix: &NormIx, c: &NormCache<T>, dy: &[T], d: usize, g: &mut [T], dx: &mut [T]) {
    let gamma = &p[ix.g..ix.g + d];
    let n = T::from_f64(d as f64);
    let mut dxhat = vec![T::zero(); d];
    for (r, &rs) in c.rstd.iter().enumerate() {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &c.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for j in 0..d {
            g[ix.g + j] += dyr[j] * xh[j];
            g[ix.b + j] += dyr[j];
            dxhat[j] = dyr[j] * gamma[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
        }
        mean_dxhat /= n;
        mean_dxhat_xhat /= n;
        for j in 0..d {
            dx[r * d + j] += rs * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
}

fn attn_fwd<T: Scalar>(
    p: &[T],
    ix: &AttnIx,
    xq: &[T],
    xkv: &[T],
    d: usize,
    heads: usize,
    causal: bool,
) -> (Vec<T>, AttnCache<T>) {
    let lq = xq.len() / d;
    let lk = xkv.len() / d;
    let dh = d / heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let q = linear_fwd(p, &ix.q, xq, lq);
    let k = linear_fwd(p, &ix.k, xkv, lk);
    let v = linear_fwd(p, &ix.v, xkv, lk);
    let mut probs = vec![T::zero(); heads * lq * lk];
    let mut o = vec![T::zero(); lq * d];
    for h in 0..heads {
        let s = &mut probs[h * lq * lk..(h + 1) * lq * lk];
        gemm(
            scale,
            View::new(&q, lq, d).cols(h * dh, dh),
            View::new(&k, lk, d).cols(h * dh, dh).t(),
            T::zero(),
            ViewMut::new(s, lq, lk),
        );
        if causal {
            for i in 0..lq {
                for j in i + 1..lk {
                    s[i * lk + j] = T::neg_infinity();
                }
            }
        }
        softmax_rows(s, lk);
        gemm(
            T::one(),
            View::new(s, lq, lk),
            View::new(&v, lk, d).cols(h * dh, dh),
            T::zero(),
            ViewMut::new(&mut o, lq, d).cols(h * dh, dh),
        );
    }
    let y = linear_fwd(p, &ix.o, &o, lq);
    (
        y,
        AttnCache {
            q,
            k,
            v,
            probs,
            o,
            lq,
            lk,
        },
    )
}

/// Returns (d xq, d xkv).
fn attn_bwd<T: Scalar>(
    p: &[T],
    ix: &AttnIx,
    c: &AttnCache<T>,
    xq: &[T],
    xkv: &[T],
    dy: &[T],
    d: usize,
    heads: usize,
    g: &mut [T],
) -> (Vec<T>, Vec<T>) {
    let (lq, lk) = (c.lq, c.lk);
    let dh = d / heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut d_o = vec![T::zero(); lq * d];
    linear_bwd(p, &ix.o, &c.o, dy, lq, g, Some(&mut d_o));
    let mut dq = vec![T::zero(); lq * d];
    let mut dk = vec![T::zero(); lk * d];
    let mut dv = vec![T::zero(); lk * d];
    let mut ds = vec![T::zero(); lq * lk];
    for h in 0..heads {
        let a = &c.probs[h * lq * lk..(h + 1) * lq * lk];
        // dA = dO_h V_h^T
        gemm(
            T::one(),
            View::new(&d_o, lq, d).cols(h * dh, dh),
            View::new(&c.v, lk, d).cols(h * dh, dh).t(),
            T::zero(),
            ViewMut::new(&mut ds, lq, lk),
        );
        // dV_h = A^T dO_h
        gemm(
            T::one(),
            View::new(a, lq, lk).t(),
            View::new(&d_o, lq, d).cols(h * dh, dh),
            T::zero(),
            ViewMut::new(&mut dv, lk, d).cols(h * dh, dh),
        );
        for i in 0..lq {
            let ar = &a[i * lk..(i + 1) * lk];
            let dr = &mut ds[i * lk..(i + 1) * lk];
            let dot: T = ar.iter().zip(dr.iter()).map(|(&x, &y)| x * y).sum();
            for j in 0..lk {
                dr[j] = ar[j] * (dr[j] - dot) * scale;
            }
        }
        gemm(
            T::one(),
            View::new(&ds, lq, lk),
            View::new(&c.k, lk, d).cols(h * dh, dh),
            T::zero(),
            ViewMut::new(&mut dq, lq, d).cols(h * dh, dh),
        );
        gemm(
            T::one(),
            View::new(&ds, lq, lk).t(),
            View::new(&c.q, lq, d).cols(h * dh, dh),
            T::zero(),
            ViewMut::new(&mut dk, lk, d).cols(h * dh, dh),
        );
    }
    let mut dxq = vec![T::zero(); lq * d];
    let mut dxkv = vec![T::zero(); lk * d];
    linear_bwd(p, &ix.q, xq, &dq, lq, g, Some(&mut dxq));
    linear_bwd(p, &ix.k, xkv, &dk, lk, g, Some(&mut dxkv));
    linear_bwd(p, &ix.v, xkv, &dv, lk, g, Some(&mut dxkv));
    (dxq, dxkv)
}

fn ffn_fwd<T: Scalar>(p: &[T], ix: &FfnIx, x: &[T], rows: usize) -> (Vec<T>, FfnCache<T>) {
    let mut hidden = linear_fwd(p, &ix.up, x, rows);
    for h in &mut hidden {
        *h = h.max(T::zero());
    }
    let y = linear_fwd(p, &ix.down, &hidden, rows);
    (y, FfnCache { hidden })
}

fn ffn_bwd<T: Scalar>(p: &[T], ix: &FfnIx, c: &FfnCache<T>, x: &[T], dy: &[T], rows: usize, g: &mut [T]) -> Vec<T> {
    let mut dh = vec![T::zero(); rows * ix.up.dout];
    linear_bwd(p, &ix.down, &c.hidden, dy, rows, g, Some(&mut dh));
    for (d, &h) in dh.iter_mut().zip(&c.hidden) {
        if h <= T::zero() {
            *d = T::zero();
        }
    }
    let mut dx = vec![T::zero(); rows * ix.up.din];
    linear_bwd(p, &ix.up, x, &dh, rows, g, Some(&mut dx));
    dx
}

fn dropout_mask<T: Scalar>(rng: &mut Option<&mut dyn RngCore>, n: usize, rate: f64) -> Option<Vec<T>> {
    let rng = rng.as_deref_mut()?;
    if rate <= 0.0 {
        return None;
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    Some(
        (0..n)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect(),
    )
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

impl<T: Scalar> Parameters<T> {
    fn embed(&self, ids: &[u32], pos: usize) -> Vec<T> {
        let d = self.config().d_model;
        let emb = self.layout().tok_emb;
        let mut x = vec![T::zero(); ids.len() * d];
        for (i, &id) in ids.iter().enumerate() {
            let e = &self.data[emb + id as usize * d..emb + (id as usize + 1) * d];
            let pe = &self.data[pos + i * d..pos + (i + 1) * d];
            for j in 0..d {
                x[i * d + j] = e[j] + pe[j];
            }
        }
        x
    }

    fn encode(&self, input: &[u32], rng: &mut Option<&mut dyn RngCore>) -> EncoderState<T> {
        let cfg = self.config();
        let (d, heads, rate) = (cfg.d_model, cfg.n_heads, cfg.dropout);
        let p = &self.data[..];
        let l = input.len();
        let mut x = self.embed(input, self.layout().enc_pos);
        let drop0 = dropout_mask(rng, x.len(), rate);
        apply_mask(&mut x, &drop0);
        let mut layers = Vec::with_capacity(self.layout().enc.len());
        for ix in &self.layout().enc {
            let ln1 = norm_fwd(p, &ix.ln1, &x, d);
            let (mut a, attn) = attn_fwd(p, &ix.attn, &ln1.out, &ln1.out, d, heads, false);
            let drop1 = dropout_mask(rng, a.len(), rate);
            apply_mask(&mut a, &drop1);
            add_assign(&mut x, &a);
            let ln2 = norm_fwd(p, &ix.ln2, &x, d);
            let (mut f, ffn) = ffn_fwd(p, &ix.ffn, &ln2.out, l);
            let drop2 = dropout_mask(rng, f.len(), rate);
            apply_mask(&mut f, &drop2);
            add_assign(&mut x, &f);
            layers.push(EncLayerCache {
                ln1,
                attn,
                drop1,
                ln2,
                ffn,
                drop2,
            });
        }
        let norm = norm_fwd(p, &self.layout().enc_norm, &x, d);
        EncoderState { drop0, layers, norm }
    }

    fn decode(&self, dec_in: &[u32], enc_out: &[T], rng: &mut Option<&mut dyn RngCore>) -> DecoderState<T> {
        let cfg = self.config();
        let (d, heads, rate) = (cfg.d_model, cfg.n_heads, cfg.dropout);
        let p = &self.data[..];
        let l = dec_in.len();
        let mut y = self.embed(dec_in, self.layout().dec_pos);
        let drop0 = dropout_mask(rng, y.len(), rate);
        apply_mask(&mut y, &drop0);
        let mut layers = Vec::with_capacity(self.layout().dec.len());
        for ix in &self.layout().dec {
            let ln1 = norm_fwd(p, &ix.ln1, &y, d);
            let (mut a, self_attn) = attn_fwd(p, &ix.self_attn, &ln1.out, &ln1.out, d, heads, true);
            let drop1 = dropout_mask(rng, a.len(), rate);
            apply_mask(&mut a, &drop1);
            add_assign(&mut y, &a);
            let ln2 = norm_fwd(p, &ix.ln2, &y, d);
            let (mut c, cross) = attn_fwd(p, &ix.cross, &ln2.out, enc_out, d, heads, false);
            let drop2 = dropout_mask(rng, c.len(), rate);
            apply_mask(&mut c, &drop2);
            add_assign(&mut y, &c);
            let ln3 = norm_fwd(p, &ix.ln3, &y, d);
            let (mut f, ffn) = ffn_fwd(p, &ix.ffn, &ln3.out, l);
            let drop3 = dropout_mask(rng, f.len(), rate);
            apply_mask(&mut f, &drop3);
            add_assign(&mut y, &f);
            layers.push(DecLayerCache {
                ln1,
                self_attn,
                drop1,
                ln2,
                cross,
                drop2,
                ln3,
                ffn,
                drop3,
            });
        }
        let norm = norm_fwd(p, &self.layout().dec_norm, &y, d);
        DecoderState { drop0, layers, norm }
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        let v = self.layout().vocab_size;
        match ids.iter().find(|&&id| id as usize >= v) {
            Some(id) => Err(Error::invalid(format!("token id {id} outside vocabulary of {v}"))),
            None => Ok(()),
        }
    }

    fn check_lengths(&self, input: &[u32], dec_len: usize) -> Result<()> {
        let max_len = self.config().max_len;
        if input.is_empty() {
            return Err(Error::Empty("input sequence"));
        }
        for len in [input.len(), dec_len] {
            if len > max_len {
                return Err(Error::LengthOverflow { len, max_len });
            }
        }
        self.check_ids(input)
    }

    /// Teacher-forced mean token cross-entropy of `target` (followed by EOS)
    /// given `input`. Dropout is active only when `rng` is supplied.
    pub fn forward_loss(
        &self,
        input: &[u32],
        target: &[u32],
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(f64, ForwardCache<T>)> {
        self.check_lengths(input, target.len() + 1)?;
        self.check_ids(target)?;
        let mut rng = rng;
        let mut dec_in = Vec::with_capacity(target.len() + 1);
        dec_in.push(BOS);
        dec_in.extend_from_slice(target);
        let mut gold = target.to_vec();
        gold.push(EOS);

        let enc = self.encode(input, &mut rng);
        let dec = self.decode(&dec_in, &enc.norm.out, &mut rng);
        let head = self.layout().head;
        let vsz = head.dout;
        let mut probs = linear_fwd(&self.data, &head, &dec.norm.out, gold.len());
        let mut loss = 0.0;
        for (row, &g) in probs.chunks_mut(vsz).zip(&gold) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
            loss -= (row[g as usize] - lse).to_f64();
            for z in row.iter_mut() {
                *z = (*z - lse).exp();
            }
        }
        loss /= gold.len() as f64;
        Ok((
            loss,
            ForwardCache {
                input: input.to_vec(),
                dec_in,
                gold,
                enc,
                dec,
                probs,
                loss,
            },
        ))
    }

    /// Exact gradient of the cached loss.
    pub fn backward(&self, cache: &ForwardCache<T>) -> Gradients<T> {
        let mut g = Gradients::zeros(self.layout().clone());
        self.backward_into(cache, T::one(), &mut g);
        g
    }

    /// Adds the gradient of `scale * loss` into `grads`.
    pub fn backward_into(&self, cache: &ForwardCache<T>, scale: T, grads: &mut Gradients<T>) {
        let cfg = self.config();
        let (d, heads) = (cfg.d_model, cfg.n_heads);
        let layout = self.layout().clone();
        let p = &self.data[..];
        let g = &mut grads.data[..];
        let lt = cache.gold.len();
        let ls = cache.input.len();
        let vsz = layout.head.dout;

        let mut dlogits = cache.probs.clone();
        let coef = scale / T::from_f64(lt as f64);
        for (row, &gold) in dlogits.chunks_mut(vsz).zip(&cache.gold) {
            row[gold as usize] -= T::one();
            for z in row.iter_mut() {
                *z *= coef;
            }
        }
        let mut dz = vec![T::zero(); lt * d];
        linear_bwd(p, &layout.head, &cache.dec.norm.out, &dlogits, lt, g, Some(&mut dz));

        // decoder
        let mut dy = vec![T::zero(); lt * d];
        norm_bwd(p, &layout.dec_norm, &cache.dec.norm, &dz, d, g, &mut dy);
        let enc_out = &cache.enc.norm.out;
        let mut d_enc_out = vec![T::zero(); ls * d];
        for (ix, c) in layout.dec.iter().zip(&cache.dec.layers).rev() {
            let mut df = dy.clone();
            apply_mask(&mut df, &c.drop3);
            let dln3 = ffn_bwd(p, &ix.ffn, &c.ffn, &c.ln3.out, &df, lt, g);
            norm_bwd(p, &ix.ln3, &c.ln3, &dln3, d, g, &mut dy);

            let mut dc = dy.clone();
            apply_mask(&mut dc, &c.drop2);
            let (dln2, dkv) = attn_bwd(p, &ix.cross, &c.cross, &c.ln2.out, enc_out, &dc, d, heads, g);
            add_assign(&mut d_enc_out, &dkv);
            norm_bwd(p, &ix.ln2, &c.ln2, &dln2, d, g, &mut dy);

            let mut da = dy.clone();
            apply_mask(&mut da, &c.drop1);
            let (mut dln1, dkv) = attn_bwd(p, &ix.self_attn, &c.self_attn, &c.ln1.out, &c.ln1.out, &da, d, heads, g);
            add_assign(&mut dln1, &dkv);
            norm_bwd(p, &ix.ln1, &c.ln1, &dln1, d, g, &mut dy);
        }
        apply_mask(&mut dy, &cache.dec.drop0);
        self.scatter_embedding(&cache.dec_in, &dy, layout.dec_pos, g);

        // encoder
        let mut dx = vec![T::zero(); ls * d];
        norm_bwd(p, &layout.enc_norm, &cache.enc.norm, &d_enc_out, d, g, &mut dx);
        for (ix, c) in layout.enc.iter().zip(&cache.enc.layers).rev() {
            let mut df = dx.clone();
            apply_mask(&mut df, &c.drop2);
            let dln2 = ffn_bwd(p, &ix.ffn, &c.ffn, &c.ln2.out, &df, ls, g);
            norm_bwd(p, &ix.ln2, &c.ln2, &dln2, d, g, &mut dx);

            let mut da = dx.clone();
            apply_mask(&mut da, &c.drop1);
            let (mut dln1, dkv) = attn_bwd(p, &ix.attn, &c.attn, &c.ln1.out, &c.ln1.out, &da, d, heads, g);
            add_assign(&mut dln1, &dkv);
            norm_bwd(p, &ix.ln1, &c.ln1, &dln1, d, g, &mut dx);
        }
        apply_mask(&mut dx, &cache.enc.drop0);
        self.scatter_embedding(&cache.input, &dx, layout.enc_pos, g);
    }

    fn scatter_embedding(&self, ids: &[u32], dx: &[T], pos: usize, g: &mut [T]) {
        let d = self.config().d_model;
        let emb = self.layout().tok_emb;
        for (i, &id) in ids.iter().enumerate() {
            let row = &dx[i * d..(i + 1) * d];
            add_assign(&mut g[emb + id as usize * d..emb + (id as usize + 1) * d], row);
            add_assign(&mut g[pos + i * d..pos + (i + 1) * d], row);
        }
    }

    /// Greedy decoding from BOS; see [`Parameters::greedy_decode_with_prefix`].
    pub fn greedy_decode(&self, input: &[u32], max_new: usize) -> Result<Vec<u32>> {
        self.greedy_decode_with_prefix(input, &[], max_new)
    }

    /// Force-feeds `prefix` after BOS, then appends the argmax token (lowest
    /// id on ties) until EOS, `max_new` new tokens, or `max_len`. Returns only
    /// the generated tokens, without EOS.
    pub fn greedy_decode_with_prefix(&self, input: &[u32], prefix: &[u32], max_new: usize) -> Result<Vec<u32>> {
        if max_new == 0 {
            return Err(Error::invalid("max_new must be at least 1"));
        }
        self.check_lengths(input, prefix.len() + 1)?;
        self.check_ids(prefix)?;
        let max_len = self.config().max_len;
        let enc = self.encode(input, &mut None);
        let head = self.layout().head;
        let d = self.config().d_model;
        let mut dec_in = Vec::with_capacity(prefix.len() + max_new + 1);
        dec_in.push(BOS);
        dec_in.extend_from_slice(prefix);
        let mut out = Vec::new();
        while out.len() < max_new && dec_in.len() <= max_len {
            let dec = self.decode(&dec_in, &enc.norm.out, &mut None);
            let last = &dec.norm.out[(dec_in.len() - 1) * d..];
            let logits = linear_fwd(&self.data, &head, last, 1);
            let mut best = 0usize;
            for (i, &z) in logits.iter().enumerate() {
                if z > logits[best] {
                    best = i;
                }
            }
            let tok = best as u32;
            if tok == EOS {
                break;
            }
            out.push(tok);
            dec_in.push(tok);
        }
        Ok(out)
    }
}
