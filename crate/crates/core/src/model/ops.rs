//! Dense building blocks with hand-written backward passes.
//!
//! Parameters live in one flat buffer; blocks only hold [`Tensor`] views
//! (offset and shape) into it. Gradients use a buffer of the same layout.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of a model.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;
    const BYTES: usize;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Row-major activation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn add_assign(&mut self, other: &Mat<T>) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        axpy(T::one(), &other.data, &mut self.data);
    }

    pub fn added(&self, other: &Mat<T>) -> Mat<T> {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    let s = (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]);
    s + tail
}

/// `y += a * x`
#[inline]
pub fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Offset and shape of one parameter tensor inside the flat buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice<'a, T>(&self, buf: &'a [T]) -> &'a [T] {
        &buf[self.offset..self.offset + self.len()]
    }

    pub fn slice_mut<'a, T>(&self, buf: &'a mut [T]) -> &'a mut [T] {
        &mut buf[self.offset..self.offset + self.len()]
    }

    pub fn row<'a, T>(&self, buf: &'a [T], r: usize) -> &'a [T] {
        let start = self.offset + r * self.cols;
        &buf[start..start + self.cols]
    }

    pub fn row_mut<'a, T>(&self, buf: &'a mut [T], r: usize) -> &'a mut [T] {
        let start = self.offset + r * self.cols;
        &mut buf[start..start + self.cols]
    }
}

/// How a tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±1/sqrt(rows)`; rows are the fan-in of an `in x out` weight.
    FanIn,
    /// Uniform in `±1/sqrt(cols)`, used for embedding tables.
    Embedding,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub tensor: Tensor,
    pub init: Init,
}

/// Ordered list of named tensors in the flat parameter buffer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Layout {
    pub entries: Vec<LayoutEntry>,
    pub total: usize,
}

impl Layout {
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init) -> Tensor {
        let tensor = Tensor { offset: self.total, rows, cols };
        self.total += tensor.len();
        self.entries.push(LayoutEntry { name: name.into(), tensor, init });
        tensor
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.add(format!("{name}.w"), fan_in, fan_out, Init::FanIn),
            b: self.add(format!("{name}.b"), 1, fan_out, Init::Zeros),
        }
    }

    pub fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gain: self.add(format!("{name}.gain"), 1, d, Init::Ones),
            bias: self.add(format!("{name}.bias"), 1, d, Init::Zeros),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn forward<T: Real>(&self, p: &[T], x: &Mat<T>) -> Mat<T> {
        let (k, m) = (self.w.rows, self.w.cols);
        debug_assert_eq!(x.cols, k);
        let w = self.w.slice(p);
        let b = self.b.slice(p);
        let mut out = Mat::zeros(x.rows, m);
        for i in 0..x.rows {
            let orow = &mut out.data[i * m..(i + 1) * m];
            orow.copy_from_slice(b);
            for (pk, &a) in x.row(i).iter().enumerate() {
                if a != T::zero() {
                    axpy(a, &w[pk * m..(pk + 1) * m], orow);
                }
            }
        }
        out
    }

    /// Accumulates weight gradients and returns the input gradient.
    pub fn backward<T: Real>(&self, p: &[T], g: &mut [T], x: &Mat<T>, dy: &Mat<T>) -> Mat<T> {
        let (k, m) = (self.w.rows, self.w.cols);
        {
            let gb = self.b.slice_mut(g);
            for i in 0..dy.rows {
                axpy(T::one(), dy.row(i), gb);
            }
        }
        {
            let gw = self.w.slice_mut(g);
            for i in 0..x.rows {
                let dyr = dy.row(i);
                for (pk, &a) in x.row(i).iter().enumerate() {
                    if a != T::zero() {
                        axpy(a, dyr, &mut gw[pk * m..(pk + 1) * m]);
                    }
                }
            }
        }
        let w = self.w.slice(p);
        let mut dx = Mat::zeros(x.rows, k);
        for i in 0..dy.rows {
            let dyr = dy.row(i);
            let dxr = dx.row_mut(i);
            for (pk, d) in dxr.iter_mut().enumerate() {
                *d = dot(dyr, &w[pk * m..(pk + 1) * m]);
            }
        }
        dx
    }
}

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub gain: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct NormCache<T> {
    xhat: Mat<T>,
    inv_std: Vec<T>,
}

impl Norm {
    pub fn forward<T: Real>(&self, p: &[T], x: &Mat<T>) -> (Mat<T>, NormCache<T>) {
        let d = x.cols;
        let dn = T::of(d as f64);
        let eps = T::of(NORM_EPS);
        let gain = self.gain.slice(p);
        let bias = self.bias.slice(p);
        let mut xhat = Mat::zeros(x.rows, d);
        let mut out = Mat::zeros(x.rows, d);
        let mut inv_std = Vec::with_capacity(x.rows);
        for i in 0..x.rows {
            let r = x.row(i);
            let mean = r.iter().copied().sum::<T>() / dn;
            let var = r.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = (var + eps).sqrt().recip();
            inv_std.push(is);
            let xh = xhat.row_mut(i);
            for j in 0..d {
                xh[j] = (r[j] - mean) * is;
            }
            let o = out.row_mut(i);
            for j in 0..d {
                o[j] = xh[j] * gain[j] + bias[j];
            }
        }
        (out, NormCache { xhat, inv_std })
    }

    pub fn backward<T: Real>(&self, p: &[T], g: &mut [T], cache: &NormCache<T>, dy: &Mat<T>) -> Mat<T> {
        let d = dy.cols;
        let dn = T::of(d as f64);
        let gain = self.gain.slice(p).to_vec();
        let mut dgain = vec![T::zero(); d];
        let mut dbias = vec![T::zero(); d];
        let mut dx = Mat::zeros(dy.rows, d);
        let mut dxhat = vec![T::zero(); d];
        for i in 0..dy.rows {
            let dyr = dy.row(i);
            let xh = cache.xhat.row(i);
            for j in 0..d {
                dgain[j] += dyr[j] * xh[j];
                dbias[j] += dyr[j];
                dxhat[j] = dyr[j] * gain[j];
            }
            let sum_dxh = dxhat.iter().copied().sum::<T>();
            let sum_dxh_xh = dot(&dxhat, xh);
            let scale = cache.inv_std[i] / dn;
            let dxr = dx.row_mut(i);
            for j in 0..d {
                dxr[j] = scale * (dn * dxhat[j] - sum_dxh - xh[j] * sum_dxh_xh);
            }
        }
        axpy(T::one(), &dgain, self.gain.slice_mut(g));
        axpy(T::one(), &dbias, self.bias.slice_mut(g));
        dx
    }
}

/// Multi-head scaled dot-product attention where query row `i` sees only the
/// key rows listed in `visible[i]`. A query with no visible keys outputs the
/// output bias alone.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    q_in: Mat<T>,
    kv_in: Mat<T>,
    q: Mat<T>,
    k: Mat<T>,
    v: Mat<T>,
    /// `probs[i][h * n_i + jj]` for the `jj`-th visible key of row `i`.
    probs: Vec<Vec<T>>,
    ctx: Mat<T>,
}

impl Attention {
    pub fn forward<T: Real>(
        &self,
        p: &[T],
        q_in: &Mat<T>,
        kv_in: &Mat<T>,
        visible: &[Vec<usize>],
    ) -> (Mat<T>, AttentionCache<T>) {
        let d = self.q.w.cols;
        let dh = d / self.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let q = self.q.forward(p, q_in);
        let k = self.k.forward(p, kv_in);
        let v = self.v.forward(p, kv_in);
        let mut ctx = Mat::zeros(q_in.rows, d);
        let mut probs = Vec::with_capacity(q_in.rows);
        for (i, keys) in visible.iter().enumerate() {
            let n = keys.len();
            let mut pr = vec![T::zero(); self.heads * n];
            if n > 0 {
                for h in 0..self.heads {
                    let qs = &q.row(i)[h * dh..(h + 1) * dh];
                    let ph = &mut pr[h * n..(h + 1) * n];
                    let mut max = T::neg_infinity();
                    for (jj, &j) in keys.iter().enumerate() {
                        let s = dot(qs, &k.row(j)[h * dh..(h + 1) * dh]) * scale;
                        ph[jj] = s;
                        if s > max {
                            max = s;
                        }
                    }
                    let mut z = T::zero();
                    for s in ph.iter_mut() {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    let cr = &mut ctx.row_mut(i)[h * dh..(h + 1) * dh];
                    for (jj, &j) in keys.iter().enumerate() {
                        ph[jj] /= z;
                        axpy(ph[jj], &v.row(j)[h * dh..(h + 1) * dh], cr);
                    }
                }
            }
            probs.push(pr);
        }
        let out = self.o.forward(p, &ctx);
        (out, AttentionCache { q_in: q_in.clone(), kv_in: kv_in.clone(), q, k, v, probs, ctx })
    }

    /// Returns `(d q_in, d kv_in)`.
    pub fn backward<T: Real>(
        &self,
        p: &[T],
        g: &mut [T],
        cache: &AttentionCache<T>,
        visible: &[Vec<usize>],
        dout: &Mat<T>,
    ) -> (Mat<T>, Mat<T>) {
        let d = self.q.w.cols;
        let dh = d / self.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let dctx = self.o.backward(p, g, &cache.ctx, dout);
        let mut dq = Mat::zeros(cache.q.rows, d);
        let mut dk = Mat::zeros(cache.k.rows, d);
        let mut dv = Mat::zeros(cache.v.rows, d);
        let mut dp = Vec::new();
        for (i, keys) in visible.iter().enumerate() {
            let n = keys.len();
            if n == 0 {
                continue;
            }
            for h in 0..self.heads {
                let lo = h * dh;
                let hi = lo + dh;
                let ph = &cache.probs[i][h * n..(h + 1) * n];
                let dc = &dctx.row(i)[lo..hi];
                dp.clear();
                let mut weighted = T::zero();
                for (jj, &j) in keys.iter().enumerate() {
                    let v = dot(dc, &cache.v.row(j)[lo..hi]);
                    dp.push(v);
                    weighted += ph[jj] * v;
                    axpy(ph[jj], dc, &mut dv.row_mut(j)[lo..hi]);
                }
                for (jj, &j) in keys.iter().enumerate() {
                    let ds = ph[jj] * (dp[jj] - weighted) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    axpy(ds, &cache.k.row(j)[lo..hi], &mut dq.row_mut(i)[lo..hi]);
                    axpy(ds, &cache.q.row(i)[lo..hi], &mut dk.row_mut(j)[lo..hi]);
                }
            }
        }
        let dq_in = self.q.backward(p, g, &cache.q_in, &dq);
        let mut dkv_in = self.k.backward(p, g, &cache.kv_in, &dk);
        dkv_in.add_assign(&self.v.backward(p, g, &cache.kv_in, &dv));
        (dq_in, dkv_in)
    }
}

/// Position-wise feed-forward block with a tanh-approximated GELU.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache<T> {
    x: Mat<T>,
    pre: Mat<T>,
    hidden: Mat<T>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

fn gelu<T: Real>(x: T) -> (T, T) {
    let c = T::from_f64(GELU_C).unwrap();
    let a = T::from_f64(GELU_A).unwrap();
    let half = T::from_f64(0.5).unwrap();
    let three = T::from_f64(3.0).unwrap();
    let th = (c * (x + a * x * x * x)).tanh();
    let value = half * x * (T::one() + th);
    let slope = half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + three * a * x * x);
    (value, slope)
}

impl FeedForward {
    pub fn forward<T: Real>(&self, p: &[T], x: &Mat<T>) -> (Mat<T>, FeedForwardCache<T>) {
        let pre = self.up.forward(p, x);
        let mut hidden = pre.clone();
        for v in hidden.data.iter_mut() {
            *v = gelu(*v).0;
        }
        let out = self.down.forward(p, &hidden);
        (out, FeedForwardCache { x: x.clone(), pre, hidden })
    }

    pub fn backward<T: Real>(&self, p: &[T], g: &mut [T], cache: &FeedForwardCache<T>, dy: &Mat<T>) -> Mat<T> {
        let mut dh = self.down.backward(p, g, &cache.hidden, dy);
        for (d, &z) in dh.data.iter_mut().zip(&cache.pre.data) {
            *d *= gelu(z).1;
        }
        self.up.backward(p, g, &cache.x, &dh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(layout: &Layout, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..layout.total).map(|_| rng.gen_range(-0.8..0.8)).collect()
    }

    fn random_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
        Mat { rows, cols, data: (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect() }
    }

    /// Checks every parameter and input derivative of `loss = <w, block(x)>`
    /// against central differences.
    #[test]
    fn gelu_values_and_slope() {
        assert_eq!(gelu(0.0f64), (0.0, 0.5));
        assert!((gelu(1.0f64).0 - 0.841_191_990).abs() < 1e-8);
        assert!((gelu(-1.0f64).0 + 0.158_808_009).abs() < 1e-8);
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-5;
            let fd = (gelu(x + h).0 - gelu(x - h).0) / (2.0 * h);
            assert!((gelu(x).1 - fd).abs() < 1e-9, "x={x}");
        }
    }

    fn check_block<F>(layout: &Layout, x: Mat<f64>, weights: Mat<f64>, run: F)
    where
        F: Fn(&[f64], &Mat<f64>, Option<(&mut [f64], &Mat<f64>)>) -> (Mat<f64>, Option<Mat<f64>>),
    {
        let p = random_params(layout, 3);
        let loss = |p: &[f64], x: &Mat<f64>| dot(&run(p, x, None).0.data, &weights.data);
        let mut g = vec![0.0; layout.total];
        let (_, dx) = run(&p, &x, Some((&mut g, &weights)));
        let dx = dx.unwrap();
        let h = 1e-5;
        for i in 0..p.len() {
            let mut pp = p.clone();
            pp[i] += h;
            let mut pm = p.clone();
            pm[i] -= h;
            let fd = (loss(&pp, &x) - loss(&pm, &x)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: fd {fd} vs {}", g[i]);
        }
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (loss(&p, &xp) - loss(&p, &xm)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-6 * (1.0 + fd.abs()), "input {i}: fd {fd} vs {}", dx.data[i]);
        }
    }

    #[test]
    fn linear_gradients() {
        let mut layout = Layout::default();
        let lin = layout.linear("l", 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_mat(4, 5, &mut rng);
        let w = random_mat(4, 3, &mut rng);
        check_block(&layout, x, w, |p, x, grad| {
            let y = lin.forward(p, x);
            let dx = grad.map(|(g, dy)| lin.backward(p, g, x, dy));
            (y, dx)
        });
    }

    #[test]
    fn norm_gradients() {
        let mut layout = Layout::default();
        let n = layout.norm("n", 6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_mat(3, 6, &mut rng);
        let w = random_mat(3, 6, &mut rng);
        check_block(&layout, x, w, |p, x, grad| {
            let (y, c) = n.forward(p, x);
            let dx = grad.map(|(g, dy)| n.backward(p, g, &c, dy));
            (y, dx)
        });
    }

    #[test]
    fn ffn_gradients() {
        let mut layout = Layout::default();
        let f = FeedForward { up: layout.linear("u", 4, 7), down: layout.linear("d", 7, 4) };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_mat(3, 4, &mut rng);
        let w = random_mat(3, 4, &mut rng);
        check_block(&layout, x, w, |p, x, grad| {
            let (y, c) = f.forward(p, x);
            let dx = grad.map(|(g, dy)| f.backward(p, g, &c, dy));
            (y, dx)
        });
    }

    #[test]
    fn masked_self_attention_gradients() {
        let mut layout = Layout::default();
        let a = Attention {
            q: layout.linear("q", 6, 6),
            k: layout.linear("k", 6, 6),
            v: layout.linear("v", 6, 6),
            o: layout.linear("o", 6, 6),
            heads: 2,
        };
        let vis = vec![vec![0], vec![0, 1], vec![0, 2], vec![]];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_mat(4, 6, &mut rng);
        let w = random_mat(4, 6, &mut rng);
        check_block(&layout, x, w, |p, x, grad| {
            let (y, c) = a.forward(p, x, x, &vis);
            let dx = grad.map(|(g, dy)| {
                let (dq, dkv) = a.backward(p, g, &c, &vis, dy);
                dq.added(&dkv)
            });
            (y, dx)
        });
    }

    #[test]
    fn attention_without_keys_outputs_bias() {
        let mut layout = Layout::default();
        let a = Attention {
            q: layout.linear("q", 4, 4),
            k: layout.linear("k", 4, 4),
            v: layout.linear("v", 4, 4),
            o: layout.linear("o", 4, 4),
            heads: 1,
        };
        let p = random_params(&layout, 9);
        let q = Mat { rows: 1, cols: 4, data: vec![0.3, -0.2, 0.1, 0.5] };
        let empty = Mat::<f64>::zeros(0, 4);
        let (y, _) = a.forward(&p, &q, &empty, &[vec![]]);
        assert_eq!(y.row(0), a.o.b.slice(&p));
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..19).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..19).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }
}
