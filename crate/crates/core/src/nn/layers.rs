use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use super::Real;
use crate::error::{Error, Result};

/// Affine map `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Real> Linear<F> {
    /// Weights uniform in `±1/sqrt(fan_in)`, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((fan_in, fan_out), |_| F::of(rng.gen_range(-bound..bound))),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "linear expects {} input features, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        let mut y = x.dot(&self.w);
        y += &self.b;
        Ok(y)
    }

    /// Single-vector forward.
    pub fn forward_vec(&self, x: ArrayView1<'_, F>) -> Array1<F> {
        let mut y = x.dot(&self.w);
        y += &self.b;
        y
    }

    /// Accumulates `dW += xᵀ dy`, `db += Σ dy` into `grad` and returns `dx = dy Wᵀ`.
    pub fn backward(&self, x: ArrayView2<'_, F>, dy: ArrayView2<'_, F>, grad: &mut Linear<F>) -> Array2<F> {
        self.backward_opt(x, dy, Some(grad))
    }

    /// As [`Linear::backward`]; with `grad = None` only the input gradient is computed.
    pub fn backward_opt(&self, x: ArrayView2<'_, F>, dy: ArrayView2<'_, F>, grad: Option<&mut Linear<F>>) -> Array2<F> {
        if let Some(grad) = grad {
            general_mat_mul(F::one(), &x.t(), &dy, F::one(), &mut grad.w);
            grad.b += &dy.sum_axis(Axis(0));
        }
        dy.dot(&self.w.t())
    }

    pub fn backward_vec(&self, x: ArrayView1<'_, F>, dy: ArrayView1<'_, F>, grad: &mut Linear<F>) -> Array1<F> {
        Zip::from(grad.w.rows_mut())
            .and(&x)
            .for_each(|mut row, &xi| row.scaled_add(xi, &dy));
        grad.b += &dy;
        self.w.dot(&dy)
    }
}

/// Row-wise layer normalization with learned gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<F> {
    pub gain: Array1<F>,
    pub bias: Array1<F>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNormCache<F> {
    xhat: Array2<F>,
    inv_std: Array1<F>,
}

impl<F: Real> LayerNorm<F> {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Array1::ones(dim),
            bias: Array1::zeros(dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            gain: Array1::zeros(dim),
            bias: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, F>) -> (Array2<F>, LayerNormCache<F>) {
        let d = F::of(x.ncols() as f64);
        let eps = F::of(LAYER_NORM_EPS);
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<F>() / d;
            *inv = F::one() / (var + eps).sqrt();
            let k = *inv;
            row.mapv_inplace(|v| v * k);
        }
        let mut y = &xhat * &self.gain;
        y += &self.bias;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache<F>, dy: ArrayView2<'_, F>, grad: &mut LayerNorm<F>) -> Array2<F> {
        self.backward_opt(cache, dy, Some(grad))
    }

    pub fn backward_opt(&self, cache: &LayerNormCache<F>, dy: ArrayView2<'_, F>, grad: Option<&mut LayerNorm<F>>) -> Array2<F> {
        if let Some(grad) = grad {
            grad.gain += &(&dy * &cache.xhat).sum_axis(Axis(0));
            grad.bias += &dy.sum_axis(Axis(0));
        }
        let d = F::of(dy.ncols() as f64);
        let dxhat = &dy * &self.gain;
        let mut dx = Array2::zeros(dy.raw_dim());
        Zip::from(dx.rows_mut())
            .and(dxhat.rows())
            .and(cache.xhat.rows())
            .and(&cache.inv_std)
            .for_each(|mut out, g, xh, &inv| {
                let sum_g = g.sum();
                let sum_gx = g.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<F>();
                Zip::from(&mut out).and(&g).and(&xh).for_each(|o, &gi, &xi| {
                    *o = inv / d * (d * gi - sum_g - xi * sum_gx);
                });
            });
        dx
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exact GELU, `x Φ(x)`.
pub fn gelu<F: Real>(x: F) -> F {
    let v = x.as_f64();
    F::of(v * normal_cdf(v))
}

pub fn gelu_grad<F: Real>(x: F) -> F {
    let v = x.as_f64();
    F::of(normal_cdf(v) + v * normal_pdf(v))
}

/// Sinusoidal position table, `T x d`.
pub fn positional_encoding<F: Real>(t: usize, d: usize) -> Array2<F> {
    Array2::from_shape_fn((t, d), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
        F::of(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows<F: Real>(s: &mut Array2<F>) {
    for mut row in s.rows_mut() {
        let m = row.fold(F::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

/// Multi-head scaled dot-product self-attention with an output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<F> {
    pub heads: usize,
    pub q: Linear<F>,
    pub k: Linear<F>,
    pub v: Linear<F>,
    pub o: Linear<F>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    /// Per-head attention weights, each `T x T`.
    pub weights: Vec<Array2<F>>,
    context: Array2<F>,
}

impl<F: Real> Attention<F> {
    pub fn init(d_model: usize, heads: usize, rng: &mut impl Rng) -> Self {
        Self {
            heads,
            q: Linear::init(d_model, d_model, rng),
            k: Linear::init(d_model, d_model, rng),
            v: Linear::init(d_model, d_model, rng),
            o: Linear::init(d_model, d_model, rng),
        }
    }

    pub fn zeros(d_model: usize, heads: usize) -> Self {
        Self {
            heads,
            q: Linear::zeros(d_model, d_model),
            k: Linear::zeros(d_model, d_model),
            v: Linear::zeros(d_model, d_model),
            o: Linear::zeros(d_model, d_model),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, F>) -> Result<(Array2<F>, AttentionCache<F>)> {
        let d = self.q.out_dim();
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::Shape(format!("d_model {d} not divisible by {} heads", self.heads)));
        }
        let dh = d / self.heads;
        let scale = F::of(1.0 / (dh as f64).sqrt());
        let q = self.q.forward(x)?;
        let k = self.k.forward(x)?;
        let v = self.v.forward(x)?;
        let mut context = Array2::zeros((x.nrows(), d));
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut a);
            context.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
            weights.push(a);
        }
        let y = self.o.forward(context.view())?;
        Ok((
            y,
            AttentionCache {
                q,
                k,
                v,
                weights,
                context,
            },
        ))
    }

    pub fn backward(
        &self,
        x: ArrayView2<'_, F>,
        cache: &AttentionCache<F>,
        dy: ArrayView2<'_, F>,
        grad: &mut Attention<F>,
    ) -> Array2<F> {
        self.backward_opt(x, cache, dy, Some(grad))
    }

    pub fn backward_opt(
        &self,
        x: ArrayView2<'_, F>,
        cache: &AttentionCache<F>,
        dy: ArrayView2<'_, F>,
        mut grad: Option<&mut Attention<F>>,
    ) -> Array2<F> {
        let d = self.q.out_dim();
        let dh = d / self.heads;
        let scale = F::of(1.0 / (dh as f64).sqrt());
        let dcontext = self.o.backward_opt(cache.context.view(), dy, grad.as_deref_mut().map(|g| &mut g.o));
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, a) in cache.weights.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dc = dcontext.slice(cols);
            let da = dc.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&dc));
            let mut ds = da;
            for (mut drow, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
                let dot = drow.iter().zip(arow.iter()).map(|(&g, &p)| g * p).sum::<F>();
                Zip::from(&mut drow).and(&arow).for_each(|g, &p| *g = p * (*g - dot) * scale);
            }
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let mut dx = self.q.backward_opt(x, dq.view(), grad.as_deref_mut().map(|g| &mut g.q));
        dx += &self.k.backward_opt(x, dk.view(), grad.as_deref_mut().map(|g| &mut g.k));
        dx += &self.v.backward_opt(x, dv.view(), grad.map(|g| &mut g.v));
        dx
    }
}

/// Feature-wise modulation `γ ⊙ h + β`, with `γ, β` broadcast over rows.
pub struct Film;

impl Film {
    pub fn forward<F: Real>(h: ArrayView2<'_, F>, gamma: ArrayView1<'_, F>, beta: ArrayView1<'_, F>) -> Result<Array2<F>> {
        if gamma.len() != h.ncols() || beta.len() != h.ncols() {
            return Err(Error::Shape(format!(
                "FiLM over {} features got gamma {} / beta {}",
                h.ncols(),
                gamma.len(),
                beta.len()
            )));
        }
        let mut y = &h * &gamma;
        y += &beta;
        Ok(y)
    }

    /// Returns `(dh, dgamma, dbeta)`.
    pub fn backward<F: Real>(
        h: ArrayView2<'_, F>,
        gamma: ArrayView1<'_, F>,
        dy: ArrayView2<'_, F>,
    ) -> (Array2<F>, Array1<F>, Array1<F>) {
        let dh = &dy * &gamma;
        let dgamma = (&dy * &h).sum_axis(Axis(0));
        let dbeta = dy.sum_axis(Axis(0));
        (dh, dgamma, dbeta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::gradcheck;
    use crate::rng;
    use ndarray::Array;

    fn rand2(r: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| r.gen_range(-1.0..1.0))
    }

    #[test]
    fn linear_identity_and_zero_input() {
        let mut l = Linear::<f64>::zeros(3, 3);
        l.w = Array2::eye(3);
        let x = Array::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(l.forward(x.view()).unwrap(), x);
        l.b = Array1::from(vec![0.5, -1.0, 2.0]);
        let y = l.forward(Array2::zeros((4, 3)).view()).unwrap();
        assert!(y.rows().into_iter().all(|r| r == l.b));
        assert!(l.forward(Array2::zeros((1, 2)).view()).is_err());
    }

    #[test]
    fn linear_gradcheck() {
        for seed in 0..20 {
            let mut r = rng::stream(seed, 1);
            let x = rand2(&mut r, 3, 4);
            let mut l = Linear::<f64>::init(4, 5, &mut r);
            l.b = Array1::from_shape_fn(5, |_| r.gen_range(-1.0..1.0));
            let weights = rand2(&mut r, 3, 5);
            let w0 = l.w.clone();
            let err = gradcheck(
                |p: &[f64]| {
                    let mut l = l.clone();
                    l.w = Array2::from_shape_vec((4, 5), p.to_vec()).unwrap();
                    let y = l.forward(x.view()).unwrap();
                    let loss = (&y * &weights).sum();
                    let mut g = Linear::zeros(4, 5);
                    l.backward(x.view(), weights.view(), &mut g);
                    (loss, g.w.iter().copied().collect())
                },
                w0.as_slice().unwrap(),
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn layer_norm_statistics() {
        let ln = LayerNorm::<f64>::new(6);
        let mut r = rng::stream(5, 1);
        let x = rand2(&mut r, 4, 6) * 20.0;
        let (y, _) = ln.forward(x.view());
        for row in y.rows() {
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6);
        }
        let mut ln2 = LayerNorm::<f64>::new(3);
        ln2.bias = Array1::from(vec![0.1, 0.2, 0.3]);
        let (y, _) = ln2.forward(Array2::from_elem((2, 3), 4.0).view());
        assert!(y.rows().into_iter().all(|r| r == ln2.bias));
    }

    #[test]
    fn layer_norm_gradcheck() {
        for seed in 0..20 {
            let mut r = rng::stream(seed, 2);
            let x = rand2(&mut r, 3, 5);
            let mut ln = LayerNorm::<f64>::new(5);
            ln.gain = Array1::from_shape_fn(5, |_| r.gen_range(0.5..1.5));
            ln.bias = Array1::from_shape_fn(5, |_| r.gen_range(-0.5..0.5));
            let w = rand2(&mut r, 3, 5);
            let err = gradcheck(
                |p: &[f64]| {
                    let x = Array2::from_shape_vec((3, 5), p.to_vec()).unwrap();
                    let (y, cache) = ln.forward(x.view());
                    let mut g = LayerNorm::zeros(5);
                    let dx = ln.backward(&cache, w.view(), &mut g);
                    ((&y * &w).sum(), dx.iter().copied().collect())
                },
                x.as_slice().unwrap(),
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn gelu_matches_reference_values() {
        assert!((gelu(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert_eq!(gelu(0.0f64), 0.0);
        let h = 1e-6;
        for &x in &[-2.0f64, -0.3, 0.0, 0.7, 3.0] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn attention_single_frame_is_value_projection() {
        let mut r = rng::stream(1, 3);
        let att = Attention::<f64>::init(8, 2, &mut r);
        let x = rand2(&mut r, 1, 8);
        let (y, cache) = att.forward(x.view()).unwrap();
        assert!(cache.weights.iter().all(|a| (a[[0, 0]] - 1.0).abs() < 1e-15));
        let expect = att.o.forward(att.v.forward(x.view()).unwrap().view()).unwrap();
        assert!((&y - &expect).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut r = rng::stream(2, 3);
        let att = Attention::<f64>::init(8, 4, &mut r);
        let (_, cache) = att.forward(rand2(&mut r, 6, 8).view()).unwrap();
        for a in &cache.weights {
            for row in a.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
        assert!(Attention::<f64>::init(6, 4, &mut r).forward(rand2(&mut r, 2, 6).view()).is_err());
    }

    #[test]
    fn attention_gradcheck() {
        for seed in 0..20 {
            let mut r = rng::stream(seed, 4);
            let att = Attention::<f64>::init(8, 2, &mut r);
            let x = rand2(&mut r, 3, 8);
            let w = rand2(&mut r, 3, 8);
            let err = gradcheck(
                |p: &[f64]| {
                    let x = Array2::from_shape_vec((3, 8), p.to_vec()).unwrap();
                    let (y, cache) = att.forward(x.view()).unwrap();
                    let mut g = Attention::zeros(8, 2);
                    let dx = att.backward(x.view(), &cache, w.view(), &mut g);
                    ((&y * &w).sum(), dx.iter().copied().collect())
                },
                x.as_slice().unwrap(),
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn film_identity_and_zero_gamma() {
        let mut r = rng::stream(3, 5);
        let h = rand2(&mut r, 4, 6);
        let ones = Array1::ones(6);
        let zeros = Array1::zeros(6);
        assert_eq!(Film::forward(h.view(), ones.view(), zeros.view()).unwrap(), h);
        let beta = Array1::from_shape_fn(6, |i| i as f64);
        let y = Film::forward(h.view(), zeros.view(), beta.view()).unwrap();
        assert!(y.rows().into_iter().all(|row| row == beta));
        assert!(Film::forward(h.view(), Array1::ones(5).view(), zeros.view()).is_err());
    }

    #[test]
    fn film_gradcheck() {
        for seed in 0..20 {
            let mut r = rng::stream(seed, 6);
            let (t, d) = (3, 4);
            let point: Vec<f64> = (0..t * d + 2 * d).map(|_| r.gen_range(-1.0..1.0)).collect();
            let w = rand2(&mut r, t, d);
            let err = gradcheck(
                |p: &[f64]| {
                    let h = Array2::from_shape_vec((t, d), p[..t * d].to_vec()).unwrap();
                    let g = Array1::from(p[t * d..t * d + d].to_vec());
                    let b = Array1::from(p[t * d + d..].to_vec());
                    let y = Film::forward(h.view(), g.view(), b.view()).unwrap();
                    let (dh, dg, db) = Film::backward(h.view(), g.view(), w.view());
                    let grad = dh.iter().chain(dg.iter()).chain(db.iter()).copied().collect();
                    ((&y * &w).sum(), grad)
                },
                &point,
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }
}
