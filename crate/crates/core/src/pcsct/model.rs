//! The conditioning encoder and the FiLM-conditioned Pre-LN transformer head.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::nn::layers::{gelu_grad, AttentionCache, LayerNormCache};
use crate::nn::{gelu, positional_encoding, Attention, Film, LayerNorm, Linear, ParamSet, Real, Tensor};
use crate::perturb::{vectorize, PerturbationSpec, PARAM_VECTOR_LEN};
use crate::rng;

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcsctConfig {
    pub input_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub layers: usize,
    pub output_dim: usize,
    pub cond_dim: usize,
    pub ppe_hidden: usize,
}

impl Default for PcsctConfig {
    fn default() -> Self {
        Self {
            input_dim: 768,
            d_model: 256,
            heads: 4,
            ffn_dim: 1024,
            layers: 4,
            output_dim: 128,
            cond_dim: 64,
            ppe_hidden: 64,
        }
    }
}

impl PcsctConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.input_dim,
            self.d_model,
            self.heads,
            self.ffn_dim,
            self.layers,
            self.output_dim,
            self.cond_dim,
            self.ppe_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::invalid("model", "all dimensions must be positive"));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::invalid(
                "model.heads",
                format!("d_model {} not divisible by {} heads", self.d_model, self.heads),
            ));
        }
        Ok(())
    }

    fn as_tensor(&self) -> Vec<usize> {
        vec![
            self.input_dim,
            self.d_model,
            self.heads,
            self.ffn_dim,
            self.layers,
            self.output_dim,
            self.cond_dim,
            self.ppe_hidden,
        ]
    }
}

/// The 64-dimensional conditioning vector produced by the conditioning encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningVector<F>(pub Array1<F>);

impl<F: Real> ConditioningVector<F> {
    pub fn values(&self) -> ArrayView1<'_, F> {
        self.0.view()
    }
}

/// Forward intermediates of the conditioning encoder.
#[derive(Debug, Clone)]
pub struct PpeCache<F> {
    input: Array1<F>,
    pre: Array1<F>,
    hidden: Array1<F>,
}

/// One Pre-LN transformer layer with FiLM on the feed-forward branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<F> {
    pub ln_attn: LayerNorm<F>,
    pub attn: Attention<F>,
    pub ln_ffn: LayerNorm<F>,
    pub ffn_in: Linear<F>,
    pub ffn_out: Linear<F>,
    /// Maps the conditioning vector to `γ ‖ β`.
    pub film: Linear<F>,
}

#[derive(Debug, Clone)]
struct BlockCache<F> {
    ln_attn: LayerNormCache<F>,
    a: Array2<F>,
    attn: AttentionCache<F>,
    ln_ffn: LayerNormCache<F>,
    b: Array2<F>,
    pre_act: Array2<F>,
    act: Array2<F>,
    h: Array2<F>,
    gamma: Array1<F>,
}

/// Forward intermediates for one sequence.
#[derive(Debug, Clone)]
pub struct SequenceCache<F> {
    input: Array2<F>,
    cond: Array1<F>,
    blocks: Vec<BlockCache<F>>,
    last: Array2<F>,
}

impl<F> SequenceCache<F> {
    pub fn frames(&self) -> usize {
        self.input.nrows()
    }
}

/// All learnable parameters of the projection head and conditioning encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PcsctModel<F> {
    pub config: PcsctConfig,
    pub ppe_in: Linear<F>,
    pub ppe_out: Linear<F>,
    pub input: Linear<F>,
    pub blocks: Vec<Block<F>>,
    pub output: Linear<F>,
}

fn check_finite<F: Real>(x: &Array2<F>, stage: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("activations after {stage}")))
    }
}

impl<F: Real> PcsctModel<F> {
    /// Fresh parameters: uniform `±1/sqrt(fan_in)` weights, zero biases,
    /// unit layer-norm gains and FiLM generators that output `γ = 1, β = 0`.
    pub fn init(config: PcsctConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, rng::tag("pcsct_init"));
        let d = config.d_model;
        let blocks = (0..config.layers)
            .map(|_| {
                let mut film = Linear::zeros(config.cond_dim, 2 * d);
                film.b.slice_mut(s![..d]).fill(F::one());
                Block {
                    ln_attn: LayerNorm::new(d),
                    attn: Attention::init(d, config.heads, &mut r),
                    ln_ffn: LayerNorm::new(d),
                    ffn_in: Linear::init(d, config.ffn_dim, &mut r),
                    ffn_out: Linear::init(config.ffn_dim, d, &mut r),
                    film,
                }
            })
            .collect();
        Ok(Self {
            config,
            ppe_in: Linear::init(PARAM_VECTOR_LEN, config.ppe_hidden, &mut r),
            ppe_out: Linear::init(config.ppe_hidden, config.cond_dim, &mut r),
            input: Linear::init(config.input_dim, d, &mut r),
            blocks,
            output: Linear::init(d, config.output_dim, &mut r),
        })
    }

    /// Adds uniform `±scale` jitter to every parameter (used to move away from
    /// the identity-modulation starting point in gradient checks).
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut r = rng::stream(seed, rng::tag("randomize"));
        for (_, mut p) in self.params_mut() {
            p.mapv_inplace(|v| v + F::of(r.gen_range(-scale..scale)));
        }
    }

    pub fn cast<G: Real>(&self) -> PcsctModel<G> {
        let mut out = PcsctModel::<G>::init(self.config, 0).expect("config already validated");
        for ((_, mut dst), (_, src)) in out.params_mut().into_iter().zip(self.params()) {
            dst.zip_mut_with(&src, |d, s| *d = G::of(s.as_f64()));
        }
        out
    }

    /// Conditioning encoder: `Linear → ReLU → Linear`.
    pub fn ppe_forward(&self, params: &[f64]) -> Result<(ConditioningVector<F>, PpeCache<F>)> {
        if params.len() != PARAM_VECTOR_LEN {
            return Err(Error::Shape(format!(
                "conditioning encoder expects {PARAM_VECTOR_LEN} inputs, got {}",
                params.len()
            )));
        }
        let input = Array1::from_iter(params.iter().map(|&v| F::of(v)));
        let pre = self.ppe_in.forward_vec(input.view());
        let hidden = pre.mapv(|v| v.max(F::zero()));
        let c = self.ppe_out.forward_vec(hidden.view());
        Ok((ConditioningVector(c), PpeCache { input, pre, hidden }))
    }

    pub fn ppe_backward(&self, cache: &PpeCache<F>, dc: ArrayView1<'_, F>, grad: &mut Self) {
        let dh = self.ppe_out.backward_vec(cache.hidden.view(), dc, &mut grad.ppe_out);
        let dpre = ndarray::Zip::from(&dh)
            .and(&cache.pre)
            .map_collect(|&g, &p| if p > F::zero() { g } else { F::zero() });
        self.ppe_in.backward_vec(cache.input.view(), dpre.view(), &mut grad.ppe_in);
    }

    /// Conditioning for a known perturbation.
    pub fn condition(&self, spec: &PerturbationSpec) -> ConditioningVector<F> {
        self.ppe_forward(&vectorize(spec)).expect("fixed length").0
    }

    /// Conditioning for an unknown perturbation: the encoder applied to the zero vector.
    pub fn null_condition(&self) -> ConditioningVector<F> {
        self.ppe_forward(&[0.0; PARAM_VECTOR_LEN]).expect("fixed length").0
    }

    fn film_params(&self, block: &Block<F>, c: ArrayView1<'_, F>) -> (Array1<F>, Array1<F>) {
        let d = self.config.d_model;
        let gb = block.film.forward_vec(c);
        (gb.slice(s![..d]).to_owned(), gb.slice(s![d..]).to_owned())
    }

    /// Runs one `T x input_dim` sequence to `T x output_dim`.
    pub fn forward_sequence(
        &self,
        e: ArrayView2<'_, F>,
        c: &ConditioningVector<F>,
    ) -> Result<(Array2<F>, SequenceCache<F>)> {
        if e.nrows() == 0 {
            return Err(Error::invalid("embeddings", "sequence has no frames"));
        }
        if e.ncols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "model expects {}-dimensional input frames, got {}",
                self.config.input_dim,
                e.ncols()
            )));
        }
        if c.0.len() != self.config.cond_dim {
            return Err(Error::Shape(format!(
                "conditioning vector has {} entries, expected {}",
                c.0.len(),
                self.config.cond_dim
            )));
        }
        let mut x = self.input.forward(e)?;
        x += &positional_encoding::<F>(e.nrows(), self.config.d_model);
        check_finite(&x, "input projection")?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (l, block) in self.blocks.iter().enumerate() {
            let (a, ln_attn) = block.ln_attn.forward(x.view());
            let (att, attn) = block.attn.forward(a.view())?;
            let x_mid = &x + &att;
            let (b, ln_ffn) = block.ln_ffn.forward(x_mid.view());
            let pre_act = block.ffn_in.forward(b.view())?;
            let act = pre_act.mapv(gelu);
            let h = block.ffn_out.forward(act.view())?;
            let (gamma, beta) = self.film_params(block, c.values());
            let x_out = &x_mid + &Film::forward(h.view(), gamma.view(), beta.view())?;
            check_finite(&x_out, &format!("layer {}", l + 1))?;
            caches.push(BlockCache {
                ln_attn,
                a,
                attn,
                ln_ffn,
                b,
                pre_act,
                act,
                h,
                gamma,
            });
            x = x_out;
        }
        let z = self.output.forward(x.view())?;
        check_finite(&z, "output projection")?;
        Ok((
            z,
            SequenceCache {
                input: e.to_owned(),
                cond: c.0.clone(),
                blocks: caches,
                last: x,
            },
        ))
    }

    /// Backward pass for one sequence. Parameter gradients are accumulated
    /// into `grad` when given. Returns the gradients with respect to the
    /// conditioning vector and to the input sequence.
    pub fn backward_sequence(
        &self,
        cache: &SequenceCache<F>,
        dz: ArrayView2<'_, F>,
        mut grad: Option<&mut Self>,
    ) -> (Array1<F>, Array2<F>) {
        let d = self.config.d_model;
        let mut dx = self
            .output
            .backward_opt(cache.last.view(), dz, grad.as_deref_mut().map(|g| &mut g.output));
        let mut dc = Array1::zeros(self.config.cond_dim);
        for (l, (block, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let mut gb = grad.as_deref_mut().map(|g| &mut g.blocks[l]);
            let (dh, dgamma, dbeta) = Film::backward(bc.h.view(), bc.gamma.view(), dx.view());
            let mut dfilm = Array1::zeros(2 * d);
            dfilm.slice_mut(s![..d]).assign(&dgamma);
            dfilm.slice_mut(s![d..]).assign(&dbeta);
            if let Some(g) = gb.as_deref_mut() {
                dc += &block.film.backward_vec(cache.cond.view(), dfilm.view(), &mut g.film);
            } else {
                dc += &block.film.w.dot(&dfilm);
            }
            let dact = block
                .ffn_out
                .backward_opt(bc.act.view(), dh.view(), gb.as_deref_mut().map(|g| &mut g.ffn_out));
            let dpre = ndarray::Zip::from(&dact)
                .and(&bc.pre_act)
                .map_collect(|&g, &u| g * gelu_grad(u));
            let db = block
                .ffn_in
                .backward_opt(bc.b.view(), dpre.view(), gb.as_deref_mut().map(|g| &mut g.ffn_in));
            let mut dmid = dx;
            dmid += &block
                .ln_ffn
                .backward_opt(&bc.ln_ffn, db.view(), gb.as_deref_mut().map(|g| &mut g.ln_ffn));
            let da = block
                .attn
                .backward_opt(bc.a.view(), &bc.attn, dmid.view(), gb.as_deref_mut().map(|g| &mut g.attn));
            let mut din = dmid;
            din += &block
                .ln_attn
                .backward_opt(&bc.ln_attn, da.view(), gb.map(|g| &mut g.ln_attn));
            dx = din;
        }
        let de = self
            .input
            .backward_opt(cache.input.view(), dx.view(), grad.map(|g| &mut g.input));
        (dc, de)
    }

    /// Projects an embedding sequence under the given conditioning.
    pub fn project(&self, e: &EmbeddingSequence, c: &ConditioningVector<F>) -> Result<EmbeddingSequence> {
        let input = e.data().mapv(|v| F::of(v as f64));
        let (z, _) = self.forward_sequence(input.view(), c)?;
        EmbeddingSequence::new(z.mapv(|v| v.as_f64() as f32), e.frame_rate_hz())
    }

    /// Checkpoint tensors, including a `meta.config` entry describing the architecture.
    pub fn to_checkpoint(&self) -> Vec<Tensor<F>> {
        let cfg = self.config.as_tensor();
        let mut out = vec![Tensor::new(
            "meta.config",
            vec![cfg.len()],
            cfg.iter().map(|&v| F::of(v as f64)).collect(),
        )
        .expect("consistent")];
        out.extend(self.to_tensors());
        out
    }

    pub fn from_checkpoint(tensors: &[Tensor<F>]) -> Result<Self> {
        let meta = tensors
            .iter()
            .find(|t| t.name == "meta.config")
            .ok_or_else(|| Error::Format("checkpoint lacks meta.config".into()))?;
        if meta.values.len() != 8 {
            return Err(Error::Format("meta.config must hold 8 entries".into()));
        }
        let v: Vec<usize> = meta.values.iter().map(|x| x.as_f64().round() as usize).collect();
        let config = PcsctConfig {
            input_dim: v[0],
            d_model: v[1],
            heads: v[2],
            ffn_dim: v[3],
            layers: v[4],
            output_dim: v[5],
            cond_dim: v[6],
            ppe_hidden: v[7],
        };
        let mut model = Self::init(config, 0)?;
        model.load_tensors(tensors)?;
        Ok(model)
    }

    /// Pooled (time-mean) output for a sequence.
    pub fn pooled(z: &Array2<F>) -> Array1<F> {
        z.mean_axis(Axis(0)).expect("non-empty")
    }
}

fn linear_params<'a, F>(prefix: &str, l: &'a Linear<F>, out: &mut Vec<(String, ArrayViewD<'a, F>)>) {
    out.push((format!("{prefix}.w"), l.w.view().into_dyn()));
    out.push((format!("{prefix}.b"), l.b.view().into_dyn()));
}

fn linear_params_mut<'a, F>(prefix: &str, l: &'a mut Linear<F>, out: &mut Vec<(String, ArrayViewMutD<'a, F>)>) {
    out.push((format!("{prefix}.w"), l.w.view_mut().into_dyn()));
    out.push((format!("{prefix}.b"), l.b.view_mut().into_dyn()));
}

impl<F: Real> ParamSet<F> for PcsctModel<F> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut out = Vec::new();
        linear_params("ppe.in", &self.ppe_in, &mut out);
        linear_params("ppe.out", &self.ppe_out, &mut out);
        linear_params("input", &self.input, &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{i}");
            out.push((format!("{p}.ln_attn.gain"), b.ln_attn.gain.view().into_dyn()));
            out.push((format!("{p}.ln_attn.bias"), b.ln_attn.bias.view().into_dyn()));
            linear_params(&format!("{p}.attn.q"), &b.attn.q, &mut out);
            // The key bias is left out: softmax over keys is invariant to it, so its gradient is identically zero.
            out.push((format!("{p}.attn.k.w"), b.attn.k.w.view().into_dyn()));
            linear_params(&format!("{p}.attn.v"), &b.attn.v, &mut out);
            linear_params(&format!("{p}.attn.o"), &b.attn.o, &mut out);
            out.push((format!("{p}.ln_ffn.gain"), b.ln_ffn.gain.view().into_dyn()));
            out.push((format!("{p}.ln_ffn.bias"), b.ln_ffn.bias.view().into_dyn()));
            linear_params(&format!("{p}.ffn.in"), &b.ffn_in, &mut out);
            linear_params(&format!("{p}.ffn.out"), &b.ffn_out, &mut out);
            linear_params(&format!("{p}.film"), &b.film, &mut out);
        }
        linear_params("output", &self.output, &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut out = Vec::new();
        linear_params_mut("ppe.in", &mut self.ppe_in, &mut out);
        linear_params_mut("ppe.out", &mut self.ppe_out, &mut out);
        linear_params_mut("input", &mut self.input, &mut out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = format!("blocks.{i}");
            out.push((format!("{p}.ln_attn.gain"), b.ln_attn.gain.view_mut().into_dyn()));
            out.push((format!("{p}.ln_attn.bias"), b.ln_attn.bias.view_mut().into_dyn()));
            linear_params_mut(&format!("{p}.attn.q"), &mut b.attn.q, &mut out);
            out.push((format!("{p}.attn.k.w"), b.attn.k.w.view_mut().into_dyn()));
            linear_params_mut(&format!("{p}.attn.v"), &mut b.attn.v, &mut out);
            linear_params_mut(&format!("{p}.attn.o"), &mut b.attn.o, &mut out);
            out.push((format!("{p}.ln_ffn.gain"), b.ln_ffn.gain.view_mut().into_dyn()));
            out.push((format!("{p}.ln_ffn.bias"), b.ln_ffn.bias.view_mut().into_dyn()));
            linear_params_mut(&format!("{p}.ffn.in"), &mut b.ffn_in, &mut out);
            linear_params_mut(&format!("{p}.ffn.out"), &mut b.ffn_out, &mut out);
            linear_params_mut(&format!("{p}.film"), &mut b.film, &mut out);
        }
        linear_params_mut("output", &mut self.output, &mut out);
        out
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill_zero();
        z
    }
}
