//! Attribute-guided attention network.
//!
//! Per sample, `r` region features pass through a variational encoder whose
//! KL divergence to a standard normal bounds the information kept. Bounded
//! regions are densely fused with projected attribute embeddings
//! (`fv = F″·V′ᵀ`, `r × A`). First-level attention combines a softmax over
//! regions (`PI`) with the strongest attribute probability of each region's
//! own attribute softmax (`H_t`), weighting regions by `α = λ_α·PI·H_t`.
//! Second-level attention re-fuses the result, scales every column by the
//! class attribute scores `a`, and weights regions again by a softmax. The
//! embedding `f_s` is the region mean; `h_2` maps it to `C^s + C^t` logits.
//!
//! All forward functions work on batches laid out as `[B·r, ·]` matrices,
//! sample-major, so region `i` of sample `b` is row `b·r + i`.

use crate::data::{AttributeSemantics, ClassSemantics, SynthSpec};
use crate::error::{shape_err, Error, Result};
use crate::numcore::graph::sigmoid;
use crate::numcore::{softmax_axis, uniform, Graph, ParamId, ParamSet, Rng, Tensor, Var};
use crate::pmi::SoftTargets;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct AganConfig {
    /// Bounded feature width `m` (also the attribute projection width).
    pub bounded_dim: usize,
    /// Hidden width of the region encoder; defaults to the raw feature width.
    pub encoder_hidden: Option<usize>,
    /// Hidden width of the attribute projector; defaults to twice the attribute embedding width.
    pub projector_hidden: Option<usize>,
    /// Hidden width of both region-attention networks and of every per-region
    /// attribute-attention group; defaults to the attribute count.
    pub attention_hidden: Option<usize>,
    pub classifier_hidden: usize,
    pub lambda_alpha: f64,
    pub lambda_p: f64,
    pub lambda_m1: f64,
    pub gamma: f64,
    pub beta_kl: f64,
}

impl Default for AganConfig {
    fn default() -> Self {
        Self {
            bounded_dim: 16,
            encoder_hidden: None,
            projector_hidden: None,
            attention_hidden: None,
            classifier_hidden: 32,
            lambda_alpha: 10.0,
            lambda_p: 0.2,
            lambda_m1: 0.1,
            gamma: 0.05,
            beta_kl: 10.0,
        }
    }
}

impl AganConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bounded_dim == 0 || self.classifier_hidden == 0 {
            return Err(Error::Config("AGAN widths must be positive".into()));
        }
        if [self.encoder_hidden, self.projector_hidden, self.attention_hidden].contains(&Some(0)) {
            return Err(Error::Config("AGAN hidden widths must be positive".into()));
        }
        if !(self.lambda_alpha >= 0.0) || !self.lambda_alpha.is_finite() {
            return Err(Error::Config("lambda_alpha must be finite and >= 0".into()));
        }
        if !(self.gamma >= 0.0) || !(self.beta_kl >= 0.0) || !(self.lambda_p >= 0.0) || !(self.lambda_m1 >= 0.0) {
            return Err(Error::Config("gamma, beta_kl and loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Problem sizes a model is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemDims {
    pub regions: usize,
    pub raw_dim: usize,
    pub n_attributes: usize,
    pub attr_dim: usize,
    pub n_source: usize,
    pub n_target: usize,
}

impl ProblemDims {
    pub fn n_classes(&self) -> usize {
        self.n_source + self.n_target
    }

    pub fn from_synth(spec: &SynthSpec) -> Self {
        Self {
            regions: spec.regions,
            raw_dim: spec.dim,
            n_attributes: spec.n_attributes,
            attr_dim: spec.attr_dim,
            n_source: spec.n_source,
            n_target: spec.n_target,
        }
    }

    pub fn of<T: Scalar>(data: &crate::data::Dataset<T>) -> Self {
        Self {
            regions: data.features.regions(),
            raw_dim: data.features.dim(),
            n_attributes: data.class_sem.n_attributes(),
            attr_dim: data.attr_sem.dim(),
            n_source: data.class_sem.n_source(),
            n_target: data.class_sem.n_target(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct AganIds {
    enc_w1: ParamId,
    enc_b1: ParamId,
    enc_w_mu: ParamId,
    enc_b_mu: ParamId,
    enc_w_lv: ParamId,
    enc_b_lv: ParamId,
    proj_w1: ParamId,
    proj_b1: ParamId,
    proj_w2: ParamId,
    proj_b2: ParamId,
    att1_w_b: ParamId,
    att1_w_a: ParamId,
    group_w_ta: ParamId,
    group_w_tb: ParamId,
    att2_w_b: ParamId,
    att2_w_a: ParamId,
    cls_w1: ParamId,
    cls_b1: ParamId,
    cls_w2: ParamId,
    cls_b2: ParamId,
}

/// All learnable parameters of the embedding network.
#[derive(Debug)]
pub struct AganModel<T = f64> {
    pub dims: ProblemDims,
    pub config: AganConfig,
    pub params: ParamSet<T>,
    ids: AganIds,
}

impl<T: Scalar> Clone for AganModel<T> {
    fn clone(&self) -> Self {
        Self {
            dims: self.dims,
            config: self.config.clone(),
            params: self.params.clone(),
            ids: self.ids,
        }
    }
}

impl<T: Scalar> PartialEq for AganModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.config == other.config && self.params == other.params
    }
}

/// Uniform in `±1/√fan_in`.
pub(crate) fn init_weight<T: Scalar>(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = T::lit(1.0 / (fan_in as f64).sqrt());
    uniform(rng, shape.to_vec(), -bound, bound)
}

/// Which parameter set a forward pass differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grad {
    Trainable,
    Frozen,
}

/// First-level attention results, all on the graph.
#[derive(Debug, Clone)]
pub struct FirstLevel {
    pub fv: Var,
    pub pi: Var,
    pub t: Var,
    pub h_t: Var,
    pub t_argmax: Vec<usize>,
    pub alpha: Var,
    pub f1: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct SecondLevel {
    pub fv2: Var,
    pub fv2_weighted: Var,
    pub alpha2: Var,
    pub f2: Var,
}

#[derive(Debug, Clone)]
pub struct AganForward {
    pub batch: usize,
    pub bounded: Var,
    pub kl: Var,
    pub attributes: Var,
    pub first: FirstLevel,
    pub second: Option<SecondLevel>,
    pub embedding: Var,
    pub logits: Var,
}

/// Scalar loss nodes of one AGAN update.
#[derive(Debug, Clone, Copy)]
pub struct AganLosses {
    pub ce: Var,
    pub u: Option<Var>,
    pub m1: Option<Var>,
    pub kl_mean: Var,
    pub kl_term: Var,
    pub total: Var,
}

/// Switches that remove terms from the objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AganAblation {
    pub disable_l_u: bool,
    pub disable_l_m1: bool,
    pub one_step_attention_only: bool,
}

impl<T: Scalar> AganModel<T> {
    pub fn new(dims: ProblemDims, config: AganConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let ProblemDims {
            regions: r,
            raw_dim: d,
            n_attributes: a,
            attr_dim: g,
            ..
        } = dims;
        let m = config.bounded_dim;
        let he = config.encoder_hidden.unwrap_or(d);
        let hq = config.projector_hidden.unwrap_or(2 * g);
        let hk = config.attention_hidden.unwrap_or(a);
        let hc = config.classifier_hidden;
        let c = dims.n_classes();

        let mut ps = ParamSet::new();
        let mut add = |name: &str, shape: &[usize], fan_in: usize| ps.add(name, init_weight(rng, shape, fan_in));
        let ids = AganIds {
            enc_w1: add("enc.w1", &[d, he], d),
            enc_b1: add("enc.b1", &[he], d),
            enc_w_mu: add("enc.w_mu", &[he, m], he),
            enc_b_mu: add("enc.b_mu", &[m], he),
            enc_w_lv: add("enc.w_lv", &[he, m], he),
            enc_b_lv: add("enc.b_lv", &[m], he),
            proj_w1: add("proj.w1", &[g, hq], g),
            proj_b1: add("proj.b1", &[hq], g),
            proj_w2: add("proj.w2", &[hq, m], hq),
            proj_b2: add("proj.b2", &[m], hq),
            att1_w_b: add("att1.w_b", &[a, hk], a),
            att1_w_a: add("att1.w_a", &[hk, 1], hk),
            group_w_ta: add("group.w_ta", &[r, a, hk], a),
            group_w_tb: add("group.w_tb", &[r, hk, a], hk),
            att2_w_b: add("att2.w_b", &[a, hk], a),
            att2_w_a: add("att2.w_a", &[hk, 1], hk),
            cls_w1: add("cls.w1", &[m, hc], m),
            cls_b1: add("cls.b1", &[hc], m),
            cls_w2: add("cls.w2", &[hc, c], hc),
            cls_b2: add("cls.b2", &[c], hc),
        };
        Ok(Self {
            dims,
            config,
            params: ps,
            ids,
        })
    }

    pub fn bounded_dim(&self) -> usize {
        self.config.bounded_dim
    }

    fn p(&self, g: &mut Graph<T>, id: ParamId, mode: Grad) -> Result<Var> {
        match mode {
            Grad::Trainable => g.param(&self.params, id),
            Grad::Frozen => g.constant(self.params.get(id).clone()),
        }
    }

    fn affine(&self, g: &mut Graph<T>, x: Var, w: ParamId, b: ParamId, mode: Grad) -> Result<Var> {
        let wv = self.p(g, w, mode)?;
        let bv = self.p(g, b, mode)?;
        let y = g.matmul(x, wv)?;
        g.add_row(y, bv)
    }

    /// Replaces the grouped attribute-attention weights, `[r, A, h]` and `[r, h, A]`.
    pub fn set_group_weights(&mut self, w_ta: Tensor<T>, w_tb: Tensor<T>) -> Result<()> {
        self.replace(self.ids.group_w_ta, w_ta)?;
        self.replace(self.ids.group_w_tb, w_tb)
    }

    /// Replaces the second-level region-attention weights, `[A, h]` and `[h, 1]`.
    pub fn set_second_attention(&mut self, w_b: Tensor<T>, w_a: Tensor<T>) -> Result<()> {
        self.replace(self.ids.att2_w_b, w_b)?;
        self.replace(self.ids.att2_w_a, w_a)
    }

    fn replace(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let slot = self.params.get_mut(id);
        if slot.shape() != value.shape() {
            return Err(shape_err!("expected {:?}, got {:?}", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }

    /// Names of the first-level attention parameters (`K` and the grouped `T_i`).
    pub fn first_attention_params(&self) -> [ParamId; 4] {
        [self.ids.att1_w_b, self.ids.att1_w_a, self.ids.group_w_ta, self.ids.group_w_tb]
    }

    /// Variational bottleneck on raw regions `[B·r, d]`.
    ///
    /// With `noise` (train mode) the output is `μ + σ⊙ε′`; without it, `μ`.
    /// Returns the bounded features and the per-sample mean-over-regions KL
    /// to `N(0, I)`, shape `[B]`.
    pub fn bound_features(&self, g: &mut Graph<T>, raw: Var, noise: Option<&Tensor<T>>) -> Result<(Var, Var)> {
        let ids = self.ids;
        let rows = g.shape(raw)[0];
        let r = self.dims.regions;
        if !rows.is_multiple_of(r) {
            return Err(shape_err!("{rows} region rows is not a multiple of r={r}"));
        }
        let h = self.affine(g, raw, ids.enc_w1, ids.enc_b1, Grad::Trainable)?;
        let h = g.relu(h)?;
        let mu = self.affine(g, h, ids.enc_w_mu, ids.enc_b_mu, Grad::Trainable)?;
        let logvar = self.affine(g, h, ids.enc_w_lv, ids.enc_b_lv, Grad::Trainable)?;
        let (kl, _) = gaussian_kl(g, mu, logvar, r)?;
        let out = match noise {
            Some(eps) => {
                let half = g.scale(logvar, T::lit(0.5))?;
                let sigma = g.exp(half)?;
                let e = g.constant(eps.clone())?;
                let jitter = g.mul(sigma, e)?;
                g.add(mu, jitter)?
            }
            None => mu,
        };
        Ok((out, kl))
    }

    /// Projects attribute embeddings `[A, g]` to `V′ [A, m]`.
    pub fn project_attributes(&self, g: &mut Graph<T>, attr: &AttributeSemantics<T>) -> Result<Var> {
        let ids = self.ids;
        let v = g.constant(attr.vectors.clone())?;
        let h = self.affine(g, v, ids.proj_w1, ids.proj_b1, Grad::Trainable)?;
        let h = g.relu(h)?;
        self.affine(g, h, ids.proj_w2, ids.proj_b2, Grad::Trainable)
    }

    /// Softmax over the `r` regions of each sample of `tanh(x·W_B)·W_A`; returns `[B·r]`.
    fn region_attention(&self, g: &mut Graph<T>, x: Var, w_b: ParamId, w_a: ParamId) -> Result<Var> {
        let rows = g.shape(x)[0];
        let r = self.dims.regions;
        let wb = g.param(&self.params, w_b)?;
        let wa = g.param(&self.params, w_a)?;
        let h = g.matmul(x, wb)?;
        let h = g.tanh(h)?;
        let score = g.matmul(h, wa)?;
        let score = g.reshape(score, [rows / r, r])?;
        let p = g.softmax(score, 1)?;
        g.reshape(p, [rows])
    }

    /// Per-region attribute softmax from `fv [B·r, A]` using `r` independent
    /// two-layer networks evaluated as one grouped block.
    pub fn grouped_attention(&self, g: &mut Graph<T>, fv: Var) -> Result<Var> {
        let wta = g.param(&self.params, self.ids.group_w_ta)?;
        let wtb = g.param(&self.params, self.ids.group_w_tb)?;
        let h = g.grouped_linear(fv, wta)?;
        let h = g.tanh(h)?;
        let logits = g.grouped_linear(h, wtb)?;
        g.softmax(logits, 1)
    }

    pub fn fuse_and_attend_one(&self, g: &mut Graph<T>, bounded: Var, attrs: Var) -> Result<FirstLevel> {
        let (_, m) = g.value(bounded).dims2()?;
        let (_, n) = g.value(attrs).dims2()?;
        if m != n {
            return Err(shape_err!("bounded width {m} differs from attribute projection width {n}"));
        }
        let vt = g.transpose(attrs)?;
        let fv = g.matmul(bounded, vt)?;
        let pi = self.region_attention(g, fv, self.ids.att1_w_b, self.ids.att1_w_a)?;
        let t = self.grouped_attention(g, fv)?;
        let (h_t, t_argmax) = g.max_axis(t, 1)?;
        let weight = g.mul(pi, h_t)?;
        let alpha = g.scale(weight, T::lit(self.config.lambda_alpha))?;
        let weighted = g.mul_col(bounded, alpha)?;
        let f1 = g.add(bounded, weighted)?;
        Ok(FirstLevel {
            fv,
            pi,
            t,
            h_t,
            t_argmax,
            alpha,
            f1,
        })
    }

    /// Second-level attention; `class_rows` holds each sample's class
    /// attribute scores repeated for its `r` regions, `[B·r, A]`.
    pub fn refine_attend_two(&self, g: &mut Graph<T>, f1: Var, attrs: Var, class_rows: &Tensor<T>) -> Result<SecondLevel> {
        let vt = g.transpose(attrs)?;
        let fv2 = g.matmul(f1, vt)?;
        let a = g.constant(class_rows.clone())?;
        let fv2_weighted = g.mul(fv2, a)?;
        let alpha2 = self.region_attention(g, fv2_weighted, self.ids.att2_w_b, self.ids.att2_w_a)?;
        let weighted = g.mul_col(f1, alpha2)?;
        let f2 = g.add(f1, weighted)?;
        Ok(SecondLevel {
            fv2,
            fv2_weighted,
            alpha2,
            f2,
        })
    }

    /// Region mean of `[B·r, m]`, giving `f_s [B, m]`.
    pub fn assemble_embedding(&self, g: &mut Graph<T>, f2: Var) -> Result<Var> {
        let (rows, m) = g.value(f2).dims2()?;
        let r = self.dims.regions;
        let x = g.reshape(f2, [rows / r, r, m])?;
        g.mean_axis(x, 1)
    }

    /// Raw logits `[B, C^s + C^t]` of the classifier `h_2`.
    pub fn classify_scores(&self, g: &mut Graph<T>, fs: Var, mode: Grad) -> Result<Var> {
        let ids = self.ids;
        let h = self.affine(g, fs, ids.cls_w1, ids.cls_b1, mode)?;
        let h = g.relu(h)?;
        self.affine(g, h, ids.cls_w2, ids.cls_b2, mode)
    }

    /// Full forward pass on a batch `[B·r, d]`, conditioning the second level
    /// on `class_rows` (`[B·r, A]`).
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        raw: &Tensor<T>,
        attr: &AttributeSemantics<T>,
        class_rows: &Tensor<T>,
        noise: Option<&Tensor<T>>,
        one_step_only: bool,
    ) -> Result<AganForward> {
        let rows = raw.shape()[0];
        let x = g.constant(raw.clone())?;
        let (bounded, kl) = self.bound_features(g, x, noise)?;
        let attributes = self.project_attributes(g, attr)?;
        let first = self.fuse_and_attend_one(g, bounded, attributes)?;
        let (second, top) = if one_step_only {
            (None, first.f1)
        } else {
            let s = self.refine_attend_two(g, first.f1, attributes, class_rows)?;
            (Some(s), s.f2)
        };
        let embedding = self.assemble_embedding(g, top)?;
        let logits = self.classify_scores(g, embedding, Grad::Trainable)?;
        Ok(AganForward {
            batch: rows / self.dims.regions,
            bounded,
            kl,
            attributes,
            first,
            second,
            embedding,
            logits,
        })
    }

    /// Embeds each sample once per candidate class, conditioning the
    /// second-level attention on that class. Returns `[C][B, m]` embeddings
    /// and `[B, C]` class scores, where column `c` is probability `c` of
    /// pass `c` (see [`class_probabilities`]).
    pub fn candidate_pass(
        &self,
        raw: &Tensor<T>,
        attr: &AttributeSemantics<T>,
        class_sem: &ClassSemantics<T>,
        one_step_only: bool,
    ) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        let r = self.dims.regions;
        let b = raw.shape()[0] / r;
        let n_classes = class_sem.n_classes();
        let mut g = Graph::new();
        let x = g.constant(raw.clone())?;
        let (bounded, _) = self.bound_features(&mut g, x, None)?;
        let attributes = self.project_attributes(&mut g, attr)?;
        let first = self.fuse_and_attend_one(&mut g, bounded, attributes)?;
        let mut embeddings = Vec::with_capacity(n_classes);
        let mut scores = vec![T::zero(); b * n_classes];
        for c in 1..=n_classes {
            let top = if one_step_only {
                first.f1
            } else {
                let rows = repeat_rows(class_sem.vector(c), b * r)?;
                self.refine_attend_two(&mut g, first.f1, attributes, &rows)?.f2
            };
            let fs = self.assemble_embedding(&mut g, top)?;
            let logits = self.classify_scores(&mut g, fs, Grad::Frozen)?;
            let probs = class_probabilities(g.value(logits), self.dims.n_source)?;
            for i in 0..b {
                scores[i * n_classes + c - 1] = probs.get2(i, c - 1);
            }
            embeddings.push(g.value(fs).clone());
        }
        Ok((embeddings, Tensor::new([b, n_classes], scores)?))
    }

    /// AGAN objective on a forward pass.
    ///
    /// `labels` are 1-based source classes. `soft_targets` feeds the
    /// target-index loss and `generated` (constants, `[B, m]`) the mutual
    /// loss; passing `None` drops the respective term.
    pub fn losses(
        &self,
        g: &mut Graph<T>,
        fwd: &AganForward,
        labels: &[usize],
        soft_targets: Option<&SoftTargets<T>>,
        generated: Option<&Tensor<T>>,
    ) -> Result<AganLosses> {
        let cfg = &self.config;
        let cs = self.dims.n_source;
        let ct = self.dims.n_target;
        let b = fwd.batch;
        check_source_labels(labels, b, cs)?;

        let ce = source_cross_entropy(g, fwd.logits, labels, cs)?;
        let mut total = ce;

        let u = match soft_targets {
            Some(st) => {
                let mut tgt = Vec::with_capacity(b * ct);
                for &y in labels {
                    tgt.extend_from_slice(st.row(y));
                }
                let tgt = Tensor::new([b, ct], tgt)?;
                let u = target_bce(g, fwd.logits, &tgt, cs)?;
                let weighted = g.scale(u, T::lit(cfg.lambda_p))?;
                total = g.add(total, weighted)?;
                Some(u)
            }
            None => None,
        };

        let m1 = match generated {
            Some(x) => {
                let m1 = mutual_loss(g, fwd.embedding, x)?;
                let weighted = g.scale(m1, T::lit(cfg.lambda_m1))?;
                total = g.add(total, weighted)?;
                Some(m1)
            }
            None => None,
        };

        let kl_mean = g.mean(fwd.kl)?;
        let excess = g.add_scalar(kl_mean, T::lit(-cfg.gamma))?;
        let hinge = g.relu(excess)?;
        let kl_term = g.scale(hinge, T::lit(cfg.beta_kl))?;
        total = g.add(total, kl_term)?;
        Ok(AganLosses {
            ce,
            u,
            m1,
            kl_mean,
            kl_term,
            total,
        })
    }
}

/// Class scores from raw logits `[B, C^s + C^t]`: a softmax over the
/// source slice and an independent sigmoid per target index.
pub fn class_probabilities<T: Scalar>(logits: &Tensor<T>, n_source: usize) -> Result<Tensor<T>> {
    let (b, c) = logits.dims2()?;
    if n_source == 0 || n_source > c {
        return Err(shape_err!("{n_source} source classes among {c} logits"));
    }
    let mut out = Vec::with_capacity(b * c);
    for i in 0..b {
        let row = logits.row(i);
        let src = softmax_axis(&Tensor::vector(row[..n_source].to_vec())?, 0)?;
        out.extend_from_slice(src.data());
        out.extend(row[n_source..].iter().map(|&z| sigmoid(z)));
    }
    Tensor::new([b, c], out)
}

/// Closed-form `KL(N(μ, diag e^lv) ‖ N(0, I))` per region, then the mean over
/// each sample's `r` regions. Returns (`[B]`, `[B·r]`).
pub fn gaussian_kl<T: Scalar>(g: &mut Graph<T>, mu: Var, logvar: Var, r: usize) -> Result<(Var, Var)> {
    let rows = g.shape(mu)[0];
    let mu2 = g.mul(mu, mu)?;
    let var = g.exp(logvar)?;
    let s = g.add(mu2, var)?;
    let s = g.sub(s, logvar)?;
    let s = g.add_scalar(s, -T::one())?;
    let per_region = g.sum_axis(s, 1)?;
    let per_region = g.scale(per_region, T::lit(0.5))?;
    let grouped = g.reshape(per_region, [rows / r, r])?;
    let per_sample = g.mean_axis(grouped, 1)?;
    Ok((per_sample, per_region))
}

pub(crate) fn check_source_labels(labels: &[usize], batch: usize, n_source: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(shape_err!("{} labels for a batch of {batch}", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| !(1..=n_source).contains(&y)) {
        return Err(Error::Data(format!(
            "label {bad} outside the source range 1..={n_source}"
        )));
    }
    Ok(())
}

/// Mean cross-entropy of a softmax restricted to the first `cs` logits.
pub fn source_cross_entropy<T: Scalar>(g: &mut Graph<T>, logits: Var, labels: &[usize], cs: usize) -> Result<Var> {
    let b = labels.len();
    let src = g.slice(logits, 1, 0, cs)?;
    let logp = g.log_softmax(src, 1)?;
    let mut onehot = vec![T::zero(); b * cs];
    for (i, &y) in labels.iter().enumerate() {
        onehot[i * cs + y - 1] = T::one();
    }
    let mask = g.constant(Tensor::new([b, cs], onehot)?)?;
    let picked = g.mul(logp, mask)?;
    let s = g.sum(picked)?;
    g.scale(s, T::lit(-1.0 / b as f64))
}

/// Mean binary cross-entropy of sigmoid target logits against soft labels,
/// written as `softplus(z) − p·z`.
pub fn target_bce<T: Scalar>(g: &mut Graph<T>, logits: Var, soft: &Tensor<T>, cs: usize) -> Result<Var> {
    let ct = soft.shape()[1];
    let z = g.slice(logits, 1, cs, ct)?;
    let sp = g.softplus(z)?;
    let p = g.constant(soft.clone())?;
    let pz = g.mul(p, z)?;
    let terms = g.sub(sp, pz)?;
    g.mean(terms)
}

/// `½‖f − x‖²` averaged over the batch, with `x` held constant.
pub fn mutual_loss<T: Scalar>(g: &mut Graph<T>, f: Var, x: &Tensor<T>) -> Result<Var> {
    let b = g.shape(f)[0];
    let xv = g.constant(x.clone())?;
    let d = g.sub(f, xv)?;
    let sq = g.squared_l2(d)?;
    g.scale(sq, T::lit(0.5 / b as f64))
}

/// Stacks `row` `n` times into `[n, len]`.
pub fn repeat_rows<T: Scalar>(row: &[T], n: usize) -> Result<Tensor<T>> {
    Tensor::new([n, row.len()], row.repeat(n))
}

/// Expands per-sample class vectors to one row per region.
pub fn class_rows<T: Scalar>(class_sem: &ClassSemantics<T>, labels: &[usize], r: usize) -> Result<Tensor<T>> {
    let a = class_sem.n_attributes();
    let mut data = Vec::with_capacity(labels.len() * r * a);
    for &y in labels {
        let v = class_sem.vector(y);
        for _ in 0..r {
            data.extend_from_slice(v);
        }
    }
    Tensor::new([labels.len() * r, a], data)
}
