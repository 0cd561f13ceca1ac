//! Adversarial feature generation network.
//!
//! A one-hidden-layer generator maps `(ε ‖ a)` to a synthetic embedding
//! `x̃`; a linear critic scores `(x ‖ a)`. Because the critic is affine in
//! `x`, its input gradient is the constant `w_x` and the gradient penalty
//! reduces to `λ_gp·(‖w_x‖ − 1)²`. After training, synthetic features for
//! every class feed a softmax classifier used at test time.

use crate::agan::{check_source_labels, init_weight, mutual_loss, source_cross_entropy, AganModel, Grad};
use crate::data::ClassSemantics;
use crate::error::{shape_err, Error, Result};
use crate::numcore::{gaussian, AdamConfig, AdamState, Graph, ParamId, ParamSet, Rng, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct AfgnConfig {
    /// Noise width `z`.
    pub z: usize,
    pub generator_hidden: usize,
    pub lambda_gp: f64,
    pub lambda_cls: f64,
    pub lambda_m2: f64,
    pub n_critic: usize,
    pub features_per_class: usize,
}

impl Default for AfgnConfig {
    fn default() -> Self {
        Self {
            z: 16,
            generator_hidden: 64,
            lambda_gp: 10.0,
            lambda_cls: 0.1,
            lambda_m2: 0.2,
            n_critic: 5,
            features_per_class: 400,
        }
    }
}

impl AfgnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.z == 0 || self.generator_hidden == 0 || self.n_critic == 0 || self.features_per_class == 0 {
            return Err(Error::Config("AFGN sizes and counts must be positive".into()));
        }
        for (name, v) in [
            ("lambda_gp", self.lambda_gp),
            ("lambda_cls", self.lambda_cls),
            ("lambda_m2", self.lambda_m2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct GenIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CriticIds {
    w_x: ParamId,
    w_a: ParamId,
    b: ParamId,
}

/// Generator and critic. Each lives in its own parameter set so the two
/// halves of the min-max game are optimised independently.
#[derive(Debug)]
pub struct AfgnModel<T = f64> {
    pub config: AfgnConfig,
    pub embed_dim: usize,
    pub n_attributes: usize,
    pub generator: ParamSet<T>,
    pub critic: ParamSet<T>,
    gen: GenIds,
    crit: CriticIds,
}

impl<T: Scalar> Clone for AfgnModel<T> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            embed_dim: self.embed_dim,
            n_attributes: self.n_attributes,
            generator: self.generator.clone(),
            critic: self.critic.clone(),
            gen: self.gen,
            crit: self.crit,
        }
    }
}

impl<T: Scalar> PartialEq for AfgnModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.embed_dim == other.embed_dim
            && self.n_attributes == other.n_attributes
            && self.generator == other.generator
            && self.critic == other.critic
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CriticLosses {
    pub wasserstein: Var,
    pub penalty: Var,
    pub total: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorLosses {
    pub fake: Var,
    pub adversarial: Var,
    pub cls: Option<Var>,
    pub m2: Option<Var>,
    pub total: Var,
}

impl<T: Scalar> AfgnModel<T> {
    pub fn new(config: AfgnConfig, embed_dim: usize, n_attributes: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if embed_dim == 0 || n_attributes == 0 {
            return Err(Error::Config("embedding width and attribute count must be positive".into()));
        }
        let input = config.z + n_attributes;
        let hg = config.generator_hidden;
        let mut generator = ParamSet::new();
        let gen = GenIds {
            w1: generator.add("gen.w1", init_weight(rng, &[input, hg], input)),
            b1: generator.add("gen.b1", init_weight(rng, &[hg], input)),
            w2: generator.add("gen.w2", init_weight(rng, &[hg, embed_dim], hg)),
            b2: generator.add("gen.b2", init_weight(rng, &[embed_dim], hg)),
        };
        let fan = embed_dim + n_attributes;
        let mut critic = ParamSet::new();
        let crit = CriticIds {
            w_x: critic.add("critic.w_x", init_weight(rng, &[embed_dim, 1], fan)),
            w_a: critic.add("critic.w_a", init_weight(rng, &[n_attributes, 1], fan)),
            b: critic.add("critic.b", init_weight(rng, &[1], fan)),
        };
        Ok(Self {
            config,
            embed_dim,
            n_attributes,
            generator,
            critic,
            gen,
            crit,
        })
    }

    /// Critic input weight `w_x`, `[m, 1]`.
    pub fn critic_weight(&self) -> &Tensor<T> {
        self.critic.get(self.crit.w_x)
    }

    /// Overwrites the critic, for constructing reference cases.
    pub fn set_critic(&mut self, w_x: Tensor<T>, w_a: Tensor<T>, b: T) -> Result<()> {
        if w_x.shape() != [self.embed_dim, 1] || w_a.shape() != [self.n_attributes, 1] {
            return Err(shape_err!("critic weights must be [m, 1] and [A, 1]"));
        }
        *self.critic.get_mut(self.crit.w_x) = w_x;
        *self.critic.get_mut(self.crit.w_a) = w_a;
        *self.critic.get_mut(self.crit.b) = Tensor::vector(vec![b])?;
        Ok(())
    }

    fn p(g: &mut Graph<T>, set: &ParamSet<T>, id: ParamId, mode: Grad) -> Result<Var> {
        match mode {
            Grad::Trainable => g.param(set, id),
            Grad::Frozen => g.constant(set.get(id).clone()),
        }
    }

    /// `G(ε ‖ a)` for a batch: `eps [B, z]`, `attrs [B, A]` → `[B, m]`.
    pub fn generate_batch(&self, g: &mut Graph<T>, eps: &Tensor<T>, attrs: &Tensor<T>, mode: Grad) -> Result<Var> {
        let (b, z) = eps.dims2()?;
        let (b2, a) = attrs.dims2()?;
        if b != b2 || z != self.config.z || a != self.n_attributes {
            return Err(shape_err!(
                "generator input [{b}, {z}] ‖ [{b2}, {a}], expected z={} and A={}",
                self.config.z,
                self.n_attributes
            ));
        }
        let e = g.constant(eps.clone())?;
        let at = g.constant(attrs.clone())?;
        let x = g.concat(&[e, at], 1)?;
        let w1 = Self::p(g, &self.generator, self.gen.w1, mode)?;
        let b1 = Self::p(g, &self.generator, self.gen.b1, mode)?;
        let w2 = Self::p(g, &self.generator, self.gen.w2, mode)?;
        let b2v = Self::p(g, &self.generator, self.gen.b2, mode)?;
        let h = g.matmul(x, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.relu(h)?;
        let y = g.matmul(h, w2)?;
        g.add_row(y, b2v)
    }

    /// One synthetic feature for class vector `a`, noise drawn from `rng`.
    pub fn generate(&self, rng: &mut Rng, a: &[T]) -> Result<Tensor<T>> {
        let eps = gaussian(rng, [1, self.config.z]);
        self.generate_with(&eps, a)
    }

    /// Deterministic generator evaluation for a given noise row `[1, z]`.
    pub fn generate_with(&self, eps: &Tensor<T>, a: &[T]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let attrs = Tensor::new([1, a.len()], a.to_vec())?;
        let x = self.generate_batch(&mut g, eps, &attrs, Grad::Frozen)?;
        g.value(x).reshape([self.embed_dim])
    }

    /// `D(x, a) = x·w_x + a·w_a + b`, `[B, 1]`.
    pub fn critic_score(&self, g: &mut Graph<T>, x: Var, attrs: Var, mode: Grad) -> Result<Var> {
        let wx = Self::p(g, &self.critic, self.crit.w_x, mode)?;
        let wa = Self::p(g, &self.critic, self.crit.w_a, mode)?;
        let b = Self::p(g, &self.critic, self.crit.b, mode)?;
        let sx = g.matmul(x, wx)?;
        let sa = g.matmul(attrs, wa)?;
        let s = g.add(sx, sa)?;
        g.add_row(s, b)
    }

    /// `∇_x D` at each interpolate `x̂ = η f_s + (1 − η) x̃`, rows `[B, m]`.
    /// The critic is affine in `x`, so every row equals `w_x`.
    pub fn critic_input_gradient(&self, x_hat: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, m) = x_hat.dims2()?;
        if m != self.embed_dim {
            return Err(shape_err!("interpolate width {m}, expected {}", self.embed_dim));
        }
        Tensor::new([b, m], self.critic_weight().data().repeat(b))
    }

    /// Mixes real and fake rows with one `η ∈ [0, 1]` per row.
    pub fn interpolate(real: &Tensor<T>, fake: &Tensor<T>, eta: &[T]) -> Result<Tensor<T>> {
        let (b, m) = real.dims2()?;
        if fake.shape() != real.shape() || eta.len() != b {
            return Err(shape_err!("interpolation needs equal [B, m] inputs and B mixing weights"));
        }
        let mut out = Vec::with_capacity(b * m);
        for i in 0..b {
            let e = eta[i];
            for (&r, &f) in real.row(i).iter().zip(fake.row(i)) {
                out.push(e * r + (T::one() - e) * f);
            }
        }
        Tensor::new([b, m], out)
    }

    /// `λ_gp·(‖∇_x̂ D‖ − 1)²` averaged over the interpolates; on the graph
    /// through `w_x`, which is what every row of the input gradient equals.
    pub fn gradient_penalty(&self, g: &mut Graph<T>, x_hat: &Tensor<T>, mode: Grad) -> Result<Var> {
        // Every interpolate sees the same gradient, so the batch mean is one term.
        self.critic_input_gradient(x_hat)?;
        let wx = Self::p(g, &self.critic, self.crit.w_x, mode)?;
        let norm = g.l2_norm(wx)?;
        let gap = g.add_scalar(norm, -T::one())?;
        let sq = g.mul(gap, gap)?;
        g.scale(sq, T::lit(self.config.lambda_gp))
    }

    /// Critic objective (minimised): `E[D(x̃,a)] − E[D(f_s,a)] + GP`, with
    /// `real` and `fake` both constants.
    pub fn critic_losses(
        &self,
        g: &mut Graph<T>,
        real: &Tensor<T>,
        fake: &Tensor<T>,
        attrs: &Tensor<T>,
        eta: &[T],
    ) -> Result<CriticLosses> {
        let a = g.constant(attrs.clone())?;
        let xr = g.constant(real.clone())?;
        let xf = g.constant(fake.clone())?;
        let dr = self.critic_score(g, xr, a, Grad::Trainable)?;
        let df = self.critic_score(g, xf, a, Grad::Trainable)?;
        let mr = g.mean(dr)?;
        let mf = g.mean(df)?;
        let wasserstein = g.sub(mr, mf)?;
        let x_hat = Self::interpolate(real, fake, eta)?;
        let penalty = self.gradient_penalty(g, &x_hat, Grad::Trainable)?;
        let neg = g.neg(wasserstein)?;
        let total = g.add(neg, penalty)?;
        Ok(CriticLosses {
            wasserstein,
            penalty,
            total,
        })
    }

    /// Generator objective: `−E[D(x̃,a)] + λ_cls·L_cls + λ_m2·L_m2`, with the
    /// critic and `h_2` frozen and `real` (`f_s`) constant. Passing `None`
    /// for `classifier` or `real` drops the corresponding term.
    #[allow(clippy::too_many_arguments)]
    pub fn generator_losses(
        &self,
        g: &mut Graph<T>,
        eps: &Tensor<T>,
        attrs: &Tensor<T>,
        labels: &[usize],
        classifier: Option<&AganModel<T>>,
        real: Option<&Tensor<T>>,
    ) -> Result<GeneratorLosses> {
        let fake = self.generate_batch(g, eps, attrs, Grad::Trainable)?;
        let a = g.constant(attrs.clone())?;
        let df = self.critic_score(g, fake, a, Grad::Frozen)?;
        let mf = g.mean(df)?;
        let adversarial = g.neg(mf)?;
        let mut total = adversarial;
        let cls = match classifier {
            Some(agan) => {
                let n_source = agan.dims.n_source;
                check_source_labels(labels, eps.shape()[0], n_source)?;
                let logits = agan.classify_scores(g, fake, Grad::Frozen)?;
                let l = source_cross_entropy(g, logits, labels, n_source)?;
                let w = g.scale(l, T::lit(self.config.lambda_cls))?;
                total = g.add(total, w)?;
                Some(l)
            }
            None => None,
        };
        let m2 = match real {
            Some(x) => {
                let l = mutual_loss(g, fake, x)?;
                let w = g.scale(l, T::lit(self.config.lambda_m2))?;
                total = g.add(total, w)?;
                Some(l)
            }
            None => None,
        };
        Ok(GeneratorLosses {
            fake,
            adversarial,
            cls,
            m2,
            total,
        })
    }

    /// `per_class` features for each class `1..=C^s+C^t`, class-major.
    /// Class `c` draws its noise from stream `c` of `seed`.
    pub fn synthesize_features(
        &self,
        class_sem: &ClassSemantics<T>,
        per_class: usize,
        seed: u64,
    ) -> Result<SyntheticFeatures<T>> {
        let classes: Vec<usize> = (1..=class_sem.n_classes()).collect();
        self.synthesize_for(class_sem, &classes, per_class, seed)
    }

    pub fn synthesize_for(
        &self,
        class_sem: &ClassSemantics<T>,
        classes: &[usize],
        per_class: usize,
        seed: u64,
    ) -> Result<SyntheticFeatures<T>> {
        if per_class == 0 {
            return Err(Error::Config("features per class must be positive".into()));
        }
        let m = self.embed_dim;
        let mut data = Vec::with_capacity(classes.len() * per_class * m);
        let mut labels = Vec::with_capacity(classes.len() * per_class);
        for &c in classes {
            let mut rng = Rng::new(seed, c as u64);
            let eps = gaussian(&mut rng, [per_class, self.config.z]);
            let attrs = Tensor::new([per_class, self.n_attributes], class_sem.vector(c).repeat(per_class))?;
            let mut g = Graph::new();
            let x = self.generate_batch(&mut g, &eps, &attrs, Grad::Frozen)?;
            data.extend_from_slice(g.value(x).data());
            labels.extend(std::iter::repeat_n(c, per_class));
        }
        Ok(SyntheticFeatures {
            features: Tensor::new([labels.len(), m], data)?,
            labels,
        })
    }
}

/// Labelled synthetic embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFeatures<T = f64> {
    pub features: Tensor<T>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Gzsl,
    Zsl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamConfig {
    pub adam: AdamConfig,
    pub max_steps: usize,
    pub plateau_window: usize,
    pub plateau_tol: f64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            max_steps: 2000,
            plateau_window: 20,
            plateau_tol: 1e-5,
        }
    }
}

/// Affine softmax classifier over the embedding space. Column `j` scores
/// class `classes[j]`.
#[derive(Debug)]
pub struct DownstreamClassifier<T = f64> {
    pub classes: Vec<usize>,
    pub params: ParamSet<T>,
    pub loss_history: Vec<T>,
    w: ParamId,
    b: ParamId,
}

impl<T: Scalar> Clone for DownstreamClassifier<T> {
    fn clone(&self) -> Self {
        Self {
            classes: self.classes.clone(),
            params: self.params.clone(),
            loss_history: self.loss_history.clone(),
            w: self.w,
            b: self.b,
        }
    }
}

impl<T: Scalar> DownstreamClassifier<T> {
    /// Zero-initialised, so every class starts equally likely.
    pub fn new(embed_dim: usize, classes: Vec<usize>) -> Result<Self> {
        let c = classes.len();
        let mut params = ParamSet::new();
        let w = params.add("down.w", Tensor::zeros([embed_dim, c])?);
        let b = params.add("down.b", Tensor::zeros([c])?);
        Ok(Self {
            classes,
            params,
            loss_history: Vec::new(),
            w,
            b,
        })
    }

    fn logits_var(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(&self.params, self.w)?;
        let b = g.param(&self.params, self.b)?;
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone())?;
        let y = self.logits_var(&mut g, xv)?;
        Ok(g.value(y).clone())
    }

    /// Mean softmax cross-entropy over `x` with class labels `labels`.
    pub fn loss(&self, g: &mut Graph<T>, x: &Tensor<T>, labels: &[usize]) -> Result<Var> {
        let cols = self.columns(labels)?;
        let xv = g.constant(x.clone())?;
        let logits = self.logits_var(g, xv)?;
        source_cross_entropy(g, logits, &cols, self.classes.len())
    }

    /// 1-based column index of each label.
    fn columns(&self, labels: &[usize]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|y| {
                self.classes
                    .iter()
                    .position(|c| c == y)
                    .map(|j| j + 1)
                    .ok_or_else(|| Error::Data(format!("class {y} is not scored by this classifier")))
            })
            .collect()
    }

    /// Predicted class per row; ties go to the lowest column.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let l = self.logits(x)?;
        let (n, _) = l.dims2()?;
        Ok((0..n).map(|i| self.classes[argmax(l.row(i))]).collect())
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// Fits the test-time classifier on synthetic features. GZSL scores every
/// class present in `set`; ZSL keeps only samples of target classes.
pub fn fit_downstream<T: Scalar>(
    set: &SyntheticFeatures<T>,
    n_source: usize,
    protocol: Protocol,
    config: &DownstreamConfig,
) -> Result<DownstreamClassifier<T>> {
    let (n, m) = set.features.dims2()?;
    let keep: Vec<usize> = (0..n)
        .filter(|&i| protocol == Protocol::Gzsl || set.labels[i] > n_source)
        .collect();
    let mut classes: Vec<usize> = keep.iter().map(|&i| set.labels[i]).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return Err(Error::Data("no synthetic samples for the requested protocol".into()));
    }
    if protocol == Protocol::Gzsl {
        let max = *classes.last().unwrap();
        if let Some(missing) = (1..=max).find(|c| classes.binary_search(c).is_err()) {
            return Err(Error::Data(format!("class {missing} has no synthetic samples")));
        }
    }
    let mut x = Vec::with_capacity(keep.len() * m);
    let mut labels = Vec::with_capacity(keep.len());
    for &i in &keep {
        x.extend_from_slice(set.features.row(i));
        labels.push(set.labels[i]);
    }
    let x = Tensor::new([keep.len(), m], x)?;

    let mut clf = DownstreamClassifier::new(m, classes)?;
    let mut adam = AdamState::new(config.adam, &clf.params);
    let mut history = Vec::new();
    for _ in 0..config.max_steps {
        let mut g = Graph::new();
        let loss = clf.loss(&mut g, &x, &labels)?;
        let value = g.value(loss).item()?;
        history.push(value);
        let w = config.plateau_window;
        if history.len() > w {
            let prev = history[history.len() - 1 - w];
            let rel = ((prev - value) / prev.abs().max(T::lit(1e-300))).abs();
            if rel < T::lit(config.plateau_tol) {
                break;
            }
        }
        let grads = g.backward(loss)?.for_params(&clf.params);
        adam.step(&mut clf.params, &grads)?;
    }
    clf.loss_history = history;
    Ok(clf)
}
