//! Alternating optimisation of the embedding and generation networks.
//!
//! Each step draws a class-balanced batch of training-source samples and
//! then, in order: updates the embedding network on its full objective with
//! generated features held constant; runs `n_critic` critic updates; runs
//! one generator update with the embeddings of that batch held constant.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, load_checkpoint_any, save_checkpoint};
pub use config::TrainConfig;

use crate::afgn::AfgnModel;
use crate::agan::{class_rows, source_cross_entropy, AganModel, ProblemDims};
use crate::data::{Bundle, ClassSemantics, Dataset, Split};
use crate::error::{Error, Result};
use crate::eval::{candidate_outputs, evaluate_scores, test_samples, ProtocolTag};
use crate::numcore::{gaussian, AdamConfig, AdamState, Graph, Rng, Tensor};
use crate::pmi::{pmi_targets, SoftTargets};
use crate::Real;

/// Source of the soft labels for the target-index loss.
pub trait TargetProvider {
    fn targets(&mut self, class_sem: &ClassSemantics<Real>) -> Result<SoftTargets<Real>>;
}

/// Computes soft labels from class semantics by PMI.
#[derive(Debug, Default, Clone, Copy)]
pub struct PmiTargets;

impl TargetProvider for PmiTargets {
    fn targets(&mut self, class_sem: &ClassSemantics<Real>) -> Result<SoftTargets<Real>> {
        Ok(pmi_targets(class_sem)?.1)
    }
}

/// Loss components of one step. Disabled terms are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub l_ce: Real,
    pub l_u: Option<Real>,
    pub l_m1: Option<Real>,
    pub kl: Real,
    pub kl_term: Real,
    pub agan_total: Real,
    pub critic_total: Real,
    pub wasserstein: Real,
    pub gradient_penalty: Real,
    pub gen_adversarial: Real,
    pub l_cls: Option<Real>,
    pub l_m2: Option<Real>,
    pub gen_total: Real,
}

/// Epoch means of the step records plus eval-mode diagnostics on the
/// training split (no sampling noise, true-class conditioning).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean: StepRecord,
    pub eval_ce: Real,
    pub eval_kl: Real,
    /// Held-out (S, T, H) of the embedding network, when requested.
    pub held_out: Option<(Real, Real, Real)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn is_finite(&self) -> bool {
        self.epochs.iter().all(|e| {
            let m = &e.mean;
            [
                Some(m.l_ce),
                m.l_u,
                m.l_m1,
                Some(m.kl),
                Some(m.agan_total),
                Some(m.critic_total),
                Some(m.gen_total),
                m.l_cls,
                m.l_m2,
                Some(e.eval_ce),
                Some(e.eval_kl),
            ]
            .into_iter()
            .flatten()
            .all(Real::is_finite)
        })
    }

    /// One `[epochs]` array per recorded column.
    pub fn to_bundle(&self) -> Result<Bundle> {
        let mut b = Bundle::new();
        b.meta.insert("kind".into(), "history".into());
        if self.epochs.is_empty() {
            return Ok(b);
        }
        let cols: [(&str, fn(&EpochRecord) -> Option<Real>); 15] = [
            ("l_ce", |e| Some(e.mean.l_ce)),
            ("l_u", |e| e.mean.l_u),
            ("l_m1", |e| e.mean.l_m1),
            ("kl", |e| Some(e.mean.kl)),
            ("kl_term", |e| Some(e.mean.kl_term)),
            ("agan_total", |e| Some(e.mean.agan_total)),
            ("critic_total", |e| Some(e.mean.critic_total)),
            ("wasserstein", |e| Some(e.mean.wasserstein)),
            ("gradient_penalty", |e| Some(e.mean.gradient_penalty)),
            ("gen_adversarial", |e| Some(e.mean.gen_adversarial)),
            ("l_cls", |e| e.mean.l_cls),
            ("l_m2", |e| e.mean.l_m2),
            ("gen_total", |e| Some(e.mean.gen_total)),
            ("eval_ce", |e| Some(e.eval_ce)),
            ("eval_kl", |e| Some(e.eval_kl)),
        ];
        for (name, f) in cols {
            if let Some(v) = self.epochs.iter().map(f).collect::<Option<Vec<_>>>() {
                b.put_f64(name, &Tensor::vector(v)?)?;
            }
        }
        if let Some(v) = self.epochs.iter().map(|e| e.held_out).collect::<Option<Vec<_>>>() {
            let flat = v.iter().flat_map(|&(s, t, h)| [s, t, h]).collect();
            b.put_f64("held_out_sth", &Tensor::new([v.len(), 3], flat)?)?;
        }
        Ok(b)
    }
}

/// Inputs of one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedBatch {
    pub labels: Vec<usize>,
    pub raw: Tensor<Real>,
    pub rows: Tensor<Real>,
    pub attrs: Tensor<Real>,
}

/// Models, optimiser states and the run's random stream.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub dims: ProblemDims,
    pub agan: AganModel<Real>,
    pub afgn: AfgnModel<Real>,
    pub agan_opt: AdamState<Real>,
    pub critic_opt: AdamState<Real>,
    pub gen_opt: AdamState<Real>,
    pub rng: Rng,
    pub step: u64,
}

impl PartialEq for Trainer {
    fn eq(&self, o: &Self) -> bool {
        self.config == o.config
            && self.dims == o.dims
            && self.agan == o.agan
            && self.afgn == o.afgn
            && self.agan_opt == o.agan_opt
            && self.critic_opt == o.critic_opt
            && self.gen_opt == o.gen_opt
            && self.rng.state() == o.rng.state()
            && self.step == o.step
    }
}

impl Trainer {
    /// Initialises every network from the run's seed.
    pub fn new(config: TrainConfig, dims: ProblemDims) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed, 0);
        let agan = AganModel::new(dims, config.agan.clone(), &mut rng)?;
        let afgn = AfgnModel::new(config.afgn.clone(), config.agan.bounded_dim, dims.n_attributes, &mut rng)?;
        let adam = AdamConfig {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            ..AdamConfig::default()
        };
        let critic_adam = AdamConfig {
            lr: config.lr * config.critic_lr_scale,
            ..adam
        };
        Ok(Self {
            agan_opt: AdamState::new(adam, &agan.params),
            critic_opt: AdamState::new(critic_adam, &afgn.critic),
            gen_opt: AdamState::new(adam, &afgn.generator),
            config,
            dims,
            agan,
            afgn,
            rng,
            step: 0,
        })
    }

    pub fn for_data(config: TrainConfig, data: &Dataset<Real>) -> Result<Self> {
        Self::new(config, ProblemDims::of(data))
    }

    /// Checks that `data` has the sizes this trainer was built for.
    pub fn check_data(&self, data: &Dataset<Real>) -> Result<()> {
        let got = ProblemDims::of(data);
        if got != self.dims {
            return Err(Error::Data(format!(
                "dataset sizes {got:?} do not match the model's {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    /// Training-source sample indices grouped by class.
    pub fn class_pools(data: &Dataset<Real>) -> Result<Vec<Vec<usize>>> {
        let cs = data.class_sem.n_source();
        let mut pools = vec![Vec::new(); cs];
        for i in data.features.indices(Split::TrainSource) {
            let y = data.features.labels[i];
            if !(1..=cs).contains(&y) {
                return Err(Error::Data(format!("training sample {i} has non-source label {y}")));
            }
            pools[y - 1].push(i);
        }
        if let Some(c) = pools.iter().position(Vec::is_empty) {
            return Err(Error::Data(format!("source class {} has no training samples", c + 1)));
        }
        Ok(pools)
    }

    /// Round-robin over source classes starting where the previous batch
    /// stopped; the sample within each class is drawn uniformly.
    pub fn next_batch(&mut self, pools: &[Vec<usize>]) -> Vec<usize> {
        let ns = self.config.ns;
        let start = (self.step as usize).wrapping_mul(ns);
        (0..ns)
            .map(|k| {
                let pool = &pools[(start + k) % pools.len()];
                pool[self.rng.below(pool.len())]
            })
            .collect()
    }

    pub fn steps_per_epoch(&self, data: &Dataset<Real>) -> usize {
        data.features.indices(Split::TrainSource).len().div_ceil(self.config.ns).max(1)
    }

    /// One alternating update on `batch`.
    pub fn train_step(
        &mut self,
        data: &Dataset<Real>,
        batch: &[usize],
        targets: Option<&SoftTargets<Real>>,
    ) -> Result<StepRecord> {
        let prepared = self.prepare_batch(data, batch)?;
        let (mut rec, fs) = self.agan_phase(data, &prepared, targets)?;
        self.critic_phase(&prepared, &fs, &mut rec)?;
        self.generator_phase(&prepared, &fs, &mut rec)?;
        self.step += 1;
        Ok(rec)
    }

    /// Checks that every sample of `batch` is a training-source sample and
    /// gathers its inputs.
    pub fn prepare_batch(&self, data: &Dataset<Real>, batch: &[usize]) -> Result<PreparedBatch> {
        let cs = data.class_sem.n_source();
        let labels: Vec<usize> = batch.iter().map(|&i| data.features.labels[i]).collect();
        for (&i, &y) in batch.iter().zip(&labels) {
            if y > cs || data.features.split[i] != Split::TrainSource {
                return Err(Error::Data(format!(
                    "sample {i} (class {y}, {}) cannot be used for training",
                    data.features.split[i]
                )));
            }
        }
        Ok(PreparedBatch {
            raw: data.features.gather(batch)?,
            rows: class_rows(&data.class_sem, &labels, self.dims.regions)?,
            attrs: self.batch_attributes(&data.class_sem, &labels)?,
            labels,
        })
    }

    /// Updates the embedding network with generated features held constant.
    /// Returns the partial record and the batch embeddings.
    pub fn agan_phase(
        &mut self,
        data: &Dataset<Real>,
        p: &PreparedBatch,
        targets: Option<&SoftTargets<Real>>,
    ) -> Result<(StepRecord, Tensor<Real>)> {
        let abl = self.config.ablation();
        let b = p.labels.len();
        let m = self.config.agan.bounded_dim;
        let z = self.config.afgn.z;
        let noise = gaussian(&mut self.rng, [b * self.dims.regions, m]);
        let generated = if abl.disable_l_m1 {
            None
        } else {
            let eps = gaussian(&mut self.rng, [b, z]);
            let mut g = Graph::new();
            let x = self.afgn.generate_batch(&mut g, &eps, &p.attrs, crate::agan::Grad::Frozen)?;
            Some(g.value(x).clone())
        };

        let mut g = Graph::new();
        let fwd = self
            .agan
            .forward(&mut g, &p.raw, &data.attr_sem, &p.rows, Some(&noise), abl.one_step_attention_only)?;
        let soft = if abl.disable_l_u { None } else { targets };
        if !abl.disable_l_u && soft.is_none() {
            return Err(Error::Config("soft targets are required unless disable_L_u is set".into()));
        }
        let losses = self.agan.losses(&mut g, &fwd, &p.labels, soft, generated.as_ref())?;
        let grads = g.backward(losses.total)?.for_params(&self.agan.params);
        self.agan_opt.step(&mut self.agan.params, &grads)?;
        let val = |v| g.value(v).item();
        let rec = StepRecord {
            l_ce: val(losses.ce)?,
            l_u: losses.u.map(val).transpose()?,
            l_m1: losses.m1.map(val).transpose()?,
            kl: val(losses.kl_mean)?,
            kl_term: val(losses.kl_term)?,
            agan_total: val(losses.total)?,
            critic_total: 0.0,
            wasserstein: 0.0,
            gradient_penalty: 0.0,
            gen_adversarial: 0.0,
            l_cls: None,
            l_m2: None,
            gen_total: 0.0,
        };
        Ok((rec, g.value(fwd.embedding).clone()))
    }

    /// Runs `n_critic` critic updates against the embeddings `fs`.
    pub fn critic_phase(&mut self, p: &PreparedBatch, fs: &Tensor<Real>, rec: &mut StepRecord) -> Result<()> {
        let b = p.labels.len();
        let z = self.config.afgn.z;
        for _ in 0..self.config.afgn.n_critic {
            let eps = gaussian(&mut self.rng, [b, z]);
            let eta: Vec<Real> = (0..b).map(|_| self.rng.uniform(0.0, 1.0)).collect();
            let mut g = Graph::new();
            let x = self.afgn.generate_batch(&mut g, &eps, &p.attrs, crate::agan::Grad::Frozen)?;
            let fake = g.value(x).clone();
            let l = self.afgn.critic_losses(&mut g, fs, &fake, &p.attrs, &eta)?;
            let grads = g.backward(l.total)?.for_params(&self.afgn.critic);
            self.critic_opt.step(&mut self.afgn.critic, &grads)?;
            rec.critic_total = g.value(l.total).item()?;
            rec.wasserstein = g.value(l.wasserstein).item()?;
            rec.gradient_penalty = g.value(l.penalty).item()?;
        }
        Ok(())
    }

    /// One generator update with the embeddings `fs` held constant.
    pub fn generator_phase(&mut self, p: &PreparedBatch, fs: &Tensor<Real>, rec: &mut StepRecord) -> Result<()> {
        let eps = gaussian(&mut self.rng, [p.labels.len(), self.config.afgn.z]);
        let mut g = Graph::new();
        let classifier = (!self.config.disable_l_cls).then_some(&self.agan);
        let real = (!self.config.disable_l_m2).then_some(fs);
        let l = self.afgn.generator_losses(&mut g, &eps, &p.attrs, &p.labels, classifier, real)?;
        let grads = g.backward(l.total)?.for_params(&self.afgn.generator);
        self.gen_opt.step(&mut self.afgn.generator, &grads)?;
        let val = |v| g.value(v).item();
        rec.gen_adversarial = val(l.adversarial)?;
        rec.l_cls = l.cls.map(val).transpose()?;
        rec.l_m2 = l.m2.map(val).transpose()?;
        rec.gen_total = val(l.total)?;
        Ok(())
    }

    fn batch_attributes(&self, class_sem: &ClassSemantics<Real>, labels: &[usize]) -> Result<Tensor<Real>> {
        let a = class_sem.n_attributes();
        let data = labels.iter().flat_map(|&y| class_sem.vector(y).iter().copied()).collect();
        Tensor::new([labels.len(), a], data)
    }

    /// Runs `n` steps with freshly drawn batches.
    pub fn run_steps(
        &mut self,
        data: &Dataset<Real>,
        n: usize,
        targets: Option<&SoftTargets<Real>>,
    ) -> Result<Vec<StepRecord>> {
        let pools = Self::class_pools(data)?;
        (0..n)
            .map(|_| {
                let batch = self.next_batch(&pools);
                self.train_step(data, &batch, targets)
            })
            .collect()
    }

    /// Eval-mode source cross-entropy and mean KL over the training split,
    /// conditioning the second level on each sample's own class.
    pub fn train_split_metrics(&self, data: &Dataset<Real>) -> Result<(Real, Real)> {
        let idx = data.features.indices(Split::TrainSource);
        let cs = data.class_sem.n_source();
        let r = self.dims.regions;
        let (mut ce, mut kl) = (0.0, 0.0);
        for chunk in idx.chunks(64) {
            let labels: Vec<usize> = chunk.iter().map(|&i| data.features.labels[i]).collect();
            let raw = data.features.gather(chunk)?;
            let rows = class_rows(&data.class_sem, &labels, r)?;
            let mut g = Graph::new();
            let f = self
                .agan
                .forward(&mut g, &raw, &data.attr_sem, &rows, None, self.config.one_step_attention_only)?;
            let l = source_cross_entropy(&mut g, f.logits, &labels, cs)?;
            ce += g.value(l).item()? * chunk.len() as Real;
            kl += g.value(f.kl).sum();
        }
        let n = idx.len().max(1) as Real;
        Ok((ce / n, kl / n))
    }

    /// Held-out (S, T, H) of the embedding network under GZSL.
    pub fn held_out(&self, data: &Dataset<Real>) -> Result<(Real, Real, Real)> {
        let samples = test_samples(data);
        let out = candidate_outputs(&self.agan, data, &samples, self.config.one_step_attention_only)?;
        let rep = evaluate_scores(ProtocolTag::AganGzsl, data, &samples, &out.scores)?;
        Ok((rep.s.unwrap_or(0.0), rep.t, rep.h.unwrap_or(0.0)))
    }
}

fn mean_record(recs: &[StepRecord]) -> StepRecord {
    let n = recs.len() as Real;
    let avg = |f: &dyn Fn(&StepRecord) -> Real| recs.iter().map(f).sum::<Real>() / n;
    let avg_opt = |f: &dyn Fn(&StepRecord) -> Option<Real>| {
        recs.iter().map(f).collect::<Option<Vec<_>>>().map(|v| v.iter().sum::<Real>() / n)
    };
    StepRecord {
        l_ce: avg(&|r| r.l_ce),
        l_u: avg_opt(&|r| r.l_u),
        l_m1: avg_opt(&|r| r.l_m1),
        kl: avg(&|r| r.kl),
        kl_term: avg(&|r| r.kl_term),
        agan_total: avg(&|r| r.agan_total),
        critic_total: avg(&|r| r.critic_total),
        wasserstein: avg(&|r| r.wasserstein),
        gradient_penalty: avg(&|r| r.gradient_penalty),
        gen_adversarial: avg(&|r| r.gen_adversarial),
        l_cls: avg_opt(&|r| r.l_cls),
        l_m2: avg_opt(&|r| r.l_m2),
        gen_total: avg(&|r| r.gen_total),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitOptions {
    /// Record held-out (S, T, H) every this many epochs; 0 disables.
    pub eval_every: usize,
}

/// Trains from initialisation for `config.epochs` epochs.
pub fn fit(config: TrainConfig, data: &Dataset<Real>) -> Result<(Trainer, History)> {
    fit_with(config, data, &mut PmiTargets, FitOptions::default())
}

pub fn fit_with(
    config: TrainConfig,
    data: &Dataset<Real>,
    provider: &mut dyn TargetProvider,
    options: FitOptions,
) -> Result<(Trainer, History)> {
    let mut trainer = Trainer::for_data(config, data)?;
    let history = continue_fit(&mut trainer, data, provider, options)?;
    Ok((trainer, history))
}

/// Runs the remaining epochs of `trainer.config.epochs`, judged by its step counter.
pub fn continue_fit(
    trainer: &mut Trainer,
    data: &Dataset<Real>,
    provider: &mut dyn TargetProvider,
    options: FitOptions,
) -> Result<History> {
    trainer.check_data(data)?;
    let report = crate::data::validate(data);
    if !report.passed() {
        return Err(Error::Data(format!("dataset failed validation: {}", report.violations[0])));
    }
    let per_epoch = trainer.steps_per_epoch(data) as u64;
    let first = (trainer.step / per_epoch) as usize;
    let mut history = History::default();
    if first >= trainer.config.epochs {
        return Ok(history);
    }
    let targets = if trainer.config.disable_l_u {
        None
    } else {
        Some(provider.targets(&data.class_sem)?)
    };
    for epoch in first..trainer.config.epochs {
        let todo = (epoch as u64 + 1) * per_epoch - trainer.step;
        let recs = trainer.run_steps(data, todo as usize, targets.as_ref())?;
        let (eval_ce, eval_kl) = trainer.train_split_metrics(data)?;
        let held_out = if options.eval_every > 0 && (epoch + 1) % options.eval_every == 0 {
            Some(trainer.held_out(data)?)
        } else {
            None
        };
        history.epochs.push(EpochRecord {
            epoch,
            mean: mean_record(&recs),
            eval_ce,
            eval_kl,
            held_out,
        });
    }
    Ok(history)
}

/// Result of one grid point of a hyper-parameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub gamma: Real,
    pub lambda_p: Real,
    pub s: Real,
    pub t: Real,
    pub h: Real,
}

pub const GAMMA_GRID: [Real; 2] = [0.01, 0.05];
pub const LAMBDA_P_GRID: [Real; 4] = [0.1, 0.2, 0.3, 0.4];

/// Trains one model per (γ, λ_p) pair and reports held-out GZSL accuracy.
/// Grid points run on separate threads.
pub fn sweep(base: &TrainConfig, data: &Dataset<Real>, gammas: &[Real], lambda_ps: &[Real]) -> Result<Vec<SweepPoint>> {
    let grid: Vec<(Real, Real)> = gammas
        .iter()
        .flat_map(|&g| lambda_ps.iter().map(move |&l| (g, l)))
        .collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = grid
            .iter()
            .map(|&(gamma, lambda_p)| {
                let mut cfg = base.clone();
                cfg.agan.gamma = gamma;
                cfg.agan.lambda_p = lambda_p;
                s.spawn(move || -> Result<SweepPoint> {
                    let (trainer, _) = fit(cfg, data)?;
                    let (s, t, h) = trainer.held_out(data)?;
                    Ok(SweepPoint {
                        gamma,
                        lambda_p,
                        s,
                        t,
                        h,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep thread panicked"))
            .collect()
    })
}

/// Picks the grid point with the best H, earliest on ties.
pub fn best_point(points: &[SweepPoint]) -> Option<&SweepPoint> {
    points
        .iter()
        .fold(None, |best: Option<&SweepPoint>, p| match best {
            Some(b) if b.h >= p.h => Some(b),
            _ => Some(p),
        })
}
