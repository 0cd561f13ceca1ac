use std::path::Path;

use super::{Trainer, TrainConfig};
use crate::agan::ProblemDims;
use crate::data::Bundle;
use crate::error::{Error, Result};
use crate::numcore::{AdamState, ParamSet, Rng, RngState};
use crate::Real;

const KIND: &str = "checkpoint";

fn put_set(b: &mut Bundle, prefix: &str, set: &ParamSet<Real>, opt: &AdamState<Real>) -> Result<()> {
    for (i, p) in set.iter().enumerate() {
        b.put_f64(&format!("{prefix}.{}", p.name), &p.value)?;
        b.put_f64(&format!("adam_m.{prefix}.{}", p.name), &opt.m[i])?;
        b.put_f64(&format!("adam_v.{prefix}.{}", p.name), &opt.v[i])?;
    }
    b.meta.insert(format!("adam_step.{prefix}"), opt.step.to_string());
    Ok(())
}

fn take_set(b: &Bundle, prefix: &str, set: &mut ParamSet<Real>, opt: &mut AdamState<Real>) -> Result<()> {
    for (i, p) in set.iter_mut().enumerate() {
        let shape = p.value.shape().to_vec();
        let load = |name: String| -> Result<_> {
            let t = b.tensor::<Real>(&name)?;
            if t.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, model expects {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        p.value = load(format!("{prefix}.{}", p.name))?;
        opt.m[i] = load(format!("adam_m.{prefix}.{}", p.name))?;
        opt.v[i] = load(format!("adam_v.{prefix}.{}", p.name))?;
    }
    opt.step = meta(b, &format!("adam_step.{prefix}"))?;
    Ok(())
}

fn meta<V: std::str::FromStr>(b: &Bundle, key: &str) -> Result<V> {
    b.meta
        .get(key)
        .ok_or_else(|| Error::Checkpoint(format!("missing `{key}`")))?
        .parse()
        .map_err(|_| Error::Checkpoint(format!("unreadable `{key}`")))
}

pub fn save_checkpoint(trainer: &Trainer, dir: impl AsRef<Path>) -> Result<()> {
    let mut b = Bundle::new();
    b.meta.insert("kind".into(), KIND.into());
    b.meta.insert("config".into(), trainer.config.to_text());
    b.meta.insert("config_hash".into(), trainer.config.hash());
    b.meta.insert("step".into(), trainer.step.to_string());
    let st = trainer.rng.state();
    b.meta.insert("rng_seed".into(), st.seed.to_string());
    b.meta.insert("rng_stream".into(), st.stream.to_string());
    b.meta.insert("rng_word_pos".into(), st.word_pos.to_string());
    let d = &trainer.dims;
    for (k, v) in [
        ("regions", d.regions),
        ("raw_dim", d.raw_dim),
        ("n_attributes", d.n_attributes),
        ("attr_dim", d.attr_dim),
        ("n_source", d.n_source),
        ("n_target", d.n_target),
    ] {
        b.meta.insert(format!("dims.{k}"), v.to_string());
    }
    put_set(&mut b, "agan", &trainer.agan.params, &trainer.agan_opt)?;
    put_set(&mut b, "critic", &trainer.afgn.critic, &trainer.critic_opt)?;
    put_set(&mut b, "gen", &trainer.afgn.generator, &trainer.gen_opt)?;
    b.save(dir)
}

/// Loads a checkpoint written under `config`; a different config is refused.
pub fn load_checkpoint(dir: impl AsRef<Path>, config: &TrainConfig) -> Result<Trainer> {
    let b = Bundle::load(dir)?;
    let stored: String = meta(&b, "config_hash")?;
    if stored != config.hash() {
        return Err(Error::Checkpoint(format!(
            "config hash mismatch: checkpoint {stored}, expected {}",
            config.hash()
        )));
    }
    restore(&b)
}

/// Loads a checkpoint with the config stored inside it.
pub fn load_checkpoint_any(dir: impl AsRef<Path>) -> Result<Trainer> {
    restore(&Bundle::load(dir)?)
}

fn restore(b: &Bundle) -> Result<Trainer> {
    if b.meta.get("kind").map(String::as_str) != Some(KIND) {
        return Err(Error::Checkpoint("bundle is not a checkpoint".into()));
    }
    let text: String = meta(b, "config")?;
    let config = TrainConfig::parse(&text)?;
    let stored: String = meta(b, "config_hash")?;
    if stored != config.hash() {
        return Err(Error::Checkpoint("stored config does not match its hash".into()));
    }
    let dims = ProblemDims {
        regions: meta(b, "dims.regions")?,
        raw_dim: meta(b, "dims.raw_dim")?,
        n_attributes: meta(b, "dims.n_attributes")?,
        attr_dim: meta(b, "dims.attr_dim")?,
        n_source: meta(b, "dims.n_source")?,
        n_target: meta(b, "dims.n_target")?,
    };
    let mut t = Trainer::new(config, dims)?;
    take_set(b, "agan", &mut t.agan.params, &mut t.agan_opt)?;
    take_set(b, "critic", &mut t.afgn.critic, &mut t.critic_opt)?;
    take_set(b, "gen", &mut t.afgn.generator, &mut t.gen_opt)?;
    t.step = meta(b, "step")?;
    t.rng = Rng::from_state(RngState {
        seed: meta(b, "rng_seed")?,
        stream: meta(b, "rng_stream")?,
        word_pos: meta(b, "rng_word_pos")?,
    });
    Ok(t)
}
