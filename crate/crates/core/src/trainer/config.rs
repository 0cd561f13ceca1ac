use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::afgn::AfgnConfig;
use crate::agan::{AganAblation, AganConfig};
use crate::error::{Error, Result};

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub ns: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lr: f64,
    /// Critic learning rate as a multiple of `lr`.
    pub critic_lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub agan: AganConfig,
    pub afgn: AfgnConfig,
    pub disable_l_u: bool,
    pub one_step_attention_only: bool,
    pub disable_l_cls: bool,
    pub disable_l_m1: bool,
    pub disable_l_m2: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ns: 32,
            epochs: 300,
            seed: 0,
            lr: 2e-3,
            critic_lr_scale: 10.0,
            beta1: 0.5,
            beta2: 0.999,
            agan: AganConfig::default(),
            afgn: AfgnConfig::default(),
            disable_l_u: false,
            one_step_attention_only: false,
            disable_l_cls: false,
            disable_l_m1: false,
            disable_l_m2: false,
        }
    }
}

fn opt_usize(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ns == 0 {
            return Err(Error::Config("ns must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.critic_lr_scale > 0.0 && self.critic_lr_scale.is_finite()) {
            return Err(Error::Config("critic_lr_scale must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        self.agan.validate()?;
        self.afgn.validate()
    }

    pub fn ablation(&self) -> AganAblation {
        AganAblation {
            disable_l_u: self.disable_l_u,
            disable_l_m1: self.disable_l_m1,
            one_step_attention_only: self.one_step_attention_only,
        }
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let a = &self.agan;
        let f = &self.afgn;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("ns", self.ns.to_string());
        put("epochs", self.epochs.to_string());
        put("seed", self.seed.to_string());
        put("lr", format!("{:?}", self.lr));
        put("critic_lr_scale", format!("{:?}", self.critic_lr_scale));
        put("beta1", format!("{:?}", self.beta1));
        put("beta2", format!("{:?}", self.beta2));
        put("m", a.bounded_dim.to_string());
        put("encoder_hidden", opt_usize(a.encoder_hidden));
        put("projector_hidden", opt_usize(a.projector_hidden));
        put("attention_hidden", opt_usize(a.attention_hidden));
        put("classifier_hidden", a.classifier_hidden.to_string());
        put("lambda_alpha", format!("{:?}", a.lambda_alpha));
        put("lambda_p", format!("{:?}", a.lambda_p));
        put("lambda_m1", format!("{:?}", a.lambda_m1));
        put("gamma", format!("{:?}", a.gamma));
        put("beta_kl", format!("{:?}", a.beta_kl));
        put("z", f.z.to_string());
        put("generator_hidden", f.generator_hidden.to_string());
        put("lambda_gp", format!("{:?}", f.lambda_gp));
        put("lambda_cls", format!("{:?}", f.lambda_cls));
        put("lambda_m2", format!("{:?}", f.lambda_m2));
        put("n_critic", f.n_critic.to_string());
        put("features_per_class", f.features_per_class.to_string());
        put("disable_L_u", self.disable_l_u.to_string());
        put("one_step_attention_only", self.one_step_attention_only.to_string());
        put("disable_L_cls", self.disable_l_cls.to_string());
        put("disable_L_m1", self.disable_l_m1.to_string());
        put("disable_L_m2", self.disable_l_m2.to_string());
        s
    }

    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are ignored; unknown keys are an error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            c.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
        }
        fn auto(key: &str, v: &str) -> Result<Option<usize>> {
            if v == "auto" {
                Ok(None)
            } else {
                p(key, v).map(Some)
            }
        }
        let (a, f) = (&mut self.agan, &mut self.afgn);
        match key {
            "ns" => self.ns = p(key, value)?,
            "epochs" => self.epochs = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "lr" => self.lr = p(key, value)?,
            "critic_lr_scale" => self.critic_lr_scale = p(key, value)?,
            "beta1" => self.beta1 = p(key, value)?,
            "beta2" => self.beta2 = p(key, value)?,
            "m" => a.bounded_dim = p(key, value)?,
            "encoder_hidden" => a.encoder_hidden = auto(key, value)?,
            "projector_hidden" => a.projector_hidden = auto(key, value)?,
            "attention_hidden" => a.attention_hidden = auto(key, value)?,
            "classifier_hidden" => a.classifier_hidden = p(key, value)?,
            "lambda_alpha" => a.lambda_alpha = p(key, value)?,
            "lambda_p" => a.lambda_p = p(key, value)?,
            "lambda_m1" => a.lambda_m1 = p(key, value)?,
            "gamma" => a.gamma = p(key, value)?,
            "beta_kl" => a.beta_kl = p(key, value)?,
            "z" => f.z = p(key, value)?,
            "generator_hidden" => f.generator_hidden = p(key, value)?,
            "lambda_gp" => f.lambda_gp = p(key, value)?,
            "lambda_cls" => f.lambda_cls = p(key, value)?,
            "lambda_m2" => f.lambda_m2 = p(key, value)?,
            "n_critic" => f.n_critic = p(key, value)?,
            "features_per_class" => f.features_per_class = p(key, value)?,
            "disable_L_u" => self.disable_l_u = p(key, value)?,
            "one_step_attention_only" => self.one_step_attention_only = p(key, value)?,
            "disable_L_cls" => self.disable_l_cls = p(key, value)?,
            "disable_L_m1" => self.disable_l_m1 = p(key, value)?,
            "disable_L_m2" => self.disable_l_m2 = p(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.agan.gamma = 0.01;
        c.agan.encoder_hidden = Some(7);
        c.disable_l_u = true;
        c.lr = 3e-4;
        let back = TrainConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn comments_and_partial_files() {
        let c = TrainConfig::parse("# sweep\nepochs = 5  # short\n\nlambda_p=0.4\n").unwrap();
        assert_eq!(c.epochs, 5);
        assert_eq!(c.agan.lambda_p, 0.4);
        assert_eq!(c.ns, 32);
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(TrainConfig::parse("bogus = 1").is_err());
        assert!(TrainConfig::parse("ns = 0").is_err());
        assert!(TrainConfig::parse("ns").is_err());
        assert!(TrainConfig::parse("disable_L_u = yes").is_err());
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        b.disable_l_m2 = true;
        assert_ne!(a.hash(), b.hash());
    }
}
