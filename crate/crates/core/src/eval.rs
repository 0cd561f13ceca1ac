//! Test protocols, per-class Top-1 metrics and attention export.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::afgn::{argmax, fit_downstream, AfgnModel, DownstreamClassifier, DownstreamConfig, Protocol};
use crate::agan::{class_rows, AganModel};
use crate::data::{Bundle, Dataset, Split};
use crate::error::{shape_err, Error, Result};
use crate::numcore::{Graph, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolTag {
    AganGzsl,
    AganZsl,
    AfgnGzsl,
    AfgnZsl,
}

impl ProtocolTag {
    pub fn is_gzsl(self) -> bool {
        matches!(self, ProtocolTag::AganGzsl | ProtocolTag::AfgnGzsl)
    }
}

impl fmt::Display for ProtocolTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolTag::AganGzsl => "AGAN-GZSL",
            ProtocolTag::AganZsl => "AGAN-ZSL",
            ProtocolTag::AfgnGzsl => "AFGN-GZSL",
            ProtocolTag::AfgnZsl => "AFGN-ZSL",
        })
    }
}

impl FromStr for ProtocolTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "AGAN-GZSL" => Ok(ProtocolTag::AganGzsl),
            "AGAN-ZSL" => Ok(ProtocolTag::AganZsl),
            "AFGN-GZSL" => Ok(ProtocolTag::AfgnGzsl),
            "AFGN-ZSL" => Ok(ProtocolTag::AfgnZsl),
            _ => Err(Error::Format(format!("unknown protocol `{s}`"))),
        }
    }
}

/// Argmax over all classes per row, as 1-based class indices.
pub fn score_gzsl<T: Scalar>(scores: &Tensor<T>) -> Result<Vec<usize>> {
    let (n, _) = scores.dims2()?;
    if n == 0 {
        return Err(Error::Data("no samples to score".into()));
    }
    Ok((0..n).map(|i| argmax(scores.row(i)) + 1).collect())
}

/// Argmax over the target columns only.
pub fn score_zsl<T: Scalar>(scores: &Tensor<T>, n_source: usize) -> Result<Vec<usize>> {
    let (n, c) = scores.dims2()?;
    if n_source >= c {
        return Err(shape_err!("{c} score columns leave no target classes after {n_source} source"));
    }
    Ok((0..n).map(|i| argmax(&scores.row(i)[n_source..]) + n_source + 1).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccuracy {
    pub classes: Vec<usize>,
    /// Percent correct per class, in `classes` order.
    pub accuracies: Vec<f64>,
    /// Unweighted mean of `accuracies`.
    pub mean: f64,
}

/// Accuracy within each class, then averaged over classes.
pub fn per_class_top1(preds: &[usize], labels: &[usize], classes: &[usize]) -> Result<ClassAccuracy> {
    if preds.len() != labels.len() {
        return Err(shape_err!("{} predictions for {} labels", preds.len(), labels.len()));
    }
    if classes.is_empty() {
        return Err(Error::Data("empty class set".into()));
    }
    let mut accuracies = Vec::with_capacity(classes.len());
    for &c in classes {
        let (mut hit, mut total) = (0usize, 0usize);
        for (&p, &y) in preds.iter().zip(labels) {
            if y == c {
                total += 1;
                hit += usize::from(p == c);
            }
        }
        if total == 0 {
            return Err(Error::Data(format!("class {c} has no samples")));
        }
        accuracies.push(100.0 * hit as f64 / total as f64);
    }
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    Ok(ClassAccuracy {
        classes: classes.to_vec(),
        accuracies,
        mean,
    })
}

pub fn harmonic_mean(s: f64, t: f64) -> f64 {
    if s + t <= 0.0 {
        0.0
    } else {
        2.0 * s * t / (s + t)
    }
}

/// Accuracies in percent. `s` and `h` are absent under the ZSL protocols.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: ProtocolTag,
    pub classes: Vec<usize>,
    pub per_class: Vec<f64>,
    pub s: Option<f64>,
    pub t: f64,
    pub h: Option<f64>,
}

impl EvalReport {
    /// Builds a report from class scores of the test-source and test-target samples.
    pub fn from_scores<T: Scalar>(
        protocol: ProtocolTag,
        scores: &Tensor<T>,
        labels: &[usize],
        n_source: usize,
        n_target: usize,
    ) -> Result<Self> {
        let (n, c) = scores.dims2()?;
        if n != labels.len() || c != n_source + n_target {
            return Err(shape_err!("scores {n}×{c} for {} labels and {} classes", labels.len(), n_source + n_target));
        }
        let target: Vec<usize> = (n_source + 1..=n_source + n_target).collect();
        if protocol.is_gzsl() {
            let preds = score_gzsl(scores)?;
            let source: Vec<usize> = (1..=n_source).collect();
            let (sp, sl) = subset(&preds, labels, |y| y <= n_source);
            let (tp, tl) = subset(&preds, labels, |y| y > n_source);
            let s = per_class_top1(&sp, &sl, &source)?;
            let t = per_class_top1(&tp, &tl, &target)?;
            Ok(Self {
                protocol,
                classes: [source, target].concat(),
                per_class: [s.accuracies, t.accuracies].concat(),
                s: Some(s.mean),
                t: t.mean,
                h: Some(harmonic_mean(s.mean, t.mean)),
            })
        } else {
            let (rows, tl): (Vec<usize>, Vec<usize>) =
                labels.iter().enumerate().filter(|(_, &y)| y > n_source).map(|(i, &y)| (i, y)).unzip();
            let mut sub = Vec::with_capacity(rows.len() * c);
            for &i in &rows {
                sub.extend_from_slice(scores.row(i));
            }
            if rows.is_empty() {
                return Err(Error::Data("no target samples to score".into()));
            }
            let preds = score_zsl(&Tensor::new([rows.len(), c], sub)?, n_source)?;
            let t = per_class_top1(&preds, &tl, &target)?;
            Ok(Self {
                protocol,
                classes: target,
                per_class: t.accuracies,
                s: None,
                t: t.mean,
                h: None,
            })
        }
    }

    /// Flat `key = value` text, one entry per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("protocol = {}\n", self.protocol);
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| format!("{x:?}"));
        out += &format!("S = {}\nT = {:?}\nH = {}\n", fmt_opt(self.s), self.t, fmt_opt(self.h));
        for (c, a) in self.classes.iter().zip(&self.per_class) {
            out += &format!("class.{c} = {a:?}\n");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut protocol = None;
        let (mut s, mut t, mut h) = (None, None, None);
        let mut entries = Vec::new();
        let num = |v: &str| -> Result<f64> { v.parse().map_err(|_| Error::Format(format!("bad number `{v}`"))) };
        let opt = |v: &str| -> Result<Option<f64>> { if v == "none" { Ok(None) } else { num(v).map(Some) } };
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "protocol" => protocol = Some(v.parse()?),
                "S" => s = opt(v)?,
                "T" => t = Some(num(v)?),
                "H" => h = opt(v)?,
                _ => {
                    let c = k
                        .strip_prefix("class.")
                        .and_then(|c| c.parse::<usize>().ok())
                        .ok_or_else(|| Error::Format(format!("unknown key `{k}`")))?;
                    entries.push((c, num(v)?));
                }
            }
        }
        Ok(Self {
            protocol: protocol.ok_or_else(|| Error::Format("missing protocol".into()))?,
            classes: entries.iter().map(|e| e.0).collect(),
            per_class: entries.iter().map(|e| e.1).collect(),
            s,
            t: t.ok_or_else(|| Error::Format("missing T".into()))?,
            h,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"));
        let mut out = format!("{:<10} {:>6} {:>6} {:>6}\n", "protocol", "S", "T", "H");
        out += &format!("{:<10} {:>6} {:>6.1} {:>6}\n", self.protocol, pct(self.s), self.t, pct(self.h));
        for (c, a) in self.classes.iter().zip(&self.per_class) {
            out += &format!("  class {c:>3}: {a:.1}\n");
        }
        out
    }
}

fn subset(preds: &[usize], labels: &[usize], keep: impl Fn(usize) -> bool) -> (Vec<usize>, Vec<usize>) {
    preds.iter().zip(labels).filter(|(_, &y)| keep(y)).map(|(&p, &y)| (p, y)).unzip()
}

/// Per-candidate outputs of the embedding network on a set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateOutputs<T = f64> {
    pub samples: Vec<usize>,
    /// `[N, C]`: column `c` holds logit `c` of the pass conditioned on class `c + 1`.
    pub scores: Tensor<T>,
    /// One `[N, m]` embedding matrix per candidate class.
    pub embeddings: Vec<Tensor<T>>,
}

const CHUNK: usize = 64;

/// Runs the per-candidate forward pass over `samples`, in chunks spread
/// across threads; results are assembled in sample order.
pub fn candidate_outputs<T: Scalar>(
    agan: &AganModel<T>,
    data: &Dataset<T>,
    samples: &[usize],
    one_step_only: bool,
) -> Result<CandidateOutputs<T>> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to score".into()));
    }
    let chunks: Vec<&[usize]> = samples.chunks(CHUNK).collect();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(chunks.len());
    let run = |idx: &[usize]| -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        let raw = data.features.gather(idx)?;
        agan.candidate_pass(&raw, &data.attr_sem, &data.class_sem, one_step_only)
    };
    let mut parts: Vec<Option<Result<(Vec<Tensor<T>>, Tensor<T>)>>> = (0..chunks.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let per = chunks.len().div_ceil(threads);
        let handles: Vec<_> = chunks
            .chunks(per)
            .map(|group| s.spawn(move || group.iter().map(|c| run(c)).collect::<Vec<_>>()))
            .collect();
        let mut k = 0;
        for h in handles {
            for r in h.join().expect("scoring thread panicked") {
                parts[k] = Some(r);
                k += 1;
            }
        }
    });
    let n_classes = data.class_sem.n_classes();
    let m = agan.bounded_dim();
    let mut scores = Vec::with_capacity(samples.len() * n_classes);
    let mut embeds = vec![Vec::with_capacity(samples.len() * m); n_classes];
    for part in parts {
        let (e, s) = part.expect("chunk result")?;
        scores.extend_from_slice(s.data());
        for (dst, src) in embeds.iter_mut().zip(&e) {
            dst.extend_from_slice(src.data());
        }
    }
    Ok(CandidateOutputs {
        samples: samples.to_vec(),
        scores: Tensor::new([samples.len(), n_classes], scores)?,
        embeddings: embeds
            .into_iter()
            .map(|d| Tensor::new([samples.len(), m], d))
            .collect::<Result<_>>()?,
    })
}

/// Test-source then test-target sample indices.
pub fn test_samples<T: Scalar>(data: &Dataset<T>) -> Vec<usize> {
    let mut idx = data.features.indices(Split::TestSource);
    idx.extend(data.features.indices(Split::TestTarget));
    idx
}

/// Scores every class with the downstream classifier, reading class `c`
/// from the embedding conditioned on `c`. Classes the classifier does not
/// cover score the lowest finite value.
pub fn downstream_scores<T: Scalar>(clf: &DownstreamClassifier<T>, out: &CandidateOutputs<T>) -> Result<Tensor<T>> {
    let n = out.samples.len();
    let n_classes = out.embeddings.len();
    let mut scores = vec![T::min_value(); n * n_classes];
    for (j, &c) in clf.classes.iter().enumerate() {
        let emb = out
            .embeddings
            .get(c - 1)
            .ok_or_else(|| Error::Data(format!("classifier scores class {c} beyond the candidate set")))?;
        let logits = clf.logits(emb)?;
        for i in 0..n {
            scores[i * n_classes + c - 1] = logits.get2(i, j);
        }
    }
    Tensor::new([n, n_classes], scores)
}

pub fn evaluate_scores<T: Scalar>(
    protocol: ProtocolTag,
    data: &Dataset<T>,
    samples: &[usize],
    scores: &Tensor<T>,
) -> Result<EvalReport> {
    let labels: Vec<usize> = samples.iter().map(|&i| data.features.labels[i]).collect();
    EvalReport::from_scores(protocol, scores, &labels, data.class_sem.n_source(), data.class_sem.n_target())
}

/// Embedding-network protocol on the test splits.
pub fn evaluate_agan<T: Scalar>(
    agan: &AganModel<T>,
    data: &Dataset<T>,
    gzsl: bool,
    one_step_only: bool,
) -> Result<EvalReport> {
    let samples = test_samples(data);
    let out = candidate_outputs(agan, data, &samples, one_step_only)?;
    let tag = if gzsl { ProtocolTag::AganGzsl } else { ProtocolTag::AganZsl };
    evaluate_scores(tag, data, &samples, &out.scores)
}

/// Synthesize-then-classify protocol: fits the downstream classifier on
/// generated features, then scores per-candidate embeddings of test samples.
pub fn evaluate_afgn<T: Scalar>(
    afgn: &AfgnModel<T>,
    agan: &AganModel<T>,
    data: &Dataset<T>,
    gzsl: bool,
    seed: u64,
    one_step_only: bool,
) -> Result<(EvalReport, DownstreamClassifier<T>)> {
    let set = afgn.synthesize_features(&data.class_sem, afgn.config.features_per_class, seed)?;
    let protocol = if gzsl { Protocol::Gzsl } else { Protocol::Zsl };
    let clf = fit_downstream(&set, data.class_sem.n_source(), protocol, &DownstreamConfig::default())?;
    let samples = test_samples(data);
    let out = candidate_outputs(agan, data, &samples, one_step_only)?;
    let scores = downstream_scores(&clf, &out)?;
    let tag = if gzsl { ProtocolTag::AfgnGzsl } else { ProtocolTag::AfgnZsl };
    Ok((evaluate_scores(tag, data, &samples, &scores)?, clf))
}

/// Attention weights of one sample, conditioned on its own class.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub sample: usize,
    pub alpha: Vec<f64>,
    pub alpha2: Vec<f64>,
    pub dominant: Vec<usize>,
    pub dominant_prob: Vec<f64>,
}

impl AttentionMap {
    /// Region with the largest second-level weight, lowest index on ties.
    pub fn top_region(&self) -> usize {
        argmax(&self.alpha2)
    }
}

pub fn attention_maps<T: Scalar>(agan: &AganModel<T>, data: &Dataset<T>, samples: &[usize]) -> Result<Vec<AttentionMap>> {
    let r = agan.dims.regions;
    let mut maps = Vec::with_capacity(samples.len());
    for idx in samples.chunks(CHUNK) {
        let raw = data.features.gather(idx)?;
        let labels: Vec<usize> = idx.iter().map(|&i| data.features.labels[i]).collect();
        let rows = class_rows(&data.class_sem, &labels, r)?;
        let mut g = Graph::new();
        let f = agan.forward(&mut g, &raw, &data.attr_sem, &rows, None, false)?;
        let second = f.second.expect("two-step forward");
        let alpha = g.value(f.first.alpha);
        let alpha2 = g.value(second.alpha2);
        let h_t = g.value(f.first.h_t);
        let to64 = |t: &Tensor<T>, b: usize| t.data()[b * r..(b + 1) * r].iter().map(|x| x.to_f64_lossless()).collect();
        for (b, &sample) in idx.iter().enumerate() {
            maps.push(AttentionMap {
                sample,
                alpha: to64(alpha, b),
                alpha2: to64(alpha2, b),
                dominant: f.first.t_argmax[b * r..(b + 1) * r].to_vec(),
                dominant_prob: to64(h_t, b),
            });
        }
    }
    Ok(maps)
}

/// Writes the maps as a bundle plus `attention.tsv` in `dir`.
pub fn export_attention(maps: &[AttentionMap], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if maps.is_empty() {
        return Err(Error::Data("no attention maps to export".into()));
    }
    let n = maps.len();
    let r = maps[0].alpha.len();
    let flat = |f: &dyn Fn(&AttentionMap) -> &[f64]| -> Result<Tensor<f64>> {
        Tensor::new([n, r], maps.iter().flat_map(|m| f(m).iter().copied()).collect())
    };
    let mut b = Bundle::new();
    b.meta.insert("kind".into(), "attention".into());
    b.put_u32("sample", vec![n], maps.iter().map(|m| m.sample as u32).collect())?;
    b.put_f64("alpha", &flat(&|m| &m.alpha)?)?;
    b.put_f64("alpha_tilde", &flat(&|m| &m.alpha2)?)?;
    b.put_f64("h_t", &flat(&|m| &m.dominant_prob)?)?;
    b.put_u32(
        "dominant_attribute",
        vec![n, r],
        maps.iter().flat_map(|m| m.dominant.iter().map(|&k| k as u32)).collect(),
    )?;
    b.save(dir)?;

    let mut text = String::from("sample\tregion\talpha\talpha_tilde\tattribute\th_t\n");
    for m in maps {
        for i in 0..r {
            text += &format!(
                "{}\t{}\t{:.6}\t{:.6}\t{}\t{:.6}\n",
                m.sample, i, m.alpha[i], m.alpha2[i], m.dominant[i], m.dominant_prob[i]
            );
        }
    }
    let path = dir.join("attention.tsv");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gzsl_and_zsl_predictions() {
        let s = Tensor::from_rows(&[vec![3.0, 1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(score_gzsl(&s).unwrap(), vec![1]);
        assert_eq!(score_zsl(&s, 2).unwrap(), vec![4]);
        let tie = Tensor::from_rows(&[vec![1.0, 1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(score_gzsl(&tie).unwrap(), vec![1]);
        assert_eq!(score_zsl(&tie, 2).unwrap(), vec![3]);
    }

    #[test]
    fn per_class_not_pooled() {
        let acc = per_class_top1(&[1, 2, 1, 1], &[1, 2, 2, 2], &[1, 2]).unwrap();
        assert!((acc.mean - (100.0 + 100.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(per_class_top1(&[1, 1], &[1, 1], &[1]).unwrap().mean, 100.0);
        assert!(per_class_top1(&[1], &[1], &[1, 2]).is_err());
    }

    #[test]
    fn harmonic_mean_cases() {
        assert!((harmonic_mean(64.8, 81.4) - 72.2).abs() < 0.1);
        assert_eq!(harmonic_mean(40.0, 40.0), 40.0);
        assert_eq!(harmonic_mean(0.0, 80.0), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
    }

    #[test]
    fn report_text_round_trip() {
        let scores = Tensor::from_rows(&[
            vec![3.0, 1.0, 0.0, 2.0],
            vec![0.0, 5.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.5],
            vec![9.0, 0.0, 0.0, 1.0],
        ])
        .unwrap();
        let labels = [1, 2, 3, 4];
        let r = EvalReport::from_scores(ProtocolTag::AganGzsl, &scores, &labels, 2, 2).unwrap();
        assert_eq!(r.s, Some(100.0));
        assert_eq!(r.t, 50.0);
        assert_eq!(EvalReport::from_text(&r.to_text()).unwrap(), r);

        let z = EvalReport::from_scores(ProtocolTag::AfgnZsl, &scores, &labels, 2, 2).unwrap();
        assert_eq!(z.t, 100.0);
        assert_eq!(z.s, None);
        assert_eq!(EvalReport::from_text(&z.to_text()).unwrap(), z);
    }
}
