//! Synthetic multimodal sentiment environment.
//!
//! Each sample carries three modality feature vectors whose signal component is
//! aligned with the sign of the gold score. Hard samples flip the text
//! modality's sign while audio and vision keep the true, weaker signal, so a
//! policy that leans on text misjudges the polarity of exactly those samples.
//!
//! The teacher is a rule-based stand-in for a large annotator model: it reads
//! the gold score through Gaussian noise, so some of its candidates carry the
//! wrong polarity and are removed by [`filter_and_relabel`].

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::grammar::{parse, Polarity, StructuredOutput};
use crate::profile::{score_to_polarity, DatasetProfile};

/// Think tokens used by the teacher template: a sign token per modality plus
/// an agree/conflict marker.
pub const TEACHER_THINK_TOKENS: usize = 8;

const DIRECTION_SEED: u64 = 0x5EED_D1EC;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text_feat: Vec<f64>,
    pub audio_feat: Vec<f64>,
    pub vision_feat: Vec<f64>,
    pub gold_score: f64,
    pub gold_polarity: Polarity,
    pub is_hard: bool,
}

impl Sample {
    /// A sample with all-zero features; handy for reward and metric checks.
    pub fn with_gold(id: &str, gold_score: f64, profile: &DatasetProfile, d: usize) -> Self {
        Self {
            id: id.to_string(),
            text_feat: vec![0.0; d],
            audio_feat: vec![0.0; d],
            vision_feat: vec![0.0; d],
            gold_score,
            gold_polarity: score_to_polarity(gold_score, profile),
            is_hard: false,
        }
    }

    pub fn modalities(&self) -> [&[f64]; 3] {
        [&self.text_feat, &self.audio_feat, &self.vision_feat]
    }
}

/// On-disk sample record; polarity is re-derived from the score on load.
#[derive(Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    text_feat: Vec<f64>,
    audio_feat: Vec<f64>,
    vision_feat: Vec<f64>,
    gold_score: f64,
    is_hard: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub n_samples: usize,
    pub d: usize,
    pub hard_fraction: f64,
    pub profile: DatasetProfile,
    pub seed: u64,
    pub teacher_noise: f64,
    /// Per-coordinate feature noise.
    pub noise_sigma: f64,
    pub text_strength: f64,
    /// Audio and vision signal strength on easy samples.
    pub support_strength: f64,
    /// Audio and vision signal strength on hard samples.
    pub hard_support_strength: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            d: 8,
            hard_fraction: 0.3,
            profile: DatasetProfile::sims(),
            seed: 0,
            teacher_noise: 0.2,
            noise_sigma: 0.3,
            text_strength: 1.0,
            support_strength: 0.6,
            hard_support_strength: 0.6,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        if self.n_samples == 0 {
            return Err(config_err("n_samples must be positive"));
        }
        if self.d == 0 {
            return Err(config_err("feature dimension must be positive"));
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            return Err(config_err("hard_fraction must lie in [0, 1]"));
        }
        let nonneg = [
            ("teacher_noise", self.teacher_noise),
            ("noise_sigma", self.noise_sigma),
            ("text_strength", self.text_strength),
            ("support_strength", self.support_strength),
            ("hard_support_strength", self.hard_support_strength),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(config_err(format!("{name} must be finite and nonnegative")));
            }
        }
        Ok(())
    }

    pub fn n_hard(&self) -> usize {
        (self.hard_fraction * self.n_samples as f64).round() as usize
    }
}

/// Fixed unit direction per modality (text, audio, vision), shared by every
/// dataset of the same dimension so that train and test splits agree.
pub fn modality_directions(d: usize) -> [Vec<f64>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(DIRECTION_SEED ^ d as u64);
    std::array::from_fn(|_| {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    })
}

pub fn generate_dataset(cfg: &EnvConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let profile = &cfg.profile;
    let dirs = modality_directions(cfg.d);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let n = cfg.n_samples;
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut hard = vec![false; n];
    for &i in &order[..cfg.n_hard()] {
        hard[i] = true;
    }

    let feature = |dir: &[f64], amplitude: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        dir.iter()
            .map(|w| amplitude * w + cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };

    let mut samples = Vec::with_capacity(n);
    for (i, &is_hard) in hard.iter().enumerate() {
        let gold_score = rng.random_range(profile.r_min..=profile.r_max);
        let signal = gold_score / profile.r_max.abs().max(profile.r_min.abs());
        let (text_sign, support) = if is_hard {
            (-1.0, cfg.hard_support_strength)
        } else {
            (1.0, cfg.support_strength)
        };
        let text_feat = feature(&dirs[0], text_sign * cfg.text_strength * signal, &mut rng);
        let audio_feat = feature(&dirs[1], support * signal, &mut rng);
        let vision_feat = feature(&dirs[2], support * signal, &mut rng);
        samples.push(Sample {
            id: format!("{i:05}"),
            text_feat,
            audio_feat,
            vision_feat,
            gold_score,
            gold_polarity: score_to_polarity(gold_score, profile),
            is_hard,
        });
    }
    Ok(samples)
}

/// A chain-of-thought training target for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoTRecord {
    pub sample_id: String,
    pub rendered_text: String,
}

/// Rule-based teacher. Reads the gold score through `N(0, noise^2)` noise,
/// snaps it to the grid, derives polarity from the noisy estimate, and writes
/// a think span from the signs of the modality projections.
#[derive(Debug, Clone)]
pub struct Teacher {
    pub noise: f64,
    pub profile: DatasetProfile,
    directions: [Vec<f64>; 3],
}

impl Teacher {
    pub fn new(noise: f64, profile: DatasetProfile, d: usize) -> Self {
        Self {
            noise,
            profile,
            directions: modality_directions(d),
        }
    }

    fn think_template(&self, sample: &Sample) -> Vec<String> {
        let signs: Vec<bool> = sample
            .modalities()
            .iter()
            .zip(&self.directions)
            .map(|(x, w)| x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() >= 0.0)
            .collect();
        let mut think: Vec<String> = signs
            .iter()
            .enumerate()
            .map(|(k, &pos)| format!("t{}", 2 * k + usize::from(!pos)))
            .collect();
        let agree = signs.iter().all(|&s| s == signs[0]);
        think.push(if agree { "t6" } else { "t7" }.to_string());
        think
    }

    pub fn generate_cot<R: Rng>(&self, sample: &Sample, rng: &mut R) -> CoTRecord {
        let z: f64 = rng.sample(StandardNormal);
        let estimate = self.profile.clamp(sample.gold_score + self.noise * z);
        let out = StructuredOutput::new(
            score_to_polarity(estimate, &self.profile),
            self.think_template(sample),
            self.profile.snap(estimate),
        );
        CoTRecord {
            sample_id: sample.id.clone(),
            rendered_text: out.render(),
        }
    }

    /// One candidate per sample, drawn from a single stream seeded by `seed`.
    pub fn generate_all(&self, samples: &[Sample], seed: u64) -> Vec<CoTRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        samples.iter().map(|s| self.generate_cot(s, &mut rng)).collect()
    }
}

/// Keeps candidates that parse and agree with the gold polarity, and rewrites
/// their score to the grid point nearest the gold score. Only the score
/// changes; the think span is kept as generated.
pub fn filter_and_relabel(candidates: &[CoTRecord], samples: &[Sample], profile: &DatasetProfile) -> Vec<CoTRecord> {
    let by_id: HashMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    candidates
        .iter()
        .filter_map(|c| {
            let sample = by_id.get(c.sample_id.as_str())?;
            let mut out = parse(&c.rendered_text, profile).ok()?;
            if out.polarity != sample.gold_polarity {
                return None;
            }
            out.score = profile.snap(sample.gold_score);
            Some(CoTRecord {
                sample_id: c.sample_id.clone(),
                rendered_text: out.render(),
            })
        })
        .collect()
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    write_lines(
        path,
        samples.iter().map(|s| SampleRecord {
            id: s.id.clone(),
            text_feat: s.text_feat.clone(),
            audio_feat: s.audio_feat.clone(),
            vision_feat: s.vision_feat.clone(),
            gold_score: s.gold_score,
            is_hard: s.is_hard,
        }),
    )
}

pub fn read_samples(path: &Path, profile: &DatasetProfile) -> Result<Vec<Sample>> {
    let records: Vec<SampleRecord> = read_lines(path)?;
    records
        .into_iter()
        .map(|r| {
            if !profile.contains(r.gold_score) {
                return Err(Error::Config(format!(
                    "sample {}: gold score {} outside profile {}",
                    r.id, r.gold_score, profile.name
                )));
            }
            Ok(Sample {
                gold_polarity: score_to_polarity(r.gold_score, profile),
                id: r.id,
                text_feat: r.text_feat,
                audio_feat: r.audio_feat,
                vision_feat: r.vision_feat,
                gold_score: r.gold_score,
                is_hard: r.is_hard,
            })
        })
        .collect()
}

pub fn write_cot(path: &Path, records: &[CoTRecord]) -> Result<()> {
    write_lines(path, records)
}

pub fn read_cot(path: &Path) -> Result<Vec<CoTRecord>> {
    read_lines(path)
}
