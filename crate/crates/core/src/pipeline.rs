//! Experiment configuration and the end-to-end pipeline: data generation,
//! supervised cold start, the second-stage arms and their evaluation.

use serde::{Deserialize, Serialize};

use crate::env::{filter_and_relabel, generate_dataset, CoTRecord, EnvConfig, Sample, Teacher};
use crate::error::{config_err, Result};
use crate::grpo::{grpo_train, Arm, GrpoConfig, GrpoOutcome};
use crate::metrics::{evaluate, MetricsReport};
use crate::policy::{PolicyModel, PolicyParams};
use crate::sft::{prepare_examples, sft_train, SftConfig};
use crate::vocab::{DecodeMode, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub n_think: usize,
    pub max_think: usize,
    pub free_decoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            n_think: 8,
            max_think: 6,
            free_decoding: false,
        }
    }
}

/// Test-split sizes and the parameters of the shifted split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_test: usize,
    pub shift_noise_factor: f64,
    pub shift_hard_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_test: 500,
            shift_noise_factor: 2.0,
            shift_hard_fraction: 0.5,
        }
    }
}

/// Everything one run needs. `seed` drives every stage; the per-stage seeds
/// inside `env`, `sft` and `grpo` are overwritten by [`ExperimentConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub sft: SftConfig,
    pub grpo: GrpoConfig,
    pub eval: EvalConfig,
}

const TEST_SEED_SALT: u64 = 0x7E57_0000_0000_0001;
const SHIFT_SEED_SALT: u64 = 0x5117_0000_0000_0002;
const TEACHER_SEED_SALT: u64 = 0x7EAC_0000_0000_0003;
const INIT_SEED_SALT: u64 = 0x1A17_0000_0000_0004;
const SFT_SEED_SALT: u64 = 0x0057_0000_0000_0005;
const GRPO_SEED_SALT: u64 = 0x6290_0000_0000_0006;

impl ExperimentConfig {
    /// Copy with every stage seed derived from `seed`.
    pub fn resolve(&self) -> Self {
        let mut c = self.clone();
        c.env.seed = self.seed;
        c.sft.seed = self.seed ^ SFT_SEED_SALT;
        c.grpo.seed = self.seed ^ GRPO_SEED_SALT;
        c
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }.resolve()
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.sft.validate()?;
        self.grpo.validate()?;
        if self.model.hidden == 0 {
            return Err(config_err("model.hidden must be positive"));
        }
        if self.eval.n_test == 0 {
            return Err(config_err("eval.n_test must be positive"));
        }
        if !(self.eval.shift_noise_factor >= 0.0) || !(0.0..=1.0).contains(&self.eval.shift_hard_fraction) {
            return Err(config_err("invalid shifted-split parameters"));
        }
        Ok(())
    }

    pub fn init_seed(&self) -> u64 {
        self.seed ^ INIT_SEED_SALT
    }

    pub fn teacher_seed(&self) -> u64 {
        self.seed ^ TEACHER_SEED_SALT
    }

    pub fn test_env(&self) -> EnvConfig {
        EnvConfig {
            n_samples: self.eval.n_test,
            seed: self.seed ^ TEST_SEED_SALT,
            ..self.env.clone()
        }
    }

    pub fn shift_env(&self) -> EnvConfig {
        EnvConfig {
            n_samples: self.eval.n_test,
            seed: self.seed ^ SHIFT_SEED_SALT,
            noise_sigma: self.env.noise_sigma * self.eval.shift_noise_factor,
            hard_fraction: self.eval.shift_hard_fraction,
            ..self.env.clone()
        }
    }

    pub fn build_model(&self) -> Result<PolicyModel> {
        let vocab = Vocabulary::new(&self.env.profile, self.model.n_think)?;
        let mode = if self.model.free_decoding {
            DecodeMode::Free
        } else {
            DecodeMode::Grammar
        };
        Ok(PolicyModel::new(vocab, self.model.max_think, self.env.d, self.model.hidden).with_mode(mode))
    }
}

/// Generated data of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBundle {
    pub train: Vec<Sample>,
    pub candidates: Vec<CoTRecord>,
    pub filtered: Vec<CoTRecord>,
    pub test: Vec<Sample>,
    pub shift: Vec<Sample>,
}

pub fn generate_data(cfg: &ExperimentConfig) -> Result<DataBundle> {
    let train = generate_dataset(&cfg.env)?;
    let teacher = Teacher::new(cfg.env.teacher_noise, cfg.env.profile.clone(), cfg.env.d);
    let candidates = teacher.generate_all(&train, cfg.teacher_seed());
    let filtered = filter_and_relabel(&candidates, &train, &cfg.env.profile);
    Ok(DataBundle {
        test: generate_dataset(&cfg.test_env())?,
        shift: generate_dataset(&cfg.shift_env())?,
        train,
        candidates,
        filtered,
    })
}

pub fn run_sft(
    cfg: &ExperimentConfig,
    model: &PolicyModel,
    init: &PolicyParams,
    data: &DataBundle,
) -> Result<(PolicyParams, Vec<f64>)> {
    let examples = prepare_examples(model, &data.train, &data.filtered)?;
    sft_train(model, init, &examples, &cfg.sft)
}

pub fn run_arm(
    cfg: &ExperimentConfig,
    model: &PolicyModel,
    sft: &PolicyParams,
    data: &DataBundle,
    arm: Arm,
) -> Result<GrpoOutcome> {
    grpo_train(model, sft, &data.train, &arm.apply(&cfg.grpo))
}

/// Parameters and reports of one stage.
#[derive(Debug, Clone)]
pub struct StageResult {
    pub name: String,
    pub params: PolicyParams,
    pub test: MetricsReport,
    pub shift: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub config: ExperimentConfig,
    pub data: DataBundle,
    pub sft_loss: Vec<f64>,
    pub init: StageResult,
    pub sft: StageResult,
    pub arms: Vec<(Arm, GrpoOutcome, StageResult)>,
}

impl PipelineResult {
    pub fn arm(&self, arm: Arm) -> &StageResult {
        &self.arms.iter().find(|(a, _, _)| *a == arm).expect("arm was run").2
    }

    pub fn outcome(&self, arm: Arm) -> &GrpoOutcome {
        &self.arms.iter().find(|(a, _, _)| *a == arm).expect("arm was run").1
    }
}

fn stage(model: &PolicyModel, name: &str, params: PolicyParams, data: &DataBundle) -> Result<StageResult> {
    Ok(StageResult {
        name: name.to_string(),
        test: evaluate(model, &params, &data.test)?,
        shift: evaluate(model, &params, &data.shift)?,
        params,
    })
}

/// Fresh init, SFT, then every requested arm from the same SFT policy.
pub fn run_pipeline(cfg: &ExperimentConfig, arms: &[Arm]) -> Result<PipelineResult> {
    let cfg = cfg.resolve();
    cfg.validate()?;
    let model = cfg.build_model()?;
    let data = generate_data(&cfg)?;
    let init = model.init_params(cfg.init_seed());
    let (sft_params, sft_loss) = run_sft(&cfg, &model, &init, &data)?;
    let init = stage(&model, "init", init, &data)?;
    let sft = stage(&model, "sft", sft_params, &data)?;
    let mut out = Vec::with_capacity(arms.len());
    for &arm in arms {
        let outcome = run_arm(&cfg, &model, &sft.params, &data, arm)?;
        let res = stage(&model, arm.as_str(), outcome.params.clone(), &data)?;
        out.push((arm, outcome, res));
    }
    Ok(PipelineResult {
        config: cfg,
        data,
        sft_loss,
        init,
        sft,
        arms: out,
    })
}
