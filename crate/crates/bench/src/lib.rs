//! Fixtures shared by the benchmarks: a default-sized model, an SFT-style
//! batch and a batch of rollout groups.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use senti_core::grpo::{collect_groups, GrpoConfig, RolloutGroup};
use senti_core::pipeline::{generate_data, ExperimentConfig};
use senti_core::sft::{prepare_examples, SftExample};
use senti_core::{PolicyModel, PolicyParams, Sample};

pub struct Fixture {
    pub model: PolicyModel,
    pub params: PolicyParams,
    pub samples: Vec<Sample>,
    pub examples: Vec<SftExample>,
    pub grpo: GrpoConfig,
}

/// Default configuration on a reduced dataset.
pub fn fixture(n_samples: usize) -> Fixture {
    let mut cfg = ExperimentConfig::default();
    cfg.env.n_samples = n_samples;
    cfg.eval.n_test = n_samples;
    let cfg = cfg.resolve();
    let model = cfg.build_model().expect("default model");
    let data = generate_data(&cfg).expect("data");
    let examples = prepare_examples(&model, &data.train, &data.filtered).expect("examples");
    Fixture {
        params: model.init_params(cfg.init_seed()),
        model,
        samples: data.train,
        examples,
        grpo: cfg.grpo,
    }
}

impl Fixture {
    pub fn groups(&self, n: usize, seed: u64) -> Vec<RolloutGroup> {
        let batch: Vec<&Sample> = self.samples.iter().take(n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        collect_groups(&self.model, &self.params, &batch, &self.grpo, &mut rng)
            .expect("groups")
            .0
    }
}
