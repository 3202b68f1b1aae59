use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, DiscriminatorSpec, DiscriminatorWeights, GeneratorSpec, GeneratorWeights};
use crate::error::{Error, Result};
use crate::nn;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_l1: f64,
    /// Weight of the adversarial term. Zero disables the discriminator.
    pub lambda_gan: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.5, beta2: 0.999, lambda_l1: 100.0, lambda_gan: 1.0 }
    }
}

impl HyperParams {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, ..AdamConfig::default() }
    }
}

/// Networks and optimizer moments; everything a resumed run needs besides
/// the data stream position.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub generator: GeneratorWeights,
    pub discriminator: DiscriminatorWeights,
    pub gen_opt: Adam,
    pub disc_opt: Adam,
    /// Completed iterations.
    pub iteration: u64,
}

impl TrainState {
    pub fn init(gspec: GeneratorSpec, dspec: DiscriminatorSpec, rng: &mut impl Rng) -> Self {
        let generator = GeneratorWeights::init(gspec, rng);
        let discriminator = DiscriminatorWeights::init(dspec, rng);
        let gen_opt = Adam::new(&generator);
        let disc_opt = Adam::new(&discriminator);
        Self { generator, discriminator, gen_opt, disc_opt, iteration: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub l1: f32,
    pub gan_g: f32,
    pub gan_d: f32,
}

pub struct StepOutput {
    pub metrics: StepMetrics,
    /// Generator output for the batch, before this step's update.
    pub prediction: Tensor,
}

fn finite(v: f32, iteration: u64, component: &'static str) -> Result<f32> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { iteration, component })
    }
}

/// One discriminator update on the real pair and the detached fake pair,
/// then one generator update on `λ_l1 · L1 + λ_gan · BCE(D(x, G(x)), real)`.
/// With `λ_gan == 0` the discriminator is neither evaluated nor updated.
pub fn train_step(state: &mut TrainState, inputs: &Tensor, targets: &Tensor, hp: &HyperParams) -> Result<StepOutput> {
    let iteration = state.iteration + 1;
    let adam = hp.adam();
    let trace = state.generator.forward_traced(inputs)?;
    let fake = &trace.output;
    if fake.shape() != targets.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", fake.shape(), targets.shape())));
    }

    let (l1, d_l1) = nn::l1_loss(fake, targets);
    let l1 = finite(l1, iteration, "l1")?;
    let mut d_fake = d_l1.map(|g| g * hp.lambda_l1 as f32);

    let (mut gan_g, mut gan_d) = (0.0, 0.0);
    if hp.lambda_gan != 0.0 {
        let disc = &state.discriminator;
        let real_tr = disc.forward_traced(inputs, targets)?;
        let fake_tr = disc.forward_traced(inputs, fake)?;
        let (loss_real, d_real) = nn::bce_with_logits(&real_tr.logits, true);
        let (loss_fake, d_fake_logits) = nn::bce_with_logits(&fake_tr.logits, false);
        gan_d = finite(0.5 * (loss_real + loss_fake), iteration, "gan_d")?;
        let (mut g_disc, _) = disc.backward(&real_tr, &d_real.map(|g| 0.5 * g));
        let (g_fake, _) = disc.backward(&fake_tr, &d_fake_logits.map(|g| 0.5 * g));
        for (a, (_, b)) in super::Parameters::params_mut(&mut g_disc).into_iter().zip(super::Parameters::named(&g_fake))
        {
            a.add_assign(b);
        }
        state.disc_opt.update(&adam, &mut state.discriminator, &g_disc);

        let disc = &state.discriminator;
        let adv_tr = disc.forward_traced(inputs, fake)?;
        let (loss_adv, d_adv) = nn::bce_with_logits(&adv_tr.logits, true);
        gan_g = finite(loss_adv, iteration, "gan_g")?;
        let (_, d_candidate) = disc.backward(&adv_tr, &d_adv);
        for (a, b) in d_fake.data_mut().iter_mut().zip(d_candidate.data()) {
            *a += hp.lambda_gan as f32 * b;
        }
    }

    let (g_gen, _) = state.generator.backward(&trace, &d_fake);
    state.gen_opt.update(&adam, &mut state.generator, &g_gen);
    state.iteration = iteration;
    Ok(StepOutput { metrics: StepMetrics { l1, gan_g, gan_d }, prediction: trace.output })
}
