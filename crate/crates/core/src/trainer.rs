//! Two-path training.
//!
//! Each iteration runs `n_critic` critic updates on fresh real batches and
//! prior-driven composites, then one joint update of extractor and
//! generator:
//!
//! * reconstruction path: `z_r ~ E(I_gt)`, fill the hole of `I_gt` with
//!   `G(., z_r)`; L1 to `I_gt` and KL of the posterior.
//! * generative path: `z ~ N(0, I)`, fill the hole of `I_raw`; L1 to
//!   `I_raw`, KL of `E(I_cf)` (extractor only), L1 between the recovered mean
//!   and `z` (generator only), and the two adversarial terms (critics frozen).

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::{apply_mask, generate_synthetic_dataset, read_image, Dataset, MaskSpec};
use crate::error::{Error, Result};
use crate::latent::{reparameterize, standard_normal, tile_latent, LatentSample};
use crate::losses::{
    consistency_loss, critic_loss, generator_adv_loss, kl_of, latent_consistency_loss, total_objective, LossParts,
    LossReport,
};
use crate::nn::{composite, CriticNets, ExtractorNet, GeneratorNet};
use crate::tensor::{no_grad, AdamState, NetworkParams, Shape, Tensor};

/// Tensors of one reconstruction pass.
#[derive(Clone, Debug)]
pub struct ReconstructionOutput {
    /// Posterior with `z` set to the sampled `z_r`.
    pub posterior: LatentSample,
    pub generated: Tensor,
    pub composite: Tensor,
    pub cons_e: Tensor,
    pub kl_e: Tensor,
}

/// Posterior code from `gt`, completion of its hole, and the path's losses.
/// `eps` is the standard-normal draw used for the reparameterization.
pub fn reconstruction_path(
    extractor: &ExtractorNet,
    generator: &GeneratorNet,
    gt: &Tensor,
    mask: &Tensor,
    eps: &Tensor,
) -> Result<ReconstructionOutput> {
    let s = gt.shape();
    let mut posterior = extractor.forward(gt)?;
    let z_r = reparameterize(&posterior, eps)?;
    posterior.z = Some(z_r.clone());
    let masked = apply_mask(gt, mask)?;
    let generated = generator.forward(&masked, mask, &tile_latent(&z_r, s.h, s.w)?)?;
    let composite = composite(gt, &generated, mask)?;
    let cons_e = consistency_loss(&composite, gt)?;
    let kl_e = kl_of(&posterior)?;
    Ok(ReconstructionOutput {
        posterior,
        generated,
        composite,
        cons_e,
        kl_e,
    })
}

/// Tensors of one generative pass.
#[derive(Clone, Debug)]
pub struct GenerativeOutput {
    pub z: Tensor,
    pub generated: Tensor,
    pub composite: Tensor,
    /// Mean code the extractor recovers from the composite, `(N, J, 1, 1)`.
    pub z_f: Tensor,
    pub kl_g: Tensor,
    pub cons_g: Tensor,
    pub latent_cons: Tensor,
    pub adv_global: Tensor,
    pub adv_local: Tensor,
}

/// Completion of `raw` driven by the prior code `z`.
///
/// Gradient routing: `kl_g` reaches only the extractor (the composite is
/// detached), `latent_cons` only the generator (extractor parameters are
/// detached). Pass detached critics to keep them out of the graph.
pub fn generative_path(
    extractor: &ExtractorNet,
    generator: &GeneratorNet,
    critics: &CriticNets,
    raw: &Tensor,
    mask: &MaskSpec,
    z: &Tensor,
) -> Result<GenerativeOutput> {
    let s = raw.shape();
    let m = mask.tensor();
    let masked = apply_mask(raw, &m)?;
    let generated = generator.forward(&masked, &m, &tile_latent(z, s.h, s.w)?)?;
    let composite = composite(raw, &generated, &m)?;
    let cons_g = consistency_loss(&composite, raw)?;

    let kl_g = kl_of(&extractor.forward(&composite.detach())?)?;
    let z_f = extractor.detached().forward(&composite)?.mu;
    let latent_cons = latent_consistency_loss(&z_f, z)?;

    let region = mask.region(s.c);
    let adv_global = generator_adv_loss(|x: &Tensor| critics.global.forward(x), &composite)?;
    let adv_local = generator_adv_loss(|x: &Tensor| critics.local.forward(&x.crop(region)?), &composite)?;
    Ok(GenerativeOutput {
        z: z.clone(),
        generated,
        composite,
        z_f,
        kl_g,
        cons_g,
        latent_cons,
        adv_global,
        adv_local,
    })
}

/// Critic objectives of one update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CriticReport {
    pub global: f32,
    pub local: f32,
    pub penalty_global: f32,
    pub penalty_local: f32,
}

/// One Adam step on both critics. `u_global` and `u_local` are per-sample
/// interpolation coefficients `(N, 1, 1, 1)`. The local critic reads the hole
/// crop; its penalty gradient is masked to hole pixels of the full frame.
#[allow(clippy::too_many_arguments)]
pub fn critic_step(
    critics: &CriticNets,
    opt_global: &mut AdamState,
    opt_local: &mut AdamState,
    real: &Tensor,
    fake: &Tensor,
    mask: &MaskSpec,
    u_global: &Tensor,
    u_local: &Tensor,
    lambda: f32,
) -> Result<CriticReport> {
    let region = mask.region(real.shape().c);
    let m = mask.tensor();
    let fake = fake.detach();
    let lg = critic_loss(|x: &Tensor| critics.global.forward(x), real, &fake, u_global, None, lambda)?;
    let ll = critic_loss(
        |x: &Tensor| critics.local.forward(&x.crop(region)?),
        real,
        &fake,
        u_local,
        Some(&m),
        lambda,
    )?;
    let report = CriticReport {
        global: lg.total.item(),
        local: ll.total.item(),
        penalty_global: lg.penalty.item(),
        penalty_local: ll.penalty.item(),
    };
    for (name, v) in [("critic_global", report.global), ("critic_local", report.local)] {
        if !v.is_finite() {
            return Err(Error::NonFinite { what: name.to_string() });
        }
    }
    critics.global.params.zero_grad();
    critics.local.params.zero_grad();
    lg.total.add(&ll.total)?.backward()?;
    fill_missing_grads(&critics.global.params);
    fill_missing_grads(&critics.local.params);
    opt_global.step(&critics.global.params)?;
    opt_local.step(&critics.local.params)?;
    Ok(report)
}

/// Parameters the loss never reached get a zero gradient so the optimizer
/// treats them uniformly.
fn fill_missing_grads(params: &NetworkParams) {
    for (_, p) in params.iter() {
        if p.grad().is_none() {
            p.accumulate_grad(&vec![0.0; p.numel()]);
        }
    }
}

/// Callbacks invoked during training.
pub trait TrainObserver {
    /// Every composite the trainer builds, with the image it completes.
    fn on_composite(&mut self, _iteration: u64, _input: &Tensor, _composite: &Tensor, _mask: &MaskSpec) -> Result<()> {
        Ok(())
    }

    /// After each completed iteration; `report.iteration` equals `state.iteration`.
    fn on_iteration(&mut self, _state: &TrainState, _report: &LossReport) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Everything needed to continue a run bit-identically.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    /// Completed iterations.
    pub iteration: u64,
    pub extractor: ExtractorNet,
    pub generator: GeneratorNet,
    pub critics: CriticNets,
    pub opt_extractor: AdamState,
    pub opt_generator: AdamState,
    pub opt_global: AdamState,
    pub opt_local: AdamState,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    /// Fresh networks initialized from `config.seed`.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config
            .validate()
            .map_err(|m| Error::invalid("TrainState", m))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let res = (config.resolution, config.resolution);
        let extractor = ExtractorNet::new(3, res, config.latent_dim, &mut rng)?;
        let generator = GeneratorNet::new(3, config.latent_dim, config.generator_width, &mut rng)?;
        let critics = CriticNets::new(3, res, (config.hole, config.hole), config.critic_width, &mut rng)?;
        let adam = config.adam();
        Ok(Self {
            opt_extractor: AdamState::new(&extractor.params, adam),
            opt_generator: AdamState::new(&generator.params, adam),
            opt_global: AdamState::new(&critics.global.params, adam),
            opt_local: AdamState::new(&critics.local.params, adam),
            config: config.clone(),
            iteration: 0,
            extractor,
            generator,
            critics,
            rng,
        })
    }

    pub fn mask(&self) -> MaskSpec {
        let (r, h) = (self.config.resolution, self.config.hole);
        MaskSpec::center(r, r, h, h).expect("validated config")
    }

    fn draw_batch(&mut self, data: &Dataset) -> Tensor {
        let idx: Vec<usize> = (0..self.config.batch_size)
            .map(|_| self.rng.random_range(0..data.len()))
            .collect();
        data.batch(&idx)
    }

    fn draw_normal(&mut self) -> Tensor {
        standard_normal(Shape::new(self.config.batch_size, self.config.latent_dim, 1, 1), &mut self.rng)
    }

    fn draw_uniform(&mut self) -> Tensor {
        let n = self.config.batch_size;
        let u = (0..n).map(|_| self.rng.random::<f32>()).collect();
        Tensor::new(Shape::new(n, 1, 1, 1), u).expect("finite")
    }

    /// One full iteration. Returns the report for the new iteration number.
    pub fn step(&mut self, data: &Dataset, observer: &mut dyn TrainObserver) -> Result<LossReport> {
        check_dataset(&self.config, data)?;
        let it = self.iteration + 1;
        let mask = self.mask();
        let m = mask.tensor();

        for _ in 0..self.config.n_critic {
            let real = self.draw_batch(data);
            let z = self.draw_normal();
            let (u_g, u_l) = (self.draw_uniform(), self.draw_uniform());
            let fake = no_grad(|| -> Result<Tensor> {
                let raw = self.draw_batch(data);
                let masked = apply_mask(&raw, &m)?;
                let g = self.generator.forward(&masked, &m, &tile_latent(&z, raw.shape().h, raw.shape().w)?)?;
                let c = composite(&raw, &g, &m)?;
                observer.on_composite(it, &raw, &c, &mask)?;
                Ok(c)
            })?;
            critic_step(
                &self.critics,
                &mut self.opt_global,
                &mut self.opt_local,
                &real,
                &fake,
                &mask,
                &u_g,
                &u_l,
                self.config.weights.lambda,
            )?;
        }

        let gt = self.draw_batch(data);
        let eps = self.draw_normal();
        let raw = self.draw_batch(data);
        let z = self.draw_normal();

        let rec = reconstruction_path(&self.extractor, &self.generator, &gt, &m, &eps)?;
        observer.on_composite(it, &gt, &rec.composite, &mask)?;
        let frozen = self.critics.detached();
        let gen = generative_path(&self.extractor, &self.generator, &frozen, &raw, &mask, &z)?;
        observer.on_composite(it, &raw, &gen.composite, &mask)?;

        let parts = LossParts {
            kl_e: rec.kl_e.item(),
            kl_g: gen.kl_g.item(),
            cons_e: rec.cons_e.item(),
            cons_g: gen.cons_g.item(),
            adv_global: gen.adv_global.item(),
            adv_local: gen.adv_local.item(),
        };
        let mut report = LossReport {
            iteration: it,
            parts,
            latent_cons: gen.latent_cons.item(),
            total: 0.0,
        };
        if let Some(term) = report.first_non_finite() {
            return Err(Error::NonFiniteLoss { term, iteration: it });
        }
        report.total = total_objective(&parts, &self.config.weights)?;
        if !report.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                term: "total",
                iteration: it,
            });
        }

        let w = self.config.weights;
        let objective = rec
            .kl_e
            .add(&gen.kl_g)?
            .scale(w.alpha_kl)
            .add(&rec.cons_e.add(&gen.cons_g)?.scale(w.alpha_c))?
            .add(&gen.adv_global.add(&gen.adv_local)?.scale(w.alpha_adv))?
            .add(&gen.latent_cons.scale(self.config.alpha_latent))?;
        self.extractor.params.zero_grad();
        self.generator.params.zero_grad();
        objective.backward()?;
        fill_missing_grads(&self.extractor.params);
        fill_missing_grads(&self.generator.params);
        self.opt_extractor.step(&self.extractor.params)?;
        self.opt_generator.step(&self.generator.params)?;

        self.iteration = it;
        observer.on_iteration(self, &report)?;
        Ok(report)
    }

    /// Step until `iteration == until`; returns the reports at log-interval
    /// iterations.
    pub fn run_until(&mut self, until: u64, data: &Dataset, observer: &mut dyn TrainObserver) -> Result<Vec<LossReport>> {
        let mut out = Vec::new();
        while self.iteration < until {
            let r = self.step(data, observer)?;
            if r.iteration % self.config.log_interval == 0 {
                out.push(r);
            }
        }
        Ok(out)
    }
}

fn check_dataset(config: &TrainConfig, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("train", "dataset is empty"));
    }
    if (data.height, data.width) != (config.resolution, config.resolution) {
        return Err(Error::invalid(
            "train",
            format!(
                "dataset images are {}x{}, config expects {}x{}",
                data.height, data.width, config.resolution, config.resolution
            ),
        ));
    }
    Ok(())
}

/// The dataset a config describes: `.ppm` files from `data_dir` in name
/// order, or synthetic scenes.
pub fn load_dataset(config: &TrainConfig) -> Result<Dataset> {
    if config.data_dir.is_empty() {
        let r = config.resolution;
        return generate_synthetic_dataset(config.dataset_size, (r, r), config.seed);
    }
    let dir = Path::new(&config.data_dir);
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    paths.sort();
    let images = paths.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?;
    if images.is_empty() {
        return Err(Error::invalid("load_dataset", format!("no .ppm images in {}", dir.display())));
    }
    Dataset::from_images(&images)
}

/// Train from scratch for `config.iterations` iterations.
pub fn train(config: &TrainConfig, data: &Dataset) -> Result<(TrainState, Vec<LossReport>)> {
    train_observed(config, data, &mut NoObserver)
}

pub fn train_observed(
    config: &TrainConfig,
    data: &Dataset,
    observer: &mut dyn TrainObserver,
) -> Result<(TrainState, Vec<LossReport>)> {
    let mut state = TrainState::new(config)?;
    let reports = state.run_until(config.iterations, data, observer)?;
    Ok((state, reports))
}
