use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::buffer::ImageBuffer;
use super::TrainConfig;
use crate::data::{draw_target, encode_label, tile_labels, DomainDataset, DomainLabel, ImageTensor};
use crate::losses::{
    classification_loss_indices, color_cycle, cycle_l1, full_objective, lsgan_discriminator_loss,
    lsgan_generator_loss, ms_ssim_loss, ObjectiveTerms,
};
use crate::networks::{
    build_discriminator, build_generator_pair, distinct_parameters, init_weights, Discriminator, GeneratorPair,
    Grad, NetworkConfig, Param, Parameterized,
};
use crate::{ops, Error, Result};

/// One training batch: sources `x` from domains `z_x`, targets `z_y`, and
/// real images `y_real` drawn from the target domains.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub y_real: Tensor,
    pub z_x: Vec<usize>,
    pub z_y: Vec<usize>,
}

/// Scalar values of every objective term for one step. Terms that are
/// switched off report zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub d_adv: f64,
    pub d_cls: f64,
    pub g_adv: f64,
    pub g_cls: f64,
    pub cyc: f64,
    pub msssim: f64,
    pub idt: f64,
    /// Second discriminator's adversarial and classification terms.
    pub d2: Option<(f64, f64)>,
}

pub const METRIC_KEYS: [&str; 7] = ["d_adv", "d_cls", "g_adv", "g_cls", "cyc", "msssim", "idt"];

impl StepMetrics {
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        let mut out: Vec<_> = METRIC_KEYS
            .iter()
            .copied()
            .zip([self.d_adv, self.d_cls, self.g_adv, self.g_cls, self.cyc, self.msssim, self.idt])
            .collect();
        if let Some((adv, cls)) = self.d2 {
            out.push(("d2_adv", adv));
            out.push(("d2_cls", cls));
        }
        out
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries().into_iter().find(|(k, _)| *k == key).map(|(_, v)| v)
    }
}

/// Which of the three updates a gradient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Discriminator,
    Translator,
    Reconstructor,
}

/// Gradient norm reaching one network during one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrad {
    pub iteration: usize,
    pub phase: Phase,
    pub network: &'static str,
    pub norm: f64,
}

/// Gradient norm of one weighted term over the parameters the phase updates.
#[derive(Debug, Clone, PartialEq)]
pub struct TermGrad {
    pub iteration: usize,
    pub phase: Phase,
    pub term: &'static str,
    pub norm: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradAudit {
    pub networks: Vec<NetworkGrad>,
    pub terms: Vec<TermGrad>,
}

impl GradAudit {
    pub fn network_norm(&self, phase: Phase, network: &str) -> f64 {
        self.networks
            .iter()
            .filter(|r| r.phase == phase && r.network == network)
            .map(|r| r.norm)
            .fold(0.0, f64::max)
    }

    pub fn term_norm(&self, phase: Phase, term: &str) -> f64 {
        self.terms
            .iter()
            .filter(|r| r.phase == phase && r.term == term)
            .map(|r| r.norm)
            .fold(0.0, f64::max)
    }
}

/// Per-epoch sums for the running metric averages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningAverages {
    pub sums: BTreeMap<String, f64>,
    pub count: u64,
}

impl RunningAverages {
    pub fn add(&mut self, m: &StepMetrics) {
        for (k, v) in m.entries() {
            *self.sums.entry(k.to_string()).or_default() += v;
        }
        self.count += 1;
    }

    pub fn means(&self) -> BTreeMap<String, f64> {
        let n = self.count.max(1) as f64;
        self.sums.iter().map(|(k, v)| (k.clone(), v / n)).collect()
    }
}

/// Adversarial and classification terms of one discriminator on a batch
/// laid out as `[real, fake, x]`.
pub fn discriminator_terms(
    d: &Discriminator,
    real: &Tensor,
    fake: &Tensor,
    x: &Tensor,
    z_x: &[usize],
    grad: Grad,
) -> Result<(Tensor, Tensor)> {
    let n = x.dims()[0];
    let out = d.forward(&Tensor::cat(&[real, fake, x], 0)?, grad)?;
    let adv = lsgan_discriminator_loss(&out.patch_map.narrow(0, 0, n)?, &out.patch_map.narrow(0, n, n)?)?;
    let cls = classification_loss_indices(&out.class_logits.narrow(0, 2 * n, n)?, z_x)?;
    Ok((adv, cls))
}

/// Adversarial and target-classification terms of a generated batch.
pub fn generator_terms(d: &Discriminator, fake: &Tensor, z_y: &[usize]) -> Result<(Tensor, Tensor)> {
    let out = d.forward(fake, Grad::Frozen)?;
    Ok((
        lsgan_generator_loss(&out.patch_map)?,
        classification_loss_indices(&out.class_logits, z_y)?,
    ))
}

/// Mean of equally weighted terms.
pub fn average_terms(terms: &[Tensor]) -> Result<Tensor> {
    let sum = terms[1..].iter().try_fold(terms[0].clone(), |acc, t| acc + t)?;
    Ok((sum / terms.len() as f64)?)
}

fn grad_norm(grads: &GradStore, params: &[Param]) -> Result<f64> {
    let mut total = 0.0;
    for p in params {
        if let Some(g) = grads.get(p.var.as_tensor()) {
            total += ops::scalar(&g.sqr()?.sum_all()?)?;
        }
    }
    Ok(total.sqrt())
}

/// Networks, optimizers, replay buffer and random state of one run.
pub struct Trainer {
    pub(crate) cfg: TrainConfig,
    pub(crate) net: NetworkConfig,
    pub(crate) dtype: DType,
    pub(crate) generators: GeneratorPair,
    pub(crate) discriminator: Discriminator,
    pub(crate) discriminator2: Option<Discriminator>,
    pub(crate) opt_d: Adam,
    pub(crate) opt_gt: Adam,
    pub(crate) opt_gr: Adam,
    pub(crate) buffer: ImageBuffer,
    pub(crate) rng: ChaCha8Rng,
    /// Completed epochs.
    pub(crate) epoch: usize,
    pub(crate) iteration: usize,
    pub(crate) running: RunningAverages,
    pub(crate) audit: Option<GradAudit>,
    /// Names of the domains, by index, once a dataset has been seen.
    pub(crate) domain_names: Vec<String>,
}

impl Trainer {
    /// Builds and initializes every network from `cfg.seed`. Initialization
    /// order is generators, discriminator, second discriminator.
    pub fn new(cfg: TrainConfig, m: usize, resolution: usize) -> Result<Self> {
        cfg.validate_for(m, resolution)?;
        let net = cfg.network(m, resolution);
        let dtype = cfg.precision.dtype();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let generators = build_generator_pair(&net, cfg.sharing_mode, dtype)?;
        let discriminator = build_discriminator(&net.discriminator(), "discriminator", dtype)?;
        let discriminator2 = if cfg.use_double_discriminator {
            Some(build_discriminator(&net.half_resolution_discriminator(), "discriminator2", dtype)?)
        } else {
            None
        };
        init_weights(&generators, &mut rng)?;
        init_weights(&discriminator, &mut rng)?;
        if let Some(d2) = &discriminator2 {
            init_weights(d2, &mut rng)?;
        }
        let adam = |params: Vec<Param>| Adam::new(params, cfg.lr0, cfg.adam_beta1, cfg.adam_beta2);
        let mut d_nets: Vec<&dyn Parameterized> = vec![&discriminator];
        if let Some(d2) = &discriminator2 {
            d_nets.push(d2);
        }
        let opt_d = adam(distinct_parameters(&d_nets))?;
        let opt_gt = adam(generators.translator.parameters())?;
        let opt_gr = adam(generators.reconstructor.parameters())?;
        Ok(Trainer {
            buffer: ImageBuffer::new(cfg.buffer_capacity),
            cfg,
            net,
            dtype,
            generators,
            discriminator,
            discriminator2,
            opt_d,
            opt_gt,
            opt_gr,
            rng,
            epoch: 0,
            iteration: 0,
            running: RunningAverages::default(),
            audit: None,
            domain_names: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn network_config(&self) -> &NetworkConfig {
        &self.net
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn generators(&self) -> &GeneratorPair {
        &self.generators
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.discriminator
    }

    pub fn second_discriminator(&self) -> Option<&Discriminator> {
        self.discriminator2.as_ref()
    }

    pub fn buffer(&self) -> &ImageBuffer {
        &self.buffer
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn domain_names(&self) -> &[String] {
        &self.domain_names
    }

    pub fn running_averages(&self) -> &RunningAverages {
        &self.running
    }

    pub fn optimizers(&self) -> [(&'static str, &Adam); 3] {
        [("d", &self.opt_d), ("gt", &self.opt_gt), ("gr", &self.opt_gr)]
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Every distinct parameter of the run.
    pub fn parameters(&self) -> Vec<Param> {
        let mut nets: Vec<&dyn Parameterized> = vec![&self.generators, &self.discriminator];
        if let Some(d2) = &self.discriminator2 {
            nets.push(d2);
        }
        distinct_parameters(&nets)
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        for opt in [&mut self.opt_d, &mut self.opt_gt, &mut self.opt_gr] {
            opt.lr = lr;
        }
    }

    /// Starts recording gradient norms on every subsequent step.
    pub fn enable_grad_audit(&mut self) {
        self.audit = Some(GradAudit::default());
    }

    pub fn grad_audit(&self) -> Option<&GradAudit> {
        self.audit.as_ref()
    }

    /// Assembles a batch for the given `(domain, index)` sources, drawing a
    /// target domain and a real target image for each.
    pub fn make_batch(&mut self, dataset: &DomainDataset, sources: &[(usize, usize)]) -> Result<Batch> {
        let m = dataset.m();
        let (h, w) = (dataset.height(), dataset.width());
        let mut x = Vec::with_capacity(sources.len());
        let mut y = Vec::with_capacity(sources.len());
        let mut z_x = Vec::with_capacity(sources.len());
        let mut z_y = Vec::with_capacity(sources.len());
        for &(domain, index) in sources {
            let target = draw_target(domain, m, &mut self.rng);
            let count = dataset.domains()[target].images.len();
            let y_index = self.rng.random_range(0..count);
            x.push(dataset.image(domain, index));
            y.push(dataset.image(target, y_index));
            z_x.push(domain);
            z_y.push(target);
        }
        Ok(Batch {
            x: ImageTensor::from_records(&x, h, w, self.dtype)?.into_tensor(),
            y_real: ImageTensor::from_records(&y, h, w, self.dtype)?.into_tensor(),
            z_x,
            z_y,
        })
    }

    fn labels(&self, indices: &[usize]) -> Result<Tensor> {
        let labels = indices
            .iter()
            .map(|&i| encode_label(i, self.net.m, self.net.resolution, self.net.resolution))
            .collect::<Result<Vec<DomainLabel>>>()?;
        tile_labels(&labels, self.dtype)
    }

    fn record_networks(&mut self, phase: Phase, grads: &GradStore) -> Result<()> {
        if self.audit.is_none() {
            return Ok(());
        }
        let mut rows = vec![
            ("translator", self.generators.translator.parameters()),
            ("reconstructor", self.generators.reconstructor.parameters()),
            ("discriminator", self.discriminator.parameters()),
        ];
        if let Some(d2) = &self.discriminator2 {
            rows.push(("discriminator2", d2.parameters()));
        }
        let iteration = self.iteration;
        let mut records = Vec::new();
        for (network, params) in rows {
            records.push(NetworkGrad {
                iteration,
                phase,
                network,
                norm: grad_norm(grads, &params)?,
            });
        }
        if let Some(audit) = self.audit.as_mut() {
            audit.networks.extend(records);
        }
        Ok(())
    }

    fn record_terms(&mut self, phase: Phase, terms: &[(&'static str, Option<&Tensor>, f64)]) -> Result<()> {
        if self.audit.is_none() {
            return Ok(());
        }
        let params = match phase {
            Phase::Discriminator => self.opt_d.params().to_vec(),
            Phase::Translator => self.opt_gt.params().to_vec(),
            Phase::Reconstructor => self.opt_gr.params().to_vec(),
        };
        let mut records = Vec::new();
        for &(term, value, weight) in terms {
            let norm = match value {
                Some(t) if weight != 0.0 => grad_norm(&(t * weight)?.backward()?, &params)?,
                _ => 0.0,
            };
            records.push(TermGrad {
                iteration: self.iteration,
                phase,
                term,
                norm,
            });
        }
        if let Some(audit) = self.audit.as_mut() {
            audit.terms.extend(records);
        }
        Ok(())
    }

    /// Whether the reconstruction generator has anything to minimize.
    pub fn reconstructor_objective_empty(&self) -> bool {
        let w = &self.cfg.weights;
        !((self.cfg.use_colorcycle && w.lambda2 > 0.0)
            || (self.cfg.use_msssim && w.lambda3 > 0.0)
            || (self.cfg.use_identity && w.lambda4 > 0.0))
    }

    /// Discriminator update, then the translator with the reconstructor
    /// frozen, then the reconstructor on the detached translation.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepMetrics> {
        let cfg = self.cfg.clone();
        let w = cfg.weights;
        let n = batch.x.dims()[0];
        if batch.z_x.len() != n || batch.z_y.len() != n || batch.y_real.dims() != batch.x.dims() {
            return Err(Error::Shape("batch fields disagree on size".into()));
        }
        let labels_x = self.labels(&batch.z_x)?;
        let labels_y = self.labels(&batch.z_y)?;
        let gt = self.generators.translator.clone();
        let gr = self.generators.reconstructor.clone();
        let mut metrics = StepMetrics::default();

        let fake = gt.forward(&batch.x, &labels_y, Grad::Track)?;

        // Discriminator.
        let fake_d = self.buffer.query(&fake, &mut self.rng)?;
        let (d_adv, d_cls) =
            discriminator_terms(&self.discriminator, &batch.y_real, &fake_d, &batch.x, &batch.z_x, Grad::Track)?;
        metrics.d_adv = ops::scalar(&d_adv)?;
        metrics.d_cls = ops::scalar(&d_cls)?;
        let (adv, cls) = match &self.discriminator2 {
            Some(d2) => {
                let pool = |t: &Tensor| ops::avg_pool2(t);
                let (a2, c2) = discriminator_terms(
                    d2,
                    &pool(&batch.y_real)?,
                    &pool(&fake_d)?,
                    &pool(&batch.x)?,
                    &batch.z_x,
                    Grad::Track,
                )?;
                metrics.d2 = Some((ops::scalar(&a2)?, ops::scalar(&c2)?));
                (average_terms(&[d_adv, a2])?, average_terms(&[d_cls, c2])?)
            }
            None => (d_adv, d_cls),
        };
        let d_loss = (&adv + (&cls * w.lambda1)?)?;
        check_finite(&d_loss, "discriminator objective")?;
        let grads = d_loss.backward()?;
        self.record_networks(Phase::Discriminator, &grads)?;
        self.record_terms(
            Phase::Discriminator,
            &[("d_adv", Some(&adv), 1.0), ("d_cls", Some(&cls), w.lambda1)],
        )?;
        self.opt_d.step(&grads)?;

        // Translator.
        let (g_adv, g_cls) = generator_terms(&self.discriminator, &fake, &batch.z_y)?;
        metrics.g_adv = ops::scalar(&g_adv)?;
        metrics.g_cls = ops::scalar(&g_cls)?;
        let (g_adv, g_cls) = match &self.discriminator2 {
            Some(d2) => {
                let (a2, c2) = generator_terms(d2, &ops::avg_pool2(&fake)?, &batch.z_y)?;
                (average_terms(&[g_adv, a2])?, average_terms(&[g_cls, c2])?)
            }
            None => (g_adv, g_cls),
        };
        let mut terms = ObjectiveTerms {
            lsgan_g: Some(g_adv),
            cls_fake: Some(g_cls),
            ..ObjectiveTerms::default()
        };
        if cfg.use_colorcycle || cfg.use_msssim {
            let rec = gr.forward(&fake, &labels_x, Grad::Frozen)?;
            if cfg.use_colorcycle {
                let c = color_cycle(&rec, &batch.x)?;
                metrics.cyc = ops::scalar(&c)?;
                terms.colorcyc = Some(c);
            }
            if cfg.use_msssim {
                let s = ms_ssim_loss(&rec, &batch.x, &cfg.ssim)?;
                metrics.msssim = ops::scalar(&s)?;
                terms.msssim = Some(s);
            }
        }
        if cfg.use_identity && cfg.symmetric_identity {
            terms.identity = Some(cycle_l1(&gt.forward(&batch.x, &labels_x, Grad::Track)?, &batch.x)?);
        }
        let gt_loss = full_objective(&terms, &w)?;
        check_finite(&gt_loss, "translator objective")?;
        let grads = gt_loss.backward()?;
        self.record_networks(Phase::Translator, &grads)?;
        self.record_terms(
            Phase::Translator,
            &[
                ("g_adv", terms.lsgan_g.as_ref(), 1.0),
                ("g_cls", terms.cls_fake.as_ref(), w.lambda1),
                ("cyc", terms.colorcyc.as_ref(), w.lambda2),
                ("msssim", terms.msssim.as_ref(), w.lambda3),
                ("idt", terms.identity.as_ref(), w.lambda4),
            ],
        )?;
        self.opt_gt.step(&grads)?;

        // Reconstructor.
        if !self.reconstructor_objective_empty() {
            // Reconstruction rows first, identity rows after, one forward pass.
            let need_rec = cfg.use_colorcycle || cfg.use_msssim;
            let mut inputs = Vec::new();
            if need_rec {
                inputs.push(fake.detach());
            }
            if cfg.use_identity {
                inputs.push(batch.x.clone());
            }
            let labels = Tensor::cat(&vec![&labels_x; inputs.len()], 0)?;
            let out = gr.forward(&Tensor::cat(&inputs, 0)?, &labels, Grad::Track)?;
            let mut terms = ObjectiveTerms::default();
            if need_rec {
                let rec = out.narrow(0, 0, n)?;
                if cfg.use_colorcycle {
                    terms.colorcyc = Some(color_cycle(&rec, &batch.x)?);
                }
                if cfg.use_msssim {
                    terms.msssim = Some(ms_ssim_loss(&rec, &batch.x, &cfg.ssim)?);
                }
            }
            if cfg.use_identity {
                let offset = if need_rec { n } else { 0 };
                let idt = cycle_l1(&out.narrow(0, offset, n)?, &batch.x)?;
                metrics.idt = ops::scalar(&idt)?;
                terms.identity = Some(idt);
            }
            let gr_loss = full_objective(&terms, &w)?;
            check_finite(&gr_loss, "reconstructor objective")?;
            let grads = gr_loss.backward()?;
            self.record_networks(Phase::Reconstructor, &grads)?;
            self.record_terms(
                Phase::Reconstructor,
                &[
                    ("cyc", terms.colorcyc.as_ref(), w.lambda2),
                    ("msssim", terms.msssim.as_ref(), w.lambda3),
                    ("idt", terms.identity.as_ref(), w.lambda4),
                ],
            )?;
            self.opt_gr.step(&grads)?;
        }

        self.iteration += 1;
        self.running.add(&metrics);
        Ok(metrics)
    }
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    let v = ops::scalar(t)?;
    if !v.is_finite() {
        return Err(Error::Numerics(format!("{what} is {v}")));
    }
    Ok(())
}
