//! Training: per-step forward/backward through the whole pipeline, Adam
//! updates, warmup of the decomposition losses, and the logged loop.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::checkpoint::{self, Checkpoint};
use crate::dataset::{Dataset, Frame, Split};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{masked_l1_with_grad, photometric_loss_with_grad, scale_flatness_loss, total_loss, LossComponents, LossWeights};
use crate::model::{Group, Model, ModelConfig};
use crate::raster::RenderOutput;
use crate::real::Real;
use crate::render::{affine_backward, apply_traversal_affine, render_backward, render_forward, View};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub positions: f64,
    /// Positions decay exponentially to `positions × positions_final_factor`.
    pub positions_final_factor: f64,
    pub scales: f64,
    pub rotations: f64,
    pub opacities: f64,
    pub features: f64,
    pub mlps: f64,
    pub embeddings: f64,
    pub affine: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            positions: 1.6e-4,
            positions_final_factor: 0.01,
            scales: 5e-3,
            rotations: 1e-3,
            opacities: 5e-2,
            features: 2.5e-3,
            mlps: 2.5e-3,
            embeddings: 2.5e-3,
            affine: 1e-3,
        }
    }
}

impl LearningRates {
    fn validate(&self) -> Result<()> {
        let all = [
            ("positions", self.positions),
            ("positions_final_factor", self.positions_final_factor),
            ("scales", self.scales),
            ("rotations", self.rotations),
            ("opacities", self.opacities),
            ("features", self.features),
            ("mlps", self.mlps),
            ("embeddings", self.embeddings),
            ("affine", self.affine),
        ];
        for (name, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("learning rate {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Rate of `group` at `iteration` of a run of `total` iterations.
    pub fn at(&self, group: Group, iteration: usize, total: usize) -> f64 {
        match group {
            Group::Positions => {
                let t = if total == 0 { 0.0 } else { iteration as f64 / total as f64 };
                self.positions * self.positions_final_factor.powf(t)
            }
            Group::Scales => self.scales,
            Group::Rotations => self.rotations,
            Group::Opacities => self.opacities,
            Group::Features => self.features,
            Group::Mlps => self.mlps,
            Group::Embeddings => self.embeddings,
            Group::Affine => self.affine,
            Group::Frozen => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: LearningRates,
    pub loss: LossWeights,
    /// Iterations over which λ_decomp ramps up from zero; `None` means 10%
    /// of the run.
    pub warmup: Option<usize>,
    pub seed: u64,
    /// Keep every output a pure function of (config, dataset, seed): wall
    /// clock timings are then not written at all.
    pub reproducible: bool,
    /// Write a checkpoint every this many iterations (0: final only).
    pub checkpoint_every: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            lr: LearningRates::default(),
            loss: LossWeights::default(),
            warmup: None,
            seed: 0,
            reproducible: true,
            checkpoint_every: 1000,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.lr.validate()?;
        self.loss.validate()?;
        if self.warmup_iterations() > self.iterations {
            return Err(Error::invalid("warmup must not exceed the iteration count"));
        }
        Ok(())
    }

    pub fn warmup_iterations(&self) -> usize {
        self.warmup.unwrap_or(self.iterations / 10)
    }

    /// Multiplier on λ_decomp at `iteration`: linear from 0 to 1 over the warmup.
    pub fn decomp_ramp(&self, iteration: usize) -> f64 {
        let w = self.warmup_iterations();
        if w == 0 {
            1.0
        } else {
            (iteration as f64 / w as f64).min(1.0)
        }
    }
}

/// One step's loss record. Contains nothing that depends on wall time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub traversal: usize,
    pub camera: usize,
    pub loss: f64,
    pub components: LossComponents,
    pub lambda_decomp: f64,
    pub grad_norms: BTreeMap<Group, f64>,
}

/// Training observation converted to the model's scalar type.
pub struct Observation<T> {
    pub view: View,
    pub rgb: Image<T>,
    pub material: Image<T>,
    pub normal: Image<T>,
    pub mask: Image<T>,
}

impl<T: Real> Observation<T> {
    pub fn from_frame(f: &Frame) -> Self {
        Self {
            view: View::new(f.camera.clone(), f.traversal, f.timestamp),
            rgb: f.rgb.cast(),
            material: f.material.cast(),
            normal: f.normal.cast(),
            mask: f.loss_mask().cast(),
        }
    }
}

/// Loss of one observation and its gradient with respect to every model
/// tensor (accumulated into `grads`). `lambda_decomp` is the effective,
/// already ramped weight; the supervised terms pass no gradient when it is 0.
pub fn loss_and_grad<T: Real>(
    model: &Model<T>,
    obs: &Observation<T>,
    weights: &LossWeights,
    grads: &mut Model<T>,
) -> Result<(f64, LossComponents)> {
    let m = obs.view.m_light;
    let (out, cache) = render_forward(model, &obs.view)?;
    let pred = apply_traversal_affine(&out.rgb, m, &model.scene.traversals)?;
    let (photo, d_pred) = photometric_loss_with_grad(&pred, &obs.rgb, weights.lambda_ssim)?;
    let mut adjoint = RenderOutput::zeros(out.width(), out.height());
    adjoint.rgb = affine_backward(&out.rgb, m, &model.scene.traversals, &d_pred, &mut grads.scene.traversals)?;

    let (material, d_mat) = masked_l1_with_grad(&out.material, &obs.material, &obs.mask)?;
    let (normal, d_norm) = if weights.normal_loss {
        masked_l1_with_grad(&out.normal, &obs.normal, &obs.mask)?
    } else {
        (0.0, Image::zeros(out.width(), out.height(), 3))
    };
    if weights.lambda_decomp > 0.0 {
        let w = T::lit(weights.lambda_decomp);
        adjoint.material = d_mat.map(|g| g * w);
        adjoint.normal = d_norm.map(|g| g * w);
    }
    render_backward(model, cache, &adjoint, grads)?;

    let set = &model.scene.static_node.gaussians;
    let mut d_scale = vec![T::zero(); set.log_scales.len()];
    let scale = scale_flatness_loss(set, weights.delta, Some(&mut d_scale));
    if weights.lambda_scale > 0.0 {
        let w = T::lit(weights.lambda_scale);
        for (g, d) in grads.scene.static_node.gaussians.log_scales.iter_mut().zip(&d_scale) {
            *g += w * *d;
        }
    }
    let components = LossComponents { photo, material, normal, scale };
    Ok((total_loss(&components, weights)?, components))
}

pub fn grad_norms<T: Real>(grads: &Model<T>) -> BTreeMap<Group, f64> {
    let mut out = BTreeMap::new();
    grads.visit(&mut |_, g, t| {
        if g != Group::Frozen {
            *out.entry(g).or_insert(0.0) += t.iter().map(|v| v.val() * v.val()).sum::<f64>();
        }
    });
    out.values_mut().for_each(|v| *v = v.sqrt());
    out
}

/// Training state: parameters, optimizer and position in the schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    pub iteration: usize,
    /// Training frame indices per traversal; traversals without training
    /// frames are skipped by the round-robin.
    schedule: Vec<Vec<usize>>,
}

fn build_schedule(dataset: &Dataset) -> Result<Vec<Vec<usize>>> {
    let train = dataset.split(Split::Train);
    let sched: Vec<Vec<usize>> = (0..dataset.traversal_count())
        .map(|t| train.iter().copied().filter(|&i| dataset.frames[i].traversal == t).collect::<Vec<_>>())
        .filter(|v| !v.is_empty())
        .collect();
    if sched.is_empty() {
        return Err(Error::invalid("dataset has no training frames"));
    }
    Ok(sched)
}

impl Trainer {
    pub fn new(dataset: &Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::from_points(&dataset.points, dataset.traversal_count(), &config.model, config.seed)?;
        let adam = AdamState::new(&model);
        Ok(Self { schedule: build_schedule(dataset)?, config, model, adam, iteration: 0 })
    }

    pub fn from_checkpoint(dataset: &Dataset, config: TrainConfig, ck: Checkpoint) -> Result<Self> {
        config.validate()?;
        if ck.model.scene.traversals.len() != dataset.traversal_count() {
            return Err(Error::invalid(format!(
                "checkpoint has {} traversals, dataset has {}",
                ck.model.scene.traversals.len(),
                dataset.traversal_count()
            )));
        }
        let adam = match ck.adam {
            Some(a) => a,
            None => AdamState::new(&ck.model),
        };
        Ok(Self { schedule: build_schedule(dataset)?, config, model: ck.model, adam, iteration: ck.iteration })
    }

    /// Frame used at `iteration`: traversals in round-robin order, each
    /// cycling through its own frames in an order reshuffled every pass.
    /// A pure function of (seed, iteration), so resuming needs no RNG state.
    pub fn frame_at(&self, iteration: usize) -> usize {
        let nt = self.schedule.len();
        let list = &self.schedule[iteration % nt];
        let k = iteration / nt;
        let pass = k / list.len();
        let mut order = list.clone();
        let stream = self.config.seed ^ ((iteration % nt) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (pass as u64).rotate_left(32);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream));
        order[k % list.len()]
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration,
            model: self.model.clone(),
            adam: Some(self.adam.clone()),
            meta: serde_json::json!({ "train": self.config }),
        }
    }

    pub fn step(&mut self, dataset: &Dataset) -> Result<StepRecord> {
        let it = self.iteration;
        let frame = &dataset.frames[self.frame_at(it)];
        let obs = Observation::<f32>::from_frame(frame);
        let mut weights = self.config.loss.clone();
        weights.lambda_decomp *= self.config.decomp_ramp(it);
        let mut grads = self.model.zeros_like();
        let diverged = |component: String| Error::TrainingDivergence { iteration: it as u64, component };
        let (loss, components) = match loss_and_grad(&self.model, &obs, &weights, &mut grads) {
            Err(Error::TrainingDivergence { component, .. }) => return Err(diverged(component)),
            r => r?,
        };
        if let Some(name) = grads.first_non_finite() {
            return Err(diverged(format!("gradient of {name}")));
        }
        let norms = grad_norms(&grads);
        let (lr, total) = (&self.config.lr, self.config.iterations);
        self.adam.step_model(&mut self.model, &grads, &|g| lr.at(g, it, total))?;
        if let Some(name) = self.model.first_non_finite() {
            return Err(diverged(format!("parameter {name}")));
        }
        self.iteration += 1;
        Ok(StepRecord {
            iteration: it,
            traversal: frame.traversal,
            camera: frame.camera_id,
            loss,
            components,
            lambda_decomp: weights.lambda_decomp,
            grad_norms: norms,
        })
    }
}

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const TIMING_LOG: &str = "timing.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_name(iteration: usize) -> String {
    format!("iter_{iteration:06}.ckpt")
}

/// Outcome of [`run`]: the step records and the checkpoints written, final last.
pub struct RunSummary {
    pub records: Vec<StepRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// Train until `config.iterations`, appending to the step log in `out_dir`
/// and writing checkpoints. On divergence the error is returned after the
/// diagnostic is logged; earlier checkpoints are left in place.
pub fn run(trainer: &mut Trainer, dataset: &Dataset, out_dir: &Path, mut progress: impl FnMut(&StepRecord)) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let open = |name: &str| -> Result<BufWriter<File>> {
        let p = out_dir.join(name);
        let f = std::fs::OpenOptions::new()
            .create(true)
            .append(trainer.iteration > 0)
            .write(true)
            .truncate(trainer.iteration == 0)
            .open(&p)
            .map_err(|e| Error::io(&p, e))?;
        Ok(BufWriter::new(f))
    };
    let log_path = out_dir.join(TRAIN_LOG);
    let mut log = open(TRAIN_LOG)?;
    let mut timing = if trainer.config.reproducible { None } else { Some(open(TIMING_LOG)?) };
    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    let every = trainer.config.checkpoint_every;
    while trainer.iteration < trainer.config.iterations {
        let start = Instant::now();
        let rec = match trainer.step(dataset) {
            Ok(r) => r,
            Err(e) => {
                let diag = serde_json::json!({ "diverged": true, "error": e.to_string(), "iteration": trainer.iteration });
                writeln!(log, "{diag}").and_then(|_| log.flush()).map_err(|e| Error::io(&log_path, e))?;
                return Err(e);
            }
        };
        writeln!(log, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(&log_path, e))?;
        if let Some(t) = timing.as_mut() {
            let line = serde_json::json!({ "iteration": rec.iteration, "seconds": start.elapsed().as_secs_f64() });
            writeln!(t, "{line}").map_err(|e| Error::io(out_dir.join(TIMING_LOG), e))?;
        }
        progress(&rec);
        records.push(rec);
        if every > 0 && trainer.iteration % every == 0 && trainer.iteration < trainer.config.iterations {
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            let p = out_dir.join(checkpoint_name(trainer.iteration));
            checkpoint::save(&trainer.checkpoint(), &p)?;
            checkpoints.push(p);
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    if let Some(t) = timing.as_mut() {
        t.flush().map_err(|e| Error::io(out_dir.join(TIMING_LOG), e))?;
    }
    let p = out_dir.join(FINAL_CHECKPOINT);
    checkpoint::save(&trainer.checkpoint(), &p)?;
    checkpoints.push(p);
    Ok(RunSummary { records, checkpoints })
}
