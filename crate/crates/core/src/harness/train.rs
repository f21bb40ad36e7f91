use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{Cadence, ExperimentConfig};
use crate::data::{generate, mnist_dataset, noisy_batch, prepare_images, DataKind, Dataset, Images, PreparedImages};
use crate::diagnostics::{desiderata_probe, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::gradients::{adam_row_mean, decompose, loss_gradients};
use crate::model::{forward, ModelState};
use crate::optim::{adam_step, sgd_step, AdamState, LearningRates};
use crate::parameterization::{prescription, Dims, OptimizerKind, Row};
use crate::rng::RngState;

/// A batch MSE this many times above `max(initial MSE, 1)` counts as
/// divergence.
pub const BLOWUP_FACTOR: f64 = 1e6;

/// A cell whose final MSE exceeds this multiple of its initial MSE is
/// unstable even if it stayed finite.
pub const UNSTABLE_FACTOR: f64 = 2.0;

// Stream keys under the per-seed root.
const DATA_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;

/// Where training data comes from.
#[derive(Clone, Copy, Debug)]
pub enum Source<'a> {
    Synthetic,
    Mnist(&'a Images),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub scale: usize,
    pub eta0: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub dims: Dims,
    pub row: Row,
    pub s1: f64,
    pub s2: f64,
    pub lr: LearningRates,
    /// Full-dataset per-entry MSE at initialization.
    pub initial_mse: f64,
    /// Sample-weighted mean batch MSE per completed epoch. All MSE values
    /// are per output entry, so they are comparable across scales.
    pub mse_trace: Vec<f64>,
    /// Full-dataset MSE after training, under the same corruption as
    /// `initial_mse`.
    pub final_eval_mse: Option<f64>,
    pub diagnostics: Vec<DiagnosticsRecord>,
    /// Epoch in which a non-finite or blown-up value appeared.
    pub diverged_epoch: Option<usize>,
}

impl CellResult {
    pub fn diverged(&self) -> bool {
        self.diverged_epoch.is_some()
    }

    pub fn final_mse(&self) -> Option<f64> {
        if self.diverged() {
            None
        } else {
            self.mse_trace.last().copied()
        }
    }

    /// Diverged, or finished above `UNSTABLE_FACTOR ×` its initial MSE.
    pub fn unstable(&self) -> bool {
        match self.final_mse() {
            None => true,
            Some(m) => m > UNSTABLE_FACTOR * self.initial_mse,
        }
    }
}

pub struct TrainOutput {
    pub model: ModelState,
    pub result: CellResult,
}

/// The dataset and dimensions of one `(scale, seed)` pair; shared by every
/// `η₀` in a sweep.
pub fn cell_data(cfg: &ExperimentConfig, source: Source<'_>, scale: usize, seed: u64) -> Result<(Dims, Dataset)> {
    let prepared = prepared_for(cfg, source, scale)?;
    cell_data_prepared(cfg, prepared.as_ref(), scale, seed)
}

fn prepared_for(cfg: &ExperimentConfig, source: Source<'_>, scale: usize) -> Result<Option<PreparedImages>> {
    match (&cfg.data.kind, source) {
        (DataKind::Mnist { block, .. }, Source::Mnist(images)) => {
            let j = if cfg.is_block_ladder() {
                scale
            } else {
                block.ok_or_else(|| Error::Config("data.block is required".into()))?
            };
            Ok(Some(prepare_images(images, j)))
        }
        (DataKind::Mnist { .. }, Source::Synthetic) => {
            Err(Error::Config("an MNIST config needs loaded MNIST images".into()))
        }
        _ => Ok(None),
    }
}

fn cell_data_prepared(
    cfg: &ExperimentConfig,
    prepared: Option<&PreparedImages>,
    scale: usize,
    seed: u64,
) -> Result<(Dims, Dataset)> {
    let mut rng = RngState::new(seed).derive_path(&[DATA_STREAM, scale as u64]);
    match prepared {
        Some(p) => {
            let dims = cfg.dims(scale, Some(p.x.cols()));
            Ok((dims, mnist_dataset(p, dims.p, &mut rng)))
        }
        None => {
            let dims = cfg.dims(scale, None);
            Ok((dims, generate(&cfg.data, &dims, &mut rng)?))
        }
    }
}

fn diagnostics_due(cadence: Cadence, every: usize, epoch: usize, step_in_epoch: usize, step: usize) -> bool {
    match cadence {
        Cadence::Off => false,
        Cadence::Epoch => step_in_epoch == 0 && epoch.is_multiple_of(every),
        Cadence::Step => step.is_multiple_of(every),
    }
}

fn full_loss(model: &ModelState, data: &Dataset, noise: f64, rng: &mut RngState) -> f64 {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, y) = noisy_batch(data, &idx, noise, rng);
    forward(model, &x, &y).mse()
}

/// Trains one cell on `data`, which must match `dims`.
pub fn train(cfg: &ExperimentConfig, cell: Cell, dims: Dims, data: &Dataset) -> Result<TrainOutput> {
    cfg.validate()?;
    if data.dim() != dims.n || data.len() != dims.p {
        return Err(Error::Dimension(format!(
            "dataset is {}×{}, cell expects N={} P={}",
            data.dim(),
            data.len(),
            dims.n,
            dims.p
        )));
    }
    let act = cfg.model.activation;
    let pres = prescription(
        &cfg.regime,
        &act,
        cfg.optimizer.kind,
        &dims,
        &cfg.base_rates(cell.eta0),
        cfg.optimizer.override_softmax_sgd,
    )?;
    let mut lr = pres.lr;
    if !cfg.model.trainable_biases {
        lr.b = 0.0;
        lr.c = 0.0;
    }

    let root = RngState::new(cell.seed);
    let scale = cell.scale as u64;
    let mut init_rng = root.derive_path(&[INIT_STREAM, scale]);
    let mut batch_rng = root.derive_path(&[BATCH_STREAM, scale]);
    let mut eval_rng = root.derive_path(&[EVAL_STREAM, scale]);

    let mut model = ModelState::gaussian(&mut init_rng, dims.k, dims.n, pres.s1, pres.s2, act, cfg.model.centered);
    let bias_std = cfg.model.bias_init_std;
    model.b.iter_mut().chain(model.c.iter_mut()).for_each(|v| *v *= bias_std);
    let mut adam = match cfg.optimizer.kind {
        OptimizerKind::Adam => Some(AdamState::new(&model, cfg.optimizer.adam)),
        OptimizerKind::Sgd => None,
    };

    let noise = cfg.data.noise_std;
    let initial_mse = full_loss(&model, data, noise, &mut eval_rng);
    let limit = BLOWUP_FACTOR * initial_mse.max(1.0);
    let sweep = &cfg.sweep;

    let mut result = CellResult {
        cell,
        dims,
        row: pres.row,
        s1: pres.s1,
        s2: pres.s2,
        lr,
        initial_mse,
        mse_trace: Vec::with_capacity(sweep.epochs),
        final_eval_mse: None,
        diagnostics: Vec::new(),
        diverged_epoch: None,
    };
    if !initial_mse.is_finite() {
        result.diverged_epoch = Some(0);
        return Ok(TrainOutput { model, result });
    }

    let mut step = 0usize;
    'epochs: for epoch in 0..sweep.epochs {
        let perm = batch_rng.permutation(dims.p);
        let mut total = 0.0;
        for (i, idx) in perm.chunks(dims.b).enumerate() {
            let (x, y) = noisy_batch(data, idx, noise, &mut batch_rng);
            let batch = forward(&model, &x, &y);
            let loss = batch.mse();
            if !loss.is_finite() || loss > limit {
                result.diverged_epoch = Some(epoch);
                break 'epochs;
            }
            total += loss * idx.len() as f64;
            let grads = loss_gradients(&model, &batch);

            let mut record = diagnostics_due(sweep.diagnostics, sweep.diagnostics_every, epoch, i, step)
                .then(|| {
                    let d = (sweep.decomposition && adam.is_none())
                        .then(|| decompose(&model, &batch, &grads, &lr));
                    let mut r = desiderata_probe(&model, &batch, d.as_ref());
                    r.epoch = epoch;
                    r.step = step;
                    r
                });

            match adam.as_mut() {
                Some(state) => {
                    let u = adam_step(&mut model, &grads, state, &lr);
                    if let Some(r) = record.as_mut() {
                        r.adam_update_rms = Some(u.w.rms());
                        let mean = adam_row_mean(&u.w);
                        let ms = mean.iter().map(|v| v * v).sum::<f64>() / mean.len() as f64;
                        r.adam_row_mean_rms = Some(ms.sqrt());
                    }
                }
                None => sgd_step(&mut model, &grads, &lr),
            }
            if let Some(r) = record {
                result.diagnostics.push(r);
            }
            step += 1;
        }
        let finite = model.w.is_finite()
            && model.b.iter().chain(&model.c).all(|v| v.is_finite());
        if !finite {
            result.diverged_epoch = Some(epoch);
            break;
        }
        result.mse_trace.push(total / dims.p as f64);
    }
    if !result.diverged() {
        let mut eval_rng = root.derive_path(&[EVAL_STREAM, scale]);
        result.final_eval_mse = Some(full_loss(&model, data, noise, &mut eval_rng));
    }
    Ok(TrainOutput { model, result })
}

/// Builds the data for `cell` and trains it.
pub fn train_cell(cfg: &ExperimentConfig, source: Source<'_>, cell: Cell) -> Result<TrainOutput> {
    let (dims, data) = cell_data(cfg, source, cell.scale, cell.seed)?;
    train(cfg, cell, dims, &data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub name: String,
    pub scales: Vec<usize>,
    pub eta_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Ordered by scale, then `η₀`, then seed.
    pub cells: Vec<CellResult>,
}

impl SweepResult {
    pub fn empty(name: &str) -> Self {
        SweepResult {
            name: name.to_string(),
            scales: Vec::new(),
            eta_grid: Vec::new(),
            seeds: Vec::new(),
            cells: Vec::new(),
        }
    }

    pub fn cells_at(&self, scale: usize) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(move |c| c.cell.scale == scale)
    }

    pub fn cell(&self, scale: usize, eta_index: usize, seed: u64) -> Option<&CellResult> {
        let eta = *self.eta_grid.get(eta_index)?;
        self.cells
            .iter()
            .find(|c| c.cell.scale == scale && c.cell.eta0 == eta && c.cell.seed == seed)
    }

    /// Seed-averaged final MSE per grid point; `None` where any seed
    /// diverged.
    pub fn final_mse_curve(&self, scale: usize) -> Vec<Option<f64>> {
        self.eta_grid
            .iter()
            .map(|&eta| {
                let finals: Option<Vec<f64>> = self
                    .cells_at(scale)
                    .filter(|c| c.cell.eta0 == eta)
                    .map(CellResult::final_mse)
                    .collect();
                finals.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect()
    }

    /// Grid index of the lowest seed-averaged final MSE.
    pub fn argmin_index(&self, scale: usize) -> Option<usize> {
        self.final_mse_curve(scale)
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|m| (i, m)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    pub fn argmin_eta(&self, scale: usize) -> Option<f64> {
        self.argmin_index(scale).map(|i| self.eta_grid[i])
    }

    /// Smallest grid index at which some seed is unstable.
    pub fn instability_onset(&self, scale: usize) -> Option<usize> {
        self.eta_grid.iter().position(|&eta| {
            self.cells_at(scale)
                .any(|c| c.cell.eta0 == eta && c.unstable())
        })
    }
}

/// Trains every `(scale, η₀, seed)` cell. Cells run in parallel when the
/// `parallel` feature is on; each is single-threaded.
pub fn lr_sweep(cfg: &ExperimentConfig, source: Source<'_>) -> Result<SweepResult> {
    cfg.validate()?;
    let grid = cfg.eta_grid();
    let mut data = BTreeMap::new();
    for &scale in &cfg.sweep.scales {
        let prepared = prepared_for(cfg, source, scale)?;
        for &seed in &cfg.sweep.seeds {
            data.insert((scale, seed), cell_data_prepared(cfg, prepared.as_ref(), scale, seed)?);
        }
    }
    let mut cells = Vec::with_capacity(cfg.cell_count());
    for &scale in &cfg.sweep.scales {
        for &eta0 in &grid {
            for &seed in &cfg.sweep.seeds {
                cells.push(Cell { scale, eta0, seed });
            }
        }
    }
    let run = |cell: &Cell| {
        let (dims, d) = &data[&(cell.scale, cell.seed)];
        train(cfg, *cell, *dims, d).map(|o| o.result)
    };
    #[cfg(feature = "parallel")]
    let results: Result<Vec<CellResult>> = {
        use rayon::prelude::*;
        cells.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Result<Vec<CellResult>> = cells.iter().map(run).collect();
    Ok(SweepResult {
        name: cfg.name.clone(),
        scales: cfg.sweep.scales.clone(),
        eta_grid: grid,
        seeds: cfg.sweep.seeds.clone(),
        cells: results?,
    })
}

/// Epoch-aligned traces at one fixed `η₀` across the ladder.
pub fn collapse_experiment(cfg: &ExperimentConfig, source: Source<'_>, eta0: f64) -> Result<SweepResult> {
    let mut c = cfg.clone();
    c.sweep.eta0 = Some(vec![eta0]);
    lr_sweep(&c, source)
}

/// `(max − min) / max(|max|, |min|)`; zero when both vanish.
pub fn relative_spread(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if max.abs().max(min.abs()) == 0.0 {
        0.0
    } else {
        (max - min) / max.abs().max(min.abs())
    }
}
