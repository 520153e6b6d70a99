//! Rollout comparisons and windowed error statistics.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;

use crate::datagen::Dataset;
use crate::dynamics::{ForceModel, State};
use crate::error::{Error, Result};
use crate::integrator::rollout_model;
use crate::rng::stream_rng;
use crate::scalar::angle_distance;

/// State channels in reporting order.
pub const CHANNELS: [&str; 4] = ["x", "phi", "x_dot", "phi_dot"];

/// A named model to compare.
pub struct NamedModel<'a> {
    pub name: String,
    pub model: &'a dyn ForceModel<f64>,
}

/// Ground-truth slice and aligned model predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutComparison {
    pub start_index: usize,
    pub truth: Vec<State>,
    pub controls: Vec<f64>,
    pub predictions: Vec<(String, Vec<State>)>,
}

/// Rolls each model out from the measured state at `start_index` under the
/// recorded controls for `steps` steps.
pub fn rollout_compare(
    models: &[NamedModel<'_>],
    dataset: &Dataset,
    start_index: usize,
    steps: usize,
) -> Result<RolloutComparison> {
    if start_index + steps >= dataset.len() {
        return Err(Error::invalid(format!(
            "window {start_index}..={} exceeds the {} samples",
            start_index + steps,
            dataset.len()
        )));
    }
    let samples = &dataset.samples()[start_index..=start_index + steps];
    let truth: Vec<State> = samples.iter().map(|s| s.state()).collect();
    let controls: Vec<f64> = samples[..steps].iter().map(|s| s.u).collect();
    let mut predictions = Vec::with_capacity(models.len());
    for m in models {
        let traj = if steps == 0 {
            alloc::vec![truth[0]]
        } else {
            rollout_model(m.model, &truth[0], &controls, dataset.dt())
                .map_err(|e| e.context(format_args!("model {}", m.name)))?
        };
        predictions.push((m.name.clone(), traj));
    }
    Ok(RolloutComparison {
        start_index,
        truth,
        controls,
        predictions,
    })
}

/// Absolute error of each channel; the angle error is the wrapped distance.
pub fn channel_errors(pred: &State, truth: &State) -> [f64; 4] {
    [
        libm::fabs(pred.x - truth.x),
        angle_distance(pred.phi, truth.phi),
        libm::fabs(pred.x_dot - truth.x_dot),
        libm::fabs(pred.phi_dot - truth.phi_dot),
    ]
}

/// Which errors of a window are recorded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ErrorMode {
    /// Error at the last step of the window.
    #[default]
    Terminal,
    /// Mean error over the window's steps.
    WindowMean,
}

/// How window start indices are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum WindowSampling {
    #[default]
    Random,
    /// Back-to-back windows from the start of the data.
    Tiled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorSummary {
    /// One array per channel, one entry per window, in window order.
    pub errors: [Vec<f64>; 4],
    /// Fitted normal `(μ, σ)` per channel.
    pub fits: [(f64, f64); 4],
    pub starts: Vec<usize>,
    pub window: usize,
    pub count: usize,
    pub mode: ErrorMode,
}

impl ErrorSummary {
    pub fn mean_errors(&self) -> [f64; 4] {
        self.fits.map(|f| f.0)
    }
}

/// Window start indices for `count` windows of `window` steps.
pub fn window_starts(
    len: usize,
    window: usize,
    count: usize,
    sampling: WindowSampling,
    seed: u64,
) -> Result<Vec<usize>> {
    if window == 0 || count == 0 {
        return Err(Error::invalid("window and count must be at least 1"));
    }
    if len <= window {
        return Err(Error::invalid(format!(
            "{len} samples cannot hold a window of {window} steps"
        )));
    }
    let available = len - window;
    match sampling {
        WindowSampling::Tiled => {
            if count * window + 1 > len {
                return Err(Error::invalid(format!(
                    "{len} samples hold only {} tiled windows of {window}",
                    (len - 1) / window
                )));
            }
            Ok((0..count).map(|k| k * window).collect())
        }
        WindowSampling::Random => {
            let mut rng = stream_rng(seed, crate::rng::Stream::Evaluation as u64);
            if available >= count {
                let mut picked = sample(&mut rng, available, count).into_vec();
                picked.sort_unstable();
                Ok(picked)
            } else {
                let mut picked: Vec<usize> = (0..count).map(|_| rng.gen_range(0..available)).collect();
                picked.sort_unstable();
                Ok(picked)
            }
        }
    }
}

/// Absolute errors of `window`-step rollouts from measured states.
pub fn windowed_errors(
    model: &dyn ForceModel<f64>,
    dataset: &Dataset,
    window: usize,
    count: usize,
    seed: u64,
    mode: ErrorMode,
    sampling: WindowSampling,
) -> Result<ErrorSummary> {
    let starts = window_starts(dataset.len(), window, count, sampling, seed)?;
    windowed_errors_at(model, dataset, window, &starts, mode)
}

/// [`windowed_errors`] at explicit start indices.
pub fn windowed_errors_at(
    model: &dyn ForceModel<f64>,
    dataset: &Dataset,
    window: usize,
    starts: &[usize],
    mode: ErrorMode,
) -> Result<ErrorSummary> {
    if starts.len() < 2 {
        return Err(Error::invalid("need at least two windows for a normal fit"));
    }
    let samples = dataset.samples();
    let controls = dataset.controls();
    let mut errors: [Vec<f64>; 4] = Default::default();
    for &n in starts {
        if n + window >= samples.len() {
            return Err(Error::invalid(format!("window at {n} runs past the data")));
        }
        let traj = rollout_model(model, &samples[n].state(), &controls[n..n + window], dataset.dt())
            .map_err(|e| e.context(format_args!("window starting at sample {n}")))?;
        let e = match mode {
            ErrorMode::Terminal => channel_errors(&traj[window], &samples[n + window].state()),
            ErrorMode::WindowMean => {
                let mut acc = [0.0; 4];
                for k in 1..=window {
                    let ek = channel_errors(&traj[k], &samples[n + k].state());
                    for c in 0..4 {
                        acc[c] += ek[c];
                    }
                }
                acc.map(|a| a / window as f64)
            }
        };
        for c in 0..4 {
            errors[c].push(e[c]);
        }
    }
    let mut fits = [(0.0, 0.0); 4];
    for c in 0..4 {
        fits[c] = fit_normal(&errors[c])?;
    }
    Ok(ErrorSummary {
        errors,
        fits,
        starts: starts.to_vec(),
        window,
        count: starts.len(),
        mode,
    })
}

/// One entry of a long-format plot table.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotRow {
    pub series: String,
    pub step_or_bin: usize,
    pub value: f64,
}

/// Tidy `(series, step_or_bin, value)` table with free-form metadata.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PlotTable {
    pub metadata: Vec<(String, String)>,
    pub rows: Vec<PlotRow>,
}

impl PlotTable {
    fn push(&mut self, series: String, step_or_bin: usize, value: f64) {
        self.rows.push(PlotRow {
            series,
            step_or_bin,
            value,
        });
    }

    /// Values of one series in row order.
    pub fn series(&self, name: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.series == name)
            .map(|r| r.value)
            .collect()
    }
}

/// One row per (trajectory, channel, step); the measured slice is the
/// `truth` trajectory.
pub fn rollout_plot(cmp: &RolloutComparison) -> PlotTable {
    let mut table = PlotTable {
        metadata: alloc::vec![
            ("kind".into(), "rollout".into()),
            ("start_index".into(), format!("{}", cmp.start_index)),
            ("steps".into(), format!("{}", cmp.controls.len())),
        ],
        rows: Vec::new(),
    };
    let trajectories = core::iter::once(("truth", &cmp.truth))
        .chain(cmp.predictions.iter().map(|(n, t)| (n.as_str(), t)));
    for (name, traj) in trajectories {
        for (c, channel) in CHANNELS.iter().enumerate() {
            for (k, s) in traj.iter().enumerate() {
                table.push(format!("{name}/{channel}"), k, s.to_array()[c]);
            }
        }
    }
    for (k, &u) in cmp.controls.iter().enumerate() {
        table.push("control/u".into(), k, u);
    }
    table
}

/// Raw window errors, shared-edge histograms and the normal fits of each
/// model, channel by channel.
pub fn error_plot(summaries: &[(&str, &ErrorSummary)], bins: usize) -> Result<PlotTable> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let mut table = PlotTable {
        metadata: alloc::vec![
            ("kind".into(), "window-errors".into()),
            ("bins".into(), format!("{bins}")),
        ],
        rows: Vec::new(),
    };
    let Some((_, first)) = summaries.first() else {
        return Ok(table);
    };
    table.metadata.push(("window".into(), format!("{}", first.window)));
    table.metadata.push(("count".into(), format!("{}", first.count)));
    for (c, channel) in CHANNELS.iter().enumerate() {
        let hi = summaries
            .iter()
            .flat_map(|(_, s)| s.errors[c].iter().copied())
            .fold(0.0f64, f64::max);
        let width = if hi > 0.0 { hi / bins as f64 } else { 1.0 };
        for b in 0..bins {
            table.push(format!("{channel}/bin_lo"), b, width * b as f64);
        }
        for (name, s) in summaries {
            for (i, &e) in s.errors[c].iter().enumerate() {
                table.push(format!("{name}/{channel}/error"), i, e);
            }
            let mut counts = alloc::vec![0usize; bins];
            for &e in &s.errors[c] {
                let b = ((e / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
            for (b, &n) in counts.iter().enumerate() {
                table.push(format!("{name}/{channel}/hist"), b, n as f64);
            }
            table.push(format!("{name}/{channel}/fit"), 0, s.fits[c].0);
            table.push(format!("{name}/{channel}/fit"), 1, s.fits[c].1);
        }
    }
    Ok(table)
}

/// Sample mean and sample standard deviation (`n − 1` denominator).
pub fn fit_normal(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::invalid(format!(
            "normal fit needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    Ok((mean, libm::sqrt(ss / (n - 1.0))))
}
