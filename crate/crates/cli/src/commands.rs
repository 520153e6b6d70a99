//! One function per subcommand. Each returns its report as JSON; the
//! wall-clock time, the only non-reproducible field, sits under `timing`.

use std::path::Path;
use std::time::Instant;

use pinode_core::datagen::{dataset_stats, excitation_signal, format_stats, sensor_model, simulate_rig, Dataset};
use pinode_core::diff::{compare_with_finite_differences, gradient, scalar_fn, MlpParams};
use pinode_core::dynamics::{Hybrid, PhysicalParams, PureOde};
use pinode_core::evaluation::{
    error_plot, rollout_compare, rollout_plot, window_starts, windowed_errors, ErrorSummary, NamedModel,
    WindowSampling, CHANNELS,
};
use pinode_core::integrator::rollout_model;
use pinode_core::rng::Stream;
use pinode_core::training::{baseline_loss, contiguous_starts, fit_baseline_friction, step_loss, train as run_training, Transition};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{Failure, Outcome};
use crate::io;

pub const PINODE: &str = "pinode";
pub const PURE_ODE: &str = "pure-ode";

fn header(command: &str, cfg: &RunConfig) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("command".into(), command.into());
    m.insert("config".into(), cfg.to_json());
    m.insert("config_sha256".into(), cfg.digest().into());
    m
}

fn timing(started: Instant) -> Value {
    json!({"wall_clock_seconds": started.elapsed().as_secs_f64()})
}

fn file_entry(path: &Path) -> Outcome<Value> {
    Ok(json!({"path": path.display().to_string(), "sha256": io::sha256_file(path)?}))
}

fn provenance_meta(cfg: &RunConfig) -> Vec<(String, String)> {
    vec![
        ("seed".into(), cfg.seed.to_string()),
        ("config_sha256".into(), cfg.digest()),
        ("config".into(), serde_json::to_string(&cfg.to_json()).expect("config serializes")),
    ]
}

/// Excitation, rig, sensor; the dataset is written to `out`.
pub fn generate(cfg: &RunConfig, out: &Path) -> Outcome<Dataset> {
    cfg.validate()?;
    let rig = cfg.rig();
    let g = &cfg.generate;
    let excitation = excitation_signal(g.duration, rig.sample_rate, g.amplitude, cfg.stream_seed(Stream::Excitation))?;
    let run = simulate_rig(&rig, &excitation, &cfg.initial_state())?;
    let mut data = sensor_model(&run.states, &run.controls, &rig, cfg.stream_seed(Stream::Sensor))?;
    data.set_provenance("synthetic rig");
    io::write_dataset(out, &data, &provenance_meta(cfg))?;
    Ok(data)
}

pub fn stats_text(data: &Dataset) -> Outcome<String> {
    Ok(format_stats(data, &dataset_stats(data)?))
}

pub fn initial_network(cfg: &RunConfig) -> Outcome<MlpParams> {
    let n = &cfg.network;
    Ok(MlpParams::init(&n.layer_sizes, n.output_scale, cfg.stream_seed(Stream::NetworkInit))?)
}

/// Trains from a fresh seeded network, writes the model to `model_out` and
/// the report to `report_out`.
pub fn train(
    cfg: &RunConfig,
    dataset: &Path,
    model_out: &Path,
    report_out: &Path,
    on_epoch: impl FnMut(usize, f64),
) -> Outcome<Value> {
    cfg.validate()?;
    let started = Instant::now();
    let data = io::read_dataset(dataset)?;
    let init = initial_network(cfg)?;
    let tc = cfg.train_config();
    let report = run_training(&cfg.physics, &data, &tc, init, cfg.network.input_mode, on_epoch)?;
    io::write_model(model_out, &report.params)?;

    let mut m = header("train", cfg);
    m.insert("dataset".into(), file_entry(dataset)?);
    m.insert("model".into(), file_entry(model_out)?);
    m.insert("parameters".into(), report.params.len().into());
    m.insert("shuffle_seed".into(), tc.seed.into());
    m.insert("steps".into(), report.steps.into());
    m.insert("loss_history".into(), json!(report.loss_history));
    m.insert("first_epoch_loss".into(), json!(report.loss_history.first()));
    m.insert("final_epoch_loss".into(), json!(report.loss_history.last()));
    m.insert("timing".into(), timing(started));
    let v = Value::Object(m);
    io::write_json(report_out, &v)?;
    Ok(v)
}

/// Least-squares Coulomb and viscous frictions of the pure-ODE model.
pub fn fit_baseline(cfg: &RunConfig, dataset: &Path, report_out: &Path) -> Outcome<Value> {
    cfg.validate()?;
    let started = Instant::now();
    let data = io::read_dataset(dataset)?;
    let w = &cfg.training.loss_weights;
    let (mu_c, mu_p) = fit_baseline_friction(&cfg.physics, &data, w)?;
    let loss = baseline_loss(
        &cfg.physics,
        mu_c,
        mu_p,
        &data.states(),
        &data.controls(),
        &contiguous_starts(&data, 1),
        w,
        data.dt(),
    )?;
    let mut m = header("fit-baseline", cfg);
    m.insert("dataset".into(), file_entry(dataset)?);
    m.insert("mu_c".into(), mu_c.into());
    m.insert("mu_p".into(), mu_p.into());
    m.insert("one_step_loss".into(), loss.into());
    m.insert("timing".into(), timing(started));
    let v = Value::Object(m);
    io::write_json(report_out, &v)?;
    Ok(v)
}

fn summary_json(s: &ErrorSummary) -> Value {
    json!({
        "mean": s.fits.iter().map(|f| f.0).collect::<Vec<_>>(),
        "std": s.fits.iter().map(|f| f.1).collect::<Vec<_>>(),
    })
}

/// Side-by-side `μ (σ)` table of both models.
pub fn format_summary(baseline: &ErrorSummary, pinode: &ErrorSummary) -> String {
    let mut out = format!(
        "{} windows of {} steps, {:?} error\n{:<10}{:>26}{:>26}\n",
        baseline.count, baseline.window, baseline.mode, "", "pure ODE μ (σ)", "PINODE μ (σ)"
    );
    for (c, name) in CHANNELS.iter().enumerate() {
        let cell = |s: &ErrorSummary| format!("{:.4e} ({:.2e})", s.fits[c].0, s.fits[c].1);
        out.push_str(&format!("{name:<10}{:>26}{:>26}\n", cell(baseline), cell(pinode)));
    }
    out
}

pub struct Evaluation {
    pub report: Value,
    pub table: String,
}

/// Fits the baseline, then runs the rollout comparison and the window
/// error protocol for both models. Plot data and the report go to `out_dir`.
pub fn evaluate(cfg: &RunConfig, dataset: &Path, model: &Path, out_dir: &Path) -> Outcome<Evaluation> {
    cfg.validate()?;
    let started = Instant::now();
    let data = io::read_dataset(dataset)?;
    let net = io::read_model(model)?;
    let e = &cfg.evaluation;
    if net.input_width() != cfg.network.input_mode.width() {
        return Err(Failure::invalid(format!(
            "model input width {} does not match input mode {:?}",
            net.input_width(),
            cfg.network.input_mode
        )));
    }
    let (mu_c, mu_p) = fit_baseline_friction(&cfg.physics, &data, &cfg.training.loss_weights)?;
    let baseline = PureOde {
        params: PhysicalParams {
            mu_c,
            mu_p,
            ..cfg.physics
        },
    };
    let pinode = Hybrid {
        params: cfg.physics,
        net: &net,
        input_mode: cfg.network.input_mode,
    };
    let seed = cfg.evaluation_seed();
    let base_errors = windowed_errors(&baseline, &data, e.window, e.count, seed, e.mode, e.sampling)?;
    let pinode_errors = windowed_errors(&pinode, &data, e.window, e.count, seed, e.mode, e.sampling)?;

    let start = e.rollout_start.min(data.len().saturating_sub(2));
    let steps = e.rollout_steps.min(data.len() - 1 - start);
    let cmp = rollout_compare(
        &[
            NamedModel {
                name: PURE_ODE.into(),
                model: &baseline,
            },
            NamedModel {
                name: PINODE.into(),
                model: &pinode,
            },
        ],
        &data,
        start,
        steps,
    )?;
    let ext = e.plot_format.extension();
    let rollout_path = out_dir.join(format!("rollout.{ext}"));
    let errors_path = out_dir.join(format!("window_errors.{ext}"));
    let mut rollout_table = rollout_plot(&cmp);
    rollout_table.metadata.push(("config_sha256".into(), cfg.digest()));
    io::write_plot(&rollout_path, &rollout_table, e.plot_format)?;
    let mut error_table = error_plot(
        &[(PURE_ODE, &base_errors), (PINODE, &pinode_errors)],
        e.histogram_bins,
    )?;
    error_table.metadata.push(("seed".into(), seed.to_string()));
    error_table.metadata.push(("config_sha256".into(), cfg.digest()));
    io::write_plot(&errors_path, &error_table, e.plot_format)?;

    let ratio: Vec<f64> = (0..4)
        .map(|c| base_errors.fits[c].0 / pinode_errors.fits[c].0)
        .collect();
    let mut m = header("evaluate", cfg);
    m.insert("dataset".into(), file_entry(dataset)?);
    m.insert("model".into(), file_entry(model)?);
    m.insert("baseline_friction".into(), json!({"mu_c": mu_c, "mu_p": mu_p}));
    m.insert(
        "protocol".into(),
        json!({"window": e.window, "count": e.count, "seed": seed, "mode": e.mode, "sampling": e.sampling}),
    );
    m.insert("channels".into(), json!(CHANNELS));
    m.insert(
        "models".into(),
        json!({PURE_ODE: summary_json(&base_errors), PINODE: summary_json(&pinode_errors)}),
    );
    m.insert("baseline_over_pinode".into(), json!(ratio));
    m.insert(
        "plots".into(),
        json!([file_entry(&rollout_path)?, file_entry(&errors_path)?]),
    );
    m.insert("timing".into(), timing(started));
    let report = Value::Object(m);
    io::write_json(&out_dir.join("evaluate_report.json"), &report)?;
    Ok(Evaluation {
        report,
        table: format_summary(&base_errors, &pinode_errors),
    })
}

/// Open-loop rollout of the pure-ODE model, or of the hybrid model when a
/// network is given, under the seeded excitation.
pub fn simulate(cfg: &RunConfig, model: Option<&Path>, out: &Path) -> Outcome<Dataset> {
    cfg.validate()?;
    let rate = cfg.rig.sample_rate;
    let g = &cfg.generate;
    let controls = excitation_signal(g.duration, rate, g.amplitude, cfg.stream_seed(Stream::Excitation))?;
    let z0 = cfg.initial_state();
    let h = 1.0 / rate;
    let (traj, label) = match model {
        Some(path) => {
            let net = io::read_model(path)?;
            let m = Hybrid {
                params: cfg.physics,
                net: &net,
                input_mode: cfg.network.input_mode,
            };
            (rollout_model(&m, &z0, &controls, h)?, "pinode model")
        }
        None => (
            rollout_model(&PureOde { params: cfg.physics }, &z0, &controls, h)?,
            "pure-ode model",
        ),
    };
    let data = Dataset::from_states(rate, &traj, &controls, label)?;
    io::write_dataset(out, &data, &provenance_meta(cfg))?;
    Ok(data)
}

pub struct GradCheckOutcome {
    pub report: Value,
    pub passed: bool,
}

pub const GRADCHECK_EPSILON: f64 = 1e-6;

/// Reverse-mode gradient of the one-step loss against central differences
/// on `batches` random batches of four transitions from a short rig run.
///
/// `corrupt` adds one to the analytic derivative of that parameter, to show
/// the check catches it.
pub fn gradcheck(
    cfg: &RunConfig,
    model: Option<&Path>,
    batches: usize,
    tolerance: f64,
    corrupt: Option<usize>,
    report_out: &Path,
) -> Outcome<GradCheckOutcome> {
    cfg.validate()?;
    if batches == 0 {
        return Err(Failure::invalid("need at least one batch"));
    }
    let started = Instant::now();
    let net = match model {
        Some(p) => io::read_model(p)?,
        None => initial_network(cfg)?,
    };
    if corrupt.is_some_and(|i| i >= net.len()) {
        return Err(Failure::invalid(format!("corrupt index beyond {} parameters", net.len())));
    }
    let rig = cfg.rig();
    let seed = cfg.stream_seed(Stream::GradCheck);
    let excitation = excitation_signal(10.0, rig.sample_rate, cfg.generate.amplitude, seed)?;
    let run = simulate_rig(&rig, &excitation, &cfg.initial_state())?;
    let data = sensor_model(&run.states, &run.controls, &rig, seed)?;
    let picks = window_starts(data.len(), 1, 4 * batches, WindowSampling::Random, seed)?;
    let samples = data.samples();
    let (w, h, mode) = (cfg.training.loss_weights, data.dt(), cfg.network.input_mode);

    let mut worst: Option<(usize, pinode_core::diff::GradCheck)> = None;
    for (b, chunk) in picks.chunks(4).enumerate() {
        let batch: Vec<Transition> = chunk
            .iter()
            .map(|&n| Transition {
                state: samples[n].state(),
                u: samples[n].u,
                next: samples[n + 1].state(),
            })
            .collect();
        let f = scalar_fn(|tn| {
            let m = Hybrid {
                params: cfg.physics,
                net: tn,
                input_mode: mode,
            };
            step_loss(tn.tape(), &m, &batch, &w, h)
        });
        let (_, mut analytic) = gradient(&net, &f)?;
        if let Some(i) = corrupt {
            *analytic.get_mut(i).expect("index checked") += 1.0;
        }
        let check = compare_with_finite_differences(&analytic, &f, &net, GRADCHECK_EPSILON)?;
        if worst.as_ref().is_none_or(|(_, c)| check.max_relative_error > c.max_relative_error) {
            worst = Some((b, check));
        }
    }
    let (batch, check) = worst.expect("at least one batch");
    let passed = check.max_relative_error < tolerance;
    let mut m = header("gradcheck", cfg);
    m.insert("parameters".into(), net.len().into());
    m.insert("batches".into(), batches.into());
    m.insert("batch_size".into(), 4.into());
    m.insert("epsilon".into(), GRADCHECK_EPSILON.into());
    m.insert("tolerance".into(), tolerance.into());
    m.insert("max_relative_error".into(), check.max_relative_error.into());
    m.insert("worst_index".into(), check.worst_index.into());
    m.insert("worst_batch".into(), batch.into());
    m.insert("analytic".into(), check.analytic.into());
    m.insert("numeric".into(), check.numeric.into());
    m.insert("passed".into(), passed.into());
    m.insert("timing".into(), timing(started));
    let report = Value::Object(m);
    io::write_json(report_out, &report)?;
    Ok(GradCheckOutcome { report, passed })
}
