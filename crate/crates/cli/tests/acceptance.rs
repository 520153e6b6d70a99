//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Criterion 7 trains the default benchmark end to end through the
//! `pinode` binary and takes several minutes.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use pinode::commands::{self, GRADCHECK_EPSILON};
use pinode::io;
use pinode::RunConfig;
use pinode_core::datagen::{excitation_signal, Dataset};
use pinode_core::diff::{param_count, MlpParams};
use pinode_core::dynamics::{
    coriolis_term, energy, gravity_term, mass_matrix, Hybrid, InputMode, PhysicalParams, PureOde, State,
};
use pinode_core::integrator::rollout_model;
use pinode_core::rng::stream_rng;
use pinode_core::training::{fit_baseline_friction, step_loss, LossWeights, Transition};
use rand::Rng;
use serde_json::Value;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn gradient_correctness() -> Verdict {
    let cfg = RunConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let res = commands::gradcheck(&cfg, None, 10, 1e-5, None, &dir.path().join("g.json")).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let err = res.report["max_relative_error"].as_f64().unwrap();
    verdict(
        res.passed && secs < 60.0,
        format!(
            "10 batches of 4, eps {GRADCHECK_EPSILON:e}, {} parameters: max relative error {err:.2e} (< 1e-5), {secs:.1} s",
            res.report["parameters"]
        ),
    )
}

fn frictionless() -> PureOde {
    PureOde {
        params: PhysicalParams::default().frictionless(),
    }
}

fn rk4_order() -> Verdict {
    let z0 = State::new(0.0, PI - 0.8, 0.3, 1.0);
    let end = |h: f64| {
        let n = (1.0 / h).round() as usize;
        rollout_model(&frictionless(), &z0, &vec![0.0; n], h).unwrap()[n].to_array()
    };
    let h = 0.05;
    let reference = end(h / 16.0);
    let err = |z: [f64; 4]| {
        z.iter()
            .zip(reference)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let ratio = err(end(h)) / err(end(h / 2.0));
    verdict(
        (12.0..=20.0).contains(&ratio),
        format!("error ratio h = {h} vs h/2 over 1 s: {ratio:.3} (in [12, 20])"),
    )
}

fn energy_conservation() -> Verdict {
    let p = PhysicalParams::default().frictionless();
    let z0 = State::new(0.0, PI - 0.3, 0.0, 0.0);
    let traj = rollout_model(&frictionless(), &z0, &vec![0.0; 500], 0.02).unwrap();
    let e0 = energy(&p, &z0).total();
    let worst = traj
        .iter()
        .map(|s| (energy(&p, s).total() - e0).abs())
        .fold(0.0, f64::max);
    verdict(
        worst < 1e-6,
        format!("max |T+V - E0| over 10 s at h = 0.02: {worst:.2e} J (< 1e-6)"),
    )
}

/// Fourth-order central difference at 0.
fn d1(f: impl Fn(f64) -> f64, e: f64) -> f64 {
    (-f(2.0 * e) + 8.0 * f(e) - 8.0 * f(-e) + f(-2.0 * e)) / (12.0 * e)
}

fn euler_lagrange() -> Verdict {
    let p = PhysicalParams::default();
    let t_of = |q: [f64; 2], qd: [f64; 2]| energy(&p, &State::new(q[0], q[1], qd[0], qd[1])).kinetic;
    let v_of = |q: [f64; 2]| energy(&p, &State::new(q[0], q[1], 0.0, 0.0)).potential;
    let bump = |v: [f64; 2], i: usize, by: f64| {
        let mut v = v;
        v[i] += by;
        v
    };
    let mut rng = stream_rng(2024, 1);
    let e = 1e-3;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let q = [rng.gen_range(-0.3..0.3), rng.gen_range(-TAU..TAU)];
        let qd = [rng.gen_range(-3.0..3.0), rng.gen_range(-10.0..10.0)];
        let qdd = [rng.gen_range(-20.0..20.0), rng.gen_range(-200.0..200.0)];
        let s = State::new(q[0], q[1], qd[0], qd[1]);
        let (m, c, g) = (mass_matrix(&p, &s), coriolis_term(&p, &s), gravity_term(&p, &s));
        for i in 0..2 {
            let ddt = d1(
                |t| {
                    let qt = [q[0] + qd[0] * t + 0.5 * qdd[0] * t * t, q[1] + qd[1] * t + 0.5 * qdd[1] * t * t];
                    let qdt = [qd[0] + qdd[0] * t, qd[1] + qdd[1] * t];
                    d1(|h| t_of(qt, bump(qdt, i, h)), e)
                },
                e,
            );
            let lhs = ddt - d1(|h| t_of(bump(q, i, h), qd), e) + d1(|h| v_of(bump(q, i, h)), e);
            let rhs = m[i][0] * qdd[0] + m[i][1] * qdd[1] + c[i] + g[i];
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-2));
        }
    }
    verdict(
        worst < 1e-5,
        format!("200 random states, max relative residual {worst:.2e} (< 1e-5)"),
    )
}

fn baseline_recovery() -> Verdict {
    let p = PhysicalParams::default();
    let controls = excitation_signal(60.0, 50.0, 2.0, 17).unwrap();
    let traj = rollout_model(&PureOde { params: p }, &State::new(0.0, PI - 0.2, 0.0, 0.0), &controls, 0.02).unwrap();
    let data = Dataset::from_states(50.0, &traj, &controls, "pure-ode").unwrap();
    let started = Instant::now();
    let (mu_c, mu_p) = fit_baseline_friction(&p, &data, &LossWeights::default()).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let (rc, rp) = ((mu_c - 0.0408).abs() / 0.0408, (mu_p - 0.0020).abs() / 0.0020);
    verdict(
        rc < 0.01 && rp < 0.01 && secs < 60.0,
        format!("mu_c {mu_c:.6} ({:.3}%), mu_p {mu_p:.7} ({:.3}%), {secs:.1} s", rc * 100.0, rp * 100.0),
    )
}

fn parameter_count() -> Verdict {
    let cfg = RunConfig::default();
    let n = param_count(&cfg.network.layer_sizes).unwrap();
    let built = commands::initial_network(&cfg).unwrap().len();
    verdict(
        n == 5451 && built == 5451,
        format!("{:?}: {n} counted, {built} built", cfg.network.layer_sizes),
    )
}

fn angle_invariance() -> Verdict {
    let net = MlpParams::init(&[5, 50, 50, 50, 1], 10.0, 8).unwrap();
    let model = Hybrid {
        params: PhysicalParams::default(),
        net: &net,
        input_mode: InputMode::RawAngle,
    };
    let w = LossWeights::default();
    let mut rng = stream_rng(99, 2);
    let state = |rng: &mut rand_chacha::ChaCha8Rng| {
        State::new(
            rng.gen_range(-0.3..0.3),
            rng.gen_range(0.0..TAU),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-8.0..8.0),
        )
    };
    let (mut exact_ok, mut worst) = (true, 0.0f64);
    for _ in 0..200 {
        let mut t = Transition {
            state: state(&mut rng),
            u: rng.gen_range(-3.0..3.0),
            next: state(&mut rng),
        };
        // φ + 2π is exact for φ = (ψ + 2π) − 2π (Sterbenz)
        t.next.phi = (t.next.phi + TAU) - TAU;
        let base = step_loss::<f64, _>((), &model, &[t], &w, 0.02).unwrap();
        let mut shifted = t;
        shifted.next.phi += TAU;
        exact_ok &= step_loss::<f64, _>((), &model, &[shifted], &w, 0.02).unwrap().to_bits() == base.to_bits();
        for k in [-3.0, -1.0, 2.0, 3.0] {
            let mut s = t;
            s.next.phi += TAU * k;
            let l = step_loss::<f64, _>((), &model, &[s], &w, 0.02).unwrap();
            worst = worst.max((l - base).abs() / base.max(1e-300));
        }
    }
    verdict(
        exact_ok && worst < 1e-12,
        format!("200 transitions: bit-identical for exactly representable +2pi: {exact_ok}; other multiples within {worst:.1e} relative"),
    )
}

fn pinode_bin(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pinode"))
        .current_dir(dir)
        .arg("--config")
        .arg("run.toml")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "{args:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn pipeline(dir: &Path, config: &str) -> Result<(), String> {
    fs::write(dir.join("run.toml"), config).map_err(|e| e.to_string())?;
    pinode_bin(dir, &["generate"])?;
    pinode_bin(dir, &["train"])?;
    pinode_bin(dir, &["evaluate"])?;
    Ok(())
}

const PATHS: &str = "[paths]\ndataset = \"data/benchmark.csv\"\nmodel = \"out/model.json\"\nreports = \"out\"\n";

struct Benchmark {
    dir: tempfile::TempDir,
    minutes: f64,
}

fn run_benchmark() -> Result<Benchmark, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let started = Instant::now();
    pipeline(dir.path(), PATHS)?;
    Ok(Benchmark {
        dir,
        minutes: started.elapsed().as_secs_f64() / 60.0,
    })
}

fn headline(b: &Benchmark) -> Verdict {
    let report = read_json(&b.dir.path().join("out/evaluate_report.json"));
    let epochs = report["config"]["training"]["epochs"].as_u64().unwrap();
    let mean = |m: &str| -> Vec<f64> {
        report["models"][m]["mean"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect()
    };
    let (base, pin) = (mean("pure-ode"), mean("pinode"));
    let lower = (0..4).all(|c| pin[c] < base[c]);
    let ratio: Vec<f64> = (0..4).map(|c| base[c] / pin[c]).collect();
    let cart = ratio[0] >= 2.0 && ratio[2] >= 2.0;
    verdict(
        lower && cart && epochs <= 200,
        format!(
            "{epochs} epochs, {:.1} min; mean terminal error pure ODE / PINODE: x {:.3e}/{:.3e} ({:.2}x), phi {:.3e}/{:.3e} ({:.2}x), x_dot {:.3e}/{:.3e} ({:.2}x), phi_dot {:.3e}/{:.3e} ({:.2}x); all lower: {lower}, cart >= 2x: {cart}",
            b.minutes, base[0], pin[0], ratio[0], base[1], pin[1], ratio[1], base[2], pin[2], ratio[2], base[3], pin[3], ratio[3]
        ),
    )
}

fn loss_descent(b: &Benchmark) -> Verdict {
    let report = read_json(&b.dir.path().join("out/train_report.json"));
    let first = report["first_epoch_loss"].as_f64().unwrap();
    let last = report["final_epoch_loss"].as_f64().unwrap();
    let r = last / first;
    verdict(
        r < 0.1,
        format!("first epoch {first:.4e}, final epoch {last:.4e}, ratio {r:.4} (< 0.1)"),
    )
}

fn without_timing(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timing");
    v
}

fn determinism() -> Verdict {
    let config = format!(
        "seed = 31\n[generate]\nduration = 30.0\n[training]\nepochs = 3\n[evaluation]\ncount = 200\n{PATHS}"
    );
    let run = || -> Result<(tempfile::TempDir, Value, Value), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        pipeline(dir.path(), &config)?;
        let train = without_timing(read_json(&dir.path().join("out/train_report.json")));
        let eval = without_timing(read_json(&dir.path().join("out/evaluate_report.json")));
        Ok((dir, train, eval))
    };
    match (run(), run()) {
        (Ok((_, ta, ea)), Ok((_, tb, eb))) => verdict(
            ta == tb && ea == eb,
            format!(
                "generate, train, evaluate twice with seed 31: train reports equal {}, evaluate reports equal {}",
                ta == tb,
                ea == eb
            ),
        ),
        (Err(e), _) | (_, Err(e)) => verdict(false, e),
    }
}

fn round_trips(b: &Benchmark) -> Verdict {
    let csv_path = b.dir.path().join("data/benchmark.csv");
    let data = io::read_dataset(&csv_path).unwrap();
    let again = io::dataset_from_csv(&io::dataset_to_csv(&data, &[])).unwrap();
    let bits = |d: &Dataset| -> Vec<u64> {
        d.samples()
            .iter()
            .flat_map(|s| [s.t, s.x, s.phi, s.x_dot, s.phi_dot, s.u])
            .map(f64::to_bits)
            .collect()
    };
    let csv_ok = bits(&data) == bits(&again);
    let model = io::read_model(&b.dir.path().join("out/model.json")).unwrap();
    let back = io::model_from_json(&io::model_to_json(&model)).unwrap();
    let model_bits = |m: &MlpParams| m.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let json_ok = model_bits(&model) == model_bits(&back);
    // the trained model as written is what training produced
    let report = read_json(&b.dir.path().join("out/train_report.json"));
    let file_ok = report["model"]["sha256"] == Value::from(io::sha256_file(&b.dir.path().join("out/model.json")).unwrap());
    verdict(
        csv_ok && json_ok && file_ok,
        format!(
            "{} samples x 6 columns bit-exact: {csv_ok}; {} weights bit-exact: {json_ok}",
            data.len(),
            model.len()
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Verdict)> = vec![
        (1, "gradient correctness", gradient_correctness()),
        (2, "RK4 order", rk4_order()),
        (3, "energy conservation", energy_conservation()),
        (4, "Euler-Lagrange oracle", euler_lagrange()),
        (5, "baseline recovery", baseline_recovery()),
        (6, "parameter count", parameter_count()),
    ];
    match run_benchmark() {
        Ok(b) => {
            results.push((7, "headline reproduction", headline(&b)));
            results.push((8, "loss descent", loss_descent(&b)));
            results.push((9, "angle-embedding invariance", angle_invariance()));
            results.push((10, "determinism", determinism()));
            results.push((11, "CSV and model-JSON round-trips", round_trips(&b)));
        }
        Err(e) => {
            for (n, name) in [(7, "headline reproduction"), (8, "loss descent"), (11, "CSV and model-JSON round-trips")] {
                results.push((n, name, verdict(false, format!("benchmark pipeline failed: {e}"))));
            }
            results.push((9, "angle-embedding invariance", angle_invariance()));
            results.push((10, "determinism", determinism()));
        }
    }
    results.sort_by_key(|r| r.0);
    for (n, name, v) in &results {
        println!(
            "criterion {n:>2} {}: {name}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    let failed = results.iter().filter(|r| !r.2.passed).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
