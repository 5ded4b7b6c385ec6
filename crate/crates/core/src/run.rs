//! Command dispatch: turn a [`RunConfig`] into result files.
//!
//! | command         | data files                                         |
//! |-----------------|----------------------------------------------------|
//! | `simulate-gate` | `transform.csv`                                    |
//! | `optimize-gate` | `transform.csv`, `settings.csv`                    |
//! | `study`         | `instances.csv`                                    |
//! | `ipea`          | `runs.csv`                                         |
//! | `qrw`           | `density.csv`, `gamma.csv`, `variance.csv`         |
//! | `sample-fab`    | `samples.csv`                                      |
//!
//! Every run also writes `summary.json` and `config.toml`. Column orders are
//! given by each CSV's header row; `density.csv` and `gamma.csv` are bare
//! matrices (row = layer or first mode).

use serde_json::{json, Value};

use crate::config::{Command, RunConfig};
use crate::disorder::{InstanceSeed, MeshInstance};
use crate::error::{Error, Result};
use crate::experiments::{run_ipea, run_ipea_ensemble, run_walk_ensemble, IpeaRun};
use crate::fock::PostSelectedTransform;
use crate::gates::{nominal_cnot_program, nominal_cphase_program, settings_table, GateProgram, GateTarget};
use crate::output::{fmt_f64, Csv, ResultBundle, CONFIG_ECHO_FILE};
use crate::stats::{mean, median, std_dev};
use crate::tuner::{fidelity, monte_carlo_gate_study, optimize_program, StudyGate};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BUDGET_LIMITED: i32 = 3;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub bundle: ResultBundle,
    /// Some optimisation stopped on its evaluation budget.
    pub budget_limited: bool,
}

impl RunOutcome {
    pub fn exit_code(&self, strict: bool) -> i32 {
        if strict && self.budget_limited {
            EXIT_BUDGET_LIMITED
        } else {
            EXIT_OK
        }
    }
}

/// Exit code for a failed run.
pub fn error_exit_code(err: &Error) -> i32 {
    if err.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_FAILURE
    }
}

/// Validate and run `config` on the global thread pool.
pub fn execute(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let mut bundle = ResultBundle::new(config.output_dir());
    let budget_limited = match config.command {
        Command::SimulateGate => simulate_gate(config, &mut bundle)?,
        Command::OptimizeGate => optimize_gate(config, &mut bundle)?,
        Command::Study => study(config, &mut bundle)?,
        Command::Ipea => ipea(config, &mut bundle)?,
        Command::Qrw => qrw(config, &mut bundle)?,
        Command::SampleFab => sample_fab(config, &mut bundle)?,
    };
    bundle.write(CONFIG_ECHO_FILE, &config.to_toml()?)?;
    Ok(RunOutcome { bundle, budget_limited })
}

/// As [`execute`], on a dedicated pool of `threads` workers. Results do not depend on the count.
pub fn execute_with_threads(config: &RunConfig, threads: Option<usize>) -> Result<RunOutcome> {
    match threads {
        None => execute(config),
        Some(0) => Err(Error::param("threads", "must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| execute(config)),
    }
}

fn gate_program(config: &RunConfig) -> Result<(GateProgram, GateTarget)> {
    match config.gate.gate {
        StudyGate::Cnot => Ok(nominal_cnot_program()),
        StudyGate::Cphase => nominal_cphase_program(config.gate.phase),
    }
}

fn gate_instance(config: &RunConfig, program: &GateProgram) -> Result<MeshInstance> {
    let topo = match config.gate.topology {
        Some(t) => t.topology()?,
        None => program.region().host_topology()?,
    };
    program.region().fits(&topo)?;
    Ok(if config.gate.ideal {
        MeshInstance::ideal(topo)
    } else {
        config
            .disorder
            .sample_mesh_instance(topo, InstanceSeed::new(config.seed, config.gate.instance))
    })
}

fn transform_csv(t: &PostSelectedTransform) -> Csv {
    let mut csv = Csv::with_header(&["row", "col", "re", "im"]);
    for ((j, k), z) in t.matrix.indexed_iter() {
        csv.push_fields([j.to_string(), k.to_string(), fmt_f64(z.re), fmt_f64(z.im)]);
    }
    csv
}

fn gate_fields(config: &RunConfig) -> Value {
    json!({
        "gate": config.gate.gate,
        "phase": config.gate.phase,
        "seed": config.seed,
        "instance": config.gate.instance,
        "ideal": config.gate.ideal,
    })
}

fn merge(mut a: Value, b: Value) -> Value {
    if let (Value::Object(a), Value::Object(b)) = (&mut a, b) {
        a.extend(b);
    }
    a
}

fn simulate_gate(config: &RunConfig, bundle: &mut ResultBundle) -> Result<bool> {
    let (program, target) = gate_program(config)?;
    let instance = gate_instance(config, &program)?;
    let t = program.transform(&instance)?;
    let f = fidelity(&t.matrix, target.matrix())?.value();
    bundle.write_csv("transform.csv", &transform_csv(&t))?;
    bundle.write_summary(
        Command::SimulateGate.name(),
        merge(gate_fields(config), json!({ "fidelity": f, "success": t.success })),
    )?;
    Ok(false)
}

fn optimize_gate(config: &RunConfig, bundle: &mut ResultBundle) -> Result<bool> {
    let (program, target) = gate_program(config)?;
    let instance = gate_instance(config, &program)?;
    let outcome = optimize_program(&instance, &program, &target, &config.tuner)?;
    let t = outcome.program.transform(&instance)?;
    let mut settings = Csv::with_header(&["layer", "position", "theta", "phi"]);
    for (a, s) in settings_table(&outcome.program) {
        settings.push_fields([a.layer.to_string(), a.position.to_string(), fmt_f64(s.theta()), fmt_f64(s.phi())]);
    }
    bundle.write_csv("transform.csv", &transform_csv(&t))?;
    bundle.write_csv("settings.csv", &settings)?;
    bundle.write_summary(
        Command::OptimizeGate.name(),
        merge(
            gate_fields(config),
            json!({
                "pre_fidelity": outcome.nominal_fidelity.value(),
                "post_fidelity": outcome.fidelity.value(),
                "evaluations": outcome.evaluations,
                "budget_limited": outcome.budget_limited,
                "success": t.success,
            }),
        ),
    )?;
    Ok(outcome.budget_limited)
}

fn study(config: &RunConfig, bundle: &mut ResultBundle) -> Result<bool> {
    let result = monte_carlo_gate_study(
        config.study.gate,
        &config.disorder,
        config.study.instances,
        config.seed,
        &config.tuner,
    )?;
    let mut csv = Csv::with_header(&["index", "pre_fidelity", "post_fidelity", "evaluations", "budget_limited"]);
    for r in &result.records {
        csv.push_fields([
            r.index.to_string(),
            fmt_f64(r.pre_fidelity),
            fmt_f64(r.post_fidelity),
            r.evaluations.to_string(),
            r.budget_limited.to_string(),
        ]);
    }
    bundle.write_csv("instances.csv", &csv)?;
    let limited = result.any_budget_limited();
    bundle.write_summary(
        Command::Study.name(),
        json!({
            "gate": config.study.gate,
            "seed": config.seed,
            "instances": result.records.len(),
            "median_pre_fidelity": result.median_pre,
            "median_post_fidelity": result.median_post,
            "budget_limited_instances": result.records.iter().filter(|r| r.budget_limited).count(),
        }),
    )?;
    Ok(limited)
}

/// Nearest `n_bits` binary fraction to `lambda`, most significant bit first.
fn expected_bits(lambda: f64, n_bits: usize) -> Vec<u8> {
    let scale = (1u64 << n_bits) as f64;
    let k = ((lambda * scale).round() as u64) % (1u64 << n_bits);
    (0..n_bits).map(|j| ((k >> (n_bits - 1 - j)) & 1) as u8).collect()
}

fn ipea(config: &RunConfig, bundle: &mut ResultBundle) -> Result<bool> {
    let ic = config.ipea.to_config(config.tuner);
    let runs: Vec<IpeaRun> = if config.ipea.ideal {
        let topo = crate::experiments::ipea::ipea_topology();
        vec![run_ipea(&ic, &MeshInstance::ideal(topo), InstanceSeed::new(config.seed, 0))?]
    } else {
        run_ipea_ensemble(&ic, &config.disorder, config.ipea.instances, config.seed)?
    };
    let mut header = vec!["index".to_string(), "bits".into(), "fidelity".into()];
    header.extend((0..ic.n_bits).map(|i| format!("fidelity_{}", i + 1)));
    header.extend((0..ic.n_bits).map(|i| format!("p_one_{}", i + 1)));
    header.extend(["evaluations".into(), "budget_limited".into()]);
    let mut csv = Csv::headerless();
    csv.push_fields(header);
    for (i, r) in runs.iter().enumerate() {
        let mut row = vec![i.to_string(), r.bit_string(), fmt_f64(r.fidelity)];
        row.extend(r.fidelities.iter().map(|&x| fmt_f64(x)));
        row.extend(r.p_one.iter().map(|&x| fmt_f64(x)));
        row.extend([r.evaluations.to_string(), r.budget_limited.to_string()]);
        csv.push_fields(row);
    }
    bundle.write_csv("runs.csv", &csv)?;
    let expected = expected_bits(ic.lambda, ic.n_bits);
    let fids: Vec<f64> = runs.iter().map(|r| r.fidelity).collect();
    let correct = runs.iter().filter(|r| r.bits == expected).count();
    let limited = runs.iter().any(|r| r.budget_limited);
    bundle.write_summary(
        Command::Ipea.name(),
        json!({
            "seed": config.seed,
            "lambda": ic.lambda,
            "n_bits": ic.n_bits,
            "optimize": ic.optimize,
            "aggregation": ic.aggregation,
            "ideal": config.ipea.ideal,
            "runs": runs.len(),
            "median_fidelity": median(&fids),
            "expected_bits": expected.iter().map(|b| b.to_string()).collect::<String>(),
            "fraction_correct": correct as f64 / runs.len() as f64,
            "budget_limited_runs": runs.iter().filter(|r| r.budget_limited).count(),
        }),
    )?;
    Ok(limited)
}

fn qrw(config: &RunConfig, bundle: &mut ResultBundle) -> Result<bool> {
    let wc = config.walk_config();
    let r = run_walk_ensemble(&wc, config.seed)?;
    let mut density = Csv::headerless();
    for row in r.density.rows() {
        density.push_floats(&row.to_vec());
    }
    let mut gamma = Csv::headerless();
    for row in r.gamma.matrix().rows() {
        gamma.push_floats(&row.to_vec());
    }
    let mut variance = Csv::with_header(&["layer", "variance"]);
    for (l, v) in r.variance.iter().enumerate() {
        variance.push_fields([l.to_string(), fmt_f64(*v)]);
    }
    bundle.write_csv("density.csv", &density)?;
    bundle.write_csv("gamma.csv", &gamma)?;
    bundle.write_csv("variance.csv", &variance)?;
    let steps = wc.n_walk_layers;
    let exponent = (steps >= 6).then(|| r.variance_exponent(5..=steps.min(15)));
    let loc = r.localization_fit(0.9);
    let (near, far) = r.correlation_mass_split(2);
    bundle.write_summary(
        Command::Qrw.name(),
        json!({
            "seed": config.seed,
            "realizations": r.n_realizations,
            "phi_max_tid": wc.phi_max_tid,
            "phi_max_td": wc.phi_max_td,
            "include_fabrication": wc.include_fabrication,
            "variance_exponent": exponent.map(|f| f.slope),
            "variance_fit_r_squared": exponent.map(|f| f.r_squared),
            "output_excess_kurtosis": r.output_excess_kurtosis(),
            "output_participation_ratio": r.output_participation_ratio(),
            "mean_participation_ratio": r.mean_participation_ratio,
            "localization_slope": loc.slope,
            "localization_r_squared": loc.r_squared,
            "gamma_mass_near": near,
            "gamma_mass_far": far,
        }),
    )?;
    Ok(false)
}

fn sample_fab(config: &RunConfig, bundle: &mut ResultBundle) -> Result<bool> {
    let n = config.sample_fab.samples;
    let mut rng = InstanceSeed::new(config.seed, 0).rng();
    let model = &config.disorder;
    let mut coupler = Vec::with_capacity(n);
    let mut loss = Vec::with_capacity(n);
    for _ in 0..n {
        coupler.push(model.sample_coupler_transitivity(&mut rng));
        loss.push(model.sample_shifter_loss(&mut rng));
    }
    let mut csv = Csv::with_header(&["index", "coupler", "loss"]);
    for i in 0..n {
        csv.push_fields([i.to_string(), fmt_f64(coupler[i]), fmt_f64(loss[i])]);
    }
    bundle.write_csv("samples.csv", &csv)?;
    bundle.write_summary(
        Command::SampleFab.name(),
        json!({
            "seed": config.seed,
            "samples": n,
            "coupler_mean": mean(&coupler),
            "coupler_std": std_dev(&coupler),
            "loss_mean": mean(&loss),
            "loss_std": std_dev(&loss),
        }),
    )?;
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::StudyConfig;

    fn in_tempdir(mut config: RunConfig) -> (tempfile::TempDir, RunConfig) {
        let dir = tempfile::tempdir().unwrap();
        config.output_dir = Some(dir.path().to_path_buf());
        (dir, config)
    }

    #[test]
    fn expected_bits_msb_first() {
        assert_eq!(expected_bits(0.625, 3), vec![1, 0, 1]);
        assert_eq!(expected_bits(0.0, 2), vec![0, 0]);
        assert_eq!(expected_bits(0.99, 2), vec![0, 0]);
    }

    #[test]
    fn ideal_simulate_gate_is_perfect() {
        let mut c = RunConfig {
            command: Command::SimulateGate,
            ..Default::default()
        };
        c.gate.ideal = true;
        let (dir, c) = in_tempdir(c);
        let out = execute(&c).unwrap();
        assert_eq!(out.exit_code(true), EXIT_OK);
        let v = crate::output::read_summary(&dir.path().join("summary.json")).unwrap();
        assert!((v["fidelity"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        let echo = std::fs::read_to_string(dir.path().join(CONFIG_ECHO_FILE)).unwrap();
        assert_eq!(crate::config::parse_config(&echo).unwrap(), c);
    }

    #[test]
    fn study_files_repeat_across_thread_counts() {
        let c = RunConfig {
            command: Command::Study,
            seed: 7,
            study: StudyConfig {
                instances: 4,
                ..Default::default()
            },
            ..Default::default()
        };
        let (d1, c1) = in_tempdir(c.clone());
        let (d2, c2) = in_tempdir(c);
        execute_with_threads(&c1, Some(1)).unwrap();
        execute_with_threads(&c2, Some(3)).unwrap();
        let a = std::fs::read(d1.path().join("instances.csv")).unwrap();
        let b = std::fs::read(d2.path().join("instances.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_budget_is_flagged() {
        let mut c = RunConfig {
            command: Command::OptimizeGate,
            ..Default::default()
        };
        c.tuner.n_starts = 1;
        c.tuner.max_evaluations = 5;
        let (_d, c) = in_tempdir(c);
        let out = execute(&c).unwrap();
        assert!(out.budget_limited);
        assert_eq!(out.exit_code(true), EXIT_BUDGET_LIMITED);
        assert_eq!(out.exit_code(false), EXIT_OK);
    }

    #[test]
    fn validation_errors_map_to_exit_two() {
        let mut c = RunConfig::default();
        c.disorder.coupler_std = -0.1;
        assert_eq!(error_exit_code(&execute(&c).unwrap_err()), EXIT_VALIDATION);
        assert_eq!(error_exit_code(&execute_with_threads(&RunConfig::default(), Some(0)).unwrap_err()), EXIT_VALIDATION);
    }
}
