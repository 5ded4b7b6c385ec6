//! `qpp`: run one simulation described by a TOML config and/or flags.
//!
//! Flags mirror the config keys and override the file. Results go to
//! `--output-dir`, else `output_dir` in the config, else `$QPP_OUTPUT_DIR`,
//! else `./qpp-results`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::{value::StrDeserializer, DeserializeOwned, IntoDeserializer};

use qpp_core::config::{read_config_file, Command, RunConfig, TopologyConfig};
use qpp_core::experiments::{Aggregation, Composition};
use qpp_core::run::{error_exit_code, execute_with_threads};
use qpp_core::tuner::StudyGate;
use qpp_core::Error;

#[derive(Debug, Parser)]
#[command(name = "qpp", version, about = "Programmable MZI-mesh simulator")]
struct Cli {
    /// TOML config; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, env = "QPP_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Exit with code 3 if any optimisation ran out of budget.
    #[arg(long, global = true)]
    strict: bool,
    #[command(flatten)]
    disorder: DisorderArgs,
    #[command(flatten)]
    tuner: TunerArgs,
    /// Defaults to the config's `command`.
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Debug, Args)]
struct DisorderArgs {
    #[arg(long, global = true, allow_negative_numbers = true)]
    coupler_mean: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    coupler_std: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    loss_mean: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    loss_std: Option<f64>,
}

#[derive(Debug, Args)]
struct TunerArgs {
    #[arg(long, global = true)]
    n_starts: Option<usize>,
    #[arg(long, global = true)]
    local_tolerance: Option<f64>,
    #[arg(long, global = true)]
    max_evaluations: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Transform of a nominal gate program on one chip.
    SimulateGate(GateArgs),
    /// Re-tune a gate program on one chip.
    OptimizeGate(GateArgs),
    /// Pre/post-tuning fidelity over an ensemble of chips.
    Study(StudyArgs),
    /// Iterative phase estimation.
    Ipea(IpeaArgs),
    /// Two-photon quantum walk ensemble.
    Qrw(QrwArgs),
    /// Draw coupler and loss samples from the disorder model.
    SampleFab(SampleFabArgs),
}

#[derive(Debug, Args)]
struct GateArgs {
    #[arg(long, value_parser = serde_enum::<StudyGate>)]
    gate: Option<StudyGate>,
    /// Conditional phase for `--gate cphase`, radians.
    #[arg(long, allow_negative_numbers = true)]
    phase: Option<f64>,
    #[arg(long)]
    instance: Option<u64>,
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    ideal: Option<bool>,
    /// Host chip size; both or neither.
    #[arg(long, requires = "n_layers")]
    n_modes: Option<usize>,
    #[arg(long, requires = "n_modes")]
    n_layers: Option<usize>,
}

#[derive(Debug, Args)]
struct StudyArgs {
    #[arg(long, value_parser = serde_enum::<StudyGate>)]
    gate: Option<StudyGate>,
    #[arg(long)]
    instances: Option<usize>,
}

#[derive(Debug, Args)]
struct IpeaArgs {
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[arg(long)]
    n_bits: Option<usize>,
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    optimize: Option<bool>,
    #[arg(long, value_parser = serde_enum::<Aggregation>)]
    aggregation: Option<Aggregation>,
    #[arg(long, value_parser = serde_enum::<Composition>)]
    composition: Option<Composition>,
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    ideal: Option<bool>,
}

#[derive(Debug, Args)]
struct QrwArgs {
    #[arg(long)]
    n_modes: Option<usize>,
    #[arg(long)]
    walk_layers: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    phi_max_tid: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    phi_max_td: Option<f64>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    fabrication: Option<bool>,
}

#[derive(Debug, Args)]
struct SampleFabArgs {
    #[arg(long)]
    samples: Option<usize>,
}

/// Parse a config enum from its TOML spelling.
fn serde_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    let de: StrDeserializer<'_, serde::de::value::Error> = s.into_deserializer();
    T::deserialize(de).map_err(|e| e.to_string())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Cli {
    fn resolve(self) -> Result<(RunConfig, Option<usize>, bool), Error> {
        let mut c = match &self.config {
            Some(path) => read_config_file(path)?,
            None => RunConfig::default(),
        };
        set(&mut c.seed, self.seed);
        if self.output_dir.is_some() {
            c.output_dir = self.output_dir;
        }
        set(&mut c.disorder.coupler_mean, self.disorder.coupler_mean);
        set(&mut c.disorder.coupler_std, self.disorder.coupler_std);
        set(&mut c.disorder.loss_mean, self.disorder.loss_mean);
        set(&mut c.disorder.loss_std, self.disorder.loss_std);
        set(&mut c.tuner.n_starts, self.tuner.n_starts);
        set(&mut c.tuner.local_tolerance, self.tuner.local_tolerance);
        set(&mut c.tuner.max_evaluations, self.tuner.max_evaluations);

        match self.command {
            None => {}
            Some(Cmd::SimulateGate(a)) => {
                c.command = Command::SimulateGate;
                a.apply(&mut c);
            }
            Some(Cmd::OptimizeGate(a)) => {
                c.command = Command::OptimizeGate;
                a.apply(&mut c);
            }
            Some(Cmd::Study(a)) => {
                c.command = Command::Study;
                set(&mut c.study.gate, a.gate);
                set(&mut c.study.instances, a.instances);
            }
            Some(Cmd::Ipea(a)) => {
                c.command = Command::Ipea;
                let s = &mut c.ipea;
                set(&mut s.lambda, a.lambda);
                set(&mut s.n_bits, a.n_bits);
                set(&mut s.optimize, a.optimize);
                set(&mut s.aggregation, a.aggregation);
                set(&mut s.composition, a.composition);
                set(&mut s.shots, a.shots);
                set(&mut s.instances, a.instances);
                set(&mut s.ideal, a.ideal);
            }
            Some(Cmd::Qrw(a)) => {
                c.command = Command::Qrw;
                let w = &mut c.qrw;
                set(&mut w.n_modes, a.n_modes);
                set(&mut w.n_walk_layers, a.walk_layers);
                set(&mut w.phi_max_tid, a.phi_max_tid);
                set(&mut w.phi_max_td, a.phi_max_td);
                set(&mut w.n_realizations, a.realizations);
                set(&mut w.include_fabrication, a.fabrication);
            }
            Some(Cmd::SampleFab(a)) => {
                c.command = Command::SampleFab;
                set(&mut c.sample_fab.samples, a.samples);
            }
        }
        c.validate()?;
        Ok((c, self.threads, self.strict))
    }
}

impl GateArgs {
    fn apply(self, c: &mut RunConfig) {
        let g = &mut c.gate;
        set(&mut g.gate, self.gate);
        set(&mut g.phase, self.phase);
        set(&mut g.instance, self.instance);
        set(&mut g.ideal, self.ideal);
        if let (Some(n_modes), Some(n_layers)) = (self.n_modes, self.n_layers) {
            g.topology = Some(TopologyConfig { n_modes, n_layers });
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (config, threads, strict) = match cli.resolve() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(error_exit_code(&e) as u8);
        }
    };
    match execute_with_threads(&config, threads) {
        Ok(outcome) => {
            println!("{}", outcome.bundle.dir.display());
            if outcome.budget_limited {
                eprintln!("warning: some optimisations stopped on their evaluation budget");
            }
            ExitCode::from(outcome.exit_code(strict) as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_exit_code(&e) as u8)
        }
    }
}
