//! Iterative phase estimation on the mesh.
//!
//! Iteration `k` (run for `k = m, m−1, …, 1`) interferes an ancilla qubit
//! (the control of the strip) with a target prepared in |1⟩, the eigenstate
//! of CPHASE(φ) with eigenphase φ = 2π·2^{k−1}·λ:
//!
//! ```text
//! (H·Rz(ω_k) ⊗ I) · CPHASE(φ) · (H ⊗ I),   ω_k = −2π·(0.0 b_{k+1} … b_m)₂
//! ```
//!
//! and measures the ancilla. On the chip this is three sections on an
//! 8-mode × 14-layer block: layers 0..4 hold H on the ancilla, layers 4..10
//! the CPHASE program, layers 10..14 the rotation and final H. Each section
//! can be re-tuned against its own ideal target. By default the iteration's
//! process is the product of the three sections' post-selected transforms
//! ([`Composition::Sections`]); [`Composition::Mesh`] evaluates the whole
//! block as one transform instead, which also sees light leaking between
//! sections through the ancilla modes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::disorder::{DisorderModel, InstanceSeed, MeshInstance};
use crate::error::{Error, Result};
use crate::fock::two_photon_transform;
use crate::gates::{
    load_programs, local_gates_program, nominal_cphase_program, GateProgram, GateTarget, CPHASE_LAYERS, CPHASE_MODES,
    LOCAL_GATE_LAYERS,
};
use crate::mesh::{wrap_phase, MeshTopology};
use crate::tuner::{fidelity, optimize_program, TuneOptions};

/// Layers of one iteration block.
pub const IPEA_LAYERS: usize = 2 * LOCAL_GATE_LAYERS + CPHASE_LAYERS;

/// Salt mixed into the master seed for shot sampling, so shot noise never
/// shares a stream with fabrication sampling.
const SHOT_SALT: u64 = 0x5348_4f54_5341_4c54;

/// How an iteration block is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Composition {
    /// Product of the three sections' post-selected 4×4 transforms, the
    /// gate-by-gate picture the sections are tuned in.
    #[default]
    Sections,
    /// One post-selected transform of the whole block. Also counts light a
    /// section sends out of the rails that a later section couples back in.
    Mesh,
}

/// How per-iteration fidelities collapse into one number per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Min,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IpeaConfig {
    /// Eigenphase in [0, 1): U|u⟩ = e^{2πiλ}|u⟩.
    pub lambda: f64,
    pub n_bits: usize,
    /// Re-tune every section on the sampled chip before running.
    pub optimize: bool,
    pub aggregation: Aggregation,
    pub composition: Composition,
    /// Measurement shots per iteration; 0 uses exact probabilities.
    pub shots: u64,
    /// Not part of the serialised form; run configs carry one shared `[tuner]` table.
    #[serde(skip)]
    pub tune: TuneOptions,
}

impl Default for IpeaConfig {
    fn default() -> Self {
        IpeaConfig {
            lambda: 0.625,
            n_bits: 3,
            optimize: true,
            aggregation: Aggregation::Min,
            composition: Composition::Sections,
            shots: 0,
            tune: TuneOptions::default(),
        }
    }
}

impl IpeaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && (0.0..1.0).contains(&self.lambda)) {
            return Err(Error::param("lambda", format!("{} outside [0, 1)", self.lambda)));
        }
        if !(1..=30).contains(&self.n_bits) {
            return Err(Error::param("n_bits", format!("{} outside 1..=30", self.n_bits)));
        }
        self.tune.validate()
    }
}

/// Ideal targets of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IpeaSections {
    pub k: usize,
    pub omega: f64,
    pub cphase_phase: f64,
    /// H on the ancilla.
    pub input: GateTarget,
    pub cphase: GateTarget,
    /// H·Rz(ω) on the ancilla.
    pub output: GateTarget,
}

impl IpeaSections {
    /// Full ideal iteration: output · CPHASE · input.
    pub fn ideal(&self) -> GateTarget {
        let i2 = GateTarget::identity2();
        let inp = GateTarget::hadamard().kron(&i2);
        let out = self.output.kron(&i2);
        out.compose(&self.cphase).and_then(|m| m.compose(&inp)).expect("4x4 targets")
    }
}

/// Targets for iteration `k` given the bits measured so far, in measurement
/// order `b_m, b_{m−1}, …, b_{k+1}`.
pub fn build_ipea_iteration(k: usize, bits_measured: &[u8], lambda: f64) -> Result<IpeaSections> {
    if k == 0 {
        return Err(Error::param("k", "iterations count from 1"));
    }
    if bits_measured.iter().any(|&b| b > 1) {
        return Err(Error::param("bits_measured", "bits must be 0 or 1"));
    }
    // bits_measured[i] is b_{m−i}; b_j contributes b_j / 2^{j−k+1}
    let m = k + bits_measured.len();
    let fraction: f64 = bits_measured
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let j = m - i;
            f64::from(b) * 0.5f64.powi((j - k + 1) as i32)
        })
        .sum();
    let omega = -TAU * fraction;
    let cphase_phase = wrap_phase(TAU * (2f64.powi(k as i32 - 1) * lambda).fract());
    let output = GateTarget::hadamard().compose(&GateTarget::rz(omega))?;
    Ok(IpeaSections {
        k,
        omega,
        cphase_phase,
        input: GateTarget::hadamard(),
        cphase: GateTarget::cphase(cphase_phase),
        output,
    })
}

/// Host topology of an iteration block.
pub fn ipea_topology() -> MeshTopology {
    MeshTopology::new(CPHASE_MODES, IPEA_LAYERS).expect("static shape")
}

/// Nominal section programs and their targets.
pub fn section_programs(sections: &IpeaSections) -> Result<[(GateProgram, GateTarget); 3]> {
    let i2 = GateTarget::identity2();
    let input = local_gates_program(&sections.input, &i2, 0)?;
    let (cp, cp_target) = nominal_cphase_program(sections.cphase_phase)?;
    let output = local_gates_program(&sections.output, &i2, LOCAL_GATE_LAYERS + CPHASE_LAYERS)?;
    Ok([input, (cp.shifted(LOCAL_GATE_LAYERS, 0)?, cp_target), output])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpeaRun {
    /// Measured bits, most significant first: λ ≈ Σ b_j 2^{−j}.
    pub bits: Vec<u8>,
    /// Probability of ancilla outcome 1, per iteration in run order (k = m first).
    pub p_one: Vec<f64>,
    /// Process fidelity of each iteration block, in run order.
    pub fidelities: Vec<f64>,
    pub fidelity: f64,
    pub evaluations: usize,
    pub budget_limited: bool,
}

impl IpeaRun {
    pub fn bit_string(&self) -> String {
        self.bits.iter().map(|b| if *b == 1 { '1' } else { '0' }).collect()
    }

    pub fn estimate(&self) -> f64 {
        self.bits
            .iter()
            .enumerate()
            .map(|(i, &b)| f64::from(b) * 0.5f64.powi(i as i32 + 1))
            .sum()
    }
}

/// Run all `n_bits` iterations on `instance`. `seed` keys shot sampling.
pub fn run_ipea(config: &IpeaConfig, instance: &MeshInstance, seed: InstanceSeed) -> Result<IpeaRun> {
    config.validate()?;
    let topo = ipea_topology();
    if instance.topology().n_modes() < topo.n_modes() || instance.topology().n_layers() < topo.n_layers() {
        return Err(Error::RegionMismatch(format!(
            "phase estimation needs {} modes x {} layers",
            topo.n_modes(),
            topo.n_layers()
        )));
    }
    let mut shot_rng = ChaCha8Rng::seed_from_u64(seed.master_seed ^ SHOT_SALT);
    shot_rng.set_stream(seed.instance_index);
    let mut measured: Vec<u8> = Vec::new();
    let mut p_one = Vec::new();
    let mut fidelities = Vec::new();
    let mut evaluations = 0;
    let mut budget_limited = false;
    let mut tuned_input: Option<GateProgram> = None;
    for k in (1..=config.n_bits).rev() {
        let sections = build_ipea_iteration(k, &measured, config.lambda)?;
        let [mut input, mut cphase, mut output] = section_programs(&sections)?;
        if config.optimize {
            let tune = |pt: &mut (GateProgram, GateTarget), evals: &mut usize, limited: &mut bool| -> Result<()> {
                let out = optimize_program(instance, &pt.0, &pt.1, &config.tune)?;
                *evals += out.evaluations;
                *limited |= out.budget_limited;
                pt.0 = out.program;
                Ok(())
            };
            // the input section is identical in every iteration
            match &tuned_input {
                Some(p) => input.0 = p.clone(),
                None => {
                    tune(&mut input, &mut evaluations, &mut budget_limited)?;
                    tuned_input = Some(input.0.clone());
                }
            }
            tune(&mut cphase, &mut evaluations, &mut budget_limited)?;
            tune(&mut output, &mut evaluations, &mut budget_limited)?;
        }
        let v = match config.composition {
            Composition::Sections => output
                .0
                .transform_matrix(instance)
                .dot(&cphase.0.transform_matrix(instance))
                .dot(&input.0.transform_matrix(instance)),
            Composition::Mesh => {
                let settings = load_programs(&[&input.0, &cphase.0, &output.0])?;
                let u = instance.transfer_layers(0..IPEA_LAYERS, |a| settings.get(&a).copied().unwrap_or_default());
                let pairs = input.0.encoding().two_photon_pairs();
                two_photon_transform(u.matrix(), &pairs, &pairs)
            }
        };
        fidelities.push(fidelity(&v, sections.ideal().matrix())?.value());

        // input |0⟩_ancilla |1⟩_target is basis column 1; ancilla 1 is rows 2 and 3
        let col: Vec<f64> = (0..4).map(|j| v[[j, 1]].norm_sqr()).collect();
        let total: f64 = col.iter().sum();
        if total == 0.0 {
            return Err(Error::ZeroMatrix);
        }
        let p1 = (col[2] + col[3]) / total;
        p_one.push(p1);
        let bit = if config.shots == 0 {
            u8::from(p1 > 0.5)
        } else {
            let ones = Binomial::new(config.shots, p1.clamp(0.0, 1.0))
                .map_err(|e| Error::param("shots", e.to_string()))?
                .sample(&mut shot_rng);
            u8::from(2 * ones > config.shots)
        };
        measured.push(bit);
    }
    let fidelity = match config.aggregation {
        Aggregation::Min => fidelities.iter().copied().fold(1.0, f64::min),
        Aggregation::Mean => fidelities.iter().sum::<f64>() / fidelities.len() as f64,
    };
    measured.reverse();
    Ok(IpeaRun {
        bits: measured,
        p_one,
        fidelities,
        fidelity,
        evaluations,
        budget_limited,
    })
}

/// Run phase estimation on `n_instances` sampled chips, indexed by instance.
pub fn run_ipea_ensemble(
    config: &IpeaConfig,
    model: &DisorderModel,
    n_instances: usize,
    master_seed: u64,
) -> Result<Vec<IpeaRun>> {
    config.validate()?;
    model.validate()?;
    if n_instances == 0 {
        return Err(Error::param("instances", "must be at least 1"));
    }
    let topo = ipea_topology();
    (0..n_instances as u64)
        .into_par_iter()
        .map(|index| {
            let seed = InstanceSeed::new(master_seed, index);
            let instance = model.sample_mesh_instance(topo, seed);
            run_ipea(config, &instance, seed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal_run(lambda: f64, n_bits: usize) -> IpeaRun {
        let config = IpeaConfig {
            lambda,
            n_bits,
            optimize: false,
            ..Default::default()
        };
        run_ipea(&config, &MeshInstance::ideal(ipea_topology()), InstanceSeed::new(0, 0)).unwrap()
    }

    #[test]
    fn feedback_angles_for_five_eighths() {
        let s3 = build_ipea_iteration(3, &[], 0.625).unwrap();
        assert!((s3.cphase_phase - std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(s3.omega, 0.0);
        let s2 = build_ipea_iteration(2, &[1], 0.625).unwrap();
        assert!((s2.cphase_phase - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((s2.omega + std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let s1 = build_ipea_iteration(1, &[1, 0], 0.625).unwrap();
        assert!((s1.cphase_phase - 1.25 * std::f64::consts::PI).abs() < 1e-12);
        assert!((s1.omega + std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn zero_phase_gives_zero_bit() {
        let s = build_ipea_iteration(2, &[0], 0.0).unwrap();
        assert_eq!(s.cphase, GateTarget::cphase(0.0));
        let run = ideal_run(0.0, 2);
        assert_eq!(run.bit_string(), "00");
        assert!(run.p_one.iter().all(|p| *p < 1e-12));
    }

    #[test]
    fn half_measures_one() {
        let run = ideal_run(0.5, 1);
        assert_eq!(run.bits, vec![1]);
        assert!((run.p_one[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ideal_mesh_recovers_101() {
        let run = ideal_run(0.625, 3);
        assert_eq!(run.bit_string(), "101");
        assert_eq!(run.estimate(), 0.625);
        for f in &run.fidelities {
            assert!(*f >= 1.0 - 1e-6, "{f}");
        }
    }

    #[test]
    fn shot_noise_is_seeded() {
        let config = IpeaConfig {
            lambda: 0.3,
            n_bits: 3,
            optimize: false,
            shots: 50,
            ..Default::default()
        };
        let inst = MeshInstance::ideal(ipea_topology());
        let a = run_ipea(&config, &inst, InstanceSeed::new(4, 2)).unwrap();
        let b = run_ipea(&config, &inst, InstanceSeed::new(4, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation_names_key() {
        let bad = IpeaConfig {
            lambda: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("lambda"));
    }
}
