//! Two-photon discrete-time quantum walks with programmable phase disorder.
//!
//! Layout on a 36-mode mesh: the MZI at layer 0 joining modes 16 and 17
//! prepares the path-entangled pair from |1,1⟩, layer 1 routes straight
//! through, and every later layer is a walk step of balanced MZIs (θ = π/2).
//! The walker position is the MZI index within a layer and the coin is
//! which of its two outputs holds the photon.
//!
//! Disorder enters through the output phases φ of walk-step MZIs only:
//! a static column (one offset per MZI index, shared by every walk layer)
//! and optionally a fresh offset for every (layer, index), each uniform on
//! `[0, Φmax]`.

use std::f64::consts::FRAC_PI_2;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::{DisorderModel, InstanceSeed, MeshInstance};
use crate::error::{Error, Result};
use crate::fock::{two_photon_correlation, CorrelationMatrix};
use crate::gates::{DualRailEncoding, GateProgram, MeshRegion};
use crate::mesh::{cumulative_transfers, MeshTopology, MziAddress, MziSettings};
use crate::stats::{linear_fit, participation_ratio, weighted_moments, LinearFit};

/// Preparation MZI: layer 0, joining modes 16 and 17.
pub const PREP_POSITION: usize = 8;
/// Photons enter here, one each.
pub const INPUT_MODES: (usize, usize) = (16, 17);
/// Layers before the first walk step.
pub const LEAD_LAYERS: usize = 2;

/// Seed offset separating fabrication draws from phase-disorder draws.
const FABRICATION_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalkConfig {
    pub n_modes: usize,
    pub n_walk_layers: usize,
    /// Static (layer-independent) disorder amplitude, radians.
    pub phi_max_tid: f64,
    /// Layer-dependent disorder amplitude, radians.
    pub phi_max_td: f64,
    pub n_realizations: usize,
    /// Sample a fabricated chip per realisation from `model`.
    pub include_fabrication: bool,
    /// Not part of the serialised form; run configs carry one shared `[disorder]` table.
    #[serde(skip)]
    pub model: DisorderModel,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            n_modes: 36,
            n_walk_layers: 15,
            phi_max_tid: 0.0,
            phi_max_td: 0.0,
            n_realizations: 1000,
            include_fabrication: false,
            model: DisorderModel::default(),
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_modes < INPUT_MODES.1 + 2 || !self.n_modes.is_multiple_of(2) {
            return Err(Error::param("n_modes", format!("{} must be even and at least 20", self.n_modes)));
        }
        if self.n_walk_layers == 0 {
            return Err(Error::param("n_walk_layers", "must be positive"));
        }
        for (name, v) in [("phi_max_tid", self.phi_max_tid), ("phi_max_td", self.phi_max_td)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(name, format!("{v} must be finite and non-negative")));
            }
        }
        if self.n_realizations == 0 {
            return Err(Error::param("n_realizations", "must be positive"));
        }
        self.model.validate()
    }

    pub fn topology(&self) -> Result<MeshTopology> {
        MeshTopology::new(self.n_modes, LEAD_LAYERS + self.n_walk_layers)
    }
}

/// Settings for one disorder realisation.
///
/// Draw order: the static column (index order), then per walk layer the
/// layer-dependent offsets (index order). Both are always drawn so the
/// stream layout does not depend on the amplitudes.
pub fn build_walk_program<R: Rng + ?Sized>(config: &WalkConfig, rng: &mut R) -> Result<GateProgram> {
    config.validate()?;
    let topo = config.topology()?;
    let column_len = config.n_modes / 2;
    let tid: Vec<f64> = (0..column_len).map(|_| rng.random::<f64>() * config.phi_max_tid).collect();
    let mut settings = std::collections::BTreeMap::new();
    settings.insert(
        MziAddress::new(0, PREP_POSITION),
        MziSettings::from_splitting(0.5, FRAC_PI_2)?,
    );
    for layer in LEAD_LAYERS..topo.n_layers() {
        for position in 0..topo.mzis_in_layer(layer) {
            let td = rng.random::<f64>() * config.phi_max_td;
            settings.insert(
                MziAddress::new(layer, position),
                MziSettings::wrapped(FRAC_PI_2, tid[position] + td),
            );
        }
    }
    // the walk has no qubits; the encoding only records where the photons enter
    let encoding = DualRailEncoding::new(vec![INPUT_MODES])?;
    GateProgram::new(MeshRegion::new(0..topo.n_layers(), 0..config.n_modes), encoding, settings)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkEnsembleResult {
    /// Averaged output correlations.
    pub gamma: CorrelationMatrix,
    /// Averaged density after each mesh layer, one row per layer; rows sum to 2.
    pub density: Array2<f64>,
    /// Position variance of each averaged density row.
    pub variance: Vec<f64>,
    /// Participation ratio of each realisation's output density, averaged.
    pub mean_participation_ratio: f64,
    pub n_realizations: usize,
}

impl WalkEnsembleResult {
    pub fn output_density(&self) -> Vec<f64> {
        self.density.row(self.density.nrows() - 1).to_vec()
    }

    /// Density after walk step `step` (1-based).
    pub fn walk_density(&self, step: usize) -> Vec<f64> {
        self.density.row(LEAD_LAYERS + step - 1).to_vec()
    }

    /// Variance after walk step `step` (1-based).
    pub fn walk_variance(&self, step: usize) -> f64 {
        self.variance[LEAD_LAYERS + step - 1]
    }

    /// Fit of `log σ²` against `log step` over the given walk steps.
    pub fn variance_exponent(&self, steps: std::ops::RangeInclusive<usize>) -> LinearFit {
        let (xs, ys): (Vec<f64>, Vec<f64>) = steps
            .map(|s| ((s as f64).ln(), self.walk_variance(s).ln()))
            .unzip();
        linear_fit(&xs, &ys)
    }

    pub fn output_excess_kurtosis(&self) -> f64 {
        weighted_moments(&self.output_density()).2
    }

    /// Participation ratio of the averaged output density.
    pub fn output_participation_ratio(&self) -> f64 {
        participation_ratio(&self.output_density())
    }

    /// Output Γ mass on pairs with `|q − r| ≤ max_distance` and on the rest.
    pub fn correlation_mass_split(&self, max_distance: usize) -> (f64, f64) {
        let n = self.gamma.n_modes();
        let (mut near, mut far) = (0.0, 0.0);
        for q in 0..n {
            for r in q..n {
                if r - q <= max_distance {
                    near += self.gamma.get(q, r);
                } else {
                    far += self.gamma.get(q, r);
                }
            }
        }
        (near, far)
    }

    /// Exponential-localisation check on the output density: fit of `ln n_q`
    /// against distance from the peak, over the modes holding the central
    /// `mass` fraction of probability.
    pub fn localization_fit(&self, mass: f64) -> LinearFit {
        localization_fit(&self.output_density(), mass)
    }
}

pub fn localization_fit(density: &[f64], mass: f64) -> LinearFit {
    let total: f64 = density.iter().sum();
    let tail = 0.5 * (1.0 - mass) * total;
    let mut acc = 0.0;
    let mut lo = 0;
    while lo < density.len() && acc + density[lo] <= tail {
        acc += density[lo];
        lo += 1;
    }
    acc = 0.0;
    let mut hi = density.len() - 1;
    while hi > lo && acc + density[hi] <= tail {
        acc += density[hi];
        hi -= 1;
    }
    let peak = (lo..=hi)
        .max_by(|&a, &b| density[a].total_cmp(&density[b]))
        .expect("non-empty window");
    let (xs, ys): (Vec<f64>, Vec<f64>) = (lo..=hi)
        .filter(|&q| density[q] > 0.0)
        .map(|q| ((q as f64 - peak as f64).abs(), density[q].ln()))
        .unzip();
    linear_fit(&xs, &ys)
}

struct Realisation {
    gamma: CorrelationMatrix,
    density: Array2<f64>,
}

fn run_realisation(config: &WalkConfig, topo: MeshTopology, master_seed: u64, index: u64) -> Result<Realisation> {
    let mut rng = InstanceSeed::new(master_seed, index).rng();
    let program = build_walk_program(config, &mut rng)?;
    let instance = if config.include_fabrication {
        config
            .model
            .sample_mesh_instance(topo, InstanceSeed::new(master_seed ^ FABRICATION_SALT, index))
    } else {
        MeshInstance::ideal(topo)
    };
    let settings = program.settings();
    let transfers = cumulative_transfers(
        &topo,
        |a| settings.get(&a).copied().unwrap_or_default(),
        |a| *instance.physical(a).expect("address from topology"),
    );
    let mut density = Array2::zeros((topo.n_layers(), topo.n_modes()));
    let mut gamma = CorrelationMatrix::zeros(topo.n_modes());
    for (layer, u) in transfers.iter().enumerate() {
        let corr = two_photon_correlation(u.matrix(), INPUT_MODES);
        for (q, d) in corr.density().into_iter().enumerate() {
            density[[layer, q]] = d;
        }
        if layer + 1 == transfers.len() {
            gamma = corr;
        }
    }
    Ok(Realisation { gamma, density })
}

/// Average `config.n_realizations` realisations; realisation `k` draws from
/// `InstanceSeed::new(master_seed, k)`.
pub fn run_walk_ensemble(config: &WalkConfig, master_seed: u64) -> Result<WalkEnsembleResult> {
    config.validate()?;
    let topo = config.topology()?;
    let parts = (0..config.n_realizations as u64)
        .into_par_iter()
        .map(|k| run_realisation(config, topo, master_seed, k))
        .collect::<Result<Vec<_>>>()?;
    // summed in index order so the result does not depend on scheduling
    let mut gamma = CorrelationMatrix::zeros(topo.n_modes());
    let mut density = Array2::zeros((topo.n_layers(), topo.n_modes()));
    for p in &parts {
        gamma.add_scaled(&p.gamma, 1.0);
        density += &p.density;
    }
    let w = 1.0 / parts.len() as f64;
    gamma.scale(w);
    density.mapv_inplace(|x| x * w);
    let variance = density
        .rows()
        .into_iter()
        .map(|row| weighted_moments(row.as_slice().expect("standard layout")).1)
        .collect();
    let mean_participation_ratio = parts
        .iter()
        .map(|p| participation_ratio(&p.density.row(topo.n_layers() - 1).to_vec()))
        .sum::<f64>()
        * w;
    Ok(WalkEnsembleResult {
        gamma,
        density,
        variance,
        mean_participation_ratio,
        n_realizations: parts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{transition_amplitude, FockState};
    use crate::mesh::ideal_mzi_transfer;

    fn small(tid: f64, td: f64, n: usize) -> WalkConfig {
        WalkConfig {
            phi_max_tid: tid,
            phi_max_td: td,
            n_realizations: n,
            ..Default::default()
        }
    }

    #[test]
    fn disorder_free_program_is_exact() {
        let config = small(0.0, 0.0, 1);
        let p = build_walk_program(&config, &mut InstanceSeed::new(0, 0).rng()).unwrap();
        for (a, s) in p.settings() {
            if a.layer >= LEAD_LAYERS {
                assert_eq!((s.theta(), s.phi()), (FRAC_PI_2, 0.0));
            } else if *a == MziAddress::new(0, PREP_POSITION) {
                assert!((s.theta() - FRAC_PI_2).abs() < 1e-15);
            } else {
                assert_eq!(*s, MziSettings::bar());
            }
        }
    }

    #[test]
    fn static_disorder_repeats_per_layer() {
        let config = small(std::f64::consts::TAU, 0.0, 1);
        let p = build_walk_program(&config, &mut InstanceSeed::new(3, 1).rng()).unwrap();
        let s = p.settings();
        for layer in LEAD_LAYERS + 1..config.topology().unwrap().n_layers() {
            for pos in 0..17 {
                assert_eq!(s[&MziAddress::new(layer, pos)].phi(), s[&MziAddress::new(LEAD_LAYERS, pos)].phi());
            }
        }
    }

    #[test]
    fn preparation_makes_path_entangled_pair() {
        let s = MziSettings::from_splitting(0.5, FRAC_PI_2).unwrap();
        let u = ideal_mzi_transfer(s);
        let input = FockState::new(vec![1, 1]).unwrap();
        let a20 = transition_amplitude(&u, &input, &FockState::new(vec![2, 0]).unwrap()).unwrap();
        let a02 = transition_amplitude(&u, &input, &FockState::new(vec![0, 2]).unwrap()).unwrap();
        let a11 = transition_amplitude(&u, &input, &input).unwrap();
        assert!(a11.norm() < 1e-15);
        assert!((a20.norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((a02.norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn densities_and_correlations_normalised() {
        let r = run_walk_ensemble(&small(1.0, 1.0, 4), 5).unwrap();
        assert_eq!(r.density.dim(), (17, 36));
        for row in r.density.rows() {
            assert!((row.sum() - 2.0).abs() < 1e-10);
        }
        assert!((r.gamma.total() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn disorder_free_edges_peak() {
        let r = run_walk_ensemble(&small(0.0, 0.0, 1), 0).unwrap();
        let d = r.output_density();
        let centre = 0.5 * (INPUT_MODES.0 + INPUT_MODES.1) as f64;
        let (left, right) = d.split_at(INPUT_MODES.1);
        let argmax = |xs: &[f64]| (0..xs.len()).max_by(|&a, &b| xs[a].total_cmp(&xs[b])).unwrap();
        let (pl, pr) = (argmax(left), INPUT_MODES.1 + argmax(right));
        assert!(centre - pl as f64 > 6.0 && pr as f64 - centre > 6.0, "peaks at {pl}, {pr}");
        assert!(d[pl] > 4.0 * d[INPUT_MODES.0] && d[pr] > 4.0 * d[INPUT_MODES.1]);
    }

    #[test]
    fn localisation_fit_of_pure_exponential() {
        let d: Vec<f64> = (0..21).map(|q| (-0.7 * (q as f64 - 10.0).abs()).exp()).collect();
        let fit = localization_fit(&d, 0.9);
        assert!((fit.slope + 0.7).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }
}
