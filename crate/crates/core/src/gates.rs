//! Dual-rail encodings, gate programs and their ideal targets.
//!
//! Two-qubit programs share one encoding: the control (first) qubit uses
//! modes (1, 2) and the target (second) qubit modes (3, 4); every other mode
//! of the region starts in vacuum. CNOT and single-qubit sections use modes
//! 0..6, CPHASE needs two more vacuum modes and uses 0..8. Basis order is
//! |00⟩, |01⟩, |10⟩, |11⟩ with the control as the most significant bit.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::ops::Range;
use std::sync::{Mutex, OnceLock};

use ndarray::{array, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::disorder::MeshInstance;
use crate::error::{Error, Result};
use crate::fock::{post_selected_transform, two_photon_transform, FockState, PostSelectedTransform};
use crate::mesh::{theta_for_splitting, wrap_phase, MeshTopology, MziAddress, MziSettings};
use crate::qmc::RSequence;
use crate::tuner::{self, TuneOptions};
use crate::CMatrix;

/// Rectangular block of the lattice: a layer range and a mode range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshRegion {
    pub layers: Range<usize>,
    pub modes: Range<usize>,
}

impl MeshRegion {
    pub fn new(layers: Range<usize>, modes: Range<usize>) -> Self {
        MeshRegion { layers, modes }
    }

    /// MZIs whose layer and both modes lie inside the region, canonical order.
    pub fn addresses(&self, topology: &MeshTopology) -> Vec<MziAddress> {
        topology
            .addresses()
            .filter(|&a| self.contains(topology, a))
            .collect()
    }

    pub fn contains(&self, topology: &MeshTopology, addr: MziAddress) -> bool {
        match topology.modes(addr) {
            Ok((a, b)) => {
                self.layers.contains(&addr.layer) && self.modes.contains(&a) && self.modes.contains(&b)
            }
            Err(_) => false,
        }
    }

    pub fn fits(&self, topology: &MeshTopology) -> Result<()> {
        if self.layers.is_empty() || self.modes.is_empty() {
            return Err(Error::RegionMismatch("empty region".into()));
        }
        if self.layers.end > topology.n_layers() || self.modes.end > topology.n_modes() {
            return Err(Error::RegionMismatch(format!(
                "region layers {:?} modes {:?} exceed {} modes x {} layers",
                self.layers,
                self.modes,
                topology.n_modes(),
                topology.n_layers()
            )));
        }
        Ok(())
    }

    /// Smallest topology holding the region.
    pub fn host_topology(&self) -> Result<MeshTopology> {
        MeshTopology::new(self.modes.end + self.modes.end % 2, self.layers.end)
    }

    fn overlaps(&self, other: &MeshRegion) -> bool {
        let l = self.layers.start < other.layers.end && other.layers.start < self.layers.end;
        let m = self.modes.start < other.modes.end && other.modes.start < self.modes.end;
        l && m
    }
}

/// Qubit → (mode carrying |0⟩, mode carrying |1⟩).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualRailEncoding {
    qubits: Vec<(usize, usize)>,
}

impl DualRailEncoding {
    pub fn new(qubits: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for &(a, b) in &qubits {
            if a == b || !seen.insert(a) || !seen.insert(b) {
                return Err(Error::param("encoding", format!("mode pairs {qubits:?} are not disjoint")));
            }
        }
        Ok(DualRailEncoding { qubits })
    }

    /// Control on (1, 2), target on (3, 4).
    pub fn two_qubit_strip() -> Self {
        DualRailEncoding {
            qubits: vec![(1, 2), (3, 4)],
        }
    }

    pub fn qubits(&self) -> &[(usize, usize)] {
        &self.qubits
    }

    pub fn n_qubits(&self) -> usize {
        self.qubits.len()
    }

    /// Photon modes of each computational basis state, first qubit most significant.
    pub fn basis_modes(&self) -> Vec<Vec<usize>> {
        let n = self.qubits.len();
        (0..1usize << n)
            .map(|k| {
                self.qubits
                    .iter()
                    .enumerate()
                    .map(|(q, &(m0, m1))| if (k >> (n - 1 - q)) & 1 == 0 { m0 } else { m1 })
                    .collect()
            })
            .collect()
    }

    pub fn basis_states(&self, n_modes: usize) -> Result<Vec<FockState>> {
        self.basis_modes()
            .iter()
            .map(|m| FockState::from_modes(n_modes, m))
            .collect()
    }

    pub(crate) fn two_photon_pairs(&self) -> Vec<(usize, usize)> {
        assert_eq!(self.qubits.len(), 2, "fast path is two-qubit only");
        self.basis_modes().into_iter().map(|m| (m[0], m[1])).collect()
    }
}

/// Which phase of an MZI a free parameter refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseKind {
    Theta,
    Phi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FreeParam {
    pub addr: MziAddress,
    pub kind: PhaseKind,
}

/// Settings for a mesh region plus the mask of phases a tuner may vary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateProgram {
    region: MeshRegion,
    encoding: DualRailEncoding,
    settings: BTreeMap<MziAddress, MziSettings>,
    free: Vec<FreeParam>,
    /// Modes that should stay dark at the output; the tuner counts light
    /// reaching them as error.
    #[serde(default)]
    dark_modes: Vec<usize>,
}

impl GateProgram {
    /// Builds a program on `region`; MZIs of the region missing from `settings` are set to bar.
    /// Every θ and φ in the region is free.
    pub fn new(
        region: MeshRegion,
        encoding: DualRailEncoding,
        settings: BTreeMap<MziAddress, MziSettings>,
    ) -> Result<Self> {
        let topo = region.host_topology()?;
        let mut full = BTreeMap::new();
        for addr in region.addresses(&topo) {
            full.insert(addr, settings.get(&addr).copied().unwrap_or_default());
        }
        if let Some(stray) = settings.keys().find(|a| !full.contains_key(a)) {
            return Err(Error::RegionMismatch(format!("setting for {stray} outside the region")));
        }
        for &(a, b) in encoding.qubits() {
            if !region.modes.contains(&a) || !region.modes.contains(&b) {
                return Err(Error::RegionMismatch(format!("qubit modes ({a}, {b}) outside the region")));
            }
        }
        let free = full
            .keys()
            .flat_map(|&addr| {
                [PhaseKind::Theta, PhaseKind::Phi]
                    .into_iter()
                    .map(move |kind| FreeParam { addr, kind })
            })
            .collect();
        Ok(GateProgram {
            region,
            encoding,
            settings: full,
            free,
            dark_modes: Vec::new(),
        })
    }

    /// Restrict the tunable phases to `free`, which must address MZIs of this program.
    pub fn with_free_params(mut self, free: Vec<FreeParam>) -> Result<Self> {
        for p in &free {
            if !self.settings.contains_key(&p.addr) {
                return Err(Error::RegionMismatch(format!("free parameter at {} outside the program", p.addr)));
            }
        }
        self.free = free;
        Ok(self)
    }

    /// Mark output modes that must receive no light from the rails.
    pub fn with_dark_modes(mut self, modes: Vec<usize>) -> Result<Self> {
        let rails: Vec<usize> = self.encoding.qubits().iter().flat_map(|&(a, b)| [a, b]).collect();
        for &m in &modes {
            if !self.region.modes.contains(&m) || rails.contains(&m) {
                return Err(Error::RegionMismatch(format!("dark mode {m} must be a non-rail mode of the region")));
            }
        }
        self.dark_modes = modes;
        Ok(self)
    }

    pub fn dark_modes(&self) -> &[usize] {
        &self.dark_modes
    }

    pub fn region(&self) -> &MeshRegion {
        &self.region
    }

    pub fn encoding(&self) -> &DualRailEncoding {
        &self.encoding
    }

    pub fn settings(&self) -> &BTreeMap<MziAddress, MziSettings> {
        &self.settings
    }

    pub fn free_params(&self) -> &[FreeParam] {
        &self.free
    }

    /// Current values of the free phases.
    pub fn params(&self) -> Vec<f64> {
        self.free
            .iter()
            .map(|p| {
                let s = self.settings[&p.addr];
                match p.kind {
                    PhaseKind::Theta => s.theta(),
                    PhaseKind::Phi => s.phi(),
                }
            })
            .collect()
    }

    /// Copy with the free phases replaced by `values`.
    pub fn with_params(&self, values: &[f64]) -> GateProgram {
        assert_eq!(values.len(), self.free.len());
        let mut out = self.clone();
        for (p, &v) in self.free.iter().zip(values) {
            let s = out.settings.get_mut(&p.addr).expect("free param in settings");
            *s = match p.kind {
                PhaseKind::Theta => s.with_theta(v),
                PhaseKind::Phi => s.with_phi(v),
            };
        }
        out
    }

    /// Same program moved by an even number of layers and modes (preserves lattice parity).
    pub fn shifted(&self, layers: usize, modes: usize) -> Result<GateProgram> {
        if !layers.is_multiple_of(2) || !modes.is_multiple_of(2) {
            return Err(Error::RegionMismatch("shifts must be even to keep the lattice parity".into()));
        }
        let move_addr = |a: MziAddress| MziAddress::new(a.layer + layers, a.position + modes / 2);
        Ok(GateProgram {
            region: MeshRegion::new(
                self.region.layers.start + layers..self.region.layers.end + layers,
                self.region.modes.start + modes..self.region.modes.end + modes,
            ),
            encoding: DualRailEncoding {
                qubits: self.encoding.qubits.iter().map(|&(a, b)| (a + modes, b + modes)).collect(),
            },
            settings: self.settings.iter().map(|(a, s)| (move_addr(*a), *s)).collect(),
            free: self
                .free
                .iter()
                .map(|p| FreeParam {
                    addr: move_addr(p.addr),
                    kind: p.kind,
                })
                .collect(),
            dark_modes: self.dark_modes.iter().map(|m| m + modes).collect(),
        })
    }

    /// Post-selected computational-basis transform of this program on `instance`.
    ///
    /// MZIs outside the program stay in the bar state; only the region's layers are traversed.
    pub fn transform(&self, instance: &MeshInstance) -> Result<PostSelectedTransform> {
        self.region.fits(instance.topology())?;
        let u = instance.transfer_layers(self.region.layers.clone(), |a| {
            self.settings.get(&a).copied().unwrap_or_default()
        });
        let basis = self.encoding.basis_states(instance.topology().n_modes())?;
        post_selected_transform(&u, &basis, &basis)
    }

    /// Two-photon fast path of [`Self::transform`] without success probabilities.
    pub(crate) fn transform_matrix(&self, instance: &MeshInstance) -> CMatrix {
        let u = instance.transfer_layers(self.region.layers.clone(), |a| {
            self.settings.get(&a).copied().unwrap_or_default()
        });
        let pairs = self.encoding.two_photon_pairs();
        two_photon_transform(u.matrix(), &pairs, &pairs)
    }

    /// Output pairs beyond the basis that put a photon in a dark mode, for
    /// two-qubit programs; the tuner appends them as rows whose target is zero.
    pub(crate) fn dark_pairs(&self) -> Vec<(usize, usize)> {
        let mut modes: Vec<usize> = self.encoding.qubits().iter().flat_map(|&(a, b)| [a, b]).collect();
        modes.extend(&self.dark_modes);
        modes.sort_unstable();
        let mut out = Vec::new();
        for (i, &q) in modes.iter().enumerate() {
            for &r in &modes[i..] {
                if self.dark_modes.contains(&q) || self.dark_modes.contains(&r) {
                    out.push((q, r));
                }
            }
        }
        out
    }

    /// Basis rows followed by the [`Self::dark_pairs`] rows.
    pub(crate) fn guarded_transform_matrix(&self, instance: &MeshInstance) -> CMatrix {
        let u = instance.transfer_layers(self.region.layers.clone(), |a| {
            self.settings.get(&a).copied().unwrap_or_default()
        });
        let inputs = self.encoding.two_photon_pairs();
        let mut outputs = inputs.clone();
        outputs.extend(self.dark_pairs());
        two_photon_transform(u.matrix(), &inputs, &outputs)
    }
}

/// Merge programs on pairwise disjoint regions into one settings map.
pub fn load_programs(programs: &[&GateProgram]) -> Result<BTreeMap<MziAddress, MziSettings>> {
    for (i, a) in programs.iter().enumerate() {
        for b in &programs[i + 1..] {
            if a.region.overlaps(&b.region) {
                if let Some(addr) = a.settings.keys().find(|k| b.settings.contains_key(k)) {
                    return Err(Error::SettingsConflict(*addr));
                }
                return Err(Error::RegionMismatch(format!(
                    "regions {:?} and {:?} overlap",
                    a.region, b.region
                )));
            }
        }
    }
    let mut out = BTreeMap::new();
    for p in programs {
        for (addr, s) in &p.settings {
            if out.insert(*addr, *s).is_some() {
                return Err(Error::SettingsConflict(*addr));
            }
        }
    }
    Ok(out)
}

/// Ideal computational-basis matrix a program should realise.
#[derive(Debug, Clone, PartialEq)]
pub struct GateTarget {
    matrix: CMatrix,
}

impl GateTarget {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let (r, c) = matrix.dim();
        if r != c || !(r == 2 || r == 4) {
            return Err(Error::DimensionMismatch(format!("gate target must be 2x2 or 4x4, got {r}x{c}")));
        }
        let gram = matrix.t().mapv(|z| z.conj()).dot(&matrix);
        let err = gram
            .indexed_iter()
            .map(|((i, j), z)| (z - if i == j { 1.0 } else { 0.0 }).norm())
            .fold(0.0, f64::max);
        if err > 1e-12 {
            return Err(Error::param("target", format!("not unitary (error {err:.2e})")));
        }
        Ok(GateTarget { matrix })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn cnot() -> Self {
        let mut m = Array2::zeros((4, 4));
        for (i, j) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
            m[[i, j]] = Complex64::new(1.0, 0.0);
        }
        GateTarget { matrix: m }
    }

    /// diag(1, 1, 1, e^{iφ}).
    pub fn cphase(phase: f64) -> Self {
        let mut m = Array2::eye(4);
        m[[3, 3]] = Complex64::from_polar(1.0, phase);
        GateTarget { matrix: m }
    }

    pub fn identity2() -> Self {
        GateTarget { matrix: Array2::eye(2) }
    }

    pub fn pauli_x() -> Self {
        let (o, l) = (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0));
        GateTarget {
            matrix: array![[o, l], [l, o]],
        }
    }

    pub fn hadamard() -> Self {
        let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        GateTarget {
            matrix: array![[h, h], [h, -h]],
        }
    }

    /// diag(1, e^{iω}).
    pub fn rz(omega: f64) -> Self {
        let mut m = Array2::eye(2);
        m[[1, 1]] = Complex64::from_polar(1.0, omega);
        GateTarget { matrix: m }
    }

    /// `self · rhs` (apply `rhs` first).
    pub fn compose(&self, rhs: &GateTarget) -> Result<GateTarget> {
        if self.matrix.dim() != rhs.matrix.dim() {
            return Err(Error::DimensionMismatch("composing targets of different size".into()));
        }
        Ok(GateTarget {
            matrix: self.matrix.dot(&rhs.matrix),
        })
    }

    /// `self ⊗ rhs` with `self` on the more significant qubit.
    pub fn kron(&self, rhs: &GateTarget) -> GateTarget {
        let (a, b) = (&self.matrix, &rhs.matrix);
        let (n, m) = (a.nrows(), b.nrows());
        GateTarget {
            matrix: Array2::from_shape_fn((n * m, n * m), |(i, j)| a[[i / m, j / m]] * b[[i % m, j % m]]),
        }
    }
}

const TWO_QUBIT_MODES: Range<usize> = 0..6;

/// Layers spanned by the nominal CNOT.
pub const CNOT_LAYERS: usize = 5;

/// CNOT layout table: (layer, position, bar-transmission η, output phase φ).
///
/// Layer 1 and 3 hold the target Hadamards (η = 1/2 on modes 3-4), layer 2 the
/// three η = 1/3 couplers on (0,1), (2,3), (4,5). The π on (0,1) and (1,1)
/// fixes the control and target sign conventions. [`CNOT_GLOBAL_PHASE`] on
/// both target output rails removes the global phase left by the η = 1/3
/// couplers. All other MZIs are bar.
const CNOT_LAYOUT: [(usize, usize, f64, f64); 6] = [
    (0, 1, 1.0, PI),
    (1, 1, 0.5, PI),
    (2, 0, 1.0 / 3.0, 0.0),
    (2, 1, 1.0 / 3.0, 0.0),
    (2, 2, 1.0 / 3.0, 0.0),
    (3, 1, 0.5, CNOT_GLOBAL_PHASE),
];

/// arcsin(1/3).
pub const CNOT_GLOBAL_PHASE: f64 = 0.339_836_909_454_121_9;

/// Nominal six-mode post-selected CNOT on layers 0..5, modes 0..6.
///
/// Ideal-mesh transform is exactly `(1/3)·CNOT` with success 1/9 per input.
pub fn nominal_cnot_program() -> (GateProgram, GateTarget) {
    let mut settings = BTreeMap::new();
    for &(layer, pos, eta, phi) in &CNOT_LAYOUT {
        let theta = theta_for_splitting(eta).expect("layout η in range");
        settings.insert(MziAddress::new(layer, pos), MziSettings::wrapped(theta, phi));
    }
    settings.insert(MziAddress::new(4, 2), MziSettings::wrapped(PI, CNOT_GLOBAL_PHASE));
    let program = GateProgram::new(
        MeshRegion::new(0..CNOT_LAYERS, TWO_QUBIT_MODES),
        DualRailEncoding::two_qubit_strip(),
        settings,
    )
    .expect("layout inside region");
    (program, GateTarget::cnot())
}

/// Place the nominal CNOT on a host topology.
pub fn nominal_cnot_program_on(topology: &MeshTopology) -> Result<(GateProgram, GateTarget)> {
    let (p, t) = nominal_cnot_program();
    p.region.fits(topology)?;
    Ok((p, t))
}

/// A single-qubit gate on one MZI plus a phase on the upper rail entering it.
///
/// Realised map, up to global phase: `diag(e^{iφ},1) · R(θ) · diag(e^{iψ},1)` where
/// `R(θ) = [[sin θ/2, cos θ/2], [cos θ/2, −sin θ/2]]` is the ideal MZI with its
/// scalar `i·e^{iθ/2}` removed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleQubitProgram {
    pub mzi: MziSettings,
    pub input_phase: f64,
}

impl SingleQubitProgram {
    /// Phase for the bar MZI of the preceding even layer whose upper mode is this
    /// qubit's lower rail: its factor −e^{iφ} on that rail is equivalent to `input_phase`
    /// on the upper rail, up to a global phase.
    pub fn feeder_bar(&self) -> MziSettings {
        MziSettings::wrapped(PI, PI - self.input_phase)
    }
}

pub fn single_qubit_program(target: &GateTarget) -> Result<SingleQubitProgram> {
    let u = target.matrix();
    if u.dim() != (2, 2) {
        return Err(Error::DimensionMismatch("single-qubit target must be 2x2".into()));
    }
    let s = u[[0, 0]].norm().clamp(0.0, 1.0);
    let theta = 2.0 * s.asin();
    const EPS: f64 = 1e-12;
    let (phi, psi) = if u[[0, 1]].norm() < EPS {
        // diagonal: U00 = e^{ig}e^{i(φ+ψ)}, U11 = −e^{ig}
        let g = (-u[[1, 1]]).arg();
        (0.0, u[[0, 0]].arg() - g)
    } else if s < EPS {
        // anti-diagonal: U01 = e^{ig}e^{iφ}, U10 = e^{ig}e^{iψ}
        let g = u[[1, 0]].arg();
        (u[[0, 1]].arg() - g, 0.0)
    } else {
        let g = (-u[[1, 1]]).arg();
        (u[[0, 1]].arg() - g, u[[1, 0]].arg() - g)
    };
    Ok(SingleQubitProgram {
        mzi: MziSettings::wrapped(theta, phi),
        input_phase: wrap_phase(psi),
    })
}

/// Layers spanned by [`local_gates_program`].
pub const LOCAL_GATE_LAYERS: usize = 4;

/// Four-layer program applying `a` to the control and `b` to the target qubit.
///
/// Layer `layer` (even) holds the feeder bars providing the input phases,
/// layer `layer + 1` the two gate MZIs. Layers `layer + 2` and `layer + 3`
/// repeat the pattern set to identity: a single fabricated MZI cannot reach a
/// perfect bar or an arbitrary splitting, two in series can, so the tuner
/// needs the second pair to recover a clean single-qubit map.
///
/// Modes 0 and 5 are marked dark. Post-selection alone would let a tuner
/// park amplitude there, and a following section would couple it back in.
pub fn local_gates_program(a: &GateTarget, b: &GateTarget, layer: usize) -> Result<(GateProgram, GateTarget)> {
    if !layer.is_multiple_of(2) {
        return Err(Error::RegionMismatch("local gates start on an even layer".into()));
    }
    let pa = single_qubit_program(a)?;
    let pb = single_qubit_program(b)?;
    let mut settings = BTreeMap::new();
    settings.insert(MziAddress::new(layer, 1), pa.feeder_bar());
    settings.insert(MziAddress::new(layer, 2), pb.feeder_bar());
    settings.insert(MziAddress::new(layer + 1, 0), pa.mzi);
    settings.insert(MziAddress::new(layer + 1, 1), pb.mzi);
    let program = GateProgram::new(
        MeshRegion::new(layer..layer + LOCAL_GATE_LAYERS, TWO_QUBIT_MODES),
        DualRailEncoding::two_qubit_strip(),
        settings,
    )?;
    Ok((program.with_dark_modes(vec![0, 5])?, a.kron(b)))
}

/// Layers spanned by a CPHASE program.
pub const CPHASE_LAYERS: usize = 6;

/// Modes spanned by a CPHASE program: the two-qubit strip plus vacuum modes 0, 5, 6, 7.
///
/// A phase other than 0 or π needs at least three vacuum modes: two to
/// attenuate the |0⟩ rails and one more because the 2×2 block acting on the
/// |1⟩ rails cannot then be unitary.
pub const CPHASE_MODES: usize = 8;

/// Ideal-mesh fidelity a synthesised CPHASE must reach.
pub const CPHASE_SYNTHESIS_TOLERANCE: f64 = 1e-6;

/// Smallest post-selection success accepted from synthesis. Fidelity can
/// approach 1 along paths where all transmitted amplitude vanishes; those
/// programs are useless and extremely sensitive to fabrication.
pub const CPHASE_MIN_SUCCESS: f64 = 0.01;

/// One bundled program.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CphaseAsset {
    pub phase: f64,
    /// Post-selection success probability on the ideal mesh (equal for all inputs).
    pub success: f64,
    pub settings: Vec<(MziAddress, MziSettings)>,
}

impl CphaseAsset {
    pub fn program(&self) -> Result<GateProgram> {
        GateProgram::new(
            cphase_region(),
            DualRailEncoding::two_qubit_strip(),
            self.settings.iter().copied().collect(),
        )
    }
}

/// The bundled CPHASE table, sorted by phase.
pub fn bundled_cphase_programs() -> &'static [CphaseAsset] {
    static ASSETS: OnceLock<Vec<CphaseAsset>> = OnceLock::new();
    ASSETS.get_or_init(|| {
        serde_json::from_str(include_str!("../assets/cphase_programs.json")).expect("bundled CPHASE asset parses")
    })
}

pub fn cphase_region() -> MeshRegion {
    MeshRegion::new(0..CPHASE_LAYERS, 0..CPHASE_MODES)
}

fn cphase_cache() -> &'static Mutex<BTreeMap<u64, GateProgram>> {
    static CACHE: OnceLock<Mutex<BTreeMap<u64, GateProgram>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(BTreeMap::new()))
}

/// Nominal post-selected CPHASE(φ) on layers 0..6, modes 0..8.
///
/// Phase 0 is plain bar routing. Phases in the bundled table (multiples of
/// 2π/6 and of 2π/64) load instantly; any other phase is synthesised on an
/// ideal mesh, warm-started from the nearest bundled program, and cached for
/// the life of the process.
pub fn nominal_cphase_program(phase: f64) -> Result<(GateProgram, GateTarget)> {
    if !phase.is_finite() {
        return Err(Error::param("phase", "not finite"));
    }
    let phase = wrap_phase(phase);
    let target = GateTarget::cphase(phase);
    let assets = bundled_cphase_programs();
    if circular_distance(phase, 0.0) < 1e-12 {
        return Ok((identity_program(cphase_region())?, target));
    }
    if let Some(a) = assets.iter().find(|a| circular_distance(a.phase, phase) < 1e-12) {
        return Ok((a.program()?, target));
    }
    let key = phase.to_bits();
    if let Some(p) = cphase_cache().lock().expect("cache lock").get(&key) {
        return Ok((p.clone(), target));
    }
    let mut near: Vec<&CphaseAsset> = assets.iter().collect();
    near.sort_by(|a, b| circular_distance(a.phase, phase).total_cmp(&circular_distance(b.phase, phase)));
    let warm = near.iter().take(2).map(|a| a.program()).collect::<Result<Vec<_>>>()?;
    let (program, _) = synthesize_cphase(
        phase,
        &warm,
        &SynthesisOptions {
            random_starts: 32,
            exhaustive: false,
        },
    )?;
    cphase_cache().lock().expect("cache lock").insert(key, program.clone());
    Ok((program, target))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    /// Quasi-random starts tried after the warm starts.
    pub random_starts: usize,
    /// Try every start and keep the highest-success program instead of the first acceptable one.
    pub exhaustive: bool,
}

/// Tune CPHASE(`phase`) on an ideal mesh from `warm` programs, then from
/// quasi-random points. Returns the program and its success probability.
///
/// A candidate is accepted when it reaches the synthesis tolerance with
/// success of at least [`CPHASE_MIN_SUCCESS`]; among accepted candidates the
/// highest success wins.
pub fn synthesize_cphase(
    phase: f64,
    warm: &[GateProgram],
    options: &SynthesisOptions,
) -> Result<(GateProgram, f64)> {
    let target = GateTarget::cphase(phase);
    let base = identity_program(cphase_region())?;
    let instance = MeshInstance::ideal(base.region().host_topology()?);
    let local = TuneOptions {
        n_starts: 1,
        local_tolerance: 1e-14,
        max_evaluations: 30_000,
    };
    let required = 1.0 - CPHASE_SYNTHESIS_TOLERANCE;
    let d = base.params().len();
    let random = RSequence::new(d)
        .take(options.random_starts)
        .map(|u| base.with_params(&u.iter().map(|x| x * std::f64::consts::TAU).collect::<Vec<_>>()));
    let mut best: Option<(GateProgram, f64)> = None;
    let mut best_fidelity: f64 = 0.0;
    for start in warm.iter().cloned().chain(random) {
        let out = tuner::optimize_program(&instance, &start, &target, &local)?;
        best_fidelity = best_fidelity.max(out.fidelity.value());
        if out.fidelity.value() < required {
            continue;
        }
        let success = out
            .program
            .transform(&instance)?
            .success
            .into_iter()
            .fold(1.0, f64::min);
        if success < CPHASE_MIN_SUCCESS {
            continue;
        }
        if best.as_ref().is_none_or(|(_, s)| success > *s) {
            best = Some((out.program, success));
            if !options.exhaustive {
                break;
            }
        }
    }
    best.ok_or(Error::SynthesisFailed {
        achieved: best_fidelity,
        required,
    })
}

/// Bar routing on `region` with the two-qubit strip encoding.
pub fn identity_program(region: MeshRegion) -> Result<GateProgram> {
    GateProgram::new(region, DualRailEncoding::two_qubit_strip(), BTreeMap::new())
}

/// Bar routing on the six-mode strip over layers `layer..layer+n_layers`.
pub fn identity_two_qubit_program(layer: usize, n_layers: usize) -> Result<GateProgram> {
    identity_program(MeshRegion::new(layer..layer + n_layers, TWO_QUBIT_MODES))
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

/// Settings table for the config file format.
pub fn settings_table(program: &GateProgram) -> Vec<(MziAddress, MziSettings)> {
    program.settings.iter().map(|(a, s)| (*a, *s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{ideal_mzi_block, splitting_ratio};
    use crate::tuner::fidelity;

    fn ideal_transform(p: &GateProgram) -> PostSelectedTransform {
        let inst = MeshInstance::ideal(p.region().host_topology().unwrap());
        p.transform(&inst).unwrap()
    }

    #[test]
    fn cnot_global_phase_constant() {
        assert!((CNOT_GLOBAL_PHASE - (1.0f64 / 3.0).asin()).abs() < 1e-16);
    }

    #[test]
    fn cnot_is_one_third_cnot() {
        let (p, t) = nominal_cnot_program();
        let v = ideal_transform(&p);
        for ((i, j), z) in v.matrix.indexed_iter() {
            let expected = t.matrix()[[i, j]] / 3.0;
            assert!((z - expected).norm() < 1e-9, "({i},{j}) {z}");
        }
        for s in &v.success {
            assert!((s - 1.0 / 9.0).abs() < 1e-10);
        }
    }

    #[test]
    fn cnot_truth_table_row() {
        let (p, _) = nominal_cnot_program();
        let v = ideal_transform(&p);
        // input |10⟩ is column 2; output |11⟩ is row 3
        for j in 0..4 {
            let p = v.matrix[[j, 2]].norm_sqr();
            if j == 3 {
                assert!((p - 1.0 / 9.0).abs() < 1e-10);
            } else {
                assert!(p < 1e-10);
            }
        }
    }

    #[test]
    fn cnot_splitting_ratios_round_trip() {
        let (p, _) = nominal_cnot_program();
        let eta = |l, q| splitting_ratio(p.settings()[&MziAddress::new(l, q)].theta());
        assert!((eta(2, 1) - 1.0 / 3.0).abs() < 1e-12);
        assert!((eta(1, 1) - 0.5).abs() < 1e-12);
        assert!((eta(3, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cnot_rejects_small_host() {
        assert!(nominal_cnot_program_on(&MeshTopology::new(6, 4).unwrap()).is_err());
        assert!(nominal_cnot_program_on(&MeshTopology::new(4, 6).unwrap()).is_err());
        assert!(nominal_cnot_program_on(&MeshTopology::new(8, 6).unwrap()).is_ok());
    }

    fn realised(p: &SingleQubitProgram) -> CMatrix {
        // drop the i·e^{iθ/2} prefactor of the MZI and apply the input phase
        let m = ideal_mzi_block(p.mzi);
        let pre = Complex64::new(0.0, 1.0) * Complex64::from_polar(1.0, p.mzi.theta() / 2.0);
        let inp = Complex64::from_polar(1.0, p.input_phase);
        array![[m[0][0] * inp / pre, m[0][1] / pre], [m[1][0] * inp / pre, m[1][1] / pre]]
    }

    fn equal_up_to_phase(a: &CMatrix, b: &CMatrix, tol: f64) -> bool {
        let overlap: Complex64 = a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum();
        let ph = overlap / overlap.norm();
        a.iter().zip(b.iter()).all(|(x, y)| (x * ph - y).norm() < tol)
    }

    #[test]
    fn single_qubit_examples() {
        let id = single_qubit_program(&GateTarget::identity2()).unwrap();
        assert!((id.mzi.theta() - PI).abs() < 1e-12);
        assert_eq!(id.mzi.phi(), 0.0);
        let x = single_qubit_program(&GateTarget::pauli_x()).unwrap();
        assert!(x.mzi.theta().abs() < 1e-12);
        let h = single_qubit_program(&GateTarget::hadamard()).unwrap();
        assert!((h.mzi.theta() - PI / 2.0).abs() < 1e-12);
        for (p, t) in [(id, GateTarget::identity2()), (x, GateTarget::pauli_x()), (h, GateTarget::hadamard())] {
            assert!(equal_up_to_phase(&realised(&p), t.matrix(), 1e-10));
        }
    }

    #[test]
    fn single_qubit_random_unitaries() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let (a, b, c, d): (f64, f64, f64, f64) = (rng.random(), rng.random(), rng.random(), rng.random());
            let (a, b, c, d) = (a * 6.3, b * 6.3, c * 6.3, d * 1.6);
            let e = |x: f64| Complex64::from_polar(1.0, x);
            let u = array![
                [e(a) * d.cos(), e(b) * d.sin()],
                [-e(c - b + a) * d.sin(), e(c) * d.cos()]
            ];
            let t = GateTarget::new(u).unwrap();
            let p = single_qubit_program(&t).unwrap();
            assert!(equal_up_to_phase(&realised(&p), t.matrix(), 1e-10));
        }
    }

    #[test]
    fn dark_pairs_cover_every_leak() {
        let (p, _) = local_gates_program(&GateTarget::hadamard(), &GateTarget::identity2(), 0).unwrap();
        let pairs = p.dark_pairs();
        // one photon dark with the other on any of 4 rails or 2 dark modes, plus both dark
        assert_eq!(pairs.len(), 2 * 4 + 3);
        assert!(pairs.iter().all(|&(q, r)| q <= r && (q == 0 || q == 5 || r == 0 || r == 5)));
        let shifted = p.shifted(4, 0).unwrap();
        assert_eq!(shifted.dark_modes(), &[0, 5]);
        assert!(p.clone().with_dark_modes(vec![1]).is_err());
    }

    #[test]
    fn local_gates_realise_kron() {
        let a = GateTarget::hadamard().compose(&GateTarget::rz(0.7)).unwrap();
        let b = GateTarget::identity2();
        let (p, t) = local_gates_program(&a, &b, 2).unwrap();
        let v = ideal_transform(&p);
        assert!(fidelity(&v.matrix, t.matrix()).unwrap().value() > 1.0 - 1e-12);
        for s in &v.success {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_program_is_diagonal() {
        let p = identity_two_qubit_program(0, 4).unwrap();
        let v = ideal_transform(&p);
        for ((i, j), z) in v.matrix.indexed_iter() {
            if i == j {
                assert!((z.norm() - 1.0).abs() < 1e-14);
            } else {
                assert!(z.norm() < 1e-14);
            }
        }
    }

    #[test]
    fn disjoint_programs_compose() {
        let (cnot, _) = nominal_cnot_program();
        let other = identity_two_qubit_program(0, 2).unwrap().shifted(0, 6).unwrap();
        let merged = load_programs(&[&cnot, &other]).unwrap();
        assert_eq!(merged.len(), cnot.settings().len() + other.settings().len());
        assert!(load_programs(&[&cnot, &cnot]).is_err());
        assert!(cnot.shifted(1, 0).is_err());
    }

    #[test]
    fn region_rejects_stray_settings() {
        let mut s = BTreeMap::new();
        s.insert(MziAddress::new(7, 0), MziSettings::bar());
        let err = GateProgram::new(
            MeshRegion::new(0..2, 0..6),
            DualRailEncoding::two_qubit_strip(),
            s,
        )
        .unwrap_err();
        assert!(err.to_string().contains("layer 7"));
    }

    #[test]
    fn encoding_must_be_disjoint() {
        assert!(DualRailEncoding::new(vec![(0, 1), (1, 2)]).is_err());
        let e = DualRailEncoding::two_qubit_strip();
        assert_eq!(e.basis_modes(), vec![vec![1, 3], vec![1, 4], vec![2, 3], vec![2, 4]]);
    }

    #[test]
    fn cphase_zero_is_identity_routing() {
        let (p, t) = nominal_cphase_program(0.0).unwrap();
        let v = ideal_transform(&p);
        assert_eq!(fidelity(&v.matrix, t.matrix()).unwrap().value(), 1.0);
    }

    #[test]
    fn bundled_cphase_programs_reach_target() {
        for a in bundled_cphase_programs() {
            let (p, t) = nominal_cphase_program(a.phase).unwrap();
            let v = ideal_transform(&p);
            let f = fidelity(&v.matrix, t.matrix()).unwrap().value();
            assert!(f >= 1.0 - CPHASE_SYNTHESIS_TOLERANCE, "phase {}: {f}", a.phase);
            // columns agree only as far as the synthesis tolerance allows
            let lo = v.success.iter().copied().fold(f64::INFINITY, f64::min);
            assert!((lo - a.success).abs() < 1e-12, "phase {}: success {lo} vs {}", a.phase, a.success);
            for s in &v.success {
                assert!((s - a.success).abs() < 1e-6 * a.success, "phase {}: {s}", a.phase);
            }
        }
    }

    #[test]
    fn bundled_table_covers_study_phases() {
        for k in 1..6 {
            let phase = std::f64::consts::TAU * k as f64 / 6.0;
            assert!(bundled_cphase_programs()
                .iter()
                .any(|a| circular_distance(a.phase, phase) < 1e-12));
        }
        for k in 1..64 {
            let phase = std::f64::consts::TAU * k as f64 / 64.0;
            assert!(bundled_cphase_programs()
                .iter()
                .any(|a| circular_distance(a.phase, phase) < 1e-12));
        }
    }
}
