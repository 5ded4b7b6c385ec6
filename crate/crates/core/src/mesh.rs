//! MZI transfer matrices and their composition over a rectangular lattice.
//!
//! Conventions: mode amplitudes are column vectors, a transfer matrix maps
//! input amplitudes to output amplitudes, and layers are applied in order so
//! the mesh transfer is `L_{n-1} ... L_1 L_0`.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::Range;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::CMatrix;

/// A 2×2 complex block, row-major.
pub type Mat2 = [[Complex64; 2]; 2];

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Reduce an angle into `[0, 2π)`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// The two programmable phases of one MZI, stored reduced mod 2π.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSettings", into = "RawSettings")]
pub struct MziSettings {
    theta: f64,
    phi: f64,
}

#[derive(Serialize, Deserialize)]
struct RawSettings {
    theta: f64,
    phi: f64,
}

impl TryFrom<RawSettings> for MziSettings {
    type Error = Error;
    fn try_from(raw: RawSettings) -> Result<Self> {
        MziSettings::new(raw.theta, raw.phi)
    }
}

impl From<MziSettings> for RawSettings {
    fn from(s: MziSettings) -> Self {
        RawSettings {
            theta: s.theta,
            phi: s.phi,
        }
    }
}

impl MziSettings {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::param("theta", format!("{theta} is not finite")));
        }
        if !phi.is_finite() {
            return Err(Error::param("phi", format!("{phi} is not finite")));
        }
        Ok(Self::wrapped(theta, phi))
    }

    /// Infallible constructor for callers that already hold finite phases.
    pub(crate) fn wrapped(theta: f64, phi: f64) -> Self {
        debug_assert!(theta.is_finite() && phi.is_finite());
        MziSettings {
            theta: wrap_phase(theta),
            phi: wrap_phase(phi),
        }
    }

    /// θ = π, φ = 0: each input stays on its own waveguide.
    pub fn bar() -> Self {
        MziSettings { theta: PI, phi: 0.0 }
    }

    /// θ = 0, φ = 0: inputs swap waveguides.
    pub fn cross() -> Self {
        MziSettings {
            theta: 0.0,
            phi: 0.0,
        }
    }

    /// Settings realising bar-transmission probability `eta`.
    pub fn from_splitting(eta: f64, phi: f64) -> Result<Self> {
        MziSettings::new(theta_for_splitting(eta)?, phi)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn with_theta(self, theta: f64) -> Self {
        MziSettings::wrapped(theta, self.phi)
    }

    pub fn with_phi(self, phi: f64) -> Self {
        MziSettings::wrapped(self.theta, phi)
    }
}

impl Default for MziSettings {
    fn default() -> Self {
        MziSettings::bar()
    }
}

/// Fabrication parameters of one MZI: coupler transitivities and shifter losses.
///
/// `gamma[0]`/`gamma[1]` sit on the upper/lower arm after the first coupler
/// (the θ stage), `gamma[2]`/`gamma[3]` on the upper/lower output (the φ stage).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MziPhysical {
    pub t1: f64,
    pub t2: f64,
    pub gamma: [f64; 4],
}

impl MziPhysical {
    pub fn new(t1: f64, t2: f64, gamma: [f64; 4]) -> Result<Self> {
        for (name, t) in [("t1", t1), ("t2", t2)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::param(name, format!("{t} outside [0, 1]")));
            }
        }
        const NAMES: [&str; 4] = ["gamma1", "gamma2", "gamma3", "gamma4"];
        for (name, g) in NAMES.iter().zip(gamma) {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::param(name, format!("{g} outside [0, 1)")));
            }
        }
        Ok(MziPhysical { t1, t2, gamma })
    }

    /// Balanced couplers, no loss.
    pub const fn ideal() -> Self {
        MziPhysical {
            t1: 0.5,
            t2: 0.5,
            gamma: [0.0; 4],
        }
    }

    pub fn is_lossless(&self) -> bool {
        self.gamma.iter().all(|&g| g == 0.0)
    }
}

impl Default for MziPhysical {
    fn default() -> Self {
        MziPhysical::ideal()
    }
}

/// Coordinates of one MZI: its layer and its index within the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MziAddress {
    pub layer: usize,
    pub position: usize,
}

impl MziAddress {
    pub const fn new(layer: usize, position: usize) -> Self {
        MziAddress { layer, position }
    }
}

impl fmt::Display for MziAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(layer {}, position {})", self.layer, self.position)
    }
}

/// Brick-wall lattice: even layers couple (0,1),(2,3),…; odd layers (1,2),(3,4),….
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshTopology {
    n_modes: usize,
    n_layers: usize,
}

impl MeshTopology {
    pub fn new(n_modes: usize, n_layers: usize) -> Result<Self> {
        if n_modes < 2 || !n_modes.is_multiple_of(2) {
            return Err(Error::param(
                "n_modes",
                format!("{n_modes} is not a positive even integer"),
            ));
        }
        if n_layers == 0 {
            return Err(Error::param("n_layers", "must be positive"));
        }
        Ok(MeshTopology { n_modes, n_layers })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    /// Number of MZIs in a layer of this parity.
    pub fn mzis_in_layer(&self, layer: usize) -> usize {
        if layer.is_multiple_of(2) {
            self.n_modes / 2
        } else {
            self.n_modes / 2 - 1
        }
    }

    pub fn n_mzis(&self) -> usize {
        (0..self.n_layers).map(|l| self.mzis_in_layer(l)).sum()
    }

    pub fn contains(&self, addr: MziAddress) -> bool {
        addr.layer < self.n_layers && addr.position < self.mzis_in_layer(addr.layer)
    }

    pub fn check(&self, addr: MziAddress) -> Result<()> {
        if self.contains(addr) {
            Ok(())
        } else {
            Err(Error::AddressOutOfRange(addr, self.n_modes, self.n_layers))
        }
    }

    /// Upper and lower mode coupled by the MZI at `addr`.
    pub fn modes(&self, addr: MziAddress) -> Result<(usize, usize)> {
        self.check(addr)?;
        Ok(pair_modes(addr))
    }

    /// Address of the MZI in `layer` whose upper mode is `top`, if any.
    pub fn address_at(&self, layer: usize, top: usize) -> Option<MziAddress> {
        let offset = layer % 2;
        if top < offset || !(top - offset).is_multiple_of(2) {
            return None;
        }
        let addr = MziAddress::new(layer, (top - offset) / 2);
        self.contains(addr).then_some(addr)
    }

    /// All addresses in canonical order: layer-major, then position.
    pub fn addresses(&self) -> impl Iterator<Item = MziAddress> + '_ {
        (0..self.n_layers)
            .flat_map(move |l| (0..self.mzis_in_layer(l)).map(move |p| MziAddress::new(l, p)))
    }

    /// Dense index of `addr` in canonical order.
    pub fn index(&self, addr: MziAddress) -> Result<usize> {
        self.check(addr)?;
        let full_pairs = addr.layer / 2;
        let before = full_pairs * (self.n_modes - 1)
            + if addr.layer % 2 == 1 { self.n_modes / 2 } else { 0 };
        Ok(before + addr.position)
    }
}

fn pair_modes(addr: MziAddress) -> (usize, usize) {
    let top = 2 * addr.position + addr.layer % 2;
    (top, top + 1)
}

/// Square complex transfer matrix over the mesh modes.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix(CMatrix);

impl TransferMatrix {
    pub fn identity(n: usize) -> Self {
        TransferMatrix(Array2::eye(n))
    }

    pub fn from_matrix(m: CMatrix) -> Result<Self> {
        let (r, c) = m.dim();
        if r != c {
            return Err(Error::NotSquare { rows: r, cols: c });
        }
        Ok(TransferMatrix(m))
    }

    pub fn from_block(b: &Mat2) -> Self {
        TransferMatrix(Array2::from_shape_fn((2, 2), |(i, j)| b[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.0[[row, col]]
    }

    /// Matrix product `self · rhs` (apply `rhs` first).
    pub fn then_after(&self, rhs: &TransferMatrix) -> TransferMatrix {
        TransferMatrix(self.0.dot(&rhs.0))
    }

    /// `max |(U†U − I)_{jk}|`.
    pub fn unitarity_error(&self) -> f64 {
        let gram = self.0.t().mapv(|z| z.conj()).dot(&self.0);
        gram.indexed_iter()
            .map(|((i, j), z)| {
                let target = if i == j { 1.0 } else { 0.0 };
                (z - target).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Left-multiply by the embedding of `block` on modes `(a, b)`.
    fn apply_block(&mut self, a: usize, b: usize, block: &Mat2) {
        let n = self.0.ncols();
        for k in 0..n {
            let ua = self.0[[a, k]];
            let ub = self.0[[b, k]];
            self.0[[a, k]] = block[0][0] * ua + block[0][1] * ub;
            self.0[[b, k]] = block[1][0] * ua + block[1][1] * ub;
        }
    }
}

/// Lossless MZI with balanced couplers.
pub fn ideal_mzi_block(s: MziSettings) -> Mat2 {
    let et = Complex64::from_polar(1.0, s.theta);
    let ep = Complex64::from_polar(1.0, s.phi);
    let one = Complex64::new(1.0, 0.0);
    [
        [ep * (et - one) * 0.5, I * ep * (et + one) * 0.5],
        [I * (et + one) * 0.5, (one - et) * 0.5],
    ]
}

/// Fabricated MZI: coupler, θ stage with losses γ1/γ2, coupler, φ stage with losses γ3/γ4.
pub fn physical_mzi_block(s: MziSettings, p: &MziPhysical) -> Mat2 {
    let stage = |t: f64, g_up: f64, g_low: f64, phase: f64| -> Mat2 {
        let e = Complex64::from_polar(1.0, phase);
        let up = (1.0 - g_up).sqrt();
        let low = (1.0 - g_low).sqrt();
        let bar = t.sqrt();
        let cross = (1.0 - t).sqrt();
        [
            [e * up * bar, I * e * up * cross],
            [I * low * cross, Complex64::new(low * bar, 0.0)],
        ]
    };
    let first = stage(p.t1, p.gamma[0], p.gamma[1], s.theta);
    let second = stage(p.t2, p.gamma[2], p.gamma[3], s.phi);
    mat2_mul(&second, &first)
}

pub fn mat2_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn ideal_mzi_transfer(s: MziSettings) -> TransferMatrix {
    TransferMatrix::from_block(&ideal_mzi_block(s))
}

pub fn physical_mzi_transfer(s: MziSettings, p: &MziPhysical) -> TransferMatrix {
    TransferMatrix::from_block(&physical_mzi_block(s, p))
}

/// Bar-transmission probability of an ideal MZI, `|U₀₀|² = sin²(θ/2)`.
pub fn splitting_ratio(theta: f64) -> f64 {
    (theta / 2.0).sin().powi(2)
}

/// Inverse of [`splitting_ratio`] on θ ∈ [0, π].
pub fn theta_for_splitting(eta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::param("eta", format!("{eta} outside [0, 1]")));
    }
    Ok(2.0 * eta.sqrt().asin())
}

/// Compose layers `layers` of the mesh with per-MZI settings and physics.
///
/// Modes not covered by an MZI in a layer pass through with amplitude 1.
pub fn compose_layers<S, P>(
    topology: &MeshTopology,
    layers: Range<usize>,
    settings: S,
    physical: P,
) -> TransferMatrix
where
    S: Fn(MziAddress) -> MziSettings,
    P: Fn(MziAddress) -> MziPhysical,
{
    let mut u = TransferMatrix::identity(topology.n_modes());
    for layer in layers {
        apply_layer(&mut u, topology, layer, &settings, &physical);
    }
    u
}

/// Transfer after each layer: entry `l` is `L_l ⋯ L_0`.
pub fn cumulative_transfers<S, P>(
    topology: &MeshTopology,
    settings: S,
    physical: P,
) -> Vec<TransferMatrix>
where
    S: Fn(MziAddress) -> MziSettings,
    P: Fn(MziAddress) -> MziPhysical,
{
    let mut u = TransferMatrix::identity(topology.n_modes());
    let mut out = Vec::with_capacity(topology.n_layers());
    for layer in 0..topology.n_layers() {
        apply_layer(&mut u, topology, layer, &settings, &physical);
        out.push(u.clone());
    }
    out
}

fn apply_layer<S, P>(u: &mut TransferMatrix, topology: &MeshTopology, layer: usize, settings: &S, physical: &P)
where
    S: Fn(MziAddress) -> MziSettings,
    P: Fn(MziAddress) -> MziPhysical,
{
    for position in 0..topology.mzis_in_layer(layer) {
        let addr = MziAddress::new(layer, position);
        let (a, b) = pair_modes(addr);
        let p = physical(addr);
        let block = physical_mzi_block(settings(addr), &p);
        u.apply_block(a, b, &block);
    }
}

/// Full mesh transfer from sparse settings and physics maps.
///
/// Unlisted MZIs default to the bar state and ideal fabrication.
pub fn mesh_transfer(
    topology: &MeshTopology,
    settings: &BTreeMap<MziAddress, MziSettings>,
    physical: &BTreeMap<MziAddress, MziPhysical>,
) -> Result<TransferMatrix> {
    for addr in settings.keys().chain(physical.keys()) {
        topology.check(*addr)?;
    }
    Ok(compose_layers(
        topology,
        0..topology.n_layers(),
        |a| settings.get(&a).copied().unwrap_or_default(),
        |a| physical.get(&a).copied().unwrap_or_default(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn assert_block_eq(a: &Mat2, b: &Mat2, tol: f64) {
        for i in 0..2 {
            for j in 0..2 {
                assert!((a[i][j] - b[i][j]).norm() < tol, "entry ({i},{j}): {} vs {}", a[i][j], b[i][j]);
            }
        }
    }

    /// Literal product diag(e^{iφ},1)·C·diag(e^{iθ},1)·C / 2 with C = [[1,i],[i,1]].
    fn factor_product(theta: f64, phi: f64) -> Mat2 {
        let coupler = [[c(1.0, 0.0), c(0.0, 1.0)], [c(0.0, 1.0), c(1.0, 0.0)]];
        let zero = c(0.0, 0.0);
        let ph = |x: f64| [[Complex64::from_polar(1.0, x), zero], [zero, c(1.0, 0.0)]];
        let m = mat2_mul(&ph(phi), &mat2_mul(&coupler, &mat2_mul(&ph(theta), &coupler)));
        m.map(|row| row.map(|z| z * 0.5))
    }

    #[test]
    fn closed_form_matches_factor_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (t, p) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
            assert_block_eq(&ideal_mzi_block(MziSettings::wrapped(t, p)), &factor_product(t, p), 1e-14);
        }
    }

    #[test]
    fn bar_and_cross_states() {
        let bar = ideal_mzi_block(MziSettings::bar());
        assert_block_eq(&bar, &[[c(-1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]], 1e-15);
        let cross = ideal_mzi_block(MziSettings::cross());
        assert_block_eq(&cross, &[[c(0.0, 0.0), c(0.0, 1.0)], [c(0.0, 1.0), c(0.0, 0.0)]], 1e-15);
    }

    #[test]
    fn half_theta_is_balanced() {
        let m = ideal_mzi_block(MziSettings::wrapped(PI / 2.0, 0.0));
        let expected = [
            [c(-0.5, 0.5), c(-0.5, 0.5)],
            [c(-0.5, 0.5), c(0.5, -0.5)],
        ];
        assert_block_eq(&m, &expected, 1e-15);
        for row in m {
            for z in row {
                assert!((z.norm_sqr() - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn physical_reduces_to_ideal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let s = MziSettings::wrapped(rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
            assert_block_eq(&physical_mzi_block(s, &MziPhysical::ideal()), &ideal_mzi_block(s), 1e-15);

            let bar_couplers = MziPhysical::new(1.0, 1.0, [0.0; 4]).unwrap();
            let d = physical_mzi_block(s, &bar_couplers);
            let e = Complex64::from_polar(1.0, s.theta() + s.phi());
            assert_block_eq(&d, &[[e, c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]], 1e-15);

            let g = rng.random_range(0.0..0.5);
            let lossy = MziPhysical::new(0.5, 0.5, [g; 4]).unwrap();
            let scaled = ideal_mzi_block(s).map(|r| r.map(|z| z * (1.0 - g)));
            assert_block_eq(&physical_mzi_block(s, &lossy), &scaled, 1e-15);
        }
    }

    #[test]
    fn physical_rejects_out_of_range() {
        assert!(MziPhysical::new(1.1, 0.5, [0.0; 4]).is_err());
        assert!(MziPhysical::new(0.5, -0.1, [0.0; 4]).is_err());
        let err = MziPhysical::new(0.5, 0.5, [0.0, 0.0, 1.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("gamma3"));
    }

    #[test]
    fn settings_are_wrapped_and_finite() {
        let s = MziSettings::new(-PI / 2.0, 5.0 * PI).unwrap();
        assert!((s.theta() - 1.5 * PI).abs() < 1e-12);
        assert!((s.phi() - PI).abs() < 1e-12);
        assert!(MziSettings::new(f64::NAN, 0.0).is_err());
        assert!(MziSettings::new(0.0, f64::INFINITY).is_err());
        assert_eq!(wrap_phase(-1e-300), 0.0);
    }

    #[test]
    fn topology_parity_rule() {
        let t = MeshTopology::new(6, 3).unwrap();
        assert_eq!(t.mzis_in_layer(0), 3);
        assert_eq!(t.mzis_in_layer(1), 2);
        assert_eq!(t.modes(MziAddress::new(0, 2)).unwrap(), (4, 5));
        assert_eq!(t.modes(MziAddress::new(1, 1)).unwrap(), (3, 4));
        assert!(t.modes(MziAddress::new(1, 2)).is_err());
        assert_eq!(t.n_mzis(), 8);
        for (i, a) in t.addresses().enumerate() {
            assert_eq!(t.index(a).unwrap(), i);
        }
        assert_eq!(t.address_at(1, 3), Some(MziAddress::new(1, 1)));
        assert_eq!(t.address_at(1, 2), None);
        assert!(MeshTopology::new(5, 2).is_err());
        assert!(MeshTopology::new(4, 0).is_err());
    }

    #[test]
    fn layers_never_share_modes() {
        let t = MeshTopology::new(10, 4).unwrap();
        for layer in 0..4 {
            let mut used = [false; 10];
            for p in 0..t.mzis_in_layer(layer) {
                let (a, b) = t.modes(MziAddress::new(layer, p)).unwrap();
                assert_eq!(b, a + 1);
                assert!(!used[a] && !used[b]);
                used[a] = true;
                used[b] = true;
            }
        }
    }

    #[test]
    fn single_mzi_mesh_equals_block() {
        let t = MeshTopology::new(2, 1).unwrap();
        let s = MziSettings::wrapped(0.7, 2.1);
        let mut settings = BTreeMap::new();
        settings.insert(MziAddress::new(0, 0), s);
        let u = mesh_transfer(&t, &settings, &BTreeMap::new()).unwrap();
        let b = ideal_mzi_transfer(s);
        for ((i, j), z) in u.matrix().indexed_iter() {
            assert!((z - b.get(i, j)).norm() < 1e-15);
        }
    }

    #[test]
    fn all_bar_mesh_is_diagonal_unimodular() {
        let t = MeshTopology::new(8, 5).unwrap();
        let u = mesh_transfer(&t, &BTreeMap::new(), &BTreeMap::new()).unwrap();
        for ((i, j), z) in u.matrix().indexed_iter() {
            if i == j {
                assert!((z.norm() - 1.0).abs() < 1e-14);
            } else {
                assert!(z.norm() < 1e-15);
            }
        }
    }

    #[test]
    fn out_of_range_address_is_named() {
        let t = MeshTopology::new(4, 2).unwrap();
        let mut settings = BTreeMap::new();
        settings.insert(MziAddress::new(1, 1), MziSettings::bar());
        let err = mesh_transfer(&t, &settings, &BTreeMap::new()).unwrap_err();
        assert!(err.to_string().contains("(layer 1, position 1)"), "{err}");
    }

    fn random_settings(t: &MeshTopology, seed: u64) -> BTreeMap<MziAddress, MziSettings> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        t.addresses()
            .map(|a| (a, MziSettings::wrapped(rng.random_range(0.0..TAU), rng.random_range(0.0..TAU))))
            .collect()
    }

    #[test]
    fn random_lossless_16x8_is_unitary() {
        let t = MeshTopology::new(16, 8).unwrap();
        let u = mesh_transfer(&t, &random_settings(&t, 3), &BTreeMap::new()).unwrap();
        assert!(u.unitarity_error() < 1e-12);
    }

    #[test]
    fn splitting_ratio_examples() {
        assert!((splitting_ratio(PI) - 1.0).abs() < 1e-15);
        assert_eq!(splitting_ratio(0.0), 0.0);
        assert!((splitting_ratio(PI / 2.0) - 0.5).abs() < 1e-15);
        assert!(theta_for_splitting(1.2).is_err());
        assert!(theta_for_splitting(-0.1).is_err());
    }

    proptest! {
        #[test]
        fn splitting_round_trip(eta in 0.0f64..=1.0) {
            let back = splitting_ratio(theta_for_splitting(eta).unwrap());
            prop_assert!((back - eta).abs() < 1e-12);
        }

        #[test]
        fn lossless_physical_is_unitary(t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0, th in 0.0..TAU, ph in 0.0..TAU) {
            let p = MziPhysical::new(t1, t2, [0.0; 4]).unwrap();
            let u = physical_mzi_transfer(MziSettings::wrapped(th, ph), &p);
            prop_assert!(u.unitarity_error() < 1e-13);
        }

        #[test]
        fn composition_splits_at_any_layer(seed in 0u64..1000, k in 0usize..7) {
            let t = MeshTopology::new(8, 7).unwrap();
            let s = random_settings(&t, seed);
            let get = |a| s[&a];
            let ideal = |_| MziPhysical::ideal();
            let full = compose_layers(&t, 0..7, get, ideal);
            let head = compose_layers(&t, 0..k, get, ideal);
            let tail = compose_layers(&t, k..7, get, ideal);
            let joined = tail.then_after(&head);
            for (a, b) in full.matrix().iter().zip(joined.matrix().iter()) {
                prop_assert!((a - b).norm() < 1e-12);
            }
        }
    }
}
