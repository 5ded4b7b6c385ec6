//! Few-photon Fock-state evolution through a linear-optical transfer matrix.
//!
//! The amplitude from input occupation `s` to output occupation `t` is
//! `per(U[t, s]) / sqrt(∏ sᵢ! ∏ tⱼ!)`, where `U[t, s]` repeats row `j`
//! `tⱼ` times and column `i` `sᵢ` times. Lossy (sub-unitary) matrices are
//! handled by renormalising over the post-selected outcomes.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TransferMatrix;
use crate::CMatrix;

pub const MAX_PHOTONS: usize = 4;

/// Photon occupation per mode.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FockState {
    occupations: Vec<usize>,
}

impl FockState {
    pub fn new(occupations: Vec<usize>) -> Result<Self> {
        let n: usize = occupations.iter().sum();
        if n == 0 {
            return Err(Error::param("occupations", "state has no photons"));
        }
        if n > MAX_PHOTONS {
            return Err(Error::TooManyPhotons(n));
        }
        Ok(FockState { occupations })
    }

    /// One photon per listed mode; repeated modes stack.
    pub fn from_modes(n_modes: usize, modes: &[usize]) -> Result<Self> {
        let mut occ = vec![0; n_modes];
        for &m in modes {
            if m >= n_modes {
                return Err(Error::DimensionMismatch(format!(
                    "mode {m} outside {n_modes}-mode register"
                )));
            }
            occ[m] += 1;
        }
        FockState::new(occ)
    }

    pub fn occupations(&self) -> &[usize] {
        &self.occupations
    }

    pub fn n_modes(&self) -> usize {
        self.occupations.len()
    }

    pub fn n_photons(&self) -> usize {
        self.occupations.iter().sum()
    }

    /// Mode index of each photon, ascending.
    pub fn photon_modes(&self) -> Vec<usize> {
        self.occupations
            .iter()
            .enumerate()
            .flat_map(|(m, &k)| std::iter::repeat_n(m, k))
            .collect()
    }

    fn factorial_product(&self) -> f64 {
        self.occupations
            .iter()
            .map(|&k| (1..=k).product::<usize>() as f64)
            .product()
    }
}

/// Matrix permanent. Explicit expansion up to 3×3, Ryser's formula beyond.
pub fn permanent(m: &CMatrix) -> Result<Complex64> {
    let (r, c) = m.dim();
    if r != c {
        return Err(Error::NotSquare { rows: r, cols: c });
    }
    Ok(match r {
        0 => Complex64::new(1.0, 0.0),
        1 => m[[0, 0]],
        2 => m[[0, 0]] * m[[1, 1]] + m[[0, 1]] * m[[1, 0]],
        3 => {
            let a = |i: usize, j: usize| m[[i, j]];
            a(0, 0) * (a(1, 1) * a(2, 2) + a(1, 2) * a(2, 1))
                + a(0, 1) * (a(1, 0) * a(2, 2) + a(1, 2) * a(2, 0))
                + a(0, 2) * (a(1, 0) * a(2, 1) + a(1, 1) * a(2, 0))
        }
        n => ryser(m, n),
    })
}

/// `(-1)^n Σ_{S ⊆ cols} (-1)^{|S|} ∏_i Σ_{j∈S} m_ij`, visiting subsets in Gray-code order.
fn ryser(m: &CMatrix, n: usize) -> Complex64 {
    let mut row_sums = vec![Complex64::new(0.0, 0.0); n];
    let mut total = Complex64::new(0.0, 0.0);
    let mut gray: u64 = 0;
    for k in 1..(1u64 << n) {
        let next = k ^ (k >> 1);
        let flipped = (gray ^ next).trailing_zeros() as usize;
        let added = next & (1 << flipped) != 0;
        for (i, s) in row_sums.iter_mut().enumerate() {
            if added {
                *s += m[[i, flipped]];
            } else {
                *s -= m[[i, flipped]];
            }
        }
        gray = next;
        let prod: Complex64 = row_sums.iter().product();
        if next.count_ones() % 2 == 0 {
            total += prod;
        } else {
            total -= prod;
        }
    }
    if n % 2 == 1 {
        -total
    } else {
        total
    }
}

pub fn transition_amplitude(u: &TransferMatrix, input: &FockState, output: &FockState) -> Result<Complex64> {
    let n = u.dim();
    if input.n_modes() != n || output.n_modes() != n {
        return Err(Error::DimensionMismatch(format!(
            "states over {} and {} modes, transfer over {n}",
            input.n_modes(),
            output.n_modes()
        )));
    }
    if input.n_photons() != output.n_photons() {
        return Err(Error::PhotonNumberMismatch {
            input: input.n_photons(),
            output: output.n_photons(),
        });
    }
    let cols = input.photon_modes();
    let rows = output.photon_modes();
    let sub = Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| u.get(rows[i], cols[j]));
    let per = permanent(&sub)?;
    Ok(per / (input.factorial_product() * output.factorial_product()).sqrt())
}

/// Two-photon amplitude from photons at input modes `(a, b)` to output modes `(q, r)`.
#[inline]
pub(crate) fn two_photon_amplitude(u: &CMatrix, (a, b): (usize, usize), (q, r): (usize, usize)) -> Complex64 {
    let per = u[[q, a]] * u[[r, b]] + u[[q, b]] * u[[r, a]];
    let mut norm: f64 = 1.0;
    if a == b {
        norm *= 2.0;
    }
    if q == r {
        norm *= 2.0;
    }
    if norm == 1.0 {
        per
    } else {
        per / norm.sqrt()
    }
}

/// All occupation vectors of `n_photons` over `n_modes`, in lexicographic order of photon modes.
pub fn fock_basis(n_modes: usize, n_photons: usize) -> Result<Vec<FockState>> {
    if n_photons > MAX_PHOTONS {
        return Err(Error::TooManyPhotons(n_photons));
    }
    fn rec(start: usize, left: usize, n_modes: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for m in start..n_modes {
            cur.push(m);
            rec(m, left - 1, n_modes, cur, out);
            cur.pop();
        }
    }
    let mut lists = Vec::new();
    rec(0, n_photons, n_modes, &mut Vec::new(), &mut lists);
    lists
        .into_iter()
        .map(|modes| FockState::from_modes(n_modes, &modes))
        .collect()
}

/// Amplitudes between chosen input and output basis states.
#[derive(Debug, Clone, PartialEq)]
pub struct PostSelectedTransform {
    /// Rows index outputs, columns index inputs.
    pub matrix: CMatrix,
    /// Probability mass retained per input column.
    pub success: Vec<f64>,
}

impl PostSelectedTransform {
    /// Copy scaled to unit Frobenius norm; phase untouched.
    pub fn normalized(&self) -> Result<CMatrix> {
        let norm = self.matrix.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroMatrix);
        }
        Ok(self.matrix.mapv(|z| z / norm))
    }
}

pub fn post_selected_transform(
    u: &TransferMatrix,
    in_basis: &[FockState],
    out_basis: &[FockState],
) -> Result<PostSelectedTransform> {
    let n = in_basis
        .first()
        .or(out_basis.first())
        .map(FockState::n_photons)
        .ok_or_else(|| Error::param("basis", "empty basis"))?;
    for s in in_basis.iter().chain(out_basis) {
        if s.n_photons() != n {
            return Err(Error::PhotonNumberMismatch {
                input: n,
                output: s.n_photons(),
            });
        }
    }
    let mut matrix = Array2::zeros((out_basis.len(), in_basis.len()));
    for (k, input) in in_basis.iter().enumerate() {
        for (j, output) in out_basis.iter().enumerate() {
            matrix[[j, k]] = transition_amplitude(u, input, output)?;
        }
    }
    let success = (0..in_basis.len())
        .map(|k| matrix.column(k).iter().map(|z: &Complex64| z.norm_sqr()).sum())
        .collect();
    Ok(PostSelectedTransform { matrix, success })
}

/// Two-photon post-selected transform between mode-pair bases; the fast path used by the tuner.
pub(crate) fn two_photon_transform(u: &CMatrix, inputs: &[(usize, usize)], outputs: &[(usize, usize)]) -> CMatrix {
    Array2::from_shape_fn((outputs.len(), inputs.len()), |(j, k)| {
        two_photon_amplitude(u, inputs[k], outputs[j])
    })
}

/// Output coincidence probabilities Γ over mode pairs, stored symmetrically.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    gamma: Array2<f64>,
}

impl CorrelationMatrix {
    pub fn zeros(n_modes: usize) -> Self {
        CorrelationMatrix {
            gamma: Array2::zeros((n_modes, n_modes)),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn get(&self, q: usize, r: usize) -> f64 {
        self.gamma[[q, r]]
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.gamma
    }

    /// Sum over unordered pairs `q ≤ r`.
    pub fn total(&self) -> f64 {
        let n = self.n_modes();
        (0..n).map(|q| (q..n).map(|r| self.gamma[[q, r]]).sum::<f64>()).sum()
    }

    /// `density[q] = 2Γ(q,q) + Σ_{r≠q} Γ(q,r)`; sums to 2 when Γ is normalised.
    pub fn density(&self) -> Vec<f64> {
        let n = self.n_modes();
        (0..n)
            .map(|q| (0..n).map(|r| self.gamma[[q, r]]).sum::<f64>() + self.gamma[[q, q]])
            .collect()
    }

    pub(crate) fn add_scaled(&mut self, other: &CorrelationMatrix, w: f64) {
        self.gamma.scaled_add(w, &other.gamma);
    }

    pub(crate) fn scale(&mut self, w: f64) {
        self.gamma.mapv_inplace(|x| x * w);
    }
}

/// Γ and mode density for a two-photon input, renormalised over two-photon detections.
pub fn two_photon_statistics(u: &TransferMatrix, input: &FockState) -> Result<(CorrelationMatrix, Vec<f64>)> {
    if input.n_photons() != 2 {
        return Err(Error::WrongPhotonCount("two_photon_statistics", 2, input.n_photons()));
    }
    if input.n_modes() != u.dim() {
        return Err(Error::DimensionMismatch(format!(
            "state over {} modes, transfer over {}",
            input.n_modes(),
            u.dim()
        )));
    }
    let modes = input.photon_modes();
    let corr = two_photon_correlation(u.matrix(), (modes[0], modes[1]));
    let density = corr.density();
    Ok((corr, density))
}

pub(crate) fn two_photon_correlation(u: &CMatrix, input: (usize, usize)) -> CorrelationMatrix {
    let n = u.nrows();
    let mut gamma = Array2::zeros((n, n));
    let mut total = 0.0;
    for q in 0..n {
        for r in q..n {
            let p = two_photon_amplitude(u, input, (q, r)).norm_sqr();
            gamma[[q, r]] = p;
            gamma[[r, q]] = p;
            total += p;
        }
    }
    if total > 0.0 {
        gamma.mapv_inplace(|x| x / total);
    }
    CorrelationMatrix { gamma }
}
