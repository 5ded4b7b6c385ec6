//! Process fidelity, phase re-optimisation and Monte Carlo gate studies.
//!
//! The optimiser is a multistart trust-region descent on `1 − F` over the
//! free phases. `1 − F` is written as the squared norm of the part of the
//! normalised transform orthogonal to the target, so each local run is a
//! Levenberg-Marquardt iteration on that residual with a central
//! finite-difference Jacobian. Starts: the nominal program first, then
//! points of an additive-recurrence sequence over `[0, 2π)^d`.

use std::f64::consts::TAU;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::{DisorderModel, InstanceSeed, MeshInstance};
use crate::error::{Error, Result};
use crate::gates::{nominal_cnot_program, nominal_cphase_program, GateProgram, GateTarget};
use crate::qmc::RSequence;
use crate::stats::median;
use crate::CMatrix;

/// Hilbert-Schmidt process fidelity in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct FidelityScore(f64);

impl FidelityScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `|Tr(V†V₀)|² / (Tr(V†V)·Tr(V₀†V₀))`.
pub fn fidelity(v: &CMatrix, v0: &CMatrix) -> Result<FidelityScore> {
    if v.dim() != v0.dim() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", v.dim(), v0.dim())));
    }
    let nv: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    let n0: f64 = v0.iter().map(|z| z.norm_sqr()).sum();
    if nv == 0.0 || n0 == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let overlap: num_complex::Complex64 = v.iter().zip(v0.iter()).map(|(a, b)| a.conj() * b).sum();
    Ok(FidelityScore((overlap.norm_sqr() / (nv * n0)).min(1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneOptions {
    pub n_starts: usize,
    /// Stop a local run once the achievable fidelity gain drops below this.
    pub local_tolerance: f64,
    pub max_evaluations: usize,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            n_starts: 16,
            local_tolerance: 1e-8,
            max_evaluations: 20_000,
        }
    }
}

impl TuneOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_starts == 0 {
            return Err(Error::param("n_starts", "must be positive"));
        }
        if !(self.local_tolerance.is_finite() && self.local_tolerance > 0.0) {
            return Err(Error::param("local_tolerance", "must be positive"));
        }
        if self.max_evaluations < self.n_starts {
            return Err(Error::param("max_evaluations", "budget must be at least n_starts"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub program: GateProgram,
    pub fidelity: FidelityScore,
    pub nominal_fidelity: FidelityScore,
    pub evaluations: usize,
    /// The best candidate's local run stopped on the evaluation budget, not on convergence.
    pub budget_limited: bool,
}

/// Fidelity of `program` on `instance` against `target`.
pub fn program_fidelity(instance: &MeshInstance, program: &GateProgram, target: &GateTarget) -> Result<FidelityScore> {
    program.region().fits(instance.topology())?;
    let v = if program.encoding().n_qubits() == 2 {
        program.transform_matrix(instance)
    } else {
        program.transform(instance)?.matrix
    };
    fidelity(&v, target.matrix())
}

/// Maximise the fidelity of `program` on `instance` over its free phases.
pub fn optimize_program(
    instance: &MeshInstance,
    program: &GateProgram,
    target: &GateTarget,
    options: &TuneOptions,
) -> Result<TuneOutcome> {
    options.validate()?;
    let nominal_fidelity = program_fidelity(instance, program, target)?;
    let x0 = program.params();
    let d = x0.len();
    if d == 0 {
        return Ok(TuneOutcome {
            program: program.clone(),
            fidelity: nominal_fidelity,
            nominal_fidelity,
            evaluations: 1,
            budget_limited: false,
        });
    }
    let two_qubit = program.encoding().n_qubits() == 2;
    let guarded = two_qubit && !program.dark_modes().is_empty();
    let t_norm = target.matrix().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut t_hat = target.matrix().mapv(|z| z / t_norm);
    if guarded {
        // light in dark modes has a zero target
        let (rows, cols) = t_hat.dim();
        let mut padded = CMatrix::zeros((rows + program.dark_pairs().len(), cols));
        padded.slice_mut(ndarray::s![..rows, ..]).assign(&t_hat);
        t_hat = padded;
    }
    let objective = |x: &[f64]| -> Vec<f64> {
        let p = program.with_params(x);
        let v = if guarded {
            p.guarded_transform_matrix(instance)
        } else if two_qubit {
            p.transform_matrix(instance)
        } else {
            p.transform(instance).expect("region checked").matrix
        };
        infidelity_residual(&v, &t_hat)
    };
    let tol = options.local_tolerance;
    let budget = options.max_evaluations;
    let mut used = 1;
    let r_nominal = objective(&x0);
    let f_nominal: f64 = r_nominal.iter().map(|r| r * r).sum();
    let run = local_search(&objective, x0.clone(), r_nominal, tol, budget - used);
    used += run.evaluations;
    let mut best = Candidate {
        distance: torus_distance(&run.x, &x0),
        run,
    };

    let n_random = options.n_starts - 1;
    let mut seq = RSequence::new(d);
    for k in 0..n_random {
        if 1.0 - best.run.f >= 1.0 - tol || used >= budget {
            break;
        }
        // a start is only worth running with room for a few dozen model steps
        let share = ((budget - used) / (n_random - k)).max(MIN_STEPS_PER_START * (2 * d + 1));
        if used + share > budget {
            break;
        }
        let start: Vec<f64> = seq.next().expect("infinite").iter().map(|u| u * TAU).collect();
        let r_start = objective(&start);
        let run = local_search(&objective, start, r_start, tol, share - 1);
        used += run.evaluations + 1;
        let cand = Candidate {
            distance: torus_distance(&run.x, &x0),
            run,
        };
        if cand.better_than(&best) {
            best = cand;
        }
    }

    let mut best_x = best.run.x;
    let mut budget_limited = best.run.budget_limited;
    if best.run.f > f_nominal {
        // cannot happen for a descent from the nominal start; kept as a guard
        best_x = x0;
        budget_limited = false;
    }
    let wrapped: Vec<f64> = best_x.iter().map(|&v| crate::mesh::wrap_phase(v)).collect();
    let tuned = program.with_params(&wrapped);
    // guarded runs optimise a stricter score; report the plain one
    let fid = if guarded {
        program_fidelity(instance, &tuned, target)?.value()
    } else {
        (1.0 - best.run.f.min(f_nominal)).clamp(0.0, 1.0)
    };
    Ok(TuneOutcome {
        program: tuned,
        fidelity: FidelityScore(fid),
        nominal_fidelity,
        evaluations: used,
        budget_limited,
    })
}

struct Candidate {
    run: LocalRun,
    distance: f64,
}

impl Candidate {
    fn better_than(&self, other: &Candidate) -> bool {
        const TIE: f64 = 1e-12;
        if (self.run.f - other.run.f).abs() <= TIE {
            self.distance < other.distance
        } else {
            self.run.f < other.run.f
        }
    }
}

fn torus_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).rem_euclid(TAU);
            d.min(TAU - d).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Residual whose squared norm is `1 − F(v, t̂)` for unit-norm `t̂`:
/// the part of `v/‖v‖` orthogonal to `t̂`, as interleaved real and imaginary parts.
fn infidelity_residual(v: &CMatrix, t_hat: &CMatrix) -> Vec<f64> {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        // no transmitted amplitude: maximal infidelity, spread evenly
        let k = 2 * v.len();
        return vec![(1.0 / k as f64).sqrt(); k];
    }
    let overlap: num_complex::Complex64 = t_hat.iter().zip(v.iter()).map(|(t, z)| t.conj() * z).sum();
    v.iter()
        .zip(t_hat.iter())
        .flat_map(|(z, t)| {
            let r = (z - t * overlap) / norm;
            [r.re, r.im]
        })
        .collect()
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

struct LocalRun {
    x: Vec<f64>,
    f: f64,
    evaluations: usize,
    budget_limited: bool,
}

const FD_STEP: f64 = 1e-6;
const MAX_DAMPING: f64 = 1e12;
const MIN_STEPS_PER_START: usize = 40;
/// A local run stops once this many accepted steps together gain less than the tolerance.
const STALL_WINDOW: usize = 5;

/// Levenberg-Marquardt descent on `‖r(x)‖²` from `x` with known residual `r`.
///
/// The Jacobian comes from central differences; the damping parameter acts as
/// an inverse trust radius, grown on rejected steps and shrunk on good ones.
fn local_search<F: Fn(&[f64]) -> Vec<f64>>(
    residual: &F,
    mut x: Vec<f64>,
    mut r: Vec<f64>,
    tol: f64,
    budget: usize,
) -> LocalRun {
    let d = x.len();
    let m = r.len();
    let mut f = sum_sq(&r);
    let mut evals = 0;
    let jacobian = |x: &[f64], evals: &mut usize| -> Array2<f64> {
        let mut jac = Array2::zeros((m, d));
        let mut xp = x.to_vec();
        for i in 0..d {
            xp[i] = x[i] + FD_STEP;
            let rp = residual(&xp);
            xp[i] = x[i] - FD_STEP;
            let rm = residual(&xp);
            xp[i] = x[i];
            for k in 0..m {
                jac[[k, i]] = (rp[k] - rm[k]) / (2.0 * FD_STEP);
            }
        }
        *evals += 2 * d;
        jac
    };
    let done = |x, f, evals, budget_limited| LocalRun {
        x,
        f,
        evaluations: evals,
        budget_limited,
    };
    if budget < 2 * d + 1 {
        return done(x, f, 0, true);
    }
    let mut jac = jacobian(&x, &mut evals);
    // secant estimate of Σ rₖ∇²rₖ, the curvature Gauss-Newton leaves out
    let mut s_mat: Array2<f64> = Array2::zeros((d, d));
    let mut mu = 1e-3;
    let mut nu = 2.0;
    // objective values after each accepted step, newest last
    let mut history = vec![f];
    loop {
        let rv = Array1::from_vec(r.clone());
        let g = jac.t().dot(&rv);
        let a = jac.t().dot(&jac);
        let stalled = history.len() > STALL_WINDOW && history[history.len() - 1 - STALL_WINDOW] - f < tol;
        if stalled || f == 0.0 || mu > MAX_DAMPING {
            return done(x, f, evals, false);
        }
        if evals + 2 * d + 1 > budget {
            return done(x, f, evals, true);
        }
        let model = &a + &s_mat;
        let lambda = mu * max_diag(&a).max(1e-300);
        let Some(p) = solve_damped(&model, &g, lambda) else {
            mu *= nu;
            nu *= 2.0;
            continue;
        };
        let predicted = -(2.0 * g.dot(&p) + p.dot(&model.dot(&p)));
        let trial: Vec<f64> = x.iter().zip(p.iter()).map(|(a, s)| a + s).collect();
        let r_trial = residual(&trial);
        evals += 1;
        let f_trial = sum_sq(&r_trial);
        let rho = if predicted > 0.0 { (f - f_trial) / predicted } else { -1.0 };
        if rho > 0.0 {
            history.push(f_trial);
            x = trial;
            f = f_trial;
            mu *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
            let jac_new = jacobian(&x, &mut evals);
            let r_new = Array1::from_vec(r_trial);
            let y_sharp = (&jac_new - &jac).t().dot(&r_new);
            let y = jac_new.t().dot(&r_new) - &g;
            secant_update(&mut s_mat, &p, &y, &y_sharp);
            jac = jac_new;
            r = r_new.to_vec();
        } else {
            mu *= nu;
            nu *= 2.0;
        }
    }
}

/// Sized symmetric secant update so that `S·s ≈ y♯`, with `y` the gradient change.
fn secant_update(s_mat: &mut Array2<f64>, s: &Array1<f64>, y: &Array1<f64>, y_sharp: &Array1<f64>) {
    let ys = y.dot(s);
    if ys <= 0.0 {
        return;
    }
    let ss = s.dot(&s_mat.dot(s));
    if ss != 0.0 {
        let tau = (s.dot(y_sharp).abs() / ss.abs()).min(1.0);
        s_mat.mapv_inplace(|v| v * tau);
    }
    let z = y_sharp - &s_mat.dot(s);
    let zs = z.dot(s);
    let d = s.len();
    for i in 0..d {
        for j in 0..d {
            s_mat[[i, j]] += (z[i] * y[j] + y[i] * z[j]) / ys - zs * y[i] * y[j] / (ys * ys);
        }
    }
}

fn max_diag(a: &Array2<f64>) -> f64 {
    a.diag().iter().copied().fold(0.0, f64::max)
}

/// Solve `(A + λI) p = −g` by Cholesky; `None` if not positive definite.
fn solve_damped(a: &Array2<f64>, g: &Array1<f64>, lambda: f64) -> Option<Array1<f64>> {
    let n = g.len();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]] + if i == j { lambda } else { 0.0 };
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[[i, k]] * y[k]).sum();
        y[i] = (-g[i] - s) / l[[i, i]];
    }
    let mut p = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[[k, i]] * p[k]).sum();
        p[i] = (y[i] - s) / l[[i, i]];
    }
    Some(p)
}

/// Gates available to [`monte_carlo_gate_study`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyGate {
    Cnot,
    /// Scored as the minimum over six phases `2πk/6`.
    Cphase,
}

impl StudyGate {
    fn programs(self) -> Result<Vec<(GateProgram, GateTarget)>> {
        match self {
            StudyGate::Cnot => Ok(vec![nominal_cnot_program()]),
            StudyGate::Cphase => (0..6).map(|k| nominal_cphase_program(TAU * k as f64 / 6.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub index: u64,
    pub pre_fidelity: f64,
    pub post_fidelity: f64,
    pub evaluations: usize,
    pub budget_limited: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub records: Vec<InstanceRecord>,
    pub median_pre: f64,
    pub median_post: f64,
}

impl StudyResult {
    pub fn from_records(records: Vec<InstanceRecord>) -> Self {
        let pre: Vec<f64> = records.iter().map(|r| r.pre_fidelity).collect();
        let post: Vec<f64> = records.iter().map(|r| r.post_fidelity).collect();
        let (median_pre, median_post) = if records.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (median(&pre), median(&post))
        };
        StudyResult {
            records,
            median_pre,
            median_post,
        }
    }

    pub fn any_budget_limited(&self) -> bool {
        self.records.iter().any(|r| r.budget_limited)
    }
}

/// Sample `n_instances` chips and score each before and after re-optimisation.
///
/// Instance `k` uses `InstanceSeed::new(master_seed, k)` over the gate's own
/// six-mode region, so results do not depend on thread count.
pub fn monte_carlo_gate_study(
    gate: StudyGate,
    model: &DisorderModel,
    n_instances: usize,
    master_seed: u64,
    options: &TuneOptions,
) -> Result<StudyResult> {
    if n_instances == 0 {
        return Err(Error::param("instances", "must be at least 1"));
    }
    model.validate()?;
    options.validate()?;
    let programs = gate.programs()?;
    let topology = programs[0].0.region().host_topology()?;
    let records = (0..n_instances as u64)
        .into_par_iter()
        .map(|index| {
            let instance = model.sample_mesh_instance(topology, InstanceSeed::new(master_seed, index));
            let mut record = InstanceRecord {
                index,
                pre_fidelity: 1.0,
                post_fidelity: 1.0,
                evaluations: 0,
                budget_limited: false,
            };
            for (program, target) in &programs {
                let out = optimize_program(&instance, program, target, options)?;
                record.pre_fidelity = record.pre_fidelity.min(out.nominal_fidelity.value());
                record.post_fidelity = record.post_fidelity.min(out.fidelity.value());
                record.evaluations += out.evaluations;
                record.budget_limited |= out.budget_limited;
            }
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyResult::from_records(records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::nominal_cnot_program;
    use crate::mesh::MziAddress;
    use ndarray::Array2;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn fidelity_examples() {
        let id: CMatrix = Array2::eye(4);
        let cz = GateTarget::cphase(PI);
        assert!((fidelity(&id, cz.matrix()).unwrap().value() - 0.25).abs() < 1e-15);
        let cnot = GateTarget::cnot();
        let third = cnot.matrix().mapv(|z| z / 3.0);
        assert!((fidelity(cnot.matrix(), &third).unwrap().value() - 1.0).abs() < 1e-15);
        assert!(matches!(fidelity(&Array2::zeros((4, 4)), &id), Err(Error::ZeroMatrix)));
        assert!(fidelity(&Array2::eye(2), &id).is_err());
    }

    proptest! {
        #[test]
        fn fidelity_phase_and_scale_invariant(
            entries in prop::collection::vec(-1.0f64..1.0, 32),
            other in prop::collection::vec(-1.0f64..1.0, 32),
            scale in 0.01f64..10.0,
            phase in 0.0f64..TAU,
        ) {
            let v = Array2::from_shape_fn((4, 4), |(i, j)| c(entries[2 * (4 * i + j)], entries[2 * (4 * i + j) + 1]));
            let w = Array2::from_shape_fn((4, 4), |(i, j)| c(other[2 * (4 * i + j)], other[2 * (4 * i + j) + 1]));
            prop_assume!(v.iter().any(|z| z.norm() > 1e-3) && w.iter().any(|z| z.norm() > 1e-3));
            let f_self = fidelity(&v, &v).unwrap().value();
            prop_assert!((f_self - 1.0).abs() < 1e-12);
            let k = Complex64::from_polar(scale, phase);
            let f1 = fidelity(&v, &w).unwrap().value();
            let f2 = fidelity(&v.mapv(|z| z * k), &w).unwrap().value();
            prop_assert!((f1 - f2).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&f1));
        }
    }

    #[test]
    fn ideal_cnot_stays_optimal() {
        let (p, t) = nominal_cnot_program();
        let inst = MeshInstance::ideal(p.region().host_topology().unwrap());
        let out = optimize_program(&inst, &p, &t, &TuneOptions::default()).unwrap();
        assert!(out.fidelity.value() >= 1.0 - 1e-9);
        assert!(out.evaluations < 400, "{}", out.evaluations);
    }

    #[test]
    fn recovers_perturbed_theta() {
        let (p, t) = nominal_cnot_program();
        let addr = MziAddress::new(2, 1);
        let mut settings = p.settings().clone();
        let s = settings[&addr];
        settings.insert(addr, s.with_theta(s.theta() + 0.1));
        let perturbed = GateProgram::new(p.region().clone(), p.encoding().clone(), settings).unwrap();
        let inst = MeshInstance::ideal(p.region().host_topology().unwrap());
        let before = program_fidelity(&inst, &perturbed, &t).unwrap().value();
        assert!(before < 0.999);
        let out = optimize_program(&inst, &perturbed, &t, &TuneOptions::default()).unwrap();
        assert!(out.fidelity.value() >= 1.0 - 1e-6, "{}", out.fidelity.value());
    }

    #[test]
    fn never_worse_than_nominal_and_deterministic() {
        let (p, t) = nominal_cnot_program();
        let topo = p.region().host_topology().unwrap();
        let model = DisorderModel::default();
        let opts = TuneOptions {
            max_evaluations: 3000,
            ..Default::default()
        };
        for k in 0..3 {
            let inst = model.sample_mesh_instance(topo, InstanceSeed::new(9, k));
            let a = optimize_program(&inst, &p, &t, &opts).unwrap();
            let b = optimize_program(&inst, &p, &t, &opts).unwrap();
            assert!(a.fidelity >= a.nominal_fidelity);
            assert!(a.evaluations <= opts.max_evaluations);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn free_mask_is_respected() {
        let (p, t) = nominal_cnot_program();
        let free: Vec<_> = p.free_params()[..4].to_vec();
        let p = p.with_free_params(free.clone()).unwrap();
        let topo = p.region().host_topology().unwrap();
        let inst = DisorderModel::default().sample_mesh_instance(topo, InstanceSeed::new(1, 1));
        let out = optimize_program(&inst, &p, &t, &TuneOptions::default()).unwrap();
        for (addr, s) in out.program.settings() {
            if !free.iter().any(|f| f.addr == *addr) {
                assert_eq!(*s, p.settings()[addr]);
            }
        }
    }

    #[test]
    fn zero_variance_pre_fidelity_is_one() {
        let r = monte_carlo_gate_study(
            StudyGate::Cnot,
            &DisorderModel::zero_variance(),
            3,
            0,
            &TuneOptions::default(),
        )
        .unwrap();
        for rec in &r.records {
            assert!((rec.pre_fidelity - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn options_validation() {
        let bad = TuneOptions {
            n_starts: 10,
            max_evaluations: 5,
            ..Default::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("max_evaluations"));
    }
}
