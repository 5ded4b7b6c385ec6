use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use qpp_core::disorder::{DisorderModel, InstanceSeed};
use qpp_core::experiments::{run_walk_ensemble, WalkConfig};
use qpp_core::fock::{permanent, two_photon_statistics};
use qpp_core::gates::nominal_cnot_program;
use qpp_core::mesh::{MeshTopology, MziSettings};
use qpp_core::tuner::{optimize_program, TuneOptions};
use qpp_core::{CMatrix, Complex64, FockState};

fn mesh_transfer(c: &mut Criterion) {
    let topology = MeshTopology::new(36, 17).unwrap();
    let chip = DisorderModel::default().sample_mesh_instance(topology, InstanceSeed::new(1, 0));
    let s = MziSettings::new(1.1, 0.3).unwrap();
    c.bench_function("transfer 36x17", |b| b.iter(|| chip.transfer_with(|_| black_box(s))));
    let u = chip.transfer_with(|_| s);
    let input = FockState::from_modes(36, &[16, 17]).unwrap();
    c.bench_function("two-photon statistics 36 modes", |b| {
        b.iter(|| two_photon_statistics(black_box(&u), &input).unwrap())
    });
}

fn permanents(c: &mut Criterion) {
    for n in [3usize, 6, 10] {
        let m = CMatrix::from_shape_fn((n, n), |(i, j)| Complex64::from_polar(1.0, (i * j + 1) as f64 * 0.37));
        c.bench_function(&format!("permanent {n}x{n}"), |b| b.iter(|| permanent(black_box(&m)).unwrap()));
    }
}

fn tuning(c: &mut Criterion) {
    let (program, target) = nominal_cnot_program();
    let topology = program.region().host_topology().unwrap();
    let chip = DisorderModel::default().sample_mesh_instance(topology, InstanceSeed::new(7, 0));
    let options = TuneOptions::default();
    let mut group = c.benchmark_group("tuner");
    group.sample_size(10);
    group.bench_function("optimize cnot", |b| {
        b.iter(|| optimize_program(&chip, &program, &target, &options).unwrap())
    });
    group.finish();
}

fn walk(c: &mut Criterion) {
    let config = WalkConfig {
        phi_max_tid: std::f64::consts::TAU,
        n_realizations: 100,
        ..WalkConfig::default()
    };
    let mut group = c.benchmark_group("walk");
    group.sample_size(10);
    group.bench_function("ensemble 100 realisations", |b| {
        b.iter(|| run_walk_ensemble(black_box(&config), 0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, mesh_transfer, permanents, tuning, walk);
criterion_main!(benches);
