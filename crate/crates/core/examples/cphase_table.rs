//! Regenerate `assets/cphase_programs.json`.
//!
//! Synthesises CPHASE(φ) on an ideal mesh for every nonzero multiple of 2π/6
//! and 2π/64, keeping the highest-success program per phase.
//!
//! cargo run --release -p qpp-core --example cphase_table -- crates/core/assets/cphase_programs.json

use std::f64::consts::TAU;

use qpp_core::gates::{settings_table, synthesize_cphase, CphaseAsset, SynthesisOptions};

fn main() {
    let path = std::env::args().nth(1).expect("usage: cphase_table <output.json>");
    let mut phases: Vec<f64> = (1..6).map(|k| TAU * k as f64 / 6.0).collect();
    for k in 1..64 {
        let p = TAU * k as f64 / 64.0;
        if phases.iter().all(|q| (q - p).abs() > 1e-12) {
            phases.push(p);
        }
    }
    phases.sort_by(f64::total_cmp);
    let options = SynthesisOptions {
        random_starts: 96,
        exhaustive: true,
    };
    let mut table = Vec::new();
    for phase in phases {
        let (program, success) = synthesize_cphase(phase, &[], &options).expect("synthesis");
        eprintln!("phase {phase:.6}: success {success:.6}");
        table.push(CphaseAsset {
            phase,
            success,
            settings: settings_table(&program),
        });
    }
    let json = serde_json::to_string_pretty(&table).expect("serialise");
    std::fs::write(&path, json + "\n").expect("write table");
}
