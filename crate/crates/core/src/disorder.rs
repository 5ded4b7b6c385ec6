//! Wafer-scale fabrication model and seeded chip sampling.
//!
//! Every chip draws from its own ChaCha8 stream: the generator is seeded
//! with `master_seed` and switched to stream `instance_index`, so instance
//! `k` is the same no matter which thread samples it or in what order.
//! Within a chip, parameters are drawn in canonical order: layer-major, then
//! position, then `t1, t2, γ1, γ2, γ3, γ4`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{compose_layers, MeshTopology, MziAddress, MziPhysical, MziSettings, TransferMatrix};

/// Gaussian coupler transitivity and truncated-Gaussian shifter loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisorderModel {
    pub coupler_mean: f64,
    pub coupler_std: f64,
    pub loss_mean: f64,
    pub loss_std: f64,
}

impl Default for DisorderModel {
    fn default() -> Self {
        DisorderModel {
            coupler_mean: 0.5,
            coupler_std: 0.043,
            loss_mean: 0.0516,
            loss_std: 0.0284,
        }
    }
}

impl DisorderModel {
    /// Balanced couplers with fixed default loss: the model with both spreads set to zero.
    pub fn zero_variance() -> Self {
        DisorderModel {
            coupler_std: 0.0,
            loss_std: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("coupler_mean", self.coupler_mean, 0.0, 1.0),
            ("loss_mean", self.loss_mean, 0.0, 1.0),
        ];
        for (name, v, lo, hi) in checks {
            if !(v.is_finite() && (lo..=hi).contains(&v)) {
                return Err(Error::param(name, format!("{v} outside [{lo}, {hi}]")));
            }
        }
        if self.loss_mean >= 1.0 {
            return Err(Error::param("loss_mean", "must be below 1"));
        }
        for (name, v) in [("coupler_std", self.coupler_std), ("loss_std", self.loss_std)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(name, format!("{v} is negative")));
            }
        }
        Ok(())
    }

    pub fn sample_coupler_transitivity<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        truncated_normal(rng, self.coupler_mean, self.coupler_std, |t| (0.0..=1.0).contains(&t))
    }

    pub fn sample_shifter_loss<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        truncated_normal(rng, self.loss_mean, self.loss_std, |g| (0.0..1.0).contains(&g))
    }

    pub fn sample_mzi<R: Rng + ?Sized>(&self, rng: &mut R) -> MziPhysical {
        let t1 = self.sample_coupler_transitivity(rng);
        let t2 = self.sample_coupler_transitivity(rng);
        let mut gamma = [0.0; 4];
        for g in &mut gamma {
            *g = self.sample_shifter_loss(rng);
        }
        MziPhysical { t1, t2, gamma }
    }

    pub fn sample_mesh_instance(&self, topology: MeshTopology, seed: InstanceSeed) -> MeshInstance {
        let mut rng = seed.rng();
        let physical = topology.addresses().map(|_| self.sample_mzi(&mut rng)).collect();
        MeshInstance { topology, physical }
    }
}

/// Rejection-resampled normal: draws until `accept` holds.
///
/// A zero spread returns the mean without touching the generator.
fn truncated_normal<R, F>(rng: &mut R, mean: f64, std: f64, accept: F) -> f64
where
    R: Rng + ?Sized,
    F: Fn(f64) -> bool,
{
    if std == 0.0 {
        return mean;
    }
    let normal = Normal::new(mean, std).expect("validated spread");
    loop {
        let x = normal.sample(rng);
        if accept(x) {
            return x;
        }
    }
}

/// `(master_seed, instance_index)` pair fixing one sampled chip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSeed {
    pub master_seed: u64,
    pub instance_index: u64,
}

impl InstanceSeed {
    pub fn new(master_seed: u64, instance_index: u64) -> Self {
        InstanceSeed {
            master_seed,
            instance_index,
        }
    }

    /// Independent generator for this index.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.instance_index);
        rng
    }
}

/// A sampled chip: topology plus fabrication parameters for every MZI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshInstance {
    topology: MeshTopology,
    physical: Vec<MziPhysical>,
}

impl MeshInstance {
    pub fn ideal(topology: MeshTopology) -> Self {
        MeshInstance {
            topology,
            physical: vec![MziPhysical::ideal(); topology.n_mzis()],
        }
    }

    pub fn from_map(topology: MeshTopology, map: &BTreeMap<MziAddress, MziPhysical>) -> Result<Self> {
        let mut inst = MeshInstance::ideal(topology);
        for (addr, p) in map {
            let idx = topology.index(*addr)?;
            inst.physical[idx] = *p;
        }
        Ok(inst)
    }

    pub fn topology(&self) -> &MeshTopology {
        &self.topology
    }

    pub fn physical(&self, addr: MziAddress) -> Result<&MziPhysical> {
        Ok(&self.physical[self.topology.index(addr)?])
    }

    /// Parameters in canonical order.
    pub fn physical_params(&self) -> &[MziPhysical] {
        &self.physical
    }

    pub fn is_lossless(&self) -> bool {
        self.physical.iter().all(MziPhysical::is_lossless)
    }

    /// Transfer matrix with `settings` (unlisted MZIs in the bar state).
    pub fn transfer(&self, settings: &BTreeMap<MziAddress, MziSettings>) -> Result<TransferMatrix> {
        for addr in settings.keys() {
            self.topology.check(*addr)?;
        }
        Ok(self.transfer_with(|a| settings.get(&a).copied().unwrap_or_default()))
    }

    /// Transfer matrix with settings supplied per address.
    pub fn transfer_with<S: Fn(MziAddress) -> MziSettings>(&self, settings: S) -> TransferMatrix {
        self.transfer_layers(0..self.topology.n_layers(), settings)
    }

    pub fn transfer_layers<S: Fn(MziAddress) -> MziSettings>(
        &self,
        layers: std::ops::Range<usize>,
        settings: S,
    ) -> TransferMatrix {
        let topo = self.topology;
        compose_layers(&topo, layers, settings, |a| {
            self.physical[topo.index(a).expect("address from topology")]
        })
    }
}
