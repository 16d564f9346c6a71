//! Simulated heterogeneous SoC.
//!
//! The device hides a ground-truth model that the search never sees:
//!
//! * governor: cluster frequencies either scale with the capacity factor of
//!   the selection or stay pinned at their maximum;
//! * speed: a saturating memory-bound curve `S_mem * U / (U + U_half)` over
//!   the compute throughput `U = sum_i |I_i| * ipc_i * f_i`;
//! * power: `P_static + sum_i kappa_i * (|I_i| + (|C_i| - |I_i|) * b) * f_i^gamma`.
//!
//! Measurements add multiplicative Gaussian noise (truncated at 3 sigma) to
//! time and energy, then truncate energy to whole battery-counter windows.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heuristic::MeasurementSample;
use crate::topology::{
    capacity_factor, CoreSelection, CoreType, CpuTopology, DeviceDescriptor, SelectionMode,
};

/// Environment variable naming a directory of preset files that takes
/// precedence over the bundled presets.
pub const PRESET_DIR_ENV: &str = "AECS_PRESET_DIR";

pub const PRESET_NAMES: [&str; 7] = [
    "mate40pro",
    "v30pro",
    "galaxya56",
    "meizu21",
    "xiaomi15pro",
    "iphone12",
    "iphone15",
];

pub const ANDROID_PRESETS: [&str; 5] =
    ["mate40pro", "v30pro", "galaxya56", "meizu21", "xiaomi15pro"];

fn bundled(name: &str) -> Option<&'static str> {
    Some(match name {
        "mate40pro" => include_str!("../presets/mate40pro.json"),
        "v30pro" => include_str!("../presets/v30pro.json"),
        "galaxya56" => include_str!("../presets/galaxya56.json"),
        "meizu21" => include_str!("../presets/meizu21.json"),
        "xiaomi15pro" => include_str!("../presets/xiaomi15pro.json"),
        "iphone12" => include_str!("../presets/iphone12.json"),
        "iphone15" => include_str!("../presets/iphone15.json"),
        _ => return None,
    })
}

/// A measurement stream. Each trial owns one.
pub type MeasurementRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GovernorKind {
    /// schedutil-like: every cluster runs at `f_max * s_I`.
    CapacityScaled,
    /// Every cluster stays at `f_max` regardless of the selection.
    PinnedMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerCoefficients {
    pub prime: f64,
    pub performance: f64,
    pub efficient: f64,
}

impl PowerCoefficients {
    pub fn get(&self, core_type: CoreType) -> f64 {
        match core_type {
            CoreType::Prime => self.prime,
            CoreType::Performance => self.performance,
            CoreType::Efficient => self.efficient,
        }
    }
}

/// Hidden ground truth of a simulated device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthModel {
    pub static_power_w: f64,
    /// Watts per GHz^gamma per core, by core type.
    pub kappa: PowerCoefficients,
    pub gamma: f64,
    pub idle_factor: f64,
    /// Bandwidth ceiling on decode speed, tokens/s.
    pub mem_ceiling_tps: f64,
    /// Throughput at which speed reaches half the ceiling.
    pub throughput_half: f64,
    /// Per-cluster throughput weight, same order as the topology.
    pub ipc: Vec<f64>,
}

impl GroundTruthModel {
    fn validate(&self, clusters: usize) -> Result<()> {
        let positive = [
            ("static_power_w", self.static_power_w),
            ("kappa.prime", self.kappa.prime),
            ("kappa.performance", self.kappa.performance),
            ("kappa.efficient", self.kappa.efficient),
            ("mem_ceiling_tps", self.mem_ceiling_tps),
            ("throughput_half", self.throughput_half),
            ("idle_factor", self.idle_factor),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("truth.{name} must be positive")));
            }
        }
        if !(2.0..=3.0).contains(&self.gamma) {
            return Err(Error::invalid("truth.gamma must be in [2, 3]"));
        }
        if self.idle_factor > 1.0 {
            return Err(Error::invalid("truth.idle_factor must be in (0, 1]"));
        }
        if self.ipc.len() != clusters {
            return Err(Error::invalid(format!(
                "truth.ipc has {} entries, topology has {clusters} clusters",
                self.ipc.len()
            )));
        }
        if self.ipc.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("truth.ipc entries must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Relative standard deviation of the multiplicative time and energy noise.
    pub rel_sigma: f64,
    /// Battery-counter update period in seconds; 0 disables quantization.
    pub counter_update_s: f64,
    /// Counter polling period in seconds; 0 reads exactly at run end.
    pub poll_interval_s: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            rel_sigma: 0.05,
            counter_update_s: 0.25,
            poll_interval_s: 0.05,
        }
    }
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel {
        rel_sigma: 0.0,
        counter_update_s: 0.0,
        poll_interval_s: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_sigma.is_finite() && self.rel_sigma >= 0.0) {
            return Err(Error::invalid("noise.rel_sigma must be >= 0"));
        }
        if !(self.counter_update_s >= 0.0 && self.poll_interval_s >= 0.0) {
            return Err(Error::invalid("noise periods must be >= 0"));
        }
        if self.counter_update_s > 0.0 && self.poll_interval_s > self.counter_update_s {
            return Err(Error::invalid(
                "noise.poll_interval_s must not exceed noise.counter_update_s",
            ));
        }
        Ok(())
    }
}

/// What the preset was calibrated to reproduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    /// Constrained energy optimum at the calibration tolerance.
    pub optimum: CoreSelection,
    /// Expected noiseless stage-1 result.
    pub stage1: CoreSelection,
    pub epsilon: f64,
    #[serde(default)]
    pub notes: String,
}

/// On-disk preset: descriptor plus hidden model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetFile {
    pub descriptor: DeviceDescriptor,
    pub governor: GovernorKind,
    pub truth: GroundTruthModel,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub seed: u64,
    pub calibration: Option<Calibration>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDevice {
    pub topology: CpuTopology,
    pub governor: GovernorKind,
    pub truth: GroundTruthModel,
    pub noise: NoiseModel,
    pub seed: u64,
    pub calibration: Option<Calibration>,
}

impl SimulatedDevice {
    pub fn new(
        topology: CpuTopology,
        governor: GovernorKind,
        truth: GroundTruthModel,
        noise: NoiseModel,
        seed: u64,
    ) -> Result<Self> {
        truth.validate(topology.cluster_count())?;
        noise.validate()?;
        Ok(Self {
            topology,
            governor,
            truth,
            noise,
            seed,
            calibration: None,
        })
    }

    pub fn from_preset_file(file: PresetFile) -> Result<Self> {
        // ipc is listed in descriptor order; carry it through the sort.
        let mut pairs: Vec<_> = file
            .descriptor
            .clusters
            .iter()
            .cloned()
            .zip(file.truth.ipc.iter().copied())
            .collect();
        if file.truth.ipc.len() != file.descriptor.clusters.len() {
            return Err(Error::invalid(format!(
                "truth.ipc has {} entries, descriptor has {} clusters",
                file.truth.ipc.len(),
                file.descriptor.clusters.len()
            )));
        }
        let fastest = pairs
            .iter()
            .map(|(c, _)| c.max_freq_ghz)
            .fold(f64::NEG_INFINITY, f64::max);
        let cap =
            |c: &crate::topology::ClusterDescriptor| c.capacity.unwrap_or(c.max_freq_ghz / fastest);
        pairs.sort_by(|(a, _), (b, _)| {
            cap(b)
                .total_cmp(&cap(a))
                .then(b.max_freq_ghz.total_cmp(&a.max_freq_ghz))
        });
        let descriptor = DeviceDescriptor {
            clusters: pairs.iter().map(|(c, _)| c.clone()).collect(),
            ..file.descriptor
        };
        let truth = GroundTruthModel {
            ipc: pairs.iter().map(|(_, ipc)| *ipc).collect(),
            ..file.truth
        };
        let topology = descriptor.into_topology()?;
        let mut device = Self::new(topology, file.governor, truth, file.noise, file.seed)?;
        if let Some(cal) = &file.calibration {
            cal.optimum.validate(&device.topology)?;
            cal.stage1.validate(&device.topology)?;
        }
        device.calibration = file.calibration;
        Ok(device)
    }

    pub fn from_preset_json(text: &str) -> Result<Self> {
        let file: PresetFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("preset file: {e}")))?;
        Self::from_preset_file(file)
    }

    pub fn load_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_preset_json(&text)
    }

    pub fn to_preset_file(&self) -> PresetFile {
        PresetFile {
            descriptor: self.topology.to_descriptor(),
            governor: self.governor,
            truth: self.truth.clone(),
            noise: self.noise,
            seed: self.seed,
            calibration: self.calibration.clone(),
        }
    }

    pub fn name(&self) -> &str {
        self.topology.device_name()
    }

    pub fn with_noise(&self, noise: NoiseModel) -> Self {
        Self {
            noise,
            ..self.clone()
        }
    }

    /// Copy with noise and counter quantization disabled.
    pub fn noiseless(&self) -> Self {
        self.with_noise(NoiseModel::NONE)
    }

    /// Independent measurement stream `index` derived from the device seed.
    pub fn stream(&self, index: u64) -> MeasurementRng {
        stream_from(self.seed, index)
    }

    /// Operating frequency of every cluster under `selection`.
    pub fn cluster_frequencies(&self, selection: &CoreSelection) -> Result<Vec<f64>> {
        let scale = match (self.governor, self.topology.selection_mode()) {
            (GovernorKind::PinnedMax, _) | (_, SelectionMode::ThreadCount) => {
                selection.validate(&self.topology)?;
                1.0
            }
            (GovernorKind::CapacityScaled, SelectionMode::Affinity) => {
                capacity_factor(selection, &self.topology)?
            }
        };
        Ok(self
            .topology
            .clusters()
            .iter()
            .map(|c| c.max_freq_ghz * scale)
            .collect())
    }

    pub fn throughput(&self, selection: &CoreSelection) -> Result<f64> {
        let freqs = self.cluster_frequencies(selection)?;
        let counts = selection.counts(&self.topology);
        Ok(counts
            .iter()
            .zip(&freqs)
            .zip(&self.truth.ipc)
            .map(|((&n, f), ipc)| f64::from(n) * ipc * f)
            .sum())
    }

    /// Noiseless decode speed in tokens per second.
    pub fn true_speed(&self, selection: &CoreSelection) -> Result<f64> {
        let u = self.throughput(selection)?;
        Ok(self.truth.mem_ceiling_tps * u / (u + self.truth.throughput_half))
    }

    /// Noiseless package power in watts.
    pub fn true_power(&self, selection: &CoreSelection) -> Result<f64> {
        let freqs = self.cluster_frequencies(selection)?;
        let counts = selection.counts(&self.topology);
        let t = &self.truth;
        let dynamic: f64 = self
            .topology
            .clusters()
            .iter()
            .zip(&counts)
            .zip(&freqs)
            .map(|((c, &n), f)| {
                let active = f64::from(n) + f64::from(c.core_count - n) * t.idle_factor;
                t.kappa.get(c.core_type) * active * f.powf(t.gamma)
            })
            .sum();
        Ok(t.static_power_w + dynamic)
    }

    /// Noiseless energy per token in millijoules.
    pub fn true_energy_mj_per_tok(&self, selection: &CoreSelection) -> Result<f64> {
        Ok(self.true_power(selection)? / self.true_speed(selection)? * 1000.0)
    }

    /// Profiles one decode run of `n_tokens` tokens.
    pub fn measure(
        &self,
        selection: &CoreSelection,
        n_tokens: u32,
        rng: &mut MeasurementRng,
    ) -> Result<MeasurementSample> {
        if n_tokens == 0 {
            return Err(Error::invalid("n_tokens must be >= 1"));
        }
        let speed = self.true_speed(selection)?;
        let power = self.true_power(selection)?;
        let sigma = self.noise.rel_sigma;
        let eta_t = truncated_normal(rng, sigma);
        let eta_e = truncated_normal(rng, sigma);
        let elapsed = f64::from(n_tokens) / speed * (1.0 + eta_t);
        let noisy_power = power * (1.0 + eta_e);
        let covered = self.counter_window(elapsed, rng);
        let energy_j = noisy_power * covered;
        Ok(sample_from(n_tokens, elapsed, energy_j))
    }

    /// Profiling mode with independent channels: time is held at its
    /// noiseless value and only the power channel is perturbed, with no
    /// counter quantization.
    pub fn measure_power_channel(
        &self,
        selection: &CoreSelection,
        n_tokens: u32,
        rng: &mut MeasurementRng,
    ) -> Result<MeasurementSample> {
        if n_tokens == 0 {
            return Err(Error::invalid("n_tokens must be >= 1"));
        }
        let elapsed = f64::from(n_tokens) / self.true_speed(selection)?;
        let power =
            self.true_power(selection)? * (1.0 + truncated_normal(rng, self.noise.rel_sigma));
        Ok(sample_from(n_tokens, elapsed, power * elapsed))
    }

    /// Length of the run that the energy counter has published by the first
    /// poll after the run ends. The counter only advances at whole update
    /// boundaries, so the tail of the run after the last published boundary
    /// is lost.
    fn counter_window(&self, elapsed: f64, rng: &mut MeasurementRng) -> f64 {
        let period = self.noise.counter_update_s;
        if period <= 0.0 {
            return elapsed;
        }
        let start = rng.random::<f64>() * period;
        let end = start + elapsed;
        let poll = self.noise.poll_interval_s;
        let read_at = if poll > 0.0 {
            let phase = rng.random::<f64>() * poll;
            phase + ((end - phase) / poll).ceil() * poll
        } else {
            end
        };
        let published = (read_at / period).floor() * period;
        (published.min(end) - start).max(0.0)
    }
}

/// Measurement stream `index` of `seed`; streams of one seed are independent.
pub fn stream_from(seed: u64, index: u64) -> MeasurementRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn sample_from(n_tokens: u32, elapsed: f64, energy_j: f64) -> MeasurementSample {
    MeasurementSample {
        tokens: n_tokens,
        speed_tps: f64::from(n_tokens) / elapsed,
        elapsed_s: elapsed,
        energy_mj_per_tok: energy_j * 1000.0 / f64::from(n_tokens),
        avg_power_w: energy_j / elapsed,
    }
}

/// `sigma * z` with `z` standard normal conditioned on `|z| <= 3`.
fn truncated_normal(rng: &mut MeasurementRng, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 3.0 {
            return sigma * z;
        }
    }
}

fn preset_dir() -> Option<PathBuf> {
    env::var_os(PRESET_DIR_ENV).map(PathBuf::from)
}

/// Loads a preset by name, from `$AECS_PRESET_DIR/<name>.json` when that
/// file exists, otherwise from the bundled data.
pub fn load_preset(name: &str) -> Result<SimulatedDevice> {
    if let Some(dir) = preset_dir() {
        let path = dir.join(format!("{name}.json"));
        if path.is_file() {
            return SimulatedDevice::load_file(&path);
        }
    }
    match bundled(name) {
        Some(text) => SimulatedDevice::from_preset_json(text),
        None => Err(Error::UnknownPreset {
            name: name.to_string(),
            available: PRESET_NAMES.join(", "),
        }),
    }
}

/// Loads `spec` as a preset name, or as a path when it names a file.
pub fn load_device(spec: &str) -> Result<SimulatedDevice> {
    let path = Path::new(spec);
    if path.is_file() {
        SimulatedDevice::load_file(path)
    } else {
        load_preset(spec)
    }
}
