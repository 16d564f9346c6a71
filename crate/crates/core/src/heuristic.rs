//! Analytic power estimate for a core selection and the blended stage-2
//! objective built on it.
//!
//! The estimate is relative power:
//!
//! ```text
//! h(I) = sum_i a_i * (|I_i| + (|C_i| - |I_i|) * b) * (f_max_i * s_I)^2 + Ps
//! ```
//!
//! where `s_I` is the capacity factor of the selection, frequencies are in
//! GHz and `a_i` depends on the cluster's core type.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{capacity_factor, CoreSelection, CoreType, CpuTopology, SelectionMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicParams {
    pub a_efficient: f64,
    pub a_performance: f64,
    pub a_prime: f64,
    /// Idle factor applied to unselected cores.
    pub b: f64,
    pub static_power: f64,
    /// Blend weight of the heuristic term on affinity devices.
    pub alpha: f64,
    /// Blend weight on thread-count devices, where measured energy is not
    /// used by default.
    pub thread_alpha: f64,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        Self {
            a_efficient: 80.0,
            a_performance: 160.0,
            a_prime: 200.0,
            b: 0.7,
            static_power: 1000.0,
            alpha: 0.5,
            thread_alpha: 1.0,
        }
    }
}

impl HeuristicParams {
    pub fn validate(&self) -> Result<()> {
        let a = [self.a_efficient, self.a_performance, self.a_prime];
        if a.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("heuristic a_* factors must be positive"));
        }
        if !(self.a_efficient <= self.a_performance && self.a_performance <= self.a_prime) {
            return Err(Error::invalid(
                "heuristic factors must satisfy a_efficient <= a_performance <= a_prime",
            ));
        }
        if !(self.b > 0.0 && self.b <= 1.0) {
            return Err(Error::invalid("heuristic b must be in (0, 1]"));
        }
        if !(self.static_power.is_finite() && self.static_power >= 0.0) {
            return Err(Error::invalid("heuristic static_power must be >= 0"));
        }
        for (name, w) in [("alpha", self.alpha), ("thread_alpha", self.thread_alpha)] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid(format!(
                    "heuristic {name} must be in [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn factor(&self, core_type: CoreType) -> f64 {
        match core_type {
            CoreType::Prime => self.a_prime,
            CoreType::Performance => self.a_performance,
            CoreType::Efficient => self.a_efficient,
        }
    }

    /// Blend weight in effect for a device's selection mode.
    pub fn alpha_for(&self, mode: SelectionMode) -> f64 {
        match mode {
            SelectionMode::Affinity => self.alpha,
            SelectionMode::ThreadCount => self.thread_alpha,
        }
    }

    /// The same parameters with the heuristic term switched off.
    pub fn without_heuristic(&self) -> Self {
        Self {
            alpha: 0.0,
            thread_alpha: 0.0,
            ..*self
        }
    }
}

/// One profiled decode run, or the aggregate of several.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSample {
    pub tokens: u32,
    /// Tokens per second.
    pub speed_tps: f64,
    /// Seconds for the whole run.
    pub elapsed_s: f64,
    /// Reported energy in millijoules per token.
    pub energy_mj_per_tok: f64,
    /// Watts.
    pub avg_power_w: f64,
}

impl MeasurementSample {
    /// Reported energy of the whole run in joules.
    pub fn run_energy_j(&self) -> f64 {
        self.energy_mj_per_tok * f64::from(self.tokens) / 1000.0
    }
}

/// Governor-assigned frequency of `cluster_index` under `selection`:
/// `f_max * s_I`. Thread selections use `s_I = 1`.
pub fn assigned_frequency(
    cluster_index: usize,
    selection: &CoreSelection,
    topology: &CpuTopology,
) -> Result<f64> {
    let clusters = topology.clusters();
    let cluster = clusters.get(cluster_index).ok_or(Error::ClusterIndex {
        index: cluster_index,
        clusters: clusters.len(),
    })?;
    Ok(cluster.max_freq_ghz * capacity_factor(selection, topology)?)
}

pub fn power_heuristic(
    selection: &CoreSelection,
    topology: &CpuTopology,
    params: &HeuristicParams,
) -> Result<f64> {
    let s = capacity_factor(selection, topology)?;
    let counts = selection.counts(topology);
    let dynamic: f64 = topology
        .clusters()
        .iter()
        .zip(&counts)
        .map(|(c, &n)| {
            let active = f64::from(n) + f64::from(c.core_count - n) * params.b;
            let f = c.max_freq_ghz * s;
            params.factor(c.core_type) * active * f * f
        })
        .sum();
    Ok(dynamic + params.static_power)
}

/// Raw blended objective `(1 - alpha) * E + alpha * h * t` with `E` the run
/// energy in joules and `t` the run time in seconds.
pub fn heuristic_energy(
    sample: &MeasurementSample,
    selection: &CoreSelection,
    topology: &CpuTopology,
    params: &HeuristicParams,
) -> Result<f64> {
    let h = power_heuristic(selection, topology, params)?;
    let alpha = params.alpha_for(topology.selection_mode());
    Ok(blend(alpha, sample.run_energy_j(), h * sample.elapsed_s))
}

pub fn blend(alpha: f64, energy: f64, heuristic_time: f64) -> f64 {
    (1.0 - alpha) * energy + alpha * heuristic_time
}

/// Reference values that put measured energy and `h * t` on a common scale
/// before blending. Both are taken from one reference selection (the tree
/// root during a search), so that selection scores exactly 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveScale {
    pub energy_j: f64,
    pub heuristic_time: f64,
}

impl ObjectiveScale {
    pub const UNIT: ObjectiveScale = ObjectiveScale {
        energy_j: 1.0,
        heuristic_time: 1.0,
    };

    pub fn from_reference(energy_j: f64, heuristic_time: f64) -> Self {
        if energy_j > 0.0 && heuristic_time > 0.0 {
            Self {
                energy_j,
                heuristic_time,
            }
        } else {
            Self::UNIT
        }
    }

    pub fn blend(&self, alpha: f64, energy_j: f64, heuristic_time: f64) -> f64 {
        blend(
            alpha,
            energy_j / self.energy_j,
            heuristic_time / self.heuristic_time,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::parse_device_descriptor;

    fn mate40() -> CpuTopology {
        parse_device_descriptor(
            r#"{"device_name":"mate40pro","selection_mode":"affinity","clusters":[
                {"cores":1,"max_freq_ghz":3.13,"core_type":"prime"},
                {"cores":3,"max_freq_ghz":2.54,"core_type":"performance"},
                {"cores":4,"max_freq_ghz":2.05,"core_type":"efficient"}]}"#,
        )
        .unwrap()
    }

    // Hand evaluation, written out term by term.
    fn hand_h(counts: [f64; 3], s: f64) -> f64 {
        let a = [200.0, 160.0, 80.0];
        let c = [1.0, 3.0, 4.0];
        let f = [3.13, 2.54, 2.05];
        let b = 0.7;
        (0..3)
            .map(|i| a[i] * (counts[i] + (c[i] - counts[i]) * b) * (f[i] * s).powi(2))
            .sum::<f64>()
            + 1000.0
    }

    #[test]
    fn assigned_frequency_examples() {
        let t = mate40();
        let prime = CoreSelection::Affinity(vec![1, 0, 0]);
        assert!((assigned_frequency(0, &prime, &t).unwrap() - 3.13).abs() < 1e-12);
        let two_mid = CoreSelection::Affinity(vec![0, 2, 0]);
        assert!((assigned_frequency(1, &two_mid, &t).unwrap() - 2.061).abs() < 1e-3);
        assert!((assigned_frequency(0, &two_mid, &t).unwrap() - 2.540).abs() < 1e-3);
        assert!(matches!(
            assigned_frequency(3, &two_mid, &t),
            Err(Error::ClusterIndex {
                index: 3,
                clusters: 3
            })
        ));
    }

    #[test]
    fn power_heuristic_examples() {
        let t = mate40();
        let p = HeuristicParams::default();
        let prime = power_heuristic(&CoreSelection::Affinity(vec![1, 0, 0]), &t, &p).unwrap();
        assert!((prime - 6068.5).abs() < 0.1, "{prime}");
        assert!((prime - hand_h([1.0, 0.0, 0.0], 1.0)).abs() < 1e-9);

        let two_mid = power_heuristic(&CoreSelection::Affinity(vec![0, 2, 0]), &t, &p).unwrap();
        assert!((two_mid - 4358.7).abs() < 0.5, "{two_mid}");
        assert!((two_mid - hand_h([0.0, 2.0, 0.0], 2.54 / 3.13)).abs() < 1e-9);

        assert!(matches!(
            power_heuristic(&CoreSelection::Affinity(vec![0, 0, 0]), &t, &p),
            Err(Error::EmptySelection)
        ));
    }

    #[test]
    fn b_one_makes_counts_irrelevant() {
        let t = mate40();
        let p = HeuristicParams {
            b: 1.0,
            ..Default::default()
        };
        let x = power_heuristic(&CoreSelection::Affinity(vec![0, 1, 0]), &t, &p).unwrap();
        let y = power_heuristic(&CoreSelection::Affinity(vec![0, 3, 4]), &t, &p).unwrap();
        assert!((x - y).abs() < 1e-9);
    }

    #[test]
    fn blend_examples() {
        assert_eq!(blend(0.0, 300.0, 500.0), 300.0);
        assert_eq!(blend(1.0, 300.0, 500.0), 500.0);
        assert_eq!(blend(0.5, 300.0, 500.0), 400.0);
    }

    #[test]
    fn heuristic_energy_degenerate_weights() {
        let t = mate40();
        let sel = CoreSelection::Affinity(vec![0, 2, 0]);
        let sample = MeasurementSample {
            tokens: 50,
            speed_tps: 20.0,
            elapsed_s: 2.5,
            energy_mj_per_tok: 300.0,
            avg_power_w: 6.0,
        };
        let p0 = HeuristicParams {
            alpha: 0.0,
            ..Default::default()
        };
        assert_eq!(
            heuristic_energy(&sample, &sel, &t, &p0).unwrap(),
            sample.run_energy_j()
        );
        let p1 = HeuristicParams {
            alpha: 1.0,
            ..Default::default()
        };
        let h = power_heuristic(&sel, &t, &p1).unwrap();
        assert_eq!(heuristic_energy(&sample, &sel, &t, &p1).unwrap(), h * 2.5);
    }

    #[test]
    fn params_validation() {
        assert!(HeuristicParams::default().validate().is_ok());
        let bad = HeuristicParams {
            a_prime: 10.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad_b = HeuristicParams {
            b: 0.0,
            ..Default::default()
        };
        assert!(bad_b.validate().is_err());
        let bad_alpha = HeuristicParams {
            alpha: 1.5,
            ..Default::default()
        };
        assert!(bad_alpha.validate().is_err());
    }
}
