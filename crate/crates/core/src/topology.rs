//! CPU topology and core-selection data model.
//!
//! A device is a list of clusters ordered from the largest scheduler
//! capacity to the smallest. Cores within a cluster are interchangeable, so
//! an affinity selection is a per-cluster count vector rather than a set of
//! core ids. Devices without affinity control (thread-count mode) select a
//! number of threads instead.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoreType {
    Prime,
    Performance,
    Efficient,
}

impl CoreType {
    pub fn as_str(self) -> &'static str {
        match self {
            CoreType::Prime => "prime",
            CoreType::Performance => "performance",
            CoreType::Efficient => "efficient",
        }
    }
}

impl fmt::Display for CoreType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the search space is expressed on a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Threads can be bound to specific cores.
    Affinity,
    /// Only the thread count can be chosen.
    ThreadCount,
}

/// A group of identical cores sharing one frequency domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub core_count: u32,
    /// Maximum frequency in GHz.
    pub max_freq_ghz: f64,
    /// Dimensionless scheduler capacity. Only ratios between clusters matter.
    pub capacity: f64,
    pub core_type: CoreType,
}

impl Cluster {
    fn validate(&self, index: usize) -> Result<()> {
        if self.core_count == 0 {
            return Err(Error::invalid(format!(
                "clusters[{index}].cores must be >= 1"
            )));
        }
        if !(self.max_freq_ghz.is_finite() && self.max_freq_ghz > 0.0) {
            return Err(Error::invalid(format!(
                "clusters[{index}].max_freq_ghz must be a positive number"
            )));
        }
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return Err(Error::invalid(format!(
                "clusters[{index}].capacity must be a positive number"
            )));
        }
        Ok(())
    }
}

/// Validated device topology with clusters sorted big to small.
#[derive(Debug, Clone, PartialEq)]
pub struct CpuTopology {
    device_name: String,
    clusters: Vec<Cluster>,
    selection_mode: SelectionMode,
}

impl CpuTopology {
    /// Validates the clusters and canonicalizes their order (descending
    /// capacity, ties broken by descending max frequency).
    pub fn new(
        device_name: impl Into<String>,
        mut clusters: Vec<Cluster>,
        selection_mode: SelectionMode,
    ) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::invalid("topology must have at least one cluster"));
        }
        for (i, c) in clusters.iter().enumerate() {
            c.validate(i)?;
        }
        clusters.sort_by(|a, b| {
            b.capacity
                .total_cmp(&a.capacity)
                .then(b.max_freq_ghz.total_cmp(&a.max_freq_ghz))
        });
        Ok(Self {
            device_name: device_name.into(),
            clusters,
            selection_mode,
        })
    }

    pub fn device_name(&self) -> &str {
        &self.device_name
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn selection_mode(&self) -> SelectionMode {
        self.selection_mode
    }

    pub fn total_cores(&self) -> u32 {
        self.clusters.iter().map(|c| c.core_count).sum()
    }

    /// Number of selections in the full search space.
    pub fn search_space_size(&self) -> usize {
        match self.selection_mode {
            SelectionMode::Affinity => {
                self.clusters
                    .iter()
                    .map(|c| c.core_count as usize + 1)
                    .product::<usize>()
                    - 1
            }
            SelectionMode::ThreadCount => self.total_cores() as usize,
        }
    }

    /// Per-cluster counts when `threads` threads are packed onto the biggest
    /// cores first.
    pub fn packed_counts(&self, threads: u32) -> Vec<u32> {
        let mut left = threads;
        self.clusters
            .iter()
            .map(|c| {
                let take = left.min(c.core_count);
                left -= take;
                take
            })
            .collect()
    }

    pub fn to_descriptor(&self) -> DeviceDescriptor {
        DeviceDescriptor {
            device_name: self.device_name.clone(),
            selection_mode: self.selection_mode,
            clusters: self
                .clusters
                .iter()
                .map(|c| ClusterDescriptor {
                    cores: c.core_count,
                    max_freq_ghz: c.max_freq_ghz,
                    capacity: Some(c.capacity),
                    core_type: c.core_type,
                })
                .collect(),
        }
    }

    pub fn to_descriptor_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_descriptor()).expect("descriptor serializes")
    }
}

/// Wire form of a device descriptor document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceDescriptor {
    pub device_name: String,
    pub selection_mode: SelectionMode,
    pub clusters: Vec<ClusterDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterDescriptor {
    pub cores: u32,
    pub max_freq_ghz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
    pub core_type: CoreType,
}

impl DeviceDescriptor {
    /// Builds the topology. Missing capacities default to
    /// `max_freq / max(max_freq)` across the descriptor.
    pub fn into_topology(self) -> Result<CpuTopology> {
        if self.clusters.is_empty() {
            return Err(Error::invalid("descriptor has zero clusters"));
        }
        let fastest = self
            .clusters
            .iter()
            .map(|c| c.max_freq_ghz)
            .fold(f64::NEG_INFINITY, f64::max);
        let clusters = self
            .clusters
            .into_iter()
            .map(|c| Cluster {
                core_count: c.cores,
                max_freq_ghz: c.max_freq_ghz,
                capacity: c.capacity.unwrap_or(c.max_freq_ghz / fastest),
                core_type: c.core_type,
            })
            .collect();
        CpuTopology::new(self.device_name, clusters, self.selection_mode)
    }
}

pub fn parse_device_descriptor(text: &str) -> Result<CpuTopology> {
    let descriptor: DeviceDescriptor =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("device descriptor: {e}")))?;
    descriptor.into_topology()
}

fn read_trimmed(path: &Path) -> Result<Option<String>> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(Some(s.trim().to_string())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::Io {
            path: path.display().to_string(),
            source: e,
        }),
    }
}

fn parse_number<T: FromStr>(path: &Path, text: &str) -> Result<T> {
    text.parse::<T>().map_err(|_| {
        Error::Parse(format!(
            "{}: expected a number, got {text:?}",
            path.display()
        ))
    })
}

/// Parses a sysfs-style snapshot of `cpu<N>/...` files into a topology.
///
/// Cores sharing a `related_cpus` set form one cluster. Core types are
/// assigned by capacity rank: the biggest cluster is prime, the smallest is
/// efficient, the rest are performance. A one-cluster device is prime.
pub fn parse_sysfs_snapshot(root: &Path) -> Result<CpuTopology> {
    let entries = fs::read_dir(root).map_err(|e| Error::Io {
        path: root.display().to_string(),
        source: e,
    })?;
    let mut cpu_ids = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::Io {
            path: root.display().to_string(),
            source: e,
        })?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(id) = name.strip_prefix("cpu").and_then(|s| s.parse::<u32>().ok()) {
            if entry.path().is_dir() {
                cpu_ids.insert(id);
            }
        }
    }
    if cpu_ids.is_empty() {
        return Err(Error::invalid(format!(
            "{}: no cpu<N> directories found",
            root.display()
        )));
    }

    struct CpuInfo {
        max_khz: u64,
        capacity: Option<f64>,
        related: BTreeSet<u32>,
    }

    let mut cpus = BTreeMap::new();
    for &id in &cpu_ids {
        let dir = root.join(format!("cpu{id}"));
        let freq_path = dir.join("cpufreq/cpuinfo_max_freq");
        let max_khz: u64 = match read_trimmed(&freq_path)? {
            Some(s) => parse_number(&freq_path, &s)?,
            None => return Err(Error::invalid(format!("missing {}", freq_path.display()))),
        };
        if max_khz == 0 {
            return Err(Error::invalid(format!(
                "{}: zero frequency",
                freq_path.display()
            )));
        }
        let cap_path = dir.join("cpu_capacity");
        let capacity = match read_trimmed(&cap_path)? {
            Some(s) => Some(parse_number::<f64>(&cap_path, &s)?),
            None => None,
        };
        let rel_path = dir.join("cpufreq/related_cpus");
        let related = match read_trimmed(&rel_path)? {
            Some(s) => s
                .split_whitespace()
                .map(|t| parse_number::<u32>(&rel_path, t))
                .collect::<Result<BTreeSet<u32>>>()?,
            None => return Err(Error::invalid(format!("missing {}", rel_path.display()))),
        };
        cpus.insert(
            id,
            CpuInfo {
                max_khz,
                capacity,
                related,
            },
        );
    }

    // Every group must reference existing cpus, contain its owner, and be
    // identical for all of its members.
    let mut groups: Vec<BTreeSet<u32>> = Vec::new();
    for (&id, info) in &cpus {
        if !info.related.contains(&id) {
            return Err(Error::invalid(format!(
                "cpu{id}: related_cpus does not include cpu{id}"
            )));
        }
        for member in &info.related {
            let Some(other) = cpus.get(member) else {
                return Err(Error::invalid(format!(
                    "cpu{id}: related_cpus lists cpu{member}, which is not in the snapshot"
                )));
            };
            if other.related != info.related {
                return Err(Error::invalid(format!(
                    "cpu{id} and cpu{member} disagree on related_cpus"
                )));
            }
            if other.max_khz != info.max_khz {
                return Err(Error::invalid(format!(
                    "cpu{id} and cpu{member} share a frequency domain but differ in max frequency"
                )));
            }
        }
        if !groups.contains(&info.related) {
            groups.push(info.related.clone());
        }
    }

    let all_have_capacity = cpus.values().all(|c| c.capacity.is_some());
    let fastest_khz = cpus.values().map(|c| c.max_khz).max().unwrap_or(1) as f64;
    let mut clusters = Vec::with_capacity(groups.len());
    for group in &groups {
        let first = &cpus[group.iter().next().expect("group non-empty")];
        let capacity = if all_have_capacity {
            // Take the group's largest reported capacity.
            group
                .iter()
                .filter_map(|id| cpus[id].capacity)
                .fold(f64::NEG_INFINITY, f64::max)
        } else {
            first.max_khz as f64 / fastest_khz
        };
        clusters.push(Cluster {
            core_count: group.len() as u32,
            max_freq_ghz: first.max_khz as f64 / 1.0e6,
            capacity,
            core_type: CoreType::Prime,
        });
    }

    let name = root
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("sysfs")
        .to_string();
    let mut topology = CpuTopology::new(name, clusters, SelectionMode::Affinity)?;
    let n = topology.clusters.len();
    for (i, c) in topology.clusters.iter_mut().enumerate() {
        c.core_type = if i == 0 {
            CoreType::Prime
        } else if i == n - 1 {
            CoreType::Efficient
        } else {
            CoreType::Performance
        };
    }
    Ok(topology)
}

/// A core selection: per-cluster counts under affinity, or a thread count.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoreSelection {
    Affinity(Vec<u32>),
    Threads(u32),
}

impl CoreSelection {
    pub fn validate(&self, topology: &CpuTopology) -> Result<()> {
        match (self, topology.selection_mode()) {
            (CoreSelection::Affinity(counts), SelectionMode::Affinity) => {
                if counts.len() != topology.cluster_count() {
                    return Err(Error::invalid(format!(
                        "selection {self} has {} entries, topology has {} clusters",
                        counts.len(),
                        topology.cluster_count()
                    )));
                }
                for (i, (&n, c)) in counts.iter().zip(topology.clusters()).enumerate() {
                    if n > c.core_count {
                        return Err(Error::invalid(format!(
                            "selection {self}: cluster {i} has only {} cores",
                            c.core_count
                        )));
                    }
                }
                if counts.iter().all(|&n| n == 0) {
                    return Err(Error::EmptySelection);
                }
                Ok(())
            }
            (CoreSelection::Threads(t), SelectionMode::ThreadCount) => {
                if *t == 0 {
                    return Err(Error::EmptySelection);
                }
                if *t > topology.total_cores() {
                    return Err(Error::invalid(format!(
                        "{t} threads exceeds {} cores",
                        topology.total_cores()
                    )));
                }
                Ok(())
            }
            _ => Err(Error::invalid(format!(
                "selection {self} does not match the device's selection mode"
            ))),
        }
    }

    /// Per-cluster active-core counts. Thread selections are packed onto the
    /// biggest cores first.
    pub fn counts(&self, topology: &CpuTopology) -> Vec<u32> {
        match self {
            CoreSelection::Affinity(c) => c.clone(),
            CoreSelection::Threads(t) => topology.packed_counts(*t),
        }
    }

    pub fn total_cores(&self) -> u32 {
        match self {
            CoreSelection::Affinity(c) => c.iter().sum(),
            CoreSelection::Threads(t) => *t,
        }
    }

    /// Parses `"1,2,0"` as an affinity selection or `"3"` / `"3t"` as a thread
    /// count, depending on the topology's mode.
    pub fn parse_for(text: &str, topology: &CpuTopology) -> Result<Self> {
        let text = text.trim().trim_start_matches('(').trim_end_matches(')');
        let sel = match topology.selection_mode() {
            SelectionMode::Affinity => {
                let counts = text
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<u32>()
                            .map_err(|_| Error::Parse(format!("bad core count {t:?} in {text:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                CoreSelection::Affinity(counts)
            }
            SelectionMode::ThreadCount => {
                let t = text.trim_end_matches('t').trim();
                CoreSelection::Threads(
                    t.parse()
                        .map_err(|_| Error::Parse(format!("bad thread count {text:?}")))?,
                )
            }
        };
        sel.validate(topology)?;
        Ok(sel)
    }
}

impl fmt::Display for CoreSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreSelection::Affinity(c) => {
                f.write_str("(")?;
                for (i, n) in c.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{n}")?;
                }
                f.write_str(")")
            }
            CoreSelection::Threads(t) => write!(f, "{t}t"),
        }
    }
}

/// Every selection in the search space, in lexicographic order of counts.
pub fn enumerate_selections(topology: &CpuTopology) -> Vec<CoreSelection> {
    match topology.selection_mode() {
        SelectionMode::ThreadCount => (1..=topology.total_cores())
            .map(CoreSelection::Threads)
            .collect(),
        SelectionMode::Affinity => {
            let limits: Vec<u32> = topology.clusters().iter().map(|c| c.core_count).collect();
            let mut out = Vec::with_capacity(topology.search_space_size());
            let mut counts = vec![0u32; limits.len()];
            loop {
                // odometer increment, last cluster fastest
                let mut i = limits.len();
                loop {
                    if i == 0 {
                        return out;
                    }
                    i -= 1;
                    if counts[i] < limits[i] {
                        counts[i] += 1;
                        break;
                    }
                    counts[i] = 0;
                }
                out.push(CoreSelection::Affinity(counts.clone()));
            }
        }
    }
}

/// Capacity of the biggest selected cluster over the device's biggest
/// capacity. Thread selections always include cluster 0, so they give 1.
pub fn capacity_factor(selection: &CoreSelection, topology: &CpuTopology) -> Result<f64> {
    selection.validate(topology)?;
    let counts = selection.counts(topology);
    let biggest = counts
        .iter()
        .position(|&n| n > 0)
        .ok_or(Error::EmptySelection)?;
    let clusters = topology.clusters();
    Ok(clusters[biggest].capacity / clusters[0].capacity)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mate40() -> CpuTopology {
        parse_device_descriptor(
            r#"{"device_name":"mate40pro","selection_mode":"affinity","clusters":[
                {"cores":1,"max_freq_ghz":3.13,"core_type":"prime"},
                {"cores":3,"max_freq_ghz":2.54,"core_type":"performance"},
                {"cores":4,"max_freq_ghz":2.05,"core_type":"efficient"}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn descriptor_mate40() {
        let t = mate40();
        assert_eq!(t.cluster_count(), 3);
        assert_eq!(t.total_cores(), 8);
        assert_eq!(t.clusters()[0].core_type, CoreType::Prime);
        assert!((t.clusters()[1].capacity - 2.54 / 3.13).abs() < 1e-12);
    }

    #[test]
    fn descriptor_single_cluster() {
        let t = parse_device_descriptor(
            r#"{"device_name":"h","selection_mode":"affinity","clusters":[
                {"cores":4,"max_freq_ghz":2.0,"core_type":"performance"}]}"#,
        )
        .unwrap();
        assert_eq!(t.cluster_count(), 1);
        assert_eq!(t.total_cores(), 4);
    }

    #[test]
    fn descriptor_is_reordered_big_to_small() {
        let t = parse_device_descriptor(
            r#"{"device_name":"x","selection_mode":"affinity","clusters":[
                {"cores":4,"max_freq_ghz":2.05,"core_type":"efficient"},
                {"cores":3,"max_freq_ghz":2.54,"core_type":"performance"},
                {"cores":1,"max_freq_ghz":3.13,"core_type":"prime"}]}"#,
        )
        .unwrap();
        let freqs: Vec<f64> = t.clusters().iter().map(|c| c.max_freq_ghz).collect();
        assert_eq!(freqs, vec![3.13, 2.54, 2.05]);
        assert_eq!(t.clusters(), mate40().clusters());
    }

    #[test]
    fn descriptor_errors() {
        let zero = parse_device_descriptor(
            r#"{"device_name":"x","selection_mode":"affinity","clusters":[]}"#,
        );
        assert!(matches!(zero, Err(Error::Invalid(_))));

        let bad = parse_device_descriptor(
            r#"{"device_name":"x","selection_mode":"affinity","clusters":[
                {"cores":"four","max_freq_ghz":2.0,"core_type":"prime"}]}"#,
        );
        match bad {
            Err(Error::Parse(msg)) => {
                assert!(msg.contains("cores") || msg.contains("four"), "{msg}")
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        let unknown = parse_device_descriptor(
            r#"{"device_name":"x","selection_mode":"affinity","clusters":[
                {"cores":1,"max_freq_ghz":2.0,"core_type":"turbo"}]}"#,
        );
        assert!(matches!(unknown, Err(Error::Parse(_))));

        let zero_cores = parse_device_descriptor(
            r#"{"device_name":"x","selection_mode":"affinity","clusters":[
                {"cores":0,"max_freq_ghz":2.0,"core_type":"prime"}]}"#,
        );
        assert!(matches!(zero_cores, Err(Error::Invalid(_))));
    }

    #[test]
    fn enumerate_small_cases() {
        let t = mate40();
        let all = enumerate_selections(&t);
        assert_eq!(all.len(), 39);
        assert_eq!(all.len(), t.search_space_size());
        assert!(all.iter().all(|s| s.validate(&t).is_ok()));

        let phone = CpuTopology::new(
            "iphone12",
            vec![
                Cluster {
                    core_count: 2,
                    max_freq_ghz: 3.0,
                    capacity: 1.0,
                    core_type: CoreType::Prime,
                },
                Cluster {
                    core_count: 4,
                    max_freq_ghz: 1.8,
                    capacity: 0.6,
                    core_type: CoreType::Efficient,
                },
            ],
            SelectionMode::ThreadCount,
        )
        .unwrap();
        let threads = enumerate_selections(&phone);
        assert_eq!(
            threads,
            (1..=6).map(CoreSelection::Threads).collect::<Vec<_>>()
        );
    }

    #[test]
    fn capacity_factor_examples() {
        let t = mate40();
        let prime = CoreSelection::Affinity(vec![1, 0, 0]);
        assert_eq!(capacity_factor(&prime, &t).unwrap(), 1.0);
        let two_mid = CoreSelection::Affinity(vec![0, 2, 0]);
        assert!((capacity_factor(&two_mid, &t).unwrap() - 0.8115).abs() < 1e-4);
        let empty = CoreSelection::Affinity(vec![0, 0, 0]);
        assert!(matches!(
            capacity_factor(&empty, &t),
            Err(Error::EmptySelection)
        ));
    }

    #[test]
    fn packed_counts_fill_big_first() {
        let t = mate40();
        assert_eq!(t.packed_counts(1), vec![1, 0, 0]);
        assert_eq!(t.packed_counts(5), vec![1, 3, 1]);
        assert_eq!(t.packed_counts(8), vec![1, 3, 4]);
    }

    #[test]
    fn selection_parse_and_display() {
        let t = mate40();
        let s = CoreSelection::parse_for("1,2,0", &t).unwrap();
        assert_eq!(s, CoreSelection::Affinity(vec![1, 2, 0]));
        assert_eq!(s.to_string(), "(1,2,0)");
        assert_eq!(CoreSelection::parse_for("(1,2,0)", &t).unwrap(), s);
        assert!(CoreSelection::parse_for("2,0,0", &t).is_err());
        assert!(CoreSelection::parse_for("1,2", &t).is_err());
    }
}
