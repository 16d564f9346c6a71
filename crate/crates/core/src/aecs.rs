//! Two-stage core-selection search and the exhaustive oracle.
//!
//! Stage 1 greedily adds cores from big to small until decode speed stops
//! improving. Its result roots a small candidate tree; stage 2 profiles every
//! candidate, drops those slower than `(1 - epsilon)` of the stage-1 speed,
//! and returns the one minimizing the blend of measured energy and the power
//! heuristic.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heuristic::{power_heuristic, HeuristicParams, MeasurementSample, ObjectiveScale};
use crate::simdevice::{MeasurementRng, SimulatedDevice};
use crate::topology::{enumerate_selections, CoreSelection, CoreType, CpuTopology, SelectionMode};

/// Anything that can run a decode window on a core selection and profile it.
pub trait MeasurementProvider {
    fn measure(&mut self, selection: &CoreSelection, n_tokens: u32) -> Result<MeasurementSample>;
}

/// Measurement provider backed by a simulated device and one RNG stream.
pub struct SimulatedProvider<'a> {
    device: &'a SimulatedDevice,
    rng: MeasurementRng,
}

impl<'a> SimulatedProvider<'a> {
    pub fn new(device: &'a SimulatedDevice, rng: MeasurementRng) -> Self {
        Self { device, rng }
    }
}

impl MeasurementProvider for SimulatedProvider<'_> {
    fn measure(&mut self, selection: &CoreSelection, n_tokens: u32) -> Result<MeasurementSample> {
        self.device.measure(selection, n_tokens, &mut self.rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Tolerated slowdown relative to the fastest selection.
    pub epsilon: f64,
    pub tokens_per_measurement: u32,
    /// Runs profiled per candidate.
    pub repeats: u32,
    /// Relative speedup needed for stage 1 to keep adding cores.
    pub stage1_min_speedup: f64,
    pub include_efficient: bool,
    pub max_tree_depth: u32,
    pub aggregation: Aggregation,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.08,
            tokens_per_measurement: 50,
            repeats: 50,
            stage1_min_speedup: 0.02,
            include_efficient: false,
            max_tree_depth: 2,
            aggregation: Aggregation::Mean,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::invalid("search.epsilon must be in [0, 1)"));
        }
        if self.repeats == 0 {
            return Err(Error::invalid("search.repeats must be >= 1"));
        }
        if self.tokens_per_measurement == 0 {
            return Err(Error::invalid("search.tokens_per_measurement must be >= 1"));
        }
        if !(self.stage1_min_speedup.is_finite() && self.stage1_min_speedup >= 0.0) {
            return Err(Error::invalid("search.stage1_min_speedup must be >= 0"));
        }
        Ok(())
    }
}

/// One profiled run, as exported to `trace.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub selection: CoreSelection,
    pub repeat_index: u32,
    pub speed_tps: f64,
    pub energy_mj_per_tok: f64,
    pub elapsed_s: f64,
}

/// Wraps a provider with repeat aggregation, a per-run trace and a cache so
/// a selection is profiled at most once per search.
pub struct Profiler<P> {
    provider: P,
    config: SearchConfig,
    cache: BTreeMap<CoreSelection, MeasurementSample>,
    trace: Vec<TraceRecord>,
}

impl<P: MeasurementProvider> Profiler<P> {
    pub fn new(provider: P, config: SearchConfig) -> Self {
        Self {
            provider,
            config,
            cache: BTreeMap::new(),
            trace: Vec::new(),
        }
    }

    /// Aggregated sample for `selection` over `repeats` runs.
    pub fn profile(&mut self, selection: &CoreSelection) -> Result<MeasurementSample> {
        if let Some(s) = self.cache.get(selection) {
            return Ok(*s);
        }
        let n = self.config.tokens_per_measurement;
        let mut runs = Vec::with_capacity(self.config.repeats as usize);
        for repeat_index in 0..self.config.repeats {
            let s = self.provider.measure(selection, n)?;
            self.trace.push(TraceRecord {
                selection: selection.clone(),
                repeat_index,
                speed_tps: s.speed_tps,
                energy_mj_per_tok: s.energy_mj_per_tok,
                elapsed_s: s.elapsed_s,
            });
            runs.push(s);
        }
        let agg = aggregate(&runs, self.config.aggregation);
        self.cache.insert(selection.clone(), agg);
        Ok(agg)
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<TraceRecord> {
        self.trace
    }

    /// Distinct selections profiled so far.
    pub fn plans_measured(&self) -> usize {
        self.cache.len()
    }
}

fn aggregate(runs: &[MeasurementSample], how: Aggregation) -> MeasurementSample {
    let pick = |f: fn(&MeasurementSample) -> f64| -> f64 {
        match how {
            Aggregation::Mean => runs.iter().map(f).sum::<f64>() / runs.len() as f64,
            Aggregation::Median => {
                let mut v: Vec<f64> = runs.iter().map(f).collect();
                v.sort_by(f64::total_cmp);
                let m = v.len() / 2;
                if v.len() % 2 == 1 {
                    v[m]
                } else {
                    0.5 * (v[m - 1] + v[m])
                }
            }
        }
    };
    MeasurementSample {
        tokens: runs[0].tokens,
        speed_tps: pick(|s| s.speed_tps),
        elapsed_s: pick(|s| s.elapsed_s),
        energy_mj_per_tok: pick(|s| s.energy_mj_per_tok),
        avg_power_w: pick(|s| s.avg_power_w),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Step {
    pub selection: CoreSelection,
    pub speed_tps: f64,
    /// Whether the step became the new incumbent.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Outcome {
    pub selection: CoreSelection,
    pub speed_tps: f64,
    pub steps: Vec<Stage1Step>,
}

impl Stage1Outcome {
    /// Accepted incumbents in visiting order.
    pub fn path(&self) -> Vec<CoreSelection> {
        self.steps
            .iter()
            .filter(|s| s.accepted)
            .map(|s| s.selection.clone())
            .collect()
    }
}

fn stage1_next(current: &CoreSelection, topology: &CpuTopology) -> Option<CoreSelection> {
    match current {
        CoreSelection::Threads(t) => {
            (*t < topology.total_cores()).then(|| CoreSelection::Threads(t + 1))
        }
        CoreSelection::Affinity(counts) => {
            let i = topology
                .clusters()
                .iter()
                .zip(counts)
                .position(|(c, &n)| c.core_type != CoreType::Efficient && n < c.core_count)?;
            let mut next = counts.clone();
            next[i] += 1;
            Some(CoreSelection::Affinity(next))
        }
    }
}

/// Greedy search for the fastest selection. Starts from one core of the
/// biggest cluster (or one thread) and keeps adding the next biggest
/// non-efficient core while each addition speeds decoding up by at least
/// `stage1_min_speedup`.
pub fn stage1_fastest<P: MeasurementProvider>(
    profiler: &mut Profiler<P>,
    topology: &CpuTopology,
    config: &SearchConfig,
) -> Result<Stage1Outcome> {
    let start = match topology.selection_mode() {
        SelectionMode::ThreadCount => CoreSelection::Threads(1),
        SelectionMode::Affinity => {
            if topology.clusters()[0].core_type == CoreType::Efficient {
                return Err(Error::NoStartCore);
            }
            let mut counts = vec![0; topology.cluster_count()];
            counts[0] = 1;
            CoreSelection::Affinity(counts)
        }
    };
    let mut best = start.clone();
    let mut best_speed = profiler.profile(&start)?.speed_tps;
    let mut steps = vec![Stage1Step {
        selection: start,
        speed_tps: best_speed,
        accepted: true,
    }];
    while let Some(next) = stage1_next(&best, topology) {
        let speed = profiler.profile(&next)?.speed_tps;
        let accepted = speed >= best_speed * (1.0 + config.stage1_min_speedup);
        steps.push(Stage1Step {
            selection: next.clone(),
            speed_tps: speed,
            accepted,
        });
        if !accepted {
            break;
        }
        best = next;
        best_speed = speed;
    }
    Ok(Stage1Outcome {
        selection: best,
        speed_tps: best_speed,
        steps,
    })
}

/// Child-generating transformations of the candidate tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// (a) drop one core from the smallest selected cluster.
    RemoveSmallest,
    /// (b) drop two cores, smallest first.
    RemoveTwoSmallest,
    /// (c) move one core from the biggest selected cluster into the next
    /// smaller selected cluster.
    ShiftCore,
    /// (d) move the smallest selected cluster's cores onto the biggest
    /// unselected smaller cluster.
    ShiftCluster,
    /// Thread-count devices: one thread fewer.
    ReduceThread,
}

impl Transform {
    pub const AFFINITY: [Transform; 4] = [
        Transform::RemoveSmallest,
        Transform::RemoveTwoSmallest,
        Transform::ShiftCore,
        Transform::ShiftCluster,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Transform::RemoveSmallest => "a",
            Transform::RemoveTwoSmallest => "b",
            Transform::ShiftCore => "c",
            Transform::ShiftCluster => "d",
            Transform::ReduceThread => "reduce_thread",
        }
    }

    /// Only allowed on the root's children.
    pub fn first_level_only(self) -> bool {
        matches!(
            self,
            Transform::RemoveSmallest | Transform::RemoveTwoSmallest
        )
    }

    /// Whether `self` may expand a node reached by `via`. A lone core left
    /// by a double removal is not regrouped: that would be three core moves
    /// from the root.
    pub fn may_follow(self, via: Option<Transform>, selection: &CoreSelection) -> bool {
        let lone = matches!(selection, CoreSelection::Affinity(c) if c.iter().sum::<u32>() == 1);
        !(self == Transform::ShiftCluster && via == Some(Transform::RemoveTwoSmallest) && lone)
    }

    /// Child of `selection`, or `None` when the transformation does not apply.
    pub fn apply(
        self,
        selection: &CoreSelection,
        topology: &CpuTopology,
        include_efficient: bool,
    ) -> Option<CoreSelection> {
        let allowed =
            |i: usize| include_efficient || topology.clusters()[i].core_type != CoreType::Efficient;
        let child = match (self, selection) {
            (Transform::ReduceThread, CoreSelection::Threads(t)) => {
                return (*t > 1).then(|| CoreSelection::Threads(t - 1));
            }
            (Transform::ReduceThread, _) | (_, CoreSelection::Threads(_)) => return None,
            (Transform::RemoveSmallest, CoreSelection::Affinity(c)) => {
                let mut c = c.clone();
                let i = c.iter().rposition(|&n| n > 0)?;
                c[i] -= 1;
                c
            }
            (Transform::RemoveTwoSmallest, CoreSelection::Affinity(c)) => {
                let mut c = c.clone();
                for _ in 0..2 {
                    let i = c.iter().rposition(|&n| n > 0)?;
                    c[i] -= 1;
                }
                c
            }
            (Transform::ShiftCore, CoreSelection::Affinity(c)) => {
                let mut c = c.clone();
                let from = c.iter().position(|&n| n > 0)?;
                let to = (from + 1..c.len()).find(|&j| c[j] > 0)?;
                if !allowed(to) || c[to] >= topology.clusters()[to].core_count {
                    return None;
                }
                c[from] -= 1;
                c[to] += 1;
                c
            }
            (Transform::ShiftCluster, CoreSelection::Affinity(c)) => {
                let mut c = c.clone();
                let from = c.iter().rposition(|&n| n > 0)?;
                let to = (from + 1..c.len()).find(|&j| c[j] == 0 && allowed(j))?;
                c[to] = c[from].min(topology.clusters()[to].core_count);
                c[from] = 0;
                c
            }
        };
        (child.iter().any(|&n| n > 0)).then_some(CoreSelection::Affinity(child))
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub selection: CoreSelection,
    pub depth: u32,
    pub parent: Option<usize>,
    pub transform: Option<Transform>,
}

/// Candidate set grown from a root. Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTree {
    pub nodes: Vec<TreeNode>,
}

impl CandidateTree {
    pub fn root(&self) -> &CoreSelection {
        &self.nodes[0].selection
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn selections(&self) -> impl Iterator<Item = &CoreSelection> {
        self.nodes.iter().map(|n| &n.selection)
    }

    pub fn contains(&self, selection: &CoreSelection) -> bool {
        self.selections().any(|s| s == selection)
    }
}

/// Grows the candidate tree breadth-first from `root`. Duplicates keep their
/// first (shallowest) occurrence.
pub fn grow_candidate_tree(
    root: &CoreSelection,
    topology: &CpuTopology,
    config: &SearchConfig,
) -> CandidateTree {
    let mut nodes = vec![TreeNode {
        selection: root.clone(),
        depth: 0,
        parent: None,
        transform: None,
    }];
    let transforms: &[Transform] = match root {
        CoreSelection::Threads(_) => &[Transform::ReduceThread],
        CoreSelection::Affinity(_) => &Transform::AFFINITY,
    };
    let mut level_start = 0;
    for depth in 1..=config.max_tree_depth {
        let level_end = nodes.len();
        for parent in level_start..level_end {
            for &t in transforms {
                if (t.first_level_only() && depth != 1)
                    || !t.may_follow(nodes[parent].transform, &nodes[parent].selection)
                {
                    continue;
                }
                let Some(child) =
                    t.apply(&nodes[parent].selection, topology, config.include_efficient)
                else {
                    continue;
                };
                if nodes.iter().any(|n| n.selection == child) {
                    continue;
                }
                nodes.push(TreeNode {
                    selection: child,
                    depth,
                    parent: Some(parent),
                    transform: Some(t),
                });
            }
        }
        if nodes.len() == level_end {
            break;
        }
        level_start = level_end;
    }
    CandidateTree { nodes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub selection: CoreSelection,
    pub depth: u32,
    pub transform: Option<Transform>,
    pub mean: MeasurementSample,
    /// Power heuristic `h(I)`.
    pub heuristic: f64,
    /// Ranking objective (lower is better).
    pub objective: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Outcome {
    pub chosen: CoreSelection,
    pub threshold_tps: f64,
    pub candidates: Vec<CandidateRecord>,
    /// True when every candidate violated the constraint and the root was
    /// returned.
    pub fell_back_to_root: bool,
}

/// Profiles every tree node, removes those slower than
/// `stage1_speed * (1 - epsilon)` and returns the minimizer of the
/// root-normalized blend `(1 - alpha) * E / E_root + alpha * h t / (h t)_root`.
pub fn stage2_select<P: MeasurementProvider>(
    profiler: &mut Profiler<P>,
    topology: &CpuTopology,
    config: &SearchConfig,
    tree: &CandidateTree,
    stage1_speed: f64,
    params: &HeuristicParams,
) -> Result<Stage2Outcome> {
    let alpha = params.alpha_for(topology.selection_mode());
    let threshold = stage1_speed * (1.0 - config.epsilon);
    let mut measured = Vec::with_capacity(tree.len());
    for node in &tree.nodes {
        let mean = profiler.profile(&node.selection)?;
        let h = power_heuristic(&node.selection, topology, params)?;
        measured.push((node, mean, h));
    }
    let (_, root_mean, root_h) = &measured[0];
    let scale =
        ObjectiveScale::from_reference(root_mean.run_energy_j(), root_h * root_mean.elapsed_s);

    let mut candidates = Vec::with_capacity(measured.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, (node, mean, h)) in measured.iter().enumerate() {
        let objective = scale.blend(alpha, mean.run_energy_j(), h * mean.elapsed_s);
        let feasible = mean.speed_tps >= threshold;
        if feasible && best.is_none_or(|(_, b)| objective < b) {
            best = Some((i, objective));
        }
        candidates.push(CandidateRecord {
            selection: node.selection.clone(),
            depth: node.depth,
            transform: node.transform,
            mean: *mean,
            heuristic: *h,
            objective,
            feasible,
        });
    }
    let fell_back_to_root = best.is_none();
    let chosen = candidates[best.map_or(0, |(i, _)| i)].selection.clone();
    Ok(Stage2Outcome {
        chosen,
        threshold_tps: threshold,
        candidates,
        fell_back_to_root,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub chosen: CoreSelection,
    /// Stage-1 result, or the fastest measured selection for the oracle.
    pub stage1: CoreSelection,
    pub stage1_speed: f64,
    pub stage1_steps: Vec<Stage1Step>,
    pub threshold_tps: f64,
    pub candidates: Vec<CandidateRecord>,
    pub fell_back_to_root: bool,
    /// Distinct selections profiled.
    pub plans_measured: usize,
    /// Individual decode runs.
    pub measurement_count: usize,
    /// Tokens decoded across all runs.
    pub token_budget: u64,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
}

impl SearchResult {
    pub fn candidate(&self, selection: &CoreSelection) -> Option<&CandidateRecord> {
        self.candidates.iter().find(|c| &c.selection == selection)
    }

    pub fn chosen_record(&self) -> &CandidateRecord {
        self.candidate(&self.chosen).expect("chosen is a candidate")
    }
}

fn finish<P: MeasurementProvider>(
    profiler: Profiler<P>,
    config: &SearchConfig,
    stage1: Stage1Outcome,
    stage2: Stage2Outcome,
) -> SearchResult {
    let plans_measured = profiler.plans_measured();
    let trace = profiler.into_trace();
    SearchResult {
        chosen: stage2.chosen,
        stage1: stage1.selection,
        stage1_speed: stage1.speed_tps,
        stage1_steps: stage1.steps,
        threshold_tps: stage2.threshold_tps,
        candidates: stage2.candidates,
        fell_back_to_root: stage2.fell_back_to_root,
        plans_measured,
        measurement_count: trace.len(),
        token_budget: trace.len() as u64 * u64::from(config.tokens_per_measurement),
        trace,
    }
}

/// Full two-stage search.
pub fn aecs_search<P: MeasurementProvider>(
    provider: P,
    topology: &CpuTopology,
    config: &SearchConfig,
    params: &HeuristicParams,
) -> Result<SearchResult> {
    config.validate()?;
    params.validate()?;
    let mut profiler = Profiler::new(provider, *config);
    let stage1 = stage1_fastest(&mut profiler, topology, config)?;
    let tree = grow_candidate_tree(&stage1.selection, topology, config);
    let stage2 = stage2_select(
        &mut profiler,
        topology,
        config,
        &tree,
        stage1.speed_tps,
        params,
    )?;
    Ok(finish(profiler, config, stage1, stage2))
}

/// Search on a simulated device using measurement stream `rng`.
pub fn search_device(
    device: &SimulatedDevice,
    config: &SearchConfig,
    params: &HeuristicParams,
    rng: MeasurementRng,
) -> Result<SearchResult> {
    aecs_search(
        SimulatedProvider::new(device, rng),
        &device.topology,
        config,
        params,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranking {
    MeasuredEnergy,
    /// Blended objective, normalized on the fastest selection.
    Blended(HeuristicParams),
}

/// Profiles the entire search space and returns the lowest-energy selection
/// whose speed is within `epsilon` of the fastest measured one.
pub fn exhaustive_search<P: MeasurementProvider>(
    provider: P,
    topology: &CpuTopology,
    config: &SearchConfig,
    ranking: Ranking,
) -> Result<SearchResult> {
    config.validate()?;
    let mut profiler = Profiler::new(provider, *config);
    let all = enumerate_selections(topology);
    let mut means = Vec::with_capacity(all.len());
    for sel in &all {
        means.push(profiler.profile(sel)?);
    }
    let (fastest, fastest_mean) = all
        .iter()
        .zip(&means)
        .fold(
            None,
            |acc: Option<(&CoreSelection, &MeasurementSample)>, (s, m)| match acc {
                Some((_, bm)) if bm.speed_tps >= m.speed_tps => acc,
                _ => Some((s, m)),
            },
        )
        .expect("search space is non-empty");
    let threshold = fastest_mean.speed_tps * (1.0 - config.epsilon);

    let (alpha, params) = match ranking {
        Ranking::MeasuredEnergy => (0.0, HeuristicParams::default()),
        Ranking::Blended(p) => (p.alpha_for(topology.selection_mode()), p),
    };
    let fastest_h = power_heuristic(fastest, topology, &params)?;
    let scale = match ranking {
        Ranking::MeasuredEnergy => ObjectiveScale::UNIT,
        Ranking::Blended(_) => ObjectiveScale::from_reference(
            fastest_mean.run_energy_j(),
            fastest_h * fastest_mean.elapsed_s,
        ),
    };
    let mut candidates = Vec::with_capacity(all.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, (sel, mean)) in all.iter().zip(&means).enumerate() {
        let h = power_heuristic(sel, topology, &params)?;
        let objective = scale.blend(alpha, mean.run_energy_j(), h * mean.elapsed_s);
        let feasible = mean.speed_tps >= threshold;
        if feasible && best.is_none_or(|(_, b)| objective < b) {
            best = Some((i, objective));
        }
        candidates.push(CandidateRecord {
            selection: sel.clone(),
            depth: 0,
            transform: None,
            mean: *mean,
            heuristic: h,
            objective,
            feasible,
        });
    }
    let stage1 = Stage1Outcome {
        selection: fastest.clone(),
        speed_tps: fastest_mean.speed_tps,
        steps: Vec::new(),
    };
    // The fastest selection is always feasible.
    let (best, _) = best.expect("fastest selection is feasible");
    let chosen = candidates[best].selection.clone();
    let stage2 = Stage2Outcome {
        chosen,
        threshold_tps: threshold,
        candidates,
        fell_back_to_root: false,
    };
    Ok(finish(profiler, config, stage1, stage2))
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

    fn aff(c: &[u32]) -> CoreSelection {
        CoreSelection::Affinity(c.to_vec())
    }

    /// Replays a fixed table of speeds and energies.
    struct Table {
        rows: Vec<(CoreSelection, f64, f64)>,
    }

    impl MeasurementProvider for Table {
        fn measure(&mut self, selection: &CoreSelection, n: u32) -> Result<MeasurementSample> {
            let (_, speed, mj) = self
                .rows
                .iter()
                .find(|(s, _, _)| s == selection)
                .cloned()
                .unwrap_or((selection.clone(), 1.0, 1000.0));
            let elapsed = f64::from(n) / speed;
            Ok(MeasurementSample {
                tokens: n,
                speed_tps: speed,
                elapsed_s: elapsed,
                energy_mj_per_tok: mj,
                avg_power_w: mj * f64::from(n) / 1000.0 / elapsed,
            })
        }
    }

    #[test]
    fn fig9_tree() {
        let t = mate40();
        let tree = grow_candidate_tree(&aff(&[1, 2, 0]), &t, &SearchConfig::default());
        let got: Vec<_> = tree.selections().cloned().collect();
        assert_eq!(
            got,
            vec![
                aff(&[1, 2, 0]),
                aff(&[1, 1, 0]),
                aff(&[1, 0, 0]),
                aff(&[0, 3, 0]),
                aff(&[0, 2, 0])
            ]
        );
        let tags: Vec<_> = tree
            .nodes
            .iter()
            .map(|n| n.transform.map(|t| t.tag()))
            .collect();
        assert_eq!(tags, vec![None, Some("a"), Some("b"), Some("c"), Some("c")]);
        assert_eq!(tree.nodes[4].parent, Some(1));
        assert_eq!(tree.nodes[4].depth, 2);
    }

    #[test]
    fn smallest_nonefficient_single_core_has_no_children() {
        let t = mate40();
        let tree = grow_candidate_tree(&aff(&[0, 1, 0]), &t, &SearchConfig::default());
        assert_eq!(tree.len(), 1);
    }

    #[test]
    fn include_efficient_opens_the_little_cluster() {
        let t = mate40();
        let cfg = SearchConfig {
            include_efficient: true,
            ..Default::default()
        };
        let tree = grow_candidate_tree(&aff(&[0, 3, 0]), &t, &cfg);
        assert!(tree.contains(&aff(&[0, 0, 3])));
    }

    #[test]
    fn thread_tree() {
        let t = CpuTopology::new(
            "p",
            vec![crate::topology::Cluster {
                core_count: 6,
                max_freq_ghz: 3.0,
                capacity: 1.0,
                core_type: CoreType::Prime,
            }],
            SelectionMode::ThreadCount,
        )
        .unwrap();
        let tree = grow_candidate_tree(&CoreSelection::Threads(4), &t, &SearchConfig::default());
        let got: Vec<_> = tree.selections().cloned().collect();
        assert_eq!(
            got,
            vec![
                CoreSelection::Threads(4),
                CoreSelection::Threads(3),
                CoreSelection::Threads(2)
            ]
        );
        let one = grow_candidate_tree(&CoreSelection::Threads(1), &t, &SearchConfig::default());
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn stage1_halts_when_speedup_is_small() {
        let t = mate40();
        let table = Table {
            rows: vec![
                (aff(&[1, 0, 0]), 10.0, 500.0),
                (aff(&[1, 1, 0]), 15.0, 400.0),
                (aff(&[1, 2, 0]), 18.0, 400.0),
                (aff(&[1, 3, 0]), 18.2, 400.0),
            ],
        };
        let cfg = SearchConfig {
            repeats: 1,
            ..Default::default()
        };
        let mut p = Profiler::new(table, cfg);
        let out = stage1_fastest(&mut p, &t, &cfg).unwrap();
        assert_eq!(out.selection, aff(&[1, 2, 0]));
        assert_eq!(
            out.path(),
            vec![aff(&[1, 0, 0]), aff(&[1, 1, 0]), aff(&[1, 2, 0])]
        );
        assert_eq!(out.steps.len(), 4);
    }

    #[test]
    fn stage1_single_core_device() {
        let t = CpuTopology::new(
            "one",
            vec![crate::topology::Cluster {
                core_count: 1,
                max_freq_ghz: 2.0,
                capacity: 1.0,
                core_type: CoreType::Prime,
            }],
            SelectionMode::Affinity,
        )
        .unwrap();
        let cfg = SearchConfig {
            repeats: 3,
            ..Default::default()
        };
        let mut p = Profiler::new(Table { rows: vec![] }, cfg);
        let out = stage1_fastest(&mut p, &t, &cfg).unwrap();
        assert_eq!(out.selection, aff(&[1]));
        assert_eq!(p.trace().len(), 3);
    }

    #[test]
    fn stage1_rejects_all_efficient_device() {
        let t = CpuTopology::new(
            "little",
            vec![crate::topology::Cluster {
                core_count: 4,
                max_freq_ghz: 1.8,
                capacity: 1.0,
                core_type: CoreType::Efficient,
            }],
            SelectionMode::Affinity,
        )
        .unwrap();
        let cfg = SearchConfig::default();
        let mut p = Profiler::new(Table { rows: vec![] }, cfg);
        assert!(matches!(
            stage1_fastest(&mut p, &t, &cfg),
            Err(Error::NoStartCore)
        ));
    }

    #[test]
    fn stage2_drops_slow_candidates() {
        // 21.7 tok/s root; 19.0 is below 21.7 * 0.92 = 19.964, 20.6 is not.
        let t = mate40();
        let table = Table {
            rows: vec![
                (aff(&[1, 2, 0]), 21.7, 400.0),
                (aff(&[1, 1, 0]), 19.0, 100.0),
                (aff(&[0, 2, 0]), 20.6, 300.0),
            ],
        };
        let cfg = SearchConfig {
            repeats: 1,
            ..Default::default()
        };
        let tree = CandidateTree {
            nodes: [aff(&[1, 2, 0]), aff(&[1, 1, 0]), aff(&[0, 2, 0])]
                .into_iter()
                .map(|s| TreeNode {
                    selection: s,
                    depth: 0,
                    parent: None,
                    transform: None,
                })
                .collect(),
        };
        let params = HeuristicParams {
            alpha: 0.0,
            ..Default::default()
        };
        let mut p = Profiler::new(table, cfg);
        let out = stage2_select(&mut p, &t, &cfg, &tree, 21.7, &params).unwrap();
        assert!((out.threshold_tps - 19.964).abs() < 1e-9);
        assert!(!out.candidates[1].feasible);
        assert!(out.candidates[2].feasible);
        assert_eq!(out.chosen, aff(&[0, 2, 0]));
    }

    #[test]
    fn stage2_falls_back_to_root() {
        let t = mate40();
        let table = Table {
            rows: vec![(aff(&[1, 2, 0]), 10.0, 400.0)],
        };
        let cfg = SearchConfig {
            repeats: 1,
            ..Default::default()
        };
        let tree = grow_candidate_tree(&aff(&[1, 2, 0]), &t, &cfg);
        let mut p = Profiler::new(table, cfg);
        let out =
            stage2_select(&mut p, &t, &cfg, &tree, 50.0, &HeuristicParams::default()).unwrap();
        assert!(out.fell_back_to_root);
        assert_eq!(out.chosen, aff(&[1, 2, 0]));
    }

    #[test]
    fn median_aggregation() {
        let runs: Vec<MeasurementSample> = [1.0, 9.0, 2.0]
            .iter()
            .map(|&v| MeasurementSample {
                tokens: 1,
                speed_tps: v,
                elapsed_s: v,
                energy_mj_per_tok: v,
                avg_power_w: v,
            })
            .collect();
        assert_eq!(aggregate(&runs, Aggregation::Median).speed_tps, 2.0);
        assert_eq!(aggregate(&runs, Aggregation::Mean).speed_tps, 4.0);
    }

    #[test]
    fn config_validation() {
        assert!(SearchConfig::default().validate().is_ok());
        assert!(SearchConfig {
            epsilon: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SearchConfig {
            repeats: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SearchConfig {
            tokens_per_measurement: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
