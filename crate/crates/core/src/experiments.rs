//! Monte-Carlo harness: optimality rates against the noiseless oracle, the
//! exhaustive-versus-search ablation, and empirical checks of how the
//! heuristic blend affects ordering accuracy and variance.
//!
//! Every trial draws from its own ChaCha stream keyed by `(seed, index)`, so
//! results do not depend on thread scheduling.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aecs::{grow_candidate_tree, search_device, SearchConfig};
use crate::error::{Error, Result};
use crate::heuristic::{power_heuristic, HeuristicParams, ObjectiveScale};
use crate::simdevice::{stream_from, SimulatedDevice};
use crate::topology::{enumerate_selections, CoreSelection};

const Z95: f64 = 1.959_963_984_540_054;
const Z95_ONE_SIDED: f64 = 1.644_853_626_951_472;

/// Constrained energy optimum of the device's noiseless ground truth: the
/// lowest-energy selection among those within `epsilon` of the fastest.
pub fn true_optimum(device: &SimulatedDevice, epsilon: f64) -> Result<CoreSelection> {
    let all = enumerate_selections(&device.topology);
    let speeds = all
        .iter()
        .map(|s| device.true_speed(s))
        .collect::<Result<Vec<_>>>()?;
    let max_speed = speeds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = max_speed * (1.0 - epsilon);
    let mut best: Option<(usize, f64)> = None;
    for (i, (sel, speed)) in all.iter().zip(&speeds).enumerate() {
        if *speed < threshold {
            continue;
        }
        let e = device.true_energy_mj_per_tok(sel)?;
        if best.is_none_or(|(_, b)| e < b) {
            best = Some((i, e));
        }
    }
    let (i, _) = best.expect("fastest selection is feasible");
    Ok(all[i].clone())
}

/// Binomial proportion with a 95% Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub successes: u64,
    pub trials: u64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl RateEstimate {
    pub fn new(successes: u64, trials: u64) -> Self {
        if trials == 0 {
            return Self {
                successes,
                trials,
                rate: 0.0,
                ci_low: 0.0,
                ci_high: 1.0,
            };
        }
        let n = trials as f64;
        let p = successes as f64 / n;
        let z2 = Z95 * Z95;
        let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
        let half = Z95 / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
        Self {
            successes,
            trials,
            rate: p,
            ci_low: if successes == 0 {
                0.0
            } else {
                (centre - half).max(0.0)
            },
            ci_high: if successes == trials {
                1.0
            } else {
                (centre + half).min(1.0)
            },
        }
    }
}

/// Per-trial outcomes of repeated noisy searches.
fn trial_outcomes(
    device: &SimulatedDevice,
    config: &SearchConfig,
    params: &HeuristicParams,
    target: &CoreSelection,
    trials: u64,
    seed: u64,
) -> Result<Vec<bool>> {
    (0..trials)
        .into_par_iter()
        .map(|k| {
            let r = search_device(device, config, params, stream_from(seed, k))?;
            Ok(&r.chosen == target)
        })
        .collect()
}

/// Fraction of `trials` independent noisy searches that return the
/// device's true optimum.
pub fn optimality_rate(
    device: &SimulatedDevice,
    config: &SearchConfig,
    params: &HeuristicParams,
    trials: u64,
    seed: u64,
) -> Result<RateEstimate> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    config.validate()?;
    params.validate()?;
    let target = true_optimum(device, config.epsilon)?;
    let outcomes = trial_outcomes(device, config, params, &target, trials, seed)?;
    let hits = outcomes.iter().filter(|&&ok| ok).count() as u64;
    Ok(RateEstimate::new(hits, trials))
}

/// Empirical checks of the heuristic blend. Fields not exercised by a given
/// check are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub alpha: f64,
    pub trials: u64,
    /// `Var[(1 - alpha) e + alpha h t] / Var[e]`.
    pub empirical_variance_ratio: Option<f64>,
    /// `(1 - alpha)^2`.
    pub predicted_ratio: f64,
    pub ordering_accuracy_blend: Option<f64>,
    pub ordering_accuracy_raw: Option<f64>,
    /// Standard error of the paired accuracy difference (blend - raw).
    pub ordering_gap_se: Option<f64>,
    /// Accuracies restricted to pairs whose true energies differ by >= 20%.
    pub large_gap_accuracy_blend: Option<f64>,
    pub large_gap_accuracy_raw: Option<f64>,
    pub pairs: usize,
    /// Sampled pairs dropped because the heuristic orders them differently
    /// from true energy.
    pub excluded_pairs: usize,
    pub comparisons: u64,
}

impl TheoremReport {
    fn empty(alpha: f64, trials: u64) -> Self {
        Self {
            alpha,
            trials,
            empirical_variance_ratio: None,
            predicted_ratio: (1.0 - alpha) * (1.0 - alpha),
            ordering_accuracy_blend: None,
            ordering_accuracy_raw: None,
            ordering_gap_se: None,
            large_gap_accuracy_blend: None,
            large_gap_accuracy_raw: None,
            pairs: 0,
            excluded_pairs: 0,
            comparisons: 0,
        }
    }

    /// Combines a variance report with an ordering report for the same alpha.
    pub fn merge(variance: &TheoremReport, ordering: &TheoremReport) -> TheoremReport {
        TheoremReport {
            empirical_variance_ratio: variance.empirical_variance_ratio,
            trials: variance.trials.max(ordering.trials),
            ..ordering.clone()
        }
    }

    /// One-sided 95% check that the blend orders pairs at least as well as
    /// raw energy.
    pub fn blend_not_worse(&self) -> Option<bool> {
        let (b, r, se) = (
            self.ordering_accuracy_blend?,
            self.ordering_accuracy_raw?,
            self.ordering_gap_se?,
        );
        Some(b - r >= -Z95_ONE_SIDED * se)
    }
}

/// Sample variance, shifted by the first element so that constant data
/// gives exactly zero.
fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let k = xs[0];
    let (s1, s2) = xs
        .iter()
        .fold((0.0, 0.0), |(a, b), x| (a + (x - k), b + (x - k) * (x - k)));
    ((s2 - s1 * s1 / n) / (n - 1.0)).max(0.0)
}

/// Samples the run energy of `selection` `trials` times with the time
/// channel held at its noiseless value, and compares the variance of the
/// blended objective to that of raw energy.
pub fn verify_variance_reduction(
    device: &SimulatedDevice,
    selection: &CoreSelection,
    params: &HeuristicParams,
    alpha: f64,
    trials: u64,
    seed: u64,
) -> Result<TheoremReport> {
    if trials < 2 {
        return Err(Error::invalid("variance check needs at least 2 trials"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha must be in [0, 1]"));
    }
    let h = power_heuristic(selection, &device.topology, params)?;
    let mut rng = stream_from(seed, 0);
    let tokens = SearchConfig::default().tokens_per_measurement;
    let mut raw = Vec::with_capacity(trials as usize);
    let mut blended = Vec::with_capacity(trials as usize);
    for _ in 0..trials {
        let s = device.measure_power_channel(selection, tokens, &mut rng)?;
        let e = s.run_energy_j();
        raw.push(e);
        blended.push((1.0 - alpha) * e + alpha * h * s.elapsed_s);
    }
    let var_raw = variance(&raw);
    let mut report = TheoremReport::empty(alpha, trials);
    report.empirical_variance_ratio = Some(if var_raw > 0.0 {
        variance(&blended) / var_raw
    } else {
        0.0
    });
    Ok(report)
}

struct Pair {
    worse: CoreSelection,
    better: CoreSelection,
    large_gap: bool,
}

/// Draws distinct selection pairs, oriented so the first has higher true
/// energy, keeping only those on which `h * t` agrees with true energy.
fn sample_pairs(
    device: &SimulatedDevice,
    params: &HeuristicParams,
    pair_count: usize,
    seed: u64,
) -> Result<(Vec<Pair>, usize)> {
    let all = enumerate_selections(&device.topology);
    if all.len() < 2 {
        return Err(Error::invalid("device has fewer than two selections"));
    }
    let mut facts = Vec::with_capacity(all.len());
    for s in &all {
        let e = device.true_energy_mj_per_tok(s)?;
        let ht = power_heuristic(s, &device.topology, params)? / device.true_speed(s)?;
        facts.push((e, ht));
    }
    let mut rng = stream_from(seed, u64::MAX);
    let mut pairs = Vec::with_capacity(pair_count);
    let mut excluded = 0;
    let max_draws = pair_count.saturating_mul(100).max(1000);
    for _ in 0..max_draws {
        if pairs.len() == pair_count {
            break;
        }
        let i = rng.random_range(0..all.len());
        let j = rng.random_range(0..all.len());
        let (ei, ej) = (facts[i].0, facts[j].0);
        if i == j || ei == ej {
            continue;
        }
        let (w, b) = if ei > ej { (i, j) } else { (j, i) };
        if facts[w].1 <= facts[b].1 {
            excluded += 1;
            continue;
        }
        pairs.push(Pair {
            worse: all[w].clone(),
            better: all[b].clone(),
            large_gap: facts[w].0 - facts[b].0 >= 0.2 * facts[b].0,
        });
    }
    Ok((pairs, excluded))
}

#[derive(Default, Clone, Copy)]
struct OrderingTally {
    n: u64,
    blend: u64,
    raw: u64,
    // Paired differences (blend correct - raw correct), for the standard error.
    diff_sum: i64,
    diff_sq: u64,
    large_n: u64,
    large_blend: u64,
    large_raw: u64,
}

impl OrderingTally {
    fn add(mut self, o: OrderingTally) -> Self {
        self.n += o.n;
        self.blend += o.blend;
        self.raw += o.raw;
        self.diff_sum += o.diff_sum;
        self.diff_sq += o.diff_sq;
        self.large_n += o.large_n;
        self.large_blend += o.large_blend;
        self.large_raw += o.large_raw;
        self
    }
}

/// For sampled pairs `(I, J)` with `E(I) > E(J)`, estimates how often one
/// noisy measurement of each ranks them correctly under the blend and under
/// raw energy. Both rankings see the same samples.
pub fn verify_ordering_accuracy(
    device: &SimulatedDevice,
    params: &HeuristicParams,
    alpha: f64,
    pair_count: usize,
    trials: u64,
    seed: u64,
) -> Result<TheoremReport> {
    if pair_count == 0 || trials == 0 {
        return Err(Error::invalid("pair_count and trials must be >= 1"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha must be in [0, 1]"));
    }
    let topo = &device.topology;
    let (pairs, excluded) = sample_pairs(device, params, pair_count, seed)?;

    // Both terms are put on the scale of the fastest selection.
    let all = enumerate_selections(topo);
    let mut reference = (f64::NEG_INFINITY, &all[0]);
    for s in &all {
        let v = device.true_speed(s)?;
        if v > reference.0 {
            reference = (v, s);
        }
    }
    let tokens = SearchConfig::default().tokens_per_measurement;
    let ref_t = f64::from(tokens) / reference.0;
    let scale = ObjectiveScale::from_reference(
        device.true_power(reference.1)? * ref_t,
        power_heuristic(reference.1, topo, params)? * ref_t,
    );

    let tally = pairs
        .par_iter()
        .enumerate()
        .map(|(p, pair)| -> Result<OrderingTally> {
            let hw = power_heuristic(&pair.worse, topo, params)?;
            let hb = power_heuristic(&pair.better, topo, params)?;
            let mut rng = stream_from(seed, p as u64);
            let mut t = OrderingTally::default();
            for _ in 0..trials {
                let sw = device.measure(&pair.worse, tokens, &mut rng)?;
                let sb = device.measure(&pair.better, tokens, &mut rng)?;
                let raw_ok = sw.energy_mj_per_tok > sb.energy_mj_per_tok;
                let ow = scale.blend(alpha, sw.run_energy_j(), hw * sw.elapsed_s);
                let ob = scale.blend(alpha, sb.run_energy_j(), hb * sb.elapsed_s);
                let blend_ok = ow > ob;
                t.n += 1;
                t.raw += u64::from(raw_ok);
                t.blend += u64::from(blend_ok);
                let d = i64::from(blend_ok) - i64::from(raw_ok);
                t.diff_sum += d;
                t.diff_sq += (d * d) as u64;
                if pair.large_gap {
                    t.large_n += 1;
                    t.large_raw += u64::from(raw_ok);
                    t.large_blend += u64::from(blend_ok);
                }
            }
            Ok(t)
        })
        .try_reduce(OrderingTally::default, |a, b| Ok(a.add(b)))?;

    let mut report = TheoremReport::empty(alpha, trials);
    report.pairs = pairs.len();
    report.excluded_pairs = excluded;
    report.comparisons = tally.n;
    if tally.n > 0 {
        let n = tally.n as f64;
        report.ordering_accuracy_blend = Some(tally.blend as f64 / n);
        report.ordering_accuracy_raw = Some(tally.raw as f64 / n);
        let mean = tally.diff_sum as f64 / n;
        let var = if tally.n > 1 {
            (tally.diff_sq as f64 - n * mean * mean) / (n - 1.0)
        } else {
            0.0
        };
        report.ordering_gap_se = Some((var.max(0.0) / n).sqrt());
    }
    if tally.large_n > 0 {
        let n = tally.large_n as f64;
        report.large_gap_accuracy_blend = Some(tally.large_blend as f64 / n);
        report.large_gap_accuracy_raw = Some(tally.large_raw as f64 / n);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub device: String,
    pub true_optimum: CoreSelection,
    /// Selections an exhaustive traversal profiles.
    pub exhaustive_space: usize,
    /// Candidate-tree size of the noiseless search.
    pub aecs_space: usize,
    pub exhaustive_measurements: u64,
    /// Decode runs of the noiseless search, stage 1 included.
    pub aecs_measurements: u64,
    pub optimality_with_heuristic: RateEstimate,
    pub optimality_without_heuristic: RateEstimate,
}

impl AblationRow {
    pub fn budget_ratio(&self) -> f64 {
        self.exhaustive_measurements as f64 / self.aecs_measurements as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub trials: u64,
    pub seed: u64,
    pub alpha: f64,
    pub epsilon: f64,
}

/// Per-device stream seed, independent of the device's position in the list.
fn device_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h
}

/// Exhaustive-versus-search comparison over `devices`. Optimality rates with
/// and without the heuristic share measurement streams, so each trial is a
/// paired comparison.
pub fn run_ablation(
    devices: &[SimulatedDevice],
    config: &SearchConfig,
    params: &HeuristicParams,
    trials: u64,
    seed: u64,
) -> Result<AblationReport> {
    if devices.is_empty() {
        return Err(Error::invalid("ablation needs at least one device"));
    }
    let without = params.without_heuristic();
    let mut rows = Vec::with_capacity(devices.len());
    for device in devices {
        let quiet = device.noiseless();
        let noiseless = search_device(&quiet, config, params, quiet.stream(0))?;
        let tree = grow_candidate_tree(&noiseless.stage1, &device.topology, config);
        let space = device.topology.search_space_size();
        let s = device_seed(seed, device.name());
        rows.push(AblationRow {
            device: device.name().to_string(),
            true_optimum: true_optimum(device, config.epsilon)?,
            exhaustive_space: space,
            aecs_space: tree.len(),
            exhaustive_measurements: space as u64 * u64::from(config.repeats),
            aecs_measurements: noiseless.measurement_count as u64,
            optimality_with_heuristic: optimality_rate(device, config, params, trials, s)?,
            optimality_without_heuristic: optimality_rate(device, config, &without, trials, s)?,
        });
    }
    Ok(AblationReport {
        rows,
        trials,
        seed,
        alpha: params.alpha,
        epsilon: config.epsilon,
    })
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "device,true_optimum,exhaustive_space,aecs_space,exhaustive_measurements,\
             aecs_measurements,budget_ratio,rate_without_heuristic,rate_without_ci_low,\
             rate_without_ci_high,rate_with_heuristic,rate_with_ci_low,rate_with_ci_high,trials\n",
        );
        for r in &self.rows {
            let (w, o) = (
                &r.optimality_with_heuristic,
                &r.optimality_without_heuristic,
            );
            let _ = writeln!(
                out,
                "{},\"{}\",{},{},{},{},{:.3},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{}",
                r.device,
                r.true_optimum,
                r.exhaustive_space,
                r.aecs_space,
                r.exhaustive_measurements,
                r.aecs_measurements,
                r.budget_ratio(),
                o.rate,
                o.ci_low,
                o.ci_high,
                w.rate,
                w.ci_low,
                w.ci_high,
                self.trials
            );
        }
        out
    }

    /// Table with exhaustive, search-without-heuristic and search columns,
    /// one row group per device.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "| device | optimum | search space (exhaustive / AECS) | runs (exhaustive / AECS) | optimality w/o heuristic | optimality AECS |"
        );
        let _ = writeln!(out, "|---|---|---|---|---|---|");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {} / {} | {} / {} | {:.1}% | {:.1}% |",
                r.device,
                r.true_optimum,
                r.exhaustive_space,
                r.aecs_space,
                r.exhaustive_measurements,
                r.aecs_measurements,
                100.0 * r.optimality_without_heuristic.rate,
                100.0 * r.optimality_with_heuristic.rate,
            );
        }
        let _ = writeln!(
            out,
            "\n{} trials per device, seed {}, alpha {}, epsilon {}.",
            self.trials, self.seed, self.alpha, self.epsilon
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simdevice::load_preset;

    #[test]
    fn wilson_interval_brackets_rate() {
        let r = RateEstimate::new(180, 200);
        assert!((r.rate - 0.9).abs() < 1e-12);
        assert!(r.ci_low < 0.9 && r.ci_high > 0.9);
        assert!((r.ci_low - 0.8506).abs() < 1e-3, "{}", r.ci_low);
        let all = RateEstimate::new(10, 10);
        assert_eq!(all.ci_high, 1.0);
        assert!(all.ci_low > 0.69 && all.ci_low < 0.73);
    }

    #[test]
    fn variance_ratio_degenerate_alphas() {
        let d = load_preset("mate40pro").unwrap();
        let sel = CoreSelection::Affinity(vec![0, 2, 0]);
        let p = HeuristicParams::default();
        let r0 = verify_variance_reduction(&d, &sel, &p, 0.0, 200, 1).unwrap();
        assert_eq!(r0.empirical_variance_ratio, Some(1.0));
        let r1 = verify_variance_reduction(&d, &sel, &p, 1.0, 200, 1).unwrap();
        assert_eq!(r1.empirical_variance_ratio, Some(0.0));
    }

    #[test]
    fn noiseless_ordering_is_perfect() {
        let d = load_preset("mate40pro").unwrap().noiseless();
        let r = verify_ordering_accuracy(&d, &HeuristicParams::default(), 0.5, 50, 2, 3).unwrap();
        assert_eq!(r.ordering_accuracy_blend, Some(1.0));
        assert_eq!(r.ordering_accuracy_raw, Some(1.0));
    }

    #[test]
    fn device_seed_is_order_free() {
        assert_ne!(device_seed(1, "a"), device_seed(1, "b"));
        assert_eq!(device_seed(9, "mate40pro"), device_seed(9, "mate40pro"));
    }
}
