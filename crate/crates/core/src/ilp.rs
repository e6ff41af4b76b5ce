//! Exact bit-width allocation.
//!
//! One (weight-bit, activation-bit) combination is chosen per layer to
//! minimize summed importance under BitOps and/or model-size budgets: a
//! multiple-choice knapsack, solved exactly by depth-first branch and bound.
//! Layers are searched in descending cost-spread order. Nodes are bounded by
//! the stronger of two relaxations: the per-layer best importance among
//! combos each remaining layer can still individually afford, and the LP
//! bound obtained by walking each budget dimension's convex efficiency
//! frontier greedily (fractional last segment). Ties are broken by smaller
//! total BitOps, then by the lexicographically smallest
//! (weight-idx, activation-idx) sequence in layer order, so the solver and
//! the exhaustive oracle agree on the exact policy, not just the objective.

use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use crate::cost::{Budget, LayerCostStats};
use crate::error::{Error, Result};
use crate::indicator::IndicatorReport;

/// Complete solver input: importance and cost matrices plus the budget.
#[derive(Debug, Clone)]
pub struct IlpInstance {
    pub bits: Vec<u32>,
    pub layer_names: Vec<String>,
    /// `[layer][w_idx][a_idx]`
    pub importance: Vec<Vec<Vec<f64>>>,
    /// `[layer][w_idx][a_idx]`, exact integers
    pub bitops: Vec<Vec<Vec<u64>>>,
    /// `[layer][w_idx]`; activation bits do not affect weight payload
    pub size_bits: Vec<Vec<u64>>,
    pub budget: Budget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerChoice {
    pub layer: usize,
    pub w_idx: usize,
    pub a_idx: usize,
    pub b_w: u32,
    pub b_a: u32,
}

/// A feasible, provably optimal assignment with solver metadata.
#[derive(Debug, Clone)]
pub struct Policy {
    pub choices: Vec<LayerChoice>,
    pub objective: f64,
    pub total_bitops: u64,
    pub total_size_bits: u64,
    pub sense: Sense,
    pub nodes_explored: u64,
    pub wall_time: Duration,
    pub instance_digest: String,
}

impl IlpInstance {
    pub fn num_layers(&self) -> usize {
        self.layer_names.len()
    }

    pub fn num_options(&self) -> usize {
        self.bits.len()
    }

    fn validate(&self) -> Result<()> {
        let (layers, n) = (self.num_layers(), self.num_options());
        if layers == 0 || n == 0 {
            return Err(Error::InvalidArgument { what: "instance", detail: "no layers or no bit options".into() });
        }
        for l in 0..layers {
            if self.importance[l].len() != n || self.bitops[l].len() != n || self.size_bits[l].len() != n {
                return Err(Error::InvalidArgument { what: "instance", detail: format!("layer {l} matrices not {n}x{n}") });
            }
            for i in 0..n {
                for j in 0..n {
                    let v = self.importance[l][i][j];
                    if !v.is_finite() {
                        return Err(Error::InvalidArgument { what: "importance", detail: format!("non-finite at [{l}][{i}][{j}]") });
                    }
                    if v < 0.0 {
                        return Err(Error::NegativeImportance { layer: l, value: v });
                    }
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over a canonical text encoding; ties a policy to its inputs.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        let mut text = String::new();
        text.push_str("ilp-instance-v1\n");
        text.push_str(&format!("bits {:?}\n", self.bits));
        for (l, name) in self.layer_names.iter().enumerate() {
            text.push_str(&format!("layer {l} {name}\n"));
            for i in 0..self.num_options() {
                for j in 0..self.num_options() {
                    text.push_str(&format!("{} {} ", self.importance[l][i][j], self.bitops[l][i][j]));
                }
                text.push_str(&format!("| {}\n", self.size_bits[l][i]));
            }
        }
        text.push_str(&format!("budget {:?} {:?}\n", self.budget.bitops_limit, self.budget.size_limit_bits));
        hasher.update(text.as_bytes());
        hex_digest(&hasher.finalize())
    }

    /// Per-layer minimum achievable costs, each dimension independently.
    fn min_costs(&self) -> (u64, u64) {
        let min_bitops = self
            .bitops
            .iter()
            .map(|m| m.iter().flatten().copied().min().unwrap_or(0))
            .sum();
        let min_size = self.size_bits.iter().map(|m| m.iter().copied().min().unwrap_or(0)).sum();
        (min_bitops, min_size)
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Assemble the solver input from trained indicators and layer stats.
/// The instance is self-contained; nothing else is needed to solve.
pub fn build_instance(report: &IndicatorReport, stats: &[LayerCostStats], alpha: f64, budget: Budget) -> Result<IlpInstance> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument { what: "alpha", detail: format!("{alpha} must be >= 0") });
    }
    if report.layer_names.len() != stats.len() {
        return Err(Error::LayerSetMismatch {
            detail: format!("{} indicator layers vs {} stat layers", report.layer_names.len(), stats.len()),
        });
    }
    for (l, stat) in stats.iter().enumerate() {
        if stat.layer != l || stat.name != report.layer_names[l] {
            return Err(Error::LayerSetMismatch {
                detail: format!("layer {l}: indicators name '{}', stats name '{}' (id {})", report.layer_names[l], stat.name, stat.layer),
            });
        }
    }
    let n = report.bits.len();
    let layers = stats.len();
    let mut importance = Vec::with_capacity(layers);
    let mut bitops = Vec::with_capacity(layers);
    let mut size_bits = Vec::with_capacity(layers);
    for (l, stat) in stats.iter().enumerate() {
        let mut imp_l = vec![vec![0.0; n]; n];
        let mut ops_l = vec![vec![0u64; n]; n];
        for i in 0..n {
            for j in 0..n {
                let value = report.s_a[l][j] + alpha * report.s_w[l][i];
                if !value.is_finite() {
                    return Err(Error::InvalidArgument { what: "importance", detail: format!("non-finite at layer {l}") });
                }
                if value < 0.0 {
                    return Err(Error::NegativeImportance { layer: l, value });
                }
                imp_l[i][j] = value;
                ops_l[i][j] = crate::cost::bitops(stat, report.bits[i], report.bits[j]);
            }
        }
        importance.push(imp_l);
        bitops.push(ops_l);
        size_bits.push(report.bits.iter().map(|&b| stat.params * b as u64).collect());
    }
    Ok(IlpInstance {
        bits: report.bits.clone(),
        layer_names: report.layer_names.clone(),
        importance,
        bitops,
        size_bits,
        budget,
    })
}

// ---------------------------------------------------------------------------
// candidate comparison shared by solver and oracle (part of the contract)

struct Candidate {
    objective: f64,
    total_bitops: u64,
    total_size: u64,
    /// `(w_idx, a_idx)` per layer in original layer order
    indices: Vec<(usize, usize)>,
}

/// Strictly better under the cascade: objective per `sense`, then smaller
/// total BitOps, then lexicographically smaller index sequence.
fn better(sense: Sense, cand: &Candidate, inc: &Candidate) -> bool {
    if cand.objective != inc.objective {
        return match sense {
            Sense::Minimize => cand.objective < inc.objective,
            Sense::Maximize => cand.objective > inc.objective,
        };
    }
    if cand.total_bitops != inc.total_bitops {
        return cand.total_bitops < inc.total_bitops;
    }
    cand.indices < inc.indices
}

fn candidate_to_policy(inst: &IlpInstance, cand: Candidate, sense: Sense) -> Policy {
    let choices = cand
        .indices
        .iter()
        .enumerate()
        .map(|(layer, &(w_idx, a_idx))| LayerChoice { layer, w_idx, a_idx, b_w: inst.bits[w_idx], b_a: inst.bits[a_idx] })
        .collect();
    Policy {
        choices,
        objective: cand.objective,
        total_bitops: cand.total_bitops,
        total_size_bits: cand.total_size,
        sense,
        nodes_explored: 0,
        wall_time: Duration::ZERO,
        instance_digest: inst.digest(),
    }
}

fn prune_margin(objective: f64) -> f64 {
    1e-9 * (1.0 + objective.abs())
}

fn infeasible_error(inst: &IlpInstance) -> Error {
    let (min_bitops, min_size_bits) = inst.min_costs();
    Error::InfeasibleBudget {
        min_bitops,
        min_size_bits,
        bitops_limit: inst.budget.bitops_limit,
        size_limit: inst.budget.size_limit_bits,
    }
}

// ---------------------------------------------------------------------------
// branch and bound

#[derive(Clone, Copy)]
struct Combo {
    w_idx: usize,
    a_idx: usize,
    importance: f64,
    bitops: u64,
    size: u64,
}

struct PreparedLayer {
    orig: usize,
    combos: Vec<Combo>,
    min_bitops: u64,
    min_size: u64,
}

/// One segment of a layer's efficiency frontier in one budget dimension:
/// spending `d_cost` more budget moves the objective by `d_value`.
struct Segment {
    /// position of the owning layer in search order
    pos: usize,
    d_cost: f64,
    d_value: f64,
    efficiency: f64,
}

/// Per-budget-dimension LP relaxation data: the objective value each layer
/// contributes at its cheapest combo, plus the globally efficiency-sorted
/// hull segments.
struct LpDimension {
    /// suffix sums (over search order) of per-layer base values
    suffix_base: Vec<f64>,
    segments: Vec<Segment>,
}

/// Convex efficiency frontier of (cost, value) points for one layer.
/// Minimize: value drops as cost grows, with diminishing returns.
/// Maximize: value rises as cost grows, with diminishing returns.
/// Returns hull points in ascending cost order.
fn efficiency_hull(points: &mut Vec<(f64, f64)>, sense: Sense) -> Vec<(f64, f64)> {
    // best value per distinct cost
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut frontier: Vec<(f64, f64)> = Vec::new();
    for &(c, v) in points.iter() {
        match frontier.last_mut() {
            Some((lc, lv)) if *lc == c => {
                if (sense == Sense::Minimize && v < *lv) || (sense == Sense::Maximize && v > *lv) {
                    *lv = v;
                }
            }
            _ => frontier.push((c, v)),
        }
    }
    // only points that improve on everything cheaper are usable
    let mut improving: Vec<(f64, f64)> = Vec::new();
    for (c, v) in frontier {
        let better = match (improving.last(), sense) {
            (None, _) => true,
            (Some(&(_, lv)), Sense::Minimize) => v < lv,
            (Some(&(_, lv)), Sense::Maximize) => v > lv,
        };
        if better {
            improving.push((c, v));
        }
    }
    // convex hull: efficiency |dv|/dc must decrease along the frontier
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in improving {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let gain_ab = (a.1 - b.1).abs();
            let gain_bp = (b.1 - p.1).abs();
            // drop b when the a->b segment is no more efficient than b->p
            if gain_ab * (p.0 - b.0) <= gain_bp * (b.0 - a.0) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

fn build_lp_dimension(layers: &[PreparedLayer], cost_of: impl Fn(&Combo) -> u64, sense: Sense) -> LpDimension {
    let mut base = vec![0.0; layers.len()];
    let mut segments = Vec::new();
    for (pos, layer) in layers.iter().enumerate() {
        let mut points: Vec<(f64, f64)> = layer.combos.iter().map(|c| (cost_of(c) as f64, c.importance)).collect();
        let hull = efficiency_hull(&mut points, sense);
        base[pos] = hull[0].1;
        for pair in hull.windows(2) {
            let d_cost = pair[1].0 - pair[0].0;
            let d_value = (pair[1].1 - pair[0].1).abs();
            segments.push(Segment { pos, d_cost, d_value, efficiency: d_value / d_cost });
        }
    }
    // stable sort keeps every layer's own segments in hull order on ties
    segments.sort_by(|a, b| b.efficiency.partial_cmp(&a.efficiency).unwrap());
    let mut suffix_base = vec![0.0; layers.len() + 1];
    for pos in (0..layers.len()).rev() {
        suffix_base[pos] = suffix_base[pos + 1] + base[pos];
    }
    LpDimension { suffix_base, segments }
}

impl LpDimension {
    /// LP completion bound for layers `depth..` given leftover budget
    /// `slack` beyond their summed minimum cost. For Minimize this is a
    /// lower bound (base minus the best achievable decrease); for Maximize
    /// an upper bound (base plus the best achievable increase).
    fn completion(&self, depth: usize, slack: f64, sense: Sense) -> f64 {
        let mut bound = self.suffix_base[depth];
        let mut remaining = slack;
        for seg in &self.segments {
            if remaining <= 0.0 {
                break;
            }
            if seg.pos < depth {
                continue;
            }
            let take = remaining.min(seg.d_cost);
            let delta = seg.efficiency * take;
            match sense {
                Sense::Minimize => bound -= delta,
                Sense::Maximize => bound += delta,
            }
            remaining -= take;
        }
        bound
    }
}

/// Remove combos that can never appear in the cascade-optimal policy: some
/// other combo is no worse on importance (per sense) and on both costs, and
/// wins the tie cascade when everything ties.
fn dominance_filter(combos: &[Combo], sense: Sense) -> Vec<Combo> {
    let obj_no_worse = |a: f64, b: f64| match sense {
        Sense::Minimize => a <= b,
        Sense::Maximize => a >= b,
    };
    let obj_strictly = |a: f64, b: f64| match sense {
        Sense::Minimize => a < b,
        Sense::Maximize => a > b,
    };
    combos
        .iter()
        .filter(|c| {
            !combos.iter().any(|d| {
                obj_no_worse(d.importance, c.importance)
                    && d.bitops <= c.bitops
                    && d.size <= c.size
                    && (obj_strictly(d.importance, c.importance)
                        || d.bitops < c.bitops
                        || (d.importance == c.importance
                            && d.bitops == c.bitops
                            && (d.w_idx, d.a_idx) < (c.w_idx, c.a_idx)))
            })
        })
        .copied()
        .collect()
}

struct Search<'a> {
    inst: &'a IlpInstance,
    sense: Sense,
    layers: Vec<PreparedLayer>,
    /// suffix sums over the search order, including the indexed layer
    suffix_min_bitops: Vec<u64>,
    suffix_min_size: Vec<u64>,
    lp_bitops: Option<LpDimension>,
    lp_size: Option<LpDimension>,
    incumbent: Option<Candidate>,
    /// indices by original layer, filled along the current path
    path: Vec<(usize, usize)>,
    nodes: u64,
}

impl<'a> Search<'a> {
    fn new(inst: &'a IlpInstance, sense: Sense) -> Self {
        let n = inst.num_options();
        let mut layers: Vec<PreparedLayer> = (0..inst.num_layers())
            .map(|l| {
                let mut combos = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        combos.push(Combo {
                            w_idx: i,
                            a_idx: j,
                            importance: inst.importance[l][i][j],
                            bitops: inst.bitops[l][i][j],
                            size: inst.size_bits[l][i],
                        });
                    }
                }
                let mut combos = dominance_filter(&combos, sense);
                // branch in cascade-preference order
                combos.sort_by(|a, b| {
                    let key = |c: &Combo| (c.bitops, c.w_idx, c.a_idx);
                    match sense {
                        Sense::Minimize => a.importance.partial_cmp(&b.importance).unwrap().then_with(|| key(a).cmp(&key(b))),
                        Sense::Maximize => b.importance.partial_cmp(&a.importance).unwrap().then_with(|| key(a).cmp(&key(b))),
                    }
                });
                let min_bitops = combos.iter().map(|c| c.bitops).min().unwrap();
                let min_size = combos.iter().map(|c| c.size).min().unwrap();
                PreparedLayer { orig: l, combos, min_bitops, min_size }
            })
            .collect();

        // Search high-spread layers first; spread on the budgeted cost.
        let spread = |p: &PreparedLayer| {
            if inst.budget.bitops_limit.is_some() {
                let max = p.combos.iter().map(|c| c.bitops).max().unwrap();
                max - p.min_bitops
            } else {
                let max = p.combos.iter().map(|c| c.size).max().unwrap();
                max - p.min_size
            }
        };
        layers.sort_by(|a, b| spread(b).cmp(&spread(a)).then(a.orig.cmp(&b.orig)));

        let depth = layers.len();
        let mut suffix_min_bitops = vec![0u64; depth + 1];
        let mut suffix_min_size = vec![0u64; depth + 1];
        for d in (0..depth).rev() {
            suffix_min_bitops[d] = suffix_min_bitops[d + 1] + layers[d].min_bitops;
            suffix_min_size[d] = suffix_min_size[d + 1] + layers[d].min_size;
        }
        let lp_bitops = inst
            .budget
            .bitops_limit
            .map(|_| build_lp_dimension(&layers, |c| c.bitops, sense));
        let lp_size = inst
            .budget
            .size_limit_bits
            .map(|_| build_lp_dimension(&layers, |c| c.size, sense));
        Search {
            inst,
            sense,
            layers,
            suffix_min_bitops,
            suffix_min_size,
            lp_bitops,
            lp_size,
            incumbent: None,
            path: vec![(0, 0); depth],
            nodes: 0,
        }
    }

    /// Best completion value for layers `depth..`, honoring what each layer
    /// could still individually afford. `None` when some layer has no
    /// affordable combo left.
    fn completion_bound(&self, depth: usize, used_bitops: u64, used_size: u64) -> Option<f64> {
        let mut total = 0.0;
        for d in depth..self.layers.len() {
            let layer = &self.layers[d];
            let allow_bitops = match self.inst.budget.bitops_limit {
                Some(limit) => {
                    let others = self.suffix_min_bitops[depth] - layer.min_bitops;
                    (limit as i128 - used_bitops as i128 - others as i128).max(-1) as i128
                }
                None => i128::MAX,
            };
            let allow_size = match self.inst.budget.size_limit_bits {
                Some(limit) => {
                    let others = self.suffix_min_size[depth] - layer.min_size;
                    (limit as i128 - used_size as i128 - others as i128).max(-1) as i128
                }
                None => i128::MAX,
            };
            let mut best: Option<f64> = None;
            for c in &layer.combos {
                if c.bitops as i128 <= allow_bitops && c.size as i128 <= allow_size {
                    best = Some(match (best, self.sense) {
                        (None, _) => c.importance,
                        (Some(b), Sense::Minimize) => b.min(c.importance),
                        (Some(b), Sense::Maximize) => b.max(c.importance),
                    });
                }
            }
            total += best?;
        }
        Some(total)
    }

    /// Tightest completion bound: the per-layer relaxation combined with the
    /// LP frontier bound of each active budget dimension. `None` means no
    /// feasible completion exists.
    fn combined_bound(&self, depth: usize, used_bitops: u64, used_size: u64) -> Option<f64> {
        let mut bound = self.completion_bound(depth, used_bitops, used_size)?;
        if let (Some(lp), Some(limit)) = (&self.lp_bitops, self.inst.budget.bitops_limit) {
            let slack = (limit - used_bitops - self.suffix_min_bitops[depth]) as f64;
            let lp_bound = lp.completion(depth, slack, self.sense);
            bound = match self.sense {
                Sense::Minimize => bound.max(lp_bound),
                Sense::Maximize => bound.min(lp_bound),
            };
        }
        if let (Some(lp), Some(limit)) = (&self.lp_size, self.inst.budget.size_limit_bits) {
            let slack = (limit - used_size - self.suffix_min_size[depth]) as f64;
            let lp_bound = lp.completion(depth, slack, self.sense);
            bound = match self.sense {
                Sense::Minimize => bound.max(lp_bound),
                Sense::Maximize => bound.min(lp_bound),
            };
        }
        Some(bound)
    }

    fn bound_beats_incumbent(&self, bound: f64) -> bool {
        match (&self.incumbent, self.sense) {
            (None, _) => true,
            // Keep exploring on ties so tie-breaks stay exhaustive; the
            // margin absorbs summation-order rounding in the bound, which
            // must never prune a candidate that ties the incumbent.
            (Some(inc), Sense::Minimize) => bound <= inc.objective + prune_margin(inc.objective),
            (Some(inc), Sense::Maximize) => bound >= inc.objective - prune_margin(inc.objective),
        }
    }

    fn dfs(&mut self, depth: usize, used_bitops: u64, used_size: u64, partial_obj: f64) {
        if depth == self.layers.len() {
            // canonical objective: re-summed in original layer order
            let objective = self
                .path
                .iter()
                .enumerate()
                .map(|(l, &(i, j))| self.inst.importance[l][i][j])
                .sum();
            let cand = Candidate {
                objective,
                total_bitops: used_bitops,
                total_size: used_size,
                indices: self.path.clone(),
            };
            let replace = match &self.incumbent {
                None => true,
                Some(inc) => better(self.sense, &cand, inc),
            };
            if replace {
                self.incumbent = Some(cand);
            }
            return;
        }
        let layer_index = depth;
        for k in 0..self.layers[layer_index].combos.len() {
            let combo = self.layers[layer_index].combos[k];
            let next_bitops = used_bitops + combo.bitops;
            let next_size = used_size + combo.size;
            if let Some(limit) = self.inst.budget.bitops_limit {
                if next_bitops + self.suffix_min_bitops[depth + 1] > limit {
                    continue;
                }
            }
            if let Some(limit) = self.inst.budget.size_limit_bits {
                if next_size + self.suffix_min_size[depth + 1] > limit {
                    continue;
                }
            }
            let next_obj = partial_obj + combo.importance;
            match self.combined_bound(depth + 1, next_bitops, next_size) {
                Some(rest) if self.bound_beats_incumbent(next_obj + rest) => {}
                _ => continue,
            }
            self.nodes += 1;
            self.path[self.layers[layer_index].orig] = (combo.w_idx, combo.a_idx);
            self.dfs(depth + 1, next_bitops, next_size, next_obj);
        }
    }
}

pub fn solve_with_sense(inst: &IlpInstance, sense: Sense) -> Result<Policy> {
    inst.validate()?;
    let start = Instant::now();
    let mut search = Search::new(inst, sense);
    search.dfs(0, 0, 0, 0.0);
    let nodes = search.nodes;
    match search.incumbent.take() {
        Some(cand) => {
            let mut policy = candidate_to_policy(inst, cand, sense);
            policy.nodes_explored = nodes;
            policy.wall_time = start.elapsed();
            Ok(policy)
        }
        None => Err(infeasible_error(inst)),
    }
}

/// Minimize summed importance under the budget.
pub fn solve_exact(inst: &IlpInstance) -> Result<Policy> {
    solve_with_sense(inst, Sense::Minimize)
}

/// Ablation mode: maximize summed importance under the same constraints,
/// handing sensitive layers the fewest bits.
pub fn solve_reversed(inst: &IlpInstance) -> Result<Policy> {
    solve_with_sense(inst, Sense::Maximize)
}

// ---------------------------------------------------------------------------
// exhaustive oracle

const ORACLE_LIMIT: f64 = 1e7;

pub fn brute_force_with_sense(inst: &IlpInstance, sense: Sense) -> Result<Policy> {
    inst.validate()?;
    let (layers, n) = (inst.num_layers(), inst.num_options());
    let assignments = (n as f64).powi(2 * layers as i32);
    if assignments > ORACLE_LIMIT {
        return Err(Error::InstanceTooLarge { assignments, limit: ORACLE_LIMIT });
    }
    let start = Instant::now();
    let mut best: Option<Candidate> = None;
    let mut indices = vec![(0usize, 0usize); layers];
    let mut evaluated = 0u64;
    enumerate(inst, sense, 0, 0.0, 0, 0, &mut indices, &mut best, &mut evaluated);
    match best {
        Some(cand) => {
            let mut policy = candidate_to_policy(inst, cand, sense);
            policy.nodes_explored = evaluated;
            policy.wall_time = start.elapsed();
            Ok(policy)
        }
        None => Err(infeasible_error(inst)),
    }
}

/// Plain exhaustive enumeration; the independent reference for `solve_exact`.
pub fn brute_force_oracle(inst: &IlpInstance) -> Result<Policy> {
    brute_force_with_sense(inst, Sense::Minimize)
}

pub fn brute_force_oracle_reversed(inst: &IlpInstance) -> Result<Policy> {
    brute_force_with_sense(inst, Sense::Maximize)
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    inst: &IlpInstance,
    sense: Sense,
    layer: usize,
    obj: f64,
    bitops: u64,
    size: u64,
    indices: &mut Vec<(usize, usize)>,
    best: &mut Option<Candidate>,
    evaluated: &mut u64,
) {
    if layer == inst.num_layers() {
        *evaluated += 1;
        if let Some(limit) = inst.budget.bitops_limit {
            if bitops > limit {
                return;
            }
        }
        if let Some(limit) = inst.budget.size_limit_bits {
            if size > limit {
                return;
            }
        }
        let cand = Candidate { objective: obj, total_bitops: bitops, total_size: size, indices: indices.clone() };
        let replace = match best {
            None => true,
            Some(inc) => better(sense, &cand, inc),
        };
        if replace {
            *best = Some(cand);
        }
        return;
    }
    let n = inst.num_options();
    for i in 0..n {
        for j in 0..n {
            indices[layer] = (i, j);
            enumerate(
                inst,
                sense,
                layer + 1,
                obj + inst.importance[layer][i][j],
                bitops + inst.bitops[layer][i][j],
                size + inst.size_bits[layer][i],
                indices,
                best,
                evaluated,
            );
        }
    }
}
