//! Parametric instance families.
//!
//! The network (topology, costs, reference parameters) is a pure function of
//! `structure_seed`; an instance seed only perturbs demands (MMCNP-lite) or
//! per-train locomotive bounds (SLAP-lite). Variable and row order therefore
//! never change within a family.
//!
//! All randomness comes from ChaCha8 streams seeded through
//! [`derive_seed`](crate::util::derive_seed), which gives identical draws on
//! every platform.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mip::{MipInstance, Sense, VarKind};
use crate::util::derive_seed;

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("invalid family config: {0}")]
    Config(String),
    #[error("path enumeration exceeded {cap} paths; reduce facilities, hops or truck types")]
    TooManyPaths { cap: usize },
    #[error("commodity {0} has no path from origin to destination; adjust arc count or structure seed")]
    Unreachable(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruckType {
    pub capacity: f64,
    /// Multiplier on the distance-based per-truck cost.
    pub cost_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmcnpConfig {
    pub vendors: usize,
    pub fcs: usize,
    pub lmds: usize,
    /// Number of candidate arcs kept; all candidates when larger.
    pub arcs: usize,
    pub commodities: usize,
    pub truck_types: Vec<TruckType>,
    pub allow_direct: bool,
    /// Whether commodities may terminate at a fulfillment center.
    pub commodity_to_fc: bool,
    pub max_hops: usize,
    pub paths_per_commodity: usize,
    pub max_paths: usize,
    /// Reference demands are drawn uniformly from this range.
    pub demand_ref: (f64, f64),
    /// Normal standard deviation as a fraction of the reference demand.
    pub demand_spread: f64,
    /// Demands are clamped to `ref * (1 -/+ demand_clamp)`.
    pub demand_clamp: f64,
    pub truck_cost_per_km: f64,
    pub truck_cost_base: f64,
    pub unit_cost_per_km: f64,
}

impl Default for MmcnpConfig {
    fn default() -> Self {
        MmcnpConfig {
            vendors: 3,
            fcs: 2,
            lmds: 3,
            arcs: 60,
            commodities: 12,
            truck_types: vec![
                TruckType { capacity: 8.0, cost_scale: 1.0 },
                TruckType { capacity: 16.0, cost_scale: 1.7 },
                TruckType { capacity: 30.0, cost_scale: 2.8 },
            ],
            allow_direct: true,
            commodity_to_fc: true,
            max_hops: 3,
            paths_per_commodity: 16,
            max_paths: 200,
            demand_ref: (3.0, 12.0),
            demand_spread: 0.25,
            demand_clamp: 0.6,
            truck_cost_per_km: 0.6,
            truck_cost_base: 20.0,
            unit_cost_per_km: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlapConfig {
    pub stations: usize,
    pub periods: usize,
    pub trains: usize,
    /// Reference lower-bound range and upper-bound range for train locomotives.
    pub lb_ref: (i64, i64),
    pub ub_ref: (i64, i64),
    pub power_req: (i64, i64),
    /// Half-width of the uniform perturbation around each reference bound.
    pub bound_spread: f64,
    /// Upper clamp on any train's locomotive bound.
    pub max_locos: i64,
    pub light_capacity: i64,
    pub max_light_trains: i64,
    pub fleet_cap: i64,
    pub wait_cost: f64,
    pub train_loco_cost: f64,
    pub light_loco_cost: f64,
    pub light_train_cost: f64,
}

impl Default for SlapConfig {
    fn default() -> Self {
        SlapConfig {
            stations: 5,
            periods: 4,
            trains: 30,
            lb_ref: (0, 1),
            ub_ref: (3, 5),
            power_req: (1, 3),
            bound_spread: 1.5,
            max_locos: 6,
            light_capacity: 4,
            max_light_trains: 2,
            fleet_cap: 200,
            wait_cost: 1.0,
            train_loco_cost: 2.0,
            light_loco_cost: 1.0,
            light_train_cost: 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum FamilyConfig {
    MmcnpLite {
        structure_seed: u64,
        #[serde(flatten)]
        params: MmcnpConfig,
    },
    SlapLite {
        structure_seed: u64,
        #[serde(flatten)]
        params: SlapConfig,
    },
}

impl FamilyConfig {
    pub fn mmcnp(structure_seed: u64) -> Self {
        FamilyConfig::MmcnpLite { structure_seed, params: MmcnpConfig::default() }
    }

    pub fn slap(structure_seed: u64) -> Self {
        FamilyConfig::SlapLite { structure_seed, params: SlapConfig::default() }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            FamilyConfig::MmcnpLite { .. } => "mmcnp-lite",
            FamilyConfig::SlapLite { .. } => "slap-lite",
        }
    }

    pub fn structure_seed(&self) -> u64 {
        match self {
            FamilyConfig::MmcnpLite { structure_seed, .. } | FamilyConfig::SlapLite { structure_seed, .. } => {
                *structure_seed
            }
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::Config(m));
        match self {
            FamilyConfig::MmcnpLite { params: p, .. } => {
                if p.vendors == 0 || p.fcs + p.lmds == 0 || p.commodities == 0 || p.arcs == 0 {
                    return bad("sizes must be positive".into());
                }
                if p.truck_types.is_empty() || p.truck_types.iter().any(|t| !(t.capacity > 0.0) || !(t.cost_scale > 0.0)) {
                    return bad("truck types need positive capacity and cost scale".into());
                }
                if p.max_hops == 0 || p.paths_per_commodity == 0 {
                    return bad("max_hops and paths_per_commodity must be positive".into());
                }
                if !(p.demand_ref.0 > 0.0 && p.demand_ref.0 <= p.demand_ref.1) {
                    return bad(format!("demand_ref {:?} must be a positive range", p.demand_ref));
                }
                if !(0.0..1.0).contains(&p.demand_clamp) || p.demand_spread < 0.0 {
                    return bad("demand_clamp must lie in [0, 1) and demand_spread be non-negative".into());
                }
                let dests = p.lmds + if p.commodity_to_fc { p.fcs } else { 0 };
                if p.commodities > p.vendors * dests {
                    return bad(format!("{} commodities exceed {} origin-destination pairs", p.commodities, p.vendors * dests));
                }
            }
            FamilyConfig::SlapLite { params: p, .. } => {
                if p.stations < 2 || p.periods < 2 || p.trains == 0 {
                    return bad("need at least 2 stations, 2 periods and one train".into());
                }
                if p.power_req.0 < 0 || p.power_req.0 > p.power_req.1 || p.power_req.1 > p.max_locos {
                    return bad("power requirement range must lie within [0, max_locos]".into());
                }
                if p.lb_ref.0 < 0 || p.lb_ref.0 > p.lb_ref.1 || p.ub_ref.0 > p.ub_ref.1 {
                    return bad("reference bound ranges must be ordered and non-negative".into());
                }
                if p.max_locos > p.light_capacity * p.max_light_trains {
                    return bad("a full train's locomotives must fit on its return light arc".into());
                }
                if p.bound_spread < 0.0 {
                    return bad("bound_spread must be non-negative".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FacilityKind {
    Vendor,
    Fc,
    Lmd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facility {
    pub kind: FacilityKind,
    pub pos: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruckArc {
    pub from: usize,
    pub to: usize,
    pub truck_type: usize,
    pub capacity: f64,
    pub truck_cost: f64,
    pub unit_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Commodity {
    pub origin: usize,
    pub dest: usize,
    pub demand_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub commodity: usize,
    pub arcs: Vec<usize>,
    pub unit_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmcnpNetwork {
    pub facilities: Vec<Facility>,
    pub arcs: Vec<TruckArc>,
    pub commodities: Vec<Commodity>,
    pub paths: Vec<Path>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlapArcKind {
    Wait,
    Train,
    Light,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlapArc {
    pub kind: SlapArcKind,
    pub from: usize,
    pub to: usize,
    /// Train arcs: reference (lb, ub) and required locomotives.
    pub lb_ref: i64,
    pub ub_ref: i64,
    pub power_req: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlapNetwork {
    pub stations: usize,
    pub periods: usize,
    pub arcs: Vec<SlapArc>,
}

impl SlapNetwork {
    pub fn node(&self, station: usize, period: usize) -> usize {
        station * self.periods + period
    }

    pub fn train_arcs(&self) -> impl Iterator<Item = (usize, &SlapArc)> {
        self.arcs.iter().enumerate().filter(|(_, a)| a.kind == SlapArcKind::Train)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Network {
    Mmcnp(MmcnpNetwork),
    Slap(SlapNetwork),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationDraw {
    pub instance_seed: u64,
    /// MMCNP-lite: one demand per commodity. SLAP-lite: `(lb, ub)` per train
    /// arc, flattened.
    pub values: Vec<f64>,
}

/// Hard cap on enumerated paths per commodity before truncation.
const PATH_ENUM_CAP: usize = 100_000;

pub fn build_reference_network(cfg: &FamilyConfig) -> Result<Network, GenError> {
    cfg.validate()?;
    match cfg {
        FamilyConfig::MmcnpLite { structure_seed, params } => build_mmcnp(*structure_seed, params).map(Network::Mmcnp),
        FamilyConfig::SlapLite { structure_seed, params } => Ok(Network::Slap(build_slap(*structure_seed, params))),
    }
}

fn build_mmcnp(seed: u64, p: &MmcnpConfig) -> Result<MmcnpNetwork, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "mmcnp-structure", 0));
    let mut facilities = Vec::new();
    // vendors on the left, FCs in the middle, LMDs on the right of a 100 x 100 map
    for (kind, count, x0) in [(FacilityKind::Vendor, p.vendors, 0.0), (FacilityKind::Fc, p.fcs, 35.0), (FacilityKind::Lmd, p.lmds, 70.0)] {
        for _ in 0..count {
            let pos = (x0 + rng.random_range(0.0..30.0), rng.random_range(0.0..100.0));
            facilities.push(Facility { kind, pos });
        }
    }
    let dist = |a: usize, b: usize| {
        let (p1, p2) = (facilities[a].pos, facilities[b].pos);
        ((p1.0 - p2.0).powi(2) + (p1.1 - p2.1).powi(2)).sqrt()
    };
    let of_kind = |k: FacilityKind| -> Vec<usize> { (0..facilities.len()).filter(|&i| facilities[i].kind == k).collect() };
    let (vendors, fcs, lmds) = (of_kind(FacilityKind::Vendor), of_kind(FacilityKind::Fc), of_kind(FacilityKind::Lmd));

    let mut pairs = Vec::new();
    for &v in &vendors {
        pairs.extend(fcs.iter().map(|&f| (v, f)));
        if p.allow_direct {
            pairs.extend(lmds.iter().map(|&l| (v, l)));
        }
    }
    for &f in &fcs {
        pairs.extend(lmds.iter().map(|&l| (f, l)));
        pairs.extend(fcs.iter().filter(|&&g| g != f).map(|&g| (f, g)));
    }
    for &l in &lmds {
        pairs.extend(lmds.iter().filter(|&&m| m != l).map(|&m| (l, m)));
    }
    let mut candidates: Vec<(usize, usize, usize)> =
        pairs.iter().flat_map(|&(a, b)| (0..p.truck_types.len()).map(move |t| (a, b, t))).collect();

    let mut dests = lmds.clone();
    if p.commodity_to_fc {
        dests.extend(&fcs);
    }
    let mut od: Vec<(usize, usize)> = vendors.iter().flat_map(|&v| dests.iter().map(move |&d| (v, d))).collect();
    od.shuffle(&mut rng);
    od.truncate(p.commodities);
    od.sort_unstable();
    let commodities: Vec<Commodity> = od
        .iter()
        .map(|&(o, d)| Commodity { origin: o, dest: d, demand_ref: rng.random_range(p.demand_ref.0..=p.demand_ref.1) })
        .collect();

    // Keep a random subset of candidate arcs, retrying until every commodity
    // can reach its destination.
    let keep = p.arcs.min(candidates.len());
    let mut chosen = None;
    for _attempt in 0..64 {
        candidates.shuffle(&mut rng);
        let mut subset: Vec<(usize, usize, usize)> = candidates[..keep].to_vec();
        subset.sort_unstable();
        let reach = commodities.iter().position(|c| !reachable(&subset, c.origin, c.dest, p.max_hops));
        match reach {
            None => {
                chosen = Some(subset);
                break;
            }
            Some(_) if keep == candidates.len() => break,
            Some(_) => {}
        }
    }
    let subset = match chosen {
        Some(s) => s,
        None => {
            let mut all = candidates.clone();
            all.sort_unstable();
            let k = commodities.iter().position(|c| !reachable(&all[..keep], c.origin, c.dest, p.max_hops)).unwrap_or(0);
            return Err(GenError::Unreachable(k));
        }
    };
    let arcs: Vec<TruckArc> = subset
        .iter()
        .map(|&(a, b, t)| {
            let d = dist(a, b);
            let tt = &p.truck_types[t];
            TruckArc {
                from: a,
                to: b,
                truck_type: t,
                capacity: tt.capacity,
                truck_cost: (p.truck_cost_base + p.truck_cost_per_km * d) * tt.cost_scale,
                unit_cost: p.unit_cost_per_km * d,
            }
        })
        .collect();

    let mut paths = Vec::new();
    for (k, c) in commodities.iter().enumerate() {
        let mut found: Vec<Vec<usize>> = Vec::new();
        let mut stack = vec![(c.origin, Vec::<usize>::new(), vec![c.origin])];
        while let Some((at, used, visited)) = stack.pop() {
            if at == c.dest {
                found.push(used);
                if found.len() > PATH_ENUM_CAP {
                    return Err(GenError::TooManyPaths { cap: PATH_ENUM_CAP });
                }
                continue;
            }
            if used.len() == p.max_hops {
                continue;
            }
            for (ai, a) in arcs.iter().enumerate() {
                if a.from == at && !visited.contains(&a.to) {
                    let mut u = used.clone();
                    u.push(ai);
                    let mut v = visited.clone();
                    v.push(a.to);
                    stack.push((a.to, u, v));
                }
            }
        }
        if found.is_empty() {
            return Err(GenError::Unreachable(k));
        }
        let cost = |path: &Vec<usize>| path.iter().map(|&a| arcs[a].unit_cost + arcs[a].truck_cost / arcs[a].capacity).sum::<f64>();
        found.sort_by(|a, b| cost(a).total_cmp(&cost(b)).then_with(|| a.cmp(b)));
        found.truncate(p.paths_per_commodity);
        for path in found {
            let unit_cost = path.iter().map(|&a| arcs[a].unit_cost).sum();
            paths.push(Path { commodity: k, arcs: path, unit_cost });
        }
    }
    if paths.len() > p.max_paths {
        return Err(GenError::TooManyPaths { cap: p.max_paths });
    }
    Ok(MmcnpNetwork { facilities, arcs, commodities, paths })
}

fn reachable(arcs: &[(usize, usize, usize)], from: usize, to: usize, hops: usize) -> bool {
    let mut frontier = BTreeSet::from([from]);
    let mut seen = frontier.clone();
    for _ in 0..hops {
        let mut next = BTreeSet::new();
        for &(a, b, _) in arcs {
            if frontier.contains(&a) && seen.insert(b) {
                next.insert(b);
            }
        }
        if seen.contains(&to) {
            return true;
        }
        frontier = next;
    }
    seen.contains(&to)
}

fn build_slap(seed: u64, p: &SlapConfig) -> SlapNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "slap-structure", 0));
    let net_nodes = |s: usize, t: usize| s * p.periods + t;
    let mut arcs = Vec::new();
    for s in 0..p.stations {
        for t in 0..p.periods {
            arcs.push(SlapArc {
                kind: SlapArcKind::Wait,
                from: net_nodes(s, t),
                to: net_nodes(s, (t + 1) % p.periods),
                lb_ref: 0,
                ub_ref: p.fleet_cap,
                power_req: 0,
            });
        }
    }
    let mut trains = Vec::new();
    for _ in 0..p.trains {
        let s = rng.random_range(0..p.stations);
        let mut d = rng.random_range(0..p.stations - 1);
        if d >= s {
            d += 1;
        }
        let t = rng.random_range(0..p.periods);
        let dur = rng.random_range(1..=2.min(p.periods - 1));
        let req = rng.random_range(p.power_req.0..=p.power_req.1);
        let lb = rng.random_range(p.lb_ref.0..=p.lb_ref.1).min(req);
        let ub = rng.random_range(p.ub_ref.0..=p.ub_ref.1).clamp(req, p.max_locos);
        trains.push((s, d, t, dur, lb, ub, req));
    }
    for &(s, d, t, dur, lb, ub, req) in &trains {
        arcs.push(SlapArc {
            kind: SlapArcKind::Train,
            from: net_nodes(s, t),
            to: net_nodes(d, (t + dur) % p.periods),
            lb_ref: lb,
            ub_ref: ub,
            power_req: req,
        });
    }
    // one return light-travel arc per train, departing on arrival
    for &(s, d, t, dur, _, _, _) in &trains {
        let back = rng.random_range(1..=2.min(p.periods - 1));
        let arr = (t + dur) % p.periods;
        arcs.push(SlapArc {
            kind: SlapArcKind::Light,
            from: net_nodes(d, arr),
            to: net_nodes(s, (arr + back) % p.periods),
            lb_ref: 0,
            ub_ref: p.light_capacity * p.max_light_trains,
            power_req: 0,
        });
    }
    SlapNetwork { stations: p.stations, periods: p.periods, arcs }
}

pub fn sample_perturbation(cfg: &FamilyConfig, instance_seed: u64) -> Result<PerturbationDraw, GenError> {
    let net = build_reference_network(cfg)?;
    Ok(sample_from_network(cfg, &net, instance_seed))
}

fn sample_from_network(cfg: &FamilyConfig, net: &Network, instance_seed: u64) -> PerturbationDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.structure_seed(), "perturb", instance_seed));
    let values = match (cfg, net) {
        (FamilyConfig::MmcnpLite { params: p, .. }, Network::Mmcnp(n)) => n
            .commodities
            .iter()
            .map(|c| {
                let r = c.demand_ref;
                let (lo, hi) = (r * (1.0 - p.demand_clamp), r * (1.0 + p.demand_clamp));
                let sigma = p.demand_spread * r;
                let v = if sigma > 0.0 { Normal::new(r, sigma).expect("finite sigma").sample(&mut rng) } else { r };
                v.clamp(lo, hi)
            })
            .collect(),
        (FamilyConfig::SlapLite { params: p, .. }, Network::Slap(n)) => {
            let mut out = Vec::new();
            for (_, a) in n.train_arcs() {
                let draw = |rng: &mut ChaCha8Rng, r: i64| -> f64 {
                    if p.bound_spread > 0.0 {
                        rng.random_range(r as f64 - p.bound_spread..=r as f64 + p.bound_spread)
                    } else {
                        r as f64
                    }
                };
                let lo = draw(&mut rng, a.lb_ref).round().clamp(0.0, a.power_req as f64);
                let hi = draw(&mut rng, a.ub_ref).round().clamp(a.power_req as f64, p.max_locos as f64);
                out.push(lo.min(hi));
                out.push(lo.max(hi));
            }
            out
        }
        _ => unreachable!("network built from the same config"),
    };
    PerturbationDraw { instance_seed, values }
}

/// The reference draw: every parameter at its reference value.
pub fn reference_draw(cfg: &FamilyConfig, net: &Network) -> PerturbationDraw {
    let values = match net {
        Network::Mmcnp(n) => n.commodities.iter().map(|c| c.demand_ref).collect(),
        Network::Slap(n) => n.train_arcs().flat_map(|(_, a)| [a.lb_ref as f64, a.ub_ref as f64]).collect(),
    };
    let _ = cfg;
    PerturbationDraw { instance_seed: 0, values }
}

pub fn gen_instance(cfg: &FamilyConfig, instance_seed: u64) -> Result<MipInstance, GenError> {
    let net = build_reference_network(cfg)?;
    let draw = sample_from_network(cfg, &net, instance_seed);
    Ok(assemble(cfg, &net, &draw))
}

/// Builds the MIP for a given network and parameter draw.
pub fn assemble(cfg: &FamilyConfig, net: &Network, draw: &PerturbationDraw) -> MipInstance {
    let name = format!("{}-{}", cfg.family_name(), draw.instance_seed);
    let mut m = MipInstance::new(name, cfg.family_name(), draw.instance_seed);
    match (cfg, net) {
        (FamilyConfig::MmcnpLite { params: p, .. }, Network::Mmcnp(n)) => {
            for (pi, path) in n.paths.iter().enumerate() {
                m.add_var(format!("f{pi}_k{}", path.commodity), VarKind::Continuous, 0.0, f64::INFINITY, path.unit_cost);
            }
            // truck bounds use the clamp ceiling so every draw stays feasible
            let mut through = vec![0.0; n.arcs.len()];
            for (k, c) in n.commodities.iter().enumerate() {
                let hi = c.demand_ref * (1.0 + p.demand_clamp);
                let arcs: BTreeSet<usize> =
                    n.paths.iter().filter(|q| q.commodity == k).flat_map(|q| q.arcs.iter().copied()).collect();
                for a in arcs {
                    through[a] += hi;
                }
            }
            let truck0 = m.num_vars();
            for (ai, a) in n.arcs.iter().enumerate() {
                let ub = (through[ai] / a.capacity).ceil().max(1.0);
                m.add_var(format!("y{ai}_{}_{}_t{}", a.from, a.to, a.truck_type), VarKind::GeneralInteger, 0.0, ub, a.truck_cost);
            }
            for k in 0..n.commodities.len() {
                let terms = n.paths.iter().enumerate().filter(|(_, q)| q.commodity == k).map(|(pi, _)| (pi, 1.0)).collect();
                m.add_row(terms, Sense::EQ, draw.values[k]);
            }
            for (ai, a) in n.arcs.iter().enumerate() {
                let mut terms: Vec<(usize, f64)> =
                    n.paths.iter().enumerate().filter(|(_, q)| q.arcs.contains(&ai)).map(|(pi, _)| (pi, 1.0)).collect();
                terms.push((truck0 + ai, -a.capacity));
                m.add_row(terms, Sense::LE, 0.0);
            }
        }
        (FamilyConfig::SlapLite { params: p, .. }, Network::Slap(n)) => {
            let mut loco_var = vec![0usize; n.arcs.len()];
            let mut k = 0;
            for (ai, a) in n.arcs.iter().enumerate() {
                let (lb, ub, cost, tag) = match a.kind {
                    SlapArcKind::Wait => {
                        // ownership is charged on the arc wrapping the week
                        let wraps = a.to % n.periods == 0;
                        (0.0, p.fleet_cap as f64, if wraps { p.wait_cost * 10.0 } else { p.wait_cost }, "w")
                    }
                    SlapArcKind::Train => {
                        let (lb, ub) = (draw.values[2 * k], draw.values[2 * k + 1]);
                        k += 1;
                        (lb, ub, p.train_loco_cost, "x")
                    }
                    SlapArcKind::Light => (0.0, (p.light_capacity * p.max_light_trains) as f64, p.light_loco_cost, "l"),
                };
                loco_var[ai] = m.add_var(format!("{tag}{ai}_{}_{}", a.from, a.to), VarKind::GeneralInteger, lb, ub, cost);
            }
            let mut light_trains = Vec::new();
            for (ai, a) in n.arcs.iter().enumerate() {
                if a.kind == SlapArcKind::Light {
                    let j = m.add_var(format!("n{ai}"), VarKind::GeneralInteger, 0.0, p.max_light_trains as f64, p.light_train_cost);
                    light_trains.push((ai, j));
                }
            }
            for node in 0..n.stations * n.periods {
                let mut terms = Vec::new();
                for (ai, a) in n.arcs.iter().enumerate() {
                    if a.to == node && a.from != node {
                        terms.push((loco_var[ai], 1.0));
                    } else if a.from == node && a.to != node {
                        terms.push((loco_var[ai], -1.0));
                    }
                }
                m.add_row(terms, Sense::EQ, 0.0);
            }
            for (ai, a) in n.train_arcs() {
                m.add_row(vec![(loco_var[ai], 1.0)], Sense::GE, a.power_req as f64);
            }
            for (ai, j) in light_trains {
                m.add_row(vec![(loco_var[ai], 1.0), (j, -(p.light_capacity as f64))], Sense::LE, 0.0);
            }
        }
        _ => unreachable!("network built from the same config"),
    }
    m
}

/// A feasible point for `inst`, constructed directly from the network:
/// cheapest-path routing for MMCNP-lite, returned light moves plus balancing
/// waits for SLAP-lite.
pub fn reference_solution(cfg: &FamilyConfig, net: &Network, inst: &MipInstance) -> Vec<f64> {
    let mut x = vec![0.0; inst.num_vars()];
    match (cfg, net) {
        (FamilyConfig::MmcnpLite { .. }, Network::Mmcnp(n)) => {
            let np = n.paths.len();
            let mut load = vec![0.0; n.arcs.len()];
            for k in 0..n.commodities.len() {
                let demand = inst.rows[k].rhs;
                let best = n
                    .paths
                    .iter()
                    .enumerate()
                    .filter(|(_, q)| q.commodity == k)
                    .min_by(|a, b| a.1.unit_cost.total_cmp(&b.1.unit_cost))
                    .map(|(pi, _)| pi)
                    .expect("every commodity has a path");
                x[best] = demand;
                for &a in &n.paths[best].arcs {
                    load[a] += demand;
                }
            }
            for (ai, a) in n.arcs.iter().enumerate() {
                x[np + ai] = (load[ai] / a.capacity - 1e-9).ceil().max(0.0);
            }
        }
        (FamilyConfig::SlapLite { params: p, .. }, Network::Slap(n)) => {
            let trains: Vec<usize> = n.train_arcs().map(|(ai, _)| ai).collect();
            let lights: Vec<usize> = (0..n.arcs.len()).filter(|&ai| n.arcs[ai].kind == SlapArcKind::Light).collect();
            let mut net_flow = vec![0i64; n.stations * n.periods];
            for (k, (&ta, &la)) in trains.iter().zip(&lights).enumerate() {
                let count = (inst.lower[ta].max(n.arcs[ta].power_req as f64)) as i64;
                let _ = k;
                x[ta] = count as f64;
                x[la] = count as f64;
                for &ai in &[ta, la] {
                    net_flow[n.arcs[ai].from] -= count;
                    net_flow[n.arcs[ai].to] += count;
                }
            }
            // wait flows: w_t = w_{t-1} + net(t), shifted to be non-negative
            for s in 0..n.stations {
                let mut w = vec![0i64; n.periods];
                let mut acc = 0;
                for t in 0..n.periods {
                    // wait arc t leaves node t: w_t = w_{t-1} + net_flow(t)
                    acc += net_flow[n.node(s, t)];
                    w[t] = acc;
                }
                let shift = -w.iter().copied().min().unwrap_or(0).min(0);
                for t in 0..n.periods {
                    x[s * n.periods + t] = (w[t] + shift) as f64;
                }
            }
            let first_light_train = inst.num_vars() - lights.len();
            for (k, &la) in lights.iter().enumerate() {
                x[first_light_train + k] = (x[la] / p.light_capacity as f64).ceil();
            }
        }
        _ => unreachable!("network built from the same config"),
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> FamilyConfig {
        FamilyConfig::MmcnpLite {
            structure_seed: 1,
            params: MmcnpConfig {
                vendors: 1,
                fcs: 1,
                lmds: 1,
                arcs: 100,
                commodities: 1,
                truck_types: vec![TruckType { capacity: 10.0, cost_scale: 1.0 }],
                allow_direct: false,
                commodity_to_fc: false,
                demand_ref: (5.0, 5.0),
                ..MmcnpConfig::default()
            },
        }
    }

    #[test]
    fn chain_network_has_two_arcs_one_path() {
        let Network::Mmcnp(n) = build_reference_network(&chain()).unwrap() else { panic!() };
        assert_eq!(n.arcs.len(), 2);
        assert_eq!(n.paths.len(), 1);
        assert_eq!(n.paths[0].arcs.len(), 2);
    }

    #[test]
    fn same_structure_seed_same_network() {
        let cfg = FamilyConfig::mmcnp(9);
        assert_eq!(build_reference_network(&cfg).unwrap(), build_reference_network(&cfg).unwrap());
        let s = FamilyConfig::slap(9);
        assert_eq!(build_reference_network(&s).unwrap(), build_reference_network(&s).unwrap());
    }

    #[test]
    fn default_desk_sizes() {
        let Network::Mmcnp(n) = build_reference_network(&FamilyConfig::mmcnp(3)).unwrap() else { panic!() };
        assert_eq!(n.facilities.len(), 8);
        assert_eq!(n.arcs.len(), 60);
        assert_eq!(n.commodities.len(), 12);
        assert!(n.paths.len() <= 200);
        for k in 0..12 {
            assert!(n.paths.iter().any(|p| p.commodity == k));
        }
        let Network::Slap(s) = build_reference_network(&FamilyConfig::slap(3)).unwrap() else { panic!() };
        assert_eq!(s.stations * s.periods, 20);
        assert_eq!(s.arcs.len(), 80);
    }

    #[test]
    fn zero_spread_draw_is_reference() {
        let mut cfg = FamilyConfig::mmcnp(4);
        if let FamilyConfig::MmcnpLite { params, .. } = &mut cfg {
            params.demand_spread = 0.0;
        }
        let net = build_reference_network(&cfg).unwrap();
        let d = sample_perturbation(&cfg, 17).unwrap();
        assert_eq!(d.values, reference_draw(&cfg, &net).values);
        let a = gen_instance(&cfg, 17).unwrap();
        let r = assemble(&cfg, &net, &PerturbationDraw { instance_seed: 17, ..reference_draw(&cfg, &net) });
        assert_eq!(a, r);
    }

    #[test]
    fn clamp_holds_for_huge_sigma() {
        let mut cfg = chain();
        if let FamilyConfig::MmcnpLite { params, .. } = &mut cfg {
            params.demand_spread = 100.0;
            params.demand_clamp = 0.2;
        }
        for s in 0..500 {
            let v = sample_perturbation(&cfg, s).unwrap().values[0];
            assert!((4.0..=6.0).contains(&v), "{v}");
        }
    }

    #[test]
    fn slap_bounds_are_ordered() {
        let cfg = FamilyConfig::slap(2);
        for s in 0..50 {
            let d = sample_perturbation(&cfg, s).unwrap();
            for pair in d.values.chunks(2) {
                assert!(pair[0] <= pair[1]);
            }
        }
    }

    #[test]
    fn structure_is_stable_across_instance_seeds() {
        for cfg in [FamilyConfig::mmcnp(5), FamilyConfig::slap(5)] {
            let a = gen_instance(&cfg, 1).unwrap();
            let b = gen_instance(&cfg, 2).unwrap();
            assert_eq!(a.num_vars(), b.num_vars());
            assert_eq!(a.num_rows(), b.num_rows());
            assert_eq!(a.integer_indices(), b.integer_indices());
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.objective, b.objective);
        }
    }

    #[test]
    fn reference_solutions_are_feasible() {
        for cfg in [FamilyConfig::mmcnp(6), FamilyConfig::slap(6), chain()] {
            let net = build_reference_network(&cfg).unwrap();
            for seed in 0..20 {
                let inst = gen_instance(&cfg, seed).unwrap();
                inst.validate().unwrap();
                let x = reference_solution(&cfg, &net, &inst);
                let rep = inst.check_feasibility(&x, 1e-6).unwrap();
                assert!(rep.feasible, "{} seed {seed}: {rep:?}", cfg.family_name());
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = FamilyConfig::mmcnp(1);
        if let FamilyConfig::MmcnpLite { params, .. } = &mut cfg {
            params.commodities = 100;
        }
        assert!(matches!(build_reference_network(&cfg), Err(GenError::Config(_))));
        let mut s = FamilyConfig::slap(1);
        if let FamilyConfig::SlapLite { params, .. } = &mut s {
            params.stations = 1;
        }
        assert!(s.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = FamilyConfig::mmcnp(11);
        let text = toml::to_string(&cfg).unwrap();
        let back: FamilyConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
