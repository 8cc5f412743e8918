//! Baseline routing algorithms and their per-hop candidate sets.
//!
//! All functions here are pure: they read the topology, the BFS distance
//! table and the packet's [`RouteState`], and produce candidates. Virtual
//! channel selection for ladder-managed routings is done by [`ladder_vcs`].

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::escape::{EscapeMove, EscapePenalties};
use crate::topology::{DistanceTable, HyperX, SwitchId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RoutingKind {
    Minimal,
    Dor,
    Valiant,
    OmniWar,
    Polarized,
    OmniSp,
    PolSp,
}

impl RoutingKind {
    pub const ALL: [RoutingKind; 7] = [
        RoutingKind::Minimal,
        RoutingKind::Dor,
        RoutingKind::Valiant,
        RoutingKind::OmniWar,
        RoutingKind::Polarized,
        RoutingKind::OmniSp,
        RoutingKind::PolSp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RoutingKind::Minimal => "minimal",
            RoutingKind::Dor => "dor",
            RoutingKind::Valiant => "valiant",
            RoutingKind::OmniWar => "omniwar",
            RoutingKind::Polarized => "polarized",
            RoutingKind::OmniSp => "omni_sp",
            RoutingKind::PolSp => "pol_sp",
        }
    }

    pub fn is_surepath(self) -> bool {
        matches!(self, RoutingKind::OmniSp | RoutingKind::PolSp)
    }

    /// Ladder used for VC selection; `None` when every VC may be used.
    pub fn ladder(self) -> Option<LadderScheme> {
        match self {
            RoutingKind::Minimal => Some(LadderScheme::PairPerHop),
            RoutingKind::Valiant | RoutingKind::OmniWar | RoutingKind::Polarized => {
                Some(LadderScheme::OneByOne)
            }
            RoutingKind::Dor | RoutingKind::OmniSp | RoutingKind::PolSp => None,
        }
    }
}

impl fmt::Display for RoutingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RoutingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RoutingKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown routing `{s}`")))
    }
}

/// Penalties in phits for every candidate class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Penalties {
    pub minimal: u16,
    pub deroute: u16,
    pub polar1: u16,
    pub polar2: u16,
    pub escape: EscapePenalties,
}

impl Default for Penalties {
    fn default() -> Self {
        Penalties {
            minimal: 0,
            deroute: 64,
            polar1: 64,
            polar2: 80,
            escape: EscapePenalties::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Routing,
    Escape,
}

/// What taking a candidate does to the route state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HopClass {
    Minimal,
    Deroute,
    Polarized { delta_mu: i8 },
    Escape(EscapeMove),
    Eject,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub port: u16,
    pub vc_start: u8,
    pub vc_end: u8,
    pub penalty: u16,
    pub provenance: Provenance,
    pub class: HopClass,
}

impl Candidate {
    pub fn vcs(&self) -> Range<usize> {
        self.vc_start as usize..self.vc_end as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValiantLeg {
    pub midpoint: u32,
    pub reached: bool,
}

/// Routing header carried by every packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RouteState {
    pub source: u32,
    pub destination: u32,
    pub hop_count: u16,
    pub deroutes_used: u16,
    pub valiant: Option<ValiantLeg>,
    /// `d(c,s) < d(c,t)` at the current switch.
    pub polarized_phase: bool,
    pub in_escape: bool,
}

impl RouteState {
    pub fn new(source: SwitchId, destination: SwitchId) -> Self {
        RouteState {
            source: source as u32,
            destination: destination as u32,
            hop_count: 0,
            deroutes_used: 0,
            valiant: None,
            polarized_phase: source != destination,
            in_escape: false,
        }
    }

    pub fn with_midpoint(mut self, midpoint: SwitchId) -> Self {
        self.valiant = Some(ValiantLeg {
            midpoint: midpoint as u32,
            reached: false,
        });
        self
    }

    pub fn source(&self) -> SwitchId {
        self.source as SwitchId
    }

    pub fn destination(&self) -> SwitchId {
        self.destination as SwitchId
    }

    /// Switch the current leg is heading to.
    pub fn target(&self) -> SwitchId {
        match self.valiant {
            Some(leg) if !leg.reached => leg.midpoint as SwitchId,
            _ => self.destination(),
        }
    }

    /// Called when the head reaches `switch`; flips the Valiant phase at the midpoint.
    pub fn arrive(&mut self, switch: SwitchId) {
        if let Some(leg) = self.valiant.as_mut() {
            if !leg.reached && leg.midpoint as SwitchId == switch {
                leg.reached = true;
            }
        }
    }

    /// Records a switch-to-switch hop into `next`.
    pub fn advance(&mut self, candidate: &Candidate, next: SwitchId, distances: &DistanceTable) {
        self.hop_count += 1;
        match candidate.class {
            HopClass::Deroute => self.deroutes_used += 1,
            HopClass::Escape(_) => self.in_escape = true,
            _ => {}
        }
        self.polarized_phase =
            distances.get(next, self.source()) < distances.get(next, self.destination());
        self.arrive(next);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LadderScheme {
    /// The i-th hop uses VC i.
    OneByOne,
    /// Two consecutive hops share a VC: VC = ⌊hop/2⌋.
    TwoByTwo,
    /// Each hop may use a pair of VCs: hop i uses {2i, 2i+1}.
    PairPerHop,
}

/// VCs a packet that already took `hop_count` switch hops may request.
pub fn ladder_vcs(hop_count: usize, scheme: LadderScheme, num_vcs: usize) -> Option<Range<usize>> {
    let range = match scheme {
        LadderScheme::OneByOne => hop_count..hop_count + 1,
        LadderScheme::TwoByTwo => hop_count / 2..hop_count / 2 + 1,
        LadderScheme::PairPerHop => 2 * hop_count..2 * hop_count + 2,
    };
    (range.end <= num_vcs).then_some(range)
}

/// Single-VC form of [`ladder_vcs`].
pub fn ladder_vc(hop_count: usize, scheme: LadderScheme, num_vcs: usize) -> Option<usize> {
    ladder_vcs(hop_count, scheme, num_vcs).map(|r| r.start)
}

/// Live neighbours one BFS step closer to `target`.
pub fn minimal_candidates(
    topology: &HyperX,
    distances: &DistanceTable,
    current: SwitchId,
    target: SwitchId,
) -> Vec<(usize, SwitchId)> {
    let here = distances.get(current, target);
    topology
        .neighbors(current)
        .filter(|&(_, m)| distances.get(m, target).wrapping_add(1) == here)
        .collect()
}

/// Next hop of dimension-ordered routing: the lowest unaligned dimension is
/// corrected first. Fails when the required link is dead.
pub fn dor_next(topology: &HyperX, current: SwitchId, destination: SwitchId) -> Result<(usize, SwitchId)> {
    let dim = (0..topology.dimensions())
        .find(|&d| topology.coordinate(current, d) != topology.coordinate(destination, d))
        .ok_or_else(|| Error::InvalidConfig("dor_next called at the destination".into()))?;
    let port = topology.port_toward(current, dim, topology.coordinate(destination, dim));
    if !topology.is_alive(current, port) {
        return Err(Error::Undeliverable {
            source_switch: current,
            destination,
            reason: format!("dimension-order link in dimension {dim} is faulted"),
        });
    }
    Ok((port, topology.port_target(current, port)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OmniHop {
    pub port: usize,
    pub neighbor: SwitchId,
    pub deroute: bool,
}

/// Omnidimensional candidates: any live neighbour in an unaligned dimension.
/// Non-aligning hops are only offered while `deroutes_used < budget`.
pub fn omni_candidates(
    topology: &HyperX,
    current: SwitchId,
    destination: SwitchId,
    deroutes_used: usize,
    budget: usize,
) -> Vec<OmniHop> {
    let mut out = Vec::new();
    for dim in 0..topology.dimensions() {
        let own = topology.coordinate(current, dim);
        let goal = topology.coordinate(destination, dim);
        if own == goal {
            continue;
        }
        for value in 0..topology.sides()[dim] {
            if value == own {
                continue;
            }
            let deroute = value != goal;
            if deroute && deroutes_used >= budget {
                continue;
            }
            let port = topology.port_toward(current, dim, value);
            if topology.is_alive(current, port) {
                out.push(OmniHop {
                    port,
                    neighbor: topology.port_target(current, port),
                    deroute,
                });
            }
        }
    }
    out
}

/// Polarized weight `μ = d(c,s) − d(c,t)`.
pub fn polarized_mu(distances: &DistanceTable, current: SwitchId, source: SwitchId, destination: SwitchId) -> i32 {
    distances.get(current, source) as i32 - distances.get(current, destination) as i32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolarHop {
    pub port: usize,
    pub neighbor: SwitchId,
    pub delta_source: i8,
    pub delta_target: i8,
    pub delta_mu: i8,
    pub penalty: u16,
}

/// Polarized candidates: the five admitted (Δs, Δt) classes, with Δμ = 0
/// hops filtered by phase (spread away from both while nearer the source,
/// converge on both otherwise). Penalties are relative to the best Δμ present.
pub fn polarized_candidates(
    topology: &HyperX,
    distances: &DistanceTable,
    current: SwitchId,
    source: SwitchId,
    destination: SwitchId,
    penalties: &Penalties,
) -> Vec<PolarHop> {
    let ds = distances.get(current, source) as i32;
    let dt = distances.get(current, destination) as i32;
    let near_source = ds < dt;
    let mut out: Vec<PolarHop> = topology
        .neighbors(current)
        .filter_map(|(port, m)| {
            let delta_source = distances.get(m, source) as i32 - ds;
            let delta_target = distances.get(m, destination) as i32 - dt;
            let admitted = match (delta_source, delta_target) {
                (1, -1) | (1, 0) | (0, -1) => true,
                (1, 1) => near_source,
                (-1, -1) => !near_source,
                _ => false,
            };
            admitted.then(|| PolarHop {
                port,
                neighbor: m,
                delta_source: delta_source as i8,
                delta_target: delta_target as i8,
                delta_mu: (delta_source - delta_target) as i8,
                penalty: 0,
            })
        })
        .collect();
    if let Some(best) = out.iter().map(|h| h.delta_mu).max() {
        for h in &mut out {
            h.penalty = match best - h.delta_mu {
                0 => penalties.minimal,
                1 => penalties.polar1,
                _ => penalties.polar2,
            };
        }
    }
    out
}

/// Everything a candidate generator reads besides the packet.
#[derive(Clone, Copy)]
pub struct RoutingContext<'a> {
    pub topology: &'a HyperX,
    pub distances: &'a DistanceTable,
    pub penalties: &'a Penalties,
    pub omni_budget: usize,
    pub num_vcs: usize,
}

impl<'a> RoutingContext<'a> {
    fn ladder(&self, kind: RoutingKind, state: &RouteState) -> Result<Range<usize>> {
        match kind.ladder() {
            None => Ok(0..self.num_vcs),
            Some(scheme) => ladder_vcs(state.hop_count as usize, scheme, self.num_vcs).ok_or_else(|| {
                Error::Undeliverable {
                    source_switch: state.source(),
                    destination: state.destination(),
                    reason: format!(
                        "ladder of {} VCs exhausted after {} hops",
                        self.num_vcs, state.hop_count
                    ),
                }
            }),
        }
    }

    /// Candidates of a ladder-managed baseline routing (every kind except the
    /// SurePath ones). `current` must differ from the packet's destination.
    pub fn baseline_candidates(
        &self,
        kind: RoutingKind,
        current: SwitchId,
        state: &RouteState,
        out: &mut Vec<Candidate>,
    ) -> Result<()> {
        let vcs = self.ladder(kind, state)?;
        let push = |out: &mut Vec<Candidate>, port: usize, penalty: u16, class: HopClass| {
            out.push(Candidate {
                port: port as u16,
                vc_start: vcs.start as u8,
                vc_end: vcs.end as u8,
                penalty,
                provenance: Provenance::Routing,
                class,
            })
        };
        let before = out.len();
        match kind {
            RoutingKind::Minimal | RoutingKind::Valiant => {
                for (port, _) in minimal_candidates(self.topology, self.distances, current, state.target()) {
                    push(out, port, self.penalties.minimal, HopClass::Minimal);
                }
            }
            RoutingKind::Dor => {
                let (port, _) = dor_next(self.topology, current, state.destination())?;
                push(out, port, self.penalties.minimal, HopClass::Minimal);
            }
            RoutingKind::OmniWar | RoutingKind::OmniSp => {
                self.omni_into(current, state, vcs.clone(), out);
            }
            RoutingKind::Polarized | RoutingKind::PolSp => {
                self.polarized_into(current, state, vcs.clone(), out);
            }
        }
        if out.len() == before {
            return Err(Error::Undeliverable {
                source_switch: state.source(),
                destination: state.destination(),
                reason: format!("{kind} offers no candidate at switch {current}"),
            });
        }
        Ok(())
    }

    pub(crate) fn omni_into(&self, current: SwitchId, state: &RouteState, vcs: Range<usize>, out: &mut Vec<Candidate>) {
        for hop in omni_candidates(
            self.topology,
            current,
            state.destination(),
            state.deroutes_used as usize,
            self.omni_budget,
        ) {
            let (penalty, class) = if hop.deroute {
                (self.penalties.deroute, HopClass::Deroute)
            } else {
                (self.penalties.minimal, HopClass::Minimal)
            };
            out.push(Candidate {
                port: hop.port as u16,
                vc_start: vcs.start as u8,
                vc_end: vcs.end as u8,
                penalty,
                provenance: Provenance::Routing,
                class,
            });
        }
    }

    pub(crate) fn polarized_into(
        &self,
        current: SwitchId,
        state: &RouteState,
        vcs: Range<usize>,
        out: &mut Vec<Candidate>,
    ) {
        for hop in polarized_candidates(
            self.topology,
            self.distances,
            current,
            state.source(),
            state.destination(),
            self.penalties,
        ) {
            out.push(Candidate {
                port: hop.port as u16,
                vc_start: vcs.start as u8,
                vc_end: vcs.end as u8,
                penalty: hop.penalty,
                provenance: Provenance::Routing,
                class: HopClass::Polarized { delta_mu: hop.delta_mu },
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Coordinates;

    fn id(t: &HyperX, v: &[usize]) -> SwitchId {
        t.switch_id(&Coordinates::new(v.to_vec())).unwrap()
    }

    fn sorted(mut v: Vec<SwitchId>) -> Vec<SwitchId> {
        v.sort();
        v
    }

    #[test]
    fn minimal_examples() {
        let t = HyperX::new(&[4, 4], 4).unwrap();
        let d = t.distance_table();
        let m: Vec<_> = minimal_candidates(&t, &d, 0, id(&t, &[1, 1])).into_iter().map(|x| x.1).collect();
        assert_eq!(sorted(m), sorted(vec![id(&t, &[1, 0]), id(&t, &[0, 1])]));
        let m: Vec<_> = minimal_candidates(&t, &d, 0, id(&t, &[0, 3])).into_iter().map(|x| x.1).collect();
        assert_eq!(m, vec![id(&t, &[0, 3])]);
    }

    #[test]
    fn minimal_around_fault_matches_bfs_oracle() {
        let mut t = HyperX::new(&[4, 4], 4).unwrap();
        let target = id(&t, &[0, 3]);
        let f = t.link(0, target).unwrap();
        t.apply_faults(&[f]).unwrap();
        let d = t.distance_table();
        // Oracle: neighbours whose own BFS (fresh) distance to the target is one less.
        let here = t.bfs_distances(0)[target];
        assert_eq!(here, 2);
        let expected: Vec<_> = t
            .neighbors(0)
            .filter(|&(_, m)| t.bfs_distances(m)[target] + 1 == here)
            .map(|(_, m)| m)
            .collect();
        let got: Vec<_> = minimal_candidates(&t, &d, 0, target).into_iter().map(|x| x.1).collect();
        assert_eq!(sorted(got.clone()), sorted(expected));
        assert_eq!(
            sorted(got),
            sorted(vec![id(&t, &[0, 1]), id(&t, &[0, 2])])
        );
    }

    #[test]
    fn dor_examples() {
        let mut t = HyperX::new(&[4, 4], 1).unwrap();
        let dst = id(&t, &[2, 3]);
        assert_eq!(dor_next(&t, 0, dst).unwrap().1, id(&t, &[2, 0]));
        assert_eq!(dor_next(&t, id(&t, &[2, 0]), dst).unwrap().1, dst);
        let f = t.link(0, id(&t, &[2, 0])).unwrap();
        t.apply_faults(&[f]).unwrap();
        assert!(matches!(dor_next(&t, 0, dst), Err(Error::Undeliverable { .. })));
    }

    #[test]
    fn omni_examples() {
        let t = HyperX::new(&[8, 8, 8], 8).unwrap();
        let dst = id(&t, &[1, 1, 0]);
        let c = omni_candidates(&t, 0, dst, 3, 3);
        let n: Vec<_> = c.iter().map(|h| h.neighbor).collect();
        assert_eq!(sorted(n), sorted(vec![id(&t, &[1, 0, 0]), id(&t, &[0, 1, 0])]));
        assert!(c.iter().all(|h| !h.deroute));

        let c = omni_candidates(&t, 0, id(&t, &[1, 0, 0]), 0, 3);
        assert_eq!(c.len(), 7);
        for h in &c {
            let coords = t.coordinates(h.neighbor).0;
            assert_eq!(&coords[1..], &[0, 0]);
            assert_eq!(h.deroute, coords[0] != 1);
        }

        // Enumeration oracle: two unaligned dimensions, budget left.
        let c = omni_candidates(&t, 0, dst, 0, 3);
        let oracle = t
            .neighbors(0)
            .filter(|&(_, m)| {
                let d = (0..3).find(|&d| t.coordinate(m, d) != 0).unwrap();
                t.coordinate(dst, d) != 0
            })
            .count();
        assert_eq!(c.len(), oracle);
        assert_eq!(c.len(), 14);
    }

    #[test]
    fn mu_examples() {
        let t = HyperX::new(&[8, 8, 8], 8).unwrap();
        let d = t.distance_table();
        let s = 0;
        let dst = id(&t, &[1, 1, 1]);
        assert_eq!(polarized_mu(&d, s, s, dst), -3);
        assert_eq!(polarized_mu(&d, dst, s, dst), 3);
        assert_eq!(polarized_mu(&d, id(&t, &[1, 0, 0]), s, dst), -1);
    }

    #[test]
    fn polarized_at_source_enumeration() {
        let t = HyperX::new(&[8, 8, 8], 8).unwrap();
        let d = t.distance_table();
        let dst = id(&t, &[0, 0, 1]);
        let p = Penalties::default();
        let c = polarized_candidates(&t, &d, 0, 0, dst, &p);
        // Oracle from Hamming distances over all 21 neighbours.
        let mut expected = Vec::new();
        for (port, m) in t.neighbors(0) {
            let ds = t.hamming(m, 0) as i32;
            let dt = t.hamming(m, dst) as i32 - 1;
            let keep = matches!((ds, dt), (1, -1) | (1, 0) | (1, 1));
            if keep {
                expected.push((port, ds - dt));
            }
        }
        let got: Vec<_> = c.iter().map(|h| (h.port, h.delta_mu as i32)).collect();
        assert_eq!(got, expected);
        let direct = c.iter().find(|h| h.neighbor == dst).unwrap();
        assert_eq!((direct.delta_source, direct.delta_target, direct.penalty), (1, -1, 0));
        let side = c.iter().find(|h| h.neighbor == id(&t, &[0, 1, 0])).unwrap();
        assert_eq!((side.delta_source, side.delta_target, side.penalty), (1, 1, 80));
        // (0,0,k) for k>1 revolves around t: (+1,0), Δμ=1.
        let rev = c.iter().find(|h| h.neighbor == id(&t, &[0, 0, 5])).unwrap();
        assert_eq!((rev.delta_mu, rev.penalty), (1, 64));
        assert_eq!(c.len(), 21);
    }

    #[test]
    fn polarized_never_emits_negative_mu() {
        let t = HyperX::new(&[4, 4, 4], 1).unwrap();
        let d = t.distance_table();
        let p = Penalties::default();
        for s in 0..t.num_switches() {
            for dst in 0..t.num_switches() {
                for c in 0..t.num_switches() {
                    if c == dst {
                        continue;
                    }
                    for h in polarized_candidates(&t, &d, c, s, dst, &p) {
                        assert!(h.delta_mu >= 0);
                        assert!((-1..=1).contains(&h.delta_source) && (-1..=1).contains(&h.delta_target));
                    }
                }
            }
        }
    }

    #[test]
    fn ladder_examples() {
        assert_eq!(ladder_vc(0, LadderScheme::OneByOne, 6), Some(0));
        assert_eq!(ladder_vc(5, LadderScheme::OneByOne, 6), Some(5));
        assert_eq!(ladder_vc(6, LadderScheme::OneByOne, 6), None);
        assert_eq!(ladder_vc(3, LadderScheme::TwoByTwo, 2), Some(1));
        assert_eq!(ladder_vc(4, LadderScheme::TwoByTwo, 2), None);
        assert_eq!(ladder_vcs(1, LadderScheme::PairPerHop, 4), Some(2..4));
        assert_eq!(ladder_vcs(2, LadderScheme::PairPerHop, 4), None);
    }

    #[test]
    fn valiant_target_switches_at_midpoint() {
        let mut s = RouteState::new(3, 9).with_midpoint(5);
        assert_eq!(s.target(), 5);
        s.arrive(5);
        assert_eq!(s.target(), 9);
        let mut s = RouteState::new(3, 9).with_midpoint(3);
        s.arrive(3);
        assert_eq!(s.target(), 9);
    }

    #[test]
    fn routing_names_roundtrip() {
        for k in RoutingKind::ALL {
            assert_eq!(k.name().parse::<RoutingKind>().unwrap(), k);
        }
        assert!("bogus".parse::<RoutingKind>().is_err());
    }
}
