//! SurePath: routing candidates on the routing VCs plus escape candidates on
//! the single escape VC, and the `Q + P` request selection.
//!
//! A packet still in the routing subnetwork gets both sets; once it has
//! taken an escape hop it only gets escape candidates. When the base routing
//! offers nothing the hop is forced into the escape VC.

use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::escape::{EscapeCandidate, EscapeNetwork};
use crate::routing::{Candidate, HopClass, Provenance, RouteState, RoutingContext, RoutingKind};
use crate::topology::SwitchId;

/// Split of a port's VCs into routing VCs and the last, escape, VC.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VcPartition {
    total: usize,
}

impl VcPartition {
    pub fn new(total: usize) -> Result<Self> {
        if total < 2 {
            return Err(Error::InvalidConfig(format!(
                "SurePath needs at least 2 VCs (one routing, one escape), got {total}"
            )));
        }
        Ok(VcPartition { total })
    }

    pub fn routing(&self) -> Range<usize> {
        0..self.total - 1
    }

    pub fn escape(&self) -> usize {
        self.total - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HopKind {
    RoutingHop,
    EscapeHop,
    ForcedHop,
}

/// Builds the SurePath candidate set for a packet at `current` (not its
/// destination switch). Returns `true` when the hop is forced, i.e. the
/// packet is in the routing subnetwork but the base routing offered nothing.
pub fn surepath_candidates(
    ctx: &RoutingContext<'_>,
    escape: &EscapeNetwork,
    base: RoutingKind,
    current: SwitchId,
    state: &RouteState,
    scratch: &mut Vec<EscapeCandidate>,
    out: &mut Vec<Candidate>,
) -> Result<bool> {
    let vcs = VcPartition::new(ctx.num_vcs)?;
    let before = out.len();
    if !state.in_escape {
        match base {
            RoutingKind::OmniSp | RoutingKind::OmniWar => ctx.omni_into(current, state, vcs.routing(), out),
            RoutingKind::PolSp | RoutingKind::Polarized => ctx.polarized_into(current, state, vcs.routing(), out),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "{other} cannot be the base routing of SurePath"
                )))
            }
        }
    }
    let forced = !state.in_escape && out.len() == before;
    scratch.clear();
    escape.candidates_into(
        ctx.topology,
        current,
        state.destination(),
        &ctx.penalties.escape,
        scratch,
    );
    let esc = vcs.escape();
    out.extend(scratch.iter().map(|c| Candidate {
        port: c.port as u16,
        vc_start: esc as u8,
        vc_end: esc as u8 + 1,
        penalty: c.penalty,
        provenance: Provenance::Escape,
        class: HopClass::Escape(c.kind),
    }));
    if out.len() == before {
        return Err(Error::Undeliverable {
            source_switch: state.source(),
            destination: state.destination(),
            reason: format!("no routing or escape candidate at switch {current}"),
        });
    }
    Ok(forced)
}

/// Occupancy view of a switch's output side used to score requests.
pub trait PortOccupancy {
    /// `q_s`: output queue occupancy plus consumed credits of one (port, VC), in phits.
    fn queue(&self, port: usize, vc: usize) -> u32;
    /// Sum of `queue` over all VCs of `port`.
    fn port_total(&self, port: usize) -> u32;
    /// Whether a whole packet may be admitted to (port, VC) now.
    fn admissible(&self, port: usize, vc: usize) -> bool;
    /// Lowest `queue` over the admissible VCs of `port` in `vcs` and how many VCs attain it.
    fn best_vc(&self, port: usize, vcs: Range<usize>) -> Option<(u32, u32)> {
        let mut best: Option<(u32, u32)> = None;
        for vc in vcs {
            if !self.admissible(port, vc) {
                continue;
            }
            let q = self.queue(port, vc);
            best = match best {
                Some((b, n)) if q == b => Some((b, n + 1)),
                Some((b, n)) if q > b => Some((b, n)),
                _ => Some((q, 1)),
            };
        }
        best
    }
}

/// `Q + P` with `Q = q_s + Σ_{q ∈ port} q`, so the requested queue counts twice.
#[inline]
pub fn score_request<O: PortOccupancy + ?Sized>(candidate: &Candidate, vc: usize, occupancy: &O) -> u32 {
    let port = candidate.port as usize;
    occupancy.queue(port, vc) + occupancy.port_total(port) + candidate.penalty as u32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Selection {
    pub index: usize,
    pub vc: usize,
    pub score: u32,
}

/// Picks the admissible (candidate, VC) with the lowest score, breaking ties
/// uniformly at random. `None` when everything is flow-control blocked.
pub fn select_request<O: PortOccupancy + ?Sized, R: Rng + ?Sized>(
    candidates: &[Candidate],
    occupancy: &O,
    rng: &mut R,
) -> Option<Selection> {
    // Candidates are sampled with weight equal to their number of tied VCs,
    // then one of those VCs uniformly, which is uniform over tied pairs.
    let mut best: Option<(usize, u32, u32, u32)> = None;
    let mut ties = 0u32;
    for (index, c) in candidates.iter().enumerate() {
        let port = c.port as usize;
        let Some((q, count)) = occupancy.best_vc(port, c.vcs()) else { continue };
        let score = q + occupancy.port_total(port) + c.penalty as u32;
        match best {
            Some((_, b, _, _)) if score > b => {}
            Some((_, b, _, _)) if score == b => {
                ties += count;
                if rng.gen_range(0..ties) < count {
                    best = Some((index, score, q, count));
                }
            }
            _ => {
                ties = count;
                best = Some((index, score, q, count));
            }
        }
    }
    let (index, score, q, count) = best?;
    let c = &candidates[index];
    let port = c.port as usize;
    let mut pick = if count == 1 { 0 } else { rng.gen_range(0..count) };
    for vc in c.vcs() {
        if occupancy.admissible(port, vc) && occupancy.queue(port, vc) == q {
            if pick == 0 {
                return Some(Selection { index, vc, score });
            }
            pick -= 1;
        }
    }
    unreachable!("best_vc counted an admissible VC")
}
