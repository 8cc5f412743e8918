//! Cycle-level simulator: input-buffered switches with per-VC output queues,
//! virtual cut-through with per-phit credits, 1-cycle links and crossbar.
//!
//! Each cycle runs, in order: delivery of last cycle's link phits and
//! credits, generation, injection, link transmission, routing and output
//! allocation, crossbar transfer. A phit crossing the crossbar is therefore
//! sent on the link the next cycle, and a phit sent on a link becomes usable
//! the next cycle.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::escape::{verify_escape_acyclic, EscapeNetwork};
use crate::faults::{self, FaultSpec};
use crate::metrics::{accepted_throughput, completion_series, jain_index, CompletionSeries, MetricsRecord};
use crate::routing::{Candidate, HopClass, Penalties, Provenance, RouteState, RoutingContext, RoutingKind};
use crate::surepath::{select_request, surepath_candidates, PortOccupancy, VcPartition};
use crate::topology::{Coordinates, DistanceTable, HyperX, SwitchId};
use crate::traffic::{PatternKind, TrafficPattern};

pub const PACKET_PHITS: u16 = 16;
pub const INPUT_BUFFER_PHITS: u16 = 128;
/// Output buffer per VC: four packets.
pub const OUTPUT_VC_PHITS: u16 = 64;
pub const CROSSBAR_SPEEDUP: u8 = 2;

const NONE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub sides: Vec<usize>,
    pub servers_per_switch: usize,
    pub routing: RoutingKind,
    pub vcs: usize,
    /// Deroute budget of Omnidimensional routing; defaults to the dimension count.
    pub omni_budget: Option<usize>,
    pub penalties: Penalties,
    pub pattern: PatternKind,
    pub pattern_seed: u64,
    pub faults: FaultSpec,
    /// Anchor of shaped faults and root of the escape subnetwork.
    pub fault_anchor: Option<Coordinates>,
    /// Overrides the escape root when set.
    pub escape_root: Option<Coordinates>,
    pub load: f64,
    pub seed: u64,
    pub warmup: u64,
    pub measure: u64,
    pub max_idle: u64,
    /// After the window stop injecting and wait for the network to empty.
    pub drain: bool,
    pub check_invariants: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            sides: vec![4, 4],
            servers_per_switch: 4,
            routing: RoutingKind::Minimal,
            vcs: 4,
            omni_budget: None,
            penalties: Penalties::default(),
            pattern: PatternKind::Uniform,
            pattern_seed: 0,
            faults: FaultSpec::None,
            fault_anchor: None,
            escape_root: None,
            load: 0.1,
            seed: 1,
            warmup: 20_000,
            measure: 20_000,
            max_idle: 10_000,
            drain: true,
            check_invariants: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.load > 0.0 && self.load <= 1.0) {
            return Err(Error::InvalidConfig(format!("load {} outside (0,1]", self.load)));
        }
        if self.vcs == 0 || self.vcs > 64 {
            return Err(Error::InvalidConfig(format!("vcs {} outside 1..=64", self.vcs)));
        }
        if self.routing.is_surepath() {
            VcPartition::new(self.vcs)?;
        }
        if self.max_idle == 0 {
            return Err(Error::InvalidConfig("max_idle must be positive".into()));
        }
        Ok(())
    }

    pub fn anchor(&self) -> Coordinates {
        self.fault_anchor
            .clone()
            .unwrap_or_else(|| Coordinates::new(vec![0; self.sides.len()]))
    }
}

/// Faulted topology with its distance table and, for SurePath, the escape
/// subnetwork. Shared read-only by every run on the same configuration.
#[derive(Clone, Debug)]
pub struct Network {
    pub topology: HyperX,
    pub distances: DistanceTable,
    pub escape: Option<EscapeNetwork>,
}

impl Network {
    pub fn build(config: &SimConfig) -> Result<Self> {
        let mut topology = HyperX::new(&config.sides, config.servers_per_switch)?;
        let anchor = config.anchor();
        let faults = faults::resolve(&topology, &config.faults, &anchor)?;
        topology.apply_faults(&faults)?;
        let distances = topology.distance_table();
        let escape = if config.routing.is_surepath() {
            let root = topology.switch_id(config.escape_root.as_ref().unwrap_or(&anchor))?;
            let escape = EscapeNetwork::build(&topology, root);
            let check = verify_escape_acyclic(&topology, &escape);
            if !check.acyclic {
                return Err(Error::CyclicEscape(check.witness.len()));
            }
            Some(escape)
        } else {
            None
        };
        Ok(Network {
            topology,
            distances,
            escape,
        })
    }
}

/// Part of one packet held by a FIFO: `present` phits stored, `passed`
/// already forwarded. `hop` counts the switch hops the phits have taken, so
/// a packet whose path revisits a switch keeps its visits apart.
#[derive(Clone, Copy, Debug)]
struct Segment {
    packet: u32,
    hop: u16,
    present: u8,
    passed: u8,
}

impl Segment {
    fn received(&self) -> u16 {
        self.present as u16 + self.passed as u16
    }
}

fn push_phits(fifo: &mut VecDeque<Segment>, packet: u32, hop: u16, phits: u8) {
    if let Some(back) = fifo.back_mut() {
        if back.packet == packet && back.hop == hop && back.received() < PACKET_PHITS {
            back.present += phits;
            return;
        }
    }
    fifo.push_back(Segment {
        packet,
        hop,
        present: phits,
        passed: 0,
    });
}

#[derive(Clone, Debug)]
struct Packet {
    source: u32,
    destination: u32,
    created: u64,
    route: RouteState,
}

#[derive(Clone, Debug, Default)]
struct Server {
    /// Creation cycles of generated packets not yet injected.
    backlog: VecDeque<u64>,
    /// Packet being sent, phits sent so far and injection VC.
    injecting: Option<(u32, u8, u8)>,
}

/// A head's request for one output (port, VC).
#[derive(Clone, Copy, Debug)]
struct Request {
    input: u32,
    output: u32,
    candidate: u16,
}

#[derive(Clone, Debug, Default)]
struct Counters {
    generated: Vec<u64>,
    injected: Vec<u64>,
    ejected_phits: u64,
    delivered: u64,
    latency_sum: u64,
    forced_hops: u64,
    escape_hops: u64,
    routing_hops: u64,
    max_hops: u16,
}

/// Output side of one switch as seen by request scoring, precomputed once
/// per cycle from the start-of-allocation state.
struct SwitchView<'a> {
    queue: &'a [u32],
    admissible: &'a [bool],
    port_total: &'a [u32],
    /// `best_vc` of every port over VCs `0..vcs-1`, the SurePath routing set.
    routing_best: &'a [Option<(u32, u32)>],
    vcs: usize,
}

impl SwitchView<'_> {
    #[inline]
    fn slot(&self, port: usize, vc: usize) -> usize {
        port * self.vcs + vc
    }
}

impl PortOccupancy for SwitchView<'_> {
    #[inline]
    fn queue(&self, port: usize, vc: usize) -> u32 {
        self.queue[self.slot(port, vc)]
    }

    #[inline]
    fn port_total(&self, port: usize) -> u32 {
        self.port_total[port]
    }

    #[inline]
    fn admissible(&self, port: usize, vc: usize) -> bool {
        self.admissible[self.slot(port, vc)]
    }

    #[inline]
    fn best_vc(&self, port: usize, vcs: std::ops::Range<usize>) -> Option<(u32, u32)> {
        if vcs.start == 0 && vcs.end + 1 == self.vcs {
            return self.routing_best[port];
        }
        let mut best: Option<(u32, u32)> = None;
        for vc in vcs {
            let slot = self.slot(port, vc);
            if !self.admissible[slot] {
                continue;
            }
            let q = self.queue[slot];
            best = match best {
                Some((b, n)) if q == b => Some((b, n + 1)),
                Some((b, n)) if q > b => Some((b, n)),
                _ => Some((q, 1)),
            };
        }
        best
    }
}

pub struct Simulation<'n> {
    net: &'n Network,
    config: SimConfig,
    pattern: TrafficPattern,
    rng: ChaCha8Rng,
    omni_budget: usize,
    degree: usize,
    radix: usize,
    slots: usize,
    cycle: u64,
    generation_probability: f64,
    generating: bool,
    injecting: bool,

    inputs: Vec<VecDeque<Segment>>,
    /// Per switch, bitmask of non-empty input slots.
    occupied: Vec<u64>,
    words: usize,
    grant: Vec<u32>,
    cache: Vec<Vec<Candidate>>,
    cache_packet: Vec<u32>,
    cache_forced: Vec<bool>,

    outputs: Vec<VecDeque<Segment>>,
    credits: Vec<u16>,
    reserved: Vec<u16>,
    busy: Vec<bool>,
    /// Phits held by each output VC queue.
    output_phits: Vec<u16>,
    /// Phits held by the output queues of each (switch, port).
    port_occupancy: Vec<u16>,
    link_rr: Vec<u8>,
    /// `neighbor·slots + reverse_port·vcs` for every (switch, port): the first
    /// downstream input slot of the link, and equally the first upstream
    /// output slot feeding the input port.
    peer: Vec<u32>,
    slot_port: Vec<u16>,
    slot_vc: Vec<u8>,
    active: Vec<u16>,
    view_queue: Vec<u32>,
    view_admissible: Vec<bool>,
    view_port_total: Vec<u32>,
    view_routing_best: Vec<Option<(u32, u32)>>,

    arrivals: Vec<(u32, u32, u16)>,
    credit_returns: Vec<u32>,
    server_credit_returns: Vec<u32>,
    ejections: Vec<(u32, bool)>,

    servers: Vec<Server>,
    /// Free phits of each (server, VC) injection buffer.
    server_credits: Vec<u16>,
    packets: Vec<Packet>,
    free: Vec<u32>,
    in_network: usize,
    created: u64,
    delivered_total: u64,
    idle: u64,

    counters: Counters,
    ejection_log: Vec<(u64, u64)>,
    log_ejections: bool,

    requests: Vec<Request>,
    req_count: Vec<u32>,
    req_winner: Vec<u32>,
    touched: Vec<u32>,
    escape_scratch: Vec<crate::escape::EscapeCandidate>,
    /// Drops VC restrictions so deadlock detection can be exercised.
    #[cfg(test)]
    free_vcs: bool,
}

impl<'n> Simulation<'n> {
    pub fn new(net: &'n Network, config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let topology = &net.topology;
        if config.routing.is_surepath() && net.escape.is_none() {
            return Err(Error::InvalidConfig("SurePath needs an escape subnetwork".into()));
        }
        let pattern = TrafficPattern::new(config.pattern, topology, config.pattern_seed)?;
        if topology.radix() > 256 {
            return Err(Error::InvalidConfig(format!("radix {} above 256", topology.radix())));
        }
        let degree = topology.degree();
        let radix = topology.radix();
        let vcs = config.vcs;
        let slots = radix * vcs;
        let switches = topology.num_switches();
        let total = switches * slots;
        let servers = topology.num_servers();
        let mut credits = vec![0u16; total];
        for s in 0..switches {
            for p in 0..degree {
                for vc in 0..vcs {
                    credits[s * slots + p * vcs + vc] = INPUT_BUFFER_PHITS;
                }
            }
        }
        Ok(Simulation {
            net,
            config: config.clone(),
            pattern,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            omni_budget: config.omni_budget.unwrap_or(topology.dimensions()),
            degree,
            radix,
            slots,
            cycle: 0,
            generation_probability: config.load / PACKET_PHITS as f64,
            generating: true,
            injecting: true,
            inputs: vec![VecDeque::new(); total],
            occupied: vec![0; switches * slots.div_ceil(64)],
            words: slots.div_ceil(64),
            grant: vec![NONE; total],
            cache: vec![Vec::new(); total],
            cache_packet: vec![NONE; total],
            cache_forced: vec![false; total],
            outputs: vec![VecDeque::new(); total],
            credits,
            reserved: vec![0; total],
            busy: vec![false; total],
            output_phits: vec![0; switches * slots],
            port_occupancy: vec![0; switches * radix],
            link_rr: vec![0; switches * radix],
            peer: (0..switches)
                .flat_map(|s| {
                    (0..degree).map(move |p| {
                        (topology.port_target(s, p) * slots + topology.reverse_port(s, p) * vcs) as u32
                    })
                })
                .collect(),
            slot_port: (0..slots)
                .map(|l| (l / vcs) as u16)
                .collect(),
            slot_vc: (0..slots).map(|l| (l % vcs) as u8).collect(),
            active: Vec::new(),
            view_queue: vec![0; slots],
            view_admissible: vec![false; slots],
            view_port_total: vec![0; radix],
            view_routing_best: vec![None; radix],
            arrivals: Vec::new(),
            credit_returns: Vec::new(),
            server_credit_returns: Vec::new(),
            ejections: Vec::new(),
            servers: vec![Server::default(); servers],
            server_credits: vec![INPUT_BUFFER_PHITS; servers * vcs],
            packets: Vec::new(),
            free: Vec::new(),
            in_network: 0,
            created: 0,
            delivered_total: 0,
            idle: 0,
            counters: Counters {
                generated: vec![0; servers],
                injected: vec![0; servers],
                ..Counters::default()
            },
            ejection_log: Vec::new(),
            log_ejections: false,
            requests: Vec::new(),
            req_count: vec![0; slots],
            req_winner: vec![0; slots],
            touched: Vec::new(),
            escape_scratch: Vec::new(),
            #[cfg(test)]
            free_vcs: false,
        })
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    /// Packets whose head has entered the network and whose tail has not been ejected.
    pub fn in_network(&self) -> usize {
        self.in_network
    }

    pub fn delivered(&self) -> u64 {
        self.delivered_total
    }

    /// Packets created and not delivered, including source backlogs.
    pub fn live_packets(&self) -> u64 {
        self.created + self.servers.iter().map(|s| s.backlog.len() as u64).sum::<u64>() - self.delivered_total
    }

    fn measuring(&self) -> bool {
        self.cycle >= self.config.warmup && self.cycle < self.config.warmup + self.config.measure
    }

    #[inline]
    fn input_port(&self, local: usize) -> (usize, usize) {
        (local / self.config.vcs, local % self.config.vcs)
    }

    /// Advances one cycle.
    pub fn step(&mut self) -> Result<()> {
        let measuring = self.measuring();
        let mut moved = self.deliver(measuring);
        if self.generating {
            self.generate(measuring);
        }
        moved |= self.inject(measuring);
        moved |= self.transmit();
        for s in 0..self.net.topology.num_switches() {
            self.route_and_allocate(s, measuring)?;
        }
        for s in 0..self.net.topology.num_switches() {
            moved |= self.crossbar(s);
        }
        if self.config.check_invariants {
            self.check_invariants()?;
        }
        if moved || self.in_network == 0 {
            self.idle = 0;
        } else {
            self.idle += 1;
            if self.idle >= self.config.max_idle {
                return Err(Error::Deadlock {
                    cycle: self.cycle,
                    idle: self.idle,
                    in_flight: self.in_network,
                    dump: self.wait_for_dump(),
                });
            }
        }
        self.cycle += 1;
        Ok(())
    }

    fn deliver(&mut self, measuring: bool) -> bool {
        let moved = !self.arrivals.is_empty() || !self.ejections.is_empty();
        for &(slot, packet, hop) in &self.arrivals {
            let slot = slot as usize;
            push_phits(&mut self.inputs[slot], packet, hop, 1);
            let (s, local) = (slot / self.slots, slot % self.slots);
            self.occupied[s * self.words + local / 64] |= 1 << (local % 64);
        }
        self.arrivals.clear();
        for slot in self.credit_returns.drain(..) {
            self.credits[slot as usize] += 1;
        }
        for channel in self.server_credit_returns.drain(..) {
            self.server_credits[channel as usize] += 1;
        }
        let ejections = std::mem::take(&mut self.ejections);
        if !ejections.is_empty() && self.log_ejections {
            self.ejection_log.push((self.cycle, ejections.len() as u64));
        }
        for &(packet, tail) in &ejections {
            if measuring {
                self.counters.ejected_phits += 1;
            }
            if tail {
                let p = &self.packets[packet as usize];
                if measuring {
                    self.counters.delivered += 1;
                    self.counters.latency_sum += self.cycle - p.created;
                    self.counters.max_hops = self.counters.max_hops.max(p.route.hop_count);
                }
                self.delivered_total += 1;
                self.in_network -= 1;
                self.free.push(packet);
            }
        }
        self.ejections = ejections;
        self.ejections.clear();
        moved
    }

    fn generate(&mut self, measuring: bool) {
        let p = self.generation_probability;
        for (i, server) in self.servers.iter_mut().enumerate() {
            if self.rng.gen_bool(p) {
                server.backlog.push_back(self.cycle);
                if measuring {
                    self.counters.generated[i] += PACKET_PHITS as u64;
                }
            }
        }
    }

    fn new_packet(&mut self, source: usize, created: u64) -> u32 {
        let topology = &self.net.topology;
        let spp = topology.servers_per_switch();
        let destination = self.pattern.destination(source, &mut self.rng);
        let mut route = RouteState::new(source / spp, destination / spp);
        if self.config.routing == RoutingKind::Valiant {
            let midpoint = self.rng.gen_range(0..topology.num_switches());
            route = route.with_midpoint(midpoint);
            route.arrive(source / spp);
        }
        let packet = Packet {
            source: source as u32,
            destination: destination as u32,
            created,
            route,
        };
        self.created += 1;
        match self.free.pop() {
            Some(id) => {
                self.packets[id as usize] = packet;
                id
            }
            None => {
                self.packets.push(packet);
                (self.packets.len() - 1) as u32
            }
        }
    }

    fn inject(&mut self, measuring: bool) -> bool {
        let spp = self.net.topology.servers_per_switch();
        let v = self.config.vcs;
        let mut moved = false;
        for i in 0..self.servers.len() {
            if self.servers[i].injecting.is_none() {
                if !self.injecting || self.servers[i].backlog.is_empty() {
                    continue;
                }
                // The injection buffer with most free space takes the next packet.
                let credits = &self.server_credits[i * v..(i + 1) * v];
                let (vc, &free) = credits.iter().enumerate().rev().max_by_key(|c| *c.1).expect("vcs > 0");
                if free < PACKET_PHITS {
                    continue;
                }
                let created = self.servers[i].backlog.pop_front().expect("non-empty");
                let id = self.new_packet(i, created);
                self.servers[i].injecting = Some((id, 0, vc as u8));
                self.in_network += 1;
            }
            let server = &mut self.servers[i];
            let (id, sent, vc) = server.injecting.as_mut().expect("set above");
            let vc = *vc as usize;
            let slot = (i / spp) * self.slots + (self.degree + i % spp) * v + vc;
            self.arrivals.push((slot as u32, *id, 0));
            self.server_credits[i * v + vc] -= 1;
            *sent += 1;
            if *sent as u16 == PACKET_PHITS {
                server.injecting = None;
            }
            if measuring {
                self.counters.injected[i] += 1;
            }
            moved = true;
        }
        moved
    }

    fn transmit(&mut self) -> bool {
        let topology = &self.net.topology;
        let v = self.config.vcs;
        let mut moved = false;
        for s in 0..topology.num_switches() {
            let base = s * self.slots;
            for port in 0..self.degree {
                if self.port_occupancy[s * self.radix + port] == 0 {
                    continue;
                }
                let rr = &mut self.link_rr[s * self.radix + port];
                let mut chosen = None;
                let mut vc = *rr as usize;
                for _ in 0..v {
                    let slot = base + port * v + vc;
                    if self.credits[slot] > 0 && self.outputs[slot].front().is_some_and(|f| f.present > 0) {
                        chosen = Some(vc);
                        break;
                    }
                    vc += 1;
                    if vc == v {
                        vc = 0;
                    }
                }
                let Some(vc) = chosen else { continue };
                let slot = base + port * v + vc;
                let front = self.outputs[slot].front_mut().expect("checked");
                front.present -= 1;
                front.passed += 1;
                let (packet, hop) = (front.packet, front.hop + 1);
                // The link stays on a packet until its tail leaves.
                *rr = vc as u8;
                if front.passed as u16 == PACKET_PHITS {
                    self.outputs[slot].pop_front();
                    *rr = if vc + 1 == v { 0 } else { vc + 1 } as u8;
                }
                self.credits[slot] -= 1;
                self.reserved[slot] -= 1;
                self.output_phits[slot] -= 1;
                self.port_occupancy[s * self.radix + port] -= 1;
                self.arrivals.push((self.peer[s * self.degree + port] + vc as u32, packet, hop));
                moved = true;
            }
            for port in self.degree..self.radix {
                if self.port_occupancy[s * self.radix + port] == 0 {
                    continue;
                }
                let slot = base + port * v;
                let Some(front) = self.outputs[slot].front_mut() else { continue };
                if front.present == 0 {
                    continue;
                }
                front.present -= 1;
                front.passed += 1;
                let packet = front.packet;
                let tail = front.passed as u16 == PACKET_PHITS;
                if tail {
                    self.outputs[slot].pop_front();
                }
                self.reserved[slot] -= 1;
                self.output_phits[slot] -= 1;
                self.port_occupancy[s * self.radix + port] -= 1;
                self.ejections.push((packet, tail));
                moved = true;
            }
        }
        moved
    }

    /// Builds (or reuses) the candidate list of the head at input `slot` of switch `s`.
    fn candidates(&mut self, s: SwitchId, slot: usize, packet: u32) -> Result<()> {
        if self.cache_packet[slot] == packet {
            return Ok(());
        }
        let net = self.net;
        let topology = &net.topology;
        let p = &self.packets[packet as usize];
        let route = p.route;
        let cache = &mut self.cache[slot];
        cache.clear();
        let mut forced = false;
        if s == route.destination() && route.target() == s {
            let port = self.degree + p.destination as usize % topology.servers_per_switch();
            cache.push(Candidate {
                port: port as u16,
                vc_start: 0,
                vc_end: 1,
                penalty: 0,
                provenance: Provenance::Routing,
                class: HopClass::Eject,
            });
        } else {
            let ctx = RoutingContext {
                topology,
                distances: &net.distances,
                penalties: &self.config.penalties,
                omni_budget: self.omni_budget,
                num_vcs: self.config.vcs,
            };
            if self.config.routing.is_surepath() {
                let escape = net.escape.as_ref().expect("checked in new");
                forced = surepath_candidates(
                    &ctx,
                    escape,
                    self.config.routing,
                    s,
                    &route,
                    &mut self.escape_scratch,
                    cache,
                )?;
            } else {
                let kind = self.config.routing;
                #[cfg(test)]
                let ctx = RoutingContext {
                    num_vcs: if self.free_vcs { 64 } else { ctx.num_vcs },
                    ..ctx
                };
                ctx.baseline_candidates(kind, s, &route, cache)?;
                #[cfg(test)]
                if self.free_vcs {
                    for c in cache.iter_mut() {
                        c.vc_start = 0;
                        c.vc_end = self.config.vcs as u8;
                    }
                }
            }
        }
        self.cache_packet[slot] = packet;
        self.cache_forced[slot] = forced;
        Ok(())
    }

    /// `q_s` (output occupancy plus consumed credits), flow-control
    /// admissibility and per-port sums for switch `s`.
    fn prepare_view(&mut self, s: SwitchId) {
        let base = s * self.slots;
        let v = self.config.vcs;
        for port in 0..self.radix {
            let mut total = 0;
            let vcs = if port < self.degree { v } else { 1 };
            let mut best: Option<(u32, u32)> = None;
            for vc in 0..vcs {
                let local = port * v + vc;
                let reserved = self.reserved[base + local];
                let (q, ok) = if port < self.degree {
                    let credits = self.credits[base + local];
                    (
                        reserved as u32 + (INPUT_BUFFER_PHITS - credits) as u32,
                        credits >= reserved + PACKET_PHITS,
                    )
                } else {
                    (reserved as u32, reserved + PACKET_PHITS <= OUTPUT_VC_PHITS)
                };
                self.view_queue[local] = q;
                self.view_admissible[local] = ok;
                total += q;
                if ok && vc + 1 < v {
                    best = match best {
                        Some((b, n)) if q == b => Some((b, n + 1)),
                        Some((b, n)) if q > b => Some((b, n)),
                        _ => Some((q, 1)),
                    };
                }
            }
            self.view_port_total[port] = total;
            self.view_routing_best[port] = best;
        }
    }

    /// Fills `active` with the non-empty input slots of switch `s`, ascending.
    fn collect_active(&mut self, s: SwitchId) {
        self.active.clear();
        for w in 0..self.words {
            let mut bits = self.occupied[s * self.words + w];
            while bits != 0 {
                self.active.push((w * 64 + bits.trailing_zeros() as usize) as u16);
                bits &= bits - 1;
            }
        }
    }

    fn route_and_allocate(&mut self, s: SwitchId, measuring: bool) -> Result<()> {
        let base = s * self.slots;
        self.requests.clear();
        self.collect_active(s);
        let mut prepared = false;
        for i in 0..self.active.len() {
            let local = self.active[i] as usize;
            let slot = base + local;
            if self.grant[slot] != NONE {
                continue;
            }
            let Some(front) = self.inputs[slot].front() else { continue };
            if front.passed > 0 {
                continue;
            }
            let packet = front.packet;
            self.candidates(s, slot, packet)?;
            if !prepared {
                self.prepare_view(s);
                prepared = true;
            }
            let view = SwitchView {
                queue: &self.view_queue,
                admissible: &self.view_admissible,
                port_total: &self.view_port_total,
                routing_best: &self.view_routing_best,
                vcs: self.config.vcs,
            };
            if let Some(sel) = select_request(&self.cache[slot], &view, &mut self.rng) {
                let port = self.cache[slot][sel.index].port as usize;
                let output = view.slot(port, sel.vc);
                // An output VC still receiving another packet denies the request.
                if !self.busy[base + output] {
                    self.requests.push(Request {
                        input: local as u32,
                        output: output as u32,
                        candidate: sel.index as u16,
                    });
                }
            }
        }
        if self.requests.is_empty() {
            return Ok(());
        }
        for r in &self.requests {
            let o = r.output as usize;
            if self.req_count[o] == 0 {
                self.touched.push(r.output);
            }
            self.req_count[o] += 1;
            if self.rng.gen_range(0..self.req_count[o]) == 0 {
                self.req_winner[o] = r.input;
            }
        }
        let requests = std::mem::take(&mut self.requests);
        for r in &requests {
            let o = r.output as usize;
            if self.req_count[o] == 0 || self.req_winner[o] != r.input {
                continue;
            }
            self.req_count[o] = 0;
            self.grant_request(s, r, measuring)?;
        }
        for o in self.touched.drain(..) {
            self.req_count[o as usize] = 0;
        }
        self.requests = requests;
        Ok(())
    }

    fn grant_request(&mut self, s: SwitchId, r: &Request, measuring: bool) -> Result<()> {
        let base = s * self.slots;
        let input = base + r.input as usize;
        let output = base + r.output as usize;
        let candidate = self.cache[input][r.candidate as usize];
        let forced = self.cache_forced[input];
        let port = candidate.port as usize;
        self.grant[input] = r.output;
        self.busy[output] = true;
        self.reserved[output] += PACKET_PHITS;
        self.cache_packet[input] = NONE;
        let packet = self.inputs[input].front().expect("requesting head").packet;
        if candidate.class == HopClass::Eject {
            return Ok(());
        }
        let route = &mut self.packets[packet as usize].route;
        if self.config.check_invariants && self.config.routing.is_surepath() {
            let escape_vc = self.config.vcs - 1;
            let vc = r.output as usize % self.config.vcs;
            let on_escape = candidate.provenance == Provenance::Escape;
            if route.in_escape && !on_escape {
                return Err(Error::Invariant {
                    cycle: self.cycle,
                    message: format!("packet {packet} left the escape subnetwork at switch {s}"),
                });
            }
            if on_escape != (vc == escape_vc) {
                return Err(Error::Invariant {
                    cycle: self.cycle,
                    message: format!("packet {packet} got VC {vc} from a {:?} candidate", candidate.provenance),
                });
            }
        }
        let next = self.net.topology.port_target(s, port);
        route.advance(&candidate, next, &self.net.distances);
        if measuring {
            match candidate.provenance {
                Provenance::Escape => {
                    self.counters.escape_hops += 1;
                    if forced {
                        self.counters.forced_hops += 1;
                    }
                }
                Provenance::Routing => self.counters.routing_hops += 1,
            }
        }
        Ok(())
    }

    fn crossbar(&mut self, s: SwitchId) -> bool {
        let base = s * self.slots;
        let mut in_used = [0u8; 256];
        let mut out_used = [0u8; 256];
        let mut moved = false;
        self.collect_active(s);
        let n = self.active.len();
        let start = if n == 0 { 0 } else { (self.cycle % n as u64) as usize };
        for k in 0..n {
            let local = self.active[if start + k >= n { start + k - n } else { start + k }] as usize;
            let input = base + local;
            let out_local = self.grant[input];
            if out_local == NONE {
                continue;
            }
            let (in_port, vc) = (self.slot_port[local] as usize, self.slot_vc[local] as usize);
            let out_port = self.slot_port[out_local as usize] as usize;
            let front = self.inputs[input].front_mut().expect("granted head");
            let room = OUTPUT_VC_PHITS - self.output_phits[base + out_local as usize];
            let budget = (CROSSBAR_SPEEDUP - in_used[in_port])
                .min(CROSSBAR_SPEEDUP - out_used[out_port])
                .min(room.min(CROSSBAR_SPEEDUP as u16) as u8);
            let k = front.present.min(budget);
            if k == 0 {
                continue;
            }
            front.present -= k;
            front.passed += k;
            let (packet, hop) = (front.packet, front.hop);
            let done = front.passed as u16 == PACKET_PHITS;
            if done {
                self.inputs[input].pop_front();
                if self.inputs[input].is_empty() {
                    self.occupied[s * self.words + local / 64] &= !(1 << (local % 64));
                }
            }
            in_used[in_port] += k;
            self.port_occupancy[s * self.radix + out_port] += k as u16;
            out_used[out_port] += k;
            let output = base + out_local as usize;
            self.output_phits[output] += k as u16;
            push_phits(&mut self.outputs[output], packet, hop, k);
            if in_port < self.degree {
                let slot = self.peer[s * self.degree + in_port] + vc as u32;
                for _ in 0..k {
                    self.credit_returns.push(slot);
                }
            } else {
                let server = s * self.net.topology.servers_per_switch() + in_port - self.degree;
                for _ in 0..k {
                    self.server_credit_returns.push((server * self.config.vcs + vc) as u32);
                }
            }
            if done {
                self.grant[input] = NONE;
                self.busy[output] = false;
            }
            moved = true;
        }
        moved
    }

    fn check_invariants(&self) -> Result<()> {
        let topology = &self.net.topology;
        let v = self.config.vcs;
        let fail = |message: String| Error::Invariant {
            cycle: self.cycle,
            message,
        };
        let occupancy = |q: &VecDeque<Segment>| q.iter().map(|e| e.present as u32).sum::<u32>();
        let mut incoming = vec![0u32; self.inputs.len()];
        for &(slot, _, _) in &self.arrivals {
            incoming[slot as usize] += 1;
        }
        let mut returning = vec![0u32; self.inputs.len()];
        for &slot in &self.credit_returns {
            returning[slot as usize] += 1;
        }
        for s in 0..topology.num_switches() {
            let mut port_out = vec![0u32; self.radix];
            for local in 0..self.slots {
                let slot = s * self.slots + local;
                let occ = occupancy(&self.inputs[slot]);
                if occ > INPUT_BUFFER_PHITS as u32 {
                    return Err(fail(format!("input slot {slot} holds {occ} phits")));
                }
                let (port, _) = self.input_port(local);
                let out = occupancy(&self.outputs[slot]);
                if out > OUTPUT_VC_PHITS as u32 || out != self.output_phits[slot] as u32 {
                    return Err(fail(format!("output slot {slot} holds {out} phits")));
                }
                port_out[port] += out;
            }
            for (port, &o) in port_out.iter().enumerate() {
                if o != self.port_occupancy[s * self.radix + port] as u32 {
                    return Err(fail(format!("switch {s} port {port} output holds {o} phits")));
                }
            }
            for port in 0..self.degree {
                if !topology.is_alive(s, port) {
                    continue;
                }
                let neighbor = topology.port_target(s, port);
                let back = topology.reverse_port(s, port);
                for vc in 0..v {
                    let out = s * self.slots + port * v + vc;
                    let down = neighbor * self.slots + back * v + vc;
                    let total = self.credits[out] as u32
                        + incoming[down]
                        + occupancy(&self.inputs[down])
                        + returning[out];
                    if total != INPUT_BUFFER_PHITS as u32 {
                        return Err(fail(format!(
                            "credit conservation broken on switch {s} port {port} vc {vc}: {total}"
                        )));
                    }
                }
            }
        }
        let spp = topology.servers_per_switch();
        let mut server_returning = vec![0u32; self.server_credits.len()];
        for &c in &self.server_credit_returns {
            server_returning[c as usize] += 1;
        }
        for (c, &credits) in self.server_credits.iter().enumerate() {
            let (i, vc) = (c / v, c % v);
            let slot = (i / spp) * self.slots + (self.degree + i % spp) * v + vc;
            let total = credits as u32 + incoming[slot] + occupancy(&self.inputs[slot]) + server_returning[c];
            if total != INPUT_BUFFER_PHITS as u32 {
                return Err(fail(format!("credit conservation broken at server {i} vc {vc}: {total}")));
            }
        }
        let live = (self.packets.len() - self.free.len()) as u64;
        if self.created != self.delivered_total + live || live != self.in_network as u64 {
            return Err(fail(format!(
                "packet conservation broken: created {} delivered {} live {live} in network {}",
                self.created, self.delivered_total, self.in_network
            )));
        }
        Ok(())
    }

    fn wait_for_dump(&self) -> String {
        let mut out = String::new();
        let mut shown = 0;
        for slot in 0..self.inputs.len() {
            let Some(front) = self.inputs[slot].front() else { continue };
            let s = slot / self.slots;
            let (port, vc) = self.input_port(slot % self.slots);
            let p = &self.packets[front.packet as usize];
            let _ = write!(
                out,
                "switch {s} in ({port},{vc}) packet {} server {} -> {} waits on ",
                front.packet, p.source, p.destination
            );
            match self.grant[slot] {
                NONE => {
                    let ports: Vec<_> = self.cache[slot]
                        .iter()
                        .map(|c| format!("{}:{:?}", c.port, c.vcs()))
                        .collect();
                    let _ = writeln!(out, "any of [{}]", ports.join(" "));
                }
                g => {
                    let _ = writeln!(out, "granted output slot {g}");
                }
            }
            shown += 1;
            if shown == 64 {
                out.push_str("...\n");
                break;
            }
        }
        out
    }

    fn summary(&self) -> MetricsRecord {
        let c = &self.counters;
        let injected: Vec<f64> = c.injected.iter().map(|&x| x as f64).collect();
        MetricsRecord {
            offered_load: self.config.load,
            cycles: self.config.measure,
            throughput: accepted_throughput(c.ejected_phits, self.servers.len(), self.config.measure),
            latency: (c.delivered > 0).then(|| c.latency_sum as f64 / c.delivered as f64),
            jain: jain_index(&injected),
            delivered_packets: c.delivered,
            forced_hops: c.forced_hops,
            escape_hops: c.escape_hops,
            routing_hops: c.routing_hops,
            max_hops: c.max_hops,
        }
    }
}

/// Steady-state run: warmup, measurement window and, when configured, a drain.
pub fn run_on(net: &Network, config: &SimConfig) -> Result<MetricsRecord> {
    let mut sim = Simulation::new(net, config)?;
    let end = config.warmup + config.measure;
    while sim.cycle < end {
        sim.step()?;
    }
    if config.drain {
        sim.generating = false;
        sim.injecting = false;
        while sim.in_network > 0 || sim.servers.iter().any(|s| s.injecting.is_some()) {
            sim.step()?;
        }
    }
    Ok(sim.summary())
}

pub fn run(config: &SimConfig) -> Result<MetricsRecord> {
    run_on(&Network::build(config)?, config)
}

/// Every server starts with `phits_per_server` phits queued at cycle 0; runs
/// until all are ejected.
pub fn run_completion_on(net: &Network, config: &SimConfig, phits_per_server: u64, bucket: u64) -> Result<CompletionSeries> {
    let mut sim = Simulation::new(net, config)?;
    sim.generating = false;
    sim.log_ejections = true;
    let packets = phits_per_server.div_ceil(PACKET_PHITS as u64);
    for server in sim.servers.iter_mut() {
        server.backlog.extend(std::iter::repeat_n(0, packets as usize));
    }
    let total = packets * sim.servers.len() as u64;
    while sim.delivered_total < total {
        sim.step()?;
    }
    Ok(completion_series(&sim.ejection_log, bucket, sim.servers.len()))
}

pub fn run_completion(config: &SimConfig, phits_per_server: u64, bucket: u64) -> Result<CompletionSeries> {
    run_completion_on(&Network::build(config)?, config, phits_per_server, bucket)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(sides: &[usize], spp: usize, routing: RoutingKind, vcs: usize) -> SimConfig {
        SimConfig {
            sides: sides.to_vec(),
            servers_per_switch: spp,
            routing,
            vcs,
            warmup: 0,
            measure: 2000,
            check_invariants: true,
            ..SimConfig::default()
        }
    }

    /// One packet between two servers; returns its latency.
    fn lone_packet(sides: &[usize], spp: usize, routing: RoutingKind, vcs: usize, src: usize, dst: usize) -> u64 {
        let cfg = config(sides, spp, routing, vcs);
        let net = Network::build(&cfg).unwrap();
        let mut sim = Simulation::new(&net, &cfg).unwrap();
        sim.generating = false;
        sim.servers[src].backlog.push_back(0);
        sim.pattern = TrafficPattern::fixed(net.topology.num_servers(), src, dst);
        while sim.delivered() == 0 {
            sim.step().unwrap();
            assert!(sim.cycle() < 1000);
        }
        sim.counters.latency_sum
    }

    #[test]
    fn zero_load_latency_golden() {
        // Serialization of 16 phits plus 2 cycles (crossbar, link) per switch traversed.
        assert_eq!(lone_packet(&[2], 1, RoutingKind::Minimal, 2, 0, 1), 20);
        assert_eq!(lone_packet(&[4, 4], 2, RoutingKind::Minimal, 4, 0, 1), 18);
        assert_eq!(lone_packet(&[4, 4], 1, RoutingKind::Minimal, 4, 0, 5), 22);
        assert_eq!(lone_packet(&[4, 4, 4], 1, RoutingKind::Dor, 1, 0, 63), 24);
        assert_eq!(lone_packet(&[4, 4, 4], 1, RoutingKind::OmniSp, 4, 0, 63), 24);
    }

    #[test]
    fn empty_network_is_a_fixed_point() {
        let cfg = config(&[4, 4], 2, RoutingKind::PolSp, 4);
        let net = Network::build(&cfg).unwrap();
        let mut sim = Simulation::new(&net, &cfg).unwrap();
        sim.generating = false;
        for _ in 0..100 {
            sim.step().unwrap();
        }
        assert_eq!(sim.in_network(), 0);
        assert!(sim.inputs.iter().chain(&sim.outputs).all(|q| q.is_empty()));
        assert!(sim.credits.iter().all(|&c| c == 0 || c == INPUT_BUFFER_PHITS));
    }

    #[test]
    fn two_switch_completion_is_the_serialization_bound() {
        let cfg = config(&[2], 1, RoutingKind::Minimal, 2);
        let series = run_completion(&cfg, 32, 1000).unwrap();
        // 32 phits serialized, then 2 cycles per switch for the tail.
        assert_eq!(series.completion_cycle, 36);
        assert_eq!(series.accepted_phits, vec![64]);
        assert_eq!(run_completion(&cfg, 0, 1000).unwrap().completion_cycle, 0);
    }

    #[test]
    fn low_load_accepts_offered() {
        let mut cfg = config(&[4, 4], 4, RoutingKind::Minimal, 4);
        cfg.load = 0.05;
        cfg.warmup = 2000;
        cfg.measure = 10_000;
        let r = run(&cfg).unwrap();
        assert!((r.throughput - 0.05).abs() < 0.006, "{r:?}");
        assert!(r.latency.unwrap() < 30.0, "{r:?}");
        assert!(r.jain.unwrap() > 0.95, "{r:?}");
    }

    #[test]
    fn invariants_hold_under_heavy_load() {
        for routing in RoutingKind::ALL {
            let vcs = if routing == RoutingKind::Dor { 1 } else { 4 };
            let mut cfg = config(&[4, 4], 2, routing, vcs);
            cfg.load = 1.0;
            cfg.warmup = 200;
            cfg.measure = 1500;
            let r = run(&cfg).unwrap_or_else(|e| panic!("{routing}: {e}"));
            assert!(r.throughput > 0.2, "{routing}: {r:?}");
            if routing.is_surepath() {
                assert_eq!(r.forced_hops, 0);
            }
        }
    }

    #[test]
    fn determinism() {
        let mut cfg = config(&[4, 4], 2, RoutingKind::OmniSp, 4);
        cfg.load = 0.7;
        cfg.measure = 1000;
        assert_eq!(run(&cfg).unwrap(), run(&cfg).unwrap());
        let other = SimConfig { seed: 2, ..cfg.clone() };
        assert_ne!(run(&cfg).unwrap(), run(&other).unwrap());
    }

    #[test]
    fn dor_cannot_route_around_a_fault() {
        let mut cfg = config(&[4, 4], 1, RoutingKind::Dor, 1);
        cfg.faults = FaultSpec::Random { seed: 3, count: 1 };
        cfg.load = 0.5;
        assert!(matches!(run(&cfg), Err(Error::Undeliverable { .. })));
    }

    #[test]
    fn surepath_survives_faults() {
        let mut cfg = config(&[4, 4, 4], 1, RoutingKind::PolSp, 4);
        cfg.faults = FaultSpec::Random { seed: 9, count: 40 };
        cfg.load = 0.8;
        cfg.measure = 1500;
        let r = run(&cfg).unwrap();
        assert!(r.throughput > 0.5, "{r:?}");
        assert_eq!(r.forced_hops, 0);
    }

    #[test]
    fn deadlock_detector_fires() {
        // Minimal routing with the ladder removed: both dimension orders share
        // the same VC, so full buffers close a cycle.
        let mut cfg = config(&[3, 3], 4, RoutingKind::Minimal, 1);
        cfg.load = 1.0;
        cfg.max_idle = 200;
        cfg.check_invariants = false;
        let net = Network::build(&cfg).unwrap();
        let mut sim = Simulation::new(&net, &cfg).unwrap();
        sim.free_vcs = true;
        let err = loop {
            if let Err(e) = sim.step() {
                break e;
            }
            assert!(sim.cycle() < 20_000, "no deadlock formed");
        };
        assert!(matches!(err, Error::Deadlock { .. }), "{err}");
    }
}
