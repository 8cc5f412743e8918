//! Up/Down escape subnetwork with opportunistic shortcuts.
//!
//! A root switch is chosen and every switch gets a level equal to its BFS
//! distance to the root. Links joining switches of different levels are
//! Black (Up/Down); links inside a level are Red (horizontal). The Up/Down
//! distance between two switches is the length of the shortest path that
//! first climbs strictly towards the root and then descends strictly away
//! from it, over Black links only. An escape hop is admitted whenever the
//! neighbour is strictly closer to the target in Up/Down distance, which
//! lets Red links act as shortcuts. Down hops are further restricted to
//! ancestors of the target, so a packet never climbs again after descending.

use std::io::Write;

use crate::topology::{HyperX, SwitchId, UNREACHABLE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkColor {
    Black,
    Red,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EscapeMove {
    Up,
    Down,
    Shortcut,
}

/// Penalties in phits for escape candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EscapePenalties {
    pub up: u16,
    pub down: u16,
    /// Shortcut penalty for an Up/Down distance reduction of 1, 2 and 3 or more.
    pub shortcut: [u16; 3],
}

impl Default for EscapePenalties {
    fn default() -> Self {
        EscapePenalties {
            up: 112,
            down: 96,
            shortcut: [80, 64, 48],
        }
    }
}

impl EscapePenalties {
    pub fn penalty(&self, kind: EscapeMove, reduction: u16) -> u16 {
        match kind {
            EscapeMove::Up => self.up,
            EscapeMove::Down => self.down,
            EscapeMove::Shortcut => self.shortcut[(reduction.clamp(1, 3) - 1) as usize],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EscapeCandidate {
    pub port: usize,
    pub neighbor: SwitchId,
    pub reduction: u16,
    pub kind: EscapeMove,
    pub penalty: u16,
}

#[derive(Clone, Debug)]
pub struct EscapeNetwork {
    root: SwitchId,
    size: usize,
    level: Vec<u16>,
    ud: Vec<u16>,
}

impl EscapeNetwork {
    /// Builds levels and the dense Up/Down distance table. Switches outside
    /// the root's component get `UNREACHABLE` level and distances; see
    /// [`EscapeNetwork::uncovered`].
    pub fn build(topology: &HyperX, root: SwitchId) -> Self {
        let n = topology.num_switches();
        let level = topology.bfs_distances(root);

        // Renumber covered switches by (level, id) so the highest set bit of
        // an ancestor intersection is a deepest common ancestor.
        let mut order: Vec<SwitchId> = (0..n).filter(|&s| level[s] != UNREACHABLE).collect();
        order.sort_by_key(|&s| (level[s], s));
        let mut rank = vec![usize::MAX; n];
        for (r, &s) in order.iter().enumerate() {
            rank[s] = r;
        }
        let words = order.len().div_ceil(64).max(1);
        let mut ancestors = vec![0u64; n * words];
        for &s in &order {
            let r = rank[s];
            ancestors[s * words + r / 64] |= 1 << (r % 64);
            for (_, p) in topology.neighbors(s) {
                if level[p] + 1 == level[s] {
                    for w in 0..words {
                        let bits = ancestors[p * words + w];
                        ancestors[s * words + w] |= bits;
                    }
                }
            }
        }

        let mut ud = vec![UNREACHABLE; n * n];
        for &x in &order {
            let ax = &ancestors[x * words..(x + 1) * words];
            for &y in &order {
                let ay = &ancestors[y * words..(y + 1) * words];
                let deepest = (0..words)
                    .rev()
                    .find_map(|w| {
                        let common = ax[w] & ay[w];
                        (common != 0).then(|| w * 64 + 63 - common.leading_zeros() as usize)
                    })
                    .expect("root is a common ancestor");
                let z = order[deepest];
                ud[x * n + y] = level[x] + level[y] - 2 * level[z];
            }
        }
        EscapeNetwork {
            root,
            size: n,
            level,
            ud,
        }
    }

    pub fn root(&self) -> SwitchId {
        self.root
    }

    pub fn level(&self, switch: SwitchId) -> u16 {
        self.level[switch]
    }

    pub fn is_covered(&self, switch: SwitchId) -> bool {
        self.level[switch] != UNREACHABLE
    }

    /// Switches outside the root's component.
    pub fn uncovered(&self) -> Vec<SwitchId> {
        (0..self.size).filter(|&s| !self.is_covered(s)).collect()
    }

    #[inline]
    pub fn ud_distance(&self, from: SwitchId, to: SwitchId) -> u16 {
        self.ud[from * self.size + to]
    }

    /// Colour of the live link between `a` and `b`, `None` if there is no such link.
    pub fn color(&self, topology: &HyperX, a: SwitchId, b: SwitchId) -> Option<LinkColor> {
        let port = topology.port_between(a, b)?;
        if !topology.is_alive(a, port) {
            return None;
        }
        Some(if self.level[a] == self.level[b] {
            LinkColor::Red
        } else {
            LinkColor::Black
        })
    }

    pub fn red_link_count(&self, topology: &HyperX) -> usize {
        (0..self.size)
            .flat_map(|s| topology.neighbors(s).map(move |(_, t)| (s, t)))
            .filter(|&(s, t)| s < t && self.level[s] == self.level[t])
            .count()
    }

    /// Appends to `out` every live neighbour of `current` strictly closer to
    /// `target` in Up/Down distance.
    pub fn candidates_into(
        &self,
        topology: &HyperX,
        current: SwitchId,
        target: SwitchId,
        penalties: &EscapePenalties,
        out: &mut Vec<EscapeCandidate>,
    ) {
        let here = self.ud_distance(current, target);
        if here == UNREACHABLE || current == target {
            return;
        }
        let own_level = self.level[current];
        let target_level = self.level[target];
        for (port, m) in topology.neighbors(current) {
            let there = self.ud_distance(m, target);
            if there < here {
                let reduction = here - there;
                let kind = match self.level[m].cmp(&own_level) {
                    std::cmp::Ordering::Less => EscapeMove::Up,
                    std::cmp::Ordering::Greater => EscapeMove::Down,
                    std::cmp::Ordering::Equal => EscapeMove::Shortcut,
                };
                // A Down hop into a switch that is not an ancestor of the
                // target would have to climb again afterwards.
                if kind == EscapeMove::Down && there + self.level[m] != target_level {
                    continue;
                }
                out.push(EscapeCandidate {
                    port,
                    neighbor: m,
                    reduction,
                    kind,
                    penalty: penalties.penalty(kind, reduction),
                });
            }
        }
    }

    pub fn candidates(
        &self,
        topology: &HyperX,
        current: SwitchId,
        target: SwitchId,
        penalties: &EscapePenalties,
    ) -> Vec<EscapeCandidate> {
        let mut out = Vec::new();
        self.candidates_into(topology, current, target, penalties, &mut out);
        out
    }

    /// Writes `switch,coordinates,level` rows followed by `a,b,color` rows.
    pub fn dump_csv<W: Write>(&self, topology: &HyperX, mut out: W) -> std::io::Result<()> {
        writeln!(out, "switch,coordinates,level")?;
        for s in 0..self.size {
            let level = if self.is_covered(s) {
                self.level[s].to_string()
            } else {
                "unreachable".to_string()
            };
            writeln!(out, "{s},\"{}\",{level}", topology.coordinates(s))?;
        }
        writeln!(out, "a,b,color")?;
        for s in 0..self.size {
            for (_, t) in topology.neighbors(s) {
                if s < t {
                    let color = match self.color(topology, s, t) {
                        Some(LinkColor::Black) => "black",
                        _ => "red",
                    };
                    writeln!(out, "{s},{t},{color}")?;
                }
            }
        }
        Ok(())
    }
}

/// Result of a channel dependency analysis.
#[derive(Clone, Debug)]
pub struct DependencyCheck {
    pub acyclic: bool,
    pub channels: usize,
    pub dependencies: usize,
    /// Directed channels `(from, to)` closing a dependency cycle, empty when acyclic.
    pub witness: Vec<(SwitchId, SwitchId)>,
}

/// Dense channel dependency graph over directed switch-to-switch channels.
struct DependencyGraph {
    channels: usize,
    words: usize,
    bits: Vec<u64>,
}

impl DependencyGraph {
    fn new(channels: usize) -> Self {
        let words = channels.div_ceil(64).max(1);
        DependencyGraph {
            channels,
            words,
            bits: vec![0; channels * words],
        }
    }

    fn add(&mut self, from: usize, to: usize) {
        self.bits[from * self.words + to / 64] |= 1 << (to % 64);
    }

    fn successors(&self, from: usize) -> impl Iterator<Item = usize> + '_ {
        let row = &self.bits[from * self.words..(from + 1) * self.words];
        row.iter().enumerate().flat_map(|(w, &word)| {
            let mut word = word;
            std::iter::from_fn(move || {
                if word == 0 {
                    return None;
                }
                let b = word.trailing_zeros() as usize;
                word &= word - 1;
                Some(w * 64 + b)
            })
        })
    }

    fn arc_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Iterative three-colour DFS; returns a cycle as a channel list if one exists.
    fn find_cycle(&self) -> Option<Vec<usize>> {
        const WHITE: u8 = 0;
        const GREY: u8 = 1;
        const BLACK: u8 = 2;
        let mut color = vec![WHITE; self.channels];
        let mut parent = vec![usize::MAX; self.channels];
        for start in 0..self.channels {
            if color[start] != WHITE {
                continue;
            }
            let mut stack: Vec<(usize, Vec<usize>)> = vec![(start, self.successors(start).collect())];
            color[start] = GREY;
            while let Some((node, pending)) = stack.last_mut() {
                let node = *node;
                match pending.pop() {
                    Some(next) => match color[next] {
                        WHITE => {
                            color[next] = GREY;
                            parent[next] = node;
                            stack.push((next, self.successors(next).collect()));
                        }
                        GREY => {
                            let mut cycle = vec![next];
                            let mut at = node;
                            while at != next {
                                cycle.push(at);
                                at = parent[at];
                            }
                            cycle.reverse();
                            cycle.rotate_right(1);
                            return Some(cycle);
                        }
                        _ => {}
                    },
                    None => {
                        color[node] = BLACK;
                        stack.pop();
                    }
                }
            }
        }
        None
    }
}

fn channel_index(topology: &HyperX, switch: SwitchId, port: usize) -> usize {
    switch * topology.degree() + port
}

fn channel_endpoints(topology: &HyperX, channel: usize) -> (SwitchId, SwitchId) {
    let s = channel / topology.degree();
    let p = channel % topology.degree();
    (s, topology.port_target(s, p))
}

fn finish(topology: &HyperX, graph: &DependencyGraph) -> DependencyCheck {
    let cycle = graph.find_cycle();
    DependencyCheck {
        acyclic: cycle.is_none(),
        channels: graph.channels,
        dependencies: graph.arc_count(),
        witness: cycle
            .unwrap_or_default()
            .into_iter()
            .map(|c| channel_endpoints(topology, c))
            .collect(),
    }
}

/// Builds the full dependency graph of the escape channel: an arc joins
/// `u→v` to `v→w` whenever, for some target, both are escape candidates at
/// their respective switches. Shortcuts make this graph cyclic even on
/// fault-free networks; deadlock freedom is decided by
/// [`verify_escape_acyclic`] instead.
pub fn full_dependency_check(topology: &HyperX, escape: &EscapeNetwork) -> DependencyCheck {
    let n = topology.num_switches();
    let mut graph = DependencyGraph::new(n * topology.degree());
    let penalties = EscapePenalties::default();
    let mut cands: Vec<Vec<EscapeCandidate>> = vec![Vec::new(); n];
    for target in 0..n {
        if !escape.is_covered(target) {
            continue;
        }
        for (s, list) in cands.iter_mut().enumerate() {
            list.clear();
            escape.candidates_into(topology, s, target, &penalties, list);
        }
        for u in 0..n {
            for first in &cands[u] {
                let v = first.neighbor;
                let from = channel_index(topology, u, first.port);
                for second in &cands[v] {
                    graph.add(from, channel_index(topology, v, second.port));
                }
            }
        }
    }
    finish(topology, &graph)
}

/// Deadlock-freedom check for the escape channel under virtual cut-through,
/// where a blocked packet sits whole in one buffer and may request any of
/// its candidates.
///
/// The Up and Down candidates form a connected routing subfunction over
/// Black channels (climb while the switch is not an ancestor of the target,
/// then descend through ancestors). Its extended dependency graph has an arc
/// from Black channel `u→v` to every Up/Down candidate at `v` for every
/// target a packet on `u→v` may hold. When that graph is acyclic no set of
/// full escape buffers can block each other, whatever the shortcuts do.
pub fn verify_escape_acyclic(topology: &HyperX, escape: &EscapeNetwork) -> DependencyCheck {
    let n = topology.num_switches();
    let mut graph = DependencyGraph::new(n * topology.degree());
    let penalties = EscapePenalties::default();
    let mut cands: Vec<Vec<EscapeCandidate>> = vec![Vec::new(); n];
    let mut canonical: Vec<Vec<usize>> = vec![Vec::new(); n];
    for target in 0..n {
        if !escape.is_covered(target) {
            continue;
        }
        for s in 0..n {
            cands[s].clear();
            escape.candidates_into(topology, s, target, &penalties, &mut cands[s]);
            canonical[s].clear();
            canonical[s].extend(
                cands[s]
                    .iter()
                    .filter(|c| c.kind != EscapeMove::Shortcut)
                    .map(|c| c.port),
            );
            debug_assert!(
                s == target || !escape.is_covered(s) || !canonical[s].is_empty(),
                "an Up/Down route must exist"
            );
        }
        for (u, list) in cands.iter().enumerate() {
            for first in list {
                if first.kind == EscapeMove::Shortcut {
                    continue;
                }
                let from = channel_index(topology, u, first.port);
                for &port in &canonical[first.neighbor] {
                    graph.add(from, channel_index(topology, first.neighbor, port));
                }
            }
        }
    }
    finish(topology, &graph)
}
