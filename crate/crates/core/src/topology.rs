//! HyperX (Hamming graph) switch fabric with a removable-link fault mask.
//!
//! Switches are numbered in mixed radix with dimension 0 as the least
//! significant digit. Each switch has `Σ(k_i − 1)` switch ports followed by
//! `servers_per_switch` server ports. Switch ports are laid out
//! dimension-major and, within a dimension, by ascending neighbour coordinate
//! skipping the switch's own coordinate. A faulted link keeps its port
//! numbers; the port is simply dead.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use crate::error::{Error, Result};

/// Dense switch index.
pub type SwitchId = usize;

/// Distance value used for switches that cannot be reached.
pub const UNREACHABLE: u16 = u16::MAX;

/// Per-dimension coordinates of a switch.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coordinates(pub Vec<usize>);

impl Coordinates {
    pub fn new(values: impl Into<Vec<usize>>) -> Self {
        Coordinates(values.into())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn hamming(&self, other: &Coordinates) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

impl fmt::Display for Coordinates {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Accepts `[1,2,3]`, `(1,2,3)` or `1,2,3`.
impl std::str::FromStr for Coordinates {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches(['[', '(']).trim_end_matches([']', ')']);
        inner
            .split(',')
            .map(|v| v.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Coordinates)
            .map_err(|_| Error::InvalidCoordinates(format!("cannot parse `{s}`")))
    }
}

impl From<&[usize]> for Coordinates {
    fn from(v: &[usize]) -> Self {
        Coordinates(v.to_vec())
    }
}

/// An undirected switch-to-switch link. The endpoints are stored in
/// ascending order so two `LinkId`s naming the same link compare equal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkId {
    low: SwitchId,
    high: SwitchId,
    dimension: usize,
}

impl LinkId {
    pub fn endpoints(&self) -> (SwitchId, SwitchId) {
        (self.low, self.high)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }
}

/// All-pairs shortest path hop counts on the (possibly faulted) graph.
#[derive(Clone, Debug)]
pub struct DistanceTable {
    size: usize,
    table: Vec<u16>,
}

/// Exact mean as a numerator/denominator pair.
#[derive(Clone, Copy, Debug)]
pub struct Mean {
    pub sum: u64,
    pub count: u64,
}

impl Mean {
    pub fn as_f64(&self) -> f64 {
        self.sum as f64 / self.count as f64
    }

    /// Exact comparison against `num/den`.
    pub fn equals(&self, num: u64, den: u64) -> bool {
        self.sum as u128 * den as u128 == num as u128 * self.count as u128
    }
}

impl DistanceTable {
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    #[inline]
    pub fn get(&self, from: SwitchId, to: SwitchId) -> u16 {
        self.table[from * self.size + to]
    }

    pub fn row(&self, from: SwitchId) -> &[u16] {
        &self.table[from * self.size..(from + 1) * self.size]
    }

    pub fn is_connected(&self) -> bool {
        !self.table.contains(&UNREACHABLE)
    }

    /// Largest pairwise distance, or `None` when some pair is unreachable.
    pub fn diameter(&self) -> Option<u16> {
        if !self.is_connected() {
            return None;
        }
        self.table.iter().copied().max()
    }

    /// Mean over all ordered pairs including self-pairs, or `None` when disconnected.
    pub fn average_distance(&self) -> Option<Mean> {
        if !self.is_connected() {
            return None;
        }
        let sum = self.table.iter().map(|&d| d as u64).sum();
        Some(Mean {
            sum,
            count: (self.size * self.size) as u64,
        })
    }
}

/// A HyperX network with sides `k_1 × … × k_n`.
#[derive(Clone, Debug)]
pub struct HyperX {
    sides: Vec<usize>,
    servers_per_switch: usize,
    strides: Vec<usize>,
    port_offsets: Vec<usize>,
    degree: usize,
    num_switches: usize,
    faults: BTreeSet<LinkId>,
    alive: Vec<bool>,
}

impl HyperX {
    pub fn new(sides: &[usize], servers_per_switch: usize) -> Result<Self> {
        if sides.is_empty() {
            return Err(Error::InvalidTopology("at least one dimension is required".into()));
        }
        if let Some(&k) = sides.iter().find(|&&k| k < 2) {
            return Err(Error::InvalidTopology(format!("side {k} is below 2")));
        }
        let mut strides = Vec::with_capacity(sides.len());
        let mut port_offsets = Vec::with_capacity(sides.len());
        let mut stride = 1;
        let mut offset = 0;
        for &k in sides {
            strides.push(stride);
            port_offsets.push(offset);
            stride *= k;
            offset += k - 1;
        }
        Ok(HyperX {
            sides: sides.to_vec(),
            servers_per_switch,
            strides,
            port_offsets,
            degree: offset,
            num_switches: stride,
            faults: BTreeSet::new(),
            alive: vec![true; stride * offset],
        })
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    pub fn dimensions(&self) -> usize {
        self.sides.len()
    }

    pub fn servers_per_switch(&self) -> usize {
        self.servers_per_switch
    }

    pub fn num_switches(&self) -> usize {
        self.num_switches
    }

    pub fn num_servers(&self) -> usize {
        self.num_switches * self.servers_per_switch
    }

    /// Number of switch-to-switch ports per switch, dead or alive.
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Switch ports plus server ports.
    pub fn radix(&self) -> usize {
        self.degree + self.servers_per_switch
    }

    pub fn fault_free_link_count(&self) -> usize {
        self.num_switches * self.degree / 2
    }

    pub fn link_count(&self) -> usize {
        self.fault_free_link_count() - self.faults.len()
    }

    pub fn faults(&self) -> &BTreeSet<LinkId> {
        &self.faults
    }

    pub fn coordinates(&self, switch: SwitchId) -> Coordinates {
        Coordinates(
            self.sides
                .iter()
                .zip(&self.strides)
                .map(|(&k, &s)| (switch / s) % k)
                .collect(),
        )
    }

    #[inline]
    pub fn coordinate(&self, switch: SwitchId, dimension: usize) -> usize {
        (switch / self.strides[dimension]) % self.sides[dimension]
    }

    pub fn switch_id(&self, coords: &Coordinates) -> Result<SwitchId> {
        if coords.0.len() != self.sides.len() {
            return Err(Error::InvalidCoordinates(format!(
                "{coords} has {} components, topology has {} dimensions",
                coords.0.len(),
                self.sides.len()
            )));
        }
        let mut id = 0;
        for ((&x, &k), &s) in coords.0.iter().zip(&self.sides).zip(&self.strides) {
            if x >= k {
                return Err(Error::InvalidCoordinates(format!("{coords} exceeds side {k}")));
            }
            id += x * s;
        }
        Ok(id)
    }

    /// Hamming distance between two switches.
    pub fn hamming(&self, a: SwitchId, b: SwitchId) -> usize {
        (0..self.sides.len())
            .filter(|&d| self.coordinate(a, d) != self.coordinate(b, d))
            .count()
    }

    /// Dimension of a switch port.
    #[inline]
    pub fn port_dimension(&self, port: usize) -> usize {
        debug_assert!(port < self.degree);
        self.port_offsets.iter().rposition(|&o| o <= port).unwrap()
    }

    /// The switch reached through `port`, regardless of faults.
    #[inline]
    pub fn port_target(&self, switch: SwitchId, port: usize) -> SwitchId {
        let dim = self.port_dimension(port);
        let own = self.coordinate(switch, dim);
        let mut value = port - self.port_offsets[dim];
        if value >= own {
            value += 1;
        }
        switch - own * self.strides[dim] + value * self.strides[dim]
    }

    /// Port of `switch` leading to coordinate `value` in `dimension`.
    #[inline]
    pub fn port_toward(&self, switch: SwitchId, dimension: usize, value: usize) -> usize {
        let own = self.coordinate(switch, dimension);
        debug_assert_ne!(own, value);
        self.port_offsets[dimension] + if value < own { value } else { value - 1 }
    }

    /// Port on the far end of the link leaving `switch` through `port`.
    pub fn reverse_port(&self, switch: SwitchId, port: usize) -> usize {
        let dim = self.port_dimension(port);
        let other = self.port_target(switch, port);
        self.port_toward(other, dim, self.coordinate(switch, dim))
    }

    /// Port connecting two adjacent switches, if they differ in exactly one coordinate.
    pub fn port_between(&self, a: SwitchId, b: SwitchId) -> Option<usize> {
        let mut found = None;
        for d in 0..self.sides.len() {
            let (xa, xb) = (self.coordinate(a, d), self.coordinate(b, d));
            if xa != xb {
                if found.is_some() {
                    return None;
                }
                found = Some(self.port_toward(a, d, xb));
            }
        }
        found
    }

    #[inline]
    pub fn is_alive(&self, switch: SwitchId, port: usize) -> bool {
        self.alive[switch * self.degree + port]
    }

    /// Live switch neighbours as `(port, neighbour)` in port order.
    pub fn neighbors(&self, switch: SwitchId) -> impl Iterator<Item = (usize, SwitchId)> + '_ {
        (0..self.degree)
            .filter(move |&p| self.is_alive(switch, p))
            .map(move |p| (p, self.port_target(switch, p)))
    }

    /// Live neighbours addressed by coordinates.
    pub fn neighbors_of(&self, coords: &Coordinates) -> Result<Vec<(usize, Coordinates)>> {
        let id = self.switch_id(coords)?;
        Ok(self
            .neighbors(id)
            .map(|(p, n)| (p, self.coordinates(n)))
            .collect())
    }

    pub fn link(&self, a: SwitchId, b: SwitchId) -> Result<LinkId> {
        if a >= self.num_switches || b >= self.num_switches {
            return Err(Error::InvalidLink(format!("switch index out of range: {a}-{b}")));
        }
        let port = self
            .port_between(a, b)
            .ok_or_else(|| Error::InvalidLink(format!("switches {a} and {b} are not at Hamming distance 1")))?;
        Ok(LinkId {
            low: a.min(b),
            high: a.max(b),
            dimension: self.port_dimension(port),
        })
    }

    pub fn link_between(&self, a: &Coordinates, b: &Coordinates) -> Result<LinkId> {
        self.link(self.switch_id(a)?, self.switch_id(b)?)
    }

    /// Every switch-to-switch link of the fault-free network, ordered.
    pub fn all_links(&self) -> Vec<LinkId> {
        let mut links = Vec::with_capacity(self.fault_free_link_count());
        for s in 0..self.num_switches {
            for p in 0..self.degree {
                let t = self.port_target(s, p);
                if s < t {
                    links.push(LinkId {
                        low: s,
                        high: t,
                        dimension: self.port_dimension(p),
                    });
                }
            }
        }
        links
    }

    /// Removes the given links. Links already faulted are accepted again;
    /// a link that does not exist in the topology is rejected and nothing changes.
    pub fn apply_faults<'a>(&mut self, faults: impl IntoIterator<Item = &'a LinkId>) -> Result<()> {
        let faults: Vec<LinkId> = faults.into_iter().copied().collect();
        for f in &faults {
            // Re-validate: a LinkId from another topology may not fit this one.
            let check = self.link(f.low, f.high)?;
            if check != *f {
                return Err(Error::InvalidLink(format!("{f:?} does not name a link of this topology")));
            }
        }
        for f in faults {
            let pa = self.port_between(f.low, f.high).unwrap();
            let pb = self.port_between(f.high, f.low).unwrap();
            self.alive[f.low * self.degree + pa] = false;
            self.alive[f.high * self.degree + pb] = false;
            self.faults.insert(f);
        }
        Ok(())
    }

    /// Shortest-path hop counts from `source` on the faulted graph.
    pub fn bfs_distances(&self, source: SwitchId) -> Vec<u16> {
        let mut dist = vec![UNREACHABLE; self.num_switches];
        let mut queue = VecDeque::with_capacity(self.num_switches);
        dist[source] = 0;
        queue.push_back(source);
        while let Some(x) = queue.pop_front() {
            let next = dist[x] + 1;
            for (_, y) in self.neighbors(x) {
                if dist[y] == UNREACHABLE {
                    dist[y] = next;
                    queue.push_back(y);
                }
            }
        }
        dist
    }

    pub fn distance_table(&self) -> DistanceTable {
        let n = self.num_switches;
        // Flat adjacency avoids recomputing port targets for every BFS.
        let adjacency: Vec<Vec<u32>> = (0..n)
            .map(|s| self.neighbors(s).map(|(_, t)| t as u32).collect())
            .collect();
        let mut table = vec![UNREACHABLE; n * n];
        let mut queue = Vec::with_capacity(n);
        for src in 0..n {
            let row = &mut table[src * n..(src + 1) * n];
            row[src] = 0;
            queue.clear();
            queue.push(src as u32);
            let mut head = 0;
            while head < queue.len() {
                let x = queue[head] as usize;
                head += 1;
                let next = row[x] + 1;
                for &y in &adjacency[x] {
                    if row[y as usize] == UNREACHABLE {
                        row[y as usize] = next;
                        queue.push(y);
                    }
                }
            }
        }
        DistanceTable { size: n, table }
    }

    /// Human-readable descriptor such as `8x8x8`.
    pub fn descriptor(&self) -> String {
        self.sides
            .iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
            .join("x")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: &[usize]) -> Coordinates {
        Coordinates::new(v.to_vec())
    }

    #[test]
    fn table3_parameters() {
        let t2 = HyperX::new(&[16, 16], 16).unwrap();
        assert_eq!(t2.num_switches(), 256);
        assert_eq!(t2.fault_free_link_count(), 3840);
        assert_eq!(t2.radix(), 46);
        let t3 = HyperX::new(&[8, 8, 8], 8).unwrap();
        assert_eq!(t3.num_switches(), 512);
        assert_eq!(t3.fault_free_link_count(), 5376);
        assert_eq!(t3.radix(), 29);
        assert_eq!(t3.num_servers(), 4096);
        let k2 = HyperX::new(&[2], 1).unwrap();
        assert_eq!((k2.num_switches(), k2.fault_free_link_count(), k2.radix()), (2, 1, 2));
    }

    #[test]
    fn rejects_bad_sides() {
        assert!(HyperX::new(&[], 1).is_err());
        assert!(HyperX::new(&[4, 1], 1).is_err());
    }

    #[test]
    fn neighbor_order_and_faults() {
        let mut t = HyperX::new(&[4, 4], 4).unwrap();
        let n: Vec<_> = t.neighbors_of(&c(&[0, 0])).unwrap().into_iter().map(|(_, x)| x).collect();
        assert_eq!(
            n,
            vec![c(&[1, 0]), c(&[2, 0]), c(&[3, 0]), c(&[0, 1]), c(&[0, 2]), c(&[0, 3])]
        );
        let f = t.link_between(&c(&[0, 0]), &c(&[3, 0])).unwrap();
        t.apply_faults(&[f]).unwrap();
        assert_eq!(t.neighbors_of(&c(&[0, 0])).unwrap().len(), 5);
        assert_eq!(t.neighbors_of(&c(&[3, 0])).unwrap().len(), 5);
        assert_eq!(t.link_count(), 47);
    }

    #[test]
    fn invalid_links_rejected() {
        let mut t = HyperX::new(&[4, 4], 1).unwrap();
        assert!(t.link_between(&c(&[0, 0]), &c(&[1, 1])).is_err());
        assert!(t.link_between(&c(&[0, 0]), &c(&[0, 0])).is_err());
        let other = HyperX::new(&[8, 8], 1).unwrap();
        let foreign = other.link_between(&c(&[0, 0]), &c(&[7, 0])).unwrap();
        assert!(t.apply_faults(&[foreign]).is_err());
        assert_eq!(t.link_count(), 48);
    }

    #[test]
    fn ports_roundtrip() {
        let t = HyperX::new(&[3, 4, 5], 2).unwrap();
        for s in 0..t.num_switches() {
            for p in 0..t.degree() {
                let n = t.port_target(s, p);
                assert_eq!(t.hamming(s, n), 1);
                let back = t.reverse_port(s, p);
                assert_eq!(t.port_target(n, back), s);
                assert_eq!(t.port_between(s, n), Some(p));
            }
        }
    }

    #[test]
    fn bfs_examples() {
        let t = HyperX::new(&[16, 16], 16).unwrap();
        let d = t.bfs_distances(t.switch_id(&c(&[0, 0])).unwrap());
        assert_eq!(d[t.switch_id(&c(&[1, 1])).unwrap()], 2);
        let t = HyperX::new(&[8, 8, 8], 8).unwrap();
        let d = t.bfs_distances(0);
        assert_eq!(d[t.switch_id(&c(&[1, 2, 3])).unwrap()], 3);
    }

    #[test]
    fn bfs_around_isolated_row() {
        let mut t = HyperX::new(&[4, 4], 4).unwrap();
        let faults: Vec<_> = (1..4)
            .map(|x| t.link_between(&c(&[0, 0]), &c(&[x, 0])).unwrap())
            .collect();
        t.apply_faults(&faults).unwrap();
        let d = t.bfs_distances(0);
        // No dimension-0 link is left at (0,0): leave the row, cross, come back.
        assert_eq!(d[t.switch_id(&c(&[1, 0])).unwrap()], 3);
        assert_eq!(d[t.switch_id(&c(&[1, 1])).unwrap()], 2);
    }

    #[test]
    fn diameters_and_averages() {
        let t = HyperX::new(&[16, 16], 16).unwrap().distance_table();
        assert_eq!(t.diameter(), Some(2));
        assert!(t.average_distance().unwrap().equals(480, 256));
        let t = HyperX::new(&[8, 8, 8], 8).unwrap().distance_table();
        assert_eq!(t.diameter(), Some(3));
        let avg = t.average_distance().unwrap();
        assert!(avg.equals(1344, 512));
        assert_eq!(avg.as_f64(), 2.625);
    }

    #[test]
    fn disconnected_reports_none() {
        let mut t = HyperX::new(&[2], 1).unwrap();
        let l = t.all_links();
        t.apply_faults(&l).unwrap();
        let d = t.distance_table();
        assert_eq!(d.diameter(), None);
        assert!(d.average_distance().is_none());
        assert_eq!(d.get(0, 1), UNREACHABLE);
    }
}
