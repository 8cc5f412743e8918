//! Synthetic traffic patterns over servers numbered switch-major:
//! server `s` sits on switch `s / servers_per_switch` at local index
//! `s % servers_per_switch`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::topology::{Coordinates, HyperX, SwitchId};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ServerId {
    pub switch: Coordinates,
    pub index: usize,
}

impl ServerId {
    pub fn from_number(topology: &HyperX, server: usize) -> Self {
        let spp = topology.servers_per_switch();
        ServerId {
            switch: topology.coordinates(server / spp),
            index: server % spp,
        }
    }

    pub fn number(&self, topology: &HyperX) -> Result<usize> {
        if self.index >= topology.servers_per_switch() {
            return Err(Error::InvalidCoordinates(format!(
                "server index {} on a switch with {} servers",
                self.index,
                topology.servers_per_switch()
            )));
        }
        Ok(topology.switch_id(&self.switch)? * topology.servers_per_switch() + self.index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PatternKind {
    Uniform,
    ServerPermutation,
    DimComplementReverse,
    RegularPermutationToNeighbour,
}

impl PatternKind {
    pub fn name(self) -> &'static str {
        match self {
            PatternKind::Uniform => "uniform",
            PatternKind::ServerPermutation => "server_perm",
            PatternKind::DimComplementReverse => "dcr",
            PatternKind::RegularPermutationToNeighbour => "rpn",
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "uniform" => PatternKind::Uniform,
            "server_perm" => PatternKind::ServerPermutation,
            "dcr" => PatternKind::DimComplementReverse,
            "rpn" => PatternKind::RegularPermutationToNeighbour,
            _ => return Err(Error::InvalidPattern(format!("unknown traffic pattern `{s}`"))),
        })
    }
}

/// A pattern ready to draw destinations. Permutation patterns hold a frozen
/// server table.
#[derive(Clone, Debug)]
pub struct TrafficPattern {
    kind: PatternKind,
    servers: usize,
    table: Option<Vec<u32>>,
}

impl TrafficPattern {
    pub fn new(kind: PatternKind, topology: &HyperX, seed: u64) -> Result<Self> {
        let servers = topology.num_servers();
        let table = match kind {
            PatternKind::Uniform => {
                if servers < 2 {
                    return Err(Error::InvalidPattern("uniform traffic needs at least 2 servers".into()));
                }
                None
            }
            PatternKind::ServerPermutation => Some(random_server_permutation(servers, seed)),
            PatternKind::DimComplementReverse => Some(
                (0..servers)
                    .map(|s| dim_complement_reverse(topology, s).map(|d| d as u32))
                    .collect::<Result<_>>()?,
            ),
            PatternKind::RegularPermutationToNeighbour => {
                let switches = regular_perm_to_neighbour(topology)?;
                let spp = topology.servers_per_switch();
                Some(
                    (0..servers)
                        .map(|s| (switches[s / spp] * spp + s % spp) as u32)
                        .collect(),
                )
            }
        };
        Ok(TrafficPattern { kind, servers, table })
    }

    /// Every server sends to itself except `source`, which sends to `destination`.
    #[cfg(test)]
    pub(crate) fn fixed(servers: usize, source: usize, destination: usize) -> Self {
        let mut table: Vec<u32> = (0..servers as u32).collect();
        table[source] = destination as u32;
        TrafficPattern {
            kind: PatternKind::ServerPermutation,
            servers,
            table: Some(table),
        }
    }

    pub fn kind(&self) -> PatternKind {
        self.kind
    }

    /// Persistent destination table, absent for per-packet patterns.
    pub fn table(&self) -> Option<&[u32]> {
        self.table.as_deref()
    }

    #[inline]
    pub fn destination<R: Rng + ?Sized>(&self, source: usize, rng: &mut R) -> usize {
        match &self.table {
            Some(t) => t[source] as usize,
            None => uniform_dest(self.servers, source, rng),
        }
    }
}

/// Uniform over every server but `source`.
#[inline]
pub fn uniform_dest<R: Rng + ?Sized>(servers: usize, source: usize, rng: &mut R) -> usize {
    let d = rng.gen_range(0..servers - 1);
    if d >= source {
        d + 1
    } else {
        d
    }
}

pub fn random_server_permutation(servers: usize, seed: u64) -> Vec<u32> {
    let mut table: Vec<u32> = (0..servers as u32).collect();
    table.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    table
}

/// Dimension Complement Reverse. In 3D it permutes switches,
/// (x,y,z) → (k−1−z, k−1−y, k−1−x), keeping the server index. In 2D with
/// `k` servers per switch it acts on servers (w,x,y) → (k−1−y, k−1−x, k−1−w)
/// where `w` is the local index.
pub fn dim_complement_reverse(topology: &HyperX, server: usize) -> Result<usize> {
    let sides = topology.sides();
    let k = sides[0];
    if sides.iter().any(|&s| s != k) {
        return Err(Error::InvalidPattern("dcr needs equal sides".into()));
    }
    let spp = topology.servers_per_switch();
    let c = topology.coordinates(server / spp).0;
    let w = server % spp;
    let flip = |v: usize| k - 1 - v;
    match sides.len() {
        3 => {
            let s = topology.switch_id(&Coordinates::new(vec![flip(c[2]), flip(c[1]), flip(c[0])]))?;
            Ok(s * spp + w)
        }
        2 => {
            if spp != k {
                return Err(Error::InvalidPattern(format!(
                    "2D dcr needs {k} servers per switch, got {spp}"
                )));
            }
            let s = topology.switch_id(&Coordinates::new(vec![flip(c[0]), flip(w)]))?;
            Ok(s * spp + flip(c[1]))
        }
        n => Err(Error::InvalidPattern(format!("dcr is defined for 2D and 3D, not {n}D"))),
    }
}

/// Directed Hamiltonian cycle of the 3-cube as (c0,c1,c2) parity triples:
/// 000→001→011→010→110→111→101→100.
const GRAY_CYCLE: [[usize; 3]; 8] = [
    [0, 0, 0],
    [0, 0, 1],
    [0, 1, 1],
    [0, 1, 0],
    [1, 1, 0],
    [1, 1, 1],
    [1, 0, 1],
    [1, 0, 0],
];

/// Regular Permutation to Neighbour: every 2×2×2 block follows the cycle
/// above, so each switch sends to a Hamming neighbour.
pub fn regular_perm_to_neighbour(topology: &HyperX) -> Result<Vec<SwitchId>> {
    let sides = topology.sides();
    if sides.len() != 3 || sides.iter().any(|&k| k % 2 != 0) {
        return Err(Error::InvalidPattern(format!(
            "rpn needs a 3D topology with even sides, got {}",
            topology.descriptor()
        )));
    }
    (0..topology.num_switches())
        .map(|s| {
            let c = topology.coordinates(s).0;
            let parity = [c[0] % 2, c[1] % 2, c[2] % 2];
            let pos = GRAY_CYCLE.iter().position(|g| *g == parity).expect("all parities listed");
            let next = GRAY_CYCLE[(pos + 1) % 8];
            let image: Vec<usize> = (0..3).map(|d| c[d] - parity[d] + next[d]).collect();
            topology.switch_id(&Coordinates::new(image))
        })
        .collect()
}

/// No server receives more than one persistent flow.
pub fn verify_admissible(pattern: &TrafficPattern) -> bool {
    match pattern.table() {
        None => true,
        Some(t) => table_is_permutation(t),
    }
}

pub fn table_is_permutation(table: &[u32]) -> bool {
    let mut seen = vec![false; table.len()];
    table.iter().all(|&d| {
        let d = d as usize;
        d < seen.len() && !std::mem::replace(&mut seen[d], true)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: &[usize]) -> Coordinates {
        Coordinates::new(v.to_vec())
    }

    #[test]
    fn uniform_never_self_and_two_servers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(uniform_dest(2, 0, &mut rng), 1);
            assert_eq!(uniform_dest(2, 1, &mut rng), 0);
            assert_ne!(uniform_dest(10, 4, &mut rng), 4);
        }
    }

    #[test]
    fn uniform_chi_square() {
        let servers = 64;
        let draws = 1_000_000;
        let mut counts = vec![0u64; servers];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..draws {
            counts[uniform_dest(servers, 5, &mut rng)] += 1;
        }
        assert_eq!(counts[5], 0);
        let expected = draws as f64 / (servers - 1) as f64;
        let chi: f64 = counts
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != 5)
            .map(|(_, &o)| (o as f64 - expected).powi(2) / expected)
            .sum();
        // 62 degrees of freedom: mean 62, sd ≈ 11.1.
        assert!(chi < 62.0 + 3.0 * (2.0f64 * 62.0).sqrt(), "{chi}");
    }

    #[test]
    fn server_permutation() {
        let p = random_server_permutation(100, 9);
        assert!(table_is_permutation(&p));
        assert_eq!(p, random_server_permutation(100, 9));
        let mut inverse = vec![0; 100];
        for (s, &d) in p.iter().enumerate() {
            inverse[d as usize] = s;
        }
        assert!((0..100).all(|s| inverse[p[s] as usize] == s));
    }

    #[test]
    fn dcr_examples() {
        let t = HyperX::new(&[8, 8, 8], 8).unwrap();
        let at = |v: &[usize], w: usize| t.switch_id(&c(v)).unwrap() * 8 + w;
        assert_eq!(dim_complement_reverse(&t, at(&[0, 0, 0], 3)).unwrap(), at(&[7, 7, 7], 3));
        assert_eq!(dim_complement_reverse(&t, at(&[1, 2, 3], 0)).unwrap(), at(&[4, 5, 6], 0));
        for s in 0..t.num_servers() {
            let d = dim_complement_reverse(&t, s).unwrap();
            assert_eq!(dim_complement_reverse(&t, d).unwrap(), s);
        }
        let t2 = HyperX::new(&[16, 16], 16).unwrap();
        let src = ServerId { switch: c(&[3, 5]), index: 0 }.number(&t2).unwrap();
        let dst = ServerId::from_number(&t2, dim_complement_reverse(&t2, src).unwrap());
        assert_eq!(dst, ServerId { switch: c(&[12, 15]), index: 10 });
        let p = TrafficPattern::new(PatternKind::DimComplementReverse, &t2, 0).unwrap();
        assert!(verify_admissible(&p));
        assert!(dim_complement_reverse(&HyperX::new(&[16, 16], 4).unwrap(), 0).is_err());
        assert!(dim_complement_reverse(&HyperX::new(&[4, 8], 4).unwrap(), 0).is_err());
    }

    #[test]
    fn rpn_is_a_neighbour_permutation_of_8_cycles() {
        let t = HyperX::new(&[8, 8, 8], 1).unwrap();
        let p = regular_perm_to_neighbour(&t).unwrap();
        assert!(table_is_permutation(&p.iter().map(|&x| x as u32).collect::<Vec<_>>()));
        for s in 0..t.num_switches() {
            assert_eq!(t.hamming(s, p[s]), 1);
            let mut x = s;
            for step in 1..=8 {
                x = p[x];
                assert_eq!(x == s, step == 8);
            }
        }
        let blocks: std::collections::BTreeSet<_> = (0..t.num_switches())
            .map(|s| t.coordinates(s).0.iter().map(|v| v / 2).collect::<Vec<_>>())
            .collect();
        assert_eq!(blocks.len(), 64);
        assert!(regular_perm_to_neighbour(&HyperX::new(&[5, 5, 5], 1).unwrap()).is_err());
        assert!(regular_perm_to_neighbour(&HyperX::new(&[4, 4], 1).unwrap()).is_err());
    }

    /// Pairs (s, π(s)) inside each K_k row; exhaustive over every row.
    pub(crate) fn rpn_row_pairs(k: usize) -> Vec<usize> {
        let t = HyperX::new(&[k, k, k], 1).unwrap();
        let p = regular_perm_to_neighbour(&t).unwrap();
        let mut counts = Vec::new();
        for d in 0..3 {
            for s in 0..t.num_switches() {
                if t.coordinate(s, d) != 0 {
                    continue;
                }
                let in_row = |x: SwitchId| (0..3).all(|e| e == d || t.coordinate(x, e) == t.coordinate(s, e));
                let members: Vec<_> = (0..t.num_switches()).filter(|&x| in_row(x)).collect();
                counts.push(members.iter().filter(|&&x| in_row(p[x])).count());
            }
        }
        counts
    }

    #[test]
    fn rpn_row_balance() {
        for k in [4, 6, 8] {
            let counts = rpn_row_pairs(k);
            assert_eq!(counts.len(), 3 * k * k);
            assert!(counts.iter().all(|&n| n == 0 || n == k / 2), "k={k}: {counts:?}");
            assert!(counts.contains(&(k / 2)));
        }
    }

    #[test]
    fn corrupted_table_is_not_admissible() {
        let t = HyperX::new(&[4, 4, 4], 2).unwrap();
        let mut p = TrafficPattern::new(PatternKind::ServerPermutation, &t, 1).unwrap();
        assert!(verify_admissible(&p));
        assert!(verify_admissible(&TrafficPattern::new(PatternKind::Uniform, &t, 1).unwrap()));
        let table = p.table.as_mut().unwrap();
        table[1] = table[0];
        assert!(!verify_admissible(&p));
    }

    #[test]
    fn names_round_trip() {
        for k in [
            PatternKind::Uniform,
            PatternKind::ServerPermutation,
            PatternKind::DimComplementReverse,
            PatternKind::RegularPermutationToNeighbour,
        ] {
            assert_eq!(k.name().parse::<PatternKind>().unwrap(), k);
        }
        assert!("hotspot".parse::<PatternKind>().is_err());
    }
}
