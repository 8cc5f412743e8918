//! Fault sets: seeded random link-failure sequences and shaped
//! configurations (Row, Subplane, Cross, Subcube, Star) anchored at a switch.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::topology::{Coordinates, HyperX, LinkId, SwitchId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultShape {
    Row,
    Subplane,
    Cross,
    Subcube,
    Star,
}

impl FaultShape {
    pub fn name(self) -> &'static str {
        match self {
            FaultShape::Row => "row",
            FaultShape::Subplane => "subplane",
            FaultShape::Cross => "cross",
            FaultShape::Subcube => "subcube",
            FaultShape::Star => "star",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultSpec {
    None,
    Random { seed: u64, count: usize },
    Shape(FaultShape),
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultSpec::None => f.write_str("none"),
            FaultSpec::Random { seed, count } => write!(f, "random:{seed}:{count}"),
            FaultSpec::Shape(s) => f.write_str(s.name()),
        }
    }
}

impl FromStr for FaultSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let shape = match s {
            "none" => return Ok(FaultSpec::None),
            "row" => FaultShape::Row,
            "subplane" => FaultShape::Subplane,
            "cross" => FaultShape::Cross,
            "subcube" => FaultShape::Subcube,
            "star" => FaultShape::Star,
            _ => {
                let parts: Vec<&str> = s.split(':').collect();
                if let ["random", seed, count] = parts[..] {
                    let bad = |what: &str| Error::InvalidFaults(format!("bad {what} in `{s}`"));
                    return Ok(FaultSpec::Random {
                        seed: seed.parse().map_err(|_| bad("seed"))?,
                        count: count.parse().map_err(|_| bad("count"))?,
                    });
                }
                return Err(Error::InvalidFaults(format!("unknown fault specification `{s}`")));
            }
        };
        Ok(FaultSpec::Shape(shape))
    }
}

/// Uniform sampling without replacement over all switch-to-switch links.
/// The whole shuffle is drawn before truncation, so for a fixed seed every
/// shorter sequence is a prefix of every longer one.
pub fn random_fault_sequence(topology: &HyperX, seed: u64, max_count: usize) -> Result<Vec<LinkId>> {
    let mut links = topology.all_links();
    if max_count > links.len() {
        return Err(Error::InvalidFaults(format!(
            "{max_count} faults requested but the topology has {} links",
            links.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    links.shuffle(&mut rng);
    links.truncate(max_count);
    Ok(links)
}

/// `len` consecutive coordinates of a side `k` containing `anchor`, centred
/// where possible and shifted to fit otherwise.
pub fn segment(k: usize, len: usize, anchor: usize) -> Range<usize> {
    let start = anchor.saturating_sub((len - 1) / 2).min(k - len);
    start..start + len
}

/// All links among the switches of a box (per-dimension ranges).
fn box_links(topology: &HyperX, ranges: &[Range<usize>], out: &mut BTreeSet<LinkId>) -> Result<()> {
    let members: Vec<SwitchId> = (0..topology.num_switches())
        .filter(|&s| (0..topology.dimensions()).all(|d| ranges[d].contains(&topology.coordinate(s, d))))
        .collect();
    for &a in &members {
        for (_, b) in topology.neighbors(a) {
            if a < b && (0..topology.dimensions()).all(|d| ranges[d].contains(&topology.coordinate(b, d))) {
                out.insert(topology.link(a, b)?);
            }
        }
    }
    Ok(())
}

fn require(ok: bool, shape: FaultShape, why: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidFaults(format!("{} shape: {why}", shape.name())))
    }
}

/// Links removed by a shaped configuration anchored at `anchor`.
///
/// - Row: the full dimension-0 row through the anchor.
/// - Subplane (2D): a 5×5 block containing the anchor.
/// - Cross (2D): 11-switch segments of the anchor's row and column.
/// - Subcube (3D): a 3×3×3 block containing the anchor.
/// - Star (3D): 7-switch segments through the anchor in every dimension.
pub fn shaped_faults(topology: &HyperX, shape: FaultShape, anchor: &Coordinates) -> Result<Vec<LinkId>> {
    let anchor_id = topology.switch_id(anchor)?;
    let sides = topology.sides();
    let n = sides.len();
    let point = |d: usize| {
        let x = anchor.0[d];
        x..x + 1
    };
    let mut links = BTreeSet::new();
    match shape {
        FaultShape::Row => {
            let mut r: Vec<_> = (0..n).map(point).collect();
            r[0] = 0..sides[0];
            box_links(topology, &r, &mut links)?;
        }
        FaultShape::Subplane => {
            require(n == 2, shape, "needs a 2D topology")?;
            require(sides.iter().all(|&k| k >= 5), shape, "needs sides of at least 5")?;
            let r: Vec<_> = (0..2).map(|d| segment(sides[d], 5, anchor.0[d])).collect();
            box_links(topology, &r, &mut links)?;
        }
        FaultShape::Cross => {
            require(n == 2, shape, "needs a 2D topology")?;
            require(sides.iter().all(|&k| k > 11), shape, "needs sides above 11 to leave a margin")?;
            for d in 0..2 {
                let mut r: Vec<_> = (0..2).map(point).collect();
                r[d] = segment(sides[d], 11, anchor.0[d]);
                box_links(topology, &r, &mut links)?;
            }
        }
        FaultShape::Subcube => {
            require(n == 3, shape, "needs a 3D topology")?;
            require(sides.iter().all(|&k| k >= 3), shape, "needs sides of at least 3")?;
            let r: Vec<_> = (0..3).map(|d| segment(sides[d], 3, anchor.0[d])).collect();
            box_links(topology, &r, &mut links)?;
        }
        FaultShape::Star => {
            require(n == 3, shape, "needs a 3D topology")?;
            require(sides.iter().all(|&k| k > 7), shape, "needs sides above 7 to leave a live link")?;
            for d in 0..3 {
                let mut r: Vec<_> = (0..3).map(point).collect();
                r[d] = segment(sides[d], 7, anchor.0[d]);
                box_links(topology, &r, &mut links)?;
            }
        }
    }
    let links: Vec<LinkId> = links.into_iter().collect();
    let mut faulted = topology.clone();
    faulted.apply_faults(&links)?;
    if faulted.neighbors(anchor_id).next().is_none() {
        return Err(Error::InvalidFaults(format!(
            "{} shape isolates the anchor {anchor}",
            shape.name()
        )));
    }
    if faulted.bfs_distances(anchor_id).contains(&crate::UNREACHABLE) {
        return Err(Error::InvalidFaults(format!(
            "{} shape disconnects the network",
            shape.name()
        )));
    }
    Ok(links)
}

/// Resolves a specification to its fault set.
pub fn resolve(topology: &HyperX, spec: &FaultSpec, anchor: &Coordinates) -> Result<Vec<LinkId>> {
    match spec {
        FaultSpec::None => Ok(Vec::new()),
        FaultSpec::Random { seed, count } => random_fault_sequence(topology, *seed, *count),
        FaultSpec::Shape(shape) => shaped_faults(topology, *shape, anchor),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaultReport {
    pub fault_count: usize,
    pub connected: bool,
    pub diameter: Option<u16>,
    pub anchor_degree: usize,
}

/// Applies `faults` to a copy of `topology` and reports its state.
pub fn validate_faults(topology: &HyperX, faults: &[LinkId], anchor: &Coordinates) -> Result<FaultReport> {
    let mut t = topology.clone();
    t.apply_faults(faults)?;
    let table = t.distance_table();
    let anchor = t.switch_id(anchor)?;
    Ok(FaultReport {
        fault_count: t.faults().len(),
        connected: table.is_connected(),
        diameter: table.diameter(),
        anchor_degree: t.neighbors(anchor).count(),
    })
}

/// Smallest prefix length of `sequence` for which `property` holds, assuming
/// the property is monotone in the prefix length (true stays true). Removing
/// links never shortens a path, so diameter thresholds and disconnection are
/// monotone and a binary search suffices.
pub fn first_prefix_where(
    topology: &HyperX,
    sequence: &[LinkId],
    mut property: impl FnMut(&HyperX) -> bool,
) -> Option<usize> {
    let eval = |len: usize, property: &mut dyn FnMut(&HyperX) -> bool| {
        let mut t = topology.clone();
        t.apply_faults(&sequence[..len]).expect("sequence links belong to the topology");
        property(&t)
    };
    if !eval(sequence.len(), &mut property) {
        return None;
    }
    let (mut lo, mut hi) = (0, sequence.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if eval(mid, &mut property) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin(n: usize) -> Coordinates {
        Coordinates::new(vec![0; n])
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("none".parse::<FaultSpec>().unwrap(), FaultSpec::None);
        assert_eq!(
            "random:7:100".parse::<FaultSpec>().unwrap(),
            FaultSpec::Random { seed: 7, count: 100 }
        );
        assert_eq!("star".parse::<FaultSpec>().unwrap(), FaultSpec::Shape(FaultShape::Star));
        assert!("random:x:1".parse::<FaultSpec>().is_err());
        assert!("triangle".parse::<FaultSpec>().is_err());
        assert_eq!(FaultSpec::Random { seed: 3, count: 9 }.to_string(), "random:3:9");
    }

    #[test]
    fn random_sequences_are_prefix_closed_and_seeded() {
        let t = HyperX::new(&[8, 8, 8], 8).unwrap();
        assert!(random_fault_sequence(&t, 1, 0).unwrap().is_empty());
        let long = random_fault_sequence(&t, 42, 100).unwrap();
        let short = random_fault_sequence(&t, 42, 30).unwrap();
        assert_eq!(&long[..30], &short[..]);
        assert_eq!(long, random_fault_sequence(&t, 42, 100).unwrap());
        assert_ne!(long, random_fault_sequence(&t, 43, 100).unwrap());
        let distinct: BTreeSet<_> = long.iter().collect();
        assert_eq!(distinct.len(), 100);
        assert!(random_fault_sequence(&t, 1, 5377).is_err());
    }

    #[test]
    fn shaped_cardinalities_2d() {
        let t = HyperX::new(&[16, 16], 16).unwrap();
        let a = origin(2);
        let row = shaped_faults(&t, FaultShape::Row, &a).unwrap();
        assert_eq!(row.len(), 120);
        assert_eq!(shaped_faults(&t, FaultShape::Subplane, &a).unwrap().len(), 100);
        let cross = shaped_faults(&t, FaultShape::Cross, &a).unwrap();
        assert_eq!(cross.len(), 110);
        let report = validate_faults(&t, &cross, &a).unwrap();
        assert_eq!(report.anchor_degree, 30 - 20);
        assert!(report.connected);
        // The faulted row is an independent set in its own dimension.
        let mut f = t.clone();
        f.apply_faults(&row).unwrap();
        for x in 0..16 {
            let s = f.switch_id(&Coordinates::new(vec![x, 0])).unwrap();
            assert!(f.neighbors(s).all(|(_, m)| f.coordinate(m, 1) != 0));
        }
    }

    #[test]
    fn shaped_cardinalities_3d() {
        let t = HyperX::new(&[8, 8, 8], 8).unwrap();
        let a = origin(3);
        assert_eq!(shaped_faults(&t, FaultShape::Row, &a).unwrap().len(), 28);
        let cube = shaped_faults(&t, FaultShape::Subcube, &a).unwrap();
        assert_eq!(cube.len(), 81);
        assert!(validate_faults(&t, &cube, &a).unwrap().connected);
        let star = shaped_faults(&t, FaultShape::Star, &a).unwrap();
        assert_eq!(star.len(), 63);
        assert_eq!(3 * (7 * 6 / 2), 63);
        let report = validate_faults(&t, &star, &a).unwrap();
        assert_eq!(report.anchor_degree, 3);
        assert!(report.connected);
    }

    #[test]
    fn shapes_containing_a_central_anchor() {
        let t = HyperX::new(&[16, 16], 1).unwrap();
        let a = Coordinates::new(vec![8, 9]);
        assert_eq!(shaped_faults(&t, FaultShape::Subplane, &a).unwrap().len(), 100);
        assert_eq!(shaped_faults(&t, FaultShape::Cross, &a).unwrap().len(), 110);
        assert_eq!(segment(16, 11, 15), 5..16);
        assert_eq!(segment(16, 5, 8), 6..11);
    }

    #[test]
    fn shapes_reject_wrong_dimensions() {
        let t2 = HyperX::new(&[16, 16], 1).unwrap();
        assert!(shaped_faults(&t2, FaultShape::Star, &origin(2)).is_err());
        let t3 = HyperX::new(&[8, 8, 8], 1).unwrap();
        assert!(shaped_faults(&t3, FaultShape::Cross, &origin(3)).is_err());
        let line = HyperX::new(&[5], 1).unwrap();
        assert!(shaped_faults(&line, FaultShape::Row, &origin(1)).is_err());
    }

    #[test]
    fn heavy_random_removal_disconnects() {
        let t = HyperX::new(&[8, 8, 8], 8).unwrap();
        let seq = random_fault_sequence(&t, 5, 5376 * 3 / 4).unwrap();
        let r = validate_faults(&t, &seq, &origin(3)).unwrap();
        assert_eq!(r.fault_count, 4032);
        // Three quarters removed sits right at the disconnection threshold.
        let all = random_fault_sequence(&t, 5, 5376).unwrap();
        let cut = first_prefix_where(&t, &all, |g| !g.distance_table().is_connected()).unwrap();
        assert!((3500..4600).contains(&cut), "{cut}");
    }
}
