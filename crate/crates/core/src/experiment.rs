//! Experiment files, batch execution and CSV output.
//!
//! An experiment file holds `key = value` lines; `#` starts a comment. List
//! values are comma separated and integer lists also accept `start:end:step`
//! (inclusive). Every simulation point of the Cartesian product
//! routing × pattern × fault prefix × load × seed yields one CSV row, written
//! in that order whatever order the points finish in.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::engine::{run_completion_on, run_on, Network, SimConfig};
use crate::error::{Error, Result};
use crate::escape::{verify_escape_acyclic, EscapeNetwork};
use crate::faults::{self, random_fault_sequence, FaultReport, FaultSpec};
use crate::metrics::MetricsRecord;
use crate::routing::RoutingKind;
use crate::topology::{Coordinates, HyperX};
use crate::traffic::{PatternKind, TrafficPattern};

/// Every key an experiment file may contain.
pub const KEYS: &[&str] = &[
    "sides",
    "servers_per_switch",
    "routing",
    "omni_m",
    "vcs",
    "penalties.minimal",
    "penalties.deroute",
    "penalties.polar1",
    "penalties.polar2",
    "penalties.up",
    "penalties.down",
    "penalties.short1",
    "penalties.short2",
    "penalties.short3",
    "pattern",
    "pattern_seed",
    "faults",
    "fault_anchor",
    "escape_root",
    "loads",
    "seeds",
    "fault_prefixes",
    "warmup",
    "measure",
    "max_idle",
    "drain",
    "check_invariants",
    "workload_phits",
    "bucket",
    "analyze_step",
    "output",
];

pub const RESULT_HEADER: [&str; 13] = [
    "topology",
    "routing",
    "pattern",
    "faults",
    "load",
    "seed",
    "cycles",
    "throughput",
    "latency",
    "jain",
    "forced_hops",
    "escape_hops",
    "status",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    /// Template for every point; the swept fields are overwritten.
    pub base: SimConfig,
    pub routings: Vec<RoutingKind>,
    pub patterns: Vec<PatternKind>,
    pub loads: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Prefix lengths of the random fault sequence, empty to use `faults` as is.
    pub fault_prefixes: Vec<usize>,
    /// Finite workload per server; switches to completion-time runs.
    pub workload_phits: Option<u64>,
    pub bucket: u64,
    pub analyze_step: usize,
    pub output: PathBuf,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            base: SimConfig::default(),
            routings: vec![RoutingKind::Minimal],
            patterns: vec![PatternKind::Uniform],
            loads: vec![0.1],
            seeds: vec![1],
            fault_prefixes: Vec::new(),
            workload_phits: None,
            bucket: 1000,
            analyze_step: 1,
            output: PathBuf::from("results.csv"),
        }
    }
}

fn key_error(key: &str, line: usize, message: impl fmt::Display) -> Error {
    Error::ConfigKey {
        key: key.to_string(),
        line,
        message: message.to_string(),
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    let items: Vec<T> = value
        .split(',')
        .map(|v| v.trim().parse::<T>().map_err(|e| format!("`{}`: {e}", v.trim())))
        .collect::<std::result::Result<_, _>>()?;
    if items.is_empty() {
        return Err("empty list".into());
    }
    Ok(items)
}

/// Integer list, either `a,b,c` or the inclusive range `start:end:step`.
fn parse_int_list<T>(value: &str) -> std::result::Result<Vec<T>, String>
where
    T: TryFrom<u64>,
{
    let convert = |v: u64| T::try_from(v).map_err(|_| format!("{v} out of range"));
    let parts: Vec<&str> = value.split(':').map(str::trim).collect();
    if parts.len() == 3 {
        let [start, end, step]: [u64; 3] = [0, 1, 2].map(|i| parts[i].parse::<u64>().unwrap_or(u64::MAX));
        if start == u64::MAX || end == u64::MAX || step == 0 || step == u64::MAX || start > end {
            return Err(format!("bad range `{value}`"));
        }
        return (start..=end).step_by(step as usize).map(convert).collect();
    }
    parse_list::<u64>(value)?.into_iter().map(convert).collect()
}

fn parse_sides(value: &str) -> std::result::Result<Vec<usize>, String> {
    let sep = if value.contains('x') { 'x' } else { ',' };
    value
        .split(sep)
        .map(|v| v.trim().parse::<usize>().map_err(|e| format!("`{}`: {e}", v.trim())))
        .collect()
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{value}` is not a boolean")),
    }
}

fn scalar<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("`{value}`: {e}"))
}

impl Experiment {
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses and validates an experiment; the error names the offending key and line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut exp = Experiment::default();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(key_error(content, line, "expected `key = value`"));
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(key_error(key, line, "unknown key"));
            }
            if let Some(first) = seen.insert(key.to_string(), line) {
                return Err(key_error(key, line, format!("already set on line {first}")));
            }
            exp.set(key, value).map_err(|m| key_error(key, line, m))?;
        }
        exp.validate(&seen)?;
        Ok(exp)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let b = &mut self.base;
        let p = &mut b.penalties;
        match key {
            "sides" => b.sides = parse_sides(value)?,
            "servers_per_switch" => b.servers_per_switch = scalar(value)?,
            "routing" => self.routings = parse_list(value)?,
            "omni_m" => b.omni_budget = Some(scalar(value)?),
            "vcs" => b.vcs = scalar(value)?,
            "penalties.minimal" => p.minimal = scalar(value)?,
            "penalties.deroute" => p.deroute = scalar(value)?,
            "penalties.polar1" => p.polar1 = scalar(value)?,
            "penalties.polar2" => p.polar2 = scalar(value)?,
            "penalties.up" => p.escape.up = scalar(value)?,
            "penalties.down" => p.escape.down = scalar(value)?,
            "penalties.short1" => p.escape.shortcut[0] = scalar(value)?,
            "penalties.short2" => p.escape.shortcut[1] = scalar(value)?,
            "penalties.short3" => p.escape.shortcut[2] = scalar(value)?,
            "pattern" => self.patterns = parse_list(value)?,
            "pattern_seed" => b.pattern_seed = scalar(value)?,
            "faults" => b.faults = scalar(value)?,
            "fault_anchor" => b.fault_anchor = Some(scalar(value)?),
            "escape_root" => b.escape_root = Some(scalar(value)?),
            "loads" => self.loads = parse_list(value)?,
            "seeds" => self.seeds = parse_int_list(value)?,
            "fault_prefixes" => self.fault_prefixes = parse_int_list(value)?,
            "warmup" => b.warmup = scalar(value)?,
            "measure" => b.measure = scalar(value)?,
            "max_idle" => b.max_idle = scalar(value)?,
            "drain" => b.drain = parse_bool(value)?,
            "check_invariants" => b.check_invariants = parse_bool(value)?,
            "workload_phits" => self.workload_phits = Some(scalar(value)?),
            "bucket" => self.bucket = scalar(value)?,
            "analyze_step" => self.analyze_step = scalar(value)?,
            "output" => self.output = PathBuf::from(value),
            _ => unreachable!("key list checked by the caller"),
        }
        Ok(())
    }

    fn validate(&self, seen: &BTreeMap<String, usize>) -> Result<()> {
        let line = |key: &str| seen.get(key).copied().unwrap_or(0);
        let topology = HyperX::new(&self.base.sides, self.base.servers_per_switch)
            .map_err(|e| key_error("sides", line("sides"), e))?;
        for (key, coords) in [("fault_anchor", &self.base.fault_anchor), ("escape_root", &self.base.escape_root)] {
            if let Some(c) = coords {
                topology.switch_id(c).map_err(|e| key_error(key, line(key), e))?;
            }
        }
        for &pattern in &self.patterns {
            TrafficPattern::new(pattern, &topology, self.base.pattern_seed)
                .map_err(|e| key_error("pattern", line("pattern"), e))?;
        }
        if !self.fault_prefixes.is_empty() && !matches!(self.base.faults, FaultSpec::Random { .. }) {
            return Err(key_error(
                "fault_prefixes",
                line("fault_prefixes"),
                "needs `faults = random:<seed>:<count>`",
            ));
        }
        if let Some(&max) = self.fault_prefixes.iter().max() {
            if max > topology.fault_free_link_count() {
                return Err(key_error("fault_prefixes", line("fault_prefixes"), "prefix longer than the link count"));
            }
        }
        if self.bucket == 0 {
            return Err(key_error("bucket", line("bucket"), "must be positive"));
        }
        if self.analyze_step == 0 {
            return Err(key_error("analyze_step", line("analyze_step"), "must be positive"));
        }
        for point in self.points() {
            point.validate().map_err(|e| {
                let key = if !(point.load > 0.0 && point.load <= 1.0) { "loads" } else { "vcs" };
                key_error(key, line(key), e)
            })?;
        }
        Ok(())
    }

    /// Fault specifications swept by the experiment.
    pub fn fault_specs(&self) -> Vec<FaultSpec> {
        match (&self.base.faults, self.fault_prefixes.is_empty()) {
            (FaultSpec::Random { seed, .. }, false) => self
                .fault_prefixes
                .iter()
                .map(|&count| FaultSpec::Random { seed: *seed, count })
                .collect(),
            (spec, _) => vec![spec.clone()],
        }
    }

    /// Every simulation point, in output order.
    pub fn points(&self) -> Vec<SimConfig> {
        let mut points = Vec::new();
        for &routing in &self.routings {
            for &pattern in &self.patterns {
                for faults in self.fault_specs() {
                    for &load in &self.loads {
                        for &seed in &self.seeds {
                            points.push(SimConfig {
                                routing,
                                pattern,
                                faults: faults.clone(),
                                load,
                                seed,
                                ..self.base.clone()
                            });
                        }
                    }
                }
            }
        }
        points
    }
}

/// Outcome of one point.
#[derive(Clone, Debug)]
pub enum Outcome {
    Steady(MetricsRecord),
    /// Completion cycle and mean accepted throughput of a finite workload.
    Completion { cycles: u64, throughput: f64, series: crate::metrics::CompletionSeries },
    Aborted(String),
}

#[derive(Clone, Debug)]
pub struct PointResult {
    pub config: SimConfig,
    pub outcome: Outcome,
}

fn network_key(c: &SimConfig) -> (String, bool) {
    (c.faults.to_string(), c.routing.is_surepath())
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Runs every point on `jobs` threads; the result order matches `points`.
pub fn run_points(points: &[SimConfig], workload_phits: Option<u64>, bucket: u64, jobs: usize) -> Result<Vec<PointResult>> {
    let pool = pool(jobs)?;
    pool.install(|| {
        let mut keys: Vec<&SimConfig> = Vec::new();
        for p in points {
            if !keys.iter().any(|k| network_key(k) == network_key(p)) {
                keys.push(p);
            }
        }
        let networks: Vec<((String, bool), std::result::Result<Network, String>)> = keys
            .par_iter()
            .map(|c| (network_key(c), Network::build(c).map_err(|e| e.to_string())))
            .collect();
        let networks: BTreeMap<_, _> = networks.into_iter().collect();
        Ok(points
            .par_iter()
            .map(|config| {
                let outcome = match &networks[&network_key(config)] {
                    Err(e) => Outcome::Aborted(e.clone()),
                    Ok(net) => match workload_phits {
                        None => match run_on(net, config) {
                            Ok(record) => Outcome::Steady(record),
                            Err(e) => Outcome::Aborted(e.to_string()),
                        },
                        Some(phits) => match run_completion_on(net, config, phits, bucket) {
                            Ok(series) => {
                                let cycles = series.completion_cycle;
                                let total: u64 = series.accepted_phits.iter().sum();
                                let throughput = crate::metrics::accepted_throughput(total, series.servers, cycles.max(1));
                                Outcome::Completion { cycles, throughput, series }
                            }
                            Err(e) => Outcome::Aborted(e.to_string()),
                        },
                    },
                };
                PointResult {
                    config: config.clone(),
                    outcome,
                }
            })
            .collect())
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Writes the result CSV.
pub fn write_results<W: Write>(results: &[PointResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_HEADER)?;
    for r in results {
        let c = &r.config;
        let mut row = vec![
            c.sides.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("x"),
            c.routing.name().to_string(),
            c.pattern.name().to_string(),
            c.faults.to_string(),
            format!("{}", c.load),
            c.seed.to_string(),
        ];
        match &r.outcome {
            Outcome::Steady(m) => row.extend([
                m.cycles.to_string(),
                format!("{:.6}", m.throughput),
                opt(m.latency),
                opt(m.jain),
                m.forced_hops.to_string(),
                m.escape_hops.to_string(),
                "ok".to_string(),
            ]),
            Outcome::Completion { cycles, throughput, .. } => row.extend([
                cycles.to_string(),
                format!("{throughput:.6}"),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                "ok".to_string(),
            ]),
            Outcome::Aborted(e) => {
                row.extend(std::iter::repeat_n(String::new(), 6));
                let first = e.lines().next().unwrap_or("");
                row.push(format!("aborted: {first}"));
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    pub results: Vec<PointResult>,
    pub aborted: usize,
    pub files: Vec<PathBuf>,
}

/// Runs the experiment and writes its CSV files. With `out_dir` the file
/// name of `output` is placed in that directory. Completion runs also write
/// one `cycle_bucket,accepted_phits` series per point next to it.
pub fn run_experiment(exp: &Experiment, out_dir: Option<&Path>, jobs: usize) -> Result<ExperimentSummary> {
    let output = match out_dir {
        Some(dir) => dir.join(exp.output.file_name().unwrap_or("results.csv".as_ref())),
        None => exp.output.clone(),
    };
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let results = run_points(&exp.points(), exp.workload_phits, exp.bucket, jobs)?;
    write_results(&results, std::fs::File::create(&output)?)?;
    let mut files = vec![output.clone()];
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("results").to_string();
    for (i, r) in results.iter().enumerate() {
        if let Outcome::Completion { series, .. } = &r.outcome {
            let c = &r.config;
            let name = format!("{stem}.{i:04}.{}.{}.s{}.series.csv", c.routing.name(), c.pattern.name(), c.seed);
            let path = output.with_file_name(name);
            series.write_csv(std::fs::File::create(&path)?)?;
            files.push(path);
        }
    }
    let aborted = results.iter().filter(|r| matches!(r.outcome, Outcome::Aborted(_))).count();
    Ok(ExperimentSummary { results, aborted, files })
}

/// One point of a graph-only fault sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisRow {
    pub seed: u64,
    pub fault_count: usize,
    pub diameter: Option<u16>,
    pub average_distance: Option<f64>,
    pub connected: bool,
}

/// Graph-only sweep: for every seed in `seeds`, removes links of the random
/// sequence `analyze_step` at a time up to and including the first
/// disconnecting prefix.
pub fn analyze_topology(exp: &Experiment, jobs: usize) -> Result<Vec<AnalysisRow>> {
    let topology = HyperX::new(&exp.base.sides, exp.base.servers_per_switch)?;
    let links = topology.fault_free_link_count();
    let pool = pool(jobs)?;
    pool.install(|| {
        let mut tasks = Vec::new();
        for &seed in &exp.seeds {
            let sequence = random_fault_sequence(&topology, seed, links)?;
            let cut = faults::first_prefix_where(&topology, &sequence, |t| {
                t.bfs_distances(0).contains(&crate::UNREACHABLE)
            })
            .unwrap_or(links);
            let mut counts: Vec<usize> = (0..cut).step_by(exp.analyze_step).collect();
            counts.push(cut);
            let sequence = std::sync::Arc::new(sequence);
            tasks.extend(counts.into_iter().map(|n| (seed, n, sequence.clone())));
        }
        tasks
            .par_iter()
            .map(|(seed, n, sequence)| {
                let mut t = topology.clone();
                t.apply_faults(&sequence[..*n])?;
                let table = t.distance_table();
                Ok(AnalysisRow {
                    seed: *seed,
                    fault_count: *n,
                    diameter: table.diameter(),
                    average_distance: table.average_distance().map(|m| m.as_f64()),
                    connected: table.is_connected(),
                })
            })
            .collect()
    })
}

pub fn write_analysis<W: Write>(rows: &[AnalysisRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["seed", "fault_count", "diameter", "avg_distance", "connected"])?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.fault_count.to_string(),
            r.diameter.map(|d| d.to_string()).unwrap_or_default(),
            opt(r.average_distance),
            r.connected.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fault-set and escape-subnetwork check of one fault configuration.
#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub faults: FaultSpec,
    pub report: FaultReport,
    pub escape_root: Coordinates,
    pub escape_acyclic: bool,
    pub dependencies: usize,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.report.connected && self.escape_acyclic
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: faults={} connected={} diameter={} root={} escape={} ({} dependencies)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.faults,
            self.report.fault_count,
            self.report.connected,
            self.report.diameter.map(|d| d.to_string()).unwrap_or_else(|| "-".into()),
            self.escape_root,
            if self.escape_acyclic { "acyclic" } else { "cyclic" },
            self.dependencies,
        )
    }
}

/// Validates every fault configuration of the experiment and checks its
/// escape subnetwork for cyclic dependencies, without simulating.
pub fn verify(exp: &Experiment) -> Result<Vec<VerifyReport>> {
    let topology = HyperX::new(&exp.base.sides, exp.base.servers_per_switch)?;
    let anchor = exp.base.anchor();
    let root = exp.base.escape_root.clone().unwrap_or_else(|| anchor.clone());
    exp.fault_specs()
        .into_par_iter()
        .map(|spec| {
            let links = faults::resolve(&topology, &spec, &anchor)?;
            let report = faults::validate_faults(&topology, &links, &anchor)?;
            let mut t = topology.clone();
            t.apply_faults(&links)?;
            let escape = EscapeNetwork::build(&t, t.switch_id(&root)?);
            let check = verify_escape_acyclic(&t, &escape);
            Ok(VerifyReport {
                faults: spec,
                report,
                escape_root: root.clone(),
                escape_acyclic: check.acyclic && escape.uncovered().is_empty(),
                dependencies: check.dependencies,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "\
# two switches, one load
sides = 2
servers_per_switch = 1
routing = minimal
vcs = 2
loads = 0.2
seeds = 3
warmup = 100
measure = 400
";

    #[test]
    fn minimal_config_gives_one_row() {
        let exp = Experiment::parse(TOY).unwrap();
        assert_eq!(exp.points().len(), 1);
        let results = run_points(&exp.points(), None, exp.bucket, 1).unwrap();
        let mut buf = Vec::new();
        write_results(&results, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], RESULT_HEADER.join(","));
        assert!(lines[1].starts_with("2,minimal,uniform,none,0.2,3,400,"), "{}", lines[1]);
        assert!(lines[1].ends_with(",ok"));
    }

    #[test]
    fn unknown_and_invalid_keys_name_the_line() {
        let err = Experiment::parse("sides = 4x4\nspeed = 3\n").unwrap_err();
        assert!(matches!(err, Error::ConfigKey { ref key, line: 2, .. } if key == "speed"), "{err}");
        let err = Experiment::parse("sides = 4x4\n\nrouting = minimal, fastest\n").unwrap_err();
        assert!(matches!(err, Error::ConfigKey { ref key, line: 3, .. } if key == "routing"), "{err}");
        let err = Experiment::parse("loads = 0.5, 1.5\n").unwrap_err();
        assert!(matches!(err, Error::ConfigKey { ref key, .. } if key == "loads"), "{err}");
        let err = Experiment::parse("vcs = 2\nvcs = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        let err = Experiment::parse("fault_prefixes = 0:20:10\n").unwrap_err();
        assert!(matches!(err, Error::ConfigKey { ref key, .. } if key == "fault_prefixes"), "{err}");
        assert!(Experiment::parse("sides = 4x4\npattern = dcr\nservers_per_switch = 3\n").is_err());
    }

    #[test]
    fn fault_prefix_sweep_shape() {
        let exp = Experiment::parse(
            "sides = 16x16\nservers_per_switch = 16\nrouting = pol_sp\npattern = uniform, server_perm, dcr\n\
             faults = random:7:0\nfault_prefixes = 0:100:10\nloads = 1.0\nseeds = 1\n",
        )
        .unwrap();
        let points = exp.points();
        assert_eq!(points.len(), 11 * 3);
        assert_eq!(points[1].faults, FaultSpec::Random { seed: 7, count: 10 });
        assert_eq!(points[11].pattern, PatternKind::ServerPermutation);
    }

    #[test]
    fn penalties_and_coordinates_parse() {
        let exp = Experiment::parse(
            "sides = 4,4,4\npenalties.up = 100\npenalties.short3 = 40\nfault_anchor = [1,2,3]\nescape_root = (0,0,1)\n",
        )
        .unwrap();
        assert_eq!(exp.base.penalties.escape.up, 100);
        assert_eq!(exp.base.penalties.escape.shortcut[2], 40);
        assert_eq!(exp.base.fault_anchor, Some(Coordinates::new(vec![1, 2, 3])));
        assert_eq!(exp.base.escape_root, Some(Coordinates::new(vec![0, 0, 1])));
    }

    #[test]
    fn parallel_output_is_deterministic() {
        let text = "sides = 3x3\nservers_per_switch = 2\nrouting = minimal, omni_sp\nvcs = 3\n\
                    loads = 0.2, 0.6\nseeds = 1, 2\nwarmup = 200\nmeasure = 300\n";
        let exp = Experiment::parse(text).unwrap();
        let csv = |jobs| {
            let mut buf = Vec::new();
            write_results(&run_points(&exp.points(), None, 1000, jobs).unwrap(), &mut buf).unwrap();
            buf
        };
        assert_eq!(csv(1), csv(3));
    }

    #[test]
    fn analysis_starts_at_the_healthy_diameter_and_ends_disconnected() {
        let exp = Experiment::parse("sides = 4x4\nseeds = 1, 2\nanalyze_step = 8\n").unwrap();
        let rows = analyze_topology(&exp, 2).unwrap();
        for seed in [1, 2] {
            let curve: Vec<&AnalysisRow> = rows.iter().filter(|r| r.seed == seed).collect();
            assert_eq!(curve[0].fault_count, 0);
            assert_eq!(curve[0].diameter, Some(2));
            let last = curve.last().unwrap();
            assert!(!last.connected);
            assert!(curve[..curve.len() - 1].iter().all(|r| r.connected));
            assert!(curve.windows(2).all(|w| w[0].diameter <= w[1].diameter || w[1].diameter.is_none()));
        }
    }

    #[test]
    fn verify_accepts_shapes_and_rejects_disconnection() {
        let exp = Experiment::parse("sides = 16x16\nfaults = cross\nfault_anchor = [8,8]\n").unwrap();
        let reports = verify(&exp).unwrap();
        assert!(reports.iter().all(VerifyReport::passed), "{}", reports[0]);
        let exp = Experiment::parse("sides = 3x3\nfaults = random:1:18\n").unwrap();
        assert!(!verify(&exp).unwrap()[0].passed());
    }

    #[test]
    fn completion_run_writes_series() {
        let dir = tempfile::tempdir().unwrap();
        let exp = Experiment::parse(
            "sides = 2\nservers_per_switch = 1\nvcs = 2\nloads = 1.0\nworkload_phits = 32\nbucket = 10\noutput = done.csv\n",
        )
        .unwrap();
        let summary = run_experiment(&exp, Some(dir.path()), 1).unwrap();
        assert_eq!(summary.aborted, 0);
        assert_eq!(summary.files.len(), 2);
        let series = std::fs::read_to_string(&summary.files[1]).unwrap();
        assert!(series.starts_with("cycle_bucket,accepted_phits\n"));
        let main = std::fs::read_to_string(&summary.files[0]).unwrap();
        assert!(main.lines().nth(1).unwrap().contains(",36,"), "{main}");
    }
}
