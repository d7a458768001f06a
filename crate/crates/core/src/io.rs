//! Versioned file formats: instances, schedules, reports, bench manifests
//! and the Gantt export.
//!
//! Every document is pretty-printed JSON whose first field names its schema
//! and version. Field names carry their units. Serialization is canonical:
//! equal values always produce identical bytes.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    ConfigOverrides, Instance, Link, LinkId, MessageId, MessageSpec, ModelError, Nanos, NetworkTopology, Node,
    VirtualLinkSpec,
};
use crate::scheduler::{Objective, Placement, TtSchedule};

pub const INSTANCE_SCHEMA: &str = "ttsched-instance/1";
pub const SCHEDULE_SCHEMA: &str = "ttsched-schedule/1";
pub const REPORT_SCHEMA: &str = "ttsched-report/1";
pub const BENCH_SCHEMA: &str = "ttsched-bench/1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unsupported schema {found:?}, expected {expected:?}")]
    Schema { found: String, expected: &'static str },
    #[error(transparent)]
    Semantic(#[from] ModelError),
    #[error("internal consistency: {0}")]
    Consistency(String),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
}

/// Reads a whole file, attributing failures to the path.
pub fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

/// Writes a whole file, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let fail = |source| IoError::File { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(fail)?;
    }
    std::fs::write(path, bytes).map_err(fail)
}

fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, IoError> {
    serde_json::from_slice(bytes).map_err(|e| IoError::Syntax {
        line: e.line(),
        column: e.column(),
        message: strip_position(&e.to_string()),
    })
}

// serde_json appends " at line L column C" to its messages
fn strip_position(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(i) => message[..i].to_string(),
        None => message.to_string(),
    }
}

fn encode<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("in-memory values serialize");
    out.push(b'\n');
    out
}

fn check_schema(found: &str, expected: &'static str) -> Result<(), IoError> {
    if found == expected {
        Ok(())
    } else {
        Err(IoError::Schema { found: found.to_string(), expected })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
}

/// On-disk form of an [`Instance`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub schema: String,
    /// Hash of the run that wrote the file; ignored on parse.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
    pub topology: TopologySection,
    pub messages: Vec<MessageSpec>,
    #[serde(default)]
    pub config: ConfigOverrides,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub virtual_links: Vec<VirtualLinkSpec>,
}

impl InstanceFile {
    pub fn from_instance(instance: &Instance) -> Self {
        Self {
            schema: INSTANCE_SCHEMA.to_string(),
            manifest_hash: None,
            topology: TopologySection {
                nodes: instance.topology.nodes().to_vec(),
                links: instance.topology.links().to_vec(),
            },
            messages: instance.messages.clone(),
            config: instance.overrides.clone(),
            virtual_links: instance.virtual_links.clone(),
        }
    }

    pub fn into_instance(self) -> Result<Instance, IoError> {
        check_schema(&self.schema, INSTANCE_SCHEMA)?;
        let topology = NetworkTopology::new(self.topology.nodes, self.topology.links)?;
        Ok(Instance::new(topology, self.messages, self.config, self.virtual_links)?)
    }
}

/// Parses and validates an instance document.
pub fn parse_instance(bytes: &[u8]) -> Result<Instance, IoError> {
    decode::<InstanceFile>(bytes)?.into_instance()
}

pub fn serialize_instance(instance: &Instance) -> Vec<u8> {
    encode(&InstanceFile::from_instance(instance))
}

/// Like [`serialize_instance`], stamped with the producing run.
pub fn serialize_instance_stamped(instance: &Instance, manifest_hash: &str) -> Vec<u8> {
    let mut file = InstanceFile::from_instance(instance);
    file.manifest_hash = Some(manifest_hash.to_string());
    encode(&file)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirstCycle {
    pub message: MessageId,
    pub cycle: u64,
}

/// Figures of merit stored next to a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleMetrics {
    pub makespan_ns: Nanos,
    pub critical_gap_ns: Nanos,
    /// Assignment objective plus the sync window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_bound_ns: Option<Nanos>,
    /// Assignment objective alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment_objective_ns: Option<Nanos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_preserved_gap_ns: Option<Nanos>,
}

impl ScheduleMetrics {
    /// `(makespan / lower bound - 1) * 100`.
    pub fn gap_to_lower_bound_percent(&self) -> Option<f64> {
        self.lower_bound_ns
            .filter(|&lb| lb > 0)
            .map(|lb| (self.makespan_ns as f64 / lb as f64 - 1.0) * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub schema: String,
    pub manifest_hash: String,
    pub objective: Objective,
    pub integration_cycle_ns: Nanos,
    pub cluster_cycle_ns: Nanos,
    pub sync_window_ns: Nanos,
    pub metrics: ScheduleMetrics,
    pub first_cycles: Vec<FirstCycle>,
    pub placements: Vec<Placement>,
}

impl ScheduleFile {
    /// Rebuilds the in-memory schedule. `valid` is left false until the
    /// caller validates it against an instance.
    pub fn into_schedule(self) -> Result<TtSchedule, IoError> {
        check_schema(&self.schema, SCHEDULE_SCHEMA)?;
        let mut first_cycles: Vec<(MessageId, u64)> =
            self.first_cycles.iter().map(|f| (f.message, f.cycle)).collect();
        first_cycles.sort_unstable();
        let mut placements = self.placements;
        placements.sort_by_key(|p| (p.message, p.link));
        Ok(TtSchedule {
            integration_cycle_ns: self.integration_cycle_ns,
            cluster_cycle_ns: self.cluster_cycle_ns,
            sync_window_ns: self.sync_window_ns,
            objective: self.objective,
            first_cycles,
            placements,
            makespan_ns: self.metrics.makespan_ns,
            min_preserved_gap_ns: self.metrics.min_preserved_gap_ns,
            valid: false,
        })
    }
}

fn check_references(schedule: &TtSchedule, instance: &Instance) -> Result<(), IoError> {
    let ids: BTreeSet<MessageId> = instance.messages.iter().map(|m| m.id).collect();
    let links = instance.topology.links().len();
    for &(m, _) in &schedule.first_cycles {
        if !ids.contains(&m) {
            return Err(IoError::Consistency(format!("first cycle for unknown message {m}")));
        }
    }
    for p in &schedule.placements {
        if !ids.contains(&p.message) {
            return Err(IoError::Consistency(format!("placement for unknown message {}", p.message)));
        }
        if p.link >= links {
            return Err(IoError::Consistency(format!("message {} placed on unknown link {}", p.message, p.link)));
        }
    }
    Ok(())
}

/// Serializes a schedule, sorted by message id then link id.
pub fn write_schedule(
    schedule: &TtSchedule,
    instance: &Instance,
    metrics: ScheduleMetrics,
    manifest_hash: &str,
) -> Result<Vec<u8>, IoError> {
    check_references(schedule, instance)?;
    let mut first_cycles: Vec<FirstCycle> =
        schedule.first_cycles.iter().map(|&(message, cycle)| FirstCycle { message, cycle }).collect();
    first_cycles.sort_by_key(|f| f.message);
    let mut placements = schedule.placements.clone();
    placements.sort_by_key(|p| (p.message, p.link));
    let file = ScheduleFile {
        schema: SCHEDULE_SCHEMA.to_string(),
        manifest_hash: manifest_hash.to_string(),
        objective: schedule.objective,
        integration_cycle_ns: schedule.integration_cycle_ns,
        cluster_cycle_ns: schedule.cluster_cycle_ns,
        sync_window_ns: schedule.sync_window_ns,
        metrics,
        first_cycles,
        placements,
    };
    Ok(encode(&file))
}

/// Parses a schedule file and checks its references against `instance`.
pub fn read_schedule(bytes: &[u8], instance: &Instance) -> Result<(TtSchedule, ScheduleFile), IoError> {
    let file: ScheduleFile = decode(bytes)?;
    let schedule = file.clone().into_schedule()?;
    check_references(&schedule, instance)?;
    Ok((schedule, file))
}

/// A report document: schema header, the run manifest and its hash, then a
/// free-form body.
#[derive(Debug, Clone, Serialize)]
pub struct ReportFile<'a, M: Serialize, B: Serialize> {
    pub schema: &'static str,
    pub manifest_hash: &'a str,
    pub manifest: &'a M,
    #[serde(flatten)]
    pub body: &'a B,
}

pub fn write_report<M: Serialize, B: Serialize>(manifest: &M, manifest_hash: &str, body: &B) -> Vec<u8> {
    encode(&ReportFile { schema: REPORT_SCHEMA, manifest_hash, manifest, body })
}

/// One named set of instance files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSet {
    pub name: String,
    /// Relative paths resolve against the manifest's directory.
    pub instances: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchManifest {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
    pub sets: Vec<BenchSet>,
}

impl BenchManifest {
    pub fn new(sets: Vec<BenchSet>) -> Self {
        Self { schema: BENCH_SCHEMA.to_string(), manifest_hash: None, sets }
    }
}

pub fn parse_bench_manifest(bytes: &[u8]) -> Result<BenchManifest, IoError> {
    let manifest: BenchManifest = decode(bytes)?;
    check_schema(&manifest.schema, BENCH_SCHEMA)?;
    Ok(manifest)
}

pub fn serialize_bench_manifest(manifest: &BenchManifest) -> Vec<u8> {
    encode(manifest)
}

/// Comma-separated timeline: one row per occurrence of a message instance
/// and per sync window, grouped by link and integration cycle. Times are
/// relative to the start of the cycle.
pub fn gantt_csv(schedule: &TtSchedule, instance: &Instance) -> String {
    let ic = schedule.integration_cycle_ns;
    let cycles = if ic == 0 { 0 } else { schedule.cluster_cycle_ns / ic };
    // (link, cycle, start, end, label)
    let mut rows: Vec<(LinkId, u64, Nanos, Nanos, String)> = Vec::new();
    for link in 0..instance.topology.links().len() {
        for cycle in 0..cycles {
            if schedule.sync_window_ns > 0 {
                rows.push((link, cycle, 0, schedule.sync_window_ns, "sync".to_string()));
            }
        }
    }
    for p in &schedule.placements {
        let (Some(first), Some(spec)) = (schedule.first_cycle(p.message), instance.message(p.message)) else {
            continue;
        };
        let every = spec.period_ns / ic;
        let mut cycle = first;
        while cycle < cycles {
            rows.push((p.link, cycle, p.offset_ns, p.offset_ns + p.duration_ns, format!("m{}", p.message)));
            cycle += every;
        }
    }
    rows.sort();
    let mut out = String::from("link,source,destination,cycle,start_ns,end_ns,label\n");
    for (link, cycle, start, end, label) in rows {
        let l = instance.topology.link(link);
        let _ = writeln!(out, "{link},{},{},{cycle},{start},{end},{label}", l.source, l.destination);
    }
    out
}
