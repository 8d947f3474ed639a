//! Scenario files: a sectioned plain-text format describing topology,
//! faults, security and workload, plus the runner that turns a parsed
//! scenario into a finished simulation with CSV artifacts.

mod build;
mod parse;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::dependsched::Policy;
use crate::engine::Dist;
use crate::security::AuthMode;

pub use build::{build, export, run_scenario, RunOutput, RunOverrides};
pub use parse::{load_scenario, parse_scenario, write_scenario};

#[derive(Error, Debug)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid scenario: {0}")]
    Validate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineCfg {
    pub horizon_s: f64,
    pub seed: u64,
    pub window_s: f64,
    pub policy: Policy,
    pub reschedule: bool,
    pub auth: AuthMode,
    pub handshake_cost_s: f64,
    pub cipher_overhead: f64,
    pub cipher_cost_s_per_byte: f64,
    pub trusted_issuers: BTreeSet<String>,
    pub job_max_retries: Option<u32>,
    pub transfer_max_retries: Option<u32>,
}

impl Default for EngineCfg {
    fn default() -> EngineCfg {
        EngineCfg {
            horizon_s: 100.0,
            seed: 1,
            window_s: 1.0,
            policy: Policy::Baseline,
            reschedule: true,
            auth: AuthMode::Mutual,
            handshake_cost_s: 0.0,
            cipher_overhead: 1.0,
            cipher_cost_s_per_byte: 0.0,
            trusted_issuers: BTreeSet::from(["ca".to_string()]),
            job_max_retries: Some(3),
            transfer_max_retries: Some(10),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CenterCfg {
    pub lan_capacity_bps: f64,
    pub lan_latency_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PuCfg {
    pub center: String,
    pub power: f64,
    pub slots: u32,
    pub vo: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DbCfg {
    pub center: String,
    pub base_latency_s: f64,
    pub throughput_bps: f64,
    pub storage: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkCfg {
    pub a: String,
    pub b: String,
    pub capacity_bps: f64,
    pub latency_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaultCfg {
    pub component: String,
    pub kind: String,
    pub mttf: Dist,
    /// Absent repair distribution makes every activation permanent.
    pub mttr: Option<Dist>,
    pub loss_fraction: Option<f64>,
    pub extra: Option<Dist>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StormSection {
    pub components: Vec<String>,
    pub rate_per_s: f64,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct VoCfg {
    pub components: Vec<String>,
    pub members: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertCfg {
    pub subject: String,
    pub issuer: String,
    pub vo: Option<String>,
    pub not_before_s: f64,
    pub not_after_s: f64,
    pub revoked: bool,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct PolicyCfg {
    /// (vo, granted operations); `*` grants everything.
    pub grants: Vec<(String, Vec<String>)>,
    pub attack_ops: Vec<String>,
    pub work_cap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterRuleCfg {
    pub allow: bool,
    pub src_prefix: Option<String>,
    pub op: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivitySection {
    pub pattern: String,
    pub count: Option<u64>,
    pub rate_per_s: f64,
    pub start_s: f64,
    pub end_s: f64,
    pub work: f64,
    pub input_bytes: f64,
    pub output_bytes: f64,
    pub timeout_s: Option<f64>,
    pub vo: Option<String>,
    pub credential: Option<String>,
    pub submit_center: Option<String>,
    pub db_server: Option<String>,
    pub db_op: String,
    pub db_size_bytes: f64,
    pub db_request_bytes: f64,
    pub replicas: u32,
    pub checkpoint_s: Option<f64>,
    /// DoS only.
    pub sources: Vec<String>,
    pub target: Option<String>,
}

impl Default for ActivitySection {
    fn default() -> ActivitySection {
        ActivitySection {
            pattern: "batch".to_string(),
            count: None,
            rate_per_s: 0.0,
            start_s: 0.0,
            end_s: 0.0,
            work: 0.0,
            input_bytes: 0.0,
            output_bytes: 0.0,
            timeout_s: None,
            vo: None,
            credential: None,
            submit_center: None,
            db_server: None,
            db_op: "get".to_string(),
            db_size_bytes: 0.0,
            db_request_bytes: 0.0,
            replicas: 1,
            checkpoint_s: None,
            sources: Vec::new(),
            target: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskCfg {
    pub id: String,
    pub work: f64,
    pub input_bytes: f64,
    pub output_bytes: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DagSection {
    pub submit_s: f64,
    pub vo: Option<String>,
    pub credential: Option<String>,
    pub submit_center: Option<String>,
    pub tasks: Vec<TaskCfg>,
    pub edges: Vec<(String, String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ScenarioConfig {
    pub engine: EngineCfg,
    pub centers: BTreeMap<String, CenterCfg>,
    pub pus: BTreeMap<String, PuCfg>,
    pub dbs: BTreeMap<String, DbCfg>,
    pub routers: BTreeSet<String>,
    pub links: BTreeMap<String, LinkCfg>,
    pub faults: BTreeMap<String, FaultCfg>,
    pub storms: BTreeMap<String, StormSection>,
    pub vos: BTreeMap<String, VoCfg>,
    pub certs: BTreeMap<String, CertCfg>,
    pub policies: BTreeMap<String, PolicyCfg>,
    pub filters: BTreeMap<String, Vec<FilterRuleCfg>>,
    pub activities: BTreeMap<String, ActivitySection>,
    pub dags: BTreeMap<String, DagSection>,
}

impl ScenarioConfig {
    fn node_exists(&self, id: &str) -> bool {
        self.centers.contains_key(id)
            || self.pus.contains_key(id)
            || self.dbs.contains_key(id)
            || self.routers.contains(id)
    }

    fn component_exists(&self, id: &str) -> bool {
        self.node_exists(id) || self.links.contains_key(id) || id == crate::world::World::SCHEDULER
    }

    /// Cross-reference and parameter checks beyond what parsing can see.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errs: Vec<String> = Vec::new();
        let mut e = |msg: String| errs.push(msg);
        if self.engine.horizon_s <= 0.0 {
            e("engine: horizon_s must be positive".into());
        }
        if self.engine.window_s <= 0.0 {
            e("engine: window_s must be positive".into());
        }
        if self.engine.cipher_overhead < 1.0 {
            e("engine: cipher_overhead must be >= 1".into());
        }
        for (id, p) in &self.pus {
            if !self.centers.contains_key(&p.center) {
                e(format!("pu {id}: unknown center `{}`", p.center));
            }
            if p.power <= 0.0 {
                e(format!("pu {id}: power must be positive"));
            }
            if p.slots == 0 {
                e(format!("pu {id}: slots must be >= 1"));
            }
        }
        for (id, d) in &self.dbs {
            if !self.centers.contains_key(&d.center) {
                e(format!("db {id}: unknown center `{}`", d.center));
            }
            if d.throughput_bps <= 0.0 {
                e(format!("db {id}: throughput_bps must be positive"));
            }
        }
        for (id, c) in &self.centers {
            if c.lan_capacity_bps <= 0.0 {
                e(format!("center {id}: lan_capacity_bps must be positive"));
            }
        }
        for (id, l) in &self.links {
            for ep in [&l.a, &l.b] {
                if !(self.centers.contains_key(ep) || self.routers.contains(ep)) {
                    e(format!("link {id}: endpoint `{ep}` is not a center or router"));
                }
            }
            if l.capacity_bps <= 0.0 {
                e(format!("link {id}: capacity_bps must be positive"));
            }
            if l.latency_s < 0.0 {
                e(format!("link {id}: latency_s must be non-negative"));
            }
        }
        for (id, f) in &self.faults {
            if !self.component_exists(&f.component) {
                e(format!("fault {id}: unknown component `{}`", f.component));
            }
            if let Err(err) = f.mttf.validate() {
                e(format!("fault {id}: mttf: {err}"));
            }
            if let Some(r) = &f.mttr {
                if let Err(err) = r.validate() {
                    e(format!("fault {id}: mttr: {err}"));
                }
            }
            match f.kind.as_str() {
                "crash" | "byzantine" => {}
                "omission" => match f.loss_fraction {
                    Some(l) if (0.0..=1.0).contains(&l) => {}
                    Some(l) => e(format!("fault {id}: loss_fraction {l} outside [0,1]")),
                    None => e(format!("fault {id}: omission requires loss_fraction")),
                },
                "timing" => {
                    if f.extra.is_none() {
                        e(format!("fault {id}: timing requires extra"));
                    }
                }
                other => e(format!("fault {id}: unknown kind `{other}`")),
            }
        }
        for (id, s) in &self.storms {
            if s.rate_per_s <= 0.0 {
                e(format!("storm {id}: rate_per_s must be positive"));
            }
            for c in &s.components {
                if !self.component_exists(c) {
                    e(format!("storm {id}: unknown component `{c}`"));
                }
            }
        }
        for (id, v) in &self.vos {
            for c in &v.components {
                if !self.node_exists(c) {
                    e(format!("vo {id}: unknown component `{c}`"));
                }
            }
        }
        for (id, c) in &self.certs {
            if let Some(vo) = &c.vo {
                if !self.vos.contains_key(vo) {
                    e(format!("cert {id}: unknown vo `{vo}`"));
                }
            }
            if c.not_after_s < c.not_before_s {
                e(format!("cert {id}: lifetime window is inverted"));
            }
        }
        for id in self.policies.keys() {
            if !self.node_exists(id) {
                e(format!("policy {id}: unknown component"));
            }
        }
        for id in self.filters.keys() {
            if !self.dbs.contains_key(id) {
                e(format!("filter {id}: not a database server"));
            }
        }
        for (id, a) in &self.activities {
            match a.pattern.as_str() {
                "batch" => {
                    if a.count.is_none() {
                        e(format!("activity {id}: batch requires count"));
                    }
                }
                "poisson" => {
                    if a.rate_per_s <= 0.0 {
                        e(format!("activity {id}: poisson requires rate_per_s > 0"));
                    }
                    if a.end_s < a.start_s {
                        e(format!("activity {id}: end_s before start_s"));
                    }
                }
                "dos" => {
                    if a.sources.is_empty() || a.target.is_none() {
                        e(format!("activity {id}: dos requires sources and target"));
                    }
                    if a.rate_per_s <= 0.0 {
                        e(format!("activity {id}: dos requires rate_per_s > 0"));
                    }
                }
                other => e(format!("activity {id}: unknown pattern `{other}`")),
            }
            for c in a.submit_center.iter() {
                if !self.centers.contains_key(c) {
                    e(format!("activity {id}: unknown submit_center `{c}`"));
                }
            }
            for s in &a.sources {
                if !self.node_exists(s) {
                    e(format!("activity {id}: unknown source `{s}`"));
                }
            }
            for t in a.target.iter() {
                if !self.dbs.contains_key(t) {
                    e(format!("activity {id}: target `{t}` is not a database server"));
                }
            }
            if let Some(db) = &a.db_server {
                if !self.dbs.contains_key(db) {
                    e(format!("activity {id}: unknown db_server `{db}`"));
                }
            }
            if let Some(c) = &a.credential {
                if !self.certs.contains_key(c) {
                    e(format!("activity {id}: unknown credential `{c}`"));
                }
            }
            if a.replicas == 0 {
                e(format!("activity {id}: replicas must be >= 1"));
            }
        }
        for (id, d) in &self.dags {
            let ids: BTreeSet<&str> = d.tasks.iter().map(|t| t.id.as_str()).collect();
            if ids.len() != d.tasks.len() {
                e(format!("dag {id}: duplicate task ids"));
            }
            for (a, b, _) in &d.edges {
                if !ids.contains(a.as_str()) || !ids.contains(b.as_str()) {
                    e(format!("dag {id}: edge {a}->{b} references unknown task"));
                }
            }
            if build::dag_of(id, d).topo_order().is_err() {
                e(format!("dag {id}: cyclic"));
            }
            for c in d.submit_center.iter() {
                if !self.centers.contains_key(c) {
                    e(format!("dag {id}: unknown submit_center `{c}`"));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Validate(errs.join("; ")))
        }
    }
}
