//! The scenario text format: `[section name]` headers, `key = value`
//! lines, `#` comments. Unknown sections and keys are errors with line
//! numbers; `write_scenario` emits a canonical form that parses back to an
//! equal configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::dependsched::Policy;
use crate::engine::Dist;
use crate::security::AuthMode;

use super::{
    ActivitySection, CenterCfg, CertCfg, DagSection, DbCfg, FaultCfg, FilterRuleCfg,
    LinkCfg, PolicyCfg, PuCfg, ScenarioConfig, ScenarioError, StormSection, TaskCfg, VoCfg,
};

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

fn err(line: usize, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse { line, msg: msg.into() }
}

fn parse_f64(line: usize, v: &str) -> Result<f64, ScenarioError> {
    v.parse::<f64>().map_err(|_| err(line, format!("expected a number, got `{v}`")))
}

fn parse_u64(line: usize, v: &str) -> Result<u64, ScenarioError> {
    v.parse::<u64>().map_err(|_| err(line, format!("expected an integer, got `{v}`")))
}

fn parse_bool(line: usize, v: &str) -> Result<bool, ScenarioError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(err(line, format!("expected true or false, got `{v}`"))),
    }
}

fn parse_dist(line: usize, v: &str) -> Result<Dist, ScenarioError> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    let f = |i: usize| -> Result<f64, ScenarioError> {
        parts
            .get(i)
            .ok_or_else(|| err(line, format!("distribution `{v}` is missing a parameter")))
            .and_then(|s| parse_f64(line, s))
    };
    let d = match parts.first().copied() {
        Some("exponential") => Dist::Exponential { mean: f(1)? },
        Some("gaussian") => Dist::Gaussian { mean: f(1)?, sigma: f(2)? },
        Some("uniform") => Dist::Uniform { a: f(1)?, b: f(2)? },
        Some("binomial") => Dist::Binomial { n: f(1)? as u64, p: f(2)? },
        Some("poisson") => Dist::Poisson { lambda: f(1)? },
        _ => return Err(err(line, format!("unknown distribution `{v}`"))),
    };
    if parts.len() > dist_arity(&d) + 1 {
        return Err(err(line, format!("too many parameters in `{v}`")));
    }
    Ok(d)
}

fn dist_arity(d: &Dist) -> usize {
    match d {
        Dist::Exponential { .. } | Dist::Poisson { .. } => 1,
        _ => 2,
    }
}

fn dist_str(d: &Dist) -> String {
    match d {
        Dist::Exponential { mean } => format!("exponential {mean}"),
        Dist::Gaussian { mean, sigma } => format!("gaussian {mean} {sigma}"),
        Dist::Uniform { a, b } => format!("uniform {a} {b}"),
        Dist::Binomial { n, p } => format!("binomial {n} {p}"),
        Dist::Poisson { lambda } => format!("poisson {lambda}"),
    }
}

fn word_list(v: &str) -> Vec<String> {
    v.split_whitespace().map(|s| s.to_string()).collect()
}

/// `task = id work=5 input=100 output=0`
fn parse_task(line: usize, v: &str) -> Result<TaskCfg, ScenarioError> {
    let mut parts = v.split_whitespace();
    let id = parts
        .next()
        .ok_or_else(|| err(line, "task needs an id"))?
        .to_string();
    let mut t = TaskCfg { id, work: 0.0, input_bytes: 0.0, output_bytes: 0.0 };
    for p in parts {
        let (k, val) = p
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected key=value, got `{p}`")))?;
        let val = parse_f64(line, val)?;
        match k {
            "work" => t.work = val,
            "input" => t.input_bytes = val,
            "output" => t.output_bytes = val,
            _ => return Err(err(line, format!("unknown task attribute `{k}`"))),
        }
    }
    Ok(t)
}

/// `edge = a -> b comm=1000`
fn parse_edge(line: usize, v: &str) -> Result<(String, String, f64), ScenarioError> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    if parts.len() < 3 || parts[1] != "->" {
        return Err(err(line, format!("expected `A -> B [comm=BYTES]`, got `{v}`")));
    }
    let mut comm = 0.0;
    for p in &parts[3..] {
        let (k, val) = p
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected key=value, got `{p}`")))?;
        if k != "comm" {
            return Err(err(line, format!("unknown edge attribute `{k}`")));
        }
        comm = parse_f64(line, val)?;
    }
    Ok((parts[0].to_string(), parts[2].to_string(), comm))
}

/// `rule = deny src=evil. op=get` / `rule = allow`
fn parse_rule(line: usize, v: &str) -> Result<FilterRuleCfg, ScenarioError> {
    let mut parts = v.split_whitespace();
    let allow = match parts.next() {
        Some("allow") => true,
        Some("deny") => false,
        other => {
            return Err(err(line, format!("rule must start with allow or deny, got {other:?}")))
        }
    };
    let mut r = FilterRuleCfg { allow, src_prefix: None, op: None };
    for p in parts {
        let (k, val) = p
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected key=value, got `{p}`")))?;
        match k {
            "src" => r.src_prefix = Some(val.to_string()),
            "op" => r.op = Some(val.to_string()),
            _ => return Err(err(line, format!("unknown rule attribute `{k}`"))),
        }
    }
    Ok(r)
}

/// `grant = vo1 get put`
fn parse_grant(line: usize, v: &str) -> Result<(String, Vec<String>), ScenarioError> {
    let mut parts = v.split_whitespace();
    let vo = parts
        .next()
        .ok_or_else(|| err(line, "grant needs a vo name"))?
        .to_string();
    let ops: Vec<String> = parts.map(|s| s.to_string()).collect();
    if ops.is_empty() {
        return Err(err(line, "grant needs at least one operation"));
    }
    Ok((vo, ops))
}

fn parse_retries(line: usize, v: &str) -> Result<Option<u32>, ScenarioError> {
    if v == "unlimited" {
        return Ok(None);
    }
    v.parse::<u32>()
        .map(Some)
        .map_err(|_| err(line, format!("expected an integer or `unlimited`, got `{v}`")))
}

enum Section {
    Engine,
    Center(String),
    Pu(String),
    Db(String),
    Router,
    Link(String),
    Fault(String),
    Storm(String),
    Vo(String),
    Cert(String),
    Policy(String),
    Filter(String),
    Activity(String),
    Dag(String),
    None,
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let mut cfg = ScenarioConfig::default();
    let mut section = Section::None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(hdr) = line.strip_prefix('[') {
            let hdr = hdr
                .strip_suffix(']')
                .ok_or_else(|| err(lineno, "unterminated section header"))?
                .trim();
            let (kind, name) = match hdr.split_once(char::is_whitespace) {
                Some((k, n)) => (k, n.trim().to_string()),
                None => (hdr, String::new()),
            };
            let named = |n: &String| -> Result<String, ScenarioError> {
                if n.is_empty() {
                    Err(err(lineno, format!("section `{kind}` needs a name")))
                } else {
                    Ok(n.clone())
                }
            };
            section = match kind {
                "engine" => Section::Engine,
                "center" => {
                    let n = named(&name)?;
                    cfg.centers.insert(
                        n.clone(),
                        CenterCfg { lan_capacity_bps: 1e9, lan_latency_s: 0.0 },
                    );
                    Section::Center(n)
                }
                "pu" => {
                    let n = named(&name)?;
                    cfg.pus.insert(
                        n.clone(),
                        PuCfg { center: String::new(), power: 1.0, slots: 1, vo: None },
                    );
                    Section::Pu(n)
                }
                "db" => {
                    let n = named(&name)?;
                    cfg.dbs.insert(
                        n.clone(),
                        DbCfg {
                            center: String::new(),
                            base_latency_s: 0.0,
                            throughput_bps: 1e9,
                            storage: false,
                        },
                    );
                    Section::Db(n)
                }
                "router" => {
                    let n = named(&name)?;
                    cfg.routers.insert(n);
                    Section::Router
                }
                "link" => {
                    let n = named(&name)?;
                    cfg.links.insert(
                        n.clone(),
                        LinkCfg {
                            a: String::new(),
                            b: String::new(),
                            capacity_bps: 1e9,
                            latency_s: 0.0,
                        },
                    );
                    Section::Link(n)
                }
                "fault" => {
                    let n = named(&name)?;
                    cfg.faults.insert(
                        n.clone(),
                        FaultCfg {
                            component: String::new(),
                            kind: "crash".to_string(),
                            mttf: Dist::Exponential { mean: 1.0 },
                            mttr: None,
                            loss_fraction: None,
                            extra: None,
                        },
                    );
                    Section::Fault(n)
                }
                "storm" => {
                    let n = named(&name)?;
                    cfg.storms.insert(
                        n.clone(),
                        StormSection {
                            components: vec![],
                            rate_per_s: 0.0,
                            start_s: 0.0,
                            end_s: 0.0,
                        },
                    );
                    Section::Storm(n)
                }
                "vo" => {
                    let n = named(&name)?;
                    cfg.vos.insert(n.clone(), VoCfg::default());
                    Section::Vo(n)
                }
                "cert" => {
                    let n = named(&name)?;
                    cfg.certs.insert(
                        n.clone(),
                        CertCfg {
                            subject: n.clone(),
                            issuer: "ca".to_string(),
                            vo: None,
                            not_before_s: 0.0,
                            not_after_s: f64::MAX,
                            revoked: false,
                        },
                    );
                    Section::Cert(n)
                }
                "policy" => {
                    let n = named(&name)?;
                    cfg.policies.insert(n.clone(), PolicyCfg::default());
                    Section::Policy(n)
                }
                "filter" => {
                    let n = named(&name)?;
                    cfg.filters.insert(n.clone(), vec![]);
                    Section::Filter(n)
                }
                "activity" => {
                    let n = named(&name)?;
                    cfg.activities.insert(n.clone(), ActivitySection::default());
                    Section::Activity(n)
                }
                "dag" => {
                    let n = named(&name)?;
                    cfg.dags.insert(n.clone(), DagSection::default());
                    Section::Dag(n)
                }
                other => return Err(err(lineno, format!("unknown section `{other}`"))),
            };
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(lineno, format!("expected `key = value`, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let unknown = || err(lineno, format!("unknown key `{key}` in this section"));
        match &section {
            Section::None => {
                return Err(err(lineno, "key outside of any section"));
            }
            Section::Engine => {
                let e = &mut cfg.engine;
                match key {
                    "horizon_s" => e.horizon_s = parse_f64(lineno, value)?,
                    "seed" => e.seed = parse_u64(lineno, value)?,
                    "window_s" => e.window_s = parse_f64(lineno, value)?,
                    "policy" => {
                        e.policy = Policy::from_str(value).map_err(|m| err(lineno, m))?
                    }
                    "reschedule" => e.reschedule = parse_bool(lineno, value)?,
                    "auth" => {
                        e.auth = match value {
                            "none" => AuthMode::None,
                            "unidirectional" => AuthMode::Unidirectional,
                            "mutual" => AuthMode::Mutual,
                            _ => return Err(err(lineno, format!("unknown auth mode `{value}`"))),
                        }
                    }
                    "handshake_cost_s" => e.handshake_cost_s = parse_f64(lineno, value)?,
                    "cipher_overhead" => e.cipher_overhead = parse_f64(lineno, value)?,
                    "cipher_cost_s_per_byte" => {
                        e.cipher_cost_s_per_byte = parse_f64(lineno, value)?
                    }
                    "trusted_issuers" => {
                        e.trusted_issuers = word_list(value).into_iter().collect()
                    }
                    "job_max_retries" => e.job_max_retries = parse_retries(lineno, value)?,
                    "transfer_max_retries" => {
                        e.transfer_max_retries = parse_retries(lineno, value)?
                    }
                    _ => return Err(unknown()),
                }
            }
            Section::Center(n) => {
                let c = cfg.centers.get_mut(n).unwrap();
                match key {
                    "lan_capacity_bps" => c.lan_capacity_bps = parse_f64(lineno, value)?,
                    "lan_latency_s" => c.lan_latency_s = parse_f64(lineno, value)?,
                    _ => return Err(unknown()),
                }
            }
            Section::Pu(n) => {
                let p = cfg.pus.get_mut(n).unwrap();
                match key {
                    "center" => p.center = value.to_string(),
                    "power" => p.power = parse_f64(lineno, value)?,
                    "slots" => p.slots = parse_u64(lineno, value)? as u32,
                    "vo" => p.vo = Some(value.to_string()),
                    _ => return Err(unknown()),
                }
            }
            Section::Db(n) => {
                let d = cfg.dbs.get_mut(n).unwrap();
                match key {
                    "center" => d.center = value.to_string(),
                    "base_latency_s" => d.base_latency_s = parse_f64(lineno, value)?,
                    "throughput_bps" => d.throughput_bps = parse_f64(lineno, value)?,
                    "storage" => d.storage = parse_bool(lineno, value)?,
                    _ => return Err(unknown()),
                }
            }
            Section::Router => return Err(unknown()),
            Section::Link(n) => {
                let l = cfg.links.get_mut(n).unwrap();
                match key {
                    "endpoints" => {
                        let eps = word_list(value);
                        if eps.len() != 2 {
                            return Err(err(lineno, "endpoints needs exactly two nodes"));
                        }
                        l.a = eps[0].clone();
                        l.b = eps[1].clone();
                    }
                    "capacity_bps" => l.capacity_bps = parse_f64(lineno, value)?,
                    "latency_s" => l.latency_s = parse_f64(lineno, value)?,
                    _ => return Err(unknown()),
                }
            }
            Section::Fault(n) => {
                let f = cfg.faults.get_mut(n).unwrap();
                match key {
                    "component" => f.component = value.to_string(),
                    "kind" => f.kind = value.to_string(),
                    "mttf" => f.mttf = parse_dist(lineno, value)?,
                    "mttr" => f.mttr = Some(parse_dist(lineno, value)?),
                    "loss_fraction" => f.loss_fraction = Some(parse_f64(lineno, value)?),
                    "extra" => f.extra = Some(parse_dist(lineno, value)?),
                    _ => return Err(unknown()),
                }
            }
            Section::Storm(n) => {
                let s = cfg.storms.get_mut(n).unwrap();
                match key {
                    "components" => s.components = word_list(value),
                    "rate_per_s" => s.rate_per_s = parse_f64(lineno, value)?,
                    "start_s" => s.start_s = parse_f64(lineno, value)?,
                    "end_s" => s.end_s = parse_f64(lineno, value)?,
                    _ => return Err(unknown()),
                }
            }
            Section::Vo(n) => {
                let v = cfg.vos.get_mut(n).unwrap();
                match key {
                    "components" => v.components = word_list(value),
                    "members" => v.members = word_list(value),
                    _ => return Err(unknown()),
                }
            }
            Section::Cert(n) => {
                let c = cfg.certs.get_mut(n).unwrap();
                match key {
                    "subject" => c.subject = value.to_string(),
                    "issuer" => c.issuer = value.to_string(),
                    "vo" => c.vo = Some(value.to_string()),
                    "not_before_s" => c.not_before_s = parse_f64(lineno, value)?,
                    "not_after_s" => c.not_after_s = parse_f64(lineno, value)?,
                    "revoked" => c.revoked = parse_bool(lineno, value)?,
                    _ => return Err(unknown()),
                }
            }
            Section::Policy(n) => {
                let p = cfg.policies.get_mut(n).unwrap();
                match key {
                    "grant" => p.grants.push(parse_grant(lineno, value)?),
                    "attack_op" => p.attack_ops.push(value.to_string()),
                    "work_cap" => p.work_cap = Some(parse_f64(lineno, value)?),
                    _ => return Err(unknown()),
                }
            }
            Section::Filter(n) => {
                let rules = cfg.filters.get_mut(n).unwrap();
                match key {
                    "rule" => rules.push(parse_rule(lineno, value)?),
                    _ => return Err(unknown()),
                }
            }
            Section::Activity(n) => {
                let a = cfg.activities.get_mut(n).unwrap();
                match key {
                    "pattern" => a.pattern = value.to_string(),
                    "count" => a.count = Some(parse_u64(lineno, value)?),
                    "rate_per_s" => a.rate_per_s = parse_f64(lineno, value)?,
                    "start_s" => a.start_s = parse_f64(lineno, value)?,
                    "end_s" => a.end_s = parse_f64(lineno, value)?,
                    "work" => a.work = parse_f64(lineno, value)?,
                    "input_bytes" => a.input_bytes = parse_f64(lineno, value)?,
                    "output_bytes" => a.output_bytes = parse_f64(lineno, value)?,
                    "timeout_s" => a.timeout_s = Some(parse_f64(lineno, value)?),
                    "vo" => a.vo = Some(value.to_string()),
                    "credential" => a.credential = Some(value.to_string()),
                    "submit_center" => a.submit_center = Some(value.to_string()),
                    "db_server" => a.db_server = Some(value.to_string()),
                    "db_op" => a.db_op = value.to_string(),
                    "db_size_bytes" => a.db_size_bytes = parse_f64(lineno, value)?,
                    "db_request_bytes" => a.db_request_bytes = parse_f64(lineno, value)?,
                    "replicas" => a.replicas = parse_u64(lineno, value)? as u32,
                    "checkpoint_s" => a.checkpoint_s = Some(parse_f64(lineno, value)?),
                    "sources" => a.sources = word_list(value),
                    "target" => a.target = Some(value.to_string()),
                    _ => return Err(unknown()),
                }
            }
            Section::Dag(n) => {
                let d = cfg.dags.get_mut(n).unwrap();
                match key {
                    "submit_s" => d.submit_s = parse_f64(lineno, value)?,
                    "vo" => d.vo = Some(value.to_string()),
                    "credential" => d.credential = Some(value.to_string()),
                    "submit_center" => d.submit_center = Some(value.to_string()),
                    "task" => d.tasks.push(parse_task(lineno, value)?),
                    "edge" => d.edges.push(parse_edge(lineno, value)?),
                    _ => return Err(unknown()),
                }
            }
        }
    }
    Ok(cfg)
}

fn retries_str(r: Option<u32>) -> String {
    r.map(|n| n.to_string()).unwrap_or_else(|| "unlimited".to_string())
}

/// Emits the canonical text form: `parse_scenario(write_scenario(cfg))`
/// equals `cfg`.
pub fn write_scenario(cfg: &ScenarioConfig) -> String {
    let mut s = String::new();
    let w = &mut s;
    let e = &cfg.engine;
    writeln!(w, "[engine]").unwrap();
    writeln!(w, "horizon_s = {}", e.horizon_s).unwrap();
    writeln!(w, "seed = {}", e.seed).unwrap();
    writeln!(w, "window_s = {}", e.window_s).unwrap();
    writeln!(w, "policy = {}", e.policy.as_str()).unwrap();
    writeln!(w, "reschedule = {}", e.reschedule).unwrap();
    let auth = match e.auth {
        AuthMode::None => "none",
        AuthMode::Unidirectional => "unidirectional",
        AuthMode::Mutual => "mutual",
    };
    writeln!(w, "auth = {auth}").unwrap();
    writeln!(w, "handshake_cost_s = {}", e.handshake_cost_s).unwrap();
    writeln!(w, "cipher_overhead = {}", e.cipher_overhead).unwrap();
    writeln!(w, "cipher_cost_s_per_byte = {}", e.cipher_cost_s_per_byte).unwrap();
    writeln!(
        w,
        "trusted_issuers = {}",
        e.trusted_issuers.iter().cloned().collect::<Vec<_>>().join(" ")
    )
    .unwrap();
    writeln!(w, "job_max_retries = {}", retries_str(e.job_max_retries)).unwrap();
    writeln!(w, "transfer_max_retries = {}", retries_str(e.transfer_max_retries)).unwrap();
    for (n, c) in &cfg.centers {
        writeln!(w, "\n[center {n}]").unwrap();
        writeln!(w, "lan_capacity_bps = {}", c.lan_capacity_bps).unwrap();
        writeln!(w, "lan_latency_s = {}", c.lan_latency_s).unwrap();
    }
    for n in &cfg.routers {
        writeln!(w, "\n[router {n}]").unwrap();
    }
    for (n, p) in &cfg.pus {
        writeln!(w, "\n[pu {n}]").unwrap();
        writeln!(w, "center = {}", p.center).unwrap();
        writeln!(w, "power = {}", p.power).unwrap();
        writeln!(w, "slots = {}", p.slots).unwrap();
        if let Some(v) = &p.vo {
            writeln!(w, "vo = {v}").unwrap();
        }
    }
    for (n, d) in &cfg.dbs {
        writeln!(w, "\n[db {n}]").unwrap();
        writeln!(w, "center = {}", d.center).unwrap();
        writeln!(w, "base_latency_s = {}", d.base_latency_s).unwrap();
        writeln!(w, "throughput_bps = {}", d.throughput_bps).unwrap();
        writeln!(w, "storage = {}", d.storage).unwrap();
    }
    for (n, l) in &cfg.links {
        writeln!(w, "\n[link {n}]").unwrap();
        writeln!(w, "endpoints = {} {}", l.a, l.b).unwrap();
        writeln!(w, "capacity_bps = {}", l.capacity_bps).unwrap();
        writeln!(w, "latency_s = {}", l.latency_s).unwrap();
    }
    for (n, f) in &cfg.faults {
        writeln!(w, "\n[fault {n}]").unwrap();
        writeln!(w, "component = {}", f.component).unwrap();
        writeln!(w, "kind = {}", f.kind).unwrap();
        writeln!(w, "mttf = {}", dist_str(&f.mttf)).unwrap();
        if let Some(r) = &f.mttr {
            writeln!(w, "mttr = {}", dist_str(r)).unwrap();
        }
        if let Some(l) = f.loss_fraction {
            writeln!(w, "loss_fraction = {l}").unwrap();
        }
        if let Some(x) = &f.extra {
            writeln!(w, "extra = {}", dist_str(x)).unwrap();
        }
    }
    for (n, st) in &cfg.storms {
        writeln!(w, "\n[storm {n}]").unwrap();
        writeln!(w, "components = {}", st.components.join(" ")).unwrap();
        writeln!(w, "rate_per_s = {}", st.rate_per_s).unwrap();
        writeln!(w, "start_s = {}", st.start_s).unwrap();
        writeln!(w, "end_s = {}", st.end_s).unwrap();
    }
    for (n, v) in &cfg.vos {
        writeln!(w, "\n[vo {n}]").unwrap();
        writeln!(w, "components = {}", v.components.join(" ")).unwrap();
        writeln!(w, "members = {}", v.members.join(" ")).unwrap();
    }
    for (n, c) in &cfg.certs {
        writeln!(w, "\n[cert {n}]").unwrap();
        writeln!(w, "subject = {}", c.subject).unwrap();
        writeln!(w, "issuer = {}", c.issuer).unwrap();
        if let Some(v) = &c.vo {
            writeln!(w, "vo = {v}").unwrap();
        }
        writeln!(w, "not_before_s = {}", c.not_before_s).unwrap();
        writeln!(w, "not_after_s = {}", c.not_after_s).unwrap();
        writeln!(w, "revoked = {}", c.revoked).unwrap();
    }
    for (n, p) in &cfg.policies {
        writeln!(w, "\n[policy {n}]").unwrap();
        for (vo, ops) in &p.grants {
            writeln!(w, "grant = {vo} {}", ops.join(" ")).unwrap();
        }
        for op in &p.attack_ops {
            writeln!(w, "attack_op = {op}").unwrap();
        }
        if let Some(c) = p.work_cap {
            writeln!(w, "work_cap = {c}").unwrap();
        }
    }
    for (n, rules) in &cfg.filters {
        writeln!(w, "\n[filter {n}]").unwrap();
        for r in rules {
            let mut line = String::from(if r.allow { "allow" } else { "deny" });
            if let Some(p) = &r.src_prefix {
                write!(line, " src={p}").unwrap();
            }
            if let Some(o) = &r.op {
                write!(line, " op={o}").unwrap();
            }
            writeln!(w, "rule = {line}").unwrap();
        }
    }
    for (n, a) in &cfg.activities {
        writeln!(w, "\n[activity {n}]").unwrap();
        writeln!(w, "pattern = {}", a.pattern).unwrap();
        if let Some(c) = a.count {
            writeln!(w, "count = {c}").unwrap();
        }
        writeln!(w, "rate_per_s = {}", a.rate_per_s).unwrap();
        writeln!(w, "start_s = {}", a.start_s).unwrap();
        writeln!(w, "end_s = {}", a.end_s).unwrap();
        writeln!(w, "work = {}", a.work).unwrap();
        writeln!(w, "input_bytes = {}", a.input_bytes).unwrap();
        writeln!(w, "output_bytes = {}", a.output_bytes).unwrap();
        if let Some(t) = a.timeout_s {
            writeln!(w, "timeout_s = {t}").unwrap();
        }
        if let Some(v) = &a.vo {
            writeln!(w, "vo = {v}").unwrap();
        }
        if let Some(c) = &a.credential {
            writeln!(w, "credential = {c}").unwrap();
        }
        if let Some(c) = &a.submit_center {
            writeln!(w, "submit_center = {c}").unwrap();
        }
        if let Some(d) = &a.db_server {
            writeln!(w, "db_server = {d}").unwrap();
        }
        writeln!(w, "db_op = {}", a.db_op).unwrap();
        writeln!(w, "db_size_bytes = {}", a.db_size_bytes).unwrap();
        writeln!(w, "db_request_bytes = {}", a.db_request_bytes).unwrap();
        writeln!(w, "replicas = {}", a.replicas).unwrap();
        if let Some(c) = a.checkpoint_s {
            writeln!(w, "checkpoint_s = {c}").unwrap();
        }
        if !a.sources.is_empty() {
            writeln!(w, "sources = {}", a.sources.join(" ")).unwrap();
        }
        if let Some(t) = &a.target {
            writeln!(w, "target = {t}").unwrap();
        }
    }
    for (n, d) in &cfg.dags {
        writeln!(w, "\n[dag {n}]").unwrap();
        writeln!(w, "submit_s = {}", d.submit_s).unwrap();
        if let Some(v) = &d.vo {
            writeln!(w, "vo = {v}").unwrap();
        }
        if let Some(c) = &d.credential {
            writeln!(w, "credential = {c}").unwrap();
        }
        if let Some(c) = &d.submit_center {
            writeln!(w, "submit_center = {c}").unwrap();
        }
        for t in &d.tasks {
            writeln!(
                w,
                "task = {} work={} input={} output={}",
                t.id, t.work, t.input_bytes, t.output_bytes
            )
            .unwrap();
        }
        for (a, b, comm) in &d.edges {
            writeln!(w, "edge = {a} -> {b} comm={comm}").unwrap();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
# two centers, one router
[engine]
horizon_s = 50
seed = 7
policy = etf

[center c1]
lan_capacity_bps = 1e9
lan_latency_s = 0.0001

[center c2]

[router r1]

[link wan.c1r1]
endpoints = c1 r1
capacity_bps = 1e8
latency_s = 0.002

[link wan.c2r1]
endpoints = c2 r1
capacity_bps = 1e8
latency_s = 0.002

[pu c1.pu1]
center = c1
power = 10
slots = 2

[db c2.db]
center = c2
throughput_bps = 1e8

[fault f1]
component = wan.c1r1
kind = omission
mttf = exponential 10
mttr = uniform 1 2
loss_fraction = 0.25

[activity a1]
pattern = batch
count = 3
work = 5
submit_center = c1
"#;

    #[test]
    fn parses_sections_and_values() {
        let cfg = parse_scenario(SAMPLE).unwrap();
        assert_eq!(cfg.engine.seed, 7);
        assert_eq!(cfg.engine.policy, Policy::Etf);
        assert_eq!(cfg.centers.len(), 2);
        assert_eq!(cfg.links["wan.c1r1"].a, "c1");
        assert_eq!(cfg.pus["c1.pu1"].slots, 2);
        assert_eq!(cfg.faults["f1"].loss_fraction, Some(0.25));
        assert_eq!(
            cfg.faults["f1"].mttr,
            Some(Dist::Uniform { a: 1.0, b: 2.0 })
        );
        assert_eq!(cfg.activities["a1"].count, Some(3));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_key_is_an_error_with_line_number() {
        let bad = "[engine]\nbogus = 1\n";
        match parse_scenario(bad) {
            Err(ScenarioError::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("bogus"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_section_rejected() {
        assert!(parse_scenario("[warp drive]\n").is_err());
    }

    #[test]
    fn key_outside_section_rejected() {
        assert!(parse_scenario("horizon_s = 5\n").is_err());
    }

    #[test]
    fn roundtrip_canonical_form() {
        let cfg = parse_scenario(SAMPLE).unwrap();
        let text = write_scenario(&cfg);
        let cfg2 = parse_scenario(&text).unwrap();
        assert_eq!(cfg, cfg2);
        // The canonical form is a fixed point.
        assert_eq!(text, write_scenario(&cfg2));
    }

    #[test]
    fn dist_parse_errors() {
        assert!(parse_dist(1, "exponential").is_err());
        assert!(parse_dist(1, "gauss 1 2").is_err());
        assert!(parse_dist(1, "uniform 1 2 3").is_err());
        assert!(parse_dist(1, "gaussian 1 x").is_err());
    }

    #[test]
    fn validate_catches_dangling_references() {
        let cfg = parse_scenario(
            "[pu p1]\ncenter = nowhere\n",
        )
        .unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("unknown center"));
    }
}
