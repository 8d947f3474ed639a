//! The security model: virtual organizations, certificate validation with
//! proxy chains, mutual authentication with explicit handshake cost,
//! per-component access policies that classify certain denied operations
//! as attacks, message filters, and a DoS traffic generator.

use std::collections::{BTreeMap, BTreeSet};

use crate::engine::{CompId, Dist, Engine, EventKind, SeededRng, SimTime};
use crate::world::{sched_target, Ev, World};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AuthMode {
    None,
    Unidirectional,
    Mutual,
}

#[derive(Clone, Debug, Default)]
pub struct VirtualOrganization {
    pub name: String,
    pub components: BTreeSet<CompId>,
    pub members: BTreeSet<String>,
}

#[derive(Clone, Debug)]
pub struct Certificate {
    pub name: String,
    pub subject: String,
    pub issuer: String,
    pub not_before_s: f64,
    pub not_after_s: f64,
    pub revoked: bool,
    pub vo: Option<String>,
    /// Set when this is a proxy credential minted from another certificate.
    pub proxy_of: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CertStatus {
    Valid,
    Expired,
    NotYetValid,
    UnknownIssuer,
    Revoked,
}

impl CertStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CertStatus::Valid => "valid",
            CertStatus::Expired => "expired",
            CertStatus::NotYetValid => "not-yet-valid",
            CertStatus::UnknownIssuer => "unknown-issuer",
            CertStatus::Revoked => "revoked",
        }
    }
}

/// Validates a certificate at `now`: lifetime window, revocation, and a
/// trusted issuer at the root of any proxy chain. The first problem found
/// wins; a proxy is no better than its signer.
pub fn validate_cert(
    certs: &BTreeMap<String, Certificate>,
    cert: &Certificate,
    now_s: f64,
    trusted_issuers: &BTreeSet<String>,
) -> CertStatus {
    if cert.revoked {
        return CertStatus::Revoked;
    }
    if now_s < cert.not_before_s {
        return CertStatus::NotYetValid;
    }
    if now_s > cert.not_after_s {
        return CertStatus::Expired;
    }
    match &cert.proxy_of {
        Some(parent) => match certs.get(parent) {
            Some(p) => validate_cert(certs, p, now_s, trusted_issuers),
            None => CertStatus::UnknownIssuer,
        },
        None => {
            if trusted_issuers.contains(&cert.issuer) {
                CertStatus::Valid
            } else {
                CertStatus::UnknownIssuer
            }
        }
    }
}

/// Derives a short-lived proxy credential from an existing certificate.
/// The proxy can never outlive its parent and inherits the VO.
pub fn mint_proxy(
    certs: &BTreeMap<String, Certificate>,
    parent: &str,
    name: &str,
    lifetime_s: f64,
    now_s: f64,
) -> Result<Certificate, String> {
    let p = certs
        .get(parent)
        .ok_or_else(|| format!("unknown parent certificate `{parent}`"))?;
    if lifetime_s <= 0.0 {
        return Err("proxy lifetime must be positive".to_string());
    }
    Ok(Certificate {
        name: name.to_string(),
        subject: p.subject.clone(),
        issuer: p.subject.clone(),
        not_before_s: now_s,
        not_after_s: (now_s + lifetime_s).min(p.not_after_s),
        revoked: false,
        vo: p.vo.clone(),
        proxy_of: Some(parent.to_string()),
    })
}

#[derive(Clone, Debug)]
pub struct Session {
    pub id: u64,
    pub client: CompId,
    pub server: CompId,
    pub established_at: SimTime,
}

// ---------------------------------------------------------------------------
// Authorization

#[derive(Clone, Debug, Default)]
pub struct AccessPolicy {
    /// Operations granted per VO; `*` grants everything.
    pub grants: BTreeMap<String, BTreeSet<String>>,
    /// Operations this component classifies as attacks. Checked before
    /// grants: a policy can flag an operation even for a VO member.
    pub attack_ops: BTreeSet<String>,
    /// Maximum job work admitted under this policy, when set.
    pub work_cap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decision {
    Allow,
    Deny { attack: bool, reason: String },
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        matches!(self, Decision::Allow)
    }
}

/// Evaluates an operation against a component's policy. Without a policy
/// everything is allowed; with one, attack-classified operations are
/// denied first, then VO grants and the work cap apply.
pub fn authorize(
    cert: Option<&Certificate>,
    policy: Option<&AccessPolicy>,
    op: &str,
    work: Option<f64>,
) -> Decision {
    let Some(policy) = policy else { return Decision::Allow };
    if policy.attack_ops.contains(op) {
        return Decision::Deny {
            attack: true,
            reason: format!("operation `{op}` classified as attack"),
        };
    }
    let Some(cert) = cert else {
        return Decision::Deny {
            attack: false,
            reason: "no credential".to_string(),
        };
    };
    let Some(vo) = &cert.vo else {
        return Decision::Deny {
            attack: false,
            reason: "credential carries no VO".to_string(),
        };
    };
    let granted = policy
        .grants
        .get(vo)
        .map(|ops| ops.contains(op) || ops.contains("*"))
        .unwrap_or(false);
    if !granted {
        return Decision::Deny {
            attack: false,
            reason: format!("vo `{vo}` not granted `{op}`"),
        };
    }
    if let (Some(cap), Some(work)) = (policy.work_cap, work) {
        if work > cap {
            return Decision::Deny {
                attack: false,
                reason: format!("work {work} exceeds cap {cap}"),
            };
        }
    }
    Decision::Allow
}

// ---------------------------------------------------------------------------
// Message filters

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FilterAction {
    Allow,
    Deny,
}

#[derive(Clone, Debug)]
pub struct FilterRule {
    pub action: FilterAction,
    /// Match on source component id prefix; `None` matches any source.
    pub src_prefix: Option<String>,
    /// Match on operation kind; `None` matches any operation.
    pub op: Option<String>,
}

/// First matching rule wins; no match allows.
pub fn filter_eval(rules: &[FilterRule], src: &CompId, op: &str) -> FilterAction {
    for r in rules {
        let src_ok = r
            .src_prefix
            .as_ref()
            .map(|p| src.as_str().starts_with(p.as_str()))
            .unwrap_or(true);
        let op_ok = r.op.as_ref().map(|o| o == op).unwrap_or(true);
        if src_ok && op_ok {
            return r.action;
        }
    }
    FilterAction::Allow
}

/// Cipher protection of a message: the wire size grows by the configured
/// overhead factor and each endpoint spends CPU proportional to it.
pub fn protect_message(bytes: f64, overhead: f64, cost_s_per_byte: f64) -> (f64, f64) {
    let eff = bytes * overhead;
    (eff, eff * cost_s_per_byte)
}

// ---------------------------------------------------------------------------
// State and runtime behavior

#[derive(Clone, Debug)]
pub struct AttackPattern {
    pub name: String,
    pub sources: Vec<CompId>,
    pub target: CompId,
    pub rate_per_s: f64,
    pub start_s: f64,
    pub end_s: f64,
    pub request_bytes: f64,
    pub op_kind: String,
    pub credential: Option<String>,
}

pub struct AttackRun {
    pub pattern: AttackPattern,
    pub rng: SeededRng,
    pub emitted: u64,
}

#[derive(Default)]
pub struct SecState {
    pub vos: BTreeMap<String, VirtualOrganization>,
    pub certs: BTreeMap<String, Certificate>,
    pub policies: BTreeMap<CompId, AccessPolicy>,
    pub filters: BTreeMap<CompId, Vec<FilterRule>>,
    pub sessions: Vec<Session>,
    pub attacks: BTreeMap<String, AttackRun>,
    pub attacks_detected: u64,
}

/// Mutual (or one-way) authentication between a client component and a
/// server. Returns the handshake latency to charge, or the failure reason.
/// Cost: two round trips over the current route plus the configured
/// handshake processing time.
pub fn authenticate(
    w: &mut World,
    eng: &mut Engine<World>,
    client: &CompId,
    server: &CompId,
    credential: &str,
) -> Result<f64, String> {
    let cert = w
        .sec
        .certs
        .get(credential)
        .ok_or_else(|| format!("unknown credential `{credential}`"))?;
    let now = eng.now().seconds();
    if w.cfg.auth_mode == AuthMode::Mutual {
        let st = validate_cert(&w.sec.certs, cert, now, &w.cfg.trusted_issuers);
        if st != CertStatus::Valid {
            return Err(format!("client:{}", st.as_str()));
        }
    }
    // The client always verifies the server when the server has a
    // certificate on file.
    let server_cert = w
        .sec
        .certs
        .values()
        .find(|c| c.subject == server.as_str() && c.proxy_of.is_none());
    if let Some(sc) = server_cert {
        let st = validate_cert(&w.sec.certs, sc, now, &w.cfg.trusted_issuers);
        if st != CertStatus::Valid {
            return Err(format!("server:{}", st.as_str()));
        }
    }
    let one_way: f64 = w
        .topology
        .route(client, server)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|l| w.topology.links[l].latency_s)
        .sum();
    let cost = 4.0 * one_way + w.cfg.handshake_cost_s;
    let id = w.sec.sessions.len() as u64;
    w.sec.sessions.push(Session {
        id,
        client: client.clone(),
        server: server.clone(),
        established_at: eng.now(),
    });
    eng.record("auth-ok", client, server.as_str(), credential);
    Ok(cost)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ConnOutcome {
    /// Dropped by a filter (or the server being down) before any policy
    /// evaluation.
    Dropped,
    Denied { attack: bool },
    Allowed,
}

/// Shared entry point for every connection reaching a database server —
/// legitimate operations and attack traffic alike. Filters run first, then
/// the received load is accounted, then the access policy decides.
pub fn db_connection_arrived(
    w: &mut World,
    eng: &mut Engine<World>,
    server: &CompId,
    src: &CompId,
    op: &str,
    bytes: f64,
    credential: Option<&str>,
) -> ConnOutcome {
    let up = w
        .topology
        .dbs
        .get(server)
        .map(|d| d.state.is_up())
        .unwrap_or(false);
    if !up {
        eng.record("drop", src, server.as_str(), "server-down");
        return ConnOutcome::Dropped;
    }
    if let Some(rules) = w.sec.filters.get(server) {
        if filter_eval(rules, src, op) == FilterAction::Deny {
            eng.record("filter-drop", src, server.as_str(), op);
            w.metrics.add("filtered", server.as_str(), 1.0);
            return ConnOutcome::Dropped;
        }
    }
    let now = eng.now();
    w.metrics.sample("received_bytes", server.as_str(), now, bytes);
    w.metrics.sample("connections", server.as_str(), now, 1.0);
    let cert = credential.and_then(|c| w.sec.certs.get(c)).cloned();
    let decision = authorize(cert.as_ref(), w.sec.policies.get(server), op, None);
    match decision {
        Decision::Allow => ConnOutcome::Allowed,
        Decision::Deny { attack, reason } => {
            eng.record("deny", src, server.as_str(), reason);
            if attack {
                w.sec.attacks_detected += 1;
                w.metrics.add("attacks_detected", server.as_str(), 1.0);
                eng.record("attack", src, server.as_str(), op);
            }
            ConnOutcome::Denied { attack }
        }
    }
}

/// Starts a DoS pattern: a Poisson stream of connections from rotating
/// sources against one target, between `start_s` and `end_s`.
pub fn launch_attack(w: &mut World, eng: &mut Engine<World>, pattern: AttackPattern) {
    if pattern.sources.is_empty() || pattern.rate_per_s <= 0.0 {
        return;
    }
    let mut rng = SeededRng::substream(eng.root_seed(), &format!("attack:{}", pattern.name));
    let gap = Dist::Exponential { mean: 1.0 / pattern.rate_per_s }
        .sample(&mut rng)
        .unwrap();
    let first = pattern.start_s + gap;
    let src = pattern.sources[rng.gen_range_usize(pattern.sources.len())].clone();
    let name = pattern.name.clone();
    let end = pattern.end_s;
    w.sec.attacks.insert(
        name.clone(),
        AttackRun { pattern, rng, emitted: 0 },
    );
    if first <= end {
        eng.schedule(
            SimTime::new(first),
            src.clone(),
            sched_target(),
            EventKind::User("attack-conn"),
            Ev::AttackConn { pattern: name, source: src },
        )
        .unwrap();
    }
}

pub fn on_attack_conn(w: &mut World, eng: &mut Engine<World>, name: &str, source: &CompId) {
    let (target, op, bytes, cred, next) = {
        let Some(run) = w.sec.attacks.get_mut(name) else { return };
        run.emitted += 1;
        let gap = Dist::Exponential { mean: 1.0 / run.pattern.rate_per_s }
            .sample(&mut run.rng)
            .unwrap();
        let t = eng.now().seconds() + gap;
        let next = (t <= run.pattern.end_s).then(|| {
            let src = run.pattern.sources[run.rng.gen_range_usize(run.pattern.sources.len())]
                .clone();
            (t, src)
        });
        (
            run.pattern.target.clone(),
            run.pattern.op_kind.clone(),
            run.pattern.request_bytes,
            run.pattern.credential.clone(),
            next,
        )
    };
    if let Some((t, src)) = next {
        eng.schedule(
            SimTime::new(t),
            src.clone(),
            sched_target(),
            EventKind::User("attack-conn"),
            Ev::AttackConn { pattern: name.to_string(), source: src },
        )
        .unwrap();
    }
    db_connection_arrived(w, eng, &target, source, &op, bytes, cred.as_deref());
}
