//! Scenario -> world construction and the end-to-end runner.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::dependsched::Policy;
use crate::engine::{CompId, Engine, EventKind, SimTime, Trace};
use crate::faults::{self, FaultKind, FaultProfile, StormCfg};
use crate::metrics::{write_metrics_csv, write_report_csv, RunReport};
use crate::resources::{
    CompState, DatabaseServer, Link, ProcessingUnit, RegionalCenter, Router,
};
use crate::security::{
    AccessPolicy, Certificate, FilterAction, FilterRule, VirtualOrganization,
};
use crate::workload::{self, ActivityCfg, Dag, DbOp, Job, JobTemplate, Pattern};
use crate::world::{sched_target, Ev, RunOptions, World};

use super::{DagSection, ScenarioConfig, ScenarioError};

/// Command-line overrides applied on top of the scenario's `[engine]`
/// section.
#[derive(Clone, Debug, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub until: Option<f64>,
    pub policy: Option<Policy>,
    pub no_reschedule: bool,
}

pub struct RunOutput {
    pub world: World,
    pub trace: Trace,
    pub report: RunReport,
}

pub(super) fn dag_of(id: &str, d: &DagSection) -> Dag {
    let tasks = d
        .tasks
        .iter()
        .map(|t| {
            let mut j = Job::new(t.id.clone(), t.work);
            j.input_bytes = t.input_bytes;
            j.output_bytes = t.output_bytes;
            j.vo = d.vo.clone();
            j.credential = d.credential.clone();
            j.submit_center = d.submit_center.clone().map(CompId::new);
            j
        })
        .collect();
    Dag {
        id: id.to_string(),
        tasks,
        edges: d.edges.clone(),
    }
}

/// Builds the world and engine for a validated scenario and schedules all
/// initial activity: fault profiles, storms, generators, DAG submissions.
pub fn build(
    cfg: &ScenarioConfig,
    ov: &RunOverrides,
) -> Result<(World, Engine<World>), ScenarioError> {
    cfg.validate()?;
    let seed = ov.seed.unwrap_or(cfg.engine.seed);
    let horizon = ov.until.unwrap_or(cfg.engine.horizon_s);
    let opts = RunOptions {
        horizon,
        reschedule: cfg.engine.reschedule && !ov.no_reschedule,
        job_max_retries: cfg.engine.job_max_retries,
        transfer_max_retries: cfg.engine.transfer_max_retries,
        handshake_cost_s: cfg.engine.handshake_cost_s,
        cipher_overhead: cfg.engine.cipher_overhead,
        cipher_cost_s_per_byte: cfg.engine.cipher_cost_s_per_byte,
        auth_mode: cfg.engine.auth,
        trusted_issuers: cfg.engine.trusted_issuers.clone(),
    };
    let mut w = World::new(opts, seed);
    w.metrics.window_s = cfg.engine.window_s;
    w.sched.policy = ov.policy.unwrap_or(cfg.engine.policy);
    let mut eng: Engine<World> = Engine::new(seed);

    // Topology.
    for (name, c) in &cfg.centers {
        let id = CompId::new(name);
        let lan = CompId::new(format!("lan.{name}"));
        w.topology.links.insert(
            lan.clone(),
            Link {
                id: lan.clone(),
                endpoints: (id.clone(), id.clone()),
                capacity_bps: c.lan_capacity_bps,
                latency_s: c.lan_latency_s,
                state: CompState::Operational,
                loss_fraction: 0.0,
            },
        );
        w.topology.centers.insert(
            id.clone(),
            RegionalCenter { id, pus: vec![], dbs: vec![], lan },
        );
    }
    for name in &cfg.routers {
        let id = CompId::new(name);
        w.topology.routers.insert(
            id.clone(),
            Router { id, state: CompState::Operational },
        );
    }
    for (name, p) in &cfg.pus {
        let id = CompId::new(name);
        let center = CompId::new(&p.center);
        w.topology
            .centers
            .get_mut(&center)
            .unwrap()
            .pus
            .push(id.clone());
        w.topology.pus.insert(
            id.clone(),
            ProcessingUnit {
                id,
                center,
                power: p.power,
                slots: p.slots,
                vo: p.vo.clone(),
                state: CompState::Operational,
                running: BTreeSet::new(),
                backlog: vec![],
            },
        );
    }
    for (name, d) in &cfg.dbs {
        let id = CompId::new(name);
        let center = CompId::new(&d.center);
        w.topology
            .centers
            .get_mut(&center)
            .unwrap()
            .dbs
            .push(id.clone());
        w.topology.dbs.insert(
            id.clone(),
            DatabaseServer {
                id,
                center,
                base_latency_s: d.base_latency_s,
                throughput_bps: d.throughput_bps,
                state: CompState::Operational,
                is_storage: d.storage,
            },
        );
    }
    for (name, l) in &cfg.links {
        let id = CompId::new(name);
        w.topology.links.insert(
            id.clone(),
            Link {
                id,
                endpoints: (CompId::new(&l.a), CompId::new(&l.b)),
                capacity_bps: l.capacity_bps,
                latency_s: l.latency_s,
                state: CompState::Operational,
                loss_fraction: 0.0,
            },
        );
    }

    // Security state.
    for (name, v) in &cfg.vos {
        w.sec.vos.insert(
            name.clone(),
            VirtualOrganization {
                name: name.clone(),
                components: v.components.iter().map(CompId::new).collect(),
                members: v.members.iter().cloned().collect(),
            },
        );
    }
    for (name, c) in &cfg.certs {
        w.sec.certs.insert(
            name.clone(),
            Certificate {
                name: name.clone(),
                subject: c.subject.clone(),
                issuer: c.issuer.clone(),
                not_before_s: c.not_before_s,
                not_after_s: c.not_after_s,
                revoked: c.revoked,
                vo: c.vo.clone(),
                proxy_of: None,
            },
        );
    }
    for (name, p) in &cfg.policies {
        let mut policy = AccessPolicy {
            work_cap: p.work_cap,
            ..Default::default()
        };
        for (vo, ops) in &p.grants {
            policy
                .grants
                .entry(vo.clone())
                .or_default()
                .extend(ops.iter().cloned());
        }
        policy.attack_ops = p.attack_ops.iter().cloned().collect();
        w.sec.policies.insert(CompId::new(name), policy);
    }
    for (name, rules) in &cfg.filters {
        let rules = rules
            .iter()
            .map(|r| FilterRule {
                action: if r.allow { FilterAction::Allow } else { FilterAction::Deny },
                src_prefix: r.src_prefix.clone(),
                op: r.op.clone(),
            })
            .collect();
        w.sec.filters.insert(CompId::new(name), rules);
    }

    // The scheduler watches every component.
    faults::subscribe(&mut w, None);

    // Fault profiles and storms.
    for f in cfg.faults.values() {
        let kind = match f.kind.as_str() {
            "crash" => FaultKind::Crash,
            "omission" => FaultKind::Omission { loss_fraction: f.loss_fraction.unwrap() },
            "timing" => FaultKind::Timing { extra: f.extra.clone().unwrap() },
            "byzantine" => FaultKind::Byzantine,
            _ => unreachable!("validated"),
        };
        faults::attach_profile(
            &mut w,
            &mut eng,
            FaultProfile {
                component: CompId::new(&f.component),
                kind,
                interarrival: f.mttf.clone(),
                repair: f.mttr.clone(),
            },
        )
        .map_err(|e| ScenarioError::Validate(e.to_string()))?;
    }
    for s in cfg.storms.values() {
        faults::byzantine_storm(
            &mut w,
            &mut eng,
            StormCfg {
                components: s.components.iter().map(CompId::new).collect(),
                rate_per_s: s.rate_per_s,
                start_s: s.start_s,
                end_s: s.end_s,
            },
        );
    }

    // Workload.
    for (name, a) in &cfg.activities {
        let template = JobTemplate {
            work: a.work,
            input_bytes: a.input_bytes,
            output_bytes: a.output_bytes,
            timeout: a.timeout_s,
            vo: a.vo.clone(),
            credential: a.credential.clone(),
            submit_center: a.submit_center.clone().map(CompId::new),
            // A dos activity names its server via `target`; job-producing
            // patterns use `db_server`.
            db_op: a.db_server.as_ref().or(a.target.as_ref()).map(|s| DbOp {
                server: CompId::new(s),
                kind: a.db_op.clone(),
                size_bytes: a.db_size_bytes,
                request_bytes: a.db_request_bytes,
            }),
            replicas: a.replicas as usize,
            checkpoint_s: a.checkpoint_s,
        };
        let pattern = match a.pattern.as_str() {
            "batch" => Pattern::Batch,
            "poisson" => Pattern::Poisson,
            "dos" => Pattern::Dos,
            _ => unreachable!("validated"),
        };
        workload::generate(
            &mut w,
            &mut eng,
            ActivityCfg {
                name: name.clone(),
                pattern,
                count: a.count,
                rate_per_s: a.rate_per_s,
                start_s: a.start_s,
                end_s: if a.end_s > 0.0 { a.end_s } else { horizon },
                template,
                sources: a.sources.iter().map(CompId::new).collect(),
                target: a.target.as_ref().map(CompId::new),
            },
        )
        .map_err(|e| ScenarioError::Validate(e.to_string()))?;
    }
    for (name, d) in &cfg.dags {
        let dag = dag_of(name, d);
        w.sched.pending_dags.insert(name.clone(), dag);
        eng.schedule(
            SimTime::new(d.submit_s),
            World::scheduler_id(),
            sched_target(),
            EventKind::User("dag-submit"),
            Ev::DagSubmit { dag: name.clone() },
        )
        .unwrap();
    }
    Ok((w, eng))
}

/// Runs a scenario to its horizon and assembles the report.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    run_id: &str,
    ov: &RunOverrides,
) -> Result<RunOutput, ScenarioError> {
    let (mut w, mut eng) = build(cfg, ov)?;
    let horizon = w.cfg.horizon;
    eng.run_until(&mut w, SimTime::new(horizon));
    let mean_transfer_time = if w.net.completed_durations.is_empty() {
        0.0
    } else {
        w.net.completed_durations.iter().sum::<f64>() / w.net.completed_durations.len() as f64
    };
    let report = RunReport {
        run_id: run_id.to_string(),
        seed: eng.root_seed(),
        horizon,
        submitted: w.sched.submitted,
        finished: w.sched.finished,
        failed: w.sched.failed,
        rescheduled: w.sched.rescheduled,
        lost_bytes: w.metrics.counter_total("lost_bytes"),
        mean_transfer_time,
        attacks_detected: w.sec.attacks_detected,
    };
    let trace = eng.into_trace();
    Ok(RunOutput { world: w, trace, report })
}

/// Writes trace.csv, metrics.csv and report.csv into `dir`.
pub fn export(dir: &Path, out: &RunOutput) -> Result<(), ScenarioError> {
    std::fs::create_dir_all(dir)?;
    let mut f = BufWriter::new(File::create(dir.join("trace.csv"))?);
    out.trace.write_csv(&mut f)?;
    let mut f = BufWriter::new(File::create(dir.join("metrics.csv"))?);
    write_metrics_csv(
        &mut f,
        &out.report.run_id,
        out.report.seed,
        &out.world.metrics,
        out.report.horizon,
    )?;
    let mut f = BufWriter::new(File::create(dir.join("report.csv"))?);
    write_report_csv(&mut f, &out.report)?;
    Ok(())
}
