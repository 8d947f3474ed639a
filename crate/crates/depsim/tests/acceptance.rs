//! Acceptance gate: one test per criterion, each ending in a single
//! `ACCEPTANCE n (<name>): PASS` line. Every test is self-contained and
//! deterministic; run with `--nocapture` to see the lines.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use depsim::dependsched::{quorum_decide, Policy};
use depsim::engine::{CompId, Dist, Engine, SeededRng, SimTime, Target, TraceRow};
use depsim::resources::{self, CompState, Link, RegionalCenter, Router, Topology, TransferCtx};
use depsim::scenario::{self, RunOverrides, RunOutput};
use depsim::world::{RunOptions, World};
use depsim::ScenarioConfig;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn load(name: &str) -> ScenarioConfig {
    depsim::load_scenario(&scenario_path(name)).expect(name)
}

fn overrides() -> RunOverrides {
    RunOverrides { seed: None, until: None, policy: None, no_reschedule: false }
}

fn run(cfg: &ScenarioConfig, id: &str, ov: &RunOverrides) -> RunOutput {
    scenario::run_scenario(cfg, id, ov).expect(id)
}

// ---------------------------------------------------------------------------
// 1. Determinism: same scenario + same seed => byte-identical CSV outputs.

#[test]
fn c1_determinism() {
    let names = [
        "minimal.scn",
        "net-faults-4centers.scn",
        "dag-ft.scn",
        "vo-attack.scn",
    ];
    for name in names {
        let cfg = load(name);
        let ov = RunOverrides { seed: Some(42), ..overrides() };
        let mut outputs = Vec::new();
        for _ in 0..2 {
            let out = run(&cfg, name, &ov);
            let dir = tempfile::tempdir().unwrap();
            scenario::export(dir.path(), &out).unwrap();
            let files: Vec<Vec<u8>> = ["trace.csv", "metrics.csv", "report.csv"]
                .iter()
                .map(|f| std::fs::read(dir.path().join(f)).unwrap())
                .collect();
            outputs.push(files);
        }
        assert_eq!(outputs[0], outputs[1], "{name}: runs differ at seed 42");
        assert!(!outputs[0][0].is_empty());
    }
    println!("ACCEPTANCE 1 (determinism): PASS");
}

// ---------------------------------------------------------------------------
// 2. Fair-share oracle: 1-3 flow topologies vs closed-form piecewise
//    completion times, 1e-9 relative error.

fn hub(topo: &mut Topology, name: &str) {
    let id = CompId::new(name);
    let lan = CompId::new(format!("lan.{name}"));
    topo.links.insert(
        lan.clone(),
        Link {
            id: lan.clone(),
            endpoints: (id.clone(), id.clone()),
            capacity_bps: 1e12,
            latency_s: 0.0,
            state: CompState::Operational,
            loss_fraction: 0.0,
        },
    );
    topo.centers.insert(
        id.clone(),
        RegionalCenter { id, pus: vec![], dbs: vec![], lan },
    );
}

fn router(topo: &mut Topology, name: &str) {
    let id = CompId::new(name);
    topo.routers.insert(id.clone(), Router { id, state: CompState::Operational });
}

fn wire(topo: &mut Topology, id: &str, a: &str, b: &str, cap: f64, lat: f64) {
    let id = CompId::new(id);
    topo.links.insert(
        id.clone(),
        Link {
            id,
            endpoints: (CompId::new(a), CompId::new(b)),
            capacity_bps: cap,
            latency_s: lat,
            state: CompState::Operational,
            loss_fraction: 0.0,
        },
    );
}

/// Starts each (src, dst, bytes) flow at its start time and returns the
/// completion times in flow order.
fn run_flows(topo: Topology, flows: &[(&str, &str, f64, f64)]) -> Vec<f64> {
    let mut w = World::new(RunOptions::default(), 1);
    w.topology = topo;
    let mut eng: Engine<World> = Engine::new(1);
    let mut tids = Vec::new();
    for &(src, dst, bytes, start) in flows {
        eng.run_until(&mut w, SimTime::new(start));
        let dst_id = CompId::new(dst);
        let tid = resources::start_transfer(
            &mut w,
            &mut eng,
            &CompId::new(src),
            &dst_id,
            bytes,
            Target::Component(dst_id.clone()),
            TransferCtx::Plain,
        )
        .unwrap();
        tids.push(tid);
    }
    eng.run_until(&mut w, SimTime::new(1e6));
    let trace = eng.trace();
    tids.iter()
        .map(|tid| {
            trace
                .rows()
                .iter()
                .find(|r| r.kind == "transfer-done" && r.info == format!("t{}", tid.0))
                .map(|r| r.time.seconds())
                .unwrap_or(f64::NAN)
        })
        .collect()
}

fn assert_close(name: &str, got: f64, want: f64) {
    let tol = 1e-9 * want.abs().max(1.0);
    assert!(
        (got - want).abs() <= tol,
        "{name}: got {got}, want {want}"
    );
}

#[test]
fn c2_fair_share_oracle() {
    // Direct a--b link.
    let ab = |cap: f64, lat: f64| {
        let mut t = Topology::default();
        hub(&mut t, "a");
        hub(&mut t, "b");
        wire(&mut t, "wan.ab", "a", "b", cap, lat);
        t
    };
    // a--r--b via a router, per-segment capacity/latency.
    let arb = |c1: f64, l1: f64, c2: f64, l2: f64| {
        let mut t = Topology::default();
        hub(&mut t, "a");
        hub(&mut t, "b");
        router(&mut t, "r");
        wire(&mut t, "wan.ar", "a", "r", c1, l1);
        wire(&mut t, "wan.rb", "r", "b", c2, l2);
        t
    };

    // 1. Single flow, one link: T = L + 8B/C.
    let got = run_flows(ab(1e8, 0.01), &[("a", "b", 1e6, 0.0)]);
    assert_close("single-link", got[0], 0.01 + 8e6 / 1e8);

    // 2. Single flow, two links in series: latency sums, min capacity rules.
    let got = run_flows(arb(1e8, 0.01, 5e7, 0.02), &[("a", "b", 1e6, 0.0)]);
    assert_close("two-link-serial", got[0], 0.03 + 8e6 / 5e7);

    // 3. Two equal flows, same link, same start: each gets C/2.
    let got = run_flows(
        ab(1e8, 0.0),
        &[("a", "b", 1e6, 0.0), ("a", "b", 1e6, 0.0)],
    );
    assert_close("two-equal-a", got[0], 16e6 / 1e8);
    assert_close("two-equal-b", got[1], 16e6 / 1e8);

    // 4. Two flows, different sizes: the smaller finishes at 2*8B1/C; the
    //    larger keeps the link fully used, so it ends at 8(B1+B2)/C.
    let got = run_flows(
        ab(1e8, 0.0),
        &[("a", "b", 1e6, 0.0), ("a", "b", 3e6, 0.0)],
    );
    assert_close("two-sizes-small", got[0], 16e6 / 1e8);
    assert_close("two-sizes-large", got[1], 8.0 * 4e6 / 1e8);

    // 5. Staggered start: f1 alone until t0, then both at C/2, then f2
    //    alone at C after f1 completes.
    let got = run_flows(
        ab(1e8, 0.0),
        &[("a", "b", 2e6, 0.0), ("a", "b", 2e6, 0.05)],
    );
    // f1: 5e6 bits by 0.05, then 11e6 bits at 5e7 -> 0.27.
    assert_close("staggered-f1", got[0], 0.27);
    // f2: 11e6 bits by 0.27, then 5e6 bits at 1e8 -> 0.32.
    assert_close("staggered-f2", got[1], 0.32);

    // 6. Three equal flows: each gets C/3, all finish together.
    let got = run_flows(
        ab(1.2e8, 0.0),
        &[("a", "b", 1e6, 0.0), ("a", "b", 1e6, 0.0), ("a", "b", 1e6, 0.0)],
    );
    for (i, g) in got.iter().enumerate() {
        assert_close(&format!("three-way-{i}"), *g, 8e6 / 4e7);
    }

    // 7. Disjoint links: flows do not interact at all.
    let mut t = Topology::default();
    for c in ["a", "b", "c", "d"] {
        hub(&mut t, c);
    }
    wire(&mut t, "wan.ab", "a", "b", 1e8, 0.01);
    wire(&mut t, "wan.cd", "c", "d", 5e7, 0.02);
    let got = run_flows(t, &[("a", "b", 1e6, 0.0), ("c", "d", 2e6, 0.0)]);
    assert_close("disjoint-ab", got[0], 0.01 + 8e6 / 1e8);
    assert_close("disjoint-cd", got[1], 0.02 + 16e6 / 5e7);

    // 8. Shared last hop: a->b and c->b split the r--b link evenly.
    let mut t = Topology::default();
    for c in ["a", "b", "c"] {
        hub(&mut t, c);
    }
    router(&mut t, "r");
    wire(&mut t, "wan.ar", "a", "r", 1e8, 0.0);
    wire(&mut t, "wan.cr", "c", "r", 1e8, 0.0);
    wire(&mut t, "wan.rb", "r", "b", 1e8, 0.0);
    let got = run_flows(t, &[("a", "b", 1e6, 0.0), ("c", "b", 1e6, 0.0)]);
    assert_close("shared-hop-a", got[0], 8e6 / 5e7);
    assert_close("shared-hop-c", got[1], 8e6 / 5e7);

    // 9. Asymmetric bottlenecks: f1 limited by its 4e7 access link even
    //    while sharing; f2 limited by the 5e7 fair share, then f2 finishes
    //    and f1's own access link is still the bottleneck.
    let mut t = Topology::default();
    for c in ["a", "b", "c"] {
        hub(&mut t, c);
    }
    router(&mut t, "r");
    wire(&mut t, "wan.ar", "a", "r", 4e7, 0.0);
    wire(&mut t, "wan.cr", "c", "r", 1e8, 0.0);
    wire(&mut t, "wan.rb", "r", "b", 1e8, 0.0);
    let got = run_flows(t, &[("a", "b", 1e6, 0.0), ("c", "b", 1e6, 0.0)]);
    assert_close("asym-f1", got[0], 8e6 / 4e7);
    assert_close("asym-f2", got[1], 8e6 / 5e7);

    // 10. Latency-dominated: zero payload completes after the path latency.
    let got = run_flows(arb(1e8, 0.04, 1e8, 0.01), &[("a", "b", 0.0, 0.0)]);
    assert_close("latency-only", got[0], 0.05);

    // 11. Sequential flows never interact: f2 starts after f1 finished.
    let got = run_flows(
        ab(1e8, 0.0),
        &[("a", "b", 1e6, 0.0), ("a", "b", 1e6, 0.5)],
    );
    assert_close("sequential-f1", got[0], 0.08);
    assert_close("sequential-f2", got[1], 0.58);

    // 12. Two-hop paths sharing only the middle link.
    let mut t = Topology::default();
    for c in ["a", "b", "c", "d"] {
        hub(&mut t, c);
    }
    router(&mut t, "r1");
    router(&mut t, "r2");
    wire(&mut t, "wan.ar1", "a", "r1", 2e8, 0.0);
    wire(&mut t, "wan.cr1", "c", "r1", 2e8, 0.0);
    wire(&mut t, "wan.r1r2", "r1", "r2", 1e8, 0.0);
    wire(&mut t, "wan.br2", "b", "r2", 2e8, 0.0);
    wire(&mut t, "wan.dr2", "d", "r2", 2e8, 0.0);
    let got = run_flows(t, &[("a", "b", 1e6, 0.0), ("c", "d", 1e6, 0.0)]);
    assert_close("middle-share-f1", got[0], 8e6 / 5e7);
    assert_close("middle-share-f2", got[1], 8e6 / 5e7);

    println!("ACCEPTANCE 2 (fair-share oracle): PASS");
}

// ---------------------------------------------------------------------------
// 3. Transient vs permanent fault curves.

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

#[test]
fn c3_fault_curves() {
    // (a) Transient omission faults with unlimited retries: everything is
    //     eventually delivered, and delivery gets slower as loss grows.
    let base = load("net-faults-4centers.scn");
    let mut level_means = Vec::new();
    for loss in [0.1, 0.3, 0.5] {
        let mut cfg = base.clone();
        cfg.engine.horizon_s = 600.0;
        cfg.engine.transfer_max_retries = None;
        cfg.faults.retain(|k, _| k == "lossy-backbone");
        cfg.faults.get_mut("lossy-backbone").unwrap().loss_fraction = Some(loss);
        let mut means = Vec::new();
        for seed in 0..20u64 {
            let out = run(
                &cfg,
                "transient",
                &RunOverrides { seed: Some(1000 + seed), ..overrides() },
            );
            assert_eq!(
                out.report.finished, out.report.submitted,
                "loss={loss} seed={seed}: not all jobs finished"
            );
            let delivered = out.world.net.delivered_bytes / out.world.net.requested_bytes;
            assert!(
                (delivered - 1.0).abs() < 1e-9,
                "loss={loss} seed={seed}: delivered/requested = {delivered}"
            );
            means.push(out.report.mean_transfer_time);
        }
        level_means.push(means.iter().sum::<f64>() / means.len() as f64);
    }
    assert!(
        level_means[0] < level_means[1] && level_means[1] < level_means[2],
        "mean transfer time not increasing with loss: {level_means:?}"
    );

    // (b) Permanent crashes: the expected undelivered volume grows with the
    //     per-component fault probability p over the horizon T, where
    //     mttf = -T / ln(1-p).
    let horizon = base.engine.horizon_s;
    let levels = [0.1, 0.2, 0.3, 0.4, 0.5];
    let mut lost_means = Vec::new();
    for p in levels {
        let mut cfg = base.clone();
        cfg.faults.clear();
        let mean = -horizon / (1.0f64 - p).ln();
        for comp in ["wan.r1r2", "r1", "r2", "wan.c1r1", "wan.c3r2"] {
            cfg.faults.insert(
                format!("perm-{comp}"),
                depsim::scenario::FaultCfg {
                    component: comp.to_string(),
                    kind: "crash".to_string(),
                    mttf: Dist::Exponential { mean },
                    mttr: None,
                    loss_fraction: None,
                    extra: None,
                },
            );
        }
        let mut losts = Vec::new();
        for seed in 0..20u64 {
            let out = run(
                &cfg,
                "permanent",
                &RunOverrides { seed: Some(2000 + seed), ..overrides() },
            );
            losts.push(out.world.net.requested_bytes - out.world.net.delivered_bytes);
        }
        lost_means.push(losts.iter().sum::<f64>() / losts.len() as f64);
    }
    let rho = spearman(&[0.1, 0.2, 0.3, 0.4, 0.5], &lost_means);
    assert!(
        rho >= 0.9,
        "lost-bytes level means not rank-correlated with p: rho={rho}, means={lost_means:?}"
    );
    println!("ACCEPTANCE 3 (transient vs permanent fault curves): PASS");
}

// ---------------------------------------------------------------------------
// 4. Finalized vs submitted under crash injection, ETF and MCP.

#[test]
fn c4_finalized_vs_submitted() {
    let mut cfg = load("dag-ft.scn");
    cfg.engine.horizon_s = 400.0;
    cfg.engine.job_max_retries = None;
    cfg.engine.transfer_max_retries = None;
    // Keep every interruption crash-caused so the trace join below is exact.
    for a in cfg.activities.values_mut() {
        a.timeout_s = None;
        a.end_s = 250.0;
    }
    for policy in [Policy::Etf, Policy::Mcp] {
        for seed in [7u64, 11, 23] {
            // Rescheduling on, unlimited retries, one fault-free PU:
            // every submitted job finishes.
            let out = run(
                &cfg,
                "dag-resched",
                &RunOverrides {
                    seed: Some(seed),
                    policy: Some(policy),
                    ..overrides()
                },
            );
            assert_eq!(
                out.report.finished, out.report.submitted,
                "{policy:?} seed={seed}: rescheduling should finish everything"
            );
            assert_eq!(out.report.failed, 0);

            // Rescheduling off: the deficit equals the number of distinct
            // jobs with an interrupt record.
            let out = run(
                &cfg,
                "dag-noresched",
                &RunOverrides {
                    seed: Some(seed),
                    policy: Some(policy),
                    no_reschedule: true,
                    ..overrides()
                },
            );
            let interrupted: BTreeSet<&str> = out
                .trace
                .rows()
                .iter()
                .filter(|r| r.kind == "interrupt")
                .map(|r| r.target.as_str())
                .collect();
            assert!(
                out.report.finished < out.report.submitted,
                "{policy:?} seed={seed}: expected losses without rescheduling"
            );
            assert_eq!(
                out.report.submitted - out.report.finished,
                interrupted.len() as u64,
                "{policy:?} seed={seed}: deficit != interrupted jobs"
            );
        }
    }
    println!("ACCEPTANCE 4 (finalized vs submitted): PASS");
}

// ---------------------------------------------------------------------------
// 5. Attack windows: per-window load strictly above baseline, exact
//    detection count.

#[test]
fn c5_attack_window() {
    let cfg = load("vo-attack.scn");
    let out = run(&cfg, "vo-attack", &overrides());
    let horizon = cfg.engine.horizon_s;
    let conns = out.world.metrics.window_values("connections", "c1.db", horizon);
    let thr = out.world.metrics.window_values("throughput_bps", "c1.db", horizon);
    assert!(!conns.is_empty() && !thr.is_empty());

    let (attack_start, attack_end) = (40.0, 60.0);
    let w = cfg.engine.window_s;
    let baseline = |series: &[(f64, f64)]| {
        let vals: Vec<f64> = series
            .iter()
            .filter(|(t, _)| t + w <= attack_start)
            .map(|(_, v)| *v)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let base_conn = baseline(&conns);
    let base_thr = baseline(&thr);
    for (t, v) in conns.iter().filter(|(t, _)| *t >= attack_start && t + w <= attack_end) {
        assert!(
            *v > base_conn,
            "window at {t}: connections {v} not above baseline {base_conn}"
        );
    }
    for (t, v) in thr.iter().filter(|(t, _)| *t >= attack_start && t + w <= attack_end) {
        assert!(
            *v > base_thr,
            "window at {t}: throughput {v} not above baseline {base_thr}"
        );
    }

    let injected = out
        .trace
        .rows()
        .iter()
        .filter(|r| r.kind == "attack-conn")
        .count() as u64;
    assert!(injected > 0);
    assert_eq!(
        out.report.attacks_detected, injected,
        "every injected attack-classified operation must be detected"
    );
    println!("ACCEPTANCE 5 (attack window): PASS");
}

// ---------------------------------------------------------------------------
// 6. Sampler statistics: KS / chi-square at the 1% level, 1e4 samples.

#[test]
fn c6_sampler_statistics() {
    use statrs::distribution::{ContinuousCDF, DiscreteCDF};

    const N: usize = 10_000;
    let draw = |d: &Dist, key: &str| -> Vec<f64> {
        let mut rng = SeededRng::substream(0xD15C0, key);
        (0..N).map(|_| d.sample(&mut rng).unwrap()).collect()
    };
    // Kolmogorov-Smirnov, 1% asymptotic critical value.
    let ks_crit = 1.628 / (N as f64).sqrt();
    let ks = |mut xs: Vec<f64>, cdf: &dyn Fn(f64) -> f64| -> f64 {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    };

    let xs = draw(&Dist::Exponential { mean: 3.0 }, "exp");
    let d = ks(xs.clone(), &|x| 1.0 - (-x / 3.0).exp());
    assert!(d < ks_crit, "exponential KS {d} >= {ks_crit}");
    // Empirical-mean check: within 3 standard errors of the MTTF.
    let mean = xs.iter().sum::<f64>() / N as f64;
    let se = 3.0 / (N as f64).sqrt();
    assert!((mean - 3.0).abs() < 3.0 * se, "exponential mean {mean}");

    let norm = statrs::distribution::Normal::new(1.0, 2.0).unwrap();
    let d = ks(draw(&Dist::Gaussian { mean: 1.0, sigma: 2.0 }, "gauss"), &|x| norm.cdf(x));
    assert!(d < ks_crit, "gaussian KS {d} >= {ks_crit}");

    let d = ks(draw(&Dist::Uniform { a: 2.0, b: 5.0 }, "unif"), &|x| {
        ((x - 2.0) / 3.0).clamp(0.0, 1.0)
    });
    assert!(d < ks_crit, "uniform KS {d} >= {ks_crit}");

    // Chi-square for the discrete families, merging bins with expected < 5.
    let chi2 = |xs: &[f64], pmf: &dyn Fn(u64) -> f64, support: u64| -> (f64, f64) {
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for &x in xs {
            *counts.entry(x as u64).or_insert(0) += 1;
        }
        let mut stat = 0.0;
        let mut df = 0i64;
        let mut obs_acc = 0.0;
        let mut exp_acc = 0.0;
        for k in 0..=support {
            obs_acc += counts.get(&k).copied().unwrap_or(0) as f64;
            exp_acc += pmf(k) * N as f64;
            if exp_acc >= 5.0 {
                stat += (obs_acc - exp_acc).powi(2) / exp_acc;
                df += 1;
                obs_acc = 0.0;
                exp_acc = 0.0;
            }
        }
        // Tail bin.
        let tail_exp = (N as f64) - (0..=support).map(|k| pmf(k) * N as f64).sum::<f64>() + exp_acc;
        let tail_obs = xs.iter().filter(|&&x| x as u64 > support).count() as f64 + obs_acc;
        if tail_exp >= 5.0 {
            stat += (tail_obs - tail_exp).powi(2) / tail_exp;
            df += 1;
        }
        let crit = statrs::distribution::ChiSquared::new((df - 1) as f64)
            .unwrap()
            .inverse_cdf(0.99);
        (stat, crit)
    };

    let bin = statrs::distribution::Binomial::new(0.3, 20).unwrap();
    let xs = draw(&Dist::Binomial { n: 20, p: 0.3 }, "binom");
    let (stat, crit) = chi2(
        &xs,
        &|k| bin.cdf(k) - if k == 0 { 0.0 } else { bin.cdf(k - 1) },
        20,
    );
    assert!(stat < crit, "binomial chi2 {stat} >= {crit}");

    let poi = statrs::distribution::Poisson::new(4.0).unwrap();
    let xs = draw(&Dist::Poisson { lambda: 4.0 }, "poisson");
    let (stat, crit) = chi2(
        &xs,
        &|k| poi.cdf(k) - if k == 0 { 0.0 } else { poi.cdf(k - 1) },
        30,
    );
    assert!(stat < crit, "poisson chi2 {stat} >= {crit}");

    println!("ACCEPTANCE 6 (sampler statistics): PASS");
}

// ---------------------------------------------------------------------------
// 7. Quorum: with at most floor((k-1)/2) corrupted replicas out of k, the
//    decided value is always the correct one — exhaustively.

#[test]
fn c7_quorum_exhaustive() {
    for k in [1usize, 3, 5] {
        let tolerable = (k - 1) / 2;
        for mask in 0u32..(1 << k) {
            let corrupted = mask.count_ones() as usize;
            if corrupted > tolerable {
                continue;
            }
            // Corrupted replicas may collude (same wrong value) or
            // disagree (distinct wrong values); both must lose.
            for collude in [true, false] {
                let values: Vec<String> = (0..k)
                    .map(|i| {
                        if mask & (1 << i) != 0 {
                            if collude { "bad".to_string() } else { format!("bad{i}") }
                        } else {
                            "good".to_string()
                        }
                    })
                    .collect();
                let refs: Vec<&str> = values.iter().map(|s| s.as_str()).collect();
                assert_eq!(
                    quorum_decide(&refs),
                    Some("good".to_string()),
                    "k={k} mask={mask:b} collude={collude}"
                );
            }
        }
    }
    println!("ACCEPTANCE 7 (quorum): PASS");
}

// ---------------------------------------------------------------------------
// 8. Invariant suite (property tests over random seeds and inputs).

fn down_intervals(rows: &[TraceRow], horizon: f64) -> BTreeMap<String, Vec<(f64, f64)>> {
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut open: BTreeMap<String, f64> = BTreeMap::new();
    for r in rows {
        if r.kind == "fault" && r.target == "crash" {
            open.entry(r.source.clone()).or_insert(r.time.seconds());
        }
        if r.kind == "recovery" && r.target == "crash" {
            if let Some(t0) = open.remove(&r.source) {
                out.entry(r.source.clone()).or_default().push((t0, r.time.seconds()));
            }
        }
    }
    for (comp, t0) in open {
        out.entry(comp).or_default().push((t0, horizon));
    }
    out
}

#[test]
fn c8_invariant_suite() {
    use proptest::prelude::*;
    use proptest::test_runner::{Config, TestRunner};

    let cases = |n: u32| Config { cases: n, ..Config::default() };

    // Event ordering: trace timestamps never go backwards.
    let mut runner = TestRunner::new(cases(8));
    let dag = {
        let mut c = load("dag-ft.scn");
        c.engine.horizon_s = 150.0;
        for a in c.activities.values_mut() {
            a.end_s = 120.0;
        }
        c
    };
    runner
        .run(&any::<u32>(), |seed| {
            let out = run(
                &dag,
                "ordering",
                &RunOverrides { seed: Some(seed as u64), ..overrides() },
            );
            let rows = out.trace.rows();
            for pair in rows.windows(2) {
                prop_assert!(pair[0].time <= pair[1].time, "trace time went backwards");
            }
            Ok(())
        })
        .unwrap();

    // Crash isolation: a crashed processing unit finishes no jobs while it
    // is down.
    let mut runner = TestRunner::new(cases(8));
    runner
        .run(&any::<u32>(), |seed| {
            let out = run(
                &dag,
                "isolation",
                &RunOverrides { seed: Some(seed as u64), ..overrides() },
            );
            let rows = out.trace.rows();
            let down = down_intervals(rows, 150.0);
            for r in rows.iter().filter(|r| r.kind == "finish") {
                if let Some(ivs) = down.get(&r.source) {
                    let t = r.time.seconds();
                    for &(a, b) in ivs {
                        prop_assert!(
                            !(t > a && t < b),
                            "{} finished {} during [{a},{b}]",
                            r.source,
                            r.target
                        );
                    }
                }
            }
            Ok(())
        })
        .unwrap();

    // Monitor ordering: every fault/recovery record is followed, at the
    // same timestamp, by its notifications in subscription order.
    let mut runner = TestRunner::new(cases(8));
    runner
        .run(&(any::<u32>(), 1usize..4), |(seed, extra_subs)| {
            let (mut w, mut eng) = scenario::build(
                &dag,
                &RunOverrides { seed: Some(seed as u64), ..overrides() },
            )
            .unwrap();
            for _ in 0..extra_subs {
                depsim::faults::subscribe(&mut w, None);
            }
            eng.run_until(&mut w, SimTime::new(150.0));
            let trace = eng.trace();
            let rows = trace.rows();
            for (i, r) in rows.iter().enumerate() {
                // Monitor records carry the fault summary in `info`; skip
                // the raw engine event rows that share these kinds.
                if (r.kind != "fault" && r.kind != "recovery")
                    || !r.info.contains("permanent=")
                {
                    continue;
                }
                // Each fault/recovery record is followed (same timestamp,
                // later in the trace) by one notification per subscription,
                // in ascending subscription order.
                let notif: Vec<i64> = rows[i + 1..]
                    .iter()
                    .filter(|n| {
                        n.kind == "notify"
                            && n.target.starts_with("sub")
                            && n.time == r.time
                            && n.source == r.source
                            && n.info == r.info
                    })
                    .map(|n| n.target.trim_start_matches("sub").parse().unwrap())
                    .collect();
                prop_assert!(
                    notif.len() >= 1 + extra_subs,
                    "missing notifications for {} at {}",
                    r.source,
                    r.time.seconds()
                );
                let delivered = &notif[..1 + extra_subs];
                prop_assert!(
                    delivered.windows(2).all(|p| p[0] < p[1]),
                    "notifications out of subscription order: {notif:?}"
                );
            }
            Ok(())
        })
        .unwrap();

    // Watch exclusivity: once a job finished, its timeout watch never
    // fires again.
    let mut runner = TestRunner::new(cases(8));
    runner
        .run(&any::<u32>(), |seed| {
            let out = run(
                &dag,
                "watches",
                &RunOverrides { seed: Some(seed as u64), ..overrides() },
            );
            let rows = out.trace.rows();
            let mut finished_at: BTreeMap<&str, f64> = BTreeMap::new();
            for r in rows.iter().filter(|r| r.kind == "finish") {
                finished_at.insert(r.target.as_str(), r.time.seconds());
            }
            for r in rows.iter().filter(|r| r.kind == "timeout") {
                if let Some(&tf) = finished_at.get(r.target.as_str()) {
                    prop_assert!(
                        r.time.seconds() <= tf,
                        "timeout for {} after it finished",
                        r.target
                    );
                }
            }
            Ok(())
        })
        .unwrap();

    // Checkpoint conservation: snapshots hold 0 <= remaining <= work and
    // never increase for a given job.
    let ckpt = {
        let mut c = dag.clone();
        for a in c.activities.values_mut() {
            a.checkpoint_s = Some(1.0);
        }
        c
    };
    let mut runner = TestRunner::new(cases(8));
    runner
        .run(&any::<u32>(), |seed| {
            let out = run(
                &ckpt,
                "checkpoints",
                &RunOverrides { seed: Some(seed as u64), ..overrides() },
            );
            let mut last: BTreeMap<&str, f64> = BTreeMap::new();
            let mut saw = false;
            for r in out.trace.rows().iter().filter(|r| r.kind == "snapshot") {
                saw = true;
                let rem: f64 = r.info.trim_start_matches("remaining=").parse().unwrap();
                let work = out.world.jobs.get(&r.target).work;
                prop_assert!(rem >= -1e-9 && rem <= work + 1e-9, "snapshot out of range");
                if let Some(&prev) = last.get(r.target.as_str()) {
                    prop_assert!(rem <= prev + 1e-9, "remaining work grew for {}", r.target);
                }
                last.insert(r.target.as_str(), rem);
            }
            prop_assert!(saw, "no snapshots recorded");
            Ok(())
        })
        .unwrap();

    // Authorize purity: same inputs, same decision, no hidden state.
    use depsim::security::{authorize, AccessPolicy, Certificate};
    let mut runner = TestRunner::new(cases(256));
    runner
        .run(
            &(
                proptest::option::of("[a-c]{1,3}"),
                proptest::collection::btree_set("[a-c]{1,3}", 0..3),
                proptest::collection::btree_set("[a-c]{1,3}", 0..3),
                "[a-c]{1,3}",
                proptest::option::of(0.0..100.0f64),
                proptest::option::of(0.0..100.0f64),
            ),
            |(cert_vo, ops, attack_ops, op, cap, work)| {
                let cert = Certificate {
                    name: "u".into(),
                    subject: "u".into(),
                    issuer: "ca".into(),
                    not_before_s: 0.0,
                    not_after_s: 1e9,
                    revoked: false,
                    vo: cert_vo,
                    proxy_of: None,
                };
                let policy = AccessPolicy {
                    grants: BTreeMap::from([("v".to_string(), ops)]),
                    attack_ops,
                    work_cap: cap,
                };
                let a = authorize(Some(&cert), Some(&policy), &op, work);
                let b = authorize(Some(&cert), Some(&policy), &op, work);
                prop_assert_eq!(a, b, "authorize is not a pure function");
                Ok(())
            },
        )
        .unwrap();

    // Filter first-match: the evaluator agrees with a naive reference.
    use depsim::security::{filter_eval, FilterAction, FilterRule};
    let rule = (
        any::<bool>(),
        proptest::option::of("[a-b]{1,2}"),
        proptest::option::of("[a-b]{1,2}"),
    )
        .prop_map(|(allow, src, op)| FilterRule {
            action: if allow { FilterAction::Allow } else { FilterAction::Deny },
            src_prefix: src,
            op,
        });
    let mut runner = TestRunner::new(cases(256));
    runner
        .run(
            &(proptest::collection::vec(rule, 0..6), "[a-b]{1,3}", "[a-b]{1,2}"),
            |(rules, src, op)| {
                let src_id = CompId::new(&src);
                let got = filter_eval(&rules, &src_id, &op);
                let mut want = FilterAction::Allow;
                for r in &rules {
                    let src_ok = r
                        .src_prefix
                        .as_ref()
                        .map(|p| src.starts_with(p.as_str()))
                        .unwrap_or(true);
                    let op_ok = r.op.as_ref().map(|o| o == &op).unwrap_or(true);
                    if src_ok && op_ok {
                        want = r.action;
                        break;
                    }
                }
                prop_assert_eq!(got, want, "filter first-match mismatch");
                Ok(())
            },
        )
        .unwrap();

    println!("ACCEPTANCE 8 (invariant suite): PASS");
}
