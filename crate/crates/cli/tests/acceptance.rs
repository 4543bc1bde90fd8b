//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line and then
//! asserts; criterion 10 is report-only and prints `WARN` instead of failing.
//!
//! Run with `cargo test -p msflow-cli --test acceptance -- --nocapture` to
//! see the lines.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use msflow_cli::{execute, Command, Options};
use msflow_core::audit::{
    assumption_record, audit_assumptions, audit_convergence, audit_energy_identity, audit_gradient_bound,
    audit_mass_law, audit_oscillation_series, audit_ut_extremes, AssumptionInput, TranslatorComparison,
};
use msflow_core::geometry::{audit_frenet, Quadratic};
use msflow_core::mesh::generate_mesh_seeded;
use msflow_core::{
    evolve_observed, solve_regularized, solve_translator, AngleProfile, AuditContext, FlowConfig, FlowProblem,
    FlowTrajectory, Forcing, P1Space, ScalarField, SupportCurve, TranslatorOptions, TranslatorSolution, Verdict,
};

const ALPHA: f64 = 2.0;
const H: f64 = 0.05;
const DT: f64 = 1e-3;
const T_LONG: f64 = 20.0;
const SEED: u64 = 0;

fn report(n: u32, ok: bool, detail: &str) {
    println!("criterion {n:>2}: {} {detail}", if ok { "PASS" } else { "FAIL" });
}

fn sci(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Closed-form speed `C = |dOmega| cos(alpha) / |Omega|` on the unit disk.
fn exact_speed() -> f64 {
    2.0 * ALPHA.cos()
}

/// Spherical cap over the unit disk meeting the rim at angle `alpha`.
fn cap(r: f64) -> f64 {
    let c = ALPHA.cos();
    -(1.0 - r * r * c * c).sqrt() / c
}

fn cap_error(space: &P1Space, w: &ScalarField) -> f64 {
    let oracle: Vec<f64> = space.mesh().nodes.iter().map(|p| cap(p[0].hypot(p[1]))).collect();
    let diff: Vec<f64> = w.values.iter().zip(&oracle).map(|(a, b)| a - b).collect();
    let shift = space.integrate(&diff) / space.total_mass();
    diff.iter().fold(0.0f64, |m, d| m.max((d - shift).abs()))
}

fn disk_space(h: f64) -> P1Space {
    let curve = SupportCurve::circle(1.0).unwrap();
    P1Space::new(generate_mesh_seeded(&curve, h, SEED).unwrap())
}

fn long_run() -> FlowConfig {
    FlowConfig { dt: DT, t_end: T_LONG, stagnation_threshold: None, snapshot_every: 0, ..FlowConfig::default() }
}

/// The cap translator at the acceptance resolution, with its solve time.
struct CapFixture {
    space: P1Space,
    alpha: AngleProfile,
    translator: TranslatorSolution,
    elapsed: Duration,
}

fn cap_fixture() -> &'static CapFixture {
    static CELL: OnceLock<CapFixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let space = disk_space(H);
        let alpha = AngleProfile::constant(ALPHA).unwrap();
        let translator = solve_translator(&space, &alpha, &Forcing::Zero, &TranslatorOptions::default()).unwrap();
        CapFixture { space, alpha, translator, elapsed: start.elapsed() }
    })
}

struct Run {
    traj: FlowTrajectory,
    elapsed: Duration,
}

fn flow_from(space: &P1Space, alpha: &AngleProfile, u0: &ScalarField, observe: &mut dyn FnMut(&msflow_core::flow::Stepper)) -> Run {
    let start = Instant::now();
    let problem = FlowProblem::new(space, alpha, &Forcing::Zero);
    let traj = evolve_observed(&problem, u0, &long_run(), observe).unwrap();
    Run { traj, elapsed: start.elapsed() }
}

/// `u0 = 0` on the cap setup, tracked against the translator every step.
fn zero_start() -> &'static (Run, TranslatorComparison) {
    static CELL: OnceLock<(Run, TranslatorComparison)> = OnceLock::new();
    CELL.get_or_init(|| {
        let fx = cap_fixture();
        let mut cmp = TranslatorComparison::default();
        let u0 = ScalarField::constant(fx.space.node_count(), 0.0);
        let run = flow_from(&fx.space, &fx.alpha, &u0, &mut |st| {
            cmp.push(&fx.space, st.time(), st.u(), &fx.translator);
        });
        (run, cmp)
    })
}

fn translator_start() -> &'static Run {
    static CELL: OnceLock<Run> = OnceLock::new();
    CELL.get_or_init(|| {
        let fx = cap_fixture();
        flow_from(&fx.space, &fx.alpha, &fx.translator.w, &mut |_| {})
    })
}

fn parabola_start() -> &'static Run {
    static CELL: OnceLock<Run> = OnceLock::new();
    CELL.get_or_init(|| {
        let fx = cap_fixture();
        let u0 = ScalarField::from_fn(fx.space.mesh(), |x| x[0] * x[0]);
        flow_from(&fx.space, &fx.alpha, &u0, &mut |_| {})
    })
}

/// Right contact angle, tilted plane start: decays to a constant.
fn decaying() -> &'static (P1Space, Run) {
    static CELL: OnceLock<(P1Space, Run)> = OnceLock::new();
    CELL.get_or_init(|| {
        let space = disk_space(H);
        let alpha = AngleProfile::constant(FRAC_PI_2).unwrap();
        let u0 = ScalarField::from_fn(space.mesh(), |x| x[0]);
        let run = flow_from(&space, &alpha, &u0, &mut |_| {});
        (space, run)
    })
}

fn ctx(run: &str) -> AuditContext {
    AuditContext::new(run, H, Some(DT))
}

#[test]
fn criterion_01_spherical_cap_translator() {
    let fx = cap_fixture();
    let t = &fx.translator;
    let speed_err = (t.speed - exact_speed()).abs();
    let shape_err = cap_error(&fx.space, &t.w);
    let identity = (t.speed - t.compatibility_speed).abs();
    let ok = speed_err <= 5e-3 && shape_err <= 5e-3 && identity <= 1e-8 && fx.elapsed <= Duration::from_secs(60);
    report(
        1,
        ok,
        &format!(
            "C={:.7} |C-C*|={speed_err:.2e} |w-w_cap|={shape_err:.2e} |C_mult-C_compat|={identity:.1e} time={:.2}s",
            t.speed,
            fx.elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_02_refinement_order() {
    let alpha = AngleProfile::constant(ALPHA).unwrap();
    let errors: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&h| {
            let space = disk_space(h);
            let t = solve_translator(&space, &alpha, &Forcing::Zero, &TranslatorOptions::default()).unwrap();
            cap_error(&space, &t.w)
        })
        .collect();
    let ratios: Vec<f64> = errors.windows(2).map(|e| e[0] / e[1]).collect();
    let ok = ratios.iter().all(|r| *r >= 1.8);
    report(2, ok, &format!("errors={} ratios={ratios:.2?}", sci(&errors)));
    assert!(ok);
}

#[test]
fn criterion_03_gradient_bound() {
    let fx = cap_fixture();
    let curve = SupportCurve::circle(1.0).unwrap();
    let c = exact_speed();
    let rep = audit_assumptions(&curve, &fx.alpha, &Forcing::Zero, AssumptionInput::Speed(c));
    // k = 1, alpha constant, H = 0 on the unit disk
    let delta0 = 1.0 - c.abs();
    let bound = (1.0 + 1.0 / ALPHA.sin()) / delta0;
    let sup_v_oracle = 1.0 / ALPHA.sin();
    let ctx = AuditContext::new("translator", H, None);
    let record = audit_gradient_bound(fx.translator.sup_v, &rep, &ctx);
    let ok = (fx.translator.sup_v / sup_v_oracle - 1.0).abs() <= 0.02
        && (rep.delta0 - delta0).abs() <= 1e-6
        && (rep.gradient_bound - bound).abs() <= 1e-6
        && (rep.delta0 - 0.16771).abs() <= 5e-6
        && (rep.gradient_bound - 12.52).abs() <= 5e-3
        && assumption_record(&rep, &ctx).verdict == Verdict::Pass
        && record.verdict == Verdict::Pass;
    report(
        3,
        ok,
        &format!(
            "supV={:.5} (cap {sup_v_oracle:.5}) delta0={:.6} B={:.4} audit={:?}",
            fx.translator.sup_v, rep.delta0, rep.gradient_bound, record.verdict
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_04_flow_convergence() {
    let fx = cap_fixture();
    let (run, cmp) = zero_start();
    let u = &run.traj.last().u;
    let t_end = run.traj.last().t;
    let c = fx.translator.speed;
    // independent recomputation of ||u - C t - w - kappa||
    let e: Vec<f64> = u.values.iter().zip(&fx.translator.w.values).map(|(u, w)| u - c * t_end - w).collect();
    let kappa = fx.space.integrate(&e) / fx.space.total_mass();
    let distance = e.iter().fold(0.0f64, |m, x| m.max((x - kappa).abs()));
    let osc = audit_oscillation_series(&cmp.times, &cmp.oscillation, &ctx("flow"));
    let conv = audit_convergence(cmp, c, &ctx("flow"));
    let growth = conv.details["c3_growth"];
    let ok = (t_end - T_LONG).abs() < 1e-9
        && distance <= 1e-2
        && osc.passed()
        && conv.passed()
        && growth <= 1e-3
        && run.elapsed <= Duration::from_secs(300);
    report(
        4,
        ok,
        &format!(
            "dist={distance:.2e} osc_increase={:.1e} violations={} c3={:.6} c3_growth={growth:.1e} time={:.2}s",
            osc.measured,
            osc.details["violations"],
            conv.details["c3"],
            run.elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_05_ut_maximum_principle() {
    let run = parabola_start();
    let rows = &run.traj.monitors;
    let (lo1, hi1) = (rows[1].min_ut.unwrap(), rows[1].max_ut.unwrap());
    let slack = 0.05 * (hi1 - lo1) + 10.0 * (DT + H * H);
    let lo = rows[1..].iter().filter_map(|r| r.min_ut).fold(f64::INFINITY, f64::min);
    let hi = rows[1..].iter().filter_map(|r| r.max_ut).fold(f64::NEG_INFINITY, f64::max);
    let record = audit_ut_extremes(&run.traj, &ctx("parabola"));
    let ok = lo >= lo1 - slack && hi <= hi1 + slack && record.passed();
    report(5, ok, &format!("step1=[{lo1:.4}, {hi1:.4}] run=[{lo:.4}, {hi:.4}] slack={slack:.3}"));
    assert!(ok);
}

fn energy_ratio(traj: &FlowTrajectory) -> (f64, f64, f64) {
    let rows = &traj.monitors;
    let dissipated: f64 = rows[1..].iter().map(|r| r.dissipation * traj.dt).sum();
    let mismatch = (rows.last().unwrap().energy - rows[0].energy + dissipated).abs();
    (mismatch / dissipated, dissipated, rows.last().unwrap().dissipation)
}

#[test]
fn criterion_06_energy_identity() {
    let tr = translator_start();
    let (_, dec) = decaying();
    let (r_tr, _, rate) = energy_ratio(&tr.traj);
    let (r_dec, diss_dec, _) = energy_ratio(&dec.traj);
    let rate_oracle = exact_speed().powi(2) * PI;
    let a_tr = audit_energy_identity(&tr.traj, &Forcing::Zero, 0, &ctx("translator")).unwrap();
    let a_dec = audit_energy_identity(&dec.traj, &Forcing::Zero, 0, &ctx("decay")).unwrap();
    let ok = r_tr <= 0.02
        && r_dec <= 0.02
        && (rate / 2.176 - 1.0).abs() <= 0.02
        && (rate / rate_oracle - 1.0).abs() <= 0.02
        && a_tr.passed()
        && a_dec.passed();
    report(
        6,
        ok,
        &format!(
            "translator run: mismatch/dissipation={r_tr:.2e} rate={rate:.4} (C^2|Omega|={rate_oracle:.4}); decay run: {r_dec:.2e} of {diss_dec:.3}"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_07_mass_law() {
    let fx = cap_fixture();
    let (dec_space, dec) = decaying();
    let runs: [(&str, &P1Space, &AngleProfile, &FlowTrajectory); 4] = [
        ("translator", &fx.space, &fx.alpha, &translator_start().traj),
        ("zero", &fx.space, &fx.alpha, &zero_start().0.traj),
        ("parabola", &fx.space, &fx.alpha, &parabola_start().traj),
        ("decay", dec_space, &AngleProfile::constant(FRAC_PI_2).unwrap(), &dec.traj),
    ];
    let mut worst = 0.0f64;
    let mut ok = true;
    for (name, space, alpha, traj) in runs {
        // rate from the boundary data alone: sum over edges of len cos(alpha)
        let rate: f64 = space.mesh().boundary_edges.iter().map(|e| e.length * alpha.cos_value(e.theta_mid)).sum();
        let m0 = traj.monitors[0].mass;
        // relative to the size of u0, so a zero-mean start is not 0/0
        let abs_u0: Vec<f64> = traj.snapshots[0].u.values.iter().map(|x| x.abs()).collect();
        let size = space.integrate(&abs_u0);
        for r in &traj.monitors {
            let predicted = r.t * rate;
            let scale = size.max(predicted.abs()).max(r.mass.abs()).max(1e-300);
            worst = worst.max(((r.mass - m0) - predicted).abs() / scale);
        }
        ok &= audit_mass_law(traj, space, &ctx(name)).passed();
    }
    ok &= worst <= 1e-9;
    report(7, ok, &format!("worst relative error {worst:.2e} over 4 runs"));
    assert!(ok);
}

#[test]
fn criterion_08_zero_speed_decay() {
    let (_, dec) = decaying();
    let last = dec.traj.last();
    let rows = &dec.traj.monitors;
    let osc = last.u.oscillation();
    let dissipation = rows.last().unwrap().dissipation;
    let ok = (last.t - T_LONG).abs() < 1e-9 && osc <= 1e-3 && dissipation <= 1e-8;
    report(8, ok, &format!("final osc={osc:.2e} int u_t^2={dissipation:.2e}"));
    assert!(ok);
}

#[test]
fn criterion_09_geometry_identities() {
    let mut ok = true;
    let mut detail = String::new();
    for (name, curve) in
        [("circle", SupportCurve::circle(1.0).unwrap()), ("ellipse", SupportCurve::ellipse(1.5, 1.0).unwrap())]
    {
        let fr = audit_frenet(&curve, 512, &Quadratic::radial_square());
        let turning = curve.integrate_boundary(|th| curve.curvature(th));
        let frenet = fr.tangent_residual.max(fr.normal_residual).max(fr.arc_element_residual);
        let err = (turning - TAU).abs();
        ok &= frenet <= 1e-8 && fr.commutator_residual <= 1e-8 && err <= 1e-8;
        detail.push_str(&format!("{name}: frenet={frenet:.1e} commutator={:.1e} |int k - 2pi|={err:.1e} ", fr.commutator_residual));
    }
    report(9, ok, detail.trim_end());
    assert!(ok);
}

#[test]
fn criterion_10_regularized_limit_soft() {
    let fx = cap_fixture();
    let eps = [1e-1, 1e-2, 1e-3];
    let devs: Vec<f64> = eps
        .iter()
        .map(|&e| {
            let r = solve_regularized(&fx.space, &fx.alpha, &Forcing::Zero, e, Some(exact_speed()), &TranslatorOptions::default())
                .unwrap();
            // max |eps w - C| recomputed from the field
            let dev = r.w.values.iter().fold(0.0f64, |m, w| m.max((e * w - exact_speed()).abs()));
            assert!((dev - r.deviation.unwrap()).abs() <= 1e-12);
            dev
        })
        .collect();

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"domain":{"shape":"circle","R":1.0},"alpha":{"const":2.0},"h":0.05,"translator":{"epsilons":[0.1,0.01,0.001]}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    execute(Command::Translator, &cfg, &Options { out: Some(out.clone()), quiet: true }).unwrap();
    let csv = std::fs::read_to_string(out.join("conjecture35.csv")).unwrap();
    let csv_devs: Vec<f64> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();

    let monotone = devs.windows(2).all(|w| w[1] <= w[0]);
    let ok = devs[2] <= 0.05 && monotone;
    println!(
        "criterion 10: {} dev={} (soft gate; a miss is reported, not failed)",
        if ok { "PASS" } else { "WARN" },
        sci(&devs)
    );
    assert_eq!(csv_devs.len(), 3);
    assert!(csv.starts_with("epsilon,min_eps_w,max_eps_w,dev_from_C\n"));
    for (a, b) in csv_devs.iter().zip(&devs) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

fn audit_once(cfg: &Path, out: &Path) -> Vec<u8> {
    execute(Command::Audit, cfg, &Options { out: Some(out.to_path_buf()), quiet: true }).unwrap();
    std::fs::read(out.join("audits.jsonl")).unwrap()
}

#[test]
fn criterion_11_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"domain":{"shape":"circle","R":1.0},"alpha":{"const":2.0},"h":0.05,"dt":0.001,"t_end":2.0,"seed":7,
            "translator":{"epsilons":[0.1,0.01]}}"#,
    )
    .unwrap();
    let a = audit_once(&cfg, &dir.path().join("a"));
    let b = audit_once(&cfg, &dir.path().join("b"));
    let ok = !a.is_empty() && a == b;
    report(11, ok, &format!("{} bytes, {} records", a.len(), a.iter().filter(|&&c| c == b'\n').count()));
    assert!(ok);
}
