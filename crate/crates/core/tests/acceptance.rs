//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use gramswitch_core::gramian::{
    gramian_oracle, oscillator_unit_gramian, replay_gramian, GammaConvention, GramianState,
};
use gramswitch_core::integrator::{ConstantInput, HistoryBuffer, IntegratorConfig};
use gramswitch_core::linalg::{
    is_positive_definite, lyapunov_residual, norm, observability_rank, smallest_eigenvalue,
    solve_lyapunov, SymMatrix,
};
use gramswitch_core::model::oscillator_example;
use gramswitch_core::observer::{
    error_bound_check, frobenius_sup, lyapunov_decay_excess, trace_bound_check,
    variation_of_constants, ErrorSample,
};
use gramswitch_core::supervisor::{
    run_closed_loop, InitialState, ModeTag, RunOutput, SwitchParams, TraceRecord, Trigger,
};
use gramswitch_core::tuning::{
    alpha_threshold, compute_constants, compute_eta, compute_gain_bounds, inequality_slacks, tune,
    CompactSets, TuningOptions,
};

const H: f64 = 1e-3;
const HORIZON: f64 = 50.0;
const RUNTIME_LIMIT: Duration = Duration::from_secs(30);

// tolerances
const EPS_FINAL_MAX: f64 = 1e-4;
const X_FINAL_MAX: f64 = 0.5;
const S_INF_MAX: f64 = 1e-2;
const LYAP_RESIDUAL_MAX: f64 = 1e-10;
const ORACLE_REL: f64 = 1e-6;
const CLOSED_FORM_TOL: f64 = 1e-4;
const ORACLE_QUAD: f64 = 2.5e-5;
const VOC_REL: f64 = 1e-5;
const BOUND_SLACK: f64 = 1e-9;
const LOWER_BOUND_SLACK: f64 = -1e-9;
const RANK_EIG_MAX: f64 = 1e-10;
const TRIGGER_SLACK: f64 = 1e-9;
const ETA_TOL: f64 = 1e-9;

// regression values of the reference run
const REF_SWITCHES: usize = 11;
const REF_X_FINAL: f64 = 2.900_197_319_054_115_6e-5;
const REF_S_INF_ERR: f64 = 6.022_405_017_756_623e-6;
const REF_REL: f64 = 1e-6;
const REF_EPS_FINAL_MAX: f64 = 1e-15;

fn reference_init() -> InitialState {
    InitialState {
        x0: vec![-10.0, 0.0],
        xhat0: vec![-15.0, 5.0],
        s0: SymMatrix::identity(2),
    }
}

fn integ() -> IntegratorConfig {
    IntegratorConfig {
        step: H,
        ..Default::default()
    }
}

fn run(p: &SwitchParams, init: &InitialState, horizon: f64) -> Result<RunOutput, String> {
    let (sys, fb, v) = oscillator_example();
    run_closed_loop(&sys, &fb, &v, p, init, horizon, &integ()).map_err(|e| e.to_string())
}

fn s_infinity() -> SymMatrix {
    SymMatrix::from_rows(&[&[0.4, 0.2], &[0.2, 0.6]]).unwrap()
}

fn rel(a: &SymMatrix, b: &SymMatrix) -> f64 {
    (a - b).frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
}

fn records_in(trace: &[TraceRecord], lo: f64, hi: f64) -> &[TraceRecord] {
    let a = trace.partition_point(|r| r.t < lo);
    let b = trace.partition_point(|r| r.t <= hi);
    &trace[a..b.max(a)]
}

fn theta_of(tag: ModeTag, p: &SwitchParams) -> f64 {
    match tag {
        ModeTag::Observation => p.alpha,
        ModeTag::Stabilization => p.beta,
    }
}

/// Evenly spaced picks from `items`.
fn probes<T>(items: &[T], count: usize) -> Vec<&T> {
    let count = count.min(items.len());
    (0..count)
        .map(|k| {
            &items[if count == 1 {
                0
            } else {
                k * (items.len() - 1) / (count - 1)
            }]
        })
        .collect()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn a1(out: &Result<RunOutput, String>, elapsed: Duration) -> Outcome {
    let out = match out {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let last = out.trace.last().unwrap();
    let x_final = norm(&last.x);
    let n_sw = out.log.switch_count();
    let stab = out.log.final_mode() == ModeTag::Stabilization;
    let s_err = (&last.s - &s_infinity()).frobenius_norm();
    let in_range = (6..=14).contains(&n_sw);
    let pinned = n_sw == REF_SWITCHES
        && ((x_final - REF_X_FINAL) / REF_X_FINAL).abs() <= REF_REL
        && ((s_err - REF_S_INF_ERR) / REF_S_INF_ERR).abs() <= REF_REL
        && last.eps_norm <= REF_EPS_FINAL_MAX;
    let pass = stab
        && in_range
        && last.eps_norm <= EPS_FINAL_MAX
        && x_final <= X_FINAL_MAX
        && elapsed <= RUNTIME_LIMIT
        && pinned;
    outcome(
        pass,
        format!(
            "switches = {n_sw} (in [6, 14], pinned {REF_SWITCHES}), final mode = {}, |x(50)| = {x_final:.6e} (<= {X_FINAL_MAX}, pinned {REF_X_FINAL:.6e}), |eps(50)| = {:.3e} (<= {EPS_FINAL_MAX:e}, pinned <= {REF_EPS_FINAL_MAX:e}), runtime = {:.2}s (<= {}s)",
            out.log.final_mode(),
            last.eps_norm,
            elapsed.as_secs_f64(),
            RUNTIME_LIMIT.as_secs()
        ),
    )
}

fn a2(out: &RunOutput) -> Outcome {
    let (sys, _, _) = oscillator_example();
    let last = out.trace.last().unwrap();
    let err = (&last.s - &s_infinity()).frobenius_norm();
    let solved = solve_lyapunov(&sys.a(0.0), sys.c(), 1.0).unwrap();
    let residual = lyapunov_residual(&sys.a(0.0), sys.c(), 1.0, &s_infinity()).frobenius_norm();
    let solved_err = (&solved - &s_infinity()).frobenius_norm();
    outcome(
        err <= S_INF_MAX && residual <= LYAP_RESIDUAL_MAX && solved_err <= LYAP_RESIDUAL_MAX,
        format!(
            "|S(50) - S_inf|_F = {err:.3e} (<= {S_INF_MAX:e}), residual of S_inf = {residual:.1e}, |solve_lyapunov - S_inf|_F = {solved_err:.1e} (<= {LYAP_RESIDUAL_MAX:e})"
        ),
    )
}

fn a3(out: &RunOutput, p: &SwitchParams) -> Outcome {
    let (sys, _, _) = oscillator_example();
    let window = p.window;
    // monitored Gramian along the reference run
    let with_g: Vec<&TraceRecord> = out.trace.iter().filter(|r| r.gram.is_some()).collect();
    let mut worst_shifted: f64 = 0.0;
    for r in probes(&with_g, 50) {
        let oracle = gramian_oracle(
            &sys,
            &out.history,
            r.t - window,
            r.t,
            p.shift(),
            ORACLE_QUAD,
        );
        let g_or = smallest_eigenvalue(&oracle).unwrap();
        worst_shifted = worst_shifted
            .max(rel(r.gram.as_ref().unwrap(), &oracle))
            .max((r.g.unwrap() - g_or).abs() / (1.0 + g_or));
    }
    // unshifted Gramian along the same input history
    let replay = replay_gramian(&sys, &out.history, window, 0.0).unwrap();
    let sliding: Vec<&(f64, GramianState)> = replay.iter().filter(|(t, _)| *t >= window).collect();
    let mut worst_raw: f64 = 0.0;
    let mut sign_mismatch = 0;
    for (t, st) in probes(&sliding, 50).into_iter().map(|(t, s)| (*t, s)) {
        let oracle = gramian_oracle(&sys, &out.history, t - window, t, 0.0, ORACLE_QUAD);
        worst_raw = worst_raw.max(rel(&st.g, &oracle));
        let shifted = gramian_oracle(&sys, &out.history, t - window, t, p.shift(), 1e-3);
        if is_positive_definite(&st.g, 1e-12) != is_positive_definite(&shifted, 1e-12) {
            sign_mismatch += 1;
        }
    }
    // zero input, unshifted
    let mut zero = HistoryBuffer::unbounded(window);
    let steps = (3.0 / H).round() as usize;
    for k in 0..=steps {
        zero.push(k as f64 * H, 0.0).unwrap();
    }
    let zero_replay = replay_gramian(&sys, &zero, window, 0.0).unwrap();
    let at_one = &zero_replay[(1.0 / H).round() as usize];
    let closed = oscillator_unit_gramian();
    let closed_err = (&at_one.1.g - &closed).frobenius_norm();
    let mut worst_zero: f64 = 0.0;
    let zero_sliding: Vec<_> = zero_replay.iter().filter(|(t, _)| *t >= window).collect();
    for (t, st) in probes(&zero_sliding, 50).into_iter().map(|(t, s)| (*t, s)) {
        let oracle = gramian_oracle(&sys, &ConstantInput(0.0), t - window, t, 0.0, ORACLE_QUAD);
        worst_zero = worst_zero.max(rel(&st.g, &oracle));
    }
    let g1 = smallest_eigenvalue(&at_one.1.g).unwrap();
    // singular input keeps rank one at both scalings
    let sing0 = smallest_eigenvalue(&gramian_oracle(
        &sys,
        &ConstantInput(-1.0),
        0.0,
        window,
        0.0,
        1e-3,
    ))
    .unwrap();
    let sing_s = smallest_eigenvalue(&gramian_oracle(
        &sys,
        &ConstantInput(-1.0),
        0.0,
        window,
        p.shift(),
        1e-3,
    ))
    .unwrap();
    let pass = worst_shifted <= ORACLE_REL
        && worst_raw <= ORACLE_REL
        && worst_zero <= ORACLE_REL
        && closed_err <= CLOSED_FORM_TOL
        && (g1 - 0.0793).abs() <= CLOSED_FORM_TOL
        && sign_mismatch == 0
        && sing0.abs() <= RANK_EIG_MAX
        && sing_s.abs() <= RANK_EIG_MAX;
    outcome(
        pass,
        format!(
            "monitored vs oracle {worst_shifted:.2e}, unshifted replay vs oracle {worst_raw:.2e}, zero input vs oracle {worst_zero:.2e} (all <= {ORACLE_REL:e}); G(1) vs closed form {closed_err:.1e}, g = {g1:.6} (<= {CLOSED_FORM_TOL:e}); definiteness mismatches {sign_mismatch}"
        ),
    )
}

fn a4(out: &RunOutput, p: &SwitchParams) -> Outcome {
    let (sys, _, _) = oscillator_example();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (tag, start, end) in out.log.intervals() {
        let recs = records_in(&out.trace, start, (start + 2.0).min(end));
        let (first, last) = (&recs[0], &recs[recs.len() - 1]);
        if last.t <= first.t {
            continue;
        }
        let voc = variation_of_constants(
            &sys,
            &out.history,
            &first.s,
            theta_of(tag, p),
            first.t,
            last.t,
            H,
        );
        worst = worst.max(rel(&voc, &last.s));
        count += 1;
    }
    outcome(
        worst <= VOC_REL,
        format!("{count} stretches, worst relative error {worst:.2e} (<= {VOC_REL:e})"),
    )
}

fn mode_samples(recs: &[TraceRecord]) -> Vec<ErrorSample> {
    recs.iter()
        .map(|r| ErrorSample::new(r.t, &r.x, &r.xhat, r.s.clone()))
        .collect()
}

fn a5(out: &RunOutput, p: &SwitchParams) -> Outcome {
    let mut slack = f64::NEG_INFINITY;
    let mut decay = f64::NEG_INFINITY;
    for (tag, start, end) in out.log.intervals() {
        let samples = mode_samples(records_in(&out.trace, start, end));
        let theta = theta_of(tag, p);
        slack = slack.max(error_bound_check(&samples, theta));
        decay = decay.max(lyapunov_decay_excess(&samples, theta));
    }
    outcome(
        slack <= BOUND_SLACK && decay <= BOUND_SLACK,
        format!("worst error-bound slack {slack:.2e}, worst decay excess {decay:.2e} (<= {BOUND_SLACK:e})"),
    )
}

fn a6(out: &RunOutput, p: &SwitchParams) -> Outcome {
    let (sys, _, _) = oscillator_example();
    let min_s = out
        .trace
        .iter()
        .map(|r| r.s_min)
        .fold(f64::INFINITY, f64::min);
    let mut lower = f64::INFINITY;
    let mut checked = 0;
    for (tag, start, end) in out.log.intervals() {
        if tag != ModeTag::Observation {
            continue;
        }
        let recs = records_in(&out.trace, start, end);
        for r in recs.iter().step_by(100) {
            let g0 = gramian_oracle(&sys, &ConstantInput(0.0), start, r.t, 0.0, 1e-4);
            let diff = &r.s - &g0.scale((-p.alpha * (r.t - start)).exp());
            lower = lower.min(smallest_eigenvalue(&diff).unwrap());
            checked += 1;
        }
    }
    // dedicated observation-only run with theta = 3 > 2 a_F
    let obs_only = SwitchParams {
        t_obs: 100.0,
        t_stab: 100.0,
        alpha: 3.0,
        ..*p
    };
    let (trace_ok, a_f) = match run(&obs_only, &reference_init(), 10.0) {
        Ok(o) => {
            let a_f = frobenius_sup(&sys, o.trace.iter().map(|r| r.u));
            let gains: Vec<SymMatrix> = o.trace.iter().map(|r| r.s.clone()).collect();
            let ok = trace_bound_check(&gains, sys.c(), 3.0, a_f).unwrap_or(false);
            let inapplicable = trace_bound_check(&gains, sys.c(), 1.0, a_f).is_err();
            (ok && inapplicable && o.log.switch_count() == 0, a_f)
        }
        Err(_) => (false, f64::NAN),
    };
    outcome(
        min_s > 0.0 && lower >= LOWER_BOUND_SLACK && trace_ok,
        format!(
            "min eig S = {min_s:.3e} (> 0); observation lower bound min eig {lower:.2e} over {checked} samples (>= {LOWER_BOUND_SLACK:e}); trace bound at theta = 3, a_F = {a_f:.6}: {}",
            if trace_ok { "holds" } else { "violated" }
        ),
    )
}

fn a7() -> Outcome {
    let (sys, _, _) = oscillator_example();
    let r0 = observability_rank(sys.c(), &sys.a(0.0)).unwrap();
    let r1 = observability_rank(sys.c(), &sys.a(-1.0)).unwrap();
    let g = gramian_oracle(&sys, &ConstantInput(-1.0), 0.0, 1.0, 0.0, 1e-3);
    let e = g.eigenvalues().unwrap();
    outcome(
        r0 == 2 && r1 == 1 && e[0].abs() <= RANK_EIG_MAX && e[1] > RANK_EIG_MAX,
        format!("rank(C, A(0)) = {r0}, rank(C, A(-1)) = {r1}, Gramian at u = -1 eigenvalues {:.1e}, {:.3}", e[0], e[1]),
    )
}

fn a8(out: &RunOutput, p: &SwitchParams, integ: &IntegratorConfig) -> Outcome {
    let sw = &out.log.switches;
    let mut problems = Vec::new();
    let mut expect = ModeTag::Stabilization;
    for ev in sw {
        if ev.new_mode != expect {
            problems.push(format!("mode order broken at t = {}", ev.t));
        }
        expect = expect.other();
    }
    let mut start = 0.0;
    let mut worst_timer: f64 = 0.0;
    let mut min_dwell = f64::INFINITY;
    for ev in sw {
        match ev.new_mode {
            ModeTag::Stabilization => {
                worst_timer = worst_timer.max((ev.t - start - p.t_obs).abs());
                if ev.trigger != Trigger::Timer {
                    problems.push(format!("observation ended by {} at {}", ev.trigger, ev.t));
                }
            }
            ModeTag::Observation => {
                min_dwell = min_dwell.min(ev.t - start);
                let at = out.trace.iter().find(|r| r.t == ev.t).and_then(|r| r.g);
                if !matches!(at, Some(g) if g <= p.g_min + TRIGGER_SLACK) {
                    problems.push(format!("g at event t = {} is {at:?}", ev.t));
                }
                let before = records_in(&out.trace, start + p.t_stab, ev.t);
                if before
                    .iter()
                    .filter(|r| r.t < ev.t)
                    .any(|r| r.g.is_none_or(|g| g <= p.g_min))
                {
                    problems.push(format!("g reached g_min before the event at {}", ev.t));
                }
            }
        }
        start = ev.t;
    }
    if worst_timer > integ.step {
        problems.push(format!("timer error {worst_timer:e}"));
    }
    if min_dwell < p.t_stab - integ.event_tol {
        problems.push(format!("dwell {min_dwell} shorter than t_stab"));
    }
    let zero = InitialState {
        x0: vec![0.0, 0.0],
        xhat0: vec![0.0, 0.0],
        s0: SymMatrix::identity(2),
    };
    match run(p, &zero, HORIZON) {
        Ok(eq) => {
            let still = eq
                .trace
                .iter()
                .all(|r| r.x == [0.0, 0.0] && r.xhat == [0.0, 0.0]);
            if !still || eq.log.switch_count() != 1 || eq.log.final_mode() != ModeTag::Stabilization
            {
                problems.push(format!(
                    "equilibrium run: at rest = {still}, switches = {}",
                    eq.log.switch_count()
                ));
            }
        }
        Err(e) => problems.push(format!("equilibrium run failed: {e}")),
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "{} switches alternate, timer error {worst_timer:.1e} (<= h), shortest dwell {min_dwell:.6} (>= t_stab), triggers sound; equilibrium run at rest with 1 switch",
                sw.len()
            )
        } else {
            problems.join("; ")
        },
    )
}

fn a9(p: &SwitchParams) -> Outcome {
    let (sys, fb, v) = oscillator_example();
    let e3 = 3.0f64.exp();
    let eta_err = (compute_eta(3.0) - (e3 - 4.0) / (e3 + 2.0)).abs();
    let sets = CompactSets {
        r0: 400.0,
        xhat_radius: 16.0,
        s_trace_max: 2.0,
    };
    let opts = TuningOptions::default();
    let mut problems = Vec::new();
    if eta_err > ETA_TOL {
        problems.push(format!("eta error {eta_err:e}"));
    }
    // the reference timing admits no certified gains at all
    let reference = tune(&sys, &fb, &v, &sets, p, &opts).unwrap();
    if reference.constants.kappa >= 1.0 {
        problems.push("kappa >= 1".into());
    }
    if reference.certified
        || !reference
            .flags
            .iter()
            .any(|f| f.contains("no finite certified gains"))
    {
        problems.push("reference gains not flagged".into());
    }
    // a timing with T < min(t_obs, t_stab)/3
    let valid = SwitchParams { window: 0.5, ..*p };
    let c = compute_constants(&sys, &fb, &v, &sets, &valid, &opts).unwrap();
    let b = compute_gain_bounds(&c, &valid).unwrap();
    for eps in [1e-6, 1.0, 100.0] {
        let beta = b.beta_min + eps;
        let alpha = alpha_threshold(&c, &valid, beta)
            .unwrap()
            .max(c.theta_floor)
            + eps;
        let s = inequality_slacks(&c, &valid, alpha, beta);
        if !s.iter().all(|&v| v > 0.0) {
            problems.push(format!("substitution eps = {eps} not strict: {s:?}"));
        }
    }
    let at_valid = tune(&sys, &fb, &v, &sets, &valid, &opts).unwrap();
    let flagged = !at_valid.certified
        && at_valid
            .flags
            .iter()
            .any(|f| f.starts_with("alpha = 1 is below"))
        && at_valid
            .flags
            .iter()
            .any(|f| f.starts_with("beta = 1 is below"));
    if !flagged {
        problems.push("gains below the bounds not flagged at T = 0.5".into());
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "eta(3) error {eta_err:.1e}, kappa = {:.6}; at T = 0.5: beta_min = {:.3}, alpha_min = {:.3}, substitution strict; alpha = beta = 1 flagged (reference timing: no finite bounds)",
                reference.constants.kappa, b.beta_min, b.alpha_min
            )
        } else {
            problems.join("; ")
        },
    )
}

fn main() -> ExitCode {
    let p = SwitchParams::reference();
    let integ = integ();
    let start = Instant::now();
    let reference = run(&p, &reference_init(), HORIZON);
    let elapsed = start.elapsed();

    let mut results = vec![("A1", a1(&reference, elapsed))];
    match &reference {
        Ok(out) => {
            results.push(("A2", a2(out)));
            results.push(("A3", a3(out, &p)));
            results.push(("A4", a4(out, &p)));
            results.push(("A5", a5(out, &p)));
            results.push(("A6", a6(out, &p)));
            results.push(("A7", a7()));
            results.push(("A8", a8(out, &p, &integ)));
        }
        Err(e) => {
            for id in ["A2", "A3", "A4", "A5", "A6", "A8"] {
                results.push((id, outcome(false, format!("reference run failed: {e}"))));
            }
            results.push(("A7", a7()));
        }
    }
    results.push(("A9", a9(&p)));
    results.sort_by_key(|(id, _)| *id);

    let mut failed = 0;
    for (id, o) in &results {
        println!(
            "{id} {}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    // the shift convention, for comparison only
    let literal = SwitchParams {
        gamma_convention: GammaConvention::Shift,
        ..p
    };
    match run(&literal, &reference_init(), HORIZON) {
        Ok(o) => println!(
            "INFO gamma as a plain shift: {} switches, final mode {}",
            o.log.switch_count(),
            o.log.final_mode()
        ),
        Err(e) => println!("INFO gamma as a plain shift: run failed: {e}"),
    }
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
