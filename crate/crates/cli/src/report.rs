//! Plain-text tuning report with a trailing key=value block.

use std::fmt::Write;

use gramswitch_core::tuning::TuningReport;

fn ln_and_value(ln: f64) -> String {
    format!("exp({ln:.6}) = {:.6e}", ln.exp())
}

pub fn render(rep: &TuningReport) -> String {
    let c = &rep.constants;
    let mut s = String::new();
    let _ = writeln!(s, "Tuning report");
    let _ = writeln!(s, "  eta            {:.9}", c.eta);
    let _ = writeln!(s, "  kappa          {:.9}  (must be < 1)", c.kappa);
    let _ = writeln!(s, "  t_obs_max      {:.9e}", c.t_obs_max);
    let _ = writeln!(
        s,
        "  a0, a_inf, a_F {:.6}, {:.6}, {:.6}",
        c.a0, c.a_inf, c.a_f
    );
    let _ = writeln!(s, "  d0, d0'        {:.6}, {:.6}", c.d0, c.d0p);
    let _ = writeln!(s, "  D, D'          {:.6}, {:.6}", c.dist_d, c.dist_dp);
    let _ = writeln!(s, "  m_bar          {:.6}", c.m_bar);
    let _ = writeln!(s, "  theta_floor    {:.6}", c.theta_floor);
    let _ = writeln!(s, "  s_bar          {:.6}", c.s_bar);
    let _ = writeln!(s, "  g0             {:.9e}", c.g0);
    let _ = writeln!(s, "  K1             {}", ln_and_value(c.ln_k1));
    let _ = writeln!(s, "  K2             {}", ln_and_value(c.ln_k2));
    let _ = writeln!(s, "  K3             {}", ln_and_value(c.ln_k3));
    let _ = writeln!(s, "  K4             {}", ln_and_value(c.ln_k4));
    match &rep.bounds {
        Ok(b) => {
            let _ = writeln!(s, "  beta_min       {:.6}", b.beta_min);
            let _ = writeln!(
                s,
                "  alpha_min      {:.6}  (at beta = beta_min)",
                b.alpha_min
            );
            if b.floored {
                let _ = writeln!(s, "  (bounds raised to theta_floor)");
            }
        }
        Err(e) => {
            let _ = writeln!(s, "  gain bounds    unavailable: {e}");
        }
    }
    if let (Some(lr), Some(ls)) = (rep.ln_rho, rep.ln_s_lower) {
        let _ = writeln!(s, "  s_lower        {}", ln_and_value(ls));
        let _ = writeln!(s, "  rho            {}", ln_and_value(lr));
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "Configured gains alpha = {}, beta = {}",
        rep.alpha, rep.beta
    );
    if rep.certified {
        let _ = writeln!(s, "Verdict: CERTIFIED");
    } else {
        let _ = writeln!(s, "Verdict: NOT CERTIFIED");
    }
    for f in &rep.flags {
        let _ = writeln!(s, "  - {f}");
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "[values]");
    let kv = |s: &mut String, k: &str, v: f64| {
        let _ = writeln!(s, "{k}={v:.16e}");
    };
    kv(&mut s, "eta", c.eta);
    kv(&mut s, "kappa", c.kappa);
    kv(&mut s, "t_obs_max", c.t_obs_max);
    kv(&mut s, "a0", c.a0);
    kv(&mut s, "a_inf", c.a_inf);
    kv(&mut s, "a_F", c.a_f);
    kv(&mut s, "d0", c.d0);
    kv(&mut s, "d0p", c.d0p);
    kv(&mut s, "D", c.dist_d);
    kv(&mut s, "Dp", c.dist_dp);
    kv(&mut s, "m_bar", c.m_bar);
    kv(&mut s, "theta_floor", c.theta_floor);
    kv(&mut s, "s_bar", c.s_bar);
    kv(&mut s, "g0", c.g0);
    kv(&mut s, "ln_K1", c.ln_k1);
    kv(&mut s, "ln_K2", c.ln_k2);
    kv(&mut s, "ln_K3", c.ln_k3);
    kv(&mut s, "ln_K4", c.ln_k4);
    if let Ok(b) = &rep.bounds {
        kv(&mut s, "beta_min", b.beta_min);
        kv(&mut s, "alpha_min", b.alpha_min);
    }
    if let Some(lr) = rep.ln_rho {
        kv(&mut s, "ln_rho", lr);
    }
    let _ = writeln!(s, "approximate={}", c.approximate);
    let _ = writeln!(s, "certified={}", rep.certified);
    s
}
