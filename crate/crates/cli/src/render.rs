//! Human-readable tables.

use std::fmt::Write;

use dite_core::checks::SuiteEntry;
use dite_core::complexity::{ComplexityReport, Group, Verdict};
use dite_core::network::{Keypoint, ModelSummary};

use crate::Grouping;

fn groups(s: &mut String, title: &str, gs: &[Group]) {
    let _ = writeln!(
        s,
        "\n{title:<28} {:>12} {:>12} {:>14}",
        "params", "MFLOPs", "MFLOPs (all)"
    );
    for g in gs {
        let t = g.totals;
        let _ = writeln!(
            s,
            "{:<28} {:>12} {:>12.2} {:>14.2}",
            g.name,
            t.params,
            t.mflops(),
            t.flops_all as f64 / 1e6
        );
    }
}

pub fn summary(m: &ModelSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "variant {:?}, input {}x{}",
        m.variant, m.input.0, m.input.1
    );
    let _ = writeln!(
        s,
        "{:<8} {:>8} {:>9}  widths",
        "stage", "modules", "branches"
    );
    for st in &m.stages {
        let _ = writeln!(
            s,
            "{:<8} {:>8} {:>9}  {:?}",
            st.name, st.modules, st.branches, st.widths
        );
    }
    let _ = writeln!(
        s,
        "\n{:<64} {:<18} {:<18} {:>9} {:>12}",
        "layer", "kind", "output", "params", "flops"
    );
    for n in &m.layers {
        let _ = writeln!(
            s,
            "{:<64} {:<18} {:<18} {:>9} {:>12}",
            n.name,
            n.kind,
            n.output.to_string(),
            n.params,
            n.flops
        );
    }
    let _ = writeln!(
        s,
        "\n{} layers, {} params ({:.4} M), {:.2} MFLOPs",
        m.layers.len(),
        m.total.params,
        m.total.mparams(),
        m.total.mflops()
    );
    s
}

pub fn report(r: &ComplexityReport, by: &[Grouping]) -> String {
    let mut s = String::new();
    let t = r.total;
    let _ = writeln!(s, "input {}x{}", r.input.0, r.input.1);
    let _ = writeln!(s, "params {} ({:.4} M)", t.params, t.mparams());
    let _ = writeln!(
        s,
        "MFLOPs {:.2} (multiply-adds; norm, activation and layout excluded)",
        t.mflops()
    );
    let _ = writeln!(
        s,
        "MFLOPs {:.2} (every operation)",
        t.flops_all as f64 / 1e6
    );
    let head = r.stage("head").unwrap_or_default();
    let _ = writeln!(
        s,
        "without head: {:.4} M params, {:.2} MFLOPs",
        (t.params - head.params) as f64 / 1e6,
        (t.flops - head.flops) as f64 / 1e6
    );
    groups(&mut s, "stage", &r.by_stage);
    for g in by {
        match g {
            Grouping::Stage => {}
            Grouping::Block => groups(&mut s, "block", &r.by_block),
            Grouping::Branch => groups(&mut s, "branch", &r.by_branch),
            Grouping::Category => groups(&mut s, "category", &r.by_category),
        }
    }
    s
}

pub fn sweep<'a>(
    input: (usize, usize),
    rows: impl Iterator<
        Item = (
            &'a String,
            &'a String,
            Option<f64>,
            Option<f64>,
            &'a Option<String>,
        ),
    >,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "input {}x{}", input.0, input.1);
    let _ = writeln!(
        s,
        "{:<6} {:<6} {:>10} {:>8}",
        "G", "N", "params(M)", "GFLOPs"
    );
    for (g, n, p, f, e) in rows {
        match (p, f) {
            (Some(p), Some(f)) => {
                let _ = writeln!(s, "{g:<6} {n:<6} {p:>10.3} {f:>8.4}");
            }
            _ => {
                let _ = writeln!(
                    s,
                    "{g:<6} {n:<6} error: {}",
                    e.as_deref().unwrap_or("unknown")
                );
            }
        }
    }
    s
}

pub fn verdicts<'a>(vs: impl Iterator<Item = (&'a str, &'a Verdict)>) -> String {
    let mut s = String::new();
    let (mut pass, mut total) = (0, 0);
    let _ = writeln!(
        s,
        "{:<8} {:<16} {:<28} {:>9} {:>9} {:>8} {:>9} {:>9} {:>8}",
        "status", "file", "config", "M params", "expected", "rel", "MFLOPs", "expected", "rel"
    );
    for (src, v) in vs {
        total += 1;
        let e = &v.expectation;
        let status = match (&v.measured, v.passed()) {
            (None, _) => "MISSING",
            (_, true) => "PASS",
            _ => "FAIL",
        };
        if v.passed() {
            pass += 1;
        }
        let id = format!("{} {}x{}", e.config_id, e.input_h, e.input_w);
        match v.measured {
            Some(m) => {
                let _ = writeln!(
                    s,
                    "{status:<8} {src:<16} {id:<28} {:>9.4} {:>9} {:>+7.1}% {:>9.2} {:>9} {:>+7.1}%",
                    m.mparams(),
                    e.params,
                    100.0 * v.params_rel_error,
                    m.mflops(),
                    e.mflops,
                    100.0 * v.flops_rel_error
                );
                if !v.passed() {
                    for d in &v.stages {
                        let delta = match (d.params_delta, d.flops_delta) {
                            (Some(p), Some(f)) => {
                                format!("  Δ vs reference {p:+} params, {f:+} flops")
                            }
                            _ => String::new(),
                        };
                        let _ = writeln!(
                            s,
                            "           {:<10} {:>9} params ({:>5.1}%) {:>12} flops ({:>5.1}%){delta}",
                            d.stage,
                            d.params,
                            100.0 * d.params_share,
                            d.flops,
                            100.0 * d.flops_share
                        );
                    }
                }
            }
            None => {
                let _ = writeln!(
                    s,
                    "{status:<8} {src:<16} {id:<28} {}",
                    v.error.as_deref().unwrap_or("")
                );
            }
        }
    }
    let _ = writeln!(s, "\n{pass}/{total} expectations met");
    s
}

pub fn forward(
    input: &[usize; 4],
    heatmaps: &[usize; 4],
    sha: &str,
    kps: &[Vec<Keypoint>],
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "input {input:?} -> heatmaps {heatmaps:?}");
    let _ = writeln!(s, "sha256 {sha}");
    for (n, sample) in kps.iter().enumerate() {
        for (k, p) in sample.iter().enumerate() {
            let flat = if p.flat { " (flat)" } else { "" };
            let _ = writeln!(
                s,
                "sample {n} keypoint {k:>2}: x {:>8.2} y {:>8.2} score {:>10.5}{flat}",
                p.x, p.y, p.score
            );
        }
    }
    s
}

pub fn gradcheck(suite: &[SuiteEntry]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>8} {:>12} {:>8}  status",
        "check", "entries", "max rel err", "tol"
    );
    for e in suite {
        let r = &e.report;
        let status = if r.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(
            s,
            "{:<12} {:>8} {:>12.3e} {:>8.0e}  {status}",
            e.name,
            r.checked(),
            r.max_rel_error(),
            r.tol
        );
        if !r.passed() {
            for p in r
                .params
                .iter()
                .filter(|p| p.non_finite || p.max_rel_error >= r.tol)
            {
                let _ = writeln!(
                    s,
                    "    {} [{}]: analytic {} numeric {}",
                    p.name, p.worst_index, p.analytic, p.numeric
                );
            }
        }
    }
    s
}
