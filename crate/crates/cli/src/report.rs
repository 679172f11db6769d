//! Plain-text rendering of a run report.

use std::fmt::Write;

use structguard_core::policy::{PolicyDiagnostics, Ratio};
use structguard_core::taxonomy::{FailureCategory, ModelTaxonomy};

use crate::pipeline::RunReport;

fn ratio(r: Ratio) -> String {
    match r.value() {
        Some(v) => format!("{v:.3}"),
        None => "n/a".into(),
    }
}

pub fn render_scores(report: &RunReport) -> String {
    let m = &report.metrics;
    let mut s = String::new();
    let _ = writeln!(s, "Per-model scores (test split)");
    let _ = writeln!(s, "{:<18} {:>7} {:>7} {:>7}", "model", "ROS", "CSS", "delta");
    for (id, sc) in &m.models {
        let _ = writeln!(s, "{id:<18} {:>7.3} {:>7.3} {:>+7.3}", sc.ros, sc.css, sc.delta);
    }
    let _ = writeln!(
        s,
        "{:<18} {:>7.3} {:>7.3}",
        "cross-model gap", m.cross_model_gap_ros, m.cross_model_gap_css
    );
    s
}

pub fn render_cascade(report: &RunReport) -> String {
    let c = &report.metrics.cascade;
    let p = &report.config.policy.policy;
    let mut s = String::new();
    let _ = writeln!(s, "Cascade (micro-F1, test split)");
    for (label, v) in [
        ("best single, ROS", c.best_single_ros),
        ("best single, CSS", c.best_single_css),
        ("safe override", c.safe_override_css),
        ("oracle", c.oracle_css),
    ] {
        let _ = writeln!(s, "{label:<18} {v:>7.3}");
    }
    let _ = writeln!(
        s,
        "policy: base={} tau_keep={:.2} tau_take={:.2} delta={:.2} (dev F1 {:.3}, {} configs, verifier {})",
        p.base_model,
        p.tau_keep,
        p.tau_take,
        p.delta_margin,
        report.config.policy.dev_f1,
        report.config.policy.configs_evaluated,
        report.config.verifier.as_ref().map_or("external".into(), |v| v.mode.to_string()),
    );
    s
}

pub fn render_taxonomy(report: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Failure taxonomy (share of strict failures, test split)");
    let _ = write!(s, "{:<18}", "model");
    for c in FailureCategory::FAILURES {
        let _ = write!(s, " {:>14}", c.as_str());
    }
    let _ = writeln!(s);
    for (id, t) in &report.taxonomy {
        let _ = write!(s, "{id:<18}");
        match t {
            ModelTaxonomy::Shares(shares) => {
                for c in FailureCategory::FAILURES {
                    let v = shares.get(&c).copied().unwrap_or(0.0);
                    let _ = write!(s, " {:>14.3}", v);
                }
            }
            ModelTaxonomy::EmptyFailureSet => {
                let _ = write!(s, " no strict failures");
            }
        }
        let _ = writeln!(s);
    }
    s
}

pub fn render_diagnostics(d: &PolicyDiagnostics) -> String {
    format!(
        "Policy diagnostics\noverride rate {:>7}   override precision {:>7}\nabstain rate  {:>7}   abstain precision  {:>7}\n",
        ratio(d.override_rate),
        ratio(d.override_precision),
        ratio(d.abstain_rate),
        ratio(d.abstain_precision),
    )
}

pub fn render_attestation(report: &RunReport) -> String {
    let mut s = String::from("Split attestation\n");
    for (stage, splits) in &report.attestation.consumed {
        let list: Vec<String> = splits.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "{:<18} {}", stage.as_str(), list.join(", "));
    }
    let _ = writeln!(
        s,
        "test labels read only by final scoring: {}",
        if report.attestation.is_clean() { "yes" } else { "NO" }
    );
    s
}

pub fn render(report: &RunReport) -> String {
    [
        render_scores(report),
        render_cascade(report),
        render_taxonomy(report),
        render_diagnostics(&report.diagnostics),
        render_attestation(report),
    ]
    .join("\n")
}
