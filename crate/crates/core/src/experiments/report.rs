//! Plain-text renderers for study results.
//!
//! Every renderer maps a result structure to a complete file body (CSV or
//! whitespace-separated plot data) as a pure function of its inputs: no
//! timestamps, no locale, floats printed with 17 significant digits so they
//! parse back bit-exactly. Rerunning a study with the same config must
//! reproduce these bytes.
//!
//! Each data row carries the backend name and the caller's config hash, so
//! a detached CSV can always be traced back to the run that produced it.

use std::collections::BTreeMap;

use super::restricted::RestrictedStudy;
use super::similarity::{SimilarityConfig, SimilarityRecord};
use super::AmplificationDemo;

/// Run identity stamped onto every row.
#[derive(Clone, Debug)]
pub struct ReportMeta {
    /// Score source: "analytic" or "trained".
    pub backend: String,
    /// Hash of the config that launched the run; "none" when absent.
    pub config_hash: String,
    /// Schedule length, for rendering times as fractions.
    pub t_max: usize,
}

/// 17 significant digits: enough for f64 round-trips.
fn fmt(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// Linear-interpolation quantile of an ascending-sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Guide-similarity rows, one per grid cell evaluation.
pub fn similarity_csv(
    records: &[SimilarityRecord],
    cfg: &SimilarityConfig,
    meta: &ReportMeta,
) -> String {
    let mut out = String::from(
        "t_frac,delta_frac,class,replicate,guide_kind,cosine,t,delta,w,k_denoise,rescale,\
         classifier_scale,raw_norm,failed,seed,backend,config_hash\n",
    );
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            fmt(r.t_frac),
            fmt(r.delta_frac),
            r.class,
            r.replicate,
            r.guide_kind.name(),
            fmt(r.cosine),
            r.t,
            r.delta,
            fmt(cfg.guidance.w),
            cfg.guidance.k_denoise,
            cfg.guidance.rescale,
            cfg.guidance.classifier_scale.name(),
            fmt(r.raw_norm),
            r.failed,
            r.seed,
            meta.backend,
            meta.config_hash,
        ));
    }
    out
}

/// Median curves with quartile bands, grouped per (guide kind, time,
/// span) over classes and replicates. Whitespace-separated, one block
/// layout suited to quartile/violin plotting.
pub fn similarity_curves_dat(records: &[SimilarityRecord], meta: &ReportMeta) -> String {
    let mut groups: BTreeMap<(&'static str, u64, u64), Vec<f64>> = BTreeMap::new();
    let mut failures: BTreeMap<(&'static str, u64, u64), usize> = BTreeMap::new();
    for r in records {
        let key = (r.guide_kind.name(), r.t_frac.to_bits(), r.delta_frac.to_bits());
        if r.failed {
            *failures.entry(key).or_insert(0) += 1;
            groups.entry(key).or_default();
        } else {
            groups.entry(key).or_default().push(r.cosine);
        }
    }
    let mut out = format!(
        "# guide_kind t_frac delta_frac n n_failed median q1 q3 min max backend={} config_hash={}\n",
        meta.backend, meta.config_hash
    );
    for ((kind, t_bits, d_bits), mut vals) in groups {
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n_failed = failures.get(&(kind, t_bits, d_bits)).copied().unwrap_or(0);
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {} {} {}\n",
            kind,
            fmt(f64::from_bits(t_bits)),
            fmt(f64::from_bits(d_bits)),
            vals.len(),
            n_failed,
            fmt(quantile(&vals, 0.5)),
            fmt(quantile(&vals, 0.25)),
            fmt(quantile(&vals, 0.75)),
            fmt(vals.first().copied().unwrap_or(f64::NAN)),
            fmt(vals.last().copied().unwrap_or(f64::NAN)),
        ));
    }
    out
}

/// Terminal samples of every (seed, arm) run.
pub fn restricted_samples_csv(study: &RestrictedStudy, meta: &ReportMeta) -> String {
    let dim = study
        .runs
        .iter()
        .find_map(|r| r.terminal().map(|x| x.len()))
        .unwrap_or(0);
    let mut out = String::from("seed_index,seed,class,arm,plan,gap_span,w,k_denoise,guide_kind,zt_fingerprint,failed");
    for d in 0..dim {
        out.push_str(&format!(",x{d}"));
    }
    out.push_str(",backend,config_hash\n");
    for r in &study.runs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{:016x},{}",
            r.seed_index,
            r.seed,
            r.class,
            r.arm.name(),
            r.plan,
            r.gap_span,
            fmt(study.config.guidance.w),
            study.config.guidance.k_denoise,
            study.config.guide_kind.name(),
            r.zt_fingerprint,
            r.failure.is_some(),
        ));
        match r.terminal() {
            Some(x) => {
                for v in x {
                    out.push_str(&format!(",{}", fmt(*v)));
                }
            }
            None => {
                for _ in 0..dim {
                    out.push_str(",nan");
                }
            }
        }
        out.push_str(&format!(",{},{}\n", meta.backend, meta.config_hash));
    }
    out
}

/// Per-arm rollup.
pub fn restricted_summary_csv(study: &RestrictedStudy, meta: &ReportMeta) -> String {
    let mut out = String::from(
        "arm,n_ok,n_failed,purity,median_l2_to_reference,median_l2_to_gold,\
         purity_ordering_ok,backend,config_hash\n",
    );
    for s in &study.summaries {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            s.arm.name(),
            s.n_ok,
            s.n_failed,
            fmt(s.purity),
            fmt(s.median_l2_to_reference),
            fmt(s.median_l2_to_gold),
            study.purity_ordering_ok,
            meta.backend,
            meta.config_hash,
        ));
    }
    out
}

/// Two-sample comparisons of terminal batches.
pub fn restricted_mmd_csv(study: &RestrictedStudy, meta: &ReportMeta) -> String {
    let mut out = String::from(
        "arm,versus,n_arm,n_versus,mmd2,threshold,p_value,bandwidth,significant,backend,config_hash\n",
    );
    for p in &study.pairwise {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            p.arm.name(),
            p.versus.name(),
            p.n_arm,
            p.n_versus,
            fmt(p.mmd.mmd2),
            fmt(p.mmd.threshold),
            fmt(p.mmd.p_value),
            fmt(p.mmd.bandwidth),
            p.mmd.significant(),
            meta.backend,
            meta.config_hash,
        ));
    }
    out
}

/// Per-time distances between the mpc and reference trajectories.
pub fn restricted_divergence_csv(study: &RestrictedStudy, meta: &ReportMeta) -> String {
    let mut out = String::from("seed_index,step_index,t,t_frac,l2,backend,config_hash\n");
    for d in &study.divergence {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            d.seed_index,
            d.step_index,
            d.t,
            fmt(d.t as f64 / meta.t_max as f64),
            fmt(d.l2),
            meta.backend,
            meta.config_hash,
        ));
    }
    out
}

/// Alignment-loss rows of the guided-combination demo.
pub fn amplification_csv(demo: &AmplificationDemo, meta: &ReportMeta) -> String {
    let mut out =
        String::from("gamma,w,t,class,input_cosine,output_cosine,seed,backend,config_hash\n");
    for r in &demo.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            fmt(r.gamma),
            fmt(demo.w),
            demo.t,
            demo.class,
            fmt(r.input_cosine),
            fmt(r.output_cosine),
            demo.seed,
            meta.backend,
            meta.config_hash,
        ));
    }
    out
}

/// Training-loss history rows.
pub fn history_csv(history: &[(usize, f64)], meta: &ReportMeta) -> String {
    let mut out = String::from("step,loss,backend,config_hash\n");
    for (step, loss) in history {
        out.push_str(&format!("{},{},{},{}\n", step, fmt(*loss), meta.backend, meta.config_hash));
    }
    out
}
