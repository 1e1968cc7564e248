//! Statistics and utility metrics: gzip entropy, logistic association,
//! exact Wilcoxon signed-rank, pass@k, functional evaluation, corpus
//! perplexity, and the final report bundle.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::process::Stdio;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// gzip entropy
// ---------------------------------------------------------------------------

/// DEFLATE-compressed length over original length, at maximum compression.
/// Lower means simpler/more repetitive text.
pub fn gzip_entropy(text: &str) -> Result<f64> {
    gzip_entropy_bytes(text.as_bytes())
}

pub fn gzip_entropy_bytes(data: &[u8]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Stats("gzip entropy of empty input".into()));
    }
    let mut encoder =
        flate2::write::DeflateEncoder::new(Vec::new(), flate2::Compression::best());
    encoder.write_all(data)?;
    let compressed = encoder.finish()?;
    Ok(compressed.len() as f64 / data.len() as f64)
}

// ---------------------------------------------------------------------------
// Logistic association
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AssociationResult {
    pub covariate: String,
    /// Odds ratio per one standard deviation of the covariate. Infinite or
    /// zero when separation was detected.
    pub odds_ratio: f64,
    pub coef: f64,
    pub std_err: f64,
    /// Two-sided Wald p-value; absent when separation was detected.
    pub p_value: Option<f64>,
    pub n: usize,
    pub separation: bool,
}

fn invert(matrix: &mut [Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = matrix.len();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if matrix[row][col].abs() > matrix[pivot][col].abs() {
                pivot = row;
            }
        }
        if matrix[pivot][col].abs() < 1e-12 {
            return None;
        }
        matrix.swap(col, pivot);
        inv.swap(col, pivot);
        let diag = matrix[col][col];
        for j in 0..n {
            matrix[col][j] /= diag;
            inv[col][j] /= diag;
        }
        for row in 0..n {
            if row != col {
                let factor = matrix[row][col];
                for j in 0..n {
                    matrix[row][j] -= factor * matrix[col][j];
                    inv[row][j] -= factor * inv[col][j];
                }
            }
        }
    }
    Some(inv)
}

fn normal_two_sided_p(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Logistic regression of a binary outcome on standardized covariates,
/// fit by Newton-Raphson (max 100 iterations, 1e-10 log-likelihood
/// tolerance). Reports per-covariate odds ratios and Wald p-values.
/// Perfect separation is flagged instead of reported as a finite estimate.
pub fn logistic_association(
    outcomes: &[bool],
    covariates: &[(String, Vec<f64>)],
) -> Result<Vec<AssociationResult>> {
    let n = outcomes.len();
    if n < 20 {
        return Err(Error::Stats(format!("need >= 20 observations, got {n}")));
    }
    let positives = outcomes.iter().filter(|o| **o).count();
    if positives == 0 || positives == n {
        return Err(Error::Stats("both outcome classes must be present".into()));
    }
    if covariates.is_empty() {
        return Err(Error::Stats("at least one covariate required".into()));
    }
    for (name, values) in covariates {
        if values.len() != n {
            return Err(Error::Stats(format!("covariate {name} length mismatch")));
        }
    }

    // Standardize: coefficient scale is per standard deviation.
    let p = covariates.len();
    let mut x: Vec<Vec<f64>> = vec![vec![1.0; p + 1]; n];
    for (j, (name, values)) in covariates.iter().enumerate() {
        let mean: f64 = values.iter().sum::<f64>() / n as f64;
        let var: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        if var <= 0.0 {
            return Err(Error::Stats(format!("covariate {name} is constant")));
        }
        let sd = var.sqrt();
        for i in 0..n {
            x[i][j + 1] = (values[i] - mean) / sd;
        }
    }
    let y: Vec<f64> = outcomes.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();

    let mut beta = vec![0.0; p + 1];
    let mut last_ll = f64::NEG_INFINITY;
    let mut separation = false;
    let mut info_inv: Option<Vec<Vec<f64>>> = None;

    for _iter in 0..100 {
        let mut ll = 0.0;
        let mut mu = vec![0.0; n];
        for i in 0..n {
            let eta: f64 = (0..=p).map(|j| beta[j] * x[i][j]).sum();
            let m = 1.0 / (1.0 + (-eta).exp());
            mu[i] = m;
            ll += if y[i] > 0.5 { m.max(1e-300).ln() } else { (1.0 - m).max(1e-300).ln() };
        }
        // Fisher information and score.
        let mut info = vec![vec![0.0; p + 1]; p + 1];
        let mut score = vec![0.0; p + 1];
        for i in 0..n {
            let w = mu[i] * (1.0 - mu[i]);
            for j in 0..=p {
                score[j] += (y[i] - mu[i]) * x[i][j];
                for k in 0..=p {
                    info[j][k] += w * x[i][j] * x[i][k];
                }
            }
        }
        let inv = match invert(&mut info.clone()) {
            Some(inv) => inv,
            None => {
                separation = true;
                break;
            }
        };
        for j in 0..=p {
            let step: f64 = (0..=p).map(|k| inv[j][k] * score[k]).sum();
            beta[j] += step;
        }
        info_inv = Some(inv);

        if beta.iter().any(|b| b.abs() > 30.0) {
            // Diverging standardized coefficients: (quasi-)separation.
            separation = true;
            break;
        }
        if (ll - last_ll).abs() < 1e-10 && _iter > 0 {
            break;
        }
        last_ll = ll;
    }

    let inv = info_inv.unwrap_or_else(|| vec![vec![f64::NAN; p + 1]; p + 1]);
    let results = covariates
        .iter()
        .enumerate()
        .map(|(j, (name, _))| {
            let coef = beta[j + 1];
            if separation {
                AssociationResult {
                    covariate: name.clone(),
                    odds_ratio: if coef > 0.0 { f64::INFINITY } else { 0.0 },
                    coef,
                    std_err: f64::NAN,
                    p_value: None,
                    n,
                    separation: true,
                }
            } else {
                let se = inv[j + 1][j + 1].max(0.0).sqrt();
                let z = coef / se;
                AssociationResult {
                    covariate: name.clone(),
                    odds_ratio: coef.exp(),
                    coef,
                    std_err: se,
                    p_value: Some(normal_two_sided_p(z)),
                    n,
                    separation: false,
                }
            }
        })
        .collect();
    Ok(results)
}

// ---------------------------------------------------------------------------
// Exact Wilcoxon signed-rank test
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WilcoxonResult {
    /// min(W+, W-), the conventional reporting statistic.
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs remaining after zero-differences are dropped.
    pub n: usize,
}

/// Exact two-sided signed-rank test for 5..=25 pairs. Zero differences are
/// dropped; ties get average ranks. The null distribution of W+ is computed
/// exactly over all 2^n sign assignments (via dynamic programming on doubled
/// ranks), and p = min(1, 2 * min(P(W+ <= w), P(W+ >= w))).
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<WilcoxonResult> {
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n < 5 {
        return Err(Error::Stats(format!("insufficient pairs: {n} after zero-drop")));
    }
    if n > 25 {
        return Err(Error::Stats(format!("{n} pairs exceeds the exact-distribution regime")));
    }

    // Average ranks of |d|, doubled so every rank is an integer.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diffs[a].abs().partial_cmp(&diffs[b].abs()).unwrap());
    let mut ranks2 = vec![0u64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        // ranks i+1 ..= j+1 tie; doubled average = (i+1) + (j+1)
        let avg2 = (i as u64 + 1) + (j as u64 + 1);
        for &idx in &order[i..=j] {
            ranks2[idx] = avg2;
        }
        i = j + 1;
    }

    let w_plus2: u64 = diffs
        .iter()
        .zip(&ranks2)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let total2: u64 = ranks2.iter().sum();
    let w_minus2 = total2 - w_plus2;

    // Exact distribution of doubled W+ over sign assignments.
    let mut dist = vec![0.0f64; total2 as usize + 1];
    dist[0] = 1.0;
    for &r in &ranks2 {
        for s in (r as usize..dist.len()).rev() {
            dist[s] += dist[s - r as usize];
        }
    }
    let denom = 2f64.powi(n as i32);
    let p_le: f64 = dist[..=w_plus2 as usize].iter().sum::<f64>() / denom;
    let p_ge: f64 = dist[w_plus2 as usize..].iter().sum::<f64>() / denom;
    let p = (2.0 * p_le.min(p_ge)).min(1.0);

    Ok(WilcoxonResult { statistic: (w_plus2.min(w_minus2) as f64) / 2.0, p_value: p, n })
}

// ---------------------------------------------------------------------------
// pass@k
// ---------------------------------------------------------------------------

/// Unbiased pass@k estimator: 1 - C(n-c, k) / C(n, k), in product form.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64> {
    if c > n {
        return Err(Error::Stats(format!("c = {c} exceeds n = {n}")));
    }
    if k == 0 || k > n {
        return Err(Error::Stats(format!("k = {k} out of range 1..={n}")));
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut prod = 1.0;
    for i in 0..k {
        prod *= (n - c - i) as f64 / (n - i) as f64;
    }
    Ok(1.0 - prod)
}

/// Mean pass@k over tasks given (n, c) per task.
pub fn pass_at_k_table(
    per_task: &[(usize, usize)],
    ks: &[usize],
) -> Result<BTreeMap<String, f64>> {
    if per_task.is_empty() {
        return Err(Error::Stats("no tasks".into()));
    }
    let mut out = BTreeMap::new();
    for &k in ks {
        let mut sum = 0.0;
        for &(n, c) in per_task {
            sum += pass_at_k(n, c, k)?;
        }
        out.insert(format!("pass@{k}"), sum / per_task.len() as f64);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Functional evaluation
// ---------------------------------------------------------------------------

/// One functional-correctness task: the prompt is handed to the model and
/// each sampled completion is judged by an external command (exit 0 = pass).
/// The command template's `{candidate}` placeholder receives the path of a
/// file holding prompt + completion. Candidate code runs with the harness
/// user's privileges; the harness never interprets it itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalTask {
    pub id: String,
    pub prompt: String,
    pub test_command: String,
    pub timeout_s: u64,
}

pub fn load_tasks(path: &Path) -> Result<Vec<EvalTask>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionalEvalReport {
    pub pass_at_k: BTreeMap<String, f64>,
    /// (n, c) per task id.
    pub per_task: BTreeMap<String, (usize, usize)>,
    /// Tasks whose command could not be spawned; excluded from the table.
    pub invalid_tasks: Vec<String>,
}

/// Run candidates through their task commands. `sampler` produces the
/// completions for a task (the gateway is wired in by the caller). Timeouts
/// count as failures; unspawnable commands invalidate the task.
pub fn run_functional_eval(
    tasks: &[EvalTask],
    ks: &[usize],
    sampler: impl Fn(&EvalTask) -> Result<Vec<String>> + Sync,
) -> Result<FunctionalEvalReport> {
    let outcomes: Vec<(String, Option<(usize, usize)>)> = tasks
        .par_iter()
        .map(|task| {
            let completions = match sampler(task) {
                Ok(c) => c,
                Err(_) => return (task.id.clone(), None),
            };
            let n = completions.len();
            let mut passes = 0usize;
            for (i, completion) in completions.iter().enumerate() {
                match run_candidate(task, completion, i) {
                    Some(true) => passes += 1,
                    Some(false) => {}
                    None => return (task.id.clone(), None),
                }
            }
            (task.id.clone(), Some((n, passes)))
        })
        .collect();

    let mut per_task = BTreeMap::new();
    let mut invalid = Vec::new();
    for (id, outcome) in outcomes {
        match outcome {
            Some(nc) => {
                per_task.insert(id, nc);
            }
            None => invalid.push(id),
        }
    }
    if per_task.is_empty() {
        return Err(Error::Stats("no valid tasks survived functional evaluation".into()));
    }
    let rows: Vec<(usize, usize)> = per_task.values().copied().collect();
    Ok(FunctionalEvalReport {
        pass_at_k: pass_at_k_table(&rows, ks)?,
        per_task,
        invalid_tasks: invalid,
    })
}

/// Some(true/false) for pass/fail, None when the task command cannot run.
fn run_candidate(task: &EvalTask, completion: &str, sample_idx: usize) -> Option<bool> {
    if completion.trim().is_empty() {
        return Some(false);
    }
    let path = std::env::temp_dir().join(format!(
        "canarybench_cand_{}_{}_{}.py",
        std::process::id(),
        sanitize(&task.id),
        sample_idx
    ));
    let body = format!("{}{}", task.prompt, completion);
    if std::fs::write(&path, body).is_err() {
        return None;
    }
    let command = task.test_command.replace("{candidate}", &path.to_string_lossy());
    let child = std::process::Command::new("sh")
        .arg("-c")
        .arg(&command)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn();
    let mut child = match child {
        Ok(c) => c,
        Err(_) => {
            let _ = std::fs::remove_file(&path);
            return None;
        }
    };
    let verdict = match child.wait_timeout(Duration::from_secs(task.timeout_s)) {
        Ok(Some(status)) => Some(status.success()),
        Ok(None) => {
            let _ = child.kill();
            let _ = child.wait();
            Some(false) // timeout counts as fail
        }
        Err(_) => None,
    };
    let _ = std::fs::remove_file(&path);
    verdict
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_alphanumeric() { c } else { '_' }).collect()
}

// ---------------------------------------------------------------------------
// Perplexity over a corpus split
// ---------------------------------------------------------------------------

/// Corpus-pooled perplexity: exp(total NLL / total predicted tokens), every
/// token counted once. Documents longer than `max_ctx` are scored through a
/// sliding window with the given stride; `lp` returns one log-probability
/// per token after the first of the window it is handed.
pub fn perplexity_eval(
    docs: &[Vec<u32>],
    max_ctx: usize,
    stride: usize,
    mut lp: impl FnMut(&[u32]) -> Result<Vec<f64>>,
) -> Result<f64> {
    if stride == 0 || max_ctx < 2 {
        return Err(Error::Config("perplexity needs max_ctx >= 2 and stride >= 1".into()));
    }
    let mut total_nll = 0.0;
    let mut total_tokens = 0usize;
    for doc in docs {
        if doc.len() < 2 {
            continue;
        }
        if doc.len() <= max_ctx {
            let lps = lp(doc)?;
            total_nll -= lps.iter().sum::<f64>();
            total_tokens += lps.len();
            continue;
        }
        let mut scored_until = 0usize; // positions < scored_until already counted
        let mut begin = 0usize;
        loop {
            let end = (begin + max_ctx).min(doc.len());
            let lps = lp(&doc[begin..end])?;
            // lps[i] scores position begin + 1 + i
            let first_new = scored_until.max(begin + 1);
            for pos in first_new..end {
                total_nll -= lps[pos - begin - 1];
                total_tokens += 1;
            }
            scored_until = end;
            if end == doc.len() {
                break;
            }
            begin += stride;
        }
    }
    if total_tokens == 0 {
        return Err(Error::Stats("no tokens to score".into()));
    }
    Ok((total_nll / total_tokens as f64).exp())
}

// ---------------------------------------------------------------------------
// Report bundle
// ---------------------------------------------------------------------------

/// Final machine-readable report. Wall-clock telemetry deliberately lives
/// outside this structure (referenced by path) so that report bundles are
/// byte-identical across reruns of the same seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct Report {
    pub schema_version: u32,
    pub config_fingerprint: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_distribution: Option<BTreeMap<String, f64>>,
    /// role -> "category/kind" -> extraction rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction_rates: Option<BTreeMap<String, BTreeMap<String, f64>>>,
    /// "category@epsilon" -> relative reduction vs the non-DP baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reductions: Option<BTreeMap<String, Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perplexity: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_at_k: Option<BTreeMap<String, BTreeMap<String, f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub associations: Option<Vec<AssociationResult>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wilcoxon: Option<BTreeMap<String, WilcoxonResult>>,
    /// role -> accounted (epsilon, minimizing alpha).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accounted_epsilon: Option<BTreeMap<String, (f64, f64)>>,
    /// role -> mean clipped fraction over the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clipped_fraction: Option<BTreeMap<String, f64>>,
    /// epoch-to-epoch Jaccard similarity of memorized sets, per role.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consolidation: Option<BTreeMap<String, Vec<f64>>>,
    /// Path (relative to the run directory) of the volatile telemetry file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub telemetry_ref: Option<String>,
}

/// Write `report.json` plus CSV tables into `dir`.
pub fn emit_report(report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(dir.join("report.json"), json.as_bytes())?;

    if let Some(rates) = &report.extraction_rates {
        let mut w = csv::Writer::from_path(dir.join("extraction_rates.csv"))?;
        w.write_record(["role", "slice", "rate"])?;
        for (role, by_slice) in rates {
            for (slice, rate) in by_slice {
                w.write_record([role.as_str(), slice.as_str(), &format!("{rate:.6}")])?;
            }
        }
        w.flush()?;
    }
    if let Some(assocs) = &report.associations {
        let mut w = csv::Writer::from_path(dir.join("associations.csv"))?;
        w.write_record(["covariate", "odds_ratio", "coef", "std_err", "p_value", "n"])?;
        for a in assocs {
            w.write_record([
                a.covariate.as_str(),
                &format!("{:.6}", a.odds_ratio),
                &format!("{:.6}", a.coef),
                &format!("{:.6}", a.std_err),
                &a.p_value.map(|p| format!("{p:.6}")).unwrap_or_else(|| "n/a".into()),
                &a.n.to_string(),
            ])?;
        }
        w.flush()?;
    }
    if let Some(ppl) = &report.perplexity {
        let mut w = csv::Writer::from_path(dir.join("perplexity.csv"))?;
        w.write_record(["role", "perplexity"])?;
        for (role, v) in ppl {
            w.write_record([role.as_str(), &format!("{v:.6}")])?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn load_report(dir: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(dir.join("report.json"))?;
    Ok(serde_json::from_str(&text)?)
}
