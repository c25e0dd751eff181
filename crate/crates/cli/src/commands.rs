use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use blockcot::dast::{self, BudgetStats};
use blockcot::decoder::{CapSpec, Decoder};
use blockcot::format::{
    parse_trace_with, ConsistencyReport, FormatError, ParseMode,
    ReasoningTrace,
};
use blockcot::metrics::{self, DifficultySplits, ResponseOutcome};
use blockcot::rl::{self, pairwise_sum, Multipliers, RewardConfig};
use blockcot::segment::validate_segmentation;
use blockcot::sim::{self, SimPolicy, SimPolicyConfig};
use blockcot::{ProblemRecord, SampledResponse};
use serde_json::{json, Value};

use crate::jsonl::{self, read_records, Output, Record};
use crate::{Io, ModeArg, ScaleArg, SimArgs, Status};

fn mode(lenient: bool) -> ParseMode {
    if lenient {
        ParseMode::Lenient
    } else {
        ParseMode::Strict
    }
}

fn reward_config(path: Option<&Path>) -> Result<RewardConfig> {
    let config: RewardConfig = match path {
        Some(p) => jsonl::read_toml(p)?,
        None => RewardConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

/// A response record with its parse result and measured length.
struct Row {
    rec: Record,
    problem_id: String,
    correct: bool,
    length: usize,
    truncated: bool,
    trace: Result<ReasoningTrace, FormatError>,
}

impl Row {
    fn sampled(&self) -> Option<SampledResponse> {
        let trace = self.trace.as_ref().ok()?.clone();
        Some(SampledResponse {
            problem_id: self.problem_id.clone(),
            trace,
            correct: self.correct,
            length: self.length,
            truncated: self.truncated,
            logprob_policy: None,
            logprob_ref: None,
        })
    }

    fn outcome(&self) -> ResponseOutcome {
        ResponseOutcome {
            problem_id: self.problem_id.clone(),
            correct: self.correct,
            length: self.length,
            truncated: self.truncated,
            trace: self.trace.clone(),
        }
    }
}

fn read_rows(io: &Io, mode: ParseMode, config: &RewardConfig) -> Result<Vec<Row>> {
    read_records(io.input.as_deref())?
        .into_iter()
        .enumerate()
        .map(|(i, rec)| {
            let line = i + 1;
            let problem_id = jsonl::get_str(&rec, "problem_id", line)?.to_string();
            let text = jsonl::get_str(&rec, "text", line)?;
            let correct = jsonl::get_bool(&rec, "correct", line)?;
            let truncated = jsonl::opt_bool(&rec, "truncated", line)?;
            let length = match jsonl::opt_usize(&rec, "length", line)? {
                Some(l) => l,
                None => config.length_unit.measure(text),
            };
            let trace = parse_trace_with(text, mode);
            Ok(Row {
                problem_id,
                correct,
                length,
                truncated,
                trace,
                rec,
            })
        })
        .collect()
}

/// Row indices grouped by problem, groups in order of first appearance.
fn groups(rows: &[Row]) -> Vec<(String, Vec<usize>)> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let g = *index.entry(&r.problem_id).or_insert_with(|| {
            out.push((r.problem_id.clone(), Vec::new()));
            out.len() - 1
        });
        out[g].1.push(i);
    }
    out
}

fn trace_json(trace: &ReasoningTrace) -> Value {
    json!({
        "declared_count": trace.declared_count,
        "actual_count": trace.actual_count(),
        "blocks": trace.blocks,
        "final_response": trace.final_response,
    })
}

pub fn parse(io: &Io, lenient: bool) -> Result<Status> {
    let mut out = Output::open(io.out.as_deref())?;
    for (i, mut rec) in read_records(io.input.as_deref())?.into_iter().enumerate() {
        let text = jsonl::get_str(&rec, "text", i + 1)?;
        match parse_trace_with(text, mode(lenient)) {
            Ok(t) => rec.insert("trace".into(), trace_json(&t)),
            Err(e) => rec.insert("parse_error".into(), serde_json::to_value(&e)?),
        };
        out.line(&rec)?;
    }
    out.finish()?;
    Ok(Status::Ok)
}

pub fn validate(io: &Io, lenient: bool) -> Result<Status> {
    let mut out = Output::open(io.out.as_deref())?;
    let mut status = Status::Ok;
    for (i, mut rec) in read_records(io.input.as_deref())?.into_iter().enumerate() {
        let text = jsonl::get_str(&rec, "text", i + 1)?;
        let report: ConsistencyReport = blockcot::format::check_text(text, mode(lenient));
        if !report.is_consistent {
            status = Status::Invalid;
        }
        rec.insert("consistency".into(), serde_json::to_value(&report)?);
        out.line(&rec)?;
    }
    out.finish()?;
    Ok(status)
}

/// Budget and rewards for one group. Rewards only need lengths and
/// correctness, so responses that failed to parse still count.
fn score_rows(rows: &[Row], idx: &[usize]) -> Result<(BudgetStats, Vec<f64>), dast::DastError> {
    let group: Vec<SampledResponse> = idx
        .iter()
        .map(|&i| {
            let r = &rows[i];
            r.sampled().unwrap_or_else(|| SampledResponse {
                problem_id: r.problem_id.clone(),
                trace: ReasoningTrace::no_think(""),
                correct: r.correct,
                length: r.length,
                truncated: r.truncated,
                logprob_policy: None,
                logprob_ref: None,
            })
        })
        .collect();
    dast::score_group(&group)
}

pub fn dast_score(io: &Io, config: Option<&Path>) -> Result<Status> {
    let config = reward_config(config)?;
    let mut rows = read_rows(io, ParseMode::Lenient, &config)?;
    let mut status = Status::Ok;
    for (_, idx) in groups(&rows) {
        match score_rows(&rows, &idx) {
            Ok((stats, rewards)) => {
                for (&i, reward) in idx.iter().zip(rewards) {
                    let length = rows[i].length;
                    let rec = &mut rows[i].rec;
                    rec.insert("length".into(), json!(length));
                    rec.insert("reward".into(), json!(reward));
                    rec.insert("budget".into(), serde_json::to_value(stats)?);
                }
            }
            Err(e) => {
                status = Status::Invalid;
                for &i in &idx {
                    rows[i].rec.insert("error".into(), json!(e.to_string()));
                }
            }
        }
    }
    let mut out = Output::open(io.out.as_deref())?;
    for r in &rows {
        out.line(&r.rec)?;
    }
    out.finish()?;
    Ok(status)
}

pub fn make_pairs(io: &Io, config: Option<&Path>, delta: Option<f64>, lenient: bool) -> Result<Status> {
    let config = reward_config(config)?;
    let delta = delta.unwrap_or(config.pair_delta);
    if !(delta >= 0.0) {
        bail!("--delta must be non-negative");
    }
    let rows = read_rows(io, mode(lenient), &config)?;
    let mut out = Output::open(io.out.as_deref())?;
    let mut status = Status::Ok;
    for (problem_id, idx) in groups(&rows) {
        let (_, rewards) = match score_rows(&rows, &idx) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("warning: problem {problem_id}: {e}; no pairs emitted");
                status = Status::Invalid;
                continue;
            }
        };
        // block counts are undefined for unparseable responses
        let usable: Vec<(usize, f64)> = idx
            .iter()
            .zip(&rewards)
            .filter(|(&i, _)| rows[i].trace.is_ok())
            .map(|(&i, &r)| (i, r))
            .collect();
        if usable.len() < idx.len() {
            eprintln!(
                "warning: problem {problem_id}: {} unparseable responses left out of pairing",
                idx.len() - usable.len()
            );
        }
        let usable_rewards: Vec<f64> = usable.iter().map(|(_, r)| *r).collect();
        let counts: Vec<usize> = usable
            .iter()
            .map(|(i, _)| rows[*i].trace.as_ref().map_or(0, |t| t.declared_count))
            .collect();
        for (j, k) in dast::pair_indices(&usable_rewards, &counts, delta) {
            let (cj, rj) = usable[j];
            let (ck, rk) = usable[k];
            out.line(&json!({
                "problem_id": problem_id,
                "chosen_text": rows[cj].rec["text"],
                "rejected_text": rows[ck].rec["text"],
                "reward_chosen": rj,
                "reward_rejected": rk,
            }))?;
        }
    }
    out.finish()?;
    Ok(status)
}

fn read_reference(path: &Path) -> Result<HashMap<String, f64>> {
    let mut out = HashMap::new();
    for (i, rec) in read_records(Some(path))?.into_iter().enumerate() {
        let id = jsonl::get_str(&rec, "problem_id", i + 1)?.to_string();
        let flags = rec
            .get("ref_correct")
            .and_then(Value::as_array)
            .ok_or_else(|| anyhow!("reference record {}: missing array ref_correct", i + 1))?;
        let flags: Vec<bool> = flags
            .iter()
            .map(|v| match v {
                Value::Bool(b) => Ok(*b),
                Value::Number(n) if n.as_u64() == Some(0) => Ok(false),
                Value::Number(n) if n.as_u64() == Some(1) => Ok(true),
                _ => Err(anyhow!("reference record {}: entries must be 0/1 or booleans", i + 1)),
            })
            .collect::<Result<_>>()?;
        let r_ref = rl::reference_reward_estimate(&flags)
            .with_context(|| format!("reference record {}", i + 1))?;
        out.insert(id, r_ref);
    }
    Ok(out)
}

pub fn advantage(
    io: &Io,
    config: Option<&Path>,
    reference: Option<&Path>,
    scale: ScaleArg,
    summary: bool,
    lenient: bool,
) -> Result<Status> {
    let config = reward_config(config)?;
    let mut rows = read_rows(io, mode(lenient), &config)?;
    let refs = reference.map(read_reference).transpose()?;

    let mut r_refs = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let v = match &refs {
            Some(m) => *m
                .get(&r.problem_id)
                .ok_or_else(|| anyhow!("no reference samples for problem {:?}", r.problem_id))?,
            None => jsonl::get_f64(&r.rec, "r_ref", i + 1)
                .context("pass --ref or give each record an r_ref")?,
        };
        r_refs.push(v);
    }

    let batch_p = rows.iter().filter(|r| r.correct).count() as f64 / rows.len().max(1) as f64;
    let mut status = Status::Ok;
    let mut totals = Vec::new();
    let mut scored: Vec<(SampledResponse, f64)> = Vec::new();
    let mut uniform_lambdas: Option<Multipliers> = None;
    for (_, idx) in groups(&rows) {
        let group: Vec<Option<SampledResponse>> = idx.iter().map(|&i| rows[i].sampled()).collect();
        let p = match scale {
            ScaleArg::Batch => batch_p,
            _ => rl::empirical_accuracy(group.iter().flatten()),
        };
        let h = match scale {
            ScaleArg::None => 1.0,
            _ => rl::accuracy_scale(p, &config),
        };
        let lambdas = rl::scaled_multipliers(&config, h);
        if !matches!(scale, ScaleArg::PerProblem) {
            uniform_lambdas = Some(lambdas);
        }
        for (&i, resp) in idx.iter().zip(group) {
            let rec = &mut rows[i].rec;
            match resp {
                Some(resp) => {
                    let a = rl::advantage(&resp, r_refs[i], &lambdas, &config);
                    totals.push(a.total);
                    scored.push((resp, r_refs[i]));
                    rec.insert("accuracy".into(), json!(p));
                    rec.insert("h".into(), json!(h));
                    rec.insert("lambdas".into(), json!(lambdas.0));
                    rec.insert("advantage".into(), serde_json::to_value(a)?);
                }
                None => {
                    status = Status::Invalid;
                    let err = rows[i].trace.as_ref().err().map(ToString::to_string);
                    rows[i].rec.insert("error".into(), json!(err));
                }
            }
        }
    }

    let mut out = Output::open(io.out.as_deref())?;
    for r in &rows {
        out.line(&r.rec)?;
    }
    if summary && !totals.is_empty() {
        let mut s = json!({
            "samples": totals.len(),
            "mean_advantage": pairwise_sum(&totals) / totals.len() as f64,
        });
        if let Some(l) = uniform_lambdas {
            s["lagrangian"] = serde_json::to_value(rl::rollout_objective(&scored, &l, &config)?)?;
        }
        out.line(&json!({ "summary": s }))?;
    }
    out.finish()?;
    Ok(status)
}

pub fn ppo_loss(io: &Io, config: Option<&Path>) -> Result<Status> {
    let config = reward_config(config)?;
    let mut out = Output::open(io.out.as_deref())?;
    let mut status = Status::Ok;
    for (i, mut rec) in read_records(io.input.as_deref())?.into_iter().enumerate() {
        let line = i + 1;
        let logp_new = jsonl::get_f64(&rec, "logp_new", line)?;
        let logp_old = jsonl::get_f64(&rec, "logp_old", line)?;
        let adv = jsonl::get_f64(&rec, "advantage", line)?;
        match rl::ppo_surrogate(logp_new, logp_old, adv, &config) {
            Ok(s) => {
                rec.insert("ratio".into(), json!((logp_new - logp_old).exp()));
                rec.insert("surrogate".into(), json!(s));
            }
            Err(e) => {
                status = Status::Invalid;
                rec.insert("error".into(), json!(e.to_string()));
            }
        }
        out.line(&rec)?;
    }
    out.finish()?;
    Ok(status)
}

fn sim_setup(args: &SimArgs) -> Result<(SimPolicy, Vec<ProblemRecord>, u64)> {
    let config: SimPolicyConfig = match &args.sim_config {
        Some(p) => jsonl::read_toml(p)?,
        None => SimPolicyConfig::default(),
    };
    let seed = args.seed.unwrap_or(config.seed);
    let policy = sim::make_sim_policy(config)?;
    let problems = match &args.problems {
        Some(p) => jsonl::read_typed(p)?,
        None => sim::synthetic_problems(args.num_problems),
    };
    if args.samples == 0 {
        bail!("--samples must be at least 1");
    }
    Ok((policy, problems, seed))
}

pub fn decode_sim(
    args: &SimArgs,
    out: Option<&Path>,
    mode: ModeArg,
    cap_low: usize,
    cap_high: Option<usize>,
    greedy: bool,
    retry_budget: usize,
) -> Result<Status> {
    let (policy, problems, seed) = sim_setup(args)?;
    let cap = match mode {
        ModeArg::Auto => CapSpec::auto(),
        ModeArg::Override => {
            let hi = cap_high.unwrap_or(policy.config().max_blocks);
            if cap_low > hi {
                bail!("--cap-low {cap_low} exceeds --cap-high {hi}");
            }
            CapSpec::range(cap_low, hi)
        }
    };
    let decoder = Decoder {
        cap,
        greedy,
        retry_budget,
    };
    let responses = sim::decode_problems(&policy, &problems, &decoder, args.samples, seed)?;
    let difficulty: HashMap<&str, f64> = problems.iter().map(|p| (p.id.as_str(), p.difficulty)).collect();
    let mut status = Status::Ok;
    let mut w = Output::open(out)?;
    for r in &responses {
        let violation = r.trace.mismatch() != 0;
        if violation {
            status = Status::Invalid;
        }
        w.line(&json!({
            "problem_id": r.problem_id,
            "difficulty": difficulty[r.problem_id.as_str()],
            "k": r.trace.actual_count(),
            "declared_count": r.trace.declared_count,
            "text": r.text(),
            "correct": r.correct,
            "length": r.length,
            "truncated": r.truncated,
            "policy_violation": violation,
        }))?;
    }
    w.finish()?;
    Ok(status)
}

pub fn cap_sweep(args: &SimArgs, out: Option<&Path>, caps: &str, table: bool) -> Result<Status> {
    let (policy, problems, seed) = sim_setup(args)?;
    let caps: Vec<CapSpec> = caps
        .split(',')
        .map(CapSpec::parse)
        .collect::<Result<_, _>>()
        .map_err(|e| anyhow!(e))?;
    let report = sim::run_cap_sweep(&policy, &problems, &caps, args.samples, seed)?;
    let mut w = Output::open(out)?;
    if table {
        w.text(&report.render_table())?;
    } else {
        for row in &report.rows {
            w.line(row)?;
        }
    }
    w.finish()?;
    Ok(Status::Ok)
}

pub fn segment_check(io: &Io) -> Result<Status> {
    let mut out = Output::open(io.out.as_deref())?;
    let mut status = Status::Ok;
    for (i, rec) in read_records(io.input.as_deref())?.into_iter().enumerate() {
        let line = i + 1;
        let id = rec.get("id").cloned().unwrap_or(Value::Null);
        let difficulty = jsonl::get_f64(&rec, "difficulty", line)?;
        let original = jsonl::get_str(&rec, "original", line)?;
        let segmented = jsonl::get_str(&rec, "segmented", line)?;
        let report = validate_segmentation(original, segmented, difficulty);
        if !report.is_valid() {
            status = Status::Invalid;
        }
        let mut v = serde_json::to_value(&report)?;
        v["id"] = id;
        v["valid"] = json!(report.is_valid());
        out.line(&v)?;
    }
    out.finish()?;
    Ok(status)
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s
        .split_once('-')
        .ok_or_else(|| anyhow!("range {s:?} must look like LOW-HIGH"))?;
    let (a, b): (f64, f64) = (a.trim().parse()?, b.trim().parse()?);
    if a > b {
        bail!("range {s:?} is empty");
    }
    Ok((a, b))
}

pub fn stats(
    io: &Io,
    problems: &Path,
    config: Option<&Path>,
    easy: &str,
    difficult: &str,
    lenient: bool,
    table: bool,
) -> Result<Status> {
    let config = reward_config(config)?;
    let splits = DifficultySplits {
        easy: parse_range(easy)?,
        difficult: parse_range(difficult)?,
    };
    let problems: Vec<ProblemRecord> = jsonl::read_typed(problems)?;
    let mut difficulties = HashMap::new();
    for p in problems {
        if difficulties.insert(p.id.clone(), p.difficulty).is_some() {
            bail!("duplicate problem id {:?}", p.id);
        }
    }
    let rows = read_rows(io, mode(lenient), &config)?;
    let outcomes: Vec<ResponseOutcome> = rows.iter().map(Row::outcome).collect();
    let report = metrics::evaluate(&outcomes, &difficulties, &splits)?;
    let mut out = Output::open(io.out.as_deref())?;
    if table {
        out.text(&render_report(&report))?;
    } else {
        out.line(&report)?;
    }
    out.finish()?;
    Ok(Status::Ok)
}

fn render_report(r: &metrics::EvalReport) -> String {
    let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.1}%", 100.0 * x));
    let mut s = format!(
        "responses      {}\nlength mean    {:.1}\nlength std     {:.1} (population)\nbad cases      {:.1}% (parse {}, mismatch {}, truncated {})\naccuracy       {} overall, {} easy, {} difficult\n",
        r.responses,
        r.mean_length_correct,
        r.std_length_correct,
        100.0 * r.bad_case_ratio,
        r.bad_cases.parse_failures,
        r.bad_cases.mismatches,
        r.bad_cases.truncated,
        pct(r.accuracy_overall),
        pct(r.accuracy_easy),
        pct(r.accuracy_difficult),
    );
    s.push_str("blocks        ");
    for (k, n) in &r.block_histogram {
        s.push_str(&format!(" {k}:{n}"));
    }
    s.push('\n');
    s
}
