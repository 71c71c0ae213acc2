//! Command implementations behind the CLI surface.

use std::fs;
use std::io::{BufReader, Write};
use std::path::Path;

use serde_json::json;

use triepack::advantage::{
    batch_difficulty, deviation_score, shape, should_resample, AdvantageGroup,
};
use triepack::decompose::{decompose as split_session, subtree_trajectories};
use triepack::encoder::{encode_pack, Normalization};
use triepack::masking::{build_loss_mask, MaskPolicy};
use triepack::planner::{plan_packs, validate_plan};
use triepack::trajectory::{parse_sessions, session_to_json, SessionTree, Trajectory};
use triepack::trie::{build_trie, trie_stats, Trie};
use triepack::verifier::{grad_check, init_model, GradMode};

use crate::records::{fmt_f64, GroupRecord, PackHeader, PackRecord};
use crate::{CliError, SessionArgs};

/// Writes via a temp file in the same directory, then renames into place.
fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(contents.as_bytes())?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn read_sessions(args: &SessionArgs) -> Result<Vec<SessionTree>, CliError> {
    let file = fs::File::open(&args.input)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.input.display())))?;
    Ok(parse_sessions(BufReader::new(file), !args.lenient)?)
}

fn policy(args: &SessionArgs) -> MaskPolicy {
    MaskPolicy {
        mask_non_assistant: !args.keep_non_assistant,
        preserve_recovery: !args.no_preserve_recovery,
    }
}

/// The training corpus: every session decomposed at its boundaries, one
/// masked trajectory per subtree leaf.
fn pipeline_trajectories(sessions: &[SessionTree], policy: MaskPolicy) -> Vec<Trajectory> {
    sessions
        .iter()
        .flat_map(|session| {
            split_session(session)
                .iter()
                .flat_map(|subtree| subtree_trajectories(subtree, session, policy))
                .collect::<Vec<_>>()
        })
        .collect()
}

fn trajectory_line(traj: &Trajectory) -> String {
    json!({
        "traj_id": traj.traj_id,
        "tokens": traj.tokens,
        "loss_mask": traj.loss_mask,
    })
    .to_string()
}

fn parse_normalization(name: &str) -> Result<Normalization, CliError> {
    name.parse().map_err(CliError::Usage)
}

pub(crate) fn mask(args: &SessionArgs, output: &Path) -> Result<(), CliError> {
    let sessions = read_sessions(args)?;
    let policy = policy(args);
    let mut out = String::new();
    for session in &sessions {
        for leaf in session.leaves() {
            let traj = build_loss_mask(session, leaf, policy)
                .map_err(|e| CliError::Input(e.to_string()))?;
            out.push_str(&trajectory_line(&traj));
            out.push('\n');
        }
    }
    write_atomic(output, &out)?;
    Ok(())
}

pub(crate) fn decompose(args: &SessionArgs, output: &Path) -> Result<(), CliError> {
    let sessions = read_sessions(args)?;
    let policy = policy(args);
    let mut out = String::new();
    for session in &sessions {
        for subtree in split_session(session) {
            let trajectories: Vec<serde_json::Value> =
                subtree_trajectories(&subtree, session, policy)
                    .iter()
                    .map(|t| {
                        json!({
                            "traj_id": t.traj_id,
                            "tokens": t.tokens,
                            "loss_mask": t.loss_mask,
                        })
                    })
                    .collect();
            let line = json!({
                "session_id": session.session_id,
                "root": subtree.root_message,
                "messages": subtree.messages,
                "trajectories": trajectories,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
    }
    write_atomic(output, &out)?;
    Ok(())
}

fn build_corpus_trie(args: &SessionArgs) -> Result<(Vec<Trajectory>, Trie), CliError> {
    let sessions = read_sessions(args)?;
    let trajectories = pipeline_trajectories(&sessions, policy(args));
    let trie = build_trie(&trajectories)?;
    Ok((trajectories, trie))
}

pub(crate) fn pack(
    args: &SessionArgs,
    output: &Path,
    budget: usize,
    dp_width: usize,
    normalization: &str,
) -> Result<(), CliError> {
    let normalization = parse_normalization(normalization)?;
    let (trajectories, trie) = build_corpus_trie(args)?;
    let plan = plan_packs(&trie, budget, dp_width)?;
    let report = validate_plan(&plan, &trie);
    if !report.is_ok() {
        return Err(CliError::Verification(format!(
            "plan failed validation: {report:?}"
        )));
    }

    let stats = trie_stats(&trie);
    let mut out = PackHeader {
        budget,
        normalization: normalization.as_str().to_string(),
        n_trajectories: trajectories.len(),
        n_packs: plan.packs.len(),
        total_cost: plan.total_cost,
        unpacked_tokens: stats.unpacked_tokens,
        unique_tokens: stats.unique_tokens,
    }
    .to_line();
    out.push('\n');
    for (i, (members, &cost)) in plan.packs.iter().zip(&plan.cost_per_pack).enumerate() {
        let encoded = encode_pack(&trie, members, normalization, trajectories.len())
            .map_err(|e| CliError::Input(e.to_string()))?;
        let record = PackRecord::new(i, members.iter().cloned().collect(), cost, &encoded);
        out.push_str(&record.to_line());
        out.push('\n');
    }
    write_atomic(output, &out)?;
    Ok(())
}

pub(crate) struct VerifyArgs<'a> {
    pub session: &'a SessionArgs,
    pub output: Option<&'a Path>,
    pub seed: u64,
    pub vocab: Option<usize>,
    pub hidden: usize,
    pub budget: Option<usize>,
    pub dp_width: usize,
    pub normalization: &'a str,
    pub mode: &'a str,
    pub loss_tol: f64,
    pub grad_tol: Option<f64>,
}

pub(crate) fn verify(args: VerifyArgs) -> Result<(), CliError> {
    let normalization = parse_normalization(args.normalization)?;
    let mode: GradMode = args.mode.parse().map_err(CliError::Usage)?;
    let grad_tol = args.grad_tol.unwrap_or(match mode {
        GradMode::Analytic => 1e-6,
        GradMode::Numeric => 1e-4,
    });

    let (trajectories, trie) = build_corpus_trie(args.session)?;
    let vocab = args.vocab.unwrap_or_else(|| {
        let max = trajectories
            .iter()
            .flat_map(|t| t.tokens.iter().copied())
            .max()
            .unwrap_or(0) as usize;
        (max + 1).max(2)
    });
    let budget = args
        .budget
        .unwrap_or_else(|| trie_stats(&trie).unique_tokens);
    let plan = plan_packs(&trie, budget, args.dp_width)?;
    let model = init_model(args.seed, vocab, args.hidden)?;
    let report = grad_check(&model, &trajectories, &plan, normalization, mode)?;

    let pass = report.loss_rel_err <= args.loss_tol && report.max_rel_grad_err <= grad_tol;
    let blocks: Vec<String> = report
        .block_errors
        .iter()
        .map(|(name, err)| format!("\"{name}\":{}", fmt_f64(*err)))
        .collect();
    let text = format!(
        "{{\"mode\":\"{}\",\"seed\":{},\"vocab\":{},\"hidden\":{},\"normalization\":\"{}\",\"budget\":{},\"n_trajectories\":{},\"n_packs\":{},\"loss_packed\":{},\"loss_unpacked\":{},\"loss_rel_err\":{},\"max_rel_grad_err\":{},\"block_errors\":{{{}}},\"loss_tol\":{},\"grad_tol\":{},\"pass\":{}}}\n",
        report.mode.as_str(),
        args.seed,
        vocab,
        args.hidden,
        normalization.as_str(),
        budget,
        trajectories.len(),
        plan.packs.len(),
        fmt_f64(report.loss_packed),
        fmt_f64(report.loss_unpacked),
        fmt_f64(report.loss_rel_err),
        fmt_f64(report.max_rel_grad_err),
        blocks.join(","),
        fmt_f64(args.loss_tol),
        fmt_f64(grad_tol),
        pass
    );
    match args.output {
        Some(path) => write_atomic(path, &text)?,
        None => print!("{text}"),
    }
    if pass {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "loss rel err {} (tol {}), max grad rel err {} (tol {})",
            report.loss_rel_err, args.loss_tol, report.max_rel_grad_err, grad_tol
        )))
    }
}

pub(crate) fn advantage(
    input: &Path,
    output: &Path,
    lambda: f64,
    mu: f64,
    tau: f64,
    lenient: bool,
) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(CliError::Usage(format!("tau must be in [0, 1], got {tau}")));
    }
    let text = fs::read_to_string(input)
        .map_err(|e| CliError::Input(format!("{}: {e}", input.display())))?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(GroupRecord::parse(line, idx + 1, !lenient).map_err(CliError::Input)?);
    }
    if records.is_empty() {
        return Err(CliError::Input("no groups in input".into()));
    }

    let groups: Vec<AdvantageGroup> = records
        .iter()
        .map(|r| AdvantageGroup {
            group_id: r.group_id.clone(),
            rewards: r.rewards.clone(),
            entropies: r.entropies.clone(),
            lambda: r.lambda.unwrap_or(lambda),
            mu: r.mu.unwrap_or(mu),
        })
        .collect();
    for g in &groups {
        g.validate().map_err(|e| CliError::Input(e.to_string()))?;
    }
    let d_bar = batch_difficulty(&groups);

    let mut out = String::new();
    for (record, group) in records.iter().zip(&groups) {
        let shaped = shape(group, d_bar).map_err(|e| CliError::Input(e.to_string()))?;
        let fmt_vec = |v: &[f64]| {
            let items: Vec<String> = v.iter().map(|&x| fmt_f64(x)).collect();
            format!("[{}]", items.join(","))
        };
        let mut line = format!(
            "{{\"group_id\":{},\"difficulty\":{},\"alpha\":{},\"base\":{},\"beta\":{},\"shaped\":{}",
            serde_json::to_string(&record.group_id).expect("string"),
            fmt_f64(shaped.difficulty),
            fmt_f64(shaped.alpha),
            fmt_vec(&shaped.base),
            fmt_vec(&shaped.beta),
            fmt_vec(&shaped.shaped),
        );
        match (&record.candidate, &record.references) {
            (Some(candidate), Some(references)) => {
                let score = deviation_score(candidate, references)
                    .map_err(|e| CliError::Input(e.to_string()))?;
                line.push_str(&format!(
                    ",\"deviation\":{},\"resample\":{}",
                    fmt_f64(score),
                    should_resample(score, tau)
                ));
            }
            (None, None) => {}
            _ => {
                return Err(CliError::Input(format!(
                    "group `{}`: candidate and references must appear together",
                    record.group_id
                )))
            }
        }
        line.push_str("}\n");
        out.push_str(&line);
    }
    write_atomic(output, &out)?;
    Ok(())
}

pub(crate) fn stats(
    args: &SessionArgs,
    output: &Path,
    echo: Option<&Path>,
) -> Result<(), CliError> {
    let sessions = read_sessions(args)?;
    let policy = policy(args);
    let n_subtrees: usize = sessions.iter().map(|s| split_session(s).len()).sum();
    let trajectories = pipeline_trajectories(&sessions, policy);
    let all_zero = trajectories.iter().filter(|t| t.is_all_masked()).count();
    let trie = build_trie(&trajectories)?;
    let stats = trie_stats(&trie);

    let text = format!(
        "{{\"sessions\":{},\"messages\":{},\"subtrees\":{},\"trajectories\":{},\"all_zero_mask_trajectories\":{},\"unpacked_tokens\":{},\"unique_tokens\":{},\"sharing_ratio\":{}}}\n",
        sessions.len(),
        sessions.iter().map(|s| s.messages.len()).sum::<usize>(),
        n_subtrees,
        trajectories.len(),
        all_zero,
        stats.unpacked_tokens,
        stats.unique_tokens,
        fmt_f64(stats.sharing_ratio)
    );
    write_atomic(output, &text)?;

    if let Some(echo_path) = echo {
        let mut echoed = String::new();
        for session in &sessions {
            echoed.push_str(&session_to_json(session));
            echoed.push('\n');
        }
        write_atomic(echo_path, &echoed)?;
    }
    Ok(())
}
