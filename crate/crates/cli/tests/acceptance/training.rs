use std::path::{Path, PathBuf};

use protchat_core::config::SplitChoice;
use protchat_core::pipeline::{run_align, run_eval, run_pretrain, run_tune, RunOptions};

use crate::util::{ensure, fail, files_below, toy_run, Outcome};

/// 32 toy proteins, full-batch alignment, then cross-level retrieval over
/// the whole corpus.
pub fn retrieval_transfer() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail)?;
    let cfg = toy_run(
        dir.path(),
        32,
        1,
        &[
            "data.eval_count=0",
            "pretrain.steps=100",
            "pretrain.warmup=10",
            "alignment.steps=2000",
            "alignment.batch_size=32",
            "alignment.warmup=100",
            "alignment.checkpoint_every=2000",
            "tune.steps=2",
            "tune.warmup=1",
            "tune.batch_size=2",
        ],
    )?;
    run_pretrain(&cfg, RunOptions::default()).map_err(fail)?;
    let align = run_align(&cfg, RunOptions::default()).map_err(fail)?;
    run_tune(&cfg, RunOptions::default()).map_err(fail)?;
    let report = run_eval(&cfg, SplitChoice::All).map_err(fail)?;
    let cl = report.cross_level.ok_or("report has no cross-level retrieval")?;
    let detail = format!("Acc@1 {:.3}, R@20 {:.3} after {} steps", cl.acc, cl.r_at_20, align.steps_done);
    ensure!(cl.acc >= 0.9 && cl.r_at_20 == 1.0, "{detail}");
    Ok(detail)
}

const TUNE_LIMIT: u64 = 5000;
const TUNE_CHUNK: u64 = 100;

/// Eight instruction pairs, decoder unfrozen. Tuning runs in resumable
/// chunks until greedy answers match every gold answer.
pub fn memorization() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail)?;
    let limit = format!("tune.steps={TUNE_LIMIT}");
    let chunk = format!("tune.checkpoint_every={TUNE_CHUNK}");
    let cfg = toy_run(
        dir.path(),
        8,
        1,
        &[
            "data.eval_count=0",
            "pretrain.steps=50",
            "pretrain.batch_size=8",
            "pretrain.warmup=5",
            "alignment.steps=50",
            "alignment.batch_size=8",
            "alignment.warmup=5",
            &limit,
            &chunk,
            "tune.batch_size=8",
            "tune.warmup=50",
            "tune.train_decoder=true",
        ],
    )?;
    run_pretrain(&cfg, RunOptions::default()).map_err(fail)?;
    run_align(&cfg, RunOptions::default()).map_err(fail)?;

    let mut done = 0;
    while done < TUNE_LIMIT {
        let opts = RunOptions {
            resume: done > 0,
            stop_after: Some(done + TUNE_CHUNK),
        };
        done = run_tune(&cfg, opts).map_err(fail)?.steps_done;
        let report = run_eval(&cfg, SplitChoice::Train).map_err(fail)?;
        let exact = report.examples.iter().filter(|e| e.exact_match == 1).count();
        if exact == report.examples.len() {
            let a = &report.aggregate;
            let detail = format!(
                "{exact}/{} exact after {done} steps, exact_match {:.3}, BLEU-1 {:.3}",
                report.examples.len(),
                a.exact_match,
                a.bleu1
            );
            ensure!(report.examples.len() == 8, "{detail}");
            ensure!(a.exact_match == 1.0 && a.bleu1 == 1.0, "{detail}");
            return Ok(detail);
        }
    }
    Err(format!("answers still differ after {TUNE_LIMIT} steps"))
}

/// All three stages plus evaluation; returns every output file with its
/// bytes, and checks the freezing hashes of each stage on the way.
fn full_run(dir: &Path) -> Result<(Vec<(PathBuf, Vec<u8>)>, Vec<String>), String> {
    let cfg = toy_run(
        dir,
        16,
        2,
        &[
            "data.eval_count=4",
            "pretrain.steps=60",
            "pretrain.batch_size=8",
            "pretrain.checkpoint_every=25",
            "alignment.steps=60",
            "alignment.batch_size=8",
            "alignment.checkpoint_every=25",
            "tune.steps=60",
            "tune.batch_size=8",
            "tune.checkpoint_every=25",
            "tune.train_decoder=false",
        ],
    )?;
    let reports = [
        run_pretrain(&cfg, RunOptions::default()).map_err(fail)?,
        run_align(&cfg, RunOptions::default()).map_err(fail)?,
        run_tune(&cfg, RunOptions::default()).map_err(fail)?,
    ];
    let expected_frozen: [&[&str]; 3] = [&["encoder"], &["encoder", "plp"], &["align", "decoder", "encoder", "plp"]];
    let mut hashes = Vec::new();
    for (r, want) in reports.iter().zip(expected_frozen) {
        let mut frozen: Vec<&str> = r.frozen.iter().map(|h| h.module.as_str()).collect();
        frozen.sort_unstable();
        ensure!(frozen == want, "{:?} froze {frozen:?}, expected {want:?}", r.stage);
        if let Some(h) = r.frozen.iter().find(|h| !h.unchanged()) {
            return Err(format!("{:?} changed frozen module {}", r.stage, h.module));
        }
        ensure!(!r.trained.is_empty(), "{:?} trained nothing", r.stage);
        if let Some(h) = r.trained.iter().find(|h| h.unchanged()) {
            return Err(format!("{:?} left trained module {} unchanged", r.stage, h.module));
        }
        hashes.extend(r.frozen.iter().chain(&r.trained).map(|h| format!("{}:{}", h.module, h.after)));
    }
    run_eval(&cfg, SplitChoice::Eval).map_err(fail)?;
    let root = dir.join("out");
    let files = files_below(&root)
        .into_iter()
        .map(|p| std::fs::read(root.join(&p)).map(|b| (p, b)))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(fail)?;
    Ok((files, hashes))
}

pub fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(fail)?;
    let b = tempfile::tempdir().map_err(fail)?;
    let (fa, ha) = full_run(a.path())?;
    let (fb, hb) = full_run(b.path())?;
    let names: Vec<&PathBuf> = fa.iter().map(|(p, _)| p).collect();
    ensure!(
        names == fb.iter().map(|(p, _)| p).collect::<Vec<_>>(),
        "runs wrote different file sets"
    );
    for want in ["stage1/plp.ckpt", "stage2/align.ckpt", "stage3/tune.ckpt", "stage3/loss.tsv", "eval/report.json"] {
        ensure!(names.iter().any(|p| p.as_path() == Path::new(want)), "missing {want}");
    }
    if let Some(((p, _), _)) = fa.iter().zip(&fb).find(|((_, x), (_, y))| x != y) {
        return Err(format!("{} differs between runs", p.display()));
    }
    ensure!(ha == hb, "parameter hashes differ between runs");
    Ok(format!("{} files byte-identical, freezing verified for 3 stages", fa.len()))
}
