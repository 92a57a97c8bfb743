//! Throughput, latency and beam-size sweeps.
//!
//! Throughput mode decodes sentences on a pool of worker threads that pull
//! indices from a shared counter; results land in an order-preserving buffer
//! so output never depends on the thread count. Latency mode decodes strictly
//! serially on the calling thread. Timings cover decoding only.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::Serialize;

use crate::engine::{Engine, Translation};
use crate::error::{Error, Result};
use crate::eval;
use crate::search::DecodeOptions;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub sentences: usize,
    /// Source tokens after subword segmentation.
    pub total_tokens: usize,
    pub wall_seconds: f64,
    pub words_per_second: f64,
    pub ms_per_sentence: f64,
    pub startup_seconds: f64,
    pub threads: usize,
    pub beam: usize,
    pub shortlist_active: bool,
}

impl BenchReport {
    /// Derive the rate fields from raw counts and the wall time.
    pub fn from_raw(
        sentences: usize,
        total_tokens: usize,
        wall_seconds: f64,
        threads: usize,
        beam: usize,
        shortlist_active: bool,
    ) -> Self {
        Self {
            sentences,
            total_tokens,
            wall_seconds,
            words_per_second: total_tokens as f64 / wall_seconds,
            ms_per_sentence: 1000.0 * wall_seconds / sentences as f64,
            startup_seconds: 0.0,
            threads,
            beam,
            shortlist_active,
        }
    }

    fn new(engine: &Engine, opts: &DecodeOptions, outputs: &[Translation], wall: f64, threads: usize) -> Self {
        let total_tokens = outputs.iter().map(|t| t.src_tokens).sum();
        Self {
            startup_seconds: engine.startup_seconds(),
            ..Self::from_raw(
                outputs.len(),
                total_tokens,
                wall,
                threads,
                opts.beam_size,
                engine.has_shortlist(),
            )
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub report: BenchReport,
    pub outputs: Vec<Translation>,
}

impl BenchRun {
    /// Best translations, one line each, as written by the CLI.
    pub fn output_text(&self) -> String {
        self.outputs.iter().map(|t| t.render(0, 1)).collect()
    }
}

/// Translate `lines` on `threads` workers; results are in input order.
pub fn translate_parallel<S: AsRef<str> + Sync>(
    engine: &Engine,
    lines: &[S],
    opts: &DecodeOptions,
    threads: usize,
) -> Result<Vec<Translation>> {
    if threads == 0 {
        return Err(Error::arg("thread count must be >= 1"));
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..threads.min(lines.len().max(1)) {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= lines.len() {
                    break;
                }
                let r = engine.translate_with(lines[i].as_ref(), opts);
                let failed = r.is_err();
                if tx.send((i, r)).is_err() || failed {
                    // stop handing out work after a failure
                    next.store(lines.len(), Ordering::Relaxed);
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut slots: Vec<Option<Translation>> = vec![None; lines.len()];
    let mut first_err: Option<(usize, Error)> = None;
    for (i, r) in rx {
        match r {
            Ok(t) => slots[i] = Some(t),
            Err(e) => {
                if first_err.as_ref().is_none_or(|(j, _)| i < *j) {
                    first_err = Some((i, e));
                }
            }
        }
    }
    if let Some((_, e)) = first_err {
        return Err(e);
    }
    Ok(slots
        .into_iter()
        .map(|t| t.expect("every index is translated exactly once"))
        .collect())
}

fn check_corpus<S>(corpus: &[S]) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::arg("benchmark corpus is empty"));
    }
    Ok(())
}

pub fn throughput_bench<S: AsRef<str> + Sync>(
    engine: &Engine,
    corpus: &[S],
    threads: usize,
) -> Result<BenchRun> {
    throughput_bench_with(engine, corpus, threads, &engine.decode)
}

pub fn throughput_bench_with<S: AsRef<str> + Sync>(
    engine: &Engine,
    corpus: &[S],
    threads: usize,
    opts: &DecodeOptions,
) -> Result<BenchRun> {
    check_corpus(corpus)?;
    let start = Instant::now();
    let outputs = translate_parallel(engine, corpus, opts, threads)?;
    let wall = start.elapsed().as_secs_f64();
    Ok(BenchRun {
        report: BenchReport::new(engine, opts, &outputs, wall, threads),
        outputs,
    })
}

pub fn latency_bench<S: AsRef<str>>(engine: &Engine, corpus: &[S]) -> Result<BenchRun> {
    check_corpus(corpus)?;
    let start = Instant::now();
    let outputs = corpus
        .iter()
        .map(|l| engine.translate_line(l.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let wall = start.elapsed().as_secs_f64();
    Ok(BenchRun {
        report: BenchReport::new(engine, &engine.decode, &outputs, wall, 1),
        outputs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub beam: usize,
    pub words_per_second: f64,
    pub bleu: Option<f64>,
    /// Mean best-hypothesis log-probability per non-empty sentence.
    pub mean_model_score: f64,
}

pub const SWEEP_CSV_HEADER: &str = "beam,words_per_second,bleu,mean_model_score";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        let bleu = r.bleu.map(|b| format!("{b:.4}")).unwrap_or_default();
        writeln!(
            s,
            "{},{:.3},{},{:.6}",
            r.beam, r.words_per_second, bleu, r.mean_model_score
        )
        .unwrap();
    }
    s
}

/// One throughput run per beam size. With `repeats > 1` the fastest run is
/// reported.
pub fn beam_sweep<S: AsRef<str> + Sync, R: AsRef<str>>(
    engine: &Engine,
    corpus: &[S],
    beams: &[usize],
    references: Option<&[R]>,
    threads: usize,
    repeats: usize,
) -> Result<Vec<SweepRow>> {
    if beams.is_empty() || beams.contains(&0) {
        return Err(Error::arg("beam list must be non-empty with every beam >= 1"));
    }
    let mut rows = Vec::with_capacity(beams.len());
    for &beam in beams {
        let opts = engine.decode.with_beam(beam);
        let mut best: Option<BenchRun> = None;
        for _ in 0..repeats.max(1) {
            let run = throughput_bench_with(engine, corpus, threads, &opts)?;
            if best
                .as_ref()
                .is_none_or(|b| run.report.wall_seconds < b.report.wall_seconds)
            {
                best = Some(run);
            }
        }
        let run = best.expect("at least one repeat");
        let bleu = references
            .map(|refs| {
                let hyps: Vec<&str> = run.outputs.iter().map(Translation::best_text).collect();
                eval::bleu(&hyps, refs, true).map(|b| b.score)
            })
            .transpose()?;
        let scored: Vec<f64> = run
            .outputs
            .iter()
            .filter(|t| !t.hypotheses.is_empty())
            .map(|t| t.best_score() as f64)
            .collect();
        let mean_model_score = if scored.is_empty() {
            0.0
        } else {
            scored.iter().sum::<f64>() / scored.len() as f64
        };
        rows.push(SweepRow {
            beam,
            words_per_second: run.report.words_per_second,
            bleu,
            mean_model_score,
        });
    }
    Ok(rows)
}
