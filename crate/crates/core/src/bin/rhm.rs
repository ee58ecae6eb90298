use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use rhm::corpus::{
    characteristic_size, collapse_rescale, corpus_corr_curve, corpus_effective_window, fit_alpha,
    fit_powerlaw, load_corpus, write_collapse_csv, BlockSampling, DEFAULT_ALPHABET_CAP,
};
use rhm::correlations::{
    analytic_corr_curve, count_sequences, effective_window, ensemble_exact_curve, exact_corr_curve,
    CooccurrenceCounts,
};
use rhm::exact::{
    enumerate_sequences, exact_conditional_loss, write_enumeration_csv, write_loss_csv, DEFAULT_CAP,
};
use rhm::fmt::fmt_f64;
use rhm::theory::TheoryTable;
use rhm::tree::{
    read_sequences_csv, sample_derivation, sample_sequences, transform_reset, transform_stream,
    transform_substitute, write_sequences_csv,
};
use rhm::{CorrCurve, Grammar, LossTable, Result, RhmError, RhmParams};

/// Random Hierarchy Model grammars, correlations, theory tables and corpus analysis.
#[derive(Parser, Debug)]
#[command(name = "rhm", version)]
struct Cli {
    /// Worker threads for parallel sections (output is identical for any value).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a random grammar and write it as JSON.
    GrammarNew {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Sample sequences (or enumerate every sequence with its probability).
    Sample {
        #[command(flatten)]
        model: ModelArgs,
        /// Number of samples.
        #[arg(long, default_value_t = 1000)]
        count: u64,
        /// Index of the first sample.
        #[arg(long, default_value_t = 0)]
        start: u64,
        /// Enumerate all sequences instead of sampling.
        #[arg(long)]
        enumerate: bool,
        /// Refuse enumerations larger than this.
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Analytic correlation staircase.
    CorrTheory {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Exact correlation curve of one grammar, or the mean over several grammar seeds.
    CorrExact {
        #[command(flatten)]
        model: ModelArgs,
        /// Average over this many consecutive grammar seeds.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Empirical correlation curve from sampled (or supplied) sequences.
    CorrEmpirical {
        #[command(flatten)]
        model: ModelArgs,
        /// Number of samples drawn from the grammar.
        #[arg(long = "P", value_parser = parse_count)]
        samples: Option<u64>,
        /// Sequences CSV (seq column) instead of sampling.
        #[arg(long, conflicts_with = "samples")]
        input: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Effective context window at training-set size P.
    Window {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "P", value_parser = parse_count)]
        samples: u64,
    },
    /// Per-level theory table.
    TheoryTable {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Exact conditional loss per level by enumeration.
    ExactLoss {
        #[command(flatten)]
        model: ModelArgs,
        /// Highest level (defaults to L).
        #[arg(long)]
        max_level: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Apply a subtree transformation to sampled derivations.
    Transform {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum)]
        kind: TransformKind,
        /// Level of the transformed node (1..=L).
        #[arg(long)]
        level: usize,
        /// 0-based node within the level (defaults to the penultimate node).
        #[arg(long)]
        position: Option<usize>,
        #[arg(long, default_value_t = 100)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        start: u64,
        /// Seed of the transformation streams.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Correlation curve of a text corpus.
    CorpusCorr {
        #[command(flatten)]
        blocks: BlockArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Power-law fit of a corpus curve and the resulting effective window.
    CorpusFit {
        #[command(flatten)]
        blocks: BlockArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Rescale a loss table for the scaling collapse.
    Collapse {
        /// CSV with header P,t,loss.
        #[arg(long)]
        table: PathBuf,
        /// Loss exponent; fitted from rows with P/t^z <= --x-max when absent.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        z: f64,
        #[arg(long, default_value_t = 1e-2)]
        x_max: f64,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Depth.
    #[arg(long = "L", default_value_t = 3)]
    depth: usize,
    /// Branching factor.
    #[arg(long = "s", default_value_t = 2)]
    branching: usize,
    /// Vocabulary size.
    #[arg(long = "v", required_unless_present = "grammar")]
    vocab: Option<usize>,
    /// Rules per symbol.
    #[arg(long = "m", required_unless_present = "grammar")]
    rules: Option<usize>,
    #[arg(long, default_value_t = 0)]
    grammar_seed: u64,
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
    /// Load the grammar from JSON instead of building it (L, s, v, m and the grammar seed come from the file).
    #[arg(long)]
    grammar: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BlockArgs {
    /// UTF-8 text file.
    #[arg(long)]
    corpus: PathBuf,
    /// Block length; the last token of each block is the reference.
    #[arg(long = "d", default_value_t = 129)]
    block_len: usize,
    /// Number of blocks sampled with replacement.
    #[arg(long = "P", value_parser = parse_count, required_unless_present = "exhaustive")]
    samples: Option<u64>,
    /// Use every block offset once instead of sampling.
    #[arg(long, conflicts_with = "samples")]
    exhaustive: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_ALPHABET_CAP)]
    alphabet_cap: usize,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long, default_value_t = 2)]
    t_min: usize,
    #[arg(long, default_value_t = 64)]
    t_max: usize,
    /// Points within this multiple of the noise floor end the fit window.
    #[arg(long, default_value_t = 2.0)]
    margin: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TransformKind {
    Reset,
    Substitute,
}

/// Accepts `20000`, `2e4` or `1_000_000`.
fn parse_count(s: &str) -> std::result::Result<u64, String> {
    let clean = s.replace('_', "");
    if let Ok(n) = clean.parse::<u64>() {
        return Ok(n);
    }
    match clean.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.fract() == 0.0 && x < 1.8e19 => Ok(x as u64),
        _ => Err(format!("expected a non-negative integer, got {s:?}")),
    }
}

impl ModelArgs {
    fn params(&self) -> Result<RhmParams> {
        if let Some(path) = &self.grammar {
            return Ok(Grammar::load(path)?
                .params()
                .with_sample_seed(self.sample_seed));
        }
        let (Some(v), Some(m)) = (self.vocab, self.rules) else {
            return Err(RhmError::Parse(
                "--v and --m are required without --grammar".into(),
            ));
        };
        Ok(RhmParams::new(self.depth, self.branching, v, m)?
            .with_grammar_seed(self.grammar_seed)
            .with_sample_seed(self.sample_seed))
    }

    fn grammar(&self) -> Result<Grammar> {
        match &self.grammar {
            Some(path) => Ok(Grammar::load(path)?.with_sample_seed(self.sample_seed)),
            None => Grammar::build(self.params()?),
        }
    }
}

/// Writes the artifact to `--out` or stdout; the summary goes to stdout when
/// the artifact went to a file, otherwise to stderr.
fn emit(
    out: &OutArgs,
    summary: &str,
    body: impl FnOnce(&mut dyn Write) -> Result<()>,
) -> Result<()> {
    match &out.out {
        Some(path) => {
            write_file(path, body)?;
            println!("{summary}");
        }
        None => {
            let stdout = io::stdout();
            let mut lock = BufWriter::new(stdout.lock());
            body(&mut lock)?;
            lock.flush()?;
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn write_file(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

fn curve_summary(curve: &CorrCurve) -> String {
    let first = curve
        .entries
        .first()
        .map(|e| fmt_f64(e.value))
        .unwrap_or_default();
    let last = curve
        .entries
        .last()
        .map(|e| fmt_f64(e.value))
        .unwrap_or_default();
    format!(
        "{}: {} distances, C(1)={first} C(d-1)={last}",
        curve.label,
        curve.entries.len()
    )
}

const SAMPLE_CHUNK: u64 = 4096;

fn sampled_counts(grammar: &Grammar, samples: u64) -> Result<CooccurrenceCounts> {
    let p = grammar.params();
    let chunks = samples.div_ceil(SAMPLE_CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * SAMPLE_CHUNK;
            let n = SAMPLE_CHUNK.min(samples - start);
            count_sequences(&sample_sequences(grammar, start, n), p.vocab)
        })
        .try_reduce(
            || CooccurrenceCounts::new(p.seq_len(), p.vocab),
            |mut a, b| {
                a.merge(&b);
                Ok(a)
            },
        )
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GrammarNew { model, out } => {
            let g = model.grammar()?;
            let p = g.params();
            let summary = format!(
                "grammar L={} s={} v={} m={} grammar_seed={}",
                p.depth, p.branching, p.vocab, p.rules, p.grammar_seed
            );
            emit(&out, &summary, |w| Ok(w.write_all(g.to_json().as_bytes())?))
        }
        Command::Sample {
            model,
            count,
            start,
            enumerate,
            cap,
            out,
        } => {
            let g = model.grammar()?;
            if enumerate {
                let seqs = enumerate_sequences(&g, cap)?;
                let summary = format!("enumerated {} sequences", seqs.len());
                emit(&out, &summary, |w| write_enumeration_csv(w, &seqs))
            } else {
                let seqs: Vec<_> = (start..start + count)
                    .into_par_iter()
                    .map(|i| sample_derivation(&g, i).into_leaves())
                    .collect();
                let summary = format!(
                    "sampled {count} sequences from index {start} (sample_seed={})",
                    g.params().sample_seed
                );
                emit(&out, &summary, |w| write_sequences_csv(w, start, &seqs))
            }
        }
        Command::CorrTheory { model, out } => {
            let curve = analytic_corr_curve(&model.params()?);
            emit(&out, &curve_summary(&curve), |w| curve.write_csv(w))
        }
        Command::CorrExact { model, seeds, out } => {
            let curve = if seeds <= 1 || model.grammar.is_some() {
                exact_corr_curve(&model.grammar()?)?
            } else {
                let p = model.params()?;
                ensemble_exact_curve(&p, p.grammar_seed..p.grammar_seed + seeds)?
            };
            emit(&out, &curve_summary(&curve), |w| curve.write_csv(w))
        }
        Command::CorrEmpirical {
            model,
            samples,
            input,
            out,
        } => {
            let curve = match (input, samples) {
                (Some(path), _) => {
                    let seqs = read_sequences_csv(BufReader::new(File::open(path)?))?;
                    let vocab = model.params()?.vocab;
                    count_sequences(&seqs, vocab)?.curve(&format!("samples v={vocab}"))?
                }
                (None, Some(n)) => {
                    let g = model.grammar()?;
                    let p = g.params();
                    let label = format!(
                        "empirical L={} s={} v={} m={} P={n}",
                        p.depth, p.branching, p.vocab, p.rules
                    );
                    sampled_counts(&g, n)?.curve(&label)?
                }
                (None, None) => {
                    return Err(RhmError::Parse("one of --P or --input is required".into()))
                }
            };
            emit(&out, &curve_summary(&curve), |w| curve.write_csv(w))
        }
        Command::Window { model, samples } => {
            let w = effective_window(&model.params()?, samples);
            println!("ell*={} t*={}", w.level, w.distance);
            Ok(())
        }
        Command::TheoryTable { model, out } => {
            let p = model.params()?;
            let table = TheoryTable::new(&p);
            let summary = format!("theory table: {} levels", table.rows.len());
            emit(&out, &summary, |w| table.write_csv(w))
        }
        Command::ExactLoss {
            model,
            max_level,
            cap,
            out,
        } => {
            let g = model.grammar()?;
            let top = max_level.unwrap_or(g.params().depth);
            let rows = (0..=top)
                .map(|level| exact_conditional_loss(&g, level, cap))
                .collect::<Result<Vec<_>>>()?;
            let last = rows.last().expect("level 0 always present");
            let summary = format!(
                "exact loss up to ell={top}: loss={} nats, E[N]={}",
                fmt_f64(last.loss_nats),
                fmt_f64(last.mean_n)
            );
            emit(&out, &summary, |w| write_loss_csv(w, &rows))
        }
        Command::Transform {
            model,
            kind,
            level,
            position,
            count,
            start,
            seed,
            out,
        } => {
            let g = model.grammar()?;
            let rows = (start..start + count)
                .into_par_iter()
                .map(|i| {
                    let tree = sample_derivation(&g, i);
                    let mut rng = transform_stream(seed, i);
                    let after = match kind {
                        TransformKind::Reset => {
                            transform_reset(&g, &tree, level, &mut rng, position)?
                        }
                        TransformKind::Substitute => {
                            transform_substitute(&g, &tree, level, &mut rng, position)?
                        }
                    };
                    Ok((i, tree.into_leaves(), after.into_leaves()))
                })
                .collect::<Result<Vec<_>>>()?;
            let changed = rows.iter().filter(|r| r.1 != r.2).count();
            let summary =
                format!("{kind:?} at level {level}: {changed} of {count} sequences changed");
            emit(&out, &summary, |w| {
                writeln!(w, "index,before,after")?;
                for (i, before, after) in &rows {
                    writeln!(w, "{i},\"{}\",\"{}\"", join(before), join(after))?;
                }
                Ok(())
            })
        }
        Command::CorpusCorr { blocks, out } => {
            let curve = corpus_curve(&blocks)?.1;
            emit(&out, &curve_summary(&curve), |w| curve.write_csv(w))
        }
        Command::CorpusFit { blocks, fit, out } => {
            let (vocab, curve, samples) = corpus_curve(&blocks)?;
            let f = fit_powerlaw(&curve, fit.t_min, fit.t_max, fit.margin)?;
            let t_star = corpus_effective_window(&f, samples as f64, vocab)?;
            let p_star = characteristic_size(&f, blocks.block_len as f64 - 1.0, vocab)?;
            let summary = format!(
                "beta={} z={} a={} t=[{},{}] t*={} P*(d-1)={}",
                fmt_f64(f.beta),
                fmt_f64(f.z),
                fmt_f64(f.amplitude),
                f.t_min,
                f.t_max,
                fmt_f64(t_star),
                fmt_f64(p_star)
            );
            emit(&out, &summary, |w| f.write_csv(w))
        }
        Command::Collapse {
            table,
            alpha,
            z,
            x_max,
            out,
        } => {
            let table = LossTable::read_csv(BufReader::new(File::open(table)?))?;
            let alpha = match alpha {
                Some(a) => a,
                None => fit_alpha(&table, z, x_max)?,
            };
            let rows = collapse_rescale(&table, alpha, z)?;
            let summary = format!(
                "collapse alpha={} z={} rows={}",
                fmt_f64(alpha),
                fmt_f64(z),
                rows.len()
            );
            emit(&out, &summary, |w| write_collapse_csv(w, &rows))
        }
    }
}

fn corpus_curve(args: &BlockArgs) -> Result<(usize, CorrCurve, u64)> {
    let corpus = load_corpus(&args.corpus, args.alphabet_cap)?;
    let sampling = match args.samples {
        Some(blocks) if !args.exhaustive => BlockSampling::Random {
            blocks,
            seed: args.seed,
        },
        _ => BlockSampling::Exhaustive,
    };
    let curve = corpus_corr_curve(&corpus, args.block_len, sampling)?;
    let samples = match sampling {
        BlockSampling::Random { blocks, .. } => blocks,
        BlockSampling::Exhaustive => (corpus.len() - args.block_len + 1) as u64,
    };
    Ok((corpus.vocab(), curve, samples))
}

fn join(tokens: &[u32]) -> String {
    tokens
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("rhm: error kind=usage code=2: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("rhm: error kind={} code={code}: {e}", e.kind());
            ExitCode::from(code as u8)
        }
    }
}
