//! `mixner`: mix corpora, train and apply a CRF tagger, score predictions, self-verify.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or data error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mixner::corpus::{iob_violations, repair_iob};
use mixner::crf::TrainHistory;
use mixner::oracle::{run_verification, Fault};
use mixner::{
    build_index, encode_dataset, induce_tagset, mix_datasets, parse_conll, render_report, score_entities, train,
    write_conll, ColumnSpec, CrfModel, Dataset, ReportFormat, Separator, TagColumn, TemplateConfig, TrainConfig,
};

#[derive(Parser)]
#[command(name = "mixner", version, about = "Code-mixed NER with a linear-chain CRF")]
struct Cli {
    #[command(flatten)]
    columns: ColumnArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ColumnArgs {
    /// Zero-based column holding the token.
    #[arg(long, global = true, default_value_t = 0)]
    token_col: usize,
    /// Zero-based column holding the tag, or `last`.
    #[arg(long, global = true, default_value = "last")]
    tag_col: String,
    /// Zero-based column holding a language id (kept as metadata only).
    #[arg(long, global = true)]
    lang_col: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = SeparatorArg::Whitespace)]
    separator: SeparatorArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SeparatorArg {
    Tab,
    Whitespace,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Combine a primary corpus with auxiliary corpora.
    Mix {
        #[arg(long)]
        primary: PathBuf,
        #[arg(long)]
        aux: Vec<PathBuf>,
        /// Shuffle the combined corpus with a seeded permutation.
        #[arg(long)]
        shuffle: bool,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
    /// Train a CRF tagger with early stopping on dev weighted F1.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 4)]
        patience: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 1e-4)]
        l2: f64,
        #[arg(long, default_value_t = 1e-4)]
        min_delta: f64,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Add lowercased window words to the feature template.
        #[arg(long)]
        lowercase: bool,
        /// Add prefixes and suffixes (up to 3 characters) to the feature template.
        #[arg(long)]
        affixes: bool,
        /// Per-epoch history log; defaults to `<model>.history.tsv`.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
    /// Tag a CoNLL file; existing tags are replaced, tag columns are optional.
    Tag {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
    /// Score predictions against gold annotations.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Where to write the full report; printed to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = FormatArg::Text)]
        format: FormatArg,
    },
    /// Check the CRF against brute-force enumeration on random tiny instances.
    Verify {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Negate transition weights in the fast path to exercise the failure path.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

impl ColumnArgs {
    fn spec(&self) -> Result<ColumnSpec> {
        let tag_column = if self.tag_col == "last" {
            TagColumn::Last
        } else {
            TagColumn::Index(
                self.tag_col
                    .parse()
                    .with_context(|| format!("--tag-col must be `last` or a column index, got `{}`", self.tag_col))?,
            )
        };
        let spec = ColumnSpec {
            token_column: self.token_col,
            tag_column,
            lang_column: self.lang_col,
            separator: match self.separator {
                SeparatorArg::Tab => Separator::Tab,
                SeparatorArg::Whitespace => Separator::Whitespace,
            },
            optional_tags: false,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn label_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn read_dataset(path: &Path, columns: &ColumnSpec) -> Result<Dataset> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let ds = parse_conll(&text, columns).with_context(|| format!("{}", path.display()))?;
    Ok(ds.with_label(label_of(path)))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn repaired(ds: Dataset, path: &Path) -> Dataset {
    let violations = iob_violations(&ds);
    if violations.is_empty() {
        return ds;
    }
    eprintln!(
        "warning: {}: repaired {} stray I- tag(s), first at {}",
        path.display(),
        violations.len(),
        violations[0]
    );
    repair_iob(&ds)
}

fn history_log(history: &TrainHistory) -> String {
    let mut out = String::from("epoch\ttrain_nll\tdev_weighted_f1\n");
    for r in &history.epochs {
        let _ = writeln!(out, "{}\t{:?}\t{:?}", r.epoch, r.train_nll, r.dev_f1);
    }
    out
}

fn run(cli: Cli) -> Result<ExitCode> {
    let columns = cli.columns.spec()?;
    match cli.command {
        Command::Mix {
            primary,
            aux,
            shuffle,
            seed,
            output,
        } => {
            println!("mixner mix --seed {seed}{}", if shuffle { " --shuffle" } else { "" });
            let primary_ds = read_dataset(&primary, &columns)?;
            let aux_ds = aux
                .iter()
                .map(|p| read_dataset(p, &columns))
                .collect::<Result<Vec<_>>>()?;
            let mixed = mix_datasets(&primary_ds, &aux_ds, seed, shuffle);
            write_file(&output, &write_conll(&mixed))?;
            for ds in std::iter::once(&primary_ds).chain(&aux_ds) {
                println!("{}\t{}", ds.source_label, ds.len());
            }
            println!("total\t{}", mixed.len());
        }
        Command::Train {
            train: train_path,
            dev,
            epochs,
            batch,
            patience,
            lr,
            l2,
            min_delta,
            min_count,
            seed,
            lowercase,
            affixes,
            history,
            output,
        } => {
            println!(
                "mixner train --epochs {epochs} --batch {batch} --patience {patience} --lr {lr} --l2 {l2} \
                 --min-delta {min_delta} --min-count {min_count} --seed {seed}"
            );
            let cfg = TrainConfig {
                epochs,
                batch_size: batch,
                patience,
                learning_rate: lr,
                l2,
                seed,
                min_delta,
            };
            cfg.validate()?;
            let template = TemplateConfig { lowercase, affixes };

            let train_ds = repaired(read_dataset(&train_path, &columns)?, &train_path);
            let dev_ds = repaired(read_dataset(&dev, &columns)?, &dev);
            if train_ds.is_empty() {
                bail!("{}: empty training set", train_path.display());
            }
            let tagset = induce_tagset(&[&train_ds]);
            let index = build_index(&train_ds, &tagset, &template, min_count)?;
            println!(
                "train {} sentences, dev {} sentences, {} tags, {} attributes",
                train_ds.len(),
                dev_ds.len(),
                tagset.len(),
                index.num_attributes()
            );
            let encoded = encode_dataset(&train_ds, &index, &template)?;
            let (model, hist) = train(&encoded, &dev_ds, &cfg, &template, &index, &tagset)
                .with_context(|| format!("training on {} with dev {}", train_path.display(), dev.display()))?;
            for r in &hist.epochs {
                println!(
                    "epoch {:>3}  nll {:>14.4}  dev_weighted_f1 {:.4}  ({:.2}s)",
                    r.epoch,
                    r.train_nll,
                    r.dev_f1,
                    r.elapsed.as_secs_f64()
                );
            }
            model
                .save(&output)
                .with_context(|| format!("cannot write {}", output.display()))?;
            let history_path = history.unwrap_or_else(|| {
                let mut p = output.clone().into_os_string();
                p.push(".history.tsv");
                PathBuf::from(p)
            });
            write_file(&history_path, &history_log(&hist))?;
            println!("best epoch {} dev_weighted_f1 {:.4}", hist.best_epoch, hist.best_f1());
        }
        Command::Tag { model, input, output } => {
            let model = CrfModel::load(&model).with_context(|| format!("cannot load model {}", model.display()))?;
            let columns = ColumnSpec {
                optional_tags: true,
                ..columns
            };
            let mut ds = read_dataset(&input, &columns)?;
            for s in &mut ds.sentences {
                let tags = model.tag_words(&s.surfaces());
                for (t, tag) in s.tokens.iter_mut().zip(tags) {
                    t.tag = tag;
                }
            }
            write_file(&output, &write_conll(&ds))?;
            println!("tagged {} sentences, {} tokens", ds.len(), ds.token_count());
        }
        Command::Eval {
            gold,
            pred,
            report,
            format,
        } => {
            let gold_ds = read_dataset(&gold, &columns)?;
            let pred_ds = read_dataset(&pred, &columns)?;
            let r = score_entities(&gold_ds, &pred_ds)
                .with_context(|| format!("comparing {} with {}", gold.display(), pred.display()))?;
            let format = match format {
                FormatArg::Text => ReportFormat::Text,
                FormatArg::Json => ReportFormat::Json,
            };
            let rendered = render_report(&r, format);
            match report {
                Some(path) => write_file(&path, &rendered)?,
                None => print!("{rendered}"),
            }
            println!("weighted_f1 {:.4}", r.weighted_f1);
        }
        Command::Verify {
            trials,
            seed,
            inject_fault,
        } => {
            println!("mixner verify --trials {trials} --seed {seed}");
            if trials == 0 {
                eprintln!("warning: --trials 0, no checks run");
                return Ok(ExitCode::SUCCESS);
            }
            let fault = inject_fault.then_some(Fault::NegateTransitions);
            let outcomes = run_verification(trials, seed, fault);
            let mut ok = true;
            for c in &outcomes {
                println!(
                    "{} {:<14} {} trials  max error {:.3e}  tolerance {:.0e}",
                    if c.passed() { "PASS" } else { "FAIL" },
                    c.name,
                    c.trials,
                    c.max_error,
                    c.tolerance
                );
                if let Some(inst) = &c.first_failure {
                    println!("  {} failure(s); first failing instance: {inst}", c.failures);
                    ok = false;
                }
            }
            if !ok {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
