use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use mvbb_core::harness::{self, parse_key_values, spec_from_pairs, OutputFormat};

/// Runs broadcast experiments and writes an aggregate report.
///
/// Settings may come from a flat `key = value` file given with `--config`;
/// any flag on the command line overrides the file.
#[derive(Debug, Parser)]
#[command(name = "mvbb", version)]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of nodes, source included.
    #[arg(long)]
    n: Option<String>,
    /// Fault budget.
    #[arg(long)]
    t: Option<String>,
    /// Message length in bits; `2^k` notation is accepted.
    #[arg(long)]
    l: Option<String>,
    /// Bits per generation.
    #[arg(long = "d-bits")]
    d_bits: Option<String>,
    /// Field width in bits.
    #[arg(long)]
    k: Option<String>,
    /// Derive k and D from l with this exponent instead of --k/--d-bits.
    #[arg(long)]
    beta: Option<String>,
    /// Broadcast cost constant, e.g. 1 or 3/2.
    #[arg(long)]
    c: Option<String>,
    /// Strategy name: honest, equivocating_source, digest_liar, false_flagger,
    /// tree_corruptor, transcript_liar, colluders, fuzz.
    #[arg(long)]
    adversary: Option<String>,
    /// Comma-separated controlled node ids.
    #[arg(long)]
    controlled: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    /// Base seed; trial i uses seed + i.
    #[arg(long)]
    seed: Option<String>,
    /// Sweep one parameter, e.g. `l=2^10,2^12,2^14`.
    #[arg(long)]
    sweep: Option<String>,
    /// Report path; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// json or csv.
    #[arg(long)]
    format: Option<String>,
    /// Write JSON-lines round records of trial 0 to this path.
    #[arg(long)]
    trace: Option<PathBuf>,
}

impl Cli {
    fn overrides(&self) -> BTreeMap<String, String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        [
            ("n", self.n.clone()),
            ("t", self.t.clone()),
            ("l", self.l.clone()),
            ("d_bits", self.d_bits.clone()),
            ("k", self.k.clone()),
            ("beta", self.beta.clone()),
            ("c", self.c.clone()),
            ("adversary", self.adversary.clone()),
            ("controlled", self.controlled.clone()),
            ("trials", self.trials.clone()),
            ("seed", self.seed.clone()),
            ("sweep", self.sweep.clone()),
            ("output", path(&self.output)),
            ("format", self.format.clone()),
            ("trace", path(&self.trace)),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
        .collect()
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut pairs = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_key_values(&text)?
        }
        None => BTreeMap::new(),
    };
    let overrides = cli.overrides();
    // --beta on the command line replaces an explicit k/D from the file and vice versa.
    if overrides.contains_key("beta") {
        pairs.remove("k");
        pairs.remove("d_bits");
    } else if overrides.contains_key("k") || overrides.contains_key("d_bits") {
        pairs.remove("beta");
    }
    pairs.extend(overrides);
    let options = spec_from_pairs(&pairs)?;

    let report = harness::run_experiment(&options.spec)?;
    match &options.output {
        Some(path) => {
            harness::emit_report(&report, options.format, path)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        None => {
            let stdout = io::stdout();
            let mut out = stdout.lock();
            match options.format {
                OutputFormat::Json => writeln!(out, "{}", report.to_json()?)?,
                OutputFormat::Csv => report.write_csv(&mut out)?,
            }
        }
    }

    if let Some(path) = &options.trace {
        let records = harness::trace_first_trial(&options.spec)?;
        let file = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
        let mut out = BufWriter::new(file);
        for record in &records {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }

    for row in &report.rows {
        eprintln!(
            "l={} D={} k={} n={} t={} adversary={} trials={} p_correct={:.4} alpha_model={:.4} ext_steps_max={}",
            row.l, row.d_bits, row.k, row.n, row.t, row.adversary, row.trials, row.p_correct, row.alpha_model,
            row.ext_steps_max
        );
    }
    Ok(())
}
