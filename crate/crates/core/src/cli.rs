//! Command-line entry points.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::Result;
use crate::eval::project_2d;
use crate::graph::{gen_sbm, import_tu, save_bundle, split_nodes, Dataset, SbmParams};
use crate::io::{export_embeddings, import_embeddings, EmbeddingFormat};
use crate::pipeline::{self, Task};

#[derive(Parser, Debug)]
#[command(name = "gssl", version, about = "Graph self-supervised pretraining and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pretrain an encoder; writes model.ckpt, train.log and config.json.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Embed the configured dataset with a trained checkpoint.
    Embed {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output file; `.csv` selects text, anything else the binary format.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score stored embeddings against the dataset's labels.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, value_enum)]
        task: Option<Task>,
        /// Also write the result JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a stochastic block model graph as a node bundle.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        blocks: usize,
        /// Nodes per block.
        #[arg(long, default_value_t = 50)]
        size: usize,
        #[arg(long, default_value_t = 0.3)]
        p_in: f64,
        #[arg(long, default_value_t = 0.02)]
        p_out: f64,
        #[arg(long, default_value_t = 128)]
        feat_dim: usize,
        #[arg(long, default_value_t = 3.0)]
        feat_noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write a random 10/10/80 split.
        #[arg(long)]
        with_split: bool,
    },
    /// Pretrain, embed and evaluate in one run.
    Reproduce {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        task: Option<Task>,
    },
    /// Convert a TU-format graph classification dataset into a bundle.
    ImportTu {
        /// Directory holding `<NAME>_A.txt`, `<NAME>_graph_indicator.txt`, ...
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project embeddings to 2D with PCA; writes `id,x,y` CSV.
    Project {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn default_out(cfg: &RunConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{}_{}_{}", cfg.dataset.name, cfg.method.name.as_str(), cfg.seed))
}

fn execute(cmd: Command, stdout: &mut dyn Write) -> Result<()> {
    let say = |out: &mut dyn Write, text: &str| {
        // a closed stdout is not worth failing a finished run over
        let _ = out.write_all(text.as_bytes());
    };
    match cmd {
        Command::Pretrain { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let data = pipeline::load_dataset(&cfg)?;
            let (_, report) = pipeline::run_pretrain(&cfg, &data, &out)?;
            say(stdout, &format!("trained {} epochs (best {}), artifacts in {}\n", report.epochs_run, report.best_epoch, out.display()));
        }
        Command::Embed { config, checkpoint, out } => {
            let cfg = RunConfig::load(&config)?;
            let data = pipeline::load_dataset(&cfg)?;
            let state = pipeline::load_model(&cfg, &data, &checkpoint)?;
            let emb = pipeline::embed(&state, &data)?;
            export_embeddings(&emb, &out, EmbeddingFormat::from_path(&out))?;
            say(stdout, &format!("wrote {}×{} embeddings to {}\n", emb.n(), emb.d(), out.display()));
        }
        Command::Evaluate { config, embeddings, task, out } => {
            let cfg = RunConfig::load(&config)?;
            let emb = import_embeddings(&embeddings, EmbeddingFormat::from_path(&embeddings))?;
            let data = pipeline::load_dataset(&cfg)?;
            let task = task.unwrap_or_else(|| Task::default_for(&data));
            let result = pipeline::evaluate(&cfg, &data, &emb, task)?;
            let text = result.to_json();
            if let Some(path) = out {
                pipeline::write_text(&path, &text)?;
            }
            say(stdout, &text);
        }
        Command::GenSynth { out, blocks, size, p_in, p_out, feat_dim, feat_noise, seed, with_split } => {
            let params = SbmParams { n_per_block: size, n_blocks: blocks, p_in, p_out, feat_dim, feat_noise };
            let name = out.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sbm".into());
            let graph = gen_sbm(&params, seed)?.with_name(name);
            let split = with_split.then(|| split_nodes(graph.n(), (0.1, 0.1, 0.8), seed)).transpose()?;
            save_bundle(&Dataset::Nodes { graph, split }, &out)?;
            say(stdout, &format!("wrote {} nodes to {}\n", size * blocks, out.display()));
        }
        Command::Reproduce { config, out, task } => {
            let cfg = RunConfig::load(&config)?;
            let out = out.unwrap_or_else(|| default_out(&cfg));
            let result = pipeline::reproduce(&cfg, &out, task)?;
            say(stdout, &result.to_json());
        }
        Command::ImportTu { src, name, out } => {
            let set = import_tu(&src, &name)?;
            let (n, c) = (set.len(), set.n_classes());
            save_bundle(&Dataset::Graphs(set), &out)?;
            say(stdout, &format!("wrote {n} graphs in {c} classes to {}\n", out.display()));
        }
        Command::Project { embeddings, out } => {
            let emb = import_embeddings(&embeddings, EmbeddingFormat::from_path(&embeddings))?;
            let xy = project_2d(&emb)?;
            let mut text = String::from("id,x,y\n");
            for (i, id) in emb.ids().iter().enumerate() {
                text.push_str(&format!("{id},{},{}\n", xy.get(i, 0) as f32, xy.get(i, 1) as f32));
            }
            pipeline::write_text(&out, &text)?;
        }
    }
    Ok(())
}

/// Runs the command line `args` (program name first) and returns the exit
/// code: 0 success, 1 configuration error, 2 data error, 3 runtime or numeric error.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return 1;
            }
            let _ = write!(stdout, "{e}");
            return 0;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
