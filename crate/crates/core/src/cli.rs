//! Command-line front end: data generation, training, analysis and
//! self-checks, driven by a TOML experiment config plus flag overrides.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{cluster_separation, export_heatmap, layer_distances, HeatmapFormat};
use crate::checks::{check_bounds, check_gradients, check_moments, CheckReport};
use crate::data::{generate, load_csv, write_csv, CsvSchema, Split, SyntheticSpec, TaskSplits};
use crate::error::{Result, TaanError};
use crate::metrics::{build_gram, mean_pairwise_distance};
use crate::network::{ArchSpec, TaanModel};
use crate::regularizers::{RegConfig, RegularizerKind};
use crate::training::{evaluate, train, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "taan", version, about = "Task adaptive activation networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML experiment config; built-in defaults are used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured synthetic datasets as CSV files.
    GenData(CommonArgs),
    /// Train a model; writes a checkpoint and the history CSV.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Regularizer: none, trace, cos or dis.
        #[arg(long, value_parser = parse_reg)]
        reg: Option<RegularizerKind>,
        /// Regularizer coefficient c.
        #[arg(long)]
        coef: Option<f64>,
        /// Overrides the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Per-layer task distance matrices and heatmaps of a checkpoint.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Defaults to `<out>/checkpoints/model.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Numerical self-checks; exits non-zero when any check fails.
    Check {
        #[arg(value_enum)]
        kind: CheckKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte-Carlo samples for the bound check.
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        /// Also write the report under `<out>/reports/`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckKind {
    Moments,
    Gradients,
    Bounds,
}

fn parse_reg(s: &str) -> std::result::Result<RegularizerKind, String> {
    s.parse().map_err(|e: TaanError| e.to_string())
}

/// Hidden architecture; input and output widths come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub hidden: Vec<usize>,
    pub basis_count: usize,
    pub grid_range: (f64, f64),
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            hidden: vec![32, 32],
            basis_count: crate::apl::SMALL_BASIS_COUNT,
            grid_range: crate::apl::DEFAULT_GRID_RANGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Planted-cluster generator; its seed is replaced by the experiment seed.
    Synthetic(SyntheticSpec),
    /// Files named `task{t}_{train,val,test}.csv` under `dir`.
    Csv {
        dir: PathBuf,
        tasks: usize,
        input_dim: usize,
        target_dim: usize,
    },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic(SyntheticSpec::planted(4, 2, 500, 8, 0.3, 0.1, 0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("taan-out"),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| TaanError::io(path, e))?;
        toml::from_str(&text).map_err(|e| TaanError::Config(format!("{}: {e}", path.display())))
    }

    /// Loads the file if given, then applies flag overrides and validates.
    pub fn resolve(common: &CommonArgs) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &common.out {
            cfg.out = out.clone();
        }
        cfg.train.seed = cfg.seed;
        if let DataConfig::Synthetic(spec) = &mut cfg.data {
            spec.seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        match &self.data {
            DataConfig::Synthetic(spec) => spec.validate()?,
            DataConfig::Csv { dir, tasks, input_dim, target_dim } => {
                if *tasks == 0 || *input_dim == 0 || *target_dim == 0 {
                    return Err(TaanError::Config("csv tasks and widths must be positive".into()));
                }
                let train = csv_path(dir, 0, Split::Train);
                if !train.is_file() {
                    return Err(TaanError::Config(format!("missing data file {}", train.display())));
                }
            }
        }
        self.arch()?.validate()
    }

    pub fn task_count(&self) -> usize {
        match &self.data {
            DataConfig::Synthetic(spec) => spec.task_count(),
            DataConfig::Csv { tasks, .. } => *tasks,
        }
    }

    pub fn arch(&self) -> Result<ArchSpec> {
        let (input, output) = match &self.data {
            DataConfig::Synthetic(spec) => (spec.input_dim, spec.output_dim),
            DataConfig::Csv { input_dim, target_dim, .. } => (*input_dim, *target_dim),
        };
        Ok(ArchSpec {
            grid_range: self.arch.grid_range,
            ..ArchSpec::new(input, self.arch.hidden.clone(), vec![output; self.task_count()], self.arch.basis_count)
        })
    }

    pub fn load_data(&self) -> Result<Vec<TaskSplits>> {
        match &self.data {
            DataConfig::Synthetic(spec) => generate(spec),
            DataConfig::Csv { dir, tasks, input_dim, target_dim } => {
                let schema = CsvSchema::real(*input_dim, *target_dim);
                (0..*tasks)
                    .map(|t| {
                        let optional = |split| {
                            let p = csv_path(dir, t, split);
                            p.is_file().then(|| load_csv(&p, &schema, t, split)).transpose()
                        };
                        Ok(TaskSplits {
                            train: load_csv(&csv_path(dir, t, Split::Train), &schema, t, Split::Train)?,
                            val: optional(Split::Val)?,
                            test: optional(Split::Test)?,
                        })
                    })
                    .collect()
            }
        }
    }

    pub fn clusters(&self) -> Option<&[usize]> {
        match &self.data {
            DataConfig::Synthetic(spec) => Some(&spec.clusters),
            DataConfig::Csv { .. } => None,
        }
    }
}

pub fn csv_path(dir: &Path, task: usize, split: Split) -> PathBuf {
    dir.join(format!("task{task}_{split}.csv"))
}

/// Fixed output layout under the experiment directory.
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn new(root: &Path) -> Self {
        OutputLayout { root: root.to_path_buf() }
    }

    pub fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.root.join(name);
        fs::create_dir_all(&d).map_err(|e| TaanError::io(&d, e))?;
        Ok(d)
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("model.json")
    }

    pub fn history(&self) -> PathBuf {
        self.root.join("history").join("history.csv")
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| TaanError::io(path, e))
}

/// Runs a parsed command. `Ok(false)` means a check ran and failed.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData(common) => {
            let cfg = ExperimentConfig::resolve(&common)?;
            let layout = OutputLayout::new(&cfg.out);
            let dir = layout.dir("data")?;
            let data = cfg.load_data()?;
            for (t, splits) in data.iter().enumerate() {
                for split in [Split::Train, Split::Val, Split::Test] {
                    if let Some(ds) = splits.get(split) {
                        write_csv(ds, &csv_path(&dir, t, split))?;
                    }
                }
            }
            println!("wrote {} tasks to {}", data.len(), dir.display());
            Ok(true)
        }
        Command::Train { common, reg, coef, epochs } => {
            let mut cfg = ExperimentConfig::resolve(&common)?;
            if reg.is_some() || coef.is_some() {
                let kind = reg.unwrap_or(cfg.train.reg.kind);
                let c = coef.unwrap_or(cfg.train.reg.coefficient);
                cfg.train.reg = RegConfig::new(kind, c)?;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cmd_train(&cfg)?;
            Ok(true)
        }
        Command::Analyze { common, checkpoint } => {
            let cfg = ExperimentConfig::resolve(&common)?;
            let layout = OutputLayout::new(&cfg.out);
            let path = checkpoint.unwrap_or_else(|| layout.checkpoint());
            let model = TaanModel::load_checkpoint(&path)?;
            let clusters = cfg
                .clusters()
                .filter(|c| c.len() == model.task_count())
                .map(<[usize]>::to_vec);
            let text = cmd_analyze(&model, &layout, clusters.as_deref())?;
            print!("{text}");
            Ok(true)
        }
        Command::Check { kind, seed, samples, out } => {
            let report: CheckReport = match kind {
                CheckKind::Moments => check_moments()?,
                CheckKind::Gradients => check_gradients(seed)?,
                CheckKind::Bounds => check_bounds(seed, samples)?.0,
            };
            let text = report.to_text();
            print!("{text}");
            if let Some(out) = out {
                let dir = OutputLayout::new(&out).dir("reports")?;
                let name = format!("check_{}.txt", format!("{kind:?}").to_lowercase());
                write_text(&dir.join(name), &text)?;
            }
            Ok(report.passed())
        }
    }
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TaanModel> {
    let layout = OutputLayout::new(&cfg.out);
    let data = cfg.load_data()?;
    let model = TaanModel::build(cfg.arch()?, cfg.seed)?;
    let (model, history) = train(model, &data, &cfg.train)?;
    layout.dir("checkpoints")?;
    layout.dir("history")?;
    model.save_checkpoint(&layout.checkpoint())?;
    history.save_csv(&layout.history())?;

    let mut summary = String::new();
    for (t, d) in data.iter().enumerate() {
        if let Some(test) = d.get(Split::Test) {
            let m = evaluate(&model, test, t, cfg.train.val_metric)?;
            summary.push_str(&format!("task {t} test {}: {m}\n", cfg.train.val_metric));
        }
    }
    let reports = layout.dir("reports")?;
    write_text(&reports.join("train_summary.txt"), &summary)?;
    let resolved = toml::to_string(cfg).map_err(|e| TaanError::Serde(e.to_string()))?;
    write_text(&reports.join("config.toml"), &resolved)?;
    print!("{summary}");
    println!("checkpoint: {}", layout.checkpoint().display());
    Ok(model)
}

pub fn cmd_analyze(model: &TaanModel, layout: &OutputLayout, clusters: Option<&[usize]>) -> Result<String> {
    let cache = build_gram(model.grid(), model.mixture());
    let dir = layout.dir("matrices")?;
    let mut text = String::new();
    let reports = layer_distances(model, &cache)?;
    for r in &reports {
        for format in [HeatmapFormat::Csv, HeatmapFormat::Pgm] {
            let path = dir.join(format!("layer{}.{}", r.layer, format.extension()));
            export_heatmap(r, &path, format)?;
        }
        let mean = mean_pairwise_distance(&model.layers()[r.layer].coords, &cache)?;
        text.push_str(&format!("layer {} mean pairwise distance {mean}\n", r.layer));
    }
    if let (Some(c), Some(last)) = (clusters, reports.last()) {
        // Assignments without both kinds of pair have no separation to report.
        match cluster_separation(&last.distances, c) {
            Ok(s) => text.push_str(&format!(
                "last layer within-cluster {} between-cluster {} recovered {}\n",
                s.within,
                s.between,
                s.recovered()
            )),
            Err(TaanError::InvalidArgument(_)) => {
                text.push_str("cluster separation: not defined for this assignment\n")
            }
            Err(e) => return Err(e),
        }
    }
    write_text(&layout.dir("reports")?.join("analysis.txt"), &text)?;
    Ok(text)
}
