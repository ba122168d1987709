//! The `vqpool` command line.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{compare_weight_files, export_weights_file};
use crate::dataset::{
    generate_synthetic, labels_path, read_label_names, write_dataset, write_label_names,
    DatasetReader, DatasetShape, EmbeddingReader, EmbeddingWriter, PooledEmbedding, SyntheticSpec,
    UtteranceRecord, DATASET_MAGIC, EMBEDDING_MAGIC,
};
use crate::knn::{AnnConfig, Backend, EvalConfig, Metric};
use crate::pipeline::{
    pool_dataset, pool_records, run_bench, PipelineConfig, PoolingMethod, Transform,
};
use crate::transform::{SoftDecayParams, DEFAULT_SOFTDECAY_ALPHA};
use crate::vq::{build_counts, CodebookCounts, EqualityMode, SifOptions, DEFAULT_SIF_A};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "vqpool",
    version,
    about = "Pool frame-level speech representations using their quantized indices"
)]
pub struct Cli {
    /// Worker threads for per-utterance stages [default: available parallelism]
    #[arg(long, global = true, env = "VQPOOL_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count codebook indices over a training dataset and write an SPC1 file
    Counts {
        /// SPD1 training dataset
        dataset: PathBuf,
        /// Output SPC1 counts file
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Pool every utterance of a dataset into an SPE1 embeddings file
    Pool {
        /// SPD1 dataset
        dataset: PathBuf,
        #[command(flatten)]
        method: MethodArgs,
        /// SPC1 counts file (required by sif, gp and bp)
        #[arg(long)]
        counts: Option<PathBuf>,
        /// SPD1 dataset to fit the transform on [default: the input dataset]
        #[arg(long)]
        fit_on: Option<PathBuf>,
        /// Output SPE1 file
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Pool train and test splits and classify test utterances by nearest neighbors
    Bench {
        /// SPD1 training split; counts and transforms are fitted on it alone
        #[arg(long)]
        train: PathBuf,
        /// SPD1 test split
        #[arg(long)]
        test: PathBuf,
        #[command(flatten)]
        method: MethodArgs,
        #[command(flatten)]
        knn: KnnArgs,
        /// Also write the full confusion matrix as tab-separated text
        #[arg(long)]
        confusion: Option<PathBuf>,
        /// Print a readable summary to the error stream
        #[arg(long)]
        summary: bool,
    },
    /// Generate a synthetic train/test pair with class keywords among shared filler frames
    Gen(GenArgs),
    /// Write per-frame pooling weights as tab-separated text
    ExportWeights {
        /// SPD1 dataset
        dataset: PathBuf,
        #[command(flatten)]
        method: MethodArgs,
        /// SPC1 counts file (required by sif, gp and bp)
        #[arg(long)]
        counts: Option<PathBuf>,
        /// Output weights file
        #[arg(short, long)]
        out: PathBuf,
    },
    /// KL divergence of candidate weights from reference weights, per utterance
    CompareWeights {
        /// Reference weights file (P)
        reference: PathBuf,
        /// Candidate weights file (Q)
        candidate: PathBuf,
        /// Write per-utterance KL as tab-separated text
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write embeddings as tab-separated text (id, label, values) for external plotting
    ExportEmbeddings {
        /// SPE1 embeddings, or an SPD1 dataset to pool first
        input: PathBuf,
        #[command(flatten)]
        method: MethodArgs,
        /// SPC1 counts file, when pooling a dataset with sif, gp or bp
        #[arg(long)]
        counts: Option<PathBuf>,
        /// Also write the pooled embeddings as SPE1
        #[arg(long)]
        spe: Option<PathBuf>,
        /// Output text file
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    /// Average pooling: uniform weights
    Ap,
    /// Statistics pooling: mean and standard deviation, 2F dimensions
    Sp,
    /// Merge runs of equal consecutive frames, then average the runs
    Squash,
    /// Merge all equal frames, then average the groups
    Allsquash,
    /// Smooth inverse frequency a/(a + N(tuple)) from train counts
    Sif,
    /// Global probability 1/sum_g N_g(index) from train counts
    Gp,
    /// Local probability: the gp formula with counts from the utterance itself
    Lp,
    /// Product of lp and gp weights
    Bp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EqualityArg {
    /// Frames are equal when every group index matches
    And,
    /// Frames are equal when any group index matches
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransformArg {
    None,
    /// Zero-mean, identity-covariance transform fitted on training embeddings
    Whiten,
    /// Flatten the singular value spectrum with a soft-exponential map
    Softdecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransformStage {
    /// Transform utterance-level embeddings after pooling
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Cosine,
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IndexArg {
    /// Exhaustive search
    Exact,
    /// Random-projection forest
    Ann,
}

#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    /// Pooling method
    #[arg(long, value_enum, default_value_t = MethodArg::Ap)]
    pub method: MethodArg,
    /// Frame equality for squash and allsquash
    #[arg(long, value_enum, default_value_t = EqualityArg::And)]
    pub equality: EqualityArg,
    /// SIF smoothing constant a
    #[arg(long, default_value_t = DEFAULT_SIF_A)]
    pub sif_a: f64,
    /// Divide SIF counts by the total train frame count
    #[arg(long)]
    pub sif_normalize: bool,
    /// Post-pooling transform
    #[arg(long, value_enum, default_value_t = TransformArg::None)]
    pub transform: TransformArg,
    /// SoftDecay soft-exponential parameter (negative flattens the spectrum, 0 is identity)
    #[arg(long, default_value_t = DEFAULT_SOFTDECAY_ALPHA, allow_negative_numbers = true)]
    pub alpha: f64,
    /// Where transforms apply
    #[arg(long, value_enum, default_value_t = TransformStage::Pooled)]
    pub transform_stage: TransformStage,
}

impl MethodArgs {
    pub fn config(&self) -> Result<PipelineConfig> {
        let equality = match self.equality {
            EqualityArg::And => EqualityMode::And,
            EqualityArg::Or => EqualityMode::Or,
        };
        let sif = SifOptions {
            a: self.sif_a,
            normalize: self.sif_normalize,
        };
        let name = self
            .method
            .to_possible_value()
            .expect("no skipped variants");
        let method = PoolingMethod::parse(name.get_name(), equality, sif)?;
        method.validate()?;
        let transform = match self.transform {
            TransformArg::None => Transform::None,
            TransformArg::Whiten => Transform::Whiten,
            TransformArg::Softdecay => {
                Transform::parse("softdecay", self.alpha)?;
                Transform::SoftDecay(SoftDecayParams { alpha: self.alpha })
            }
        };
        Ok(PipelineConfig { method, transform })
    }
}

#[derive(Debug, Clone, Args)]
pub struct KnnArgs {
    /// Neighbors that vote; k=2 behaves as k=1 because ties go to the closest
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Cosine)]
    pub metric: MetricArg,
    #[arg(long, value_enum, default_value_t = IndexArg::Exact)]
    pub index: IndexArg,
    /// Trees in the ANN forest
    #[arg(long, default_value_t = crate::knn::DEFAULT_TREES)]
    pub trees: usize,
    /// Largest ANN leaf
    #[arg(long, default_value_t = crate::knn::DEFAULT_LEAF_SIZE)]
    pub leaf_size: usize,
    /// ANN forest seed
    #[arg(long, default_value_t = crate::knn::DEFAULT_SEED)]
    pub seed: u64,
    /// ANN candidates reranked per query [default: 8 x trees x leaf size]
    #[arg(long)]
    pub search_k: Option<usize>,
}

impl KnnArgs {
    pub fn config(&self) -> Result<EvalConfig> {
        if self.k == 0 {
            return Err(Error::Config("--k must be at least 1".into()));
        }
        let backend = match self.index {
            IndexArg::Exact => Backend::Exact,
            IndexArg::Ann => {
                let ann = AnnConfig {
                    trees: self.trees,
                    leaf_size: self.leaf_size,
                    seed: self.seed,
                    search_k: self.search_k,
                };
                ann.validate()?;
                Backend::Ann(ann)
            }
        };
        Ok(EvalConfig {
            metric: match self.metric {
                MetricArg::Cosine => Metric::Cosine,
                MetricArg::Euclidean => Metric::Euclidean,
            },
            k: self.k,
            backend,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Output SPD1 training split
    #[arg(long)]
    pub train: PathBuf,
    /// Output SPD1 test split
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = SyntheticSpec::default().classes)]
    pub classes: u32,
    #[arg(long, default_value_t = SyntheticSpec::default().train_per_class)]
    pub train_per_class: u32,
    #[arg(long, default_value_t = SyntheticSpec::default().test_per_class)]
    pub test_per_class: u32,
    /// Feature dimension F
    #[arg(long, default_value_t = SyntheticSpec::default().dim)]
    pub dim: u32,
    /// Codebook groups G
    #[arg(long, default_value_t = SyntheticSpec::default().groups)]
    pub groups: u32,
    /// Entries per codebook V
    #[arg(long, default_value_t = SyntheticSpec::default().codebook_size)]
    pub codebook_size: u32,
    #[arg(long, default_value_t = SyntheticSpec::default().min_frames)]
    pub min_frames: u32,
    #[arg(long, default_value_t = SyntheticSpec::default().max_frames)]
    pub max_frames: u32,
    /// Fraction of class-uninformative frames
    #[arg(long, default_value_t = SyntheticSpec::default().filler_fraction)]
    pub filler: f64,
    /// Per-frame Gaussian noise scale
    #[arg(long, default_value_t = SyntheticSpec::default().noise)]
    pub noise: f64,
    /// Per-utterance offset scale of filler frames
    #[arg(long, default_value_t = SyntheticSpec::default().drift)]
    pub drift: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().seed)]
    pub seed: u64,
}

impl GenArgs {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.classes,
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
            dim: self.dim,
            groups: self.groups,
            codebook_size: self.codebook_size,
            min_frames: self.min_frames,
            max_frames: self.max_frames,
            filler_fraction: self.filler,
            noise: self.noise,
            drift: self.drift,
            seed: self.seed,
        }
    }
}

/// Process exit status for an error: 2 for configuration and file-system
/// problems, 1 for everything else.
pub fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Config(_) | Error::Io(_) | Error::File { .. } => 2,
        _ => 1,
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vqpool: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::file(path, e))
}

fn load_dataset(path: &Path) -> Result<(DatasetShape, Vec<UtteranceRecord>)> {
    let reader = DatasetReader::open(path)?;
    let shape = reader.shape();
    let records = reader
        .read_all()
        .map_err(|e| e.context(path.display().to_string()))?;
    Ok((shape, records))
}

fn load_counts(path: Option<&Path>, method: PoolingMethod) -> Result<Option<CodebookCounts>> {
    match path {
        Some(p) if method.needs_counts() => Ok(Some(
            CodebookCounts::load(p).map_err(|e| e.context(p.display().to_string()))?,
        )),
        _ => Ok(None),
    }
}

fn require_counts_flag(method: PoolingMethod, counts: Option<&PathBuf>) -> Result<()> {
    if method.needs_counts() && counts.is_none() {
        return Err(Error::Config(format!(
            "--method {} needs --counts (build one with `vqpool counts`)",
            method.name()
        )));
    }
    Ok(())
}

fn check_counts_shape(counts: Option<&CodebookCounts>, shape: &DatasetShape) -> Result<()> {
    if let Some(c) = counts {
        if c.groups() != shape.groups as usize || c.codebook_size() != shape.codebook_size as usize
        {
            return Err(Error::Shape(format!(
                "counts have G={}, V={}; dataset has G={}, V={}",
                c.groups(),
                c.codebook_size(),
                shape.groups,
                shape.codebook_size
            )));
        }
    }
    Ok(())
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {n} threads: {e}")))?;
    }
    Ok(())
}

fn write_embeddings_file(
    path: &Path,
    embeddings: &[PooledEmbedding],
    dim: usize,
    num_labels: u32,
) -> Result<()> {
    let mut w = EmbeddingWriter::new(
        create(path)?,
        dim as u32,
        num_labels,
        embeddings.len() as u64,
    )?;
    for e in embeddings {
        w.write(e)?;
    }
    w.finish()?;
    Ok(())
}

fn sniff_magic(path: &Path) -> Result<[u8; 4]> {
    let mut magic = [0u8; 4];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map_err(|e| Error::file(path, e))?;
    Ok(magic)
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads)?;
    let stdout = io::stdout();
    match cli.command {
        Command::Counts { dataset, out } => {
            let (shape, records) = load_dataset(&dataset)?;
            let counts = build_counts(&shape, &records)?;
            counts.save(&out)?;
            let mut o = stdout.lock();
            writeln!(o, "total_frames={}", counts.total_frames())?;
            for (g, n) in counts.distinct_per_group().iter().enumerate() {
                writeln!(o, "distinct.{g}={n}")?;
            }
            writeln!(o, "distinct_tuples={}", counts.tuple_counts().len())?;
        }
        Command::Pool {
            dataset,
            method,
            counts,
            fit_on,
            out,
        } => {
            let config = method.config()?;
            require_counts_flag(config.method, counts.as_ref())?;
            let counts = load_counts(counts.as_deref(), config.method)?;
            let (shape, records) = load_dataset(&dataset)?;
            check_counts_shape(counts.as_ref(), &shape)?;
            let fit = match &fit_on {
                Some(p) if config.transform != Transform::None => {
                    let (fit_shape, fit_records) = load_dataset(p)?;
                    if fit_shape.dim != shape.dim {
                        return Err(Error::Shape(format!(
                            "--fit-on has F={}, dataset has F={}",
                            fit_shape.dim, shape.dim
                        )));
                    }
                    Some(
                        pool_records(config.method, &fit_records, counts.as_ref())
                            .map_err(|e| e.context("pooling --fit-on"))?,
                    )
                }
                _ => None,
            };
            let pooled = pool_dataset(&config, &records, counts.as_ref(), fit.as_deref())?;
            let dim = config.method.output_dim(shape.dim as usize);
            write_embeddings_file(&out, &pooled, dim, shape.num_labels)?;
            eprintln!(
                "pooled {} utterances with {} (D={dim}) into {}",
                pooled.len(),
                config.method,
                out.display()
            );
        }
        Command::Bench {
            train,
            test,
            method,
            knn,
            confusion,
            summary,
        } => {
            let config = method.config()?;
            let eval = knn.config()?;
            let (shape, train_records) = load_dataset(&train)?;
            let (test_shape, test_records) = load_dataset(&test)?;
            if (test_shape.dim, test_shape.groups, test_shape.codebook_size)
                != (shape.dim, shape.groups, shape.codebook_size)
            {
                return Err(Error::Shape(format!(
                    "train has F={}, G={}, V={}; test has F={}, G={}, V={}",
                    shape.dim,
                    shape.groups,
                    shape.codebook_size,
                    test_shape.dim,
                    test_shape.groups,
                    test_shape.codebook_size
                )));
            }
            let outcome = run_bench(&shape, &train_records, &test_records, &config, &eval, None)?;
            let report = &outcome.report;
            let mut o = stdout.lock();
            o.write_all(report.to_key_value().as_bytes())?;
            writeln!(o, "method={}", config.method.name())?;
            writeln!(o, "transform={}", config.transform.name())?;
            if let Some(path) = confusion {
                report.write_confusion_tsv(create(&path)?)?;
            }
            if summary {
                let names = read_label_names(&labels_path(&train)).ok();
                eprint!("{}", report.to_human(names.as_deref()));
            }
        }
        Command::Gen(args) => {
            let spec = args.spec();
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
            let data = generate_synthetic(&spec)?;
            for (path, records) in [(&args.train, &data.train), (&args.test, &data.test)] {
                write_dataset(create(path)?, data.shape, records)?;
                write_label_names(&labels_path(path), &data.label_names)?;
            }
            eprintln!(
                "wrote {} train and {} test utterances",
                data.train.len(),
                data.test.len()
            );
        }
        Command::ExportWeights {
            dataset,
            method,
            counts,
            out,
        } => {
            let config = method.config()?;
            if config.transform != Transform::None {
                return Err(Error::Unsupported(format!(
                    "transform {} has no per-frame weights",
                    config.transform.name()
                )));
            }
            if !config.method.has_frame_weights() {
                return Err(Error::Unsupported(format!(
                    "{} has no per-frame weights",
                    config.method.name()
                )));
            }
            require_counts_flag(config.method, counts.as_ref())?;
            let counts = load_counts(counts.as_deref(), config.method)?;
            let (shape, records) = load_dataset(&dataset)?;
            check_counts_shape(counts.as_ref(), &shape)?;
            export_weights_file(&records, config.method, counts.as_ref(), &out)?;
        }
        Command::CompareWeights {
            reference,
            candidate,
            out,
        } => {
            let cmp = compare_weight_files(&reference, &candidate)?;
            stdout.lock().write_all(cmp.to_key_value().as_bytes())?;
            if let Some(path) = out {
                cmp.write_tsv(create(&path)?)?;
            }
        }
        Command::ExportEmbeddings {
            input,
            method,
            counts,
            spe,
            out,
        } => {
            let config = method.config()?;
            let magic = sniff_magic(&input)?;
            let (embeddings, num_labels) = if magic == EMBEDDING_MAGIC {
                let reader = EmbeddingReader::open(&input)?;
                let num_labels = reader.header().num_labels;
                let all = reader
                    .read_all()
                    .map_err(|e| e.context(input.display().to_string()))?;
                (all, num_labels)
            } else if magic == DATASET_MAGIC {
                require_counts_flag(config.method, counts.as_ref())?;
                let counts = load_counts(counts.as_deref(), config.method)?;
                let (shape, records) = load_dataset(&input)?;
                check_counts_shape(counts.as_ref(), &shape)?;
                (
                    pool_dataset(&config, &records, counts.as_ref(), None)?,
                    shape.num_labels,
                )
            } else {
                return Err(Error::parse(
                    0,
                    None,
                    format!("{} is neither SPE1 nor SPD1", input.display()),
                ));
            };
            if let Some(path) = spe {
                let dim = embeddings.first().map_or(0, |e| e.vector.len());
                write_embeddings_file(&path, &embeddings, dim, num_labels)?;
            }
            let mut w = create(&out)?;
            for e in &embeddings {
                write!(w, "{}\t{}", e.id, e.label)?;
                for v in &e.vector {
                    write!(w, "\t{v}")?;
                }
                writeln!(w)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
