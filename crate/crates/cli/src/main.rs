use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use brainfuse::dataio::{Cohort, RoiTimeSeries};
use brainfuse::encoders::{load_checkpoint, save_checkpoint, VitParams};
use brainfuse::fusion::{FusionParams, FusionVariant, SubjectGraphs};
use brainfuse::graphs::{build_functional_graph, build_structural_graph, BrainGraph, Modality};
use brainfuse::harmonize::CohortHarmonizer;
use brainfuse::numerics::ngt::{self, write_atomic};
use brainfuse::numerics::seeded_rng;
use brainfuse::pipeline::{
    compare_runs, evaluate, extract_embeddings, fit_harmonizer, harmonize_subjects, load_cohort, plan_folds,
    run_experiment_to_dir, train_fusion, train_vit, two_sample_ttest, ExperimentConfig, ExperimentReport, FoldPlan,
    FoldReport, RunReport, REPORT_FILE, REPORT_SCHEMA_VERSION, TABLE_FILE,
};

#[derive(Parser)]
#[command(name = "brainfuse", version, about = "Multimodal brain-graph fusion experiments")]
struct Cli {
    /// Experiment configuration (JSON). Defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 lets rayon decide).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the configured cohort and plan the folds.
    Generate,
    /// Fit the site harmonizer on one fold's training split.
    Harmonize {
        #[arg(long)]
        fold: usize,
    },
    /// Train the ViT encoder on one fold's training split.
    TrainVit {
        #[arg(long)]
        fold: usize,
    },
    /// Write the frozen ViT's ROI embeddings for every subject.
    ExtractEmbeddings {
        #[arg(long)]
        fold: usize,
    },
    /// Build structural (if embeddings exist) and functional graphs.
    BuildGraphs {
        #[arg(long)]
        fold: usize,
    },
    /// Train one fusion variant on the fold's training graphs.
    TrainFusion {
        #[arg(long)]
        variant: FusionVariant,
        #[arg(long)]
        fold: usize,
    },
    /// Score a trained variant on the fold's test split.
    Evaluate {
        #[arg(long)]
        variant: FusionVariant,
        #[arg(long)]
        fold: usize,
    },
    /// Aggregate every fold report into a run report and table.
    Report,
    /// Welch t-test between two variants of a saved run report.
    Ttest {
        report: PathBuf,
        #[arg(long)]
        a: FusionVariant,
        #[arg(long)]
        b: FusionVariant,
        #[arg(long, default_value = "accuracy")]
        metric: String,
    },
    /// Run the whole cross-validated experiment.
    Run,
}

#[derive(Serialize, Deserialize)]
struct VitMeta {
    n_rois: usize,
    patch_len: usize,
    loss: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FusionMeta {
    variant: FusionVariant,
    structural_dim: usize,
    functional_dim: usize,
    loss: Vec<f64>,
}

struct Workspace {
    config: ExperimentConfig,
    out: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_atomic(path, &serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

impl Workspace {
    fn fold_dir(&self, fold: usize) -> PathBuf {
        self.out.join(format!("fold-{fold}"))
    }

    fn fusion_dir(&self, fold: usize, variant: FusionVariant) -> PathBuf {
        self.fold_dir(fold).join(format!("fusion-{}", variant.name()))
    }

    fn cohort(&self) -> Result<Cohort> {
        if self.config.manifest.is_some() {
            return Ok(load_cohort(&self.config)?);
        }
        let manifest = self.out.join("cohort").join("manifest.json");
        if !manifest.exists() {
            bail!("no cohort at {}; run `generate` or set `manifest`", manifest.display());
        }
        Ok(Cohort::load(&manifest)?)
    }

    fn plan(&self, cohort: &Cohort) -> Result<FoldPlan> {
        let path = self.out.join("folds.json");
        if path.exists() {
            return read_json(&path);
        }
        let plan = plan_folds(cohort, &self.config)?;
        write_json(&path, &plan)?;
        Ok(plan)
    }

    fn harmonizer(&self, fold: usize) -> Result<Option<CohortHarmonizer>> {
        read_json(&self.fold_dir(fold).join("harmonizer.json")).context("run `harmonize` first")
    }

    fn vit(&self, fold: usize) -> Result<(VitParams<f32>, VitMeta)> {
        let dir = self.fold_dir(fold).join("vit");
        let meta: VitMeta = read_json(&dir.join("meta.json")).context("run `train-vit` first")?;
        let mut rng = seeded_rng(0, "checkpoint-shape", 0);
        let mut params = VitParams::<f32>::init(&mut rng, &self.config.vit.model, meta.n_rois, meta.patch_len)?;
        load_checkpoint(&mut params, &dir)?;
        Ok((params, meta))
    }

    fn load_graphs(&self, fold: usize, ids: &[String]) -> Result<Vec<SubjectGraphs>> {
        let dir = self.fold_dir(fold).join("graphs");
        ids.iter()
            .map(|id| {
                let load = |m: Modality| -> Result<Option<BrainGraph>> {
                    let p = dir.join(format!("{id}.{}.json", m.name()));
                    Ok(if p.exists() { Some(BrainGraph::load(&p)?) } else { None })
                };
                let g = SubjectGraphs { structural: load(Modality::Structural)?, functional: load(Modality::Functional)? };
                if g.functional.is_none() {
                    bail!("no graphs for subject '{id}' in {}; run `build-graphs` first", dir.display());
                }
                Ok(g)
            })
            .collect()
    }
}

fn labels(cohort: &Cohort, idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| cohort.records[i].label as usize).collect()
}

fn generate(ws: &Workspace) -> Result<()> {
    let dir = ws.out.join("cohort");
    let cohort = load_cohort(&ws.config)?;
    if ws.config.manifest.is_none() {
        cohort.save(&dir)?;
        log::info!("wrote {} subjects to {}", cohort.len(), dir.display());
    }
    let plan = plan_folds(&cohort, &ws.config)?;
    write_json(&ws.out.join("folds.json"), &plan)?;
    write_json(&ws.out.join("config.json"), &ws.config)
}

fn harmonize(ws: &Workspace, fold: usize) -> Result<()> {
    let cohort = ws.cohort()?;
    let plan = ws.plan(&cohort)?;
    let f = plan.fold(fold)?;
    let h = if ws.config.harmonize { Some(fit_harmonizer(&cohort, &f.train)?) } else { None };
    write_json(&ws.fold_dir(fold).join("harmonizer.json"), &h)
}

fn train_vit_stage(ws: &Workspace, fold: usize) -> Result<()> {
    let cohort = ws.cohort()?;
    let plan = ws.plan(&cohort)?;
    let f = plan.fold(fold)?;
    let h = ws.harmonizer(fold)?;
    let (patches, _) = harmonize_subjects(&cohort, h.as_ref(), &f.train, ws.config.cohort.patch_side)?;
    let (params, loss) = train_vit(&ws.config.vit, &patches, &labels(&cohort, &f.train), ws.config.seed, fold)?;
    let dir = ws.fold_dir(fold).join("vit");
    save_checkpoint(&params, &dir)?;
    let meta = VitMeta { n_rois: patches[0].roi_count(), patch_len: patches[0].patches.cols(), loss };
    log::info!("fold {fold}: ViT final loss {:?}", meta.loss.last());
    write_json(&dir.join("meta.json"), &meta)
}

fn extract(ws: &Workspace, fold: usize) -> Result<()> {
    let cohort = ws.cohort()?;
    let plan = ws.plan(&cohort)?;
    let f = plan.fold(fold)?;
    let h = ws.harmonizer(fold)?;
    let (vit, _) = ws.vit(fold)?;
    let dir = ws.fold_dir(fold).join("embeddings");
    std::fs::create_dir_all(&dir)?;
    // Splits are embedded separately, as in the in-process pipeline.
    for (idx, ids) in [(&f.train, &f.train_ids), (&f.test, &f.test_ids)] {
        let (patches, _) = harmonize_subjects(&cohort, h.as_ref(), idx, ws.config.cohort.patch_side)?;
        for (e, id) in extract_embeddings(&vit, &patches)?.iter().zip(ids) {
            ngt::save(&dir.join(format!("{id}.ngt")), e)?;
        }
    }
    Ok(())
}

fn build_graphs(ws: &Workspace, fold: usize) -> Result<()> {
    let cohort = ws.cohort()?;
    let plan = ws.plan(&cohort)?;
    let f = plan.fold(fold)?;
    let h = ws.harmonizer(fold)?;
    let emb_dir = ws.fold_dir(fold).join("embeddings");
    let dir = ws.fold_dir(fold).join("graphs");
    std::fs::create_dir_all(&dir)?;
    let mut timeseries: Vec<RoiTimeSeries> = Vec::new();
    for idx in [&f.train, &f.test] {
        timeseries.extend(harmonize_subjects(&cohort, h.as_ref(), idx, ws.config.cohort.patch_side)?.1);
    }
    let ids: Vec<&String> = f.train_ids.iter().chain(&f.test_ids).collect();
    let structural = emb_dir.exists();
    if !structural {
        log::info!("fold {fold}: no embeddings, building functional graphs only");
    }
    for (ts, id) in timeseries.iter().zip(ids) {
        build_functional_graph(ts, ws.config.k)?.save(&dir.join(format!("{id}.functional.json")))?;
        if structural {
            let e = ngt::load(&emb_dir.join(format!("{id}.ngt")))?;
            build_structural_graph(&e, ws.config.k)?.save(&dir.join(format!("{id}.structural.json")))?;
        }
    }
    Ok(())
}

fn train_fusion_stage(ws: &Workspace, variant: FusionVariant, fold: usize) -> Result<()> {
    let cohort = ws.cohort()?;
    let plan = ws.plan(&cohort)?;
    let f = plan.fold(fold)?;
    let graphs = ws.load_graphs(fold, &f.train_ids)?;
    if variant.uses(Modality::Structural) && graphs[0].structural.is_none() {
        bail!("variant {variant} needs structural graphs; run `extract-embeddings` and `build-graphs`");
    }
    let c = &ws.config;
    let (params, loss) = train_fusion(
        &c.fusion.model(variant),
        c.fusion.head(variant),
        c.fusion.epochs,
        variant,
        &graphs,
        &labels(&cohort, &f.train),
        c.seed,
        fold,
    )?;
    let dir = ws.fusion_dir(fold, variant);
    save_checkpoint(&params, &dir)?;
    let dim = |g: &Option<BrainGraph>| g.as_ref().map_or(0, |g| g.feature_dim());
    let meta = FusionMeta {
        variant,
        structural_dim: dim(&graphs[0].structural),
        functional_dim: dim(&graphs[0].functional),
        loss,
    };
    write_json(&dir.join("meta.json"), &meta)
}

fn evaluate_stage(ws: &Workspace, variant: FusionVariant, fold: usize) -> Result<()> {
    let cohort = ws.cohort()?;
    let plan = ws.plan(&cohort)?;
    let f = plan.fold(fold)?;
    let dir = ws.fusion_dir(fold, variant);
    let meta: FusionMeta = read_json(&dir.join("meta.json")).context("run `train-fusion` first")?;
    let mut rng = seeded_rng(0, "checkpoint-shape", 0);
    let mut params =
        FusionParams::<f32>::init(&mut rng, &ws.config.fusion.model(variant), variant, meta.structural_dim, meta.functional_dim)?;
    load_checkpoint(&mut params, &dir)?;
    let graphs = ws.load_graphs(fold, &f.test_ids)?;
    let predictions = evaluate(&params, &graphs, &labels(&cohort, &f.test), &f.test_ids)?;
    let vit_loss = if variant.uses(Modality::Structural) {
        read_json::<VitMeta>(&ws.fold_dir(fold).join("vit").join("meta.json"))?.loss
    } else {
        Vec::new()
    };
    let report = FoldReport::from_predictions(fold, variant, f.train.len(), predictions, vit_loss, meta.loss)?;
    if let Some(acc) = report.metrics.accuracy {
        println!("fold {fold} {variant}: accuracy {:.4}", acc);
    }
    write_json(&dir.join("fold_report.json"), &report)
}

fn report(ws: &Workspace) -> Result<ExperimentReport> {
    let mut runs = Vec::new();
    for &variant in &ws.config.variants {
        let folds = (0..ws.config.folds)
            .map(|f| read_json(&ws.fusion_dir(f, variant).join("fold_report.json")))
            .collect::<Result<Vec<FoldReport>>>()
            .with_context(|| format!("collecting {variant} fold reports"))?;
        runs.push(RunReport::new(variant, &ws.config, folds)?);
    }
    let report =
        ExperimentReport { schema_version: REPORT_SCHEMA_VERSION, comparisons: compare_runs(&runs, "accuracy")?, runs };
    report.save(&ws.out.join(REPORT_FILE))?;
    write_atomic(&ws.out.join(TABLE_FILE), report.table().as_bytes())?;
    Ok(report)
}

fn ttest(path: &Path, a: FusionVariant, b: FusionVariant, metric: &str) -> Result<()> {
    let report = ExperimentReport::load(path)?;
    let values = |v: FusionVariant| -> Result<Vec<f64>> {
        let run = report.run(v).with_context(|| format!("no {v} run in {}", path.display()))?;
        Ok(run.metric_values(metric)?)
    };
    let t = two_sample_ttest(&values(a)?, &values(b)?)?;
    println!("{a} vs {b} ({metric}): t = {:.4}, df = {:.2}, p = {:.4}", t.t, t.df, t.p);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()?;
    }
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    let ws = Workspace { config, out: cli.out };
    match cli.command {
        Command::Generate => generate(&ws),
        Command::Harmonize { fold } => harmonize(&ws, fold),
        Command::TrainVit { fold } => train_vit_stage(&ws, fold),
        Command::ExtractEmbeddings { fold } => extract(&ws, fold),
        Command::BuildGraphs { fold } => build_graphs(&ws, fold),
        Command::TrainFusion { variant, fold } => train_fusion_stage(&ws, variant, fold),
        Command::Evaluate { variant, fold } => evaluate_stage(&ws, variant, fold),
        Command::Report => {
            print!("{}", report(&ws)?.table());
            Ok(())
        }
        Command::Ttest { report, a, b, metric } => ttest(&report, a, b, &metric),
        Command::Run => {
            let report = run_experiment_to_dir(&ws.config, &ws.out)?;
            print!("{}", report.table());
            Ok(())
        }
    }
}
