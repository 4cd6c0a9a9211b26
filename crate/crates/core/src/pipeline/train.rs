//! The two training stages of one fold.
//!
//! Every function that fits something takes only training-split data; the
//! test split reaches the fitted objects only through `harmonize_subjects`,
//! `extract_embeddings`, `build_subject_graphs` and `evaluate`.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{ExperimentConfig, FoldPlan, FoldReport, HeadConfig, Prediction, VitStageConfig};
use crate::dataio::{extract_roi_patches, Cohort, RoiPatchSet, RoiTimeSeries};
use crate::encoders::{stack_patches, VitParams};
use crate::fusion::{FusionConfig, FusionParams, FusionVariant, SubjectGraphs};
use crate::graphs::{build_functional_graph, build_structural_graph, Modality};
use crate::harmonize::CohortHarmonizer;
use crate::numerics::{seeded_rng, AdamConfig, AdamState, ParamSet, Tensor};
use crate::{Error, Result};

/// Subjects per forward pass when no gradient is needed.
const INFERENCE_BATCH: usize = 16;

/// Fits the site harmonizer on the listed (training) subjects.
pub fn fit_harmonizer(cohort: &Cohort, train: &[usize]) -> Result<CohortHarmonizer> {
    let records: Vec<_> = train.iter().map(|&i| cohort.records[i].clone()).collect();
    let volumes: Vec<_> = train.iter().map(|&i| cohort.volumes[i].clone()).collect();
    let timeseries: Vec<_> = train.iter().map(|&i| cohort.timeseries[i].clone()).collect();
    CohortHarmonizer::fit(&cohort.atlas, &records, &volumes, &timeseries)
}

/// Harmonized ROI patches and time series of the listed subjects. Volumes
/// are processed one at a time so only their patches stay in memory.
pub fn harmonize_subjects(
    cohort: &Cohort,
    harmonizer: Option<&CohortHarmonizer>,
    subjects: &[usize],
    patch_side: usize,
) -> Result<(Vec<RoiPatchSet>, Vec<RoiTimeSeries>)> {
    subjects
        .par_iter()
        .map(|&i| {
            let rec = std::slice::from_ref(&cohort.records[i]);
            let vol = std::slice::from_ref(&cohort.volumes[i]);
            let ts = std::slice::from_ref(&cohort.timeseries[i]);
            match harmonizer {
                None => Ok((extract_roi_patches(&vol[0], &cohort.atlas, patch_side)?, ts[0].clone())),
                Some(h) => {
                    let v = h.apply_volumes(&cohort.atlas, rec, vol)?;
                    let t = h.apply_timeseries(rec, ts)?;
                    Ok((extract_roi_patches(&v[0], &cohort.atlas, patch_side)?, t.into_iter().next().expect("one series")))
                }
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

fn check_loss(loss: f64, stage: &str, epoch: usize, batch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{stage} training loss {loss} at epoch {epoch}, batch {batch}")))
    }
}

/// Mini-batch order of one epoch.
fn epoch_batches(n: usize, batch_size: usize, rng: &mut impl rand::Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Stage 1: trains the ViT alone on its classification loss. Returns the
/// parameters and the epoch-mean training loss.
pub fn train_vit(
    cfg: &VitStageConfig,
    patches: &[RoiPatchSet],
    labels: &[usize],
    seed: u64,
    fold: usize,
) -> Result<(VitParams<f32>, Vec<f64>)> {
    let first = patches.first().ok_or_else(|| Error::Insufficient("empty training split".into()))?;
    if patches.len() != labels.len() {
        return Err(Error::Shape(format!("{} patch sets for {} labels", patches.len(), labels.len())));
    }
    let mut init = seeded_rng(seed, "vit-init", fold as u64);
    let mut params = VitParams::<f32>::init(&mut init, &cfg.model, first.roi_count(), first.patches.cols())?;
    let mut adam = AdamState::new(&params, AdamConfig::new(cfg.learning_rate, cfg.weight_decay));
    let mut order = seeded_rng(seed, "vit-order", fold as u64);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for (b, idx) in epoch_batches(patches.len(), cfg.batch_size, &mut order).into_iter().enumerate() {
            let sets: Vec<&RoiPatchSet> = idx.iter().map(|&i| &patches[i]).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut grad = params.zeroed();
            let loss = params.loss_and_grad(&stack_patches(&sets)?, &y, &mut grad)?.loss as f64;
            check_loss(loss, "ViT", epoch, b)?;
            adam.step(&mut params, &grad)?;
            total += loss * idx.len() as f64;
        }
        history.push(total / patches.len() as f64);
    }
    Ok((params, history))
}

/// ROI embeddings (`N × d`) of each subject under a frozen ViT.
pub fn extract_embeddings(vit: &VitParams<f32>, patches: &[RoiPatchSet]) -> Result<Vec<Tensor<f32>>> {
    let chunks: Vec<Vec<Tensor<f32>>> = patches
        .par_chunks(INFERENCE_BATCH)
        .map(|chunk| {
            let sets: Vec<&RoiPatchSet> = chunk.iter().collect();
            let pass = vit.forward(&stack_patches(&sets)?)?;
            Ok((0..chunk.len()).map(|b| pass.roi_embeddings(b)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Structural graphs from ROI embeddings and functional graphs from time
/// series, with `k` neighbors per node.
pub fn build_subject_graphs(embeddings: &[Tensor<f32>], timeseries: &[RoiTimeSeries], k: usize) -> Result<Vec<SubjectGraphs>> {
    if embeddings.len() != timeseries.len() {
        return Err(Error::Shape(format!("{} embeddings for {} time series", embeddings.len(), timeseries.len())));
    }
    embeddings
        .par_iter()
        .zip(timeseries.par_iter())
        .map(|(e, ts)| {
            Ok(SubjectGraphs {
                structural: Some(build_structural_graph(e, k)?),
                functional: Some(build_functional_graph(ts, k)?),
            })
        })
        .collect()
}

fn graph_dims(g: &SubjectGraphs) -> (usize, usize) {
    (
        g.structural.as_ref().map_or(0, |g| g.feature_dim()),
        g.functional.as_ref().map_or(0, |g| g.feature_dim()),
    )
}

/// Stage 2: trains the GAT encoders, the fusion block and the classifier
/// on frozen-ViT graphs.
#[allow(clippy::too_many_arguments)]
pub fn train_fusion(
    model: &FusionConfig,
    head: &HeadConfig,
    epochs: usize,
    variant: FusionVariant,
    graphs: &[SubjectGraphs],
    labels: &[usize],
    seed: u64,
    fold: usize,
) -> Result<(FusionParams<f32>, Vec<f64>)> {
    let first = graphs.first().ok_or_else(|| Error::Insufficient("empty training split".into()))?;
    if graphs.len() != labels.len() {
        return Err(Error::Shape(format!("{} subjects for {} labels", graphs.len(), labels.len())));
    }
    let (ds, df) = graph_dims(first);
    let stream = |s: &str| format!("{s}-{}", variant.name());
    let mut init = seeded_rng(seed, &stream("fusion-init"), fold as u64);
    let mut params = FusionParams::<f32>::init(&mut init, model, variant, ds, df)?;
    let mut adam = AdamState::new(&params, AdamConfig::new(head.learning_rate, head.weight_decay));
    let mut order = seeded_rng(seed, &stream("fusion-order"), fold as u64);
    let mut drop = seeded_rng(seed, &stream("fusion-dropout"), fold as u64);
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut total = 0.0;
        for (b, idx) in epoch_batches(graphs.len(), head.batch_size, &mut order).into_iter().enumerate() {
            let batch: Vec<&SubjectGraphs> = idx.iter().map(|&i| &graphs[i]).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut grad = params.zeroed();
            let loss = params.loss_and_grad(&batch, &y, head.dropout, &mut drop, &mut grad)? as f64;
            check_loss(loss, "fusion", epoch, b)?;
            adam.step(&mut params, &grad)?;
            total += loss * idx.len() as f64;
        }
        history.push(total / graphs.len() as f64);
    }
    Ok((params, history))
}

/// Evaluation-mode predictions; the positive class wins only on a strictly
/// higher probability.
pub fn evaluate(params: &FusionParams<f32>, graphs: &[SubjectGraphs], labels: &[usize], ids: &[String]) -> Result<Vec<Prediction>> {
    if graphs.len() != labels.len() || graphs.len() != ids.len() {
        return Err(Error::Shape("graphs, labels and ids differ in length".into()));
    }
    let probs: Vec<Tensor<f32>> = graphs
        .par_chunks(INFERENCE_BATCH)
        .map(|chunk| params.predict_proba(&chunk.iter().collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let rows = probs.iter().flat_map(|p| (0..p.rows()).map(move |r| p.row(r).to_vec()));
    Ok(rows
        .zip(labels.iter().zip(ids))
        .map(|(p, (&label, id))| Prediction {
            id: id.clone(),
            label,
            predicted: usize::from(p[1] > p[0]),
            probability: p[1] as f64,
        })
        .collect())
}

/// Everything fitted in one fold, for checkpointing and audits.
#[derive(Clone, Debug)]
pub struct TrainedFold {
    pub harmonizer: Option<CohortHarmonizer>,
    pub vit: Option<VitParams<f32>>,
    pub fusion: Vec<FusionParams<f32>>,
    pub reports: Vec<FoldReport>,
}

/// Runs both stages for every configured variant on one fold. Stage 1 is
/// shared by all variants; it is skipped when no variant uses the
/// structural graph.
pub fn train_fold(cohort: &Cohort, plan: &FoldPlan, fold_idx: usize, config: &ExperimentConfig) -> Result<TrainedFold> {
    let fold = plan.fold(fold_idx)?;
    if fold.train.is_empty() || fold.test.is_empty() {
        return Err(Error::Insufficient(format!("fold {fold_idx} has an empty split")));
    }
    let labels = |idx: &[usize]| -> Vec<usize> { idx.iter().map(|&i| cohort.records[i].label as usize).collect() };
    let (train_y, test_y) = (labels(&fold.train), labels(&fold.test));

    let harmonizer = if config.harmonize {
        Some(fit_harmonizer(cohort, &fold.train).map_err(|e| e.in_stage("harmonize"))?)
    } else {
        None
    };
    let side = config.cohort.patch_side;
    let (train_patches, train_ts) =
        harmonize_subjects(cohort, harmonizer.as_ref(), &fold.train, side).map_err(|e| e.in_stage("harmonize"))?;
    let (test_patches, test_ts) =
        harmonize_subjects(cohort, harmonizer.as_ref(), &fold.test, side).map_err(|e| e.in_stage("harmonize"))?;

    let needs_vit = config.variants.iter().any(|v| v.uses(Modality::Structural));
    let (vit, vit_loss) = if needs_vit {
        let (p, h) = train_vit(&config.vit, &train_patches, &train_y, config.seed, fold_idx).map_err(|e| e.in_stage("vit"))?;
        (Some(p), h)
    } else {
        (None, Vec::new())
    };

    let graphs = |patches: &[RoiPatchSet], ts: &[RoiTimeSeries]| -> Result<Vec<SubjectGraphs>> {
        match &vit {
            Some(v) => build_subject_graphs(&extract_embeddings(v, patches)?, ts, config.k),
            None => ts
                .par_iter()
                .map(|t| Ok(SubjectGraphs { structural: None, functional: Some(build_functional_graph(t, config.k)?) }))
                .collect(),
        }
    };
    let train_graphs = graphs(&train_patches, &train_ts).map_err(|e| e.in_stage("graphs"))?;
    let test_graphs = graphs(&test_patches, &test_ts).map_err(|e| e.in_stage("graphs"))?;
    drop((train_patches, test_patches));

    let mut fusion = Vec::new();
    let mut reports = Vec::new();
    for &variant in &config.variants {
        let (params, loss) = train_fusion(
            &config.fusion.model(variant),
            config.fusion.head(variant),
            config.fusion.epochs,
            variant,
            &train_graphs,
            &train_y,
            config.seed,
            fold_idx,
        )
        .map_err(|e| e.in_stage("fusion"))?;
        let predictions = evaluate(&params, &test_graphs, &test_y, &fold.test_ids).map_err(|e| e.in_stage("evaluate"))?;
        reports.push(FoldReport::from_predictions(
            fold_idx,
            variant,
            fold.train.len(),
            predictions,
            if variant.uses(Modality::Structural) { vit_loss.clone() } else { Vec::new() },
            loss,
        )?);
        fusion.push(params);
    }
    Ok(TrainedFold { harmonizer, vit, fusion, reports })
}
