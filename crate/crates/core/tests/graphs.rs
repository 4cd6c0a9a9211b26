use brainfuse::dataio::{synthesize_cohort, GeneratorConfig, PlantedEffects, RoiTimeSeries};
use brainfuse::graphs::{
    build_functional_graph, build_structural_graph, fisher_z, knn_graph, pearson_fcn, BrainGraph, Modality,
};
use brainfuse::numerics::{seeded_rng, Tensor};
use rand::Rng;

fn random_ts(seed: u64, t: usize, n: usize) -> RoiTimeSeries {
    let mut rng = seeded_rng(seed, "ts", 0);
    RoiTimeSeries::new(Tensor::from_fn(&[t, n], |_| rng.random_range(-2.0..2.0f32))).unwrap()
}

/// Textbook single-pass formula, independent of the centred implementation.
fn direct_corr(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

#[test]
fn pearson_matches_direct_formula() {
    for seed in 0..20 {
        let ts = random_ts(seed, 40, 9);
        let fcn = pearson_fcn(&ts).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let want = if i == j { 1.0 } else { direct_corr(&ts.column(i), &ts.column(j)) };
                assert!((fcn.get(i, j) - want).abs() < 1e-10, "({i},{j})");
            }
        }
    }
}

#[test]
fn functional_graph_shape_and_features() {
    let ts = random_ts(3, 32, 12);
    let g = build_functional_graph(&ts, 4).unwrap();
    assert_eq!(g.modality, Modality::Functional);
    assert_eq!(g.node_features.shape(), &[12, 12]);
    let z = fisher_z(&pearson_fcn(&ts).unwrap()).unwrap();
    for i in 0..12 {
        assert_eq!(g.node_features.row(i), z.values.row(i));
    }
    assert!(g.degrees().iter().all(|&d| (4..12).contains(&d)));
}

#[test]
fn raw_and_fisher_topologies_agree() {
    for seed in 0..20 {
        let ts = random_ts(100 + seed, 24, 10);
        let r = pearson_fcn(&ts).unwrap();
        let mut raw = r.values.clone();
        for i in 0..10 {
            raw.set2(i, i, 0.0);
        }
        let feats = Tensor::zeros(&[10, 1]);
        let raw = brainfuse::graphs::SimilarityMatrix::new(r.kind, raw).unwrap();
        let a = knn_graph(&raw, 3, feats.clone(), Modality::Functional).unwrap();
        let b = knn_graph(&fisher_z(&r).unwrap(), 3, feats, Modality::Functional).unwrap();
        let pairs = |g: &BrainGraph| g.edges.iter().map(|e| (e.i, e.j)).collect::<Vec<_>>();
        assert_eq!(pairs(&a), pairs(&b));
    }
}

#[test]
fn planted_pair_is_almost_always_linked() {
    let cohort = synthesize_cohort(&GeneratorConfig {
        n_subjects: 100,
        n_sites: 2,
        volume_side: 16,
        patch_side: 4,
        effects: PlantedEffects::default(),
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    // ROIs 0 and 1 share the first latent module.
    let hits = cohort
        .timeseries
        .iter()
        .filter(|ts| {
            let g = build_functional_graph(ts, 5).unwrap();
            g.edges.iter().any(|e| (e.i, e.j) == (0, 1))
        })
        .count();
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn graph_json_round_trip() {
    let mut rng = seeded_rng(4, "emb", 0);
    let emb = Tensor::from_fn(&[10, 16], |_| rng.random_range(-1.0..1.0f32));
    let g = build_structural_graph(&emb, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    g.save(&path).unwrap();
    assert_eq!(BrainGraph::load(&path).unwrap(), g);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(json["directed"], false);
    assert_eq!(json["n_nodes"], 10);
    assert!(json["edges"][0]["w"].is_number());
}

#[test]
fn malformed_graph_files_are_rejected() {
    let bad = br#"{"n_nodes":2,"directed":false,"modality":"functional","node_features":[[0.0],[1.0]],"edges":[{"i":1,"j":0,"w":0.5}]}"#;
    assert!(BrainGraph::from_json(bad).is_err());
    assert!(BrainGraph::from_json(b"{\"n_nodes\":").is_err());
}
