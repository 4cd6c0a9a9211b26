use super::*;
use crate::dataio::{synthesize_cohort, synthesize_site_features, GeneratorConfig, PlantedEffects, SiteFeatureConfig, SubjectRecord};
use crate::numerics::Tensor;
use crate::Error;

fn features(sites: Vec<(f64, f64)>, n: usize, g: usize, class_effect: f64, seed: u64) -> FeatureMatrix {
    let f = synthesize_site_features(&SiteFeatureConfig {
        n_subjects: n,
        n_features: g,
        sites,
        class_effect,
        class_features: g,
        covariate_effect: 0.0,
        seed,
    })
    .unwrap();
    FeatureMatrix::new(f.values, f.records).unwrap()
}

fn site_means(m: &FeatureMatrix, site: &str) -> Vec<f64> {
    let idx: Vec<usize> = (0..m.subjects()).filter(|&j| m.records[j].site == site).collect();
    (0..m.features())
        .map(|f| idx.iter().map(|&j| m.values.get2(j, f)).sum::<f64>() / idx.len() as f64)
        .collect()
}

fn max_site_gap(m: &FeatureMatrix) -> f64 {
    let mut sites: Vec<&str> = m.records.iter().map(|r| r.site.as_str()).collect();
    sites.sort();
    sites.dedup();
    let means: Vec<Vec<f64>> = sites.iter().map(|s| site_means(m, s)).collect();
    let mut gap: f64 = 0.0;
    for a in &means {
        for b in &means {
            gap = gap.max(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64);
        }
    }
    gap
}

fn class_gap(m: &FeatureMatrix) -> f64 {
    let mut gap = 0.0;
    for f in 0..m.features() {
        let (mut s, mut c) = ([0.0; 2], [0.0; 2]);
        for j in 0..m.subjects() {
            let l = m.records[j].label as usize;
            s[l] += m.values.get2(j, f);
            c[l] += 1.0;
        }
        gap += s[1] / c[1] - s[0] / c[0];
    }
    gap / m.features() as f64
}

#[test]
fn identical_sites_give_neutral_effects() {
    let base = features(vec![(0.0, 1.0)], 60, 6, 0.0, 1);
    let mut recs = base.records.clone();
    let mut data = base.values.data().to_vec();
    for r in base.records.iter() {
        recs.push(SubjectRecord { id: format!("{}-b", r.id), site: "site-b".into(), ..r.clone() });
    }
    data.extend_from_slice(base.values.data());
    let m = FeatureMatrix::new(Tensor::new(vec![120, 6], data).unwrap(), recs).unwrap();
    let model = combat_fit(&m).unwrap();
    for s in &model.sites {
        for (g, d) in s.gamma.iter().zip(&s.delta) {
            assert!(g.abs() < 1e-9, "gamma {g}");
            // Unbiased site variance against the pooled ML variance.
            assert!((d - 1.0).abs() < 0.02, "delta {d}");
        }
    }
}

#[test]
fn planted_site_effects_are_recovered() {
    let m = features(vec![(0.0, 1.0), (2.0, 1.5)], 200, 50, 0.0, 7);
    let model = combat_fit(&m).unwrap();
    let (a, b) = (model.site("site-0").unwrap(), model.site("site-1").unwrap());
    let n = model.features() as f64;
    let sd: Vec<f64> = model.pooled_var.iter().map(|v| v.sqrt()).collect();
    let gamma = (0..model.features()).map(|f| (b.gamma[f] - a.gamma[f]) * sd[f]).sum::<f64>() / n;
    let delta = (0..model.features()).map(|f| b.delta[f] / a.delta[f]).sum::<f64>() / n;
    assert!((gamma - 2.0).abs() < 0.2, "gamma {gamma}");
    assert!((delta - 1.5).abs() < 0.15, "delta {delta}");
}

#[test]
fn fit_is_invariant_to_subject_order() {
    let m = features(vec![(0.0, 1.0), (1.0, 1.3), (-0.5, 0.8)], 90, 8, 0.5, 3);
    let perm: Vec<usize> = (0..90).map(|i| (i * 37 + 11) % 90).collect();
    let a = combat_fit(&m).unwrap();
    let b = combat_fit(&m.select(&perm)).unwrap();
    let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-10);
    assert!(close(&a.alpha, &b.alpha) && close(&a.pooled_var, &b.pooled_var));
    for (sa, sb) in a.sites.iter().zip(&b.sites) {
        assert_eq!(sa.id, sb.id);
        assert!(close(&sa.gamma, &sb.gamma) && close(&sa.delta, &sb.delta));
    }
}

#[test]
fn null_data_is_barely_changed() {
    let m = features(vec![(0.0, 1.0), (0.0, 1.0)], 8000, 6, 0.0, 11);
    let model = combat_fit(&m).unwrap();
    let out = combat_apply(&m, &model).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..m.subjects() {
        for f in 0..m.features() {
            let d = (out.values.get2(j, f) - m.values.get2(j, f)) / model.pooled_var[f].sqrt();
            worst = worst.max(d.abs());
        }
    }
    assert!(worst < 0.05, "max standardized change {worst}");
}

#[test]
fn site_mean_gaps_shrink() {
    let m = features(vec![(0.0, 1.0), (1.5, 1.4), (-1.0, 0.7), (0.6, 1.1)], 200, 30, 0.0, 5);
    let before = max_site_gap(&m);
    let out = combat_apply(&m, &combat_fit(&m).unwrap()).unwrap();
    let after = max_site_gap(&out);
    assert!(after <= 0.1 * before, "{before} -> {after}");
}

#[test]
fn twins_across_sites_move_closer() {
    let mut m = features(vec![(0.0, 1.0), (2.0, 1.5)], 100, 10, 0.0, 9);
    // Subject 1 (site-1) gets subject 0's underlying values pushed through site-1's planted effect.
    for f in 0..10 {
        let v = m.values.get2(0, f);
        m.values.set2(1, f, 2.0 + v);
    }
    let dist = |m: &FeatureMatrix| (0..10).map(|f| (m.values.get2(0, f) - m.values.get2(1, f)).powi(2)).sum::<f64>();
    let out = combat_apply(&m, &combat_fit(&m).unwrap()).unwrap();
    assert!(dist(&out) < dist(&m), "{} !< {}", dist(&out), dist(&m));
}

#[test]
fn refit_on_harmonized_data_is_neutral() {
    let m = features(vec![(0.0, 1.0), (1.5, 1.4), (-1.0, 0.7)], 150, 20, 0.0, 13);
    let out = combat_apply(&m, &combat_fit(&m).unwrap()).unwrap();
    let refit = combat_fit(&out).unwrap();
    for s in &refit.sites {
        for (g, d) in s.gamma.iter().zip(&s.delta) {
            assert!(g.abs() < 0.05 && (d - 1.0).abs() < 0.05, "gamma {g} delta {d}");
        }
    }
}

#[test]
fn class_effect_survives_with_class_covariate() {
    let m = features(vec![(0.0, 1.0), (1.5, 1.4), (-1.0, 0.7), (0.6, 1.1)], 200, 20, 1.0, 17);
    let before = class_gap(&m);
    let h = Harmonizer::fit_with(&m, true).unwrap();
    let after = class_gap(&h.apply(&m).unwrap());
    assert!((after - before).abs() <= 0.15 * before.abs(), "{before} -> {after}");
}

#[test]
fn apply_rejects_unknown_sites() {
    let m = features(vec![(0.0, 1.0), (1.0, 1.0)], 40, 3, 0.0, 2);
    let model = combat_fit(&m).unwrap();
    let mut other = m.clone();
    other.records[0].site = "elsewhere".into();
    assert!(matches!(combat_apply(&other, &model), Err(Error::UnknownSite(s)) if s == "elsewhere"));
}

#[test]
fn fit_preconditions() {
    let m = features(vec![(0.0, 1.0), (1.0, 1.0)], 40, 3, 0.0, 2);
    let small: Vec<usize> = (0..40).filter(|&j| m.records[j].site == "site-0" || j < 4).collect();
    assert!(matches!(combat_fit(&m.select(&small)), Err(Error::Insufficient(_))));
    let one_feature = FeatureMatrix::new(Tensor::from_fn(&[40, 1], |i| m.values.data()[i * 3]), m.records.clone()).unwrap();
    assert!(matches!(combat_fit(&one_feature), Err(Error::Insufficient(_))));
    let mut flat = m.clone();
    for j in 0..40 {
        flat.values.set2(j, 1, 4.0);
    }
    assert!(matches!(combat_fit(&flat), Err(Error::InvalidArgument(_))));
}

#[test]
fn model_json_round_trip() {
    let m = features(vec![(0.0, 1.0), (1.0, 1.2)], 40, 4, 0.0, 4);
    let model = combat_fit(&m).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("combat.json");
    model.save(&path).unwrap();
    assert_eq!(CombatModel::load(&path).unwrap(), model);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    for key in ["alpha", "beta", "sites", "pooled_var"] {
        assert!(json.get(key).is_some(), "{key}");
    }
}

#[test]
fn harmonizer_commutes_with_permutation() {
    let m = features(vec![(0.0, 1.0), (1.5, 1.4), (-1.0, 0.7)], 90, 6, 0.5, 21);
    let perm: Vec<usize> = (0..90).rev().collect();
    let a = Harmonizer::fit(&m).unwrap().apply(&m).unwrap().select(&perm);
    let pm = m.select(&perm);
    let b = Harmonizer::fit(&pm).unwrap().apply(&pm).unwrap();
    assert!(a.values.max_abs_diff(&b.values) < 1e-9);
}

fn small_cohort(n_sites: usize, effects: PlantedEffects) -> crate::dataio::Cohort {
    synthesize_cohort(&GeneratorConfig {
        n_subjects: 16 * n_sites,
        n_sites,
        n_rois: 8,
        volume_side: 16,
        timepoints: 32,
        patch_side: 4,
        effects,
        seed: 5,
    })
    .unwrap()
}

#[test]
fn single_site_timeseries_are_untouched() {
    let c = small_cohort(1, PlantedEffects::default());
    let out = harmonize_timeseries(&c.records, &c.timeseries).unwrap();
    assert_eq!(out, c.timeseries);
}

#[test]
fn timeseries_site_offsets_are_removed() {
    let effects = PlantedEffects { site_gamma_sd: 1.5, structural: 0.0, functional: 0.0, ..Default::default() };
    let c = small_cohort(3, effects);
    let out = harmonize_timeseries(&c.records, &c.timeseries).unwrap();
    for (a, b) in out.iter().zip(&c.timeseries) {
        assert_eq!(a.matrix().shape(), b.matrix().shape());
    }
    let roi_means = |ts: &[crate::dataio::RoiTimeSeries]| {
        let data = ts
            .iter()
            .flat_map(|t| (0..t.roi_count()).map(move |r| t.column(r).iter().sum::<f64>() / t.timepoints() as f64))
            .collect();
        FeatureMatrix::new(Tensor::new(vec![ts.len(), 8], data).unwrap(), c.records.clone()).unwrap()
    };
    let before = max_site_gap(&roi_means(&c.timeseries));
    let after = max_site_gap(&roi_means(&out));
    assert!(after <= 0.1 * before, "{before} -> {after}");
}

#[test]
fn volume_site_offsets_are_removed() {
    let effects = PlantedEffects { site_gamma_sd: 1.5, structural: 0.0, functional: 0.0, ..Default::default() };
    let c = small_cohort(3, effects);
    let h = CohortHarmonizer::fit(&c.atlas, &c.records, &c.volumes, &c.timeseries).unwrap();
    let out = h.apply_volumes(&c.atlas, &c.records, &c.volumes).unwrap();
    let feats = |vs: &[crate::dataio::Volume]| {
        let data = vs.iter().flat_map(|v| v.roi_means(&c.atlas)).collect();
        FeatureMatrix::new(Tensor::new(vec![vs.len(), 8], data).unwrap(), c.records.clone()).unwrap()
    };
    let before = max_site_gap(&feats(&c.volumes));
    let after = max_site_gap(&feats(&out));
    assert!(after <= 0.1 * before, "{before} -> {after}");
}
