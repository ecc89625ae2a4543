mod common;

use canonshape::canonical::{canonical_projection, DataMatrix};
use canonshape::classifier::{init_mlp, read_checkpoint, vote, write_checkpoint};
use canonshape::distance_field::{compute_distance_field, SamplingSet};
use canonshape::elm::{read_features, write_features, FeatureSet, ShapeFeature};
use canonshape::geometry::{normalize, PointCloud};
use canonshape::pipeline::PipelineConfig;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn point() -> impl Strategy<Value = [f64; 3]> {
    [-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kd_tree_equals_brute_force(
        cloud in prop::collection::vec(point(), 1..200),
        queries in prop::collection::vec(point(), 1..100),
    ) {
        let field = compute_distance_field(
            &PointCloud::new(cloud.clone()).unwrap(),
            &SamplingSet::from_points(queries.clone()).unwrap(),
        ).unwrap();
        let oracle = common::brute_force_field(&cloud, &queries);
        for (a, b) in field.phi.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn canonical_frame_is_orthogonal_and_sign_fixed(
        rows in prop::collection::vec((point(), 0.0..3.0f64), 8..60),
    ) {
        let coords = DMatrix::from_fn(rows.len(), 3, |i, j| rows[i].0[j]);
        let phi: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let data = DataMatrix::from_parts(&coords, &phi, 0).unwrap();
        let frame = canonical_projection(&data).unwrap();
        let v = &frame.vbar;
        prop_assert!((v.transpose() * v - DMatrix::identity(4, 4)).amax() < 1e-10);
        let m = data.matrix();
        let phi = data.phi();
        for j in 0..4 {
            prop_assert!(frame.singular_values[j] >= 0.0);
            if j > 0 {
                prop_assert!(frame.singular_values[j - 1] >= frame.singular_values[j]);
            }
            let proj = (m * v.column(j)).dot(&phi);
            prop_assert!(proj >= -1e-9 * frame.singular_values[0] * phi.norm());
        }
    }

    #[test]
    fn normalization_removes_translation_and_scale(
        cloud in prop::collection::vec(point(), 2..100),
        shift in point(),
        scale in 0.05..20.0f64,
    ) {
        let base = PointCloud::new(cloud).unwrap();
        prop_assume!(base.points().iter().any(|p| p != &base.points()[0]));
        let moved = base.scaled(scale).translated(&shift);
        let (a, b) = (normalize(&base), normalize(&moved));
        for (p, q) in a.points().iter().zip(b.points()) {
            for k in 0..3 {
                prop_assert!((p[k] - q[k]).abs() < 1e-9);
            }
        }
        let r = a.points().iter().map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).fold(0.0, f64::max);
        prop_assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn feature_files_round_trip_exactly(
        betas in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 6), 1..20),
    ) {
        let mut set = FeatureSet::new("abc123", 6);
        for (i, b) in betas.iter().enumerate() {
            set.push(ShapeFeature {
                beta: b.clone(),
                basis_id: "abc123".into(),
                label: if i % 3 == 0 { None } else { Some(i % 4) },
                instance_id: format!("c/train/s{}", i / 2),
                subset: 0,
            }).unwrap();
        }
        let mut buf = Vec::new();
        write_features(&set, &mut buf).unwrap();
        let back = read_features(buf.as_slice()).unwrap();
        prop_assert_eq!(back.features.len(), set.features.len());
        for (a, b) in back.features.iter().zip(&set.features) {
            prop_assert_eq!(&a.beta, &b.beta);
            prop_assert_eq!(a.label, b.label);
            prop_assert_eq!(&a.instance_id, &b.instance_id);
        }
    }

    #[test]
    fn single_vote_is_argmax(p in prop::collection::vec(0.0..1.0f64, 2..10)) {
        let best = p.iter().enumerate().fold(0, |b, (i, v)| if *v > p[b] { i } else { b });
        prop_assert_eq!(vote(std::slice::from_ref(&p)), best);
    }

    #[test]
    fn config_text_round_trips(seed in any::<u64>(), k in 1usize..2048, dropout in 0.0..0.9f64) {
        let mut cfg = PipelineConfig::parse(&format!("seed = {seed}\nk_nodes = {k}\n")).unwrap();
        cfg.training.dropout_rate = dropout;
        cfg.data_dir = None;
        let again = PipelineConfig::parse(&cfg.to_text()).unwrap();
        prop_assert_eq!(again.extraction, cfg.extraction);
        prop_assert_eq!(again.training, cfg.training);
        prop_assert_eq!(again.hidden, cfg.hidden);
    }
}

#[test]
fn checkpoints_round_trip_exactly() {
    let mut model = init_mlp(7, &[5, 4], 3, 9).unwrap();
    model.class_names = vec!["a".into(), "b".into(), "c".into()];
    model.basis_id = "feedbeef".into();
    let mut buf = Vec::new();
    write_checkpoint(&model, &mut buf).unwrap();
    let back = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(back, model);
}
