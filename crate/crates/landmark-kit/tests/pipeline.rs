//! Cross-module integration flows: mask datasets, two-stage patch
//! refinement, and a 3-D pass, all through real files.

use landmark_kit::data_io::{load_manifest, read_npy, write_npy, Tensor, TensorData};
use landmark_kit::decode::{
    decode_local_weighted_mean, decode_weighted_mean, Activation, OutputUnits,
};
use landmark_kit::encode::{encode_kind, CovarianceSpec, EncodingKind};
use landmark_kit::geometry::{crop_roi, patch_to_global, LandmarkSet, Spacing};
use landmark_kit::metrics::{detection_report, ReportConfig};
use landmark_kit::synth::{generate, SynthConfig};

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mask dataset on disk -> centroids -> encoded targets -> decoded back.
#[test]
fn mask_dataset_flows_into_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let size = [48usize, 48usize];
    // two samples, one class; blocks of set pixels around known centers
    let centers = [[12.0, 30.0], [33.0, 9.5]];
    let mut entries = Vec::new();
    for (i, center) in centers.iter().enumerate() {
        let mut mask = vec![0.0f32; size[0] * size[1]];
        let (r0, c0) = (center[0] as usize, center[1] as usize);
        for r in r0 - 1..=r0 + 1 {
            // 3x2 block when the center has a half-pixel column offset
            for c in c0..=c0 + 1 {
                mask[r * size[1] + c] = 1.0;
            }
        }
        let name = format!("mask_{i}.npy");
        write_npy(
            &dir.path().join(&name),
            &Tensor::new(vec![size[0], size[1]], TensorData::F32(mask)).unwrap(),
        )
        .unwrap();
        write_npy(
            &dir.path().join(format!("img_{i}.npy")),
            &Tensor::from_f32(vec![size[0], size[1]], vec![0.0; size[0] * size[1]]).unwrap(),
        )
        .unwrap();
        entries.push(format!(
            r#"{{"image_path": "img_{i}.npy", "mask_path": "mask_{i}.npy", "spacing": [1.0, 1.0]}}"#
        ));
    }
    let manifest_path = dir.path().join("manifest.json");
    std::fs::write(
        &manifest_path,
        format!(
            r#"{{"kind": "mask", "spatial_dims": 2, "class_names": ["L1"], "entries": [{}]}}"#,
            entries.join(",")
        ),
    )
    .unwrap();

    let manifest = load_manifest(&manifest_path).unwrap();
    let cov = CovarianceSpec::isotropic(1, 2, 3.0).unwrap();
    let mut decoded_samples = Vec::new();
    let mut truth_samples = Vec::new();
    for entry in manifest.iter_entries() {
        let entry = entry.unwrap();
        let truth = entry.landmarks.unwrap();
        // derived centroid sits at the block center
        let heatmap = encode_kind(&truth, 0, &cov, EncodingKind::Gaussian, &size).unwrap();
        let act = Activation::softmax(0.05).unwrap();
        let decoded = decode_weighted_mean(&heatmap, &act, OutputUnits::Pixels).unwrap();
        decoded_samples.push(decoded.with_class_names(vec!["L1".into()]).unwrap());
        truth_samples.push(truth);
    }
    for (i, (truth, center)) in truth_samples.iter().zip(&centers).enumerate() {
        let got = truth.get(0, 0, 0).unwrap();
        assert!(
            (got[0] - center[0]).abs() < 1e-9 && (got[1] - (center[1] + 0.0)).abs() <= 0.5,
            "sample {i}: centroid {got:?} vs center {center:?}"
        );
    }
    let pred = LandmarkSet::stack(&decoded_samples).unwrap();
    let truth = LandmarkSet::stack(&truth_samples).unwrap();
    let spacing = Spacing::new(vec![1.0, 1.0]).unwrap();
    let report = detection_report(&pred, &truth, &spacing, &ReportConfig::default()).unwrap();
    assert!(report.overall.pe_mean_mm.unwrap() < 0.01, "{report:?}");
}

/// Two-stage refinement: coarse decode on a downsampled view, ROI crop,
/// fine decode in the patch, remap to global coordinates.
#[test]
fn two_stage_patch_refinement_recovers_global_position() {
    let parent = [256usize, 256usize];
    let truth = [141.3, 77.8];
    let lms = {
        let mut l = LandmarkSet::new_missing(1, 1, 1, 2, vec!["L1".into()]).unwrap();
        l.set(0, 0, 0, &truth).unwrap();
        l
    };
    let cov = CovarianceSpec::isotropic(1, 2, 3.0).unwrap();
    let full = encode_kind(&lms, 0, &cov, EncodingKind::Gaussian, &parent).unwrap();

    // stage 1: coarse argmax on the full grid stands in for a low-res model
    let coarse = landmark_kit::decode::decode_argmax(&full)
        .unwrap()
        .landmarks;
    let coarse_p = coarse.get(0, 0, 0).unwrap().to_vec();
    assert!(euclid(&coarse_p, &truth) <= 0.5 * 2f64.sqrt());

    // stage 2: crop a 48^2 ROI around the coarse estimate and decode there
    let patch = crop_roi(&parent, &coarse_p, &[48, 48]).unwrap();
    let local_truth = [
        truth[0] - patch.origin()[0] as f64,
        truth[1] - patch.origin()[1] as f64,
    ];
    let local_lms = {
        let mut l = LandmarkSet::new_missing(1, 1, 1, 2, vec!["L1".into()]).unwrap();
        l.set(0, 0, 0, &local_truth).unwrap();
        l
    };
    let patch_map = encode_kind(&local_lms, 0, &cov, EncodingKind::Gaussian, &[48, 48]).unwrap();
    let act = Activation::softmax(0.05).unwrap();
    let fine_local =
        decode_local_weighted_mean(&patch_map, &act, &[9, 9], OutputUnits::Pixels).unwrap();
    let fine_global = patch_to_global(&fine_local, &patch).unwrap();
    let got = fine_global.get(0, 0, 0).unwrap();
    assert!(
        euclid(got, &truth) < 0.05,
        "refined {got:?} vs truth {truth:?}"
    );
}

/// 3-D: synthetic volumes on disk, decoded back within a tenth of a voxel.
#[test]
fn three_d_synth_volumes_decode_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        n_samples: 2,
        image_size: vec![24, 24, 24],
        n_classes: 2,
        sigma_range: (1.2, 1.6),
        seed: 21,
        ..Default::default()
    };
    let out = generate(&cfg, dir.path()).unwrap();
    for (i, path) in out.image_paths.iter().enumerate() {
        let volume = read_npy(path).unwrap();
        assert_eq!(volume.shape(), &[2, 24, 24, 24]);
        let heatmap = volume.to_heatmap().unwrap();
        let decoded = decode_weighted_mean(
            &heatmap,
            &Activation::IdentityNormalize,
            OutputUnits::Pixels,
        )
        .unwrap();
        for c in 0..2 {
            let truth = out.landmarks.get(i, c, 0).unwrap();
            let got = decoded.get(0, c, 0).unwrap();
            assert!(
                euclid(got, truth) < 0.1,
                "sample {i} class {c}: {got:?} vs {truth:?}"
            );
        }
    }
}
