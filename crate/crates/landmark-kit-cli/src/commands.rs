use rayon::prelude::*;
use serde::Serialize;

use landmark_kit::adaptive::{
    adaloss_update, heatmap_l2_loss, loss_grad_sigma, per_channel_l2, CovGrads, LossConfig,
    NesterovSgd, SchedulerConfig, SchedulerState,
};
use landmark_kit::data_io::{
    load_manifest, read_landmarks_csv, read_npz, write_landmarks_csv, write_npz, LandmarkTable,
    Tensor,
};
use landmark_kit::decode::{
    decode_argmax_units, decode_local_weighted_mean, decode_multi_instance, decode_weighted_mean,
    Activation, DecodeConfig, DecodeMethod, OutputUnits,
};
use landmark_kit::encode::{
    encode as encode_heatmap, encode_grad, CovarianceSpec, EncodeOptions, EncodingKind, Heatmap,
};
use landmark_kit::geometry::LandmarkSet;
use landmark_kit::gradcheck;
use landmark_kit::metrics::{detection_report, DetectionReport, ReportConfig};
use landmark_kit::synth::SynthConfig;
use landmark_kit::{Error, Result};

use crate::{
    CliError, DecodeArgs, EncodeArgs, EvaluateArgs, FitSigmaArgs, GradcheckArgs, ReportArgs,
    SynthArgs,
};

type CliResult = std::result::Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_f64_list(text: &str, flag: &str) -> std::result::Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("--{flag}: bad number '{p}'")))
        })
        .collect()
}

fn parse_usize_list(text: &str, flag: &str) -> std::result::Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| usage(format!("--{flag}: bad integer '{p}'")))
        })
        .collect()
}

/// Broadcast a one-element list across `dim` entries.
fn broadcast<T: Clone>(
    values: Vec<T>,
    dim: usize,
    flag: &str,
) -> std::result::Result<Vec<T>, CliError> {
    if values.len() == 1 {
        Ok(vec![values[0].clone(); dim])
    } else if values.len() == dim {
        Ok(values)
    } else {
        Err(usage(format!(
            "--{flag}: expected 1 or {dim} values, got {}",
            values.len()
        )))
    }
}

pub fn synth(args: SynthArgs) -> CliResult {
    let mut cfg: SynthConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Core(Error::Io {
                    path: path.clone(),
                    source: e,
                })
            })?;
            serde_json::from_str(&text).map_err(|e| CliError::Core(e.into()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.n_samples {
        cfg.n_samples = n;
    }
    if let Some(noise) = args.noise_std {
        cfg.noise_std = noise;
    }
    if let Some(d) = args.distractors {
        cfg.n_distractors = d;
    }
    let out = landmark_kit::synth::generate(&cfg, &args.out)?;
    println!(
        "generated {} samples ({} classes) under {}",
        out.image_ids.len(),
        cfg.n_classes,
        args.out.display()
    );
    println!("manifest: {}", out.manifest_path.display());
    println!("truth:    {}", out.truth_csv_path.display());
    Ok(())
}

pub fn encode(args: EncodeArgs) -> CliResult {
    let manifest = load_manifest(&args.manifest)?;
    let dim = manifest.spatial_dims;
    let kind: EncodingKind = args.kind.parse().map_err(|_| {
        usage(format!(
            "--kind: '{}' is not gaussian, laplace or one-hot",
            args.kind
        ))
    })?;
    let sigmas = broadcast(parse_f64_list(&args.sigma, "sigma")?, dim, "sigma")?;
    if sigmas.iter().any(|s| !(*s > 0.0)) {
        return Err(usage("--sigma: values must be > 0"));
    }
    let n_angles = landmark_kit::encode::n_angles(dim);
    let rotation = broadcast(
        parse_f64_list(&args.rotation, "rotation")?,
        n_angles,
        "rotation",
    )?;
    if let Some(t) = args.truncate {
        if !(t > 0.0) {
            return Err(usage("--truncate: radius must be > 0"));
        }
    }
    let flag_size = match &args.size {
        Some(text) => {
            let size = parse_usize_list(text, "size")?;
            if size.len() != dim || size.iter().any(|&s| s == 0) {
                return Err(usage(format!("--size: expected {dim} positive extents")));
            }
            Some(size)
        }
        None => None,
    };

    let n_classes = manifest.class_names.len();
    let cov = CovarianceSpec::new(
        n_classes,
        dim,
        sigmas
            .iter()
            .cycle()
            .take(n_classes * dim)
            .copied()
            .collect(),
        rotation
            .iter()
            .cycle()
            .take(n_classes * n_angles)
            .copied()
            .collect(),
    )?;
    let opts = EncodeOptions {
        kind,
        normalize: args.normalize,
        truncate_sigmas: args.truncate,
    };

    let results: Vec<Result<(String, Tensor)>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let loaded = manifest.load_entry(entry)?;
            let lms = loaded.landmarks.ok_or_else(|| Error::Entry {
                id: loaded.id.clone(),
                reason: "entry carries no landmarks to encode".into(),
            })?;
            let size = match &flag_size {
                Some(s) => s.clone(),
                None => {
                    let shape = loaded.image.shape();
                    if shape.len() == dim + 1 {
                        shape[1..].to_vec()
                    } else {
                        shape.to_vec()
                    }
                }
            };
            let heatmap = encode_heatmap(&lms, 0, &cov, &opts, &size)?;
            let values: Vec<f32> = heatmap.values().iter().map(|v| *v as f32).collect();
            let mut shape = vec![heatmap.n_channels()];
            shape.extend_from_slice(heatmap.dims());
            Ok((loaded.id, Tensor::from_f32(shape, values)?))
        })
        .collect();

    let mut encoded = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(pair) => encoded.push(pair),
            Err(e) => failures.push(e),
        }
    }
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("error: {f}");
        }
        return Err(CliError::Core(failures.remove(0)));
    }
    let refs: Vec<(&str, &Tensor)> = encoded.iter().map(|(n, t)| (n.as_str(), t)).collect();
    write_npz(&args.out, &refs)?;
    println!(
        "encoded {} heatmap stacks -> {}",
        refs.len(),
        args.out.display()
    );
    Ok(())
}

fn parse_activation(name: &str, temperature: f64) -> std::result::Result<Activation, CliError> {
    match name {
        "identity" | "identity-normalize" => Ok(Activation::IdentityNormalize),
        "relu" | "relu-normalize" => Ok(Activation::ReluNormalize),
        "softmax" => {
            Activation::softmax(temperature).map_err(|_| usage("--temperature: must be > 0"))
        }
        other => Err(usage(format!("--activation: unknown '{other}'"))),
    }
}

fn parse_units(name: &str) -> std::result::Result<OutputUnits, CliError> {
    match name {
        "pixels" => Ok(OutputUnits::Pixels),
        "normalized" => Ok(OutputUnits::Normalized),
        other => Err(usage(format!("--units: unknown '{other}'"))),
    }
}

/// Attach image/class context to a degenerate-decode error so exit code 3
/// identifies the landmark.
fn identify_degenerate(e: Error, id: &str, class_names: &[String]) -> Error {
    match e {
        Error::DegenerateInput { channel, reason } => {
            let class = class_names
                .get(channel)
                .cloned()
                .unwrap_or_else(|| format!("class_{channel}"));
            Error::DegenerateInput {
                channel,
                reason: format!("image '{id}', landmark '{class}': {reason}"),
            }
        }
        other => other,
    }
}

pub fn decode(args: DecodeArgs) -> CliResult {
    // an .npz archive of per-image members, or one bare .npy heatmap stack
    let members = match args.heatmaps.extension().and_then(|e| e.to_str()) {
        Some("npy") => {
            let stem = args
                .heatmaps
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "heatmap".into());
            vec![(stem, landmark_kit::data_io::read_npy(&args.heatmaps)?)]
        }
        _ => read_npz(&args.heatmaps)?,
    };
    if members.is_empty() {
        return Err(CliError::Core(Error::InvalidParameter(format!(
            "{} holds no npy members",
            args.heatmaps.display()
        ))));
    }
    let activation = parse_activation(&args.activation, args.temperature)?;
    let units = parse_units(&args.units)?;
    let first = members[0].1.to_heatmap()?;
    let dim = first.spatial_dim();
    let window = broadcast(parse_usize_list(&args.window, "window")?, dim, "window")?;
    let class_names: Vec<String> = match &args.manifest {
        Some(path) => load_manifest(path)?.class_names,
        None => (0..first.n_channels())
            .map(|c| format!("class_{c}"))
            .collect(),
    };
    if class_names.len() != first.n_channels() {
        return Err(usage(format!(
            "{} class names for {} heatmap channels",
            class_names.len(),
            first.n_channels()
        )));
    }
    let cfg = DecodeConfig {
        method: DecodeMethod::LocalWeightedMean,
        activation,
        window: window.clone(),
        output_units: units,
    };

    enum Method {
        Argmax,
        WeightedMean,
        LocalWeightedMean,
        MultiInstance,
    }
    let method = match args.method.as_str() {
        "argmax" => Method::Argmax,
        "weighted-mean" => Method::WeightedMean,
        "local-weighted-mean" => Method::LocalWeightedMean,
        "multi-instance" => Method::MultiInstance,
        other => return Err(usage(format!("--method: unknown '{other}'"))),
    };
    if matches!(method, Method::MultiInstance) && args.k == 0 {
        return Err(usage("--k: must be >= 1"));
    }

    let decoded: Vec<Result<LandmarkSet>> = members
        .par_iter()
        .map(|(_, tensor)| {
            let heatmap = tensor.to_heatmap()?;
            let lms = match method {
                Method::Argmax => decode_argmax_units(&heatmap, units)?.landmarks,
                Method::WeightedMean => decode_weighted_mean(&heatmap, &activation, units)?,
                Method::LocalWeightedMean => {
                    decode_local_weighted_mean(&heatmap, &activation, &window, units)?
                }
                Method::MultiInstance => {
                    decode_multi_instance(&heatmap, args.k, args.min_separation, &cfg)?
                }
            };
            Ok(lms)
        })
        .collect();

    let mut samples = Vec::with_capacity(decoded.len());
    for ((id, _), r) in members.iter().zip(decoded) {
        let lms = r.map_err(|e| identify_degenerate(e, id, &class_names))?;
        samples.push(lms.with_class_names(class_names.clone())?);
    }
    let stacked = LandmarkSet::stack(&samples)?;
    let ids: Vec<String> = members.iter().map(|(id, _)| id.clone()).collect();
    write_landmarks_csv(&args.out, &stacked, &ids)?;
    println!(
        "decoded {} images ({} classes, {} instances) -> {}",
        ids.len(),
        stacked.n_classes(),
        stacked.n_instances(),
        args.out.display()
    );
    Ok(())
}

/// Align two landmark tables on (image id, class name, instance): the
/// universe is the union, ordered by the truth table first; pairs missing
/// on either side stay sentinels and are counted as skipped by the metrics.
fn align(pred: &LandmarkTable, truth: &LandmarkTable) -> Result<(LandmarkSet, LandmarkSet)> {
    if pred.landmarks.dim() != truth.landmarks.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.landmarks.dim(),
            got: pred.landmarks.dim(),
        });
    }
    let mut ids = truth.image_ids.clone();
    for id in &pred.image_ids {
        if !ids.contains(id) {
            ids.push(id.clone());
        }
    }
    let mut classes = truth.landmarks.class_names().to_vec();
    for c in pred.landmarks.class_names() {
        if !classes.contains(c) {
            classes.push(c.clone());
        }
    }
    let instances = truth
        .landmarks
        .n_instances()
        .max(pred.landmarks.n_instances());
    let dim = truth.landmarks.dim();

    let fill = |table: &LandmarkTable| -> Result<LandmarkSet> {
        let mut out =
            LandmarkSet::new_missing(ids.len(), classes.len(), instances, dim, classes.clone())?;
        for (n, id) in table.image_ids.iter().enumerate() {
            let n_out = ids.iter().position(|x| x == id).expect("id in union");
            for (c, name) in table.landmarks.class_names().iter().enumerate() {
                let c_out = classes
                    .iter()
                    .position(|x| x == name)
                    .expect("class in union");
                for i in 0..table.landmarks.n_instances() {
                    if let Some(p) = table.landmarks.get(n, c, i) {
                        out.set(n_out, c_out, i, p)?;
                    }
                }
            }
        }
        Ok(out)
    };
    Ok((fill(pred)?, fill(truth)?))
}

pub fn evaluate(args: EvaluateArgs) -> CliResult {
    let pred = read_landmarks_csv(&args.pred)?;
    let truth = read_landmarks_csv(&args.truth)?;
    let (pred_aligned, truth_aligned) = align(&pred, &truth)?;
    let spacing_values = parse_f64_list(&args.spacing, "spacing")?;
    if spacing_values.len() != truth_aligned.dim() {
        return Err(usage(format!(
            "--spacing: expected {} values for {}-d landmarks",
            truth_aligned.dim(),
            truth_aligned.dim()
        )));
    }
    let spacing =
        landmark_kit::geometry::Spacing::new(spacing_values).map_err(|e| usage(e.to_string()))?;
    let radii = parse_f64_list(&args.radii, "radii")?;
    let cfg = ReportConfig::new(radii).map_err(|e| usage(e.to_string()))?;
    let report = detection_report(&pred_aligned, &truth_aligned, &spacing, &cfg)?;
    std::fs::write(&args.out, report.to_json()?).map_err(|e| {
        CliError::Core(Error::Io {
            path: args.out.clone(),
            source: e,
        })
    })?;
    match report.overall.pe_mean_mm {
        Some(pe) => println!(
            "evaluated {} landmarks ({} skipped): PE mean {pe:.4} mm -> {}",
            report.overall.n,
            report.skipped,
            args.out.display()
        ),
        None => println!(
            "evaluated 0 landmarks ({} skipped) -> {}",
            report.skipped,
            args.out.display()
        ),
    }
    Ok(())
}

pub fn report(args: ReportArgs) -> CliResult {
    let text = std::fs::read_to_string(&args.input).map_err(|e| {
        CliError::Core(Error::Io {
            path: args.input.clone(),
            source: e,
        })
    })?;
    let report = DetectionReport::from_json(&text)?;
    match args.format.as_str() {
        "text" => print!("{}", report.to_text_table()),
        "json" => println!("{}", report.to_json()?),
        other => return Err(usage(format!("--format: unknown '{other}'"))),
    }
    Ok(())
}

#[derive(Serialize)]
struct FittedParams {
    sigmas: Vec<Vec<f64>>,
    rotation: Vec<Vec<f64>>,
    final_loss: f64,
    steps: usize,
}

pub fn fit_sigma(args: FitSigmaArgs) -> CliResult {
    if !(args.init_sigma > 0.0) {
        return Err(usage("--init-sigma: must be > 0"));
    }
    let members = read_npz(&args.heatmaps)?;
    if members.is_empty() {
        return Err(CliError::Core(Error::InvalidParameter(
            "no heatmap members to fit against".into(),
        )));
    }
    let truth = read_landmarks_csv(&args.truth)?;
    let heatmaps: Vec<(usize, Heatmap)> = members
        .iter()
        .map(|(id, tensor)| {
            let sample = truth
                .image_ids
                .iter()
                .position(|x| x == id)
                .ok_or_else(|| Error::Entry {
                    id: id.clone(),
                    reason: "heatmap member has no matching truth row".into(),
                })?;
            Ok((sample, tensor.to_heatmap()?))
        })
        .collect::<Result<_>>()?;
    let dims = heatmaps[0].1.dims().to_vec();
    let n_classes = heatmaps[0].1.n_channels();
    for (_, h) in &heatmaps {
        if h.dims() != dims || h.n_channels() != n_classes {
            return Err(CliError::Core(Error::ShapeMismatch(
                "all heatmap members must share one shape".into(),
            )));
        }
    }
    if n_classes != truth.landmarks.n_classes() {
        return Err(CliError::Core(Error::ShapeMismatch(format!(
            "{} heatmap channels vs {} truth classes",
            n_classes,
            truth.landmarks.n_classes()
        ))));
    }

    let loss_cfg = LossConfig::new(args.alpha).map_err(|e| usage(e.to_string()))?;
    let mut cov = CovarianceSpec::isotropic(n_classes, truth.landmarks.dim(), args.init_sigma)?;
    let mut opt = NesterovSgd::new(args.lr, args.momentum, args.sigma_min)
        .map_err(|e| usage(e.to_string()))?;
    let mut scheduler = match &args.scheduler {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Core(Error::Io {
                    path: path.clone(),
                    source: e,
                })
            })?;
            let cfg: SchedulerConfig = serde_json::from_str(&text).map_err(Error::from)?;
            Some(SchedulerState::new(cfg, n_classes)?)
        }
        None => None,
    };

    let n = heatmaps.len() as f64;
    let mut final_loss = f64::NAN;
    for _ in 0..args.steps {
        let per_sample: Vec<Result<(CovGrads, Vec<f64>, f64)>> = heatmaps
            .par_iter()
            .map(|(sample, pred)| {
                let target = encode_grad(&truth.landmarks, *sample, &cov, &dims)?;
                let grads = loss_grad_sigma(pred, &target, &cov, &loss_cfg)?;
                let channel_losses = per_channel_l2(pred, &target.heatmap)?;
                let loss = heatmap_l2_loss(pred, &target.heatmap, &cov, &loss_cfg)?;
                Ok((grads, channel_losses, loss))
            })
            .collect();
        let mut sum_grads = CovGrads {
            d_sigma: vec![0.0; cov.sigmas_flat().len()],
            d_rotation: vec![0.0; cov.rotation_flat().len()],
        };
        let mut sum_channel = vec![0.0; n_classes];
        let mut sum_loss = 0.0;
        for r in per_sample {
            let (grads, channel_losses, loss) = r?;
            for (a, b) in sum_grads.d_sigma.iter_mut().zip(&grads.d_sigma) {
                *a += b / n;
            }
            for (a, b) in sum_grads.d_rotation.iter_mut().zip(&grads.d_rotation) {
                *a += b / n;
            }
            for (a, b) in sum_channel.iter_mut().zip(&channel_losses) {
                *a += b / n;
            }
            sum_loss += loss / n;
        }
        cov = opt.step(&cov, &sum_grads)?;
        if let Some(state) = scheduler.as_mut() {
            cov = adaloss_update(state, &sum_channel, &cov)?;
        }
        final_loss = sum_loss;
    }

    let dim = cov.dim();
    let fitted = FittedParams {
        sigmas: (0..n_classes).map(|c| cov.sigma(c).to_vec()).collect(),
        rotation: (0..n_classes).map(|c| cov.rotation(c).to_vec()).collect(),
        final_loss,
        steps: args.steps,
    };
    std::fs::write(
        &args.out,
        serde_json::to_string_pretty(&fitted).map_err(Error::from)?,
    )
    .map_err(|e| {
        CliError::Core(Error::Io {
            path: args.out.clone(),
            source: e,
        })
    })?;
    let mean_sigma: f64 = cov.sigmas_flat().iter().sum::<f64>() / (n_classes * dim) as f64;
    println!(
        "fit {} steps over {} samples: mean sigma {mean_sigma:.3}, loss {final_loss:.6} -> {}",
        args.steps,
        heatmaps.len(),
        args.out.display()
    );
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> CliResult {
    if args.trials == 0 {
        return Err(usage("--trials: must be >= 1"));
    }
    let encode_suite = gradcheck::check_encode_grad(args.trials, args.seed)?;
    let loss_suite = gradcheck::check_loss_grad(args.trials, args.seed)?;
    let jac_suite = gradcheck::check_soft_argmax_jacobian(args.trials, args.seed)?;
    let line = |name: &str, r: &gradcheck::SuiteResult, tol: f64| {
        println!(
            "{name:<22} max rel err {:>10.3e}  (tolerance {tol:.0e}, {} trials)  {}",
            r.max_rel_err,
            r.trials,
            if r.passes(tol) { "ok" } else { "FAIL" }
        );
    };
    line("encode_grad", &encode_suite, gradcheck::ENCODE_GRAD_TOL);
    line("loss_grad_sigma", &loss_suite, gradcheck::LOSS_GRAD_TOL);
    line("soft_argmax_jacobian", &jac_suite, gradcheck::JACOBIAN_TOL);
    let all = encode_suite.passes(gradcheck::ENCODE_GRAD_TOL)
        && loss_suite.passes(gradcheck::LOSS_GRAD_TOL)
        && jac_suite.passes(gradcheck::JACOBIAN_TOL);
    if !all {
        return Err(CliError::Core(Error::NonFinite(
            "gradient check exceeded tolerance".into(),
        )));
    }
    Ok(())
}
