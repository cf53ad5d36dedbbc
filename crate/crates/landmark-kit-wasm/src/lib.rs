//! Browser bindings for the landmark-kit demo page: an interactive heatmap
//! encoder/decoder explorer and an adaptive sigma-fit animation.
//!
//! Everything heavy stays in Rust; the page only moves RGBA buffers onto
//! canvases and reads back decoded coordinates.

use wasm_bindgen::prelude::*;

use landmark_kit::adaptive::{loss_grad_sigma, LossConfig, NesterovSgd};
use landmark_kit::decode::{
    decode_argmax, decode_local_weighted_mean, decode_multi_instance, decode_weighted_mean,
    Activation, DecodeConfig, DecodeMethod, OutputUnits,
};
use landmark_kit::encode::{encode_grad, encode_kind, CovarianceSpec, EncodingKind, Heatmap};
use landmark_kit::geometry::LandmarkSet;

fn err_to_js(e: landmark_kit::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Perceptual dark-to-bright colormap over [0, 1] (viridis-like control
/// points, linearly interpolated).
fn colormap(v: f64) -> [u8; 3] {
    const STOPS: [(f64, [f64; 3]); 6] = [
        (0.0, [68.0, 1.0, 84.0]),
        (0.2, [65.0, 68.0, 135.0]),
        (0.4, [42.0, 120.0, 142.0]),
        (0.6, [34.0, 168.0, 132.0]),
        (0.8, [122.0, 209.0, 81.0]),
        (1.0, [253.0, 231.0, 37.0]),
    ];
    let v = v.clamp(0.0, 1.0);
    let mut lo = STOPS[0];
    for hi in STOPS.iter().skip(1) {
        if v <= hi.0 {
            let t = (v - lo.0) / (hi.0 - lo.0);
            let mix = |a: f64, b: f64| (a + t * (b - a)).round() as u8;
            return [
                mix(lo.1[0], hi.1[0]),
                mix(lo.1[1], hi.1[1]),
                mix(lo.1[2], hi.1[2]),
            ];
        }
        lo = *hi;
    }
    [253, 231, 37]
}

fn heatmap_rgba(h: &Heatmap, channel: usize) -> Vec<u8> {
    let values = h.channel(channel);
    let max = values.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
    let mut rgba = Vec::with_capacity(values.len() * 4);
    for v in values {
        let [r, g, b] = colormap(v / max);
        rgba.extend_from_slice(&[r, g, b, 255]);
    }
    rgba
}

fn parse_kind(kind: &str) -> Result<EncodingKind, JsValue> {
    kind.parse().map_err(err_to_js)
}

fn parse_activation(name: &str, temperature: f64) -> Result<Activation, JsValue> {
    match name {
        "identity" => Ok(Activation::IdentityNormalize),
        "relu" => Ok(Activation::ReluNormalize),
        "softmax" => Activation::softmax(temperature).map_err(err_to_js),
        other => Err(JsValue::from_str(&format!("unknown activation '{other}'"))),
    }
}

/// Interactive single-landmark encoder/decoder with an optional distractor
/// blob, for exploring how window size and activation change sub-pixel
/// accuracy.
#[wasm_bindgen]
pub struct HeatmapExplorer {
    rows: usize,
    cols: usize,
    mu: [f64; 2],
    sigma: [f64; 2],
    theta: f64,
    kind: EncodingKind,
    distractor: Option<[f64; 2]>,
    distractor_amplitude: f64,
    heatmap: Heatmap,
}

#[wasm_bindgen]
impl HeatmapExplorer {
    #[wasm_bindgen(constructor)]
    pub fn new(rows: usize, cols: usize) -> Result<HeatmapExplorer, JsValue> {
        let mut explorer = HeatmapExplorer {
            rows,
            cols,
            mu: [rows as f64 / 2.0, cols as f64 / 2.0],
            sigma: [4.0, 4.0],
            theta: 0.0,
            kind: EncodingKind::Gaussian,
            distractor: None,
            distractor_amplitude: 0.4,
            heatmap: Heatmap::zeros(1, &[rows, cols]).map_err(err_to_js)?,
        };
        explorer.render()?;
        Ok(explorer)
    }

    fn render(&mut self) -> Result<(), JsValue> {
        let mut lms =
            LandmarkSet::new_missing(1, 1, 1, 2, vec!["landmark".into()]).map_err(err_to_js)?;
        lms.set(0, 0, 0, &self.mu).map_err(err_to_js)?;
        let cov =
            CovarianceSpec::new(1, 2, self.sigma.to_vec(), vec![self.theta]).map_err(err_to_js)?;
        let size = [self.rows, self.cols];
        let mut heatmap = encode_kind(&lms, 0, &cov, self.kind, &size).map_err(err_to_js)?;
        if let Some(d) = self.distractor {
            let mut dl = LandmarkSet::new_missing(1, 1, 1, 2, vec!["distractor".into()])
                .map_err(err_to_js)?;
            dl.set(0, 0, 0, &d).map_err(err_to_js)?;
            let blob = encode_kind(&dl, 0, &cov, self.kind, &size).map_err(err_to_js)?;
            let amp = self.distractor_amplitude;
            let values: Vec<f64> = heatmap
                .values()
                .iter()
                .zip(blob.values())
                .map(|(a, b)| a.max(amp * b))
                .collect();
            heatmap = Heatmap::from_values(1, &size, values).map_err(err_to_js)?;
        }
        self.heatmap = heatmap;
        Ok(())
    }

    pub fn set_landmark(&mut self, row: f64, col: f64) -> Result<(), JsValue> {
        self.mu = [row, col];
        self.render()
    }

    pub fn set_sigma(&mut self, sigma_row: f64, sigma_col: f64) -> Result<(), JsValue> {
        if !(sigma_row > 0.0 && sigma_col > 0.0) {
            return Err(JsValue::from_str("sigma must be > 0"));
        }
        self.sigma = [sigma_row, sigma_col];
        self.render()
    }

    pub fn set_rotation(&mut self, theta: f64) -> Result<(), JsValue> {
        self.theta = theta;
        self.render()
    }

    pub fn set_kind(&mut self, kind: &str) -> Result<(), JsValue> {
        self.kind = parse_kind(kind)?;
        self.render()
    }

    pub fn set_distractor(&mut self, row: f64, col: f64, amplitude: f64) -> Result<(), JsValue> {
        self.distractor = Some([row, col]);
        self.distractor_amplitude = amplitude.clamp(0.0, 1.0);
        self.render()
    }

    pub fn clear_distractor(&mut self) -> Result<(), JsValue> {
        self.distractor = None;
        self.render()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn landmark(&self) -> Vec<f64> {
        self.mu.to_vec()
    }

    /// RGBA pixels of the current heatmap, row-major, for `putImageData`.
    pub fn rgba(&self) -> Vec<u8> {
        heatmap_rgba(&self.heatmap, 0)
    }

    /// Decode the current heatmap. Returns `[row, col]` in pixels.
    pub fn decode(
        &self,
        method: &str,
        activation: &str,
        temperature: f64,
        window: usize,
    ) -> Result<Vec<f64>, JsValue> {
        let act = parse_activation(activation, temperature)?;
        let lms = match method {
            "argmax" => decode_argmax(&self.heatmap).map_err(err_to_js)?.landmarks,
            "weighted-mean" => {
                decode_weighted_mean(&self.heatmap, &act, OutputUnits::Pixels).map_err(err_to_js)?
            }
            "local-weighted-mean" => decode_local_weighted_mean(
                &self.heatmap,
                &act,
                &[window, window],
                OutputUnits::Pixels,
            )
            .map_err(err_to_js)?,
            other => return Err(JsValue::from_str(&format!("unknown method '{other}'"))),
        };
        Ok(lms.get(0, 0, 0).map(|p| p.to_vec()).unwrap_or_default())
    }

    /// Top-k peaks with non-maximum suppression. Returns a flat
    /// `[row, col, row, col, ...]`; missing peaks are omitted.
    pub fn decode_peaks(
        &self,
        k: usize,
        min_separation: f64,
        window: usize,
    ) -> Result<Vec<f64>, JsValue> {
        let cfg = DecodeConfig {
            method: DecodeMethod::LocalWeightedMean,
            activation: Activation::IdentityNormalize,
            window: vec![window, window],
            output_units: OutputUnits::Pixels,
        };
        let lms =
            decode_multi_instance(&self.heatmap, k, min_separation, &cfg).map_err(err_to_js)?;
        let mut out = Vec::new();
        for i in 0..lms.n_instances() {
            if let Some(p) = lms.get(0, 0, i) {
                out.extend_from_slice(p);
            }
        }
        Ok(out)
    }
}

/// Adaptive sigma fitting animated step by step: a fixed prediction heatmap
/// (the "model output") pulls the generator's covariance toward its spread.
#[wasm_bindgen]
pub struct SigmaFitDemo {
    size: [usize; 2],
    lms: LandmarkSet,
    pred: Heatmap,
    cov: CovarianceSpec,
    optimizer: NesterovSgd,
    loss_cfg: LossConfig,
    steps: usize,
    last_loss: f64,
}

#[wasm_bindgen]
impl SigmaFitDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(
        extent: usize,
        target_sigma_row: f64,
        target_sigma_col: f64,
        target_theta: f64,
        init_sigma: f64,
        lr: f64,
        momentum: f64,
    ) -> Result<SigmaFitDemo, JsValue> {
        let size = [extent, extent];
        let center = (extent as f64 - 1.0) / 2.0;
        let mut lms =
            LandmarkSet::new_missing(1, 1, 1, 2, vec!["landmark".into()]).map_err(err_to_js)?;
        lms.set(0, 0, 0, &[center, center]).map_err(err_to_js)?;
        let target_cov = CovarianceSpec::new(
            1,
            2,
            vec![target_sigma_row, target_sigma_col],
            vec![target_theta],
        )
        .map_err(err_to_js)?;
        let pred =
            encode_kind(&lms, 0, &target_cov, EncodingKind::Gaussian, &size).map_err(err_to_js)?;
        let cov = CovarianceSpec::isotropic(1, 2, init_sigma).map_err(err_to_js)?;
        let optimizer = NesterovSgd::new(lr, momentum, 0.5).map_err(err_to_js)?;
        let loss_cfg = LossConfig::new(0.0).map_err(err_to_js)?;
        Ok(SigmaFitDemo {
            size,
            lms,
            pred,
            cov,
            optimizer,
            loss_cfg,
            steps: 0,
            last_loss: f64::NAN,
        })
    }

    /// Advance `n` gradient steps; returns the latest loss.
    pub fn step(&mut self, n: usize) -> Result<f64, JsValue> {
        for _ in 0..n {
            let target = encode_grad(&self.lms, 0, &self.cov, &self.size).map_err(err_to_js)?;
            let grads = loss_grad_sigma(&self.pred, &target, &self.cov, &self.loss_cfg)
                .map_err(err_to_js)?;
            self.last_loss = landmark_kit::adaptive::heatmap_l2_loss(
                &self.pred,
                &target.heatmap,
                &self.cov,
                &self.loss_cfg,
            )
            .map_err(err_to_js)?;
            self.cov = self.optimizer.step(&self.cov, &grads).map_err(err_to_js)?;
            self.steps += 1;
        }
        Ok(self.last_loss)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn loss(&self) -> f64 {
        self.last_loss
    }

    /// Current fitted `[sigma_row, sigma_col, theta]`.
    pub fn parameters(&self) -> Vec<f64> {
        vec![
            self.cov.sigma(0)[0],
            self.cov.sigma(0)[1],
            self.cov.rotation(0)[0],
        ]
    }

    /// RGBA of the fixed prediction heatmap.
    pub fn prediction_rgba(&self) -> Result<Vec<u8>, JsValue> {
        Ok(heatmap_rgba(&self.pred, 0))
    }

    /// RGBA of the heatmap the current covariance generates.
    pub fn current_rgba(&self) -> Result<Vec<u8>, JsValue> {
        let h = encode_kind(&self.lms, 0, &self.cov, EncodingKind::Gaussian, &self.size)
            .map_err(err_to_js)?;
        Ok(heatmap_rgba(&h, 0))
    }

    pub fn extent(&self) -> usize {
        self.size[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explorer_round_trip_on_native() {
        let mut e = HeatmapExplorer::new(64, 64).unwrap();
        e.set_landmark(20.25, 30.75).unwrap();
        e.set_sigma(3.0, 3.0).unwrap();
        let p = e.decode("local-weighted-mean", "softmax", 0.05, 7).unwrap();
        assert!(
            (p[0] - 20.25).abs() < 0.1 && (p[1] - 30.75).abs() < 0.1,
            "{p:?}"
        );
        let rgba = e.rgba();
        assert_eq!(rgba.len(), 64 * 64 * 4);
    }

    #[test]
    fn distractor_splits_global_and_local() {
        let mut e = HeatmapExplorer::new(96, 96).unwrap();
        e.set_landmark(30.0, 30.0).unwrap();
        e.set_sigma(3.0, 3.0).unwrap();
        e.set_distractor(70.0, 70.0, 0.4).unwrap();
        let global = e.decode("weighted-mean", "identity", 1.0, 7).unwrap();
        let local = e.decode("local-weighted-mean", "identity", 1.0, 7).unwrap();
        let ge = ((global[0] - 30.0f64).powi(2) + (global[1] - 30.0).powi(2)).sqrt();
        let le = ((local[0] - 30.0f64).powi(2) + (local[1] - 30.0).powi(2)).sqrt();
        assert!(ge > 2.0 && le < 0.5, "global {ge}, local {le}");
        let peaks = e.decode_peaks(2, 10.0, 7).unwrap();
        assert_eq!(peaks.len(), 4);
    }

    #[test]
    fn sigma_fit_converges_in_demo() {
        let mut demo = SigmaFitDemo::new(48, 2.0, 2.0, 0.0, 5.0, 50.0, 0.9).unwrap();
        demo.step(200).unwrap();
        let p = demo.parameters();
        assert!(
            (p[0] - 2.0).abs() < 0.1 && (p[1] - 2.0).abs() < 0.1,
            "{p:?}"
        );
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), [68, 1, 84]);
        assert_eq!(colormap(1.0), [253, 231, 37]);
        assert_eq!(colormap(2.0), [253, 231, 37]);
    }
}
