//! Browser bindings: model curves, single-voxel congruence metrics and a
//! small convergence study.

use mcrb_core::bounds::BoundsContext;
use mcrb_core::estimation::{BoundsBox, FitOptions, Fitter};
use mcrb_core::experiments::{
    convergence_study, generate_phantom, sigma_for_snr, ConvergenceConfig, Generator, PhantomSpec, Reference,
};
use mcrb_core::noise::{NoiseKind, NoiseSpec};
use mcrb_core::signal::{sample_times, signal_curve, KineticParams, Protocol};
use wasm_bindgen::prelude::*;

fn protocol(kidney: bool, sigma: f64) -> Protocol {
    if kidney {
        Protocol::kidney(sigma)
    } else {
        Protocol::brain(sigma)
    }
}

fn bounds_box(kidney: bool) -> BoundsBox {
    if kidney {
        BoundsBox::kidney()
    } else {
        BoundsBox::brain()
    }
}

fn noise_sigma(kidney: bool, snr: f64) -> Result<f64, String> {
    if !(snr > 0.0) {
        return Err(format!("SNR must be positive, got {snr}"));
    }
    Ok(sigma_for_snr(&protocol(kidney, 1.0), KineticParams::new(75.0, 1.0), snr))
}

fn generator(k_out: f64) -> Generator {
    if k_out > 0.0 {
        Generator::BuxtonOutflow { k_out }
    } else {
        Generator::Buxton
    }
}

/// Sample times (s) of the standard protocol.
pub fn times() -> Vec<f64> {
    sample_times(&Protocol::brain(1.0))
}

/// Noise-free difference signal at the standard sample times.
pub fn curve(f: f64, att: f64, kidney: bool) -> Result<Vec<f64>, String> {
    let theta = KineticParams::new(f, att);
    theta.validate().map_err(|e| e.to_string())?;
    Ok(signal_curve(theta, &protocol(kidney, 1.0)).values)
}

/// Fit one simulated voxel and return
/// `[f_hat, att_hat, lambda_max, lambda_min, kappa, crb_f, mcrb_f]`.
pub fn voxel_metrics(
    f: f64,
    att: f64,
    snr: f64,
    m: usize,
    k_out: f64,
    kidney: bool,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let sigma = noise_sigma(kidney, snr)?;
    let p = protocol(kidney, sigma);
    let spec = PhantomSpec {
        f_range: (f, f),
        att_range: (att, att),
        generator: generator(k_out),
        ..PhantomSpec::brain(1, m, NoiseSpec::new(sigma, NoiseKind::Gaussian, seed))
    };
    let data = generate_phantom(&spec, &p).map_err(|e| e.to_string())?;
    let series = data.series(0);
    let fit = Fitter::new(&p, &bounds_box(kidney), &FitOptions::default())
        .and_then(|fitter| fitter.fit(&series))
        .map_err(|e| e.to_string())?;
    if !fit.is_valid() {
        return Err("fit ended at the parameter box or below the noise floor".into());
    }
    let r = BoundsContext::new(&p)
        .report(&series, fit.theta_hat)
        .map_err(|e| e.to_string())?;
    Ok(vec![
        fit.theta_hat.f,
        fit.theta_hat.att,
        r.lambda_max,
        r.lambda_min,
        r.kappa,
        r.c_crb_empirical.a,
        r.c_mcrb.a,
    ])
}

/// Rows of `[m, lambda_max_median, lambda_min_median, kappa_median]`,
/// flattened, for `m = 2..=m_max` on a brain phantom.
pub fn convergence(
    n_voxels: usize,
    m_max: usize,
    k: usize,
    snr: f64,
    k_out: f64,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let sigma = noise_sigma(false, snr)?;
    let p = protocol(false, sigma);
    let spec = PhantomSpec::brain(n_voxels, m_max, NoiseSpec::new(sigma, NoiseKind::Gaussian, seed))
        .with_generator(generator(k_out));
    let data = generate_phantom(&spec, &p).map_err(|e| e.to_string())?;
    let config = ConvergenceConfig::new((2..=m_max).collect(), k, seed, Reference::FullFit, BoundsBox::brain());
    let rows = convergence_study(&data, &p, &config).map_err(|e| e.to_string())?;
    Ok(rows
        .iter()
        .flat_map(|r| [r.m as f64, r.lambda_max_median, r.lambda_min_median, r.kappa_median])
        .collect())
}

#[wasm_bindgen(js_name = sampleTimes)]
pub fn sample_times_js() -> Vec<f64> {
    times()
}

#[wasm_bindgen(js_name = modelCurve)]
pub fn model_curve_js(f: f64, att: f64, kidney: bool) -> Result<Vec<f64>, JsValue> {
    curve(f, att, kidney).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = voxelMetrics)]
pub fn voxel_metrics_js(
    f: f64,
    att: f64,
    snr: f64,
    m: usize,
    k_out: f64,
    kidney: bool,
    seed: u32,
) -> Result<Vec<f64>, JsValue> {
    voxel_metrics(f, att, snr, m, k_out, kidney, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = convergenceCurve)]
pub fn convergence_js(
    n_voxels: usize,
    m_max: usize,
    k: usize,
    snr: f64,
    k_out: f64,
    seed: u32,
) -> Result<Vec<f64>, JsValue> {
    convergence(n_voxels, m_max, k, snr, k_out, seed as u64).map_err(|e| JsValue::from_str(&e))
}
