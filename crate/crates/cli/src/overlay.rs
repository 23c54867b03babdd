//! Saliency-overlay image: the scene tinted with the prediction heatmap,
//! mask boundary in green, sampled points as red dots.

use std::path::Path;

use afford_core::denoiser::{self, ModelParams};
use afford_core::diffusion::{self, DiffusionSchedule};
use afford_core::harness::EvalOptions;
use afford_core::synth::{mix_seed, SampleRecord};

pub fn write_overlay(
    params: &ModelParams,
    record: &SampleRecord,
    sched_loc: &DiffusionSchedule,
    sched_rot: &DiffusionSchedule,
    opts: &EvalOptions,
    out: &Path,
) -> Result<(), String> {
    let (w, h) = (record.frame.width, record.frame.height);
    let preds = if opts.oracle {
        vec![record.gt; opts.samples_per_scene]
    } else {
        let master = params.to_master();
        let scene = denoiser::tokenize_scene_with_master(&record.frame, &record.mask, params, &master)
            .map_err(|e| e.to_string())?;
        (0..opts.samples_per_scene)
            .map(|s| {
                diffusion::sample(
                    |a_i, step| {
                        denoiser::predict_noise_with_master(
                            params,
                            &master,
                            &scene,
                            record.instruction_id,
                            a_i,
                            step,
                        )
                        .expect("validated model inputs")
                    },
                    w,
                    h,
                    sched_loc,
                    sched_rot,
                    mix_seed(mix_seed(opts.seed, record.id), s as u64),
                )
                .map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<_>, _>>()?
    };

    // Saliency map from the sampled points.
    let sigma = opts.sigma_h;
    let mut saliency = vec![0.0f64; w * h];
    let mut peak = 0.0f64;
    for v in 0..h {
        for u in 0..w {
            let mut s = 0.0;
            for p in &preds {
                let du = u as f64 - p.contact_point.u;
                let dv = v as f64 - p.contact_point.v;
                s += (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp();
            }
            saliency[v * w + u] = s;
            peak = peak.max(s);
        }
    }
    let peak = peak.max(1e-12);

    let mut rgb = vec![0u8; w * h * 3];
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            let base = [
                record.frame.rgb[i * 3] * 255.0,
                record.frame.rgb[i * 3 + 1] * 255.0,
                record.frame.rgb[i * 3 + 2] * 255.0,
            ];
            let heat = (saliency[i] / peak) as f32;
            let on_boundary = record.mask.get(u, v)
                && [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)].iter().any(|&(du, dv)| {
                    let (nu, nv) = (u as i64 + du, v as i64 + dv);
                    nu < 0
                        || nv < 0
                        || nu >= w as i64
                        || nv >= h as i64
                        || !record.mask.get(nu as usize, nv as usize)
                });
            let mut px = [
                base[0] * (1.0 - heat) + 255.0 * heat,
                base[1] * (1.0 - 0.8 * heat),
                base[2] * (1.0 - 0.8 * heat),
            ];
            if on_boundary {
                px = [40.0, 230.0, 60.0];
            }
            for c in 0..3 {
                rgb[i * 3 + c] = px[c].round().clamp(0.0, 255.0) as u8;
            }
        }
    }

    let file = std::fs::File::create(out).map_err(|e| e.to_string())?;
    let mut encoder = png::Encoder::new(std::io::BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| e.to_string())?;
    writer.write_image_data(&rgb).map_err(|e| e.to_string())?;
    Ok(())
}
