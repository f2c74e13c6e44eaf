//! CSV tables and PNG figures for a set of rollouts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::rollout::RolloutResult;
use crate::data::TrajectoryDataset;
use crate::error::{CoreError, Result};

const CELL: u32 = 8;
const GAP: u32 = 6;

/// Long form `sim_id,step,channel,rel_error`.
pub fn write_error_csv(result: &RolloutResult, path: &Path) -> Result<()> {
    let mut out = String::from("sim_id,step,channel,rel_error\n");
    for (s, per_step) in result.sims.iter().zip(&result.channel_errors) {
        for (k, chans) in per_step.iter().enumerate() {
            for (c, e) in chans.iter().enumerate() {
                out.push_str(&format!("{s},{},{c},{e:e}\n", k + 1));
            }
        }
    }
    write(path, out.as_bytes())
}

/// `step,mean,std` across simulations.
pub fn write_curve_csv(result: &RolloutResult, path: &Path) -> Result<()> {
    let mut out = String::from("step,mean,std\n");
    for (k, (m, s)) in result.error_curve().iter().enumerate() {
        out.push_str(&format!("{},{m:e},{s:e}\n", k + 1));
    }
    write(path, out.as_bytes())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    f.write_all(bytes).map_err(|e| CoreError::io(path, e))
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path)
        .map_err(|e| CoreError::io(path, std::io::Error::other(e.to_string())))
}

/// Mean error curve with a ±1 std band.
pub fn plot_curve(curve: &[(f64, f64)], path: &Path) -> Result<()> {
    let (w, h, pad) = (640u32, 360u32, 30u32);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let top = curve
        .iter()
        .map(|(m, s)| m + s)
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let n = curve.len().max(2);
    let px = |k: usize| pad + ((w - 2 * pad) as f64 * k as f64 / (n - 1) as f64) as u32;
    let py = |v: f64| {
        let v = v.clamp(0.0, top);
        h - pad - ((h - 2 * pad) as f64 * v / top) as u32
    };
    for x in pad..w - pad {
        img.put_pixel(x, h - pad, Rgb([0, 0, 0]));
    }
    for y in pad..=h - pad {
        img.put_pixel(pad, y, Rgb([0, 0, 0]));
    }
    for (k, &(m, s)) in curve.iter().enumerate() {
        let x = px(k);
        for y in py(m + s)..=py((m - s).max(0.0)) {
            img.put_pixel(x, y, Rgb([190, 205, 235]));
        }
    }
    for k in 1..curve.len() {
        let (x0, x1) = (px(k - 1), px(k));
        let (y0, y1) = (py(curve[k - 1].0) as i64, py(curve[k].0) as i64);
        for x in x0..=x1 {
            let t = if x1 > x0 { (x - x0) as f64 / (x1 - x0) as f64 } else { 0.0 };
            let y = (y0 as f64 + t * (y1 - y0) as f64).round() as i64;
            for yy in y.min(y0.min(y1))..=y.max(y0.max(y1)).min(y + 1) {
                img.put_pixel(x, yy as u32, Rgb([20, 50, 140]));
            }
        }
    }
    save(&img, path)
}

/// Piecewise-linear approximation of the viridis map.
fn colormap(t: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 1.0 } * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let c = |j: usize| (STOPS[i][j] * (1.0 - f) + STOPS[i + 1][j] * f).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

fn blit(img: &mut RgbImage, x0: u32, field: &[f32], w: usize, lo: f64, hi: f64) {
    let span = (hi - lo).max(1e-12);
    for (i, &v) in field.iter().enumerate() {
        let (r, c) = ((i / w) as u32, (i % w) as u32);
        let color = colormap((v as f64 - lo) / span);
        for dy in 0..CELL {
            for dx in 0..CELL {
                img.put_pixel(x0 + c * CELL + dx, r * CELL + dy, color);
            }
        }
    }
}

/// Reference, prediction and pointwise absolute error side by side for one
/// channel. Reference and prediction share one color scale.
pub fn plot_triplet(truth: &[f32], pred: &[f32], height: usize, width: usize, path: &Path) -> Result<()> {
    let err: Vec<f32> = truth.iter().zip(pred).map(|(a, b)| (a - b).abs()).collect();
    let (lo, hi) = truth
        .iter()
        .chain(pred)
        .fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v as f64), h.max(v as f64)));
    let emax = err.iter().fold(0.0f64, |m, &v| m.max(v as f64));
    let pw = width as u32 * CELL;
    let mut img = RgbImage::from_pixel(3 * pw + 2 * GAP, height as u32 * CELL, Rgb([255, 255, 255]));
    blit(&mut img, 0, truth, width, lo, hi);
    blit(&mut img, pw + GAP, pred, width, lo, hi);
    blit(&mut img, 2 * (pw + GAP), &err, width, 0.0, emax);
    save(&img, path)
}

/// CSV tables, the error curve and image triplets for the first
/// `n_triplet_sims` simulations at `triplet_steps`.
pub fn write_report(
    result: &RolloutResult,
    data: &TrajectoryDataset,
    out_dir: &Path,
    triplet_steps: &[usize],
    n_triplet_sims: usize,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| CoreError::io(out_dir, e))?;
    let mut files = Vec::new();
    let p = out_dir.join("errors.csv");
    write_error_csv(result, &p)?;
    files.push(p);
    let p = out_dir.join("error_curve.csv");
    write_curve_csv(result, &p)?;
    files.push(p);
    let p = out_dir.join("error_curve.png");
    plot_curve(&result.error_curve(), &p)?;
    files.push(p);

    let len = data.snapshot_len();
    let plane = data.height * data.width;
    for (i, &s) in result.sims.iter().enumerate().take(n_triplet_sims) {
        for &step in triplet_steps.iter().filter(|&&k| k >= 1 && k <= result.n_steps()) {
            let pred = &result.predictions[i][(step - 1) * len..step * len];
            let truth = data.snapshot(s, step);
            for ch in 0..data.channels {
                let p = out_dir.join(format!("sim{s}_step{step}_c{ch}.png"));
                let r = ch * plane..(ch + 1) * plane;
                plot_triplet(&truth[r.clone()], &pred[r], data.height, data.width, &p)?;
                files.push(p);
            }
        }
    }
    Ok(files)
}
