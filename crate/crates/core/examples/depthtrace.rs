//! Stage-wise deviation trace between two samples; development probe.

use rgbdad::dataio::load_sample;
use rgbdad::features::{build_multiscale, fuse};
use rgbdad::preprocess::preprocess_bundle;
use rgbdad::training::load_checkpoint;

fn norm_diff(a: &[f32], b: &[f32]) -> (f64, f64) {
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = (*x as f64 - *y as f64).abs();
        max = max.max(d);
        sum += d * d;
    }
    (max, (sum / a.len() as f64).sqrt())
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = load_checkpoint::<f32>(args[1].as_ref()).unwrap();
    let a = load_sample(args[2].as_ref()).unwrap();
    let b = load_sample(args[3].as_ref()).unwrap();
    let state = &ckpt.state;
    let cfg = state.model.preprocess();

    let pa = preprocess_bundle(&a, &cfg).unwrap();
    let pb = preprocess_bundle(&b, &cfg).unwrap();
    let di: Vec<f32> = pa.depth_rgb.data.iter().map(|v| *v as f32).collect();
    let dj: Vec<f32> = pb.depth_rgb.data.iter().map(|v| *v as f32).collect();
    let (dmax, drms) = norm_diff(&di, &dj);
    println!("depth image delta: max {dmax:.4} rms {drms:.4}");

    let sa_rgb = build_multiscale::<f32>(&pa.rgb, &state.backbone, state.model.patch_size).unwrap();
    let sb_rgb = build_multiscale::<f32>(&pb.rgb, &state.backbone, state.model.patch_size).unwrap();
    let sa_d = build_multiscale::<f32>(&pa.depth_rgb, &state.backbone, state.model.patch_size).unwrap();
    let sb_d = build_multiscale::<f32>(&pb.depth_rgb, &state.backbone, state.model.patch_size).unwrap();
    let (m, r) = norm_diff(&sa_rgb.data, &sb_rgb.data);
    println!("s_rgb delta:   max {m:.4} rms {r:.4}");
    let (m, r) = norm_diff(&sa_d.data, &sb_d.data);
    println!("s_depth delta: max {m:.4} rms {r:.4}");
    // scale reference: typical |s_depth| values
    let amax = sa_d.data.iter().map(|v| v.abs()).fold(0.0f32, f32::max);
    println!("s_depth |values| max {amax:.4}");

    let da = fuse(&sa_rgb, &sa_d, &state.adaptor).unwrap();
    let db = fuse(&sb_rgb, &sb_d, &state.adaptor).unwrap();
    let (m, r) = norm_diff(&da.data, &db.data);
    println!("d delta:       max {m:.4} rms {r:.4}");

    let ua = state.disc.forward_eval(&da).unwrap();
    let ub = state.disc.forward_eval(&db).unwrap();
    let (m, r) = norm_diff(&ua.data, &ub.data);
    println!("u delta:       max {m:.4} rms {r:.4}");
    let umax_a = ua.data.iter().cloned().fold(f32::MIN, f32::max);
    let umax_b = ub.data.iter().cloned().fold(f32::MIN, f32::max);
    println!("u max: {umax_a:.4} vs {umax_b:.4}");
}
