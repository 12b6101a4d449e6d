//! Per-input-dimension discriminator sensitivity; development probe.

use rgbdad::training::load_checkpoint;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = load_checkpoint::<f32>(args[1].as_ref()).unwrap();
    let disc = &ckpt.state.disc;
    let c = disc.in_channels;
    let h = disc.hidden;
    // effective eval-mode sensitivity of hidden unit j to input dim i:
    // w1[i,j] * gamma[j] / sqrt(running_var[j] + eps) -- summarize per input dim
    let mut per_dim = vec![0.0f64; c];
    for i in 0..c {
        let mut s = 0.0f64;
        for j in 0..h {
            let scale = disc.gamma[j] as f64 / ((disc.running_var[j] as f64 + 1e-5).sqrt());
            let v = disc.w1[i * h + j] as f64 * scale * disc.w2[j] as f64;
            s += v * v;
        }
        per_dim[i] = s.sqrt();
    }
    let half = c / 2;
    let rgb: f64 = per_dim[..half].iter().sum::<f64>() / half as f64;
    let depth: f64 = per_dim[half..].iter().sum::<f64>() / half as f64;
    println!("mean end-to-end sensitivity: rgb-half {rgb:.6} depth-half {depth:.6}");

    let rv_rgb: f64 = disc.running_var[..0].iter().map(|v| *v as f64).sum::<f64>(); // placeholder
    let _ = rv_rgb;
    // running stats are per hidden unit, not per input; report w1 norms instead
    let mut w1_rgb = 0.0f64;
    let mut w1_depth = 0.0f64;
    for i in 0..c {
        let row: f64 = (0..h).map(|j| (disc.w1[i * h + j] as f64).powi(2)).sum();
        if i < half {
            w1_rgb += row.sqrt();
        } else {
            w1_depth += row.sqrt();
        }
    }
    println!("mean |w1 row|: rgb-half {:.6} depth-half {:.6}", w1_rgb / half as f64, w1_depth / half as f64);
}
