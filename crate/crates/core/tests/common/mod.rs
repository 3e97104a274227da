//! Double-precision reference U-Net with cross-entropy, for gradient checks.

#![allow(dead_code)]

use betaseg::losses::ce_loss;
use betaseg::network::{backward, build_and_init, forward, ParameterSet};
use betaseg::{LabelMap, NetworkSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `[C, H, W]` feature map in f64.
#[derive(Clone)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Map {
    fn at(&self, c: usize, y: isize, x: isize) -> f64 {
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            0.0
        } else {
            self.v[(c * self.h + y as usize) * self.w + x as usize]
        }
    }
}

pub type Params = Vec<(String, Vec<usize>, Vec<f64>)>;

fn param<'a>(p: &'a Params, name: &str) -> (&'a [usize], &'a [f64]) {
    let (_, s, v) = p.iter().find(|(n, _, _)| n == name).unwrap();
    (s, v)
}

fn conv(p: &Params, layer: &str, x: &Map, relu: bool) -> Map {
    let (shape, k) = param(p, &format!("{layer}.weight"));
    let (_, b) = param(p, &format!("{layer}.bias"));
    let (co, ci, kh, kw) = (shape[0], shape[1], shape[2], shape[3]);
    assert_eq!(ci, x.c);
    let pad = (kh / 2) as isize;
    let mut v = vec![0.0; co * x.h * x.w];
    for o in 0..co {
        for y in 0..x.h {
            for xx in 0..x.w {
                let mut s = b[o];
                for i in 0..ci {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            s += k[((o * ci + i) * kh + dy) * kw + dx]
                                * x.at(i, y as isize + dy as isize - pad, xx as isize + dx as isize - pad);
                        }
                    }
                }
                v[(o * x.h + y) * x.w + xx] = if relu { s.max(0.0) } else { s };
            }
        }
    }
    Map { c: co, h: x.h, w: x.w, v }
}

fn pool(x: &Map) -> Map {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut v = Vec::new();
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                let (y2, x2) = (2 * y as isize, 2 * xx as isize);
                v.push(
                    x.at(c, y2, x2)
                        .max(x.at(c, y2, x2 + 1))
                        .max(x.at(c, y2 + 1, x2))
                        .max(x.at(c, y2 + 1, x2 + 1)),
                );
            }
        }
    }
    Map { c: x.c, h, w, v }
}

fn up(x: &Map) -> Map {
    let (h, w) = (2 * x.h, 2 * x.w);
    let mut v = Vec::new();
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                v.push(x.at(c, (y / 2) as isize, (xx / 2) as isize));
            }
        }
    }
    Map { c: x.c, h, w, v }
}

fn cat(a: &Map, b: &Map) -> Map {
    let mut v = a.v.clone();
    v.extend_from_slice(&b.v);
    Map { c: a.c + b.c, h: a.h, w: a.w, v }
}

pub fn unet(p: &Params, depth: usize, image: Map) -> Map {
    let mut x = image;
    let mut skips = Vec::new();
    for l in 0..depth {
        x = conv(p, &format!("enc{l}.conv1"), &x, true);
        x = conv(p, &format!("enc{l}.conv2"), &x, true);
        skips.push(x.clone());
        x = pool(&x);
    }
    x = conv(p, "mid.conv1", &x, true);
    x = conv(p, "mid.conv2", &x, true);
    for l in (0..depth).rev() {
        x = cat(&up(&x), &skips[l]);
        x = conv(p, &format!("dec{l}.conv1"), &x, true);
        x = conv(p, &format!("dec{l}.conv2"), &x, true);
    }
    conv(p, "head", &x, false)
}

/// Mean pixel cross-entropy of the f64 network over a batch.
pub fn oracle_loss(p: &Params, depth: usize, images: &[Map], labels: &[LabelMap]) -> f64 {
    let mut total = 0.0;
    let mut pixels = 0usize;
    for (img, lab) in images.iter().zip(labels) {
        let z = unet(p, depth, img.clone());
        for y in 0..z.h {
            for x in 0..z.w {
                let logits: Vec<f64> = (0..z.c).map(|c| z.at(c, y as isize, x as isize)).collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
                total += lse - logits[lab.get(y, x) as usize];
                pixels += 1;
            }
        }
    }
    total / pixels as f64
}

pub fn to_f64(params: &ParameterSet) -> Params {
    params
        .tensors()
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.data().iter().map(|&v| v as f64).collect()))
        .collect()
}

pub fn image_maps(images: &Tensor) -> Vec<Map> {
    let s = images.shape();
    let plane = s[1] * s[2] * s[3];
    images
        .data()
        .chunks(plane)
        .map(|c| Map {
            c: s[1],
            h: s[2],
            w: s[3],
            v: c.iter().map(|&v| v as f64).collect(),
        })
        .collect()
}

/// Worst relative error between backpropagated CE gradients and central
/// differences of the reference network, over every parameter.
pub fn worst_gradient_error(params: &ParameterSet, images: &Tensor, labels: &[LabelMap]) -> f64 {
    let depth = params.spec().depth;
    let logits = forward(params, images).unwrap();
    let loss = ce_loss(&logits, labels, 1e-7).unwrap();
    let grads = backward(params, images, &loss.grad_logits).unwrap();

    let base = to_f64(params);
    let maps = image_maps(images);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (t, (_, analytic)) in grads.tensors().iter().enumerate() {
        let max_grad = analytic.data().iter().fold(0.0f64, |m, &g| m.max(g.abs() as f64));
        for i in 0..analytic.len() {
            let mut plus = base.clone();
            plus[t].2[i] += h;
            let mut minus = base.clone();
            minus[t].2[i] -= h;
            let fd = (oracle_loss(&plus, depth, &maps, labels) - oracle_loss(&minus, depth, &maps, labels)) / (2.0 * h);
            let a = analytic.data()[i] as f64;
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3 * max_grad).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}


/// Small three-class network with random biases, images and labels.
pub fn random_problem(depth: usize, seed: u64) -> (ParameterSet, Tensor, Vec<LabelMap>) {
    let spec = NetworkSpec {
        in_channels: 1,
        num_classes: 3,
        base_width: 2,
        depth,
        seed,
    };
    let mut params = build_and_init(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    // Non-zero biases so every bias gradient is exercised.
    for t in params.tensors_mut() {
        if t.shape().len() == 1 {
            for v in t.data_mut() {
                *v = rng.random_range(-0.2..0.2);
            }
        }
    }
    let (n, h, w) = (2, 8, 8);
    let images = Tensor::new(vec![n, 1, h, w], (0..n * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let labels = (0..n)
        .map(|_| LabelMap::new(h, w, (0..h * w).map(|_| rng.random_range(0..3u8)).collect()).unwrap())
        .collect();
    (params, images, labels)
}
