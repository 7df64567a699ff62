//! Independent oracles and check routines shared by the integration tests and
//! the acceptance runner.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbfnet::data::LabeledDataset;
use sbfnet::ensemble::cross_entropy;
use sbfnet::layers::{softmax, LayerSpec};
use sbfnet::metric::{
    cosine_distance, cosine_distance_grad, triplet_loss, triplet_loss_grad, Margin, MinedTriplet, NegativeKind,
    Triplet, COSINE_EPS,
};
use sbfnet::network::{Mode, Sequential};
use sbfnet::{BackboneConfig, EmbeddingNetwork, Tensor};

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform_vec(rng, n, lo, hi)).unwrap()
}

// ---------------------------------------------------------------- oracles

pub fn cosine_oracle(x: &[f64], y: &[f64]) -> f64 {
    let mut xy = 0.0;
    let mut xx = 0.0;
    let mut yy = 0.0;
    for i in 0..x.len() {
        xy += x[i] * y[i];
        xx += x[i] * x[i];
        yy += y[i] * y[i];
    }
    let nx = xx.sqrt().max(COSINE_EPS);
    let ny = yy.sqrt().max(COSINE_EPS);
    (1.0 - xy / (nx * ny)).max(0.0)
}

pub fn euclidean_oracle(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        let d = x[i] - y[i];
        s += d * d;
    }
    s.sqrt()
}

pub fn rbf_oracle(d: f64, sigma: f64) -> f64 {
    (-d / (2.0 * sigma * sigma)).exp()
}

pub fn triplet_oracle(a: &[f64], p: &[f64], n: &[f64], alpha: f64) -> f64 {
    let l = cosine_oracle(a, p) - cosine_oracle(a, n) + alpha;
    if l > 0.0 {
        l
    } else {
        0.0
    }
}

/// Exhaustive mining: for every positive, list every negative with its
/// category, then pick the preferred one.
pub fn mine_oracle(d_ap: &[f64], d_an: &[f64], alpha: f64) -> Vec<(usize, NegativeKind)> {
    let mut out = Vec::new();
    for &dp in d_ap {
        let mut band = Vec::new();
        let mut beyond = Vec::new();
        for (n, &dn) in d_an.iter().enumerate() {
            if dn > dp && dn < dp + alpha {
                band.push(n);
            } else if dn >= dp + alpha {
                beyond.push(n);
            }
        }
        let nearest = |set: &[usize]| {
            let mut best = set[0];
            for &n in set {
                if d_an[n] < d_an[best] {
                    best = n;
                }
            }
            best
        };
        let pick = if !band.is_empty() {
            (nearest(&band), NegativeKind::SemiHard)
        } else if !beyond.is_empty() {
            (nearest(&beyond), NegativeKind::BeyondBand)
        } else {
            let mut far = 0;
            for n in 0..d_an.len() {
                if d_an[n] > d_an[far] {
                    far = n;
                }
            }
            (far, NegativeKind::Farthest)
        };
        out.push(pick);
    }
    out
}

pub fn mined_matches_oracle(mined: &[MinedTriplet], d_ap: &[f64], d_an: &[f64], alpha: f64) -> bool {
    let expected = mine_oracle(d_ap, d_an, alpha);
    mined.len() == expected.len()
        && mined.iter().zip(&expected).enumerate().all(|(p, (m, &(n, kind)))| {
            m.positive == p && m.negative == n && m.kind == kind && m.d_ap == d_ap[p] && m.d_an == d_an[n]
        })
}

/// Direct same-padded convolution of an `[N, H, W, Cin]` batch with a
/// `[k, k, Cin, Cout]` kernel.
pub fn conv_oracle(x: &Tensor, weight: &Tensor, bias: &[f64], stride: usize) -> Tensor {
    let s = x.shape();
    let (n, h, w, cin) = (s[0], s[1], s[2], s[3]);
    let k = weight.shape()[0];
    let cout = weight.shape()[3];
    let pad = k / 2;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![0.0; n * oh * ow * cout];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = bias[co];
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv = xd[((b * h + iy as usize) * w + ix as usize) * cin + ci];
                                acc += xv * wd[((ky * k + kx) * cin + ci) * cout + co];
                            }
                        }
                    }
                    out[((b * oh + oy) * ow + ox) * cout + co] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, oh, ow, cout], out).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ------------------------------------------------------- gradient checks

/// `|a - n| / (|a| + |n|)` over whole gradient tensors (0 when both vanish).
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let denom = norm(analytic) + norm(numeric);
    if denom == 0.0 {
        0.0
    } else {
        norm(&diff) / denom
    }
}

pub fn central_difference(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks every parameter tensor and the input gradient of `net` under the
/// scalar loss `sum(w * net(x))` for a random `w`. The network is cloned
/// before each forward pass so dropout masks repeat. Returns the largest
/// relative error.
pub fn check_network(net: &Sequential, x: &Tensor, seed: u64) -> f64 {
    let out_len = net.clone().forward(x, Mode::Train).unwrap().len();
    let w = uniform_vec(&mut rng(seed), out_len, -1.0, 1.0);
    let loss = |n: &Sequential, x: &Tensor| dot(n.clone().forward(x, Mode::Train).unwrap().data(), &w);

    let mut a = net.clone();
    a.zero_grad();
    let y = a.forward(x, Mode::Train).unwrap();
    let dx = a.backward(&Tensor::new(y.shape().to_vec(), w.clone()).unwrap()).unwrap();

    let mut worst = relative_error(
        dx.data(),
        &central_difference(x.data(), |v| loss(net, &Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap())),
    );
    for (pi, p) in a.params().iter().enumerate() {
        let numeric = central_difference(p.value.data(), |v| {
            let mut probe = net.clone();
            probe.params_mut()[pi].value.data_mut().copy_from_slice(v);
            loss(&probe, x)
        });
        worst = worst.max(relative_error(p.grad.data(), &numeric));
    }
    worst
}

/// One small network per layer kind (plus a composed conv net and a strided
/// convolution), each with a batch of two inputs.
pub fn layer_cases() -> Vec<(&'static str, Vec<usize>, Vec<LayerSpec>)> {
    vec![
        ("dense", vec![5], vec![LayerSpec::dense(5, 4)]),
        ("conv2d", vec![5, 5, 2], vec![LayerSpec::conv3x3(2, 3)]),
        (
            "conv2d_stride2",
            vec![5, 5, 1],
            vec![LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 2,
                kernel_size: 3,
                stride: 2,
            }],
        ),
        ("relu", vec![6], vec![LayerSpec::dense(6, 6), LayerSpec::Relu, LayerSpec::dense(6, 3)]),
        ("maxpool2d", vec![5, 5, 2], vec![LayerSpec::conv3x3(2, 2), LayerSpec::pool2x2()]),
        ("flatten", vec![3, 3, 2], vec![LayerSpec::Flatten, LayerSpec::dense(18, 3)]),
        (
            "dropout",
            vec![6],
            vec![LayerSpec::dense(6, 6), LayerSpec::Dropout { rate: 0.5 }, LayerSpec::dense(6, 3)],
        ),
        ("softmax", vec![5], vec![LayerSpec::dense(5, 4), LayerSpec::Softmax]),
        (
            "conv_net",
            vec![6, 6, 1],
            vec![
                LayerSpec::conv3x3(1, 2),
                LayerSpec::Relu,
                LayerSpec::pool2x2(),
                LayerSpec::Flatten,
                LayerSpec::dense(18, 4),
                LayerSpec::Relu,
                LayerSpec::dense(4, 3),
            ],
        ),
    ]
}

/// Relative errors of every layer case, the metric gradients, cross-entropy
/// through softmax, and the triplet loss through a shared embedding network.
pub fn gradient_suite() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (i, (name, shape, specs)) in layer_cases().into_iter().enumerate() {
        let seed = 100 + i as u64;
        let net = Sequential::new(&shape, specs, seed).unwrap();
        let mut batch_shape = vec![2];
        batch_shape.extend(&shape);
        let x = uniform_tensor(&mut rng(seed), &batch_shape, -1.0, 1.0);
        out.push((name.to_string(), check_network(&net, &x, seed)));
    }

    let mut r = rng(7);
    let (x, y) = (uniform_vec(&mut r, 6, -1.0, 1.0), uniform_vec(&mut r, 6, -1.0, 1.0));
    let (_, gx, gy) = cosine_distance_grad(&x, &y);
    let err_x = relative_error(&gx, &central_difference(&x, |v| cosine_distance(v, &y)));
    let err_y = relative_error(&gy, &central_difference(&y, |v| cosine_distance(&x, v)));
    out.push(("cosine_distance".into(), err_x.max(err_y)));

    let margin = Margin::new(0.3).unwrap();
    let (a, p, n) = active_triplet(&mut r, 6, margin);
    let g = triplet_loss_grad(&Triplet::new(&a, &p, &n).unwrap(), margin);
    let tl = |a: &[f64], p: &[f64], n: &[f64]| triplet_loss(&Triplet::new(a, p, n).unwrap(), margin);
    let err = [
        relative_error(&g.anchor, &central_difference(&a, |v| tl(v, &p, &n))),
        relative_error(&g.positive, &central_difference(&p, |v| tl(&a, v, &n))),
        relative_error(&g.negative, &central_difference(&n, |v| tl(&a, &p, v))),
    ];
    out.push(("triplet_loss".into(), err.into_iter().fold(0.0, f64::max)));

    let logits = uniform_vec(&mut r, 12, -2.0, 2.0);
    let labels = [1, 3, 0];
    let ce = |v: &[f64]| {
        let probs = softmax(&Tensor::new(vec![3, 4], v.to_vec()).unwrap()).unwrap();
        cross_entropy(&probs, &labels).0
    };
    let probs = softmax(&Tensor::new(vec![3, 4], logits.clone()).unwrap()).unwrap();
    let (_, grad) = cross_entropy(&probs, &labels);
    out.push(("softmax_cross_entropy".into(), relative_error(grad.data(), &central_difference(&logits, ce))));

    out.push(("triplet_through_embedding".into(), triplet_through_embedding()));
    out
}

fn active_triplet(r: &mut ChaCha8Rng, dim: usize, margin: Margin) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    loop {
        let a = uniform_vec(r, dim, -1.0, 1.0);
        let p = uniform_vec(r, dim, -1.0, 1.0);
        let n = uniform_vec(r, dim, -1.0, 1.0);
        if triplet_loss(&Triplet::new(&a, &p, &n).unwrap(), margin) > 0.05 {
            return (a, p, n);
        }
    }
}

/// Triplet loss of (anchor, positive, negative) embedded in one batch by a
/// tiny custom backbone, differentiated through every weight.
pub fn triplet_through_embedding() -> f64 {
    let margin = Margin::new(0.3).unwrap();
    let cfg = BackboneConfig::custom([4, 4, 1], vec![vec![2]], 8);
    let dim = cfg.embedding_dim;
    let loss_of = |emb: &Tensor| {
        let rows: Vec<&[f64]> = emb.data().chunks(dim).collect();
        triplet_loss(&Triplet::new(rows[0], rows[1], rows[2]).unwrap(), margin)
    };
    for seed in 0.. {
        let net = EmbeddingNetwork::build(cfg.clone(), seed).unwrap().network().clone();
        let x = uniform_tensor(&mut rng(seed), &[3, 4, 4, 1], 0.0, 1.0);
        let emb = net.infer(&x).unwrap();
        if loss_of(&emb) < 0.05 || emb.data().chunks(dim).any(|r| r.iter().all(|&v| v == 0.0)) {
            continue;
        }
        let mut a = net.clone();
        a.zero_grad();
        let emb = a.forward(&x, Mode::Train).unwrap();
        let rows: Vec<&[f64]> = emb.data().chunks(dim).collect();
        let g = triplet_loss_grad(&Triplet::new(rows[0], rows[1], rows[2]).unwrap(), margin);
        let grad: Vec<f64> = [g.anchor, g.positive, g.negative].concat();
        a.backward(&Tensor::new(emb.shape().to_vec(), grad).unwrap()).unwrap();
        let mut worst: f64 = 0.0;
        for (pi, p) in a.params().iter().enumerate() {
            let numeric = central_difference(p.value.data(), |v| {
                let mut probe = net.clone();
                probe.params_mut()[pi].value.data_mut().copy_from_slice(v);
                loss_of(&probe.infer(&x).unwrap())
            });
            worst = worst.max(relative_error(p.grad.data(), &numeric));
        }
        return worst;
    }
    unreachable!()
}

// ---------------------------------------------------------------- data

/// Dataset whose image `i` is filled with `i * 1e-6`, so provenance of any
/// image can be read back from its pixels.
pub fn index_coded(counts: &[usize], side: usize) -> LabeledDataset {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (class, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            images.push(Tensor::filled(&[side, side, 1], images.len() as f64 * 1e-6));
            labels.push(class);
        }
    }
    LabeledDataset::new(images, labels, counts.len()).unwrap()
}

pub fn image_ids(ds: &LabeledDataset) -> Vec<usize> {
    ds.images().iter().map(|t| (t.data()[0] * 1e6).round() as usize).collect()
}

/// Writes an uncompressed IDX pair byte by byte (big-endian headers, magic
/// 2051 for images and 2049 for labels).
pub fn write_idx_raw(images: &std::path::Path, labels: &std::path::Path, rows: u32, cols: u32, pixels: &[u8], label_bytes: &[u8]) {
    let count = label_bytes.len() as u32;
    assert_eq!(pixels.len(), (count * rows * cols) as usize);
    let mut ib = Vec::with_capacity(16 + pixels.len());
    for v in [2051u32, count, rows, cols] {
        ib.extend_from_slice(&v.to_be_bytes());
    }
    ib.extend_from_slice(pixels);
    let mut lb = Vec::with_capacity(8 + label_bytes.len());
    for v in [2049u32, count] {
        lb.extend_from_slice(&v.to_be_bytes());
    }
    lb.extend_from_slice(label_bytes);
    std::fs::write(images, ib).unwrap();
    std::fs::write(labels, lb).unwrap();
}

pub fn mnist_5k_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-5k")
}

// ------------------------------------------------------------ structure

pub fn toy_ensemble_config(k: usize, seed: u64) -> sbfnet::EnsembleConfig {
    let backbone = BackboneConfig::custom([8, 8, 1], vec![vec![4]], 8);
    let mut cfg = sbfnet::EnsembleConfig::desk(backbone);
    cfg.centers_per_class = k;
    cfg.seed = seed;
    cfg.kernel.iterations = 15;
    cfg.kernel.batch_triplets = 6;
    cfg.kernel.lr = 1e-2;
    cfg.mlp.iterations = 150;
    cfg.mlp.lr = 1e-2;
    cfg.augmentation.copies = 1;
    cfg.augmentation.seed = seed;
    cfg
}

fn params_bitwise_eq(a: &Sequential, b: &Sequential) -> bool {
    let (pa, pb) = (a.params(), b.params());
    pa.len() == pb.len() && pa.iter().zip(&pb).all(|(x, y)| x.value.bitwise_eq(&y.value))
}

/// Named structural checks on a small trained network; each entry is
/// `(name, passed, detail)`.
pub fn structural_suite() -> Vec<(String, bool, String)> {
    use sbfnet::data::{augment, gaussian_blobs};
    use sbfnet::ensemble::train_kernels;

    let (classes, k) = (3, 2);
    let train = gaussian_blobs(classes, 6, 8, 5);
    let cfg = toy_ensemble_config(k, 21);
    let trained = sbfnet::train_sbf(&train, &cfg).unwrap();
    let net = &trained.net;
    let mut out = Vec::new();
    let mut push = |name: &str, ok: bool, detail: String| out.push((name.to_string(), ok, detail));

    let n_kernels = net.kernels().len();
    push("kernel_count", n_kernels == classes * k, format!("{n_kernels} kernels for {classes} classes x {k}"));
    let order: Vec<usize> = net.kernels().iter().map(|kn| kn.anchor_class()).collect();
    push(
        "class_major_order",
        order.iter().enumerate().all(|(j, &c)| c == j / k),
        format!("anchor classes {order:?}"),
    );
    let width = net.similarity_vector(train.image(0)).unwrap().len();
    push("similarity_width", width == classes * k, format!("width {width}"));
    let head_in = net.head().input_width();
    push("mlp_input_width", head_in == classes * k, format!("head input {head_in}"));

    let self_sims: Vec<f64> = net
        .kernels()
        .iter()
        .map(|kn| kn.similarity(kn.anchor_image()).unwrap())
        .collect();
    push(
        "self_similarity",
        self_sims.iter().all(|&s| s == 1.0),
        format!("{self_sims:?}"),
    );

    let anchors: Vec<(Tensor, usize)> = trained
        .centers
        .iter()
        .map(|&i| (train.image(i).clone(), train.label(i)))
        .collect();
    let pool = augment(&train, &cfg.augmentation).unwrap();
    let stage1 = train_kernels(&anchors, &pool, &cfg).unwrap();
    let frozen = stage1
        .iter()
        .zip(net.kernels())
        .all(|(a, b)| params_bitwise_eq(a.kernel.network().network(), b.network().network()));
    push("stage2_freezing", frozen, "stage-1 kernels retrained alone equal the final kernels bitwise".into());

    let again = sbfnet::train_sbf(&train, &cfg).unwrap();
    let same_kernels = again
        .net
        .kernels()
        .iter()
        .zip(net.kernels())
        .all(|(a, b)| params_bitwise_eq(a.network().network(), b.network().network()));
    let same_head = params_bitwise_eq(again.net.head().network(), net.head().network());
    let pa = net.predict_batch(train.images()).unwrap();
    let pb = again.net.predict_batch(train.images()).unwrap();
    push(
        "seed_determinism",
        same_kernels && same_head && pa == pb && again.centers == trained.centers,
        "identical seed reproduces kernels, head and predictions".into(),
    );
    let other = sbfnet::train_sbf(&train, &toy_ensemble_config(k, 22)).unwrap();
    push(
        "seed_sensitivity",
        !params_bitwise_eq(other.net.head().network(), net.head().network()),
        "a different seed changes the head".into(),
    );
    out
}
