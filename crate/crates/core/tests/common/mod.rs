//! Brute-force reference implementations and check routines shared by the
//! integration tests and the acceptance report.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcodec_core::codec::{Codec, Jpeg};
use vcodec_core::imaging::{list_images, load_image, ssim_with, SsimWindow};
use vcodec_core::losses::{
    l1_content, l1_content_grad, l1_gradient_diff, l1_gradient_diff_grad, ssim_loss_grad, GradientSet, Objective,
};
use vcodec_core::networks::{fdnn_spec, ppnn_spec, vcnn_spec, Activation, LayerKind, NetworkParams};
use vcodec_core::{Image, NetworkKind};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn test_images() -> Vec<(String, Image)> {
    list_images(data_dir().join("test"))
        .unwrap()
        .iter()
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), load_image(p).unwrap()))
        .collect()
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |_, _| rng.random::<f64>())
}

/// `count` random pairs with each side in `min..=max`.
pub fn random_pairs(seed: u64, count: usize, min: usize, max: usize) -> Vec<(Image, Image)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let h = rng.random_range(min..=max);
            let w = rng.random_range(min..=max);
            (random_image(&mut rng, h, w), random_image(&mut rng, h, w))
        })
        .collect()
}

pub fn oracle_l1(a: &Image, b: &Image) -> f64 {
    let mut sum = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            sum += (a.get(y, x) - b.get(y, x)).abs();
        }
    }
    sum / (a.height() * a.width()) as f64
}

pub fn oracle_gradient_diff(a: &Image, b: &Image) -> f64 {
    let (h, w) = a.dims();
    let diff = |img: &Image, y: usize, x: usize, dy: usize, dx: usize| {
        if y + dy >= h || x + dx >= w {
            0.0
        } else {
            img.get(y + dy, x + dx) - img.get(y, x)
        }
    };
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            for (dy, dx) in [(0, 1), (1, 0)] {
                sum += (diff(a, y, x, dy, dx) - diff(b, y, x, dy, dx)).abs();
            }
        }
    }
    sum / (h * w) as f64
}

/// Mean SSIM over every fully contained `size`×`size` window, with a 2-D
/// Gaussian computed directly and centered second moments.
pub fn oracle_ssim(a: &Image, b: &Image, size: usize, sigma: f64) -> f64 {
    let c = (size as f64 - 1.0) / 2.0;
    let mut weights = vec![vec![0.0; size]; size];
    let mut total = 0.0;
    for (u, row) in weights.iter_mut().enumerate() {
        for (v, wt) in row.iter_mut().enumerate() {
            let r2 = (u as f64 - c).powi(2) + (v as f64 - c).powi(2);
            *wt = (-r2 / (2.0 * sigma * sigma)).exp();
            total += *wt;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let (h, w) = a.dims();
    let mut acc = 0.0;
    let mut count = 0;
    for i in 0..=h - size {
        for j in 0..=w - size {
            let (mut ma, mut mb) = (0.0, 0.0);
            for u in 0..size {
                for v in 0..size {
                    let g = weights[u][v] / total;
                    ma += g * a.get(i + u, j + v);
                    mb += g * b.get(i + u, j + v);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for u in 0..size {
                for v in 0..size {
                    let g = weights[u][v] / total;
                    let da = a.get(i + u, j + v) - ma;
                    let db = b.get(i + u, j + v) - mb;
                    va += g * da * da;
                    vb += g * db * db;
                    cov += g * da * db;
                }
            }
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// Window used for a pair in the oracle suite: the standard 11×11 when it
/// fits, otherwise the largest odd size that does.
pub fn window_for(a: &Image) -> SsimWindow {
    let fit = a.height().min(a.width());
    let size = if fit >= 11 { 11 } else if fit % 2 == 1 { fit } else { fit - 1 };
    SsimWindow { size, sigma: 1.5 }
}

/// Largest absolute deviation from the oracles over 20 random pairs of
/// 5×5 to 16×16: (l1, gradient difference, ssim).
pub fn oracle_suite() -> (f64, f64, f64) {
    let dirs = GradientSet::default();
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in random_pairs(20, 20, 5, 16) {
        worst.0 = worst.0.max((l1_content(&a, &b).unwrap().value - oracle_l1(&a, &b)).abs());
        worst.1 = worst.1.max((l1_gradient_diff(&a, &b, &dirs).unwrap().value - oracle_gradient_diff(&a, &b)).abs());
        let win = window_for(&a);
        let got = ssim_with(&a, &b, win).unwrap();
        worst.2 = worst.2.max((got - oracle_ssim(&a, &b, win.size, win.sigma)).abs());
    }
    worst
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖analytic − numeric‖ / ‖numeric‖` for a scalar function of an image.
pub fn image_grad_error(at: &Image, analytic: &Image, h: f64, f: impl Fn(&Image) -> f64) -> f64 {
    let mut numeric = vec![0.0; at.len()];
    for (i, n) in numeric.iter_mut().enumerate() {
        let mut plus = at.clone();
        plus.data_mut()[i] += h;
        let mut minus = at.clone();
        minus.data_mut()[i] -= h;
        *n = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    let diff: Vec<f64> = analytic.data().iter().zip(&numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(&numeric).max(1e-12)
}

/// Worst relative gradient error of the three losses and of the FDNN
/// objective, on random 16×16 pairs.
pub fn loss_gradient_suite() -> f64 {
    let dirs = GradientSet::default();
    let objective = Objective::default();
    let win = SsimWindow::default();
    let mut worst = 0.0f64;
    for (a, b) in random_pairs(16, 3, 16, 16) {
        let (_, g) = l1_content_grad(&a, &b).unwrap();
        worst = worst.max(image_grad_error(&a, &g, 1e-6, |p| l1_content(p, &b).unwrap().value));
        let (_, g) = l1_gradient_diff_grad(&a, &b, &dirs).unwrap();
        worst = worst.max(image_grad_error(&a, &g, 1e-6, |p| l1_gradient_diff(p, &b, &dirs).unwrap().value));
        let (_, g) = ssim_loss_grad(&a, &b, win).unwrap();
        worst = worst.max(image_grad_error(&a, &g, 1e-4, |p| -ssim_with(p, &b, win).unwrap()));

        let x = &b;
        let s_y = a.map(|v| 0.5 * v + 0.25);
        let (_, g) = objective.fdnn_grad(x, &a, &s_y).unwrap();
        worst = worst.max(image_grad_error(&a, &g.prediction, 1e-6, |p| objective.fdnn(x, p, &s_y).unwrap().value));
        worst = worst.max(image_grad_error(&s_y, &g.upsampled, 1e-4, |p| objective.fdnn(x, &a, p).unwrap().value));
    }
    worst
}

/// Worst relative error over 10 sampled parameters per network: analytic
/// gradient of an L1 output loss against central differences (h = 1e-5;
/// larger steps cross ReLU and L1 kinks),
/// in double precision on a 16×16 input.
pub fn network_gradient_suite() -> Vec<(NetworkKind, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let x = random_image(&mut rng, 16, 16);
    NetworkKind::ALL
        .iter()
        .map(|&kind| {
            let net: NetworkParams<f64> = NetworkParams::<f32>::init(kind, 11).cast();
            let input = if kind == NetworkKind::Fdnn { x.clone() } else { x.crop(0, 0, 8, 8).unwrap() };
            let (oh, ow) = net.output_dims(input.height(), input.width());
            let target = random_image(&mut rng, oh, ow);
            let loss = |n: &NetworkParams<f64>| l1_content(&n.forward(&input).unwrap(), &target).unwrap().value;

            let trace = net.forward_trace(&input).unwrap();
            let (_, g_out) = l1_content_grad(&trace.output().to_image(), &target).unwrap();
            let mut grads = net.zero_grads();
            net.backward(&trace, &g_out, Some(&mut grads), false).unwrap();

            let mut worst = 0.0f64;
            for s in 0..10 {
                let layer = s * net.specs().len() / 10;
                let bias = s % 3 == 2;
                let len = if bias {
                    net.layers()[layer].biases.len()
                } else {
                    net.layers()[layer].weights.len()
                };
                let idx = rng.random_range(0..len);
                let h = 1e-5;
                let shifted = |delta: f64| {
                    let mut n = net.clone();
                    let l = &mut n.layers_mut()[layer];
                    let t = if bias { &mut l.biases } else { &mut l.weights };
                    t[idx] += delta;
                    loss(&n)
                };
                let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
                let analytic = if bias {
                    grads.layers[layer].biases[idx]
                } else {
                    grads.layers[layer].weights[idx]
                };
                let scale = analytic.abs().max(numeric.abs());
                let rel = if scale < 1e-9 { 0.0 } else { (analytic - numeric).abs() / scale };
                worst = worst.max(rel);
            }
            (kind, worst)
        })
        .collect()
}

/// Layer layouts against the architecture description; `None` when they match.
pub fn architecture_mismatch() -> Option<String> {
    let f = fdnn_spec();
    let p = ppnn_spec();
    let relu7 = |s: &[vcodec_core::networks::LayerSpec]| {
        s[..7].iter().all(|l| l.activation == Activation::Relu && l.out_channels == 128) && s[7].activation == Activation::None
    };
    let checks = [
        ("fdnn has 8 layers", f.len() == 8),
        ("fdnn all conv", f.iter().all(|l| l.kind == LayerKind::Conv)),
        ("fdnn L1 9x9 1->128 s1", (f[0].kernel, f[0].in_channels, f[0].out_channels, f[0].stride) == (9, 1, 128, 1)),
        ("fdnn L2 3x3 s2", (f[1].kernel, f[1].stride) == (3, 2)),
        ("fdnn L3-L7 3x3 s1", f[2..7].iter().all(|l| l.kernel == 3 && l.stride == 1 && l.in_channels == 128)),
        ("fdnn L8 9x9 128->1", (f[7].kernel, f[7].in_channels, f[7].out_channels, f[7].stride) == (9, 128, 1, 1)),
        ("fdnn relu on 1-7 only", relu7(&f)),
        ("ppnn has 8 layers", p.len() == 8),
        ("ppnn 7 conv then deconv", p[..7].iter().all(|l| l.kind == LayerKind::Conv) && p[7].kind == LayerKind::Deconv),
        ("ppnn L1 9x9 1->128", (p[0].kernel, p[0].in_channels, p[0].out_channels) == (9, 1, 128)),
        ("ppnn L2-L7 3x3 s1", p[1..7].iter().all(|l| l.kernel == 3 && l.stride == 1 && l.in_channels == 128)),
        ("ppnn deconv 9x9 s2 128->1", (p[7].kernel, p[7].stride, p[7].in_channels, p[7].out_channels) == (9, 2, 128, 1)),
        ("ppnn relu on 1-7 only", relu7(&p)),
        ("vcnn equals ppnn", vcnn_spec() == p),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(name, _)| *name).collect();
    (!failed.is_empty()).then(|| failed.join(", "))
}

/// Even sizes 16..=160 where a forward pass violates the halving/doubling
/// contract.
pub fn shape_violations() -> Vec<String> {
    let fdnn = NetworkParams::<f32>::init(NetworkKind::Fdnn, 1);
    let ppnn = NetworkParams::<f32>::init(NetworkKind::Ppnn, 2);
    let vcnn = NetworkParams::<f32>::init(NetworkKind::Vcnn, 3);
    let mut bad = Vec::new();
    for size in (16..=160).step_by(2) {
        let x = Image::filled(size, size, 0.5);
        let y = fdnn.forward(&x).unwrap();
        if y.dims() != (size / 2, size / 2) {
            bad.push(format!("fdnn {size}: {:?}", y.dims()));
        }
        for net in [&ppnn, &vcnn] {
            let out = net.forward(&y).unwrap();
            if out.dims() != (size, size) {
                bad.push(format!("{} {}: {:?}", net.kind(), size / 2, out.dims()));
            }
        }
    }
    for (h, w) in [(16, 160), (160, 16), (48, 82)] {
        let x = Image::filled(h, w, 0.5);
        let y = fdnn.forward(&x).unwrap();
        if y.dims() != (h / 2, w / 2) || ppnn.forward(&y).unwrap().dims() != (h, w) {
            bad.push(format!("{h}x{w}"));
        }
    }
    bad
}

/// Mean bpp over the images at each quality.
pub fn mean_bpp(images: &[(String, Image)], qualities: &[u8]) -> Vec<f64> {
    qualities
        .iter()
        .map(|&q| {
            images.iter().map(|(_, x)| Jpeg.encode(x, q, x.dims()).unwrap().bpp().unwrap()).sum::<f64>()
                / images.len() as f64
        })
        .collect()
}

/// Bitstreams and reconstructions are identical across repeated encodes.
pub fn codec_determinism(images: &[(String, Image)]) -> Result<(), String> {
    for (id, x) in images {
        for q in [5, 40] {
            let (a, sa) = Jpeg.round_trip(x, q, x.dims()).map_err(|e| e.to_string())?;
            let (b, sb) = Jpeg.round_trip(x, q, x.dims()).map_err(|e| e.to_string())?;
            if sa != sb || a != b {
                return Err(format!("{id} q{q} differs between runs"));
            }
        }
    }
    Ok(())
}

/// Constant images decode flat, and exactly whenever their DC coefficient
/// is a multiple of the DC quantizer step (always true for mid-grey).
pub fn constant_exactness() -> Result<(), String> {
    let mut exact = 0;
    for q in [1, 5, 10, 20, 40, 75, 100] {
        let step = i32::from(vcodec_core::codec::quant_table(q).unwrap()[0]);
        for level in 0..=255u8 {
            let x = Image::from_u8(24, 40, &vec![level; 24 * 40]).unwrap();
            let (z, _) = Jpeg.round_trip(&x, q, x.dims()).map_err(|e| e.to_string())?;
            let z = z.to_u8();
            if z.iter().any(|&v| v != z[0]) {
                return Err(format!("level {level} q{q} not flat"));
            }
            if (i32::from(level) - 128) * 8 % step == 0 {
                exact += 1;
                if z[0] != level {
                    return Err(format!("level {level} q{q} decoded as {}", z[0]));
                }
            }
        }
    }
    if exact < 7 {
        return Err("mid-grey was not covered".into());
    }
    Ok(())
}

pub const RD_QUALITIES: [u8; 4] = [5, 10, 20, 40];

/// `(quality, psnr, bpp)` of the full-resolution JPEG whose rate is closest
/// to `target_bpp`, searched over 1..=30.
pub fn jpeg_at_rate(x: &Image, target_bpp: f64) -> (u8, f64, f64) {
    (1..=30u8)
        .map(|q| {
            let (z, bs) = Jpeg.round_trip(x, q, x.dims()).unwrap();
            (q, vcodec_core::imaging::psnr(x, &z).unwrap(), bs.bpp().unwrap())
        })
        .min_by(|a, b| (a.2 - target_bpp).abs().total_cmp(&(b.2 - target_bpp).abs()))
        .unwrap()
}

pub const DESK_SEED: u64 = 7;

/// Measurements of one desk-scale training run.
pub struct DeskOutcome {
    pub seconds: f64,
    pub log_rows: usize,
    pub expected_rows: usize,
    /// Relative drop of the first PPNN phase, first to last epoch.
    pub ppnn_drop: f64,
    /// Held-out `(L1(v(Y), Ĩ), L1(s(Y), Ĩ))`.
    pub vcnn_heldout: (f64, f64),
    pub theta_frozen: bool,
    pub fdnn_grad_norms: Vec<f64>,
    /// `(quality, trained, untrained, bicubic)` mean PSNR on the training patches.
    pub psnr: Vec<(u8, f64, f64, f64)>,
}

pub fn desk_config() -> vcodec_core::trainer::TrainingConfig {
    vcodec_core::trainer::TrainingConfig {
        seed: DESK_SEED,
        ..vcodec_core::trainer::TrainingConfig::desk()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Center and grid crops of the test images, never seen in training.
pub fn heldout_patches(size: usize) -> Vec<Image> {
    use vcodec_core::imaging::{extract_patches, CropMode, PatchRecipe};
    let recipe = PatchRecipe::plain(size, CropMode::Grid { stride: 3 * size });
    test_images().iter().flat_map(|(_, x)| extract_patches(x, &recipe, 0).unwrap()).collect()
}

pub fn desk_run() -> DeskOutcome {
    use vcodec_core::eval::{bicubic_round_trip, Pipeline};
    use vcodec_core::imaging::{psnr, Resampler};
    use vcodec_core::networks::load_checkpoint;
    use vcodec_core::trainer::{
        assign_qualities, checkpoint_name, compress_descriptions, patches_from_images, read_log, run_algorithm1_on,
        Phase, RunOptions, TrainingState, LOG_FILE,
    };

    let cfg = desk_config();
    let images: Vec<Image> = list_images(data_dir().join("train"))
        .unwrap()
        .iter()
        .map(|p| load_image(p).unwrap())
        .collect();
    let corpus = patches_from_images(&images, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let state = run_algorithm1_on(&cfg, &corpus, RunOptions::new(dir.path())).unwrap();
    let seconds = start.elapsed().as_secs_f64();

    let first_ppnn = state.reports(Phase::Ppnn).next().unwrap();
    let ppnn_drop = 1.0 - first_ppnn.last_loss() / first_ppnn.first_loss();

    let k = cfg.outer_iterations;
    let ckpt = |it: usize, phase: Phase| load_checkpoint(dir.path().join(checkpoint_name(it, phase)), phase.network()).unwrap();
    let alpha = ckpt(k - 1, Phase::Fdnn);
    let gamma = ckpt(k, Phase::Ppnn);
    let theta = ckpt(k, Phase::Vcnn);
    let heldout = heldout_patches(cfg.patch_size);
    let ys: Vec<Image> = heldout.iter().map(|x| alpha.forward(x).unwrap()).collect();
    let qualities = assign_qualities(ys.len(), &cfg.quality_factors, 1);
    let zs = compress_descriptions(&ys.iter().collect::<Vec<_>>(), &qualities).unwrap();
    let (mut proxy, mut upsample) = (0.0, 0.0);
    for (y, z) in ys.iter().zip(&zs) {
        let teacher = gamma.forward(z).unwrap();
        proxy += l1_content(&theta.forward(y).unwrap(), &teacher).unwrap().value;
        let s = Resampler::new(y.dims(), 2.0, vcodec_core::ResampleMethod::Linear).unwrap().apply(y).unwrap();
        upsample += l1_content(&s, &teacher).unwrap().value;
    }
    let n = ys.len() as f64;

    let fdnn_reports: Vec<_> = state.reports(Phase::Fdnn).collect();
    let theta_frozen = fdnn_reports.iter().all(|r| matches!(r.frozen_checksums, Some((a, b)) if a == b))
        && (1..=k).all(|it| ckpt(it, Phase::Vcnn).checksum() == fdnn_reports[it - 1].frozen_checksums.unwrap().0);

    let init = TrainingState::initial(&cfg);
    let trained = Pipeline { fdnn: state.alpha.clone(), ppnn: state.gamma.clone() };
    let untrained = Pipeline { fdnn: init.alpha, ppnn: init.gamma };
    let psnr_values = cfg
        .quality_factors
        .iter()
        .map(|&q| {
            (
                q,
                mean(corpus.iter().map(|x| psnr(x, &trained.round_trip(x, q).unwrap().0).unwrap())),
                mean(corpus.iter().map(|x| psnr(x, &untrained.round_trip(x, q).unwrap().0).unwrap())),
                mean(corpus.iter().map(|x| psnr(x, &bicubic_round_trip(x, q).unwrap().0).unwrap())),
            )
        })
        .collect();

    DeskOutcome {
        seconds,
        log_rows: read_log(dir.path().join(LOG_FILE)).unwrap().len(),
        expected_rows: cfg.total_epochs(),
        ppnn_drop,
        vcnn_heldout: (proxy / n, upsample / n),
        theta_frozen,
        fdnn_grad_norms: fdnn_reports.iter().map(|r| r.first_grad_norm).collect(),
        psnr: psnr_values,
    }
}
