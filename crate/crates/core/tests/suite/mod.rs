//! Named oracle checks shared by the core integration tests and the
//! acceptance report. Each returns `Err(reason)` on failure.

#![allow(dead_code)]

use cycledm::batch::{ClassToken, Conditioning, Direction, Domain, ImageBatch};
use cycledm::conversion::{
    adversarial_loss, convert_with, cycle_loss, discriminator_objective, generator_objective, gradient_penalty,
    identity_loss, sdedit_convert, train_conversion, ConversionArch, ConversionHyperparams, Converter, FnCritic,
    Networks, NoisyBatches,
};
use cycledm::datasets::{generate_synthetic_domains, split_dataset, SyntheticGlyphSpec};
use cycledm::diffusion::{
    ddpm_loss_at, p_sample_step, q_sample, Ddpm, DomainMode, NoisePredictor, NoiseSchedule, UNetConfig,
};
use cycledm::evaluation::{
    build_report, compute_fid, fid_from_moments, knn_precision_recall, nearest_indices, nn_classify_accuracy,
    FeatureSet, ReportInputs,
};
use cycledm::rng::stream_for;
use cycledm::Error;
use cycledm_tensor::{grad, randn, Tensor, Var};
use nalgebra::{DMatrix, DVector};

pub type Outcome = Result<(), String>;
pub type Check = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Outcome {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(what: &str, got: f64, want: f64, tol: f64) -> Outcome {
    ensure((got - want).abs() <= tol, || format!("{what}: got {got}, want {want} (tol {tol})"))
}

fn res<T>(r: cycledm::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn nchw(n: usize, side: usize, f: impl Fn(usize) -> f32) -> Tensor {
    Tensor::new(vec![n, 1, side, side], (0..n * side * side).map(f).collect())
}

fn tokens(n: usize) -> Vec<ClassToken> {
    (0..n).map(|i| ClassToken::Class((i % 26) as u8)).collect()
}

fn id(x: &Var, _: &[ClassToken]) -> Var {
    x.clone()
}

/// Predicts a fixed tensor regardless of input.
struct Fixed(Tensor);

impl NoisePredictor for Fixed {
    fn predict_noise(&self, _: &Var, _: &[usize], _: &Conditioning) -> Var {
        Var::constant(self.0.clone())
    }
}

fn desk_schedule() -> NoiseSchedule {
    NoiseSchedule::linear(100, 1e-3, 0.2).unwrap()
}

fn tiny_ddpm(seed: u64) -> Ddpm {
    Ddpm::init(desk_schedule(), &UNetConfig::new(8, 8), DomainMode::Joint, &mut stream_for(seed, "tiny-ddpm")).unwrap()
}

fn tiny_batch(domain: Domain, n: usize, phase: f32) -> ImageBatch {
    let px = nchw(n, 8, |i| ((i as f32) * 0.37 + phase).sin() * 0.9);
    ImageBatch::new(px, domain, (0..n).map(|i| (i % 26) as u8).collect()).unwrap()
}

fn bits_equal(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

// ---------------------------------------------------------------- derived

fn alpha_bar_direct_product() -> Outcome {
    let s = res(NoiseSchedule::linear(1000, 1e-4, 0.02))?;
    let mut prod = 1.0f64;
    for i in 0..1000 {
        prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0);
    }
    close("abar_1000 vs in-test product", s.alpha_bar(1000), prod, 1e-15)?;
    // Frozen from the standalone float64 product.
    close("abar_1000 vs frozen", s.alpha_bar(1000), 4.035829765375676e-05, 1e-12)
}

fn q_sample_monte_carlo() -> Outcome {
    let s = desk_schedule();
    let (n, t) = (10_000, 50);
    let x0 = [-0.8f32, -0.1, 0.3, 0.9];
    let x = Tensor::new(vec![n, 1, 2, 2], (0..n).flat_map(|_| x0).collect());
    let eps = randn(&mut stream_for(11, "mc"), vec![n, 1, 2, 2]);
    let xt = res(q_sample(&x, t, &eps, &s))?;
    let se = (1.0 - s.alpha_bar(t)).sqrt() / (n as f64).sqrt();
    for (p, &v) in x0.iter().enumerate() {
        let mean = (0..n).map(|i| xt.data()[i * 4 + p] as f64).sum::<f64>() / n as f64;
        close(&format!("pixel {p} mean"), mean, s.alpha_bar(t).sqrt() * v as f64, 3.0 * se)?;
    }
    Ok(())
}

fn one_step_roundtrip() -> Outcome {
    let s = desk_schedule();
    let x0 = nchw(2, 3, |i| ((i as f32) * 0.3).cos() * 0.8);
    let eps = randn(&mut stream_for(3, "rt"), vec![2, 1, 3, 3]);
    let x1 = res(q_sample(&x0, 1, &eps, &s))?;
    let cond = Conditioning::new(Domain::Printed, tokens(2));
    let back = res(p_sample_step(&Fixed(eps), &x1, 1, &cond, &s, &Tensor::zeros(vec![2, 1, 3, 3])))?;
    let err = back.data().iter().zip(x0.data()).fold(0f32, |m, (a, b)| m.max((a - b).abs()));
    ensure(err <= 1e-5, || format!("max roundtrip error {err}"))
}

fn loss_offset_is_delta_squared() -> Outcome {
    let s = desk_schedule();
    let x0 = nchw(3, 4, |i| ((i as f32) * 0.11).sin());
    let eps = randn(&mut stream_for(4, "d2"), vec![3, 1, 4, 4]);
    let delta = 0.37f32;
    let model = Fixed(eps.map(|v| v + delta));
    let cond = Conditioning::new(Domain::Handwritten, tokens(3));
    let l = res(ddpm_loss_at(&model, &x0, &cond, &[1, 40, 100], &eps, &s))?;
    close("offset loss", l.item() as f64, (delta * delta) as f64, 1e-6)
}

fn cycle_constant_tensors() -> Outcome {
    let (x, xp, c) = (Var::constant(Tensor::full(vec![2, 1, 3, 3], 0.5)), Var::constant(Tensor::full(vec![2, 1, 3, 3], -0.5)), tokens(2));
    let plus_one = |x: &Var, _: &[ClassToken]| x.add_scalar(1.0);
    let v = res(cycle_loss(&id, &plus_one, &x, &xp, &c, &c))?.item();
    close("cycle(F = id, G = x + 1)", v as f64, 2.0, 0.0)
}

fn identity_constant_tensors() -> Outcome {
    let (x, xp, c) = (Var::constant(Tensor::full(vec![2, 1, 3, 3], 0.1)), Var::constant(Tensor::full(vec![2, 1, 3, 3], 0.2)), tokens(2));
    let plus_two = |x: &Var, _: &[ClassToken]| x.add_scalar(2.0);
    let v = res(identity_loss(&plus_two, &id, &x, &xp, &c, &c))?.item();
    close("identity(F = x + 2, G = id)", v as f64, 2.0, 0.0)
}

/// Norm-relative error between `analytic` and central differences of `f`.
fn fd_relative(point: &Tensor, analytic: &Tensor, f: impl Fn(&Tensor) -> f64, h: f32) -> f64 {
    let (mut num, mut den) = (0f64, 0f64);
    for i in 0..point.numel() {
        let shifted = |d: f32| {
            let mut p = point.clone();
            p.data_mut()[i] += d;
            f(&p)
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h as f64);
        num += (fd - analytic.data()[i] as f64).powi(2);
        den += fd.powi(2);
    }
    (num / den.max(1e-30)).sqrt()
}

fn toy_critic(w: Var) -> impl Fn(&Var, &[ClassToken]) -> Var {
    move |x: &Var, _: &[ClassToken]| {
        let n = x.shape()[0];
        let wx = w.broadcast_to(x.shape()).mul(x);
        wx.tanh().add(&x.square().scale(0.3)).sum_to(&[n, 1, 1, 1]).reshape(&[n])
    }
}

fn generator_gradient_fd() -> Outcome {
    let w = Tensor::new(vec![1, 1, 2, 2], vec![0.9, -1.3, 0.4, 2.1]);
    let critic = FnCritic(toy_critic(Var::constant(w)));
    let real = Var::constant(Tensor::new(vec![1, 1, 2, 2], vec![0.2, -0.6, 0.8, 0.1]));
    let c = tokens(1);
    let gen_term = |out: &Var| -> Result<Var, String> {
        let o = out.clone();
        let gen = move |_: &Var, _: &[ClassToken]| o.clone();
        Ok(res(adversarial_loss(&gen, &critic, &real, &c, &real, &c))?.gen_term)
    };
    let point = Tensor::new(vec![1, 1, 2, 2], vec![-0.3, 0.7, 0.05, -0.9]);
    let out = Var::param(point.clone());
    let g = grad(&gen_term(&out)?, &[&out], false).remove(0);
    let rel = fd_relative(&point, g.value(), |p| gen_term(&Var::constant(p.clone())).unwrap().item() as f64, 1e-2);
    ensure(rel <= 1e-3, || format!("generator-output gradient relative error {rel:.2e}"))
}

fn penalty_gradient_fd() -> Outcome {
    let real = Tensor::new(vec![2, 1, 2, 2], vec![0.2, -0.6, 0.8, 0.1, -0.4, 0.5, 0.3, -0.2]);
    let fake = Tensor::new(vec![2, 1, 2, 2], vec![-0.1, 0.4, -0.7, 0.6, 0.9, -0.3, 0.0, 0.2]);
    let c = tokens(2);
    let gp = |w: &Var| -> Result<Var, String> {
        res(gradient_penalty(&FnCritic(toy_critic(w.clone())), &real, &fake, &c, &mut stream_for(5, "gp")))
    };
    let point = Tensor::new(vec![1, 1, 2, 2], vec![0.9, -1.3, 0.4, 2.1]);
    let w = Var::param(point.clone());
    let g = grad(&gp(&w)?, &[&w], false).remove(0);
    let rel = fd_relative(&point, g.value(), |p| gp(&Var::constant(p.clone())).unwrap().item() as f64, 1e-2);
    ensure(rel <= 1e-3, || format!("penalty parameter gradient relative error {rel:.2e}"))
}

fn sum_critic(x: &Var, _: &[ClassToken]) -> Var {
    let n = x.shape()[0];
    x.sum_to(&[n, 1, 1, 1]).reshape(&[n])
}

fn penalty_linear_scorer() -> Outcome {
    let real = nchw(3, 4, |i| ((i as f32) * 0.7).sin());
    let fake = nchw(3, 4, |i| ((i as f32) * 0.4).cos());
    let v = res(gradient_penalty(&FnCritic(sum_critic), &real, &fake, &tokens(3), &mut stream_for(0, "gp")))?.item();
    close("penalty of pixel-sum critic, P = 16", v as f64, (16f64.sqrt() - 1.0).powi(2), 1e-4)
}

fn recombination() -> Outcome {
    let h = ConversionHyperparams { lambda_cycle: 2.5, lambda_identity: 0.7, gp_weight: 10.0, ..Default::default() };
    let x_t = Var::constant(randn(&mut stream_for(1, "x"), vec![3, 1, 4, 4]));
    let x_p = Var::constant(randn(&mut stream_for(2, "x"), vec![3, 1, 4, 4]));
    let (c, cp) = (tokens(3), vec![ClassToken::Class(7); 3]);
    let f = |x: &Var, _: &[ClassToken]| x.scale(0.8).add_scalar(0.1).tanh();
    let g = |x: &Var, _: &[ClassToken]| x.scale(1.2).add_scalar(-0.2);
    let d = FnCritic(toy_critic(Var::constant(Tensor::full(vec![1, 1, 4, 4], 0.3))));
    let dp = FnCritic(toy_critic(Var::constant(Tensor::full(vec![1, 1, 4, 4], -0.2))));
    let nets = Networks { f: &f, g: &g, d: &d, d_prime: &dp };
    let b = NoisyBatches { x_t: &x_t, c: &c, x_prime_t: &x_p, c_prime: &cp };
    let (gl, gp) = res(generator_objective(&nets, &b, &h))?;
    let want = gp.adv_f + gp.adv_g + 2.5 * gp.cycle + 0.7 * gp.identity;
    close("generator total vs parts", gp.total, want, 1e-9)?;
    close("generator graph value", gl.item() as f64, gp.total, 1e-4 * gp.total.abs().max(1.0))?;
    let (dl, dparts) = res(discriminator_objective(&nets, &b, &h, &mut stream_for(3, "gp")))?;
    let want = -(dparts.disc_f + dparts.disc_g) + 10.0 * (dparts.gp_d + dparts.gp_d_prime);
    close("discriminator total vs parts", dparts.total, want, 1e-9)?;
    close("discriminator graph value", dl.item() as f64, dparts.total, 1e-4 * dparts.total.abs().max(1.0))
}

fn moments_case() -> (DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let mu1 = DVector::from_vec(vec![0.3, -1.2, 2.0]);
    let mu2 = DVector::from_vec(vec![-0.5, 0.4, 1.1]);
    let s1 = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -0.4, 0.3, 1.5, 0.2, -0.4, 0.2, 0.8]);
    let s2 = DMatrix::from_row_slice(3, 3, &[1.1, -0.2, 0.1, -0.2, 0.6, 0.25, 0.1, 0.25, 1.7]);
    (mu1, s1, mu2, s2)
}

/// Denman-Beavers iteration for the principal square root.
fn sqrtm_db(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let (mut y, mut z) = (a.clone(), DMatrix::<f64>::identity(n, n));
    for _ in 0..100 {
        let yi = y.clone().try_inverse().expect("invertible");
        let zi = z.clone().try_inverse().expect("invertible");
        y = (&y + zi) * 0.5;
        z = (&z + yi) * 0.5;
    }
    y
}

fn fid_brute(mu1: &DVector<f64>, s1: &DMatrix<f64>, mu2: &DVector<f64>, s2: &DMatrix<f64>) -> f64 {
    let eye = DMatrix::<f64>::identity(3, 3) * 1e-6;
    let (a, b) = (s1 + &eye, s2 + &eye);
    (mu1 - mu2).norm_squared() + a.trace() + b.trace() - 2.0 * sqrtm_db(&(&a * &b)).trace()
}

fn fid_gaussian_closed_form() -> Outcome {
    let (mu1, s1, mu2, s2) = moments_case();
    let got = res(fid_from_moments(&mu1, &s1, &mu2, &s2))?;
    close("FID vs in-test Denman-Beavers", got, fid_brute(&mu1, &s1, &mu2, &s2), 1e-6)?;
    // Frozen from the standalone float64 scipy sqrtm evaluation.
    close("FID vs frozen", got, 4.741997158015821, 1e-6)
}

fn fid_points() -> (FeatureSet, FeatureSet) {
    let n = 24;
    let real: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let i = i as f64;
            vec![(1.1 * i + 0.3).sin(), 1.5 * (0.7 * i).cos(), (0.37 * i).sin() + 0.1 * i / n as f64]
        })
        .collect();
    let gen: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let i = i as f64;
            vec![0.8 * (0.9 * i).cos() + 0.4, (1.7 * i).sin() - 0.2, 0.5 * (0.23 * i + 1.0).cos() + 0.3 * (1.1 * i).sin()]
        })
        .collect();
    (FeatureSet::from_rows(&real, "real").unwrap(), FeatureSet::from_rows(&gen, "gen").unwrap())
}

fn fid_sample_sets() -> Outcome {
    let (r, g) = fid_points();
    close("FID of sample sets vs frozen", res(compute_fid(&r, &g))?, 0.5979362741305474, 1e-6)
}

fn spiral(off: f64, scale: f64) -> Vec<Vec<f64>> {
    (0..10)
        .map(|j| {
            let j = j as f64;
            let r = scale * (1.0 + 0.15 * j);
            vec![r * (2.4 * j).cos() + off, r * (2.4 * j).sin() + 0.5 * off]
        })
        .collect()
}

/// O(N^2) coverage with every distance recomputed from scratch.
fn brute_coverage(manifold: &[Vec<f64>], probe: &[Vec<f64>], k: usize) -> f64 {
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let radii: Vec<f64> = manifold
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<f64> =
                manifold.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, q)| d2(p, q)).collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect();
    let hit = probe.iter().filter(|q| manifold.iter().zip(&radii).any(|(m, &r)| d2(q, m) <= r)).count();
    hit as f64 / probe.len() as f64
}

fn precision_recall_bruteforce() -> Outcome {
    let (r, g) = (spiral(0.0, 1.0), spiral(2.0, 2.0));
    let (fr, fg) = (FeatureSet::from_rows(&r, "r").unwrap(), FeatureSet::from_rows(&g, "g").unwrap());
    let (p, rc) = res(knn_precision_recall(&fr, &fg, 3))?;
    ensure((p, rc) == (brute_coverage(&r, &g, 3), brute_coverage(&g, &r, 3)), || {
        format!("({p}, {rc}) differs from the in-test exhaustive reference")
    })?;
    // Frozen from the standalone numpy reference.
    ensure((p, rc) == (0.5, 1.0), || format!("({p}, {rc}) differs from frozen (0.5, 1.0)"))?;
    let swapped = res(knn_precision_recall(&fg, &fr, 3))?;
    ensure(swapped == (1.0, 0.5), || format!("swapped roles gave {swapped:?}"))
}

fn l1_batches() -> (ImageBatch, ImageBatch) {
    let refs = Tensor::new(
        vec![30, 1, 4, 4],
        (0..30).flat_map(|a| (0..16).map(move |j| (0.5 * a as f32 + 0.9 * j as f32).sin())).collect(),
    );
    let qs = Tensor::new(
        vec![10, 1, 4, 4],
        (0..10).flat_map(|q| (0..16).map(move |j| (0.77 * q as f32 + 0.9 * j as f32 + 0.1).sin())).collect(),
    );
    let r = ImageBatch::new(refs, Domain::Printed, (0..30).map(|i| (i % 3) as u8).collect()).unwrap();
    let q = ImageBatch::new(qs, Domain::Printed, (0..10).map(|i| (i % 3) as u8).collect()).unwrap();
    (q, r)
}

fn l1_nearest_neighbor() -> Outcome {
    let (q, r) = l1_batches();
    let got = res(nearest_indices(&q, &r))?;
    let brute: Vec<usize> = (0..q.len())
        .map(|i| {
            let dists: Vec<f64> = (0..r.len())
                .map(|j| q.image(i).iter().zip(r.image(j)).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum())
                .collect();
            (0..r.len()).min_by(|&a, &b| dists[a].total_cmp(&dists[b])).unwrap()
        })
        .collect();
    ensure(got == brute, || format!("{got:?} differs from the in-test distance matrix {brute:?}"))?;
    // Frozen from the standalone numpy distance matrix.
    ensure(got == vec![0, 27, 16, 5, 19, 8, 22, 11, 0, 14], || format!("{got:?} differs from frozen"))?;
    close("accuracy", res(nn_classify_accuracy(&q, &r))?, 0.3, 0.0)
}

pub const DERIVED: &[Check] = &[
    ("alpha-bar equals the direct product", alpha_bar_direct_product),
    ("forward-noising sample mean (Monte-Carlo)", q_sample_monte_carlo),
    ("one-step forward/reverse roundtrip", one_step_roundtrip),
    ("noise loss with constant offset is delta^2", loss_offset_is_delta_squared),
    ("cycle loss on constant tensors", cycle_constant_tensors),
    ("identity loss on constant tensors", identity_constant_tensors),
    ("generator adversarial gradient vs finite differences", generator_gradient_fd),
    ("gradient-penalty parameter gradient vs finite differences", penalty_gradient_fd),
    ("gradient penalty of a linear scorer", penalty_linear_scorer),
    ("objective totals recombine from parts", recombination),
    ("FID closed form on 3-D Gaussians", fid_gaussian_closed_form),
    ("FID on sample sets", fid_sample_sets),
    ("k-NN precision/recall vs exhaustive reference", precision_recall_bruteforce),
    ("pixel-L1 nearest neighbor vs distance matrix", l1_nearest_neighbor),
];

// ---------------------------------------------------------------- trivial

fn single_step_schedule() -> Outcome {
    let s = res(NoiseSchedule::linear(1, 0.3, 0.3))?;
    close("abar_1", s.alpha_bar(1), 0.7, 1e-15)
}

fn q_sample_degenerate_inputs() -> Outcome {
    let s = desk_schedule();
    let x0 = nchw(2, 3, |i| ((i as f32) * 0.2).sin());
    let eps = randn(&mut stream_for(0, "e"), vec![2, 1, 3, 3]);
    let zero = Tensor::zeros(vec![2, 1, 3, 3]);
    let a = res(q_sample(&x0, 30, &zero, &s))?;
    let sa = s.alpha_bar(30).sqrt() as f32;
    ensure(a.data().iter().zip(x0.data()).all(|(y, x)| (y - sa * x).abs() < 1e-6), || "eps = 0 case".into())?;
    let b = res(q_sample(&zero, 30, &eps, &s))?;
    let sb = (1.0 - s.alpha_bar(30)).sqrt() as f32;
    ensure(b.data().iter().zip(eps.data()).all(|(y, e)| (y - sb * e).abs() < 1e-6), || "x0 = 0 case".into())
}

fn reverse_step_zero_cases() -> Outcome {
    let s = desk_schedule();
    let x = nchw(1, 3, |i| ((i as f32) * 0.5).cos());
    let zero = Tensor::zeros(vec![1, 1, 3, 3]);
    let cond = Conditioning::new(Domain::Printed, tokens(1));
    let y = res(p_sample_step(&Fixed(zero.clone()), &x, 20, &cond, &s, &zero))?;
    let k = (1.0 / s.alpha(20).sqrt()) as f32;
    ensure(y.data().iter().zip(x.data()).all(|(a, b)| (a - k * b).abs() < 1e-6), || "eps_hat = 0, z = 0".into())?;
    let e = nchw(1, 3, |i| (i as f32) * 0.1 - 0.4);
    let y = res(p_sample_step(&Fixed(e.clone()), &x, 20, &cond, &s, &zero))?;
    let c = (s.beta(20) / (1.0 - s.alpha_bar(20)).sqrt()) as f32;
    ensure(
        y.data().iter().zip(x.data()).zip(e.data()).all(|((a, b), q)| (a - k * (b - c * q)).abs() < 1e-6),
        || "z = 0 leaves only the posterior mean".into(),
    )
}

fn noise_loss_zero_and_sign() -> Outcome {
    let s = desk_schedule();
    let x0 = nchw(2, 4, |i| ((i as f32) * 0.3).sin());
    let eps = randn(&mut stream_for(9, "e"), vec![2, 1, 4, 4]);
    let cond = Conditioning::new(Domain::Printed, tokens(2));
    let l = res(ddpm_loss_at(&Fixed(eps.clone()), &x0, &cond, &[5, 77], &eps, &s))?.item();
    ensure(l == 0.0, || format!("exact predictor loss {l}"))?;
    let l = res(ddpm_loss_at(&Fixed(Tensor::full(vec![2, 1, 4, 4], 3.0)), &x0, &cond, &[5, 77], &eps, &s))?.item();
    ensure(l >= 0.0, || format!("negative loss {l}"))
}

fn conversion_loss_zero_cases() -> Outcome {
    let x = Var::constant(nchw(2, 3, |i| ((i as f32) * 0.4).sin()));
    let xp = Var::constant(nchw(2, 3, |i| ((i as f32) * 0.9).cos()));
    let c = tokens(2);
    ensure(res(cycle_loss(&id, &id, &x, &xp, &c, &c))?.item() == 0.0, || "cycle(id, id)".into())?;
    let up = |x: &Var, _: &[ClassToken]| x.add_scalar(0.25);
    let down = |x: &Var, _: &[ClassToken]| x.add_scalar(-0.25);
    let v = res(cycle_loss(&up, &down, &x, &xp, &c, &c))?.item();
    ensure(v.abs() < 1e-6, || format!("cycle(+d, -d) = {v}"))?;
    ensure(res(identity_loss(&id, &id, &x, &xp, &c, &c))?.item() == 0.0, || "identity(id, id)".into())?;
    let v = res(identity_loss(&up, &down, &x, &xp, &c, &c))?.item();
    ensure(v >= 0.0, || format!("identity loss {v} is negative"))
}

fn discriminator_boundary_cases() -> Outcome {
    let x = Var::constant(Tensor::full(vec![2, 1, 3, 3], 0.5));
    let xp = Var::constant(Tensor::full(vec![2, 1, 3, 3], -0.5));
    let c = tokens(2);
    let half = FnCritic(|x: &Var, _: &[ClassToken]| Var::constant(Tensor::zeros(vec![x.shape()[0]])));
    let t = res(adversarial_loss(&id, &half, &x, &c, &xp, &c))?;
    close("D = 0.5 disc term", t.disc_term.item() as f64, 2.0 * 0.5f64.ln(), 1e-6)?;
    // Real images are positive, fakes negative: saturated logits of either sign.
    let perfect = FnCritic(|x: &Var, _: &[ClassToken]| {
        let n = x.shape()[0];
        x.sum_to(&[n, 1, 1, 1]).reshape(&[n]).scale(100.0)
    });
    let t = res(adversarial_loss(&id, &perfect, &x, &c, &xp, &c))?;
    close("perfect D disc term", t.disc_term.item() as f64, 0.0, 1e-5)
}

fn penalty_zero_and_sign() -> Outcome {
    let real = nchw(2, 4, |i| ((i as f32) * 0.7).sin());
    let fake = nchw(2, 4, |i| ((i as f32) * 0.4).cos());
    let unit = FnCritic(|x: &Var, _: &[ClassToken]| {
        let n = x.shape()[0];
        x.sum_to(&[n, 1, 1, 1]).reshape(&[n]).scale(0.25)
    });
    let v = res(gradient_penalty(&unit, &real, &fake, &tokens(2), &mut stream_for(0, "gp")))?.item();
    ensure(v.abs() < 1e-6, || format!("unit-gradient critic penalty {v}"))?;
    let w = Var::constant(Tensor::full(vec![1, 1, 4, 4], 1.7));
    let v = res(gradient_penalty(&FnCritic(toy_critic(w)), &real, &fake, &tokens(2), &mut stream_for(1, "gp")))?.item();
    ensure(v >= 0.0, || format!("penalty {v} is negative"))
}

fn zero_lambdas_leave_adversarial_terms() -> Outcome {
    let h = ConversionHyperparams { lambda_cycle: 0.0, lambda_identity: 0.0, ..Default::default() };
    let x_t = Var::constant(randn(&mut stream_for(1, "x"), vec![2, 1, 4, 4]));
    let x_p = Var::constant(randn(&mut stream_for(2, "x"), vec![2, 1, 4, 4]));
    let c = tokens(2);
    let f = |x: &Var, _: &[ClassToken]| x.scale(0.5);
    let d = FnCritic(toy_critic(Var::constant(Tensor::full(vec![1, 1, 4, 4], 0.3))));
    let nets = Networks { f: &f, g: &id, d: &d, d_prime: &d };
    let b = NoisyBatches { x_t: &x_t, c: &c, x_prime_t: &x_p, c_prime: &c };
    let (_, p) = res(generator_objective(&nets, &b, &h))?;
    ensure(p.cycle > 0.0, || "cycle part should be non-zero here".into())?;
    close("total with zero lambdas", p.total, p.adv_f + p.adv_g, 1e-12)?;
    let nets = Networks { f: &id, g: &id, d: &d, d_prime: &d };
    let (_, p) = res(generator_objective(&nets, &b, &ConversionHyperparams::default()))?;
    ensure(p.cycle == 0.0 && p.identity == 0.0, || "identity networks leave reconstruction terms".into())?;
    close("identity networks total", p.total, p.adv_f + p.adv_g, 1e-12)
}

fn fid_same_set_and_unit_shift() -> Outcome {
    let (r, _) = fid_points();
    close("FID(X, X)", res(compute_fid(&r, &r))?, 0.0, 1e-6)?;
    let n = 4000;
    let a = randn(&mut stream_for(2, "fid-a"), vec![n]);
    let b = randn(&mut stream_for(3, "fid-b"), vec![n]);
    let fa = FeatureSet::new(a.data().iter().map(|&v| v as f64).collect(), 1, "a").unwrap();
    let fb = FeatureSet::new(b.data().iter().map(|&v| v as f64 + 1.0).collect(), 1, "b").unwrap();
    // Sampling error of the mean and variance terms is about 0.05 at n = 4000.
    close("FID(N(0,1), N(1,1))", res(compute_fid(&fa, &fb))?, 1.0, 0.15)
}

fn precision_recall_extremes() -> Outcome {
    let (r, _) = fid_points();
    let pr = res(knn_precision_recall(&r, &r, 3))?;
    ensure(pr == (1.0, 1.0), || format!("identical sets gave {pr:?}"))?;
    let far: Vec<Vec<f64>> = (0..r.len()).map(|i| r.row(i).iter().map(|v| v + 1000.0).collect()).collect();
    let pr = res(knn_precision_recall(&r, &FeatureSet::from_rows(&far, "far").unwrap(), 3))?;
    ensure(pr == (0.0, 0.0), || format!("separated clusters gave {pr:?}"))
}

fn nearest_neighbor_zero_cases() -> Outcome {
    let (q, r) = l1_batches();
    close("self queries", res(nn_classify_accuracy(&r, &r))?, 1.0, 0.0)?;
    let single = ImageBatch::new(r.pixels().clone(), Domain::Printed, vec![1; r.len()]).unwrap();
    let frac = q.classes().iter().filter(|&&c| c == 1).count() as f64 / q.len() as f64;
    close("single-class reference", res(nn_classify_accuracy(&q, &single))?, frac, 0.0)
}

fn sdedit_start_zero_is_identity() -> Outcome {
    let ddpm = tiny_ddpm(0);
    let x = tiny_batch(Domain::Handwritten, 3, 0.0);
    let y = res(sdedit_convert(&x, Direction::HwToMp, 0, &ddpm, &mut stream_for(0, "s")))?;
    ensure(bits_equal(y.pixels(), x.pixels()), || "t_start = 0 changed the input".into())
}

fn sdedit_full_noise_ignores_source() -> Outcome {
    // A schedule whose sqrt(abar_T) is far below f32 resolution, so x_T carries no trace of x0.
    let s = res(NoiseSchedule::linear(100, 1e-3, 0.9))?;
    ensure(s.alpha_bar(100).sqrt() < 1e-12, || "schedule does not reach full noise".into())?;
    let ddpm = res(Ddpm::init(s, &UNetConfig::new(8, 8), DomainMode::Joint, &mut stream_for(0, "tiny-ddpm")))?;
    let a = tiny_batch(Domain::Handwritten, 3, 0.0);
    let b = tiny_batch(Domain::Handwritten, 3, 1.7);
    let ya = res(sdedit_convert(&a, Direction::HwToMp, 100, &ddpm, &mut stream_for(4, "s")))?;
    let yb = res(sdedit_convert(&b, Direction::HwToMp, 100, &ddpm, &mut stream_for(4, "s")))?;
    ensure(bits_equal(ya.pixels(), yb.pixels()), || "outputs from different sources differ".into())
}

fn conversion_replay_and_reduction() -> Outcome {
    let ddpm = tiny_ddpm(1);
    let x = tiny_batch(Domain::Printed, 4, 0.3);
    let run = |seed| res(sdedit_convert(&x, Direction::MpToHw, 30, &ddpm, &mut stream_for(seed, "s")));
    ensure(bits_equal(run(7)?.pixels(), run(7)?.pixels()), || "same seed, different output".into())?;
    let via_identity = res(convert_with(&id as &dyn Converter, &x, Direction::MpToHw, 30, &ddpm, &mut stream_for(7, "s")))?;
    ensure(bits_equal(via_identity.pixels(), run(7)?.pixels()), || "F = id does not reduce to SDEdit".into())?;
    let shift = |x: &Var, _: &[ClassToken]| x.add_scalar(3.0);
    let y = res(convert_with(&shift, &x, Direction::MpToHw, 30, &ddpm, &mut stream_for(7, "s")))?;
    ensure(y.pixels().data().iter().all(|v| (-1.0..=1.0).contains(v)), || "output outside [-1, 1]".into())?;
    ensure(y.domain() == Domain::Handwritten && y.classes() == x.classes(), || "labels not carried over".into())
}

fn frozen_backbone_fingerprint() -> Outcome {
    let ddpm = tiny_ddpm(2);
    let before = ddpm.fingerprint();
    let hw = tiny_batch(Domain::Handwritten, 6, 0.0);
    let mp = tiny_batch(Domain::Printed, 6, 0.9);
    let h = ConversionHyperparams { batch_size: 4, steps: 2, ..Default::default() };
    let (pair, _) = res(train_conversion(&ddpm, &hw, &mp, 20, &ConversionArch::new(8), &h, 0, |_, _, _| {}))?;
    ensure(ddpm.fingerprint() == before, || "DDPM parameters changed".into())?;
    ensure(pair.ddpm_fingerprint() == before, || "pair records a different backbone".into())
}

fn split_and_synthetic_counts() -> Outcome {
    let spec = SyntheticGlyphSpec { per_class: 20, resolution: 16, ..Default::default() };
    let (hw, mp) = res(generate_synthetic_domains(&spec))?;
    ensure(hw.len() == 520 && mp.len() == 520, || format!("{} / {} items", hw.len(), mp.len()))?;
    let (hw2, _) = res(generate_synthetic_domains(&spec))?;
    ensure(hw.items == hw2.items, || "synthetic replay differs".into())?;
    let (train, test) = res(split_dataset(&hw, 0.7, 0))?;
    ensure(train.len() == 14 * 26 && test.len() == 6 * 26, || format!("split {}/{}", train.len(), test.len()))
}

fn report_missing_field() -> Outcome {
    let r = build_report(ReportInputs {
        direction: Some(Direction::HwToMp),
        method: Some("cycledm".into()),
        t_star: Some(60),
        accuracy: Some(0.5),
        precision: Some(0.5),
        recall: Some(0.5),
        fid: None,
        n_generated: 4,
        n_reference: 4,
        seeds: vec![0],
    });
    ensure(matches!(r, Err(Error::MissingField("fid"))), || format!("{r:?}"))
}

pub const TRIVIAL: &[Check] = &[
    ("single-step schedule", single_step_schedule),
    ("forward noising with zero noise / zero signal", q_sample_degenerate_inputs),
    ("reverse step with zero noise", reverse_step_zero_cases),
    ("noise loss zero and non-negative", noise_loss_zero_and_sign),
    ("cycle/identity zero cases", conversion_loss_zero_cases),
    ("discriminator at 0.5 and perfect", discriminator_boundary_cases),
    ("gradient penalty zero case and sign", penalty_zero_and_sign),
    ("zero lambdas and identity networks", zero_lambdas_leave_adversarial_terms),
    ("FID(X, X) and unit mean shift", fid_same_set_and_unit_shift),
    ("precision/recall on identical and separated sets", precision_recall_extremes),
    ("nearest-neighbor self and single-class cases", nearest_neighbor_zero_cases),
    ("SDEdit from t = 0 is the identity", sdedit_start_zero_is_identity),
    ("SDEdit from t = T ignores the source", sdedit_full_noise_ignores_source),
    ("conversion replay, identity reduction, range", conversion_replay_and_reduction),
    ("frozen DDPM fingerprint across conversion training", frozen_backbone_fingerprint),
    ("synthetic counts and 70/30 split", split_and_synthetic_counts),
    ("report names a missing field", report_missing_field),
];

/// Runs every check and returns the failures as `name: reason`.
pub fn run(checks: &[Check]) -> Vec<String> {
    checks.iter().filter_map(|(name, f)| f().err().map(|e| format!("{name}: {e}"))).collect()
}
