//! Brute-force oracles and the check suites shared by the integration tests
//! and the acceptance target.
#![allow(dead_code)]

use std::collections::HashSet;

use candle_core::{DType, Device, Tensor, Var};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xmodseg::metrics::{
    dsc, growth_rate_ttest, hd95, kl_divergence, theil_sen_growth, IntensityHistogram, LongitudinalSeries,
    SeriesSource,
};
use xmodseg::phantom::{Mask, Spacing};
use xmodseg::pipeline::longitudinal_report;
use xmodseg::segmentation::dice_loss;
use xmodseg::synthesis::{
    adversarial_loss, cycle_loss, generator_adversarial_loss, total_loss_tensor, tumor_location_loss,
    tumor_shape_loss, LossWeights, SynthesisConfig, SynthesisState, TrainPair,
};

pub type Suite = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1f64.max(b.abs())
}

// ---------------------------------------------------------------- masks

/// Union of a few random discs and rectangles plus sparse speckle.
pub fn random_mask(r: &mut ChaCha8Rng, h: usize, w: usize) -> Mask {
    let mut m = Mask::zeros((h, w));
    for _ in 0..r.random_range(1..=3) {
        let (cr, cc) = (r.random_range(0..h) as f64, r.random_range(0..w) as f64);
        let rad = r.random_range(1.0..h.min(w) as f64 / 3.0);
        let disc = r.random_bool(0.5);
        for ((i, j), v) in m.indexed_iter_mut() {
            let (dr, dc) = (i as f64 - cr, j as f64 - cc);
            let inside = if disc {
                dr * dr + dc * dc <= rad * rad
            } else {
                dr.abs() <= rad && dc.abs() <= rad * 0.7
            };
            if inside {
                *v = 1;
            }
        }
    }
    for v in m.iter_mut() {
        if r.random_bool(0.03) {
            *v = 1;
        }
    }
    m
}

pub fn oracle_dsc(p: &Mask, t: &Mask) -> f64 {
    let set = |m: &Mask| -> HashSet<(usize, usize)> {
        m.indexed_iter().filter(|(_, &v)| v != 0).map(|(ix, _)| ix).collect()
    };
    let (ps, ts) = (set(p), set(t));
    if ps.is_empty() && ts.is_empty() {
        return 1.0;
    }
    2.0 * ps.intersection(&ts).count() as f64 / (ps.len() + ts.len()) as f64
}

/// Foreground pixels touching the background or the image edge (4-neighbourhood).
pub fn oracle_boundary(m: &Mask) -> Vec<(usize, usize)> {
    let (h, w) = m.dim();
    let mut out = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if m[(i, j)] == 0 {
                continue;
            }
            let edge = i == 0 || j == 0 || i + 1 == h || j + 1 == w;
            if edge || m[(i - 1, j)] == 0 || m[(i + 1, j)] == 0 || m[(i, j - 1)] == 0 || m[(i, j + 1)] == 0 {
                out.push((i, j));
            }
        }
    }
    out
}

/// Every directed boundary distance in both directions, then the linearly
/// interpolated 95th percentile.
pub fn oracle_hd95(p: &Mask, t: &Mask, sp: Spacing) -> f64 {
    let (bp, bt) = (oracle_boundary(p), oracle_boundary(t));
    let dist = |a: (usize, usize), b: (usize, usize)| {
        let dr = (a.0 as f64 - b.0 as f64) * sp.row_mm;
        let dc = (a.1 as f64 - b.1 as f64) * sp.col_mm;
        dr.hypot(dc)
    };
    let nearest = |x: (usize, usize), set: &[(usize, usize)]| set.iter().map(|&y| dist(x, y)).fold(f64::MAX, f64::min);
    let mut all: Vec<f64> = bp.iter().map(|&x| nearest(x, &bt)).collect();
    all.extend(bt.iter().map(|&x| nearest(x, &bp)));
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = 0.95 * (all.len() - 1) as f64;
    let (lo, frac) = (rank.floor() as usize, rank.fract());
    if frac == 0.0 {
        all[lo]
    } else {
        (1.0 - frac) * all[lo] + frac * all[lo + 1]
    }
}

pub fn oracle_kl(p: &[u64], q: &[u64], eps: f64) -> f64 {
    let probs = |c: &[u64]| -> Vec<f64> {
        let n: u64 = c.iter().sum();
        let raw: Vec<f64> = c.iter().map(|&x| x as f64 / n as f64 + eps).collect();
        let z: f64 = raw.iter().sum();
        raw.iter().map(|x| x / z).collect()
    };
    let (pp, qq) = (probs(p), probs(q));
    let mut s = 0.0;
    for i in 0..pp.len() {
        s += pp[i] * (pp[i].ln() - qq[i].ln());
    }
    s
}

pub fn oracle_theil_sen(pts: &[(f64, f64)]) -> f64 {
    let mut slopes = Vec::new();
    for i in 0..pts.len() {
        for k in 0..pts.len() {
            if pts[i].0 < pts[k].0 {
                slopes.push((pts[k].1 - pts[i].1) / (pts[k].0 - pts[i].0));
            }
        }
    }
    slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = slopes.len();
    (slopes[(n - 1) / 2] + slopes[n / 2]) / 2.0
}

fn random_counts(r: &mut ChaCha8Rng, bins: usize) -> Vec<u64> {
    let zero_rate = r.random_range(0.0..0.6);
    (0..bins)
        .map(|_| if r.random_bool(zero_rate) { 0 } else { r.random_range(1..500) })
        .collect()
}

fn random_spacing(r: &mut ChaCha8Rng) -> Spacing {
    Spacing::new(r.random_range(0.4..2.5), r.random_range(0.4..2.5)).unwrap()
}

/// DSC, HD95, KL and Theil-Sen each against their oracle on `n` random instances.
pub fn metric_oracle_suite(n: usize, seed: u64) -> Suite {
    let mut r = rng(seed);
    let mut worst = [0.0f64; 4];
    for i in 0..n {
        let (h, w) = (r.random_range(8..=16), r.random_range(8..=16));
        let (mut p, t) = (random_mask(&mut r, 16, 16), random_mask(&mut r, 16, 16));
        if i % 10 == 0 {
            p.fill(0);
        }
        let got = dsc(&p, &t).map_err(|e| e.to_string())?;
        let want = oracle_dsc(&p, &t);
        worst[0] = worst[0].max((got - want).abs());
        ensure((got - want).abs() <= 1e-12, || format!("dsc instance {i}: {got} vs oracle {want}"))?;

        let (p, t) = (random_mask(&mut r, h, w), random_mask(&mut r, h, w));
        let sp = if i % 2 == 0 { Spacing::new(1.0, 1.0).unwrap() } else { random_spacing(&mut r) };
        let got = hd95(&p, &t, sp).map_err(|e| e.to_string())?;
        let want = oracle_hd95(&p, &t, sp);
        let tol = if i % 2 == 0 { 1e-12 } else { 1e-9 };
        worst[1] = worst[1].max((got - want).abs());
        ensure(close(got, want, tol), || format!("hd95 instance {i}: {got} vs oracle {want} at {sp:?}"))?;

        let (cp, cq) = (random_counts(&mut r, 1000), random_counts(&mut r, 1000));
        let mut hp = IntensityHistogram::new(1000).unwrap();
        let mut hq = hp.clone();
        hp.counts = cp.clone();
        hq.counts = cq.clone();
        let got = kl_divergence(&hp, &hq, 1e-10).map_err(|e| e.to_string())?;
        let want = oracle_kl(&cp, &cq, 1e-10);
        worst[2] = worst[2].max((got - want).abs());
        ensure(close(got, want, 1e-9), || format!("kl instance {i}: {got} vs oracle {want}"))?;

        let mut t = 0.0;
        let pts: Vec<(f64, f64)> = (0..r.random_range(2..=9))
            .map(|_| {
                t += r.random_range(1..=4) as f64 * 0.5;
                (t, r.random_range(0.0..50.0))
            })
            .collect();
        let series = LongitudinalSeries::new(format!("S{i}"), SeriesSource::Expert, pts.clone()).unwrap();
        let got = theil_sen_growth(&series).map_err(|e| e.to_string())?;
        let want = oracle_theil_sen(&pts);
        worst[3] = worst[3].max((got - want).abs());
        ensure(close(got, want, 1e-12), || format!("theil-sen instance {i}: {got} vs oracle {want}"))?;
    }
    Ok(format!(
        "{n} instances each; max |diff| dsc {:.1e}, hd95 {:.1e}, kl {:.1e}, theil-sen {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

// ---------------------------------------------------------------- gradients

type LossFn<'a> = &'a dyn Fn(&[Tensor]) -> xmodseg::Result<Tensor>;

fn values(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

fn eval(f: LossFn, xs: &[Tensor]) -> Result<f64, String> {
    let v = f(xs).map_err(|e| e.to_string())?;
    v.to_scalar::<f64>().map_err(|e| e.to_string())
}

/// Relative error `|g - g_fd| / max(|g|, |g_fd|)` (Euclidean norms over
/// every input element) between autodiff and central differences, `h = 1e-5`.
pub fn finite_difference_error(f: LossFn, inputs: &[Tensor]) -> Result<f64, String> {
    let vars: Vec<Var> = inputs.iter().map(|t| Var::from_tensor(t).unwrap()).collect();
    let xs: Vec<Tensor> = vars.iter().map(|v| v.as_tensor().clone()).collect();
    let loss = f(&xs).map_err(|e| e.to_string())?;
    let grads = loss.backward().map_err(|e| e.to_string())?;
    let h = 1e-5;
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(var).map(values).unwrap_or_else(|| vec![0.0; inputs[k].elem_count()]);
        let base = values(&inputs[k]);
        for j in 0..base.len() {
            let probe = |delta: f64| -> Result<f64, String> {
                let mut v = base.clone();
                v[j] += delta;
                let mut xs = inputs.to_vec();
                xs[k] = Tensor::from_vec(v, inputs[k].shape(), &Device::Cpu).unwrap();
                eval(f, &xs)
            };
            let numeric = (probe(h)? - probe(-h)?) / (2.0 * h);
            diff += (analytic[j] - numeric).powi(2);
            na += analytic[j].powi(2);
            nn += numeric.powi(2);
        }
    }
    let scale = na.sqrt().max(nn.sqrt());
    if scale == 0.0 {
        return Err("gradient is identically zero".into());
    }
    Ok(diff.sqrt() / scale)
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| r.random_range(lo..hi)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

// Reconstruction kept at least 0.05 away from the target so no element
// sits on the kink of |x|.
fn offset_from(r: &mut ChaCha8Rng, x: &Tensor) -> Tensor {
    let v: Vec<f64> = values(x)
        .into_iter()
        .map(|x| {
            let d = r.random_range(0.05..0.5);
            if r.random_bool(0.5) {
                x + d
            } else {
                x - d
            }
        })
        .collect();
    Tensor::from_vec(v, x.shape(), &Device::Cpu).unwrap()
}

fn binary(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| if r.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

/// Finite-difference checks of every translation loss term, the weighted
/// total and the segmentation Dice loss. Returns `(name, rel err)` pairs.
pub fn gradient_errors(seed: u64) -> Result<Vec<(&'static str, f64)>, String> {
    let mut r = rng(seed);
    let patch = [1, 1, 3, 3];
    let img = [1, 1, 4, 4];
    let feat = [1, 2, 3, 3];
    let d_real = uniform(&mut r, &patch, 0.05, 0.95);
    let d_fake = uniform(&mut r, &patch, 0.05, 0.95);
    let x_a = uniform(&mut r, &img, -1.0, 1.0);
    let x_b = uniform(&mut r, &img, -1.0, 1.0);
    let rec_a = offset_from(&mut r, &x_a);
    let rec_b = offset_from(&mut r, &x_b);
    let f_src = uniform(&mut r, &feat, -1.0, 1.0);
    let f_pse = uniform(&mut r, &feat, -1.0, 1.0);
    let p_src = uniform(&mut r, &img, 0.02, 0.98);
    let p_pse = uniform(&mut r, &img, 0.02, 0.98);
    let y = binary(&mut r, &img);
    let w = LossWeights::default();

    let mut out = Vec::new();
    out.push((
        "adversarial_loss",
        finite_difference_error(&|x| adversarial_loss(&x[0], &x[1]), &[d_real.clone(), d_fake.clone()])?,
    ));
    out.push((
        "generator_adversarial_loss",
        finite_difference_error(&|x| generator_adversarial_loss(&x[0]), &[d_fake.clone()])?,
    ));
    out.push((
        "cycle_loss",
        finite_difference_error(
            &|x| cycle_loss(&x[0], &x[1], &x[2], &x[3]),
            &[x_a.clone(), rec_a.clone(), x_b.clone(), rec_b.clone()],
        )?,
    ));
    out.push((
        "tumor_shape_loss",
        finite_difference_error(&|x| tumor_shape_loss(&x[0], &x[1]), &[f_src.clone(), f_pse.clone()])?,
    ));
    let yy = y.clone();
    out.push((
        "tumor_location_loss",
        finite_difference_error(&|x| tumor_location_loss(&x[0], &x[1], &yy), &[p_src.clone(), p_pse.clone()])?,
    ));
    let yy = y.clone();
    let total = move |x: &[Tensor]| -> xmodseg::Result<Tensor> {
        let adv = generator_adversarial_loss(&x[0])?;
        let cyc = cycle_loss(&x[1], &x[2], &x[3], &x[4])?;
        let shape = tumor_shape_loss(&x[5], &x[6])?;
        let loc = tumor_location_loss(&x[7], &x[8], &yy)?;
        total_loss_tensor(&adv, &cyc, &shape, &loc, &w)
    };
    out.push((
        "total_loss",
        finite_difference_error(&total, &[d_fake, x_a, rec_a, x_b, rec_b, f_src, f_pse, p_src.clone(), p_pse])?,
    ));
    let yy = y.clone();
    out.push(("dice_loss", finite_difference_error(&|x| dice_loss(&x[0], &yy), &[p_src])?));
    Ok(out)
}

pub fn gradient_suite(seed: u64) -> Suite {
    let errs = gradient_errors(seed)?;
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    for (name, e) in &errs {
        ensure(*e < 1e-4, || format!("{name}: relative error {e:.2e} >= 1e-4"))?;
    }
    Ok(format!("{} losses, worst relative error {worst:.2e}", errs.len()))
}

// ---------------------------------------------------------------- Algorithm 1

/// Smallest networks that still exercise every stage type.
pub fn tiny_synthesis(seed: u64) -> SynthesisConfig {
    SynthesisConfig {
        generator_base: 4,
        residual_blocks: 1,
        discriminator_widths: [4, 4, 4, 4],
        attention_widths: [4, 4, 4, 4, 4],
        steps: 1,
        augment: false,
        seed,
        ..SynthesisConfig::default()
    }
}

pub fn random_pair(seed: u64, size: usize, dtype: DType) -> TrainPair {
    let mut r = rng(seed);
    let a = Array2::from_shape_fn((size, size), |_| r.random_range(-1.0f32..1.0));
    let b = Array2::from_shape_fn((size, size), |_| r.random_range(-1.0f32..1.0));
    let mut m = random_mask(&mut r, size, size);
    m[(size / 2, size / 2)] = 1;
    TrainPair::from_arrays(&a, &m, &b, dtype).unwrap()
}

struct Prints {
    g: Vec<u64>,
    d: Vec<u64>,
    t: Vec<u64>,
}

fn prints(s: &SynthesisState) -> Prints {
    Prints {
        g: s.params_g.fingerprint(false).unwrap(),
        d: s.params_d.fingerprint(false).unwrap(),
        t: s.params_t.fingerprint(false).unwrap(),
    }
}

fn moved(before: &Prints, after: &Prints) -> [bool; 3] {
    [before.g != after.g, before.d != after.d, before.t != after.t]
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    let d = (a - b).unwrap().abs().unwrap().flatten_all().unwrap();
    d.max(0).unwrap().to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

/// Update isolation of the three sub-updates, the zero learning-rate no-op,
/// and the shared attention tail.
pub fn algorithm_suite(seed: u64) -> Suite {
    let err = |e: xmodseg::Error| e.to_string();
    let mut s = SynthesisState::new(tiny_synthesis(seed)).map_err(err)?;
    let pair = random_pair(seed, 32, s.dtype());

    let p0 = prints(&s);
    s.update_generators(&pair).map_err(err)?;
    let p1 = prints(&s);
    ensure(moved(&p0, &p1) == [true, false, false], || {
        format!("generator update moved [G, D, T] = {:?}", moved(&p0, &p1))
    })?;
    s.update_discriminators(&pair).map_err(err)?;
    let p2 = prints(&s);
    ensure(moved(&p1, &p2) == [false, true, false], || {
        format!("discriminator update moved [G, D, T] = {:?}", moved(&p1, &p2))
    })?;
    s.update_attention(&pair).map_err(err)?;
    let p3 = prints(&s);
    ensure(moved(&p2, &p3) == [false, false, true], || {
        format!("attention update moved [G, D, T] = {:?}", moved(&p2, &p3))
    })?;

    // zero learning rate after Adam has non-zero moments
    s.train_step(&pair).map_err(err)?;
    s.set_learning_rate(0.0);
    let before = prints(&s);
    s.train_step(&pair).map_err(err)?;
    let after = prints(&s);
    ensure(moved(&before, &after) == [false, false, false], || {
        format!("lr 0 step moved [G, D, T] = {:?}", moved(&before, &after))
    })?;

    // ablated weights: the attention group is never touched
    let mut cfg = tiny_synthesis(seed);
    cfg.weights = cfg.weights.without_attention();
    let mut ab = SynthesisState::new(cfg).map_err(err)?;
    let t0 = ab.params_t.fingerprint(false).map_err(err)?;
    ab.train_step(&pair).map_err(err)?;
    ensure(ab.params_t.fingerprint(false).map_err(err)? == t0, || {
        "ablated training moved the attention networks".into()
    })?;

    shared_tail_identity(&s, &pair)?;
    Ok("update isolation, lr-0 no-op and shared attention tail hold bit-exactly".into())
}

fn shared_tail_identity(s: &SynthesisState, pair: &TrainPair) -> Result<(), String> {
    let names: Vec<String> = s.params_t.params().iter().map(|p| p.name.clone()).collect();
    let shared: Vec<&String> = names.iter().filter(|n| n.starts_with("shared.")).collect();
    ensure(!shared.is_empty(), || "no shared attention parameters".into())?;
    for branch in ["source.", "pseudo."] {
        for n in &shared {
            let own = format!("{branch}{}", &n["shared.".len()..]);
            ensure(!names.contains(&own), || format!("{own} duplicates shared parameter {n}"))?;
        }
    }
    let x = &pair.a;
    let outputs = |s: &SynthesisState| {
        let a = s.attention.forward_source(x).unwrap().probability;
        let b = s.attention.forward_pseudo(x).unwrap().probability;
        (a, b)
    };
    let (src0, pse0) = outputs(s);
    let nudge = |name: &str| -> Tensor {
        let v = s.params_t.get(name).unwrap();
        let old = v.as_tensor().copy().unwrap();
        v.set(&(&old + 0.5).unwrap()).unwrap();
        old
    };
    let restore = |name: &str, old: &Tensor| s.params_t.get(name).unwrap().set(old).unwrap();

    // one tensor drives both branches
    let head_bias = shared
        .iter()
        .find(|n| n.contains("head"))
        .ok_or_else(|| "no shared head parameter".to_string())?;
    let old = nudge(head_bias);
    let (src1, pse1) = outputs(s);
    restore(head_bias, &old);
    ensure(max_abs_diff(&src0, &src1) > 0.0 && max_abs_diff(&pse0, &pse1) > 0.0, || {
        format!("nudging {head_bias} did not change both branches")
    })?;

    // branch-private parameters stay private
    let private = names
        .iter()
        .find(|n| n.starts_with("source."))
        .ok_or_else(|| "no source-branch parameters".to_string())?;
    let old = nudge(private);
    let (src2, pse2) = outputs(s);
    restore(private, &old);
    ensure(max_abs_diff(&src0, &src2) > 0.0 && max_abs_diff(&pse0, &pse2) == 0.0, || {
        format!("nudging {private} leaked into the pseudo branch")
    })?;

    // gradients of either branch reach the shared tail
    for (label, out) in [
        ("source", s.attention.forward_source(x)),
        ("pseudo", s.attention.forward_pseudo(x)),
    ] {
        let loss = out.map_err(|e| e.to_string())?.probability.sum_all().unwrap();
        let g = loss.backward().unwrap();
        let v = s.params_t.get(head_bias).unwrap();
        ensure(g.get(v).is_some(), || format!("{label} branch gradient missed {head_bias}"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- longitudinal

fn series(id: &str, src: SeriesSource, pts: Vec<(f64, f64)>) -> LongitudinalSeries {
    LongitudinalSeries::new(id, src, pts).unwrap()
}

/// Two-sided p-value of Student's t by Simpson integration of the density.
pub fn oracle_t_pvalue(t: f64, df: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let pdf = |x: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    let n = 200_000;
    let b = t.abs();
    let step = b / n as f64;
    let mut s = pdf(0.0) + pdf(b);
    for i in 1..n {
        s += pdf(i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let central = s * step / 3.0;
    (1.0 - 2.0 * central).clamp(0.0, 1.0)
}

/// Exact slope recovery on analytic series, the degenerate t-test contracts,
/// and a textbook paired comparison against an integration oracle.
pub fn longitudinal_suite(seed: u64) -> Suite {
    let mut r = rng(seed);
    let err = |e: xmodseg::Error| e.to_string();
    let mut checked = 0;
    for i in 0..100 {
        // dyadic times and integer slopes keep every pairwise slope exact
        let slope = r.random_range(-20..=20) as f64;
        let intercept = r.random_range(0..100) as f64;
        let mut t = r.random_range(0..4) as f64;
        let pts: Vec<(f64, f64)> = (0..r.random_range(3..=10))
            .map(|_| {
                t += r.random_range(1..=6) as f64 * 0.5;
                (t, intercept + slope * t)
            })
            .collect();
        let got = theil_sen_growth(&series("S", SeriesSource::Expert, pts)).map_err(err)?;
        ensure(got == slope, || format!("series {i}: recovered {got}, built with {slope}"))?;
        checked += 1;
    }

    let lin = |id: &str, src, s: f64| series(id, src, (0..5).map(|w| (w as f64, 12.0 + s * w as f64)).collect());
    let ids = ["P1", "P2", "P3"];
    let slopes = [2.0, 4.0, 8.0];
    let expert: Vec<_> = ids.iter().zip(slopes).map(|(id, s)| lin(id, SeriesSource::Expert, s)).collect();
    let alg: Vec<_> = ids.iter().zip(slopes).map(|(id, s)| lin(id, SeriesSource::Algorithm, s)).collect();
    let rep = longitudinal_report(&alg, &expert, None).map_err(err)?;
    for (g, s) in rep.subjects.iter().zip(slopes) {
        ensure(g.slope_algorithm == s && g.slope_expert == s, || {
            format!("{}: slopes {} / {} instead of {s}", g.subject_id, g.slope_algorithm, g.slope_expert)
        })?;
    }
    let same = longitudinal_report(&expert, &expert, None).map_err(err)?;
    let tt = same.ttest.ok_or("no t-test for identical inputs")?;
    ensure(tt.p == 1.0 && same.subjects.iter().all(|s| s.abs_difference == 0.0), || {
        format!("identical inputs gave p = {}", tt.p)
    })?;

    let shifted = growth_rate_ttest(&[2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0]).map_err(err)?;
    ensure(shifted.p < 1e-12, || format!("constant differences gave p = {}", shifted.p))?;

    // Cushny and Peebles hours of extra sleep, two drugs on ten patients
    let d1 = [0.7, -1.6, -0.2, -1.2, -0.1, 3.4, 3.7, 0.8, 0.0, 2.0];
    let d2 = [1.9, 0.8, 1.1, 0.1, -0.1, 4.4, 5.5, 1.6, 4.6, 3.4];
    let tt = growth_rate_ttest(&d1, &d2).map_err(err)?;
    let want = oracle_t_pvalue(tt.t, tt.df);
    ensure((tt.p - want).abs() < 1e-6, || format!("textbook pair p = {} vs oracle {want}", tt.p))?;
    ensure((tt.t + 4.0621).abs() < 1e-4, || format!("textbook pair t = {}", tt.t))?;
    Ok(format!("{checked} analytic series exact; textbook p {:.6} (oracle {want:.6})", tt.p))
}
