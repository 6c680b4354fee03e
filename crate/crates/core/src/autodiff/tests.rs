use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::signal::{self, antialias_fir, ConvMode, FirFilter, Signal, StftConfig};

fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sum(w * op(theta))` checked against central differences.
fn check_op<F>(theta: &[f64], out_len: usize, tol: f64, op: F)
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    check_op_step(theta, out_len, tol, 1e-6, op)
}

fn check_op_step<F>(theta: &[f64], out_len: usize, tol: f64, h: f64, op: F)
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let w = rand_vec(out_len, 99);
    let f = |th: &[f64], need: bool| {
        trace_scalar(th, need, |tape, p| {
            let y = op(tape, p)?;
            let shape = tape.shape(y).to_vec();
            let wv = tape.constant(Tensor::new(shape, w.clone())?);
            let prod = tape.mul(y, wv)?;
            tape.sum(prod)
        })
    };
    let idx: Vec<usize> = (0..theta.len()).collect();
    let opts = GradcheckOptions {
        step: Step::Absolute(h),
        tolerance: tol,
        zero_floor: 1e-6,
    };
    let report = gradcheck(f, theta, &idx, &opts).unwrap();
    assert!(report.passed(), "{:?}", report.checks.iter().filter(|c| !c.passed).collect::<Vec<_>>());
    assert_eq!(report.excluded().count(), 0);
}

#[test]
fn relu_subgradient_and_sqrt() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![-1.0, 1.0]));
    let y = t.relu(x).unwrap();
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0]);

    let mut t = Tape::new();
    let x = t.param(Tensor::scalar(4.0));
    let y = t.sqrt(x).unwrap();
    let g = t.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().item(), 0.25);
}

#[test]
fn sum_and_sum_of_squares() {
    let v = rand_vec(12, 1);
    let mut t = Tape::new();
    let x = t.param(Tensor::new(vec![3, 4], v.clone()).unwrap());
    let s = t.sum(x).unwrap();
    let g = t.backward(s).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|&d| d == 1.0));
    assert_eq!(g.get(x).unwrap().shape(), &[3, 4]);

    let mut t = Tape::new();
    let x = t.param(Tensor::vector(v.clone()));
    let sq = t.mul(x, x).unwrap();
    let s = t.sum(sq).unwrap();
    let g = t.backward(s).unwrap();
    for (d, x) in g.get(x).unwrap().data().iter().zip(&v) {
        assert!((d - 2.0 * x).abs() < 1e-15);
    }
}

#[test]
fn backward_contract_errors() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(t.backward(x), Err(Error::NotScalar(_))));
    let s = t.sum(x).unwrap();
    t.backward(s).unwrap();
    assert!(matches!(t.backward(s), Err(Error::TapeConsumed)));

    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[3, 2]));
    let err = t.add(a, b).unwrap_err().to_string();
    assert!(err.contains("add") && err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
    assert!(t.matmul(a, a).is_err());
}

#[test]
fn non_finite_values_abort() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::scalar(1000.0));
    assert!(matches!(t.exp(x), Err(Error::NonFinite { op: "exp", .. })));
}

#[test]
fn constants_receive_no_gradient() {
    let mut t = Tape::new();
    let c = t.constant(Tensor::vector(vec![1.0, 2.0]));
    let p = t.param(Tensor::vector(vec![3.0, 4.0]));
    let y = t.mul(c, p).unwrap();
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.len(), 1);
    assert!(g.get(c).is_none());
    assert_eq!(g.get(p).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn elementwise_primitives_match_finite_differences() {
    let x: Vec<f64> = rand_vec(10, 2).iter().map(|v| v * 0.9).collect();
    let pos: Vec<f64> = x.iter().map(|v| v.abs() + 0.5).collect();
    let other = rand_vec(10, 3);
    let tol = 1e-5;
    check_op(&x, 10, tol, |t, p| t.scale(p, -2.5));
    check_op(&x, 10, tol, |t, p| t.add_scalar(p, 3.0));
    check_op(&x, 10, tol, |t, p| t.exp(p));
    check_op(&x, 10, tol, |t, p| t.elu(p));
    check_op(&x, 10, tol, |t, p| t.relu(p));
    check_op(&x, 10, tol, |t, p| t.abs(p));
    check_op(&x, 10, tol, |t, p| t.clamp(p, -0.5, 0.5));
    check_op(&pos, 10, tol, |t, p| t.sqrt(p));
    check_op(&pos, 10, tol, |t, p| t.log_guarded(p, 1e-12));
    check_op(&pos, 10, tol, |t, p| t.pow_scalar(p, 0.3));
    let o = other.clone();
    check_op(&x, 10, tol, move |t, p| {
        let c = t.constant(Tensor::vector(o.clone()));
        let a = t.mul(p, p)?;
        let b = t.sub(a, c)?;
        t.add(b, p)
    });
    check_op(&x, 10, tol, |t, p| {
        let m = t.abs(p)?;
        t.div_guarded(p, m, 0.5)
    });
    let o = other.clone();
    check_op(&x, 10, tol, move |t, p| {
        let c = t.constant(Tensor::vector(o.clone()));
        t.minimum(p, c)
    });
    let mask: Arc<Vec<bool>> = Arc::new((0..10).map(|i| i % 3 == 0).collect());
    check_op(&x, 10, tol, move |t, p| {
        let sq = t.mul(p, p)?;
        t.select(mask.clone(), p, sq)
    });
}

#[test]
fn shape_primitives_match_finite_differences() {
    let x = rand_vec(12, 4);
    let tol = 1e-6;
    check_op(&x, 4, tol, |t, p| {
        let m = t.reshape(p, &[3, 4])?;
        t.sum_axis(m, 0)
    });
    check_op(&x, 6, tol, |t, p| {
        let m = t.reshape(p, &[2, 3, 2])?;
        t.mean_axis(m, 2)
    });
    check_op(&x, 36, tol, |t, p| t.expand_first(p, 3));
    check_op(&x, 24, tol, |t, p| t.expand_last(p, 2));
    check_op(&x, 12, tol, |t, p| {
        let m = t.reshape(p, &[3, 4])?;
        t.transpose(m)
    });
    check_op(&x, 6, tol, |t, p| {
        let m = t.reshape(p, &[3, 4])?;
        t.slice_last(m, 1, 2)
    });
    check_op(&x, 24, tol, |t, p| {
        let m = t.reshape(p, &[3, 4])?;
        t.pad_last(m, 3, 1)
    });
    check_op(&x, 6, tol, |t, p| {
        let a = t.reshape(p, &[3, 4])?;
        let b = t.constant(Tensor::new(vec![4, 2], rand_vec(8, 5))?);
        t.matmul(a, b)
    });
    check_op(&x, 6, tol, |t, p| {
        let a = t.constant(Tensor::new(vec![3, 4], rand_vec(12, 6))?);
        let b = t.reshape(p, &[4, 3])?;
        let c = t.matmul(a, b)?;
        t.slice_last(c, 0, 2)
    });
    check_op(&x, 5 * 3 * 4, tol, |t, p| {
        let m = t.reshape(p, &[4, 3])?;
        let e = t.expand_first(m, 2)?;
        let r = t.reshape(e, &[8, 3])?;
        t.segments(r, 4)
    });
}

#[test]
fn signal_primitives_match_finite_differences() {
    let x = rand_vec(300, 7);
    let tol = 1e-5;
    let k1 = Arc::new(FilterBank::new(vec![rand_vec(101, 8)], ConvMode::Same).unwrap());
    check_op(&x, 300, tol, {
        let k = k1.clone();
        move |t, p| t.conv1d_fixed(p, k.clone())
    });
    let bank = Arc::new(FilterBank::new(vec![rand_vec(80, 9), rand_vec(80, 10)], ConvMode::Full).unwrap());
    check_op(&x, 2 * 379, tol, {
        let b = bank.clone();
        move |t, p| t.conv1d_fixed(p, b.clone())
    });
    check_op(&x, 300, tol, {
        let b = bank.clone();
        move |t, p| {
            let m = t.reshape(p, &[2, 150])?;
            let y = t.conv1d_fixed(m, b.clone())?;
            t.slice_last(y, 40, 150)
        }
    });
    let aa = antialias_fir(5, 41, 44100).unwrap();
    let rf = Arc::new(RateFilter::new(&aa, 5).unwrap());
    check_op(&x, 60, tol, {
        let r = rf.clone();
        move |t, p| t.strided_conv1d(p, r.clone())
    });
    check_op(&x[..60], 300, tol, {
        let r = rf.clone();
        move |t, p| t.zero_stuff_upsample(p, r.clone(), 300)
    });
    check_op(&x[..40], 40, tol, |t, p| {
        let xs = t.reshape(p, &[10, 4])?;
        let w = t.constant(Tensor::new(vec![3, 4], rand_vec(12, 11))?);
        t.conv1d_learnable(xs, w)
    });
    check_op(&x[..12], 40, tol, |t, p| {
        let w = t.reshape(p, &[3, 4])?;
        let xs = t.constant(Tensor::new(vec![10, 4], rand_vec(40, 12))?);
        let y = t.conv1d_learnable(xs, w)?;
        t.reshape(y, &[40])
    });
}

#[test]
fn spectral_primitives_match_finite_differences() {
    let x = rand_vec(64, 13);
    let tol = 1e-5;
    check_op(&x, 2 * 33 * 2, tol, |t, p| {
        let m = t.reshape(p, &[2, 32])?;
        t.rfft(m, 64)
    });
    check_op(&x[..34], 32, tol, |t, p| {
        let z = t.reshape(p, &[17, 2])?;
        t.irfft(z, 32)
    });
    check_op(&x[..32], 16, tol, |t, p| {
        let z = t.reshape(p, &[8, 2, 2])?;
        let w = t.constant(Tensor::new(vec![8, 2, 2], rand_vec(32, 14))?);
        let m = t.complex_mul(z, w)?;
        let a = t.abs_complex_guarded(m, 0.0)?;
        t.reshape(a, &[16])
    });
    check_op(&x[..32], 16, tol, |t, p| {
        let z = t.reshape(p, &[8, 2, 2])?;
        let a = t.abs2_complex(z)?;
        t.reshape(a, &[16])
    });
    check_op(&x[..32], 32, tol, |t, p| {
        let z = t.reshape(p, &[8, 2, 2])?;
        let m = t.abs_complex_guarded(z, 0.0)?;
        let u = t.div_guarded(m, m, 1.0)?;
        let y = t.complex_scale(z, u)?;
        t.reshape(y, &[32])
    });
    let sig = rand_vec(600, 15);
    let plan = Arc::new(FramePlan::for_stft(StftConfig { win_len: 64, hop: 16, n_fft: 128 }, 600).unwrap());
    let bins = plan.frames() * plan.bins() * 2;
    check_op(&sig, bins, tol, {
        let pl = plan.clone();
        move |t, p| t.stft(p, pl.clone())
    });
    // Synthesis is linear but its edge normalization is large, so a wide
    // step keeps rounding out of the difference quotient.
    let spec = rand_vec(bins, 16);
    check_op_step(&spec, 600, tol, 0.1, {
        let pl = plan.clone();
        move |t, p| {
            let z = t.reshape(p, &[pl.frames(), pl.bins(), 2])?;
            t.istft(z, pl.clone())
        }
    });
}

#[test]
fn fused_gain_primitives_match_finite_differences() {
    let knots = Arc::new(vec![0.1, 0.3, 0.55, 0.8]);
    let j: Vec<f64> = rand_vec(12, 17).iter().map(|v| v.abs()).collect();
    let a = rand_vec(12, 18);
    let z = rand_vec(3, 19);
    let tol = 1e-5;
    check_op(&j, 12, tol, {
        let (k, a, z) = (knots.clone(), a.clone(), z.clone());
        move |t, p| {
            let jj = t.reshape(p, &[4, 3])?;
            let aa = t.constant(Tensor::new(vec![3, 4], a.clone())?);
            let zz = t.constant(Tensor::vector(z.clone()));
            let g = t.piecewise_gain(jj, aa, zz, k.clone())?;
            t.reshape(g, &[12])
        }
    });
    let theta: Vec<f64> = a.iter().chain(&z).copied().collect();
    check_op(&theta, 12, tol, {
        let (k, j) = (knots.clone(), j.clone());
        move |t, p| {
            let aa = t.slice_last(p, 0, 12)?;
            let aa = t.reshape(aa, &[3, 4])?;
            let zz = t.slice_last(p, 12, 3)?;
            let jj = t.constant(Tensor::new(vec![4, 3], j.clone())?);
            let g = t.piecewise_gain(jj, aa, zz, k.clone())?;
            t.reshape(g, &[12])
        }
    });
    let e: Vec<f64> = rand_vec(12, 20).iter().map(|v| v.abs() * 2.0 + 0.05).collect();
    check_op(&e, 12, tol, |t, p| {
        let ee = t.reshape(p, &[2, 6])?;
        let g = t.recruit_gain(ee, Arc::new(vec![0.5, 1.7]), 1e-3, 1.5)?;
        t.reshape(g, &[12])
    });
    let env: Vec<f64> = rand_vec(40, 21).iter().map(|v| v.abs()).collect();
    check_op(&env, 40, tol, |t, p| {
        let jj = t.reshape(p, &[20, 2])?;
        let s = t.attack_release(jj, 0.3, 0.05)?;
        t.reshape(s, &[40])
    });
    check_op(&e[..4], 4, tol, |t, p| {
        let h = t.reshape(p, &[4, 1])?;
        let w = t.constant(Tensor::new(vec![1, 3], vec![0.7, -1.2, 0.4])?);
        let y = t.matmul(h, w)?;
        let y = t.elu(y)?;
        let s = t.sum_axis(y, 1)?;
        t.reshape(s, &[4])
    });
}

#[test]
fn linear_map_uses_adjoint() {
    let r = Arc::new(signal::Resampler::new(44100, 10000, 441).unwrap());
    let x = rand_vec(441, 22);
    check_op(&x, r.len_out(), 1e-6, move |t, p| t.linear_map(p, r.clone()));
}

#[test]
fn quadratic_form_is_exact() {
    let n = 6;
    let a = rand_vec(n * n, 23);
    let x = rand_vec(n, 24);
    let f = |th: &[f64], need: bool| {
        trace_scalar(th, need, |t, p| {
            let col = t.reshape(p, &[n, 1])?;
            let row = t.reshape(p, &[1, n])?;
            let am = t.constant(Tensor::new(vec![n, n], a.clone())?);
            let ax = t.matmul(am, col)?;
            let q = t.matmul(row, ax)?;
            t.sum(q)
        })
    };
    let idx: Vec<usize> = (0..n).collect();
    let opts = GradcheckOptions {
        step: Step::Relative(1e-3),
        tolerance: 1e-8,
        zero_floor: 1e-12,
    };
    let report = gradcheck(f, &x, &idx, &opts).unwrap();
    assert!(report.passed(), "{}", report.max_rel_error());
    assert!(report.max_rel_error() <= 1e-8);
}

#[test]
fn breakpoint_hit_is_flagged_kink_adjacent() {
    // J sits exactly on the second knot; the slope there is ambiguous.
    let knots = Arc::new(vec![0.0, 1.0, 2.0]);
    let f = |th: &[f64], need: bool| {
        trace_scalar(th, need, |t, p| {
            let j = t.reshape(p, &[1, 1])?;
            let a = t.constant(Tensor::new(vec![1, 3], vec![2.0, -1.5, 0.5])?);
            let z = t.constant(Tensor::vector(vec![10.0]));
            let g = t.piecewise_gain(j, a, z, knots.clone())?;
            t.sum(g)
        })
    };
    let report = gradcheck(f, &[1.0], &[0], &GradcheckOptions::default()).unwrap();
    assert_eq!(report.excluded().count(), 1);
    assert!(report.passed());
}

#[test]
fn tracing_is_deterministic_and_backward_is_linear() {
    let x = rand_vec(256, 25);
    let plan = Arc::new(FramePlan::for_stft(StftConfig { win_len: 32, hop: 8, n_fft: 64 }, 256).unwrap());
    let build = |alpha: f64, beta: f64| {
        let pl = plan.clone();
        move |t: &mut Tape, p: Var| -> Result<Var> {
            let z = t.stft(p, pl.clone())?;
            let m = t.abs_complex_guarded(z, 1e-12)?;
            let f = t.sum(m)?;
            let sq = t.mul(p, p)?;
            let g = t.sum(sq)?;
            let fa = t.scale(f, alpha)?;
            let gb = t.scale(g, beta)?;
            t.add(fa, gb)
        }
    };
    let a = trace_scalar(&x, true, build(1.0, 0.0)).unwrap();
    let b = trace_scalar(&x, true, build(1.0, 0.0)).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    assert_eq!(a.gradient, b.gradient);
    let g = trace_scalar(&x, true, build(0.0, 1.0)).unwrap();
    let mix = trace_scalar(&x, true, build(0.7, -1.3)).unwrap();
    let (ga, gg, gm) = (a.gradient.unwrap(), g.gradient.unwrap(), mix.gradient.unwrap());
    for i in 0..x.len() {
        let expect = 0.7 * ga[i] - 1.3 * gg[i];
        assert!((gm[i] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }
}

#[test]
fn plan_adjoint_identities() {
    let n = 1000;
    let x = rand_vec(n, 26);
    let bank = FilterBank::new(vec![rand_vec(300, 27), rand_vec(300, 28), rand_vec(300, 29)], ConvMode::Same).unwrap();
    let y = bank.apply_fanout(&x);
    let g = rand_vec(y.len(), 30);
    assert!((dot(&y, &g) - dot(&x, &bank.adjoint_fanout(&g, n))).abs() < 1e-9 * dot(&y, &g).abs().max(1.0));

    let aa = antialias_fir(50, 1661, 44100).unwrap();
    let rf = RateFilter::new(&aa, 50).unwrap();
    let long = rand_vec(5000, 31);
    let d = rf.decimate(&long);
    let gd = rand_vec(d.len(), 32);
    assert!((dot(&d, &gd) - dot(&long, &rf.decimate_adjoint(&gd, 5000))).abs() < 1e-10);
    let u = rf.upsample(&gd, 5000);
    assert!((dot(&u, &long) - dot(&gd, &rf.upsample_adjoint(&long, gd.len()))).abs() < 1e-9);

    let plan = FramePlan::for_stft(StftConfig::COMPENSATION, n).unwrap();
    let s = plan.analysis(&x);
    let gs = rand_vec(s.len(), 33);
    assert!((dot(&s, &gs) - dot(&x, &plan.analysis_adjoint(&gs))).abs() < 1e-8);
    let r = plan.synthesis(&gs);
    assert!((dot(&r, &x) - dot(&gs, &plan.synthesis_adjoint(&x))).abs() < 1e-9);
}

#[test]
fn traced_transforms_match_signal_module() {
    let sig = Signal::new(rand_vec(2000, 34), 44100).unwrap();
    let cfg = StftConfig::SMEARING;
    let reference = signal::stft(&sig, cfg).unwrap();
    let plan = Arc::new(FramePlan::for_stft(cfg, sig.len()).unwrap());
    let mut t = Tape::new();
    let x = t.constant(Tensor::vector(sig.samples().to_vec()));
    let z = t.stft(x, plan.clone()).unwrap();
    assert_eq!(t.value(z).data(), reference.data());
    let y = t.istft(z, plan).unwrap();
    let back = signal::istft(&reference).unwrap();
    for (a, b) in t.value(y).data().iter().zip(back.samples()) {
        assert!((a - b).abs() < 1e-12);
    }

    let f = FirFilter::new(rand_vec(301, 35), 44100).unwrap();
    let conv = signal::convolve(&sig, &f, ConvMode::Same).unwrap();
    let y = t.conv1d_fixed(x, Arc::new(FilterBank::single(&f, ConvMode::Same))).unwrap();
    for (a, b) in t.value(y).data().iter().zip(conv.samples()) {
        assert!((a - b).abs() < 1e-10);
    }
}
