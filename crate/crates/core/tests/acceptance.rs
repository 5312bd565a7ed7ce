//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use softerr::campaigns::*;
use softerr::fixtures::conv_stack;
use softerr::inject::{simulate_plan, FaultPlan, FaultSpec, InjectionMode, LayerFlips};
use softerr::network::{calibrate_quantization, init_random_network, QuantTarget, WeightInit};
use softerr::report::sweep_table;
use softerr::stats::*;
use softerr::{LayerKind, LayerSpec, QuantConfig, Tensor};

type Check = (bool, String);

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn rel_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    v.sqrt() / m
}

fn variance(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let m = xs.clone().sum::<f64>() / n;
    xs.map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
}

fn c1_variance_product() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (sx, sy) = (1.5f64, 0.8f64);
    let nx = Normal::new(0.0, sx).unwrap();
    let ny = Normal::new(0.0, sy).unwrap();
    let z: Vec<f64> = (0..1_000_000).map(|_| nx.sample(&mut rng) * ny.sample(&mut rng)).collect();
    let measured = variance(z.iter().copied());
    let predicted = variance_product(sx * sx, sy * sy);
    let e = rel(measured, predicted);
    (e <= 0.02, format!("var(XY) {measured:.5} vs {predicted:.5}, rel err {e:.4}"))
}

/// Ratio of measured conv-output variance to `fan_in * var(input) * var(w)`
/// for every convolution of a random stack. Inputs of later layers are the
/// previous layer's (post-ReLU, if any) outputs; outputs are taken before
/// the ReLU.
fn stack_variance_ratios(relu: bool) -> Vec<f64> {
    let (ic, k, depth) = (32, 3, 3);
    let init = if relu { WeightInit::He } else { WeightInit::FanIn };
    let net = init_random_network::<f64>(&[ic, 12, 12], conv_stack(ic, k, depth, relu), init, 5).unwrap();
    let data = common::gaussian_dataset(&[ic, 12, 12], 1.0, 48, 6);
    let traces: Vec<_> = data.images().iter().map(|x| net.forward_full(x, false).unwrap()).collect();
    let mut ratios = Vec::new();
    for l in net.parametric_layers() {
        let var_in = if l == 0 {
            variance(data.images().iter().flat_map(|x| x.data().iter().copied()))
        } else {
            variance(traces.iter().flat_map(|t| t.layer(l - 1).unwrap().data().iter().copied()))
        };
        let var_out = variance(traces.iter().flat_map(|t| t.layer(l).unwrap().data().iter().copied()));
        let var_w = variance(net.params(l).unwrap().weights.data().iter().copied());
        let fan_in = net.layer(l).kind.fan_in().unwrap();
        ratios.push(var_out / propagate_variance(fan_in, var_in, var_w));
    }
    ratios
}

fn c2_lemmas() -> Check {
    let lin = stack_variance_ratios(false);
    let rel = stack_variance_ratios(true);
    let ok = lin.iter().all(|r| (0.9..=1.1).contains(r)) && rel.iter().all(|r| (0.5..=2.0).contains(r));
    (ok, format!("fan-in 288; linear ratios {lin:.3?}; relu ratios {rel:.3?}"))
}

fn c3_propagation() -> Check {
    let mut ok = true;
    let mut detail = Vec::new();
    for relu in [false, true] {
        let (ic, depth) = (16, 5);
        let init = if relu { WeightInit::He } else { WeightInit::FanIn };
        let float = init_random_network::<f64>(&[ic, 14, 14], conv_stack(ic, 3, depth, relu), init, 11).unwrap();
        let data = common::gaussian_dataset(&[ic, 14, 14], 1.0, 64, 12);
        let net = calibrate_quantization(&float, &data.images()[..16], 16, 100.0).unwrap();
        let convs = net.parametric_layers();
        let mut worst: f64 = 0.0;
        for &inject in &convs[..3] {
            for ber in [1e-6, 1e-5] {
                let fault = FaultSpec::new(QuantTarget::Weights, InjectionMode::RandomBit, ber, 21);
                let spec = CampaignSpec::new(fault, 24, 64);
                let r = layer_propagation_experiment(&net, &data, &spec, inject).unwrap();
                let downstream: Vec<usize> = convs.iter().copied().filter(|&l| l >= inject).collect();
                worst = worst.max(r.spread(&downstream));
                if r.per_layer[..inject].iter().any(|e| e.mean != 0.0) {
                    ok = false;
                }
            }
        }
        let limit = if relu { 3.0 } else { 2.0 };
        ok &= worst <= limit;
        detail.push(format!("{} worst max/min {worst:.3} (limit {limit})", if relu { "relu" } else { "linear" }));
    }
    (ok, detail.join("; "))
}

fn c4_sigma_delta() -> Check {
    let e8 = rel(sigma_delta(8, 1.0f64), 1.0 / 6f64.sqrt());
    let e16 = rel(sigma_delta(16, 1.0f64), 1.0 / 12f64.sqrt());
    let mut ok = e8 <= 1e-4 && e16 <= 1e-4;
    let mut detail = vec![format!("exact vs approx rel err {e8:.2e} (int8), {e16:.2e} (int16)")];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for bits in [8u32, 16] {
        let cfg = QuantConfig::new(bits, 2.0).unwrap();
        let mut acc = 0.0;
        let n = 100_000;
        for _ in 0..n {
            let word = rng.random_range(cfg.min_word()..=cfg.max_word());
            let bit = rng.random_range(0..bits);
            let d = cfg.dequantize_value(cfg.toggle(word, bit)) - cfg.dequantize_value(word);
            acc += d * d;
        }
        let rms = (acc / n as f64).sqrt();
        let e = rel(rms, sigma_delta(bits, 2.0f64));
        ok &= e <= 0.02;
        detail.push(format!("int{bits} empirical rms rel err {e:.4}"));
    }
    (ok, detail.join("; "))
}

fn rms_of_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    (s / a.len() as f64).sqrt()
}

fn c5_single_fault() -> Check {
    let (k, ic, oc, h) = (3usize, 16usize, 16usize, 32usize);
    let trials = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    // weight flip: valid convolution with default-initialized weights, inputs
    // with the same variance as the weights
    let specs = vec![LayerSpec::new(LayerKind::conv(ic, oc, k, 1, 0))];
    let float = init_random_network::<f64>(&[ic, h + 2, h + 2], specs, WeightInit::FanIn, 7).unwrap();
    let bound = float.params(0).unwrap().weights.data().iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let net = float
        .map_specs(|_, s| Ok(s.clone().with_weight_quant(QuantConfig::int8(bound)?)))
        .unwrap();
    let std_x = 1.0 / ((k * k * ic) as f64).sqrt();
    let inputs = common::gaussian_dataset(&[ic, h + 2, h + 2], std_x, 8, 8);
    let words = k * k * ic * oc;
    let mut acc = 0.0;
    for t in 0..trials {
        let x = inputs.image(t % inputs.len());
        let golden = net.forward_full(x, true).unwrap();
        let flip = (rng.random_range(0..words), rng.random_range(0..8u32));
        let plan = FaultPlan::from_flips(QuantTarget::Weights, vec![LayerFlips { layer: 0, flips: vec![flip] }]);
        let faulty = simulate_plan(&net, x, &plan).unwrap();
        acc += rms_of_diff(faulty.final_output(), golden.final_output()).powi(2);
    }
    let measured_w = (acc / trials as f64).sqrt();
    let predicted_w = predict_rmse_weight_fault(k, ic, oc, sigma_delta(8, bound));
    let ew = rel(measured_w, predicted_w);

    // activation flip: a stored feature map (identity pooling) feeding a
    // same-padded convolution
    let act_bound = 4.0;
    let specs = vec![
        LayerSpec::new(LayerKind::AvgPool { window: 1 }).with_activation_quant(QuantConfig::int8(act_bound).unwrap()),
        LayerSpec::new(LayerKind::conv(ic, oc, k, 1, 1)),
    ];
    let net = init_random_network::<f64>(&[ic, h, h], specs, WeightInit::FanIn, 9).unwrap();
    let inputs = common::gaussian_dataset(&[ic, h, h], 1.0, 8, 10);
    let words = ic * h * h;
    let mut acc = 0.0;
    for t in 0..trials {
        let x = inputs.image(t % inputs.len());
        let golden = net.forward_full(x, true).unwrap();
        let flip = (rng.random_range(0..words), rng.random_range(0..8u32));
        let plan = FaultPlan::from_flips(QuantTarget::Activations, vec![LayerFlips { layer: 0, flips: vec![flip] }]);
        let faulty = simulate_plan(&net, x, &plan).unwrap();
        acc += rms_of_diff(faulty.final_output(), golden.final_output()).powi(2);
    }
    let measured_a = (acc / trials as f64).sqrt();
    let predicted_a = predict_rmse_activation_fault(h, ic, sigma_delta(8, act_bound));
    let ea = rel(measured_a, predicted_a);
    (
        ew <= 0.25 && ea <= 0.25,
        format!(
            "weight {measured_w:.3e} vs {predicted_w:.3e} (rel err {ew:.3}); activation {measured_a:.3e} vs {predicted_a:.3e} (rel err {ea:.3})"
        ),
    )
}

fn c6_aggregation() -> Check {
    let net = common::lenet();
    let data = common::test_set();
    let session = Session::new(net, data).unwrap();
    let fault = FaultSpec::new(QuantTarget::Weights, InjectionMode::RandomBit, 0.0, 6);
    let spec = CampaignSpec::new(fault, 1, 300);
    let r = aggregation_validation(&session, &spec, &[1e-3, 3e-3, 1e-2], 32).unwrap();
    let worst = r.combos.iter().map(|c| c.relative_error).fold(0.0, f64::max);
    (
        r.combos.len() == 32 && r.mean_relative_error <= 0.15,
        format!("{} combos, mean rel err {:.4}, worst {worst:.4}", r.combos.len(), r.mean_relative_error),
    )
}

fn c7_msb_scaling() -> Check {
    let data = common::test_set();
    let mut ok = true;
    let mut detail = Vec::new();
    for bits in [8u32, 16] {
        let net = common::lenet().with_quant(QuantTarget::Weights, Some(bits), None).unwrap();
        let session = Session::new(&net, data).unwrap();
        let p = 1e-4 * 8.0 / bits as f64;
        let random = FaultSpec::new(QuantTarget::Weights, InjectionMode::RandomBit, p, 7);
        // same expected flip count: one MSB per word at rate bits * p
        let msb = FaultSpec { mode: InjectionMode::MsbOnly, rate: p * bits as f64, ..random.clone() };
        let r = session.measure(&CampaignSpec::new(random, 1, 500)).unwrap();
        let m = session.measure(&CampaignSpec::new(msb, 1, 500)).unwrap();
        let ratio = m.rrmse.mean / r.rrmse.mean;
        let expected = if bits == 8 { 6f64.sqrt() } else { 12f64.sqrt() };
        let e = rel(ratio, expected);
        ok &= e <= 0.10;
        detail.push(format!("int{bits} ratio {ratio:.3} vs {expected:.3} (flips {} / {}, rel err {e:.3})", m.flips, r.flips));
    }
    (ok, detail.join("; "))
}

fn c8_bounds_and_bitwidth() -> Check {
    let net = common::lenet();
    let data = common::test_set();
    let fault = FaultSpec::new(QuantTarget::Weights, InjectionMode::RandomBit, 2e-5, 8);
    let spec = CampaignSpec::new(fault, 1, 500);
    let b = bound_sweep(net, data, &spec, 16, &[1.0, 2.0, 4.0, 8.0]).unwrap();
    let rr: Vec<String> = b.rows.iter().map(|r| format!("{:.4}", r.rrmse.mean)).collect();
    let spec = CampaignSpec::new(FaultSpec { rate: 1e-3, ..spec.fault.clone() }, 1, 500);
    let w = bitwidth_comparison(net, data, &spec, None).unwrap();
    let d = w.relative_difference();
    (
        b.r_squared >= 0.95 && d <= 0.15,
        format!(
            "bounds 1,2,4,8 rrmse [{}] R2 {:.4}; int8 {:.4} vs int16 {:.4} rel diff {d:.3}",
            rr.join(", "),
            b.r_squared,
            w.rrmse_int8.mean,
            w.rrmse_int16.mean
        ),
    )
}

fn c9_accuracy_models() -> Check {
    let b = binary_accuracy(1.0f64).unwrap();
    // trapezoid erf(1) oracle
    let n = 200_000;
    let h = 1.0 / n as f64;
    let erf1: f64 = (0..=n)
        .map(|i| {
            let t = i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * (-t * t).exp()
        })
        .sum::<f64>()
        * h
        * 2.0
        / std::f64::consts::PI.sqrt();
    let oracle = 0.5 * erf1 + 0.5;
    let mut ok = (b - 0.92135).abs() <= 1e-4 && (b - oracle).abs() <= 1e-4;
    let mut detail = vec![format!("binary(1) {b:.6} (oracle {oracle:.6})")];
    for nc in [2usize, 5, 10] {
        let lo = multiclass_accuracy(1e-6f64, nc).unwrap();
        let hi = multiclass_accuracy(1e6f64, nc).unwrap();
        ok &= (lo - 1.0).abs() <= 1e-3 && (hi - 1.0 / nc as f64).abs() <= 1e-3;
    }
    let session = Session::new(common::lenet(), common::test_set()).unwrap();
    let bers: Vec<f64> = (0..8).map(|i| 1e-3 * 10f64.powf(i as f64 / 3.5)).collect();
    let fault = FaultSpec::new(QuantTarget::Weights, InjectionMode::RandomBit, 0.0, 9);
    let spec = CampaignSpec::new(fault, 1, 300).with_bers(bers.clone());
    let rows = class_subset_experiment(&session, &spec, &[2, 5, 10]).unwrap();
    let mut violations = 0;
    for chunk in rows.chunks(3) {
        if !(chunk[0].accuracy.mean >= chunk[1].accuracy.mean && chunk[1].accuracy.mean >= chunk[2].accuracy.mean) {
            violations += 1;
        }
    }
    let last = &rows[rows.len() - 3..];
    ok &= violations == 0;
    detail.push(format!(
        "multiclass limits ok; class monotonicity violations {violations}/{} (at BER {:.0e}: nc2 {:.3}, nc5 {:.3}, nc10 {:.3})",
        bers.len(),
        last[0].ber,
        last[0].accuracy.mean,
        last[1].accuracy.mean,
        last[2].accuracy.mean
    ));
    (ok, detail.join("; "))
}

fn c10_accelerated_sweep() -> Check {
    let session = Session::new(common::lenet(), common::test_set()).unwrap();
    let (lo, hi): (f64, f64) = (1e-3, 5e-2);
    let bers: Vec<f64> = (0..16).map(|i| lo * (hi / lo).powf(i as f64 / 15.0)).collect();
    let fault = FaultSpec::new(QuantTarget::Weights, InjectionMode::RandomBit, 0.0, 10);
    let spec = CampaignSpec::new(fault, 1, 1000).with_bers(bers);
    let standard = ber_sweep_standard(&session, &spec).unwrap();
    let opts = AcceleratedOptions { images: Some(80), ..AcceleratedOptions::default() };
    let accel = ber_sweep_accelerated(&session, &spec, &opts).unwrap();
    let mae = standard.rows.iter().zip(&accel.rows).map(|(s, a)| (s.accuracy - a.accuracy).abs()).sum::<f64>()
        / standard.rows.len() as f64;
    let ratio = standard.faulty_inferences as f64 / accel.faulty_inferences as f64;
    (
        mae <= 0.05 && ratio >= 50.0,
        format!(
            "16-point MAE {mae:.4}; faulty inferences {} vs {} ({ratio:.1}x)",
            standard.faulty_inferences, accel.faulty_inferences
        ),
    )
}

fn c11_fragile_layers() -> Check {
    let k = 3;
    let fault = FaultSpec::new(QuantTarget::Activations, InjectionMode::RandomBit, 1e-2, 11);
    let session = Session::new(common::lenet(), common::test_set()).unwrap();
    let brute = fragile_layers_bruteforce(&session, &CampaignSpec::new(fault.clone(), 1, 1000), k).unwrap();
    let accel = fragile_layers_accelerated(&session, &CampaignSpec::new(fault.clone(), 1, 70), k).unwrap();
    let best = brute.ranked[0].score;
    let accel_acc = brute.ranked.iter().find(|s| s.protected == accel.chosen).unwrap().score;
    let matched = accel.chosen == brute.chosen || best - accel_acc <= 0.01;

    let session = Session::new(common::deep8(), common::test_set()).unwrap();
    let brute8 = fragile_layers_bruteforce(&session, &CampaignSpec::new(fault.clone(), 1, 280), k).unwrap();
    let accel8 = fragile_layers_accelerated(&session, &CampaignSpec::new(fault, 1, 39), k).unwrap();
    let ratio = brute8.faulty_inferences as f64 / accel8.faulty_inferences as f64;
    let best8 = brute8.ranked[0].score;
    let accel8_acc = brute8.ranked.iter().find(|s| s.protected == accel8.chosen).unwrap().score;
    (
        matched && ratio >= 50.0,
        format!(
            "{}-layer: brute {:?} ({best:.3}) accel {:?} ({accel_acc:.3}); {}-layer: {} subsets, {} vs {} faulty inferences ({ratio:.1}x), brute {:?} ({best8:.3}) accel {:?} ({accel8_acc:.3})",
            brute.layers.len(),
            brute.chosen,
            accel.chosen,
            brute8.layers.len(),
            brute8.ranked.len(),
            brute8.faulty_inferences,
            accel8.faulty_inferences,
            brute8.chosen,
            accel8.chosen
        ),
    )
}

fn c12_convergence() -> Check {
    let session = Session::new(common::lenet(), common::test_set()).unwrap();
    let (mut r, mut a) = (Vec::new(), Vec::new());
    for seed in 1..=8 {
        let fault = FaultSpec::new(QuantTarget::Weights, InjectionMode::RandomBit, 3e-2, seed);
        let m = session.measure(&CampaignSpec::new(fault, 1, 100)).unwrap();
        r.push(m.rrmse.mean);
        a.push(m.accuracy.mean);
    }
    let (sr, sa) = (rel_std(&r), rel_std(&a));
    (sr < sa, format!("8 seeds at 100 images: rrmse rel std {sr:.4}, accuracy rel std {sa:.4}"))
}

fn c13_reproducibility() -> Check {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let session = Session::new(common::lenet(), common::test_set()).unwrap();
            let fault = FaultSpec::new(QuantTarget::Activations, InjectionMode::RandomBit, 0.0, 13);
            let spec = CampaignSpec::new(fault, 2, 100).with_bers(vec![0.0, 1e-3, 4e-3, 1.6e-2]);
            let s = ber_sweep_standard(&session, &spec).unwrap();
            let a = ber_sweep_accelerated(&session, &spec, &AcceleratedOptions::default()).unwrap();
            let agg = aggregation_validation(&session, &spec.with_rate(0.0), &[1e-3, 1e-2], 4).unwrap();
            let mut out = sweep_table(&s.rows).render();
            out += &sweep_table(&a.anchors).render();
            out += &sweep_table(&a.rows).render();
            for c in &agg.combos {
                out += &format!("{:?},{},{}\n", c.layers, c.measured.mean, c.predicted);
            }
            out
        })
    };
    let one = run(1);
    let many = run(3);
    (one == many, format!("{} bytes, 1 vs 3 workers identical: {}", one.len(), one == many))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Check); 13] = [
        ("variance product rule", c1_variance_product),
        ("variance propagation through conv stacks", c2_lemmas),
        ("layer-to-layer RRMSE propagation", c3_propagation),
        ("per-flip disturbance", c4_sigma_delta),
        ("single-fault output RMSE", c5_single_fault),
        ("RRMSE aggregation across layers", c6_aggregation),
        ("MSB injection scaling", c7_msb_scaling),
        ("bound linearity and bitwidth invariance", c8_bounds_and_bitwidth),
        ("accuracy models", c9_accuracy_models),
        ("accelerated BER sweep", c10_accelerated_sweep),
        ("fragile-layer selection", c11_fragile_layers),
        ("RRMSE converges faster than accuracy", c12_convergence),
        ("reproducible across worker counts", c13_reproducibility),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = std::time::Instant::now();
        let (ok, detail) = check();
        println!(
            "{} criterion {:>2} {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            t.elapsed().as_secs_f64()
        );
        if !ok {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
