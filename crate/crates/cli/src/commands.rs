use std::path::Path;
use std::str::FromStr;

use serde_json::{json, Value};
use softerr::campaigns::*;
use softerr::fixtures::{build_fixture, deep8_recipe, lenet_recipe, synthetic_dataset, synthetic_digits, TEST_SEED};
use softerr::inject::{faulty_forward, injectable_layers, FaultSpec, InjectionMode, LayerSelector};
use softerr::model_io::{evaluate_accuracy, load_idx_dataset, load_network, network_checksum, save_network, write_idx_pair, Dataset};
use softerr::network::QuantTarget;
use softerr::report::{sweep_table, Cell, CsvTable, Provenance};
use softerr::stats::*;
use softerr::Network32;

use crate::{
    Cli, Command, DataArgs, DiagnoseWhat, FaultArgs, Failure, Fixture, FragileMode, GridArgs, Injection, ModelMath,
    Sampling, SweepMode, Target,
};

type Res<T> = Result<T, Failure>;

fn config(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Res<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|_| config(format!("--{what}: cannot parse {t:?}"))))
        .collect()
}

fn require<T: Copy>(v: Option<T>, flag: &str) -> Res<T> {
    v.ok_or_else(|| config(format!("--{flag} is required")))
}

fn grid(g: &GridArgs) -> Res<Vec<f64>> {
    match (&g.bers, g.ber_min, g.ber_max) {
        (Some(list), None, None) => parse_list(list, "bers"),
        (None, Some(lo), Some(hi)) => {
            if !(lo > 0.0 && hi >= lo) || g.ber_points == 0 {
                return Err(config("log grid needs 0 < ber-min <= ber-max and ber-points >= 1"));
            }
            if g.ber_points == 1 {
                return Ok(vec![lo]);
            }
            let n = g.ber_points - 1;
            Ok((0..=n).map(|i| lo * (hi / lo).powf(i as f64 / n as f64)).collect())
        }
        (None, None, None) => Err(config("give --bers or --ber-min and --ber-max")),
        _ => Err(config("--bers cannot be combined with --ber-min/--ber-max; ber-min and ber-max go together")),
    }
}

fn fault_spec(f: &FaultArgs, rate: f64) -> Res<FaultSpec> {
    let target = match f.target {
        Target::Weights => QuantTarget::Weights,
        Target::Activations => QuantTarget::Activations,
    };
    let mode = match f.injection {
        Injection::RandomBit => InjectionMode::RandomBit,
        Injection::MsbOnly => InjectionMode::MsbOnly,
    };
    let mut spec = FaultSpec::new(target, mode, rate, f.seed);
    if let Some(l) = &f.layers {
        spec = spec.with_layers(LayerSelector::only(parse_list::<usize>(l, "layers")?));
    }
    Ok(spec)
}

fn campaign(f: &FaultArgs, rate: f64) -> Res<CampaignSpec> {
    let sampling = match f.sampling {
        Sampling::Multi => ImageSampling::Multi,
        Sampling::Single => ImageSampling::Single,
    };
    Ok(CampaignSpec::new(fault_spec(f, rate)?, f.trials, f.images).with_sampling(sampling))
}

/// Validates a spec against the network before any simulation starts, so
/// that bad parameters surface as configuration errors.
fn checked(spec: CampaignSpec, net: &Network32, data: &Dataset<f32>) -> Res<CampaignSpec> {
    spec.validate().map_err(|e| config(e.to_string()))?;
    spec.fault.resolve(net).map_err(|e| config(e.to_string()))?;
    if spec.sampling == ImageSampling::Multi && spec.images > data.len() {
        return Err(config(format!("--images {} exceeds the {} samples available", spec.images, data.len())));
    }
    Ok(spec)
}

struct Loaded {
    net: Network32,
    data: Dataset<f32>,
}

fn load(d: &DataArgs, prov: &mut Provenance) -> Res<Loaded> {
    let path = d.model.as_ref().ok_or_else(|| config("--model is required"))?;
    let net: Network32 = load_network(path)?;
    let data = match (&d.images_file, &d.labels_file) {
        (Some(i), Some(l)) => load_idx_dataset(i, l)?,
        (None, None) => {
            if d.test_size == 0 {
                return Err(config("--test-size must be at least 1"));
            }
            synthetic_dataset(d.test_size, TEST_SEED)?
        }
        _ => return Err(config("--images-file and --labels-file go together")),
    };
    if data.image_shape() != net.input_shape() {
        return Err(config(format!(
            "dataset images are {:?}, model expects {:?}",
            data.image_shape(),
            net.input_shape()
        )));
    }
    prov.push("model_sha256", network_checksum(&net));
    prov.push("dataset_sha256", data.checksum());
    prov.push("dataset_size", data.len());
    Ok(Loaded { net, data })
}

fn write_csv(out: &Path, name: &str, table: &CsvTable, files: &mut Vec<String>) -> Res<()> {
    let path = out.join(name);
    table.write(&path)?;
    files.push(path.display().to_string());
    Ok(())
}

/// Resolved arguments of the subcommand, in declaration order.
fn record_args(prov: &mut Provenance, matches: &clap::ArgMatches) {
    let Some((name, sub)) = matches.subcommand() else { return };
    prov.push("command", name);
    let mut cmd = <Cli as clap::CommandFactory>::command();
    cmd.build();
    let Some(def) = cmd.find_subcommand(name) else { return };
    for arg in def.get_arguments() {
        let id = arg.get_id().as_str();
        let Ok(Some(raw)) = sub.try_get_raw(id) else { continue };
        let value: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
        let source = match sub.value_source(id) {
            Some(clap::parser::ValueSource::DefaultValue) => "default",
            Some(clap::parser::ValueSource::EnvVariable) => "env",
            _ => "given",
        };
        prov.push(&format!("arg.{}", id.replace('_', "-")), format!("{} ({source})", value.join(",")));
    }
}

pub fn run(cli: &Cli, matches: &clap::ArgMatches) -> Res<Value> {
    let out = cli.out.as_path();
    std::fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    let mut prov = Provenance::new();
    prov.push("tool", concat!("softerr ", env!("CARGO_PKG_VERSION")));
    record_args(&mut prov, matches);
    if let Some(c) = &cli.config {
        prov.push("config_file", c.display());
    }
    prov.push("threads", format!("{} (does not affect results)", rayon::current_num_threads()));
    let mut files = Vec::new();

    let mut summary = match &cli.command {
        Command::TrainFixture(a) => {
            let mut recipe = match a.fixture {
                Fixture::Lenet5 => lenet_recipe(),
                Fixture::Deep8 => deep8_recipe(),
            };
            if a.bits != 8 && a.bits != 16 {
                return Err(config("--bits must be 8 or 16"));
            }
            recipe.bits = a.bits;
            if let Some(n) = a.train_images {
                recipe.train_images = n;
            }
            if let Some(e) = a.epochs {
                recipe.train.epochs = e;
            }
            if let Some(s) = a.train_seed {
                recipe.train.seed = s;
            }
            let net = build_fixture(&recipe)?;
            let path = a.model_out.clone().unwrap_or_else(|| out.join(format!("{}.model", recipe.name)));
            let sha = save_network(&net, &path)?;
            let test: Dataset<f32> = synthetic_dataset(1000, TEST_SEED)?;
            let acc_f = evaluate_accuracy(&net, &test, false)?;
            let acc_q = evaluate_accuracy(&net, &test, true)?;
            prov.push("model_sha256", &sha);
            prov.push("train_data_seed", recipe.data_seed);
            prov.push("train_seed", recipe.train.seed);
            files.push(path.display().to_string());
            json!({ "model": path.display().to_string(), "sha256": sha, "float_accuracy": acc_f, "quantized_accuracy": acc_q })
        }
        Command::MakeDataset(a) => {
            if a.count == 0 {
                return Err(config("--count must be at least 1"));
            }
            let (pixels, labels) = synthetic_digits(a.count, a.data_seed);
            let (ip, lp) = (out.join("images.idx"), out.join("labels.idx"));
            write_idx_pair(&ip, &lp, softerr::fixtures::DIGIT_SIDE, softerr::fixtures::DIGIT_SIDE, &pixels, &labels)?;
            files.push(ip.display().to_string());
            files.push(lp.display().to_string());
            json!({ "count": a.count })
        }
        Command::Simulate(a) => {
            let ld = load(&a.data, &mut prov)?;
            let spec = checked(campaign(&a.fault, require(a.ber, "ber")?)?, &ld.net, &ld.data)?;
            let session = Session::new(&ld.net, &ld.data)?;
            let clean = session.clean_accuracy_of(&spec)?;
            let m = session.measure(&spec)?;
            let mut t = CsvTable::new(&[
                "ber", "mode", "target", "trials", "images", "inferences", "flips_total", "rrmse_mean", "rrmse_stderr",
                "accuracy", "accuracy_stderr", "clean_accuracy", "seed",
            ]);
            t.push(vec![
                spec.fault.rate.into(),
                spec.fault.mode.tag().into(),
                spec.fault.target.tag().into(),
                spec.trials.into(),
                (m.inferences / spec.trials).into(),
                m.inferences.into(),
                m.flips.into(),
                m.rrmse.mean.into(),
                m.rrmse.stderr.into(),
                m.accuracy.mean.into(),
                m.accuracy.stderr.into(),
                clean.into(),
                spec.fault.seed.into(),
            ])?;
            write_csv(out, "simulate.csv", &t, &mut files)?;
            let mut c = CsvTable::new(&["images", "rrmse", "accuracy"]);
            for p in &m.trace.points {
                c.push(vec![p.images.into(), p.rrmse.into(), p.accuracy.into()])?;
            }
            write_csv(out, "convergence.csv", &c, &mut files)?;
            prov.push("faulty_inferences", m.inferences);
            prov.push("flips_total", m.flips);
            json!({
                "rrmse": m.rrmse.mean, "rrmse_stderr": m.rrmse.stderr,
                "accuracy": m.accuracy.mean, "accuracy_stderr": m.accuracy.stderr,
                "clean_accuracy": clean, "inferences": m.inferences, "flips": m.flips,
            })
        }
        Command::Sweep(a) => {
            let bers = grid(&a.grid)?;
            if bers.is_empty() {
                write_csv(out, "sweep.csv", &sweep_table(&[]), &mut files)?;
                json!({ "rows": 0 })
            } else {
                let ld = load(&a.data, &mut prov)?;
                let spec = checked(campaign(&a.fault, 0.0)?.with_bers(bers), &ld.net, &ld.data)?;
                let session = Session::new(&ld.net, &ld.data)?;
                let r = match a.mode {
                    SweepMode::Standard => ber_sweep_standard(&session, &spec)?,
                    SweepMode::Accelerated => {
                        let opts = AcceleratedOptions { anchor_count: a.anchors, images: a.anchor_images, trials: a.anchor_trials };
                        ber_sweep_accelerated(&session, &spec, &opts)?
                    }
                };
                write_csv(out, "sweep.csv", &sweep_table(&r.rows), &mut files)?;
                let mut s = json!({
                    "rows": r.rows.len(), "faulty_inferences": r.faulty_inferences, "clean_accuracy": r.clean_accuracy,
                });
                if let Some(m) = &r.model {
                    write_csv(out, "anchors.csv", &sweep_table(&r.anchors), &mut files)?;
                    prov.push("fit_m", m.m);
                    prov.push("fit_s", m.s);
                    s["fit"] = json!({ "m": m.m, "s": m.s, "residual": r.fit_residual });
                }
                prov.push("faulty_inferences", r.faulty_inferences);
                s
            }
        }
        Command::Propagate(a) => {
            let ld = load(&a.data, &mut prov)?;
            let inject = require(a.inject_layer, "inject-layer")?;
            let spec = campaign(&a.fault, require(a.ber, "ber")?)?;
            let mut probe = spec.clone();
            probe.fault.layers = LayerSelector::only([inject]);
            checked(probe, &ld.net, &ld.data)?;
            let r = layer_propagation_experiment(&ld.net, &ld.data, &spec, inject)?;
            let mut t = CsvTable::new(&["layer", "kind", "rrmse_mean", "rrmse_stderr"]);
            for (l, e) in r.per_layer.iter().enumerate() {
                t.push(vec![l.into(), ld.net.layer(l).kind.tag().into(), e.mean.into(), e.stderr.into()])?;
            }
            write_csv(out, "propagate.csv", &t, &mut files)?;
            let downstream: Vec<usize> = ld.net.parametric_layers().into_iter().filter(|&l| l >= inject).collect();
            prov.push("faulty_inferences", r.inferences);
            prov.push("flips_total", r.flips);
            let spread = if downstream.is_empty() { Value::Null } else { json!(r.spread(&downstream)) };
            json!({ "inject_layer": inject, "downstream_spread": spread, "inferences": r.inferences, "flips": r.flips })
        }
        Command::AggregateValidate(a) => {
            let ld = load(&a.data, &mut prov)?;
            let levels: Vec<f64> = parse_list(&a.levels, "levels")?;
            let spec = checked(campaign(&a.fault, levels.first().copied().unwrap_or(0.0))?, &ld.net, &ld.data)?;
            let session = Session::new(&ld.net, &ld.data)?;
            let r = aggregation_validation(&session, &spec, &levels, a.combos)?;
            let mut s = CsvTable::new(&["layer", "ber", "rrmse_mean", "rrmse_stderr"]);
            for row in &r.singles {
                s.push(vec![row.layer.into(), row.ber.into(), row.rrmse.mean.into(), row.rrmse.stderr.into()])?;
            }
            write_csv(out, "aggregate_singles.csv", &s, &mut files)?;
            let mut c = CsvTable::new(&["combo", "layers", "bers", "measured", "measured_stderr", "predicted", "relative_error"]);
            for (i, row) in r.combos.iter().enumerate() {
                let layers: Vec<String> = row.layers.iter().map(|p| p.0.to_string()).collect();
                let bers: Vec<String> = row.layers.iter().map(|p| softerr::report::fmt_g9(p.1)).collect();
                c.push(vec![
                    i.into(),
                    layers.join(";").into(),
                    bers.join(";").into(),
                    row.measured.mean.into(),
                    row.measured.stderr.into(),
                    row.predicted.into(),
                    row.relative_error.into(),
                ])?;
            }
            write_csv(out, "aggregate_combos.csv", &c, &mut files)?;
            prov.push("faulty_inferences", r.faulty_inferences);
            json!({ "combos": r.combos.len(), "mean_relative_error": r.mean_relative_error, "faulty_inferences": r.faulty_inferences })
        }
        Command::BoundSweep(a) => {
            let ld = load(&a.data, &mut prov)?;
            let bounds: Vec<f64> = parse_list(&a.bounds, "bounds")?;
            let spec = checked(campaign(&a.fault, require(a.ber, "ber")?)?, &ld.net, &ld.data)?;
            let r = bound_sweep(&ld.net, &ld.data, &spec, a.bits, &bounds)?;
            let mut t = CsvTable::new(&["bound", "bits", "rrmse_mean", "rrmse_stderr", "clean_accuracy", "flips_total"]);
            for row in &r.rows {
                t.push(vec![
                    row.bound.into(),
                    (a.bits as usize).into(),
                    row.rrmse.mean.into(),
                    row.rrmse.stderr.into(),
                    row.clean_accuracy.into(),
                    row.flips.into(),
                ])?;
            }
            write_csv(out, "bound_sweep.csv", &t, &mut files)?;
            json!({ "r_squared": r.r_squared, "slope": r.slope, "intercept": r.intercept })
        }
        Command::BitwidthCompare(a) => {
            let ld = load(&a.data, &mut prov)?;
            let spec = checked(campaign(&a.fault, require(a.ber, "ber")?)?, &ld.net, &ld.data)?;
            let r = bitwidth_comparison(&ld.net, &ld.data, &spec, a.bound)?;
            let mut t = CsvTable::new(&["bits", "rrmse_mean", "rrmse_stderr", "flips_total", "expected_flips_per_inference"]);
            t.push(vec![8usize.into(), r.rrmse_int8.mean.into(), r.rrmse_int8.stderr.into(), r.flips_int8.into(), r.expected_flips_int8.into()])?;
            t.push(vec![
                16usize.into(),
                r.rrmse_int16.mean.into(),
                r.rrmse_int16.stderr.into(),
                r.flips_int16.into(),
                r.expected_flips_int16.into(),
            ])?;
            write_csv(out, "bitwidth.csv", &t, &mut files)?;
            json!({
                "rrmse_int8": r.rrmse_int8.mean, "rrmse_int16": r.rrmse_int16.mean,
                "relative_difference": r.relative_difference(), "sigma_ratio": r.sigma_ratio,
            })
        }
        Command::ClassSubset(a) => {
            let ld = load(&a.data, &mut prov)?;
            let sizes: Vec<usize> = parse_list(&a.sizes, "sizes")?;
            let spec = checked(campaign(&a.fault, 0.0)?.with_bers(grid(&a.grid)?), &ld.net, &ld.data)?;
            let session = Session::new(&ld.net, &ld.data)?;
            let rows = class_subset_experiment(&session, &spec, &sizes)?;
            let mut t = CsvTable::new(&["ber", "nc", "accuracy", "accuracy_stderr", "rrmse_mean", "rrmse_stderr"]);
            for r in &rows {
                t.push(vec![r.ber.into(), r.nc.into(), r.accuracy.mean.into(), r.accuracy.stderr.into(), r.rrmse.mean.into(), r.rrmse.stderr.into()])?;
            }
            write_csv(out, "class_subset.csv", &t, &mut files)?;
            json!({ "rows": rows.len() })
        }
        Command::Fragile(a) => {
            let ld = load(&a.data, &mut prov)?;
            let spec = checked(campaign(&a.fault, require(a.ber, "ber")?)?, &ld.net, &ld.data)?;
            let session = Session::new(&ld.net, &ld.data)?;
            let r = match a.mode {
                FragileMode::Bruteforce => fragile_layers_bruteforce(&session, &spec, a.k)?,
                FragileMode::Accelerated => fragile_layers_accelerated(&session, &spec, a.k)?,
            };
            let mut t = CsvTable::new(&["rank", "protected", "score", "score_stderr"]);
            for (i, s) in r.ranked.iter().enumerate() {
                let p: Vec<String> = s.protected.iter().map(|l| l.to_string()).collect();
                t.push(vec![(i + 1).into(), p.join(";").into(), s.score.into(), s.stderr.into()])?;
            }
            write_csv(out, "fragile.csv", &t, &mut files)?;
            if !r.per_layer_rrmse.is_empty() {
                let mut l = CsvTable::new(&["layer", "rrmse"]);
                for &(layer, rr) in &r.per_layer_rrmse {
                    l.push(vec![layer.into(), rr.into()])?;
                }
                write_csv(out, "fragile_layers.csv", &l, &mut files)?;
            }
            prov.push("faulty_inferences", r.faulty_inferences);
            json!({ "method": r.method.tag(), "chosen": r.chosen, "layers": r.layers, "faulty_inferences": r.faulty_inferences })
        }
        Command::Predict(a) => {
            let math = require(a.model_math, "model-math")?;
            let value = predict(a, math)?;
            let mut t = CsvTable::new(&["model_math", "value"]);
            let name = clap::ValueEnum::to_possible_value(&math).expect("no skipped variants").get_name().to_string();
            t.push(vec![Cell::Text(name.clone()), value.into()])?;
            write_csv(out, "predict.csv", &t, &mut files)?;
            json!({ "model_math": name, "value": value })
        }
        Command::Diagnose(a) => {
            let ld = load(&a.data, &mut prov)?;
            let rows = diagnose(&ld, a.what, &a.fault, a.ber)?;
            let mut t = CsvTable::new(&["layer", "kind", "what", "count", "mean", "var", "skewness", "excess_kurtosis", "ks_distance"]);
            for (l, r) in &rows {
                t.push(vec![
                    (*l).into(),
                    ld.net.layer(*l).kind.tag().into(),
                    Cell::Text(format!("{:?}", a.what).to_lowercase()),
                    r.count.into(),
                    r.mean.into(),
                    r.var.into(),
                    r.skewness.into(),
                    r.excess_kurtosis.into(),
                    r.ks_distance.into(),
                ])?;
            }
            write_csv(out, "diagnose.csv", &t, &mut files)?;
            json!({ "layers": rows.len() })
        }
    };

    let path = out.join("provenance.txt");
    prov.write(&path)?;
    files.push(path.display().to_string());
    summary["status"] = json!("ok");
    summary["command"] = json!(cli.command.name());
    summary["files"] = json!(files);
    Ok(summary)
}

fn predict(a: &crate::PredictArgs, math: ModelMath) -> Res<f64> {
    let v = match math {
        ModelMath::Binary => binary_accuracy(require(a.rrmse, "rrmse")?)?,
        ModelMath::Multiclass => multiclass_accuracy(require(a.rrmse, "rrmse")?, require(a.nc, "nc")?)?,
        ModelMath::Empirical => {
            let m = AccuracyModelEmpirical::new(
                require(a.m, "m")?,
                require(a.s, "s")?,
                require(a.acc_clean, "acc-clean")?,
                require(a.nc, "nc")?,
            )?;
            empirical_accuracy(&m, require(a.rrmse, "rrmse")?)?
        }
        ModelMath::SigmaDelta => {
            let bits = require(a.bits, "bits")?;
            if !(1..=31).contains(&bits) {
                return Err(config("--bits must be between 1 and 31"));
            }
            sigma_delta(bits, require(a.bound, "bound")?)
        }
        ModelMath::WeightFault => predict_rmse_weight_fault(
            require(a.kernel, "kernel")?,
            require(a.ic, "ic")?,
            require(a.oc, "oc")?,
            require(a.sigma_delta, "sigma-delta")?,
        ),
        ModelMath::ActivationFault => {
            predict_rmse_activation_fault(require(a.height, "height")?, require(a.ic, "ic")?, require(a.sigma_delta, "sigma-delta")?)
        }
        ModelMath::Aggregate => {
            let parts: Vec<f64> = parse_list(a.parts.as_deref().ok_or_else(|| config("--parts is required"))?, "parts")?;
            aggregate_rrmse(&parts)
        }
        ModelMath::BerScale => ber_rrmse_scaling(require(a.rrmse, "rrmse")?, require(a.p, "p")?, require(a.p_target, "p-target")?)?,
        ModelMath::MsbToStandard => msb_to_standard_rrmse(require(a.rrmse, "rrmse")?, require(a.bits, "bits")?)?,
    };
    Ok(v)
}

fn diagnose(ld: &Loaded, what: DiagnoseWhat, fault: &FaultArgs, ber: Option<f64>) -> Res<Vec<(usize, NormalityReport)>> {
    let net = &ld.net;
    let images = fault.images.min(ld.data.len());
    let mut rows = Vec::new();
    match what {
        DiagnoseWhat::Weights => {
            for l in net.parametric_layers() {
                let w = net.params(l).expect("parametric").weights.data();
                rows.push((l, normality_diagnostics(w)?));
            }
        }
        DiagnoseWhat::Activations => {
            let traces = ld.data.images()[..images]
                .iter()
                .map(|x| net.forward_full(x, true))
                .collect::<softerr::Result<Vec<_>>>()?;
            for l in injectable_layers(net, QuantTarget::Activations) {
                let v: Vec<f32> = traces.iter().flat_map(|t| t.layer(l).expect("full trace").data().iter().copied()).collect();
                if let Ok(r) = normality_diagnostics(&v) {
                    rows.push((l, r));
                }
            }
        }
        DiagnoseWhat::Errors => {
            let spec = fault_spec(fault, require(ber, "ber")?)?;
            spec.resolve(net).map_err(|e| config(e.to_string()))?;
            let mut errors: Vec<Vec<f64>> = vec![Vec::new(); net.len()];
            for (i, x) in ld.data.images()[..images].iter().enumerate() {
                let golden = net.forward_full(x, true)?;
                let (faulty, record) = faulty_forward(net, x, &spec, i as u64)?;
                if record.is_empty() {
                    continue;
                }
                for l in net.parametric_layers() {
                    let (g, f) = (golden.layer(l).expect("full"), faulty.layer(l).expect("full"));
                    errors[l].extend(f.data().iter().zip(g.data()).map(|(a, b)| (*a - *b) as f64).filter(|d| *d != 0.0));
                }
            }
            for (l, e) in errors.iter().enumerate() {
                if let Ok(r) = normality_diagnostics(e) {
                    rows.push((l, r));
                }
            }
        }
    }
    Ok(rows)
}
