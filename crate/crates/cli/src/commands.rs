use std::path::{Path, PathBuf};

use naomi::baselines::{linear_impute, KnnIndex};
use naomi::io::{self, Checkpoint, DatasetFile, DatasetMeta, Record};
use naomi::masking::{sample_mask_with, MaskSpec};
use naomi::metrics::{self, Bounds, Metric, MetricsConfig, Triple};
use naomi::parallel::{self, Execution};
use naomi::scheduler::{self, Mode};
use naomi::sequence::{Mask, Sequence};
use naomi::simulator::{self, BilliardsConfig};
use naomi::training::{self, mode_for, single_res_variant, Dataset, TrainConfig};
use naomi::{Error, Result, Rng};
use rand::{Rng as _, SeedableRng};

use crate::{EvalArgs, ImputeArgs, Method, ScheduleArgs, SimulateArgs, TrainArgs, Variant};

fn exec(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let config = BilliardsConfig {
        ball_radius: a.radius,
        speed_min: a.speed_min,
        speed_max: a.speed_max,
        timesteps: a.len,
        seed: a.seed,
    };
    let sequences = simulator::simulate(&config, a.n, exec(a.sequential))?;
    let mut meta = DatasetMeta::new(a.len, 2);
    meta.simulator = Some(config);
    DatasetFile::from_sequences(meta, sequences)?.write(&a.out)?;
    println!("wrote {} trajectories of {} steps to {}", a.n, a.len, a.out.display());
    Ok(())
}

fn default_loss_log(model_out: &Path) -> PathBuf {
    let mut s = model_out.as_os_str().to_owned();
    s.push(".losses.csv");
    PathBuf::from(s)
}

fn build_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    let mut mask_given = false;
    if let Some(path) = &a.config {
        let pairs = io::parse_key_values(&io::read_text(path)?)?;
        for (k, v) in pairs {
            mask_given |= k == "mask_spec";
            io::apply_setting(&mut config, &k, &v)?;
        }
    }
    let mut set = |key: &str, value: Option<String>| -> Result<()> {
        match value {
            Some(v) => io::apply_setting(&mut config, key, &v),
            None => Ok(()),
        }
    };
    set("objective", a.objective.clone())?;
    set("epochs", a.epochs.map(|v| v.to_string()))?;
    set("batch_size", a.batch_size.map(|v| v.to_string()))?;
    set("learning_rate_generator", a.learning_rate.map(|v| v.to_string()))?;
    set("mask_spec", a.mask_spec.clone())?;
    set("resolutions", a.resolutions.clone())?;
    set("hidden_size", a.hidden_size.map(|v| v.to_string()))?;
    set("seed", a.seed.map(|v| v.to_string()))?;
    mask_given |= a.mask_spec.is_some();
    if !mask_given {
        return Err(Error::Config(
            "mask_spec is required, e.g. --mask-spec random:80:95".into(),
        ));
    }
    if a.variant == Variant::Singleres {
        if matches!(config.resolutions, Some(r) if r != 1) {
            return Err(Error::Config("the singleres variant always uses one resolution".into()));
        }
        config = single_res_variant(&config);
    }
    config.validate()?;
    Ok(config)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let config = build_train_config(&a)?;
    let file = DatasetFile::read(&a.data)?;
    let dataset = Dataset::new(file.sequences())?;
    let outcome = training::train(&dataset, &config, exec(a.sequential))?;
    let checkpoint = Checkpoint::from_model(&outcome.model, Some(&config));
    checkpoint.write(&a.model_out)?;

    let mut log = String::from("epoch,generator_loss,discriminator_loss\n");
    for e in &outcome.history {
        let d = e.discriminator_loss.map_or_else(String::new, |v| v.to_string());
        log.push_str(&format!("{},{},{}\n", e.epoch, e.generator_loss, d));
    }
    let log_path = a.loss_log.clone().unwrap_or_else(|| default_loss_log(&a.model_out));
    io::write_atomic(&log_path, log.as_bytes())?;

    if let Some(msg) = outcome.diverged {
        return Err(Error::Numerical(format!(
            "{msg}; wrote the last good checkpoint to {}",
            a.model_out.display()
        )));
    }
    let last = outcome.history.last().map_or(f64::NAN, |e| e.generator_loss);
    println!(
        "trained {} epochs (R={}, objective {}), final loss {last:.6}; checkpoint {}",
        outcome.history.len(),
        outcome.model.generator.config.resolutions,
        config.objective,
        a.model_out.display()
    );
    Ok(())
}

fn looks_like_spec(s: &str) -> bool {
    ["random:", "forward", "explicit:"].iter().any(|p| s.starts_with(p))
}

/// Masks for every record, plus whether they came from a forward-prediction prior.
fn resolve_masks(spec: &str, data: &DatasetFile, rng: &mut Rng) -> Result<(Vec<Mask>, bool)> {
    let len = data.meta.len;
    if spec == "data" {
        let masks = data
            .records
            .iter()
            .map(|r| {
                r.mask.clone().ok_or_else(|| {
                    Error::Data(format!("record {:?} has no mask; pass --mask-spec", r.id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok((masks, false));
    }
    if looks_like_spec(spec) {
        let parsed: MaskSpec = spec.parse()?;
        let forward = mode_for(&parsed) == Mode::ForwardPrediction;
        let masks = data
            .records
            .iter()
            .map(|_| sample_mask_with(&parsed, len, rng))
            .collect::<Result<Vec<_>>>()?;
        return Ok((masks, forward));
    }
    let masks = io::read_masks(spec)?;
    if masks.len() != data.records.len() {
        return Err(Error::Data(format!(
            "mask file has {} lines for {} records",
            masks.len(),
            data.records.len()
        )));
    }
    if let Some(bad) = masks.iter().position(|m| m.len() != len) {
        return Err(Error::Data(format!("mask on line {} does not have length {len}", bad + 1)));
    }
    Ok((masks, false))
}

fn load_checkpoint(a: &ImputeArgs) -> Result<Checkpoint> {
    let path = a
        .model
        .as_ref()
        .ok_or_else(|| Error::Config(format!("--method {:?} needs --model", a.method)))?;
    let checkpoint = Checkpoint::read(path)?;
    if a.method == Method::Singleres && checkpoint.hyperparameters.resolutions != 1 {
        return Err(Error::Config(format!(
            "singleres needs a one-resolution checkpoint, {} has R={}",
            path.display(),
            checkpoint.hyperparameters.resolutions
        )));
    }
    Ok(checkpoint)
}

pub fn impute(a: ImputeArgs) -> Result<()> {
    let exec = exec(a.sequential);
    let data = DatasetFile::read(&a.data)?;
    let mut rng = Rng::seed_from_u64(a.seed);
    let (masks, forward_spec) = resolve_masks(&a.mask_spec, &data, &mut rng)?;
    let mut mode = if a.forward_prediction || forward_spec {
        Mode::ForwardPrediction
    } else {
        Mode::Standard
    };
    let mut meta = data.meta.clone();
    meta.info.insert("method".into(), format!("{:?}", a.method).to_lowercase().into());
    meta.info.insert("mask_spec".into(), a.mask_spec.clone().into());

    let records = &data.records;
    let imputed: Vec<Result<Sequence>> = match a.method {
        Method::Linear => parallel::map_slice(exec, records, |i, r| linear_impute(&r.values, &masks[i])),
        Method::Knn => {
            let path = a
                .corpus
                .as_ref()
                .ok_or_else(|| Error::Config("--method knn needs --corpus".into()))?;
            let index = KnnIndex::new(DatasetFile::read(path)?.sequences(), a.k)?;
            meta.info.insert("k".into(), a.k.into());
            parallel::map_slice(exec, records, |i, r| index.impute(&r.values, &masks[i]))
        }
        Method::Naomi | Method::Singleres => {
            let checkpoint = load_checkpoint(&a)?;
            if io::checkpoint_mode(&checkpoint) == Mode::ForwardPrediction {
                mode = Mode::ForwardPrediction;
            }
            let model = checkpoint.to_model()?;
            meta.info.insert(
                "resolutions".into(),
                model.generator.config.resolutions.into(),
            );
            let seeds: Vec<u64> = records.iter().map(|_| rng.random()).collect();
            let stochastic = !model.generator.config.deterministic;
            parallel::map_slice(exec, records, |i, r| {
                let mut item_rng = Rng::seed_from_u64(seeds[i]);
                let noise = stochastic.then_some(&mut item_rng);
                model.impute(&r.values, &masks[i], mode, noise)
            })
        }
    };
    let mut out = DatasetFile::new(meta);
    for ((record, values), mask) in records.iter().zip(imputed).zip(masks) {
        out.push(Record {
            id: record.id.clone(),
            values: values?,
            mask: Some(mask),
        })?;
    }
    out.write(&a.out)?;
    println!("imputed {} sequences into {}", out.records.len(), a.out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let selected = Metric::parse_list(&a.metrics)?;
    let pred = DatasetFile::read(&a.pred)?;
    let truth = DatasetFile::read(&a.truth)?;
    if pred.records.len() != truth.records.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} ground-truth sequences",
            pred.records.len(),
            truth.records.len()
        )));
    }
    for (p, t) in pred.records.iter().zip(&truth.records) {
        if p.id != t.id {
            return Err(Error::Data(format!("record ids differ: {:?} vs {:?}", p.id, t.id)));
        }
    }
    let radius = a
        .radius
        .or_else(|| truth.meta.simulator.as_ref().map(|s| s.ball_radius))
        .unwrap_or(0.0);
    let config = MetricsConfig {
        walls: Bounds::unit().shrink(radius),
        court: Bounds::unit(),
        wall_delta: a.wall_delta,
    };
    let masks: Vec<Mask> = pred
        .records
        .iter()
        .map(|r| r.mask.clone().unwrap_or_else(|| Mask::all_observed(r.values.len())))
        .collect();
    let triples: Vec<Triple<'_>> = pred
        .records
        .iter()
        .zip(&truth.records)
        .zip(&masks)
        .map(|((p, t), m)| Triple {
            imputed: &p.values,
            truth: &t.values,
            mask: m,
        })
        .collect();
    let report = metrics::evaluate(&triples, &selected, &config, exec(a.sequential))?;
    print!("{}", report.to_table());
    if let Some(path) = &a.out {
        let json = serde_json::to_string_pretty(&report.to_json())?;
        io::write_atomic(path, json.as_bytes())?;
    }
    if let Some(path) = &a.csv {
        io::write_atomic(path, report.to_csv().as_bytes())?;
    }
    Ok(())
}

pub fn schedule(a: ScheduleArgs) -> Result<()> {
    let mask: Mask = a.mask.parse()?;
    let mode = if a.forward_prediction {
        Mode::ForwardPrediction
    } else {
        Mode::Standard
    };
    let steps = scheduler::run_schedule(&mask, a.resolutions, mode)?;
    print!("{}", scheduler::format_schedule(&steps));
    Ok(())
}
