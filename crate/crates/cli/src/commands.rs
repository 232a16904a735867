//! Subcommand bodies. Each takes the effective config document and writes
//! its artifact with that config echoed into it.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use factost::adapter::{Adapter, ADAPTER_PREFIX};
use factost::checkpoint::{self, CheckpointKind};
use factost::config::{AdapterConfig, BackboneConfig, KvDoc, LossKind, TrainConfig};
use factost::data::csv::{load_csv, write_csv, CsvOptions};
use factost::data::synth::{daily_panel, default_pool, synth_corpus, DailyPanelSpec};
use factost::data::window::{split, window_starts, PanelWindow, SeriesWindow};
use factost::eval::panel::{adapted_forecasts, backbone_forecasts, persistence_mae};
use factost::eval::report::{write_csv as write_metric_csv, write_jsonl, MetricRecord};
use factost::eval::scaling::{scaling_probe, ProbeSettings};
use factost::tensor::Mat;
use factost::trainer::audit::tiny_model_audit;
use factost::trainer::sta::{train_sta, StaSetup};
use factost::trainer::utp::{train_utp, UtpData, WindowPool};
use factost::trainer::{Hooks, TraceWriter};
use factost::{Backbone, Error, ParameterStore, QuantileForecast, Result, STDataset};

use crate::settings::{get, get_list};

fn log(msg: impl AsRef<str>) {
    eprintln!("factost: {}", msg.as_ref());
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.kv");
    PathBuf::from(s)
}

/// Writes the effective config next to a CSV artifact.
fn write_sidecar(path: &Path, doc: &KvDoc) -> Result<()> {
    fs::write(sidecar_path(path), doc.render())?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn synthesize(doc: &KvDoc) -> Result<Option<STDataset>> {
    let n: usize = get(doc, "synth.n_series")?;
    let seed: u64 = get(doc, "synth.seed")?;
    if n == 0 {
        return Ok(None);
    }
    match doc.get("synth.kind").unwrap_or("kernel") {
        "kernel" => Ok(Some(synth_corpus(seed, n, get(doc, "synth.length")?, &default_pool()))),
        "daily" => Ok(Some(daily_panel(&DailyPanelSpec {
            n_nodes: n,
            n_days: get(doc, "synth.days")?,
            freq_seconds: get(doc, "synth.freq_seconds")?,
            seed,
            ..DailyPanelSpec::default()
        }))),
        other => Err(Error::config("synth.kind", format!("unknown kind `{other}` (kernel | daily)"))),
    }
}

/// The CSV at `path` (or `data.path`), else the configured synthetic set.
fn load_dataset(doc: &KvDoc, path: Option<&Path>) -> Result<(STDataset, String)> {
    let path = path.map(Path::to_path_buf).or_else(|| doc.get("data.path").map(PathBuf::from));
    match path {
        Some(p) => {
            let opts = CsvOptions {
                freq_seconds: None,
                forward_fill: get(doc, "data.forward_fill")?,
            };
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((load_csv(&p, opts)?, name))
        }
        None => {
            let ds = synthesize(doc)?.ok_or_else(|| Error::config("synth.n_series", "no data: set data.path or a positive series count"))?;
            let name = format!("synthetic-{}", doc.get("synth.kind").unwrap_or("kernel"));
            Ok((ds, name))
        }
    }
}

fn splits(doc: &KvDoc, len: usize) -> Result<factost::data::window::Splits> {
    let r: Vec<f64> = get_list(doc, "data.split")?;
    if r.len() != 3 {
        return Err(Error::config("data.split", "expected three comma-separated ratios"));
    }
    split(len, (r[0], r[1], r[2]))
}

fn split_range(doc: &KvDoc, len: usize, name: &str) -> Result<std::ops::Range<usize>> {
    if name == "all" {
        return Ok(0..len);
    }
    splits(doc, len)?
        .get(name)
        .ok_or_else(|| Error::config("--split", format!("unknown split `{name}` (train | val | test | all)")))
}

pub fn synth_data(doc: &KvDoc, out: &Path) -> Result<()> {
    match synthesize(doc)? {
        Some(ds) => {
            write_csv(&ds, out)?;
            log(format!("wrote {} series x {} steps to {}", ds.n_nodes(), ds.len(), out.display()));
        }
        None => {
            fs::write(out, "timestamp\n")?;
            log(format!("wrote an empty corpus to {}", out.display()));
        }
    }
    write_sidecar(out, doc)
}

fn open_trace(path: &Path, doc: &KvDoc) -> Result<TraceWriter> {
    TraceWriter::new(create(path)?, doc)
}

pub fn pretrain(doc: &KvDoc, out: &Path, data: Option<&Path>, trace: Option<&Path>) -> Result<()> {
    let bcfg = BackboneConfig::from_kv(doc)?;
    let tc = TrainConfig::from_kv(doc, "pretrain", TrainConfig::pretrain_defaults())?;
    let (ds, name) = load_dataset(doc, data)?;
    let h = bcfg.max_horizon();
    if ds.len() <= h {
        return Err(Error::Windowing(format!(
            "series of {} steps cannot hold a {h}-step horizon",
            ds.len()
        )));
    }
    let l = bcfg.max_context().min(ds.len() - h);
    let pool = WindowPool::new(&ds, 0..ds.len(), l, h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut store = ParameterStore::new(tc.seed);
    let bb = Backbone::init(bcfg, &mut store, &mut rng)?;
    let trace_path = trace.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(out, ".trace.jsonl"));
    let mut tw = open_trace(&trace_path, doc)?;
    log(format!(
        "pretraining on {name}: {} series, context {l}, horizon {h}, {} steps",
        ds.n_nodes(),
        tc.total_steps
    ));
    let mut hooks = Hooks {
        trace: Some(&mut tw),
        ..Hooks::default()
    };
    let report = train_utp(&bb, &mut store, &tc, UtpData::Pool(pool), &mut hooks)?;
    if !report.losses.is_empty() {
        log(format!(
            "loss {:.4} -> {:.4} (mean of last 50 steps)",
            report.losses[0],
            report.tail_loss(50)
        ));
    }
    checkpoint::save(out, &store, doc)?;
    log(format!("checkpoint written to {}", out.display()));
    Ok(())
}

pub struct AdaptArgs<'a> {
    pub out: &'a Path,
    pub data: Option<&'a Path>,
    pub backbone: Option<&'a Path>,
    pub from_scratch: bool,
    pub trace: Option<&'a Path>,
}

pub fn adapt(doc: &KvDoc, a: AdaptArgs) -> Result<()> {
    let tc = TrainConfig::from_kv(doc, "adapt", TrainConfig::adapt_defaults())?;
    let (ds, name) = load_dataset(doc, a.data)?;
    let mut doc = doc.clone();
    let (bcfg, mut store, loaded) = match a.backbone {
        Some(p) => {
            let ck = checkpoint::load(p)?;
            log(format!("loaded {} checkpoint {}", ck.kind(), p.display()));
            let bcfg = BackboneConfig::from_kv(&ck.config)?;
            let mut store = ParameterStore::new(tc.seed);
            for e in ck.store.entries().iter().filter(|e| !e.name.starts_with(ADAPTER_PREFIX)) {
                store.insert(&e.name, e.shape.clone(), e.values.clone())?;
            }
            (bcfg, store, true)
        }
        None if a.from_scratch => {
            log("adapting a randomly initialized backbone (--from-scratch)");
            let bcfg = BackboneConfig::from_kv(&doc)?;
            let mut store = ParameterStore::new(tc.seed);
            let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
            Backbone::init(bcfg.clone(), &mut store, &mut rng)?;
            (bcfg, store, false)
        }
        None => {
            return Err(Error::Transfer(
                "no backbone checkpoint given; pass --backbone <file> or --from-scratch".into(),
            ))
        }
    };
    bcfg.write_kv(&mut doc);
    match doc.get("adapter.n_nodes").map(str::parse::<usize>) {
        Some(Ok(n)) if n != ds.n_nodes() => {
            return Err(Error::AdapterShape(format!(
                "adapter.n_nodes={n} but {name} has {} nodes",
                ds.n_nodes()
            )))
        }
        _ => doc.set("adapter.n_nodes", ds.n_nodes()),
    }
    let acfg = AdapterConfig::from_kv(&doc, bcfg.d_model)?;
    let bb = Backbone::bind(bcfg, &store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let ad = Adapter::init(acfg, bb.cfg.d_model, &mut store, &mut rng)?;
    let setup = StaSetup {
        context_len: get(&doc, "adapt.context_len")?,
        horizon: get(&doc, "adapt.horizon")?,
        stride: get(&doc, "adapt.stride")?,
        few_shot_frac: get(&doc, "adapt.few_shot_frac")?,
        backbone_loaded: loaded,
        from_scratch: a.from_scratch,
    };
    let sp = splits(&doc, ds.len())?;
    let val_starts = window_starts(sp.val.clone(), setup.context_len, setup.horizon, setup.horizon).ok();
    if val_starts.is_none() {
        log("validation split too short for one window; validation skipped");
    }
    let trace_path = a.trace.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(a.out, ".trace.jsonl"));
    let mut tw = open_trace(&trace_path, &doc)?;
    let (l, h) = (setup.context_len, setup.horizon);
    let validate = val_starts.map(|starts| {
        let (bb, ad, ds) = (&bb, &ad, &ds);
        Box::new(move |s: &ParameterStore| {
            let m = adapted_forecasts(bb, ad, s, ds, &starts, l, h)?.summarize(0.1, 0.9)?;
            Ok((m["mae"], m))
        }) as factost::trainer::Validator
    });
    let mut hooks = Hooks {
        trace: Some(&mut tw),
        validate,
        eval_every: get(&doc, "adapt.eval_every")?,
    };
    let (report, shots) = train_sta(&bb, &ad, &mut store, &ds, sp.train.clone(), &tc, &setup, &mut hooks)?;
    log(shots.describe());
    if let Some((step, mae, _)) = report.validations.last() {
        log(format!("validation MAE after step {step}: {mae:.4}"));
    }
    checkpoint::save(a.out, &store, &doc)?;
    log(format!("adapted checkpoint written to {}", a.out.display()));
    Ok(())
}

/// Architecture keys from a checkpoint layered over the run config.
fn echo_with_checkpoint(doc: &KvDoc, ck: &KvDoc) -> KvDoc {
    let mut e = doc.clone();
    for k in ck.keys().filter(|k| k.starts_with("backbone.") || k.starts_with("adapter.") || k.starts_with("adapt.")) {
        e.set(k, ck.get(k).unwrap_or_default());
    }
    e
}

/// Rolls the adapted model forward `horizon` steps, feeding medians back.
fn adapted_rolling(
    bb: &Backbone,
    ad: &Adapter,
    store: &ParameterStore,
    mut panel: PanelWindow,
    horizon: usize,
) -> Result<Vec<QuantileForecast>> {
    let n = panel.n_nodes();
    let nq = bb.cfg.n_quantiles();
    let l = panel.context.cols;
    let mut rows: Vec<Vec<f64>> = vec![Vec::with_capacity(horizon * nq); n];
    let mut done = 0;
    while done < horizon {
        let chunk = (horizon - done).min(bb.cfg.max_horizon());
        panel.target = Mat::zeros(n, 0);
        let out = ad.sta_forward(bb, &panel, store, LossKind::L1Median, None)?;
        let med = bb.cfg.median_index();
        let mut next = Mat::zeros(n, l);
        for (i, f) in out.forecasts.iter().enumerate() {
            rows[i].extend_from_slice(&f.values.data[..chunk * nq]);
            let ctx = panel.context.row(i);
            let path: Vec<f64> = (0..chunk).map(|t| f.values[(t, med)]).collect();
            let joined: Vec<f64> = ctx.iter().copied().chain(path).collect();
            next.row_mut(i).copy_from_slice(&joined[joined.len() - l..]);
        }
        let shift = chunk as i64 * panel.stride;
        panel.context_timestamps.iter_mut().for_each(|t| *t += shift);
        panel.context = next;
        done += chunk;
    }
    Ok(rows
        .into_iter()
        .map(|r| QuantileForecast {
            values: Mat::from_vec(horizon, nq, r),
            quantiles: bb.cfg.quantiles.clone(),
        })
        .collect())
}

pub fn forecast(doc: &KvDoc, ckpt: &Path, input: &Path, horizon: usize, out: &Path) -> Result<()> {
    if horizon == 0 {
        return Err(Error::config("--horizon", "must be positive"));
    }
    let ck = checkpoint::load(ckpt)?;
    let bcfg = BackboneConfig::from_kv(&ck.config)?;
    let bb = Backbone::bind(bcfg, &ck.store)?;
    let opts = CsvOptions {
        freq_seconds: None,
        forward_fill: get(doc, "data.forward_fill")?,
    };
    let ds = load_csv(input, opts)?;
    let mut echo = echo_with_checkpoint(doc, &ck.config);
    echo.set("forecast.horizon", horizon);
    if horizon > bb.cfg.max_horizon() {
        log(format!(
            "rolling forecast: horizon {horizon} exceeds the single-pass maximum {}, {} passes",
            bb.cfg.max_horizon(),
            horizon.div_ceil(bb.cfg.max_horizon())
        ));
    } else {
        log(format!("single-pass forecast of {horizon} steps"));
    }
    let forecasts: Vec<QuantileForecast> = match ck.kind() {
        CheckpointKind::BackboneOnly => {
            let l = ds.len().min(bb.cfg.max_context());
            (0..ds.n_nodes())
                .map(|i| {
                    let ctx = &ds.node(i)[ds.len() - l..];
                    if horizon <= bb.cfg.max_horizon() {
                        bb.forecast(ctx, horizon, &ck.store)
                    } else {
                        bb.rolling_forecast(ctx, horizon, &ck.store)
                    }
                })
                .collect::<Result<_>>()?
        }
        CheckpointKind::BackboneAndAdapter => {
            let acfg = AdapterConfig::from_kv(&ck.config, bb.cfg.d_model)?;
            let ad = Adapter::bind(acfg, bb.cfg.d_model, &ck.store)?;
            if ds.n_nodes() != ad.cfg.n_nodes {
                return Err(Error::AdapterShape(format!(
                    "input has {} nodes, adapter was trained on {}",
                    ds.n_nodes(),
                    ad.cfg.n_nodes
                )));
            }
            let want: usize = get(&ck.config, "adapt.context_len").unwrap_or(bb.cfg.max_context());
            let l = ds.len().min(want);
            let panel = PanelWindow::from_dataset(&ds, ds.len() - l, l, 0)?;
            adapted_rolling(&bb, &ad, &ck.store, panel, horizon)?
        }
    };
    let last = *ds.timestamps.last().ok_or_else(|| Error::DataValidation("input has no rows".into()))?;
    let mut w = csv::Writer::from_writer(create(out)?);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["timestamp", "node", "quantile", "value"]).map_err(io)?;
    for (i, f) in forecasts.iter().enumerate() {
        for t in 0..horizon {
            let ts = last + (t as i64 + 1) * ds.freq_seconds;
            for (q, &level) in f.quantiles.iter().enumerate() {
                w.write_record([
                    ts.to_string(),
                    ds.node_ids[i].clone(),
                    level.to_string(),
                    f.values[(t, q)].to_string(),
                ])
                .map_err(io)?;
            }
        }
    }
    w.flush()?;
    write_sidecar(out, &echo)?;
    log(format!("forecast written to {}", out.display()));
    Ok(())
}

pub struct EvalArgs<'a> {
    pub ckpt: &'a Path,
    pub data: Option<&'a Path>,
    pub split: &'a str,
    pub out: Option<&'a Path>,
    pub csv: Option<&'a Path>,
}

/// Scores a checkpoint; returns the metric records it printed.
pub fn evaluate(doc: &KvDoc, a: EvalArgs) -> Result<Vec<MetricRecord>> {
    let ck = checkpoint::load(a.ckpt)?;
    let bcfg = BackboneConfig::from_kv(&ck.config)?;
    let bb = Backbone::bind(bcfg, &ck.store)?;
    let (ds, name) = load_dataset(doc, a.data)?;
    let range = split_range(doc, ds.len(), a.split)?;
    let l: usize = get(doc, "eval.context_len")?;
    let h: usize = get(doc, "eval.horizon")?;
    let stride: usize = get(doc, "eval.stride")?;
    let interval: Vec<f64> = get_list(doc, "eval.interval")?;
    if interval.len() != 2 {
        return Err(Error::config("eval.interval", "expected `lo,hi`"));
    }
    let starts = window_starts(range, l, h, stride)?;
    let set = match ck.kind() {
        CheckpointKind::BackboneOnly => backbone_forecasts(&bb, &ck.store, &ds, &starts, l, h)?,
        CheckpointKind::BackboneAndAdapter => {
            let acfg = AdapterConfig::from_kv(&ck.config, bb.cfg.d_model)?;
            let ad = Adapter::bind(acfg, bb.cfg.d_model, &ck.store)?;
            if h > bb.cfg.max_horizon() {
                return Err(Error::Horizon(format!(
                    "adapted evaluation supports horizons up to {}",
                    bb.cfg.max_horizon()
                )));
            }
            adapted_forecasts(&bb, &ad, &ck.store, &ds, &starts, l, h)?
        }
    };
    let windows: Vec<SeriesWindow> = starts
        .iter()
        .flat_map(|&s| {
            let pw = PanelWindow::from_dataset(&ds, s, l, h);
            pw.map(|pw| (0..pw.n_nodes()).map(|i| pw.node_window(i)).collect::<Vec<_>>())
                .unwrap_or_default()
        })
        .collect();
    let mut metrics = set.summarize(interval[0], interval[1])?;
    metrics.insert("persistence_mae".into(), persistence_mae(&windows)?);
    let records: Vec<MetricRecord> = metrics
        .iter()
        .map(|(k, &v)| MetricRecord::new(k, &name, h, v))
        .collect();
    let echo = echo_with_checkpoint(doc, &ck.config);
    log(format!(
        "{} checkpoint on {name} ({} split, {} windows x {} nodes)",
        ck.kind(),
        a.split,
        starts.len(),
        ds.n_nodes()
    ));
    for r in &records {
        println!("{}\t{}", r.metric, r.value);
    }
    if let Some(p) = a.out {
        let mut w = create(p)?;
        write_jsonl(&mut w, &echo, &records)?;
        w.flush()?;
    }
    if let Some(p) = a.csv {
        let mut w = create(p)?;
        write_metric_csv(&mut w, &records)?;
        w.flush()?;
        write_sidecar(p, &echo)?;
    }
    Ok(records)
}

pub fn grad_audit(doc: &KvDoc, out: Option<&Path>) -> Result<bool> {
    let instances: usize = get(doc, "audit.instances")?;
    let step: f64 = get(doc, "audit.step")?;
    let tol: f64 = get(doc, "audit.tolerance")?;
    let seed: u64 = get(doc, "audit.seed")?;
    let report = tiny_model_audit(instances, seed, step, tol)?;
    for e in &report.entries {
        println!("{:<32} {:>10.3e}  ({} scalars checked)", e.name, e.max_rel_err, e.checked);
    }
    let bad = report.violators();
    println!(
        "{} parameters, {} instances, worst relative error {:.3e}, {} violators (tolerance {tol:e})",
        report.entries.len(),
        report.instances,
        report.worst(),
        bad.len()
    );
    if let Some(p) = out {
        let mut w = create(p)?;
        writeln!(w, "{}", serde_json::json!({ "config": doc.as_map() }))?;
        for e in &report.entries {
            writeln!(
                w,
                "{}",
                serde_json::json!({
                    "param": e.name,
                    "max_rel_err": e.max_rel_err,
                    "checked": e.checked,
                    "pass": e.max_rel_err < tol,
                })
            )?;
        }
        w.flush()?;
    }
    Ok(bad.is_empty())
}

pub fn scale_bench(doc: &KvDoc, ckpt: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let (bb, store, mut echo) = match ckpt {
        Some(p) => {
            let ck = checkpoint::load(p)?;
            let bcfg = BackboneConfig::from_kv(&ck.config)?;
            let mut store = ParameterStore::new(0);
            for e in ck.store.entries().iter().filter(|e| !e.name.starts_with(ADAPTER_PREFIX)) {
                store.insert(&e.name, e.shape.clone(), e.values.clone())?;
            }
            let echo = echo_with_checkpoint(doc, &ck.config);
            (Backbone::bind(bcfg, &store)?, store, echo)
        }
        None => {
            let bcfg = BackboneConfig::from_kv(doc)?;
            let seed: u64 = get(doc, "scale.seed")?;
            let mut store = ParameterStore::new(seed);
            let bb = Backbone::init(bcfg, &mut store, &mut ChaCha8Rng::seed_from_u64(seed))?;
            (bb, store, doc.clone())
        }
    };
    let mut acfg_doc = echo.clone();
    acfg_doc.set("adapter.n_nodes", 1);
    let acfg = AdapterConfig::from_kv(&acfg_doc, bb.cfg.d_model)?;
    let settings = ProbeSettings {
        n_list: get_list(doc, "scale.n_list")?,
        context_len: get(doc, "scale.context_len")?,
        horizon: get(doc, "scale.horizon")?,
        repeats: get(doc, "scale.repeats")?,
        warmups: get(doc, "scale.warmups")?,
        seed: get(doc, "scale.seed")?,
    };
    let report = scaling_probe(&bb, &store, &acfg, &settings)?;
    println!("n_nodes\twall_seconds\tpeak_intermediate");
    for r in &report.rows {
        println!("{}\t{:.6}\t{}", r.n_nodes, r.wall_seconds, r.peak_intermediate);
    }
    println!("log-log time slope {:.3}", report.time_slope);
    println!("largest-allocation ratios per step {:?}", report.alloc_ratios);
    if let Some(p) = out {
        echo.set("scale.time_slope", format!("{:.6}", report.time_slope));
        let mut w = csv::Writer::from_writer(create(p)?);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["n_nodes", "wall_seconds", "peak_intermediate"]).map_err(io)?;
        for r in &report.rows {
            w.write_record([r.n_nodes.to_string(), r.wall_seconds.to_string(), r.peak_intermediate.to_string()])
                .map_err(io)?;
        }
        w.flush()?;
        write_sidecar(p, &echo)?;
    }
    Ok(())
}
