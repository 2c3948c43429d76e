use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use oasd::asdnet::{pretrain, LogRecord};
use oasd::detector::{detect_trajectory, DetectionSession};
use oasd::experiment::{self, bench, cold_start_table, drift_experiment, split};
use oasd::groupstats::StatsStore;
use oasd::metrics::{evaluate, LabeledCorpus};
use oasd::model::{Checkpoint, Model, Optimizers};
use oasd::roadnet::RoadNetwork;
use oasd::synthgen::{drift_scenario, generate, SynthConfig};
use oasd::trajio::{
    load_trajectories, write_trajectories, DetectionEvent, Label, SdPair, Trajectory,
};
use oasd::{rng, Error, Result};

use crate::settings::Settings;
use crate::Command;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes to `path`, or stdout when absent.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut w = sink(path)?;
    writeln!(w, "{}", serde_json::to_string_pretty(value)?)?;
    w.flush()?;
    Ok(())
}

fn load_net(path: &Path) -> Result<RoadNetwork> {
    RoadNetwork::load(open(path)?)
}

fn load_trajs(path: &Path, net: &RoadNetwork) -> Result<Vec<Trajectory>> {
    Ok(load_trajectories(open(path)?, net, true)?.trajectories)
}

fn load_stats(path: &Path, net: &RoadNetwork, s: &Settings) -> Result<StatsStore> {
    let store = StatsStore::load(open(path)?, net)?;
    if s.thresholds_explicit {
        store.with_thresholds(s.alpha, s.delta)
    } else {
        Ok(store)
    }
}

fn load_model(path: &Path, net: &RoadNetwork) -> Result<Checkpoint> {
    let ck = Checkpoint::load(open(path)?)?;
    if ck.model.num_segments() != net.num_segments() {
        return Err(Error::Validation(format!(
            "model covers {} segments, network has {}",
            ck.model.num_segments(),
            net.num_segments()
        )));
    }
    Ok(ck)
}

fn meta(s: &Settings, stats: &StatsStore) -> BTreeMap<String, Value> {
    BTreeMap::from([
        ("alpha".to_string(), json!(stats.alpha())),
        ("delta".to_string(), json!(stats.delta())),
        ("delay_d".to_string(), json!(s.delay_d)),
        ("seed".to_string(), json!(s.seed)),
        ("slots".to_string(), json!(stats.clock().slots_per_day())),
        ("profile".to_string(), json!(s.profile)),
    ])
}

fn save_checkpoint(
    path: &Path,
    model: Model,
    opts: Optimizers,
    meta: BTreeMap<String, Value>,
) -> Result<()> {
    let ck = Checkpoint {
        model,
        optimizers: Some(opts),
        meta,
    };
    let mut w = create(path)?;
    ck.save(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_log(path: Option<&Path>, log: &[LogRecord]) -> Result<()> {
    let Some(path) = path else { return Ok(()) };
    let mut w = create(path)?;
    for rec in log {
        writeln!(w, "{}", serde_json::to_string(rec)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(cmd: Command, s: &Settings) -> Result<()> {
    match cmd {
        Command::Gen {
            out,
            synth,
            width,
            height,
            pairs,
            trajs_per_group,
            anomaly_ratio,
            corridors,
            drift,
            test_frac,
        } => {
            let mut cfg: SynthConfig = match synth {
                Some(p) => serde_json::from_reader(open(&p)?).map_err(|e| Error::Parse {
                    line: e.line(),
                    message: format!("{}: {e}", p.display()),
                })?,
                None if drift => SynthConfig {
                    route_weights: vec![0.5, 0.5],
                    anomaly_ratio: 0.05,
                    slots_used: 1,
                    ..SynthConfig::default()
                },
                None => SynthConfig::default(),
            };
            cfg.seed = s.seed;
            cfg.slots_per_day = s.slots;
            cfg.width = width.unwrap_or(cfg.width);
            cfg.height = height.unwrap_or(cfg.height);
            cfg.pairs = pairs.unwrap_or(cfg.pairs);
            cfg.trajs_per_group = trajs_per_group.unwrap_or(cfg.trajs_per_group);
            cfg.anomaly_ratio = anomaly_ratio.unwrap_or(cfg.anomaly_ratio);
            cfg.corridors = corridors.unwrap_or(cfg.corridors);
            cmd_gen(&out, &cfg, drift, test_frac, s.seed)
        }
        Command::Preprocess {
            network,
            trajectories,
            out,
        } => {
            let net = load_net(&network)?;
            let trajs = load_trajs(&trajectories, &net)?;
            let store = s.pipeline().build_store(&trajs)?;
            let mut w = create(&out)?;
            store.save(&mut w, &net)?;
            w.flush()?;
            log::info!("{} groups from {} trajectories", store.len(), trajs.len());
            Ok(())
        }
        Command::Pretrain {
            network,
            trajectories,
            stats,
            out,
            log,
        } => {
            let net = load_net(&network)?;
            let trajs = load_trajs(&trajectories, &net)?;
            let store = load_stats(&stats, &net, s)?;
            let cfg = s.pipeline();
            let mut init = rng::substream(s.seed, "init");
            let mut model = Model::init(net.num_segments(), cfg.dims, &mut init);
            let mut opts = Optimizers::new(&model, cfg.train.lr_rsr, cfg.train.lr_policy);
            let records = pretrain(&mut model, &mut opts, &store, &net, &trajs, &cfg.train)?;
            write_log(log.as_deref(), &records)?;
            save_checkpoint(&out, model, opts, meta(s, &store))
        }
        Command::Train {
            network,
            trajectories,
            stats,
            model,
            valid,
            out,
            log,
        } => {
            let net = load_net(&network)?;
            let trajs = load_trajs(&trajectories, &net)?;
            let store = load_stats(&stats, &net, s)?;
            let cfg = s.pipeline();
            let (train, valid) = match valid {
                Some(p) => (trajs, load_trajs(&p, &net)?),
                None => split(&trajs, cfg.valid_frac, s.seed, "valid"),
            };
            if !valid.iter().any(|t| t.labels.is_some()) {
                return Err(Error::Config(
                    "train needs labeled validation trajectories (pass --valid or label the training file)".into(),
                ));
            }
            let valid: Vec<Trajectory> = valid.into_iter().filter(|t| t.labels.is_some()).collect();
            let (mut m, mut opts, mut records) = match model {
                Some(p) => {
                    let ck = load_model(&p, &net)?;
                    let opts = ck.optimizers.unwrap_or_else(|| {
                        Optimizers::new(&ck.model, cfg.train.lr_rsr, cfg.train.lr_policy)
                    });
                    (ck.model, opts, Vec::new())
                }
                None => {
                    let mut init = rng::substream(s.seed, "init");
                    let mut m = Model::init(net.num_segments(), cfg.dims, &mut init);
                    let mut opts = Optimizers::new(&m, cfg.train.lr_rsr, cfg.train.lr_policy);
                    let recs = pretrain(&mut m, &mut opts, &store, &net, &train, &cfg.train)?;
                    (m, opts, recs)
                }
            };
            let report = experiment::continue_training(
                &mut m, &mut opts, &store, &net, &train, &valid, &cfg,
            )?;
            log::info!(
                "initial f1 {:.4}, best f1 {:.4} after {} trajectories",
                report.initial_f1,
                report.best_f1,
                report.best_step
            );
            records.extend(report.log);
            write_log(log.as_deref(), &records)?;
            let mut meta = meta(s, &store);
            meta.insert("best_f1".into(), json!(report.best_f1));
            meta.insert("best_step".into(), json!(report.best_step));
            save_checkpoint(&out, m, opts, meta)
        }
        Command::Detect {
            network,
            stats,
            model,
            trajectories,
            stream,
            input,
            out,
            labels_out,
        } => {
            let net = load_net(&network)?;
            let store = load_stats(&stats, &net, s)?;
            let ck = load_model(&model, &net)?;
            let mut w = sink(out.as_deref())?;
            if stream {
                let reader: Box<dyn BufRead> = match input {
                    Some(p) => Box::new(open(&p)?),
                    None => Box::new(io::stdin().lock()),
                };
                return cmd_stream(reader, &mut w, &ck.model, &store, &net, s);
            }
            let path = trajectories.expect("clap requires trajectories without --stream");
            let trajs = load_trajs(&path, &net)?;
            let mut lw = labels_out.as_deref().map(create).transpose()?;
            for t in &trajs {
                let d = detect_trajectory(&ck.model, &store, &net, t, s.detector())?;
                for ev in &d.events {
                    writeln!(w, "{}", ev.to_json())?;
                }
                if let Some(lw) = lw.as_mut() {
                    writeln!(lw, "{}", json!({ "id": t.id, "labels": d.labels }))?;
                }
            }
            if let Some(mut lw) = lw {
                lw.flush()?;
            }
            w.flush()?;
            Ok(())
        }
        Command::Eval { truth, pred, out } => cmd_eval(&truth, &pred, out.as_deref(), s),
        Command::Drift {
            network,
            trajectories,
            test_frac,
            out,
        } => {
            let net = load_net(&network)?;
            let trajs = load_trajs(&trajectories, &net)?;
            let rows = drift_experiment(&net, &trajs, s.xi, test_frac, &s.pipeline())?;
            write_json(out.as_deref(), &json!({ "xi": s.xi, "rows": rows }))
        }
        Command::Coldstart {
            network,
            trajectories,
            stats,
            model,
            out,
        } => {
            let net = load_net(&network)?;
            let trajs = load_trajs(&trajectories, &net)?;
            let store = load_stats(&stats, &net, s)?;
            let ck = load_model(&model, &net)?;
            let rows = cold_start_table(
                &ck.model,
                &store,
                &net,
                &trajs,
                &s.drop_rates,
                s.seed,
                s.detector(),
                s.phi,
            )?;
            write_json(out.as_deref(), &json!({ "rows": rows }))
        }
        Command::Bench {
            network,
            trajectories,
            stats,
            model,
            repeats,
            out,
        } => {
            let net = load_net(&network)?;
            let trajs = load_trajs(&trajectories, &net)?;
            let store = load_stats(&stats, &net, s)?;
            let ck = load_model(&model, &net)?;
            let rep = bench(
                &ck.model,
                &store,
                &net,
                &trajs,
                s.detector(),
                repeats.max(1),
            )?;
            write_json(out.as_deref(), &rep)
        }
    }
}

fn cmd_gen(out: &Path, cfg: &SynthConfig, drift: bool, test_frac: f64, seed: u64) -> Result<()> {
    if !(0.0..=1.0).contains(&test_frac) {
        return Err(Error::Config(format!(
            "test_frac must lie in [0,1], got {test_frac}"
        )));
    }
    let (net, trajs, manifest) = if drift {
        let d = drift_scenario(cfg)?;
        let mut all = d.part1;
        all.extend(d.part2);
        (d.net, all, d.manifest)
    } else {
        let w = generate(cfg)?;
        (w.net, w.trajectories, w.manifest)
    };
    fs::create_dir_all(out)?;
    let mut w = create(&out.join("network.json"))?;
    net.write(&mut w)?;
    w.flush()?;
    let (train, test) = split(&trajs, test_frac, seed, "test");
    for (name, set) in [
        ("trajectories.jsonl", &trajs),
        ("train.jsonl", &train),
        ("test.jsonl", &test),
    ] {
        let mut w = create(&out.join(name))?;
        write_trajectories(&mut w, set, &net)?;
        w.flush()?;
    }
    let mut w = create(&out.join("manifest.json"))?;
    w.write_all(manifest.to_json()?.as_bytes())?;
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum StreamCommand {
    Open {
        traj: String,
        sd: (String, String),
        start: i64,
    },
    Point {
        traj: String,
        seg: String,
        #[serde(default)]
        last: bool,
    },
}

fn cmd_stream(
    reader: Box<dyn BufRead + '_>,
    w: &mut dyn Write,
    model: &Model,
    store: &StatsStore,
    net: &RoadNetwork,
    s: &Settings,
) -> Result<()> {
    let mut sessions: HashMap<String, DetectionSession<'_>> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cmd: StreamCommand = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let events = match cmd {
            StreamCommand::Open { traj, sd, start } => {
                if sessions.contains_key(&traj) {
                    return Err(Error::Stream(format!(
                        "line {lineno}: trajectory {traj:?} is already open"
                    )));
                }
                let sd = SdPair {
                    source: net.segment_id(&sd.0)?,
                    destination: net.segment_id(&sd.1)?,
                };
                let session = DetectionSession::open(
                    model,
                    store,
                    net,
                    traj.clone(),
                    sd,
                    start,
                    s.detector(),
                );
                sessions.insert(traj, session);
                Vec::new()
            }
            StreamCommand::Point { traj, seg, last } => {
                let session = sessions.get_mut(&traj).ok_or_else(|| {
                    Error::Stream(format!("line {lineno}: trajectory {traj:?} is not open"))
                })?;
                let seg = net.segment_id(&seg)?;
                let events = session
                    .push_point(seg, last)
                    .map_err(|e| Error::Stream(format!("line {lineno}: {e}")))?;
                if last {
                    sessions.remove(&traj);
                }
                events
            }
        };
        for ev in &events {
            writeln!(w, "{}", ev.to_json())?;
        }
        w.flush()?;
    }
    if let Some(open) = sessions.keys().min() {
        return Err(Error::Stream(format!(
            "input ended with {} open trajectories (first: {open:?})",
            sessions.len()
        )));
    }
    Ok(())
}

/// `id -> labels` from JSONL lines carrying "id" and "labels".
fn read_truth(path: &Path) -> Result<Vec<(String, Vec<Label>)>> {
    #[derive(Deserialize)]
    struct Rec {
        id: String,
        labels: Option<Vec<Label>>,
    }
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("{}: {e}", path.display()),
        })?;
        let labels = rec
            .labels
            .ok_or_else(|| Error::Validation(format!("trajectory {:?} has no labels", rec.id)))?;
        out.push((rec.id, labels));
    }
    Ok(out)
}

enum Pred {
    Labels(Vec<Label>),
    Runs(Vec<(usize, usize)>),
}

fn read_pred(path: &Path) -> Result<HashMap<String, Pred>> {
    let mut out: HashMap<String, Pred> = HashMap::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| Error::Parse {
            line: i + 1,
            message: format!("{}: {e}", path.display()),
        };
        let v: Value = serde_json::from_str(&line).map_err(parse_err)?;
        if v.get("event").is_some() {
            let ev: DetectionEvent = serde_json::from_value(v).map_err(parse_err)?;
            let entry = out
                .entry(ev.traj().to_string())
                .or_insert(Pred::Runs(Vec::new()));
            if let (
                Pred::Runs(runs),
                DetectionEvent::Anomaly {
                    start_idx, end_idx, ..
                },
            ) = (entry, &ev)
            {
                runs.push((*start_idx, *end_idx));
            }
        } else {
            #[derive(Deserialize)]
            struct Rec {
                id: String,
                labels: Vec<Label>,
            }
            let rec: Rec = serde_json::from_value(v).map_err(parse_err)?;
            out.insert(rec.id, Pred::Labels(rec.labels));
        }
    }
    Ok(out)
}

fn cmd_eval(truth: &Path, pred: &Path, out: Option<&Path>, s: &Settings) -> Result<()> {
    let truth = read_truth(truth)?;
    let mut pred = read_pred(pred)?;
    let mut corpus = LabeledCorpus::new();
    for (id, gt) in truth {
        let detected = match pred.remove(&id) {
            None => {
                return Err(Error::Validation(format!(
                    "no prediction for trajectory {id:?}"
                )))
            }
            Some(Pred::Labels(l)) => l,
            Some(Pred::Runs(runs)) => {
                let mut l = vec![0; gt.len()];
                for (a, b) in runs {
                    if a > b || b >= l.len() {
                        return Err(Error::Validation(format!(
                            "trajectory {id:?}: anomaly span {a}..={b} outside {} positions",
                            l.len()
                        )));
                    }
                    l[a..=b].fill(1);
                }
                l
            }
        };
        corpus.push(id, gt, detected)?;
    }
    if let Some(extra) = pred.keys().min() {
        return Err(Error::Validation(format!(
            "prediction for unknown trajectory {extra:?}"
        )));
    }
    let report = evaluate(&corpus, s.phi)?;
    match out {
        Some(p) => {
            write_json(Some(p), &report)?;
            println!("{report}");
        }
        None => {
            write_json(None, &report)?;
            eprintln!("{report}");
        }
    }
    Ok(())
}
