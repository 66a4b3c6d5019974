use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use bcl_core::clusterer::{
    cut_k, cut_threshold, gmeans, hac_complete, kmeans, xmeans, ClusterAssignment, DEFAULT_SIGNIFICANCE,
};
use bcl_core::data::{
    embed_tracks, load_features, mine_pairs, save_features, synth_generate, synth_generate_episodes, write_manifest,
    zipf_track_counts, DatasetManifest, Nuisance, SynthSpec, Timeline, TrackDataset,
};
use bcl_core::losses::LossKind;
use bcl_core::metrics::{curves_to_csv, evaluate, operating_point, sweep_curves};
use bcl_core::trainer::{self, load_model, save_model, Architecture, FinetuneConfig, MlpModel, TrainConfig};
use bcl_core::{Matrix, SpaceKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::manifest::{default_path, Recorder};
use crate::{BenchArgs, CliError, ClusterArgs, EvalArgs, FinetuneArgs, SweepArgs, SynthArgs, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn finish(rec: Recorder, explicit: Option<&Path>, main_output: Option<&Path>) -> Result<()> {
    match (explicit, main_output) {
        (Some(p), _) => rec.finish(p),
        (None, Some(out)) => rec.finish(&default_path(out)),
        (None, None) => Ok(()),
    }
}

fn load(rec: &mut Recorder, path: &Path) -> Result<TrackDataset> {
    rec.input(path);
    Ok(load_features(path)?)
}

/// Seeded stream for weight initialisation, distinct from the training stream.
fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(1);
    r
}

pub fn synth(a: &SynthArgs, manifest: Option<&Path>) -> Result<()> {
    let mut rec = Recorder::new("synth");
    let spec = SynthSpec {
        num_identities: a.k,
        zipf_s: a.zipf,
        max_tracks: a.max_tracks,
        frames_min: a.frames_min,
        frames_max: a.frames_max,
        dim: a.dim,
        separation: a.separation,
        within_std: a.within_std,
        nuisance: (a.nuisance_dims > 0).then_some(Nuisance {
            dims: a.nuisance_dims,
            std: a.nuisance_std,
        }),
        timeline: a.horizon.map(|horizon| Timeline {
            horizon,
            max_gap: a.max_gap,
        }),
    };
    rec.seed(a.seed);
    rec.config(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let episodes = if a.outs.len() == 1 {
        vec![synth_generate(&spec, &mut rng)?]
    } else {
        synth_generate_episodes(&spec, a.outs.len(), &mut rng)?
    };
    rec.lap("generate");
    for (ds, out) in episodes.iter().zip(&a.outs) {
        save_features(ds, out)?;
        write_manifest(
            out,
            &DatasetManifest {
                name: out
                    .file_name()
                    .map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
                seed: Some(a.seed),
                generator: Some(spec.clone()),
                track_count: ds.len(),
                identity_count: ds.identity_count(),
                input_dim: ds.input_dim(),
            },
        )?;
        rec.output(out);
        println!(
            "{}: {} tracks, {} identities",
            out.display(),
            ds.len(),
            ds.present_identities()
        );
    }
    rec.lap("write");
    finish(rec, manifest, a.outs.first().map(|p| p.as_path()))
}

pub fn stat(path: &Path, manifest: Option<&Path>) -> Result<()> {
    let mut rec = Recorder::new("stat");
    let ds = load(&mut rec, path)?;
    let out = json!({
        "track_count": ds.len(),
        "identity_count": ds.identity_count(),
        "present_identities": ds.present_identities(),
        "input_dim": ds.input_dim(),
        "frame_count": ds.frame_count(),
        "has_spans": ds.has_spans(),
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    finish(rec, manifest, None)
}

fn architecture(a: &TrainArgs, input_dim: usize) -> Result<Architecture> {
    let mut arch = Architecture::for_input(input_dim);
    if let Some(h) = &a.hidden {
        arch.hidden = h[..]
            .try_into()
            .map_err(|_| CliError::Usage(format!("--hidden takes exactly 3 widths, got {}", h.len())))?;
    }
    if let Some(d) = a.out_dim {
        arch.output_dim = d;
    }
    if arch.widths().contains(&0) {
        return Err(CliError::Usage("layer widths must be positive".into()));
    }
    Ok(arch)
}

#[derive(Serialize)]
struct TrainSnapshot<'a> {
    #[serde(flatten)]
    config: &'a TrainConfig,
    space: SpaceKind,
    architecture: [usize; 5],
}

pub fn train(a: &TrainArgs, manifest: Option<&Path>) -> Result<()> {
    let mut rec = Recorder::new("train");
    let train_ds = load(&mut rec, &a.train)?;
    let val = match &a.val {
        Some(p) => Some(load(&mut rec, p)?),
        None => None,
    };
    rec.lap("load");
    let config = TrainConfig {
        learning_rate: a.lr,
        momentum: a.momentum,
        batch_size: a.batch,
        epochs: a.epochs,
        alpha: a.alpha,
        epsilon: a.epsilon,
        seed: a.seed,
        loss: a.loss,
        triplet_margin: a.margin,
        ..TrainConfig::default()
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let arch = architecture(a, train_ds.input_dim())?;
    rec.seed(a.seed);
    rec.config(TrainSnapshot {
        config: &config,
        space: a.space,
        architecture: arch.widths(),
    });
    let model = MlpModel::init(arch, a.space, &mut init_rng(a.seed))?;
    let outcome = trainer::train(&train_ds, val.as_ref(), model, &config)?;
    rec.lap("train");
    save_model(&outcome.model, &a.out)?;
    let report = a.report.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".csv");
        s.into()
    });
    write(&report, &outcome.report.to_csv())?;
    rec.output(&a.out);
    rec.output(&report);
    rec.lap("write");
    println!(
        "b: {:?}\ntau: {:?}\nbest_epoch: {}",
        outcome.model.b(),
        4.0 * outcome.model.b(),
        outcome.report.best_epoch
    );
    if let Some(v) = outcome
        .report
        .epochs
        .iter()
        .find(|r| r.epoch == outcome.report.best_epoch)
        .and_then(|r| r.validation)
    {
        println!(
            "val: clusters {} nmi {:.4} wcp {:.4}",
            v.num_clusters,
            100.0 * v.nmi,
            100.0 * v.wcp
        );
    }
    finish(rec, manifest, Some(&a.out))
}

pub fn finetune(a: &FinetuneArgs, manifest: Option<&Path>) -> Result<()> {
    let mut rec = Recorder::new("finetune");
    rec.input(&a.model);
    let model = load_model(&a.model)?;
    let ds = load(&mut rec, &a.data)?;
    rec.lap("load");
    let config = FinetuneConfig {
        learning_rate: a.lr,
        iterations: a.iterations,
        pairs_per_iteration: a.pairs_per_iteration,
        seed: a.seed,
        ..FinetuneConfig::default()
    };
    rec.seed(a.seed);
    rec.config(json!({ "finetune": &config, "max_pairs": a.max_pairs }));
    let pairs = mine_pairs(&ds, &model, a.max_pairs, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    rec.lap("mine");
    println!(
        "pairs: {} positive, {} negative",
        pairs.positives.len(),
        pairs.negatives.len()
    );
    let tuned = trainer::finetune(model, &ds, &pairs, &config)?;
    rec.lap("finetune");
    save_model(&tuned, &a.out)?;
    rec.output(&a.out);
    rec.lap("write");
    finish(rec, manifest, Some(&a.out))
}

enum Mode {
    Tau4b,
    Threshold(f64),
    K(usize),
    KMeans(usize),
    XMeans,
    GMeans,
}

fn parse_mode(s: &str) -> Result<Mode> {
    let bad = || {
        CliError::Usage(format!(
            "unknown mode {s:?}; expected tau4b, threshold=T, k=K, kmeans=K, xmeans or gmeans"
        ))
    };
    let (name, value) = match s.split_once('=') {
        Some((n, v)) => (n, Some(v)),
        None => (s, None),
    };
    let count =
        |v: Option<&str>| -> Result<usize> { v.and_then(|v| v.parse().ok()).filter(|&k| k > 0).ok_or_else(bad) };
    Ok(match name {
        "tau4b" if value.is_none() => Mode::Tau4b,
        "threshold" => Mode::Threshold(
            value
                .and_then(|v| v.parse().ok())
                .filter(|t: &f64| t.is_finite())
                .ok_or_else(bad)?,
        ),
        "k" => Mode::K(count(value)?),
        "kmeans" => Mode::KMeans(count(value)?),
        "xmeans" if value.is_none() => Mode::XMeans,
        "gmeans" if value.is_none() => Mode::GMeans,
        _ => return Err(bad()),
    })
}

fn assignment_csv(ds: &TrackDataset, pred: &ClusterAssignment) -> String {
    let mut s = String::from("track,cluster\n");
    for (t, c) in ds.tracks().iter().zip(pred.labels()) {
        let _ = writeln!(s, "{},{}", t.id, c);
    }
    s
}

pub fn cluster(a: &ClusterArgs, manifest: Option<&Path>) -> Result<()> {
    let mut rec = Recorder::new("cluster");
    let mode = parse_mode(&a.mode)?;
    let model = match &a.model {
        Some(p) => {
            rec.input(p);
            Some(load_model(p)?)
        }
        None => None,
    };
    let ds = load(&mut rec, &a.data)?;
    rec.seed(a.seed);
    rec.config(json!({ "mode": a.mode, "k_max": a.k_max, "embedded": model.is_some() }));
    rec.lap("load");
    let points: Matrix = match &model {
        Some(m) => embed_tracks(m, &ds)?,
        None => ds.mean_features(),
    };
    rec.lap("embed");
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let hac = |points: &Matrix| -> Result<_> {
        let d = hac_complete(points)?;
        if let Some(p) = &a.dendrogram {
            write(p, &d.to_text())?;
        }
        Ok(d)
    };
    let pred = match mode {
        Mode::Tau4b => {
            let m = model
                .as_ref()
                .ok_or_else(|| CliError::Usage("mode tau4b needs --model".into()))?;
            let tau = 4.0 * m.b();
            println!("tau: {tau:?}");
            cut_threshold(&hac(&points)?, tau)
        }
        Mode::Threshold(tau) => {
            println!("tau: {tau:?}");
            cut_threshold(&hac(&points)?, tau)
        }
        Mode::K(k) => cut_k(&hac(&points)?, k)?,
        Mode::KMeans(k) => kmeans(&points, k, &mut rng)?,
        Mode::XMeans => xmeans(&points, a.k_max, &mut rng)?,
        Mode::GMeans => gmeans(&points, DEFAULT_SIGNIFICANCE, a.k_max, &mut rng)?,
    };
    rec.lap("cluster");
    println!("clusters: {}", pred.num_clusters());
    write(&a.out, &assignment_csv(&ds, &pred))?;
    rec.output(&a.out);
    if let Some(p) = &a.dendrogram {
        rec.output(p);
    }
    rec.lap("write");
    finish(rec, manifest, Some(&a.out))
}

/// Reads a `track,cluster` CSV and orders it like the tracks of `ds`.
fn read_assignment(path: &Path, ds: &TrackDataset) -> Result<ClusterAssignment> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut by_track: HashMap<u64, u64> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("track")) {
            continue;
        }
        let bad = || {
            CliError::Data(format!(
                "{}:{}: expected `track,cluster`, got {line:?}",
                path.display(),
                i + 1
            ))
        };
        let (t, c) = line.split_once(',').ok_or_else(bad)?;
        let t: u64 = t.trim().parse().map_err(|_| bad())?;
        let c: u64 = c.trim().parse().map_err(|_| bad())?;
        if by_track.insert(t, c).is_some() {
            return Err(CliError::Data(format!(
                "{}:{}: track {t} listed twice",
                path.display(),
                i + 1
            )));
        }
    }
    if by_track.len() != ds.len() {
        return Err(CliError::Data(format!(
            "{} assigns {} tracks, dataset has {}",
            path.display(),
            by_track.len(),
            ds.len()
        )));
    }
    let labels = ds
        .tracks()
        .iter()
        .map(|t| {
            by_track
                .get(&t.id)
                .copied()
                .ok_or_else(|| CliError::Data(format!("{} has no entry for track {}", path.display(), t.id)))
        })
        .collect::<Result<Vec<u64>>>()?;
    Ok(ClusterAssignment::from_labels(&labels))
}

pub fn eval(a: &EvalArgs, manifest: Option<&Path>) -> Result<()> {
    let mut rec = Recorder::new("eval");
    let truth = load(&mut rec, &a.truth)?;
    rec.input(&a.pred);
    let pred = read_assignment(&a.pred, &truth)?;
    let m = evaluate(&pred, &truth.labels())?;
    let out = json!({
        "num_clusters": m.num_clusters,
        "nmi": 100.0 * m.nmi,
        "wcp": 100.0 * m.wcp,
    });
    let text = serde_json::to_string_pretty(&out).expect("json") + "\n";
    print!("{text}");
    if let Some(p) = &a.out {
        write(p, &text)?;
        rec.output(p);
    }
    rec.lap("eval");
    finish(rec, manifest, a.out.as_deref())
}

pub fn sweep(a: &SweepArgs, manifest: Option<&Path>) -> Result<()> {
    let mut rec = Recorder::new("sweep");
    rec.input(&a.model);
    let model = load_model(&a.model)?;
    let ds = load(&mut rec, &a.data)?;
    rec.lap("load");
    let tau = a.tau.unwrap_or(4.0 * model.b());
    rec.config(json!({ "tau": tau, "max_points": a.max_points }));
    let d = hac_complete(&embed_tracks(&model, &ds)?)?;
    let truth = ds.labels();
    let curve = sweep_curves(&d, &truth, a.max_points)?;
    let op = operating_point(&d, &truth, tau)?;
    rec.lap("sweep");
    write(&a.out, &curves_to_csv(&curve, Some(&op)))?;
    rec.output(&a.out);
    println!(
        "operating point: tau {tau:?}, clusters {}, nmi {:.4}, wcp {:.4}",
        op.num_clusters,
        100.0 * op.nmi,
        100.0 * op.wcp
    );
    finish(rec, manifest, Some(&a.out))
}

/// 450 identities with at least 2000 tracks in total.
fn bench_dataset(seed: u64) -> Result<TrackDataset> {
    let k = 450;
    let m = (1..)
        .find(|&m| zipf_track_counts(k, m, 1.2).iter().sum::<usize>() >= 2000)
        .expect("counts grow with max_tracks");
    let mut spec = SynthSpec::new(k, 32);
    spec.max_tracks = m;
    spec.within_std = 0.02;
    spec.frames_max = 4;
    Ok(synth_generate(&spec, &mut ChaCha8Rng::seed_from_u64(seed))?)
}

pub fn bench(a: &BenchArgs, manifest: Option<&Path>) -> Result<()> {
    let mut rec = Recorder::new("bench");
    if a.runs == 0 {
        return Err(CliError::Usage("--runs must be positive".into()));
    }
    let ds = match &a.data {
        Some(p) => load(&mut rec, p)?,
        None => bench_dataset(a.seed)?,
    };
    let losses = a.losses.clone().unwrap_or_else(|| LossKind::ALL.to_vec());
    rec.seed(a.seed);
    rec.config(json!({
        "batch": a.batch,
        "runs": a.runs,
        "losses": losses.iter().map(|l| l.name()).collect::<Vec<_>>(),
        "space": a.space,
        "tracks": ds.len(),
    }));
    rec.lap("load");
    let arch = Architecture::for_input(ds.input_dim());
    let mut table = String::from("loss,mean_seconds");
    for r in 1..=a.runs {
        let _ = write!(table, ",run{r}");
    }
    table.push('\n');
    for &loss in &losses {
        let config = TrainConfig {
            epochs: 1,
            batch_size: a.batch,
            loss,
            seed: a.seed,
            ..TrainConfig::default()
        };
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let mut times = Vec::with_capacity(a.runs);
        for _ in 0..a.runs {
            let model = MlpModel::init(arch, a.space, &mut init_rng(a.seed))?;
            let t = Instant::now();
            trainer::train(&ds, None, model, &config)?;
            times.push(t.elapsed().as_secs_f64());
        }
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        let _ = write!(table, "{},{mean:.6}", loss.name());
        for t in &times {
            let _ = write!(table, ",{t:.6}");
        }
        table.push('\n');
    }
    rec.lap("bench");
    print!("{table}");
    if let Some(p) = &a.out {
        write(p, &table)?;
        rec.output(p);
    }
    finish(rec, manifest, a.out.as_deref())
}
