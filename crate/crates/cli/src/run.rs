use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use eventdehaze::diffusion::{NoiseSchedule, SamplerKind};
use eventdehaze::events::{read_events, write_events, EventFormat};
use eventdehaze::exec::init_threads;
use eventdehaze::haze::{intensity_histogram, synthesize_haze, transmission_from_depth, HazeParams, Transmission};
use eventdehaze::image::{load_image, save_image};
use eventdehaze::pipeline::config::{parse_kv, Pairs};
use eventdehaze::pipeline::{
    ablate, build_toy_dataset, evaluate, load_dataset, save_dataset, train_toy, visualize_feature, AblationGrid,
    DatasetConfig, EvalConfig, ToyModel, TrainConfig,
};
use eventdehaze::sim::{render_trajectory, simulate_events_with, MotionTrajectory, SimConfig};
use eventdehaze::tensor::{load_tensor, save_tensor};
use eventdehaze::tpr::{build_tpr, PolarityMode, PyramidAnchor, TemporalPyramid, TprOptions};
use eventdehaze::{Error, ExecMode, Result, Rng};

use crate::args::*;
use crate::manifest::RunManifest;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn path_kv(k: &str, p: &Path) -> (String, String) {
    kv(k, p.display())
}

/// Outputs of the current run, removed again if the run fails.
struct Outputs {
    root: PathBuf,
    /// `(path, remove_whole_dir)`; directories are only removed when this
    /// run created them.
    written: Vec<(PathBuf, bool)>,
}

impl Outputs {
    fn file(&mut self, rel: &Path) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        self.written.push((p.clone(), false));
        Ok(p)
    }

    fn dir(&mut self, rel: &Path) -> Result<PathBuf> {
        let p = self.root.join(rel);
        let fresh = !p.exists();
        fs::create_dir_all(&p).map_err(io_err(&p))?;
        self.written.push((p.clone(), fresh));
        Ok(p)
    }

    fn discard(&self) {
        for (p, whole_dir) in &self.written {
            let _ = if *whole_dir {
                fs::remove_dir_all(p)
            } else {
                fs::remove_file(p)
            };
        }
    }

    fn listing(&self) -> Vec<PathBuf> {
        self.written
            .iter()
            .map(|(p, _)| p.strip_prefix(&self.root).unwrap_or(p).to_path_buf())
            .collect()
    }
}

struct Ctx {
    seed: Option<u64>,
    mode: ExecMode,
    out: Outputs,
}

/// Run one verb; on success returns the manifest path.
pub fn execute(cli: Cli, args: &[String]) -> Result<PathBuf> {
    let start = Instant::now();
    if cli.threads == 0 {
        return Err(Error::Domain("--threads must be at least 1".into()));
    }
    init_threads(cli.threads);
    fs::create_dir_all(&cli.out_dir).map_err(io_err(&cli.out_dir))?;
    let mut ctx = Ctx {
        seed: cli.seed,
        mode: if cli.threads > 1 {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        },
        out: Outputs {
            root: cli.out_dir.clone(),
            written: Vec::new(),
        },
    };
    let verb = cli.verb.name();
    let result = match &cli.verb {
        Verb::SimulateEvents(a) => simulate(&mut ctx, a),
        Verb::MakeHaze(a) => make_haze(&mut ctx, a),
        Verb::Histogram(a) => histogram(&mut ctx, a),
        Verb::BuildTpr(a) => tpr(&mut ctx, a),
        Verb::MakeDataset(a) => make_dataset(&mut ctx, a),
        Verb::TrainToy(a) => train(&mut ctx, a),
        Verb::Sample(a) => sample(&mut ctx, a),
        Verb::Evaluate(a) => eval(&mut ctx, a),
        Verb::Ablate(a) => run_ablation(&mut ctx, a),
        Verb::VisualizeXe(a) => visualize(&mut ctx, a),
    };
    let (seed, config) = match result {
        Ok(r) => r,
        Err(e) => {
            ctx.out.discard();
            return Err(e);
        }
    };
    let manifest = RunManifest {
        verb: verb.to_string(),
        args: args.to_vec(),
        seed,
        config,
        outputs: ctx.out.listing(),
        wall: start.elapsed(),
    };
    manifest.write_atomic(&cli.out_dir).map_err(|source| Error::Io {
        path: cli.out_dir.join(RunManifest::file_name(verb)),
        source,
    })
}

/// Effective seed and settings of a finished verb.
type Settled = Result<(Option<u64>, Pairs)>;

fn simulate(ctx: &mut Ctx, a: &SimulateEvents) -> Settled {
    let img = load_image(&a.image)?.luminance();
    let text = fs::read_to_string(&a.traj).map_err(io_err(&a.traj))?;
    let traj = MotionTrajectory::parse_csv(&text, &a.traj)?.densify(a.substeps)?;
    let format = event_format(&a.out)?;
    let cfg = SimConfig {
        c_pos: a.cpos,
        c_neg: a.cneg,
        refractory: a.refractory,
        ..SimConfig::default()
    };
    let frames = render_trajectory(&img, &traj)?;
    let stream = simulate_events_with(&frames, &cfg, ctx.mode)?;
    write_events(&stream, ctx.out.file(&a.out)?, format)?;
    eprintln!("{} events from {} frames", stream.len(), frames.len());
    Ok((
        None,
        vec![
            path_kv("image", &a.image),
            path_kv("traj", &a.traj),
            kv("cpos", a.cpos),
            kv("cneg", a.cneg),
            kv("refractory", a.refractory),
            kv("substeps", a.substeps),
        ],
    ))
}

fn event_format(p: &Path) -> Result<EventFormat> {
    EventFormat::from_path(p)
        .ok_or_else(|| Error::Domain(format!("{}: event files need a .csv or .bin extension", p.display())))
}

fn make_haze(ctx: &mut Ctx, a: &MakeHaze) -> Settled {
    let clean = load_image(&a.clean)?;
    let (transmission, source) = match (&a.depth, a.transmission) {
        (Some(d), _) => (
            Transmission::Map(transmission_from_depth(&load_tensor(d)?, a.beta)?),
            path_kv("depth", d),
        ),
        (None, Some(t)) => (Transmission::Constant(t), kv("transmission", t)),
        (None, None) => unreachable!("clap requires one of --depth, --transmission"),
    };
    let hazy = synthesize_haze(&clean, &HazeParams::new(vec![a.airlight], transmission)?)?;
    save_image(&hazy, ctx.out.file(&a.out)?)?;
    Ok((
        None,
        vec![
            path_kv("clean", &a.clean),
            source,
            kv("beta", a.beta),
            kv("airlight", a.airlight),
        ],
    ))
}

fn histogram(ctx: &mut Ctx, a: &HistogramArgs) -> Settled {
    let img = load_image(&a.image)?;
    let h = intensity_histogram(&img, a.bins)?;
    let mut csv = String::from("bin,lo,hi,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        let lo = i as f64 / a.bins as f64;
        let hi = (i + 1) as f64 / a.bins as f64;
        csv.push_str(&format!("{i},{lo:.6},{hi:.6},{c}\n"));
    }
    let out = ctx.out.file(&a.out)?;
    fs::write(&out, csv).map_err(io_err(&out))?;
    eprintln!(
        "min {:.4} max {:.4} spread {:.4} dr {:.2}",
        h.min, h.max, h.spread, h.dr_ratio
    );
    Ok((None, vec![path_kv("image", &a.image), kv("bins", a.bins)]))
}

fn tpr(ctx: &mut Ctx, a: &BuildTpr) -> Settled {
    let geometry = match (a.width, a.height) {
        (Some(w), Some(h)) => Some((w, h)),
        (None, None) => None,
        _ => return Err(Error::Domain("--width and --height go together".into())),
    };
    let stream = read_events(&a.events, event_format(&a.events)?, geometry)?;
    let opts = TprOptions {
        anchor: match a.anchor {
            AnchorArg::End => PyramidAnchor::End,
            AnchorArg::Start => PyramidAnchor::Start,
        },
        polarity: match a.polarity {
            PolarityArg::Signed => PolarityMode::Signed,
            PolarityArg::Split => PolarityMode::Split,
        },
        normalize: a.normalize,
    };
    let p = build_tpr(&stream, a.t0, a.t1, a.levels, a.bins, opts)?;
    save_tensor(&p.grid, ctx.out.file(&a.out)?)?;
    Ok((
        None,
        vec![
            path_kv("events", &a.events),
            kv("t0", a.t0),
            kv("t1", a.t1),
            kv("levels", a.levels),
            kv("bins", a.bins),
            kv("anchor", format!("{:?}", opts.anchor).to_lowercase()),
            kv("polarity", format!("{:?}", opts.polarity).to_lowercase()),
            kv("normalize", a.normalize),
        ],
    ))
}

fn read_config(path: &Option<PathBuf>) -> Result<Pairs> {
    match path {
        Some(p) => parse_kv(&fs::read_to_string(p).map_err(io_err(p))?, p),
        None => Ok(Vec::new()),
    }
}

fn make_dataset(ctx: &mut Ctx, a: &MakeDataset) -> Settled {
    let mut cfg = DatasetConfig::default();
    cfg.apply(&read_config(&a.config)?)?;
    cfg.apply(&a.set.pairs)?;
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let pairs = build_toy_dataset(&cfg, ctx.mode)?;
    let dir = ctx.out.dir(&a.out)?;
    save_dataset(&dir, &cfg, &pairs)?;
    let events: usize = pairs.iter().map(|p| p.events.len()).sum();
    eprintln!("{} pairs, {} events", pairs.len(), events);
    Ok((Some(cfg.seed), cfg.to_pairs()))
}

fn train_config(ctx: &Ctx, file: &Option<PathBuf>, set: &Pairs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    cfg.apply(&read_config(file)?)?;
    cfg.apply(set)?;
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

const TRAIN_PREFIX: &str = "train.";

fn train(ctx: &mut Ctx, a: &TrainToy) -> Settled {
    let cfg = train_config(ctx, &a.config, &a.set.pairs)?;
    let (dcfg, pairs) = load_dataset(&a.dataset)?;
    let n = a.train_count.unwrap_or(pairs.len());
    if n == 0 || n > pairs.len() {
        return Err(Error::Domain(format!(
            "{}: --train-count {n} outside 1..={}",
            a.dataset.display(),
            pairs.len()
        )));
    }
    let outcome = train_toy(&cfg, &pairs[..n], ctx.mode)?;
    let mut extra: Pairs = cfg
        .to_pairs()
        .into_iter()
        .map(|(k, v)| (format!("{TRAIN_PREFIX}{k}"), v))
        .collect();
    extra.push(kv("dataset.levels", dcfg.levels));
    extra.push(kv("dataset.bins", dcfg.bins));
    outcome.model.save(ctx.out.dir(&a.checkpoint)?, &extra)?;
    let log = ctx.out.file(&a.log)?;
    fs::write(&log, outcome.log.to_csv()).map_err(io_err(&log))?;
    let iters = outcome.log.records.len();
    let k = iters.min(10);
    eprintln!(
        "eps loss: first {k} iterations {:.4}, last {k} {:.4}",
        outcome.log.mean_eps_loss(0, k),
        outcome.log.mean_eps_loss(iters - k, iters)
    );
    let mut settings = cfg.to_pairs();
    settings.push(path_kv("dataset", &a.dataset));
    settings.push(kv("train_count", n));
    Ok((Some(cfg.seed), settings))
}

/// The noise schedule a checkpoint was trained with.
fn checkpoint_schedule(meta: &Pairs) -> Result<NoiseSchedule> {
    let train: Pairs = meta
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(TRAIN_PREFIX).map(|k| (k.to_string(), v.clone())))
        .collect();
    let mut cfg = TrainConfig::default();
    cfg.apply(&train)?;
    cfg.schedule()
}

fn meta_usize(meta: &Pairs, key: &str) -> Option<usize> {
    meta.iter().find(|(k, _)| k == key).and_then(|(_, v)| v.parse().ok())
}

fn load_pyramid(path: &Path, meta: &Pairs) -> Result<TemporalPyramid> {
    let grid = load_tensor(path)?;
    let channels = grid.dims().first().copied().unwrap_or(0);
    let (levels, bins) = match (meta_usize(meta, "dataset.levels"), meta_usize(meta, "dataset.bins")) {
        (Some(l), Some(b)) if l * b == channels => (l, b),
        _ => (channels, 1),
    };
    Ok(TemporalPyramid { levels, bins, grid })
}

fn sampler_kind(a: &SamplerArgs) -> SamplerKind {
    match a.sampler {
        SamplerArg::Ddpm => SamplerKind::Ddpm { steps: a.steps },
        SamplerArg::Ddim => SamplerKind::Ddim {
            steps: a.steps,
            eta: a.eta,
        },
    }
}

fn sampler_settings(a: &SamplerArgs) -> Pairs {
    vec![kv("sampler", sampler_kind(a).label()), kv("init", a.init)]
}

fn sample(ctx: &mut Ctx, a: &Sample) -> Settled {
    let seed = ctx.seed.unwrap_or(0);
    let (model, meta) = ToyModel::load(&a.checkpoint)?;
    let sched = checkpoint_schedule(&meta)?;
    let hazy = load_image(&a.hazy)?;
    let tpr = match &a.cond_events {
        Some(p) => Some(load_pyramid(p, &meta)?),
        None => None,
    };
    let out = model.dehaze(
        &hazy,
        tpr.as_ref(),
        sampler_kind(&a.sampler),
        a.sampler.init,
        &sched,
        &mut Rng::new(seed),
    )?;
    save_image(&out, ctx.out.file(&a.out)?)?;
    let mut settings = vec![path_kv("checkpoint", &a.checkpoint), path_kv("hazy", &a.hazy)];
    if let Some(p) = &a.cond_events {
        settings.push(path_kv("cond_events", p));
    }
    settings.extend(sampler_settings(&a.sampler));
    Ok((Some(seed), settings))
}

fn eval(ctx: &mut Ctx, a: &Evaluate) -> Settled {
    let seed = ctx.seed.unwrap_or(0);
    let (model, meta) = ToyModel::load(&a.checkpoint)?;
    let sched = checkpoint_schedule(&meta)?;
    let (_, pairs) = load_dataset(&a.dataset)?;
    if a.skip >= pairs.len() {
        return Err(Error::Domain(format!(
            "{}: --skip {} leaves no pairs of {}",
            a.dataset.display(),
            a.skip,
            pairs.len()
        )));
    }
    let cfg = EvalConfig {
        sampler: sampler_kind(&a.sampler),
        init: a.sampler.init,
        seed,
    };
    let report = evaluate(&model, &pairs[a.skip..], &cfg, &sched, ctx.mode)?;
    let mut csv = String::from("index,psnr_db,ssim,hazy_spread,output_spread\n");
    for (i, s) in report.scores.iter().enumerate() {
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            a.skip + i,
            s.psnr_db,
            s.ssim,
            s.hazy_spread,
            s.output_spread
        ));
    }
    let out = ctx.out.file(&a.out)?;
    fs::write(&out, csv).map_err(io_err(&out))?;
    eprintln!(
        "psnr {:.3} dB, ssim {:.4}, spread expanded on {:.0}% of images",
        report.mean_psnr(),
        report.mean_ssim(),
        100.0 * report.spread_fraction()
    );
    let mut settings = vec![
        path_kv("checkpoint", &a.checkpoint),
        path_kv("dataset", &a.dataset),
        kv("skip", a.skip),
    ];
    settings.extend(sampler_settings(&a.sampler));
    Ok((Some(seed), settings))
}

fn run_ablation(ctx: &mut Ctx, a: &Ablate) -> Settled {
    let base = train_config(ctx, &a.config, &a.set.pairs)?;
    let (_, pairs) = load_dataset(&a.dataset)?;
    if a.train_count == 0 || a.train_count >= pairs.len() {
        return Err(Error::Domain(format!(
            "{}: --train-count {} must leave at least one of {} pairs held out",
            a.dataset.display(),
            a.train_count,
            pairs.len()
        )));
    }
    let seeds = if a.seeds.is_empty() {
        (0..3).map(|i| base.seed.wrapping_add(i)).collect()
    } else {
        a.seeds.clone()
    };
    let mut grid = AblationGrid::standard(&base, seeds.clone());
    grid.samplers = a
        .samplers
        .iter()
        .map(|s| SamplerKind::parse_label(s))
        .collect::<Result<_>>()?;
    grid.init = a.init;
    let (train, held_out) = pairs.split_at(a.train_count);
    let table = ablate(&grid, train, held_out, ctx.mode)?;
    let out = ctx.out.file(&a.out)?;
    fs::write(&out, table.to_csv()).map_err(io_err(&out))?;
    for r in table.rows.iter().filter(|r| r.seed.is_none()) {
        eprintln!("{:<28} psnr {:7.3} ssim {:.4}", r.config_label(), r.psnr_db, r.ssim);
    }
    let mut settings = base.to_pairs();
    settings.retain(|(k, _)| k != "seed" && k != "conditioning");
    settings.extend([
        path_kv("dataset", &a.dataset),
        kv("train_count", a.train_count),
        kv("seeds", seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")),
        kv("samplers", a.samplers.join(",")),
        kv("init", a.init),
    ]);
    Ok((Some(base.seed), settings))
}

fn visualize(ctx: &mut Ctx, a: &VisualizeXe) -> Settled {
    let (model, meta) = ToyModel::load(&a.checkpoint)?;
    let tpr = load_pyramid(&a.tpr, &meta)?;
    let heat = visualize_feature(&model.event_feature(&tpr)?)?;
    save_image(&heat, ctx.out.file(&a.out)?)?;
    Ok((None, vec![path_kv("checkpoint", &a.checkpoint), path_kv("tpr", &a.tpr)]))
}
