use std::path::{Path, PathBuf};
use std::time::Instant;

use affordgen::affordlab::{containability_test, default_sphere_radius, supportability_test, CubeProbe};
use affordgen::dataset::{ingest_off_directory, ClassTable, Corpus, Split};
use affordgen::vae::{load_checkpoint, save_checkpoint, train, Model, TrainReport};
use affordgen::voxcore::{
    export_sdf, inertia_of, marching_cubes_binary, read_binvox, write_binvox, DensityGrid, VoxelGrid,
};
use affordgen_server::{AffordParams, AppState, Combination, Session, DECODE_THRESHOLD};
use anyhow::{bail, Context};
use serde::Serialize;
use serde_json::json;

use crate::config::{load_classes, RunConfig};
use crate::*;

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Dataset(DatasetCommand::Gen(a)) => dataset_gen(&cfg, a),
        Command::Dataset(DatasetCommand::Ingest(a)) => dataset_ingest(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, a),
        Command::Encode(a) => encode(&cfg, a),
        Command::Essence(a) => essence(&cfg, a),
        Command::Importance(a) => importance(&cfg, a),
        Command::Combine(a) => combine(&cfg, a),
        Command::Reconstruct(a) => reconstruct(&cfg, a),
        Command::AffordTest(AffordCommand::Support(a)) => support(&cfg, a),
        Command::AffordTest(AffordCommand::Contain(a)) => contain(&cfg, a),
        Command::ExportMesh(a) => export_mesh(a),
        Command::Request(a) => request(&cfg, a),
        Command::Serve(a) => serve(&cfg, a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_grid(path: &Path) -> anyhow::Result<VoxelGrid> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    read_binvox(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write_grid(path: &Path, grid: &VoxelGrid) -> anyhow::Result<()> {
    std::fs::write(path, write_binvox(grid)).with_context(|| format!("writing {}", path.display()))
}

fn load_model(cfg: &RunConfig, checkpoint: Option<&Path>) -> anyhow::Result<Model> {
    let path = checkpoint.unwrap_or(&cfg.paths.checkpoint);
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_corpus(cfg: &RunConfig, corpus: Option<&Path>) -> anyhow::Result<Corpus> {
    let path = corpus.unwrap_or(&cfg.paths.corpus);
    Corpus::read(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn load_session(cfg: &RunConfig, paths: &ModelPaths) -> anyhow::Result<Session> {
    let model = load_model(cfg, paths.checkpoint.as_deref())?;
    let corpus = load_corpus(cfg, paths.corpus.as_deref())?;
    Ok(Session::new(model, corpus)?)
}

fn out_dir(cfg: &RunConfig, out: Option<&Path>) -> anyhow::Result<PathBuf> {
    let dir = out.unwrap_or(&cfg.paths.output).to_path_buf();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn split_of(cfg: &RunConfig, layout: &CorpusLayout) -> Option<f64> {
    if layout.no_split {
        None
    } else {
        layout.train_fraction.or(cfg.dataset.train_fraction)
    }
}

fn summarize(corpus: &Corpus, dir: &Path) {
    let train = corpus.shapes(Some(Split::Train)).len();
    println!(
        "wrote {} shapes ({} train, {} held out) in {} classes to {}",
        corpus.entries.len(),
        train,
        corpus.entries.len() - train,
        corpus.classes.0.len(),
        dir.display()
    );
}

fn dataset_gen(cfg: &RunConfig, a: GenArgs) -> anyhow::Result<()> {
    let l = &a.layout;
    let dim = l.dim.unwrap_or(cfg.dataset.dim);
    let classes = load_classes(l.classes.as_deref().or(cfg.dataset.classes.as_deref()), dim)?;
    let samples = a.samples.unwrap_or(cfg.dataset.samples_per_class);
    let corpus = Corpus::procedural(
        classes,
        dim,
        samples,
        l.seed.unwrap_or(cfg.dataset.seed),
        split_of(cfg, l),
        cfg.dataset.augment && !l.no_augment,
    )?;
    let dir = l.out.clone().unwrap_or_else(|| cfg.paths.corpus.clone());
    corpus.write(&dir)?;
    summarize(&corpus, &dir);
    Ok(())
}

fn dataset_ingest(cfg: &RunConfig, a: IngestArgs) -> anyhow::Result<()> {
    let l = &a.layout;
    let dim = l.dim.unwrap_or(cfg.dataset.dim);
    let classes = load_classes(l.classes.as_deref().or(cfg.dataset.classes.as_deref()), dim)?;
    let report = ingest_off_directory(&a.input, dim, &classes)?;
    if !report.skipped.is_empty() {
        eprintln!("skipped {} unreadable mesh file(s)", report.skipped.len());
    }
    let corpus = Corpus::assemble(
        classes,
        dim,
        report.shapes,
        l.seed.unwrap_or(cfg.dataset.seed),
        split_of(cfg, l),
        cfg.dataset.augment && !l.no_augment,
    )?;
    let dir = l.out.clone().unwrap_or_else(|| cfg.paths.corpus.clone());
    corpus.write(&dir)?;
    summarize(&corpus, &dir);
    Ok(())
}

/// Mean IoU between each grid and its thresholded mean decode.
pub fn mean_reconstruction_iou(model: &Model, grids: &[&VoxelGrid]) -> anyhow::Result<f64> {
    if grids.is_empty() {
        return Ok(f64::NAN);
    }
    let codes = model.encode_many(grids)?;
    let mut total = 0.0;
    for (g, c) in grids.iter().zip(&codes) {
        total += model.decode(&c.means)?.threshold(DECODE_THRESHOLD).iou(g);
    }
    Ok(total / grids.len() as f64)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    parameter_count: usize,
    train_count: usize,
    held_out_count: usize,
    held_out_iou: Option<f64>,
    report: &'a TrainReport,
}

fn train_cmd(cfg: &RunConfig, a: TrainArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(cfg, a.paths.corpus.as_deref())?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.input_dim = corpus.dim;
    if let Some(j) = a.latent_dim {
        model_cfg.latent_dim = j;
    }
    let mut train_cfg = cfg.train.clone();
    if let Some(v) = a.epochs {
        train_cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        train_cfg.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        train_cfg.learning_rate = v;
    }
    if let Some(v) = a.seed {
        train_cfg.rng_seed = v;
    }
    let data: Vec<VoxelGrid> = corpus.shapes(Some(Split::Train)).into_iter().map(|s| s.grid.clone()).collect();
    if data.is_empty() {
        bail!("corpus has no training shapes");
    }
    let mut model = Model::new(model_cfg, train_cfg.rng_seed, train_cfg.gamma_init)?;
    let start = Instant::now();
    let report = train(&mut model, &data, &train_cfg)?;
    let elapsed = start.elapsed();
    let ckpt = a.paths.checkpoint.unwrap_or_else(|| cfg.paths.checkpoint.clone());
    if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_checkpoint(&model, &ckpt).with_context(|| format!("writing {}", ckpt.display()))?;

    let held: Vec<&VoxelGrid> = corpus.shapes(Some(Split::HeldOut)).into_iter().map(|s| &s.grid).collect();
    let iou = (!held.is_empty()).then(|| mean_reconstruction_iou(&model, &held)).transpose()?;
    let last = report.history.last();
    println!(
        "trained {} epochs on {} shapes in {:.1} s; final loss {:.3}",
        report.history.len(),
        data.len(),
        elapsed.as_secs_f64(),
        last.map_or(f64::NAN, |s| s.loss)
    );
    if let Some(v) = iou {
        println!("held-out IoU {v:.4} over {} shapes", held.len());
    }
    println!("checkpoint {}", ckpt.display());
    if let Some(path) = a.report {
        let summary = TrainSummary {
            parameter_count: model.parameter_count(),
            train_count: data.len(),
            held_out_count: held.len(),
            held_out_iou: iou,
            report: &report,
        };
        write_json(Some(&path), &summary)?;
    }
    Ok(())
}

fn encode(cfg: &RunConfig, a: EncodeArgs) -> anyhow::Result<()> {
    let model = load_model(cfg, a.checkpoint.as_deref())?;
    let code = model.encode(&read_grid(&a.input)?)?;
    write_json(a.out.as_deref(), &code)
}

fn essence(cfg: &RunConfig, a: ClassArgs) -> anyhow::Result<()> {
    let session = load_session(cfg, &a.paths)?;
    let e = session.essence(&a.class)?;
    let dir = out_dir(cfg, a.out.as_deref())?;
    let grid = e.grid();
    write_json(Some(&dir.join(format!("essence_{}.json", a.class))), &e.essence)?;
    write_grid(&dir.join(format!("essence_{}.binvox", a.class)), &grid)?;
    println!(
        "essence of '{}' over {} shapes: {} occupied voxels, written to {}",
        a.class,
        e.essence.sample_count,
        grid.occupied_count(),
        dir.display()
    );
    Ok(())
}

fn importance(cfg: &RunConfig, a: ClassArgs) -> anyhow::Result<()> {
    let session = load_session(cfg, &a.paths)?;
    let e = session.essence(&a.class)?;
    let mut ranked: Vec<usize> = (0..e.importance.len()).collect();
    ranked.sort_by(|&x, &y| e.importance.scores[y].total_cmp(&e.importance.scores[x]).then(x.cmp(&y)));
    let body = json!({
        "class": a.class,
        "w_void": e.importance.w_void,
        "w_prior": e.importance.w_prior,
        "scores": e.importance.scores,
        "ranking": ranked,
    });
    write_json(a.out.as_deref(), &body)
}

fn afford_params(cfg: &RunConfig, f: &AffordFlags) -> AffordParams {
    AffordParams {
        probe: CubeProbe {
            side: f.probe_side.unwrap_or(cfg.afford.probe_side),
            mass: cfg.afford.probe_mass,
            flatness_tol: f.flatness_tol.unwrap_or(cfg.afford.flatness_tol),
        },
        sphere_radius: f.radius.or(cfg.afford.sphere_radius),
    }
}

/// Writes the combined grid, mesh, code, report and supportability image.
fn write_combination(dir: &Path, c: &Combination, extra: serde_json::Value) -> anyhow::Result<()> {
    write_grid(&dir.join("combined.binvox"), &c.grid)?;
    std::fs::write(dir.join("combined.obj"), marching_cubes_binary(&c.grid).to_obj())?;
    std::fs::write(dir.join("support.pgm"), c.report.supportability.to_pgm())?;
    write_json(Some(&dir.join("combined_code.json")), &c.code)?;
    let mut report = json!({
        "occupied_voxels": c.grid.occupied_count(),
        "supported_positions": c.report.supportability.supported_count(),
        "containability_ratio": c.report.containability.ratio,
        "affordance_report": c.report,
        "nearest": c.nearest,
    });
    if let (Some(obj), Some(more)) = (report.as_object_mut(), extra.as_object()) {
        obj.extend(more.clone());
    }
    write_json(Some(&dir.join("report.json")), &report)
}

fn print_combination(base: &str, top: &str, c: &Combination, dir: &Path) {
    println!("combined base '{base}' with top '{top}': {} occupied voxels", c.grid.occupied_count());
    println!(
        "supportability: {} of {} positions supported",
        c.report.supportability.supported_count(),
        c.report.supportability.supported.len()
    );
    println!(
        "containability: {} spheres, ratio {:.4}",
        c.report.containability.spheres_placed, c.report.containability.ratio
    );
    for n in &c.nearest {
        println!("nearest: {} #{} (distance {:.3})", n.class_label, n.base_index, n.distance);
    }
    println!("outputs in {}", dir.display());
}

fn combine(cfg: &RunConfig, a: CombineArgs) -> anyhow::Result<()> {
    let session = load_session(cfg, &a.paths)?;
    let c = session.combine(&a.base, &a.top, a.base_percent, a.top_percent, &afford_params(cfg, &a.afford))?;
    let dir = out_dir(cfg, a.out.as_deref())?;
    let extra = json!({ "base": a.base, "top": a.top, "base_percent": a.base_percent, "top_percent": a.top_percent });
    write_combination(&dir, &c, extra)?;
    print_combination(&a.base, &a.top, &c, &dir);
    Ok(())
}

fn reconstruct(cfg: &RunConfig, a: ReconstructArgs) -> anyhow::Result<()> {
    let model = load_model(cfg, a.checkpoint.as_deref())?;
    let input = read_grid(&a.input)?;
    let code = model.encode(&input)?;
    let mut density: DensityGrid = model.decode(&code.means)?;
    density.translate = input.translate;
    density.scale = input.scale();
    let out = density.threshold(DECODE_THRESHOLD);
    write_grid(&a.out, &out)?;
    println!("IoU {:.4}; {} occupied voxels written to {}", out.iou(&input), out.occupied_count(), a.out.display());
    Ok(())
}

fn support(cfg: &RunConfig, a: SupportArgs) -> anyhow::Result<()> {
    let grid = read_grid(&a.input)?;
    let probe = CubeProbe {
        side: a.probe_side.unwrap_or(cfg.afford.probe_side),
        mass: cfg.afford.probe_mass,
        flatness_tol: a.flatness_tol.unwrap_or(cfg.afford.flatness_tol),
    };
    let map = supportability_test(&grid, &probe)?;
    if let Some(p) = &a.pgm {
        std::fs::write(p, map.to_pgm()).with_context(|| format!("writing {}", p.display()))?;
    }
    let body = json!({
        "size": map.size,
        "footprint": map.footprint,
        "supported_count": map.supported_count(),
        "supported": map.supported,
    });
    write_json(a.out.as_deref(), &body)
}

fn contain(cfg: &RunConfig, a: ContainArgs) -> anyhow::Result<()> {
    let grid = read_grid(&a.input)?;
    let radius = a.radius.or(cfg.afford.sphere_radius).unwrap_or_else(|| default_sphere_radius(&grid));
    let r = containability_test(&grid, radius)?;
    let body = json!({
        "sphere_radius": radius,
        "spheres_placed": r.spheres_placed,
        "contained_volume": r.contained_volume,
        "bounding_box_volume": r.bounding_box_volume,
        "ratio": r.ratio,
    });
    write_json(a.out.as_deref(), &body)
}

fn export_mesh(a: ExportArgs) -> anyhow::Result<()> {
    let grid = read_grid(&a.input)?;
    let mesh = marching_cubes_binary(&grid);
    std::fs::write(&a.out, mesh.to_obj()).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{} vertices, {} triangles written to {}", mesh.vertices.len(), mesh.triangles.len(), a.out.display());
    if let Some(sdf_path) = &a.sdf {
        let inertia = inertia_of(&grid, a.mass)?;
        let export = export_sdf(&mesh, &inertia, &a.name)?;
        std::fs::write(sdf_path, &export.sdf)?;
        let sidecar = sdf_path.with_file_name(&export.obj_file_name);
        std::fs::write(&sidecar, &export.obj)?;
        println!("SDF model written to {} with mesh {}", sdf_path.display(), sidecar.display());
    }
    Ok(())
}

/// Picks the class for `affordance`, honouring an explicit choice.
fn resolve(classes: &ClassTable, affordance: &str, explicit: Option<&str>, role: &str) -> anyhow::Result<String> {
    let candidates = classes.classes_with(affordance);
    if let Some(choice) = explicit {
        if !candidates.contains(&choice) {
            bail!("--{role} {choice} does not provide '{affordance}' (providers: {})", listing(&candidates));
        }
        return Ok(choice.to_string());
    }
    match candidates.as_slice() {
        [] => bail!("no class provides '{affordance}'"),
        [one] => Ok(one.to_string()),
        many => bail!(
            "'{affordance}' is provided by several classes ({}); choose one with --{role}",
            listing(many)
        ),
    }
}

fn listing(labels: &[&str]) -> String {
    if labels.is_empty() {
        "none".into()
    } else {
        labels.join(", ")
    }
}

fn request(cfg: &RunConfig, a: RequestArgs) -> anyhow::Result<()> {
    let [first, second] = a.affordances.as_slice() else {
        return Err(usage(format!(
            "--affordances takes exactly two comma-separated labels, got {}",
            a.affordances.len()
        )));
    };
    let session = load_session(cfg, &a.paths)?;
    let base = resolve(session.classes(), first, a.base.as_deref(), "base")?;
    let top = resolve(session.classes(), second, a.top.as_deref(), "top")?;
    let c = session.combine(&base, &top, a.base_percent, a.top_percent, &afford_params(cfg, &a.afford))?;
    let dir = out_dir(cfg, a.out.as_deref())?;
    let extra = json!({
        "affordances": a.affordances,
        "base": base,
        "top": top,
        "base_percent": a.base_percent,
        "top_percent": a.top_percent,
    });
    write_combination(&dir, &c, extra)?;
    print_combination(&base, &top, &c, &dir);
    Ok(())
}

fn serve(cfg: &RunConfig, a: ServeArgs) -> anyhow::Result<()> {
    let session = load_session(cfg, &a.paths)?;
    let host = a.host.unwrap_or_else(|| cfg.server.host.clone());
    let port = a.port.unwrap_or(cfg.server.port);
    let addr: std::net::SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| usage(format!("bad address {host}:{port}: {e}")))?;
    let state = AppState::with_session(session);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(affordgen_server::serve(state, addr))?;
    Ok(())
}

