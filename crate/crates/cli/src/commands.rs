use crate::config::ExperimentConfig;
use anyhow::{bail, Context, Result};
use scriptor::checkpoint::WriterModel;
use scriptor::data::{write_manifest, Dataset, ManifestRecord, MANIFEST_NAME};
use scriptor::eval::evaluate_multi_tuple;
use scriptor::preprocess::{extract_page_patches, GrayImage, PatchExtractionConfig};
use scriptor::report::{accuracy_chart_svg, results_csv, ResultsEntry};
use scriptor::rng::subseed;
use scriptor::sweep::{sweep, Splits};
use scriptor::synth::{generate_corpus, SPLIT_NAMES};
use scriptor::train::train_with;
use scriptor::{Error, Exec};
use std::fs;
use std::path::{Path, PathBuf};

pub const CHECKPOINT_NAME: &str = "model.ckpt";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

pub fn synth(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let spec = cfg.corpus_spec();
    spec.validate()?;
    let counts = generate_corpus(&spec, out)?;
    println!(
        "corpus: {} writers, {} patches ({}) in {}",
        spec.num_writers,
        counts.iter().sum::<usize>(),
        SPLIT_NAMES.iter().zip(counts).map(|(s, c)| format!("{s} {c}")).collect::<Vec<_>>().join(", "),
        out.display()
    );
    Ok(())
}

fn page_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut pages: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "png"))
        })
        .collect();
    pages.sort();
    Ok(pages)
}

pub fn preprocess(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let pages_dir = cfg.existing(cfg.preprocess.pages.as_ref(), "preprocess.pages")?;
    let pages = page_files(&pages_dir)?;
    if pages.is_empty() {
        bail!("no .pgm or .png pages in {}", pages_dir.display());
    }
    create_dir(out)?;
    let base = cfg.extraction();
    let mut records = Vec::new();
    for page in &pages {
        let page_id = page.file_stem().and_then(|s| s.to_str()).unwrap_or("page").to_string();
        let writer = page_id.split('_').next().unwrap_or(&page_id).to_string();
        let img = GrayImage::load(page)?;
        let pcfg = PatchExtractionConfig { seed: subseed(base.seed, &page_id, 0), ..base.clone() };
        let patches = match extract_page_patches(&img, &pcfg) {
            Ok(p) => p,
            Err(Error::Data(msg)) => {
                eprintln!("warning: {}: {msg}", page.display());
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let dir = out.join(&page_id);
        create_dir(&dir)?;
        for (i, p) in patches.iter().enumerate() {
            let file = format!("{page_id}_patch{i}.pgm");
            p.image.save_pgm(&dir.join(&file))?;
            records.push(ManifestRecord {
                file: Path::new(&page_id).join(file),
                center_x: p.center_x,
                center_y: p.center_y,
                writer: writer.clone(),
            });
        }
        println!("{page_id}: {} patches", patches.len());
    }
    write_manifest(&out.join(MANIFEST_NAME), &records)?;
    println!("{} patches from {} pages in {}", records.len(), pages.len(), out.display());
    Ok(())
}

fn load_split(cfg: &ExperimentConfig, path: Option<&PathBuf>, key: &str) -> Result<Dataset> {
    let dir = cfg.existing(path, key)?;
    Dataset::load(&dir).with_context(|| format!("loading `{key}`"))
}

pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let tcfg = cfg.training()?;
    let train_set = load_split(cfg, cfg.data.train.as_ref(), "data.train")?;
    let val_set = load_split(cfg, cfg.data.val.as_ref(), "data.val")?;
    create_dir(out)?;
    println!(
        "training on {} writers / {} patches, {} parameters",
        train_set.num_writers(),
        train_set.num_patches(),
        scriptor::models::build_network(&tcfg.spec, 0)?.param_count()
    );
    let (model, history) = train_with(&tcfg, &train_set, &val_set, Exec::Parallel, |r| {
        println!("epoch {:>3}  loss {:.4}  val top-1 {:6.2}%  {:.1}s", r.epoch, r.loss, r.val_top1, r.seconds)
    })?;
    model.save(&out.join(CHECKPOINT_NAME))?;
    write(&out.join("history.csv"), &history.to_csv())?;
    println!(
        "best validation top-1 {:.2}% at epoch {} of {}; checkpoint {}",
        history.best_val_top1().unwrap_or(0.0),
        history.best_epoch,
        history.records.len(),
        out.join(CHECKPOINT_NAME).display()
    );
    Ok(())
}

pub fn eval(cfg: &ExperimentConfig, out: &Path, plot: bool) -> Result<()> {
    let settings = cfg.eval_settings()?;
    create_dir(out)?;
    let (csv, points, x_label) = match cfg.sweep_grid()? {
        Some(grid) => eval_sweep(cfg, &grid, &settings)?,
        None => eval_checkpoint(cfg, out, &settings)?,
    };
    write(&out.join("results.csv"), &csv)?;
    if plot {
        write(&out.join("accuracy.svg"), &accuracy_chart_svg(x_label, &points))?;
    }
    for (x, y) in &points {
        println!("{x_label} = {x}: mean top-1 {y:.2}%");
    }
    println!("results in {}", out.join("results.csv").display());
    Ok(())
}

type EvalOutput = (String, Vec<(f64, f64)>, &'static str);

fn eval_checkpoint(cfg: &ExperimentConfig, out: &Path, settings: &scriptor::sweep::EvalSettings) -> Result<EvalOutput> {
    let ckpt = match &cfg.eval.checkpoint {
        Some(p) => cfg.existing(Some(p), "eval.checkpoint")?,
        None => {
            let p = out.join(CHECKPOINT_NAME);
            if !p.exists() {
                bail!("no eval.checkpoint configured and {} does not exist", p.display());
            }
            p
        }
    };
    let model = WriterModel::load(&ckpt)?;
    let spec = cfg.network_spec()?;
    if model.network.spec() != &spec {
        bail!("checkpoint network {:?} does not match configured network {:?}", model.network.spec(), spec);
    }
    let test = load_split(cfg, cfg.data.test.as_ref(), "data.test")?.align_to(&model.writers)?;
    let ns = if cfg.eval.n.is_empty() { vec![cfg.training.n] } else { cfg.eval.n.clone() };
    let mut reports = Vec::new();
    for &n in &ns {
        let rep = evaluate_multi_tuple(
            &model,
            &test,
            n,
            settings.tuples,
            settings.fusion,
            &settings.k_list,
            settings.trials,
            settings.seed,
            Exec::Parallel,
        )?;
        reports.push((n, rep));
    }
    let entries: Vec<ResultsEntry> = reports
        .iter()
        .map(|(n, rep)| ResultsEntry {
            experiment: "eval",
            writers: model.writers.len(),
            tuple_size: *n,
            patches_per_writer: test.min_patches(),
            aggregation: model.aggregation,
            epochs: model.epochs,
            seed: settings.seed,
            outcome: Ok(rep),
        })
        .collect();
    let points = reports.iter().map(|(n, r)| (*n as f64, r.mean_top(1).unwrap_or(r.mean[0]))).collect();
    Ok((results_csv(&entries), points, "tuple size n"))
}

fn eval_sweep(
    cfg: &ExperimentConfig,
    grid: &scriptor::sweep::SweepGrid,
    settings: &scriptor::sweep::EvalSettings,
) -> Result<EvalOutput> {
    let base = cfg.training()?;
    let train_set = load_split(cfg, cfg.data.train.as_ref(), "data.train")?;
    let val = load_split(cfg, cfg.data.val.as_ref(), "data.val")?.align_to(&train_set.writers)?;
    let test = load_split(cfg, cfg.data.test.as_ref(), "data.test")?.align_to(&train_set.writers)?;
    let splits = Splits { train: &train_set, val: &val, test: &test };
    let rows = sweep(&base, grid, splits, settings, Exec::Parallel, |r| match &r.outcome {
        Ok(o) => println!(
            "cell {}: n={} writers={} {} -> top-1 {:.2}%",
            r.cell.index, r.cell.tuple_size, o.writers, r.cell.aggregation, o.report.mean[0]
        ),
        Err(e) => eprintln!("warning: cell {} failed: {e}", r.cell.index),
    });
    let entries: Vec<ResultsEntry> = rows.iter().map(|r| r.entry("sweep")).collect();
    let csv = results_csv(&entries);
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();

    // x axis: the first grid dimension with more than one value
    let (label, x_of): (&'static str, Box<dyn Fn(&scriptor::sweep::CellResult) -> f64>) =
        if grid.writer_counts.len() > 1 {
            ("writers", Box::new(|r| r.cell.writers.unwrap_or(0) as f64))
        } else if grid.patches_per_writer.len() > 1 {
            ("training patches per writer", Box::new(|r| r.cell.patches_per_writer.unwrap_or(0) as f64))
        } else if grid.aggregations.len() > 1 {
            ("aggregation K", Box::new(|r| r.cell.aggregation.k() as f64))
        } else {
            ("tuple size n", Box::new(|r| r.cell.tuple_size as f64))
        };
    let points = rows.iter().filter_map(|r| r.outcome.as_ref().ok().map(|o| (x_of(r), o.report.mean[0]))).collect();
    if failed > 0 {
        eprintln!("warning: {failed} of {} cells failed (marked `failed` in the results)", rows.len());
    }
    Ok((csv, points, label))
}
