use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tpmret::classifier::{init_model, load_model, save_model};
use tpmret::config::RunConfig;
use tpmret::flow;
use tpmret::grid::RasterGrid;
use tpmret::iip::compute_iip;
use tpmret::ilt::print_mask;
use tpmret::layout::{parse_layout, rasterize, vectorize, write_layout, LayoutPattern};
use tpmret::litho::{aerial_image, print_image};
use tpmret::pipeline::{bench_scaling, confusion_matrix, correct_stages_in, iou, predict_map};
use tpmret::tiling::{load_dataset, save_dataset, Split};

/// Pixel-based machine-learning lithography correction.
#[derive(Parser)]
#[command(name = "tpmret", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; defaults to the built-in profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed (also seeds training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker count; `bench` takes a comma-separated list.
    #[arg(long, global = true, value_delimiter = ',')]
    workers: Vec<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Start from the reduced quick-run profile instead of the full one.
    #[arg(long, global = true)]
    toy: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write every configured test structure as a layout file.
    GenPatterns,
    /// Rasterize a layout over its deployment domain.
    Rasterize {
        #[arg(long)]
        layout: PathBuf,
    },
    /// Aerial and printed images of a mask (layout or graymap).
    Simulate {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        resist_threshold: Option<f64>,
    },
    /// Inverse lithography reference mask for a target layout.
    Ilt {
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Build the split pixel dataset from the configured training families.
    PrepData {
        #[arg(long)]
        per_class_cap: Option<usize>,
    },
    /// Train the classifier on a prepared dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Predicted IIP map of a layout.
    PredictMap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        layout: PathBuf,
    },
    /// Full correction: IIP map, threshold, vectorize, cleanup.
    Correct {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        min_area: Option<f64>,
        #[arg(long)]
        min_edge: Option<f64>,
    },
    /// Confusion matrix on held-out pixels and mask IoU against ILT
    /// references on the evaluation families.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Inference wall time and speedup per worker count.
    Bench {
        /// Trained model; a seeded untrained one is used when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Workload; the first evaluation family when absent.
        #[arg(long)]
        layout: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn resolve(g: &Global, cmd: &Cmd) -> Result<RunConfig> {
    let mut c = match &g.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("config {}", p.display()))?,
        None if g.toy => RunConfig::toy(),
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        c.seed = s;
        c.train.seed = s;
    }
    if let Some(o) = &g.out {
        c.out_dir = o.clone();
    }
    match (cmd, g.workers.as_slice()) {
        (_, []) | (Cmd::Bench { .. }, _) => {}
        (_, [w]) => c.deploy.workers = *w,
        _ => bail!("--workers takes a single count except for bench"),
    }
    match *cmd {
        Cmd::Simulate {
            resist_threshold: Some(t),
            ..
        } => c.litho.resist_threshold = t,
        Cmd::Ilt {
            steps,
            learning_rate,
            ..
        } => {
            c.ilt.steps = steps.unwrap_or(c.ilt.steps);
            c.ilt.learning_rate = learning_rate.unwrap_or(c.ilt.learning_rate);
        }
        Cmd::PrepData {
            per_class_cap: Some(n),
        } => c.data.per_class_cap = n,
        Cmd::Train {
            epochs,
            batch_size,
            learning_rate,
            ..
        } => {
            c.train.epochs = epochs.unwrap_or(c.train.epochs);
            c.train.batch_size = batch_size.unwrap_or(c.train.batch_size);
            c.train.learning_rate = learning_rate.unwrap_or(c.train.learning_rate);
        }
        Cmd::Correct {
            threshold,
            min_area,
            min_edge,
            ..
        } => {
            c.iip.threshold = threshold.unwrap_or(c.iip.threshold);
            c.deploy.cleanup.min_area = min_area.unwrap_or(c.deploy.cleanup.min_area);
            c.deploy.cleanup.min_edge = min_edge.unwrap_or(c.deploy.cleanup.min_edge);
        }
        _ => {}
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: Cli) -> Result<()> {
    let c = resolve(&cli.global, &cli.cmd)?;
    let out = c.out_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), c.to_toml())?;
    let px = c.tiling.px_per_nm;

    match &cli.cmd {
        Cmd::GenPatterns => {
            for spec in c.all_patterns() {
                let p = spec.generate()?;
                fs::write(out.join(format!("{}.json", spec.name())), write_layout(&p))?;
            }
        }
        Cmd::Rasterize { layout } => {
            let p = read_layout(layout)?;
            let g = rasterize(&p, px, c.tiling.domain(&p)?)?;
            g.save_pgm(&out.join(format!("{}.pgm", stem(layout))), &[])?;
        }
        Cmd::Simulate { mask, .. } => {
            let m = read_mask(mask, &c)?;
            let aerial = aerial_image(&m, &c.litho)?;
            let printed = print_image(&aerial, c.litho.resist_threshold);
            aerial.save_pgm(&out.join("aerial.pgm"), &[])?;
            printed.save_pgm(&out.join("printed.pgm"), &[])?;
        }
        Cmd::Ilt { layout, .. } => {
            let target = read_layout(layout)?;
            let r = flow::reference(&target, &c)?;
            r.raster.save_pgm(&out.join("target.pgm"), &[])?;
            r.ilt.mask.save_pgm(&out.join("mask.pgm"), &[])?;
            print_mask(&r.ilt.mask, &c.litho)?.save_pgm(&out.join("printed.pgm"), &[])?;
            print_mask(&r.raster, &c.litho)?.save_pgm(&out.join("printed_uncorrected.pgm"), &[])?;
            fs::write(out.join("mask.json"), write_layout(&vectorize(&r.ilt.mask)))?;
            fs::write(out.join("loss.csv"), r.ilt.loss_csv())?;
            println!(
                "fidelity {:.4} -> {:.4} (kept step {})",
                r.ilt.initial_fidelity, r.ilt.final_fidelity, r.ilt.best_step
            );
        }
        Cmd::PrepData { .. } => {
            let (d, refs) = flow::prepare_dataset(&c)?;
            save_dataset(&d, &out.join("dataset"))?;
            let iik = c.iip.iik(px)?;
            for (spec, r) in c.data.train_patterns.iter().zip(&refs) {
                let name = spec.name();
                r.ilt.mask.save_pgm(&out.join(format!("{name}_mask.pgm")), &[])?;
                compute_iip(&r.ilt.mask, &iik)?.save(&out.join(format!("{name}_iip.pgm")), c.iip.num_classes)?;
            }
            let hist: Vec<String> = d.class_histogram().iter().map(usize::to_string).collect();
            fs::write(out.join("class_histogram.csv"), format!("{}\n", hist.join(",")))?;
            println!("{} samples", d.len());
        }
        Cmd::Train { dataset, .. } => {
            let d = load_dataset(dataset)?;
            let (m, h) = flow::train_model(&d, &c)?;
            save_model(&m, &out.join("model.bin"))?;
            fs::write(out.join("history.csv"), h.to_csv())?;
            println!(
                "best val accuracy {:.4} at epoch {}",
                m.train_meta.final_val_accuracy, h.best_epoch
            );
        }
        Cmd::PredictMap { model, layout } => {
            let m = read_model(model, &c)?;
            let target = read_layout(layout)?;
            predict_map(&m, &target, &c.correction())?.save(&out.join("iip.pgm"), c.iip.num_classes)?;
        }
        Cmd::Correct { model, layout, .. } => {
            let m = read_model(model, &c)?;
            let target = read_layout(layout)?;
            let cfg = c.correction();
            let r = correct_stages_in(&target, &m, cfg.tiling.domain(&target)?, &cfg)?;
            r.map.save(&out.join("iip.pgm"), c.iip.num_classes)?;
            r.thresholded.save_pgm(&out.join("threshold.pgm"), &[])?;
            r.cleaned.save_pgm(&out.join("cleanup.pgm"), &[])?;
            fs::write(out.join("corrected.json"), write_layout(&r.pattern))?;
        }
        Cmd::Evaluate { model, dataset } => evaluate(&c, model, dataset, &out)?,
        Cmd::Bench { model, layout } => {
            let m = match model {
                Some(p) => read_model(p, &c)?,
                None => init_model(&c.model, c.seed)?,
            };
            let target = match layout {
                Some(p) => read_layout(p)?,
                None => c
                    .data
                    .eval_patterns
                    .first()
                    .context("no evaluation pattern to benchmark")?
                    .generate()?,
            };
            let counts = if cli.global.workers.is_empty() {
                vec![1, 2, 4]
            } else {
                cli.global.workers.clone()
            };
            let report = bench_scaling(&target, &m, &c.correction(), &counts)?;
            fs::write(out.join("scaling.csv"), report.to_csv())?;
            print!("{}", report.to_csv());
            if !report.outputs_identical {
                bail!("outputs differ across worker counts");
            }
        }
    }
    Ok(())
}

fn evaluate(c: &RunConfig, model: &Path, dataset: &Path, out: &Path) -> Result<()> {
    let m = read_model(model, c)?;
    let d = load_dataset(dataset)?;
    let cm = flow::split_confusion(&m, &d, Split::Test)?;
    fs::write(out.join("confusion.csv"), cm.to_csv())?;
    let mut summary = String::from("item,value\n");
    summary.push_str(&format!("held_out_exact,{:.4}\n", cm.band_mass(0)));
    summary.push_str(&format!("held_out_within_one,{:.4}\n", cm.band_mass(1)));
    let cfg = c.correction();
    let iik = c.iip.iik(c.tiling.px_per_nm)?;
    for spec in &c.data.eval_patterns {
        let name = spec.name();
        let target = spec.generate()?;
        let r = flow::reference(&target, c)?;
        let tpm = correct_stages_in(&target, &m, r.domain, &cfg)?;
        let ref_iip = compute_iip(&r.ilt.mask, &iik)?;
        let cls = confusion_matrix(&tpm.map, &ref_iip, c.iip.num_classes)?;
        r.ilt.mask.save_pgm(&out.join(format!("{name}_reference.pgm")), &[])?;
        tpm.cleaned.save_pgm(&out.join(format!("{name}_tpm.pgm")), &[])?;
        fs::write(out.join(format!("{name}_confusion.csv")), cls.to_csv())?;
        summary.push_str(&format!("{name}_mask_iou,{:.4}\n", iou(&tpm.cleaned, &r.ilt.mask)?));
        summary.push_str(&format!(
            "{name}_print_iou,{:.4}\n",
            iou(&print_mask(&tpm.cleaned, &c.litho)?, &r.raster)?
        ));
    }
    fs::write(out.join("metrics.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned())
}

fn read_layout(p: &Path) -> Result<LayoutPattern> {
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    Ok(parse_layout(&text).with_context(|| p.display().to_string())?)
}

/// Layout files are rasterized over their domain; anything else is read as
/// a graymap with sidecar.
fn read_mask(p: &Path, c: &RunConfig) -> Result<RasterGrid> {
    if p.extension().is_some_and(|e| e == "json") {
        let l = read_layout(p)?;
        return Ok(rasterize(&l, c.tiling.px_per_nm, c.tiling.domain(&l)?)?);
    }
    Ok(RasterGrid::load_pgm(p).with_context(|| p.display().to_string())?)
}

fn read_model(p: &Path, c: &RunConfig) -> Result<tpmret::classifier::ModelParams> {
    let m = load_model(p).with_context(|| p.display().to_string())?;
    c.check_model_arch(&m.arch)?;
    Ok(m)
}
