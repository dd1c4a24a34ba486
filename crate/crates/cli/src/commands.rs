use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, ensure, Context, Result};
use cl4ctr::data::{
    frequency_cdf, read_dataset, read_delimited, split, synth_generate, write_dataset, EncodedDataset,
    SynthConfig, Vocabulary,
};
use cl4ctr::metrics::{evaluate_probas, frequency_bucket_report, EvalResult};
use cl4ctr::models::CtrModel;
use cl4ctr::trainer::{self, TrainReport};
use serde_json::json;

use crate::config::{env_seed, RunConfig};
use crate::{EvalArgs, PrepareArgs, RunOverrides, SplitArgs, SweepArgs, SynthArgs, TrainArgs};

pub const PREPARED_FILES: [&str; 4] = ["train.cl4d", "val.cl4d", "test.cl4d", "vocab.json"];

pub struct Prepared {
    pub vocab: Vocabulary,
    pub train: EncodedDataset,
    pub val: EncodedDataset,
    pub test: EncodedDataset,
}

fn read_ds(path: &Path) -> Result<EncodedDataset> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_dataset(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn load_prepared(dir: &Path) -> Result<Prepared> {
    let vocab_path = dir.join("vocab.json");
    let text = fs::read_to_string(&vocab_path).with_context(|| format!("reading {}", vocab_path.display()))?;
    let vocab = Vocabulary::from_json(&text)?;
    let [train, val, test] = ["train", "val", "test"].map(|s| read_ds(&dir.join(format!("{s}.cl4d"))));
    let p = Prepared {
        vocab,
        train: train?,
        val: val?,
        test: test?,
    };
    for ds in [&p.train, &p.val, &p.test] {
        ds.validate(&p.vocab)?;
    }
    Ok(p)
}

fn split_seed(args: &SplitArgs) -> Result<u64> {
    Ok(match args.split_seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(1),
    })
}

fn ratios(args: &SplitArgs) -> Result<[f64; 3]> {
    <[f64; 3]>::try_from(args.split.as_slice()).map_err(|_| anyhow!("--split needs exactly three proportions"))
}

fn write_prepared(out: &Path, vocab: &Vocabulary, ds: &EncodedDataset, args: &SplitArgs) -> Result<()> {
    let parts = split(ds, ratios(args)?, split_seed(args)?)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, part) in ["train", "val", "test"].iter().zip(&parts) {
        let path = out.join(format!("{name}.cl4d"));
        let mut w = BufWriter::new(File::create(&path)?);
        write_dataset(&mut w, part)?;
    }
    fs::write(out.join("vocab.json"), vocab.to_json()?)?;
    fs::write(out.join("freq_cdf.csv"), frequency_cdf(vocab).to_csv())?;
    println!("fields (F): {}", vocab.num_fields());
    println!("features (M): {}", vocab.num_features());
    let sizes: Vec<String> = vocab
        .fields()
        .iter()
        .map(|f| format!("{}={}", f.name, f.size()))
        .collect();
    println!("field sizes: {}", sizes.join(" "));
    println!(
        "split sizes: train={} val={} test={}",
        parts[0].len(),
        parts[1].len(),
        parts[2].len()
    );
    println!("wrote {}", out.display());
    Ok(())
}

pub fn prepare(args: &PrepareArgs) -> Result<()> {
    let delimiter = match args.delimiter.as_str() {
        "tab" | "\\t" => b'\t',
        d if d.len() == 1 => d.as_bytes()[0],
        d => bail!("delimiter must be one byte or `tab`, got {d:?}"),
    };
    ratios(&args.split)?;
    let f = File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let (schema, rows) = read_delimited(BufReader::new(f), delimiter, &args.label, args.fields.as_deref())
        .with_context(|| format!("reading {}", args.input.display()))?;
    let vocab = Vocabulary::build(&rows, &schema, args.min_count)?;
    let ds = EncodedDataset::encode(&rows, &vocab)?;
    write_prepared(&args.split.out, &vocab, &ds, &args.split)
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => SynthConfig::default(),
    };
    if let Some(v) = args.fields {
        cfg.fields = v;
    }
    if let Some(v) = args.features_per_field {
        cfg.features_per_field = v;
    }
    if let Some(v) = args.zipf {
        cfg.zipf_exponent = v;
    }
    if let Some(v) = args.instances {
        cfg.instances = v;
    }
    if let Some(v) = args.noise {
        cfg.noise = v;
    }
    if let Some(v) = args.seed.or(env_seed()?) {
        cfg.sample_seed = v;
    }
    ratios(&args.split)?;
    let (ds, vocab) = synth_generate(&cfg)?;
    println!("positive rate: {:.4}", ds.positive_rate());
    write_prepared(&args.split.out, &vocab, &ds, &args.split)
}

/// Applies flag overrides to the config; flags win, then CL4CTR_SEED.
pub fn resolve_run(o: &RunOverrides) -> Result<RunConfig> {
    let mut c = RunConfig::load(o.config.as_deref())?;
    if let Some(d) = &o.data {
        c.data_dir = Some(d.clone());
    }
    if let Some(d) = &o.out {
        c.out_dir = d.clone();
    }
    let t = &mut c.train;
    if let Some(v) = o.alpha {
        t.alpha = v;
    }
    if let Some(v) = o.beta {
        t.beta = v;
    }
    if let Some(v) = o.model {
        t.predictor.kind = v;
    }
    if let Some(v) = o.encoder {
        t.encoder.kind = v;
    }
    if let Some(v) = o.layers {
        t.encoder.layers = v;
    }
    if let Some(v) = o.mask {
        t.mask.method = v;
    }
    if let Some(v) = o.p {
        t.mask.p = v;
    }
    if let Some(v) = o.lr {
        t.learning_rate = v;
    }
    if let Some(v) = o.epochs {
        t.max_epochs = v;
    }
    if let Some(v) = o.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = o.embedding_dim {
        t.embedding_dim = v;
    }
    match o.seed {
        Some(s) => t.seed = s,
        None => {
            if let Some(s) = env_seed()? {
                t.seed = s;
            }
        }
    }
    Ok(c)
}

fn check_run(c: &RunConfig) -> Result<()> {
    let problems = c.problems();
    if problems.is_empty() {
        Ok(())
    } else {
        bail!("invalid run configuration:\n  {}", problems.join("\n  "))
    }
}

fn check_vocab(model: &CtrModel, vocab: &Vocabulary, what: &str) -> Result<()> {
    let ranges = vocab.field_ranges();
    ensure!(
        model.table.num_features() == vocab.num_features() && model.table.field_ranges() == ranges.as_slice(),
        "{what}: checkpoint has {} features over {} fields, vocabulary has {} over {}",
        model.table.num_features(),
        model.table.num_fields(),
        vocab.num_features(),
        vocab.num_fields()
    );
    Ok(())
}

fn run_training(c: &RunConfig, data: &Prepared) -> Result<(TrainReport, CtrModel)> {
    let (report, state) = trainer::train(&c.train, data.vocab.field_ranges(), &data.train, &data.val, Some(&data.test))?;
    Ok((report, state.model))
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let c = resolve_run(&args.run)?;
    check_run(&c)?;
    let data = load_prepared(c.data_dir.as_deref().expect("checked"))?;
    let (mut report, model) = run_training(&c, &data)?;
    fs::create_dir_all(&c.out_dir).with_context(|| format!("creating {}", c.out_dir.display()))?;
    let ckpt = c.out_dir.join("model.ckpt");
    model.write_to(BufWriter::new(File::create(&ckpt)?))?;
    report.checkpoint = Some(ckpt.display().to_string());
    let report_path = c.out_dir.join("report.json");
    fs::write(&report_path, report.to_json())?;
    fs::write(c.out_dir.join("config.toml"), c.to_toml())?;
    if let Some(t) = &report.test {
        println!(
            "best epoch {} of {}: val AUC {:.4}; test AUC {} logloss {:.4}",
            report.best_epoch,
            report.stopped_epoch,
            report.best_val_auc,
            t.auc.map_or("undefined".into(), |a| format!("{a:.4}")),
            t.logloss
        );
    }
    println!("report: {}", report_path.display());
    Ok(())
}

fn read_model(path: &Path) -> Result<CtrModel> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    CtrModel::read_from(BufReader::new(f)).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn eval_json(r: &EvalResult) -> serde_json::Value {
    json!({
        "count": r.count,
        "auc": r.auc.map_or(json!("undefined"), |a| json!(a)),
        "logloss": r.logloss,
    })
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let data = load_prepared(&args.data)?;
    let model = read_model(&args.checkpoint)?;
    check_vocab(&model, &data.vocab, "model")?;
    let baseline = args.baseline.as_deref().map(read_model).transpose()?;
    if let Some(b) = &baseline {
        check_vocab(b, &data.vocab, "baseline")?;
    }
    let ds = match args.split.as_str() {
        "train" => &data.train,
        "val" => &data.val,
        "test" => &data.test,
        s => bail!("--split must be train, val or test, got {s:?}"),
    };
    let result = evaluate_probas(&model.predict(ds)?, ds.labels())?;
    let counts = data.train.feature_counts(data.vocab.num_features());
    let buckets = frequency_bucket_report(&model, baseline.as_ref(), ds, &counts, &args.boundaries, args.statistic)?;
    let doc = json!({
        "split": args.split,
        "eval": eval_json(&result),
        "buckets": buckets,
    });
    let text = serde_json::to_string_pretty(&doc)?;
    println!("{text}");
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("eval.json"), &text)?;
        fs::write(out.join("buckets.csv"), buckets.to_csv())?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub key: Vec<f64>,
    pub label: String,
    pub config: RunConfig,
}

pub fn sweep_cells(axis: &str, values: Option<&[f64]>, base: &RunConfig) -> Result<Vec<Cell>> {
    let defaults: &[f64] = match axis {
        "alpha_beta_grid" => &[1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 0.0],
        "mask_proportion" => &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        "embedding_size" => &[16.0, 32.0, 48.0, 64.0],
        a => bail!("unknown sweep axis {a:?} (alpha_beta_grid, mask_proportion, embedding_size)"),
    };
    let values = values.unwrap_or(defaults);
    ensure!(values.len() >= 2, "a sweep needs at least two values");
    let mut cells = Vec::new();
    match axis {
        "alpha_beta_grid" => {
            for &a in values {
                for &b in values {
                    let mut c = base.clone();
                    c.train.alpha = a;
                    c.train.beta = b;
                    cells.push(Cell {
                        key: vec![a, b],
                        label: format!("alpha={a} beta={b}"),
                        config: c,
                    });
                }
            }
        }
        "mask_proportion" => {
            for &p in values {
                let mut c = base.clone();
                c.train.mask.p = p;
                cells.push(Cell {
                    key: vec![p],
                    label: format!("p={p}"),
                    config: c,
                });
            }
        }
        _ => {
            for &d in values {
                ensure!(d >= 1.0 && d.fract() == 0.0, "embedding size must be a positive integer, got {d}");
                let mut c = base.clone();
                c.train.embedding_dim = d as usize;
                cells.push(Cell {
                    key: vec![d],
                    label: format!("embedding_dim={d}"),
                    config: c,
                });
            }
        }
    }
    cells.sort_by(|a, b| a.key.iter().zip(&b.key).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    Ok(cells)
}

fn sweep_row(cell: &Cell, data: &Prepared) -> String {
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    match run_training(&cell.config, data) {
        Ok((r, _)) => {
            let best = &r.epochs[r.best_epoch - 1];
            let t = r.test.as_ref();
            format!(
                "{},{},{},{},{},",
                cell.label,
                best.val_auc,
                best.val_logloss,
                fmt(t.and_then(|t| t.auc)),
                fmt(t.map(|t| t.logloss))
            )
        }
        Err(e) => format!("{},,,,,\"{}\"", cell.label, e.to_string().replace('"', "'").replace('\n', " ")),
    }
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let base = resolve_run(&args.run)?;
    let cells = sweep_cells(&args.axis, args.values.as_deref(), &base)?;
    let mut problems = Vec::new();
    for cell in &cells {
        for p in cell.config.problems() {
            let msg = format!("{}: {p}", cell.label);
            if !problems.contains(&msg) {
                problems.push(msg);
            }
        }
    }
    ensure!(problems.is_empty(), "invalid sweep configuration:\n  {}", problems.join("\n  "));
    ensure!(args.jobs >= 1, "--jobs must be >= 1");
    let data = load_prepared(base.data_dir.as_deref().expect("checked"))?;
    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<String>>> = Mutex::new(vec![None; cells.len()]);
    std::thread::scope(|s| {
        for _ in 0..args.jobs.min(cells.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let row = sweep_row(&cells[i], &data);
                eprintln!("done {}", cells[i].label);
                rows.lock().expect("no poisoned workers")[i] = Some(row);
            });
        }
    });
    let mut csv = String::from("setting,val_auc,val_logloss,test_auc,test_logloss,error\n");
    for r in rows.into_inner().expect("no poisoned workers") {
        csv.push_str(&r.expect("every cell ran"));
        csv.push('\n');
    }
    fs::create_dir_all(&base.out_dir)?;
    let path: PathBuf = base.out_dir.join(format!("sweep_{}.csv", args.axis));
    fs::write(&path, &csv)?;
    print!("{csv}");
    println!("wrote {}", path.display());
    Ok(())
}
