use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use earlyexit::cost_model::{CostReport, ScaleFactor};
use earlyexit::harness::{
    cost_table, run_pipeline, ArchitectureSection, ExperimentConfig, OracleSection,
};
use earlyexit::patch_store::{
    build_database, query_nearest, query_pose, read_file, write_file, DbEntry, FeatureMap,
    PoseExprKey, POSE_ANGLES,
};
use earlyexit::predictor::{
    evaluate, read_model, train, write_model, LossMode, Mlp, ScorePredictor, TrainConfig,
};
use earlyexit::router::{kde, parse_thresholds, sweep_scores, ExitCosts};
use earlyexit::sim::{read_dataset, write_dataset, Dataset, QualityOracle, Sample};

use crate::{
    CostArgs, DbBuildArgs, DbQueryArgs, DbStatsArgs, OutFile, PredictorEvalArgs,
    PredictorTrainArgs, RouteKdeArgs, RouteSweepArgs, RunArgs, SimGenArgs,
};

fn emit(out: &OutFile, text: &str) -> Result<()> {
    match &out.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|e| anyhow!("bad {what} element `{v}`: {e}"))
        })
        .collect()
}

fn split_rows<'a>(ds: &'a Dataset, split: &str) -> Result<Vec<&'a Sample>> {
    Ok(match split {
        "train" => ds.train.iter().collect(),
        "val" => ds.val.iter().collect(),
        "all" => ds.train.iter().chain(&ds.val).collect(),
        other => bail!("unknown split `{other}` (train, val or all)"),
    })
}

pub fn cost(a: CostArgs) -> Result<()> {
    if let Some(path) = &a.config {
        let cfg = ExperimentConfig::load(path)?;
        return emit(&a.out, &cost_table(&cfg.architecture)?);
    }
    let scales = a
        .scale
        .iter()
        .map(|s| s.parse::<ScaleFactor>())
        .collect::<Result<Vec<_>, _>>()?;
    let arch = ArchitectureSection {
        fixture: a.fixture.clone(),
        scale_factor: scales[0],
        scale_factors: scales.clone(),
        min_channels: a.min_channels,
        width_quantum: a.width_quantum,
        ..ArchitectureSection::default()
    };
    if scales.len() > 1 {
        return emit(&a.out, &cost_table(&arch)?);
    }
    let graph = arch.load_fixture()?.to_graph(&arch.policy(scales[0])?)?;
    let mut text = String::from("exit_id,flops\n");
    for (id, flops) in CostReport::for_graph(&graph).routes() {
        writeln!(text, "{id},{flops}")?;
    }
    emit(&a.out, &text)
}

fn parse_shape(s: &str) -> Result<(usize, usize, usize)> {
    match parse_list::<usize>(s, "shape")?[..] {
        [c, h, w] => Ok((c, h, w)),
        _ => bail!("value shape must be C,H,W"),
    }
}

fn read_entries_csv(path: &Path, shape: (usize, usize, usize)) -> Result<Vec<DbEntry>> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let cols = |prefix: char| -> Vec<usize> {
        headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with(prefix) && h[1..].parse::<usize>().is_ok())
            .map(|(i, _)| i)
            .collect()
    };
    let (key_cols, value_cols) = (cols('k'), cols('v'));
    let class_col = headers.iter().position(|h| h == "class");
    ensure!(
        !key_cols.is_empty(),
        "no key columns (k0, k1, ...) in {}",
        path.display()
    );
    let (c, h, w) = shape;
    ensure!(
        value_cols.len() == c * h * w,
        "{} value columns for a {c}x{h}x{w} value",
        value_cols.len()
    );
    rdr.records()
        .enumerate()
        .map(|(row, rec)| {
            let rec = rec?;
            let line = row + 2;
            let floats = |idx: &[usize]| -> Result<Vec<f32>> {
                idx.iter()
                    .map(|&i| {
                        rec[i]
                            .trim()
                            .parse::<f32>()
                            .with_context(|| format!("line {line}: `{}`", &rec[i]))
                    })
                    .collect()
            };
            let class_label = match class_col.map(|i| rec[i].trim()) {
                None | Some("") => None,
                Some(v) => Some(
                    v.parse::<u16>()
                        .with_context(|| format!("line {line}: class `{v}`"))?,
                ),
            };
            Ok(DbEntry {
                key: floats(&key_cols)?,
                value: FeatureMap::new(c, h, w, floats(&value_cols)?)
                    .with_context(|| format!("line {line}"))?,
                class_label,
            })
        })
        .collect()
}

fn synthetic_entries(
    a: &DbBuildArgs,
    n: usize,
    shape: (usize, usize, usize),
) -> Result<Vec<DbEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (c, h, w) = shape;
    (0..n)
        .map(|i| {
            let key = (0..a.key_dim)
                .map(|_| rng.gen_range(-1.0f32..1.0))
                .collect();
            let data = (0..c * h * w)
                .map(|_| rng.gen_range(-1.0f32..1.0))
                .collect();
            let class_label = (a.classes > 0).then(|| (i % a.classes as usize) as u16);
            Ok(DbEntry {
                key,
                value: FeatureMap::new(c, h, w, data)?,
                class_label,
            })
        })
        .collect()
}

pub fn db_build(a: DbBuildArgs) -> Result<()> {
    let shape = parse_shape(&a.value_shape)?;
    let entries = match (&a.input, a.synthetic) {
        (Some(path), _) => read_entries_csv(path, shape)?,
        (None, Some(n)) => synthetic_entries(&a, n, shape)?,
        (None, None) => bail!("give --input <csv> or --synthetic <n>"),
    };
    let total = entries.len();
    let db = build_database(entries, a.cap, a.start_index)?;
    write_file(&db, &a.out)?;
    eprintln!(
        "kept {} of {total} entries -> {}",
        db.len(),
        a.out.display()
    );
    Ok(())
}

pub fn db_query(a: DbQueryArgs) -> Result<()> {
    let db = read_file(&a.db)?;
    let key: Vec<f32> = parse_list(&a.key, "key")?;
    let hit = match a.angle_weight {
        Some(angle_weight) => {
            ensure!(
                key.len() >= POSE_ANGLES,
                "pose key needs {POSE_ANGLES} angles"
            );
            query_pose(
                &db,
                &PoseExprKey {
                    angles: [key[0], key[1], key[2]],
                    expression: key[POSE_ANGLES..].to_vec(),
                    angle_weight,
                },
            )?
        }
        None => query_nearest(&db, &key, a.class)?,
    };
    let class = hit
        .entry
        .class_label
        .map(|c| c.to_string())
        .unwrap_or_default();
    emit(
        &a.out,
        &format!(
            "index,distance,class\n{},{},{class}\n",
            hit.index, hit.distance
        ),
    )
}

pub fn db_stats(a: DbStatsArgs) -> Result<()> {
    let db = read_file(&a.db)?;
    let mut text = String::from("metric,value\n");
    writeln!(text, "entries,{}", db.len())?;
    writeln!(text, "key_dim,{}", db.key_dim())?;
    writeln!(text, "labelled,{}", db.is_labelled())?;
    if let Some(e) = db.entries().first() {
        let (c, h, w) = e.value.shape();
        writeln!(text, "value_shape,{c}x{h}x{w}")?;
    }
    if db.is_labelled() {
        writeln!(text, "classes,{}", db.class_index().len())?;
        for (label, idx) in db.class_index() {
            if let Some(l) = label {
                writeln!(text, "class_{l},{}", idx.len())?;
            }
        }
    }
    emit(&a.out, &text)
}

pub fn sim_gen(a: SimGenArgs) -> Result<()> {
    let (mut oracle, mut dataset, mut seed) = match &a.config {
        Some(p) => {
            let cfg = ExperimentConfig::load(p)?;
            (cfg.oracle.clone(), cfg.dataset.clone(), cfg.seed)
        }
        None => (OracleSection::default(), Default::default(), 0),
    };
    if let Some(s) = a.seed {
        seed = s;
    }
    if let Some(c) = &a.capacities {
        oracle.exit_capacities = parse_list(c, "capacity")?;
    }
    if let Some(v) = a.noise_sd {
        oracle.noise_sd = v;
    }
    if let Some(v) = a.link_scale {
        oracle.link_scale = v;
    }
    if let Some(v) = a.conditions {
        dataset.n_conditions = v;
    }
    if let Some(v) = a.noise_vectors {
        dataset.n_noise = v;
    }
    if let Some(v) = a.val_fraction {
        dataset.val_fraction = v;
    }
    let ds = QualityOracle::new(oracle.to_config(seed))?.make_dataset_split(
        dataset.n_conditions,
        dataset.n_noise,
        dataset.val_fraction,
    )?;
    write_dataset(&ds, &a.out)?;
    eprintln!(
        "{} train / {} val rows, {} exits -> {}",
        ds.train.len(),
        ds.val.len(),
        ds.exits,
        a.out.display()
    );
    Ok(())
}

pub fn predictor_train(a: PredictorTrainArgs) -> Result<()> {
    let ds = read_dataset(&a.data)?;
    let loss: LossMode = a.loss.parse()?;
    let mut dims = vec![ds.input_dim];
    dims.extend(parse_list::<usize>(&a.hidden, "hidden width")?);
    dims.push(ds.exits);
    let mut model = Mlp::new(&dims, a.slope, a.seed)?;
    let cfg = TrainConfig {
        loss,
        learning_rate: a.lr,
        min_lr: a.min_lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let history = train(&mut model, &ds.train, &cfg)?;
    write_model(&model, &a.out)?;
    let mut text = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        writeln!(text, "{},{l}", i + 1)?;
    }
    emit(&OutFile { out: a.history }, &text)
}

pub fn predictor_eval(a: PredictorEvalArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let ds = read_dataset(&a.data)?;
    let rows: Vec<Sample> = split_rows(&ds, &a.split)?.into_iter().cloned().collect();
    let report = evaluate(&model, &rows)?;
    let mut text = String::from("exit,mean_relative_error\n");
    for (i, e) in report.per_exit.iter().enumerate() {
        writeln!(text, "{},{e}", i + 1)?;
    }
    writeln!(text, "overall,{}", report.overall)?;
    emit(&a.out, &text)
}

fn sweep_costs(a: &RouteSweepArgs) -> Result<ExitCosts> {
    if let Some(list) = &a.costs {
        let mut v: Vec<f64> = parse_list(list, "cost")?;
        let backbone = v.pop().filter(|_| !v.is_empty()).ok_or_else(|| {
            anyhow!("--costs needs at least one branch cost followed by the backbone cost")
        })?;
        return Ok(ExitCosts::new(v, backbone)?);
    }
    if let Some(p) = &a.config {
        return Ok(ExperimentConfig::load(p)?.exit_costs()?);
    }
    let arch = ArchitectureSection::default();
    let graph = arch
        .load_fixture()?
        .to_graph(&arch.policy(arch.scale_factor)?)?;
    Ok(ExitCosts::from_report(
        &CostReport::for_graph(&graph),
        arch.cost_unit,
    )?)
}

pub fn route_sweep(a: RouteSweepArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let ds = read_dataset(&a.data)?;
    let rows = split_rows(&ds, &a.split)?;
    let thresholds = parse_thresholds(&a.thresholds)?;
    let costs = sweep_costs(&a)?;
    let predicted = rows
        .iter()
        .map(|s| model.predict(&s.input))
        .collect::<Result<Vec<_>, _>>()?;
    let actual: Vec<Vec<f64>> = rows.iter().map(|s| s.scores.clone()).collect();
    let report = sweep_scores(&predicted, &actual, &costs, &thresholds)?;
    emit(&a.out, &report.to_csv())
}

fn csv_samples(path: &Path, column: &str, filter: Option<&str>) -> Result<Vec<f64>> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("no column `{name}` in {}", path.display()))
    };
    let col = find(column)?;
    let filter = match filter {
        Some(f) => {
            let (k, v) = f
                .split_once('=')
                .ok_or_else(|| anyhow!("filter must be COLUMN=VALUE"))?;
            Some((find(k)?, v.to_string()))
        }
        None => None,
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if let Some((i, v)) = &filter {
            if &rec[*i] != v {
                continue;
            }
        }
        out.push(
            rec[col]
                .trim()
                .parse::<f64>()
                .with_context(|| format!("`{}`", &rec[col]))?,
        );
    }
    Ok(out)
}

pub fn route_kde(a: RouteKdeArgs) -> Result<()> {
    let samples = match (&a.data, &a.csv) {
        (Some(p), _) => {
            let ds = read_dataset(p)?;
            ensure!(
                (1..=ds.exits).contains(&a.exit),
                "exit {} outside 1..={}",
                a.exit,
                ds.exits
            );
            split_rows(&ds, &a.split)?
                .iter()
                .map(|s| s.scores[a.exit - 1])
                .collect()
        }
        (None, Some(p)) => csv_samples(p, &a.column, a.filter.as_deref())?,
        (None, None) => bail!("give --data <dataset> or --csv <file>"),
    };
    ensure!(!samples.is_empty(), "no samples selected");
    let grid = match &a.grid {
        Some(g) => parse_thresholds(g)?,
        None => {
            ensure!(a.points >= 2, "--points must be at least 2");
            let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * a.bandwidth;
            let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * a.bandwidth;
            let step = (hi - lo) / (a.points - 1) as f64;
            (0..a.points).map(|i| lo + step * i as f64).collect()
        }
    };
    let density = kde(&samples, a.bandwidth, &grid)?;
    let mut text = String::from("x,density\n");
    for (x, d) in grid.iter().zip(&density) {
        writeln!(text, "{x},{d}")?;
    }
    emit(&OutFile { out: a.out.out }, &text)
}

pub fn run(a: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(o) = a.out {
        cfg.out_dir = o;
    }
    let report = run_pipeline(&cfg)?;
    print!(
        "{}",
        fs::read_to_string(cfg.out_dir.join(earlyexit::harness::SUMMARY_FILE))?
    );
    for art in &report.artifacts {
        eprintln!("{} {} {}", art.sha256, art.bytes, art.path.display());
    }
    Ok(())
}
