use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use swreg_core::atlas::{build_atlas, cohort_diversity};
use swreg_core::checks::{run_suite, Suite};
use swreg_core::evaluate::evaluate_pairs;
use swreg_core::io::{read_file, GridObject};
use swreg_core::model::Checkpoint;
use swreg_core::phantom::{generate_dataset, ordered_pairs};
use swreg_core::train::{make_split, train};
use swreg_core::{Dims, Error, PhantomConfig, Subject, TrainConfig};

use crate::error::{io_err, CliError, CliResult};
use crate::manifest::OutDir;
use crate::pgm::axial_slice_pgm;

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("config serialises");
    s.push('\n');
    s.into_bytes()
}

/// `gen-data` configuration. `phantom` defaults to the standard four-structure
/// phantom on `dims`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub dims: Dims,
    pub subjects: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Class index used for cohort analysis.
    #[serde(default = "default_gland_class")]
    pub gland_class: usize,
    #[serde(default)]
    pub phantom: Option<PhantomConfig>,
}

fn default_train_fraction() -> f64 {
    0.75
}

fn default_gland_class() -> usize {
    1
}

/// Index written next to the subject files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub subjects: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub gland_class: usize,
    pub phantom: PhantomConfig,
}

fn image_name(i: usize) -> String {
    format!("subject_{i:03}.image.ddfv")
}

fn masks_name(i: usize) -> String {
    format!("subject_{i:03}.masks.ddfv")
}

pub fn gen_data(config: &Path, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let mut cfg: GenConfig = read_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let phantom = cfg
        .phantom
        .clone()
        .unwrap_or_else(|| PhantomConfig::standard(cfg.dims));
    if phantom.dims != cfg.dims {
        return Err(Error::InvalidConfig(format!(
            "phantom dims {} differ from dims {}",
            phantom.dims, cfg.dims
        ))
        .into());
    }
    if cfg.gland_class >= phantom.classes() {
        return Err(Error::InvalidConfig(format!(
            "gland_class {} out of range for {} structures",
            cfg.gland_class,
            phantom.classes()
        ))
        .into());
    }
    let ds = generate_dataset(&phantom, cfg.subjects, cfg.seed, cfg.train_fraction)?;
    let mut dir = OutDir::create(out)?;
    for (i, s) in ds.subjects.iter().enumerate() {
        dir.write(
            &image_name(i),
            &swreg_core::io::encode(&GridObject::Volume(s.image.clone()))?,
        )?;
        let masks = s
            .masks
            .clone()
            .ok_or_else(|| Error::Missing("generated subject without masks".into()))?;
        dir.write(
            &masks_name(i),
            &swreg_core::io::encode(&GridObject::MaskSet(masks))?,
        )?;
    }
    let index = DatasetIndex {
        subjects: ds.subjects.len(),
        train: ds.train.clone(),
        test: ds.test.clone(),
        gland_class: cfg.gland_class,
        phantom,
    };
    dir.write("dataset.json", &to_json_bytes(&index))?;
    let resolved = to_json_bytes(&cfg);
    dir.write("gen_config.json", &resolved)?;
    dir.finish("gen-data", &resolved, Some(cfg.seed))
}

fn load_dataset(data: &Path) -> CliResult<(DatasetIndex, Vec<Subject>)> {
    let index: DatasetIndex = read_json(&data.join("dataset.json"))?;
    let subjects = (0..index.subjects)
        .map(|i| {
            let image = read_file(data.join(image_name(i)))?.into_volume()?;
            let masks = read_file(data.join(masks_name(i)))?.into_masks()?;
            Ok(Subject {
                image,
                masks: Some(masks),
            })
        })
        .collect::<swreg_core::Result<Vec<_>>>()?;
    if let Some(&bad) = index
        .train
        .iter()
        .chain(&index.test)
        .find(|&&i| i >= index.subjects)
    {
        return Err(Error::InvalidConfig(format!(
            "dataset.json lists subject {bad} of {}",
            index.subjects
        ))
        .into());
    }
    Ok((index, subjects))
}

pub fn train_cmd(config: &Path, data: &Path, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let mut cfg: TrainConfig = read_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let (index, subjects) = load_dataset(data)?;
    let train_subjects: Vec<Subject> = index.train.iter().map(|&i| subjects[i].clone()).collect();
    let split = make_split(&train_subjects, cfg.labelled_ratio, cfg.seed)?;
    let result = train(&cfg, &split)?;

    let mut dir = OutDir::create(out)?;
    let ckpt = Checkpoint::new(result.student, result.teacher, result.adam)?;
    dir.write("final.ckpt", &ckpt.encode()?)?;
    dir.write("train_log.csv", result.log.to_csv().as_bytes())?;
    // wall-clock timings vary between runs and stay out of the checksummed set
    let timings = dir.path("timings.csv");
    std::fs::write(&timings, result.log.timings_csv()).map_err(io_err(&timings))?;
    let resolved = to_json_bytes(&cfg);
    dir.write("train_config.json", &resolved)?;
    dir.finish("train", &resolved, Some(cfg.seed))
}

pub fn evaluate_cmd(ckpt: &Path, data: &Path, out: &Path) -> CliResult<()> {
    let ckpt_bytes = std::fs::read(ckpt).map_err(io_err(ckpt))?;
    let model = Checkpoint::decode(&ckpt_bytes)?.student;
    let (index, subjects) = load_dataset(data)?;
    let pairs = ordered_pairs(&index.test);
    if pairs.is_empty() {
        return Err(Error::Missing("the test split has fewer than two subjects".into()).into());
    }
    let report = evaluate_pairs(&model, &subjects, &pairs)?;
    let mut dir = OutDir::create(out)?;
    dir.write("eval.csv", report.to_csv().as_bytes())?;
    let summary = format!(
        "pairs,rows,mean_dice,mean_hd95_mm\n{},{},{:e},{:e}\n",
        pairs.len(),
        report.rows.len(),
        report.mean_dice(),
        report.mean_hd95()
    );
    dir.write("eval_summary.csv", summary.as_bytes())?;
    let args = json!({ "ckpt_sha256": crate::manifest::sha256_hex(&ckpt_bytes), "data": data });
    dir.finish("evaluate", &to_json_bytes(&args), None)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Test,
    All,
}

#[derive(Debug, Serialize, Deserialize)]
struct AtlasMembers {
    subjects: Vec<usize>,
    initial: usize,
    iterations: usize,
}

fn ddf_name(i: usize) -> String {
    format!("ddfs/subject_{i:03}.ddf.ddfv")
}

pub fn atlas_cmd(
    ckpt: &Path,
    data: &Path,
    out: &Path,
    subset: Subset,
    max_iters: usize,
    tol: f64,
) -> CliResult<()> {
    let ckpt_bytes = std::fs::read(ckpt).map_err(io_err(ckpt))?;
    let model = Checkpoint::decode(&ckpt_bytes)?.teacher;
    let (index, subjects) = load_dataset(data)?;
    let ids: Vec<usize> = match subset {
        Subset::Train => index.train.clone(),
        Subset::Test => index.test.clone(),
        Subset::All => (0..index.subjects).collect(),
    };
    let samples: Vec<Subject> = ids.iter().map(|&i| subjects[i].clone()).collect();
    let result = build_atlas(&model, &samples, max_iters, tol)?;

    let mut dir = OutDir::create(out)?;
    dir.write(
        "atlas.ddfv",
        &swreg_core::io::encode(&GridObject::Volume(result.atlas.clone()))?,
    )?;
    dir.write(
        "probability.ddfv",
        &swreg_core::io::encode(&GridObject::MaskSet(result.probability.clone()))?,
    )?;
    for (&i, ddf) in ids.iter().zip(&result.ddfs) {
        dir.write(
            &ddf_name(i),
            &swreg_core::io::encode(&GridObject::Ddf(ddf.clone()))?,
        )?;
    }
    let mut history = String::from("pass,mean_abs_change\n");
    for (k, c) in result.history.iter().enumerate() {
        history.push_str(&format!("{},{c:e}\n", k + 1));
    }
    dir.write("atlas_history.csv", history.as_bytes())?;
    let members = AtlasMembers {
        subjects: ids.clone(),
        initial: ids[result.initial_index],
        iterations: result.iterations,
    };
    dir.write("members.json", &to_json_bytes(&members))?;
    let args = json!({
        "ckpt_sha256": crate::manifest::sha256_hex(&ckpt_bytes),
        "data": data,
        "subset": subset,
        "max_iters": max_iters,
        "tol": tol,
    });
    dir.finish("atlas", &to_json_bytes(&args), None)
}

pub fn diversity_cmd(
    data: &Path,
    atlas: &Path,
    out: &Path,
    fraction: f64,
    gland_class: Option<usize>,
) -> CliResult<()> {
    let (index, subjects) = load_dataset(data)?;
    let members: AtlasMembers = read_json(&atlas.join("members.json"))?;
    let samples: Vec<Subject> = members
        .subjects
        .iter()
        .map(|&i| subjects[i].clone())
        .collect();
    let ddfs = members
        .subjects
        .iter()
        .map(|&i| read_file(atlas.join(ddf_name(i)))?.into_ddf())
        .collect::<swreg_core::Result<Vec<_>>>()?;
    let gland = gland_class.unwrap_or(index.gland_class);
    let report = cohort_diversity(&samples, &ddfs, gland, fraction)?;
    let mut csv = String::from("subject,gland_volume_mm3,cohort\n");
    for ((&i, v), c) in members
        .subjects
        .iter()
        .zip(&report.volumes)
        .zip(&report.cohorts)
    {
        csv.push_str(&format!("{i},{v:e},{}\n", c.name()));
    }
    let ratio = report
        .ratio
        .map_or_else(|| "undefined".to_string(), |r| format!("{r:e}"));
    let summary = format!(
        "sigma2_pop,top,bottom,ratio_top_bottom\n{:e},{:e},{:e},{ratio}\n",
        report.sigma2_pop, report.top, report.bottom
    );
    let mut dir = OutDir::create(out)?;
    dir.write("diversity.csv", csv.as_bytes())?;
    dir.write("diversity_summary.csv", summary.as_bytes())?;
    let args = json!({ "data": data, "atlas": atlas, "fraction": fraction, "gland_class": gland });
    dir.finish("diversity", &to_json_bytes(&args), None)
}

pub fn check_cmd(suite: Suite, out: Option<&Path>) -> CliResult<()> {
    let outcomes = run_suite(suite)?;
    let mut csv = String::from("suite,check,passed,detail\n");
    let mut failed = 0;
    for o in &outcomes {
        println!(
            "{} {}/{}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.suite,
            o.name,
            o.detail
        );
        csv.push_str(&format!(
            "{},{},{},\"{}\"\n",
            o.suite, o.name, o.passed, o.detail
        ));
        failed += usize::from(!o.passed);
    }
    if let Some(out) = out {
        let mut dir = OutDir::create(out)?;
        dir.write("checks.csv", csv.as_bytes())?;
        dir.finish("check", format!("{suite:?}").as_bytes(), None)?;
    }
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(())
}

pub fn render_slice_cmd(
    input: &Path,
    out: &Path,
    z: Option<usize>,
    channel: usize,
) -> CliResult<()> {
    let bytes = std::fs::read(input).map_err(io_err(input))?;
    let obj = swreg_core::io::decode(&bytes)?;
    let (dims, channels, data): (Dims, usize, Vec<f64>) = match obj {
        GridObject::Volume(v) => (v.dims(), 1, v.into_data()),
        GridObject::MaskSet(m) => (m.dims(), m.classes(), m.data().to_vec()),
        GridObject::Ddf(d) => (d.dims(), 3, d.into_data()),
    };
    if channel >= channels {
        return Err(CliError::Usage(format!(
            "channel {channel} out of range, file has {channels}"
        )));
    }
    let z = z.unwrap_or(dims.d / 2);
    if z >= dims.d {
        return Err(CliError::Usage(format!(
            "slice {z} out of range, depth is {}",
            dims.d
        )));
    }
    let n = dims.len();
    let pgm = axial_slice_pgm(&data[channel * n..(channel + 1) * n], dims, z);
    let stem = input
        .file_stem()
        .map_or_else(|| PathBuf::from("slice"), PathBuf::from)
        .to_string_lossy()
        .replace('.', "_");
    let mut dir = OutDir::create(out)?;
    dir.write(&format!("{stem}_z{z:03}_c{channel}.pgm"), &pgm)?;
    let args =
        json!({ "input_sha256": crate::manifest::sha256_hex(&bytes), "z": z, "channel": channel });
    dir.finish("render-slice", &to_json_bytes(&args), None)
}
