//! Command-line front end. Each subcommand runs one pipeline stage.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cost_model::bench;
use crate::domain::{load_manifest, load_truth, pgm, DatasetManifest, QualityLabel, SliceImage};
use crate::error::{Error, Result};
use crate::forest::Forest;
use crate::metrics::{
    confusion, confusion_text, exclude, format_predictions, load_predictions, metrics,
    PredictionRecord,
};
use crate::nrnet::{Checkpoint, Variant};
use crate::selftrain::{assess_volume, run_pipeline, summary_text, PipelineConfig, VolumeInput};
use crate::synth::{generate_dataset, DatasetSpec};
use crate::training::{train, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "mriqa",
    version,
    about = "Slice and volume quality assessment for MRI"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with manifests and ground-truth sidecars.
    SynthGen(SynthGenArgs),
    /// Train the slice network on a labeled manifest.
    Train(TrainArgs),
    /// Run slice and volume self-training.
    Selftrain(SelfTrainArgs),
    /// Rate every slice and volume of a directory or manifest.
    Assess(AssessArgs),
    /// Score a prediction file against a ground-truth sidecar.
    Eval(EvalArgs),
    /// Time and count the cost of the network variants.
    Bench(BenchArgs),
    /// Print a default configuration file.
    PrintConfig(PrintConfigArgs),
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Labeled training volumes per class.
    #[arg(long, default_value_t = 20)]
    pub volumes_per_class: usize,
    #[arg(long, default_value_t = 60)]
    pub slices: usize,
    /// Share of labeled volumes whose label is flipped.
    #[arg(long, default_value_t = 0.3)]
    pub noise_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub canvas: usize,
    #[arg(long, value_delimiter = ',', default_value = "25,9,6")]
    pub test_per_class: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "67,67,66")]
    pub unlabeled_per_class: Vec<usize>,
    /// Share of volumes mixing slices of several true classes.
    #[arg(long, default_value_t = 0.3)]
    pub mixed_rate: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Training configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SelfTrainArgs {
    #[arg(long)]
    pub labeled: PathBuf,
    #[arg(long)]
    pub unlabeled: PathBuf,
    /// Pipeline configuration (TOML with `train`, `selftrain`, `forest`).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_ckpt: PathBuf,
    #[arg(long)]
    pub out_forest: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the iteration trace here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AssessArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub forest: PathBuf,
    /// A manifest file, or a directory of `<volume>_<index>.pgm` slices.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth sidecar.
    #[arg(long)]
    pub truth: PathBuf,
    /// Count actual-questionable slices in the slice metrics.
    #[arg(long)]
    pub include_questionable_slices: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// `all` or a comma-separated list such as `cres,dsres+nres`.
    #[arg(long, default_value = "all")]
    pub variants: String,
    #[arg(long, default_value_t = 64)]
    pub input_size: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PrintConfigArgs {
    /// `train` or `pipeline`.
    #[arg(long, default_value = "pipeline")]
    pub kind: String,
    #[arg(long, default_value_t = 64)]
    pub input_size: usize,
}

/// Runs a parsed command and returns what it prints on success.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::SynthGen(a) => synth_gen(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Selftrain(a) => selftrain_cmd(&a),
        Command::Assess(a) => assess_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Bench(a) => bench_cmd(&a),
        Command::PrintConfig(a) => print_config(&a),
    }
}

fn per_class(values: &[usize], flag: &str) -> Result<[usize; 3]> {
    values
        .try_into()
        .map_err(|_| Error::invalid(format!("--{flag} needs three comma-separated counts")))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn base_of(path: &Path) -> &Path {
    path.parent().unwrap_or_else(|| Path::new("."))
}

pub fn synth_gen(a: &SynthGenArgs) -> Result<String> {
    let mut spec = DatasetSpec::desk();
    spec.canvas = a.canvas;
    spec.phantom.size = a.canvas;
    spec.slices_per_volume = a.slices;
    spec.train_per_class = [a.volumes_per_class; 3];
    spec.test_per_class = per_class(&a.test_per_class, "test-per-class")?;
    spec.unlabeled_per_class = per_class(&a.unlabeled_per_class, "unlabeled-per-class")?;
    spec.noise.corruption_rate = a.noise_rate;
    spec.noise.mixed_rate = a.mixed_rate;
    let ds = generate_dataset(&spec, a.seed)?;
    ds.write(&a.out)?;
    let corrupted = ds.train.iter().filter(|v| v.corrupted()).count();
    Ok(format!(
        "train_volumes={}\ntest_volumes={}\nunlabeled_volumes={}\ncorrupted_volumes={corrupted}\nout={}\n",
        ds.train.len(),
        ds.test.len(),
        ds.unlabeled.len(),
        a.out.display()
    ))
}

pub fn train_cmd(a: &TrainArgs) -> Result<String> {
    let config = TrainConfig::from_toml(&read_text(&a.config)?)?;
    let manifest = load_manifest(&a.manifest)?;
    let labeled: Vec<_> = manifest.labeled().cloned().collect();
    if labeled.is_empty() {
        return Err(Error::invalid("manifest has no labeled records"));
    }
    let subset = DatasetManifest::new(labeled, manifest.split)?;
    let images = subset.load_images(base_of(&a.manifest), config.network.input_size)?;
    let labels: Vec<QualityLabel> = subset.records.iter().filter_map(|r| r.label).collect();
    let refs: Vec<&SliceImage> = images.iter().collect();
    let outcome = train(&refs, &labels, &config, None, a.seed)?;
    outcome.checkpoint.save(&a.out)?;
    let mut s = outcome.history_text();
    let _ = writeln!(s, "best_epoch={}", outcome.best_epoch);
    Ok(s)
}

/// Images of each volume of a manifest, in volume-id then slice order.
fn load_volumes(
    manifest: &DatasetManifest,
    base: &Path,
    canvas: usize,
) -> Result<Vec<(String, Vec<SliceImage>)>> {
    manifest
        .volumes()
        .into_iter()
        .map(|(vid, records)| {
            let images = records
                .iter()
                .map(|r| pgm::load_slice(resolve(base, &r.image_path), canvas))
                .collect::<Result<Vec<_>>>()?;
            Ok((vid.to_string(), images))
        })
        .collect()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn inputs<'a>(
    volumes: &'a [(String, Vec<SliceImage>)],
    labels: &BTreeMap<String, QualityLabel>,
) -> Vec<VolumeInput<'a>> {
    volumes
        .iter()
        .map(|(id, slices)| VolumeInput {
            id: id.clone(),
            slices: slices.iter().collect(),
            label: labels.get(id).copied(),
        })
        .collect()
}

pub fn selftrain_cmd(a: &SelfTrainArgs) -> Result<String> {
    let config = PipelineConfig::from_toml(&read_text(&a.config)?)?;
    let canvas = config.train.network.input_size;
    let labeled = load_manifest(&a.labeled)?;
    let unlabeled = load_manifest(&a.unlabeled)?;
    let lv = load_volumes(&labeled, base_of(&a.labeled), canvas)?;
    let uv = load_volumes(&unlabeled, base_of(&a.unlabeled), canvas)?;
    let label_map = labeled.volume_labels();
    if let Some((id, _)) = lv.iter().find(|(id, _)| !label_map.contains_key(id)) {
        return Err(Error::invalid(format!(
            "labeled manifest volume {id} has no labels"
        )));
    }
    let outcome = run_pipeline(
        &inputs(&lv, &label_map),
        &inputs(&uv, &BTreeMap::new()),
        &config,
        a.seed,
    )?;
    outcome.slice.checkpoint.save(&a.out_ckpt)?;
    outcome.forest().save(&a.out_forest)?;
    let trace = outcome.trace_text();
    if let Some(path) = &a.trace {
        write_text(path, &trace)?;
    }
    Ok(format!("{trace}{}", summary_text(&outcome)))
}

/// Groups `<volume>_<index>.pgm` files by volume; when any name lacks that
/// pattern, the whole directory is one volume in file-name order.
fn scan_directory(dir: &Path) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!(
            "no .pgm files in {}",
            dir.display()
        )));
    }
    let parsed: Option<Vec<(String, usize, PathBuf)>> = files
        .iter()
        .map(|p| {
            let stem = p.file_stem()?.to_str()?;
            let (vid, idx) = stem.rsplit_once('_')?;
            Some((vid.to_string(), idx.parse().ok()?, p.clone()))
        })
        .collect();
    match parsed {
        Some(parsed) => {
            let mut map: BTreeMap<String, Vec<(usize, PathBuf)>> = BTreeMap::new();
            for (vid, idx, p) in parsed {
                map.entry(vid).or_default().push((idx, p));
            }
            Ok(map
                .into_iter()
                .map(|(vid, mut v)| {
                    v.sort();
                    (vid, v.into_iter().map(|(_, p)| p).collect())
                })
                .collect())
        }
        None => {
            let name = dir
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or("volume")
                .to_string();
            Ok(vec![(name, files)])
        }
    }
}

pub fn assess_cmd(a: &AssessArgs) -> Result<String> {
    let checkpoint = Checkpoint::load(&a.ckpt)?;
    let forest = Forest::load(&a.forest)?;
    let canvas = checkpoint.network.config().input_size;
    let volumes: Vec<(String, Vec<(usize, PathBuf)>)> = if a.input.is_dir() {
        scan_directory(&a.input)?
            .into_iter()
            .map(|(vid, paths)| (vid, paths.into_iter().enumerate().collect()))
            .collect()
    } else {
        let manifest = load_manifest(&a.input)?;
        let base = base_of(&a.input);
        manifest
            .volumes()
            .into_iter()
            .map(|(vid, recs)| {
                let slices = recs
                    .iter()
                    .map(|r| (r.slice_index, resolve(base, &r.image_path)))
                    .collect();
                (vid.to_string(), slices)
            })
            .collect()
    };
    let mut records = Vec::new();
    for (vid, slices) in &volumes {
        let images = slices
            .iter()
            .map(|(_, p)| pgm::load_slice(p, canvas))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&SliceImage> = images.iter().collect();
        let (preds, volume) = assess_volume(&checkpoint.network, &forest, &refs)?;
        for ((idx, _), p) in slices.iter().zip(preds) {
            records.push(PredictionRecord {
                volume_id: vid.clone(),
                slice_index: Some(*idx),
                prediction: p,
            });
        }
        records.push(PredictionRecord {
            volume_id: vid.clone(),
            slice_index: None,
            prediction: volume,
        });
    }
    write_text(&a.out, &format_predictions(&records))?;
    let slices = records.iter().filter(|r| r.slice_index.is_some()).count();
    Ok(format!(
        "volumes={}\nslice_predictions={slices}\nvolume_predictions={}\n",
        volumes.len(),
        volumes.len()
    ))
}

pub fn eval_cmd(a: &EvalArgs) -> Result<String> {
    let preds = load_predictions(&a.pred)?;
    let truth = load_truth(&a.truth)?;
    let mut slice_truth = HashMap::new();
    let mut volume_truth = HashMap::new();
    for t in &truth {
        slice_truth.insert(
            (t.record.volume_id.as_str(), t.record.slice_index),
            t.true_label,
        );
        if let Some(l) = t.record.label {
            volume_truth.insert(t.record.volume_id.as_str(), l);
        }
    }
    let (mut sp, mut st, mut vp, mut vt) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for r in &preds {
        match r.slice_index {
            Some(i) => {
                let t = slice_truth.get(&(r.volume_id.as_str(), i)).ok_or_else(|| {
                    Error::invalid(format!(
                        "no ground truth for slice {} of {}",
                        i, r.volume_id
                    ))
                })?;
                sp.push(r.prediction.label());
                st.push(*t);
            }
            None => {
                let t = volume_truth.get(r.volume_id.as_str()).ok_or_else(|| {
                    Error::invalid(format!("no ground truth for volume {}", r.volume_id))
                })?;
                vp.push(r.prediction.label());
                vt.push(*t);
            }
        }
    }
    let mask = if a.include_questionable_slices {
        [false; 3]
    } else {
        exclude(&[QualityLabel::Questionable])
    };
    let mut s = String::new();
    let mut kv = String::new();
    if !sp.is_empty() {
        let cm = confusion(&sp, &st, mask)?;
        let report = metrics(&cm);
        s.push_str(&confusion_text(&cm));
        s.push_str(&report.to_table("slice metrics"));
        kv.push_str(&report.to_key_values("slice."));
    }
    if !vp.is_empty() {
        let cm = confusion(&vp, &vt, [false; 3])?;
        let report = metrics(&cm);
        s.push('\n');
        s.push_str(&confusion_text(&cm));
        s.push_str(&report.to_table("volume metrics"));
        kv.push_str(&report.to_key_values("volume."));
    }
    s.push('\n');
    s.push_str(&kv);
    Ok(s)
}

pub fn bench_cmd(a: &BenchArgs) -> Result<String> {
    let variants: Vec<Variant> = if a.variants.eq_ignore_ascii_case("all") {
        Variant::ALL.to_vec()
    } else {
        a.variants
            .split(',')
            .map(|v| v.trim().parse())
            .collect::<Result<_>>()?
    };
    let report = bench(&variants, a.input_size, a.reps, a.seed)?;
    Ok(format!("{}\n{}", report.to_text(), report.to_key_values()))
}

pub fn print_config(a: &PrintConfigArgs) -> Result<String> {
    match a.kind.as_str() {
        "train" => Ok(TrainConfig::desk(a.input_size).to_toml()),
        "pipeline" => Ok(PipelineConfig::desk(a.input_size).to_toml()),
        other => Err(Error::invalid(format!("unknown config kind {other:?}"))),
    }
}
