use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mcse::metrics::{ci_sdr, snr_db, CISDRConfig};
use mcse::net::{MaskNet, NetConfig, WeightStore};
use mcse::pipeline::{enhance as run_enhance, evaluation_channel, EnhanceConfig, MaskSource, ReferenceMode};
use mcse::selftest::{self, Check};
use mcse::signal::{Waveform, DEFAULT_FRAME_SIZE, DEFAULT_SAMPLE_RATE};
use mcse::simulate::{render_scene, sample_scene_with, ArrayKind, MixConfig, RoomScene};
use mcse::wav::{read_wav_at, write_wav, SampleFormat};
use mcse::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{zero_based, JobConfig, MaskSpec};
use crate::Common;

const MIXTURE: &str = "_mixture.wav";
const EARLY: &str = "_early.wav";
const CLEAN: &str = "_clean.wav";
const SCENE: &str = "_scene.toml";
const ENHANCED: &str = "_enhanced.wav";
const ENHANCED_META: &str = "_enhanced.toml";

/// Written next to every enhanced WAV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhancedMeta {
    pub utt: String,
    pub mask: String,
    /// One-based channel numbers of the input file that were used.
    pub channels: Vec<usize>,
    /// One-based channel number of the chosen reference.
    pub reference_channel: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gmin_db: Option<f64>,
}

fn run_parallel<T, F>(workers: Option<usize>, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn output_dir(common: &Common, job: &JobConfig) -> Result<PathBuf> {
    let out = common
        .out
        .clone()
        .or_else(|| job.out.clone())
        .ok_or_else(|| Error::InvalidConfig("--out is required".into()))?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

fn select(w: &Waveform, idx: &[usize]) -> Result<Waveform> {
    w.select_channels(idx)
}

pub fn simulate(
    job: &JobConfig,
    common: &Common,
    array: Option<String>,
    count: Option<usize>,
    duration: Option<f64>,
) -> Result<bool> {
    let seed = common.seed.or(job.seed).unwrap_or(0);
    let kind: ArrayKind = array
        .or_else(|| job.array.clone())
        .unwrap_or_else(|| "circular7".into())
        .parse()?;
    let count = count.or(job.count).unwrap_or(10);
    let duration = duration.or(job.duration_s).unwrap_or(4.0);
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::InvalidConfig(format!("duration {duration} s")));
    }
    let channels = common.channels.clone().or_else(|| job.channels.clone());
    let sampler = job.sampler.clone().unwrap_or_default();
    let out = output_dir(common, job)?;
    let mix_cfg = MixConfig {
        duration_s: duration,
        ..MixConfig::default()
    };

    let lines = run_parallel(common.workers.or(job.workers), count, |i| {
        let id = format!("scene_{i:04}");
        let scene = sample_scene_with(kind, seed.wrapping_add(i as u64), &sampler)?;
        let mix = render_scene(&scene, &mix_cfg)?;
        let (scene, mixture, early) = match &channels {
            Some(ch) => {
                let idx = zero_based(ch, scene.num_mics())?;
                (
                    scene.select_mics(&idx)?,
                    select(&mix.mixture, &idx)?,
                    select(&mix.early, &idx)?,
                )
            }
            None => (scene, mix.mixture, mix.early),
        };
        write_wav(out.join(format!("{id}{MIXTURE}")), &mixture, SampleFormat::Float32)?;
        write_wav(out.join(format!("{id}{EARLY}")), &early, SampleFormat::Float32)?;
        write_wav(out.join(format!("{id}{CLEAN}")), &mix.clean, SampleFormat::Float32)?;
        write_text(&out.join(format!("{id}{SCENE}")), &scene.to_toml())?;
        Ok(format!(
            "utt={id} seed={} mics={} t60={:.3} diffuse_rsnr_db={} directional={}",
            scene.seed,
            scene.num_mics(),
            scene.t60,
            scene
                .noise_plan
                .diffuse_rsnr_db
                .map_or("none".to_string(), |r| format!("{r:.2}")),
            scene.noise_plan.directional.len()
        ))
    })?;
    for l in lines {
        println!("{l}");
    }
    Ok(true)
}

fn strip_suffix(path: &Path, suffix: &str) -> Option<String> {
    path.file_name()?.to_str()?.strip_suffix(suffix).map(str::to_string)
}

fn list_dir(dir: &Path, suffix: &str) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if let Some(id) = strip_suffix(&path, suffix) {
            out.insert(id, path);
        }
    }
    Ok(out)
}

fn load_net(job: &JobConfig, path: &Path) -> Result<MaskNet> {
    let cfg = job.net.clone().unwrap_or(NetConfig {
        num_bins: DEFAULT_FRAME_SIZE / 2 + 1,
        ..NetConfig::default()
    });
    MaskNet::new(&cfg, &WeightStore::load(path)?)
}

#[allow(clippy::too_many_arguments)]
pub fn enhance(
    job: &JobConfig,
    common: &Common,
    input: &Path,
    early: Option<&Path>,
    mask: Option<String>,
    gmin_db: Option<f64>,
    reference: Option<String>,
) -> Result<bool> {
    let spec = MaskSpec::parse(&mask.or_else(|| job.mask.clone()).unwrap_or_else(|| "oracle".into()))?;
    let reference: ReferenceMode = reference
        .or_else(|| job.reference.clone())
        .unwrap_or_else(|| "auto".into())
        .parse()?;
    let cfg = EnhanceConfig {
        g_min_db: gmin_db.or(job.gmin_db),
        reference,
        ..EnhanceConfig::default()
    };
    let channels = common.channels.clone().or_else(|| job.channels.clone());
    let out = output_dir(common, job)?;
    let net = match &spec {
        MaskSpec::Net(p) => Some(load_net(job, p)?),
        MaskSpec::Oracle => None,
    };

    // (id, mixture, early image)
    let items: Vec<(String, PathBuf, Option<PathBuf>)> = if input.is_dir() {
        list_dir(input, MIXTURE)?
            .into_iter()
            .map(|(id, p)| {
                let e = input.join(format!("{id}{EARLY}"));
                (id, p, e.exists().then_some(e))
            })
            .collect()
    } else {
        let id = strip_suffix(input, MIXTURE)
            .or_else(|| input.file_stem().and_then(|s| s.to_str()).map(str::to_string))
            .unwrap_or_else(|| "input".into());
        let e = early.map(Path::to_path_buf).or_else(|| {
            let sibling = input.with_file_name(format!("{id}{EARLY}"));
            sibling.exists().then_some(sibling)
        });
        vec![(id, input.to_path_buf(), e)]
    };
    if items.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no *{MIXTURE} files in {}",
            input.display()
        )));
    }

    let lines = run_parallel(common.workers.or(job.workers), items.len(), |i| {
        let (id, mix_path, early_path) = &items[i];
        let mixture = read_wav_at(mix_path, DEFAULT_SAMPLE_RATE)?;
        let idx = match &channels {
            Some(ch) => zero_based(ch, mixture.num_channels())?,
            None => (0..mixture.num_channels()).collect(),
        };
        let y = select(&mixture, &idx)?;
        let early_img = match (&spec, early_path) {
            (MaskSpec::Oracle, Some(p)) => Some(select(&read_wav_at(p, DEFAULT_SAMPLE_RATE)?, &idx)?),
            (MaskSpec::Oracle, None) => {
                return Err(Error::InvalidConfig(format!(
                    "{id}: oracle masks need the early image (--early or {id}{EARLY})"
                )))
            }
            _ => None,
        };
        let source = match (&net, &early_img) {
            (Some(n), _) => MaskSource::Net(n),
            (None, Some(e)) => MaskSource::Oracle {
                early: e,
                channel: Some(evaluation_channel(e, scene_for(mix_path, id, &idx)?.as_ref())),
            },
            (None, None) => unreachable!("oracle mode always has an early image"),
        };
        let result = run_enhance(&y, source, &cfg)?;
        let meta = EnhancedMeta {
            utt: id.clone(),
            mask: spec.label(),
            channels: idx.iter().map(|c| c + 1).collect(),
            reference_channel: idx[result.reference] + 1,
            gmin_db: cfg.g_min_db,
        };
        write_wav(
            out.join(format!("{id}{ENHANCED}")),
            &result.output,
            SampleFormat::Float32,
        )?;
        let text = toml::to_string(&meta).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        write_text(&out.join(format!("{id}{ENHANCED_META}")), &text)?;
        Ok(format!(
            "utt={id} mask={} reference_channel={} reference_index={}",
            meta.mask, meta.reference_channel, result.reference
        ))
    })?;
    for l in lines {
        println!("{l}");
    }
    Ok(true)
}

/// Scene file next to a mixture, restricted to the selected channels.
fn scene_for(mix_path: &Path, id: &str, idx: &[usize]) -> Result<Option<RoomScene>> {
    let path = sibling(mix_path, id, SCENE);
    if !path.exists() {
        return Ok(None);
    }
    let scene = RoomScene::from_toml(&read_text(&path)?)?;
    if idx.iter().any(|&i| i >= scene.num_mics()) {
        return Ok(None);
    }
    scene.select_mics(idx).map(Some)
}

/// Pairs of (id, reference path, estimate path).
fn pair_inputs(refs: &str, estimates: &str) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let (rp, ep) = (Path::new(refs), Path::new(estimates));
    if rp.is_dir() || ep.is_dir() {
        if !(rp.is_dir() && ep.is_dir()) {
            return Err(Error::InvalidConfig(
                "--refs and --estimates must both be directories or both lists".into(),
            ));
        }
        let r = list_dir(rp, EARLY)?;
        let e = list_dir(ep, ENHANCED)?;
        let rk: Vec<_> = r.keys().collect();
        let ek: Vec<_> = e.keys().collect();
        if rk != ek {
            return Err(Error::InvalidConfig(format!(
                "utterance lists differ: {} references, {} estimates",
                rk.len(),
                ek.len()
            )));
        }
        return Ok(r.into_iter().zip(e).map(|((id, a), (_, b))| (id, a, b)).collect());
    }
    let r: Vec<&str> = refs.split(',').filter(|s| !s.is_empty()).collect();
    let e: Vec<&str> = estimates.split(',').filter(|s| !s.is_empty()).collect();
    if r.len() != e.len() {
        return Err(Error::InvalidConfig(format!(
            "{} references for {} estimates",
            r.len(),
            e.len()
        )));
    }
    r.iter()
        .zip(&e)
        .enumerate()
        .map(|(i, (a, b))| {
            let (a, b) = (PathBuf::from(a), PathBuf::from(b));
            let ia = strip_suffix(&a, EARLY).unwrap_or_else(|| stem(&a));
            let ib = strip_suffix(&b, ENHANCED).unwrap_or_else(|| stem(&b));
            if ia != ib {
                return Err(Error::InvalidConfig(format!(
                    "utterance id mismatch at position {i}: {ia} vs {ib}"
                )));
            }
            Ok((ia, a, b))
        })
        .collect()
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

struct Row {
    line: String,
    condition: String,
    input: f64,
    output: f64,
}

pub fn evaluate(job: &JobConfig, common: &Common, refs: &str, estimates: &str) -> Result<bool> {
    let metric = job.metrics.unwrap_or_default();
    metric.validate()?;
    let pairs = pair_inputs(refs, estimates)?;
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("nothing to evaluate".into()));
    }
    let rows = run_parallel(common.workers.or(job.workers), pairs.len(), |i| {
        let (id, rp, ep) = &pairs[i];
        evaluate_one(id, rp, ep, &metric)
    })?;

    let mut text = String::new();
    for r in &rows {
        text.push_str(&r.line);
        text.push('\n');
    }
    let n = rows.len() as f64;
    let mean_in = rows.iter().map(|r| r.input).sum::<f64>() / n;
    let mean_out = rows.iter().map(|r| r.output).sum::<f64>() / n;
    let mut conditions: Vec<&str> = rows.iter().map(|r| r.condition.as_str()).collect();
    conditions.dedup();
    let condition = if conditions.len() == 1 { conditions[0] } else { "mixed" };
    text.push_str(&format!(
        "mean condition={condition} count={} input_ci_sdr={mean_in} output_ci_sdr={mean_out} improvement={}\n",
        rows.len(),
        mean_out - mean_in
    ));
    print!("{text}");
    if let Some(path) = common.out.as_ref().or(job.out.as_ref()) {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_text(path, &text)?;
    }
    Ok(true)
}

fn sibling(p: &Path, id: &str, suffix: &str) -> PathBuf {
    p.with_file_name(format!("{id}{suffix}"))
}

fn evaluate_one(id: &str, ref_path: &Path, est_path: &Path, metric: &CISDRConfig) -> Result<Row> {
    let early = read_wav_at(ref_path, DEFAULT_SAMPLE_RATE)?;
    let estimate = read_wav_at(est_path, DEFAULT_SAMPLE_RATE)?;
    let mix_path = sibling(ref_path, id, MIXTURE);
    let mixture = read_wav_at(&mix_path, DEFAULT_SAMPLE_RATE)?;
    let meta_path = sibling(est_path, id, ENHANCED_META);
    let meta: Option<EnhancedMeta> = if meta_path.exists() {
        Some(
            toml::from_str(&read_text(&meta_path)?)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", meta_path.display())))?,
        )
    } else {
        None
    };
    let scene_path = sibling(ref_path, id, SCENE);
    let scene = if scene_path.exists() {
        Some(RoomScene::from_toml(&read_text(&scene_path)?)?)
    } else {
        None
    };

    let idx = match &meta {
        Some(m) => zero_based(&m.channels, early.num_channels())?,
        None => (0..early.num_channels()).collect(),
    };
    let scene = match scene {
        Some(s) if s.num_mics() == early.num_channels() => Some(s.select_mics(&idx)?),
        _ => None,
    };
    let early = select(&early, &idx)?;
    let mixture = select(&mixture, &idx)?;
    if estimate.len() != early.len() || mixture.len() != early.len() {
        return Err(Error::ShapeMismatch(format!(
            "{id}: reference {} samples, mixture {}, estimate {}",
            early.len(),
            mixture.len(),
            estimate.len()
        )));
    }
    let c = evaluation_channel(&early, scene.as_ref());
    let s = early.channel(c);
    let y = mixture.channel(c);
    let d = estimate.channel(0);
    let input = ci_sdr(s, y, metric)?;
    let output = ci_sdr(s, d, metric)?;
    let snr = |x: &[f64]| {
        let err: Vec<f64> = x.iter().zip(s).map(|(a, b)| a - b).collect();
        match snr_db(s, &err) {
            Err(Error::ZeroNoise) => Ok(f64::INFINITY),
            r => r,
        }
    };
    let input_snr = snr(y)?;
    let output_snr = snr(d)?;
    let condition = meta.as_ref().map_or("unknown".to_string(), |m| m.mask.clone());
    let reference = meta
        .as_ref()
        .map_or("unknown".to_string(), |m| m.reference_channel.to_string());
    Ok(Row {
        line: format!(
            "utt={id} condition={condition} input_ci_sdr={input} output_ci_sdr={output} input_snr={input_snr} output_snr={output_snr} eval_channel={} ref_channel={reference}",
            idx[c] + 1
        ),
        condition,
        input,
        output,
    })
}

pub fn selftest(job: &JobConfig, common: &Common, weights: Option<&Path>) -> Result<bool> {
    let seed = common.seed.or(job.seed).unwrap_or(0);
    let cfg = job.net.clone().unwrap_or(NetConfig {
        num_bins: DEFAULT_FRAME_SIZE / 2 + 1,
        ..NetConfig::default()
    });
    let (store, load_error) = match weights {
        Some(p) => match WeightStore::load(p) {
            Ok(w) => (Some(w), None),
            Err(e) => (None, Some(e)),
        },
        None => (None, None),
    };
    let mut report = selftest::run(seed, store.as_ref().map(|w| (w, &cfg)));
    if let Some(e) = load_error {
        report.checks.push(Check {
            module: "mask_net",
            property: "weight_manifest",
            passed: false,
            detail: format!("error: {e}"),
        });
    }
    for line in report.lines() {
        println!("{line}");
    }
    println!("summary_hash={}", report.summary_hash());
    for c in report.failures() {
        eprintln!("failed: {} {}", c.module, c.property);
    }
    Ok(report.passed())
}
