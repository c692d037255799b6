//! Subcommand implementations. Each reads its section, runs, and writes
//! outputs plus provenance from this thread only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use aiml::experiment::{
    bayes_error, run_comparison_experiment, ExperimentConfig, KChoice, RepresentationSpec, ResultTable, Sweep,
};
use aiml::image::Augmentation;
use aiml::io;
use aiml::kernel::{bandwidth_heuristic, integrated_weights, BandwidthRule};
use aiml::knn::KRule;
use aiml::manifold::{generate_dataset, sine_regression, ManifoldKind, ManifoldSpec};
use aiml::mnist::{load_mnist, run_mnist_experiment, MnistConfig, MnistEncoderConfig, MnistPaths};
use aiml::objective::{init_encoder, train_from, LossConfig};
use aiml::spectral::{diffusion_maps, laplacian_eigenmaps};
use aiml::{Error, Result};
use serde_json::json;

use crate::config::Section;

/// Effective configuration of one run.
pub struct Provenance {
    pub command: &'static str,
    pub values: BTreeMap<String, String>,
}

impl Provenance {
    fn new(command: &'static str, section: &Section) -> Self {
        Provenance {
            command,
            values: section.effective().clone(),
        }
    }

    fn json(&self) -> serde_json::Value {
        json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": self.values,
        })
    }

    /// `# key = value` lines placed ahead of a CSV header.
    fn preamble(&self) -> String {
        let mut out = format!("# command = {}\n# version = {}\n", self.command, env!("CARGO_PKG_VERSION"));
        for (k, v) in &self.values {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        out
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !dir.exists() {
            log::info!("creating output directory {}", dir.display());
        }
    }
    io::write_file(path, bytes)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_csv(path: &Path, prov: &Provenance, extra: &[(String, String)], body: &str) -> Result<()> {
    let mut text = prov.preamble();
    for (k, v) in extra {
        text.push_str(&format!("# {k} = {v}\n"));
    }
    text.push_str(body);
    write(path, text.as_bytes())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    write(path, text.as_bytes())
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    path.with_file_name(name)
}

fn required_path(s: &mut Section, key: &str) -> Result<PathBuf> {
    let v = s.raw(key, "");
    if v.is_empty() {
        return Err(Error::Config(format!("`{key}` is required")));
    }
    Ok(PathBuf::from(v))
}

fn parse_k(v: &str) -> Result<KChoice> {
    match v.split_once(':') {
        Some(("rate", a)) => Ok(KChoice::Rate {
            holder_alpha: a.parse().map_err(|_| Error::Config(format!("bad holder exponent in `{v}`")))?,
        }),
        _ if v == "rate" => Ok(KChoice::Rate { holder_alpha: 1.0 }),
        _ => v
            .parse()
            .map(KChoice::Fixed)
            .map_err(|_| Error::Config(format!("k must be an integer or `rate[:alpha]`, got `{v}`"))),
    }
}

fn loss_config(s: &mut Section, defaults: &LossConfig) -> Result<LossConfig> {
    Ok(LossConfig {
        lambda1: s.get("lambda1", &defaults.lambda1.to_string())?,
        lambda2: s.get("lambda2", &defaults.lambda2.to_string())?,
        bandwidth_t: defaults.bandwidth_t,
        batch_size: s.get("batch_size", &defaults.batch_size.to_string())?,
        learning_rate: s.get("learning_rate", &defaults.learning_rate.to_string())?,
        lr_decay: s.get("lr_decay", &defaults.lr_decay.to_string())?,
        epochs: s.get("epochs", &defaults.epochs.to_string())?,
        seed: defaults.seed,
    })
}

pub fn generate(mut s: Section) -> Result<()> {
    let kind: ManifoldKind = s.get("manifold", "torus")?;
    let m: usize = s.get("m", "400")?;
    let n: usize = s.get("n", "3")?;
    let seed: u64 = s.get("seed", "0")?;
    let output = required_path(&mut s, "output")?;
    s.finish()?;
    let prov = Provenance::new("generate", &s);

    let spec = ManifoldSpec::default_for(kind);
    let ds = generate_dataset(&spec, m, n, seed)?;
    log::info!("generated {} with m = {m}, n = {n} ({} points)", spec.name(), m * n);
    write(&output, &io::dataset_to_bytes(&ds))?;
    write_json(&sidecar(&output), &prov.json())
}

pub fn embed(mut s: Section) -> Result<()> {
    let dataset = required_path(&mut s, "dataset")?;
    let method = s.raw("method", "le");
    let n_components: usize = s.get("n_components", "2")?;
    let bandwidth: BandwidthRule = s.get("bandwidth", "fixed:5")?;
    let (alpha, l) = match method.as_str() {
        "le" => (None, None),
        "dm" => (Some(s.get::<f64>("alpha", "1")?), Some(s.get::<f64>("diffusion_time", "0.1")?)),
        other => return Err(Error::Config(format!("method must be `le` or `dm`, got `{other}`"))),
    };
    let out_dir = required_path(&mut s, "output_dir")?;
    s.finish()?;
    let prov = Provenance::new("embed", &s);

    let ds = io::load_dataset(&dataset)?;
    if n_components == 0 || n_components > ds.m().saturating_sub(1) {
        return Err(Error::Config(format!(
            "n_components = {n_components} must lie in 1..={} for m = {}",
            ds.m().saturating_sub(1),
            ds.m()
        )));
    }
    let t = bandwidth_heuristic(&ds, bandwidth)?;
    log::info!("bandwidth {bandwidth} resolved to t = {t}");
    let w = integrated_weights(&ds, t)?;
    let emb = match (alpha, l) {
        (Some(a), Some(l)) => diffusion_maps(&w, n_components, a, l)?,
        _ => laplacian_eigenmaps(&w, n_components)?,
    };
    for warning in &emb.warnings {
        log::warn!("{warning}");
    }
    let extra = [("bandwidth_t".to_string(), t.to_string())];
    write_csv(&out_dir.join("embedding.csv"), &prov, &extra, &io::embedding_csv(&emb, Some(&ds))?)?;
    write_csv(&out_dir.join("eigenvalues.csv"), &prov, &extra, &io::eigenvalues_csv(&emb)?)?;
    let mut meta = io::embedding_metadata(&emb);
    meta["provenance"] = prov.json();
    write_json(&out_dir.join("embedding.json"), &meta)
}

fn parse_representation(item: &str, hidden: &[usize], loss: &LossConfig) -> Result<RepresentationSpec> {
    let parts: Vec<&str> = item.split(':').collect();
    let num = |v: &str| -> Result<f64> {
        v.parse()
            .map_err(|_| Error::Config(format!("bad number `{v}` in representation `{item}`")))
    };
    match parts.as_slice() {
        ["X"] | ["x"] => Ok(RepresentationSpec::RawX),
        ["LE"] | ["le"] => Ok(RepresentationSpec::LaplacianEigenmaps),
        ["DM" | "dm", a, l] => Ok(RepresentationSpec::DiffusionMaps {
            alpha: num(a)?,
            diffusion_time: num(l)?,
        }),
        ["encoder"] => Ok(RepresentationSpec::Encoder {
            hidden: hidden.to_vec(),
            loss: *loss,
        }),
        _ => Err(Error::Config(format!(
            "unknown representation `{item}`; use X, LE, DM:<alpha>:<l> or encoder"
        ))),
    }
}

pub fn knn_eval(mut s: Section) -> Result<()> {
    let manifolds: Vec<ManifoldKind> = s.list("manifolds", "torus,swiss_roll_2")?;
    let base = ExperimentConfig::torus_sample_sizes();
    let m: usize = s.get("m", &base.m.to_string())?;
    let n: usize = s.get("n", &base.n.to_string())?;
    let test_size: usize = s.get("test_size", &base.test_size.to_string())?;
    let n_components: usize = s.get("n_components", &base.n_components.to_string())?;
    let bandwidth: BandwidthRule = s.get("bandwidth", "fixed:5")?;
    let k = parse_k(&s.raw("k", "5"))?;
    let hidden: Vec<usize> = s.list("encoder_hidden", "32,32")?;
    let loss = loss_config(&mut s, &LossConfig::default())?;
    let reps_raw: Vec<String> = s.list("representations", "X,LE,DM:0.5:0.1,DM:1:0.1")?;
    let representations = reps_raw
        .iter()
        .map(|r| parse_representation(r, &hidden, &loss))
        .collect::<Result<Vec<_>>>()?;
    let sweep = match s.raw("sweep", "s").as_str() {
        "s" => Sweep::SampleSize {
            sizes: s.list("sizes", "50,100,200,300")?,
            regression: sine_regression(s.get("delta", "1")?)?,
        },
        "delta" => Sweep::Delta {
            deltas: s.list("deltas", "1,2,3,4")?,
            s: s.get("s", "300")?,
        },
        other => return Err(Error::Config(format!("sweep must be `s` or `delta`, got `{other}`"))),
    };
    let repeats: usize = s.get("repeats", &base.repeats.to_string())?;
    let seed: u64 = s.get("seed", "0")?;
    let output = required_path(&mut s, "output")?;
    s.finish()?;
    if manifolds.is_empty() {
        return Err(Error::Config("at least one manifold is required".into()));
    }
    let prov = Provenance::new("knn-eval", &s);

    let mut body = String::new();
    let mut extra = Vec::new();
    for (idx, kind) in manifolds.iter().enumerate() {
        let manifold = ManifoldSpec::default_for(*kind);
        let cfg = ExperimentConfig {
            manifold,
            m,
            n,
            test_size,
            n_components,
            bandwidth,
            k,
            representations: representations.clone(),
            sweep: sweep.clone(),
            repeats,
            seed,
        };
        cfg.validate()?;
        log::info!("running {} repeats on {}", repeats, manifold.name());
        let table: ResultTable = run_comparison_experiment(&cfg)?;
        match &sweep {
            Sweep::SampleSize { regression, .. } => {
                extra.push((format!("bayes_error.{}", manifold.name()), bayes_error(&manifold, regression).to_string()));
            }
            Sweep::Delta { deltas, .. } => {
                for d in deltas {
                    let b = bayes_error(&manifold, &sine_regression(*d)?);
                    extra.push((format!("bayes_error.{}.delta{d}", manifold.name()), b.to_string()));
                }
            }
        }
        let csv = io::result_table_csv(&table)?;
        if idx == 0 {
            body.push_str(&csv);
        } else {
            body.extend(csv.lines().skip(1).map(|l| format!("{l}\n")));
        }
    }
    write_csv(&output, &prov, &extra, &body)
}

pub fn train_encoder(mut s: Section) -> Result<()> {
    let dataset = required_path(&mut s, "dataset")?;
    let hidden: Vec<usize> = s.list("hidden", "32,32")?;
    let n_components: usize = s.get("n_components", "2")?;
    let bandwidth: BandwidthRule = s.get("bandwidth", "fixed:5")?;
    let seed: u64 = s.get("seed", "0")?;
    let mut loss = loss_config(&mut s, &LossConfig::default())?;
    let out_dir = required_path(&mut s, "output_dir")?;
    s.finish()?;
    let prov = Provenance::new("train-encoder", &s);

    let ds = io::load_dataset(&dataset)?;
    loss.bandwidth_t = bandwidth_heuristic(&ds, bandwidth)?;
    loss.seed = seed;
    let mut arch = vec![ds.dim()];
    arch.extend_from_slice(&hidden);
    arch.push(n_components);
    let init = init_encoder(&ds, &arch, seed)?;
    let outcome = train_from(init, &ds, &loss)?;
    if let Some(last) = outcome.trajectory.last() {
        log::info!("final loss {:.6e} after {} epochs", last.loss.total, loss.epochs);
    }
    let ckpt = out_dir.join("checkpoint.bin");
    write(&ckpt, &io::checkpoint_to_bytes(&outcome.params))?;
    let mut meta = prov.json();
    meta["bandwidth_t"] = json!(loss.bandwidth_t);
    write_json(&sidecar(&ckpt), &meta)?;
    let extra = [("bandwidth_t".to_string(), loss.bandwidth_t.to_string())];
    write_csv(&out_dir.join("trajectory.csv"), &prov, &extra, &io::trajectory_csv(&outcome.trajectory)?)
}

pub fn mnist_eval(mut s: Section) -> Result<()> {
    let dir = required_path(&mut s, "mnist_dir")?;
    let d = MnistConfig::default();
    let augmentations: Vec<Augmentation> = s.list("augmentations", "resize_crop,rotate_resize_crop")?;
    let encoder = if s.bool("encoder", false)? {
        let e = MnistEncoderConfig::default();
        Some(MnistEncoderConfig {
            corpus: s.get("encoder_corpus", &e.corpus.to_string())?,
            views: s.get("encoder_views", &e.views.to_string())?,
            hidden: s.list("encoder_hidden", "256,64")?,
            loss: loss_config(&mut s, &e.loss)?,
        })
    } else {
        None
    };
    let cfg = MnistConfig {
        unlabeled: s.get("unlabeled", &d.unlabeled.to_string())?,
        views: s.get("views", &d.views.to_string())?,
        augmentations,
        n_components: s.get("n_components", &d.n_components.to_string())?,
        bandwidth: s.get("bandwidth", "median")?,
        k: KRule::Fixed(s.get("k", "5")?),
        sizes: s.list("sizes", "50,100,200,400")?,
        test_size: s.get("test_size", &d.test_size.to_string())?,
        repeats: s.get("repeats", &d.repeats.to_string())?,
        seed: s.get("seed", "0")?,
        encoder,
    };
    let output = required_path(&mut s, "output")?;
    s.finish()?;
    let prov = Provenance::new("mnist-eval", &s);

    let data = load_mnist(&MnistPaths::in_dir(&dir)?)?;
    cfg.validate(&data)?;
    log::info!(
        "loaded {} training and {} test images",
        data.train_images.len(),
        data.test_images.len()
    );
    let table = run_mnist_experiment(&data, &cfg)?;
    write_csv(&output, &prov, &[], &io::result_table_csv(&table)?)
}
