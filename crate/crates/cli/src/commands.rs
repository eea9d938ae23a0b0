use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use esr_core::classifier::{build_model, train, TrainedModel};
use esr_core::dataset::{parse_manifest, preprocess_rgb, summarize, StoneObservation};
use esr_core::evaluation::{cross_validate, stratified_group_split, EvalItem, EvaluationReport, SplitItem, SplitPlan, METRIC_NAMES};
use esr_core::explain::{grad_cam, hotspot_rates, localize_hotspot, overlay, HotspotCase, HotspotLocation};
use esr_core::synth::{generate_corpus, load_masks, write_corpus, SIDECAR_FILE};
use esr_core::View;

use crate::config::{RunConfig, Subset};
use crate::manifest::{now, relative, sha256_file, tmp_path, write_atomic, RunManifest, StageRecord};
use crate::ValidationError;

pub const CONFIG_FILE: &str = "config.toml";

/// An open run directory plus the provenance being collected for it.
pub struct Run {
    pub dir: PathBuf,
    pub config: RunConfig,
    manifest: RunManifest,
    started: String,
}

impl Run {
    pub fn open(dir: PathBuf, config: RunConfig) -> Result<Self> {
        for sub in ["corpus", "checkpoints", "reports", "overlays"] {
            std::fs::create_dir_all(dir.join(sub)).with_context(|| format!("creating {}", dir.join(sub).display()))?;
        }
        write_atomic(&dir.join(CONFIG_FILE), config.to_toml().as_bytes())?;
        let manifest = RunManifest::open(&dir, &config)?;
        Ok(Run { dir, config, manifest, started: now() })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.manifest.inputs.insert(relative(&self.dir, path), hash);
        Ok(())
    }

    fn artifact(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.manifest.artifacts.insert(relative(&self.dir, path), hash);
        Ok(())
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.artifact(path)
    }

    fn write_png(&mut self, path: &Path, img: &image::RgbImage) -> Result<()> {
        let tmp = tmp_path(path).with_extension("png");
        img.save(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, path)?;
        self.artifact(path)
    }

    pub fn finish(mut self, command: &str) -> Result<()> {
        let cfg = self.dir.join(CONFIG_FILE);
        self.artifact(&cfg)?;
        self.manifest.stages.push(StageRecord { command: command.to_string(), started: self.started.clone(), finished: now() });
        self.manifest.save(&self.dir)
    }

    fn manifest_path(&self) -> Result<PathBuf> {
        let path = self.config.data.manifest.clone().unwrap_or_else(|| self.dir.join("corpus").join("manifest.csv"));
        if !path.is_file() {
            return Err(ValidationError(format!("manifest {} not found; run `synth` first or set data.manifest", path.display())).into());
        }
        Ok(path)
    }

    fn observations(&mut self) -> Result<Vec<StoneObservation>> {
        let path = self.manifest_path()?;
        self.input(&path)?;
        parse_manifest(&path).with_context(|| format!("loading {}", path.display()))
    }

    fn checkpoint_path(&self, view: View) -> PathBuf {
        self.dir.join("checkpoints").join(format!("{view}.ckpt"))
    }

    fn report_path(&self, name: String) -> PathBuf {
        self.dir.join("reports").join(name)
    }
}

fn of_view(obs: &[StoneObservation], view: View) -> Vec<&StoneObservation> {
    obs.iter().filter(|o| o.view == view).collect()
}

pub fn synth(run: &mut Run) -> Result<String> {
    let spec = run.config.generator_spec();
    let corpus = generate_corpus(&spec)?;
    let files = write_corpus(&run.dir.join("corpus"), &corpus)?;
    for f in &files.files {
        run.artifact(f)?;
    }
    let summary = summarize(corpus.iter().map(|s| (s.observation.view, s.observation.label, s.observation.stone_id.as_str())));
    let views = run.config.views();
    let text: String = summary
        .to_string()
        .lines()
        .filter(|l| views.iter().any(|v| l.starts_with(&format!("{v}:"))))
        .map(|l| format!("{l}\n"))
        .collect();
    Ok(text)
}

pub fn train_views(run: &mut Run) -> Result<String> {
    let obs = run.observations()?;
    let mut out = String::new();
    for view in run.config.views() {
        let subset = of_view(&obs, view);
        if subset.is_empty() {
            if run.config.view.is_some() {
                bail!("the corpus has no {view} images");
            }
            log::warn!("no {view} images, skipping");
            continue;
        }
        let cv = &run.config.evaluation;
        let items: Vec<SplitItem> = subset
            .iter()
            .map(|o| SplitItem { observation_id: o.observation_id.clone(), stone_id: o.stone_id.clone(), label: o.label })
            .collect();
        let plan = stratified_group_split(&items, cv.test_fraction, cv.split_seed(0))?;
        for w in &plan.warnings {
            log::warn!("{view}: {w}");
        }
        let train_ids: BTreeSet<&str> = plan.train.iter().map(String::as_str).collect();
        let data: Vec<_> = subset
            .iter()
            .filter(|o| train_ids.contains(o.observation_id.as_str()))
            .map(|o| (preprocess_rgb(&o.image), o.label))
            .collect();
        let pairs: Vec<_> = data.iter().map(|(img, label)| (img, *label)).collect();
        let model = build_model(&run.config.model)?;
        let seed = cv.train_seed(0, run.config.model.init_seed);
        let model = if run.config.train.epochs == 0 { model } else { train(model, &pairs, &run.config.train, seed)? };

        let ckpt = run.checkpoint_path(view);
        model.save(&ckpt)?;
        run.artifact(&ckpt)?;
        let mut history = String::from("epoch,loss,accuracy\n");
        for e in &model.history {
            writeln!(history, "{},{},{}", e.epoch, e.loss, e.accuracy)?;
        }
        let history_path = run.report_path(format!("{view}_history.csv"));
        run.write(&history_path, history.as_bytes())?;
        let split_path = run.report_path(format!("{view}_split.json"));
        run.write(&split_path, &serde_json::to_vec_pretty(&plan)?)?;
        let last = model.history.last().map_or("untrained".to_string(), |e| format!("final loss {:.4}, accuracy {:.3}", e.loss, e.accuracy));
        writeln!(
            out,
            "{view}: {} epochs on {} training images ({} held out), {last}",
            model.history.len(),
            data.len(),
            plan.test.len()
        )?;
    }
    Ok(out)
}

pub fn evaluate(run: &mut Run) -> Result<String> {
    let obs = run.observations()?;
    let mut out = String::new();
    for view in run.config.views() {
        let items: Vec<EvalItem> = of_view(&obs, view)
            .into_iter()
            .map(|o| EvalItem {
                observation_id: o.observation_id.clone(),
                stone_id: o.stone_id.clone(),
                view,
                label: o.label,
                image: preprocess_rgb(&o.image),
            })
            .collect();
        if items.is_empty() && run.config.view.is_none() {
            log::warn!("no {view} images, skipping");
            continue;
        }
        let c = &run.config;
        let outcome = cross_validate(&items, view, &c.model, &c.train, &c.evaluation)
            .with_context(|| format!("cross-validating the {view} view"))?;
        let report = outcome.report;
        run.write(&run.report_path(format!("{view}_report.json")), report.to_json()?.as_bytes())?;
        run.write(&run.report_path(format!("{view}_table1.csv")), report.table1_csv().as_bytes())?;
        run.write(&run.report_path(format!("{view}_table2.csv")), report.table2_csv().as_bytes())?;
        run.write(&run.report_path(format!("{view}_confusion.txt")), report.confusion.render_text().as_bytes())?;
        run.write_png(&run.report_path(format!("{view}_confusion.png")), &report.confusion.render_png())?;
        let overall = report.overall_accuracy.mean.map_or("-".to_string(), |m| format!("{m:.1}%"));
        writeln!(out, "{view}: {} folds, overall accuracy {overall}", report.folds.len())?;
    }
    Ok(out)
}

pub fn explain(run: &mut Run) -> Result<String> {
    let obs = run.observations()?;
    let th = run.config.explain.thresholds;
    let mut cases = Vec::new();
    let mut out = String::new();
    for view in run.config.views() {
        let ckpt = run.checkpoint_path(view);
        if !ckpt.is_file() {
            if run.config.view.is_none() {
                log::warn!("no {view} checkpoint, skipping");
                continue;
            }
            return Err(ValidationError(format!("checkpoint {} not found; run `train` first", ckpt.display())).into());
        }
        run.input(&ckpt)?;
        let model = TrainedModel::load(&ckpt)?;
        let mut subset = of_view(&obs, view);
        if run.config.explain.subset == Subset::Test {
            let split_path = run.report_path(format!("{view}_split.json"));
            if !split_path.is_file() {
                return Err(ValidationError(format!("{} not found; run `train` first", split_path.display())).into());
            }
            run.input(&split_path)?;
            let plan: SplitPlan = serde_json::from_slice(&std::fs::read(&split_path)?)?;
            let test: BTreeSet<String> = plan.test.into_iter().collect();
            subset.retain(|o| test.contains(&o.observation_id));
        }
        if let Some(n) = run.config.explain.max_images {
            subset.truncate(n);
        }
        let mut rows = String::from("observation_id,truth,predicted,correct,location\n");
        if !subset.is_empty() {
            let sidecar = run.manifest_path()?.with_file_name(SIDECAR_FILE);
            if !sidecar.is_file() {
                bail!("mask sidecar {} not found; localization needs the generator masks", sidecar.display());
            }
            run.input(&sidecar)?;
            let masks = load_masks(&sidecar)?;
            let overlay_dir = run.dir.join("overlays").join(view.name());
            std::fs::create_dir_all(&overlay_dir)?;
            for o in &subset {
                let m = masks.get(&o.observation_id).with_context(|| format!("no masks for {}", o.observation_id))?;
                let img = preprocess_rgb(&o.image);
                let predicted = model.predict(&img).argmax_class;
                let map = grad_cam(&model, &img, predicted);
                run.write_png(&overlay_dir.join(format!("{}.png", o.observation_id)), &overlay(&img, &map))?;
                let location = match localize_hotspot(&map, &m.stone_mask, &m.tip_mask, &th) {
                    Ok(l) => l,
                    // A zero map has no hot spot on the stone.
                    Err(esr_core::explain::ExplainError::NoHotspot) => HotspotLocation::OutsideStone,
                    Err(e) => return Err(e.into()),
                };
                let correct = predicted == o.label;
                writeln!(rows, "{},{},{},{},{}", o.observation_id, o.label, predicted, correct, location.name())?;
                cases.push(HotspotCase { view, correct, location });
            }
        }
        run.write(&run.report_path(format!("{view}_hotspots.csv")), rows.as_bytes())?;
        let report = hotspot_rates(&cases);
        let on = report.on_stone_when_correct(view).map_or("-".to_string(), |r| format!("{r:.1}%"));
        writeln!(out, "{view}: {} images explained, hot spot on the stone for {on} of correct predictions", subset.len())?;
    }
    let rates = hotspot_rates(&cases);
    run.write(&run.report_path("hotspot_rates.csv".into()), rates.to_csv().as_bytes())?;
    Ok(out)
}

fn cell(s: &esr_core::evaluation::Summary) -> String {
    match (s.mean, s.std) {
        (Some(m), Some(sd)) if s.single_sample => format!("{m:.1} ± {sd:.1}*"),
        (Some(m), Some(sd)) => format!("{m:.1} ± {sd:.1}"),
        (Some(m), None) => format!("{m:.1}"),
        _ => "-".to_string(),
    }
}

fn table_text(report: &EvaluationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<22}{}", "class", METRIC_NAMES.map(|n| format!("{n:>14}")).join(""));
    for row in report.table1.iter().chain(&report.table2) {
        let name = match row.mode {
            Some(mode) => format!("{} ({})", row.class, mode.describe(row.class)),
            None => row.class.to_string(),
        };
        let cells: String = row.metrics.values().iter().map(|v| format!("{:>14}", cell(v))).collect();
        let _ = writeln!(s, "{name:<22}{cells}");
    }
    s
}

pub fn report(run: &mut Run) -> Result<String> {
    let mut out = String::new();
    let mut found = false;
    for view in run.config.views() {
        let path = run.report_path(format!("{view}_report.json"));
        if !path.is_file() {
            continue;
        }
        found = true;
        run.input(&path)?;
        let report: EvaluationReport = serde_json::from_slice(&std::fs::read(&path)?)?;
        writeln!(out, "== {view} ({} folds) ==", report.folds.len())?;
        out.push_str(&table_text(&report));
        writeln!(out, "\noverall accuracy {}\n", cell(&report.overall_accuracy))?;
        out.push_str(&report.confusion.render_text());
        out.push('\n');
    }
    if !found {
        return Err(ValidationError("no evaluation reports in this run; run `evaluate` first".into()).into());
    }
    let rates = run.report_path("hotspot_rates.csv".into());
    if rates.is_file() {
        run.input(&rates)?;
        writeln!(out, "== hot spots ==\n{}", std::fs::read_to_string(&rates)?)?;
    }
    out.push_str("* single repeat: std is reported as 0\n");
    run.write(&run.report_path("summary.txt".into()), out.as_bytes())?;
    Ok(out)
}
