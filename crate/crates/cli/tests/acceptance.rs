//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test -p daclab-cli --test acceptance` runs everything;
//! `cargo test -p daclab-cli --test acceptance -- 2 7 10` runs a subset.
//! Run artifacts are kept under the cargo target tmp dir in `acceptance/`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;

use daclab_cli::{mean_std, ExperimentConfig, Metrics, Scheme};
use daclab_core::datagen::{load_image, OodPool, OodSource};
use daclab_core::dcl::{adapt, consolidate, initial_model, run_sequential, InitMessage, MessageLog, Residency, SCMessage, SchemeConfig};
use daclab_core::eval::{argmax_agreement, cka};
use daclab_core::losses::{dkd_loss, kd_loss, pld_loss, pld_loss_paired, total_loss, Projections, StudentInit, LOGITS_TAP};
use daclab_core::models::io::{decode_model, encode_model};
use daclab_core::models::{init_head, load_model, save_model, ArchSpec, BoundModel, HeadSelector, MultiHeadModel};
use daclab_core::numerics::gradcheck::check_gradients;
use daclab_core::numerics::{Graph, ParameterSet, RngStream, Tensor};
use daclab_core::Error;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rand_tensor(shape: &[usize], rng: &mut RngStream) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0))
}

// ---------------------------------------------------------------- 1

fn tiny_arch(k: u64, rng: &mut RngStream) -> ArchSpec {
    let pick = |rng: &mut RngStream, lo: usize, hi: usize| lo + rng.below(hi - lo + 1);
    if k % 5 == 4 {
        let c = pick(rng, 1, 2);
        ArchSpec::smallcnn([c, 4, 4], [pick(rng, 2, 3), pick(rng, 2, 3)], pick(rng, 3, 5), 2).with_taps(&["conv2", "fc"])
    } else {
        let depth = pick(rng, 1, 2);
        let hidden: Vec<usize> = (0..depth).map(|_| pick(rng, 3, 5)).collect();
        let taps: Vec<String> = (1..=depth).map(|i| format!("hidden{i}")).collect();
        let taps: Vec<&str> = taps.iter().map(String::as_str).collect();
        ArchSpec::mlp(pick(rng, 3, 6), hidden, 2).with_taps(&taps)
    }
}

fn with_heads(arch: &ArchSpec, seed: u64, tag: &str, ids: &[u32]) -> MultiHeadModel<f64> {
    let mut m = MultiHeadModel::<f64>::random(arch.clone(), seed).unwrap();
    for &id in ids {
        let head = init_head(arch, &RngStream::new(seed, &format!("{tag}{id}")));
        m.attach_head(head, id, vec![2 * id, 2 * id + 1]).unwrap();
    }
    m
}

/// Max relative error per loss for one random model at step 2.
fn gradient_errors(arch: &ArchSpec, seed: u64) -> BTreeMap<&'static str, f64> {
    let student = with_heads(arch, seed, "s", &[1, 2]);
    let prev = with_heads(arch, 1000 + seed, "p", &[1]);
    let sc = with_heads(arch, 2000 + seed, "c", &[2]);
    let mut rng = RngStream::new(seed, "acceptance-x");
    let mut shape = vec![3];
    shape.extend_from_slice(&arch.input);
    let x = rand_tensor(&shape, &mut rng);
    let mut taps = arch.taps.clone();
    taps.push(LOGITS_TAP.to_string());
    let mut proj = Projections::<f64>::for_step(arch, &taps, 1).unwrap();
    for (_, t) in proj.params_mut().iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.uniform_range(-0.2, 0.2));
    }
    let mut flat = ParameterSet::new();
    for (n, t) in student.backbone().iter() {
        let mut t = t.clone();
        if n.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.uniform_range(0.05, 0.5));
        }
        flat.insert(format!("bb/{n}"), t).unwrap();
    }
    for h in student.heads() {
        for (n, t) in h.params.iter() {
            flat.insert(format!("h{}/{n}", h.task_id), t.clone()).unwrap();
        }
    }
    for (n, t) in proj.params().iter() {
        flat.insert(format!("p/{n}"), t.clone()).unwrap();
    }

    let mut out = BTreeMap::new();
    for which in ["kd_loss", "dkd_loss", "pld_loss", "total_loss"] {
        let report = check_gradients(&flat, 1e-5, |g, b| {
            let part = |prefix: &str| -> BTreeMap<String, _> {
                b.iter().filter_map(|(k, v)| k.strip_prefix(prefix).map(|r| (r.to_string(), *v))).collect()
            };
            let bound = BoundModel {
                backbone: part("bb/"),
                heads: vec![part("h1/"), part("h2/")],
            };
            let xv = g.constant(x.clone());
            let s_out = student.forward_bound(g, &bound, xv, HeadSelector::All, &arch.taps)?;
            let p_out = prev.forward(g, xv, HeadSelector::All)?;
            let c_out = sc.forward(g, xv, HeadSelector::All)?;
            let heads: Vec<_> = s_out.logits.iter().map(|(_, v)| *v).collect();
            let dkd = dkd_loss(g, &heads, c_out.logits[0].1, &[p_out.logits[0].1], 0.5, true)?;
            if which == "kd_loss" {
                return kd_loss(g, heads[1], c_out.logits[0].1, 0.5, true);
            }
            if which == "dkd_loss" {
                return Ok(dkd);
            }
            let joined = g.concat_cols(&heads[..1])?;
            let mut s_sc = s_out.taps.clone();
            s_sc.insert(LOGITS_TAP.into(), heads[1]);
            let mut s_cl = s_out.taps.clone();
            s_cl.insert(LOGITS_TAP.into(), joined);
            let mut t_sc = c_out.taps.clone();
            t_sc.insert(LOGITS_TAP.into(), c_out.logits[0].1);
            let mut t_cl = p_out.taps.clone();
            t_cl.insert(LOGITS_TAP.into(), p_out.logits[0].1);
            let pld = pld_loss_paired(g, &s_sc, &t_sc, Some((&s_cl, &t_cl)), &part("p/"), 2)?;
            if which == "pld_loss" {
                return Ok(pld);
            }
            total_loss(g, dkd, pld, 0.3)
        })
        .unwrap();
        out.insert(which, report.max_rel_error);
    }
    out
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = RngStream::new(0, "acceptance-archs");
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let models = 25;
    for k in 0..models {
        let arch = tiny_arch(k, &mut rng);
        for (loss, e) in gradient_errors(&arch, k) {
            let w = worst.entry(loss).or_insert(0.0);
            *w = w.max(e);
            ensure(e <= 1e-5, || format!("model {k} ({}): {loss} relative error {e:.3e}", arch.kind))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.0}s"))?;
    let summary: Vec<String> = worst.iter().map(|(l, e)| format!("{l} {e:.1e}")).collect();
    Ok(format!("{models} models, worst: {} ({secs:.1}s)", summary.join(", ")))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Check {
    let mut rng = RngStream::new(2, "acceptance-identities");
    let mut worst_kl: f64 = 0.0;
    for temp in [0.5, 1.0, 2.0, 4.0] {
        let p = rand_tensor(&[8, 5], &mut rng);
        let mut g = Graph::new();
        let (a, b) = (g.constant(p.clone()), g.constant(p));
        let l = kd_loss(&mut g, a, b, temp, true).map_err(err)?;
        worst_kl = worst_kl.max(g.value(l).item().abs());
    }
    ensure(worst_kl <= 1e-7, || format!("KL(p||p) = {worst_kl:e}"))?;

    let h = rand_tensor(&[6, 4], &mut rng);
    let proj = Projections::<f64>::identity(&[("fc".to_string(), 4)]);
    for i in [1, 3] {
        let mut g = Graph::new();
        let b = proj.bind(&mut g, false);
        let tap = BTreeMap::from([("fc".to_string(), g.constant(h.clone()))]);
        let l = pld_loss(&mut g, &tap, &tap, Some(&tap), &b, i).map_err(err)?;
        let v = g.value(l).item();
        ensure(v == 0.0, || format!("identity PLD at i={i} is {v:e}"))?;
    }

    let heads: Vec<Tensor<f64>> = (0..3).map(|_| rand_tensor(&[6, 3], &mut rng)).collect();
    let teachers: Vec<Tensor<f64>> = (0..3).map(|_| rand_tensor(&[6, 3], &mut rng)).collect();
    let mut g = Graph::new();
    let hv: Vec<_> = heads.iter().map(|t| g.constant(t.clone())).collect();
    let tv: Vec<_> = teachers.iter().map(|t| g.constant(t.clone())).collect();
    let dkd = dkd_loss(&mut g, &hv, tv[2], &tv[..2], 0.5, true).map_err(err)?;
    let hs = BTreeMap::from([("fc".to_string(), g.constant(h.clone()))]);
    let other = BTreeMap::from([("fc".to_string(), g.constant(rand_tensor(&[6, 4], &mut rng)))]);
    let b = proj.bind(&mut g, false);
    let pld = pld_loss(&mut g, &hs, &other, Some(&other), &b, 3).map_err(err)?;
    ensure(g.value(pld).item() > 0.0, || "PLD vanished on distinct activations".into())?;
    let total = total_loss(&mut g, dkd, pld, 0.0).map_err(err)?;
    let (t, d) = (g.value(total).item(), g.value(dkd).item());
    ensure(t.to_bits() == d.to_bits(), || format!("lambda=0 total {t:e} vs dkd {d:e}"))?;

    let mut g = Graph::new();
    let (s, c) = (g.constant(heads[0].clone()), g.constant(teachers[0].clone()));
    let first = dkd_loss(&mut g, &[s], c, &[], 0.5, true).map_err(err)?;
    let kd = kd_loss(&mut g, s, c, 0.5, true).map_err(err)?;
    let (a, b) = (g.value(first).item(), g.value(kd).item());
    ensure(a.to_bits() == b.to_bits(), || format!("dkd at i=1 {a:e} vs kd {b:e}"))?;
    let p = proj.bind(&mut g, false);
    let h1 = BTreeMap::from([("fc".to_string(), g.constant(h.clone()))]);
    let h2 = BTreeMap::from([("fc".to_string(), g.constant(rand_tensor(&[6, 4], &mut rng)))]);
    let junk = BTreeMap::from([("fc".to_string(), g.constant(rand_tensor(&[6, 4], &mut rng)))]);
    let without = pld_loss(&mut g, &h1, &h2, None, &p, 1).map_err(err)?;
    let with = pld_loss(&mut g, &h1, &h2, Some(&junk), &p, 1).map_err(err)?;
    ensure(g.value(without).item() == g.value(with).item(), || "i=1 PLD depends on the previous model".into())?;

    Ok(format!("max KL(p||p) {worst_kl:.1e}; identity PLD 0; lambda=0 and i=1 bit-exact"))
}

// ---------------------------------------------------------------- 3

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk() -> ExperimentConfig {
    ExperimentConfig::read(&workspace().join("configs/shapes_dac.toml")).expect("shipped desk config")
}

fn criterion_3() -> Check {
    let start = Instant::now();
    let cfg = desk();
    let loaded = cfg.clone().validate().map_err(err)?;
    let exp = loaded.stream().map_err(err)?.remove(0);
    let OodSource::SingleImage { path } = &cfg.source else {
        return Err("desk config does not use a single image".into());
    };
    let pool = OodPool::Images(vec![load_image(path).map_err(err)?]);
    let mut cons = cfg.consolidation.clone();
    cons.student_init = StudentInit::Random;
    let mut scores = Vec::new();
    for seed in 0..3u64 {
        let init = InitMessage::from_model(1, &initial_model(&cfg.arch, seed).map_err(err)?);
        let (teacher, _) = adapt(&init, &exp, &cfg.adapt, &cfg.arch, seed).map_err(err)?;
        let residency = Residency::default();
        let student = consolidate(None, &SCMessage::from_model(&teacher), &pool, &cfg.aug, &cons, seed, &residency)
            .map_err(err)?
            .model;
        let x = &exp.test.images;
        let s = student.infer(x, HeadSelector::Task(exp.task_id), &[], 512).map_err(err)?;
        let t = teacher.as_multi_head().infer(x, HeadSelector::All, &[], 512).map_err(err)?;
        scores.push(argmax_agreement(&s.logits[0].1, &t.logits[0].1).map_err(err)?);
    }
    let (mean, _) = mean_std(&scores);
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "agreement {mean:.3} (seeds {}; random student backbone, {} steps) in {secs:.0}s",
        scores.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join(", "),
        cons.iterations
    );
    ensure(mean >= 0.90 && secs < 600.0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 4, 5, 6

fn daclab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_daclab"))
        .args(args)
        .env_remove("DACLAB_SEED")
        .output()
        .expect("spawn daclab")
}

fn read_metrics(dir: &Path, seeds: &[u64]) -> Result<Vec<Metrics>, String> {
    seeds
        .iter()
        .map(|s| {
            let path = dir.join(format!("seed_{s}/metrics.json"));
            let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            serde_json::from_str(&text).map_err(err)
        })
        .collect()
}

/// With `DACLAB_ACCEPTANCE_REUSE=1`, finished runs from an earlier invocation are read back instead of retrained.
fn reusable(out: &Path, cfg: &ExperimentConfig) -> Option<Vec<Metrics>> {
    if std::env::var("DACLAB_ACCEPTANCE_REUSE").ok().as_deref() != Some("1") {
        return None;
    }
    let previous = ExperimentConfig::read(&out.join("resolved_config.toml")).ok()?;
    let same = ExperimentConfig {
        source: previous.source.clone(),
        output_dir: previous.output_dir.clone(),
        ..cfg.clone()
    };
    (previous == same).then(|| read_metrics(out, &cfg.seeds).ok()).flatten()
}

/// Writes `cfg` next to `out` and runs `daclab run` on it.
fn run_cli(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Metrics>, String> {
    if let Some(m) = reusable(out, cfg) {
        return Ok(m);
    }
    let _ = std::fs::remove_dir_all(out);
    std::fs::create_dir_all(out.parent().unwrap()).map_err(err)?;
    let path = out.with_extension("toml");
    std::fs::write(&path, cfg.to_toml()).map_err(err)?;
    let o = daclab(&["run", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    ensure(o.status.success(), || format!("daclab run {}: {}", path.display(), String::from_utf8_lossy(&o.stderr)))?;
    read_metrics(out, &cfg.seeds)
}

/// Shared desk runs for the stream-level criteria, computed on first use.
#[derive(Default)]
struct Desk {
    root: PathBuf,
    poster: Option<Vec<Metrics>>,
    noise: Option<Vec<Metrics>>,
    poster_extra: Option<Vec<Metrics>>,
    no_pld: Option<Vec<Metrics>>,
    naive: Option<Vec<Metrics>>,
}

impl Desk {
    /// Seeds 0..3 with the poster and with noise, via `ablate-sources`.
    fn ablation(&mut self) -> Result<(Vec<Metrics>, Vec<Metrics>), String> {
        if self.poster.is_none() {
            let out = self.root.join("ablation");
            let mut cfg = desk();
            cfg.seeds = vec![0, 1, 2];
            if let (Some(p), Some(n)) = (reusable(&out.join("single_image"), &cfg), reusable(&out.join("noise"), &cfg)) {
                self.poster = Some(p);
                self.noise = Some(n);
                return Ok((self.poster.clone().unwrap(), self.noise.clone().unwrap()));
            }
            let _ = std::fs::remove_dir_all(&out);
            std::fs::create_dir_all(&self.root).map_err(err)?;
            let path = self.root.join("ablation.toml");
            std::fs::write(&path, cfg.to_toml()).map_err(err)?;
            let o = daclab(&[
                "ablate-sources",
                path.to_str().unwrap(),
                "--sources",
                "single_image,noise",
                "--out",
                out.to_str().unwrap(),
            ]);
            ensure(o.status.success(), || format!("ablate-sources: {}", String::from_utf8_lossy(&o.stderr)))?;
            self.poster = Some(read_metrics(&out.join("single_image"), &cfg.seeds)?);
            self.noise = Some(read_metrics(&out.join("noise"), &cfg.seeds)?);
        }
        Ok((self.poster.clone().unwrap(), self.noise.clone().unwrap()))
    }

    fn naive(&mut self) -> Result<Vec<Metrics>, String> {
        if self.naive.is_none() {
            let mut cfg = desk();
            cfg.scheme = Scheme::RehearsalFreeNaive;
            cfg.seeds = vec![0, 1, 2];
            self.naive = Some(run_cli(&cfg, &self.root.join("naive"))?);
        }
        Ok(self.naive.clone().unwrap())
    }

    /// Five seeds with and without latent distillation.
    fn pld_pair(&mut self) -> Result<(Vec<Metrics>, Vec<Metrics>), String> {
        let (mut with, _) = self.ablation()?;
        if self.poster_extra.is_none() {
            let mut cfg = desk();
            cfg.seeds = vec![3, 4];
            self.poster_extra = Some(run_cli(&cfg, &self.root.join("poster_extra"))?);
        }
        if self.no_pld.is_none() {
            let mut cfg = desk();
            cfg.seeds = vec![0, 1, 2, 3, 4];
            cfg.consolidation.lambda = 0.0;
            self.no_pld = Some(run_cli(&cfg, &self.root.join("lambda0"))?);
        }
        with.extend(self.poster_extra.clone().unwrap());
        Ok((with, self.no_pld.clone().unwrap()))
    }
}

fn means(ms: &[Metrics], f: impl Fn(&Metrics) -> f64) -> (f64, f64) {
    mean_std(&ms.iter().map(f).collect::<Vec<_>>())
}

fn criterion_4(desk: &mut Desk) -> Check {
    let start = Instant::now();
    let (dac, _) = desk.ablation()?;
    let naive = desk.naive()?;
    let (dac_acc, _) = means(&dac, |m| m.final_average_accuracy);
    let (naive_acc, _) = means(&naive, |m| m.final_average_accuracy);
    let (dac_f, _) = means(&dac, |m| m.mean_forgetting);
    let (naive_f, _) = means(&naive, |m| m.mean_forgetting);
    let wall: f64 = dac.iter().chain(&naive).map(|m| m.wall_clock_seconds).sum();
    let detail = format!(
        "DAC avg {dac_acc:.3} forgetting {dac_f:.3}; naive avg {naive_acc:.3} forgetting {naive_f:.3}; gap {:.1} points ({wall:.0}s of training, {:.0}s here)",
        100.0 * (dac_acc - naive_acc),
        start.elapsed().as_secs_f64()
    );
    ensure(
        dac_acc - naive_acc >= 0.20 && dac_f <= 0.10 && naive_f >= 0.30 && wall < 1800.0,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn criterion_5(desk: &mut Desk) -> Check {
    let (poster, noise) = desk.ablation()?;
    let (p, ps) = means(&poster, |m| m.final_average_accuracy);
    let (n, ns) = means(&noise, |m| m.final_average_accuracy);
    let detail = format!("single image {p:.3} ± {ps:.3} vs noise {n:.3} ± {ns:.3} (3 seeds)");
    ensure(p > n, || detail.clone())?;
    Ok(detail)
}

/// Mean probe accuracy and first-vs-last `fc` CKA of one seed's report.
fn report_summary(seed_dir: &Path) -> Result<(f64, f64), String> {
    let probe = std::fs::read_to_string(seed_dir.join("probe.csv")).map_err(err)?;
    let acc: Vec<f64> = probe.lines().skip(1).filter_map(|l| l.rsplit(',').next()?.parse().ok()).collect();
    let cka = std::fs::read_to_string(seed_dir.join("cka.csv")).map_err(err)?;
    let last = cka
        .lines()
        .filter(|l| l.starts_with("fc,"))
        .last()
        .and_then(|l| l.rsplit(',').next()?.parse().ok())
        .ok_or("cka.csv has no fc rows")?;
    Ok((mean_std(&acc).0, last))
}

fn criterion_6(desk: &mut Desk) -> Check {
    let (with, without) = desk.pld_pair()?;
    let (a, sa) = means(&with, |m| m.mean_sc_accuracy);
    let (b, sb) = means(&without, |m| m.mean_sc_accuracy);
    let runs = [
        ("pld", desk.root.join("ablation/single_image"), &with[..3]),
        ("pld", desk.root.join("poster_extra"), &with[3..]),
        ("lambda0", desk.root.join("lambda0"), &without[..]),
    ];
    let mut table = String::from("arm,seed,mean_sc_accuracy,average_accuracy,mean_probe_accuracy,cka_first_last_fc\n");
    let mut probes: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (arm, dir, ms) in &runs {
        let o = daclab(&["report", dir.to_str().unwrap()]);
        ensure(o.status.success(), || format!("daclab report {}: {}", dir.display(), String::from_utf8_lossy(&o.stderr)))?;
        for m in ms.iter() {
            let (probe, cka_last) = report_summary(&dir.join(format!("seed_{}", m.seed)))?;
            probes.entry(arm).or_default().push(probe);
            table += &format!(
                "{arm},{},{:.6},{:.6},{probe:.6},{cka_last:.6}\n",
                m.seed, m.mean_sc_accuracy, m.final_average_accuracy
            );
        }
    }
    let csv = desk.root.join("pld_effect.csv");
    std::fs::write(&csv, table).map_err(err)?;
    let (pa, _) = mean_std(&probes["pld"]);
    let (pb, _) = mean_std(&probes["lambda0"]);
    let (ca, _) = means(&with, |m| m.final_average_accuracy);
    let (cb, _) = means(&without, |m| m.final_average_accuracy);
    let detail = format!(
        "SC-task accuracy with PLD {a:.3} ± {sa:.3} vs lambda=0 {b:.3} ± {sb:.3} (5 seeds); \
         probe {pa:.3} vs {pb:.3}; consolidated average accuracy {ca:.3} vs {cb:.3}; table {}",
        csv.display()
    );
    ensure(a >= b, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn to_na(t: &Tensor<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.shape()[0], t.shape()[1], t.data())
}

fn from_na(m: &DMatrix<f64>) -> Tensor<f64> {
    let (r, c) = m.shape();
    Tensor::from_fn(&[r, c], |k| m[(k / c, k % c)])
}

fn cka_oracle(x: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    let n = x.shape()[0];
    let h = DMatrix::<f64>::identity(n, n) - DMatrix::<f64>::from_element(n, n, 1.0 / n as f64);
    let (xc, yc) = (&h * to_na(x), &h * to_na(y));
    (yc.transpose() * &xc).norm_squared() / ((xc.transpose() * &xc).norm() * (yc.transpose() * &yc).norm())
}

fn criterion_7() -> Check {
    let mut rng = RngStream::new(7, "acceptance-cka");
    let (mut self_err, mut inv_err, mut sym_err, mut oracle_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for k in 0..50 {
        let n = 10 + rng.below(30);
        let (dx, dy) = (2 + rng.below(12), 2 + rng.below(12));
        let x = rand_tensor(&[n, dx], &mut rng);
        let y = rand_tensor(&[n, dy], &mut rng);
        let base = cka(&x, &y).map_err(err)?;
        self_err = self_err.max((cka(&x, &x).map_err(err)? - 1.0).abs());
        sym_err = sym_err.max((base - cka(&y, &x).map_err(err)?).abs());
        oracle_err = oracle_err.max((base - cka_oracle(&x, &y)).abs());
        if k < 20 {
            let q = to_na(&rand_tensor(&[dx, dx], &mut rng)).qr().q();
            let rotated = from_na(&(to_na(&x) * q));
            let scale = rng.uniform_range(0.1, 10.0);
            let scaled = from_na(&(to_na(&y) * scale));
            inv_err = inv_err.max((cka(&rotated, &y).map_err(err)? - base).abs());
            inv_err = inv_err.max((cka(&x, &scaled).map_err(err)? - base).abs());
        }
    }
    let detail = format!(
        "self {self_err:.1e}, invariance {inv_err:.1e}, symmetry {sym_err:.1e}, oracle {oracle_err:.1e} over 50 pairs"
    );
    ensure(self_err <= 1e-6 && inv_err <= 1e-6 && sym_err <= 1e-8 && oracle_err <= 1e-8, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 8

fn smoke_config() -> ExperimentConfig {
    ExperimentConfig::read(&workspace().join("configs/smoke.toml")).expect("shipped smoke config")
}

fn criterion_8() -> Check {
    let cfg = smoke_config();
    let loaded = cfg.clone().validate().map_err(err)?;
    let stream = loaded.stream().map_err(err)?;
    ensure(stream.len() == 3, || format!("smoke stream has {} tasks", stream.len()))?;
    let scheme: SchemeConfig = loaded.scheme_config(&cfg.source);
    let seed = 8;
    let out = run_sequential(&stream, &scheme, seed).map_err(err)?;
    let ids: Vec<u32> = stream.iter().map(|e| e.task_id).collect();
    out.log.check_two_messages(&ids).map_err(err)?;
    ensure(out.log.records.len() == 2 * ids.len(), || format!("{} log records", out.log.records.len()))?;

    let mut senders = vec![initial_model(&cfg.arch, seed).map_err(err)?];
    senders.extend(out.snapshots[..ids.len() - 1].iter().cloned());
    for (k, (id, sender)) in ids.iter().zip(&senders).enumerate() {
        let mut expected = MessageLog::default();
        expected.record_init(*id, &InitMessage::from_model(k as u32 + 1, sender));
        let logged = out
            .log
            .records
            .iter()
            .find(|r| r.device == *id && r.direction == daclab_core::dcl::Direction::Init)
            .ok_or("missing init record")?;
        ensure(logged.sha256 == expected.records[0].sha256, || {
            format!("init for task {id} is not the previous consolidated model")
        })?;
    }
    ensure(out.peak_residency <= 2, || format!("peak residency {}", out.peak_residency))?;
    for (k, snap) in out.snapshots.iter().enumerate() {
        ensure(snap.heads().len() == k + 1, || format!("step {} model has {} heads", k + 1, snap.heads().len()))?;
        ensure(snap.task_ids() == ids[..=k], || format!("step {} heads {:?}", k + 1, snap.task_ids()))?;
    }
    Ok(format!(
        "3-task run: {} messages, hand-off hashes match, peak residency {}, heads 1/2/3",
        out.log.records.len(),
        out.peak_residency
    ))
}

// ---------------------------------------------------------------- 9

fn criterion_9(root: &Path) -> Check {
    let cfg = smoke_config();
    let mut outs = Vec::new();
    for name in ["determinism_a", "determinism_b"] {
        let out = root.join(name);
        run_cli(&cfg, &out)?;
        outs.push(out.join(format!("seed_{}", cfg.seeds[0])));
    }
    for file in ["accuracy_matrix.csv", "message_log.json"] {
        let a = std::fs::read(outs[0].join(file)).map_err(err)?;
        let b = std::fs::read(outs[1].join(file)).map_err(err)?;
        ensure(!a.is_empty() && a == b, || format!("{file} differs between runs"))?;
    }
    Ok("accuracy_matrix.csv and message_log.json byte-identical across two runs".into())
}

// ---------------------------------------------------------------- 10

fn criterion_10(root: &Path) -> Check {
    std::fs::create_dir_all(root).map_err(err)?;
    let arch = ArchSpec::smallcnn([3, 8, 8], [4, 8], 16, 2);
    let mut m = MultiHeadModel::<f32>::random(arch.clone(), 10).map_err(err)?;
    for id in 1..=3u32 {
        m.attach_head(init_head(&arch, &RngStream::new(10, &format!("h{id}"))), id, vec![2 * id, 2 * id + 1])
            .map_err(err)?;
    }
    let (a, b) = (root.join("model_a.dacm"), root.join("model_b.dacm"));
    save_model(&m, &a).map_err(err)?;
    let loaded: MultiHeadModel<f32> = load_model(&a, Some(&arch)).map_err(err)?;
    ensure(loaded == m, || "reloaded model differs".into())?;
    save_model(&loaded, &b).map_err(err)?;
    let bytes = std::fs::read(&a).map_err(err)?;
    ensure(bytes == std::fs::read(&b).map_err(err)?, || "save-load-save changed the bytes".into())?;

    let mut corrupt = bytes.clone();
    let k = corrupt.len() - 4 - 7;
    corrupt[k] ^= 0x20;
    let crc_rejected = matches!(decode_model::<f32>(&corrupt, None), Err(Error::Checksum { .. }));
    ensure(crc_rejected, || "flipped payload byte was not rejected by the checksum".into())?;
    let mut bad_crc = bytes.clone();
    let n = bad_crc.len();
    bad_crc[n - 1] ^= 0xff;
    ensure(decode_model::<f32>(&bad_crc, None).is_err(), || "bad stored checksum accepted".into())?;
    ensure(decode_model::<f32>(&bytes[..bytes.len() / 2], None).is_err(), || "truncated file accepted".into())?;
    ensure(encode_model(&m) == bytes, || "encode differs from the saved file".into())?;
    Ok(format!("{} bytes round-trip identically; flipped payload, bad CRC and truncation rejected", bytes.len()))
}

// ----------------------------------------------------------------

/// Criteria whose failure is reported but does not fail the suite.
const SOFT: [usize; 1] = [6];

const TITLES: [&str; 10] = [
    "gradient oracle",
    "loss identities",
    "single-teacher distillation fidelity",
    "forgetting control",
    "data-source ordering",
    "latent distillation effect",
    "CKA properties",
    "protocol invariants",
    "determinism",
    "serialization",
];

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let mut desk = Desk {
        root: root.join("desk"),
        ..Desk::default()
    };
    let mut failures = Vec::new();
    // cheap criteria first, then the multi-run ones that share artifacts
    for n in [1, 2, 7, 8, 9, 10, 3, 4, 5, 6] {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let outcome = match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(&mut desk),
            5 => criterion_5(&mut desk),
            6 => criterion_6(&mut desk),
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(&root),
            _ => criterion_10(&root.join("serialization")),
        };
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {}: {detail}", TITLES[n - 1]),
            Err(detail) if SOFT.contains(&n) => {
                println!("criterion {n:>2} FAIL (soft)  {}: {detail}", TITLES[n - 1]);
            }
            Err(detail) => {
                println!("criterion {n:>2} FAIL  {}: {detail}", TITLES[n - 1]);
                failures.push(n);
            }
        }
    }
    if !failures.is_empty() {
        println!("failed criteria: {failures:?}");
        std::process::exit(1);
    }
}
