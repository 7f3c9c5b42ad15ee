//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion ids (`C3 C5`) to run a subset.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng as _;
use serde_json::Value;

use damex::clsmodel::{
    kmeans, mine_fbml, mine_pgml, predict_classes, silhouette, train_cls, ClsTrainConfig, WaterClass,
};
use damex::extract::{connected_components, expand_bbox, filter_segments};
use damex::metrics::MetricsReport;
use damex::raster::{build_dataset, load_cls_split, load_split, BBox, DatasetCounts, LabelMask, SceneSpec, Split};
use damex::rng;
use damex::segmodel::{
    build_pools, focal_point, mine_triplets, plml_loss, train_seg, water_iou, FocalConfig, MiningStrategy,
    SegTrainConfig,
};
use damex::verify::{run_suite, Objective, SuiteConfig};

// Tolerances and targets.
const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 20;
const GRAD_SECONDS: f64 = 60.0;
const FOCAL_TOL: f64 = 1e-9;
const RANDOM_CASES: usize = 500;
const CC_TRIALS: usize = 1000;
const METRIC_TOL: f64 = 1e-9;
const METRIC_CASES: usize = 100;
const KMEANS_RUNS: usize = 200;
const KMEANS_SLACK: f64 = 1e-12;
const SILHOUETTE_TOL: f64 = 1e-9;
const SEG_IOU_MIN: f64 = 0.60;
const CLS_ACC_MIN: f64 = 0.90;
const DAM_IOU_MIN: f64 = 0.50;
const SEG_SECONDS: f64 = 600.0;
/// Values measured on seed 7 with the shipped generator and defaults.
const SEG_IOU_REF: f64 = 0.8241;
const CLS_ACC_REF: f64 = 0.9375;
const DAM_IOU_REF: f64 = 0.7793;
const REF_BAND: f64 = 0.05;
const ABLATION_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, &str, fn() -> Outcome); 10] = [
        ("C1", "gradient correctness", c1_gradients),
        ("C2", "focal-loss scalar oracle", c2_focal),
        ("C3", "point pool and mining oracle", c3_point_mining),
        ("C4", "image triplet mining oracle", c4_image_mining),
        ("C5", "connected components", c5_components),
        ("C6", "metrics oracle", c6_metrics),
        ("C7", "k-means and silhouette", c7_kmeans),
        ("C8", "end-to-end synthetic smoke", c8_smoke),
        ("C9", "ablation direction", c9_ablation),
        ("C10", "determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|x| x == id) {
            continue;
        }
        let t = Instant::now();
        let o = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!o.pass);
        println!(
            "{} {id} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let mut cfg = SuiteConfig {
        seeds: GRAD_SEEDS,
        ..Default::default()
    };
    cfg.check.step = 1e-4;
    cfg.check.tolerance = GRAD_TOL;
    let r = run_suite(&Objective::ALL, &cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        r.passed && secs < GRAD_SECONDS,
        format!(
            "max rel err {:.2e} < {GRAD_TOL:e} over {} checks ({} objectives x {GRAD_SEEDS} seeds), {secs:.1}s < {GRAD_SECONDS}s",
            r.max_rel_error,
            r.compared,
            Objective::ALL.len()
        ),
    )
}

fn c2_focal() -> Outcome {
    // independent form: powers through exp/ln, land term through ln_1p
    let oracle = |y: bool, p: f64, a: f64, g: f64| {
        if y {
            a * (g * (-p).ln_1p()).exp() * -p.ln()
        } else {
            (1.0 - a) * (g * p.ln()).exp() * -(-p).ln_1p()
        }
    };
    let probs = [0.01, 0.1, 0.5, 0.9, 0.99];
    let params = [(0.25, 2.0), (0.25, 0.0), (0.5, 1.0), (0.75, 3.0), (0.1, 0.5)];
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for y in [false, true] {
        for &p in &probs {
            for &(alpha, gamma) in &params {
                let got = focal_point(y, p, &FocalConfig { alpha, gamma });
                let want = oracle(y, p, alpha, gamma);
                worst = worst.max((got - want).abs() / want.abs().max(1e-300));
                cases += 1;
            }
        }
    }
    let cfg = FocalConfig::default();
    let ratio = focal_point(true, 0.9, &cfg) / (-cfg.alpha * 0.9f64.ln());
    let refs_ok = (focal_point(true, 0.9, &cfg) - 2.634_012_891_445_657e-4).abs() < 1e-15
        && (focal_point(false, 0.9, &cfg) - 1.398_820_443_993_883).abs() < 1e-12;
    outcome(
        worst < FOCAL_TOL && (ratio - 0.01).abs() < FOCAL_TOL && refs_ok && cases == 50,
        format!("{cases} cases, max rel err {worst:.1e} < {FOCAL_TOL:e}; easy-pixel ratio {ratio:.12} (100x reduction)"),
    )
}

fn random_mask(side: usize, density: f64, r: &mut rng::Rng) -> LabelMask {
    let v = (0..side * side).map(|_| u8::from(r.random_bool(density))).collect();
    LabelMask::new(side, side, 2, v).unwrap()
}

fn c3_point_mining() -> Outcome {
    let mut r = rng::stream(3, "acceptance");
    let mut pool_errors = 0;
    let mut rule_errors = 0;
    let mut zero_anchor_cases = 0;
    let mut skipped_cases = 0;
    for trial in 0..RANDOM_CASES {
        let b = r.random_range(1..=4);
        let mut pools = Vec::new();
        for _ in 0..b {
            let (dp, dg) = (r.random_range(0.0..0.8), r.random_range(0.0..0.8));
            let (pred, gt) = (random_mask(8, dp, &mut r), random_mask(8, dg, &mut r));
            let p = build_pools(&pred, &gt).unwrap();
            let (a, pos, neg) = common::pools_oracle(&pred, &gt);
            let as_set = |v: &Vec<(usize, usize)>| v.iter().copied().collect::<BTreeSet<_>>();
            let sorted = |v: &Vec<(usize, usize)>| v.windows(2).all(|w| w[0] < w[1]);
            if as_set(&p.anchors) != a
                || as_set(&p.positives) != pos
                || as_set(&p.negatives) != neg
                || !sorted(&p.anchors)
                || !sorted(&p.positives)
                || !sorted(&p.negatives)
            {
                pool_errors += 1;
            }
            pools.push(p);
        }
        let k = r.random_range(1..=12);
        let t = mine_triplets(&pools, k, MiningStrategy::CrossImageRandom, None, &mut rng::substream(3, rng::MINING, trial as u64))
            .unwrap();
        let any_pos = pools.iter().any(|p| !p.positives.is_empty());
        let any_neg = pools.iter().any(|p| !p.negatives.is_empty());
        for x in &t {
            let ok = pools[x.anchor.image].anchors.contains(&(x.anchor.row, x.anchor.col))
                && pools[x.positive.image].positives.contains(&(x.positive.row, x.positive.col))
                && pools[x.negative.image].negatives.contains(&(x.negative.row, x.negative.col));
            rule_errors += usize::from(!ok);
        }
        for (i, p) in pools.iter().enumerate() {
            let mine: Vec<_> = t.iter().filter(|x| x.anchor.image == i).map(|x| (x.anchor.row, x.anchor.col)).collect();
            let distinct: BTreeSet<_> = mine.iter().collect();
            let expected = if any_pos && any_neg { p.anchors.len().min(k) } else { 0 };
            rule_errors += usize::from(mine.len() != expected || distinct.len() != mine.len());
        }
        if pools.iter().all(|p| p.anchors.is_empty()) {
            zero_anchor_cases += 1;
            let feats: Vec<_> = (0..b).map(|_| damex::autonet::Tensor::zeros(2, 2, 2)).collect();
            rule_errors += usize::from(!t.is_empty() || plml_loss(&feats, &t, 0.01).0 != 0.0);
        } else if !(any_pos && any_neg) {
            skipped_cases += 1;
            rule_errors += usize::from(!t.is_empty());
        }
    }
    outcome(
        pool_errors == 0 && rule_errors == 0 && zero_anchor_cases > 0 && skipped_cases > 0,
        format!(
            "{RANDOM_CASES} batches of 8x8 pairs: {pool_errors} pool mismatches, {rule_errors} rule violations \
             ({zero_anchor_cases} zero-anchor, {skipped_cases} missing-pair batches)"
        ),
    )
}

fn c4_image_mining() -> Outcome {
    let mut r = rng::stream(4, "acceptance");
    let mut mismatches = 0;
    let mut tie_cases = 0;
    for trial in 0..RANDOM_CASES {
        let b = r.random_range(1..=64);
        let d = r.random_range(1..=16);
        let coarse = trial % 2 == 0;
        let emb: Vec<Vec<f64>> = (0..b)
            .map(|_| {
                (0..d)
                    .map(|_| if coarse { f64::from(r.random_range(0u8..3)) } else { r.random_range(-1.0..1.0) })
                    .collect()
            })
            .collect();
        let labels: Vec<WaterClass> =
            (0..b).map(|_| if r.random_bool(0.5) { WaterClass::Dam } else { WaterClass::Natural }).collect();
        let clusters: Vec<usize> = (0..b).map(|_| r.random_range(0..4)).collect();
        let tuple = |t: &[damex::clsmodel::ImageTriplet]| t.iter().map(|t| (t.anchor, t.positive, t.negative)).collect::<Vec<_>>();
        let pg = tuple(&mine_pgml(&emb, &labels, &clusters));
        let fb = tuple(&mine_fbml(&emb, &labels));
        mismatches += usize::from(pg != common::triplet_oracle(&emb, &labels, Some(&clusters)));
        mismatches += usize::from(fb != common::triplet_oracle(&emb, &labels, None));
        tie_cases += usize::from(coarse);
    }
    outcome(
        mismatches == 0,
        format!("{RANDOM_CASES} batches (B<=64, D<=16, {tie_cases} with forced ties): {mismatches} mismatches vs O(B^2) selector, both modes"),
    )
}

fn c5_components() -> Outcome {
    let mut r = rng::stream(5, "acceptance");
    let mut mismatches = 0;
    for _ in 0..CC_TRIALS {
        let density = r.random_range(0.05..0.7);
        let v = (0..64 * 64).map(|_| if r.random_bool(density) { r.random_range(1u8..3) } else { 0 }).collect();
        let m = LabelMask::new(64, 64, 3, v).unwrap();
        let got: Vec<Vec<(usize, usize)>> = connected_components(&m)
            .into_iter()
            .map(|s| {
                let mut p = s.pixels;
                p.sort_unstable();
                p
            })
            .collect();
        mismatches += usize::from(got != common::flood_fill(&m));
    }
    let strip = |n: usize| LabelMask::from_water_pixels(64, 64, &(0..n).map(|i| (i / 10 * 2, i % 10)).collect::<Vec<_>>());
    let kept = |n: usize| filter_segments(connected_components(&strip(n)), 20).len();
    let line = |n: usize| LabelMask::from_water_pixels(64, 64, &(0..n).map(|i| (0, i)).collect::<Vec<_>>());
    let kept_line = |n: usize| filter_segments(connected_components(&line(n)), 20).len();
    let area_ok = kept_line(15) == 0 && kept_line(19) == 0 && kept_line(20) == 1 && kept_line(21) == 1 && kept(0) == 0;
    let diag = LabelMask::from_water_pixels(4, 4, &[(0, 0), (1, 1)]);
    let gap = LabelMask::from_water_pixels(4, 4, &[(0, 0), (0, 2)]);
    let conn_ok = connected_components(&diag).len() == 1 && connected_components(&gap).len() == 2;
    let t = BBox::new(10, 10, 19, 19);
    let corner = BBox::new(0, 0, 9, 9);
    let bbox_ok = expand_bbox(&t, 2.0, 100, 100) == BBox::new(5, 5, 24, 24)
        && expand_bbox(&corner, 2.0, 100, 100) == BBox::new(0, 0, 14, 14)
        && expand_bbox(&t, 1.0, 100, 100) == t;
    outcome(
        mismatches == 0 && area_ok && conn_ok && bbox_ok,
        format!(
            "{CC_TRIALS} random 64x64 masks: {mismatches} partition mismatches vs flood fill; \
             area 15/19 dropped, 20/21 kept: {area_ok}; 8-connectivity cases: {conn_ok}; x2 boxes: {bbox_ok}"
        ),
    )
}

fn random_class_mask(w: usize, h: usize, r: &mut rng::Rng) -> LabelMask {
    let classes: Vec<u8> = (0..3).filter(|_| r.random_bool(0.8)).collect();
    let v = (0..w * h)
        .map(|_| if classes.is_empty() { 0 } else { classes[r.random_range(0..classes.len())] })
        .collect();
    LabelMask::new(w, h, 3, v).unwrap()
}

fn c6_metrics() -> Outcome {
    let mut r = rng::stream(6, "acceptance");
    let mut worst: f64 = 0.0;
    for _ in 0..METRIC_CASES {
        let n = r.random_range(1..=4);
        let (w, h) = (r.random_range(1..=24), r.random_range(1..=24));
        let preds: Vec<LabelMask> = (0..n).map(|_| random_class_mask(w, h, &mut r)).collect();
        let gts: Vec<LabelMask> = (0..n).map(|_| random_class_mask(w, h, &mut r)).collect();
        let rep = MetricsReport::extraction(&preds, &gts).unwrap();
        let bp: Vec<LabelMask> = preds.iter().map(LabelMask::to_binary).collect();
        let bg: Vec<LabelMask> = gts.iter().map(LabelMask::to_binary).collect();
        let pairs = [
            (rep.iou_water.unwrap(), common::set_miou(&bp, &bg, &[1])),
            (rep.miou.unwrap(), common::set_miou(&bp, &bg, &[0, 1])),
            (rep.iou_d.unwrap(), common::set_miou(&preds, &gts, &[2])),
            (rep.miou_dn.unwrap(), common::set_miou(&preds, &gts, &[1, 2])),
            (rep.miou_dnb.unwrap(), common::set_miou(&preds, &gts, &[0, 1, 2])),
        ];
        for (a, b) in pairs {
            worst = worst.max((a - b).abs());
        }
    }
    // dam IoU 4/10 on one image and 3/5 on the other: per-image mean 0.5,
    // pooled counting would give 7/15
    let img = |gt_dam: usize, hit: usize| {
        let gt = LabelMask::new(gt_dam, 1, 3, vec![2; gt_dam]).unwrap();
        let pred = LabelMask::new(gt_dam, 1, 3, (0..gt_dam).map(|i| if i < hit { 2 } else { 1 }).collect()).unwrap();
        (pred, gt)
    };
    let (p1, g1) = img(10, 4);
    let (p2, g2) = img(5, 3);
    let avg = MetricsReport::extraction(&[p1, p2], &[g1, g2]).unwrap().iou_d.unwrap();
    outcome(
        worst < METRIC_TOL && (avg - 0.5).abs() < METRIC_TOL,
        format!("{METRIC_CASES} random 3-class sets: max deviation {worst:.1e} < {METRIC_TOL:e}; 0.4/0.6 case -> {avg}"),
    )
}

fn c7_kmeans() -> Outcome {
    let mut r = rng::stream(7, "acceptance");
    let (mut rises, mut sil_err, mut out_of_range, mut scored) = (0, 0.0f64, 0, 0);
    for run in 0..KMEANS_RUNS {
        let n = r.random_range(5..=64);
        let d = r.random_range(1..=8);
        let z = r.random_range(2..=5.min(n));
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let a = kmeans(&pts, z, 20, &mut rng::substream(7, rng::KMEANS, run as u64)).unwrap();
        rises += a.objective.windows(2).filter(|w| w[1] > w[0] * (1.0 + KMEANS_SLACK)).count();
        if let Ok(s) = silhouette(&pts, &a.labels) {
            scored += 1;
            let o = common::silhouette_oracle(&pts, &a.labels);
            for (x, y) in s.scores.iter().zip(&o) {
                sil_err = sil_err.max((x - y).abs());
                out_of_range += usize::from(!(-1.0..=1.0).contains(x));
            }
        }
    }
    outcome(
        rises == 0 && sil_err < SILHOUETTE_TOL && out_of_range == 0 && scored > 0,
        format!(
            "{KMEANS_RUNS} runs: {rises} objective increases; silhouette max deviation {sil_err:.1e} < {SILHOUETTE_TOL:e} \
             on {scored} clusterings, {out_of_range} scores outside [-1,1]"
        ),
    )
}

fn damex(dir: &Path, args: &[&str]) -> (Value, Vec<u8>) {
    let o = Command::new(env!("CARGO_BIN_EXE_damex")).current_dir(dir).args(args).output().unwrap();
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    (v["report"].clone(), o.stdout)
}

fn c8_smoke() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    damex(d, &["gen-data", "--seed", "7"]);
    let t = Instant::now();
    damex(d, &["train-seg", "--seed", "7"]);
    let seg_secs = t.elapsed().as_secs_f64();
    let seg = damex(d, &["eval-seg", "--seed", "7"]).0["iou_water"].as_f64().unwrap();
    damex(d, &["train-cls", "--seed", "7"]);
    let acc = damex(d, &["eval-cls", "--seed", "7"]).0["accuracy"].as_f64().unwrap();
    damex(d, &["extract", "--seed", "7"]);
    let dam = damex(d, &["eval-extract", "--seed", "7"]).0["iou_d"].as_f64().unwrap();
    let band = |v: f64, r: f64| (v - r).abs() <= REF_BAND;
    outcome(
        seg >= SEG_IOU_MIN
            && acc >= CLS_ACC_MIN
            && dam >= DAM_IOU_MIN
            && seg_secs < SEG_SECONDS
            && band(seg, SEG_IOU_REF)
            && band(acc, CLS_ACC_REF)
            && band(dam, DAM_IOU_REF),
        format!(
            "seed 7: test water IoU {seg:.4} (>= {SEG_IOU_MIN}, ref {SEG_IOU_REF}±{REF_BAND}) in {seg_secs:.0}s; \
             1-NN accuracy {acc:.4} (>= {CLS_ACC_MIN}, ref {CLS_ACC_REF}); IoU^d {dam:.4} (>= {DAM_IOU_MIN}, ref {DAM_IOU_REF})"
        ),
    )
}

fn c9_ablation() -> Outcome {
    let (mut cross, mut within, mut pgml, mut ce) = (0.0, 0.0, 0.0, 0.0);
    for &seed in &ABLATION_SEEDS {
        let dir = tempfile::tempdir().unwrap();
        let counts = DatasetCounts {
            train: 64,
            val: 16,
            test: 16,
        };
        let m = build_dataset(&SceneSpec::default(), counts, seed, dir.path()).unwrap();
        let (train, val, test) = (
            load_split(&m, Split::Train).unwrap(),
            load_split(&m, Split::Val).unwrap(),
            load_split(&m, Split::Test).unwrap(),
        );
        for (strategy, acc) in [(MiningStrategy::CrossImageRandom, &mut cross), (MiningStrategy::WithinImage, &mut within)] {
            let cfg = SegTrainConfig {
                mining_strategy: strategy,
                ..Default::default()
            };
            let o = train_seg(&train, &val, &cfg, seed).unwrap();
            *acc += water_iou(&o.model, &test, cfg.threshold).unwrap() / ABLATION_SEEDS.len() as f64;
        }
        let cls = |s| -> Vec<_> {
            load_cls_split(&m, s)
                .unwrap()
                .into_iter()
                .map(|(r, l)| (r, WaterClass::from_label(l).unwrap()))
                .collect()
        };
        let (ct, cv, cs) = (cls(Split::Train), cls(Split::Val), cls(Split::Test));
        let gt: Vec<WaterClass> = cs.iter().map(|(_, l)| *l).collect();
        for (ce_baseline, acc) in [(false, &mut pgml), (true, &mut ce)] {
            let cfg = ClsTrainConfig {
                ce_baseline,
                ..Default::default()
            };
            let o = train_cls(&ct, &cv, &cfg, seed).unwrap();
            let pred = predict_classes(&o.model, o.head.as_ref(), &o.gallery, &cs, cfg.knn_k).unwrap();
            *acc += damex::metrics::accuracy(&pred, &gt).unwrap() / ABLATION_SEEDS.len() as f64;
        }
    }
    outcome(
        cross >= within && pgml >= ce,
        format!(
            "seeds {ABLATION_SEEDS:?}: mean IoU cross-image {cross:.4} vs within-image {within:.4}; \
             mean accuracy PGML {pgml:.4} vs CE {ce:.4} (effect sizes are data-dependent)"
        ),
    )
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c10_determinism() -> Outcome {
    let small = [
        "--seed", "13", "--set", "train_scenes=8", "--set", "val_scenes=4", "--set", "test_scenes=4", "--set", "seg_epochs=2",
        "--set", "cls_epochs=3", "--set", "gradcheck_seeds=1",
    ];
    let commands: [&[&str]; 9] = [
        &["gen-data"],
        &["train-seg"],
        &["train-cls"],
        &["extract"],
        &["eval-seg"],
        &["eval-cls"],
        &["eval-extract"],
        &["gradcheck"],
        &["sweep", "--param", "epsilon", "--values", "0.01,0.1"],
    ];
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut stdout = Vec::new();
        for c in commands {
            let args: Vec<&str> = c.iter().chain(&small).copied().collect();
            stdout.push(damex(dir.path(), &args).1);
        }
        (stdout, tree(dir.path()), dir)
    };
    let (out_a, tree_a, _a) = run();
    let (out_b, tree_b, _b) = run();
    let files = tree_a.len();
    let ckpts = tree_a.iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "ckpt" || e == "bin")).count();
    outcome(
        out_a == out_b && tree_a == tree_b && ckpts == 3,
        format!(
            "{} commands run twice: stdout identical {}, {files} output files ({ckpts} checkpoints) byte-identical {}",
            commands.len(),
            out_a == out_b,
            tree_a == tree_b
        ),
    )
}
