//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use gamver::Rayon;
use gamver_core::forest::{self, FeatureDataset, ForestConfig, ForestModel};
use gamver_core::gradcam::{binarize_median, BinaryMask};
use gamver_core::gradcheck;
use gamver_core::simmetrics::{self, MetricConfig};
use gamver_core::synth::{self, Domain, SyntheticSpec};
use gamver_core::tinynet::{self, NetworkConfig, TrainOptions};
use gamver_core::verifier::{self, Averaging, Method, ReferenceBundle, ReferenceOptions, VerificationRecord};
use gamver_core::{Image, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIZE: usize = 32;
const CLASSES: usize = 5;
const PER_CLASS: usize = 60;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// ---------------------------------------------------------------------------
// Metric oracles

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn cells(h: usize, w: usize, on: &[(usize, usize)]) -> BinaryMask {
    let set: BTreeSet<_> = on.iter().copied().collect();
    let bits: Vec<bool> = (0..h * w).map(|k| set.contains(&(k / w, k % w))).collect();
    BinaryMask::from_bits(h, w, &bits)
}

fn mask_set(m: &BinaryMask) -> BTreeSet<usize> {
    m.bits().enumerate().filter(|(_, b)| *b).map(|(k, _)| k).collect()
}

fn oracle_iou(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn oracle_dice(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * a.intersection(b).count() as f64 / (a.len() + b.len()) as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn oracle_ssim(a: &[f64], b: &[f64]) -> f64 {
    let (c1, c2) = (1e-4, 9e-4);
    let (ma, mb) = (mean(a), mean(b));
    let n = a.len() as f64;
    let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
    let vb = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n;
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

fn oracle_pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let sab: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let saa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let sbb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa.sqrt() * sbb.sqrt()))
}

fn oracle_kl(p: &[f64], q: &[f64], eps: f64) -> f64 {
    let mut total = 0.0;
    for (pi, qi) in p.iter().zip(q) {
        if *pi > 0.0 {
            total += pi * (pi / (qi + eps)).ln();
        }
    }
    total
}

fn cdf(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

fn oracle_wasserstein(p: &[f64], q: &[f64]) -> f64 {
    let (fp, fq) = (cdf(p), cdf(q));
    let spacing = 1.0 / (p.len() - 1) as f64;
    fp.iter().zip(&fq).take(p.len() - 1).map(|(a, b)| (a - b).abs() * spacing).sum()
}

fn oracle_histogram(v: &[f64], bins: usize) -> Vec<f64> {
    (0..bins)
        .map(|b| {
            let lo = b as f64 / bins as f64;
            let hi = (b + 1) as f64 / bins as f64;
            let n = v
                .iter()
                .filter(|&&x| x >= lo && (x < hi || (b == bins - 1 && x <= 1.0)))
                .count();
            n as f64 / v.len() as f64
        })
        .collect()
}

fn oracle_mask(v: &[f64]) -> BTreeSet<usize> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let med = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
    (0..n).filter(|&k| v[k] > med).collect()
}

fn oracle_spatial(v: &[f64]) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    if total == 0.0 {
        vec![1.0 / v.len() as f64; v.len()]
    } else {
        v.iter().map(|x| x / total).collect()
    }
}

fn check(failures: &mut Vec<String>, what: &str, got: f64, want: f64, tol: f64) {
    if !close(got, want, tol) {
        failures.push(format!("{what}: {got} vs {want}"));
    }
}

fn tensor(dims: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(dims.to_vec(), v.to_vec()).unwrap()
}

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    match rng.random_range(0..10) {
        0 => vec![0.0; h * w],
        1 => vec![rng.random_range(0.0..1.0); h * w],
        2 => (0..h * w).map(|_| rng.random_range(0..4) as f64 / 3.0).collect(),
        _ => {
            let raw: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
            let (lo, hi) = raw.iter().fold((f64::MAX, f64::MIN), |(l, h), &x| (l.min(x), h.max(x)));
            raw.iter().map(|x| (x - lo) / (hi - lo)).collect()
        }
    }
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let tol = 1e-12;
    let mut failures: Vec<String> = Vec::new();

    // Documented examples.
    let a = cells(2, 2, &[(0, 0), (0, 1)]);
    let b = cells(2, 2, &[(0, 1), (1, 1)]);
    let d = cells(2, 2, &[(1, 0)]);
    let e = cells(2, 2, &[]);
    check(&mut failures, "iou a,b", simmetrics::iou(&a, &b).unwrap(), 1.0 / 3.0, tol);
    check(&mut failures, "iou a,a", simmetrics::iou(&a, &a).unwrap(), 1.0, tol);
    check(&mut failures, "iou disjoint", simmetrics::iou(&a, &d).unwrap(), 0.0, tol);
    check(&mut failures, "iou empty", simmetrics::iou(&e, &e).unwrap(), 1.0, tol);
    check(&mut failures, "dice a,b", simmetrics::dice(&a, &b).unwrap(), 0.5, tol);
    check(&mut failures, "dice a,a", simmetrics::dice(&a, &a).unwrap(), 1.0, tol);
    check(&mut failures, "dice disjoint", simmetrics::dice(&a, &d).unwrap(), 0.0, tol);
    check(&mut failures, "dice empty", simmetrics::dice(&e, &e).unwrap(), 1.0, tol);

    let ramp = tensor(&[2, 3], &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    let flip = ramp.map(|x| 1.0 - x);
    check(&mut failures, "ssim identity", simmetrics::ssim_global(&ramp, &ramp).unwrap(), 1.0, tol);
    check(
        &mut failures,
        "ssim 0 vs 1",
        simmetrics::ssim_global(&Tensor::zeros(&[2, 3]), &Tensor::filled(&[2, 3], 1.0)).unwrap(),
        1e-4 / (1.0 + 1e-4),
        tol,
    );
    let s = simmetrics::ssim_global(&ramp, &flip).unwrap();
    check(&mut failures, "ssim flip oracle", s, oracle_ssim(ramp.values(), flip.values()), tol);
    if !(s < 0.0) {
        failures.push(format!("ssim of complement should be negative, got {s}"));
    }

    let v10 = tensor(&[2], &[1.0, 0.0]);
    let v11 = tensor(&[2], &[1.0, 1.0]);
    let v01 = tensor(&[2], &[0.0, 1.0]);
    check(&mut failures, "cosine [1,0],[1,1]", simmetrics::cosine(&v10, &v11).unwrap(), 1.0 / 2f64.sqrt(), tol);
    check(&mut failures, "cosine identity", simmetrics::cosine(&v11, &v11).unwrap(), 1.0, tol);
    check(&mut failures, "cosine disjoint", simmetrics::cosine(&v10, &v01).unwrap(), 0.0, tol);

    let p012 = tensor(&[3], &[0.0, 1.0, 2.0]);
    check(
        &mut failures,
        "pearson [0,1,2],[0,0,1]",
        simmetrics::pearson(&p012, &tensor(&[3], &[0.0, 0.0, 1.0])).unwrap(),
        3f64.sqrt() / 2.0,
        tol,
    );
    check(&mut failures, "pearson affine", simmetrics::pearson(&p012, &p012.map(|x| 2.0 * x + 0.1)).unwrap(), 1.0, tol);
    check(&mut failures, "pearson negative", simmetrics::pearson(&p012, &p012.map(|x| 1.0 - x)).unwrap(), -1.0, tol);

    let eps = MetricConfig::default().epsilon;
    for (p, q, closed) in [
        (vec![1.0, 0.0], vec![0.5, 0.5], 2f64.ln()),
        (vec![0.5, 0.5], vec![0.25, 0.75], 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln()),
    ] {
        let got = simmetrics::kl_divergence(&tensor(&[2], &p), &tensor(&[2], &q), eps).unwrap();
        check(&mut failures, "kl oracle", got, oracle_kl(&p, &q, eps), tol);
        check(&mut failures, "kl closed form", got, closed, 1e-6);
    }
    let same = tensor(&[4], &[0.1, 0.2, 0.3, 0.4]);
    let kl_same = simmetrics::kl_divergence(&same, &same, eps).unwrap();
    if !(kl_same <= 1e-9 && kl_same >= -eps * 4.0 * (1.0 + 1e-6)) {
        failures.push(format!("kl(p, p) = {kl_same}"));
    }

    let w = |p: &[f64], q: &[f64]| simmetrics::wasserstein_1d(&tensor(&[p.len()], p), &tensor(&[q.len()], q)).unwrap();
    check(&mut failures, "w1 [1,0,0],[0,0,1]", w(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]), 1.0, tol);
    check(&mut failures, "w1 [1,0,0],[0,1,0]", w(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]), 0.5, tol);
    let mut d0 = vec![0.0; 64];
    let mut d63 = vec![0.0; 64];
    d0[0] = 1.0;
    d63[63] = 1.0;
    check(&mut failures, "w1 full domain", w(&d0, &d63), 1.0, tol);
    check(&mut failures, "w1 identity", w(&d0, &d0), 0.0, tol);

    // Random maps against the full oracle pipeline.
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = MetricConfig::default();
    let mut compared = 0;
    for case in 0..300 {
        let (h, wd) = (rng.random_range(1..9), rng.random_range(2..9));
        let c = random_map(&mut rng, h, wd);
        let r = random_map(&mut rng, h, wd);
        let (ct, rt) = (tensor(&[h, wd], &c), tensor(&[h, wd], &r));
        let got = simmetrics::compute_all(&ct, &rt, &cfg).unwrap();
        let (mc, mr) = (oracle_mask(&c), oracle_mask(&r));
        if mask_set(&binarize_median(&ct)) != mc {
            failures.push(format!("case {case}: median mask"));
        }
        let cos = oracle_cosine(&c, &r);
        let pear = oracle_pearson(&c, &r);
        let zero = c.iter().all(|&x| x == 0.0) || r.iter().all(|&x| x == 0.0);
        let want = [
            oracle_iou(&mc, &mr),
            oracle_dice(&mc, &mr),
            oracle_ssim(&c, &r),
            cos.unwrap_or(0.0),
            pear.unwrap_or(0.0),
            oracle_kl(&oracle_spatial(&c), &oracle_spatial(&r), cfg.epsilon),
            oracle_wasserstein(&oracle_histogram(&c, cfg.histogram_bins), &oracle_histogram(&r, cfg.histogram_bins)),
        ];
        for (k, (g, o)) in got.vector.to_array().iter().zip(want).enumerate() {
            if !close(*g, o, tol) {
                failures.push(format!("case {case} metric {k}: {g} vs {o}"));
            }
        }
        let want_degenerate = cos.is_none() || pear.is_none() || zero;
        if got.degenerate != want_degenerate {
            failures.push(format!("case {case}: degenerate flag {}", got.degenerate));
        }
        compared += 1;
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(10);
    let mut detail = format!("{compared} random map pairs + documented examples, tol 1e-12, {}", secs(elapsed));
    if !failures.is_empty() {
        detail += &format!("; {} mismatches, first: {}", failures.len(), failures[0]);
    }
    outcome("metric oracle suite", pass, detail)
}

// ---------------------------------------------------------------------------
// Gradients

fn gradients() -> Outcome {
    let start = Instant::now();
    let h = 1e-5;
    let mut params = gradcheck::GradCheck::default();
    let mut acts = gradcheck::GradCheck::default();
    let mut thin = Vec::new();
    for seed in 0..20 {
        let (net, image, label) = gradcheck::random_case(seed);
        let p = gradcheck::check_param_gradients(&net, &image, label, h).unwrap();
        if p.checked <= p.skipped {
            thin.push(seed);
        }
        params = params.merge(p);
        for layer in 0..net.num_conv_layers() {
            for class in 0..net.num_classes() {
                acts = acts.merge(gradcheck::check_activation_gradients(&net, &image, class, layer, h).unwrap());
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = params.max_rel_error < 1e-4
        && acts.max_rel_error < 1e-4
        && acts.checked > 0
        && thin.is_empty()
        && elapsed < Duration::from_secs(120);
    outcome(
        "gradient finite differences",
        pass,
        format!(
            "20 nets; params max rel err {:.2e} ({} checked, {} kink-skipped); activations max rel err {:.2e} ({} checked, {} skipped); {}",
            params.max_rel_error,
            params.checked,
            params.skipped,
            acts.max_rel_error,
            acts.checked,
            acts.skipped,
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------------------
// Shared two-domain protocol

fn data(domain: Domain, per_class: usize, seed: u64) -> Vec<(Image, usize)> {
    let spec = SyntheticSpec {
        domain,
        classes: CLASSES,
        samples_per_class: per_class,
        noise_sigma: 0.05,
        size: SIZE,
        seed,
    };
    synth::generate(&spec).unwrap().into_iter().map(|s| (s.image, s.label)).collect()
}

fn train(seed: u64, set: &[(Image, usize)], classes: usize) -> Network {
    tinynet::train(NetworkConfig::wide(SIZE, classes, seed), set, TrainOptions::default())
        .unwrap()
        .0
}

fn ref_options() -> ReferenceOptions {
    ReferenceOptions {
        working_size: SIZE,
        ..ReferenceOptions::default()
    }
}

struct Protocol {
    reference: Network,
    cand_a: Network,
    cand_b: Network,
    a_train: Vec<(Image, usize)>,
    eval: Vec<(String, Image)>,
    bundle: ReferenceBundle,
    setup: Duration,
}

impl Protocol {
    fn new() -> Self {
        let start = Instant::now();
        let a_train = data(Domain::Rings, PER_CLASS, 1);
        let a2_train = data(Domain::Rings, PER_CLASS, 2);
        let b_train = data(Domain::Stripes, PER_CLASS, 3);
        let eval = data(Domain::Rings, PER_CLASS, 4)
            .into_iter()
            .enumerate()
            .map(|(i, (img, _))| (format!("{i:04}"), img))
            .collect();
        let reference = train(10, &a_train, CLASSES);
        let cand_a = train(11, &a2_train, CLASSES);
        let cand_b = train(12, &b_train, CLASSES);
        let bundle = verifier::build_reference(&Rayon, &reference, &a_train, &ref_options()).unwrap();
        Protocol {
            reference,
            cand_a,
            cand_b,
            a_train,
            eval,
            bundle,
            setup: start.elapsed(),
        }
    }

    fn records(&self, method: Method) -> (Vec<VerificationRecord>, Vec<VerificationRecord>) {
        let ids = |p: &str| -> Vec<(String, Image)> {
            self.eval.iter().map(|(i, m)| (format!("{p}{i}"), m.clone())).collect()
        };
        let al = verifier::extract_records(&Rayon, &self.cand_a, &ids("a"), &self.bundle, method, Some(1)).unwrap();
        let mi = verifier::extract_records(&Rayon, &self.cand_b, &ids("b"), &self.bundle, method, Some(0)).unwrap();
        (al, mi)
    }

    fn cross_validate(&self, method: Method) -> (forest::EvalReport, Vec<VerificationRecord>, Vec<VerificationRecord>) {
        let (al, mi) = self.records(method);
        let (_, d) = verifier::assemble_dataset(&al, &mi).unwrap();
        let (_, report) = verifier::fit_verifier(&Rayon, &d, &ForestConfig::default(), 5, 0.5).unwrap();
        (report, al, mi)
    }
}

fn feature_means(r: &[VerificationRecord]) -> [f64; 7] {
    let mut m = [0.0; 7];
    for x in r {
        for (k, v) in x.features.to_array().iter().enumerate() {
            m[k] += v / r.len() as f64;
        }
    }
    m
}

fn method1(p: &Protocol) -> (Outcome, Outcome) {
    let start = Instant::now();
    let (report, al, mi) = p.cross_validate(Method::GradCam);
    let elapsed = p.setup + start.elapsed();
    let auc = report.roc_auc.unwrap_or(0.0);
    let pass = auc >= 0.90 && report.accuracy >= 0.80 && elapsed < Duration::from_secs(600);
    let degenerate = al.iter().chain(&mi).filter(|r| r.degenerate).count();
    let m1 = outcome(
        "method 1 (grad-cam similarity verifier)",
        pass,
        format!(
            "{} records, 5-fold CV auc {auc:.4} (>= 0.90), accuracy {:.4} (>= 0.80), {degenerate} degenerate, {} incl. training",
            al.len() + mi.len(),
            report.accuracy,
            secs(elapsed)
        ),
    );

    let (ma, mb) = (feature_means(&al), feature_means(&mi));
    let names = ["iou", "dice", "ssim", "cosine", "pearson", "kl", "wasserstein"];
    let mut wrong = Vec::new();
    for k in [0, 1, 2, 3] {
        if !(ma[k] > mb[k]) {
            wrong.push(names[k]);
        }
    }
    for k in [5, 6] {
        if !(ma[k] < mb[k]) {
            wrong.push(names[k]);
        }
    }
    let table: Vec<String> = [0, 1, 2, 3, 5, 6]
        .iter()
        .map(|&k| format!("{} {:.4}/{:.4}", names[k], ma[k], mb[k]))
        .collect();
    let t4 = outcome(
        "label-wise mean direction",
        wrong.is_empty(),
        format!(
            "aligned/misaligned means: {}{}",
            table.join(", "),
            if wrong.is_empty() { String::new() } else { format!("; wrong direction: {}", wrong.join(", ")) }
        ),
    );
    (m1, t4)
}

fn method2(p: &Protocol) -> Outcome {
    let start = Instant::now();
    let (l1, _, _) = p.cross_validate(Method::FeatureMap { layer: 0 });
    let (l2, _, _) = p.cross_validate(Method::FeatureMap { layer: 1 });
    let auc1 = l1.roc_auc.unwrap_or(0.0);

    let stripes_train = data(Domain::Stripes, PER_CLASS, 21);
    let stripes_eval: Vec<Image> = data(Domain::Stripes, PER_CLASS, 22).into_iter().map(|(i, _)| i).collect();
    let refnet = train(20, &stripes_train, CLASSES);
    let bundle = verifier::build_reference(&Rayon, &refnet, &stripes_train, &ref_options()).unwrap();
    let rot = verifier::rotation_probe(
        &Rayon,
        &bundle,
        &refnet,
        &stripes_eval,
        90.0,
        Method::FeatureMap { layer: 0 },
        &ForestConfig::default(),
        5,
    )
    .unwrap();
    let pass = l1.accuracy >= 0.90 && auc1 >= 0.95 && rot.report.accuracy >= 0.75;
    outcome(
        "method 2 (feature-response verifier)",
        pass,
        format!(
            "layer 1 accuracy {:.4} (>= 0.90), auc {auc1:.4} (>= 0.95); layer 2 accuracy {:.4}, auc {:.4} (logged); 90 deg rotation probe accuracy {:.4} (>= 0.75), auc {:.4}; {}",
            l1.accuracy,
            l2.accuracy,
            l2.roc_auc.unwrap_or(0.0),
            rot.report.accuracy,
            rot.report.roc_auc.unwrap_or(0.0),
            secs(start.elapsed())
        ),
    )
}

fn self_reference(p: &Protocol) -> Outcome {
    let methods = [Method::GradCam, Method::FeatureMap { layer: 0 }, Method::FeatureMap { layer: 1 }];
    let opts = ReferenceOptions {
        averaging: Averaging::Global,
        correct_only: false,
        ..ref_options()
    };
    let mut worst = 0.0f64;
    let mut worst_w = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    let mut missing = Vec::new();
    // The identity only holds for non-degenerate maps; an image whose own
    // Grad-CAM is all zero is passed over for the next one of its class.
    for class in 0..CLASSES {
        let mut found = None;
        for (img, label) in p.a_train.iter().filter(|(_, l)| *l == class) {
            let bundle = verifier::build_reference(&Rayon, &p.reference, &[(img.clone(), *label)], &opts).unwrap();
            let records: Vec<VerificationRecord> = methods
                .iter()
                .map(|&m| verifier::extract_record(&p.reference, img, &bundle, m, "self").unwrap())
                .collect();
            if records.iter().any(|r| r.degenerate) {
                skipped += 1;
                continue;
            }
            found = Some(records);
            break;
        }
        let Some(records) = found else {
            missing.push(class);
            continue;
        };
        for r in records {
            let f = r.features;
            for v in [f.iou, f.dice, f.ssim, f.cosine] {
                worst = worst.max((v - 1.0).abs());
            }
            worst_w = worst_w.max(f.wasserstein);
            checked += 1;
        }
    }
    outcome(
        "self-reference identity",
        worst <= 1e-9 && worst_w <= 1e-9 && missing.is_empty(),
        format!(
            "{checked} image/method pairs ({skipped} images with an all-zero map passed over{}); max |x - 1| over iou/dice/ssim/cosine {worst:.2e}, max wasserstein {worst_w:.2e}",
            if missing.is_empty() { String::new() } else { format!(", no usable image for classes {missing:?}") }
        ),
    )
}

// ---------------------------------------------------------------------------
// Garbage class

fn method3() -> Outcome {
    let start = Instant::now();
    let in_domain = data(Domain::Rings, PER_CLASS, 31);
    let garbage: Vec<Image> = synth::generate(&SyntheticSpec {
        domain: Domain::Checker,
        classes: CLASSES,
        samples_per_class: PER_CLASS / CLASSES,
        noise_sigma: 0.05,
        size: SIZE,
        seed: 32,
    })
    .unwrap()
    .into_iter()
    .map(|s| s.image)
    .collect();
    let config = NetworkConfig::wide(SIZE, CLASSES + 1, 33);
    let (_, rep) =
        verifier::garbage_train_eval(&config, &in_domain, &garbage, 0.3, TrainOptions::default(), true).unwrap();
    let g = &rep.report.per_class[rep.garbage_class];
    let precision = g.precision.unwrap_or(0.0);
    let recall = g.recall.unwrap_or(0.0);
    let base = rep.baseline.clone().unwrap();
    let pass = precision >= 0.95
        && recall >= 0.95
        && base.garbage_model_in_domain_accuracy >= base.baseline_in_domain_accuracy;
    outcome(
        "method 3 (garbage class)",
        pass,
        format!(
            "{} test samples; garbage precision {precision:.4}, recall {recall:.4} (>= 0.95); in-domain accuracy {:.4} with garbage class vs {:.4} without; {}",
            rep.test_size,
            base.garbage_model_in_domain_accuracy,
            base.baseline_in_domain_accuracy,
            secs(start.elapsed())
        ),
    )
}

// ---------------------------------------------------------------------------
// CLI pipeline determinism

fn run_cli(cwd: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gamver"))
        .current_dir(cwd)
        .args(args)
        .env("GAMVER_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{}: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn pipeline(root: &Path, jobs: &str) -> Result<(String, String), String> {
    let steps: Vec<Vec<&str>> = vec![
        vec!["synthgen", "--out", "data/a", "--domain", "rings", "--classes", "5", "--samples-per-class", "30", "--seed", "1", "--size", "32"],
        vec!["synthgen", "--out", "data/b", "--domain", "stripes", "--classes", "5", "--samples-per-class", "30", "--seed", "2", "--size", "32"],
        vec!["synthgen", "--out", "data/eval", "--domain", "rings", "--classes", "5", "--samples-per-class", "20", "--seed", "3", "--size", "32"],
        vec!["train", "--out", "models/a", "--data", "data/a", "--seed", "10", "--arch", "small", "--epochs", "10"],
        vec!["train", "--out", "models/b", "--data", "data/b", "--seed", "11", "--arch", "small", "--epochs", "10"],
        vec!["build-ref", "--out", "ref", "--model", "models/a", "--data", "data/a", "--working-size", "32", "--jobs", jobs],
        vec!["extract", "--out", "rec/a", "--model", "models/a", "--ref", "ref", "--data", "data/eval", "--method", "featuremap-L1", "--label", "1", "--id-prefix", "a", "--jobs", jobs],
        vec!["extract", "--out", "rec/b", "--model", "models/b", "--ref", "ref", "--data", "data/eval", "--method", "featuremap-L1", "--label", "0", "--id-prefix", "b", "--jobs", jobs],
        vec!["fit-verify", "--out", "fit", "--aligned", "rec/a/records.csv", "--misaligned", "rec/b/records.csv", "--trees", "50", "--jobs", jobs],
        vec!["report", "--out", "stats", "--records", "fit/dataset.csv"],
    ];
    for s in &steps {
        run_cli(root, s)?;
    }
    let verify = |model: &str, out: &str| {
        run_cli(
            root,
            &["verify", "--out", out, "--model", model, "--data", "data/eval", "--method", "featuremap-L1", "--ref", "ref", "--verifier", "fit/forest.json", "--jobs", jobs],
        )
    };
    let cross = verify("models/b", "verdict/b")?;
    let own = verify("models/a", "verdict/a")?;
    let last = |s: &str| s.lines().last().unwrap_or_default().to_string();
    Ok((last(&cross), last(&own)))
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> (Outcome, Outcome) {
    let start = Instant::now();
    let (one, two) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let runs = pipeline(one.path(), "1").and_then(|r| pipeline(two.path(), "3").map(|s| (r, s)));
    let elapsed = start.elapsed();
    let ((cross, own), _) = match runs {
        Ok(r) => r,
        Err(e) => {
            return (
                outcome("pipeline determinism", false, format!("pipeline failed: {e}")),
                outcome("cli cross-domain rejection", false, "pipeline failed".into()),
            )
        }
    };
    let (fa, fb) = (files(one.path()), files(two.path()));
    let structured = fa
        .keys()
        .filter(|p| p.extension().is_some_and(|x| x == "csv" || x == "json"))
        .count();
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let det = outcome(
        "pipeline determinism",
        differing.is_empty() && structured > 0,
        format!(
            "two runs (--jobs 1 and 3): {} files compared ({structured} csv/json), {} differ{}; both runs {}",
            fa.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(": {}", differing.join(", ")) },
            secs(elapsed)
        ),
    );
    let rejected = cross.contains("REJECTED") && own.contains("ACCEPTED");
    let rej = outcome("cli cross-domain rejection", rejected, format!("cross-domain: {cross}; reference: {own}"));
    (det, rej)
}

// ---------------------------------------------------------------------------
// Forest AUC oracle

fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut doubled, mut pairs) = (0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1;
            doubled += if si > sj { 2 } else if si == sj { 1 } else { 0 };
        }
    }
    doubled as f64 / (2 * pairs) as f64
}

fn forest_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatches = Vec::new();
    let mut datasets = 0;
    while datasets < 50 {
        let n = rng.random_range(4..=200);
        let d = rng.random_range(1..=7);
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        if labels.iter().all(|&l| l == labels[0]) {
            continue;
        }
        let features: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..d).map(|_| (rng.random_range(0..6) as f64 + l as f64) / 6.0).collect())
            .collect();
        let data = FeatureDataset::new((0..d).map(|i| format!("f{i}")).collect(), features, labels.clone()).unwrap();
        let config = ForestConfig {
            num_trees: 10,
            max_depth: 4,
            features_per_split: d.min(3),
            seed: datasets as u64,
            ..ForestConfig::default()
        };
        let model = ForestModel::fit(&config, &data).unwrap();
        let forest_scores = model.predict_all(&data);
        let coarse: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64 / 4.0).collect();
        for (kind, scores) in [("forest", &forest_scores), ("tied", &coarse)] {
            let rank = forest::roc_auc(scores, &labels).unwrap();
            let brute = pairwise_auc(scores, &labels);
            if rank != brute {
                mismatches.push(format!("dataset {datasets} {kind}: {rank} vs {brute}"));
            }
        }
        datasets += 1;
    }
    outcome(
        "forest rank auc equals pairwise auc",
        mismatches.is_empty(),
        format!(
            "{datasets} datasets (4..=200 samples), forest and heavily tied scores, exact equality; {} mismatches{}",
            mismatches.len(),
            mismatches.first().map(|m| format!(", first: {m}")).unwrap_or_default()
        ),
    )
}

fn main() {
    let start = Instant::now();
    let mut results = vec![metric_oracles(), gradients()];
    let protocol = Protocol::new();
    let (m1, t4) = method1(&protocol);
    results.push(m1);
    results.push(t4);
    results.push(method2(&protocol));
    results.push(method3());
    let (det, rej) = determinism();
    results.push(det);
    results.push(self_reference(&protocol));
    results.push(forest_oracle());
    results.push(rej);

    println!();
    for r in &results {
        println!("{} {:<40} {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    println!(
        "\nacceptance: {} of {} criteria passed in {}",
        results.len() - failed,
        results.len(),
        secs(start.elapsed())
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
