use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use super::{
    usage, AgreeArgs, CliError, EvalArgs, FuseArgs, FuseMethod, Outcome, RankArgs, RatersArgs,
    SimulateArgs, SkewArgs, EXIT_NONCONVERGENCE,
};
use crate::error::Error;
use crate::eval::{
    cci, cco, interval_overlap, performance_bounds, rank_detectors, Extent, MatchPlan, Matcher,
    PbarRCurve, Thresholds,
};
use crate::features::{feature_agreement_report, CorrelationResult, ScalarField};
use crate::fusion::{
    fuse_excl_vote, fuse_preset, fuse_simple, fuse_staple, fuse_vote, SimpleConfig, StapleConfig,
    VotePreset,
};
use crate::io::{
    plot_curves, read_bytes, read_mask, read_response, response_csv, write_agreement, write_bytes,
    write_color, write_mask, AnnotationEntry, LoadedStack, NamedList, RunReport, StackManifest,
    MANIFEST_VERSION,
};
use crate::mask::{agreement_curve, agreement_map, smyth_bound, BinaryMask, ImageGrid};
use crate::morph::thin;
use crate::raters::{detect_outliers, pairwise_f1, rater_stats, ward_cluster};
use crate::synth::{
    derive_seed, make_scene, noisy_detector, sample_cohort, RaterProfile, SceneSpec,
};

/// Smyth bounds above this fraction are flagged.
const SMYTH_GUIDELINE: f64 = 0.10;

fn config<T: Serialize>(args: &T) -> Value {
    serde_json::to_value(args).expect("arguments serialize")
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    Ok(write_bytes(&dir.join(name), text.as_bytes())?)
}

fn finish(
    mut report: RunReport,
    out: &Path,
    summary: Vec<String>,
    exit_code: i32,
) -> Result<Outcome, CliError> {
    report.warnings.dedup();
    report.write(&out.join("report.json"))?;
    Ok(Outcome {
        report,
        summary,
        exit_code,
    })
}

fn check_tau(tau: f64) -> Result<(), CliError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(usage(format!("--tau must lie in (0, 1], got {tau}")));
    }
    Ok(())
}

fn load_stack(path: &Path, report: &mut RunReport) -> Result<LoadedStack, CliError> {
    let loaded = StackManifest::load(path)?;
    for f in &loaded.files {
        report.add_input(f)?;
    }
    Ok(loaded)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn correlation_json(res: Result<CorrelationResult, Error>) -> Result<Value, CliError> {
    match res {
        Ok(c) => Ok(json!({"r": c.r, "p": c.p, "n": c.n, "significant": c.is_significant()})),
        Err(Error::UndefinedCorrelation(why)) => Ok(json!({"undefined": why})),
        Err(e) => Err(e.into()),
    }
}

pub(super) fn agree(a: &AgreeArgs) -> Result<Outcome, CliError> {
    let mut report = RunReport::new("agree", config(a));
    let loaded = load_stack(&a.manifest, &mut report)?;
    let agreement = agreement_map(&loaded.stack);
    let curve = agreement_curve(&agreement)?;
    let bound = smyth_bound(&agreement);

    write_agreement(&a.out.join("agreement.pgm"), &agreement)?;
    let mut csv = String::from("n,fraction\n");
    for (n, f) in &curve {
        let _ = writeln!(csv, "{n},{f}");
    }
    write_text(&a.out, "agreement_curve.csv", &csv)?;

    if bound > SMYTH_GUIDELINE {
        report.warnings.push(format!(
            "Smyth bound {bound} exceeds the 10% guideline for the minimum acceptable annotator error"
        ));
    }
    let features = match &loaded.image {
        Some(img) => {
            let rows = feature_agreement_report(img, &agreement)?;
            let mut csv = String::from("feature,r,p,n,significant,undefined\n");
            for row in &rows {
                let c = row.correlation.as_ref();
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    row.feature,
                    opt(c.map(|c| c.r)),
                    opt(c.map(|c| c.p)),
                    c.map_or_else(String::new, |c| c.n.to_string()),
                    row.significant,
                    row.undefined.as_deref().unwrap_or("")
                );
            }
            write_text(&a.out, "features.csv", &csv)?;
            serde_json::to_value(&rows).expect("rows serialize")
        }
        None => Value::Null,
    };
    report.results = json!({
        "n_annotators": loaded.stack.len(),
        "roi_pixels": loaded.stack.roi_pixels(),
        "smyth_bound": bound,
        "agreement_curve": curve.iter().map(|(n, f)| json!({"n": n, "fraction": f})).collect::<Vec<_>>(),
        "features": features,
    });
    let summary = vec![format!("smyth bound: {bound}")];
    finish(report, &a.out, summary, 0)
}

pub(super) fn raters(a: &RatersArgs) -> Result<Outcome, CliError> {
    check_tau(a.tau)?;
    let mut report = RunReport::new("raters", config(a));
    let loaded = load_stack(&a.manifest, &mut report)?;
    let stack = &loaded.stack;
    let f1 = pairwise_f1(stack)?;

    let mut csv = String::from("id");
    for id in &f1.ids {
        let _ = write!(csv, ",{id}");
    }
    csv.push('\n');
    for (id, row) in f1.ids.iter().zip(&f1.f1) {
        csv.push_str(id);
        for v in row {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    write_text(&a.out, "f1.csv", &csv)?;

    let dendrogram = if stack.len() >= 2 {
        let d = ward_cluster(&f1)?;
        write_text(&a.out, "dendrogram.nwk", &(d.to_newick() + "\n"))?;
        Some(d)
    } else {
        report
            .warnings
            .push("clustering needs at least 2 annotators".into());
        None
    };

    let outliers = detect_outliers(&f1, a.std);
    if let Some(w) = &outliers.warning {
        report.warnings.push(w.clone());
    }
    let reference = fuse_vote(stack, a.tau)?;
    let stats = rater_stats(stack, &reference)?;
    let mut csv = String::from(
        "id,tp,fp,fn,tn,sensitivity,specificity,ppv,npv,kappa,mean_f1_difference,outlier\n",
    );
    for (k, s) in stats.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            s.id,
            s.counts.tp,
            s.counts.fp,
            s.counts.fn_,
            s.counts.tn,
            opt(s.sensitivity),
            opt(s.specificity),
            opt(s.ppv),
            opt(s.npv),
            opt(s.kappa),
            outliers.mean_differences[k],
            outliers.outliers.contains(&s.id)
        );
    }
    write_text(&a.out, "stats.csv", &csv)?;

    let summary = vec![format!(
        "outliers: {}",
        if outliers.outliers.is_empty() {
            "none".to_string()
        } else {
            outliers.outliers.join(", ")
        }
    )];
    report.results = json!({
        "f1": f1,
        "dendrogram": dendrogram,
        "newick": dendrogram.as_ref().map(|d| d.to_newick()),
        "outliers": outliers,
        "stats": stats,
    });
    finish(report, &a.out, summary, 0)
}

pub(super) fn fuse(a: &FuseArgs) -> Result<Outcome, CliError> {
    check_tau(a.tau)?;
    let mut report = RunReport::new("fuse", config(a));
    let loaded = load_stack(&a.manifest, &mut report)?;
    let stack = &loaded.stack;
    let mut exit_code = 0;
    let mut results = serde_json::Map::new();
    let mask = match a.method {
        FuseMethod::Any => fuse_preset(stack, VotePreset::Any)?,
        FuseMethod::Vote => fuse_vote(stack, a.tau)?,
        FuseMethod::Vote75 => fuse_preset(stack, VotePreset::ThreeQuarters)?,
        FuseMethod::ExclVote => {
            let r = fuse_excl_vote(stack, a.tau, a.std)?;
            report.warnings.extend(r.warning.clone());
            results.insert("excluded".into(), json!(r.excluded));
            results.insert("outliers".into(), json!(r.outliers));
            r.mask
        }
        FuseMethod::Staple => {
            let cfg = StapleConfig {
                prior: a.prior.0,
                init_p: a.init_p,
                init_q: a.init_q,
                tol: a.tol,
                max_iters: a.max_iters,
            };
            let r = fuse_staple(stack, &cfg).map_err(|e| match e {
                Error::Argument(m) if m.contains("must") => usage(m),
                other => other.into(),
            })?;
            if !r.converged {
                report.warnings.push(format!(
                    "STAPLE did not converge within {} iterations",
                    r.iterations
                ));
                exit_code = EXIT_NONCONVERGENCE;
            }
            let post = ScalarField::new(r.posterior.grid(), r.posterior.values().to_vec())?;
            write_text(&a.out, "posterior.csv", &response_csv(&post))?;
            let mut csv = String::from("id,sensitivity,specificity\n");
            for (k, id) in r.performance.ids.iter().enumerate() {
                let _ = writeln!(
                    csv,
                    "{id},{},{}",
                    r.performance.sensitivity[k], r.performance.specificity[k]
                );
            }
            write_text(&a.out, "performance.csv", &csv)?;
            results.insert("performance".into(), json!(r.performance));
            results.insert("prior".into(), json!(r.prior));
            results.insert("iterations".into(), json!(r.iterations));
            results.insert("converged".into(), json!(r.converged));
            results.insert("log_likelihood".into(), json!(r.log_likelihood));
            r.ground_truth()
        }
        FuseMethod::Simple => {
            let cfg = SimpleConfig {
                score: a.score,
                drop_margin: a.drop_margin,
                max_rounds: a.max_rounds,
            };
            let r = fuse_simple(stack, &cfg)?;
            report.warnings.extend(r.warning.clone());
            results.insert("retained".into(), json!(r.retained));
            results.insert("dropped".into(), json!(r.dropped));
            results.insert("rounds".into(), json!(r.rounds));
            r.mask
        }
    };
    write_mask(&a.out.join("gt.pgm"), &mask)?;
    results.insert("method".into(), json!(a.method));
    results.insert("positive_pixels".into(), json!(mask.count()));
    report.results = Value::Object(results);
    let summary = vec![format!(
        "{} ground truth: {} positive pixels",
        method_name(a.method),
        mask.count()
    )];
    finish(report, &a.out, summary, exit_code)
}

fn method_name(m: FuseMethod) -> &'static str {
    match m {
        FuseMethod::Any => "any",
        FuseMethod::Vote => "vote",
        FuseMethod::Vote75 => "vote75",
        FuseMethod::ExclVote => "excl-vote",
        FuseMethod::Staple => "staple",
        FuseMethod::Simple => "simple",
    }
}

fn check_skew(s: &SkewArgs) -> Result<(), CliError> {
    s.spec()
        .resolve(1, 1)
        .map(|_| ())
        .map_err(|e| usage(e.to_string()))
}

fn read_extents(path: &Path, report: &mut RunReport) -> Result<Vec<Extent>, CliError> {
    report.add_input(path)?;
    serde_json::from_slice(&read_bytes(path)?)
        .map_err(|e| Error::format(path, e.to_string()).into())
}

/// ROI, plan and thinning shared by `eval` and `rank`.
struct EvalSetup {
    roi: Option<BinaryMask>,
    plan: MatchPlan,
    thin: bool,
}

impl EvalSetup {
    fn new(
        s: &SkewArgs,
        grid: ImageGrid,
        stack: Option<&LoadedStack>,
        report: &mut RunReport,
    ) -> Result<Self, CliError> {
        let roi = match &s.roi {
            Some(p) => {
                report.add_input(p)?;
                Some(read_mask(p)?)
            }
            None => stack.and_then(|l| l.stack.roi().cloned()),
        };
        if let Some(r) = &roi {
            grid.check(&r.grid())?;
        }
        let extents = match &s.extents {
            Some(p) => Some(read_extents(p, report)?),
            None => stack.and_then(|l| l.extents.clone()),
        };
        let plan = MatchPlan::new(grid, extents.as_deref(), s.tolerance)?;
        Ok(EvalSetup {
            roi,
            plan,
            thin: s.thin,
        })
    }

    fn gt(&self, mask: BinaryMask) -> BinaryMask {
        if self.thin {
            thin(&mask)
        } else {
            mask
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(
        || path.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

fn unique_names(names: &[String], what: &str) -> Result<(), CliError> {
    for (k, n) in names.iter().enumerate() {
        if names[..k].contains(n) {
            return Err(usage(format!(
                "two {what} share the name `{n}`; rename one file"
            )));
        }
    }
    Ok(())
}

fn curve_json(c: &PbarRCurve) -> Value {
    json!({
        "auc": c.auc,
        "positives": c.positives,
        "negatives": c.negatives,
        "phi": c.skew.phi(),
        "points": c.points.len(),
    })
}

pub(super) fn eval(a: &EvalArgs) -> Result<Outcome, CliError> {
    check_skew(&a.skew)?;
    if a.gt.is_empty() && a.manifest.is_none() {
        return Err(usage("give at least one --gt or a --manifest"));
    }
    let mut report = RunReport::new("eval", config(a));
    let loaded = match &a.manifest {
        Some(m) => Some(load_stack(m, &mut report)?),
        None => None,
    };

    let mut responses = Vec::new();
    for p in &a.response {
        report.add_input(p)?;
        responses.push((stem(p), read_response(p)?));
    }
    let names: Vec<String> = responses.iter().map(|r| r.0.clone()).collect();
    unique_names(&names, "responses")?;
    let grid = responses[0].1.grid();

    let setup = EvalSetup::new(&a.skew, grid, loaded.as_ref(), &mut report)?;
    let mut gts = Vec::new();
    if a.gt.is_empty() {
        let stack = &loaded.as_ref().expect("checked above").stack;
        for (name, preset) in [
            ("any-gt", VotePreset::Any),
            ("0.5-gt", VotePreset::Half),
            ("0.75-gt", VotePreset::ThreeQuarters),
        ] {
            gts.push((name.to_string(), setup.gt(fuse_preset(stack, preset)?)));
        }
    } else {
        for p in &a.gt {
            report.add_input(p)?;
            gts.push((stem(p), setup.gt(read_mask(p)?)));
        }
    }
    let gt_names: Vec<String> = gts.iter().map(|g| g.0.clone()).collect();
    unique_names(&gt_names, "ground truths")?;

    let spec = a.skew.spec();
    let mut curves = Vec::new();
    let mut table = Vec::new();
    let mut summary = Vec::new();
    for (rname, resp) in &responses {
        for (gname, gt) in &gts {
            let matcher = Matcher::new(resp, gt, setup.roi.as_ref(), &setup.plan)?;
            let range = spec.resolve(matcher.positives(), matcher.negatives())?;
            let curve = PbarRCurve::from_matcher(&matcher, &range, Thresholds::default())?;
            write_text(
                &a.out.join("curves"),
                &format!("{rname}__{gname}.csv"),
                &curve.to_csv(),
            )?;
            summary.push(format!("{rname} vs {gname}: AUC {}", curve.auc));
            let mut row = curve_json(&curve);
            row["response"] = json!(rname);
            row["gt"] = json!(gname);
            table.push(row);
            curves.push((format!("{rname} / {gname}"), curve));
        }
    }
    if a.svg {
        let named: Vec<(String, &PbarRCurve)> =
            curves.iter().map(|(n, c)| (n.clone(), c)).collect();
        write_text(&a.out, "curves.svg", &plot_curves(&named))?;
    }

    let mut results = json!({ "curves": table });
    if let Some(l) = &loaded {
        let agreement = agreement_map(&l.stack);
        let mut corr = Vec::new();
        let mut bounds = Vec::new();
        for (rname, resp) in &responses {
            corr.push(json!({
                "response": rname,
                "cco": correlation_json(cco(resp, &agreement))?,
                "cci": correlation_json(cci(resp, &agreement))?,
            }));
            let stack = match &setup.roi {
                Some(r) if l.stack.roi() != Some(r) => crate::mask::AnnotationStack::new(
                    l.stack.annotators().to_vec(),
                    Some(r.clone()),
                )?,
                _ => l.stack.clone(),
            };
            let b = performance_bounds(resp, &stack, &setup.plan, &spec, Thresholds::default())?;
            let (lo, hi) = b.interval();
            bounds.push((rname.clone(), (lo, hi)));
            summary.push(format!("{rname}: AUC bounds [{lo}, {hi}]"));
        }
        let mut overlaps = Vec::new();
        for i in 0..bounds.len() {
            for j in i + 1..bounds.len() {
                overlaps.push(json!({
                    "a": bounds[i].0,
                    "b": bounds[j].0,
                    "overlap": interval_overlap(bounds[i].1, bounds[j].1),
                }));
            }
        }
        results["correlations"] = json!(corr);
        results["bounds"] = json!(bounds
            .iter()
            .map(|(n, (lo, hi))| json!({"response": n, "lower": lo, "upper": hi}))
            .collect::<Vec<_>>());
        results["overlaps"] = json!(overlaps);
    }
    report.results = results;
    finish(report, &a.out, summary, 0)
}

pub(super) fn rank(a: &RankArgs) -> Result<Outcome, CliError> {
    check_skew(&a.skew)?;
    let mut report = RunReport::new("rank", config(a));
    report.add_input(&a.responses)?;
    report.add_input(&a.gts)?;
    let mut responses = Vec::new();
    for (name, p) in NamedList::read(&a.responses)? {
        report.add_input(&p)?;
        responses.push((name, read_response(&p)?));
    }
    let grid = responses[0].1.grid();
    let setup = EvalSetup::new(&a.skew, grid, None, &mut report)?;
    let mut gts = Vec::new();
    for (name, p) in NamedList::read(&a.gts)? {
        report.add_input(&p)?;
        gts.push((name, setup.gt(read_mask(&p)?)));
    }
    let ranking = rank_detectors(
        &responses,
        &gts,
        setup.roi.as_ref(),
        &setup.plan,
        &a.skew.spec(),
        Thresholds::default(),
    )?;
    let text = serde_json::to_string_pretty(&ranking).expect("ranking serializes") + "\n";
    write_text(&a.out, "ranking.json", &text)?;
    let summary = ranking
        .distinct
        .iter()
        .map(|d| format!("{}: {}", d.gts.join(", "), d.order.join(" > ")))
        .collect();
    report.results = json!(ranking);
    finish(report, &a.out, summary, 0)
}

pub(super) fn simulate(a: &SimulateArgs) -> Result<Outcome, CliError> {
    let spec = SceneSpec {
        geometry: a.geometry,
        width: a.width,
        height: a.height,
        seed: a.seed,
        objects: a.objects,
        blob_radius: a.blob_radius,
        contrast: a.contrast,
        noise: a.noise,
    };
    let scene = make_scene(&spec).map_err(|e| match e {
        Error::Argument(m) => usage(m),
        other => other.into(),
    })?;
    let defaults = vec![
        super::ProfileArg {
            p: 0.9,
            q: 0.99,
            bias: 0
        };
        5
    ];
    let chosen = if a.profile.is_empty() {
        &defaults
    } else {
        &a.profile
    };
    let profiles: Vec<RaterProfile> = chosen
        .iter()
        .enumerate()
        .map(|(j, p)| RaterProfile::new(p.p, p.q, p.bias, derive_seed(a.seed, 3 + j as u64)))
        .collect::<Result<_, _>>()
        .map_err(|e| usage(e.to_string()))?;
    let stack = sample_cohort(&scene.gold, &profiles, None)?;
    let response = noisy_detector(
        &scene.gold,
        a.detector_bias,
        a.detector_blur,
        a.detector_noise,
        derive_seed(a.seed, 2),
    )
    .map_err(|e| usage(e.to_string()))?;

    let mut report = RunReport::new("simulate", config(a));
    write_color(&a.out.join("image.ppm"), &scene.image)?;
    write_mask(&a.out.join("gold.pgm"), &scene.gold)?;
    let mut entries = Vec::new();
    for ann in stack.annotators() {
        let rel = PathBuf::from("annotators").join(format!("{}.pgm", ann.id));
        write_mask(&a.out.join(&rel), &ann.mask)?;
        entries.push(AnnotationEntry {
            id: ann.id.clone(),
            mask: rel.display().to_string(),
        });
    }
    let manifest = StackManifest {
        version: MANIFEST_VERSION,
        image: Some("image.ppm".into()),
        annotations: entries,
        roi: None,
        extents: None,
    };
    write_text(&a.out, "stack.json", &manifest.to_json())?;
    write_text(&a.out, "response.csv", &response_csv(&response))?;

    let positives = scene.gold.count();
    report.results = json!({
        "scene": spec,
        "gold_pixels": positives,
        "gold_fraction": positives as f64 / scene.grid().len() as f64,
        "profiles": profiles
            .iter()
            .zip(stack.ids())
            .map(|(p, id)| json!({"id": id, "p": p.p, "q": p.q, "dilate_bias": p.dilate_bias, "seed": p.seed}))
            .collect::<Vec<_>>(),
        "detector_seed": derive_seed(a.seed, 2),
    });
    let summary = vec![format!(
        "{} scene {}x{}: {} gold pixels, {} annotators",
        match a.geometry {
            crate::synth::Geometry::Linear => "linear",
            crate::synth::Geometry::Areal => "areal",
        },
        a.width,
        a.height,
        positives,
        stack.len()
    )];
    finish(report, &a.out, summary, 0)
}
