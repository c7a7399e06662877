//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=2,9` runs a subset. `ACCEPTANCE_STRICT=1` exits nonzero when a criterion fails.

use std::time::Instant;

use flowlenia::embedding::{mix_average, mix_softmax, EPS_MASS};
use flowlenia::ecology::ChemGeometry;
use flowlenia::evolve::{episode_seed, evaluate_fitness, EsRun};
use flowlenia::explore::{run_random_search_with_mode, sample_rng, SlpCriterion};
use flowlenia::{
    init_patch, reintegration_step, sample_ruleset, total_mass, Checkpoint, Displacement, EcologyConfig, EmbeddingConfig, EsConfig,
    Field, FlowParams, KernelSpec, Layer, MixingMode, MixingPolicy, Mode, MultiField, OpenEs, ParamMap, RuleSet, RuleSource,
    SamplerRanges, Scalar, SearchConfig, SimConfig, Stepper, Task, TaskSpec, Template, VectorField, World,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(u32, &str, fn() -> Outcome); 11] = [
        (1, "mass conservation", mass_conservation),
        (2, "reintegration identity and overlap", reintegration_overlap),
        (3, "reference stepper equivalence", reference_equivalence),
        (4, "SLP prevalence", slp_prevalence),
        (5, "Lenia contrast", lenia_contrast),
        (6, "ES progress on directed motion", es_progress),
        (7, "chemotaxis sanity", chemotaxis),
        (8, "food and decay bookkeeping", food_decay),
        (9, "mixing properties", mixing),
        (10, "determinism and checkpoints", determinism),
        (11, "performance smoke", performance),
    ];
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        println!(
            "criterion {n:>2} {}: {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        // The report is the product; ACCEPTANCE_STRICT=1 turns failures into a nonzero exit.
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}

fn wiring(channels: usize) -> Vec<Vec<u32>> {
    if channels == 1 {
        vec![vec![10]]
    } else {
        vec![vec![3, 2], vec![2, 3]]
    }
}

fn max_relative_drift(initial: &[f64], now: &[f64]) -> f64 {
    initial.iter().zip(now).map(|(a, b)| ((b - a) / a).abs()).fold(0.0, f64::max)
}

fn drift_run<T: Scalar>(count: usize, size: usize, steps: usize) -> f64 {
    let ranges = SamplerRanges::default();
    let mut worst = 0.0f64;
    for i in 0..count {
        let channels = 1 + i % 2;
        let mut rng = sample_rng(101, i);
        let rules = sample_ruleset(&mut rng, channels, &wiring(channels), &ranges).unwrap();
        let mut a = init_patch::<T, _>(&mut rng, size, size, 40, channels).unwrap();
        let stepper = Stepper::<T>::new(&rules, size, size, Mode::Flow, FlowParams::default()).unwrap();
        let m0: Vec<f64> = total_mass(&a).iter().map(|m| m.as_f64()).collect();
        for _ in 0..steps {
            a = stepper.step(&a, &[]).unwrap().0;
            let m: Vec<f64> = total_mass(&a).iter().map(|m| m.as_f64()).collect();
            worst = worst.max(max_relative_drift(&m0, &m));
        }
    }
    worst
}

fn mass_conservation() -> Outcome {
    let t = Instant::now();
    let double = drift_run::<f64>(100, 128, 512);
    let double_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let single = drift_run::<f32>(100, 128, 512);
    let single_secs = t.elapsed().as_secs_f64();
    outcome(
        double <= 1e-10 && single <= 1e-5,
        format!(
            "max drift f64 {double:.2e} (<= 1e-10, {double_secs:.0} s), f32 {single:.2e} (<= 1e-5, {single_secs:.0} s); \
             100 rule sets, C in {{1,2}}, 128x128, 512 steps; runtime budget 600 s per precision on {} thread(s)",
            rayon::current_num_threads()
        ),
    )
}

fn overlap_1d(center: f64, s: f64, cell: f64) -> f64 {
    ((center + s).min(cell + 0.5) - (center - s).max(cell - 0.5)).max(0.0)
}

fn zero_flows(w: usize, h: usize, c: usize) -> Vec<VectorField<f64>> {
    (0..c).map(|_| VectorField::zeros(w, h)).collect()
}

fn reintegration_overlap() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = MultiField::new(
        (0..2)
            .map(|_| Field::from_fn(24, 20, |_, _| rng.gen::<f64>()).unwrap())
            .collect(),
    )
    .unwrap();
    let half = FlowParams {
        s: 0.5,
        ..Default::default()
    };
    let identity = reintegration_step(&a, &zero_flows(24, 20, 2), &half).unwrap() == a;

    let params = FlowParams::default();
    let mut point = MultiField::<f64>::zeros(16, 16, 1).unwrap();
    point.channel_mut(0).set(8, 8, 1.0);
    let spread = reintegration_step(&point, &zero_flows(16, 16, 1), &params).unwrap();
    let mut err = 0.0f64;
    for y in 0..16 {
        for x in 0..16 {
            let want = overlap_1d(8.0, params.s, x as f64) * overlap_1d(8.0, params.s, y as f64) / (4.0 * params.s * params.s);
            err = err.max((spread.channel(0).get(x, y) - want).abs());
        }
    }
    let c = spread.channel(0);
    let (centre, edge, corner) = (c.get(8, 8), c.get(9, 8), c.get(9, 9));
    let published = (centre - 0.59172).abs() < 5e-6 && (edge - 0.08876).abs() < 5e-6 && (corner - 0.01331).abs() < 5e-6;
    outcome(
        identity && err <= 1e-10 && published,
        format!(
            "s=0.5 identity exact: {identity}; s=0.65 fractions {centre:.5}/{edge:.5}/{corner:.5}, max error vs overlap oracle {err:.1e} (<= 1e-10)"
        ),
    )
}

/// Nested-loop Flow Lenia step with direct convolution and explicit square overlaps.
mod reference {
    use super::*;

    pub struct Kernel {
        pub taps: Vec<(isize, isize, f64)>,
    }

    pub fn kernel(spec: &KernelSpec, radius: u32) -> Kernel {
        let extent = spec.r * radius as f64;
        let r = radius as isize;
        let mut taps = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let d = ((dx * dx + dy * dy) as f64).sqrt();
                if d <= extent {
                    let rho = d / extent;
                    let mut v = 0.0;
                    for j in 0..3 {
                        v += spec.b[j] * (-(rho - spec.a[j]).powi(2) / (2.0 * spec.w[j] * spec.w[j])).exp();
                    }
                    taps.push((dx, dy, v));
                }
            }
        }
        let total: f64 = taps.iter().map(|t| t.2).sum();
        for t in &mut taps {
            t.2 /= total;
        }
        Kernel { taps }
    }

    fn at(v: &[f64], w: usize, h: usize, x: isize, y: isize) -> f64 {
        v[y.rem_euclid(h as isize) as usize * w + x.rem_euclid(w as isize) as usize]
    }

    fn sobel(v: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let p = |dx: isize, dy: isize| at(v, w, h, x + dx, y + dy);
                let i = y as usize * w + x as usize;
                gx[i] = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1) - p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1)) / 8.0;
                gy[i] = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1) - p(-1, -1) - 2.0 * p(0, -1) - p(1, -1)) / 8.0;
            }
        }
        (gx, gy)
    }

    pub fn step(a: &[Vec<f64>], w: usize, h: usize, rules: &RuleSet, kernels: &[Kernel], fp: &FlowParams) -> Vec<Vec<f64>> {
        let c = a.len();
        let mut u = vec![vec![0.0; w * h]; c];
        for (p, k) in rules.pairs.iter().zip(kernels) {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut pot = 0.0;
                    for &(dx, dy, kv) in &k.taps {
                        pot += kv * at(&a[p.source], w, h, x - dx, y - dy);
                    }
                    let g = 2.0 * (-(p.growth.mu - pot).powi(2) / (2.0 * p.growth.sigma * p.growth.sigma)).exp() - 1.0;
                    u[p.target][y as usize * w + x as usize] += p.h * g;
                }
            }
        }
        let sum: Vec<f64> = (0..w * h).map(|i| a.iter().map(|ch| ch[i]).sum()).collect();
        let alpha: Vec<f64> = sum.iter().map(|&m| (m.max(0.0) / fp.theta_a).powf(fp.n).min(1.0)).collect();
        let (sx, sy) = sobel(&sum, w, h);
        let mut out = vec![vec![0.0; w * h]; c];
        for ch in 0..c {
            let (ux, uy) = sobel(&u[ch], w, h);
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let fx = (1.0 - alpha[i]) * ux[i] - alpha[i] * sx[i];
                    let fy = (1.0 - alpha[i]) * uy[i] - alpha[i] * sy[i];
                    let cx = x as f64 + (fp.dt * fx).clamp(-fp.d_max, fp.d_max);
                    let cy = y as f64 + (fp.dt * fy).clamp(-fp.d_max, fp.d_max);
                    let area = 4.0 * fp.s * fp.s;
                    let (x0, x1) = ((cx - fp.s - 0.5).floor() as isize, (cx + fp.s + 0.5).ceil() as isize);
                    let (y0, y1) = ((cy - fp.s - 0.5).floor() as isize, (cy + fp.s + 0.5).ceil() as isize);
                    for ty in y0..=y1 {
                        let oy = overlap_1d(cy, fp.s, ty as f64);
                        for tx in x0..=x1 {
                            let ox = overlap_1d(cx, fp.s, tx as f64);
                            if ox > 0.0 && oy > 0.0 {
                                let t = ty.rem_euclid(h as isize) as usize * w + tx.rem_euclid(w as isize) as usize;
                                out[ch][t] += a[ch][i] * ox * oy / area;
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn reference_equivalence() -> Outcome {
    let (w, h) = (64, 64);
    let ranges = SamplerRanges {
        radius: (4, 10),
        ..Default::default()
    };
    let fp = FlowParams::default();
    let mut worst = 0.0f64;
    for i in 0..10 {
        let channels = 1 + i % 2;
        let adjacency = if channels == 1 { vec![vec![4]] } else { vec![vec![1, 1], vec![1, 1]] };
        let mut rng = sample_rng(303, i);
        let rules = sample_ruleset(&mut rng, channels, &adjacency, &ranges).unwrap();
        let mut a = init_patch::<f64, _>(&mut rng, w, h, 20, channels).unwrap();
        let mut r: Vec<Vec<f64>> = a.channels().iter().map(|c| c.values().to_vec()).collect();
        let kernels: Vec<reference::Kernel> = rules.pairs.iter().map(|p| reference::kernel(&p.kernel, rules.radius)).collect();
        let stepper = Stepper::<f64>::new(&rules, w, h, Mode::Flow, fp).unwrap();
        for _ in 0..100 {
            a = stepper.step(&a, &[]).unwrap().0;
            r = reference::step(&r, w, h, &rules, &kernels, &fp);
            for (c, rc) in a.channels().iter().zip(&r) {
                for (x, y) in c.values().iter().zip(rc) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    outcome(
        worst <= 1e-8,
        format!("max per-cell difference {worst:.2e} (<= 1e-8) over 10 rule sets x 100 steps, 64x64"),
    )
}

fn search_config() -> SearchConfig {
    SearchConfig {
        width: 64,
        height: 64,
        channels: 1,
        adjacency: vec![vec![10]],
        steps: 1000,
        patch_side: 20,
        ..Default::default()
    }
}

const SEARCH_SEED: u64 = 7;

fn slp_rate(mode: Mode) -> (f64, usize) {
    let records = run_random_search_with_mode::<f64>(SEARCH_SEED, 100, &search_config(), mode);
    let errors = records.iter().filter(|r| r.error.is_some()).count();
    let slp = records.iter().filter(|r| r.stats.as_ref().is_some_and(|s| s.localized)).count();
    (slp as f64 / records.len() as f64, errors)
}

fn slp_prevalence() -> Outcome {
    let (rate, errors) = slp_rate(Mode::Flow);
    let c = SlpCriterion::default();
    outcome(
        rate >= 0.70,
        format!(
            "Flow Lenia SLP rate {:.0}% (>= 70%) over 100 samples, 64x64, 1000 steps, {:.0}% mass in <= {:.0}% area; {errors} sample errors",
            rate * 100.0,
            c.mass_fraction * 100.0,
            c.max_area * 100.0
        ),
    )
}

fn lenia_contrast() -> Outcome {
    let (flow, _) = slp_rate(Mode::Flow);
    let (lenia, errors) = slp_rate(Mode::Lenia);
    let gap = (flow - lenia) * 100.0;
    outcome(
        gap >= 30.0,
        format!(
            "Flow {:.0}% vs Lenia {:.0}% SLP, gap {gap:.0} pp (>= 30) on the same 100 samples; {errors} sample errors",
            flow * 100.0,
            lenia * 100.0
        ),
    )
}

fn es_template(adjacency: Vec<Vec<u32>>) -> Template {
    Template {
        width: 64,
        height: 64,
        channels: 2,
        adjacency,
        radius: 12,
        patch_side: 20,
        ranges: SamplerRanges::default(),
    }
}

fn train(spec: &TaskSpec, generations: u64, seed: u64) -> (EsRun, Vec<flowlenia::evolve::GenerationRecord>) {
    let dim = spec.template.genome_len();
    let es = OpenEs::new(EsConfig::default(), OpenEs::random_mean(dim, seed), seed).unwrap();
    let mut run = EsRun::new(es);
    let history = flowlenia::open_es_run(&mut run, generations, |g, ep| evaluate_fitness(g, spec, ep), |_, _| Ok(())).unwrap();
    (run, history)
}

fn es_progress() -> Outcome {
    let mut spec = TaskSpec::new(Task::DirectedMotion, es_template(wiring(2)));
    spec.precision = flowlenia::Precision::Single;
    let mut ratios = Vec::new();
    let mut notes = Vec::new();
    for seed in 0..3 {
        let (run, history) = train(&spec, 150, seed);
        let first = history[0].best_fitness;
        let ratio = if first > 0.0 { run.best_fitness / first } else { f64::INFINITY };
        notes.push(format!("seed {seed}: {first:.4} -> {:.4} ({ratio:.2}x)", run.best_fitness));
        ratios.push(ratio);
    }
    ratios.sort_by(f64::total_cmp);
    outcome(
        ratios[1] >= 3.0,
        format!(
            "median best-so-far / generation-0 best = {:.2}x (>= 3); {}; C=2, 10 kernels, 64x64, pop 16, 150 generations, f32",
            ratios[1],
            notes.join(", ")
        ),
    )
}

fn chemotaxis() -> Outcome {
    let mut spec = TaskSpec::new(Task::Chemotaxis, es_template(vec![vec![3, 2, 0], vec![2, 3, 0], vec![5, 0, 0]]));
    spec.precision = flowlenia::Precision::Single;
    spec.chem = ChemGeometry { ring: 30.0, sigma: 15.0 };
    let seed = 0;
    let control = OpenEs::random_mean(spec.template.genome_len(), seed);
    let (run, _) = train(&spec, 100, seed);
    let held_out: Vec<u64> = (0..16).map(|k| episode_seed(seed + 1000, k)).collect();
    let mean = |g: &[f64]| held_out.iter().map(|&ep| evaluate_fitness(g, &spec, ep)).sum::<f64>() / held_out.len() as f64;
    let trained = mean(&run.best_genotype);
    let untrained = mean(&control);
    outcome(
        trained >= 1.5 * untrained,
        format!(
            "trained mass-weighted Γ {trained:.4} vs untrained control {untrained:.4} ({:.2}x, >= 1.5) over 16 held-out episodes; 100 generations",
            trained / untrained
        ),
    )
}

fn eco_world(rho_decay: f64, rho_digest: f64) -> World<f64> {
    World::new(SimConfig {
        width: 64,
        height: 64,
        adjacency: vec![vec![10]],
        rules: RuleSource::Sampled {
            seed: 11,
            ranges: SamplerRanges::default(),
        },
        patch_side: 20,
        seed: 5,
        ecology: Some(EcologyConfig {
            rho_decay,
            rho_digest,
            food: 0.3,
            ..Default::default()
        }),
        ..Default::default()
    })
    .unwrap()
}

fn food_decay() -> Outcome {
    let mut world = eco_world(0.0, 0.02);
    let total = |w: &World<f64>| w.total_mass().iter().sum::<f64>() + w.ecology().unwrap().food.sum();
    let start = total(&world);
    let food0 = world.ecology().unwrap().food.sum();
    let mut conserved = 0.0f64;
    for _ in 0..1000 {
        world.step().unwrap();
        conserved = conserved.max(((total(&world) - start) / start).abs());
    }
    let eaten = food0 - world.ecology().unwrap().food.sum();

    let rho = 0.003;
    let mut world = eco_world(rho, 0.0);
    let m0 = world.total_mass()[0];
    let mut decay = 0.0f64;
    for t in 1..=1000 {
        world.step().unwrap();
        let want = m0 * (1.0 - rho).powi(t);
        decay = decay.max(((world.total_mass()[0] - want) / want).abs());
    }
    outcome(
        conserved <= 1e-10 && decay <= 1e-8 && eaten > 0.0,
        format!(
            "matter+food relative drift {conserved:.2e} (<= 1e-10, {eaten:.1} food digested); decay vs (1-rho)^t {decay:.2e} (<= 1e-8); 1000 steps"
        ),
    )
}

/// Carathéodory: inside the hull iff inside some triangle of the points (segments and points included).
fn in_hull(p: [f64; 2], pts: &[[f64; 2]], tol: f64) -> bool {
    let on_segment = |a: [f64; 2], b: [f64; 2]| {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
        (a[0] + t * dx - p[0]).hypot(a[1] + t * dy - p[1]) <= tol
    };
    let cross = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    for i in 0..pts.len() {
        for j in i..pts.len() {
            if on_segment(pts[i], pts[j]) {
                return true;
            }
            for k in j + 1..pts.len() {
                let (a, b, c) = (pts[i], pts[j], pts[k]);
                let s = [cross(a, b), cross(b, c), cross(c, a)];
                if s.iter().all(|&v| v >= -tol) || s.iter().all(|&v| v <= tol) {
                    return true;
                }
            }
        }
    }
    false
}

fn mixing() -> Outcome {
    let s = 0.65;
    // isolated sources four cells apart never share a target
    let (w, h) = (16, 16);
    let mut sparse = MultiField::<f64>::zeros(w, h, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut params = ParamMap::<f64>::uniform(w, h, &[0.0, 0.0]);
    for y in (0..h).step_by(4) {
        for x in (0..w).step_by(4) {
            sparse.channel_mut(0).set(x, y, rng.gen_range(0.1..1.0));
        }
    }
    for i in 0..w * h {
        let v = [rng.gen::<f64>(), rng.gen::<f64>()];
        params.cell_mut(i).copy_from_slice(&v);
    }
    let still = vec![Displacement {
        x: vec![0.0; w * h],
        y: vec![0.0; w * h],
    }];
    let policy = |seed: u64| MixingPolicy {
        mode: MixingMode::SoftmaxSample,
        rng_seed: seed,
        crossover: false,
    };
    let first = mix_softmax(&params, &sparse, &still, s, &policy(0), 0).unwrap();
    let mut deterministic = true;
    for seed in 1..100 {
        deterministic &= mix_softmax(&params, &sparse, &still, s, &policy(seed), seed).unwrap() == first;
    }
    for y in (0..h).step_by(4) {
        for x in (0..w).step_by(4) {
            for (dx, dy) in [(0isize, 0isize), (1, 0), (-1, 1)] {
                let t = (y as isize + dy).rem_euclid(h as isize) as usize * w + (x as isize + dx).rem_euclid(w as isize) as usize;
                deterministic &= first.cell(t) == params.cell(y * w + x);
            }
        }
    }

    // two equal masses landing half in cell 2 each
    let (w, h) = (8, 8);
    let mut pair = MultiField::<f64>::zeros(w, h, 1).unwrap();
    pair.channel_mut(0).set(1, 4, 0.6);
    pair.channel_mut(0).set(3, 4, 0.6);
    let mut dx = vec![0.0; w * h];
    dx[4 * w + 1] = 0.5;
    dx[4 * w + 3] = -0.5;
    let disp = vec![Displacement { x: dx, y: vec![0.0; w * h] }];
    let mut two = ParamMap::<f64>::uniform(w, h, &[0.5]);
    two.cell_mut(4 * w + 1)[0] = 0.1;
    two.cell_mut(4 * w + 3)[0] = 0.9;
    let trials = 10_000u64;
    let mut hits = 0;
    for t in 0..trials {
        let out = mix_softmax(&two, &pair, &disp, 0.5, &policy(17), t).unwrap();
        if out.cell(4 * w + 2)[0] == 0.1 {
            hits += 1;
        }
    }
    let freq = hits as f64 / trials as f64;

    // convex-hull containment of averaged vectors
    let (w, h) = (32, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mass = MultiField::new(vec![Field::from_fn(w, h, |_, _| rng.gen_range(0.05..1.0)).unwrap()]).unwrap();
    let mut params = ParamMap::<f64>::uniform(w, h, &[0.0, 0.0]);
    for i in 0..w * h {
        let v = [rng.gen::<f64>(), rng.gen::<f64>()];
        params.cell_mut(i).copy_from_slice(&v);
    }
    let disp = vec![Displacement {
        x: (0..w * h).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        y: (0..w * h).map(|_| rng.gen_range(-1.5..1.5)).collect(),
    }];
    let avg = mix_average(&params, &mass, &disp, s).unwrap();
    let mut sources: Vec<Vec<[f64; 2]>> = vec![Vec::new(); w * h];
    let mut incoming = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (cx, cy) = (x as f64 + disp[0].x[i], y as f64 + disp[0].y[i]);
            for ty in (cy - s - 0.5).floor() as isize..=(cy + s + 0.5).ceil() as isize {
                for tx in (cx - s - 0.5).floor() as isize..=(cx + s + 0.5).ceil() as isize {
                    let o = overlap_1d(cx, s, tx as f64) * overlap_1d(cy, s, ty as f64);
                    if o > 0.0 {
                        let t = ty.rem_euclid(h as isize) as usize * w + tx.rem_euclid(w as isize) as usize;
                        sources[t].push([params.cell(i)[0], params.cell(i)[1]]);
                        incoming[t] += o * mass.channel(0).values()[i] / (4.0 * s * s);
                    }
                }
            }
        }
    }
    let mut checked = 0;
    let mut contained = 0;
    for t in 0..w * h {
        if incoming[t] >= EPS_MASS {
            checked += 1;
            if in_hull([avg.cell(t)[0], avg.cell(t)[1]], &sources[t], 1e-12) {
                contained += 1;
            }
        }
    }
    outcome(
        deterministic && (freq - 0.5).abs() <= 0.02 && checked >= 1000 && contained == checked,
        format!(
            "single-source softmax deterministic over 100 seeds: {deterministic}; equal-source frequency {freq:.4} (0.5 +- 0.02, 1e4 trials); \
             average mixing inside hull {contained}/{checked} cells"
        ),
    )
}

fn rich_config() -> SimConfig {
    SimConfig {
        width: 64,
        height: 64,
        channels: 2,
        adjacency: vec![vec![2, 1, 0], vec![1, 2, 0], vec![1, 0, 0]],
        rules: RuleSource::Sampled {
            seed: 8,
            ranges: SamplerRanges {
                radius: (4, 12),
                ..Default::default()
            },
        },
        seed: 33,
        patch_side: 20,
        embedding: Some(EmbeddingConfig {
            mutation_every: 50,
            ..Default::default()
        }),
        ecology: Some(EcologyConfig {
            rho_decay: 0.0005,
            rho_digest: 0.01,
            food: 0.2,
            walls: Some(Default::default()),
            sensed: vec![Layer::Walls],
            ..Default::default()
        }),
        ..Default::default()
    }
}

fn replay<T: Scalar>() -> (bool, bool) {
    let mut a = World::<T>::new(rich_config()).unwrap();
    let mut b = World::<T>::new(rich_config()).unwrap();
    let mut identical = true;
    let mut saved = None;
    for t in 0..300 {
        a.step().unwrap();
        b.step().unwrap();
        identical &= a.state() == b.state() && a.params() == b.params() && a.ecology() == b.ecology();
        if t == 149 {
            saved = Some(a.checkpoint().to_json());
        }
    }
    let cp = Checkpoint::from_json(&saved.unwrap()).unwrap();
    let mut resumed = World::<T>::from_checkpoint(&cp).unwrap();
    for _ in 0..150 {
        resumed.step().unwrap();
    }
    (identical, resumed.checkpoint() == a.checkpoint())
}

fn determinism() -> Outcome {
    let (same64, resume64) = replay::<f64>();
    let (same32, resume32) = replay::<f32>();
    outcome(
        same64 && resume64 && same32 && resume32,
        format!(
            "bitwise replay f64 {same64}, f32 {same32}; checkpoint at 150 then 150 more steps == uninterrupted 300: f64 {resume64}, f32 {resume32} \
             (embedding, mutations, food and walls enabled)"
        ),
    )
}

fn performance() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let per_step = pool.install(|| {
        let mut rng = sample_rng(404, 0);
        let rules = sample_ruleset(&mut rng, 1, &[vec![10]], &SamplerRanges::default()).unwrap();
        let mut a = init_patch::<f32, _>(&mut rng, 128, 128, 40, 1).unwrap();
        let stepper = Stepper::<f32>::new(&rules, 128, 128, Mode::Flow, FlowParams::default()).unwrap();
        for _ in 0..10 {
            a = stepper.step(&a, &[]).unwrap().0;
        }
        let mut times: Vec<f64> = (0..100)
            .map(|_| {
                let t = Instant::now();
                a = stepper.step(&a, &[]).unwrap().0;
                t.elapsed().as_secs_f64() * 1e3
            })
            .collect();
        times.sort_by(f64::total_cmp);
        times[50]
    });
    outcome(
        per_step <= 50.0,
        format!("median {per_step:.2} ms/step (<= 50), 128x128, C=1, 10 kernels, f32, 1 thread"),
    )
}
