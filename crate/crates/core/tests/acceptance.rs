//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` still print FAIL when they fail but do not
//! fail the process; every other FAIL does. See the README for why each
//! known-red criterion is out of reach.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use evfl_core::aggregation::{gate_weights, GateParams};
use evfl_core::data::{mid, wcs, RareClass, RareMode};
use evfl_core::experiment::{
    per_class_recall, run_experiment, run_seed, validate_config, ExperimentConfig, InferenceMode, Method, Report,
};
use evfl_core::federation::{
    decode_message, encode_message, frame_len_for, inject_noise, NoiseConfig, NoiseTarget, Phase, RoundMessage,
    TransportKind,
};
use evfl_core::numerics::entropy;
use evfl_core::priors::{average_global_prior, estimate_local_prior, iterate_local_prior, mix_prior};
use evfl_core::prototypes::{loss_f_to_mu, plan_to_prototypes, plan_to_samples, BatchWeighting};
use evfl_core::{CostMode, Kernel, Matrix, PriorVector, PrototypeSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STANDARD: &str = include_str!("../../../configs/standard.json");
const KNOWN_RED: &[u32] = &[7];

const GRADIENT_TOL: f64 = 1e-4;
const GRADIENT_INSTANCES: u64 = 100;
const GRADIENT_SECONDS: f64 = 30.0;
const SIMPLEX_TOL: f64 = 1e-9;
const SIMPLEX_CASES: u64 = 1000;
const ENTROPY_TOL: f64 = 1e-9;
const ENTROPY_CASES: u64 = 100;
const EM_TRUTH: [f64; 3] = [0.7, 0.2, 0.1];
const EM_SAMPLES: usize = 3000;
const EM_MAX_ITERS: usize = 20;
const EM_TV: f64 = 0.05;
const EM_SECONDS: f64 = 10.0;
const END_TO_END_SECONDS: f64 = 300.0;
const UNSEEN_RECALL: f64 = 0.2;
const CODEC_CASES: u64 = 10_000;
const KAPPAS: [f64; 3] = [0.0, 0.05, 0.2];
const LOSS_TREND: f64 = 0.8;

struct Line {
    pass: bool,
    detail: String,
}

fn line(pass: bool, detail: impl Into<String>) -> Line {
    Line {
        pass,
        detail: detail.into(),
    }
}

fn standard() -> ExperimentConfig {
    validate_config(STANDARD).expect("standard config is valid")
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    common::gaussian(rng, rows, cols)
}

fn simplex_gap(row: &[f64]) -> f64 {
    if row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return f64::INFINITY;
    }
    (row.iter().sum::<f64>() - 1.0).abs()
}

fn worst_row_gap(m: &Matrix) -> f64 {
    m.iter_rows().map(simplex_gap).fold(0.0, f64::max)
}

fn gradient_oracle() -> Line {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut bad = 0;
    for seed in 0..GRADIENT_INSTANCES {
        for e in [common::local_loss_error(seed), common::transport_error(seed), common::head_error(seed)] {
            worst = worst.max(e);
            bad += usize::from(e > GRADIENT_TOL);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    line(
        bad == 0 && secs < GRADIENT_SECONDS,
        format!(
            "worst relative error {worst:.2e} over {} instances ({bad} above {GRADIENT_TOL:e}), {secs:.1} s",
            3 * GRADIENT_INSTANCES
        ),
    )
}

/// Reps, prototypes and prior sharing `d` and `Z`, with no zero rows.
fn transport_case(rng: &mut ChaCha8Rng) -> (Matrix, PrototypeSet, PriorVector, Kernel) {
    let (b, z, d) = (rng.random_range(1..=16), rng.random_range(2..=6), rng.random_range(2..=8));
    let reps = gaussian(rng, b, d);
    let protos = PrototypeSet::new(1, gaussian(rng, z, d)).unwrap();
    let prior = common::random_prior(rng, z);
    (reps, protos, prior, Kernel::new(rng.random_range(0.5..20.0)))
}

fn simplex_suite() -> Line {
    let (mut plans, mut priors, mut gates): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for seed in 0..SIMPLEX_CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (reps, protos, prior, kernel) = transport_case(&mut rng);
        let weighting = if seed % 2 == 0 { BatchWeighting::Uniform } else { BatchWeighting::PseudoClassPrior };
        plans = plans
            .max(worst_row_gap(plan_to_prototypes(&protos, &prior, &reps, kernel).unwrap().matrix()))
            .max(worst_row_gap(plan_to_samples(&protos, &prior, &reps, kernel, weighting).unwrap().matrix()));

        let est = estimate_local_prior(&reps, &protos, &prior, kernel).unwrap();
        let others: Vec<PriorVector> = (0..rng.random_range(1..5)).map(|_| common::random_prior(&mut rng, prior.len())).collect();
        let global = average_global_prior(&[vec![est.clone()], others].concat()).unwrap();
        let mixed = mix_prior(&est, &global, rng.random_range(0.0..=1.0)).unwrap();
        priors = [est, global, mixed].iter().map(|p| simplex_gap(p.probs())).fold(priors, f64::max);

        let (n, m, d) = (rng.random_range(1..=16), rng.random_range(1..=4), rng.random_range(1..=6));
        let concat = gaussian(&mut rng, n, m * d);
        let mut gate = GateParams::zeros(m, d);
        gate.weight = gaussian(&mut rng, m * d, m);
        gates = gates.max(worst_row_gap(&gate_weights(&concat, &gate).unwrap()));
    }
    let worst = plans.max(priors).max(gates);
    line(
        worst <= SIMPLEX_TOL,
        format!("{SIMPLEX_CASES} cases each; worst |sum − 1|: plans {plans:.1e}, priors {priors:.1e}, gates {gates:.1e}"),
    )
}

fn entropy_equivalence() -> Line {
    let mut worst: f64 = 0.0;
    for seed in 0..ENTROPY_CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(50_000 + seed);
        let (reps, protos, _, kernel) = transport_case(&mut rng);
        let uniform = PriorVector::uniform(protos.num_classes());
        let out = loss_f_to_mu(&protos, &uniform, &reps, kernel, CostMode::NegLogProb).unwrap();
        let rows = out.plan.matrix();
        let mean_entropy = rows.iter_rows().map(entropy).sum::<f64>() / rows.rows() as f64;
        worst = worst.max((out.value - mean_entropy).abs());
    }
    line(
        worst <= ENTROPY_TOL,
        format!("{ENTROPY_CASES} instances, worst |loss − mean entropy| {worst:.1e}"),
    )
}

/// Three orthogonal unit class means in 8 dimensions with isotropic noise.
fn em_recovery() -> Line {
    let start = Instant::now();
    let d = 8;
    let mut summary = Vec::new();
    let mut ok = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(EM_SAMPLES);
        for n in 0..EM_SAMPLES {
            let u = (n as f64 + 0.5) / EM_SAMPLES as f64;
            let class = if u < EM_TRUTH[0] { 0 } else if u < EM_TRUTH[0] + EM_TRUTH[1] { 1 } else { 2 };
            let noise = gaussian(&mut rng, 1, d);
            let row: Vec<f64> = (0..d)
                .map(|j| f64::from(u8::from(j == class)) + 0.2 * noise.get(0, j))
                .collect();
            rows.push(row);
        }
        let reps = Matrix::from_rows(&rows).unwrap();
        let means: Vec<Vec<f64>> = (0..3)
            .map(|c| (0..d).map(|j| f64::from(u8::from(j == c))).collect())
            .collect();
        let protos = PrototypeSet::new(1, Matrix::from_rows(&means).unwrap()).unwrap();
        let (est, iters) =
            iterate_local_prior(&reps, &protos, &PriorVector::uniform(3), Kernel::default(), EM_MAX_ITERS, 1e-6).unwrap();
        let tv = est.total_variation(&EM_TRUTH);
        ok += usize::from(tv <= EM_TV && iters <= EM_MAX_ITERS);
        summary.push(format!("TV {tv:.4} in {iters}"));
    }
    let secs = start.elapsed().as_secs_f64();
    line(
        ok == 5 && secs < EM_SECONDS,
        format!("{ok}/5 seeds within {EM_TV}: [{}], {secs:.2} s", summary.join(", ")),
    )
}

fn imbalance_metrics() -> Line {
    let balanced = mid(&[7, 7, 7, 7]).unwrap();
    let single = mid(&[0, 12, 0]).unwrap();
    let proportional = wcs(&[30, 60, 90], &[vec![10, 20, 30], vec![20, 40, 60]]).unwrap();
    let disjoint = wcs(&[10, 10], &[vec![10, 0], vec![0, 10]]).unwrap();
    let pass = balanced == 0.0
        && (single - 1.0).abs() <= 1e-12
        && (proportional - 1.0).abs() <= 1e-9
        && (disjoint - std::f64::consts::FRAC_1_SQRT_2).abs() <= 1e-9;
    line(
        pass,
        format!("MID balanced {balanced}, single class {single}, WCS proportional {proportional}, disjoint {disjoint}"),
    )
}

fn report_for(method: Method, attack: bool) -> Report {
    let mut cfg = standard();
    cfg.method = method;
    cfg.attack = attack;
    run_experiment(&cfg, TransportKind::Inproc).expect("standard scenario runs")
}

fn directional(proto: &Report, vanilla: &Report, upper: &Report, secs: f64) -> Line {
    let (p, v, u) = (proto.mean_accuracy, vanilla.mean_accuracy, upper.mean_accuracy);
    line(
        p > v && u >= p && u >= v && secs < END_TO_END_SECONDS,
        format!("5-seed means: proto_evfl {p:.4}, vanilla_vfl {v:.4}, upper_boundary {u:.4}; {secs:.1} s"),
    )
}

fn zero_shot() -> Line {
    let mut cfg = standard();
    cfg.imbalance.rare_classes = vec![RareClass {
        class: 3,
        mode: RareMode::ZeroShot,
    }];
    cfg.inference = InferenceMode::PrototypeNn;
    let (mut softmax_recalls, mut nn_recalls) = (Vec::new(), Vec::new());
    for &seed in &cfg.seeds {
        let run = run_seed(&cfg, seed, TransportKind::Inproc).expect("zero-shot scenario runs");
        let state = run.state.as_ref().expect("federated state");
        let test = &run.scenario.test;
        let known = run.scenario.aligned_classes();
        let softmax = state.predict_softmax(&test.blocks, Some(&known)).unwrap();
        let z = run.scenario.num_classes;
        softmax_recalls.push(per_class_recall(&softmax, &test.labels, z)[3].unwrap_or(0.0));
        nn_recalls.push(run.result.unseen_recall.unwrap_or(0.0));
    }
    let nn_mean = nn_recalls.iter().sum::<f64>() / nn_recalls.len() as f64;
    let softmax_zero = softmax_recalls.iter().all(|&r| r == 0.0);
    line(
        softmax_zero && nn_mean > UNSEEN_RECALL,
        format!(
            "softmax unseen recall {softmax_recalls:?} (must be 0); prototype_nn unseen recall mean {nn_mean:.4} (needs > {UNSEEN_RECALL})"
        ),
    )
}

fn random_message(rng: &mut ChaCha8Rng) -> RoundMessage {
    let (r, c) = (rng.random_range(0..6), rng.random_range(0..6));
    let values = Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1e3..1e3)).collect()).unwrap();
    let vector: Vec<f64> = (0..rng.random_range(0..8)).map(|_| rng.random()).collect();
    if rng.random::<bool>() {
        RoundMessage::ProtoDown {
            round: rng.random(),
            prototypes: values,
            global_prior: vector,
        }
    } else {
        RoundMessage::ReprUp {
            round: rng.random(),
            party_id: rng.random(),
            aligned_reps: values,
            local_prior: vector,
        }
    }
}

fn protocol(proto: &Report) -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut roundtrip, mut truncated, mut corrupt) = (0, 0, 0);
    for _ in 0..CODEC_CASES {
        let msg = random_message(&mut rng);
        let bytes = encode_message(&msg).unwrap();
        let back = decode_message(&bytes).ok();
        if back.is_some_and(|(m, used)| used == bytes.len() && encode_message(&m).unwrap() == bytes) {
            roundtrip += 1;
        }
        let cut = rng.random_range(0..bytes.len());
        truncated += usize::from(decode_message(&bytes[..cut]).is_err());
        let mut flipped = bytes.clone();
        for _ in 0..rng.random_range(1..6) {
            let i = rng.random_range(0..flipped.len());
            flipped[i] ^= rng.random_range(1..=255u8);
        }
        let survived = catch_unwind(AssertUnwindSafe(|| match decode_message(&flipped) {
            Ok((m, used)) => used == m.frame_len(),
            Err(_) => true,
        }));
        corrupt += usize::from(matches!(survived, Ok(true)));
    }

    let cfg = standard();
    let run = run_seed(&cfg, 0, TransportKind::Inproc).expect("inproc run");
    let socket = run_seed(&cfg, 0, TransportKind::Socket).expect("socket run");
    let same_digest = run.result.state_digest == socket.result.state_digest
        && run.result.state_digest == proto.per_seed[0].state_digest;

    let state = run.state.as_ref().unwrap();
    let (z, d, m) = (run.scenario.num_classes, cfg.hyper.latent_dim, run.scenario.parties.len());
    let n_a = run.scenario.aligned_labels().len();
    let per_round = m * (frame_len_for(z * d + z) + frame_len_for(n_a * d + z));
    let bytes_match = (0..cfg.hyper.rounds as u32).all(|t| {
        let logged: usize = state
            .comm_log
            .records()
            .iter()
            .filter(|r| r.phase == Phase::Round && r.round == t)
            .map(|r| r.bytes)
            .sum();
        logged == per_round
    });
    let n = CODEC_CASES as usize;
    line(
        roundtrip == n && truncated == n && corrupt == n && same_digest && bytes_match,
        format!(
            "round trips {roundtrip}/{n}, truncations rejected {truncated}/{n}, corruptions handled {corrupt}/{n}, \
             {per_round} B/round closed form {}, inproc and socket digests {}",
            if bytes_match { "matches" } else { "differs" },
            if same_digest { "equal" } else { "differ" }
        ),
    )
}

fn privacy(attack_free: &Report) -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = gaussian(&mut rng, 32, 8);
    let zero = NoiseConfig {
        kappa: 0.0,
        target: NoiseTarget::Prototypes,
        seed: 3,
    };
    let identity = inject_noise(&m, &zero).data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits());

    let mut means = Vec::new();
    let mut digests_equal = true;
    for kappa in KAPPAS {
        let mut cfg = standard();
        cfg.attack = true;
        cfg.noise = NoiseConfig {
            kappa,
            target: NoiseTarget::Prototypes,
            seed: 0,
        };
        let report = run_experiment(&cfg, TransportKind::Inproc).expect("noisy run");
        if kappa == 0.0 {
            digests_equal = report
                .per_seed
                .iter()
                .zip(&attack_free.per_seed)
                .all(|(a, b)| a.state_digest == b.state_digest);
        }
        means.push(report.mean_attack_accuracy.unwrap_or(f64::NAN));
    }
    let nonincreasing = means.windows(2).all(|w| w[1] <= w[0]);
    line(
        identity && digests_equal && nonincreasing,
        format!(
            "κ=0 bitwise identity {identity}, κ=0 run digests equal noise-free {digests_equal}; \
             mean attack accuracy over κ {KAPPAS:?}: {}",
            means.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>().join(" ≥ ")
        ),
    )
}

fn loss_trend(proto: &Report) -> Line {
    let fractions: Vec<f64> = proto
        .per_seed
        .iter()
        .map(|s| {
            let steps = s.loss_curve.len().saturating_sub(1).max(1);
            let down = s.loss_curve.windows(2).filter(|w| w[1] <= w[0]).count();
            down as f64 / steps as f64
        })
        .collect();
    line(
        fractions.iter().all(|&f| f >= LOSS_TREND),
        format!(
            "nonincreasing fraction per seed {:?} (each needs ≥ {LOSS_TREND})",
            fractions.iter().map(|f| (f * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

fn main() -> ExitCode {
    let mut lines: Vec<(u32, &str, Line)> = Vec::new();
    let mut emit = |id: u32, name: &'static str, l: Line| {
        let verdict = if l.pass { "PASS" } else { "FAIL" };
        let note = if !l.pass && KNOWN_RED.contains(&id) { " [known red]" } else { "" };
        println!("{verdict} {id:>2} {name}{note}: {}", l.detail);
        lines.push((id, name, l));
    };

    emit(1, "gradient oracle", gradient_oracle());
    emit(2, "simplex closure", simplex_suite());
    emit(3, "entropy equivalence", entropy_equivalence());
    emit(4, "EM prior recovery", em_recovery());
    emit(5, "imbalance metrics", imbalance_metrics());

    let start = Instant::now();
    let proto = report_for(Method::ProtoEvfl, false);
    let vanilla = report_for(Method::VanillaVfl, false);
    let upper = report_for(Method::UpperBoundary, false);
    let secs = start.elapsed().as_secs_f64();
    emit(6, "directional end-to-end", directional(&proto, &vanilla, &upper, secs));
    emit(7, "zero-shot structure", zero_shot());
    emit(8, "protocol", protocol(&proto));
    emit(9, "privacy knobs", privacy(&proto));
    emit(10, "loss trend", loss_trend(&proto));

    let unexpected: Vec<u32> = lines
        .iter()
        .filter(|(id, _, l)| !l.pass && !KNOWN_RED.contains(id))
        .map(|(id, _, _)| *id)
        .collect();
    let passed = lines.iter().filter(|(_, _, l)| l.pass).count();
    println!("{passed}/{} criteria pass", lines.len());
    for (id, name, l) in &lines {
        if l.pass && KNOWN_RED.contains(id) {
            println!("note: criterion {id} ({name}) is listed as known red but passed");
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
