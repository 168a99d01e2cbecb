//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one result line; the process fails if any gated
//! criterion fails.
//!
//! Criterion 10 talks to a real provider and only runs when
//! `FIDELITY_LIVE_CONFIG` (a config.ini with credentials) and
//! `FIDELITY_LIVE_SAMPLE` (a directory of function files) are both set.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use fidelity_core::chunk::{merge_annotations, segment, ChunkResult};
use fidelity_core::corpus::{load_config, parse_config, FunctionFile};
use fidelity_core::evaluation::{fix_counts, metrics, ConfusionCounts};
use fidelity_core::graph::{analyze, build_cdg, compute_post_dominators, variable_dependency_analysis, Cfg, Node};
use fidelity_core::intensity::{compute_k, select_top_k, FeatureWeights, IntensityParams};
use fidelity_core::labels::{AnnotatedFunction, CorrectionResult, DistortionType, LabelSet};
use fidelity_core::llm::{Gateway, HttpProvider, MockProvider};
use fidelity_core::net::network_requests;
use fidelity_core::pipeline::{BatchMode, Pipeline, PipelineOptions};
use fidelity_core::pseudocode::{parse_function, ConstructKind, DecompiledFunction, Lexicon};
use fidelity_core::store::{load_database_path, DistortionRecord, EmbeddingIndex, HashEmbedder, Origin, RemoteEmbedder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1 -------------------------------------------------------------------

fn k_oracle(n: i64) -> i64 {
    // (min_lines, base_lines, max_lines, threshold, step) = (5, 5, 10, 5, 9)
    if n <= 5 {
        n
    } else {
        let floor = (n - 5) / 9;
        std::cmp::min(5 + floor, 10)
    }
}

fn criterion_1() -> Outcome {
    let params = IntensityParams::default();
    check(
        (params.min_lines, params.base_lines, params.max_lines, params.threshold, params.step) == (5, 5, 10, 5, 9),
        || format!("default params are {params:?}"),
    )?;
    let t = Instant::now();
    let mismatches: Vec<usize> = (1..=500usize)
        .filter(|&n| compute_k(n, &params) as i64 != k_oracle(n as i64))
        .collect();
    let elapsed = t.elapsed();
    check(mismatches.is_empty(), || format!("mismatch at {mismatches:?}"))?;
    for (n, k) in [(4, 4), (23, 7), (150, 10)] {
        check(compute_k(n, &params) == k, || format!("k({n}) = {}", compute_k(n, &params)))?;
    }
    check(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("500 values, 0 mismatches, {elapsed:?}"))
}

// 2 -------------------------------------------------------------------

struct Gen {
    rng: ChaCha8Rng,
    lines: Vec<String>,
    budget: usize,
}

impl Gen {
    fn var(&mut self) -> String {
        format!("v{}", self.rng.gen_range(1..=6))
    }

    fn simple(&mut self) -> String {
        let (a, b, c) = (self.var(), self.var(), self.var());
        match self.rng.gen_range(0..5) {
            0 => format!("  {a} = {b} + {c};"),
            1 => format!("  {a} = {};", self.rng.gen_range(0..100)),
            2 => format!("  {a} = sub_401000({b});"),
            3 => format!("  *(_DWORD *)({a} + 4) = {b};"),
            _ => format!("  {a} += {b};"),
        }
    }

    fn block(&mut self, depth: u32) {
        let n = self.rng.gen_range(1..=4);
        for _ in 0..n {
            if self.lines.len() + 6 > self.budget {
                return;
            }
            let roll = if depth >= 2 { 0 } else { self.rng.gen_range(0..6) };
            match roll {
                4 => {
                    let (a, b) = (self.var(), self.var());
                    self.lines.push(format!("  if ( {a} > {b} )"));
                    self.lines.push("  {".into());
                    self.block(depth + 1);
                    if self.rng.gen_bool(0.5) {
                        self.lines.push("  }".into());
                        self.lines.push("  else".into());
                        self.lines.push("  {".into());
                        self.block(depth + 1);
                    }
                    self.lines.push("  }".into());
                }
                5 => {
                    let (a, b) = (self.var(), self.var());
                    if self.rng.gen_bool(0.5) {
                        self.lines.push(format!("  while ( {a} < {b} )"));
                    } else {
                        self.lines.push(format!("  for ( {a} = 0; {a} < {b}; ++{a} )"));
                    }
                    self.lines.push("  {".into());
                    self.block(depth + 1);
                    self.lines.push("  }".into());
                }
                _ => {
                    let s = self.simple();
                    self.lines.push(s);
                }
            }
        }
    }
}

fn random_function(seed: u64) -> String {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        lines: vec!["int __fastcall sub_400000(int a1)".into(), "{".into()],
        budget: 28,
    };
    while g.lines.len() < 6 {
        g.block(0);
    }
    let r = g.var();
    g.lines.push(format!("  return {r};"));
    g.lines.push("}".into());
    g.lines.join("\n")
}

/// Backward closure over reversed PDG edges. Starting from the statements
/// that mention `var`, collect their dependence predecessors; any variable
/// mentioned by a collected statement contributes its own mention sites as
/// further starting points.
fn closure_oracle(function: &DecompiledFunction, pdg: &BTreeSet<(usize, usize)>, var: &str) -> BTreeSet<usize> {
    let mentions = |v: &str| -> Vec<usize> {
        function
            .lines
            .iter()
            .filter(|l| l.facts.mentions.contains(v))
            .map(|l| l.index)
            .collect()
    };
    let mut vars: BTreeSet<String> = BTreeSet::from([var.to_string()]);
    let mut result: BTreeSet<usize> = BTreeSet::new();
    loop {
        let sites: BTreeSet<usize> = vars.iter().flat_map(|v| mentions(v)).collect();
        let next: BTreeSet<usize> = pdg
            .iter()
            .filter(|(_, to)| sites.contains(to) || result.contains(to))
            .map(|(from, _)| *from)
            .collect();
        let grown: BTreeSet<usize> = result.union(&next).copied().collect();
        let mut new_vars = vars.clone();
        for s in &grown {
            new_vars.extend(function.lines[s - 1].facts.mentions.iter().cloned());
        }
        if grown == result && new_vars == vars {
            return result;
        }
        result = grown;
        vars = new_vars;
    }
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut checked = 0;
    let mut nonempty = 0;
    let mut shapes = BTreeSet::new();
    for seed in 0..200u64 {
        let text = random_function(seed);
        let function = parse_function(&text).map_err(|e| format!("seed {seed}: {e}"))?;
        check(function.len() <= 30, || format!("seed {seed}: {} lines", function.len()))?;
        if text.contains("if (") {
            shapes.insert("if");
        }
        if text.contains("while (") || text.contains("for (") {
            shapes.insert("loop");
        }
        let map = variable_dependency_analysis(&function);
        let pdg = analyze(&function).graph.pdg_edges;
        for var in &function.variables {
            let want = closure_oracle(&function, &pdg, var);
            let got = map.indices(var);
            check(got == want, || {
                format!("seed {seed}, variable {var}: got {got:?}, oracle {want:?}\n{text}")
            })?;
            checked += 1;
            nonempty += usize::from(!want.is_empty());
        }
    }
    let elapsed = t.elapsed();
    check(shapes.len() == 2, || format!("generator only produced {shapes:?}"))?;
    check(nonempty * 2 > checked, || format!("only {nonempty} of {checked} traces are non-empty"))?;
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("200 functions, {checked} variables agree ({nonempty} non-empty), {elapsed:?}"))
}

// 3 -------------------------------------------------------------------

fn cdg_of(len: usize, edges: &[(usize, usize)], first: usize, last: &[usize]) -> BTreeSet<(usize, usize)> {
    let mut all = vec![(Node::Entry, Node::Stmt(first))];
    all.extend(edges.iter().map(|&(a, b)| (Node::Stmt(a), Node::Stmt(b))));
    all.extend(last.iter().map(|&l| (Node::Stmt(l), Node::Exit)));
    let cfg = Cfg::from_edges(len, all);
    build_cdg(&cfg, &compute_post_dominators(&cfg))
}

fn criterion_3() -> Outcome {
    // straight line 1 -> 2 -> 3: nothing branches
    let straight = cdg_of(3, &[(1, 2), (2, 3)], 1, &[3]);
    check(straight.is_empty(), || format!("straight-line: {straight:?}"))?;
    // diamond 1 -> {2, 3} -> 4: both arms depend on the branch, the join does not
    let diamond = cdg_of(4, &[(1, 2), (1, 3), (2, 4), (3, 4)], 1, &[4]);
    let want = BTreeSet::from([(1, 2), (1, 3)]);
    check(diamond == want, || format!("diamond: {diamond:?}"))?;
    // 1 -> 2 (loop head) -> 3 -> 2, 2 -> 4: head controls body and itself
    let looped = cdg_of(4, &[(1, 2), (2, 3), (3, 2), (2, 4)], 1, &[4]);
    let want = BTreeSet::from([(2, 2), (2, 3)]);
    check(looped == want, || format!("loop: {looped:?}"))?;
    Ok("straight-line, diamond and loop match".into())
}

// 4 -------------------------------------------------------------------

fn criterion_4() -> Outcome {
    for n in 1..=300usize {
        let text: Vec<String> = (1..=n).map(|i| format!("v{i} = {i};")).collect();
        let function = parse_function(&text.join("\n")).map_err(|e| e.to_string())?;
        let chunks = segment(&function, 50, 5).map_err(|e| e.to_string())?;
        if n > 50 {
            let want = (n - 5).div_ceil(45);
            check(chunks.len() == want, || format!("n={n}: {} chunks, expected {want}", chunks.len()))?;
        } else {
            check(chunks.len() == 1, || format!("n={n}: {} chunks", chunks.len()))?;
        }
        let results: Vec<ChunkResult<usize>> = chunks
            .iter()
            .map(|c| ChunkResult {
                start_line: c.start_line,
                end_line: c.end_line,
                lines: c.lines.iter().map(|l| (l.index, l.index)).collect(),
            })
            .collect();
        let merged = merge_annotations(n, &results).map_err(|e| e.to_string())?;
        let keys: Vec<usize> = merged.lines.keys().copied().collect();
        check(keys == (1..=n).collect::<Vec<_>>(), || format!("n={n}: merged keys {keys:?}"))?;
        check(merged.lines.iter().all(|(k, v)| k == v), || format!("n={n}: values moved"))?;
        check(merged.conflicts.is_empty(), || format!("n={n}: conflicts"))?;
    }
    Ok("lengths 1..=300 round-trip; chunk counts match".into())
}

// 5 -------------------------------------------------------------------

const WORDS: &[&str] = &[
    "v1", "v2", "v3", "v4", "a1", "a2", "result", "sub_401000", "_DWORD", "_QWORD", "+", "=", "*", "(", ")", "return",
    "if", "while", "goto", "LABEL_3", "0x28u", "__readfsqword", "4", "8", "16", "->", "dword_405010",
];

fn synthetic_records(n: usize, rng: &mut ChaCha8Rng) -> Vec<DistortionRecord> {
    (0..n)
        .map(|id| {
            let len = rng.gen_range(1..8);
            let code: Vec<&str> = (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
            DistortionRecord {
                id,
                code_line: format!("{};", code.join(" ")),
                label: DistortionType::ALL[id % 6],
                origin: Origin::Ida,
            }
        })
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn criterion_5() -> Outcome {
    const TIE: f64 = 1e-12;
    let embedder = HashEmbedder::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut compared = 0;
    for size in [10usize, 37, 100, 250, 500] {
        let records = synthetic_records(size, &mut rng);
        let index: EmbeddingIndex<f64> =
            EmbeddingIndex::build(records.clone(), Arc::new(embedder)).map_err(|e| e.to_string())?;
        let raw: Vec<Vec<f64>> = records.iter().map(|r| embedder.vector(&r.code_line)).collect();
        let mut queries: Vec<String> = records.iter().take(5).map(|r| r.code_line.clone()).collect();
        queries.extend(synthetic_records(5, &mut rng).into_iter().map(|r| r.code_line));
        for (qi, q) in queries.iter().enumerate() {
            let qv: Vec<f64> = embedder.vector(q);
            let mut oracle: Vec<(usize, f64)> = raw.iter().enumerate().map(|(i, v)| (i, cosine(&qv, v))).collect();
            oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            for k in [1, 3, size] {
                let hits = index.retrieve(q, k).map_err(|e| e.to_string())?;
                check(hits.len() == k, || format!("size {size}, k {k}: {} hits", hits.len()))?;
                for (pos, hit) in hits.iter().enumerate() {
                    let (oid, osim) = oracle[pos];
                    check((hit.similarity - osim).abs() < TIE, || {
                        format!("size {size}, k {k}, rank {pos}: similarity {} vs {osim}", hit.similarity)
                    })?;
                    // equal scores may legitimately swap only if the oracle scores them as a tie
                    let tied = (raw_sim(&oracle, hit.record.id) - osim).abs() < TIE;
                    check(hit.record.id == oid || tied, || {
                        format!("size {size}, k {k}, rank {pos}: id {} vs {oid}", hit.record.id)
                    })?;
                }
                compared += 1;
            }
            if qi < 5 {
                let top = &index.retrieve(q, 1).map_err(|e| e.to_string())?[0];
                check(top.similarity >= 0.999, || format!("self-similarity {}", top.similarity))?;
            }
        }
    }
    Ok(format!("{compared} rankings match the brute-force oracle"))
}

fn raw_sim(oracle: &[(usize, f64)], id: usize) -> f64 {
    oracle.iter().find(|(i, _)| *i == id).map_or(f64::NAN, |(_, s)| *s)
}

// 6 -------------------------------------------------------------------

const SELECTION_FIXTURE: [&str; 20] = [
    "v1 = v2;",
    "",
    "v3 = v4;",
    "puts(v1);",
    "{",
    "v5 = v6;",
    "return v1;",
    "}",
    "v7 = v8;",
    "while ( v7 )",
    "// note",
    "v9 = v10;",
    "printf(v3);",
    "",
    "v11 = v12;",
    "return v3;",
    "{",
    "do",
    "}",
    ";",
];

fn criterion_6() -> Outcome {
    use ConstructKind::*;
    let weights = FeatureWeights::from_pairs(&[(Assignment, 0.4), (FunctionCall, 0.3), (Return, 0.2), (Loop, 0.1)])
        .ok_or("bad weights")?;
    let function = parse_function(&SELECTION_FIXTURE.join("\n")).map_err(|e| e.to_string())?;
    let weighted = |l: usize| -> Vec<ConstructKind> {
        function.lines[l - 1]
            .constructs
            .iter()
            .copied()
            .filter(|k| weights.get(*k) > 0.0)
            .collect()
    };
    // fixture sanity: 12 candidates, each carrying exactly one weighted kind
    let candidates: Vec<usize> = (1..=20).filter(|&l| !weighted(l).is_empty()).collect();
    check(candidates.len() == 12, || format!("{} candidates: {candidates:?}", candidates.len()))?;
    check(candidates.iter().all(|&l| weighted(l).len() == 1), || "a candidate has several kinds".into())?;
    let kinds: BTreeSet<ConstructKind> = candidates.iter().map(|&l| weighted(l)[0]).collect();
    check(kinds.len() == 4, || format!("kinds {kinds:?}"))?;

    let params = IntensityParams::default();
    let first = select_top_k(&function, &weights, &params);
    let runs: Vec<String> = (0..5).map(|_| format!("{:?}", select_top_k(&function, &weights, &params))).collect();
    check(runs.iter().all(|r| *r == format!("{first:?}")), || "selection changed between runs".into())?;
    let picked: Vec<usize> = first.iter().map(|s| s.line.index).collect();
    // one line per kind in weight order, then the best remaining assignments
    let want = vec![1, 4, 7, 10, 3, 6];
    check(picked == want, || format!("picked {picked:?}, expected {want:?}"))?;
    let covered: BTreeSet<ConstructKind> = picked[..4].iter().map(|&l| weighted(l)[0]).collect();
    check(covered.len() == 4, || format!("first four cover {covered:?}"))?;
    Ok(format!("deterministic over 5 runs; picks {picked:?}"))
}

// 7 -------------------------------------------------------------------

fn oracle_pipeline(jobs: usize) -> Result<Pipeline<f64>, String> {
    let records = load_database_path(fixtures().join("fidelity_new.c")).map_err(|e| e.to_string())?;
    let index = EmbeddingIndex::build(records, Arc::new(HashEmbedder::default())).map_err(|e| e.to_string())?;
    let gateway = Gateway::new(Arc::new(MockProvider::oracle()), 4).with_backoff(Duration::ZERO);
    let options = PipelineOptions {
        jobs,
        ..PipelineOptions::default()
    };
    Ok(Pipeline::new(options, Arc::new(gateway), Some(index), Lexicon::default()))
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let net_before = network_requests();
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pipeline = oracle_pipeline(4)?;
    let report = pipeline
        .run_batch(&fixtures().join("corpus"), out.path(), BatchMode::Detect)
        .map_err(|e| e.to_string())?;
    check(report.functions == 12 && report.failed == 0, || {
        format!("{} functions, {} failed", report.functions, report.failed)
    })?;
    let mut total = ConfusionCounts::default();
    for name in ["ida_functions.txt", "ghidra_functions.txt", "long_function.txt"] {
        let model = std::fs::read_to_string(out.path().join(name)).map_err(|e| e.to_string())?;
        let truth = std::fs::read_to_string(fixtures().join("truth").join(name)).map_err(|e| e.to_string())?;
        let r = fidelity_core::evaluation::evaluate::<f64>(&model, &truth).map_err(|e| format!("{name}: {e}"))?;
        total = total + r.counts;
    }
    let (acc, pr) = metrics::<f64>(total).map_err(|e| e.to_string())?;
    check(acc == 1.0 && pr == Some(1.0), || format!("Acc {acc}, Pr {pr:?} from {total:?}"))?;

    let long = FunctionFile::read(fixtures().join("corpus/long_function.txt")).map_err(|e| e.to_string())?;
    let function = parse_function(&long.functions[0]).map_err(|e| e.to_string())?;
    check(function.len() == 120, || format!("long fixture has {} lines", function.len()))?;
    let detection = oracle_pipeline(1)?.detect(&function).map_err(|e| e.to_string())?;
    check(detection.detection_calls == 3, || format!("{} detection calls", detection.detection_calls))?;

    let net = network_requests() - net_before;
    check(net == 0, || format!("{net} network requests"))?;
    let elapsed = t.elapsed();
    check(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "12 functions, {} lines, Acc 1.0, Pr 1.0, long function 3 detection calls, 0 requests, {elapsed:?}",
        total.total()
    ))
}

// 8 -------------------------------------------------------------------

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..1000 {
        let (tp, tn, fp, fn_) = (
            rng.gen_range(0..10_000u64),
            rng.gen_range(0..10_000u64),
            rng.gen_range(0..10_000u64),
            rng.gen_range(0..10_000u64),
        );
        if tp + tn + fp + fn_ == 0 {
            continue;
        }
        let want_acc = (tp + tn) as f64 / (tp + tn + fp + fn_) as f64;
        let want_pr = if tp + fp == 0 { None } else { Some(tp as f64 / (tp + fp) as f64) };
        let (acc, pr) = metrics::<f64>(ConfusionCounts::new(tp, tn, fp, fn_)).map_err(|e| e.to_string())?;
        check((acc - want_acc).abs() <= 1e-12, || format!("tuple {i}: Acc {acc} vs {want_acc}"))?;
        let pr_ok = match (pr, want_pr) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
            (None, None) => true,
            _ => false,
        };
        check(pr_ok, || format!("tuple {i}: Pr {pr:?} vs {want_pr:?}"))?;
    }

    let text: Vec<String> = (1..=12).map(|i| format!("v{i} = {i};")).collect();
    let mut det = AnnotatedFunction::new(parse_function(&text.join("\n")).map_err(|e| e.to_string())?);
    for line in 1..=10 {
        let t = if line <= 2 { DistortionType::I4 } else { DistortionType::I1 };
        det.set(line, LabelSet::from([t]));
    }
    let corr = CorrectionResult {
        corrected_lines: text[2..].to_vec(),
        fixed_indices: (1..=6).collect(),
        removed_input_indices: BTreeSet::from([1, 2]),
        i4_retained: Vec::new(),
    };
    let counts = fix_counts(&det, &corr).map_err(|e| e.to_string())?;
    let fr = counts.fix_rate::<f64>().map_err(|e| e.to_string())?;
    check(
        (counts.flagged_lines, counts.flagged_i4, counts.fixed_marked) == (10, 2, 6),
        || format!("{counts:?}"),
    )?;
    check(fr == 0.75, || format!("FR {fr}"))?;
    Ok("1000 tuples within 1e-12; FR 6/8 = 0.75".into())
}

// 9 -------------------------------------------------------------------

fn criterion_9() -> Outcome {
    let path = fixtures().join("config.ini");
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let cfg = parse_config(&text).map_err(|e| e.to_string())?;
    check(cfg.model_id == "gpt-4o", || format!("model {}", cfg.model_id))?;
    check(cfg.temperature == 0.0, || format!("temperature {}", cfg.temperature))?;
    load_config(&path).map_err(|e| e.to_string())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = 0;
    for sub in ["corpus", "truth"] {
        for entry in std::fs::read_dir(fixtures().join(sub)).map_err(|e| e.to_string())? {
            let src = entry.map_err(|e| e.to_string())?.path();
            let original = std::fs::read(&src).map_err(|e| e.to_string())?;
            let mut file = FunctionFile::read(&src).map_err(|e| e.to_string())?;
            file.path = dir.path().join(format!("{sub}_{}", src.file_name().unwrap().to_string_lossy()));
            file.write().map_err(|e| e.to_string())?;
            let copy = std::fs::read(&file.path).map_err(|e| e.to_string())?;
            check(copy == original, || format!("{} changed on rewrite", src.display()))?;
            files += 1;
        }
    }
    Ok(format!("config parsed; {files} function files round-trip byte-identically"))
}

// 10 ------------------------------------------------------------------

fn criterion_10() -> Option<Outcome> {
    let config = std::env::var_os("FIDELITY_LIVE_CONFIG")?;
    let sample = std::env::var_os("FIDELITY_LIVE_SAMPLE")?;
    Some(live_smoke(Path::new(&config), Path::new(&sample)))
}

fn live_smoke(config: &Path, sample: &Path) -> Outcome {
    const REFERENCE_PROMPT_TOKENS: f64 = 2982.5;
    let cfg = load_config(config).map_err(|e| e.to_string())?;
    if cfg.api_key_ref.resolve().is_none() {
        return Err("no API key configured".into());
    }
    let timeout = Duration::from_secs(cfg.timeout_secs);
    let embedder = RemoteEmbedder::new(cfg.api_base.clone(), cfg.embedding_model.clone(), cfg.api_key_ref.clone(), timeout);
    let records = load_database_path(&cfg.knowledge_base).map_err(|e| e.to_string())?;
    let index: EmbeddingIndex<f64> = EmbeddingIndex::build(records, Arc::new(embedder)).map_err(|e| e.to_string())?;
    let provider = HttpProvider::new(cfg.api_base.clone(), cfg.api_key_ref.clone(), timeout);
    let gateway = Gateway::new(Arc::new(provider), cfg.concurrency);
    let pipeline = Pipeline::new(PipelineOptions::from(&cfg), Arc::new(gateway), Some(index), Lexicon::default());
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = pipeline.run_batch(sample, out.path(), BatchMode::Detect).map_err(|e| e.to_string())?;
    let parse_rate = report.first_attempt_parse_rate.unwrap_or(0.0);
    let avg = report.average_prompt_tokens.unwrap_or(0.0);
    let summary = format!(
        "{} functions, first-attempt parse rate {parse_rate:.2}, average prompt {avg:.1} tokens",
        report.functions
    );
    let size_ok = (REFERENCE_PROMPT_TOKENS / 2.0..=REFERENCE_PROMPT_TOKENS * 2.0).contains(&avg);
    if parse_rate >= 0.8 && size_ok {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "compute_k sweep", criterion_1),
        (2, "dependency oracle equivalence", criterion_2),
        (3, "post-dominator/CDG fixtures", criterion_3),
        (4, "chunk round-trip", criterion_4),
        (5, "retrieval oracle equivalence", criterion_5),
        (6, "top-k determinism and diversity", criterion_6),
        (7, "end-to-end mock run", criterion_7),
        (8, "metrics arithmetic", criterion_8),
        (9, "format fidelity", criterion_9),
    ];
    let mut failed = BTreeMap::new();
    for (n, name, f) in criteria {
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("criterion {n} PASS {name}: {detail}"),
            Err(detail) => {
                println!("criterion {n} FAIL {name}: {detail}");
                failed.insert(n, detail);
            }
        }
    }
    match criterion_10() {
        None => println!("criterion 10 SKIP live smoke check: set FIDELITY_LIVE_CONFIG and FIDELITY_LIVE_SAMPLE to run"),
        // reported, never gating
        Some(Ok(detail)) => println!("criterion 10 PASS live smoke check: {detail}"),
        Some(Err(detail)) => println!("criterion 10 FAIL live smoke check (not gating): {detail}"),
    }
    if !failed.is_empty() {
        eprintln!("{} criteria failed: {:?}", failed.len(), failed.keys().collect::<Vec<_>>());
        std::process::exit(1);
    }
}
