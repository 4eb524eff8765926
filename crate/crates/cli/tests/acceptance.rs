//! Acceptance suite: one PASS/FAIL line per criterion, each checked against
//! its own oracle and time limit. Runs offline with the mock provider.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Output};
use std::time::{Duration, Instant};

use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regkg_core::corpus::{detect_cross_references, extract_sections, ExtractOptions, SourceFormat};
use regkg_core::dng::{Direction, Dng, EdgeLabel, NodeInfo, Provenance};
use regkg_core::eval::{aggregate, parse_questions, read_questions, score, ScoreRow};
use regkg_core::llm::Gateway;
use regkg_core::refiner::{build_triple_embedding, LocalSchema, MergeKind};
use regkg_core::retrieval::{Engine, RetrievalConfig};
use regkg_core::section_id::{Depth, Level, LevelKind, SectionId};
use regkg_core::store::{Bundle, VectorRow, VectorTable, MANIFEST_FILE};
use regkg_core::vector::cosine_similarity;

type Check = Result<String, String>;
/// Name, time limit in seconds, check.
type Criterion = (&'static str, u64, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
}

fn id(s: &str) -> SectionId {
    SectionId::parse(s).unwrap()
}

fn ids(list: &[&str]) -> BTreeSet<SectionId> {
    list.iter().map(|s| id(s)).collect()
}

// grammar

fn grammar() -> Check {
    let text =
        std::fs::read_to_string(fixture("grammar/quoted_ids.txt")).map_err(|e| e.to_string())?;
    let quoted: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect();
    for raw in &quoted {
        let parsed = SectionId::parse(raw).map_err(|e| format!("{raw}: {e}"))?;
        ensure!(parsed.to_string() == *raw, "{raw} printed as {parsed}");
        ensure!(
            SectionId::parse(&parsed.to_string()).as_ref() == Ok(&parsed),
            "{raw} does not re-parse"
        );
        let json = serde_json::to_string(&parsed).map_err(|e| e.to_string())?;
        let back: SectionId = serde_json::from_str(&json).map_err(|e| format!("{raw}: {e}"))?;
        ensure!(back == parsed, "{raw} changed through JSON");
        let loose = format!("§ {}", raw.to_ascii_uppercase().replace('(', " ("));
        ensure!(
            SectionId::parse(&loose).as_ref() == Ok(&parsed),
            "{loose:?} does not canonicalize to {raw}"
        );
    }
    let chain = id("1926.500(a)(2)(i)").ancestors();
    let want = vec![id("1926.500(a)(2)"), id("1926.500(a)"), id("1926.500")];
    ensure!(
        chain == want,
        "parent chain of 1926.500(a)(2)(i) is {chain:?}"
    );
    for bad in [
        "1926",
        "1926.",
        ".500",
        "1926.500(",
        "1926.500()",
        "1926.500(1)",
        "1926.500(a)(b)",
        "1926.500(a)(2)(i)(a)",
    ] {
        ensure!(SectionId::parse(bad).is_err(), "{bad:?} was accepted");
    }
    Ok(format!("{} quoted ids round-trip", quoted.len()))
}

// vector search

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn exhaustive_top_k(rows: &[Vec<f64>], q: &[f64], k: usize, min_sim: f64) -> Vec<(u64, f64)> {
    let mut scored: Vec<(u64, f64)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let dot: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            let nr = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nq = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            (i as u64, dot / (nr * nq))
        })
        .filter(|&(_, s)| s > min_sim)
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

fn vector_search() -> Check {
    const DIM: usize = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows: Vec<Vec<f64>> = (0..1000).map(|_| unit(&mut rng, DIM)).collect();
    let mut table = VectorTable::new(DIM);
    for (i, v) in rows.iter().enumerate() {
        table
            .push(VectorRow {
                row_id: i as u64,
                label: format!("r{i}"),
                vector: v.clone(),
                payload: BTreeSet::new(),
            })
            .map_err(|e| e.to_string())?;
    }
    let mut hits = 0;
    let mut full = 0;
    for qi in 0..200 {
        // every other query sits near a stored row, so some lists are short
        let q = if qi % 2 == 0 {
            unit(&mut rng, DIM)
        } else {
            let base = &rows[rng.gen_range(0..rows.len())];
            let noise = unit(&mut rng, DIM);
            base.iter().zip(&noise).map(|(b, n)| b + 0.6 * n).collect()
        };
        let got = table.top_k(&q, 5, 0.5).map_err(|e| e.to_string())?;
        let want = exhaustive_top_k(&rows, &q, 5, 0.5);
        ensure!(
            got.hits.len() == want.len(),
            "query {qi}: {} hits, oracle {}",
            got.hits.len(),
            want.len()
        );
        for (h, (wid, wsim)) in got.hits.iter().zip(&want) {
            ensure!(
                h.row_id == *wid,
                "query {qi}: row {} where oracle has {wid}",
                h.row_id
            );
            ensure!(
                (h.similarity - wsim).abs() <= 1e-9,
                "query {qi}: similarity {} vs {wsim}",
                h.similarity
            );
        }
        hits += want.len();
        full += usize::from(want.len() == 5);
    }
    ensure!(
        full > 0 && full < 200,
        "degenerate workload: {full} of 200 queries filled k"
    );
    Ok(format!("200 queries, {hits} hits, {full} full lists"))
}

// refiner

fn refiner() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let dim = rng.gen_range(1..=64);
        let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for i in 0..dim {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        let want = dot / (na.sqrt() * nb.sqrt());
        let got = cosine_similarity(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((got - want).abs());
    }
    ensure!(worst <= 1e-9, "cosine off by {worst:e}");

    let gw = Gateway::mock();
    let section = id("1990.10");
    let lemmas = vec(
        proptest::sample::select(vec![
            "trench",
            "box",
            "trench box",
            "ladder",
            "soil",
            "shore",
            "frame",
            "plank",
            "load",
            "exit",
        ]),
        1..40,
    );
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 1000,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    runner
        .run(&lemmas, |stream| {
            let mut schema = LocalSchema::new(gw.embedding_dim());
            let mut assigned: HashMap<&str, u64> = HashMap::new();
            for lemma in &stream {
                let d = schema
                    .refine_with(lemma, lemma, "Concept", &section, 1.0, |t| {
                        Ok(gw.embed_one(t).unwrap())
                    })
                    .unwrap();
                prop_assert_ne!(d.kind, MergeKind::SimilarityMerge);
                let prev = *assigned.entry(lemma).or_insert(d.element_id);
                prop_assert_eq!(prev, d.element_id);
            }
            let distinct: BTreeSet<&&str> = stream.iter().collect();
            prop_assert_eq!(schema.entities().len(), distinct.len());
            Ok(())
        })
        .map_err(|e| format!("lemma streams: {e}"))?;

    let (h, r, t) = (vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]);
    let e = build_triple_embedding(&h, &r, &t).map_err(|e| e.to_string())?;
    ensure!(
        e == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        "slots out of order: {e:?}"
    );
    ensure!(
        build_triple_embedding(&h, &r, &[1.0]).is_err(),
        "mismatched slot lengths accepted"
    );
    let swapped = build_triple_embedding(&t, &r, &h).map_err(|e| e.to_string())?;
    ensure!(swapped != e, "head and tail are interchangeable");
    Ok(format!(
        "max cosine error {worst:.1e}; 1000 streams, no cross-lemma merge"
    ))
}

// graph closure

struct RandomGraph {
    ids: Vec<SectionId>,
    children: Vec<Vec<usize>>,
    refs: Vec<Vec<usize>>,
    dng: Dng,
}

fn random_graph(rng: &mut ChaCha8Rng) -> RandomGraph {
    let n = rng.gen_range(2..=200);
    let mut ids: Vec<SectionId> = Vec::new();
    let mut children: Vec<Vec<usize>> = Vec::new();
    let mut parent_of: Vec<Option<usize>> = Vec::new();
    let mut bases = 0;
    while ids.len() < n {
        let nested = !ids.is_empty() && rng.gen_bool(0.6);
        let candidate = if nested {
            let p = rng.gen_range(0..ids.len());
            let parent: &SectionId = &ids[p];
            let ordinal = children[p].len() as u32 + 1;
            if parent.depth() >= 3 || ordinal > 20 {
                continue;
            }
            let level =
                Level::from_ordinal(LevelKind::at(parent.depth()).unwrap(), ordinal).unwrap();
            (parent.child(level.token(), Depth::Strict).unwrap(), Some(p))
        } else {
            bases += 1;
            (id(&format!("1990.{bases}")), None)
        };
        let i = ids.len();
        ids.push(candidate.0);
        children.push(Vec::new());
        parent_of.push(candidate.1);
        if let Some(p) = candidate.1 {
            children[p].push(i);
        }
    }
    let mut refs = vec![Vec::new(); n];
    for _ in 0..rng.gen_range(0..=2 * n) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        refs[a].push(b);
    }
    // plant one cycle through a random walk of nodes
    let mut ring: Vec<usize> = (0..n).collect();
    ring.shuffle(rng);
    ring.truncate(rng.gen_range(2..=n.min(8)));
    for w in 0..ring.len() {
        refs[ring[w]].push(ring[(w + 1) % ring.len()]);
    }

    let mut dng = Dng::new();
    for sid in &ids {
        dng.add_node(
            sid.clone(),
            NodeInfo {
                has_text: true,
                dangling: false,
            },
        );
    }
    for (i, p) in parent_of.iter().enumerate() {
        if let Some(p) = p {
            dng.add_edge(&ids[*p], &ids[i], EdgeLabel::Has, Provenance::Grammar)
                .unwrap();
        }
    }
    for (a, outs) in refs.iter().enumerate() {
        for &b in outs {
            dng.add_edge(&ids[a], &ids[b], EdgeLabel::RefersTo, Provenance::Pattern)
                .unwrap();
        }
    }
    RandomGraph {
        ids,
        children,
        refs,
        dng,
    }
}

fn bfs(adj: &[Vec<usize>], seeds: &[usize]) -> BTreeSet<usize> {
    let mut seen: BTreeSet<usize> = seeds.iter().copied().collect();
    let mut queue: VecDeque<usize> = seeds.iter().copied().collect();
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if seen.insert(v) {
                queue.push_back(v);
            }
        }
    }
    seen
}

fn case_study_expansion() -> Result<BTreeSet<SectionId>, String> {
    let raw =
        std::fs::read_to_string(fixture("case_study/corpus.txt")).map_err(|e| e.to_string())?;
    let corpus = extract_sections(
        &raw,
        SourceFormat::MarkedPlaintext,
        &ExtractOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let mut dng = Dng::build_hierarchy(&corpus).map_err(|e| e.to_string())?;
    let refs: Vec<_> = corpus
        .iter()
        .flat_map(|n| {
            detect_cross_references(&n.full_text(), Some(&n.id))
                .into_iter()
                .map(|to| (n.id.clone(), to, Provenance::Pattern))
        })
        .collect();
    dng.add_cross_references(&refs);
    let gw = Gateway::mock();
    let bundle = Bundle::new(
        corpus,
        dng,
        LocalSchema::new(gw.embedding_dim()),
        BTreeMap::new(),
        BTreeMap::new(),
    );
    let engine = Engine::new(&bundle, &gw, RetrievalConfig::default());
    Ok(engine.expand(&ids(&["1926.651(h)(3)", "1926.651(k)(1)"])))
}

fn graph_closure() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let gw = Gateway::mock();
    let mut largest = 0;
    for g in 0..100 {
        let rg = random_graph(&mut rng);
        let n = rg.ids.len();
        largest = largest.max(n);
        let mut reversed = vec![Vec::new(); n];
        for (a, outs) in rg.refs.iter().enumerate() {
            for &b in outs {
                reversed[b].push(a);
            }
        }
        let seeds: Vec<usize> = (0..rng.gen_range(1..=4))
            .map(|_| rng.gen_range(0..n))
            .collect();
        let seed_ids: BTreeSet<SectionId> = seeds.iter().map(|&i| rg.ids[i].clone()).collect();
        let named = |set: BTreeSet<usize>| -> BTreeSet<SectionId> {
            set.into_iter().map(|i| rg.ids[i].clone()).collect()
        };

        let out = bfs(&rg.refs, &seeds);
        let got = rg
            .dng
            .closure(&seed_ids, &[EdgeLabel::RefersTo], Direction::Out)
            .map_err(|e| e.to_string())?;
        ensure!(
            got == named(out.clone()),
            "graph {g}: outgoing closure differs from BFS"
        );
        let got_in = rg
            .dng
            .closure(&seed_ids, &[EdgeLabel::RefersTo], Direction::In)
            .map_err(|e| e.to_string())?;
        ensure!(
            got_in == named(bfs(&reversed, &seeds)),
            "graph {g}: incoming closure differs from BFS"
        );

        let mut expanded = out.clone();
        for &u in &out {
            expanded.extend(&rg.children[u]);
        }
        let bundle = Bundle::new(
            Vec::new(),
            rg.dng.clone(),
            LocalSchema::new(gw.embedding_dim()),
            BTreeMap::new(),
            BTreeMap::new(),
        );
        let got = Engine::new(&bundle, &gw, RetrievalConfig::default()).expand(&seed_ids);
        ensure!(
            got == named(expanded),
            "graph {g}: expansion differs from BFS plus children"
        );
    }
    let case = case_study_expansion()?;
    let want = ids(&[
        "1926.651(h)(1)",
        "1926.651(h)(2)",
        "1926.651(h)(3)",
        "1926.651(k)(1)",
    ]);
    ensure!(case == want, "case study expanded to {case:?}");
    Ok(format!(
        "100 random graphs up to {largest} nodes; case study gives 4 sections"
    ))
}

// metrics

fn metrics() -> Check {
    let s = score(
        &ids(&["1990.1", "1990.2", "1990.3"]),
        &ids(&["1990.1", "1990.2", "1990.4"]),
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        s.precision == 2.0 / 3.0 && s.recall == 2.0 / 3.0 && s.f1 == 2.0 / 3.0,
        "score gave ({}, {}, {})",
        s.precision,
        s.recall,
        s.f1
    );
    let universe: Vec<SectionId> = (1..=12).map(|i| id(&format!("1990.{i}"))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let pick = |rng: &mut ChaCha8Rng, p: f64| -> BTreeSet<SectionId> {
        universe
            .iter()
            .filter(|_| rng.gen_bool(p))
            .cloned()
            .collect()
    };
    let mut subsets = 0;
    for i in 0..10_000 {
        let truth = loop {
            let t = pick(&mut rng, 0.3);
            if !t.is_empty() {
                break t;
            }
        };
        let answered = if i % 3 == 0 {
            truth
                .iter()
                .filter(|_| rng.gen_bool(0.7))
                .cloned()
                .collect()
        } else {
            pick(&mut rng, 0.3)
        };
        let ScoreRow {
            precision: p,
            recall: r,
            f1,
            ..
        } = score(&answered, &truth).map_err(|e| e.to_string())?;
        let hit = answered.intersection(&truth).count() as f64;
        ensure!(
            (0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r) && (0.0..=1.0).contains(&f1),
            "pair {i}: out of range"
        );
        if answered.is_empty() {
            ensure!(
                p == 0.0 && r == 0.0 && f1 == 0.0,
                "pair {i}: empty answer scored"
            );
            continue;
        }
        ensure!(
            p == hit / answered.len() as f64 && r == hit / truth.len() as f64,
            "pair {i}: P or R wrong"
        );
        if answered.is_subset(&truth) {
            subsets += 1;
            ensure!(p == 1.0, "pair {i}: subset answer has P = {p}");
        }
        if truth.is_subset(&answered) {
            ensure!(r == 1.0, "pair {i}: superset answer has R = {r}");
        }
        if p + r > 0.0 {
            ensure!(
                (f1 - 2.0 * p * r / (p + r)).abs() < 1e-12,
                "pair {i}: F1 is not the harmonic mean"
            );
        }
        ensure!(
            f1 >= p.min(r) - 1e-12 && f1 <= p.max(r) + 1e-12,
            "pair {i}: F1 {f1} outside [{}, {}]",
            p.min(r),
            p.max(r)
        );
    }
    ensure!(
        score(&BTreeSet::new(), &BTreeSet::new()).is_err(),
        "empty truth accepted"
    );
    Ok(format!("exact 2/3; 10000 pairs ({subsets} subset answers)"))
}

// end to end through the binary

fn regkg(args: &[&str]) -> Result<Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_regkg"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!(
            "regkg {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn build_bundle(out: &Path) -> Result<String, String> {
    let script = fixture("synthetic/script.json").display().to_string();
    let corpus = fixture("synthetic/corpus.txt").display().to_string();
    let o = regkg(&[
        "--provider",
        "mock",
        "--mock-script",
        &script,
        "build",
        "--in",
        &corpus,
        "--out",
        &out.display().to_string(),
    ])?;
    Ok(String::from_utf8_lossy(&o.stdout).into_owned())
}

/// The manifest and every file it checksums.
fn bundle_files(dir: &Path) -> Result<Vec<String>, String> {
    let manifest = Bundle::read_manifest(dir).map_err(|e| e.to_string())?;
    let mut files: Vec<String> = manifest.files.keys().cloned().collect();
    files.push(MANIFEST_FILE.to_string());
    Ok(files)
}

fn end_to_end() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ma = build_bundle(&a)?;
    let mb = build_bundle(&b)?;
    ensure!(ma == mb, "manifests differ between runs");
    // run_report.json carries stage timings and is not part of the bundle
    for name in bundle_files(&a)? {
        let (fa, fb) = (std::fs::read(a.join(&name)), std::fs::read(b.join(&name)));
        ensure!(
            fa.is_ok() && fa.ok() == fb.ok(),
            "{name} differs between runs"
        );
    }

    let out = tmp.path().join("eval");
    regkg(&[
        "--mock-script",
        &fixture("synthetic/script.json").display().to_string(),
        "eval",
        "--bundle",
        &a.display().to_string(),
        "--questions",
        &fixture("synthetic/questions.csv").display().to_string(),
        "--out",
        &out.display().to_string(),
    ])?;
    let mut reader =
        csv::Reader::from_path(out.join("eval_scores.csv")).map_err(|e| e.to_string())?;
    let mut rows = 0;
    for rec in reader.deserialize::<HashMap<String, String>>() {
        let rec = rec.map_err(|e| e.to_string())?;
        rows += 1;
        for m in ["precision", "recall", "f1"] {
            ensure!(
                rec[m] == "1",
                "question {} has {m} = {}",
                rec["index"],
                rec[m]
            );
        }
    }
    ensure!(rows == 6, "{rows} scored questions");
    let log = std::fs::read_to_string(out.join("eval_log.jsonl")).map_err(|e| e.to_string())?;
    let fallbacks = log
        .lines()
        .filter(|l| {
            serde_json::from_str::<serde_json::Value>(l)
                .is_ok_and(|v| v["answer"]["trace"]["fallback_used"] == true)
        })
        .count();
    ensure!(
        fallbacks == 1,
        "{fallbacks} questions took the union fallback"
    );
    let manifest: serde_json::Value = serde_json::from_str(&ma).map_err(|e| e.to_string())?;
    let sum = manifest["files"]["schema.json"].as_str().unwrap_or("?");
    Ok(format!(
        "6/6 at P=R=F1=1; bundles identical (schema {})",
        &sum[..12.min(sum.len())]
    ))
}

// persistence

fn persistence() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = tmp.path().join("first");
    build_bundle(&first)?;
    let loaded = Bundle::load(&first).map_err(|e| e.to_string())?;
    let second = tmp.path().join("second");
    let manifest = loaded.save(&second).map_err(|e| e.to_string())?;
    ensure!(
        manifest == Bundle::read_manifest(&first).map_err(|e| e.to_string())?,
        "manifest changed through load and save"
    );
    let files = bundle_files(&first)?;
    for name in &files {
        ensure!(
            std::fs::read(first.join(name)).ok() == std::fs::read(second.join(name)).ok(),
            "{name} changed through load and save"
        );
    }
    let reloaded = Bundle::load(&second).map_err(|e| e.to_string())?;
    ensure!(reloaded == loaded, "second load differs from the first");

    // loaded triple vectors keep head, relation, tail in their slots
    let d = loaded.schema.dim();
    for t in loaded.schema.triples() {
        let v = &loaded
            .triple_table
            .row(t.triple_id)
            .ok_or("triple row missing")?
            .vector;
        let head = &loaded
            .entity_table
            .row(t.head_id)
            .ok_or("head row missing")?
            .vector;
        let tail = &loaded
            .entity_table
            .row(t.tail_id)
            .ok_or("tail row missing")?
            .vector;
        let rel = &loaded.schema.relations()[&t.relation];
        ensure!(
            v[..d] == head[..] && v[d..2 * d] == rel[..] && v[2 * d..] == tail[..],
            "triple {} slots",
            t.triple_id
        );
    }

    for name in &files {
        let dir = tmp.path().join(format!("bad-{name}"));
        loaded.save(&dir).map_err(|e| e.to_string())?;
        let path = dir.join(name);
        let mut bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        // flip one digit inside the content so the file stays well-formed
        let at = bytes
            .iter()
            .rposition(u8::is_ascii_digit)
            .ok_or("no digit to flip")?;
        bytes[at] = if bytes[at] == b'9' {
            b'8'
        } else {
            bytes[at] + 1
        };
        std::fs::write(&path, &bytes).map_err(|e| e.to_string())?;
        ensure!(Bundle::load(&dir).is_err(), "edited {name} loaded cleanly");
        std::fs::remove_file(&path).map_err(|e| e.to_string())?;
        ensure!(Bundle::load(&dir).is_err(), "missing {name} loaded cleanly");
    }
    Ok(format!(
        "identity over {} files; every edit and deletion detected",
        files.len()
    ))
}

// harness format

fn harness_format() -> Check {
    let questions =
        read_questions(&fixture("harness/questions_93.csv")).map_err(|e| e.to_string())?;
    ensure!(questions.len() == 93, "{} rows parsed", questions.len());
    let rows: Vec<(String, ScoreRow)> = questions
        .iter()
        .map(|q| {
            Ok((
                q.subpart.clone(),
                score(&q.truth.iter().take(1).cloned().collect(), &q.truth)?,
            ))
        })
        .collect::<Result<_, regkg_core::eval::EvalError>>()
        .map_err(|e| e.to_string())?;
    let report = aggregate(&rows).map_err(|e| e.to_string())?;
    let names: Vec<&str> = report.subparts.iter().map(|g| g.subpart.as_str()).collect();
    ensure!(
        names == ["Subpart L", "Subpart M", "Subpart P", "Subpart X"],
        "subparts {names:?}"
    );
    ensure!(
        report.overall.questions == 93,
        "overall n = {}",
        report.overall.questions
    );
    let md = report.to_markdown("regkg");
    ensure!(
        md.lines().filter(|l| l.contains("| P = ")).count() == 5,
        "expected 5 P rows:\n{md}"
    );
    ensure!(md.contains("93 questions"), "footer lacks the count");

    let bad = "question,truth_ids\nq,1990.1\n";
    ensure!(
        parse_questions(bad.as_bytes()).is_err(),
        "CSV without subpart column accepted"
    );

    // the 4-row file goes through the real engine; one question is unscripted and fails
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bundle = tmp.path().join("bundle");
    build_bundle(&bundle)?;
    let out = tmp.path().join("eval");
    let o = regkg(&[
        "--mock-script",
        &fixture("synthetic/script.json").display().to_string(),
        "eval",
        "--bundle",
        &bundle.display().to_string(),
        "--questions",
        &fixture("harness/questions_4.csv").display().to_string(),
        "--out",
        &out.display().to_string(),
    ])?;
    let expected =
        std::fs::read_to_string(fixture("harness/expected_4.md")).map_err(|e| e.to_string())?;
    let printed = String::from_utf8_lossy(&o.stdout);
    ensure!(printed == expected, "4-row report differs:\n{printed}");
    let written = std::fs::read_to_string(out.join("eval_report.md")).map_err(|e| e.to_string())?;
    ensure!(written == expected, "written report differs from printed");
    Ok("93 rows in 4 subparts; 4-row report matches the hand-computed table".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("section grammar", 1, grammar),
        ("vector search oracle", 10, vector_search),
        ("refiner properties", 10, refiner),
        ("graph closure oracle", 5, graph_closure),
        ("metrics", 5, metrics),
        ("deterministic end-to-end", 30, end_to_end),
        ("persistence", 30, persistence),
        ("harness format", 30, harness_format),
    ];
    // panics become FAIL lines instead of aborting the run
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > Duration::from_secs(limit) => {
                Err(format!("{detail}; over the {limit} s limit"))
            }
            other => other,
        };
        let timing = format!("{:.2} s, limit {limit} s", elapsed.as_secs_f64());
        match result {
            Ok(detail) => println!("PASS {name}: {detail} ({timing})"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} ({timing})");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
