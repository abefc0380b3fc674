//! One line per acceptance criterion. Exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use defunc_core::check::{check_entry, structure, CheckConfig, EntryReport, Status};
use defunc_core::corpus::{corpus_dir, load_corpus, CorpusEntry};
use defunc_core::defunc::defunctionalize_program;
use defunc_core::emit::{emit, emit_diff, EmitConfig};
use defunc_core::parser::parse;

type Verdict = Result<String, String>;

fn golden_transforms(entries: &[CorpusEntry]) -> Verdict {
    let mut slowest = Duration::ZERO;
    for e in entries {
        let t = Instant::now();
        let (_, d) =
            defunctionalize_program(parse(&e.source).map_err(|d| format!("{}: {d:?}", e.name))?)
                .map_err(|x| format!("{}: {x}", e.name))?;
        let golden = parse(&e.golden).map_err(|d| format!("{}: golden: {d:?}", e.name))?;
        let diff = emit_diff(&golden, &d.program);
        slowest = slowest.max(t.elapsed());
        if !diff.is_empty() {
            return Err(format!("{} differs from golden:\n{diff}", e.name));
        }
    }
    if slowest >= Duration::from_secs(1) {
        return Err(format!("slowest transform took {slowest:?}"));
    }
    Ok(format!(
        "{} entries match, slowest {slowest:.1?}",
        entries.len()
    ))
}

fn line<'a>(r: &'a EntryReport, check: &str) -> Result<&'a defunc_core::check::CheckLine, String> {
    r.line(check)
        .ok_or_else(|| format!("{}: no `{check}` line", r.entry))
}

fn differential(reports: &[EntryReport], elapsed: Duration) -> Verdict {
    let mut runs = 0;
    for r in reports {
        let l = line(r, "differential")?;
        if l.status != Status::Pass || r.runs != 500 {
            return Err(l.to_string());
        }
        runs += r.runs;
    }
    // The measured time also covers contract, lemma and property checks.
    if elapsed >= Duration::from_secs(30) {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!(
        "{runs} runs, 0 mismatches, {elapsed:.1?} including all dynamic checks"
    ))
}

fn contracts(reports: &[EntryReport]) -> Verdict {
    let (mut clauses, mut posts, mut sampled) = (0, 0, 0);
    for r in reports {
        for c in ["contracts-source", "contracts-target"] {
            let l = line(r, c)?;
            if !matches!(l.status, Status::Pass | Status::Sampled) {
                return Err(l.to_string());
            }
        }
        for l in r.lines.iter().filter(|l| l.check.starts_with("lemma ")) {
            if l.status != Status::Sampled {
                return Err(l.to_string());
            }
        }
        if r.target.apply_posts == 0 {
            return Err(format!("{}: no post checked at an apply return", r.entry));
        }
        clauses += r.source.checked + r.target.checked;
        posts += r.target.apply_posts;
        sampled += r.source.sampled + r.target.sampled;
    }
    Ok(format!(
        "{clauses} clauses hold ({posts} at apply returns, {sampled} quantified on 64 samples)"
    ))
}

fn measures(reports: &[EntryReport]) -> Verdict {
    let r = reports
        .iter()
        .find(|r| r.entry == "height")
        .ok_or("no height entry")?;
    let l = line(r, "variants")?;
    let checks = r.source.variant_checks + r.target.variant_checks;
    if l.status != Status::Pass || checks == 0 {
        return Err(format!("{l} ({checks} checks)"));
    }
    for lemma in ["lemma var_tree_nonneg", "lemma var_kont_nonneg"] {
        let l = line(r, lemma)?;
        if l.status != Status::Sampled {
            return Err(l.to_string());
        }
    }
    Ok(format!(
        "{checks} decreasing non-negative measures, both non-negativity lemmas hold on samples"
    ))
}

fn interpreter(reports: &[EntryReport]) -> Verdict {
    let r = reports
        .iter()
        .find(|r| r.entry == "interp")
        .ok_or("no interp entry")?;
    for c in ["decompose", "red-steps", "red-eval", "lemma-fn post_eval"] {
        let l = line(r, c)?;
        if l.status != Status::Pass {
            return Err(l.to_string());
        }
    }
    let lemma = r
        .lemmas
        .iter()
        .find(|l| l.name == "post_eval")
        .ok_or("post_eval not run")?;
    if lemma.instances != 200 {
        return Err(format!("post_eval ran on {} instances", lemma.instances));
    }
    Ok(format!(
        "(a) {} (b) {} (c) {} (d) post_eval on {} instances",
        line(r, "decompose")?.detail,
        line(r, "red-steps")?.detail,
        line(r, "red-eval")?.detail,
        lemma.instances
    ))
}

fn structural(entries: &[CorpusEntry]) -> Verdict {
    let mut parts = Vec::new();
    for e in entries {
        let (tp, d) =
            defunctionalize_program(parse(&e.source).unwrap()).map_err(|x| x.to_string())?;
        let sites = tp.sites().len();
        let s = structure(&d.program, &d.groups).map_err(|m| format!("{}: {m}", e.name))?;
        let ctors: usize = d.groups.iter().map(|g| g.sites.len()).sum();
        if sites != 3 || ctors != 3 {
            return Err(format!(
                "{}: {sites} lambda sites, {ctors} constructors",
                e.name
            ));
        }
        parts.push(format!("{} {s}", e.name));
    }
    Ok(format!(
        "first-order, 3 sites = 3 constructors = arms: {}",
        parts.join("; ")
    ))
}

fn round_trip(entries: &[CorpusEntry]) -> Verdict {
    let cfg = EmitConfig::default();
    let mut texts: Vec<(String, String)> = Vec::new();
    for e in entries {
        texts.push((format!("{}/source.hof", e.name), e.source.clone()));
        texts.push((format!("{}/golden.fof", e.name), e.golden.clone()));
        if let Some(l) = &e.lemmas {
            texts.push((format!("{}/lemmas", e.name), l.clone()));
        }
    }
    let mut programs = Vec::new();
    for (name, t) in &texts {
        programs.push((
            name.clone(),
            parse(t).map_err(|d| format!("{name}: {d:?}"))?,
        ));
    }
    for (i, p) in defunc_core::fuzz::programs(0, 200).into_iter().enumerate() {
        programs.push((format!("fuzz #{i}"), p));
    }
    for (name, p) in &programs {
        let out = emit(p, &cfg);
        let q = parse(&out).map_err(|d| format!("{name}: reparse: {d:?}"))?;
        let diff = emit_diff(p, &q);
        if !diff.is_empty() {
            return Err(format!("{name}:\n{diff}"));
        }
        if emit(&q, &cfg) != out {
            return Err(format!("{name}: second emit differs"));
        }
    }
    Ok(format!(
        "{} programs ({} corpus, 200 fuzzed)",
        programs.len(),
        texts.len()
    ))
}

fn mutants(entries: &[CorpusEntry]) -> Verdict {
    let (mut caught, mut total, mut missed) = (0, 0, Vec::new());
    for e in entries {
        for m in e.mutants().map_err(|x| x.to_string())? {
            total += 1;
            let r = check_entry(e, Some(&m.text), &CheckConfig::default());
            let hit = r.lines.iter().any(|l| {
                ["differential", "contracts-target", "variants"].contains(&l.check.as_str())
                    && l.status == Status::Fail
                    && l.detail.contains("input = ")
            });
            if hit {
                caught += 1;
            } else {
                missed.push(m.name);
            }
        }
    }
    if caught == 5 && total == 5 {
        Ok("5/5 detected with a counterexample".into())
    } else {
        Err(format!("{caught}/{total} detected; missed {missed:?}"))
    }
}

fn main() {
    let entries = load_corpus(&corpus_dir()).expect("corpus");
    let t = Instant::now();
    let reports: Vec<EntryReport> = entries
        .iter()
        .map(|e| check_entry(e, None, &CheckConfig::default()))
        .collect();
    let elapsed = t.elapsed();
    let results: Vec<(&str, Verdict)> = vec![
        ("golden transforms", golden_transforms(&entries)),
        ("differential equivalence", differential(&reports, elapsed)),
        ("contract coherence", contracts(&reports)),
        ("termination measures", measures(&reports)),
        ("interpreter properties", interpreter(&reports)),
        ("structural invariants", structural(&entries)),
        ("round trip", round_trip(&entries)),
        ("mutation sensitivity", mutants(&entries)),
    ];
    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        match v {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!(
                    "criterion {} {name}: FAIL ({})",
                    i + 1,
                    why.replace('\n', " | ")
                );
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
