use defunc_core::check::{check_entry, CheckConfig, Status};
use defunc_core::corpus::{corpus_dir, load_corpus};

// The full 500-run workload is exercised by the acceptance target.
fn quick() -> CheckConfig {
    CheckConfig {
        runs: Some(100),
        ..CheckConfig::default()
    }
}

#[test]
fn corpus_is_green() {
    let entries = load_corpus(&corpus_dir()).unwrap();
    assert_eq!(entries.len(), 3);
    for e in &entries {
        let t = std::time::Instant::now();
        let rep = check_entry(e, None, &quick());
        for l in &rep.lines {
            println!("{l}");
        }
        println!("{}: {:?}", e.name, t.elapsed());
        assert!(rep.passed(), "{}", e.name);
        assert!(rep.lines.iter().all(|l| l.status != Status::Inconclusive));
    }
}

#[test]
fn every_mutant_is_caught() {
    let entries = load_corpus(&corpus_dir()).unwrap();
    let mut caught = 0;
    let mut total = 0;
    for e in &entries {
        for m in e.mutants().unwrap() {
            total += 1;
            let rep = check_entry(e, Some(&m.text), &quick());
            let failing: Vec<_> = rep
                .lines
                .iter()
                .filter(|l| l.status == Status::Fail)
                .collect();
            for l in &failing {
                println!("{} {l}", m.name);
            }
            if failing.iter().any(|l| {
                ["differential", "contracts-target", "variants"].contains(&l.check.as_str())
            }) {
                caught += 1;
            }
        }
    }
    assert_eq!((caught, total), (5, 5));
}
