use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use binstyle_core::attribution::f_measure;
use binstyle_core::clustering::{evaluate_clusters, kmeans, ClusteringResult, KMeansConfig, PurityThresholds};
use binstyle_core::features::{
    extract_all, extract_graphlets, extract_idioms, extract_opcode_ngrams, Family, FeatureConfig, FeatureId,
    FeatureVector, Filtration, IdiomPolicy,
};
use binstyle_core::forge::transform::DISPATCHER;
use binstyle_core::forge::{
    apply_transform, forge_profiles, generate_corpus, ForgeParams, Transform, TransformKind,
};
use binstyle_core::model::{
    classify_provenance, parse_listing, user_functions, write_listing, BasicBlock, EdgeKind, Function,
    Instruction, MemoryRef, Operand, Program, Provenance, SignatureSet,
};
use binstyle_core::ranking::{entropy, Contingency};
use binstyle_core::store::{FeatureStore, StoredVector};

const REGS: [&str; 8] = ["eax", "ebx", "ecx", "edx", "esi", "edi", "ebp", "esp"];

fn operand() -> impl Strategy<Value = Operand> {
    prop_oneof![
        prop::sample::select(&REGS[..]).prop_map(Operand::reg),
        any::<i32>().prop_map(|v| Operand::Immediate(v as i64)),
        (prop::sample::select(&REGS[..]), prop::option::of(-512i64..512)).prop_map(|(b, d)| {
            Operand::Memory(MemoryRef {
                base: Some(b.to_string()),
                index: None,
                disp: d.filter(|&d| d != 0),
            })
        }),
        "[a-zA-Z0-9 ,#;:\"\\\\\t%]{0,12}".prop_map(Operand::StringRef),
    ]
}

fn instruction() -> impl Strategy<Value = (String, Vec<Operand>)> {
    (
        prop::sample::select(&["mov", "add", "xor", "push", "pop", "lea", "shl", "nop", "imul"][..]),
        prop::collection::vec(operand(), 0..3),
    )
        .prop_map(|(m, ops)| (m.to_string(), ops))
}

/// A valid function: a chain of blocks with random extra forward and back
/// edges.
fn function(name: String) -> impl Strategy<Value = Function> {
    (1usize..6)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(prop::collection::vec(instruction(), 1..6), n),
                prop::collection::vec((any::<bool>(), 0usize..8), n),
            )
        })
        .prop_map(move |(bodies, branch)| {
            let n = bodies.len();
            let mut addr = 0x1000u64;
            let mut blocks = Vec::new();
            for (i, body) in bodies.into_iter().enumerate() {
                let mut ins: Vec<Instruction> = body
                    .into_iter()
                    .map(|(m, ops)| {
                        addr += 3;
                        Instruction::new(addr, &m, ops)
                    })
                    .collect();
                let id = format!("b{i}");
                let block = if i + 1 == n {
                    addr += 1;
                    ins.push(Instruction::new(addr, "ret", vec![]));
                    BasicBlock::new(&id, ins)
                } else if branch[i].0 {
                    let target = format!("b{}", branch[i].1 % n);
                    addr += 1;
                    ins.push(Instruction::new(addr, "jne", vec![Operand::Label(target.clone())]));
                    BasicBlock::new(&id, ins)
                        .with_edge(&target, EdgeKind::True)
                        .with_edge(&format!("b{}", i + 1), EdgeKind::False)
                } else {
                    BasicBlock::new(&id, ins).with_edge(&format!("b{}", i + 1), EdgeKind::Uncond)
                };
                blocks.push(block);
            }
            Function::new(&name, blocks)
        })
}

fn program() -> impl Strategy<Value = Program> {
    prop::collection::vec(any::<bool>(), 1..5).prop_flat_map(|named| {
        let fs: Vec<_> = named
            .iter()
            .enumerate()
            .map(|(i, &n)| function(if n { format!("fn_{i}") } else { format!("sub_{:X}", 0x401000 + i) }))
            .collect();
        fs.prop_map(|functions| Program::new("prog", Some("alice"), functions))
    })
}

fn forged(seed: u64) -> Vec<Program> {
    let params = ForgeParams {
        programs_per_author: 2,
        functions: (1, 4),
        seed,
        ..ForgeParams::default()
    };
    generate_corpus(&forge_profiles(2, 0.7, seed), &params).unwrap().programs
}

fn mentions_renamed_register(descriptor: &str) -> bool {
    ["eax", "ebx", "ecx", "edx", "esi", "edi"].iter().any(|r| descriptor.contains(r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn listing_round_trip(p in program()) {
        p.validate().unwrap();
        let text = write_listing(&p);
        prop_assert_eq!(parse_listing(&text).unwrap(), p);
    }

    #[test]
    fn provenance_idempotent_and_partitions(p in program()) {
        let sigs = SignatureSet::default_set();
        let once = classify_provenance(p.clone(), &sigs);
        let twice = classify_provenance(once.clone(), &sigs);
        prop_assert_eq!(&once, &twice);
        let user = user_functions(&once).len();
        let rest = once.functions.iter().filter(|f| f.provenance != Provenance::User).count();
        prop_assert_eq!(user + rest, p.functions.len());
    }

    #[test]
    fn program_vector_is_sum_of_function_vectors(p in program()) {
        let p = classify_provenance(p, &SignatureSet::default_set());
        let cfg = FeatureConfig { filtration: Filtration::Off, ..FeatureConfig::default() };
        let pf = extract_all(&p, &cfg);
        let mut sum: BTreeMap<FeatureId, u64> = BTreeMap::new();
        for f in &pf.functions {
            for (id, &c) in f.vector.iter() {
                *sum.entry(id.clone()).or_default() += c;
            }
        }
        let merged: BTreeMap<FeatureId, u64> = pf.merged.iter().map(|(k, &v)| (k.clone(), v)).collect();
        prop_assert_eq!(merged, sum);
        prop_assert!(pf.merged.iter().all(|(_, &c)| c > 0));
    }

    #[test]
    fn register_renaming_split(seed in any::<u64>(), p in program()) {
        let out = apply_transform(&p, &Transform::new(TransformKind::RR, 1.0).unwrap(), seed).unwrap();
        for (a, b) in p.functions.iter().zip(&out.functions) {
            prop_assert_eq!(extract_opcode_ngrams(a, 3), extract_opcode_ngrams(b, 3));
            prop_assert_eq!(extract_graphlets(a, 3), extract_graphlets(b, 3));
            let wild = |f: &Function| extract_idioms(f, IdiomPolicy::WithWildcards)
                .iter()
                .filter(|(id, _)| id.descriptor.contains('*'))
                .map(|(id, &c)| (id.clone(), c))
                .collect::<Vec<_>>();
            prop_assert_eq!(wild(a), wild(b));
            // every window touching a general register renders differently,
            // so every concrete idiom mentioning one changes
            for (x, y) in a.instructions().zip(b.instructions()) {
                let touches = x.operands.iter().any(|o| o.registers().iter().any(|r| mentions_renamed_register(r)));
                prop_assert_eq!(touches, x.render() != y.render());
            }
        }
    }

    #[test]
    fn transforms_are_closed(seed in any::<u64>(), kind in 0usize..7, intensity in 0.0f64..=1.0, p in program()) {
        let kind = TransformKind::ALL[kind];
        let out = apply_transform(&p, &Transform::new(kind, intensity).unwrap(), seed).unwrap();
        out.validate().unwrap();
        prop_assert_eq!(parse_listing(&write_listing(&out)).unwrap(), out.clone());
        prop_assert_eq!(&out.author, &p.author);
        prop_assert_eq!(&out.id, &p.id);
        if intensity > 0.0 {
            prop_assert_eq!(out.meta.transforms.len(), p.meta.transforms.len() + 1);
        }
    }

    #[test]
    fn dci_grows_and_fcf_keeps_instructions(seed in any::<u64>(), intensity in 0.01f64..=1.0, p in program()) {
        let dci = apply_transform(&p, &Transform::new(TransformKind::DCI, intensity).unwrap(), seed).unwrap();
        prop_assert!(dci.instruction_count() > p.instruction_count());
        let fcf = apply_transform(&p, &Transform::new(TransformKind::FCF, intensity).unwrap(), seed).unwrap();
        let bag = |prog: &Program| {
            let mut v: Vec<String> = prog
                .functions
                .iter()
                .flat_map(|f| f.blocks.iter().filter(|b| !b.id.starts_with(DISPATCHER)))
                .flat_map(|b| b.instructions.iter().map(|i| i.render()))
                .collect();
            v.sort();
            v
        };
        prop_assert_eq!(bag(&p), bag(&fcf));
    }

    #[test]
    fn forge_is_seed_deterministic(seed in any::<u64>()) {
        let a = forged(seed);
        let b = forged(seed);
        let text = |ps: &[Program]| ps.iter().map(write_listing).collect::<String>();
        prop_assert_eq!(text(&a), text(&b));
    }

    #[test]
    fn mutual_information_bounds(
        rows in prop::collection::vec((1u64..12, 0u64..=12), 2..6),
    ) {
        let totals: Vec<u64> = rows.iter().map(|r| r.0).collect();
        let present: Vec<u64> = rows.iter().map(|r| r.1.min(r.0)).collect();
        let c = Contingency { totals: totals.clone(), present: present.clone() };
        let mi = c.mutual_information();
        let h_a = entropy(&totals);
        let p: u64 = present.iter().sum();
        let n: u64 = totals.iter().sum();
        let h_f = entropy(&[p, n - p]);
        prop_assert!(mi >= 0.0);
        prop_assert!(mi <= h_a.min(h_f) + 1e-12);
        prop_assert!((mi - c.information_gain()).abs() < 1e-12);

        let mut rt: Vec<u64> = totals.clone();
        let mut rp: Vec<u64> = present.clone();
        rt.reverse();
        rp.reverse();
        let permuted = Contingency { totals: rt, present: rp }.mutual_information();
        prop_assert!((mi - permuted).abs() < 1e-12);

        let doubled = Contingency {
            totals: totals.iter().map(|x| 2 * x).collect(),
            present: present.iter().map(|x| 2 * x).collect(),
        }
        .mutual_information();
        prop_assert!((mi - doubled).abs() < 1e-12);
    }

    #[test]
    fn f_measure_monotone(p in 0.0f64..=1.0, r in 0.0f64..=1.0, d in 0.0f64..=0.5) {
        let f = f_measure(p, r);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!(f_measure((p + d).min(1.0), r) >= f - 1e-12);
        prop_assert!(f_measure(p, (r + d).min(1.0)) >= f - 1e-12);
    }

    #[test]
    fn kmeans_inertia_non_increasing(
        points in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 4..30),
        k in 1usize..4,
        seed in any::<u64>(),
    ) {
        let names: Vec<String> = (0..points.len()).map(|i| format!("s{i}")).collect();
        let r = kmeans(names, &points, &KMeansConfig::new(k, seed)).unwrap();
        for w in r.history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
        prop_assert!(r.assignment.iter().all(|&c| c < k));
    }

    #[test]
    fn cluster_grades_ignore_cluster_ids(
        assignment in prop::collection::vec(0usize..4, 1..40),
        labels in prop::collection::vec(0usize..3, 40),
        shift in 1usize..4,
    ) {
        let subjects: Vec<String> = (0..assignment.len()).map(|i| format!("f{i}")).collect();
        let truth: BTreeMap<String, String> = subjects
            .iter()
            .zip(&labels)
            .map(|(s, l)| (s.clone(), format!("fam{l}")))
            .collect();
        let result = |assign: Vec<usize>| ClusteringResult {
            k: 4,
            subjects: subjects.clone(),
            assignment: assign,
            centroids: vec![],
            inertia: 0.0,
            history: vec![],
            iterations: 0,
        };
        let a = evaluate_clusters(&result(assignment.clone()), &truth, PurityThresholds::default()).unwrap();
        let permuted: Vec<usize> = assignment.iter().map(|c| (c + shift) % 4).collect();
        let b = evaluate_clusters(&result(permuted), &truth, PurityThresholds::default()).unwrap();
        prop_assert_eq!(a.total, b.total);
        prop_assert_eq!(a.correct_pct, b.correct_pct);
        prop_assert_eq!(a.wrong_pct, b.wrong_pct);
    }

    #[test]
    fn store_round_trip(entries in prop::collection::vec(
        (
            "[a-z:%\t]{1,8}",
            prop::option::of("[a-z]{1,4}"),
            prop::collection::btree_map((0usize..7, "[ -~\t]{0,10}"), 1u64..100, 0..6),
        ),
        0..8,
    )) {
        let mut seen = BTreeSet::new();
        let entries: Vec<StoredVector> = entries
            .into_iter()
            .filter(|(s, _, _)| seen.insert(s.clone()))
            .map(|(s, label, feats)| {
                let mut v = FeatureVector::new(s);
                for ((fam, d), c) in feats {
                    v.add(FeatureId::new(Family::ALL[fam], d), c);
                }
                StoredVector { label, vector: v }
            })
            .collect();
        let store = FeatureStore::new(entries);
        let loaded = FeatureStore::parse(&store.to_text()).unwrap();
        prop_assert!(loaded.skipped.is_empty());
        prop_assert_eq!(loaded.store, store);
    }
}
