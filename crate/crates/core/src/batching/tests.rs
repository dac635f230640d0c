use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn inst(id: &str, language: Language, tokens: &[usize]) -> Instance {
    let mut i = Instance::sentence(id, language, tokens.iter().map(|t| format!("t{t}")).collect(), 0);
    i.token_ids = std::iter::once(crate::corpus::CLS).chain(tokens.iter().copied()).collect();
    i.word_spans = (1..i.token_ids.len()).map(|p| p..p + 1).collect();
    i
}

fn pools(h: usize, l: usize) -> Vec<Instance> {
    let mut out = Vec::new();
    for k in 0..h {
        out.push(inst(&format!("h{k:03}"), Language::Hrl, &[10 + k % 7, 20 + k % 5, 30 + k % 3]));
    }
    for k in 0..l {
        out.push(inst(&format!("l{k:03}"), Language::Lrl, &[10 + k % 4, 40 + k % 6, 30 + k % 2]));
    }
    out
}

fn planner(data: &[Instance], batch_size: usize, group_size: usize, fraction: f64) -> Planner<'_> {
    let config = BatchingConfig { batch_size, group_size, strategic_fraction: fraction, overlap: OverlapMode::Set };
    Planner::new(data.iter().collect(), config).unwrap()
}

fn set_oracle(a: &Instance, b: &Instance) -> usize {
    let sa: BTreeSet<_> = a.token_ids.iter().filter(|&&t| t >= SPECIALS.len()).collect();
    let sb: BTreeSet<_> = b.token_ids.iter().filter(|&&t| t >= SPECIALS.len()).collect();
    sa.intersection(&sb).count()
}

#[test]
fn overlap_examples() {
    let a = inst("a", Language::Hrl, &[5, 6, 6, 7]);
    assert_eq!(token_overlap(&a, &a), 3);
    assert_eq!(token_overlap(&a, &inst("b", Language::Lrl, &[8, 9])), 0);
    let b = inst("b", Language::Lrl, &[6, 6, 9, 7, 2]);
    assert_eq!(token_overlap(&a, &b), set_oracle(&a, &b));
    assert_eq!(token_overlap_with(&a, &b, OverlapMode::Multiset), 3);
}

#[test]
fn exact_neighbor_group_is_selected() {
    // anchor shares tokens with exactly 4 LRL and 5 HRL instances
    let mut data = vec![inst("l000", Language::Lrl, &[50, 51, 52])];
    for k in 0..4 {
        data.push(inst(&format!("l1{k:02}"), Language::Lrl, &[50 + k % 3, 90]));
    }
    for k in 0..5 {
        data.push(inst(&format!("h1{k:02}"), Language::Hrl, &[51, 91]));
    }
    for k in 0..12 {
        data.push(inst(&format!("l2{k:02}"), Language::Lrl, &[60 + k]));
        data.push(inst(&format!("h2{k:02}"), Language::Hrl, &[80 + k]));
    }
    let p = planner(&data, 10, 10, 1.0);
    let plan = p.form_batch_from_anchor(0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let got: BTreeSet<usize> = plan.members.iter().copied().collect();
    assert_eq!(got, (0..10).collect());
    assert_eq!(plan.groups.len(), 1);
    assert_eq!(plan.groups[0].anchor, 0);
}

#[test]
fn ties_prefer_lowest_id() {
    let mut data = vec![inst("l000", Language::Lrl, &[50])];
    for k in (0..4).rev() {
        data.push(inst(&format!("h{k:03}"), Language::Hrl, &[50]));
    }
    data.push(inst("l001", Language::Lrl, &[70]));
    let p = planner(&data, 2, 2, 1.0);
    let plan = p.form_batch_from_anchor(0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(p.instance(plan.members[1]).id, "h000");
}

#[test]
fn small_toy_batches_alternate_anchors() {
    let data = pools(6, 6);
    let p = planner(&data, 4, 2, 1.0);
    let plan = p.form_strategic_batch(&mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(plan.groups.len(), 2);
    assert_eq!(plan.languages[plan.members.iter().position(|&m| m == plan.groups[0].anchor).unwrap()], Language::Lrl);
    assert_eq!(data[plan.groups[1].anchor].language, Language::Hrl);
    let unique: BTreeSet<_> = plan.members.iter().collect();
    assert_eq!(unique.len(), 4);
}

#[test]
fn greedy_neighbors_dominate_unselected_candidates() {
    let data = pools(30, 20);
    let p = planner(&data, 10, 4, 1.0);
    for seed in 0..5 {
        let plan = p.form_strategic_batch(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut chosen: BTreeSet<usize> = BTreeSet::new();
        for g in &plan.groups {
            chosen.insert(g.anchor);
            chosen.extend(g.neighbors.iter().copied());
            for &nb in &g.neighbors {
                let lang = data[nb].language;
                let ov = set_oracle(&data[g.anchor], &data[nb]);
                for c in (0..data.len()).filter(|c| data[*c].language == lang && !chosen.contains(c)) {
                    assert!(ov >= set_oracle(&data[g.anchor], &data[c]));
                }
            }
        }
    }
}

#[test]
fn epoch_mixture_counts_and_balance() {
    let data = pools(40, 12);
    for (fraction, strategic) in [(0.0, 0), (1.0, 10), (0.7, 7)] {
        let p = planner(&data, 8, 4, fraction);
        let plan = p.plan_epoch(10, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(plan.batches.len(), 10);
        assert_eq!(plan.strategic_count(), strategic);
        for b in &plan.batches {
            assert_eq!(b.members.len(), 8);
            assert_eq!(b.languages.iter().filter(|l| **l == Language::Hrl).count(), 4);
            assert_eq!(b.members.iter().collect::<BTreeSet<_>>().len(), 8);
            for (m, l) in b.members.iter().zip(&b.languages) {
                assert_eq!(data[*m].language, *l);
            }
        }
    }
}

#[test]
fn hrl_not_repeated_before_exhaustion() {
    let data = pools(20, 5);
    let p = planner(&data, 4, 2, 0.7);
    let plan = p.plan_epoch(10, 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let hrl: Vec<usize> =
        plan.batches.iter().flat_map(|b| b.members.iter().copied()).filter(|&m| data[m].language == Language::Hrl).collect();
    assert_eq!(hrl.len(), 20);
    assert_eq!(hrl.iter().collect::<BTreeSet<_>>().len(), 20);
}

#[test]
fn plans_are_deterministic() {
    let data = pools(25, 9);
    let p = planner(&data, 6, 4, 0.7);
    let a = p.plan_epoch(12, 5, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = p.plan_epoch(12, 5, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a, b);
    assert_eq!(p.dump(&a), p.dump(&b));
    assert_eq!(p.dump(&a).lines().count(), 12);
}

#[test]
fn undersized_pool_is_planning_error() {
    let data = pools(10, 2);
    let p = planner(&data, 6, 2, 1.0);
    assert!(matches!(p.plan_epoch(1, 0, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::Planning(_))));
}

#[test]
fn inference_pair_takes_best_neighbor() {
    let data = vec![
        inst("h000", Language::Hrl, &[5]),
        inst("h001", Language::Hrl, &[7, 8]),
        inst("l000", Language::Lrl, &[9]),
    ];
    let p = planner(&data, 2, 2, 1.0);
    let test = inst("t", Language::Lrl, &[7, 8, 11]);
    assert_eq!(p.inference_neighborhood(&test, &mut ChaCha8Rng::seed_from_u64(0)).unwrap(), vec![1]);
}

#[test]
fn inference_fills_without_overlap() {
    let data = pools(20, 20);
    let p = planner(&data, 8, 4, 1.0);
    let test = inst("t", Language::Lrl, &[999]);
    let nb = p.inference_neighborhood(&test, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(nb.len(), 7);
    assert_eq!(nb.iter().filter(|&&m| data[m].language == Language::Lrl).count(), 3);
    assert_eq!(nb.iter().collect::<BTreeSet<_>>().len(), 7);
}
