//! Batch formation: overlap-driven anchor groups, the strategic/random
//! mixture of an epoch, and training neighborhoods for test instances.

use std::cmp::Reverse;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Instance, Language, SPECIALS};
use crate::error::{Error, Result};

/// How shared tokens are counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// Distinct shared ids.
    #[default]
    Set,
    /// Shared ids counted with multiplicity.
    Multiset,
}

fn content_tokens(inst: &Instance, mode: OverlapMode) -> Vec<usize> {
    let mut t: Vec<usize> = inst.token_ids.iter().copied().filter(|&id| id >= SPECIALS.len()).collect();
    t.sort_unstable();
    if mode == OverlapMode::Set {
        t.dedup();
    }
    t
}

fn sorted_intersection(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Number of distinct non-special token ids the two instances share.
pub fn token_overlap(a: &Instance, b: &Instance) -> usize {
    token_overlap_with(a, b, OverlapMode::Set)
}

pub fn token_overlap_with(a: &Instance, b: &Instance, mode: OverlapMode) -> usize {
    sorted_intersection(&content_tokens(a, mode), &content_tokens(b, mode))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchKind {
    Strategic,
    Random,
}

/// One anchor and the neighbors chosen for it, as member indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorGroup {
    pub anchor: usize,
    pub neighbors: Vec<usize>,
}

/// Members are indices into the planner's training instances.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub members: Vec<usize>,
    pub languages: Vec<Language>,
    pub kind: BatchKind,
    pub groups: Vec<AnchorGroup>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub batches: Vec<BatchPlan>,
    pub seed: u64,
    pub strategic_fraction: f64,
}

impl EpochPlan {
    pub fn strategic_count(&self) -> usize {
        self.batches.iter().filter(|b| b.kind == BatchKind::Strategic).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchingConfig {
    /// Batch size; even.
    pub batch_size: usize,
    /// Anchor group size (anchor plus neighbors); even.
    pub group_size: usize,
    pub strategic_fraction: f64,
    pub overlap: OverlapMode,
}

impl Default for BatchingConfig {
    fn default() -> Self {
        Self { batch_size: 16, group_size: 10, strategic_fraction: 0.7, overlap: OverlapMode::Set }
    }
}

impl BatchingConfig {
    pub fn validate(&self) -> Result<()> {
        let (b, n) = (self.batch_size, self.group_size);
        if b < 2 || b % 2 != 0 {
            return Err(Error::Config(format!("batch size {b} must be even and at least 2")));
        }
        if n < 2 || n % 2 != 0 || n > b {
            return Err(Error::Config(format!("group size {n} must be even, at least 2 and at most the batch size {b}")));
        }
        if !(0.0..=1.0).contains(&self.strategic_fraction) {
            return Err(Error::Config(format!("strategic fraction {} outside [0, 1]", self.strategic_fraction)));
        }
        Ok(())
    }
}

/// Availability of one language's instances within an epoch. Exhausted
/// pools are refilled and reshuffled.
#[derive(Clone, Debug)]
struct Pool {
    members: Vec<usize>,
    available: Vec<bool>,
    queue: Vec<usize>,
    cursor: usize,
    remaining: usize,
}

impl Pool {
    fn new<R: Rng>(members: Vec<usize>, rng: &mut R) -> Self {
        let n = members.len();
        let mut pool = Self { members, available: vec![true; n], queue: (0..n).collect(), cursor: 0, remaining: n };
        pool.queue.shuffle(rng);
        pool
    }

    fn refill<R: Rng>(&mut self, rng: &mut R) {
        self.available.iter_mut().for_each(|a| *a = true);
        self.remaining = self.members.len();
        self.queue.shuffle(rng);
        self.cursor = 0;
    }

    fn take(&mut self, local: usize) {
        debug_assert!(self.available[local]);
        self.available[local] = false;
        self.remaining -= 1;
    }

    /// Available members not already in `exclude` (a batch membership mask).
    fn candidates<'p>(&'p self, exclude: &'p [bool]) -> impl Iterator<Item = usize> + 'p {
        (0..self.members.len()).filter(move |&l| self.available[l] && !exclude[self.members[l]])
    }

    /// Guarantees `need` candidates outside the batch, recycling if required.
    fn ensure<R: Rng>(&mut self, need: usize, exclude: &[bool], rng: &mut R) -> Result<()> {
        if self.candidates(exclude).count() >= need {
            return Ok(());
        }
        self.refill(rng);
        let have = self.candidates(exclude).count();
        if have < need {
            return Err(Error::Planning(format!(
                "pool of {} instances cannot supply {need} distinct members; enlarge the pool or reduce the batch size",
                self.members.len()
            )));
        }
        Ok(())
    }

    fn draw_random<R: Rng>(&mut self, exclude: &[bool], rng: &mut R) -> Result<usize> {
        self.ensure(1, exclude, rng)?;
        loop {
            if self.cursor == self.queue.len() {
                self.queue.shuffle(rng);
                self.cursor = 0;
            }
            let l = self.queue[self.cursor];
            self.cursor += 1;
            if self.available[l] && !exclude[self.members[l]] {
                self.take(l);
                return Ok(self.members[l]);
            }
        }
    }
}

/// Plans batches over a fixed set of training instances of both languages.
pub struct Planner<'a> {
    instances: Vec<&'a Instance>,
    tokens: Vec<Vec<usize>>,
    /// Position of each member in id order, for tie-breaking.
    rank: Vec<usize>,
    config: BatchingConfig,
}

struct Draft {
    members: Vec<usize>,
    in_batch: Vec<bool>,
    groups: Vec<AnchorGroup>,
    counts: [usize; 2],
}

fn lang_slot(l: Language) -> usize {
    match l {
        Language::Hrl => 0,
        Language::Lrl => 1,
    }
}

impl<'a> Planner<'a> {
    pub fn new(instances: Vec<&'a Instance>, config: BatchingConfig) -> Result<Self> {
        config.validate()?;
        if let Some(bad) = instances.iter().find(|i| !i.is_encoded()) {
            return Err(Error::Planning(format!("instance {} is not encoded", bad.id)));
        }
        let tokens = instances.iter().map(|i| content_tokens(i, config.overlap)).collect();
        let mut order: Vec<usize> = (0..instances.len()).collect();
        order.sort_by(|&a, &b| instances[a].id.cmp(&instances[b].id));
        let mut rank = vec![0; instances.len()];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r;
        }
        Ok(Self { instances, tokens, rank, config })
    }

    pub fn config(&self) -> &BatchingConfig {
        &self.config
    }

    pub fn instance(&self, member: usize) -> &'a Instance {
        self.instances[member]
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    fn members_of(&self, lang: Language) -> Vec<usize> {
        (0..self.instances.len()).filter(|&i| self.instances[i].language == lang).collect()
    }

    fn pools<R: Rng>(&self, rng: &mut R) -> Result<[Pool; 2]> {
        let half = self.config.batch_size / 2;
        let pools = [Pool::new(self.members_of(Language::Hrl), rng), Pool::new(self.members_of(Language::Lrl), rng)];
        for (p, name) in pools.iter().zip(["HRL", "LRL"]) {
            if p.members.len() < half {
                return Err(Error::Planning(format!(
                    "{name} pool has {} instances but each batch needs {half}; recycling cannot keep batches balanced",
                    p.members.len()
                )));
            }
        }
        Ok(pools)
    }

    fn draft(&self) -> Draft {
        Draft { members: Vec::new(), in_batch: vec![false; self.instances.len()], groups: Vec::new(), counts: [0; 2] }
    }

    fn push(&self, d: &mut Draft, m: usize) {
        d.members.push(m);
        d.in_batch[m] = true;
        d.counts[lang_slot(self.instances[m].language)] += 1;
    }

    fn finish(&self, d: Draft, kind: BatchKind) -> BatchPlan {
        let languages = d.members.iter().map(|&m| self.instances[m].language).collect();
        BatchPlan { members: d.members, languages, kind, groups: d.groups }
    }

    /// Highest-overlap available candidates for `anchor`; ties go to the
    /// lowest id. With `random_zero`, zero-overlap candidates come in a
    /// seeded random order instead.
    fn best_neighbors<R: Rng>(&self, anchor: &[usize], pool: &Pool, d: &Draft, k: usize, random_zero: bool, rng: &mut R) -> Vec<(usize, usize)> {
        let mut scored: Vec<(usize, usize)> = pool
            .candidates(&d.in_batch)
            .map(|l| (l, sorted_intersection(anchor, &self.tokens[pool.members[l]])))
            .collect();
        scored.sort_by_key(|&(l, o)| (Reverse(o), self.rank[pool.members[l]]));
        if random_zero {
            let first_zero = scored.iter().position(|&(_, o)| o == 0).unwrap_or(scored.len());
            if first_zero < k {
                scored[first_zero..].shuffle(rng);
            }
        }
        scored.truncate(k);
        scored
    }

    /// Adds an anchor group; returns the number of members added.
    fn add_group<R: Rng>(&self, d: &mut Draft, pools: &mut [Pool; 2], anchor_tokens: &[usize], anchor_lang: Language, anchor: Option<usize>, random_zero: bool, rng: &mut R) -> Result<()> {
        let (b, n) = (self.config.batch_size, self.config.group_size);
        let half = b / 2;
        let same = lang_slot(anchor_lang);
        let other = 1 - same;
        let want_same = (n / 2 - 1).min(half - d.counts[same]);
        let want_other = (n / 2).min(half - d.counts[other]);
        let mut neighbors = Vec::new();
        for (slot, want) in [(same, want_same), (other, want_other)] {
            if want == 0 {
                continue;
            }
            pools[slot].ensure(want, &d.in_batch, rng)?;
            for (l, _) in self.best_neighbors(anchor_tokens, &pools[slot], d, want, random_zero, rng) {
                pools[slot].take(l);
                let m = pools[slot].members[l];
                self.push(d, m);
                neighbors.push(m);
            }
        }
        if let Some(a) = anchor {
            d.groups.push(AnchorGroup { anchor: a, neighbors });
        }
        Ok(())
    }

    fn strategic<R: Rng>(&self, pools: &mut [Pool; 2], first: Language, mut first_anchor: Option<usize>, rng: &mut R) -> Result<BatchPlan> {
        let half = self.config.batch_size / 2;
        let mut d = self.draft();
        let mut lang = first;
        while d.members.len() < self.config.batch_size {
            if d.counts[lang_slot(lang)] == half {
                lang = lang.other();
            }
            let slot = lang_slot(lang);
            let anchor = match first_anchor.take() {
                Some(a) => {
                    let local = pools[slot].members.iter().position(|&m| m == a).expect("anchor belongs to its pool");
                    pools[slot].take(local);
                    a
                }
                None => pools[slot].draw_random(&d.in_batch, rng)?,
            };
            self.push(&mut d, anchor);
            self.add_group(&mut d, pools, &self.tokens[anchor], lang, Some(anchor), false, rng)?;
            lang = lang.other();
        }
        Ok(self.finish(d, BatchKind::Strategic))
    }

    fn random<R: Rng>(&self, pools: &mut [Pool; 2], rng: &mut R) -> Result<BatchPlan> {
        let mut d = self.draft();
        for slot in 0..2 {
            for _ in 0..self.config.batch_size / 2 {
                let m = pools[slot].draw_random(&d.in_batch, rng)?;
                self.push(&mut d, m);
            }
        }
        Ok(self.finish(d, BatchKind::Random))
    }

    /// One strategic batch from fresh pools, starting with an LRL anchor.
    pub fn form_strategic_batch<R: Rng>(&self, rng: &mut R) -> Result<BatchPlan> {
        let mut pools = self.pools(rng)?;
        self.strategic(&mut pools, Language::Lrl, None, rng)
    }

    /// One strategic batch from fresh pools whose first anchor is `anchor`.
    pub fn form_batch_from_anchor<R: Rng>(&self, anchor: usize, rng: &mut R) -> Result<BatchPlan> {
        if anchor >= self.instances.len() {
            return Err(Error::Index { what: "training instances", index: anchor, size: self.instances.len() });
        }
        let mut pools = self.pools(rng)?;
        self.strategic(&mut pools, self.instances[anchor].language, Some(anchor), rng)
    }

    /// `num_batches` batches, `round(fraction·num_batches)` of them
    /// strategic, interleaved by a seeded shuffle. Strategic batches
    /// alternate the language of their first anchor, starting with LRL.
    pub fn plan_epoch<R: Rng>(&self, num_batches: usize, seed: u64, rng: &mut R) -> Result<EpochPlan> {
        let mut pools = self.pools(rng)?;
        let strategic = (self.config.strategic_fraction * num_batches as f64).round() as usize;
        let mut kinds: Vec<BatchKind> =
            (0..num_batches).map(|i| if i < strategic { BatchKind::Strategic } else { BatchKind::Random }).collect();
        kinds.shuffle(rng);
        let mut first = Language::Lrl;
        let mut batches = Vec::with_capacity(num_batches);
        for kind in kinds {
            batches.push(match kind {
                BatchKind::Strategic => {
                    let b = self.strategic(&mut pools, first, None, rng)?;
                    first = first.other();
                    b
                }
                BatchKind::Random => self.random(&mut pools, rng)?,
            });
        }
        Ok(EpochPlan { batches, seed, strategic_fraction: self.config.strategic_fraction })
    }

    /// Training members that accompany `test` in its evaluation batch: the
    /// test instance anchors the first group, further groups alternate
    /// anchor languages. Returns `batch_size − 1` members; the test
    /// instance occupies slot 0 of the batch. Zero-overlap fill is random.
    pub fn inference_neighborhood<R: Rng>(&self, test: &Instance, rng: &mut R) -> Result<Vec<usize>> {
        let mut pools = self.pools(rng)?;
        let b = self.config.batch_size;
        let half = b / 2;
        let mut d = self.draft();
        let test_tokens = content_tokens(test, self.config.overlap);
        d.counts[lang_slot(test.language)] += 1;
        self.add_group(&mut d, &mut pools, &test_tokens, test.language, None, true, rng)?;
        let mut lang = test.language.other();
        while d.members.len() + 1 < b {
            if d.counts[lang_slot(lang)] == half {
                lang = lang.other();
            }
            let anchor = pools[lang_slot(lang)].draw_random(&d.in_batch, rng)?;
            self.push(&mut d, anchor);
            self.add_group(&mut d, &mut pools, &self.tokens[anchor], lang, Some(anchor), true, rng)?;
            lang = lang.other();
        }
        Ok(d.members)
    }

    /// Text dump, one line per batch: `index kind anchor_id member_ids...`.
    pub fn dump(&self, plan: &EpochPlan) -> String {
        let mut out = String::new();
        for (i, b) in plan.batches.iter().enumerate() {
            let kind = match b.kind {
                BatchKind::Strategic => "strategic",
                BatchKind::Random => "random",
            };
            let anchor = b.groups.first().map_or("-", |g| self.instances[g.anchor].id.as_str());
            let _ = write!(out, "{i} {kind} {anchor}");
            for &m in &b.members {
                let _ = write!(out, " {}", self.instances[m].id);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_dump(&self, plan: &EpochPlan, path: &Path) -> Result<()> {
        crate::corpus::io_write_file(path, self.dump(plan).as_bytes())
    }
}

#[cfg(test)]
mod tests;
