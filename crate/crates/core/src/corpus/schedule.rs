//! Period-wise data schedule.
//!
//! Each period spends exactly `steps_per_period × tokens_per_step` tokens.
//! In the joint mix the clone stream takes `round(T·r/(1+r))` of a period's
//! budget `T`, the period's knowledge documents are included whole, and the
//! base stream fills the remainder. Streams are consumed in order across
//! periods, so no document segment is scheduled twice. Pieces are shuffled
//! within a period and cut at step boundaries.
//!
//! Manifest format (TSV):
//!
//! ```text
//! # schedule n_periods=.. steps_per_period=.. tokens_per_step=.. token_ratio=.. seed=.. mix=..
//! step  period  source  doc  start  end
//! ```

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Base,
    Clone,
    Knowledge,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Base => "base",
            Source::Clone => "clone",
            Source::Knowledge => "knowledge",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "base" => Some(Source::Base),
            "clone" => Some(Source::Clone),
            "knowledge" => Some(Source::Knowledge),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mix {
    /// Base, clone, and knowledge streams.
    Joint,
    /// Clone stream only.
    TargetOnly,
}

impl Mix {
    fn as_str(self) -> &'static str {
        match self {
            Mix::Joint => "joint",
            Mix::TargetOnly => "target_only",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub n_periods: usize,
    pub steps_per_period: u64,
    pub tokens_per_step: usize,
    /// Clone tokens per English (base plus knowledge) token.
    pub token_ratio: f64,
    pub seed: u64,
    pub mix: Mix,
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_periods == 0 || self.steps_per_period == 0 || self.tokens_per_step == 0 {
            return Err(Error::usage("schedule: periods, steps_per_period, and tokens_per_step must be positive"));
        }
        if !(self.token_ratio >= 0.0) || !self.token_ratio.is_finite() {
            return Err(Error::usage("schedule: token_ratio must be a non-negative number"));
        }
        Ok(())
    }

    pub fn period_budget(&self) -> usize {
        self.steps_per_period as usize * self.tokens_per_step
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_period * self.n_periods as u64
    }

    /// Clone tokens per period.
    pub fn clone_budget(&self) -> usize {
        match self.mix {
            Mix::TargetOnly => self.period_budget(),
            Mix::Joint => {
                let t = self.period_budget() as f64;
                (t * self.token_ratio / (1.0 + self.token_ratio)).round() as usize
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub step: u64,
    pub period: usize,
    pub source: Source,
    /// Document index; knowledge documents are indexed within their period.
    pub doc: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub spec: ScheduleSpec,
    segments: Vec<Segment>,
    /// `step_start[s]..step_start[s + 1]` indexes the segments of step `s`.
    step_start: Vec<usize>,
}

struct Cursor<'a> {
    lens: &'a [usize],
    doc: usize,
    offset: usize,
}

impl Cursor<'_> {
    fn take(&mut self, mut n: usize, out: &mut Vec<(usize, usize, usize)>) -> usize {
        let mut got = 0;
        while n > 0 && self.doc < self.lens.len() {
            let avail = self.lens[self.doc] - self.offset;
            let k = avail.min(n);
            if k > 0 {
                out.push((self.doc, self.offset, self.offset + k));
            }
            self.offset += k;
            n -= k;
            got += k;
            if self.offset == self.lens[self.doc] {
                self.doc += 1;
                self.offset = 0;
            }
        }
        got
    }
}

impl Schedule {
    /// Build a schedule from document token lengths. `knowledge[p]` lists
    /// the knowledge documents of period `p`.
    pub fn build(spec: ScheduleSpec, base: &[usize], clone: &[usize], knowledge: &[Vec<usize>]) -> Result<Self> {
        spec.validate()?;
        let t = spec.period_budget();
        let c = spec.clone_budget();
        let periods = spec.n_periods;
        let k_per: Vec<usize> = (0..periods)
            .map(|p| match spec.mix {
                Mix::Joint => knowledge.get(p).map_or(0, |d| d.iter().sum()),
                Mix::TargetOnly => 0,
            })
            .collect();
        let mut need_base = 0usize;
        for (p, &k) in k_per.iter().enumerate() {
            if c + k > t {
                return Err(Error::data(format!(
                    "schedule: period {p} needs {} clone and {k} knowledge tokens but the budget is {t}",
                    c
                )));
            }
            need_base += t - c - k;
        }
        let have_base: usize = base.iter().sum();
        let have_clone: usize = clone.iter().sum();
        if need_base > have_base {
            return Err(Error::data(format!("schedule needs {need_base} base tokens, corpus has {have_base}")));
        }
        if c * periods > have_clone {
            return Err(Error::data(format!("schedule needs {} clone tokens, corpus has {have_clone}", c * periods)));
        }

        let mut base_cur = Cursor { lens: base, doc: 0, offset: 0 };
        let mut clone_cur = Cursor { lens: clone, doc: 0, offset: 0 };
        let mut segments = Vec::new();
        for p in 0..periods {
            let mut pieces: Vec<(Source, usize, usize, usize)> = Vec::new();
            let mut buf = Vec::new();
            base_cur.take(t - c - k_per[p], &mut buf);
            pieces.extend(buf.drain(..).map(|(d, a, b)| (Source::Base, d, a, b)));
            clone_cur.take(c, &mut buf);
            pieces.extend(buf.drain(..).map(|(d, a, b)| (Source::Clone, d, a, b)));
            if spec.mix == Mix::Joint {
                if let Some(docs) = knowledge.get(p) {
                    pieces.extend(docs.iter().enumerate().filter(|(_, &l)| l > 0).map(|(d, &l)| (Source::Knowledge, d, 0, l)));
                }
            }
            let mut rng = stream(spec.seed, "schedule", p as u64);
            pieces.shuffle(&mut rng);

            let first_step = p as u64 * spec.steps_per_period;
            let mut pos = 0usize;
            for (source, doc, mut a, b) in pieces {
                while a < b {
                    let step_off = pos / spec.tokens_per_step;
                    let room = (step_off + 1) * spec.tokens_per_step - pos;
                    let k = room.min(b - a);
                    segments.push(Segment { step: first_step + step_off as u64, period: p, source, doc, start: a, end: a + k });
                    a += k;
                    pos += k;
                }
            }
            debug_assert_eq!(pos, t);
        }
        Ok(Self::from_segments(spec, segments))
    }

    fn from_segments(spec: ScheduleSpec, segments: Vec<Segment>) -> Self {
        let n = spec.total_steps() as usize;
        let mut step_start = vec![0usize; n + 1];
        for s in &segments {
            step_start[s.step as usize + 1] += 1;
        }
        for i in 0..n {
            step_start[i + 1] += step_start[i];
        }
        Self { spec, segments, step_start }
    }

    pub fn total_steps(&self) -> u64 {
        self.spec.total_steps()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn step(&self, step: u64) -> &[Segment] {
        let s = step as usize;
        &self.segments[self.step_start[s]..self.step_start[s + 1]]
    }

    pub fn period_of(&self, step: u64) -> usize {
        (step / self.spec.steps_per_period) as usize
    }

    /// Token counts `(base, clone, knowledge)` scheduled in period `p`.
    pub fn period_tokens(&self, p: usize) -> (usize, usize, usize) {
        let mut out = (0, 0, 0);
        for s in self.segments.iter().filter(|s| s.period == p) {
            match s.source {
                Source::Base => out.0 += s.len(),
                Source::Clone => out.1 += s.len(),
                Source::Knowledge => out.2 += s.len(),
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let sp = &self.spec;
        let mut s = format!(
            "# schedule n_periods={} steps_per_period={} tokens_per_step={} token_ratio={} seed={} mix={}\n",
            sp.n_periods,
            sp.steps_per_period,
            sp.tokens_per_step,
            sp.token_ratio,
            sp.seed,
            sp.mix.as_str()
        );
        s.push_str("step\tperiod\tsource\tdoc\tstart\tend\n");
        for g in &self.segments {
            s.push_str(&format!("{}\t{}\t{}\t{}\t{}\t{}\n", g.step, g.period, g.source.as_str(), g.doc, g.start, g.end));
        }
        fs::write(path, s).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        let bad = |line: usize, what: &str| Error::data(format!("{}:{line}: {what}", path.display()));
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l).unwrap_or("");
        let fields = header.strip_prefix("# schedule ").ok_or_else(|| bad(1, "missing schedule header"))?;
        let get = |key: &str| -> Result<String> {
            fields
                .split_whitespace()
                .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .map(str::to_string)
                .ok_or_else(|| bad(1, &format!("header lacks {key}")))
        };
        let num = |v: String, line: usize| -> Result<u64> { v.parse().map_err(|_| bad(line, "expected an integer")) };
        let spec = ScheduleSpec {
            n_periods: num(get("n_periods")?, 1)? as usize,
            steps_per_period: num(get("steps_per_period")?, 1)?,
            tokens_per_step: num(get("tokens_per_step")?, 1)? as usize,
            token_ratio: get("token_ratio")?.parse().map_err(|_| bad(1, "token_ratio must be a number"))?,
            seed: num(get("seed")?, 1)?,
            mix: match get("mix")?.as_str() {
                "joint" => Mix::Joint,
                "target_only" => Mix::TargetOnly,
                other => return Err(bad(1, &format!("unknown mix {other:?}"))),
            },
        };
        spec.validate()?;
        let mut segments = Vec::new();
        for (n, line) in lines {
            if line.starts_with("step\t") || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(bad(n + 1, "expected 6 tab-separated fields"));
            }
            let source = Source::parse(f[2]).ok_or_else(|| bad(n + 1, &format!("unknown source {:?}", f[2])))?;
            let ints: Vec<u64> = [f[0], f[1], f[3], f[4], f[5]]
                .iter()
                .map(|x| x.parse::<u64>().map_err(|_| bad(n + 1, "expected an integer")))
                .collect::<Result<_>>()?;
            let seg = Segment {
                step: ints[0],
                period: ints[1] as usize,
                source,
                doc: ints[2] as usize,
                start: ints[3] as usize,
                end: ints[4] as usize,
            };
            if seg.step >= spec.total_steps() || seg.end <= seg.start {
                return Err(bad(n + 1, "segment outside the schedule or empty"));
            }
            if let Some(prev) = segments.last() {
                let prev: &Segment = prev;
                if prev.step > seg.step {
                    return Err(bad(n + 1, "segments must be ordered by step"));
                }
            }
            segments.push(seg);
        }
        Ok(Self::from_segments(spec, segments))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn spec(ratio: f64, mix: Mix) -> ScheduleSpec {
        ScheduleSpec { n_periods: 3, steps_per_period: 4, tokens_per_step: 50, token_ratio: ratio, seed: 1, mix }
    }

    fn lens(n: usize, seed: usize) -> Vec<usize> {
        (0..n).map(|i| 5 + (i * 7 + seed) % 23).collect()
    }

    #[test]
    fn every_step_is_exactly_full() {
        let k = vec![vec![3, 4], vec![10], vec![]];
        let s = Schedule::build(spec(0.1, Mix::Joint), &lens(200, 1), &lens(200, 2), &k).unwrap();
        for step in 0..s.total_steps() {
            let n: usize = s.step(step).iter().map(Segment::len).sum();
            assert_eq!(n, 50);
        }
    }

    #[test]
    fn knowledge_stays_in_its_period() {
        let k = vec![vec![3, 4], vec![10], vec![6]];
        let s = Schedule::build(spec(0.1, Mix::Joint), &lens(200, 1), &lens(200, 2), &k).unwrap();
        for g in s.segments().iter().filter(|g| g.source == Source::Knowledge) {
            assert_eq!(s.period_of(g.step), g.period);
            assert!(g.doc < k[g.period].len());
        }
        assert_eq!(s.period_tokens(1).2, 10);
    }

    #[test]
    fn target_only_schedules_only_clone() {
        let s = Schedule::build(spec(0.1, Mix::TargetOnly), &[], &lens(300, 2), &[vec![5]]).unwrap();
        assert!(s.segments().iter().all(|g| g.source == Source::Clone));
    }

    #[test]
    fn insufficient_data_is_a_data_error() {
        let err = Schedule::build(spec(0.1, Mix::Joint), &lens(3, 1), &lens(300, 2), &[]).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("base tokens"));
    }

    #[test]
    fn manifest_round_trips() {
        let k = vec![vec![3, 4], vec![10], vec![]];
        let s = Schedule::build(spec(0.25, Mix::Joint), &lens(200, 1), &lens(200, 2), &k).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("schedule.tsv");
        s.save(&p).unwrap();
        assert_eq!(Schedule::load(&p).unwrap(), s);
    }

    proptest! {
        #[test]
        fn clone_share_and_disjointness(ratio in 0.0f64..1.0, seed in 0u64..50) {
            let mut sp = spec(ratio, Mix::Joint);
            sp.seed = seed;
            let k = vec![vec![7, 9], vec![4], vec![11, 2, 3]];
            let s = Schedule::build(sp.clone(), &lens(400, 3), &lens(400, 4), &k).unwrap();
            for p in 0..3 {
                let (b, c, kn) = s.period_tokens(p);
                prop_assert_eq!(b + c + kn, sp.period_budget());
                let want = sp.period_budget() as f64 * ratio / (1.0 + ratio);
                prop_assert!((c as f64 - want).abs() <= 0.5 + 1e-9);
                if b + kn > 0 && want >= 20.0 {
                    let got = c as f64 / (b + kn) as f64;
                    prop_assert!((got - ratio).abs() <= 0.05 * ratio);
                }
            }
            let mut seen = HashSet::new();
            for g in s.segments().iter().filter(|g| g.source != Source::Knowledge) {
                for t in g.start..g.end {
                    prop_assert!(seen.insert((g.source, g.doc, t)));
                }
            }
        }
    }
}
